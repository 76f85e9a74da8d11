//! Manifest CSV: one row per lesion.
//!
//! Header is either
//! `volume_path,lesion_id,cx_mm,cy_mm,cz_mm,diameter_mm,slice_thickness_mm,ratings`
//! with `|`-joined integer ratings, or the same with a trailing `label`
//! column holding a class name. The reader sniffs which variant it got.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Annotation {
    /// Radiologist malignancy ratings, each 1..=5.
    Ratings(Vec<u8>),
    /// Direct class name (TianChi-style or synthetic data).
    ClassLabel(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub volume_path: String,
    pub lesion_id: String,
    pub center_mm: [f64; 3],
    pub longest_diameter_mm: f64,
    pub slice_thickness_mm: f64,
    pub annotation: Annotation,
}

const BASE_HEADER: [&str; 7] = [
    "volume_path",
    "lesion_id",
    "cx_mm",
    "cy_mm",
    "cz_mm",
    "diameter_mm",
    "slice_thickness_mm",
];

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::BadManifest {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| bad(path, format!("cannot open: {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| bad(path, format!("bad header: {e}")))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() != 8 || cols[..7] != BASE_HEADER {
        return Err(bad(
            path,
            format!("expected header {:?} + ratings|label, got {cols:?}", BASE_HEADER),
        ));
    }
    let has_ratings = match cols[7] {
        "ratings" => true,
        "label" => false,
        other => return Err(bad(path, format!("last column must be ratings or label, got {other}"))),
    };

    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(path, format!("row {}: {e}", line + 2)))?;
        let field = |i: usize| -> Result<&str> {
            record
                .get(i)
                .ok_or_else(|| bad(path, format!("row {}: missing field {i}", line + 2)))
        };
        let num = |i: usize| -> Result<f64> {
            field(i)?.trim().parse::<f64>().map_err(|e| {
                bad(path, format!("row {}: field {i} is not a number: {e}", line + 2))
            })
        };
        let diameter = num(5)?;
        if !(diameter > 0.0) {
            return Err(bad(path, format!("row {}: diameter {diameter} must be > 0", line + 2)));
        }
        let annotation = if has_ratings {
            let ratings: Vec<u8> = field(7)?
                .split('|')
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.trim().parse::<u8>().map_err(|e| {
                        bad(path, format!("row {}: bad rating {s:?}: {e}", line + 2))
                    })
                })
                .collect::<Result<_>>()?;
            if ratings.is_empty() {
                return Err(bad(path, format!("row {}: empty ratings", line + 2)));
            }
            Annotation::Ratings(ratings)
        } else {
            Annotation::ClassLabel(field(7)?.trim().to_string())
        };
        rows.push(ManifestRow {
            volume_path: field(0)?.to_string(),
            lesion_id: field(1)?.to_string(),
            center_mm: [num(2)?, num(3)?, num(4)?],
            longest_diameter_mm: diameter,
            slice_thickness_mm: num(6)?,
            annotation,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyData {
            context: "manifest has no rows",
        });
    }
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let has_ratings = matches!(
        rows.first().map(|r| &r.annotation),
        Some(Annotation::Ratings(_))
    );
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| bad(path, format!("cannot create: {e}")))?;
    let mut header: Vec<&str> = BASE_HEADER.to_vec();
    header.push(if has_ratings { "ratings" } else { "label" });
    writer
        .write_record(&header)
        .map_err(|e| bad(path, e.to_string()))?;
    for row in rows {
        let last = match &row.annotation {
            Annotation::Ratings(r) => r
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("|"),
            Annotation::ClassLabel(c) => c.clone(),
        };
        writer
            .write_record([
                row.volume_path.as_str(),
                row.lesion_id.as_str(),
                &row.center_mm[0].to_string(),
                &row.center_mm[1].to_string(),
                &row.center_mm[2].to_string(),
                &row.longest_diameter_mm.to_string(),
                &row.slice_thickness_mm.to_string(),
                &last,
            ])
            .map_err(|e| bad(path, e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io("flush manifest", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_ratings_and_label_variants() {
        let dir = tempfile::tempdir().unwrap();
        let rated = vec![ManifestRow {
            volume_path: "v0.raw".into(),
            lesion_id: "l0".into(),
            center_mm: [1.5, 2.0, 3.25],
            longest_diameter_mm: 12.0,
            slice_thickness_mm: 1.25,
            annotation: Annotation::Ratings(vec![3, 4, 5]),
        }];
        let p = dir.path().join("rated.csv");
        write_manifest(&p, &rated).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), rated);

        let labeled = vec![ManifestRow {
            volume_path: "v1.raw".into(),
            lesion_id: "l1".into(),
            center_mm: [0.0, 0.0, 0.0],
            longest_diameter_mm: 8.0,
            slice_thickness_mm: 1.0,
            annotation: Annotation::ClassLabel("streak_shadow".into()),
        }];
        let p2 = dir.path().join("labeled.csv");
        write_manifest(&p2, &labeled).unwrap();
        assert_eq!(read_manifest(&p2).unwrap(), labeled);
    }

    #[test]
    fn bad_headers_and_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "volume,id\nx,y\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::BadManifest { .. })));

        std::fs::write(
            &p,
            "volume_path,lesion_id,cx_mm,cy_mm,cz_mm,diameter_mm,slice_thickness_mm,ratings\n\
             v.raw,l,0,0,0,-3,1,4|4\n",
        )
        .unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::BadManifest { .. })));
    }
}
