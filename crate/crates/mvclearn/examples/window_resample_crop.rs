//! Volume preprocessing walkthrough: HU windowing, isotropic resampling, and
//! lesion cropping, with the raw + sidecar file format round trip.
//!
//! ```bash
//! cargo run -p mvclearn --example window_resample_crop
//! ```

use ndarray::Array3;
use mvclearn::volume::{load_volume, save_volume, CropPolicy, Volume};

fn main() -> mvclearn::Result<()> {
    // A fake 40 x 40 x 20 scan at (1, 1, 2.5) mm spacing: air background with
    // a bright spherical "nodule" around (20, 20, 10).
    let dims = (40usize, 40usize, 20usize);
    let spacing = [1.0, 1.0, 2.5];
    let mut data = Array3::from_elem(dims, -1000.0);
    for x in 0..dims.0 {
        for y in 0..dims.1 {
            for z in 0..dims.2 {
                let dx = x as f64 - 20.0;
                let dy = y as f64 - 20.0;
                let dz = (z as f64 - 10.0) * 2.5;
                let r = (dx * dx + dy * dy + dz * dz).sqrt();
                if r < 8.0 {
                    data[(x, y, z)] = 40.0 - 10.0 * r; // soft-tissue-ish HU
                }
            }
        }
    }
    let scan = Volume::new(data, spacing, false)?;
    println!("raw scan: dims {:?}, spacing {:?} mm", scan.dims(), scan.spacing());

    // Clamp to the default [-1000, 400] HU window and rescale to [0, 1].
    let windowed = scan.hu_window_default()?;
    let max = windowed.data().iter().cloned().fold(0.0, f64::max);
    println!("windowed: normalized = {}, max intensity {max:.3}", windowed.is_normalized());

    // Resample to the 1 mm isotropic grid used by view extraction.
    let iso = windowed.resample_isotropic(1.0)?;
    println!("isotropic: dims {:?}, spacing {:?} mm", iso.dims(), iso.spacing());

    // Crop a fixed 24 mm cube around the annotated center (a real pipeline
    // would use the 64 mm default for nodules).
    let policy = CropPolicy::FixedNodule { fixed_mm: 24.0 };
    let side = policy.crop_side_for(16.0)?;
    let cube = iso.crop_lesion([20.0, 20.0, 25.0], side, "demo-nodule")?;
    println!(
        "cube: side {} voxels, center value {:.3}",
        cube.side(),
        cube.data()[(12, 12, 12)]
    );

    // Volumes persist as a raw scalar array plus a JSON sidecar.
    let dir = std::env::temp_dir().join("mvclearn-volume-demo");
    std::fs::create_dir_all(&dir).ok();
    let path = dir.join("scan.raw");
    save_volume(&iso, &path)?;
    let back = load_volume(&path)?;
    println!(
        "file round trip: dims {:?}, wrote {} + sidecar",
        back.dims(),
        path.display()
    );
    Ok(())
}
