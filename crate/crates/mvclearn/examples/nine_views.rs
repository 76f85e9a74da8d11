//! Extract the nine fixed-orientation views of one synthetic lesion and
//! render two of them as ASCII intensity maps.
//!
//! ```bash
//! cargo run -p mvclearn --example nine_views
//! ```

use mvclearn::data::{gen_synthetic_lesion, SyntheticClass};
use mvclearn::views::{extract_views, plane_table, save_view_stack};

fn ascii(view: &mvclearn::views::View2D, rows: usize) {
    let ramp = [' ', '.', ':', '+', '*', '#', '@'];
    let n = view.out_size();
    let step = (n / rows).max(1);
    for r in (0..n).step_by(step) {
        let mut line = String::new();
        for c in (0..n).step_by(step) {
            let v = view.pixels[(r, c)];
            let idx = ((v * (ramp.len() - 1) as f64).round() as usize).min(ramp.len() - 1);
            line.push(ramp[idx]);
            line.push(ramp[idx]);
        }
        println!("{line}");
    }
}

fn main() -> mvclearn::Result<()> {
    for plane in plane_table() {
        println!(
            "plane {}: normal ({:+.3}, {:+.3}, {:+.3})",
            plane.id, plane.normal[0], plane.normal[1], plane.normal[2]
        );
    }

    let cube = gen_synthetic_lesion(SyntheticClass::SpiculatedBlob, 32, 7)?;
    let set = extract_views(&cube, &[1, 2, 3, 4, 5, 6, 7, 8, 9], 32)?;
    println!(
        "\nlesion {}: {} views of {}x{}",
        set.lesion_id(),
        set.count(),
        set.out_size(),
        set.out_size()
    );

    println!("\naxial view (plane 1):");
    ascii(&set.views()[0], 16);
    println!("\ndiagonal view (plane 4):");
    ascii(&set.views()[3], 16);

    let dir = std::env::temp_dir().join("mvclearn-views-demo");
    std::fs::create_dir_all(&dir).ok();
    let path = dir.join(format!("{}.views.raw", set.lesion_id()));
    save_view_stack(&set, &path)?;
    println!("\nsaved stack to {}", path.display());
    Ok(())
}
