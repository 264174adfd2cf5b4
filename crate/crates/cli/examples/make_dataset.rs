//! Generate small synthetic demo datasets (PGM) to drive the CLI:
//!
//!   cargo run -p atlasforge --example make_dataset -- <out_dir> [glyph|disks]

use atlasforge_core::synth::{disk_image, t_glyph, warped_variants};
use atlasforge_core::ScalarGrid;
use std::io::Write;
use std::path::Path;

fn write_pgm(path: &Path, g: &ScalarGrid) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", g.width(), g.height())?;
    let bytes: Vec<u8> = g
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    f.write_all(&bytes)
}

fn main() -> std::io::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = args.get(1).map(String::as_str).unwrap_or("demo_data");
    let kind = args.get(2).map(String::as_str).unwrap_or("glyph");
    std::fs::create_dir_all(out)?;

    let images: Vec<ScalarGrid> = match kind {
        "disks" => (0..10)
            .map(|k| {
                let side = if k < 5 { -6.0 } else { 6.0 };
                let jitter = (k % 5) as f64 - 2.0;
                disk_image(64, 64, 32.0 + side, 32.0 + 0.5 * jitter, 18.0)
            })
            .collect(),
        _ => warped_variants(&t_glyph(64, 64), 10, 2.5),
    };

    for (i, img) in images.iter().enumerate() {
        let path = Path::new(out).join(format!("img_{:02}.pgm", i + 1));
        write_pgm(&path, img)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
