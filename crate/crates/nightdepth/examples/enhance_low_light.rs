//! Shared-mapping contrast enhancement of a dark snippet: one brightness
//! table computed from all frames together, applied to each of them, so
//! equal brightness stays equal across frames.
//!
//! ```bash
//! cargo run --release --example enhance_low_light
//! ```

use nightdepth::enhance::enhance_snippet;
use nightdepth::geometry::Pose6;
use nightdepth::scene::{degrade, random_motion, random_scene, render_triplet, DegradeParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn main() -> nightdepth::Result<()> {
    let out = Path::new("target/example_out/enhance_low_light");
    std::fs::create_dir_all(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scene = random_scene(&mut rng, 96, 96);
    let motion = random_motion(&mut rng);
    let triplet = render_triplet(&scene, &Pose6::IDENTITY, &motion)?;

    let params = DegradeParams::default();
    let dark: Vec<_> = triplet
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| degrade(f, &params, 100 + i as u64))
        .collect();
    let dark_refs: Vec<_> = dark.iter().collect();
    let enhanced = enhance_snippet(&dark_refs, 0.004)?;

    for i in 0..3 {
        nightdepth::io::write_png(&out.join(format!("dark_{i}.png")), &dark[i])?;
        nightdepth::io::write_png(&out.join(format!("enhanced_{i}.png")), &enhanced[i])?;
    }
    for i in 0..3 {
        println!(
            "frame {i}: mean brightness {:.3} -> {:.3}",
            dark[i].mean(),
            enhanced[i].mean()
        );
    }
    println!("wrote dark/enhanced frames to {}", out.display());
    Ok(())
}
