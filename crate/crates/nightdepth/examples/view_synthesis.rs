//! Reconstruct a target frame from a neighboring view using ground-truth
//! depth and pose, and show that wrong depth makes the reconstruction worse.
//!
//! ```bash
//! cargo run --release --example view_synthesis
//! ```

use nightdepth::array::Array;
use nightdepth::geometry::{synthesize_view, Pose6};
use nightdepth::scene::{random_motion, random_scene, render_triplet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn masked_l1(a: &Array<f32>, b: &Array<f32>, valid: &Array<f32>) -> f64 {
    let n = valid.len();
    let mut err = 0.0;
    let mut count = 0.0;
    for i in 0..n {
        if valid.data()[i] == 0.0 {
            continue;
        }
        for c in 0..3 {
            err += (a.data()[c * n + i] - b.data()[c * n + i]).abs() as f64;
        }
        count += 3.0;
    }
    err / count
}

fn main() -> nightdepth::Result<()> {
    let out = Path::new("target/example_out/view_synthesis");
    std::fs::create_dir_all(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let scene = random_scene(&mut rng, 96, 96);
    let motion = random_motion(&mut rng);
    let t = render_triplet(&scene, &Pose6::IDENTITY, &motion)?;

    let source = &t.frames[2];
    let (recon, valid) = synthesize_view(source, t.target_depth(), &t.intr, &t.to_source[1])?;
    nightdepth::io::write_png(&out.join("target.png"), t.target())?;
    nightdepth::io::write_png(&out.join("source.png"), source)?;
    nightdepth::io::write_png(&out.join("reconstruction.png"), &recon)?;

    println!(
        "masked mean L1 with true depth:   {:.5}",
        masked_l1(&recon, t.target(), &valid)
    );
    for scale in [0.9f32, 1.1] {
        let wrong = t.target_depth().map(|d| d * scale);
        let (recon_wrong, valid_wrong) =
            synthesize_view(source, &wrong, &t.intr, &t.to_source[1])?;
        println!(
            "masked mean L1 with {scale:.1} x depth: {:.5}",
            masked_l1(&recon_wrong, t.target(), &valid_wrong)
        );
    }
    println!("images written to {}", out.display());
    Ok(())
}
