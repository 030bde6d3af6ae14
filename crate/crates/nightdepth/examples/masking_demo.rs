//! Build the auto-mask and the statistics mask for a degraded frame pair.
//! The statistics mask drops the quietest pixels — saturated light spots and
//! featureless darkness — using a percentile of the running difference
//! distribution.
//!
//! ```bash
//! cargo run --release --example masking_demo
//! ```

use nightdepth::geometry::{synthesize_view, Pose6};
use nightdepth::masking::{auto_mask, combine, pixel_difference, stats_mask, EwmaHistogramState};
use nightdepth::photometry::photometric_error;
use nightdepth::scene::{degrade, random_motion, random_scene, render_triplet, DegradeParams, Spot};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn main() -> nightdepth::Result<()> {
    let out = Path::new("target/example_out/masking_demo");
    std::fs::create_dir_all(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let scene = random_scene(&mut rng, 96, 96);
    let motion = random_motion(&mut rng);
    let t = render_triplet(&scene, &Pose6::IDENTITY, &motion)?;

    let mut params = DegradeParams::default();
    params.spot = Some(Spot {
        cx: 30.0,
        cy: 28.0,
        radius: 9.0,
        intensity: 0.97,
    });
    let target = degrade(&t.frames[1], &params, 1);
    let source = degrade(&t.frames[2], &params, 2);

    // feed the running statistics with a handful of similar pairs
    let mut state = EwmaHistogramState::new(0.98)?;
    for seed in 0..30u64 {
        let mut r = ChaCha8Rng::seed_from_u64(1000 + seed);
        let s = random_scene(&mut r, 96, 96);
        let m = random_motion(&mut r);
        let tr = render_triplet(&s, &Pose6::IDENTITY, &m)?;
        let a = degrade(&tr.frames[1], &params, 2000 + seed);
        let b = degrade(&tr.frames[2], &params, 3000 + seed);
        state.update(&pixel_difference(&a, &b)?);
    }

    // a ground-truth reconstruction stands in for the network's
    let (recon, _) = synthesize_view(&source, &t.depths[1], &t.intr, &t.to_source[1])?;
    let pe_recon = photometric_error(&target, &recon, 0.85)?;
    let pe_identity = photometric_error(&target, &source, 0.85)?;
    let m_a = auto_mask(&pe_recon, &pe_identity)?;

    let d = pixel_difference(&target, &source)?;
    let threshold = state.percentile(10.0)?;
    let m_s = stats_mask(&d, threshold)?;
    let m = combine(&m_a, &m_s)?;

    nightdepth::io::write_png(&out.join("target.png"), &target)?;
    nightdepth::io::write_png(&out.join("mask_auto.png"), &m_a)?;
    nightdepth::io::write_png(&out.join("mask_stats.png"), &m_s)?;
    nightdepth::io::write_png(&out.join("mask_combined.png"), &m)?;
    println!("difference threshold at the 10th percentile: {threshold:.4}");
    println!(
        "kept: auto {:.1}%, stats {:.1}%, combined {:.1}%",
        100.0 * m_a.mean(),
        100.0 * m_s.mean(),
        100.0 * m.mean()
    );
    println!("masks written to {}", out.display());
    Ok(())
}
