//! Command-line front end: dataset generation, enhancement, masking,
//! training, evaluation, prediction and the gradient sweep. All real work
//! lives in the library.

use clap::{Args, Parser, Subcommand};
use nightdepth::array::Array;
use nightdepth::config::TrainConfig;
use nightdepth::enhance;
use nightdepth::error::{Error, Result};
use nightdepth::geometry::{synthesize_view, Intrinsics};
use nightdepth::masking::EwmaHistogramState;
use nightdepth::scene::{DatasetConfig, DegradeParams};
use nightdepth::train::Models;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "nightdepth",
    about = "Self-supervised monocular depth for low-light video, desk scale",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (night train/val plus clean day split)
    Synth(SynthArgs),
    /// Enhance a frame snippet with one shared brightness mapping
    Enhance(EnhanceArgs),
    /// Render auto/statistics/combined masks for a frame pair
    Mask(MaskArgs),
    /// Train on a generated dataset
    Train(TrainArgs),
    /// Evaluate a checkpoint against ground-truth depth
    Eval(EvalArgs),
    /// Finite-difference sweep over every differentiable operator
    Gradcheck,
    /// Predict depth for one frame
    Predict(PredictArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    night_train: usize,
    #[arg(long, default_value_t = 20)]
    night_val: usize,
    #[arg(long, default_value_t = 40)]
    day: usize,
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// gamma darkening exponent
    #[arg(long, default_value_t = 4.0)]
    gamma: f64,
    /// per-frame gain range, low end
    #[arg(long, default_value_t = 0.68)]
    gain_lo: f64,
    /// per-frame gain range, high end
    #[arg(long, default_value_t = 0.8)]
    gain_hi: f64,
    #[arg(long, default_value_t = 0.002)]
    noise_sigma: f64,
    /// probability a night sequence carries a saturated light spot
    #[arg(long, default_value_t = 0.7)]
    spot_prob: f64,
}

#[derive(Args)]
struct EnhanceArgs {
    /// input frames (first is the target)
    #[arg(long, required = true, num_args = 1..)]
    frames: Vec<PathBuf>,
    /// output directory for enhanced frames and the mapping table
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.008)]
    clip_limit: f64,
}

#[derive(Args)]
struct MaskArgs {
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    source: PathBuf,
    /// checkpoint used to reconstruct the target from the source
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// precomputed reconstruction image (alternative to --checkpoint)
    #[arg(long)]
    recon: Option<PathBuf>,
    /// saved difference-statistics state
    #[arg(long)]
    state: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    percentile: f64,
    #[arg(long, default_value_t = 0.85)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 57.6)]
    fx: f64,
    #[arg(long, default_value_t = 57.6)]
    fy: f64,
    /// principal point; defaults to the image center
    #[arg(long)]
    cx: Option<f64>,
    #[arg(long)]
    cy: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// dataset root produced by `synth`
    #[arg(long)]
    dataset: PathBuf,
    /// output directory for checkpoint and logs
    #[arg(long)]
    out: PathBuf,
    /// optional `key = value` config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// config overrides as `--set key=value`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "night_val")]
    split: String,
    #[arg(long, default_value_t = 40.0)]
    max_depth: f64,
    /// write the JSON report here (text goes to stdout)
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// output depth raster (.pfm)
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(a) => {
            let cfg = DatasetConfig {
                out_dir: a.out.clone(),
                night_train: a.night_train,
                night_val: a.night_val,
                day: a.day,
                width: a.resolution,
                height: a.resolution,
                seed: a.seed,
                degrade: DegradeParams {
                    gamma: a.gamma,
                    gain_lo: a.gain_lo,
                    gain_hi: a.gain_hi,
                    noise_sigma: a.noise_sigma,
                    spot: None,
                },
                spot_prob: a.spot_prob,
            };
            nightdepth::scene::make_dataset(&cfg)?;
            println!(
                "wrote {} night train, {} night val, {} day sequences under {}",
                a.night_train,
                a.night_val,
                a.day,
                a.out.display()
            );
            Ok(())
        }
        Command::Enhance(a) => {
            let frames = a
                .frames
                .iter()
                .map(|p| nightdepth::io::read_png(p))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Array<f32>> = frames.iter().collect();
            let lut = enhance::snippet_lut(&refs, a.clip_limit, enhance::DEFAULT_LEVELS)?;
            std::fs::create_dir_all(&a.out)?;
            for (path, frame) in a.frames.iter().zip(&frames) {
                let name = path
                    .file_name()
                    .ok_or_else(|| Error::InvalidInput(format!("bad path {}", path.display())))?;
                let enhanced = enhance::apply_lut(frame, &lut);
                nightdepth::io::write_png(&a.out.join(name), &enhanced)?;
            }
            let table: String = lut
                .table()
                .iter()
                .map(|v| format!("{v}\n"))
                .collect();
            std::fs::write(a.out.join("lut.txt"), table)?;
            println!("enhanced {} frames into {}", frames.len(), a.out.display());
            Ok(())
        }
        Command::Mask(a) => {
            let target = nightdepth::io::read_png(&a.target)?;
            let source = nightdepth::io::read_png(&a.source)?;
            let recon = match (&a.checkpoint, &a.recon) {
                (Some(ckpt), _) => {
                    let (models, _) = Models::load(ckpt)?;
                    let depth = models.depth.forward(&target)?;
                    let pose = models.pose.forward(&target, &source)?;
                    let pose6 = nightdepth::geometry::Pose6::from_vec6(
                        &pose.iter().map(|&v| v as f64).collect::<Vec<_>>(),
                    );
                    let [_, h, w] = *target.shape() else { unreachable!() };
                    let intr = Intrinsics::new(
                        a.fx,
                        a.fy,
                        a.cx.unwrap_or((w as f64 - 1.0) / 2.0),
                        a.cy.unwrap_or((h as f64 - 1.0) / 2.0),
                    )?;
                    let mat = nightdepth::geometry::pose_to_matrix(&pose6)?;
                    let (recon, _) = synthesize_view(&source, &depth, &intr, &mat)?;
                    recon
                }
                (None, Some(path)) => nightdepth::io::read_png(path)?,
                (None, None) => {
                    return Err(Error::InvalidInput(
                        "mask needs --checkpoint or --recon to build the reconstruction".into(),
                    ))
                }
            };
            let pe_recon = nightdepth::photometry::photometric_error(&target, &recon, a.alpha)?;
            let pe_identity =
                nightdepth::photometry::photometric_error(&target, &source, a.alpha)?;
            let m_a = nightdepth::masking::auto_mask(&pe_recon, &pe_identity)?;
            let d = nightdepth::masking::pixel_difference(&target, &source)?;
            let m_s = match &a.state {
                Some(path) => {
                    let state = EwmaHistogramState::load(path)?;
                    nightdepth::masking::stats_mask(&d, state.percentile(a.percentile)?)?
                }
                None => {
                    let mut state = EwmaHistogramState::new(0.98)?;
                    state.update(&d);
                    nightdepth::masking::stats_mask(&d, state.percentile(a.percentile)?)?
                }
            };
            let combined = nightdepth::masking::combine(&m_a, &m_s)?;
            std::fs::create_dir_all(&a.out)?;
            nightdepth::io::write_png(&a.out.join("mask_auto.png"), &m_a)?;
            nightdepth::io::write_png(&a.out.join("mask_stats.png"), &m_s)?;
            nightdepth::io::write_png(&a.out.join("mask_combined.png"), &combined)?;
            println!(
                "kept {:.1}% auto, {:.1}% stats, {:.1}% combined -> {}",
                100.0 * m_a.mean() as f64,
                100.0 * m_s.mean() as f64,
                100.0 * combined.mean() as f64,
                a.out.display()
            );
            Ok(())
        }
        Command::Train(a) => {
            let mut cfg = match &a.config {
                Some(path) => TrainConfig::from_file(path)?,
                None => TrainConfig::default(),
            };
            for set in &a.sets {
                let Some((k, v)) = set.split_once('=') else {
                    return Err(Error::InvalidInput(format!(
                        "--set expects key=value, got '{set}'"
                    )));
                };
                cfg.set(k.trim(), v.trim())?;
            }
            let outcome = nightdepth::train::train(&cfg, &a.dataset, &a.out)?;
            for log in &outcome.logs {
                println!("{}", serde_json::to_string(log).expect("log serialization"));
            }
            println!("checkpoint: {}", outcome.checkpoint.display());
            Ok(())
        }
        Command::Eval(a) => {
            let report = nightdepth::train::evaluate_checkpoint(
                &a.checkpoint,
                &a.dataset,
                &a.split,
                a.max_depth,
            )?;
            print!("{}", report.to_text());
            if let Some(path) = a.json {
                std::fs::write(path, serde_json::to_string_pretty(&report).expect("json"))?;
            }
            Ok(())
        }
        Command::Gradcheck => {
            let cases = nightdepth::check::operator_sweep()?;
            let mut failed = 0;
            for case in &cases {
                let ok = case.max_rel_error <= nightdepth::check::SWEEP_TOLERANCE;
                if !ok {
                    failed += 1;
                }
                println!(
                    "{} {:40} max rel err {:.3e}",
                    if ok { "PASS" } else { "FAIL" },
                    case.name,
                    case.max_rel_error
                );
            }
            if failed > 0 {
                return Err(Error::InvalidInput(format!("{failed} operator(s) failed")));
            }
            Ok(())
        }
        Command::Predict(a) => {
            let image = nightdepth::io::read_png(&a.image)?;
            let depth = nightdepth::train::predict(&a.checkpoint, &image)?;
            nightdepth::io::write_pfm(&a.out, &depth)?;
            println!("wrote {}", a.out.display());
            Ok(())
        }
    }
}
