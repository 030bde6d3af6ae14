//! End-to-end training on a small generated dataset. A few minutes on a
//! laptop; watch the loss fall and validation improve epoch by epoch.
//!
//! ```bash
//! cargo run --release --example train_small
//! ```

use nightdepth::config::TrainConfig;
use nightdepth::scene::{make_dataset, DatasetConfig};
use std::path::Path;

fn main() -> nightdepth::Result<()> {
    let root = Path::new("target/example_out/train_small");
    let data_dir = root.join("data");
    if !data_dir.join("night_train").exists() {
        let mut dcfg = DatasetConfig::new(&data_dir);
        dcfg.night_train = 200;
        dcfg.night_val = 24;
        dcfg.day = 40;
        dcfg.seed = 0;
        println!("generating dataset under {} ...", data_dir.display());
        make_dataset(&dcfg)?;
    }

    let mut cfg = TrainConfig::default();
    cfg.epochs = 6;
    cfg.batch_size = 4;
    cfg.xi = 2e-2;
    cfg.tau = 2e-2;
    cfg.clip_limit = 0.004;
    cfg.mask_percentile = 20.0;

    let outcome = nightdepth::train::train(&cfg, &data_dir, &root.join("run"))?;
    for log in &outcome.logs {
        let val = log.val.as_ref().expect("val split present");
        println!(
            "epoch {:2}: loss {:.4}  photo {:.4}  mask {:.2}  val abs_rel {:.4}  rmse {:.3}",
            log.epoch, log.loss, log.photometric, log.mask_fraction, val.abs_rel, val.rmse
        );
    }
    println!("checkpoint: {}", outcome.checkpoint.display());
    println!("epoch log:  {}", outcome.log_path.display());
    Ok(())
}
