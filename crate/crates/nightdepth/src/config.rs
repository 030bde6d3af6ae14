//! Training configuration: defaults, the `key = value` config file format,
//! and validation. Every key can also be set from the command line.

use crate::error::{Error, Result};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Square training resolution; must be divisible by 16.
    pub resolution: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,

    /// SSIM/L1 mix inside the photometric term.
    pub alpha: f64,
    /// smoothness weight
    pub eta: f64,
    /// generator (depth-prior) weight
    pub xi: f64,
    /// discriminator weight
    pub tau: f64,
    /// histogram clip limit for loss-path enhancement
    pub clip_limit: f64,
    /// percentile for the statistics mask
    pub mask_percentile: f64,
    /// momentum of the difference-statistics average
    pub ewma_momentum: f64,

    pub lr_base: f64,
    pub lr_warmup_target: f64,
    pub lr_warmup_iters: usize,
    pub lr_halve_epoch: usize,

    /// adversarial depth-prior regularization
    pub prior_reg: bool,
    /// shared-mapping contrast enhancement on the loss path
    pub enhance: bool,
    /// statistics-based masking on top of the auto-mask
    pub stats_mask: bool,

    /// per-pixel minimum over sources instead of masked averaging
    pub min_reprojection: bool,
    /// mean-normalize depth inside the smoothness term
    pub smoothness_normalize: bool,
    /// build the enhancement mapping from the target frame only
    pub enhance_target_only: bool,
    /// track the scalar percentile by moving average instead of the
    /// histogram of differences
    pub scalar_percentile_ewma: bool,

    /// depth evaluation cap for validation metrics
    pub eval_max_depth: f64,
    /// when set, reference depths come from this checkpoint's predictions on
    /// the day split instead of rendered ground truth
    pub ref_checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            resolution: 64,
            epochs: 20,
            batch_size: 4,
            seed: 0,
            alpha: 0.85,
            eta: 1e-3,
            xi: 2.5e-4,
            tau: 2.5e-4,
            clip_limit: 0.008,
            mask_percentile: 10.0,
            ewma_momentum: 0.98,
            lr_base: 3e-5,
            lr_warmup_target: 1e-4,
            lr_warmup_iters: 500,
            lr_halve_epoch: 15,
            prior_reg: true,
            enhance: true,
            stats_mask: true,
            min_reprojection: false,
            smoothness_normalize: true,
            enhance_target_only: false,
            scalar_percentile_ewma: false,
            eval_max_depth: 40.0,
            ref_checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.resolution % 16 != 0 {
            return Err(Error::InvalidInput(format!(
                "resolution {} must be a positive multiple of 16",
                self.resolution
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput("epochs and batch_size must be positive".into()));
        }
        crate::photometry::LossWeights {
            alpha: self.alpha,
            eta: self.eta,
            xi: self.xi,
            tau: self.tau,
        }
        .validate()?;
        if self.clip_limit <= 0.0 {
            return Err(Error::InvalidInput("clip_limit must be positive".into()));
        }
        if !(0.0..=100.0).contains(&self.mask_percentile) {
            return Err(Error::InvalidInput("mask_percentile must be in [0, 100]".into()));
        }
        if !(0.0..1.0).contains(&self.ewma_momentum) {
            return Err(Error::InvalidInput("ewma_momentum must be in [0, 1)".into()));
        }
        if self.lr_base <= 0.0 || self.lr_warmup_target <= 0.0 {
            return Err(Error::InvalidInput("learning rates must be positive".into()));
        }
        if self.eval_max_depth <= 0.0 {
            return Err(Error::InvalidInput("eval_max_depth must be positive".into()));
        }
        Ok(())
    }

    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::InvalidInput(format!("config {key}: bad {what} '{value}'"));
        macro_rules! parse {
            ($what:literal) => {
                value.trim().parse().map_err(|_| bad($what))?
            };
        }
        match key {
            "resolution" => self.resolution = parse!("integer"),
            "epochs" => self.epochs = parse!("integer"),
            "batch_size" => self.batch_size = parse!("integer"),
            "seed" => self.seed = parse!("integer"),
            "alpha" => self.alpha = parse!("number"),
            "eta" => self.eta = parse!("number"),
            "xi" => self.xi = parse!("number"),
            "tau" => self.tau = parse!("number"),
            "clip_limit" => self.clip_limit = parse!("number"),
            "mask_percentile" => self.mask_percentile = parse!("number"),
            "ewma_momentum" => self.ewma_momentum = parse!("number"),
            "lr_base" => self.lr_base = parse!("number"),
            "lr_warmup_target" => self.lr_warmup_target = parse!("number"),
            "lr_warmup_iters" => self.lr_warmup_iters = parse!("integer"),
            "lr_halve_epoch" => self.lr_halve_epoch = parse!("integer"),
            "prior_reg" => self.prior_reg = parse!("bool"),
            "enhance" => self.enhance = parse!("bool"),
            "stats_mask" => self.stats_mask = parse!("bool"),
            "min_reprojection" => self.min_reprojection = parse!("bool"),
            "smoothness_normalize" => self.smoothness_normalize = parse!("bool"),
            "enhance_target_only" => self.enhance_target_only = parse!("bool"),
            "scalar_percentile_ewma" => self.scalar_percentile_ewma = parse!("bool"),
            "eval_max_depth" => self.eval_max_depth = parse!("number"),
            "ref_checkpoint" => {
                self.ref_checkpoint = if value.trim().is_empty() {
                    None
                } else {
                    Some(PathBuf::from(value.trim()))
                }
            }
            other => {
                return Err(Error::InvalidInput(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    /// Parse a line-oriented `key = value` file over the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.merge_file(path)?;
        Ok(cfg)
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::MalformedFile {
                    path: path.display().to_string(),
                    reason: format!("line {}: expected 'key = value'", lineno + 1),
                });
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Render as a config file.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("resolution", self.resolution.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("seed", self.seed.to_string());
        kv("alpha", self.alpha.to_string());
        kv("eta", self.eta.to_string());
        kv("xi", self.xi.to_string());
        kv("tau", self.tau.to_string());
        kv("clip_limit", self.clip_limit.to_string());
        kv("mask_percentile", self.mask_percentile.to_string());
        kv("ewma_momentum", self.ewma_momentum.to_string());
        kv("lr_base", self.lr_base.to_string());
        kv("lr_warmup_target", self.lr_warmup_target.to_string());
        kv("lr_warmup_iters", self.lr_warmup_iters.to_string());
        kv("lr_halve_epoch", self.lr_halve_epoch.to_string());
        kv("prior_reg", self.prior_reg.to_string());
        kv("enhance", self.enhance.to_string());
        kv("stats_mask", self.stats_mask.to_string());
        kv("min_reprojection", self.min_reprojection.to_string());
        kv("smoothness_normalize", self.smoothness_normalize.to_string());
        kv("enhance_target_only", self.enhance_target_only.to_string());
        kv("scalar_percentile_ewma", self.scalar_percentile_ewma.to_string());
        kv("eval_max_depth", self.eval_max_depth.to_string());
        kv(
            "ref_checkpoint",
            self.ref_checkpoint
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        s
    }
}
