//! The training loop: view-synthesis objective assembly, alternating
//! adversarial updates, loss-path enhancement, statistics masking, epoch
//! logs and checkpoints.
//!
//! One task graph carries depth/pose prediction, both source
//! reconstructions, masked photometric error, smoothness and the generator
//! term; a separate small graph trains the discriminator on (reference,
//! detached prediction) pairs. Batches accumulate gradients snippet by
//! snippet, which keeps single-worker runs bit-reproducible.

use crate::array::Array;
use crate::config::TrainConfig;
use crate::enhance;
use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use crate::graph::{Graph, NodeId};
use crate::masking::{self, EwmaHistogramState};
use crate::metrics::{self, EvalConfig, MetricsReport};
use crate::nets::{DepthNet, PoseNet};
use crate::optim::{lr_schedule, Adam};
use crate::prior::{
    build_lsgan_discriminator_loss, build_lsgan_generator_loss, build_normalize_depth,
    coord_image, normalize_depth, Discriminator, ReferenceDepthSet,
};
use crate::scene;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// One line of the training log; serialized as JSON per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// task objective: photometric + eta * smoothness + xi * generator
    pub loss: f64,
    pub photometric: f64,
    pub smoothness: f64,
    pub generator: f64,
    /// discriminator objective, tracked for its own optimizer
    pub discriminator: f64,
    /// share of pixels kept by the combined mask
    pub mask_fraction: f64,
    pub empty_mask_events: usize,
    pub val: Option<MetricsReport>,
}

pub struct TrainOutcome {
    pub logs: Vec<EpochLog>,
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
}

// ---- models ----

pub struct Models {
    pub depth: DepthNet<f32>,
    pub pose: PoseNet<f32>,
    pub disc: Option<Discriminator<f32>>,
}

impl Models {
    pub fn init(seed: u64, with_disc: bool) -> Self {
        Models {
            depth: DepthNet::init(seed.wrapping_mul(3).wrapping_add(1)),
            pose: PoseNet::init(seed.wrapping_mul(3).wrapping_add(2)),
            disc: with_disc.then(|| Discriminator::init(seed.wrapping_mul(3).wrapping_add(3))),
        }
    }

    fn named_params(&self) -> Vec<(String, &Array<f32>)> {
        let mut out = self.depth.params();
        out.extend(self.pose.params());
        if let Some(d) = &self.disc {
            out.extend(d.params());
        }
        out
    }

    pub fn save(&self, path: &Path, resolution: (usize, usize)) -> Result<()> {
        crate::io::save_checkpoint(path, resolution, &self.named_params())
    }

    /// Rebuild models from a checkpoint, matching parameters by name.
    pub fn load(path: &Path) -> Result<(Self, (usize, usize))> {
        let (resolution, params) = crate::io::load_checkpoint(path)?;
        let with_disc = params.iter().any(|(n, _)| n.starts_with("disc."));
        let mut models = Models::init(0, with_disc);
        let names: Vec<String> = models
            .named_params()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        let mut stored: std::collections::BTreeMap<String, Array<f32>> =
            params.into_iter().collect();
        let mut slots: Vec<&mut Array<f32>> = models.depth.params_mut();
        slots.extend(models.pose.params_mut());
        if let Some(d) = models.disc.as_mut() {
            slots.extend(d.params_mut());
        }
        debug_assert_eq!(names.len(), slots.len());
        for (name, slot) in names.iter().zip(slots.into_iter()) {
            let found = stored.remove(name).ok_or_else(|| Error::MalformedFile {
                path: path.display().to_string(),
                reason: format!("missing parameter '{name}'"),
            })?;
            if found.shape() != slot.shape() {
                return Err(Error::shape(
                    format!("checkpoint parameter '{name}'"),
                    slot.shape(),
                    found.shape(),
                ));
            }
            *slot = found;
        }
        Ok((models, resolution))
    }
}

// ---- loaded dataset ----

pub struct LoadedDataset {
    /// night training snippets: `[previous, target, next]` raw frames
    pub train: Vec<[Array<f32>; 3]>,
    /// validation pairs: target frame and its ground-truth depth
    pub val: Vec<(Array<f32>, Array<f32>)>,
    /// day-split ground-truth depths (reference prior pool)
    pub day_depths: Vec<Array<f32>>,
    /// day-split target frames (for checkpoint-predicted references)
    pub day_frames: Vec<Array<f32>>,
    pub intr: Intrinsics,
    pub resolution: (usize, usize),
}

pub fn load_dataset(root: &Path) -> Result<LoadedDataset> {
    let train_dirs = scene::split_sequences(root, "night_train")?;
    let mut train = Vec::with_capacity(train_dirs.len());
    let mut intr = None;
    let mut resolution = None;
    for dir in &train_dirs {
        let t = scene::load_triplet(dir)?;
        let [_, h, w] = *t.frames[0].shape() else { unreachable!() };
        intr.get_or_insert(t.intr);
        resolution.get_or_insert((h, w));
        train.push(t.frames);
    }
    let mut val = Vec::new();
    if let Ok(val_dirs) = scene::split_sequences(root, "night_val") {
        for dir in &val_dirs {
            let t = scene::load_triplet(dir)?;
            let [prev_, target, _] = t.frames;
            let _ = prev_;
            val.push((target, t.target_depth));
        }
    }
    let mut day_depths = Vec::new();
    let mut day_frames = Vec::new();
    if let Ok(day_dirs) = scene::split_sequences(root, "day") {
        for dir in &day_dirs {
            let t = scene::load_triplet(dir)?;
            // all three ground-truth depths widen the reference pool
            for i in 0..3 {
                day_depths.push(crate::io::read_pfm(&dir.join(format!("depth_{i}.pfm")))?);
            }
            let [_, target, _] = t.frames;
            day_frames.push(target);
        }
    }
    Ok(LoadedDataset {
        train,
        val,
        day_depths,
        day_frames,
        intr: intr.ok_or_else(|| Error::EmptyValidSet("dataset has no training split".into()))?,
        resolution: resolution.unwrap(),
    })
}

// ---- task graph ----

struct TaskGraph {
    g: Graph<f32>,
    n_depth: usize,
    n_pose: usize,
    n_disc: usize,
    total: NodeId,
    photo: NodeId,
    smooth: NodeId,
    gen: Option<NodeId>,

    depth_norm: Option<NodeId>,
    mask_kept: NodeId,
}

fn build_task_graph(
    cfg: &TrainConfig,
    models: &Models,
    intr: Intrinsics,
    h: usize,
    w: usize,
) -> Result<TaskGraph> {
    let mut g = Graph::new();
    let dp = models.depth.declare_params(&mut g);
    let pp = models.pose.declare_params(&mut g);
    let cp = match &models.disc {
        Some(d) => d.declare_params(&mut g),
        None => Vec::new(),
    };
    let raw_t = g.input(&[3, h, w]);
    let raw_s = [g.input(&[3, h, w]), g.input(&[3, h, w])];
    let loss_t = g.input(&[3, h, w]);
    let loss_s = [g.input(&[3, h, w]), g.input(&[3, h, w])];
    let ms = [g.input(&[1, h, w]), g.input(&[1, h, w])];
    // identity photometric maps are constants per snippet; they come in
    // precomputed instead of being rebuilt every epoch
    let pe_id = [g.input(&[1, h, w]), g.input(&[1, h, w])];

    let depth = models.depth.build(&mut g, raw_t, &dp);

    let mut pe = Vec::new();
    let mut vm = Vec::new(); // validity * stats mask
    for s in 0..2 {
        let pair = g.concat0(&[raw_t, raw_s[s]]);
        let pose = models.pose.build(&mut g, pair, &pp);
        let mat = g.pose_to_matrix(pose);
        let coords = g.reproject(depth, mat, intr);
        let valid = g.reproject_validity(depth, mat, intr);
        let recon = g.bilinear_sample(loss_s[s], coords);
        pe.push(crate::photometry::build_photometric_error(
            &mut g, loss_t, recon, cfg.alpha,
        ));
        vm.push(g.mul(valid, ms[s]));
    }

    let (photo, mask_kept) = if cfg.min_reprojection {
        // per-pixel minimum over sources; excluded pixels are pushed out of
        // the minimum with a large constant
        let block = 10.0;
        let mut penalized = Vec::new();
        for s in 0..2 {
            let keep = g.mul(pe[s], vm[s]);
            let off = g.affine(vm[s], -block, block);
            penalized.push(g.add(keep, off));
        }
        let pe_min = g.min_elem(penalized[0], penalized[1]);
        let pe_id_min = g.min_elem(pe_id[0], pe_id[1]);
        let m_a = g.less(pe_min, pe_id_min);
        let any = g.max_elem(vm[0], vm[1]);
        let mask = g.mul(m_a, any);
        let num_map = g.mul(pe_min, mask);
        let num = g.sum_all(num_map);
        let kept = g.sum_all(mask);
        let den = g.clamp(kept, 1.0, f64::INFINITY);
        (g.div(num, den), kept)
    } else {
        // masked per-pixel average over sources
        let mut nums = Vec::new();
        let mut dens = Vec::new();
        for s in 0..2 {
            let m_a = g.less(pe[s], pe_id[s]);
            let mask = g.mul(m_a, vm[s]);
            let masked = g.mul(pe[s], mask);
            nums.push(g.sum_all(masked));
            dens.push(g.sum_all(mask));
        }
        let num = g.add(nums[0], nums[1]);
        let kept = g.add(dens[0], dens[1]);
        let den = g.clamp(kept, 1.0, f64::INFINITY);
        (g.div(num, den), kept)
    };

    let smooth =
        crate::photometry::build_smoothness_loss(&mut g, depth, raw_t, cfg.smoothness_normalize);

    let mut depth_norm = None;
    let gen = if let Some(disc) = &models.disc {
        let dn = build_normalize_depth(&mut g, depth);
        depth_norm = Some(dn);
        let coords = g.constant(coord_image(h, w)?);
        let scores = disc.build(&mut g, dn, coords, &cp);
        Some(build_lsgan_generator_loss(&mut g, scores))
    } else {
        None
    };

    let smooth_term = g.scale(smooth, cfg.eta);
    let mut total = g.add(photo, smooth_term);
    if let Some(gen) = gen {
        let gen_term = g.scale(gen, cfg.xi);
        total = g.add(total, gen_term);
    }

    Ok(TaskGraph {
        g,
        n_depth: dp.len(),
        n_pose: pp.len(),
        n_disc: cp.len(),
        total,
        photo,
        smooth,
        gen,
        depth_norm,
        mask_kept,
    })
}

struct DiscGraph {
    g: Graph<f32>,
    n_params: usize,
    loss: NodeId,
}

fn build_disc_graph(disc: &Discriminator<f32>, h: usize, w: usize) -> Result<DiscGraph> {
    let mut g = Graph::new();
    let params = disc.declare_params(&mut g);
    let real = g.input(&[1, h, w]);
    let fake = g.input(&[1, h, w]);
    let coords = g.constant(coord_image(h, w)?);
    let sr = disc.build(&mut g, real, coords, &params);
    let sf = disc.build(&mut g, fake, coords, &params);
    let loss = build_lsgan_discriminator_loss(&mut g, sr, sf);
    Ok(DiscGraph {
        g,
        n_params: params.len(),
        loss,
    })
}

// ---- statistics threshold for the snippet masks ----

enum StatsTracker {
    /// running histogram of difference values
    Histogram(EwmaHistogramState),
    /// running average of the per-image percentile value
    Scalar { value: f64, beta: f64, primed: bool },
}

impl StatsTracker {
    fn new(cfg: &TrainConfig) -> Result<StatsTracker> {
        Ok(if cfg.scalar_percentile_ewma {
            StatsTracker::Scalar {
                value: 0.0,
                beta: cfg.ewma_momentum,
                primed: false,
            }
        } else {
            StatsTracker::Histogram(EwmaHistogramState::new(cfg.ewma_momentum)?)
        })
    }

    fn update(&mut self, d: &Array<f32>, epsilon: f64) -> Result<()> {
        match self {
            StatsTracker::Histogram(state) => {
                state.update(d);
                Ok(())
            }
            StatsTracker::Scalar { value, beta, primed } => {
                let mut one_shot = EwmaHistogramState::new(0.0)?;
                one_shot.update(d);
                let p = one_shot.percentile(epsilon)?;
                if *primed {
                    *value = *beta * *value + (1.0 - *beta) * p;
                } else {
                    *value = p;
                    *primed = true;
                }
                Ok(())
            }
        }
    }

    fn threshold(&self, epsilon: f64) -> Result<f64> {
        match self {
            StatsTracker::Histogram(state) => state.percentile(epsilon),
            StatsTracker::Scalar { value, primed, .. } => {
                if !primed {
                    return Err(Error::InvalidInput("statistics state has no updates yet".into()));
                }
                Ok(*value)
            }
        }
    }

    fn save(&self, path: &Path) -> Result<()> {
        if let StatsTracker::Histogram(state) = self {
            state.save(path)?;
        }
        Ok(())
    }
}

// ---- training ----

fn ones_mask(h: usize, w: usize) -> Array<f32> {
    Array::full(&[1, h, w], 1.0)
}

/// Train on a generated dataset; writes `checkpoint.ckpt`,
/// `train_log.jsonl`, `stats.bin` and the resolved config under `out_dir`.
pub fn train(cfg: &TrainConfig, dataset_root: &Path, out_dir: &Path) -> Result<TrainOutcome> {
    let data = load_dataset(dataset_root)?;
    train_loaded(cfg, &data, out_dir)
}

/// Train against an already-loaded dataset (shared across runs).
pub fn train_loaded(
    cfg: &TrainConfig,
    data: &LoadedDataset,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (h, w) = data.resolution;
    if h != cfg.resolution || w != cfg.resolution {
        return Err(Error::InvalidInput(format!(
            "dataset resolution {h}x{w} does not match configured {}",
            cfg.resolution
        )));
    }
    std::fs::create_dir_all(out_dir)?;

    let mut models = Models::init(cfg.seed, cfg.prior_reg);
    let task = build_task_graph(cfg, &models, data.intr, h, w)?;
    let mut task_eval = task.g.evaluation();
    let disc_graph = match &models.disc {
        Some(d) => Some(build_disc_graph(d, h, w)?),
        None => None,
    };
    let mut disc_eval = disc_graph.as_ref().map(|d| d.g.evaluation());

    // reference depth pool, normalized once
    let mut references = if cfg.prior_reg {
        let pool: Vec<Array<f32>> = match &cfg.ref_checkpoint {
            Some(ckpt) => {
                let (ref_models, res) = Models::load(ckpt)?;
                if res != (h, w) {
                    return Err(Error::InvalidInput(format!(
                        "reference checkpoint resolution {res:?} does not match {h}x{w}"
                    )));
                }
                data.day_frames
                    .iter()
                    .map(|f| ref_models.depth.forward(f))
                    .collect::<Result<_>>()?
            }
            None => data.day_depths.clone(),
        };
        let normalized = pool
            .iter()
            .map(normalize_depth)
            .collect::<Result<Vec<_>>>()?;
        Some(ReferenceDepthSet::new(normalized, cfg.seed ^ 0x5eed)?)
    } else {
        None
    };

    let mut stats = StatsTracker::new(cfg)?;
    let n_task_params = task.n_depth + task.n_pose;
    let task_shapes: Vec<Vec<usize>> = {
        let mut v: Vec<Vec<usize>> = models
            .depth
            .params()
            .iter()
            .map(|(_, a)| a.shape().to_vec())
            .collect();
        v.extend(models.pose.params().iter().map(|(_, a)| a.shape().to_vec()));
        v
    };
    let shape_refs: Vec<&[usize]> = task_shapes.iter().map(|s| s.as_slice()).collect();
    let mut task_opt = Adam::new(&shape_refs);
    let mut disc_opt = models.disc.as_ref().map(|d| {
        let shapes: Vec<Vec<usize>> = d.params().iter().map(|(_, a)| a.shape().to_vec()).collect();
        let refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
        Adam::new(&refs)
    });

    let all_ones = ones_mask(h, w);
    let mut pe_id_cache: Vec<Option<[Array<f32>; 2]>> = vec![None; data.train.len()];
    let mut logs: Vec<EpochLog> = Vec::new();
    let mut iteration = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37).wrapping_add(epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut acc = EpochAccumulator::default();
        for batch in order.chunks(cfg.batch_size) {
            let lr = lr_schedule(iteration, epoch, cfg);
            let mut task_grads: Vec<Array<f32>> =
                task_shapes.iter().map(|s| Array::zeros(s)).collect();
            let mut disc_grads: Vec<Array<f32>> = models
                .disc
                .as_ref()
                .map(|d| d.params().iter().map(|(_, a)| Array::zeros(a.shape())).collect())
                .unwrap_or_default();

            for &idx in batch {
                let frames = &data.train[idx];
                let (target, sources) = (&frames[1], [&frames[0], &frames[2]]);

                // loss-path frames, possibly enhanced through one shared map
                let loss_frames: Vec<Array<f32>> = if cfg.enhance {
                    let lut = if cfg.enhance_target_only {
                        enhance::snippet_lut(&[target], cfg.clip_limit, enhance::DEFAULT_LEVELS)?
                    } else {
                        enhance::snippet_lut(
                            &[&frames[0], &frames[1], &frames[2]],
                            cfg.clip_limit,
                            enhance::DEFAULT_LEVELS,
                        )?
                    };
                    frames.iter().map(|f| enhance::apply_lut(f, &lut)).collect()
                } else {
                    frames.to_vec()
                };

                // statistics mask from raw-frame differences
                let stats_masks = if cfg.stats_mask {
                    let d0 = masking::pixel_difference(target, sources[0])?;
                    let d1 = masking::pixel_difference(target, sources[1])?;
                    stats.update(&d0, cfg.mask_percentile)?;
                    stats.update(&d1, cfg.mask_percentile)?;
                    let threshold = stats.threshold(cfg.mask_percentile)?;
                    Some((
                        masking::stats_mask(&d0, threshold)?,
                        masking::stats_mask(&d1, threshold)?,
                    ))
                } else {
                    None
                };
                let ms_arrays: [&Array<f32>; 2] = match &stats_masks {
                    Some((m0, m1)) => [m0, m1],
                    None => [&all_ones, &all_ones],
                };

                if pe_id_cache[idx].is_none() {
                    pe_id_cache[idx] = Some([
                        crate::photometry::photometric_error(
                            &loss_frames[1],
                            &loss_frames[0],
                            cfg.alpha,
                        )?,
                        crate::photometry::photometric_error(
                            &loss_frames[1],
                            &loss_frames[2],
                            cfg.alpha,
                        )?,
                    ]);
                }
                let pe_id = pe_id_cache[idx].as_ref().unwrap();

                let mut inputs: Vec<&Array<f32>> = Vec::with_capacity(
                    n_task_params + task.n_disc + 8,
                );
                for (_, p) in models.depth.params() {
                    inputs.push(p);
                }
                for (_, p) in models.pose.params() {
                    inputs.push(p);
                }
                if let Some(d) = &models.disc {
                    for (_, p) in d.params() {
                        inputs.push(p);
                    }
                }
                inputs.push(target);
                inputs.push(sources[0]);
                inputs.push(sources[1]);
                inputs.push(&loss_frames[1]);
                inputs.push(&loss_frames[0]);
                inputs.push(&loss_frames[2]);
                inputs.push(ms_arrays[0]);
                inputs.push(ms_arrays[1]);
                inputs.push(&pe_id[0]);
                inputs.push(&pe_id[1]);

                task.g.forward(&inputs, &mut task_eval)?;
                let total = task_eval.value(task.total).item() as f64;
                if !total.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss at iteration {iteration}"
                    )));
                }
                acc.loss += total;
                acc.photo += task_eval.value(task.photo).item() as f64;
                acc.smooth += task_eval.value(task.smooth).item() as f64;
                if let Some(gen) = task.gen {
                    acc.gen += task_eval.value(gen).item() as f64;
                }
                let kept = task_eval.value(task.mask_kept).item() as f64;
                acc.mask_fraction += kept / (2.0 * (h * w) as f64);
                if kept == 0.0 {
                    acc.empty_mask += 1;
                    eprintln!("warning: every pixel masked out at iteration {iteration}");
                }
                acc.snippets += 1;

                let grads = task.g.backward(&task_eval, task.total, &Array::scalar(1.0))?;
                for (slot, grad) in task_grads.iter_mut().zip(grads.iter().take(n_task_params)) {
                    for (a, b) in slot.data_mut().iter_mut().zip(grad.iter()) {
                        *a += *b;
                    }
                }

                if let (Some(dg), Some(de), Some(refs)) =
                    (&disc_graph, disc_eval.as_mut(), references.as_mut())
                {
                    let fake = task_eval.value(task.depth_norm.unwrap()).clone();
                    let real = refs.next_sample().clone();
                    let mut dinputs: Vec<&Array<f32>> = Vec::with_capacity(dg.n_params + 2);
                    let disc = models.disc.as_ref().unwrap();
                    for (_, p) in disc.params() {
                        dinputs.push(p);
                    }
                    dinputs.push(&real);
                    dinputs.push(&fake);
                    dg.g.forward(&dinputs, de)?;
                    acc.disc += de.value(dg.loss).item() as f64;
                    let grads = dg.g.backward(de, dg.loss, &Array::scalar(1.0))?;
                    for (slot, grad) in disc_grads.iter_mut().zip(grads.iter().take(dg.n_params)) {
                        for (a, b) in slot.data_mut().iter_mut().zip(grad.iter()) {
                            *a += *b;
                        }
                    }
                }
            }

            let inv = 1.0 / batch.len() as f32;
            // discriminator update precedes the depth/pose update
            if let (Some(opt), Some(disc)) = (disc_opt.as_mut(), models.disc.as_mut()) {
                for gradient in disc_grads.iter_mut() {
                    for v in gradient.data_mut() {
                        *v *= inv;
                    }
                }
                let mut params = disc.params_mut();
                opt.step(&mut params, &disc_grads, lr);
            }
            for gradient in task_grads.iter_mut() {
                for v in gradient.data_mut() {
                    *v *= inv;
                }
            }
            {
                let mut params = models.depth.params_mut();
                params.extend(models.pose.params_mut());
                task_opt.step(&mut params, &task_grads, lr);
            }
            iteration += 1;
        }

        let val = if data.val.is_empty() {
            None
        } else {
            Some(validate(&models, data, cfg)?)
        };
        let n = acc.snippets.max(1) as f64;
        logs.push(EpochLog {
            epoch,
            lr: lr_schedule(iteration.saturating_sub(1), epoch, cfg),
            loss: acc.loss / n,
            photometric: acc.photo / n,
            smoothness: acc.smooth / n,
            generator: acc.gen / n,
            discriminator: acc.disc / n,
            mask_fraction: acc.mask_fraction / n,
            empty_mask_events: acc.empty_mask,
            val,
        });
    }

    let checkpoint = out_dir.join("checkpoint.ckpt");
    models.save(&checkpoint, (h, w))?;
    stats.save(&out_dir.join("stats.bin"))?;
    std::fs::write(out_dir.join("config.cfg"), cfg.to_file_string())?;
    let log_path = out_dir.join("train_log.jsonl");
    let mut text = String::new();
    for log in &logs {
        text.push_str(&serde_json::to_string(log).expect("log serialization"));
        text.push('\n');
    }
    std::fs::write(&log_path, text)?;

    Ok(TrainOutcome {
        logs,
        checkpoint,
        log_path,
    })
}

#[derive(Default)]
struct EpochAccumulator {
    loss: f64,
    photo: f64,
    smooth: f64,
    gen: f64,
    disc: f64,
    mask_fraction: f64,
    empty_mask: usize,
    snippets: usize,
}

/// Median-scaled validation metrics over the val split.
pub fn validate(models: &Models, data: &LoadedDataset, cfg: &TrainConfig) -> Result<MetricsReport> {
    let eval_cfg = EvalConfig {
        min_depth: 1e-3,
        max_depth: cfg.eval_max_depth,
    };
    let mut reports = Vec::new();
    for (frame, gt) in &data.val {
        let pred = models.depth.forward(frame)?;
        let valid = Array::full(gt.shape(), 1.0f32);
        reports.push(metrics::evaluate(&pred, gt, &valid, &eval_cfg)?);
    }
    MetricsReport::weighted_average(&reports)
}

/// Depth prediction from a checkpoint; the image must match the training
/// resolution.
pub fn predict(checkpoint: &Path, image: &Array<f32>) -> Result<Array<f32>> {
    let (models, (h, w)) = Models::load(checkpoint)?;
    let [c, ih, iw] = *image.shape() else {
        return Err(Error::shape("predict image", &[3, h, w], image.shape()));
    };
    if c != 3 || ih != h || iw != w {
        return Err(Error::shape("predict image", &[3, h, w], image.shape()));
    }
    models.depth.forward(image)
}

/// Evaluate a checkpoint against the ground truth of a dataset split.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    dataset_root: &Path,
    split: &str,
    max_depth: f64,
) -> Result<MetricsReport> {
    let (models, _) = Models::load(checkpoint)?;
    let dirs = scene::split_sequences(dataset_root, split)?;
    let eval_cfg = EvalConfig {
        min_depth: 1e-3,
        max_depth,
    };
    let mut reports = Vec::new();
    for dir in &dirs {
        let t = scene::load_triplet(dir)?;
        let pred = models.depth.forward(&t.frames[1])?;
        let valid = Array::full(t.target_depth.shape(), 1.0f32);
        reports.push(metrics::evaluate(&pred, &t.target_depth, &valid, &eval_cfg)?);
    }
    MetricsReport::weighted_average(&reports)
}
