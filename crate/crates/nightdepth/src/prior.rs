//! Adversarial regularization of predicted depth against unpaired reference
//! depth maps.
//!
//! Depth maps are scale-ambiguous, so both sides are mean-normalized before
//! a small patch discriminator sees them; normalized pixel coordinates ride
//! along as two extra channels, since plausible depth depends strongly on
//! where in the frame a pixel sits. The objectives are least-squares GAN
//! losses: the discriminator pushes reference patches toward 1 and predicted
//! patches toward 0, the depth network pushes its own patches toward 1.

use crate::array::{Array, Scalar};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

/// Two-channel raster of normalized pixel coordinates: channel 0 is
/// `x / (W-1)`, channel 1 is `y / (H-1)`.
pub fn coord_image<T: Scalar>(h: usize, w: usize) -> Result<Array<T>> {
    if h < 2 || w < 2 {
        return Err(Error::InvalidInput(format!("coord_image: degenerate size {h}x{w}")));
    }
    let mut out = Array::zeros(&[2, h, w]);
    let n = h * w;
    for y in 0..h {
        for x in 0..w {
            out.data_mut()[y * w + x] = T::from_f64(x as f64 / (w - 1) as f64);
            out.data_mut()[n + y * w + x] = T::from_f64(y as f64 / (h - 1) as f64);
        }
    }
    Ok(out)
}

/// Divide a depth map by its spatial mean: output mean is 1, scale drops out.
pub fn normalize_depth<T: Scalar>(depth: &Array<T>) -> Result<Array<T>> {
    crate::geometry::depth_dims(depth)?;
    if depth.iter().any(|d| d.to_f64() <= 0.0) {
        return Err(Error::InvalidInput("normalize_depth: non-positive depth".into()));
    }
    let mean = depth.mean();
    Ok(depth.map(|v| v / mean))
}

/// Graph form of [`normalize_depth`].
pub fn build_normalize_depth<T: Scalar>(g: &mut Graph<T>, depth: NodeId) -> NodeId {
    let m = g.mean_all(depth);
    g.div_bcast(depth, m)
}

pub const DISCRIMINATOR_LEAKY_SLOPE: f64 = 0.2;

/// Patch discriminator over `cat(coords, normalized depth)`: three 4x4
/// convolutions (stride 2, 2, 1, padding 1), leaky-relu between, raw linear
/// scores out.
#[derive(Debug, Clone)]
pub struct Discriminator<T: Scalar> {
    pub w1: Array<T>,
    pub b1: Array<T>,
    pub w2: Array<T>,
    pub b2: Array<T>,
    pub w3: Array<T>,
    pub b3: Array<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub const CHANNELS: [usize; 3] = [16, 32, 1];

    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c1, c2, c3] = Self::CHANNELS;
        Discriminator {
            w1: crate::nets::kaiming(&mut rng, &[c1, 3, 4, 4]),
            b1: Array::zeros(&[c1]),
            w2: crate::nets::kaiming(&mut rng, &[c2, c1, 4, 4]),
            b2: Array::zeros(&[c2]),
            w3: crate::nets::kaiming(&mut rng, &[c3, c2, 4, 4]),
            b3: Array::zeros(&[c3]),
        }
    }

    /// Named parameters in declaration order.
    pub fn params(&self) -> Vec<(String, &Array<T>)> {
        vec![
            ("disc.w1".into(), &self.w1),
            ("disc.b1".into(), &self.b1),
            ("disc.w2".into(), &self.w2),
            ("disc.b2".into(), &self.b2),
            ("disc.w3".into(), &self.w3),
            ("disc.b3".into(), &self.b3),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array<T>> {
        vec![
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    /// Declare one graph input per parameter, in [`Self::params`] order.
    pub fn declare_params(&self, g: &mut Graph<T>) -> Vec<NodeId> {
        self.params()
            .iter()
            .map(|(_, arr)| g.input(arr.shape()))
            .collect()
    }

    /// Score map for `cat(coords, depth_norm)`; `params` must follow
    /// [`Self::params`] order.
    pub fn build(
        &self,
        g: &mut Graph<T>,
        depth_norm: NodeId,
        coords: NodeId,
        params: &[NodeId],
    ) -> NodeId {
        let x = g.concat0(&[coords, depth_norm]);
        let c1 = g.conv2d(x, params[0], params[1], 2, 1);
        let a1 = g.leaky_relu(c1, DISCRIMINATOR_LEAKY_SLOPE);
        let c2 = g.conv2d(a1, params[2], params[3], 2, 1);
        let a2 = g.leaky_relu(c2, DISCRIMINATOR_LEAKY_SLOPE);
        g.conv2d(a2, params[4], params[5], 1, 1)
    }

    /// Evaluate the score map directly against arrays.
    pub fn forward(&self, depth_norm: &Array<T>, coords: &Array<T>) -> Result<Array<T>> {
        let (h, w) = crate::geometry::depth_dims(depth_norm)?;
        if coords.shape() != [2, h, w] {
            return Err(Error::shape("discriminator coords", &[2, h, w], coords.shape()));
        }
        let mut g = Graph::new();
        let d = g.input(depth_norm.shape());
        let c = g.input(coords.shape());
        let param_nodes = self.declare_params(&mut g);
        let out = self.build(&mut g, d, c, &param_nodes);
        let mut inputs: Vec<&Array<T>> = vec![depth_norm, coords];
        inputs.extend(self.params().iter().map(|(_, a)| *a));
        g.eval_node(&inputs, out)
    }
}

/// Least-squares discriminator objective:
/// `mean((real - 1)^2) / 2 + mean(fake^2) / 2`.
pub fn lsgan_discriminator_loss<T: Scalar>(real: &Array<T>, fake: &Array<T>) -> f64 {
    let r: f64 = real.iter().map(|&v| (v.to_f64() - 1.0).powi(2)).sum::<f64>() / real.len() as f64;
    let f: f64 = fake.iter().map(|&v| v.to_f64().powi(2)).sum::<f64>() / fake.len() as f64;
    0.5 * r + 0.5 * f
}

/// Least-squares generator objective: `mean((fake - 1)^2) / 2`.
pub fn lsgan_generator_loss<T: Scalar>(fake: &Array<T>) -> f64 {
    0.5 * fake.iter().map(|&v| (v.to_f64() - 1.0).powi(2)).sum::<f64>() / fake.len() as f64
}

/// Graph form of the discriminator objective.
pub fn build_lsgan_discriminator_loss<T: Scalar>(
    g: &mut Graph<T>,
    real: NodeId,
    fake: NodeId,
) -> NodeId {
    let r1 = g.affine(real, 1.0, -1.0);
    let r2 = g.mul(r1, r1);
    let rm = g.mean_all(r2);
    let f2 = g.mul(fake, fake);
    let fm = g.mean_all(f2);
    let sum = g.add(rm, fm);
    g.scale(sum, 0.5)
}

/// Graph form of the generator objective.
pub fn build_lsgan_generator_loss<T: Scalar>(g: &mut Graph<T>, fake: NodeId) -> NodeId {
    let f1 = g.affine(fake, 1.0, -1.0);
    let f2 = g.mul(f1, f1);
    let fm = g.mean_all(f2);
    g.scale(fm, 0.5)
}

/// Unpaired reference depth maps with a seed-deterministic sampling order.
pub struct ReferenceDepthSet {
    depths: Vec<Array<f32>>,
    order: Vec<usize>,
    cursor: usize,
    seed: u64,
}

impl ReferenceDepthSet {
    pub fn new(depths: Vec<Array<f32>>, seed: u64) -> Result<Self> {
        if depths.is_empty() {
            return Err(Error::EmptyValidSet("reference depth set".into()));
        }
        for d in &depths {
            if d.iter().any(|&v| v <= 0.0) {
                return Err(Error::InvalidInput("reference depths must be positive".into()));
            }
        }
        let mut order: Vec<usize> = (0..depths.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(ReferenceDepthSet {
            depths,
            order,
            cursor: 0,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Next sample in the fixed shuffled order, cycling.
    pub fn next_sample(&mut self) -> &Array<f32> {
        let idx = self.order[self.cursor];
        self.cursor = (self.cursor + 1) % self.order.len();
        &self.depths[idx]
    }

    /// Write the set as PFM files plus a manifest naming them and the seed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = format!("seed {}\n", self.seed);
        for (i, d) in self.depths.iter().enumerate() {
            let name = format!("ref_{i:05}.pfm");
            crate::io::write_pfm(&dir.join(&name), d)?;
            manifest.push_str(&name);
            manifest.push('\n');
        }
        std::fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    /// Load a set written by [`Self::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.txt");
        let text = std::fs::read_to_string(&manifest_path)?;
        let malformed = |reason: &str| Error::MalformedFile {
            path: manifest_path.display().to_string(),
            reason: reason.to_string(),
        };
        let mut lines = text.lines();
        let seed_line = lines.next().ok_or_else(|| malformed("empty manifest"))?;
        let seed: u64 = seed_line
            .strip_prefix("seed ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| malformed("expected 'seed <n>' first line"))?;
        let mut files: Vec<PathBuf> = Vec::new();
        for line in lines {
            let line = line.trim();
            if !line.is_empty() {
                files.push(dir.join(line));
            }
        }
        if files.is_empty() {
            return Err(malformed("manifest lists no rasters"));
        }
        let depths = files
            .iter()
            .map(|p| crate::io::read_pfm(p))
            .collect::<Result<Vec<_>>>()?;
        Self::new(depths, seed)
    }
}
