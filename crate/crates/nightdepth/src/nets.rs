//! Toy depth and pose networks.
//!
//! Desk-scale widths stand in for the usual large backbones; the contracts
//! kept are the ones the losses depend on: a U-shaped depth network with
//! skip connections and a bounded sigmoid depth decode, and a pose encoder
//! over a concatenated frame pair emitting six motion parameters.

use crate::array::{Array, Scalar};
use crate::graph::{Graph, NodeId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NET_LEAKY_SLOPE: f64 = 0.1;

/// Depth decode `D = 1 / (a * s + b)` with `s` in (0,1): spans (0.5, 50) m.
pub const DEPTH_DECODE_A: f64 = 1.98;
pub const DEPTH_DECODE_B: f64 = 0.02;
pub const DEPTH_MIN_M: f64 = 0.5;
pub const DEPTH_MAX_M: f64 = 50.0;

/// Pose head output scale on the rotation part.
pub const ROTATION_SCALE: f64 = 0.01;

const DEPTH_ENC: [usize; 4] = [16, 32, 64, 128];
const DEPTH_DEC: [usize; 3] = [64, 32, 8];
const DEPTH_DEC_FULL: usize = 8;
const POSE_ENC: [usize; 4] = [8, 16, 32, 64];

/// Uniform Kaiming-style init: bound `sqrt(6 / fan_in)`.
pub fn kaiming<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array<T> {
    let fan_in: usize = shape[1..].iter().product();
    let bound = (6.0 / fan_in as f64).sqrt();
    Array::from_fn(shape, |_| T::from_f64(rng.random_range(-bound..bound)))
}

/// Adjust per-pixel depths until every reprojected sample coordinate keeps a
/// margin from integer positions, where bilinear interpolation kinks.
pub fn nudge_depth_clear_of_kinks(
    depth: &mut Array<f64>,
    pose: &crate::geometry::Pose6,
    intr: &crate::geometry::Intrinsics,
    margin: f64,
) {
    let m = crate::geometry::pose_to_matrix(pose).unwrap();
    for _ in 0..64 {
        let (coords, _) = crate::geometry::reproject(depth, intr, &m).unwrap();
        let n = depth.len();
        let mut moved = false;
        for i in 0..n {
            for plane in 0..2 {
                let c = coords.data()[plane * n + i];
                let frac = c - c.floor();
                if frac < margin || frac > 1.0 - margin {
                    depth.data_mut()[i] += 0.41;
                    moved = true;
                }
            }
        }
        if !moved {
            return;
        }
    }
    panic!("could not find kink-free depths");
}

/// Push leaky-relu pre-activations away from their kink at zero by nudging
/// the bias channels that feed them, re-running the forward pass until every
/// pre-activation keeps `margin` of clearance. Finite differences across a
/// whole network are only meaningful at such smooth points.
pub fn nudge_biases_clear_of_kinks<T: Scalar>(
    g: &Graph<T>,
    inputs: &mut [Array<T>],
    margin: f64,
) -> crate::error::Result<()> {
    let mut eval = g.evaluation();
    for _ in 0..64 {
        {
            let refs: Vec<&Array<T>> = inputs.iter().collect();
            g.forward(&refs, &mut eval)?;
        }
        let mut clean = true;
        for id in g.node_ids() {
            if g.op_name(id) != "leaky_relu" {
                continue;
            }
            let conv = g.node_inputs(id)[0];
            if g.op_name(conv) != "conv2d" {
                continue;
            }
            let Some(bias_slot) = g.input_index(g.node_inputs(conv)[2]) else {
                continue;
            };
            let pre = eval.value(conv);
            let [_, ph, pw] = pre.shape() else { continue };
            let plane = ph * pw;
            let mut bump: Vec<usize> = Vec::new();
            for (i, v) in pre.iter().enumerate() {
                if v.to_f64().abs() < margin {
                    bump.push(i / plane);
                }
            }
            if !bump.is_empty() {
                clean = false;
                bump.dedup();
                for ch in bump {
                    let b = inputs[bias_slot].data_mut();
                    b[ch] = b[ch] + T::from_f64(4.0 * margin);
                }
            }
        }
        if clean {
            return Ok(());
        }
    }
    Err(crate::error::Error::InvalidInput(
        "could not move activations clear of kinks".into(),
    ))
}

#[derive(Debug, Clone)]
pub struct ConvParams<T: Scalar> {
    pub w: Array<T>,
    pub b: Array<T>,
}

impl<T: Scalar> ConvParams<T> {
    fn init(rng: &mut ChaCha8Rng, co: usize, ci: usize, k: usize) -> Self {
        ConvParams {
            w: kaiming(rng, &[co, ci, k, k]),
            b: Array::zeros(&[co]),
        }
    }
}

fn push_params<'a, T: Scalar>(
    out: &mut Vec<(String, &'a Array<T>)>,
    prefix: &str,
    conv: &'a ConvParams<T>,
) {
    out.push((format!("{prefix}.w"), &conv.w));
    out.push((format!("{prefix}.b"), &conv.b));
}

/// Walks parameter slots while a network graph is being assembled.
struct Cursor<'a> {
    nodes: &'a [NodeId],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take2(&mut self) -> (NodeId, NodeId) {
        let pair = (self.nodes[self.at], self.nodes[self.at + 1]);
        self.at += 2;
        pair
    }
}

/// U-shaped depth network: four stride-2 encoder stages, mirrored decoder
/// with nearest upsampling and skip connections, sigmoid head decoded to
/// bounded metric depth.
#[derive(Debug, Clone)]
pub struct DepthNet<T: Scalar> {
    enc: Vec<ConvParams<T>>,
    dec: Vec<ConvParams<T>>,
    full: ConvParams<T>,
    head: ConvParams<T>,
}

impl<T: Scalar> DepthNet<T> {
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enc = Vec::new();
        let mut ci = 3;
        for co in DEPTH_ENC {
            enc.push(ConvParams::init(&mut rng, co, ci, 3));
            ci = co;
        }
        // decoder consumes upsampled features concatenated with the skip
        let mut dec = Vec::new();
        let skips = [DEPTH_ENC[2], DEPTH_ENC[1], DEPTH_ENC[0]];
        let mut c_in = DEPTH_ENC[3];
        for (i, co) in DEPTH_DEC.iter().enumerate() {
            dec.push(ConvParams::init(&mut rng, *co, c_in + skips[i], 3));
            c_in = *co;
        }
        let full = ConvParams::init(&mut rng, DEPTH_DEC_FULL, c_in, 3);
        let mut head = ConvParams::init(&mut rng, 1, DEPTH_DEC_FULL, 3);
        // start mid-range (about 8 m): a fresh network whose depth begins at
        // the decode floor warps so badly that the auto-mask suppresses the
        // whole photometric signal and training never recovers
        let s0 = (1.0 / 8.0 - DEPTH_DECODE_B) / DEPTH_DECODE_A;
        head.b.data_mut()[0] = T::from_f64((s0 / (1.0 - s0)).ln());
        DepthNet {
            enc,
            dec,
            full,
            head,
        }
    }

    pub fn params(&self) -> Vec<(String, &Array<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.enc.iter().enumerate() {
            push_params(&mut out, &format!("depth.enc{i}"), c);
        }
        for (i, c) in self.dec.iter().enumerate() {
            push_params(&mut out, &format!("depth.dec{i}"), c);
        }
        push_params(&mut out, "depth.full", &self.full);
        push_params(&mut out, "depth.head", &self.head);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array<T>> {
        let mut out = Vec::new();
        for c in self.enc.iter_mut().chain(self.dec.iter_mut()) {
            out.push(&mut c.w);
            out.push(&mut c.b);
        }
        out.push(&mut self.full.w);
        out.push(&mut self.full.b);
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }

    pub fn declare_params(&self, g: &mut Graph<T>) -> Vec<NodeId> {
        self.params().iter().map(|(_, a)| g.input(a.shape())).collect()
    }

    /// Build the forward pass; returns the metric depth node `[1, H, W]`.
    /// Input spatial size must be divisible by 16.
    pub fn build(&self, g: &mut Graph<T>, image: NodeId, params: &[NodeId]) -> NodeId {
        let mut cur = Cursor { nodes: params, at: 0 };
        let mut skips = Vec::new();
        let mut x = image;
        for _ in 0..self.enc.len() {
            let (w, b) = cur.take2();
            let c = g.conv2d(x, w, b, 2, 1);
            x = g.leaky_relu(c, NET_LEAKY_SLOPE);
            skips.push(x);
        }
        // skips used in reverse, skipping the bottleneck itself
        for i in 0..self.dec.len() {
            let up = g.upsample_nearest(x, 2);
            let skip = skips[self.enc.len() - 2 - i];
            let cat = g.concat0(&[up, skip]);
            let (w, b) = cur.take2();
            let c = g.conv2d(cat, w, b, 1, 1);
            x = g.leaky_relu(c, NET_LEAKY_SLOPE);
        }
        let up = g.upsample_nearest(x, 2);
        let (w, b) = cur.take2();
        let c = g.conv2d(up, w, b, 1, 1);
        x = g.leaky_relu(c, NET_LEAKY_SLOPE);
        let (w, b) = cur.take2();
        let logits = g.conv2d(x, w, b, 1, 1);
        let s = g.sigmoid(logits);
        let denom = g.affine(s, DEPTH_DECODE_A, DEPTH_DECODE_B);
        g.recip(denom)
    }

    /// One-off forward against arrays.
    pub fn forward(&self, image: &Array<T>) -> crate::error::Result<Array<T>> {
        let mut g = Graph::new();
        let inp = g.input(image.shape());
        let param_nodes = self.declare_params(&mut g);
        let out = self.build(&mut g, inp, &param_nodes);
        let mut inputs: Vec<&Array<T>> = vec![image];
        inputs.extend(self.params().iter().map(|(_, a)| *a));
        g.eval_node(&inputs, out)
    }
}

/// Pose network: stride-2 encoder over the concatenated frame pair, global
/// average, linear head; rotation output scaled down for stable warm-up.
#[derive(Debug, Clone)]
pub struct PoseNet<T: Scalar> {
    enc: Vec<ConvParams<T>>,
    head: ConvParams<T>,
}

impl<T: Scalar> PoseNet<T> {
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enc = Vec::new();
        let mut ci = 6;
        for co in POSE_ENC {
            enc.push(ConvParams::init(&mut rng, co, ci, 3));
            ci = co;
        }
        let head = ConvParams::init(&mut rng, 6, ci, 1);
        PoseNet { enc, head }
    }

    pub fn params(&self) -> Vec<(String, &Array<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.enc.iter().enumerate() {
            push_params(&mut out, &format!("pose.enc{i}"), c);
        }
        push_params(&mut out, "pose.head", &self.head);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array<T>> {
        let mut out = Vec::new();
        for c in self.enc.iter_mut() {
            out.push(&mut c.w);
            out.push(&mut c.b);
        }
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }

    pub fn declare_params(&self, g: &mut Graph<T>) -> Vec<NodeId> {
        self.params().iter().map(|(_, a)| g.input(a.shape())).collect()
    }

    /// Build the forward pass over `cat(target, source)` `[6, H, W]`;
    /// returns the pose 6-vector node.
    pub fn build(&self, g: &mut Graph<T>, pair: NodeId, params: &[NodeId]) -> NodeId {
        let mut cur = Cursor { nodes: params, at: 0 };
        let mut x = pair;
        for _ in 0..self.enc.len() {
            let (w, b) = cur.take2();
            let c = g.conv2d(x, w, b, 2, 1);
            x = g.leaky_relu(c, NET_LEAKY_SLOPE);
        }
        let pooled = g.mean_spatial(x);
        let (w, b) = cur.take2();
        let head = g.conv2d(pooled, w, b, 1, 0);
        let v6 = g.reshape(head, &[6]);
        let rot = g.slice0(v6, 0, 3);
        let rot = g.scale(rot, ROTATION_SCALE);
        let trans = g.slice0(v6, 3, 3);
        g.concat0(&[rot, trans])
    }

    pub fn forward(
        &self,
        target: &Array<T>,
        source: &Array<T>,
    ) -> crate::error::Result<Array<T>> {
        let mut g = Graph::new();
        let t = g.input(target.shape());
        let s = g.input(source.shape());
        let pair = g.concat0(&[t, s]);
        let param_nodes = self.declare_params(&mut g);
        let out = self.build(&mut g, pair, &param_nodes);
        let mut inputs: Vec<&Array<T>> = vec![target, source];
        inputs.extend(self.params().iter().map(|(_, a)| *a));
        g.eval_node(&inputs, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(shape: &[usize], seed: u64) -> Array<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_fn(shape, |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn depth_output_is_bounded_and_full_resolution() {
        let net = DepthNet::<f64>::init(1);
        let img = random_image(&[3, 32, 48], 2);
        let d = net.forward(&img).unwrap();
        assert_eq!(d.shape(), &[1, 32, 48]);
        for &v in d.iter() {
            assert!(v > DEPTH_MIN_M && v < DEPTH_MAX_M, "depth {v}");
        }
    }

    #[test]
    fn depth_forward_is_deterministic_per_seed() {
        let a = DepthNet::<f64>::init(7);
        let b = DepthNet::<f64>::init(7);
        let img = random_image(&[3, 16, 16], 3);
        assert_eq!(a.forward(&img).unwrap().data(), b.forward(&img).unwrap().data());
    }

    #[test]
    fn pose_output_is_six_values_with_damped_rotation() {
        let net = PoseNet::<f64>::init(4);
        let t = random_image(&[3, 32, 32], 5);
        let s = random_image(&[3, 32, 32], 6);
        let p = net.forward(&t, &s).unwrap();
        assert_eq!(p.shape(), &[6]);
        assert!(p.all_finite());
        // rotation part carries the 0.01 scale: small against translations
        for &r in &p.data()[0..3] {
            assert!(r.abs() < 0.1);
        }
    }

    #[test]
    fn depth_net_end_to_end_grad_check() {
        let net = DepthNet::<f64>::init(8);
        let mut g = Graph::<f64>::new();
        let inp = g.input(&[3, 16, 16]);
        let params = net.declare_params(&mut g);
        let d = net.build(&mut g, inp, &params);
        let loss = g.mean_all(d);
        let img = random_image(&[3, 16, 16], 9);
        let mut inputs: Vec<Array<f64>> = vec![img];
        for (_, p) in net.params() {
            inputs.push(p.clone());
        }
        nudge_biases_clear_of_kinks(&g, &mut inputs, 4e-3).unwrap();
        let refs: Vec<&Array<f64>> = inputs.iter().collect();
        let report = crate::graph::grad_check(&g, &refs, loss, 1e-4, 8, None, 10).unwrap();
        assert!(report.max_rel_error() <= 1e-4, "{:?}", report.per_input);
    }

    #[test]
    fn pose_net_end_to_end_grad_check() {
        let net = PoseNet::<f64>::init(11);
        let mut g = Graph::<f64>::new();
        let t = g.input(&[3, 16, 16]);
        let s = g.input(&[3, 16, 16]);
        let pair = g.concat0(&[t, s]);
        let params = net.declare_params(&mut g);
        let p = net.build(&mut g, pair, &params);
        let sq = g.mul(p, p);
        let loss = g.mean_all(sq);
        let tv = random_image(&[3, 16, 16], 12);
        let sv = random_image(&[3, 16, 16], 13);
        let mut inputs: Vec<Array<f64>> = vec![tv, sv];
        for (_, pr) in net.params() {
            inputs.push(pr.clone());
        }
        nudge_biases_clear_of_kinks(&g, &mut inputs, 4e-3).unwrap();
        let refs: Vec<&Array<f64>> = inputs.iter().collect();
        let report = crate::graph::grad_check(&g, &refs, loss, 1e-4, 8, None, 14).unwrap();
        assert!(report.max_rel_error() <= 1e-4, "{:?}", report.per_input);
    }
}
