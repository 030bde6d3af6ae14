//! Finite-difference sweep over every differentiable operator and the
//! composite losses, in `f64`. Backs the `gradcheck` subcommand and the
//! gradient-fidelity gate in the acceptance tests.

use crate::array::Array;
use crate::error::Result;
use crate::geometry::{Intrinsics, Pose6};
use crate::graph::{grad_check, Graph, NodeId};
use crate::nets::{nudge_biases_clear_of_kinks, DepthNet, PoseNet};
use crate::photometry::{build_photometric_error, build_smoothness_loss, build_ssim_map};
use crate::prior::{
    build_lsgan_discriminator_loss, build_lsgan_generator_loss, build_normalize_depth,
    coord_image, Discriminator,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SweepCase {
    pub name: &'static str,
    pub max_rel_error: f64,
}

pub const SWEEP_STEP: f64 = 1e-4;
pub const SWEEP_TOLERANCE: f64 = 1e-4;

fn positive(shape: &[usize], seed: u64) -> Array<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array::from_fn(shape, |_| rng.random_range(0.25..0.95))
}

fn signed(shape: &[usize], seed: u64) -> Array<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array::from_fn(shape, |_| {
        let v = rng.random_range(0.25..0.95);
        if rng.random::<bool>() {
            v
        } else {
            -v
        }
    })
}

type CaseBuild = Box<dyn Fn(&mut Graph<f64>) -> (NodeId, Vec<Array<f64>>)>;

fn run_case(
    name: &'static str,
    samples: usize,
    build: impl Fn(&mut Graph<f64>) -> (NodeId, Vec<Array<f64>>),
) -> Result<SweepCase> {
    let mut g = Graph::new();
    let (out, inputs) = build(&mut g);
    let refs: Vec<&Array<f64>> = inputs.iter().collect();
    let report = grad_check(&g, &refs, out, SWEEP_STEP, samples, None, 0xC0FFEE)?;
    Ok(SweepCase {
        name,
        max_rel_error: report.max_rel_error(),
    })
}

/// Run the whole sweep; every case must come in at or under
/// [`SWEEP_TOLERANCE`].
pub fn operator_sweep() -> Result<Vec<SweepCase>> {
    let mut out = Vec::new();
    let cases: Vec<(&'static str, usize, CaseBuild)> = vec![
        (
            "elementwise_add_sub_mul_div",
            48,
            Box::new(|g| {
                let a = g.input(&[3, 6, 6]);
                let b = g.input(&[3, 6, 6]);
                let s = g.add(a, b);
                let d = g.sub(s, b);
                let m = g.mul(d, s);
                let q = g.div(m, b);
                let o = g.mean_all(q);
                (o, vec![positive(&[3, 6, 6], 1), positive(&[3, 6, 6], 2)])
            }),
        ),
        (
            "elementwise_min_max",
            48,
            Box::new(|g| {
                let a = g.input(&[24]);
                let b = g.input(&[24]);
                let lo = g.min_elem(a, b);
                let hi = g.max_elem(a, b);
                let s = g.add(lo, hi);
                let o = g.mean_all(s);
                (o, vec![signed(&[24], 3), signed(&[24], 4)])
            }),
        ),
        (
            "affine_abs_exp",
            48,
            Box::new(|g| {
                let a = g.input(&[20]);
                let f = g.affine(a, 1.3, -0.2);
                let ab = g.abs(f);
                let e = g.exp(ab);
                let o = g.mean_all(e);
                // keep |1.3 a - 0.2| away from the abs kink
                let v = Array::from_fn(&[20], |i| 0.4 + 0.025 * i as f64);
                (o, vec![v])
            }),
        ),
        (
            "sigmoid_recip_clamp_leaky",
            48,
            Box::new(|g| {
                let a = g.input(&[20]);
                let s = g.sigmoid(a);
                let r = g.recip(s);
                let c = g.clamp(r, 1.1, 1.9);
                let l = g.leaky_relu(c, 0.01);
                let o = g.sum_all(l);
                (o, vec![signed(&[20], 6)])
            }),
        ),
        (
            "conv2d_stride1",
            64,
            Box::new(|g| {
                let x = g.input(&[2, 6, 6]);
                let w = g.input(&[3, 2, 3, 3]);
                let b = g.input(&[3]);
                let c = g.conv2d(x, w, b, 1, 1);
                let o = g.mean_all(c);
                (o, vec![signed(&[2, 6, 6], 7), signed(&[3, 2, 3, 3], 8), signed(&[3], 9)])
            }),
        ),
        (
            "conv2d_stride2_4x4",
            64,
            Box::new(|g| {
                let x = g.input(&[2, 8, 8]);
                let w = g.input(&[4, 2, 4, 4]);
                let b = g.input(&[4]);
                let c = g.conv2d(x, w, b, 2, 1);
                let o = g.mean_all(c);
                (o, vec![signed(&[2, 8, 8], 10), signed(&[4, 2, 4, 4], 11), signed(&[4], 12)])
            }),
        ),
        (
            "avg_pool_reflect_and_valid",
            64,
            Box::new(|g| {
                let x = g.input(&[2, 6, 6]);
                let p = g.avg_pool(x, 3, 1, true);
                let q = g.avg_pool(p, 2, 2, false);
                let o = g.mean_all(q);
                (o, vec![signed(&[2, 6, 6], 13)])
            }),
        ),
        (
            "upsample_nearest",
            48,
            Box::new(|g| {
                let x = g.input(&[2, 4, 4]);
                let u = g.upsample_nearest(x, 2);
                let o = g.mean_all(u);
                (o, vec![signed(&[2, 4, 4], 14)])
            }),
        ),
        (
            "concat_slice_reshape_reductions",
            48,
            Box::new(|g| {
                let a = g.input(&[2, 4, 4]);
                let b = g.input(&[1, 4, 4]);
                let cat = g.concat0(&[a, b]);
                let sl = g.slice0(cat, 1, 2);
                let rs = g.reshape(sl, &[2, 16]);
                let mc = g.mean_axis0(rs);
                let ms = g.mean_spatial(cat);
                let m1 = g.mean_all(mc);
                let m2 = g.sum_all(ms);
                let o = g.add(m1, m2);
                (o, vec![signed(&[2, 4, 4], 15), signed(&[1, 4, 4], 16)])
            }),
        ),
        (
            "div_bcast_depth_normalization",
            48,
            Box::new(|g| {
                let d = g.input(&[1, 4, 4]);
                let n = build_normalize_depth(g, d);
                let sq = g.mul(n, n);
                let o = g.mean_all(sq);
                (o, vec![positive(&[1, 4, 4], 17)])
            }),
        ),
        (
            "diff_x_diff_y",
            48,
            Box::new(|g| {
                let d = g.input(&[1, 5, 6]);
                let dx = g.diff_x(d);
                let dy = g.diff_y(d);
                let ax = g.abs(dx);
                let ay = g.abs(dy);
                let mx = g.mean_all(ax);
                let my = g.mean_all(ay);
                let o = g.add(mx, my);
                // checkerboard: every difference is far from the abs kink
                // and every element has a nonzero gradient
                let mut rng = ChaCha8Rng::seed_from_u64(18);
                let board = Array::from_fn(&[1, 5, 6], |i| {
                    let (y, x) = (i / 6, i % 6);
                    0.45 * ((x + y) % 2) as f64 + rng.random_range(-0.04..0.04)
                });
                (o, vec![board])
            }),
        ),
        (
            "pose_to_matrix",
            12,
            Box::new(|g| {
                let p = g.input(&[6]);
                let m = g.pose_to_matrix(p);
                let sq = g.mul(m, m);
                let o = g.mean_all(sq);
                (o, vec![Array::new(&[6], vec![0.31, -0.22, 0.17, 0.4, -0.1, 0.55])])
            }),
        ),
        (
            "bilinear_sample",
            64,
            Box::new(|g| {
                let src = g.input(&[2, 6, 6]);
                let coords = g.input(&[2, 6, 6]);
                let s = g.bilinear_sample(src, coords);
                let o = g.mean_all(s);
                let mut rng = ChaCha8Rng::seed_from_u64(19);
                let coords_v = Array::from_fn(&[2, 6, 6], |i| {
                    ((i % 5) as f64 + rng.random_range(0.2..0.8)).min(4.8)
                });
                (o, vec![positive(&[2, 6, 6], 20), coords_v])
            }),
        ),
        (
            "reproject_warp_chain",
            48,
            Box::new(|g| {
                let intr = Intrinsics::new(9.0, 8.0, 3.5, 3.5).unwrap();
                let depth = g.input(&[1, 8, 8]);
                let pose = g.input(&[6]);
                let src = g.input(&[3, 8, 8]);
                let m = g.pose_to_matrix(pose);
                let coords = g.reproject(depth, m, intr);
                let warped = g.bilinear_sample(src, coords);
                let o = g.mean_all(warped);
                let mut rng = ChaCha8Rng::seed_from_u64(21);
                let mut depth_v = Array::from_fn(&[1, 8, 8], |_| 4.0 + rng.random_range(0.0..2.0));
                let pose6 = Pose6::new([0.04, -0.05, 0.03], [0.35, -0.28, 0.3]);
                crate::nets::nudge_depth_clear_of_kinks(&mut depth_v, &pose6, &intr, 0.02);
                (
                    o,
                    vec![depth_v, Array::new(&[6], pose6.to_vec6().to_vec()), positive(&[3, 8, 8], 22)],
                )
            }),
        ),
        (
            "ssim_map",
            64,
            Box::new(|g| {
                let a = g.input(&[2, 8, 8]);
                let b = g.input(&[2, 8, 8]);
                let s = build_ssim_map(g, a, b);
                let o = g.mean_all(s);
                (o, vec![positive(&[2, 8, 8], 23), positive(&[2, 8, 8], 24)])
            }),
        ),
        (
            "photometric_error",
            64,
            Box::new(|g| {
                let t = g.input(&[3, 8, 8]);
                let r = g.input(&[3, 8, 8]);
                let pe = build_photometric_error(g, t, r, 0.85);
                let o = g.mean_all(pe);
                let tv = positive(&[3, 8, 8], 25);
                let mut rng = ChaCha8Rng::seed_from_u64(26);
                let rv = tv.map(|v| v + rng.random_range(0.01..0.04));
                (o, vec![tv, rv])
            }),
        ),
        (
            "smoothness_loss",
            64,
            Box::new(|g| {
                let d = g.input(&[1, 6, 6]);
                let img = g.input(&[3, 6, 6]);
                let o = build_smoothness_loss(g, d, img, true);
                let mut rng = ChaCha8Rng::seed_from_u64(27);
                let dv = Array::from_fn(&[1, 6, 6], |i| {
                    2.0 + 0.31 * (i % 6) as f64 + 0.47 * (i / 6) as f64
                        + rng.random_range(-0.02..0.02)
                });
                let iv = positive(&[3, 6, 6], 28);
                (o, vec![dv, iv])
            }),
        ),
        (
            "lsgan_losses_through_discriminator",
            24,
            Box::new(|g| {
                let disc = Discriminator::<f64>::init(29);
                let real = g.input(&[1, 16, 16]);
                let fake = g.input(&[1, 16, 16]);
                let coords = g.constant(coord_image(16, 16).unwrap());
                let params = disc.declare_params(g);
                let sr = disc.build(g, real, coords, &params);
                let sf = disc.build(g, fake, coords, &params);
                let ld = build_lsgan_discriminator_loss(g, sr, sf);
                let lg = build_lsgan_generator_loss(g, sf);
                let o = g.add(ld, lg);
                let mut rng = ChaCha8Rng::seed_from_u64(30);
                let mut inputs = vec![
                    Array::from_fn(&[1, 16, 16], |_| rng.random_range(0.3..2.5)),
                    Array::from_fn(&[1, 16, 16], |_| rng.random_range(0.3..2.5)),
                ];
                for (_, p) in disc.params() {
                    inputs.push(p.clone());
                }
                (o, inputs)
            }),
        ),
    ];
    for (name, samples, build) in cases {
        out.push(run_case(name, samples, build)?);
    }

    // both toy networks, end to end
    {
        let net = DepthNet::<f64>::init(31);
        let mut g = Graph::new();
        let inp = g.input(&[3, 16, 16]);
        let params = net.declare_params(&mut g);
        let d = net.build(&mut g, inp, &params);
        let loss = g.mean_all(d);
        let mut inputs: Vec<Array<f64>> = vec![positive(&[3, 16, 16], 32)];
        for (_, p) in net.params() {
            inputs.push(p.clone());
        }
        nudge_biases_clear_of_kinks(&g, &mut inputs, 40.0 * SWEEP_STEP)?;
        let refs: Vec<&Array<f64>> = inputs.iter().collect();
        let report = grad_check(&g, &refs, loss, SWEEP_STEP, 6, None, 0xC0FFEE)?;
        out.push(SweepCase {
            name: "depth_net_end_to_end",
            max_rel_error: report.max_rel_error(),
        });
    }
    {
        let net = PoseNet::<f64>::init(33);
        let mut g = Graph::new();
        let t = g.input(&[3, 16, 16]);
        let s = g.input(&[3, 16, 16]);
        let pair = g.concat0(&[t, s]);
        let params = net.declare_params(&mut g);
        let p = net.build(&mut g, pair, &params);
        let sq = g.mul(p, p);
        let loss = g.mean_all(sq);
        let mut inputs: Vec<Array<f64>> = vec![positive(&[3, 16, 16], 34), positive(&[3, 16, 16], 35)];
        for (_, pr) in net.params() {
            inputs.push(pr.clone());
        }
        nudge_biases_clear_of_kinks(&g, &mut inputs, 40.0 * SWEEP_STEP)?;
        let refs: Vec<&Array<f64>> = inputs.iter().collect();
        let report = grad_check(&g, &refs, loss, SWEEP_STEP, 6, None, 0xC0FFEE)?;
        out.push(SweepCase {
            name: "pose_net_end_to_end",
            max_rel_error: report.max_rel_error(),
        });
    }

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_passes_everywhere() {
        let cases = operator_sweep().unwrap();
        assert!(cases.len() >= 18);
        for c in &cases {
            assert!(
                c.max_rel_error <= SWEEP_TOLERANCE,
                "{}: {}",
                c.name,
                c.max_rel_error
            );
        }
    }
}
