use super::*;
use crate::array::Array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in [0.25, 0.95]: positive, away from every kink.
fn smooth_positive(shape: &[usize], seed: u64) -> Array<f64> {
    let mut r = rng(seed);
    Array::from_fn(shape, |_| r.random_range(0.25..0.95))
}

/// Magnitudes in [0.25, 0.95] with random sign.
fn smooth_signed(shape: &[usize], seed: u64) -> Array<f64> {
    let mut r = rng(seed);
    Array::from_fn(shape, |_| {
        let v = r.random_range(0.25..0.95);
        if r.random::<bool>() {
            v
        } else {
            -v
        }
    })
}

#[test]
fn sigmoid_of_zero_is_half() {
    let mut g = Graph::<f64>::new();
    let x = g.input(&[1]);
    let y = g.sigmoid(x);
    let out = g.eval_node(&[&Array::scalar(0.0)], y).unwrap();
    assert_eq!(out.item(), 0.5);
}

#[test]
fn identity_kernel_convolution_returns_image() {
    let mut g = Graph::<f64>::new();
    let x = g.input(&[2, 5, 7]);
    // centered identity 3x3 kernel per channel pair
    let mut w = Array::zeros(&[2, 2, 3, 3]);
    for c in 0..2 {
        w.data_mut()[c * 2 * 9 + c * 9 + 4] = 1.0;
    }
    let wid = g.constant(w);
    let bid = g.constant(Array::zeros(&[2]));
    let y = g.conv2d(x, wid, bid, 1, 1);
    let img = smooth_positive(&[2, 5, 7], 3);
    let out = g.eval_node(&[&img], y).unwrap();
    assert_eq!(out.data(), img.data());
}

#[test]
fn mean_of_one_to_four_is_two_point_five() {
    let mut g = Graph::<f64>::new();
    let x = g.input(&[4]);
    let m = g.mean_all(x);
    let out = g
        .eval_node(&[&Array::new(&[4], vec![1.0, 2.0, 3.0, 4.0])], m)
        .unwrap();
    assert_eq!(out.item(), 2.5);
}

#[test]
fn sigmoid_gradient_at_zero_is_quarter() {
    let mut g = Graph::<f64>::new();
    let x = g.input(&[1]);
    let y = g.sigmoid(x);
    let mut eval = g.evaluation();
    g.forward(&[&Array::scalar(0.0)], &mut eval).unwrap();
    let grads = g.backward(&eval, y, &Array::scalar(1.0)).unwrap();
    assert_eq!(grads[0].item(), 0.25);
}

#[test]
fn mean_gradient_is_one_over_n() {
    let mut g = Graph::<f64>::new();
    let x = g.input(&[8]);
    let m = g.mean_all(x);
    let mut eval = g.evaluation();
    g.forward(&[&smooth_positive(&[8], 4)], &mut eval).unwrap();
    let grads = g.backward(&eval, m, &Array::scalar(1.0)).unwrap();
    for &v in grads[0].iter() {
        assert_eq!(v, 0.125);
    }
}

#[test]
fn leaky_relu_negative_branch_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.input(&[1]);
    let y = g.leaky_relu(x, 0.01);
    let mut eval = g.evaluation();
    g.forward(&[&Array::scalar(-2.0)], &mut eval).unwrap();
    let grads = g.backward(&eval, y, &Array::scalar(1.0)).unwrap();
    assert_eq!(grads[0].item(), 0.01);
}

#[test]
fn grad_check_sigmoid_tight() {
    let mut g = Graph::<f64>::new();
    let x = g.input(&[1]);
    let y = g.sigmoid(x);
    let report = grad_check(&g, &[&Array::scalar(0.3)], y, 1e-4, 16, None, 0).unwrap();
    assert!(report.max_rel_error() <= 1e-6, "{report:?}");
}

#[test]
fn grad_check_linear_is_exact() {
    let mut g = Graph::<f64>::new();
    let x = g.input(&[6]);
    let y = g.affine(x, 1.7, -0.3);
    let s = g.mean_all(y);
    let report = grad_check(&g, &[&smooth_signed(&[6], 5)], s, 1e-4, 16, None, 0).unwrap();
    assert!(report.max_rel_error() <= 1e-9, "{report:?}");
}

#[test]
fn forward_is_bit_deterministic() {
    let mut g = Graph::<f64>::new();
    let x = g.input(&[3, 8, 8]);
    let w = g.constant(smooth_signed(&[4, 3, 3, 3], 6));
    let b = g.constant(smooth_signed(&[4], 7));
    let c = g.conv2d(x, w, b, 2, 1);
    let a = g.leaky_relu(c, 0.2);
    let m = g.mean_all(a);
    let img = smooth_positive(&[3, 8, 8], 8);
    let r1 = g.eval_node(&[&img], m).unwrap();
    let r2 = g.eval_node(&[&img], m).unwrap();
    assert_eq!(r1.data()[0].to_bits(), r2.data()[0].to_bits());
}

#[test]
fn concat_then_slice_recovers_inputs_exactly() {
    let mut g = Graph::<f64>::new();
    let a = g.input(&[2, 4, 4]);
    let b = g.input(&[3, 4, 4]);
    let cat = g.concat0(&[a, b]);
    let sa = g.slice0(cat, 0, 2);
    let sb = g.slice0(cat, 2, 3);
    let av = smooth_signed(&[2, 4, 4], 9);
    let bv = smooth_signed(&[3, 4, 4], 10);
    let mut eval = g.evaluation();
    g.forward(&[&av, &bv], &mut eval).unwrap();
    assert_eq!(eval.value(sa).data(), av.data());
    assert_eq!(eval.value(sb).data(), bv.data());
}

#[test]
fn input_shape_mismatch_is_rejected_with_context() {
    let mut g = Graph::<f64>::new();
    let x = g.input(&[2, 3]);
    let _ = g.abs(x);
    let bad = Array::<f64>::zeros(&[3, 2]);
    let err = g.eval_node(&[&bad], x).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("graph input #0"), "{msg}");
}

#[test]
fn gradient_of_mask_node_is_refused() {
    let mut g = Graph::<f64>::new();
    let a = g.input(&[4]);
    let b = g.input(&[4]);
    let mask = g.less(a, b);
    let masked = g.mul(mask, a);
    let loss = g.mean_all(masked);
    let av = smooth_positive(&[4], 11);
    let bv = smooth_positive(&[4], 12);
    let mut eval = g.evaluation();
    g.forward(&[&av, &bv], &mut eval).unwrap();
    // gradients w.r.t. ordinary inputs work, and the mask acts as a constant
    let grads = g.backward(&eval, loss, &Array::scalar(1.0)).unwrap();
    assert_eq!(grads.len(), 2);
    assert!(grads[1].iter().all(|&v| v == 0.0));
    // but asking for the mask's own gradient is an explicit error
    let err = g
        .backward_wrt(&eval, loss, &Array::scalar(1.0), &[mask])
        .unwrap_err();
    assert!(matches!(err, crate::error::Error::NonDifferentiable { .. }));
}

#[test]
fn detach_stops_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.input(&[4]);
    let d = g.detach(x);
    let y = g.mul(d, x); // only the direct factor carries gradient
    let loss = g.sum_all(y);
    let xv = smooth_positive(&[4], 13);
    let mut eval = g.evaluation();
    g.forward(&[&xv], &mut eval).unwrap();
    let grads = g.backward(&eval, loss, &Array::scalar(1.0)).unwrap();
    // d(loss)/dx = detach(x) (treated constant), not 2x
    for (got, want) in grads[0].iter().zip(xv.iter()) {
        assert!((got - want).abs() < 1e-12);
    }
}

/// Finite differences over each primitive once, at modest sizes. The
/// acceptance suite runs the full sweep; this is the fast inner loop.
#[test]
fn grad_check_primitives() {
    type Build = fn(&mut Graph<f64>) -> (Vec<NodeId>, NodeId, Vec<Array<f64>>);
    let cases: Vec<(&str, Build)> = vec![
        ("add_mul_div_chain", |g| {
            let a = g.input(&[3, 4, 4]);
            let b = g.input(&[3, 4, 4]);
            let s = g.add(a, b);
            let p = g.mul(s, a);
            let q = g.div(p, b);
            let out = g.mean_all(q);
            (
                vec![a, b],
                out,
                vec![smooth_positive(&[3, 4, 4], 20), smooth_positive(&[3, 4, 4], 21)],
            )
        }),
        ("sub_abs_exp", |g| {
            let a = g.input(&[2, 5, 5]);
            let b = g.input(&[2, 5, 5]);
            let d = g.sub(a, b);
            let ab = g.abs(d);
            let e = g.exp(ab);
            let out = g.mean_all(e);
            (
                vec![a, b],
                out,
                vec![smooth_positive(&[2, 5, 5], 22), smooth_signed(&[2, 5, 5], 23)],
            )
        }),
        ("min_max_clamp", |g| {
            let a = g.input(&[16]);
            let b = g.input(&[16]);
            let lo = g.min_elem(a, b);
            let hi = g.max_elem(a, b);
            let c = g.clamp(lo, -0.6, 0.6);
            let s = g.add(c, hi);
            let out = g.mean_all(s);
            (
                vec![a, b],
                out,
                vec![smooth_signed(&[16], 24), smooth_signed(&[16], 25)],
            )
        }),
        ("recip_sigmoid_leaky", |g| {
            let a = g.input(&[12]);
            let r = g.recip(a);
            let s = g.sigmoid(r);
            let l = g.leaky_relu(s, 0.2);
            let out = g.sum_all(l);
            (vec![a], out, vec![smooth_positive(&[12], 26)])
        }),
        ("conv_stride1_pad1", |g| {
            let x = g.input(&[2, 6, 6]);
            let w = g.input(&[3, 2, 3, 3]);
            let b = g.input(&[3]);
            let c = g.conv2d(x, w, b, 1, 1);
            let out = g.mean_all(c);
            (
                vec![x, w, b],
                out,
                vec![
                    smooth_signed(&[2, 6, 6], 27),
                    smooth_signed(&[3, 2, 3, 3], 28),
                    smooth_signed(&[3], 29),
                ],
            )
        }),
        ("conv_stride2_4x4", |g| {
            let x = g.input(&[2, 8, 8]);
            let w = g.input(&[4, 2, 4, 4]);
            let b = g.input(&[4]);
            let c = g.conv2d(x, w, b, 2, 1);
            let out = g.mean_all(c);
            (
                vec![x, w, b],
                out,
                vec![
                    smooth_signed(&[2, 8, 8], 30),
                    smooth_signed(&[4, 2, 4, 4], 31),
                    smooth_signed(&[4], 32),
                ],
            )
        }),
        ("avg_pool_reflect_and_valid", |g| {
            let x = g.input(&[2, 6, 6]);
            let p = g.avg_pool(x, 3, 1, true);
            let q = g.avg_pool(p, 2, 2, false);
            let out = g.mean_all(q);
            (vec![x], out, vec![smooth_signed(&[2, 6, 6], 33)])
        }),
        ("upsample_nearest", |g| {
            let x = g.input(&[3, 4, 4]);
            let u = g.upsample_nearest(x, 2);
            let out = g.mean_all(u);
            (vec![x], out, vec![smooth_signed(&[3, 4, 4], 34)])
        }),
        ("concat_slice_reductions", |g| {
            let a = g.input(&[2, 4, 4]);
            let b = g.input(&[1, 4, 4]);
            let cat = g.concat0(&[a, b]);
            let sl = g.slice0(cat, 1, 2);
            let mc = g.mean_axis0(sl);
            let ms = g.mean_spatial(cat);
            let m1 = g.mean_all(mc);
            let m2 = g.sum_all(ms);
            let out = g.add(m1, m2);
            (
                vec![a, b],
                out,
                vec![smooth_signed(&[2, 4, 4], 35), smooth_signed(&[1, 4, 4], 36)],
            )
        }),
        ("div_bcast_normalized", |g| {
            let d = g.input(&[1, 4, 4]);
            let m = g.mean_all(d);
            let n = g.div_bcast(d, m);
            let out = g.mean_all(n); // constant 1, gradient ~0 but well-defined
            let s = g.mul(n, n);
            let out2 = g.mean_all(s);
            let sum = g.add(out, out2);
            (vec![d], sum, vec![smooth_positive(&[1, 4, 4], 37)])
        }),
        ("diff_x_y_smoothness_shape", |g| {
            let d = g.input(&[1, 5, 6]);
            let dx = g.diff_x(d);
            let dy = g.diff_y(d);
            let ax = g.abs(dx);
            let ay = g.abs(dy);
            let mx = g.mean_all(ax);
            let my = g.mean_all(ay);
            let out = g.add(mx, my);
            // checkerboard keeps neighbor differences away from the abs
            // kink while leaving every element a nonzero gradient
            let mut r = rng(38);
            let board = Array::from_fn(&[1, 5, 6], |i| {
                let (y, x) = (i / 6, i % 6);
                0.45 * ((x + y) % 2) as f64 + r.random_range(-0.04..0.04)
            });
            (vec![d], out, vec![board])
        }),
        ("pose_to_matrix", |g| {
            let p = g.input(&[6]);
            let m = g.pose_to_matrix(p);
            let sq = g.mul(m, m);
            let out = g.mean_all(sq);
            let pose = Array::new(&[6], vec![0.31, -0.22, 0.17, 0.4, -0.1, 0.55]);
            (vec![p], out, vec![pose])
        }),
        ("bilinear_sample_wrt_both", |g| {
            let src = g.input(&[2, 6, 6]);
            let coords = g.input(&[2, 6, 6]);
            let s = g.bilinear_sample(src, coords);
            let out = g.mean_all(s);
            let mut r = rng(39);
            let coords_v = Array::from_fn(&[2, 6, 6], |i| {
                let max = 5.0;
                let cell = (i % 5) as f64;
                (cell + r.random_range(0.2..0.8)).min(max - 0.2)
            });
            (
                vec![src, coords],
                out,
                vec![smooth_positive(&[2, 6, 6], 40), coords_v],
            )
        }),
    ];

    for (name, build) in cases {
        let mut g = Graph::<f64>::new();
        let (_, out, inputs) = build(&mut g);
        let refs: Vec<&Array<f64>> = inputs.iter().collect();
        let report = grad_check(&g, &refs, out, 1e-4, 48, None, 99).unwrap();
        assert!(
            report.max_rel_error() <= 1e-4,
            "{name}: {:?}",
            report.per_input
        );
    }
}

use crate::nets::nudge_depth_clear_of_kinks;

#[test]
fn grad_check_reproject_and_pose_chain() {
    let intr = crate::geometry::Intrinsics::new(9.0, 8.0, 3.5, 3.5).unwrap();
    let mut g = Graph::<f64>::new();
    let depth = g.input(&[1, 8, 8]);
    let pose = g.input(&[6]);
    let src = g.input(&[3, 8, 8]);
    let m = g.pose_to_matrix(pose);
    let coords = g.reproject(depth, m, intr);
    let warped = g.bilinear_sample(src, coords);
    let out = g.mean_all(warped);

    let mut r = rng(41);
    let mut depth_v = Array::from_fn(&[1, 8, 8], |_| 4.0 + r.random_range(0.0..2.0));
    let pose6 = crate::geometry::Pose6::new([0.04, -0.05, 0.03], [0.35, -0.28, 0.3]);
    nudge_depth_clear_of_kinks(&mut depth_v, &pose6, &intr, 0.02);
    let pose_v = Array::new(&[6], pose6.to_vec6().to_vec());
    let src_v = smooth_positive(&[3, 8, 8], 42);
    let report = grad_check(
        &g,
        &[&depth_v, &pose_v, &src_v],
        out,
        1e-4,
        48,
        None,
        123,
    )
    .unwrap();
    assert!(report.max_rel_error() <= 1e-4, "{:?}", report.per_input);
}
