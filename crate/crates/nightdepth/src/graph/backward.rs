//! Per-operator backward rules. Each returns one optional gradient
//! contribution per input position; `None` marks a stopped path.

use super::conv::{self, ConvDims};
use super::op::Op;
use super::Node;
use crate::array::{Array, Scalar};
use crate::geometry;

/// `wanted[pos]` marks inputs whose gradient will actually be consumed;
/// separable work for unwanted inputs is skipped.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_node<T: Scalar>(
    node: &Node<T>,
    args: &[&Array<T>],
    value: &Array<T>,
    adj: &Array<T>,
    fwd_scratch: &[T],
    wanted: &[bool],
    workspace: &mut Vec<T>,
) -> Vec<Option<Array<T>>> {
    use Op::*;
    match &node.op {
        Input(_) | Const(_) | Less | Greater | ReprojectValidity { .. } | Detach => vec![],

        Add => vec![Some(adj.clone()), Some(adj.clone())],
        Sub => vec![Some(adj.clone()), Some(adj.map(|g| -g))],
        Mul => {
            let (a, b) = (args[0], args[1]);
            let da = Array::from_fn(a.shape(), |i| adj.data()[i] * b.data()[i]);
            let db = Array::from_fn(b.shape(), |i| adj.data()[i] * a.data()[i]);
            vec![Some(da), Some(db)]
        }
        Div => {
            let (a, b) = (args[0], args[1]);
            let da = Array::from_fn(a.shape(), |i| adj.data()[i] / b.data()[i]);
            let db = Array::from_fn(b.shape(), |i| {
                -adj.data()[i] * a.data()[i] / (b.data()[i] * b.data()[i])
            });
            vec![Some(da), Some(db)]
        }
        MinElem | MaxElem => {
            // ties route to the first operand
            let take_first = |a: T, b: T| match node.op {
                MinElem => a <= b,
                _ => a >= b,
            };
            let (a, b) = (args[0], args[1]);
            let da = Array::from_fn(a.shape(), |i| {
                if take_first(a.data()[i], b.data()[i]) {
                    adj.data()[i]
                } else {
                    T::ZERO
                }
            });
            let db = Array::from_fn(b.shape(), |i| {
                if take_first(a.data()[i], b.data()[i]) {
                    T::ZERO
                } else {
                    adj.data()[i]
                }
            });
            vec![Some(da), Some(db)]
        }
        Affine { mul, .. } => {
            let m = T::from_f64(*mul);
            vec![Some(adj.map(|g| g * m))]
        }
        Abs => {
            let x = args[0];
            let dx = Array::from_fn(x.shape(), |i| {
                let v = x.data()[i];
                if v > T::ZERO {
                    adj.data()[i]
                } else if v < T::ZERO {
                    -adj.data()[i]
                } else {
                    T::ZERO
                }
            });
            vec![Some(dx)]
        }
        Exp => {
            let dx = Array::from_fn(value.shape(), |i| adj.data()[i] * value.data()[i]);
            vec![Some(dx)]
        }
        Sigmoid => {
            let dx = Array::from_fn(value.shape(), |i| {
                let y = value.data()[i];
                adj.data()[i] * y * (T::ONE - y)
            });
            vec![Some(dx)]
        }
        Recip => {
            let dx = Array::from_fn(value.shape(), |i| {
                let y = value.data()[i];
                -adj.data()[i] * y * y
            });
            vec![Some(dx)]
        }
        LeakyRelu { slope } => {
            let s = T::from_f64(*slope);
            let x = args[0];
            let dx = Array::from_fn(x.shape(), |i| {
                if x.data()[i] >= T::ZERO {
                    adj.data()[i]
                } else {
                    adj.data()[i] * s
                }
            });
            vec![Some(dx)]
        }
        Clamp { lo, hi } => {
            let (lo, hi) = (T::from_f64(*lo), T::from_f64(*hi));
            let x = args[0];
            let dx = Array::from_fn(x.shape(), |i| {
                let v = x.data()[i];
                if v >= lo && v <= hi {
                    adj.data()[i]
                } else {
                    T::ZERO
                }
            });
            vec![Some(dx)]
        }
        Conv2d { stride, pad } => {
            let d = ConvDims::new(args[0].shape(), args[1].shape(), *stride, *pad);
            let mut dx = wanted[0].then(|| Array::zeros(args[0].shape()));
            let mut dw = Array::zeros(args[1].shape());
            let mut db = Array::zeros(args[2].shape());
            let mut refill = Vec::new();
            conv::conv2d_backward(
                args[0].data(),
                args[1].data(),
                &d,
                adj.data(),
                fwd_scratch,
                &mut refill,
                workspace,
                dx.as_mut().map(|a| a.data_mut()),
                dw.data_mut(),
                db.data_mut(),
            );
            vec![dx, Some(dw), Some(db)]
        }
        AvgPool { k, stride, reflect } => {
            let [c, h, w] = args[0].shape() else { unreachable!() };
            let mut dx = Array::zeros(args[0].shape());
            conv::avg_pool_backward(*c, *h, *w, *k, *stride, *reflect, adj.data(), dx.data_mut());
            vec![Some(dx)]
        }
        UpsampleNearest { factor } => {
            let [c, h, w] = args[0].shape() else { unreachable!() };
            let mut dx = Array::zeros(args[0].shape());
            conv::upsample_nearest_backward(*c, *h, *w, *factor, adj.data(), dx.data_mut());
            vec![Some(dx)]
        }
        Concat0 => {
            let mut offset = 0;
            args.iter()
                .map(|a| {
                    let part = Array::new(
                        a.shape(),
                        adj.data()[offset..offset + a.len()].to_vec(),
                    );
                    offset += a.len();
                    Some(part)
                })
                .collect()
        }
        Slice0 { start, .. } => {
            let inner: usize = args[0].shape()[1..].iter().product();
            let mut dx = Array::zeros(args[0].shape());
            dx.data_mut()[start * inner..start * inner + adj.len()].copy_from_slice(adj.data());
            vec![Some(dx)]
        }
        Reshape { .. } => vec![Some(Array::new(args[0].shape(), adj.data().to_vec()))],
        MeanAll => {
            let n = args[0].len();
            let g = adj.data()[0] / T::from_f64(n as f64);
            vec![Some(Array::full(args[0].shape(), g))]
        }
        SumAll => {
            let g = adj.data()[0];
            vec![Some(Array::full(args[0].shape(), g))]
        }
        MeanAxis0 => {
            let c = args[0].shape()[0];
            let inner: usize = args[0].shape()[1..].iter().product();
            let inv = T::from_f64(1.0 / c as f64);
            let dx = Array::from_fn(args[0].shape(), |i| adj.data()[i % inner] * inv);
            vec![Some(dx)]
        }
        MeanSpatial => {
            let [_, h, w] = args[0].shape() else { unreachable!() };
            let n = h * w;
            let inv = T::from_f64(1.0 / n as f64);
            let dx = Array::from_fn(args[0].shape(), |i| adj.data()[i / n] * inv);
            vec![Some(dx)]
        }
        DivBcast => {
            let s = args[1].data()[0];
            let dx = adj.map(|g| g / s);
            let mut acc = T::ZERO;
            for (g, &x) in adj.iter().zip(args[0].data()) {
                acc = acc + *g * x;
            }
            let ds = Array::scalar(-acc / (s * s));
            vec![Some(dx), Some(ds)]
        }
        DiffX => {
            let [c, h, w] = args[0].shape() else { unreachable!() };
            let mut dx = Array::zeros(args[0].shape());
            for ch in 0..*c {
                for y in 0..*h {
                    let row = ch * h * w + y * w;
                    let orow = ch * h * (w - 1) + y * (w - 1);
                    for x in 0..w - 1 {
                        let g = adj.data()[orow + x];
                        dx.data_mut()[row + x + 1] = dx.data_mut()[row + x + 1] + g;
                        dx.data_mut()[row + x] = dx.data_mut()[row + x] - g;
                    }
                }
            }
            vec![Some(dx)]
        }
        DiffY => {
            let [c, h, w] = args[0].shape() else { unreachable!() };
            let mut dx = Array::zeros(args[0].shape());
            for ch in 0..*c {
                for y in 0..h - 1 {
                    let row = ch * h * w + y * w;
                    let orow = ch * (h - 1) * w + y * w;
                    for x in 0..*w {
                        let g = adj.data()[orow + x];
                        dx.data_mut()[row + w + x] = dx.data_mut()[row + w + x] + g;
                        dx.data_mut()[row + x] = dx.data_mut()[row + x] - g;
                    }
                }
            }
            vec![Some(dx)]
        }
        PoseToMatrix => {
            let grad = geometry::rodrigues_backward_vec6(args[0].data(), adj.data());
            vec![Some(Array::new(&[6], grad))]
        }
        Reproject { intr } => {
            let [_, h, w] = args[0].shape() else { unreachable!() };
            let mut dd = Array::zeros(args[0].shape());
            let mut dm = Array::zeros(args[1].shape());
            geometry::reproject_backward_kernel(
                intr,
                args[0].data(),
                args[1].data(),
                *h,
                *w,
                adj.data(),
                dd.data_mut(),
                dm.data_mut(),
            );
            vec![Some(dd), Some(dm)]
        }
        BilinearSample => {
            let [c, h, w] = args[0].shape() else { unreachable!() };
            let mut dsrc = Array::zeros(args[0].shape());
            let mut dcoords = Array::zeros(args[1].shape());
            geometry::bilinear_backward_kernel(
                args[0].data(),
                args[1].data(),
                *c,
                *h,
                *w,
                adj.data(),
                dsrc.data_mut(),
                dcoords.data_mut(),
            );
            vec![wanted[0].then_some(dsrc), Some(dcoords)]
        }
    }
}
