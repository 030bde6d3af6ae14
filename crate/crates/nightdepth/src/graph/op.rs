//! Operator set for the graph: enough to express every loss and toy network
//! in the pipeline, nothing more.

use crate::array::{Array, Scalar};
use crate::geometry::Intrinsics;

#[derive(Debug, Clone)]
pub enum Op<T: Scalar> {
    /// Graph input slot, bound at evaluation time.
    Input(usize),
    /// Constant baked into the graph.
    Const(Array<T>),

    // elementwise, same-shape binary
    Add,
    Sub,
    Mul,
    Div,
    MinElem,
    MaxElem,

    // elementwise unary
    /// `x * mul + add`
    Affine { mul: f64, add: f64 },
    Abs,
    Exp,
    Sigmoid,
    Recip,
    LeakyRelu { slope: f64 },
    Clamp { lo: f64, hi: f64 },

    /// Zero-padded 2D convolution; inputs are (x, weight, bias).
    Conv2d { stride: usize, pad: usize },
    /// 2D average pooling. `reflect` keeps the spatial size (stride must be 1,
    /// odd kernel); otherwise the window stays inside the image.
    AvgPool { k: usize, stride: usize, reflect: bool },
    UpsampleNearest { factor: usize },

    /// Concatenate along axis 0 (channels).
    Concat0,
    Slice0 { start: usize, len: usize },
    /// Same data, new shape with equal element count.
    Reshape { shape: Vec<usize> },

    /// Mean over every element, shape `[1]`.
    MeanAll,
    /// Sum over every element, shape `[1]`.
    SumAll,
    /// Mean over axis 0: `[C, ..]` to `[1, ..]`.
    MeanAxis0,
    /// Mean over spatial dims: `[C, H, W]` to `[C, 1, 1]`.
    MeanSpatial,
    /// Divide by a `[1]`-shaped scalar node, broadcast.
    DivBcast,

    /// Forward difference along x (drops the last column).
    DiffX,
    /// Forward difference along y (drops the last row).
    DiffY,

    /// Iverson `[a < b]`; forward-only, carries no gradient.
    Less,
    /// Iverson `[a > b]`; forward-only, carries no gradient.
    Greater,
    /// Identity forward; stops gradient flow.
    Detach,

    /// Axis-angle pose 6-vector to a row-major 4x4 rigid transform.
    PoseToMatrix,
    /// (depth `[1,H,W]`, transform `[16]`) to sample coords `[2,H,W]`.
    Reproject { intr: Intrinsics },
    /// Validity flags for the same projection; forward-only.
    ReprojectValidity { intr: Intrinsics },
    /// (source `[C,H,W]`, coords `[2,H,W]`) to `[C,H,W]`, border-clamped.
    BilinearSample,
}

impl<T: Scalar> Op<T> {
    pub fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Input(_) => "input",
            Const(_) => "const",
            Add => "add",
            Sub => "sub",
            Mul => "mul",
            Div => "div",
            MinElem => "min",
            MaxElem => "max",
            Affine { .. } => "affine",
            Abs => "abs",
            Exp => "exp",
            Sigmoid => "sigmoid",
            Recip => "recip",
            LeakyRelu { .. } => "leaky_relu",
            Clamp { .. } => "clamp",
            Conv2d { .. } => "conv2d",
            AvgPool { .. } => "avg_pool",
            UpsampleNearest { .. } => "upsample_nearest",
            Concat0 => "concat",
            Slice0 { .. } => "slice",
            Reshape { .. } => "reshape",
            MeanAll => "mean",
            SumAll => "sum",
            MeanAxis0 => "mean_axis0",
            MeanSpatial => "mean_spatial",
            DivBcast => "div_bcast",
            DiffX => "diff_x",
            DiffY => "diff_y",
            Less => "less",
            Greater => "greater",
            Detach => "detach",
            PoseToMatrix => "pose_to_matrix",
            Reproject { .. } => "reproject",
            ReprojectValidity { .. } => "reproject_validity",
            BilinearSample => "bilinear_sample",
        }
    }

    /// Whether a gradient may be requested for this node's output. Iverson
    /// masks and validity flags are constants by construction.
    pub fn differentiable(&self) -> bool {
        !matches!(self, Op::Less | Op::Greater | Op::ReprojectValidity { .. })
    }

    /// Output shape given input shapes; `None` means the combination is
    /// invalid for this op.
    pub fn infer_shape(&self, inputs: &[&[usize]]) -> Option<Vec<usize>> {
        use Op::*;
        match self {
            Input(_) | Const(_) => None, // leaves carry their own shape
            Add | Sub | Mul | Div | MinElem | MaxElem | Less | Greater => {
                let [a, b] = inputs else { return None };
                (a == b).then(|| a.to_vec())
            }
            Affine { .. } | Abs | Exp | Sigmoid | Recip | LeakyRelu { .. } | Clamp { .. }
            | Detach => {
                let [a] = inputs else { return None };
                Some(a.to_vec())
            }
            Conv2d { stride, pad } => {
                let [x, w, b] = inputs else { return None };
                let [ci, h, wd] = <[usize; 3]>::try_from(*x).ok()?;
                let [co, ci2, kh, kw] = <[usize; 4]>::try_from(*w).ok()?;
                let [bo] = <[usize; 1]>::try_from(*b).ok()?;
                if ci != ci2 || bo != co || *stride == 0 {
                    return None;
                }
                let oh = (h + 2 * pad).checked_sub(kh)? / stride + 1;
                let ow = (wd + 2 * pad).checked_sub(kw)? / stride + 1;
                Some(vec![co, oh, ow])
            }
            AvgPool { k, stride, reflect } => {
                let [x] = inputs else { return None };
                let [c, h, w] = <[usize; 3]>::try_from(*x).ok()?;
                if *reflect {
                    (*stride == 1 && k % 2 == 1 && (k - 1) / 2 < h.min(w))
                        .then(|| vec![c, h, w])
                } else {
                    if *stride == 0 || *k > h || *k > w {
                        return None;
                    }
                    Some(vec![c, (h - k) / stride + 1, (w - k) / stride + 1])
                }
            }
            UpsampleNearest { factor } => {
                let [x] = inputs else { return None };
                let [c, h, w] = <[usize; 3]>::try_from(*x).ok()?;
                (*factor >= 1).then(|| vec![c, h * factor, w * factor])
            }
            Concat0 => {
                let first = inputs.first()?;
                let mut c0 = 0;
                for s in inputs {
                    if s.len() != first.len() || s[1..] != first[1..] {
                        return None;
                    }
                    c0 += s[0];
                }
                let mut out = first.to_vec();
                out[0] = c0;
                Some(out)
            }
            Slice0 { start, len } => {
                let [x] = inputs else { return None };
                if *len == 0 || start + len > x[0] {
                    return None;
                }
                let mut out = x.to_vec();
                out[0] = *len;
                Some(out)
            }
            Reshape { shape } => {
                let [x] = inputs else { return None };
                (x.iter().product::<usize>() == shape.iter().product::<usize>())
                    .then(|| shape.clone())
            }
            MeanAll | SumAll => {
                let [_] = inputs else { return None };
                Some(vec![1])
            }
            MeanAxis0 => {
                let [x] = inputs else { return None };
                if x.is_empty() {
                    return None;
                }
                let mut out = x.to_vec();
                out[0] = 1;
                Some(out)
            }
            MeanSpatial => {
                let [x] = inputs else { return None };
                let [c, _, _] = <[usize; 3]>::try_from(*x).ok()?;
                Some(vec![c, 1, 1])
            }
            DivBcast => {
                let [x, s] = inputs else { return None };
                (*s == [1]).then(|| x.to_vec())
            }
            DiffX => {
                let [x] = inputs else { return None };
                let [c, h, w] = <[usize; 3]>::try_from(*x).ok()?;
                (w >= 2).then(|| vec![c, h, w - 1])
            }
            DiffY => {
                let [x] = inputs else { return None };
                let [c, h, w] = <[usize; 3]>::try_from(*x).ok()?;
                (h >= 2).then(|| vec![c, h - 1, w])
            }
            PoseToMatrix => {
                let [v] = inputs else { return None };
                (*v == [6]).then(|| vec![16])
            }
            Reproject { .. } | ReprojectValidity { .. } => {
                let [d, m] = inputs else { return None };
                let [one, h, w] = <[usize; 3]>::try_from(*d).ok()?;
                if one != 1 || *m != [16] {
                    return None;
                }
                match self {
                    Reproject { .. } => Some(vec![2, h, w]),
                    _ => Some(vec![1, h, w]),
                }
            }
            BilinearSample => {
                let [src, coords] = inputs else { return None };
                let [_, h, w] = <[usize; 3]>::try_from(*src).ok()?;
                (*coords == [2, h, w]).then(|| src.to_vec())
            }
        }
    }
}
