//! Photometric discrepancy (SSIM + L1 mix), and edge-aware depth smoothness.
//!
//! Every loss here exists in two forms: a subgraph builder used by the
//! training graph, and a plain entry point that evaluates a one-off graph.
//! Both therefore share a single implementation.

use crate::array::{Array, Scalar};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};

pub const SSIM_C1: f64 = 1e-4; // 0.01^2
pub const SSIM_C2: f64 = 9e-4; // 0.03^2

/// Loss mixing weights. `alpha` balances SSIM against L1 inside the
/// photometric term; `eta`, `xi`, `tau` weight smoothness, generator and
/// discriminator terms in the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub eta: f64,
    pub xi: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.85,
            eta: 1e-3,
            xi: 2.5e-4,
            tau: 2.5e-4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidInput(format!("alpha {} not in [0,1]", self.alpha)));
        }
        if self.eta < 0.0 || self.xi < 0.0 || self.tau < 0.0 {
            return Err(Error::InvalidInput("negative loss weight".into()));
        }
        Ok(())
    }
}

/// Local-statistics SSIM between two `[C, H, W]` nodes, channel-averaged to
/// `[1, H, W]`. Windows are 3x3 mean pools with reflection padding.
pub fn build_ssim_map<T: Scalar>(g: &mut Graph<T>, a: NodeId, b: NodeId) -> NodeId {
    let mu_a = g.avg_pool(a, 3, 1, true);
    let mu_b = g.avg_pool(b, 3, 1, true);
    let aa = g.mul(a, a);
    let bb = g.mul(b, b);
    let ab = g.mul(a, b);
    let e_aa = g.avg_pool(aa, 3, 1, true);
    let e_bb = g.avg_pool(bb, 3, 1, true);
    let e_ab = g.avg_pool(ab, 3, 1, true);
    let mu_aa = g.mul(mu_a, mu_a);
    let mu_bb = g.mul(mu_b, mu_b);
    let mu_ab = g.mul(mu_a, mu_b);
    let var_a = g.sub(e_aa, mu_aa);
    let var_b = g.sub(e_bb, mu_bb);
    let cov = g.sub(e_ab, mu_ab);

    let lum_n = g.affine(mu_ab, 2.0, SSIM_C1);
    let cov2 = g.affine(cov, 2.0, SSIM_C2);
    let num = g.mul(lum_n, cov2);
    let mu_sum = g.add(mu_aa, mu_bb);
    let lum_d = g.affine(mu_sum, 1.0, SSIM_C1);
    let var_sum = g.add(var_a, var_b);
    let var_d = g.affine(var_sum, 1.0, SSIM_C2);
    let den = g.mul(lum_d, var_d);
    let ssim = g.div(num, den);
    g.mean_axis0(ssim)
}

/// Per-pixel photometric error `[1, H, W]`:
/// `(alpha/2) * (1 - SSIM) + (1 - alpha) * mean_c |target - recon|`.
/// The `(1 - SSIM)` term is clamped to `[0, 2]` as a numeric guard.
pub fn build_photometric_error<T: Scalar>(
    g: &mut Graph<T>,
    target: NodeId,
    recon: NodeId,
    alpha: f64,
) -> NodeId {
    let ssim = build_ssim_map(g, target, recon);
    let dssim = g.affine(ssim, -1.0, 1.0);
    let dssim = g.clamp(dssim, 0.0, 2.0);
    let ssim_term = g.scale(dssim, alpha / 2.0);
    let diff = g.sub(target, recon);
    let adiff = g.abs(diff);
    let l1 = g.mean_axis0(adiff);
    let l1_term = g.scale(l1, 1.0 - alpha);
    g.add(ssim_term, l1_term)
}

/// Edge-aware smoothness of a depth map against its image: gradients of the
/// (optionally mean-normalized) depth, downweighted across image edges.
/// Forward differences; the last column/row drops out per axis.
pub fn build_smoothness_loss<T: Scalar>(
    g: &mut Graph<T>,
    depth: NodeId,
    image: NodeId,
    normalize: bool,
) -> NodeId {
    let d = if normalize {
        let m = g.mean_all(depth);
        g.div_bcast(depth, m)
    } else {
        depth
    };
    let gray = g.mean_axis0(image);

    let dx = g.diff_x(d);
    let adx = g.abs(dx);
    let ix = g.diff_x(gray);
    let aix = g.abs(ix);
    let nix = g.scale(aix, -1.0);
    let wx = g.exp(nix);
    let tx = g.mul(adx, wx);
    let mx = g.mean_all(tx);

    let dy = g.diff_y(d);
    let ady = g.abs(dy);
    let iy = g.diff_y(gray);
    let aiy = g.abs(iy);
    let niy = g.scale(aiy, -1.0);
    let wy = g.exp(niy);
    let ty = g.mul(ady, wy);
    let my = g.mean_all(ty);

    g.add(mx, my)
}

// ---- plain entry points ----

fn check_same_images<T: Scalar>(a: &Array<T>, b: &Array<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() || a.shape().len() != 3 {
        return Err(Error::shape(what, a.shape(), b.shape()));
    }
    Ok(())
}

/// Per-pixel channel-averaged SSIM of two `[C, H, W]` images.
pub fn ssim_map<T: Scalar>(a: &Array<T>, b: &Array<T>) -> Result<Array<T>> {
    check_same_images(a, b, "ssim_map")?;
    let mut g = Graph::new();
    let an = g.input(a.shape());
    let bn = g.input(b.shape());
    let out = build_ssim_map(&mut g, an, bn);
    g.eval_node(&[a, b], out)
}

/// Per-pixel photometric error map of a target against its reconstruction.
pub fn photometric_error<T: Scalar>(
    target: &Array<T>,
    recon: &Array<T>,
    alpha: f64,
) -> Result<Array<T>> {
    check_same_images(target, recon, "photometric_error")?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("alpha {alpha} not in [0,1]")));
    }
    let mut g = Graph::new();
    let tn = g.input(target.shape());
    let rn = g.input(recon.shape());
    let out = build_photometric_error(&mut g, tn, rn, alpha);
    g.eval_node(&[target, recon], out)
}

/// Scalar edge-aware smoothness loss.
pub fn smoothness_loss<T: Scalar>(
    depth: &Array<T>,
    image: &Array<T>,
    normalize: bool,
) -> Result<T> {
    let (h, w) = crate::geometry::depth_dims(depth)?;
    let (_, ih, iw) = crate::geometry::image_dims(image)?;
    if (ih, iw) != (h, w) {
        return Err(Error::shape("smoothness_loss", depth.shape(), image.shape()));
    }
    if depth.iter().any(|d| d.to_f64() <= 0.0) {
        return Err(Error::InvalidInput("smoothness_loss: non-positive depth".into()));
    }
    let mut g = Graph::new();
    let dn = g.input(depth.shape());
    let im = g.input(image.shape());
    let out = build_smoothness_loss(&mut g, dn, im, normalize);
    Ok(g.eval_node(&[depth, image], out)?.item())
}
