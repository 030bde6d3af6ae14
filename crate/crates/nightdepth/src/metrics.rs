//! Median-scaled depth evaluation: the seven standard error/accuracy
//! metrics with depth caps.

use crate::array::{Array, Scalar};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub sample_count: usize,
}

impl MetricsReport {
    /// Flat text form, one metric per line.
    pub fn to_text(&self) -> String {
        format!(
            "abs_rel {}\nsq_rel {}\nrmse {}\nrmse_log {}\ndelta1 {}\ndelta2 {}\ndelta3 {}\nsample_count {}\n",
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.delta1,
            self.delta2,
            self.delta3,
            self.sample_count
        )
    }

    /// Combine reports, weighting each by its sample count.
    pub fn weighted_average(reports: &[MetricsReport]) -> Result<MetricsReport> {
        let total: usize = reports.iter().map(|r| r.sample_count).sum();
        if total == 0 {
            return Err(Error::EmptyValidSet("metrics aggregation".into()));
        }
        let mut acc = MetricsReport {
            abs_rel: 0.0,
            sq_rel: 0.0,
            rmse: 0.0,
            rmse_log: 0.0,
            delta1: 0.0,
            delta2: 0.0,
            delta3: 0.0,
            sample_count: total,
        };
        for r in reports {
            let w = r.sample_count as f64 / total as f64;
            acc.abs_rel += w * r.abs_rel;
            acc.sq_rel += w * r.sq_rel;
            acc.rmse += w * r.rmse;
            acc.rmse_log += w * r.rmse_log;
            acc.delta1 += w * r.delta1;
            acc.delta2 += w * r.delta2;
            acc.delta3 += w * r.delta3;
        }
        Ok(acc)
    }
}

/// Depth caps applied during evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            min_depth: 1e-3,
            max_depth: 40.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_depth > 0.0 && self.min_depth < self.max_depth) {
            return Err(Error::InvalidInput(format!(
                "need 0 < min_depth < max_depth, got {} and {}",
                self.min_depth, self.max_depth
            )));
        }
        Ok(())
    }
}

/// Median with the lower-middle element for even sizes.
fn median(values: &mut Vec<f64>) -> f64 {
    let mid = (values.len() - 1) / 2;
    values.sort_by(f64::total_cmp);
    values[mid]
}

fn gather_valid<T: Scalar>(
    pred: &Array<T>,
    gt: &Array<T>,
    valid: &Array<T>,
    keep: impl Fn(f64) -> bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if pred.shape() != gt.shape() || pred.shape() != valid.shape() {
        return Err(Error::shape("evaluate", pred.shape(), gt.shape()));
    }
    let mut p = Vec::new();
    let mut g = Vec::new();
    for i in 0..pred.len() {
        let gt_v = gt.data()[i].to_f64();
        if valid.data()[i].to_f64() != 0.0 && keep(gt_v) {
            p.push(pred.data()[i].to_f64());
            g.push(gt_v);
        }
    }
    Ok((p, g))
}

/// Scale factor aligning prediction to ground truth medians:
/// `median(gt) / median(pred)` over the valid set.
pub fn median_scale_factor<T: Scalar>(
    pred: &Array<T>,
    gt: &Array<T>,
    valid: &Array<T>,
) -> Result<f64> {
    let (mut p, mut g) = gather_valid(pred, gt, valid, |v| v > 0.0)?;
    if p.is_empty() {
        return Err(Error::EmptyValidSet("median scaling".into()));
    }
    let mp = median(&mut p);
    if mp == 0.0 {
        return Err(Error::InvalidInput("zero median prediction".into()));
    }
    Ok(median(&mut g) / mp)
}

/// Prediction multiplied by the median scale factor.
pub fn median_scale<T: Scalar>(
    pred: &Array<T>,
    gt: &Array<T>,
    valid: &Array<T>,
) -> Result<Array<T>> {
    let s = T::from_f64(median_scale_factor(pred, gt, valid)?);
    Ok(pred.map(|v| v * s))
}

/// The seven metrics over paired samples; no scaling or clamping here.
fn metrics_on(pred: &[f64], gt: &[f64]) -> MetricsReport {
    let n = pred.len() as f64;
    let mut abs_rel = 0.0;
    let mut sq_rel = 0.0;
    let mut mse = 0.0;
    let mut mse_log = 0.0;
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    let mut d3 = 0.0;
    for (&d, &g) in pred.iter().zip(gt.iter()) {
        let err = g - d;
        abs_rel += err.abs() / g;
        sq_rel += err * err / g;
        mse += err * err;
        let le = g.ln() - d.ln();
        mse_log += le * le;
        let ratio = (g / d).max(d / g);
        if ratio < 1.25 {
            d1 += 1.0;
        }
        if ratio < 1.25f64.powi(2) {
            d2 += 1.0;
        }
        if ratio < 1.25f64.powi(3) {
            d3 += 1.0;
        }
    }
    MetricsReport {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (mse / n).sqrt(),
        rmse_log: (mse_log / n).sqrt(),
        delta1: d1 / n,
        delta2: d2 / n,
        delta3: d3 / n,
        sample_count: pred.len(),
    }
}

/// Full evaluation: restrict to valid pixels with ground truth inside
/// `(min_depth, max_depth]`, median-scale the prediction, clamp it into the
/// caps, then compute the seven metrics.
pub fn evaluate<T: Scalar>(
    pred: &Array<T>,
    gt: &Array<T>,
    valid: &Array<T>,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let (p, g) = gather_valid(pred, gt, valid, |v| v > cfg.min_depth && v <= cfg.max_depth)?;
    if p.is_empty() {
        return Err(Error::EmptyValidSet("evaluation after depth caps".into()));
    }
    let mut ps = p.clone();
    let mut gs = g.clone();
    let mp = median(&mut ps);
    if mp == 0.0 {
        return Err(Error::InvalidInput("zero median prediction".into()));
    }
    let s = median(&mut gs) / mp;
    let scaled: Vec<f64> = p
        .iter()
        .map(|&v| (v * s).clamp(cfg.min_depth, cfg.max_depth))
        .collect();
    Ok(metrics_on(&scaled, &g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ones(shape: &[usize]) -> Array<f64> {
        Array::full(shape, 1.0)
    }

    #[test]
    fn median_scale_cancels_global_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = Array::<f64>::from_fn(&[1, 6, 6], |_| rng.random_range(2.0..30.0));
        for c in [0.1, 1.0, 10.0] {
            let pred = gt.map(|v| v * c);
            let scaled = median_scale(&pred, &gt, &ones(&[1, 6, 6])).unwrap();
            for (a, b) in scaled.iter().zip(gt.iter()) {
                assert!((a - b).abs() < 1e-9 * b.abs(), "c={c}");
            }
        }
    }

    #[test]
    fn median_scale_identity_when_equal() {
        let gt = Array::<f64>::from_fn(&[1, 4, 4], |i| 1.0 + i as f64);
        let s = median_scale_factor(&gt, &gt, &ones(&[1, 4, 4])).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn median_uses_lower_middle_for_even_sets() {
        // pred [1, 2, 100], gt [2, 4, 6]: medians 2 and 4
        let pred = Array::<f64>::new(&[1, 1, 3], vec![1.0, 2.0, 100.0]);
        let gt = Array::<f64>::new(&[1, 1, 3], vec![2.0, 4.0, 6.0]);
        let s = median_scale_factor(&pred, &gt, &ones(&[1, 1, 3])).unwrap();
        assert_eq!(s, 2.0);
        // even-size set: lower middle, not midpoint
        let pred4 = Array::<f64>::new(&[1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let gt4 = Array::<f64>::new(&[1, 1, 4], vec![10.0, 20.0, 30.0, 40.0]);
        let s4 = median_scale_factor(&pred4, &gt4, &ones(&[1, 1, 4])).unwrap();
        assert_eq!(s4, 10.0); // 20 / 2
    }

    #[test]
    fn median_scale_rejects_empty_valid_set() {
        let a = ones(&[1, 2, 2]);
        let z = Array::<f64>::zeros(&[1, 2, 2]);
        assert!(matches!(
            median_scale(&a, &a, &z),
            Err(Error::EmptyValidSet(_))
        ));
    }

    #[test]
    fn perfect_prediction_scores_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = Array::<f64>::from_fn(&[1, 8, 8], |_| rng.random_range(1.0..30.0));
        let r = evaluate(&gt, &gt, &ones(&[1, 8, 8]), &EvalConfig::default()).unwrap();
        assert_eq!(r.abs_rel, 0.0);
        assert_eq!(r.sq_rel, 0.0);
        assert_eq!(r.rmse, 0.0);
        assert_eq!(r.rmse_log, 0.0);
        assert_eq!((r.delta1, r.delta2, r.delta3), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_case_two_pixels() {
        // scaled pred [1, 4] against gt [2, 4]: the first pixel has ratio 2,
        // which fails all three delta thresholds (1.25^3 < 2)
        let r = metrics_on(&[1.0, 4.0], &[2.0, 4.0]);
        assert_eq!(r.abs_rel, 0.25);
        assert_eq!(r.sq_rel, 0.25);
        assert_eq!(r.rmse, 0.5f64.sqrt());
        assert_eq!(r.delta1, 0.5);
        assert_eq!(r.delta2, 0.5);
        assert_eq!(r.delta3, 0.5);
    }

    /// Independent scalar-loop implementation of the metric formulas.
    fn oracle(pred: &[f64], gt: &[f64]) -> MetricsReport {
        let n = pred.len();
        let mut sums = [0.0f64; 4];
        let mut deltas = [0usize; 3];
        for i in 0..n {
            let (d, g) = (pred[i], gt[i]);
            sums[0] += (g - d).abs() / g;
            sums[1] += (g - d) * (g - d) / g;
            sums[2] += (g - d) * (g - d);
            sums[3] += (g.ln() - d.ln()) * (g.ln() - d.ln());
            let ratio = if g / d > d / g { g / d } else { d / g };
            for (k, slot) in deltas.iter_mut().enumerate() {
                if ratio < 1.25f64.powi(k as i32 + 1) {
                    *slot += 1;
                }
            }
        }
        MetricsReport {
            abs_rel: sums[0] / n as f64,
            sq_rel: sums[1] / n as f64,
            rmse: (sums[2] / n as f64).sqrt(),
            rmse_log: (sums[3] / n as f64).sqrt(),
            delta1: deltas[0] as f64 / n as f64,
            delta2: deltas[1] as f64 / n as f64,
            delta3: deltas[2] as f64 / n as f64,
            sample_count: n,
        }
    }

    #[test]
    fn matches_scalar_oracle_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = 32 * 32;
            let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..45.0)).collect();
            let gt: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..45.0)).collect();
            let got = metrics_on(&pred, &gt);
            let want = oracle(&pred, &gt);
            assert!((got.abs_rel - want.abs_rel).abs() < 1e-6);
            assert!((got.sq_rel - want.sq_rel).abs() < 1e-6);
            assert!((got.rmse - want.rmse).abs() < 1e-6);
            assert!((got.rmse_log - want.rmse_log).abs() < 1e-6);
            assert_eq!(got.delta1, want.delta1);
            assert_eq!(got.delta2, want.delta2);
            assert_eq!(got.delta3, want.delta3);
        }
    }

    #[test]
    fn deltas_are_nested() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let pred = Array::<f64>::from_fn(&[1, 8, 8], |_| rng.random_range(0.5..39.0));
            let gt = Array::<f64>::from_fn(&[1, 8, 8], |_| rng.random_range(0.5..39.0));
            let r = evaluate(&pred, &gt, &ones(&[1, 8, 8]), &EvalConfig::default()).unwrap();
            assert!(r.delta1 <= r.delta2 && r.delta2 <= r.delta3 && r.delta3 <= 1.0);
            assert!(r.abs_rel >= 0.0 && r.sq_rel >= 0.0 && r.rmse >= 0.0 && r.rmse_log >= 0.0);
        }
    }

    #[test]
    fn scale_invariance_of_full_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = Array::<f64>::from_fn(&[1, 8, 8], |_| rng.random_range(2.0..30.0));
        let pred = gt.map(|v| v * rng.random_range(0.9..1.1));
        let base = evaluate(&pred, &gt, &ones(&[1, 8, 8]), &EvalConfig::default()).unwrap();
        for c in [0.1, 10.0] {
            let scaled = pred.map(|v| v * c);
            let r = evaluate(&scaled, &gt, &ones(&[1, 8, 8]), &EvalConfig::default()).unwrap();
            assert!((r.abs_rel - base.abs_rel).abs() < 1e-9);
            assert!((r.rmse - base.rmse).abs() < 1e-9);
        }
    }

    #[test]
    fn invariant_to_joint_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pred = Array::<f64>::from_fn(&[1, 4, 8], |_| rng.random_range(1.0..30.0));
        let gt = Array::<f64>::from_fn(&[1, 4, 8], |_| rng.random_range(1.0..30.0));
        let base = evaluate(&pred, &gt, &ones(&[1, 4, 8]), &EvalConfig::default()).unwrap();
        // reverse all three jointly
        let rev = |a: &Array<f64>| {
            let mut d = a.data().to_vec();
            d.reverse();
            Array::new(a.shape(), d)
        };
        let r = evaluate(&rev(&pred), &rev(&gt), &ones(&[1, 4, 8]), &EvalConfig::default())
            .unwrap();
        // summation order differs, so compare to rounding noise
        for (a, b) in [
            (base.abs_rel, r.abs_rel),
            (base.sq_rel, r.sq_rel),
            (base.rmse, r.rmse),
            (base.rmse_log, r.rmse_log),
            (base.delta1, r.delta1),
            (base.delta2, r.delta2),
            (base.delta3, r.delta3),
        ] {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn caps_filter_ground_truth() {
        let pred = Array::<f64>::new(&[1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let gt = Array::<f64>::new(&[1, 1, 4], vec![1.0, 2.0, 100.0, 0.0005]);
        let cfg = EvalConfig {
            min_depth: 1e-3,
            max_depth: 40.0,
        };
        let r = evaluate(&pred, &gt, &ones(&[1, 1, 4]), &cfg).unwrap();
        assert_eq!(r.sample_count, 2);
    }

    #[test]
    fn empty_after_caps_is_an_error() {
        let pred = ones(&[1, 1, 2]);
        let gt = Array::<f64>::new(&[1, 1, 2], vec![100.0, 200.0]);
        let cfg = EvalConfig {
            min_depth: 1e-3,
            max_depth: 40.0,
        };
        assert!(matches!(
            evaluate(&pred, &gt, &ones(&[1, 1, 2]), &cfg),
            Err(Error::EmptyValidSet(_))
        ));
    }

    #[test]
    fn report_serializes_to_text_and_json() {
        let r = metrics_on(&[1.0, 4.0], &[2.0, 4.0]);
        let text = r.to_text();
        assert!(text.contains("abs_rel 0.25"));
        assert!(text.contains("sample_count 2"));
        let json = serde_json::to_string(&r).unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn weighted_average_weights_by_sample_count() {
        let a = metrics_on(&[1.0], &[2.0]); // abs_rel 0.5
        let b = metrics_on(&[4.0, 4.0, 4.0], &[4.0, 4.0, 4.0]); // abs_rel 0
        let avg = MetricsReport::weighted_average(&[a, b]).unwrap();
        assert_eq!(avg.sample_count, 4);
        assert!((avg.abs_rel - 0.125).abs() < 1e-12);
    }
}
