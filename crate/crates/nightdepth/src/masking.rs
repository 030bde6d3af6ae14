//! Pixel masking for the photometric loss.
//!
//! Two masks multiply together: the auto-mask keeps pixels where the
//! reconstruction beats the unwarped source, and the statistics mask drops
//! pixels whose target/source difference falls below a running percentile —
//! the textureless pixels (dark patches, saturated spots) whose photometric
//! signal is noise.
//!
//! The percentile comes from a histogram of difference values maintained by
//! an exponentially weighted moving average across training iterations: the
//! running distribution is global and stable where any single frame pair is
//! not. Masks are constants in backward; nothing differentiates through
//! them.

use crate::array::{Array, Scalar};
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const STATS_BINS: usize = 256;

/// Running histogram of per-pixel difference values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EwmaHistogramState {
    bins: Vec<f64>,
    beta: f64,
    updates: u64,
}

impl EwmaHistogramState {
    pub fn new(beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidInput(format!("beta {beta} not in [0, 1)")));
        }
        Ok(EwmaHistogramState {
            bins: vec![0.0; STATS_BINS],
            beta,
            updates: 0,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn initialized(&self) -> bool {
        self.updates > 0
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    /// Fold one difference map into the running histogram. The first update
    /// adopts the map's histogram outright.
    pub fn update(&mut self, d: &Array<impl Scalar>) {
        let mut hist = vec![0.0f64; STATS_BINS];
        let n = d.len() as f64;
        for v in d.iter() {
            hist[bin_index(v.to_f64())] += 1.0;
        }
        for h in &mut hist {
            *h /= n;
        }
        if self.updates == 0 {
            self.bins = hist;
        } else {
            for (b, h) in self.bins.iter_mut().zip(hist.iter()) {
                *b = self.beta * *b + (1.0 - self.beta) * h;
            }
        }
        self.updates += 1;
    }

    /// Value at the given percentile of the running distribution: the
    /// smallest bin center whose cumulative mass reaches `epsilon`/100.
    /// `epsilon` 0 returns the smallest center carrying any mass.
    pub fn percentile(&self, epsilon: f64) -> Result<f64> {
        if !self.initialized() {
            return Err(Error::InvalidInput("statistics state has no updates yet".into()));
        }
        if !(0.0..=100.0).contains(&epsilon) {
            return Err(Error::InvalidInput(format!("epsilon {epsilon} not in [0, 100]")));
        }
        if epsilon == 0.0 {
            let idx = self.bins.iter().position(|&b| b > 0.0).unwrap_or(0);
            return Ok(bin_center(idx));
        }
        let target = epsilon / 100.0 - 1e-12;
        let mut acc = 0.0;
        for (i, &b) in self.bins.iter().enumerate() {
            acc += b;
            if acc >= target {
                return Ok(bin_center(i));
            }
        }
        Ok(bin_center(STATS_BINS - 1))
    }

    /// Serialize as raw little-endian floats: 256 bins, beta, update counter.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        let mut buf = Vec::with_capacity(STATS_BINS * 8 + 16);
        for &b in &self.bins {
            buf.extend_from_slice(&b.to_le_bytes());
        }
        buf.extend_from_slice(&self.beta.to_le_bytes());
        buf.extend_from_slice(&self.updates.to_le_bytes());
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let expect = STATS_BINS * 8 + 16;
        if buf.len() != expect {
            return Err(Error::MalformedFile {
                path: path.display().to_string(),
                reason: format!("expected {expect} bytes, found {}", buf.len()),
            });
        }
        let mut bins = Vec::with_capacity(STATS_BINS);
        for i in 0..STATS_BINS {
            bins.push(f64::from_le_bytes(buf[i * 8..i * 8 + 8].try_into().unwrap()));
        }
        let beta = f64::from_le_bytes(buf[STATS_BINS * 8..STATS_BINS * 8 + 8].try_into().unwrap());
        let updates =
            u64::from_le_bytes(buf[STATS_BINS * 8 + 8..STATS_BINS * 8 + 16].try_into().unwrap());
        Ok(EwmaHistogramState { bins, beta, updates })
    }
}

#[inline]
fn bin_index(v: f64) -> usize {
    ((v.clamp(0.0, 1.0) * (STATS_BINS - 1) as f64) + 0.5).floor() as usize
}

#[inline]
pub fn bin_center(idx: usize) -> f64 {
    idx as f64 / (STATS_BINS - 1) as f64
}

fn check_same<T: Scalar>(a: &Array<T>, b: &Array<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(what, a.shape(), b.shape()));
    }
    Ok(())
}

/// Keep pixels whose reconstruction error beats the identity (unwarped
/// source) error, strictly. Ties mask out.
pub fn auto_mask<T: Scalar>(pe_recon: &Array<T>, pe_identity: &Array<T>) -> Result<Array<T>> {
    check_same(pe_recon, pe_identity, "auto_mask")?;
    Ok(Array::from_fn(pe_recon.shape(), |i| {
        if pe_recon.data()[i] < pe_identity.data()[i] {
            T::ONE
        } else {
            T::ZERO
        }
    }))
}

/// Per-pixel channel-mean absolute difference of two frames, in `[0, 1]`.
pub fn pixel_difference<T: Scalar>(target: &Array<T>, source: &Array<T>) -> Result<Array<T>> {
    check_same(target, source, "pixel_difference")?;
    let (c, h, w) = crate::geometry::image_dims(target)?;
    let n = h * w;
    let inv = T::from_f64(1.0 / c as f64);
    let mut out = Array::zeros(&[1, h, w]);
    for i in 0..n {
        let mut acc = T::ZERO;
        for ch in 0..c {
            acc = acc + (target.data()[ch * n + i] - source.data()[ch * n + i]).abs();
        }
        out.data_mut()[i] = acc * inv;
    }
    Ok(out)
}

/// Keep pixels whose difference exceeds the threshold, strictly.
pub fn stats_mask<T: Scalar>(d: &Array<T>, threshold: f64) -> Result<Array<T>> {
    if !threshold.is_finite() {
        return Err(Error::NonFinite("stats_mask threshold".into()));
    }
    let t = T::from_f64(threshold);
    Ok(d.map(|v| if v > t { T::ONE } else { T::ZERO }))
}

/// Elementwise product of two masks.
pub fn combine<T: Scalar>(a: &Array<T>, b: &Array<T>) -> Result<Array<T>> {
    check_same(a, b, "combine")?;
    Ok(Array::from_fn(a.shape(), |i| a.data()[i] * b.data()[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(shape: &[usize], seed: u64) -> Array<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_fn(shape, |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn auto_mask_trivial_cases() {
        let lo = Array::<f64>::zeros(&[1, 3, 3]);
        let hi = Array::<f64>::full(&[1, 3, 3], 0.1);
        assert!(auto_mask(&lo, &hi).unwrap().iter().all(|&v| v == 1.0));
        // ties mask out: strict inequality
        assert!(auto_mask(&hi, &hi).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn auto_mask_matches_loop_oracle() {
        let a = random_map(&[1, 6, 6], 1);
        let b = random_map(&[1, 6, 6], 2);
        let m = auto_mask(&a, &b).unwrap();
        for i in 0..a.len() {
            let want = if a.data()[i] < b.data()[i] { 1.0 } else { 0.0 };
            assert_eq!(m.data()[i], want);
        }
    }

    #[test]
    fn pixel_difference_trivials_and_oracle() {
        let zero = Array::<f64>::zeros(&[3, 4, 4]);
        let one = Array::<f64>::full(&[3, 4, 4], 1.0);
        assert!(pixel_difference(&zero, &zero).unwrap().iter().all(|&v| v == 0.0));
        assert!(pixel_difference(&one, &zero).unwrap().iter().all(|&v| v == 1.0));
        let a = random_map(&[3, 5, 5], 3);
        let b = random_map(&[3, 5, 5], 4);
        let d = pixel_difference(&a, &b).unwrap();
        for i in 0..25 {
            let mut acc = 0.0;
            for c in 0..3 {
                acc += (a.data()[c * 25 + i] - b.data()[c * 25 + i]).abs();
            }
            assert!((d.data()[i] - acc / 3.0).abs() < 1e-15);
            assert!((0.0..=1.0).contains(&d.data()[i]));
        }
    }

    #[test]
    fn first_update_adopts_histogram() {
        let mut state = EwmaHistogramState::new(0.98).unwrap();
        assert!(!state.initialized());
        let d = random_map(&[1, 8, 8], 5);
        state.update(&d);
        let mut hist = vec![0.0; STATS_BINS];
        for &v in d.iter() {
            hist[bin_index(v)] += 1.0 / 64.0;
        }
        for (a, b) in state.bins().iter().zip(hist.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn constant_stream_contracts_geometrically() {
        let mut state = EwmaHistogramState::new(0.9).unwrap();
        let warmup = random_map(&[1, 8, 8], 6);
        state.update(&warmup);
        let d = random_map(&[1, 8, 8], 7);
        let mut target = EwmaHistogramState::new(0.9).unwrap();
        target.update(&d);
        for k in 1..=20usize {
            state.update(&d);
            let l1: f64 = state
                .bins()
                .iter()
                .zip(target.bins())
                .map(|(a, b)| (a - b).abs())
                .sum();
            assert!(l1 <= 0.9f64.powi(k as i32) * 2.0 + 1e-12, "k={k} l1={l1}");
        }
    }

    #[test]
    fn alternating_stream_matches_recurrence_oracle() {
        let beta = 0.8;
        let d1 = random_map(&[1, 8, 8], 8);
        let d2 = random_map(&[1, 8, 8], 9);
        let mut state = EwmaHistogramState::new(beta).unwrap();
        // scalar recurrence oracle per bin
        let hist_of = |d: &Array<f64>| {
            let mut h = vec![0.0; STATS_BINS];
            for &v in d.iter() {
                h[bin_index(v)] += 1.0 / d.len() as f64;
            }
            h
        };
        let (h1, h2) = (hist_of(&d1), hist_of(&d2));
        let mut oracle: Vec<f64> = h1.clone();
        state.update(&d1);
        for step in 0..30 {
            let h = if step % 2 == 0 { (&d2, &h2) } else { (&d1, &h1) };
            state.update(h.0);
            for (o, &hv) in oracle.iter_mut().zip(h.1.iter()) {
                *o = beta * *o + (1.0 - beta) * hv;
            }
            for (a, b) in state.bins().iter().zip(oracle.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn state_remains_probability_histogram() {
        let mut state = EwmaHistogramState::new(0.98).unwrap();
        for seed in 0..50 {
            state.update(&random_map(&[1, 6, 6], seed));
            let sum: f64 = state.bins().iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(state.bins().iter().all(|&b| b >= 0.0));
        }
    }

    #[test]
    fn percentile_uniform_and_point_mass() {
        let mut state = EwmaHistogramState::new(0.9).unwrap();
        // uniform: hit every level once
        let d = Array::<f64>::from_fn(&[1, 16, 16], |i| i as f64 / 255.0);
        state.update(&d);
        assert_eq!(state.percentile(50.0).unwrap(), bin_center(127));
        // point mass
        let mut point = EwmaHistogramState::new(0.9).unwrap();
        point.update(&Array::<f64>::full(&[1, 4, 4], 0.3));
        let c = bin_center(bin_index(0.3));
        for eps in [0.0, 10.0, 50.0, 100.0] {
            assert_eq!(point.percentile(eps).unwrap(), c);
        }
        // epsilon 100: largest center with mass
        assert_eq!(state.percentile(100.0).unwrap(), bin_center(255));
    }

    #[test]
    fn percentile_requires_initialization() {
        let state = EwmaHistogramState::new(0.98).unwrap();
        assert!(state.percentile(10.0).is_err());
    }

    #[test]
    fn stats_mask_threshold_edges() {
        let d = random_map(&[1, 5, 5], 10);
        let min = d.iter().cloned().fold(f64::MAX, f64::min);
        let max = d.iter().cloned().fold(f64::MIN, f64::max);
        assert!(stats_mask(&d, min - 0.01).unwrap().iter().all(|&v| v == 1.0));
        // strict: threshold at the max masks everything out
        assert!(stats_mask(&d, max).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masked_out_fraction_tracks_percentile() {
        // stationary uniform stream; after convergence the masked-out share
        // approaches epsilon percent
        let mut state = EwmaHistogramState::new(0.98).unwrap();
        for seed in 0..220 {
            state.update(&random_map(&[1, 32, 32], 1000 + seed));
        }
        for eps in [10.0, 20.0, 50.0] {
            let t = state.percentile(eps).unwrap();
            let probe = random_map(&[1, 64, 64], 5000);
            let m = stats_mask(&probe, t).unwrap();
            let masked_out = 1.0 - m.mean();
            assert!(
                (masked_out - eps / 100.0).abs() <= 0.02,
                "eps {eps}: fraction {masked_out}"
            );
        }
    }

    #[test]
    fn monotone_in_epsilon() {
        let mut state = EwmaHistogramState::new(0.95).unwrap();
        for seed in 0..20 {
            state.update(&random_map(&[1, 16, 16], 300 + seed));
        }
        let d = random_map(&[1, 16, 16], 400);
        let mut prev_kept = f64::MAX;
        for eps in [5.0, 10.0, 20.0, 40.0, 80.0] {
            let m = stats_mask(&d, state.percentile(eps).unwrap()).unwrap();
            let kept: f64 = m.iter().sum();
            assert!(kept <= prev_kept, "eps {eps}");
            prev_kept = kept;
        }
    }

    #[test]
    fn combine_is_elementwise_and() {
        let a = random_map(&[1, 6, 6], 11).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
        let b = random_map(&[1, 6, 6], 12).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
        let ones = Array::<f64>::full(&[1, 6, 6], 1.0);
        let zeros = Array::<f64>::zeros(&[1, 6, 6]);
        assert_eq!(combine(&a, &ones).unwrap().data(), a.data());
        assert!(combine(&a, &zeros).unwrap().iter().all(|&v| v == 0.0));
        let m = combine(&a, &b).unwrap();
        for i in 0..36 {
            assert_eq!(m.data()[i], a.data()[i].min(b.data()[i]));
            assert!(m.data()[i] <= a.data()[i] && m.data()[i] <= b.data()[i]);
        }
        // idempotent
        assert_eq!(combine(&m, &m).unwrap().data(), m.data());
    }

    #[test]
    fn state_roundtrips_through_disk() {
        let mut state = EwmaHistogramState::new(0.98).unwrap();
        for seed in 0..7 {
            state.update(&random_map(&[1, 8, 8], 600 + seed));
        }
        let dir = std::env::temp_dir().join("nightdepth_stats_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("state.bin");
        state.save(&path).unwrap();
        let loaded = EwmaHistogramState::load(&path).unwrap();
        assert_eq!(state, loaded);
        std::fs::remove_file(&path).ok();
    }
}
