//! Brightness-consistent contrast enhancement for the loss path.
//!
//! A single monotone brightness mapping is computed from a whole frame
//! snippet and applied identically to every frame in it. Equal input
//! brightness therefore stays equal across frames, which is what the
//! photometric loss needs; per-frame equalization would destroy that
//! correspondence. The mapping itself is contrast-limited histogram
//! equalization: clip the frequency histogram at `sigma`, spread the excess
//! evenly, remap through the normalized cdf.
//!
//! Enhancement only ever feeds the loss; network inputs stay raw.

use crate::array::{Array, Scalar};
use crate::error::{Error, Result};

pub const DEFAULT_LEVELS: usize = 256;

/// Normalized brightness frequency histogram over `L` levels.
#[derive(Debug, Clone, PartialEq)]
pub struct BrightnessHistogram {
    bins: Vec<f64>,
}

impl BrightnessHistogram {
    pub fn from_bins(bins: Vec<f64>) -> Result<Self> {
        let sum: f64 = bins.iter().sum();
        if bins.is_empty() || bins.iter().any(|&b| b < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "histogram must be normalized nonnegative frequencies (sum {sum})"
            )));
        }
        Ok(BrightnessHistogram { bins })
    }

    pub fn levels(&self) -> usize {
        self.bins.len()
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }
}

/// Monotone table mapping brightness levels to brightness levels.
#[derive(Debug, Clone, PartialEq)]
pub struct BrightnessLut {
    table: Vec<u16>,
}

impl BrightnessLut {
    pub fn identity(levels: usize) -> Self {
        BrightnessLut {
            table: (0..levels as u16).collect(),
        }
    }

    pub fn levels(&self) -> usize {
        self.table.len()
    }

    pub fn table(&self) -> &[u16] {
        &self.table
    }

    pub fn map_level(&self, level: usize) -> usize {
        self.table[level] as usize
    }

    pub fn is_monotone(&self) -> bool {
        self.table.windows(2).all(|w| w[0] <= w[1])
    }
}

#[inline]
fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Quantize a unit-interval value to a level index.
#[inline]
pub fn quantize(v: f64, levels: usize) -> usize {
    let l = (levels - 1) as f64;
    (round_half_up(v.clamp(0.0, 1.0) * l) as usize).min(levels - 1)
}

/// Pooled brightness histogram of a frame snippet, all frames and channels
/// together.
pub fn snippet_histogram<T: Scalar>(
    frames: &[&Array<T>],
    levels: usize,
) -> Result<BrightnessHistogram> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("snippet_histogram: no frames".into()));
    }
    if levels < 2 {
        return Err(Error::InvalidInput("snippet_histogram: need >= 2 levels".into()));
    }
    let mut counts = vec![0u64; levels];
    let mut total = 0u64;
    for frame in frames {
        for v in frame.iter() {
            counts[quantize(v.to_f64(), levels)] += 1;
            total += 1;
        }
    }
    let bins = counts.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(BrightnessHistogram { bins })
}

/// Clip frequencies at `sigma` and spread the excess evenly over all levels.
/// Single pass; spread mass may push bins above `sigma` again, which is left
/// as is.
pub fn clip_redistribute(hist: &BrightnessHistogram, sigma: f64) -> Result<BrightnessHistogram> {
    if sigma <= 0.0 {
        return Err(Error::InvalidInput(format!("sigma {sigma} must be positive")));
    }
    let l = hist.levels() as f64;
    let excess: f64 = hist.bins.iter().map(|&b| (b - sigma).max(0.0)).sum();
    let fill = excess / l;
    let bins = hist.bins.iter().map(|&b| b.min(sigma) + fill).collect();
    Ok(BrightnessHistogram { bins })
}

/// Brightness mapping from the cumulative distribution of a (possibly
/// clipped) histogram. Degenerate distributions map to the identity.
pub fn brightness_map(hist: &BrightnessHistogram) -> BrightnessLut {
    let levels = hist.levels();
    let mut cdf = Vec::with_capacity(levels);
    let mut acc = 0.0;
    for &b in &hist.bins {
        acc += b;
        cdf.push(acc);
    }
    let cdf_max = cdf[levels - 1];
    let cdf_min = hist
        .bins
        .iter()
        .position(|&b| b > 0.0)
        .map(|i| cdf[i])
        .unwrap_or(cdf_max);
    let span = cdf_max - cdf_min;
    if span < 1e-12 {
        return BrightnessLut::identity(levels);
    }
    let lmax = (levels - 1) as f64;
    let table = cdf
        .iter()
        .map(|&c| {
            let v = round_half_up((c - cdf_min) / span * lmax);
            v.clamp(0.0, lmax) as u16
        })
        .collect();
    BrightnessLut { table }
}

/// Compute the snippet-shared mapping: pooled histogram, clip/redistribute,
/// cdf remap.
pub fn snippet_lut<T: Scalar>(frames: &[&Array<T>], sigma: f64, levels: usize) -> Result<BrightnessLut> {
    let hist = snippet_histogram(frames, levels)?;
    let clipped = clip_redistribute(&hist, sigma)?;
    Ok(brightness_map(&clipped))
}

/// Map one frame through a brightness table: quantize, remap, dequantize.
pub fn apply_lut<T: Scalar>(frame: &Array<T>, lut: &BrightnessLut) -> Array<T> {
    let levels = lut.levels();
    let scale = 1.0 / (levels - 1) as f64;
    frame.map(|v| T::from_f64(lut.map_level(quantize(v.to_f64(), levels)) as f64 * scale))
}

/// Enhance a whole snippet through one shared mapping computed from the
/// joint histogram of all its frames.
pub fn enhance_snippet<T: Scalar>(frames: &[&Array<T>], sigma: f64) -> Result<Vec<Array<T>>> {
    let lut = snippet_lut(frames, sigma, DEFAULT_LEVELS)?;
    Ok(frames.iter().map(|f| apply_lut(f, &lut)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(shape: &[usize], seed: u64) -> Array<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_fn(shape, |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn constant_half_image_masses_bin_128() {
        let f = Array::<f64>::full(&[1, 4, 4], 0.5);
        let h = snippet_histogram(&[&f], 256).unwrap();
        assert_eq!(h.bins()[128], 1.0);
        assert_eq!(h.bins().iter().filter(|&&b| b > 0.0).count(), 1);
    }

    #[test]
    fn black_and_white_frames_split_mass() {
        let black = Array::<f64>::zeros(&[1, 3, 3]);
        let white = Array::<f64>::full(&[1, 3, 3], 1.0);
        let h = snippet_histogram(&[&black, &white], 256).unwrap();
        assert_eq!(h.bins()[0], 0.5);
        assert_eq!(h.bins()[255], 0.5);
    }

    #[test]
    fn histogram_matches_counting_oracle() {
        let f = random_frame(&[3, 8, 8], 1);
        let h = snippet_histogram(&[&f], 256).unwrap();
        let mut counts = [0usize; 256];
        for &v in f.iter() {
            let idx = ((v * 255.0) + 0.5).floor() as usize;
            counts[idx] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            assert_eq!(h.bins()[i], c as f64 / f.len() as f64, "bin {i}");
        }
    }

    #[test]
    fn empty_snippet_is_rejected() {
        assert!(snippet_histogram::<f64>(&[], 256).is_err());
    }

    #[test]
    fn clip_noop_when_sigma_above_max() {
        let f = random_frame(&[1, 6, 6], 2);
        let h = snippet_histogram(&[&f], 256).unwrap();
        let c = clip_redistribute(&h, 1.1).unwrap();
        assert_eq!(h, c);
    }

    #[test]
    fn clip_two_bin_arithmetic() {
        let mut bins = vec![0.0; 256];
        bins[10] = 0.9;
        bins[200] = 0.1;
        let h = BrightnessHistogram::from_bins(bins).unwrap();
        let c = clip_redistribute(&h, 0.5).unwrap();
        let fill = 0.4 / 256.0;
        assert!((c.bins()[10] - (0.5 + fill)).abs() < 1e-15);
        assert!((c.bins()[200] - (0.1 + fill)).abs() < 1e-15);
        assert!((c.bins()[7] - fill).abs() < 1e-15);
        let sum: f64 = c.bins().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn clip_uniform_histogram_unchanged() {
        let h = BrightnessHistogram::from_bins(vec![1.0 / 256.0; 256]).unwrap();
        let c = clip_redistribute(&h, 1.0 / 256.0).unwrap();
        for (a, b) in h.bins().iter().zip(c.bins()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn mass_preserved_by_clipping() {
        for seed in 0..10 {
            let f = random_frame(&[3, 7, 7], seed);
            let h = snippet_histogram(&[&f], 256).unwrap();
            for sigma in [0.001, 0.004, 0.008, 0.05] {
                let c = clip_redistribute(&h, sigma).unwrap();
                let sum: f64 = c.bins().iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn two_level_map_spans_full_range() {
        let mut bins = vec![0.0; 256];
        bins[40] = 0.5;
        bins[90] = 0.5;
        let lut = brightness_map(&BrightnessHistogram::from_bins(bins).unwrap());
        assert_eq!(lut.map_level(40), 0);
        assert_eq!(lut.map_level(90), 255);
    }

    #[test]
    fn uniform_histogram_maps_to_identity() {
        let h = BrightnessHistogram::from_bins(vec![1.0 / 256.0; 256]).unwrap();
        let lut = brightness_map(&h);
        for b in 0..256 {
            assert!((lut.map_level(b) as i64 - b as i64).abs() <= 1, "level {b}");
        }
    }

    #[test]
    fn degenerate_histogram_maps_to_identity() {
        let mut bins = vec![0.0; 256];
        bins[77] = 1.0;
        let lut = brightness_map(&BrightnessHistogram::from_bins(bins).unwrap());
        assert_eq!(lut.table(), BrightnessLut::identity(256).table());
    }

    #[test]
    fn lut_is_monotone_and_endpoints_pinned() {
        for seed in 0..20 {
            let f = random_frame(&[3, 9, 9], seed + 100);
            let hist = snippet_histogram(&[&f], 256).unwrap();
            let clipped = clip_redistribute(&hist, 0.008).unwrap();
            let lut = brightness_map(&clipped);
            assert!(lut.is_monotone());
            let first_mass = clipped.bins().iter().position(|&b| b > 0.0).unwrap();
            assert_eq!(lut.map_level(first_mass), 0);
            assert_eq!(lut.map_level(255), 255);
        }
    }

    #[test]
    fn shared_value_maps_identically_across_frames() {
        let mut a = random_frame(&[1, 4, 4], 3);
        let mut b = random_frame(&[1, 4, 4], 4);
        a.data_mut()[5] = 0.37;
        b.data_mut()[11] = 0.37;
        let out = enhance_snippet(&[&a, &b], 0.01).unwrap();
        assert_eq!(out[0].data()[5], out[1].data()[11]);
    }

    #[test]
    fn equalized_snippet_is_nearly_fixed_point() {
        // hit every level exactly once: already uniform
        let f = Array::<f64>::from_fn(&[1, 16, 16], |i| i as f64 / 255.0);
        let out = enhance_snippet(&[&f], 1.0).unwrap();
        for (o, i) in out[0].iter().zip(f.iter()) {
            assert!((o - i).abs() <= 1.0 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn dark_snippet_gets_brighter() {
        for seed in 0..10 {
            let f = random_frame(&[3, 12, 12], seed + 200).map(|v| v.powf(2.5) * 0.6);
            let out = enhance_snippet(&[&f], 0.008).unwrap();
            assert!(out[0].mean() > f.mean(), "seed {seed}");
        }
    }

    #[test]
    fn huge_sigma_reproduces_plain_equalization() {
        let f = random_frame(&[3, 10, 10], 5);
        let with_clip = snippet_lut(&[&f], f64::MAX, 256).unwrap();
        // plain equalization: cdf remap with no clipping at all
        let plain = brightness_map(&snippet_histogram(&[&f], 256).unwrap());
        assert_eq!(with_clip.table(), plain.table());
    }

    #[test]
    fn enhancement_is_order_preserving() {
        let f = random_frame(&[1, 8, 8], 6);
        let out = &enhance_snippet(&[&f], 0.008).unwrap()[0];
        let mut pairs: Vec<(f64, f64)> = f.iter().copied().zip(out.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            assert!(w[0].1 <= w[1].1);
        }
    }
}
