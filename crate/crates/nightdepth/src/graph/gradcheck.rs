//! Central-finite-difference validation of the analytic backward rules.
//!
//! Run this in `f64`: at step 1e-4 the difference quotient carries about
//! 1e-8 of truncation error, far below the 1e-4 acceptance threshold, while
//! `f32` rounding would drown the comparison entirely.

use super::{Graph, NodeId};
use crate::array::{Array, Scalar};
use crate::error::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max relative error per graph input, in input declaration order.
    pub per_input: Vec<f64>,
    /// Number of coordinates sampled per input.
    pub samples: Vec<usize>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_input.iter().copied().fold(0.0, f64::max)
    }
}

/// Compare analytic gradients of `output` against central differences.
///
/// A fixed random seed array plays the role of the output adjoint, so
/// non-scalar outputs reduce to the scalar `<seed, f(x)>`. For inputs larger
/// than `max_samples` coordinates, a seeded random subset is probed.
/// `wrt` selects input indices to probe (`None` probes all); inputs that
/// reach the output only through forward-only nodes must be excluded by the
/// caller, since no analytic gradient is defined for them.
pub fn grad_check<T: Scalar>(
    graph: &Graph<T>,
    inputs: &[&Array<T>],
    output: NodeId,
    step: f64,
    max_samples: usize,
    wrt: Option<&[usize]>,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eval = graph.evaluation();
    graph.forward(inputs, &mut eval)?;

    let out_len = eval.value(output).len();
    let adj = Array::<T>::from_fn(graph.shape(output), |_| {
        T::from_f64(rng.random_range(0.5..1.5))
    });
    debug_assert_eq!(adj.len(), out_len);

    let analytic = graph.backward(&eval, output, &adj)?;

    let indices: Vec<usize> = match wrt {
        Some(list) => list.to_vec(),
        None => (0..inputs.len()).collect(),
    };

    let mut work: Vec<Array<T>> = inputs.iter().map(|a| (*a).clone()).collect();
    let mut per_input = vec![0.0f64; inputs.len()];
    let mut samples = vec![0usize; inputs.len()];

    for &i in &indices {
        let n = work[i].len();
        let coords: Vec<usize> = if n <= max_samples {
            (0..n).collect()
        } else {
            // distinct, order-stable sample
            let mut picked = std::collections::BTreeSet::new();
            while picked.len() < max_samples {
                picked.insert(rng.random_range(0..n));
            }
            picked.into_iter().collect()
        };
        samples[i] = coords.len();

        for &j in &coords {
            let orig = work[i].data()[j];
            let h = T::from_f64(step);

            work[i].data_mut()[j] = orig + h;
            let plus = weighted_output(graph, &work, output, &adj, &mut eval)?;
            work[i].data_mut()[j] = orig - h;
            let minus = weighted_output(graph, &work, output, &adj, &mut eval)?;
            work[i].data_mut()[j] = orig;

            let fd = (plus - minus) / (2.0 * step);
            let an = analytic[i].data()[j].to_f64();
            let rel = (an - fd).abs() / an.abs().max(1e-8);
            if rel > per_input[i] {
                per_input[i] = rel;
            }
        }
    }

    Ok(GradCheckReport { per_input, samples })
}

fn weighted_output<T: Scalar>(
    graph: &Graph<T>,
    work: &[Array<T>],
    output: NodeId,
    adj: &Array<T>,
    eval: &mut super::Evaluation<T>,
) -> Result<f64> {
    let refs: Vec<&Array<T>> = work.iter().collect();
    graph.forward(&refs, eval)?;
    let out = eval.value(output);
    let mut acc = 0.0;
    for (v, w) in out.iter().zip(adj.iter()) {
        acc += v.to_f64() * w.to_f64();
    }
    Ok(acc)
}
