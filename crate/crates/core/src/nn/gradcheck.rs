//! Central finite-difference check of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::params::{Grads, ParamStore};
use crate::error::Result;

#[derive(Clone, Debug, Serialize)]
pub struct GradSample {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub samples: Vec<GradSample>,
}

impl GradCheckReport {
    /// Largest relative error per tensor, in parameter order.
    pub fn per_tensor(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for s in &self.samples {
            match out.iter_mut().find(|(n, _)| *n == s.tensor) {
                Some(e) => e.1 = e.1.max(s.rel_error),
                None => out.push((s.tensor.clone(), s.rel_error)),
            }
        }
        out
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare `loss_fn`'s analytic gradient with central differences at
/// `sample_count` scalar parameters. Tensors are visited round-robin; within a
/// tensor, most samples are drawn from entries with a nonzero analytic
/// gradient so sparse embedding tables are still exercised.
pub fn gradcheck<F>(mut loss_fn: F, params: &ParamStore, sample_count: usize, epsilon: f64, seed: u64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(f64, Grads)>,
{
    let (_, grads) = loss_fn(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut samples = Vec::with_capacity(sample_count);
    let n_tensors = params.len();
    for s in 0..sample_count {
        let ti = s % n_tensors;
        let g = &grads.data[ti];
        let nonzero: Vec<usize> = (0..g.len()).filter(|&i| g[i] != 0.0).collect();
        let index = if !nonzero.is_empty() && rng.gen::<f64>() < 0.75 {
            nonzero[rng.gen_range(0..nonzero.len())]
        } else {
            rng.gen_range(0..g.len())
        };
        let orig = work.tensors()[ti].data[index];
        work.tensors_mut()[ti].data[index] = orig + epsilon;
        let (plus, _) = loss_fn(&work)?;
        work.tensors_mut()[ti].data[index] = orig - epsilon;
        let (minus, _) = loss_fn(&work)?;
        work.tensors_mut()[ti].data[index] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let analytic = g[index];
        samples.push(GradSample {
            tensor: params.tensors()[ti].name.clone(),
            index,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    let max_rel_error = samples.iter().map(|s| s.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, samples })
}
