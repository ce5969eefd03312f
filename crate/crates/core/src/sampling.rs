//! Seeded state sampling and residual sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::inf_norm;
use crate::system::State;
use crate::Vector;

/// Default number of sampled states per sweep.
pub const DEFAULT_SAMPLES: usize = 200;

/// Axis-aligned box over `(q, p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeBox {
    pub q_lo: Vec<f64>,
    pub q_hi: Vec<f64>,
    pub p_lo: Vec<f64>,
    pub p_hi: Vec<f64>,
}

impl ProbeBox {
    /// `|qᵢ| ≤ q_bounds[i]`, `|pᵢ| ≤ p_bounds[i]`.
    pub fn symmetric(q_bounds: &[f64], p_bounds: &[f64]) -> Self {
        ProbeBox {
            q_lo: q_bounds.iter().map(|b| -b).collect(),
            q_hi: q_bounds.to_vec(),
            p_lo: p_bounds.iter().map(|b| -b).collect(),
            p_hi: p_bounds.to_vec(),
        }
    }

    pub fn dof(&self) -> usize {
        self.q_lo.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dof();
        if self.q_hi.len() != n || self.p_lo.len() != n || self.p_hi.len() != n {
            return Err(Error::Dimension("probe box bounds have unequal lengths".into()));
        }
        let ordered = |lo: &[f64], hi: &[f64]| lo.iter().zip(hi).all(|(a, b)| a <= b && a.is_finite() && b.is_finite());
        if !ordered(&self.q_lo, &self.q_hi) || !ordered(&self.p_lo, &self.p_hi) {
            return Err(Error::InvalidArgument("probe box has lo > hi or non-finite bounds".into()));
        }
        Ok(())
    }

    fn draw(rng: &mut ChaCha8Rng, lo: &[f64], hi: &[f64]) -> Vector {
        Vector::from_iterator(
            lo.len(),
            lo.iter().zip(hi).map(|(a, b)| if a == b { *a } else { rng.random_range(*a..*b) }),
        )
    }

    /// `count` states drawn uniformly with a ChaCha8 stream seeded by `seed`.
    pub fn sample_states(&self, count: usize, seed: u64) -> Result<Vec<State>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..count)
            .map(|_| {
                let q = Self::draw(&mut rng, &self.q_lo, &self.q_hi);
                let p = Self::draw(&mut rng, &self.p_lo, &self.p_hi);
                State::new(q, p)
            })
            .collect())
    }

    /// Configurations only.
    pub fn sample_configurations(&self, count: usize, seed: u64) -> Result<Vec<Vector>> {
        Ok(self
            .sample_states(count, seed)?
            .into_iter()
            .map(|x| x.q)
            .collect())
    }
}

/// Result of evaluating a residual map over sampled states.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub max_abs: f64,
    pub per_sample: Vec<(State, Vector)>,
    pub samples: usize,
    pub seed: u64,
}

impl ResidualReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_abs <= tol
    }

    /// State with the largest residual, if any.
    pub fn worst(&self) -> Option<&(State, Vector)> {
        self.per_sample
            .iter()
            .max_by(|a, b| inf_norm(&a.1).total_cmp(&inf_norm(&b.1)))
    }
}

/// Evaluates `residual` on `count` seeded samples of `bx` in parallel; the
/// reduction is a max, so the result does not depend on scheduling.
pub fn residual_report<F>(bx: &ProbeBox, count: usize, seed: u64, residual: F) -> Result<ResidualReport>
where
    F: Fn(&State) -> Result<Vector> + Sync,
{
    let states = bx.sample_states(count, seed)?;
    residual_report_on(states, seed, residual)
}

/// As [`residual_report`] on an explicit list of states.
pub fn residual_report_on<F>(states: Vec<State>, seed: u64, residual: F) -> Result<ResidualReport>
where
    F: Fn(&State) -> Result<Vector> + Sync,
{
    let per_sample: Vec<(State, Vector)> = states
        .into_par_iter()
        .map(|x| residual(&x).map(|r| (x, r)))
        .collect::<Result<_>>()?;
    let max_abs = per_sample.iter().map(|(_, r)| inf_norm(r)).fold(0.0, f64::max);
    Ok(ResidualReport {
        max_abs,
        samples: per_sample.len(),
        per_sample,
        seed,
    })
}

/// Scalar convenience wrapper: the residual is a single number.
pub fn scalar_report<F>(bx: &ProbeBox, count: usize, seed: u64, residual: F) -> Result<ResidualReport>
where
    F: Fn(&State) -> Result<f64> + Sync,
{
    residual_report(bx, count, seed, |x| residual(x).map(|v| Vector::from_element(1, v)))
}
