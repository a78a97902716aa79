//! Sample moments and their consistency with analytic Gaussian moments.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::gaussian::GaussianState;

/// Running mean and covariance (Welford), unbiased `N - 1` normalization.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    count: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        MomentAccumulator {
            count: 0,
            mean: DVector::zeros(dim),
            m2: DMatrix::zeros(dim, dim),
        }
    }

    pub fn push(&mut self, sample: &[f64]) {
        assert_eq!(sample.len(), self.mean.len(), "sample dimension");
        self.count += 1;
        let x = DVector::from_column_slice(sample);
        let delta = &x - &self.mean;
        self.mean += &delta / self.count as f64;
        let delta2 = &x - &self.mean;
        self.m2 += &delta * delta2.transpose();
    }

    pub fn finish(&self) -> Option<SampledMoments> {
        if self.count < 2 {
            return None;
        }
        let mut cov = &self.m2 / (self.count - 1) as f64;
        let n = cov.nrows();
        for r in 0..n {
            for c in (r + 1)..n {
                let v = 0.5 * (cov[(r, c)] + cov[(c, r)]);
                cov[(r, c)] = v;
                cov[(c, r)] = v;
            }
        }
        Some(SampledMoments {
            count: self.count,
            mean: self.mean.clone(),
            cov,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledMoments {
    pub count: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// One sampled statistic compared with its analytic value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZScore {
    pub label: String,
    pub sampled: f64,
    pub expected: f64,
    pub std_error: f64,
    pub z: f64,
}

/// Standard-error z-scores of sample means and covariances against
/// `expected`, assuming Gaussian samples: `SE(mean_i) = √(Σii/N)` and
/// `SE(cov_ij) = √((Σii Σjj + Σij²)/N)`.
pub fn consistency(expected: &GaussianState, sampled: &SampledMoments) -> Vec<ZScore> {
    let n = sampled.count as f64;
    let sigma = expected.cov();
    let names: Vec<String> = expected
        .modes()
        .iter()
        .flat_map(|m| [format!("{m}.X"), format!("{m}.P")])
        .collect();
    let mut out = Vec::new();
    for i in 0..names.len() {
        out.push(score(
            format!("mean {}", names[i]),
            sampled.mean[i],
            expected.mean()[i],
            (sigma[(i, i)] / n).sqrt(),
        ));
    }
    for i in 0..names.len() {
        for j in i..names.len() {
            let se = ((sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)].powi(2)) / n).sqrt();
            out.push(score(
                format!("cov {},{}", names[i], names[j]),
                sampled.cov[(i, j)],
                sigma[(i, j)],
                se,
            ));
        }
    }
    out
}

fn score(label: String, sampled: f64, expected: f64, std_error: f64) -> ZScore {
    let diff = sampled - expected;
    let z = if std_error > 0.0 {
        diff / std_error
    } else if diff.abs() <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    };
    ZScore {
        label,
        sampled,
        expected,
        std_error,
        z,
    }
}
