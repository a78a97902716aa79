//! Gaussian states over labeled optical modes.
//!
//! A state is a mean vector and covariance matrix with interleaved ordering
//! `(X1, P1, X2, P2, ...)`. Operations take a state by reference and return a
//! new one.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json;

/// Tolerance on `max|cov - covᵀ|`.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Floor on the smallest eigenvalue of `cov + iΩ/2`.
pub const PHYSICALITY_TOL: f64 = 1e-9;
/// Tolerance on `S Ω Sᵀ - Ω`.
pub const SYMPLECTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeLabel(String);

impl ModeLabel {
    pub fn new(name: impl Into<String>) -> Self {
        ModeLabel(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ModeLabel {
    fn from(s: &str) -> Self {
        ModeLabel(s.to_owned())
    }
}

impl From<String> for ModeLabel {
    fn from(s: String) -> Self {
        ModeLabel(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quadrature {
    X,
    P,
}

impl Quadrature {
    /// Offset of this quadrature inside a mode's `(X, P)` block.
    pub fn offset(self) -> usize {
        match self {
            Quadrature::X => 0,
            Quadrature::P => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Quadrature::X => "X",
            Quadrature::P => "P",
        }
    }
}

impl fmt::Display for Quadrature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The symplectic form for `n` modes under `[X, P] = 2i`: per-mode blocks
/// `[[0, 2], [-2, 0]]`.
pub fn symplectic_form(n: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        omega[(2 * k, 2 * k + 1)] = 2.0;
        omega[(2 * k + 1, 2 * k)] = -2.0;
    }
    omega
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

fn check_distinct(labels: &[ModeLabel]) -> Result<()> {
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(Error::DuplicateMode(l.to_string()));
        }
    }
    Ok(())
}

/// A Gaussian linear map acting on `arity` modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticOp {
    matrix: DMatrix<f64>,
}

impl SymplecticOp {
    /// Wraps `matrix`, rejecting it unless it is `2k × 2k` and preserves the
    /// symplectic form.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let (r, c) = matrix.shape();
        if r != c || r == 0 || r % 2 != 0 {
            return Err(Error::Dimension(format!(
                "symplectic matrix must be 2k x 2k, got {r} x {c}"
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite matrix entry".into()));
        }
        let op = SymplecticOp { matrix };
        let residual = op.symplectic_residual();
        if residual > SYMPLECTIC_TOL {
            return Err(Error::NotSymplectic { residual });
        }
        Ok(op)
    }

    pub fn identity(arity: usize) -> Self {
        SymplecticOp {
            matrix: DMatrix::identity(2 * arity, 2 * arity),
        }
    }

    pub fn arity(&self) -> usize {
        self.matrix.nrows() / 2
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `max|S Ω Sᵀ - Ω|`.
    pub fn symplectic_residual(&self) -> f64 {
        let omega = symplectic_form(self.arity());
        max_abs(&(&self.matrix * &omega * self.matrix.transpose() - omega))
    }

    /// Inverse map, `S⁻¹ = -Ω Sᵀ Ω / 4` for our normalization of Ω.
    pub fn inverse(&self) -> Self {
        let omega = symplectic_form(self.arity());
        SymplecticOp {
            matrix: -(&omega * self.matrix.transpose() * &omega) / 4.0,
        }
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &SymplecticOp) -> Result<Self> {
        if next.arity() != self.arity() {
            return Err(Error::ArityMismatch {
                expected: self.arity(),
                got: next.arity(),
            });
        }
        Ok(SymplecticOp {
            matrix: &next.matrix * &self.matrix,
        })
    }

    /// Passive two-mode map from a 2×2 real mode-mixing matrix, applied
    /// identically to the X and P blocks.
    fn passive(mix: [[f64; 2]; 2]) -> Self {
        let mut m = DMatrix::zeros(4, 4);
        for (out, row) in mix.iter().enumerate() {
            for (inp, &c) in row.iter().enumerate() {
                m[(2 * out, 2 * inp)] = c;
                m[(2 * out + 1, 2 * inp + 1)] = c;
            }
        }
        SymplecticOp { matrix: m }
    }
}

/// Beam splitter with reflectivity `R` mapping `(u, v)` to
/// `(√(1-R)·v - √R·u, √R·v + √(1-R)·u)`, the transmitted and reflected ports.
pub fn beam_splitter_map(reflectivity: f64) -> Result<SymplecticOp> {
    if !(0.0..=1.0).contains(&reflectivity) {
        return Err(Error::InvalidParameter(format!(
            "reflectivity {reflectivity} outside [0, 1]"
        )));
    }
    let r = reflectivity.sqrt();
    let t = (1.0 - reflectivity).sqrt();
    Ok(SymplecticOp::passive([[-r, t], [t, r]]))
}

/// 50/50 combiner mapping `(u, v)` to the sum port `(u + v)/√2` and the
/// difference port `(u - v)/√2`.
pub fn balanced_combiner_map() -> SymplecticOp {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    SymplecticOp::passive([[h, h], [h, -h]])
}

/// Single-mode squeezer: `X → e^{-r} X`, `P → e^{r} P` (negative `r`
/// squeezes P instead).
pub fn squeezer_map(r: f64) -> Result<SymplecticOp> {
    if !r.is_finite() {
        return Err(Error::InvalidParameter(format!("squeezing {r} not finite")));
    }
    SymplecticOp::new(DMatrix::from_diagonal(&DVector::from_vec(vec![
        (-r).exp(),
        r.exp(),
    ])))
}

/// Phase rotation `a → e^{-iθ} a` on one mode.
pub fn phase_rotation_map(theta: f64) -> Result<SymplecticOp> {
    if !theta.is_finite() {
        return Err(Error::InvalidParameter(format!("phase {theta} not finite")));
    }
    let (s, c) = theta.sin_cos();
    Ok(SymplecticOp {
        matrix: DMatrix::from_row_slice(2, 2, &[c, s, -s, c]),
    })
}

/// Exact π phase shift, `a → -a`.
pub fn phase_flip_map() -> SymplecticOp {
    SymplecticOp {
        matrix: -DMatrix::identity(2, 2),
    }
}

/// Two-mode squeezer with power gain `G ≥ 1`: `a_s → √G a_s + √(G-1) a_i†`,
/// `a_i → √(G-1) a_s† + √G a_i`.
pub fn two_mode_squeezer_map(gain: f64) -> Result<SymplecticOp> {
    if !(gain >= 1.0) || !gain.is_finite() {
        return Err(Error::InvalidParameter(format!("gain {gain} must be >= 1")));
    }
    let g = gain.sqrt();
    let h = (gain - 1.0).sqrt();
    #[rustfmt::skip]
    let m = DMatrix::from_row_slice(4, 4, &[
        g,   0.0, h,   0.0,
        0.0, g,   0.0, -h,
        h,   0.0, g,   0.0,
        0.0, -h,  0.0, g,
    ]);
    Ok(SymplecticOp { matrix: m })
}

/// Map taking two vacua to [`GaussianState::epr`]`(r)`. Built directly: at
/// large `r` the entries reach `e^r` and the round-off in `S Ω Sᵀ` exceeds
/// the absolute tolerance of [`SymplecticOp::new`].
pub fn epr_map(r: f64) -> Result<SymplecticOp> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "squeezing {r} must be finite and >= 0"
        )));
    }
    let (c, s) = (r.cosh(), r.sinh());
    #[rustfmt::skip]
    let m = DMatrix::from_row_slice(4, 4, &[
        c,   0.0, -s,  0.0,
        0.0, c,   0.0, s,
        -s,  0.0, c,   0.0,
        0.0, s,   0.0, c,
    ]);
    Ok(SymplecticOp { matrix: m })
}

/// One term `coefficient · quadrature(mode)` of a linear combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub mode: ModeLabel,
    pub quad: Quadrature,
    pub coeff: f64,
}

/// A real linear combination of quadratures, e.g. `X_a1 - √R X_a2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureCombination {
    terms: Vec<Term>,
}

impl QuadratureCombination {
    pub fn new<L: Into<ModeLabel>>(
        terms: impl IntoIterator<Item = (L, Quadrature, f64)>,
    ) -> Result<Self> {
        let terms: Vec<Term> = terms
            .into_iter()
            .map(|(mode, quad, coeff)| Term {
                mode: mode.into(),
                quad,
                coeff,
            })
            .collect();
        if terms.is_empty() {
            return Err(Error::Combination("no terms".into()));
        }
        for (i, t) in terms.iter().enumerate() {
            if !t.coeff.is_finite() {
                return Err(Error::Combination(format!(
                    "non-finite coefficient on {}.{}",
                    t.mode, t.quad
                )));
            }
            if terms[..i]
                .iter()
                .any(|u| u.mode == t.mode && u.quad == t.quad)
            {
                return Err(Error::Combination(format!(
                    "duplicate term {}.{}",
                    t.mode, t.quad
                )));
            }
        }
        Ok(QuadratureCombination { terms })
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// Shot-noise bound: the variance of this combination on uncorrelated
    /// vacuum, `Σ c²`.
    pub fn shot_noise_limit(&self) -> f64 {
        self.terms.iter().map(|t| t.coeff * t.coeff).sum()
    }

    /// Distinct modes carrying a nonzero coefficient.
    pub fn support(&self) -> Vec<&ModeLabel> {
        let mut modes: Vec<&ModeLabel> = Vec::new();
        for t in &self.terms {
            if t.coeff != 0.0 && !modes.contains(&&t.mode) {
                modes.push(&t.mode);
            }
        }
        modes
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(
            self.terms
                .iter()
                .map(|t| (t.mode.clone(), t.quad, t.coeff * k)),
        )
    }
}

impl fmt::Display for QuadratureCombination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.terms.iter().enumerate() {
            let sign = if t.coeff < 0.0 { '-' } else { '+' };
            if i == 0 {
                if sign == '-' {
                    f.write_str("-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            let c = t.coeff.abs();
            if (c - 1.0).abs() > 1e-15 {
                write!(f, "{c:.4}·")?;
            }
            write!(f, "{}_{}", t.quad, t.mode)?;
        }
        Ok(())
    }
}

/// How an input field is prepared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSpec {
    #[default]
    Vacuum,
    Coherent { mean_x: f64, mean_p: f64 },
    Squeezed { r: f64, quadrature: Quadrature },
}

impl InputSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InputSpec::Vacuum => Ok(()),
            InputSpec::Coherent { mean_x, mean_p } => {
                if mean_x.is_finite() && mean_p.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("coherent mean not finite".into()))
                }
            }
            InputSpec::Squeezed { r, .. } => {
                if r.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("squeezing not finite".into()))
                }
            }
        }
    }

    /// Single-mode state under `label`.
    pub fn state(&self, label: impl Into<ModeLabel>) -> Result<GaussianState> {
        self.validate()?;
        let label = label.into();
        let vac = GaussianState::vacuum(vec![label.clone()])?;
        match *self {
            InputSpec::Vacuum => Ok(vac),
            InputSpec::Coherent { mean_x, mean_p } => vac.displace(&label, mean_x, mean_p),
            InputSpec::Squeezed { r, quadrature } => {
                let r = match quadrature {
                    Quadrature::X => r,
                    Quadrature::P => -r,
                };
                vac.apply(&squeezer_map(r)?, &[label])
            }
        }
    }
}

/// Result of [`GaussianState::check_physicality`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Physicality {
    pub symmetry_residual: f64,
    /// Smallest eigenvalue of `cov + iΩ/2`; zero for pure states.
    pub min_eigenvalue: f64,
}

impl Physicality {
    pub fn is_physical(&self) -> bool {
        self.symmetry_residual <= SYMMETRY_TOL && self.min_eigenvalue >= -PHYSICALITY_TOL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    modes: Vec<ModeLabel>,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateDocument {
    modes: Vec<ModeLabel>,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl Serialize for GaussianState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.document().serialize(serializer)
    }
}

impl GaussianState {
    /// Builds a state, checking shapes, label uniqueness, finiteness and
    /// symmetry. Physicality is not enforced here; see
    /// [`check_physicality`](Self::check_physicality).
    pub fn new(modes: Vec<ModeLabel>, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Dimension("state needs at least one mode".into()));
        }
        check_distinct(&modes)?;
        let dim = 2 * modes.len();
        if mean.len() != dim || cov.shape() != (dim, dim) {
            return Err(Error::Dimension(format!(
                "{} modes need mean of length {dim} and {dim}x{dim} cov, got {} and {}x{}",
                modes.len(),
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite moment".into()));
        }
        let residual = max_abs(&(&cov - cov.transpose()));
        if residual > SYMMETRY_TOL {
            return Err(Error::Asymmetric { residual });
        }
        Ok(GaussianState { modes, mean, cov })
    }

    pub fn vacuum(labels: Vec<ModeLabel>) -> Result<Self> {
        let dim = 2 * labels.len();
        Self::new(labels, DVector::zeros(dim), DMatrix::identity(dim, dim))
    }

    /// `vacuum_state(n, labels)`; `n` must equal the number of labels.
    pub fn vacuum_n(n: usize, labels: Vec<ModeLabel>) -> Result<Self> {
        if n == 0 || n != labels.len() {
            return Err(Error::Dimension(format!(
                "mode count {n} does not match {} labels",
                labels.len()
            )));
        }
        Self::vacuum(labels)
    }

    pub fn coherent(label: impl Into<ModeLabel>, mean_x: f64, mean_p: f64) -> Result<Self> {
        InputSpec::Coherent { mean_x, mean_p }.state(label)
    }

    /// Two-mode squeezed vacuum with `Var(X1 + X2) = Var(P1 - P2) = 2e^{-2r}`.
    pub fn epr(r: f64, labels: [ModeLabel; 2]) -> Result<Self> {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "squeezing {r} must be finite and >= 0"
            )));
        }
        let c = (2.0 * r).cosh();
        let s = (2.0 * r).sinh();
        #[rustfmt::skip]
        let cov = DMatrix::from_row_slice(4, 4, &[
            c,   0.0, -s,  0.0,
            0.0, c,   0.0, s,
            -s,  0.0, c,   0.0,
            0.0, s,   0.0, c,
        ]);
        Self::new(labels.to_vec(), DVector::zeros(4), cov)
    }

    pub fn modes(&self) -> &[ModeLabel] {
        &self.modes
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn index_of(&self, mode: &ModeLabel) -> Result<usize> {
        self.modes
            .iter()
            .position(|m| m == mode)
            .ok_or_else(|| Error::UnknownMode(mode.to_string()))
    }

    /// Row/column of `(mode, quad)` in `mean` and `cov`.
    pub fn quadrature_index(&self, mode: &ModeLabel, quad: Quadrature) -> Result<usize> {
        Ok(2 * self.index_of(mode)? + quad.offset())
    }

    /// Direct sum: modes of `self` followed by modes of `other`.
    pub fn tensor(&self, other: &GaussianState) -> Result<Self> {
        let mut modes = self.modes.clone();
        modes.extend(other.modes.iter().cloned());
        let (a, b) = (self.mean.len(), other.mean.len());
        let mut mean = DVector::zeros(a + b);
        mean.rows_mut(0, a).copy_from(&self.mean);
        mean.rows_mut(a, b).copy_from(&other.mean);
        let mut cov = DMatrix::zeros(a + b, a + b);
        cov.view_mut((0, 0), (a, a)).copy_from(&self.cov);
        cov.view_mut((a, a), (b, b)).copy_from(&other.cov);
        Self::new(modes, mean, cov)
    }

    pub fn relabel(&self, from: &ModeLabel, to: impl Into<ModeLabel>) -> Result<Self> {
        let idx = self.index_of(from)?;
        let to = to.into();
        if self.modes.iter().enumerate().any(|(i, m)| i != idx && *m == to) {
            return Err(Error::DuplicateMode(to.to_string()));
        }
        let mut out = self.clone();
        out.modes[idx] = to;
        Ok(out)
    }

    /// Reduced state on `labels`, in the given order.
    pub fn marginal(&self, labels: &[ModeLabel]) -> Result<Self> {
        check_distinct(labels)?;
        let idx = self.quadrature_indices(labels)?;
        let mean = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.mean[i]));
        let cov = DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.cov[(idx[r], idx[c])]);
        Self::new(labels.to_vec(), mean, cov)
    }

    fn quadrature_indices(&self, labels: &[ModeLabel]) -> Result<Vec<usize>> {
        let mut idx = Vec::with_capacity(2 * labels.len());
        for l in labels {
            let k = self.index_of(l)?;
            idx.push(2 * k);
            idx.push(2 * k + 1);
        }
        Ok(idx)
    }

    /// `apply_symplectic`: mean → S·mean and cov → S·cov·Sᵀ on the target
    /// quadratures; other modes are untouched.
    pub fn apply(&self, op: &SymplecticOp, targets: &[ModeLabel]) -> Result<Self> {
        if targets.len() != op.arity() {
            return Err(Error::ArityMismatch {
                expected: op.arity(),
                got: targets.len(),
            });
        }
        check_distinct(targets)?;
        let idx = self.quadrature_indices(targets)?;
        let dim = self.mean.len();
        let mut full = DMatrix::identity(dim, dim);
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                full[(i, j)] = op.matrix[(r, c)];
            }
        }
        let mean = &full * &self.mean;
        let mut cov = &full * &self.cov * full.transpose();
        symmetrize(&mut cov);
        Ok(GaussianState {
            modes: self.modes.clone(),
            mean,
            cov,
        })
    }

    /// Shifts the means of `mode` by `(dx, dp)`; covariance is unchanged.
    pub fn displace(&self, mode: &ModeLabel, dx: f64, dp: f64) -> Result<Self> {
        if !dx.is_finite() || !dp.is_finite() {
            return Err(Error::InvalidParameter("non-finite displacement".into()));
        }
        let k = self.index_of(mode)?;
        let mut out = self.clone();
        out.mean[2 * k] += dx;
        out.mean[2 * k + 1] += dp;
        Ok(out)
    }

    /// Conditions on the outcome `value` of measuring `quad` on `mode` and
    /// removes that mode.
    ///
    /// The projected measured block is `diag(σ², 0)`; its pseudo-inverse
    /// leaves the conjugate quadrature fully uncertain, so the update reduces
    /// to a rank-one Schur complement on the measured quadrature alone.
    pub fn condition(&self, mode: &ModeLabel, quad: Quadrature, value: f64) -> Result<Self> {
        let k = self.index_of(mode)?;
        let m = 2 * k + quad.offset();
        let var = self.cov[(m, m)];
        if !(var > 0.0) {
            return Err(Error::NonPositiveVariance {
                mode: mode.to_string(),
                quad: quad.as_str(),
                variance: var,
            });
        }
        if self.modes.len() == 1 {
            return Err(Error::Dimension(
                "cannot measure the only mode of a state".into(),
            ));
        }
        let keep: Vec<usize> = (0..self.mean.len())
            .filter(|&i| i / 2 != k)
            .collect();
        let innovation = value - self.mean[m];
        let n = keep.len();
        let gain = DVector::from_iterator(n, keep.iter().map(|&i| self.cov[(i, m)] / var));
        let mean = DVector::from_iterator(
            n,
            keep.iter()
                .enumerate()
                .map(|(r, &i)| self.mean[i] + gain[r] * innovation),
        );
        let mut cov = DMatrix::from_fn(n, n, |r, c| {
            self.cov[(keep[r], keep[c])] - gain[r] * self.cov[(m, keep[c])]
        });
        symmetrize(&mut cov);
        let modes = self
            .modes
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != k)
            .map(|(_, l)| l.clone())
            .collect();
        Ok(GaussianState { modes, mean, cov })
    }

    /// Homodyne detection of `quad` on `mode`: draws the outcome from the
    /// marginal and returns it with the conditioned remaining state.
    pub fn homodyne<R: Rng + ?Sized>(
        &self,
        mode: &ModeLabel,
        quad: Quadrature,
        rng: &mut R,
    ) -> Result<(f64, Self)> {
        let m = self.quadrature_index(mode, quad)?;
        let var = self.cov[(m, m)];
        if !(var > 0.0) {
            return Err(Error::NonPositiveVariance {
                mode: mode.to_string(),
                quad: quad.as_str(),
                variance: var,
            });
        }
        let z: f64 = rng.sample(StandardNormal);
        let outcome = self.mean[m] + var.sqrt() * z;
        let conditioned = self.condition(mode, quad, outcome)?;
        Ok((outcome, conditioned))
    }

    /// Coefficient vector of `combo` in this state's quadrature ordering.
    pub fn coefficient_vector(&self, combo: &QuadratureCombination) -> Result<DVector<f64>> {
        let mut c = DVector::zeros(self.mean.len());
        for t in combo.terms() {
            c[self.quadrature_index(&t.mode, t.quad)?] += t.coeff;
        }
        Ok(c)
    }

    /// `cᵀ·cov·c`; independent of the mean.
    pub fn combination_variance(&self, combo: &QuadratureCombination) -> Result<f64> {
        let c = self.coefficient_vector(combo)?;
        Ok(c.dot(&(&self.cov * &c)))
    }

    pub fn combination_mean(&self, combo: &QuadratureCombination) -> Result<f64> {
        Ok(self.coefficient_vector(combo)?.dot(&self.mean))
    }

    pub fn check_physicality(&self) -> Physicality {
        let symmetry_residual = max_abs(&(&self.cov - self.cov.transpose()));
        Physicality {
            symmetry_residual,
            min_eigenvalue: min_uncertainty_eigenvalue(&self.cov),
        }
    }

    pub fn to_json(&self) -> String {
        json::to_string(&self.document())
    }

    fn document(&self) -> StateDocument {
        StateDocument {
            modes: self.modes.clone(),
            mean: self.mean.iter().copied().collect(),
            cov: (0..self.cov.nrows())
                .map(|r| self.cov.row(r).iter().copied().collect())
                .collect(),
        }
    }

    /// Parses the JSON state document and rejects anything that is not a
    /// valid physical state.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: StateDocument = serde_json::from_str(text)?;
        let dim = doc.mean.len();
        if doc.cov.len() != dim || doc.cov.iter().any(|row| row.len() != dim) {
            return Err(Error::Dimension("cov must be square and match mean".into()));
        }
        let cov = DMatrix::from_fn(dim, dim, |r, c| doc.cov[r][c]);
        let state = Self::new(doc.modes, DVector::from_vec(doc.mean), cov)?;
        let phys = state.check_physicality();
        if !phys.is_physical() {
            return Err(Error::Unphysical {
                min_eigenvalue: phys.min_eigenvalue,
            });
        }
        Ok(state)
    }
}

fn symmetrize(cov: &mut DMatrix<f64>) {
    let n = cov.nrows();
    for r in 0..n {
        for c in (r + 1)..n {
            let v = 0.5 * (cov[(r, c)] + cov[(c, r)]);
            cov[(r, c)] = v;
            cov[(c, r)] = v;
        }
    }
}

/// Smallest eigenvalue of the Hermitian matrix `cov + iΩ/2`, computed through
/// its real symmetric embedding `[[cov, -Ω/2], [Ω/2, cov]]`.
pub(crate) fn min_uncertainty_eigenvalue(cov: &DMatrix<f64>) -> f64 {
    let n = cov.nrows();
    if n == 0 || n % 2 != 0 || cov.iter().any(|v| !v.is_finite()) {
        return f64::NAN;
    }
    let half_omega = symplectic_form(n / 2) / 2.0;
    let mut big = DMatrix::zeros(2 * n, 2 * n);
    let sym = (cov + cov.transpose()) / 2.0;
    big.view_mut((0, 0), (n, n)).copy_from(&sym);
    big.view_mut((n, n), (n, n)).copy_from(&sym);
    big.view_mut((0, n), (n, n)).copy_from(&(-&half_omega));
    big.view_mut((n, 0), (n, n)).copy_from(&half_omega);
    SymmetricEigen::new(big)
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}
