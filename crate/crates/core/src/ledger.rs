//! Heisenberg-picture ledger.
//!
//! Every live mode's `X` and `P` are kept as exact linear combinations of a
//! fixed basis of source quadratures (the inputs and the EPR modes). Second
//! moments follow from the basis covariance, so this engine never samples.
//! Measurement plus feedforward is an operator substitution: the measured
//! operators are added to the target rows with the feedforward gains.

use nalgebra::{DMatrix, DVector};
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{
    symplectic_form, GaussianState, ModeLabel, Physicality, Quadrature, QuadratureCombination,
    SymplecticOp,
};
use crate::json;

/// Tolerance for commutator checks on ledger rows.
pub const COMMUTATOR_TOL: f64 = 1e-12;

/// Round-off allowance relative to `max|S|²` when accepting a pure basis.
const SYMPLECTIC_REL_TOL: f64 = 1e-12;

/// Basis modes with their joint first and second moments.
///
/// Second moments are also held as a factor `L` with `Σ = L Lᵀ`. Variances
/// are evaluated as `|Lᵀ c|²`, which avoids the cancellation `cᵀ Σ c` suffers
/// when strongly squeezed modes contribute entries of order `e^{2r}`.
#[derive(Debug, Clone)]
pub struct BasisSpec {
    state: GaussianState,
    factor: DMatrix<f64>,
    physicality: Physicality,
}

impl PartialEq for BasisSpec {
    fn eq(&self, other: &Self) -> bool {
        self.state == other.state
    }
}

fn require_physical(state: &GaussianState) -> Result<Physicality> {
    let phys = state.check_physicality();
    if phys.is_physical() {
        Ok(phys)
    } else {
        Err(Error::Unphysical {
            min_eigenvalue: phys.min_eigenvalue,
        })
    }
}

/// Symmetric square root of a positive semidefinite matrix.
fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

impl BasisSpec {
    /// Uses a physical Gaussian state as the basis description; the factor
    /// is the symmetric square root of its covariance.
    pub fn new(state: GaussianState) -> Result<Self> {
        let physicality = require_physical(&state)?;
        let factor = symmetric_sqrt(state.cov());
        Ok(BasisSpec {
            state,
            factor,
            physicality,
        })
    }

    /// Pure state `S Sᵀ` prepared from vacuum by `op`. Physicality follows
    /// from `S Sᵀ + iΩ/2 = S (I + iΩ/2) Sᵀ`, whose smallest eigenvalue is
    /// exactly 0, so no eigenvalue computation on the rounded covariance is
    /// needed. That matters for strong squeezing, where `cosh 2r` has an
    /// ulp far above the physicality tolerance.
    pub fn pure(state: GaussianState, op: &SymplecticOp) -> Result<Self> {
        let s = op.matrix();
        if s.nrows() != state.cov().nrows() {
            return Err(Error::ArityMismatch {
                expected: state.mode_count(),
                got: op.arity(),
            });
        }
        let scale = s.amax().powi(2).max(1.0);
        let residual = op.symplectic_residual();
        if residual > SYMPLECTIC_REL_TOL * scale {
            return Err(Error::NotSymplectic { residual });
        }
        let mismatch = (s * s.transpose() - state.cov()).amax();
        if mismatch > SYMPLECTIC_REL_TOL * scale {
            return Err(Error::InvalidParameter(format!(
                "state covariance differs from S Sᵀ by {mismatch:e}"
            )));
        }
        let symmetry_residual = (state.cov() - state.cov().transpose()).amax();
        Ok(BasisSpec {
            factor: s.clone(),
            physicality: Physicality {
                symmetry_residual,
                min_eigenvalue: 0.0,
            },
            state,
        })
    }

    /// Joint basis of two independent parts; factors combine block-diagonally.
    pub fn tensor(&self, other: &BasisSpec) -> Result<Self> {
        let state = self.state.tensor(&other.state)?;
        let (a, b) = (self.factor.nrows(), other.factor.nrows());
        let mut factor = DMatrix::zeros(a + b, a + b);
        factor.view_mut((0, 0), (a, a)).copy_from(&self.factor);
        factor.view_mut((a, a), (b, b)).copy_from(&other.factor);
        // Block-diagonal, so the spectrum is the union of both spectra.
        let physicality = Physicality {
            symmetry_residual: self
                .physicality
                .symmetry_residual
                .max(other.physicality.symmetry_residual),
            min_eigenvalue: self
                .physicality
                .min_eigenvalue
                .min(other.physicality.min_eigenvalue),
        };
        Ok(BasisSpec {
            state,
            factor,
            physicality,
        })
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Physicality established at construction.
    pub fn physicality(&self) -> Physicality {
        self.physicality
    }

    pub fn modes(&self) -> &[ModeLabel] {
        self.state.modes()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        self.state.cov()
    }

    pub fn mean(&self) -> &DVector<f64> {
        self.state.mean()
    }

    pub fn dim(&self) -> usize {
        self.state.mean().len()
    }

    pub fn state(&self) -> &GaussianState {
        &self.state
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LiveMode {
    label: ModeLabel,
    x: DVector<f64>,
    p: DVector<f64>,
    /// Classical offsets added to the X and P rows.
    offset: [f64; 2],
}

impl LiveMode {
    fn row(&self, quad: Quadrature) -> &DVector<f64> {
        match quad {
            Quadrature::X => &self.x,
            Quadrature::P => &self.p,
        }
    }

    fn row_mut(&mut self, quad: Quadrature) -> &mut DVector<f64> {
        match quad {
            Quadrature::X => &mut self.x,
            Quadrature::P => &mut self.p,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeisenbergLedger {
    basis: BasisSpec,
    omega: DMatrix<f64>,
    live: Vec<LiveMode>,
}

fn row_name(mode: &ModeLabel, quad: Quadrature) -> String {
    format!("{mode}.{quad}")
}

impl HeisenbergLedger {
    /// Fresh ledger: each basis mode is live with unit coefficient on itself.
    pub fn new(basis: BasisSpec) -> Self {
        let dim = basis.dim();
        let live = basis
            .modes()
            .iter()
            .enumerate()
            .map(|(k, label)| {
                let mut x = DVector::zeros(dim);
                let mut p = DVector::zeros(dim);
                x[2 * k] = 1.0;
                p[2 * k + 1] = 1.0;
                LiveMode {
                    label: label.clone(),
                    x,
                    p,
                    offset: [0.0; 2],
                }
            })
            .collect();
        let omega = symplectic_form(basis.modes().len());
        HeisenbergLedger { basis, omega, live }
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn live_modes(&self) -> Vec<&ModeLabel> {
        self.live.iter().map(|m| &m.label).collect()
    }

    fn position(&self, mode: &ModeLabel) -> Result<usize> {
        self.live
            .iter()
            .position(|m| &m.label == mode)
            .ok_or_else(|| Error::DeadRow(mode.to_string()))
    }

    pub fn row(&self, mode: &ModeLabel, quad: Quadrature) -> Result<&DVector<f64>> {
        let k = self
            .position(mode)
            .map_err(|_| Error::DeadRow(row_name(mode, quad)))?;
        Ok(self.live[k].row(quad))
    }

    pub fn offset(&self, mode: &ModeLabel, quad: Quadrature) -> Result<f64> {
        Ok(self.live[self.position(mode)?].offset[quad.offset()])
    }

    /// Stored coefficient of `row` on the basis quadrature `entry`.
    pub fn row_coefficient(
        &self,
        row: (&ModeLabel, Quadrature),
        entry: (&ModeLabel, Quadrature),
    ) -> Result<f64> {
        let r = self.row(row.0, row.1)?;
        let k = self
            .basis
            .modes()
            .iter()
            .position(|m| m == entry.0)
            .ok_or_else(|| Error::UnknownMode(entry.0.to_string()))?;
        Ok(r[2 * k + entry.1.offset()])
    }

    /// `uᵀ Ω v` over the basis; equals the `c` in `[A, B] = c·i`.
    pub fn symplectic_product(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&(&self.omega * v))
    }

    /// Largest deviation from the canonical commutators over all live rows:
    /// `[X, P] = 2i` within a mode, zero across modes.
    pub fn commutator_residual(&self) -> f64 {
        let rows: Vec<(usize, Quadrature, &DVector<f64>)> = self
            .live
            .iter()
            .enumerate()
            .flat_map(|(k, m)| [(k, Quadrature::X, &m.x), (k, Quadrature::P, &m.p)])
            .collect();
        let mut worst: f64 = 0.0;
        for (i, &(ka, qa, a)) in rows.iter().enumerate() {
            for &(kb, qb, b) in &rows[i + 1..] {
                let expected = if ka == kb && qa == Quadrature::X && qb == Quadrature::P {
                    2.0
                } else {
                    0.0
                };
                worst = worst.max((self.symplectic_product(a, b) - expected).abs());
            }
        }
        worst
    }

    /// `ledger_apply`: replaces the target rows by S-mixtures of themselves.
    pub fn apply(&self, op: &SymplecticOp, targets: &[ModeLabel]) -> Result<Self> {
        if targets.len() != op.arity() {
            return Err(Error::ArityMismatch {
                expected: op.arity(),
                got: targets.len(),
            });
        }
        let mut pos = Vec::with_capacity(targets.len());
        for t in targets {
            let k = self.position(t)?;
            if pos.contains(&k) {
                return Err(Error::DuplicateMode(t.to_string()));
            }
            pos.push(k);
        }
        let old: Vec<(&DVector<f64>, f64)> = pos
            .iter()
            .flat_map(|&k| {
                let m = &self.live[k];
                [(&m.x, m.offset[0]), (&m.p, m.offset[1])]
            })
            .collect();
        let s = op.matrix();
        let mut out = self.clone();
        for (i, &k) in pos.iter().enumerate() {
            for q in [Quadrature::X, Quadrature::P] {
                let r = 2 * i + q.offset();
                let mut row = DVector::zeros(self.basis.dim());
                let mut off = 0.0;
                for (c, (v, o)) in old.iter().enumerate() {
                    let w = s[(r, c)];
                    if w != 0.0 {
                        row.axpy(w, v, 1.0);
                        off += w * o;
                    }
                }
                *out.live[k].row_mut(q) = row;
                out.live[k].offset[q.offset()] = off;
            }
        }
        Ok(out)
    }

    /// Adds a classical displacement to the offsets of `mode`.
    pub fn displace(&self, mode: &ModeLabel, dx: f64, dp: f64) -> Result<Self> {
        if !dx.is_finite() || !dp.is_finite() {
            return Err(Error::InvalidParameter("non-finite displacement".into()));
        }
        let k = self.position(mode)?;
        let mut out = self.clone();
        out.live[k].offset[0] += dx;
        out.live[k].offset[1] += dp;
        Ok(out)
    }

    pub fn relabel(&self, from: &ModeLabel, to: impl Into<ModeLabel>) -> Result<Self> {
        let k = self.position(from)?;
        let to = to.into();
        if self.live.iter().enumerate().any(|(i, m)| i != k && m.label == to) {
            return Err(Error::DuplicateMode(to.to_string()));
        }
        let mut out = self.clone();
        out.live[k].label = to;
        Ok(out)
    }

    /// Measurement with feedforward as an exact operator identity.
    ///
    /// `gains` has one row per target and one column per measured
    /// quadrature; target `t` gains `Σ_j gains[t, j] · measured_j`. The
    /// measured set must commute pairwise, so their joint outcomes are the
    /// operators themselves. All measured modes are removed afterwards.
    pub fn measure_feedforward(
        &self,
        measured: &[(ModeLabel, Quadrature)],
        targets: &[(ModeLabel, Quadrature)],
        gains: &DMatrix<f64>,
    ) -> Result<Self> {
        if gains.shape() != (targets.len(), measured.len()) {
            return Err(Error::Dimension(format!(
                "gain matrix must be {}x{}, got {}x{}",
                targets.len(),
                measured.len(),
                gains.nrows(),
                gains.ncols()
            )));
        }
        if gains.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidParameter("non-finite gain".into()));
        }
        let mut rows = Vec::with_capacity(measured.len());
        for (mode, quad) in measured {
            let k = self
                .position(mode)
                .map_err(|_| Error::DeadRow(row_name(mode, *quad)))?;
            let m = &self.live[k];
            rows.push((m.row(*quad).clone(), m.offset[quad.offset()]));
        }
        for i in 0..measured.len() {
            for j in (i + 1)..measured.len() {
                let product = self.symplectic_product(&rows[i].0, &rows[j].0);
                if product.abs() > COMMUTATOR_TOL {
                    return Err(Error::NonCommuting {
                        a: row_name(&measured[i].0, measured[i].1),
                        b: row_name(&measured[j].0, measured[j].1),
                        product,
                    });
                }
            }
        }
        let measured_modes: Vec<&ModeLabel> = measured.iter().map(|(m, _)| m).collect();
        let mut out = self.clone();
        for (t, (mode, quad)) in targets.iter().enumerate() {
            if measured_modes.contains(&mode) {
                return Err(Error::Protocol(format!(
                    "feedforward target {} is also measured",
                    row_name(mode, *quad)
                )));
            }
            let k = out
                .position(mode)
                .map_err(|_| Error::DeadRow(row_name(mode, *quad)))?;
            for (j, (row, off)) in rows.iter().enumerate() {
                let g = gains[(t, j)];
                out.live[k].row_mut(*quad).axpy(g, row, 1.0);
                out.live[k].offset[quad.offset()] += g * off;
            }
        }
        out.live.retain(|m| !measured_modes.contains(&&m.label));
        Ok(out)
    }

    fn combo_vector(&self, combo: &QuadratureCombination) -> Result<(DVector<f64>, f64)> {
        let mut c = DVector::zeros(self.basis.dim());
        let mut off = 0.0;
        for t in combo.terms() {
            c.axpy(t.coeff, self.row(&t.mode, t.quad)?, 1.0);
            off += t.coeff * self.offset(&t.mode, t.quad)?;
        }
        Ok((c, off))
    }

    /// `cᵀ Σ c` with `c` the combined basis-coefficient vector.
    pub fn variance(&self, combo: &QuadratureCombination) -> Result<f64> {
        let (c, _) = self.combo_vector(combo)?;
        Ok((self.basis.factor.transpose() * c).norm_squared())
    }

    pub fn combination_mean(&self, combo: &QuadratureCombination) -> Result<f64> {
        let (c, off) = self.combo_vector(combo)?;
        Ok(c.dot(self.basis.mean()) + off)
    }

    /// Coefficient matrix of `modes`, two rows per mode in `(X, P)` order.
    pub fn coefficient_matrix(&self, modes: &[ModeLabel]) -> Result<DMatrix<f64>> {
        let dim = self.basis.dim();
        let mut c = DMatrix::zeros(2 * modes.len(), dim);
        for (i, m) in modes.iter().enumerate() {
            let k = self.position(m)?;
            c.row_mut(2 * i).copy_from(&self.live[k].x.transpose());
            c.row_mut(2 * i + 1).copy_from(&self.live[k].p.transpose());
        }
        Ok(c)
    }

    /// `ledger_to_covariance`: moments of the live subset `modes` as a state.
    pub fn to_state(&self, modes: &[ModeLabel]) -> Result<GaussianState> {
        let c = self.coefficient_matrix(modes)?;
        let mut mean = &c * self.basis.mean();
        for (i, m) in modes.iter().enumerate() {
            let k = self.position(m)?;
            mean[2 * i] += self.live[k].offset[0];
            mean[2 * i + 1] += self.live[k].offset[1];
        }
        let cl = &c * &self.basis.factor;
        let mut cov = &cl * cl.transpose();
        let n = cov.nrows();
        for r in 0..n {
            for s in (r + 1)..n {
                let v = 0.5 * (cov[(r, s)] + cov[(s, r)]);
                cov[(r, s)] = v;
                cov[(s, r)] = v;
            }
        }
        GaussianState::new(modes.to_vec(), mean, cov)
    }

    /// JSON dump: the basis state, and rows keyed `mode.X` / `mode.P` with
    /// coefficient arrays and classical offsets.
    pub fn to_json(&self) -> String {
        json::to_string(self)
    }

    /// Inverse of [`to_json`](Self::to_json). Every live mode must supply both
    /// rows, and the commutator invariants must hold.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            basis: serde_json::Value,
            rows: serde_json::Map<String, serde_json::Value>,
            offsets: serde_json::Map<String, serde_json::Value>,
        }
        let doc: Doc = serde_json::from_str(text)?;
        let basis = BasisSpec::new(GaussianState::from_json(&doc.basis.to_string())?)?;
        let dim = basis.dim();
        let mut ledger = HeisenbergLedger::new(basis);
        ledger.live.clear();
        for (key, value) in &doc.rows {
            let (mode, quad) = parse_row_key(key)?;
            let coeffs: Vec<f64> = serde_json::from_value(value.clone())?;
            if coeffs.len() != dim || coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::Decode(format!("row `{key}` must hold {dim} finite numbers")));
            }
            let k = match ledger.live.iter().position(|m| m.label == mode) {
                Some(k) => k,
                None => {
                    ledger.live.push(LiveMode {
                        label: mode,
                        x: DVector::from_element(dim, f64::NAN),
                        p: DVector::from_element(dim, f64::NAN),
                        offset: [0.0; 2],
                    });
                    ledger.live.len() - 1
                }
            };
            *ledger.live[k].row_mut(quad) = DVector::from_vec(coeffs);
        }
        if ledger.live.is_empty() {
            return Err(Error::Decode("ledger has no live rows".into()));
        }
        for m in &ledger.live {
            if m.x.iter().chain(m.p.iter()).any(|v| v.is_nan()) {
                return Err(Error::Decode(format!("mode `{}` is missing a row", m.label)));
            }
        }
        for (key, value) in &doc.offsets {
            let (mode, quad) = parse_row_key(key)?;
            let v: f64 = serde_json::from_value(value.clone())?;
            if !v.is_finite() {
                return Err(Error::Decode(format!("offset `{key}` not finite")));
            }
            let k = ledger.position(&mode)?;
            ledger.live[k].offset[quad.offset()] = v;
        }
        let residual = ledger.commutator_residual();
        if residual > 1e-9 {
            return Err(Error::Decode(format!(
                "rows violate canonical commutators (residual {residual:e})"
            )));
        }
        Ok(ledger)
    }
}

impl Serialize for HeisenbergLedger {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut rows = serde_json::Map::new();
        let mut offsets = serde_json::Map::new();
        for m in &self.live {
            for q in [Quadrature::X, Quadrature::P] {
                let key = row_name(&m.label, q);
                rows.insert(key.clone(), m.row(q).iter().copied().collect::<Vec<f64>>().into());
                offsets.insert(key, m.offset[q.offset()].into());
            }
        }
        let mut doc = serializer.serialize_struct("HeisenbergLedger", 3)?;
        doc.serialize_field("basis", &self.basis.state)?;
        doc.serialize_field("rows", &rows)?;
        doc.serialize_field("offsets", &offsets)?;
        doc.end()
    }
}

fn parse_row_key(key: &str) -> Result<(ModeLabel, Quadrature)> {
    let (mode, quad) = key
        .rsplit_once('.')
        .ok_or_else(|| Error::Decode(format!("row key `{key}` is not `mode.X|P`")))?;
    let quad = match quad {
        "X" => Quadrature::X,
        "P" => Quadrature::P,
        _ => return Err(Error::Decode(format!("row key `{key}` has bad quadrature"))),
    };
    if mode.is_empty() {
        return Err(Error::Decode(format!("row key `{key}` has empty mode")));
    }
    Ok((ModeLabel::new(mode), quad))
}
