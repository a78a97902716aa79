//! Inseparability criteria on four-mode states.
//!
//! Each criterion is a quadrature combination whose variance must fall below
//! its shot-noise limit `Σ c²` (vacuum variance 1 per mode). The NOPA
//! resource is certified by four three-mode combinations; the cluster and
//! GHZ sets are provided for comparison on user-supplied states.

use std::fmt::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussian::{GaussianState, ModeLabel, Quadrature, QuadratureCombination};
use crate::json;
use crate::ledger::HeisenbergLedger;
use crate::protocol::labels;

/// Slack on the strict inequality, so saturated bounds report failure.
pub const PASS_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Criterion {
    pub label: String,
    pub combo: QuadratureCombination,
    bound: f64,
}

impl Criterion {
    /// Bound is the combination's `Σ c²`.
    pub fn new(label: impl Into<String>, combo: QuadratureCombination) -> Self {
        let bound = combo.shot_noise_limit();
        Criterion {
            label: label.into(),
            combo,
            bound,
        }
    }

    /// Replaces the computed `Σ c²` with its exact value when coefficients
    /// are square roots, e.g. `1 + (√R)² + (√(1-R))²` is exactly 2 but
    /// rounds to `2 + 4e-16`.
    pub fn with_exact_bound(mut self, bound: f64) -> Result<Self> {
        let computed = self.combo.shot_noise_limit();
        if (bound - computed).abs() > 1e-12 * computed.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "bound {bound} does not match Σc² = {computed}"
            )));
        }
        self.bound = bound;
        Ok(self)
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }
}

/// Anything that can report the variance of a quadrature combination.
pub trait VarianceSource {
    fn variance_of(&self, combo: &QuadratureCombination) -> Result<f64>;
}

impl VarianceSource for GaussianState {
    fn variance_of(&self, combo: &QuadratureCombination) -> Result<f64> {
        self.combination_variance(combo)
    }
}

impl VarianceSource for HeisenbergLedger {
    fn variance_of(&self, combo: &QuadratureCombination) -> Result<f64> {
        self.variance(combo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub label: String,
    pub combination: String,
    pub variance: f64,
    pub bound: f64,
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionReport {
    pub results: Vec<CriterionResult>,
    pub all_pass: bool,
}

impl CriterionReport {
    pub fn to_json(&self) -> String {
        json::to_string(self)
    }

    /// Aligned text table, six significant digits.
    pub fn to_table(&self) -> String {
        let label_w = self
            .results
            .iter()
            .map(|r| r.label.chars().count())
            .chain(["criterion".len()])
            .max()
            .unwrap_or(0);
        let combo_w = self
            .results
            .iter()
            .map(|r| r.combination.chars().count())
            .chain(["combination".len()])
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<label_w$}  {:<combo_w$}  {:>13}  {:>13}  {:>13}  {}",
            "criterion", "combination", "variance", "bound", "margin", "result"
        );
        for r in &self.results {
            let pad_l = label_w - r.label.chars().count();
            let pad_c = combo_w - r.combination.chars().count();
            let _ = writeln!(
                out,
                "{}{}  {}{}  {:>13}  {:>13}  {:>13}  {}",
                r.label,
                " ".repeat(pad_l),
                r.combination,
                " ".repeat(pad_c),
                sig6(r.variance),
                sig6(r.bound),
                sig6(r.margin),
                if r.pass { "pass" } else { "fail" }
            );
        }
        let _ = writeln!(
            out,
            "overall: {}",
            if self.all_pass { "pass" } else { "fail" }
        );
        out
    }
}

/// Six significant digits for human-readable tables.
pub fn sig6(x: f64) -> String {
    format!("{x:.5e}")
}

pub fn evaluate<S: VarianceSource + ?Sized>(
    source: &S,
    criteria: &[Criterion],
) -> Result<CriterionReport> {
    let mut results = Vec::with_capacity(criteria.len());
    for c in criteria {
        let variance = source.variance_of(&c.combo)?;
        let bound = c.bound();
        results.push(CriterionResult {
            label: c.label.clone(),
            combination: c.combo.to_string(),
            variance,
            bound,
            margin: bound - variance,
            pass: variance < bound - PASS_SLACK,
        });
    }
    let all_pass = !results.is_empty() && results.iter().all(|r| r.pass);
    Ok(CriterionReport { results, all_pass })
}

/// The four genuine four-partite criteria of the NOPA resource `a1..a4`.
pub fn nopa_criteria(reflectivity: f64) -> Result<Vec<Criterion>> {
    if !(0.0..=1.0).contains(&reflectivity) {
        return Err(Error::InvalidParameter(format!(
            "reflectivity {reflectivity} outside [0, 1]"
        )));
    }
    let r = reflectivity.sqrt();
    let t = (1.0 - reflectivity).sqrt();
    use Quadrature::{P, X};
    let (a1, a2, a3, a4) = (labels::A1, labels::A2, labels::A3, labels::A4);
    [
        Criterion::new(
            "nopa-x1",
            QuadratureCombination::new([(a1, X, 1.0), (a2, X, -r), (a3, X, t)])?,
        ),
        Criterion::new(
            "nopa-x2",
            QuadratureCombination::new([(a2, X, t), (a3, X, r), (a4, X, 1.0)])?,
        ),
        Criterion::new(
            "nopa-p1",
            QuadratureCombination::new([(a1, P, 1.0), (a2, P, r), (a3, P, -t)])?,
        ),
        Criterion::new(
            "nopa-p2",
            QuadratureCombination::new([(a2, P, t), (a3, P, r), (a4, P, -1.0)])?,
        ),
    ]
    .into_iter()
    .map(|c| c.with_exact_bound(2.0))
    .collect()
}

/// Cluster-state combinations over `modes` (taken as modes 1..4).
pub fn cluster_combos(modes: &[ModeLabel; 4]) -> Result<Vec<Criterion>> {
    use Quadrature::{P, X};
    let [m1, m2, m3, m4] = modes.clone();
    Ok(vec![
        Criterion::new(
            "cluster-x123",
            QuadratureCombination::new([(m1.clone(), X, 1.0), (m2.clone(), X, 1.0), (m3.clone(), X, 1.0)])?,
        ),
        Criterion::new(
            "cluster-x34",
            QuadratureCombination::new([(m3.clone(), X, 1.0), (m4.clone(), X, 1.0)])?,
        ),
        Criterion::new(
            "cluster-p12",
            QuadratureCombination::new([(m1, P, 1.0), (m2.clone(), P, -1.0)])?,
        ),
        Criterion::new(
            "cluster-p234",
            QuadratureCombination::new([(m2, P, 1.0), (m3, P, -1.0), (m4, P, 1.0)])?,
        ),
    ])
}

/// GHZ-state combinations: total position plus every relative momentum.
pub fn ghz_combos(modes: &[ModeLabel; 4]) -> Result<Vec<Criterion>> {
    let mut out = vec![Criterion::new(
        "ghz-x-total",
        QuadratureCombination::new(modes.iter().map(|m| (m.clone(), Quadrature::X, 1.0)))?,
    )];
    for i in 0..4 {
        for j in (i + 1)..4 {
            out.push(Criterion::new(
                format!("ghz-p{}{}", i + 1, j + 1),
                QuadratureCombination::new([
                    (modes[i].clone(), Quadrature::P, 1.0),
                    (modes[j].clone(), Quadrature::P, -1.0),
                ])?,
            ));
        }
    }
    Ok(out)
}

/// How many modes each combination of a set touches.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombinationSupport {
    pub set: String,
    pub mode_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastReport {
    pub sets: Vec<CombinationSupport>,
    /// Every NOPA combination involves exactly three modes.
    pub nopa_all_three_mode: bool,
    pub cluster_has_two_mode: bool,
    pub ghz_has_two_mode: bool,
}

/// Structural comparison: the NOPA criteria use only three-party
/// combinations, while the cluster and GHZ sets include two-party ones.
pub fn criteria_contrast(reflectivity: f64) -> Result<ContrastReport> {
    if !(reflectivity > 0.0 && reflectivity < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "reflectivity {reflectivity} must lie in (0, 1)"
        )));
    }
    let generic: [ModeLabel; 4] = ["m1", "m2", "m3", "m4"].map(ModeLabel::from);
    let counts = |set: &[Criterion]| -> Vec<usize> {
        set.iter().map(|c| c.combo.support().len()).collect()
    };
    let nopa = counts(&nopa_criteria(reflectivity)?);
    let cluster = counts(&cluster_combos(&generic)?);
    let ghz = counts(&ghz_combos(&generic)?);
    Ok(ContrastReport {
        nopa_all_three_mode: nopa.iter().all(|&n| n == 3),
        cluster_has_two_mode: cluster.contains(&2),
        ghz_has_two_mode: ghz.contains(&2),
        sets: vec![
            CombinationSupport { set: "nopa".into(), mode_counts: nopa },
            CombinationSupport { set: "cluster".into(), mode_counts: cluster },
            CombinationSupport { set: "ghz".into(), mode_counts: ghz },
        ],
    })
}
