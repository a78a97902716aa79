//! The nonlocal NOPA protocol.
//!
//! Two EPR pairs are mixed on a beam splitter of reflectivity `R` to give the
//! four-mode resource `a1..a4`. The signal (idler) input station combines
//! `a1` (`a2`) with its input on a 50/50 splitter and homodynes one quadrature
//! on each port. The outcomes are broadcast to both output stations, which
//! displace `a3` and `a4` by gain-weighted sums of the four outcomes. With
//! the default gains the outputs realize a NOPA of power gain
//! `G = 1/(1 - R)`, plus noise that vanishes as the EPR squeezing grows.
//!
//! The idler output is read out with a π phase reference (`a → -a` after the
//! displacement), which makes the output operator carry `+√(R/(1-R)) a_in^s†`
//! and `-(b_EPR2† + b_EPR1)` as in the target transfer map.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{
    balanced_combiner_map, beam_splitter_map, epr_map, phase_flip_map, two_mode_squeezer_map,
    GaussianState, InputSpec, ModeLabel, Physicality, Quadrature,
};
use crate::json;
use crate::ledger::{BasisSpec, HeisenbergLedger};
use crate::stats::{MomentAccumulator, SampledMoments};

/// `R` must stay this far below 1 so the gain is finite.
pub const MAX_REFLECTIVITY_MARGIN: f64 = 1e-9;

pub mod labels {
    //! Mode names used by the protocol wiring.
    pub const IN_S: &str = "in_s";
    pub const IN_I: &str = "in_i";
    pub const A_EPR1: &str = "aEPR1";
    pub const A_EPR2: &str = "aEPR2";
    pub const B_EPR1: &str = "bEPR1";
    pub const B_EPR2: &str = "bEPR2";
    pub const A1: &str = "a1";
    pub const A2: &str = "a2";
    pub const A3: &str = "a3";
    pub const A4: &str = "a4";
    pub const S_SUM: &str = "s_sum";
    pub const S_DIFF: &str = "s_diff";
    pub const I_SUM: &str = "i_sum";
    pub const I_DIFF: &str = "i_diff";
    pub const OUT_S: &str = "out_s";
    pub const OUT_I: &str = "out_i";
}

fn l(name: &str) -> ModeLabel {
    ModeLabel::from(name)
}

/// Power gain `G = 1/(1 - R)`.
pub fn gain_factor(reflectivity: f64) -> f64 {
    1.0 / (1.0 - reflectivity)
}

fn check_reflectivity(reflectivity: f64) -> Result<()> {
    if reflectivity.is_finite() && (0.0..1.0 - MAX_REFLECTIVITY_MARGIN).contains(&reflectivity) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "reflectivity {reflectivity} must lie in [0, 1)"
        )))
    }
}

fn check_squeezing(name: &str, r: f64) -> Result<()> {
    if r.is_finite() && r >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {r} must be finite and >= 0")))
    }
}

/// Feedforward coefficients: `g_<quadrature><station>_<target>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedforwardGains {
    pub g_x1_a3: f64,
    pub g_p1_a3: f64,
    pub g_x2_a3: f64,
    pub g_p2_a3: f64,
    pub g_x1_a4: f64,
    pub g_p1_a4: f64,
    pub g_x2_a4: f64,
    pub g_p2_a4: f64,
}

impl FeedforwardGains {
    /// The gains that turn the network into a NOPA with `G = 1/(1 - R)`.
    pub fn for_reflectivity(reflectivity: f64) -> Result<Self> {
        check_reflectivity(reflectivity)?;
        let unit = (2.0 / (1.0 - reflectivity)).sqrt();
        let cross = (2.0 * reflectivity / (1.0 - reflectivity)).sqrt();
        Ok(FeedforwardGains {
            g_x1_a3: unit,
            g_p1_a3: -unit,
            g_x2_a3: -cross,
            g_p2_a3: -cross,
            g_x1_a4: -cross,
            g_p1_a4: -cross,
            g_x2_a4: unit,
            g_p2_a4: -unit,
        })
    }

    /// Whether the default sign pattern holds: `g_x1_a3 = -g_p1_a3`,
    /// `g_x2_a3 = g_p2_a3`, `g_x1_a4 = g_p1_a4`, `g_x2_a4 = -g_p2_a4`.
    pub fn has_default_sign_pattern(&self) -> bool {
        self.g_x1_a3 == -self.g_p1_a3
            && self.g_x2_a3 == self.g_p2_a3
            && self.g_x1_a4 == self.g_p1_a4
            && self.g_x2_a4 == -self.g_p2_a4
    }

    fn validate(&self) -> Result<()> {
        if self.as_matrix().iter().all(|g| g.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter("non-finite feedforward gain".into()))
        }
    }

    /// Rows `(a3.X, a3.P, a4.X, a4.P)`, columns `(x1, p1, x2, p2)`.
    pub fn as_matrix(&self) -> DMatrix<f64> {
        #[rustfmt::skip]
        let m = DMatrix::from_row_slice(4, 4, &[
            self.g_x1_a3, 0.0, self.g_x2_a3, 0.0,
            0.0, self.g_p1_a3, 0.0, self.g_p2_a3,
            self.g_x1_a4, 0.0, self.g_x2_a4, 0.0,
            0.0, self.g_p1_a4, 0.0, self.g_p2_a4,
        ]);
        m
    }
}

/// Default gains for reflectivity `R` (`paper_gains`).
pub fn default_gains(reflectivity: f64) -> Result<FeedforwardGains> {
    FeedforwardGains::for_reflectivity(reflectivity)
}

/// Homodyne outcomes of both input stations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub x1: f64,
    pub p1: f64,
    pub x2: f64,
    pub p2: f64,
}

/// Displacements applied at the two output stations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplacementSignal {
    pub x_a3: f64,
    pub p_a3: f64,
    pub x_a4: f64,
    pub p_a4: f64,
}

pub fn displacement_signal(rec: &MeasurementRecord, gains: &FeedforwardGains) -> DisplacementSignal {
    DisplacementSignal {
        x_a3: gains.g_x1_a3 * rec.x1 + gains.g_x2_a3 * rec.x2,
        p_a3: gains.g_p1_a3 * rec.p1 + gains.g_p2_a3 * rec.p2,
        x_a4: gains.g_x1_a4 * rec.x1 + gains.g_x2_a4 * rec.x2,
        p_a4: gains.g_p1_a4 * rec.p1 + gains.g_p2_a4 * rec.p2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub reflectivity: f64,
    pub r1: f64,
    pub r2: f64,
    #[serde(default)]
    pub input_s: InputSpec,
    #[serde(default)]
    pub input_i: InputSpec,
    /// Overrides the default gains when set.
    #[serde(default)]
    pub gains: Option<FeedforwardGains>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub shots: usize,
}

impl ProtocolConfig {
    pub fn new(reflectivity: f64, r1: f64, r2: f64) -> Self {
        ProtocolConfig {
            reflectivity,
            r1,
            r2,
            input_s: InputSpec::Vacuum,
            input_i: InputSpec::Vacuum,
            gains: None,
            seed: 0,
            shots: 0,
        }
    }

    pub fn with_inputs(mut self, input_s: InputSpec, input_i: InputSpec) -> Self {
        self.input_s = input_s;
        self.input_i = input_i;
        self
    }

    pub fn with_shots(mut self, shots: usize, seed: u64) -> Self {
        self.shots = shots;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_reflectivity(self.reflectivity)?;
        check_squeezing("r1", self.r1)?;
        check_squeezing("r2", self.r2)?;
        self.input_s.validate()?;
        self.input_i.validate()?;
        if let Some(g) = &self.gains {
            g.validate()?;
        }
        Ok(())
    }

    pub fn gain(&self) -> f64 {
        gain_factor(self.reflectivity)
    }

    /// Effective feedforward gains.
    pub fn gains(&self) -> Result<FeedforwardGains> {
        match self.gains {
            Some(g) => Ok(g),
            None => FeedforwardGains::for_reflectivity(self.reflectivity),
        }
    }
}

/// Ideal local NOPA: the two-mode squeezer with power gain `G` on
/// `(signal, idler)`.
pub fn ideal_nopa(gain: f64, state: &GaussianState, modes: [&ModeLabel; 2]) -> Result<GaussianState> {
    state.apply(&two_mode_squeezer_map(gain)?, &[modes[0].clone(), modes[1].clone()])
}

/// Ideal NOPA output for the configured inputs, labeled `out_s`, `out_i`.
pub fn ideal_output(config: &ProtocolConfig) -> Result<GaussianState> {
    config.validate()?;
    let inputs = config
        .input_s
        .state(labels::OUT_S)?
        .tensor(&config.input_i.state(labels::OUT_I)?)?;
    ideal_nopa(config.gain(), &inputs, [&l(labels::OUT_S), &l(labels::OUT_I)])
}

fn epr_sources(r1: f64, r2: f64) -> Result<GaussianState> {
    check_squeezing("r1", r1)?;
    check_squeezing("r2", r2)?;
    GaussianState::epr(r1, [l(labels::A_EPR1), l(labels::A_EPR2)])?
        .tensor(&GaussianState::epr(r2, [l(labels::B_EPR1), l(labels::B_EPR2)])?)
}

/// EPR pair carried by its preparation map.
fn epr_basis(r: f64, labels: [ModeLabel; 2]) -> Result<BasisSpec> {
    BasisSpec::pure(GaussianState::epr(r, labels)?, &epr_map(r)?)
}

fn epr_source_basis(r1: f64, r2: f64) -> Result<BasisSpec> {
    check_squeezing("r1", r1)?;
    check_squeezing("r2", r2)?;
    epr_basis(r1, [l(labels::A_EPR1), l(labels::A_EPR2)])?
        .tensor(&epr_basis(r2, [l(labels::B_EPR1), l(labels::B_EPR2)])?)
}

fn mix_resource_state(state: &GaussianState, reflectivity: f64) -> Result<GaussianState> {
    state
        .apply(&beam_splitter_map(reflectivity)?, &[l(labels::A_EPR2), l(labels::B_EPR2)])?
        .relabel(&l(labels::A_EPR1), labels::A1)?
        .relabel(&l(labels::A_EPR2), labels::A2)?
        .relabel(&l(labels::B_EPR2), labels::A3)?
        .relabel(&l(labels::B_EPR1), labels::A4)
}

fn mix_resource_ledger(ledger: &HeisenbergLedger, reflectivity: f64) -> Result<HeisenbergLedger> {
    ledger
        .apply(&beam_splitter_map(reflectivity)?, &[l(labels::A_EPR2), l(labels::B_EPR2)])?
        .relabel(&l(labels::A_EPR1), labels::A1)?
        .relabel(&l(labels::A_EPR2), labels::A2)?
        .relabel(&l(labels::B_EPR2), labels::A3)?
        .relabel(&l(labels::B_EPR1), labels::A4)
}

/// Four-mode resource `a1 = a_EPR1`, `a2 = c_t`, `a3 = c_r`, `a4 = b_EPR1`
/// from both engines, built from identical wiring.
pub fn build_four_mode_state(
    r1: f64,
    r2: f64,
    reflectivity: f64,
) -> Result<(GaussianState, HeisenbergLedger)> {
    check_reflectivity_closed(reflectivity)?;
    let sources = epr_sources(r1, r2)?;
    let ledger = HeisenbergLedger::new(epr_source_basis(r1, r2)?);
    let order = [l(labels::A1), l(labels::A2), l(labels::A3), l(labels::A4)];
    let state = mix_resource_state(&sources, reflectivity)?.marginal(&order)?;
    Ok((state, mix_resource_ledger(&ledger, reflectivity)?))
}

fn check_reflectivity_closed(reflectivity: f64) -> Result<()> {
    if (0.0..=1.0).contains(&reflectivity) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "reflectivity {reflectivity} outside [0, 1]"
        )))
    }
}

/// Inputs plus the four-mode resource, before any station acts.
#[derive(Debug, Clone)]
pub struct PreparedNetwork {
    /// Modes `in_s, in_i, a1, a2, a4, a3`.
    pub state: GaussianState,
    pub ledger: HeisenbergLedger,
    /// Product state of the inputs and EPR sources.
    pub sources: GaussianState,
}

pub fn prepare(config: &ProtocolConfig) -> Result<PreparedNetwork> {
    config.validate()?;
    let sources = config
        .input_s
        .state(labels::IN_S)?
        .tensor(&config.input_i.state(labels::IN_I)?)?
        .tensor(&epr_sources(config.r1, config.r2)?)?;
    Ok(PreparedNetwork {
        state: mix_resource_state(&sources, config.reflectivity)?,
        ledger: prepare_ledger(config)?,
        sources,
    })
}

/// Ledger half of [`prepare`] alone. The covariance engine is skipped, which
/// keeps strongly squeezed configurations away from rounded `cosh 2r`
/// covariance entries.
pub fn prepare_ledger(config: &ProtocolConfig) -> Result<HeisenbergLedger> {
    config.validate()?;
    let basis = BasisSpec::new(config.input_s.state(labels::IN_S)?)?
        .tensor(&BasisSpec::new(config.input_i.state(labels::IN_I)?)?)?
        .tensor(&epr_source_basis(config.r1, config.r2)?)?;
    mix_resource_ledger(&HeisenbergLedger::new(basis), config.reflectivity)
}

/// Which side of the amplifier a station serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Signal,
    Idler,
}

impl Side {
    /// `(resource mode, input mode, sum port, difference port)`.
    fn input_wiring(self) -> (&'static str, &'static str, &'static str, &'static str) {
        match self {
            Side::Signal => (labels::A1, labels::IN_S, labels::S_SUM, labels::S_DIFF),
            Side::Idler => (labels::A2, labels::IN_I, labels::I_SUM, labels::I_DIFF),
        }
    }

    /// Ports carrying the measured `(x, p)`. The signal station reads
    /// `x1 = (X_a1 + X_in)/√2` on the sum port and `p1 = (P_a1 - P_in)/√2` on
    /// the difference port; the idler station reads `x2 = (X_a2 - X_in)/√2`
    /// on the difference port and `p2 = (P_a2 + P_in)/√2` on the sum port.
    fn measured_ports(self) -> (&'static str, &'static str) {
        let (_, _, sum, diff) = self.input_wiring();
        match self {
            Side::Signal => (sum, diff),
            Side::Idler => (diff, sum),
        }
    }

    fn output_modes(self) -> (&'static str, &'static str) {
        match self {
            Side::Signal => (labels::A3, labels::OUT_S),
            Side::Idler => (labels::A4, labels::OUT_I),
        }
    }
}

/// Physicality of one intermediate state.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCheck {
    pub stage: String,
    pub physicality: Physicality,
}

fn record_stage(trace: &mut Option<&mut Vec<StageCheck>>, stage: &str, state: &GaussianState) {
    if let Some(t) = trace.as_deref_mut() {
        t.push(StageCheck {
            stage: stage.to_owned(),
            physicality: state.check_physicality(),
        });
    }
}

fn combine_input(state: &GaussianState, side: Side) -> Result<GaussianState> {
    let (resource, input, sum, diff) = side.input_wiring();
    state
        .apply(&balanced_combiner_map(), &[l(resource), l(input)])?
        .relabel(&l(resource), sum)?
        .relabel(&l(input), diff)
}

/// Input-station action on the covariance engine: combine, homodyne `x`
/// then `p`, and discard both ports.
pub fn input_station<R: Rng + ?Sized>(
    state: &GaussianState,
    side: Side,
    rng: &mut R,
    mut trace: Option<&mut Vec<StageCheck>>,
) -> Result<((f64, f64), GaussianState)> {
    let combined = combine_input(state, side)?;
    record_stage(&mut trace, &format!("{side:?} input combined"), &combined);
    let (x_port, p_port) = side.measured_ports();
    let (x, after_x) = combined.homodyne(&l(x_port), Quadrature::X, rng)?;
    record_stage(&mut trace, &format!("{side:?} input x measured"), &after_x);
    let (p, after_p) = after_x.homodyne(&l(p_port), Quadrature::P, rng)?;
    record_stage(&mut trace, &format!("{side:?} input p measured"), &after_p);
    Ok(((x, p), after_p))
}

/// Output-station action: displace the local resource mode and hand it out
/// as the amplifier output. The idler side reads out with a π phase
/// reference.
pub fn output_station(state: &GaussianState, side: Side, dx: f64, dp: f64) -> Result<GaussianState> {
    let (resource, output) = side.output_modes();
    let displaced = state.displace(&l(resource), dx, dp)?;
    let phased = match side {
        Side::Signal => displaced,
        Side::Idler => displaced.apply(&phase_flip_map(), &[l(resource)])?,
    };
    phased.relabel(&l(resource), output)
}

/// Heisenberg-picture wiring of the whole protocol; returns a ledger over
/// `out_s`, `out_i`.
pub fn ledger_pipeline(
    prepared: &HeisenbergLedger,
    gains: &FeedforwardGains,
) -> Result<HeisenbergLedger> {
    let mut ledger = prepared.clone();
    for side in [Side::Signal, Side::Idler] {
        let (resource, input, sum, diff) = side.input_wiring();
        ledger = ledger
            .apply(&balanced_combiner_map(), &[l(resource), l(input)])?
            .relabel(&l(resource), sum)?
            .relabel(&l(input), diff)?;
    }
    let (sx, sp) = Side::Signal.measured_ports();
    let (ix, ip) = Side::Idler.measured_ports();
    let measured = [
        (l(sx), Quadrature::X),
        (l(sp), Quadrature::P),
        (l(ix), Quadrature::X),
        (l(ip), Quadrature::P),
    ];
    let targets = [
        (l(labels::A3), Quadrature::X),
        (l(labels::A3), Quadrature::P),
        (l(labels::A4), Quadrature::X),
        (l(labels::A4), Quadrature::P),
    ];
    ledger
        .measure_feedforward(&measured, &targets, &gains.as_matrix())?
        .apply(&phase_flip_map(), &[l(labels::A4)])?
        .relabel(&l(labels::A3), labels::OUT_S)?
        .relabel(&l(labels::A4), labels::OUT_I)
}

/// Independent random stream for one shot.
pub fn shot_rng(seed: u64, shot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shot);
    rng
}

/// Draws realizations of the output quadratures from a conditioned state.
#[derive(Debug, Clone)]
pub struct OutputSampler {
    factor: DMatrix<f64>,
}

impl OutputSampler {
    /// Factor `L` with `L Lᵀ = cov`, from the symmetric eigendecomposition so
    /// singular covariances are allowed.
    pub fn new(cov: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(cov.clone());
        let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        OutputSampler {
            factor: &eig.eigenvectors * DMatrix::from_diagonal(&roots),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, mean: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        mean + &self.factor * z
    }
}

/// Everything one shot produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotTranscript {
    pub record: MeasurementRecord,
    pub signal: DisplacementSignal,
    /// Conditioned output mean over `(out_s.X, out_s.P, out_i.X, out_i.P)`.
    pub output_mean: [f64; 4],
    /// One realization of the output quadratures.
    pub draw: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: ProtocolConfig,
    pub gains: FeedforwardGains,
    /// Exact output ledger over `out_s`, `out_i`.
    pub ledger: HeisenbergLedger,
    /// Unconditional output moments from the ledger.
    pub analytic: GaussianState,
    /// Output covariance conditioned on the homodyne outcomes; the same for
    /// every shot.
    pub conditional_cov: Option<DMatrix<f64>>,
    pub shots: Vec<ShotTranscript>,
    pub sampled: Option<SampledMoments>,
    pub physicality: Vec<StageCheck>,
}

impl RunResult {
    pub fn output_modes() -> [ModeLabel; 2] {
        [l(labels::OUT_S), l(labels::OUT_I)]
    }

    /// Smallest `cov + iΩ/2` eigenvalue across all checked stages.
    pub fn min_physicality_eigenvalue(&self) -> f64 {
        self.physicality
            .iter()
            .map(|s| s.physicality.min_eigenvalue)
            .fold(f64::INFINITY, f64::min)
    }

    /// JSON dump with at most `transcript_limit` per-shot transcripts.
    pub fn to_json(&self, transcript_limit: usize) -> Result<String> {
        #[derive(Serialize)]
        struct Sampled {
            count: usize,
            mean: Vec<f64>,
            cov: Vec<Vec<f64>>,
        }
        #[derive(Serialize)]
        struct Stage<'a> {
            stage: &'a str,
            symmetry_residual: f64,
            min_eigenvalue: f64,
        }
        #[derive(Serialize)]
        struct Shot<'a> {
            record: &'a MeasurementRecord,
            signal: &'a DisplacementSignal,
            output_mean: &'a [f64; 4],
            draw: &'a [f64; 4],
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            config: &'a ProtocolConfig,
            gain: f64,
            gains: &'a FeedforwardGains,
            transfer: TransferReport,
            added_noise: AddedNoise,
            analytic: &'a GaussianState,
            conditional_cov: Option<Vec<Vec<f64>>>,
            sampled: Option<Sampled>,
            physicality: Vec<Stage<'a>>,
            shots_total: usize,
            transcripts: Vec<Shot<'a>>,
        }
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
        };
        let doc = Doc {
            config: &self.config,
            gain: self.config.gain(),
            gains: &self.gains,
            transfer: TransferReport::from_ledger(&self.ledger)?,
            added_noise: added_noise(self.config.r1, self.config.r2, self.config.reflectivity)?,
            analytic: &self.analytic,
            conditional_cov: self.conditional_cov.as_ref().map(rows),
            sampled: self.sampled.as_ref().map(|s| Sampled {
                count: s.count,
                mean: s.mean.iter().copied().collect(),
                cov: rows(&s.cov),
            }),
            physicality: self
                .physicality
                .iter()
                .map(|s| Stage {
                    stage: &s.stage,
                    symmetry_residual: s.physicality.symmetry_residual,
                    min_eigenvalue: s.physicality.min_eigenvalue,
                })
                .collect(),
            shots_total: self.shots.len(),
            transcripts: self
                .shots
                .iter()
                .take(transcript_limit)
                .map(|s| Shot {
                    record: &s.record,
                    signal: &s.signal,
                    output_mean: &s.output_mean,
                    draw: &s.draw,
                })
                .collect(),
        };
        Ok(json::to_string(&doc))
    }
}

/// Accumulates per-shot outcomes into a [`RunResult`]. Shared by the direct
/// pipeline and the message-passing network so both aggregate identically.
pub(crate) struct ShotCollector {
    sampler: Option<OutputSampler>,
    conditional_cov: Option<DMatrix<f64>>,
    moments: MomentAccumulator,
    shots: Vec<ShotTranscript>,
}

impl ShotCollector {
    pub(crate) fn new(capacity: usize) -> Self {
        ShotCollector {
            sampler: None,
            conditional_cov: None,
            moments: MomentAccumulator::new(4),
            shots: Vec::with_capacity(capacity),
        }
    }

    /// Records one shot; `output` must be over `(out_s, out_i)`.
    pub(crate) fn push<R: Rng + ?Sized>(
        &mut self,
        record: MeasurementRecord,
        signal: DisplacementSignal,
        output: &GaussianState,
        rng: &mut R,
    ) {
        let sampler = self.sampler.get_or_insert_with(|| OutputSampler::new(output.cov()));
        self.conditional_cov.get_or_insert_with(|| output.cov().clone());
        let draw = sampler.draw(output.mean(), rng);
        let draw = [draw[0], draw[1], draw[2], draw[3]];
        self.moments.push(&draw);
        let m = output.mean();
        self.shots.push(ShotTranscript {
            record,
            signal,
            output_mean: [m[0], m[1], m[2], m[3]],
            draw,
        });
    }

    pub(crate) fn finish(
        self,
        config: &ProtocolConfig,
        gains: FeedforwardGains,
        ledger: HeisenbergLedger,
        physicality: Vec<StageCheck>,
    ) -> Result<RunResult> {
        let analytic = ledger.to_state(&RunResult::output_modes())?;
        Ok(RunResult {
            config: config.clone(),
            gains,
            ledger,
            analytic,
            conditional_cov: self.conditional_cov,
            sampled: self.moments.finish(),
            shots: self.shots,
            physicality,
        })
    }
}

/// Physicality of the preparation stages and of the exact output.
pub(crate) fn preparation_checks(prepared: &PreparedNetwork) -> Vec<StageCheck> {
    vec![
        StageCheck {
            stage: "sources".into(),
            physicality: prepared.sources.check_physicality(),
        },
        StageCheck {
            stage: "four-mode resource".into(),
            physicality: prepared.state.check_physicality(),
        },
    ]
}

/// Runs `config.shots` rounds on the covariance engine and the exact ledger
/// once.
pub fn run_protocol(config: &ProtocolConfig) -> Result<RunResult> {
    let prepared = prepare(config)?;
    let gains = config.gains()?;
    let ledger = ledger_pipeline(&prepared.ledger, &gains)?;
    let mut physicality = preparation_checks(&prepared);
    let outputs = RunResult::output_modes();
    let mut collector = ShotCollector::new(config.shots);
    for shot in 0..config.shots {
        let mut rng = shot_rng(config.seed, shot as u64);
        let mut trace = (shot == 0).then_some(&mut physicality);
        let ((x1, p1), state) = input_station(&prepared.state, Side::Signal, &mut rng, trace.as_deref_mut())?;
        let ((x2, p2), state) = input_station(&state, Side::Idler, &mut rng, trace.as_deref_mut())?;
        let record = MeasurementRecord { x1, p1, x2, p2 };
        let signal = displacement_signal(&record, &gains);
        let state = output_station(&state, Side::Signal, signal.x_a3, signal.p_a3)?;
        let state = output_station(&state, Side::Idler, signal.x_a4, signal.p_a4)?;
        record_stage(&mut trace, "outputs displaced", &state);
        let output = state.marginal(&outputs)?;
        collector.push(record, signal, &output, &mut rng);
    }
    let result = collector.finish(config, gains, ledger, physicality)?;
    let mut result = result;
    result.physicality.push(StageCheck {
        stage: "exact output".into(),
        physicality: result.analytic.check_physicality(),
    });
    Ok(result)
}

/// Ledger coefficients of the output rows on every basis quadrature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferReport {
    /// Column names, `mode.X` / `mode.P` over the basis.
    pub basis: Vec<String>,
    /// `(row name, coefficients)` for `out_s.X`, `out_s.P`, `out_i.X`, `out_i.P`.
    pub rows: Vec<(String, Vec<f64>)>,
}

impl TransferReport {
    pub fn from_ledger(ledger: &HeisenbergLedger) -> Result<Self> {
        let basis = ledger
            .basis()
            .modes()
            .iter()
            .flat_map(|m| [format!("{m}.X"), format!("{m}.P")])
            .collect();
        let mut rows = Vec::new();
        for m in RunResult::output_modes() {
            for q in [Quadrature::X, Quadrature::P] {
                rows.push((format!("{m}.{q}"), ledger.row(&m, q)?.iter().copied().collect()));
            }
        }
        Ok(TransferReport { basis, rows })
    }

    /// Coefficient of `row` (e.g. `out_s.X`) on `column` (e.g. `in_s.X`).
    pub fn coefficient(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.basis.iter().position(|b| b == column)?;
        self.rows.iter().find(|(r, _)| r == row).map(|(_, v)| v[c])
    }
}

/// `transfer_report`: output coefficients for `config` (independent of the
/// input states and squeezing).
pub fn transfer_report(config: &ProtocolConfig) -> Result<TransferReport> {
    TransferReport::from_ledger(&ledger_pipeline(&prepare_ledger(config)?, &config.gains()?)?)
}

/// Output variance beyond the ideal NOPA for vacuum inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AddedNoise {
    pub out_s_x: f64,
    pub out_s_p: f64,
    pub out_i_x: f64,
    pub out_i_p: f64,
}

/// Closed-form excess noise from finite squeezing:
/// `(2/(1-R)) e^{-2r1}` on the signal and `2e^{-2r2} + (2R/(1-R)) e^{-2r1}`
/// on the idler, for both quadratures.
pub fn added_noise(r1: f64, r2: f64, reflectivity: f64) -> Result<AddedNoise> {
    check_reflectivity(reflectivity)?;
    check_squeezing("r1", r1)?;
    check_squeezing("r2", r2)?;
    let e1 = (-2.0 * r1).exp();
    let e2 = (-2.0 * r2).exp();
    let signal = 2.0 / (1.0 - reflectivity) * e1;
    let idler = 2.0 * e2 + 2.0 * reflectivity / (1.0 - reflectivity) * e1;
    Ok(AddedNoise {
        out_s_x: signal,
        out_s_p: signal,
        out_i_x: idler,
        out_i_p: idler,
    })
}
