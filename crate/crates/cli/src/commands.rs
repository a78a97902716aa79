use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use nopa_core::criteria::{cluster_combos, evaluate, ghz_combos, nopa_criteria, sig6, CriterionReport};
use nopa_core::json;
use nopa_core::protocol::{
    added_noise, build_four_mode_state, ideal_output, labels, ledger_pipeline, prepare_ledger,
    run_protocol, AddedNoise, TransferReport,
};
use nopa_core::station::{run_network, FifoTransport};
use nopa_core::stats::{consistency, ZScore};
use nopa_core::{GaussianState, ModeLabel, ProtocolConfig, Quadrature, QuadratureCombination, RunResult};

use crate::config::{CliConfig, Combos, Format, DEFAULT_MONTECARLO_SHOTS, MIN_MONTECARLO_SHOTS};
use crate::CliError;

/// Per-shot transcripts kept in RunResult JSON files.
pub const TRANSCRIPT_LIMIT: usize = 1000;
/// `|z|` above which the Monte Carlo self-test fails.
pub const Z_THRESHOLD: f64 = 6.0;
/// Allowed deviation between the direct and message-passing pipelines.
pub const NETWORK_TOLERANCE: f64 = 1e-12;

fn sci(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content)?;
    Ok(())
}

/// `text` to the output file if one is set, otherwise to `out`.
fn emit(cfg: &CliConfig, text: &str, out: &mut dyn Write) -> Result<(), CliError> {
    match &cfg.output {
        Some(path) => write_file(path, text),
        None => {
            out.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn ledger_value(result: &RunResult) -> serde_json::Value {
    serde_json::from_str(&result.ledger.to_json()).expect("ledger JSON parses")
}

const OUTPUT_QUADRATURES: [(&str, Quadrature); 4] = [
    (labels::OUT_S, Quadrature::X),
    (labels::OUT_S, Quadrature::P),
    (labels::OUT_I, Quadrature::X),
    (labels::OUT_I, Quadrature::P),
];

#[derive(Debug, Clone, Serialize)]
struct VarianceRow {
    quadrature: String,
    ledger: f64,
    ideal: f64,
    excess: f64,
    closed_form_excess: f64,
}

fn variance_rows(
    analytic: &GaussianState,
    ideal: &GaussianState,
    noise: &AddedNoise,
) -> Result<Vec<VarianceRow>, CliError> {
    let closed = [noise.out_s_x, noise.out_s_p, noise.out_i_x, noise.out_i_p];
    OUTPUT_QUADRATURES
        .iter()
        .zip(closed)
        .map(|(&(mode, quad), closed_form_excess)| {
            let combo = QuadratureCombination::new([(mode, quad, 1.0)])?;
            let ledger = analytic.combination_variance(&combo)?;
            let ideal = ideal.combination_variance(&combo)?;
            Ok(VarianceRow {
                quadrature: format!("{mode}.{quad}"),
                ledger,
                ideal,
                excess: ledger - ideal,
                closed_form_excess,
            })
        })
        .collect()
}

fn transfer_lines(report: &TransferReport) -> String {
    let mut s = String::new();
    for (row, coeffs) in &report.rows {
        let terms: Vec<String> = report
            .basis
            .iter()
            .zip(coeffs)
            .filter(|(_, c)| c.abs() > 1e-15)
            .map(|(b, c)| format!("{}{} {b}", if *c < 0.0 { "- " } else { "+ " }, sig6(c.abs())))
            .collect();
        let body = if terms.is_empty() { "0".to_string() } else { terms.join(" ") };
        let body = match body.strip_prefix("+ ") {
            Some(rest) => rest.to_string(),
            None => body.replacen("- ", "-", 1),
        };
        let _ = writeln!(s, "  {row} = {body}");
    }
    s
}

pub(crate) fn run(cfg: &CliConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let pc = cfg.protocol(0)?;
    let result = run_protocol(&pc)?;
    let ideal = ideal_output(&pc)?;
    let noise = added_noise(pc.r1, pc.r2, pc.reflectivity)?;
    let transfer = TransferReport::from_ledger(&result.ledger)?;
    let rows = variance_rows(&result.analytic, &ideal, &noise)?;
    let emit_ledger = cfg.emit_ledger.unwrap_or(false);

    if let Some(path) = &cfg.output {
        write_file(path, &result.to_json(TRANSCRIPT_LIMIT)?)?;
    }
    let text = match cfg.format {
        Some(Format::Json) => {
            #[derive(Serialize)]
            struct Doc<'a> {
                config: &'a ProtocolConfig,
                gain: f64,
                transfer: &'a TransferReport,
                variances: &'a [VarianceRow],
                added_noise: AddedNoise,
                min_physicality_eigenvalue: f64,
                #[serde(skip_serializing_if = "Option::is_none")]
                ledger: Option<serde_json::Value>,
            }
            let mut s = json::to_string(&Doc {
                config: &pc,
                gain: pc.gain(),
                transfer: &transfer,
                variances: &rows,
                added_noise: noise,
                min_physicality_eigenvalue: result.min_physicality_eigenvalue(),
                ledger: emit_ledger.then(|| ledger_value(&result)),
            });
            s.push('\n');
            s
        }
        Some(Format::Csv) => sweep_csv(&[sweep_row(&pc)?])?,
        None => {
            let mut s = String::new();
            let _ = writeln!(
                s,
                "nonlocal NOPA: R = {}, r1 = {}, r2 = {}",
                sig6(pc.reflectivity),
                sig6(pc.r1),
                sig6(pc.r2)
            );
            let _ = writeln!(s, "gain G = {}", sig6(pc.gain()));
            let _ = writeln!(s, "transfer (outputs over source quadratures):");
            s.push_str(&transfer_lines(&transfer));
            let _ = writeln!(s, "output variances:");
            let _ = writeln!(
                s,
                "  {:<10} {:>13} {:>13} {:>13} {:>13}",
                "quadrature", "ledger", "ideal NOPA", "excess", "closed form"
            );
            for r in &rows {
                let _ = writeln!(
                    s,
                    "  {:<10} {:>13} {:>13} {:>13} {:>13}",
                    r.quadrature,
                    sig6(r.ledger),
                    sig6(r.ideal),
                    sig6(r.excess),
                    sig6(r.closed_form_excess)
                );
            }
            let _ = writeln!(
                s,
                "min physicality eigenvalue: {}",
                sig6(result.min_physicality_eigenvalue())
            );
            if emit_ledger {
                let _ = writeln!(s, "ledger:\n{}", result.ledger.to_json());
            }
            s
        }
    };
    out.write_all(text.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
#[allow(non_snake_case)]
pub(crate) struct SweepRow {
    R: f64,
    r1: f64,
    r2: f64,
    G: f64,
    var_Xs: f64,
    var_Ps: f64,
    var_Xi: f64,
    var_Pi: f64,
    excess_Xs: f64,
    excess_Xi: f64,
}

const SWEEP_HEADER: [&str; 10] = [
    "R", "r1", "r2", "G", "var_Xs", "var_Ps", "var_Xi", "var_Pi", "excess_Xs", "excess_Xi",
];

fn sweep_row(pc: &ProtocolConfig) -> Result<SweepRow, CliError> {
    let ledger = ledger_pipeline(&prepare_ledger(pc)?, &pc.gains()?)?;
    let ideal = ideal_output(pc)?;
    let mut var = [0.0; 4];
    let mut ideal_var = [0.0; 4];
    for (k, &(mode, quad)) in OUTPUT_QUADRATURES.iter().enumerate() {
        let combo = QuadratureCombination::new([(mode, quad, 1.0)])?;
        var[k] = ledger.variance(&combo)?;
        ideal_var[k] = ideal.combination_variance(&combo)?;
    }
    Ok(SweepRow {
        R: pc.reflectivity,
        r1: pc.r1,
        r2: pc.r2,
        G: pc.gain(),
        var_Xs: var[0],
        var_Ps: var[1],
        var_Xi: var[2],
        var_Pi: var[3],
        excess_Xs: var[0] - ideal_var[0],
        excess_Xi: var[2] - ideal_var[2],
    })
}

fn sweep_csv(rows: &[SweepRow]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(std::io::Error::other(e));
    w.write_record(SWEEP_HEADER).map_err(io)?;
    for r in rows {
        w.write_record(
            [r.R, r.r1, r.r2, r.G, r.var_Xs, r.var_Ps, r.var_Xi, r.var_Pi, r.excess_Xs, r.excess_Xi]
                .map(sci),
        )
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("ASCII CSV"))
}

pub(crate) fn sweep(cfg: &CliConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let base = cfg.protocol(0)?;
    let reflectivities = match cfg.grid_reflectivity {
        Some(g) => g.points(),
        None => vec![base.reflectivity],
    };
    if let Some(bad) = reflectivities.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(CliError::Usage(format!("reflectivity grid point {bad} outside [0, 1)")));
    }
    let (r1s, r2s) = match cfg.grid_r {
        Some(g) => (g.points(), g.points()),
        None => (vec![base.r1], vec![base.r2]),
    };
    let mut rows = Vec::with_capacity(reflectivities.len() * r1s.len() * r2s.len());
    for &reflectivity in &reflectivities {
        for &r1 in &r1s {
            for &r2 in &r2s {
                let pc = ProtocolConfig {
                    reflectivity,
                    r1,
                    r2,
                    ..base.clone()
                };
                pc.validate()?;
                rows.push(sweep_row(&pc)?);
            }
        }
    }
    let text = match cfg.format {
        Some(Format::Json) => json::to_string(&rows) + "\n",
        _ => sweep_csv(&rows)?,
    };
    emit(cfg, &text, out)
}

fn load_state(path: &Path) -> Result<GaussianState, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read state {}: {e}", path.display())))?;
    GaussianState::from_json(&text)
        .map_err(|e| CliError::Usage(format!("state file {}: {e}", path.display())))
}

pub(crate) fn criteria(cfg: &CliConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let pc = cfg.protocol(0)?;
    let resource_modes = [labels::A1, labels::A2, labels::A3, labels::A4].map(ModeLabel::from);
    let state = match &cfg.state {
        Some(path) => {
            let state = load_state(path)?;
            if state.mode_count() != 4 {
                return Err(CliError::Usage(format!(
                    "criteria need a four-mode state, got {} modes",
                    state.mode_count()
                )));
            }
            state
        }
        None => build_four_mode_state(pc.r1, pc.r2, pc.reflectivity)?.0,
    };
    let combos = cfg.combos.unwrap_or_default();
    let (state, modes) = match combos {
        // The NOPA combinations refer to the resource labels; a loaded state
        // is matched to them by position.
        Combos::Nopa => {
            let mut s = state;
            let current: Vec<ModeLabel> = s.modes().to_vec();
            if current != resource_modes {
                let tmp: Vec<ModeLabel> = (0..4).map(|k| ModeLabel::from(format!("\u{0}{k}"))).collect();
                for (from, to) in current.iter().zip(&tmp) {
                    s = s.relabel(from, to.clone())?;
                }
                for (from, to) in tmp.iter().zip(&resource_modes) {
                    s = s.relabel(from, to.clone())?;
                }
            }
            (s, resource_modes.clone())
        }
        _ => {
            let m = state.modes();
            let modes = [m[0].clone(), m[1].clone(), m[2].clone(), m[3].clone()];
            (state, modes)
        }
    };
    let set = match combos {
        Combos::Nopa => nopa_criteria(pc.reflectivity)?,
        Combos::Cluster => cluster_combos(&modes)?,
        Combos::Ghz => ghz_combos(&modes)?,
    };
    let report = evaluate(&state, &set)?;
    let text = match cfg.format {
        Some(Format::Json) => report.to_json() + "\n",
        Some(Format::Csv) => criteria_csv(&report)?,
        None => report.to_table(),
    };
    emit(cfg, &text, out)
}

fn criteria_csv(report: &CriterionReport) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(std::io::Error::other(e));
    w.write_record(["criterion", "combination", "variance", "bound", "margin", "pass"])
        .map_err(io)?;
    for r in &report.results {
        w.write_record([
            r.label.clone(),
            r.combination.clone(),
            sci(r.variance),
            sci(r.bound),
            sci(r.margin),
            r.pass.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("UTF-8 CSV"))
}

/// Largest deviation between two runs of the same configuration.
fn run_deviation(a: &RunResult, b: &RunResult) -> f64 {
    if a.shots.len() != b.shots.len() {
        return f64::INFINITY;
    }
    let mut worst = 0f64;
    for (x, y) in a.shots.iter().zip(&b.shots) {
        for i in 0..4 {
            worst = worst
                .max((x.output_mean[i] - y.output_mean[i]).abs())
                .max((x.draw[i] - y.draw[i]).abs());
        }
    }
    match (&a.sampled, &b.sampled) {
        (Some(x), Some(y)) => worst
            .max((&x.mean - &y.mean).amax())
            .max((&x.cov - &y.cov).amax()),
        (None, None) => worst,
        _ => f64::INFINITY,
    }
}

pub(crate) fn montecarlo(cfg: &CliConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let pc = cfg.protocol(DEFAULT_MONTECARLO_SHOTS)?;
    if pc.shots < MIN_MONTECARLO_SHOTS {
        return Err(CliError::Usage(format!(
            "montecarlo needs at least {MIN_MONTECARLO_SHOTS} shots, got {}",
            pc.shots
        )));
    }
    let result = run_protocol(&pc)?;
    let sampled = result.sampled.as_ref().expect("at least two shots were drawn");
    let scores = consistency(&result.analytic, sampled);
    let max_z = scores.iter().map(|z| z.z.abs()).fold(0.0, f64::max);
    let network_deviation = if cfg.network.unwrap_or(false) {
        let (net, _) = run_network(&pc, &mut FifoTransport::new())?;
        Some(run_deviation(&result, &net))
    } else {
        None
    };
    if let Some(path) = &cfg.output {
        write_file(path, &result.to_json(TRANSCRIPT_LIMIT)?)?;
    }
    let z_ok = max_z <= Z_THRESHOLD;
    let network_ok = network_deviation.is_none_or(|d| d <= NETWORK_TOLERANCE);

    let text = match cfg.format {
        Some(Format::Json) => {
            #[derive(Serialize)]
            struct Doc<'a> {
                config: &'a ProtocolConfig,
                zscores: &'a [ZScore],
                max_abs_z: f64,
                z_threshold: f64,
                #[serde(skip_serializing_if = "Option::is_none")]
                network_max_deviation: Option<f64>,
                pass: bool,
                #[serde(skip_serializing_if = "Option::is_none")]
                ledger: Option<serde_json::Value>,
            }
            json::to_string(&Doc {
                config: &pc,
                zscores: &scores,
                max_abs_z: max_z,
                z_threshold: Z_THRESHOLD,
                network_max_deviation: network_deviation,
                pass: z_ok && network_ok,
                ledger: cfg.emit_ledger.unwrap_or(false).then(|| ledger_value(&result)),
            }) + "\n"
        }
        Some(Format::Csv) => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let io = |e: csv::Error| CliError::Io(std::io::Error::other(e));
            w.write_record(["statistic", "sampled", "expected", "std_error", "z"]).map_err(io)?;
            for z in &scores {
                w.write_record([z.label.clone(), sci(z.sampled), sci(z.expected), sci(z.std_error), sci(z.z)])
                    .map_err(io)?;
            }
            let bytes = w.into_inner().map_err(|e| CliError::Io(std::io::Error::other(e.to_string())))?;
            String::from_utf8(bytes).expect("UTF-8 CSV")
        }
        None => {
            let mut s = String::new();
            let _ = writeln!(
                s,
                "Monte Carlo: R = {}, r1 = {}, r2 = {}, shots = {}, seed = {}",
                sig6(pc.reflectivity),
                sig6(pc.r1),
                sig6(pc.r2),
                pc.shots,
                pc.seed
            );
            let width = scores.iter().map(|z| z.label.len()).max().unwrap_or(9).max(9);
            let _ = writeln!(
                s,
                "{:<width$}  {:>13}  {:>13}  {:>13}  {:>13}",
                "statistic", "sampled", "ledger", "std error", "z"
            );
            for z in &scores {
                let _ = writeln!(
                    s,
                    "{:<width$}  {:>13}  {:>13}  {:>13}  {:>13}",
                    z.label,
                    sig6(z.sampled),
                    sig6(z.expected),
                    sig6(z.std_error),
                    sig6(z.z)
                );
            }
            let _ = writeln!(s, "max |z| = {} (threshold {})", sig6(max_z), sig6(Z_THRESHOLD));
            if let Some(d) = network_deviation {
                let _ = writeln!(s, "network vs direct max deviation = {}", sig6(d));
            }
            let _ = writeln!(s, "self-test: {}", if z_ok && network_ok { "pass" } else { "fail" });
            if cfg.emit_ledger.unwrap_or(false) {
                let _ = writeln!(s, "ledger:\n{}", result.ledger.to_json());
            }
            s
        }
    };
    out.write_all(text.as_bytes())?;
    if !z_ok {
        return Err(CliError::SelfTest(format!(
            "max |z| = {max_z} exceeds {Z_THRESHOLD}"
        )));
    }
    if let Some(d) = network_deviation.filter(|_| !network_ok) {
        return Err(CliError::SelfTest(format!(
            "network and direct pipelines differ by {d:e}"
        )));
    }
    Ok(())
}
