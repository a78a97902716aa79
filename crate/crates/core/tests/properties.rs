use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use nopa_core::gaussian::{
    balanced_combiner_map, beam_splitter_map, phase_rotation_map, squeezer_map, symplectic_form,
    two_mode_squeezer_map,
};
use nopa_core::protocol::{added_noise, ledger_pipeline, prepare_ledger, run_protocol, transfer_report};
use nopa_core::station::{run_network, ClassicalMessage, InterleavingTransport, Role};
use nopa_core::{
    BasisSpec, GaussianState, HeisenbergLedger, ModeLabel, ProtocolConfig, Quadrature,
    QuadratureCombination, SymplecticOp,
};

const MODES: [&str; 3] = ["m0", "m1", "m2"];

fn label(i: usize) -> ModeLabel {
    ModeLabel::from(MODES[i])
}

#[derive(Debug, Clone)]
enum Step {
    Splitter(f64, usize, usize),
    Combiner(usize, usize),
    Squeeze(f64, usize),
    Rotate(f64, usize),
    Amplify(f64, usize, usize),
    Displace(f64, f64, usize),
}

fn pair() -> impl Strategy<Value = (usize, usize)> {
    (0..3usize, 1..3usize).prop_map(|(a, k)| (a, (a + k) % 3))
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        (0.0..=1.0f64, pair()).prop_map(|(r, (a, b))| Step::Splitter(r, a, b)),
        pair().prop_map(|(a, b)| Step::Combiner(a, b)),
        (-1.2..1.2f64, 0..3usize).prop_map(|(r, a)| Step::Squeeze(r, a)),
        (-3.2..3.2f64, 0..3usize).prop_map(|(t, a)| Step::Rotate(t, a)),
        (1.0..4.0f64, pair()).prop_map(|(g, (a, b))| Step::Amplify(g, a, b)),
        (-5.0..5.0f64, -5.0..5.0f64, 0..3usize).prop_map(|(x, p, a)| Step::Displace(x, p, a)),
    ]
}

/// The map and its target modes, or a displacement.
fn realize(step: &Step) -> Result<(SymplecticOp, Vec<ModeLabel>), (f64, f64, ModeLabel)> {
    Ok(match *step {
        Step::Splitter(r, a, b) => (beam_splitter_map(r).unwrap(), vec![label(a), label(b)]),
        Step::Combiner(a, b) => (balanced_combiner_map(), vec![label(a), label(b)]),
        Step::Squeeze(r, a) => (squeezer_map(r).unwrap(), vec![label(a)]),
        Step::Rotate(t, a) => (phase_rotation_map(t).unwrap(), vec![label(a)]),
        Step::Amplify(g, a, b) => (two_mode_squeezer_map(g).unwrap(), vec![label(a), label(b)]),
        Step::Displace(x, p, a) => return Err((x, p, label(a))),
    })
}

/// Thermal product state with the given occupations.
fn thermal(nu: &[f64; 3]) -> GaussianState {
    let diag: Vec<f64> = nu.iter().flat_map(|&n| [n, n]).collect();
    GaussianState::new(
        (0..3).map(label).collect(),
        DVector::zeros(6),
        DMatrix::from_diagonal(&DVector::from_vec(diag)),
    )
    .unwrap()
}

fn evolve(state: &GaussianState, steps: &[Step]) -> GaussianState {
    steps.iter().fold(state.clone(), |s, st| match realize(st) {
        Ok((op, targets)) => s.apply(&op, &targets).unwrap(),
        Err((x, p, m)) => s.displace(&m, x, p).unwrap(),
    })
}

fn evolve_ledger(ledger: &HeisenbergLedger, steps: &[Step]) -> HeisenbergLedger {
    steps.iter().fold(ledger.clone(), |l, st| match realize(st) {
        Ok((op, targets)) => l.apply(&op, &targets).unwrap(),
        Err((x, p, m)) => l.displace(&m, x, p).unwrap(),
    })
}

fn occupations() -> impl Strategy<Value = [f64; 3]> {
    [1.0..3.0f64, 1.0..3.0f64, 1.0..3.0f64]
}

proptest! {
    #[test]
    fn every_map_preserves_the_symplectic_form(steps in prop::collection::vec(step(), 1..6)) {
        for st in &steps {
            if let Ok((op, _)) = realize(st) {
                let scale = op.matrix().amax().powi(2).max(1.0);
                prop_assert!(op.symplectic_residual() <= 1e-12 * scale);
                let inv = op.inverse();
                let n = op.matrix().nrows();
                let id = op.matrix() * inv.matrix();
                prop_assert!((id - DMatrix::<f64>::identity(n, n)).amax() <= 1e-11 * scale);
            }
        }
    }

    #[test]
    fn evolution_keeps_states_physical(
        nu in occupations(),
        steps in prop::collection::vec(step(), 0..8),
    ) {
        let out = evolve(&thermal(&nu), &steps);
        let phys = out.check_physicality();
        let scale = out.cov().amax().max(1.0);
        prop_assert!(phys.min_eigenvalue >= -1e-12 * scale, "{phys:?}");
        prop_assert!(phys.symmetry_residual <= 1e-12);
    }

    #[test]
    fn combination_variance_matches_brute_force(
        nu in occupations(),
        steps in prop::collection::vec(step(), 0..6),
        coeffs in prop::collection::vec(-3.0..3.0f64, 6),
    ) {
        let state = evolve(&thermal(&nu), &steps);
        let terms: Vec<(ModeLabel, Quadrature, f64)> = (0..6)
            .map(|k| (label(k / 2), if k % 2 == 0 { Quadrature::X } else { Quadrature::P }, coeffs[k]))
            .filter(|t| t.2 != 0.0)
            .collect();
        prop_assume!(!terms.is_empty());
        let combo = QuadratureCombination::new(terms.clone()).unwrap();
        let mut brute = 0.0;
        let mut brute_mean = 0.0;
        for (ma, qa, ca) in &terms {
            let i = state.quadrature_index(ma, *qa).unwrap();
            brute_mean += ca * state.mean()[i];
            for (mb, qb, cb) in &terms {
                let j = state.quadrature_index(mb, *qb).unwrap();
                brute += ca * cb * state.cov()[(i, j)];
            }
        }
        let scale = state.cov().amax().max(1.0) * 100.0;
        prop_assert!((state.combination_variance(&combo).unwrap() - brute).abs() <= 1e-12 * scale);
        prop_assert!((state.combination_mean(&combo).unwrap() - brute_mean).abs() <= 1e-10 * scale);
    }

    #[test]
    fn ledger_and_covariance_engines_agree(
        nu in occupations(),
        steps in prop::collection::vec(step(), 0..8),
    ) {
        let start = thermal(&nu);
        let ledger = HeisenbergLedger::new(BasisSpec::new(start.clone()).unwrap());
        let a = evolve(&start, &steps);
        let b = evolve_ledger(&ledger, &steps).to_state(a.modes()).unwrap();
        let scale = a.cov().amax().max(1.0);
        prop_assert!((a.cov() - b.cov()).amax() <= 1e-10 * scale);
        prop_assert!((a.mean() - b.mean()).amax() <= 1e-10 * scale);
        prop_assert!(evolve_ledger(&ledger, &steps).commutator_residual() <= 1e-10 * scale);
    }

    #[test]
    fn protocol_ledger_keeps_canonical_commutators(
        r in 0.0..0.95f64,
        r1 in 0.0..3.0f64,
        r2 in 0.0..3.0f64,
    ) {
        let cfg = ProtocolConfig::new(r, r1, r2);
        let ledger = ledger_pipeline(&prepare_ledger(&cfg).unwrap(), &cfg.gains().unwrap()).unwrap();
        prop_assert!(ledger.commutator_residual() <= 1e-12);
    }

    #[test]
    fn excess_noise_matches_closed_form(
        r in 0.0..0.95f64,
        r1 in 0.0..4.0f64,
        r2 in 0.0..4.0f64,
    ) {
        let cfg = ProtocolConfig::new(r, r1, r2);
        let ledger = ledger_pipeline(&prepare_ledger(&cfg).unwrap(), &cfg.gains().unwrap()).unwrap();
        let g = 1.0 / (1.0 - r);
        let noise = added_noise(r1, r2, r).unwrap();
        let var = |m: &str, q| ledger.variance(&QuadratureCombination::new([(m, q, 1.0)]).unwrap()).unwrap();
        let tol = 1e-10 * g;
        prop_assert!((var("out_s", Quadrature::X) - (2.0 * g - 1.0) - noise.out_s_x).abs() <= tol);
        prop_assert!((var("out_s", Quadrature::P) - (2.0 * g - 1.0) - noise.out_s_p).abs() <= tol);
        prop_assert!((var("out_i", Quadrature::X) - (2.0 * g - 1.0) - noise.out_i_x).abs() <= tol);
        prop_assert!((var("out_i", Quadrature::P) - (2.0 * g - 1.0) - noise.out_i_p).abs() <= tol);
    }

    #[test]
    fn transfer_does_not_depend_on_squeezing(
        r in 0.0..0.95f64,
        r1 in 0.0..3.0f64,
        r2 in 0.0..3.0f64,
    ) {
        let a = transfer_report(&ProtocolConfig::new(r, r1, r2)).unwrap();
        let b = transfer_report(&ProtocolConfig::new(r, 0.0, 0.0)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn state_json_round_trips(
        nu in occupations(),
        steps in prop::collection::vec(step(), 0..6),
    ) {
        let state = evolve(&thermal(&nu), &steps);
        prop_assert_eq!(GaussianState::from_json(&state.to_json()).unwrap(), state);
    }

    #[test]
    fn ledger_json_round_trips(
        nu in occupations(),
        steps in prop::collection::vec(step(), 0..6),
    ) {
        let ledger = evolve_ledger(
            &HeisenbergLedger::new(BasisSpec::new(thermal(&nu)).unwrap()),
            &steps,
        );
        let text = ledger.to_json();
        let back = HeisenbergLedger::from_json(&text).unwrap();
        prop_assert_eq!(back.to_json(), text);
    }

    #[test]
    fn messages_round_trip(
        seq in any::<u64>(),
        from in prop::sample::select(Role::ALL.to_vec()),
        x in any::<f64>().prop_filter("finite", |v| v.is_finite()),
        p in any::<f64>().prop_filter("finite", |v| v.is_finite()),
    ) {
        let msg = ClassicalMessage::new(seq, from, x, p).unwrap();
        let bytes = msg.encode();
        let back = ClassicalMessage::decode(&bytes).unwrap();
        prop_assert_eq!(back, msg);
        prop_assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..128)) {
        let _ = ClassicalMessage::decode(&bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn network_equals_direct_pipeline(
        r in 0.0..0.95f64,
        r1 in 0.0..2.5f64,
        r2 in 0.0..2.5f64,
        seed in any::<u64>(),
        order in any::<u64>(),
    ) {
        let cfg = ProtocolConfig::new(r, r1, r2).with_shots(20, seed);
        let direct = run_protocol(&cfg).unwrap();
        let (net, transcript) = run_network(&cfg, &mut InterleavingTransport::new(order)).unwrap();
        prop_assert_eq!(transcript.deliveries.len(), 20 * 4);
        prop_assert_eq!(&direct.shots, &net.shots);
        let (a, b) = (direct.sampled.unwrap(), net.sampled.unwrap());
        prop_assert!((&a.cov - &b.cov).amax() <= 1e-12);
        prop_assert!((&a.mean - &b.mean).amax() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3))]

    /// Joint moments of (outcome, surviving X, surviving P) over 10⁵ shots
    /// match the pre-measurement covariance.
    #[test]
    fn homodyne_ensemble_matches_prior(
        r in 0.0..1.5f64,
        theta in -1.5..1.5f64,
        mx in -2.0..2.0f64,
        measure_p in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let (a, b) = (ModeLabel::from("a"), ModeLabel::from("b"));
        let state = GaussianState::epr(r, [a.clone(), b.clone()])
            .unwrap()
            .apply(&phase_rotation_map(theta).unwrap(), &[b.clone()])
            .unwrap()
            .displace(&a, mx, -0.5)
            .unwrap();
        let quad = if measure_p { Quadrature::P } else { Quadrature::X };
        let idx = [
            state.quadrature_index(&a, quad).unwrap(),
            state.quadrature_index(&b, Quadrature::X).unwrap(),
            state.quadrature_index(&b, Quadrature::P).unwrap(),
        ];
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::with_capacity(n);
        let mut cached: Option<(DMatrix<f64>, GaussianState)> = None;
        for _ in 0..n {
            let (outcome, post) = state.homodyne(&a, quad, &mut rng).unwrap();
            let chol = match &cached {
                Some((l, prev)) if prev.cov() == post.cov() => l.clone(),
                _ => {
                    let l = post.cov().clone().cholesky().unwrap().l();
                    cached = Some((l.clone(), post.clone()));
                    l
                }
            };
            let z = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
            let draw = post.mean() + chol * z;
            samples.push([outcome, draw[0], draw[1]]);
        }
        let nf = n as f64;
        let mean: Vec<f64> = (0..3).map(|k| samples.iter().map(|s| s[k]).sum::<f64>() / nf).collect();
        for i in 0..3 {
            let expected = state.mean()[idx[i]];
            let se = (state.cov()[(idx[i], idx[i])] / nf).sqrt();
            prop_assert!(((mean[i] - expected) / se).abs() < 5.0, "mean {i}");
            for j in i..3 {
                let sample_cov = samples
                    .iter()
                    .map(|s| (s[i] - mean[i]) * (s[j] - mean[j]))
                    .sum::<f64>()
                    / (nf - 1.0);
                let sij = state.cov()[(idx[i], idx[j])];
                let se = ((state.cov()[(idx[i], idx[i])] * state.cov()[(idx[j], idx[j])] + sij * sij) / nf).sqrt();
                prop_assert!(((sample_cov - sij) / se).abs() < 5.0, "cov {i}{j}: {sample_cov} vs {sij}");
            }
        }
    }
}

#[test]
fn symplectic_form_is_antisymmetric_with_square_minus_four() {
    let omega = symplectic_form(3);
    assert_eq!(&omega + omega.transpose(), DMatrix::zeros(6, 6));
    assert_eq!(&omega * &omega, -DMatrix::<f64>::identity(6, 6) * 4.0);
}
