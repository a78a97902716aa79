use std::path::PathBuf;

use nopa_core::protocol::run_protocol;
use nopa_core::station::{
    run_network, ClassicalMessage, FifoTransport, InterleavingTransport, Role, Transcript,
};
use nopa_core::ProtocolConfig;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn golden_config() -> ProtocolConfig {
    ProtocolConfig::new(0.5, 1.0, 1.0).with_shots(4, 7)
}

/// Regenerates fixtures when `NOPA_BLESS` is set.
fn check_golden(name: &str, actual: &str) {
    let path = fixture(name);
    if std::env::var_os("NOPA_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap();
    assert_eq!(actual, expected, "{} drifted", path.display());
}

#[test]
fn golden_transcript_is_reproduced() {
    let (_, transcript) = run_network(&golden_config(), &mut FifoTransport::new()).unwrap();
    check_golden("transcript_seed7.ndjson", &transcript.to_ndjson());
}

#[test]
fn golden_transcript_reencodes_byte_identically() {
    let text = std::fs::read_to_string(fixture("transcript_seed7.ndjson")).unwrap();
    assert_eq!(Transcript::reencode(&text).unwrap(), text);
    let messages = Transcript::parse(&text).unwrap();
    assert_eq!(messages.len(), 4 * 4);
}

#[test]
fn seed_seven_matches_direct_pipeline() {
    let cfg = ProtocolConfig::new(0.5, 1.0, 1.0).with_shots(200, 7);
    let direct = run_protocol(&cfg).unwrap();
    let (net, _) = run_network(&cfg, &mut FifoTransport::new()).unwrap();
    for (a, b) in direct.shots.iter().zip(&net.shots) {
        assert_eq!(a.record, b.record);
        for i in 0..4 {
            assert!((a.output_mean[i] - b.output_mean[i]).abs() <= 1e-12);
            assert!((a.draw[i] - b.draw[i]).abs() <= 1e-12);
        }
    }
    let (sa, sb) = (direct.sampled.unwrap(), net.sampled.unwrap());
    assert!((&sa.mean - &sb.mean).amax() <= 1e-12);
    assert!((&sa.cov - &sb.cov).amax() <= 1e-12);
}

#[test]
fn interleaving_does_not_change_the_result() {
    let cfg = ProtocolConfig::new(0.3, 0.8, 1.2).with_shots(50, 11);
    let (base, base_tx) = run_network(&cfg, &mut FifoTransport::new()).unwrap();
    let mut orders_seen = std::collections::BTreeSet::new();
    for seed in 0..6 {
        let (other, tx) = run_network(&cfg, &mut InterleavingTransport::new(seed)).unwrap();
        assert_eq!(base.shots, other.shots);
        let senders: Vec<Role> = tx.deliveries.iter().map(|d| d.from).collect();
        orders_seen.insert(format!("{senders:?}"));
        // Same multiset of messages, possibly reordered.
        let mut a = Transcript::parse(&base_tx.to_ndjson()).unwrap();
        let mut b = Transcript::parse(&tx.to_ndjson()).unwrap();
        let key = |m: &ClassicalMessage| (m.seq(), m.from());
        a.sort_by_key(key);
        b.sort_by_key(key);
        assert_eq!(a, b);
    }
    assert!(orders_seen.len() > 1, "interleaving transport never reordered");
}

#[test]
fn every_message_is_delivered_to_both_outputs() {
    let (_, tx) = run_network(&golden_config(), &mut FifoTransport::new()).unwrap();
    for shot in 0..4u64 {
        for from in [Role::InputS, Role::InputI] {
            let mut to: Vec<Role> = tx
                .deliveries
                .iter()
                .filter(|d| d.from == from && ClassicalMessage::decode(&d.bytes).unwrap().seq() == shot)
                .map(|d| d.to)
                .collect();
            to.sort();
            assert_eq!(to, vec![Role::OutputS, Role::OutputI]);
        }
    }
}
