mod common;

use std::time::Instant;

use sd_dane::discovery::Variant;

use common::model::Explorer;
use common::props;

#[test]
fn wire_roundtrip_10k() {
    props::wire_roundtrip(10_000).unwrap();
}

#[test]
fn decoder_never_panics_on_arbitrary_bytes() {
    props::decoder_total(5_000).unwrap();
}

#[test]
fn key_agreement_symmetric_1k_pairs() {
    props::key_agreement(1_000).unwrap();
}

#[test]
fn scope_policy_matrix_is_diagonal() {
    let cells = props::scope_policy_matrix();
    assert_eq!(cells.len(), 9);
    for cell in cells {
        assert_eq!(cell.actual, cell.expected, "{cell:?}");
    }
}

// The acceptance target runs the dnssec variant to depth 12.
#[test]
fn no_session_key_before_mutual_authentication() {
    let pair = common::pair();
    for (variant, depth) in [(Variant::Dnssec, 10), (Variant::PreDeployed, 8)] {
        let started = Instant::now();
        let report = Explorer::new(&pair, variant, depth).run();
        eprintln!(
            "{variant}: depth {} transitions {} states {} keyed {} in {:.1?}",
            report.depth,
            report.transitions,
            report.distinct_states,
            report.keyed_states,
            started.elapsed()
        );
        assert!(report.violations.is_empty(), "{:#?}", report.violations);
        assert!(
            report.keyed_states > 0,
            "handshake never completed within depth"
        );
    }
}

#[test]
fn model_check_catches_unauthenticated_variant() {
    let pair = common::pair();
    let report = Explorer::new(&pair, Variant::Vanilla, 8).run();
    assert!(!report.violations.is_empty());
}
