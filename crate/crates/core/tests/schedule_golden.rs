use std::fs;
use std::path::PathBuf;

use ancilla_readout::mhz_to_angular;
use ancilla_readout::schedule::{build_copy_schedule, Envelope, Schedule};

fn golden(name: &str) -> Schedule {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap()
}

fn assert_matches(actual: &Schedule, expected: &Schedule) {
    assert_eq!(actual.n_ancillae, expected.n_ancillae);
    assert_eq!(actual.segments.len(), expected.segments.len());
    for (a, e) in actual.segments.iter().zip(&expected.segments) {
        assert_eq!(a.target, e.target);
        assert_eq!(a.envelope, e.envelope);
        assert_eq!(a.phase_sign, e.phase_sign);
        assert!((a.amplitude - e.amplitude).abs() <= 1e-12 * e.amplitude);
        // shaped durations come from an area solve at 1e-9 relative
        assert!(((a.duration - e.duration) / e.duration).abs() <= 1e-9, "{} vs {}", a.duration, e.duration);
    }
}

#[test]
fn shaped_three_ancilla_schedule() {
    let s = build_copy_schedule(3, 1.0, Envelope::Shaped).unwrap();
    assert_matches(&s, &golden("copy_n3_shaped.json"));
}

#[test]
fn square_two_ancilla_schedule_at_8_mhz() {
    let s = build_copy_schedule(2, mhz_to_angular(8.0), Envelope::Square).unwrap();
    assert_matches(&s, &golden("copy_n2_square_8mhz.json"));
}

#[test]
fn record_round_trips() {
    let s = build_copy_schedule(4, 2.5, Envelope::Shaped).unwrap();
    let text = serde_json::to_string(&s).unwrap();
    assert!(text.contains("\"ancilla_1R\"") && text.contains("\"shaped\""));
    let back: Schedule = serde_json::from_str(&text).unwrap();
    assert_eq!(back, s);
}
