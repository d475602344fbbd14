use ancilla_readout::cli::{self, ExperimentConfig};
use ancilla_readout::dynamics::{self, ExcitationDistributions, Logical};
use ancilla_readout::readout::{self, ReadoutParams};
use ancilla_readout::schedule::{build_copy_schedule, Envelope};
use ancilla_readout::{mhz_to_angular, stats};

#[test]
fn gate_sweep_picks_minimum_and_records_distributions() {
    let cfg = ExperimentConfig {
        n_values: vec![2],
        omega_mhz: vec![4.0, 9.0, 14.0],
        trajectories: 200,
        ..ExperimentConfig::default()
    };
    let cells = cli::sweep_n(&cfg, 2).unwrap();
    assert_eq!(cells.len(), 3);
    let best = cli::best_cell(&cells);
    assert!(cells.iter().all(|c| c.infidelity >= cells[best].infidelity));
    for c in &cells {
        let d = &c.distributions;
        assert_eq!(d.p0.len(), 3);
        assert!((d.p0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((d.p1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(c.infidelity, stats::tvd_infidelity(&d.p0, &d.p1));
        assert!(c.gate_time_us > 0.0);
    }
}

#[test]
fn trajectory_histogram_tracks_exact_populations_without_decay() {
    let cfg = ExperimentConfig::default();
    let n = 2;
    let model = cfg.gate_model(n).unwrap().without_decay();
    let sch = build_copy_schedule(n, mhz_to_angular(6.0), Envelope::Shaped).unwrap();
    let traj = dynamics::excitation_distributions(&model, &sch, 4000, 3).unwrap();
    for s in [Logical::Zero, Logical::One] {
        let exact = dynamics::exact_one_distribution(&model, &sch, s).unwrap();
        let sampled = traj.for_logical(s);
        for k in 0..=n {
            let se = (exact[k] * (1.0 - exact[k]) / 4000.0).sqrt();
            assert!((sampled[k] - exact[k]).abs() <= 5.0 * se + 1e-12, "{s:?} k={k}: {} vs {}", sampled[k], exact[k]);
        }
    }
}

#[test]
fn ideal_register_readout_improves_with_size() {
    let params = ReadoutParams::default().with_t_meas(6.0);
    let mut last = 1.0;
    for n in 1..=5 {
        let (v, se) = readout::aggregated_infidelity(&ExcitationDistributions::ideal(n), &params).unwrap();
        assert_eq!(se, 0.0);
        assert!(v < last, "N={n}: {v} !< {last}");
        last = v;
    }
}

#[test]
fn readout_never_beats_gate_floor() {
    let d = ExcitationDistributions::from_counts(&[90, 8, 2], &[3, 12, 85]).unwrap();
    let floor = dynamics::gate_infidelity(&d);
    for t in [0.5, 3.0, 12.0, 40.0] {
        let (v, _) = readout::aggregated_infidelity(&d, &ReadoutParams::default().with_t_meas(t)).unwrap();
        assert!(v >= floor - 1e-12, "t={t}: {v} < {floor}");
    }
}

#[test]
fn atom_resolved_matches_aggregated_for_ideal_gate() {
    let d = ExcitationDistributions::ideal(3);
    let params = ReadoutParams::default().with_t_meas(2.0);
    let (agg, _) = readout::aggregated_infidelity(&d, &params).unwrap();
    let mle = readout::mle_infidelity(&d.p0, &d.p1, &params, 40_000, 5).unwrap();
    // with every ancilla excited the per-site ratios depend almost only on the total
    assert!((mle.infidelity - agg).abs() < 4.0 * mle.stderr, "{} vs {agg}", mle.infidelity);
}
