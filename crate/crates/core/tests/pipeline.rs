use std::f64::consts::TAU;

use proptest::prelude::*;

use spikeopt::hh::{apply_control_from, Anchor, HH_ODE_TOL};
use spikeopt::phase_model::PhaseModel;
use spikeopt::schedule_sim::{simulate_phase, to_time_domain, TimeDomainControl};
use spikeopt::sweep::{run_sweep, SweepOptions, Validation};
use spikeopt::synthesis::{
    max_time_synthesize, min_time_synthesize, synthesize, Objective, SynthesisOptions, SynthesisResult,
};
use spikeopt::to_json_sig12;

fn sniper() -> PhaseModel {
    PhaseModel::sniper(1.0, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sniper_pipeline_is_consistent(m in 0.05f64..1.2, max in any::<bool>()) {
        let model = sniper();
        let r = if max { max_time_synthesize(&model, m, None) } else { min_time_synthesize(&model, m) }.unwrap();
        let c = to_time_domain(&model, &r.schedule).unwrap();
        prop_assert!((c.total_duration - r.predicted_t).abs() < 1e-8 * r.predicted_t);
        prop_assert!(c.charge().abs() < 1e-8 * m * r.predicted_t);
        let run = simulate_phase(&model, &c, 1e-10).unwrap();
        prop_assert!((run.spike_time - r.predicted_t).abs() < 1e-5 * TAU);
        prop_assert!(run.final_charge.abs() < 1e-6);
        // A stimulus never changes sign more often than the word has letters.
        prop_assert!(c.pieces.len() <= r.word.0.len());
    }

    #[test]
    fn morris_lecar_brackets_natural_period(m in 0.002f64..0.04) {
        let model = PhaseModel::morris_lecar();
        let t0 = model.natural_period();
        let lo = min_time_synthesize(&model, m).unwrap();
        let hi = max_time_synthesize(&model, m, None).unwrap();
        prop_assert!(lo.predicted_t < t0 && t0 < hi.predicted_t);
        prop_assert!(lo.pmp_report.all_passed() && hi.pmp_report.all_passed());
    }
}

#[test]
fn saved_results_reload_to_the_same_stimulus() {
    for (model, m, objective) in [
        (sniper(), 0.7, Objective::Max),
        (PhaseModel::hodgkin_huxley(), 0.7, Objective::Min),
        (PhaseModel::hodgkin_huxley(), 3.0, Objective::Max),
    ] {
        let r = synthesize(&model, m, objective, &SynthesisOptions::default()).unwrap();
        let back: SynthesisResult = serde_json::from_str(&to_json_sig12(&r).unwrap()).unwrap();
        assert_eq!(back.word.to_string(), r.word.to_string());
        let (a, b) = (to_time_domain(&model, &r.schedule).unwrap(), to_time_domain(&model, &back.schedule).unwrap());
        assert_eq!(a.pieces.len(), b.pieces.len());
        for (p, q) in a.pieces.iter().zip(&b.pieces) {
            assert!((p.t_end - q.t_end).abs() < 1e-9 * a.total_duration);
            assert_eq!(p.hold_theta.is_some(), q.hold_theta.is_some());
        }
    }
}

#[test]
fn sweep_rows_match_direct_synthesis() {
    let model = PhaseModel::morris_lecar();
    let grid = [0.005, 0.01, 0.02];
    let rows = run_sweep(&model, &grid, &SweepOptions::default());
    for (row, &m) in rows.iter().zip(&grid) {
        assert_eq!(row.m, m);
        let lo = min_time_synthesize(&model, m).unwrap();
        let hi = max_time_synthesize(&model, m, None).unwrap();
        assert_eq!(row.min_t, Some(lo.predicted_t));
        assert_eq!(row.max_t, Some(hi.predicted_t));
        assert_eq!(row.min_word.as_deref(), Some(lo.word.to_string().as_str()));
        assert!(row.min_t.unwrap() <= row.max_t.unwrap());
    }
    // Monotone widening of the feasible band.
    assert!(rows.windows(2).all(|w| w[1].min_t <= w[0].min_t && w[1].max_t >= w[0].max_t));
}

#[test]
fn unforced_state_space_keeps_calibrated_period() {
    let v = Validation::calibrated(3, HH_ODE_TOL).unwrap();
    let zero = TimeDomainControl::zero(1.0);
    for anchor in [Anchor::Peak, Anchor::Crossing] {
        let run = apply_control_from(&v.params, &v.cycle, &zero, 3, anchor, HH_ODE_TOL).unwrap();
        for isi in &run.train.inter_spike_intervals {
            assert!((isi - v.cycle.period).abs() < 1e-4, "{anchor:?}: {isi} vs {}", v.cycle.period);
        }
    }
}

#[test]
fn stronger_min_time_stimulus_fires_earlier_in_state_space() {
    let hh = PhaseModel::hodgkin_huxley();
    let v = Validation::calibrated(1, HH_ODE_TOL).unwrap();
    let isi = |m: f64| {
        let r = min_time_synthesize(&hh, m).unwrap();
        let c = to_time_domain(&hh, &r.schedule).unwrap();
        apply_control_from(&v.params, &v.cycle, &c, 1, Anchor::Peak, HH_ODE_TOL).unwrap().train.inter_spike_intervals[0]
    };
    let (weak, strong) = (isi(0.2), isi(0.7));
    assert!(strong < weak && weak < v.cycle.period, "{strong} {weak} {}", v.cycle.period);
}
