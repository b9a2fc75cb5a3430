//! Consistency of the two-level pipeline: masking, bouts and degenerate
//! sub-models.

use splinehmm::conditional::{
    conditioning_mask, expand_path, extract_bouts, fit_main, fit_sub, PipelineConfig,
};
use splinehmm::hmm::{log_likelihood, viterbi, Dataset};
use splinehmm::postproc::mean_order;
use splinehmm::sampler::{ChainConfig, Schedule, TuningParams};
use splinehmm::simgen::{simulate_activity, zero_inflated_params, ActivityDesign};

fn short_chain(a: f64, b: f64) -> ChainConfig {
    ChainConfig {
        tuning: TuningParams::for_bounds(a, b),
        schedule: Schedule {
            burn_in: 400,
            iters: 400,
            thin: 20,
            check_every: Some(100),
        },
        ..ChainConfig::default()
    }
}

fn two_day_series() -> Vec<Option<f64>> {
    let design = ActivityDesign {
        days: 2,
        ..ActivityDesign::default()
    };
    let act = simulate_activity(&zero_inflated_params([0.9, 0.25], [0.96, 0.89]), &design, 21).unwrap();
    act.obs.iter().map(|&y| Some(y)).collect()
}

#[test]
fn sub_likelihood_is_the_masked_engine_likelihood() {
    let values = two_day_series();
    let cfg = PipelineConfig::default();
    let main = fit_main(&values, &cfg, short_chain, 5, 1).unwrap();
    let sub = fit_sub(&values, &main, &cfg, short_chain, 6, 1).unwrap();

    // The same mask applied to the full series through the engine.
    let path = expand_path(&viterbi(&main.estimate, &main.data).unwrap(), cfg.block, values.len());
    let (a, b) = sub.data.bounds();
    let mask = conditioning_mask(&path);
    // Masked points contribute an identity emission, so their values are
    // irrelevant; overwrite them with an arbitrary in-range value.
    let filled: Vec<f64> = values
        .iter()
        .zip(&mask)
        .map(|(v, &m)| if m { 0.5 * (a + b) } else { v.unwrap() })
        .collect();
    let full = Dataset::new(filled, vec![false; values.len()], a, b).unwrap();
    let masked = full.masked(&mask).unwrap();
    assert_eq!(masked.missing(), sub.data.missing());
    for d in &sub.trace.draws {
        let ll = log_likelihood(&d.params, &masked).unwrap();
        assert!((ll - d.loglik).abs() < 1e-10, "{ll} vs {}", d.loglik);
    }
}

#[test]
fn bouts_do_not_depend_on_state_labels() {
    let values = two_day_series();
    let cfg = PipelineConfig::default();
    let main = fit_main(&values, &cfg, short_chain, 5, 1).unwrap();
    let path = viterbi(&main.estimate, &main.data).unwrap();
    let bouts = extract_bouts(&expand_path(&path, cfg.block, values.len()), cfg.min_dwell);
    assert!(!bouts.bouts.is_empty());

    let swapped = main.estimate.permuted(&[1, 0]);
    let restored = swapped.permuted(&mean_order(&swapped));
    let path2 = viterbi(&restored, &main.data).unwrap();
    assert_eq!(path, path2);
    let bouts2 = extract_bouts(&expand_path(&path2, cfg.block, values.len()), cfg.min_dwell);
    assert_eq!(bouts, bouts2);
}

#[test]
fn identical_sub_emissions_make_transitions_irrelevant() {
    let values = two_day_series();
    let mut params = zero_inflated_params([0.6, 0.6], [0.9, 0.9]);
    let row = params.coeffs.row(0).to_vec();
    params.coeffs.row_mut(1).copy_from_slice(&row);
    let (a, b) = (params.knots.a(), params.knots.b());
    let clipped: Vec<Option<f64>> = values.iter().map(|v| v.map(|y| y.min(b))).collect();
    let full = Dataset::from_options(&clipped, a, b).unwrap();
    let mask: Vec<bool> = (0..values.len()).map(|t| (t / 97) % 3 == 0).collect();
    let data = full.masked(&mask).unwrap();
    let base = log_likelihood(&params, &data).unwrap();
    for gamma in [[1.0, 1.0, 1.0, 1.0], [50.0, 1.0, 3.0, 0.2], [0.01, 7.0, 7.0, 0.01]] {
        let mut p = params.clone();
        p.gamma = gamma.to_vec();
        assert!((log_likelihood(&p, &data).unwrap() - base).abs() < 1e-10);
    }
}
