//! Whole-run behaviour of the trainers: determinism, edge cases and
//! constraint bookkeeping across seeds.

use esrnn::clipping::{train_clipped, ClipConfig};
use esrnn::echo_state::init_params;
use esrnn::gradients::{backprop, finite_diff, FD_STEP, REL_ERROR_FLOOR};
use esrnn::model::{forward, ModelParams, Sequence};
use esrnn::primal_dual::{self, train_observed, DualStepRecord, PdConfig, Variant};
use esrnn::tasks::{evaluate, generate, SynthSpec, TaskKind};
use esrnn::training::{DescentConfig, Schedule};
use esrnn::{ArmaConfig, Error, Nonlin, OutputHead};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(seed: u64) -> SynthSpec {
    SynthSpec {
        task: TaskKind::ContextWindow,
        t_len: 20,
        num_sequences: 8,
        n_input: 3,
        n_out: 3,
        context_span: 1,
        noise_std: 0.1,
        seed,
    }
}

fn pd_config(seed: u64, epochs: usize, mu0: f64, momentum: f64) -> PdConfig {
    PdConfig {
        descent: DescentConfig {
            mu0,
            schedule: Schedule::Constant,
            momentum,
            epochs,
            batch: 1,
            seed,
        },
        ..Default::default()
    }
}

#[test]
fn same_seed_same_run() {
    let data = generate(&spec(7)).unwrap();
    let cfg = ArmaConfig { delta1: 1, delta2: 1, nonlin: Nonlin::Tanh, head: OutputHead::Softmax };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params: ModelParams<f64> = init_params(8, 3, 3, &cfg, &mut rng).unwrap();
    let pd = pd_config(5, 3, 0.2, 0.5);
    let (a, ra) = primal_dual::train(params.clone(), &data, &cfg, &pd).unwrap();
    let (b, rb) = primal_dual::train(params.clone(), &data, &cfg, &pd).unwrap();
    assert_eq!(a, b);
    assert!(ra.iter().zip(&rb).all(|(x, y)| x.same_outcome(y)));

    let other = pd_config(6, 3, 0.2, 0.5);
    let (c, _) = primal_dual::train(params, &data, &cfg, &other).unwrap();
    assert_ne!(a, c, "shuffle seed had no effect");
}

#[test]
fn zero_epochs_returns_initial_params() {
    let data = generate(&spec(1)).unwrap();
    let cfg = ArmaConfig::ar(Nonlin::Sigmoid, OutputHead::Softmax);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params: ModelParams<f64> = init_params(4, 3, 3, &cfg, &mut rng).unwrap();
    let (p, r) = primal_dual::train(params.clone(), &data, &cfg, &pd_config(0, 0, 0.1, 0.0)).unwrap();
    assert_eq!(p, params);
    assert!(r.is_empty());
    let clip = ClipConfig { threshold: 1.0, descent: pd_config(0, 0, 0.1, 0.0).descent };
    let (p, r) = train_clipped(params.clone(), &data, &cfg, &clip).unwrap();
    assert_eq!(p, params);
    assert!(r.is_empty());
}

#[test]
fn empty_or_mismatched_data_is_a_usage_error() {
    let cfg = ArmaConfig::ar(Nonlin::Sigmoid, OutputHead::Softmax);
    let params = ModelParams::<f64>::zeros(4, 3, 3);
    let err = primal_dual::train(params.clone(), &[], &cfg, &PdConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Usage(_)));

    let mut s = spec(2);
    s.n_input = 5;
    let wrong = generate(&s).unwrap();
    let err = primal_dual::train(params, &wrong, &cfg, &PdConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Usage(_)));
}

#[test]
fn divergent_training_reports_the_iteration() {
    let data = generate(&spec(4)).unwrap();
    let cfg = ArmaConfig::ar(Nonlin::Tanh, OutputHead::Linear);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params: ModelParams<f64> = init_params(4, 3, 3, &cfg, &mut rng).unwrap();
    let clip = ClipConfig { threshold: 1e300, descent: pd_config(0, 5, 1e200, 0.0).descent };
    let err = train_clipped(params, &data, &cfg, &clip).unwrap_err();
    assert!(err.is_numerical(), "{err}");
}

#[test]
fn report_frame_error_matches_evaluation() {
    let data = generate(&spec(9)).unwrap();
    let cfg = ArmaConfig::ar(Nonlin::Sigmoid, OutputHead::Softmax);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params: ModelParams<f64> = init_params(6, 3, 3, &cfg, &mut rng).unwrap();
    let (p, reports) = primal_dual::train(params, &data, &cfg, &pd_config(1, 2, 0.3, 0.0)).unwrap();
    let ev = evaluate(&p, &cfg, &data).unwrap();
    let last = reports.last().unwrap();
    assert_eq!(ev.frame_error, last.frame_error);
    assert_eq!(ev.mean_cost, last.mean_cost);
    assert_eq!(last.inf_norm_w, p.w.inf_norm().unwrap());
}

/// Checks one dual update against the sign rules of projected ascent.
fn dual_update_is_monotone(rec: &DualStepRecord<f64>, radius: f64) -> bool {
    rec.row_norms.iter().enumerate().all(|(i, &norm)| {
        let (before, after) = (rec.lambda_before[i], rec.lambda_after[i]);
        after >= 0.0
            && if norm > radius {
                after > before
            } else if norm < radius && before > 0.0 {
                after < before
            } else {
                after == before
            }
    })
}

#[test]
fn dual_dynamics_over_many_seeds() {
    let mut total_violations = 0;
    for seed in 0..20u64 {
        let data = generate(&spec(100 + seed)).unwrap();
        let nonlin = if seed % 2 == 0 { Nonlin::Sigmoid } else { Nonlin::Tanh };
        let cfg = ArmaConfig::ar(nonlin, OutputHead::Softmax);
        let radius = 1.0 / cfg.gamma::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: ModelParams<f64> = init_params(6, 3, 3, &cfg, &mut rng).unwrap();
        let pd = pd_config(seed, 3, 1.0, 0.0);
        let mut bad = Vec::new();
        let mut violations = 0usize;
        let mut observer = |rec: &DualStepRecord<f64>| {
            violations += rec.row_norms.iter().filter(|&&n| n > radius).count();
            if !dual_update_is_monotone(rec, radius) {
                bad.push(rec.k);
            }
        };
        let (_, reports) = train_observed(params, &data, &cfg, &pd, &mut observer).unwrap();
        assert!(bad.is_empty(), "seed {seed}: non-monotone dual updates at {bad:?}");
        assert!(reports.iter().all(|r| r.max_lambda >= 0.0 && r.mean_lambda >= 0.0));
        if violations == 0 {
            assert!(reports.iter().all(|r| r.max_lambda == 0.0));
        }
        total_violations += violations;
    }
    assert!(total_violations > 0, "no run ever left the feasible set");
}

#[test]
fn projected_variant_is_feasible_over_many_seeds() {
    for seed in 0..20u64 {
        let data = generate(&spec(200 + seed)).unwrap();
        let cfg = ArmaConfig::ar(Nonlin::Tanh, OutputHead::Softmax);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: ModelParams<f64> = init_params(6, 3, 3, &cfg, &mut rng).unwrap();
        let mut pd = pd_config(seed, 2, 2.0, 0.9);
        pd.variant = Variant::ProjectRows;
        let (p, reports) = primal_dual::train(params, &data, &cfg, &pd).unwrap();
        assert!(p.w.inf_norm().unwrap() <= 1.0 + 1e-12, "seed {seed}");
        assert!(reports.iter().all(|r| r.inf_norm_w <= 1.0 + 1e-12));
    }
}

#[test]
fn gradients_agree_with_finite_differences_on_trained_models() {
    for seed in 0..20u64 {
        let head = if seed % 2 == 0 { OutputHead::Softmax } else { OutputHead::Linear };
        let cfg = ArmaConfig { delta1: 2, delta2: 3, nonlin: Nonlin::Sigmoid, head };
        let mut s = spec(300 + seed);
        s.num_sequences = 2;
        let data = generate(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: ModelParams<f64> = init_params(5, 3, 3, &cfg, &mut rng).unwrap();
        let (p, _) = primal_dual::train(params, &data, &cfg, &pd_config(seed, 1, 0.2, 0.0)).unwrap();
        let seq: &Sequence<f64> = &data[rng.random_range(0..data.len())];
        let trace = forward(&p, seq, &cfg, &[0.0; 5]).unwrap();
        let g = backprop(&p, &cfg, seq, &trace).unwrap();
        let fd = finite_diff(&p, &cfg, seq, FD_STEP).unwrap();
        let err = g.max_rel_error(&fd, REL_ERROR_FLOOR);
        assert!(err < 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn single_precision_training_runs() {
    let data: Vec<Sequence<f32>> = generate(&spec(5))
        .unwrap()
        .iter()
        .map(|s| Sequence::new(s.frames().cast(), s.labels().to_vec()).unwrap())
        .collect();
    let cfg = ArmaConfig { delta1: 1, delta2: 0, nonlin: Nonlin::Sigmoid, head: OutputHead::Softmax };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params: ModelParams<f32> = init_params(6, 3, 3, &cfg, &mut rng).unwrap();
    let (p, reports) = primal_dual::train(params, &data, &cfg, &pd_config(0, 5, 0.5, 0.0)).unwrap();
    assert!(p.is_finite());
    assert!(reports.last().unwrap().mean_cost < reports[0].mean_cost);
    assert!(p.w.inf_norm().unwrap() <= 4.0 + 1e-2);
}
