//! Echo-state sufficient condition `‖W‖_∞ < 1/γ` and an executable check of
//! the state-contraction bound `‖h_t − h'_t‖_∞ ≤ (γ‖W‖_∞)^t ‖h_0 − h'_0‖_∞`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{forward, ArmaConfig, ModelParams, Sequence};
use crate::numerics::{Matrix, Real};

/// Slack added to the bound when judging a step.
pub const CONTRACTION_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SufficientCheck<T> {
    pub inf_norm: T,
    /// `1/γ`.
    pub bound: T,
    pub holds: bool,
}

pub fn check_sufficient<T: Real>(params: &ModelParams<T>, cfg: &ArmaConfig) -> Result<SufficientCheck<T>> {
    let inf_norm = params.w.inf_norm()?;
    let bound = T::one() / cfg.gamma::<T>();
    Ok(SufficientCheck {
        inf_norm,
        bound,
        holds: inf_norm < bound,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContractionReport<T> {
    pub t_steps: usize,
    /// `‖h_t − h'_t‖_∞` for `t = 1..=t_steps`.
    pub per_step_gap: Vec<T>,
    /// `(γ‖W‖_∞)^t ‖h_0 − h'_0‖_∞` for `t = 1..=t_steps`.
    pub per_step_bound: Vec<T>,
    pub satisfied: bool,
}

fn max_abs_diff<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x - *y).abs())
        .fold(T::zero(), T::max)
}

/// Drives the network from two initial states with the same inputs and
/// compares the state gap against the contraction bound at every step.
pub fn verify_contraction<T: Real>(
    params: &ModelParams<T>,
    cfg: &ArmaConfig,
    seq: &Sequence<T>,
    h0: &[T],
    h0p: &[T],
) -> Result<ContractionReport<T>> {
    if h0 == h0p {
        return Err(Error::usage("initial states must differ"));
    }
    let a = forward(params, seq, cfg, h0)?;
    let b = forward(params, seq, cfg, h0p)?;
    let rate = cfg.gamma::<T>() * params.w.inf_norm()?;
    let gap0 = max_abs_diff(h0, h0p);
    let slack = T::lit(CONTRACTION_SLACK);
    let mut gaps = Vec::with_capacity(seq.len());
    let mut bounds = Vec::with_capacity(seq.len());
    let mut factor = T::one();
    let mut satisfied = true;
    for t in 0..seq.len() {
        factor *= rate;
        let gap = max_abs_diff(a.h.row(t), b.h.row(t));
        let bound = factor * gap0;
        satisfied &= gap <= bound + slack;
        gaps.push(gap);
        bounds.push(bound);
    }
    Ok(ContractionReport {
        t_steps: seq.len(),
        per_step_gap: gaps,
        per_step_bound: bounds,
        satisfied,
    })
}

/// Rescales `w` so its ∞-norm equals `target`.
pub fn scale_to_inf_norm<T: Real>(w: &Matrix<T>, target: T) -> Result<Matrix<T>> {
    if target <= T::zero() {
        return Err(Error::usage("target norm must be positive"));
    }
    let norm = w.inf_norm()?;
    if norm == T::zero() {
        return Err(Error::usage("cannot rescale a zero matrix"));
    }
    let s = target / norm;
    Ok(w.map(|x| x * s))
}

/// Feasible starting point for training: `W` uniform on [−1, 1] rescaled to
/// ∞-norm `0.9/γ`; `W_I` and `U` uniform on ±1/√fan_in; `b = 0`.
pub fn init_params<T: Real, R: Rng + ?Sized>(
    n_hidden: usize,
    n_input: usize,
    n_out: usize,
    cfg: &ArmaConfig,
    rng: &mut R,
) -> Result<ModelParams<T>> {
    if n_hidden == 0 || n_input == 0 || n_out == 0 {
        return Err(Error::usage("model dimensions must be positive"));
    }
    let n_eff = n_input * cfg.window();
    let mut uniform = |scale: f64| T::lit(rng.random_range(-1.0..=1.0) * scale);
    let raw_w = Matrix::from_fn(n_hidden, n_hidden, |_, _| uniform(1.0));
    let in_scale = 1.0 / (n_eff as f64).sqrt();
    let wi = Matrix::from_fn(n_hidden, n_eff, |_, _| uniform(in_scale));
    let out_scale = 1.0 / (n_hidden as f64).sqrt();
    let u = Matrix::from_fn(n_out, n_hidden, |_, _| uniform(out_scale));
    let target = T::lit(0.9) / cfg.gamma::<T>();
    let w = scale_to_inf_norm(&raw_w, target)?;
    Ok(ModelParams {
        w,
        wi,
        u,
        b: vec![T::zero(); n_hidden],
    })
}
