//! Primal-dual training under the row-wise constraint `‖w_i‖_1 ≤ 1/γ`.
//!
//! Primal step: a descent step on all parameters, after which `W` is passed
//! through the row-scaled soft-threshold `T_{λμ}` (the proximal map of
//! `Σ_i λ_i ‖w_i‖_1`). Dual step: projected ascent
//! `λ_i ← [λ_i + μ (‖w_i‖_1 − 1/γ)]_+` using the rows of `W` from before the
//! primal step.

use crate::error::{Error, Result};
use crate::gradients::GradSet;
use crate::model::{ArmaConfig, ModelParams, Sequence};
use crate::numerics::{l1, Matrix, Real};
use crate::training::{descend, run_loop, DescentConfig, DualState, OptState, TrainReport, UpdateRule};

/// How the constraint is enforced on `W` after each descent step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Soft-threshold rows by `λ_i μ` and adapt `λ` by projected ascent.
    Shrinkage,
    /// Project each row onto the ℓ1 ball of radius `1/γ`; `λ` stays 0.
    ProjectRows,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Shrinkage => "shrinkage",
            Variant::ProjectRows => "project_rows",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shrinkage" => Ok(Variant::Shrinkage),
            "project_rows" => Ok(Variant::ProjectRows),
            other => Err(Error::usage(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdConfig {
    pub descent: DescentConfig,
    /// Dual step is `μ_k · dual_mu_scale`.
    pub dual_mu_scale: f64,
    pub variant: Variant,
}

impl Default for PdConfig {
    fn default() -> Self {
        Self {
            descent: DescentConfig::default(),
            dual_mu_scale: 1.0,
            variant: Variant::Shrinkage,
        }
    }
}

impl PdConfig {
    pub fn validate(&self) -> Result<()> {
        self.descent.validate()?;
        if !(self.dual_mu_scale > 0.0 && self.dual_mu_scale.is_finite()) {
            return Err(Error::usage(format!(
                "dual_mu_scale must be positive, got {}",
                self.dual_mu_scale
            )));
        }
        Ok(())
    }
}

/// Entrywise soft-threshold with per-row level `λ_i μ`.
pub fn shrink<T: Real>(x: &Matrix<T>, lambda: &[T], mu: T) -> Result<Matrix<T>> {
    if lambda.len() != x.rows() {
        return Err(Error::usage(format!(
            "lambda has {} entries for {} rows",
            lambda.len(),
            x.rows()
        )));
    }
    if mu < T::zero() || lambda.iter().any(|&l| l < T::zero()) {
        return Err(Error::usage("shrink requires non-negative lambda and mu"));
    }
    let mut out = x.clone();
    for (i, &l) in lambda.iter().enumerate() {
        let level = l * mu;
        for v in out.row_mut(i) {
            *v = if *v >= level {
                *v - level
            } else if *v <= -level {
                *v + level
            } else {
                T::zero()
            };
        }
    }
    Ok(out)
}

/// Euclidean projection of `v` onto `{x : ‖x‖_1 ≤ radius}`.
fn project_l1_ball<T: Real>(v: &mut [T], radius: T) {
    if l1(v) <= radius {
        return;
    }
    let mut mags: Vec<T> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).expect("finite row"));
    let mut cumsum = T::zero();
    let mut theta = T::zero();
    for (j, &m) in mags.iter().enumerate() {
        cumsum += m;
        let candidate = (cumsum - radius) / T::from_usize(j + 1).unwrap();
        if m > candidate {
            theta = candidate;
        } else {
            break;
        }
    }
    for x in v.iter_mut() {
        let shrunk = (x.abs() - theta).max(T::zero());
        *x = shrunk.copysign(*x);
    }
}

/// Replaces every row with `‖w_i‖_1 > 1/γ` by its closest point on the ℓ1
/// ball of radius `1/γ`.
pub fn project_rows<T: Real>(w: &Matrix<T>, gamma: T) -> Result<Matrix<T>> {
    if gamma <= T::zero() {
        return Err(Error::usage("gamma must be positive"));
    }
    let radius = T::one() / gamma;
    let mut out = w.clone();
    for i in 0..out.rows() {
        project_l1_ball(out.row_mut(i), radius);
    }
    Ok(out)
}

/// Descent step on all four groups, then `W ← T_{λμ}(W)` with the current
/// multipliers. `grads` must already be evaluated at the look-ahead point when
/// `momentum > 0`. The caller advances `state.k`.
pub fn primal_step<T: Real>(state: &mut OptState<T>, grads: &GradSet<T>, mu: T, momentum: T) -> Result<()> {
    descend(&mut state.params, &mut state.velocity, grads, mu, momentum);
    state.params.w = shrink(&state.params.w, &state.dual.lambda, mu)?;
    check_finite(state)
}

/// Descent step followed by row projection onto the feasible set.
pub fn primal_step_projected<T: Real>(
    state: &mut OptState<T>,
    grads: &GradSet<T>,
    mu: T,
    momentum: T,
    gamma: T,
) -> Result<()> {
    descend(&mut state.params, &mut state.velocity, grads, mu, momentum);
    state.params.w = project_rows(&state.params.w, gamma)?;
    check_finite(state)
}

fn check_finite<T: Real>(state: &OptState<T>) -> Result<()> {
    if state.params.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: "primal step",
            step: state.k,
        })
    }
}

/// `λ_i ← [λ_i + step (row_norms_i − 1/γ)]_+`.
pub fn dual_update<T: Real>(dual: &mut DualState<T>, row_norms: &[T], step: T, gamma: T) -> Result<()> {
    if gamma <= T::zero() {
        return Err(Error::usage("gamma must be positive"));
    }
    if row_norms.len() != dual.lambda.len() {
        return Err(Error::usage(format!(
            "{} row norms for {} multipliers",
            row_norms.len(),
            dual.lambda.len()
        )));
    }
    let bound = T::one() / gamma;
    for (l, &norm) in dual.lambda.iter_mut().zip(row_norms) {
        *l = (*l + step * (norm - bound)).max(T::zero());
    }
    Ok(())
}

/// Dual ascent against the rows of the state's current `W`, with step
/// `mu · dual_mu_scale`.
pub fn dual_step<T: Real>(state: &mut OptState<T>, mu: T, gamma: T, dual_mu_scale: T) -> Result<()> {
    let norms = row_norms(&state.params.w);
    dual_update(&mut state.dual, &norms, mu * dual_mu_scale, gamma)
}

pub fn row_norms<T: Real>(w: &Matrix<T>) -> Vec<T> {
    (0..w.rows()).map(|i| l1(w.row(i))).collect()
}

/// One dual update as seen by a [`train_observed`] observer.
#[derive(Clone, Debug, PartialEq)]
pub struct DualStepRecord<T> {
    pub k: usize,
    /// Row ℓ1 norms of the `W` the update was computed from.
    pub row_norms: Vec<T>,
    pub lambda_before: Vec<T>,
    pub lambda_after: Vec<T>,
    pub step: T,
}

pub type Observer<'a, T> = &'a mut dyn FnMut(&DualStepRecord<T>);

struct PrimalDualRule<'a, T> {
    gamma: T,
    momentum: T,
    dual_scale: T,
    variant: Variant,
    observer: Option<Observer<'a, T>>,
}

impl<T: Real> UpdateRule<T> for PrimalDualRule<'_, T> {
    fn update(&mut self, state: &mut OptState<T>, grads: GradSet<T>, mu: T) -> Result<()> {
        let k = state.k;
        match self.variant {
            Variant::ProjectRows => {
                primal_step_projected(state, &grads, mu, self.momentum, self.gamma)?;
            }
            Variant::Shrinkage => {
                let norms = row_norms(&state.params.w);
                primal_step(state, &grads, mu, self.momentum)?;
                let before = self.observer.is_some().then(|| state.dual.lambda.clone());
                let step = mu * self.dual_scale;
                dual_update(&mut state.dual, &norms, step, self.gamma)?;
                if let (Some(obs), Some(lambda_before)) = (self.observer.as_mut(), before) {
                    obs(&DualStepRecord {
                        k,
                        row_norms: norms,
                        lambda_before,
                        lambda_after: state.dual.lambda.clone(),
                        step,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Primal-dual training from `params` with `λ = 0`.
pub fn train<T: Real>(
    params: ModelParams<T>,
    data: &[Sequence<T>],
    cfg: &ArmaConfig,
    pd: &PdConfig,
) -> Result<(ModelParams<T>, Vec<TrainReport>)> {
    let (state, reports) = train_from_state(OptState::new(params), data, cfg, pd, None)?;
    Ok((state.params, reports))
}

/// As [`train`], calling `observer` after every dual update.
pub fn train_observed<T: Real>(
    params: ModelParams<T>,
    data: &[Sequence<T>],
    cfg: &ArmaConfig,
    pd: &PdConfig,
    observer: &mut dyn FnMut(&DualStepRecord<T>),
) -> Result<(ModelParams<T>, Vec<TrainReport>)> {
    let (state, reports) = train_from_state(OptState::new(params), data, cfg, pd, Some(observer))?;
    Ok((state.params, reports))
}

/// Continues training from an existing optimizer state (e.g. a checkpoint).
pub fn train_from_state<T: Real>(
    state: OptState<T>,
    data: &[Sequence<T>],
    cfg: &ArmaConfig,
    pd: &PdConfig,
    observer: Option<Observer<'_, T>>,
) -> Result<(OptState<T>, Vec<TrainReport>)> {
    pd.validate()?;
    let mut rule = PrimalDualRule {
        gamma: cfg.gamma(),
        momentum: T::lit(pd.descent.momentum),
        dual_scale: T::lit(pd.dual_mu_scale),
        variant: pd.variant,
        observer,
    };
    run_loop(state, data, cfg, &pd.descent, &mut rule)
}
