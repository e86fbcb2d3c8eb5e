//! Shared stochastic-descent loop, step-size schedules and per-epoch reports.
//!
//! The primal-dual and clipping trainers differ only in how a batch gradient
//! is turned into a parameter update; both plug an [`UpdateRule`] into
//! [`run_loop`].

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gradients::{batch_gradient, GradSet};
use crate::model::{ArmaConfig, ModelParams, Sequence};
use crate::numerics::Real;
use crate::tasks::evaluate;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    /// `μ_k = μ_0`.
    Constant,
    /// `μ_k = μ_0 / √k`.
    InvSqrtK,
}

impl Schedule {
    /// Step size at iteration `k` (1-based).
    pub fn step_size<T: Real>(self, mu0: T, k: usize) -> T {
        match self {
            Schedule::Constant => mu0,
            Schedule::InvSqrtK => mu0 / T::from_usize(k.max(1)).unwrap().sqrt(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Schedule::Constant => "constant",
            Schedule::InvSqrtK => "inv_sqrt_k",
        }
    }
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "inv_sqrt_k" => Ok(Schedule::InvSqrtK),
            other => Err(Error::usage(format!("unknown schedule '{other}'"))),
        }
    }
}

/// Settings common to every trainer.
#[derive(Clone, Debug, PartialEq)]
pub struct DescentConfig {
    pub mu0: f64,
    pub schedule: Schedule,
    /// Nesterov coefficient in [0, 1); 0 disables momentum.
    pub momentum: f64,
    pub epochs: usize,
    /// Sequences per update.
    pub batch: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            mu0: 0.1,
            schedule: Schedule::Constant,
            momentum: 0.0,
            epochs: 10,
            batch: 1,
            seed: 0,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu0 > 0.0 && self.mu0.is_finite()) {
            return Err(Error::usage(format!("mu0 must be positive, got {}", self.mu0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::usage(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch == 0 {
            return Err(Error::usage("batch must be at least 1"));
        }
        Ok(())
    }
}

/// Lagrange multipliers, one per row of `W`; never negative.
#[derive(Clone, Debug, PartialEq)]
pub struct DualState<T> {
    pub lambda: Vec<T>,
}

impl<T: Real> DualState<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            lambda: vec![T::zero(); n],
        }
    }

    pub fn max(&self) -> T {
        self.lambda.iter().copied().fold(T::zero(), T::max)
    }

    pub fn mean(&self) -> T {
        if self.lambda.is_empty() {
            return T::zero();
        }
        let mut acc = T::zero();
        for &l in &self.lambda {
            acc += l;
        }
        acc / T::from_usize(self.lambda.len()).unwrap()
    }
}

/// Optimizer state owned by the training thread.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState<T> {
    pub params: ModelParams<T>,
    pub dual: DualState<T>,
    /// Momentum buffers shaped like the gradient.
    pub velocity: GradSet<T>,
    /// Number of updates applied so far.
    pub k: usize,
}

impl<T: Real> OptState<T> {
    pub fn new(params: ModelParams<T>) -> Self {
        let velocity = GradSet::zeros_like(&params);
        let dual = DualState::zeros(params.n_hidden());
        Self {
            params,
            dual,
            velocity,
            k: 0,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epoch: usize,
    /// Mean per-sequence cost on the training set after the epoch.
    pub mean_cost: f64,
    pub frame_error: f64,
    pub inf_norm_w: f64,
    pub max_lambda: f64,
    pub mean_lambda: f64,
    pub clip_events: usize,
    pub wall_ms: u64,
}

impl TrainReport {
    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        Self { wall_ms: 0, ..self.clone() } == Self { wall_ms: 0, ..other.clone() }
    }
}

fn params_blocks_mut<T: Real>(p: &mut ModelParams<T>) -> [&mut [T]; 4] {
    [p.w.as_mut_slice(), p.wi.as_mut_slice(), p.u.as_mut_slice(), &mut p.b]
}

/// `θ + m·v`, where gradients are evaluated under Nesterov momentum.
pub fn lookahead<T: Real>(params: &ModelParams<T>, velocity: &GradSet<T>, momentum: T) -> ModelParams<T> {
    let mut out = params.clone();
    for (dst, v) in params_blocks_mut(&mut out).into_iter().zip(velocity.blocks()) {
        for (x, &vi) in dst.iter_mut().zip(v) {
            *x += momentum * vi;
        }
    }
    out
}

/// Plain descent `θ ← θ − μ g` when `momentum == 0`, otherwise
/// `v ← m v − μ g; θ ← θ + v`.
pub fn descend<T: Real>(
    params: &mut ModelParams<T>,
    velocity: &mut GradSet<T>,
    grads: &GradSet<T>,
    mu: T,
    momentum: T,
) {
    let blocks = params_blocks_mut(params);
    if momentum == T::zero() {
        for (dst, g) in blocks.into_iter().zip(grads.blocks()) {
            for (x, &gi) in dst.iter_mut().zip(g) {
                *x -= mu * gi;
            }
        }
    } else {
        for ((dst, v), g) in blocks.into_iter().zip(velocity.blocks_mut()).zip(grads.blocks()) {
            for ((x, vi), &gi) in dst.iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = momentum * *vi - mu * gi;
                *x += *vi;
            }
        }
    }
}

/// Turns a batch gradient into a parameter update.
pub trait UpdateRule<T: Real> {
    fn update(&mut self, state: &mut OptState<T>, grads: GradSet<T>, mu: T) -> Result<()>;

    /// Clip events since the last call.
    fn take_clip_events(&mut self) -> usize {
        0
    }
}

/// Unconstrained, unclipped descent.
#[derive(Clone, Copy, Debug)]
pub struct PlainDescent {
    pub momentum: f64,
}

impl<T: Real> UpdateRule<T> for PlainDescent {
    fn update(&mut self, state: &mut OptState<T>, grads: GradSet<T>, mu: T) -> Result<()> {
        descend(
            &mut state.params,
            &mut state.velocity,
            &grads,
            mu,
            T::lit(self.momentum),
        );
        Ok(())
    }
}

pub(crate) fn check_data<T: Real>(params: &ModelParams<T>, data: &[Sequence<T>], cfg: &ArmaConfig) -> Result<()> {
    if data.is_empty() {
        return Err(Error::usage("training set is empty"));
    }
    for (i, seq) in data.iter().enumerate() {
        params
            .check_shapes(cfg, Some(seq.n_input()))
            .map_err(|e| Error::usage(format!("sequence {i}: {e}")))?;
        seq.check_labels(params.n_out())
            .map_err(|e| Error::usage(format!("sequence {i}: {e}")))?;
    }
    Ok(())
}

/// Runs `dcfg.epochs` shuffled sweeps over `data`, applying `rule` once per
/// batch, and reports after every epoch.
pub fn run_loop<T: Real, R: UpdateRule<T>>(
    mut state: OptState<T>,
    data: &[Sequence<T>],
    cfg: &ArmaConfig,
    dcfg: &DescentConfig,
    rule: &mut R,
) -> Result<(OptState<T>, Vec<TrainReport>)> {
    dcfg.validate()?;
    check_data(&state.params, data, cfg)?;
    let mu0 = T::lit(dcfg.mu0);
    let momentum = T::lit(dcfg.momentum);
    let mut rng = ChaCha8Rng::seed_from_u64(dcfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut reports = Vec::with_capacity(dcfg.epochs);

    for epoch in 1..=dcfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        for chunk in order.chunks(dcfg.batch) {
            state.k += 1;
            let mu = dcfg.schedule.step_size(mu0, state.k);
            let batch: Vec<&Sequence<T>> = chunk.iter().map(|&i| &data[i]).collect();
            let (grads, _) = if momentum > T::zero() {
                let ahead = lookahead(&state.params, &state.velocity, momentum);
                batch_gradient(&ahead, cfg, &batch)?
            } else {
                batch_gradient(&state.params, cfg, &batch)?
            };
            rule.update(&mut state, grads, mu)?;
            if !state.params.is_finite() {
                return Err(Error::NonFinite {
                    what: "parameter update",
                    step: state.k,
                });
            }
        }
        let eval = evaluate(&state.params, cfg, data)?;
        reports.push(TrainReport {
            epoch,
            mean_cost: eval.mean_cost,
            frame_error: eval.frame_error,
            inf_norm_w: state.params.w.inf_norm()?.to_f64().unwrap(),
            max_lambda: state.dual.max().to_f64().unwrap(),
            mean_lambda: state.dual.mean().to_f64().unwrap(),
            clip_events: rule.take_clip_events(),
            wall_ms: start.elapsed().as_millis() as u64,
        });
    }
    Ok((state, reports))
}

/// Plain BPTT descent with no constraint handling and no clipping.
pub fn train_plain<T: Real>(
    params: ModelParams<T>,
    data: &[Sequence<T>],
    cfg: &ArmaConfig,
    dcfg: &DescentConfig,
) -> Result<(ModelParams<T>, Vec<TrainReport>)> {
    let mut rule = PlainDescent {
        momentum: dcfg.momentum,
    };
    let (state, reports) = run_loop(OptState::new(params), data, cfg, dcfg, &mut rule)?;
    Ok((state.params, reports))
}
