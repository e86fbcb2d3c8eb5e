//! BPTT baseline with global gradient-norm clipping.

use crate::error::{Error, Result};
use crate::gradients::GradSet;
use crate::model::{ArmaConfig, ModelParams, Sequence};
use crate::numerics::Real;
use crate::training::{descend, run_loop, DescentConfig, OptState, TrainReport, UpdateRule};

#[derive(Clone, Debug, PartialEq)]
pub struct ClipConfig {
    pub threshold: f64,
    pub descent: DescentConfig,
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        self.descent.validate()?;
        if !(self.threshold > 0.0) {
            return Err(Error::usage(format!(
                "clipping threshold must be positive, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Rescales all four blocks by `threshold / ‖g‖` when the global norm
/// exceeds `threshold`. Returns whether clipping happened.
pub fn clip<T: Real>(mut grads: GradSet<T>, threshold: T) -> (GradSet<T>, bool) {
    let norm = grads.global_norm();
    if norm > threshold {
        grads.scale(threshold / norm);
        (grads, true)
    } else {
        (grads, false)
    }
}

struct ClipRule<T> {
    threshold: T,
    momentum: T,
    events: usize,
}

impl<T: Real> UpdateRule<T> for ClipRule<T> {
    fn update(&mut self, state: &mut OptState<T>, grads: GradSet<T>, mu: T) -> Result<()> {
        let (grads, clipped) = clip(grads, self.threshold);
        self.events += usize::from(clipped);
        descend(&mut state.params, &mut state.velocity, &grads, mu, self.momentum);
        Ok(())
    }

    fn take_clip_events(&mut self) -> usize {
        std::mem::take(&mut self.events)
    }
}

/// Unconstrained BPTT with clipped gradients; `inf_norm_w` in the reports
/// may exceed `1/γ`.
pub fn train_clipped<T: Real>(
    params: ModelParams<T>,
    data: &[Sequence<T>],
    cfg: &ArmaConfig,
    clip_cfg: &ClipConfig,
) -> Result<(ModelParams<T>, Vec<TrainReport>)> {
    clip_cfg.validate()?;
    let mut rule = ClipRule {
        threshold: T::lit(clip_cfg.threshold),
        momentum: T::lit(clip_cfg.descent.momentum),
        events: 0,
    };
    let (state, reports) = run_loop(OptState::new(params), data, cfg, &clip_cfg.descent, &mut rule)?;
    Ok((state.params, reports))
}
