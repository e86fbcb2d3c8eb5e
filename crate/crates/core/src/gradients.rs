//! Back-propagation through time, a central-difference oracle, and the
//! 2-norm gradient-regime diagnostics.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{augment_inputs, cost, forward, ArmaConfig, ForwardTrace, ModelParams, OutputHead, Sequence};
use crate::numerics::{dot, Matrix, Real};

/// Gradient of the time-averaged cost, shaped like [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradSet<T> {
    pub dw: Matrix<T>,
    pub dwi: Matrix<T>,
    pub du: Matrix<T>,
    pub db: Vec<T>,
}

/// Error signals `δ_t = T · ∂J/∂p_t`, one row per step.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaTrace<T> {
    pub delta: Matrix<T>,
}

impl<T: Real> GradSet<T> {
    pub fn zeros_like(params: &ModelParams<T>) -> Self {
        Self {
            dw: Matrix::zeros(params.w.rows(), params.w.cols()),
            dwi: Matrix::zeros(params.wi.rows(), params.wi.cols()),
            du: Matrix::zeros(params.u.rows(), params.u.cols()),
            db: vec![T::zero(); params.b.len()],
        }
    }

    /// The four blocks in fixed order `W, W_I, U, b`.
    pub fn blocks(&self) -> [&[T]; 4] {
        [
            self.dw.as_slice(),
            self.dwi.as_slice(),
            self.du.as_slice(),
            &self.db,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [T]; 4] {
        [
            self.dw.as_mut_slice(),
            self.dwi.as_mut_slice(),
            self.du.as_mut_slice(),
            &mut self.db,
        ]
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (a, &b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for blk in self.blocks_mut() {
            for x in blk {
                *x *= s;
            }
        }
    }

    /// 2-norm over every entry of all four blocks.
    pub fn global_norm(&self) -> T {
        let mut acc = T::zero();
        for blk in self.blocks() {
            for &x in blk {
                acc += x * x;
            }
        }
        acc.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// Largest `|a − b| / max(|a|, |b|, floor)` over all entries.
    pub fn max_rel_error(&self, other: &Self, floor: T) -> T {
        let mut worst = T::zero();
        for (a, b) in self.blocks().into_iter().zip(other.blocks()) {
            for (&x, &y) in a.iter().zip(b) {
                let denom = x.abs().max(y.abs()).max(floor);
                worst = worst.max((x - y).abs() / denom);
            }
        }
        worst
    }
}

fn check_trace<T: Real>(
    params: &ModelParams<T>,
    cfg: &ArmaConfig,
    seq: &Sequence<T>,
    trace: &ForwardTrace<T>,
) -> Result<()> {
    params.check_shapes(cfg, Some(seq.n_input()))?;
    seq.check_labels(params.n_out())?;
    let n = params.n_hidden();
    if trace.len() != seq.len()
        || trace.p.shape() != (seq.len(), n)
        || trace.h.shape() != (seq.len(), n)
        || trace.y.shape() != (seq.len(), params.n_out())
        || trace.h0.len() != n
    {
        return Err(Error::usage(format!(
            "trace shapes (p {:?}, h {:?}, y {:?}) do not match params/sequence (T={}, N={n}, N_o={})",
            trace.p.shape(),
            trace.h.shape(),
            trace.y.shape(),
            seq.len(),
            params.n_out()
        )));
    }
    Ok(())
}

/// Exact gradient of the time-averaged cost via BPTT.
pub fn backprop<T: Real>(
    params: &ModelParams<T>,
    cfg: &ArmaConfig,
    seq: &Sequence<T>,
    trace: &ForwardTrace<T>,
) -> Result<GradSet<T>> {
    backprop_with_deltas(params, cfg, seq, trace).map(|(g, _)| g)
}

/// As [`backprop`], also returning the error signals.
pub fn backprop_with_deltas<T: Real>(
    params: &ModelParams<T>,
    cfg: &ArmaConfig,
    seq: &Sequence<T>,
    trace: &ForwardTrace<T>,
) -> Result<(GradSet<T>, DeltaTrace<T>)> {
    check_trace(params, cfg, seq, trace)?;
    let len = seq.len();
    let n = params.n_hidden();
    let n_o = params.n_out();
    let inputs = augment_inputs(seq, cfg);
    let mut grads = GradSet::zeros_like(params);
    let mut delta = Matrix::zeros(len, n);
    let mut delta_next = vec![T::zero(); n];
    let two = T::lit(2.0);
    let mut out_err = vec![T::zero(); n_o];

    for t in (0..len).rev() {
        let y_t = trace.y.row(t);
        let label = seq.labels()[t];
        // ∂J_t/∂(U h_t) for the head/cost pair
        for (o, e) in out_err.iter_mut().enumerate() {
            let d = if o == label { T::one() } else { T::zero() };
            *e = match cfg.head {
                OutputHead::Softmax => y_t[o] - d,
                OutputHead::Linear => two * (y_t[o] - d),
            };
        }
        let local = params.u.tr_matvec(&out_err)?;
        let carried = params.w.tr_matvec(&delta_next)?;
        let h_t = trace.h.row(t);
        let d_t = delta.row_mut(t);
        for i in 0..n {
            let fprime = cfg.nonlin.deriv_from_output(h_t[i]);
            d_t[i] = fprime * (carried[i] + local[i]);
        }
        grads.du.add_outer(T::one(), &out_err, h_t);
        grads.dw.add_outer(T::one(), delta.row(t), trace.h_prev(t));
        grads.dwi.add_outer(T::one(), delta.row(t), inputs.row(t));
        for (g, &d) in grads.db.iter_mut().zip(delta.row(t)) {
            *g += d;
        }
        delta_next.copy_from_slice(delta.row(t));
    }
    grads.scale(T::one() / T::from_usize(len).unwrap());
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            what: "backprop",
            step: 0,
        });
    }
    Ok((grads, DeltaTrace { delta }))
}

/// Cost of `params` on `seq` from the zero initial state.
pub fn sequence_cost<T: Real>(params: &ModelParams<T>, cfg: &ArmaConfig, seq: &Sequence<T>) -> Result<T> {
    let h0 = vec![T::zero(); params.n_hidden()];
    let trace = forward(params, seq, cfg, &h0)?;
    Ok(cost(&trace, seq, cfg.head)?.value)
}

/// Central differences `(J(θ+ε) − J(θ−ε)) / 2ε`, one full forward pass per
/// probe, starting each pass from the zero state.
pub fn finite_diff<T: Real>(
    params: &ModelParams<T>,
    cfg: &ArmaConfig,
    seq: &Sequence<T>,
    eps: T,
) -> Result<GradSet<T>> {
    if eps <= T::zero() {
        return Err(Error::usage("finite-difference step must be positive"));
    }
    let mut grads = GradSet::zeros_like(params);
    let mut probe = params.clone();
    let two_eps = eps + eps;
    for block in 0..4 {
        let len = grads.blocks()[block].len();
        for k in 0..len {
            let orig = param_block_mut(&mut probe, block)[k];
            param_block_mut(&mut probe, block)[k] = orig + eps;
            let plus = sequence_cost(&probe, cfg, seq)?;
            param_block_mut(&mut probe, block)[k] = orig - eps;
            let minus = sequence_cost(&probe, cfg, seq)?;
            param_block_mut(&mut probe, block)[k] = orig;
            grads.blocks_mut()[block][k] = (plus - minus) / two_eps;
        }
    }
    Ok(grads)
}

fn param_block_mut<T: Real>(params: &mut ModelParams<T>, block: usize) -> &mut [T] {
    match block {
        0 => params.w.as_mut_slice(),
        1 => params.wi.as_mut_slice(),
        2 => params.u.as_mut_slice(),
        _ => &mut params.b,
    }
}

/// Mean gradient and mean cost over a batch. Per-sequence work runs in
/// parallel; the reduction is sequential in batch order.
pub fn batch_gradient<T: Real>(
    params: &ModelParams<T>,
    cfg: &ArmaConfig,
    batch: &[&Sequence<T>],
) -> Result<(GradSet<T>, T)> {
    if batch.is_empty() {
        return Err(Error::usage("empty batch"));
    }
    let h0 = vec![T::zero(); params.n_hidden()];
    let parts: Vec<Result<(GradSet<T>, T)>> = batch
        .par_iter()
        .map(|seq| {
            let trace = forward(params, seq, cfg, &h0)?;
            let c = cost(&trace, seq, cfg.head)?;
            Ok((backprop(params, cfg, seq, &trace)?, c.value))
        })
        .collect();
    let mut total = GradSet::zeros_like(params);
    let mut total_cost = T::zero();
    for part in parts {
        let (g, c) = part?;
        total.add_assign(&g);
        total_cost += c;
    }
    let inv = T::one() / T::from_usize(batch.len()).unwrap();
    total.scale(inv);
    Ok((total, total_cost * inv))
}

/// 2-norm diagnostics for the recurrent matrix against `1/γ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradRegime<T> {
    pub two_norm_w: T,
    /// `‖W‖₂ < 1/γ`: gradients are guaranteed to vanish over long spans.
    pub vanish_bound_holds: bool,
    /// `‖W‖₂ > 1/γ`: exploding gradients are possible.
    pub explode_necessary_holds: bool,
}

/// Denominator floor for [`GradSet::max_rel_error`] in gradient checks:
/// entries smaller than this are compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

/// Central-difference step used by gradient checks.
pub const FD_STEP: f64 = 1e-5;

pub const POWER_ITER_TOL: f64 = 1e-10;
pub const POWER_ITER_MAX: usize = 10_000;

/// Largest singular value by power iteration on `WᵀW`.
pub fn spectral_norm<T: Real>(w: &Matrix<T>) -> Result<T> {
    let n = w.cols();
    if n == 0 || w.rows() == 0 {
        return Err(Error::usage("spectral norm of an empty matrix"));
    }
    let tol = T::lit(POWER_ITER_TOL);
    let mut v: Vec<T> = (0..n)
        .map(|i| T::one() + T::from_usize(i).unwrap() / T::from_usize(2 * n).unwrap())
        .collect();
    let norm = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mut prev = T::zero();
    for iter in 0..POWER_ITER_MAX {
        let wv = w.matvec(&v)?;
        let u = w.tr_matvec(&wv)?;
        let rayleigh = dot(&v, &u);
        let unorm = dot(&u, &u).sqrt();
        if unorm == T::zero() {
            return Ok(T::zero());
        }
        v = u.into_iter().map(|x| x / unorm).collect();
        if iter > 0 && (rayleigh - prev).abs() <= tol * rayleigh.abs() {
            return Ok(rayleigh.max(T::zero()).sqrt());
        }
        prev = rayleigh;
    }
    Err(Error::NoConvergence {
        iterations: POWER_ITER_MAX,
    })
}

pub fn grad_regime_report<T: Real>(params: &ModelParams<T>, cfg: &ArmaConfig) -> Result<GradRegime<T>> {
    let two_norm = spectral_norm(&params.w)?;
    let bound = T::one() / cfg.gamma::<T>();
    Ok(GradRegime {
        two_norm_w: two_norm,
        vanish_bound_holds: two_norm < bound,
        explode_necessary_holds: two_norm > bound,
    })
}
