//! AR / ARMA recurrent network forward pass.
//!
//! The ARMA hidden update `h_t = f(W h_{t-1} + Σ_τ W_{I,τ} v_{t-τ} + b)` is
//! evaluated in its augmented AR form: the window of frames
//! `v_{t-Δ2} … v_{t+Δ1}` is concatenated into one input row and multiplied by
//! the block matrix `[W_{I,-Δ2} … W_{I,Δ1}]`.

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, Nonlin, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OutputHead {
    /// Identity output with squared-error cost.
    Linear,
    /// Softmax output with cross-entropy cost.
    Softmax,
}

impl OutputHead {
    pub fn name(self) -> &'static str {
        match self {
            OutputHead::Linear => "linear",
            OutputHead::Softmax => "softmax",
        }
    }
}

impl std::str::FromStr for OutputHead {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(OutputHead::Linear),
            "softmax" => Ok(OutputHead::Softmax),
            other => Err(Error::usage(format!("unknown output head '{other}'"))),
        }
    }
}

/// Window orders and unit choices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ArmaConfig {
    /// Frames of look-ahead into the future.
    pub delta1: usize,
    /// Frames of look-back into the past.
    pub delta2: usize,
    pub nonlin: Nonlin,
    pub head: OutputHead,
}

impl ArmaConfig {
    /// Plain AR model (no input window).
    pub fn ar(nonlin: Nonlin, head: OutputHead) -> Self {
        Self {
            delta1: 0,
            delta2: 0,
            nonlin,
            head,
        }
    }

    pub fn window(&self) -> usize {
        self.delta1 + self.delta2 + 1
    }

    pub fn gamma<T: Real>(&self) -> T {
        self.nonlin.gamma()
    }
}

/// Trainable parameters `{W, W̄_I, U, b}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    /// Recurrent weights, N×N.
    pub w: Matrix<T>,
    /// Augmented input weights, N×(window·N_I).
    pub wi: Matrix<T>,
    /// Output weights, N_o×N.
    pub u: Matrix<T>,
    pub b: Vec<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(n_hidden: usize, n_input_eff: usize, n_out: usize) -> Self {
        Self {
            w: Matrix::zeros(n_hidden, n_hidden),
            wi: Matrix::zeros(n_hidden, n_input_eff),
            u: Matrix::zeros(n_out, n_hidden),
            b: vec![T::zero(); n_hidden],
        }
    }

    pub fn n_hidden(&self) -> usize {
        self.w.rows()
    }

    pub fn n_input_eff(&self) -> usize {
        self.wi.cols()
    }

    pub fn n_out(&self) -> usize {
        self.u.rows()
    }

    /// Raw per-frame input width implied by the augmented input weights.
    pub fn n_input(&self, cfg: &ArmaConfig) -> usize {
        self.wi.cols() / cfg.window()
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite()
            && self.wi.is_finite()
            && self.u.is_finite()
            && self.b.iter().all(|x| x.is_finite())
    }

    /// Checks mutual consistency of the four blocks and, given a frame
    /// width, of the input window.
    pub fn check_shapes(&self, cfg: &ArmaConfig, n_input: Option<usize>) -> Result<()> {
        let n = self.w.rows();
        if n == 0 || self.w.cols() != n {
            return Err(Error::usage(format!(
                "W must be square and nonempty, got {:?}",
                self.w.shape()
            )));
        }
        if self.wi.rows() != n || self.u.cols() != n || self.b.len() != n {
            return Err(Error::usage(format!(
                "inconsistent parameter shapes: W {:?}, Wi {:?}, U {:?}, b {}",
                self.w.shape(),
                self.wi.shape(),
                self.u.shape(),
                self.b.len()
            )));
        }
        if self.u.rows() == 0 {
            return Err(Error::usage("model has no outputs"));
        }
        if !self.wi.cols().is_multiple_of(cfg.window()) {
            return Err(Error::usage(format!(
                "Wi has {} columns, not a multiple of the window width {}",
                self.wi.cols(),
                cfg.window()
            )));
        }
        if let Some(n_i) = n_input {
            if n_i * cfg.window() != self.wi.cols() {
                return Err(Error::usage(format!(
                    "frames have {n_i} features; Wi expects {} per frame over a window of {}",
                    self.wi.cols() / cfg.window(),
                    cfg.window()
                )));
            }
        }
        Ok(())
    }
}

/// One utterance: `T × N_I` input frames and a class label per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence<T> {
    frames: Matrix<T>,
    labels: Vec<usize>,
}

impl<T: Real> Sequence<T> {
    pub fn new(frames: Matrix<T>, labels: Vec<usize>) -> Result<Self> {
        if frames.rows() == 0 {
            return Err(Error::usage("sequence must have at least one frame"));
        }
        if labels.len() != frames.rows() {
            return Err(Error::usage(format!(
                "{} frames but {} labels",
                frames.rows(),
                labels.len()
            )));
        }
        Ok(Self { frames, labels })
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_input(&self) -> usize {
        self.frames.cols()
    }

    pub fn frames(&self) -> &Matrix<T> {
        &self.frames
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn check_labels(&self, n_out: usize) -> Result<()> {
        match self.labels.iter().position(|&l| l >= n_out) {
            Some(t) => Err(Error::usage(format!(
                "label {} at frame {t} out of range for {n_out} classes",
                self.labels[t]
            ))),
            None => Ok(()),
        }
    }
}

/// Per-frame quantities of one forward pass; row `t` holds time step `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T> {
    pub p: Matrix<T>,
    pub h: Matrix<T>,
    pub y: Matrix<T>,
    pub h0: Vec<T>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn len(&self) -> usize {
        self.h.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.h.rows() == 0
    }

    /// Hidden state feeding step `t`: `h0` for `t == 0`, else row `t-1`.
    pub fn h_prev(&self, t: usize) -> &[T] {
        if t == 0 {
            &self.h0
        } else {
            self.h.row(t - 1)
        }
    }
}

/// Row `t` is `[v_{t-Δ2} … v_{t+Δ1}]`; frames outside `[0, T)` are zero.
pub fn augment_inputs<T: Real>(seq: &Sequence<T>, cfg: &ArmaConfig) -> Matrix<T> {
    let len = seq.len();
    let n_i = seq.n_input();
    if cfg.delta1 == 0 && cfg.delta2 == 0 {
        return seq.frames.clone();
    }
    let mut out = Matrix::zeros(len, cfg.window() * n_i);
    for t in 0..len {
        let row = out.row_mut(t);
        for (k, chunk) in row.chunks_exact_mut(n_i).enumerate() {
            // k = 0 is v_{t-Δ2}
            let src = t as isize - cfg.delta2 as isize + k as isize;
            if (0..len as isize).contains(&src) {
                chunk.copy_from_slice(seq.frames.row(src as usize));
            }
        }
    }
    out
}

pub(crate) fn softmax_in_place<T: Real>(z: &mut [T]) {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn apply_head<T: Real>(head: OutputHead, z: &mut [T]) {
    if head == OutputHead::Softmax {
        softmax_in_place(z);
    }
}

/// Runs the network over `seq` from initial state `h0`.
pub fn forward<T: Real>(
    params: &ModelParams<T>,
    seq: &Sequence<T>,
    cfg: &ArmaConfig,
    h0: &[T],
) -> Result<ForwardTrace<T>> {
    params.check_shapes(cfg, Some(seq.n_input()))?;
    let n = params.n_hidden();
    if h0.len() != n {
        return Err(Error::usage(format!(
            "initial state has length {}, expected {n}",
            h0.len()
        )));
    }
    let inputs = augment_inputs(seq, cfg);
    forward_augmented(params, &inputs, cfg, h0)
}

/// Forward pass on pre-augmented input rows; shapes are assumed checked.
pub(crate) fn forward_augmented<T: Real>(
    params: &ModelParams<T>,
    inputs: &Matrix<T>,
    cfg: &ArmaConfig,
    h0: &[T],
) -> Result<ForwardTrace<T>> {
    let len = inputs.rows();
    let n = params.n_hidden();
    let n_o = params.n_out();
    let mut p = Matrix::zeros(len, n);
    let mut h = Matrix::zeros(len, n);
    let mut y = Matrix::zeros(len, n_o);
    let mut prev = h0.to_vec();
    for t in 0..len {
        let v = inputs.row(t);
        for (i, p_i) in p.row_mut(t).iter_mut().enumerate() {
            let rec = dot(params.w.row(i), &prev);
            let inp = dot(params.wi.row(i), v);
            *p_i = rec + inp + params.b[i];
        }
        for (h_i, &p_i) in h.row_mut(t).iter_mut().zip(p.row(t)) {
            *h_i = cfg.nonlin.apply(p_i);
        }
        let y_t = y.row_mut(t);
        for (o, y_o) in y_t.iter_mut().enumerate() {
            *y_o = dot(params.u.row(o), h.row(t));
        }
        apply_head(cfg.head, y.row_mut(t));
        if !(p.row(t).iter().all(|x| x.is_finite())
            && h.row(t).iter().all(|x| x.is_finite())
            && y.row(t).iter().all(|x| x.is_finite()))
        {
            return Err(Error::NonFinite {
                what: "forward pass",
                step: t,
            });
        }
        prev.copy_from_slice(h.row(t));
    }
    Ok(ForwardTrace {
        p,
        h,
        y,
        h0: h0.to_vec(),
    })
}

/// Time-averaged cost plus the number of probabilities clamped before `ln`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cost<T> {
    pub value: T,
    pub clamped: usize,
}

pub fn one_hot<T: Real>(label: usize, n_out: usize) -> Vec<T> {
    let mut d = vec![T::zero(); n_out];
    d[label] = T::one();
    d
}

/// Time average of the per-frame cost: `‖y_t − d_t‖²` for the linear head,
/// `−ln y_{label,t}` for softmax.
pub fn cost<T: Real>(trace: &ForwardTrace<T>, seq: &Sequence<T>, head: OutputHead) -> Result<Cost<T>> {
    if trace.len() != seq.len() {
        return Err(Error::usage(format!(
            "trace has {} steps, sequence has {}",
            trace.len(),
            seq.len()
        )));
    }
    let n_o = trace.y.cols();
    seq.check_labels(n_o)?;
    let floor = T::lit(1e-300).max(T::min_positive_value());
    let mut total = T::zero();
    let mut clamped = 0;
    for (t, &label) in seq.labels().iter().enumerate() {
        let y_t = trace.y.row(t);
        let j_t = match head {
            OutputHead::Linear => {
                let mut acc = T::zero();
                for (o, &y) in y_t.iter().enumerate() {
                    let d = if o == label { T::one() } else { T::zero() };
                    acc += (y - d) * (y - d);
                }
                acc
            }
            OutputHead::Softmax => {
                let mut y = y_t[label];
                if y < floor {
                    y = floor;
                    clamped += 1;
                }
                -y.ln()
            }
        };
        total += j_t;
    }
    Ok(Cost {
        value: total / T::from_usize(seq.len()).unwrap(),
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq_1d(values: &[f64]) -> Sequence<f64> {
        let frames = Matrix::from_vec(values.len(), 1, values.to_vec()).unwrap();
        Sequence::new(frames, vec![0; values.len()]).unwrap()
    }

    fn cfg(d1: usize, d2: usize) -> ArmaConfig {
        ArmaConfig {
            delta1: d1,
            delta2: d2,
            nonlin: Nonlin::Sigmoid,
            head: OutputHead::Softmax,
        }
    }

    #[test]
    fn augment_ar_is_identity() {
        let s = seq_1d(&[1.0, 2.0, 3.0]);
        assert_eq!(&augment_inputs(&s, &cfg(0, 0)), s.frames());
    }

    #[test]
    fn augment_symmetric_window() {
        let s = seq_1d(&[1.0, 2.0, 3.0]);
        let a = augment_inputs(&s, &cfg(1, 1));
        assert_eq!(a.row(0), &[0.0, 1.0, 2.0]);
        assert_eq!(a.row(1), &[1.0, 2.0, 3.0]);
        assert_eq!(a.row(2), &[2.0, 3.0, 0.0]);
    }

    #[test]
    fn augment_lookback_single_frame() {
        let s = seq_1d(&[7.0]);
        let a = augment_inputs(&s, &cfg(0, 2));
        assert_eq!(a.row(0), &[0.0, 0.0, 7.0]);
    }

    #[test]
    fn augment_multichannel_order() {
        let frames = Matrix::from_rows(&[vec![1.0, 10.0], vec![2.0, 20.0]]).unwrap();
        let s = Sequence::new(frames, vec![0, 0]).unwrap();
        let a = augment_inputs(&s, &cfg(1, 0));
        assert_eq!(a.row(0), &[1.0, 10.0, 2.0, 20.0]);
        assert_eq!(a.row(1), &[2.0, 20.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_params_sigmoid_gives_half() {
        let c = cfg(0, 0);
        let params = ModelParams::<f64>::zeros(3, 1, 2);
        let s = seq_1d(&[5.0, -3.0, 100.0]);
        let tr = forward(&params, &s, &c, &[0.0; 3]).unwrap();
        assert!(tr.h.as_slice().iter().all(|&x| x == 0.5));
        // U = 0 with softmax: uniform
        assert!(tr.y.as_slice().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn zero_params_softmax_uniform() {
        let c = cfg(1, 1);
        let params = ModelParams::<f64>::zeros(2, 3, 4);
        let s = seq_1d(&[0.3, 0.1]);
        let tr = forward(&params, &s, &c, &[0.0; 2]).unwrap();
        assert!(tr.y.as_slice().iter().all(|&x| x == 0.25));
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let c = cfg(0, 0);
        let params = ModelParams::<f64>::zeros(3, 2, 2);
        let s = seq_1d(&[1.0]);
        assert!(matches!(forward(&params, &s, &c, &[0.0; 3]), Err(Error::Usage(_))));
        let params = ModelParams::<f64>::zeros(3, 1, 2);
        assert!(matches!(forward(&params, &s, &c, &[0.0; 2]), Err(Error::Usage(_))));
    }

    #[test]
    fn forward_reports_first_non_finite_step() {
        let c = ArmaConfig::ar(Nonlin::Sigmoid, OutputHead::Linear);
        let mut params = ModelParams::<f64>::zeros(1, 1, 1);
        params.wi[(0, 0)] = 1.0;
        let s = seq_1d(&[0.0, 0.0, f64::NAN, 0.0]);
        match forward(&params, &s, &c, &[0.0]) {
            Err(Error::NonFinite { step, .. }) => assert_eq!(step, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn softmax_rows_normalized_and_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = cfg(1, 0);
        let mut params = ModelParams::<f64>::zeros(4, 2, 5);
        for x in params.u.as_mut_slice() {
            *x = rng.random_range(-800.0..800.0);
        }
        let s = seq_1d(&[0.1, -0.4, 0.9, 2.0]);
        let tr = forward(&params, &s, &c, &[0.0; 4]).unwrap();
        for t in 0..tr.len() {
            let row = tr.y.row(t);
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cost_examples() {
        let frames = Matrix::from_vec(2, 1, vec![0.0, 0.0]).unwrap();
        let s = Sequence::new(frames, vec![1, 0]).unwrap();
        let perfect = ForwardTrace {
            p: Matrix::zeros(2, 1),
            h: Matrix::zeros(2, 1),
            y: Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap(),
            h0: vec![0.0],
        };
        assert_eq!(cost(&perfect, &s, OutputHead::Softmax).unwrap().value, 0.0);
        assert_eq!(cost(&perfect, &s, OutputHead::Linear).unwrap().value, 0.0);

        let uniform = ForwardTrace {
            y: Matrix::from_fn(2, 3, |_, _| 1.0 / 3.0),
            ..perfect.clone()
        };
        let c = cost(&uniform, &s, OutputHead::Softmax).unwrap();
        assert!((c.value - 3f64.ln()).abs() < 1e-15);
        assert_eq!(c.clamped, 0);
    }

    #[test]
    fn cost_clamps_zero_probability() {
        let frames = Matrix::from_vec(1, 1, vec![0.0]).unwrap();
        let s = Sequence::new(frames, vec![0]).unwrap();
        let tr = ForwardTrace {
            p: Matrix::zeros(1, 1),
            h: Matrix::zeros(1, 1),
            y: Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap(),
            h0: vec![0.0],
        };
        let c = cost(&tr, &s, OutputHead::Softmax).unwrap();
        assert_eq!(c.clamped, 1);
        assert!((c.value - 1e-300f64.ln().abs()).abs() < 1e-9);
    }

    #[test]
    fn cost_rejects_out_of_range_label() {
        let frames = Matrix::from_vec(1, 1, vec![0.0]).unwrap();
        let s = Sequence::new(frames, vec![2]).unwrap();
        let tr = ForwardTrace {
            p: Matrix::zeros(1, 1),
            h: Matrix::zeros(1, 1),
            y: Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap(),
            h0: vec![0.0],
        };
        assert!(cost(&tr, &s, OutputHead::Softmax).is_err());
    }

    #[test]
    fn sequence_validation() {
        assert!(Sequence::<f64>::new(Matrix::zeros(0, 2), vec![]).is_err());
        assert!(Sequence::<f64>::new(Matrix::zeros(2, 2), vec![0]).is_err());
    }
}
