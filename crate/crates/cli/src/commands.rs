use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use esrnn::clipping::train_clipped;
use esrnn::data_io::{
    load_checkpoint, load_dataset, load_manifest, save_checkpoint, write_manifest, write_report_log,
    write_sequence, Checkpoint, Manifest,
};
use esrnn::echo_state::{check_sufficient, init_params, verify_contraction};
use esrnn::gradients::{backprop, finite_diff, FD_STEP, REL_ERROR_FLOOR};
use esrnn::model::{forward, Sequence};
use esrnn::numerics::Matrix;
use esrnn::primal_dual::train_from_state;
use esrnn::tasks::{evaluate, generate};
use esrnn::training::{DualState, OptState, TrainReport};
use esrnn::{ArmaConfig, Nonlin, OutputHead, Params, Seq};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{Optimizer, RunConfig, DEFAULT_N_INPUT, DEFAULT_N_OUT};
use crate::{CliError, EXIT_CHECK_FAILED, EXIT_OK};

pub const GRADCHECK_TOLERANCE: f64 = 1e-6;
const GRADCHECK_N_INPUT: usize = 3;
const GRADCHECK_N_OUT: usize = 3;

macro_rules! emit {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(|e| CliError::Io { path: PathBuf::from("<stdout>"), source: e })
    };
}

/// Training data with its declared widths.
pub struct Dataset {
    pub sequences: Vec<Seq>,
    pub n_input: usize,
    pub n_out: usize,
}

fn check_declared(key: &str, configured: Option<usize>, manifest: usize) -> Result<(), CliError> {
    match configured {
        Some(c) if c != manifest => Err(CliError::Config(format!(
            "config sets {key}={c} but the manifest declares {key}={manifest}"
        ))),
        _ => Ok(()),
    }
}

/// Loads the manifest named in `cfg`, or generates the synthetic task.
pub fn load_or_generate(cfg: &RunConfig) -> Result<Dataset, CliError> {
    match &cfg.manifest {
        Some(path) => {
            let m = load_manifest(path)?;
            check_declared("n_input", cfg.n_input, m.n_input)?;
            check_declared("n_out", cfg.n_out, m.n_out)?;
            Ok(Dataset {
                sequences: load_dataset(&m)?,
                n_input: m.n_input,
                n_out: m.n_out,
            })
        }
        None => Ok(Dataset {
            sequences: generate(&cfg.synth())?,
            n_input: cfg.n_input.unwrap_or(DEFAULT_N_INPUT),
            n_out: cfg.n_out.unwrap_or(DEFAULT_N_OUT),
        }),
    }
}

pub struct RunOutcome {
    pub params: Params,
    pub dual: DualState<f64>,
    pub iteration: u64,
    pub reports: Vec<TrainReport>,
}

/// Initializes from the init seed stream and trains with the configured
/// optimizer.
pub fn train_run(cfg: &RunConfig, data: &Dataset) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let arma = cfg.arma();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds().init);
    let params: Params = init_params(cfg.n_hidden, data.n_input, data.n_out, &arma, &mut rng)?;
    match cfg.optimizer {
        Optimizer::PrimalDual => {
            let (state, reports) = train_from_state(OptState::new(params), &data.sequences, &arma, &cfg.pd(), None)?;
            Ok(RunOutcome {
                params: state.params,
                dual: state.dual,
                iteration: state.k as u64,
                reports,
            })
        }
        Optimizer::Clipping => {
            let n = cfg.n_hidden;
            let (params, reports) = train_clipped(params, &data.sequences, &arma, &cfg.clip())?;
            let per_epoch = data.sequences.len().div_ceil(cfg.batch);
            Ok(RunOutcome {
                params,
                dual: DualState::zeros(n),
                iteration: (cfg.epochs * per_epoch) as u64,
                reports,
            })
        }
    }
}

fn write_outputs(cfg: &RunConfig, outcome: &RunOutcome, ckpt: &Path, report: &Path) -> Result<(), CliError> {
    let c = Checkpoint::new(cfg.arma(), outcome.params.clone(), outcome.dual.clone(), outcome.iteration)?;
    save_checkpoint(ckpt, &c)?;
    write_report_log(report, &outcome.reports)?;
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32, CliError> {
    cfg.validate()?;
    let data = load_or_generate(cfg)?;
    let outcome = train_run(cfg, &data)?;
    write_outputs(cfg, &outcome, &cfg.out_checkpoint, &cfg.out_report)?;
    let final_eval = evaluate(&outcome.params, &cfg.arma(), &data.sequences)?;
    emit!(
        out,
        "epochs={} iterations={} frame_error={:.6} mean_cost={:.6} inf_norm_W={:.6}",
        outcome.reports.len(),
        outcome.iteration,
        final_eval.frame_error,
        final_eval.mean_cost,
        outcome.params.w.inf_norm()?
    )?;
    Ok(EXIT_OK)
}

/// `model.ckpt` + `thr0.5` → `model_thr0.5.ckpt`.
pub fn with_tag(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{tag}"),
    };
    path.with_file_name(name)
}

/// Clipping baseline once per threshold; outputs are tagged `_thr<t>`.
pub fn cmd_train_sweep(cfg: &RunConfig, thresholds: &[f64], out: &mut dyn Write) -> Result<i32, CliError> {
    if cfg.optimizer != Optimizer::Clipping {
        return Err(CliError::Config("--thresholds requires optimizer=clipping".into()));
    }
    let data = load_or_generate(cfg)?;
    for &t in thresholds {
        let run = RunConfig {
            threshold: t,
            ..cfg.clone()
        };
        run.validate()?;
        let outcome = train_run(&run, &data)?;
        let tag = format!("thr{t}");
        write_outputs(
            &run,
            &outcome,
            &with_tag(&cfg.out_checkpoint, &tag),
            &with_tag(&cfg.out_report, &tag),
        )?;
        let fe = evaluate(&outcome.params, &run.arma(), &data.sequences)?.frame_error;
        emit!(out, "threshold={t} frame_error={fe:.6}")?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_eval(model: &Path, data: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    let ckpt = load_checkpoint(model)?;
    let manifest = load_manifest(data)?;
    let n_out = ckpt.params.n_out();
    if manifest.n_input != ckpt.n_input || manifest.n_out != n_out {
        return Err(CliError::Config(format!(
            "manifest {} declares n_input={} n_out={}, checkpoint {} has n_input={} n_out={}",
            data.display(),
            manifest.n_input,
            manifest.n_out,
            model.display(),
            ckpt.n_input,
            n_out
        )));
    }
    let sequences = load_dataset(&manifest)?;
    let ev = evaluate(&ckpt.params, &ckpt.cfg, &sequences)?;
    emit!(out, "frame_error={:.6}", ev.frame_error)?;
    Ok(EXIT_OK)
}

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub n_hidden: usize,
    pub t_len: usize,
    pub repeats: usize,
    pub perturb: bool,
}

/// The (nonlinearity, head, window) grid, `repeats` seeds each.
pub fn gradcheck_configs(repeats: usize) -> Vec<ArmaConfig> {
    let mut out = Vec::new();
    for _ in 0..repeats {
        for nonlin in [Nonlin::Sigmoid, Nonlin::Tanh] {
            for head in [OutputHead::Linear, OutputHead::Softmax] {
                for (delta1, delta2) in [(0, 0), (2, 3)] {
                    out.push(ArmaConfig {
                        delta1,
                        delta2,
                        nonlin,
                        head,
                    });
                }
            }
        }
    }
    out
}

pub fn cmd_gradcheck(opts: &GradcheckOptions, out: &mut dyn Write) -> Result<i32, CliError> {
    if opts.n_hidden == 0 || opts.n_hidden > 8 || opts.t_len == 0 || opts.t_len > 20 || opts.repeats == 0 {
        return Err(CliError::Config(
            "gradcheck needs 1 <= n_hidden <= 8, 1 <= t_len <= 20, repeats >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst: f64 = 0.0;
    for (i, cfg) in gradcheck_configs(opts.repeats).iter().enumerate() {
        let mut params: Params = init_params(opts.n_hidden, GRADCHECK_N_INPUT, GRADCHECK_N_OUT, cfg, &mut rng)?;
        params.b.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        let frames = Matrix::from_fn(opts.t_len, GRADCHECK_N_INPUT, |_, _| rng.sample::<f64, _>(StandardNormal));
        let labels = (0..opts.t_len).map(|_| rng.random_range(0..GRADCHECK_N_OUT)).collect();
        let seq = Sequence::new(frames, labels)?;
        let trace = forward(&params, &seq, cfg, &vec![0.0; opts.n_hidden])?;
        let mut g = backprop(&params, cfg, &seq, &trace)?;
        if opts.perturb {
            g.dw[(0, 0)] += 1e-3;
        }
        let fd = finite_diff(&params, cfg, &seq, FD_STEP)?;
        let err = g.max_rel_error(&fd, REL_ERROR_FLOOR);
        worst = worst.max(err);
        emit!(
            out,
            "config={i} nonlin={} head={} delta1={} delta2={} n_hidden={} t_len={} max_rel_error={err:.3e}",
            cfg.nonlin.name(),
            cfg.head.name(),
            cfg.delta1,
            cfg.delta2,
            opts.n_hidden,
            opts.t_len
        )?;
    }
    let pass = worst < GRADCHECK_TOLERANCE;
    emit!(
        out,
        "max_rel_error={worst:.3e} tolerance={GRADCHECK_TOLERANCE:e} result={}",
        if pass { "pass" } else { "fail" }
    )?;
    Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

pub fn cmd_contraction(model: &Path, steps: usize, seed: u64, out: &mut dyn Write) -> Result<i32, CliError> {
    let ckpt = load_checkpoint(model)?;
    let cfg = ckpt.cfg;
    let check = check_sufficient(&ckpt.params, &cfg)?;
    emit!(
        out,
        "inf_norm_W={:.6} limit={:.6} condition={}",
        check.inf_norm,
        check.bound,
        if check.holds { "holds" } else { "not_met" }
    )?;
    emit!(out, "t gap bound")?;
    if steps == 0 {
        return Ok(EXIT_OK);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = Matrix::from_fn(steps, ckpt.n_input, |_, _| rng.sample::<f64, _>(StandardNormal));
    let seq = Sequence::new(frames, vec![0; steps])?;
    let n = ckpt.params.n_hidden();
    let (lo, hi) = match cfg.nonlin {
        Nonlin::Sigmoid => (0.0, 1.0),
        Nonlin::Tanh => (-1.0, 1.0),
    };
    let h0: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    let mut h0p: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    if h0p == h0 {
        h0p[0] = if h0[0] > 0.0 { h0[0] / 2.0 } else { hi / 2.0 };
    }
    let report = verify_contraction(&ckpt.params, &cfg, &seq, &h0, &h0p)?;
    for (t, (gap, bound)) in report.per_step_gap.iter().zip(&report.per_step_bound).enumerate() {
        emit!(out, "{} {gap:.6e} {bound:.6e}", t + 1)?;
    }
    if !check.holds {
        emit!(out, "condition not met: bound not applicable")?;
        return Ok(EXIT_OK);
    }
    emit!(out, "satisfied={}", report.satisfied)?;
    Ok(if report.satisfied { EXIT_OK } else { EXIT_CHECK_FAILED })
}

/// Writes `seq_NNNN.feat` / `seq_NNNN.lab` pairs and `manifest.txt`.
pub fn cmd_gen_synth(cfg: &RunConfig, out_dir: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    let spec = cfg.synth();
    let sequences = generate(&spec)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    let mut entries = Vec::with_capacity(sequences.len());
    for (i, seq) in sequences.iter().enumerate() {
        let f = out_dir.join(format!("seq_{i:04}.feat"));
        let l = out_dir.join(format!("seq_{i:04}.lab"));
        write_sequence(&f, &l, seq)?;
        entries.push((f, l));
    }
    let manifest_path = out_dir.join("manifest.txt");
    write_manifest(
        &manifest_path,
        &Manifest {
            entries,
            n_input: spec.n_input,
            n_out: spec.n_out,
        },
    )?;
    emit!(out, "wrote {} sequences and {}", sequences.len(), manifest_path.display())?;
    Ok(EXIT_OK)
}
