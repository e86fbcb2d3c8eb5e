//! On-disk formats.
//!
//! Feature file: header `T N_I`, then `T` lines of `N_I` decimal reals.
//! Label file: `T` lines of one class index each.
//! Manifest: `n_input <N_I>`, `n_out <N_o>`, then one `features labels` path
//! pair per line (relative paths resolve against the manifest's directory;
//! `#` starts a comment).
//!
//! Checkpoint (all integers little-endian):
//!
//! ```text
//! "ESRN" | version u32 | N, N_I, N_o, Δ1, Δ2, nonlin, head: u32 each
//! | W | W̄_I | U | b | λ      (row-major f64 blocks)
//! | iteration u64 | checksum u64 (byte sum of everything before it, mod 2^64)
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{ArmaConfig, ModelParams, OutputHead, Sequence};
use crate::numerics::{Matrix, Nonlin};
use crate::training::{DualState, TrainReport};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ESRN";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 7 * 4;

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with 1-based line numbers; blank lines are only allowed
/// at the end of the file.
fn content_lines(path: &Path, text: &str) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    let mut blank_at = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            blank_at.get_or_insert(i + 1);
            continue;
        }
        if let Some(b) = blank_at {
            return Err(parse_err(path, b, "blank line inside data"));
        }
        out.push((i + 1, line.to_string()));
    }
    Ok(out)
}

fn parse_usize(path: &Path, line: usize, tok: &str, what: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| parse_err(path, line, format!("expected {what}, found '{tok}'")))
}

pub fn load_features(path: &Path) -> Result<Matrix<f64>> {
    let text = read_text(path)?;
    let lines = content_lines(path, &text)?;
    let Some((hline, header)) = lines.first() else {
        return Err(parse_err(path, 1, "missing header 'T N_I'"));
    };
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 2 {
        return Err(parse_err(path, *hline, "header must be 'T N_I'"));
    }
    let len = parse_usize(path, *hline, toks[0], "frame count")?;
    let n_i = parse_usize(path, *hline, toks[1], "feature dimension")?;
    if len == 0 || n_i == 0 {
        return Err(parse_err(path, *hline, "T and N_I must be positive"));
    }
    let rows = &lines[1..];
    if rows.len() > len {
        return Err(parse_err(
            path,
            rows[len].0,
            format!("header declares {len} frames but more rows follow"),
        ));
    }
    let mut data = Vec::with_capacity(len * n_i);
    for (lineno, row) in rows {
        let before = data.len();
        for tok in row.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(path, *lineno, format!("bad number '{tok}'")))?;
            if !v.is_finite() {
                return Err(parse_err(path, *lineno, format!("non-finite value '{tok}'")));
            }
            data.push(v);
        }
        if data.len() - before != n_i {
            return Err(parse_err(
                path,
                *lineno,
                format!("expected {n_i} values, found {}", data.len() - before),
            ));
        }
    }
    if rows.len() < len {
        let missing_line = rows.last().map_or(*hline, |r| r.0) + 1;
        return Err(parse_err(
            path,
            missing_line,
            format!("header declares {len} frames, found {}", rows.len()),
        ));
    }
    Matrix::from_vec(len, n_i, data)
}

pub fn load_labels(path: &Path, expected_len: usize, n_out: usize) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    let lines = content_lines(path, &text)?;
    let mut labels = Vec::with_capacity(expected_len);
    for (lineno, line) in &lines {
        if labels.len() == expected_len {
            return Err(parse_err(
                path,
                *lineno,
                format!("more than {expected_len} labels"),
            ));
        }
        let l = parse_usize(path, *lineno, line, "class index")?;
        if l >= n_out {
            return Err(parse_err(
                path,
                *lineno,
                format!("label {l} out of range for {n_out} classes"),
            ));
        }
        labels.push(l);
    }
    if labels.len() < expected_len {
        let next = lines.last().map_or(1, |l| l.0 + 1);
        return Err(parse_err(
            path,
            next,
            format!("expected {expected_len} labels, found {}", labels.len()),
        ));
    }
    Ok(labels)
}

/// Reads one utterance and validates its labels against `n_out` classes.
pub fn load_sequence(features_path: &Path, labels_path: &Path, n_out: usize) -> Result<Sequence<f64>> {
    let frames = load_features(features_path)?;
    let labels = load_labels(labels_path, frames.rows(), n_out)?;
    Sequence::new(frames, labels)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_sequence(features_path: &Path, labels_path: &Path, seq: &Sequence<f64>) -> Result<()> {
    let mut feat = format!("{} {}\n", seq.len(), seq.n_input());
    for t in 0..seq.len() {
        let row: Vec<String> = seq.frames().row(t).iter().map(|v| format!("{v:?}")).collect();
        feat.push_str(&row.join(" "));
        feat.push('\n');
    }
    write_file(features_path, feat.as_bytes())?;
    let mut lab = String::new();
    for l in seq.labels() {
        lab.push_str(&format!("{l}\n"));
    }
    write_file(labels_path, lab.as_bytes())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(PathBuf, PathBuf)>,
    pub n_input: usize,
    pub n_out: usize,
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = read_text(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut n_input = None;
    let mut n_out = None;
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["n_input", v] => n_input = Some(parse_usize(path, lineno, v, "n_input")?),
            ["n_out", v] => n_out = Some(parse_usize(path, lineno, v, "n_out")?),
            [f, l] => entries.push((base.join(f), base.join(l))),
            _ => return Err(parse_err(path, lineno, "expected 'features labels' pair")),
        }
    }
    let n_input = n_input.ok_or_else(|| parse_err(path, 0, "missing 'n_input'"))?;
    let n_out = n_out.ok_or_else(|| parse_err(path, 0, "missing 'n_out'"))?;
    if entries.is_empty() {
        return Err(parse_err(path, 0, "manifest lists no sequences"));
    }
    for (f, l) in &entries {
        for p in [f, l] {
            if !p.is_file() {
                return Err(parse_err(path, 0, format!("referenced file {} does not exist", p.display())));
            }
        }
    }
    Ok(Manifest {
        entries,
        n_input,
        n_out,
    })
}

/// Writes a manifest whose entries are stored relative to its directory
/// when possible.
pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    let mut out = format!("n_input {}\nn_out {}\n", manifest.n_input, manifest.n_out);
    for (f, l) in &manifest.entries {
        out.push_str(&format!("{} {}\n", rel(f), rel(l)));
    }
    write_file(path, out.as_bytes())
}

/// Loads every sequence listed in `manifest`, checking the declared widths.
pub fn load_dataset(manifest: &Manifest) -> Result<Vec<Sequence<f64>>> {
    manifest
        .entries
        .iter()
        .map(|(f, l)| {
            let seq = load_sequence(f, l, manifest.n_out)?;
            if seq.n_input() != manifest.n_input {
                return Err(parse_err(
                    f,
                    1,
                    format!(
                        "file has {} features per frame, manifest declares {}",
                        seq.n_input(),
                        manifest.n_input
                    ),
                ));
            }
            Ok(seq)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub cfg: ArmaConfig,
    /// Per-frame input width before windowing.
    pub n_input: usize,
    pub params: ModelParams<f64>,
    pub dual: DualState<f64>,
    pub iteration: u64,
}

impl Checkpoint {
    pub fn new(cfg: ArmaConfig, params: ModelParams<f64>, dual: DualState<f64>, iteration: u64) -> Result<Self> {
        params.check_shapes(&cfg, None)?;
        if dual.lambda.len() != params.n_hidden() {
            return Err(Error::usage("dual state length differs from hidden size"));
        }
        Ok(Self {
            version: CHECKPOINT_VERSION,
            n_input: params.n_input(&cfg),
            cfg,
            params,
            dual,
            iteration,
        })
    }
}

fn nonlin_tag(n: Nonlin) -> u32 {
    match n {
        Nonlin::Sigmoid => 0,
        Nonlin::Tanh => 1,
    }
}

fn head_tag(h: OutputHead) -> u32 {
    match h {
        OutputHead::Linear => 0,
        OutputHead::Softmax => 1,
    }
}

fn byte_sum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0u64, |acc, &b| acc.wrapping_add(b as u64))
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::usage(format!("{what} = {v} does not fit the checkpoint format")))
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let p = &ckpt.params;
    p.check_shapes(&ckpt.cfg, Some(ckpt.n_input))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&ckpt.version.to_le_bytes());
    for v in [
        to_u32(p.n_hidden(), "N")?,
        to_u32(ckpt.n_input, "N_I")?,
        to_u32(p.n_out(), "N_o")?,
        to_u32(ckpt.cfg.delta1, "delta1")?,
        to_u32(ckpt.cfg.delta2, "delta2")?,
        nonlin_tag(ckpt.cfg.nonlin),
        head_tag(ckpt.cfg.head),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for block in [
        p.w.as_slice(),
        p.wi.as_slice(),
        p.u.as_slice(),
        &p.b,
        &ckpt.dual.lambda,
    ] {
        for x in block {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out.extend_from_slice(&ckpt.iteration.to_le_bytes());
    let sum = byte_sum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u32(&mut self) -> u32 {
        let v = u32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v
    }

    fn u64(&mut self) -> u64 {
        let v = u64::from_le_bytes(self.bytes[self.pos..self.pos + 8].try_into().unwrap());
        self.pos += 8;
        v
    }

    fn f64s(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| f64::from_bits(self.u64())).collect()
    }
}

/// Parses checkpoint bytes; `path` only labels errors.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let length_err = |offset: usize, expected: usize| Error::Length {
        path: path.to_path_buf(),
        offset,
        expected,
        found: bytes.len(),
    };
    if bytes.len() < 8 {
        return Err(length_err(bytes.len(), HEADER_LEN));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32();
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadVersion {
            path: path.to_path_buf(),
            found: version,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(length_err(bytes.len(), HEADER_LEN));
    }
    let dims: Vec<usize> = (0..7).map(|_| r.u32() as usize).collect();
    let (n, n_i, n_o, d1, d2) = (dims[0], dims[1], dims[2], dims[3], dims[4]);
    let (n128, window) = (n as u128, d1 as u128 + d2 as u128 + 1);
    let floats = n128 * n128 + n128 * window * n_i as u128 + n_o as u128 * n128 + 2 * n128;
    let expected = HEADER_LEN as u128 + 8 * floats + 16;
    if expected != bytes.len() as u128 {
        let expected = usize::try_from(expected).unwrap_or(usize::MAX);
        return Err(length_err(bytes.len().min(expected), expected));
    }
    let body_end = bytes.len() - 8;
    let stored = u64::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let computed = byte_sum(&bytes[..body_end]);
    if stored != computed {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            stored,
            computed,
        });
    }
    let bad_field = |msg: String| parse_err(path, 0, msg);
    let nonlin = match dims[5] {
        0 => Nonlin::Sigmoid,
        1 => Nonlin::Tanh,
        t => return Err(bad_field(format!("unknown nonlinearity tag {t}"))),
    };
    let head = match dims[6] {
        0 => OutputHead::Linear,
        1 => OutputHead::Softmax,
        t => return Err(bad_field(format!("unknown output head tag {t}"))),
    };
    if n == 0 || n_i == 0 || n_o == 0 {
        return Err(bad_field("zero model dimension".into()));
    }
    let cfg = ArmaConfig {
        delta1: d1,
        delta2: d2,
        nonlin,
        head,
    };
    let n_eff = n_i * cfg.window();
    let w = Matrix::from_vec(n, n, r.f64s(n * n))?;
    let wi = Matrix::from_vec(n, n_eff, r.f64s(n * n_eff))?;
    let u = Matrix::from_vec(n_o, n, r.f64s(n_o * n))?;
    let b = r.f64s(n);
    let lambda = r.f64s(n);
    let iteration = r.u64();
    Ok(Checkpoint {
        version,
        cfg,
        n_input: n_i,
        params: ModelParams { w, wi, u, b },
        dual: DualState { lambda },
        iteration,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_file(path, &encode_checkpoint(ckpt)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

pub const REPORT_HEADER: [&str; 8] = [
    "epoch",
    "mean_cost",
    "frame_error",
    "inf_norm_W",
    "max_lambda",
    "mean_lambda",
    "clip_events",
    "wall_ms",
];

fn sig12(v: f64) -> String {
    format!("{v:.11e}")
}

/// One CSV row per epoch with a header; reals carry 12 significant digits.
pub fn write_report_log(path: &Path, reports: &[TrainReport]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(REPORT_HEADER)?;
    for r in reports {
        w.write_record([
            r.epoch.to_string(),
            sig12(r.mean_cost),
            sig12(r.frame_error),
            sig12(r.inf_norm_w),
            sig12(r.max_lambda),
            sig12(r.mean_lambda),
            r.clip_events.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

pub fn read_report_log(path: &Path) -> Result<Vec<TrainReport>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let f = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| parse_err(path, line, format!("bad value in column {}", REPORT_HEADER[k])))
        };
        let n = |k: usize| -> Result<u64> {
            rec.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| parse_err(path, line, format!("bad value in column {}", REPORT_HEADER[k])))
        };
        out.push(TrainReport {
            epoch: n(0)? as usize,
            mean_cost: f(1)?,
            frame_error: f(2)?,
            inf_norm_w: f(3)?,
            max_lambda: f(4)?,
            mean_lambda: f(5)?,
            clip_events: n(6)? as usize,
            wall_ms: n(7)?,
        });
    }
    Ok(out)
}
