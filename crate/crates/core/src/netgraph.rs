//! In-memory SNN graph (one LIF hidden layer, optionally recurrent, and an
//! LI readout), magnitude pruning, fixed-point quantization and capacity
//! validation against the accelerator's parameter-storage limits.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::events::{MAX_NEURONS, MAX_SYNAPSES};
use crate::numerics::{build_leak_lut, quantize, FxFormat, FxValue, LeakLut, NumericsError};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("{path}: expected {expected} rows of {cols} columns, found {reason}")]
    Dimension { path: String, expected: usize, cols: usize, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Dense weight matrix with an explicit zero mask. Masked-out entries are
/// exactly zero; quantization and pruning keep the mask in sync.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub rows: usize,
    pub cols: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl WeightMatrix {
    pub fn from_dense(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols);
        let mask = values.iter().map(|&v| v != 0.0).collect();
        Self { rows, cols, values, mask }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![0.0; rows * cols], mask: vec![false; rows * cols] }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let idx = row * self.cols + col;
        self.values[idx] = value;
        self.mask[idx] = value != 0.0;
    }

    #[inline]
    pub fn is_present(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.cols + col]
    }

    pub fn nnz(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Nonzero entries of one row in column order.
    pub fn row_nonzeros(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.cols).filter(move |&c| self.is_present(row, c)).map(move |c| (c, self.get(row, c)))
    }

    /// Zeroes the `floor(fraction * nnz)` present entries of smallest
    /// magnitude; ties break toward the lexicographically smaller (row, col).
    pub fn prune_magnitude(&self, fraction: f64) -> WeightMatrix {
        assert!((0.0..1.0).contains(&fraction), "prune fraction must be in [0, 1)");
        let mut candidates: Vec<(usize, usize)> = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.is_present(r, c) {
                    candidates.push((r, c));
                }
            }
        }
        let k = (fraction * candidates.len() as f64).floor() as usize;
        candidates.sort_by(|&(r1, c1), &(r2, c2)| {
            let m1 = self.get(r1, c1).abs();
            let m2 = self.get(r2, c2).abs();
            m1.partial_cmp(&m2).unwrap().then(r1.cmp(&r2)).then(c1.cmp(&c2))
        });
        let mut pruned = self.clone();
        for &(r, c) in candidates.iter().take(k) {
            pruned.set(r, c, 0.0);
        }
        pruned
    }
}

/// Layer parameters; the hidden layer is LIF (has a threshold), the output
/// layer is LI (integrates only).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub size: usize,
    pub tau_mem: f64,
    /// Spike threshold; meaningful for the LIF hidden layer only.
    pub threshold: f64,
}

/// SNN graph mirroring Linear/LIF/LI node semantics: dense input->hidden and
/// hidden->output weights with an optional hidden->hidden recurrent matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub input_size: usize,
    pub hidden: LayerSpec,
    pub output: LayerSpec,
    pub w_in: WeightMatrix,
    pub w_out: WeightMatrix,
    pub w_rec: Option<WeightMatrix>,
}

impl Graph {
    /// Prunes each weight matrix independently by magnitude.
    pub fn prune_magnitude(&self, fraction: f64) -> Graph {
        Graph {
            w_in: self.w_in.prune_magnitude(fraction),
            w_out: self.w_out.prune_magnitude(fraction),
            w_rec: self.w_rec.as_ref().map(|m| m.prune_magnitude(fraction)),
            ..self.clone()
        }
    }

    pub fn total_nnz(&self) -> usize {
        self.w_in.nnz() + self.w_out.nnz() + self.w_rec.as_ref().map_or(0, |m| m.nnz())
    }
}

/// Quantized weight matrix: raw fixed-point patterns plus the zero mask.
/// Weights that quantize to zero join the mask so the compiler never emits
/// a synapse word that cannot influence any neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix {
    pub rows: usize,
    pub cols: usize,
    pub format: FxFormat,
    raw: Vec<i64>,
    mask: Vec<bool>,
}

impl QMatrix {
    fn quantize_from(m: &WeightMatrix, format: FxFormat) -> Self {
        let raw: Vec<i64> = m.values.iter().map(|&v| quantize(v, format).raw).collect();
        let mask = raw
            .iter()
            .zip(&m.mask)
            .map(|(&r, &present)| present && r != 0)
            .collect();
        Self { rows: m.rows, cols: m.cols, format, raw, mask }
    }

    #[inline]
    pub fn raw_at(&self, row: usize, col: usize) -> i64 {
        self.raw[row * self.cols + col]
    }

    #[inline]
    pub fn is_present(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.cols + col]
    }

    pub fn value_at(&self, row: usize, col: usize) -> FxValue {
        FxValue::new(self.raw_at(row, col), self.format)
    }

    pub fn nnz(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn row_nonzeros(&self, row: usize) -> impl Iterator<Item = (usize, i64)> + '_ {
        (0..self.cols).filter(move |&c| self.is_present(row, c)).map(move |c| (c, self.raw_at(row, c)))
    }
}

/// Graph with weights and thresholds in accelerator fixed point and per-layer
/// leak LUTs built.
#[derive(Debug, Clone, PartialEq)]
pub struct QGraph {
    pub input_size: usize,
    pub hidden_size: usize,
    pub output_size: usize,
    pub w_in: QMatrix,
    pub w_out: QMatrix,
    pub w_rec: Option<QMatrix>,
    pub hidden_lut: LeakLut,
    pub output_lut: LeakLut,
    pub u_th: FxValue,
    pub weight_format: FxFormat,
    pub membrane_format: FxFormat,
    pub n_max: u32,
    pub lut_frac: u32,
}

/// Quantizes weights and threshold and builds the per-layer leak LUTs.
pub fn quantize_graph(
    g: &Graph,
    weight_fmt: FxFormat,
    membrane_fmt: FxFormat,
    n_max: u32,
    lut_frac: u32,
) -> Result<QGraph, NumericsError> {
    Ok(QGraph {
        input_size: g.input_size,
        hidden_size: g.hidden.size,
        output_size: g.output.size,
        w_in: QMatrix::quantize_from(&g.w_in, weight_fmt),
        w_out: QMatrix::quantize_from(&g.w_out, weight_fmt),
        w_rec: g.w_rec.as_ref().map(|m| QMatrix::quantize_from(m, weight_fmt)),
        hidden_lut: build_leak_lut(g.hidden.tau_mem, n_max, lut_frac)?,
        output_lut: build_leak_lut(g.output.tau_mem, n_max, lut_frac)?,
        u_th: quantize(g.hidden.threshold, membrane_fmt),
        weight_format: weight_fmt,
        membrane_format: membrane_fmt,
        n_max,
        lut_frac,
    })
}

/// Per-core parameter-storage limits of the accelerator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CapacityLimits {
    pub syn_per_core: usize,
    pub neur_per_core: usize,
}

impl Default for CapacityLimits {
    fn default() -> Self {
        Self { syn_per_core: MAX_SYNAPSES as usize, neur_per_core: MAX_NEURONS as usize }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapacityViolation {
    pub core: u8,
    pub resource: &'static str,
    pub required: usize,
    pub limit: usize,
}

impl std::fmt::Display for CapacityViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "core {}: {} requires {} but the limit is {}",
            self.core, self.resource, self.required, self.limit
        )
    }
}

/// Checks the three-core mapping against the parameter-storage limits and
/// returns every violation (an empty list means the graph fits).
pub fn validate_capacity(q: &QGraph, limits: CapacityLimits) -> Vec<CapacityViolation> {
    let mut violations = Vec::new();
    let mut check = |core: u8, resource: &'static str, required: usize, limit: usize| {
        if required > limit {
            violations.push(CapacityViolation { core, resource, required, limit });
        }
    };
    let nnz_in = q.w_in.nnz();
    let nnz_rec = q.w_rec.as_ref().map_or(0, |m| m.nnz());
    let nnz_out = q.w_out.nnz();
    // Core 0 (multicast): one axon entry per input channel, one fan-out
    // packet per nonzero input weight; channel ids must be addressable.
    check(0, "input channels", q.input_size, limits.neur_per_core);
    check(0, "input fan-out entries", nnz_in, limits.syn_per_core);
    // Core 1 (hidden LIF): synapse words for w_in + w_rec, hidden neurons.
    check(1, "synapse words", nnz_in + nnz_rec, limits.syn_per_core);
    check(1, "neurons", q.hidden_size, limits.neur_per_core);
    check(1, "fan-out entries", nnz_out + nnz_rec, limits.syn_per_core);
    // Core 2 (output LI): synapse words for w_out, output neurons.
    check(2, "synapse words", nnz_out, limits.syn_per_core);
    check(2, "neurons", q.output_size, limits.neur_per_core);
    violations
}

/// Parses a `.graph` file and its weight sidecars. Sidecar paths are resolved
/// relative to the graph file's directory.
pub fn parse_graph(path: impl AsRef<Path>) -> Result<Graph, GraphError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    parse_graph_text(&text, &path.display().to_string(), dir)
}

fn parse_graph_text(text: &str, path: &str, dir: &Path) -> Result<Graph, GraphError> {
    let err = |line: usize, reason: String| GraphError::Parse {
        path: path.to_string(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "# yana-graph v1" => {}
        Some((_, l)) => return Err(err(1, format!("expected '# yana-graph v1', got '{l}'"))),
        None => return Err(err(1, "empty file".into())),
    }

    let mut input_size: Option<usize> = None;
    let mut hidden: Option<LayerSpec> = None;
    let mut output: Option<LayerSpec> = None;
    let mut w_in_file: Option<PathBuf> = None;
    let mut w_out_file: Option<PathBuf> = None;
    let mut w_rec_file: Option<PathBuf> = None;

    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("input") => {
                let v = toks.next().ok_or_else(|| err(lineno, "missing input size".into()))?;
                input_size = Some(v.parse().map_err(|_| err(lineno, format!("bad input size '{v}'")))?);
            }
            Some("layer") => {
                let name = toks.next().ok_or_else(|| err(lineno, "missing layer name".into()))?;
                let kind = toks.next().ok_or_else(|| err(lineno, "missing layer kind".into()))?;
                let mut size: Option<usize> = None;
                let mut tau: Option<f64> = None;
                let mut threshold: Option<f64> = None;
                for tok in toks {
                    let (k, v) = tok
                        .split_once('=')
                        .ok_or_else(|| err(lineno, format!("expected key=value, got '{tok}'")))?;
                    match k {
                        "size" => size = Some(v.parse().map_err(|_| err(lineno, format!("bad size '{v}'")))?),
                        "tau" => tau = Some(parse_rational(v).ok_or_else(|| err(lineno, format!("bad tau '{v}'")))?),
                        "threshold" => {
                            threshold =
                                Some(v.parse().map_err(|_| err(lineno, format!("bad threshold '{v}'")))?)
                        }
                        _ => return Err(err(lineno, format!("unknown layer attribute '{k}'"))),
                    }
                }
                let size = size.ok_or_else(|| err(lineno, "layer missing size".into()))?;
                let tau = tau.ok_or_else(|| err(lineno, "layer missing tau".into()))?;
                if size == 0 {
                    return Err(err(lineno, "layer size must be > 0".into()));
                }
                if tau <= 1.0 {
                    return Err(err(lineno, format!("tau must be > 1, got {tau}")));
                }
                match (name, kind) {
                    ("hidden", "lif") => {
                        let threshold =
                            threshold.ok_or_else(|| err(lineno, "lif layer missing threshold".into()))?;
                        hidden = Some(LayerSpec { size, tau_mem: tau, threshold });
                    }
                    ("output", "li") => output = Some(LayerSpec { size, tau_mem: tau, threshold: 0.0 }),
                    _ => return Err(err(lineno, format!("unknown layer '{name} {kind}'"))),
                }
            }
            Some("weights") => {
                let edge = toks.next().ok_or_else(|| err(lineno, "missing weights edge".into()))?;
                let file_tok = toks.next().ok_or_else(|| err(lineno, "missing file=".into()))?;
                let file = file_tok
                    .strip_prefix("file=")
                    .ok_or_else(|| err(lineno, format!("expected file=<path>, got '{file_tok}'")))?;
                let p = dir.join(file);
                match edge {
                    "input->hidden" => w_in_file = Some(p),
                    "hidden->output" => w_out_file = Some(p),
                    "hidden->hidden" => w_rec_file = Some(p),
                    _ => return Err(err(lineno, format!("unknown weights edge '{edge}'"))),
                }
            }
            Some(other) => return Err(err(lineno, format!("unknown directive '{other}'"))),
            None => unreachable!(),
        }
    }

    let input_size = input_size.ok_or_else(|| err(0, "missing 'input' directive".into()))?;
    let hidden = hidden.ok_or_else(|| err(0, "missing hidden layer".into()))?;
    let output = output.ok_or_else(|| err(0, "missing output layer".into()))?;
    if input_size == 0 {
        return Err(err(0, "input size must be > 0".into()));
    }
    let w_in_file = w_in_file.ok_or_else(|| err(0, "missing input->hidden weights".into()))?;
    let w_out_file = w_out_file.ok_or_else(|| err(0, "missing hidden->output weights".into()))?;

    let w_in = load_weight_csv(&w_in_file, input_size, hidden.size)?;
    let w_out = load_weight_csv(&w_out_file, hidden.size, output.size)?;
    let w_rec = w_rec_file
        .map(|p| load_weight_csv(&p, hidden.size, hidden.size))
        .transpose()?;

    Ok(Graph { input_size, hidden, output, w_in, w_out, w_rec })
}

fn parse_rational(s: &str) -> Option<f64> {
    if let Some((num, den)) = s.split_once('/') {
        let n: f64 = num.parse().ok()?;
        let d: f64 = den.parse().ok()?;
        (d != 0.0).then(|| n / d)
    } else {
        s.parse().ok()
    }
}

/// Loads a `.wcsv` sidecar: one matrix row per line, comma-separated reals.
pub fn load_weight_csv(path: &Path, rows: usize, cols: usize) -> Result<WeightMatrix, GraphError> {
    let text = std::fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut values = Vec::with_capacity(rows * cols);
    let mut row_count = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        row_count += 1;
        let row: Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let row = row.map_err(|_| GraphError::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            reason: "bad weight value".into(),
        })?;
        if row.len() != cols {
            return Err(GraphError::Dimension {
                path: path.display().to_string(),
                expected: rows,
                cols,
                reason: format!("row {} has {} columns", row_count, row.len()),
            });
        }
        values.extend(row);
    }
    if row_count != rows {
        return Err(GraphError::Dimension {
            path: path.display().to_string(),
            expected: rows,
            cols,
            reason: format!("{row_count} rows"),
        });
    }
    Ok(WeightMatrix::from_dense(rows, cols, values))
}

/// Writes a weight matrix in `.wcsv` form (used by fixtures and tooling).
pub fn format_weight_csv(m: &WeightMatrix) -> String {
    let mut out = String::new();
    for r in 0..m.rows {
        let row: Vec<String> = (0..m.cols).map(|c| format_weight(m.get(r, c))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn format_weight(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}
