//! A small rectifier network for velocity regression.
//!
//! Inputs are `(x, t, ln t)` after a fixed affine normalization; the raw
//! output is multiplied by a fixed scale and then clipped componentwise to the
//! envelope `D (|σ′_t| √ln n + |m′_t|)`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cfm::stratified_times;
use crate::error::{Error, Result};
use crate::field::VelocityField;
use crate::points::Points;
use crate::rng::substream;
use crate::schedules::Schedule;

const MAGIC: &[u8; 8] = b"FMVNET01";

/// Architecture and clamp settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_layers: usize,
    /// Width is `round(width_factor · √N′)`.
    pub width_factor: f64,
    pub min_width: usize,
    /// The clamp constant `D`.
    pub clamp: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 3,
            width_factor: 8.0,
            min_width: 4,
            clamp: 5.0,
        }
    }
}

impl ModelConfig {
    pub fn width_for(&self, n_basis: usize) -> usize {
        ((self.width_factor * (n_basis.max(1) as f64).sqrt()).round() as usize).max(self.min_width)
    }
}

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Probe loss is recorded every `trace_every` steps.
    pub trace_every: usize,
    pub probe_size: usize,
    /// Cosine decay of the step size from `lr` to `lr · final_lr_fraction`;
    /// `1` keeps it constant.
    pub final_lr_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 256,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            trace_every: 50,
            probe_size: 512,
            final_lr_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct Header {
    dim: usize,
    /// `(rows, cols)` of each affine layer.
    shapes: Vec<(usize, usize)>,
    clamp: f64,
    log_n: f64,
    schedule: Schedule,
    schedule_id: String,
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
    output_scale: f64,
}

/// Feedforward network `(x, t) ↦ v`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityNet {
    head: Header,
    params: Vec<f64>,
}

/// Size proxies of the network class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Complexity {
    pub depth: usize,
    pub max_width: usize,
    pub params: usize,
    pub nonzero: usize,
    pub max_abs: f64,
}

/// Training record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// `(step, probe loss)` pairs, starting with step 0.
    pub trace: Vec<(usize, f64)>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: usize,
}

impl VelocityNet {
    /// He-initialized network with the given hidden widths and identity
    /// input/output normalization. `n_data` sets the clamp's `√ln n`.
    pub fn new(
        dim: usize,
        hidden: &[usize],
        schedule: Schedule,
        clamp: f64,
        n_data: usize,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 || hidden.contains(&0) {
            return Err(Error::Parameter("network widths must be positive".into()));
        }
        let mut shapes = Vec::with_capacity(hidden.len() + 1);
        let mut cols = dim + 2;
        for &w in hidden {
            shapes.push((w, cols));
            cols = w;
        }
        shapes.push((dim, cols));
        let mut net = Self::zeros(dim, shapes, schedule, clamp, n_data)?;
        let mut rng = substream(seed, 0x696e6974);
        let mut offset = 0;
        for &(rows, cols) in &net.head.shapes.clone() {
            let std = (2.0 / cols as f64).sqrt();
            for p in &mut net.params[offset..offset + rows * cols] {
                *p = std * rng.sample::<f64, _>(StandardNormal);
            }
            offset += rows * cols + rows;
        }
        Ok(net)
    }

    /// All-zero parameters for explicit layer shapes `(rows, cols)`; the first
    /// layer must take `dim + 2` inputs and the last must emit `dim`.
    pub fn zeros(
        dim: usize,
        shapes: Vec<(usize, usize)>,
        schedule: Schedule,
        clamp: f64,
        n_data: usize,
    ) -> Result<Self> {
        if shapes.is_empty() || shapes[0].1 != dim + 2 || shapes.last().map(|s| s.0) != Some(dim) {
            return Err(Error::Parameter("layer shapes do not match the input/output sizes".into()));
        }
        if shapes.windows(2).any(|w| w[0].0 != w[1].1) {
            return Err(Error::Parameter("consecutive layer shapes do not chain".into()));
        }
        if !(clamp > 0.0) {
            return Err(Error::Parameter(format!("clamp must be positive, got {clamp}")));
        }
        if n_data < 2 {
            return Err(Error::Parameter("clamp envelope needs n >= 2".into()));
        }
        let count = shapes.iter().map(|(r, c)| r * c + r).sum();
        Ok(Self {
            head: Header {
                dim,
                shapes,
                clamp,
                log_n: (n_data as f64).ln(),
                schedule_id: schedule.id(),
                schedule,
                input_shift: vec![0.0; dim + 2],
                input_scale: vec![1.0; dim + 2],
                output_scale: 1.0,
            },
            params: vec![0.0; count],
        })
    }

    /// `hidden_layers` layers of `width_for(n_basis)` units.
    pub fn for_basis_count(
        dim: usize,
        n_basis: usize,
        cfg: &ModelConfig,
        schedule: Schedule,
        n_data: usize,
        seed: u64,
    ) -> Result<Self> {
        let w = cfg.width_for(n_basis);
        Self::new(dim, &vec![w; cfg.hidden_layers], schedule, cfg.clamp, n_data, seed)
    }

    pub fn schedule(&self) -> &Schedule {
        &self.head.schedule
    }

    pub fn clamp_constant(&self) -> f64 {
        self.head.clamp
    }

    pub fn layer_shapes(&self) -> &[(usize, usize)] {
        &self.head.shapes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Offsets of the weight matrix (row-major) and bias of `layer`.
    pub fn layer_offsets(&self, layer: usize) -> (usize, usize) {
        let mut off = 0;
        for &(r, c) in &self.head.shapes[..layer] {
            off += r * c + r;
        }
        let (r, c) = self.head.shapes[layer];
        (off, off + r * c)
    }

    /// Sets the fixed feature normalization `(f − shift)/scale` and the output
    /// multiplier.
    pub fn set_normalization(&mut self, shift: Vec<f64>, scale: Vec<f64>, output_scale: f64) -> Result<()> {
        let k = self.head.dim + 2;
        if shift.len() != k || scale.len() != k {
            return Err(Error::Dimension {
                expected: k,
                got: shift.len().min(scale.len()),
            });
        }
        if scale.iter().any(|s| !(*s > 0.0)) || !(output_scale > 0.0) {
            return Err(Error::Parameter("normalization scales must be positive".into()));
        }
        self.head.input_shift = shift;
        self.head.input_scale = scale;
        self.head.output_scale = output_scale;
        Ok(())
    }

    /// Fits the normalization to path draws on `[t_lo, t_hi]`: features are
    /// standardized and the output scale is the RMS teacher magnitude.
    pub fn fit_normalization(
        &mut self,
        data: &Points,
        t_lo: f64,
        t_hi: f64,
        seed: u64,
        draws: usize,
    ) -> Result<()> {
        let d = self.head.dim;
        let mut rng = substream(seed, 0x6e6f726d);
        let batch = path_batch(data, &self.head.schedule, t_lo, t_hi, &mut rng, draws.max(1));
        let k = d + 2;
        let feats: Vec<f64> = batch
            .ts
            .iter()
            .enumerate()
            .flat_map(|(i, &t)| {
                let mut row = batch.xs[i * d..(i + 1) * d].to_vec();
                row.push(t);
                row.push(t.ln());
                row
            })
            .collect();
        let targets = batch.targets;
        let mut shift = vec![0.0; k];
        let mut scale = vec![0.0; k];
        let rows = feats.len() / k;
        for row in feats.chunks(k) {
            for (s, f) in shift.iter_mut().zip(row) {
                *s += f / rows as f64;
            }
        }
        for row in feats.chunks(k) {
            for ((v, f), s) in scale.iter_mut().zip(row).zip(&shift) {
                *v += (f - s).powi(2) / rows as f64;
            }
        }
        for v in scale.iter_mut() {
            *v = if *v > 1e-24 { v.sqrt() } else { 1.0 };
        }
        let rms = (targets.iter().map(|v| v * v).sum::<f64>() / targets.len() as f64).sqrt();
        self.set_normalization(shift, scale, if rms > 0.0 { rms } else { 1.0 })
    }

    /// `D (|σ′_t| √ln n + |m′_t|)`.
    pub fn envelope(&self, t: f64) -> f64 {
        let s = self.head.schedule.eval_unchecked(t.clamp(f64::MIN_POSITIVE, 1.0));
        self.head.clamp * (s.dsigma.abs() * self.head.log_n.sqrt() + s.dm.abs())
    }

    fn features(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let d = self.head.dim;
        out[..d].copy_from_slice(x);
        out[d] = t;
        out[d + 1] = t.max(f64::MIN_POSITIVE).ln();
        for ((o, s), c) in out.iter_mut().zip(&self.head.input_shift).zip(&self.head.input_scale) {
            *o = (*o - s) / c;
        }
    }

    /// Unclipped output and the per-layer activations (input first).
    fn forward_trace(&self, x: &[f64], t: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut a = vec![0.0; self.head.dim + 2];
        self.features(x, t, &mut a);
        let mut acts = vec![a];
        let n_layers = self.head.shapes.len();
        let mut off = 0;
        let mut raw = Vec::new();
        for (l, &(rows, cols)) in self.head.shapes.iter().enumerate() {
            let w = &self.params[off..off + rows * cols];
            let b = &self.params[off + rows * cols..off + rows * cols + rows];
            let input = acts.last().unwrap();
            let mut z: Vec<f64> = (0..rows)
                .map(|r| b[r] + w[r * cols..(r + 1) * cols].iter().zip(input).map(|(p, q)| p * q).sum::<f64>())
                .collect();
            off += rows * cols + rows;
            if l + 1 < n_layers {
                for v in z.iter_mut() {
                    *v = v.max(0.0);
                }
                acts.push(z);
            } else {
                raw = z.into_iter().map(|v| v * self.head.output_scale).collect();
            }
        }
        (acts, raw)
    }

    /// Output before clipping.
    pub fn forward_unclamped(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.forward_trace(x, t).1
    }

    /// Clipped output.
    pub fn forward(&self, x: &[f64], t: f64) -> Vec<f64> {
        let env = self.envelope(t);
        self.forward_unclamped(x, t)
            .into_iter()
            .map(|v| v.clamp(-env, env))
            .collect()
    }

    /// Layer inputs for a batch, one column per sample (features first), and
    /// the unclipped output.
    fn forward_batch(&self, xs: &[f64], ts: &[f64]) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
        let d = self.head.dim;
        let mut feats = DMatrix::zeros(d + 2, ts.len());
        let mut buf = vec![0.0; d + 2];
        for (j, &t) in ts.iter().enumerate() {
            self.features(&xs[j * d..(j + 1) * d], t, &mut buf);
            feats.column_mut(j).copy_from_slice(&buf);
        }
        let mut acts = vec![feats];
        let n_layers = self.head.shapes.len();
        for (l, &(rows, cols)) in self.head.shapes.iter().enumerate() {
            let (wo, bo) = self.layer_offsets(l);
            let w = DMatrix::from_row_slice(rows, cols, &self.params[wo..wo + rows * cols]);
            let mut z = w * acts.last().unwrap();
            let b = &self.params[bo..bo + rows];
            for mut col in z.column_iter_mut() {
                for (v, bias) in col.iter_mut().zip(b) {
                    *v += bias;
                }
            }
            if l + 1 < n_layers {
                z.apply(|v| *v = v.max(0.0));
                acts.push(z);
            } else {
                return (acts, z * self.head.output_scale);
            }
        }
        unreachable!("a network has at least one layer")
    }

    fn check_batch(&self, xs: &[f64], ts: &[f64], targets: &[f64]) -> Result<()> {
        let d = self.head.dim;
        if ts.is_empty() {
            return Err(Error::Parameter("batch must be nonempty".into()));
        }
        if xs.len() != ts.len() * d || targets.len() != ts.len() * d {
            return Err(Error::Dimension {
                expected: ts.len() * d,
                got: xs.len().min(targets.len()),
            });
        }
        Ok(())
    }

    /// Mean over the batch of `‖forward(x, t) − target‖²` and its exact
    /// gradient. Clipped components contribute no gradient. `xs` and `targets`
    /// are row-major with `dim` columns.
    pub fn loss_and_grad(&self, xs: &[f64], ts: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_batch(xs, ts, targets)?;
        let d = self.head.dim;
        let bsz = ts.len() as f64;
        let (acts, raw) = self.forward_batch(xs, ts);
        let mut loss = 0.0;
        let mut delta = DMatrix::zeros(d, ts.len());
        for (j, &t) in ts.iter().enumerate() {
            let env = self.envelope(t);
            for k in 0..d {
                let r = raw[(k, j)];
                let y = targets[j * d + k];
                let v = r.clamp(-env, env);
                loss += (v - y).powi(2);
                if r.abs() <= env {
                    delta[(k, j)] = 2.0 * (v - y) / bsz * self.head.output_scale;
                }
            }
        }
        let mut grad = vec![0.0; self.params.len()];
        for l in (0..self.head.shapes.len()).rev() {
            let (rows, cols) = self.head.shapes[l];
            let (wo, bo) = self.layer_offsets(l);
            let gw = &delta * acts[l].transpose();
            for r in 0..rows {
                for c in 0..cols {
                    grad[wo + r * cols + c] = gw[(r, c)];
                }
                grad[bo + r] = delta.row(r).sum();
            }
            if l == 0 {
                break;
            }
            let w = DMatrix::from_row_slice(rows, cols, &self.params[wo..wo + rows * cols]);
            let mut prev = w.tr_mul(&delta);
            prev.zip_apply(&acts[l], |p, a| {
                if a <= 0.0 {
                    *p = 0.0;
                }
            });
            delta = prev;
        }
        Ok((loss / bsz, grad))
    }

    /// Mean squared error of the clipped output on a batch.
    pub fn batch_loss(&self, xs: &[f64], ts: &[f64], targets: &[f64]) -> f64 {
        let d = self.head.dim;
        if ts.is_empty() {
            return f64::NAN;
        }
        let (_, raw) = self.forward_batch(xs, ts);
        let mut total = 0.0;
        for (j, &t) in ts.iter().enumerate() {
            let env = self.envelope(t);
            for k in 0..d {
                total += (raw[(k, j)].clamp(-env, env) - targets[j * d + k]).powi(2);
            }
        }
        total / ts.len() as f64
    }

    /// Product of per-layer spectral norms (50 power iterations each). The
    /// first layer is restricted to its `x` columns and the input and output
    /// scalings are included, so this bounds the Lipschitz constant in `x` of
    /// the unclipped map at every `t`.
    pub fn lipschitz_upper(&self) -> f64 {
        let d = self.head.dim;
        let mut bound = self.head.output_scale;
        for (l, &(rows, cols)) in self.head.shapes.iter().enumerate() {
            let (wo, _) = self.layer_offsets(l);
            let w = &self.params[wo..wo + rows * cols];
            let norm = if l == 0 {
                let restricted: Vec<f64> = (0..rows)
                    .flat_map(|r| (0..d).map(move |c| (r, c)))
                    .map(|(r, c)| w[r * cols + c] / self.head.input_scale[c])
                    .collect();
                spectral_norm(&restricted, rows, d, 50)
            } else {
                spectral_norm(w, rows, cols, 50)
            };
            bound *= norm;
        }
        bound
    }

    pub fn complexity(&self) -> Complexity {
        Complexity {
            depth: self.head.shapes.len(),
            max_width: self.head.shapes.iter().map(|s| s.0.max(s.1)).max().unwrap_or(0),
            params: self.params.len(),
            nonzero: self.params.iter().filter(|p| **p != 0.0).count(),
            max_abs: self.params.iter().fold(0.0, |m, p| m.max(p.abs())),
        }
    }

    /// Writes the checkpoint: the 8-byte magic `FMVNET01`, a little-endian
    /// `u64` header length, a JSON header (shapes, clamp, `ln n`, schedule,
    /// normalization), a little-endian `u64` parameter count, then the
    /// parameters as little-endian `f64` in layer order (row-major weights,
    /// then bias).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&self.head).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a velocity-net checkpoint".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let head: Header = serde_json::from_slice(&header).map_err(|e| Error::Format(e.to_string()))?;
        r.read_exact(&mut len)?;
        let count = u64::from_le_bytes(len) as usize;
        let expected: usize = head.shapes.iter().map(|(a, b)| a * b + a).sum();
        if count != expected {
            return Err(Error::Format(format!("expected {expected} parameters, header says {count}")));
        }
        let mut params = vec![0.0; count];
        let mut buf = [0u8; 8];
        for p in params.iter_mut() {
            r.read_exact(&mut buf)?;
            *p = f64::from_le_bytes(buf);
        }
        Ok(Self { head, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

impl VelocityField for VelocityNet {
    fn dim(&self) -> usize {
        self.head.dim
    }

    fn velocity(&self, x: &[f64], t: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.forward(x, t));
    }
}

fn spectral_norm(w: &[f64], rows: usize, cols: usize, iters: usize) -> f64 {
    if rows == 0 || cols == 0 || w.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    let mut v = vec![1.0 / (cols as f64).sqrt(); cols];
    let mut sigma = 0.0;
    for _ in 0..iters {
        let u: Vec<f64> = (0..rows)
            .map(|r| w[r * cols..(r + 1) * cols].iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect();
        let mut next = vec![0.0; cols];
        for r in 0..rows {
            for (n, a) in next.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *n += a * u[r];
            }
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // v fell into the null space; restart from a coordinate vector
            let col = (0..cols)
                .max_by(|&a, &b| {
                    let na: f64 = (0..rows).map(|r| w[r * cols + a].powi(2)).sum();
                    let nb: f64 = (0..rows).map(|r| w[r * cols + b].powi(2)).sum();
                    na.total_cmp(&nb)
                })
                .unwrap();
            v = vec![0.0; cols];
            v[col] = 1.0;
            continue;
        }
        sigma = norm.sqrt();
        v = next.into_iter().map(|x| x / norm).collect();
    }
    // one extra Rayleigh step so the returned value is ‖W v‖ for the final v
    let wv: f64 = (0..rows)
        .map(|r| w[r * cols..(r + 1) * cols].iter().zip(&v).map(|(a, b)| a * b).sum::<f64>().powi(2))
        .sum::<f64>()
        .sqrt();
    sigma.max(wv)
}

struct PathBatch {
    xs: Vec<f64>,
    ts: Vec<f64>,
    targets: Vec<f64>,
}

fn path_batch(data: &Points, schedule: &Schedule, t_lo: f64, t_hi: f64, rng: &mut crate::rng::Rng, count: usize) -> PathBatch {
    let d = data.dim();
    let ts = stratified_times(rng, t_lo, t_hi, count);
    let mut xs = Vec::with_capacity(count * d);
    let mut targets = Vec::with_capacity(count * d);
    for &t in &ts {
        let y = data.row(rng.random_range(0..data.len()));
        let s = schedule.eval_unchecked(t);
        for &yi in y {
            let e: f64 = rng.sample(StandardNormal);
            xs.push(s.sigma * e + s.m * yi);
            targets.push(s.dsigma * e + s.dm * yi);
        }
    }
    PathBatch { xs, ts, targets }
}

/// Adam on the flow-matching loss restricted to `[t_lo, t_hi]`. The returned
/// trace is the loss on a fixed probe batch, so it is constant when `lr = 0`.
pub fn train(
    mut net: VelocityNet,
    data: &Points,
    t_lo: f64,
    t_hi: f64,
    cfg: &TrainConfig,
) -> Result<(VelocityNet, TrainReport)> {
    if !(t_lo > 0.0 && t_lo < t_hi && t_hi <= 1.0) {
        return Err(Error::Domain(format!(
            "training interval must satisfy 0 < t_lo < t_hi <= 1, got [{t_lo}, {t_hi}]"
        )));
    }
    if data.is_empty() || data.dim() != net.head.dim {
        return Err(Error::Dimension {
            expected: net.head.dim,
            got: data.dim(),
        });
    }
    if cfg.batch == 0 || cfg.probe_size == 0 || cfg.trace_every == 0 {
        return Err(Error::Parameter("batch, probe_size and trace_every must be positive".into()));
    }
    if !(cfg.final_lr_fraction >= 0.0 && cfg.final_lr_fraction <= 1.0) {
        return Err(Error::Parameter(format!(
            "final_lr_fraction must lie in [0, 1], got {}",
            cfg.final_lr_fraction
        )));
    }
    let schedule = net.head.schedule;
    let mut probe_rng = substream(cfg.seed, u64::MAX);
    let probe = path_batch(data, &schedule, t_lo, t_hi, &mut probe_rng, cfg.probe_size);
    let probe_loss = |net: &VelocityNet| net.batch_loss(&probe.xs, &probe.ts, &probe.targets);

    let initial = probe_loss(&net);
    let mut trace = vec![(0, initial)];
    let mut m = vec![0.0; net.params.len()];
    let mut v = vec![0.0; net.params.len()];
    let mut rng = substream(cfg.seed, 1);
    let mut last = initial;
    for step in 1..=cfg.steps {
        let batch = path_batch(data, &schedule, t_lo, t_hi, &mut rng, cfg.batch);
        let (loss, grad) = net.loss_and_grad(&batch.xs, &batch.ts, &batch.targets)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                step,
                interval: None,
                loss,
            });
        }
        if cfg.lr != 0.0 {
            let f = cfg.final_lr_fraction;
            let progress = (step - 1) as f64 / cfg.steps.max(2).saturating_sub(1) as f64;
            let lr = cfg.lr * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
            let c1 = 1.0 - cfg.beta1.powi(step as i32);
            let c2 = 1.0 - cfg.beta2.powi(step as i32);
            for ((p, g), (mi, vi)) in net.params.iter_mut().zip(&grad).zip(m.iter_mut().zip(v.iter_mut())) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
                *p -= lr * (*mi / c1) / ((*vi / c2).sqrt() + cfg.adam_eps);
            }
        }
        if step % cfg.trace_every == 0 || step == cfg.steps {
            last = probe_loss(&net);
            if !last.is_finite() {
                return Err(Error::Divergence {
                    step,
                    interval: None,
                    loss: last,
                });
            }
            trace.push((step, last));
        }
    }
    Ok((
        net,
        TrainReport {
            trace,
            initial_loss: initial,
            final_loss: last,
            steps: cfg.steps,
        },
    ))
}

/// Builds a net sized for `n_basis`, fits its normalization on the interval and
/// trains it.
pub fn fit_interval(
    data: &Points,
    schedule: Schedule,
    t_lo: f64,
    t_hi: f64,
    n_basis: usize,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(VelocityNet, TrainReport)> {
    let mut net = VelocityNet::for_basis_count(data.dim(), n_basis, model, schedule, data.len().max(2), cfg.seed)?;
    net.fit_normalization(data, t_lo, t_hi, cfg.seed, 4096)?;
    train(net, data, t_lo, t_hi, cfg)
}
