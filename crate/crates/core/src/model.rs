//! BinaryNE parameters and training.
//!
//! The hidden layer of node `i` is `Φ(i)_r = tanh(β · W_in[i][r])`; training
//! raises β from `beta_start` to `beta_end` so the relaxed layer approaches
//! `sgn`. Each iteration either predicts a context node from a sampled
//! (center, context) pair or an attribute from a sampled (node, attribute)
//! pair, both with negative sampling.
//!
//! `W_in` is stored row-major (`|V| × d`). The output matrices are stored one
//! output column per contiguous `d`-slice, so `W_out_s[:, j]` is
//! `context_column(j)`. The checkpoint format writes them in the
//! conventional `d × |V|` / `d × |A|` row-major layout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU32, Ordering};

use log::debug;
use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{AttributeMatrix, Graph, NodeId};
use crate::sampler::{AttrPairSampler, NoiseDistribution, PairSampler};
use crate::walks::PairCounts;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"BNEP";
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_HEADER_LEN: usize = 28;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    node_count: usize,
    attr_count: usize,
    dim: usize,
    w_in: Vec<f32>,
    w_out_s: Vec<f32>,
    w_out_a: Vec<f32>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// −log σ(x), evaluated without overflow.
#[inline]
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

impl ModelParams {
    /// `W_in` uniform on [−0.5/d, 0.5/d]; both output matrices zero.
    pub fn init(node_count: usize, attr_count: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / dim as f32;
        let w_in = (0..node_count * dim)
            .map(|_| (rng.gen::<f32>() - 0.5) * scale)
            .collect();
        Ok(ModelParams {
            node_count,
            attr_count,
            dim,
            w_in,
            w_out_s: vec![0.0; node_count * dim],
            w_out_a: vec![0.0; attr_count * dim],
        })
    }

    /// All-zero parameters; useful for tests and for loading.
    pub fn zeros(node_count: usize, attr_count: usize, dim: usize) -> Self {
        ModelParams {
            node_count,
            attr_count,
            dim,
            w_in: vec![0.0; node_count * dim],
            w_out_s: vec![0.0; node_count * dim],
            w_out_a: vec![0.0; attr_count * dim],
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn attr_count(&self) -> usize {
        self.attr_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn w_in(&self) -> &[f32] {
        &self.w_in
    }

    pub fn w_in_mut(&mut self) -> &mut [f32] {
        &mut self.w_in
    }

    pub fn w_in_row(&self, node: usize) -> &[f32] {
        &self.w_in[node * self.dim..(node + 1) * self.dim]
    }

    pub fn w_in_row_mut(&mut self, node: usize) -> &mut [f32] {
        &mut self.w_in[node * self.dim..(node + 1) * self.dim]
    }

    /// `W_out_s[:, j]`.
    pub fn context_column(&self, j: usize) -> &[f32] {
        &self.w_out_s[j * self.dim..(j + 1) * self.dim]
    }

    pub fn context_column_mut(&mut self, j: usize) -> &mut [f32] {
        &mut self.w_out_s[j * self.dim..(j + 1) * self.dim]
    }

    /// `W_out_a[:, j]`.
    pub fn attr_column(&self, j: usize) -> &[f32] {
        &self.w_out_a[j * self.dim..(j + 1) * self.dim]
    }

    pub fn attr_column_mut(&mut self, j: usize) -> &mut [f32] {
        &mut self.w_out_a[j * self.dim..(j + 1) * self.dim]
    }

    pub fn w_out_s(&self) -> &[f32] {
        &self.w_out_s
    }

    pub fn w_out_a(&self) -> &[f32] {
        &self.w_out_a
    }

    pub fn is_finite(&self) -> bool {
        self.w_in
            .iter()
            .chain(&self.w_out_s)
            .chain(&self.w_out_a)
            .all(|v| v.is_finite())
    }

    /// Φ(node) at sharpness `beta`: a direct row lookup, no one-hot input.
    pub fn hidden_repr(&self, node: NodeId, beta: f64) -> Vec<f64> {
        self.w_in_row(node.index())
            .iter()
            .map(|&w| (beta * w as f64).tanh())
            .collect()
    }

    /// Negative-sampled structure objective for pair (v_i, v_j).
    pub fn structure_loss(&self, center: NodeId, context: NodeId, negatives: &[u32], beta: f64) -> f64 {
        let phi = self.hidden_repr(center, beta);
        partial_loss(&phi, &self.w_out_s, self.dim, context.index(), negatives)
    }

    /// Negative-sampled attribute objective for pair (v_i, a_j).
    pub fn attribute_loss(&self, node: NodeId, attr: usize, negatives: &[u32], beta: f64) -> f64 {
        let phi = self.hidden_repr(node, beta);
        partial_loss(&phi, &self.w_out_a, self.dim, attr, negatives)
    }

    /// Gradient of [`structure_loss`](Self::structure_loss) at the current
    /// parameters: the quantities an SGD step subtracts, scaled by η.
    pub fn structure_gradient(&self, center: NodeId, context: NodeId, negatives: &[u32], beta: f64) -> Result<PartialGradient> {
        let mut kernel = StepKernel::new(self.dim, None);
        let loss = kernel
            .compute(&self.w_in[..], &self.w_out_s[..], center.index(), context.index(), negatives, beta, true)
            .ok_or(Error::NonFinite {
                iter: 0,
                branch: "structure",
                node: center.index(),
            })?;
        Ok(kernel.gradient(center.index(), context.index(), negatives, loss))
    }

    /// Gradient of [`attribute_loss`](Self::attribute_loss) at the current
    /// parameters.
    pub fn attribute_gradient(&self, node: NodeId, attr: usize, negatives: &[u32], beta: f64) -> Result<PartialGradient> {
        let mut kernel = StepKernel::new(self.dim, None);
        let loss = kernel
            .compute(&self.w_in[..], &self.w_out_a[..], node.index(), attr, negatives, beta, true)
            .ok_or(Error::NonFinite {
                iter: 0,
                branch: "attribute",
                node: node.index(),
            })?;
        Ok(kernel.gradient(node.index(), attr, negatives, loss))
    }

    pub fn sgd_step_structure(
        &mut self,
        center: NodeId,
        context: NodeId,
        negatives: &[u32],
        eta: f64,
        beta: f64,
    ) -> Result<()> {
        let mut kernel = StepKernel::new(self.dim, None);
        kernel
            .step(&mut self.w_in[..], &mut self.w_out_s[..], center.index(), context.index(), negatives, eta, beta, false)
            .map(|_| ())
            .ok_or(Error::NonFinite {
                iter: 0,
                branch: "structure",
                node: center.index(),
            })
    }

    pub fn sgd_step_attribute(
        &mut self,
        node: NodeId,
        attr: usize,
        negatives: &[u32],
        eta: f64,
        beta: f64,
    ) -> Result<()> {
        let mut kernel = StepKernel::new(self.dim, None);
        kernel
            .step(&mut self.w_in[..], &mut self.w_out_a[..], node.index(), attr, negatives, eta, beta, false)
            .map(|_| ())
            .ok_or(Error::NonFinite {
                iter: 0,
                branch: "attribute",
                node: node.index(),
            })
    }

    /// Writes the `BNEP` checkpoint: 28-byte little-endian header, then
    /// `W_in` (|V|×d), `W_out_s` (d×|V|), `W_out_a` (d×|A|) as row-major f32.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));
        write(&CHECKPOINT_MAGIC)?;
        write(&CHECKPOINT_VERSION.to_le_bytes())?;
        write(&(self.node_count as u64).to_le_bytes())?;
        write(&(self.attr_count as u64).to_le_bytes())?;
        write(&(self.dim as u32).to_le_bytes())?;
        for v in &self.w_in {
            write(&v.to_le_bytes())?;
        }
        for (cols, count) in [(&self.w_out_s, self.node_count), (&self.w_out_a, self.attr_count)] {
            for r in 0..self.dim {
                for j in 0..count {
                    write(&cols[j * self.dim + r].to_le_bytes())?;
                }
            }
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let mut input = BufReader::new(file);
        let mut header = [0u8; CHECKPOINT_HEADER_LEN];
        input
            .read_exact(&mut header)
            .map_err(|_| Error::format(path, "truncated checkpoint header"))?;
        if header[0..4] != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "bad magic (expected BNEP)"));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
        }
        let node_count = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let attr_count = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(header[24..28].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(Error::format(path, "zero dimension"));
        }
        let expected = (CHECKPOINT_HEADER_LEN as u64)
            .checked_add(4 * dim as u64 * (2 * node_count as u64 + attr_count as u64))
            .ok_or_else(|| Error::format(path, "header sizes overflow"))?;
        if file_len != expected {
            return Err(Error::format(
                path,
                format!("file is {file_len} bytes, header implies {expected}"),
            ));
        }
        let mut params = ModelParams::zeros(node_count, attr_count, dim);
        let mut buf = [0u8; 4];
        let mut next = |input: &mut BufReader<File>| -> Result<f32> {
            input
                .read_exact(&mut buf)
                .map_err(|_| Error::format(path, "truncated checkpoint body"))?;
            Ok(f32::from_le_bytes(buf))
        };
        for v in params.w_in.iter_mut() {
            *v = next(&mut input)?;
        }
        for (cols, count) in [(&mut params.w_out_s, node_count), (&mut params.w_out_a, attr_count)] {
            for r in 0..dim {
                for j in 0..count {
                    cols[j * dim + r] = next(&mut input)?;
                }
            }
        }
        Ok(params)
    }
}

fn partial_loss(phi: &[f64], cols: &[f32], dim: usize, target: usize, negatives: &[u32]) -> f64 {
    let score = |j: usize| -> f64 {
        phi.iter()
            .zip(&cols[j * dim..(j + 1) * dim])
            .map(|(p, &w)| p * w as f64)
            .sum()
    };
    neg_log_sigmoid(score(target))
        + negatives
            .iter()
            .map(|&k| neg_log_sigmoid(-score(k as usize)))
            .sum::<f64>()
}

/// Bulk access shared by the single-writer and the lock-free multi-writer
/// parameter views.
trait Store {
    fn read(&self, start: usize, out: &mut [f64]);
    fn write(&mut self, start: usize, vals: &[f64]);
}

impl Store for [f32] {
    #[inline(always)]
    fn read(&self, start: usize, out: &mut [f64]) {
        let src = &self[start..start + out.len()];
        for (o, &v) in out.iter_mut().zip(src) {
            *o = v as f64;
        }
    }
    #[inline(always)]
    fn write(&mut self, start: usize, vals: &[f64]) {
        for (d, &v) in self[start..start + vals.len()].iter_mut().zip(vals) {
            *d = v as f32;
        }
    }
}

/// Racy view for asynchronous training. Relaxed atomics compile to plain
/// loads and stores; concurrent updates may overwrite each other.
#[derive(Clone, Copy)]
struct Shared<'a>(&'a [AtomicU32]);

impl<'a> Shared<'a> {
    fn new(slice: &'a mut [f32]) -> Self {
        // SAFETY: f32 and AtomicU32 share size and alignment, and the
        // exclusive borrow guarantees no non-atomic access for 'a.
        let atoms = unsafe { std::slice::from_raw_parts(slice.as_mut_ptr() as *const AtomicU32, slice.len()) };
        Shared(atoms)
    }
}

impl Store for Shared<'_> {
    #[inline(always)]
    fn read(&self, start: usize, out: &mut [f64]) {
        let src = &self.0[start..start + out.len()];
        for (o, a) in out.iter_mut().zip(src) {
            *o = f32::from_bits(a.load(Ordering::Relaxed)) as f64;
        }
    }
    #[inline(always)]
    fn write(&mut self, start: usize, vals: &[f64]) {
        for (a, &v) in self.0[start..start + vals.len()].iter().zip(vals) {
            a.store((v as f32).to_bits(), Ordering::Relaxed);
        }
    }
}

/// Dot product with eight independent accumulators so it vectorizes.
#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Scratch buffers for one SGD update.
struct StepKernel {
    dim: usize,
    row: Vec<f64>,
    phi: Vec<f64>,
    dphi: Vec<f64>,
    grad_in: Vec<f64>,
    col: Vec<f64>,
    coef: Vec<f64>,
    clip: Option<f64>,
}

impl StepKernel {
    fn new(dim: usize, clip: Option<f64>) -> Self {
        StepKernel {
            dim,
            row: vec![0.0; dim],
            phi: vec![0.0; dim],
            dphi: vec![0.0; dim],
            grad_in: vec![0.0; dim],
            col: vec![0.0; dim],
            coef: Vec::new(),
            clip,
        }
    }

    #[inline(always)]
    fn clip(clip: Option<f64>, g: f64) -> f64 {
        match clip {
            Some(c) => g.clamp(-c, c),
            None => g,
        }
    }

    /// Scores the positive target and the negatives against row `node` and
    /// fills `phi`, `dphi`, `grad_in` (Σ g·W_out before the tanh factor) and
    /// `coef` (∂O/∂score per slot), all from current values. Returns the
    /// partial objective when `want_loss` (0 otherwise), or `None` if a
    /// gradient is not finite.
    #[allow(clippy::too_many_arguments)]
    #[inline]
    fn compute<I: Store + ?Sized, O: Store + ?Sized>(
        &mut self,
        w_in: &I,
        w_out: &O,
        node: usize,
        target: usize,
        negatives: &[u32],
        beta: f64,
        want_loss: bool,
    ) -> Option<f64> {
        let dim = self.dim;
        w_in.read(node * dim, &mut self.row);
        for r in 0..dim {
            let t = (beta * self.row[r]).tanh();
            self.phi[r] = t;
            self.dphi[r] = beta * (1.0 - t * t);
        }
        self.grad_in.fill(0.0);
        self.coef.clear();
        let mut loss = 0.0;
        let mut finite = true;
        for (slot, col) in std::iter::once(target).chain(negatives.iter().map(|&k| k as usize)).enumerate() {
            w_out.read(col * dim, &mut self.col);
            let score = dot(&self.phi, &self.col);
            let positive = slot == 0;
            // ∂O/∂score: σ(s) − 1 for the positive target, σ(s) for negatives.
            let g = if positive { sigmoid(score) - 1.0 } else { sigmoid(score) };
            if want_loss {
                loss += if positive { neg_log_sigmoid(score) } else { neg_log_sigmoid(-score) };
            }
            for (acc, &w) in self.grad_in.iter_mut().zip(self.col.iter()) {
                *acc += g * w;
            }
            finite &= g.is_finite();
            self.coef.push(g);
        }
        (finite && self.grad_in.iter().all(|g| g.is_finite())).then_some(loss)
    }

    /// Applies the step prepared by [`compute`](Self::compute). Columns are
    /// re-read before writing so a column drawn twice gets both updates.
    #[inline]
    fn apply<I: Store + ?Sized, O: Store + ?Sized>(
        &mut self,
        w_in: &mut I,
        w_out: &mut O,
        node: usize,
        target: usize,
        negatives: &[u32],
        eta: f64,
    ) {
        let dim = self.dim;
        let clip = self.clip;
        for (slot, col) in std::iter::once(target).chain(negatives.iter().map(|&k| k as usize)).enumerate() {
            let g = self.coef[slot];
            w_out.read(col * dim, &mut self.col);
            for (w, &p) in self.col.iter_mut().zip(&self.phi) {
                *w -= eta * Self::clip(clip, g * p);
            }
            w_out.write(col * dim, &self.col);
        }
        for r in 0..dim {
            self.row[r] -= eta * Self::clip(clip, self.grad_in[r] * self.dphi[r]);
        }
        w_in.write(node * dim, &self.row);
    }

    /// One SGD update on row `node` of `w_in` and output columns `target`
    /// and `negatives` of `w_out`. All gradients use pre-update values.
    /// Returns the partial objective (when `want_loss`) or `None` if a
    /// gradient was not finite, in which case nothing was written.
    #[allow(clippy::too_many_arguments)]
    #[inline]
    fn step<I: Store + ?Sized, O: Store + ?Sized>(
        &mut self,
        w_in: &mut I,
        w_out: &mut O,
        node: usize,
        target: usize,
        negatives: &[u32],
        eta: f64,
        beta: f64,
        want_loss: bool,
    ) -> Option<f64> {
        let loss = self.compute(w_in, w_out, node, target, negatives, beta, want_loss)?;
        self.apply(w_in, w_out, node, target, negatives, eta);
        Some(loss)
    }

    /// Packages the prepared step as an unclipped gradient.
    fn gradient(&self, node: usize, target: usize, negatives: &[u32], loss: f64) -> PartialGradient {
        let mut columns: Vec<(usize, Vec<f64>)> = Vec::with_capacity(1 + negatives.len());
        for (slot, col) in std::iter::once(target).chain(negatives.iter().map(|&k| k as usize)).enumerate() {
            let g = self.coef[slot];
            let idx = match columns.iter().position(|(c, _)| *c == col) {
                Some(i) => i,
                None => {
                    columns.push((col, vec![0.0; self.dim]));
                    columns.len() - 1
                }
            };
            for (acc, &p) in columns[idx].1.iter_mut().zip(&self.phi) {
                *acc += g * p;
            }
        }
        PartialGradient {
            node,
            w_in_row: self.grad_in.iter().zip(&self.dphi).map(|(g, d)| g * d).collect(),
            columns,
            loss,
        }
    }
}

/// Gradient of one negative-sampled partial objective with respect to every
/// parameter it touches.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialGradient {
    /// Row of `W_in` that was read.
    pub node: usize,
    /// ∂O/∂W_in[node][r].
    pub w_in_row: Vec<f64>,
    /// (column, ∂O/∂W_out[:, column]) for the target and each distinct
    /// negative, in order of first appearance.
    pub columns: Vec<(usize, Vec<f64>)>,
    /// The partial objective itself.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub max_iters: u64,
    /// Negatives per update (K).
    pub negatives: usize,
    pub eta_start: f64,
    pub eta_end: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub beta_curve: BetaCurve,
    /// Probability of taking the structure branch in an iteration.
    pub switch_prob: f64,
    /// Exponent applied to noise-distribution base frequencies.
    pub noise_power: f64,
    /// Optional per-component gradient clip.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// 1 is the deterministic single-writer mode; more threads train
    /// asynchronously and give up reproducibility.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 128,
            max_iters: 100_000_000,
            negatives: 5,
            eta_start: 0.025,
            eta_end: 2.5e-6,
            beta_start: 0.01,
            beta_end: 1.0,
            beta_curve: BetaCurve::Linear,
            switch_prob: 0.5,
            noise_power: 0.75,
            grad_clip: None,
            seed: 1,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim == 0 {
            return fail("dim must be at least 1".into());
        }
        if self.negatives == 0 {
            return fail("negatives must be at least 1".into());
        }
        if !(self.eta_end > 0.0 && self.eta_start >= self.eta_end && self.eta_start.is_finite()) {
            return fail(format!(
                "need eta_start >= eta_end > 0 (got {} -> {})",
                self.eta_start, self.eta_end
            ));
        }
        if !(self.beta_start > 0.0 && self.beta_end >= self.beta_start && self.beta_end.is_finite()) {
            return fail(format!(
                "need beta_end >= beta_start > 0 (got {} -> {})",
                self.beta_start, self.beta_end
            ));
        }
        if !(0.0..=1.0).contains(&self.switch_prob) {
            return fail(format!("switch_prob {} outside [0, 1]", self.switch_prob));
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return fail(format!("grad_clip {c} must be positive"));
            }
        }
        if self.threads == 0 {
            return fail("threads must be at least 1".into());
        }
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            max_iters: self.max_iters,
            eta_start: self.eta_start,
            eta_end: self.eta_end,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            beta_curve: self.beta_curve,
        }
    }
}

/// Shape of the β ramp between its endpoints.
///
/// `Linear` is the default. Under `Geometric` β stays below 0.15 for most
/// of the run, where tanh(βx) is nearly linear and the small initial
/// weights barely move, so training collapses onto a few directions and the
/// signs carry little information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BetaCurve {
    /// Equal additive steps.
    #[default]
    Linear,
    /// Equal multiplicative steps.
    Geometric,
}

impl std::str::FromStr for BetaCurve {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" => Ok(BetaCurve::Geometric),
            "linear" => Ok(BetaCurve::Linear),
            _ => Err(Error::Config(format!("unknown beta curve `{s}` (expected geometric or linear)"))),
        }
    }
}

impl std::fmt::Display for BetaCurve {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BetaCurve::Geometric => "geometric",
            BetaCurve::Linear => "linear",
        })
    }
}

/// Learning rate decays linearly; β follows its [`BetaCurve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub max_iters: u64,
    pub eta_start: f64,
    pub eta_end: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub beta_curve: BetaCurve,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleState {
    pub iter: u64,
    pub eta: f64,
    pub beta: f64,
}

impl Schedule {
    pub fn at(&self, iter: u64) -> ScheduleState {
        let frac = if self.max_iters == 0 {
            0.0
        } else {
            iter.min(self.max_iters) as f64 / self.max_iters as f64
        };
        let (eta, beta) = if frac >= 1.0 {
            (self.eta_end, self.beta_end)
        } else {
            (
                self.eta_start + (self.eta_end - self.eta_start) * frac,
                match self.beta_curve {
                    BetaCurve::Geometric => self.beta_start * (self.beta_end / self.beta_start).powf(frac),
                    BetaCurve::Linear => self.beta_start + (self.beta_end - self.beta_start) * frac,
                },
            )
        };
        ScheduleState { iter, eta, beta }
    }
}

/// Snapshot handed to the progress callback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub iter: u64,
    pub eta: f64,
    pub beta: f64,
    /// Mean structure objective over the steps since the previous report.
    pub structure_loss: Option<f64>,
    pub attribute_loss: Option<f64>,
    pub structure_steps: u64,
    pub attribute_steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrainStats {
    pub structure_steps: u64,
    pub attribute_steps: u64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: ModelParams,
    pub stats: TrainStats,
}

/// Samplers and derived constants for one training run.
pub struct Trainer<'a> {
    cfg: &'a TrainConfig,
    node_count: usize,
    attr_count: usize,
    pairs: PairSampler,
    node_noise: NoiseDistribution,
    attr: Option<(AttrPairSampler, NoiseDistribution)>,
    pair_total: u64,
    attr_total: f64,
}

impl<'a> Trainer<'a> {
    pub fn new(graph: &Graph, counts: &PairCounts, attrs: &AttributeMatrix, cfg: &'a TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if attrs.node_count() != graph.node_count() {
            return Err(Error::DimensionMismatch {
                expected: graph.node_count(),
                actual: attrs.node_count(),
            });
        }
        let pairs = PairSampler::new(counts)?;
        let node_noise = NoiseDistribution::for_nodes(counts, graph.node_count(), cfg.noise_power)?;
        let attr = if attrs.nnz() > 0 {
            Some((
                AttrPairSampler::new(attrs)?,
                NoiseDistribution::for_attributes(attrs, cfg.noise_power)?,
            ))
        } else {
            None
        };
        Ok(Trainer {
            cfg,
            node_count: graph.node_count(),
            attr_count: attrs.attr_count(),
            pairs,
            node_noise,
            attr,
            pair_total: counts.total(),
            attr_total: attrs.total_weight(),
        })
    }

    /// α₁ = 1 / Σ n(v_i, v_j).
    pub fn alpha_structure(&self) -> f64 {
        1.0 / self.pair_total as f64
    }

    /// α₂ = 1 / Σ X_ij; infinite when there are no attributes.
    pub fn alpha_attribute(&self) -> f64 {
        1.0 / self.attr_total
    }

    pub fn run(&self) -> Result<Trained> {
        self.run_with_progress(0, |_| {})
    }

    /// Trains from a fresh initialization. `report_every > 0` enables loss
    /// tracking and calls `on_progress` every that many iterations (single
    /// writer) or per worker chunk (asynchronous mode).
    pub fn run_with_progress(&self, report_every: u64, on_progress: impl FnMut(&Progress)) -> Result<Trained> {
        let mut params = ModelParams::init(self.node_count, self.attr_count, self.cfg.dim, self.cfg.seed)?;
        let stats = if self.cfg.threads <= 1 {
            self.run_serial(&mut params, report_every, on_progress)?
        } else {
            self.run_async(&mut params)?
        };
        Ok(Trained { params, stats })
    }

    fn run_serial(
        &self,
        params: &mut ModelParams,
        report_every: u64,
        mut on_progress: impl FnMut(&Progress),
    ) -> Result<TrainStats> {
        let cfg = self.cfg;
        let dim = params.dim;
        let schedule = cfg.schedule();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let mut kernel = StepKernel::new(dim, cfg.grad_clip);
        let mut negatives = Vec::with_capacity(cfg.negatives);
        let mut stats = TrainStats::default();
        let track = report_every > 0;
        let mut window = [(0.0f64, 0u64); 2];

        for iter in 0..cfg.max_iters {
            let ScheduleState { eta, beta, .. } = schedule.at(iter);
            let delta: f64 = rng.sample(Open01);
            negatives.clear();
            let (branch, loss) = match &self.attr {
                Some((attr_pairs, attr_noise)) if delta > cfg.switch_prob => {
                    let (node, attr) = attr_pairs.sample(&mut rng);
                    attr_noise.draw_into(cfg.negatives, attr, &mut rng, &mut negatives)?;
                    stats.attribute_steps += 1;
                    let loss = kernel.step(
                        &mut params.w_in[..],
                        &mut params.w_out_a[..],
                        node.index(),
                        attr,
                        &negatives,
                        eta,
                        beta,
                        track,
                    );
                    (1, loss.ok_or(Error::NonFinite { iter, branch: "attribute", node: node.index() })?)
                }
                _ => {
                    let (center, context) = self.pairs.sample(&mut rng);
                    self.node_noise
                        .draw_into(cfg.negatives, context.index(), &mut rng, &mut negatives)?;
                    stats.structure_steps += 1;
                    let loss = kernel.step(
                        &mut params.w_in[..],
                        &mut params.w_out_s[..],
                        center.index(),
                        context.index(),
                        &negatives,
                        eta,
                        beta,
                        track,
                    );
                    (0, loss.ok_or(Error::NonFinite { iter, branch: "structure", node: center.index() })?)
                }
            };
            if track {
                window[branch].0 += loss;
                window[branch].1 += 1;
                if (iter + 1) % report_every == 0 || iter + 1 == cfg.max_iters {
                    let mean = |(sum, n): (f64, u64)| (n > 0).then(|| sum / n as f64);
                    on_progress(&Progress {
                        iter: iter + 1,
                        eta,
                        beta,
                        structure_loss: mean(window[0]),
                        attribute_loss: mean(window[1]),
                        structure_steps: stats.structure_steps,
                        attribute_steps: stats.attribute_steps,
                    });
                    window = [(0.0, 0); 2];
                }
            }
        }
        Ok(stats)
    }

    fn run_async(&self, params: &mut ModelParams) -> Result<TrainStats> {
        let cfg = self.cfg;
        let dim = params.dim;
        let threads = cfg.threads as u64;
        let schedule = cfg.schedule();
        let w_in = Shared::new(&mut params.w_in);
        let w_out_s = Shared::new(&mut params.w_out_s);
        let w_out_a = Shared::new(&mut params.w_out_a);
        debug!("asynchronous training on {threads} threads");

        let results: Vec<Result<TrainStats>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|worker| {
                    let (mut w_in, mut w_out_s, mut w_out_a) = (w_in, w_out_s, w_out_a);
                    scope.spawn(move || -> Result<TrainStats> {
                        let iters = cfg.max_iters / threads + u64::from(worker < cfg.max_iters % threads);
                        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                        rng.set_stream(2 + worker);
                        let mut kernel = StepKernel::new(dim, cfg.grad_clip);
                        let mut negatives = Vec::with_capacity(cfg.negatives);
                        let mut stats = TrainStats::default();
                        for local in 0..iters {
                            let iter = local * threads + worker;
                            let ScheduleState { eta, beta, .. } = schedule.at(iter);
                            let delta: f64 = rng.sample(Open01);
                            negatives.clear();
                            match &self.attr {
                                Some((attr_pairs, attr_noise)) if delta > cfg.switch_prob => {
                                    let (node, attr) = attr_pairs.sample(&mut rng);
                                    attr_noise.draw_into(cfg.negatives, attr, &mut rng, &mut negatives)?;
                                    stats.attribute_steps += 1;
                                    kernel
                                        .step(&mut w_in, &mut w_out_a, node.index(), attr, &negatives, eta, beta, false)
                                        .ok_or(Error::NonFinite { iter, branch: "attribute", node: node.index() })?;
                                }
                                _ => {
                                    let (center, context) = self.pairs.sample(&mut rng);
                                    self.node_noise
                                        .draw_into(cfg.negatives, context.index(), &mut rng, &mut negatives)?;
                                    stats.structure_steps += 1;
                                    kernel
                                        .step(&mut w_in, &mut w_out_s, center.index(), context.index(), &negatives, eta, beta, false)
                                        .ok_or(Error::NonFinite { iter, branch: "structure", node: center.index() })?;
                                }
                            }
                        }
                        Ok(stats)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("training worker panicked")).collect()
        });

        let mut total = TrainStats::default();
        for r in results {
            let s = r?;
            total.structure_steps += s.structure_steps;
            total.attribute_steps += s.attribute_steps;
        }
        Ok(total)
    }
}

/// Runs the full training loop and returns the final parameters.
pub fn train(graph: &Graph, counts: &PairCounts, attrs: &AttributeMatrix, cfg: &TrainConfig) -> Result<ModelParams> {
    Ok(Trainer::new(graph, counts, attrs, cfg)?.run()?.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{AttrEntry, Vocab};

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn init_contract() {
        let p = ModelParams::init(50, 7, 128, 3).unwrap();
        assert!(p.w_in().iter().all(|w| w.abs() <= 0.5 / 128.0));
        assert!(p.w_out_s().iter().all(|&w| w == 0.0));
        assert!(p.w_out_a().iter().all(|&w| w == 0.0));
        assert_eq!(p, ModelParams::init(50, 7, 128, 3).unwrap());
        assert_ne!(p, ModelParams::init(50, 7, 128, 4).unwrap());
        assert!(ModelParams::init(5, 5, 0, 1).is_err());
    }

    #[test]
    fn step_matches_gradient_with_repeated_negative() {
        let mut p = ModelParams::init(6, 0, 4, 9).unwrap();
        for (i, w) in p.w_out_s.iter_mut().enumerate() {
            *w = ((i * 7 % 11) as f32 - 5.0) * 0.05;
        }
        let negs = [3, 3, 5];
        let g = p.structure_gradient(NodeId(1), NodeId(2), &negs, 0.7).unwrap();
        assert_eq!(g.columns.iter().map(|c| c.0).collect::<Vec<_>>(), vec![2, 3, 5]);
        assert!((g.loss - p.structure_loss(NodeId(1), NodeId(2), &negs, 0.7)).abs() < 1e-12);
        let before = p.clone();
        let eta = 0.01;
        p.sgd_step_structure(NodeId(1), NodeId(2), &negs, eta, 0.7).unwrap();
        for (col, grad) in &g.columns {
            for (r, gr) in grad.iter().enumerate() {
                let want = before.context_column(*col)[r] as f64 - eta * gr;
                assert!((p.context_column(*col)[r] as f64 - want).abs() < 1e-6);
            }
        }
        for r in 0..4 {
            let want = before.w_in_row(1)[r] as f64 - eta * g.w_in_row[r];
            assert!((p.w_in_row(1)[r] as f64 - want).abs() < 1e-7);
        }
    }

    #[test]
    fn hidden_repr_cases() {
        let mut p = ModelParams::zeros(2, 0, 2);
        assert_eq!(p.hidden_repr(NodeId(0), 1.0), vec![0.0, 0.0]);
        p.w_in_row_mut(1).copy_from_slice(&[0.3, -0.2]);
        let phi = p.hidden_repr(NodeId(1), 50.0);
        assert!((phi[0] - 1.0).abs() < 1e-6 && (phi[1] + 1.0).abs() < 1e-6);
        for beta in [0.01, 0.5, 3.0] {
            let phi = p.hidden_repr(NodeId(1), beta);
            assert!(phi[0] > 0.0 && phi[1] < 0.0);
            assert!(phi.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn zero_output_loss_is_six_ln2() {
        let p = ModelParams::init(10, 6, 8, 1).unwrap();
        let negs = [2, 3, 4, 5, 6];
        assert!((p.structure_loss(NodeId(0), NodeId(1), &negs, 0.7) - 6.0 * LN2).abs() < 1e-12);
        assert!((p.attribute_loss(NodeId(0), 1, &[0, 2, 3, 4, 5], 0.7) - 6.0 * LN2).abs() < 1e-12);
        assert!((p.attribute_loss(NodeId(0), 1, &[], 0.7) - LN2).abs() < 1e-12);
    }

    #[test]
    fn saturated_scores_give_zero_loss() {
        let mut p = ModelParams::zeros(3, 0, 1);
        p.w_in_row_mut(0)[0] = 1.0;
        p.context_column_mut(1)[0] = 1e6;
        p.context_column_mut(2)[0] = -1e6;
        assert!(p.structure_loss(NodeId(0), NodeId(1), &[2], 50.0) < 1e-12);
    }

    #[test]
    fn zero_eta_is_noop() {
        let mut p = ModelParams::init(6, 5, 4, 2).unwrap();
        p.context_column_mut(1).copy_from_slice(&[0.1, -0.2, 0.3, 0.05]);
        let before = p.clone();
        p.sgd_step_structure(NodeId(0), NodeId(1), &[2, 3], 0.0, 1.0).unwrap();
        p.sgd_step_attribute(NodeId(0), 1, &[2, 3], 0.0, 1.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn step_touches_only_involved_entries() {
        let mut p = ModelParams::init(6, 5, 4, 9).unwrap();
        for j in 0..6 {
            p.context_column_mut(j).iter_mut().enumerate().for_each(|(r, w)| *w = 0.01 * (j + r) as f32);
        }
        let before = p.clone();
        p.sgd_step_structure(NodeId(2), NodeId(4), &[1, 1], 0.1, 1.0).unwrap();
        for i in 0..6 {
            let changed_in = p.w_in_row(i) != before.w_in_row(i);
            assert_eq!(changed_in, i == 2, "row {i}");
            let changed_out = p.context_column(i) != before.context_column(i);
            assert_eq!(changed_out, i == 4 || i == 1, "column {i}");
        }
        assert_eq!(p.w_out_a(), before.w_out_a());
    }

    #[test]
    fn step_from_fresh_model_lowers_loss() {
        let mut p = ModelParams::init(6, 5, 4, 5).unwrap();
        let negs = [0, 3, 5, 2, 2];
        let before = p.structure_loss(NodeId(1), NodeId(4), &negs, 1.0);
        assert!((before - 6.0 * LN2).abs() < 1e-12);
        p.sgd_step_structure(NodeId(1), NodeId(4), &negs, 0.01, 1.0).unwrap();
        assert!(p.structure_loss(NodeId(1), NodeId(4), &negs, 1.0) < before);

        let negs = [0, 2, 3];
        let before = p.attribute_loss(NodeId(1), 4, &negs, 1.0);
        p.sgd_step_attribute(NodeId(1), 4, &negs, 0.01, 1.0).unwrap();
        assert!(p.attribute_loss(NodeId(1), 4, &negs, 1.0) < before);
    }

    #[test]
    fn schedule_endpoints() {
        let cfg = TrainConfig { max_iters: 1000, ..Default::default() };
        let s = cfg.schedule();
        let a = s.at(0);
        assert_eq!((a.eta, a.beta), (0.025, 0.01));
        let z = s.at(1000);
        assert_eq!((z.eta, z.beta), (2.5e-6, 1.0));
        let mid = s.at(500);
        assert!((mid.beta - 0.505).abs() < 1e-12);
        assert!((mid.eta - (0.025 + 2.5e-6) / 2.0).abs() < 1e-15);
        let geo = TrainConfig { beta_curve: BetaCurve::Geometric, ..cfg }.schedule();
        assert!((geo.at(500).beta - 0.1).abs() < 1e-12);
        assert_eq!(geo.at(1000).beta, 1.0);
        for s in [s, geo] {
            let mut prev = s.at(0);
            for it in (0..=1000).step_by(37) {
                let cur = s.at(it);
                assert!(cur.eta <= prev.eta && cur.beta >= prev.beta);
                prev = cur;
            }
        }
    }

    #[test]
    fn beta_curve_parse() {
        assert_eq!("linear".parse::<BetaCurve>().unwrap(), BetaCurve::Linear);
        assert_eq!("geometric".parse::<BetaCurve>().unwrap(), BetaCurve::Geometric);
        assert!("cubic".parse::<BetaCurve>().is_err());
        assert_eq!(BetaCurve::Geometric.to_string(), "geometric");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { eta_end: 0.0, ..Default::default() },
            TrainConfig { eta_start: 1e-7, ..Default::default() },
            TrainConfig { beta_start: 2.0, ..Default::default() },
            TrainConfig { switch_prob: 1.5, ..Default::default() },
            TrainConfig { negatives: 0, ..Default::default() },
            TrainConfig { dim: 0, ..Default::default() },
            TrainConfig { grad_clip: Some(0.0), ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    fn toy() -> (Graph, PairCounts, AttributeMatrix) {
        let g = Graph::from_edges(
            Vocab::from_ids((0..6).map(|i| i.to_string())).unwrap(),
            [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)],
        );
        let counts = PairCounts::from_entries(g.edges().flat_map(|(a, b)| [(a.0, b.0, 2), (b.0, a.0, 2)]));
        let attrs = AttributeMatrix::from_triplets(
            6,
            4,
            (0..6u32).map(|n| AttrEntry { node: n, attr: if n < 3 { n % 2 } else { 2 + n % 2 }, weight: 1.0 }),
        )
        .unwrap();
        (g, counts, attrs)
    }

    #[test]
    fn zero_iterations_returns_init() {
        let (g, counts, attrs) = toy();
        let cfg = TrainConfig { dim: 8, max_iters: 0, ..Default::default() };
        assert_eq!(train(&g, &counts, &attrs, &cfg).unwrap(), ModelParams::init(6, 4, 8, cfg.seed).unwrap());
    }

    #[test]
    fn deterministic_and_branch_counts() {
        let (g, counts, attrs) = toy();
        let cfg = TrainConfig { dim: 8, max_iters: 5000, ..Default::default() };
        let a = Trainer::new(&g, &counts, &attrs, &cfg).unwrap().run().unwrap();
        let b = Trainer::new(&g, &counts, &attrs, &cfg).unwrap().run().unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.stats.structure_steps + a.stats.attribute_steps, 5000);
        assert!(a.stats.attribute_steps > 2200 && a.stats.attribute_steps < 2800);
        assert!(a.params.is_finite());

        let structure_only = Trainer::new(&g, &counts, &AttributeMatrix::empty(6), &cfg).unwrap().run().unwrap();
        assert_eq!(structure_only.stats.attribute_steps, 0);
        let all_structure = TrainConfig { switch_prob: 1.0, ..cfg.clone() };
        assert_eq!(Trainer::new(&g, &counts, &attrs, &all_structure).unwrap().run().unwrap().stats.attribute_steps, 0);
        let all_attr = TrainConfig { switch_prob: 0.0, ..cfg };
        assert_eq!(Trainer::new(&g, &counts, &attrs, &all_attr).unwrap().run().unwrap().stats.structure_steps, 0);
    }

    #[test]
    fn progress_reports() {
        let (g, counts, attrs) = toy();
        let cfg = TrainConfig { dim: 8, max_iters: 1000, ..Default::default() };
        let mut reports = Vec::new();
        Trainer::new(&g, &counts, &attrs, &cfg)
            .unwrap()
            .run_with_progress(250, |p| reports.push(*p))
            .unwrap();
        assert_eq!(reports.iter().map(|p| p.iter).collect::<Vec<_>>(), [250, 500, 750, 1000]);
        assert!(reports[0].structure_loss.unwrap() > reports[3].structure_loss.unwrap());
    }

    #[test]
    fn async_mode_runs() {
        let (g, counts, attrs) = toy();
        let cfg = TrainConfig { dim: 8, max_iters: 4001, threads: 3, ..Default::default() };
        let t = Trainer::new(&g, &counts, &attrs, &cfg).unwrap().run().unwrap();
        assert_eq!(t.stats.structure_steps + t.stats.attribute_steps, 4001);
        assert!(t.params.is_finite());
    }

    #[test]
    fn alphas() {
        let (g, counts, attrs) = toy();
        let cfg = TrainConfig::default();
        let t = Trainer::new(&g, &counts, &attrs, &cfg).unwrap();
        assert_eq!(t.alpha_structure(), 1.0 / 24.0);
        assert_eq!(t.alpha_attribute(), 1.0 / 6.0);
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let p = ModelParams::init(5, 3, 7, 11).unwrap();
        let mut p = p;
        p.context_column_mut(2)[3] = 1.5;
        p.attr_column_mut(1)[6] = -2.5;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bnep");
        p.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 28 + 4 * 7 * (5 + 5 + 3));
        assert_eq!(&bytes[..4], b"BNEP");
        // W_out_s row r=3, column j=2 sits after W_in at offset r*|V| + j.
        let at = 28 + 4 * (5 * 7 + 3 * 5 + 2);
        assert_eq!(f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()), 1.5);
        assert_eq!(ModelParams::load(&path).unwrap(), p);

        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(ModelParams::load(&path), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(ModelParams::load(&path), Err(Error::Format { .. })));
    }
}
