//! Fixed-window feed-forward next-token model.
//!
//! For each position the last `window` tokens of `context ++ [BOS] ++ prefix`
//! (left padded with PAD) are embedded, concatenated, passed through one tanh
//! layer and projected to vocabulary logits. The softmax is mixed with the
//! uniform distribution at `eps_smooth` so every probability is strictly
//! positive. Gradients are computed by hand.

use std::fmt;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::DialoguePair;
use crate::error::{CheckpointError, LotError, Result};
use crate::vocab::{TokenId, BOS, EOS, PAD};

pub const DEFAULT_EPS_SMOOTH: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arch {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub window: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Arch {
            vocab: 50,
            embed: 16,
            hidden: 32,
            window: 8,
        }
    }
}

impl Arch {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 8 || self.embed < 2 || self.hidden < 2 || self.window < 1 {
            return Err(LotError::config(format!(
                "invalid architecture {self:?}: need vocab >= 8, embed >= 2, hidden >= 2, window >= 1"
            )));
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.window * self.embed
    }

    /// Names and shapes of the parameter tensors, in storage order.
    pub fn tensor_shapes(&self) -> [(&'static str, Vec<usize>); 5] {
        [
            ("embed", vec![self.vocab, self.embed]),
            ("hidden.weight", vec![self.input_dim(), self.hidden]),
            ("hidden.bias", vec![self.hidden]),
            ("out.weight", vec![self.hidden, self.vocab]),
            ("out.bias", vec![self.vocab]),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Toxic,
    Safe,
    Base,
    Output,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Toxic => "toxic",
            Role::Safe => "safe",
            Role::Base => "base",
            Role::Output => "output",
        }
    }

    fn code(self) -> u8 {
        match self {
            Role::Toxic => 0,
            Role::Safe => 1,
            Role::Base => 2,
            Role::Output => 3,
        }
    }

    fn from_code(c: u8) -> Option<Role> {
        Some(match c {
            0 => Role::Toxic,
            1 => Role::Safe,
            2 => Role::Base,
            3 => Role::Output,
            _ => return None,
        })
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The five parameter tensors, flat and row-major. Shared layout for
/// parameters, gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    pub embed: Vec<f64>,
    pub hidden_w: Vec<f64>,
    pub hidden_b: Vec<f64>,
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
}

impl Tensors {
    pub fn zeros(arch: &Arch) -> Self {
        Tensors {
            embed: vec![0.0; arch.vocab * arch.embed],
            hidden_w: vec![0.0; arch.input_dim() * arch.hidden],
            hidden_b: vec![0.0; arch.hidden],
            out_w: vec![0.0; arch.hidden * arch.vocab],
            out_b: vec![0.0; arch.vocab],
        }
    }

    pub fn slices(&self) -> [&[f64]; 5] {
        [&self.embed, &self.hidden_w, &self.hidden_b, &self.out_w, &self.out_b]
    }

    pub fn slices_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.embed,
            &mut self.hidden_w,
            &mut self.hidden_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.slices().into_iter().flat_map(|s| s.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.slices_mut().into_iter().flat_map(|s| s.iter_mut())
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, flat: usize) -> f64 {
        *self.iter().nth(flat).expect("flat index in range")
    }

    pub fn get_mut(&mut self, flat: usize) -> &mut f64 {
        self.iter_mut().nth(flat).expect("flat index in range")
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn add_assign(&mut self, other: &Tensors) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in self.iter_mut() {
            *a *= k;
        }
    }

    fn same_layout(&self, other: &Tensors) -> bool {
        self.slices()
            .iter()
            .zip(other.slices().iter())
            .all(|(a, b)| a.len() == b.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Arch,
    pub role: Role,
    pub eps_smooth: f64,
    pub params: Tensors,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub arch: Arch,
    pub grads: Tensors,
}

impl Gradients {
    pub fn zeros(arch: &Arch) -> Self {
        Gradients {
            arch: *arch,
            grads: Tensors::zeros(arch),
        }
    }

    pub fn matches(&self, model: &ModelParams) -> bool {
        self.arch == model.arch && self.grads.same_layout(&model.params)
    }
}

/// Strictly positive probability vector summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDist(Vec<f64>);

impl CategoricalDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(LotError::argument("empty distribution"));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(LotError::argument(format!(
                "distribution entries must be finite and positive, found {p}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(LotError::argument(format!("distribution sums to {sum}, not 1")));
        }
        Ok(CategoricalDist(probs))
    }

    /// Normalizes positive weights and mixes with uniform at `eps`.
    pub fn smoothed(weights: &[f64], eps: f64) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) || weights.iter().any(|w| *w < 0.0) {
            return Err(LotError::argument("weights must be nonnegative with positive sum"));
        }
        let u = eps / weights.len() as f64;
        Self::new(weights.iter().map(|w| (1.0 - eps) * w / sum + u).collect())
    }

    pub fn uniform(n: usize) -> Self {
        CategoricalDist(vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn entropy(&self) -> f64 {
        -self.0.iter().map(|p| p * p.ln()).sum::<f64>()
    }
}

pub fn init_model(arch: Arch, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensors::zeros(&arch);
    let mut fill = |v: &mut Vec<f64>, limit: f64| {
        let d = Uniform::new_inclusive(-limit, limit);
        for x in v.iter_mut() {
            *x = d.sample(&mut rng);
        }
    };
    let glorot = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
    fill(&mut t.embed, 0.5);
    fill(&mut t.hidden_w, glorot(arch.input_dim(), arch.hidden));
    fill(&mut t.out_w, glorot(arch.hidden, arch.vocab));
    Ok(ModelParams {
        arch,
        role: Role::Base,
        eps_smooth: DEFAULT_EPS_SMOOTH,
        params: t,
    })
}

/// Activations kept for the backward pass at one position.
struct Activation {
    window: Vec<TokenId>,
    input: Vec<f64>,
    hidden: Vec<f64>,
    softmax: Vec<f64>,
}

impl ModelParams {
    pub fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.arch.vocab) {
            Some(t) => Err(LotError::argument(format!(
                "token id {t} out of range for vocabulary of {}",
                self.arch.vocab
            ))),
            None => Ok(()),
        }
    }

    fn window(&self, context: &[TokenId], prefix: &[TokenId]) -> Vec<TokenId> {
        let w = self.arch.window;
        let stream: Vec<TokenId> = context
            .iter()
            .copied()
            .chain(std::iter::once(BOS))
            .chain(prefix.iter().copied())
            .collect();
        let take = stream.len().min(w);
        let mut win = vec![PAD; w - take];
        win.extend_from_slice(&stream[stream.len() - take..]);
        win
    }

    fn activate(&self, window: Vec<TokenId>) -> Activation {
        let Arch {
            vocab: v,
            embed: e,
            hidden: h,
            ..
        } = self.arch;
        let p = &self.params;
        let mut input = Vec::with_capacity(window.len() * e);
        for &tok in &window {
            let row = tok as usize * e;
            input.extend_from_slice(&p.embed[row..row + e]);
        }
        let mut hidden = p.hidden_b.clone();
        for (k, &x) in input.iter().enumerate() {
            let row = &p.hidden_w[k * h..(k + 1) * h];
            for (acc, w) in hidden.iter_mut().zip(row) {
                *acc += x * w;
            }
        }
        for a in hidden.iter_mut() {
            *a = a.tanh();
        }
        let mut logits = p.out_b.clone();
        for (i, &hv) in hidden.iter().enumerate() {
            let row = &p.out_w[i * v..(i + 1) * v];
            for (acc, w) in logits.iter_mut().zip(row) {
                *acc += hv * w;
            }
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut softmax: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = softmax.iter().sum();
        for s in softmax.iter_mut() {
            *s /= sum;
        }
        Activation {
            window,
            input,
            hidden,
            softmax,
        }
    }

    fn smooth(&self, softmax: &[f64]) -> CategoricalDist {
        // (1 - eps) * s + eps / V, written as a blend so a uniform softmax
        // stays exactly uniform
        let eps = self.eps_smooth;
        let u = 1.0 / softmax.len() as f64;
        CategoricalDist(softmax.iter().map(|s| s + eps * (u - s)).collect())
    }

    /// Next-token distribution after `context ++ [BOS] ++ prefix`.
    pub fn next_dist(&self, context: &[TokenId], prefix: &[TokenId]) -> CategoricalDist {
        let a = self.activate(self.window(context, prefix));
        self.smooth(&a.softmax)
    }

    fn forward_cached(&self, context: &[TokenId], gold: &[TokenId]) -> (Vec<Activation>, Vec<CategoricalDist>) {
        let acts: Vec<Activation> = (0..gold.len())
            .map(|t| self.activate(self.window(context, &gold[..t])))
            .collect();
        let dists = acts.iter().map(|a| self.smooth(&a.softmax)).collect();
        (acts, dists)
    }

    /// Accumulates the parameter gradient for one position given dL/dp.
    fn accumulate(&self, act: &Activation, d_probs: &[f64], g: &mut Tensors) {
        let Arch {
            vocab: v,
            embed: e,
            hidden: h,
            ..
        } = self.arch;
        let p = &self.params;
        let scale = 1.0 - self.eps_smooth;
        let s = &act.softmax;
        let inner: f64 = s.iter().zip(d_probs).map(|(s, d)| s * d).sum::<f64>() * scale;
        let d_logits: Vec<f64> = s.iter().zip(d_probs).map(|(s, d)| s * (scale * d - inner)).collect();

        for (gb, dz) in g.out_b.iter_mut().zip(&d_logits) {
            *gb += dz;
        }
        let mut d_hidden = vec![0.0; h];
        for i in 0..h {
            let hv = act.hidden[i];
            let grow = &mut g.out_w[i * v..(i + 1) * v];
            let wrow = &p.out_w[i * v..(i + 1) * v];
            let mut acc = 0.0;
            for j in 0..v {
                grow[j] += hv * d_logits[j];
                acc += wrow[j] * d_logits[j];
            }
            d_hidden[i] = acc * (1.0 - hv * hv);
        }
        for (gb, dh) in g.hidden_b.iter_mut().zip(&d_hidden) {
            *gb += dh;
        }
        for (k, &x) in act.input.iter().enumerate() {
            let grow = &mut g.hidden_w[k * h..(k + 1) * h];
            let wrow = &p.hidden_w[k * h..(k + 1) * h];
            let mut acc = 0.0;
            for i in 0..h {
                grow[i] += x * d_hidden[i];
                acc += wrow[i] * d_hidden[i];
            }
            let slot = k / e;
            let tok = act.window[slot] as usize;
            g.embed[tok * e + k % e] += acc;
        }
    }
}

/// One distribution per gold position, teacher-forced on the gold prefix.
pub fn sequence_forward(model: &ModelParams, context: &[TokenId], gold: &[TokenId]) -> Result<Vec<CategoricalDist>> {
    if gold.is_empty() {
        return Err(LotError::argument("response must have at least one token"));
    }
    model.check_tokens(context)?;
    model.check_tokens(gold)?;
    Ok(gold
        .iter()
        .enumerate()
        .map(|(t, _)| model.next_dist(context, &gold[..t]))
        .collect())
}

/// Per-example loss over teacher-forced distributions.
///
/// Implementations return the scalar loss and dL/dp for every position. The
/// batch loss is the mean of the per-example values.
pub trait SequenceLoss: Sync {
    type Stats: Send;

    fn evaluate(
        &self,
        pair: &DialoguePair,
        target: &[TokenId],
        dists: &[CategoricalDist],
    ) -> Result<(f64, Vec<Vec<f64>>, Self::Stats)>;
}

/// Plain closures over `(dists, target)` work as loss specs.
impl<F> SequenceLoss for F
where
    F: Fn(&[CategoricalDist], &[TokenId]) -> (f64, Vec<Vec<f64>>) + Sync,
{
    type Stats = ();

    fn evaluate(
        &self,
        _pair: &DialoguePair,
        target: &[TokenId],
        dists: &[CategoricalDist],
    ) -> Result<(f64, Vec<Vec<f64>>, ())> {
        let (l, g) = self(dists, target);
        Ok((l, g, ()))
    }
}

#[derive(Debug, Clone)]
pub struct BackwardOutput<S> {
    pub loss: f64,
    pub grads: Gradients,
    pub stats: Vec<S>,
}

fn example_grad<L: SequenceLoss>(
    model: &ModelParams,
    index: usize,
    pair: &DialoguePair,
    loss: &L,
) -> Result<(f64, Tensors, L::Stats)> {
    let target = pair.target();
    model.check_tokens(&pair.context)?;
    model.check_tokens(&target)?;
    let (acts, dists) = model.forward_cached(&pair.context, &target);
    let (value, d_probs, stats) = loss.evaluate(pair, &target, &dists)?;
    if !value.is_finite() {
        return Err(LotError::numerical(index, format!("loss is {value}")));
    }
    if d_probs.len() != acts.len() {
        return Err(LotError::argument(format!(
            "loss returned {} position gradients for {} positions",
            d_probs.len(),
            acts.len()
        )));
    }
    let mut g = Tensors::zeros(&model.arch);
    for (act, d) in acts.iter().zip(&d_probs) {
        if d.iter().all(|x| *x == 0.0) {
            continue;
        }
        model.accumulate(act, d, &mut g);
    }
    if !g.all_finite() {
        return Err(LotError::numerical(index, "non-finite gradient"));
    }
    Ok((value, g, stats))
}

/// Mean loss and its exact gradient over a batch. Examples are processed in
/// parallel and reduced in batch order.
pub fn backward<L: SequenceLoss>(
    model: &ModelParams,
    batch: &[DialoguePair],
    loss: &L,
) -> Result<BackwardOutput<L::Stats>> {
    if batch.is_empty() {
        return Err(LotError::argument("empty batch"));
    }
    let per_example: Vec<Result<(f64, Tensors, L::Stats)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, pair)| example_grad(model, i, pair, loss))
        .collect();
    let mut total = 0.0;
    let mut grads = Tensors::zeros(&model.arch);
    let mut stats = Vec::with_capacity(batch.len());
    for r in per_example {
        let (l, g, s) = r?;
        total += l;
        grads.add_assign(&g);
        stats.push(s);
    }
    let k = batch.len() as f64;
    grads.scale(1.0 / k);
    Ok(BackwardOutput {
        loss: total / k,
        grads: Gradients {
            arch: model.arch,
            grads,
        },
        stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Decoding {
    Greedy,
    Sample { temperature: f64, seed: u64 },
}

/// Generated tokens (EOS excluded) together with the distribution used at
/// every step, including the step that emitted EOS.
pub fn decode_with_dists(
    model: &ModelParams,
    context: &[TokenId],
    strategy: Decoding,
    max_len: usize,
) -> Result<(Vec<TokenId>, Vec<CategoricalDist>)> {
    if max_len == 0 {
        return Err(LotError::argument("max_len must be at least 1"));
    }
    model.check_tokens(context)?;
    let mut rng = match strategy {
        Decoding::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Decoding::Greedy => None,
    };
    let mut out = Vec::new();
    let mut dists = Vec::new();
    while out.len() < max_len {
        let d = model.next_dist(context, &out);
        let next = match (strategy, rng.as_mut()) {
            (Decoding::Sample { temperature, .. }, Some(rng)) => sample_tempered(&d, temperature, rng),
            _ => d.argmax(),
        } as TokenId;
        dists.push(d);
        if next == EOS {
            break;
        }
        out.push(next);
    }
    Ok((out, dists))
}

pub fn decode(model: &ModelParams, context: &[TokenId], strategy: Decoding, max_len: usize) -> Result<Vec<TokenId>> {
    decode_with_dists(model, context, strategy, max_len).map(|(t, _)| t)
}

fn sample_tempered(d: &CategoricalDist, temperature: f64, rng: &mut impl Rng) -> usize {
    if !(temperature > 0.0) {
        return d.argmax();
    }
    let scaled: Vec<f64> = d.probs().iter().map(|p| p.ln() / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    let mut u = rng.gen::<f64>() * sum;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i;
        }
        u -= wi;
    }
    // rounding left u past the end; take the last token with weight
    w.iter().rposition(|x| *x > 0.0).unwrap_or(0)
}

// ---------------------------------------------------------------------------
// Checkpoints

const MAGIC: &[u8; 8] = b"LOTCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Binary layout, all integers and floats little-endian:
///
/// ```text
/// magic "LOTCKPT\0" | version u32 | vocab u32 | embed u32 | hidden u32 | window u32
/// role u8 | eps_smooth f64 | n_tensors u32
/// per tensor: name_len u16 | name utf8 | ndim u8 | dims u32 * ndim | data f64 * prod(dims)
/// ```
pub fn save_checkpoint(model: &ModelParams) -> Vec<u8> {
    let mut b = Vec::with_capacity(64 + model.params.len() * 8);
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let a = model.arch;
    for d in [a.vocab, a.embed, a.hidden, a.window] {
        b.extend_from_slice(&(d as u32).to_le_bytes());
    }
    b.push(model.role.code());
    b.extend_from_slice(&model.eps_smooth.to_le_bytes());
    let shapes = a.tensor_shapes();
    b.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    for ((name, shape), data) in shapes.iter().zip(model.params.slices()) {
        b.extend_from_slice(&(name.len() as u16).to_le_bytes());
        b.extend_from_slice(name.as_bytes());
        b.push(shape.len() as u8);
        for d in shape {
            b.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for x in data {
            b.extend_from_slice(&x.to_le_bytes());
        }
    }
    b
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated(self.buf.len()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> std::result::Result<ModelParams, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if bytes.len() < MAGIC.len() {
        return Err(CheckpointError::Truncated(bytes.len()));
    }
    if r.take(MAGIC.len())? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let arch = Arch {
        vocab: r.u32()? as usize,
        embed: r.u32()? as usize,
        hidden: r.u32()? as usize,
        window: r.u32()? as usize,
    };
    arch.validate().map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let role_code = r.u8()?;
    let role = Role::from_code(role_code)
        .ok_or_else(|| CheckpointError::Malformed(format!("unknown role code {role_code}")))?;
    let eps_smooth = r.f64()?;
    if !(eps_smooth > 0.0 && eps_smooth < 1.0) {
        return Err(CheckpointError::Malformed(format!("bad eps_smooth {eps_smooth}")));
    }
    let n = r.u32()? as usize;
    let shapes = arch.tensor_shapes();
    if n != shapes.len() {
        return Err(CheckpointError::Malformed(format!(
            "expected {} tensors, found {n}",
            shapes.len()
        )));
    }
    let mut params = Tensors::zeros(&arch);
    for ((expected_name, expected_shape), slot) in shapes.iter().zip(params.slices_mut()) {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::Malformed("tensor name is not utf-8".into()))?
            .to_string();
        if name != *expected_name {
            return Err(CheckpointError::Malformed(format!(
                "expected tensor `{expected_name}`, found `{name}`"
            )));
        }
        let ndim = r.u8()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if shape != *expected_shape {
            return Err(CheckpointError::ShapeMismatch {
                name,
                found: shape,
                expected: expected_shape.clone(),
            });
        }
        for x in slot.iter_mut() {
            *x = r.f64()?;
        }
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    if !params.all_finite() {
        return Err(CheckpointError::Malformed("non-finite parameter".into()));
    }
    Ok(ModelParams {
        arch,
        role,
        eps_smooth,
        params,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonCheckpoint {
    format: String,
    version: u32,
    arch: Arch,
    role: Role,
    eps_smooth: f64,
    tensors: Vec<JsonTensor>,
}

/// Text form of a checkpoint for diffing; floats print in shortest
/// round-trip form so the conversion is lossless.
pub fn checkpoint_to_json(model: &ModelParams) -> String {
    let tensors = model
        .arch
        .tensor_shapes()
        .into_iter()
        .zip(model.params.slices())
        .map(|((name, shape), data)| JsonTensor {
            name: name.to_string(),
            shape,
            data: data.to_vec(),
        })
        .collect();
    let doc = JsonCheckpoint {
        format: "lot-checkpoint".into(),
        version: CHECKPOINT_VERSION,
        arch: model.arch,
        role: model.role,
        eps_smooth: model.eps_smooth,
        tensors,
    };
    serde_json::to_string_pretty(&doc).expect("checkpoint serializes")
}

pub fn checkpoint_from_json(text: &str) -> std::result::Result<ModelParams, CheckpointError> {
    let doc: JsonCheckpoint = serde_json::from_str(text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    if doc.format != "lot-checkpoint" {
        return Err(CheckpointError::BadMagic);
    }
    if doc.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: doc.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    doc.arch
        .validate()
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let shapes = doc.arch.tensor_shapes();
    if doc.tensors.len() != shapes.len() {
        return Err(CheckpointError::Malformed("wrong tensor count".into()));
    }
    let mut params = Tensors::zeros(&doc.arch);
    for ((t, (name, shape)), slot) in doc.tensors.into_iter().zip(shapes).zip(params.slices_mut()) {
        if t.name != name {
            return Err(CheckpointError::Malformed(format!(
                "expected tensor `{name}`, found `{}`",
                t.name
            )));
        }
        if t.shape != shape || t.data.len() != slot.len() {
            return Err(CheckpointError::ShapeMismatch {
                name: t.name,
                found: t.shape,
                expected: shape,
            });
        }
        *slot = t.data;
    }
    if !params.all_finite() {
        return Err(CheckpointError::Malformed("non-finite parameter".into()));
    }
    Ok(ModelParams {
        arch: doc.arch,
        role: doc.role,
        eps_smooth: doc.eps_smooth,
        params,
    })
}
