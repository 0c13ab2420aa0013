//! Forward rollout and hand-written reverse pass.
//!
//! GRU gates follow the common `[r, z, n]` layout:
//! `n = tanh(Wx_n x + bx_n + r ⊙ (Wh_n h + bh_n))`, `h' = (1 − z) ⊙ n + z ⊙ h`.

use rand::{Rng, RngCore};

use super::params::{ControllerParams, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecisionKind {
    Depth,
    Kernel,
    Expansion,
}

impl DecisionKind {
    fn slot_offset(self) -> usize {
        match self {
            DecisionKind::Depth => 0,
            DecisionKind::Kernel => 1,
            DecisionKind::Expansion => 2,
        }
    }

    fn head(self) -> (Tensor, Tensor) {
        match self {
            DecisionKind::Depth => (Tensor::DepthW, Tensor::DepthB),
            DecisionKind::Kernel => (Tensor::KernelW, Tensor::KernelB),
            DecisionKind::Expansion => (Tensor::ExpansionW, Tensor::ExpansionB),
        }
    }
}

/// Sparse one-hot encoding of the previous architecture plus the shift bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateInput {
    pub(crate) active: Vec<usize>,
    pub(crate) dim: usize,
    pub(crate) bucket: usize,
}

impl StateInput {
    pub fn bucket(&self) -> usize {
        self.bucket
    }

    pub fn onehot(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for &i in &self.active {
            x[i] = 1.0;
        }
        x
    }
}

/// Encoder output concatenated with the bucket embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedState {
    pub(crate) input: StateInput,
    pub(crate) h1: Vec<f64>,
    pub(crate) enc: Vec<f64>,
    pub(crate) vector: Vec<f64>,
}

impl EncodedState {
    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn input(&self) -> &StateInput {
        &self.input
    }
}

pub(crate) enum Chooser<'a> {
    Sample(&'a mut dyn RngCore),
    Greedy,
    Replay(&'a [usize]),
}

#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub kind: DecisionKind,
    pub unit: usize,
    pub layer: usize,
    token: usize,
    slot: usize,
    x: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    gh_n: Vec<f64>,
    h: Vec<f64>,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    pub choice: usize,
    pub entropy: f64,
}

impl StepCache {
    pub fn log_prob(&self) -> f64 {
        self.log_probs[self.choice]
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Pass {
    pub state: EncodedState,
    h0: Vec<f64>,
    pub steps: Vec<StepCache>,
}

/// `out = W x + b` for a row-major `rows × x.len()` matrix.
fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .zip(w.chunks_exact(cols))
        .map(|(bi, row)| bi + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

/// `out += Wᵀ g`.
fn add_transposed(w: &[f64], g: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (gi, row) in g.iter().zip(w.chunks_exact(cols)) {
        if *gi == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += gi * a;
        }
    }
}

/// `gw += g xᵀ`.
fn add_outer(gw: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for (gi, row) in g.iter().zip(gw.chunks_exact_mut(cols)) {
        if *gi == 0.0 {
            continue;
        }
        for (o, xj) in row.iter_mut().zip(x) {
            *o += gi * xj;
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn row(m: &[f64], i: usize, cols: usize) -> &[f64] {
    &m[i * cols..(i + 1) * cols]
}

pub(crate) fn encode(params: &ControllerParams, input: &StateInput) -> EncodedState {
    let shape = params.shape();
    let in_dim = shape.input_dim();
    let w1 = params.get(Tensor::EncW1);
    let mut a1 = params.get(Tensor::EncB1).to_vec();
    for (i, a) in a1.iter_mut().enumerate() {
        let r = row(w1, i, in_dim);
        *a += input.active.iter().map(|&j| r[j]).sum::<f64>();
    }
    let h1: Vec<f64> = a1.into_iter().map(f64::tanh).collect();
    let enc: Vec<f64> = affine(params.get(Tensor::EncW2), params.get(Tensor::EncB2), &h1)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let mut vector = enc.clone();
    vector.extend_from_slice(row(params.get(Tensor::BucketEmb), input.bucket, shape.bucket_dim));
    EncodedState {
        input: input.clone(),
        h1,
        enc,
        vector,
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

fn pick(chooser: &mut Chooser<'_>, logits: &[f64], probs: &[f64], step: usize) -> Result<usize> {
    match chooser {
        Chooser::Greedy => {
            let mut best = 0;
            for (i, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = i;
                }
            }
            Ok(best)
        }
        Chooser::Sample(rng) => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut last = 0;
            for (i, &p) in probs.iter().enumerate() {
                if p > 0.0 {
                    last = i;
                    acc += p;
                    if u < acc {
                        return Ok(i);
                    }
                }
            }
            Ok(last)
        }
        Chooser::Replay(choices) => {
            let c = *choices.get(step).ok_or_else(|| {
                Error::Shape(format!("replay has {} decisions, needs more", choices.len()))
            })?;
            if c >= logits.len() {
                return Err(Error::Shape(format!(
                    "decision {step}: choice {c} outside {} options",
                    logits.len()
                )));
            }
            Ok(c)
        }
    }
}

/// Runs the policy from `state`, choosing every decision with `chooser`.
pub(crate) fn rollout(
    params: &ControllerParams,
    state: EncodedState,
    mut chooser: Chooser<'_>,
) -> Result<Pass> {
    let shape = *params.shape();
    let space = params.space();
    let hd = shape.hidden;
    let td = shape.token_dim;
    let h0: Vec<f64> = affine(params.get(Tensor::InitW), params.get(Tensor::InitB), &state.vector)
        .into_iter()
        .map(f64::tanh)
        .collect();

    let wx = params.get(Tensor::GruWx);
    let wh = params.get(Tensor::GruWh);
    let bx = params.get(Tensor::GruBx);
    let bh = params.get(Tensor::GruBh);
    let emb = params.get(Tensor::TokenEmb);
    let slots = params.get(Tensor::SlotEmb);

    let mut steps: Vec<StepCache> = Vec::new();
    let mut h = h0.clone();
    let mut token = 0usize;

    let mut step = |kind: DecisionKind,
                    unit: usize,
                    layer: usize,
                    token: usize,
                    h: &mut Vec<f64>,
                    steps: &mut Vec<StepCache>|
     -> Result<usize> {
        let slot = shape.slot(kind.slot_offset(), unit, layer);
        let x: Vec<f64> = row(emb, token, td)
            .iter()
            .zip(row(slots, slot, td))
            .map(|(a, b)| a + b)
            .collect();
        let gx = affine(wx, bx, &x);
        let gh = affine(wh, bh, h);
        let r: Vec<f64> = (0..hd).map(|i| sigmoid(gx[i] + gh[i])).collect();
        let z: Vec<f64> = (0..hd).map(|i| sigmoid(gx[hd + i] + gh[hd + i])).collect();
        let gh_n = gh[2 * hd..].to_vec();
        let n: Vec<f64> = (0..hd).map(|i| (gx[2 * hd + i] + r[i] * gh_n[i]).tanh()).collect();
        let h_new: Vec<f64> = (0..hd).map(|i| (1.0 - z[i]) * n[i] + z[i] * h[i]).collect();

        let (w, b) = kind.head();
        let logits = affine(params.get(w), params.get(b), &h_new);
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite {kind:?} logits at unit {unit}, layer {layer}"
            )));
        }
        let log_probs = log_softmax(&logits);
        let probs: Vec<f64> = log_probs.iter().map(|l| l.exp()).collect();
        let entropy = -probs
            .iter()
            .zip(&log_probs)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, l)| p * l)
            .sum::<f64>();
        let choice = pick(&mut chooser, &logits, &probs, steps.len())?;
        steps.push(StepCache {
            kind,
            unit,
            layer,
            token,
            slot,
            x,
            h_prev: std::mem::replace(h, h_new.clone()),
            r,
            z,
            n,
            gh_n,
            h: h_new,
            probs,
            log_probs,
            choice,
            entropy,
        });
        Ok(choice)
    };

    let (n_depth, n_kernel) = (shape.n_depth, shape.n_kernel);
    for unit in 0..shape.n_units {
        let d = step(DecisionKind::Depth, unit, 0, token, &mut h, &mut steps)?;
        token = 1 + d;
        for layer in 0..space.depth_choices[d] as usize {
            let k = step(DecisionKind::Kernel, unit, layer, token, &mut h, &mut steps)?;
            token = 1 + n_depth + k;
            let e = step(DecisionKind::Expansion, unit, layer, token, &mut h, &mut steps)?;
            token = 1 + n_depth + n_kernel + e;
        }
    }
    if let Chooser::Replay(choices) = chooser {
        if choices.len() != steps.len() {
            return Err(Error::Shape(format!(
                "replay has {} decisions, the path uses {}",
                choices.len(),
                steps.len()
            )));
        }
    }
    Ok(Pass { state, h0, steps })
}

/// Accumulates `scale · ∇θ [advantage · Σ log p + entropy_weight · Σ H]`
/// along `pass` into `grad`.
pub(crate) fn backward(
    params: &ControllerParams,
    pass: &Pass,
    advantage: f64,
    entropy_weight: f64,
    scale: f64,
    grad: &mut ControllerParams,
) {
    let shape = *params.shape();
    let hd = shape.hidden;
    let td = shape.token_dim;
    let mut dh = vec![0.0; hd];

    for s in pass.steps.iter().rev() {
        let g: Vec<f64> = s
            .probs
            .iter()
            .zip(&s.log_probs)
            .enumerate()
            .map(|(j, (&p, &lp))| {
                let hit = if j == s.choice { 1.0 } else { 0.0 };
                let ent = if p > 0.0 { -p * (lp + s.entropy) } else { 0.0 };
                scale * (advantage * (hit - p) + entropy_weight * ent)
            })
            .collect();
        let (w, b) = s.kind.head();
        add_outer(grad.get_mut(w), &g, &s.h);
        add_into(grad.get_mut(b), &g);
        add_transposed(params.get(w), &g, &mut dh);

        let mut dh_prev = vec![0.0; hd];
        let mut dgx = vec![0.0; 3 * hd];
        let mut dgh = vec![0.0; 3 * hd];
        for i in 0..hd {
            let (r, z, n) = (s.r[i], s.z[i], s.n[i]);
            let dn = dh[i] * (1.0 - z);
            let dz = dh[i] * (s.h_prev[i] - n);
            dh_prev[i] = dh[i] * z;
            let dn_pre = dn * (1.0 - n * n);
            let dr_pre = dn_pre * s.gh_n[i] * r * (1.0 - r);
            let dz_pre = dz * z * (1.0 - z);
            dgx[i] = dr_pre;
            dgx[hd + i] = dz_pre;
            dgx[2 * hd + i] = dn_pre;
            dgh[i] = dr_pre;
            dgh[hd + i] = dz_pre;
            dgh[2 * hd + i] = dn_pre * r;
        }
        add_outer(grad.get_mut(Tensor::GruWx), &dgx, &s.x);
        add_into(grad.get_mut(Tensor::GruBx), &dgx);
        let mut dx = vec![0.0; td];
        add_transposed(params.get(Tensor::GruWx), &dgx, &mut dx);
        add_into(&mut grad.get_mut(Tensor::TokenEmb)[s.token * td..(s.token + 1) * td], &dx);
        add_into(&mut grad.get_mut(Tensor::SlotEmb)[s.slot * td..(s.slot + 1) * td], &dx);

        add_outer(grad.get_mut(Tensor::GruWh), &dgh, &s.h_prev);
        add_into(grad.get_mut(Tensor::GruBh), &dgh);
        add_transposed(params.get(Tensor::GruWh), &dgh, &mut dh_prev);
        dh = dh_prev;
    }

    let st = &pass.state;
    let dpre: Vec<f64> = dh.iter().zip(&pass.h0).map(|(d, h)| d * (1.0 - h * h)).collect();
    add_outer(grad.get_mut(Tensor::InitW), &dpre, &st.vector);
    add_into(grad.get_mut(Tensor::InitB), &dpre);
    let mut ds = vec![0.0; st.vector.len()];
    add_transposed(params.get(Tensor::InitW), &dpre, &mut ds);

    let eo = shape.encoder_out;
    let bd = shape.bucket_dim;
    add_into(
        &mut grad.get_mut(Tensor::BucketEmb)[st.input.bucket * bd..(st.input.bucket + 1) * bd],
        &ds[eo..],
    );
    let da2: Vec<f64> = ds[..eo].iter().zip(&st.enc).map(|(d, e)| d * (1.0 - e * e)).collect();
    add_outer(grad.get_mut(Tensor::EncW2), &da2, &st.h1);
    add_into(grad.get_mut(Tensor::EncB2), &da2);
    let mut dh1 = vec![0.0; shape.encoder_hidden];
    add_transposed(params.get(Tensor::EncW2), &da2, &mut dh1);
    let da1: Vec<f64> = dh1.iter().zip(&st.h1).map(|(d, h)| d * (1.0 - h * h)).collect();
    let in_dim = shape.input_dim();
    let gw1 = grad.get_mut(Tensor::EncW1);
    for (i, d) in da1.iter().enumerate() {
        for &j in &st.input.active {
            gw1[i * in_dim + j] += d;
        }
    }
    add_into(grad.get_mut(Tensor::EncB1), &da1);
}
