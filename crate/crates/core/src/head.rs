//! Matching head: descriptor concatenation, the shallow MLP into the shared
//! latent space, cosine similarity and the InfoNCE matching loss.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::attention::uniform_init;
use crate::encoder::MaskDescriptor;
use crate::error::{Error, Result};
use crate::tape::{cosine_parts, Tape, Var};
use crate::tensor::Tensor;

static ZERO_NORM_COSINES: AtomicU64 = AtomicU64::new(0);

/// Two-layer perceptron `[in -> hidden -> d_f]` with ReLU in between.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl MlpParams {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, d_f: usize, rng: &mut R) -> Self {
        let w1 = uniform_init(input, hidden, rng);
        let b1 = uniform_init(1, hidden, rng).reshape(vec![hidden]).expect("sized");
        let w2 = uniform_init(hidden, d_f, rng);
        let b2 = uniform_init(1, d_f, rng).reshape(vec![d_f]).expect("sized");
        // Biases share the fan-in bound of their layer.
        let scale1 = 1.0 / (input as f64).sqrt();
        let scale2 = 1.0 / (hidden as f64).sqrt();
        let b1 = rescale(b1, scale1);
        let b2 = rescale(b2, scale2);
        Self { w1, b1, w2, b2 }
    }

    pub fn input_width(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn output_width(&self) -> usize {
        self.w2.shape()[1]
    }

    pub fn record(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            w1: tape.leaf(self.w1.clone()),
            b1: tape.leaf(self.b1.clone()),
            w2: tape.leaf(self.w2.clone()),
            b2: tape.leaf(self.b2.clone()),
        }
    }
}

// `uniform_init(1, n)` draws from U(-1, 1); rescale to the layer's bound.
fn rescale(t: Tensor, s: f64) -> Tensor {
    let shape = t.shape().to_vec();
    Tensor::from_parts(shape, t.into_data().into_iter().map(|v| v * s).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub temperature: f64,
    pub batch: usize,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Parameter(format!(
                "temperature {} must be > 0",
                self.temperature
            )));
        }
        if self.batch < 2 {
            return Err(Error::Parameter(format!("batch {} must be >= 2", self.batch)));
        }
        Ok(())
    }
}

/// `[cross_view ; context ; object]`.
pub fn assemble_rho(desc: &MaskDescriptor) -> Result<Vec<f64>> {
    let cross = desc
        .cross_view
        .as_ref()
        .ok_or_else(|| Error::State("cross-view embedding not computed".into()))?;
    let mut rho = Vec::with_capacity(cross.len() + desc.context.len() + desc.object.len());
    rho.extend_from_slice(cross);
    rho.extend_from_slice(&desc.context);
    rho.extend_from_slice(&desc.object);
    Ok(rho)
}

/// Embeds each row of `rho` (`m x in`) into the latent space (`m x d_f`).
pub fn embed_on_tape(tape: &mut Tape, rho: Var, params: &MlpVars) -> Result<Var> {
    let input = tape.value(params.w1).rows();
    if tape.value(rho).cols() != input {
        return Err(Error::Dimension(format!(
            "descriptor of width {} into an MLP expecting {}",
            tape.value(rho).cols(),
            input
        )));
    }
    let h = tape.matmul(rho, params.w1)?;
    let h = tape.add_row_vector(h, params.b1)?;
    let h = tape.relu(h);
    let out = tape.matmul(h, params.w2)?;
    tape.add_row_vector(out, params.b2)
}

/// Tape-free embedding of a single descriptor vector.
pub fn embed(rho: &[f64], params: &MlpParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = params.record(&mut tape);
    let x = tape.leaf(Tensor::row_vector(rho)?);
    let out = embed_on_tape(&mut tape, x, &vars)?;
    Ok(tape.value(out).data().to_vec())
}

/// Cosine similarity clamped to `[-1, 1]`. A zero-norm input scores 0 and
/// bumps [`zero_norm_cosines`].
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    match cosine_parts(a, b) {
        Some((s, _, _)) => s,
        None => {
            ZERO_NORM_COSINES.fetch_add(1, Ordering::Relaxed);
            log::warn!("cosine similarity with a zero-norm vector");
            0.0
        }
    }
}

/// Process-wide count of zero-norm cosine evaluations.
pub fn zero_norm_cosines() -> u64 {
    ZERO_NORM_COSINES.load(Ordering::Relaxed)
}

/// `logsumexp(sims / t) - sims[positive] / t`.
pub fn info_nce_value(sims: &[f64], positive: usize, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::Parameter(format!(
            "temperature {temperature} must be > 0"
        )));
    }
    if positive >= sims.len() {
        return Err(Error::Parameter(format!(
            "positive index {} out of range for a batch of {}",
            positive,
            sims.len()
        )));
    }
    let logits: Vec<f64> = sims.iter().map(|s| s / temperature).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if logits[positive] == max {
        // ln(1 + x) keeps precision when the positive dominates.
        let rest: f64 = logits
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != positive)
            .map(|(_, l)| (l - max).exp())
            .sum();
        return Ok(rest.ln_1p());
    }
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[positive])
}

/// Gradient of [`info_nce_value`] with respect to the similarities:
/// `(softmax(sims / t) - onehot(positive)) / t`.
pub fn info_nce_grad(sims: &[f64], positive: usize, temperature: f64) -> Vec<f64> {
    let logits: Vec<f64> = sims.iter().map(|s| s / temperature).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter()
        .enumerate()
        .map(|(i, e)| (e / total - if i == positive { 1.0 } else { 0.0 }) / temperature)
        .collect()
}
