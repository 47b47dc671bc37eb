//! Ego<->Exo cross attention.
//!
//! A mask's object descriptor queries the full feature map of the *other*
//! view: tokens are layer-normed, offset by a learnable positional embedding
//! and projected to keys and values; the query is layer-normed with the same
//! scale/shift and projected by `W_Q`. Single head, scaled by `1/sqrt(d_k)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::encoder::{EncodedSample, MaskDescriptor};
use crate::error::{Error, Result};
use crate::pack::FeatureMap;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// `d x d_k`
    pub w_q: Tensor,
    /// `d x d_k`
    pub w_k: Tensor,
    /// `d x d_k`
    pub w_v: Tensor,
    /// `max_tokens x d`
    pub pos_embed: Tensor,
    pub ln_gamma: Tensor,
    pub ln_beta: Tensor,
}

/// Attention parameters recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub pos_embed: Var,
    pub ln_gamma: Var,
    pub ln_beta: Var,
}

pub(crate) fn uniform_init<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::from_parts(vec![rows, cols], data)
}

impl AttentionParams {
    /// Projections from `U(-1/sqrt(d), 1/sqrt(d))`, positional embedding from
    /// `0.02 * N(0, 1)`, identity layer norm.
    pub fn init<R: Rng + ?Sized>(d: usize, d_k: usize, max_tokens: usize, rng: &mut R) -> Self {
        let w_q = uniform_init(d, d_k, rng);
        let w_k = uniform_init(d, d_k, rng);
        let w_v = uniform_init(d, d_k, rng);
        let pos = (0..max_tokens * d)
            .map(|_| 0.02 * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect();
        Self {
            w_q,
            w_k,
            w_v,
            pos_embed: Tensor::from_parts(vec![max_tokens, d], pos),
            ln_gamma: Tensor::full(&[d], 1.0),
            ln_beta: Tensor::zeros(&[d]),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.shape()[0]
    }

    pub fn d_k(&self) -> usize {
        self.w_q.shape()[1]
    }

    pub fn max_tokens(&self) -> usize {
        self.pos_embed.shape()[0]
    }

    pub fn record(&self, tape: &mut Tape) -> AttentionVars {
        AttentionVars {
            w_q: tape.leaf(self.w_q.clone()),
            w_k: tape.leaf(self.w_k.clone()),
            w_v: tape.leaf(self.w_v.clone()),
            pos_embed: tape.leaf(self.pos_embed.clone()),
            ln_gamma: tape.leaf(self.ln_gamma.clone()),
            ln_beta: tape.leaf(self.ln_beta.clone()),
        }
    }
}

/// Handles to the intermediate values of one attention call.
#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    /// `m x d_k` refined embeddings.
    pub output: Var,
    /// `m x T` attention weights.
    pub weights: Var,
    /// `T x d_k` value projections.
    pub values: Var,
}

/// Cross attention of `queries` (`m x d`) over `context` tokens (`T x d`).
pub fn cross_attend_on_tape(
    tape: &mut Tape,
    queries: Var,
    context: Var,
    params: &AttentionVars,
    ln_eps: f64,
) -> Result<AttentionOutput> {
    let tokens = tape.value(context).rows();
    let capacity = tape.value(params.pos_embed).rows();
    if tokens > capacity {
        return Err(Error::Capacity {
            tokens,
            max: capacity,
        });
    }
    let d_k = tape.value(params.w_q).cols();
    let normed = tape.layer_norm(context, params.ln_gamma, params.ln_beta, ln_eps)?;
    let pos = tape.slice_rows(params.pos_embed, 0, tokens)?;
    let tok = tape.add(normed, pos)?;
    let q_norm = tape.layer_norm(queries, params.ln_gamma, params.ln_beta, ln_eps)?;
    let q = tape.matmul(q_norm, params.w_q)?;
    let k = tape.matmul(tok, params.w_k)?;
    let values = tape.matmul(tok, params.w_v)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt());
    let weights = tape.softmax_rows(scaled)?;
    let output = tape.matmul(weights, values)?;
    Ok(AttentionOutput {
        output,
        weights,
        values,
    })
}

/// Tape-free cross attention over a feature map.
pub fn cross_attend(
    queries: &[Vec<f64>],
    context: &FeatureMap,
    params: &AttentionParams,
    ln_eps: f64,
) -> Result<Vec<Vec<f64>>> {
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    let vars = params.record(&mut tape);
    let q = tape.leaf(Tensor::from_rows(queries)?);
    let ctx = tape.leaf(context.to_tokens());
    let out = cross_attend_on_tape(&mut tape, q, ctx, &vars, ln_eps)?;
    let value = tape.value(out.output);
    Ok((0..value.rows()).map(|i| value.row(i).to_vec()).collect())
}

/// Fills `cross_view` for the source (attending over the destination map)
/// and every candidate (attending over the source map).
pub fn refine_descriptors(
    source: &mut MaskDescriptor,
    candidates: &mut [MaskDescriptor],
    source_map: &FeatureMap,
    dest_map: &FeatureMap,
    params: &AttentionParams,
    ln_eps: f64,
) -> Result<()> {
    let queries: Vec<Vec<f64>> = candidates.iter().map(|c| c.object.clone()).collect();
    let refined = cross_attend(&queries, source_map, params, ln_eps)?;
    for (c, r) in candidates.iter_mut().zip(refined) {
        c.cross_view = Some(r);
    }
    let src = cross_attend(&[source.object.clone()], dest_map, params, ln_eps)?;
    source.cross_view = src.into_iter().next();
    Ok(())
}

/// Convenience wrapper over [`refine_descriptors`] for an encoded sample.
pub fn refine_sample(
    sample: &mut EncodedSample,
    source_map: &FeatureMap,
    dest_map: &FeatureMap,
    params: &AttentionParams,
    ln_eps: f64,
) -> Result<()> {
    refine_descriptors(
        &mut sample.source,
        &mut sample.candidates,
        source_map,
        dest_map,
        params,
        ln_eps,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(d: usize, d_k: usize, p: usize, seed: u64) -> AttentionParams {
        AttentionParams::init(d, d_k, p, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn single_token_returns_its_value() {
        let p = params(3, 4, 8, 1);
        let map = FeatureMap::new(1, 1, 3, vec![0.2, -1.0, 0.7]).unwrap();
        let queries = vec![vec![1.0, 2.0, 3.0], vec![-5.0, 0.0, 0.5]];
        let out = cross_attend(&queries, &map, &p, 1e-5).unwrap();

        let mut tape = Tape::new();
        let vars = p.record(&mut tape);
        let ctx = tape.leaf(map.to_tokens());
        let q = tape.leaf(Tensor::from_rows(&queries).unwrap());
        let res = cross_attend_on_tape(&mut tape, q, ctx, &vars, 1e-5).unwrap();
        let value = tape.value(res.values).row(0).to_vec();
        for o in out {
            for (a, b) in o.iter().zip(&value) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_query_projection_averages_values() {
        let mut p = params(2, 2, 16, 2);
        p.w_q = Tensor::zeros(&[2, 2]);
        let data: Vec<f32> = (0..12).map(|i| (i as f32 * 0.7).cos()).collect();
        let map = FeatureMap::new(2, 3, 2, data).unwrap();
        let out = cross_attend(&[vec![0.3, 0.1]], &map, &p, 1e-5).unwrap();

        let mut tape = Tape::new();
        let vars = p.record(&mut tape);
        let ctx = tape.leaf(map.to_tokens());
        let q = tape.leaf(Tensor::from_rows(&[vec![0.3, 0.1]]).unwrap());
        let res = cross_attend_on_tape(&mut tape, q, ctx, &vars, 1e-5).unwrap();
        let v = tape.value(res.values);
        for j in 0..2 {
            let mean = (0..6).map(|t| v.get(t, j)).sum::<f64>() / 6.0;
            assert!((out[0][j] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn capacity_is_enforced() {
        let p = params(2, 2, 3, 3);
        let map = FeatureMap::new(2, 2, 2, vec![0.0; 8]).unwrap();
        match cross_attend(&[vec![1.0, 0.0]], &map, &p, 1e-5) {
            Err(Error::Capacity { tokens, max }) => assert_eq!((tokens, max), (4, 3)),
            other => panic!("{other:?}"),
        }
    }
}
