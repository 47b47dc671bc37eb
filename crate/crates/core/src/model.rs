//! The full matcher: parameters plus the forward pass from a pack to
//! candidate similarities.

use rand::Rng;

use crate::attention::{cross_attend_on_tape, AttentionParams, AttentionVars};
use crate::config::RunConfig;
use crate::encoder::{encode_all, EncodedSample};
use crate::error::{Error, Result};
use crate::head::{embed_on_tape, MlpParams, MlpVars};
use crate::pack::FeaturePack;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Widths of every learnable tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub d: usize,
    pub d_k: usize,
    pub max_tokens: usize,
    pub hidden: usize,
    pub d_f: usize,
}

impl ModelDims {
    /// Resolves the widths for feature dimension `d`.
    pub fn from_config(cfg: &RunConfig, d: usize) -> Self {
        Self {
            d,
            d_k: cfg.attn.d_k.unwrap_or(d),
            max_tokens: cfg.attn.max_tokens,
            hidden: cfg.head.hidden,
            d_f: cfg.head.d_f,
        }
    }

    /// Width of `[cross_view ; context ; object]`.
    pub fn rho_width(&self) -> usize {
        self.d_k + 2 * self.d
    }
}

/// Non-learnable settings of the forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardSettings {
    pub context_margin: f64,
    pub upsample: usize,
    pub ln_eps: f64,
}

impl ForwardSettings {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            context_margin: cfg.encoder.context_margin,
            upsample: cfg.encoder.upsample,
            ln_eps: cfg.attn.ln_eps,
        }
    }
}

pub const PARAM_NAMES: [&str; 10] = [
    "attn.w_q",
    "attn.w_k",
    "attn.w_v",
    "attn.pos_embed",
    "attn.ln_gamma",
    "attn.ln_beta",
    "head.w1",
    "head.b1",
    "head.w2",
    "head.b2",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub attention: AttentionParams,
    pub mlp: MlpParams,
}

#[derive(Clone, Copy, Debug)]
pub struct ModelVars {
    pub attention: AttentionVars,
    pub mlp: MlpVars,
}

impl ModelVars {
    /// In [`PARAM_NAMES`] order.
    pub fn all(&self) -> [Var; 10] {
        let a = &self.attention;
        let m = &self.mlp;
        [
            a.w_q, a.w_k, a.w_v, a.pos_embed, a.ln_gamma, a.ln_beta, m.w1, m.b1, m.w2, m.b2,
        ]
    }
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(dims: &ModelDims, rng: &mut R) -> Self {
        let attention = AttentionParams::init(dims.d, dims.d_k, dims.max_tokens, rng);
        let mlp = MlpParams::init(dims.rho_width(), dims.hidden, dims.d_f, rng);
        Self { attention, mlp }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d: self.attention.dim(),
            d_k: self.attention.d_k(),
            max_tokens: self.attention.max_tokens(),
            hidden: self.mlp.w1.shape()[1],
            d_f: self.mlp.output_width(),
        }
    }

    /// In [`PARAM_NAMES`] order.
    pub fn tensors(&self) -> [&Tensor; 10] {
        let a = &self.attention;
        let m = &self.mlp;
        [
            &a.w_q, &a.w_k, &a.w_v, &a.pos_embed, &a.ln_gamma, &a.ln_beta, &m.w1, &m.b1, &m.w2,
            &m.b2,
        ]
    }

    /// In [`PARAM_NAMES`] order.
    pub fn tensors_mut(&mut self) -> [&mut Tensor; 10] {
        let a = &mut self.attention;
        let m = &mut self.mlp;
        [
            &mut a.w_q,
            &mut a.w_k,
            &mut a.w_v,
            &mut a.pos_embed,
            &mut a.ln_gamma,
            &mut a.ln_beta,
            &mut m.w1,
            &mut m.b1,
            &mut m.w2,
            &mut m.b2,
        ]
    }

    /// Rebuilds parameters from tensors in [`PARAM_NAMES`] order, checking
    /// that their shapes are mutually consistent.
    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        let [w_q, w_k, w_v, pos_embed, ln_gamma, ln_beta, w1, b1, w2, b2]: [Tensor; 10] = tensors
            .try_into()
            .map_err(|v: Vec<Tensor>| {
                Error::Format(format!("expected 10 parameter tensors, got {}", v.len()))
            })?;
        let params = Self {
            attention: AttentionParams {
                w_q,
                w_k,
                w_v,
                pos_embed,
                ln_gamma,
                ln_beta,
            },
            mlp: MlpParams { w1, b1, w2, b2 },
        };
        params.check_shapes()?;
        Ok(params)
    }

    pub fn check_shapes(&self) -> Result<()> {
        let a = &self.attention;
        let m = &self.mlp;
        let two_d = |t: &Tensor| t.shape().len() == 2;
        if !(two_d(&a.w_q) && two_d(&a.pos_embed) && two_d(&m.w1) && two_d(&m.w2)) {
            return Err(Error::Format("weight matrices must be 2-D".into()));
        }
        let dims = self.dims();
        let expect = [
            (&a.w_k, vec![dims.d, dims.d_k]),
            (&a.w_v, vec![dims.d, dims.d_k]),
            (&a.pos_embed, vec![dims.max_tokens, dims.d]),
            (&a.ln_gamma, vec![dims.d]),
            (&a.ln_beta, vec![dims.d]),
            (&m.w1, vec![dims.rho_width(), dims.hidden]),
            (&m.b1, vec![dims.hidden]),
            (&m.w2, vec![dims.hidden, dims.d_f]),
            (&m.b2, vec![dims.d_f]),
        ];
        for (i, (t, shape)) in expect.into_iter().enumerate() {
            if t.shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "{} has shape {:?}, expected {:?}",
                    PARAM_NAMES[i + 1],
                    t.shape(),
                    shape
                )));
            }
        }
        Ok(())
    }

    pub fn record(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            attention: self.attention.record(tape),
            mlp: self.mlp.record(tape),
        }
    }
}

/// Vars produced by [`forward_on_tape`].
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// `m x d_f` candidate embeddings.
    pub candidates: Var,
    /// `1 x d_f` source embedding.
    pub source: Var,
    /// `1 x m` cosine similarities.
    pub sims: Var,
}

/// Records the forward pass for the candidates at `positions` (indices into
/// `sample.candidates`, repeats allowed).
pub fn forward_on_tape(
    tape: &mut Tape,
    vars: &ModelVars,
    pack: &FeaturePack,
    sample: &EncodedSample,
    positions: &[usize],
    ln_eps: f64,
) -> Result<ForwardVars> {
    if positions.is_empty() {
        return Err(Error::Parameter("no candidates to score".into()));
    }
    let rows = |f: &dyn Fn(usize) -> Vec<f64>| -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = positions.iter().map(|&p| f(p)).collect();
        Tensor::from_rows(&rows)
    };
    if let Some(&bad) = positions.iter().find(|&&p| p >= sample.candidates.len()) {
        return Err(Error::Parameter(format!(
            "candidate position {bad} out of range for {}",
            sample.candidates.len()
        )));
    }
    let cand_obj = tape.leaf(rows(&|p| sample.candidates[p].object.clone())?);
    let cand_ctx = tape.leaf(rows(&|p| sample.candidates[p].context.clone())?);
    let src_obj = tape.leaf(Tensor::row_vector(&sample.source.object)?);
    let src_ctx = tape.leaf(Tensor::row_vector(&sample.source.context)?);
    let src_tokens = tape.leaf(pack.source_features.to_tokens());
    let dst_tokens = tape.leaf(pack.dest_features.to_tokens());

    let cand_cross = cross_attend_on_tape(tape, cand_obj, src_tokens, &vars.attention, ln_eps)?;
    let src_cross = cross_attend_on_tape(tape, src_obj, dst_tokens, &vars.attention, ln_eps)?;
    let cand_rho = tape.concat_cols(&[cand_cross.output, cand_ctx, cand_obj])?;
    let src_rho = tape.concat_cols(&[src_cross.output, src_ctx, src_obj])?;
    let candidates = embed_on_tape(tape, cand_rho, &vars.mlp)?;
    let source = embed_on_tape(tape, src_rho, &vars.mlp)?;
    let sims = tape.cosine_rows(candidates, source)?;
    Ok(ForwardVars {
        candidates,
        source,
        sims,
    })
}

/// Latent embeddings and similarities of every non-empty candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    /// Original candidate indices.
    pub kept: Vec<usize>,
    pub sims: Vec<f64>,
    pub candidate_embeddings: Vec<Vec<f64>>,
    pub source_embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub settings: ForwardSettings,
}

impl Model {
    pub fn new(params: ModelParams, settings: ForwardSettings) -> Self {
        Self { params, settings }
    }

    pub fn encode(&self, pack: &FeaturePack) -> Result<EncodedSample> {
        encode_all(pack, self.settings.context_margin, self.settings.upsample)
    }

    /// Scores every non-empty candidate of `pack`.
    pub fn score(&self, pack: &FeaturePack) -> Result<Scores> {
        if pack.dim() != self.params.attention.dim() {
            return Err(Error::Dimension(format!(
                "pack features have d={}, model expects {}",
                pack.dim(),
                self.params.attention.dim()
            )));
        }
        let sample = self.encode(pack)?;
        if sample.candidates.is_empty() {
            return Ok(Scores {
                kept: Vec::new(),
                sims: Vec::new(),
                candidate_embeddings: Vec::new(),
                source_embedding: Vec::new(),
            });
        }
        let mut tape = Tape::new();
        let vars = self.params.record(&mut tape);
        let positions: Vec<usize> = (0..sample.candidates.len()).collect();
        let out = forward_on_tape(
            &mut tape,
            &vars,
            pack,
            &sample,
            &positions,
            self.settings.ln_eps,
        )?;
        let emb = tape.value(out.candidates);
        Ok(Scores {
            kept: sample.kept.clone(),
            sims: tape.value(out.sims).data().to_vec(),
            candidate_embeddings: (0..emb.rows()).map(|i| emb.row(i).to_vec()).collect(),
            source_embedding: tape.value(out.source).data().to_vec(),
        })
    }
}
