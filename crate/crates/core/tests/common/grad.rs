//! Finite-difference checks of every differentiable op and of the composed
//! training loss. Each check returns the worst relative error it saw.

use omama::attention::AttentionVars;
use omama::config::RunConfig;
use omama::head::MlpVars;
use omama::model::{ModelParams, ModelDims};
use omama::synthetic::{generate_pack, pack_rng, SceneParams, SceneSpec};
use omama::tape::{Tape, Var};
use omama::tensor::Tensor;
use omama::trainer::sample_gradients;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{max_rel_err, numeric_grad};

pub const GRAD_TOL: f64 = 1e-4;
pub const SEEDS: std::ops::Range<u64> = 0..10;

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Checks the gradient of `<w, op(inputs)>` with respect to every input.
/// `op` records the op on a tape; the same closure gives the forward value
/// for the finite differences.
pub fn check_op(
    inputs: &[Tensor],
    weights: &Tensor,
    op: impl Fn(&mut Tape, &[Var]) -> Var,
) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = op(&mut tape, &vars);
    let grads = tape.backward_seeded(out, weights.clone()).unwrap();

    let value = |xs: &[Tensor]| {
        let mut t = Tape::new();
        let v: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
        let o = op(&mut t, &v);
        dot(t.value(o), weights)
    };
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let numeric = numeric_grad(x, |p| {
            let mut xs = inputs.to_vec();
            xs[i] = p.clone();
            value(&xs)
        });
        let analytic = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(x.shape()));
        worst = worst.max(max_rel_err(analytic.data(), numeric.data()));
    }
    worst
}

pub fn layer_norm(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = [uniform(&mut rng, &[4, 8]), uniform(&mut rng, &[8]), uniform(&mut rng, &[8])];
    let w = uniform(&mut rng, &[4, 8]);
    check_op(&inputs, &w, |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap())
}

pub fn softmax_rows(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = [uniform(&mut rng, &[4, 6])];
    let w = uniform(&mut rng, &[4, 6]);
    check_op(&inputs, &w, |t, v| t.softmax_rows(v[0]).unwrap())
}

pub fn matmul(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = [uniform(&mut rng, &[3, 4]), uniform(&mut rng, &[4, 5])];
    let w = uniform(&mut rng, &[3, 5]);
    check_op(&inputs, &w, |t, v| t.matmul(v[0], v[1]).unwrap())
}

/// Three queries over six tokens, `d = d_k = 4`, with respect to the
/// queries, the tokens and all six attention parameters.
pub fn cross_attend(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = [
        uniform(&mut rng, &[3, 4]),
        uniform(&mut rng, &[6, 4]),
        uniform(&mut rng, &[4, 4]),
        uniform(&mut rng, &[4, 4]),
        uniform(&mut rng, &[4, 4]),
        uniform(&mut rng, &[6, 4]),
        uniform(&mut rng, &[4]),
        uniform(&mut rng, &[4]),
    ];
    let w = uniform(&mut rng, &[3, 4]);
    check_op(&inputs, &w, |t, v| {
        let params = AttentionVars {
            w_q: v[2],
            w_k: v[3],
            w_v: v[4],
            pos_embed: v[5],
            ln_gamma: v[6],
            ln_beta: v[7],
        };
        omama::attention::cross_attend_on_tape(t, v[0], v[1], &params, 1e-5)
            .unwrap()
            .output
    })
}

pub fn embed(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = [
        uniform(&mut rng, &[3, 9]),
        uniform(&mut rng, &[9, 6]),
        uniform(&mut rng, &[6]),
        uniform(&mut rng, &[6, 4]),
        uniform(&mut rng, &[4]),
    ];
    let w = uniform(&mut rng, &[3, 4]);
    check_op(&inputs, &w, |t, v| {
        let mlp = MlpVars {
            w1: v[1],
            b1: v[2],
            w2: v[3],
            b2: v[4],
        };
        omama::head::embed_on_tape(t, v[0], &mlp).unwrap()
    })
}

pub fn cosine_rows(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = [uniform(&mut rng, &[5, 4]), uniform(&mut rng, &[1, 4])];
    let w = uniform(&mut rng, &[1, 5]);
    check_op(&inputs, &w, |t, v| t.cosine_rows(v[0], v[1]).unwrap())
}

pub fn info_nce(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = [uniform(&mut rng, &[1, 8])];
    let positive = rng.random_range(0..8);
    let w = Tensor::full(&[1, 1], 1.0);
    check_op(&inputs, &w, |t, v| t.info_nce(v[0], positive, 0.07).unwrap())
}

/// Small scene and model for the composed-loss check.
pub fn composed_setup(seed: u64) -> (RunConfig, ModelParams, omama::pack::FeaturePack) {
    let spec = SceneSpec::generate(SceneParams {
        width: 12,
        height: 12,
        objects: 3,
        dim: 4,
        min_size: 2,
        max_size: 3,
        seed,
        ..Default::default()
    })
    .unwrap();
    let pack = generate_pack(&spec, &mut pack_rng(&spec, 0, 0)).unwrap();
    let mut cfg = RunConfig::default();
    cfg.attn.max_tokens = 144;
    cfg.head.hidden = 8;
    cfg.head.d_f = 5;
    cfg.mining.batch_size = 4;
    let dims = ModelDims::from_config(&cfg, 4);
    let params = ModelParams::init(&dims, &mut ChaCha8Rng::seed_from_u64(seed));
    (cfg, params, pack)
}

/// Full matching loss (encoder, attention, head, cosine, InfoNCE) with
/// respect to every entry of every parameter tensor.
pub fn composed_loss(seed: u64) -> f64 {
    let (cfg, params, pack) = composed_setup(seed);
    let rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let analytic = sample_gradients(&params, &cfg, &pack, &mut rng.clone())
        .unwrap()
        .unwrap();
    let mut worst: f64 = 0.0;
    for (i, t) in params.tensors().into_iter().enumerate() {
        let numeric = numeric_grad(t, |p| {
            let mut q = params.clone();
            *q.tensors_mut()[i] = p.clone();
            sample_gradients(&q, &cfg, &pack, &mut rng.clone())
                .unwrap()
                .unwrap()
                .loss
        });
        worst = worst.max(max_rel_err(analytic.grads[i].data(), numeric.data()));
    }
    worst
}

pub type Check = (&'static str, fn(u64) -> f64);

pub const CHECKS: [Check; 8] = [
    ("layer_norm", layer_norm),
    ("softmax_rows", softmax_rows),
    ("matmul", matmul),
    ("cross_attend", cross_attend),
    ("embed", embed),
    ("cosine_rows", cosine_rows),
    ("info_nce", info_nce),
    ("composed loss", composed_loss),
];
