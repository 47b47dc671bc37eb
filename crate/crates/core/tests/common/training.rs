//! Small training runs shared by the training tests and the acceptance
//! report.

use omama::config::RunConfig;
use omama::dataset::MemoryDataset;
use omama::eval::evaluate;
use omama::synthetic::{generate_split, SceneParams, SceneSpec, EVAL_STREAM_OFFSET};
use omama::trainer::{train, Trainer};

pub fn synthetic(params: SceneParams, train: usize, eval: usize) -> (SceneSpec, MemoryDataset, MemoryDataset) {
    let spec = SceneSpec::generate(params).unwrap();
    let t = MemoryDataset::new(generate_split(&spec, train, 0).unwrap());
    let e = MemoryDataset::new(generate_split(&spec, eval, EVAL_STREAM_OFFSET).unwrap());
    (spec, t, e)
}

pub fn small_config(steps: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.train.steps = steps;
    cfg.train.seed = 11;
    cfg.head.hidden = 32;
    cfg.head.d_f = 16;
    cfg
}

fn small_data() -> (MemoryDataset, MemoryDataset) {
    let (_, t, e) = synthetic(
        SceneParams {
            objects: 4,
            seed: 3,
            ..Default::default()
        },
        24,
        8,
    );
    (t, e)
}

/// Two runs with one seed: identical loss curves, checkpoint bytes and
/// evaluation reports.
pub fn same_seed_runs_match() -> Result<String, String> {
    let (data, eval) = small_data();
    let cfg = small_config(30);
    let runs: Vec<_> = (0..2).map(|_| train(&data, &cfg, None).unwrap()).collect();
    let curve = |i: usize| -> Vec<u64> { runs[i].1.records.iter().map(|r| r.loss.to_bits()).collect() };
    if curve(0) != curve(1) {
        return Err("loss curves differ".into());
    }
    let bytes: Vec<Vec<u8>> = runs.iter().map(|r| r.0.checkpoint().to_bytes().unwrap()).collect();
    if bytes[0] != bytes[1] {
        return Err("checkpoints differ".into());
    }
    let reports: Vec<String> = runs
        .iter()
        .map(|r| evaluate(&r.0.model(), &eval, 0.5, 0.0075).to_json())
        .collect();
    if reports[0] != reports[1] {
        return Err("reports differ".into());
    }
    Ok(format!("{} steps, {} checkpoint bytes", curve(0).len(), bytes[0].len()))
}

/// Checkpoint at step 12, resume to 30: bit-identical to 30 straight steps.
pub fn resume_matches_uninterrupted() -> Result<String, String> {
    let (data, _) = small_data();
    let cfg = small_config(30);
    let (straight, _) = train(&data, &cfg, None).unwrap();

    let (first, _) = train(&data, &small_config(12), None).unwrap();
    let ckpt = omama::checkpoint::Checkpoint::from_bytes(&first.checkpoint().to_bytes().unwrap()).unwrap();
    let mut resumed = Trainer::resume(ckpt, cfg).unwrap();
    resumed.run(&data, None).unwrap();
    let a = straight.checkpoint().to_bytes().unwrap();
    let b = resumed.checkpoint().to_bytes().unwrap();
    if a != b {
        return Err("resumed trajectory differs".into());
    }
    Ok("resume at 12 of 30 is bit-identical".into())
}
