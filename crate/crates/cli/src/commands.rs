use std::path::Path;

use omama::ablation::run_ablation;
use omama::checkpoint::Checkpoint;
use omama::config::RunConfig;
use omama::dataset::ManifestDataset;
use omama::eval::{
    match_dataset, match_pack, report_from_rankings, sparkline, sweep_grid, threshold_sweep,
};
use omama::model::{ForwardSettings, Model};
use omama::pack::FeaturePack;
use omama::synthetic::{write_split, SceneParams, SceneSpec, EVAL_STREAM_OFFSET};
use omama::trainer::Trainer;
use omama::{Error, Result};

use crate::overlay::write_overlay;
use crate::{Cli, Command, EvalArgs, GenArgs, InspectArgs, MatchArgs, TrainArgs};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a, cli.seed),
        Command::Train(a) => train(a, cli.seed),
        Command::Match(a) => match_one(a),
        Command::Eval(a) => eval(a, cli.seed),
        Command::InspectPack(a) => inspect(a),
    }
}

fn gen_synthetic(a: &GenArgs, seed: Option<u64>) -> Result<()> {
    let params = SceneParams {
        objects: a.objects,
        dim: a.dim,
        height: a.height,
        width: a.width,
        noise: a.noise,
        distractor_parts: a.distractor_parts,
        invisible_prob: a.invisible_prob,
        seed: seed.unwrap_or(0),
        ..SceneParams::default()
    };
    let spec = SceneSpec::generate(params)?;
    std::fs::create_dir_all(&a.out)?;
    spec.save(a.out.join("spec.json"))?;
    let manifest = write_split(&spec, &a.out, a.packs, 0)?;
    println!("wrote {} training packs, manifest {}", a.packs, manifest.display());
    if a.eval_packs > 0 {
        let eval_dir = a.out.join("eval");
        let manifest = write_split(&spec, &eval_dir, a.eval_packs, EVAL_STREAM_OFFSET)?;
        println!(
            "wrote {} evaluation packs, manifest {}",
            a.eval_packs,
            manifest.display()
        );
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn train(a: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(n) = a.steps {
        cfg.train.steps = n;
    }
    cfg.train.manifest = Some(a.manifest.clone());
    cfg.validate()?;
    let data = ManifestDataset::open(&a.manifest)?;
    if data.paths().is_empty() {
        return Err(Error::Validation("manifest lists no packs".into()));
    }
    std::fs::create_dir_all(&a.out)?;
    cfg.write_resolved(&a.out)?;
    let mut trainer = match &a.resume {
        Some(ckpt) => Trainer::resume(Checkpoint::load(ckpt)?, cfg)?,
        None => {
            let d = omama::dataset::Dataset::load(&data, 0)?.dim();
            Trainer::new(cfg, d)?
        }
    };
    let summary = trainer.run(&data, Some(&a.out))?;
    let last = summary.records.last();
    println!(
        "trained to step {}; final loss {}; skipped {} samples, {} non-finite updates",
        trainer.step(),
        last.map_or("n/a".to_string(), |r| format!("{:.5}", r.loss)),
        summary.skipped,
        summary.nonfinite_skips
    );
    if let Some(p) = summary.checkpoints.last() {
        println!("checkpoint {}", p.display());
    }
    Ok(())
}

fn load_model(ckpt: &Path) -> Result<(Model, RunConfig)> {
    let ck = Checkpoint::load(ckpt)?;
    let cfg = ck.config()?;
    let model = Model::new(ck.params, ForwardSettings::from_config(&cfg));
    Ok((model, cfg))
}

fn match_one(a: &MatchArgs) -> Result<()> {
    let (model, cfg) = load_model(&a.ckpt)?;
    let pack = FeaturePack::load(&a.pack)?;
    let threshold = a.threshold.unwrap_or(cfg.eval.vis_threshold);
    let result = match_pack(&model, &pack, threshold)?;
    match result.chosen_index {
        Some(i) => println!("chosen {i}"),
        None => println!("chosen none"),
    }
    println!("similarity {:.6}", result.similarity);
    println!("visible {}", result.visible_pred);
    if let Some(d) = &result.diagnostic {
        println!("note {d}");
    }
    println!("rank candidate similarity");
    for (r, (idx, sim)) in result.ranked.iter().enumerate() {
        println!("{:>4} {:>9} {:>10.6}", r + 1, idx, sim);
    }
    if let Some(path) = &a.emit_overlay {
        write_overlay(path, &pack, result.chosen_index)?;
        println!("overlay {}", path.display());
    }
    Ok(())
}

fn read_losses(path: &Path) -> Option<Vec<f64>> {
    let text = std::fs::read_to_string(path).ok()?;
    Some(
        text.lines()
            .skip(1)
            .filter_map(|l| l.split(',').nth(1)?.parse().ok())
            .collect(),
    )
}

fn eval(a: &EvalArgs, seed: Option<u64>) -> Result<()> {
    let (model, cfg) = load_model(&a.ckpt)?;
    let data = ManifestDataset::open(&a.manifest)?;
    let threshold = a.threshold.unwrap_or(cfg.eval.vis_threshold);
    let tol = cfg.eval.contour_tolerance;
    let ranked = match_dataset(&model, &data);
    let mut report = report_from_rankings(&ranked, threshold, tol);
    if a.sweep_threshold {
        report.sweep = Some(threshold_sweep(&ranked, &sweep_grid(), tol));
    }
    if let Some(train_manifest) = &a.ablation_train {
        let train_set = ManifestDataset::open(train_manifest)?;
        let base = seed.unwrap_or(cfg.train.seed);
        let seeds: Vec<u64> = (0..a.ablation_seeds as u64).map(|i| base + i).collect();
        report.ablation = Some(run_ablation(&train_set, &data, &cfg, &seeds)?);
    }
    std::fs::write(&a.report, report.to_json() + "\n")?;

    let agg = &report.aggregates;
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!("samples {} (errors {})", agg.samples, agg.errors);
    println!("threshold {threshold}");
    println!("IoU     {:.4}", agg.iou);
    println!("Vis.A   {:.4}", agg.vis_acc);
    println!("Loc.E   {}", opt(agg.loc_error));
    println!("Cont.A  {}", opt(agg.contour));
    println!("top-1   {}", opt(agg.top1));
    if let Some(sweep) = &report.sweep {
        println!("threshold  Vis.A    IoU");
        for p in sweep {
            println!("{:>9.2} {:>6.4} {:>6.4}", p.threshold, p.vis_acc, p.iou);
        }
    }
    if let Some(ab) = &report.ablation {
        println!(
            "ablation top-1: adjacent {:.4}, random {:.4} over seeds {:?}",
            ab.mean_adjacent, ab.mean_random, ab.seeds
        );
    }
    if a.plot.is_some() {
        let ious: Vec<f64> = report.records.iter().map(|r| r.iou).collect();
        println!("IoU  {}", sparkline(&ious));
        let metrics = a.ckpt.parent().unwrap_or(Path::new(".")).join("metrics.csv");
        if let Some(losses) = read_losses(&metrics) {
            println!("loss {}", sparkline(&losses));
        }
    }
    println!("report {}", a.report.display());
    Ok(())
}

fn inspect(a: &InspectArgs) -> Result<()> {
    let pack = FeaturePack::load(&a.pack)?;
    let (s, d) = (&pack.source_features, &pack.dest_features);
    println!("version     {}", pack.version);
    println!("direction   {}", pack.direction);
    println!("d           {}", pack.dim());
    println!("source H/W  {}x{}", s.height(), s.width());
    println!("dest H/W    {}x{}", d.height(), d.width());
    println!("N           {}", pack.candidates.len());
    println!("visible     {}", pack.visible);
    match pack.gt_index {
        Some(i) => println!("gt_index    {i}"),
        None => println!("gt_index    none"),
    }
    println!("source px   {}", pack.source_mask.count());
    let sizes: Vec<String> = pack
        .candidates
        .iter()
        .map(|m| m.count().to_string())
        .collect();
    println!("candidate px {}", sizes.join(" "));
    Ok(())
}
