use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use hytransformer::bench::{run_sweep, CostModelConfig, SweepSpec};
use hytransformer::evaluation::{evaluate, evaluate_checkpoint, EvalOptions, RankReport};
use hytransformer::model::HyTransformer;
use hytransformer::numerics::Checkpoint;
use hytransformer::store::{build_filter_index, build_queries, KnowledgeGraph, Split};
use hytransformer::training::{LogRecord, Trainer};

use crate::config::RunConfig;
use crate::run::{open_dataset, RunLock, RunManifest, RunStatus};
use crate::{
    AblateArgs, Ablation, BenchArgs, Breakdown, ConfigArgs, DescribeArgs, EvalArgs, LoadCheckArgs,
    SplitArg, TrainArgs,
};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

pub fn exit_code(e: &anyhow::Error) -> u8 {
    let diverged = e.chain().any(|c| {
        matches!(
            c.downcast_ref::<hytransformer::Error>(),
            Some(hytransformer::Error::Divergence { .. })
        )
    });
    if diverged {
        EXIT_NUMERIC
    } else {
        EXIT_USAGE
    }
}

fn is_divergence(e: &anyhow::Error) -> bool {
    exit_code(e) == EXIT_NUMERIC
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Valid => Split::Valid,
        SplitArg::Test => Split::Test,
    }
}

fn build_config(a: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for pair in &a.set {
        cfg.apply_pair(pair)?;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(m) = a.max_steps {
        cfg.train.max_steps = Some(m);
    }
    Ok(cfg)
}

fn apply_ablation(cfg: &mut RunConfig, ab: Ablation) {
    match ab {
        Ablation::EntityLn => cfg.model.use_entity_ln = false,
        Ablation::EntityDropout => cfg.model.use_entity_dropout = false,
        Ablation::RelationLn => cfg.model.use_relation_ln = false,
    }
}

fn fit_length(cfg: &mut RunConfig, graph: &KnowledgeGraph) {
    if cfg.auto_len {
        cfg.model.max_len = graph.required_len().max(3);
    }
}

pub fn load_check(a: LoadCheckArgs) -> Result<()> {
    let data = open_dataset(a.data.data.as_deref(), a.data.format.as_deref())?;
    let g = &data.graph;
    println!("dataset       {}", data.path.display());
    println!("format        {}", data.format);
    println!("entities      {}", g.n_entities());
    println!("relations     {}", g.n_relations());
    println!("statements    {}", g.len());
    let index = build_filter_index(g);
    let mut bad = 0usize;
    for split in Split::ALL {
        let z = g.split_len(split);
        let pairs = g.qualifier_pairs(split);
        let queries = build_queries(g, &index, split, true);
        bad += queries
            .iter()
            .filter(|q| q.filter_answers.binary_search(&q.gold).is_err())
            .count();
        if queries.len() != 2 * z + pairs {
            bail!(
                "{}: {} queries where 2Z + pairs = {}",
                split.as_str(),
                queries.len(),
                2 * z + pairs
            );
        }
        println!(
            "  {:<6} Z={:<8} qualifier pairs={:<8} queries={} (+{} aux)",
            split.as_str(),
            z,
            pairs,
            2 * z,
            pairs
        );
    }
    println!("qualified     {:.1}%", 100.0 * g.qualifier_ratio());
    println!("max pairs     {}", g.max_qualifiers());
    println!("sequence len  {}", g.required_len());
    println!("vocabulary    {}", g.vocabulary_fingerprint());
    println!(
        "checksum      {}",
        hytransformer::store::dataset_checksum(&data.path)?
    );
    if bad > 0 {
        bail!("{bad} queries have a gold entity missing from their filter set");
    }
    println!("ok");
    Ok(())
}

struct TrainOutcome {
    steps: u64,
    last_loss: Option<f64>,
    best: Option<(f64, u64)>,
    model: HyTransformer<f32>,
}

/// Trains into `out`, writing every artifact of a run except the manifest.
fn train_into(
    cfg: &RunConfig,
    graph: &KnowledgeGraph,
    out: &Path,
    resume: bool,
) -> Result<TrainOutcome> {
    fs::write(out.join("config.txt"), cfg.to_kv_text())?;
    let last_path = out.join("last.bin");
    let mut trainer = if resume {
        let ckpt = Checkpoint::<f32>::load(&last_path)?;
        Trainer::resume(graph, &ckpt, cfg.train.clone())?
    } else {
        let model = HyTransformer::<f32>::new(
            cfg.model.clone(),
            graph.n_entities(),
            graph.n_relations(),
            cfg.train.seed,
        )?;
        Trainer::new(graph, model, cfg.train.clone())?
    };
    let open = |name: &str| -> Result<BufWriter<File>> {
        let path = out.join(name);
        let f = OpenOptions::new()
            .create(true)
            .write(true)
            .append(resume)
            .truncate(!resume)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        Ok(BufWriter::new(f))
    };
    let mut log = open("train_log.jsonl")?;
    let mut curve = open("mrr_vs_time.csv")?;
    if !resume {
        writeln!(curve, "epoch,step,elapsed_s,mrr,h1,h10")?;
    }
    let mut io_error = None;
    let mut last_loss = None;
    let result = trainer.run(&mut |rec| {
        let mut write = || -> std::io::Result<()> {
            serde_json::to_writer(&mut log, rec)?;
            log.write_all(b"\n")?;
            match rec {
                LogRecord::Step { loss, .. } => last_loss = Some(*loss),
                LogRecord::Validation {
                    epoch,
                    step,
                    mrr,
                    h1,
                    h10,
                    elapsed_s,
                } => {
                    writeln!(
                        curve,
                        "{epoch},{step},{elapsed_s:.3},{mrr:.6},{h1:.6},{h10:.6}"
                    )?;
                    eprintln!("epoch {epoch:>4} step {step:>7}  valid MRR {mrr:.4}");
                }
                LogRecord::Header { .. } => {}
            }
            Ok(())
        };
        if let Err(e) = write() {
            io_error.get_or_insert(e);
        }
    });
    log.flush()?;
    curve.flush()?;
    trainer.checkpoint().save(&last_path)?;
    result?;
    if let Some(e) = io_error {
        return Err(e).context("writing the training log");
    }
    let best = trainer
        .best_checkpoint()
        .unwrap_or_else(|| trainer.checkpoint());
    best.save(&out.join("checkpoint.bin"))?;
    let steps = trainer.step();
    let best_score = trainer.best_score();
    let (last, best_model) = trainer.into_parts();
    Ok(TrainOutcome {
        steps,
        last_loss,
        best: best_score,
        model: best_model.map(|b| b.model).unwrap_or(last),
    })
}

fn record_outputs(manifest: &mut RunManifest, out: &Path) {
    for name in [
        "checkpoint.bin",
        "last.bin",
        "train_log.jsonl",
        "mrr_vs_time.csv",
        "config.txt",
    ] {
        manifest.outputs.insert(name.into(), out.join(name));
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let (mut cfg, data_arg, format, checksum) = match &a.from_manifest {
        Some(path) => {
            let m = RunManifest::load(path)?;
            let data = a.data.data.clone().unwrap_or(m.dataset);
            let format = a.data.format.clone().unwrap_or(m.dataset_format);
            (m.config, Some(data), Some(format), Some(m.dataset_checksum))
        }
        None => (
            build_config(&a.config)?,
            a.data.data.clone(),
            a.data.format.clone(),
            None,
        ),
    };
    if a.no_aux {
        cfg.train.use_aux_task = false;
    }
    for &ab in &a.ablate {
        apply_ablation(&mut cfg, ab);
    }
    let data = open_dataset(data_arg.as_deref(), format.as_deref())?;
    fit_length(&mut cfg, &data.graph);
    cfg.validate()?;
    print!("{}", cfg.to_kv_text());
    println!();

    let _lock = RunLock::acquire(&a.out)?;
    let mut manifest = RunManifest::new("train", &cfg, &data)?;
    if let Some(expected) = checksum {
        if expected != manifest.dataset_checksum {
            eprintln!("warning: dataset checksum differs from the manifest's");
        }
    }
    record_outputs(&mut manifest, &a.out);
    manifest.write(&a.out)?;
    match train_into(&cfg, &data.graph, &a.out, a.resume) {
        Ok(o) => {
            manifest.finish(&a.out, RunStatus::Completed, None)?;
            println!("steps         {}", o.steps);
            if let Some(l) = o.last_loss {
                println!("final loss    {l:.6}");
            }
            if let Some((mrr, epoch)) = o.best {
                println!("best valid    MRR {mrr:.4} at epoch {epoch}");
            }
            println!("run dir       {}", a.out.display());
            Ok(())
        }
        Err(e) => {
            let status = if is_divergence(&e) {
                RunStatus::Diverged
            } else {
                RunStatus::Failed
            };
            manifest.finish(&a.out, status, Some(format!("{e:#}")))?;
            Err(e)
        }
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let data = open_dataset(a.data.data.as_deref(), a.data.format.as_deref())?;
    let ckpt = Checkpoint::<f32>::load(&a.checkpoint)?;
    let opts = EvalOptions {
        tie_policy: a.tie_policy.parse()?,
        include_aux: a.include_aux,
        ..EvalOptions::default()
    };
    let report = evaluate_checkpoint(&ckpt, &data.graph, split_of(a.split), &opts)?;
    print!(
        "{}",
        report.to_table(a.breakdown == Some(Breakdown::Qualifiers))
    );
    let record = a.record.unwrap_or_else(|| {
        a.checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join("eval.jsonl")
    });
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&record)
        .with_context(|| format!("opening {}", record.display()))?;
    writeln!(f, "{}", report.to_json_line())?;
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let mut spec = SweepSpec::default();
    if !a.sweep.is_empty() {
        spec.axes.clear();
        for s in &a.sweep {
            spec.set_axis(s)?;
        }
    }
    let cfg = CostModelConfig {
        layers: a.layers,
        composition: a.composition.parse()?,
        reps: a.reps,
        seed: a.seed,
    };
    cfg.validate()?;
    let source = match &a.data.data {
        Some(_) => Some(open_dataset(a.data.data.as_deref(), a.data.format.as_deref())?.graph),
        None => None,
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
    let report = pool.install(|| {
        run_sweep::<f32>(&spec, &cfg, source.as_ref(), |r| {
            eprintln!(
                "{:<12} Z={:<7} d={:<5} N={:<7} median {:.6}s",
                r.method.as_str(),
                r.n_statements,
                r.d,
                r.n_entities,
                r.median_s
            )
        })
    })?;
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        fs::write(out, report.to_csv()).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

struct Variant {
    label: &'static str,
    dir: &'static str,
    ablation: Option<Ablation>,
    aux: bool,
}

const VARIANTS: [Variant; 5] = [
    Variant {
        label: "full",
        dir: "full",
        ablation: None,
        aux: true,
    },
    Variant {
        label: "-entity-LN",
        dir: "no-entity-ln",
        ablation: Some(Ablation::EntityLn),
        aux: true,
    },
    Variant {
        label: "-entity-dropout",
        dir: "no-entity-dropout",
        ablation: Some(Ablation::EntityDropout),
        aux: true,
    },
    Variant {
        label: "-relation-LN",
        dir: "no-relation-ln",
        ablation: Some(Ablation::RelationLn),
        aux: true,
    },
    Variant {
        label: "HT w/o aux",
        dir: "no-aux",
        ablation: None,
        aux: false,
    },
];

fn ablation_table(rows: &[(&str, RankReport)], split: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{split} split, filtered");
    let _ = writeln!(
        out,
        "{:<18} {:>7} {:>7} {:>7} {:>7}",
        "model", "MRR", "H@1", "H@3", "H@10"
    );
    for (label, r) in rows {
        let m = &r.overall;
        let _ = writeln!(
            out,
            "{:<18} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
            label, m.mrr, m.h1, m.h3, m.h10
        );
    }
    out
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let mut base = build_config(&a.config)?;
    let data = open_dataset(a.data.data.as_deref(), a.data.format.as_deref())?;
    fit_length(&mut base, &data.graph);
    base.validate()?;
    let split = split_of(a.split);
    if data.graph.split_len(split) == 0 {
        bail!("split '{}' has no statements", split.as_str());
    }
    print!("{}", base.to_kv_text());
    println!();

    let _lock = RunLock::acquire(&a.out)?;
    let mut manifest = RunManifest::new("ablate", &base, &data)?;
    for v in &VARIANTS {
        manifest.outputs.insert(v.label.into(), a.out.join(v.dir));
    }
    manifest
        .outputs
        .insert("table".into(), a.out.join("ablation.txt"));
    manifest
        .outputs
        .insert("csv".into(), a.out.join("ablation.csv"));
    manifest.write(&a.out)?;

    let mut rows = Vec::new();
    let mut run = || -> Result<()> {
        for v in &VARIANTS {
            let mut cfg = base.clone();
            if let Some(ab) = v.ablation {
                apply_ablation(&mut cfg, ab);
            }
            cfg.train.use_aux_task = v.aux;
            let dir = a.out.join(v.dir);
            fs::create_dir_all(&dir)?;
            eprintln!("== {}", v.label);
            let outcome = train_into(&cfg, &data.graph, &dir, false)
                .with_context(|| format!("variant {}", v.label))?;
            let report = evaluate(
                &outcome.model,
                &data.graph,
                split,
                &EvalOptions {
                    tie_policy: cfg.tie_policy,
                    ..EvalOptions::default()
                },
            )?;
            rows.push((v.label, report));
        }
        Ok(())
    };
    if let Err(e) = run() {
        let status = if is_divergence(&e) {
            RunStatus::Diverged
        } else {
            RunStatus::Failed
        };
        manifest.finish(&a.out, status, Some(format!("{e:#}")))?;
        return Err(e);
    }
    let table = ablation_table(&rows, split.as_str());
    print!("{table}");
    fs::write(a.out.join("ablation.txt"), &table)?;
    let mut csv = String::from("model,split,mrr,h1,h3,h10\n");
    for (label, r) in &rows {
        let m = &r.overall;
        let _ = writeln!(
            csv,
            "{label},{},{:.6},{:.6},{:.6},{:.6}",
            split.as_str(),
            m.mrr,
            m.h1,
            m.h3,
            m.h10
        );
    }
    fs::write(a.out.join("ablation.csv"), csv)?;
    manifest.finish(&a.out, RunStatus::Completed, None)
}

pub fn describe(a: DescribeArgs) -> Result<()> {
    let model = match &a.checkpoint {
        Some(path) => HyTransformer::from_checkpoint(&Checkpoint::<f32>::load(path)?)?,
        None => {
            let mut cfg = build_config(&a.config)?;
            let (n, m) = match (a.entities, a.relations) {
                (Some(n), Some(m)) => (n, m),
                (None, None) => {
                    let data = open_dataset(a.data.data.as_deref(), a.data.format.as_deref())?;
                    fit_length(&mut cfg, &data.graph);
                    (data.graph.n_entities(), data.graph.n_relations())
                }
                _ => return Err(anyhow!("--entities and --relations go together")),
            };
            cfg.validate()?;
            HyTransformer::<f32>::new(cfg.model, n, m, cfg.train.seed)?
        }
    };
    println!("{:<32} {:>14} {:>10}", "tensor", "shape", "params");
    for p in model.describe() {
        let shape: Vec<String> = p.shape.iter().map(|s| s.to_string()).collect();
        println!("{:<32} {:>14} {:>10}", p.name, shape.join("x"), p.count);
    }
    println!("{:<32} {:>14} {:>10}", "total", "", model.n_params());
    Ok(())
}
