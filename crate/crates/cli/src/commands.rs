use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mdsgnn::graphdata::{corrupt as corrupt_graph, load_incomplete, save_dataset, sbm_benchmark, SbmParams};
use mdsgnn::training::{
    self, fit, gradient_suite, run_seeds_with, save_checkpoint, write_records, Drop, Method, Record, RunMetrics,
    RunRecord, SeedSummary, SummaryRecord, SweepAxis, SweepRecord, TrainConfig, GRAD_TOLERANCE,
};
use mdsgnn::{Error, Result};

use crate::{SeedArgs, TrainArgs};

/// Worker threads for multi-seed commands, from `MDSGNN_THREADS` (default 1).
fn threads() -> Result<usize> {
    match std::env::var("MDSGNN_THREADS") {
        Err(_) => Ok(1),
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| Error::Config(format!("MDSGNN_THREADS must be a positive integer, got '{s}'"))),
    }
}

fn load_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            TrainConfig::parse(&text)?
        }
        None => TrainConfig::default(),
    };
    let mut bad = Vec::new();
    for kv in &args.overrides {
        match kv.split_once('=') {
            Some((k, v)) => {
                if let Err(e) = cfg.set(k.trim(), v.trim()) {
                    bad.push(match e {
                        Error::Config(msg) => msg,
                        other => other.to_string(),
                    });
                }
            }
            None => bad.push(format!("--set {kv}: expected KEY=VALUE")),
        }
    }
    if !bad.is_empty() {
        return Err(Error::Config(bad.join("; ")));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dataset_name(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn seed_list(s: &SeedArgs) -> Result<Vec<u64>> {
    if s.seeds == 0 {
        return Err(Error::InvalidArgument("--seeds must be at least 1".into()));
    }
    Ok((0..s.seeds).map(|i| s.seed + i).collect())
}

fn run_record(dataset: &str, method: Method, tag: &str, cfg: &TrainConfig, m: &RunMetrics) -> Record {
    let config = TrainConfig {
        seed: m.seed,
        ..cfg.clone()
    }
    .pairs()
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    Record::Run(RunRecord {
        dataset: dataset.into(),
        method: method.name().into(),
        tag: tag.into(),
        seed: m.seed,
        config,
        best_epoch: m.best_epoch,
        val_acc: m.val_acc,
        test_acc: m.test_acc,
        epochs: m.epochs.clone(),
    })
}

fn summary_record(dataset: &str, s: &SeedSummary) -> Record {
    Record::Summary(SummaryRecord {
        dataset: dataset.into(),
        method: s.method.name().into(),
        tag: s.tag.clone(),
        seeds: s.seeds(),
        test_accs: s.test_accs(),
        mean: s.mean,
        std: s.std,
    })
}

/// Wall-clock times live apart from the metrics so those stay reproducible.
fn timing_table<'a>(rows: impl IntoIterator<Item = (&'a str, &'a RunMetrics)>) -> String {
    let mut out = String::from("tag\tseed\tseconds\n");
    for (tag, m) in rows {
        let _ = writeln!(out, "{tag}\t{}\t{:.3}", m.seed, m.wall_seconds);
    }
    out
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    fs::write(path, body).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn print_summary(s: &SeedSummary) {
    let accs: Vec<String> = s.test_accs().iter().map(|a| format!("{a:.4}")).collect();
    println!(
        "{} [{}]: {:.4} ± {:.4} over seeds ({})",
        s.method.name(),
        s.tag,
        s.mean,
        s.std,
        accs.join(", ")
    );
}

fn write_summary(args: &TrainArgs, cfg: &TrainConfig, s: &SeedSummary, table_name: &str) -> Result<()> {
    let dataset = dataset_name(&args.data);
    let mut records: Vec<Record> = s
        .runs
        .iter()
        .map(|m| run_record(&dataset, s.method, &s.tag, cfg, m))
        .collect();
    records.push(summary_record(&dataset, s));
    write_records(&args.out.join("metrics.jsonl"), &records)?;
    write_text(
        &args.out.join(table_name),
        &format!("variant\tmean\tstd\n{}\t{}\t{}\n", s.tag, s.mean, s.std),
    )?;
    write_text(
        &args.out.join("timing.tsv"),
        &timing_table(s.runs.iter().map(|m| (s.tag.as_str(), m))),
    )
}

pub fn corrupt(input: &Path, out: &Path, feature_missing: f64, edge_missing: f64, seed: u64) -> Result<()> {
    let g = load_incomplete(input)?;
    let c = corrupt_graph(&g, feature_missing, edge_missing, seed)?;
    let masked = c.mask().missing_count() - g.mask().missing_count();
    let dropped = g.graph().edge_count() - c.graph().edge_count();
    let provenance = vec![
        "corrupted by mdsgnn".to_string(),
        format!("source: {}", dataset_name(input)),
        format!("feature_missing={feature_missing} edge_missing={edge_missing} seed={seed}"),
    ];
    mdsgnn::graphdata::save_incomplete(&c, out, &provenance)?;
    println!(
        "masked {masked} of {} nodes, dropped {dropped} of {} edges",
        g.graph().num_nodes(),
        g.graph().edge_count()
    );
    Ok(())
}

pub fn train(args: &TrainArgs, seed: u64) -> Result<()> {
    let base = load_config(args)?;
    let cfg = TrainConfig { seed, ..base };
    let g = load_incomplete(&args.data)?;
    let g = training::prepare(&g, &cfg, seed)?;
    let (state, m) = fit(&g, &cfg)?;
    let dataset = dataset_name(&args.data);
    write_records(
        &args.out.join("metrics.jsonl"),
        &[run_record(&dataset, Method::MdsGnn, "full", &cfg, &m)],
    )?;
    save_checkpoint(&args.out.join("model.bin"), &state.model)?;
    write_text(&args.out.join("config.txt"), &cfg.render())?;
    write_text(&args.out.join("timing.tsv"), &timing_table([("full", &m)]))?;
    println!(
        "seed {seed}: best validation {:.4} at epoch {}, test {:.4}",
        m.val_acc, m.best_epoch, m.test_acc
    );
    Ok(())
}

pub fn run(args: &TrainArgs, seeds: &SeedArgs, method: &str) -> Result<()> {
    let method = match method {
        "mdsgnn" => Method::MdsGnn,
        "gcn" => Method::Gcn,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown method '{other}' (mdsgnn, gcn)"
            )))
        }
    };
    let cfg = load_config(args)?;
    let g = load_incomplete(&args.data)?;
    let s = run_seeds_with(method, &g, &cfg, &seed_list(seeds)?, threads()?, method.name())?;
    write_summary(args, &cfg, &s, "summary.tsv")?;
    print_summary(&s);
    Ok(())
}

pub fn ablate(args: &TrainArgs, seeds: &SeedArgs, drop: &str) -> Result<()> {
    let drop: Drop = drop.parse()?;
    let cfg = load_config(args)?;
    let g = load_incomplete(&args.data)?;
    let s = training::ablate(&g, &cfg, drop, &seed_list(seeds)?, threads()?)?;
    write_summary(args, &drop.apply(&cfg), &s, "ablation.tsv")?;
    print_summary(&s);
    Ok(())
}

fn parse_values(s: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = s
        .split(',')
        .map(|v| {
            let v = v.trim();
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::InvalidArgument(format!("bad sweep value '{v}'")))
        })
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(Error::InvalidArgument("--values is empty".into()));
    }
    Ok(values)
}

pub fn sweep(args: &TrainArgs, seeds: &SeedArgs, axis: &str, values: &str) -> Result<()> {
    let axis: SweepAxis = axis.parse()?;
    let values = parse_values(values)?;
    let cfg = load_config(args)?;
    let g = load_incomplete(&args.data)?;
    let table = training::sweep(&g, &cfg, axis, &values, &seed_list(seeds)?, threads()?)?;
    let dataset = dataset_name(&args.data);
    let mut records = Vec::new();
    for (v, s) in &table.rows {
        let point = axis.apply(&cfg, *v)?;
        records.extend(s.runs.iter().map(|m| run_record(&dataset, s.method, &s.tag, &point, m)));
        records.push(Record::Sweep(SweepRecord {
            dataset: dataset.clone(),
            method: s.method.name().into(),
            axis: axis.name().into(),
            value: *v,
            seeds: s.seeds(),
            test_accs: s.test_accs(),
            mean: s.mean,
            std: s.std,
        }));
    }
    write_records(&args.out.join("metrics.jsonl"), &records)?;
    write_text(&args.out.join("sweep.tsv"), &table.to_tsv())?;
    write_text(
        &args.out.join("timing.tsv"),
        &timing_table(
            table
                .rows
                .iter()
                .flat_map(|(_, s)| s.runs.iter().map(move |m| (s.tag.as_str(), m))),
        ),
    )?;
    print!("{}", table.to_tsv());
    Ok(())
}

pub fn gradcheck() -> Result<()> {
    let results = gradient_suite()?;
    let mut failed = Vec::new();
    for (name, err) in &results {
        let ok = *err < GRAD_TOLERANCE;
        println!("{name:<14} {err:.3e} {}", if ok { "ok" } else { "FAIL" });
        if !ok {
            failed.push(*name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}

pub fn synth(out: &Path, seed: u64, nodes_per_class: usize, classes: usize) -> Result<()> {
    let p = SbmParams {
        classes,
        nodes_per_class,
        ..SbmParams::default()
    };
    let g = sbm_benchmark(&p, seed)?;
    save_dataset(&g, out)?;
    println!(
        "wrote {} nodes, {} edges to {}",
        g.num_nodes(),
        g.edge_count(),
        out.display()
    );
    Ok(())
}
