use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, Context};
use lls_core::dataset::{DomainDataset, Split};
use lls_core::discriminator::{domain_accuracy, train_on_views};
use lls_core::eval::{
    evaluate, run_blind, sweep as run_sweep, write_jsonl, write_predictions_csv, write_summary_csv, Mode,
    PipelineRun,
};
use lls_core::selftest::run_selftest;
use lls_core::synthgen::{make_block_instance, ProblemInstance, TruthDocument};
use lls_core::Error;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

pub enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
    PartialSweep { failed: usize, total: usize },
    Checks { failed: usize },
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) | Failure::Checks { .. } => 2,
            Failure::PartialSweep { .. } => 3,
        }
    }
}

type CmdResult = Result<(), Failure>;

/// Library errors caused by bad parameters or input files count as
/// validation failures; the rest are runtime failures.
fn classify(e: Error) -> Failure {
    if matches!(e, Error::InvalidParams(_) | Error::InvalidInput(_)) {
        Failure::Validation(e.into())
    } else {
        Failure::Runtime(e.into())
    }
}

trait Classify<T> {
    fn validation(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn validation(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Validation(e.into()))
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn core<T>(r: lls_core::Result<T>) -> Result<T, Failure> {
    r.map_err(classify)
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .runtime()?;
    let path = out.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .runtime()
}

fn write_text(out: &Path, name: &str, text: &str) -> CmdResult {
    let mut w = create(out, name)?;
    w.write_all(text.as_bytes()).runtime()?;
    w.flush().runtime()
}

/// Pretty JSON document with the resolved config and seed embedded.
fn write_document<S: Serialize>(out: &Path, name: &str, cfg: &RunConfig, key: &str, body: &S) -> CmdResult {
    let doc = json!({
        "config": cfg,
        "seed": cfg.params.seed,
        key: body,
    });
    let mut text = serde_json::to_string_pretty(&doc).runtime()?;
    text.push('\n');
    write_text(out, name, &text)
}

fn write_config(out: &Path, cfg: &RunConfig) -> CmdResult {
    write_text(out, "config.json", &(cfg.to_json() + "\n"))
}

fn read_dataset(path: &Path) -> Result<DomainDataset, Failure> {
    let file = File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .validation()?;
    DomainDataset::read_csv(std::io::BufReader::new(file), None)
        .with_context(|| format!("reading {}", path.display()))
        .validation()
}

pub fn generate(cfg: &RunConfig, out: &Path) -> CmdResult {
    core(cfg.params.validate_generation())?;
    let inst = core(make_block_instance(&cfg.params, &cfg.instance))?;
    let data = core(inst.dataset())?;
    let mut w = create(out, "dataset.csv")?;
    core(data.without_labels().write_csv(&mut w))?;
    w.flush().runtime()?;
    write_document(out, "truth.json", cfg, "truth", &inst.truth_document())?;
    write_config(out, cfg)?;
    eprintln!(
        "generated {} records over {} domains into {}",
        data.len(),
        data.num_domains(),
        out.display()
    );
    Ok(())
}

pub fn train_disc(cfg: &RunConfig, data: &Path, out: &Path) -> CmdResult {
    let dataset = read_dataset(data)?.without_labels();
    let r = dataset.num_domains();
    let train = dataset.observed(&[Split::Train]);
    let valid = dataset.observed(&[Split::Valid]);
    let test = dataset.observed(&[Split::Test]);
    let (model, curves) = core(train_on_views(&train, &valid, r, &cfg.pipeline.train))?;
    write_document(out, "model.json", cfg, "model", &model)?;
    let mut w = create(out, "loss.csv")?;
    core(curves.write_csv(&mut w))?;
    w.flush().runtime()?;
    write_config(out, cfg)?;
    let acc = if test.is_empty() {
        None
    } else {
        Some(core(domain_accuracy(&model, &test.features, &test.domains))?)
    };
    println!(
        "best epoch {}, validation loss {:.6}{}",
        curves.best_epoch,
        curves.valid[curves.best_epoch],
        acc.map_or(String::new(), |a| format!(", test domain accuracy {a:.4}"))
    );
    Ok(())
}

fn load_truth(path: &Path) -> Result<TruthDocument, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .validation()?;
    let doc: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .validation()?;
    let truth = doc
        .get("truth")
        .cloned()
        .ok_or_else(|| anyhow!("{}: missing `truth` object", path.display()))
        .validation()?;
    serde_json::from_value(truth)
        .with_context(|| format!("parsing {}", path.display()))
        .validation()
}

pub fn run(cfg: &RunConfig, data: &Path, out: &Path, truth_path: Option<&Path>) -> CmdResult {
    // The pipeline never sees the label column, whatever the file holds.
    let dataset = read_dataset(data)?.without_labels();
    let mut params = cfg.params.clone();
    params.r = dataset.num_domains();
    core(params.validate())?;

    let truth = match truth_path {
        Some(p) => Some(load_truth(p)?),
        None => None,
    };
    if let Some(t) = &truth {
        if t.k != params.k || t.r != params.r {
            return Err(Failure::Validation(anyhow!(
                "ground truth has k={}, r={} but the run uses k={}, r={}",
                t.k,
                t.r,
                params.k,
                params.r
            )));
        }
    }
    let instance = match &truth {
        Some(t) => Some(core(ProblemInstance::from_truth_document(t, None))?),
        None => None,
    };
    let oracle = match (cfg.mode, &instance) {
        (Mode::Oracle, Some(inst)) => Some(core(inst.oracle())?),
        (Mode::Oracle, None) => {
            return Err(Failure::Validation(anyhow!(
                "oracle mode uses the generating densities from the ground-truth file; pass --with-metrics"
            )))
        }
        _ => None,
    };

    let run = core(run_blind(&dataset, &params, oracle.as_ref(), cfg.mode, &cfg.pipeline))?;
    let t = run.timings;
    eprintln!(
        "stages (s): discriminate {:.3}, discretize {:.3}, factorize {:.3}, adjust {:.3}",
        t.discriminate, t.discretize, t.factorize, t.adjust
    );

    let metrics = match (&truth, &instance) {
        (Some(t), Some(inst)) => {
            let labels = t
                .labels
                .as_ref()
                .ok_or_else(|| anyhow!("ground-truth file has no labels"))
                .validation()?;
            if labels.len() != dataset.len() {
                return Err(Failure::Validation(anyhow!(
                    "ground truth has {} labels for {} records",
                    labels.len(),
                    dataset.len()
                )));
            }
            let test_labels: Vec<usize> = run.predictions.iter().map(|p| labels[p.index]).collect();
            let report = core(evaluate(&run, &test_labels, &inst.q_yd))?;
            println!("accuracy {:.4}, q_yd error {:.6}", report.accuracy, report.q_yd_error);
            serde_json::to_value(&report).runtime()?
        }
        _ => {
            println!("no labels: predictions written, metrics omitted");
            Value::String("no labels".into())
        }
    };
    write_outputs(cfg, out, &run, metrics)
}

fn write_outputs(cfg: &RunConfig, out: &Path, run: &PipelineRun, metrics: Value) -> CmdResult {
    let summary = json!({
        "mode": run.mode,
        "k": run.k,
        "m": run.m,
        "n_test": run.predictions.len(),
        "q_yd_hat": run.q_yd_hat(),
        "metrics": metrics,
    });
    write_document(out, "report.json", cfg, "report", &summary)?;
    let mut w = create(out, "predictions.csv")?;
    write_predictions_csv(&mut w, run.k, &run.predictions).runtime()?;
    w.flush().runtime()?;
    let factors = json!({
        "factorization": run.factorization.to_json(),
        "counts": run.counts,
    });
    write_document(out, "factors.json", cfg, "factors", &factors)?;
    if let Some((model, curves)) = &run.discriminator {
        write_document(out, "model.json", cfg, "model", model)?;
        let mut w = create(out, "loss.csv")?;
        core(curves.write_csv(&mut w))?;
        w.flush().runtime()?;
    }
    write_config(out, cfg)
}

pub fn sweep(cfg: &RunConfig, out: &Path, jobs: Option<usize>) -> CmdResult {
    let grid = cfg
        .grid
        .as_ref()
        .ok_or_else(|| anyhow!("sweep needs a `grid` section in the config"))
        .validation()?;
    if jobs == Some(0) {
        return Err(Failure::Validation(anyhow!("--jobs must be at least 1")));
    }
    let (rows, summary) = core(run_sweep(&cfg.params, &cfg.instance, &cfg.pipeline, grid, jobs))?;
    let mut w = create(out, "sweep.jsonl")?;
    write_jsonl(&mut w, &rows).runtime()?;
    w.flush().runtime()?;
    let mut w = create(out, "summary.csv")?;
    write_summary_csv(&mut w, &summary).runtime()?;
    w.flush().runtime()?;
    write_config(out, cfg)?;
    for row in &summary {
        println!(
            "alpha {} kappa {} r {} m {} {}: accuracy {:.4} +- {:.4} ({} ok, {} failed)",
            row.alpha, row.kappa, row.r, row.m, row.mode, row.acc_mean, row.acc_std, row.completed, row.failed
        );
    }
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        for row in rows.iter().filter(|r| r.error.is_some()) {
            eprintln!("row cell={} seed={}: {}", row.cell, row.seed, row.error.as_deref().unwrap_or(""));
        }
        return Err(Failure::PartialSweep {
            failed,
            total: rows.len(),
        });
    }
    Ok(())
}

pub fn selftest(cfg: &RunConfig, out: &Path) -> CmdResult {
    let start = std::time::Instant::now();
    let results = run_selftest(&cfg.selftest);
    for c in &results {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("{:.2}s", start.elapsed().as_secs_f64());
    write_document(out, "selftest.json", cfg, "checks", &results)?;
    let failed = results.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure::Checks { failed });
    }
    Ok(())
}
