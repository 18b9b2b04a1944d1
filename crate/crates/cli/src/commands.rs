use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use foodsec_core::allocator::{build_problem, solve, AllocationResult};
use foodsec_core::data::split_dataset;
use foodsec_core::fairness::demographic_parity_difference;
use foodsec_core::features::TextProvider;
use foodsec_core::metrics::{pr_csv, roc_csv};
use foodsec_core::model::Arch;
use foodsec_core::pipeline::{evaluate, scored_candidates, train, EvaluationReport, ModelArtifact};
use foodsec_core::synth::{generate, generate_with_lexicon, hashed_embeddings, Lexicon};
use foodsec_core::text::{load_embeddings, EmbeddingTable, Stopwords};
use foodsec_core::{json, Dataset, Error, Group, Result};
use foodsec_service::AppState;

use crate::config::RunConfig;

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn external_embeddings(cfg: &RunConfig) -> Result<Option<Arc<EmbeddingTable>>> {
    match cfg.features.text {
        TextProvider::External { .. } => Ok(Some(Arc::new(load_embeddings(&cfg.embeddings_path())?))),
        _ => Ok(None),
    }
}

fn load_model(cfg: &RunConfig) -> Result<ModelArtifact> {
    let artifact = ModelArtifact::load(&cfg.model_path())?;
    match external_embeddings(cfg)? {
        Some(t) => artifact.with_embeddings(t),
        None => Ok(artifact),
    }
}

fn split(cfg: &RunConfig, ds: &Dataset) -> Result<(Dataset, Dataset)> {
    split_dataset(ds, cfg.split.train_fraction, cfg.seed, cfg.split.stratify)
}

#[derive(Serialize)]
struct GenerateSummary {
    data: String,
    n: usize,
    positive_rate: Option<f64>,
    rural: usize,
    urban: usize,
    embeddings: Option<String>,
}

pub fn generate_cmd(cfg: &RunConfig) -> Result<()> {
    let ds = match &cfg.paths.lexicon {
        Some(p) => generate_with_lexicon(&cfg.synth, &Lexicon::load(p)?)?,
        None => generate(&cfg.synth)?,
    };
    let data = cfg.data_path();
    if let Some(dir) = data.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    ds.save(&data)?;
    let embeddings = match cfg.features.text {
        TextProvider::External { dim } => {
            let stopwords = match &cfg.features.stopwords_path {
                Some(p) => Stopwords::from_file(p)?,
                None => Stopwords::default(),
            };
            let table = hashed_embeddings(&ds, dim, cfg.seed, &stopwords)?;
            let path = cfg.embeddings_path();
            write(&path, &table.to_jsonl()?)?;
            Some(path.display().to_string())
        }
        _ => None,
    };
    let rural = ds.records.iter().filter(|r| r.group == Group::Rural).count();
    print_json(&GenerateSummary {
        data: data.display().to_string(),
        n: ds.len(),
        positive_rate: ds.positive_rate(),
        rural,
        urban: ds.len() - rural,
        embeddings,
    })
}

#[derive(Serialize)]
struct TrainSummary {
    model: String,
    history: String,
    arch: String,
    lambda: f64,
    epochs: usize,
    final_loss_total: f64,
    train_accuracy: f64,
    /// Hard-decision parity gap at the default threshold on the training split.
    train_parity_gap: f64,
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let ds = Dataset::load(&cfg.data_path())?;
    let (tr, _) = split(cfg, &ds)?;
    let (artifact, history) = train(&tr, &cfg.features, &cfg.train, external_embeddings(cfg)?)?;
    let model = cfg.model_path();
    let hist = model.with_file_name("history.csv");
    write(&model, &artifact.to_json()?)?;
    write(&hist, &history.to_csv())?;

    let scores = artifact.score_all(&tr.records)?;
    let groups = tr.groups();
    let decisions: Vec<u8> = scores.iter().map(|&s| (s >= 0.5) as u8).collect();
    let last = history.epochs.last().ok_or(Error::Empty("training history"))?;
    print_json(&TrainSummary {
        model: model.display().to_string(),
        history: hist.display().to_string(),
        arch: artifact.params.arch.name().into(),
        lambda: cfg.train.lambda,
        epochs: history.epochs.len(),
        final_loss_total: last.loss_total,
        train_accuracy: last.train_accuracy,
        train_parity_gap: demographic_parity_difference(&decisions, &groups)?,
    })
}

fn write_report(report: &EvaluationReport, dir: &Path, suffix: &str) -> Result<()> {
    write(&dir.join(format!("report{suffix}.json")), &report.to_json()?)?;
    write(&dir.join(format!("roc{suffix}.csv")), &roc_csv(&report.roc))?;
    write(&dir.join(format!("pr{suffix}.csv")), &pr_csv(&report.pr))
}

/// Without `archs`, evaluate the saved model on the held-out split. With
/// `archs`, train one model per architecture on the training split and write
/// one report per architecture.
pub fn evaluate_cmd(cfg: &RunConfig, archs: &[Arch]) -> Result<()> {
    let ds = Dataset::load(&cfg.data_path())?;
    let (tr, ev) = split(cfg, &ds)?;
    let target = cfg.calibration.target_gap;
    let report_path = cfg.report_path();
    let dir = report_path.parent().unwrap_or(Path::new("."));
    if archs.is_empty() {
        let report = evaluate(&load_model(cfg)?, &ev, target)?;
        write(&report_path, &report.to_json()?)?;
        write(&dir.join("roc.csv"), &roc_csv(&report.roc))?;
        write(&dir.join("pr.csv"), &pr_csv(&report.pr))?;
        return print_json(&Headline::from(&report));
    }
    let embeddings = external_embeddings(cfg)?;
    let mut lines = Vec::new();
    for &arch in archs {
        let tc = foodsec_core::model::TrainConfig {
            arch,
            ..cfg.train.clone()
        };
        let (artifact, _) = train(&tr, &cfg.features, &tc, embeddings.clone())?;
        let report = evaluate(&artifact, &ev, target)?;
        write_report(&report, dir, &format!("-{}", arch.name()))?;
        lines.push(Headline::from(&report));
    }
    print_json(&lines)
}

#[derive(Serialize)]
struct Headline {
    arch: String,
    n: usize,
    accuracy: f64,
    f1: f64,
    roc_auc: f64,
    average_precision: f64,
    parity_gap: f64,
    calibrated_parity_gap: Option<f64>,
}

impl From<&EvaluationReport> for Headline {
    fn from(r: &EvaluationReport) -> Self {
        Headline {
            arch: r.arch.clone(),
            n: r.n,
            accuracy: r.decisions.accuracy,
            f1: r.decisions.f1,
            roc_auc: r.roc_auc,
            average_precision: r.average_precision,
            parity_gap: r.decisions.parity_gap,
            calibrated_parity_gap: r.calibrated.as_ref().map(|c| c.parity_gap),
        }
    }
}

/// Allocate over every record in the data file, with the model score as the
/// expected utility.
pub fn allocate_cmd(cfg: &RunConfig) -> Result<AllocationResult> {
    let artifact = load_model(cfg)?;
    let ds = Dataset::load(&cfg.data_path())?;
    let a = &cfg.allocation;
    let candidates = scored_candidates(&artifact, &ds)?;
    let problem = build_problem(
        &candidates,
        a.budget,
        a.floors.clone(),
        a.utility_mode,
        a.cost_resolution,
    )?;
    let result = solve(&problem, a.solver)?;
    write(
        &cfg.out.join("allocation.json"),
        &(json::to_string_pretty(&result)? + "\n"),
    )?;
    print_json(&result)?;
    Ok(result)
}

pub fn serve_cmd(cfg: &RunConfig) -> Result<()> {
    let report = match &cfg.paths.report {
        Some(p) => Some(p.clone()),
        None => Some(cfg.report_path()).filter(|p| p.exists()),
    };
    let embeddings = match cfg.features.text {
        TextProvider::External { .. } => Some(cfg.embeddings_path()),
        _ => None,
    };
    let state = AppState::load(
        &cfg.model_path(),
        &cfg.data_path(),
        report.as_deref(),
        embeddings.as_deref(),
    )?;
    log::info!("loaded {} records", state.len());
    let addr: SocketAddr = format!("{}:{}", cfg.service.bind, cfg.service.port)
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("service.bind/port: {e}")))?;
    let app = foodsec_service::router(Arc::new(state), cfg.service.cors_origin.as_deref());
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
    rt.block_on(foodsec_service::serve(addr, app))
        .map_err(|e| Error::io(addr.to_string(), e))
}
