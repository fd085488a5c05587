use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{validate_config, InputSpec, RunConfig};
use crate::dataset::{load_csv, screen_items, write_csv, ItemCode, RejectedRow, ScreeningReport, SurveyDataset};
use crate::error::{Error, ErrorKind, Result};
use crate::prevalence::{estimate_fsu_probs, prevalence_report, write_prevalence_csv, write_table2_csv, PrevalenceResult};
use crate::sampling::{draw_thin_sample, RepetitionPlan};
use crate::seeding::derive_seed;
use crate::synth::{generate, GroundTruth, SynthFile};
use crate::testing::{repeated_ks_procedure, write_table3_csv, ProcedureOptions, RepeatedTestResult};

pub const SCREENING_JSON: &str = "screening.json";
pub const SCREENING_HISTOGRAMS_CSV: &str = "screening_histograms.csv";
pub const REJECTED_ROWS_CSV: &str = "rejected_rows.csv";
pub const PREVALENCE_JSON: &str = "prevalence.json";
pub const PREVALENCE_CSV: &str = "prevalence.csv";
pub const TABLE2_CSV: &str = "table2.csv";
pub const TABLE3_CSV: &str = "table3.csv";
pub const REPEATED_JSON: &str = "repeated.json";
pub const SELECTIONS_CSV: &str = "selections.csv";
pub const FAILURES_JSON: &str = "failures.json";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const ITEMS_DIR: &str = "items";

/// Tag for the synthetic-data seed, kept apart from the repetition streams.
const SYNTH_SEED_TAG: u64 = 0x5359_4e54;
const FORMAT_VERSION: u32 = 1;

/// Which stages after screening to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stages {
    pub prevalence: bool,
    pub analyze: bool,
    pub manifest: bool,
}

impl Stages {
    pub const ALL: Stages = Stages {
        prevalence: true,
        analyze: true,
        manifest: true,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub item: Option<ItemCode>,
    pub stage: String,
    pub kind: ErrorKind,
    pub message: String,
}

impl ItemFailure {
    fn new(item: Option<ItemCode>, stage: &str, e: &Error) -> Self {
        log::error!("item {item:?} failed at {stage}: {e}");
        Self {
            item,
            stage: stage.into(),
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub items: Vec<ItemCode>,
    pub results: Vec<RepeatedTestResult>,
    pub failures: Vec<ItemFailure>,
}

impl RunSummary {
    /// 0 when every item completed, otherwise the code of the first failure.
    pub fn exit_code(&self) -> i32 {
        self.failures.first().map_or(0, |f| f.kind.exit_code())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemPrevalence {
    pub item_code: ItemCode,
    pub n_fsu: usize,
    pub results: Vec<PrevalenceResult>,
}

pub struct LoadedInput {
    pub dataset: SurveyDataset,
    pub rejected: Option<Vec<RejectedRow>>,
    pub synthetic: Option<(u64, SynthFile, GroundTruth)>,
}

pub fn synthetic_seed(cfg: &RunConfig) -> u64 {
    derive_seed(cfg.master_seed, &[SYNTH_SEED_TAG])
}

pub fn load_input(cfg: &RunConfig) -> Result<LoadedInput> {
    match &cfg.input {
        InputSpec::Csv { path, schema } => {
            let outcome = load_csv(path, schema)?;
            if !outcome.rejected.is_empty() {
                log::warn!("{} rows rejected from {}", outcome.rejected.len(), path.display());
            }
            Ok(LoadedInput {
                dataset: outcome.dataset,
                rejected: Some(outcome.rejected),
                synthetic: None,
            })
        }
        InputSpec::Synthetic { path, spec } => {
            let file = match (path, spec) {
                (Some(p), None) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str::<SynthFile>(&text)
                        .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                (None, Some(s)) => s.clone(),
                _ => return Err(Error::Config("input: synthetic input needs exactly one of path, spec".into())),
            };
            let v = file.config.violations();
            if !v.is_empty() {
                return Err(Error::Config(v.join("; ")));
            }
            let seed = synthetic_seed(cfg);
            let truth = file.truth.resolve(&file.config, seed)?;
            let dataset = generate(&file.config, &truth, seed)?;
            Ok(LoadedInput {
                dataset,
                rejected: None,
                synthetic: Some((seed, file, truth)),
            })
        }
    }
}

/// Writes through a sibling temporary file and renames it into place, so
/// readers never see a partial file.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Inconsistent(format!("{}: {e}", path.display())))
}

pub fn item_dir(out: &Path, item: ItemCode) -> PathBuf {
    out.join(ITEMS_DIR).join(item.to_string())
}

/// Writes the synthetic dataset and its ground truth.
pub fn write_synthetic(cfg: &RunConfig) -> Result<PathBuf> {
    if !matches!(cfg.input, InputSpec::Synthetic { .. }) {
        return Err(Error::Config("input: synth needs a synthetic input".into()));
    }
    let loaded = load_input(cfg)?;
    let (seed, file, truth) = loaded.synthetic.expect("synthetic input");
    let out = &cfg.output_dir;
    let data = out.join("dataset.csv");
    write_atomic(&data, |w| write_csv(&loaded.dataset, w, &Default::default()))?;
    write_json(
        &out.join("truth.json"),
        &serde_json::json!({ "seed": seed, "config": file.config, "truth": truth }),
    )?;
    Ok(data)
}

fn select_items(
    cfg: &RunConfig,
    ds: &SurveyDataset,
    report: &ScreeningReport,
    failures: &mut Vec<ItemFailure>,
) -> Vec<ItemCode> {
    match cfg.items.explicit() {
        None => report.included(),
        Some(list) => {
            let mut items = Vec::new();
            for &item in list {
                if !ds.has_item(item) {
                    failures.push(ItemFailure::new(Some(item), "select", &Error::UnknownItem(item)));
                    continue;
                }
                if !report.included().contains(&item) {
                    log::warn!("item {item} was excluded by screening; analyzing it as requested");
                }
                if !items.contains(&item) {
                    items.push(item);
                }
            }
            items
        }
    }
}

fn write_selections(ds: &SurveyDataset, r: &RepeatedTestResult, path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["repetition", "seed", "fsu_id", "household_id"])?;
        for (rep, &seed) in r.seeds.iter().enumerate() {
            let a = draw_thin_sample(ds, r.item, seed)?;
            for (fsu, key) in a.selection() {
                csv.write_record([rep.to_string(), seed.to_string(), fsu.clone(), key.household_id.clone()])?;
            }
        }
        csv.flush().map_err(|e| Error::io(path, e))
    })
}

/// Lists regular files under `root` as sorted relative paths with sizes.
fn file_listing(root: &Path) -> Result<Vec<(String, u64)>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, u64)>) -> Result<()> {
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let path = entry.path();
            let meta = entry.metadata().map_err(|e| Error::io(&path, e))?;
            if meta.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).unwrap_or(&path);
                let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                out.push((rel, meta.len()));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.retain(|(p, _)| p != MANIFEST_JSON && !p.ends_with(".tmp"));
    out.sort();
    Ok(out)
}

/// Screening, then the requested later stages.
///
/// Per-item failures are collected rather than aborting; input and
/// configuration failures abort.
pub fn run_stages(cfg: &RunConfig, stages: Stages) -> Result<RunSummary> {
    let violations = validate_config(cfg);
    if !violations.is_empty() {
        return Err(Error::Config(violations.join("; ")));
    }
    let out = cfg.output_dir.as_path();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let loaded = load_input(cfg)?;
    let ds = &loaded.dataset;
    log::info!(
        "{} households, {} observations, {} FSUs",
        ds.households().len(),
        ds.observations().len(),
        ds.n_fsu()
    );
    if let Some(rejected) = &loaded.rejected {
        write_atomic(&out.join(REJECTED_ROWS_CSV), |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["line", "reason"])?;
            for r in rejected {
                csv.write_record([r.line.to_string(), r.reason.clone()])?;
            }
            csv.flush().map_err(|e| Error::io(REJECTED_ROWS_CSV, e))
        })?;
    }

    let report = screen_items(ds, &cfg.screening);
    write_json(&out.join(SCREENING_JSON), &report)?;
    write_atomic(&out.join(SCREENING_HISTOGRAMS_CSV), |w| report.write_histogram_csv(w))?;

    let mut failures = Vec::new();
    let items = select_items(cfg, ds, &report, &mut failures);

    if stages.prevalence {
        let mut rows = Vec::new();
        for &item in &items {
            let res = estimate_fsu_probs(ds, item)
                .and_then(|input| Ok((input.len(), prevalence_report(&input, &cfg.q_levels, cfg.exact_pmf_cap)?)));
            match res {
                Ok((n_fsu, results)) => rows.push(ItemPrevalence {
                    item_code: item,
                    n_fsu,
                    results,
                }),
                Err(e) => failures.push(ItemFailure::new(Some(item), "prevalence", &e)),
            }
        }
        write_prevalence_outputs(out, &rows, &cfg.q_levels)?;
    }

    let mut results = Vec::new();
    if stages.analyze {
        let opts = ProcedureOptions {
            alpha: cfg.alpha,
            meta_alpha: cfg.meta_alpha,
            criterion_rank: cfg.criterion_rank,
        };
        for &item in &items {
            let plan = RepetitionPlan {
                master_seed: cfg.master_seed,
                repetitions: cfg.repetitions,
                salt: item as u64,
            };
            log::info!("item {item}: {} repetitions", cfg.repetitions);
            match repeated_ks_procedure(ds, item, &plan, &opts) {
                Ok(r) => {
                    let dir = item_dir(out, item);
                    write_json(&dir.join(REPEATED_JSON), &r)?;
                    if cfg.audit_selections {
                        write_selections(ds, &r, &dir.join(SELECTIONS_CSV))?;
                    }
                    results.push(r);
                }
                Err(e) => failures.push(ItemFailure::new(Some(item), "analyze", &e)),
            }
        }
        write_atomic(&out.join(TABLE3_CSV), |w| write_table3_csv(&results, w))?;
    }

    write_json(&out.join(FAILURES_JSON), &failures)?;

    if stages.manifest {
        let mut echo = cfg.clone();
        // Outputs do not depend on where they are written.
        echo.output_dir = PathBuf::from(".");
        let files: Vec<_> = file_listing(out)?
            .into_iter()
            .map(|(path, bytes)| serde_json::json!({ "path": path, "bytes": bytes }))
            .collect();
        let manifest = serde_json::json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "format_version": FORMAT_VERSION,
            "master_seed": cfg.master_seed,
            "synthetic_seed": loaded.synthetic.as_ref().map(|s| s.0),
            "config": echo,
            "input": {
                "households": ds.households().len(),
                "observations": ds.observations().len(),
                "fsus": ds.n_fsu(),
                "rejected_rows": loaded.rejected.as_ref().map(Vec::len),
            },
            "items": items,
            "failures": failures.len(),
            "files": files,
        });
        write_json(&out.join(MANIFEST_JSON), &manifest)?;
    }

    Ok(RunSummary {
        items,
        results,
        failures,
    })
}

/// The whole pipeline with a manifest.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary> {
    run_stages(cfg, Stages::ALL)
}

fn write_prevalence_outputs(out: &Path, rows: &[ItemPrevalence], q_levels: &[f64]) -> Result<()> {
    let pairs: Vec<(ItemCode, Vec<PrevalenceResult>)> =
        rows.iter().map(|r| (r.item_code, r.results.clone())).collect();
    write_json(&out.join(PREVALENCE_JSON), rows)?;
    write_atomic(&out.join(PREVALENCE_CSV), |w| write_prevalence_csv(&pairs, w))?;
    write_atomic(&out.join(TABLE2_CSV), |w| write_table2_csv(&pairs, q_levels, w))
}

/// Rebuilds the summary tables from the JSON artifacts in `out`.
pub fn rebuild_reports(out: &Path) -> Result<()> {
    let prev = out.join(PREVALENCE_JSON);
    if prev.exists() {
        let rows: Vec<ItemPrevalence> = read_json(&prev)?;
        let q_levels: Vec<f64> = rows.first().map(|r| r.results.iter().map(|x| x.q).collect()).unwrap_or_default();
        write_prevalence_outputs(out, &rows, &q_levels)?;
    }
    let items = out.join(ITEMS_DIR);
    let mut results: Vec<RepeatedTestResult> = Vec::new();
    if items.is_dir() {
        for entry in std::fs::read_dir(&items).map_err(|e| Error::io(&items, e))? {
            let path = entry.map_err(|e| Error::io(&items, e))?.path().join(REPEATED_JSON);
            if path.is_file() {
                results.push(read_json(&path)?);
            }
        }
    }
    results.sort_by_key(|r| r.item);
    write_atomic(&out.join(TABLE3_CSV), |w| write_table3_csv(&results, w))
}
