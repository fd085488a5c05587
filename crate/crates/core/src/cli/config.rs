use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{ItemCode, SchemaConfig, ScreeningRules};
use crate::error::{Error, Result};
use crate::prevalence::DEFAULT_EXACT_CAP;
use crate::synth::SynthFile;

/// Where survey records come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: SchemaConfig,
    },
    /// Either a path to a [`SynthFile`] JSON or the same object inline.
    Synthetic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spec: Option<SynthFile>,
    },
}

impl Default for InputSpec {
    fn default() -> Self {
        InputSpec::Synthetic {
            path: None,
            spec: Some(SynthFile::default()),
        }
    }
}

/// `"all"` (every item surviving screening) or an explicit list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ItemSelection {
    Keyword(String),
    List(Vec<ItemCode>),
}

impl Default for ItemSelection {
    fn default() -> Self {
        ItemSelection::Keyword(ALL_ITEMS.into())
    }
}

const ALL_ITEMS: &str = "all";
const ALL_ITEMS_LONG: &str = "all-surviving-screening";

impl ItemSelection {
    pub fn explicit(&self) -> Option<&[ItemCode]> {
        match self {
            ItemSelection::List(v) => Some(v),
            ItemSelection::Keyword(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputSpec,
    pub items: ItemSelection,
    pub q_levels: Vec<f64>,
    pub repetitions: usize,
    pub alpha: f64,
    pub meta_alpha: f64,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub screening: ScreeningRules,
    pub exact_pmf_cap: usize,
    /// Fixed rejection rank; computed from the binomial tail when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub criterion_rank: Option<usize>,
    /// Write every repetition's household selection per item.
    pub audit_selections: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: InputSpec::default(),
            items: ItemSelection::default(),
            q_levels: vec![0.5, 0.4, 0.3],
            repetitions: 1000,
            alpha: 0.05,
            meta_alpha: 0.05,
            master_seed: 0,
            output_dir: PathBuf::from("out"),
            screening: ScreeningRules::default(),
            exact_pmf_cap: DEFAULT_EXACT_CAP,
            criterion_rank: None,
            audit_selections: false,
        }
    }
}

fn open_unit(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

/// Every broken invariant as `field: constraint`. Empty means valid.
pub fn validate_config(cfg: &RunConfig) -> Vec<String> {
    let mut v = Vec::new();
    if cfg.q_levels.is_empty() {
        v.push("q_levels: must not be empty".to_string());
    }
    for (i, q) in cfg.q_levels.iter().enumerate() {
        if !open_unit(*q) {
            v.push(format!("q_levels[{i}]: {q} must lie in (0, 1)"));
        }
    }
    if cfg.repetitions < 1 {
        v.push("repetitions: must be at least 1".to_string());
    }
    if !open_unit(cfg.alpha) {
        v.push(format!("alpha: {} must lie in (0, 1)", cfg.alpha));
    }
    if !open_unit(cfg.meta_alpha) {
        v.push(format!("meta_alpha: {} must lie in (0, 1)", cfg.meta_alpha));
    }
    match &cfg.items {
        ItemSelection::Keyword(k) if k != ALL_ITEMS && k != ALL_ITEMS_LONG => {
            v.push(format!("items: expected \"{ALL_ITEMS}\" or a list of item codes, got \"{k}\""))
        }
        ItemSelection::List(l) if l.is_empty() => v.push("items: list must not be empty".to_string()),
        _ => {}
    }
    if cfg.exact_pmf_cap < 1 {
        v.push("exact_pmf_cap: must be at least 1".to_string());
    }
    if cfg.criterion_rank == Some(0) {
        v.push("criterion_rank: must be at least 1".to_string());
    }
    if cfg.output_dir.as_os_str().is_empty() {
        v.push("output_dir: must not be empty".to_string());
    }
    v.extend(cfg.screening.violations().into_iter().map(|s| format!("screening.{s}")));
    match &cfg.input {
        InputSpec::Csv { path, .. } if path.as_os_str().is_empty() => {
            v.push("input.path: must not be empty".to_string())
        }
        InputSpec::Synthetic { path, spec } => match (path, spec) {
            (Some(_), Some(_)) => v.push("input: give either path or spec, not both".to_string()),
            (None, None) => v.push("input: synthetic input needs path or spec".to_string()),
            (None, Some(s)) => v.extend(s.config.violations().into_iter().map(|e| format!("input.spec.config.{e}"))),
            _ => {}
        },
        _ => {}
    }
    v
}

/// Reads a config file. Relative paths inside it resolve against the
/// file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let rebase = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    match &mut cfg.input {
        InputSpec::Csv { path, .. } => rebase(path),
        InputSpec::Synthetic { path: Some(p), .. } => rebase(p),
        InputSpec::Synthetic { .. } => {}
    }
    rebase(&mut cfg.output_dir);
    Ok(cfg)
}
