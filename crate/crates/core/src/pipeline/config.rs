//! Declarative run configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plsr::PlsrOptions;
use crate::simkit::Normalization;
use crate::stats::{CorrelationKind, Sidedness};

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds every stochastic step; required when cross-validation is on.
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub jobs: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub inputs: Inputs,
    pub judgments: Vec<JudgmentSource>,
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub pruning: PruningConfig,
    #[serde(default)]
    pub plsr: PlsrOptions,
    #[serde(default)]
    pub stats: StatsConfig,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub embeddings: PathBuf,
    /// Annotation table and its domain map; probing runs only when both are set.
    pub annotations: Option<PathBuf>,
    pub domain_map: Option<PathBuf>,
}

/// One judgment file, holding ratings of one group on one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgmentSource {
    pub group: String,
    pub category: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub group: String,
    pub category: String,
    /// Output directory name; defaults to `{group}_{category}`.
    pub label: Option<String>,
}

impl TaskSpec {
    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| format!("{}_{}", self.group, self.category))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruningConfig {
    /// Run leave-one-word-out cross-validation of the pruning.
    pub cv: bool,
    pub random_draws: usize,
    pub refit_normalization: bool,
    /// Drop participants whose ratings are all equal instead of failing.
    pub drop_degenerate_participants: bool,
    pub normalization: Normalization,
    /// Top-activation words listed per retained feature.
    pub top_words: usize,
}

impl Default for PruningConfig {
    fn default() -> Self {
        Self {
            cv: true,
            random_draws: 100,
            refit_normalization: true,
            drop_degenerate_participants: true,
            normalization: Normalization::ZScore,
            top_words: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    #[default]
    Average,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub alpha: f64,
    pub sidedness: Sidedness,
    pub correlation: CorrelationKind,
    pub linkage: Linkage,
    /// Group whose accuracy a positive t favours; defaults to the first
    /// group name in sort order.
    pub group_a: Option<String>,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            sidedness: Sidedness::TwoSided,
            correlation: CorrelationKind::Pearson,
            linkage: Linkage::Average,
            group_a: None,
        }
    }
}

impl RunConfig {
    /// Parses a TOML document; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Validation(vec![e.to_string()]))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Validation(vec![format!("{}: {e}", path.display())]))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn probing_enabled(&self) -> bool {
        self.inputs.annotations.is_some() && self.inputs.domain_map.is_some()
    }

    pub fn judgment_source(&self, group: &str, category: &str) -> Option<&JudgmentSource> {
        self.judgments.iter().find(|j| j.group == group && j.category == category)
    }

    /// The configuration fields that influence results, serialized canonically.
    /// Output location and worker count are excluded.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.jobs = 0;
        serde_json::to_string(&c).expect("configuration serializes")
    }

    /// Labels of the group compared against the others in each category.
    pub fn reference_group(&self, groups: &BTreeSet<&str>) -> Option<String> {
        match &self.stats.group_a {
            Some(g) if groups.contains(g.as_str()) => Some(g.clone()),
            _ => groups.iter().next().map(|g| g.to_string()),
        }
    }

    /// Tasks indexed by category, then group.
    pub fn tasks_by_category(&self) -> BTreeMap<&str, BTreeMap<&str, &TaskSpec>> {
        let mut out: BTreeMap<&str, BTreeMap<&str, &TaskSpec>> = BTreeMap::new();
        for t in &self.tasks {
            out.entry(&t.category).or_default().insert(&t.group, t);
        }
        out
    }
}

fn valid_label(s: &str) -> bool {
    !s.is_empty()
        && s != "cross"
        && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !s.starts_with('.')
}

/// Checks paths, coverage and option ranges, collecting every problem.
pub fn validate(cfg: &RunConfig) -> Result<()> {
    let mut problems = Vec::new();
    let check_file = |what: &str, p: &Path, problems: &mut Vec<String>| {
        let full = cfg.resolve(p);
        if !full.is_file() {
            problems.push(format!("{what}: file `{}` does not exist", full.display()));
        }
    };

    check_file("inputs.embeddings", &cfg.inputs.embeddings, &mut problems);
    match (&cfg.inputs.annotations, &cfg.inputs.domain_map) {
        (Some(a), Some(m)) => {
            check_file("inputs.annotations", a, &mut problems);
            check_file("inputs.domain_map", m, &mut problems);
        }
        (None, None) => {}
        _ => problems.push("inputs: annotations and domain_map must be given together".into()),
    }

    let mut sources = BTreeSet::new();
    for j in &cfg.judgments {
        check_file(&format!("judgments[{}/{}]", j.group, j.category), &j.path, &mut problems);
        if !sources.insert((j.group.as_str(), j.category.as_str())) {
            problems.push(format!("judgments: group `{}` category `{}` listed twice", j.group, j.category));
        }
    }
    let categories: BTreeSet<&str> = cfg.judgments.iter().map(|j| j.category.as_str()).collect();
    let groups: BTreeSet<&str> = cfg.judgments.iter().map(|j| j.group.as_str()).collect();

    if cfg.tasks.is_empty() {
        problems.push("tasks: at least one task is required".into());
    }
    let mut labels = BTreeSet::new();
    let mut cells = BTreeSet::new();
    for t in &cfg.tasks {
        if !cells.insert((t.group.as_str(), t.category.as_str())) {
            problems.push(format!("tasks: group `{}` category `{}` listed twice", t.group, t.category));
        }
        if !categories.contains(t.category.as_str()) {
            problems.push(format!("tasks: category `{}` is not present in the judgments", t.category));
        } else if !groups.contains(t.group.as_str()) {
            problems.push(format!("tasks: group `{}` is not present in the judgments", t.group));
        } else if cfg.judgment_source(&t.group, &t.category).is_none() {
            problems.push(format!("tasks: no judgments for group `{}` on category `{}`", t.group, t.category));
        }
        let label = t.label();
        if !valid_label(&label) {
            problems.push(format!("tasks: label `{label}` is not a usable directory name"));
        }
        if !labels.insert(label.clone()) {
            problems.push(format!("tasks: label `{label}` is used twice"));
        }
    }

    let p = &cfg.pruning;
    if p.cv {
        if cfg.seed.is_none() {
            problems.push("seed: required because cross-validation draws random feature sets".into());
        }
        if p.random_draws == 0 {
            problems.push("pruning.random_draws: must be at least 1".into());
        }
    }

    let o = &cfg.plsr;
    if o.n_components == Some(0) {
        problems.push("plsr.n_components: must be at least 1".into());
    }
    if !(o.tolerance.is_finite() && o.tolerance > 0.0) {
        problems.push(format!("plsr.tolerance: {} is not a positive number", o.tolerance));
    }
    if o.max_iterations == 0 {
        problems.push("plsr.max_iterations: must be at least 1".into());
    }

    let s = &cfg.stats;
    if !(s.alpha > 0.0 && s.alpha < 1.0) {
        problems.push(format!("stats.alpha: {} is outside (0, 1)", s.alpha));
    }
    if let Some(g) = &s.group_a {
        if !cfg.tasks.iter().any(|t| &t.group == g) {
            problems.push(format!("stats.group_a: group `{g}` has no task"));
        }
    }

    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(problems))
    }
}
