//! End-to-end runs driven by a [`RunConfig`].
//!
//! Output layout: one directory per task (named by its label) holding the
//! group similarity matrix, retained set, cross-validation folds, stacked
//! predictions and accuracy profiles; `cross/` holds everything computed
//! across tasks; `manifest.json` records the configuration hash and the
//! checksum of every file.

mod config;
mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

pub use config::{
    validate, Inputs, JudgmentSource, Linkage, PruningConfig, RunConfig, StatsConfig, TaskSpec,
};
pub use manifest::{checksum_tree, file_sha256, sha256_hex, Manifest, MANIFEST_FILE};

use crate::corpus_io::{parse_annotations, parse_embeddings, parse_judgments, AnnotationTable, EmbeddingTable, JudgmentDataset};
use crate::error::{Error, Result};
use crate::numfmt;
use crate::plsr::{condense_domains, domain_map_of, loocv_stack, PredictionMatrix};
use crate::pruning::{prune, prune_cv, CvOptions, PruneCvReport, RetainedFeatureSet};
use crate::setanalysis::{compression_ratio, frequency_histogram, top_activation_words, write_histogram, DiceMatrix};
use crate::simkit::group_similarity_with;
use crate::stats::{accuracy_profile, cluster_profiles, discrepancy_test, AccuracyProfile, DiscrepancyOptions};

pub const CROSS_DIR: &str = "cross";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Group similarity, pruning, cross-validation.
    Prune,
    /// Leave-one-out probing from retained features.
    Probe,
    /// Accuracy profiles, group discrepancies, clustering.
    Stats,
    /// Cross-task tables regenerated from stored artifacts.
    Report,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Prune, Stage::Probe, Stage::Stats, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prune => "prune",
            Stage::Probe => "probe",
            Stage::Stats => "stats",
            Stage::Report => "report",
        }
    }

    fn needs_annotations(self) -> bool {
        matches!(self, Stage::Probe | Stage::Stats)
    }
}

/// Runs every stage.
pub fn run(cfg: &RunConfig) -> Result<Manifest> {
    execute(cfg, &Stage::ALL, false)
}

/// Runs a single stage against artifacts already in the output directory.
pub fn run_stage(cfg: &RunConfig, stage: Stage) -> Result<Manifest> {
    execute(cfg, &[stage], true)
}

fn execute(cfg: &RunConfig, stages: &[Stage], explicit: bool) -> Result<Manifest> {
    validate(cfg)?;
    let probing = cfg.probing_enabled();
    if explicit && !probing && stages.iter().any(|s| s.needs_annotations()) {
        return Err(Error::Validation(vec![
            "inputs: annotations and domain_map are required for probing".into(),
        ]));
    }
    let stages: Vec<Stage> = stages
        .iter()
        .copied()
        .filter(|s| probing || !s.needs_annotations())
        .collect();

    let root = cfg.output_path();
    fs::create_dir_all(&root).map_err(|source| Error::File { path: root.clone(), source })?;
    let out = OutDir { root: root.clone() };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Domain(format!("cannot start worker pool: {e}")))?;
    let outcome = pool.install(|| -> Result<()> {
        let loaded = load_inputs(cfg)?;
        for &stage in &stages {
            info!("stage {}", stage.name());
            match stage {
                Stage::Prune => prune_stage(cfg, &loaded, &out)?,
                Stage::Probe => probe_stage(cfg, &loaded, &out)?,
                Stage::Stats => stats_stage(cfg, &out)?,
                Stage::Report => report_stage(cfg, &loaded, &out)?,
            }
        }
        Ok(())
    });

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        stages: stages.iter().map(|s| s.name().to_string()).collect(),
        config_sha256: sha256_hex(cfg.canonical_json().as_bytes()),
        seed: cfg.seed,
        status: if outcome.is_ok() { "OK" } else { "FAILED" }.to_string(),
        failure: outcome.as_ref().err().map(|e| e.to_string()),
        outputs: checksum_tree(&root)?,
    };
    manifest.write(&root)?;
    outcome.map(|_| manifest)
}

struct OutDir {
    root: PathBuf,
}

impl OutDir {
    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn write<F>(&self, rel: &str, emit: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        let path = self.path(rel);
        let wrap = |source| Error::File { path: path.clone(), source };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(wrap)?;
        }
        let mut w = BufWriter::new(File::create(&path).map_err(wrap)?);
        emit(&mut w).map_err(wrap)?;
        w.flush().map_err(wrap)
    }

    fn open(&self, rel: &str) -> Result<BufReader<File>> {
        let path = self.path(rel);
        File::open(&path)
            .map(BufReader::new)
            .map_err(|source| Error::File { path, source })
    }
}

fn open_input(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| Error::File { path: path.to_path_buf(), source })
}

fn stage_error(stage: &'static str, task: &str, e: Error) -> Error {
    Error::Stage { stage, task: task.to_string(), source: Box::new(e) }
}

/// Collects per-task results in task order so the reported error does not
/// depend on scheduling.
fn per_task<T, F>(cfg: &RunConfig, stage: Stage, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&TaskSpec, &str) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = cfg
        .tasks
        .par_iter()
        .map(|t| {
            let label = t.label();
            f(t, &label).map_err(|e| stage_error(stage.name(), &label, e))
        })
        .collect();
    results.into_iter().collect()
}

struct Loaded {
    emb: EmbeddingTable,
    /// Judgments by task label.
    datasets: BTreeMap<String, JudgmentDataset>,
    annotations: Option<AnnotationTable>,
}

fn load_inputs(cfg: &RunConfig) -> Result<Loaded> {
    let mut datasets = BTreeMap::new();
    for t in &cfg.tasks {
        let src = cfg.judgment_source(&t.group, &t.category).expect("validated");
        let path = cfg.resolve(&src.path);
        let ds = parse_judgments(open_input(&path)?, &t.category, &t.group)
            .map_err(|e| stage_error("load", &format!("{} ({})", t.label(), path.display()), e))?;
        datasets.insert(t.label(), ds);
    }
    let annotations = match (&cfg.inputs.annotations, &cfg.inputs.domain_map) {
        (Some(a), Some(m)) => {
            let (a, m) = (cfg.resolve(a), cfg.resolve(m));
            let table = parse_annotations(open_input(&a)?, open_input(&m)?)
                .map_err(|e| stage_error("load", &a.display().to_string(), e))?;
            Some(table)
        }
        _ => None,
    };
    let mut wanted: BTreeSet<String> = datasets.values().flat_map(|d| d.words.iter().cloned()).collect();
    if let Some(a) = &annotations {
        wanted.extend(a.words.iter().cloned());
    }
    let path = cfg.resolve(&cfg.inputs.embeddings);
    let emb = parse_embeddings(open_input(&path)?, Some(&wanted))
        .map_err(|e| stage_error("load", &path.display().to_string(), e))?;
    info!("loaded {} embeddings of width {}", emb.len(), emb.dims());
    Ok(Loaded { emb, datasets, annotations })
}

fn task_path(label: &str, name: &str) -> String {
    format!("{label}/{name}")
}

fn prune_stage(cfg: &RunConfig, loaded: &Loaded, out: &OutDir) -> Result<()> {
    per_task(cfg, Stage::Prune, |task, label| {
        let mut ds = loaded.datasets[label].clone();
        if cfg.pruning.drop_degenerate_participants {
            let flat = ds.degenerate_participants();
            if !flat.is_empty() {
                warn!("{label}: dropping participants with constant ratings: {}", flat.join(", "));
                ds = ds.without_participants(&flat);
            }
        }
        let h = group_similarity_with(&ds, cfg.pruning.normalization)?;
        out.write(&task_path(label, "human_similarity.csv"), |w| h.write(w))?;

        let retained = prune(&loaded.emb, &h)?.with_labels(&task.category, &task.group);
        out.write(&task_path(label, "retained.csv"), |w| retained.write(w))?;
        info!(
            "{label}: kept {} of {} features, rho {} -> {}",
            retained.len(),
            retained.dims(),
            retained.baseline_rho,
            retained.achieved_rho
        );

        let k = cfg.pruning.top_words.min(loaded.emb.len());
        if k > 0 {
            let rows = retained
                .indices
                .iter()
                .map(|&f| top_activation_words(&loaded.emb, &[f], k).map(|ws| (f, ws)))
                .collect::<Result<Vec<_>>>()?;
            out.write(&task_path(label, "top_words.csv"), |w| {
                writeln!(w, "feature_index,words")?;
                for (f, ws) in &rows {
                    writeln!(w, "{f},{}", ws.join(" "))?;
                }
                Ok(())
            })?;
        }

        if cfg.pruning.cv {
            let opts = CvOptions {
                seed: cfg.seed.expect("validated"),
                random_draws: cfg.pruning.random_draws,
                refit_normalization: cfg.pruning.refit_normalization,
                normalization: cfg.pruning.normalization,
            };
            let report = prune_cv(&loaded.emb, &ds, &opts)?;
            out.write(&task_path(label, "cv.csv"), |w| report.write(w))?;
        }
        Ok(())
    })?;
    Ok(())
}

fn read_retained(out: &OutDir, task: &TaskSpec, label: &str) -> Result<RetainedFeatureSet> {
    RetainedFeatureSet::read(out.open(&task_path(label, "retained.csv"))?, &task.category, &task.group)
}

fn read_predictions(out: &OutDir, label: &str, level: &str) -> Result<PredictionMatrix> {
    PredictionMatrix::read(
        out.open(&task_path(label, &format!("predictions_{level}.csv")))?,
        out.open(&task_path(label, &format!("truth_{level}.csv")))?,
    )
}

fn probe_stage(cfg: &RunConfig, loaded: &Loaded, out: &OutDir) -> Result<()> {
    let ann = loaded.annotations.as_ref().expect("probing enabled");
    let map = domain_map_of(ann);
    per_task(cfg, Stage::Probe, |task, label| {
        let retained = read_retained(out, task, label)?;
        let pm = loocv_stack(&loaded.emb, &retained.indices, ann, &cfg.plsr)?;
        let condensed = condense_domains(&pm, &map)?;
        out.write(&task_path(label, "predictions_dims.csv"), |w| pm.write_values(w))?;
        out.write(&task_path(label, "truth_dims.csv"), |w| pm.write_truth(w))?;
        out.write(&task_path(label, "predictions_domains.csv"), |w| condensed.write_values(w))?;
        out.write(&task_path(label, "truth_domains.csv"), |w| condensed.write_truth(w))?;
        Ok(())
    })?;
    Ok(())
}

/// A group-vs-group contrast within one category.
struct Comparison<'a> {
    a: &'a TaskSpec,
    b: &'a TaskSpec,
    /// Column heading in the combined table.
    column: String,
}

impl Comparison<'_> {
    fn file(&self) -> String {
        format!("{CROSS_DIR}/discrepancy_{}_vs_{}.csv", self.a.label(), self.b.label())
    }
}

fn comparisons(cfg: &RunConfig) -> Vec<Comparison<'_>> {
    let mut out = Vec::new();
    for (category, by_group) in cfg.tasks_by_category() {
        if by_group.len() < 2 {
            continue;
        }
        let names: BTreeSet<&str> = by_group.keys().copied().collect();
        let reference = cfg.reference_group(&names).expect("non-empty");
        let a = by_group[reference.as_str()];
        let single = by_group.len() == 2;
        for (&g, &b) in &by_group {
            if g != reference {
                let column = if single { category.to_string() } else { b.label() };
                out.push(Comparison { a, b, column });
            }
        }
    }
    out
}

fn stats_stage(cfg: &RunConfig, out: &OutDir) -> Result<()> {
    let kind = cfg.stats.correlation;
    let profiles = per_task(cfg, Stage::Stats, |_, label| {
        let dims = read_predictions(out, label, "dims")?;
        let domains = read_predictions(out, label, "domains")?;
        let by_dim = accuracy_profile(label, &dims, kind)?;
        let by_domain = accuracy_profile(label, &domains, kind)?;
        out.write(&task_path(label, "accuracy_dims.csv"), |w| by_dim.write_dims(w))?;
        out.write(&task_path(label, "accuracy_words.csv"), |w| by_dim.write_words(w))?;
        out.write(&task_path(label, "accuracy_domains.csv"), |w| by_domain.write_dims(w))?;
        Ok((by_dim, by_domain, domains))
    })?;

    out.write(&format!("{CROSS_DIR}/accuracy.csv"), |w| {
        writeln!(w, "label,mean_dim_r,mean_word_r,mean_domain_r")?;
        for (d, dom, _) in &profiles {
            writeln!(
                w,
                "{},{},{},{}",
                d.label,
                numfmt::full(d.mean_dim_r()),
                numfmt::full(d.mean_word_r()),
                numfmt::full(dom.mean_dim_r())
            )?;
        }
        Ok(())
    })?;

    let by_label: BTreeMap<&str, &PredictionMatrix> =
        profiles.iter().map(|(d, _, pm)| (d.label.as_str(), pm)).collect();
    let opts = DiscrepancyOptions { alpha: cfg.stats.alpha, sides: cfg.stats.sidedness };
    for c in comparisons(cfg) {
        let (la, lb) = (c.a.label(), c.b.label());
        let report = discrepancy_test(&la, by_label[la.as_str()], &lb, by_label[lb.as_str()], &opts)
            .map_err(|e| stage_error(Stage::Stats.name(), &format!("{la} vs {lb}"), e))?;
        for d in &report.domains {
            if let crate::stats::DomainOutcome::Degenerate { mean_diff } = d.outcome {
                warn!("{} ({la} vs {lb}): constant error difference {mean_diff}", d.domain);
            }
        }
        out.write(&c.file(), |w| report.write(w))?;
    }

    if profiles.len() >= 2 {
        let dim_profiles: Vec<AccuracyProfile> = profiles.into_iter().map(|(d, _, _)| d).collect();
        let (usable, dropped) = drop_undefined_dims(dim_profiles);
        if !dropped.is_empty() {
            warn!("clustering without dimensions undefined in some profile: {}", dropped.join(", "));
        }
        let tree = cluster_profiles(&usable).map_err(|e| stage_error(Stage::Stats.name(), CROSS_DIR, e))?;
        out.write(&format!("{CROSS_DIR}/clustering.txt"), |w| {
            if !dropped.is_empty() {
                writeln!(w, "# excluded dimensions: {}", dropped.join(" "))?;
            }
            tree.write(w)
        })?;
    }
    Ok(())
}

/// Removes dimensions whose correlation is undefined in any profile.
fn drop_undefined_dims(profiles: Vec<AccuracyProfile>) -> (Vec<AccuracyProfile>, Vec<String>) {
    let width = profiles[0].per_dim_r.len();
    let keep: Vec<bool> = (0..width)
        .map(|j| profiles.iter().all(|p| p.per_dim_r.get(j).is_some_and(Option::is_some)))
        .collect();
    let dropped = profiles[0]
        .dims
        .iter()
        .zip(&keep)
        .filter(|(_, k)| !**k)
        .map(|(d, _)| d.clone())
        .collect();
    let filter = |v: Vec<Option<f64>>| v.into_iter().zip(&keep).filter(|(_, k)| **k).map(|(r, _)| r).collect();
    let dims_filter = |v: Vec<String>| v.into_iter().zip(&keep).filter(|(_, k)| **k).map(|(d, _)| d).collect();
    let profiles = profiles
        .into_iter()
        .map(|p| AccuracyProfile {
            per_dim_r: filter(p.per_dim_r),
            dims: dims_filter(p.dims),
            ..p
        })
        .collect();
    (profiles, dropped)
}

/// Row of a stored discrepancy table: domain, t, significance.
type DiscrepancyRow = (String, Option<f64>, bool);

fn read_discrepancy(out: &OutDir, rel: &str) -> Result<Vec<DiscrepancyRow>> {
    let mut reader = csv::Reader::from_reader(out.open(rel)?);
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let bad = |message: String| Error::Format { line: i + 2, message: format!("{rel}: {message}") };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 6 {
            return Err(bad("expected 6 columns".into()));
        }
        let t = numfmt::parse_full(&rec[1]).ok_or_else(|| bad(format!("`{}` is not a number", &rec[1])))?;
        let sig = rec[4].parse::<bool>().map_err(|e| bad(e.to_string()))?;
        rows.push((rec[0].to_string(), t, sig));
    }
    Ok(rows)
}

fn report_stage(cfg: &RunConfig, loaded: &Loaded, out: &OutDir) -> Result<()> {
    let report_error = |e| stage_error(Stage::Report.name(), CROSS_DIR, e);
    let sets = per_task(cfg, Stage::Report, |task, label| {
        let retained = read_retained(out, task, label)?;
        let cv = if cfg.pruning.cv {
            Some(PruneCvReport::read(out.open(&task_path(label, "cv.csv"))?, &task.category, &task.group)?)
        } else {
            None
        };
        Ok((label.to_string(), retained, cv))
    })?;

    let labelled: Vec<(String, RetainedFeatureSet)> =
        sets.iter().map(|(l, r, _)| (l.clone(), r.clone())).collect();
    let dice = DiceMatrix::build(&labelled).map_err(report_error)?;
    out.write(&format!("{CROSS_DIR}/dice.csv"), |w| dice.write(w))?;

    let retained: Vec<RetainedFeatureSet> = labelled.iter().map(|(_, r)| r.clone()).collect();
    let d = loaded.emb.dims();
    let counts = frequency_histogram(&retained, d).map_err(report_error)?;
    out.write(&format!("{CROSS_DIR}/histogram.csv"), |w| write_histogram(&counts, w))?;

    let all: Vec<usize> = (0..d).collect();
    let mut ratios = vec![("all".to_string(), d, compression_ratio(&loaded.emb, &all).map_err(report_error)?)];
    for (label, r) in &labelled {
        ratios.push((label.clone(), r.len(), compression_ratio(&loaded.emb, &r.indices).map_err(report_error)?));
    }
    out.write(&format!("{CROSS_DIR}/compression.csv"), |w| {
        writeln!(w, "label,n_features,ratio")?;
        for (label, n, ratio) in &ratios {
            writeln!(w, "{label},{n},{}", numfmt::full(Some(*ratio)))?;
        }
        Ok(())
    })?;

    out.write(&format!("{CROSS_DIR}/retained_alignment.csv"), |w| {
        writeln!(w, "label,group,category,n_features,n_retained,baseline_rho,retained_rho")?;
        for (label, r, _) in &sets {
            writeln!(
                w,
                "{label},{},{},{},{},{},{}",
                r.group_label,
                r.category_label,
                r.dims(),
                r.len(),
                numfmt::full(Some(r.baseline_rho)),
                numfmt::full(Some(r.achieved_rho))
            )?;
        }
        Ok(())
    })?;

    if cfg.pruning.cv {
        out.write(&format!("{CROSS_DIR}/cv_summary.csv"), |w| {
            writeln!(w, "label,group,category,base_rho,retained_rho,random_rho,mean_retained_size")?;
            for (label, r, cv) in &sets {
                let cv = cv.as_ref().expect("read above");
                writeln!(
                    w,
                    "{label},{},{},{},{},{},{}",
                    r.group_label,
                    r.category_label,
                    numfmt::full(cv.mean_base()),
                    numfmt::full(cv.mean_retained()),
                    numfmt::full(cv.mean_random()),
                    numfmt::full(Some(cv.mean_retained_size()))
                )?;
            }
            Ok(())
        })?;
    }

    let groups: BTreeSet<&str> = cfg.tasks.iter().map(|t| t.group.as_str()).collect();
    let by_cell: BTreeMap<(&str, &str), &(String, RetainedFeatureSet, Option<PruneCvReport>)> = cfg
        .tasks
        .iter()
        .zip(&sets)
        .map(|(t, s)| ((t.category.as_str(), t.group.as_str()), s))
        .collect();
    let categories: Vec<&str> = cfg.tasks_by_category().into_keys().collect();
    out.write(&format!("{CROSS_DIR}/retained_table.csv"), |w| {
        let heads: Vec<String> = groups.iter().map(|g| format!("{g}_base,{g}_retained,{g}_features")).collect();
        writeln!(w, "category,{}", heads.join(","))?;
        for c in &categories {
            let cells: Vec<String> = groups
                .iter()
                .map(|g| match by_cell.get(&(*c, *g)) {
                    Some((_, r, _)) => format!(
                        "{},{},{}",
                        numfmt::full(Some(r.baseline_rho)),
                        numfmt::full(Some(r.achieved_rho)),
                        r.len()
                    ),
                    None => "NA,NA,NA".into(),
                })
                .collect();
            writeln!(w, "{c},{}", cells.join(","))?;
        }
        Ok(())
    })?;
    if cfg.pruning.cv {
        out.write(&format!("{CROSS_DIR}/cv_table.csv"), |w| {
            let heads: Vec<String> = groups
                .iter()
                .map(|g| format!("{g}_base,{g}_retained,{g}_random,{g}_features"))
                .collect();
            writeln!(w, "category,{}", heads.join(","))?;
            for c in &categories {
                let cells: Vec<String> = groups
                    .iter()
                    .map(|g| match by_cell.get(&(*c, *g)).and_then(|(_, _, cv)| cv.as_ref()) {
                        Some(cv) => format!(
                            "{},{},{},{}",
                            numfmt::full(cv.mean_base()),
                            numfmt::full(cv.mean_retained()),
                            numfmt::full(cv.mean_random()),
                            numfmt::full(Some(cv.mean_retained_size()))
                        ),
                        None => "NA,NA,NA,NA".into(),
                    })
                    .collect();
                writeln!(w, "{c},{}", cells.join(","))?;
            }
            Ok(())
        })?;
    }

    let contrasts = comparisons(cfg);
    if cfg.probing_enabled() && !contrasts.is_empty() {
        let tables = contrasts
            .iter()
            .map(|c| read_discrepancy(out, &c.file()).map(|rows| (c, rows)))
            .collect::<Result<Vec<_>>>()
            .map_err(report_error)?;
        let domains: Vec<String> = tables[0].1.iter().map(|(d, _, _)| d.clone()).collect();
        if let Some((c, _)) = tables.iter().find(|(_, rows)| rows.iter().map(|r| &r.0).ne(domains.iter())) {
            return Err(report_error(Error::Domain(format!(
                "{} lists different domains from the other discrepancy tables",
                c.file()
            ))));
        }
        out.write(&format!("{CROSS_DIR}/discrepancy_table.csv"), |w| {
            let heads: Vec<String> = tables
                .iter()
                .map(|(c, _)| format!("{0}_t,{0}_significant", c.column))
                .collect();
            writeln!(w, "domain,{}", heads.join(","))?;
            for (i, domain) in domains.iter().enumerate() {
                let cells: Vec<String> = tables
                    .iter()
                    .map(|(_, rows)| format!("{},{}", numfmt::full(rows[i].1), rows[i].2))
                    .collect();
                writeln!(w, "{domain},{}", cells.join(","))?;
            }
            Ok(())
        })?;
    }
    Ok(())
}
