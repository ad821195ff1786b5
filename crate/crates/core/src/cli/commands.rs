//! One function per subcommand. Each writes its files into the output
//! directory and finishes with `run_meta.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use super::config::{AblateSection, RunConfig, Seeds};
use super::output::{num, slug, write_csv, write_json};
use super::{CliError, Command};
use crate::dataset::{self, Dataset, Group, Questionnaire, Token};
use crate::mvpa;
use crate::pipeline::{self, Excluded};
use crate::rng;
use crate::stats::{self, AucWithCi, CorrelationComparison};
use crate::subject_clf::tables::{self, Table1Row};
use crate::subject_clf::{self as clf, Confusion, FoldSummary, NbAxis};
use crate::synth;

const TOOL: &str = "eegdecode";

#[derive(Serialize)]
struct DatasetMeta<'a> {
    path: &'a Path,
    provenance: &'a str,
    n_subjects: usize,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    base_seed: u64,
    seeds: &'a Seeds,
    config: &'a RunConfig,
    dataset: Option<DatasetMeta<'a>>,
}

struct Ctx {
    cmd: Command,
    cfg: RunConfig,
    seeds: Seeds,
}

impl Ctx {
    fn out_dir(&self) -> Result<PathBuf, CliError> {
        let dir = self
            .cfg
            .output_dir
            .clone()
            .ok_or_else(|| CliError::Config(format!("{} needs --out", self.cmd.name())))?;
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        Ok(dir)
    }

    fn dataset_path(&self) -> Result<PathBuf, CliError> {
        let p = self
            .cfg
            .dataset_path
            .clone()
            .ok_or_else(|| CliError::Config("no dataset: pass --data or set dataset_path".into()))?;
        if !p.exists() {
            return Err(CliError::Config(format!("dataset path {} does not exist", p.display())));
        }
        Ok(p)
    }

    fn load(&self) -> Result<Dataset, CliError> {
        let path = self.dataset_path()?;
        info!("loading {}", path.display());
        Ok(dataset::load_dataset(&path)?)
    }

    fn write_meta(&self, dir: &Path, ds: Option<&Dataset>) -> Result<(), CliError> {
        let path = self.cfg.dataset_path.clone().unwrap_or_default();
        let meta = RunMeta {
            tool: TOOL,
            version: env!("CARGO_PKG_VERSION"),
            command: self.cmd.name(),
            base_seed: self.cfg.base_seed,
            seeds: &self.seeds,
            config: &self.cfg,
            dataset: ds.map(|d| DatasetMeta {
                path: &path,
                provenance: &d.provenance,
                n_subjects: d.subjects.len(),
            }),
        };
        write_json(&dir.join("run_meta.json"), &meta)
    }
}

pub fn dispatch(cmd: Command, mut cfg: RunConfig) -> Result<(), CliError> {
    let seeds = cfg.resolve_seeds();
    let ctx = Ctx { cmd, cfg, seeds };
    match cmd {
        Command::Synth => synth_cmd(&ctx),
        Command::Decode => decode_cmd(&ctx),
        Command::Classify => classify_cmd(&ctx),
        Command::Transfer => transfer_cmd(&ctx),
        Command::Ablate => ablate_cmd(&ctx),
        Command::Behavioral => behavioral_cmd(&ctx),
        Command::Correlate => correlate_cmd(&ctx),
        Command::Validate => validate_cmd(&ctx),
    }
}

fn write_excluded(path: &Path, excluded: &[Excluded]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = excluded
        .iter()
        .map(|e| vec![e.subject_id.clone(), e.reason.clone()])
        .collect();
    write_csv(path, &["subject_id", "reason"], &rows)
}

fn synth_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let dir = ctx.out_dir()?;
    ctx.cfg.synth.validate()?;
    synth::generate_to_dir(&ctx.cfg.synth, &dir)?;
    write_json(&dir.join("synth_config.json"), &ctx.cfg.synth)?;
    ctx.write_meta(&dir, None)
}

fn decode_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    cfg.split.validate()?;
    cfg.trial_type.validate()?;
    let dir = ctx.out_dir()?;
    let ds = ctx.load()?;
    let set = pipeline::build_erps(&ds, &cfg.trial_type, &cfg.split, &cfg.prep)?;
    let report = pipeline::decode_and_test(&set, &ctx.seeds.decode, &cfg.decode, &cfg.cluster)?;
    let dts = &report.decoding;
    let cl = &report.cluster;

    let mut rows = Vec::new();
    for (t, &ms) in dts.timepoints_ms.iter().enumerate() {
        for (k, &seed) in dts.seeds.iter().enumerate() {
            rows.push(vec![num(ms), k.to_string(), seed.to_string(), num(dts.auc_per_seed[[k, t]])]);
        }
    }
    write_csv(&dir.join("decoding.csv"), &["timepoint_ms", "seed_index", "seed", "auc"], &rows)?;

    let sig = cl.significant_timepoints();
    let rows: Vec<Vec<String>> = dts
        .timepoints_ms
        .iter()
        .enumerate()
        .map(|(t, &ms)| {
            vec![
                num(ms),
                num(dts.mean_auc[t]),
                num(cl.pointwise_p[t]),
                sig.contains(&t).to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("decoding_mean.csv"),
        &["timepoint_ms", "mean_auc", "pointwise_p", "significant"],
        &rows,
    )?;
    write_json(&dir.join("clusters.json"), cl)?;

    let mut rows = Vec::new();
    if let Some(imp) = &report.importance {
        let names = ds.layout.names();
        let regions = ds.layout.regions();
        for (rank, &c) in imp.ranking().iter().enumerate() {
            rows.push(vec![
                names[c].clone(),
                regions[c].as_token().to_string(),
                num(imp.proportion[c]),
                (rank + 1).to_string(),
            ]);
        }
    } else {
        info!("no significant cluster; importance.csv has no rows");
    }
    write_csv(&dir.join("importance.csv"), &["channel", "region", "proportion", "rank"], &rows)?;
    write_excluded(&dir.join("excluded.csv"), &report.excluded)?;
    ctx.write_meta(&dir, Some(&ds))
}

#[derive(Serialize)]
struct ClassifyEntry<'a> {
    task: String,
    condition: &'a str,
    trial_type: &'a str,
    positive_class: String,
    result: AucWithCi,
    confusion_at_half: Confusion,
    folds: Vec<FoldSummary>,
    excluded: Vec<Excluded>,
}

fn positive_note(split: &pipeline::ClassSplit) -> String {
    let g: Vec<&str> = split.positive.iter().map(Group::label).collect();
    format!("P(positive) is the probability of group {}", g.join("/"))
}

fn classify_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    if cfg.grid.is_empty() || cfg.tasks.is_empty() {
        return Err(CliError::Config("classify needs a non-empty grid and task list".into()));
    }
    for t in &cfg.tasks {
        t.validate()?;
    }
    let dir = ctx.out_dir()?;
    let ds = ctx.load()?;

    let mut all_rows = Vec::new();
    let mut prob_rows = Vec::new();
    let mut report = Vec::new();
    for (ti, task) in cfg.tasks.iter().enumerate() {
        let task_label = task.label();
        let mut long = Vec::new();
        for (gi, entry) in cfg.grid.iter().enumerate() {
            info!("{task_label}: {} / {}", entry.condition, entry.trial_type_label);
            let res = clf::run_subject_classification(
                &ds,
                &entry.trial_type,
                task,
                &cfg.classifier,
                &cfg.prep,
                &cfg.bootstrap,
            )?;
            let seed = rng::derive_seed(ctx.seeds.inference, &[ti as u64, gi as u64]);
            let result = res.auc_with_ci(&cfg.inference, seed)?;
            let row = Table1Row {
                task: task_label.clone(),
                condition: entry.condition.clone(),
                trial_type: entry.trial_type_label.clone(),
                result: result.clone(),
            };
            long.push(tables::long_record(&row).to_vec());
            all_rows.push(row);
            for p in &res.probabilities {
                prob_rows.push(vec![
                    task_label.clone(),
                    entry.condition.clone(),
                    entry.trial_type_label.clone(),
                    p.subject_id.clone(),
                    p.group.as_token().to_string(),
                    p.label.to_string(),
                    p.n_positive.to_string(),
                    p.n_boot_used.to_string(),
                    num(p.p_positive_class),
                ]);
            }
            report.push(ClassifyEntry {
                task: task_label.clone(),
                condition: &entry.condition,
                trial_type: &entry.trial_type_label,
                positive_class: positive_note(task),
                result,
                confusion_at_half: clf::confusion_at_threshold(&res.scores(), &res.labels(), 0.5)?,
                folds: res.folds,
                excluded: res.excluded,
            });
        }
        write_csv(&dir.join(format!("table1_{}.csv", slug(&task_label))), &tables::LONG_HEADER, &long)?;
    }
    let (header, rows) = tables::table1_wide(&all_rows);
    write_csv(&dir.join("table1.csv"), &header, &rows)?;
    write_csv(
        &dir.join("probabilities.csv"),
        &[
            "task",
            "condition",
            "trial_type",
            "subject_id",
            "group",
            "label",
            "n_positive",
            "n_boot_used",
            "p_positive_class",
        ],
        &prob_rows,
    )?;
    write_json(&dir.join("classify_report.json"), &report)?;
    ctx.write_meta(&dir, Some(&ds))
}

fn transfer_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    cfg.transfer.train.validate()?;
    let dir = ctx.out_dir()?;
    let ds = ctx.load()?;
    let rep = clf::transfer_eval(
        &ds,
        &cfg.trial_type,
        &cfg.transfer.train,
        &cfg.transfer.held_out,
        &cfg.classifier,
        &cfg.prep,
        &cfg.bootstrap,
    )?;
    write_json(&dir.join("transfer.json"), &rep)?;
    let rows: Vec<Vec<String>> = rep
        .probabilities
        .iter()
        .map(|p| {
            vec![
                p.subject_id.clone(),
                p.group.as_token().to_string(),
                num(p.p_positive_class),
                p.n_positive.to_string(),
                p.n_boot_used.to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("transfer_probabilities.csv"),
        &["subject_id", "group", "p_positive_class", "n_positive", "n_boot_used"],
        &rows,
    )?;
    ctx.write_meta(&dir, Some(&ds))
}

const AUC_COLUMNS: [&str; 4] = ["auc", "ci_lo", "ci_hi", "p_vs_chance"];

fn auc_cells(r: &AucWithCi) -> [String; 4] {
    [num(r.auc), num(r.ci_lo), num(r.ci_hi), num(r.p_vs_chance)]
}

fn ablate_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    cfg.split.validate()?;
    cfg.trial_type.validate()?;
    let dir = ctx.out_dir()?;
    let ds = ctx.load()?;
    match &cfg.ablate {
        AblateSection::RegionTime { time_ends_ms, regions } => {
            let set = pipeline::build_erps(&ds, &cfg.trial_type, &cfg.split, &cfg.prep)?;
            let first = set
                .erps
                .first()
                .ok_or_else(|| CliError::Data("no subject has usable trials".into()))?;
            let named: Vec<(String, Vec<usize>)> = regions
                .iter()
                .map(|r| (r.as_token().to_string(), ds.layout.indices_in(&[*r])))
                .collect();
            let conds = mvpa::ablation_conditions(first.epoch_start_ms, ds.layout.len(), time_ends_ms, &named);
            let rows = mvpa::ablation_grid(&set.erps, &set.labels, &conds, &ctx.seeds.decode, &cfg.decode)?;
            let summary: Vec<Vec<String>> = rows
                .iter()
                .map(|r| vec![r.axis.clone(), r.condition.clone(), num(r.auc), r.auc_per_seed.len().to_string()])
                .collect();
            write_csv(&dir.join("ablation.csv"), &["axis", "condition", "mean_auc", "n_seeds"], &summary)?;
            let per_seed: Vec<Vec<String>> = rows
                .iter()
                .flat_map(|r| {
                    r.auc_per_seed
                        .iter()
                        .enumerate()
                        .map(|(k, a)| vec![r.axis.clone(), r.condition.clone(), k.to_string(), num(*a)])
                })
                .collect();
            write_csv(
                &dir.join("ablation_per_seed.csv"),
                &["axis", "condition", "seed_index", "auc"],
                &per_seed,
            )?;
            write_excluded(&dir.join("excluded.csv"), &set.excluded)?;
        }
        AblateSection::Budget { axis, fractions } => {
            let rows = clf::budget_ablation(
                &ds,
                &cfg.trial_type,
                &cfg.split,
                &cfg.classifier,
                &cfg.prep,
                &cfg.bootstrap,
                *axis,
                fractions,
            )?;
            let axis_name = serde_json::to_value(axis).map_err(|e| CliError::Internal(e.to_string()))?;
            let rows: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        axis_name.as_str().unwrap_or_default().to_string(),
                        num(r.fraction),
                        num(r.auc),
                        r.n_units.to_string(),
                    ]
                })
                .collect();
            write_csv(&dir.join("budget.csv"), &["axis", "fraction", "auc", "n_units"], &rows)?;
        }
        AblateSection::Bootstrap { n_values, b_values } => {
            let conds = tables::nb_conditions();
            for (axis, values, stem) in [
                (NbAxis::NBoot, n_values, "nb_n_boot"),
                (NbAxis::TrialsPerBoot, b_values, "nb_trials_per_boot"),
            ] {
                let rows = clf::nb_ablation(
                    &ds,
                    &conds,
                    &cfg.split,
                    &cfg.classifier,
                    &cfg.prep,
                    &cfg.bootstrap,
                    &cfg.inference,
                    axis,
                    values,
                )?;
                let mut header = vec!["value", "condition"];
                header.extend(AUC_COLUMNS);
                let long: Vec<Vec<String>> = rows
                    .iter()
                    .map(|r| {
                        let mut v = vec![r.value.to_string(), r.condition.clone()];
                        v.extend(auc_cells(&r.auc));
                        v
                    })
                    .collect();
                write_csv(&dir.join(format!("{stem}.csv")), &header, &long)?;
                let (wh, wr) = tables::nb_wide(&rows);
                write_csv(&dir.join(format!("{stem}_wide.csv")), &wh, &wr)?;
            }
        }
    }
    ctx.write_meta(&dir, Some(&ds))
}

#[derive(Serialize)]
struct BehavioralOut<'a> {
    split: String,
    result: AucWithCi,
    model: &'a crate::logreg::LogRegModel,
    feature_order: [&'static str; 4],
    excluded: &'a [Excluded],
}

fn behavioral_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    cfg.split.validate()?;
    let dir = ctx.out_dir()?;
    let ds = ctx.load()?;
    let res = clf::behavioral_baseline(&ds, &cfg.split, &cfg.behavioral, ctx.seeds.behavioral)?;
    let result = stats::auc_with_ci(
        &res.scores,
        &res.labels,
        cfg.inference.n_boot,
        cfg.inference.n_perm,
        ctx.seeds.inference,
    )?;
    write_json(
        &dir.join("behavioral.json"),
        &BehavioralOut {
            split: cfg.split.label(),
            result,
            model: &res.model,
            feature_order: crate::grouping::BEHAVIOR_FEATURES,
            excluded: &res.excluded,
        },
    )?;
    let rows: Vec<Vec<String>> = res
        .subject_ids
        .iter()
        .zip(&res.labels)
        .zip(&res.scores)
        .map(|((id, l), s)| vec![id.clone(), l.to_string(), num(*s)])
        .collect();
    write_csv(&dir.join("behavioral_scores.csv"), &["subject_id", "label", "p_positive_class"], &rows)?;
    ctx.write_meta(&dir, Some(&ds))
}

#[derive(Debug, Serialize)]
struct CorrelationRow {
    group: String,
    questionnaire: &'static str,
    n: usize,
    rho: Option<f64>,
    p_perm: Option<f64>,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct ComparisonRow {
    group: String,
    first: &'static str,
    second: &'static str,
    n: usize,
    result: Option<CorrelationComparison>,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct CorrelateOut {
    task: String,
    condition: String,
    trial_type: String,
    n_perm: usize,
    correlations: Vec<CorrelationRow>,
    comparisons: Vec<ComparisonRow>,
}

/// `(subject_id, group, p)` rows of one task/condition/trial type block.
type ProbRows = Vec<(String, Group, f64)>;

fn read_probabilities(path: &Path, ctx: &Ctx) -> Result<(String, String, String, ProbRows), CliError> {
    let bad = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column '{name}'")))
    };
    let (ct, cc, ctt, cid, cg, cp) = (
        col("task")?,
        col("condition")?,
        col("trial_type")?,
        col("subject_id")?,
        col("group")?,
        col("p_positive_class")?,
    );
    let c = &ctx.cfg.correlate;
    let mut key: Option<(String, String, String)> = None;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let this = (rec[ct].to_string(), rec[cc].to_string(), rec[ctt].to_string());
        let wanted = c.task.as_ref().map_or(true, |t| *t == this.0)
            && c.condition.as_ref().map_or(true, |t| *t == this.1)
            && c.trial_type.as_ref().map_or(true, |t| *t == this.2);
        if !wanted {
            continue;
        }
        match &key {
            None => key = Some(this),
            Some(k) if *k != this => continue,
            _ => {}
        }
        let group = Group::from_token(&rec[cg]).ok_or_else(|| bad(format!("unknown group '{}'", &rec[cg])))?;
        let p: f64 = rec[cp]
            .parse()
            .map_err(|_| bad(format!("bad probability '{}'", &rec[cp])))?;
        rows.push((rec[cid].to_string(), group, p));
    }
    let (t, cnd, tt) = key.ok_or_else(|| CliError::Config("correlate: no probability rows match the filters".into()))?;
    Ok((t, cnd, tt, rows))
}

fn correlate_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let path = cfg
        .correlate
        .probabilities_path
        .clone()
        .ok_or_else(|| CliError::Config("correlate.probabilities_path is not set".into()))?;
    if !path.exists() {
        return Err(CliError::Config(format!("{} does not exist", path.display())));
    }
    let dir = ctx.out_dir()?;
    let ds = ctx.load()?;
    let (task, condition, trial_type, rows) = read_probabilities(&path, ctx)?;

    // Per group in file order of first appearance, then pooled.
    let mut blocks: BTreeMap<String, Vec<(f64, &BTreeMap<Questionnaire, i64>)>> = BTreeMap::new();
    for (id, group, p) in &rows {
        let s = ds
            .subject(id)
            .ok_or_else(|| CliError::Data(format!("subject '{id}' is not in the dataset")))?;
        blocks.entry(group.label().to_string()).or_default().push((*p, &s.questionnaires));
        blocks.entry("all".into()).or_default().push((*p, &s.questionnaires));
    }

    let n_perm = cfg.correlate.n_perm;
    let mut correlations = Vec::new();
    let mut comparisons = Vec::new();
    for (bi, (group, members)) in blocks.iter().enumerate() {
        for (qi, q) in Questionnaire::ALL.iter().enumerate() {
            let (p, s): (Vec<f64>, Vec<f64>) = members
                .iter()
                .filter_map(|(p, qs)| qs.get(q).map(|v| (*p, *v as f64)))
                .unzip();
            let seed = rng::derive_seed(ctx.seeds.correlate, &[bi as u64, qi as u64]);
            let (rho, p_perm, error) = match stats::spearman_perm_test(&p, &s, n_perm, seed) {
                Ok((r, pv)) => (Some(r), Some(pv), None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            correlations.push(CorrelationRow {
                group: group.clone(),
                questionnaire: q.as_token(),
                n: p.len(),
                rho,
                p_perm,
                error,
            });
        }
        let (first, second) = (Questionnaire::Phq9Dayof, Questionnaire::Phq9Screen);
        let mut pred = Vec::new();
        let mut q1 = Vec::new();
        let mut q2 = Vec::new();
        for (p, qs) in members {
            if let (Some(a), Some(b)) = (qs.get(&first), qs.get(&second)) {
                pred.push(*p);
                q1.push(*a as f64);
                q2.push(*b as f64);
            }
        }
        let seed = rng::derive_seed(ctx.seeds.correlate, &[bi as u64, 0xcc]);
        let (result, error) = match stats::perm_compare_correlations(&pred, &q1, &q2, n_perm, seed) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        comparisons.push(ComparisonRow {
            group: group.clone(),
            first: first.as_token(),
            second: second.as_token(),
            n: pred.len(),
            result,
            error,
        });
    }

    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let csv_rows: Vec<Vec<String>> = correlations
        .iter()
        .map(|c| {
            vec![
                c.group.clone(),
                c.questionnaire.to_string(),
                c.n.to_string(),
                opt(c.rho),
                opt(c.p_perm),
                c.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("correlation.csv"),
        &["group", "questionnaire", "n", "rho", "p_perm", "note"],
        &csv_rows,
    )?;
    write_json(
        &dir.join("correlation.json"),
        &CorrelateOut {
            task,
            condition,
            trial_type,
            n_perm,
            correlations,
            comparisons,
        },
    )?;
    ctx.write_meta(&dir, Some(&ds))
}

#[derive(Serialize)]
struct ValidationOut<'a> {
    n_violations: usize,
    violations: &'a [dataset::Violation],
}

fn validate_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let path = ctx.dataset_path()?;
    let ds = dataset::read_dataset(&path)?;
    let violations = dataset::validate(&ds);
    for v in &violations {
        eprintln!("{v}");
    }
    if ctx.cfg.output_dir.is_some() {
        let dir = ctx.out_dir()?;
        write_json(
            &dir.join("validation.json"),
            &ValidationOut {
                n_violations: violations.len(),
                violations: &violations,
            },
        )?;
        ctx.write_meta(&dir, Some(&ds))?;
    }
    if violations.is_empty() {
        println!("{}: {} subjects, no violations", path.display(), ds.subjects.len());
        Ok(())
    } else {
        Err(CliError::Data(format!("{} violation(s)", violations.len())))
    }
}
