//! Result tables: the condition × trial-type AUC grid and the bootstrap
//! hyperparameter (N, B) grids, in long and wide layouts.

use serde::{Deserialize, Serialize};

use super::{NbAxis, NbRow};
use crate::grouping::{Category, GroupingSpec, Side};
use crate::pipeline::TrialType;
use crate::stats::AucWithCi;

/// One row of the classification grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEntry {
    pub condition: String,
    pub trial_type_label: String,
    pub trial_type: TrialType,
}

impl GridEntry {
    pub fn new(condition: &str, label: &str, trial_type: TrialType) -> Self {
        Self {
            condition: condition.into(),
            trial_type_label: label.into(),
            trial_type,
        }
    }
}

/// Four stimulus/response conditions with both sides and their contrast,
/// then the all-trials and random-contrast baselines: 14 rows.
pub fn standard_grid() -> Vec<GridEntry> {
    let blocks = [
        ("Sentence Sentiment", Category::SentenceSentiment, ["Positive", "Negative"]),
        ("Last Word Valence", Category::LastWordValence, ["Positive", "Negative"]),
        ("Response Type", Category::ResponseType, ["Agree", "Disagree"]),
        ("Response Time", Category::ResponseTime, ["Slow", "Fast"]),
    ];
    let mut grid = Vec::new();
    for (cond, cat, [a, b]) in blocks {
        grid.push(GridEntry::new(cond, a, TrialType::Single(GroupingSpec::new(cat, Side::A))));
        grid.push(GridEntry::new(cond, b, TrialType::Single(GroupingSpec::new(cat, Side::B))));
        grid.push(GridEntry::new(cond, "Contrasting", TrialType::Contrast(GroupingSpec::new(cat, Side::A))));
    }
    grid.push(GridEntry::new("Baseline", "All Sentences", TrialType::Single(GroupingSpec::all())));
    grid.push(GridEntry::new(
        "Baseline",
        "Random Contrasting",
        TrialType::Contrast(GroupingSpec::new(Category::RandomSplit, Side::A)),
    ));
    grid
}

/// The two contrast conditions used for the (N, B) grids.
pub fn nb_conditions() -> Vec<(String, TrialType)> {
    vec![
        (
            "Sentence Sentiment".into(),
            TrialType::Contrast(GroupingSpec::new(Category::SentenceSentiment, Side::A)),
        ),
        (
            "Response Type".into(),
            TrialType::Contrast(GroupingSpec::new(Category::ResponseType, Side::A)),
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub task: String,
    pub condition: String,
    pub trial_type: String,
    pub result: AucWithCi,
}

pub const LONG_HEADER: [&str; 6] = ["condition", "trial_type", "auc", "ci_lo", "ci_hi", "p_vs_chance"];

pub fn long_record(row: &Table1Row) -> [String; 6] {
    let r = &row.result;
    [
        row.condition.clone(),
        row.trial_type.clone(),
        format!("{:.6}", r.auc),
        format!("{:.6}", r.ci_lo),
        format!("{:.6}", r.ci_hi),
        format!("{:.6}", r.p_vs_chance),
    ]
}

/// `0.676 [0.63, 0.72]**`
pub fn format_auc_cell(r: &AucWithCi) -> String {
    format!("{:.3} [{:.2}, {:.2}]{}", r.auc, r.ci_lo, r.ci_hi, r.stars())
}

/// `0.696 (0.651, 0.738)`
pub fn format_nb_cell(r: &AucWithCi) -> String {
    format!("{:.3} ({:.3}, {:.3})", r.auc, r.ci_lo, r.ci_hi)
}

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.iter().any(|o| o == s) {
            out.push(s.to_string());
        }
    }
    out
}

/// Header `Condition, Trial Type, <task>...` and one row per
/// (condition, trial type) in first-seen order; the condition name is only
/// written on the first row of its block. Missing cells are empty.
pub fn table1_wide(rows: &[Table1Row]) -> (Vec<String>, Vec<Vec<String>>) {
    let tasks = first_seen(rows.iter().map(|r| r.task.as_str()));
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let k = (r.condition.clone(), r.trial_type.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut header = vec!["Condition".to_string(), "Trial Type".to_string()];
    header.extend(tasks.iter().cloned());
    let mut out = Vec::with_capacity(keys.len());
    let mut last_condition: Option<&str> = None;
    for (cond, tt) in &keys {
        let shown = if last_condition == Some(cond.as_str()) { String::new() } else { cond.clone() };
        last_condition = Some(cond);
        let mut line = vec![shown, tt.clone()];
        for task in &tasks {
            let cell = rows
                .iter()
                .find(|r| &r.task == task && &r.condition == cond && &r.trial_type == tt)
                .map(|r| format_auc_cell(&r.result))
                .unwrap_or_default();
            line.push(cell);
        }
        out.push(line);
    }
    (header, out)
}

pub fn nb_axis_label(axis: NbAxis) -> &'static str {
    match axis {
        NbAxis::NBoot => "Trials Generated (N)",
        NbAxis::TrialsPerBoot => "Trials Mean (B)",
    }
}

/// Header `<axis>, <condition>...` and one row per grid value.
pub fn nb_wide(rows: &[NbRow]) -> (Vec<String>, Vec<Vec<String>>) {
    let Some(first) = rows.first() else {
        return (Vec::new(), Vec::new());
    };
    let conditions = first_seen(rows.iter().map(|r| r.condition.as_str()));
    let mut values: Vec<usize> = Vec::new();
    for r in rows {
        if !values.contains(&r.value) {
            values.push(r.value);
        }
    }
    let mut header = vec![nb_axis_label(first.axis).to_string()];
    header.extend(conditions.iter().cloned());
    let body = values
        .iter()
        .map(|&v| {
            let mut line = vec![v.to_string()];
            for c in &conditions {
                line.push(
                    rows.iter()
                        .find(|r| r.value == v && &r.condition == c)
                        .map(|r| format_nb_cell(&r.auc))
                        .unwrap_or_default(),
                );
            }
            line
        })
        .collect();
    (header, body)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn res(auc: f64, lo: f64, hi: f64, p: f64) -> AucWithCi {
        AucWithCi {
            auc,
            ci_lo: lo,
            ci_hi: hi,
            p_vs_chance: p,
            n_boot: 1000,
            n_perm: 1000,
        }
    }

    #[test]
    fn standard_grid_shape() {
        let g = standard_grid();
        assert_eq!(g.len(), 14);
        let conditions = first_seen(g.iter().map(|e| e.condition.as_str()));
        assert_eq!(conditions.len(), 5);
        assert_eq!(g.iter().filter(|e| e.trial_type_label == "Contrasting").count(), 4);
        for e in &g {
            e.trial_type.validate().unwrap();
        }
    }

    #[test]
    fn cells() {
        assert_eq!(format_auc_cell(&res(0.676, 0.63, 0.72, 0.0005)), "0.676 [0.63, 0.72]**");
        assert_eq!(format_auc_cell(&res(0.549, 0.50, 0.59, 0.01)), "0.549 [0.50, 0.59]*");
        assert_eq!(format_auc_cell(&res(0.517, 0.46, 0.57, 0.3)), "0.517 [0.46, 0.57]");
        assert_eq!(format_nb_cell(&res(0.696, 0.651, 0.738, 0.0)), "0.696 (0.651, 0.738)");
    }

    #[test]
    fn wide_layout() {
        let mut rows = Vec::new();
        for task in ["C vs DS", "D vs S"] {
            for (c, t) in [("Sentence Sentiment", "Positive"), ("Sentence Sentiment", "Negative"), ("Baseline", "All Sentences")] {
                rows.push(Table1Row {
                    task: task.into(),
                    condition: c.into(),
                    trial_type: t.into(),
                    result: res(0.6, 0.55, 0.65, 0.001),
                });
            }
        }
        let (h, body) = table1_wide(&rows);
        assert_eq!(h, ["Condition", "Trial Type", "C vs DS", "D vs S"]);
        assert_eq!(body.len(), 3);
        assert_eq!(body[0][0], "Sentence Sentiment");
        assert_eq!(body[1][0], "");
        assert_eq!(body[2][0], "Baseline");
        assert_eq!(body[2][3], "0.600 [0.55, 0.65]**");
    }
}
