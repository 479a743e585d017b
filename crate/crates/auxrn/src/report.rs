//! Logs, plot-ready CSV and summary tables.

use std::fmt::Write as _;

use auxrn_core::metrics::MetricSummary;
use auxrn_core::training::{
    AblationRow, AblationTable, EpisodeDiagnostic, EpisodeResult, EvalRecord, StepRecord,
};
use serde::{Deserialize, Serialize};

use crate::error::{json, Result};

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>, context: &str) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).map_err(json(context))?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub episode_id: u64,
    pub t: usize,
    pub node: usize,
    pub candidate_count: usize,
    pub p_t: Vec<f64>,
    pub a_t: usize,
    pub mode: String,
}

pub fn rollout_log(diags: &[EpisodeDiagnostic], mode: &str) -> Result<String> {
    let steps = diags.iter().flat_map(|d| {
        d.actions.iter().enumerate().map(move |(t, &a)| RolloutStep {
            episode_id: d.episode_id,
            t,
            node: d.nodes[t],
            candidate_count: d.action_probs[t].len(),
            p_t: d.action_probs[t].clone(),
            a_t: a,
            mode: mode.to_string(),
        })
    });
    jsonl(steps, "rollout step")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub iter: usize,
    pub il: f64,
    pub rl: f64,
    pub value_loss: f64,
    pub speaker: f64,
    pub progress: f64,
    pub matching: f64,
    pub angle: f64,
    pub total: f64,
    pub probe_sr: Option<f64>,
    pub episode_ids: Vec<u64>,
}

impl From<&StepRecord> for TrainLogRecord {
    fn from(s: &StepRecord) -> Self {
        let l = &s.losses;
        Self {
            iter: s.iteration,
            il: l.il,
            rl: l.policy,
            value_loss: l.value,
            speaker: l.speaker,
            progress: l.progress,
            matching: l.matching,
            angle: l.angle,
            total: l.total,
            probe_sr: s.probe_sr,
            episode_ids: s.episode_ids.clone(),
        }
    }
}

pub fn train_log(steps: &[StepRecord]) -> Result<String> {
    jsonl(steps.iter().map(TrainLogRecord::from), "training record")
}

pub fn parse_train_log(text: &str) -> Result<Vec<TrainLogRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(json("training record")))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalLogRecord {
    pub iter: usize,
    pub split: String,
    pub ne: f64,
    pub or: f64,
    pub sr: f64,
    pub spl: f64,
    pub tl: f64,
}

pub fn eval_log(evals: &[EvalRecord]) -> Result<String> {
    jsonl(
        evals.iter().map(|e| EvalLogRecord {
            iter: e.iteration,
            split: e.split.to_string(),
            ne: e.summary.ne,
            or: e.summary.or,
            sr: e.summary.sr,
            spl: e.summary.spl,
            tl: e.summary.tl,
        }),
        "eval record",
    )
}

#[derive(Serialize)]
struct EpisodeLine<'a> {
    episode_id: u64,
    nodes: &'a [usize],
    tl: f64,
    ne: f64,
    oracle: bool,
    success: bool,
    spl: f64,
}

pub fn episode_metrics_log(results: &[EpisodeResult]) -> Result<String> {
    jsonl(
        results.iter().map(|r| EpisodeLine {
            episode_id: r.episode_id,
            nodes: &r.nodes,
            tl: r.metrics.tl,
            ne: r.metrics.ne,
            oracle: r.metrics.oracle,
            success: r.metrics.success,
            spl: r.metrics.spl,
        }),
        "episode metrics",
    )
}

/// Fixed-width summary: a label column then NE, OR, SR, SPL, TL.
pub fn summary_table(label: &str, rows: &[(String, MetricSummary)]) -> String {
    let mut out = format!("{label:<16}");
    for c in MetricSummary::COLUMNS {
        let _ = write!(out, "{c:>9}");
    }
    out.push('\n');
    for (name, s) in rows {
        let _ = write!(out, "{name:<16}");
        for v in s.values() {
            let _ = write!(out, "{v:>9.4}");
        }
        out.push('\n');
    }
    out
}

/// Instruction attention, one row per step and one column per token.
pub fn attention_csv(d: &EpisodeDiagnostic) -> String {
    let width = d.word_attention.first().map_or(0, Vec::len);
    let header: Vec<String> = (0..width).map(|i| format!("w{i}")).collect();
    let mut out = header.join(",");
    out.push('\n');
    for row in &d.word_attention {
        let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn diagnostics_csv(d: &EpisodeDiagnostic) -> String {
    let mut out = String::from("t,progress_prediction,matching_probability\n");
    for (t, (p, m)) in d.progress.iter().zip(&d.matching).enumerate() {
        let _ = writeln!(out, "{t},{p},{m}");
    }
    out
}

pub fn training_curve_csv(records: &[TrainLogRecord]) -> String {
    let mut out =
        String::from("iter,il,rl,value_loss,speaker,progress,matching,angle,total,probe_sr\n");
    for r in records {
        let probe = r.probe_sr.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iter, r.il, r.rl, r.value_loss, r.speaker, r.progress, r.matching, r.angle, r.total, probe
        );
    }
    out
}

fn weights_label(r: &AblationRow) -> String {
    let w = r.weights;
    format!("{},{},{},{}", w.speaker, w.progress, w.matching, w.angle)
}

pub fn ablation_text(table: &AblationTable) -> String {
    let mut out = String::new();
    for (title, split) in [("val-seen", 0), ("val-unseen", 1)] {
        let rows: Vec<(String, MetricSummary)> = table
            .rows
            .iter()
            .map(|r| (r.name.clone(), if split == 0 { r.seen } else { r.unseen }))
            .collect();
        out.push_str(&summary_table(title, &rows));
        out.push('\n');
    }
    let _ = writeln!(out, "{:<16}{:>9}{:>9}{:>9}", "progress", "Error", "SR", "SPL");
    for r in &table.progress_variants {
        let _ = writeln!(
            out,
            "{:<16}{:>9.4}{:>9.4}{:>9.4}",
            r.name, r.progress_error, r.unseen.sr, r.unseen.spl
        );
    }
    out
}

pub fn ablation_csv(table: &AblationTable) -> String {
    let mut out = String::from("row,weights,progress_loss,split,NE,OR,SR,SPL,TL,progress_error\n");
    let all = table.rows.iter().chain(&table.progress_variants);
    for r in all {
        for (split, s) in [("val-seen", r.seen), ("val-unseen", r.unseen)] {
            let v = s.values();
            let _ = writeln!(
                out,
                "{},\"{}\",{},{},{},{},{},{},{},{}",
                r.name,
                weights_label(r),
                r.progress_loss.as_str(),
                split,
                v[0],
                v[1],
                v[2],
                v[3],
                v[4],
                r.progress_error
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_columns_are_in_fixed_order() {
        let s = MetricSummary {
            ne: 1.0,
            or: 0.5,
            sr: 0.25,
            spl: 0.125,
            tl: 3.0,
            episodes: 4,
        };
        let t = summary_table("split", &[("val-unseen".into(), s)]);
        let header: Vec<&str> = t.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(header, ["split", "NE", "OR", "SR", "SPL", "TL"]);
        let row: Vec<&str> = t.lines().nth(1).unwrap().split_whitespace().collect();
        assert_eq!(row, ["val-unseen", "1.0000", "0.5000", "0.2500", "0.1250", "3.0000"]);
    }

    #[test]
    fn attention_rows_keep_full_precision() {
        let d = EpisodeDiagnostic {
            episode_id: 3,
            nodes: vec![0, 1],
            actions: vec![0, 1],
            action_probs: vec![vec![0.5, 0.5], vec![0.25, 0.75]],
            word_attention: vec![vec![0.1, 0.2, 0.7], vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]],
            view_attention: vec![],
            progress: vec![0.4, 0.9],
            matching: vec![0.6, 0.7],
        };
        let csv = attention_csv(&d);
        for line in csv.lines().skip(1) {
            let s: f64 = line.split(',').map(|x| x.parse::<f64>().unwrap()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(diagnostics_csv(&d).lines().count(), 3);
        let log = rollout_log(&[d], "argmax").unwrap();
        let first: RolloutStep = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        assert_eq!(first.candidate_count, 2);
    }
}
