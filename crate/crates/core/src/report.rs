//! Report bundle built from one or more loaded runs and its Markdown, CSV
//! and JSON renderings.
//!
//! Values are stored unrounded; Markdown rounds to two decimals. An
//! undefined metric is `null` in JSON, an empty cell in CSV and `—` in
//! Markdown.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::metrics::{
    strongest_weakest, Aggregation, ConfusionMatrix, MetricName, MetricsError, MetricsReport,
    Scope, StrengthRanking,
};
use crate::patterns::{ConfusionPair, Distribution, PatternReport};
use crate::prompt::PromptVariant;
use crate::records::TaskStatus;
use crate::store::LoadedRun;
use crate::taxonomy::{InfeasibilityReason, SelfKnowledgeType};

pub const UNDEFINED_MARK: &str = "—";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no runs to report")]
    NoRuns,
    #[error("model `{model}` has two runs for variant {variant}: {first} and {second}")]
    DuplicateVariant {
        model: String,
        variant: PromptVariant,
        first: String,
        second: String,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Task and outcome bookkeeping for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub model_id: String,
    pub variant: PromptVariant,
    pub tasks: usize,
    pub valid: usize,
    pub malformed: usize,
    pub discarded: usize,
    pub failed: usize,
    pub classified: usize,
    pub parse_failures: usize,
    pub provider_errors: usize,
    /// Parse failures over classified tasks.
    pub parse_failure_rate: Option<f64>,
    /// Malformed plus discarded over all tasks.
    pub discard_rate: Option<f64>,
}

impl RunSummary {
    pub fn from_run(run: &LoadedRun) -> Self {
        let tasks = run.reviewed_tasks();
        let count = |s: TaskStatus| tasks.iter().filter(|t| t.status == s).count();
        let (valid, malformed, discarded, failed) = (
            count(TaskStatus::Valid),
            count(TaskStatus::Malformed),
            count(TaskStatus::Discarded),
            count(TaskStatus::Failed),
        );
        let classified = run.outcomes.len();
        let parse_failures = run
            .outcomes
            .iter()
            .filter(|o| o.verdict.is_parse_failure())
            .count();
        let rate = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
        Self {
            run_id: run.manifest.run_id.clone(),
            model_id: run.manifest.model_id.clone(),
            variant: run.manifest.variant,
            tasks: tasks.len(),
            valid,
            malformed,
            discarded,
            failed,
            classified,
            parse_failures,
            provider_errors: run.errors.len(),
            parse_failure_rate: rate(parse_failures, classified),
            discard_rate: rate(malformed + discarded, tasks.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub aggregation: Aggregation,
    /// `None` when some type's harmonic mean is undefined.
    pub ranking: Option<StrengthRanking>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub model_id: String,
    pub run_ids: Vec<String>,
    pub metrics: MetricsReport,
    pub rankings: Vec<RankingRow>,
    /// Patterns over all of the model's runs pooled.
    pub patterns: PatternReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbGridRow {
    pub model_id: String,
    /// Five types in order, then overall.
    pub values: [Option<f64>; 6],
}

/// Confidence balance per model and type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbGrid {
    pub aggregation: Aggregation,
    pub rows: Vec<CbGridRow>,
    /// Column means; present when more than one model is compared.
    pub mean: Option<[Option<f64>; 6]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub runs: Vec<RunSummary>,
    pub models: Vec<ModelSection>,
    pub cb_grid: CbGrid,
}

/// Arithmetic mean; undefined if any input is undefined or there are none.
pub fn column_mean(values: &[Option<f64>]) -> Option<f64> {
    let values: Option<Vec<f64>> = values.iter().copied().collect();
    let values = values?;
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

impl ReportBundle {
    /// Groups runs by model; each model may have at most one run per
    /// prompt variant.
    pub fn build(runs: &[LoadedRun]) -> Result<Self, ReportError> {
        if runs.is_empty() {
            return Err(ReportError::NoRuns);
        }
        let mut summaries: Vec<RunSummary> = runs.iter().map(RunSummary::from_run).collect();
        summaries.sort_by(|a, b| a.run_id.cmp(&b.run_id));

        let mut grouped: BTreeMap<&str, BTreeMap<PromptVariant, (&str, ConfusionMatrix)>> =
            BTreeMap::new();
        for run in runs {
            let m = &run.manifest;
            let matrix = ConfusionMatrix::from_run(&run.reviewed_tasks(), &run.outcomes)?;
            let by_variant = grouped.entry(m.model_id.as_str()).or_default();
            if let Some((first, _)) = by_variant.get(&m.variant) {
                let (a, b) = if *first <= m.run_id.as_str() {
                    (first.to_string(), m.run_id.clone())
                } else {
                    (m.run_id.clone(), first.to_string())
                };
                return Err(ReportError::DuplicateVariant {
                    model: m.model_id.clone(),
                    variant: m.variant,
                    first: a,
                    second: b,
                });
            }
            by_variant.insert(m.variant, (m.run_id.as_str(), matrix));
        }

        let mut models = Vec::new();
        for (model_id, by_variant) in &grouped {
            let matrices: BTreeMap<PromptVariant, ConfusionMatrix> = by_variant
                .iter()
                .map(|(v, (_, m))| (*v, m.clone()))
                .collect();
            let mut run_ids: Vec<String> =
                by_variant.values().map(|(id, _)| id.to_string()).collect();
            run_ids.sort();
            let metrics = MetricsReport::build(model_id, &matrices);
            let rankings = metrics
                .aggregations()
                .into_iter()
                .map(|aggregation| RankingRow {
                    aggregation,
                    ranking: strongest_weakest(&metrics, aggregation).ok(),
                })
                .collect();
            let mut pooled = ConfusionMatrix::new();
            for m in matrices.values() {
                pooled.merge(m);
            }
            models.push(ModelSection {
                model_id: model_id.to_string(),
                run_ids,
                metrics,
                rankings,
                patterns: PatternReport::from_matrix(&pooled),
            });
        }

        let aggregation = Aggregation::Macro;
        let rows: Vec<CbGridRow> = models
            .iter()
            .map(|s| CbGridRow {
                model_id: s.model_id.clone(),
                values: std::array::from_fn(|i| {
                    s.metrics
                        .row(Scope::all()[i], aggregation)
                        .and_then(|r| r.metrics.confidence_balance)
                }),
            })
            .collect();
        let mean = (rows.len() > 1).then(|| {
            std::array::from_fn(|i| {
                column_mean(&rows.iter().map(|r| r.values[i]).collect::<Vec<_>>())
            })
        });

        Ok(Self {
            runs: summaries,
            models,
            cb_grid: CbGrid {
                aggregation,
                rows,
                mean,
            },
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Long format: one metric value per line.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("model,scope,variant,metric,value\n");
        for section in &self.models {
            for row in &section.metrics.rows {
                for metric in MetricName::ALL {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{}",
                        csv_field(&section.model_id),
                        row.scope.slug(),
                        row.aggregation.slug(),
                        metric.slug(),
                        row.metrics.get(metric).map(|v| v.to_string()).unwrap_or_default()
                    );
                }
            }
        }
        out
    }

    /// Long format: one distribution entry per line.
    pub fn patterns_csv(&self) -> String {
        let mut out = String::from("model,pattern,key,count,share\n");
        for section in &self.models {
            let p = &section.patterns;
            let mut reasons = |name: &str, d: &Distribution<InfeasibilityReason>| {
                for e in &d.entries {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{}",
                        csv_field(&section.model_id),
                        name,
                        e.key.slug(),
                        e.count,
                        e.share
                    );
                }
            };
            reasons("overconfidence", &p.overconfidence);
            reasons("conservatism", &p.conservatism);
            for (name, d) in [
                ("type_confusion", &p.type_confusion),
                ("reason_confusion", &p.reason_confusion),
            ] {
                for e in &d.entries {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{}",
                        csv_field(&section.model_id),
                        name,
                        pair_slug(&e.key),
                        e.count,
                        e.share
                    );
                }
            }
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Self-knowledge evaluation report\n\n");

        out.push_str("## Runs\n\n");
        out.push_str("| Run | Model | Variant | Tasks | Valid | Malformed | Discarded | Failed | Classified | Parse failures | Parse-failure rate | Discard rate | Provider errors |\n");
        out.push_str("|---|---|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n");
        for r in &self.runs {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                md_cell(&r.run_id),
                md_cell(&r.model_id),
                r.variant.display_name(),
                r.tasks,
                r.valid,
                r.malformed,
                r.discarded,
                r.failed,
                r.classified,
                r.parse_failures,
                fmt2(r.parse_failure_rate),
                fmt2(r.discard_rate),
                r.provider_errors
            );
        }
        out.push('\n');

        for section in &self.models {
            let _ = writeln!(out, "## Metrics: {}\n", md_cell(&section.model_id));
            out.push_str("| Variant | Scope | A | F | I | Over | Conserv | CB | HM | n | Parse failures |\n");
            out.push_str("|---|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n");
            for row in &section.metrics.rows {
                let _ = write!(
                    out,
                    "| {} | {} |",
                    row.aggregation.display_name(),
                    row.scope.display_name()
                );
                for metric in MetricName::ALL {
                    let _ = write!(out, " {} |", fmt2(row.metrics.get(metric)));
                }
                let n = row.cells.map(|c| c.total().to_string());
                let pf = row.parse_failures.map(|p| p.to_string());
                let _ = writeln!(
                    out,
                    " {} | {} |",
                    n.as_deref().unwrap_or(""),
                    pf.as_deref().unwrap_or("")
                );
            }
            out.push('\n');
        }

        for aggregation in [Aggregation::Macro, Aggregation::Micro] {
            let _ = writeln!(
                out,
                "## Foresight and insight by type ({})\n",
                aggregation.display_name()
            );
            out.push_str("| Model |");
            for t in SelfKnowledgeType::ALL {
                let _ = write!(out, " {} F | {} I |", t.display_name(), t.display_name());
            }
            out.push('\n');
            out.push_str("|---|");
            out.push_str(&"---:|".repeat(10));
            out.push('\n');
            for section in &self.models {
                let _ = write!(out, "| {} |", md_cell(&section.model_id));
                for t in SelfKnowledgeType::ALL {
                    let m = section
                        .metrics
                        .row(Scope::Type(t), aggregation)
                        .map(|r| r.metrics)
                        .unwrap_or_default();
                    let _ = write!(out, " {} | {} |", fmt2(m.foresight), fmt2(m.insight));
                }
                out.push('\n');
            }
            out.push('\n');
        }

        out.push_str("## Strongest and weakest type\n\n");
        out.push_str("| Model | Aggregation | Strongest | Weakest |\n|---|---|---|---|\n");
        for section in &self.models {
            for r in &section.rankings {
                let (strong, weak) = match &r.ranking {
                    Some(k) => (
                        ranked_name(k.strongest, k.strongest_tied),
                        ranked_name(k.weakest, k.weakest_tied),
                    ),
                    None => (UNDEFINED_MARK.to_string(), UNDEFINED_MARK.to_string()),
                };
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} |",
                    md_cell(&section.model_id),
                    r.aggregation.display_name(),
                    strong,
                    weak
                );
            }
        }
        out.push('\n');

        let _ = writeln!(
            out,
            "## Confidence balance ({})\n",
            self.cb_grid.aggregation.display_name()
        );
        out.push_str("| Model |");
        for scope in Scope::all() {
            let _ = write!(out, " {} |", scope.display_name());
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(6));
        out.push('\n');
        for row in &self.cb_grid.rows {
            let _ = write!(out, "| {} |", md_cell(&row.model_id));
            for v in row.values {
                let _ = write!(out, " {} |", fmt2(v));
            }
            out.push('\n');
        }
        if let Some(mean) = &self.cb_grid.mean {
            out.push_str("| Mean |");
            for v in mean {
                let _ = write!(out, " {} |", fmt2(*v));
            }
            out.push('\n');
        }
        out.push('\n');

        out.push_str("## Misclassification patterns\n\n");
        out.push_str("| Model | Overconfidence | Conservatism | Type confusion | Reason confusion |\n|---|---|---|---|---|\n");
        for section in &self.models {
            let p = &section.patterns;
            let reason_top = |d: &Distribution<InfeasibilityReason>| {
                top_cell(d, |k| k.display_name().to_string())
            };
            let pair_top = |d: &Distribution<ConfusionPair>| {
                top_cell(d, |k| {
                    if k.within_type() {
                        format!("{} (within type)", k.label())
                    } else {
                        k.label()
                    }
                })
            };
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                md_cell(&section.model_id),
                reason_top(&p.overconfidence),
                reason_top(&p.conservatism),
                pair_top(&p.type_confusion),
                pair_top(&p.reason_confusion)
            );
        }
        out.push('\n');
        let _ = writeln!(
            out,
            "{UNDEFINED_MARK} marks a value whose denominator is zero (undefined), or an empty distribution."
        );
        out
    }
}

/// Two decimals; `-0.00` prints as `0.00`.
pub fn fmt2(v: Option<f64>) -> String {
    match v {
        None => UNDEFINED_MARK.to_string(),
        Some(x) => {
            let s = format!("{x:.2}");
            if s == "-0.00" {
                "0.00".to_string()
            } else {
                s
            }
        }
    }
}

fn ranked_name(t: SelfKnowledgeType, tied: bool) -> String {
    if tied {
        format!("{} (tie)", t.display_name())
    } else {
        t.display_name().to_string()
    }
}

fn top_cell<K>(d: &Distribution<K>, name: impl Fn(&K) -> String) -> String {
    match d.top() {
        None => UNDEFINED_MARK.to_string(),
        Some(e) => {
            let tie = if d.top_tied { ", tie" } else { "" };
            format!("{} ({:.0}%{tie})", name(&e.key), e.share * 100.0)
        }
    }
}

fn pair_slug(p: &ConfusionPair) -> String {
    match *p {
        ConfusionPair::Type {
            generated,
            classified,
        } => format!("{}>{}", generated.slug(), classified.slug()),
        ConfusionPair::Reason {
            generated,
            classified,
        } => format!("{}>{}", generated.slug(), classified.slug()),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn md_cell(s: &str) -> String {
    s.replace('|', "\\|")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_decimal_rendering() {
        assert_eq!(fmt2(Some(0.904)), "0.90");
        assert_eq!(fmt2(Some(-0.352)), "-0.35");
        assert_eq!(fmt2(Some(-0.001)), "0.00");
        assert_eq!(fmt2(Some(1.0)), "1.00");
        assert_eq!(fmt2(None), "—");
    }

    #[test]
    fn column_mean_is_undefined_if_any_cell_is() {
        assert_eq!(column_mean(&[Some(1.0), Some(0.0)]), Some(0.5));
        assert_eq!(column_mean(&[Some(1.0), None]), None);
        assert_eq!(column_mean(&[]), None);
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_field("gpt-4o"), "gpt-4o");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"x\""), "\"say \"\"x\"\"\"");
    }
}
