// SPDX-License-Identifier: MIT OR Apache-2.0

//! Layer-count decomposition of belief-attribution runs.
//!
//! For each scenario the model is read at three timepoints: after the
//! question prompt, after the prompt plus the true answer, and after the
//! prompt plus the wrong answer. At each timepoint every action's probe is
//! applied at every layer of the analysis window; the layer count for an
//! action is the number of window layers whose confidence exceeds the
//! presence threshold. Deltas are steered minus baseline counts, averaged
//! over scenarios.

mod figures;

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::DecompositionError;
use crate::probe::{LinearProbe, ProbeSuite};
use crate::taxonomy::{with_probe_suffix, Category, CognitiveAction};
use crate::tom_eval::{format_prompt, ConditionTag, Scenario};
use crate::toy_lm::{ByteTokenizer, Steering, ToyLM};

pub use figures::{bars_svg, heatmap_svg, radar_svg};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timepoint {
    AtQuestion,
    AfterTrueAnswer,
    AfterWrongAnswer,
}

impl Timepoint {
    pub const ALL: [Timepoint; 3] = [
        Timepoint::AtQuestion,
        Timepoint::AfterTrueAnswer,
        Timepoint::AfterWrongAnswer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Timepoint::AtQuestion => "at_question",
            Timepoint::AfterTrueAnswer => "after_true_answer",
            Timepoint::AfterWrongAnswer => "after_wrong_answer",
        }
    }
}

impl fmt::Display for Timepoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inclusive layer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisWindow {
    pub start: usize,
    pub end: usize,
}

impl AnalysisWindow {
    pub fn new(start: usize, end: usize) -> Result<Self, DecompositionError> {
        if end < start {
            return Err(DecompositionError::EmptyWindow);
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn layers(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

impl Default for AnalysisWindow {
    fn default() -> Self {
        Self { start: 10, end: 20 }
    }
}

/// Maps a layer index from a `reference_depth`-deep model onto a
/// `depth`-deep one, rounding up.
pub fn scale_layer(layer: usize, reference_depth: usize, depth: usize) -> usize {
    (layer * depth).div_ceil(reference_depth)
}

/// Proportionally rescaled window, e.g. 10..=20 of 30 onto 8 layers gives 3..=6.
pub fn scaled_window(
    start: usize,
    end: usize,
    reference_depth: usize,
    depth: usize,
) -> AnalysisWindow {
    AnalysisWindow {
        start: scale_layer(start, reference_depth, depth),
        end: scale_layer(end, reference_depth, depth),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimepointCapture {
    pub scenario_id: String,
    pub timepoint: Timepoint,
    pub condition_tag: ConditionTag,
    /// `[action][window layer]` probe confidences.
    pub confidences: Vec<Vec<f64>>,
}

/// Number of entries strictly above `threshold`.
pub fn layer_count(confidences: &[f64], threshold: f64) -> usize {
    confidences.iter().filter(|&&c| c > threshold).count()
}

/// The three capture prompts, each ending in the probe suffix.
pub fn capture_prompts(scenario: &Scenario, seed: u64) -> [(Timepoint, String); 3] {
    let (prompt, _) = format_prompt(scenario, seed);
    [
        (Timepoint::AtQuestion, with_probe_suffix(&prompt)),
        (
            Timepoint::AfterTrueAnswer,
            with_probe_suffix(&format!("{prompt} {}", scenario.true_answer)),
        ),
        (
            Timepoint::AfterWrongAnswer,
            with_probe_suffix(&format!("{prompt} {}", scenario.wrong_answer)),
        ),
    ]
}

fn resolve_probes<'a>(
    probes: &'a ProbeSuite,
    actions: &[CognitiveAction],
    window: AnalysisWindow,
) -> Result<Vec<Vec<&'a LinearProbe>>, DecompositionError> {
    actions
        .iter()
        .map(|a| {
            window
                .layers()
                .map(|l| probes.require(&a.name, l).map_err(DecompositionError::from))
                .collect()
        })
        .collect()
}

/// Three captures for one scenario under one condition.
pub fn capture_timepoints(
    model: &ToyLM,
    scenario: &Scenario,
    probes: &ProbeSuite,
    actions: &[CognitiveAction],
    steering: Option<&Steering<'_>>,
    window: AnalysisWindow,
    seed: u64,
) -> Result<Vec<TimepointCapture>, DecompositionError> {
    let resolved = resolve_probes(probes, actions, window)?;
    capture_resolved(model, scenario, &resolved, steering, window, seed)
}

fn capture_resolved(
    model: &ToyLM,
    scenario: &Scenario,
    probes: &[Vec<&LinearProbe>],
    steering: Option<&Steering<'_>>,
    window: AnalysisWindow,
    seed: u64,
) -> Result<Vec<TimepointCapture>, DecompositionError> {
    if window.end >= model.config().capture_points() {
        return Err(DecompositionError::Shape(format!(
            "window ends at layer {} but the model has {} capture points",
            window.end,
            model.config().capture_points()
        )));
    }
    let condition_tag = if steering.is_some() {
        ConditionTag::Steered
    } else {
        ConditionTag::Baseline
    };
    capture_prompts(scenario, seed)
        .into_iter()
        .map(|(timepoint, prompt)| {
            let trace = model.forward(&ByteTokenizer.encode(&prompt), steering)?;
            let confidences = probes
                .iter()
                .map(|layer_probes| {
                    layer_probes
                        .iter()
                        .map(|p| p.predict(&trace.residuals[p.layer]))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(TimepointCapture {
                scenario_id: scenario.id.clone(),
                timepoint,
                condition_tag,
                confidences,
            })
        })
        .collect()
}

/// Captures every scenario in parallel; output is ordered by scenario and
/// then timepoint.
pub fn capture_all(
    model: &ToyLM,
    scenarios: &[Scenario],
    probes: &ProbeSuite,
    actions: &[CognitiveAction],
    steering: Option<&Steering<'_>>,
    window: AnalysisWindow,
    seed: u64,
) -> Result<Vec<TimepointCapture>, DecompositionError> {
    let resolved = resolve_probes(probes, actions, window)?;
    let per_scenario = scenarios
        .par_iter()
        .map(|s| capture_resolved(model, s, &resolved, steering, window, seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_scenario.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDelta {
    pub action: String,
    pub category: String,
    pub timepoint: Timepoint,
    pub n: usize,
    pub mean_baseline: f64,
    pub mean_steered: f64,
    /// Mean of per-scenario `steered - baseline` layer counts.
    pub mean_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryDelta {
    pub category: String,
    pub timepoint: Timepoint,
    pub n_actions: usize,
    pub mean_baseline: f64,
    pub mean_steered: f64,
    /// Arithmetic mean of the member actions' `mean_delta`.
    pub mean_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mover {
    pub action: String,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopMovers {
    pub timepoint: Timepoint,
    pub increases: Vec<Mover>,
    pub decreases: Vec<Mover>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub window: AnalysisWindow,
    pub threshold: f64,
    pub n_scenarios: usize,
    /// Action-major, timepoint-minor, in taxonomy order.
    pub actions: Vec<ActionDelta>,
    /// Category-major, timepoint-minor; categories without members are omitted.
    pub categories: Vec<CategoryDelta>,
    pub top_movers: Vec<TopMovers>,
}

impl DeltaReport {
    pub fn action_delta(&self, action: &str, timepoint: Timepoint) -> Option<&ActionDelta> {
        self.actions
            .iter()
            .find(|d| d.action == action && d.timepoint == timepoint)
    }

    pub fn category_delta(&self, category: &str, timepoint: Timepoint) -> Option<&CategoryDelta> {
        self.categories
            .iter()
            .find(|d| d.category == category && d.timepoint == timepoint)
    }
}

type Keyed<'a> = BTreeMap<(&'a str, Timepoint), &'a TimepointCapture>;

fn index<'a>(
    captures: &'a [TimepointCapture],
    n_actions: usize,
) -> Result<Keyed<'a>, DecompositionError> {
    let mut map = BTreeMap::new();
    for c in captures {
        if c.confidences.len() != n_actions {
            return Err(DecompositionError::Shape(format!(
                "{} at {} has {} action rows, expected {n_actions}",
                c.scenario_id,
                c.timepoint,
                c.confidences.len()
            )));
        }
        if map
            .insert((c.scenario_id.as_str(), c.timepoint), c)
            .is_some()
        {
            return Err(DecompositionError::Shape(format!(
                "duplicate capture for {} at {}",
                c.scenario_id, c.timepoint
            )));
        }
    }
    Ok(map)
}

fn mean(sum: i64, n: usize) -> f64 {
    sum as f64 / n as f64
}

/// Pairs captures by (scenario, timepoint) and aggregates layer-count deltas.
/// Sums are taken over integers, so swapping the two inputs negates every
/// delta exactly.
pub fn compute_deltas(
    baseline: &[TimepointCapture],
    steered: &[TimepointCapture],
    actions: &[CognitiveAction],
    window: AnalysisWindow,
    threshold: f64,
    top_k: usize,
) -> Result<DeltaReport, DecompositionError> {
    let base = index(baseline, actions.len())?;
    let steer = index(steered, actions.len())?;
    for (key, other) in [(&base, &steer), (&steer, &base)]
        .into_iter()
        .flat_map(|(a, b)| a.keys().map(move |k| (k, b)))
    {
        if !other.contains_key(key) {
            return Err(DecompositionError::Unpaired {
                scenario: key.0.to_owned(),
                timepoint: key.1.to_string(),
            });
        }
    }
    if base.is_empty() {
        return Err(DecompositionError::Shape("no captures".into()));
    }
    for c in base.values().chain(steer.values()) {
        if let Some(row) = c.confidences.iter().find(|r| r.len() != window.len()) {
            return Err(DecompositionError::Shape(format!(
                "{} at {} has {} layers, window has {}",
                c.scenario_id,
                c.timepoint,
                row.len(),
                window.len()
            )));
        }
    }

    // counts[timepoint][action] = (sum_base, sum_steered, n)
    let mut sums = vec![vec![(0i64, 0i64, 0usize); actions.len()]; Timepoint::ALL.len()];
    for (&(id, timepoint), b) in &base {
        let s = steer[&(id, timepoint)];
        let row = &mut sums[timepoint as usize];
        for (a, slot) in row.iter_mut().enumerate() {
            slot.0 += layer_count(&b.confidences[a], threshold) as i64;
            slot.1 += layer_count(&s.confidences[a], threshold) as i64;
            slot.2 += 1;
        }
    }

    let mut action_rows = Vec::with_capacity(actions.len() * 3);
    for (a, action) in actions.iter().enumerate() {
        for timepoint in Timepoint::ALL {
            let (sb, ss, n) = sums[timepoint as usize][a];
            action_rows.push(ActionDelta {
                action: action.name.clone(),
                category: action.category.to_string(),
                timepoint,
                n,
                mean_baseline: mean(sb, n),
                mean_steered: mean(ss, n),
                mean_delta: mean(ss - sb, n),
            });
        }
    }

    let mut category_rows = Vec::new();
    for category in Category::ALL {
        for timepoint in Timepoint::ALL {
            let members: Vec<&ActionDelta> = action_rows
                .iter()
                .filter(|d| d.category == category.as_str() && d.timepoint == timepoint)
                .collect();
            if members.is_empty() {
                continue;
            }
            let k = members.len() as f64;
            category_rows.push(CategoryDelta {
                category: category.to_string(),
                timepoint,
                n_actions: members.len(),
                mean_baseline: members.iter().map(|d| d.mean_baseline).sum::<f64>() / k,
                mean_steered: members.iter().map(|d| d.mean_steered).sum::<f64>() / k,
                mean_delta: members.iter().map(|d| d.mean_delta).sum::<f64>() / k,
            });
        }
    }

    let top_movers = Timepoint::ALL
        .into_iter()
        .map(|timepoint| {
            let mut rows: Vec<&ActionDelta> = action_rows
                .iter()
                .filter(|d| d.timepoint == timepoint)
                .collect();
            rows.sort_by(|x, y| {
                y.mean_delta
                    .total_cmp(&x.mean_delta)
                    .then(x.action.cmp(&y.action))
            });
            let mover = |d: &&ActionDelta| Mover {
                action: d.action.clone(),
                delta: d.mean_delta,
            };
            let increases = rows
                .iter()
                .filter(|d| d.mean_delta > 0.0)
                .take(top_k)
                .map(mover)
                .collect();
            rows.sort_by(|x, y| {
                x.mean_delta
                    .total_cmp(&y.mean_delta)
                    .then(x.action.cmp(&y.action))
            });
            let decreases = rows
                .iter()
                .filter(|d| d.mean_delta < 0.0)
                .take(top_k)
                .map(mover)
                .collect();
            TopMovers {
                timepoint,
                increases,
                decreases,
            }
        })
        .collect();

    Ok(DeltaReport {
        window,
        threshold,
        n_scenarios: base
            .keys()
            .map(|k| k.0)
            .collect::<std::collections::BTreeSet<_>>()
            .len(),
        actions: action_rows,
        categories: category_rows,
        top_movers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Table,
    Structured,
    Figure,
}

/// Tab-separated rows, one per (action, timepoint), followed by the
/// category rows.
pub fn report_table(report: &DeltaReport) -> String {
    let mut out = String::from("action\tcategory\ttimepoint\tn\tbaseline\tsteered\tdelta\n");
    for d in &report.actions {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:+.4}",
            d.action, d.category, d.timepoint, d.n, d.mean_baseline, d.mean_steered, d.mean_delta
        );
    }
    out.push_str("\ncategory\ttimepoint\tn_actions\tbaseline\tsteered\tdelta\n");
    for c in &report.categories {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:+.4}",
            c.category, c.timepoint, c.n_actions, c.mean_baseline, c.mean_steered, c.mean_delta
        );
    }
    out
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf, DecompositionError> {
    fs::write(&path, contents).map_err(|source| DecompositionError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes the report into `dir` and returns the files written:
/// `deltas.tsv`, `deltas.json`, or `radar.svg`, `bars.svg` and `heatmap.svg`.
pub fn emit_report(
    report: &DeltaReport,
    format: ReportFormat,
    dir: &Path,
) -> Result<Vec<PathBuf>, DecompositionError> {
    fs::create_dir_all(dir).map_err(|source| DecompositionError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    match format {
        ReportFormat::Table => Ok(vec![write(dir.join("deltas.tsv"), &report_table(report))?]),
        ReportFormat::Structured => {
            let json = serde_json::to_string_pretty(report).expect("report serializes");
            Ok(vec![write(dir.join("deltas.json"), &json)?])
        }
        ReportFormat::Figure => Ok(vec![
            write(dir.join("radar.svg"), &radar_svg(report))?,
            write(dir.join("bars.svg"), &bars_svg(report))?,
            write(dir.join("heatmap.svg"), &heatmap_svg(report))?,
        ]),
    }
}

pub fn load_report(path: &Path) -> Result<DeltaReport, DecompositionError> {
    let text = fs::read_to_string(path).map_err(|source| DecompositionError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| DecompositionError::Report {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::builtin_taxonomy;

    fn capture(
        id: &str,
        timepoint: Timepoint,
        tag: ConditionTag,
        rows: Vec<Vec<f64>>,
    ) -> TimepointCapture {
        TimepointCapture {
            scenario_id: id.into(),
            timepoint,
            condition_tag: tag,
            confidences: rows,
        }
    }

    fn uniform(actions: usize, window: usize, value: f64) -> Vec<Vec<f64>> {
        vec![vec![value; window]; actions]
    }

    fn full_set(
        id: &str,
        tag: ConditionTag,
        actions: usize,
        window: usize,
        value: f64,
    ) -> Vec<TimepointCapture> {
        Timepoint::ALL
            .into_iter()
            .map(|t| capture(id, t, tag, uniform(actions, window, value)))
            .collect()
    }

    #[test]
    fn layer_count_examples() {
        assert_eq!(layer_count(&[0.99; 11], 0.5), 11);
        assert_eq!(layer_count(&[0.01; 11], 0.5), 0);
        assert_eq!(layer_count(&[0.6, 0.4, 0.7, 0.5, 0.51], 0.5), 3);
    }

    #[test]
    fn windows() {
        assert_eq!(AnalysisWindow::default().len(), 11);
        assert_eq!(
            scaled_window(10, 20, 30, 8),
            AnalysisWindow { start: 3, end: 6 }
        );
        assert_eq!(
            scaled_window(14, 30, 30, 8),
            AnalysisWindow { start: 4, end: 8 }
        );
        assert_eq!(scaled_window(10, 20, 30, 30), AnalysisWindow::default());
        assert!(AnalysisWindow::new(4, 3).is_err());
    }

    #[test]
    fn identical_captures_give_zero_deltas() {
        let actions = builtin_taxonomy();
        let base = full_set("s0", ConditionTag::Baseline, 45, 11, 0.7);
        let report =
            compute_deltas(&base, &base, &actions, AnalysisWindow::default(), 0.5, 10).unwrap();
        assert_eq!(report.actions.len(), 135);
        assert_eq!(report.categories.len(), 15);
        assert!(report.actions.iter().all(|d| d.mean_delta == 0.0));
        assert!(report
            .top_movers
            .iter()
            .all(|m| m.increases.is_empty() && m.decreases.is_empty()));
    }

    #[test]
    fn single_scenario_arithmetic() {
        let actions = &builtin_taxonomy()[..1];
        let window = AnalysisWindow::new(0, 5).unwrap();
        let mut base = full_set("s0", ConditionTag::Baseline, 1, 6, 0.1);
        let mut steer = full_set("s0", ConditionTag::Steered, 1, 6, 0.1);
        base[0].confidences[0] = vec![0.9, 0.9, 0.9, 0.1, 0.1, 0.1];
        steer[0].confidences[0] = vec![0.9, 0.9, 0.9, 0.9, 0.9, 0.1];
        let report = compute_deltas(&base, &steer, actions, window, 0.5, 10).unwrap();
        let d = report
            .action_delta(&actions[0].name, Timepoint::AtQuestion)
            .unwrap();
        assert_eq!(
            (d.mean_baseline, d.mean_steered, d.mean_delta),
            (3.0, 5.0, 2.0)
        );
        assert_eq!(report.top_movers[0].increases.len(), 1);
    }

    #[test]
    fn unpaired_and_shape_errors() {
        let actions = &builtin_taxonomy()[..2];
        let window = AnalysisWindow::new(0, 2).unwrap();
        let base = full_set("s0", ConditionTag::Baseline, 2, 3, 0.3);
        let steer = full_set("s0", ConditionTag::Steered, 2, 3, 0.3);
        let err = compute_deltas(&base, &steer[..2], actions, window, 0.5, 3).unwrap_err();
        assert!(matches!(err, DecompositionError::Unpaired { .. }));
        assert_eq!(
            err.to_string(),
            "unpaired capture for scenario s0 at after_wrong_answer"
        );
        let narrow = full_set("s0", ConditionTag::Steered, 2, 2, 0.3);
        assert!(matches!(
            compute_deltas(&base, &narrow, actions, window, 0.5, 3),
            Err(DecompositionError::Shape(_))
        ));
    }

    #[test]
    fn structured_round_trip_and_figures() {
        let actions = builtin_taxonomy();
        let base = full_set("s0", ConditionTag::Baseline, 45, 11, 0.4);
        let mut steer = full_set("s0", ConditionTag::Steered, 45, 11, 0.4);
        steer[1].confidences[3] = vec![0.8; 11];
        let report =
            compute_deltas(&base, &steer, &actions, AnalysisWindow::default(), 0.5, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&report, ReportFormat::Structured, dir.path()).unwrap();
        assert_eq!(load_report(&files[0]).unwrap(), report);
        let figs = emit_report(&report, ReportFormat::Figure, dir.path()).unwrap();
        assert_eq!(figs.len(), 3);
        let table = emit_report(&report, ReportFormat::Table, dir.path()).unwrap();
        let text = fs::read_to_string(&table[0]).unwrap();
        assert_eq!(text.lines().count(), 1 + 135 + 1 + 1 + 15);
    }
}
