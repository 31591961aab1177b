// SPDX-License-Identifier: MIT OR Apache-2.0

//! Belief-attribution evaluation by answer ranking.
//!
//! Each scenario is rendered as a two-option multiple-choice prompt with the
//! true answer placed at `a)` or `b)` by a keyed hash of (scenario id, seed).
//! The model's next-token probabilities for the letters `a` and `b` are
//! compared and the more probable letter is taken as the answer; ties go to
//! `a`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::seed::keyed_hash;
use crate::toy_lm::{ByteTokenizer, Steering, ToyLM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioCondition {
    ForwardBeliefFalse,
    ForwardBeliefTrue,
    #[serde(other)]
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub story: String,
    pub question: String,
    pub true_answer: String,
    pub wrong_answer: String,
    pub condition: ScenarioCondition,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), EvalError> {
        let invalid = |message: &str| EvalError::InvalidScenario {
            id: self.id.clone(),
            message: message.to_owned(),
        };
        if self.id.is_empty() {
            return Err(invalid("empty id"));
        }
        for text in [
            &self.story,
            &self.question,
            &self.true_answer,
            &self.wrong_answer,
        ] {
            if text.trim().is_empty() {
                return Err(invalid("empty text field"));
            }
        }
        if self.true_answer == self.wrong_answer {
            return Err(invalid("true and wrong answers are identical"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionTag {
    Baseline,
    Steered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Letter {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub scenario_id: String,
    pub a_holds_true_answer: bool,
    pub p_a: f64,
    pub p_b: f64,
    pub chosen: Letter,
    pub correct: bool,
    pub condition_tag: ConditionTag,
}

impl EvalResult {
    /// Applies the choice rule to a probability pair.
    pub fn decide(
        scenario_id: &str,
        a_holds_true_answer: bool,
        p_a: f64,
        p_b: f64,
        condition_tag: ConditionTag,
    ) -> Self {
        let chosen = if p_a >= p_b { Letter::A } else { Letter::B };
        let correct = (chosen == Letter::A) == a_holds_true_answer;
        Self {
            scenario_id: scenario_id.to_owned(),
            a_holds_true_answer,
            p_a,
            p_b,
            chosen,
            correct,
            condition_tag,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub results: Vec<EvalResult>,
    pub n_correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub n: usize,
    pub n_correct_baseline: usize,
    pub n_correct_steered: usize,
    pub acc_baseline: f64,
    pub acc_steered: f64,
    pub flips_to_correct: usize,
    pub flips_to_incorrect: usize,
}

impl ComparisonReport {
    /// `n * (acc_steered - acc_baseline) == flips_to_correct - flips_to_incorrect`,
    /// checked on the underlying integer counts.
    pub fn flip_identity_holds(&self) -> bool {
        self.n_correct_steered as i64 - self.n_correct_baseline as i64
            == self.flips_to_correct as i64 - self.flips_to_incorrect as i64
    }
}

/// Whether the true answer goes in slot `a` for this (id, seed).
pub fn true_answer_at_a(scenario_id: &str, seed: u64) -> bool {
    keyed_hash(seed, scenario_id) & 1 == 0
}

/// Renders the multiple-choice prompt; returns it with the position flag.
pub fn format_prompt(scenario: &Scenario, seed: u64) -> (String, bool) {
    let a_true = true_answer_at_a(&scenario.id, seed);
    let (a, b) = if a_true {
        (&scenario.true_answer, &scenario.wrong_answer)
    } else {
        (&scenario.wrong_answer, &scenario.true_answer)
    };
    let prompt = format!(
        "Story: {}\n\nQuestion: {}\nChoose one of the following:\na) {a}\nb) {b}\n\n\
         Please answer with the letter of your choice (a or b).\nAnswer:",
        scenario.story, scenario.question
    );
    (prompt, a_true)
}

pub fn load_scenarios(path: &Path) -> Result<Vec<Scenario>, EvalError> {
    let io = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io)?;
    let mut scenarios = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let scenario: Scenario = serde_json::from_str(&line).map_err(|e| EvalError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        scenario.validate()?;
        if !ids.insert(scenario.id.clone()) {
            return Err(EvalError::DuplicateId(scenario.id));
        }
        scenarios.push(scenario);
    }
    Ok(scenarios)
}

pub fn save_scenarios(scenarios: &[Scenario], path: &Path) -> Result<(), EvalError> {
    let mut out = String::new();
    for s in scenarios {
        out.push_str(&serde_json::to_string(s).expect("scenario serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Evaluates every scenario under one condition. Scenarios run in parallel
/// on the current rayon pool; results keep the input order.
pub fn evaluate_set(
    model: &ToyLM,
    scenarios: &[Scenario],
    steering: Option<&Steering<'_>>,
    seed: u64,
) -> Result<EvalSummary, EvalError> {
    if scenarios.is_empty() {
        return Err(EvalError::Empty);
    }
    let tokenizer = ByteTokenizer;
    let letter_a = tokenizer.letter_variants('a');
    let letter_b = tokenizer.letter_variants('b');
    let tag = if steering.is_some() {
        ConditionTag::Steered
    } else {
        ConditionTag::Baseline
    };
    let results = scenarios
        .par_iter()
        .map(|scenario| {
            scenario.validate()?;
            let (prompt, a_true) = format_prompt(scenario, seed);
            let tokens = tokenizer.encode(&prompt);
            let (p_a, p_b) = model.letter_probabilities(&tokens, &letter_a, &letter_b, steering)?;
            Ok(EvalResult::decide(&scenario.id, a_true, p_a, p_b, tag))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(summarize(results))
}

pub fn summarize(results: Vec<EvalResult>) -> EvalSummary {
    let n_correct = results.iter().filter(|r| r.correct).count();
    let accuracy = n_correct as f64 / results.len().max(1) as f64;
    EvalSummary {
        results,
        n_correct,
        accuracy,
    }
}

/// Per-scenario transition counts between two runs over the same items.
pub fn compare_conditions(
    baseline: &[EvalResult],
    steered: &[EvalResult],
) -> Result<ComparisonReport, EvalError> {
    if baseline.len() != steered.len() {
        return Err(EvalError::LengthMismatch {
            baseline: baseline.len(),
            steered: steered.len(),
        });
    }
    let (mut to_correct, mut to_incorrect) = (0, 0);
    for (index, (b, s)) in baseline.iter().zip(steered).enumerate() {
        if b.scenario_id != s.scenario_id {
            return Err(EvalError::IdMismatch {
                index,
                baseline: b.scenario_id.clone(),
                steered: s.scenario_id.clone(),
            });
        }
        if b.a_holds_true_answer != s.a_holds_true_answer {
            return Err(EvalError::PositionMismatch(b.scenario_id.clone()));
        }
        match (b.correct, s.correct) {
            (false, true) => to_correct += 1,
            (true, false) => to_incorrect += 1,
            _ => {}
        }
    }
    let n = baseline.len();
    let n_correct_baseline = baseline.iter().filter(|r| r.correct).count();
    let n_correct_steered = steered.iter().filter(|r| r.correct).count();
    let denom = n.max(1) as f64;
    let report = ComparisonReport {
        n,
        n_correct_baseline,
        n_correct_steered,
        acc_baseline: n_correct_baseline as f64 / denom,
        acc_steered: n_correct_steered as f64 / denom,
        flips_to_correct: to_correct,
        flips_to_incorrect: to_incorrect,
    };
    debug_assert!(report.flip_identity_holds());
    Ok(report)
}

/// Reverse flips implied by a headline accuracy change and a forward-flip
/// count: `flips_to_correct - round(n * (acc_steered - acc_baseline))`.
pub fn implied_flips_to_incorrect(
    n: usize,
    acc_baseline: f64,
    acc_steered: f64,
    flips_to_correct: usize,
) -> i64 {
    let net = (n as f64 * (acc_steered - acc_baseline)).round() as i64;
    flips_to_correct as i64 - net
}

/// Tab-separated per-scenario results.
pub fn results_table(results: &[EvalResult]) -> String {
    let mut out = String::from("scenario_id\tcondition\ta_holds_true\tp_a\tp_b\tchosen\tcorrect\n");
    for r in results {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.9}\t{:.9}\t{}\t{}",
            r.scenario_id,
            match r.condition_tag {
                ConditionTag::Baseline => "baseline",
                ConditionTag::Steered => "steered",
            },
            r.a_holds_true_answer,
            r.p_a,
            r.p_b,
            match r.chosen {
                Letter::A => "a",
                Letter::B => "b",
            },
            r.correct
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(id: &str) -> Scenario {
        Scenario {
            id: id.into(),
            story:
                "Noor fills a pitcher with oat milk. A coworker swaps it for almond milk unseen."
                    .into(),
            question: "Does Noor believe the pitcher contains oat milk or almond milk?".into(),
            true_answer: "Noor believes the milk pitcher contains oat milk.".into(),
            wrong_answer: "Noor believes the milk pitcher contains almond milk.".into(),
            condition: ScenarioCondition::ForwardBeliefFalse,
        }
    }

    #[test]
    fn prompt_layout() {
        let s = scenario("x1");
        let (prompt, a_true) = format_prompt(&s, 3);
        let (a, b) = if a_true {
            (&s.true_answer, &s.wrong_answer)
        } else {
            (&s.wrong_answer, &s.true_answer)
        };
        let expected = format!(
            "Story: {}\n\nQuestion: {}\nChoose one of the following:\na) {}\nb) {}\n\nPlease answer with the letter of your choice (a or b).\nAnswer:",
            s.story, s.question, a, b
        );
        assert_eq!(prompt, expected);
        assert_eq!(prompt.matches(&s.true_answer).count(), 1);
        assert_eq!(prompt.matches(&s.wrong_answer).count(), 1);
        assert_eq!(format_prompt(&s, 3), (prompt, a_true));
    }

    #[test]
    fn choice_rule() {
        let r = EvalResult::decide("s", true, 0.7, 0.3, ConditionTag::Baseline);
        assert_eq!((r.chosen, r.correct), (Letter::A, true));
        let r = EvalResult::decide("s", false, 0.5, 0.5, ConditionTag::Baseline);
        assert_eq!((r.chosen, r.correct), (Letter::A, false));
        let r = EvalResult::decide("s", false, 0.2, 0.8, ConditionTag::Steered);
        assert_eq!((r.chosen, r.correct), (Letter::B, true));
    }

    #[test]
    fn comparison_identity_and_errors() {
        let base = vec![
            EvalResult::decide("a", true, 0.7, 0.3, ConditionTag::Baseline),
            EvalResult::decide("b", true, 0.2, 0.8, ConditionTag::Baseline),
        ];
        let same = compare_conditions(&base, &base).unwrap();
        assert_eq!((same.flips_to_correct, same.flips_to_incorrect), (0, 0));

        let steered = vec![
            EvalResult::decide("a", true, 0.3, 0.7, ConditionTag::Steered),
            EvalResult::decide("b", true, 0.9, 0.1, ConditionTag::Steered),
        ];
        let r = compare_conditions(&base, &steered).unwrap();
        assert_eq!((r.flips_to_correct, r.flips_to_incorrect), (1, 1));
        assert!(r.flip_identity_holds());

        let moved = vec![
            EvalResult::decide("a", false, 0.3, 0.7, ConditionTag::Steered),
            steered[1].clone(),
        ];
        let err = compare_conditions(&base, &moved).unwrap_err();
        assert_eq!(err.to_string(), "position mismatch for scenario a");
        assert!(matches!(
            compare_conditions(&base, &steered[..1]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn reference_reverse_flips() {
        assert_eq!(implied_flips_to_incorrect(1000, 0.325, 0.467, 217), 75);
    }

    #[test]
    fn scenario_file_round_trip_and_other_condition() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let list = vec![scenario("a"), scenario("b")];
        save_scenarios(&list, &path).unwrap();
        assert_eq!(load_scenarios(&path).unwrap(), list);

        let mut line = serde_json::to_value(scenario("c")).unwrap();
        line["condition"] = "backward_belief".into();
        fs::write(&path, format!("{line}\n")).unwrap();
        assert_eq!(
            load_scenarios(&path).unwrap()[0].condition,
            ScenarioCondition::Other
        );

        fs::write(
            &path,
            format!(
                "{}\n{}\n",
                serde_json::to_string(&scenario("a")).unwrap(),
                serde_json::to_string(&scenario("a")).unwrap()
            ),
        )
        .unwrap();
        assert!(matches!(
            load_scenarios(&path),
            Err(EvalError::DuplicateId(_))
        ));
    }

    #[test]
    fn rejects_invalid_and_empty() {
        let mut s = scenario("a");
        s.wrong_answer = s.true_answer.clone();
        assert!(s.validate().is_err());
        let model = ToyLM::new(crate::toy_lm::ToyLMConfig {
            n_layers: 1,
            hidden_dim: 8,
            n_heads: 2,
            ..Default::default()
        })
        .unwrap();
        assert!(matches!(
            evaluate_set(&model, &[], None, 0),
            Err(EvalError::Empty)
        ));
    }
}
