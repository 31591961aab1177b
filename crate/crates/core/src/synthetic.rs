// SPDX-License-Identifier: MIT OR Apache-2.0

//! Templated desk-scale corpora for the toy model: labeled first-person
//! narratives per cognitive action, contrastive belief triplets and
//! belief-attribution scenarios, plus final-token activation capture.

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation_store::{ActivationDataset, ActivationRecord, Split};
use crate::error::ModelError;
use crate::seed::{derive_seed, hash64, rng};
use crate::steering::{BeliefCondition, ContrastiveTriplet};
use crate::taxonomy::{with_probe_suffix, CognitiveAction, DOMAINS};
use crate::tom_eval::{Scenario, ScenarioCondition};
use crate::toy_lm::{ByteTokenizer, ToyLM};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledText {
    pub id: String,
    pub text: String,
    pub label: String,
    pub category: String,
}

const OPENERS: [&str; 6] = [
    "Yesterday, while dealing with",
    "This morning, in the middle of",
    "Last week, during",
    "Tonight, thinking about",
    "Earlier today, busy with",
    "On the weekend, caught up in",
];

const CLOSERS: [&str; 5] = [
    "It felt natural.",
    "I kept at it for a while.",
    "That changed how I moved on.",
    "It took a minute.",
    "I wrote it down afterwards.",
];

/// `per_action` short narratives for every action, cycling through the
/// domains. Ids are `{action}-{i:04}`.
pub fn labeled_texts(
    actions: &[CognitiveAction],
    per_action: usize,
    seed: u64,
) -> Vec<LabeledText> {
    let mut out = Vec::with_capacity(actions.len() * per_action);
    for action in actions {
        let mut rng = rng(derive_seed(seed, &format!("texts:{}", action.name)));
        for i in 0..per_action {
            let domain = DOMAINS[(i + hash64(action.name.as_bytes()) as usize) % DOMAINS.len()];
            let opener = OPENERS.choose(&mut rng).expect("non-empty");
            let closer = CLOSERS.choose(&mut rng).expect("non-empty");
            out.push(LabeledText {
                id: format!("{}-{i:04}", action.name),
                text: format!("{opener} {domain}, I was {}. {closer}", action.description),
                label: action.name.clone(),
                category: action.category.to_string(),
            });
        }
    }
    out
}

const NAMES: [&str; 12] = [
    "Noor", "Malik", "Ines", "Tomas", "Priya", "Jonah", "Aiko", "Ravi", "Lena", "Omar", "Sofia",
    "Kwame",
];

// (container, original contents, swapped contents)
const OBJECTS: [(&str, &str, &str); 10] = [
    ("pitcher", "oat milk", "almond milk"),
    ("jar", "sugar", "salt"),
    ("box", "crayons", "markers"),
    ("bottle", "lemonade", "iced tea"),
    ("bag", "apples", "pears"),
    ("drawer", "batteries", "fuses"),
    ("tin", "cookies", "crackers"),
    ("basket", "towels", "blankets"),
    ("kettle", "green tea", "black tea"),
    ("bowl", "rice", "couscous"),
];

struct BeliefItem {
    story: String,
    question: String,
    correct: String,
    incorrect: String,
}

fn belief_item(rng: &mut impl Rng, false_belief: bool) -> BeliefItem {
    let name = *NAMES.choose(rng).expect("non-empty");
    let other = loop {
        let candidate = *NAMES.choose(rng).expect("non-empty");
        if candidate != name {
            break candidate;
        }
    };
    let &(container, original, swapped) = OBJECTS.choose(rng).expect("non-empty");
    let witness = if false_belief {
        format!("While {name} is away, {other} replaces it with {swapped}.")
    } else {
        format!("{name} watches {other} replace it with {swapped}.")
    };
    let story = format!("{name} fills the {container} with {original}. {witness}");
    let question = format!("Does {name} believe the {container} holds {original} or {swapped}?");
    let believed = |contents: &str| format!("{name} believes the {container} holds {contents}.");
    let (correct, incorrect) = if false_belief {
        (believed(original), believed(swapped))
    } else {
        (believed(swapped), believed(original))
    };
    BeliefItem {
        story,
        question,
        correct,
        incorrect,
    }
}

/// `n` contrastive triplets alternating false- and true-belief items, so an
/// even `n` is split exactly in half.
pub fn belief_triplets(n: usize, seed: u64) -> Vec<ContrastiveTriplet> {
    let mut rng = rng(derive_seed(seed, "triplets"));
    (0..n)
        .map(|i| {
            let false_belief = i % 2 == 0;
            let item = belief_item(&mut rng, false_belief);
            ContrastiveTriplet {
                story: item.story,
                question: item.question,
                positive: item.correct,
                negative: item.incorrect,
                condition: if false_belief {
                    BeliefCondition::FalseBelief
                } else {
                    BeliefCondition::TrueBelief
                },
            }
        })
        .collect()
}

/// `n` forward-belief scenarios with ids `s0000`, `s0001`, ..., alternating
/// false- and true-belief conditions.
pub fn belief_scenarios(n: usize, seed: u64) -> Vec<Scenario> {
    let mut rng = rng(derive_seed(seed, "scenarios"));
    (0..n)
        .map(|i| {
            let false_belief = i % 2 == 0;
            let item = belief_item(&mut rng, false_belief);
            Scenario {
                id: format!("s{i:04}"),
                story: item.story,
                question: item.question,
                true_answer: item.correct,
                wrong_answer: item.incorrect,
                condition: if false_belief {
                    ScenarioCondition::ForwardBeliefFalse
                } else {
                    ScenarioCondition::ForwardBeliefTrue
                },
            }
        })
        .collect()
}

/// Final-token residuals at every capture point, flattened layer-major.
pub fn final_token_activations(model: &ToyLM, text: &str) -> Result<Vec<f32>, ModelError> {
    let trace = model.forward(&ByteTokenizer.encode(text), None)?;
    Ok(trace
        .residuals
        .iter()
        .flatten()
        .map(|&x| x as f32)
        .collect())
}

/// Captures the labeled texts with the probe suffix appended. Texts run in
/// parallel; records keep the input order.
pub fn capture_labeled(
    model: &ToyLM,
    texts: &[LabeledText],
) -> Result<ActivationDataset, ModelError> {
    let records = texts
        .par_iter()
        .map(|t| {
            let prompt = with_probe_suffix(&t.text);
            Ok(ActivationRecord {
                id: t.id.clone(),
                values: final_token_activations(model, &prompt)?,
                label: Some(t.label.clone()),
                category: Some(t.category.clone()),
                split: Split::None,
                text_hash: hash64(prompt.as_bytes()),
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let config = model.config();
    let mut dataset =
        ActivationDataset::new(config.capture_points(), config.hidden_dim, "toy-lm:labeled");
    dataset.records = records;
    Ok(dataset)
}

/// Row-aligned positive and negative completion activations for CAA.
pub fn capture_triplets(
    model: &ToyLM,
    triplets: &[ContrastiveTriplet],
) -> Result<(ActivationDataset, ActivationDataset), ModelError> {
    let config = model.config();
    let capture = |positive: bool| -> Result<ActivationDataset, ModelError> {
        let records = triplets
            .par_iter()
            .enumerate()
            .map(|(i, t)| {
                let text = t.completion_text(positive);
                Ok(ActivationRecord {
                    id: format!("t{i:04}-{}", if positive { "pos" } else { "neg" }),
                    values: final_token_activations(model, &text)?,
                    label: None,
                    category: None,
                    split: Split::None,
                    text_hash: hash64(text.as_bytes()),
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let source = if positive {
            "toy-lm:triplets+"
        } else {
            "toy-lm:triplets-"
        };
        let mut dataset =
            ActivationDataset::new(config.capture_points(), config.hidden_dim, source);
        dataset.records = records;
        Ok(dataset)
    };
    Ok((capture(true)?, capture(false)?))
}
