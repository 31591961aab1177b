// SPDX-License-Identifier: MIT OR Apache-2.0

//! The cognitive-action vocabulary, generation prompts, and the Gaussian
//! activation generator used as a desk-scale training oracle.
//!
//! The built-in taxonomy has 45 actions in five categories
//! (7 metacognitive, 16 analytical, 6 creative, 15 emotional, 1 memory).
//! Some write-ups of this taxonomy speak of four categories; memory is kept
//! as its own fifth category here.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::activation_store::{ActivationDataset, ActivationRecord, Split};
use crate::error::TaxonomyError;
use crate::seed::{hash64, rng};

/// Appended to every text before final-token extraction, at training and at
/// inference time.
pub const PROBE_SUFFIX: &str = "The cognitive action being demonstrated here is";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Metacognitive,
    Analytical,
    Creative,
    Emotional,
    Memory,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Metacognitive,
        Category::Analytical,
        Category::Creative,
        Category::Emotional,
        Category::Memory,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Metacognitive => "Metacognitive",
            Category::Analytical => "Analytical",
            Category::Creative => "Creative",
            Category::Emotional => "Emotional",
            Category::Memory => "Memory",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| TaxonomyError::UnknownCategory(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CognitiveAction {
    pub name: String,
    pub category: Category,
    pub description: String,
}

const BUILTIN: &[(&str, Category, &str)] = &[
    (
        "reconsidering",
        Category::Metacognitive,
        "reconsidering a belief or decision",
    ),
    (
        "updating_beliefs",
        Category::Metacognitive,
        "updating mental models or beliefs",
    ),
    (
        "suspending_judgment",
        Category::Metacognitive,
        "suspending judgment and staying with uncertainty",
    ),
    (
        "meta_awareness",
        Category::Metacognitive,
        "reflecting on one's own thinking process",
    ),
    (
        "metacognitive_monitoring",
        Category::Metacognitive,
        "tracking one's own comprehension",
    ),
    (
        "metacognitive_regulation",
        Category::Metacognitive,
        "adjusting thinking strategies",
    ),
    (
        "self_questioning",
        Category::Metacognitive,
        "interrogating one's own understanding",
    ),
    (
        "noticing",
        Category::Analytical,
        "noticing a pattern, feeling, or dynamic",
    ),
    (
        "pattern_recognition",
        Category::Analytical,
        "recognizing recurring patterns across situations",
    ),
    (
        "zooming_out",
        Category::Analytical,
        "zooming out for broader context",
    ),
    (
        "zooming_in",
        Category::Analytical,
        "zooming in on specific details",
    ),
    (
        "questioning",
        Category::Analytical,
        "questioning an assumption or belief",
    ),
    (
        "abstracting",
        Category::Analytical,
        "abstracting from specifics to general patterns",
    ),
    (
        "concretizing",
        Category::Analytical,
        "making abstract concepts concrete and specific",
    ),
    (
        "connecting",
        Category::Analytical,
        "connecting disparate ideas or experiences",
    ),
    (
        "distinguishing",
        Category::Analytical,
        "distinguishing between previously conflated concepts",
    ),
    (
        "perspective_taking",
        Category::Analytical,
        "taking another's perspective or temporal view",
    ),
    (
        "convergent_thinking",
        Category::Analytical,
        "finding the single best solution",
    ),
    (
        "understanding",
        Category::Analytical,
        "interpreting and explaining meaning",
    ),
    (
        "applying",
        Category::Analytical,
        "using knowledge in new situations",
    ),
    (
        "analyzing",
        Category::Analytical,
        "breaking down into components",
    ),
    (
        "evaluating",
        Category::Analytical,
        "making judgments about value or effectiveness",
    ),
    (
        "cognition_awareness",
        Category::Analytical,
        "becoming aware and comprehending",
    ),
    (
        "creating",
        Category::Creative,
        "generating new ideas or solutions",
    ),
    (
        "divergent_thinking",
        Category::Creative,
        "generating multiple creative solutions",
    ),
    (
        "hypothesis_generation",
        Category::Creative,
        "generating possible explanations",
    ),
    (
        "counterfactual_reasoning",
        Category::Creative,
        "engaging in 'what if' thinking",
    ),
    (
        "analogical_thinking",
        Category::Creative,
        "drawing analogies between domains",
    ),
    (
        "reframing",
        Category::Creative,
        "reframing a situation or perspective",
    ),
    (
        "emotional_reappraisal",
        Category::Emotional,
        "reinterpreting emotional meaning",
    ),
    (
        "emotion_receiving",
        Category::Emotional,
        "becoming aware of emotions",
    ),
    (
        "emotion_responding",
        Category::Emotional,
        "actively engaging with emotions",
    ),
    (
        "emotion_valuing",
        Category::Emotional,
        "attaching worth to emotional experiences",
    ),
    (
        "emotion_organizing",
        Category::Emotional,
        "integrating conflicting emotions",
    ),
    (
        "emotion_characterizing",
        Category::Emotional,
        "aligning emotions with core values",
    ),
    (
        "situation_selection",
        Category::Emotional,
        "choosing emotional contexts deliberately",
    ),
    (
        "situation_modification",
        Category::Emotional,
        "changing circumstances to regulate emotion",
    ),
    (
        "attentional_deployment",
        Category::Emotional,
        "directing attention for emotional regulation",
    ),
    (
        "response_modulation",
        Category::Emotional,
        "modifying emotional expression",
    ),
    (
        "emotion_perception",
        Category::Emotional,
        "identifying emotions in self/others",
    ),
    (
        "emotion_facilitation",
        Category::Emotional,
        "using emotions to enhance thinking",
    ),
    (
        "emotion_understanding",
        Category::Emotional,
        "comprehending emotional complexity",
    ),
    (
        "emotion_management",
        Category::Emotional,
        "regulating emotions in self/others",
    ),
    (
        "accepting",
        Category::Emotional,
        "accepting and letting go of control",
    ),
    (
        "remembering",
        Category::Memory,
        "recalling relevant information or experiences",
    ),
];

/// The twenty everyday domains narratives are spread across.
pub const DOMAINS: [&str; 20] = [
    "work",
    "school",
    "daily life",
    "cooking",
    "shopping",
    "exercise",
    "reading",
    "writing",
    "planning",
    "learning",
    "organizing",
    "problem-solving",
    "hobbies",
    "personal goals",
    "time management",
    "finances",
    "health",
    "relationships",
    "home projects",
    "travel",
];

pub fn builtin_taxonomy() -> Vec<CognitiveAction> {
    BUILTIN
        .iter()
        .map(|&(name, category, description)| CognitiveAction {
            name: name.to_owned(),
            category,
            description: description.to_owned(),
        })
        .collect()
}

#[derive(Deserialize)]
struct TaxonomyLine {
    name: String,
    category: String,
    description: String,
}

/// Built-in taxonomy, or the line-delimited JSON override at `path`.
pub fn load_taxonomy(path: Option<&Path>) -> Result<Vec<CognitiveAction>, TaxonomyError> {
    let Some(path) = path else {
        return Ok(builtin_taxonomy());
    };
    let text = fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut actions = Vec::new();
    let mut names = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TaxonomyLine =
            serde_json::from_str(line).map_err(|e| TaxonomyError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
        if parsed.name.trim().is_empty() {
            return Err(TaxonomyError::Malformed {
                line: i + 1,
                message: "empty action name".into(),
            });
        }
        let category = parsed.category.parse()?;
        if !names.insert(parsed.name.clone()) {
            return Err(TaxonomyError::Duplicate(parsed.name));
        }
        actions.push(CognitiveAction {
            name: parsed.name,
            category,
            description: parsed.description,
        });
    }
    Ok(actions)
}

pub fn actions_in(
    actions: &[CognitiveAction],
    category: Category,
) -> impl Iterator<Item = &CognitiveAction> {
    actions.iter().filter(move |a| a.category == category)
}

/// Appends the probe suffix to `text`, separated by one space.
pub fn with_probe_suffix(text: &str) -> String {
    format!("{} {PROBE_SUFFIX}", text.trim_end())
}

/// Renders the narrative-generation prompt for one action in one domain.
pub fn emit_generation_prompt(
    action: &CognitiveAction,
    domain: &str,
    suffixed: bool,
) -> Result<String, TaxonomyError> {
    if !DOMAINS.contains(&domain) {
        return Err(TaxonomyError::UnknownDomain(domain.to_owned()));
    }
    let prompt = format!(
        "Generate a simple, first-person example of\n\
         someone {description}.\n\
         \n\
         Action: {name}\n\
         Description: {description}\n\
         Domain: {domain}\n\
         \n\
         Requirements:\n\
         - Write in first person (I, my, me)\n\
         - Keep it simple and realistic\n\
         - 2-4 sentences maximum\n\
         - Focus on the {name} cognitive action\n\
         - Use everyday language\n\
         \n\
         Example only (no explanation):",
        name = action.name,
        description = action.description,
    );
    Ok(if suffixed {
        with_probe_suffix(&prompt)
    } else {
        prompt
    })
}

/// Parameters of the Gaussian activation generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_per_class: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    /// Root-mean-square distance between class means, in units of the
    /// within-class standard deviation.
    pub class_separation: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), TaxonomyError> {
        if self.n_per_class < 2 {
            return Err(TaxonomyError::InvalidSpec(
                "n_per_class must be at least 2".into(),
            ));
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return Err(TaxonomyError::InvalidSpec(
                "class_separation must be finite and >= 0".into(),
            ));
        }
        if self.hidden_dim == 0 || self.n_layers == 0 {
            return Err(TaxonomyError::InvalidSpec(
                "hidden_dim and n_layers must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Norm of every class mean. Means sit on independent random unit
    /// directions, so `E|m_i - m_j|^2 = 2 r^2`; `r = sep / sqrt(2)` makes the
    /// root-mean-square pairwise distance equal `class_separation`.
    pub fn mean_radius(&self) -> f64 {
        self.class_separation / std::f64::consts::SQRT_2
    }
}

fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Class means used by [`gen_synthetic_activations`]: `[action][layer][dim]`.
pub fn synthetic_means(spec: &SyntheticSpec, n_actions: usize) -> Vec<Vec<Vec<f64>>> {
    let mut rng = rng(spec.seed);
    let radius = spec.mean_radius();
    (0..n_actions)
        .map(|_| {
            (0..spec.n_layers)
                .map(|_| {
                    random_unit(&mut rng, spec.hidden_dim)
                        .into_iter()
                        .map(|x| x * radius)
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Draws `n_per_class` labeled records per action from isotropic unit-variance
/// Gaussians around per-action, per-layer means. Splits are left unassigned.
pub fn gen_synthetic_activations(
    spec: &SyntheticSpec,
    actions: &[CognitiveAction],
) -> Result<ActivationDataset, TaxonomyError> {
    spec.validate()?;
    if actions.is_empty() {
        return Err(TaxonomyError::InvalidSpec("no actions given".into()));
    }
    let means = synthetic_means(spec, actions.len());
    // independent stream for the noise so the means do not depend on n_per_class
    let mut noise = rng(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut dataset = ActivationDataset::new(
        spec.n_layers,
        spec.hidden_dim,
        format!(
            "gaussian(n_per_class={}, separation={}, seed={})",
            spec.n_per_class, spec.class_separation, spec.seed
        ),
    );
    for (action, action_means) in actions.iter().zip(&means) {
        for i in 0..spec.n_per_class {
            let id = format!("{}-{i:05}", action.name);
            let mut values = Vec::with_capacity(spec.n_layers * spec.hidden_dim);
            for layer_mean in action_means {
                for &m in layer_mean {
                    let z: f64 = StandardNormal.sample(&mut noise);
                    values.push((m + z) as f32);
                }
            }
            dataset.records.push(ActivationRecord {
                text_hash: hash64(id.as_bytes()),
                id,
                values,
                label: Some(action.name.clone()),
                category: Some(action.category.to_string()),
                split: Split::None,
            });
        }
    }
    Ok(dataset)
}
