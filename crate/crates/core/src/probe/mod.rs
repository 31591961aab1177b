// SPDX-License-Identifier: MIT OR Apache-2.0

//! One-vs-rest linear probes over per-layer activations.
//!
//! Each probe is a logistic classifier trained with AdamW under a cosine
//! learning-rate schedule. Validation AUC is measured after every epoch and
//! training stops once it has not improved for `patience` epochs; the
//! parameters of the best epoch are kept.

mod metrics;
mod optim;
mod store;

use std::collections::HashMap;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{auc_roc, f1_score, Confusion};
pub use optim::{adamw_step, cosine_lr, AdamState, AdamWParams};
pub use store::{load_suite, save_suite, suite_table};

use crate::activation_store::{ActivationDataset, Split};
use crate::error::ProbeError;
use crate::seed::{keyed_hash, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub negative_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_max: 1e-3,
            lr_min: 1e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 100,
            patience: 5,
            batch_size: 64,
            negative_ratio: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        let bad = |m: &str| Err(ProbeError::InvalidConfig(m.to_owned()));
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return bad("need 0 < lr_min <= lr_max");
        }
        if self.patience < 1 {
            return bad("patience must be at least 1");
        }
        if self.negative_ratio.is_nan() || self.negative_ratio <= 0.0 {
            return bad("negative_ratio must be positive");
        }
        if self.max_epochs < 1 || self.batch_size < 1 {
            return bad("max_epochs and batch_size must be positive");
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWParams {
        AdamWParams {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub action: String,
    pub layer: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub val_auc: f64,
    pub val_f1: f64,
    /// Epochs actually run before stopping.
    pub trained_epochs: usize,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub seed: u64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LinearProbe {
    pub fn logit(&self, activation: &[f64]) -> Result<f64, ProbeError> {
        if activation.len() != self.weights.len() {
            return Err(ProbeError::Shape {
                expected: self.weights.len(),
                found: activation.len(),
            });
        }
        Ok(dot(&self.weights, activation) + self.bias)
    }

    /// Probe confidence, `sigmoid(w . x + b)`.
    pub fn predict(&self, activation: &[f64]) -> Result<f64, ProbeError> {
        self.logit(activation).map(sigmoid)
    }
}

pub fn predict(probe: &LinearProbe, activation: &[f64]) -> Result<f64, ProbeError> {
    probe.predict(activation)
}

/// Mean binary cross-entropy of a logistic model and its gradient
/// `(d/dw, d/db)`.
pub fn logistic_loss_and_grad(
    weights: &[f64],
    bias: f64,
    xs: &[&[f64]],
    ys: &[bool],
) -> (f64, Vec<f64>, f64) {
    let n = xs.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z = dot(weights, x) + bias;
        let target = if y { 1.0 } else { 0.0 };
        loss += softplus(z) - target * z;
        let residual = sigmoid(z) - target;
        for (g, xi) in grad_w.iter_mut().zip(x.iter()) {
            *g += residual * xi;
        }
        grad_b += residual;
    }
    grad_w.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad_w, grad_b / n)
}

struct Examples {
    features: Vec<Vec<f64>>,
    labels: Vec<bool>,
}

impl Examples {
    fn rows(&self) -> Vec<&[f64]> {
        self.features.iter().map(Vec::as_slice).collect()
    }
}

/// Positives of `action` in `split`, plus negatives from every other
/// labeled record in `split`, optionally subsampled to `ratio * positives`.
fn gather(
    dataset: &ActivationDataset,
    action: &str,
    layer: usize,
    split: Split,
    negative_sample: Option<(f64, &mut rand_chacha::ChaCha8Rng)>,
) -> Examples {
    let hidden = dataset.hidden_dim;
    let row = |i: usize| -> Vec<f64> {
        dataset.records[i]
            .layer(layer, hidden)
            .iter()
            .map(|&v| v as f64)
            .collect()
    };
    let in_split: Vec<usize> = (0..dataset.records.len())
        .filter(|&i| dataset.records[i].split == split && dataset.records[i].label.is_some())
        .collect();
    let positives: Vec<usize> = in_split
        .iter()
        .copied()
        .filter(|&i| dataset.records[i].label.as_deref() == Some(action))
        .collect();
    let mut negatives: Vec<usize> = in_split
        .iter()
        .copied()
        .filter(|&i| dataset.records[i].label.as_deref() != Some(action))
        .collect();
    if let Some((ratio, rng)) = negative_sample {
        let want =
            ((ratio * positives.len() as f64).round() as usize).clamp(1, negatives.len().max(1));
        if want < negatives.len() {
            let mut picked: Vec<usize> = index::sample(rng, negatives.len(), want)
                .into_iter()
                .map(|k| negatives[k])
                .collect();
            picked.sort_unstable();
            negatives = picked;
        }
    }
    let mut features = Vec::with_capacity(positives.len() + negatives.len());
    let mut labels = Vec::with_capacity(features.capacity());
    for &i in &positives {
        features.push(row(i));
        labels.push(true);
    }
    for &i in &negatives {
        features.push(row(i));
        labels.push(false);
    }
    Examples { features, labels }
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub val_auc_per_epoch: Vec<f64>,
}

/// Trains one probe and also returns the validation AUC of every epoch.
pub fn train_probe_traced(
    dataset: &ActivationDataset,
    action: &str,
    layer: usize,
    config: &TrainConfig,
) -> Result<(LinearProbe, TrainingTrace), ProbeError> {
    config.validate()?;
    if layer >= dataset.n_layers {
        return Err(ProbeError::LayerOutOfRange {
            layer,
            n_layers: dataset.n_layers,
        });
    }
    let seed = keyed_hash(config.seed, &format!("probe:{action}@{layer}"));
    let mut rng = rng(seed);

    let train = gather(
        dataset,
        action,
        layer,
        Split::Train,
        Some((config.negative_ratio, &mut rng)),
    );
    let n_train_pos = train.labels.iter().filter(|&&l| l).count();
    if n_train_pos == 0 {
        return Err(ProbeError::ActionAbsent(action.to_owned()));
    }
    if n_train_pos == train.labels.len() {
        return Err(ProbeError::NoNegatives(action.to_owned()));
    }
    let val = gather(dataset, action, layer, Split::Val, None);
    let n_val_pos = val.labels.iter().filter(|&&l| l).count();
    if n_val_pos == 0 {
        return Err(ProbeError::NoValPositives(action.to_owned()));
    }
    if n_val_pos == val.labels.len() {
        return Err(ProbeError::NoNegatives(action.to_owned()));
    }

    let hidden = dataset.hidden_dim;
    // weights followed by the bias
    let mut params = vec![0.0; hidden + 1];
    let mut state = AdamState::new(hidden + 1);
    let adamw = config.adamw();
    let train_rows = train.rows();
    let val_rows = val.rows();

    let mut order: Vec<usize> = (0..train_rows.len()).collect();
    let mut best: Option<(f64, Vec<f64>, usize)> = None;
    let mut history = Vec::new();
    let mut stale = 0;
    for epoch in 0..config.max_epochs {
        let lr = cosine_lr(epoch, config.max_epochs, config.lr_max, config.lr_min)?;
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| train_rows[i]).collect();
            let ys: Vec<bool> = batch.iter().map(|&i| train.labels[i]).collect();
            let (_, mut grad, grad_b) =
                logistic_loss_and_grad(&params[..hidden], params[hidden], &xs, &ys);
            grad.push(grad_b);
            adamw_step(&mut params, &grad, &mut state, &adamw, lr)?;
        }

        let scores: Vec<f64> = val_rows
            .iter()
            .map(|x| dot(&params[..hidden], x) + params[hidden])
            .collect();
        let auc = auc_roc(&scores, &val.labels)?;
        history.push(auc);
        match &best {
            Some((best_auc, _, _)) if auc <= *best_auc => {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
            _ => {
                best = Some((auc, params.clone(), epoch + 1));
                stale = 0;
            }
        }
    }

    let (val_auc, params, best_epoch) = best.expect("at least one epoch runs");
    let predictions: Vec<bool> = val_rows
        .iter()
        .map(|x| dot(&params[..hidden], x) + params[hidden] > 0.0)
        .collect();
    let val_f1 = f1_score(&predictions, &val.labels)?;
    let probe = LinearProbe {
        action: action.to_owned(),
        layer,
        bias: params[hidden],
        weights: params[..hidden].to_vec(),
        val_auc,
        val_f1,
        trained_epochs: history.len(),
        best_epoch,
        seed: config.seed,
    };
    Ok((
        probe,
        TrainingTrace {
            val_auc_per_epoch: history,
        },
    ))
}

pub fn train_probe(
    dataset: &ActivationDataset,
    action: &str,
    layer: usize,
    config: &TrainConfig,
) -> Result<LinearProbe, ProbeError> {
    train_probe_traced(dataset, action, layer, config).map(|(p, _)| p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: usize,
    pub mean_auc: f64,
    pub mean_f1: f64,
    pub n_probes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSummary {
    pub action: String,
    pub mean_auc: f64,
    pub mean_f1: f64,
    pub n_layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub mean_auc: f64,
    pub mean_f1: f64,
    /// One row per trained layer, ascending.
    pub per_layer: Vec<LayerSummary>,
    /// One row per action, best mean AUC first.
    pub action_ranking: Vec<ActionSummary>,
}

/// Probes keyed by (action, layer), in (action, layer) training order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSuite {
    probes: Vec<LinearProbe>,
    index: HashMap<(String, usize), usize>,
}

impl ProbeSuite {
    pub fn new(probes: Vec<LinearProbe>) -> Result<Self, ProbeError> {
        let mut index = HashMap::with_capacity(probes.len());
        for (i, p) in probes.iter().enumerate() {
            if index.insert((p.action.clone(), p.layer), i).is_some() {
                return Err(ProbeError::InvalidConfig(format!(
                    "duplicate probe for {} at layer {}",
                    p.action, p.layer
                )));
            }
        }
        Ok(Self { probes, index })
    }

    pub fn probes(&self) -> &[LinearProbe] {
        &self.probes
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    pub fn get(&self, action: &str, layer: usize) -> Option<&LinearProbe> {
        self.index
            .get(&(action.to_owned(), layer))
            .map(|&i| &self.probes[i])
    }

    pub fn require(&self, action: &str, layer: usize) -> Result<&LinearProbe, ProbeError> {
        self.get(action, layer)
            .ok_or_else(|| ProbeError::MissingProbe {
                action: action.to_owned(),
                layer,
            })
    }

    pub fn summary(&self) -> SuiteSummary {
        let n = self.probes.len().max(1) as f64;
        let mean_auc = self.probes.iter().map(|p| p.val_auc).sum::<f64>() / n;
        let mean_f1 = self.probes.iter().map(|p| p.val_f1).sum::<f64>() / n;

        let mut layers: Vec<usize> = self.probes.iter().map(|p| p.layer).collect();
        layers.sort_unstable();
        layers.dedup();
        let per_layer = layers
            .into_iter()
            .map(|layer| {
                let rows: Vec<&LinearProbe> =
                    self.probes.iter().filter(|p| p.layer == layer).collect();
                let k = rows.len() as f64;
                LayerSummary {
                    layer,
                    mean_auc: rows.iter().map(|p| p.val_auc).sum::<f64>() / k,
                    mean_f1: rows.iter().map(|p| p.val_f1).sum::<f64>() / k,
                    n_probes: rows.len(),
                }
            })
            .collect();

        let mut actions: Vec<&str> = Vec::new();
        for p in &self.probes {
            if !actions.contains(&p.action.as_str()) {
                actions.push(&p.action);
            }
        }
        let mut action_ranking: Vec<ActionSummary> = actions
            .into_iter()
            .map(|action| {
                let rows: Vec<&LinearProbe> =
                    self.probes.iter().filter(|p| p.action == action).collect();
                let k = rows.len() as f64;
                ActionSummary {
                    action: action.to_owned(),
                    mean_auc: rows.iter().map(|p| p.val_auc).sum::<f64>() / k,
                    mean_f1: rows.iter().map(|p| p.val_f1).sum::<f64>() / k,
                    n_layers: rows.len(),
                }
            })
            .collect();
        action_ranking.sort_by(|a, b| {
            b.mean_auc
                .total_cmp(&a.mean_auc)
                .then_with(|| a.action.cmp(&b.action))
        });

        SuiteSummary {
            mean_auc,
            mean_f1,
            per_layer,
            action_ranking,
        }
    }
}

/// Trains every (action, layer) pair. Jobs run on the current rayon pool;
/// results are assembled in (action, layer) order regardless of scheduling.
pub fn train_suite(
    dataset: &ActivationDataset,
    actions: &[String],
    layers: &[usize],
    config: &TrainConfig,
) -> Result<ProbeSuite, ProbeError> {
    config.validate()?;
    let jobs: Vec<(&str, usize)> = actions
        .iter()
        .flat_map(|a| layers.iter().map(move |&l| (a.as_str(), l)))
        .collect();
    let probes = jobs
        .par_iter()
        .map(|&(action, layer)| train_probe(dataset, action, layer, config))
        .collect::<Result<Vec<_>, _>>()?;
    ProbeSuite::new(probes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation_store::split_dataset;
    use crate::taxonomy::{builtin_taxonomy, gen_synthetic_activations, SyntheticSpec};

    fn two_class(separation: f64, n: usize, seed: u64) -> ActivationDataset {
        let actions = &builtin_taxonomy()[..2];
        let spec = SyntheticSpec {
            n_per_class: n,
            hidden_dim: 32,
            n_layers: 1,
            class_separation: separation,
            seed,
        };
        split_dataset(
            &gen_synthetic_activations(&spec, actions).unwrap(),
            0.8,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn predict_examples() {
        let mut p = LinearProbe {
            action: "a".into(),
            layer: 0,
            weights: vec![0.0, 0.0],
            bias: 0.0,
            val_auc: 0.5,
            val_f1: 0.0,
            trained_epochs: 0,
            best_epoch: 0,
            seed: 0,
        };
        assert_eq!(p.predict(&[3.0, -2.0]).unwrap(), 0.5);
        p.bias = 800.0;
        assert_eq!(p.predict(&[0.0, 0.0]).unwrap(), 1.0);
        p.bias = 0.0;
        p.weights = vec![1.0, 0.0];
        // logit(0.9) = ln 9
        let c = p.predict(&[2.1972, 0.0]).unwrap();
        assert!((c - 0.9).abs() < 1e-5, "{c}");
        assert!(p.predict(&[1.0]).is_err());
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let xs_owned = [
            vec![0.5, -1.2, 2.0],
            vec![-0.3, 0.8, 0.1],
            vec![1.5, 0.4, -0.7],
        ];
        let xs: Vec<&[f64]> = xs_owned.iter().map(Vec::as_slice).collect();
        let ys = [true, false, true];
        let w = [0.2, -0.4, 0.7];
        let b = 0.1;
        let (_, gw, gb) = logistic_loss_and_grad(&w, b, &xs, &ys);
        let h = 1e-6;
        for i in 0..3 {
            let mut plus = w;
            let mut minus = w;
            plus[i] += h;
            minus[i] -= h;
            let fd = (logistic_loss_and_grad(&plus, b, &xs, &ys).0
                - logistic_loss_and_grad(&minus, b, &xs, &ys).0)
                / (2.0 * h);
            assert!((fd - gw[i]).abs() <= 1e-4 * gw[i].abs().max(1e-8));
        }
        let fd = (logistic_loss_and_grad(&w, b + h, &xs, &ys).0
            - logistic_loss_and_grad(&w, b - h, &xs, &ys).0)
            / (2.0 * h);
        assert!((fd - gb).abs() <= 1e-4 * gb.abs());
    }

    #[test]
    fn separable_two_class_reaches_high_auc() {
        let d = two_class(4.0, 200, 5);
        let (probe, trace) = train_probe_traced(
            &d,
            &d.records[0].label.clone().unwrap(),
            0,
            &TrainConfig::default(),
        )
        .unwrap();
        assert!(probe.val_auc >= 0.99, "{}", probe.val_auc);
        assert!(trace.val_auc_per_epoch.iter().all(|&a| a <= probe.val_auc));
        assert!(probe.trained_epochs <= 100);
    }

    #[test]
    fn training_is_deterministic() {
        let d = two_class(2.0, 60, 9);
        let action = d.records[0].label.clone().unwrap();
        let config = TrainConfig {
            max_epochs: 20,
            seed: 42,
            ..TrainConfig::default()
        };
        let a = train_probe(&d, &action, 0, &config).unwrap();
        let b = train_probe(&d, &action, 0, &config).unwrap();
        assert_eq!(a, b);
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn error_paths() {
        let d = two_class(1.0, 20, 1);
        let config = TrainConfig::default();
        assert!(matches!(
            train_probe(&d, "not_an_action", 0, &config),
            Err(ProbeError::ActionAbsent(_))
        ));
        assert!(matches!(
            train_probe(&d, "reconsidering", 3, &config),
            Err(ProbeError::LayerOutOfRange { .. })
        ));
        let mut no_val = d.clone();
        for r in &mut no_val.records {
            if r.label.as_deref() == Some("reconsidering") && r.split == Split::Val {
                r.split = Split::Train;
            }
        }
        assert!(matches!(
            train_probe(&no_val, "reconsidering", 0, &config),
            Err(ProbeError::NoValPositives(_))
        ));
        let bad = TrainConfig {
            lr_min: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_probe(&d, "reconsidering", 0, &bad),
            Err(ProbeError::InvalidConfig(_))
        ));
    }

    #[test]
    fn suite_shape() {
        let actions = &builtin_taxonomy()[..3];
        let spec = SyntheticSpec {
            n_per_class: 20,
            hidden_dim: 8,
            n_layers: 5,
            class_separation: 3.0,
            seed: 3,
        };
        let d = split_dataset(&gen_synthetic_activations(&spec, actions).unwrap(), 0.8, 3).unwrap();
        let names: Vec<String> = actions.iter().map(|a| a.name.clone()).collect();
        let config = TrainConfig {
            max_epochs: 5,
            ..TrainConfig::default()
        };
        let suite = train_suite(&d, &names, &[0, 1, 2, 3, 4], &config).unwrap();
        assert_eq!(suite.len(), 15);
        let summary = suite.summary();
        assert_eq!(summary.per_layer.len(), 5);
        assert_eq!(summary.action_ranking.len(), 3);
        assert!(suite.get("reconsidering", 4).is_some());
        assert!(matches!(
            suite.require("reconsidering", 5),
            Err(ProbeError::MissingProbe { .. })
        ));
    }
}
