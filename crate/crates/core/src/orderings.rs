//! Baseline model orders. Each one is paired with per-stage thresholds from
//! [`crate::qwyc::thresholds_for_fixed_order`].

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{full_score, ScoreMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MseTarget {
    /// 0/1 labels of the score matrix.
    Labels,
    /// Full-ensemble score of each example.
    FullScore,
}

/// Models in their stored (training) order.
pub fn identity_order(n_models: usize) -> Vec<usize> {
    (0..n_models).collect()
}

pub fn random_order(n_models: usize, seed: u64) -> Vec<usize> {
    let mut order = identity_order(n_models);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Labels when the matrix carries them, otherwise the full score.
pub fn default_mse_target(sm: &ScoreMatrix) -> MseTarget {
    if sm.labels().is_some() {
        MseTarget::Labels
    } else {
        MseTarget::FullScore
    }
}

pub fn mse_targets(sm: &ScoreMatrix, target: MseTarget) -> Result<Vec<f64>> {
    match target {
        MseTarget::Labels => {
            let labels = sm.labels().ok_or_else(|| Error::invalid("MSE target `labels` needs a label column"))?;
            Ok(labels.iter().map(|&y| if y { 1.0 } else { 0.0 }).collect())
        }
        MseTarget::FullScore => Ok(sm.rows().map(full_score).collect()),
    }
}

fn check_targets(sm: &ScoreMatrix, targets: &[f64]) -> Result<()> {
    if targets.len() != sm.n_examples() {
        return Err(Error::DimensionMismatch { what: "MSE targets", expected: sm.n_examples(), actual: targets.len() });
    }
    Ok(())
}

fn mse_with(sm: &ScoreMatrix, base: &[f64], model: usize, targets: &[f64]) -> f64 {
    let sse: f64 = (0..sm.n_examples())
        .map(|i| {
            let e = base[i] + sm.get(i, model) - targets[i];
            e * e
        })
        .sum();
    sse / sm.n_examples() as f64
}

/// Ascending MSE of each model's output alone; ties keep index order.
pub fn individual_mse_order(sm: &ScoreMatrix, targets: &[f64]) -> Result<Vec<usize>> {
    check_targets(sm, targets)?;
    let zeros = vec![0.0; sm.n_examples()];
    let mse: Vec<f64> = (0..sm.n_models()).into_par_iter().map(|t| mse_with(sm, &zeros, t, targets)).collect();
    let mut order = identity_order(sm.n_models());
    order.sort_by(|&a, &b| mse[a].total_cmp(&mse[b]));
    Ok(order)
}

/// Repeatedly appends the model that most lowers the MSE of the running sum;
/// ties go to the lowest index.
pub fn greedy_mse_order(sm: &ScoreMatrix, targets: &[f64]) -> Result<Vec<usize>> {
    check_targets(sm, targets)?;
    let mut partial = vec![0.0; sm.n_examples()];
    let mut remaining = identity_order(sm.n_models());
    let mut order = Vec::with_capacity(sm.n_models());
    while !remaining.is_empty() {
        let mse: Vec<f64> = remaining.par_iter().map(|&t| mse_with(sm, &partial, t, targets)).collect();
        let mut best = 0;
        for k in 1..mse.len() {
            if mse[k] < mse[best] {
                best = k;
            }
        }
        let model = remaining.remove(best);
        for (i, p) in partial.iter_mut().enumerate() {
            *p += sm.get(i, model);
        }
        order.push(model);
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::validate_permutation;
    use crate::oracle::worked_example;

    fn overlapping() -> (ScoreMatrix, Vec<f64>) {
        let targets = vec![1.0, -2.0, 0.5, 3.0];
        let rows = targets.iter().map(|&y| vec![0.6 * y, 0.6 * y, 0.4 * y]).collect();
        (ScoreMatrix::from_rows(rows).unwrap(), targets)
    }

    #[test]
    fn greedy_differs_from_individual_on_redundant_models() {
        let (sm, targets) = overlapping();
        assert_eq!(individual_mse_order(&sm, &targets).unwrap(), vec![0, 1, 2]);
        assert_eq!(greedy_mse_order(&sm, &targets).unwrap(), vec![0, 2, 1]);
    }

    #[test]
    fn worked_example_full_score_targets() {
        let sm = worked_example();
        let targets = mse_targets(&sm, MseTarget::FullScore).unwrap();
        assert_eq!(targets, vec![1.0, -1.0, 1.0, 1.0, -2.0, 1.0, -1.0, -1.0]);
        assert_eq!(individual_mse_order(&sm, &targets).unwrap(), vec![2, 1, 0]);
    }

    #[test]
    fn labels_required_for_label_target() {
        let sm = worked_example();
        assert_eq!(default_mse_target(&sm), MseTarget::FullScore);
        assert!(mse_targets(&sm, MseTarget::Labels).is_err());
        let labelled = sm.with_labels(vec![true; 8]).unwrap();
        assert_eq!(default_mse_target(&labelled), MseTarget::Labels);
        assert_eq!(mse_targets(&labelled, MseTarget::Labels).unwrap(), vec![1.0; 8]);
    }

    #[test]
    fn target_length_checked() {
        let sm = worked_example();
        assert!(individual_mse_order(&sm, &[0.0; 3]).is_err());
        assert!(greedy_mse_order(&sm, &[0.0; 3]).is_err());
    }

    #[test]
    fn random_orders_are_seeded_permutations() {
        let a = random_order(20, 3);
        validate_permutation(&a, 20).unwrap();
        assert_eq!(a, random_order(20, 3));
        assert_ne!(a, random_order(20, 4));
        assert_eq!(identity_order(3), vec![0, 1, 2]);
    }
}
