//! Brute-force ground truth for small instances.
//!
//! [`brute_force_optimal`] enumerates every order and, for each, sets the
//! stage thresholds with the same maximal/minimal-feasible rule the greedy
//! optimizer uses, but through an independent linear sweep rather than the
//! optimizer's binary search. At `alpha = 0` on position-independent
//! instances this is the true optimum; elsewhere it is the optimum over
//! orders with stage-wise thresholds.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cascade::{evaluate_matrix, CascadePolicy};
use crate::ensemble::{full_reference, CostVector, DecisionConfig, ScoreMatrix, StoppingMode};
use crate::error::{Error, Result};
use crate::qwyc::{disagreement_budget, optimize_order, step_above, step_below};

pub const DEFAULT_MAX_T: usize = 8;
pub const MAX_EXAMPLES: usize = 10_000;
pub const PIPELINE_MAX_T: usize = 6;
pub const PIPELINE_MAX_N: usize = 48;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    /// Lexicographically first cost-minimizing order.
    pub best_order: Vec<usize>,
    pub best_cost: f64,
    pub policy: CascadePolicy,
    pub search_space_size: usize,
    /// Every order achieving `best_cost`, in lexicographic order.
    pub optimal_orders: Vec<Vec<usize>>,
}

/// Three models, eight examples, β = 0, unit costs; the optimum costs 7/4.
pub fn worked_example() -> ScoreMatrix {
    worked_example_instance().scores
}

pub fn worked_example_instance() -> PipelineInstance {
    let assignment = vec![
        vec![(0, 1.0)],
        vec![(0, -1.0)],
        vec![(1, 1.0)],
        vec![(1, 1.0)],
        vec![(1, -1.0), (2, -1.0)],
        vec![(2, 1.0)],
        vec![(2, -1.0)],
        vec![(2, -1.0)],
    ];
    let ids = (1..=8).map(|i| format!("e{i}")).collect();
    let mut inst = pipeline_instance_from_assignment(3, &assignment).expect("fixture is valid");
    inst.scores = inst.scores.with_example_ids(ids).expect("eight ids");
    inst
}

/// Score matrix built so that every model can stop exactly the examples it
/// "owns", wherever it sits in the order.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineInstance {
    pub scores: ScoreMatrix,
    /// `owners[i]` lists the models with a non-zero output on example `i`.
    pub owners: Vec<Vec<usize>>,
}

impl PipelineInstance {
    /// Examples owned by `model`.
    pub fn owned_by(&self, model: usize) -> Vec<usize> {
        (0..self.owners.len()).filter(|&i| self.owners[i].contains(&model)).collect()
    }
}

/// `assignment[i]` lists `(model, value)` pairs for example `i`; all other
/// entries are zero. Values of one example must share a sign (the sign of its
/// full decision at β = 0); an empty list is an all-zero, positive example.
pub fn pipeline_instance_from_assignment(
    n_models: usize,
    assignment: &[Vec<(usize, f64)>],
) -> Result<PipelineInstance> {
    let mut rows = Vec::with_capacity(assignment.len());
    let mut owners = Vec::with_capacity(assignment.len());
    for (i, entries) in assignment.iter().enumerate() {
        let mut row = vec![0.0; n_models];
        let mut own = Vec::new();
        for &(t, v) in entries {
            if t >= n_models {
                return Err(Error::invalid(format!("example {i}: model {t} out of range")));
            }
            if v == 0.0 || !v.is_finite() {
                return Err(Error::invalid(format!("example {i}: owner values must be finite and non-zero")));
            }
            row[t] = v;
            own.push(t);
        }
        if entries.windows(2).any(|w| (w[0].1 > 0.0) != (w[1].1 > 0.0)) {
            return Err(Error::invalid(format!("example {i}: owner values disagree in sign")));
        }
        rows.push(row);
        owners.push(own);
    }
    Ok(PipelineInstance { scores: ScoreMatrix::from_rows(rows)?, owners })
}

/// Random position-independent instance. Every model owns at least one
/// positive and one negative example exclusively, which keeps each model's
/// stoppable set fixed to its owned examples regardless of position.
pub fn gen_pipeline_instance(seed: u64, n_models: usize, n_examples: usize) -> Result<PipelineInstance> {
    if n_models == 0 || n_models > PIPELINE_MAX_T {
        return Err(Error::invalid(format!("n_models must be in 1..={PIPELINE_MAX_T}")));
    }
    if n_examples > PIPELINE_MAX_N || n_examples < 2 * n_models {
        return Err(Error::invalid(format!("n_examples must be in {}..={PIPELINE_MAX_N}", 2 * n_models)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let magnitude = |rng: &mut ChaCha8Rng| rng.gen_range(0.5..2.0f64);
    let mut assignment: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n_examples);
    for t in 0..n_models {
        assignment.push(vec![(t, magnitude(&mut rng))]);
        assignment.push(vec![(t, -magnitude(&mut rng))]);
    }
    let models: Vec<usize> = (0..n_models).collect();
    while assignment.len() < n_examples {
        if rng.gen_bool(0.15) {
            assignment.push(Vec::new());
            continue;
        }
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let k = if n_models > 1 && rng.gen_bool(0.3) { 2 } else { 1 };
        let entries = models.choose_multiple(&mut rng, k).map(|&t| (t, sign * magnitude(&mut rng))).collect();
        assignment.push(entries);
    }
    assignment.shuffle(&mut rng);
    pipeline_instance_from_assignment(n_models, &assignment)
}

/// Linear-sweep thresholds for one stage; see the module docs. Returns
/// `(eps_neg, eps_pos, disagreements_added)`.
pub fn linear_scan_thresholds(points: &[(f64, bool)], remaining: usize, mode: StoppingMode) -> (f64, f64, usize) {
    if points.is_empty() {
        return (f64::NEG_INFINITY, f64::INFINITY, 0);
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let min = sorted[0].0;
    let max = sorted[sorted.len() - 1].0;
    let mut values: Vec<f64> = sorted.iter().map(|p| p.0).collect();
    values.dedup();

    // eps_neg: ascending candidates, keep the last feasible one.
    let mut neg_candidates = vec![f64::NEG_INFINITY];
    neg_candidates.extend(&values);
    neg_candidates.push(step_above(max));
    let mut below = 0usize;
    let mut below_pos = 0usize;
    let mut eps_neg = f64::NEG_INFINITY;
    let mut spent_neg = 0;
    for &e in &neg_candidates {
        while below < sorted.len() && sorted[below].0 < e {
            below_pos += usize::from(sorted[below].1);
            below += 1;
        }
        if below_pos > remaining {
            break;
        }
        eps_neg = if below == 0 { f64::NEG_INFINITY } else { e };
        spent_neg = below_pos;
    }

    if mode == StoppingMode::FilterNegative {
        return (eps_neg, f64::INFINITY, spent_neg);
    }

    // eps_pos: ascending candidates >= eps_neg, keep the first feasible one.
    let left = remaining - spent_neg;
    let mut pos_candidates = vec![step_below(min)];
    pos_candidates.extend(&values);
    pos_candidates.push(f64::INFINITY);
    let mut above_neg: usize = sorted.iter().filter(|p| !p.1).count();
    let mut cursor = 0usize;
    for &e in &pos_candidates {
        while cursor < sorted.len() && sorted[cursor].0 <= e {
            above_neg -= usize::from(!sorted[cursor].1);
            cursor += 1;
        }
        if e < eps_neg || above_neg > left {
            continue;
        }
        let eps_pos = if cursor == sorted.len() { f64::INFINITY } else { e };
        return (eps_neg, eps_pos, spent_neg + above_neg);
    }
    unreachable!("+inf accepts nothing and is always feasible")
}

/// Cascade for a fixed order using [`linear_scan_thresholds`], with its cost
/// computed stage by stage as `sum_r c_{pi(r)} |C_{r-1}| / N`.
pub fn scan_policy_for_order(
    sm: &ScoreMatrix,
    costs: &CostVector,
    config: &DecisionConfig,
    order: &[usize],
) -> Result<(CascadePolicy, f64)> {
    let n = sm.n_examples();
    let t = order.len();
    let reference = full_reference(sm, config.beta);
    let budget = disagreement_budget(config.alpha, n);
    let mut spent = 0usize;
    let mut partial = vec![0.0; n];
    let mut uncertain: Vec<usize> = (0..n).collect();
    let mut eps_neg = vec![f64::NEG_INFINITY; t];
    let mut eps_pos = vec![f64::INFINITY; t];
    let mut total = 0.0;
    for (r, &model) in order.iter().enumerate() {
        total += costs[model] * uncertain.len() as f64;
        for &i in &uncertain {
            partial[i] += sm.get(i, model);
        }
        if r + 1 == t {
            break;
        }
        let points: Vec<(f64, bool)> = uncertain.iter().map(|&i| (partial[i], reference.full_decisions[i])).collect();
        let (lo, hi, added) = linear_scan_thresholds(&points, budget - spent, config.mode);
        spent += added;
        eps_neg[r] = lo;
        eps_pos[r] = hi;
        uncertain.retain(|&i| lo <= partial[i] && partial[i] <= hi);
    }
    let policy = CascadePolicy::new(order.to_vec(), eps_neg, eps_pos, config.beta)?;
    Ok((policy, total / n as f64))
}

/// Lexicographic successor; false when `perm` is the last permutation.
fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

pub fn brute_force_optimal(
    sm: &ScoreMatrix,
    costs: &CostVector,
    config: &DecisionConfig,
    max_t: usize,
) -> Result<OracleResult> {
    config.validate()?;
    costs.check_models(sm.n_models())?;
    let t = sm.n_models();
    if t > max_t.min(DEFAULT_MAX_T) {
        return Err(Error::SearchTooLarge { t, max_t: max_t.min(DEFAULT_MAX_T) });
    }
    if sm.n_examples() > MAX_EXAMPLES {
        return Err(Error::invalid(format!(
            "brute force is limited to {MAX_EXAMPLES} examples, got {}",
            sm.n_examples()
        )));
    }

    let mut order: Vec<usize> = (0..t).collect();
    let mut best: Option<(f64, CascadePolicy)> = None;
    let mut optimal_orders = Vec::new();
    let mut searched = 0usize;
    loop {
        searched += 1;
        let (policy, cost) = scan_policy_for_order(sm, costs, config, &order)?;
        match &best {
            Some((best_cost, _)) if cost > *best_cost + tie_tolerance(*best_cost) => {}
            Some((best_cost, _)) if cost >= *best_cost - tie_tolerance(*best_cost) => {
                optimal_orders.push(order.clone());
            }
            _ => {
                best = Some((cost, policy));
                optimal_orders = vec![order.clone()];
            }
        }
        if !next_permutation(&mut order) {
            break;
        }
    }
    let (best_cost, policy) = best.expect("at least one order");
    Ok(OracleResult {
        best_order: policy.order().to_vec(),
        best_cost,
        policy,
        search_space_size: searched,
        optimal_orders,
    })
}

fn tie_tolerance(cost: f64) -> f64 {
    1e-12 * cost.abs().max(1.0)
}

/// Greedy cost over brute-force cost at `alpha = 0`.
pub fn approximation_ratio(sm: &ScoreMatrix, costs: &CostVector, beta: f64) -> Result<f64> {
    let config = DecisionConfig::new(beta, 0.0, StoppingMode::TwoSided)?;
    let oracle = brute_force_optimal(sm, costs, &config, DEFAULT_MAX_T)?;
    let greedy = optimize_order(sm, costs, &config)?;
    let reference = full_reference(sm, beta);
    let greedy_cost = evaluate_matrix(&greedy, sm, costs, &reference)?.mean_cost;
    Ok(greedy_cost / oracle.best_cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::evaluate_outcomes;
    use crate::qwyc::thresholds_for_fixed_order;

    fn zero_alpha() -> DecisionConfig {
        DecisionConfig::new(0.0, 0.0, StoppingMode::TwoSided).unwrap()
    }

    #[test]
    fn worked_example_matches_listed_outputs() {
        let sm = worked_example();
        let expected = [
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, -1.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
            [0.0, 0.0, -1.0],
        ];
        for (i, row) in expected.iter().enumerate() {
            assert_eq!(sm.row(i), row);
        }
    }

    #[test]
    fn worked_example_brute_force() {
        let sm = worked_example();
        let costs = CostVector::uniform(3);
        let res = brute_force_optimal(&sm, &costs, &zero_alpha(), 8).unwrap();
        assert_eq!(res.best_cost, 7.0 / 4.0);
        assert_eq!(res.search_space_size, 6);
        assert_eq!(res.optimal_orders, vec![vec![2, 0, 1], vec![2, 1, 0]]);
        assert_eq!(res.best_order, vec![2, 0, 1]);
        let reference = full_reference(&sm, 0.0);
        let m = evaluate_matrix(&res.policy, &sm, &costs, &reference).unwrap();
        assert_eq!(m.mean_cost, 7.0 / 4.0);
    }

    #[test]
    fn worked_example_ratio_is_one() {
        let sm = worked_example();
        assert_eq!(approximation_ratio(&sm, &CostVector::uniform(3), 0.0).unwrap(), 1.0);
    }

    #[test]
    fn single_model() {
        let sm = ScoreMatrix::from_rows(vec![vec![1.0], vec![-1.0]]).unwrap();
        let costs = CostVector::new(vec![3.0]).unwrap();
        let res = brute_force_optimal(&sm, &costs, &zero_alpha(), 8).unwrap();
        assert_eq!(res.best_cost, 3.0);
        assert_eq!(approximation_ratio(&sm, &costs, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn guard_refuses_large_t() {
        let sm = ScoreMatrix::from_rows(vec![vec![0.0; 9]]).unwrap();
        let err = brute_force_optimal(&sm, &CostVector::uniform(9), &zero_alpha(), 8).unwrap_err();
        assert!(matches!(err, Error::SearchTooLarge { t: 9, max_t: 8 }));
        let sm = ScoreMatrix::from_rows(vec![vec![0.0; 4]]).unwrap();
        assert!(brute_force_optimal(&sm, &CostVector::uniform(4), &zero_alpha(), 3).is_err());
    }

    #[test]
    fn permutations_are_lexicographic() {
        let mut p = vec![0, 1, 2];
        let mut all = vec![p.clone()];
        while next_permutation(&mut p) {
            all.push(p.clone());
        }
        assert_eq!(all, vec![vec![0, 1, 2], vec![0, 2, 1], vec![1, 0, 2], vec![1, 2, 0], vec![2, 0, 1], vec![2, 1, 0]]);
    }

    #[test]
    fn scan_matches_binary_search_on_a1_orders() {
        let sm = worked_example();
        let costs = CostVector::uniform(3);
        let mut order = vec![0, 1, 2];
        loop {
            let (scan, _) = scan_policy_for_order(&sm, &costs, &zero_alpha(), &order).unwrap();
            let fast = thresholds_for_fixed_order(&sm, &costs, &zero_alpha(), &order).unwrap();
            assert_eq!(scan, fast, "order {order:?}");
            if !next_permutation(&mut order) {
                break;
            }
        }
    }

    #[test]
    fn generator_respects_guards_and_structure() {
        assert!(gen_pipeline_instance(1, 7, 40).is_err());
        assert!(gen_pipeline_instance(1, 6, 49).is_err());
        assert!(gen_pipeline_instance(1, 6, 11).is_err());
        let inst = gen_pipeline_instance(7, 5, 30).unwrap();
        assert_eq!(inst.scores.n_models(), 5);
        assert_eq!(inst.scores.n_examples(), 30);
        assert_eq!(inst, gen_pipeline_instance(7, 5, 30).unwrap());
        let reference = full_reference(&inst.scores, 0.0);
        for (i, own) in inst.owners.iter().enumerate() {
            for t in 0..5 {
                let v = inst.scores.get(i, t);
                assert_eq!(v != 0.0, own.contains(&t));
                if v != 0.0 {
                    assert_eq!(v > 0.0, reference.full_decisions[i]);
                }
            }
        }
    }

    #[test]
    fn all_owned_by_first_model_puts_it_first() {
        let assignment: Vec<Vec<(usize, f64)>> =
            (0..10).map(|i| vec![(0, if i % 2 == 0 { 1.0 } else { -1.0 })]).collect();
        let inst = pipeline_instance_from_assignment(3, &assignment).unwrap();
        let res = brute_force_optimal(&inst.scores, &CostVector::uniform(3), &zero_alpha(), 8).unwrap();
        assert_eq!(res.best_order[0], 0);
        // Negatives stop at stage 1; the positives sit at eps_neg and wait
        // for the all-zero second stage to accept them.
        assert_eq!(res.best_cost, 1.5);
    }

    #[test]
    fn stoppable_sets_ignore_position() {
        for seed in 0..20 {
            let inst = gen_pipeline_instance(seed, 4, 20).unwrap();
            let costs = CostVector::uniform(4);
            let mut order = vec![0, 1, 2, 3];
            loop {
                let p = thresholds_for_fixed_order(&inst.scores, &costs, &zero_alpha(), &order).unwrap();
                let outcomes = evaluate_outcomes(&p, &inst.scores, &costs).unwrap();
                for (r, &model) in order.iter().enumerate().take(3) {
                    let stopped: Vec<usize> = (0..20).filter(|&i| outcomes[i].stop_stage == r + 1).collect();
                    let expected: Vec<usize> =
                        inst.owned_by(model).into_iter().filter(|&i| outcomes[i].stop_stage > r).collect();
                    assert_eq!(stopped, expected, "seed {seed}, order {order:?}, stage {r}");
                }
                if !next_permutation(&mut order) {
                    break;
                }
            }
        }
    }
}
