//! Co-occurrence prediction subtasks.
//!
//! Two binary auxiliary objectives share one recipe. The coarse task asks,
//! for each relation expressed in a document, "does this relation co-occur
//! with the rest of the document's relations?", contrasting it against
//! sampled relations the document does not express. The fine task asks the
//! same of relation-aggregated entity-pair embeddings, contrasting labeled
//! pairs against sampled NA pairs. Construction is planned over indices
//! (cheap, testable against brute force) and then realized on the tape.

use crate::autograd::{sigmoid, BoundParams, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Which subtask an example belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Grain {
    Coarse,
    Fine,
}

/// One planned example: indices into a row matrix of candidate embeddings
/// (relation rows for the coarse task, pair rows for the fine task).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CooccurPlan {
    pub target: usize,
    /// Rows averaged into the condition vector; never contains the target
    /// of a positive example.
    pub condition: Vec<usize>,
    pub label: bool,
    pub grain: Grain,
}

/// Plan coarse-grained examples for one document.
///
/// For every expressed relation r, `(r, R⁺ − {r})` is a positive. Each
/// positive spawns up to `neg_per_pos` negatives by swapping the target for
/// a relation the document does not express, sampled without replacement;
/// the condition set stays the same. Documents with fewer than two expressed
/// relations yield nothing (the condition would be empty).
pub fn plan_crcp_examples(
    r_plus: &[usize],
    n_relations: usize,
    neg_per_pos: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<CooccurPlan> {
    debug_assert!(r_plus.windows(2).all(|w| w[0] < w[1]), "r_plus must be sorted unique");
    if r_plus.len() < 2 {
        return Vec::new();
    }
    let r_minus: Vec<usize> =
        (0..n_relations).filter(|r| r_plus.binary_search(r).is_err()).collect();
    let mut plans = Vec::new();
    for &target in r_plus {
        let condition: Vec<usize> =
            r_plus.iter().copied().filter(|&r| r != target).collect();
        plans.push(CooccurPlan {
            target,
            condition: condition.clone(),
            label: true,
            grain: Grain::Coarse,
        });
        let take = neg_per_pos.min(r_minus.len());
        if take > 0 {
            for idx in sample(rng, r_minus.len(), take) {
                plans.push(CooccurPlan {
                    target: r_minus[idx],
                    condition: condition.clone(),
                    label: false,
                    grain: Grain::Coarse,
                });
            }
        }
    }
    plans
}

/// Plan fine-grained examples for one document.
///
/// `non_na_rows` and `na_rows` index pair representations: rows of labeled
/// pairs and rows of NA pairs respectively. Every labeled pair is a positive
/// conditioned on the other labeled pairs; negatives swap the target for a
/// sampled NA row, keeping the condition.
pub fn plan_frcp_examples(
    non_na_rows: &[usize],
    na_rows: &[usize],
    neg_per_pos: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<CooccurPlan> {
    if non_na_rows.len() < 2 {
        return Vec::new();
    }
    let mut plans = Vec::new();
    for &target in non_na_rows {
        let condition: Vec<usize> =
            non_na_rows.iter().copied().filter(|&r| r != target).collect();
        plans.push(CooccurPlan {
            target,
            condition: condition.clone(),
            label: true,
            grain: Grain::Fine,
        });
        let take = neg_per_pos.min(na_rows.len());
        if take > 0 {
            for idx in sample(rng, na_rows.len(), take) {
                plans.push(CooccurPlan {
                    target: na_rows[idx],
                    condition: condition.clone(),
                    label: false,
                    grain: Grain::Fine,
                });
            }
        }
    }
    plans
}

/// Planned examples turned into tape rows: targets and condition means
/// stacked `E×d_h`, labels as an `E×1` column.
pub struct RealizedExamples {
    pub targets: Var,
    pub conditions: Var,
    pub labels: Array2<f64>,
}

/// Gather target rows and average condition rows out of `source` (relation
/// embeddings for the coarse task, pair representations for the fine task).
/// Gradients flow into `source` through both targets and conditions.
pub fn realize_examples(
    tape: &mut Tape,
    source: Var,
    plans: &[CooccurPlan],
) -> Result<RealizedExamples> {
    if plans.is_empty() {
        return Err(Error::data("no co-occurrence examples to realize"));
    }
    let target_idx: Vec<usize> = plans.iter().map(|p| p.target).collect();
    let targets = tape.gather_rows(source, &target_idx);
    let mut condition_rows = Vec::with_capacity(plans.len());
    for plan in plans {
        if plan.condition.is_empty() {
            return Err(Error::data("co-occurrence example with empty condition"));
        }
        let rows = tape.gather_rows(source, &plan.condition);
        condition_rows.push(tape.mean_rows(rows));
    }
    let conditions = tape.concat_rows(&condition_rows);
    let mut labels = Array2::zeros((plans.len(), 1));
    for (i, plan) in plans.iter().enumerate() {
        labels[[i, 0]] = if plan.label { 1.0 } else { 0.0 };
    }
    Ok(RealizedExamples {
        targets,
        conditions,
        labels,
    })
}

/// Initialize one binary head: a weight over `[target; condition]` plus a
/// bias. `prefix` is "crcp" or "frcp"; the two tasks share the formula but
/// never the weights.
pub fn init_head(prefix: &str, d_h: usize, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = (6.0 / (2 * d_h + 1) as f64).sqrt();
    let mut params = ParamSet::new();
    params.insert(
        format!("{prefix}.weight"),
        Array2::from_shape_fn((2 * d_h, 1), |_| rng.random_range(-a..a)),
    );
    params.insert(format!("{prefix}.bias"), Array2::zeros((1, 1)));
    params
}

/// Head logits for realized examples: `[targets; conditions] · w + b`,
/// one logit per example.
pub fn head_logits(
    tape: &mut Tape,
    examples: &RealizedExamples,
    bound: &BoundParams,
    prefix: &str,
) -> Var {
    let z = tape.concat_cols(examples.targets, examples.conditions);
    let m = tape.matmul(z, bound.var(&format!("{prefix}.weight")));
    tape.add_row(m, bound.var(&format!("{prefix}.bias")))
}

/// Binary cross-entropy over realized examples, summed (the per-batch
/// division by contributing document count happens in the trainer).
pub fn subtask_loss(
    tape: &mut Tape,
    examples: &RealizedExamples,
    bound: &BoundParams,
    prefix: &str,
) -> Var {
    let logits = head_logits(tape, examples, bound, prefix);
    tape.bce_with_logits_sum(logits, &examples.labels)
}

/// Detached co-occurrence probability for one example, for fixtures and
/// inspection: `σ(w · [target; mean(condition)] + b)`.
pub fn cooccur_probability(
    target: &[f64],
    condition: &[Vec<f64>],
    weight: &[f64],
    bias: f64,
) -> f64 {
    assert!(!condition.is_empty(), "condition must be non-empty");
    let d = target.len();
    assert_eq!(weight.len(), 2 * d);
    let mut avg = vec![0.0; d];
    for row in condition {
        assert_eq!(row.len(), d);
        for (a, &x) in avg.iter_mut().zip(row) {
            *a += x;
        }
    }
    for a in &mut avg {
        *a /= condition.len() as f64;
    }
    let mut logit = bias;
    for (i, &t) in target.iter().enumerate() {
        logit += weight[i] * t;
    }
    for (i, &a) in avg.iter().enumerate() {
        logit += weight[d + i] * a;
    }
    sigmoid(logit)
}

/// Detached BCE sum over (probability, label) pairs, for fixtures.
pub fn bce_sum(examples: &[(f64, f64)]) -> f64 {
    examples
        .iter()
        .map(|&(p, q)| -(q * p.ln() + (1.0 - q) * (1.0 - p).ln()))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn crcp_counts_positives_and_negatives() {
        let plans = plan_crcp_examples(&[1, 2, 5], 8, 1, &mut rng(0));
        let pos = plans.iter().filter(|p| p.label).count();
        let neg = plans.iter().filter(|p| !p.label).count();
        assert_eq!(pos, 3);
        assert_eq!(neg, 3);
    }

    #[test]
    fn crcp_skips_single_relation_documents() {
        assert!(plan_crcp_examples(&[4], 8, 1, &mut rng(0)).is_empty());
        assert!(plan_crcp_examples(&[], 8, 1, &mut rng(0)).is_empty());
    }

    #[test]
    fn crcp_negative_targets_come_from_the_complement() {
        let r_plus = [0, 3];
        let plans = plan_crcp_examples(&r_plus, 5, 3, &mut rng(7));
        let pos = plans.iter().filter(|p| p.label).count();
        let neg: Vec<_> = plans.iter().filter(|p| !p.label).collect();
        assert_eq!(pos, 2);
        assert_eq!(neg.len(), 6);
        for p in &neg {
            assert!(!r_plus.contains(&p.target));
            // negatives reuse a positive's condition untouched
            assert!(p.condition == vec![3] || p.condition == vec![0]);
        }
    }

    #[test]
    fn crcp_caps_negatives_at_pool_size() {
        // schema of 3, two expressed: pool has exactly 1 relation
        let plans = plan_crcp_examples(&[0, 1], 3, 5, &mut rng(3));
        let neg = plans.iter().filter(|p| !p.label).count();
        assert_eq!(neg, 2); // one per positive, capped by |pool| = 1
        // no negatives at all when the document expresses everything
        let all = plan_crcp_examples(&[0, 1, 2], 3, 5, &mut rng(3));
        assert!(all.iter().all(|p| p.label));
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn positive_conditions_exclude_their_target() {
        let plans = plan_crcp_examples(&[2, 4, 6, 7], 10, 2, &mut rng(11));
        for p in plans.iter().filter(|p| p.label) {
            assert!(!p.condition.contains(&p.target));
            assert_eq!(p.condition.len(), 3);
        }
    }

    #[test]
    fn frcp_counts_and_membership() {
        let non_na = [0, 2, 5];
        let na = [1, 3, 4, 6, 7, 8, 9, 10, 11, 12];
        let plans = plan_frcp_examples(&non_na, &na, 1, &mut rng(1));
        let pos = plans.iter().filter(|p| p.label).count();
        let neg: Vec<_> = plans.iter().filter(|p| !p.label).collect();
        assert_eq!(pos, 3);
        assert_eq!(neg.len(), 3);
        for p in &neg {
            assert!(na.contains(&p.target));
            for c in &p.condition {
                assert!(non_na.contains(c));
            }
        }
    }

    #[test]
    fn frcp_skips_below_two_labeled_pairs() {
        assert!(plan_frcp_examples(&[3], &[0, 1], 1, &mut rng(0)).is_empty());
    }

    #[test]
    fn construction_is_deterministic_per_seed() {
        let a = plan_crcp_examples(&[1, 3, 4], 9, 2, &mut rng(42));
        let b = plan_crcp_examples(&[1, 3, 4], 9, 2, &mut rng(42));
        assert_eq!(a, b);
    }

    #[test]
    fn probability_hand_fixture() {
        // target [1,0], condition mean [0,1], weight all ones: logit 2
        let p = cooccur_probability(
            &[1.0, 0.0],
            &[vec![0.0, 1.0]],
            &[1.0, 1.0, 1.0, 1.0],
            0.0,
        );
        assert!((p - sigmoid(2.0)).abs() < 1e-12);
        assert!((p - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn zero_head_gives_even_odds() {
        let p = cooccur_probability(&[1.0, -3.0], &[vec![2.0, 0.5]], &[0.0; 4], 0.0);
        assert_eq!(p, 0.5);
    }

    #[test]
    fn singleton_condition_is_identity_average() {
        let v = vec![0.3, -0.8];
        let a = cooccur_probability(&[0.1, 0.2], std::slice::from_ref(&v), &[0.5, -0.2, 0.7, 0.4], 0.1);
        let b = cooccur_probability(&[0.1, 0.2], &[v.clone(), v], &[0.5, -0.2, 0.7, 0.4], 0.1);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn bce_hand_fixtures() {
        assert!((bce_sum(&[(0.5, 1.0)]) - 2.0f64.ln()).abs() < 1e-12);
        let two = bce_sum(&[(0.8, 1.0), (0.3, 0.0)]);
        assert!((two - (-(0.8f64.ln()) - 0.7f64.ln())).abs() < 1e-12);
        assert!((two - 0.5798).abs() < 1e-4);
        // confident correct predictions approach zero loss
        assert!(bce_sum(&[(0.999999, 1.0), (1e-6, 0.0)]) < 1e-5);
    }

    #[test]
    fn loss_decreases_as_probability_approaches_label() {
        let base = bce_sum(&[(0.6, 1.0), (0.4, 0.0)]);
        let better = bce_sum(&[(0.7, 1.0), (0.4, 0.0)]);
        assert!(better < base);
    }

    #[test]
    fn realized_loss_matches_detached_arithmetic() {
        let d = 2;
        let source_vals = ndarray::array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]];
        let mut head = ParamSet::new();
        head.insert("crcp.weight", Array2::from_elem((2 * d, 1), 1.0));
        head.insert("crcp.bias", Array2::zeros((1, 1)));
        let plans = vec![
            CooccurPlan {
                target: 0,
                condition: vec![1, 2],
                label: true,
                grain: Grain::Coarse,
            },
            CooccurPlan {
                target: 2,
                condition: vec![0],
                label: false,
                grain: Grain::Coarse,
            },
        ];
        let mut tape = Tape::new();
        let bound = head.bind(&mut tape);
        let source = tape.leaf(source_vals.clone());
        let realized = realize_examples(&mut tape, source, &plans).unwrap();
        let loss = subtask_loss(&mut tape, &realized, &bound, "crcp");
        let p1 = cooccur_probability(
            &[1.0, 0.0],
            &[vec![0.0, 1.0], vec![0.5, 0.5]],
            &[1.0; 4],
            0.0,
        );
        let p2 = cooccur_probability(&[0.5, 0.5], &[vec![1.0, 0.0]], &[1.0; 4], 0.0);
        let expect = bce_sum(&[(p1, 1.0), (p2, 0.0)]);
        assert!((tape.scalar(loss) - expect).abs() < 1e-12);
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let plans = vec![
            CooccurPlan {
                target: 0,
                condition: vec![1, 2],
                label: true,
                grain: Grain::Coarse,
            },
            CooccurPlan {
                target: 3,
                condition: vec![1, 2],
                label: false,
                grain: Grain::Coarse,
            },
        ];
        let mut params = init_head("crcp", 3, 5);
        // also check gradient flow into the source embeddings
        params.insert(
            "emb",
            ndarray::array![
                [0.6, -0.2, 0.1],
                [0.3, 0.9, -0.5],
                [-0.7, 0.2, 0.4],
                [0.1, 0.1, -0.3]
            ],
        );
        let report = crate::gradcheck::check_loss_gradients(&params, 1e-5, |tape, bound| {
            let realized = realize_examples(tape, bound.var("emb"), &plans).unwrap();
            subtask_loss(tape, &realized, bound, "crcp")
        });
        assert!(
            report.max_rel_error < 1e-4,
            "{} at {}",
            report.max_rel_error,
            report.worst
        );
    }
}
