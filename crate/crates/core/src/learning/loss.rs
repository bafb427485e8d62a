use crate::error::{Error, Result};
use crate::mrf::{joint_score, map_infer_fixed, CategoryModel, InstanceGraph, Labeling};

fn class_sizes(truth: &Labeling) -> Result<(usize, usize)> {
    let pos = truth.positives();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateCategory {
            positives: pos,
            negatives: neg,
        });
    }
    Ok((pos, neg))
}

/// Fails with [`Error::DegenerateCategory`] unless both classes occur.
pub fn check_truth(truth: &Labeling) -> Result<()> {
    class_sizes(truth).map(|_| ())
}

/// Balanced error rate: ½(FP/|negatives| + FN/|positives|).
pub fn ber_loss(pred: &Labeling, truth: &Labeling) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension {
            what: "prediction",
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    let (pos, neg) = class_sizes(truth)?;
    let (mut fp, mut fn_) = (0usize, 0usize);
    for (p, t) in pred.iter().zip(truth.iter()) {
        match (p > 0, t > 0) {
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Ok(0.5 * (fp as f64 / neg as f64 + fn_ as f64 / pos as f64))
}

/// Node-wise decomposition of [`ber_loss`] as `(reward for −1, reward for +1)`
/// pairs: the loss of any labeling is the sum of the rewards it collects.
pub fn ber_bias(truth: &Labeling) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = class_sizes(truth)?;
    let miss = 0.5 / pos as f64;
    let false_alarm = 0.5 / neg as f64;
    Ok(truth
        .iter()
        .map(|t| if t > 0 { (miss, 0.0) } else { (0.0, false_alarm) })
        .collect())
}

/// The most violated labeling argmax_Y ⟨Φ(X,Y),Θ⟩ + Δ(Y, truth) and its
/// objective value.
pub fn loss_augmented_argmax(
    graph: &InstanceGraph,
    model: &CategoryModel,
    truth: &Labeling,
) -> Result<(Labeling, f64)> {
    loss_augmented_argmax_with_context(graph, model, truth, &vec![false; truth.len()])
}

/// As [`loss_augmented_argmax`], with the `context` nodes fixed to their true
/// labels. The loss covers the remaining nodes only.
pub fn loss_augmented_argmax_with_context(
    graph: &InstanceGraph,
    model: &CategoryModel,
    truth: &Labeling,
    context: &[bool],
) -> Result<(Labeling, f64)> {
    if truth.len() != graph.node_count() {
        return Err(Error::Dimension {
            what: "ground truth",
            expected: graph.node_count(),
            actual: truth.len(),
        });
    }
    if context.len() != truth.len() {
        return Err(Error::Dimension {
            what: "context mask",
            expected: truth.len(),
            actual: context.len(),
        });
    }
    let free: Vec<usize> = (0..truth.len()).filter(|&i| !context[i]).collect();
    let free_truth = truth.select(&free);
    let observed: Vec<Option<i8>> = truth
        .iter()
        .zip(context)
        .map(|(t, &c)| c.then_some(t))
        .collect();
    let mut bias = vec![(0.0, 0.0); truth.len()];
    for (&i, b) in free.iter().zip(ber_bias(&free_truth)?) {
        bias[i] = b;
    }
    let y = map_infer_fixed(graph, model, &bias, &observed)?;
    let value = joint_score(graph, model, &y)? + ber_loss(&y.select(&free), &free_truth)?;
    Ok((y, value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrf::test_support::weighted;

    fn lab(v: &[i8]) -> Labeling {
        Labeling::new(v.to_vec()).unwrap()
    }

    #[test]
    fn reference_values() {
        let truth = lab(&[1, 1, -1, -1, -1]);
        assert_eq!(ber_loss(&truth, &truth).unwrap(), 0.0);
        assert_eq!(ber_loss(&truth.negated(), &truth).unwrap(), 1.0);
        assert_eq!(ber_loss(&lab(&[1; 5]), &truth).unwrap(), 0.5);
        assert_eq!(ber_loss(&lab(&[-1; 5]), &truth).unwrap(), 0.5);
        // one miss out of 2 positives, one false alarm out of 3 negatives
        let v = ber_loss(&lab(&[1, -1, 1, -1, -1]), &truth).unwrap();
        assert!((v - 0.5 * (1.0 / 3.0 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn degenerate_truth_rejected() {
        assert!(matches!(
            ber_loss(&lab(&[1, 1]), &lab(&[1, 1])),
            Err(Error::DegenerateCategory { positives: 2, negatives: 0 })
        ));
        assert!(ber_bias(&lab(&[-1])).is_err());
    }

    #[test]
    fn bias_decomposes_loss_exactly() {
        let truth = lab(&[1, -1, -1, 1, -1, 1, -1]);
        let bias = ber_bias(&truth).unwrap();
        let n = truth.len();
        for mask in 0..1u32 << n {
            let y = Labeling::from_bools(&(0..n).map(|i| mask >> i & 1 == 1).collect::<Vec<_>>());
            let decomposed: f64 = y
                .iter()
                .zip(&bias)
                .map(|(v, b)| if v > 0 { b.1 } else { b.0 })
                .sum();
            assert!((decomposed - ber_loss(&y, &truth).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_parameters_return_complement() {
        let (g, _) = weighted(&[0.0; 4], &[(0, 1, 1.0), (2, 3, 1.0)]);
        let m = CategoryModel::zeros("c", 4);
        let truth = lab(&[1, -1, -1, 1]);
        let (y, v) = loss_augmented_argmax(&g, &m, &truth).unwrap();
        assert_eq!(y, truth.negated());
        assert_eq!(v, 1.0);
    }

    #[test]
    fn dominant_correct_unaries_return_truth() {
        let (g, m) = weighted(&[100.0, -100.0, 100.0], &[(0, 1, 0.1)]);
        let truth = lab(&[1, -1, 1]);
        let (y, v) = loss_augmented_argmax(&g, &m, &truth).unwrap();
        assert_eq!(y, truth);
        assert_eq!(v, joint_score(&g, &m, &truth).unwrap());
    }

    #[test]
    fn context_nodes_stay_fixed_and_match_brute_force() {
        let (g, m) = weighted(
            &[0.3, -0.2, 0.1, -0.4, 0.05, 0.2],
            &[(0, 1, 0.5), (1, 2, 0.7), (2, 3, 0.2), (3, 4, 0.9), (4, 5, 0.3), (0, 5, 0.4)],
        );
        let truth = lab(&[1, -1, 1, -1, -1, 1]);
        let context = [true, false, false, true, false, false];
        let (y, v) = loss_augmented_argmax_with_context(&g, &m, &truth, &context).unwrap();
        assert_eq!(y.get(0), 1);
        assert_eq!(y.get(3), -1);
        let free = [1, 2, 4, 5];
        let free_truth = truth.select(&free);
        let mut best = f64::NEG_INFINITY;
        for mask in 0..1u32 << 4 {
            let mut v = truth.as_slice().to_vec();
            for (k, &i) in free.iter().enumerate() {
                v[i] = if mask >> k & 1 == 1 { 1 } else { -1 };
            }
            let cand = lab(&v);
            let s = joint_score(&g, &m, &cand).unwrap() + ber_loss(&cand.select(&free), &free_truth).unwrap();
            best = best.max(s);
        }
        assert!((v - best).abs() < 1e-9);
    }
}
