//! Per-task linear classifiers and the strategies for combining the two
//! task losses into one objective.
//!
//! Note on the two strategies: with `alpha = beta = 0.5`, the weighted
//! objective is exactly half the unweighted sum, so its gradients are exactly
//! half as well. Any difference between the two in training therefore comes
//! from how the optimizer reacts to gradient scale (Adam's normalization is
//! nearly scale-invariant, apart from `eps` and weight decay relative to
//! the step), not from a different descent direction.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::autograd::{Parameter, Tensor, TensorError};
use crate::corpus::Task;
use crate::layers::Linear;
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct TaskHead<T: Real> {
    pub task: Task,
    pub linear: Linear<T>,
}

impl<T: Real> TaskHead<T> {
    pub fn init<R: Rng + ?Sized>(task: Task, dim: usize, num_tags: usize, rng: &mut R) -> Result<Self, TensorError> {
        Ok(TaskHead {
            task,
            linear: Linear::init(&format!("{}_head", task.key()), dim, num_tags, rng)?,
        })
    }

    pub fn num_tags(&self) -> usize {
        self.linear.out_dim()
    }

    /// Per-token logits `[batch, seq, num_tags]`.
    pub fn classify(&self, shared: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.linear.forward(shared)
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        self.linear.parameters()
    }
}

/// Index of the largest logit in every row of width `classes`; the lowest
/// index wins ties.
pub fn argmax_rows<T: Real>(logits: &[T], classes: usize) -> Vec<usize> {
    logits
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossStrategy {
    /// `l_ner + l_pos`.
    UnweightedSum,
    /// `alpha * l_ner + beta * l_pos`.
    Weighted,
}

impl LossStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            LossStrategy::UnweightedSum => "sum",
            LossStrategy::Weighted => "weighted",
        }
    }
}

impl fmt::Display for LossStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for LossStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sum" => Ok(LossStrategy::UnweightedSum),
            "weighted" => Ok(LossStrategy::Weighted),
            other => Err(format!("unknown loss strategy `{other}` (expected sum|weighted)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("{task} loss is {value}; task losses must be finite and non-negative")]
    InvalidLoss { task: Task, value: f64 },
    #[error("loss weights must be finite and non-negative (alpha={alpha}, beta={beta})")]
    InvalidWeights { alpha: f64, beta: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCombiner {
    pub strategy: LossStrategy,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossCombiner {
    fn default() -> Self {
        LossCombiner::weighted(0.5, 0.5)
    }
}

impl LossCombiner {
    pub fn unweighted_sum() -> Self {
        LossCombiner {
            strategy: LossStrategy::UnweightedSum,
            alpha: 0.5,
            beta: 0.5,
        }
    }

    pub fn weighted(alpha: f64, beta: f64) -> Self {
        LossCombiner {
            strategy: LossStrategy::Weighted,
            alpha,
            beta,
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        if self.strategy == LossStrategy::Weighted && !(ok(self.alpha) && ok(self.beta)) {
            return Err(LossError::InvalidWeights {
                alpha: self.alpha,
                beta: self.beta,
            });
        }
        Ok(())
    }

    /// Differentiable combination of the two scalar task losses.
    pub fn combine<T: Real>(&self, l_ner: &Tensor<T>, l_pos: &Tensor<T>) -> Result<Tensor<T>, LossError> {
        self.validate()?;
        for (task, l) in [(Task::Ner, l_ner), (Task::Pos, l_pos)] {
            let v = l.item()?;
            if !v.is_finite() || v < T::zero() {
                return Err(LossError::InvalidLoss { task, value: v.as_f64() });
            }
        }
        Ok(match self.strategy {
            LossStrategy::UnweightedSum => l_ner.add(l_pos)?,
            LossStrategy::Weighted => l_ner.scale(T::lit(self.alpha)).add(&l_pos.scale(T::lit(self.beta)))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn s(v: f64) -> Tensor<f64> {
        Tensor::scalar(v)
    }

    #[test]
    fn combine_examples() {
        let sum = LossCombiner::unweighted_sum().combine(&s(1.0), &s(2.0)).unwrap();
        assert_eq!(sum.item().unwrap(), 3.0);
        let w = LossCombiner::weighted(0.5, 0.5).combine(&s(1.0), &s(2.0)).unwrap();
        assert_eq!(w.item().unwrap(), 1.5);
        let single = LossCombiner::weighted(1.0, 0.0).combine(&s(0.731), &s(42.0)).unwrap();
        assert_eq!(single.item().unwrap(), 0.731);
    }

    #[test]
    fn rejects_negative_or_non_finite() {
        let c = LossCombiner::default();
        assert!(matches!(c.combine(&s(-1.0), &s(1.0)), Err(LossError::InvalidLoss { task: Task::Ner, .. })));
        assert!(matches!(c.combine(&s(1.0), &s(f64::NAN)), Err(LossError::InvalidLoss { task: Task::Pos, .. })));
        assert!(LossCombiner::weighted(-0.1, 1.0).combine(&s(1.0), &s(1.0)).is_err());
    }

    #[test]
    fn zero_head_predicts_first_tag() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = TaskHead::<f64>::init(Task::Pos, 4, 5, &mut rng).unwrap();
        head.linear.weight.tensor.data_mut().fill(0.0);
        let x = Tensor::new(&[1, 3, 4], vec![0.7; 12]).unwrap();
        let logits = head.classify(&x).unwrap();
        assert_eq!(logits.shape(), &[1, 3, 5]);
        assert!(logits.to_vec().iter().all(|v| *v == 0.0));
        assert_eq!(argmax_rows(&logits.to_vec(), 5), vec![0, 0, 0]);
        head.linear.bias.tensor.data_mut()[3] = 10.0;
        assert_eq!(argmax_rows(&head.classify(&x).unwrap().to_vec(), 5), vec![3, 3, 3]);
    }

    #[test]
    fn classify_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = TaskHead::<f64>::init(Task::Ner, 4, 3, &mut rng).unwrap();
        let x = Tensor::new(&[1, 2, 5], vec![0.0; 10]).unwrap();
        assert!(head.classify(&x).is_err());
    }

    proptest! {
        #[test]
        fn weighted_half_is_half_of_sum(a in 0.0f64..100.0, b in 0.0f64..100.0) {
            let w = LossCombiner::weighted(0.5, 0.5).combine(&s(a), &s(b)).unwrap().item().unwrap();
            let u = LossCombiner::unweighted_sum().combine(&s(a), &s(b)).unwrap().item().unwrap();
            prop_assert!((w - 0.5 * u).abs() <= 1e-12);
        }

        #[test]
        fn monotone_in_each_loss(a in 0.0f64..10.0, b in 0.0f64..10.0, da in 0.0f64..5.0, alpha in 0.0f64..2.0, beta in 0.0f64..2.0) {
            let c = LossCombiner::weighted(alpha, beta);
            let base = c.combine(&s(a), &s(b)).unwrap().item().unwrap();
            prop_assert!(c.combine(&s(a + da), &s(b)).unwrap().item().unwrap() >= base);
            prop_assert!(c.combine(&s(a), &s(b + da)).unwrap().item().unwrap() >= base);
        }

        #[test]
        fn argmax_shift_invariant(row in prop::collection::vec(-50i32..50, 1..8), shift in -100i32..100) {
            let base: Vec<f64> = row.iter().map(|v| *v as f64).collect();
            let shifted: Vec<f64> = base.iter().map(|v| v + shift as f64).collect();
            prop_assert_eq!(argmax_rows(&base, base.len()), argmax_rows(&shifted, base.len()));
        }
    }
}
