//! Central finite-difference checks of analytic gradients.
//!
//! For every input element `x_i` the numeric derivative is
//! `(f(x + ε e_i) − f(x − ε e_i)) / 2ε` and the error is
//! `|a − n| / max(1, |a|, |n|)`. Non-scalar op outputs are reduced with a fixed
//! random weighting so every output element contributes.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Tensor, TensorError, IGNORE};
use crate::corpus::{Batch, Task};
use crate::encoder::{EncoderConfig, TokenBatch};
use crate::fusion::{fuse, FusionMode};
use crate::heads::LossCombiner;
use crate::model::{ModelConfig, ModelError, MtlModel};

pub const FD_EPS: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Number of scalar derivatives compared.
    pub checked: usize,
    /// Input and element index of the worst derivative.
    pub worst: Option<(String, usize)>,
}

impl GradCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares `f`'s analytic gradient against finite differences for every
/// element of every tensor in `inputs`. `f` must recompute the graph from the
/// current input data on each call.
pub fn check_gradients<E>(
    name: &str,
    inputs: &[(String, Tensor<f64>)],
    f: impl Fn() -> Result<Tensor<f64>, E>,
) -> Result<GradCheck, E> {
    for (_, t) in inputs {
        t.zero_grad();
    }
    let y = f()?;
    y.backward().expect("gradient check objective must be a scalar");
    let mut result = GradCheck {
        name: name.to_string(),
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for (input_name, t) in inputs {
        let analytic = t.grad().unwrap_or_else(|| vec![0.0; t.len()]);
        for i in 0..t.len() {
            let orig = t.data()[i];
            t.data_mut()[i] = orig + FD_EPS;
            let up = f()?.item().expect("scalar");
            t.data_mut()[i] = orig - FD_EPS;
            let down = f()?.item().expect("scalar");
            t.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_EPS);
            let err = relative_error(analytic[i], numeric);
            result.checked += 1;
            if err > result.max_rel_error || err.is_nan() {
                result.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                result.worst = Some((input_name.clone(), i));
            }
        }
    }
    for (_, t) in inputs {
        t.zero_grad();
    }
    Ok(result)
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let dist = Normal::new(0.0, 1.0).unwrap();
    Tensor::parameter(shape, (0..n).map(|_| dist.sample(rng)).collect()).unwrap()
}

fn named(items: &[(&str, &Tensor<f64>)]) -> Vec<(String, Tensor<f64>)> {
    items.iter().map(|(n, t)| (n.to_string(), (*t).clone())).collect()
}

/// `sum(y ⊙ w)` for a fixed weighting `w`.
fn weighted_sum(y: &Tensor<f64>, w: &Tensor<f64>) -> Result<Tensor<f64>, TensorError> {
    Ok(y.mul(w)?.sum())
}

/// Checks every differentiable primitive on small random inputs.
pub fn op_suite(seed: u64) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut run = |name: &str, inputs: Vec<(String, Tensor<f64>)>, shape: &[usize], f: &dyn Fn() -> Result<Tensor<f64>, TensorError>, rng: &mut ChaCha8Rng| {
        let w = Tensor::new(shape, (0..shape.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        out.push(check_gradients(name, &inputs, || weighted_sum(&f()?, &w)).expect(name));
    };

    let a = random(&[3, 4], &mut rng);
    let b = random(&[4, 2], &mut rng);
    run("matmul", named(&[("a", &a), ("b", &b)]), &[3, 2], &|| a.matmul(&b), &mut rng);

    let a = random(&[2, 3, 4], &mut rng);
    let b = random(&[2, 4, 3], &mut rng);
    run("batch_matmul", named(&[("a", &a), ("b", &b)]), &[2, 3, 3], &|| a.batch_matmul(&b), &mut rng);

    let a = random(&[2, 3, 4], &mut rng);
    let b = random(&[4], &mut rng);
    run("add_broadcast", named(&[("a", &a), ("b", &b)]), &[2, 3, 4], &|| a.add(&b), &mut rng);
    let c = random(&[2, 3, 4], &mut rng);
    run("sub", named(&[("a", &a), ("c", &c)]), &[2, 3, 4], &|| a.sub(&c), &mut rng);
    run("mul", named(&[("a", &a), ("c", &c)]), &[2, 3, 4], &|| a.mul(&c), &mut rng);
    let s = random(&[3, 4], &mut rng);
    run("mul_broadcast", named(&[("a", &a), ("s", &s)]), &[2, 3, 4], &|| a.mul(&s), &mut rng);
    run("scale", named(&[("a", &a)]), &[2, 3, 4], &|| Ok(a.scale(-1.7)), &mut rng);
    run("sum", named(&[("a", &a)]), &[1], &|| Ok(a.sum()), &mut rng);
    run("reshape", named(&[("a", &a)]), &[6, 4], &|| a.reshape(&[6, 4]), &mut rng);
    run("permute", named(&[("a", &a)]), &[4, 2, 3], &|| a.permute(&[2, 0, 1]), &mut rng);
    run("softmax", named(&[("a", &a)]), &[2, 3, 4], &|| a.softmax(), &mut rng);
    let keep = [true, false, true, true, true, true, false, true, false, true, true, true];
    run("masked_softmax", named(&[("a", &a)]), &[2, 3, 4], &|| {
        let k: Vec<bool> = (0..6).flat_map(|r| keep[(r % 3) * 4..(r % 3) * 4 + 4].to_vec()).collect();
        a.masked_softmax(Some(&k))
    }, &mut rng);
    run("gelu", named(&[("a", &a)]), &[2, 3, 4], &|| Ok(a.gelu()), &mut rng);

    let g = random(&[4], &mut rng);
    let bias = random(&[4], &mut rng);
    run("layer_norm", named(&[("x", &a), ("gain", &g), ("bias", &bias)]), &[2, 3, 4], &|| a.layer_norm(&g, &bias, 1e-5), &mut rng);

    let logits = random(&[5, 3], &mut rng);
    let targets = [2, 0, IGNORE, 1, 1];
    run("cross_entropy", named(&[("logits", &logits)]), &[1], &|| logits.cross_entropy(&targets), &mut rng);

    let table = random(&[6, 3], &mut rng);
    let ids = [4, 0, 4, 2];
    run("embedding", named(&[("table", &table)]), &[4, 3], &|| table.embedding(&ids), &mut rng);

    let x = random(&[3, 5], &mut rng);
    run("dropout", named(&[("x", &x)]), &[3, 5], &|| x.dropout(0.3, &mut ChaCha8Rng::seed_from_u64(11)), &mut rng);

    let h_a = random(&[2, 3, 4], &mut rng);
    let h_b = random(&[2, 3, 4], &mut rng);
    for mode in FusionMode::ALL {
        let name = format!("fuse_{mode}");
        run(&name, named(&[("h_a", &h_a), ("h_b", &h_b)]), &[2, 3, 4], &|| fuse(&h_a, &h_b, mode), &mut rng);
    }

    let (l1, l2) = (Tensor::parameter(&[1], vec![0.8]).unwrap(), Tensor::parameter(&[1], vec![1.9]).unwrap());
    for (name, c) in [("loss_sum", LossCombiner::unweighted_sum()), ("loss_weighted", LossCombiner::weighted(0.3, 0.9))] {
        run(name, named(&[("l_ner", &l1), ("l_pos", &l2)]), &[1], &|| c.combine(&l1, &l2).map_err(|e| match e {
            crate::heads::LossError::Tensor(t) => t,
            other => panic!("{other}"),
        }), &mut rng);
    }
    out
}

/// The smallest model used for the end-to-end check: hidden size 8, one
/// layer, two heads, batch 2, sequence length 4.
pub fn tiny_model_config(fusion: FusionMode) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            vocab_size: 10,
            max_seq_len: 4,
            hidden_dim: 8,
            num_layers: 1,
            num_heads: 2,
            ffn_dim: 16,
            dropout_rate: 0.0,
        },
        hidden_dim_b: None,
        projection: false,
        fusion,
        post_fusion_norm: false,
        ner_tags: 3,
        pos_tags: 4,
    }
}

/// Finite-difference check of the combined loss with respect to every
/// parameter of a tiny model; the second row of each batch is padded.
pub fn model_check(fusion: FusionMode, seed: u64) -> Result<GradCheck, ModelError> {
    let config = tiny_model_config(fusion);
    let model = MtlModel::<f64>::init(&config, seed)?;
    // Scale up the default init so the check is not dominated by near-zero
    // activations.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5);
    for p in model.parameters() {
        for v in p.tensor.data_mut().iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let tokens = TokenBatch::from_sentences(&[vec![2, 5, 7, 1], vec![3, 9, 4]]);
    let ner = Batch {
        tokens: tokens.clone(),
        tag_ids: vec![0, 1, 2, 0, 1, 0, 0, IGNORE],
        sentence_indices: vec![0, 1],
    };
    let pos = Batch {
        tokens,
        tag_ids: vec![3, 1, 2, 0, 0, 2, 1, IGNORE],
        sentence_indices: vec![0, 1],
    };
    let inputs: Vec<(String, Tensor<f64>)> = model.parameters().iter().map(|p| (p.name.clone(), p.tensor.clone())).collect();
    let combiner = LossCombiner::default();
    check_gradients(&format!("model_{fusion}"), &inputs, || -> Result<Tensor<f64>, ModelError> {
        let l_ner = model.task_loss(Task::Ner, &ner, None)?;
        let l_pos = model.task_loss(Task::Pos, &pos, None)?;
        combiner.combine(&l_ner, &l_pos).map_err(|e| match e {
            crate::heads::LossError::Tensor(t) => ModelError::Tensor(t),
            other => ModelError::Config(other.to_string()),
        })
    })
}

/// `x²` with a deliberately wrong backward (`x` instead of `2x`). The checker
/// must flag it.
pub fn injected_fault_check() -> GradCheck {
    let x = Tensor::parameter(&[3], vec![0.5, -1.5, 2.0]).unwrap();
    let inputs = vec![("x".to_string(), x.clone())];
    check_gradients("faulty_square", &inputs, || -> Result<Tensor<f64>, TensorError> {
        let value: Vec<f64> = x.data().iter().map(|v| v * v).collect();
        let y = Tensor::custom(
            "faulty_square",
            std::slice::from_ref(&x),
            &[3],
            value,
            Rc::new(|inputs: &[Vec<f64>], _out: &[f64], gout: &[f64]| {
                vec![inputs[0].iter().zip(gout).map(|(x, g)| x * g).collect()]
            }),
        )?;
        Ok(y.sum())
    })
    .unwrap()
}
