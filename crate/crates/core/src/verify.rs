//! Finite-difference verification of every differentiable primitive and of
//! a tiny end-to-end model.

use rand::Rng;

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::fusion::FusionKind;
use crate::model::{EpisodeBatch, LossSpec, Model, ModelConfig};
use crate::rng::{self, StreamRng};
use crate::semantics::AuxLossKind;
use crate::tensor::gradcheck::{finite_difference_gradient, max_relative_error, DEFAULT_STEP};
use crate::tensor::{BnMode, BnStats, Graph, Tensor, Var};

pub const OPS_THRESHOLD: f64 = 1e-4;
pub const END2END_THRESHOLD: f64 = 1e-3;
/// Random shapes tried per primitive.
pub const CASES_PER_OP: usize = 5;

/// Outcome of checking one primitive (or the whole model).
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub max_rel_error: f64,
    pub threshold: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.threshold
    }
}

/// Turn a failed check list into a verification error naming the culprits.
pub fn ensure_passed(results: &[CheckResult]) -> Result<()> {
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Verification(format!("gradient check failed for {}", failed.join(", "))))
    }
}

type Build = fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

/// A primitive under test: random inputs for case `i` and the graph using them.
struct OpCase {
    name: &'static str,
    inputs: fn(&mut StreamRng, usize) -> Vec<Tensor<f64>>,
    build: Build,
}

fn dim(r: &mut StreamRng) -> usize {
    r.random_range(1..=4)
}

fn normal(shape: &[usize], r: &mut StreamRng) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, r)
}

/// Values bounded away from zero, so `relu` has no kink within the step.
fn off_zero(shape: &[usize], r: &mut StreamRng) -> Tensor<f64> {
    let t = normal(shape, r);
    t.map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
}

/// A random permutation of well-separated values, so max-pool has no ties.
fn distinct(shape: &[usize], r: &mut StreamRng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut idx: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), r);
    let data: Vec<f64> = idx.iter().map(|&i| i as f64 * 0.1 - n as f64 * 0.05).collect();
    Tensor::new(shape, data).expect("shape matches")
}

fn ops() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "add",
            inputs: |r, _| {
                let s = [dim(r), dim(r)];
                vec![normal(&s, r), normal(&s, r)]
            },
            build: |g, x| g.add(x[0], x[1]),
        },
        OpCase {
            name: "sub",
            inputs: |r, _| {
                let s = [dim(r), dim(r), dim(r)];
                vec![normal(&s, r), normal(&s, r)]
            },
            build: |g, x| g.sub(x[0], x[1]),
        },
        OpCase {
            name: "mul",
            inputs: |r, _| {
                let s = [dim(r), dim(r)];
                vec![normal(&s, r), normal(&s, r)]
            },
            build: |g, x| g.mul(x[0], x[1]),
        },
        OpCase {
            name: "add_broadcast",
            inputs: |r, _| {
                let (a, b) = (dim(r), dim(r) + 1);
                vec![normal(&[dim(r), a, b], r), normal(&[a, b], r)]
            },
            build: |g, x| g.add_broadcast(x[0], x[1]),
        },
        OpCase {
            name: "mul_broadcast",
            inputs: |r, _| {
                let (a, b) = (dim(r), dim(r));
                vec![normal(&[a, b, dim(r) + 1], r), normal(&[a, b], r)]
            },
            build: |g, x| g.mul_broadcast(x[0], x[1]),
        },
        OpCase {
            name: "scale",
            inputs: |r, _| vec![normal(&[dim(r), dim(r)], r)],
            build: |g, x| Ok(g.scale(x[0], -1.7)),
        },
        OpCase {
            name: "relu",
            inputs: |r, _| vec![off_zero(&[dim(r), dim(r) + 2], r)],
            build: |g, x| Ok(g.relu(x[0])),
        },
        OpCase {
            name: "sigmoid",
            inputs: |r, _| vec![normal(&[dim(r), dim(r)], r).map(|v| 3.0 * v)],
            build: |g, x| Ok(g.sigmoid(x[0])),
        },
        OpCase {
            name: "exp",
            inputs: |r, _| vec![normal(&[dim(r), dim(r)], r)],
            build: |g, x| Ok(g.exp(x[0])),
        },
        OpCase {
            name: "log",
            inputs: |r, _| vec![Tensor::uniform(&[dim(r), dim(r)], 0.2, 2.0, r)],
            build: |g, x| Ok(g.log(x[0])),
        },
        OpCase {
            name: "sum_axis",
            inputs: |r, _| vec![normal(&[dim(r), dim(r) + 1, dim(r)], r)],
            build: |g, x| g.sum_axis(x[0], 1),
        },
        OpCase {
            name: "sum",
            inputs: |r, _| vec![normal(&[dim(r), dim(r)], r)],
            build: |g, x| Ok(g.sum(x[0])),
        },
        OpCase {
            name: "mean",
            inputs: |r, _| vec![normal(&[dim(r), dim(r), dim(r)], r)],
            build: |g, x| Ok(g.mean(x[0])),
        },
        OpCase {
            name: "reshape",
            inputs: |r, _| vec![normal(&[dim(r), 2, dim(r)], r)],
            build: |g, x| {
                let n = g.value(x[0]).len();
                g.reshape(x[0], &[2, n / 2])
            },
        },
        OpCase {
            name: "transpose",
            inputs: |r, _| vec![normal(&[dim(r), dim(r) + 1, dim(r)], r)],
            build: |g, x| g.transpose(x[0]),
        },
        OpCase {
            name: "matmul",
            inputs: |r, i| {
                let (m, k, n) = (dim(r), dim(r), dim(r));
                match i % 3 {
                    0 => vec![normal(&[m, k], r), normal(&[k, n], r)],
                    1 => {
                        let b = dim(r);
                        vec![normal(&[b, m, k], r), normal(&[b, k, n], r)]
                    }
                    _ => vec![normal(&[dim(r), m, k], r), normal(&[k, n], r)],
                }
            },
            build: |g, x| g.matmul(x[0], x[1]),
        },
        OpCase {
            name: "linear",
            inputs: |r, _| {
                let (i, o) = (dim(r), dim(r));
                vec![normal(&[dim(r), dim(r), i], r), normal(&[o, i], r), normal(&[o], r)]
            },
            build: |g, x| g.linear(x[0], x[1], x[2]),
        },
        OpCase {
            name: "conv2d",
            inputs: |r, _| {
                let (ci, co) = (dim(r), dim(r));
                let (h, w) = (r.random_range(1..=5), r.random_range(1..=5));
                vec![normal(&[dim(r), ci, h, w], r), normal(&[co, ci, 3, 3], r), normal(&[co], r)]
            },
            build: |g, x| g.conv2d(x[0], x[1], x[2]),
        },
        OpCase {
            name: "max_pool2d",
            inputs: |r, _| {
                let (h, w) = (2 * dim(r), 2 * dim(r) + (r.random_range(0..2)));
                vec![distinct(&[dim(r), dim(r), h, w], r)]
            },
            build: |g, x| g.max_pool2d(x[0]),
        },
        OpCase {
            name: "batch_norm2d_train",
            inputs: |r, _| {
                let c = dim(r);
                vec![
                    normal(&[dim(r) + 1, c, dim(r), dim(r)], r),
                    Tensor::uniform(&[c], 0.5, 1.5, r),
                    normal(&[c], r),
                ]
            },
            build: |g, x| {
                let c = g.shape(x[1])[0];
                Ok(g.batch_norm2d(x[0], x[1], x[2], &BnStats::new(c), BnMode::Train)?.0)
            },
        },
        OpCase {
            name: "batch_norm2d_eval",
            inputs: |r, _| {
                let c = dim(r);
                vec![
                    normal(&[dim(r), c, dim(r), dim(r)], r),
                    Tensor::uniform(&[c], 0.5, 1.5, r),
                    normal(&[c], r),
                ]
            },
            build: |g, x| {
                let c = g.shape(x[1])[0];
                let running = BnStats {
                    mean: Tensor::full(&[c], 0.3),
                    var: Tensor::full(&[c], 1.7),
                };
                Ok(g.batch_norm2d(x[0], x[1], x[2], &running, BnMode::Eval)?.0)
            },
        },
        OpCase {
            name: "softmax",
            inputs: |r, _| vec![normal(&[dim(r), dim(r) + 1, dim(r) + 1], r).map(|v| 2.0 * v)],
            build: |g, x| {
                let axis = g.shape(x[0]).len() - 1;
                g.softmax(x[0], axis, 0.7)
            },
        },
        OpCase {
            name: "softmax_inner_axis",
            inputs: |r, _| vec![normal(&[dim(r), dim(r) + 1, dim(r)], r)],
            build: |g, x| g.softmax(x[0], 1, 1.3),
        },
        OpCase {
            name: "sq_dist",
            inputs: |r, _| {
                let d = dim(r);
                vec![normal(&[dim(r), d], r), normal(&[dim(r), d], r)]
            },
            build: |g, x| g.sq_dist(x[0], x[1]),
        },
        OpCase {
            name: "concat",
            inputs: |r, _| {
                let (a, b) = (dim(r), dim(r));
                vec![normal(&[a, dim(r), b], r), normal(&[a, dim(r), b], r)]
            },
            build: |g, x| g.concat(&[x[0], x[1]], 1),
        },
        OpCase {
            name: "narrow",
            inputs: |r, _| vec![normal(&[dim(r), dim(r) + 2, dim(r)], r)],
            build: |g, x| {
                let n = g.shape(x[0])[1];
                g.narrow(x[0], 1, 1, n - 2)
            },
        },
        OpCase {
            name: "pick",
            inputs: |r, _| vec![Tensor::uniform(&[dim(r), 4], 0.1, 1.0, r)],
            build: |g, x| {
                let m = g.shape(x[0])[0];
                let labels: Vec<usize> = (0..m).map(|i| (i * 3 + 1) % 4).collect();
                g.pick(x[0], &labels)
            },
        },
    ]
}

/// Names of every primitive the ops scope covers, in check order.
pub fn op_names() -> Vec<&'static str> {
    ops().iter().map(|o| o.name).collect()
}

/// Scalar probe `Σ w ⊙ op(inputs)` with fixed random weights `w`, so every
/// output element contributes a distinct upstream gradient.
fn probe(build: Build, inputs: &[Tensor<f64>], weights: &Tensor<f64>) -> Result<(f64, Vec<Tensor<f64>>)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let w = g.constant(weights.clone());
    let weighted = g.mul(out, w)?;
    let loss = g.sum(weighted);
    let value = g.value(loss).item()?;
    g.backward(loss)?;
    let grads = vars
        .iter()
        .map(|&v| g.grad(v).unwrap_or_else(|| Tensor::zeros(g.shape(v))))
        .collect();
    Ok((value, grads))
}

fn output_shape(build: Build, inputs: &[Tensor<f64>]) -> Result<Vec<usize>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    Ok(g.shape(out).to_vec())
}

/// Check every primitive on [`CASES_PER_OP`] random shapes.
///
/// `fault` names a primitive whose analytic gradient is deliberately
/// scaled before comparison; it exists to show the checker catches a
/// broken rule.
pub fn gradcheck_ops(seed: u64, fault: Option<&str>) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    for op in ops() {
        let mut worst: f64 = 0.0;
        for case in 0..CASES_PER_OP {
            let mut r = rng::child(rng::derive(seed, op.name), case as u64);
            let inputs = (op.inputs)(&mut r, case);
            let weights = normal(&output_shape(op.build, &inputs)?, &mut r);
            let (_, analytic) = probe(op.build, &inputs, &weights)?;
            for (i, a) in analytic.iter().enumerate() {
                let numeric = finite_difference_gradient(
                    |theta| {
                        let mut xs = inputs.clone();
                        xs[i] = theta.clone();
                        probe(op.build, &xs, &weights).map(|p| p.0).unwrap_or(f64::NAN)
                    },
                    &inputs[i],
                    DEFAULT_STEP,
                );
                let mut a = a.clone();
                if fault == Some(op.name) {
                    a = a.map(|v| 1.5 * v + 0.1);
                }
                let err = max_relative_error(a.data(), numeric.data());
                worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
            }
        }
        results.push(CheckResult {
            name: op.name.to_string(),
            cases: CASES_PER_OP,
            max_rel_error: worst,
            threshold: OPS_THRESHOLD,
        });
    }
    Ok(results)
}

/// The tiny model of the end-to-end check: one conv block, CAM fusion,
/// 2-way 1-shot with one query per class on 8×8 inputs, λ = 0.5.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            in_channels: 3,
            filters: vec![4],
        },
        word_dim: 5,
        fusion: FusionKind::Cam,
        scale: 0.5,
        tau: 1.0,
        se_reduction: 4,
    }
}

fn tiny_batch(r: &mut StreamRng, word_dim: usize) -> EpisodeBatch<f64> {
    let images = Tensor::uniform(&[4, 3, 8, 8], 0.0, 1.0, r);
    let mut targets = Vec::with_capacity(4 * word_dim);
    for _ in 0..2 {
        let raw: Vec<f64> = (0..word_dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let z: f64 = raw.iter().map(|v: &f64| v.exp()).sum();
        targets.push(raw.iter().map(|v| v.exp() / z).collect::<Vec<f64>>());
    }
    // Support (class 0, class 1) then query (class 0, class 1).
    let rows: Vec<f64> = [0, 1, 0, 1].iter().flat_map(|&c| targets[c].clone()).collect();
    EpisodeBatch {
        images,
        ways: 2,
        shots: 1,
        query_labels: vec![0, 1],
        targets: Some(Tensor::new(&[4, word_dim], rows).expect("shape matches")),
    }
}

/// Gradient of the total loss with respect to every parameter of the tiny
/// model against central differences.
pub fn gradcheck_end2end(seed: u64) -> Result<CheckResult> {
    let model = Model::<f64>::new(tiny_model_config(), seed)?;
    let batch = tiny_batch(&mut rng::child(seed, 1), model.config.word_dim);
    let spec = LossSpec {
        lambda: 0.5,
        aux: AuxLossKind::Kl,
        multi_task: true,
    };
    let loss_with = |m: &Model<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let bound = m.params.bind(&mut g, false);
        let fwd = m.forward_episode(&mut g, &bound, &batch, BnMode::Train, spec)?;
        g.value(fwd.total).item()
    };
    let mut g = Graph::new();
    let bound = model.params.bind(&mut g, true);
    let fwd = model.forward_episode(&mut g, &bound, &batch, BnMode::Train, spec)?;
    g.backward(fwd.total)?;
    let grads = bound.grads(&g);
    let mut worst: f64 = 0.0;
    let names: Vec<String> = model.params.param_names().map(str::to_string).collect();
    for name in &names {
        let theta = model.params.param(name)?.clone();
        let numeric = finite_difference_gradient(
            |t| {
                let mut m = model.clone();
                *m.params.param_mut(name).expect("known parameter") = t.clone();
                loss_with(&m).unwrap_or(f64::NAN)
            },
            &theta,
            DEFAULT_STEP,
        );
        let analytic = grads.get(name).expect("gradient for every parameter");
        let err = max_relative_error(analytic.data(), numeric.data());
        worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
    }
    Ok(CheckResult {
        name: "end2end".into(),
        cases: names.len(),
        max_rel_error: worst,
        threshold: END2END_THRESHOLD,
    })
}
