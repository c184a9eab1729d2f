//! Prototype-based few-shot head: class means, distances, posterior and
//! cross-entropy.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Distance between query embeddings and class representatives.
///
/// Only [`SquaredEuclidean`] ships; a trainable metric would implement this
/// trait and register its own parameters.
pub trait Metric<T: Real> {
    fn name(&self) -> &'static str;

    /// `queries` is `M×D`, `prototypes` is `K×D`; returns `M×K`.
    fn distances(&self, g: &mut Graph<T>, queries: Var, prototypes: Var) -> Result<Var>;
}

/// `d_k = Σ_i (q_i − p_{k,i})²`.
#[derive(Clone, Copy, Debug, Default)]
pub struct SquaredEuclidean;

impl<T: Real> Metric<T> for SquaredEuclidean {
    fn name(&self) -> &'static str {
        "euclidean_sq"
    }

    fn distances(&self, g: &mut Graph<T>, queries: Var, prototypes: Var) -> Result<Var> {
        g.sq_dist(queries, prototypes)
    }
}

/// Class prototypes for one episode together with the dataset class each
/// row stands for.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet<T: Real> {
    pub prototypes: Tensor<T>,
    pub classes: Vec<usize>,
}

/// Mean support embedding per class. `support` is `K×N×D`, or `(K·N)×D`
/// ordered class-major with `ways = K`. Returns `K×D`.
pub fn compute_prototypes<T: Real>(g: &mut Graph<T>, support: Var, ways: usize) -> Result<Var> {
    let s = g.shape(support).to_vec();
    let (k, n, d) = match s.len() {
        3 => (s[0], s[1], s[2]),
        2 if ways > 0 && s[0].is_multiple_of(ways) => (ways, s[0] / ways, s[1]),
        _ => {
            return Err(Error::Contract(format!(
                "support {s:?} cannot be split into {ways} classes"
            )))
        }
    };
    if k != ways {
        return Err(Error::Contract(format!("support {s:?} does not hold {ways} classes")));
    }
    if n == 0 {
        return Err(Error::Contract("a class has no support embeddings".into()));
    }
    let grouped = g.reshape(support, &[k, n, d])?;
    let summed = g.sum_axis(grouped, 1)?;
    Ok(g.scale(summed, T::of(1.0 / n as f64)))
}

/// `p(y = k | q) = exp(−d_k) / Σ_j exp(−d_j)` per row of an `M×K` distance matrix.
pub fn posterior<T: Real>(g: &mut Graph<T>, distances: Var) -> Result<Var> {
    let neg = g.scale(distances, -T::one());
    let axis = g.shape(neg).len() - 1;
    g.softmax(neg, axis, 1.0)
}

/// Mean over rows of `−log p(y = label)`, with an ε-guarded log.
pub fn classification_loss<T: Real>(g: &mut Graph<T>, posteriors: Var, labels: &[usize]) -> Result<Var> {
    let picked = g.pick(posteriors, labels)?;
    let logp = g.log(picked);
    let m = g.mean(logp);
    Ok(g.scale(m, -T::one()))
}

/// Index of the smallest distance per row (nearest prototype).
pub fn nearest<T: Real>(distances: &Tensor<T>) -> Vec<usize> {
    let k = distances.shape()[distances.rank() - 1];
    distances
        .data()
        .chunks(k)
        .map(|row| argmin(row))
        .collect()
}

/// Index of the largest value per row.
pub fn argmax_rows<T: Real>(t: &Tensor<T>) -> Vec<usize> {
    let k = t.shape()[t.rank() - 1];
    t.data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

fn argmin<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v < row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run<F>(f: F) -> Tensor<f64>
    where
        F: FnOnce(&mut Graph<f64>) -> Var,
    {
        let mut g = Graph::new();
        let v = f(&mut g);
        g.value(v).clone()
    }

    #[test]
    fn prototype_of_two() {
        let p = run(|g| {
            let s = g.constant(Tensor::from_f64(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
            compute_prototypes(g, s, 1).unwrap()
        });
        assert_eq!(p.data(), &[2.0, 3.0]);
    }

    #[test]
    fn single_shot_prototype_is_the_embedding() {
        let data = [0.25, -1.5, 3.0, 7.0, 0.0, 1.0];
        let p = run(|g| {
            let s = g.constant(Tensor::from_f64(&[3, 2], &data).unwrap());
            compute_prototypes(g, s, 3).unwrap()
        });
        assert_eq!(p.data(), &data);
    }

    #[test]
    fn three_four_five() {
        let d = run(|g| {
            let q = g.constant(Tensor::from_f64(&[1, 2], &[0.0, 0.0]).unwrap());
            let p = g.constant(Tensor::from_f64(&[2, 2], &[3.0, 4.0, 0.0, 0.0]).unwrap());
            SquaredEuclidean.distances(g, q, p).unwrap()
        });
        assert_eq!(d.data(), &[25.0, 0.0]);
    }

    #[test]
    fn posterior_values() {
        let p = run(|g| {
            let d = g.constant(Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap());
            posterior(g, d).unwrap()
        });
        assert!((p.data()[0] - 0.73106).abs() < 1e-5);
        assert!((p.data()[1] - 0.26894).abs() < 1e-5);
        let p = run(|g| {
            let d = g.constant(Tensor::from_f64(&[1, 2], &[0.0, 100.0]).unwrap());
            posterior(g, d).unwrap()
        });
        assert!((p.data()[0] - 1.0).abs() < 1e-10);
        assert!(p.data()[1].abs() < 1e-10);
        let p = run(|g| {
            let d = g.constant(Tensor::full(&[1, 4], 3.3));
            posterior(g, d).unwrap()
        });
        assert!(p.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn loss_limits() {
        let l = run(|g| {
            let p = g.constant(Tensor::full(&[3, 5], 0.2));
            classification_loss(g, p, &[0, 3, 4]).unwrap()
        });
        assert!((l.data()[0] - 5f64.ln()).abs() < 1e-10);
        let l = run(|g| {
            let p = g.constant(Tensor::from_f64(&[2, 2], &[1.0 - 1e-9, 1e-9, 1e-9, 1.0 - 1e-9]).unwrap());
            classification_loss(g, p, &[0, 1]).unwrap()
        });
        assert!(l.data()[0].abs() < 1e-8);
    }

    #[test]
    fn label_out_of_range() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::full(&[1, 2], 0.5));
        assert!(matches!(classification_loss(&mut g, p, &[2]), Err(Error::Contract(_))));
    }

    #[test]
    fn empty_class_is_contract_error() {
        let mut g = Graph::<f64>::new();
        let s = g.constant(Tensor::ones(&[3, 4]));
        assert!(matches!(compute_prototypes(&mut g, s, 2), Err(Error::Contract(_))));
    }
}
