//! Shared embedding network (stacked conv blocks) and the auxiliary
//! projection head that maps visual patches into word-vector space.
//!
//! Both the few-shot path and the auxiliary path read the same parameter
//! names from one [`ParamStore`]; there is no second copy of the backbone.

use rand::Rng;

use crate::error::{Error, Result};
use crate::fusion::patchify;
use crate::params::{Bound, ParamStore};
use crate::tensor::{BnMode, BnStats, Graph, Real, Tensor, Var};

/// Filter counts of the Conv-4-128 embedding network.
pub const CONV4_FILTERS: [usize; 4] = [64, 64, 128, 128];

/// Default word-vector dimension.
pub const DEFAULT_WORD_DIM: usize = 300;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub filters: Vec<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::conv4()
    }
}

impl BackboneConfig {
    /// Conv-4-128: four blocks with 64, 64, 128 and 128 filters on RGB input.
    pub fn conv4() -> Self {
        Self {
            in_channels: 3,
            filters: CONV4_FILTERS.to_vec(),
        }
    }

    /// Depth `l_inter` of the produced feature map.
    pub fn feature_channels(&self) -> usize {
        *self.filters.last().expect("at least one block")
    }

    /// Spatial output size for an `h×w` input, or a dimension error if a
    /// pooling stage would see fewer than two rows or columns.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (mut oh, mut ow) = (h, w);
        for i in 0..self.filters.len() {
            if oh < 2 || ow < 2 {
                return Err(Error::dim(format!(
                    "input {h}×{w} is too small for {} pooling stages (stage {} sees {oh}×{ow})",
                    self.filters.len(),
                    i + 1
                )));
            }
            oh /= 2;
            ow /= 2;
        }
        Ok((oh, ow))
    }
}

fn block_name(i: usize, leaf: &str) -> String {
    format!("backbone.block{}.{leaf}", i + 1)
}

/// Centered uniform with half-width `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, -a, a, rng)
}

pub fn init_backbone<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &BackboneConfig, rng: &mut R) {
    let mut c_in = cfg.in_channels;
    for (i, &c_out) in cfg.filters.iter().enumerate() {
        store.insert_param(block_name(i, "conv.w"), glorot(&[c_out, c_in, 3, 3], c_in * 9, c_out * 9, rng));
        store.insert_param(block_name(i, "conv.b"), Tensor::zeros(&[c_out]));
        store.insert_param(block_name(i, "bn.gamma"), Tensor::ones(&[c_out]));
        store.insert_param(block_name(i, "bn.beta"), Tensor::zeros(&[c_out]));
        let stats = BnStats::<T>::new(c_out);
        store.insert_buffer(block_name(i, "bn.mean"), stats.mean);
        store.insert_buffer(block_name(i, "bn.var"), stats.var);
        c_in = c_out;
    }
}

/// Affine map `l_inter → l_out` applied to every patch.
pub fn init_aux_projection<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, l_inter: usize, l_out: usize, rng: &mut R) {
    store.insert_param("aux.proj.w", glorot(&[l_out, l_inter], l_inter, l_out, rng));
    store.insert_param("aux.proj.b", Tensor::zeros(&[l_out]));
}

/// Running-stat updates produced by a train-mode forward pass.
pub type BnUpdates<T> = Vec<(String, Tensor<T>)>;

/// Run the conv blocks (conv3×3 → batch norm → relu → max-pool 2×2).
///
/// `x` is `3×H×W` or `B×3×H×W`; the result is `l_inter×h×w` or
/// `B×l_inter×h×w` to match.
pub fn embed<T: Real>(
    g: &mut Graph<T>,
    bound: &Bound,
    store: &ParamStore<T>,
    cfg: &BackboneConfig,
    x: Var,
    mode: BnMode,
) -> Result<(Var, BnUpdates<T>)> {
    let shape = g.shape(x).to_vec();
    let unbatched = shape.len() == 3;
    let (c, h, w) = match shape.len() {
        3 => (shape[0], shape[1], shape[2]),
        4 => (shape[1], shape[2], shape[3]),
        _ => return Err(Error::dim(format!("embed: expected C×H×W or B×C×H×W, got {shape:?}"))),
    };
    if c != cfg.in_channels {
        return Err(Error::dim(format!(
            "embed: input has {c} channels, backbone expects {}",
            cfg.in_channels
        )));
    }
    cfg.output_hw(h, w)?;
    let mut cur = if unbatched {
        g.reshape(x, &[1, c, h, w])?
    } else {
        x
    };
    let mut updates = Vec::new();
    for i in 0..cfg.filters.len() {
        let conv = g.conv2d(cur, bound.get(&block_name(i, "conv.w"))?, bound.get(&block_name(i, "conv.b"))?)?;
        let running = BnStats {
            mean: store.buffer(&block_name(i, "bn.mean"))?.clone(),
            var: store.buffer(&block_name(i, "bn.var"))?.clone(),
        };
        let (bn, new_stats) = g.batch_norm2d(
            conv,
            bound.get(&block_name(i, "bn.gamma"))?,
            bound.get(&block_name(i, "bn.beta"))?,
            &running,
            mode,
        )?;
        if let Some(s) = new_stats {
            updates.push((block_name(i, "bn.mean"), s.mean));
            updates.push((block_name(i, "bn.var"), s.var));
        }
        let act = g.relu(bn);
        cur = g.max_pool2d(act)?;
    }
    if unbatched {
        let s = g.shape(cur)[1..].to_vec();
        cur = g.reshape(cur, &s)?;
    }
    Ok((cur, updates))
}

/// `e_aux`: patch sequence of the feature map, each patch mapped by the
/// shared affine projection. `l_inter×h×w → (h·w)×l_out`, batched likewise.
pub fn aux_project<T: Real>(g: &mut Graph<T>, bound: &Bound, e_main: Var) -> Result<Var> {
    let patches = patchify(g, e_main)?;
    g.linear(patches, bound.get("aux.proj.w")?, bound.get("aux.proj.b")?)
}

/// Auxiliary prediction `softmax(Σ_patches e_aux / τ)`.
///
/// `(h·w)×l_out → l_out`, or `B×(h·w)×l_out → B×l_out`.
pub fn aux_predict<T: Real>(g: &mut Graph<T>, e_aux: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("temperature must be > 0, got {tau}")));
    }
    let rank = g.shape(e_aux).len();
    if rank != 2 && rank != 3 {
        return Err(Error::dim(format!("aux_predict: unexpected shape {:?}", g.shape(e_aux))));
    }
    let summed = g.sum_axis(e_aux, rank - 2)?;
    let axis = g.shape(summed).len() - 1;
    g.softmax(summed, axis, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_store(filters: &[usize], word_dim: usize, seed: u64) -> (ParamStore<f64>, BackboneConfig) {
        let cfg = BackboneConfig {
            in_channels: 3,
            filters: filters.to_vec(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        init_backbone(&mut store, &cfg, &mut rng);
        init_aux_projection(&mut store, cfg.feature_channels(), word_dim, &mut rng);
        (store, cfg)
    }

    #[test]
    fn output_shape_chain() {
        let cfg = BackboneConfig::conv4();
        assert_eq!(cfg.output_hw(84, 84).unwrap(), (5, 5));
        assert_eq!(cfg.output_hw(32, 32).unwrap(), (2, 2));
        assert_eq!(cfg.output_hw(64, 64).unwrap(), (4, 4));
        assert!(matches!(cfg.output_hw(8, 8), Err(Error::Dimension(_))));
    }

    #[test]
    fn init_filter_counts() {
        let (store, _) = tiny_store(&CONV4_FILTERS, 300, 0);
        let shapes: Vec<_> = (0..4)
            .map(|i| store.param(&block_name(i, "conv.w")).unwrap().shape()[0])
            .collect();
        assert_eq!(shapes, vec![64, 64, 128, 128]);
        assert_eq!(store.param("aux.proj.w").unwrap().shape(), &[300, 128]);
    }

    #[test]
    fn too_small_input_is_dimension_error() {
        let (store, cfg) = tiny_store(&[4, 4], 5, 1);
        let mut g = Graph::new();
        let b = store.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(&[3, 3, 3]));
        assert!(matches!(embed(&mut g, &b, &store, &cfg, x, BnMode::Eval), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_projection_weight_gives_bias_rows() {
        let (mut store, cfg) = tiny_store(&[4], 3, 2);
        *store.param_mut("aux.proj.w").unwrap() = Tensor::zeros(&[3, 4]);
        *store.param_mut("aux.proj.b").unwrap() = Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap();
        let mut g = Graph::new();
        let b = store.bind(&mut g, false);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = g.constant(Tensor::uniform(&[3, 6, 6], 0.0, 1.0, &mut rng));
        let (e, _) = embed(&mut g, &b, &store, &cfg, x, BnMode::Eval).unwrap();
        let aux = aux_project(&mut g, &b, e).unwrap();
        assert_eq!(g.shape(aux), &[9, 3]);
        for row in g.value(aux).data().chunks(3) {
            assert_eq!(row, &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn single_patch_one_hot_prediction() {
        let mut g = Graph::<f64>::new();
        let mut v = vec![0.0; 6];
        v[0] = 1.0;
        let e = g.constant(Tensor::new(&[1, 6], v).unwrap());
        let p = aux_predict(&mut g, e, 1.0).unwrap();
        let e1 = std::f64::consts::E;
        let expected = e1 / (e1 + 5.0);
        assert!((g.value(p).data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_tau_rejected() {
        let mut g = Graph::<f64>::new();
        let e = g.constant(Tensor::ones(&[2, 3]));
        assert!(matches!(aux_predict(&mut g, e, 0.0), Err(Error::Parameter(_))));
    }
}
