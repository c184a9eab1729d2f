//! The multi-task few-shot model: shared backbone, auxiliary head, fusion
//! module and prototype classifier assembled over one episode.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{self, BackboneConfig, BnUpdates, DEFAULT_WORD_DIM};
use crate::error::{Error, Result};
use crate::fusion::{self, FusionKind, SE_REDUCTION};
use crate::metric::{self, Metric, SquaredEuclidean};
use crate::params::{Bound, ParamStore};
use crate::semantics::{aux_loss_graph, AuxLossKind};
use crate::tensor::{BnMode, Graph, Real, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// `l_out`, the word-vector dimension.
    pub word_dim: usize,
    pub fusion: FusionKind,
    /// Attention logit scale.
    pub scale: f64,
    /// Temperature of the auxiliary prediction.
    pub tau: f64,
    pub se_reduction: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::conv4(),
            word_dim: DEFAULT_WORD_DIM,
            fusion: FusionKind::Cam,
            scale: fusion::default_scale(DEFAULT_WORD_DIM),
            tau: 1.0,
            se_reduction: SE_REDUCTION,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.backbone.filters.is_empty() {
            return Err(Error::Config("backbone needs at least one block".into()));
        }
        if self.word_dim == 0 {
            return Err(Error::Config("word dimension must be positive".into()));
        }
        if !(self.tau > 0.0) || !(self.scale > 0.0) {
            return Err(Error::Config(format!(
                "tau ({}) and scale ({}) must be positive",
                self.tau, self.scale
            )));
        }
        Ok(())
    }

    /// Length of the flattened embedding fed to the metric head.
    pub fn embedding_dim(&self, h: usize, w: usize) -> Result<usize> {
        let (oh, ow) = self.backbone.output_hw(h, w)?;
        let c = self
            .fusion
            .output_channels(self.backbone.feature_channels(), self.word_dim);
        Ok(c * oh * ow)
    }
}

/// Parameters and architecture of one model instance.
#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

/// The images of one episode in model order: `ways·shots` support images
/// (class-major) followed by the query images.
#[derive(Clone, Debug)]
pub struct EpisodeBatch<T: Real> {
    /// `B×3×H×W`.
    pub images: Tensor<T>,
    pub ways: usize,
    pub shots: usize,
    pub query_labels: Vec<usize>,
    /// Soft targets for every image (`B×l_out`), present during training.
    pub targets: Option<Tensor<T>>,
}

impl<T: Real> EpisodeBatch<T> {
    pub fn support_len(&self) -> usize {
        self.ways * self.shots
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How the episode loss is assembled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSpec {
    pub lambda: f64,
    pub aux: AuxLossKind,
    /// `false` builds a classification-only graph without the auxiliary loss.
    pub multi_task: bool,
}

/// Nodes produced by one episode forward pass.
pub struct EpisodeForward<T: Real> {
    pub distances: Var,
    pub posterior: Var,
    pub loss_cls: Var,
    pub loss_aux: Option<Var>,
    pub total: Var,
    pub bn_updates: BnUpdates<T>,
}

/// `(1 − λ)·l_cls + λ·l_aux`.
pub fn total_loss(l_cls: f64, l_aux: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok((1.0 - lambda) * l_cls + lambda * l_aux)
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(())
}

impl<T: Real> Model<T> {
    /// Fresh parameters drawn deterministically from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        backbone::init_backbone(&mut params, &config.backbone, &mut rng);
        let l_inter = config.backbone.feature_channels();
        backbone::init_aux_projection(&mut params, l_inter, config.word_dim, &mut rng);
        match config.fusion {
            FusionKind::Cam => fusion::init_cam(&mut params, l_inter, config.word_dim, &mut rng),
            FusionKind::SqueezeExcitation => {
                fusion::init_se(&mut params, l_inter, config.se_reduction, &mut rng)?
            }
            FusionKind::Concat | FusionKind::None => {}
        }
        Ok(Self { config, params })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Embed images and produce the fused map and auxiliary prediction.
    ///
    /// Returns `(fused B×C'×h×w, aux prediction B×l_out, bn updates)`.
    pub fn features(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        images: Var,
        mode: BnMode,
    ) -> Result<(Var, Var, BnUpdates<T>)> {
        let (e_main, updates) =
            backbone::embed(g, bound, &self.params, &self.config.backbone, images, mode)?;
        let e_aux = backbone::aux_project(g, bound, e_main)?;
        let pred = backbone::aux_predict(g, e_aux, self.config.tau)?;
        let fused = fusion::fuse(g, bound, self.config.fusion, e_main, e_aux, self.config.scale)?;
        Ok((fused, pred, updates))
    }

    /// Full episode graph: prototypes from the support rows, posterior for
    /// the query rows, and (with `loss`) the classification, auxiliary and
    /// total losses.
    pub fn forward_episode(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        batch: &EpisodeBatch<T>,
        mode: BnMode,
        loss: LossSpec,
    ) -> Result<EpisodeForward<T>> {
        check_lambda(loss.lambda)?;
        let total_images = batch.len();
        let n_support = batch.support_len();
        let n_query = total_images.saturating_sub(n_support);
        if n_support == 0 || n_query == 0 || n_query != batch.query_labels.len() {
            return Err(Error::Contract(format!(
                "episode of {total_images} images does not match {} support and {} query labels",
                n_support,
                batch.query_labels.len()
            )));
        }
        let images = g.constant(batch.images.clone());
        let (fused, pred, bn_updates) = self.features(g, bound, images, mode)?;
        let d: usize = g.shape(fused)[1..].iter().product();
        let flat = g.reshape(fused, &[total_images, d])?;
        let support = g.narrow(flat, 0, 0, n_support)?;
        let query = g.narrow(flat, 0, n_support, n_query)?;
        let protos = metric::compute_prototypes(g, support, batch.ways)?;
        let distances = SquaredEuclidean.distances(g, query, protos)?;
        let posterior = metric::posterior(g, distances)?;
        let loss_cls = metric::classification_loss(g, posterior, &batch.query_labels)?;

        let loss_aux = if loss.multi_task {
            let targets = batch.targets.as_ref().ok_or_else(|| {
                Error::Contract("multi-task loss needs soft targets for every image".into())
            })?;
            Some(aux_loss_graph(g, pred, targets, loss.aux)?)
        } else {
            None
        };
        let total = match loss_aux {
            Some(aux) => {
                let a = g.scale(loss_cls, T::of(1.0 - loss.lambda));
                let b = g.scale(aux, T::of(loss.lambda));
                g.add(a, b)?
            }
            None => g.scale(loss_cls, T::one()),
        };
        Ok(EpisodeForward {
            distances,
            posterior,
            loss_cls,
            loss_aux,
            total,
            bn_updates,
        })
    }

    /// Write batch-norm running statistics collected in train mode.
    pub fn apply_bn_updates(&mut self, updates: BnUpdates<T>) -> Result<()> {
        for (name, t) in updates {
            self.params.set_buffer(&name, t)?;
        }
        Ok(())
    }
}
