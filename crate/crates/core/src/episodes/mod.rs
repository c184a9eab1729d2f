//! Datasets, K-way N-shot episode sampling and batch assembly.

mod augment;
mod manifest;
mod synthetic;

pub use augment::{augment, augment_with, center_resize, AugmentParams};
pub use manifest::{decode_ppm, encode_ppm, load_manifest, read_ppm, write_manifest, write_ppm};
pub use synthetic::{generate_synthetic, ClassInfo, SyntheticConfig, SyntheticDataset};

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::EpisodeBatch;
use crate::semantics::SoftLabel;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// One class: label text and its images (`3×H×W`, values in `[0, 1]`).
#[derive(Clone, Debug)]
pub struct ClassEntry {
    pub label: String,
    pub split: Split,
    pub items: Vec<Tensor<f32>>,
}

/// Labelled images partitioned by class into train/val/test.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub classes: Vec<ClassEntry>,
}

impl Dataset {
    pub fn new(classes: Vec<ClassEntry>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for c in &classes {
            if !seen.insert(c.label.as_str()) {
                return Err(Error::Format(format!("duplicate class label {:?}", c.label)));
            }
            if c.items.is_empty() {
                return Err(Error::Format(format!("class {:?} has no items", c.label)));
            }
        }
        Ok(Self { classes })
    }

    /// Class ids (indices into `classes`) belonging to `split`, ascending.
    pub fn split_classes(&self, split: Split) -> Vec<usize> {
        self.classes
            .iter()
            .enumerate()
            .filter(|(_, c)| c.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn image(&self, r: ItemRef) -> &Tensor<f32> {
        &self.classes[r.class].items[r.item]
    }
}

/// Address of one dataset image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ItemRef {
    pub class: usize,
    pub item: usize,
}

/// One sampled meta-task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    /// `(image, episode class index)`, class-major, `N` per class.
    pub support: Vec<(ItemRef, usize)>,
    /// `(image, episode class index)`, class-major, `M` per class.
    pub query: Vec<(ItemRef, usize)>,
    /// Episode class index → dataset class id.
    pub class_map: Vec<usize>,
    pub shots: usize,
}

impl Episode {
    pub fn ways(&self) -> usize {
        self.class_map.len()
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.query.iter().map(|&(_, l)| l).collect()
    }

    /// Every image in model order (support then query).
    pub fn items(&self) -> impl Iterator<Item = &(ItemRef, usize)> {
        self.support.iter().chain(&self.query)
    }
}

/// Draw `ways` classes of `split` and, per class, `shots + queries` distinct
/// images split into support and query.
pub fn sample_episode<R: Rng + ?Sized>(
    ds: &Dataset,
    split: Split,
    ways: usize,
    shots: usize,
    queries: usize,
    rng: &mut R,
) -> Result<Episode> {
    if ways == 0 || shots == 0 || queries == 0 {
        return Err(Error::Config(format!(
            "episode shape {ways}-way {shots}-shot {queries}-query must be positive"
        )));
    }
    let pool = ds.split_classes(split);
    if pool.len() < ways {
        return Err(Error::Capacity(format!(
            "{split} split has {} classes, episode needs {ways} (short by {})",
            pool.len(),
            ways - pool.len()
        )));
    }
    let per_class = shots + queries;
    let chosen: Vec<usize> = sample(rng, pool.len(), ways).into_iter().map(|i| pool[i]).collect();
    let mut support = Vec::with_capacity(ways * shots);
    let mut query = Vec::with_capacity(ways * queries);
    for (label, &class) in chosen.iter().enumerate() {
        let available = ds.classes[class].items.len();
        if available < per_class {
            return Err(Error::Capacity(format!(
                "class {:?} has {available} items, episode needs {per_class} (short by {})",
                ds.classes[class].label,
                per_class - available
            )));
        }
        let picks = sample(rng, available, per_class).into_vec();
        for (j, item) in picks.into_iter().enumerate() {
            let r = ItemRef { class, item };
            if j < shots {
                support.push((r, label));
            } else {
                query.push((r, label));
            }
        }
    }
    Ok(Episode {
        support,
        query,
        class_map: chosen,
        shots,
    })
}

/// Per-image preprocessing when assembling a batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transform {
    /// Random resized crop, flip and color jitter.
    Augment { size: usize },
    /// Deterministic center crop resized to `size`.
    Center { size: usize },
}

/// Materialize an episode as a model batch. `targets[class_id]` supplies
/// the soft label of every image's true class when training with the
/// auxiliary task; evaluation passes `None` and never sees label text.
pub fn build_batch<T: Real, R: Rng + ?Sized>(
    ds: &Dataset,
    episode: &Episode,
    transform: Transform,
    targets: Option<&[Option<SoftLabel>]>,
    rng: &mut R,
) -> Result<EpisodeBatch<T>> {
    let mut images = Vec::with_capacity(episode.support.len() + episode.query.len());
    for &(r, _) in episode.items() {
        let img = ds.image(r);
        let out = match transform {
            Transform::Augment { size } => augment(img, rng, size)?,
            Transform::Center { size } => center_resize(img, size)?,
        };
        images.push(out.cast::<T>());
    }
    let images = Tensor::stack(&images)?;
    let targets = match targets {
        Some(labels) => {
            let dim = labels.iter().flatten().map(SoftLabel::dim).next().unwrap_or(0);
            let mut data = Vec::with_capacity(images.shape()[0] * dim);
            for &(r, _) in episode.items() {
                let t = labels.get(r.class).and_then(Option::as_ref).ok_or_else(|| {
                    Error::Contract(format!("no soft target for class {}", r.class))
                })?;
                data.extend(t.probs.iter().map(|&p| T::of(p)));
            }
            Some(Tensor::new(&[images.shape()[0], dim], data)?)
        }
        None => None,
    };
    Ok(EpisodeBatch {
        images,
        ways: episode.ways(),
        shots: episode.shots,
        query_labels: episode.query_labels(),
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn toy(classes: usize, items: usize) -> Dataset {
        let classes = (0..classes)
            .map(|c| ClassEntry {
                label: format!("c{c}"),
                split: Split::Train,
                items: (0..items)
                    .map(|i| Tensor::full(&[3, 4, 4], (c * 100 + i) as f32 / 1000.0))
                    .collect(),
            })
            .collect();
        Dataset::new(classes).unwrap()
    }

    #[test]
    fn five_way_one_shot_sixteen_query() {
        let ds = toy(6, 20);
        let ep = sample_episode(&ds, Split::Train, 5, 1, 16, &mut rng::child(0, 0)).unwrap();
        assert_eq!(ep.support.len(), 5);
        assert_eq!(ep.query.len(), 80);
    }

    #[test]
    fn exhaustive_two_by_two() {
        let ds = toy(2, 2);
        let ep = sample_episode(&ds, Split::Train, 2, 1, 1, &mut rng::child(3, 0)).unwrap();
        let mut all: Vec<ItemRef> = ep.items().map(|&(r, _)| r).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 4);
    }

    #[test]
    fn capacity_errors() {
        let ds = toy(3, 4);
        assert!(matches!(
            sample_episode(&ds, Split::Train, 4, 1, 1, &mut rng::child(0, 0)),
            Err(Error::Capacity(_))
        ));
        assert!(matches!(
            sample_episode(&ds, Split::Train, 2, 2, 3, &mut rng::child(0, 0)),
            Err(Error::Capacity(_))
        ));
        assert!(matches!(
            sample_episode(&ds, Split::Val, 1, 1, 1, &mut rng::child(0, 0)),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn duplicate_labels_rejected() {
        let mut ds = toy(2, 2);
        ds.classes[1].label = "c0".into();
        assert!(Dataset::new(ds.classes).is_err());
    }
}
