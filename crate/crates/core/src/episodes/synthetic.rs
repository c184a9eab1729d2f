//! A procedurally rendered dataset with controlled visual-semantic mismatch.
//!
//! Every class draws render parameters (primitive, color, size, aspect,
//! texture frequency and orientation). Its semantic vector is the direction
//! of its semantic group plus a small offset that is a fixed linear image of
//! those parameters, so label text carries attribute information the
//! pixels only show through noise. Two kinds of mismatch are planted:
//!
//! * visual twins — pairs of classes rendered almost identically but placed
//!   in different semantic groups;
//! * bimodal classes — one label, two unrelated render modes.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::semantics::{write_word_vectors, WordVectorTable};
use crate::tensor::Tensor;

use super::{ClassEntry, Dataset, Split};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub items_per_class: usize,
    /// Side length of the square images.
    pub image_size: usize,
    /// Controls how much of the dataset is mismatched: `round(f·C/4)` twin
    /// pairs and `round(f·C/2)` bimodal classes.
    pub mismatch: f64,
    pub word_dim: usize,
    pub groups: usize,
    /// Classes per split as (train, val); the rest are test classes.
    pub train_classes: usize,
    pub val_classes: usize,
    /// Standard deviation of the per-pixel Gaussian noise.
    pub noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 16,
            items_per_class: 40,
            image_size: 84,
            mismatch: 0.5,
            word_dim: 300,
            groups: 4,
            train_classes: 6,
            val_classes: 5,
            noise: 0.05,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mismatch) {
            return Err(Error::Config(format!("mismatch fraction must lie in [0, 1], got {}", self.mismatch)));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config(format!("noise must be non-negative, got {}", self.noise)));
        }
        if self.classes == 0 || self.items_per_class == 0 || self.word_dim == 0 || self.groups == 0 {
            return Err(Error::Config("classes, items, word_dim and groups must be positive".into()));
        }
        if self.train_classes + self.val_classes > self.classes {
            return Err(Error::Config(format!(
                "{} train + {} val classes exceed {} classes",
                self.train_classes, self.val_classes, self.classes
            )));
        }
        if self.image_size < 16 {
            return Err(Error::Config(format!("image size {} is below 16", self.image_size)));
        }
        Ok(())
    }

    pub fn twin_pairs(&self) -> usize {
        (self.mismatch * self.classes as f64 / 4.0).round() as usize
    }

    pub fn bimodal_classes(&self) -> usize {
        let want = (self.mismatch * self.classes as f64 / 2.0).round() as usize;
        want.min(self.classes - 2 * self.twin_pairs())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Primitive {
    Ellipse,
    Rectangle,
    Stripes,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct RenderParams {
    primitive: Primitive,
    color: [f64; 3],
    /// Object extent as a fraction of the image side.
    size: f64,
    aspect: f64,
    /// Texture cycles across the object.
    frequency: f64,
    orientation: f64,
}

const PRIMITIVES: [Primitive; 3] = [Primitive::Ellipse, Primitive::Rectangle, Primitive::Stripes];
/// Number of attributes fed to the semantic map.
const ATTRS: usize = 9;

impl RenderParams {
    fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            primitive: PRIMITIVES[rng.random_range(0..3)],
            color: [
                rng.random_range(0.3..0.95),
                rng.random_range(0.3..0.95),
                rng.random_range(0.3..0.95),
            ],
            size: rng.random_range(0.45..0.8),
            aspect: rng.random_range(0.7..1.4),
            frequency: rng.random_range(1.0..4.0),
            orientation: rng.random_range(0.0..std::f64::consts::PI),
        }
    }

    /// A near copy: same primitive and geometry, slightly shifted color and
    /// texture.
    fn twin<R: Rng + ?Sized>(&self, rng: &mut R) -> Self {
        let mut t = *self;
        for c in &mut t.color {
            *c = (*c + rng.random_range(-0.04..0.04)).clamp(0.0, 1.0);
        }
        t.frequency += 0.6;
        t
    }

    fn attributes(&self) -> [f64; ATTRS] {
        let mut a = [0.0; ATTRS];
        a[self.primitive as usize] = 1.0;
        a[3..6].copy_from_slice(&self.color);
        a[6] = self.size;
        a[7] = self.aspect - 1.0;
        a[8] = self.frequency / 4.0;
        a
    }
}

/// Draw one `3×S×S` image of the given render parameters.
pub(crate) fn render<R: Rng + ?Sized>(p: &RenderParams, size: usize, noise: f64, rng: &mut R) -> Tensor<f32> {
    let cx = 0.5 + rng.random_range(-0.1..0.1);
    let cy = 0.5 + rng.random_range(-0.1..0.1);
    let scale = p.size * rng.random_range(0.9..1.1);
    let background: f64 = rng.random_range(0.05..0.3);
    let half_w = 0.5 * scale * p.aspect.sqrt();
    let half_h = 0.5 * scale / p.aspect.sqrt();
    let (sin, cos) = p.orientation.sin_cos();
    let tau = std::f64::consts::TAU;
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid deviation");
    let plane = size * size;
    let mut data = vec![0.0f32; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 + 0.5) / size as f64 - cx;
            let v = (y as f64 + 0.5) / size as f64 - cy;
            let along = (u * cos + v * sin) / scale;
            let wave = (tau * p.frequency * along).sin();
            let inside = match p.primitive {
                Primitive::Ellipse => (u / half_w).powi(2) + (v / half_h).powi(2) <= 1.0,
                Primitive::Rectangle => u.abs() <= half_w && v.abs() <= half_h,
                Primitive::Stripes => u.abs() <= half_w && v.abs() <= half_h && wave > 0.0,
            };
            let shade = match p.primitive {
                Primitive::Stripes => 1.0,
                _ => 0.75 + 0.25 * wave,
            };
            let i = y * size + x;
            for c in 0..3 {
                let base = if inside { p.color[c] * shade } else { background };
                let n = if noise > 0.0 { normal.sample(rng) } else { 0.0 };
                data[c * plane + i] = (base + n).clamp(0.0, 1.0) as f32;
            }
        }
    }
    Tensor::new(&[3, size, size], data).expect("shape matches data")
}

/// Per-class bookkeeping kept alongside the generated images.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassInfo {
    pub group: usize,
    /// Index of the visual twin, if any.
    pub twin: Option<usize>,
    pub bimodal: bool,
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    /// Word vectors covering every label token.
    pub vectors: WordVectorTable,
    /// Vector file contents in write order.
    pub vector_entries: Vec<(String, Vec<f64>)>,
    pub info: Vec<ClassInfo>,
}

impl SyntheticDataset {
    /// Write `vectors.txt` next to a manifest layout of the images.
    pub fn write(&self, root: &Path) -> Result<()> {
        super::manifest::write_manifest(root, &self.dataset)?;
        write_word_vectors(&root.join("vectors.txt"), &self.vector_entries)
    }
}

/// Round to the precision of the text vector format so in-memory and
/// reloaded tables agree exactly.
fn as_written(x: f64) -> f64 {
    format!("{x:.6}").parse().expect("formatted float parses")
}

fn unit_gaussian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

/// Generate the dataset; a pure function of `(config, seed)`.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<SyntheticDataset> {
    config.validate()?;
    let c = config.classes;
    let mut layout_rng = rng::child(seed, 0);

    // Class roles: twin pairs first, then bimodal, then plain classes.
    let pairs = config.twin_pairs();
    let bimodal = config.bimodal_classes();
    let mut modes: Vec<Vec<RenderParams>> = Vec::with_capacity(c);
    let mut info = Vec::with_capacity(c);
    for k in 0..pairs {
        let a = RenderParams::sample(&mut layout_rng);
        let b = a.twin(&mut layout_rng);
        modes.push(vec![a]);
        modes.push(vec![b]);
        info.push(ClassInfo { group: 0, twin: Some(2 * k + 1), bimodal: false });
        info.push(ClassInfo { group: 0, twin: Some(2 * k), bimodal: false });
    }
    for i in 2 * pairs..c {
        let is_bimodal = i < 2 * pairs + bimodal;
        let first = RenderParams::sample(&mut layout_rng);
        let mut m = vec![first];
        if is_bimodal {
            let mut second = RenderParams::sample(&mut layout_rng);
            // Force the second mode to look different.
            second.primitive = PRIMITIVES[(first.primitive as usize + 1) % 3];
            m.push(second);
        }
        modes.push(m);
        info.push(ClassInfo { group: 0, twin: None, bimodal: is_bimodal });
    }

    // Semantic groups follow the primitive of the first mode; a twin's
    // second member is moved to another group so it looks like its partner
    // but means something else.
    let groups = config.groups;
    for (i, m) in modes.iter().enumerate() {
        info[i].group = (m[0].primitive as usize) % groups;
    }
    for k in 0..pairs {
        let b = 2 * k + 1;
        info[b].group = (info[2 * k].group + 1 + k % groups.saturating_sub(1).max(1)) % groups;
    }

    // Split assignment: keep twins together, spread the mismatch kinds over
    // the splits round-robin, then fill.
    let mut split_of = vec![None; c];
    let order = [Split::Train, Split::Test, Split::Val];
    let cap = |s: Split| match s {
        Split::Train => config.train_classes,
        Split::Val => config.val_classes,
        Split::Test => c - config.train_classes - config.val_classes,
    };
    let mut used = [0usize; 3];
    let slot = |s: Split| order.iter().position(|&o| o == s).expect("split listed");
    let mut turn = 0;
    for k in 0..pairs {
        for _ in 0..3 {
            let s = order[turn % 3];
            turn += 1;
            if used[slot(s)] + 2 <= cap(s) {
                used[slot(s)] += 2;
                split_of[2 * k] = Some(s);
                split_of[2 * k + 1] = Some(s);
                break;
            }
        }
    }
    for slot_of in &mut split_of[2 * pairs..2 * pairs + bimodal] {
        for _ in 0..3 {
            let s = order[turn % 3];
            turn += 1;
            if used[slot(s)] < cap(s) {
                used[slot(s)] += 1;
                *slot_of = Some(s);
                break;
            }
        }
    }
    let mut rest: Vec<usize> = (0..c).filter(|&i| split_of[i].is_none()).collect();
    rest.shuffle(&mut layout_rng);
    for i in rest {
        let s = *order
            .iter()
            .find(|&&s| used[slot(s)] < cap(s))
            .ok_or_else(|| Error::Config("split capacities cannot hold every class".into()))?;
        used[slot(s)] += 1;
        split_of[i] = Some(s);
    }

    // Semantic vectors: label "grp{g}_cls{i}" averages a group token and a
    // class token, giving direction(g) + offset(i).
    let mut sem_rng = rng::child(seed, 1);
    let dim = config.word_dim;
    let magnitude = (dim as f64).sqrt();
    let directions: Vec<Vec<f64>> = (0..groups).map(|_| unit_gaussian(dim, &mut sem_rng)).collect();
    let projection: Vec<Vec<f64>> = (0..ATTRS).map(|_| unit_gaussian(dim, &mut sem_rng)).collect();
    let mut entries = Vec::with_capacity(groups + c);
    for (g, d) in directions.iter().enumerate() {
        let v = d.iter().map(|x| as_written(2.0 * 0.7 * magnitude * x)).collect();
        entries.push((format!("grp{g}"), v));
    }
    for (i, m) in modes.iter().enumerate() {
        let attrs = m[0].attributes();
        let mut offset = vec![0.0; dim];
        for (a, row) in attrs.iter().zip(&projection) {
            for (o, r) in offset.iter_mut().zip(row) {
                *o += a * r;
            }
        }
        let norm = offset.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let v = offset.iter().map(|x| as_written(2.0 * 0.5 * magnitude * x / norm)).collect();
        entries.push((format!("cls{i:02}"), v));
    }
    let vectors = WordVectorTable::from_entries(entries.clone())?;

    let mut classes = Vec::with_capacity(c);
    for (i, m) in modes.iter().enumerate() {
        let mut item_rng = rng::child(seed, 100 + i as u64);
        let items = (0..config.items_per_class)
            .map(|j| render(&m[j % m.len()], config.image_size, config.noise, &mut item_rng))
            .collect();
        classes.push(ClassEntry {
            label: format!("grp{}_cls{i:02}", info[i].group),
            split: split_of[i].expect("every class assigned"),
            items,
        });
    }
    Ok(SyntheticDataset {
        dataset: Dataset::new(classes)?,
        vectors,
        vector_entries: entries,
        info,
    })
}
