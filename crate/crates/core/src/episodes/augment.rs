//! Training-time augmentation: random resized crop, horizontal flip and
//! color jitter, all resampled bilinearly to a square target.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sampled augmentation for one image. Crop coordinates are in source
/// pixels and may be fractional.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub crop_x: f64,
    pub crop_y: f64,
    pub crop_w: f64,
    pub crop_h: f64,
    pub flip: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

const MIN_SIDE: usize = 16;
const CROP_ATTEMPTS: usize = 10;

impl AugmentParams {
    /// The whole image, unflipped, with unit jitter factors.
    pub fn identity(h: usize, w: usize) -> Self {
        Self {
            crop_x: 0.0,
            crop_y: 0.0,
            crop_w: w as f64,
            crop_h: h as f64,
            flip: false,
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
        }
    }

    /// Area fraction uniform in `[0.5, 1]`, aspect uniform in `[3/4, 4/3]`,
    /// flip with probability 1/2, jitter factors uniform in `[0.8, 1.2]`.
    pub fn sample<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Self {
        let (hf, wf) = (h as f64, w as f64);
        let mut p = Self::identity(h, w);
        for _ in 0..CROP_ATTEMPTS {
            let area = rng.random_range(0.5..=1.0) * hf * wf;
            let aspect = rng.random_range(0.75..=4.0 / 3.0);
            let cw = (area * aspect).sqrt();
            let ch = (area / aspect).sqrt();
            if cw <= wf && ch <= hf {
                p.crop_w = cw;
                p.crop_h = ch;
                p.crop_x = rng.random_range(0.0..=wf - cw);
                p.crop_y = rng.random_range(0.0..=hf - ch);
                break;
            }
        }
        p.flip = rng.random_bool(0.5);
        p.brightness = rng.random_range(0.8..=1.2);
        p.contrast = rng.random_range(0.8..=1.2);
        p.saturation = rng.random_range(0.8..=1.2);
        p
    }
}

fn dims(img: &Tensor<f32>) -> Result<(usize, usize)> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::dim(format!("expected a 3×H×W image, got {s:?}")));
    }
    if s[1] < MIN_SIDE || s[2] < MIN_SIDE {
        return Err(Error::dim(format!("image {s:?} is smaller than {MIN_SIDE}×{MIN_SIDE}")));
    }
    Ok((s[1], s[2]))
}

/// Bilinear sample of the crop box onto a `size×size` grid, pixel-center aligned.
fn resample(img: &Tensor<f32>, h: usize, w: usize, p: &AugmentParams, size: usize) -> Vec<f32> {
    let src = img.data();
    let mut out = vec![0.0f32; 3 * size * size];
    let sy = p.crop_h / size as f64;
    let sx = p.crop_w / size as f64;
    for oy in 0..size {
        let y = (p.crop_y + (oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = y - y0 as f64;
        for ox in 0..size {
            let x = (p.crop_x + (ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = x - x0 as f64;
            let dst_x = if p.flip { size - 1 - ox } else { ox };
            for c in 0..3 {
                let at = |yy: usize, xx: usize| src[(c * h + yy) * w + xx] as f64;
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out[(c * size + oy) * size + dst_x] = (top * (1.0 - fy) + bottom * fy) as f32;
            }
        }
    }
    out
}

fn jitter(data: &mut [f32], plane: usize, p: &AugmentParams) {
    if p.brightness != 1.0 {
        for v in data.iter_mut() {
            *v = (*v as f64 * p.brightness) as f32;
        }
    }
    if p.contrast != 1.0 {
        let mean = (0..plane).map(|i| gray(data, plane, i)).sum::<f64>() / plane as f64;
        for v in data.iter_mut() {
            *v = ((*v as f64 - mean) * p.contrast + mean) as f32;
        }
    }
    if p.saturation != 1.0 {
        for i in 0..plane {
            let g = gray(data, plane, i);
            for c in 0..3 {
                let v = &mut data[c * plane + i];
                *v = ((*v as f64 - g) * p.saturation + g) as f32;
            }
        }
    }
    for v in data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

fn gray(data: &[f32], plane: usize, i: usize) -> f64 {
    0.299 * data[i] as f64 + 0.587 * data[plane + i] as f64 + 0.114 * data[2 * plane + i] as f64
}

/// Apply explicit augmentation parameters.
pub fn augment_with(img: &Tensor<f32>, params: &AugmentParams, size: usize) -> Result<Tensor<f32>> {
    let (h, w) = dims(img)?;
    let mut data = resample(img, h, w, params, size);
    jitter(&mut data, size * size, params);
    Tensor::new(&[3, size, size], data)
}

/// Random augmentation to a `3×size×size` image in `[0, 1]`.
pub fn augment<R: Rng + ?Sized>(img: &Tensor<f32>, rng: &mut R, size: usize) -> Result<Tensor<f32>> {
    let (h, w) = dims(img)?;
    let params = AugmentParams::sample(h, w, rng);
    augment_with(img, &params, size)
}

/// Largest centered square, resized to `size×size`.
pub fn center_resize(img: &Tensor<f32>, size: usize) -> Result<Tensor<f32>> {
    let (h, w) = dims(img)?;
    let side = h.min(w) as f64;
    let mut p = AugmentParams::identity(h, w);
    p.crop_w = side;
    p.crop_h = side;
    p.crop_x = (w as f64 - side) / 2.0;
    p.crop_y = (h as f64 - side) / 2.0;
    augment_with(img, &p, size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_image(seed: u64, h: usize, w: usize) -> Tensor<f32> {
        Tensor::uniform(&[3, h, w], 0.0, 1.0, &mut rng::child(seed, 0))
    }

    #[test]
    fn identity_params_reproduce_input() {
        let img = random_image(1, 84, 84);
        let out = augment_with(&img, &AugmentParams::identity(84, 84), 84).unwrap();
        assert!(out.max_abs_diff(&img).unwrap() < 1e-6);
    }

    #[test]
    fn shape_and_range_over_many_draws() {
        let img = random_image(2, 40, 48);
        let mut r = rng::child(9, 0);
        for _ in 0..1000 {
            let out = augment(&img, &mut r, 84).unwrap();
            assert_eq!(out.shape(), &[3, 84, 84]);
            assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn flip_mirrors_columns() {
        let img = random_image(3, 16, 16);
        let mut p = AugmentParams::identity(16, 16);
        p.flip = true;
        let out = augment_with(&img, &p, 16).unwrap();
        for c in 0..3 {
            for y in 0..16 {
                for x in 0..16 {
                    let a = out.data()[(c * 16 + y) * 16 + x];
                    let b = img.data()[(c * 16 + y) * 16 + 15 - x];
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn too_small_rejected() {
        let img = Tensor::<f32>::zeros(&[3, 8, 8]);
        assert!(augment(&img, &mut rng::child(0, 0), 84).is_err());
    }
}
