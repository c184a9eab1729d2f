//! Fusion of visual feature maps with the auxiliary semantic patches.
//!
//! The semantic cross-attention module draws its queries from the auxiliary
//! branch and its keys/values from the visual patches:
//!
//! ```text
//! p_key   = key_proj(patchify(e_main))        (h·w)×l_out
//! p_value = value_proj(patchify(e_main))      (h·w)×l_out
//! A       = softmax_rows(e_aux · p_keyᵀ · scale)
//! e_out   = unpatchify(A · p_value)           l_out×h×w
//! ```
//!
//! Squeeze-excitation, concatenation and the identity are kept as ablation
//! variants behind the same [`fuse`] entry point.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::backbone::glorot;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Which fusion module sits between the backbone and the metric head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionKind {
    Cam,
    SqueezeExcitation,
    Concat,
    None,
}

impl FusionKind {
    pub const ALL: [FusionKind; 4] = [
        FusionKind::Cam,
        FusionKind::SqueezeExcitation,
        FusionKind::Concat,
        FusionKind::None,
    ];

    /// Channel depth of the fused map.
    pub fn output_channels(self, l_inter: usize, l_out: usize) -> usize {
        match self {
            FusionKind::Cam => l_out,
            FusionKind::SqueezeExcitation | FusionKind::None => l_inter,
            FusionKind::Concat => l_inter + l_out,
        }
    }

    /// Whether the fused features read the auxiliary patches.
    pub fn uses_aux(self) -> bool {
        matches!(self, FusionKind::Cam | FusionKind::Concat)
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionKind::Cam => "cam",
            FusionKind::SqueezeExcitation => "squeeze_excitation",
            FusionKind::Concat => "concat",
            FusionKind::None => "none",
        })
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cam" => Ok(FusionKind::Cam),
            "squeeze_excitation" | "se" => Ok(FusionKind::SqueezeExcitation),
            "concat" => Ok(FusionKind::Concat),
            "none" => Ok(FusionKind::None),
            other => Err(Error::Config(format!(
                "unknown fusion variant {other:?} (expected cam, squeeze_excitation, concat or none)"
            ))),
        }
    }
}

/// Default attention scale `1/√l_out`.
pub fn default_scale(l_out: usize) -> f64 {
    1.0 / (l_out as f64).sqrt()
}

/// Default squeeze-excitation reduction ratio.
pub const SE_REDUCTION: usize = 4;

/// `C×h×w → (h·w)×C` (row-major over spatial positions), or batched
/// `B×C×h×w → B×(h·w)×C`.
pub fn patchify<T: Real>(g: &mut Graph<T>, e: Var) -> Result<Var> {
    let s = g.shape(e).to_vec();
    let flat = match s.len() {
        3 => g.reshape(e, &[s[0], s[1] * s[2]])?,
        4 => g.reshape(e, &[s[0], s[1], s[2] * s[3]])?,
        _ => return Err(Error::dim(format!("patchify: expected a feature map, got {s:?}"))),
    };
    g.transpose(flat)
}

/// Inverse of [`patchify`] for an `h×w` grid.
pub fn unpatchify<T: Real>(g: &mut Graph<T>, p: Var, h: usize, w: usize) -> Result<Var> {
    let s = g.shape(p).to_vec();
    let patches = s[s.len().saturating_sub(2)..].first().copied().unwrap_or(0);
    if s.len() < 2 || s.len() > 3 || patches != h * w {
        return Err(Error::dim(format!("unpatchify: {s:?} is not a sequence of {h}×{w} patches")));
    }
    let t = g.transpose(p)?;
    match s.len() {
        2 => g.reshape(t, &[s[1], h, w]),
        _ => g.reshape(t, &[s[0], s[2], h, w]),
    }
}

pub fn init_cam<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, l_inter: usize, l_out: usize, rng: &mut R) {
    for role in ["key", "value"] {
        store.insert_param(format!("cam.{role}.w"), glorot(&[l_out, l_inter], l_inter, l_out, rng));
        store.insert_param(format!("cam.{role}.b"), Tensor::zeros(&[l_out]));
    }
}

pub fn init_se<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    channels: usize,
    reduction: usize,
    rng: &mut R,
) -> Result<()> {
    if reduction == 0 || !channels.is_multiple_of(reduction) {
        return Err(Error::Config(format!(
            "squeeze-excitation reduction {reduction} must divide {channels} channels"
        )));
    }
    let hidden = channels / reduction;
    store.insert_param("se.fc1.w", glorot(&[hidden, channels], channels, hidden, rng));
    store.insert_param("se.fc1.b", Tensor::zeros(&[hidden]));
    store.insert_param("se.fc2.w", glorot(&[channels, hidden], hidden, channels, rng));
    store.insert_param("se.fc2.b", Tensor::zeros(&[channels]));
    Ok(())
}

/// Batch a single feature map / patch sequence; returns whether it did.
fn lift<T: Real>(g: &mut Graph<T>, v: Var, rank: usize) -> Result<(Var, bool)> {
    let s = g.shape(v).to_vec();
    if s.len() == rank - 1 {
        let mut b = vec![1];
        b.extend_from_slice(&s);
        Ok((g.reshape(v, &b)?, true))
    } else {
        Ok((v, false))
    }
}

fn lower<T: Real>(g: &mut Graph<T>, v: Var, lifted: bool) -> Result<Var> {
    if lifted {
        let s = g.shape(v)[1..].to_vec();
        g.reshape(v, &s)
    } else {
        Ok(v)
    }
}

fn check_patches<T: Real>(g: &Graph<T>, e_main: Var, e_aux: Var) -> Result<(usize, usize, usize)> {
    let (sm, sa) = (g.shape(e_main), g.shape(e_aux));
    if sm.len() != 4 || sa.len() != 3 || sm[0] != sa[0] || sm[2] * sm[3] != sa[1] {
        return Err(Error::dim(format!(
            "visual map {sm:?} and auxiliary patches {sa:?} disagree on batch or patch count"
        )));
    }
    Ok((sm[2], sm[3], sa[2]))
}

/// Output and attention weights of the cross-attention module.
pub struct CamOutput {
    pub out: Var,
    /// `B×P×P` (or `P×P`), rows index queries and sum to one.
    pub attention: Var,
}

pub fn cam_forward_with_attention<T: Real>(
    g: &mut Graph<T>,
    bound: &Bound,
    e_main: Var,
    e_aux: Var,
    scale: f64,
) -> Result<CamOutput> {
    if !(scale > 0.0) {
        return Err(Error::Parameter(format!("attention scale must be > 0, got {scale}")));
    }
    let (e_main, lifted) = lift(g, e_main, 4)?;
    let (e_aux, _) = lift(g, e_aux, 3)?;
    let (h, w, _) = check_patches(g, e_main, e_aux)?;
    let patches = patchify(g, e_main)?;
    let key = g.linear(patches, bound.get("cam.key.w")?, bound.get("cam.key.b")?)?;
    let value = g.linear(patches, bound.get("cam.value.w")?, bound.get("cam.value.b")?)?;
    if g.shape(key)[2] != g.shape(e_aux)[2] {
        return Err(Error::dim(format!(
            "key dimension {} differs from query dimension {}",
            g.shape(key)[2],
            g.shape(e_aux)[2]
        )));
    }
    let key_t = g.transpose(key)?;
    let logits = g.matmul(e_aux, key_t)?;
    let logits = g.scale(logits, T::of(scale));
    let attention = g.softmax(logits, 2, 1.0)?;
    let mixed = g.matmul(attention, value)?;
    let out = unpatchify(g, mixed, h, w)?;
    Ok(CamOutput {
        out: lower(g, out, lifted)?,
        attention: lower(g, attention, lifted)?,
    })
}

/// Semantic cross-attention: `l_inter×h×w` visual map and `(h·w)×l_out`
/// auxiliary patches to an `l_out×h×w` map. Batched inputs work the same.
pub fn cam_forward<T: Real>(g: &mut Graph<T>, bound: &Bound, e_main: Var, e_aux: Var, scale: f64) -> Result<Var> {
    Ok(cam_forward_with_attention(g, bound, e_main, e_aux, scale)?.out)
}

/// Channel re-weighting `s = σ(W₂·relu(W₁·avgpool(e)))`, output `s_c · e_c`.
pub fn se_forward<T: Real>(g: &mut Graph<T>, bound: &Bound, e_main: Var) -> Result<Var> {
    let (e, lifted) = lift(g, e_main, 4)?;
    let s = g.shape(e).to_vec();
    if s.len() != 4 {
        return Err(Error::dim(format!("se_forward: expected a feature map, got {s:?}")));
    }
    let hw = s[2] * s[3];
    let flat = g.reshape(e, &[s[0], s[1], hw])?;
    let pooled = g.sum_axis(flat, 2)?;
    let pooled = g.scale(pooled, T::of(1.0 / hw as f64));
    let hidden = g.linear(pooled, bound.get("se.fc1.w")?, bound.get("se.fc1.b")?)?;
    let hidden = g.relu(hidden);
    let gate = g.linear(hidden, bound.get("se.fc2.w")?, bound.get("se.fc2.b")?)?;
    let gate = g.sigmoid(gate);
    let out = g.mul_broadcast(e, gate)?;
    lower(g, out, lifted)
}

/// Channel-wise stack of the visual map and the unpatchified auxiliary
/// patches: `(l_inter + l_out)×h×w`.
pub fn concat_fusion<T: Real>(g: &mut Graph<T>, e_main: Var, e_aux: Var) -> Result<Var> {
    let (e_main, lifted) = lift(g, e_main, 4)?;
    let (e_aux, _) = lift(g, e_aux, 3)?;
    let (h, w, _) = check_patches(g, e_main, e_aux)?;
    let aux_map = unpatchify(g, e_aux, h, w)?;
    let out = g.concat(&[e_main, aux_map], 1)?;
    lower(g, out, lifted)
}

pub fn fuse<T: Real>(
    g: &mut Graph<T>,
    bound: &Bound,
    kind: FusionKind,
    e_main: Var,
    e_aux: Var,
    scale: f64,
) -> Result<Var> {
    match kind {
        FusionKind::Cam => cam_forward(g, bound, e_main, e_aux, scale),
        FusionKind::SqueezeExcitation => se_forward(g, bound, e_main),
        FusionKind::Concat => concat_fusion(g, e_main, e_aux),
        FusionKind::None => Ok(e_main),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn patchify_roundtrip_and_indexing() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t: Tensor<f64> = Tensor::uniform(&[2, 2, 2], -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let e = g.constant(t.clone());
        let p = patchify(&mut g, e).unwrap();
        let pd = g.value(p).data().to_vec();
        for row in 0..2 {
            for col in 0..2 {
                for c in 0..2 {
                    let patch = row * 2 + col;
                    assert_eq!(pd[patch * 2 + c], t.data()[c * 4 + row * 2 + col]);
                }
            }
        }
        let back = unpatchify(&mut g, p, 2, 2).unwrap();
        assert_eq!(g.value(back), &t);
    }

    #[test]
    fn single_position_patch() {
        let mut g = Graph::<f64>::new();
        let e = g.constant(Tensor::from_f64(&[3, 1, 1], &[1.0, 2.0, 3.0]).unwrap());
        let p = patchify(&mut g, e).unwrap();
        assert_eq!(g.shape(p), &[1, 3]);
        assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn fusion_kind_parse() {
        for k in FusionKind::ALL {
            assert_eq!(k.to_string().parse::<FusionKind>().unwrap(), k);
        }
        assert!(matches!("xattn".parse::<FusionKind>(), Err(Error::Config(_))));
    }

    #[test]
    fn se_reduction_must_divide() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(init_se(&mut store, 10, 4, &mut rng).is_err());
        assert!(init_se(&mut store, 128, 4, &mut rng).is_ok());
    }
}
