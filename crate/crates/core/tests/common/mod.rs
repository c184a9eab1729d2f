//! Naive reference implementations, written loop by loop from the
//! definitions and sharing no code with the library.

#![allow(dead_code)]

pub const EPS: f64 = 1e-12;

/// `a` is `m×k`, `b` is `k×n`, row-major.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

/// 3×3 cross-correlation with zero padding 1 over `batch×ci×h×w`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(x: &[f64], w: &[f64], bias: &[f64], batch: usize, ci: usize, co: usize, h: usize, wd: usize) -> Vec<f64> {
    let mut out = vec![0.0; batch * co * h * wd];
    for b in 0..batch {
        for o in 0..co {
            for y in 0..h {
                for xx in 0..wd {
                    let mut s = bias[o];
                    for c in 0..ci {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + ky as isize - 1;
                                let sx = xx as isize + kx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                let xi = ((b * ci + c) * h + sy as usize) * wd + sx as usize;
                                let wi = ((o * ci + c) * 3 + ky) * 3 + kx;
                                s += x[xi] * w[wi];
                            }
                        }
                    }
                    out[((b * co + o) * h + y) * wd + xx] = s;
                }
            }
        }
    }
    out
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Cross-attention of one image.
///
/// `visual` is `c×h×w`; `queries` is `p×l` with `p = h·w`; key and value
/// weights are `l×c` with biases of length `l`. Returns the `l×h×w` output
/// and the `p×p` attention.
#[allow(clippy::too_many_arguments)]
pub fn cam(
    visual: &[f64],
    queries: &[f64],
    wk: &[f64],
    bk: &[f64],
    wv: &[f64],
    bv: &[f64],
    c: usize,
    h: usize,
    w: usize,
    l: usize,
    scale: f64,
) -> (Vec<f64>, Vec<f64>) {
    let p = h * w;
    let patch = |i: usize, ch: usize| visual[ch * p + i];
    let project = |wt: &[f64], b: &[f64], i: usize, o: usize| {
        let mut s = b[o];
        for ch in 0..c {
            s += wt[o * c + ch] * patch(i, ch);
        }
        s
    };
    let mut attention = vec![0.0; p * p];
    for qi in 0..p {
        let logits: Vec<f64> = (0..p)
            .map(|ki| {
                let mut dot = 0.0;
                for o in 0..l {
                    dot += queries[qi * l + o] * project(wk, bk, ki, o);
                }
                dot * scale
            })
            .collect();
        attention[qi * p..(qi + 1) * p].copy_from_slice(&softmax(&logits));
    }
    let mut out = vec![0.0; l * p];
    for qi in 0..p {
        for o in 0..l {
            let mut s = 0.0;
            for ki in 0..p {
                s += attention[qi * p + ki] * project(wv, bv, ki, o);
            }
            out[o * p + qi] = s;
        }
    }
    (out, attention)
}

/// Class means of `ways·shots` class-major rows of length `d`.
pub fn prototypes(support: &[f64], ways: usize, shots: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; ways * d];
    for k in 0..ways {
        for s in 0..shots {
            for i in 0..d {
                out[k * d + i] += support[(k * shots + s) * d + i];
            }
        }
        for i in 0..d {
            out[k * d + i] /= shots as f64;
        }
    }
    out
}

pub fn sq_distances(q: &[f64], p: &[f64], m: usize, k: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        for j in 0..k {
            out[i * k + j] = (0..d).map(|t| (q[i * d + t] - p[j * d + t]).powi(2)).sum();
        }
    }
    out
}

pub fn posterior(distances: &[f64], k: usize) -> Vec<f64> {
    distances
        .chunks(k)
        .flat_map(|row| softmax(&row.iter().map(|d| -d).collect::<Vec<_>>()))
        .collect()
}

pub fn kl(target: &[f64], pred: &[f64]) -> f64 {
    target
        .iter()
        .zip(pred)
        .map(|(t, p)| t * ((t + EPS).ln() - (p + EPS).ln()))
        .sum()
}

pub fn mse(target: &[f64], pred: &[f64]) -> f64 {
    target.iter().zip(pred).map(|(t, p)| (p - t).powi(2)).sum::<f64>() / target.len() as f64
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Sample mean and `1.96·s/√n` computed in two explicit passes.
pub fn ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mut total = 0.0;
    for v in values {
        total += v;
    }
    let mean = total / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let mut ss = 0.0;
    for v in values {
        ss += (v - mean) * (v - mean);
    }
    (mean, 1.96 * (ss / (n - 1.0)).sqrt() / n.sqrt())
}

pub mod suite;
