//! Raw numeric kernels over slices. No shape bookkeeping happens here; the
//! graph validates shapes before calling in.

use super::Real;

/// Whether a gemm operand is read transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transpose {
    No,
    Yes,
}

/// `c = alpha * op(a) · op(b) + beta * c` where `op(a)` is `m×k` and `op(b)` is `k×n`.
///
/// Operands are row-major; a transposed operand is stored in its
/// untransposed shape (`k×m` for `a`, `n×k` for `b`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    ta: Transpose,
    tb: Transpose,
    m: usize,
    n: usize,
    k: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k, "gemm: lhs too short");
    assert!(b.len() >= k * n, "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match ta {
        Transpose::No => (k as isize, 1),
        Transpose::Yes => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Transpose::No => (n as isize, 1),
        Transpose::Yes => (1, k as isize),
    };
    // SAFETY: the asserts above bound every access of the described
    // layouts, and `c` is a distinct mutable borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a batched 3×3, stride 1, pad 1 convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
}

const COL_BUDGET: usize = 1 << 21;

impl ConvGeom {
    fn hw(&self) -> usize {
        self.height * self.width
    }

    fn patch_len(&self) -> usize {
        self.c_in * 9
    }

    /// Images processed per im2col buffer.
    fn chunk(&self) -> usize {
        (COL_BUDGET / (self.patch_len() * self.hw()).max(1)).clamp(1, self.batch)
    }

    /// Fill columns `[offset, offset + hw)` of a `(c_in·9) × ncols` buffer.
    fn im2col<T: Real>(&self, image: &[T], col: &mut [T], ncols: usize, offset: usize) {
        let (h, w) = (self.height, self.width);
        for c in 0..self.c_in {
            let plane = &image[c * h * w..(c + 1) * h * w];
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = (c * 9 + ky * 3 + kx) * ncols + offset;
                    let dst = &mut col[row..row + h * w];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        let out = &mut dst[y * w..(y + 1) * w];
                        if sy < 0 || sy >= h as isize {
                            out.fill(T::zero());
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        for (x, o) in out.iter_mut().enumerate() {
                            let sx = x as isize + kx as isize - 1;
                            *o = if sx < 0 || sx >= w as isize {
                                T::zero()
                            } else {
                                src[sx as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add columns back into an image gradient.
    fn col2im<T: Real>(&self, col: &[T], ncols: usize, offset: usize, image: &mut [T]) {
        let (h, w) = (self.height, self.width);
        for c in 0..self.c_in {
            let plane = &mut image[c * h * w..(c + 1) * h * w];
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = (c * 9 + ky * 3 + kx) * ncols + offset;
                    let src = &col[row..row + h * w];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                        for x in 0..w {
                            let sx = x as isize + kx as isize - 1;
                            if sx >= 0 && sx < w as isize {
                                dst[sx as usize] += src[y * w + x];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward<T: Real>(&self, input: &[T], kernels: &[T], bias: &[T]) -> Vec<T> {
        let hw = self.hw();
        let plen = self.patch_len();
        let mut out = vec![T::zero(); self.batch * self.c_out * hw];
        let chunk = self.chunk();
        let mut col = vec![T::zero(); plen * chunk * hw];
        let mut res = vec![T::zero(); self.c_out * chunk * hw];
        for start in (0..self.batch).step_by(chunk) {
            let count = chunk.min(self.batch - start);
            let ncols = count * hw;
            for i in 0..count {
                let img = &input[(start + i) * self.c_in * hw..(start + i + 1) * self.c_in * hw];
                self.im2col(img, &mut col, ncols, i * hw);
            }
            gemm(
                Transpose::No,
                Transpose::No,
                self.c_out,
                ncols,
                plen,
                T::one(),
                kernels,
                &col[..plen * ncols],
                T::zero(),
                &mut res[..self.c_out * ncols],
            );
            for i in 0..count {
                for co in 0..self.c_out {
                    let src = &res[co * ncols + i * hw..co * ncols + (i + 1) * hw];
                    let base = ((start + i) * self.c_out + co) * hw;
                    for (o, &s) in out[base..base + hw].iter_mut().zip(src) {
                        *o = s + bias[co];
                    }
                }
            }
        }
        out
    }

    /// Returns (d_input if requested, d_kernels, d_bias).
    pub fn backward<T: Real>(
        &self,
        input: &[T],
        kernels: &[T],
        grad_out: &[T],
        want_input: bool,
    ) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
        let hw = self.hw();
        let plen = self.patch_len();
        let chunk = self.chunk();
        let mut d_kernels = vec![T::zero(); self.c_out * plen];
        let mut d_bias = vec![T::zero(); self.c_out];
        let mut d_input = want_input.then(|| vec![T::zero(); input.len()]);
        let mut col = vec![T::zero(); plen * chunk * hw];
        let mut gcol = vec![T::zero(); self.c_out * chunk * hw];
        for start in (0..self.batch).step_by(chunk) {
            let count = chunk.min(self.batch - start);
            let ncols = count * hw;
            for i in 0..count {
                let img = &input[(start + i) * self.c_in * hw..(start + i + 1) * self.c_in * hw];
                self.im2col(img, &mut col, ncols, i * hw);
                for co in 0..self.c_out {
                    let base = ((start + i) * self.c_out + co) * hw;
                    let src = &grad_out[base..base + hw];
                    gcol[co * ncols + i * hw..co * ncols + (i + 1) * hw].copy_from_slice(src);
                    d_bias[co] += src.iter().copied().sum::<T>();
                }
            }
            gemm(
                Transpose::No,
                Transpose::Yes,
                self.c_out,
                plen,
                ncols,
                T::one(),
                &gcol[..self.c_out * ncols],
                &col[..plen * ncols],
                T::one(),
                &mut d_kernels,
            );
            if let Some(dx) = d_input.as_mut() {
                gemm(
                    Transpose::Yes,
                    Transpose::No,
                    plen,
                    ncols,
                    self.c_out,
                    T::one(),
                    kernels,
                    &gcol[..self.c_out * ncols],
                    T::zero(),
                    &mut col[..plen * ncols],
                );
                for i in 0..count {
                    let img =
                        &mut dx[(start + i) * self.c_in * hw..(start + i + 1) * self.c_in * hw];
                    self.col2im(&col, ncols, i * hw, img);
                }
            }
        }
        (d_input, d_kernels, d_bias)
    }
}

/// 2×2 stride-2 max pool over `planes` planes of `h×w`. Returns the pooled
/// values and, per output cell, the flat input index it was taken from.
/// Ties keep the first cell in row-major order.
pub(crate) fn max_pool2<T: Real>(input: &[T], planes: usize, h: usize, w: usize) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transpose_flags() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        gemm(Transpose::No, Transpose::No, 2, 2, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(Transpose::Yes, Transpose::No, 2, 2, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(Transpose::No, Transpose::Yes, 2, 2, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn pool_tie_goes_to_first() {
        let x = [1.0f64, 1.0, 1.0, 1.0];
        let (v, arg) = max_pool2(&x, 1, 2, 2);
        assert_eq!(v, vec![1.0]);
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn pool_drops_odd_edge() {
        let x: Vec<f64> = (0..9).map(f64::from).collect();
        let (v, arg) = max_pool2(&x, 1, 3, 3);
        assert_eq!(v, vec![4.0]);
        assert_eq!(arg, vec![4]);
    }
}
