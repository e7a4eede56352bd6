//! Convolution layers (1D, transposed 1D, 2D) and max pooling, all
//! im2col/GEMM based with explicit backward passes.
//!
//! Layer inputs are per-sample and channels-first: `(C, L)` for temporal
//! layers, `(C, H, W)` for image layers. Forward GEMMs split their output
//! into two fixed column blocks executed via `rayon::join`; the blocks are
//! disjoint, so results are bit-identical regardless of scheduling.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::Rng;

use super::{fan_in_uniform, GradStore, ParamId, Params, Scalar};

/// Minimum GEMM output columns before the forward pass bothers splitting.
const PAR_MIN_COLS: usize = 64;

fn gemm_into<T: Scalar>(a: &ArrayView2<T>, b: &ArrayView2<T>, out: &mut Array2<T>) {
    let cols = out.ncols();
    if cols >= PAR_MIN_COLS {
        let mid = cols / 2;
        let (mut left, mut right) = out.view_mut().split_at(Axis(1), mid);
        let (b_left, b_right) = b.split_at(Axis(1), mid);
        rayon::join(
            || general_mat_mul(T::one(), a, &b_left, T::zero(), &mut left),
            || general_mat_mul(T::one(), a, &b_right, T::zero(), &mut right),
        );
    } else {
        general_mat_mul(T::one(), a, b, T::zero(), out);
    }
}

/// 1D convolution: weight `(C_out, C_in, K)`, bias `(C_out)`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Saved forward state needed by the backward pass.
pub struct Conv1dCache<T> {
    /// im2col matrix, `(L_out, C_in * K)`.
    cols: Array2<T>,
    l_in: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        params: &mut Params<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = c_in * kernel;
        let w = params.add(format!("{name}.w"), fan_in_uniform(rng, fan_in, &[c_out, c_in, kernel]));
        let b = params.add(format!("{name}.b"), fan_in_uniform(rng, fan_in, &[c_out]));
        Self { w, b, c_in, c_out, kernel, stride, pad }
    }

    pub fn l_out(&self, l_in: usize) -> usize {
        (l_in + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn forward<T: Scalar>(&self, params: &Params<T>, x: &Array2<T>) -> (Array2<T>, Conv1dCache<T>) {
        debug_assert_eq!(x.nrows(), self.c_in);
        let l_in = x.ncols();
        let l_out = self.l_out(l_in);
        let ck = self.c_in * self.kernel;

        let mut cols = Array2::<T>::zeros((l_out, ck));
        for o in 0..l_out {
            let base = (o * self.stride) as isize - self.pad as isize;
            for c in 0..self.c_in {
                for t in 0..self.kernel {
                    let pos = base + t as isize;
                    if pos >= 0 && (pos as usize) < l_in {
                        cols[[o, c * self.kernel + t]] = x[[c, pos as usize]];
                    }
                }
            }
        }

        let w2 = params.get(self.w).view().into_shape_with_order((self.c_out, ck)).unwrap();
        let mut y = Array2::<T>::zeros((self.c_out, l_out));
        gemm_into(&w2, &cols.t(), &mut y);
        let bias = params.get(self.b);
        for (mut row, bv) in y.axis_iter_mut(Axis(0)).zip(bias.iter()) {
            row.mapv_inplace(|v| v + *bv);
        }
        (y, Conv1dCache { cols, l_in })
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &Params<T>,
        cache: &Conv1dCache<T>,
        dy: &Array2<T>,
        grads: &mut GradStore<T>,
    ) -> Array2<T> {
        let ck = self.c_in * self.kernel;
        let l_out = dy.ncols();

        {
            let mut dw = grads
                .get_mut(self.w)
                .view_mut()
                .into_shape_with_order((self.c_out, ck))
                .unwrap();
            general_mat_mul(T::one(), &dy.view(), &cache.cols.view(), T::one(), &mut dw);
        }
        {
            let db = grads.get_mut(self.b);
            for (c, dbv) in db.iter_mut().enumerate() {
                *dbv += dy.row(c).sum();
            }
        }

        let w2 = params.get(self.w).view().into_shape_with_order((self.c_out, ck)).unwrap();
        let mut dcols = Array2::<T>::zeros((l_out, ck));
        general_mat_mul(T::one(), &dy.t(), &w2, T::one(), &mut dcols.view_mut());

        let mut dx = Array2::<T>::zeros((self.c_in, cache.l_in));
        for o in 0..l_out {
            let base = (o * self.stride) as isize - self.pad as isize;
            for c in 0..self.c_in {
                for t in 0..self.kernel {
                    let pos = base + t as isize;
                    if pos >= 0 && (pos as usize) < cache.l_in {
                        dx[[c, pos as usize]] += dcols[[o, c * self.kernel + t]];
                    }
                }
            }
        }
        dx
    }
}

/// Transposed 1D convolution (fractionally strided), weight `(C_in, C_out, K)`.
#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

pub struct ConvTranspose1dCache<T> {
    /// `x` transposed to `(L_in, C_in)`.
    x_t: Array2<T>,
}

impl ConvTranspose1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        params: &mut Params<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = c_in * kernel;
        let w = params.add(format!("{name}.w"), fan_in_uniform(rng, fan_in, &[c_in, c_out, kernel]));
        let b = params.add(format!("{name}.b"), fan_in_uniform(rng, fan_in, &[c_out]));
        Self { w, b, c_in, c_out, kernel, stride, pad }
    }

    pub fn l_out(&self, l_in: usize) -> usize {
        (l_in - 1) * self.stride + self.kernel - 2 * self.pad
    }

    pub fn forward<T: Scalar>(
        &self,
        params: &Params<T>,
        x: &Array2<T>,
    ) -> (Array2<T>, ConvTranspose1dCache<T>) {
        debug_assert_eq!(x.nrows(), self.c_in);
        let l_in = x.ncols();
        let l_out = self.l_out(l_in);
        let ck = self.c_out * self.kernel;

        let x_t = x.t().as_standard_layout().to_owned();
        let w2 = params.get(self.w).view().into_shape_with_order((self.c_in, ck)).unwrap();
        let mut proj = Array2::<T>::zeros((l_in, ck));
        general_mat_mul(T::one(), &x_t.view(), &w2, T::zero(), &mut proj.view_mut());

        let bias = params.get(self.b);
        let mut y = Array2::<T>::zeros((self.c_out, l_out));
        for (mut row, bv) in y.axis_iter_mut(Axis(0)).zip(bias.iter()) {
            row.fill(*bv);
        }
        for i in 0..l_in {
            let base = (i * self.stride) as isize - self.pad as isize;
            for co in 0..self.c_out {
                for t in 0..self.kernel {
                    let pos = base + t as isize;
                    if pos >= 0 && (pos as usize) < l_out {
                        y[[co, pos as usize]] += proj[[i, co * self.kernel + t]];
                    }
                }
            }
        }
        (y, ConvTranspose1dCache { x_t })
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &Params<T>,
        cache: &ConvTranspose1dCache<T>,
        dy: &Array2<T>,
        grads: &mut GradStore<T>,
    ) -> Array2<T> {
        let l_in = cache.x_t.nrows();
        let l_out = dy.ncols();
        let ck = self.c_out * self.kernel;

        // Gather the scattered contributions back into projection space.
        let mut dproj = Array2::<T>::zeros((l_in, ck));
        for i in 0..l_in {
            let base = (i * self.stride) as isize - self.pad as isize;
            for co in 0..self.c_out {
                for t in 0..self.kernel {
                    let pos = base + t as isize;
                    if pos >= 0 && (pos as usize) < l_out {
                        dproj[[i, co * self.kernel + t]] = dy[[co, pos as usize]];
                    }
                }
            }
        }

        {
            let mut dw = grads
                .get_mut(self.w)
                .view_mut()
                .into_shape_with_order((self.c_in, ck))
                .unwrap();
            general_mat_mul(T::one(), &cache.x_t.t(), &dproj.view(), T::one(), &mut dw);
        }
        {
            let db = grads.get_mut(self.b);
            for (c, dbv) in db.iter_mut().enumerate() {
                *dbv += dy.row(c).sum();
            }
        }

        let w2 = params.get(self.w).view().into_shape_with_order((self.c_in, ck)).unwrap();
        let mut dx_t = Array2::<T>::zeros((l_in, self.c_in));
        general_mat_mul(T::one(), &dproj.view(), &w2.t(), T::one(), &mut dx_t.view_mut());
        dx_t.t().as_standard_layout().to_owned()
    }
}

/// 2D convolution: weight `(C_out, C_in, K, K)`, square kernels.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

pub struct Conv2dCache<T> {
    /// im2col matrix, `(H_out * W_out, C_in * K * K)`.
    cols: Array2<T>,
    h_in: usize,
    w_in: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        params: &mut Params<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        let w = params.add(
            format!("{name}.w"),
            fan_in_uniform(rng, fan_in, &[c_out, c_in, kernel, kernel]),
        );
        let b = params.add(format!("{name}.b"), fan_in_uniform(rng, fan_in, &[c_out]));
        Self { w, b, c_in, c_out, kernel, stride, pad }
    }

    pub fn out_side(&self, side: usize) -> usize {
        (side + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn forward<T: Scalar>(&self, params: &Params<T>, x: &Array3<T>) -> (Array3<T>, Conv2dCache<T>) {
        let (c_in, h_in, w_in) = x.dim();
        debug_assert_eq!(c_in, self.c_in);
        let h_out = self.out_side(h_in);
        let w_out = self.out_side(w_in);
        let k = self.kernel;
        let ck = self.c_in * k * k;

        let mut cols = Array2::<T>::zeros((h_out * w_out, ck));
        for oy in 0..h_out {
            let by = (oy * self.stride) as isize - self.pad as isize;
            for ox in 0..w_out {
                let bx = (ox * self.stride) as isize - self.pad as isize;
                let row = oy * w_out + ox;
                for c in 0..self.c_in {
                    for ky in 0..k {
                        let py = by + ky as isize;
                        if py < 0 || py as usize >= h_in {
                            continue;
                        }
                        for kx in 0..k {
                            let px = bx + kx as isize;
                            if px >= 0 && (px as usize) < w_in {
                                cols[[row, (c * k + ky) * k + kx]] =
                                    x[[c, py as usize, px as usize]];
                            }
                        }
                    }
                }
            }
        }

        let w2 = params.get(self.w).view().into_shape_with_order((self.c_out, ck)).unwrap();
        let mut y2 = Array2::<T>::zeros((self.c_out, h_out * w_out));
        gemm_into(&w2, &cols.t(), &mut y2);
        let bias = params.get(self.b);
        for (mut row, bv) in y2.axis_iter_mut(Axis(0)).zip(bias.iter()) {
            row.mapv_inplace(|v| v + *bv);
        }
        let y = y2.into_shape_with_order((self.c_out, h_out, w_out)).unwrap();
        (y, Conv2dCache { cols, h_in, w_in })
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &Params<T>,
        cache: &Conv2dCache<T>,
        dy: &Array3<T>,
        grads: &mut GradStore<T>,
    ) -> Array3<T> {
        let (c_out, h_out, w_out) = dy.dim();
        debug_assert_eq!(c_out, self.c_out);
        let k = self.kernel;
        let ck = self.c_in * k * k;
        let dy2 = dy.view().into_shape_with_order((c_out, h_out * w_out)).unwrap();

        {
            let mut dw = grads
                .get_mut(self.w)
                .view_mut()
                .into_shape_with_order((self.c_out, ck))
                .unwrap();
            general_mat_mul(T::one(), &dy2, &cache.cols.view(), T::one(), &mut dw);
        }
        {
            let db = grads.get_mut(self.b);
            for (c, dbv) in db.iter_mut().enumerate() {
                *dbv += dy2.row(c).sum();
            }
        }

        let w2 = params.get(self.w).view().into_shape_with_order((self.c_out, ck)).unwrap();
        let mut dcols = Array2::<T>::zeros((h_out * w_out, ck));
        general_mat_mul(T::one(), &dy2.t(), &w2, T::one(), &mut dcols.view_mut());

        let mut dx = Array3::<T>::zeros((self.c_in, cache.h_in, cache.w_in));
        for oy in 0..h_out {
            let by = (oy * self.stride) as isize - self.pad as isize;
            for ox in 0..w_out {
                let bx = (ox * self.stride) as isize - self.pad as isize;
                let row = oy * w_out + ox;
                for c in 0..self.c_in {
                    for ky in 0..k {
                        let py = by + ky as isize;
                        if py < 0 || py as usize >= cache.h_in {
                            continue;
                        }
                        for kx in 0..k {
                            let px = bx + kx as isize;
                            if px >= 0 && (px as usize) < cache.w_in {
                                dx[[c, py as usize, px as usize]] +=
                                    dcols[[row, (c * k + ky) * k + kx]];
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Max pooling over square windows.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

pub struct MaxPool2dCache {
    /// Flat input index of each output's argmax.
    argmax: Vec<usize>,
    in_dim: (usize, usize, usize),
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self { kernel, stride, pad }
    }

    pub fn out_side(&self, side: usize) -> usize {
        (side + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn forward<T: Scalar>(&self, x: &Array3<T>) -> (Array3<T>, MaxPool2dCache) {
        let (c_n, h_in, w_in) = x.dim();
        let h_out = self.out_side(h_in);
        let w_out = self.out_side(w_in);
        let mut y = Array3::<T>::zeros((c_n, h_out, w_out));
        let mut argmax = vec![0usize; c_n * h_out * w_out];
        for c in 0..c_n {
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let by = (oy * self.stride) as isize - self.pad as isize;
                    let bx = (ox * self.stride) as isize - self.pad as isize;
                    let mut best = T::neg_infinity();
                    let mut best_idx = 0usize;
                    for ky in 0..self.kernel {
                        let py = by + ky as isize;
                        if py < 0 || py as usize >= h_in {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let px = bx + kx as isize;
                            if px < 0 || px as usize >= w_in {
                                continue;
                            }
                            let v = x[[c, py as usize, px as usize]];
                            if v > best {
                                best = v;
                                best_idx = (c * h_in + py as usize) * w_in + px as usize;
                            }
                        }
                    }
                    y[[c, oy, ox]] = best;
                    argmax[(c * h_out + oy) * w_out + ox] = best_idx;
                }
            }
        }
        (y, MaxPool2dCache { argmax, in_dim: (c_n, h_in, w_in) })
    }

    pub fn backward<T: Scalar>(&self, cache: &MaxPool2dCache, dy: &Array3<T>) -> Array3<T> {
        let mut dx = Array3::<T>::zeros(cache.in_dim);
        let dxs = dx.as_slice_mut().unwrap();
        for (g, &idx) in dy.iter().zip(cache.argmax.iter()) {
            dxs[idx] += *g;
        }
        dx
    }
}

