//! Dense layer, group normalization, activations, spatial softmax, and the
//! sinusoidal timestep embedding.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;

use super::{fan_in_uniform, sc, GradStore, ParamId, Params, Scalar};

/// Fully connected layer: weight `(out, in)`, bias `(out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        params: &mut Params<T>,
        rng: &mut R,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Self {
        let w = params.add(format!("{name}.w"), fan_in_uniform(rng, d_in, &[d_out, d_in]));
        let b = params.add(format!("{name}.b"), fan_in_uniform(rng, d_in, &[d_out]));
        Self { w, b, d_in, d_out }
    }

    pub fn forward<T: Scalar>(&self, params: &Params<T>, x: &Array1<T>) -> Array1<T> {
        debug_assert_eq!(x.len(), self.d_in);
        let w = params.get(self.w).view().into_shape_with_order((self.d_out, self.d_in)).unwrap();
        let mut y = w.dot(x);
        for (yv, bv) in y.iter_mut().zip(params.get(self.b).iter()) {
            *yv += *bv;
        }
        y
    }

    /// Backward through `y = W x + b`; accumulates dW, db and returns dx.
    pub fn backward<T: Scalar>(
        &self,
        params: &Params<T>,
        x: &Array1<T>,
        dy: &Array1<T>,
        grads: &mut GradStore<T>,
    ) -> Array1<T> {
        {
            let mut dw = grads
                .get_mut(self.w)
                .view_mut()
                .into_shape_with_order((self.d_out, self.d_in))
                .unwrap();
            for (o, dyv) in dy.iter().enumerate() {
                for (i, xv) in x.iter().enumerate() {
                    dw[[o, i]] += *dyv * *xv;
                }
            }
        }
        {
            let db = grads.get_mut(self.b);
            for (dbv, dyv) in db.iter_mut().zip(dy.iter()) {
                *dbv += *dyv;
            }
        }
        let w = params.get(self.w).view().into_shape_with_order((self.d_out, self.d_in)).unwrap();
        w.t().dot(dy)
    }
}

/// Group normalization over `(C, S)` feature maps (S = flattened spatial or
/// temporal extent). Statistics are per group of channels, per sample.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
    pub groups: usize,
    pub eps: f64,
}

pub struct GroupNormCache<T> {
    xhat: Array2<T>,
    inv_std: Vec<T>,
}

/// Largest divisor of `channels` not exceeding the requested group count.
fn fit_groups(channels: usize, requested: usize) -> usize {
    (1..=requested.min(channels)).rev().find(|g| channels % g == 0).unwrap_or(1)
}

impl GroupNorm {
    pub fn new<T: Scalar>(
        params: &mut Params<T>,
        name: &str,
        channels: usize,
        requested_groups: usize,
    ) -> Self {
        let gamma = params.add(format!("{name}.gamma"), ndarray::ArrayD::ones(vec![channels]));
        let beta = params.add(format!("{name}.beta"), ndarray::ArrayD::zeros(vec![channels]));
        Self { gamma, beta, channels, groups: fit_groups(channels, requested_groups), eps: 1e-5 }
    }

    pub fn forward<T: Scalar>(&self, params: &Params<T>, x: &Array2<T>) -> (Array2<T>, GroupNormCache<T>) {
        let (c, s) = x.dim();
        debug_assert_eq!(c, self.channels);
        let cg = c / self.groups;
        let n = sc::<T>((cg * s) as f64);
        let mut xhat = Array2::<T>::zeros((c, s));
        let mut inv_std = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let rows = g * cg..(g + 1) * cg;
            let block = x.slice(ndarray::s![rows.clone(), ..]);
            let mean = block.sum() / n;
            let mut var = T::zero();
            for v in block.iter() {
                let d = *v - mean;
                var += d * d;
            }
            var /= n;
            let istd = T::one() / (var + sc::<T>(self.eps)).sqrt();
            inv_std.push(istd);
            let mut out_block = xhat.slice_mut(ndarray::s![rows, ..]);
            ndarray::Zip::from(&mut out_block).and(&block).for_each(|o, &v| *o = (v - mean) * istd);
        }
        let gamma = params.get(self.gamma);
        let beta = params.get(self.beta);
        let mut y = xhat.clone();
        for (ci, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
            let (gv, bv) = (gamma[[ci]], beta[[ci]]);
            row.mapv_inplace(|v| v * gv + bv);
        }
        (y, GroupNormCache { xhat, inv_std })
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &Params<T>,
        cache: &GroupNormCache<T>,
        dy: &Array2<T>,
        grads: &mut GradStore<T>,
    ) -> Array2<T> {
        let (c, s) = dy.dim();
        let cg = c / self.groups;
        let n = sc::<T>((cg * s) as f64);
        let gamma = params.get(self.gamma);

        {
            let dgamma = grads.get_mut(self.gamma);
            for ci in 0..c {
                let mut acc = T::zero();
                for si in 0..s {
                    acc += dy[[ci, si]] * cache.xhat[[ci, si]];
                }
                dgamma[[ci]] += acc;
            }
        }
        {
            let dbeta = grads.get_mut(self.beta);
            for ci in 0..c {
                dbeta[[ci]] += dy.row(ci).sum();
            }
        }

        let mut dx = Array2::<T>::zeros((c, s));
        for g in 0..self.groups {
            let rows = g * cg..(g + 1) * cg;
            let istd = cache.inv_std[g];
            // dxhat = dy * gamma (per channel); reduce within the group.
            let mut sum_dxhat = T::zero();
            let mut sum_dxhat_xhat = T::zero();
            for ci in rows.clone() {
                let gv = gamma[[ci]];
                for si in 0..s {
                    let dxh = dy[[ci, si]] * gv;
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * cache.xhat[[ci, si]];
                }
            }
            for ci in rows {
                let gv = gamma[[ci]];
                for si in 0..s {
                    let dxh = dy[[ci, si]] * gv;
                    dx[[ci, si]] = istd
                        * (dxh - sum_dxhat / n - cache.xhat[[ci, si]] * sum_dxhat_xhat / n);
                }
            }
        }
        dx
    }
}

/// ReLU; the returned mask feeds the backward pass.
pub fn relu<T: Scalar>(x: &Array2<T>) -> (Array2<T>, Array2<bool>) {
    let mask = x.mapv(|v| v > T::zero());
    let y = x.mapv(|v| if v > T::zero() { v } else { T::zero() });
    (y, mask)
}

pub fn relu_backward<T: Scalar>(mask: &Array2<bool>, dy: &Array2<T>) -> Array2<T> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(mask).for_each(|d, &m| {
        if !m {
            *d = T::zero();
        }
    });
    dx
}

fn softplus<T: Scalar>(x: T) -> T {
    // max(x, 0) + ln(1 + exp(-|x|)) avoids overflow on either tail.
    x.max(T::zero()) + (T::one() + (-x.abs()).exp()).ln()
}

/// Mish activation: x * tanh(softplus(x)).
pub fn mish<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| v * softplus(v).tanh())
}

/// Backward for mish given the forward *input*.
pub fn mish_backward<T: Scalar>(x: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
    let mut dx = Array2::<T>::zeros(x.dim());
    ndarray::Zip::from(&mut dx).and(x).and(dy).for_each(|d, &v, &g| {
        let t = softplus(v).tanh();
        let sig = T::one() / (T::one() + (-v).exp());
        *d = g * (t + v * (T::one() - t * t) * sig);
    });
    dx
}

/// Spatial softmax pooling: converts each channel of a `(C, H, W)` feature
/// map into the expected 2D coordinate of its softmax mass, preserving
/// spatial information through a `(C, 2)` output in [-1, 1].
#[derive(Debug, Clone)]
pub struct SpatialSoftmax {
    pub h: usize,
    pub w: usize,
}

pub struct SpatialSoftmaxCache<T> {
    probs: Array2<T>,
}

impl SpatialSoftmax {
    pub fn new(h: usize, w: usize) -> Self {
        Self { h, w }
    }

    fn grid_x<T: Scalar>(&self, i: usize) -> T {
        let x = i % self.w;
        if self.w > 1 {
            sc::<T>(2.0 * x as f64 / (self.w - 1) as f64 - 1.0)
        } else {
            T::zero()
        }
    }

    fn grid_y<T: Scalar>(&self, i: usize) -> T {
        let y = i / self.w;
        if self.h > 1 {
            sc::<T>(2.0 * y as f64 / (self.h - 1) as f64 - 1.0)
        } else {
            T::zero()
        }
    }

    /// Returns keypoints flattened as [x0, y0, x1, y1, ...].
    pub fn forward<T: Scalar>(&self, x: &Array3<T>) -> (Array1<T>, SpatialSoftmaxCache<T>) {
        let (c, h, w) = x.dim();
        debug_assert_eq!((h, w), (self.h, self.w));
        let hw = h * w;
        let flat = x.view().into_shape_with_order((c, hw)).unwrap();
        let mut probs = Array2::<T>::zeros((c, hw));
        let mut out = Array1::<T>::zeros(2 * c);
        for ci in 0..c {
            let row = flat.row(ci);
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for (pi, v) in probs.row_mut(ci).iter_mut().zip(row.iter()) {
                let e = (*v - max).exp();
                *pi = e;
                denom += e;
            }
            let mut kx = T::zero();
            let mut ky = T::zero();
            for (i, pi) in probs.row_mut(ci).iter_mut().enumerate() {
                *pi /= denom;
                kx += *pi * self.grid_x::<T>(i);
                ky += *pi * self.grid_y::<T>(i);
            }
            out[2 * ci] = kx;
            out[2 * ci + 1] = ky;
        }
        (out, SpatialSoftmaxCache { probs })
    }

    pub fn backward<T: Scalar>(&self, cache: &SpatialSoftmaxCache<T>, dout: &Array1<T>) -> Array3<T> {
        let (c, hw) = cache.probs.dim();
        let mut dflat = Array2::<T>::zeros((c, hw));
        for ci in 0..c {
            let (dkx, dky) = (dout[2 * ci], dout[2 * ci + 1]);
            let p = cache.probs.row(ci);
            let mut expect_u = T::zero();
            for (i, pv) in p.iter().enumerate() {
                expect_u += *pv * (dkx * self.grid_x::<T>(i) + dky * self.grid_y::<T>(i));
            }
            for (i, dv) in dflat.row_mut(ci).iter_mut().enumerate() {
                let u = dkx * self.grid_x::<T>(i) + dky * self.grid_y::<T>(i);
                *dv = p[i] * (u - expect_u);
            }
        }
        dflat.into_shape_with_order((c, self.h, self.w)).unwrap()
    }
}

/// Sinusoidal position embedding of a diffusion iteration index; `dim` must
/// be even. Matches the usual [sin(k w_i) .. cos(k w_i)] layout with
/// log-spaced frequencies.
pub fn sinusoidal_embedding<T: Scalar>(k: usize, dim: usize) -> Array1<T> {
    debug_assert!(dim >= 2 && dim % 2 == 0);
    let half = dim / 2;
    let mut out = Array1::<T>::zeros(dim);
    let denom = (half.max(2) - 1) as f64;
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / denom).exp();
        let angle = k as f64 * freq;
        out[i] = sc(angle.sin());
        out[half + i] = sc(angle.cos());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn relu_masks_negatives() {
        let x = arr2(&[[1.0f64, -2.0], [0.0, 3.0]]);
        let (y, mask) = relu(&x);
        assert_eq!(y, arr2(&[[1.0, 0.0], [0.0, 3.0]]));
        let dy = arr2(&[[5.0, 5.0], [5.0, 5.0]]);
        let dx = relu_backward(&mask, &dy);
        assert_eq!(dx, arr2(&[[5.0, 0.0], [0.0, 5.0]]));
    }

    #[test]
    fn mish_values() {
        // mish(0) = 0; mish(large) ~ identity.
        let x = arr2(&[[0.0f64, 10.0]]);
        let y = mish(&x);
        assert!(y[[0, 0]].abs() < 1e-12);
        assert!((y[[0, 1]] - 10.0).abs() < 1e-3);
    }

    #[test]
    fn group_fit() {
        assert_eq!(fit_groups(16, 8), 8);
        assert_eq!(fit_groups(12, 8), 6);
        assert_eq!(fit_groups(7, 8), 7);
        assert_eq!(fit_groups(2, 8), 2);
    }

    #[test]
    fn spatial_softmax_peak_location() {
        // A strong peak at a known pixel should put the keypoint close to it.
        let mut x = ndarray::Array3::<f64>::zeros((1, 5, 5));
        x[[0, 4, 0]] = 50.0;
        let ss = SpatialSoftmax::new(5, 5);
        let (out, _) = ss.forward(&x);
        assert!((out[0] - (-1.0)).abs() < 1e-6); // x = col 0
        assert!((out[1] - 1.0).abs() < 1e-6); // y = row 4
    }

    #[test]
    fn sinusoidal_embedding_distinguishes_iterations() {
        let a = sinusoidal_embedding::<f64>(1, 16);
        let b = sinusoidal_embedding::<f64>(1000, 16);
        assert_eq!(a.len(), 16);
        assert!((&a - &b).mapv(f64::abs).sum() > 1e-3);
    }
}
