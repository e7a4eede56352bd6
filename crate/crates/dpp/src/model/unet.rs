//! FiLM-conditioned 1D temporal convolutional U-Net: predicts the noise
//! component of a noisy action sequence, conditioned on the observation
//! embedding plus a sinusoidal iteration embedding. Fully convolutional along
//! the sequence axis, so the path length may vary between calls (it must be
//! divisible by the downsampling factor).

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

use crate::nn::{
    mish, mish_backward, sinusoidal_embedding, Conv1d, Conv1dCache, ConvTranspose1d,
    ConvTranspose1dCache, GradStore, GroupNorm, GroupNormCache, Linear, Params, Scalar,
};

use super::ModelConfig;

fn mish1<T: Scalar>(x: &Array1<T>) -> Array1<T> {
    let x2 = x.clone().insert_axis(Axis(1));
    mish(&x2).remove_axis(Axis(1))
}

fn mish1_backward<T: Scalar>(x: &Array1<T>, dy: &Array1<T>) -> Array1<T> {
    let x2 = x.clone().insert_axis(Axis(1));
    let dy2 = dy.clone().insert_axis(Axis(1));
    mish_backward(&x2, &dy2).remove_axis(Axis(1))
}

/// Residual temporal block: two conv/norm/mish stacks with a per-channel
/// scale/bias from the conditioning vector applied between them.
struct CondResBlock {
    conv1: Conv1d,
    gn1: GroupNorm,
    conv2: Conv1d,
    gn2: GroupNorm,
    film: Linear,
    shortcut: Option<Conv1d>,
    c_out: usize,
}

struct CondResBlockCache<T> {
    c1: Conv1dCache<T>,
    g1: GroupNormCache<T>,
    mish1_in: Array2<T>,
    h_pre_film: Array2<T>,
    scale: Array1<T>,
    c2: Conv1dCache<T>,
    g2: GroupNormCache<T>,
    mish2_in: Array2<T>,
    sc: Option<Conv1dCache<T>>,
}

impl CondResBlock {
    fn new<T: Scalar, R: Rng>(
        params: &mut Params<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        groups: usize,
        cond_dim: usize,
    ) -> Self {
        let pad = kernel / 2;
        let conv1 = Conv1d::new(params, rng, &format!("{name}.conv1"), c_in, c_out, kernel, 1, pad);
        let gn1 = GroupNorm::new(params, &format!("{name}.gn1"), c_out, groups);
        let conv2 = Conv1d::new(params, rng, &format!("{name}.conv2"), c_out, c_out, kernel, 1, pad);
        let gn2 = GroupNorm::new(params, &format!("{name}.gn2"), c_out, groups);
        let film = Linear::new(params, rng, &format!("{name}.film"), cond_dim, 2 * c_out);
        let shortcut = (c_in != c_out)
            .then(|| Conv1d::new(params, rng, &format!("{name}.res"), c_in, c_out, 1, 1, 0));
        Self { conv1, gn1, conv2, gn2, film, shortcut, c_out }
    }

    /// `cond_mish` is mish(cond), shared across blocks.
    fn forward<T: Scalar>(
        &self,
        params: &Params<T>,
        x: &Array2<T>,
        cond_mish: &Array1<T>,
    ) -> (Array2<T>, CondResBlockCache<T>) {
        let (y1, c1) = self.conv1.forward(params, x);
        let (y2, g1) = self.gn1.forward(params, &y1);
        let h = mish(&y2);

        let film_out = self.film.forward(params, cond_mish);
        let scale = film_out.slice(s![..self.c_out]).to_owned();
        let bias = film_out.slice(s![self.c_out..]).to_owned();
        let mut filmed = h.clone();
        for (ci, mut row) in filmed.axis_iter_mut(Axis(0)).enumerate() {
            let (sv, bv) = (scale[ci], bias[ci]);
            row.mapv_inplace(|v| v * sv + bv);
        }

        let (y3, c2) = self.conv2.forward(params, &filmed);
        let (y4, g2) = self.gn2.forward(params, &y3);
        let mut out = mish(&y4);

        let sc = match &self.shortcut {
            Some(conv) => {
                let (skip, scc) = conv.forward(params, x);
                out += &skip;
                Some(scc)
            }
            None => {
                out += x;
                None
            }
        };
        (out, CondResBlockCache { c1, g1, mish1_in: y2, h_pre_film: h, scale, c2, g2, mish2_in: y4, sc })
    }

    /// Returns (dx, dcond_mish_contribution). `cond_mish` must be the same
    /// vector the forward pass received.
    fn backward<T: Scalar>(
        &self,
        params: &Params<T>,
        cache: &CondResBlockCache<T>,
        dy: &Array2<T>,
        cond_mish: &Array1<T>,
        grads: &mut GradStore<T>,
    ) -> (Array2<T>, Array1<T>) {
        // Main branch.
        let dmish2 = mish_backward(&cache.mish2_in, dy);
        let dg2 = self.gn2.backward(params, &cache.g2, &dmish2, grads);
        let dfilmed = self.conv2.backward(params, &cache.c2, &dg2, grads);

        // FiLM: filmed = scale_c * h + bias_c.
        let mut dh = dfilmed.clone();
        for (ci, mut row) in dh.axis_iter_mut(Axis(0)).enumerate() {
            let sv = cache.scale[ci];
            row.mapv_inplace(|v| v * sv);
        }
        let mut dfilm_out = Array1::<T>::zeros(2 * self.c_out);
        for ci in 0..self.c_out {
            let mut dscale = T::zero();
            let mut dbias = T::zero();
            for li in 0..dfilmed.ncols() {
                dscale += dfilmed[[ci, li]] * cache.h_pre_film[[ci, li]];
                dbias += dfilmed[[ci, li]];
            }
            dfilm_out[ci] = dscale;
            dfilm_out[self.c_out + ci] = dbias;
        }
        let dcond_mish = self.film.backward(params, cond_mish, &dfilm_out, grads);
        let dmish1 = mish_backward(&cache.mish1_in, &dh);
        let dg1 = self.gn1.backward(params, &cache.g1, &dmish1, grads);
        let mut dx = self.conv1.backward(params, &cache.c1, &dg1, grads);

        match (&self.shortcut, &cache.sc) {
            (Some(conv), Some(scc)) => {
                let dskip = conv.backward(params, scc, dy, grads);
                dx += &dskip;
            }
            (None, None) => dx += dy,
            _ => unreachable!(),
        }
        (dx, dcond_mish)
    }
}

/// One downsampling level: two conditional blocks plus an optional strided conv.
struct DownLevel {
    b1: CondResBlock,
    b2: CondResBlock,
    down: Option<Conv1d>,
}

struct UpLevel {
    b1: CondResBlock,
    b2: CondResBlock,
    up: ConvTranspose1d,
}

pub struct TemporalUnet {
    temb_l1: Linear,
    temb_l2: Linear,
    downs: Vec<DownLevel>,
    mid1: CondResBlock,
    mid2: CondResBlock,
    ups: Vec<UpLevel>,
    final_conv: Conv1d,
    final_gn: GroupNorm,
    final_out: Conv1d,
    timestep_dim: usize,
    cond_dim: usize,
    downsample_factor: usize,
}

pub struct UnetCache<T> {
    temb_sin: Array1<T>,
    temb_mid: Array1<T>,
    cond: Array1<T>,
    cond_mish_in: Array1<T>,
    downs: Vec<(CondResBlockCache<T>, CondResBlockCache<T>, Option<Conv1dCache<T>>)>,
    mid1: CondResBlockCache<T>,
    mid2: CondResBlockCache<T>,
    ups: Vec<(CondResBlockCache<T>, CondResBlockCache<T>, ConvTranspose1dCache<T>)>,
    final_c: Conv1dCache<T>,
    final_g: GroupNormCache<T>,
    final_mish_in: Array2<T>,
    final_oc: Conv1dCache<T>,
}

impl TemporalUnet {
    pub fn new<T: Scalar, R: Rng>(params: &mut Params<T>, rng: &mut R, cfg: &ModelConfig) -> Self {
        let ted = cfg.timestep_embed_dim;
        let cond_dim = cfg.cond_dim();
        let k = cfg.kernel_size;
        let g = cfg.groups;
        let temb_l1 = Linear::new(params, rng, "unet.temb1", ted, 4 * ted);
        let temb_l2 = Linear::new(params, rng, "unet.temb2", 4 * ted, ted);

        let chans = &cfg.unet_channels;
        let levels = chans.len();
        let mut in_out = Vec::with_capacity(levels);
        let mut prev = 2usize;
        for &c in chans {
            in_out.push((prev, c));
            prev = c;
        }

        let mut downs = Vec::with_capacity(levels);
        for (i, &(cin, cout)) in in_out.iter().enumerate() {
            let b1 = CondResBlock::new(params, rng, &format!("unet.d{i}.b1"), cin, cout, k, g, cond_dim);
            let b2 = CondResBlock::new(params, rng, &format!("unet.d{i}.b2"), cout, cout, k, g, cond_dim);
            let down = (i + 1 < levels)
                .then(|| Conv1d::new(params, rng, &format!("unet.d{i}.down"), cout, cout, 3, 2, 1));
            downs.push(DownLevel { b1, b2, down });
        }

        let cmid = *chans.last().unwrap();
        let mid1 = CondResBlock::new(params, rng, "unet.mid1", cmid, cmid, k, g, cond_dim);
        let mid2 = CondResBlock::new(params, rng, "unet.mid2", cmid, cmid, k, g, cond_dim);

        let mut ups = Vec::with_capacity(levels - 1);
        for (j, &(cin, cout)) in in_out.iter().skip(1).rev().enumerate() {
            let b1 = CondResBlock::new(params, rng, &format!("unet.u{j}.b1"), cout * 2, cin, k, g, cond_dim);
            let b2 = CondResBlock::new(params, rng, &format!("unet.u{j}.b2"), cin, cin, k, g, cond_dim);
            let up = ConvTranspose1d::new(params, rng, &format!("unet.u{j}.up"), cin, cin, 4, 2, 1);
            ups.push(UpLevel { b1, b2, up });
        }

        let c0 = chans[0];
        let final_conv = Conv1d::new(params, rng, "unet.final", c0, c0, k, 1, k / 2);
        let final_gn = GroupNorm::new(params, "unet.final_gn", c0, g);
        let final_out = Conv1d::new(params, rng, "unet.out", c0, 2, 1, 1, 0);

        Self {
            temb_l1,
            temb_l2,
            downs,
            mid1,
            mid2,
            ups,
            final_conv,
            final_gn,
            final_out,
            timestep_dim: ted,
            cond_dim,
            downsample_factor: 1 << (levels - 1),
        }
    }

    pub fn downsample_factor(&self) -> usize {
        self.downsample_factor
    }

    /// Forward pass: noisy action `(2, L)`, iteration index, observation
    /// embedding. Returns predicted noise `(2, L)`.
    pub fn forward<T: Scalar>(
        &self,
        params: &Params<T>,
        x: &Array2<T>,
        k: usize,
        obs: &Array1<T>,
    ) -> (Array2<T>, UnetCache<T>) {
        debug_assert_eq!(x.nrows(), 2);
        debug_assert_eq!(x.ncols() % self.downsample_factor, 0);

        // Conditioning vector: MLP(sinusoidal(k)) ++ obs, then mish once for
        // all FiLM layers.
        let temb_sin = sinusoidal_embedding::<T>(k, self.timestep_dim);
        let temb_mid = self.temb_l1.forward(params, &temb_sin);
        let temb_act = mish1(&temb_mid);
        let temb = self.temb_l2.forward(params, &temb_act);
        let mut cond = Array1::<T>::zeros(self.cond_dim);
        cond.slice_mut(s![..self.timestep_dim]).assign(&temb);
        cond.slice_mut(s![self.timestep_dim..]).assign(obs);
        let cond_mish = mish1(&cond);

        let mut cur = x.clone();
        let mut skips: Vec<Array2<T>> = Vec::with_capacity(self.downs.len());
        let mut down_caches = Vec::with_capacity(self.downs.len());
        for (i, level) in self.downs.iter().enumerate() {
            let (h1, c1) = level.b1.forward(params, &cur, &cond_mish);
            let (h2, c2) = level.b2.forward(params, &h1, &cond_mish);
            if i > 0 {
                skips.push(h2.clone());
            }
            let (next, dc) = match &level.down {
                Some(conv) => {
                    let (d, dc) = conv.forward(params, &h2);
                    (d, Some(dc))
                }
                None => (h2, None),
            };
            down_caches.push((c1, c2, dc));
            cur = next;
        }

        let (m1, mc1) = self.mid1.forward(params, &cur, &cond_mish);
        let (m2, mc2) = self.mid2.forward(params, &m1, &cond_mish);
        cur = m2;

        let mut up_caches = Vec::with_capacity(self.ups.len());
        for level in &self.ups {
            let skip = skips.pop().expect("skip per up level");
            let stacked = ndarray::concatenate(Axis(0), &[cur.view(), skip.view()]).unwrap();
            let (h1, c1) = level.b1.forward(params, &stacked, &cond_mish);
            let (h2, c2) = level.b2.forward(params, &h1, &cond_mish);
            let (upd, uc) = level.up.forward(params, &h2);
            up_caches.push((c1, c2, uc));
            cur = upd;
        }

        let (f1, final_c) = self.final_conv.forward(params, &cur);
        let (f2, final_g) = self.final_gn.forward(params, &f1);
        let f3 = mish(&f2);
        let (out, final_oc) = self.final_out.forward(params, &f3);

        (
            out,
            UnetCache {
                temb_sin,
                temb_mid,
                cond,
                cond_mish_in: cond_mish,
                downs: down_caches,
                mid1: mc1,
                mid2: mc2,
                ups: up_caches,
                final_c,
                final_g,
                final_mish_in: f2,
                final_oc,
            },
        )
    }

    /// Backward pass; returns the gradient w.r.t. the observation embedding.
    /// The gradient w.r.t. the noisy action input is not needed by training.
    pub fn backward<T: Scalar>(
        &self,
        params: &Params<T>,
        cache: &UnetCache<T>,
        dout: &Array2<T>,
        grads: &mut GradStore<T>,
    ) -> Array1<T> {
        let mut dcond_mish = Array1::<T>::zeros(self.cond_dim);

        let df3 = self.final_out.backward(params, &cache.final_oc, dout, grads);
        let df2 = mish_backward(&cache.final_mish_in, &df3);
        let df1 = self.final_gn.backward(params, &cache.final_g, &df2, grads);
        let mut d = self.final_conv.backward(params, &cache.final_c, &df1, grads);

        let mut dskips: Vec<Array2<T>> = Vec::new();
        for (level, (c1, c2, uc)) in self.ups.iter().zip(cache.ups.iter()).rev() {
            let dh2 = level.up.backward(params, uc, &d, grads);
            let (dh1, dc2) = level.b2.backward(params, c2, &dh2, grads);
            dcond_mish += &dc2;
            let (dstacked, dc1) = level.b1.backward(params, c1, &dh1, grads);
            dcond_mish += &dc1;
            let main_rows = dstacked.nrows() / 2;
            d = dstacked.slice(s![..main_rows, ..]).to_owned();
            dskips.push(dstacked.slice(s![main_rows.., ..]).to_owned());
        }

        let (dm1, dcm2) = self.mid2.backward(params, &cache.mid2, &d, grads);
        dcond_mish += &dcm2;
        let (dmid_in, dcm1) = self.mid1.backward(params, &cache.mid1, &dm1, grads);
        dcond_mish += &dcm1;
        d = dmid_in;

        // dskips were pushed in reverse up order; down level i>0 consumes the
        // skip produced at that level.
        for (i, (level, (c1, c2, dc))) in
            self.downs.iter().zip(cache.downs.iter()).enumerate().rev()
        {
            let mut dh2 = match (&level.down, dc) {
                (Some(conv), Some(dcache)) => conv.backward(params, dcache, &d, grads),
                (None, None) => d,
                _ => unreachable!(),
            };
            if i > 0 {
                let dskip = dskips.remove(0);
                dh2 += &dskip;
            }
            let (dh1, dc2) = level.b2.backward(params, c2, &dh2, grads);
            dcond_mish += &dc2;
            let (dx, dc1) = level.b1.backward(params, c1, &dh1, grads);
            dcond_mish += &dc1;
            d = dx;
        }

        // Through the shared cond mish, then split into timestep MLP and obs.
        let dcond = mish1_backward(&cache.cond_mish_in, &dcond_mish);
        let dtemb = dcond.slice(s![..self.timestep_dim]).to_owned();
        let dobs = dcond.slice(s![self.timestep_dim..]).to_owned();

        let dtemb_act = self.temb_l2.backward(params, &mish1(&cache.temb_mid), &dtemb, grads);
        let dtemb_mid = mish1_backward(&cache.temb_mid, &dtemb_act);
        let _ = self.temb_l1.backward(params, &cache.temb_sin, &dtemb_mid, grads);

        dobs
    }
}
