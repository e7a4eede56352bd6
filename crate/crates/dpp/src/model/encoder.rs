//! Residual visual encoder: an 18-layer convolutional topology (stem + four
//! stages of two basic blocks) with group normalization, closed by a 1x1
//! keypoint head and spatial-softmax pooling to expected 2D coordinates.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;

use crate::nn::{
    relu, relu_backward, Conv2d, Conv2dCache, GradStore, GroupNorm, GroupNormCache, MaxPool2d,
    MaxPool2dCache, Params, Scalar, SpatialSoftmax, SpatialSoftmaxCache,
};

use super::ModelConfig;

fn to2<T: Scalar>(x: Array3<T>) -> (Array2<T>, (usize, usize)) {
    let (c, h, w) = x.dim();
    (x.into_shape_with_order((c, h * w)).unwrap(), (h, w))
}

fn to3<T: Scalar>(x: Array2<T>, hw: (usize, usize)) -> Array3<T> {
    let c = x.nrows();
    x.into_shape_with_order((c, hw.0, hw.1)).unwrap()
}

struct BasicBlock {
    conv1: Conv2d,
    gn1: GroupNorm,
    conv2: Conv2d,
    gn2: GroupNorm,
    shortcut: Option<(Conv2d, GroupNorm)>,
}

pub struct BlockCache<T> {
    c1: Conv2dCache<T>,
    g1: GroupNormCache<T>,
    m1: Array2<bool>,
    c2: Conv2dCache<T>,
    g2: GroupNormCache<T>,
    sc: Option<(Conv2dCache<T>, GroupNormCache<T>)>,
    m_out: Array2<bool>,
    in_hw: (usize, usize),
    out_hw: (usize, usize),
}

impl BasicBlock {
    fn new<T: Scalar, R: Rng>(
        params: &mut Params<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        groups: usize,
    ) -> Self {
        let conv1 = Conv2d::new(params, rng, &format!("{name}.conv1"), c_in, c_out, 3, stride, 1);
        let gn1 = GroupNorm::new(params, &format!("{name}.gn1"), c_out, groups);
        let conv2 = Conv2d::new(params, rng, &format!("{name}.conv2"), c_out, c_out, 3, 1, 1);
        let gn2 = GroupNorm::new(params, &format!("{name}.gn2"), c_out, groups);
        let shortcut = if stride != 1 || c_in != c_out {
            let c = Conv2d::new(params, rng, &format!("{name}.down"), c_in, c_out, 1, stride, 0);
            let g = GroupNorm::new(params, &format!("{name}.down_gn"), c_out, groups);
            Some((c, g))
        } else {
            None
        };
        Self { conv1, gn1, conv2, gn2, shortcut }
    }

    fn forward<T: Scalar>(&self, params: &Params<T>, x: &Array3<T>) -> (Array3<T>, BlockCache<T>) {
        let in_hw = (x.dim().1, x.dim().2);
        let (y1, c1) = self.conv1.forward(params, x);
        let (y1f, out_hw) = to2(y1);
        let (y2, g1) = self.gn1.forward(params, &y1f);
        let (y3, m1) = relu(&y2);
        let (y4, c2) = self.conv2.forward(params, &to3(y3, out_hw));
        let (y4f, _) = to2(y4);
        let (y5, g2) = self.gn2.forward(params, &y4f);

        let (skip, sc) = match &self.shortcut {
            Some((conv, gn)) => {
                let (s1, scc) = conv.forward(params, x);
                let (s1f, _) = to2(s1);
                let (s2, sgn) = gn.forward(params, &s1f);
                (s2, Some((scc, sgn)))
            }
            None => (x.clone().into_shape_with_order((x.dim().0, in_hw.0 * in_hw.1)).unwrap(), None),
        };

        let (out, m_out) = relu(&(y5 + skip));
        (to3(out, out_hw), BlockCache { c1, g1, m1, c2, g2, sc, m_out, in_hw, out_hw })
    }

    fn backward<T: Scalar>(
        &self,
        params: &Params<T>,
        cache: &BlockCache<T>,
        dy: &Array3<T>,
        grads: &mut GradStore<T>,
    ) -> Array3<T> {
        let (dyf, _) = to2(dy.clone());
        let dsum = relu_backward(&cache.m_out, &dyf);

        // Main branch.
        let dg2 = self.gn2.backward(params, &cache.g2, &dsum, grads);
        let dconv2 = self.conv2.backward(params, &cache.c2, &to3(dg2, cache.out_hw), grads);
        let (dconv2f, _) = to2(dconv2);
        let dm1 = relu_backward(&cache.m1, &dconv2f);
        let dg1 = self.gn1.backward(params, &cache.g1, &dm1, grads);
        let mut dx = self.conv1.backward(params, &cache.c1, &to3(dg1, cache.out_hw), grads);

        // Shortcut branch.
        match (&self.shortcut, &cache.sc) {
            (Some((conv, gn)), Some((scc, sgn))) => {
                let ds = gn.backward(params, sgn, &dsum, grads);
                let dskip = conv.backward(params, scc, &to3(ds, cache.out_hw), grads);
                dx += &dskip;
            }
            (None, None) => {
                dx += &to3(dsum, cache.in_hw);
            }
            _ => unreachable!("shortcut cache matches layer structure"),
        }
        dx
    }
}

/// The full visual encoder. Produces `2 * keypoints` features in [-1, 1].
pub struct VisualEncoder {
    stem: Conv2d,
    stem_gn: GroupNorm,
    stem_pool: Option<MaxPool2d>,
    blocks: Vec<BasicBlock>,
    head: Conv2d,
    softmax: SpatialSoftmax,
    input_resolution: usize,
}

pub struct EncoderCache<T> {
    stem_c: Conv2dCache<T>,
    stem_g: GroupNormCache<T>,
    stem_m: Array2<bool>,
    stem_hw: (usize, usize),
    pool_c: Option<MaxPool2dCache>,
    blocks: Vec<BlockCache<T>>,
    head_c: Conv2dCache<T>,
    ss_c: SpatialSoftmaxCache<T>,
}

impl VisualEncoder {
    pub fn new<T: Scalar, R: Rng>(params: &mut Params<T>, rng: &mut R, cfg: &ModelConfig) -> Self {
        let w = cfg.encoder_width;
        let stem = Conv2d::new(params, rng, "enc.stem", 1, w, 7, cfg.stem_stride, 3);
        let stem_gn = GroupNorm::new(params, "enc.stem_gn", w, cfg.groups);
        let stem_pool = cfg.stem_pool.then(|| MaxPool2d::new(3, 2, 1));

        let mut blocks = Vec::with_capacity(8);
        let widths = [w, 2 * w, 4 * w, 8 * w];
        let mut c_in = w;
        for (si, (&c_out, &stride)) in widths.iter().zip(cfg.stage_strides.iter()).enumerate() {
            for bi in 0..2 {
                let s = if bi == 0 { stride } else { 1 };
                blocks.push(BasicBlock::new(
                    params,
                    rng,
                    &format!("enc.s{si}b{bi}"),
                    c_in,
                    c_out,
                    s,
                    cfg.groups,
                ));
                c_in = c_out;
            }
        }

        let head = Conv2d::new(params, rng, "enc.head", 8 * w, cfg.keypoints, 1, 1, 0);
        let side = Self::feature_side(cfg);
        Self {
            stem,
            stem_gn,
            stem_pool,
            blocks,
            head,
            softmax: SpatialSoftmax::new(side, side),
            input_resolution: cfg.input_resolution,
        }
    }

    /// Spatial side length of the final feature map for a given config.
    pub fn feature_side(cfg: &ModelConfig) -> usize {
        let mut side = (cfg.input_resolution + 2 * 3 - 7) / cfg.stem_stride + 1;
        if cfg.stem_pool {
            side = (side + 2 - 3) / 2 + 1;
        }
        for &s in &cfg.stage_strides {
            side = (side + 2 - 3) / s + 1;
        }
        side
    }

    /// Visual feature vector `[x0, y0, x1, y1, ...]` for a map image scaled
    /// to [0, 1], shape `(R, R)`.
    pub fn forward<T: Scalar>(
        &self,
        params: &Params<T>,
        image: &Array2<T>,
    ) -> (Array1<T>, EncoderCache<T>) {
        let r = self.input_resolution;
        assert_eq!(image.dim(), (r, r), "encoder expects a {r}x{r} input image");
        let x = image.clone().into_shape_with_order((1, r, r)).unwrap();

        let (y, stem_c) = self.stem.forward(params, &x);
        let (yf, stem_hw) = to2(y);
        let (yg, stem_g) = self.stem_gn.forward(params, &yf);
        let (yr, stem_m) = relu(&yg);
        let mut cur = to3(yr, stem_hw);
        let pool_c = self.stem_pool.as_ref().map(|p| {
            let (pooled, pc) = p.forward(&cur);
            cur = pooled;
            pc
        });

        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, bc) = block.forward(params, &cur);
            block_caches.push(bc);
            cur = next;
        }

        let (feat, head_c) = self.head.forward(params, &cur);
        let (keypoints, ss_c) = self.softmax.forward(&feat);
        (
            keypoints,
            EncoderCache {
                stem_c,
                stem_g,
                stem_m,
                stem_hw,
                pool_c,
                blocks: block_caches,
                head_c,
                ss_c,
            },
        )
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &Params<T>,
        cache: &EncoderCache<T>,
        dkeypoints: &Array1<T>,
        grads: &mut GradStore<T>,
    ) {
        let dfeat = self.softmax.backward(&cache.ss_c, dkeypoints);
        let mut d = self.head.backward(params, &cache.head_c, &dfeat, grads);
        for (block, bc) in self.blocks.iter().zip(cache.blocks.iter()).rev() {
            d = block.backward(params, bc, &d, grads);
        }
        if let (Some(pool), Some(pc)) = (&self.stem_pool, &cache.pool_c) {
            d = pool.backward(pc, &d);
        }
        let (df, _) = to2(d);
        let dm = relu_backward(&cache.stem_m, &df);
        let dg = self.stem_gn.backward(params, &cache.stem_g, &dm, grads);
        // Gradient w.r.t. the input image is not needed.
        let _ = self.stem.backward(params, &cache.stem_c, &to3(dg, cache.stem_hw), grads);
    }
}
