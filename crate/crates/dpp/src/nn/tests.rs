//! Finite-difference verification of every layer's backward pass (f64).

use ndarray::{Array1, Array2, Array3, ArrayD};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::*;

const REL_STEP: f64 = 1e-5;
const TOL: f64 = 1e-7;
const FLOOR: f64 = 1e-9;

fn rng() -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(42)
}

fn randn2(rng: &mut ChaCha12Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn randn3(rng: &mut ChaCha12Rng, c: usize, h: usize, w: usize) -> Array3<f64> {
    Array3::from_shape_fn((c, h, w), |_| rng.random_range(-1.0..1.0))
}

/// Deterministic linear functional of an output tensor, used as the loss so
/// that dL/dy is a known constant tensor.
fn probe2(shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(shape, |(i, j)| ((i * 31 + j * 17) % 23) as f64 / 11.0 - 1.0)
}

fn probe1(len: usize) -> Array1<f64> {
    Array1::from_shape_fn(len, |i| ((i * 13) % 19) as f64 / 9.0 - 1.0)
}

fn assert_param_grads<F>(params: &mut Params<f64>, analytic: &GradStore<f64>, loss: F)
where
    F: FnMut(&Params<f64>) -> f64,
{
    let numeric = central_difference_grads(params, loss, REL_STEP, 24);
    let err = max_relative_error(analytic, &numeric, FLOOR);
    assert!(err < TOL, "parameter gradient mismatch: max rel err {err}");
}

fn assert_input_grad_2d<F>(x: &Array2<f64>, dx: &Array2<f64>, mut loss: F)
where
    F: FnMut(&Array2<f64>) -> f64,
{
    let mut worst = 0.0f64;
    let n = x.len().min(32);
    let stride = (x.len() / n).max(1);
    for idx in (0..x.len()).step_by(stride) {
        let (i, j) = (idx / x.ncols(), idx % x.ncols());
        let orig = x[[i, j]];
        let h = REL_STEP * orig.abs().max(1.0);
        let mut xp = x.clone();
        xp[[i, j]] = orig + h;
        let up = loss(&xp);
        xp[[i, j]] = orig - h;
        let down = loss(&xp);
        let num = (up - down) / (2.0 * h);
        let ana = dx[[i, j]];
        let denom = ana.abs().max(num.abs()).max(FLOOR);
        worst = worst.max((ana - num).abs() / denom);
    }
    assert!(worst < TOL, "input gradient mismatch: max rel err {worst}");
}

#[test]
fn linear_gradients() {
    let mut r = rng();
    let mut params = Params::<f64>::new();
    let layer = Linear::new(&mut params, &mut r, "fc", 7, 5);
    let x = probe1(7).mapv(|v| v * 0.7);
    let dy = probe1(5);

    let loss = |p: &Params<f64>| layer.forward(p, &x).dot(&dy);
    let mut grads = GradStore::zeros_like(&params);
    let _ = layer.forward(&params, &x);
    let dx = layer.backward(&params, &x, &dy, &mut grads);
    assert_param_grads(&mut params, &grads, loss);

    // Input gradient via 1D probe.
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let h = REL_STEP;
        let mut xp = x.clone();
        xp[i] += h;
        let up = layer.forward(&params, &xp).dot(&dy);
        xp[i] -= 2.0 * h;
        let down = layer.forward(&params, &xp).dot(&dy);
        let num = (up - down) / (2.0 * h);
        let denom = dx[i].abs().max(num.abs()).max(FLOOR);
        worst = worst.max((dx[i] - num).abs() / denom);
    }
    assert!(worst < TOL, "linear input grad err {worst}");
}

#[test]
fn conv1d_gradients() {
    for (cin, cout, k, stride, pad, l) in [(3, 4, 5, 1, 2, 12), (4, 6, 3, 2, 1, 10)] {
        let mut r = rng();
        let mut params = Params::<f64>::new();
        let layer = Conv1d::new(&mut params, &mut r, "c", cin, cout, k, stride, pad);
        let x = randn2(&mut r, cin, l);
        let dy = probe2((cout, layer.l_out(l)));

        let loss = |p: &Params<f64>| (&layer.forward(p, &x).0 * &dy).sum();
        let (_, cache) = layer.forward(&params, &x);
        let mut grads = GradStore::zeros_like(&params);
        let dx = layer.backward(&params, &cache, &dy, &mut grads);
        assert_param_grads(&mut params, &grads, loss);
        assert_input_grad_2d(&x, &dx, |xv| (&layer.forward(&params, xv).0 * &dy).sum());
    }
}

#[test]
fn conv_transpose1d_gradients() {
    let mut r = rng();
    let mut params = Params::<f64>::new();
    let layer = ConvTranspose1d::new(&mut params, &mut r, "ct", 3, 5, 4, 2, 1);
    let x = randn2(&mut r, 3, 6);
    assert_eq!(layer.l_out(6), 12);
    let dy = probe2((5, 12));

    let loss = |p: &Params<f64>| (&layer.forward(p, &x).0 * &dy).sum();
    let (_, cache) = layer.forward(&params, &x);
    let mut grads = GradStore::zeros_like(&params);
    let dx = layer.backward(&params, &cache, &dy, &mut grads);
    assert_param_grads(&mut params, &grads, loss);
    assert_input_grad_2d(&x, &dx, |xv| (&layer.forward(&params, xv).0 * &dy).sum());
}

#[test]
fn conv2d_gradients() {
    for (cin, cout, k, stride, pad, side) in [(2, 3, 3, 1, 1, 6), (1, 4, 7, 2, 3, 9)] {
        let mut r = rng();
        let mut params = Params::<f64>::new();
        let layer = Conv2d::new(&mut params, &mut r, "c2", cin, cout, k, stride, pad);
        let x = randn3(&mut r, cin, side, side);
        let os = layer.out_side(side);
        let dy = Array3::from_shape_fn((cout, os, os), |(a, b, c)| {
            ((a * 7 + b * 5 + c * 3) % 11) as f64 / 7.0 - 0.5
        });

        let loss = |p: &Params<f64>| (&layer.forward(p, &x).0 * &dy).sum();
        let (_, cache) = layer.forward(&params, &x);
        let mut grads = GradStore::zeros_like(&params);
        let dx = layer.backward(&params, &cache, &dy, &mut grads);
        assert_param_grads(&mut params, &grads, loss);

        // Input grad, spot-checked.
        let mut worst = 0.0f64;
        for idx in (0..x.len()).step_by((x.len() / 24).max(1)) {
            let c = idx / (side * side);
            let yy = (idx / side) % side;
            let xx = idx % side;
            let h = REL_STEP;
            let mut xp = x.clone();
            xp[[c, yy, xx]] += h;
            let up = (&layer.forward(&params, &xp).0 * &dy).sum();
            xp[[c, yy, xx]] -= 2.0 * h;
            let down = (&layer.forward(&params, &xp).0 * &dy).sum();
            let num = (up - down) / (2.0 * h);
            let ana = dx[[c, yy, xx]];
            let denom = ana.abs().max(num.abs()).max(FLOOR);
            worst = worst.max((ana - num).abs() / denom);
        }
        assert!(worst < TOL, "conv2d input grad err {worst}");
    }
}

#[test]
fn maxpool_gradients() {
    let mut r = rng();
    let pool = MaxPool2d::new(3, 2, 1);
    let x = randn3(&mut r, 2, 8, 8);
    let os = pool.out_side(8);
    let dy = Array3::from_shape_fn((2, os, os), |(a, b, c)| (a + b + c) as f64 * 0.3 + 0.1);
    let (_, cache) = pool.forward(&x);
    let dx = pool.backward(&cache, &dy);

    let mut worst = 0.0f64;
    for idx in (0..x.len()).step_by(3) {
        let c = idx / 64;
        let yy = (idx / 8) % 8;
        let xx = idx % 8;
        // Small step: max() is piecewise linear, keep away from tie points.
        let h = 1e-7;
        let mut xp = x.clone();
        xp[[c, yy, xx]] += h;
        let up = (&pool.forward(&xp).0 * &dy).sum();
        xp[[c, yy, xx]] -= 2.0 * h;
        let down = (&pool.forward(&xp).0 * &dy).sum();
        let num = (up - down) / (2.0 * h);
        let ana = dx[[c, yy, xx]];
        worst = worst.max((ana - num).abs() / ana.abs().max(num.abs()).max(1e-3));
    }
    assert!(worst < 1e-4, "maxpool input grad err {worst}");
}

#[test]
fn group_norm_gradients() {
    let mut r = rng();
    let mut params = Params::<f64>::new();
    let layer = GroupNorm::new(&mut params, "gn", 6, 3);
    let x = randn2(&mut r, 6, 5);
    let dy = probe2((6, 5));

    let loss = |p: &Params<f64>| (&layer.forward(p, &x).0 * &dy).sum();
    let (_, cache) = layer.forward(&params, &x);
    let mut grads = GradStore::zeros_like(&params);
    let dx = layer.backward(&params, &cache, &dy, &mut grads);
    assert_param_grads(&mut params, &grads, loss);
    assert_input_grad_2d(&x, &dx, |xv| (&layer.forward(&params, xv).0 * &dy).sum());
}

#[test]
fn mish_gradient() {
    let mut r = rng();
    let x = randn2(&mut r, 4, 6).mapv(|v| v * 2.0);
    let dy = probe2((4, 6));
    let dx = mish_backward(&x, &dy);
    assert_input_grad_2d(&x, &dx, |xv| (&mish(xv) * &dy).sum());
}

#[test]
fn spatial_softmax_gradient() {
    let mut r = rng();
    let ss = SpatialSoftmax::new(4, 5);
    let x = randn3(&mut r, 3, 4, 5).mapv(|v| v * 2.0);
    let dout = probe1(6);
    let (_, cache) = ss.forward(&x);
    let dx = ss.backward(&cache, &dout);

    let mut worst = 0.0f64;
    for idx in 0..x.len() {
        let c = idx / 20;
        let yy = (idx / 5) % 4;
        let xx = idx % 5;
        let h = REL_STEP;
        let mut xp = x.clone();
        xp[[c, yy, xx]] += h;
        let up = ss.forward(&xp).0.dot(&dout);
        xp[[c, yy, xx]] -= 2.0 * h;
        let down = ss.forward(&xp).0.dot(&dout);
        let num = (up - down) / (2.0 * h);
        let ana = dx[[c, yy, xx]];
        worst = worst.max((ana - num).abs() / ana.abs().max(num.abs()).max(FLOOR));
    }
    assert!(worst < TOL, "spatial softmax grad err {worst}");
}

#[test]
fn gradstore_merge_is_elementwise_sum() {
    let mut params = Params::<f64>::new();
    let id = params.add("p", ArrayD::from_elem(vec![3], 0.0));
    let mut a = GradStore::zeros_like(&params);
    let mut b = GradStore::zeros_like(&params);
    a.get_mut(id).fill(1.5);
    b.get_mut(id).fill(2.0);
    a.merge(&b);
    for v in a.get(id).iter() {
        assert_eq!(*v, 3.5);
    }
}
