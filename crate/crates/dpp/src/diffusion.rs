//! Model-agnostic denoising-diffusion machinery: the square-cosine noise
//! schedule, the closed-form forward (noising) process, the ancestral
//! reverse step, and endpoint inpainting.
//!
//! All randomness is injected by the caller, so every function here is pure
//! and replayable. Action sequences are `(path_len, 2)` arrays in normalized
//! coordinates; the generic scalar lets tests run in f64 while training and
//! inference run in f32.

use ndarray::{Array2, NdFloat};

use crate::error::{Error, Result};

/// Per-iteration diffusion coefficients for iterations 1..=K.
///
/// Vectors have length K+1 and are indexed by iteration; index 0 holds the
/// conventional boundary values (beta=0, alpha=1, alpha_bar=1, sigma=0).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    k_max: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.beta[k]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha[k]
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bar[k]
    }

    /// Reverse-step noise scale: sigma^2 = beta * (1 - alpha_bar[k-1]) / (1 - alpha_bar[k]).
    pub fn sigma(&self, k: usize) -> f64 {
        self.sigma[k]
    }
}

const COSINE_OFFSET: f64 = 0.008;
const BETA_MIN: f64 = 1e-8;
const BETA_MAX: f64 = 0.999;

/// Square-cosine schedule over `k_max` iterations.
///
/// alpha_bar follows f(k)/f(0) with f(k) = cos^2(((k/K + s)/(1 + s)) * pi/2),
/// s = 0.008; betas are the step ratios clipped to (1e-8, 0.999), and
/// alpha_bar is the running product of alpha = 1 - beta so the clip is
/// reflected consistently.
pub fn make_cosine_schedule(k_max: usize) -> Result<NoiseSchedule> {
    if k_max < 1 {
        return Err(Error::InvalidInput("schedule needs at least one iteration".into()));
    }
    let f = |k: f64| {
        let t = ((k / k_max as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)) * std::f64::consts::FRAC_PI_2;
        t.cos().powi(2)
    };
    let f0 = f(0.0);

    let mut beta = vec![0.0f64; k_max + 1];
    let mut alpha = vec![1.0f64; k_max + 1];
    let mut alpha_bar = vec![1.0f64; k_max + 1];
    let mut sigma = vec![0.0f64; k_max + 1];
    let mut prev_ratio = 1.0f64;
    for k in 1..=k_max {
        let ratio = f(k as f64) / f0;
        let raw = 1.0 - ratio / prev_ratio;
        beta[k] = raw.clamp(BETA_MIN, BETA_MAX);
        alpha[k] = 1.0 - beta[k];
        alpha_bar[k] = alpha_bar[k - 1] * alpha[k];
        sigma[k] = (beta[k] * (1.0 - alpha_bar[k - 1]) / (1.0 - alpha_bar[k])).sqrt();
        prev_ratio = ratio;
    }
    Ok(NoiseSchedule { k_max, beta, alpha, alpha_bar, sigma })
}

fn check_shapes<T: NdFloat>(a: &Array2<T>, b: &Array2<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "shape mismatch: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Closed-form marginal of the forward chain at iteration `k`:
/// sqrt(alpha_bar[k]) * a0 + sqrt(1 - alpha_bar[k]) * eps.
pub fn forward_diffuse<T: NdFloat>(
    a0: &Array2<T>,
    k: usize,
    eps: &Array2<T>,
    sched: &NoiseSchedule,
) -> Result<Array2<T>> {
    check_shapes(a0, eps)?;
    if k > sched.k_max() {
        return Err(Error::InvalidInput(format!("iteration {k} > K={}", sched.k_max())));
    }
    let ab = sched.alpha_bar(k);
    let w_signal = T::from(ab.sqrt()).unwrap();
    let w_noise = T::from((1.0 - ab).sqrt()).unwrap();
    Ok(a0.mapv(|v| v * w_signal) + eps.mapv(|v| v * w_noise))
}

/// One ancestral reverse step from iteration `k` to `k - 1`:
/// a_{k-1} = (a_k - beta/sqrt(1-alpha_bar) * eps_hat) / sqrt(alpha) + sigma * z,
/// with z forced to zero at the final step (k = 1).
pub fn denoise_step<T: NdFloat>(
    eps_hat: &Array2<T>,
    a_k: &Array2<T>,
    k: usize,
    sched: &NoiseSchedule,
    z: &Array2<T>,
) -> Result<Array2<T>> {
    if k == 0 {
        return Err(Error::InvalidInput("nothing to denoise at k = 0".into()));
    }
    if k > sched.k_max() {
        return Err(Error::InvalidInput(format!("iteration {k} > K={}", sched.k_max())));
    }
    check_shapes(eps_hat, a_k)?;
    check_shapes(a_k, z)?;
    let inv_sqrt_alpha = T::from(1.0 / sched.alpha(k).sqrt()).unwrap();
    let noise_coef = T::from(sched.beta(k) / (1.0 - sched.alpha_bar(k)).sqrt()).unwrap();
    let sigma = if k == 1 { T::zero() } else { T::from(sched.sigma(k)).unwrap() };
    let mut out = Array2::zeros(a_k.dim());
    ndarray::Zip::from(&mut out)
        .and(a_k)
        .and(eps_hat)
        .and(z)
        .for_each(|o, &a, &e, &zv| {
            *o = (a - noise_coef * e) * inv_sqrt_alpha + sigma * zv;
        });
    Ok(out)
}

/// Clamps the first and last rows of an action sequence to the normalized
/// start/goal; the interior is untouched.
pub fn apply_inpainting<T: NdFloat>(a: &mut Array2<T>, start_n: [T; 2], goal_n: [T; 2]) {
    let n = a.nrows();
    debug_assert!(n >= 2, "inpainting needs at least two points");
    a[[0, 0]] = start_n[0];
    a[[0, 1]] = start_n[1];
    a[[n - 1, 0]] = goal_n[0];
    a[[n - 1, 1]] = goal_n[1];
}
