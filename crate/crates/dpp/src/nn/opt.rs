//! Optimizer (Adam with decoupled weight decay) and the exponential moving
//! average of parameters used for evaluation.

use ndarray::ArrayD;

use super::{sc, GradStore, Params, Scalar};

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: usize,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &Params<T>, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: params.values().iter().map(|p| ArrayD::zeros(p.raw_dim())).collect(),
            v: params.values().iter().map(|p| ArrayD::zeros(p.raw_dim())).collect(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn step(&mut self, params: &mut Params<T>, grads: &GradStore<T>) {
        self.step += 1;
        let b1 = sc::<T>(self.beta1);
        let b2 = sc::<T>(self.beta2);
        let one = T::one();
        let corr1 = sc::<T>(1.0 - self.beta1.powi(self.step as i32));
        let corr2 = sc::<T>(1.0 - self.beta2.powi(self.step as i32));
        let lr = sc::<T>(self.lr);
        let eps = sc::<T>(self.eps);
        let wd = sc::<T>(self.weight_decay);

        for ((p, g), (m, v)) in params
            .values_mut()
            .iter_mut()
            .zip(grads.values().iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|pv, &gv, mv, vv| {
                    *mv = b1 * *mv + (one - b1) * gv;
                    *vv = b2 * *vv + (one - b2) * gv * gv;
                    let mhat = *mv / corr1;
                    let vhat = *vv / corr2;
                    *pv = *pv - lr * (mhat / (vhat.sqrt() + eps) + wd * *pv);
                });
        }
    }
}

/// Exponential moving average of a parameter set: `ema = d*ema + (1-d)*p`.
#[derive(Debug, Clone)]
pub struct Ema<T> {
    pub decay: f64,
    shadow: Params<T>,
}

impl<T: Scalar> Ema<T> {
    pub fn new(params: &Params<T>, decay: f64) -> Self {
        Self { decay, shadow: params.clone() }
    }

    pub fn update(&mut self, params: &Params<T>) {
        let d = sc::<T>(self.decay);
        let one = T::one();
        for (s, p) in self.shadow.values_mut().iter_mut().zip(params.values().iter()) {
            ndarray::Zip::from(s).and(p).for_each(|sv, &pv| {
                *sv = d * *sv + (one - d) * pv;
            });
        }
    }

    pub fn shadow(&self) -> &Params<T> {
        &self.shadow
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::ArrayD;

    #[test]
    fn adam_descends_quadratic() {
        // Minimize (p - 3)^2 elementwise.
        let mut params = Params::<f64>::new();
        let id = params.add("p", ArrayD::zeros(vec![4]));
        let mut opt = AdamW::new(&params, 0.1, 0.0);
        for _ in 0..500 {
            let mut grads = GradStore::zeros_like(&params);
            {
                let p = params.get(id).clone();
                let g = grads.get_mut(id);
                ndarray::Zip::from(g).and(&p).for_each(|gv, &pv| *gv = 2.0 * (pv - 3.0));
            }
            opt.step(&mut params, &grads);
        }
        for v in params.get(id).iter() {
            assert!((v - 3.0).abs() < 1e-3, "got {v}");
        }
    }

    #[test]
    fn ema_converges_to_frozen_params() {
        let mut params = Params::<f64>::new();
        let id = params.add("p", ArrayD::from_elem(vec![3], 5.0));
        let mut ema = Ema::new(&params, 0.9);
        // Move params once, then freeze; the shadow must converge to them.
        params.get_mut(id).fill(1.0);
        for _ in 0..200 {
            ema.update(&params);
        }
        for v in ema.shadow().get(id).iter() {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }
}
