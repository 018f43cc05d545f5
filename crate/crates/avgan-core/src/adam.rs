//! Adam with bias correction, one state slot per parameter-store entry.

use crate::error::Result;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::Scalar;

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let m = store.entries().iter().map(|e| Tensor::zeros(e.value.shape())).collect();
        let v = store.entries().iter().map(|e| Tensor::zeros(e.value.shape())).collect();
        Adam { lr, beta1, beta2, eps, m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every trainable entry that has an accumulated
    /// gradient. Entries without a gradient are untouched (but share the
    /// global step count, as in reference implementations).
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        self.step += 1;
        let t = self.step;
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (ob1, ob2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let lr = T::of(self.lr / bc1);
        let bc2s = T::of(1.0 / bc2);
        let eps = T::of(self.eps);
        for id in 0..store.len() {
            if !store.entry(id).trainable {
                continue;
            }
            let grad = match store.entry(id).grad.clone() {
                Some(gt) => gt,
                None => continue,
            };
            let m = self.m[id].data_mut();
            let v = self.v[id].data_mut();
            let mut value = store.get(id).clone();
            for ((p, (mm, vv)), &g) in value
                .data_mut()
                .iter_mut()
                .zip(m.iter_mut().zip(v.iter_mut()))
                .zip(grad.data())
            {
                *mm = b1 * *mm + ob1 * g;
                *vv = b2 * *vv + ob2 * g * g;
                let vhat = *vv * bc2s;
                *p = *p - lr * *mm / (vhat.sqrt() + eps);
            }
            store.set(id, value);
        }
        Ok(())
    }

    pub fn state(&self) -> (&[Tensor<T>], &[Tensor<T>], u64) {
        (&self.m, &self.v, self.step)
    }

    pub fn restore(&mut self, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>, step: u64) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.m = m;
        self.v = v;
        self.step = step;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_one(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("x", Tensor::scalar(v), true);
        s
    }

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let mut s = store_one(1.5);
        s.entry_mut(0).grad = Some(Tensor::scalar(0.0));
        let mut opt = Adam::new(&s, 1e-4, 0.3, 0.999, 1e-8);
        opt.step(&mut s).unwrap();
        assert_eq!(s.get(0).item(), 1.5, "zero gradient must not move the parameter");
    }

    #[test]
    fn first_step_is_roughly_lr() {
        // With g=1: m-hat = 1, v-hat = 1, so the step is lr/(1+eps) ~ lr.
        let mut s = store_one(0.0);
        s.entry_mut(0).grad = Some(Tensor::scalar(1.0));
        let mut opt = Adam::new(&s, 1e-4, 0.3, 0.999, 1e-8);
        opt.step(&mut s).unwrap();
        let got = s.get(0).item();
        assert!(
            (got + 1e-4).abs() < 1e-10,
            "first bias-corrected step should decrease by ~lr, got {got}"
        );
    }

    #[test]
    fn quadratic_bowl_descends_monotonically() {
        // f(x) = x^2/2, grad = x; after the warm-up step the iterates shrink.
        let mut s = store_one(1.0);
        let mut opt = Adam::new(&s, 0.05, 0.3, 0.999, 1e-8);
        let mut prev = 1.0f64;
        for step in 0..10 {
            let x = s.get(0).item();
            s.clear_grads();
            s.entry_mut(0).grad = Some(Tensor::scalar(x));
            opt.step(&mut s).unwrap();
            let now: f64 = s.get(0).item();
            if step >= 2 {
                assert!(
                    now.abs() <= prev.abs() + 1e-12,
                    "|x| grew at step {step}: {prev} -> {now}"
                );
            }
            prev = now;
        }
        assert!(prev.abs() < 1.0, "did not descend the bowl");
    }
}
