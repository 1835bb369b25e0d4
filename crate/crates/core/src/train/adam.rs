use crate::autodiff::{ParamStore, Tensor};
use crate::error::{param_err, Result};

/// Rounds through f32, the precision parameters and moments are stored at.
pub(crate) fn round_f32(t: &mut Tensor) {
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v = f64::from(*v as f32));
}

/// Adam with bias correction. Parameters and both moment estimates are
/// rounded to f32 after every step so a checkpoint captures the optimizer
/// state exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value().shape()))
                .collect()
        };
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn describe(&self) -> String {
        format!(
            "adam(beta1={}, beta2={}, eps={:e})",
            self.beta1, self.beta2, self.eps
        )
    }

    /// Applies one update with learning rate `lr` from the gradients held in
    /// `store`. Frozen parameters are left alone.
    pub fn update(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return param_err(format!(
                "optimizer tracks {} tensors, store has {}",
                self.m.len(),
                store.len()
            ));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            if store.is_frozen(id) {
                continue;
            }
            let g = store.grad(id).clone();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let w = store.value_mut(id);
            for (((w, m), v), g) in w
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *m = f64::from((self.beta1 * *m + (1.0 - self.beta1) * g) as f32);
                *v = f64::from((self.beta2 * *v + (1.0 - self.beta2) * g * g) as f32);
                let step = lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                *w = f64::from((*w - step) as f32);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Init;
    use rand::SeedableRng;

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let id = store.register("w", &[3], Init::Zeros, &mut rng).unwrap();
        store
            .grad_mut(id)
            .data_mut()
            .copy_from_slice(&[2.0, -0.5, 0.0]);
        let mut adam = Adam::new(&store, 0.9, 0.999, 1e-8);
        adam.update(&mut store, 0.01).unwrap();
        let w = store.value(id).data();
        assert!((w[0] + 0.01).abs() < 1e-6 && (w[1] - 0.01).abs() < 1e-6 && w[2] == 0.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let id = store.register("w", &[2], Init::Zeros, &mut rng).unwrap();
        let mut adam = Adam::new(&store, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let w = store.value(id).data().to_vec();
            let g = [2.0 * (w[0] - 1.5), 2.0 * (w[1] + 0.5)];
            store.grad_mut(id).data_mut().copy_from_slice(&g);
            adam.update(&mut store, 0.01).unwrap();
        }
        let w = store.value(id).data();
        assert!(
            (w[0] - 1.5).abs() < 1e-2 && (w[1] + 0.5).abs() < 1e-2,
            "{w:?}"
        );
    }
}
