//! Adam optimizer over a [`ParamStore`].

use super::ParamStore;
use ndarray::Array2;

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    moments: Vec<(Array2<f64>, Array2<f64>)>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let moments = store
            .iter()
            .map(|(_, t)| {
                let d = t.data().dim();
                (Array2::zeros(d), Array2::zeros(d))
            })
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Apply one update from the gradients currently held by `store`.
    /// Parameters without a gradient (unused in this step's graph) are left
    /// untouched. Gradients are cleared afterwards.
    pub fn step(&mut self, store: &ParamStore) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((_, t), (m, v)) in store.iter().zip(self.moments.iter_mut()) {
            let Some(g) = t.grad() else { continue };
            m.zip_mut_with(&g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(&g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let mut data = t.to_array();
            for ((d, &mi), &vi) in data.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                *d -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            t.set_data(data);
        }
        store.zero_grads();
    }
}
