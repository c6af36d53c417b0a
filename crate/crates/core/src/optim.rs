use crate::tape::{Gradients, Matrix, ParamSet};

/// Adam over one parameter set. `step` takes a descent direction.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: Vec<u64>,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(set: &ParamSet, lr: f64) -> Self {
        let zeros: Vec<Matrix> = set
            .iter()
            .map(|(_, _, m)| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: vec![0; zeros.len()],
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Updates every parameter that has a gradient; others are left alone.
    pub fn step(&mut self, set: &mut ParamSet, grads: &Gradients) {
        let ids: Vec<_> = set.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = set.get_mut(id).data_mut();
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Rescales all gradients jointly so their global norm is at most
/// `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut Gradients], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.sum_squares()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale(factor);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_a_quadratic() {
        let mut set = ParamSet::new();
        let id = set.add("x", Matrix::row_vector(vec![3.0, -2.0]));
        let mut opt = Adam::new(&set, 0.1);
        for _ in 0..500 {
            let mut g = Gradients::zeros_like(&set);
            let mut grad = set.get(id).clone();
            grad.scale_in_place(2.0);
            g.accumulate(id, &grad);
            opt.step(&mut set, &g);
        }
        assert!(set.get(id).data().iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn clipping_rescales_jointly() {
        let mut set = ParamSet::new();
        let id = set.add("x", Matrix::row_vector(vec![0.0, 0.0]));
        let mut a = Gradients::zeros_like(&set);
        a.accumulate(id, &Matrix::row_vector(vec![3.0, 0.0]));
        let mut b = Gradients::zeros_like(&set);
        b.accumulate(id, &Matrix::row_vector(vec![0.0, 4.0]));
        let norm = clip_global_norm(&mut [&mut a, &mut b], 1.0);
        assert_eq!(norm, 5.0);
        let after = (a.sum_squares() + b.sum_squares()).sqrt();
        assert!((after - 1.0).abs() < 1e-12);
    }
}
