use ndarray::{Array, Dimension, Zip};

/// Adam with bias correction; moment estimates persist across calls.
#[derive(Debug, Clone)]
pub struct Adam<D: Dimension> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Option<Array<f64, D>>,
    v: Option<Array<f64, D>>,
    t: i32,
}

impl<D: Dimension> Adam<D> {
    pub fn new(lr: f64, betas: (f64, f64), eps: f64) -> Self {
        Self {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            m: None,
            v: None,
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// `param -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, param: &mut Array<f64, D>, grad: &Array<f64, D>) {
        let m = self.m.get_or_insert_with(|| Array::zeros(grad.raw_dim()));
        let v = self.v.get_or_insert_with(|| Array::zeros(grad.raw_dim()));
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (lr, eps) = (self.lr, self.eps);
        Zip::from(param).and(m).and(v).and(grad).for_each(|p, m, v, &g| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        });
    }
}
