//! Adam, global-norm gradient clipping and the plateau learning-rate
//! scheduler used by the training harness.

/// Standard Adam with bias correction. Hyperparameters default to
/// beta = (0.9, 0.999), eps = 1e-8.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Scale all gradients by `max_norm / g` when the global L2 norm `g`
/// exceeds `max_norm`. Returns the scale applied (1.0 when unclipped).
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm: f64 = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let scale = max_norm / norm;
    for g in grads.iter_mut() {
        *g *= scale;
    }
    scale
}

/// Halve the learning rate when the validation metric (higher is better)
/// has not improved for `patience` epochs; patience is `patience_early`
/// up to `boundary_epoch` and `patience_late` afterwards.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    best: Option<f64>,
    stale: usize,
    pub boundary_epoch: usize,
    pub patience_early: usize,
    pub patience_late: usize,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64) -> Self {
        Self {
            lr: initial_lr,
            best: None,
            stale: 0,
            boundary_epoch: 80,
            patience_early: 10,
            patience_late: 5,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feed one epoch's validation metric; returns the learning rate to
    /// use from the next epoch on.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> f64 {
        match self.best {
            Some(best) if metric <= best => self.stale += 1,
            _ => {
                self.best = Some(metric);
                self.stale = 0;
            }
        }
        let patience = if epoch <= self.boundary_epoch {
            self.patience_early
        } else {
            self.patience_late
        };
        if self.stale >= patience {
            self.lr /= 2.0;
            self.stale = 0;
        }
        self.lr
    }
}
