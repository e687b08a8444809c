//! SGD with classic momentum and an inverse-decay learning-rate schedule.

/// `lr(i) = eta0 * (1 + gamma * i)^(-power)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseDecaySchedule {
    pub eta0: f64,
    pub gamma: f64,
    pub power: f64,
}

impl InverseDecaySchedule {
    pub fn lr(&self, step: usize) -> f64 {
        self.eta0 * (1.0 + self.gamma * step as f64).powf(-self.power)
    }
}

/// Momentum SGD over a fixed list of parameter arrays. Velocity buffers and
/// per-array learning-rate multipliers are keyed by array position, so
/// callers must always pass arrays in the same order.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub momentum: f64,
    velocities: Vec<Vec<f64>>,
    lr_multipliers: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(momentum: f64, array_sizes: &[usize]) -> Self {
        SgdMomentum {
            momentum,
            velocities: array_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            lr_multipliers: vec![1.0; array_sizes.len()],
        }
    }

    /// Per-array learning-rate multipliers, in array order.
    pub fn with_lr_multipliers(mut self, multipliers: Vec<f64>) -> Self {
        assert_eq!(multipliers.len(), self.velocities.len());
        self.lr_multipliers = multipliers;
        self
    }

    /// `v = momentum * v + g; theta -= lr * mult * v` for every array.
    pub fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[&[f64]], lr: f64) {
        assert_eq!(
            params.len(),
            self.velocities.len(),
            "parameter count changed"
        );
        assert_eq!(grads.len(), self.velocities.len(), "gradient count changed");
        for (((theta, g), v), mult) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.velocities)
            .zip(&self.lr_multipliers)
        {
            assert_eq!(theta.len(), v.len(), "parameter size changed");
            let rate = lr * mult;
            for ((t, gi), vi) in theta.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi;
                *t -= rate * *vi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_decays_from_eta0() {
        let s = InverseDecaySchedule {
            eta0: 0.01,
            gamma: 1e-4,
            power: 0.75,
        };
        assert_eq!(s.lr(0), 0.01);
        assert!(s.lr(1000) < 0.01);
        assert!(s.lr(10_000) < s.lr(1000));
    }

    #[test]
    fn plain_sgd_step() {
        let mut opt = SgdMomentum::new(0.0, &[2]);
        let mut p = vec![1.0, 2.0];
        let g = vec![0.5, -0.5];
        opt.step(&mut [&mut p], &[&g], 0.1);
        assert_eq!(p, vec![0.95, 2.05]);
    }

    #[test]
    fn momentum_accumulates() {
        let mut opt = SgdMomentum::new(0.9, &[1]);
        let mut p = vec![0.0];
        let g = vec![1.0];
        opt.step(&mut [&mut p], &[&g], 1.0);
        assert_eq!(p, vec![-1.0]); // v = 1
        opt.step(&mut [&mut p], &[&g], 1.0);
        assert_eq!(p, vec![-2.9]); // v = 1.9
    }

    #[test]
    fn zero_lr_leaves_parameters_bit_identical() {
        let mut opt = SgdMomentum::new(0.9, &[3]);
        let mut p: Vec<f64> = vec![0.123456, -9.75, 1e-20];
        let before: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        let g = vec![10.0, -3.0, 0.5];
        opt.step(&mut [&mut p], &[&g], 0.0);
        let after: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
    }
}
