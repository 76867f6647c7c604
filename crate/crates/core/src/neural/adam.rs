use ndarray::Zip;

use super::{Gradients, Mlp};
use crate::error::{input_err, Result};

/// Adam moment accumulators for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub(crate) m: Gradients,
    pub(crate) v: Gradients,
}

impl OptimizerState {
    pub fn adam(net: &Mlp, lr: f64) -> Self {
        Self::with_moments(net, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_moments(net: &Mlp, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn first_moment(&self) -> &Gradients {
        &self.m
    }

    pub fn second_moment(&self) -> &Gradients {
        &self.v
    }
}

/// One bias-corrected Adam step on `net`.
pub fn apply_update(net: &mut Mlp, grads: &Gradients, opt: &mut OptimizerState) -> Result<()> {
    if grads.layers.len() != net.layers.len() || opt.m.layers.len() != net.layers.len() {
        return input_err("gradient layout does not match the network");
    }
    for ((l, g), m) in net.layers.iter().zip(&grads.layers).zip(&opt.m.layers) {
        if l.weight.dim() != g.weight.dim() || l.bias.dim() != g.bias.dim() || l.weight.dim() != m.weight.dim() {
            return input_err("gradient layout does not match the network");
        }
    }
    opt.step += 1;
    let (b1, b2, eps) = (opt.beta1, opt.beta2, opt.eps);
    let bc1 = 1.0 - b1.powi(opt.step as i32);
    let bc2 = 1.0 - b2.powi(opt.step as i32);
    let lr = opt.lr;
    let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    for (((l, g), m), v) in net
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(opt.m.layers.iter_mut())
        .zip(opt.v.layers.iter_mut())
    {
        Zip::from(&mut l.weight)
            .and(&g.weight)
            .and(&mut m.weight)
            .and(&mut v.weight)
            .for_each(|p, g, m, v| update(p, g, m, v));
        Zip::from(&mut l.bias)
            .and(&g.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .for_each(|p, g, m, v| update(p, g, m, v));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        Mlp::new(&[3, 4, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap()
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut n = net();
        let before = n.clone();
        let mut opt = OptimizerState::adam(&n, 1e-2);
        let zero = Gradients::zeros_like(&n);
        apply_update(&mut n, &zero, &mut opt).unwrap();
        assert_eq!(n, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut n = net();
        let before = n.clone();
        let mut g = Gradients::zeros_like(&n);
        g.layers[0].weight.fill(0.3);
        let mut opt = OptimizerState::adam(&n, 0.0);
        for _ in 0..5 {
            apply_update(&mut n, &g, &mut opt).unwrap();
        }
        assert_eq!(n, before);
    }

    #[test]
    fn constant_gradient_step_approaches_learning_rate() {
        // With g constant, m̂ = g and v̂ = g² exactly, so each step is lr·g/(|g|+eps).
        let mut n = net();
        let mut g = Gradients::zeros_like(&n);
        g.layers[1].bias.fill(-0.02);
        let lr = 1e-3;
        let mut opt = OptimizerState::adam(&n, lr);
        for _ in 0..200 {
            apply_update(&mut n, &g, &mut opt).unwrap();
        }
        let before = n.layers()[1].bias[0];
        apply_update(&mut n, &g, &mut opt).unwrap();
        let step = n.layers()[1].bias[0] - before;
        let expected = lr * 0.02 / (0.02 + 1e-8);
        assert!((step - expected).abs() < 1e-9 * lr, "step {step}");
    }

    #[test]
    fn layout_mismatch_rejected() {
        let mut n = net();
        let other = Mlp::zeros(&[3, 5, 2], Activation::Tanh, Activation::Identity).unwrap();
        let mut opt = OptimizerState::adam(&n, 1e-3);
        assert!(apply_update(&mut n, &Gradients::zeros_like(&other), &mut opt).is_err());
    }
}
