//! Scalar loss functions with closed-form gradients.

/// `0.5 x^2` for `|x| < 1`, else `|x| - 0.5`.
pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// `l(du - du*) + l(dv - dv*) + lambda * l(s - s*)` with smooth-L1 `l`.
pub fn loss_translation(pred: [f64; 3], target: [f64; 3], lambda: f64) -> f64 {
    smooth_l1(pred[0] - target[0]) + smooth_l1(pred[1] - target[1]) + lambda * smooth_l1(pred[2] - target[2])
}

/// Gradient of [`loss_translation`] with respect to `pred`.
pub fn loss_translation_grad(pred: [f64; 3], target: [f64; 3], lambda: f64) -> [f64; 3] {
    [
        smooth_l1_grad(pred[0] - target[0]),
        smooth_l1_grad(pred[1] - target[1]),
        lambda * smooth_l1_grad(pred[2] - target[2]),
    ]
}

/// `||omega - omega*||^2`.
pub fn loss_rotation(omega: [f64; 3], omega_star: [f64; 3]) -> f64 {
    (0..3).map(|i| (omega[i] - omega_star[i]).powi(2)).sum()
}

pub fn loss_rotation_grad(omega: [f64; 3], omega_star: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| 2.0 * (omega[i] - omega_star[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn translation_examples() {
        assert_eq!(loss_translation([0.3, -0.2, 0.1], [0.3, -0.2, 0.1], 1.0), 0.0);
        assert_eq!(loss_translation([0.5, 0.0, 0.0], [0.0; 3], 1.0), 0.125);
        assert_eq!(loss_translation([2.0, 0.0, 0.0], [0.0; 3], 1.0), 1.5);
    }

    #[test]
    fn rotation_examples() {
        assert_eq!(loss_rotation([0.2, 0.1, -0.3], [0.2, 0.1, -0.3]), 0.0);
        assert!((loss_rotation([0.1, 0.0, 0.0], [0.0; 3]) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_central_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let h = 1e-6;
        for _ in 0..1000 {
            let p: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(-3.0..3.0));
            let t: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(-3.0..3.0));
            let lambda = rng.random_range(0.1..5.0);
            let gt = loss_translation_grad(p, t, lambda);
            let gr = loss_rotation_grad(p, t);
            for i in 0..3 {
                let (mut a, mut b) = (p, p);
                a[i] += h;
                b[i] -= h;
                if ((p[i] - t[i]).abs() - 1.0).abs() > 1e-4 {
                    let fd = (loss_translation(a, t, lambda) - loss_translation(b, t, lambda)) / (2.0 * h);
                    assert!((fd - gt[i]).abs() <= 1e-6 * fd.abs().max(1e-3));
                }
                let fd = (loss_rotation(a, t) - loss_rotation(b, t)) / (2.0 * h);
                assert!((fd - gr[i]).abs() <= 1e-6 * fd.abs().max(1e-3));
            }
        }
    }
}
