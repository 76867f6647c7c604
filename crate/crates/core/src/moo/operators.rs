//! Bounded real-coded variation operators.

use rand::Rng;

/// Simulated binary crossover applied gene-wise with probability 1/2.
pub fn sbx_crossover<R: Rng + ?Sized>(a: &mut [f64], b: &mut [f64], bounds: &[(f64, f64)], eta: f64, rng: &mut R) {
    for ((x1, x2), &(lo, hi)) in a.iter_mut().zip(b.iter_mut()).zip(bounds) {
        if rng.random::<f64>() > 0.5 || (*x1 - *x2).abs() <= 1e-14 || hi <= lo {
            continue;
        }
        let (y1, y2) = if *x1 < *x2 { (*x1, *x2) } else { (*x2, *x1) };
        let u: f64 = rng.random();
        let spread = |beta: f64| {
            let alpha = 2.0 - beta.powf(-(eta + 1.0));
            if u <= 1.0 / alpha {
                (u * alpha).powf(1.0 / (eta + 1.0))
            } else {
                (1.0 / (2.0 - u * alpha)).powf(1.0 / (eta + 1.0))
            }
        };
        let bq1 = spread(1.0 + 2.0 * (y1 - lo) / (y2 - y1));
        let bq2 = spread(1.0 + 2.0 * (hi - y2) / (y2 - y1));
        let c1 = (0.5 * ((y1 + y2) - bq1 * (y2 - y1))).clamp(lo, hi);
        let c2 = (0.5 * ((y1 + y2) + bq2 * (y2 - y1))).clamp(lo, hi);
        if rng.random::<bool>() {
            (*x1, *x2) = (c2, c1);
        } else {
            (*x1, *x2) = (c1, c2);
        }
    }
}

/// Polynomial mutation of each gene with probability `prob`.
pub fn polynomial_mutation<R: Rng + ?Sized>(x: &mut [f64], bounds: &[(f64, f64)], prob: f64, eta: f64, rng: &mut R) {
    let pow = 1.0 / (eta + 1.0);
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        if rng.random::<f64>() >= prob || hi <= lo {
            continue;
        }
        let range = hi - lo;
        let d1 = (*v - lo) / range;
        let d2 = (hi - *v) / range;
        let u: f64 = rng.random();
        let dq = if u < 0.5 {
            let val = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1).powf(eta + 1.0);
            val.powf(pow) - 1.0
        } else {
            let val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2).powf(eta + 1.0);
            1.0 - val.powf(pow)
        };
        *v = (*v + dq * range).clamp(lo, hi);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn operators_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bounds = vec![(0.5, 5.0); 6];
        for _ in 0..500 {
            let mut a: Vec<f64> = bounds.iter().map(|&(l, h)| rng.random_range(l..=h)).collect();
            let mut b: Vec<f64> = bounds.iter().map(|&(l, h)| rng.random_range(l..=h)).collect();
            sbx_crossover(&mut a, &mut b, &bounds, 15.0, &mut rng);
            polynomial_mutation(&mut a, &bounds, 1.0, 20.0, &mut rng);
            assert!(a.iter().chain(&b).all(|&v| (0.5..=5.0).contains(&v)));
        }
    }

    #[test]
    fn identical_parents_stay_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bounds = vec![(0.0, 1.0); 3];
        let mut a = vec![0.3, 0.6, 0.9];
        let mut b = a.clone();
        sbx_crossover(&mut a, &mut b, &bounds, 15.0, &mut rng);
        assert_eq!(a, b);
        polynomial_mutation(&mut a, &bounds, 0.0, 20.0, &mut rng);
        assert_eq!(a, vec![0.3, 0.6, 0.9]);
    }
}
