//! RBF kernel, its gradient, and the adaptive bandwidth rule.

use crate::error::{Error, Result};
use crate::linalg::dist_sq;

/// Floor used when all particles coincide and the pairwise-distance sum is
/// zero; keeps kernel gradients finite.
pub const SIGMA_MIN: f64 = 1e-3;

/// k(a_i, a_j) = exp(-||a_i - a_j||^2 / (2 sigma^2)), in (0, 1].
pub fn rbf_kernel(a_i: &[f64], a_j: &[f64], sigma: f64) -> Result<f64> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidBandwidth(sigma));
    }
    Ok((-dist_sq(a_i, a_j) / (2.0 * sigma * sigma)).exp())
}

/// Gradient of the RBF kernel with respect to its first argument:
/// -((a_i - a_j) / sigma^2) * k(a_i, a_j).
pub fn rbf_kernel_grad_wrt_first(a_i: &[f64], a_j: &[f64], sigma: f64) -> Result<Vec<f64>> {
    let k = rbf_kernel(a_i, a_j, sigma)?;
    let s2 = sigma * sigma;
    Ok(a_i
        .iter()
        .zip(a_j)
        .map(|(x, y)| -((x - y) / s2) * k)
        .collect())
}

/// Adaptive bandwidth: the sum of squared distances over all ordered particle
/// pairs divided by 4 * (2 * ln(m + 1)). Falls back to [`SIGMA_MIN`] when all
/// particles coincide.
pub fn adaptive_bandwidth(positions: &[Vec<f64>]) -> Result<f64> {
    let m = positions.len();
    if m < 2 {
        return Err(Error::InsufficientParticles { needed: 2, got: m });
    }
    let mut total = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            total += 2.0 * dist_sq(&positions[i], &positions[j]);
        }
    }
    let sigma = total / (4.0 * (2.0 * ((m + 1) as f64).ln()));
    if sigma <= SIGMA_MIN {
        return Ok(SIGMA_MIN);
    }
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdiff::finite_diff_grad;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    #[test]
    fn kernel_at_zero_distance_is_one() {
        let a = vec![0.3, -1.2];
        for sigma in [0.1, 1.0, 17.0] {
            assert_eq!(rbf_kernel(&a, &a, sigma).unwrap(), 1.0);
        }
    }

    #[test]
    fn kernel_at_dist_sq_two_sigma_sq() {
        // ||a_i - a_j||^2 = 2 sigma^2  =>  k = e^{-1}
        let sigma = 1.7;
        let a = vec![0.0];
        let b = vec![(2.0_f64 * sigma * sigma).sqrt()];
        let k = rbf_kernel(&a, &b, sigma).unwrap();
        assert!((k - (-1.0_f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn kernel_3_4_5_fixture() {
        // ||(0,0)-(3,4)||^2 = 25, sigma = 5 => exp(-25/50) = e^{-1/2}
        let k = rbf_kernel(&[0.0, 0.0], &[3.0, 4.0], 5.0).unwrap();
        assert!((k - 0.6065306597126334).abs() < 1e-12);
    }

    #[test]
    fn kernel_rejects_bad_bandwidth() {
        assert!(matches!(
            rbf_kernel(&[0.0], &[1.0], 0.0),
            Err(Error::InvalidBandwidth(_))
        ));
        assert!(matches!(
            rbf_kernel(&[0.0], &[1.0], -2.0),
            Err(Error::InvalidBandwidth(_))
        ));
    }

    #[test]
    fn grad_zero_at_equal_points() {
        let g = rbf_kernel_grad_wrt_first(&[1.0, 2.0], &[1.0, 2.0], 0.5).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn grad_1d_fixture() {
        // a_i = 1, a_j = 0, sigma = 1: -1 * e^{-1/2}
        let g = rbf_kernel_grad_wrt_first(&[1.0], &[0.0], 1.0).unwrap();
        assert!((g[0] + 0.6065306597126334).abs() < 1e-12);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = RngStream::new(11);
        for _ in 0..100 {
            let d = 1 + rng.below(4);
            let a: Vec<f64> = (0..d).map(|_| 2.0 * rng.normal()).collect();
            let b: Vec<f64> = (0..d).map(|_| 2.0 * rng.normal()).collect();
            let sigma = 0.5 + 3.0 * rng.uniform();
            let analytic = rbf_kernel_grad_wrt_first(&a, &b, sigma).unwrap();
            let numeric = finite_diff_grad(
                |x| rbf_kernel(x, &b, sigma).unwrap(),
                &a,
                1e-5,
            )
            .unwrap();
            for (g, n) in analytic.iter().zip(&numeric) {
                let denom = n.abs().max(1e-8);
                assert!(
                    (g - n).abs() / denom < 1e-5,
                    "grad {g} vs fd {n} (sigma {sigma})"
                );
            }
        }
    }

    #[test]
    fn bandwidth_two_particle_fixture() {
        // m = 2 at distance 1: ordered-pair sum = 2, denom = 4 * 2 * ln 3
        let sigma = adaptive_bandwidth(&[vec![0.0], vec![1.0]]).unwrap();
        let expect = 2.0 / (8.0 * 3.0_f64.ln());
        assert!((sigma - expect).abs() < 1e-12);
        assert!((sigma - 0.2276).abs() < 1e-4);
    }

    #[test]
    fn bandwidth_floor_for_coincident_particles() {
        let p = vec![vec![1.0, 2.0]; 5];
        assert_eq!(adaptive_bandwidth(&p).unwrap(), SIGMA_MIN);
    }

    #[test]
    fn bandwidth_requires_two_particles() {
        assert!(matches!(
            adaptive_bandwidth(&[vec![0.0]]),
            Err(Error::InsufficientParticles { .. })
        ));
    }

    #[test]
    fn bandwidth_quadratic_in_scale() {
        let p: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![1.0, 2.0], vec![-1.0, 0.5]];
        let doubled: Vec<Vec<f64>> = p.iter().map(|r| r.iter().map(|x| 2.0 * x).collect()).collect();
        let s1 = adaptive_bandwidth(&p).unwrap();
        let s2 = adaptive_bandwidth(&doubled).unwrap();
        assert!((s2 - 4.0 * s1).abs() < 1e-12 * s1.max(1.0));
    }

    proptest! {
        #[test]
        fn kernel_symmetric_and_bounded(
            a in proptest::collection::vec(-50.0..50.0f64, 1..5),
            b in proptest::collection::vec(-50.0..50.0f64, 1..5),
            sigma in 0.01..20.0f64,
        ) {
            let n = a.len().min(b.len());
            let (a, b) = (&a[..n], &b[..n]);
            let kab = rbf_kernel(a, b, sigma).unwrap();
            let kba = rbf_kernel(b, a, sigma).unwrap();
            prop_assert!((kab - kba).abs() < 1e-15);
            prop_assert!(kab >= 0.0 && kab <= 1.0);
            // strict positivity holds wherever the exponent has not
            // underflowed past the f64 range
            if crate::linalg::dist_sq(a, b) / (2.0 * sigma * sigma) < 700.0 {
                prop_assert!(kab > 0.0);
            }
        }

        #[test]
        fn grad_antisymmetric(
            a in proptest::collection::vec(-10.0..10.0f64, 2),
            b in proptest::collection::vec(-10.0..10.0f64, 2),
            sigma in 0.1..10.0f64,
        ) {
            let gab = rbf_kernel_grad_wrt_first(&a, &b, sigma).unwrap();
            let gba = rbf_kernel_grad_wrt_first(&b, &a, sigma).unwrap();
            for (x, y) in gab.iter().zip(&gba) {
                prop_assert!((x + y).abs() < 1e-12);
            }
        }

        #[test]
        fn bandwidth_permutation_and_translation_invariant(
            seed in 0u64..1000,
            shift in -20.0..20.0f64,
        ) {
            let mut rng = RngStream::new(seed);
            let m = 3 + rng.below(5);
            let d = 1 + rng.below(3);
            let p: Vec<Vec<f64>> = (0..m).map(|_| rng.normal_vec(d)).collect();
            let base = adaptive_bandwidth(&p).unwrap();

            let mut perm = p.clone();
            perm.rotate_left(1);
            perm.swap(0, m - 1);
            let permuted = adaptive_bandwidth(&perm).unwrap();
            prop_assert!((base - permuted).abs() < 1e-12 * base.max(1.0));

            let moved: Vec<Vec<f64>> =
                p.iter().map(|r| r.iter().map(|x| x + shift).collect()).collect();
            let translated = adaptive_bandwidth(&moved).unwrap();
            prop_assert!((base - translated).abs() < 1e-9 * base.max(1.0));
        }
    }
}
