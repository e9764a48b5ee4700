//! Pinball (quantile) loss.

use crate::scalar::Scalar;

use super::NnError;

/// A quantile level strictly inside `(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct QuantileSpec(f64);

impl QuantileSpec {
    pub fn new(tau: f64) -> Result<Self, NnError> {
        if tau > 0.0 && tau < 1.0 {
            Ok(QuantileSpec(tau))
        } else {
            Err(NnError::InvalidQuantile(tau))
        }
    }

    pub fn tau(self) -> f64 {
        self.0
    }
}

/// Pinball loss of one residual `u = r - r_hat`: `max(tau u, (tau - 1) u)`.
pub fn pinball<F: Scalar>(r: F, r_hat: F, tau: F) -> F {
    let u = r - r_hat;
    (tau * u).max((tau - F::one()) * u)
}

/// Mean pinball loss over a batch and its gradient with respect to `r_hat`.
///
/// Per element the gradient is `-tau` where `r > r_hat`, `1 - tau` where
/// `r < r_hat` and `0` at equality, each divided by the batch size.
pub fn pinball_loss<F: Scalar>(r: &[F], r_hat: &[F], q: QuantileSpec) -> Result<(F, Vec<F>), NnError> {
    if r.len() != r_hat.len() || r.is_empty() {
        return Err(NnError::ShapeMismatch(format!("{} targets vs {} predictions", r.len(), r_hat.len())));
    }
    let tau = F::from_f64_lossy(q.tau());
    let inv_n = F::one() / F::from_usize(r.len()).expect("batch size fits the scalar type");
    let mut total = F::zero();
    let mut grad = Vec::with_capacity(r.len());
    for (&y, &p) in r.iter().zip(r_hat) {
        total += pinball(y, p, tau);
        let g = if y > p {
            -tau
        } else if y < p {
            F::one() - tau
        } else {
            F::zero()
        };
        grad.push(g * inv_n);
    }
    Ok((total * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::gradient_check;
    use proptest::prelude::*;

    fn q(t: f64) -> QuantileSpec {
        QuantileSpec::new(t).unwrap()
    }

    #[test]
    fn hand_values() {
        assert_eq!(pinball_loss(&[2.0], &[1.0], q(0.25)).unwrap().0, 0.25);
        assert_eq!(pinball_loss(&[1.0], &[2.0], q(0.75)).unwrap().0, 0.25);
        let (l, g) = pinball_loss(&[1.0, -3.0], &[1.0, -3.0], q(0.3)).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn gradient_signs() {
        let (_, g) = pinball_loss(&[2.0, 0.0], &[1.0, 1.0], q(0.25)).unwrap();
        assert_eq!(g, vec![-0.25 / 2.0, 0.75 / 2.0]);
    }

    #[test]
    fn rejects_bad_levels_and_lengths() {
        assert_eq!(QuantileSpec::new(0.0), Err(NnError::InvalidQuantile(0.0)));
        assert_eq!(QuantileSpec::new(1.0), Err(NnError::InvalidQuantile(1.0)));
        assert!(QuantileSpec::new(f64::NAN).is_err());
        assert!(pinball_loss(&[1.0f64], &[1.0, 2.0], q(0.5)).is_err());
    }

    #[test]
    fn gradient_check_away_from_kinks() {
        let r: Vec<f64> = (0..120).map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0).collect();
        let r_hat: Vec<f64> = r.iter().enumerate().map(|(i, v)| v + if i % 2 == 0 { 0.01 } else { -0.02 }).collect();
        for tau in [0.1, 0.5, 0.9] {
            let (_, g) = pinball_loss(&r, &r_hat, q(tau)).unwrap();
            let coords: Vec<usize> = (0..r.len()).collect();
            gradient_check(|p| pinball_loss(&r, p, q(tau)).unwrap().0, &r_hat, &g, &coords, 1e-5, 1e-4).unwrap();
        }
    }

    proptest! {
        #[test]
        fn median_level_is_half_mae(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..64)) {
            let (r, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (l, _) = pinball_loss(&r, &p, q(0.5)).unwrap();
            let mae = r.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum::<f64>() / r.len() as f64;
            prop_assert!((l - 0.5 * mae).abs() <= 1e-15 * mae.max(f64::MIN_POSITIVE));
        }

        #[test]
        fn nonnegative_and_convex(r in -10.0f64..10.0, a in -10.0f64..10.0, b in -10.0f64..10.0, tau in 0.01f64..0.99) {
            let la = pinball(r, a, tau);
            let lb = pinball(r, b, tau);
            prop_assert!(la >= 0.0 && lb >= 0.0);
            prop_assert_eq!(la == 0.0, r == a);
            let mid = pinball(r, 0.5 * (a + b), tau);
            prop_assert!(mid <= 0.5 * (la + lb) + 1e-12);
        }
    }
}
