//! Central-difference gradient checking.

use super::NnError;

/// Denominator floor for [`relative_error`]; gradients smaller than this are
/// compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// `(coordinate, analytic, numeric)` at the largest error.
    pub worst: Option<(usize, f64, f64)>,
}

/// Compares `analytic[i]` against `(f(x + h e_i) - f(x - h e_i)) / 2h` for
/// each `i` in `coords`. Fails with [`NnError::CheckFailed`] at the worst
/// coordinate if its relative error reaches `tolerance`.
pub fn gradient_check<L>(
    mut loss: L,
    x: &[f64],
    analytic: &[f64],
    coords: &[usize],
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport, NnError>
where
    L: FnMut(&[f64]) -> f64,
{
    if x.len() != analytic.len() {
        return Err(NnError::ShapeMismatch(format!("{} inputs vs {} gradients", x.len(), analytic.len())));
    }
    let mut work = x.to_vec();
    let mut report = GradCheckReport { max_relative_error: 0.0, checked: 0, worst: None };
    for &i in coords {
        let orig = work[i];
        work[i] = orig + h;
        let up = loss(&work);
        work[i] = orig - h;
        let down = loss(&work);
        work[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if err > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = err.max(report.max_relative_error);
            report.worst = Some((i, analytic[i], numeric));
        }
    }
    if report.max_relative_error >= tolerance {
        let (coordinate, analytic, numeric) = report.worst.expect("at least one coordinate checked");
        return Err(NnError::CheckFailed { coordinate, analytic, numeric });
    }
    Ok(report)
}

/// Up to `count` distinct coordinates in `0..n`, deterministic per seed.
pub fn sample_coordinates(n: usize, count: usize, seed: u64) -> Vec<usize> {
    use rand::seq::index::sample;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, count.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_and_wrong_gradient_fails() {
        let f = |x: &[f64]| x.iter().map(|v| v * v * v).sum::<f64>();
        let x = [0.3, -1.2, 2.0];
        let good: Vec<f64> = x.iter().map(|v| 3.0 * v * v).collect();
        let r = gradient_check(f, &x, &good, &[0, 1, 2], 1e-5, 1e-6).unwrap();
        assert_eq!(r.checked, 3);
        let mut bad = good.clone();
        bad[1] *= 1.01;
        assert!(matches!(
            gradient_check(f, &x, &bad, &[0, 1, 2], 1e-5, 1e-6),
            Err(NnError::CheckFailed { coordinate: 1, .. })
        ));
    }

    #[test]
    fn coordinates_are_distinct_and_bounded() {
        let c = sample_coordinates(50, 20, 3);
        assert_eq!(c.len(), 20);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert!(c.iter().all(|&i| i < 50));
        assert_eq!(sample_coordinates(5, 20, 3), vec![0, 1, 2, 3, 4]);
    }
}
