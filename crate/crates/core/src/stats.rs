//! Two-sample and goodness-of-fit statistics for point clouds in the plane.

use num_complex::Complex64;
use rayon::prelude::*;

/// Energy distance `2 E|X-Y| - E|X-X'| - E|Y-Y'|` between two samples, with
/// the within-sample means taken over distinct pairs.
///
/// Sums are formed row by row and combined in a fixed order, so the result
/// does not depend on the number of worker threads.
pub fn energy_distance(x: &[Complex64], y: &[Complex64]) -> f64 {
    assert!(
        x.len() >= 2 && y.len() >= 2,
        "energy distance needs two points per sample"
    );
    2.0 * mean_cross(x, y) - mean_within(x) - mean_within(y)
}

fn row_sum(p: Complex64, others: &[Complex64]) -> f64 {
    others
        .iter()
        .map(|q| {
            let dx = p.re - q.re;
            let dy = p.im - q.im;
            (dx * dx + dy * dy).sqrt()
        })
        .sum()
}

fn mean_cross(x: &[Complex64], y: &[Complex64]) -> f64 {
    let rows: Vec<f64> = x.par_iter().map(|p| row_sum(*p, y)).collect();
    rows.iter().sum::<f64>() / (x.len() * y.len()) as f64
}

fn mean_within(x: &[Complex64]) -> f64 {
    let n = x.len();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| row_sum(x[i], &x[i + 1..]))
        .collect();
    2.0 * rows.iter().sum::<f64>() / (n * (n - 1)) as f64
}

/// One-sample Kolmogorov-Smirnov statistic `sup |F_n - F|`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic critical value of the KS statistic at significance `alpha`,
/// `sqrt(-ln(alpha/2)/2) / sqrt(n)`.
pub fn ks_critical(alpha: f64, n: usize) -> f64 {
    (-(0.5 * alpha).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_distance_of_identical_clouds_is_small() {
        let x: Vec<Complex64> = (0..50).map(|i| Complex64::new(i as f64, 0.0)).collect();
        let d = energy_distance(&x, &x);
        // U-statistic within-terms bias this negative by about mean|x-x'|/n
        assert!(d < 0.0 && d > -1.0, "{d}");
        let shifted: Vec<Complex64> = x.iter().map(|p| p + 100.0).collect();
        assert!(energy_distance(&x, &shifted) > 100.0);
    }

    #[test]
    fn energy_distance_by_brute_force() {
        let x = [
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 2.0),
        ];
        let y = [Complex64::new(3.0, 4.0), Complex64::new(-1.0, 0.0)];
        let mut cross = 0.0;
        for a in &x {
            for b in &y {
                cross += (a - b).norm();
            }
        }
        cross /= 6.0;
        let wx = 2.0 * (1.0 + 2.0 + 5f64.sqrt()) / 6.0;
        let wy = (Complex64::new(4.0, 4.0)).norm();
        let expected = 2.0 * cross - wx - wy;
        assert!((energy_distance(&x, &y) - expected).abs() < 1e-14);
    }

    #[test]
    fn ks_on_uniform_grid() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
        assert!((ks_critical(0.05, 1) - 1.358).abs() < 1e-3);
        assert!((ks_critical(0.01, 1) - 1.628).abs() < 1e-3);
    }

    #[test]
    fn quantiles() {
        let v = [3.0, 1.0, 2.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert_eq!(quantile(&v, 0.625), 3.5);
    }
}
