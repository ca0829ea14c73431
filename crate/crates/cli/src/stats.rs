//! Small summary statistics for experiment reports.

use indexfree::rng::stream_rng;
use rand::Rng;

/// 95% Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    let z = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Per-round ratio from a least-squares fit of `ln mean_k` against `k`,
/// using rounds before the mean first drops to `floor`. `None` with fewer
/// than two usable rounds.
pub fn fitted_ratio(runs: &[Vec<f64>], floor: f64) -> Option<f64> {
    let rounds = runs.iter().map(Vec::len).min()?;
    let means: Vec<f64> = (0..rounds).map(|k| runs.iter().map(|r| r[k]).sum::<f64>() / runs.len() as f64).collect();
    let last = means.iter().position(|&m| m <= floor).unwrap_or(rounds);
    if last < 2 {
        return None;
    }
    let n = last as f64;
    let mx = (n - 1.0) / 2.0;
    let my = means[..last].iter().map(|m| m.ln()).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, m) in means[..last].iter().enumerate() {
        let dx = k as f64 - mx;
        sxy += dx * (m.ln() - my);
        sxx += dx * dx;
    }
    Some((sxy / sxx).exp())
}

/// Bootstrap standard deviation of [`fitted_ratio`] over resampled runs.
pub fn bootstrap_ratio_se(runs: &[Vec<f64>], floor: f64, reps: usize, seed: u64) -> f64 {
    let mut rng = stream_rng(seed, 7);
    let fits: Vec<f64> = (0..reps)
        .filter_map(|_| {
            let sample: Vec<Vec<f64>> = (0..runs.len()).map(|_| runs[rng.random_range(0..runs.len())].clone()).collect();
            fitted_ratio(&sample, floor)
        })
        .collect();
    let (_, se) = mean_se(&fits);
    se * (fits.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson_interval(0, 100);
        assert!(lo.abs() < 1e-15);
        assert!((hi - 0.0370).abs() < 1e-3);
        let (lo, hi) = wilson_interval(50, 100);
        assert!((lo - 0.4038).abs() < 1e-3 && (hi - 0.5962).abs() < 1e-3);
    }

    #[test]
    fn ratio_of_exact_geometric_sequence() {
        let run: Vec<f64> = (0..10).map(|k| 0.5f64.powi(k)).collect();
        let r = fitted_ratio(&[run.clone(), run], 1e-300).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
        assert_eq!(fitted_ratio(&[vec![1.0, 0.0]], 1e-3), None);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[1.0, f64::INFINITY, f64::INFINITY]), f64::INFINITY);
    }
}
