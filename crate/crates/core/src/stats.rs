//! Small statistics helpers shared by the experiment drivers.

use serde::Serialize;

/// Two-sided 97.5% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// A proportion estimate with its 95% Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Proportion {
    pub fn new(successes: u64, trials: u64) -> Self {
        let (ci_low, ci_high) = wilson_interval(successes, trials, Z_95);
        let fraction = if trials == 0 {
            0.0
        } else {
            successes as f64 / trials as f64
        };
        Proportion {
            successes,
            trials,
            fraction,
            ci_low,
            ci_high,
        }
    }

    /// Binomial standard error `sqrt(p(1-p)/T)` at the observed fraction.
    pub fn std_error(&self) -> f64 {
        if self.trials == 0 {
            return 0.0;
        }
        (self.fraction * (1.0 - self.fraction) / self.trials as f64).sqrt()
    }

    pub fn contains(&self, p: f64) -> bool {
        self.ci_low <= p && p <= self.ci_high
    }
}

/// Wilson score interval for `successes` out of `trials`; `(0, 1)` when `trials == 0`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes >= trials { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Sample mean and unbiased standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std_dev: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Summary {
                count,
                mean: f64::NAN,
                std_dev: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let std_dev = if count > 1 {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Summary {
            count,
            mean,
            std_dev,
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        self.std_dev / (self.count as f64).sqrt()
    }
}

/// `H_n = 1 + 1/2 + ... + 1/n`.
pub fn harmonic(n: u64) -> f64 {
    (1..=n).map(|i| 1.0 / i as f64).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_known_value() {
        // 50/100 at z = 1.96: centre 0.5, half-width 0.09617...
        let (lo, hi) = wilson_interval(50, 100, Z_95);
        assert!((lo - 0.403_831_4).abs() < 1e-6, "{lo}");
        assert!((hi - 0.596_168_6).abs() < 1e-6, "{hi}");
    }

    #[test]
    fn wilson_extremes_stay_in_unit_interval() {
        let (lo, hi) = wilson_interval(0, 400, Z_95);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.02);
        let (lo, hi) = wilson_interval(400, 400, Z_95);
        assert!(lo > 0.98 && hi == 1.0);
    }

    #[test]
    fn summary_of_constant() {
        let s = Summary::of(&[2.0, 2.0, 2.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std_dev, 0.0);
    }

    #[test]
    fn harmonic_small() {
        assert!((harmonic(4) - 25.0 / 12.0).abs() < 1e-15);
    }
}
