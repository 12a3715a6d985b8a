//! Sample means and least-squares fits.

use serde::Serialize;

/// Mean of independent samples with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Estimate {
        let n = xs.len();
        if n == 0 {
            return Estimate { mean: f64::NAN, stderr: f64::NAN, samples: 0 };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Estimate { mean, stderr, samples: n }
    }
}

/// Least-squares line `y = slope x + intercept` with Pearson correlation `r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r: f64,
}

pub fn line_fit(xs: &[f64], ys: &[f64]) -> LineFit {
    let n = xs.len().min(ys.len()) as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    LineFit { slope, intercept: my - slope * mx, r: sxy / (sxx * syy).sqrt() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 - 2.0 * x).collect();
        let fit = line_fit(&xs, &ys);
        assert!((fit.slope + 2.0).abs() < 1e-14 && (fit.r + 1.0).abs() < 1e-14);
    }

    #[test]
    fn stderr_of_two_points() {
        let e = Estimate::from_samples(&[1.0, 3.0]);
        assert_eq!(e.mean, 2.0);
        assert!((e.stderr - 1.0).abs() < 1e-15);
    }
}
