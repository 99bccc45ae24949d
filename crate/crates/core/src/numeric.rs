//! Small numerically stable helpers shared by the oracles and chains.

/// `1 / (1 + e^{-x})` without overflow for large `|x|`.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln Σ e^{x_i}`; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `x ln x` with the convention `0 ln 0 = 0`.
#[inline]
pub fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `Ent_μ[f] = E[f ln f] - E[f] ln E[f]` for nonnegative `f`.
pub fn entropy(mu: &[f64], f: &[f64]) -> f64 {
    let mean: f64 = mu.iter().zip(f).map(|(p, x)| p * x).sum();
    let e: f64 = mu.iter().zip(f).map(|(p, x)| p * xlogx(*x)).sum();
    (e - xlogx(mean)).max(0.0)
}

pub fn variance(mu: &[f64], f: &[f64]) -> f64 {
    let mean: f64 = mu.iter().zip(f).map(|(p, x)| p * x).sum();
    mu.iter()
        .zip(f)
        .map(|(p, x)| p * (x - mean) * (x - mean))
        .sum()
}

/// Least-squares slope and intercept of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_matches_definition() {
        assert_eq!(logistic(0.0), 0.5);
        assert!((logistic(3f64.ln()) - 0.75).abs() < 1e-15);
        assert_eq!(logistic(-800.0), 0.0);
        assert_eq!(logistic(800.0), 1.0);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn entropy_of_constant_is_zero() {
        let mu = [0.25, 0.75];
        assert_eq!(entropy(&mu, &[2.0, 2.0]), 0.0);
        let e = entropy(&mu, &[0.0, 1.0]);
        // f = indicator: Ent = -E f ln E f = -0.75 ln 0.75
        assert!((e + 0.75 * 0.75f64.ln()).abs() < 1e-15);
    }
}
