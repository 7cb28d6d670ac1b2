//! Small statistics toolkit: summary moments, Kolmogorov–Smirnov and χ²
//! goodness-of-fit, and special functions needed for their p-values.

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Sample standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Standard error of the mean.
pub fn std_err(xs: &[f64]) -> f64 {
    std_dev(xs) / (xs.len() as f64).sqrt()
}

/// Median (copies and sorts).
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Index of dispersion, variance/mean (1 for Poisson).
pub fn dispersion_index(counts: &[f64]) -> f64 {
    variance(counts) / mean(counts)
}

/// One-sample Kolmogorov–Smirnov statistic of `sample` against the continuous
/// CDF `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut v = sample.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        let lo = (f - i as f64 / n).abs();
        let hi = ((i + 1) as f64 / n - f).abs();
        d = d.max(lo).max(hi);
    }
    d
}

/// Asymptotic Kolmogorov p-value P(D_n > d) via the Kolmogorov distribution
/// Q(t) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2 k² t²) at t = √n·d (with the usual
/// Stephens small-sample adjustment).
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let t = d * (sn + 0.12 + 0.11 / sn);
    if t < 1e-8 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * t * t).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// ln Γ(x) by the Lanczos approximation.
pub fn ln_gamma(x: f64) -> f64 {
    // g = 7, n = 9 Lanczos coefficients
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Γ(x) for positive arguments.
pub fn gamma(x: f64) -> f64 {
    ln_gamma(x).exp()
}

/// Regularized lower incomplete gamma P(a, x).
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // series representation
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut n = a;
        for _ in 0..500 {
            n += 1.0;
            term *= x / n;
            sum += term;
            if term.abs() < sum.abs() * 1e-15 {
                break;
            }
        }
        sum * (-x + a * x.ln() - ln_gamma(a)).exp()
    } else {
        1.0 - gamma_q_cf(a, x)
    }
}

/// Regularized upper incomplete gamma Q(a, x) by continued fraction (x > a+1).
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// χ² upper-tail p-value with `dof` degrees of freedom.
pub fn chi_square_p(stat: f64, dof: usize) -> f64 {
    (1.0 - gamma_p(dof as f64 / 2.0, stat / 2.0)).clamp(0.0, 1.0)
}

/// Pearson χ² test of observed counts against expected counts (same length).
/// Returns (statistic, p-value) with dof = bins − 1 − `fitted_params`.
pub fn chi_square_test(observed: &[f64], expected: &[f64], fitted_params: usize) -> (f64, f64) {
    assert_eq!(observed.len(), expected.len());
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&o, &e)| (o - e) * (o - e) / e)
        .sum();
    let dof = observed.len().saturating_sub(1 + fitted_params).max(1);
    (stat, chi_square_p(stat, dof))
}

/// χ² fit of nonnegative-integer data against a geometric(1/2) law on
/// {1, 2, 3, ...}, pooling the tail so every expected count is ≥ 5.
/// Returns (statistic, p-value, bins used).
pub fn geometric_half_fit(data: &[u64]) -> (f64, f64, usize) {
    let n = data.len() as f64;
    // choose k_max so that expected tail mass n·2^{−k_max} ≥ 5
    let mut k_max = 1usize;
    while n * 0.5f64.powi(k_max as i32 + 1) >= 5.0 && k_max < 40 {
        k_max += 1;
    }
    let mut observed = vec![0.0f64; k_max];
    for &x in data {
        let k = (x.max(1) as usize).min(k_max);
        observed[k - 1] += 1.0;
    }
    let mut expected = vec![0.0f64; k_max];
    for k in 1..k_max {
        expected[k - 1] = n * 0.5f64.powi(k as i32);
    }
    expected[k_max - 1] = n * 0.5f64.powi(k_max as i32 - 1); // pooled tail P(X ≥ k_max)
    let (stat, p) = chi_square_test(&observed, &expected, 0);
    (stat, p, k_max)
}
