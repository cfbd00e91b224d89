//! Kaiser-Bessel window.

/// Modified Bessel function of the first kind, order zero, by power series.
pub fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// `I0(β√(1 − (t/support)²)) / I0(β)` for `|t| < support`, zero elsewhere.
pub fn kaiser_bessel(t: f64, beta: f64, support: f64) -> f64 {
    let z = t / support;
    if z.abs() >= 1.0 {
        return 0.0;
    }
    bessel_i0(beta * (1.0 - z * z).sqrt()) / bessel_i0(beta)
}

/// Kaiser-Bessel window with its edge pedestal `1/I0(β)` removed and
/// rescaled to peak 1, so it falls continuously to zero at `±support`.
pub fn kaiser_bessel_tapered(t: f64, beta: f64, support: f64) -> f64 {
    let z = t / support;
    if z.abs() >= 1.0 {
        return 0.0;
    }
    let i0_beta = bessel_i0(beta);
    (bessel_i0(beta * (1.0 - z * z).sqrt()) - 1.0) / (i0_beta - 1.0)
}
