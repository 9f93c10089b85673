//! One-sided Clopper-Pearson lower confidence bounds.
//!
//! The regularized incomplete beta function is evaluated with the modified
//! Lentz continued fraction, switching to the symmetric form
//! `I_x(a, b) = 1 − I_{1−x}(b, a)` when `x > a/(a+b)`. Quantiles are found
//! by Newton steps kept inside a shrinking bisection bracket.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on returned quantiles.
pub const QUANTILE_TOLERANCE: f64 = 1e-12;

/// Significance level `α`; the confidence level is `1 − α`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSpec {
    alpha: f64,
}

impl ConfidenceSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        Ok(ConfidenceSpec { alpha })
    }

    pub fn from_confidence(confidence: f64) -> Result<Self> {
        Self::new(1.0 - confidence)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

fn check_shapes(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Numeric(format!("beta shapes must be positive, got ({a}, {b})")));
    }
    Ok(())
}

/// Continued fraction for `I_x(a, b)` (converges fast for `x < a/(a+b)`).
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=100_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    check_shapes(a, b)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Numeric(format!("incomplete beta argument {x} outside [0, 1]")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    let front = ln_front.exp();
    if x <= a / (a + b) {
        Ok(front * beta_continued_fraction(x, a, b) / a)
    } else {
        Ok(1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b)
    }
}

fn beta_density(x: f64, a: f64, b: f64, ln_b: f64) -> f64 {
    ((a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_b).exp()
}

/// `x` with `I_x(a, b) = q`.
pub fn beta_quantile(q: f64, a: f64, b: f64) -> Result<f64> {
    check_shapes(a, b)?;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Numeric(format!("quantile level must lie in (0, 1), got {q}")));
    }
    let ln_b = ln_beta(a, b);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x = a / (a + b);
    for _ in 0..400 {
        let f = regularized_incomplete_beta(x, a, b)? - q;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo < QUANTILE_TOLERANCE * 1e-3 {
            break;
        }
        let density = beta_density(x, a, b, ln_b);
        let newton = x - f / density;
        let next = if density > 0.0 && newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() < QUANTILE_TOLERANCE * 1e-3 {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x.clamp(lo, hi))
}

/// One-sided lower bound `B(α; m, N − m + 1)`, with 0 when `m = 0`.
pub fn clopper_pearson_lower(successes: u64, trials: u64, spec: ConfidenceSpec) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Numeric("Clopper-Pearson needs at least one trial".into()));
    }
    if successes > trials {
        return Err(Error::Numeric(format!(
            "success count {successes} exceeds trial count {trials}"
        )));
    }
    if successes == 0 {
        return Ok(0.0);
    }
    beta_quantile(spec.alpha(), successes as f64, (trials - successes + 1) as f64)
}
