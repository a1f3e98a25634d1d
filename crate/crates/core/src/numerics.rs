//! Scalar and vector numerics shared by every model component, plus the
//! central finite-difference gradient oracle used throughout the tests.

use crate::error::{Error, Result};

/// Temperature-scaled softmax, computed after subtracting the maximum.
pub fn softmax(v: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("softmax input {i} is not finite")));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|&x| ((x - max) / temperature).exp()).collect();
    let z: f64 = out.iter().sum();
    for o in &mut out {
        *o /= z;
    }
    Ok(out)
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| sigmoid_scalar(x)).collect()
}

/// `ln(1 + eˣ)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn logsumexp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Shannon entropy in nats; zero-probability entries contribute nothing.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Population (divide-by-n) standard deviation.
pub fn population_std(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Standard-normal log-density of a vector.
pub fn std_normal_logpdf(u: &[f64]) -> f64 {
    -0.5 * u.iter().map(|x| x * x).sum::<f64>() - 0.5 * u.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Result of comparing an analytic gradient against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_coordinate: usize,
    pub numeric: Vec<f64>,
}

/// Compares `analytic` with central finite differences of `f` at `theta`.
///
/// Relative error per coordinate is `|a - fd| / max(1, |fd|)`.
pub fn grad_check<F>(mut f: F, theta: &[f64], analytic: &[f64], eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!("grad_check step {eps} outside [1e-7, 1e-3]")));
    }
    if analytic.len() != theta.len() {
        return Err(Error::Shape(format!(
            "analytic gradient has {} entries for {} parameters",
            analytic.len(),
            theta.len()
        )));
    }
    let mut probe = theta.to_vec();
    let mut numeric = Vec::with_capacity(theta.len());
    let mut worst = (0.0_f64, 0usize);
    for i in 0..theta.len() {
        probe[i] = theta[i] + eps;
        let up = f(&probe);
        probe[i] = theta[i] - eps;
        let down = f(&probe);
        probe[i] = theta[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!("objective not finite when perturbing coordinate {i}")));
        }
        let fd = (up - down) / (2.0 * eps);
        let rel = (analytic[i] - fd).abs() / fd.abs().max(1.0);
        if rel > worst.0 {
            worst = (rel, i);
        }
        numeric.push(fd);
    }
    Ok(GradCheckReport { max_rel_err: worst.0, worst_coordinate: worst.1, numeric })
}
