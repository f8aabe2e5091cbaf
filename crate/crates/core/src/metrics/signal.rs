use crate::error::{Result, TseError};

fn check_pair(op: &'static str, reference: &[f64], estimate: &[f64]) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(TseError::shape(
            op,
            format!("reference has {} samples, estimate {}", reference.len(), estimate.len()),
        ));
    }
    if reference.is_empty() {
        return Err(TseError::TooShort { op, needed: 1, got: 0 });
    }
    Ok(())
}

fn centered(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else if num == 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * (num / den).log10()
    }
}

/// Scale-invariant SDR in dB with both signals zero-meaned first.
///
/// Returns `+inf` for a zero residual and `-inf` for a zero projection.
pub fn si_sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    si_sdr_with(reference, estimate, true)
}

pub fn si_sdr_with(reference: &[f64], estimate: &[f64], zero_mean: bool) -> Result<f64> {
    check_pair("si_sdr", reference, estimate)?;
    let (s, e) = if zero_mean {
        (centered(reference), centered(estimate))
    } else {
        (reference.to_vec(), estimate.to_vec())
    };
    let ss = dot(&s, &s);
    if ss == 0.0 || ss <= 1e-20 * dot(reference, reference) {
        return Err(TseError::Degenerate("si_sdr: reference is silent".into()));
    }
    let alpha = dot(&e, &s) / ss;
    let mut proj = 0.0;
    let mut resid = 0.0;
    for (si, ei) in s.iter().zip(&e) {
        let p = alpha * si;
        proj += p * p;
        resid += (p - ei) * (p - ei);
    }
    Ok(ratio_db(proj, resid))
}

/// Plain energy-ratio SDR, `10 log10(|s|^2 / |s - ŝ|^2)`; not scale invariant.
pub fn sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pair("sdr", reference, estimate)?;
    let ss = dot(reference, reference);
    if ss == 0.0 {
        return Err(TseError::Degenerate("sdr: reference is silent".into()));
    }
    let resid: f64 = reference.iter().zip(estimate).map(|(s, e)| (s - e) * (s - e)).sum();
    Ok(ratio_db(ss, resid))
}

fn improvement(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        a - b
    }
}

pub fn si_sdr_improvement(reference: &[f64], estimate: &[f64], mixture: &[f64]) -> Result<f64> {
    check_pair("si_sdr_improvement", reference, mixture)?;
    Ok(improvement(si_sdr(reference, estimate)?, si_sdr(reference, mixture)?))
}

pub fn sdr_improvement(reference: &[f64], estimate: &[f64], mixture: &[f64]) -> Result<f64> {
    check_pair("sdr_improvement", reference, mixture)?;
    Ok(improvement(sdr(reference, estimate)?, sdr(reference, mixture)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_plus_infinity() {
        let s = [0.3, -0.2, 0.5, 0.1];
        assert_eq!(si_sdr(&s, &s).unwrap(), f64::INFINITY);
        assert_eq!(sdr(&s, &s).unwrap(), f64::INFINITY);
    }

    #[test]
    fn orthogonal_is_minus_infinity() {
        let s = [1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0, 0.0];
        let e = [0.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0];
        assert_eq!(si_sdr(&s, &e).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn hand_evaluated_zero_db() {
        assert_eq!(si_sdr_with(&[1.0, 0.0], &[1.0, 1.0], false).unwrap(), 0.0);
    }

    #[test]
    fn sdr_scale_sensitivity() {
        let s = [0.4, -0.1, 0.3, -0.6];
        let two: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        assert_eq!(sdr(&s, &two).unwrap(), 0.0);
        assert_eq!(si_sdr(&s, &two).unwrap(), f64::INFINITY);
        assert_eq!(sdr(&s, &[0.0; 4]).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(si_sdr(&[1.0, 2.0], &[1.0]), Err(TseError::Shape { .. })));
        assert!(matches!(si_sdr(&[0.5, 0.5], &[1.0, 0.0]), Err(TseError::Degenerate(_))));
        assert!(matches!(sdr(&[0.0, 0.0], &[1.0, 0.0]), Err(TseError::Degenerate(_))));
    }

    #[test]
    fn improvement_of_mixture_is_zero() {
        let s = [0.2, 0.5, -0.3, 0.1];
        let m = [0.6, 0.1, -0.2, 0.4];
        assert_eq!(si_sdr_improvement(&s, &m, &m).unwrap(), 0.0);
        assert_eq!(sdr_improvement(&s, &m, &m).unwrap(), 0.0);
    }
}
