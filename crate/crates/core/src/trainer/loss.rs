use crate::error::{Result, TseError};
use crate::tensor::{Tape, Tensor, Var};

pub const SI_SDR_LOSS_EPS: f64 = 1e-8;
const FLOOR: f64 = 1e-24;

fn centered(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

fn check(target: &[f64], est_len: usize) -> Result<Vec<f64>> {
    if target.len() != est_len {
        return Err(TseError::shape("si_sdr_loss", format!("target has {} samples, estimate {est_len}", target.len())));
    }
    if target.is_empty() {
        return Err(TseError::TooShort { op: "si_sdr_loss", needed: 1, got: 0 });
    }
    let s = centered(target);
    let raw: f64 = target.iter().map(|v| v * v).sum();
    let ss: f64 = s.iter().map(|v| v * v).sum();
    if ss <= 1e-20 * raw || ss == 0.0 {
        return Err(TseError::Degenerate("si_sdr_loss: target is silent".into()));
    }
    Ok(s)
}

/// Negative SI-SDR in dB of a 1-D `estimate` against a fixed `target`.
///
/// Both numerator and denominator carry `1e-8 · |ŝ|²`, so a perfect
/// estimate gives a finite loss (about −80 dB) and scale invariance holds.
pub fn si_sdr_loss(tape: &mut Tape, target: &[f64], estimate: Var) -> Result<Var> {
    let shape = tape.shape(estimate)?.to_vec();
    if shape.len() != 1 {
        return Err(TseError::shape("si_sdr_loss", format!("estimate must be 1-D, got {shape:?}")));
    }
    let s = check(target, shape[0])?;
    let ss: f64 = s.iter().map(|v| v * v).sum();
    let s_var = tape.constant(Tensor::vector(s));
    let mean = tape.mean(estimate)?;
    let e = tape.sub(estimate, mean)?;
    let prod = tape.mul(e, s_var)?;
    let dot = tape.sum(prod)?;
    let alpha = tape.scale(dot, 1.0 / ss)?;
    let proj = tape.mul(s_var, alpha)?;
    let resid = tape.sub(e, proj)?;
    let pp = tape.mul(proj, proj)?;
    let pp = tape.sum(pp)?;
    let rr = tape.mul(resid, resid)?;
    let rr = tape.sum(rr)?;
    let ee = tape.mul(e, e)?;
    let ee = tape.sum(ee)?;
    let guard = tape.scale(ee, SI_SDR_LOSS_EPS)?;
    let guard = tape.add_scalar(guard, FLOOR)?;
    let num = tape.add(pp, guard)?;
    let den = tape.add(rr, guard)?;
    let ratio = tape.div(num, den)?;
    let log = tape.log(ratio)?;
    tape.scale(log, -10.0 / std::f64::consts::LN_10)
}

/// Same quantity as [`si_sdr_loss`] evaluated without a tape.
pub fn si_sdr_loss_value(target: &[f64], estimate: &[f64]) -> Result<f64> {
    let s = check(target, estimate.len())?;
    let ss: f64 = s.iter().map(|v| v * v).sum();
    let e = centered(estimate);
    let alpha = e.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / ss;
    let (mut pp, mut rr, mut ee) = (0.0, 0.0, 0.0);
    for (si, ei) in s.iter().zip(&e) {
        let p = alpha * si;
        pp += p * p;
        rr += (ei - p) * (ei - p);
        ee += ei * ei;
    }
    let guard = SI_SDR_LOSS_EPS * ee + FLOOR;
    Ok(-10.0 * ((pp + guard) / (rr + guard)).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(n: usize, f: f64) -> Vec<f64> {
        (0..n).map(|i| (f * i as f64).sin() + 0.1).collect()
    }

    #[test]
    fn perfect_estimate_is_finite() {
        let s = sig(64, 0.3);
        let v = si_sdr_loss_value(&s, &s).unwrap();
        assert!(v.is_finite() && v < -70.0, "{v}");
    }

    #[test]
    fn tape_and_plain_agree_and_scale_invariant() {
        let s = sig(50, 0.3);
        let e: Vec<f64> = sig(50, 0.31).iter().zip(sig(50, 0.9)).map(|(a, b)| a + 0.3 * b).collect();
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(e.clone()));
        let l = si_sdr_loss(&mut tape, &s, x).unwrap();
        let v = tape.value(l).unwrap().item().unwrap();
        assert!((v - si_sdr_loss_value(&s, &e).unwrap()).abs() < 1e-12);
        let e2: Vec<f64> = e.iter().map(|x| 2.0 * x).collect();
        assert!((v - si_sdr_loss_value(&s, &e2).unwrap()).abs() < 1e-9);
        let m = crate::metrics::si_sdr(&s, &e).unwrap();
        assert!((v + m).abs() < 1e-6);
    }

    #[test]
    fn silent_target_rejected() {
        assert!(matches!(si_sdr_loss_value(&[0.2; 8], &[1.0; 8]), Err(TseError::Degenerate(_))));
    }
}
