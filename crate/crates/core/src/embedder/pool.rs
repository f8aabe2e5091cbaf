use crate::error::{Result, TseError};
use crate::tensor::{Tape, Var};

pub const STATS_EPS: f64 = 1e-8;

/// `[T×D] → [2D]`: per-dimension mean then population standard deviation
/// `sqrt(var + 1e-8)`.
pub fn stats_pool(tape: &mut Tape, x: Var) -> Result<Var> {
    let shape = tape.shape(x)?.to_vec();
    if shape.len() != 2 {
        return Err(TseError::shape("stats_pool", format!("expected [T×D], got {shape:?}")));
    }
    if shape[0] < 2 {
        return Err(TseError::TooShort { op: "stats_pool", needed: 2, got: shape[0] });
    }
    let mean = tape.mean_axis(x, 0)?;
    let rows = tape.expand_rows(mean, shape[0])?;
    let dev = tape.sub(x, rows)?;
    let sq = tape.mul(dev, dev)?;
    let var = tape.mean_axis(sq, 0)?;
    let var = tape.add_scalar(var, STATS_EPS)?;
    let std = tape.sqrt(var)?;
    tape.concat(&[mean, std], 0)
}

/// Posterior mean of a per-dimension Gaussian with standard-normal prior:
/// `φ_d = Σ_t exp(lp[t,d]) z[t,d] / (1 + Σ_t exp(lp[t,d]))`.
pub fn gaussian_posterior_pool(tape: &mut Tape, z: Var, log_prec: Var) -> Result<Var> {
    let (sz, sp) = (tape.shape(z)?.to_vec(), tape.shape(log_prec)?.to_vec());
    if sz.len() != 2 || sz != sp {
        return Err(TseError::shape("gaussian_posterior_pool", format!("z {sz:?} and log_prec {sp:?} must be equal [T×D]")));
    }
    let prec = tape.exp(log_prec)?;
    let weighted = tape.mul(prec, z)?;
    let num = tape.sum_axis(weighted, 0)?;
    let total = tape.sum_axis(prec, 0)?;
    let den = tape.add_scalar(total, 1.0)?;
    tape.div(num, den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn run2(z: Vec<f64>, lp: Vec<f64>, t: usize, d: usize) -> Vec<f64> {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::new(vec![t, d], z).unwrap());
        let lp = tape.constant(Tensor::new(vec![t, d], lp).unwrap());
        let y = gaussian_posterior_pool(&mut tape, z, lp).unwrap();
        tape.value(y).unwrap().data().to_vec()
    }

    #[test]
    fn stats_hand_example() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 1], vec![0.0, 2.0]).unwrap());
        let y = stats_pool(&mut tape, x).unwrap();
        let v = tape.value(y).unwrap().data().to_vec();
        assert_eq!(v[0], 1.0);
        assert!((v[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn stats_needs_two_frames() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap());
        assert!(matches!(stats_pool(&mut tape, x), Err(TseError::TooShort { .. })));
    }

    #[test]
    fn posterior_closed_form() {
        assert!((run2(vec![1.0, 3.0], vec![0.0, 0.0], 2, 1)[0] - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn prior_and_frame_dominance() {
        assert!(run2(vec![5.0, -3.0], vec![-60.0, -60.0], 2, 1)[0].abs() < 1e-20);
        let v = run2(vec![5.0, -3.0], vec![20.0, 0.0], 2, 1)[0];
        assert!((v - 5.0).abs() < 1e-6, "{v}");
    }
}
