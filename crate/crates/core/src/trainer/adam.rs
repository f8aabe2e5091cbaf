use serde::{Deserialize, Serialize};

use crate::error::{Result, TseError};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    #[serde(skip)]
    pub m: Vec<Tensor>,
    #[serde(skip)]
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// One Adam update with bias correction. Gradients are first rescaled so
/// their global L2 norm is at most `clip_norm`. Returns the pre-clip norm.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    names: &[&str],
    state: &mut AdamState,
    lr: f64,
    clip_norm: Option<f64>,
) -> Result<f64> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TseError::shape(
            "adam_step",
            format!("{} params, {} grads, {} moment slots", params.len(), grads.len(), state.m.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(TseError::shape("adam_step", format!("parameter {} shape mismatch", names.get(i).unwrap_or(&"?"))));
        }
        if let Some(j) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(TseError::Numerical(format!(
                "non-finite gradient in parameter {} at element {j}",
                names.get(i).unwrap_or(&"?")
            )));
        }
    }
    let norm = global_norm(grads);
    let factor = match clip_norm {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mk, gk) in m.iter_mut().zip(g) {
            *mk = BETA1 * *mk + (1.0 - BETA1) * gk * factor;
        }
        let v = state.v[i].data_mut();
        for (vk, gk) in v.iter_mut().zip(g) {
            let gk = gk * factor;
            *vk = BETA2 * *vk + (1.0 - BETA2) * gk * gk;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((pk, mk), vk) in p.data_mut().iter_mut().zip(m).zip(v) {
            *pk -= lr * (mk / bc1) / ((vk / bc2).sqrt() + ADAM_EPS);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::vector(vec![v])
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::zeros(&[2])], &["p"], &mut s, 0.1, None).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn constant_gradient_gives_lr_sized_steps() {
        let mut p = vec![scalar(0.0)];
        let mut s = AdamState::new(&p);
        let mut last = 0.0;
        for _ in 0..500 {
            let before = p[0].data()[0];
            adam_step(&mut p, &[scalar(3.0)], &["p"], &mut s, 1e-3, None).unwrap();
            last = p[0].data()[0] - before;
        }
        assert!((last + 1e-3).abs() < 1e-8, "step {last}");
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut p = vec![scalar(1.0)];
        let mut s = AdamState::new(&p);
        for _ in 0..2000 {
            let g = 2.0 * p[0].data()[0];
            adam_step(&mut p, &[scalar(g)], &["x"], &mut s, 1e-2, None).unwrap();
        }
        assert!(p[0].data()[0].abs() < 1e-3, "x = {}", p[0].data()[0]);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = vec![scalar(1.0), scalar(2.0)];
        let mut s = AdamState::new(&p);
        let e = adam_step(&mut p, &[scalar(0.0), scalar(f64::NAN)], &["a", "bias"], &mut s, 0.1, None).unwrap_err();
        assert!(e.to_string().contains("bias"));
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn clipping_bounds_first_step_input() {
        let mut p = vec![Tensor::vector(vec![0.0, 0.0])];
        let mut s = AdamState::new(&p);
        let n = adam_step(&mut p, &[Tensor::vector(vec![30.0, 40.0])], &["p"], &mut s, 0.1, Some(5.0)).unwrap();
        assert_eq!(n, 50.0);
        assert!((s.m[0].data()[0] - 0.1 * 3.0).abs() < 1e-12);
    }
}
