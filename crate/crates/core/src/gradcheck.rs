//! Finite-difference verification of every differentiable operation, plus
//! the structural self-test behind `tse selftest`.
//!
//! Each case draws random inputs, reduces the op output to a scalar through a
//! fixed random projection and compares the tape gradient with central
//! differences. The error of one instance is
//! `‖g_tape − g_fd‖₂ / max(‖g_tape‖₂, ‖g_fd‖₂, 1e-12)` over all checked inputs.

use std::time::Instant;

use rand::Rng as _;
use serde::Serialize;

use crate::embedder::{gaussian_posterior_pool, stats_pool};
use crate::error::Result;
use crate::nn::{Bound, ParamStore};
use crate::rng::{rng_for, stream_id, Rng};
use crate::separator::TransformerLayer;
use crate::tensor::{ChunkLayout, Tape, Tensor, Var};
use crate::trainer::si_sdr_loss;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_INSTANCES: usize = 20;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckConfig {
    pub instances: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Test hook: scales the tape gradient of the named op by 1.5 before the
    /// comparison, so the suite must report that op as failing.
    pub inject_fault: Option<String>,
    /// Restricts the run to ops whose name contains this substring.
    pub filter: Option<String>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            instances: DEFAULT_INSTANCES,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            seed: 0,
            inject_fault: None,
            filter: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OpReport {
    pub op: String,
    pub instances: usize,
    pub max_rel_error: f64,
    pub passed: bool,
    /// Set when an instance could not be evaluated at all.
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub ops: Vec<OpReport>,
    pub tolerance: f64,
    pub elapsed_s: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(|o| o.passed)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.ops.iter().filter(|o| !o.passed).map(|o| o.op.as_str()).collect()
    }
}

type Forward = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

struct Instance {
    inputs: Vec<Tensor>,
    /// Only the first `checked` inputs are perturbed.
    checked: usize,
    f: Forward,
}

struct Case {
    name: &'static str,
    make: fn(&mut Rng) -> Instance,
}

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape matches")
}

/// Uniform on `[-hi, -lo] ∪ [lo, hi]`, away from kinks at zero.
fn away_from_zero(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut t = uniform(rng, shape, lo, hi);
    for v in t.data_mut() {
        if rng.gen::<bool>() {
            *v = -*v;
        }
    }
    t
}

fn normal(rng: &mut Rng, shape: &[usize]) -> Tensor {
    uniform(rng, shape, -1.5, 1.5)
}

fn dims(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

fn unary(inputs: Vec<Tensor>, f: fn(&mut Tape, Var) -> Result<Var>) -> Instance {
    Instance { checked: inputs.len(), inputs, f: Box::new(move |t, v| f(t, v[0])) }
}

fn binary(inputs: Vec<Tensor>, f: fn(&mut Tape, Var, Var) -> Result<Var>) -> Instance {
    Instance { checked: inputs.len(), inputs, f: Box::new(move |t, v| f(t, v[0], v[1])) }
}

fn pair(rng: &mut Rng) -> [usize; 2] {
    [dims(rng, 1, 4), dims(rng, 1, 5)]
}

fn transformer_instance(rng: &mut Rng, fusion: bool) -> Instance {
    let d = 4;
    let heads = 2;
    let shape = [dims(rng, 1, 3), dims(rng, 2, 3), d];
    let mut store = ParamStore::new();
    let layer = TransformerLayer::new(&mut store, rng, "l", d, heads, 6, fusion);
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    let mut inputs = vec![normal(rng, &shape)];
    if fusion {
        inputs.push(normal(rng, &[d]));
    }
    let first_param = inputs.len();
    inputs.extend(store.tensors().iter().cloned());
    Instance {
        checked: inputs.len(),
        inputs,
        f: Box::new(move |t, v| {
            let p = Bound::from_vars(v[first_param..].to_vec());
            if fusion {
                layer.mhca_fuse(t, &p, v[0], v[1])
            } else {
                layer.self_attention(t, &p, v[0])
            }
        }),
    }
}

fn cases() -> Vec<Case> {
    vec![
        Case { name: "add", make: |r| { let s = pair(r); binary(vec![normal(r, &s), normal(r, &s)], Tape::add) } },
        Case { name: "add_scalar_operand", make: |r| { let s = pair(r); binary(vec![normal(r, &s), normal(r, &[])], Tape::add) } },
        Case { name: "sub", make: |r| { let s = pair(r); binary(vec![normal(r, &s), normal(r, &s)], Tape::sub) } },
        Case { name: "mul", make: |r| { let s = pair(r); binary(vec![normal(r, &s), normal(r, &s)], Tape::mul) } },
        Case { name: "mul_scalar_operand", make: |r| { let s = pair(r); binary(vec![normal(r, &[1]), normal(r, &s)], Tape::mul) } },
        Case { name: "div", make: |r| { let s = pair(r); binary(vec![normal(r, &s), away_from_zero(r, &s, 0.5, 2.0)], Tape::div) } },
        Case { name: "div_scalar_operand", make: |r| { let s = pair(r); binary(vec![normal(r, &s), away_from_zero(r, &[], 0.5, 2.0)], Tape::div) } },
        Case { name: "relu", make: |r| { let s = pair(r); unary(vec![away_from_zero(r, &s, 0.05, 2.0)], Tape::relu) } },
        Case { name: "exp", make: |r| { let s = pair(r); unary(vec![normal(r, &s)], Tape::exp) } },
        Case { name: "log", make: |r| { let s = pair(r); unary(vec![uniform(r, &s, 0.2, 3.0)], Tape::log) } },
        Case { name: "sqrt", make: |r| { let s = pair(r); unary(vec![uniform(r, &s, 0.2, 3.0)], Tape::sqrt) } },
        Case { name: "sigmoid", make: |r| { let s = pair(r); unary(vec![normal(r, &s)], Tape::sigmoid) } },
        Case { name: "tanh", make: |r| { let s = pair(r); unary(vec![normal(r, &s)], Tape::tanh) } },
        Case {
            name: "scale",
            make: |r| {
                let s = pair(r);
                let c = r.gen_range(-2.0..2.0);
                Instance { inputs: vec![normal(r, &s)], checked: 1, f: Box::new(move |t, v| t.scale(v[0], c)) }
            },
        },
        Case {
            name: "add_scalar",
            make: |r| {
                let s = pair(r);
                let c = r.gen_range(-2.0..2.0);
                Instance { inputs: vec![normal(r, &s)], checked: 1, f: Box::new(move |t, v| t.add_scalar(v[0], c)) }
            },
        },
        Case {
            name: "matmul",
            make: |r| {
                let (m, k, n) = (dims(r, 1, 4), dims(r, 1, 4), dims(r, 1, 4));
                binary(vec![normal(r, &[m, k]), normal(r, &[k, n])], Tape::matmul)
            },
        },
        Case {
            name: "bmm",
            make: |r| {
                let (b, m, k, n) = (dims(r, 1, 3), dims(r, 1, 3), dims(r, 1, 3), dims(r, 1, 3));
                binary(vec![normal(r, &[b, m, k]), normal(r, &[b, k, n])], Tape::bmm)
            },
        },
        Case {
            name: "add_bias",
            make: |r| {
                let [m, n] = pair(r);
                binary(vec![normal(r, &[m, n]), normal(r, &[n])], Tape::add_bias)
            },
        },
        Case {
            name: "linear",
            make: |r| {
                let (m, k, n) = (dims(r, 1, 4), dims(r, 1, 4), dims(r, 1, 4));
                let inputs = vec![normal(r, &[m, k]), normal(r, &[k, n]), normal(r, &[n])];
                Instance { inputs, checked: 3, f: Box::new(|t, v| t.linear(v[0], v[1], Some(v[2]))) }
            },
        },
        Case {
            name: "softmax",
            make: |r| {
                let s = [dims(r, 1, 3), dims(r, 2, 4), dims(r, 2, 4)];
                let axis = r.gen_range(0..3);
                Instance { inputs: vec![normal(r, &s)], checked: 1, f: Box::new(move |t, v| t.softmax(v[0], axis)) }
            },
        },
        Case {
            name: "layernorm",
            make: |r| {
                let s = [dims(r, 1, 3), dims(r, 2, 5)];
                let inputs = vec![normal(r, &s), normal(r, &[s[1]]), normal(r, &[s[1]])];
                Instance { inputs, checked: 3, f: Box::new(|t, v| t.layernorm(v[0], v[1], v[2], 1e-5)) }
            },
        },
        Case { name: "sum", make: |r| { let s = pair(r); unary(vec![normal(r, &s)], Tape::sum) } },
        Case { name: "mean", make: |r| { let s = pair(r); unary(vec![normal(r, &s)], Tape::mean) } },
        Case {
            name: "sum_axis",
            make: |r| {
                let s = [dims(r, 1, 3), dims(r, 1, 3), dims(r, 1, 3)];
                let axis = r.gen_range(0..3);
                Instance { inputs: vec![normal(r, &s)], checked: 1, f: Box::new(move |t, v| t.sum_axis(v[0], axis)) }
            },
        },
        Case {
            name: "mean_axis",
            make: |r| {
                let s = [dims(r, 1, 3), dims(r, 1, 3), dims(r, 1, 3)];
                let axis = r.gen_range(0..3);
                Instance { inputs: vec![normal(r, &s)], checked: 1, f: Box::new(move |t, v| t.mean_axis(v[0], axis)) }
            },
        },
        Case {
            name: "reshape",
            make: |r| {
                let s = [dims(r, 1, 3), dims(r, 1, 3), 2];
                let flat = [s[0] * s[1], 2];
                Instance { inputs: vec![normal(r, &s)], checked: 1, f: Box::new(move |t, v| t.reshape(v[0], &flat)) }
            },
        },
        Case {
            name: "permute",
            make: |r| {
                let s = [dims(r, 1, 3), dims(r, 1, 3), dims(r, 1, 3)];
                let perms = [[1, 0, 2], [2, 0, 1], [0, 2, 1], [2, 1, 0]];
                let perm = perms[r.gen_range(0..perms.len())];
                Instance { inputs: vec![normal(r, &s)], checked: 1, f: Box::new(move |t, v| t.permute(v[0], &perm)) }
            },
        },
        Case { name: "transpose", make: |r| { let s = pair(r); unary(vec![normal(r, &s)], Tape::transpose) } },
        Case {
            name: "concat",
            make: |r| {
                let axis = r.gen_range(0..2);
                let mut a = [dims(r, 1, 3), dims(r, 1, 3)];
                let mut b = a;
                a[axis] = dims(r, 1, 3);
                b[axis] = dims(r, 1, 3);
                let inputs = vec![normal(r, &a), normal(r, &b), normal(r, &a)];
                Instance { inputs, checked: 3, f: Box::new(move |t, v| t.concat(v, axis)) }
            },
        },
        Case {
            name: "resize_axis",
            make: |r| {
                let s = [dims(r, 1, 3), dims(r, 2, 5)];
                let len = dims(r, 1, 7);
                Instance { inputs: vec![normal(r, &s)], checked: 1, f: Box::new(move |t, v| t.resize_axis(v[0], 1, len)) }
            },
        },
        Case {
            name: "expand_rows",
            make: |r| {
                let s = pair(r);
                let rows = dims(r, 1, 3);
                Instance { inputs: vec![normal(r, &s)], checked: 1, f: Box::new(move |t, v| t.expand_rows(v[0], rows)) }
            },
        },
        Case {
            name: "conv1d",
            make: |r| {
                let (ci, co, k) = (dims(r, 1, 3), dims(r, 1, 3), dims(r, 1, 3));
                let (stride, dilation) = (dims(r, 1, 3), dims(r, 1, 2));
                let len = dilation * (k - 1) + 1 + dims(r, 0, 6);
                let inputs = vec![normal(r, &[ci, len]), normal(r, &[co, ci, k])];
                Instance { inputs, checked: 2, f: Box::new(move |t, v| t.conv1d(v[0], v[1], stride, dilation)) }
            },
        },
        Case {
            name: "conv1d_transpose",
            make: |r| {
                let (ci, co, k) = (dims(r, 1, 3), dims(r, 1, 3), dims(r, 1, 4));
                let (stride, len) = (dims(r, 1, 3), dims(r, 1, 5));
                let inputs = vec![normal(r, &[ci, len]), normal(r, &[ci, co, k])];
                Instance { inputs, checked: 2, f: Box::new(move |t, v| t.conv1d_transpose(v[0], v[1], stride)) }
            },
        },
        Case {
            name: "chunk",
            make: |r| {
                let (frames, k) = (dims(r, 1, 12), dims(r, 2, 5));
                let layout = ChunkLayout::new(frames, k, 0.5).expect("valid layout");
                let d = dims(r, 1, 2);
                Instance { inputs: vec![normal(r, &[frames, d])], checked: 1, f: Box::new(move |t, v| t.chunk(v[0], layout)) }
            },
        },
        Case {
            name: "overlap_add",
            make: |r| {
                let (frames, k) = (dims(r, 1, 12), dims(r, 2, 5));
                let layout = ChunkLayout::new(frames, k, 0.5).expect("valid layout");
                let d = dims(r, 1, 2);
                let x = normal(r, &[layout.chunks, layout.chunk_len, d]);
                Instance { inputs: vec![x], checked: 1, f: Box::new(move |t, v| t.overlap_add(v[0], layout)) }
            },
        },
        Case {
            name: "cross_entropy",
            make: |r| {
                let n = dims(r, 2, 6);
                let target = r.gen_range(0..n);
                Instance { inputs: vec![normal(r, &[n])], checked: 1, f: Box::new(move |t, v| t.cross_entropy(v[0], target)) }
            },
        },
        Case {
            name: "stats_pool",
            make: |r| {
                let s = [dims(r, 2, 6), dims(r, 1, 3)];
                unary(vec![normal(r, &s)], stats_pool)
            },
        },
        Case {
            name: "gaussian_posterior_pool",
            make: |r| {
                let s = [dims(r, 1, 6), dims(r, 1, 3)];
                binary(vec![normal(r, &s), normal(r, &s)], gaussian_posterior_pool)
            },
        },
        Case {
            name: "si_sdr_loss",
            make: |r| {
                let n = dims(r, 4, 24);
                let target: Vec<f64> = normal(r, &[n]).into_data();
                let est = normal(r, &[n]);
                Instance { inputs: vec![est], checked: 1, f: Box::new(move |t, v| si_sdr_loss(t, &target, v[0])) }
            },
        },
        Case { name: "self_attention", make: |r| transformer_instance(r, false) },
        Case { name: "mhca_fuse", make: |r| transformer_instance(r, true) },
    ]
}

/// Names of all checked operations, in suite order.
pub fn op_names() -> Vec<&'static str> {
    cases().iter().map(|c| c.name).collect()
}

fn evaluate(inst: &Instance, inputs: &[Tensor], projection: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = (inst.f)(&mut tape, &vars)?;
    let out = tape.value(out)?;
    Ok(out.data().iter().zip(projection.data()).map(|(a, b)| a * b).sum())
}

fn check_instance(inst: &Instance, rng: &mut Rng, cfg: &GradCheckConfig, fault: bool) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inst
        .inputs
        .iter()
        .enumerate()
        .map(|(i, t)| if i < inst.checked { tape.param(t.clone()) } else { tape.constant(t.clone()) })
        .collect();
    let out = (inst.f)(&mut tape, &vars)?;
    let projection = normal(rng, tape.shape(out)?);
    let p = tape.constant(projection.clone());
    let prod = tape.mul(out, p)?;
    let loss = tape.sum(prod)?;
    tape.backward(loss)?;

    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    let mut inputs = inst.inputs.clone();
    for (i, &v) in vars.iter().enumerate().take(inst.checked) {
        let analytic = match tape.grad(v)? {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.shape(v)?),
        };
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            inputs[i].data_mut()[j] = x0 + cfg.step;
            let up = evaluate(inst, &inputs, &projection)?;
            inputs[i].data_mut()[j] = x0 - cfg.step;
            let down = evaluate(inst, &inputs, &projection)?;
            inputs[i].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = if fault { 1.5 * analytic.data()[j] } else { analytic.data()[j] };
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
    }
    Ok(diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-12))
}

pub fn run_gradcheck(cfg: &GradCheckConfig) -> GradCheckReport {
    let start = Instant::now();
    let mut ops = Vec::new();
    for (ci, case) in cases().into_iter().enumerate() {
        if let Some(f) = &cfg.filter {
            if !case.name.contains(f.as_str()) {
                continue;
            }
        }
        let fault = cfg.inject_fault.as_deref() == Some(case.name);
        let mut rng = rng_for(cfg.seed, stream_id("gradcheck", ci as u64));
        let mut worst: f64 = 0.0;
        let mut error = None;
        for _ in 0..cfg.instances {
            let inst = (case.make)(&mut rng);
            match check_instance(&inst, &mut rng, cfg, fault) {
                Ok(e) => worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) },
                Err(e) => {
                    error = Some(e.to_string());
                    break;
                }
            }
        }
        ops.push(OpReport {
            op: case.name.to_string(),
            instances: cfg.instances,
            max_rel_error: worst,
            passed: error.is_none() && worst < cfg.tolerance,
            error,
        });
    }
    GradCheckReport { ops, tolerance: cfg.tolerance, elapsed_s: start.elapsed().as_secs_f64() }
}

#[derive(Clone, Debug, Serialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SelfTestReport {
    pub gradcheck: GradCheckReport,
    pub invariants: Vec<InvariantCheck>,
}

impl SelfTestReport {
    pub fn passed(&self) -> bool {
        self.gradcheck.passed() && self.invariants.iter().all(|c| c.passed)
    }
}

fn chunk_round_trip(rng: &mut Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (frames, k, d) = (dims(rng, 1, 300), dims(rng, 2, 40), dims(rng, 1, 4));
        let layout = ChunkLayout::new(frames, k, 0.5)?;
        let x = normal(rng, &[frames, d]);
        let y = layout.overlap_add(&layout.chunk(x.data(), d), d);
        worst = worst.max(x.data().iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    Ok(worst)
}

/// `⟨conv1d(x, w), y⟩ = ⟨x, conv1d_transpose(y, w)⟩` for encoder-shaped kernels.
fn conv_adjoint(rng: &mut Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (d, k, stride, frames) = (dims(rng, 1, 6), dims(rng, 2, 16), dims(rng, 1, 8), dims(rng, 1, 20));
        let len = (frames - 1) * stride + k;
        let mut tape = Tape::new();
        let x = tape.constant(normal(rng, &[1, len]));
        let w = tape.constant(normal(rng, &[d, 1, k]));
        let y = tape.constant(normal(rng, &[d, frames]));
        let ax = tape.conv1d(x, w, stride, 1)?;
        let aty = tape.conv1d_transpose(y, w, stride)?;
        let dot = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum::<f64>();
        let lhs = dot(tape.value(ax)?, tape.value(y)?);
        let rhs = dot(tape.value(x)?, tape.value(aty)?);
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12));
    }
    Ok(worst)
}

fn pooling_permutation(rng: &mut Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (t, d) = (dims(rng, 2, 12), dims(rng, 1, 4));
        let z = normal(rng, &[t, d]);
        let lp = normal(rng, &[t, d]);
        let mut order: Vec<usize> = (0..t).collect();
        for i in (1..t).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let permute = |x: &Tensor| {
            let data = order.iter().flat_map(|&r| x.data()[r * d..(r + 1) * d].to_vec()).collect();
            Tensor::new(vec![t, d], data).expect("same shape")
        };
        let run = |z: Tensor, lp: Tensor| -> Result<(Tensor, Tensor)> {
            let mut tape = Tape::new();
            let (zv, lv) = (tape.constant(z), tape.constant(lp));
            let s = stats_pool(&mut tape, zv)?;
            let g = gaussian_posterior_pool(&mut tape, zv, lv)?;
            Ok((tape.value(s)?.clone(), tape.value(g)?.clone()))
        };
        let (s1, g1) = run(z.clone(), lp.clone())?;
        let (s2, g2) = run(permute(&z), permute(&lp))?;
        worst = worst.max(s1.max_abs_diff(&s2)).max(g1.max_abs_diff(&g2));
    }
    Ok(worst)
}

/// Gradient suite plus chunking, adjoint and pooling invariants.
pub fn selftest(cfg: &GradCheckConfig) -> SelfTestReport {
    let gradcheck = run_gradcheck(cfg);
    let mut rng = rng_for(cfg.seed, stream_id("selftest", 0));
    type Check = (&'static str, f64, fn(&mut Rng) -> Result<f64>);
    let checks: [Check; 3] = [
        ("chunk_overlap_add_round_trip", 1e-12, chunk_round_trip),
        ("encoder_decoder_adjoint", 1e-10, conv_adjoint),
        ("pooling_permutation_invariance", 1e-10, pooling_permutation),
    ];
    let invariants = checks
        .iter()
        .map(|(name, tol, f)| match f(&mut rng) {
            Ok(err) => InvariantCheck {
                name: name.to_string(),
                passed: err < *tol,
                detail: format!("max error {err:.3e} (tolerance {tol:.0e})"),
            },
            Err(e) => InvariantCheck { name: name.to_string(), passed: false, detail: e.to_string() },
        })
        .collect();
    SelfTestReport { gradcheck, invariants }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn injected_fault_is_named() {
        let cfg = GradCheckConfig { instances: 3, filter: Some("tanh".into()), inject_fault: Some("tanh".into()), ..Default::default() };
        let r = run_gradcheck(&cfg);
        assert_eq!(r.failing(), vec!["tanh"]);
    }
}
