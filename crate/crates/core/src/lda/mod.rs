//! Linear discriminant analysis on speaker embeddings.
//!
//! The generalized problem `S_b d = λ S_w d` is solved by Cholesky whitening
//! of the shrinkage-regularized within-class scatter followed by a Jacobi
//! eigensolve of the whitened between-class scatter.

pub mod linalg;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TseError};
use linalg::{backward_solve_t, cholesky, jacobi_eigen, whiten, SqMat};

pub const LDA_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_SHRINKAGE_EPS: f64 = 1e-4;

/// Embeddings grouped by speaker, classes in first-appearance order.
#[derive(Clone, Debug)]
pub struct LabeledEmbeddingSet {
    dim: usize,
    classes: Vec<(String, Vec<Vec<f64>>)>,
}

impl LabeledEmbeddingSet {
    pub fn new<S: AsRef<str>>(items: impl IntoIterator<Item = (S, Vec<f64>)>) -> Result<Self> {
        let mut classes: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
        let mut dim = None;
        for (spk, v) in items {
            let d = *dim.get_or_insert(v.len());
            if v.len() != d || d == 0 {
                return Err(TseError::shape("lda", format!("embedding of dim {} in a set of dim {d}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(TseError::Data(format!("non-finite embedding for speaker {}", spk.as_ref())));
            }
            match classes.iter_mut().find(|(s, _)| s == spk.as_ref()) {
                Some((_, list)) => list.push(v),
                None => classes.push((spk.as_ref().to_string(), vec![v])),
            }
        }
        let dim = dim.ok_or_else(|| TseError::Data("empty embedding set".into()))?;
        if classes.len() < 2 {
            return Err(TseError::Data(format!("LDA needs at least 2 classes, got {}", classes.len())));
        }
        if let Some((s, l)) = classes.iter().find(|(_, l)| l.len() < 2) {
            return Err(TseError::Data(format!("class {s} has {} sample(s); at least 2 required", l.len())));
        }
        Ok(LabeledEmbeddingSet { dim, classes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[(String, Vec<Vec<f64>>)] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.iter().map(|(_, l)| l.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn global_mean(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.dim];
        for (_, list) in &self.classes {
            for x in list {
                mu.iter_mut().zip(x).for_each(|(m, v)| *m += v);
            }
        }
        let n = self.len() as f64;
        mu.iter_mut().for_each(|m| *m /= n);
        mu
    }
}

fn mean(list: &[Vec<f64>]) -> Vec<f64> {
    let mut mu = vec![0.0; list[0].len()];
    for x in list {
        mu.iter_mut().zip(x).for_each(|(m, v)| *m += v);
    }
    mu.iter_mut().for_each(|m| *m /= list.len() as f64);
    mu
}

/// Within-class and between-class scatter matrices.
pub fn scatter_matrices(set: &LabeledEmbeddingSet) -> (SqMat, SqMat) {
    let d = set.dim;
    let mu = set.global_mean();
    let mut sw = SqMat::zeros(d);
    let mut sb = SqMat::zeros(d);
    let mut diff = vec![0.0; d];
    for (_, list) in &set.classes {
        let mc = mean(list);
        for x in list {
            diff.iter_mut().zip(x.iter().zip(&mc)).for_each(|(o, (a, b))| *o = a - b);
            sw.add_outer(&diff, 1.0);
        }
        diff.iter_mut().zip(mc.iter().zip(&mu)).for_each(|(o, (a, b))| *o = a - b);
        sb.add_outer(&diff, list.len() as f64);
    }
    sw.symmetrize();
    sb.symmetrize();
    (sw, sb)
}

/// `S_w + eps · tr(S_w)/D · I`
pub fn regularized_within(sw: &SqMat, eps: f64) -> SqMat {
    let mut r = sw.clone();
    let shift = eps * sw.trace() / sw.n as f64;
    for i in 0..r.n {
        *r.at_mut(i, i) += shift;
    }
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdaTransform {
    pub version: u32,
    pub dim_in: usize,
    pub dim_out: usize,
    pub global_mean: Vec<f64>,
    /// Row-major `dim_out × dim_in`; rows are projection directions.
    pub discriminants: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub shrinkage_eps: f64,
}

/// Fits an `l`-dimensional LDA. Discriminants satisfy
/// `dᵢᵀ (S_w + shrinkage) dⱼ = δᵢⱼ`.
pub fn fit_lda(set: &LabeledEmbeddingSet, l: usize, shrinkage_eps: f64) -> Result<LdaTransform> {
    let d = set.dim;
    let max_l = (set.num_classes() - 1).min(d);
    if l < 1 || l > max_l {
        return Err(TseError::InvalidArgument(format!(
            "lda dimension {l} out of range 1..={max_l} (classes {}, dim {d})",
            set.num_classes()
        )));
    }
    if !(shrinkage_eps >= 0.0) || !shrinkage_eps.is_finite() {
        return Err(TseError::InvalidArgument(format!("shrinkage eps must be >= 0, got {shrinkage_eps}")));
    }
    let (sw, sb) = scatter_matrices(set);
    let chol = cholesky(&regularized_within(&sw, shrinkage_eps))
        .map_err(|e| TseError::Numerical(format!("within-class scatter after regularization: {e}")))?;
    let (vals, vecs) = jacobi_eigen(&whiten(&chol, &sb))?;

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));

    let candidates: f64 = order[..max_l].iter().map(|&i| vals[i].max(0.0)).sum();
    if candidates <= 0.0 {
        return Err(TseError::Degenerate("between-class scatter is zero; classes share one mean".into()));
    }
    let mut discriminants = Vec::with_capacity(l * d);
    let mut eigenvalues = Vec::with_capacity(l);
    let mut evr = Vec::with_capacity(l);
    for &k in &order[..l] {
        let mut dir: Vec<f64> = (0..d).map(|i| vecs.at(i, k)).collect();
        backward_solve_t(&chol, &mut dir);
        let pivot = dir.iter().enumerate().fold(0, |best, (i, v)| if v.abs() > dir[best].abs() { i } else { best });
        if dir[pivot] < 0.0 {
            dir.iter_mut().for_each(|v| *v = -*v);
        }
        discriminants.extend_from_slice(&dir);
        eigenvalues.push(vals[k]);
        evr.push(vals[k].max(0.0) / candidates);
    }
    Ok(LdaTransform {
        version: LDA_FORMAT_VERSION,
        dim_in: d,
        dim_out: l,
        global_mean: set.global_mean(),
        discriminants,
        eigenvalues,
        explained_variance_ratio: evr,
        shrinkage_eps,
    })
}

impl LdaTransform {
    pub fn discriminant(&self, i: usize) -> &[f64] {
        &self.discriminants[i * self.dim_in..(i + 1) * self.dim_in]
    }

    /// `discriminants · (e − global_mean)`
    pub fn transform(&self, e: &[f64]) -> Result<Vec<f64>> {
        if e.len() != self.dim_in {
            return Err(TseError::shape("lda transform", format!("expected dim {}, got {}", self.dim_in, e.len())));
        }
        Ok((0..self.dim_out)
            .map(|i| self.discriminant(i).iter().zip(e.iter().zip(&self.global_mean)).map(|(w, (x, m))| w * (x - m)).sum())
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(TseError::format("lda", "shape", d));
        if self.version != LDA_FORMAT_VERSION {
            return Err(TseError::format(
                "lda",
                "version",
                format!("unsupported version {}, expected {LDA_FORMAT_VERSION}", self.version),
            ));
        }
        if self.global_mean.len() != self.dim_in {
            return bad(format!("global_mean has {} entries, dim_in is {}", self.global_mean.len(), self.dim_in));
        }
        if self.discriminants.len() != self.dim_in * self.dim_out {
            return bad(format!("discriminants has {} entries, expected {}", self.discriminants.len(), self.dim_in * self.dim_out));
        }
        if self.eigenvalues.len() != self.dim_out || self.explained_variance_ratio.len() != self.dim_out {
            return bad("eigenvalue arrays must have dim_out entries".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("lda serializes") + "\n"
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let t: LdaTransform = serde_json::from_str(text).map_err(|e| TseError::format(origin, "json", e.to_string()))?;
        t.validate().map_err(|e| match e {
            TseError::Format { field, detail, .. } => TseError::format(origin, field, detail),
            other => other,
        })?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| TseError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TseError::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> LabeledEmbeddingSet {
        LabeledEmbeddingSet::new(vec![
            ("a", vec![0.0, 1.0]),
            ("a", vec![0.2, 0.9]),
            ("a", vec![-0.1, 1.1]),
            ("b", vec![2.0, 0.0]),
            ("b", vec![2.1, 0.3]),
            ("c", vec![-1.0, -1.0]),
            ("c", vec![-1.2, -0.8]),
        ])
        .unwrap()
    }

    #[test]
    fn set_validation() {
        assert!(LabeledEmbeddingSet::new(vec![("a", vec![1.0]), ("a", vec![2.0])]).is_err());
        assert!(LabeledEmbeddingSet::new(vec![("a", vec![1.0]), ("a", vec![2.0]), ("b", vec![1.0])]).is_err());
        assert!(LabeledEmbeddingSet::new(vec![("a", vec![1.0]), ("b", vec![1.0, 2.0])]).is_err());
    }

    #[test]
    fn identical_samples_have_zero_scatter() {
        let s = LabeledEmbeddingSet::new(vec![("a", vec![1.0, 2.0]); 2].into_iter().chain(vec![("b", vec![1.0, 2.0]); 2])).unwrap();
        let (sw, sb) = scatter_matrices(&s);
        assert!(sw.data.iter().chain(&sb.data).all(|&v| v == 0.0));
        assert!(fit_lda(&s, 1, 1e-4).is_err());
    }

    #[test]
    fn l_range_enforced() {
        let s = toy();
        assert!(fit_lda(&s, 0, 1e-4).is_err());
        assert!(fit_lda(&s, 3, 1e-4).is_err());
        assert!(fit_lda(&s, 2, 1e-4).is_ok());
    }

    #[test]
    fn full_rank_evr_sums_to_one() {
        let t = fit_lda(&toy(), 2, 1e-4).unwrap();
        assert!((t.explained_variance_ratio.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(t.eigenvalues[0] >= t.eigenvalues[1]);
    }

    #[test]
    fn mean_maps_to_zero() {
        let t = fit_lda(&toy(), 2, 1e-4).unwrap();
        assert!(t.transform(&t.global_mean.clone()).unwrap().iter().all(|&v| v == 0.0));
        assert!(t.transform(&[1.0]).is_err());
    }

    #[test]
    fn version_checked() {
        let mut t = fit_lda(&toy(), 1, 1e-4).unwrap();
        t.version = 2;
        let e = LdaTransform::from_json(&t.to_json(), "mem").unwrap_err().to_string();
        assert!(e.contains("version"), "{e}");
        let good = fit_lda(&toy(), 1, 1e-4).unwrap().to_json();
        assert!(LdaTransform::from_json(&good[..good.len() / 2], "mem").is_err());
    }
}
