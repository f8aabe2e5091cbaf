use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TseError};
use crate::rng::Rng;

/// Verification trial scores; `true` labels are same-speaker trials.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialScores {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl TrialScores {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(TseError::shape(
                "trial_scores",
                format!("{} scores but {} labels", scores.len(), labels.len()),
            ));
        }
        if !labels.iter().any(|&l| l) {
            return Err(TseError::Data("trial set has no positive (same-speaker) trials".into()));
        }
        if labels.iter().all(|&l| l) {
            return Err(TseError::Data("trial set has no negative (different-speaker) trials".into()));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(TseError::Data(format!("non-finite score at trial {i}")));
        }
        Ok(TrialScores { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l).count();
        (pos, self.labels.len() - pos)
    }
}

/// Operating points `(p_fa, p_miss)` for "accept when score >= t", from the
/// reject-all point `(0, 1)` to the accept-all point `(1, 0)`. Tied scores
/// form one operating point.
pub fn roc_points(trials: &TrialScores) -> Vec<(f64, f64)> {
    let (n_pos, n_neg) = trials.counts();
    let mut order: Vec<usize> = (0..trials.len()).collect();
    order.sort_by(|&a, &b| trials.scores[b].total_cmp(&trials.scores[a]));
    let mut pts = vec![(0.0, 1.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = trials.scores[order[i]];
        while i < order.len() && trials.scores[order[i]] == s {
            if trials.labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pts.push((fp as f64 / n_neg as f64, (n_pos - tp) as f64 / n_pos as f64));
    }
    pts
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Lower-left convex hull of the ROC (monotone chain over points sorted by p_fa).
fn roc_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for &p in points {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull
}

/// Equal error rate on the convex hull of the ROC: the point where the hull
/// crosses `p_miss == p_fa`, interpolated linearly along the hull segment.
pub fn eer(trials: &TrialScores) -> f64 {
    let hull = roc_hull(&roc_points(trials));
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        let da = a.1 - a.0;
        let db = b.1 - b.0;
        if da >= 0.0 && db <= 0.0 {
            if da == db {
                return a.0;
            }
            let t = da / (da - db);
            return a.0 + t * (b.0 - a.0);
        }
    }
    unreachable!("hull runs from (0,1) to (1,0) and must cross the diagonal")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        DcfParams { p_target: 0.01, c_miss: 1.0, c_fa: 1.0 }
    }
}

impl DcfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(TseError::InvalidArgument(format!("p_target must be in (0,1), got {}", self.p_target)));
        }
        if !(self.c_miss > 0.0) || !(self.c_fa > 0.0) {
            return Err(TseError::InvalidArgument("detection costs must be positive".into()));
        }
        Ok(())
    }
}

/// Minimum normalized detection cost over all thresholds.
pub fn min_dcf(trials: &TrialScores, params: DcfParams) -> Result<f64> {
    params.validate()?;
    let DcfParams { p_target, c_miss, c_fa } = params;
    let norm = (c_miss * p_target).min(c_fa * (1.0 - p_target));
    Ok(roc_points(trials)
        .into_iter()
        .map(|(pfa, pmiss)| (c_miss * pmiss * p_target + c_fa * pfa * (1.0 - p_target)) / norm)
        .fold(f64::INFINITY, f64::min))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Cosine-scored trials over every unordered pair of embeddings.
pub fn cosine_trials<S: AsRef<str>, V: AsRef<[f64]>>(items: &[(S, V)]) -> Result<TrialScores> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            scores.push(cosine_similarity(items[i].1.as_ref(), items[j].1.as_ref()));
            labels.push(items[i].0.as_ref() == items[j].0.as_ref());
        }
    }
    TrialScores::new(scores, labels)
}

/// Balanced trial list: for every speaker with at least two items,
/// `per_speaker` same-speaker pairs and `per_speaker` different-speaker pairs,
/// drawn with replacement from `rng`. `per_speaker == 0` scores every pair.
pub fn sampled_trials<S: AsRef<str>, V: AsRef<[f64]>>(items: &[(S, V)], per_speaker: usize, rng: &mut Rng) -> Result<TrialScores> {
    if per_speaker == 0 {
        return cosine_trials(items);
    }
    let mut speakers: Vec<&str> = Vec::new();
    for (s, _) in items {
        if !speakers.contains(&s.as_ref()) {
            speakers.push(s.as_ref());
        }
    }
    if speakers.len() < 2 {
        return Err(TseError::Data(format!("trials need at least 2 speakers, found {}", speakers.len())));
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for spk in &speakers {
        let own: Vec<usize> = (0..items.len()).filter(|&i| items[i].0.as_ref() == *spk).collect();
        let other: Vec<usize> = (0..items.len()).filter(|&i| items[i].0.as_ref() != *spk).collect();
        if own.len() < 2 {
            continue;
        }
        for _ in 0..per_speaker {
            let pa = rng.gen_range(0..own.len());
            let mut pb = rng.gen_range(0..own.len() - 1);
            if pb >= pa {
                pb += 1;
            }
            let (a, b) = (own[pa], own[pb]);
            scores.push(cosine_similarity(items[a].1.as_ref(), items[b].1.as_ref()));
            labels.push(true);
            let n = other[rng.gen_range(0..other.len())];
            scores.push(cosine_similarity(items[a].1.as_ref(), items[n].1.as_ref()));
            labels.push(false);
        }
    }
    TrialScores::new(scores, labels)
}
