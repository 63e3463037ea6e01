//! Reading spins off predicted images and scoring them against the truth.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dataset::{Image, ImageSpec};
use crate::error::{Error, Result};
use crate::spin_model::SpinCluster;

/// Default matching radius in coupling space, Hz.
pub const DEFAULT_RADIUS: f64 = 1e3;
/// Default peak threshold, relative to the single-spin amplitude of 1.
pub const DEFAULT_THRESHOLD: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectedPeak {
    pub a_par: f64,
    pub a_perp: f64,
    pub intensity: f64,
}

/// Vertex offset of a parabola through (-1, l), (0, c), (1, r). The fit is
/// done on logarithms when all three values are positive, which is exact
/// for Gaussian peaks.
fn parabolic_offset(l: f64, c: f64, r: f64) -> f64 {
    let (l, c, r) = if l > 0.0 && c > 0.0 && r > 0.0 {
        (l.ln(), c.ln(), r.ln())
    } else {
        (l, c, r)
    };
    let denom = l - 2.0 * c + r;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
}

/// Strict 8-neighbourhood maxima at or above `threshold`, refined to
/// sub-pixel precision per axis and mapped back to couplings.
pub fn extract_peaks(image: &Image, spec: &ImageSpec, threshold: f64) -> Result<Vec<DetectedPeak>> {
    if image.height != spec.height || image.width != spec.width || image.data.len() != spec.height * spec.width {
        return Err(Error::domain(format!(
            "image is {}x{}, spec expects {}x{}",
            image.height, image.width, spec.height, spec.width
        )));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::domain(format!("threshold {threshold} outside (0, 1]")));
    }
    let (h, w) = (image.height as isize, image.width as isize);
    let at = |r: isize, c: isize| image.data[(r * w + c) as usize];
    let mut peaks = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let v = at(r, c);
            if !(v >= threshold) {
                continue;
            }
            let mut is_max = true;
            'nbr: for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if (dr, dc) == (0, 0) || rr < 0 || cc < 0 || rr >= h || cc >= w {
                        continue;
                    }
                    if at(rr, cc) >= v {
                        is_max = false;
                        break 'nbr;
                    }
                }
            }
            if !is_max {
                continue;
            }
            let dr = if r > 0 && r + 1 < h {
                parabolic_offset(at(r - 1, c), v, at(r + 1, c))
            } else {
                0.0
            };
            let dc = if c > 0 && c + 1 < w {
                parabolic_offset(at(r, c - 1), v, at(r, c + 1))
            } else {
                0.0
            };
            let (a_par, a_perp) = spec.to_coupling(r as f64 + dr, c as f64 + dc);
            peaks.push(DetectedPeak {
                a_par,
                a_perp,
                intensity: v,
            });
        }
    }
    Ok(peaks)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchPair {
    pub truth: usize,
    pub pred: usize,
    /// Hz.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    /// Sorted by truth index.
    pub pairs: Vec<MatchPair>,
}

impl MatchResult {
    pub fn total_distance(&self) -> f64 {
        self.pairs.iter().map(|p| p.distance).sum()
    }
}

/// Minimum-cost assignment of every row of an n×m cost matrix (n ≤ m) to a
/// distinct column. Returns the column of each row.
///
/// Shortest augmenting paths with vertex potentials, O(n²m).
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    debug_assert!(n <= m);
    // 1-based with a virtual column 0, as in the textbook formulation
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if owner[j] > 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

fn distance(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    (ax - bx).hypot(ay - by)
}

/// Optimal one-to-one matching of predictions to truths within `radius`
/// (Euclidean, Hz): the largest number of pairs, and among those the
/// smallest total distance.
pub fn match_peaks(truth: &SpinCluster, pred: &[DetectedPeak], radius: f64) -> Result<MatchResult> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::domain(format!("matching radius must be positive, got {radius}")));
    }
    let truths: Vec<(f64, f64)> = truth.iter().map(|s| (s.a_par, s.a_perp)).collect();
    let preds: Vec<(f64, f64)> = pred.iter().map(|p| (p.a_par, p.a_perp)).collect();
    let k = truths.len().max(preds.len());
    // Each admissible pair is worth more than any possible distance total,
    // so cardinality is maximised first.
    let bonus = k as f64 + 1.0;
    let dist = |i: usize, j: usize| distance(truths[i].0, truths[i].1, preds[j].0, preds[j].1);
    let cost: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    if i < truths.len() && j < preds.len() {
                        let d = dist(i, j);
                        if d <= radius {
                            return d / radius - bonus;
                        }
                    }
                    0.0
                })
                .collect()
        })
        .collect();
    let assignment = hungarian(&cost);
    let pairs: Vec<MatchPair> = assignment
        .iter()
        .enumerate()
        .filter(|&(i, &j)| i < truths.len() && j < preds.len() && dist(i, j) <= radius)
        .map(|(i, &j)| MatchPair {
            truth: i,
            pred: j,
            distance: dist(i, j),
        })
        .collect();
    let tp = pairs.len();
    Ok(MatchResult {
        true_pos: tp,
        false_pos: preds.len() - tp,
        false_neg: truths.len() - tp,
        pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1. An empty ratio counts as 0, except that a
/// sample with no truths and no predictions scores 1 everywhere.
pub fn prf1(m: &MatchResult) -> Scores {
    let (tp, fp, fneg) = (m.true_pos as f64, m.false_pos as f64, m.false_neg as f64);
    if m.true_pos == 0 && m.false_pos == 0 && m.false_neg == 0 {
        return Scores {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
    }
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    Scores { precision, recall, f1 }
}

/// Mean absolute (A^z, A^⊥) error over matched pairs, Hz. `None` without
/// any match.
pub fn mae(m: &MatchResult, truth: &SpinCluster, pred: &[DetectedPeak]) -> Option<(f64, f64)> {
    if m.pairs.is_empty() {
        return None;
    }
    let (mut az, mut ap) = (0.0, 0.0);
    for p in &m.pairs {
        let t = &truth.spins[p.truth];
        az += (t.a_par - pred[p.pred].a_par).abs();
        ap += (t.a_perp - pred[p.pred].a_perp).abs();
    }
    let n = m.pairs.len() as f64;
    Some((az / n, ap / n))
}

/// Scores of one sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleScore {
    pub n_true: usize,
    pub scores: Scores,
    pub mae: Option<(f64, f64)>,
}

pub fn score_sample(truth: &SpinCluster, pred: &[DetectedPeak], radius: f64) -> Result<SampleScore> {
    let m = match_peaks(truth, pred, radius)?;
    Ok(SampleScore {
        n_true: truth.len(),
        scores: prf1(&m),
        mae: mae(&m, truth, pred),
    })
}

/// Per-sample averages over all samples with the same true spin count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupScore {
    pub n: usize,
    pub samples: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Averaged over the samples of the group that have at least one match.
    pub mae_az: Option<f64>,
    pub mae_aperp: Option<f64>,
}

pub fn aggregate_by_n(samples: &[SampleScore]) -> Vec<GroupScore> {
    let mut groups: BTreeMap<usize, Vec<&SampleScore>> = BTreeMap::new();
    for s in samples {
        groups.entry(s.n_true).or_default().push(s);
    }
    groups
        .into_iter()
        .map(|(n, members)| {
            let count = members.len() as f64;
            let mean = |f: fn(&Scores) -> f64| members.iter().map(|s| f(&s.scores)).sum::<f64>() / count;
            let with_mae: Vec<(f64, f64)> = members.iter().filter_map(|s| s.mae).collect();
            let k = with_mae.len() as f64;
            let (mae_az, mae_aperp) = if with_mae.is_empty() {
                (None, None)
            } else {
                (
                    Some(with_mae.iter().map(|m| m.0).sum::<f64>() / k),
                    Some(with_mae.iter().map(|m| m.1).sum::<f64>() / k),
                )
            };
            GroupScore {
                n,
                samples: members.len(),
                precision: mean(|s| s.precision),
                recall: mean(|s| s.recall),
                f1: mean(|s| s.f1),
                mae_az,
                mae_aperp,
            }
        })
        .collect()
}
