//! Binary-classification evaluation arithmetic: ROC points, AUC
//! (Mann-Whitney), FAR/FRR, EER threshold, HTER.
//!
//! Scores are genuine-class probabilities; a sample is accepted as genuine
//! when score >= threshold. HTER is reported at the EER threshold chosen on
//! the scored set itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Paired scores and labels (label 1 = genuine, 0 = spoof).
#[derive(Debug, Clone)]
pub struct ScoreSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Metric("empty score set".into()));
        }
        if scores.len() != labels.len() {
            return Err(Error::Metric(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Metric("non-finite score".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Metric("label outside {0,1}".into()));
        }
        Ok(ScoreSet { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    fn split(&self) -> (Vec<f64>, Vec<f64>) {
        let mut genuine = Vec::new();
        let mut spoof = Vec::new();
        for (&s, &l) in self.scores.iter().zip(&self.labels) {
            if l == 1 {
                genuine.push(s);
            } else {
                spoof.push(s);
            }
        }
        (genuine, spoof)
    }

    fn split_checked(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let (genuine, spoof) = self.split();
        if genuine.is_empty() || spoof.is_empty() {
            return Err(Error::Metric(
                "ROC-based metrics need both classes present".into(),
            ));
        }
        Ok((genuine, spoof))
    }

    /// Score CSV: `score,label` per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("score,label\n");
        for (s, l) in self.scores.iter().zip(&self.labels) {
            out.push_str(&format!("{s},{l}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 && line == "score,label" {
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (s, l) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("score row {}: missing comma", i + 1)))?;
            scores.push(
                s.parse()
                    .map_err(|_| Error::Format(format!("score row {}: bad score '{s}'", i + 1)))?,
            );
            labels.push(
                l.parse()
                    .map_err(|_| Error::Format(format!("score row {}: bad label '{l}'", i + 1)))?,
            );
        }
        ScoreSet::new(scores, labels)
    }
}

/// AUC by the Mann-Whitney statistic: P(genuine > spoof) + P(tie)/2,
/// computed via tie-corrected rank sums.
pub fn auc(scores: &ScoreSet) -> Result<f64> {
    let (genuine, spoof) = scores.split_checked()?;
    let mut all: Vec<(f64, bool)> = genuine
        .iter()
        .map(|&s| (s, true))
        .chain(spoof.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    // average ranks within tie groups
    let mut rank_sum_genuine = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0; // mean of ranks i+1..=j
        for item in &all[i..j] {
            if item.1 {
                rank_sum_genuine += avg_rank;
            }
        }
        i = j;
    }
    let ng = genuine.len() as f64;
    let ns = spoof.len() as f64;
    let u = rank_sum_genuine - ng * (ng + 1.0) / 2.0;
    Ok(u / (ng * ns))
}

/// FAR (spoof accepted: score >= threshold) and FRR (genuine rejected:
/// score < threshold) at the given threshold.
pub fn far_frr(scores: &ScoreSet, threshold: f64) -> (f64, f64) {
    let (genuine, spoof) = scores.split();
    let far = if spoof.is_empty() {
        0.0
    } else {
        spoof.iter().filter(|&&s| s >= threshold).count() as f64 / spoof.len() as f64
    };
    let frr = if genuine.is_empty() {
        0.0
    } else {
        genuine.iter().filter(|&&s| s < threshold).count() as f64 / genuine.len() as f64
    };
    (far, frr)
}

/// Candidate thresholds: midpoints of adjacent sorted unique scores plus
/// one below the minimum and one above the maximum.
pub fn candidate_thresholds(scores: &ScoreSet) -> Vec<f64> {
    let mut unique: Vec<f64> = scores.scores().to_vec();
    unique.sort_by(|a, b| a.partial_cmp(b).unwrap());
    unique.dedup();
    let mut out = Vec::with_capacity(unique.len() + 1);
    out.push(unique[0] - 1.0);
    for w in unique.windows(2) {
        out.push((w[0] + w[1]) / 2.0);
    }
    out.push(unique[unique.len() - 1] + 1.0);
    out
}

/// HTER at the EER threshold: among the candidate thresholds, pick the one
/// minimizing |FAR - FRR|, breaking ties toward smaller FAR+FRR and then
/// toward the smaller threshold. Returns (hter, threshold, far, frr).
pub fn hter(scores: &ScoreSet) -> Result<(f64, f64, f64, f64)> {
    scores.split_checked()?;
    let mut best: Option<(f64, f64, f64, f64)> = None; // (gap, sum, threshold, far/frr packed later)
    let mut best_far_frr = (0.0, 0.0);
    for t in candidate_thresholds(scores) {
        let (far, frr) = far_frr(scores, t);
        let gap = (far - frr).abs();
        let sum = far + frr;
        let better = match best {
            None => true,
            Some((bg, bs, bt, _)) => {
                gap < bg || (gap == bg && (sum < bs || (sum == bs && t < bt)))
            }
        };
        if better {
            best = Some((gap, sum, t, 0.0));
            best_far_frr = (far, frr);
        }
    }
    let (_, sum, threshold, _) = best.unwrap();
    Ok((sum / 2.0, threshold, best_far_frr.0, best_far_frr.1))
}

/// ROC points (FAR, 1-FRR) over the candidate thresholds, sorted by FAR.
pub fn roc_points(scores: &ScoreSet) -> Result<Vec<(f64, f64)>> {
    scores.split_checked()?;
    let mut pts: Vec<(f64, f64)> = candidate_thresholds(scores)
        .into_iter()
        .map(|t| {
            let (far, frr) = far_frr(scores, t);
            (far, 1.0 - frr)
        })
        .collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    Ok(pts)
}

/// Full evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub hter: f64,
    pub eer_threshold: f64,
    pub far: f64,
    pub frr: f64,
    pub roc: Vec<(f64, f64)>,
}

impl EvalReport {
    pub fn compute(scores: &ScoreSet) -> Result<Self> {
        let auc = auc(scores)?;
        let (hter, eer_threshold, far, frr) = hter(scores)?;
        Ok(EvalReport {
            auc,
            hter,
            eer_threshold,
            far,
            frr,
            roc: roc_points(scores)?,
        })
    }

    pub fn to_csv(&self) -> String {
        format!(
            "auc,hter,eer_threshold,far,frr\n{},{},{},{},{}\n",
            self.auc, self.hter, self.eer_threshold, self.far, self.frr
        )
    }
}
