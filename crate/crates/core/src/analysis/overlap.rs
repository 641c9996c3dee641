use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{AnalysisError, Histogram};

pub const TOP_CLASSES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapScore {
    /// Top classes per setting, most frequent first.
    pub sets: [Vec<usize>; 3],
    /// `100 · |∩| / |∪|` over the three sets.
    pub score: f64,
}

/// The `k` most frequent labels; equal counts go to the lower label.
pub fn top_classes(hist: &Histogram, k: usize) -> Vec<usize> {
    let mut entries: Vec<(usize, usize)> =
        hist.iter().filter(|(_, &c)| c > 0).map(|(&l, &c)| (l, c)).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    entries.into_iter().take(k).map(|(l, _)| l).collect()
}

/// Intersection-over-union of the top-50 label sets of three histograms
/// (one per lighting setting).
pub fn lighting_overlap(histograms: [&Histogram; 3]) -> Result<OverlapScore, AnalysisError> {
    if histograms.iter().any(|h| h.values().all(|&c| c == 0)) {
        return Err(AnalysisError::invalid("lighting histograms must be non-empty"));
    }
    let sets = histograms.map(|h| top_classes(h, TOP_CLASSES));
    let as_set = |v: &Vec<usize>| v.iter().copied().collect::<BTreeSet<_>>();
    let (a, b, c) = (as_set(&sets[0]), as_set(&sets[1]), as_set(&sets[2]));
    let inter = a.iter().filter(|x| b.contains(x) && c.contains(x)).count();
    let union = a.union(&b).chain(c.iter()).collect::<BTreeSet<_>>().len();
    Ok(OverlapScore {
        sets,
        score: 100.0 * inter as f64 / union as f64,
    })
}
