use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::classifier::{Classifier, ClassifierError};
use crate::parallel::{map_slice, ExecPolicy};
use crate::renderer::RenderOutput;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

/// For each query, the `k` corpus items closest in embedding space
/// (Euclidean), ties broken by corpus index.
pub fn nearest_neighbors(
    backend: &dyn Classifier,
    queries: &[RenderOutput],
    corpus: &[RenderOutput],
    k: usize,
    policy: ExecPolicy,
) -> Result<Vec<Vec<Neighbor>>, AnalysisError> {
    if !backend.info().supports_embedding {
        return Err(ClassifierError::Unsupported("embeddings").into());
    }
    let embed = |imgs: &[RenderOutput]| {
        map_slice(policy, imgs, |im| backend.embed(im))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()
    };
    let q = embed(queries)?;
    let c = embed(corpus)?;
    if let Some(bad) = q.iter().chain(&c).find(|e| e.len() != q.first().map_or(e.len(), |f| f.len())) {
        return Err(AnalysisError::invalid(format!(
            "embedding length {} differs across images",
            bad.len()
        )));
    }
    Ok(map_slice(policy, &q, |qe| {
        let mut all: Vec<Neighbor> = c
            .iter()
            .enumerate()
            .map(|(index, ce)| Neighbor {
                index,
                distance: qe.iter().zip(ce).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
            })
            .collect();
        all.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index)));
        all.truncate(k);
        all
    }))
}
