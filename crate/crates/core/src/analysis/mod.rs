//! Measurements over pose space: censuses, landscape grids, sensitivity,
//! lighting overlap, transfer, yaw sweeps, embedding neighbours and
//! targeted-attack comparisons.

mod census;
mod landscape;
mod neighbors;
mod overlap;
mod sensitivity;
mod targeted;
mod transfer;
mod yaw_sweep;

use std::collections::BTreeMap;
use std::io::Write;

pub use census::{census, CensusConfig, CensusReport, SettingCensus};
pub use landscape::{landscape_grid, GridCell, LandscapeConfig, LandscapeGrid};
pub use neighbors::{nearest_neighbors, Neighbor};
pub use overlap::{lighting_overlap, top_classes, OverlapScore, TOP_CLASSES};
pub use sensitivity::{
    median_of_medians, sensitivity, summarize_object, ObjectSensitivity, ParamSummary,
    ResampleRecord, SensitivityConfig, SensitivityRun, SensitivityTable,
};
pub use targeted::{compare_targeted, CaseResult, TargetedConfig, TargetedSummary};
pub use transfer::{transfer, ClassMapping, TransferConfig, TransferRecord, TransferReport};
pub use yaw_sweep::{yaw_sweep_eval, yaw_sweep_poses, YawSweepReport, YawView, SWEEP_DISTANCES};

use crate::classifier::ClassifierError;
use crate::renderer::RenderError;
use crate::search::SearchError;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("invalid analysis input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AnalysisError {
    fn invalid(msg: impl Into<String>) -> Self {
        AnalysisError::InvalidInput(msg.into())
    }
}

/// Label → count.
pub type Histogram = BTreeMap<usize, usize>;

/// Median; the mean of the two middle values for an even count.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Writes serializable rows as CSV with a header.
pub fn write_csv<W: Write, T: serde::Serialize>(out: W, rows: &[T]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_conventions() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0]), Some(3.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[5.0, 1.0, 3.0]), Some(3.0));
    }

    #[test]
    fn csv_has_header() {
        #[derive(serde::Serialize)]
        struct Row {
            a: u32,
            b: f64,
        }
        let mut buf = Vec::new();
        write_csv(&mut buf, &[Row { a: 1, b: 0.5 }]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a,b\n1,0.5\n");
    }
}
