use std::f64::consts::{FRAC_PI_4, TAU};

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::geometry::{PoseParam, PoseParams};
use crate::parallel::{map_indexed, ExecPolicy};
use crate::search::Evaluator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeConfig {
    /// Values of the four parameters held fixed (the swept ones are ignored).
    #[serde(default = "default_fixed")]
    pub fixed: PoseParams,
    /// `[row parameter, column parameter]`.
    #[serde(default = "default_sweep")]
    pub sweep: [PoseParam; 2],
    /// Cells per axis, `[rows, cols]`.
    #[serde(default = "default_resolution")]
    pub resolution: [usize; 2],
    /// Per-axis `[lo, hi)`; defaults to the parameter's full range.
    #[serde(default)]
    pub ranges: Option<[[f64; 2]; 2]>,
    #[serde(default)]
    pub execution: ExecPolicy,
}

fn default_fixed() -> PoseParams {
    PoseParams::new(0.0, 0.0, -3.0, FRAC_PI_4, 0.0, 0.0)
}

fn default_sweep() -> [PoseParam; 2] {
    [PoseParam::Pitch, PoseParam::Roll]
}

fn default_resolution() -> [usize; 2] {
    [64, 64]
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self {
            fixed: default_fixed(),
            sweep: default_sweep(),
            resolution: default_resolution(),
            ranges: None,
            execution: ExecPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub row: usize,
    pub col: usize,
    pub row_value: f64,
    pub col_value: f64,
    pub label: usize,
    pub confidence: f64,
    pub correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub sweep: [PoseParam; 2],
    pub resolution: [usize; 2],
    pub ranges: [[f64; 2]; 2],
    /// Row-major.
    pub cells: Vec<GridCell>,
}

impl LandscapeGrid {
    pub fn cell(&self, row: usize, col: usize) -> &GridCell {
        &self.cells[row * self.resolution[1] + col]
    }

    /// Heatmap with `scale × scale` pixels per cell. Correct cells are green,
    /// others red, both brightened by confidence; cells without ground truth
    /// get a colour derived from their label.
    pub fn heatmap(&self, scale: u32) -> image::RgbImage {
        let [rows, cols] = self.resolution;
        let scale = scale.max(1);
        image::RgbImage::from_fn(cols as u32 * scale, rows as u32 * scale, |x, y| {
            let c = self.cell((y / scale) as usize, (x / scale) as usize);
            let v = (80.0 + 175.0 * c.confidence).round() as u8;
            match c.correct {
                Some(true) => image::Rgb([0, v, 0]),
                Some(false) => image::Rgb([v, 0, 0]),
                None => label_color(c.label),
            }
        })
    }
}

fn label_color(label: usize) -> image::Rgb<u8> {
    let h = (label as u32).wrapping_mul(2_654_435_761);
    image::Rgb([(h >> 24) as u8, (h >> 16) as u8, (h >> 8) as u8])
}

fn full_range(eval: &Evaluator, fixed: &PoseParams, p: PoseParam) -> [f64; 2] {
    let f = eval.scene().frustum();
    match p {
        PoseParam::X | PoseParam::Y => {
            let s = f.lateral_bound(fixed.z_delta);
            [-s, s]
        }
        PoseParam::Z => f.depth_range,
        _ => [0.0, TAU],
    }
}

/// Classifies a grid over two parameters, the rest held at `fixed`. Cell
/// `(i, j)` is evaluated at its centre.
pub fn landscape_grid(eval: &Evaluator, cfg: &LandscapeConfig) -> Result<LandscapeGrid, AnalysisError> {
    let [rows, cols] = cfg.resolution;
    if rows < 2 || cols < 2 {
        return Err(AnalysisError::invalid("landscape resolution must be at least 2 per axis"));
    }
    if cfg.sweep[0] == cfg.sweep[1] {
        return Err(AnalysisError::invalid("the two swept parameters must differ"));
    }
    let ranges = cfg.ranges.unwrap_or_else(|| {
        [
            full_range(eval, &cfg.fixed, cfg.sweep[0]),
            full_range(eval, &cfg.fixed, cfg.sweep[1]),
        ]
    });
    let centre = |range: [f64; 2], n: usize, i: usize| {
        range[0] + (i as f64 + 0.5) * (range[1] - range[0]) / n as f64
    };
    let results = map_indexed(cfg.execution, rows * cols, |k| {
        let (row, col) = (k / cols, k % cols);
        let (rv, cv) = (centre(ranges[0], rows, row), centre(ranges[1], cols, col));
        let pose = cfg.fixed.with(cfg.sweep[0], rv).with(cfg.sweep[1], cv);
        let r = eval.record(k, crate::search::Phase::Landscape, &pose, None)?;
        Ok::<_, AnalysisError>(GridCell {
            row,
            col,
            row_value: rv,
            col_value: cv,
            label: r.top_label,
            confidence: r.confidence,
            correct: r.correct,
        })
    });
    Ok(LandscapeGrid {
        sweep: cfg.sweep,
        resolution: cfg.resolution,
        ranges,
        cells: results.into_iter().collect::<Result<_, _>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{PlantedRegion, SyntheticConfig};
    use crate::testkit::{cube_scene, synthetic};

    #[test]
    fn constant_oracle_gives_uniform_grid() {
        let eval = Evaluator::new(cube_scene(16, Some(1)), synthetic(SyntheticConfig::uniform(3)));
        let mut cfg = LandscapeConfig::default();
        cfg.resolution = [4, 5];
        let g = landscape_grid(&eval, &cfg).unwrap();
        assert_eq!(g.cells.len(), 20);
        assert!(g.cells.iter().all(|c| c.label == 0 && c.correct == Some(false)));
        assert_eq!(g.cell(1, 2).row, 1);
        assert_eq!(g.cell(1, 2).col, 2);
        assert!((g.cell(0, 0).row_value - TAU / 8.0).abs() < 1e-12);
        let img = g.heatmap(3);
        assert_eq!(img.dimensions(), (15, 12));
    }

    #[test]
    fn planted_disc_matches_membership() {
        // class 0 wins inside pitch/roll radius 0.8 around (π, π): ρ < ½ of radius 1.6
        let cfg = SyntheticConfig {
            seed: 0,
            num_classes: 2,
            bias: vec![0.0, 1.0],
            pixel_scale: 0.0,
            regions: vec![PlantedRegion::bump(
                0,
                [0.0, 0.0, 0.0, 0.0, 3.0, 3.2],
                [None, None, None, None, Some(1.6), Some(1.6)],
                2.0,
            )],
            supports_embedding: true,
        };
        let eval = Evaluator::new(cube_scene(16, Some(0)), synthetic(cfg));
        let mut lc = LandscapeConfig::default();
        lc.resolution = [24, 24];
        let g = landscape_grid(&eval, &lc).unwrap();
        let mut inside = 0;
        for c in &g.cells {
            let d = ((c.row_value - 3.0).powi(2) + (c.col_value - 3.2).powi(2)).sqrt();
            assert_eq!(c.correct, Some(d < 0.8), "cell {},{}", c.row, c.col);
            inside += (d < 0.8) as usize;
        }
        assert!(inside > 10);
    }

    #[test]
    fn rejects_bad_resolution() {
        let eval = Evaluator::new(cube_scene(16, None), synthetic(SyntheticConfig::uniform(2)));
        let mut cfg = LandscapeConfig::default();
        cfg.resolution = [1, 8];
        assert!(landscape_grid(&eval, &cfg).is_err());
    }
}
