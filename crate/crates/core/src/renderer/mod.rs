//! Deterministic software rasterizer.
//!
//! Perspective camera on the z axis, z-buffered triangle fill with a
//! top-left rule, perspective-correct texture coordinates and ambient plus
//! Lambertian directional shading. No antialiasing and no back-face culling.

mod image_io;
mod raster;
mod scene;

pub use image_io::load_background;
pub use scene::{
    BackgroundConfig, BuiltinMesh, CameraConfig, LightingConfig, MeshSource, Scene, SceneConfig,
    TextureFilter, DEFAULT_BACKGROUND, DEFAULT_IMAGE_SIZE, MIN_IMAGE_SIDE,
};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, ObjError, PoseParams, Vec3};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error(transparent)]
    Mesh(#[from] ObjError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("point lies in the camera plane and cannot be projected")]
    AtCameraPlane,
    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Identifies what produced a render.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderMeta {
    pub pose: PoseParams,
    pub scene_hash: String,
}

/// An `H × W × 3` image with values in `[0, 1]` plus the object mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    width: u32,
    height: u32,
    pixels: Vec<f32>,
    coverage: Vec<bool>,
    pub meta: RenderMeta,
}

impl RenderOutput {
    /// Builds an output from raw row-major RGB data. Values are clamped.
    pub fn from_pixels(
        width: u32,
        height: u32,
        mut pixels: Vec<f32>,
        coverage: Vec<bool>,
        meta: RenderMeta,
    ) -> Self {
        let n = width as usize * height as usize;
        assert_eq!(pixels.len(), n * 3, "pixel buffer size");
        assert_eq!(coverage.len(), n, "coverage mask size");
        for p in &mut pixels {
            *p = p.clamp(0.0, 1.0);
        }
        Self {
            width,
            height,
            pixels,
            coverage,
            meta,
        }
    }

    /// Wraps an 8-bit image that did not come from the renderer (empty
    /// mask, default pose).
    pub fn from_rgb8(width: u32, height: u32, rgb: &[u8]) -> Self {
        let n = width as usize * height as usize;
        let pixels = rgb.iter().map(|&b| b as f32 / 255.0).collect();
        let meta = RenderMeta {
            pose: PoseParams::default(),
            scene_hash: String::new(),
        };
        Self::from_pixels(width, height, pixels, vec![false; n], meta)
    }

    /// Loads a PNG or JPEG file as an unrendered image.
    pub fn load(path: &std::path::Path) -> Result<Self, RenderError> {
        let img = image::open(path)
            .map_err(|e| RenderError::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .to_rgb8();
        Ok(Self::from_rgb8(img.width(), img.height(), img.as_raw()))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn coverage(&self) -> &[bool] {
        &self.coverage
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn covered(&self, x: u32, y: u32) -> bool {
        self.coverage[y as usize * self.width as usize + x as usize]
    }

    /// Tightest `(x0, y0, x1, y1)` rectangle (inclusive) around covered pixels.
    pub fn coverage_bbox(&self) -> Option<[u32; 4]> {
        let w = self.width as usize;
        let mut bbox: Option<[u32; 4]> = None;
        for (i, _) in self.coverage.iter().enumerate().filter(|(_, &c)| c) {
            let (x, y) = ((i % w) as u32, (i / w) as u32);
            bbox = Some(match bbox {
                None => [x, y, x, y],
                Some([x0, y0, x1, y1]) => [x0.min(x), y0.min(y), x1.max(x), y1.max(y)],
            });
        }
        bbox
    }

    /// 8-bit RGB, each channel `round(p · 255)`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| quantize(p)).collect()
    }

    pub fn to_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width, self.height, self.to_rgb8())
            .expect("buffer matches dimensions")
    }

    pub fn encode_png(&self) -> Vec<u8> {
        image_io::encode_png(&self.to_image())
    }

    pub fn save_png(&self, path: &std::path::Path) -> Result<(), RenderError> {
        std::fs::write(path, self.encode_png())?;
        Ok(())
    }
}

pub(crate) fn quantize(p: f32) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Area in pixels² of the tightest axis-aligned rectangle around the
/// covered pixels; 0 for an empty mask.
pub fn bbox_area(out: &RenderOutput) -> u64 {
    match out.coverage_bbox() {
        None => 0,
        Some([x0, y0, x1, y1]) => (x1 - x0 + 1) as u64 * (y1 - y0 + 1) as u64,
    }
}

/// Pixel coordinates of a projected point. `u` grows to the right, `v`
/// downwards; pixel `(i, j)` spans `[i, i+1) × [j, j+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub in_frame: bool,
}

/// Focal length in pixels. The half-angle spans half of the shorter image
/// side so the frustum box fits in frame for any aspect ratio.
pub(crate) fn focal_px(config: &SceneConfig) -> f64 {
    config.width().min(config.height()) as f64 * 0.5 / config.camera.half_angle_v.tan()
}

/// World → camera space (camera at the origin looking down -z), including
/// the optional multi-view orbit.
pub(crate) fn world_to_camera(config: &SceneConfig, p: &Vec3) -> Vec3 {
    let cam = &config.camera;
    let p = if cam.view_yaw != 0.0 {
        let pivot = Vec3::new(0.0, 0.0, cam.view_pivot_z);
        // Orbiting the camera by +yaw is rotating the world by -yaw.
        let r = crate::geometry::transform_axis_angle(&Vec3::y(), -cam.view_yaw);
        r * (p - pivot) + pivot
    } else {
        *p
    };
    Vec3::new(p.x, p.y, p.z - cam.camera_z)
}

/// Projects a world-space point through the scene camera.
pub fn project_point(scene: &SceneConfig, p: Vec3) -> Result<Projection, RenderError> {
    let c = world_to_camera(scene, &p);
    let depth = -c.z;
    if depth == 0.0 {
        return Err(RenderError::AtCameraPlane);
    }
    let f = focal_px(scene);
    let (w, h) = (scene.width() as f64, scene.height() as f64);
    let u = w * 0.5 + f * c.x / depth;
    let v = h * 0.5 - f * c.y / depth;
    let in_frame = depth > 0.0 && (0.0..w).contains(&u) && (0.0..h).contains(&v);
    Ok(Projection { u, v, in_frame })
}

/// Renders the scene's mesh under `pose`.
pub fn render(scene: &Scene, pose: &PoseParams) -> RenderOutput {
    raster::rasterize(scene, pose)
}

#[cfg(test)]
mod tests;
