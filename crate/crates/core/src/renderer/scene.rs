use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RenderError;
use crate::geometry::{load_obj, FrustumSpec, Mesh, Texture, Vec3};

/// ImageNet mean pixel.
pub const DEFAULT_BACKGROUND: [f32; 3] = [0.485, 0.456, 0.406];
pub const DEFAULT_IMAGE_SIZE: [u32; 2] = [299, 299];
pub const MIN_IMAGE_SIDE: u32 = 16;

/// Ambient plus one directional light, both white by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LightingConfig {
    pub directional_intensity: f64,
    pub ambient_intensity: f64,
    /// Direction the light travels; `(0, -1, 0)` points straight down.
    pub light_direction: [f64; 3],
    pub directional_color: [f64; 3],
    pub ambient_color: [f64; 3],
}

impl LightingConfig {
    pub fn new(directional_intensity: f64, ambient_intensity: f64) -> Self {
        Self {
            directional_intensity,
            ambient_intensity,
            light_direction: [0.0, -1.0, 0.0],
            directional_color: [1.0; 3],
            ambient_color: [1.0; 3],
        }
    }

    pub fn bright() -> Self {
        Self::new(1.2, 1.6)
    }

    pub fn medium() -> Self {
        Self::new(0.4, 1.0)
    }

    pub fn dark() -> Self {
        Self::new(0.2, 0.5)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "bright" => Some(Self::bright()),
            "medium" => Some(Self::medium()),
            "dark" => Some(Self::dark()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.directional_intensity >= 0.0 && self.ambient_intensity >= 0.0) {
            return Err(RenderError::InvalidScene(
                "light intensities must be non-negative".into(),
            ));
        }
        let norm = Vec3::from(self.light_direction).norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(RenderError::InvalidScene(format!(
                "light_direction must be a unit vector (norm {norm})"
            )));
        }
        Ok(())
    }
}

impl Default for LightingConfig {
    fn default() -> Self {
        Self::medium()
    }
}

/// Where the mesh comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshSource {
    Obj(PathBuf),
    Builtin(BuiltinMesh),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinMesh {
    /// Cube with a six-colour face atlas.
    Cube,
    /// Untextured smooth sphere.
    Sphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundConfig {
    Solid([f32; 3]),
    Image(PathBuf),
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        BackgroundConfig::Solid(DEFAULT_BACKGROUND)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureFilter {
    #[default]
    Nearest,
    Bilinear,
}

/// Camera on the z axis at `camera_z`, looking down -z with +y up.
///
/// `view_yaw` orbits the camera about the vertical line through
/// `(0, 0, view_pivot_z)`; it is only used to build multi-view variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub half_angle_v: f64,
    pub camera_z: f64,
    pub depth_range: [f64; 2],
    pub view_yaw: f64,
    pub view_pivot_z: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        let f = FrustumSpec::default();
        Self {
            half_angle_v: f.half_angle_v,
            camera_z: f.camera_z,
            depth_range: f.depth_range,
            view_yaw: 0.0,
            view_pivot_z: -14.0,
        }
    }
}

impl CameraConfig {
    pub fn frustum(&self) -> FrustumSpec {
        FrustumSpec {
            half_angle_v: self.half_angle_v,
            camera_z: self.camera_z,
            depth_range: self.depth_range,
        }
    }
}

/// Serializable renderer parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub mesh: MeshSource,
    #[serde(default)]
    pub lighting: LightingConfig,
    #[serde(default)]
    pub camera: CameraConfig,
    #[serde(default)]
    pub background: BackgroundConfig,
    /// `[H, W]` in pixels.
    #[serde(default = "default_image_size")]
    pub image_size: [u32; 2],
    #[serde(default)]
    pub texture_filter: TextureFilter,
    /// Ground-truth class index of the object, when known.
    #[serde(default)]
    pub true_class: Option<usize>,
}

fn default_image_size() -> [u32; 2] {
    DEFAULT_IMAGE_SIZE
}

impl SceneConfig {
    pub fn new(mesh: MeshSource) -> Self {
        Self {
            mesh,
            lighting: LightingConfig::default(),
            camera: CameraConfig::default(),
            background: BackgroundConfig::default(),
            image_size: DEFAULT_IMAGE_SIZE,
            texture_filter: TextureFilter::Nearest,
            true_class: None,
        }
    }

    pub fn height(&self) -> u32 {
        self.image_size[0]
    }

    pub fn width(&self) -> u32 {
        self.image_size[1]
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        let [h, w] = self.image_size;
        if h < MIN_IMAGE_SIDE || w < MIN_IMAGE_SIDE {
            return Err(RenderError::InvalidScene(format!(
                "image size {h}x{w} below minimum {MIN_IMAGE_SIDE}"
            )));
        }
        self.lighting.validate()?;
        self.camera
            .frustum()
            .validate()
            .map_err(|e| RenderError::InvalidScene(e.to_string()))?;
        if let BackgroundConfig::Solid(rgb) = self.background {
            if rgb.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(RenderError::InvalidScene(
                    "background colour outside [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    /// Resolves relative paths against `base`.
    pub fn resolve_paths(mut self, base: &Path) -> Self {
        if let MeshSource::Obj(p) = &mut self.mesh {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let BackgroundConfig::Image(p) = &mut self.background {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        self
    }
}

#[derive(Debug, Clone)]
pub(crate) enum BackgroundPixels {
    Solid([f32; 3]),
    Image(Arc<Vec<f32>>),
}

/// A scene with its mesh and background loaded, ready to render.
#[derive(Debug, Clone)]
pub struct Scene {
    config: SceneConfig,
    mesh: Arc<Mesh>,
    pub(crate) background: BackgroundPixels,
    hash: String,
}

impl Scene {
    /// Loads the mesh and background referenced by `config`.
    pub fn load(config: SceneConfig) -> Result<Self, RenderError> {
        config.validate()?;
        let mesh = match &config.mesh {
            MeshSource::Obj(path) => {
                if !path.exists() {
                    return Err(RenderError::MissingFile(path.clone()));
                }
                load_obj(path)?
            }
            MeshSource::Builtin(BuiltinMesh::Cube) => {
                Mesh::cube().with_texture(Texture::face_atlas(16), "builtin:cube-atlas")
            }
            MeshSource::Builtin(BuiltinMesh::Sphere) => Mesh::uv_sphere(16, 24),
        };
        Self::with_mesh(config, Arc::new(mesh))
    }

    /// Uses an already-built mesh; `config.mesh` is kept only as a label.
    pub fn with_mesh(config: SceneConfig, mesh: Arc<Mesh>) -> Result<Self, RenderError> {
        config.validate()?;
        let background = match &config.background {
            BackgroundConfig::Solid(rgb) => BackgroundPixels::Solid(*rgb),
            BackgroundConfig::Image(path) => {
                if !path.exists() {
                    return Err(RenderError::MissingFile(path.clone()));
                }
                BackgroundPixels::Image(Arc::new(super::image_io::load_background(
                    path,
                    config.width(),
                    config.height(),
                )?))
            }
        };
        let hash = scene_hash(&config, &mesh, &background);
        Ok(Self {
            config,
            mesh,
            background,
            hash,
        })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn frustum(&self) -> FrustumSpec {
        self.config.camera.frustum()
    }

    /// Hex SHA-256 over mesh, texture, background and scene configuration.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Same mesh and background under different lighting.
    pub fn with_lighting(&self, lighting: LightingConfig) -> Result<Self, RenderError> {
        lighting.validate()?;
        let mut config = self.config.clone();
        config.lighting = lighting;
        let hash = scene_hash(&config, &self.mesh, &self.background);
        Ok(Self {
            config,
            mesh: self.mesh.clone(),
            background: self.background.clone(),
            hash,
        })
    }

    /// Same scene seen from a camera orbited by `view_yaw` radians.
    pub fn with_view_yaw(&self, view_yaw: f64) -> Self {
        let mut config = self.config.clone();
        config.camera.view_yaw = view_yaw;
        let hash = scene_hash(&config, &self.mesh, &self.background);
        Self {
            config,
            mesh: self.mesh.clone(),
            background: self.background.clone(),
            hash,
        }
    }

    /// Same scene with the camera moved along z.
    pub fn with_camera_z(&self, camera_z: f64) -> Self {
        let mut config = self.config.clone();
        config.camera.camera_z = camera_z;
        let hash = scene_hash(&config, &self.mesh, &self.background);
        Self {
            config,
            mesh: self.mesh.clone(),
            background: self.background.clone(),
            hash,
        }
    }

    pub(crate) fn background_pixel(&self, idx: usize) -> [f32; 3] {
        match &self.background {
            BackgroundPixels::Solid(rgb) => *rgb,
            BackgroundPixels::Image(px) => [px[idx * 3], px[idx * 3 + 1], px[idx * 3 + 2]],
        }
    }
}

fn scene_hash(config: &SceneConfig, mesh: &Mesh, background: &BackgroundPixels) -> String {
    let mut hasher = Sha256::new();
    mesh.digest_into(&mut hasher);
    match background {
        BackgroundPixels::Solid(rgb) => {
            hasher.update(b"solid");
            for c in rgb {
                hasher.update(c.to_bits().to_le_bytes());
            }
        }
        BackgroundPixels::Image(px) => {
            hasher.update(b"image");
            for c in px.iter() {
                hasher.update(c.to_bits().to_le_bytes());
            }
        }
    }
    hasher.update(serde_json::to_vec(config).expect("scene config serializes"));
    hex::encode(hasher.finalize())
}
