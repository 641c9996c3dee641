use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{GeometryError, Vec3};

/// Linear RGB texture, row 0 at the top of the image.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    width: u32,
    height: u32,
    texels: Vec<[f32; 3]>,
}

impl Texture {
    pub fn new(width: u32, height: u32, texels: Vec<[f32; 3]>) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 || texels.len() != (width as usize) * (height as usize) {
            return Err(GeometryError::InvalidMesh(format!(
                "texture {width}x{height} does not match {} texels",
                texels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            texels,
        })
    }

    pub fn solid(rgb: [f32; 3]) -> Self {
        Self {
            width: 1,
            height: 1,
            texels: vec![rgb],
        }
    }

    pub fn from_rgb_image(img: &image::RgbImage) -> Self {
        let texels = img
            .pixels()
            .map(|p| [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0])
            .collect();
        Self {
            width: img.width(),
            height: img.height(),
            texels,
        }
    }

    pub fn load(path: &Path) -> Result<Self, image::ImageError> {
        Ok(Self::from_rgb_image(&image::open(path)?.to_rgb8()))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn texel(&self, x: u32, y: u32) -> [f32; 3] {
        self.texels[(y as usize) * (self.width as usize) + x as usize]
    }

    pub fn texels(&self) -> &[[f32; 3]] {
        &self.texels
    }
}

/// Triangle mesh with per-vertex normals and per-corner texture coordinates.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub(crate) vertices: Vec<Vec3>,
    pub(crate) faces: Vec<[u32; 3]>,
    pub(crate) uvs: Vec<[[f64; 2]; 3]>,
    pub(crate) normals: Vec<Vec3>,
    pub(crate) texture: Option<Arc<Texture>>,
    pub(crate) texture_ref: Option<String>,
}

impl Mesh {
    /// Builds a mesh and checks its invariants. Missing normals are computed
    /// as area-weighted averages of adjacent face normals; missing UVs
    /// default to the origin of texture space.
    pub fn new(
        vertices: Vec<Vec3>,
        faces: Vec<[u32; 3]>,
        uvs: Option<Vec<[[f64; 2]; 3]>>,
        normals: Option<Vec<Vec3>>,
    ) -> Result<Self, GeometryError> {
        if faces.is_empty() {
            return Err(GeometryError::InvalidMesh("mesh has no faces".into()));
        }
        let n = vertices.len();
        if let Some(bad) = faces.iter().flatten().find(|&&i| i as usize >= n) {
            return Err(GeometryError::InvalidMesh(format!(
                "face index {bad} out of range for {n} vertices"
            )));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::InvalidMesh("non-finite vertex".into()));
        }
        let uvs = match uvs {
            Some(uvs) if uvs.len() != faces.len() => {
                return Err(GeometryError::InvalidMesh(format!(
                    "{} uv triples for {} faces",
                    uvs.len(),
                    faces.len()
                )))
            }
            Some(uvs) => uvs,
            None => vec![[[0.0; 2]; 3]; faces.len()],
        };
        let normals = match normals {
            Some(normals) => {
                if normals.len() != n {
                    return Err(GeometryError::InvalidMesh(format!(
                        "{} normals for {n} vertices",
                        normals.len()
                    )));
                }
                if let Some(bad) = normals.iter().find(|v| (v.norm() - 1.0).abs() > 1e-6) {
                    return Err(GeometryError::InvalidMesh(format!(
                        "normal {bad:?} is not unit length"
                    )));
                }
                normals
            }
            None => area_weighted_normals(&vertices, &faces),
        };
        Ok(Self {
            vertices,
            faces,
            uvs,
            normals,
            texture: None,
            texture_ref: None,
        })
    }

    pub fn with_texture(mut self, texture: Texture, texture_ref: impl Into<String>) -> Self {
        self.texture = Some(Arc::new(texture));
        self.texture_ref = Some(texture_ref.into());
        self
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn uvs(&self) -> &[[[f64; 2]; 3]] {
        &self.uvs
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn texture(&self) -> Option<&Texture> {
        self.texture.as_deref()
    }

    pub fn texture_ref(&self) -> Option<&str> {
        self.texture_ref.as_deref()
    }

    /// Axis-aligned bounds as `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Centres the mesh on its bounding-box centroid and scales it uniformly
    /// so the largest bounding-box extent is 2.0.
    pub fn normalized(mut self) -> Self {
        let (lo, hi) = self.bounds();
        let centre = (lo + hi) * 0.5;
        let extent = (hi - lo).max();
        let scale = if extent > 0.0 { 2.0 / extent } else { 1.0 };
        for v in &mut self.vertices {
            *v = (*v - centre) * scale;
        }
        self
    }

    /// Feeds the geometry and texture content into a digest.
    pub fn digest_into(&self, hasher: &mut Sha256) {
        hasher.update(b"mesh");
        hasher.update((self.vertices.len() as u64).to_le_bytes());
        for v in &self.vertices {
            for c in v.iter() {
                hasher.update(c.to_bits().to_le_bytes());
            }
        }
        for f in &self.faces {
            for i in f {
                hasher.update(i.to_le_bytes());
            }
        }
        for corner in self.uvs.iter().flatten() {
            hasher.update(corner[0].to_bits().to_le_bytes());
            hasher.update(corner[1].to_bits().to_le_bytes());
        }
        for nrm in &self.normals {
            for c in nrm.iter() {
                hasher.update(c.to_bits().to_le_bytes());
            }
        }
        if let Some(tex) = &self.texture {
            hasher.update(b"texture");
            hasher.update(tex.width.to_le_bytes());
            hasher.update(tex.height.to_le_bytes());
            for t in &tex.texels {
                for c in t {
                    hasher.update(c.to_bits().to_le_bytes());
                }
            }
        }
    }

    /// Axis-aligned unit cube (side 2) with each face mapped to its own cell
    /// of a 3×2 texture atlas; see [`Texture::face_atlas`].
    pub fn cube() -> Self {
        let mut vertices = Vec::new();
        let mut normals = Vec::new();
        let mut faces = Vec::new();
        let mut uvs = Vec::new();
        // (normal, u axis, v axis) per face
        let sides: [([f64; 3], [f64; 3], [f64; 3]); 6] = [
            ([1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]),
            ([-1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]),
            ([0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]),
            ([0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
            ([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
            ([0.0, 0.0, -1.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
        ];
        for (side, (n, u, v)) in sides.iter().enumerate() {
            let (n, u, v) = (Vec3::from(*n), Vec3::from(*u), Vec3::from(*v));
            let base = vertices.len() as u32;
            let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
            for (a, b) in corners {
                vertices.push(n + u * a + v * b);
                normals.push(n);
            }
            let cell_u = (side % 3) as f64 / 3.0;
            let cell_v = (side / 3) as f64 / 2.0;
            let uv = |(a, b): (f64, f64)| {
                [
                    cell_u + (a + 1.0) / 2.0 / 3.0 * 0.98 + 0.0033,
                    cell_v + (b + 1.0) / 2.0 / 2.0 * 0.98 + 0.005,
                ]
            };
            faces.push([base, base + 1, base + 2]);
            uvs.push([uv(corners[0]), uv(corners[1]), uv(corners[2])]);
            faces.push([base, base + 2, base + 3]);
            uvs.push([uv(corners[0]), uv(corners[2]), uv(corners[3])]);
        }
        Self::new(vertices, faces, Some(uvs), Some(normals)).expect("cube is valid")
    }

    /// Latitude/longitude sphere of radius 1 with smooth normals.
    pub fn uv_sphere(rings: u32, segments: u32) -> Self {
        let rings = rings.max(2);
        let segments = segments.max(3);
        let mut vertices = Vec::new();
        let mut uv_of = Vec::new();
        for r in 0..=rings {
            let phi = std::f64::consts::PI * r as f64 / rings as f64;
            for s in 0..=segments {
                let theta = std::f64::consts::TAU * s as f64 / segments as f64;
                vertices.push(Vec3::new(
                    phi.sin() * theta.cos(),
                    phi.cos(),
                    phi.sin() * theta.sin(),
                ));
                uv_of.push([s as f64 / segments as f64, 1.0 - r as f64 / rings as f64]);
            }
        }
        let normals = vertices.iter().map(|v| v.normalize()).collect();
        let stride = segments + 1;
        let mut faces = Vec::new();
        let mut uvs = Vec::new();
        for r in 0..rings {
            for s in 0..segments {
                let a = r * stride + s;
                let b = a + stride;
                for tri in [[a, b, a + 1], [a + 1, b, b + 1]] {
                    // zero-area triangles at the poles
                    if degenerate(&vertices, tri) {
                        continue;
                    }
                    faces.push(tri);
                    uvs.push(tri.map(|i| uv_of[i as usize]));
                }
            }
        }
        Self::new(vertices, faces, Some(uvs), Some(normals)).expect("sphere is valid")
    }
}

fn degenerate(vertices: &[Vec3], tri: [u32; 3]) -> bool {
    let [a, b, c] = tri.map(|i| vertices[i as usize]);
    (b - a).cross(&(c - a)).norm() < 1e-12
}

impl Texture {
    /// Six distinct colours laid out as a 3×2 atlas, matching the face order
    /// of [`Mesh::cube`].
    pub fn face_atlas(cell: u32) -> Self {
        const COLORS: [[f32; 3]; 6] = [
            [0.85, 0.20, 0.15],
            [0.15, 0.70, 0.25],
            [0.20, 0.30, 0.85],
            [0.90, 0.80, 0.20],
            [0.75, 0.25, 0.80],
            [0.20, 0.80, 0.80],
        ];
        let cell = cell.max(1);
        let (w, h) = (cell * 3, cell * 2);
        let mut texels = Vec::with_capacity((w * h) as usize);
        for y in 0..h {
            // texture row 0 is the top, v = 1
            let row = 1 - (y / cell);
            for x in 0..w {
                texels.push(COLORS[(row * 3 + x / cell) as usize]);
            }
        }
        Self {
            width: w,
            height: h,
            texels,
        }
    }
}

fn area_weighted_normals(vertices: &[Vec3], faces: &[[u32; 3]]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    for f in faces {
        let [a, b, c] = f.map(|i| vertices[i as usize]);
        // cross product length is twice the triangle area
        let n = (b - a).cross(&(c - a));
        for &i in f {
            acc[i as usize] += n;
        }
    }
    acc.into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 0.0 && len.is_finite() {
                n / len
            } else {
                Vec3::y()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> (Vec<Vec3>, Vec<[u32; 3]>) {
        (
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 1, 2]],
        )
    }

    #[test]
    fn computed_normals_are_unit() {
        let (v, f) = tri();
        let mesh = Mesh::new(v, f, None, None).unwrap();
        for n in mesh.normals() {
            assert!((n - Vec3::z()).norm() < 1e-12);
        }
    }

    #[test]
    fn area_weighting_favours_larger_faces() {
        // Two faces share vertex 0: a big one in the xy plane and a small one in xz.
        let v = vec![
            Vec3::zeros(),
            Vec3::x() * 10.0,
            Vec3::y() * 10.0,
            Vec3::x() * 0.1,
            Vec3::z() * -0.1,
        ];
        let mesh = Mesh::new(v, vec![[0, 1, 2], [0, 3, 4]], None, None).unwrap();
        let n0 = mesh.normals()[0];
        assert!(n0.z > 0.99, "{n0:?}");
    }

    #[test]
    fn rejects_bad_indices_and_empty_meshes() {
        let (v, _) = tri();
        assert!(Mesh::new(v.clone(), vec![], None, None).is_err());
        assert!(Mesh::new(v.clone(), vec![[0, 1, 3]], None, None).is_err());
        assert!(Mesh::new(v, vec![[0, 1, 2]], None, Some(vec![Vec3::x() * 2.0; 3])).is_err());
    }

    #[test]
    fn normalization_centres_and_scales() {
        let v = vec![
            Vec3::new(10.0, 0.0, 0.0),
            Vec3::new(14.0, 1.0, 0.0),
            Vec3::new(10.0, 2.0, 1.0),
        ];
        let mesh = Mesh::new(v, vec![[0, 1, 2]], None, None).unwrap().normalized();
        let (lo, hi) = mesh.bounds();
        assert!(((lo + hi) * 0.5).norm() < 1e-12);
        assert!(((hi - lo).max() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn builtin_meshes_are_valid() {
        let cube = Mesh::cube();
        assert_eq!(cube.faces().len(), 12);
        let (lo, hi) = cube.bounds();
        assert_eq!(lo, Vec3::repeat(-1.0));
        assert_eq!(hi, Vec3::repeat(1.0));
        let sphere = Mesh::uv_sphere(12, 16);
        assert!(sphere.faces().len() > 100);
        for n in sphere.normals() {
            assert!((n.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn atlas_has_six_cells() {
        let t = Texture::face_atlas(4);
        assert_eq!((t.width(), t.height()), (12, 8));
        // bottom-left cell (v near 0) holds colour 0
        assert_eq!(t.texel(0, 7), [0.85, 0.20, 0.15]);
        assert_eq!(t.texel(11, 0), [0.20, 0.80, 0.80]);
    }

    #[test]
    fn digest_depends_on_content() {
        let mut a = Sha256::new();
        Mesh::cube().digest_into(&mut a);
        let mut b = Sha256::new();
        Mesh::cube()
            .with_texture(Texture::solid([1.0; 3]), "white")
            .digest_into(&mut b);
        assert_ne!(a.finalize(), b.finalize());
    }
}
