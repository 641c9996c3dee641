//! Golden renderer scenes. Each case is rendered, checked against an
//! independent expectation, then compared byte for byte with the PNG stored
//! next to this file. Set `POSEHUNT_BLESS=1` to rewrite the PNGs.

use std::path::PathBuf;
use std::sync::Arc;

use posehunt_core::geometry::{Mesh, PoseParams, Texture, Vec3};
use posehunt_core::renderer::{
    render, BuiltinMesh, LightingConfig, MeshSource, RenderOutput, Scene, SceneConfig, DEFAULT_BACKGROUND,
};

pub const BLESS_ENV: &str = "POSEHUNT_BLESS";
const SIDE: u32 = 32;

pub struct Golden {
    pub name: &'static str,
    scene: Scene,
    pose: PoseParams,
    expect: fn(&RenderOutput) -> Result<(), String>,
}

fn config(lighting: LightingConfig) -> SceneConfig {
    let mut c = SceneConfig::new(MeshSource::Builtin(BuiltinMesh::Cube));
    c.image_size = [SIDE, SIDE];
    c.lighting = lighting;
    c
}

fn scene(mesh: Mesh, lighting: LightingConfig) -> Scene {
    Scene::with_mesh(config(lighting), Arc::new(mesh)).expect("golden scene")
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn rgb8(out: &RenderOutput, x: u32, y: u32) -> [u8; 3] {
    out.pixel(x, y).map(quantize)
}

fn background8() -> [u8; 3] {
    DEFAULT_BACKGROUND.map(quantize)
}

/// Screen position of a camera-space point for the default camera.
fn project(p: [f64; 3]) -> (f64, f64) {
    let f = SIDE as f64 * 0.5 / 8.213f64.to_radians().tan();
    let depth = -p[2];
    (SIDE as f64 * 0.5 + f * p[0] / depth, SIDE as f64 * 0.5 - f * p[1] / depth)
}

fn strictly_inside(p: (f64, f64), t: [(f64, f64); 3]) -> bool {
    let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    let e = [edge(t[0], t[1]), edge(t[1], t[2]), edge(t[2], t[0])];
    e.iter().all(|&v| v > 0.0) || e.iter().all(|&v| v < 0.0)
}

const TRIANGLE: [[f64; 3]; 3] = [[-1.03, -0.97, -10.0], [1.21, -0.79, -10.0], [0.11, 1.13, -10.0]];

fn triangle_coverage() -> Golden {
    let v = TRIANGLE.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect();
    let mesh = Mesh::new(v, vec![[0, 1, 2]], None, None)
        .unwrap()
        .with_texture(Texture::solid([1.0; 3]), "white");
    Golden {
        name: "triangle_coverage",
        scene: scene(mesh, LightingConfig::new(0.0, 1.0)),
        pose: PoseParams::default(),
        expect: |out| {
            let tri = TRIANGLE.map(project);
            for y in 0..SIDE {
                for x in 0..SIDE {
                    let inside = strictly_inside((x as f64 + 0.5, y as f64 + 0.5), tri);
                    if out.covered(x, y) != inside {
                        return Err(format!("coverage at ({x},{y}) should be {inside}"));
                    }
                    let want = if inside { [255; 3] } else { background8() };
                    if rgb8(out, x, y) != want {
                        return Err(format!("pixel ({x},{y}) should be {want:?}"));
                    }
                }
            }
            Ok(())
        },
    }
}

fn occlusion() -> Golden {
    // Near triangle is small and green and listed first; far one is red.
    let v = vec![
        Vec3::new(-0.3, -0.3, -4.0),
        Vec3::new(0.3, -0.3, -4.0),
        Vec3::new(0.0, 0.3, -4.0),
        Vec3::new(-10.0, -10.0, -8.0),
        Vec3::new(10.0, -10.0, -8.0),
        Vec3::new(0.0, 10.0, -8.0),
    ];
    let uvs = vec![[[0.75, 0.5]; 3], [[0.25, 0.5]; 3]];
    let tex = Texture::new(2, 1, vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
    let mesh = Mesh::new(v, vec![[0, 1, 2], [3, 4, 5]], Some(uvs), None)
        .unwrap()
        .with_texture(tex, "red-green");
    Golden {
        name: "occlusion",
        scene: scene(mesh, LightingConfig::new(0.0, 1.0)),
        pose: PoseParams::default(),
        expect: |out| {
            let near = [[-0.3, -0.3, -4.0], [0.3, -0.3, -4.0], [0.0, 0.3, -4.0]].map(project);
            let mut green = 0;
            for y in 0..SIDE {
                for x in 0..SIDE {
                    let want = if strictly_inside((x as f64 + 0.5, y as f64 + 0.5), near) {
                        green += 1;
                        [0, 255, 0]
                    } else {
                        [255, 0, 0]
                    };
                    if rgb8(out, x, y) != want {
                        return Err(format!("pixel ({x},{y}) should be {want:?}"));
                    }
                }
            }
            if green == 0 {
                return Err("near triangle not visible".into());
            }
            Ok(())
        },
    }
}

fn shading() -> Golden {
    // Normal along the light direction: 0.4 directional + 0.4 ambient.
    let v = vec![
        Vec3::new(-1.5, -1.5, -10.0),
        Vec3::new(1.5, -1.5, -10.0),
        Vec3::new(0.0, 1.5, -10.0),
    ];
    let mesh = Mesh::new(v, vec![[0, 1, 2]], None, Some(vec![Vec3::y(); 3])).unwrap();
    Golden {
        name: "shading_0_8",
        scene: scene(mesh, LightingConfig::new(0.4, 0.4)),
        pose: PoseParams::default(),
        expect: |out| {
            let mut lit = 0;
            for y in 0..SIDE {
                for x in 0..SIDE {
                    if out.covered(x, y) {
                        lit += 1;
                        if out.pixel(x, y).iter().any(|c| (c - 0.8).abs() > 1e-6) {
                            return Err(format!("pixel ({x},{y}) = {:?}, want 0.8", out.pixel(x, y)));
                        }
                        if rgb8(out, x, y) != [204; 3] {
                            return Err(format!("pixel ({x},{y}) should quantize to 204"));
                        }
                    } else if rgb8(out, x, y) != background8() {
                        return Err(format!("uncovered pixel ({x},{y}) is not background"));
                    }
                }
            }
            if lit == 0 {
                return Err("triangle not visible".into());
            }
            Ok(())
        },
    }
}

fn background_purity() -> Golden {
    let mut cfg = config(LightingConfig::default());
    cfg.camera.camera_z = -20.0;
    Golden {
        name: "background_purity",
        scene: Scene::with_mesh(cfg, Arc::new(Mesh::cube())).unwrap(),
        pose: PoseParams::new(0.0, 0.0, 0.0, 0.3, 0.2, 0.1),
        expect: |out| {
            if out.coverage().iter().any(|&c| c) {
                return Err("object behind the camera was drawn".into());
            }
            if out.pixels().chunks(3).any(|p| p != DEFAULT_BACKGROUND) {
                return Err("background differs from the configured colour".into());
            }
            Ok(())
        },
    }
}

const CHECKER: [[f32; 3]; 2] = [[0.0, 0.0, 1.0], [1.0, 1.0, 0.0]];

fn textured_quad() -> Golden {
    let v = vec![
        Vec3::new(-1.0, -1.0, -9.0),
        Vec3::new(1.0, -1.0, -9.0),
        Vec3::new(1.0, 1.0, -9.0),
        Vec3::new(-1.0, 1.0, -9.0),
    ];
    let uvs = vec![
        [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]],
        [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
    ];
    let texels = (0..16).map(|i| CHECKER[(i % 4 + i / 4) % 2]).collect();
    let mesh = Mesh::new(v, vec![[0, 1, 2], [0, 2, 3]], Some(uvs), None)
        .unwrap()
        .with_texture(Texture::new(4, 4, texels).unwrap(), "checker");
    Golden {
        name: "textured_quad",
        scene: scene(mesh, LightingConfig::new(0.0, 1.0)),
        pose: PoseParams::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.35),
        expect: |out| {
            let mut seen = [0usize; 2];
            for y in 0..SIDE {
                for x in 0..SIDE {
                    let p = out.pixel(x, y);
                    if !out.covered(x, y) {
                        if p != DEFAULT_BACKGROUND {
                            return Err(format!("uncovered pixel ({x},{y}) is not background"));
                        }
                        continue;
                    }
                    match CHECKER.iter().position(|c| *c == p) {
                        Some(i) => seen[i] += 1,
                        None => return Err(format!("pixel ({x},{y}) = {p:?} is not a texel colour")),
                    }
                }
            }
            if seen.contains(&0) {
                return Err(format!("checker colours seen {seen:?}"));
            }
            Ok(())
        },
    }
}

pub fn cases() -> Vec<Golden> {
    vec![triangle_coverage(), occlusion(), shading(), background_purity(), textured_quad()]
}

fn path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.png"))
}

impl Golden {
    /// Renders twice, checks the expectation, then compares with (or
    /// rewrites) the stored PNG.
    pub fn check(&self) -> Result<(), String> {
        let out = render(&self.scene, &self.pose);
        if render(&self.scene, &self.pose) != out {
            return Err("two renders differ".into());
        }
        (self.expect)(&out)?;
        let png = out.encode_png();
        let file = path(self.name);
        if std::env::var_os(BLESS_ENV).is_some() {
            std::fs::write(&file, &png).map_err(|e| format!("{}: {e}", file.display()))?;
            return Ok(());
        }
        let stored = std::fs::read(&file)
            .map_err(|e| format!("{}: {e} (run with {BLESS_ENV}=1 to create it)", file.display()))?;
        let decoded = image::load_from_memory(&stored).map_err(|e| e.to_string())?.to_rgb8();
        if decoded.as_raw() != &out.to_rgb8() {
            return Err(format!("pixels differ from {}", file.display()));
        }
        if stored != png {
            return Err(format!("PNG bytes differ from {}", file.display()));
        }
        Ok(())
    }
}
