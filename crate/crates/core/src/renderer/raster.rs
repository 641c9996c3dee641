use super::{focal_px, world_to_camera, RenderMeta, RenderOutput, Scene, TextureFilter};
use crate::geometry::{pose_rotation, PoseParams, Texture, Vec3};

/// Near clipping distance in front of the camera, world units.
const NEAR: f64 = 1e-3;

#[derive(Clone, Copy)]
struct ClipVertex {
    pos: Vec3,
    uv: [f64; 2],
    normal: Vec3,
}

impl ClipVertex {
    fn lerp(&self, other: &ClipVertex, t: f64) -> ClipVertex {
        ClipVertex {
            pos: self.pos + (other.pos - self.pos) * t,
            uv: [
                self.uv[0] + (other.uv[0] - self.uv[0]) * t,
                self.uv[1] + (other.uv[1] - self.uv[1]) * t,
            ],
            normal: self.normal + (other.normal - self.normal) * t,
        }
    }

    fn depth(&self) -> f64 {
        -self.pos.z
    }
}

#[derive(Clone, Copy)]
struct ScreenVertex {
    x: f64,
    y: f64,
    inv_depth: f64,
    uv: [f64; 2],
    normal: Vec3,
}

struct Target<'a> {
    width: usize,
    height: usize,
    pixels: &'a mut [f32],
    depth: &'a mut [f64],
    coverage: &'a mut [bool],
}

struct Shading<'a> {
    texture: Option<&'a Texture>,
    filter: TextureFilter,
    light: Vec3,
    ambient: [f64; 3],
    directional: [f64; 3],
}

pub(super) fn rasterize(scene: &Scene, pose: &PoseParams) -> RenderOutput {
    let cfg = scene.config();
    let (w, h) = (cfg.width() as usize, cfg.height() as usize);
    let n = w * h;
    let mut pixels = vec![0f32; n * 3];
    for i in 0..n {
        pixels[i * 3..i * 3 + 3].copy_from_slice(&scene.background_pixel(i));
    }
    let mut depth = vec![f64::INFINITY; n];
    let mut coverage = vec![false; n];

    let mesh = scene.mesh();
    let rotation = pose_rotation(pose);
    let t = pose.translation();
    let cam: Vec<Vec3> = mesh
        .vertices()
        .iter()
        .map(|v| world_to_camera(cfg, &(t + rotation * v)))
        .collect();
    // Lighting lives in world space, so normals only see the object rotation.
    let normals: Vec<Vec3> = mesh.normals().iter().map(|nrm| rotation * nrm).collect();

    let l = &cfg.lighting;
    let shading = Shading {
        texture: mesh.texture(),
        filter: cfg.texture_filter,
        light: -Vec3::from(l.light_direction),
        ambient: l.ambient_color.map(|c| c * l.ambient_intensity),
        directional: l.directional_color.map(|c| c * l.directional_intensity),
    };
    let focal = focal_px(cfg);
    let (cx, cy) = (w as f64 * 0.5, h as f64 * 0.5);
    let mut target = Target {
        width: w,
        height: h,
        pixels: &mut pixels,
        depth: &mut depth,
        coverage: &mut coverage,
    };

    for (face, uvs) in mesh.faces().iter().zip(mesh.uvs()) {
        let tri: [ClipVertex; 3] = std::array::from_fn(|k| ClipVertex {
            pos: cam[face[k] as usize],
            uv: uvs[k],
            normal: normals[face[k] as usize],
        });
        let poly = clip_near(&tri);
        if poly.len() < 3 {
            continue;
        }
        let screen: Vec<ScreenVertex> = poly
            .iter()
            .map(|v| {
                let d = v.depth();
                ScreenVertex {
                    x: cx + focal * v.pos.x / d,
                    y: cy - focal * v.pos.y / d,
                    inv_depth: 1.0 / d,
                    uv: v.uv,
                    normal: v.normal,
                }
            })
            .collect();
        for k in 1..screen.len() - 1 {
            fill_triangle(&mut target, &shading, [&screen[0], &screen[k], &screen[k + 1]]);
        }
    }

    RenderOutput::from_pixels(
        cfg.width(),
        cfg.height(),
        pixels,
        coverage,
        RenderMeta {
            pose: *pose,
            scene_hash: scene.hash().to_string(),
        },
    )
}

/// Sutherland–Hodgman against the near plane `depth >= NEAR`.
fn clip_near(tri: &[ClipVertex; 3]) -> Vec<ClipVertex> {
    if tri.iter().all(|v| v.depth() >= NEAR) {
        return tri.to_vec();
    }
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = &tri[i];
        let b = &tri[(i + 1) % 3];
        let (da, db) = (a.depth() - NEAR, b.depth() - NEAR);
        if da >= 0.0 {
            out.push(*a);
        }
        if (da >= 0.0) != (db >= 0.0) {
            out.push(a.lerp(b, da / (da - db)));
        }
    }
    out
}

/// Edge function evaluated with a canonical endpoint order, so a shared edge
/// yields exactly opposite values for the two triangles using it.
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    let raw = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    if a <= b {
        raw(a, b)
    } else {
        -raw(b, a)
    }
}

/// Antisymmetric tie rule: exactly one of two triangles sharing an edge owns
/// pixel centres lying on it.
fn owns_edge(a: (f64, f64), b: (f64, f64)) -> bool {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    dy > 0.0 || (dy == 0.0 && dx < 0.0)
}

fn fill_triangle(target: &mut Target<'_>, shading: &Shading<'_>, tri: [&ScreenVertex; 3]) {
    let p: [(f64, f64); 3] = tri.map(|v| (v.x, v.y));
    let mut area = edge(p[0], p[1], p[2]);
    if !area.is_finite() || area == 0.0 {
        return;
    }
    // Orient counter-clockwise in edge-function terms.
    let (p, tri) = if area < 0.0 {
        area = -area;
        ([p[0], p[2], p[1]], [tri[0], tri[2], tri[1]])
    } else {
        (p, tri)
    };

    let min_x = p.iter().map(|q| q.0).fold(f64::INFINITY, f64::min);
    let max_x = p.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = p.iter().map(|q| q.1).fold(f64::INFINITY, f64::min);
    let max_y = p.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max);
    if max_x < 0.0 || max_y < 0.0 || min_x >= target.width as f64 || min_y >= target.height as f64
    {
        return;
    }
    let x0 = (min_x.floor().max(0.0)) as usize;
    let y0 = (min_y.floor().max(0.0)) as usize;
    let x1 = (max_x.ceil().min(target.width as f64 - 1.0)) as usize;
    let y1 = (max_y.ceil().min(target.height as f64 - 1.0)) as usize;

    // edge k is opposite vertex k
    let edges = [(p[1], p[2]), (p[2], p[0]), (p[0], p[1])];
    let owns = edges.map(|(a, b)| owns_edge(a, b));

    for py in y0..=y1 {
        let sy = py as f64 + 0.5;
        for px in x0..=x1 {
            let sample = (px as f64 + 0.5, sy);
            let mut bary = [0.0; 3];
            let mut inside = true;
            for k in 0..3 {
                let e = edge(edges[k].0, edges[k].1, sample);
                if e < 0.0 || (e == 0.0 && !owns[k]) {
                    inside = false;
                    break;
                }
                bary[k] = e / area;
            }
            if !inside {
                continue;
            }
            let inv_depth: f64 = (0..3).map(|k| bary[k] * tri[k].inv_depth).sum();
            if !(inv_depth > 0.0) {
                continue;
            }
            let d = 1.0 / inv_depth;
            let idx = py * target.width + px;
            if d >= target.depth[idx] {
                continue;
            }
            // perspective-correct weights
            let wts: [f64; 3] = std::array::from_fn(|k| bary[k] * tri[k].inv_depth / inv_depth);
            let uv = [
                wts[0] * tri[0].uv[0] + wts[1] * tri[1].uv[0] + wts[2] * tri[2].uv[0],
                wts[0] * tri[0].uv[1] + wts[1] * tri[1].uv[1] + wts[2] * tri[2].uv[1],
            ];
            let normal = tri[0].normal * wts[0] + tri[1].normal * wts[1] + tri[2].normal * wts[2];
            let rgb = shade(shading, uv, &normal);
            target.depth[idx] = d;
            target.coverage[idx] = true;
            target.pixels[idx * 3..idx * 3 + 3].copy_from_slice(&rgb);
        }
    }
}

fn shade(s: &Shading<'_>, uv: [f64; 2], normal: &Vec3) -> [f32; 3] {
    let texel = match s.texture {
        Some(tex) => sample(tex, uv, s.filter),
        None => [1.0; 3],
    };
    let len = normal.norm();
    let lambert = if len > 0.0 {
        (normal.dot(&s.light) / len).max(0.0)
    } else {
        0.0
    };
    std::array::from_fn(|c| {
        let light = s.ambient[c] + s.directional[c] * lambert;
        (texel[c] * light).clamp(0.0, 1.0) as f32
    })
}

fn sample(tex: &Texture, uv: [f64; 2], filter: TextureFilter) -> [f64; 3] {
    let (tw, th) = (tex.width() as f64, tex.height() as f64);
    let fu = uv[0] - uv[0].floor();
    let fv = uv[1] - uv[1].floor();
    // texture row 0 is v = 1
    let (x, y) = (fu * tw, (1.0 - fv) * th);
    let fetch = |xi: i64, yi: i64| {
        let xi = xi.rem_euclid(tex.width() as i64) as u32;
        let yi = yi.rem_euclid(tex.height() as i64) as u32;
        tex.texel(xi, yi).map(f64::from)
    };
    match filter {
        TextureFilter::Nearest => {
            let xi = (x.floor() as i64).min(tex.width() as i64 - 1);
            let yi = (y.floor() as i64).min(tex.height() as i64 - 1);
            fetch(xi, yi)
        }
        TextureFilter::Bilinear => {
            let (gx, gy) = (x - 0.5, y - 0.5);
            let (x0, y0) = (gx.floor(), gy.floor());
            let (ax, ay) = (gx - x0, gy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let c00 = fetch(x0, y0);
            let c10 = fetch(x0 + 1, y0);
            let c01 = fetch(x0, y0 + 1);
            let c11 = fetch(x0 + 1, y0 + 1);
            std::array::from_fn(|c| {
                let top = c00[c] * (1.0 - ax) + c10[c] * ax;
                let bottom = c01[c] * (1.0 - ax) + c11[c] * ax;
                top * (1.0 - ay) + bottom * ay
            })
        }
    }
}
