//! Wavefront OBJ/MTL reading: positions, texture coordinates, normals and a
//! single diffuse texture map per mesh.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{GeometryError, Mesh, Texture, Vec3};

#[derive(Debug, Error)]
pub enum ObjError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("missing file referenced by {referrer}: {path}")]
    MissingFile { path: PathBuf, referrer: PathBuf },
    #[error("cannot decode texture {path}: {message}")]
    Texture { path: PathBuf, message: String },
    #[error(transparent)]
    Mesh(#[from] GeometryError),
}

/// Loads an OBJ file, resolves its MTL diffuse map, and returns the mesh
/// centred and scaled to a largest extent of 2.0.
pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh, ObjError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ObjError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_obj(&text, path, base).map(Mesh::normalized)
}

#[derive(Default)]
struct Corner {
    v: usize,
    vt: Option<usize>,
    vn: Option<usize>,
}

pub(crate) fn parse_obj(text: &str, path: &Path, base: &Path) -> Result<Mesh, ObjError> {
    let err = |line: usize, message: String| ObjError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut positions: Vec<Vec3> = Vec::new();
    let mut texcoords: Vec<[f64; 2]> = Vec::new();
    let mut obj_normals: Vec<Vec3> = Vec::new();
    let mut tris: Vec<[Corner; 3]> = Vec::new();
    let mut mtllibs: Vec<String> = Vec::new();
    let mut used_material: Option<String> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        let rest: Vec<&str> = tokens.collect();
        let floats = |n: usize| -> Result<Vec<f64>, ObjError> {
            if rest.len() < n {
                return Err(err(line_no, format!("'{tag}' needs {n} numbers")));
            }
            rest[..n]
                .iter()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| err(line_no, format!("invalid number '{t}'")))
                })
                .collect()
        };
        match tag {
            "v" => {
                let c = floats(3)?;
                positions.push(Vec3::new(c[0], c[1], c[2]));
            }
            "vt" => {
                let c = floats(2)?;
                texcoords.push([c[0], c[1]]);
            }
            "vn" => {
                let c = floats(3)?;
                obj_normals.push(Vec3::new(c[0], c[1], c[2]));
            }
            "f" => {
                let corners = rest
                    .iter()
                    .map(|t| {
                        parse_corner(t, positions.len(), texcoords.len(), obj_normals.len())
                            .map_err(|m| err(line_no, m))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                match corners.len() {
                    3 | 4 => {
                        let mut it = corners.into_iter();
                        let c0 = it.next().unwrap();
                        let rest: Vec<Corner> = it.collect();
                        // fan triangulation around the first corner
                        for pair in rest.windows(2) {
                            tris.push([
                                Corner { ..c0 },
                                Corner { ..pair[0] },
                                Corner { ..pair[1] },
                            ]);
                        }
                    }
                    n => {
                        return Err(err(
                            line_no,
                            format!("face with {n} vertices; only triangles and quads are supported"),
                        ))
                    }
                }
            }
            "mtllib" => mtllibs.extend(rest.iter().map(|s| s.to_string())),
            "usemtl" => {
                if used_material.is_none() {
                    used_material = rest.first().map(|s| s.to_string());
                }
            }
            "o" | "g" | "s" | "l" | "p" | "vp" => {}
            other => log::debug!("{}:{line_no}: ignoring '{other}'", path.display()),
        }
    }

    if tris.is_empty() {
        return Err(err(text.lines().count().max(1), "no faces found".into()));
    }

    let faces: Vec<[u32; 3]> = tris.iter().map(|t| t.each_ref().map(|c| c.v as u32)).collect();
    let uvs = if texcoords.is_empty() {
        None
    } else {
        Some(
            tris.iter()
                .map(|t| t.each_ref().map(|c| c.vt.map(|i| texcoords[i]).unwrap_or([0.0; 2])))
                .collect(),
        )
    };
    let normals = if tris.iter().flatten().all(|c| c.vn.is_some()) && !obj_normals.is_empty() {
        let mut acc = vec![Vec3::zeros(); positions.len()];
        for c in tris.iter().flatten() {
            acc[c.v] += obj_normals[c.vn.unwrap()];
        }
        let unit: Option<Vec<Vec3>> = acc
            .into_iter()
            .enumerate()
            .map(|(i, n)| {
                let len = n.norm();
                if len > 0.0 && len.is_finite() {
                    Some(n / len)
                } else if tris.iter().flatten().any(|c| c.v == i) {
                    None
                } else {
                    Some(Vec3::y())
                }
            })
            .collect();
        unit
    } else {
        None
    };

    let mut mesh = Mesh::new(positions, faces, uvs, normals)?;
    if let Some(texture_path) = resolve_texture(&mtllibs, used_material.as_deref(), path, base)? {
        let texture = Texture::load(&texture_path).map_err(|e| ObjError::Texture {
            path: texture_path.clone(),
            message: e.to_string(),
        })?;
        mesh = mesh.with_texture(texture, texture_path.display().to_string());
    }
    Ok(mesh)
}

fn parse_corner(token: &str, nv: usize, nvt: usize, nvn: usize) -> Result<Corner, String> {
    let mut parts = token.split('/');
    let resolve = |s: &str, count: usize, what: &str| -> Result<usize, String> {
        let i: i64 = s
            .parse()
            .map_err(|_| format!("invalid {what} index '{s}' in '{token}'"))?;
        let resolved = if i > 0 {
            i - 1
        } else if i < 0 {
            count as i64 + i
        } else {
            -1
        };
        if resolved < 0 || resolved as usize >= count {
            return Err(format!("{what} index {i} out of range ({count} defined)"));
        }
        Ok(resolved as usize)
    };
    let v = resolve(parts.next().unwrap_or(""), nv, "vertex")?;
    let vt = match parts.next() {
        Some("") | None => None,
        Some(s) => Some(resolve(s, nvt, "texcoord")?),
    };
    let vn = match parts.next() {
        Some("") | None => None,
        Some(s) => Some(resolve(s, nvn, "normal")?),
    };
    Ok(Corner { v, vt, vn })
}

/// Finds the diffuse map of the first used material (or of the first
/// material with a map when none is selected).
fn resolve_texture(
    mtllibs: &[String],
    used: Option<&str>,
    obj_path: &Path,
    base: &Path,
) -> Result<Option<PathBuf>, ObjError> {
    let mut fallback = None;
    for lib in mtllibs {
        let mtl_path = base.join(lib);
        if !mtl_path.exists() {
            return Err(ObjError::MissingFile {
                path: mtl_path,
                referrer: obj_path.to_path_buf(),
            });
        }
        let text = fs::read_to_string(&mtl_path).map_err(|source| ObjError::Io {
            path: mtl_path.clone(),
            source,
        })?;
        let mtl_base = mtl_path.parent().unwrap_or(base);
        let mut current: Option<String> = None;
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            let mut tokens = line.split_whitespace();
            match tokens.next() {
                Some("newmtl") => current = tokens.next().map(str::to_string),
                Some("map_Kd") => {
                    // options such as "-s 1 1 1" precede the file name
                    let Some(file) = tokens.last() else { continue };
                    let tex_path = mtl_base.join(file);
                    let selected = match used {
                        Some(name) => current.as_deref() == Some(name),
                        None => true,
                    };
                    if selected || fallback.is_none() {
                        if !tex_path.exists() {
                            return Err(ObjError::MissingFile {
                                path: tex_path,
                                referrer: mtl_path.clone(),
                            });
                        }
                        if selected {
                            return Ok(Some(tex_path));
                        }
                        fallback = Some(tex_path);
                    }
                }
                _ => {}
            }
        }
    }
    Ok(fallback)
}
