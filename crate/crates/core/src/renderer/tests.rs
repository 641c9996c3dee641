use std::sync::Arc;

use super::*;
use crate::geometry::{Mesh, Texture};

fn config(size: u32) -> SceneConfig {
    let mut c = SceneConfig::new(MeshSource::Builtin(BuiltinMesh::Cube));
    c.image_size = [size, size];
    c
}

fn big_triangle(z: f64, normal: Option<Vec3>) -> Mesh {
    let v = vec![
        Vec3::new(-10.0, -10.0, z),
        Vec3::new(10.0, -10.0, z),
        Vec3::new(0.0, 10.0, z),
    ];
    Mesh::new(v, vec![[0, 1, 2]], None, normal.map(|n| vec![n; 3])).unwrap()
}

fn scene_with(mesh: Mesh, cfg: SceneConfig) -> Scene {
    Scene::with_mesh(cfg, Arc::new(mesh)).unwrap()
}

#[test]
fn mesh_behind_camera_renders_background_only() {
    let mut cfg = config(32);
    cfg.camera.camera_z = -20.0;
    cfg.camera.depth_range = [-28.0, 0.0];
    let scene = scene_with(Mesh::cube(), cfg);
    let out = render(&scene, &PoseParams::new(0.0, 0.0, 0.0, 0.3, 0.2, 0.1));
    assert!(out.coverage().iter().all(|c| !c));
    for y in 0..32 {
        for x in 0..32 {
            assert_eq!(out.pixel(x, y), DEFAULT_BACKGROUND);
        }
    }
    assert_eq!(bbox_area(&out), 0);
}

#[test]
fn full_frame_white_triangle_with_pure_ambient() {
    let mut cfg = config(24);
    cfg.lighting = LightingConfig::new(0.0, 1.0);
    let mesh = big_triangle(-1.0, None).with_texture(Texture::solid([1.0; 3]), "white");
    let out = render(&scene_with(mesh, cfg), &PoseParams::default());
    assert!(out.coverage().iter().all(|&c| c));
    assert!(out.pixels().iter().all(|&p| p == 1.0));
}

#[test]
fn lambert_plus_ambient_gives_point_eight() {
    let mut cfg = config(24);
    cfg.lighting = LightingConfig::new(0.4, 0.4);
    let mesh = big_triangle(-1.0, Some(Vec3::y()));
    let out = render(&scene_with(mesh, cfg), &PoseParams::default());
    for (i, &covered) in out.coverage().iter().enumerate() {
        assert!(covered);
        for c in 0..3 {
            assert!((out.pixels()[i * 3 + c] - 0.8).abs() < 1e-6);
        }
    }
}

#[test]
fn light_from_behind_leaves_ambient() {
    let mut cfg = config(16);
    cfg.lighting = LightingConfig::new(0.4, 0.4);
    let mesh = big_triangle(-1.0, Some(-Vec3::y()));
    let out = render(&scene_with(mesh, cfg), &PoseParams::default());
    assert!((out.pixel(8, 8)[0] - 0.4).abs() < 1e-6);
}

#[test]
fn intensities_clamp_at_one() {
    let mut cfg = config(16);
    cfg.lighting = LightingConfig::bright();
    let mesh = big_triangle(-1.0, Some(Vec3::y()));
    let out = render(&scene_with(mesh, cfg), &PoseParams::default());
    assert!(out.pixels().iter().all(|&p| p == 1.0));
}

#[test]
fn near_triangle_occludes_far_triangle() {
    let mut cfg = config(32);
    cfg.lighting = LightingConfig::new(0.0, 1.0);
    // Far: large, red. Near: small, green, drawn first so order cannot decide.
    let v = vec![
        Vec3::new(-0.05, -0.05, -2.0),
        Vec3::new(0.05, -0.05, -2.0),
        Vec3::new(0.0, 0.05, -2.0),
        Vec3::new(-10.0, -10.0, -5.0),
        Vec3::new(10.0, -10.0, -5.0),
        Vec3::new(0.0, 10.0, -5.0),
    ];
    let uvs = vec![[[0.75, 0.5]; 3], [[0.25, 0.5]; 3]];
    let tex = Texture::new(2, 1, vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
    let mesh = Mesh::new(v, vec![[0, 1, 2], [3, 4, 5]], Some(uvs), None)
        .unwrap()
        .with_texture(tex, "rg");
    let out = render(&scene_with(mesh, cfg), &PoseParams::default());
    assert_eq!(out.pixel(16, 16), [0.0, 1.0, 0.0]);
    assert_eq!(out.pixel(1, 30), [1.0, 0.0, 0.0]);
}

#[test]
fn projection_centre_and_edges() {
    let cfg = config(299);
    let p = project_point(&cfg, Vec3::new(0.0, 0.0, -5.0)).unwrap();
    assert_eq!((p.u, p.v), (149.5, 149.5));
    assert!(p.in_frame);

    let d = 14.0;
    let s = cfg.camera.frustum().lateral_bound(-d);
    let right = project_point(&cfg, Vec3::new(s, 0.0, -d)).unwrap();
    assert!((right.u - 299.0).abs() <= 0.5, "{}", right.u);
    let left = project_point(&cfg, Vec3::new(-s, 0.0, -d)).unwrap();
    assert!(left.u.abs() <= 0.5 && left.in_frame);

    let behind = project_point(&cfg, Vec3::new(0.0, 0.0, 3.0)).unwrap();
    assert!(!behind.in_frame);
    assert!(matches!(
        project_point(&cfg, Vec3::new(1.0, 0.0, 0.0)),
        Err(RenderError::AtCameraPlane)
    ));
}

#[test]
fn bbox_area_of_a_rectangle() {
    let (w, h) = (40u32, 30u32);
    let mut mask = vec![false; (w * h) as usize];
    for y in 5..25 {
        for x in 3..13 {
            mask[(y * w + x) as usize] = true;
        }
    }
    let meta = RenderMeta {
        pose: PoseParams::default(),
        scene_hash: String::new(),
    };
    let out = RenderOutput::from_pixels(w, h, vec![0.0; (w * h * 3) as usize], mask, meta.clone());
    assert_eq!(bbox_area(&out), 200);
    assert_eq!(out.coverage_bbox(), Some([3, 5, 12, 24]));
    let empty =
        RenderOutput::from_pixels(w, h, vec![0.0; (w * h * 3) as usize], vec![false; 1200], meta);
    assert_eq!(bbox_area(&empty), 0);
}

#[test]
fn repeated_renders_are_bit_identical() {
    let scene = Scene::load(config(64)).unwrap();
    let pose = PoseParams::new(0.3, -0.2, -9.0, 0.7, 1.9, 4.2);
    let first = render(&scene, &pose);
    for _ in 0..100 {
        assert_eq!(render(&scene, &pose), first);
    }
}

#[test]
fn uncovered_pixels_equal_background() {
    let mut cfg = config(64);
    cfg.background = BackgroundConfig::Solid([0.1, 0.2, 0.3]);
    let scene = Scene::load(cfg).unwrap();
    let out = render(&scene, &PoseParams::new(0.0, 0.0, -12.0, 0.5, 0.5, 0.5));
    let mut covered = 0;
    for y in 0..64 {
        for x in 0..64 {
            if out.covered(x, y) {
                covered += 1;
            } else {
                assert_eq!(out.pixel(x, y), [0.1, 0.2, 0.3]);
            }
        }
    }
    assert!(covered > 0 && covered < 64 * 64);
}

#[test]
fn bbox_shrinks_with_distance() {
    let mut cfg = config(96);
    cfg.mesh = MeshSource::Builtin(BuiltinMesh::Sphere);
    let scene = Scene::load(cfg).unwrap();
    let areas: Vec<u64> = (0..10)
        .map(|i| {
            let z = -4.0 - 2.4 * i as f64;
            bbox_area(&render(&scene, &PoseParams::new(0.0, 0.0, z, 0.0, 0.0, 0.0)))
        })
        .collect();
    assert!(areas[0] > 0);
    for pair in areas.windows(2) {
        assert!(pair[1] <= pair[0], "{areas:?}");
    }
}

#[test]
fn object_straddling_the_camera_is_clipped_not_dropped() {
    let scene = Scene::load(config(32)).unwrap();
    let out = render(&scene, &PoseParams::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
    // The camera sits inside the cube: the far face fills the frame.
    assert!(out.coverage().iter().all(|&c| c));
}

#[test]
fn shared_edges_leave_no_holes() {
    let mut cfg = config(48);
    cfg.lighting = LightingConfig::new(0.0, 1.0);
    let v = vec![
        Vec3::new(-1.0, -1.0, -2.0),
        Vec3::new(1.0, -1.0, -2.0),
        Vec3::new(1.0, 1.0, -2.0),
        Vec3::new(-1.0, 1.0, -2.0),
    ];
    let mesh = Mesh::new(v, vec![[0, 1, 2], [0, 2, 3]], None, None).unwrap();
    let out = render(&scene_with(mesh, cfg), &PoseParams::default());
    assert!(out.coverage().iter().all(|&c| c));
}

#[test]
fn bilinear_filter_blends_texels() {
    let mut cfg = config(16);
    cfg.lighting = LightingConfig::new(0.0, 1.0);
    cfg.texture_filter = TextureFilter::Bilinear;
    let tex = Texture::new(2, 1, vec![[0.0; 3], [1.0; 3]]).unwrap();
    let mesh = big_triangle(-1.0, None);
    let mut mesh_uv = Mesh::new(
        mesh.vertices().to_vec(),
        mesh.faces().to_vec(),
        Some(vec![[[0.5, 0.5]; 3]]),
        None,
    )
    .unwrap()
    .with_texture(tex, "ramp");
    let out = render(&scene_with(mesh_uv.clone(), cfg.clone()), &PoseParams::default());
    assert!((out.pixel(8, 8)[0] - 0.5).abs() < 1e-6);
    cfg.texture_filter = TextureFilter::Nearest;
    mesh_uv = mesh_uv.clone();
    let out = render(&scene_with(mesh_uv, cfg), &PoseParams::default());
    assert_eq!(out.pixel(8, 8)[0], 1.0);
}

#[test]
fn scene_validation() {
    let mut cfg = config(8);
    assert!(cfg.validate().is_err());
    cfg.image_size = [16, 16];
    cfg.lighting.ambient_intensity = -1.0;
    assert!(cfg.validate().is_err());
    cfg.lighting = LightingConfig::medium();
    cfg.lighting.light_direction = [0.0, -2.0, 0.0];
    assert!(cfg.validate().is_err());
}

#[test]
fn missing_mesh_path_is_named() {
    let cfg = SceneConfig::new(MeshSource::Obj("/nonexistent/bus.obj".into()));
    let err = Scene::load(cfg).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/bus.obj"));
}

#[test]
fn scene_hash_tracks_content() {
    let a = Scene::load(config(32)).unwrap();
    let b = Scene::load(config(32)).unwrap();
    assert_eq!(a.hash(), b.hash());
    let c = a.with_lighting(LightingConfig::dark()).unwrap();
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn view_yaw_moves_the_image() {
    let scene = Scene::load(config(48)).unwrap();
    let pose = PoseParams::new(0.0, 0.0, -14.0, 0.3, 0.0, 0.0);
    let a = render(&scene, &pose);
    let b = render(&scene.with_view_yaw(std::f64::consts::FRAC_PI_2), &pose);
    assert_ne!(a.pixels(), b.pixels());
    // orbiting around the pivot keeps the centred object in view
    assert!(b.covered(24, 24));
}
