//! Procedural test scene: three glossy spherical caps with known materials,
//! twelve cameras and two point lights, rendered with the direct-lighting
//! model.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use crate::atlas::{rasterize_texels, texel_center};
use crate::error::{Error, Result};
use crate::estimate::{PredictorConfig, PredictorMode};
use crate::math::{Rgb, Vec3};
use crate::pipeline::render_image;
use crate::scene::image::write_mask_png;
use crate::scene::{save_image, Camera, MaterialMaps, MaterialSample, SceneConfig, SceneDescription, SceneLight, TriangleMesh, View};
use crate::bilateral::SolverParams;

/// Horizontal UV gutter between cap charts.
const CHART_MARGIN: f64 = 0.01;

/// Part of a sphere within `max_polar` radians of +z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapSpec {
    pub center: Vec3,
    pub radius: f64,
    pub max_polar: f64,
    pub diffuse: Rgb,
    pub specular: f64,
    pub roughness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub view_size: usize,
    pub atlas_resolution: usize,
    pub rings: usize,
    pub segments: usize,
    pub mode: PredictorMode,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { view_size: 256, atlas_resolution: 512, rings: 32, segments: 64, mode: PredictorMode::Optimize }
    }
}

pub fn default_caps() -> [CapSpec; 3] {
    let max_polar = 60f64.to_radians();
    [
        CapSpec { center: Vec3::new(-1.3, 0.0, 0.0), radius: 0.55, max_polar, diffuse: Vec3::new(0.65, 0.3, 0.2), specular: 0.35, roughness: 0.3 },
        CapSpec { center: Vec3::new(0.0, 0.3, 0.0), radius: 0.65, max_polar, diffuse: Vec3::new(0.25, 0.55, 0.3), specular: 0.5, roughness: 0.45 },
        CapSpec { center: Vec3::new(1.3, 0.0, 0.0), radius: 0.55, max_polar, diffuse: Vec3::new(0.3, 0.35, 0.7), specular: 0.25, roughness: 0.6 },
    ]
}

/// UV chart of cap `k`: a vertical band of the atlas.
fn chart(k: usize, count: usize) -> [f64; 4] {
    let w = 1.0 / count as f64;
    [k as f64 * w + CHART_MARGIN, 0.02, w - 2.0 * CHART_MARGIN, 0.96]
}

/// Latitude-longitude caps, each in its own UV chart.
pub fn cap_mesh(caps: &[CapSpec], rings: usize, segments: usize) -> Result<TriangleMesh> {
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut uvs = Vec::new();
    let mut tris = Vec::new();
    for (k, s) in caps.iter().enumerate() {
        let [u0, v0, uw, vh] = chart(k, caps.len());
        let base = positions.len() as u32;
        for r in 0..=rings {
            let theta = s.max_polar * r as f64 / rings as f64;
            for j in 0..=segments {
                let phi = 2.0 * PI * j as f64 / segments as f64;
                let n = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
                positions.push(s.center + n * s.radius);
                normals.push(n);
                uvs.push([u0 + uw * j as f64 / segments as f64, v0 + vh * (1.0 - r as f64 / rings as f64)]);
            }
        }
        let row = segments as u32 + 1;
        for r in 0..rings as u32 {
            for j in 0..segments as u32 {
                let a = base + r * row + j;
                let (b, c, d) = (a + 1, a + row, a + row + 1);
                if r != 0 {
                    tris.push([a, c, b]);
                }
                tris.push([b, c, d]);
            }
        }
    }
    TriangleMesh::new(positions, Some(normals), uvs, tris)
}

/// Ground-truth material at a UV coordinate; `None` in the gutters.
pub fn ground_truth(caps: &[CapSpec], uv: [f64; 2]) -> Option<MaterialSample> {
    let k = ((uv[0] * caps.len() as f64).floor() as usize).min(caps.len() - 1);
    let [u0, v0, uw, vh] = chart(k, caps.len());
    let lu = (uv[0] - u0) / uw;
    let lv = (uv[1] - v0) / vh;
    if !(-1e-9..=1.0 + 1e-9).contains(&lu) || !(-1e-9..=1.0 + 1e-9).contains(&lv) {
        return None;
    }
    let s = &caps[k];
    let wave = 1.0 + 0.2 * (2.0 * PI * 2.0 * lu).sin() * (PI * 2.0 * lv).sin();
    Some(MaterialSample::new((s.diffuse * wave).map(|c| c.clamp(0.0, 1.0)), Vec3::splat(s.specular), s.roughness))
}

/// Ground truth sampled at every texel center covered by the mesh.
pub fn ground_truth_atlas(mesh: &TriangleMesh, caps: &[CapSpec], resolution: usize) -> Result<MaterialMaps> {
    let mut maps = MaterialMaps::new(resolution, resolution);
    for site in rasterize_texels(mesh, resolution)? {
        if site.is_valid() {
            if let Some(m) = ground_truth(caps, texel_center(site.x, site.y, resolution)) {
                maps.set(site.y * resolution + site.x, m);
            }
        }
    }
    Ok(maps)
}

/// Eight cameras on a low ring and four on a high ring, all aimed at the scene.
pub fn default_cameras(size: usize) -> Result<Vec<Camera>> {
    let target = Vec3::new(0.0, 0.1, 0.15);
    let mut cams = Vec::new();
    for (count, elevation, offset) in [(8, 35.0f64, 0.0), (4, 65.0, 45.0)] {
        for i in 0..count {
            let az = (offset + 360.0 * i as f64 / count as f64).to_radians();
            let el = elevation.to_radians();
            let eye = target + Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * 4.5;
            cams.push(Camera::look_at(eye, target, Vec3::new(0.0, 0.0, 1.0), 0.95 * size as f64, size, size)?);
        }
    }
    Ok(cams)
}

pub fn default_lights() -> Vec<SceneLight> {
    vec![
        SceneLight::Point { position: Vec3::new(0.3, -0.2, 5.0), intensity: Vec3::splat(30.0) },
        SceneLight::Point { position: Vec3::new(-2.0, 1.5, 4.0), intensity: Vec3::splat(25.0) },
    ]
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub scene: SceneDescription,
    pub caps: Vec<CapSpec>,
    pub ground_truth: MaterialMaps,
}

/// Renders the default three-cap scene.
pub fn three_caps(cfg: &SyntheticConfig) -> Result<SyntheticScene> {
    let caps = default_caps().to_vec();
    let mesh = cap_mesh(&caps, cfg.rings, cfg.segments)?;
    let lights = default_lights();
    let bias = 1e-3 * mesh.diagonal();
    let views = default_cameras(cfg.view_size)?
        .into_iter()
        .map(|camera| {
            let image = render_image(&mesh, &camera, &lights, bias, |_, uv| ground_truth(&caps, uv));
            View { camera, image }
        })
        .collect();
    let ground_truth = ground_truth_atlas(&mesh, &caps, cfg.atlas_resolution)?;
    let scene = SceneDescription {
        mesh,
        views,
        lights,
        atlas_resolution: cfg.atlas_resolution,
        predictor: PredictorConfig { mode: cfg.mode, ..Default::default() },
        bilateral: SolverParams::default(),
    };
    Ok(SyntheticScene { scene, caps, ground_truth })
}

/// Writes `mesh.obj`, `images/<id>.pfm` with masks and `scene.json` into
/// `dir`; returns the config path.
pub fn write_scene(scene: &SceneDescription, dir: &Path) -> Result<PathBuf> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    scene.mesh.save_obj(&dir.join("mesh.obj"))?;
    let mut paths = Vec::new();
    for (i, v) in scene.views.iter().enumerate() {
        save_image(&images.join(format!("{i:03}.pfm")), &v.image, false)?;
        write_mask_png(&images.join(format!("{i:03}_mask.png")), v.image.width, v.image.height, &v.image.mask)?;
        paths.push(PathBuf::from(format!("images/{i:03}.pfm")));
    }
    let mut config: SceneConfig = scene.to_config(PathBuf::from("mesh.obj"), &paths);
    for (i, vc) in config.views.iter_mut().enumerate() {
        vc.mask = Some(PathBuf::from(format!("images/{i:03}_mask.png")));
    }
    let path = dir.join("scene.json");
    config.write(&path)?;
    Ok(path)
}
