//! JSON scene description: mesh, calibrated views, lights and stage settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bilateral::SolverParams;
use crate::error::{Error, Result};
use crate::estimate::PredictorConfig;
use crate::math::{Mat3, Vec3};
use crate::scene::camera::{Camera, ROTATION_TOLERANCE};
use crate::scene::image::{load_image, read_mask_png, RadianceImage};
use crate::scene::material::SceneLight;
use crate::scene::mesh::{load_mesh, TriangleMesh};

/// Rotations further than this from orthonormal are rejected at load time;
/// smaller deviations are re-orthonormalized.
pub const CONFIG_ROTATION_TOLERANCE: f64 = 1e-4;

pub const DEFAULT_ATLAS_RESOLUTION: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    /// Optional validity mask (PNG, nonzero = valid), combined with the image's own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major world-to-camera rotation.
    pub rotation: [f64; 9],
    /// World-to-camera translation.
    pub translation: [f64; 3],
    /// Whether the image file is display-encoded (gamma 2.2).
    #[serde(default)]
    pub gamma: bool,
}

impl ViewConfig {
    pub fn from_camera(camera: &Camera, image: Option<PathBuf>, gamma: bool) -> Self {
        ViewConfig {
            image,
            mask: None,
            fx: camera.fx,
            fy: camera.fy,
            cx: camera.cx,
            cy: camera.cy,
            width: camera.width,
            height: camera.height,
            rotation: camera.rotation.to_row_major(),
            translation: camera.translation.to_array(),
            gamma,
        }
    }

    pub fn camera(&self) -> Result<Camera> {
        let mut rotation = Mat3::from_row_major(self.rotation);
        let err = rotation.orthonormality_error();
        if !(err <= CONFIG_ROTATION_TOLERANCE) {
            return Err(Error::InvalidCamera(format!(
                "rotation deviates from orthonormal by {err:.3e} (limit {CONFIG_ROTATION_TOLERANCE:e})"
            )));
        }
        if err > ROTATION_TOLERANCE {
            rotation = rotation.orthonormalized();
        }
        Camera::new(
            rotation,
            Vec3::from_array(self.translation),
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
        )
    }
}

fn default_atlas_resolution() -> usize {
    DEFAULT_ATLAS_RESOLUTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub mesh: PathBuf,
    pub views: Vec<ViewConfig>,
    #[serde(default)]
    pub lights: Vec<SceneLight>,
    #[serde(default = "default_atlas_resolution")]
    pub atlas_resolution: usize,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub bilateral: SolverParams,
}

impl SceneConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SceneConfig::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// One calibrated photograph.
#[derive(Debug, Clone)]
pub struct View {
    pub camera: Camera,
    pub image: RadianceImage,
}

/// A fully loaded scene with every referenced file resolved.
#[derive(Debug, Clone)]
pub struct SceneDescription {
    pub mesh: TriangleMesh,
    pub views: Vec<View>,
    pub lights: Vec<SceneLight>,
    pub atlas_resolution: usize,
    pub predictor: PredictorConfig,
    pub bilateral: SolverParams,
}

impl SceneDescription {
    /// Resolves a parsed config; relative paths are taken against `base_dir`.
    pub fn from_config(config: &SceneConfig, base_dir: &Path) -> Result<Self> {
        let images = config.views.iter().filter(|v| v.image.is_some()).count();
        if images != config.views.len() {
            return Err(Error::CountMismatch {
                cameras: config.views.len(),
                images,
            });
        }
        if config.views.is_empty() {
            return Err(Error::Config("scene has no views".into()));
        }
        if config.atlas_resolution == 0 {
            return Err(Error::Config("atlas_resolution must be positive".into()));
        }
        for light in &config.lights {
            if let SceneLight::Sg(sg) = light {
                sg.validate().map_err(Error::Config)?;
            }
        }
        config.predictor.validate()?;
        config.bilateral.validate()?;

        let resolve = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };
        let mesh_path = resolve(&config.mesh);
        if !mesh_path.exists() {
            return Err(Error::Config(format!(
                "mesh file {} does not exist",
                mesh_path.display()
            )));
        }
        let mesh = load_mesh(&mesh_path)?;
        let mut views = Vec::with_capacity(config.views.len());
        for (i, vc) in config.views.iter().enumerate() {
            let camera = vc
                .camera()
                .map_err(|e| Error::Config(format!("view {i}: {e}")))?;
            let image_path = resolve(vc.image.as_deref().expect("checked above"));
            if !image_path.exists() {
                return Err(Error::Config(format!(
                    "view {i}: image {} does not exist",
                    image_path.display()
                )));
            }
            let mut image = load_image(&image_path, vc.gamma)?;
            if let Some(m) = &vc.mask {
                let mask_path = resolve(m);
                let (w, h, mask) = read_mask_png(&mask_path)?;
                if w != image.width || h != image.height {
                    return Err(Error::Config(format!(
                        "view {i}: mask is {w}x{h} but image is {}x{}",
                        image.width, image.height
                    )));
                }
                for (a, b) in image.mask.iter_mut().zip(mask) {
                    *a &= b;
                }
            }
            if image.width != camera.width || image.height != camera.height {
                return Err(Error::Config(format!(
                    "view {i}: image is {}x{} but camera expects {}x{}",
                    image.width, image.height, camera.width, camera.height
                )));
            }
            views.push(View { camera, image });
        }
        Ok(SceneDescription {
            mesh,
            views,
            lights: config.lights.clone(),
            atlas_resolution: config.atlas_resolution,
            predictor: config.predictor.clone(),
            bilateral: config.bilateral.clone(),
        })
    }

    /// Config describing this scene, with the mesh and images at the given paths.
    pub fn to_config(&self, mesh: PathBuf, images: &[PathBuf]) -> SceneConfig {
        assert_eq!(images.len(), self.views.len());
        SceneConfig {
            mesh,
            views: self
                .views
                .iter()
                .zip(images)
                .map(|(v, p)| ViewConfig::from_camera(&v.camera, Some(p.clone()), false))
                .collect(),
            lights: self.lights.clone(),
            atlas_resolution: self.atlas_resolution,
            predictor: self.predictor.clone(),
            bilateral: self.bilateral.clone(),
        }
    }

    /// Default visibility bias: 1e-3 of the scene diagonal.
    pub fn visibility_bias(&self) -> f64 {
        1e-3 * self.mesh.diagonal()
    }
}

/// Reads and resolves a scene config file.
pub fn load_scene_config(path: &Path) -> Result<SceneDescription> {
    let config = SceneConfig::read(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    SceneDescription::from_config(&config, base)
}
