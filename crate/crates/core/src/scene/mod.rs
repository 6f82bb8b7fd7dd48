//! Domain types and loaders shared by every stage: meshes, cameras, images,
//! material rasters and the scene config.

pub mod bvh;
pub mod camera;
pub mod config;
pub mod image;
pub mod material;
pub mod mesh;

pub use bvh::{Aabb, Bvh, TriangleHit};
pub use camera::Camera;
pub use config::{load_scene_config, SceneConfig, SceneDescription, View, ViewConfig};
pub use image::{load_image, save_image, RadianceImage};
pub use material::{MaterialMaps, MaterialSample, SGLight, SceneLight, MIN_ROUGHNESS};
pub use mesh::{load_mesh, TriangleMesh};
