//! Projection into calibrated views, ray-cast visibility, and reprojected
//! color lookup.

use crate::error::{Error, Result};
use crate::math::{Rgb, Vec3};
use crate::scene::{Camera, RadianceImage, SGLight, SceneDescription, SceneLight, TriangleMesh};
use crate::shading::PointLight;

/// Points closer than this to the camera plane cannot be projected.
pub const MIN_PROJECTION_DEPTH: f64 = 1e-6;

/// A point on the mesh surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub position: Vec3,
    /// Interpolated shading normal (unit length).
    pub normal: Vec3,
    pub triangle: usize,
    /// Weights of the triangle's three vertices; they sum to one.
    pub barycentric: [f64; 3],
}

impl SurfacePoint {
    pub fn on_triangle(mesh: &TriangleMesh, triangle: usize, barycentric: [f64; 3]) -> Self {
        SurfacePoint {
            position: mesh.interpolate_position(triangle, barycentric),
            normal: mesh.interpolate_normal(triangle, barycentric),
            triangle,
            barycentric,
        }
    }
}

/// The color of one surface point as seen from one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub view_id: usize,
    pub color: Rgb,
    /// Unit vector from the point toward the camera center.
    pub view_dir: Vec3,
    /// Distance from the point to the camera center (meters).
    pub distance: f64,
    /// Where the point projects in the view.
    pub pixel: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub point: SurfacePoint,
}

/// Pinhole projection: pixel coordinates and camera-space depth.
pub fn project(camera: &Camera, point: Vec3) -> Result<([f64; 2], f64)> {
    let pc = camera.world_to_camera(point);
    if !(pc.z > MIN_PROJECTION_DEPTH) {
        return Err(Error::BehindCamera { depth: pc.z });
    }
    let pixel = [
        camera.fx * pc.x / pc.z + camera.cx,
        camera.fy * pc.y / pc.z + camera.cy,
    ];
    Ok((pixel, pc.z))
}

/// Nearest intersection with `t > 0` along a unit-direction ray.
pub fn ray_cast(mesh: &TriangleMesh, origin: Vec3, direction: Vec3) -> Option<RayHit> {
    debug_assert!((direction.length() - 1.0).abs() < 1e-6);
    let hit = mesh.intersect(origin, direction, f64::INFINITY)?;
    Some(RayHit {
        t: hit.t,
        point: SurfacePoint::on_triangle(mesh, hit.triangle, hit.barycentric),
    })
}

/// True when the point projects inside the image and the ray from the camera
/// center meets no surface earlier than `bias` before the point.
pub fn is_visible(mesh: &TriangleMesh, camera: &Camera, point: &SurfacePoint, bias: f64) -> bool {
    let Ok((pixel, _)) = project(camera, point.position) else {
        return false;
    };
    if !camera.contains_pixel(pixel) {
        return false;
    }
    let origin = camera.center();
    let offset = point.position - origin;
    let distance = offset.length();
    if !(distance > 0.0) {
        return false;
    }
    !mesh
        .bvh()
        .any_hit(origin, offset / distance, distance - bias)
}

/// Bilinear radiance lookup; `None` when out of range or touching a masked pixel.
pub fn sample_bilinear(image: &RadianceImage, pixel: [f64; 2]) -> Option<Rgb> {
    image.sample_bilinear(pixel[0], pixel[1])
}

/// Observation of `point` in one view, if it faces the camera, is unoccluded
/// and lands on valid pixels.
pub fn observe(
    scene: &SceneDescription,
    view_id: usize,
    point: &SurfacePoint,
    bias: f64,
) -> Option<Observation> {
    let view = &scene.views[view_id];
    let to_cam = view.camera.center() - point.position;
    let distance = to_cam.length();
    if !(distance > 0.0) {
        return None;
    }
    let view_dir = to_cam / distance;
    if point.normal.dot(view_dir) <= 0.0 {
        return None;
    }
    if !is_visible(&scene.mesh, &view.camera, point, bias) {
        return None;
    }
    let (pixel, _) = project(&view.camera, point.position).ok()?;
    let color = sample_bilinear(&view.image, pixel)?;
    Some(Observation {
        view_id,
        color,
        view_dir,
        distance,
        pixel,
    })
}

/// All views observing `point`, ordered by view id.
pub fn gather_observations(scene: &SceneDescription, point: &SurfacePoint) -> Vec<Observation> {
    gather_observations_with_bias(scene, point, scene.visibility_bias())
}

pub fn gather_observations_with_bias(
    scene: &SceneDescription,
    point: &SurfacePoint,
    bias: f64,
) -> Vec<Observation> {
    (0..scene.views.len())
        .filter_map(|v| observe(scene, v, point, bias))
        .collect()
}

/// Lights reaching `point`: point and directional lights attenuated and
/// shadow-tested, SG lights passed through unshadowed.
pub fn direct_lights(
    mesh: &TriangleMesh,
    lights: &[SceneLight],
    point: &SurfacePoint,
    bias: f64,
) -> (Vec<PointLight>, Vec<SGLight>) {
    let mut points = Vec::new();
    let mut sgs = Vec::new();
    let origin = point.position + point.normal * bias;
    for light in lights {
        match *light {
            SceneLight::Point { position, intensity } => {
                let offset = position - origin;
                let dist = offset.length();
                if !(dist > bias) {
                    continue;
                }
                let dir = offset / dist;
                if point.normal.dot(dir) <= 0.0 || mesh.bvh().any_hit(origin, dir, dist - bias) {
                    continue;
                }
                let falloff = (position - point.position).length_squared();
                points.push(PointLight {
                    direction: dir,
                    intensity: intensity / falloff,
                });
            }
            SceneLight::Directional { direction, intensity } => {
                let dir = direction.normalize();
                if point.normal.dot(dir) <= 0.0 || mesh.bvh().any_hit(origin, dir, f64::INFINITY) {
                    continue;
                }
                points.push(PointLight {
                    direction: dir,
                    intensity,
                });
            }
            SceneLight::Sg(sg) => sgs.push(sg),
        }
    }
    (points, sgs)
}
