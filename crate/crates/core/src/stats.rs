//! Per-point view ranking, min/median/max color statistics and the feature
//! stacks handed to the material predictor.

use crate::error::{Error, Result};
use crate::math::{median_in_place, Rgb, Vec3};
use crate::scene::SceneDescription;
use crate::visibility::{gather_observations, ray_cast, Observation, SurfacePoint};

pub const MAX_SELECTED_VIEWS: usize = 12;

/// Offset of the log transform applied to radiance.
pub const LOG_OFFSET: f64 = 0.1;
/// Radiance mapped to +1 by [`preprocess_dynamic_range`].
pub const DYNAMIC_RANGE_CAP: f64 = 10.0;

/// Ranking cost of a view: `(1 - cos alpha) + d / d_max`, lower is better.
pub fn view_cost(alpha: f64, distance: f64, d_max: f64) -> Result<f64> {
    cost_from_cos(alpha.cos(), distance, d_max)
}

fn cost_from_cos(cos_alpha: f64, distance: f64, d_max: f64) -> Result<f64> {
    if !(d_max > 0.0) {
        return Err(Error::InvalidArgument("no candidate views (d_max = 0)".into()));
    }
    Ok((1.0 - cos_alpha) + distance / d_max)
}

/// A view that sees a surface point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub view_id: usize,
    /// Cosine between the surface normal and the direction to the camera.
    pub cos_alpha: f64,
    pub distance: f64,
}

impl Candidate {
    pub fn from_observation(normal: Vec3, obs: &Observation) -> Self {
        Candidate {
            view_id: obs.view_id,
            cos_alpha: normal.dot(obs.view_dir).clamp(-1.0, 1.0),
            distance: obs.distance,
        }
    }
}

/// Indices into `candidates` of the `k` lowest-cost entries, ascending cost,
/// ties broken by view id.
pub fn rank_candidates(candidates: &[Candidate], k: usize) -> Vec<usize> {
    let d_max = candidates.iter().map(|c| c.distance).fold(0.0, f64::max);
    if candidates.is_empty() || !(d_max > 0.0) {
        return Vec::new();
    }
    let mut order: Vec<(f64, usize, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (cost_from_cos(c.cos_alpha, c.distance, d_max).unwrap(), c.view_id, i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().take(k).map(|(_, _, i)| i).collect()
}

/// The `k` best observations of a point, ascending cost.
pub fn select_observations(normal: Vec3, observations: &[Observation], k: usize) -> Vec<Observation> {
    let candidates: Vec<Candidate> = observations
        .iter()
        .map(|o| Candidate::from_observation(normal, o))
        .collect();
    rank_candidates(&candidates, k)
        .into_iter()
        .map(|i| observations[i])
        .collect()
}

/// Ids of the at most `k` visible views with the smallest cost.
pub fn select_views(scene: &SceneDescription, point: &SurfacePoint, k: usize) -> Vec<usize> {
    let obs = gather_observations(scene, point);
    select_observations(point.normal, &obs, k)
        .iter()
        .map(|o| o.view_id)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelStats {
    pub min: Rgb,
    pub median: Rgb,
    pub max: Rgb,
    pub count: usize,
}

impl PixelStats {
    pub const INVALID: PixelStats = PixelStats {
        min: Vec3::ZERO,
        median: Vec3::ZERO,
        max: Vec3::ZERO,
        count: 0,
    };

    pub fn is_valid(&self) -> bool {
        self.count > 0
    }
}

/// Per-channel min, median and max. Even counts average the two middle values.
pub fn color_statistics(colors: &[Rgb]) -> PixelStats {
    if colors.is_empty() {
        return PixelStats::INVALID;
    }
    let mut out = PixelStats {
        count: colors.len(),
        ..PixelStats::INVALID
    };
    let mut channel = vec![0.0; colors.len()];
    for c in 0..3 {
        for (dst, col) in channel.iter_mut().zip(colors) {
            *dst = col[c];
        }
        let median = median_in_place(&mut channel).expect("non-empty");
        let (lo, hi) = (channel[0], channel[channel.len() - 1]);
        match c {
            0 => (out.min.x, out.median.x, out.max.x) = (lo, median, hi),
            1 => (out.min.y, out.median.y, out.max.y) = (lo, median, hi),
            _ => (out.min.z, out.median.z, out.max.z) = (lo, median, hi),
        }
    }
    out
}

/// `log(0.1 + v)` mapped affinely so that `v = 0` gives -1 and `v = 10` gives 1.
pub fn preprocess_dynamic_range(v: f64) -> Result<f64> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "dynamic range input must be finite and non-negative, got {v}"
        )));
    }
    let lo = LOG_OFFSET.ln();
    let hi = (LOG_OFFSET + DYNAMIC_RANGE_CAP).ln();
    Ok((-1.0 + 2.0 * ((LOG_OFFSET + v).ln() - lo) / (hi - lo)).min(1.0))
}

/// Inverse of [`preprocess_dynamic_range`] on `[-1, 1]`.
pub fn inverse_dynamic_range(x: f64) -> f64 {
    let lo = LOG_OFFSET.ln();
    let hi = (LOG_OFFSET + DYNAMIC_RANGE_CAP).ln();
    let log = lo + (x.clamp(-1.0, 1.0) + 1.0) * 0.5 * (hi - lo);
    (log.exp() - LOG_OFFSET).max(0.0)
}

fn preprocess_rgb(c: Rgb) -> [f32; 3] {
    let f = |v: f64| preprocess_dynamic_range(v.max(0.0)).unwrap_or(1.0) as f32;
    [f(c.x), f(c.y), f(c.z)]
}

/// Everything known about the surface seen through one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSample {
    pub point: SurfacePoint,
    /// The pixel's own radiance.
    pub input: Rgb,
    /// Selected observations, ascending cost.
    pub observations: Vec<Observation>,
    pub stats: PixelStats,
    /// Shading normal in camera coordinates.
    pub camera_normal: Vec3,
    /// Camera-space depth in meters.
    pub depth: f64,
}

/// Per-pixel statistics for one view; `None` where the pixel sees no usable surface.
#[derive(Debug, Clone)]
pub struct ViewStatistics {
    pub view_id: usize,
    pub width: usize,
    pub height: usize,
    pub samples: Vec<Option<PixelSample>>,
}

impl ViewStatistics {
    pub fn valid_count(&self) -> usize {
        self.samples.iter().filter(|s| s.is_some()).count()
    }
}

/// Casts a ray through every pixel center of `view_id` and reduces the best
/// views of the hit point to color statistics.
pub fn compute_view_statistics(scene: &SceneDescription, view_id: usize, k: usize) -> ViewStatistics {
    let view = &scene.views[view_id];
    let origin = view.camera.center();
    let (w, h) = (view.image.width, view.image.height);
    let mut samples = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            samples.push(pixel_sample(scene, view_id, origin, x, y, k));
        }
    }
    ViewStatistics {
        view_id,
        width: w,
        height: h,
        samples,
    }
}

fn pixel_sample(
    scene: &SceneDescription,
    view_id: usize,
    origin: Vec3,
    x: usize,
    y: usize,
    k: usize,
) -> Option<PixelSample> {
    let view = &scene.views[view_id];
    if !view.image.is_valid(x, y) {
        return None;
    }
    let dir = view.camera.pixel_ray([x as f64, y as f64]);
    let hit = ray_cast(&scene.mesh, origin, dir)?;
    let point = hit.point;
    if point.normal.dot(-dir) <= 0.0 {
        return None;
    }
    let observations = select_observations(point.normal, &gather_observations(scene, &point), k);
    let colors: Vec<Rgb> = observations.iter().map(|o| o.color).collect();
    let stats = color_statistics(&colors);
    if !stats.is_valid() {
        return None;
    }
    Some(PixelSample {
        point,
        input: view.image.get(x, y),
        observations,
        stats,
        camera_normal: view.camera.rotation.mul_vec(point.normal),
        depth: view.camera.world_to_camera(point.position).z,
    })
}

/// Named, spatially aligned planes with a shared validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub width: usize,
    pub height: usize,
    pub names: Vec<String>,
    pub planes: Vec<Vec<f32>>,
    pub mask: Vec<bool>,
}

pub const DIFFUSE_PLANES: [&str; 9] = [
    "input.r", "input.g", "input.b", "median.r", "median.g", "median.b", "max.r", "max.g", "max.b",
];

pub const SPECULAR_PLANES: [&str; 18] = [
    "input.r", "input.g", "input.b", "median.r", "median.g", "median.b", "max.r", "max.g", "max.b",
    "min.r", "min.g", "min.b", "normal.x", "normal.y", "normal.z", "depth.0", "depth.1", "depth.2",
];

impl FeatureStack {
    fn new(width: usize, height: usize, names: &[&str]) -> Self {
        FeatureStack {
            width,
            height,
            names: names.iter().map(|s| s.to_string()).collect(),
            planes: vec![vec![0.0; width * height]; names.len()],
            mask: vec![false; width * height],
        }
    }

    pub fn plane(&self, name: &str) -> Option<&[f32]> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&self.planes[i])
    }

    /// Three consecutive planes starting at `first` read as an RGB triple.
    pub fn rgb(&self, first: usize, pixel: usize) -> Rgb {
        Vec3::new(
            self.planes[first][pixel] as f64,
            self.planes[first + 1][pixel] as f64,
            self.planes[first + 2][pixel] as f64,
        )
    }
}

/// Diffuse (9 planes) and specular (18 planes) stacks for one view.
pub fn feature_stacks(scene: &SceneDescription, stats: &ViewStatistics) -> (FeatureStack, FeatureStack) {
    let (w, h) = (stats.width, stats.height);
    let mut diffuse = FeatureStack::new(w, h, &DIFFUSE_PLANES);
    let mut specular = FeatureStack::new(w, h, &SPECULAR_PLANES);
    let diag = scene.mesh.diagonal().max(f64::MIN_POSITIVE);
    for (i, sample) in stats.samples.iter().enumerate() {
        let Some(s) = sample else { continue };
        let groups = [
            preprocess_rgb(s.input),
            preprocess_rgb(s.stats.median),
            preprocess_rgb(s.stats.max),
            preprocess_rgb(s.stats.min),
            s.camera_normal.to_f32(),
            [preprocess_rgb(Vec3::splat(s.depth.max(0.0) / diag))[0]; 3],
        ];
        for (g, vals) in groups.iter().enumerate() {
            for c in 0..3 {
                if g < 3 {
                    diffuse.planes[3 * g + c][i] = vals[c];
                }
                specular.planes[3 * g + c][i] = vals[c];
            }
        }
        diffuse.mask[i] = true;
        specular.mask[i] = true;
    }
    (diffuse, specular)
}

pub fn build_feature_stacks(scene: &SceneDescription, view_id: usize) -> (FeatureStack, FeatureStack) {
    feature_stacks(scene, &compute_view_statistics(scene, view_id, MAX_SELECTED_VIEWS))
}
