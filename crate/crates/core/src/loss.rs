//! Material-map loss: log-compressed renderings under sampled lighting plus
//! weighted per-map L1 differences.

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{spherical_direction, Frame, Rgb, Vec3};
use crate::scene::{MaterialMaps, MaterialSample, SGLight};
use crate::shading::{point_light_terms, sg_light_terms, PointLight, ShadeTerms};
use crate::stats::LOG_OFFSET;

/// Weight of the per-map L1 terms.
pub const MAP_LOSS_WEIGHT: f64 = 0.1;
pub const SG_MIXTURE_LOBES: usize = 5;
pub const SG_SHARPNESS_RANGE: (f64, f64) = (5.0, 200.0);
pub const SG_AMPLITUDE_RANGE: (f64, f64) = (0.5, 2.0);

/// `log(0.1 + v)`.
pub fn log_compress(v: f64) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "log_compress expects non-negative input, got {v}"
        )));
    }
    Ok((LOG_OFFSET + v).ln())
}

pub fn log_compress_rgb(c: Rgb) -> Result<Rgb> {
    Ok(Vec3::new(log_compress(c.x)?, log_compress(c.y)?, log_compress(c.z)?))
}

/// Per-pixel log compression of an image.
pub fn log_compress_image(pixels: &[Rgb]) -> Result<Vec<Rgb>> {
    pixels.iter().map(|&c| log_compress_rgb(c)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum LightingKind {
    /// A point light placed at each pixel's mirror direction of the view.
    PointMirror { intensity: Rgb },
    SgMixture { lobes: [SGLight; SG_MIXTURE_LOBES] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LightingCondition {
    /// Unit direction toward the viewer, shared by all pixels.
    pub view_dir: Vec3,
    pub kind: LightingKind,
}

impl LightingCondition {
    /// Radiance terms of one pixel under this condition.
    pub fn shade(&self, mat: &MaterialSample, normal: Vec3) -> ShadeTerms {
        let v = self.view_dir;
        if normal.dot(v) <= 0.0 {
            return ShadeTerms::ZERO;
        }
        match &self.kind {
            LightingKind::PointMirror { intensity } => {
                let light = PointLight {
                    direction: v.reflect(normal),
                    intensity: *intensity,
                };
                point_light_terms(mat, normal, v, &light)
            }
            LightingKind::SgMixture { lobes } => {
                let mut acc = ShadeTerms::ZERO;
                for lobe in lobes {
                    acc += sg_light_terms(mat, normal, v, lobe);
                }
                acc
            }
        }
    }
}

fn cosine_hemisphere<R: Rng + ?Sized>(rng: &mut R, frame: &Frame) -> Vec3 {
    let u: f64 = rng.gen();
    let phi = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
    frame.to_world(spherical_direction(u.sqrt(), phi))
}

fn uniform_hemisphere<R: Rng + ?Sized>(rng: &mut R, frame: &Frame) -> Vec3 {
    let c: f64 = rng.gen();
    let phi = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
    frame.to_world(spherical_direction(c, phi))
}

/// `n_point` mirror point-light conditions followed by `n_sg` SG-mixture
/// conditions. Views are cosine-distributed around `base_view`; SG axes are
/// uniform on the hemisphere around `base_view`.
pub fn sample_conditions<R: Rng + ?Sized>(
    rng: &mut R,
    base_view: Vec3,
    n_point: usize,
    n_sg: usize,
) -> Vec<LightingCondition> {
    let frame = Frame::from_normal(base_view.normalize());
    let mut out = Vec::with_capacity(n_point + n_sg);
    for _ in 0..n_point {
        out.push(LightingCondition {
            view_dir: cosine_hemisphere(rng, &frame),
            kind: LightingKind::PointMirror { intensity: Vec3::ONE },
        });
    }
    for _ in 0..n_sg {
        let view_dir = cosine_hemisphere(rng, &frame);
        let lobes = std::array::from_fn(|_| {
            let axis = uniform_hemisphere(rng, &frame);
            let sharpness = rng.gen_range(SG_SHARPNESS_RANGE.0..=SG_SHARPNESS_RANGE.1);
            let (lo, hi) = SG_AMPLITUDE_RANGE;
            let amplitude = Vec3::new(rng.gen_range(lo..=hi), rng.gen_range(lo..=hi), rng.gen_range(lo..=hi));
            SGLight::new(axis, sharpness, amplitude)
        });
        out.push(LightingCondition {
            view_dir,
            kind: LightingKind::SgMixture { lobes },
        });
    }
    out
}

/// Mean absolute differences over valid pixels (and color channels).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MapLoss {
    pub diffuse: f64,
    pub specular: f64,
    pub roughness: f64,
}

impl MapLoss {
    pub fn sum(&self) -> f64 {
        self.diffuse + self.specular + self.roughness
    }
}

fn check_pair(pred: &MaterialMaps, gt: &MaterialMaps) -> Result<usize> {
    if !pred.same_shape(gt) {
        return Err(Error::ResolutionMismatch(format!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    if pred.mask != gt.mask {
        return Err(Error::InvalidArgument("prediction and ground truth masks differ".into()));
    }
    Ok(pred.valid_count())
}

pub fn map_loss(pred: &MaterialMaps, gt: &MaterialMaps) -> Result<MapLoss> {
    let n = check_pair(pred, gt)?;
    if n == 0 {
        return Ok(MapLoss::default());
    }
    let mut acc = MapLoss::default();
    for i in (0..pred.len()).filter(|&i| pred.mask[i]) {
        let (p, g) = (pred.get(i), gt.get(i));
        for c in 0..3 {
            acc.diffuse += (p.diffuse[c] - g.diffuse[c]).abs();
            acc.specular += (p.specular[c] - g.specular[c]).abs();
        }
        acc.roughness += (p.roughness - g.roughness).abs();
    }
    Ok(MapLoss {
        diffuse: acc.diffuse / (3 * n) as f64,
        specular: acc.specular / (3 * n) as f64,
        roughness: acc.roughness / n as f64,
    })
}

/// Any per-image distance added to the loss with a weight, in place of a
/// learned perceptual metric.
pub trait PerceptualMetric {
    fn distance(&self, width: usize, height: usize, a: &[Rgb], b: &[Rgb]) -> f64;
}

#[derive(Clone, Copy)]
pub struct PerceptualTerm<'a> {
    pub metric: &'a dyn PerceptualMetric,
    pub weight: f64,
}

fn check_normals(pred: &MaterialMaps, normals: &[Vec3], conditions: &[LightingCondition]) -> Result<()> {
    if normals.len() != pred.len() {
        return Err(Error::ResolutionMismatch(format!(
            "{} normals for {} pixels",
            normals.len(),
            pred.len()
        )));
    }
    if conditions.is_empty() {
        return Err(Error::InvalidArgument("no lighting conditions".into()));
    }
    Ok(())
}

/// Renders every valid pixel of `maps` under one condition; invalid pixels are black.
pub fn render_condition(maps: &MaterialMaps, normals: &[Vec3], cond: &LightingCondition) -> Vec<Rgb> {
    (0..maps.len())
        .map(|i| {
            if maps.mask[i] {
                cond.shade(&maps.get(i).clamped(), normals[i]).color
            } else {
                Vec3::ZERO
            }
        })
        .collect()
}

/// Mean over conditions of the L1 distance between log-compressed renderings.
pub fn rendering_term(
    pred: &MaterialMaps,
    gt: &MaterialMaps,
    normals: &[Vec3],
    conditions: &[LightingCondition],
) -> Result<f64> {
    Ok(rendering_term_impl(pred, gt, normals, conditions, None)?.0)
}

fn rendering_term_impl(
    pred: &MaterialMaps,
    gt: &MaterialMaps,
    normals: &[Vec3],
    conditions: &[LightingCondition],
    mut grad: Option<&mut [[f64; 7]]>,
) -> Result<(f64, Vec<(Vec<Rgb>, Vec<Rgb>)>)> {
    let n = check_pair(pred, gt)?;
    check_normals(pred, normals, conditions)?;
    let mut renders = Vec::new();
    if n == 0 {
        return Ok((0.0, renders));
    }
    let scale = 1.0 / (3 * n * conditions.len()) as f64;
    let mut total = 0.0;
    for cond in conditions {
        let mut img_p = vec![Vec3::ZERO; pred.len()];
        let mut img_g = vec![Vec3::ZERO; pred.len()];
        for i in (0..pred.len()).filter(|&i| pred.mask[i]) {
            let p = pred.get(i);
            let tp = cond.shade(&p.clamped(), normals[i]);
            let tg = cond.shade(&gt.get(i).clamped(), normals[i]);
            img_p[i] = tp.color;
            img_g[i] = tg.color;
            for c in 0..3 {
                let lp = log_compress(tp.color[c].max(0.0))?;
                let lg = log_compress(tg.color[c].max(0.0))?;
                let d = lp - lg;
                total += d.abs();
                if let Some(g) = grad.as_deref_mut() {
                    let s = d.signum() * scale / (LOG_OFFSET + tp.color[c].max(0.0));
                    let gi = &mut g[i];
                    gi[c] += s * tp.d_diffuse[c] * pass(p.diffuse[c], 0.0, 1.0);
                    gi[3 + c] += s * tp.d_specular[c] * pass(p.specular[c], 0.0, 1.0);
                    gi[6] += s * tp.d_roughness[c] * pass(p.roughness, 0.0, 1.0);
                }
            }
        }
        renders.push((img_p, img_g));
    }
    Ok((total * scale, renders))
}

/// Derivative of clamping to `[lo, hi]`.
#[inline]
fn pass(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo || x > hi {
        0.0
    } else {
        1.0
    }
}

/// Rendering term plus `0.1 * (L1(D) + L1(R) + L1(S))`, plus an optional
/// weighted perceptual distance per condition.
pub fn total_loss(
    pred: &MaterialMaps,
    gt: &MaterialMaps,
    normals: &[Vec3],
    conditions: &[LightingCondition],
    perceptual: Option<PerceptualTerm<'_>>,
) -> Result<f64> {
    let (render, renders) = rendering_term_impl(pred, gt, normals, conditions, None)?;
    let maps = map_loss(pred, gt)?;
    let mut loss = render + MAP_LOSS_WEIGHT * maps.sum();
    if let Some(term) = perceptual {
        let mut acc = 0.0;
        for (p, g) in &renders {
            acc += term.metric.distance(pred.width, pred.height, p, g);
        }
        loss += term.weight * acc / renders.len().max(1) as f64;
    }
    Ok(loss)
}

/// Total loss (without perceptual term) and its gradient with respect to each
/// pixel's `[diffuse rgb, specular rgb, roughness]` in `pred`.
pub fn total_loss_gradient(
    pred: &MaterialMaps,
    gt: &MaterialMaps,
    normals: &[Vec3],
    conditions: &[LightingCondition],
) -> Result<(f64, Vec<[f64; 7]>)> {
    let mut grad = vec![[0.0; 7]; pred.len()];
    let (render, _) = rendering_term_impl(pred, gt, normals, conditions, Some(&mut grad))?;
    let maps = map_loss(pred, gt)?;
    let n = pred.valid_count();
    if n > 0 {
        let wc = MAP_LOSS_WEIGHT / (3 * n) as f64;
        let wr = MAP_LOSS_WEIGHT / n as f64;
        for i in (0..pred.len()).filter(|&i| pred.mask[i]) {
            let (p, g) = (pred.get(i), gt.get(i));
            for c in 0..3 {
                grad[i][c] += wc * (p.diffuse[c] - g.diffuse[c]).signum() * nonzero(p.diffuse[c] - g.diffuse[c]);
                grad[i][3 + c] += wc * (p.specular[c] - g.specular[c]).signum() * nonzero(p.specular[c] - g.specular[c]);
            }
            grad[i][6] += wr * (p.roughness - g.roughness).signum() * nonzero(p.roughness - g.roughness);
        }
    }
    Ok((render + MAP_LOSS_WEIGHT * maps.sum(), grad))
}

#[inline]
fn nonzero(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        1.0
    }
}
