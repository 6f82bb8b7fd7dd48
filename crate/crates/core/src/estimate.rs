//! Per-view material prediction from feature stacks: a color-statistics
//! heuristic and a per-pixel inverse-rendering optimizer with known lights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{median_in_place, Rgb, Vec3};
use crate::scene::{MaterialMaps, MaterialSample, SGLight, SceneDescription, MIN_ROUGHNESS};
use crate::shading::{point_light_terms, sg_light_terms, PointLight, ShadeTerms};
use crate::stats::{
    compute_view_statistics, feature_stacks, inverse_dynamic_range, FeatureStack, ViewStatistics,
    LOG_OFFSET, MAX_SELECTED_VIEWS,
};
use crate::visibility::{direct_lights, Observation};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;
const MAX_HALVINGS: usize = 6;
/// Consecutive rejected steps after which a pixel is considered converged.
const STALL_LIMIT: usize = 8;
const SMOOTHING_START: f64 = 1e-2;
const SMOOTHING_END: f64 = 1e-6;
const FALLBACK_HALVINGS: usize = 20;
const INIT_SPECULAR: [f64; 5] = [0.0, 0.15, 0.3, 0.5, 0.75];
const INIT_ROUGHNESS: [f64; 5] = [0.1, 0.2, 0.35, 0.55, 0.8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorMode {
    #[default]
    Heuristic,
    Optimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub mode: PredictorMode,
    pub iterations: usize,
    pub step_size: f64,
    pub seed: u64,
    /// Start the optimizer from the heuristic instead of a seeded random guess.
    pub init_from_heuristic: bool,
    /// Reject steps that increase a pixel's loss, halving the step first.
    pub backtracking: bool,
    /// Specular = gain * luminance spread.
    pub specular_gain: f64,
    /// Roughness = 1 - gain * luminance spread.
    pub roughness_gain: f64,
    pub max_views: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            mode: PredictorMode::Heuristic,
            iterations: 100,
            step_size: 0.02,
            seed: 0,
            init_from_heuristic: true,
            backtracking: true,
            specular_gain: 0.5,
            roughness_gain: 0.8,
            max_views: MAX_SELECTED_VIEWS,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("predictor.iterations must be at least 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config("predictor.step_size must be positive".into()));
        }
        if !(self.specular_gain >= 0.0 && self.roughness_gain >= 0.0) {
            return Err(Error::Config("predictor gains must be non-negative".into()));
        }
        if self.max_views == 0 {
            return Err(Error::Config("predictor.max_views must be at least 1".into()));
        }
        Ok(())
    }
}

/// Diffuse from the median plane, specular and roughness from the luminance
/// spread between the max and min planes.
pub fn heuristic_predict(
    diffuse: &FeatureStack,
    specular: &FeatureStack,
    cfg: &PredictorConfig,
) -> Result<MaterialMaps> {
    if diffuse.planes.len() != 9 || specular.planes.len() != 18 {
        return Err(Error::InvalidArgument(format!(
            "expected 9 diffuse and 18 specular planes, got {} and {}",
            diffuse.planes.len(),
            specular.planes.len()
        )));
    }
    if (diffuse.width, diffuse.height) != (specular.width, specular.height) {
        return Err(Error::ResolutionMismatch("feature stacks differ in size".into()));
    }
    let mut maps = MaterialMaps::new(diffuse.width, diffuse.height);
    let undo = |c: Rgb| c.map(inverse_dynamic_range);
    for i in 0..maps.len() {
        if !(diffuse.mask[i] && specular.mask[i]) {
            continue;
        }
        let median = undo(diffuse.rgb(3, i));
        let spread = undo(specular.rgb(6, i)).luminance() - undo(specular.rgb(9, i)).luminance();
        maps.set(i, heuristic_sample(median, spread, cfg));
    }
    Ok(maps)
}

fn heuristic_sample(median: Rgb, spread: f64, cfg: &PredictorConfig) -> MaterialSample {
    let spread = spread.max(0.0);
    MaterialSample::new(
        median.map(|v| v.clamp(0.0, 1.0)),
        Vec3::splat((cfg.specular_gain * spread).clamp(0.0, 1.0)),
        (1.0 - cfg.roughness_gain * spread).clamp(MIN_ROUGHNESS, 1.0),
    )
}

/// One pixel's inverse-rendering problem: its observations and the lights
/// that reach it.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelProblem {
    pub normal: Vec3,
    pub observations: Vec<Observation>,
    pub point_lights: Vec<PointLight>,
    pub sg_lights: Vec<SGLight>,
}

impl PixelProblem {
    fn terms(&self, mat: &MaterialSample, v: Vec3) -> ShadeTerms {
        let mut acc = ShadeTerms::ZERO;
        if self.normal.dot(v) <= 0.0 {
            return acc;
        }
        for l in &self.point_lights {
            acc += point_light_terms(mat, self.normal, v, l);
        }
        for l in &self.sg_lights {
            acc += sg_light_terms(mat, self.normal, v, l);
        }
        acc
    }

    /// Mean log-space L1 distance between shaded and observed colors.
    pub fn loss(&self, mat: &MaterialSample) -> f64 {
        self.loss_and_gradient(mat).0
    }

    /// Loss and its gradient with respect to the seven material channels.
    pub fn loss_and_gradient(&self, mat: &MaterialSample) -> (f64, [f64; 7]) {
        let (loss, _, grad) = self.smoothed(mat, 0.0);
        (loss, grad)
    }

    /// L1 loss, pseudo-Huber surrogate of width `delta` and the surrogate's
    /// gradient. `delta = 0` gives the L1 subgradient.
    fn smoothed(&self, mat: &MaterialSample, delta: f64) -> (f64, f64, [f64; 7]) {
        self.smoothed_against(mat, delta, &self.log_targets())
    }

    /// Log-compressed observed colors.
    fn log_targets(&self) -> Vec<[f64; 3]> {
        self.observations.iter().map(|o| std::array::from_fn(|c| (LOG_OFFSET + o.color[c].max(0.0)).ln())).collect()
    }

    fn smoothed_against(&self, mat: &MaterialSample, delta: f64, targets: &[[f64; 3]]) -> (f64, f64, [f64; 7]) {
        let mut loss = 0.0;
        let mut smooth = 0.0;
        let mut grad = [0.0; 7];
        if self.observations.is_empty() {
            return (0.0, 0.0, grad);
        }
        let scale = 1.0 / (3 * self.observations.len()) as f64;
        for (obs, target) in self.observations.iter().zip(targets) {
            let t = self.terms(mat, obs.view_dir);
            for c in 0..3 {
                let shaded = t.color[c].max(0.0);
                let d = (LOG_OFFSET + shaded).ln() - target[c];
                loss += d.abs();
                let r = (d * d + delta * delta).sqrt();
                smooth += r - delta;
                if d != 0.0 {
                    let s = d / r * scale / (LOG_OFFSET + shaded);
                    grad[c] += s * t.d_diffuse[c];
                    grad[3 + c] += s * t.d_specular[c];
                    grad[6] += s * t.d_roughness[c];
                }
            }
        }
        (loss * scale, smooth * scale, grad)
    }

    /// Albedo that explains `color` as Lambertian reflection of the known
    /// lights; channels receiving no light keep `fallback`.
    pub fn lit_albedo(&self, color: Vec3, fallback: Vec3) -> Vec3 {
        let mut irradiance = Vec3::ZERO;
        for l in &self.point_lights {
            irradiance += l.intensity * self.normal.dot(l.direction).max(0.0);
        }
        for l in &self.sg_lights {
            irradiance += crate::shading::sg_irradiance(l, self.normal);
        }
        let mut out = fallback;
        for c in 0..3 {
            if irradiance[c] > 0.0 {
                out[c] = (color[c] * std::f64::consts::PI / irradiance[c]).clamp(0.0, 1.0);
            }
        }
        out
    }

    /// For fixed specular and roughness the shaded color is linear in the
    /// diffuse albedo; returns the per-channel median of the albedos that
    /// reproduce each observation exactly.
    pub fn fit_diffuse(&self, specular: Rgb, roughness: f64, fallback: Rgb) -> Rgb {
        let mat = MaterialSample::new(Vec3::ZERO, specular, roughness);
        let mut ratios: [Vec<f64>; 3] = Default::default();
        for obs in &self.observations {
            let t = self.terms(&mat, obs.view_dir);
            for c in 0..3 {
                if t.d_diffuse[c] > 1e-6 {
                    ratios[c].push((obs.color[c] - t.color[c]) / t.d_diffuse[c]);
                }
            }
        }
        let mut out = fallback;
        for (c, r) in ratios.iter_mut().enumerate() {
            if let Some(m) = median_in_place(r) {
                out[c] = m.clamp(0.0, 1.0);
            }
        }
        out
    }

    /// Best of `start` and a coarse specular/roughness grid, each with its
    /// fitted diffuse albedo.
    pub fn coarse_start(&self, start: &MaterialSample) -> MaterialSample {
        let mut best = *start;
        let mut best_loss = self.loss(start);
        for &sv in &INIT_SPECULAR {
            for &r in &INIT_ROUGHNESS {
                let spec = Vec3::splat(sv);
                let cand = MaterialSample::new(self.fit_diffuse(spec, r, start.diffuse), spec, r);
                let l = self.loss(&cand);
                if l < best_loss {
                    best = cand;
                    best_loss = l;
                }
            }
        }
        best
    }

    /// How close the observations come to the peak of the specular lobe of
    /// `mat`: the largest Beckmann falloff exp(-tan^2(theta_h) / alpha^2) over
    /// observations and lights. Near zero when specular and roughness trade
    /// off against each other; zero for unlit pixels.
    pub fn specular_confidence(&self, mat: &MaterialSample) -> f64 {
        let a2 = mat.roughness.max(MIN_ROUGHNESS).powi(2);
        let dirs = self.point_lights.iter().map(|l| l.direction).chain(self.sg_lights.iter().map(|l| l.axis));
        let mut best: f64 = 0.0;
        for l in dirs {
            for obs in &self.observations {
                let h = obs.view_dir + l;
                if h.length() < 1e-12 {
                    continue;
                }
                let c = h.normalize().dot(self.normal);
                if c > 0.0 {
                    let tan2 = (1.0 - c * c).max(0.0) / (c * c);
                    best = best.max((-tan2 / a2).exp());
                }
            }
        }
        best
    }

    /// True when no light reaches the pixel, so its material is unconstrained.
    pub fn is_unlit(&self) -> bool {
        self.point_lights.is_empty() && self.sg_lights.is_empty()
    }
}

fn project(c: [f64; 7]) -> [f64; 7] {
    let mut out = [0.0; 7];
    for k in 0..6 {
        out[k] = c[k].clamp(0.0, 1.0);
    }
    out[6] = c[6].clamp(MIN_ROUGHNESS, 1.0);
    out
}

/// Adam on one pixel. Returns the final material and the loss after every
/// iteration (the first entry is the initial loss).
pub fn optimize_pixel(
    problem: &PixelProblem,
    init: &MaterialSample,
    cfg: &PredictorConfig,
) -> (MaterialSample, Vec<f64>) {
    let targets = problem.log_targets();
    let eval = |c: [f64; 7], delta: f64| problem.smoothed_against(&MaterialSample::from_channels(c), delta, &targets);
    let mut x = project(init.to_channels());
    let mut delta = SMOOTHING_START;
    let (mut loss, _, mut grad) = eval(x, delta);
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    trace.push(loss);
    let mut m = [0.0; 7];
    let mut v = [0.0; 7];
    let mut stalled = 0;
    for t in 1..=cfg.iterations {
        if loss == 0.0 || stalled >= STALL_LIMIT {
            break;
        }
        let mut dir = [0.0; 7];
        let b1 = 1.0 - ADAM_BETA1.powi(t as i32);
        let b2 = 1.0 - ADAM_BETA2.powi(t as i32);
        for k in 0..7 {
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * grad[k];
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * grad[k] * grad[k];
            dir[k] = (m[k] / b1) / ((v[k] / b2).sqrt() + ADAM_EPSILON);
        }
        let mut next;
        if !cfg.backtracking {
            let cand = project(std::array::from_fn(|k| x[k] - cfg.step_size * dir[k]));
            next = Some((cand, eval(cand, delta)));
        } else {
            next = line_search(&eval, x, &dir, cfg.step_size, MAX_HALVINGS, loss, delta);
            if next.is_none() {
                // Adam moves every channel by about the same amount, which
                // overshoots channels sitting at a kink of the L1 loss. Fall
                // back to the plain gradient of the smoothed loss.
                let gmax = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
                if gmax > 0.0 {
                    let g = grad.map(|g| g / gmax);
                    next = line_search(&eval, x, &g, cfg.step_size, FALLBACK_HALVINGS, loss, delta);
                }
            }
        }
        match next {
            Some((cand, (cl, _, cg))) => {
                x = cand;
                loss = cl;
                grad = cg;
                stalled = 0;
            }
            None => {
                if delta > SMOOTHING_END {
                    delta *= 0.1;
                    grad = eval(x, delta).2;
                } else {
                    stalled += 1;
                }
            }
        }
        trace.push(loss);
    }
    (MaterialSample::from_channels(x), trace)
}

type Evaluated = ([f64; 7], (f64, f64, [f64; 7]));

/// Halving line search along `-dir`; accepts the first projected point whose
/// L1 loss does not exceed `loss`.
fn line_search(
    eval: &impl Fn([f64; 7], f64) -> (f64, f64, [f64; 7]),
    x: [f64; 7],
    dir: &[f64; 7],
    step: f64,
    halvings: usize,
    loss: f64,
    delta: f64,
) -> Option<Evaluated> {
    let mut step = step;
    for _ in 0..=halvings {
        let cand = project(std::array::from_fn(|k| x[k] - step * dir[k]));
        if cand != x {
            let e = eval(cand, delta);
            if e.0 <= loss {
                return Some((cand, e));
            }
        }
        step *= 0.5;
    }
    None
}

/// Optimizes every pixel that has a problem; other pixels keep `init`.
pub fn optimize_materials(
    problems: &[Option<PixelProblem>],
    init: &MaterialMaps,
    cfg: &PredictorConfig,
) -> Result<MaterialMaps> {
    if problems.len() != init.len() {
        return Err(Error::ResolutionMismatch(format!(
            "{} pixel problems for {} pixels",
            problems.len(),
            init.len()
        )));
    }
    let mut out = init.clone();
    for (i, p) in problems.iter().enumerate() {
        let Some(p) = p else { continue };
        if !init.mask[i] || p.observations.is_empty() {
            continue;
        }
        let (mat, _) = optimize_pixel(p, &init.get(i), cfg);
        out.set(i, mat);
    }
    Ok(out)
}

/// Per-view prediction with bookkeeping.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub maps: MaterialMaps,
    /// Pixels no light reaches; their material is the initial guess.
    pub unlit_pixels: usize,
    /// Mean per-pixel photometric loss before and after optimization; `None`
    /// without known lights.
    pub loss_before: Option<f64>,
    pub loss_after: Option<f64>,
    /// Per-pixel specular confidence of optimized maps, for the bilateral
    /// solver; `None` in heuristic mode.
    pub confidence: Option<Vec<f32>>,
}

/// Builds the optimizer's per-pixel problems for one view.
pub fn pixel_problems(scene: &SceneDescription, stats: &ViewStatistics) -> Vec<Option<PixelProblem>> {
    let bias = scene.visibility_bias();
    stats
        .samples
        .iter()
        .map(|s| {
            let s = s.as_ref()?;
            let (point_lights, sg_lights) = direct_lights(&scene.mesh, &scene.lights, &s.point, bias);
            Some(PixelProblem {
                normal: s.point.normal,
                observations: s.observations.clone(),
                point_lights,
                sg_lights,
            })
        })
        .collect()
}

/// Starting point for the optimizer: the heuristic, with diffuse replaced by
/// the albedo that explains the median color under the known lights, or a
/// better-fitting point of a coarse specular/roughness grid.
fn lit_initialization(heuristic: &MaterialMaps, problems: &[Option<PixelProblem>], stats: &ViewStatistics) -> MaterialMaps {
    let mut init = heuristic.clone();
    for (i, p) in problems.iter().enumerate() {
        let (Some(p), Some(s)) = (p, &stats.samples[i]) else { continue };
        if !init.mask[i] {
            continue;
        }
        let mut mat = init.get(i);
        mat.diffuse = p.lit_albedo(s.stats.median, mat.diffuse);
        if !p.is_unlit() {
            mat = p.coarse_start(&mat);
        }
        init.set(i, mat);
    }
    init
}

fn random_initialization(mask: &MaterialMaps, seed: u64, view_id: usize) -> MaterialMaps {
    let mut init = mask.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((view_id as u64) << 32));
    for i in 0..init.len() {
        if !init.mask[i] {
            continue;
        }
        rng.set_stream(i as u64);
        rng.set_word_pos(0);
        let mut c = [0.0f64; 7];
        for v in c.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        c[6] = c[6].max(MIN_ROUGHNESS);
        init.set(i, MaterialSample::from_channels(c));
    }
    init
}

/// Prediction for a view whose statistics are already computed.
pub fn predict_from_statistics(
    scene: &SceneDescription,
    stats: &ViewStatistics,
    cfg: &PredictorConfig,
) -> Result<Prediction> {
    cfg.validate()?;
    let (d, s) = feature_stacks(scene, stats);
    let heuristic = heuristic_predict(&d, &s, cfg)?;
    if cfg.mode == PredictorMode::Heuristic && scene.lights.is_empty() {
        return Ok(Prediction { maps: heuristic, unlit_pixels: 0, loss_before: None, loss_after: None, confidence: None });
    }
    if scene.lights.is_empty() {
        return Err(Error::Config("optimize mode requires at least one light in the scene".into()));
    }
    let problems = pixel_problems(scene, stats);
    let (init, maps) = if cfg.mode == PredictorMode::Heuristic {
        (heuristic.clone(), heuristic)
    } else {
        let init = if cfg.init_from_heuristic {
            lit_initialization(&heuristic, &problems, stats)
        } else {
            random_initialization(&heuristic, cfg.seed, stats.view_id)
        };
        let maps = optimize_materials(&problems, &init, cfg)?;
        (init, maps)
    };
    let mut unlit = 0;
    let (mut before, mut after, mut n) = (0.0, 0.0, 0usize);
    let mut confidence = vec![0.0f32; maps.len()];
    for (i, p) in problems.iter().enumerate() {
        let Some(p) = p else { continue };
        if p.is_unlit() {
            unlit += 1;
        }
        before += p.loss(&init.get(i));
        after += p.loss(&maps.get(i));
        if maps.mask[i] {
            confidence[i] = p.specular_confidence(&maps.get(i)) as f32;
        }
        n += 1;
    }
    let n = n.max(1) as f64;
    Ok(Prediction {
        maps,
        unlit_pixels: unlit,
        loss_before: Some(before / n),
        loss_after: Some(after / n),
        confidence: (cfg.mode == PredictorMode::Optimize).then_some(confidence),
    })
}

pub fn predict_view(scene: &SceneDescription, view_id: usize, cfg: &PredictorConfig) -> Result<MaterialMaps> {
    if view_id >= scene.views.len() {
        return Err(Error::InvalidArgument(format!("view {view_id} does not exist")));
    }
    let stats = compute_view_statistics(scene, view_id, cfg.max_views);
    Ok(predict_from_statistics(scene, &stats, cfg)?.maps)
}
