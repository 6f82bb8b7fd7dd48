//! End-to-end orchestration: statistics, per-view prediction, bilateral
//! smoothing, atlas baking, direct-lighting re-rendering and PSNR validation.
//!
//! Artifacts under the output directory:
//! `stats/<id>/*.pfm` (with `--dump-stats`), `views/<id>/` (predicted maps),
//! `smoothed/<id>/`, `atlas/`, `rerender/<id>.pfm` (+ `_mask.png`) and
//! `report.json`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::atlas::{bake_atlas, MaterialAtlas};
use crate::bilateral::smooth_with_confidence;
use crate::error::{Error, Result};
use crate::estimate::{predict_from_statistics, PredictorMode};
use crate::scene::image::{read_mask_png, read_pfm, write_mask_png, write_pfm, PfmData, DECODE_GAMMA};
use crate::scene::{
    Camera, MaterialMaps, MaterialSample, RadianceImage, SceneConfig, SceneDescription, SceneLight, TriangleMesh,
};
use crate::shading::{shade_point, ShadingContext};
use crate::stats::{compute_view_statistics, feature_stacks, FeatureStack};
use crate::visibility::{direct_lights, ray_cast, SurfacePoint};

pub const PSNR_CAP: f64 = 99.0;
pub const REPORT_FILE: &str = "report.json";
pub const CONFIDENCE_FILE: &str = "confidence.pfm";
/// Floor for saved optimizer confidences, so regions without a single
/// highlight keep a weak pull toward their own estimates.
const MIN_CONFIDENCE: f64 = 1e-3;

/// Direct-lighting render with ray-cast shadows. `material` supplies the
/// material at a hit point and its UV; misses and back-facing hits are black
/// and masked.
pub fn render_image(
    mesh: &TriangleMesh,
    camera: &Camera,
    lights: &[SceneLight],
    bias: f64,
    material: impl Fn(&SurfacePoint, [f64; 2]) -> Option<MaterialSample>,
) -> RadianceImage {
    let mut image = RadianceImage::new(camera.width, camera.height);
    let origin = camera.center();
    for y in 0..camera.height {
        for x in 0..camera.width {
            let i = image.index(x, y);
            image.pixels[i] = [0.0; 3];
            image.mask[i] = false;
            let dir = camera.pixel_ray([x as f64, y as f64]);
            let Some(hit) = ray_cast(mesh, origin, dir) else { continue };
            let view = -dir;
            if hit.point.normal.dot(view) <= 0.0 {
                continue;
            }
            let uv = mesh.interpolate_uv(hit.point.triangle, hit.point.barycentric);
            let Some(mat) = material(&hit.point, uv) else { continue };
            let (point_lights, sg_lights) = direct_lights(mesh, lights, &hit.point, bias);
            let ctx = ShadingContext { normal: hit.point.normal, view, point_lights, sg_lights };
            image.pixels[i] = shade_point(&mat, &ctx).to_f32();
            image.mask[i] = true;
        }
    }
    image
}

/// Renders the baked atlas from one camera.
pub fn rerender(atlas: &MaterialAtlas, mesh: &TriangleMesh, camera: &Camera, lights: &[SceneLight], bias: f64) -> RadianceImage {
    render_image(mesh, camera, lights, bias, |_, uv| atlas.sample(uv))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

fn display(v: f32) -> f64 {
    (v as f64).clamp(0.0, 1.0).powf(1.0 / DECODE_GAMMA)
}

/// PSNR in dB over jointly valid pixels, after clamping to [0, 1] and
/// display gamma encoding; peak 1.
pub fn psnr(a: &RadianceImage, b: &RadianceImage) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::ResolutionMismatch(format!(
            "images are {}x{} and {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..a.pixels.len() {
        if !(a.mask[i] && b.mask[i]) {
            continue;
        }
        for c in 0..3 {
            let d = display(a.pixels[i][c]) - display(b.pixels[i][c]);
            sum += d * d;
        }
        n += 3;
    }
    if n == 0 {
        return Err(Error::DisjointMasks);
    }
    Ok(psnr_from_mse(sum / n as f64))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewReport {
    pub view_id: usize,
    pub valid_pixels: usize,
    pub unlit_pixels: usize,
    pub loss_before: Option<f64>,
    pub loss_after: Option<f64>,
    pub psnr: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AtlasReport {
    pub resolution: usize,
    pub covered_texels: usize,
    /// Mean of the coverage raster.
    pub coverage: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub mode: String,
    pub seed: u64,
    pub views: Vec<ViewReport>,
    pub atlas: Option<AtlasReport>,
    /// Wall time per stage in seconds; the only nondeterministic field.
    pub timing: BTreeMap<String, f64>,
}

impl PipelineReport {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    fn view_mut(&mut self, view_id: usize) -> &mut ViewReport {
        if let Some(i) = self.views.iter().position(|v| v.view_id == view_id) {
            return &mut self.views[i];
        }
        self.views.push(ViewReport { view_id, ..Default::default() });
        self.views.sort_by_key(|v| v.view_id);
        let i = self.views.iter().position(|v| v.view_id == view_id).expect("inserted");
        &mut self.views[i]
    }
}

/// An error tagged with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl StageError {
    /// True when the failure comes from the scene config rather than a stage.
    pub fn is_config_error(&self) -> bool {
        self.stage == "load"
            && matches!(
                self.source,
                Error::Config(_) | Error::Parse { .. } | Error::Io { .. } | Error::InvalidCamera(_) | Error::CountMismatch { .. }
            )
    }
}

fn tag(stage: &'static str) -> impl FnOnce(Error) -> StageError {
    move |source| StageError { stage, source }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Overrides the predictor seed.
    pub seed: Option<u64>,
    pub dump_stats: bool,
}

/// Loads a scene config, applying the seed override.
pub fn load_scene(config_path: &Path, seed: Option<u64>) -> std::result::Result<SceneDescription, StageError> {
    let config = SceneConfig::read(config_path).map_err(tag("load"))?;
    let base = config_path.parent().unwrap_or_else(|| Path::new("."));
    let mut scene = SceneDescription::from_config(&config, base).map_err(tag("load"))?;
    if let Some(s) = seed {
        scene.predictor.seed = s;
    }
    Ok(scene)
}

pub fn view_dir(out: &Path, kind: &str, view_id: usize) -> PathBuf {
    out.join(kind).join(format!("{view_id:03}"))
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the specular stack (a superset of the diffuse stack) as RGB PFMs,
/// one per statistic.
pub fn save_feature_stack(stack: &FeatureStack, dir: &Path) -> Result<()> {
    mkdir(dir)?;
    let n = stack.width * stack.height;
    for first in (0..stack.names.len()).step_by(3) {
        let name = stack.names[first].split('.').next().unwrap_or("plane");
        let mut data = Vec::with_capacity(3 * n);
        for p in 0..n {
            for k in 0..3 {
                data.push(stack.planes[first + k][p]);
            }
        }
        write_pfm(&dir.join(format!("{name}.pfm")), &PfmData { width: stack.width, height: stack.height, channels: 3, data })?;
    }
    write_mask_png(&dir.join("mask.png"), stack.width, stack.height, &stack.mask)
}

fn report_path(out: &Path) -> PathBuf {
    out.join(REPORT_FILE)
}

fn load_report(out: &Path, scene: &SceneDescription) -> Result<PipelineReport> {
    let path = report_path(out);
    let mut r = if path.exists() { PipelineReport::read(&path)? } else { PipelineReport::default() };
    r.mode = match scene.predictor.mode {
        PredictorMode::Heuristic => "heuristic".into(),
        PredictorMode::Optimize => "optimize".into(),
    };
    r.seed = scene.predictor.seed;
    Ok(r)
}

/// Feature stacks of every view written to `stats/<id>/`.
pub fn stage_stats(scene: &SceneDescription, out: &Path) -> Result<()> {
    for v in 0..scene.views.len() {
        let stats = compute_view_statistics(scene, v, scene.predictor.max_views);
        let (_, spec) = feature_stacks(scene, &stats);
        save_feature_stack(&spec, &view_dir(out, "stats", v))?;
    }
    Ok(())
}

/// Per-view prediction into `views/<id>/`. Returns the seconds spent in
/// statistics and in prediction.
pub fn stage_predict(scene: &SceneDescription, out: &Path, dump_stats: bool, report: &mut PipelineReport) -> Result<(f64, f64)> {
    let (mut t_stats, mut t_pred) = (0.0, 0.0);
    for v in 0..scene.views.len() {
        let t0 = Instant::now();
        let stats = compute_view_statistics(scene, v, scene.predictor.max_views);
        if dump_stats {
            let (_, spec) = feature_stacks(scene, &stats);
            save_feature_stack(&spec, &view_dir(out, "stats", v))?;
        }
        let t1 = Instant::now();
        let prediction = predict_from_statistics(scene, &stats, &scene.predictor)?;
        drop(stats);
        let dir = view_dir(out, "views", v);
        prediction.maps.save(&dir)?;
        if let Some(conf) = prediction.confidence {
            let (width, height) = (prediction.maps.width, prediction.maps.height);
            write_pfm(&dir.join(CONFIDENCE_FILE), &PfmData { width, height, channels: 1, data: conf })?;
        }
        let t2 = Instant::now();
        t_stats += (t1 - t0).as_secs_f64();
        t_pred += (t2 - t1).as_secs_f64();
        let r = report.view_mut(v);
        r.valid_pixels = prediction.maps.valid_count();
        r.unlit_pixels = prediction.unlit_pixels;
        r.loss_before = prediction.loss_before;
        r.loss_after = prediction.loss_after;
    }
    Ok((t_stats, t_pred))
}

fn load_view_maps(scene: &SceneDescription, out: &Path, kind: &str) -> Result<Vec<MaterialMaps>> {
    (0..scene.views.len()).map(|v| MaterialMaps::load(&view_dir(out, kind, v))).collect()
}

/// Solver confidence for one view: the saved optimizer confidence floored at
/// `MIN_CONFIDENCE`, or 1 on every valid pixel.
fn load_confidence(dir: &Path, maps: &MaterialMaps) -> Result<Vec<f64>> {
    let path = dir.join(CONFIDENCE_FILE);
    if !path.exists() {
        return Ok(maps.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect());
    }
    let pfm = read_pfm(&path)?;
    if pfm.width != maps.width || pfm.height != maps.height || pfm.channels != 1 {
        return Err(Error::ResolutionMismatch(format!("{} does not match the view maps", path.display())));
    }
    Ok(pfm.data.iter().zip(&maps.mask).map(|(&c, &m)| if m { (c as f64).max(MIN_CONFIDENCE) } else { 0.0 }).collect())
}

/// `views/<id>/` smoothed into `smoothed/<id>/`.
pub fn stage_smooth(scene: &SceneDescription, out: &Path) -> Result<()> {
    for (v, maps) in load_view_maps(scene, out, "views")?.iter().enumerate() {
        let smoothed = if maps.valid_count() == 0 {
            maps.clone()
        } else {
            let confidence = load_confidence(&view_dir(out, "views", v), maps)?;
            smooth_with_confidence(maps, &confidence, &scene.bilateral)?
        };
        smoothed.save(&view_dir(out, "smoothed", v))?;
    }
    Ok(())
}

pub fn stage_bake(scene: &SceneDescription, out: &Path, report: &mut PipelineReport) -> Result<MaterialAtlas> {
    let maps = load_view_maps(scene, out, "smoothed")?;
    let atlas = bake_atlas(scene, &maps, scene.atlas_resolution)?;
    save_atlas(&atlas, &out.join("atlas"))?;
    report.atlas = Some(atlas_report(&atlas));
    Ok(atlas)
}

pub fn atlas_report(atlas: &MaterialAtlas) -> AtlasReport {
    let covered = atlas.covered_texels();
    AtlasReport { resolution: atlas.resolution, covered_texels: covered, coverage: covered as f64 / atlas.coverage.len() as f64 }
}

/// Atlas maps, previews, coverage and the per-texel view count.
pub fn save_atlas(atlas: &MaterialAtlas, dir: &Path) -> Result<()> {
    atlas.save(dir)?;
    let n = atlas.resolution;
    let data = atlas.view_count.iter().map(|&c| c as f32).collect();
    write_pfm(&dir.join("view_count.pfm"), &PfmData { width: n, height: n, channels: 1, data })
}

pub fn load_atlas(dir: &Path) -> Result<MaterialAtlas> {
    let maps = MaterialMaps::load(dir)?;
    if maps.width != maps.height {
        return Err(Error::ResolutionMismatch(format!("atlas is {}x{}, expected square", maps.width, maps.height)));
    }
    let (w, h, coverage) = read_mask_png(&dir.join("coverage.png"))?;
    let counts = read_pfm(&dir.join("view_count.pfm"))?;
    if w != maps.width || h != maps.height || counts.width != w || counts.height != h {
        return Err(Error::ResolutionMismatch("atlas rasters differ in size".into()));
    }
    Ok(MaterialAtlas {
        resolution: maps.width,
        maps,
        coverage,
        view_count: counts.data.iter().map(|&c| c as u32).collect(),
    })
}

pub fn stage_rerender(scene: &SceneDescription, out: &Path, atlas: &MaterialAtlas) -> Result<()> {
    let dir = out.join("rerender");
    mkdir(&dir)?;
    let bias = scene.visibility_bias();
    for (v, view) in scene.views.iter().enumerate() {
        let img = rerender(atlas, &scene.mesh, &view.camera, &scene.lights, bias);
        crate::scene::save_image(&dir.join(format!("{v:03}.pfm")), &img, false)?;
        write_mask_png(&dir.join(format!("{v:03}_mask.png")), img.width, img.height, &img.mask)?;
    }
    Ok(())
}

pub fn stage_validate(scene: &SceneDescription, out: &Path, report: &mut PipelineReport) -> Result<()> {
    for (v, view) in scene.views.iter().enumerate() {
        let dir = out.join("rerender");
        let mut rendered = crate::scene::load_image(&dir.join(format!("{v:03}.pfm")), false)?;
        let (w, h, mask) = read_mask_png(&dir.join(format!("{v:03}_mask.png")))?;
        if w != rendered.width || h != rendered.height {
            return Err(Error::ResolutionMismatch(format!("re-render mask of view {v} is {w}x{h}")));
        }
        rendered.mask = mask;
        report.view_mut(v).psnr = Some(psnr(&rendered, &view.image)?);
    }
    Ok(())
}

fn timed<T>(report: &mut PipelineReport, stage: &'static str, f: impl FnOnce(&mut PipelineReport) -> Result<T>) -> std::result::Result<T, StageError> {
    let t = Instant::now();
    let out = f(report).map_err(tag(stage))?;
    report.timing.insert(stage.to_string(), t.elapsed().as_secs_f64());
    Ok(out)
}

/// Runs one named stage (`stats`, `predict`, `smooth`, `bake`, `rerender`,
/// `validate`) against the artifacts already in `opts.out`, or the whole
/// pipeline for `pipeline`.
pub fn run_stage(stage: &str, config_path: &Path, opts: &RunOptions) -> std::result::Result<PipelineReport, StageError> {
    let t = Instant::now();
    let scene = load_scene(config_path, opts.seed)?;
    let load_time = t.elapsed().as_secs_f64();
    mkdir(&opts.out).map_err(tag("load"))?;
    let mut report = load_report(&opts.out, &scene).map_err(tag("load"))?;
    report.timing.insert("load".into(), load_time);
    let out = opts.out.as_path();
    match stage {
        "stats" => timed(&mut report, "stats", |_| stage_stats(&scene, out))?,
        "predict" => {
            let (ts, tp) = timed(&mut report, "predict", |r| stage_predict(&scene, out, opts.dump_stats, r))?;
            report.timing.insert("stats".into(), ts);
            report.timing.insert("predict".into(), tp);
        }
        "smooth" => timed(&mut report, "smooth", |_| stage_smooth(&scene, out))?,
        "bake" => {
            timed(&mut report, "bake", |r| stage_bake(&scene, out, r))?;
        }
        "rerender" => {
            let atlas = load_atlas(&out.join("atlas")).map_err(tag("rerender"))?;
            timed(&mut report, "rerender", |_| stage_rerender(&scene, out, &atlas))?;
        }
        "validate" => timed(&mut report, "validate", |r| stage_validate(&scene, out, r))?,
        "pipeline" => {
            let (ts, tp) = timed(&mut report, "predict", |r| stage_predict(&scene, out, opts.dump_stats, r))?;
            report.timing.insert("stats".into(), ts);
            report.timing.insert("predict".into(), tp);
            timed(&mut report, "smooth", |_| stage_smooth(&scene, out))?;
            let atlas = timed(&mut report, "bake", |r| stage_bake(&scene, out, r))?;
            timed(&mut report, "rerender", |_| stage_rerender(&scene, out, &atlas))?;
            timed(&mut report, "validate", |r| stage_validate(&scene, out, r))?;
        }
        other => {
            return Err(StageError { stage: "load", source: Error::InvalidArgument(format!("unknown stage {other:?}")) });
        }
    }
    report.timing.insert("total".into(), t.elapsed().as_secs_f64());
    report.write(&report_path(out)).map_err(tag("report"))?;
    Ok(report)
}

/// Full pipeline: predict, smooth, bake, re-render, validate.
pub fn run_pipeline(config_path: &Path, opts: &RunOptions) -> std::result::Result<PipelineReport, StageError> {
    run_stage("pipeline", config_path, opts)
}
