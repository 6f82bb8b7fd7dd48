use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use matforge::bilateral::SolverParams;
use matforge::estimate::{PredictorConfig, PredictorMode};
use matforge::math::Vec3;
use matforge::pipeline::{load_atlas, render_image, run_pipeline, run_stage, RunOptions, REPORT_FILE};
use matforge::scene::{Camera, MaterialSample, SceneDescription, SceneLight, TriangleMesh, View};
use matforge::synthetic::{three_caps, write_scene, SyntheticConfig};

fn diffuse_plane(mode: PredictorMode) -> SceneDescription {
    let corners = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let mesh = TriangleMesh::new(
        corners.iter().map(|c| Vec3::new(c[0] - 0.5, c[1] - 0.5, 0.0)).collect(),
        None,
        corners.to_vec(),
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap();
    let camera = Camera::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 240.0, 128, 128).unwrap();
    let lights = vec![SceneLight::Point { position: Vec3::new(0.3, 0.2, 2.0), intensity: Vec3::splat(6.0) }];
    let material = MaterialSample::new(Vec3::new(0.6, 0.4, 0.3), Vec3::ZERO, 1.0);
    let image = render_image(&mesh, &camera, &lights, 1e-3, |_, _| Some(material));
    SceneDescription {
        mesh,
        views: vec![View { camera, image }],
        lights,
        atlas_resolution: 32,
        predictor: PredictorConfig { mode, iterations: 20, ..Default::default() },
        bilateral: SolverParams::default(),
    }
}

fn small_caps() -> SceneDescription {
    let cfg = SyntheticConfig { view_size: 40, atlas_resolution: 64, rings: 8, segments: 16, ..Default::default() };
    let mut scene = three_caps(&cfg).unwrap().scene;
    scene.predictor.iterations = 10;
    scene
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Report without its timing field.
fn untimed_report(out: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join(REPORT_FILE)).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[test]
fn single_view_plane_covers_its_chart() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_scene(&diffuse_plane(PredictorMode::Optimize), dir.path()).unwrap();
    let out = dir.path().join("out");
    let report = run_pipeline(&config, &RunOptions { out: out.clone(), ..Default::default() }).unwrap();
    let atlas = load_atlas(&out.join("atlas")).unwrap();
    let coverage = report.atlas.unwrap().coverage;
    assert!(coverage > 0.9, "coverage {coverage}");
    let mean = atlas.coverage.iter().filter(|&&c| c).count() as f64 / atlas.coverage.len() as f64;
    assert_eq!(coverage, mean);
    for name in ["diffuse.pfm", "specular.pfm", "roughness.pfm", "coverage.png"] {
        assert!(out.join("atlas").join(name).exists(), "{name}");
    }
    assert!(report.views[0].psnr.unwrap() > 30.0);
}

#[test]
fn heuristic_mode_without_lights_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut scene = diffuse_plane(PredictorMode::Heuristic);
    scene.lights.clear();
    let config = write_scene(&scene, dir.path()).unwrap();
    let out = dir.path().join("out");
    // Predict and bake work; re-rendering without lights gives a black image.
    let report = run_stage("predict", &config, &RunOptions { out: out.clone(), ..Default::default() }).unwrap();
    assert_eq!(report.views[0].loss_after, None);
    run_stage("smooth", &config, &RunOptions { out: out.clone(), ..Default::default() }).unwrap();
    let report = run_stage("bake", &config, &RunOptions { out: out.clone(), ..Default::default() }).unwrap();
    assert!(report.atlas.unwrap().coverage > 0.9);
}

#[test]
fn reruns_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_scene(&small_caps(), dir.path()).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        run_pipeline(&config, &RunOptions { out: out.clone(), seed: Some(7), dump_stats: true }).unwrap();
    }
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (path, bytes) in &fa {
        if path != Path::new(REPORT_FILE) {
            assert!(bytes == &fb[path], "{} differs", path.display());
        }
    }
    assert_eq!(untimed_report(&a), untimed_report(&b));
}

#[test]
fn stages_in_sequence_match_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_scene(&small_caps(), dir.path()).unwrap();
    let (full, staged) = (dir.path().join("full"), dir.path().join("staged"));
    run_pipeline(&config, &RunOptions { out: full.clone(), ..Default::default() }).unwrap();
    for stage in ["predict", "smooth", "bake", "rerender", "validate"] {
        run_stage(stage, &config, &RunOptions { out: staged.clone(), ..Default::default() }).unwrap();
    }
    let (ff, fs) = (files(&full), files(&staged));
    for (path, bytes) in &ff {
        if path != Path::new(REPORT_FILE) {
            assert!(bytes == &fs[path], "{} differs", path.display());
        }
    }
    assert_eq!(untimed_report(&full), untimed_report(&staged));
}

#[test]
fn missing_mesh_fails_at_load() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_scene(&diffuse_plane(PredictorMode::Optimize), dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("mesh.obj")).unwrap();
    let err = run_pipeline(&config, &RunOptions { out: dir.path().join("out"), ..Default::default() }).unwrap_err();
    assert_eq!(err.stage, "load");
    assert!(err.is_config_error());
}

#[test]
fn stage_without_inputs_names_itself() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_scene(&diffuse_plane(PredictorMode::Optimize), dir.path()).unwrap();
    let err = run_stage("bake", &config, &RunOptions { out: dir.path().join("out"), ..Default::default() }).unwrap_err();
    assert_eq!(err.stage, "bake");
    assert!(!err.is_config_error());
}
