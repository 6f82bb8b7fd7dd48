//! Edge-aware smoothing of specular and roughness maps on a bilateral grid
//! built from the diffuse albedo.
//!
//! Pixels are splatted to the nearest vertex of a 5D grid (x, y, luma and two
//! chroma axes). The pixel affinity is `W[v][w] / (m[v] m[w])`, where `m`
//! counts pixels per vertex and `W = Dn B Dn` is the bistochastized [1, 2, 1]
//! blur. The pixel-space quadratic is reduced to a vertex-space system and
//! solved with Jacobi-preconditioned conjugate gradient; pixel values follow
//! from the vertex solution in closed form.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::MaterialMaps;

const BISTOCHASTIC_ITERATIONS: usize = 20;
const DIMS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    /// Spatial bandwidth in pixels.
    pub sigma_xy: f64,
    pub sigma_l: f64,
    pub sigma_c: f64,
    #[serde(rename = "lambda")]
    pub lambda_smooth: f64,
    pub cg_tolerance: f64,
    pub cg_max_iter: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            sigma_xy: 8.0,
            sigma_l: 0.1,
            sigma_c: 0.1,
            lambda_smooth: 4.0,
            cg_tolerance: 1e-5,
            cg_max_iter: 200,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.sigma_xy) || !positive(self.sigma_l) || !positive(self.sigma_c) {
            return Err(Error::Config("bilateral sigmas must be positive".into()));
        }
        if !(self.lambda_smooth.is_finite() && self.lambda_smooth >= 0.0) {
            return Err(Error::Config("bilateral lambda must be non-negative".into()));
        }
        if !positive(self.cg_tolerance) {
            return Err(Error::Config("cg_tolerance must be positive".into()));
        }
        if self.cg_max_iter == 0 {
            return Err(Error::Config("cg_max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// YUV (BT.601, zero-centered chroma).
pub fn rgb_to_yuv(c: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = c;
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        -0.168736 * r - 0.331264 * g + 0.5 * b,
        0.5 * r - 0.418688 * g - 0.081312 * b,
    ]
}

/// Quantized bilateral-space coordinates of one pixel.
pub fn grid_key(x: usize, y: usize, rgb: [f64; 3], params: &SolverParams) -> [i64; DIMS] {
    let yuv = rgb_to_yuv(rgb);
    [
        (x as f64 / params.sigma_xy).round() as i64,
        (y as f64 / params.sigma_xy).round() as i64,
        (yuv[0] / params.sigma_l).round() as i64,
        (yuv[1] / params.sigma_c).round() as i64,
        (yuv[2] / params.sigma_c).round() as i64,
    ]
}

#[derive(Debug, Clone)]
pub struct BilateralGrid {
    pub width: usize,
    pub height: usize,
    /// Vertex of each pixel; `None` for masked pixels.
    pub splat: Vec<Option<usize>>,
    pub keys: Vec<[i64; DIMS]>,
    /// Pixels per vertex.
    pub counts: Vec<f64>,
    /// Occupied +-1 neighbors along each axis.
    pub neighbors: Vec<Vec<usize>>,
    /// Bistochastic scaling.
    pub scale: Vec<f64>,
}

impl BilateralGrid {
    /// Builds the grid from an RGB guide. Masked pixels are left out.
    pub fn build(width: usize, height: usize, guide: &[[f32; 3]], mask: &[bool], params: &SolverParams) -> Result<Self> {
        params.validate()?;
        if guide.len() != width * height || mask.len() != width * height {
            return Err(Error::ResolutionMismatch(format!(
                "guide has {} pixels and mask {}, expected {}x{}",
                guide.len(),
                mask.len(),
                width,
                height
            )));
        }
        let mut index: HashMap<[i64; DIMS], usize> = HashMap::new();
        let mut keys = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        let mut splat = vec![None; width * height];
        for y in 0..height {
            for x in 0..width {
                let p = y * width + x;
                if !mask[p] {
                    continue;
                }
                let g = guide[p];
                let key = grid_key(x, y, [g[0] as f64, g[1] as f64, g[2] as f64], params);
                let v = *index.entry(key).or_insert_with(|| {
                    keys.push(key);
                    counts.push(0.0);
                    keys.len() - 1
                });
                counts[v] += 1.0;
                splat[p] = Some(v);
            }
        }
        let neighbors: Vec<Vec<usize>> = keys
            .iter()
            .map(|key| {
                let mut out = Vec::new();
                for d in 0..DIMS {
                    for off in [-1, 1] {
                        let mut k = *key;
                        k[d] += off;
                        if let Some(&j) = index.get(&k) {
                            out.push(j);
                        }
                    }
                }
                out
            })
            .collect();
        let mut grid = BilateralGrid { width, height, splat, keys, counts, neighbors, scale: Vec::new() };
        grid.scale = grid.bistochastize();
        Ok(grid)
    }

    pub fn from_diffuse(maps: &MaterialMaps, params: &SolverParams) -> Result<Self> {
        Self::build(maps.width, maps.height, &maps.diffuse, &maps.mask, params)
    }

    pub fn vertex_count(&self) -> usize {
        self.keys.len()
    }

    /// [1, 2, 1] blur along every axis, summed.
    pub fn blur(&self, y: &[f64]) -> Vec<f64> {
        (0..y.len())
            .map(|v| 2.0 * DIMS as f64 * y[v] + self.neighbors[v].iter().map(|&j| y[j]).sum::<f64>())
            .collect()
    }

    fn bistochastize(&self) -> Vec<f64> {
        let mut n = vec![1.0; self.vertex_count()];
        for _ in 0..BISTOCHASTIC_ITERATIONS {
            let bn = self.blur(&n);
            for v in 0..n.len() {
                n[v] = (n[v] * self.counts[v] / bn[v]).sqrt();
            }
        }
        n
    }

    /// `K y` with `K = Dm^-1 Dn B Dn Dm^-1`.
    fn affinity(&self, y: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = (0..y.len()).map(|v| self.scale[v] * y[v] / self.counts[v]).collect();
        let blurred = self.blur(&scaled);
        (0..y.len()).map(|v| self.scale[v] * blurred[v] / self.counts[v]).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveReport {
    pub iterations: usize,
    /// Residual in the preconditioned norm, sqrt(r^T M^-1 r), per iteration.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

/// Minimizes `lambda * sum_pq w_pq (x_p - x_q)^2 / 2 + sum_p c_p (x_p - t_p)^2`
/// over the unmasked pixels. Masked pixels return their target.
pub fn solve(target: &[f64], confidence: &[f64], grid: &BilateralGrid, params: &SolverParams) -> Result<Vec<f64>> {
    solve_with_report(target, confidence, grid, params).map(|(x, _)| x)
}

pub fn solve_with_report(
    target: &[f64],
    confidence: &[f64],
    grid: &BilateralGrid,
    params: &SolverParams,
) -> Result<(Vec<f64>, SolveReport)> {
    params.validate()?;
    let n_pix = grid.width * grid.height;
    if target.len() != n_pix || confidence.len() != n_pix {
        return Err(Error::ResolutionMismatch(format!(
            "target has {} and confidence {} pixels, grid has {}",
            target.len(),
            confidence.len(),
            n_pix
        )));
    }
    if confidence.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::InvalidArgument("confidence must lie in [0, 1]".into()));
    }
    let confident: Vec<usize> = (0..n_pix).filter(|&p| grid.splat[p].is_some() && confidence[p] > 0.0).collect();
    let Some(&first) = confident.first() else {
        return Err(Error::ZeroConfidence);
    };
    let mut out = target.to_vec();
    let lambda = params.lambda_smooth;
    if lambda == 0.0 {
        return Ok((out, SolveReport { converged: true, ..Default::default() }));
    }
    // Shifting by a target value makes a constant target an exact fixed point.
    let t_ref = target[first];
    let lo = confident.iter().map(|&p| target[p]).fold(f64::INFINITY, f64::min);
    let hi = confident.iter().map(|&p| target[p]).fold(f64::NEG_INFINITY, f64::max);

    let nv = grid.vertex_count();
    let row = grid.affinity(&grid.counts);
    let mut g = vec![0.0; nv];
    let mut h = vec![0.0; nv];
    for p in 0..n_pix {
        let Some(v) = grid.splat[p] else { continue };
        let denom = lambda * row[v] + confidence[p];
        g[v] += 1.0 / denom;
        h[v] += confidence[p] * (target[p] - t_ref) / denom;
    }
    // (diag(1/g) - lambda K) u = h / g, with u the per-vertex pixel sums.
    let diag_k: Vec<f64> = (0..nv)
        .map(|v| {
            let s = grid.scale[v] / grid.counts[v];
            2.0 * DIMS as f64 * s * s
        })
        .collect();
    let apply = |u: &[f64]| -> Vec<f64> {
        let ku = grid.affinity(u);
        (0..nv).map(|v| u[v] / g[v] - lambda * ku[v]).collect()
    };
    let b: Vec<f64> = (0..nv).map(|v| h[v] / g[v]).collect();
    let precond: Vec<f64> = (0..nv)
        .map(|v| {
            let d = 1.0 / g[v] - lambda * diag_k[v];
            if d > 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();
    let (u, report) = conjugate_gradient(apply, &b, &precond, params.cg_tolerance, params.cg_max_iter);

    let ku = grid.affinity(&u);
    for p in 0..n_pix {
        let Some(v) = grid.splat[p] else { continue };
        let x = (confidence[p] * (target[p] - t_ref) + lambda * ku[v]) / (lambda * row[v] + confidence[p]);
        out[p] = (x + t_ref).clamp(lo, hi);
    }
    Ok((out, report))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned CG from a zero start. Stops when `|r| < tol |b|`.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    precond: &[f64],
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, SolveReport) {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let b_norm = dot(b, b).sqrt();
    let mut report = SolveReport::default();
    if b_norm == 0.0 {
        report.converged = true;
        return (x, report);
    }
    let mut z: Vec<f64> = (0..n).map(|i| precond[i] * r[i]).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    report.residuals.push(rz.max(0.0).sqrt());
    for it in 0..max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        report.iterations = it + 1;
        for i in 0..n {
            z[i] = precond[i] * r[i];
        }
        let rz_next = dot(&r, &z);
        report.residuals.push(rz_next.max(0.0).sqrt());
        if dot(&r, &r).sqrt() < tol * b_norm {
            report.converged = true;
            break;
        }
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    (x, report)
}

/// Smooths roughness and each specular channel with unit confidence on the
/// valid pixels. Diffuse is returned untouched.
pub fn smooth_specular_roughness(maps: &MaterialMaps, params: &SolverParams) -> Result<MaterialMaps> {
    let confidence: Vec<f64> = maps.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    smooth_with_confidence(maps, &confidence, params)
}

pub fn smooth_with_confidence(maps: &MaterialMaps, confidence: &[f64], params: &SolverParams) -> Result<MaterialMaps> {
    let grid = BilateralGrid::from_diffuse(maps, params)?;
    let mut out = maps.clone();
    for c in 0..3 {
        let target: Vec<f64> = maps.specular.iter().map(|s| s[c] as f64).collect();
        let solved = solve(&target, confidence, &grid, params)?;
        for (i, v) in solved.into_iter().enumerate() {
            if maps.mask[i] {
                out.specular[i][c] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    let target: Vec<f64> = maps.roughness.iter().map(|&r| r as f64).collect();
    let solved = solve(&target, confidence, &grid, params)?;
    for (i, v) in solved.into_iter().enumerate() {
        if maps.mask[i] {
            out.roughness[i] = v.clamp(crate::scene::MIN_ROUGHNESS, 1.0) as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat(width: usize, height: usize, rgb: [f32; 3]) -> (Vec<[f32; 3]>, Vec<bool>) {
        (vec![rgb; width * height], vec![true; width * height])
    }

    fn noisy_guide(w: usize, h: usize, seed: u64) -> Vec<[f32; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..w * h)
            .map(|p| {
                let base = if p % w < w / 2 { 0.2 } else { 0.45 };
                [base + rng.gen_range(0.0..0.15f32), base, base + rng.gen_range(0.0..0.1f32)]
            })
            .collect()
    }

    #[test]
    fn constant_guide_occupies_one_color_slice() {
        let (g, m) = flat(32, 24, [0.3, 0.5, 0.2]);
        let grid = BilateralGrid::build(32, 24, &g, &m, &SolverParams::default()).unwrap();
        let colors: std::collections::HashSet<_> = grid.keys.iter().map(|k| (k[2], k[3], k[4])).collect();
        assert_eq!(colors.len(), 1);
        assert!(grid.vertex_count() <= 32 * 24);
        assert!(grid.splat.iter().all(|s| s.is_some()));
    }

    #[test]
    fn two_tone_guide_splits_into_disconnected_groups() {
        let (w, h) = (16, 16);
        let g: Vec<[f32; 3]> = (0..w * h).map(|p| if p % w < 8 { [0.1; 3] } else { [0.9; 3] }).collect();
        let grid = BilateralGrid::build(w, h, &g, &vec![true; w * h], &SolverParams::default()).unwrap();
        let dark: Vec<usize> = (0..w * h).filter(|p| p % w < 8).map(|p| grid.splat[p].unwrap()).collect();
        let light: Vec<usize> = (0..w * h).filter(|p| p % w >= 8).map(|p| grid.splat[p].unwrap()).collect();
        for &v in &dark {
            assert!(grid.neighbors[v].iter().all(|j| !light.contains(j)));
            assert!(!light.contains(&v));
        }
    }

    #[test]
    fn occupancy_matches_direct_binning() {
        let (w, h) = (40, 30);
        let g = noisy_guide(w, h, 3);
        let p = SolverParams::default();
        let grid = BilateralGrid::build(w, h, &g, &vec![true; w * h], &p).unwrap();
        let mut bins: HashMap<Vec<i64>, usize> = HashMap::new();
        for y in 0..h {
            for x in 0..w {
                let c = g[y * w + x];
                let (r, gg, b) = (c[0] as f64, c[1] as f64, c[2] as f64);
                let key = vec![
                    (x as f64 / 8.0).round() as i64,
                    (y as f64 / 8.0).round() as i64,
                    ((0.299 * r + 0.587 * gg + 0.114 * b) / 0.1).round() as i64,
                    ((-0.168736 * r - 0.331264 * gg + 0.5 * b) / 0.1).round() as i64,
                    ((0.5 * r - 0.418688 * gg - 0.081312 * b) / 0.1).round() as i64,
                ];
                *bins.entry(key).or_default() += 1;
            }
        }
        assert_eq!(grid.vertex_count(), bins.len());
        for (v, key) in grid.keys.iter().enumerate() {
            assert_eq!(bins[&key.to_vec()] as f64, grid.counts[v]);
        }
    }

    #[test]
    fn bistochastic_rows_match_counts() {
        let (w, h) = (40, 30);
        let grid = BilateralGrid::build(w, h, &noisy_guide(w, h, 4), &vec![true; w * h], &SolverParams::default()).unwrap();
        let b = grid.blur(&grid.scale);
        for v in 0..grid.vertex_count() {
            let row = grid.scale[v] * b[v];
            assert!((row - grid.counts[v]).abs() < 1e-2 * grid.counts[v], "{row} vs {}", grid.counts[v]);
        }
    }

    #[test]
    fn constant_target_is_a_fixed_point() {
        let (w, h) = (24, 20);
        let grid = BilateralGrid::build(w, h, &noisy_guide(w, h, 5), &vec![true; w * h], &SolverParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conf: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.01..1.0)).collect();
        let out = solve(&vec![0.37; w * h], &conf, &grid, &SolverParams::default()).unwrap();
        assert!(out.iter().all(|&v| v == 0.37));
    }

    #[test]
    fn zero_lambda_returns_target() {
        let (w, h) = (12, 12);
        let p = SolverParams { lambda_smooth: 0.0, ..Default::default() };
        let grid = BilateralGrid::build(w, h, &noisy_guide(w, h, 6), &vec![true; w * h], &p).unwrap();
        let t: Vec<f64> = (0..w * h).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = solve(&t, &vec![1.0; w * h], &grid, &p).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn zero_confidence_is_an_error() {
        let (g, m) = flat(8, 8, [0.5; 3]);
        let grid = BilateralGrid::build(8, 8, &g, &m, &SolverParams::default()).unwrap();
        assert!(matches!(solve(&vec![0.5; 64], &vec![0.0; 64], &grid, &SolverParams::default()), Err(Error::ZeroConfidence)));
    }

    /// Dense pixel-space solve with the affinity assembled by brute force over vertex pairs.
    fn dense_oracle(grid: &BilateralGrid, target: &[f64], conf: &[f64], lambda: f64) -> Vec<f64> {
        let nv = grid.vertex_count();
        let mut blur = DMatrix::<f64>::zeros(nv, nv);
        for a in 0..nv {
            for b in 0..nv {
                let diff: Vec<i64> = (0..5).map(|d| (grid.keys[a][d] - grid.keys[b][d]).abs()).collect();
                let l1: i64 = diff.iter().sum();
                if l1 == 0 {
                    blur[(a, b)] = 10.0;
                } else if l1 == 1 {
                    blur[(a, b)] = 1.0;
                }
            }
        }
        let m = DVector::from_vec(grid.counts.clone());
        let mut n = DVector::from_element(nv, 1.0);
        for _ in 0..20 {
            let bn = &blur * &n;
            n = DVector::from_fn(nv, |i, _| (n[i] * m[i] / bn[i]).sqrt());
        }
        let px: Vec<usize> = (0..target.len()).filter(|&p| grid.splat[p].is_some()).collect();
        let np = px.len();
        let mut a = DMatrix::<f64>::zeros(np, np);
        for (i, &p) in px.iter().enumerate() {
            for (j, &q) in px.iter().enumerate() {
                let (u, v) = (grid.splat[p].unwrap(), grid.splat[q].unwrap());
                let w = n[u] * blur[(u, v)] * n[v] / (m[u] * m[v]);
                a[(i, j)] -= lambda * w;
                a[(i, i)] += lambda * w;
            }
            a[(i, i)] += conf[p];
        }
        let rhs = DVector::from_fn(np, |i, _| conf[px[i]] * target[px[i]]);
        let x = a.lu().solve(&rhs).unwrap();
        let mut out = target.to_vec();
        for (i, &p) in px.iter().enumerate() {
            out[p] = x[i];
        }
        out
    }

    #[test]
    fn matches_dense_pixel_solve() {
        let (w, h) = (16, 16);
        let p = SolverParams { sigma_xy: 4.0, ..Default::default() };
        let grid = BilateralGrid::build(w, h, &noisy_guide(w, h, 7), &vec![true; w * h], &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect();
        let c: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.2..1.0)).collect();
        let (ours, report) = solve_with_report(&t, &c, &grid, &p).unwrap();
        assert!(report.converged);
        let dense = dense_oracle(&grid, &t, &c, p.lambda_smooth);
        let rms = (ours.iter().zip(&dense).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (w * h) as f64).sqrt();
        assert!(rms < 1e-3, "rms {rms}");
    }

    #[test]
    fn salt_and_pepper_variance_drops() {
        let (w, h) = (64, 64);
        let mut maps = MaterialMaps::filled(w, h, crate::scene::MaterialSample::new(crate::math::Vec3::splat(0.4), crate::math::Vec3::splat(0.3), 0.5));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for r in maps.roughness.iter_mut() {
            let u: f64 = rng.gen_range(0.0..1.0);
            if u < 0.1 {
                *r = 0.01;
            } else if u < 0.2 {
                *r = 1.0;
            }
        }
        let var = |v: &[f32]| {
            let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
            v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / v.len() as f64
        };
        let out = smooth_specular_roughness(&maps, &SolverParams::default()).unwrap();
        assert!(var(&out.roughness) * 10.0 <= var(&maps.roughness), "{} -> {}", var(&maps.roughness), var(&out.roughness));
        assert_eq!(out.diffuse, maps.diffuse);
    }

    #[test]
    fn step_on_albedo_edge_is_preserved() {
        let (w, h) = (32, 32);
        let mut maps = MaterialMaps::new(w, h);
        for p in 0..w * h {
            let left = p % w < 16;
            let d = if left { 0.15 } else { 0.85 };
            let r = if left { 0.2 } else { 0.8 };
            maps.set(p, crate::scene::MaterialSample::new(crate::math::Vec3::splat(d), crate::math::Vec3::splat(0.5), r));
        }
        let out = smooth_specular_roughness(&maps, &SolverParams::default()).unwrap();
        for y in 0..h {
            let row: Vec<f64> = (0..w).map(|x| out.roughness[y * w + x] as f64).collect();
            let transition = row.iter().filter(|&&r| (r - 0.2).abs() > 0.05 * 0.6 && (r - 0.8).abs() > 0.05 * 0.6).count();
            assert!(transition <= 2, "row {y}: {row:?}");
            assert!(row[15] < 0.5 && row[16] > 0.5);
        }
    }

    #[test]
    fn cg_residual_decreases() {
        let (w, h) = (48, 40);
        let p = SolverParams::default();
        let grid = BilateralGrid::build(w, h, &noisy_guide(w, h, 8), &vec![true; w * h], &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect();
        let c: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (_, report) = solve_with_report(&t, &c, &grid, &p).unwrap();
        assert!(report.converged);
        assert!(report.residuals.windows(2).all(|r| r[1] <= r[0]), "{:?}", report.residuals);
    }

    #[test]
    fn params_validation() {
        assert!(SolverParams::default().validate().is_ok());
        assert!(SolverParams { sigma_l: 0.0, ..Default::default() }.validate().is_err());
        assert!(SolverParams { lambda_smooth: -1.0, ..Default::default() }.validate().is_err());
        let p: SolverParams = serde_json::from_str(r#"{"lambda": 2.0}"#).unwrap();
        assert_eq!(p.lambda_smooth, 2.0);
        assert_eq!(p.sigma_xy, 8.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn output_within_target_range(seed in 0u64..1000, lambda in 0.1f64..20.0) {
            let (w, h) = (12, 10);
            let p = SolverParams { lambda_smooth: lambda, ..Default::default() };
            let grid = BilateralGrid::build(w, h, &noisy_guide(w, h, seed), &vec![true; w * h], &p).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let t: Vec<f64> = (0..w * h).map(|_| rng.gen_range(-2.0..3.0)).collect();
            let c: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect();
            let out = solve(&t, &c, &grid, &p).unwrap();
            let lo = t.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out.iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6));
        }
    }
}
