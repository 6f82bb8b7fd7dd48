//! Texture-space merge: every atlas texel gathers the per-view material
//! predictions of the views that see it and keeps the per-channel median.

use std::path::Path;

use crate::error::{Error, Result};
use crate::math::median_in_place;
use crate::scene::image::{quantize_unit, write_mask_png, write_png};
use crate::scene::{MaterialMaps, MaterialSample, SceneDescription, TriangleMesh};
use crate::visibility::{is_visible, project, SurfacePoint};

/// Iterations of the 8-neighbor gutter fill.
pub const DILATION_ITERATIONS: usize = 2;
const UV_EPS: f64 = 1e-12;

/// One atlas texel and the surface point under its center, if any.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TexelSite {
    pub x: usize,
    pub y: usize,
    pub point: Option<SurfacePoint>,
}

impl TexelSite {
    pub fn is_valid(&self) -> bool {
        self.point.is_some()
    }
}

/// UV coordinates of a texel center. Row 0 is the top of the atlas (v = 1).
pub fn texel_center(x: usize, y: usize, resolution: usize) -> [f64; 2] {
    let r = resolution as f64;
    [(x as f64 + 0.5) / r, 1.0 - (y as f64 + 0.5) / r]
}

/// Continuous texel coordinates of a UV point, inverse of [`texel_center`].
pub fn uv_to_texel(uv: [f64; 2], resolution: usize) -> [f64; 2] {
    let r = resolution as f64;
    [uv[0] * r - 0.5, (1.0 - uv[1]) * r - 0.5]
}

fn cross2(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Barycentric coordinates of `p` in a 2D triangle.
pub fn barycentric_2d(tri: [[f64; 2]; 3], p: [f64; 2]) -> Option<[f64; 3]> {
    let area = cross2(tri[0], tri[1], tri[2]);
    if area.abs() < UV_EPS {
        return None;
    }
    let w0 = cross2(tri[1], tri[2], p) / area;
    let w1 = cross2(tri[2], tri[0], p) / area;
    Some([w0, w1, 1.0 - w0 - w1])
}

/// Interior overlap of two UV triangles by the separating axis test; touching
/// edges or vertices do not count.
pub fn uv_triangles_overlap(a: [[f64; 2]; 3], b: [[f64; 2]; 3]) -> bool {
    let scale = a.iter().chain(&b).flat_map(|p| p.iter()).fold(0.0f64, |m, c| m.max(c.abs())).max(1.0);
    for tri in [a, b] {
        for k in 0..3 {
            let (p, q) = (tri[k], tri[(k + 1) % 3]);
            let axis = [q[1] - p[1], p[0] - q[0]];
            let len = axis[0].hypot(axis[1]);
            if len == 0.0 {
                continue;
            }
            let proj = |t: &[[f64; 2]; 3]| {
                t.iter().map(|v| (v[0] * axis[0] + v[1] * axis[1]) / len).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
            };
            let (alo, ahi) = proj(&a);
            let (blo, bhi) = proj(&b);
            if ahi.min(bhi) - alo.max(blo) <= 1e-9 * scale {
                return false;
            }
        }
    }
    true
}

/// Pairs of triangles whose UV images overlap, in ascending order.
pub fn overlapping_uv_pairs(mesh: &TriangleMesh) -> Vec<(usize, usize)> {
    let n = mesh.triangles.len();
    let cells = ((n as f64).sqrt().ceil() as usize).clamp(1, 512);
    let cell_of = |c: f64| ((c * cells as f64).floor() as isize).clamp(0, cells as isize - 1) as usize;
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); cells * cells];
    let tris: Vec<[[f64; 2]; 3]> = (0..n).map(|t| mesh.uv_triangle(t)).collect();
    let bbox = |t: &[[f64; 2]; 3]| {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in t {
            for d in 0..2 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        (lo, hi)
    };
    for (t, tri) in tris.iter().enumerate() {
        let (lo, hi) = bbox(tri);
        for cy in cell_of(lo[1])..=cell_of(hi[1]) {
            for cx in cell_of(lo[0])..=cell_of(hi[0]) {
                buckets[cy * cells + cx].push(t);
            }
        }
    }
    let mut pairs = Vec::new();
    for bucket in &buckets {
        for (i, &a) in bucket.iter().enumerate() {
            for &b in &bucket[i + 1..] {
                let (alo, ahi) = bbox(&tris[a]);
                let (blo, bhi) = bbox(&tris[b]);
                if alo[0] >= bhi[0] || blo[0] >= ahi[0] || alo[1] >= bhi[1] || blo[1] >= ahi[1] {
                    continue;
                }
                if uv_triangles_overlap(tris[a], tris[b]) {
                    pairs.push((a.min(b), a.max(b)));
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

/// Maps every atlas texel center to the surface point of the UV triangle
/// containing it. On shared edges the lower triangle index wins.
pub fn rasterize_texels(mesh: &TriangleMesh, resolution: usize) -> Result<Vec<TexelSite>> {
    if resolution == 0 {
        return Err(Error::InvalidArgument("atlas resolution must be positive".into()));
    }
    for t in 0..mesh.triangles.len() {
        let uv = mesh.uv_triangle(t);
        if cross2(uv[0], uv[1], uv[2]).abs() < UV_EPS {
            return Err(Error::InvalidMesh(format!("triangle {t} has a degenerate UV image")));
        }
    }
    let pairs = overlapping_uv_pairs(mesh);
    if !pairs.is_empty() {
        return Err(Error::OverlappingUvs { pairs });
    }
    let r = resolution as f64;
    let mut sites: Vec<TexelSite> = (0..resolution * resolution)
        .map(|i| TexelSite { x: i % resolution, y: i / resolution, point: None })
        .collect();
    for t in 0..mesh.triangles.len() {
        let uv = mesh.uv_triangle(t);
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in &uv {
            let tc = uv_to_texel(*v, resolution);
            for d in 0..2 {
                lo[d] = lo[d].min(tc[d]);
                hi[d] = hi[d].max(tc[d]);
            }
        }
        let x0 = lo[0].ceil().max(0.0) as usize;
        let y0 = lo[1].ceil().max(0.0) as usize;
        let x1 = (hi[0].floor().min(r - 1.0)).max(-1.0);
        let y1 = (hi[1].floor().min(r - 1.0)).max(-1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let site = &mut sites[y * resolution + x];
                if site.point.is_some() {
                    continue;
                }
                let Some(b) = barycentric_2d(uv, texel_center(x, y, resolution)) else { continue };
                if b.iter().all(|&w| w >= -1e-12) {
                    let b = b.map(|w| w.max(0.0));
                    let s = b[0] + b[1] + b[2];
                    site.point = Some(SurfacePoint::on_triangle(mesh, t, b.map(|w| w / s)));
                }
            }
        }
    }
    Ok(sites)
}

/// Samples of every visible, front-facing view's maps at the texel's point.
pub fn gather_texel(site: &TexelSite, scene: &SceneDescription, maps: &[MaterialMaps], bias: f64) -> Vec<MaterialSample> {
    let Some(point) = site.point else { return Vec::new() };
    let mut out = Vec::new();
    for (view, m) in scene.views.iter().zip(maps) {
        let to_cam = view.camera.center() - point.position;
        if point.normal.dot(to_cam) <= 0.0 || !is_visible(&scene.mesh, &view.camera, &point, bias) {
            continue;
        }
        let Ok((pixel, _)) = project(&view.camera, point.position) else { continue };
        if let Some(s) = m.sample_bilinear(pixel[0], pixel[1]) {
            out.push(s);
        }
    }
    out
}

/// Per-channel median of all seven channels; `None` for no samples.
pub fn merge_median(samples: &[MaterialSample]) -> Option<MaterialSample> {
    if samples.is_empty() {
        return None;
    }
    let mut out = [0.0; 7];
    let mut buf = Vec::with_capacity(samples.len());
    for (k, o) in out.iter_mut().enumerate() {
        buf.clear();
        buf.extend(samples.iter().map(|s| s.to_channels()[k]));
        *o = median_in_place(&mut buf)?;
    }
    Some(MaterialSample::from_channels(out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialAtlas {
    pub resolution: usize,
    /// Merged maps; the mask includes the dilated gutter.
    pub maps: MaterialMaps,
    /// Texels with at least one contributing view.
    pub coverage: Vec<bool>,
    pub view_count: Vec<u32>,
}

impl MaterialAtlas {
    pub fn covered_texels(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }

    /// Bilinear material lookup at a UV coordinate.
    pub fn sample(&self, uv: [f64; 2]) -> Option<MaterialSample> {
        let t = uv_to_texel(uv, self.resolution);
        let r = (self.resolution - 1) as f64;
        self.maps.sample_bilinear(t[0].clamp(0.0, r), t[1].clamp(0.0, r))
    }

    /// PFM maps, 8-bit previews, and the coverage raster.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.maps.save(dir)?;
        let n = self.resolution;
        let rgb = |v: &[[f32; 3]]| -> Vec<u8> { v.iter().flat_map(|p| p.map(|c| quantize_unit(c as f64))).collect() };
        write_png(&dir.join("diffuse.png"), n, n, 3, &rgb(&self.maps.diffuse))?;
        write_png(&dir.join("specular.png"), n, n, 3, &rgb(&self.maps.specular))?;
        let rough: Vec<u8> = self.maps.roughness.iter().map(|&r| quantize_unit(r as f64)).collect();
        write_png(&dir.join("roughness.png"), n, n, 1, &rough)?;
        write_mask_png(&dir.join("coverage.png"), n, n, &self.coverage)
    }
}

/// Fills invalid texels next to valid ones with the mean of their valid
/// 8-neighbors, `iterations` times.
pub fn dilate(maps: &mut MaterialMaps, iterations: usize) {
    let (w, h) = (maps.width, maps.height);
    for _ in 0..iterations {
        let before = maps.clone();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if before.mask[i] {
                    continue;
                }
                let mut acc = [0.0; 7];
                let mut n = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        if before.mask[j] {
                            let c = before.get(j).to_channels();
                            for k in 0..7 {
                                acc[k] += c[k];
                            }
                            n += 1.0;
                        }
                    }
                }
                if n > 0.0 {
                    maps.set(i, MaterialSample::from_channels(acc.map(|a| a / n)));
                }
            }
        }
    }
}

/// Merges per-view maps into the UV atlas.
pub fn bake_atlas(scene: &SceneDescription, maps: &[MaterialMaps], resolution: usize) -> Result<MaterialAtlas> {
    if maps.len() != scene.views.len() {
        return Err(Error::InvalidArgument(format!("{} material maps for {} views", maps.len(), scene.views.len())));
    }
    for (v, (view, m)) in scene.views.iter().zip(maps).enumerate() {
        if m.width != view.camera.width || m.height != view.camera.height {
            return Err(Error::ResolutionMismatch(format!(
                "maps of view {v} are {}x{}, camera is {}x{}",
                m.width, m.height, view.camera.width, view.camera.height
            )));
        }
    }
    let sites = rasterize_texels(&scene.mesh, resolution)?;
    bake_sites(scene, maps, &sites, resolution)
}

/// Bakes precomputed texel sites (see [`rasterize_texels`]).
pub fn bake_sites(scene: &SceneDescription, maps: &[MaterialMaps], sites: &[TexelSite], resolution: usize) -> Result<MaterialAtlas> {
    let bias = scene.visibility_bias();
    let mut out = MaterialMaps::new(resolution, resolution);
    let mut coverage = vec![false; resolution * resolution];
    let mut view_count = vec![0u32; resolution * resolution];
    for site in sites {
        let samples = gather_texel(site, scene, maps, bias);
        if let Some(m) = merge_median(&samples) {
            let i = site.y * resolution + site.x;
            out.set(i, m.clamped());
            coverage[i] = true;
            view_count[i] = samples.len() as u32;
        }
    }
    if !coverage.iter().any(|&c| c) {
        return Err(Error::EmptyAtlas);
    }
    dilate(&mut out, DILATION_ITERATIONS);
    Ok(MaterialAtlas { resolution, maps: out, coverage, view_count })
}
