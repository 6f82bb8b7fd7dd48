//! Material parameters, material rasters and light descriptions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Rgb, Vec3};
use crate::scene::image::{
    bilinear_taps, quantize_unit, read_mask_png, read_pfm, write_mask_png, write_pfm, write_png,
    PfmData,
};

/// Smallest roughness a valid material may carry.
pub const MIN_ROUGHNESS: f64 = 0.01;

/// Diffuse albedo, specular albedo (F0) and Beckmann roughness of one surface point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialSample {
    pub diffuse: Rgb,
    pub specular: Rgb,
    pub roughness: f64,
}

impl MaterialSample {
    pub fn new(diffuse: Rgb, specular: Rgb, roughness: f64) -> Self {
        MaterialSample {
            diffuse,
            specular,
            roughness,
        }
    }

    pub fn is_valid(&self) -> bool {
        let unit = |c: Rgb| (0..3).all(|i| (0.0..=1.0).contains(&c[i]));
        unit(self.diffuse)
            && unit(self.specular)
            && self.roughness > 0.0
            && self.roughness <= 1.0
    }

    /// Projects every parameter into its valid range.
    pub fn clamped(&self) -> Self {
        let unit = |c: Rgb| c.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        let r = if self.roughness.is_nan() {
            1.0
        } else {
            self.roughness.clamp(MIN_ROUGHNESS, 1.0)
        };
        MaterialSample::new(unit(self.diffuse), unit(self.specular), r)
    }

    /// The seven scalar channels: diffuse RGB, specular RGB, roughness.
    pub fn to_channels(&self) -> [f64; 7] {
        [
            self.diffuse.x,
            self.diffuse.y,
            self.diffuse.z,
            self.specular.x,
            self.specular.y,
            self.specular.z,
            self.roughness,
        ]
    }

    pub fn from_channels(c: [f64; 7]) -> Self {
        MaterialSample::new(
            Rgb::new(c[0], c[1], c[2]),
            Rgb::new(c[3], c[4], c[5]),
            c[6],
        )
    }
}

/// Diffuse, specular and roughness rasters sharing one resolution and mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialMaps {
    pub width: usize,
    pub height: usize,
    pub diffuse: Vec<[f32; 3]>,
    pub specular: Vec<[f32; 3]>,
    pub roughness: Vec<f32>,
    pub mask: Vec<bool>,
}

impl MaterialMaps {
    /// All pixels invalid, parameters zeroed (roughness 1).
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        MaterialMaps {
            width,
            height,
            diffuse: vec![[0.0; 3]; n],
            specular: vec![[0.0; 3]; n],
            roughness: vec![1.0; n],
            mask: vec![false; n],
        }
    }

    pub fn filled(width: usize, height: usize, sample: MaterialSample) -> Self {
        let mut maps = MaterialMaps::new(width, height);
        for i in 0..width * height {
            maps.set(i, sample);
        }
        maps
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> MaterialSample {
        MaterialSample::new(
            Rgb::from_f32(self.diffuse[i]),
            Rgb::from_f32(self.specular[i]),
            self.roughness[i] as f64,
        )
    }

    /// Stores the sample and marks the pixel valid.
    #[inline]
    pub fn set(&mut self, i: usize, s: MaterialSample) {
        self.diffuse[i] = s.diffuse.to_f32();
        self.specular[i] = s.specular.to_f32();
        self.roughness[i] = s.roughness as f32;
        self.mask[i] = true;
    }

    pub fn invalidate(&mut self, i: usize) {
        self.diffuse[i] = [0.0; 3];
        self.specular[i] = [0.0; 3];
        self.roughness[i] = 1.0;
        self.mask[i] = false;
    }

    /// Bilinear lookup of all seven channels at continuous pixel coordinates.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<MaterialSample> {
        let taps = bilinear_taps(self.width, self.height, &self.mask, x, y)?;
        let mut acc = [0.0f64; 7];
        for &(i, w) in taps.iter() {
            let c = self.get(i).to_channels();
            for k in 0..7 {
                acc[k] += w * c[k];
            }
        }
        Some(MaterialSample::from_channels(acc))
    }

    pub fn same_shape(&self, other: &MaterialMaps) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Writes `diffuse.pfm`, `specular.pfm`, `roughness.pfm` and `mask.png` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let rgb = |v: &[[f32; 3]]| -> Vec<f32> { v.iter().flat_map(|p| p.iter().copied()).collect() };
        write_pfm(
            &dir.join("diffuse.pfm"),
            &PfmData {
                width: self.width,
                height: self.height,
                channels: 3,
                data: rgb(&self.diffuse),
            },
        )?;
        write_pfm(
            &dir.join("specular.pfm"),
            &PfmData {
                width: self.width,
                height: self.height,
                channels: 3,
                data: rgb(&self.specular),
            },
        )?;
        write_pfm(
            &dir.join("roughness.pfm"),
            &PfmData {
                width: self.width,
                height: self.height,
                channels: 1,
                data: self.roughness.clone(),
            },
        )?;
        write_mask_png(&dir.join("mask.png"), self.width, self.height, &self.mask)
    }

    /// Reads maps written by [`MaterialMaps::save`]. A missing mask means all valid.
    pub fn load(dir: &Path) -> Result<Self> {
        let d = read_pfm(&dir.join("diffuse.pfm"))?;
        let s = read_pfm(&dir.join("specular.pfm"))?;
        let r = read_pfm(&dir.join("roughness.pfm"))?;
        let (w, h) = (d.width, d.height);
        for (name, p) in [("specular", &s), ("roughness", &r)] {
            if p.width != w || p.height != h {
                return Err(Error::ResolutionMismatch(format!(
                    "{name} map is {}x{}, diffuse is {w}x{h}",
                    p.width, p.height
                )));
            }
        }
        let to_rgb = |p: &PfmData| -> Vec<[f32; 3]> {
            (0..w * h)
                .map(|i| {
                    if p.channels == 3 {
                        [p.data[3 * i], p.data[3 * i + 1], p.data[3 * i + 2]]
                    } else {
                        [p.data[i]; 3]
                    }
                })
                .collect()
        };
        let roughness = (0..w * h)
            .map(|i| r.data[i * r.channels])
            .collect::<Vec<_>>();
        let mask_path = dir.join("mask.png");
        let mask = if mask_path.exists() {
            let (mw, mh, m) = read_mask_png(&mask_path)?;
            if mw != w || mh != h {
                return Err(Error::ResolutionMismatch(format!(
                    "mask is {mw}x{mh}, maps are {w}x{h}"
                )));
            }
            m
        } else {
            vec![true; w * h]
        };
        Ok(MaterialMaps {
            width: w,
            height: h,
            diffuse: to_rgb(&d),
            specular: to_rgb(&s),
            roughness,
            mask,
        })
    }

    /// 8-bit previews (`*_preview.png`), diffuse and specular gamma-encoded for display.
    pub fn save_previews(&self, dir: &Path) -> Result<()> {
        let enc = |v: f32| quantize_unit((v.max(0.0) as f64).powf(1.0 / 2.2));
        let d: Vec<u8> = self.diffuse.iter().flat_map(|p| p.map(enc)).collect();
        let s: Vec<u8> = self.specular.iter().flat_map(|p| p.map(enc)).collect();
        let r: Vec<u8> = self.roughness.iter().map(|&v| quantize_unit(v as f64)).collect();
        write_png(&dir.join("diffuse_preview.png"), self.width, self.height, 3, &d)?;
        write_png(&dir.join("specular_preview.png"), self.width, self.height, 3, &s)?;
        write_png(&dir.join("roughness_preview.png"), self.width, self.height, 1, &r)
    }
}

/// Spherical Gaussian lobe `G(ω) = amplitude · exp(sharpness · (axis·ω − 1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SGLight {
    pub axis: Vec3,
    pub sharpness: f64,
    pub amplitude: Rgb,
}

impl SGLight {
    pub fn new(axis: Vec3, sharpness: f64, amplitude: Rgb) -> Self {
        SGLight {
            axis,
            sharpness,
            amplitude,
        }
    }

    pub fn eval(&self, dir: Vec3) -> Rgb {
        self.amplitude * (self.sharpness * (self.axis.dot(dir) - 1.0)).exp()
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if (self.axis.length() - 1.0).abs() > 1e-6 {
            return Err(format!("SG axis is not unit length: {:?}", self.axis));
        }
        if !self.sharpness.is_finite() || self.sharpness < 0.0 {
            return Err(format!("SG sharpness must be finite and >= 0, got {}", self.sharpness));
        }
        if !self.amplitude.is_finite() || (0..3).any(|i| self.amplitude[i] < 0.0) {
            return Err(format!("SG amplitude must be >= 0, got {:?}", self.amplitude));
        }
        Ok(())
    }
}

/// A light in world space as described by the scene config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SceneLight {
    /// Isotropic point light with inverse-square falloff.
    Point { position: Vec3, intensity: Rgb },
    /// Distant light arriving from `direction` (unit vector toward the light).
    Directional { direction: Vec3, intensity: Rgb },
    /// Distant extended light; never shadowed.
    Sg(SGLight),
}
