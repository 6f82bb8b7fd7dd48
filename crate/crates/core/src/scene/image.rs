//! Float rasters and their on-disk forms (PFM and 8-bit PNG).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Rgb;

/// Display gamma used to decode 8-bit photographs into linear radiance.
pub const DECODE_GAMMA: f64 = 2.2;

/// Linear-RGB raster with a per-pixel validity mask. Row 0 is the top row.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f32; 3]>,
    pub mask: Vec<bool>,
}

impl RadianceImage {
    /// Black image with every pixel marked valid.
    pub fn new(width: usize, height: usize) -> Self {
        RadianceImage {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
            mask: vec![true; width * height],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        Rgb::from_f32(self.pixels[self.index(x, y)])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: Rgb) {
        let i = self.index(x, y);
        self.pixels[i] = value.to_f32();
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.mask[self.index(x, y)]
    }

    /// Bilinear lookup at continuous pixel coordinates (pixel centers at integers).
    /// `None` when out of range or when any contributing tap is masked.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<Rgb> {
        let taps = bilinear_taps(self.width, self.height, &self.mask, x, y)?;
        let mut acc = Rgb::ZERO;
        for &(i, w) in taps.iter() {
            acc += Rgb::from_f32(self.pixels[i]) * w;
        }
        Some(acc)
    }

    /// Checks the radiance invariant on valid pixels: finite and non-negative.
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (i, (p, &m)) in self.pixels.iter().zip(&self.mask).enumerate() {
            if m && p.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(format!(
                    "pixel ({}, {}) is negative or not finite: {:?}",
                    i % self.width,
                    i / self.width,
                    p
                ));
            }
        }
        Ok(())
    }

    pub fn valid_fraction(&self) -> f64 {
        if self.mask.is_empty() {
            return 0.0;
        }
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }
}

/// Up to four (index, weight) pairs with strictly positive weight.
#[derive(Debug, Clone, Copy)]
pub struct BilinearTaps {
    taps: [(usize, f64); 4],
    len: usize,
}

impl BilinearTaps {
    pub fn iter(&self) -> std::slice::Iter<'_, (usize, f64)> {
        self.taps[..self.len].iter()
    }
}

/// Bilinear footprint of `(x, y)` on a `width × height` grid. The domain is
/// `[0, width−1] × [0, height−1]`; taps with zero weight are dropped, and the
/// lookup fails if a remaining tap is masked out.
pub fn bilinear_taps(
    width: usize,
    height: usize,
    mask: &[bool],
    x: f64,
    y: f64,
) -> Option<BilinearTaps> {
    if width == 0 || height == 0 || !x.is_finite() || !y.is_finite() {
        return None;
    }
    if x < 0.0 || y < 0.0 || x > (width - 1) as f64 || y > (height - 1) as f64 {
        return None;
    }
    let x0 = (x.floor() as usize).min(width - 1);
    let y0 = (y.floor() as usize).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let candidates = [
        (y0 * width + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * width + x1, fx * (1.0 - fy)),
        (y1 * width + x0, (1.0 - fx) * fy),
        (y1 * width + x1, fx * fy),
    ];
    let mut out = BilinearTaps {
        taps: [(0, 0.0); 4],
        len: 0,
    };
    for (i, w) in candidates {
        if w > 0.0 {
            if !mask[i] {
                return None;
            }
            out.taps[out.len] = (i, w);
            out.len += 1;
        }
    }
    Some(out)
}

/// Raw PFM contents: channel count (1 or 3), dimensions, and top-to-bottom data.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmData {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

fn read_header_token<R: BufRead>(reader: &mut R, path: &Path) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = reader.read(&mut byte).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        if byte[0].is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(byte[0]);
        if token.len() > 64 {
            return Err(Error::parse(path, "PFM header token too long"));
        }
    }
    if token.is_empty() {
        return Err(Error::parse(path, "truncated PFM header"));
    }
    String::from_utf8(token).map_err(|_| Error::parse(path, "PFM header is not ASCII"))
}

pub fn read_pfm(path: &Path) -> Result<PfmData> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let channels = match read_header_token(&mut reader, path)?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::parse(path, format!("bad PFM magic {other:?}"))),
    };
    let parse_dim = |s: String| {
        s.parse::<usize>()
            .map_err(|_| Error::parse(path, format!("bad PFM dimension {s:?}")))
    };
    let width = parse_dim(read_header_token(&mut reader, path)?)?;
    let height = parse_dim(read_header_token(&mut reader, path)?)?;
    let scale_tok = read_header_token(&mut reader, path)?;
    let scale: f64 = scale_tok
        .parse()
        .map_err(|_| Error::parse(path, format!("bad PFM scale {scale_tok:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::parse(path, "PFM scale must be non-zero"));
    }
    let little_endian = scale < 0.0;
    let count = width * height * channels;
    let mut bytes = vec![0u8; count * 4];
    reader
        .read_exact(&mut bytes)
        .map_err(|_| Error::parse(path, "truncated PFM pixel data"))?;
    let mut data = vec![0f32; count];
    let row_len = width * channels;
    for (row, chunk) in bytes.chunks_exact(row_len * 4).enumerate() {
        // File rows run bottom-to-top.
        let dst_row = height - 1 - row;
        for (k, b) in chunk.chunks_exact(4).enumerate() {
            let raw = [b[0], b[1], b[2], b[3]];
            data[dst_row * row_len + k] = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
        }
    }
    Ok(PfmData {
        width,
        height,
        channels,
        data,
    })
}

pub fn write_pfm(path: &Path, pfm: &PfmData) -> Result<()> {
    assert!(pfm.channels == 1 || pfm.channels == 3);
    assert_eq!(pfm.data.len(), pfm.width * pfm.height * pfm.channels);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let magic = if pfm.channels == 3 { "PF" } else { "Pf" };
    let row_len = pfm.width * pfm.channels;
    let mut body = Vec::with_capacity(pfm.data.len() * 4 + 32);
    body.extend_from_slice(format!("{magic}\n{} {}\n-1.0\n", pfm.width, pfm.height).as_bytes());
    for row in (0..pfm.height).rev() {
        for v in &pfm.data[row * row_len..(row + 1) * row_len] {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&body).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a PFM or 8/16-bit PNG into linear radiance. With `gamma_encoded` every
/// channel, after scaling to [0,1], is raised to the power 2.2. A PNG alpha of
/// zero marks the pixel invalid.
pub fn load_image(path: &Path, gamma_encoded: bool) -> Result<RadianceImage> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let mut image = match ext.as_str() {
        "pfm" => {
            let pfm = read_pfm(path)?;
            let mut img = RadianceImage::new(pfm.width, pfm.height);
            for (i, px) in img.pixels.iter_mut().enumerate() {
                *px = if pfm.channels == 3 {
                    [pfm.data[3 * i], pfm.data[3 * i + 1], pfm.data[3 * i + 2]]
                } else {
                    [pfm.data[i]; 3]
                };
            }
            img
        }
        "png" => read_png_radiance(path)?,
        _ => {
            return Err(Error::InvalidImage {
                path: path.into(),
                message: format!("unsupported image extension {ext:?}"),
            })
        }
    };
    image.validate().map_err(|message| Error::InvalidImage {
        path: path.into(),
        message,
    })?;
    if gamma_encoded {
        for px in &mut image.pixels {
            for c in px.iter_mut() {
                *c = (*c as f64).powf(DECODE_GAMMA) as f32;
            }
        }
    }
    Ok(image)
}

fn read_png_radiance(path: &Path) -> Result<RadianceImage> {
    let png = read_png(path)?;
    let mut img = RadianceImage::new(png.width, png.height);
    let ch = png.channels;
    for i in 0..png.width * png.height {
        let s = &png.samples[i * ch..(i + 1) * ch];
        let (rgb, alpha) = match ch {
            1 => ([s[0]; 3], None),
            2 => ([s[0]; 3], Some(s[1])),
            3 => ([s[0], s[1], s[2]], None),
            _ => ([s[0], s[1], s[2]], Some(s[3])),
        };
        img.pixels[i] = rgb.map(|v| v as f32);
        if let Some(a) = alpha {
            img.mask[i] = a > 0.0;
        }
    }
    Ok(img)
}

/// Decoded PNG with samples normalized to [0,1].
pub struct PngData {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub samples: Vec<f64>,
}

pub fn read_png(path: &Path) -> Result<PngData> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let channels = info.color_type.samples();
    let width = info.width as usize;
    let height = info.height as usize;
    let n = width * height * channels;
    let samples: Vec<f64> = match info.bit_depth {
        png::BitDepth::Sixteen => buf[..2 * n]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
            .collect(),
        png::BitDepth::Eight => buf[..n].iter().map(|&b| b as f64 / 255.0).collect(),
        other => {
            return Err(Error::parse(
                path,
                format!("unsupported PNG bit depth {other:?}"),
            ))
        }
    };
    Ok(PngData {
        width,
        height,
        channels,
        samples,
    })
}

/// Writes 8-bit samples; `channels` is 1 (gray), 3 (RGB) or 4 (RGBA).
pub fn write_png(path: &Path, width: usize, height: usize, channels: usize, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(match channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        _ => panic!("unsupported channel count {channels}"),
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::parse(path, e.to_string()))?;
    writer
        .write_image_data(data)
        .map_err(|e| Error::parse(path, e.to_string()))
}

#[inline]
pub fn quantize_unit(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Saves a radiance image. PFM stores values verbatim; PNG clamps to [0,1],
/// optionally applies the inverse display gamma, and writes the mask as alpha.
pub fn save_image(path: &Path, image: &RadianceImage, gamma_encode: bool) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "pfm" => {
            let data = image.pixels.iter().flat_map(|p| p.iter().copied()).collect();
            write_pfm(
                path,
                &PfmData {
                    width: image.width,
                    height: image.height,
                    channels: 3,
                    data,
                },
            )
        }
        "png" => {
            let all_valid = image.mask.iter().all(|&m| m);
            let channels = if all_valid { 3 } else { 4 };
            let mut data = Vec::with_capacity(image.pixels.len() * channels);
            for (p, &m) in image.pixels.iter().zip(&image.mask) {
                for &c in p {
                    let v = if gamma_encode {
                        (c.max(0.0) as f64).powf(1.0 / DECODE_GAMMA)
                    } else {
                        c as f64
                    };
                    data.push(quantize_unit(v));
                }
                if !all_valid {
                    data.push(if m { 255 } else { 0 });
                }
            }
            write_png(path, image.width, image.height, channels, &data)
        }
        _ => Err(Error::InvalidImage {
            path: path.into(),
            message: format!("unsupported image extension {ext:?}"),
        }),
    }
}

/// Writes a boolean raster as a black/white PNG.
pub fn write_mask_png(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    let data: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    write_png(path, width, height, 1, &data)
}

pub fn read_mask_png(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let png = read_png(path)?;
    let mask = png
        .samples
        .chunks_exact(png.channels)
        .map(|s| s[0] >= 0.5)
        .collect();
    Ok((png.width, png.height, mask))
}
