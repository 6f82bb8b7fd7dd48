//! Cook-Torrance shading with a Beckmann distribution, Schlick Fresnel and
//! height-correlated Smith masking, plus closed-form spherical Gaussian
//! lighting and analytic material derivatives.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::math::{Rgb, Vec3};
use crate::scene::{MaterialSample, SGLight, MIN_ROUGHNESS};

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Clamped cosine approximated as `COSINE_LOBE_AMPLITUDE * exp(COSINE_LOBE_SHARPNESS * (n.l - 1))`.
pub const COSINE_LOBE_SHARPNESS: f64 = 2.133;
pub const COSINE_LOBE_AMPLITUDE: f64 = 1.17;

/// Beckmann distribution `exp(-tan^2 / a^2) / (pi a^2 cos^4)`.
pub fn beckmann_ndf(roughness: f64, cos_h: f64) -> Result<f64> {
    if !(roughness > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "roughness must be positive, got {roughness}"
        )));
    }
    Ok(beckmann(roughness, cos_h))
}

#[inline]
fn beckmann(alpha: f64, cos_h: f64) -> f64 {
    if cos_h <= 0.0 {
        return 0.0;
    }
    let c2 = cos_h * cos_h;
    let a2 = alpha * alpha;
    let tan2 = (1.0 - c2) / c2;
    (-tan2 / a2).exp() / (PI * a2 * c2 * c2)
}

pub fn fresnel_schlick(specular: Rgb, cos_d: f64) -> Rgb {
    let w = schlick_weight(cos_d);
    specular + (Vec3::ONE - specular) * w
}

#[inline]
fn schlick_weight(cos_d: f64) -> f64 {
    let m = (1.0 - cos_d).clamp(0.0, 1.0);
    let m2 = m * m;
    m2 * m2 * m
}

/// Smith auxiliary function for Beckmann and its derivative in `alpha`.
#[inline]
fn smith_lambda(alpha: f64, cos_theta: f64) -> (f64, f64) {
    let c = cos_theta.min(1.0);
    let sin = (1.0 - c * c).max(0.0).sqrt();
    if sin == 0.0 {
        return (0.0, 0.0);
    }
    let a = c / (alpha * sin);
    if a < 1e-12 {
        return (f64::INFINITY, 0.0);
    }
    let e = (-a * a).exp();
    let lambda = -0.5 * libm::erfc(a) + e / (2.0 * a * SQRT_PI);
    let d_alpha = e / (2.0 * SQRT_PI * a * alpha);
    (lambda, d_alpha)
}

/// Height-correlated masking-shadowing and its derivative in `alpha`.
#[inline]
fn smith_g2(alpha: f64, cos_v: f64, cos_l: f64) -> (f64, f64) {
    let (lv, dv) = smith_lambda(alpha, cos_v);
    let (ll, dl) = smith_lambda(alpha, cos_l);
    if !lv.is_finite() || !ll.is_finite() {
        return (0.0, 0.0);
    }
    let g = 1.0 / (1.0 + lv + ll);
    (g, -g * g * (dv + dl))
}

#[inline]
fn effective_roughness(r: f64) -> (f64, f64) {
    if r > MIN_ROUGHNESS {
        (r, 1.0)
    } else {
        (MIN_ROUGHNESS, 0.0)
    }
}

/// BRDF value in 1/sr; zero when either direction is below the surface.
pub fn eval_brdf(mat: &MaterialSample, n: Vec3, v: Vec3, l: Vec3) -> Rgb {
    let nl = n.dot(l);
    let nv = n.dot(v);
    if nl <= 0.0 || nv <= 0.0 {
        return Vec3::ZERO;
    }
    let (alpha, _) = effective_roughness(mat.roughness);
    let h = (v + l).normalize();
    let d = beckmann(alpha, n.dot(h));
    let (g, _) = smith_g2(alpha, nv, nl);
    let f = fresnel_schlick(mat.specular, v.dot(h));
    mat.diffuse / PI + f * (d * g / (4.0 * nl * nv))
}

/// Radiance and its partials with respect to each material channel.
/// Derivatives are diagonal in color: channel `c` of the radiance depends only
/// on channel `c` of diffuse and specular.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadeTerms {
    pub color: Rgb,
    pub d_diffuse: Rgb,
    pub d_specular: Rgb,
    pub d_roughness: Rgb,
}

impl ShadeTerms {
    pub const ZERO: ShadeTerms = ShadeTerms {
        color: Vec3::ZERO,
        d_diffuse: Vec3::ZERO,
        d_specular: Vec3::ZERO,
        d_roughness: Vec3::ZERO,
    };
}

impl std::ops::AddAssign for ShadeTerms {
    fn add_assign(&mut self, o: ShadeTerms) {
        self.color += o.color;
        self.d_diffuse += o.d_diffuse;
        self.d_specular += o.d_specular;
        self.d_roughness += o.d_roughness;
    }
}

/// A light at infinity or already attenuated to the shaded point:
/// `direction` points toward the light, `intensity` is the irradiance it
/// delivers at normal incidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLight {
    pub direction: Vec3,
    pub intensity: Rgb,
}

/// Radiance toward `v` from one point light.
pub fn point_light_terms(mat: &MaterialSample, n: Vec3, v: Vec3, light: &PointLight) -> ShadeTerms {
    let l = light.direction;
    let nl = n.dot(l);
    let nv = n.dot(v);
    if nl <= 0.0 || nv <= 0.0 {
        return ShadeTerms::ZERO;
    }
    let (alpha, d_alpha_dr) = effective_roughness(mat.roughness);
    let h = (v + l).normalize();
    let nh = n.dot(h);
    let d = beckmann(alpha, nh);
    let (g, dg) = smith_g2(alpha, nv, nl);
    let w = schlick_weight(v.dot(h));
    let f = mat.specular + (Vec3::ONE - mat.specular) * w;
    let k = 1.0 / (4.0 * nv);
    let spec = d * g * k;
    let dd = if nh > 0.0 {
        let c2 = nh * nh;
        let tan2 = (1.0 - c2) / c2;
        d * (2.0 * tan2 / (alpha * alpha * alpha) - 2.0 / alpha)
    } else {
        0.0
    };
    let dspec = (dd * g + d * dg) * k * d_alpha_dr;
    let diffuse_w = nl / PI;
    ShadeTerms {
        color: (mat.diffuse * diffuse_w + f * spec).mul_elem(light.intensity),
        d_diffuse: light.intensity * diffuse_w,
        d_specular: light.intensity * (spec * (1.0 - w)),
        d_roughness: f.mul_elem(light.intensity) * dspec,
    }
}

/// Closed-form `integral over the sphere of prod_i exp(sharpness_i (w . axis_i - 1))`
/// and its derivatives with respect to each sharpness.
pub fn sg_product_integral<const N: usize>(axes: [Vec3; N], sharpness: [f64; N]) -> (f64, [f64; N]) {
    let sum: Vec3 = axes
        .iter()
        .zip(sharpness.iter())
        .fold(Vec3::ZERO, |acc, (&a, &s)| acc + a * s);
    let total: f64 = sharpness.iter().sum();
    let lm = sum.length();
    // 2 pi exp(lm - total) (1 - exp(-2 lm)) / lm, continuous at lm = 0.
    let (shape, dshape) = if lm < 1e-8 {
        (2.0 - 2.0 * lm, -2.0)
    } else {
        let s = -(-2.0 * lm).exp_m1() / lm;
        let ds = 2.0 * (-2.0 * lm).exp() / lm - s / lm;
        (s, ds)
    };
    let value = 2.0 * PI * (lm - total).exp() * shape;
    let mut grads = [0.0; N];
    for i in 0..N {
        let dlm = if lm < 1e-8 { 0.0 } else { axes[i].dot(sum) / lm };
        // d/dlm of exp(lm) shape(lm) = exp(lm)(shape + shape').
        grads[i] = 2.0 * PI * (lm - total).exp() * ((shape + dshape) * dlm - shape);
    }
    (value, grads)
}

/// `integral over the sphere of g1 * g2`, per color channel.
pub fn sg_inner_product(g1: &SGLight, g2: &SGLight) -> Rgb {
    let (v, _) = sg_product_integral([g1.axis, g2.axis], [g1.sharpness, g2.sharpness]);
    g1.amplitude.mul_elem(g2.amplitude) * v
}

/// Irradiance `integral of L(w) max(0, n.w) dw` from an SG light, using the
/// fitted approximation of Hill (2016) for sharp lobes and the cosine-lobe
/// inner product for very wide ones.
pub fn sg_irradiance(light: &SGLight, n: Vec3) -> Rgb {
    let lambda = light.sharpness;
    let mu = light.axis.dot(n);
    if lambda < 1.0 {
        let (v, _) = sg_product_integral([light.axis, n], [lambda, COSINE_LOBE_SHARPNESS]);
        return light.amplitude * (COSINE_LOBE_AMPLITUDE * v);
    }
    let c0 = 0.36;
    let c1 = 1.0 / (4.0 * c0);
    let eml = (-lambda).exp();
    let em2l = eml * eml;
    let rl = 1.0 / lambda;
    let scale = 1.0 + 2.0 * em2l - rl;
    let bias = (eml - em2l) * rl - em2l;
    let x = (1.0 - scale).sqrt();
    let x0 = c0 * mu;
    let x1 = c1 * x;
    let s = x0 + x1;
    let y = if x0.abs() <= x1 { s * s / x } else { mu.clamp(0.0, 1.0) };
    let normalized = scale * y + bias;
    let integral = 2.0 * PI * rl * -(-2.0 * lambda).exp_m1();
    light.amplitude * (normalized * integral).max(0.0)
}

/// Specular lobe of the BRDF times the cosine, warped into light-direction
/// space: axis is the mirror direction, sharpness `2 / a^2` scaled by
/// `1 / (4 n.v)`, amplitude the distribution peak times the Fresnel and
/// masking factors evaluated at the mirror direction.
pub fn brdf_lobe_as_sg(mat: &MaterialSample, n: Vec3, v: Vec3) -> Result<SGLight> {
    let nv = n.dot(v);
    if !(nv > 0.0) {
        return Err(Error::InvalidArgument("view direction is below the surface".into()));
    }
    let (alpha, _) = effective_roughness(mat.roughness);
    let lobe = SpecularLobe::new(alpha, nv);
    let f = fresnel_schlick(mat.specular, nv);
    Ok(SGLight {
        axis: v.reflect(n),
        sharpness: lobe.sharpness,
        amplitude: f * (lobe.amplitude * lobe.masking),
    })
}

/// Scalar pieces of the warped specular lobe and their derivatives in `alpha`.
struct SpecularLobe {
    sharpness: f64,
    d_sharpness: f64,
    amplitude: f64,
    d_amplitude: f64,
    /// `G / (4 (n.v)^2)` at the mirror direction.
    masking: f64,
    d_masking: f64,
}

impl SpecularLobe {
    fn new(alpha: f64, nv: f64) -> Self {
        let a2 = alpha * alpha;
        let sharpness = 2.0 / (a2 * 4.0 * nv);
        let amplitude = 1.0 / (PI * a2);
        let (g, dg) = smith_g2(alpha, nv, nv);
        let k = 1.0 / (4.0 * nv * nv);
        SpecularLobe {
            sharpness,
            d_sharpness: -2.0 * sharpness / alpha,
            amplitude,
            d_amplitude: -2.0 * amplitude / alpha,
            masking: g * k,
            d_masking: dg * k,
        }
    }
}

/// Radiance toward `v` from one SG light: diffuse irradiance plus the
/// closed-form product of light, warped specular lobe and cosine lobe.
pub fn sg_light_terms(mat: &MaterialSample, n: Vec3, v: Vec3, light: &SGLight) -> ShadeTerms {
    let nv = n.dot(v);
    if nv <= 0.0 {
        return ShadeTerms::ZERO;
    }
    let irradiance = sg_irradiance(light, n);
    let (alpha, d_alpha_dr) = effective_roughness(mat.roughness);
    let lobe = SpecularLobe::new(alpha, nv);
    let axis = v.reflect(n);
    let (integral, grads) = sg_product_integral(
        [axis, light.axis, n],
        [lobe.sharpness, light.sharpness, COSINE_LOBE_SHARPNESS],
    );
    let w = schlick_weight(nv);
    let f = mat.specular + (Vec3::ONE - mat.specular) * w;
    let scalar = lobe.amplitude * lobe.masking * COSINE_LOBE_AMPLITUDE * integral;
    let d_scalar = COSINE_LOBE_AMPLITUDE
        * (lobe.d_amplitude * lobe.masking * integral
            + lobe.amplitude * lobe.d_masking * integral
            + lobe.amplitude * lobe.masking * grads[0] * lobe.d_sharpness)
        * d_alpha_dr;
    let light_spec = light.amplitude * scalar;
    ShadeTerms {
        color: mat.diffuse.mul_elem(irradiance) / PI + f.mul_elem(light_spec),
        d_diffuse: irradiance / PI,
        d_specular: light_spec * (1.0 - w),
        d_roughness: f.mul_elem(light.amplitude) * d_scalar,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShadingContext {
    /// Unit shading normal.
    pub normal: Vec3,
    /// Unit direction toward the viewer.
    pub view: Vec3,
    pub point_lights: Vec<PointLight>,
    pub sg_lights: Vec<SGLight>,
}

/// Partial derivatives of radiance: `d_diffuse[c][k]` is d color_c / d diffuse_k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadeGradient {
    pub d_diffuse: [[f64; 3]; 3],
    pub d_specular: [[f64; 3]; 3],
    pub d_roughness: [f64; 3],
}

impl From<&ShadeTerms> for ShadeGradient {
    fn from(t: &ShadeTerms) -> Self {
        let diag = |v: Rgb| {
            let mut m = [[0.0; 3]; 3];
            for c in 0..3 {
                m[c][c] = v[c];
            }
            m
        };
        ShadeGradient {
            d_diffuse: diag(t.d_diffuse),
            d_specular: diag(t.d_specular),
            d_roughness: t.d_roughness.to_array(),
        }
    }
}

pub fn shade_terms(mat: &MaterialSample, ctx: &ShadingContext) -> ShadeTerms {
    let mut acc = ShadeTerms::ZERO;
    if ctx.normal.dot(ctx.view) <= 0.0 {
        return acc;
    }
    for l in &ctx.point_lights {
        acc += point_light_terms(mat, ctx.normal, ctx.view, l);
    }
    for l in &ctx.sg_lights {
        acc += sg_light_terms(mat, ctx.normal, ctx.view, l);
    }
    acc
}

/// Local radiance toward the viewer; no shadows or interreflection.
pub fn shade_point(mat: &MaterialSample, ctx: &ShadingContext) -> Rgb {
    shade_terms(mat, ctx).color
}

pub fn shade_gradients(mat: &MaterialSample, ctx: &ShadingContext) -> (Rgb, ShadeGradient) {
    let t = shade_terms(mat, ctx);
    (t.color, ShadeGradient::from(&t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{spherical_direction, Frame};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
        spherical_direction(rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI))
    }

    fn random_upper(rng: &mut ChaCha8Rng, n: Vec3, min_cos: f64) -> Vec3 {
        let f = Frame::from_normal(n);
        f.to_world(spherical_direction(rng.gen_range(min_cos..1.0), rng.gen_range(0.0..2.0 * PI)))
    }

    fn random_material(rng: &mut ChaCha8Rng) -> MaterialSample {
        MaterialSample::new(
            Vec3::new(rng.gen(), rng.gen(), rng.gen()),
            Vec3::new(rng.gen(), rng.gen(), rng.gen()),
            rng.gen_range(0.05..1.0),
        )
    }

    #[test]
    fn beckmann_examples() {
        assert!((beckmann_ndf(1.0, 1.0).unwrap() - 1.0 / PI).abs() < 1e-15);
        assert!((beckmann_ndf(0.5, 1.0).unwrap() - 4.0 / PI).abs() < 1e-14);
        assert_eq!(beckmann_ndf(0.5, -0.2).unwrap(), 0.0);
        assert!(beckmann_ndf(0.0, 1.0).is_err());
    }

    #[test]
    fn fresnel_examples() {
        let s = Vec3::new(0.2, 0.4, 0.6);
        assert_eq!(fresnel_schlick(s, 1.0), s);
        assert_eq!(fresnel_schlick(s, 0.0), Vec3::ONE);
        assert!((fresnel_schlick(Vec3::splat(0.04), 0.5).x - 0.07).abs() < 1e-15);
    }

    #[test]
    fn brdf_without_specular_is_lambertian() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = Vec3::new(0.0, 0.0, 1.0);
        for _ in 0..100 {
            let mut m = random_material(&mut rng);
            m.specular = Vec3::ZERO;
            // Schlick leaves (1 - h.v)^5 at zero specular, so only the
            // retro-reflective configuration is exactly Lambertian.
            let v = random_upper(&mut rng, n, 0.01);
            let f = eval_brdf(&m, n, v, v);
            assert!((f - m.diffuse / PI).length() < 1e-15);
            let l = random_upper(&mut rng, n, 0.01);
            let h = (v + l).normalize();
            let residual = eval_brdf(&m, n, v, l) - m.diffuse / PI;
            assert!(residual.x >= 0.0 && residual.x <= (1.0 - v.dot(h)).powi(5) * eval_brdf(&MaterialSample::new(Vec3::ZERO, Vec3::ONE, m.roughness), n, v, l).x + 1e-12);
        }
        let m = MaterialSample::new(Vec3::ONE, Vec3::ONE, 0.3);
        assert_eq!(eval_brdf(&m, n, n, Vec3::new(0.0, 0.6, -0.8)), Vec3::ZERO);
    }

    #[test]
    fn brdf_is_reciprocal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let n = random_unit(&mut rng);
            let m = random_material(&mut rng);
            let v = random_upper(&mut rng, n, 0.0);
            let l = random_upper(&mut rng, n, 0.0);
            let a = eval_brdf(&m, n, v, l);
            let b = eval_brdf(&m, n, l, v);
            assert!((a - b).length() <= 1e-6 * (1.0 + a.length()), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn brdf_conserves_energy() {
        // Directional-hemispherical reflectance by midpoint quadrature.
        let n = Vec3::new(0.0, 0.0, 1.0);
        for alpha in [0.1, 0.3, 0.6, 1.0] {
            for theta_v in [0.0f64, 0.5, 1.0, 1.4] {
                let v = Vec3::new(theta_v.sin(), 0.0, theta_v.cos());
                let m = MaterialSample::new(Vec3::ZERO, Vec3::ONE, alpha);
                let (nt, np) = (800, 400);
                let mut sum = 0.0;
                for i in 0..nt {
                    let ct = (i as f64 + 0.5) / nt as f64;
                    for j in 0..np {
                        let phi = 2.0 * PI * (j as f64 + 0.5) / np as f64;
                        let l = spherical_direction(ct, phi);
                        sum += eval_brdf(&m, n, v, l).x * ct;
                    }
                }
                let albedo = sum * 2.0 * PI / (nt * np) as f64;
                assert!(albedo <= 1.05, "alpha {alpha} theta {theta_v}: {albedo}");
            }
        }
    }

    #[test]
    fn sg_inner_product_limits() {
        let a = SGLight::new(Vec3::new(0.0, 0.0, 1.0), 0.0, Vec3::splat(2.0));
        let b = SGLight::new(Vec3::new(1.0, 0.0, 0.0), 0.0, Vec3::splat(3.0));
        assert!((sg_inner_product(&a, &b).x - 4.0 * PI * 6.0).abs() < 1e-12);
        let c = SGLight::new(Vec3::new(0.0, 0.0, 1.0), 100.0, Vec3::ONE);
        let d = SGLight::new(Vec3::new(0.0, 0.0, -1.0), 100.0, Vec3::ONE);
        let same = sg_inner_product(&c, &c).x;
        assert!(sg_inner_product(&c, &d).x < 1e-30 * same);
    }

    #[test]
    fn sg_product_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let axes = [random_unit(&mut rng), random_unit(&mut rng), random_unit(&mut rng)];
            let s = [rng.gen_range(0.5..50.0), rng.gen_range(0.5..50.0), rng.gen_range(0.5..50.0)];
            let (v, g) = sg_product_integral(axes, s);
            for i in 0..3 {
                let h = 1e-5 * s[i];
                let (mut sp, mut sm) = (s, s);
                sp[i] += h;
                sm[i] -= h;
                let fd = (sg_product_integral(axes, sp).0 - sg_product_integral(axes, sm).0) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-5 * (fd.abs() + 1e-6 * v), "{fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn lobe_axis_at_normal_incidence() {
        let n = Vec3::new(0.0, 1.0, 0.0);
        let m = MaterialSample::new(Vec3::ZERO, Vec3::splat(0.5), 0.05);
        let lobe = brdf_lobe_as_sg(&m, n, n).unwrap();
        assert!((lobe.axis - n).length() < 1e-15);
        assert!((lobe.sharpness - 2.0 / (0.05f64 * 0.05) / 4.0).abs() < 1e-9);
        assert!(brdf_lobe_as_sg(&m, n, -n).is_err());
    }

    #[test]
    fn shade_examples() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        let m = MaterialSample::new(Vec3::new(0.2, 0.5, 0.8), Vec3::ZERO, 0.4);
        let ctx = ShadingContext {
            normal: n,
            view: n,
            point_lights: vec![PointLight { direction: n, intensity: Vec3::ONE }],
            sg_lights: vec![],
        };
        let (c, g) = shade_gradients(&m, &ctx);
        assert!((c - m.diffuse / PI).length() < 1e-15);
        assert!((g.d_diffuse[1][1] - 1.0 / PI).abs() < 1e-15);
        assert_eq!(g.d_diffuse[0][1], 0.0);
        assert_eq!(g.d_roughness, [0.0; 3]);
        let below = ShadingContext {
            point_lights: vec![PointLight { direction: -n, intensity: Vec3::ONE }],
            ..ctx.clone()
        };
        assert_eq!(shade_point(&m, &below), Vec3::ZERO);
    }

    #[test]
    fn shading_is_linear_in_lights() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let n = random_unit(&mut rng);
            let m = random_material(&mut rng);
            let light = PointLight { direction: random_upper(&mut rng, n, 0.05), intensity: Vec3::new(rng.gen(), rng.gen(), rng.gen()) };
            let sg = SGLight::new(random_unit(&mut rng), rng.gen_range(1.0..100.0), Vec3::new(rng.gen(), rng.gen(), rng.gen()));
            let v = random_upper(&mut rng, n, 0.05);
            let one = ShadingContext { normal: n, view: v, point_lights: vec![light], sg_lights: vec![sg] };
            let two = ShadingContext {
                point_lights: vec![PointLight { intensity: light.intensity * 2.0, ..light }],
                sg_lights: vec![SGLight { amplitude: sg.amplitude * 2.0, ..sg }],
                ..one.clone()
            };
            assert_eq!(shade_point(&m, &two), shade_point(&m, &one) * 2.0);
            let a = shade_terms(&m, &ShadingContext { sg_lights: vec![], ..one.clone() });
            let b = shade_terms(&m, &ShadingContext { point_lights: vec![], ..one.clone() });
            let mut sum = a;
            sum += b;
            let both = shade_terms(&m, &one);
            assert!((sum.d_roughness - both.d_roughness).length() <= 1e-12 * (1.0 + both.d_roughness.length()));
        }
    }
}
