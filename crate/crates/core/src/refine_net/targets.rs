//! Seven-element box encoding in the context box's normalized frame.
//!
//! The normalized frame is the unit cube spanned by the expanded context box with
//! `X` along its length, `Y` along its height and `Z` along its width. A box is
//! described by its normalized center, its normalized left-bottom corner — the
//! box-local `(-l/2, -w/2)` bottom corner after folding the yaw into `(-π/2, π/2]`
//! relative to the context — and the normalized length `W*` of its width edge.
//! Because the normalization scales `X` and `Z` differently, recovering yaw, length
//! and width from these quantities requires solving a quartic in `tan(yaw)`.

use nalgebra::DMatrix;
use std::f64::consts::{FRAC_PI_2, PI};

use super::context::{ContextBox, CONTEXT_FACTORS};
use super::RefineError;
use crate::geometry::{wrap_angle, Box3, Vec3};

/// Normalized base box of every context, identical across samples because all
/// contexts are aligned with their base box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalAnchor {
    pub x_c: f64,
    pub y_c: f64,
    pub z_c: f64,
    pub x_l: f64,
    pub y_l: f64,
    pub z_l: f64,
    pub l: f64,
    pub h: f64,
    pub w: f64,
}

impl Default for CanonicalAnchor {
    fn default() -> Self {
        let [fh, fl, fw] = CONTEXT_FACTORS;
        Self::from_factors(fh, fl, fw)
    }
}

impl CanonicalAnchor {
    pub fn from_factors(fh: f64, fl: f64, fw: f64) -> Self {
        let (l, h, w) = (1.0 / fl, 1.0 / fh, 1.0 / fw);
        CanonicalAnchor {
            x_c: 0.5,
            y_c: 0.5,
            z_c: 0.5,
            x_l: 0.5 - l / 2.0,
            y_l: 0.5 - h / 2.0,
            z_l: 0.5 - w / 2.0,
            l,
            h,
            w,
        }
    }

    pub fn to_array(&self) -> [f64; 9] {
        [self.x_c, self.y_c, self.z_c, self.x_l, self.y_l, self.z_l, self.l, self.h, self.w]
    }

    pub fn from_array(a: [f64; 9]) -> Self {
        let [x_c, y_c, z_c, x_l, y_l, z_l, l, h, w] = a;
        CanonicalAnchor { x_c, y_c, z_c, x_l, y_l, z_l, l, h, w }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegressionTarget7 {
    pub d_xc: f64,
    pub d_yc: f64,
    pub d_zc: f64,
    pub d_xl: f64,
    pub d_yl: f64,
    pub d_zl: f64,
    pub d_w: f64,
}

impl RegressionTarget7 {
    pub fn to_array(&self) -> [f64; 7] {
        [self.d_xc, self.d_yc, self.d_zc, self.d_xl, self.d_yl, self.d_zl, self.d_w]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        let [d_xc, d_yc, d_zc, d_xl, d_yl, d_zl, d_w] = a;
        RegressionTarget7 { d_xc, d_yc, d_zc, d_xl, d_yl, d_zl, d_w }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Folds a relative yaw into `(-π/2, π/2]`; a box is symmetric under a half turn.
fn fold_half_turn(phi: f64) -> f64 {
    let mut p = wrap_angle(phi);
    if p > FRAC_PI_2 {
        p -= PI;
    } else if p <= -FRAC_PI_2 {
        p += PI;
    }
    p
}

/// Normalized coordinates of a point given in the context's local frame.
fn normalize(ctx: &ContextBox, q: Vec3) -> (f64, f64, f64) {
    let e = &ctx.expanded;
    (q.x / e.l + 0.5, q.z / e.h + 0.5, q.y / e.w + 0.5)
}

pub fn encode_targets(
    anchor: &CanonicalAnchor,
    ctx: &ContextBox,
    gt: &Box3,
) -> Result<RegressionTarget7, RefineError> {
    if !(gt.w > 0.0 && gt.l > 0.0 && gt.h > 0.0) {
        return Err(RefineError::NonPositiveWidth);
    }
    let e = &ctx.expanded;
    let phi = fold_half_turn(gt.yaw - e.yaw);
    let (s, c) = phi.sin_cos();
    let center = e.to_local(gt.center);
    let corner = Vec3::new(
        center.x + c * (-gt.l / 2.0) - s * (-gt.w / 2.0),
        center.y + s * (-gt.l / 2.0) + c * (-gt.w / 2.0),
        center.z - gt.h / 2.0,
    );
    let (xc, yc, zc) = normalize(ctx, center);
    let (xl, yl, zl) = normalize(ctx, corner);
    let w_star = gt.w * ((s / e.l).powi(2) + (c / e.w).powi(2)).sqrt();
    Ok(RegressionTarget7 {
        d_xc: (xc - anchor.x_c) / anchor.l,
        d_yc: (yc - anchor.y_c) / anchor.h,
        d_zc: (zc - anchor.z_c) / anchor.w,
        d_xl: (xl - anchor.x_l) / anchor.l,
        d_yl: (yl - anchor.y_l) / anchor.h,
        d_zl: (zl - anchor.z_l) / anchor.w,
        d_w: (w_star / anchor.w).ln(),
    })
}

/// Widths below this (metres) are treated as an underflowed decode.
pub const MIN_DECODED_EXTENT: f64 = 1e-6;

/// Real roots of `coeffs[0]·x^n + … + coeffs[n]`, via companion-matrix eigenvalues
/// and Newton polishing on the original polynomial.
pub fn real_polynomial_roots(coeffs: &[f64]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let first = coeffs.iter().position(|c| c.abs() > 1e-14 * scale).unwrap_or(coeffs.len());
    let poly: Vec<f64> = coeffs[first..].iter().map(|c| c / scale).collect();
    let n = poly.len().saturating_sub(1);
    if n == 0 {
        return Vec::new();
    }
    let eval = |x: f64| -> (f64, f64) {
        let (mut p, mut dp) = (0.0, 0.0);
        for &c in &poly {
            dp = dp * x + p;
            p = p * x + c;
        }
        (p, dp)
    };
    let mut companion = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        companion[(0, j)] = -poly[j + 1] / poly[0];
    }
    for i in 1..n {
        companion[(i, i - 1)] = 1.0;
    }
    let mut roots: Vec<f64> = companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..8 {
                let (p, dp) = eval(x);
                if dp == 0.0 {
                    break;
                }
                let step = p / dp;
                x -= step;
                if step.abs() <= 1e-16 * (1.0 + x.abs()) {
                    break;
                }
            }
            x
        })
        .collect();
    roots.sort_by(f64::total_cmp);
    roots
}

pub fn decode_box(
    anchor: &CanonicalAnchor,
    ctx: &ContextBox,
    delta: &RegressionTarget7,
) -> Result<Box3, RefineError> {
    if !delta.is_finite() {
        return Err(RefineError::NoValidSolution);
    }
    let e = &ctx.expanded;
    let xc = anchor.x_c + delta.d_xc * anchor.l;
    let yc = anchor.y_c + delta.d_yc * anchor.h;
    let zc = anchor.z_c + delta.d_zc * anchor.w;
    let xl = anchor.x_l + delta.d_xl * anchor.l;
    let yl = anchor.y_l + delta.d_yl * anchor.h;
    let zl = anchor.z_l + delta.d_zl * anchor.w;
    let w_star = anchor.w * delta.d_w.exp();

    let h = 2.0 * (yc - yl) * e.h;
    // Corner offset from the center in the context's local (metric) frame.
    let a = (xl - xc) * e.l;
    let b = (zl - zc) * e.w;
    let (p, q) = (1.0 / (e.l * e.l), 1.0 / (e.w * e.w));
    let k = w_star * w_star / 4.0;
    if !(h > MIN_DECODED_EXTENT) || !(k > 0.0) || !k.is_finite() {
        return Err(RefineError::NoValidSolution);
    }

    // (b − aT)²(pT² + q) = K(1 + T²)², T = tan φ
    let quartic = [
        a * a * p - k,
        -2.0 * a * b * p,
        b * b * p + a * a * q - 2.0 * k,
        -2.0 * a * b * q,
        b * b * q - k,
    ];
    let mut candidates: Vec<f64> = real_polynomial_roots(&quartic).into_iter().map(f64::atan).collect();
    candidates.push(FRAC_PI_2);

    let residual = |phi: f64| {
        let (s, c) = phi.sin_cos();
        let v = -a * s + b * c;
        (4.0 * v * v * (s * s * p + c * c * q) - w_star * w_star) / (w_star * w_star)
    };
    let mut best: Option<(f64, f64, f64)> = None;
    for phi in candidates {
        let phi = polish_angle(phi, &residual);
        if residual(phi).abs() > 1e-9 {
            continue;
        }
        let (s, c) = phi.sin_cos();
        let u = a * c + b * s;
        let v = -a * s + b * c;
        if !(u < 0.0 && v < 0.0) {
            continue;
        }
        let (l, w) = (-2.0 * u, -2.0 * v);
        if l < MIN_DECODED_EXTENT || w < MIN_DECODED_EXTENT {
            continue;
        }
        if best.is_none_or(|(bp, _, _)| phi.abs() < bp.abs()) {
            best = Some((phi, l, w));
        }
    }
    let (phi, l, w) = best.ok_or(RefineError::NoValidSolution)?;
    let center = e.to_world(Vec3::new((xc - 0.5) * e.l, (zc - 0.5) * e.w, (yc - 0.5) * e.h));
    Box3::new(center, h, l, w, e.yaw + phi).map_err(|_| RefineError::NoValidSolution)
}

/// A few secant-safe Newton steps on the angular residual.
fn polish_angle(mut phi: f64, f: &impl Fn(f64) -> f64) -> f64 {
    for _ in 0..4 {
        let r = f(phi);
        if r.abs() < 1e-14 {
            break;
        }
        let hs = 1e-7;
        let d = (f(phi + hs) - f(phi - hs)) / (2.0 * hs);
        if d == 0.0 || !d.is_finite() {
            break;
        }
        let next = phi - r / d;
        if f(next).abs() >= r.abs() {
            break;
        }
        phi = next;
    }
    phi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refine_net::context::expand_context;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn base() -> Box3 {
        Box3::new(Vec3::new(12.0, -2.0, -0.9), 1.5, 4.0, 1.7, 0.3).unwrap()
    }

    fn max_dev(a: &Box3, b: &Box3) -> f64 {
        [
            a.center.x - b.center.x,
            a.center.y - b.center.y,
            a.center.z - b.center.z,
            a.h - b.h,
            a.l - b.l,
            a.w - b.w,
            wrap_angle(a.yaw - b.yaw),
        ]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn anchor_constants() {
        let a = CanonicalAnchor::default();
        assert!((a.l - 2.0 / 3.0).abs() < 1e-15);
        assert!((a.h - 2.0 / 3.0).abs() < 1e-15);
        assert!((a.w - 0.625).abs() < 1e-15);
        assert!((a.x_l - 1.0 / 6.0).abs() < 1e-15);
        assert!((a.z_l - 0.1875).abs() < 1e-15);
        assert_eq!(CanonicalAnchor::from_array(a.to_array()), a);
    }

    #[test]
    fn base_box_encodes_to_zero() {
        let b = base();
        let d = encode_targets(&CanonicalAnchor::default(), &expand_context(&b), &b).unwrap();
        assert!(d.to_array().iter().all(|v| v.abs() < 1e-12), "{d:?}");
    }

    #[test]
    fn translation_along_length() {
        let b = base();
        let ctx = expand_context(&b);
        let shift = 0.1 * ctx.expanded.l;
        let moved = Box3 { center: b.center + b.heading() * shift, ..b };
        let d = encode_targets(&CanonicalAnchor::default(), &ctx, &moved).unwrap();
        // 0.1 of the context length over a normalized anchor length of 1/1.5.
        assert!((d.d_xc - 0.15).abs() < 1e-12);
        assert!((d.d_xl - 0.15).abs() < 1e-12);
        for v in [d.d_yc, d.d_zc, d.d_yl, d.d_zl, d.d_w] {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn doubled_width() {
        let b = base();
        let wide = Box3 { w: 2.0 * b.w, ..b };
        let d = encode_targets(&CanonicalAnchor::default(), &expand_context(&b), &wide).unwrap();
        assert!((d.d_w - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_delta_decodes_to_base() {
        let b = base();
        let got = decode_box(&CanonicalAnchor::default(), &expand_context(&b), &RegressionTarget7::default()).unwrap();
        assert!(max_dev(&got, &b) < 1e-12, "{got:?}");
    }

    #[test]
    fn half_turn_is_folded() {
        let b = base();
        let ctx = expand_context(&b);
        let turned = Box3::new(b.center, b.h, b.l, b.w, b.yaw + PI).unwrap();
        let d = encode_targets(&CanonicalAnchor::default(), &ctx, &turned).unwrap();
        assert!(d.to_array().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn round_trip_random_pairs() {
        let anchor = CanonicalAnchor::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..1000 {
            let b = Box3::new(
                Vec3::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0), rng.random_range(-2.0..1.0)),
                rng.random_range(1.2..2.2),
                rng.random_range(3.0..5.5),
                rng.random_range(1.4..2.1),
                rng.random_range(-PI..PI),
            )
            .unwrap();
            let ctx = expand_context(&b);
            let gt = Box3::new(
                b.center + Vec3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.2..0.2)),
                b.h * rng.random_range(0.8..1.25),
                b.l * rng.random_range(0.8..1.25),
                b.w * rng.random_range(0.8..1.25),
                b.yaw + rng.random_range(-30f64..30.0).to_radians(),
            )
            .unwrap();
            let d = encode_targets(&anchor, &ctx, &gt).unwrap();
            let back = decode_box(&anchor, &ctx, &d).unwrap();
            assert!(max_dev(&back, &gt) < 1e-6, "pair {i}: {gt:?} -> {back:?}");
            let again = encode_targets(&anchor, &ctx, &back).unwrap();
            for (x, y) in d.to_array().iter().zip(again.to_array()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn collapsed_width_has_no_solution() {
        let b = base();
        let d = RegressionTarget7 { d_w: -50.0, ..Default::default() };
        assert!(matches!(
            decode_box(&CanonicalAnchor::default(), &expand_context(&b), &d),
            Err(RefineError::NoValidSolution)
        ));
    }

    #[test]
    fn non_finite_delta_rejected() {
        let b = base();
        let d = RegressionTarget7 { d_xc: f64::NAN, ..Default::default() };
        assert!(decode_box(&CanonicalAnchor::default(), &expand_context(&b), &d).is_err());
    }

    #[test]
    fn polynomial_roots_known() {
        // (x-1)(x+2)(x-3)(x²+1)
        let r = real_polynomial_roots(&[1.0, -2.0, -4.0, 4.0, -5.0, 6.0]);
        assert_eq!(r.len(), 3);
        for (got, want) in r.iter().zip([-2.0, 1.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        // Leading zero trimmed: 0·x³ + x² − 1.
        let r = real_polynomial_roots(&[0.0, 1.0, 0.0, -1.0]);
        assert_eq!(r.len(), 2);
    }
}
