//! Log-ratio encoding of vehicle dimensions against class means, and the
//! dimension regression loss a 2D detector head is trained with.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorsError {
    #[error("dimension must be positive, got {0}")]
    NonPositiveDimension(f64),
    #[error("loss weight must be positive, got {0}")]
    InvalidWeight(f64),
}

/// Mean car dimensions `[h, l, w]` in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanDims {
    pub h: f64,
    pub l: f64,
    pub w: f64,
}

impl Default for MeanDims {
    /// Car + Van label means over the KITTI training labels.
    fn default() -> Self {
        Self { h: 1.53, l: 3.88, w: 1.63 }
    }
}

impl MeanDims {
    pub fn new(h: f64, l: f64, w: f64) -> Result<Self, PriorsError> {
        for d in [h, l, w] {
            if !(d > 0.0 && d.is_finite()) {
                return Err(PriorsError::NonPositiveDimension(d));
            }
        }
        Ok(Self { h, l, w })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DimDelta {
    pub dh: f64,
    pub dl: f64,
    pub dw: f64,
}

impl DimDelta {
    pub fn as_array(&self) -> [f64; 3] {
        [self.dh, self.dl, self.dw]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimensionLossConfig {
    pub lambda_d: f64,
}

impl Default for DimensionLossConfig {
    fn default() -> Self {
        Self { lambda_d: 1.0 }
    }
}

impl DimensionLossConfig {
    pub fn new(lambda_d: f64) -> Result<Self, PriorsError> {
        if !(lambda_d > 0.0) {
            return Err(PriorsError::InvalidWeight(lambda_d));
        }
        Ok(Self { lambda_d })
    }
}

pub fn encode_dims(actual: [f64; 3], mean: &MeanDims) -> Result<DimDelta, PriorsError> {
    for d in actual {
        if !(d > 0.0) {
            return Err(PriorsError::NonPositiveDimension(d));
        }
    }
    Ok(DimDelta {
        dh: (actual[0] / mean.h).ln(),
        dl: (actual[1] / mean.l).ln(),
        dw: (actual[2] / mean.w).ln(),
    })
}

pub fn decode_dims(delta: &DimDelta, mean: &MeanDims) -> [f64; 3] {
    [mean.h * delta.dh.exp(), mean.l * delta.dl.exp(), mean.w * delta.dw.exp()]
}

/// Smooth L1: `0.5 x²` inside the unit interval, `|x| − 0.5` outside.
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

/// Derivative of [`smooth_l1`].
pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

pub fn dimension_loss(pred: &DimDelta, target: &DimDelta, is_car: bool, cfg: &DimensionLossConfig) -> f64 {
    if !is_car {
        return 0.0;
    }
    let s: f64 = pred
        .as_array()
        .iter()
        .zip(target.as_array())
        .map(|(p, t)| smooth_l1(p - t))
        .sum();
    cfg.lambda_d * s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_encoding() {
        let m = MeanDims::default();
        assert_eq!(encode_dims([m.h, m.l, m.w], &m).unwrap(), DimDelta::default());
        assert_eq!(decode_dims(&DimDelta::default(), &m), [m.h, m.l, m.w]);
    }

    #[test]
    fn scalar_values() {
        let m = MeanDims::new(1.5, 4.0, 1.6).unwrap();
        let d = encode_dims([1.8, 4.0, 1.6], &m).unwrap();
        // ln(1.2) = 0.18232155679395462...
        assert!((d.dh - 0.182_321_556_793_954_6).abs() < 1e-15);
        let back = decode_dims(&DimDelta { dh: 2f64.ln(), dl: 0.0, dw: 0.0 }, &m);
        assert!((back[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_positive() {
        let m = MeanDims::default();
        assert_eq!(encode_dims([0.0, 1.0, 1.0], &m), Err(PriorsError::NonPositiveDimension(0.0)));
        assert!(MeanDims::new(1.0, -1.0, 1.0).is_err());
        assert!(DimensionLossConfig::new(0.0).is_err());
    }

    #[test]
    fn loss_values() {
        let cfg = DimensionLossConfig::default();
        let z = DimDelta::default();
        let p = DimDelta { dh: 0.5, ..z };
        assert!((dimension_loss(&p, &z, true, &cfg) - 0.125).abs() < 1e-15);
        let p = DimDelta { dh: 2.0, ..z };
        assert!((dimension_loss(&p, &z, true, &cfg) - 1.5).abs() < 1e-15);
        assert_eq!(dimension_loss(&p, &z, false, &cfg), 0.0);
    }

    #[test]
    fn smooth_l1_is_c1_at_one() {
        let h = 1e-7;
        for x0 in [1.0f64, -1.0] {
            let left = smooth_l1(x0 - h);
            let right = smooth_l1(x0 + h);
            assert!((left - 0.5).abs() < 1e-6 && (right - 0.5).abs() < 1e-6);
            let slope_l = (smooth_l1(x0) - smooth_l1(x0 - h)) / h;
            let slope_r = (smooth_l1(x0 + h) - smooth_l1(x0)) / h;
            assert!((slope_l - slope_r).abs() < 1e-5, "{slope_l} vs {slope_r}");
        }
    }
}
