//! Uniform, power-of-two and additive-power-of-two quantizers, per-filter
//! scheme selection and the network-level mixed assignment policy.
//!
//! Rounding is round-half-to-even everywhere.

mod apot;
mod plan;
mod pot;
mod select;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use apot::{
    apot_codebook, apot_scale, quantize_apot, quantize_apot_with_scale, APoTCode, ApotFilter,
    ApotLayout, APOT_BITS, APOT_MAX_UNITS, APOT_P1, APOT_P2, APOT_P_MIN,
};
pub use plan::{
    assign_m2q, parse_ratio, FilterQuant, LayerPlan, M2qConfig, QuantPlan, RatioScope, SchemeChoice,
};
pub use pot::{pot_codebook, quantize_pot, quantize_pot_with_scale, PoTCode, PotFilter};
pub use select::{mse, scheme_errors, select_scheme, uniform8_roundtrip, SchemeErrors};

/// Bit width of activations and of uniform weights in computation-intensive layers.
pub const ACT_BITS: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Granularity {
    PerLayer,
    PerFilter,
}

/// Affine quantization parameters: `code = clip(round(x/S) + Z, 0, 2^b - 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
    pub bits: u32,
    pub granularity: Granularity,
}

impl QuantParams {
    pub fn qmax(&self) -> i32 {
        (1i32 << self.bits) - 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(3..=8).contains(&self.bits) {
            return Err(Error::Config(format!(
                "bit width {} outside [3, 8]",
                self.bits
            )));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Config(format!(
                "scale {} is not a positive finite number",
                self.scale
            )));
        }
        if !(0..=self.qmax()).contains(&self.zero_point) {
            return Err(Error::Config(format!(
                "zero point {} outside [0, {}]",
                self.zero_point,
                self.qmax()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn quantize(&self, x: f64) -> u8 {
        let q = round_half_even(x / self.scale) + self.zero_point as f64;
        q.clamp(0.0, self.qmax() as f64) as u8
    }

    #[inline]
    pub fn dequantize(&self, code: u8) -> f64 {
        self.scale * (code as i32 - self.zero_point) as f64
    }
}

#[inline]
pub fn round_half_even(x: f64) -> f64 {
    x.round_ties_even()
}

fn check_bits(bits: u32) -> Result<()> {
    if (3..=8).contains(&bits) {
        Ok(())
    } else {
        Err(Error::Config(format!("bit width {bits} outside [3, 8]")))
    }
}

/// Scale and zero point from an observed range.
///
/// A constant range `c` gets parameters that represent `c` exactly:
/// `S = |c|` with `Z = 0` (or `Z = 1` for negative `c`), and `S = 1, Z = 0`
/// for an all-zero tensor.
pub fn calibrate_range(
    min: f64,
    max: f64,
    bits: u32,
    granularity: Granularity,
) -> Result<QuantParams> {
    check_bits(bits)?;
    if !(min.is_finite() && max.is_finite()) || min > max {
        return Err(Error::Config(format!(
            "invalid calibration range [{min}, {max}]"
        )));
    }
    let qmax = ((1u32 << bits) - 1) as f64;
    let (scale, zero_point) = if max == min {
        match min {
            0.0 => (1.0, 0),
            c if c > 0.0 => (c, 0),
            c => (-c, 1),
        }
    } else {
        let scale = (max - min) / qmax;
        let z = round_half_even(-min / scale).clamp(0.0, qmax);
        (scale, z as i32)
    };
    Ok(QuantParams {
        scale,
        zero_point,
        bits,
        granularity,
    })
}

/// Parameters from the pooled minimum and maximum of all samples.
pub fn calibrate_affine<'a, I>(
    samples: I,
    bits: u32,
    granularity: Granularity,
) -> Result<QuantParams>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut seen = false;
    for s in samples {
        for &x in s {
            seen = true;
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    if !seen {
        return Err(Error::Config(
            "calibration needs at least one sample".into(),
        ));
    }
    calibrate_range(lo, hi, bits, granularity)
}

pub fn quantize_uniform(x: &[f64], params: &QuantParams) -> Vec<u8> {
    x.iter().map(|&v| params.quantize(v)).collect()
}

pub fn dequantize(codes: &[u8], params: &QuantParams) -> Vec<f64> {
    codes.iter().map(|&c| params.dequantize(c)).collect()
}
