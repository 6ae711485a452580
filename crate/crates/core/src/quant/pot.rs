use serde::{Deserialize, Serialize};

use super::round_half_even;
use crate::error::{Error, Result};

/// One power-of-two weight, `sign · S · 2^exponent`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoTCode {
    pub sign: i8,
    pub exponent: i32,
}

impl PoTCode {
    pub fn value(&self, scale: f64) -> f64 {
        self.sign as f64 * scale * 2f64.powi(self.exponent)
    }
}

/// PoT codes of one filter with their shared scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotFilter {
    pub scale: f64,
    pub bits: u32,
    pub codes: Vec<PoTCode>,
}

impl PotFilter {
    pub fn dequantize(&self) -> Vec<f64> {
        self.codes.iter().map(|c| c.value(self.scale)).collect()
    }
}

fn min_exponent(bits: u32) -> i32 {
    1 - (1i32 << bits)
}

/// Quantizes a filter to powers of two with `S = max(W) - min(W)`.
///
/// The exponent is `clip(round(log2|W/S|), 1 - 2^b, 0)`, rounded in the log
/// domain. Compared with the nearest codebook entry this picks the larger
/// neighbour for `|W/S|` between `2^(p-1/2)` and `1.5·2^(p-1)`. Zero weights
/// map to the smallest positive code.
pub fn quantize_pot(w: &[f64], bits: u32) -> Result<PotFilter> {
    let (lo, hi) = w
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let scale = hi - lo;
    if w.is_empty() || !(scale.is_finite() && scale > 0.0) {
        return Err(Error::DegenerateFilter(
            "power-of-two quantization needs a non-constant filter",
        ));
    }
    Ok(PotFilter {
        scale,
        bits,
        codes: quantize_pot_with_scale(w, scale, bits)?,
    })
}

/// Same rule as [`quantize_pot`] with a caller-supplied scale.
pub fn quantize_pot_with_scale(w: &[f64], scale: f64, bits: u32) -> Result<Vec<PoTCode>> {
    if !(1..=8).contains(&bits) {
        return Err(Error::Config(format!(
            "power-of-two bit width {bits} outside [1, 8]"
        )));
    }
    let p_min = min_exponent(bits);
    Ok(w.iter()
        .map(|&x| {
            if x == 0.0 {
                return PoTCode {
                    sign: 1,
                    exponent: p_min,
                };
            }
            let p = round_half_even((x.abs() / scale).log2()).clamp(p_min as f64, 0.0) as i32;
            PoTCode {
                sign: if x < 0.0 { -1 } else { 1 },
                exponent: p,
            }
        })
        .collect())
}

/// Every representable value, ascending.
pub fn pot_codebook(scale: f64, bits: u32) -> Vec<f64> {
    let mut v: Vec<f64> = (min_exponent(bits)..=0)
        .flat_map(|p| {
            [1i8, -1].map(|s| {
                PoTCode {
                    sign: s,
                    exponent: p,
                }
                .value(scale)
            })
        })
        .collect();
    v.sort_by(f64::total_cmp);
    v
}
