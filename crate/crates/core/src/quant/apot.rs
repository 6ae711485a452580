use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Storage width of an APoT weight.
pub const APOT_BITS: u32 = 5;
/// Exponents of the coarse term.
pub const APOT_P1: [i32; 4] = [0, -1, -2, -3];
/// Exponents of the fine term.
pub const APOT_P2: [i32; 4] = [-4, -5, -6, -7];
/// Smallest exponent in either range; the fixed-point shift of shift-add products.
pub const APOT_P_MIN: i32 = -7;
/// Largest codebook magnitude in units of the scale, `2^0 + 2^-4`.
pub const APOT_MAX_UNITS: f64 = 1.0625;

/// `s · S · (2^p1 + 2^p2)`, or exactly zero when `zero_flag` is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct APoTCode {
    pub sign: i8,
    pub p1: i8,
    pub p2: i8,
    pub zero_flag: bool,
}

impl APoTCode {
    pub const ZERO: APoTCode = APoTCode {
        sign: 1,
        p1: 0,
        p2: -4,
        zero_flag: true,
    };

    /// Magnitude in units of the scale.
    pub fn units(&self) -> f64 {
        if self.zero_flag {
            0.0
        } else {
            2f64.powi(self.p1 as i32) + 2f64.powi(self.p2 as i32)
        }
    }

    pub fn value(&self, scale: f64) -> f64 {
        self.sign as f64 * scale * self.units()
    }

    /// Signed magnitude in units of `2^APOT_P_MIN`, an exact integer.
    pub fn fixed_units(&self) -> i32 {
        if self.zero_flag {
            0
        } else {
            self.sign as i32
                * ((1 << (self.p1 as i32 - APOT_P_MIN)) + (1 << (self.p2 as i32 - APOT_P_MIN)))
        }
    }
}

/// Code table layout recorded in plan files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApotLayout {
    pub bits: u32,
    pub p1: Vec<i32>,
    pub p2: Vec<i32>,
    pub zero_code: bool,
    pub codebook_size: usize,
}

impl Default for ApotLayout {
    fn default() -> Self {
        ApotLayout {
            bits: APOT_BITS,
            p1: APOT_P1.to_vec(),
            p2: APOT_P2.to_vec(),
            zero_code: true,
            codebook_size: apot_codebook().len(),
        }
    }
}

/// All 33 codes ordered by value.
pub fn apot_codebook() -> Vec<APoTCode> {
    let mut v = vec![APoTCode::ZERO];
    for sign in [1i8, -1] {
        for p1 in APOT_P1 {
            for p2 in APOT_P2 {
                v.push(APoTCode {
                    sign,
                    p1: p1 as i8,
                    p2: p2 as i8,
                    zero_flag: false,
                });
            }
        }
    }
    v.sort_by(|a, b| a.value(1.0).total_cmp(&b.value(1.0)));
    v
}

/// Non-negative magnitudes (zero included) ascending, with their exponents.
fn magnitudes() -> &'static [(f64, i8, i8)] {
    use std::sync::OnceLock;
    static TABLE: OnceLock<Vec<(f64, i8, i8)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = vec![(0.0, 0, 0)];
        for p1 in APOT_P1 {
            for p2 in APOT_P2 {
                t.push((2f64.powi(p1) + 2f64.powi(p2), p1 as i8, p2 as i8));
            }
        }
        t.sort_by(|a, b| a.0.total_cmp(&b.0));
        t
    })
}

/// Scale that maps the largest weight magnitude onto the top code.
pub fn apot_scale(w: &[f64]) -> Result<f64> {
    let m = w.iter().fold(0f64, |m, x| m.max(x.abs()));
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::DegenerateFilter(
            "APoT quantization needs a filter with a nonzero weight",
        ));
    }
    Ok(m / APOT_MAX_UNITS)
}

/// APoT codes of one filter with their shared scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApotFilter {
    pub scale: f64,
    pub codes: Vec<APoTCode>,
}

impl ApotFilter {
    pub fn dequantize(&self) -> Vec<f64> {
        self.codes.iter().map(|c| c.value(self.scale)).collect()
    }
}

pub fn quantize_apot(w: &[f64], bits: u32) -> Result<ApotFilter> {
    if bits != APOT_BITS {
        return Err(Error::Config(format!(
            "APoT codes are {APOT_BITS} bits wide, got {bits}"
        )));
    }
    let scale = apot_scale(w)?;
    Ok(ApotFilter {
        scale,
        codes: quantize_apot_with_scale(w, scale),
    })
}

/// Nearest codebook entry per weight; ties go to the smaller magnitude and
/// values beyond the top code saturate.
pub fn quantize_apot_with_scale(w: &[f64], scale: f64) -> Vec<APoTCode> {
    w.iter().map(|&x| nearest(x, scale)).collect()
}

#[inline]
fn nearest(x: f64, scale: f64) -> APoTCode {
    let u = x.abs() / scale;
    let table = magnitudes();
    let mut best = 0;
    let mut best_err = u;
    for (i, &(m, _, _)) in table.iter().enumerate().skip(1) {
        let err = (u - m).abs();
        if err < best_err {
            best = i;
            best_err = err;
        } else if m > u {
            break;
        }
    }
    if best == 0 {
        return APoTCode::ZERO;
    }
    let (_, p1, p2) = table[best];
    APoTCode {
        sign: if x < 0.0 { -1 } else { 1 },
        p1,
        p2,
        zero_flag: false,
    }
}
