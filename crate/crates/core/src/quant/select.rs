use serde::{Deserialize, Serialize};

use super::{calibrate_affine, quantize_apot, Granularity, SchemeChoice, ACT_BITS, APOT_BITS};
use crate::error::{Error, Result};

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// The filter after an 8-bit filter-wise uniform round trip.
pub fn uniform8_roundtrip(filter: &[f64]) -> Result<Vec<f64>> {
    let p = calibrate_affine([filter], ACT_BITS, Granularity::PerFilter)?;
    Ok(filter
        .iter()
        .map(|&x| p.dequantize(p.quantize(x)))
        .collect())
}

/// Quantization error of both candidate schemes for one filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeErrors {
    pub uniform: f64,
    /// Zero for an all-zero filter, which the zero code represents exactly.
    pub apot: f64,
}

impl SchemeErrors {
    /// Ties go to the uniform scheme.
    pub fn choice(&self) -> SchemeChoice {
        if self.apot < self.uniform {
            SchemeChoice::APoT
        } else {
            SchemeChoice::Uniform8
        }
    }

    /// Error reduction from switching to APoT; the ranking key of the mixed assignment.
    pub fn gain(&self) -> f64 {
        self.uniform - self.apot
    }
}

pub fn scheme_errors(filter: &[f64]) -> Result<SchemeErrors> {
    if filter.is_empty() {
        return Err(Error::Config(
            "cannot select a scheme for an empty filter".into(),
        ));
    }
    let uniform = mse(filter, &uniform8_roundtrip(filter)?);
    let apot = match quantize_apot(filter, APOT_BITS) {
        Ok(f) => mse(filter, &f.dequantize()),
        Err(Error::DegenerateFilter(_)) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(SchemeErrors { uniform, apot })
}

/// APoT when its mean squared error is strictly below 8-bit uniform's.
pub fn select_scheme(filter: &[f64]) -> Result<SchemeChoice> {
    Ok(scheme_errors(filter)?.choice())
}
