use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Power figures (mW) of the synthesized units at the reference clock.
const P_MUL_MERGED_MW: f64 = 2.54e-2;
const P_SHIFT_UNIT_MW: f64 = 1.06e-2;
const P_BUF_4BIT_MW: f64 = 11.8784;
const REFERENCE_HZ: f64 = 5e8;
/// Single-mode multiplier lanes of the reference instance, `3·3·16·16`,
/// which the 4-bit weight buffer feeds every cycle.
const REFERENCE_LANES: f64 = 2304.0;

/// Energy per operation / access in joules (relative units).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitEnergyTable {
    /// One 8×8-bit product (merged mode).
    pub e_mul_8x8: f64,
    /// One 4×8-bit product (single mode).
    pub e_mul_4x8: f64,
    /// One shifter-unit operation: two shifts and an add.
    pub e_shift_unit: f64,
    pub e_buf_4bit: f64,
    pub e_buf_8bit: f64,
    pub e_buf_apot: f64,
    pub e_act_buf: f64,
}

impl Default for UnitEnergyTable {
    /// Unit power divided by the clock. Buffer power is spread over the lanes
    /// it serves, and access energy scales with the word width.
    fn default() -> Self {
        let e_mul_8x8 = P_MUL_MERGED_MW * 1e-3 / REFERENCE_HZ;
        let e_bit = P_BUF_4BIT_MW * 1e-3 / REFERENCE_HZ / REFERENCE_LANES / 4.0;
        UnitEnergyTable {
            e_mul_8x8,
            e_mul_4x8: e_mul_8x8 / 2.0,
            e_shift_unit: P_SHIFT_UNIT_MW * 1e-3 / REFERENCE_HZ,
            e_buf_4bit: 4.0 * e_bit,
            e_buf_8bit: 8.0 * e_bit,
            e_buf_apot: crate::quant::APOT_BITS as f64 * e_bit,
            e_act_buf: 8.0 * e_bit,
        }
    }
}

impl UnitEnergyTable {
    /// Weight-buffer access energy for a uniform word of `bits`.
    pub fn weight_access(&self, bits: u32) -> f64 {
        match bits {
            4 => self.e_buf_4bit,
            8 => self.e_buf_8bit,
            b => self.e_buf_8bit * b as f64 / 8.0,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        UnitEnergyTable {
            e_mul_8x8: self.e_mul_8x8 * k,
            e_mul_4x8: self.e_mul_4x8 * k,
            e_shift_unit: self.e_shift_unit * k,
            e_buf_4bit: self.e_buf_4bit * k,
            e_buf_8bit: self.e_buf_8bit * k,
            e_buf_apot: self.e_buf_apot * k,
            e_act_buf: self.e_act_buf * k,
        }
    }

    fn values(&self) -> [(&'static str, f64); 7] {
        [
            ("e_mul_8x8", self.e_mul_8x8),
            ("e_mul_4x8", self.e_mul_4x8),
            ("e_shift_unit", self.e_shift_unit),
            ("e_buf_4bit", self.e_buf_4bit),
            ("e_buf_8bit", self.e_buf_8bit),
            ("e_buf_apot", self.e_buf_apot),
            ("e_act_buf", self.e_act_buf),
        ]
    }
}

/// Accelerator instance: per core an MPMA of `T` tiles × `M` blocks × `R`
/// multipliers and a SAT of `S_tiles` tiles × `N` shifter units; `L` cores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardwareConfig {
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "S_tiles")]
    pub s_tiles: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub frequency_hz: f64,
    #[serde(default)]
    pub unit_energy: UnitEnergyTable,
}

impl Default for HardwareConfig {
    fn default() -> Self {
        HardwareConfig {
            r: 3,
            m: 3,
            t: 16,
            n: 9,
            s_tiles: 8,
            l: 16,
            frequency_hz: REFERENCE_HZ,
            unit_energy: Default::default(),
        }
    }
}

impl HardwareConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("R", self.r),
            ("M", self.m),
            ("T", self.t),
            ("N", self.n),
            ("S_tiles", self.s_tiles),
            ("L", self.l),
        ] {
            if v == 0 {
                return Err(Error::Config(format!(
                    "hardware parameter {name} must be positive"
                )));
            }
        }
        if !self.t.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "T = {} must be even: merged mode pairs adjacent tiles",
                self.t
            )));
        }
        if !(self.frequency_hz.is_finite() && self.frequency_hz > 0.0) {
            return Err(Error::Config(format!(
                "frequency {} must be positive",
                self.frequency_hz
            )));
        }
        for (name, v) in self.unit_energy.values() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "unit energy {name} = {v} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }

    /// Multiplier lanes in merged (8×8) mode per core.
    pub fn merged_lanes(&self) -> usize {
        self.r * self.m * (self.t / 2)
    }

    /// Shifter units per core.
    pub fn sat_lanes(&self) -> usize {
        self.n * self.s_tiles
    }

    /// Peak ops/s with both engines busy on every core (2 ops per MAC).
    pub fn peak_ops(&self) -> f64 {
        (self.merged_lanes() + self.sat_lanes()) as f64 * self.l as f64 * 2.0 * self.frequency_hz
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|source| Error::Parse {
            context: context.to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
