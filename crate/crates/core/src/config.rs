//! Run parameters and the tolerance table shared by the verification suites.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GridFamily;

/// Tolerances used by the verification suites. Every field can be overridden
/// by name with `key=value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Smallest admissible eigenvalue of an effect.
    pub psd_floor: f64,
    pub sum_to_identity: f64,
    pub covariance: f64,
    pub margin: f64,
    pub g_margin: f64,
    pub w_vacuum: f64,
    pub w_column: f64,
    pub v_equals_uw: f64,
    pub swap: f64,
    pub closed_form: f64,
    pub homodyne_identity: f64,
    pub modified_scheme: f64,
    pub path_gap: f64,
    pub joint_margin: f64,
    pub lemma_nonscalar: f64,
    pub lemma_scalar: f64,
    pub dilation: f64,
    pub instrument: f64,
    pub choi_floor: f64,
    pub normalization: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            psd_floor: 1e-10,
            sum_to_identity: 1e-8,
            covariance: 1e-10,
            margin: 1e-9,
            g_margin: 1e-8,
            w_vacuum: 1e-10,
            w_column: 1e-9,
            v_equals_uw: 1e-5,
            swap: 1e-10,
            closed_form: 1e-7,
            homodyne_identity: 1e-6,
            modified_scheme: 2e-4,
            path_gap: 1e-4,
            joint_margin: 1e-9,
            lemma_nonscalar: 1e-6,
            lemma_scalar: 1e-13,
            dilation: 1e-8,
            instrument: 1e-9,
            choi_floor: 1e-8,
            normalization: 1e-6,
        }
    }
}

impl Tolerances {
    /// Apply one `key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, val) = spec
            .split_once('=')
            .ok_or_else(|| Error::OutOfRange(format!("tolerance override `{spec}` is not key=value")))?;
        let v: f64 = val
            .trim()
            .parse()
            .map_err(|_| Error::OutOfRange(format!("tolerance `{key}` has non-numeric value `{val}`")))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::OutOfRange(format!("tolerance `{key}` must be finite and non-negative")));
        }
        let mut map = match serde_json::to_value(*self) {
            Ok(serde_json::Value::Object(m)) => m,
            _ => unreachable!("tolerances serialize to an object"),
        };
        let key = key.trim();
        if !map.contains_key(key) {
            return Err(Error::OutOfRange(format!("unknown tolerance `{key}`")));
        }
        map.insert(key.to_string(), serde_json::json!(v));
        *self = serde_json::from_value(serde_json::Value::Object(map))
            .map_err(|e| Error::OutOfRange(e.to_string()))?;
        Ok(())
    }

    pub fn keys() -> Vec<String> {
        match serde_json::to_value(Tolerances::default()) {
            Ok(serde_json::Value::Object(m)) => m.keys().cloned().collect(),
            _ => Vec::new(),
        }
    }
}

/// Truncation, quadrature and binning parameters for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dim: usize,
    pub quad_order: usize,
    pub quad_family: GridFamily,
    pub bins: usize,
    pub seed: u64,
    pub tolerances: Tolerances,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dim: crate::fock::DEFAULT_DIM,
            quad_order: 96,
            quad_family: GridFamily::Radial,
            bins: 64,
            seed: 0,
            tolerances: Tolerances::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 4 {
            return Err(Error::OutOfRange(format!("dimension {} below 4", self.dim)));
        }
        if self.bins < 4 {
            return Err(Error::OutOfRange(format!("{} angle bins, need at least 4", self.bins)));
        }
        if self.quad_order < 2 {
            return Err(Error::QuadratureOrder { order: self.quad_order, required: 2 });
        }
        Ok(())
    }

    /// Coupling computations need `Q >= 2d`.
    pub fn validate_coupling(&self) -> Result<()> {
        self.validate()?;
        if self.quad_order < 2 * self.dim {
            return Err(Error::QuadratureOrder { order: self.quad_order, required: 2 * self.dim });
        }
        Ok(())
    }
}
