//! JSON document holding a spectrum and a target decomposition.
//!
//! ```json
//! {
//!   "eigenvalues": [5.0000000000000000e-1, ...],
//!   "degeneracies": [1, ...],
//!   "weights_sq": [1.0000000000000000e0, ...],
//!   "noise_var": 0.0000000000000000e0,
//!   "unlearnable_power": 0.0000000000000000e0
//! }
//! ```
//!
//! Reals are written with 17 significant digits so every double survives a
//! round trip. `degeneracies` defaults to all ones and `unlearnable_power`
//! to zero. Multi-channel targets additionally carry a `channels` array with
//! per-channel `weights_sq` and `unlearnable_power`; the top-level weights
//! are then the channel sums.

use std::io::Write;
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::output::write_atomic;
use crate::spectral::{Spectrum, TargetDecomposition};

fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn real<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if !x.is_finite() {
        return Err(serde::ser::Error::custom(format!("cannot write non-finite value {x}")));
    }
    RawValue::from_string(fmt_real(*x))
        .map_err(serde::ser::Error::custom)?
        .serialize(s)
}

fn reals<S: Serializer>(xs: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    if let Some(bad) = xs.iter().find(|x| !x.is_finite()) {
        return Err(serde::ser::Error::custom(format!("cannot write non-finite value {bad}")));
    }
    let body: Vec<String> = xs.iter().map(|x| fmt_real(*x)).collect();
    RawValue::from_string(format!("[{}]", body.join(", ")))
        .map_err(serde::ser::Error::custom)?
        .serialize(s)
}

/// Weights of one label channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDocument {
    #[serde(serialize_with = "reals")]
    pub weights_sq: Vec<f64>,
    #[serde(default, serialize_with = "real")]
    pub unlearnable_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumDocument {
    #[serde(serialize_with = "reals")]
    pub eigenvalues: Vec<f64>,
    #[serde(default)]
    pub degeneracies: Vec<u64>,
    #[serde(serialize_with = "reals")]
    pub weights_sq: Vec<f64>,
    #[serde(default, serialize_with = "real")]
    pub noise_var: f64,
    #[serde(default, serialize_with = "real")]
    pub unlearnable_power: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub channels: Vec<ChannelDocument>,
}

impl SpectrumDocument {
    pub fn new(spectrum: &Spectrum, target: &TargetDecomposition) -> Result<Self> {
        target.check_paired(spectrum)?;
        Ok(Self {
            eigenvalues: spectrum.eigenvalues().to_vec(),
            degeneracies: spectrum.degeneracies().to_vec(),
            weights_sq: target.weights_sq.clone(),
            noise_var: target.noise_var,
            unlearnable_power: target.unlearnable_power,
            channels: Vec::new(),
        })
    }

    /// Document for several label channels over one spectrum.
    pub fn multichannel(spectrum: &Spectrum, channels: &[TargetDecomposition]) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::Invalid("no label channels".into()))?;
        let mut weights = vec![0.0; spectrum.len()];
        let mut unlearnable = 0.0;
        let mut docs = Vec::with_capacity(channels.len());
        for t in channels {
            t.check_paired(spectrum)?;
            for (acc, w) in weights.iter_mut().zip(&t.weights_sq) {
                *acc += w;
            }
            unlearnable += t.unlearnable_power;
            docs.push(ChannelDocument {
                weights_sq: t.weights_sq.clone(),
                unlearnable_power: t.unlearnable_power,
            });
        }
        Ok(Self {
            eigenvalues: spectrum.eigenvalues().to_vec(),
            degeneracies: spectrum.degeneracies().to_vec(),
            weights_sq: weights,
            noise_var: first.noise_var,
            unlearnable_power: unlearnable,
            channels: if channels.len() > 1 { docs } else { Vec::new() },
        })
    }

    pub fn spectrum(&self) -> Result<Spectrum> {
        let degeneracies = if self.degeneracies.is_empty() {
            vec![1; self.eigenvalues.len()]
        } else {
            self.degeneracies.clone()
        };
        Spectrum::new(self.eigenvalues.clone(), degeneracies)
    }

    /// Combined target over all channels.
    pub fn target(&self) -> Result<TargetDecomposition> {
        TargetDecomposition::new(self.weights_sq.clone(), self.noise_var, self.unlearnable_power)
    }

    /// One target per channel; a single-channel document yields one entry.
    pub fn channel_targets(&self) -> Result<Vec<TargetDecomposition>> {
        if self.channels.is_empty() {
            return Ok(vec![self.target()?]);
        }
        self.channels
            .iter()
            .map(|c| TargetDecomposition::new(c.weights_sq.clone(), self.noise_var, c.unlearnable_power))
            .collect()
    }

    /// Parses and validates a document.
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        let n = doc.eigenvalues.len();
        if !doc.degeneracies.is_empty() && doc.degeneracies.len() != n {
            return Err(serde_json::Error::custom("degeneracies and eigenvalues differ in length"));
        }
        if doc.weights_sq.len() != n || doc.channels.iter().any(|c| c.weights_sq.len() != n) {
            return Err(serde_json::Error::custom("weights_sq and eigenvalues differ in length"));
        }
        Ok(doc)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc = Self::from_json(&text).map_err(|e| Error::parse(path, e))?;
        doc.spectrum().and_then(|s| doc.target()?.check_paired(&s)).map_err(|e| Error::parse(path, e))?;
        Ok(doc)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        write_atomic(path, |w| {
            w.write_all(text.as_bytes())?;
            w.write_all(b"\n")
        })
    }
}
