//! JSON policy files.
//!
//! ```json
//! {"class": "multi", "n_states": 2, "r_max": 0, "thresholds": ["never", 3, 4, "never"]}
//! {"class": "single", "threshold": 8}
//! {"class": "mixture", "rho": 0.4, "minus": {...}, "plus": {...}}
//! {"class": "periodic", "period": 10}
//! ```
//!
//! Multi-threshold tables are stored in `(s, w, r)`-major order.

use serde::{Deserialize, Serialize};

use super::{
    MultiThresholdPolicy, PeriodicPolicy, RandomizedMixturePolicy, SingleThresholdPolicy,
    Threshold, ThresholdPolicy,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "lowercase")]
pub enum PolicyFile {
    Multi {
        n_states: usize,
        r_max: u32,
        thresholds: Vec<Threshold>,
    },
    Single {
        threshold: Threshold,
    },
    Mixture {
        rho: f64,
        minus: Box<PolicyFile>,
        plus: Box<PolicyFile>,
    },
    Periodic {
        period: u64,
    },
}

impl From<&ThresholdPolicy> for PolicyFile {
    fn from(p: &ThresholdPolicy) -> Self {
        match p {
            ThresholdPolicy::Multi(m) => PolicyFile::Multi {
                n_states: m.n_states(),
                r_max: m.r_max(),
                thresholds: m.table().to_vec(),
            },
            ThresholdPolicy::Single(s) => PolicyFile::Single {
                threshold: s.threshold,
            },
        }
    }
}

impl From<&RandomizedMixturePolicy> for PolicyFile {
    fn from(m: &RandomizedMixturePolicy) -> Self {
        PolicyFile::Mixture {
            rho: m.rho(),
            minus: Box::new((&m.minus).into()),
            plus: Box::new((&m.plus).into()),
        }
    }
}

impl From<&PeriodicPolicy> for PolicyFile {
    fn from(p: &PeriodicPolicy) -> Self {
        PolicyFile::Periodic { period: p.period() }
    }
}

impl PolicyFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("policy file: {e}")))
    }

    pub fn class(&self) -> &'static str {
        match self {
            PolicyFile::Multi { .. } => "multi",
            PolicyFile::Single { .. } => "single",
            PolicyFile::Mixture { .. } => "mixture",
            PolicyFile::Periodic { .. } => "periodic",
        }
    }

    pub fn to_threshold(&self) -> Result<ThresholdPolicy> {
        match self {
            PolicyFile::Multi {
                n_states,
                r_max,
                thresholds,
            } => Ok(ThresholdPolicy::Multi(MultiThresholdPolicy::from_table(
                *n_states,
                *r_max,
                thresholds.clone(),
            )?)),
            PolicyFile::Single { threshold } => match threshold {
                Threshold::At(n) => Ok(ThresholdPolicy::Single(SingleThresholdPolicy::new(*n)?)),
                Threshold::Never => Ok(ThresholdPolicy::Single(SingleThresholdPolicy::never())),
            },
            other => Err(Error::InvalidInput(format!(
                "expected a threshold policy, found class {}",
                other.class()
            ))),
        }
    }

    pub fn to_mixture(&self) -> Result<RandomizedMixturePolicy> {
        match self {
            PolicyFile::Mixture { rho, minus, plus } => {
                RandomizedMixturePolicy::new(minus.to_threshold()?, plus.to_threshold()?, *rho)
            }
            other => Err(Error::InvalidInput(format!(
                "expected a mixture policy, found class {}",
                other.class()
            ))),
        }
    }

    pub fn to_periodic(&self) -> Result<PeriodicPolicy> {
        match self {
            PolicyFile::Periodic { period } => PeriodicPolicy::new(*period),
            other => Err(Error::InvalidInput(format!(
                "expected a periodic policy, found class {}",
                other.class()
            ))),
        }
    }
}
