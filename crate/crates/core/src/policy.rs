//! On-disk policy files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cascade::{CascadePolicy, StageCall, StoppingRule};
use crate::error::{Error, Result};
use crate::fan::FanPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Policy {
    Qwyc(CascadePolicy),
    Fan(FanPolicy),
}

impl Policy {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policies always serialize") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn as_cascade(&self) -> Option<&CascadePolicy> {
        match self {
            Policy::Qwyc(p) => Some(p),
            Policy::Fan(_) => None,
        }
    }
}

impl From<CascadePolicy> for Policy {
    fn from(p: CascadePolicy) -> Self {
        Policy::Qwyc(p)
    }
}

impl From<FanPolicy> for Policy {
    fn from(p: FanPolicy) -> Self {
        Policy::Fan(p)
    }
}

impl StoppingRule for Policy {
    fn order(&self) -> &[usize] {
        match self {
            Policy::Qwyc(p) => p.order(),
            Policy::Fan(p) => p.order(),
        }
    }

    fn beta(&self) -> f64 {
        match self {
            Policy::Qwyc(p) => p.beta(),
            Policy::Fan(p) => p.beta(),
        }
    }

    fn check(&self, stage: usize, partial: f64) -> StageCall {
        match self {
            Policy::Qwyc(p) => p.check(stage, partial),
            Policy::Fan(p) => p.check(stage, partial),
        }
    }
}
