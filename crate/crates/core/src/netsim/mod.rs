//! Slotted fluid simulator of a multi-hop wireless network running installed stacks.

pub mod binding;
pub mod channel;
pub mod metrics;
pub mod scenario;
pub mod world;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use binding::{bind, Binding, Topology};
pub use channel::{db_to_mw, ChannelModel, LinkGeometry};
pub use metrics::{MetricsLog, SlotRecord, CSV_HEADER, STEADY_FRACTION};
pub use scenario::Scenario;
pub use world::{compare, run, CompareRow, RunOptions, World};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetsimError {
    #[error("scenario format: {0}")]
    Format(String),
    #[error("scenario topology: {0}")]
    Topology(String),
    #[error("program incompatible with scenario: {0}")]
    IncompatibleProgram(String),
    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),
    #[error("invariant violated at slot {slot}: {message}")]
    Invariant { slot: u64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scheme {
    WnosTP,
    WnosT,
    WnosP,
    NoControl,
    BestResponse,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::WnosTP,
        Scheme::WnosT,
        Scheme::WnosP,
        Scheme::NoControl,
        Scheme::BestResponse,
    ];

    pub fn controls_rate(self) -> bool {
        matches!(self, Scheme::WnosTP | Scheme::WnosT)
    }

    pub fn controls_power(self) -> bool {
        matches!(self, Scheme::WnosTP | Scheme::WnosP)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::WnosTP => "WNOS-T-P",
            Scheme::WnosT => "WNOS-T",
            Scheme::WnosP => "WNOS-P",
            Scheme::NoControl => "NoControl",
            Scheme::BestResponse => "BestResponse",
        })
    }
}

impl FromStr for Scheme {
    type Err = NetsimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace(['-', '_'], "");
        Ok(match norm.as_str() {
            "wnostp" => Scheme::WnosTP,
            "wnost" => Scheme::WnosT,
            "wnosp" => Scheme::WnosP,
            "nocontrol" => Scheme::NoControl,
            "bestresponse" => Scheme::BestResponse,
            _ => return Err(NetsimError::UnknownScheme(s.to_string())),
        })
    }
}
