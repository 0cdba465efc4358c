use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The three change-detection networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchitectureKind {
    /// Early fusion: both images are stacked channel-wise into one encoder.
    #[serde(rename = "fc-ef")]
    FcEf,
    /// Siamese encoders; skips carry both streams' features side by side.
    #[serde(rename = "fc-siam-conc")]
    FcSiamConc,
    /// Siamese encoders; skips carry the absolute difference of the streams.
    #[serde(rename = "fc-siam-diff")]
    FcSiamDiff,
}

impl ArchitectureKind {
    pub const ALL: [ArchitectureKind; 3] = [
        ArchitectureKind::FcEf,
        ArchitectureKind::FcSiamConc,
        ArchitectureKind::FcSiamDiff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchitectureKind::FcEf => "fc-ef",
            ArchitectureKind::FcSiamConc => "fc-siam-conc",
            ArchitectureKind::FcSiamDiff => "fc-siam-diff",
        }
    }

    pub fn is_siamese(self) -> bool {
        !matches!(self, ArchitectureKind::FcEf)
    }

    /// Channel multiplier of a fused skip relative to one stream.
    pub(crate) fn skip_factor(self) -> usize {
        match self {
            ArchitectureKind::FcSiamConc => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchitectureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ArchitectureKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown architecture {s:?} (expected fc-ef, fc-siam-conc or fc-siam-diff)"
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in ArchitectureKind::ALL {
            assert_eq!(k.name().parse::<ArchitectureKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
        assert!("fc-siam".parse::<ArchitectureKind>().is_err());
    }
}
