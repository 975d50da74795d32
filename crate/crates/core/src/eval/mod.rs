//! Three-way method comparison, significance testing and report output.

pub mod report;
pub mod variants;
pub mod wilcoxon;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use report::{build_report, emit_report, MatchReport, ReportError};
pub use variants::{run_variants, MatchRow};
pub use wilcoxon::{wilcoxon_signed_rank, wilcoxon_with, PValueMethod, WilcoxonError, WilcoxonResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodVariant {
    /// Unwrap only.
    Original,
    /// Unwrap, then adaptive histogram equalization.
    Ahe,
    /// Rotate to the canonical lumen orientation, unwrap, equalize.
    AheRotated,
}

impl MethodVariant {
    pub const ALL: [MethodVariant; 3] = [MethodVariant::Original, MethodVariant::Ahe, MethodVariant::AheRotated];

    pub fn name(self) -> &'static str {
        match self {
            MethodVariant::Original => "original",
            MethodVariant::Ahe => "ahe",
            MethodVariant::AheRotated => "ahe_rotated",
        }
    }

    pub fn rotates(self) -> bool {
        self == MethodVariant::AheRotated
    }

    pub fn enhances(self) -> bool {
        self != MethodVariant::Original
    }
}

impl fmt::Display for MethodVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MethodVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant {s:?} (expected original, ahe or ahe_rotated)"))
    }
}
