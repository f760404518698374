use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Web,
    Mobile,
}

/// Whether entities are counted as-is or collapsed onto their ultimate parent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Subsidiary,
    Parent,
}

/// Which column a market share is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weight {
    /// Integration share: prevalence over total prevalence.
    Ish,
    /// Prominence-weighted integration share: prominence over total prominence.
    Prowish,
}

/// Audience weight attached to a first party of a given rank.
///
/// `Reciprocal` (1/rank) is the standard prominence weight. `Zipf(s)` uses
/// rank^-s and is only a hook for sensitivity analysis; `Zipf(1.0)` equals
/// `Reciprocal`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RankWeight {
    #[default]
    Reciprocal,
    Zipf(f64),
}

impl RankWeight {
    pub fn weight(self, rank: u32) -> f64 {
        match self {
            RankWeight::Reciprocal => 1.0 / f64::from(rank),
            RankWeight::Zipf(s) => f64::from(rank).powf(-s),
        }
    }
}

macro_rules! str_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($ty::$variant => $name),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Error> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($name => Ok($ty::$variant),)+
                    other => Err(Error::Parameter(format!(
                        concat!("unknown ", stringify!($ty), " {:?}"),
                        other
                    ))),
                }
            }
        }
    };
}

str_enum!(Platform { Web => "web", Mobile => "mobile" });
str_enum!(Level { Subsidiary => "subsidiary", Parent => "parent" });
str_enum!(Weight { Ish => "ish", Prowish => "prowish" });
