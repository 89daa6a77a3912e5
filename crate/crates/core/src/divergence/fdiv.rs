use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Convex generator `f` with `f(1) = 0` defining an f-divergence
/// `D_f(P || Q) = E_Q[f(dP/dQ)]`.
///
/// Every generator here is normalized so that `f'(1) = 0`; this leaves the
/// divergence between proper densities unchanged and keeps plug-in estimates
/// built from unnormalized ratio estimates non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FDivergence {
    /// `f(t) = t ln t - t + 1`.
    #[default]
    KullbackLeibler,
    /// `f(t) = (t - 1)^2`.
    ChiSquared,
    /// `f(t) = t ln t - (1 + t) ln((1 + t) / 2)`.
    JensenShannon,
}

impl FDivergence {
    pub fn f(self, t: f64) -> f64 {
        if t <= 0.0 {
            return self.f_at_zero();
        }
        match self {
            FDivergence::KullbackLeibler => t * t.ln() - t + 1.0,
            FDivergence::ChiSquared => (t - 1.0) * (t - 1.0),
            FDivergence::JensenShannon => t * t.ln() - (1.0 + t) * ((1.0 + t) / 2.0).ln(),
        }
    }

    /// Derivative on `(0, inf)`.
    pub fn f_prime(self, t: f64) -> f64 {
        match self {
            FDivergence::KullbackLeibler => t.ln(),
            FDivergence::ChiSquared => 2.0 * (t - 1.0),
            FDivergence::JensenShannon => (2.0 * t / (1.0 + t)).ln(),
        }
    }

    /// `lim_{t -> 0+} f(t)`.
    pub fn f_at_zero(self) -> f64 {
        match self {
            FDivergence::KullbackLeibler => 1.0,
            FDivergence::ChiSquared => 1.0,
            FDivergence::JensenShannon => std::f64::consts::LN_2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FDivergence::KullbackLeibler => "kl",
            FDivergence::ChiSquared => "chi2",
            FDivergence::JensenShannon => "js",
        }
    }
}

impl fmt::Display for FDivergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FDivergence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "kl" | "kullback_leibler" => Ok(FDivergence::KullbackLeibler),
            "chi2" | "chi_squared" => Ok(FDivergence::ChiSquared),
            "js" | "jensen_shannon" => Ok(FDivergence::JensenShannon),
            other => Err(Error::InvalidConfig(format!("unknown f-divergence `{other}`"))),
        }
    }
}
