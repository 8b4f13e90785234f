use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Model hyperparameters.
///
/// `alpha` weights the transition walk against restarts, `beta` mixes a
/// self-loop into the teleportation matrix, `lambda` is the ridge strength
/// shared by both solves, `xi` caps the teleportation diagonal (0 removes
/// self-similarity entirely, infinity disables the cap), and the two deltas
/// are the exponential position-decay scales for training and inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    #[serde(with = "xi_serde")]
    pub xi: f64,
    pub delta_pos: f64,
    pub delta_inf: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Profile::Yoochoose.params()
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !self.alpha.is_finite() {
            return Err(Error::config(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) || !self.beta.is_finite() {
            return Err(Error::config(format!(
                "beta must be in [0, 1], got {}",
                self.beta
            )));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.xi.is_nan() || self.xi < 0.0 {
            return Err(Error::config(format!(
                "xi must be non-negative (or inf), got {}",
                self.xi
            )));
        }
        if !(self.delta_pos > 0.0) {
            return Err(Error::config(format!(
                "delta_pos must be positive, got {}",
                self.delta_pos
            )));
        }
        if !(self.delta_inf > 0.0) {
            return Err(Error::config(format!(
                "delta_inf must be positive, got {}",
                self.delta_inf
            )));
        }
        Ok(())
    }
}

/// Tuned presets for the public benchmark families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// YooChoose 1/4 and 1/64 slices, and its five-fold protocol.
    Yoochoose,
    /// Diginetica, single split.
    Diginetica,
    /// Diginetica, five-fold protocol.
    DigineticaFolds,
    /// RetailRocket.
    RetailRocket,
    /// NowPlaying.
    NowPlaying,
}

impl Profile {
    pub fn params(self) -> HyperParams {
        // (alpha, beta, lambda, delta_pos, delta_inf) per dataset family;
        // xi stays 0 everywhere.
        let (alpha, beta, lambda, delta_pos, delta_inf) = match self {
            Profile::Yoochoose => (0.5, 0.7, 10.0, 1.0, 1.0),
            Profile::Diginetica => (0.5, 0.9, 10.0, 0.5, 2.0),
            Profile::DigineticaFolds => (0.7, 0.7, 10.0, 0.5, 4.0),
            Profile::RetailRocket => (0.5, 0.9, 10.0, 0.25, 4.0),
            Profile::NowPlaying => (0.5, 0.9, 10.0, 1.0, 1.0),
        };
        HyperParams {
            alpha,
            beta,
            lambda,
            xi: 0.0,
            delta_pos,
            delta_inf,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "yoochoose" | "yc" => Ok(Profile::Yoochoose),
            "diginetica" | "digi" => Ok(Profile::Diginetica),
            "diginetica-folds" | "digi-folds" => Ok(Profile::DigineticaFolds),
            "retailrocket" | "rr" => Ok(Profile::RetailRocket),
            "nowplaying" | "now" => Ok(Profile::NowPlaying),
            other => Err(Error::config(format!(
                "unknown profile '{other}' (expected yoochoose, diginetica, \
                 diginetica-folds, retailrocket, or nowplaying)"
            ))),
        }
    }
}

/// JSON has no literal for infinity, so `xi` serializes as a number when
/// finite and as the string "inf" otherwise.
mod xi_serde {
    use serde::de::{self, Deserializer, Unexpected};
    use serde::ser::Serializer;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str("inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        struct XiVisitor;
        impl de::Visitor<'_> for XiVisitor {
            type Value = f64;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a non-negative number or \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
                Ok(v)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
                Ok(v as f64)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
                Ok(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
                match v {
                    "inf" | "infinity" | "Inf" | "Infinity" => Ok(f64::INFINITY),
                    _ => Err(E::invalid_value(Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(XiVisitor)
    }
}

/// Parse a CLI-facing xi value: a number or "inf".
pub fn parse_xi(s: &str) -> Result<f64> {
    match s {
        "inf" | "infinity" => Ok(f64::INFINITY),
        _ => s
            .parse::<f64>()
            .map_err(|_| Error::config(format!("xi must be a number or 'inf', got '{s}'"))),
    }
}
