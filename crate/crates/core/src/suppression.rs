//! Runtime suppression strength.
//!
//! The final output blends enhanced and original features,
//! `out = w * enhanced + (1 - w) * input`. `w` is either fixed or follows a
//! moving average of the noise-type head, mapped linearly through `a * f + b`
//! and clamped to [0, 1].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_A: f64 = 1.0;
pub const DEFAULT_B: f64 = 0.0;
pub const DEFAULT_BETA: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SuppressionConfig {
    /// Filtering disabled, `w = 0`.
    Off,
    Fixed { w: f64 },
    Adaptive { a: f64, b: f64, beta: f64 },
}

impl Default for SuppressionConfig {
    fn default() -> Self {
        SuppressionConfig::Adaptive {
            a: DEFAULT_A,
            b: DEFAULT_B,
            beta: DEFAULT_BETA,
        }
    }
}

impl SuppressionConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SuppressionConfig::Off => Ok(()),
            SuppressionConfig::Fixed { w } if (0.0..=1.0).contains(&w) => Ok(()),
            SuppressionConfig::Fixed { w } => {
                Err(Error::Config(format!("fixed strength {w} outside [0, 1]")))
            }
            SuppressionConfig::Adaptive { a, b, beta } => {
                if !(a > 0.0 && a.is_finite()) {
                    Err(Error::Config(format!("a must be > 0, got {a}")))
                } else if !(b >= 0.0 && b.is_finite()) {
                    Err(Error::Config(format!("b must be >= 0, got {b}")))
                } else if !(0.0..1.0).contains(&beta) {
                    Err(Error::Config(format!("beta must be in [0, 1), got {beta}")))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Strength before the first frame. Adaptive mode starts at `b`, the
    /// steady state for a zero classifier output.
    pub fn initial_strength(&self) -> f64 {
        match *self {
            SuppressionConfig::Off => 0.0,
            SuppressionConfig::Fixed { w } => w,
            SuppressionConfig::Adaptive { b, .. } => b.clamp(0.0, 1.0),
        }
    }

    /// Builds a config from `suppression.*` keys; unset keys take defaults.
    pub fn from_keys(
        mode: &str,
        w: Option<f64>,
        a: Option<f64>,
        b: Option<f64>,
        beta: Option<f64>,
    ) -> Result<Self> {
        let cfg = match mode.to_ascii_lowercase().as_str() {
            "off" => SuppressionConfig::Off,
            "fixed" => SuppressionConfig::Fixed {
                w: w.ok_or_else(|| Error::Config("fixed suppression needs suppression.w".into()))?,
            },
            "adaptive" => SuppressionConfig::Adaptive {
                a: a.unwrap_or(DEFAULT_A),
                b: b.unwrap_or(DEFAULT_B),
                beta: beta.unwrap_or(DEFAULT_BETA),
            },
            other => return Err(Error::Config(format!("unknown suppression mode '{other}'"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Accepts `off`, `fixed:W`, `adaptive` or `adaptive:A,B,BETA`.
impl std::str::FromStr for SuppressionConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (mode, args) = s.split_once(':').unwrap_or((s, ""));
        let nums = args
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad number '{p}' in '{s}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        match (mode, nums.as_slice()) {
            ("off", []) => Self::from_keys("off", None, None, None, None),
            ("fixed", [w]) => Self::from_keys("fixed", Some(*w), None, None, None),
            ("adaptive", []) => Self::from_keys("adaptive", None, None, None, None),
            ("adaptive", [a, b, beta]) => {
                Self::from_keys("adaptive", None, Some(*a), Some(*b), Some(*beta))
            }
            _ => Err(Error::Config(format!(
                "cannot parse suppression '{s}' (use off, fixed:W or adaptive[:A,B,BETA])"
            ))),
        }
    }
}

/// Maps the raw hinge-trained score onto [0, 1]; the margins -1 and +1 land
/// on 0 and 1.
pub fn f_adapt(noise_score: f64) -> f64 {
    ((noise_score + 1.0) / 2.0).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuppressionState {
    pub w_prev: f64,
}

impl SuppressionState {
    pub fn new(cfg: &SuppressionConfig) -> Self {
        SuppressionState {
            w_prev: cfg.initial_strength(),
        }
    }
}

/// One step of the moving-average recursion, clamped to [0, 1].
pub fn update_strength(state: &mut SuppressionState, f: f64, a: f64, b: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::Range(format!("classifier output {f} outside [0, 1]")));
    }
    let w = (beta * state.w_prev + (1.0 - beta) * (a * f + b)).clamp(0.0, 1.0);
    state.w_prev = w;
    Ok(w)
}

/// Strength to use for the current frame given its raw noise score.
pub fn next_strength(cfg: &SuppressionConfig, state: &mut SuppressionState, noise_score: f64) -> Result<f64> {
    match *cfg {
        SuppressionConfig::Off => {
            state.w_prev = 0.0;
            Ok(0.0)
        }
        SuppressionConfig::Fixed { w } => {
            state.w_prev = w;
            Ok(w)
        }
        SuppressionConfig::Adaptive { a, b, beta } => {
            update_strength(state, f_adapt(noise_score), a, b, beta)
        }
    }
}

/// `w * enhanced + (1 - w) * input`, cellwise.
pub fn compensate(enhanced: &[f32], input: &[f32], w: f64, out: &mut [f32]) -> Result<()> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Range(format!("suppression strength {w} outside [0, 1]")));
    }
    if enhanced.len() != input.len() || out.len() != input.len() {
        return Err(Error::Shape("compensation operands differ in width".into()));
    }
    for ((o, &e), &i) in out.iter_mut().zip(enhanced).zip(input) {
        *o = (w * e as f64 + (1.0 - w) * i as f64) as f32;
    }
    Ok(())
}
