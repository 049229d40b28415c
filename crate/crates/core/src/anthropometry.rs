//! Slider-interface fit bounds and the compatible hand-length range.
//!
//! All quantities are millimeters except the dimensionless ratio `r`
//! (middle-finger length over hand length). The bounds are
//!
//! ```text
//! L_max = d_max − d_curl        MFL_max = L_max + δ
//! H_min = L_min / r             H_max   = MFL_max / r
//! ```
//!
//! and a hand is compatible when `H_min ≤ H ≤ H_max` (inclusive).

use crate::keyvalue::{KeyValueError, KeyValues};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnthroError {
    #[error("invalid slider parameters: {0}")]
    InvalidParams(String),
    #[error("middle-finger ratio must be positive, got {0}")]
    NonPositiveRatio(f64),
    #[error("hand length must be positive, got {0}")]
    NonPositiveHand(f64),
    #[error(transparent)]
    Format(#[from] KeyValueError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliderParams {
    /// Minimum ring-to-fingercot distance at rest.
    pub l_min: f64,
    /// Maximum distance permitted by slider travel.
    pub d_max: f64,
    /// Free slider length needed for full flexion.
    pub d_curl: f64,
    /// Maximum ring offset above the webbing.
    pub delta: f64,
    /// Middle-finger-to-hand-length ratio.
    pub r: f64,
}

impl SliderParams {
    pub fn new(l_min: f64, d_max: f64, d_curl: f64, delta: f64, r: f64) -> Result<Self, AnthroError> {
        let p = Self {
            l_min,
            d_max,
            d_curl,
            delta,
            r,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), AnthroError> {
        let bad = |m: String| Err(AnthroError::InvalidParams(m));
        let fields = [
            ("L_min", self.l_min),
            ("d_max", self.d_max),
            ("d_curl", self.d_curl),
            ("delta", self.delta),
            ("r", self.r),
        ];
        if let Some((name, v)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return bad(format!("{name}={v} is not finite"));
        }
        // δ = 0 is admitted so that MFL_max = L_max can be expressed.
        if self.l_min <= 0.0 || self.d_max <= 0.0 || self.d_curl <= 0.0 || self.delta < 0.0 {
            return bad("lengths must be positive".into());
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return bad(format!("r={} must lie in (0, 1)", self.r));
        }
        if self.d_max <= self.d_curl {
            return bad(format!("d_max={} must exceed d_curl={}", self.d_max, self.d_curl));
        }
        if self.l_min > self.d_max - self.d_curl {
            return bad(format!(
                "L_min={} exceeds d_max - d_curl={}",
                self.l_min,
                self.d_max - self.d_curl
            ));
        }
        Ok(())
    }

    /// Reads `L_min`, `d_max`, `d_curl`, `delta` and `r`.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self, AnthroError> {
        Self::new(
            kv.f64("L_min")?,
            kv.f64("d_max")?,
            kv.f64("d_curl")?,
            kv.f64("delta")?,
            kv.f64("r")?,
        )
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.insert("L_min", [self.l_min]);
        kv.insert("d_max", [self.d_max]);
        kv.insert("d_curl", [self.d_curl]);
        kv.insert("delta", [self.delta]);
        kv.insert("r", [self.r]);
        kv
    }

    /// Every length multiplied by `s`; `r` unchanged.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            l_min: self.l_min * s,
            d_max: self.d_max * s,
            d_curl: self.d_curl * s,
            delta: self.delta * s,
            r: self.r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompatibilityVerdict {
    pub compatible: bool,
    pub h_min: f64,
    pub h_max: f64,
    /// `hand − H_min`; negative when the hand is too short.
    pub margin_low: f64,
    /// `H_max − hand`; negative when the hand is too long.
    pub margin_high: f64,
}

/// `(L_max, MFL_max)`.
pub fn slider_bounds(p: &SliderParams) -> Result<(f64, f64), AnthroError> {
    p.validate()?;
    let l_max = p.d_max - p.d_curl;
    Ok((l_max, l_max + p.delta))
}

/// `(H_min, H_max)` without any rounding.
pub fn hand_length_range(p: &SliderParams) -> Result<(f64, f64), AnthroError> {
    if !(p.r > 0.0) {
        return Err(AnthroError::NonPositiveRatio(p.r));
    }
    let (_, mfl_max) = slider_bounds(p)?;
    Ok((p.l_min / p.r, mfl_max / p.r))
}

pub fn check_hand(hand_length: f64, p: &SliderParams) -> Result<CompatibilityVerdict, AnthroError> {
    if !(hand_length > 0.0 && hand_length.is_finite()) {
        return Err(AnthroError::NonPositiveHand(hand_length));
    }
    let (h_min, h_max) = hand_length_range(p)?;
    Ok(CompatibilityVerdict {
        compatible: h_min <= hand_length && hand_length <= h_max,
        h_min,
        h_max,
        margin_low: hand_length - h_min,
        margin_high: h_max - hand_length,
    })
}
