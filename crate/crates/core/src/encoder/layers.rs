//! Spatial layer setup: a half-resolution, half-rate base layer derived from
//! the source and a full-resolution enhancement layer.

use serde::{Deserialize, Serialize};

use super::EncoderError;
use crate::video_io::{downsample_2x2, Sequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SpatialRole {
    Base,
    Enhancement,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerMode {
    /// Enhancement layer only, coded at source resolution.
    Single,
    /// Base layer plus enhancement layer.
    Scalable,
}

/// QPs for the base layer and the two enhancement operating points. EL1
/// covers enhancement pictures below the top temporal level, EL2 the top
/// level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QpTriple {
    pub base: u8,
    pub el1: u8,
    pub el2: u8,
}

impl QpTriple {
    pub const fn new(base: u8, el1: u8, el2: u8) -> Self {
        Self { base, el1, el2 }
    }

    pub const fn uniform(qp: u8) -> Self {
        Self::new(qp, qp, qp)
    }

    /// The four operating points of the reference test conditions.
    pub const DEFAULTS: [QpTriple; 4] = [
        QpTriple::new(16, 20, 24),
        QpTriple::new(20, 24, 30),
        QpTriple::new(24, 28, 32),
        QpTriple::new(28, 32, 36),
    ];

    pub fn validate(&self) -> Result<(), EncoderError> {
        for qp in [self.base, self.el1, self.el2] {
            if qp > 51 {
                return Err(EncoderError::QpRange(qp));
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for QpTriple {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.base, self.el1, self.el2)
    }
}

impl std::str::FromStr for QpTriple {
    type Err = String;

    /// Accepts `q` (same QP everywhere) or `base/el1/el2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |v: &str| -> Result<u8, String> {
            let q: u8 = v.trim().parse().map_err(|_| format!("bad QP `{v}`"))?;
            if q > 51 {
                return Err(format!("QP {q} outside [0, 51]"));
            }
            Ok(q)
        };
        let parts: Vec<&str> = s.split('/').collect();
        match parts[..] {
            [q] => Ok(QpTriple::uniform(parse(q)?)),
            [b, e1, e2] => Ok(QpTriple::new(parse(b)?, parse(e1)?, parse(e2)?)),
            _ => Err(format!("expected `q` or `base/el1/el2`, got `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub id: usize,
    pub role: SpatialRole,
    pub width: usize,
    pub height: usize,
    /// Keeps one source frame out of this many.
    pub frame_rate_divisor: u32,
    pub gop_size: usize,
}

#[derive(Clone, Debug)]
pub struct LayerInput {
    pub config: LayerConfig,
    pub sequence: Sequence,
}

/// Splits a source into per-layer inputs. The base layer keeps every second
/// frame and halves the resolution with a rounded 2x2 mean.
pub fn build_layer_inputs(source: &Sequence, mode: LayerMode, gop_size: usize) -> Result<Vec<LayerInput>, EncoderError> {
    if source.is_empty() {
        return Err(EncoderError::EmptySource);
    }
    let enhancement = LayerInput {
        config: LayerConfig {
            id: 0,
            role: SpatialRole::Enhancement,
            width: source.width,
            height: source.height,
            frame_rate_divisor: 1,
            gop_size,
        },
        sequence: source.clone(),
    };
    if mode == LayerMode::Single {
        return Ok(vec![enhancement]);
    }
    if source.len() < 2 {
        return Err(EncoderError::TooFewFrames(source.len()));
    }
    if !source.width.is_multiple_of(32) || !source.height.is_multiple_of(32) {
        return Err(EncoderError::SourceTooSmall {
            width: source.width,
            height: source.height,
        });
    }
    let mut base = Sequence::new(source.width / 2, source.height / 2, source.frame_rate.divided(2))?;
    for frame in source.frames.iter().step_by(2) {
        base.push(downsample_2x2(frame)?)?;
    }
    let base = LayerInput {
        config: LayerConfig {
            id: 0,
            role: SpatialRole::Base,
            width: base.width,
            height: base.height,
            frame_rate_divisor: 2,
            gop_size: (gop_size / 2).max(1),
        },
        sequence: base,
    };
    let mut enhancement = enhancement;
    enhancement.config.id = 1;
    Ok(vec![base, enhancement])
}
