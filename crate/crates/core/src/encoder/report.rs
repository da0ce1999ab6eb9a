//! Encode statistics. Serialised as JSON with a fixed field order.

use serde::{Deserialize, Serialize};

use super::gop::FrameKind;
use super::layers::{LayerMode, QpTriple, SpatialRole};
use super::Strategy;
use crate::bd_metrics::RdPoint;
use crate::mode_classifier::{ClassLabel, PartitionMode, Thresholds};
use crate::motion_search::{MotionVector, PredSource};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    #[serde(rename = "C1")]
    pub c1: u64,
    #[serde(rename = "C2")]
    pub c2: u64,
    #[serde(rename = "C3")]
    pub c3: u64,
    #[serde(rename = "C4")]
    pub c4: u64,
}

impl ClassCounts {
    pub fn add(&mut self, class: ClassLabel) {
        *self.get_mut(class) += 1;
    }

    pub fn get(&self, class: ClassLabel) -> u64 {
        match class {
            ClassLabel::C1 => self.c1,
            ClassLabel::C2 => self.c2,
            ClassLabel::C3 => self.c3,
            ClassLabel::C4 => self.c4,
        }
    }

    fn get_mut(&mut self, class: ClassLabel) -> &mut u64 {
        match class {
            ClassLabel::C1 => &mut self.c1,
            ClassLabel::C2 => &mut self.c2,
            ClassLabel::C3 => &mut self.c3,
            ClassLabel::C4 => &mut self.c4,
        }
    }

    pub fn merge(&mut self, other: &ClassCounts) {
        for c in ClassLabel::ALL {
            *self.get_mut(c) += other.get(c);
        }
    }

    pub fn total(&self) -> u64 {
        self.c1 + self.c2 + self.c3 + self.c4
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeCount {
    pub mode: PartitionMode,
    pub count: u64,
}

/// Per-mode MB counts in mode declaration order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeCounts(pub Vec<ModeCount>);

impl Default for ModeCounts {
    fn default() -> Self {
        Self(PartitionMode::ALL.iter().map(|&mode| ModeCount { mode, count: 0 }).collect())
    }
}

impl ModeCounts {
    pub fn add(&mut self, mode: PartitionMode) {
        self.0.iter_mut().find(|m| m.mode == mode).unwrap().count += 1;
    }

    pub fn get(&self, mode: PartitionMode) -> u64 {
        self.0.iter().find(|m| m.mode == mode).map_or(0, |m| m.count)
    }

    pub fn merge(&mut self, other: &ModeCounts) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.count += b.count;
        }
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|m| m.count).sum()
    }
}

/// One coded macroblock. Not part of the JSON report.
#[derive(Clone, Debug, PartialEq)]
pub struct MbRecord {
    pub frame: usize,
    pub mb_x: usize,
    pub mb_y: usize,
    pub sod: Option<u32>,
    pub dcog: Option<f64>,
    pub class: Option<ClassLabel>,
    pub mode: PartitionMode,
    pub source: PredSource,
    pub mvs: Vec<MotionVector>,
    pub mvs_bwd: Vec<MotionVector>,
    pub bits: u32,
    pub distortion: u64,
    pub evaluations: u64,
    pub nonzero_levels: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub index: usize,
    pub level: u32,
    pub kind: FrameKind,
    pub qp: u8,
    pub psnr_y: f64,
    pub bits: u64,
    pub evaluations: u64,
    pub class_counts: ClassCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub id: usize,
    pub role: SpatialRole,
    pub width: usize,
    pub height: usize,
    pub frame_rate: f64,
    pub gop_size: usize,
    pub frame_count: usize,
    pub avg_psnr_y: f64,
    pub total_bits: u64,
    pub rate_kbps: f64,
    pub evaluations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
    pub total_mbs: u64,
    pub classified_mbs: u64,
    pub class_counts: ClassCounts,
    pub mode_counts: ModeCounts,
    pub frames: Vec<FrameReport>,
    #[serde(skip)]
    pub mbs: Vec<MbRecord>,
}

/// A decodable (rate, quality) point of the scalable stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub name: String,
    pub qp: u8,
    pub frame_rate: f64,
    pub rate_kbps: f64,
    pub psnr_db: f64,
}

impl OperatingPoint {
    pub fn rd_point(&self) -> RdPoint {
        RdPoint::new(self.rate_kbps, self.psnr_db)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub width: usize,
    pub height: usize,
    pub frame_rate: f64,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodeReport {
    pub strategy: Strategy,
    pub layer_mode: LayerMode,
    pub gop_size: usize,
    pub qp: QpTriple,
    pub thresholds: Thresholds,
    pub source: SourceInfo,
    pub evaluations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
    pub operating_points: Vec<OperatingPoint>,
    pub layers: Vec<LayerReport>,
}

impl EncodeReport {
    /// Drops wall-clock fields, which are the only non-reproducible part.
    pub fn without_timing(&self) -> EncodeReport {
        let mut r = self.clone();
        r.wall_time_ms = None;
        for l in &mut r.layers {
            l.wall_time_ms = None;
        }
        r
    }

    /// The full-rate, full-resolution point.
    pub fn top_point(&self) -> &OperatingPoint {
        self.operating_points.last().expect("report has operating points")
    }

    pub fn top_layer(&self) -> &LayerReport {
        self.layers.last().expect("report has layers")
    }

    pub fn layer(&self, role: SpatialRole) -> Option<&LayerReport> {
        self.layers.iter().find(|l| l.role == role)
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}
