//! Macroblock classification and adaptive-range mode decision for scalable
//! video coding, with an exhaustive full-search baseline to compare against.
//!
//! Each macroblock of a hierarchical-B picture is compared with its
//! co-located block in the forward reference. The absolute sum of
//! differences (SOD) and the displacement of the intensity centroid (DCOG)
//! pick one of four activity classes; the class fixes the motion search
//! range and the set of partition modes that get rate-distortion checked.

pub mod bd_metrics;
pub mod block_metrics;
pub mod cli;
pub mod encoder;
pub mod mode_classifier;
pub mod motion_search;
pub mod synth;
pub mod video_io;
