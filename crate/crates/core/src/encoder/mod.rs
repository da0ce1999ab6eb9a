//! Two-layer hierarchical-B encoder model driving the per-MB decision under
//! either the classified (proposed) strategy or exhaustive search.

pub mod gop;
pub mod layers;
pub mod report;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block_metrics::{dcog, psnr_from_sse, sod, ssd, MacroblockView, Plane};
use crate::mode_classifier::{classify_mb, plan_for_class, ClassLabel, ClassifierError, DecisionPlan, Thresholds};
use crate::motion_search::{
    choose_mb_mode, intra_dc_cost, median_pmv, IntraNeighbors, MbContext, ModeCost, MotionVector, SearchError,
};
use crate::video_io::{upsample_bilinear_2x, Frame, Sequence, VideoError, MB_SIZE};

pub use gop::{build_gop_schedule, FrameKind, GopEntry, GopSchedule};
pub use layers::{build_layer_inputs, LayerConfig, LayerInput, LayerMode, QpTriple, SpatialRole};
pub use report::{ClassCounts, EncodeReport, FrameReport, LayerReport, MbRecord, ModeCounts, OperatingPoint, SourceInfo};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("GOP size {0} is not a power of two in [1, 32]")]
    InvalidGop(usize),
    #[error("source has no frames")]
    EmptySource,
    #[error("scalable coding needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("{width}x{height} source cannot be halved into an MB-aligned base layer; use single-layer coding")]
    SourceTooSmall { width: usize, height: usize },
    #[error("frame {frame} is missing its {which} reference")]
    MissingReference { frame: usize, which: &'static str },
    #[error("qp {0} outside [0, 51]")]
    QpRange(u8),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// SOD/DCOG classification picks range and mode subset per MB.
    Proposed,
    /// Range 32 and every mode for every MB.
    Baseline,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Proposed => "proposed",
            Strategy::Baseline => "baseline",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub gop_size: usize,
    pub qp: QpTriple,
    pub thresholds: Thresholds,
    pub layer_mode: LayerMode,
    /// Worker threads for frames of the same temporal level.
    pub jobs: usize,
    /// Keep per-MB records in the report (class maps, diagnostics).
    pub record_mbs: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            gop_size: 16,
            qp: QpTriple::DEFAULTS[2],
            thresholds: Thresholds::default(),
            layer_mode: LayerMode::Scalable,
            jobs: 1,
            record_mbs: false,
        }
    }
}

/// Reconstructed pictures a frame may predict from.
#[derive(Clone, Copy, Debug, Default)]
pub struct FrameRefs<'a> {
    pub forward: Option<&'a Frame>,
    pub backward: Option<&'a Frame>,
    /// Source (uncoded) picture of the forward reference, used for
    /// classification. Falls back to `forward` when absent.
    pub forward_source: Option<&'a Frame>,
    /// Upsampled co-located base-layer reconstruction.
    pub inter_layer: Option<&'a Frame>,
}

#[derive(Clone, Debug)]
pub struct FrameOutput {
    pub recon: Frame,
    pub report: FrameReport,
    pub mbs: Vec<MbRecord>,
}

fn record(frame: usize, mb_x: usize, mb_y: usize, cost: &ModeCost, evaluations: u64) -> MbRecord {
    MbRecord {
        frame,
        mb_x,
        mb_y,
        sod: None,
        dcog: None,
        class: None,
        mode: cost.mode,
        source: cost.source,
        mvs: cost.mvs.clone(),
        mvs_bwd: cost.mvs_bwd.clone(),
        bits: cost.bits,
        distortion: cost.distortion,
        evaluations,
        nonzero_levels: cost.nonzero_levels,
    }
}

fn write_mb(recon: &mut Frame, mb_x: usize, mb_y: usize, samples: &[u8]) {
    let (x0, y0) = (mb_x * MB_SIZE, mb_y * MB_SIZE);
    for j in 0..MB_SIZE {
        recon.y[(y0 + j) * recon.width + x0..][..MB_SIZE].copy_from_slice(&samples[j * MB_SIZE..][..MB_SIZE]);
    }
}

fn border(recon: &Frame, mb_x: usize, mb_y: usize) -> (Option<[u8; 16]>, Option<[u8; 16]>) {
    let (x0, y0) = (mb_x * MB_SIZE, mb_y * MB_SIZE);
    let top = (mb_y > 0).then(|| {
        let mut t = [0u8; 16];
        t.copy_from_slice(&recon.y[(y0 - 1) * recon.width + x0..][..MB_SIZE]);
        t
    });
    let left = (mb_x > 0).then(|| {
        let mut l = [0u8; 16];
        for (j, v) in l.iter_mut().enumerate() {
            *v = recon.y[(y0 + j) * recon.width + x0 - 1];
        }
        l
    });
    (top, left)
}

/// Codes one picture. Key pictures are intra-only; B pictures run the
/// per-MB classification and mode decision in raster order.
pub fn encode_frame(
    frame: &Frame,
    entry: &GopEntry,
    refs: &FrameRefs,
    qp: u8,
    strategy: Strategy,
    thresholds: &Thresholds,
) -> Result<FrameOutput, EncoderError> {
    if qp > 51 {
        return Err(EncoderError::QpRange(qp));
    }
    let (cols, rows) = (frame.mb_cols(), frame.mb_rows());
    let mut recon = Frame {
        y: vec![0; frame.y.len()],
        ..frame.clone()
    };
    let mut mbs = Vec::with_capacity(cols * rows);
    let mut class_counts = ClassCounts::default();
    let (mut bits, mut evaluations) = (0u64, 0u64);

    match entry.kind {
        FrameKind::Key => {
            for mb_y in 0..rows {
                for mb_x in 0..cols {
                    let (top, left) = border(&recon, mb_x, mb_y);
                    let neighbors = IntraNeighbors {
                        top: top.as_ref().map(|t| &t[..]),
                        left: left.as_ref().map(|l| &l[..]),
                    };
                    let cost = intra_dc_cost(&MacroblockView::new(frame, mb_x, mb_y), &neighbors, qp)?;
                    write_mb(&mut recon, mb_x, mb_y, &cost.recon);
                    bits += cost.bits as u64;
                    evaluations += cost.evaluations;
                    mbs.push(record(frame.index, mb_x, mb_y, &cost, cost.evaluations));
                }
            }
        }
        FrameKind::B => {
            let forward = refs.forward.ok_or(EncoderError::MissingReference {
                frame: frame.index,
                which: "forward",
            })?;
            let backward = refs.backward.ok_or(EncoderError::MissingReference {
                frame: frame.index,
                which: "backward",
            })?;
            let analysis = refs.forward_source.unwrap_or(forward);
            let exhaustive = DecisionPlan::exhaustive();
            let mut fwd_mvs: Vec<Option<MotionVector>> = vec![None; cols * rows];
            let mut bwd_mvs: Vec<Option<MotionVector>> = vec![None; cols * rows];
            for mb_y in 0..rows {
                for mb_x in 0..cols {
                    let idx = mb_y * cols + mb_x;
                    let mb = MacroblockView::new(frame, mb_x, mb_y);
                    let colocated = MacroblockView::new(analysis, mb_x, mb_y);
                    let (s, d) = (sod(&mb, &colocated), dcog(&mb, &colocated));
                    let owned;
                    let plan = match strategy {
                        Strategy::Proposed => {
                            owned = plan_for_class(classify_mb(s, d, qp, thresholds)?);
                            &owned
                        }
                        Strategy::Baseline => &exhaustive,
                    };
                    let pmv = |field: &[Option<MotionVector>]| {
                        let left = (mb_x > 0).then(|| field[idx - 1]).flatten();
                        let top = (mb_y > 0).then(|| field[idx - cols]).flatten();
                        let top_right = (mb_y > 0 && mb_x + 1 < cols).then(|| field[idx - cols + 1]).flatten();
                        median_pmv(left, top, top_right)
                    };
                    let (top, left) = border(&recon, mb_x, mb_y);
                    let ctx = MbContext {
                        mb,
                        forward: Some(Plane::luma(forward)),
                        backward: Some(Plane::luma(backward)),
                        inter_layer: refs.inter_layer.map(Plane::luma),
                        pmv_fwd: pmv(&fwd_mvs),
                        pmv_bwd: pmv(&bwd_mvs),
                        intra: IntraNeighbors {
                            top: top.as_ref().map(|t| &t[..]),
                            left: left.as_ref().map(|l| &l[..]),
                        },
                    };
                    let decision = choose_mb_mode(&ctx, plan, qp)?;
                    let best = &decision.best;
                    write_mb(&mut recon, mb_x, mb_y, &best.recon);
                    fwd_mvs[idx] = best.forward_mv();
                    bwd_mvs[idx] = best.backward_mv();
                    class_counts.add(decision.class);
                    bits += best.bits as u64;
                    evaluations += decision.evaluations;
                    let mut rec = record(frame.index, mb_x, mb_y, best, decision.evaluations);
                    rec.sod = Some(s);
                    rec.dcog = Some(d);
                    rec.class = Some(decision.class);
                    mbs.push(rec);
                }
            }
        }
    }
    let psnr_y = psnr_from_sse(ssd(&frame.y, &recon.y), frame.y.len());
    Ok(FrameOutput {
        recon,
        report: FrameReport {
            index: frame.index,
            level: entry.level,
            kind: entry.kind,
            qp,
            psnr_y,
            bits,
            evaluations,
            class_counts,
        },
        mbs,
    })
}

fn frame_qp(role: SpatialRole, qp: &QpTriple, schedule: &GopSchedule, entry: &GopEntry) -> u8 {
    match role {
        SpatialRole::Base => qp.base,
        SpatialRole::Enhancement if schedule.max_level > 0 && entry.level == schedule.max_level => qp.el2,
        SpatialRole::Enhancement => qp.el1,
    }
}

struct LayerOutput {
    report: LayerReport,
    recon: Vec<Frame>,
}

fn encode_layer(
    input: &LayerInput,
    base_recon: Option<&[Frame]>,
    config: &EncoderConfig,
    strategy: Strategy,
    pool: &rayon::ThreadPool,
) -> Result<LayerOutput, EncoderError> {
    let start = Instant::now();
    let seq = &input.sequence;
    let schedule = build_gop_schedule(input.config.gop_size, seq.len())?;
    // Enhancement frame 2b is co-located in time with base frame b.
    let upsampled: Vec<Option<Frame>> = match base_recon {
        Some(base) => pool.install(|| {
            (0..seq.len())
                .into_par_iter()
                .map(|i| (i % 2 == 0).then(|| base.get(i / 2).map(upsample_bilinear_2x)).flatten())
                .collect()
        }),
        None => vec![None; seq.len()],
    };

    let mut recon: Vec<Option<Frame>> = vec![None; seq.len()];
    let mut outputs: Vec<Option<FrameOutput>> = vec![None; seq.len()];
    for group in schedule.by_level() {
        let results: Vec<Result<FrameOutput, EncoderError>> = pool.install(|| {
            group
                .par_iter()
                .map(|&i| {
                    let entry = &schedule.entries[i];
                    let lookup = |r: Option<usize>| r.and_then(|j| recon[j].as_ref());
                    let refs = FrameRefs {
                        forward: lookup(entry.forward),
                        backward: lookup(entry.backward),
                        forward_source: entry.forward.map(|j| &seq.frames[j]),
                        inter_layer: upsampled[i].as_ref(),
                    };
                    let qp = frame_qp(input.config.role, &config.qp, &schedule, entry);
                    encode_frame(&seq.frames[i], entry, &refs, qp, strategy, &config.thresholds)
                })
                .collect()
        });
        for (&i, out) in group.iter().zip(results) {
            let out = out?;
            recon[i] = Some(out.recon.clone());
            outputs[i] = Some(out);
        }
    }
    let wall = start.elapsed().as_secs_f64() * 1000.0;

    let frame_rate = seq.frame_rate.hz();
    let mut report = LayerReport {
        id: input.config.id,
        role: input.config.role,
        width: seq.width,
        height: seq.height,
        frame_rate,
        gop_size: input.config.gop_size,
        frame_count: seq.len(),
        avg_psnr_y: 0.0,
        total_bits: 0,
        rate_kbps: 0.0,
        evaluations: 0,
        wall_time_ms: Some(wall),
        total_mbs: 0,
        classified_mbs: 0,
        class_counts: ClassCounts::default(),
        mode_counts: ModeCounts::default(),
        frames: Vec::with_capacity(seq.len()),
        mbs: Vec::new(),
    };
    let mut psnr_sum = 0.0;
    for out in outputs.into_iter().map(|o| o.expect("every frame encoded")) {
        psnr_sum += out.report.psnr_y;
        report.total_bits += out.report.bits;
        report.evaluations += out.report.evaluations;
        report.class_counts.merge(&out.report.class_counts);
        for mb in &out.mbs {
            report.mode_counts.add(mb.mode);
        }
        report.total_mbs += out.mbs.len() as u64;
        report.frames.push(out.report);
        if config.record_mbs {
            report.mbs.extend(out.mbs);
        }
    }
    report.classified_mbs = report.class_counts.total();
    report.avg_psnr_y = psnr_sum / seq.len() as f64;
    report.rate_kbps = report.total_bits as f64 * frame_rate / seq.len() as f64 / 1000.0;
    Ok(LayerOutput {
        report,
        recon: recon.into_iter().map(|r| r.expect("every frame reconstructed")).collect(),
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn operating_points(layers: &[LayerReport], qp: &QpTriple) -> Vec<OperatingPoint> {
    let mut points = Vec::new();
    let mut lower_bits = 0u64;
    for layer in layers {
        match layer.role {
            SpatialRole::Base => {
                points.push(OperatingPoint {
                    name: "BL".into(),
                    qp: qp.base,
                    frame_rate: layer.frame_rate,
                    rate_kbps: layer.rate_kbps,
                    psnr_db: layer.avg_psnr_y,
                });
                lower_bits += layer.total_bits;
            }
            SpatialRole::Enhancement => {
                let max_level = layer.frames.iter().map(|f| f.level).max().unwrap_or(0);
                if max_level > 0 {
                    // Dropping the top temporal level halves the frame rate.
                    let sub: Vec<&FrameReport> = layer.frames.iter().filter(|f| f.level < max_level).collect();
                    let bits = lower_bits + sub.iter().map(|f| f.bits).sum::<u64>();
                    let fps = layer.frame_rate / 2.0;
                    points.push(OperatingPoint {
                        name: "EL1".into(),
                        qp: qp.el1,
                        frame_rate: fps,
                        rate_kbps: bits as f64 * fps / sub.len() as f64 / 1000.0,
                        psnr_db: mean(sub.iter().map(|f| f.psnr_y)),
                    });
                }
                let bits = lower_bits + layer.total_bits;
                points.push(OperatingPoint {
                    name: "EL2".into(),
                    qp: if max_level > 0 { qp.el2 } else { qp.el1 },
                    frame_rate: layer.frame_rate,
                    rate_kbps: bits as f64 * layer.frame_rate / layer.frame_count as f64 / 1000.0,
                    psnr_db: layer.avg_psnr_y,
                });
            }
        }
    }
    points
}

pub struct EncodeOutput {
    pub report: EncodeReport,
    /// Reconstructed enhancement (top) layer.
    pub recon: Sequence,
}

/// Builds the layers and schedules and codes everything, base layer first.
/// Frames of one temporal level are coded concurrently on `config.jobs`
/// threads; aggregation follows frame order, so results do not depend on
/// the thread count.
pub fn encode_sequence_with_recon(
    source: &Sequence,
    config: &EncoderConfig,
    strategy: Strategy,
) -> Result<EncodeOutput, EncoderError> {
    config.thresholds.validate()?;
    config.qp.validate()?;
    let start = Instant::now();
    let inputs = build_layer_inputs(source, config.layer_mode, config.gop_size)?;
    // Validate the top-layer GOP up front so bad configs fail before any work.
    build_gop_schedule(config.gop_size, source.len())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.max(1))
        .build()
        .map_err(|e| EncoderError::Pool(e.to_string()))?;

    let mut layers = Vec::with_capacity(inputs.len());
    let mut base_recon: Option<Vec<Frame>> = None;
    let mut top_recon = Vec::new();
    for input in &inputs {
        let out = encode_layer(input, base_recon.as_deref(), config, strategy, &pool)?;
        layers.push(out.report);
        top_recon = out.recon.clone();
        base_recon = Some(out.recon);
    }
    let points = operating_points(&layers, &config.qp);
    let report = EncodeReport {
        strategy,
        layer_mode: config.layer_mode,
        gop_size: config.gop_size,
        qp: config.qp,
        thresholds: config.thresholds,
        source: SourceInfo {
            width: source.width,
            height: source.height,
            frame_rate: source.frame_rate.hz(),
            frames: source.len(),
        },
        evaluations: layers.iter().map(|l| l.evaluations).sum(),
        wall_time_ms: Some(start.elapsed().as_secs_f64() * 1000.0),
        operating_points: points,
        layers,
    };
    let mut recon = Sequence::new(source.width, source.height, source.frame_rate)?;
    for f in top_recon {
        recon.push(f)?;
    }
    Ok(EncodeOutput { report, recon })
}

pub fn encode_sequence(source: &Sequence, config: &EncoderConfig, strategy: Strategy) -> Result<EncodeReport, EncoderError> {
    encode_sequence_with_recon(source, config, strategy).map(|o| o.report)
}

/// Class of a B-picture MB as the proposed strategy would see it.
pub fn classify_against(
    frame: &Frame,
    reference: &Frame,
    mb_x: usize,
    mb_y: usize,
    qp: u8,
    thresholds: &Thresholds,
) -> Result<(u32, f64, ClassLabel), EncoderError> {
    let mb = MacroblockView::new(frame, mb_x, mb_y);
    let co = MacroblockView::new(reference, mb_x, mb_y);
    let (s, d) = (sod(&mb, &co), dcog(&mb, &co));
    Ok((s, d, classify_mb(s, d, qp, thresholds)?))
}
