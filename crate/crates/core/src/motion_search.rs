//! Integer-pel block matching and per-macroblock mode decision.
//!
//! Motion search minimises `SAD + lambda_motion * mvd_bits` over every
//! in-bounds displacement of the active range. Candidate modes are then
//! compared by the Lagrangian `SSD + lambda_mode * bits`, where SSD is taken
//! after the residual has gone through the scalar quantizer.
//!
//! All partitions of a macroblock are searched against the MB-level median
//! predictor, which lets one pass over the search window produce the optimum
//! for every partition of every mode (see [`PartitionSearch`]).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block_metrics::{
    sad_unchecked, signed_code_num, ssd, ue_golomb_len, MacroblockView, MetricsError, Plane, Quantizer, Window,
};
use crate::mode_classifier::{ClassLabel, DecisionPlan, PartitionMode};
use crate::video_io::MB_SIZE;

const MB_PIXELS: usize = MB_SIZE * MB_SIZE;

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("{w}x{h} block at ({x},{y}) lies outside the {plane_w}x{plane_h} plane")]
    BlockOutside {
        x: i64,
        y: i64,
        w: usize,
        h: usize,
        plane_w: usize,
        plane_h: usize,
    },
    #[error("mode {0} is not in the decision plan")]
    ModeNotInPlan(PartitionMode),
    #[error("mode {0} is not an inter partition mode")]
    NotInterMode(PartitionMode),
    #[error("decision plan has no modes")]
    EmptyPlan,
    #[error("no prediction source available for the macroblock")]
    NoReference,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MotionVector {
    pub dx: i32,
    pub dy: i32,
}

impl MotionVector {
    pub const ZERO: MotionVector = MotionVector { dx: 0, dy: 0 };

    pub const fn new(dx: i32, dy: i32) -> Self {
        Self { dx, dy }
    }

    fn l1(self) -> i32 {
        self.dx.abs() + self.dy.abs()
    }

    /// Total order used to break cost ties: shorter vectors first, then
    /// smaller dy, then smaller dx.
    fn tie_key(self) -> (i32, i32, i32) {
        (self.l1(), self.dy, self.dx)
    }
}

fn median3(a: i32, b: i32, c: i32) -> i32 {
    a.max(b).min(a.min(b).max(c))
}

/// Component-wise median of the left, top and top-right neighbours.
/// Missing neighbours count as the zero vector.
pub fn median_pmv(
    left: Option<MotionVector>,
    top: Option<MotionVector>,
    top_right: Option<MotionVector>,
) -> MotionVector {
    let (a, b, c) = (
        left.unwrap_or_default(),
        top.unwrap_or_default(),
        top_right.unwrap_or_default(),
    );
    MotionVector::new(median3(a.dx, b.dx, c.dx), median3(a.dy, b.dy, c.dy))
}

/// Bits to code `mv` as a signed Exp-Golomb difference from `pmv`.
pub fn mv_bits(mv: MotionVector, pmv: MotionVector) -> u32 {
    ue_golomb_len(signed_code_num(mv.dx - pmv.dx)) + ue_golomb_len(signed_code_num(mv.dy - pmv.dy))
}

pub fn lambda_mode(qp: u8) -> f64 {
    0.85 * 2f64.powf((qp as f64 - 12.0) / 3.0)
}

pub fn lambda_motion(qp: u8) -> f64 {
    lambda_mode(qp).sqrt()
}

/// Best displacement of one block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchResult {
    pub mv: MotionVector,
    pub sad: u32,
    pub cost: f64,
    pub evaluations: u64,
}

#[derive(Clone, Copy, Debug)]
struct Best {
    mv: MotionVector,
    sad: u32,
    cost: f64,
}

impl Best {
    fn improves_on(&self, other: &Option<Best>) -> bool {
        match other {
            None => true,
            Some(o) => self.cost < o.cost || (self.cost == o.cost && self.mv.tie_key() < o.mv.tie_key()),
        }
    }
}

/// Exhaustive search of a `w`x`h` block over `|dx|, |dy| <= range` around
/// `center` in `reference`. Displacements whose window leaves the plane are
/// skipped and not counted.
pub fn full_search_mv(
    block: Window,
    size: (usize, usize),
    reference: Plane,
    center: (i64, i64),
    range: u32,
    pmv: MotionVector,
    qp: u8,
) -> Result<SearchResult, SearchError> {
    let (w, h) = size;
    if !block.plane.contains(block.x, block.y, w, h) {
        return Err(SearchError::BlockOutside {
            x: block.x,
            y: block.y,
            w,
            h,
            plane_w: block.plane.width,
            plane_h: block.plane.height,
        });
    }
    let lm = lambda_motion(qp);
    let r = range as i32;
    let mut best: Option<Best> = None;
    let mut evaluations = 0;
    for dy in -r..=r {
        for dx in -r..=r {
            let (rx, ry) = (center.0 + dx as i64, center.1 + dy as i64);
            if !reference.contains(rx, ry, w, h) {
                continue;
            }
            evaluations += 1;
            let mv = MotionVector::new(dx, dy);
            let sad = sad_unchecked(
                block.plane,
                block.x as usize,
                block.y as usize,
                reference,
                rx as usize,
                ry as usize,
                w,
                h,
            );
            let cand = Best {
                mv,
                sad,
                cost: sad as f64 + lm * mv_bits(mv, pmv) as f64,
            };
            if cand.improves_on(&best) {
                best = Some(cand);
            }
        }
    }
    // The zero displacement of an in-bounds block is always in bounds when
    // the reference has the same size; otherwise the window may be empty.
    let best = best.ok_or(SearchError::BlockOutside {
        x: center.0,
        y: center.1,
        w,
        h,
        plane_w: reference.width,
        plane_h: reference.height,
    })?;
    Ok(SearchResult {
        mv: best.mv,
        sad: best.sad,
        cost: best.cost,
        evaluations,
    })
}

/// Top-left corners (MB-local) of each partition of an inter mode.
pub fn partition_origins(mode: PartitionMode) -> Vec<(usize, usize)> {
    let Some((w, h)) = mode.partition_size() else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(mode.partition_count());
    for y in (0..MB_SIZE).step_by(h) {
        for x in (0..MB_SIZE).step_by(w) {
            out.push((x, y));
        }
    }
    out
}

/// Index ranges of each inter mode's partitions within the flat array
/// returned by `whole_window_sums`, by code index.
const SLOT_RANGE: [(usize, usize); 7] = [(0, 1), (1, 3), (3, 5), (5, 9), (9, 17), (17, 25), (25, 41)];

/// SADs of all 41 partitions of the seven inter modes for a window that
/// lies entirely inside the reference, each in raster order of partitions.
#[inline]
fn whole_window_sums(cur: &[[u8; MB_SIZE]; MB_SIZE], reference: Plane, rx: usize, ry: usize) -> [u32; 41] {
    let mut s4 = [0u32; 16];
    for (j, a) in cur.iter().enumerate() {
        let b: &[u8; MB_SIZE] = reference.row(rx, ry + j, MB_SIZE).try_into().unwrap();
        let mut d = [0u8; MB_SIZE];
        for k in 0..MB_SIZE {
            d[k] = a[k].abs_diff(b[k]);
        }
        let row = &mut s4[(j / 4) * 4..][..4];
        for (g, acc) in row.iter_mut().enumerate() {
            *acc += d[4 * g..4 * g + 4].iter().map(|&v| v as u32).sum::<u32>();
        }
    }
    let mut out = [0u32; 41];
    // 4x4, raster over a 4x4 grid.
    out[25..41].copy_from_slice(&s4);
    for by in 0..4 {
        for bx in 0..2 {
            // 8x4: 2 wide, 4 tall grid.
            out[9 + by * 2 + bx] = s4[by * 4 + 2 * bx] + s4[by * 4 + 2 * bx + 1];
        }
    }
    for by in 0..2 {
        for bx in 0..4 {
            // 4x8: 4 wide, 2 tall grid.
            out[17 + by * 4 + bx] = s4[2 * by * 4 + bx] + s4[(2 * by + 1) * 4 + bx];
        }
    }
    for by in 0..2 {
        for bx in 0..2 {
            out[5 + by * 2 + bx] = out[9 + 2 * by * 2 + bx] + out[9 + (2 * by + 1) * 2 + bx];
        }
    }
    out[1] = out[5] + out[6];
    out[2] = out[7] + out[8];
    out[3] = out[5] + out[7];
    out[4] = out[6] + out[8];
    out[0] = out[1] + out[2];
    out
}

// Code-index slot, mode, partition origins.
type ActiveMode = (usize, PartitionMode, Vec<(usize, usize)>);

fn inter_slot(mode: PartitionMode) -> usize {
    mode.code_index() as usize
}

/// Motion search results for every partition of a set of inter modes,
/// produced by a single sweep over the search window. Per displacement the
/// sixteen 4x4 SADs are computed once and summed into each partition.
#[derive(Clone, Debug)]
pub struct PartitionSearch {
    best: [[Option<Best>; 16]; 7],
    evaluations: [u64; 7],
}

impl PartitionSearch {
    pub fn run(
        mb: &MacroblockView,
        reference: Plane,
        range: u32,
        pmv: MotionVector,
        qp: u8,
        modes: &[PartitionMode],
    ) -> Self {
        let lm = lambda_motion(qp);
        let (x0, y0) = mb.origin();
        let src = mb.plane();
        let active: Vec<ActiveMode> = modes
            .iter()
            .filter(|m| m.is_inter())
            .map(|&m| (inter_slot(m), m, partition_origins(m)))
            .collect();
        let mut out = PartitionSearch {
            best: [[None; 16]; 7],
            evaluations: [0; 7],
        };
        if active.is_empty() {
            return out;
        }
        let r = range as i32;
        let mut on = [false; 7];
        for (slot, _, _) in &active {
            on[*slot] = true;
        }
        let mut cur = [[0u8; MB_SIZE]; MB_SIZE];
        for (j, row) in cur.iter_mut().enumerate() {
            row.copy_from_slice(src.row(x0, y0 + j, MB_SIZE));
        }
        let mut sad4 = [[0u32; 4]; 4];
        let mut valid4 = [[false; 4]; 4];
        for dy in -r..=r {
            for dx in -r..=r {
                let (rx, ry) = (x0 as i64 + dx as i64, y0 as i64 + dy as i64);
                let mv = MotionVector::new(dx, dy);
                if reference.contains(rx, ry, MB_SIZE, MB_SIZE) {
                    let sums = whole_window_sums(&cur, reference, rx as usize, ry as usize);
                    let penalty = lm * mv_bits(mv, pmv) as f64;
                    for slot in 0..7 {
                        if !on[slot] {
                            continue;
                        }
                        let (lo, hi) = SLOT_RANGE[slot];
                        out.evaluations[slot] += (hi - lo) as u64;
                        for (p, &sad) in sums[lo..hi].iter().enumerate() {
                            out.offer(slot, p, mv, sad, penalty);
                        }
                    }
                    continue;
                }
                // Window partly outside the plane: only fully inside
                // partitions are candidates.
                let mut any = false;
                for by in 0..4 {
                    for bx in 0..4 {
                        let (px, py) = (rx + 4 * bx as i64, ry + 4 * by as i64);
                        let ok = reference.contains(px, py, 4, 4);
                        valid4[by][bx] = ok;
                        if ok {
                            any = true;
                            sad4[by][bx] = sad_unchecked(
                                src,
                                x0 + 4 * bx,
                                y0 + 4 * by,
                                reference,
                                px as usize,
                                py as usize,
                                4,
                                4,
                            );
                        }
                    }
                }
                if !any {
                    continue;
                }
                let penalty = lm * mv_bits(mv, pmv) as f64;
                for (slot, mode, origins) in &active {
                    let (w, h) = mode.partition_size().unwrap();
                    for (p, &(ox, oy)) in origins.iter().enumerate() {
                        let mut sad = 0;
                        let mut ok = true;
                        for by in oy / 4..(oy + h) / 4 {
                            for bx in ox / 4..(ox + w) / 4 {
                                ok &= valid4[by][bx];
                                sad += sad4[by][bx];
                            }
                        }
                        if !ok {
                            continue;
                        }
                        out.evaluations[*slot] += 1;
                        out.offer(*slot, p, mv, sad, penalty);
                    }
                }
            }
        }
        out
    }

    /// Per-partition winners for `mode`, in raster order of partitions.
    pub fn results(&self, mode: PartitionMode) -> Option<Vec<SearchResult>> {
        if !mode.is_inter() {
            return None;
        }
        let slot = inter_slot(mode);
        let n = mode.partition_count();
        let evals_per_part = self.evaluations[slot] / n as u64;
        self.best[slot][..n]
            .iter()
            .map(|b| {
                b.map(|b| SearchResult {
                    mv: b.mv,
                    sad: b.sad,
                    cost: b.cost,
                    evaluations: evals_per_part,
                })
            })
            .collect()
    }

    #[inline]
    fn offer(&mut self, slot: usize, p: usize, mv: MotionVector, sad: u32, penalty: f64) {
        let cand = Best {
            mv,
            sad,
            cost: sad as f64 + penalty,
        };
        if cand.improves_on(&self.best[slot][p]) {
            self.best[slot][p] = Some(cand);
        }
    }

    pub fn evaluations(&self, mode: PartitionMode) -> u64 {
        if mode.is_inter() {
            self.evaluations[inter_slot(mode)]
        } else {
            0
        }
    }
}

/// Where a candidate's prediction came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PredSource {
    Forward,
    Backward,
    Bi,
    InterLayer,
    Intra,
}

/// Cost of coding a macroblock with one mode and prediction source.
///
/// `mvs` holds one vector per partition for the primary direction (the
/// backward one for [`PredSource::Backward`]); `mvs_bwd` is only filled for
/// bi-prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeCost {
    pub mode: PartitionMode,
    pub source: PredSource,
    pub mvs: Vec<MotionVector>,
    pub mvs_bwd: Vec<MotionVector>,
    pub distortion: u64,
    pub bits: u32,
    pub j_cost: f64,
    pub evaluations: u64,
    pub nonzero_levels: u32,
    pub recon: Vec<u8>,
}

impl ModeCost {
    pub fn forward_mv(&self) -> Option<MotionVector> {
        match self.source {
            PredSource::Forward | PredSource::Bi => self.mvs.first().copied(),
            _ => None,
        }
    }

    pub fn backward_mv(&self) -> Option<MotionVector> {
        match self.source {
            PredSource::Backward => self.mvs.first().copied(),
            PredSource::Bi => self.mvs_bwd.first().copied(),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeDecision {
    pub best: ModeCost,
    pub class: ClassLabel,
    pub plan: DecisionPlan,
    /// Candidate positions examined across every evaluated mode and source.
    pub evaluations: u64,
}

fn mb_samples(mb: &MacroblockView) -> [u8; MB_PIXELS] {
    let mut out = [0u8; MB_PIXELS];
    for j in 0..MB_SIZE {
        out[j * MB_SIZE..][..MB_SIZE].copy_from_slice(mb.row(j));
    }
    out
}

struct Residual {
    recon: Vec<u8>,
    distortion: u64,
    bits: u32,
    nonzero: u32,
}

// Zero levels are free; a non-zero level costs ue(|level|).
fn code_residual(src: &[u8; MB_PIXELS], pred: &[u8; MB_PIXELS], quant: &Quantizer) -> Residual {
    let mut recon = vec![0u8; MB_PIXELS];
    let mut bits = 0;
    let mut nonzero = 0;
    for k in 0..MB_PIXELS {
        let r = src[k] as i32 - pred[k] as i32;
        let (level, rec) = quant.quant_recon(r);
        if level != 0 {
            nonzero += 1;
            bits += ue_golomb_len(level.unsigned_abs());
        }
        recon[k] = (pred[k] as i32 + rec).clamp(0, 255) as u8;
    }
    let distortion = ssd(src, &recon);
    Residual {
        recon,
        distortion,
        bits,
        nonzero,
    }
}

fn predict(reference: Plane, mb: &MacroblockView, mode: PartitionMode, mvs: &[MotionVector]) -> [u8; MB_PIXELS] {
    let (x0, y0) = mb.origin();
    let (w, h) = mode.partition_size().expect("inter mode");
    let mut pred = [0u8; MB_PIXELS];
    for (&(ox, oy), mv) in partition_origins(mode).iter().zip(mvs) {
        let rx = (x0 + ox) as i64 + mv.dx as i64;
        let ry = (y0 + oy) as i64 + mv.dy as i64;
        for row in 0..h {
            let line = reference.row(rx as usize, ry as usize + row, w);
            pred[(oy + row) * MB_SIZE + ox..][..w].copy_from_slice(line);
        }
    }
    pred
}

fn average(a: &[u8; MB_PIXELS], b: &[u8; MB_PIXELS]) -> [u8; MB_PIXELS] {
    let mut out = [0u8; MB_PIXELS];
    for k in 0..MB_PIXELS {
        out[k] = ((a[k] as u16 + b[k] as u16 + 1) >> 1) as u8;
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn finish(
    mode: PartitionMode,
    source: PredSource,
    mvs: Vec<MotionVector>,
    mvs_bwd: Vec<MotionVector>,
    side_bits: u32,
    evaluations: u64,
    residual: Residual,
    qp: u8,
) -> ModeCost {
    let bits = side_bits + residual.bits;
    ModeCost {
        mode,
        source,
        mvs,
        mvs_bwd,
        distortion: residual.distortion,
        bits,
        j_cost: residual.distortion as f64 + lambda_mode(qp) * bits as f64,
        evaluations,
        nonzero_levels: residual.nonzero,
        recon: residual.recon,
    }
}

fn check_inter(mode: PartitionMode, plan: &DecisionPlan) -> Result<(), SearchError> {
    if !mode.is_inter() {
        return Err(SearchError::NotInterMode(mode));
    }
    if !plan.allows(mode) {
        return Err(SearchError::ModeNotInPlan(mode));
    }
    Ok(())
}

/// Codes `mb` with one inter partition mode predicted from a single
/// reference. Each partition is searched over the plan's range around its
/// co-located position.
pub fn evaluate_partition_mode(
    mb: &MacroblockView,
    mode: PartitionMode,
    reference: Plane,
    pmv: MotionVector,
    plan: &DecisionPlan,
    qp: u8,
) -> Result<ModeCost, SearchError> {
    check_inter(mode, plan)?;
    let quant = Quantizer::new(qp)?;
    let (x0, y0) = mb.origin();
    let size = mode.partition_size().unwrap();
    let mut mvs = Vec::with_capacity(mode.partition_count());
    let mut evaluations = 0;
    for (ox, oy) in partition_origins(mode) {
        let (bx, by) = ((x0 + ox) as i64, (y0 + oy) as i64);
        let found = full_search_mv(
            Window::new(mb.plane(), bx, by),
            size,
            reference,
            (bx, by),
            plan.search_range,
            pmv,
            qp,
        )?;
        evaluations += found.evaluations;
        mvs.push(found.mv);
    }
    let src = mb_samples(mb);
    let pred = predict(reference, mb, mode, &mvs);
    let side = ue_golomb_len(mode.code_index()) + mvs.iter().map(|&mv| mv_bits(mv, pmv)).sum::<u32>();
    Ok(finish(
        mode,
        PredSource::Forward,
        mvs,
        Vec::new(),
        side,
        evaluations,
        code_residual(&src, &pred, &quant),
        qp,
    ))
}

/// Copy at the predicted vector (clipped into the plane), no residual, one bit.
pub fn skip_cost(mb: &MacroblockView, reference: Plane, pmv: MotionVector, qp: u8) -> ModeCost {
    let (x0, y0) = mb.origin();
    let max_x = (reference.width - MB_SIZE) as i64;
    let max_y = (reference.height - MB_SIZE) as i64;
    let rx = (x0 as i64 + pmv.dx as i64).clamp(0, max_x);
    let ry = (y0 as i64 + pmv.dy as i64).clamp(0, max_y);
    let mv = MotionVector::new((rx - x0 as i64) as i32, (ry - y0 as i64) as i32);
    let pred = predict(reference, mb, PartitionMode::P16x16, &[mv]);
    let src = mb_samples(mb);
    let distortion = ssd(&src, &pred);
    ModeCost {
        mode: PartitionMode::Skip,
        source: PredSource::Forward,
        mvs: vec![mv],
        mvs_bwd: Vec::new(),
        distortion,
        bits: 1,
        j_cost: distortion as f64 + lambda_mode(qp),
        evaluations: 1,
        nonzero_levels: 0,
        recon: pred.to_vec(),
    }
}

/// Already-reconstructed samples bordering a macroblock.
#[derive(Clone, Copy, Debug, Default)]
pub struct IntraNeighbors<'a> {
    pub top: Option<&'a [u8]>,
    pub left: Option<&'a [u8]>,
}

pub fn intra_dc_predictor(neighbors: &IntraNeighbors) -> u8 {
    let mut sum = 0u32;
    let mut n = 0u32;
    for edge in [neighbors.top, neighbors.left].into_iter().flatten() {
        sum += edge.iter().map(|&v| v as u32).sum::<u32>();
        n += edge.len() as u32;
    }
    (sum + n / 2).checked_div(n).map_or(128, |v| v as u8)
}

/// DC intra prediction from the reconstructed top row and left column.
pub fn intra_dc_cost(mb: &MacroblockView, neighbors: &IntraNeighbors, qp: u8) -> Result<ModeCost, SearchError> {
    let quant = Quantizer::new(qp)?;
    let pred = [intra_dc_predictor(neighbors); MB_PIXELS];
    let src = mb_samples(mb);
    Ok(finish(
        PartitionMode::Intra,
        PredSource::Intra,
        Vec::new(),
        Vec::new(),
        ue_golomb_len(PartitionMode::Intra.code_index()),
        1,
        code_residual(&src, &pred, &quant),
        qp,
    ))
}

/// Everything choose_mb_mode needs to know about one macroblock.
#[derive(Clone, Copy, Debug)]
pub struct MbContext<'a> {
    pub mb: MacroblockView<'a>,
    pub forward: Option<Plane<'a>>,
    pub backward: Option<Plane<'a>>,
    /// Upsampled base-layer reconstruction, enhancement layer only.
    pub inter_layer: Option<Plane<'a>>,
    pub pmv_fwd: MotionVector,
    pub pmv_bwd: MotionVector,
    pub intra: IntraNeighbors<'a>,
}

impl<'a> MbContext<'a> {
    /// Single forward reference, no backward or inter-layer prediction.
    pub fn forward_only(mb: MacroblockView<'a>, reference: Plane<'a>, pmv: MotionVector) -> Self {
        Self {
            mb,
            forward: Some(reference),
            backward: None,
            inter_layer: None,
            pmv_fwd: pmv,
            pmv_bwd: MotionVector::ZERO,
            intra: IntraNeighbors::default(),
        }
    }

    fn direction_bits(&self, source: PredSource) -> u32 {
        let both = self.forward.is_some() && self.backward.is_some();
        let dir = if both {
            match source {
                PredSource::Forward => ue_golomb_len(0),
                PredSource::Backward => ue_golomb_len(1),
                PredSource::Bi => ue_golomb_len(2),
                _ => 0,
            }
        } else {
            0
        };
        // One flag bit tells inter-layer prediction apart from the rest.
        dir + u32::from(self.inter_layer.is_some())
    }
}

/// Evaluates exactly the modes in `plan` and returns the cheapest.
///
/// Inter modes are tried against each available source (forward, backward,
/// their average); in the enhancement layer the zero-motion inter-layer
/// predictor competes as a 16x16 candidate. Ties go to the earlier mode in
/// the plan, then to the earlier source.
pub fn choose_mb_mode(ctx: &MbContext, plan: &DecisionPlan, qp: u8) -> Result<ModeDecision, SearchError> {
    if plan.modes.is_empty() {
        return Err(SearchError::EmptyPlan);
    }
    let quant = Quantizer::new(qp)?;
    let src = mb_samples(&ctx.mb);
    let fwd_search = ctx
        .forward
        .map(|r| PartitionSearch::run(&ctx.mb, r, plan.search_range, ctx.pmv_fwd, qp, &plan.modes));
    let bwd_search = ctx
        .backward
        .map(|r| PartitionSearch::run(&ctx.mb, r, plan.search_range, ctx.pmv_bwd, qp, &plan.modes));

    let mut best: Option<ModeCost> = None;
    let mut evaluations = 0u64;
    let mut consider = |cand: ModeCost, evaluations: &mut u64| {
        *evaluations += cand.evaluations;
        if best.as_ref().is_none_or(|b| cand.j_cost < b.j_cost) {
            best = Some(cand);
        }
    };

    for &mode in &plan.modes {
        match mode {
            PartitionMode::Skip => {
                if let Some(reference) = ctx.forward {
                    consider(skip_cost(&ctx.mb, reference, ctx.pmv_fwd, qp), &mut evaluations);
                }
            }
            PartitionMode::Intra => consider(intra_dc_cost(&ctx.mb, &ctx.intra, qp)?, &mut evaluations),
            _ => {
                let mode_bits = ue_golomb_len(mode.code_index());
                let mut directional = Vec::with_capacity(2);
                for (source, search, reference, pmv) in [
                    (PredSource::Forward, &fwd_search, ctx.forward, ctx.pmv_fwd),
                    (PredSource::Backward, &bwd_search, ctx.backward, ctx.pmv_bwd),
                ] {
                    let (Some(search), Some(reference)) = (search, reference) else {
                        continue;
                    };
                    let Some(found) = search.results(mode) else {
                        continue;
                    };
                    let mvs: Vec<_> = found.iter().map(|f| f.mv).collect();
                    let mvd: u32 = mvs.iter().map(|&mv| mv_bits(mv, pmv)).sum();
                    let pred = predict(reference, &ctx.mb, mode, &mvs);
                    let cost = finish(
                        mode,
                        source,
                        mvs,
                        Vec::new(),
                        mode_bits + ctx.direction_bits(source) + mvd,
                        search.evaluations(mode),
                        code_residual(&src, &pred, &quant),
                        qp,
                    );
                    directional.push((pred, mvd));
                    consider(cost, &mut evaluations);
                }
                if let [(pf, bits_f), (pb, bits_b)] = &directional[..] {
                    let fwd = fwd_search.as_ref().unwrap().results(mode).unwrap();
                    let bwd = bwd_search.as_ref().unwrap().results(mode).unwrap();
                    let pred = average(pf, pb);
                    let cost = finish(
                        mode,
                        PredSource::Bi,
                        fwd.iter().map(|f| f.mv).collect(),
                        bwd.iter().map(|f| f.mv).collect(),
                        mode_bits + ctx.direction_bits(PredSource::Bi) + bits_f + bits_b,
                        0,
                        code_residual(&src, &pred, &quant),
                        qp,
                    );
                    consider(cost, &mut evaluations);
                }
                if mode == PartitionMode::P16x16 {
                    if let Some(base) = ctx.inter_layer {
                        let pred = predict(base, &ctx.mb, mode, &[MotionVector::ZERO]);
                        let cost = finish(
                            mode,
                            PredSource::InterLayer,
                            vec![MotionVector::ZERO],
                            Vec::new(),
                            mode_bits + 1,
                            1,
                            code_residual(&src, &pred, &quant),
                            qp,
                        );
                        consider(cost, &mut evaluations);
                    }
                }
            }
        }
    }
    let best = best.ok_or(SearchError::NoReference)?;
    Ok(ModeDecision {
        best,
        class: plan.class,
        plan: plan.clone(),
        evaluations,
    })
}
