//! Per-block arithmetic: SOD, centroids and their distance, SAD/SSD, PSNR,
//! Exp-Golomb code lengths and the scalar quantizer.

use thiserror::Error;

use crate::video_io::{Frame, MB_SIZE};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{w}x{h} window at ({x},{y}) is outside the {plane_w}x{plane_h} plane")]
    OutOfBounds {
        x: i64,
        y: i64,
        w: usize,
        h: usize,
        plane_w: usize,
        plane_h: usize,
    },
    #[error("unsupported block size {w}x{h}")]
    BlockSize { w: usize, h: usize },
    #[error("frame dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("qp {0} outside [0, 51]")]
    QpRange(i32),
}

/// Borrowed 8-bit plane.
#[derive(Clone, Copy, Debug)]
pub struct Plane<'a> {
    pub data: &'a [u8],
    pub width: usize,
    pub height: usize,
}

impl<'a> Plane<'a> {
    pub fn new(data: &'a [u8], width: usize, height: usize) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self { data, width, height }
    }

    pub fn luma(frame: &'a Frame) -> Self {
        Self::new(&frame.y, frame.width, frame.height)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn row(&self, x: usize, y: usize, len: usize) -> &'a [u8] {
        &self.data[y * self.width + x..][..len]
    }

    /// True when a `w`x`h` window at (x, y) lies inside the plane.
    #[inline]
    pub fn contains(&self, x: i64, y: i64, w: usize, h: usize) -> bool {
        x >= 0 && y >= 0 && x as usize + w <= self.width && y as usize + h <= self.height
    }
}

/// A position inside a plane; the top-left corner of a block window.
#[derive(Clone, Copy, Debug)]
pub struct Window<'a> {
    pub plane: Plane<'a>,
    pub x: i64,
    pub y: i64,
}

impl<'a> Window<'a> {
    pub fn new(plane: Plane<'a>, x: i64, y: i64) -> Self {
        Self { plane, x, y }
    }

    fn check(&self, w: usize, h: usize) -> Result<(), MetricsError> {
        if self.plane.contains(self.x, self.y, w, h) {
            Ok(())
        } else {
            Err(MetricsError::OutOfBounds {
                x: self.x,
                y: self.y,
                w,
                h,
                plane_w: self.plane.width,
                plane_h: self.plane.height,
            })
        }
    }
}

/// 16x16 luma window. `p(i, j)` takes `i` horizontal and `j` vertical.
#[derive(Clone, Copy, Debug)]
pub struct MacroblockView<'a> {
    plane: Plane<'a>,
    x0: usize,
    y0: usize,
}

impl<'a> MacroblockView<'a> {
    /// View of the macroblock at MB-grid coordinates (mb_x, mb_y).
    pub fn new(frame: &'a Frame, mb_x: usize, mb_y: usize) -> Self {
        Self::from_plane(Plane::luma(frame), mb_x, mb_y)
    }

    pub fn from_plane(plane: Plane<'a>, mb_x: usize, mb_y: usize) -> Self {
        let (x0, y0) = (mb_x * MB_SIZE, mb_y * MB_SIZE);
        assert!(
            x0 + MB_SIZE <= plane.width && y0 + MB_SIZE <= plane.height,
            "macroblock ({mb_x},{mb_y}) outside {}x{} plane",
            plane.width,
            plane.height
        );
        Self { plane, x0, y0 }
    }

    #[inline]
    pub fn p(&self, i: usize, j: usize) -> u8 {
        self.plane.at(self.x0 + i, self.y0 + j)
    }

    #[inline]
    pub fn row(&self, j: usize) -> &'a [u8] {
        self.plane.row(self.x0, self.y0 + j, MB_SIZE)
    }

    pub fn origin(&self) -> (usize, usize) {
        (self.x0, self.y0)
    }

    pub fn plane(&self) -> Plane<'a> {
        self.plane
    }

    pub fn window(&self) -> Window<'a> {
        Window::new(self.plane, self.x0 as i64, self.y0 as i64)
    }
}

/// Intensity-weighted centroid in MB-local coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Centroid {
    pub gx: f64,
    pub gy: f64,
}

/// Absolute value of the signed sum of co-located pixel differences.
/// Zero-mean noise cancels out, unlike SAD.
pub fn sod(mb_c: &MacroblockView, mb_r: &MacroblockView) -> u32 {
    let mut sum = 0i32;
    for j in 0..MB_SIZE {
        let c: i32 = mb_c.row(j).iter().map(|&v| v as i32).sum();
        let r: i32 = mb_r.row(j).iter().map(|&v| v as i32).sum();
        sum += c - r;
    }
    sum.unsigned_abs()
}

pub fn cog(mb: &MacroblockView) -> Centroid {
    let (mut total, mut wx, mut wy) = (0u64, 0u64, 0u64);
    for j in 0..MB_SIZE {
        for (i, &v) in mb.row(j).iter().enumerate() {
            let v = v as u64;
            total += v;
            wx += v * i as u64;
            wy += v * j as u64;
        }
    }
    if total == 0 {
        // Empty block: geometric centre, so two empty blocks have zero distance.
        return Centroid { gx: 7.5, gy: 7.5 };
    }
    Centroid {
        gx: wx as f64 / total as f64,
        gy: wy as f64 / total as f64,
    }
}

/// Euclidean distance between the centroids of two macroblocks.
pub fn dcog(mb_c: &MacroblockView, mb_r: &MacroblockView) -> f64 {
    let (c, r) = (cog(mb_c), cog(mb_r));
    (c.gx - r.gx).hypot(c.gy - r.gy)
}

fn check_block_size(w: usize, h: usize) -> Result<(), MetricsError> {
    if matches!(w, 4 | 8 | 16) && matches!(h, 4 | 8 | 16) {
        Ok(())
    } else {
        Err(MetricsError::BlockSize { w, h })
    }
}

/// Sum of absolute differences over a `w`x`h` window.
pub fn block_sad(c: Window, r: Window, w: usize, h: usize) -> Result<u32, MetricsError> {
    check_block_size(w, h)?;
    c.check(w, h)?;
    r.check(w, h)?;
    Ok(sad_unchecked(
        c.plane,
        c.x as usize,
        c.y as usize,
        r.plane,
        r.x as usize,
        r.y as usize,
        w,
        h,
    ))
}

#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn sad_unchecked(
    a: Plane,
    ax: usize,
    ay: usize,
    b: Plane,
    bx: usize,
    by: usize,
    w: usize,
    h: usize,
) -> u32 {
    let mut sum = 0u32;
    for row in 0..h {
        let ra = a.row(ax, ay + row, w);
        let rb = b.row(bx, by + row, w);
        sum += ra
            .iter()
            .zip(rb)
            .map(|(&p, &q)| (p as i32 - q as i32).unsigned_abs())
            .sum::<u32>();
    }
    sum
}

/// Sum of squared differences between two equal-length sample slices.
pub fn ssd(a: &[u8], b: &[u8]) -> u64 {
    a.iter()
        .zip(b)
        .map(|(&p, &q)| {
            let d = p as i64 - q as i64;
            (d * d) as u64
        })
        .sum()
}

pub const PSNR_CAP_DB: f64 = 99.99;

/// PSNR for 8-bit samples from a total squared error over `count` samples.
pub fn psnr_from_sse(sse: u64, count: usize) -> f64 {
    if sse == 0 {
        return PSNR_CAP_DB;
    }
    let mse = sse as f64 / count as f64;
    (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP_DB)
}

pub fn frame_psnr_y(a: &Frame, b: &Frame) -> Result<f64, MetricsError> {
    if a.width != b.width || a.height != b.height {
        return Err(MetricsError::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(psnr_from_sse(ssd(&a.y, &b.y), a.y.len()))
}

/// Length in bits of the unsigned Exp-Golomb code for `v`.
#[inline]
pub fn ue_golomb_len(v: u32) -> u32 {
    let floor_log2 = 63 - (v as u64 + 1).leading_zeros();
    2 * floor_log2 + 1
}

/// Maps a signed value onto the unsigned Exp-Golomb code number (se(v)).
#[inline]
pub fn signed_code_num(v: i32) -> u32 {
    if v > 0 {
        2 * v as u32 - 1
    } else {
        2 * v.unsigned_abs()
    }
}

const QSTEP_BASE: [f64; 6] = [0.625, 0.6875, 0.8125, 0.875, 1.0, 1.125];

pub fn qstep(qp: u8) -> Result<f64, MetricsError> {
    if qp > 51 {
        return Err(MetricsError::QpRange(qp as i32));
    }
    Ok(QSTEP_BASE[qp as usize % 6] * (1u32 << (qp / 6)) as f64)
}

/// Per-QP quantizer with precomputed step.
#[derive(Clone, Copy, Debug)]
pub struct Quantizer {
    step: f64,
}

impl Quantizer {
    pub fn new(qp: u8) -> Result<Self, MetricsError> {
        Ok(Self { step: qstep(qp)? })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Returns (level, reconstructed residual). Magnitudes round to nearest
    /// with ties toward zero, so an error of exactly half a step is not coded.
    #[inline]
    pub fn quant_recon(&self, r: i32) -> (i32, i32) {
        let mag = r.unsigned_abs() as f64 / self.step;
        let level = (mag - 0.5).ceil().max(0.0) as i32;
        let level = if r < 0 { -level } else { level };
        let recon = (level as f64 * self.step).round() as i32;
        (level, recon)
    }
}

pub fn quant_recon(r: i32, qp: u8) -> Result<(i32, i32), MetricsError> {
    Ok(Quantizer::new(qp)?.quant_recon(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mb_frame(mut f: impl FnMut(usize, usize) -> u8) -> Frame {
        let mut fr = Frame::filled(0, 16, 16, 0, 128);
        for j in 0..16 {
            for i in 0..16 {
                fr.y[j * 16 + i] = f(i, j);
            }
        }
        fr
    }

    fn view(f: &Frame) -> MacroblockView<'_> {
        MacroblockView::new(f, 0, 0)
    }

    #[test]
    fn sod_examples() {
        let a = mb_frame(|_, _| 10);
        let b = mb_frame(|_, _| 9);
        assert_eq!(sod(&view(&a), &view(&a)), 0);
        assert_eq!(sod(&view(&a), &view(&b)), 256);
        let checker = mb_frame(|i, j| if (i + j) % 2 == 0 { 11 } else { 9 });
        assert_eq!(sod(&view(&checker), &view(&a)), 0);
        let sad = block_sad(view(&checker).window(), view(&a).window(), 16, 16).unwrap();
        assert_eq!(sad, 256);
        let full = mb_frame(|_, _| 255);
        let zero = mb_frame(|_, _| 0);
        assert_eq!(sod(&view(&full), &view(&zero)), 65280);
    }

    #[test]
    fn cog_examples() {
        assert_eq!(cog(&view(&mb_frame(|_, _| 77))), Centroid { gx: 7.5, gy: 7.5 });
        let point = mb_frame(|i, j| if (i, j) == (3, 12) { 200 } else { 0 });
        assert_eq!(cog(&view(&point)), Centroid { gx: 3.0, gy: 12.0 });
        let pair = mb_frame(|i, j| if j == 0 && (i == 0 || i == 15) { 100 } else { 0 });
        assert_eq!(cog(&view(&pair)), Centroid { gx: 7.5, gy: 0.0 });
        assert_eq!(cog(&view(&mb_frame(|_, _| 0))), Centroid { gx: 7.5, gy: 7.5 });
    }

    #[test]
    fn dcog_examples() {
        let a = mb_frame(|i, j| (i * 7 + j * 3) as u8);
        assert_eq!(dcog(&view(&a), &view(&a)), 0.0);
        let p = mb_frame(|i, j| if (i, j) == (10, 4) { 50 } else { 0 });
        let q = mb_frame(|i, j| if (i, j) == (7, 0) { 90 } else { 0 });
        assert!((dcog(&view(&p), &view(&q)) - 5.0).abs() < 1e-12);
        let z = mb_frame(|_, _| 0);
        assert_eq!(dcog(&view(&z), &view(&z)), 0.0);
    }

    #[test]
    fn sad_examples_and_errors() {
        let a = mb_frame(|_, _| 10);
        let b = mb_frame(|_, _| 9);
        let (wa, wb) = (view(&a).window(), view(&b).window());
        assert_eq!(block_sad(wa, wa, 16, 16).unwrap(), 0);
        assert_eq!(block_sad(wa, wb, 16, 16).unwrap(), 256);
        assert_eq!(block_sad(wa, wb, 4, 4).unwrap(), 16);
        assert_eq!(block_sad(wa, wb, 8, 4).unwrap(), 32);
        let off = Window::new(wa.plane, 4, 0);
        assert!(matches!(block_sad(off, wb, 16, 16), Err(MetricsError::OutOfBounds { .. })));
        let neg = Window::new(wa.plane, -1, 0);
        assert!(matches!(block_sad(neg, wb, 4, 4), Err(MetricsError::OutOfBounds { .. })));
        assert!(matches!(block_sad(wa, wb, 2, 2), Err(MetricsError::BlockSize { .. })));
    }

    #[test]
    fn psnr_examples() {
        let a = Frame::filled(0, 32, 32, 100, 128);
        let b = Frame::filled(0, 32, 32, 101, 128);
        assert_eq!(frame_psnr_y(&a, &a).unwrap(), 99.99);
        assert!((frame_psnr_y(&a, &b).unwrap() - 48.1308).abs() < 1e-3);
        let black = Frame::filled(0, 32, 32, 0, 128);
        let white = Frame::filled(0, 32, 32, 255, 128);
        assert_eq!(frame_psnr_y(&black, &white).unwrap(), 0.0);
        let small = Frame::filled(0, 16, 16, 0, 128);
        assert!(frame_psnr_y(&a, &small).is_err());
    }

    #[test]
    fn golomb_lengths() {
        let expect = [(0, 1), (1, 3), (2, 3), (3, 5), (6, 5), (7, 7), (14, 7), (15, 9)];
        for (v, len) in expect {
            assert_eq!(ue_golomb_len(v), len, "v = {v}");
        }
        assert_eq!(ue_golomb_len(u32::MAX), 65);
        let mut prev = 0;
        for v in 0..5000 {
            let l = ue_golomb_len(v);
            assert!(l >= prev && l % 2 == 1);
            let brute = 2 * (((v as f64) + 1.0).log2().floor() as u32) + 1;
            assert_eq!(l, brute);
            prev = l;
        }
    }

    #[test]
    fn quantizer_examples() {
        assert_eq!(qstep(28).unwrap(), 16.0);
        assert_eq!(qstep(4).unwrap(), 1.0);
        assert_eq!(quant_recon(33, 28).unwrap(), (2, 32));
        assert_eq!(quant_recon(7, 28).unwrap(), (0, 0));
        assert_eq!(quant_recon(-10, 4).unwrap(), (-10, -10));
        assert_eq!(quant_recon(8, 28).unwrap(), (0, 0));
        assert_eq!(quant_recon(9, 28).unwrap(), (1, 16));
        assert_eq!(quant_recon(0, 51).unwrap(), (0, 0));
        assert_eq!(quant_recon(1, 52), Err(MetricsError::QpRange(52)));
    }

    #[test]
    fn quantizer_monotone_and_bounded() {
        for r in -255..=255 {
            let mut prev = i32::MAX;
            for qp in 0..=51u8 {
                let q = Quantizer::new(qp).unwrap();
                let (level, recon) = q.quant_recon(r);
                assert!(level.abs() <= prev, "r={r} qp={qp}");
                assert!((r - recon).abs() as f64 <= q.step() / 2.0 + 0.5, "r={r} qp={qp}");
                prev = level.abs();
            }
        }
    }

    fn random_mb(rng: &mut ChaCha8Rng) -> Frame {
        mb_frame(|_, _| rng.gen())
    }

    #[test]
    fn metric_symmetry_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let (a, b) = (random_mb(&mut rng), random_mb(&mut rng));
            let (va, vb) = (view(&a), view(&b));
            let s = sod(&va, &vb);
            assert_eq!(s, sod(&vb, &va));
            assert!(s <= block_sad(va.window(), vb.window(), 16, 16).unwrap());
            assert_eq!(dcog(&va, &vb), dcog(&vb, &va));
            let c = cog(&va);
            assert!((0.0..=15.0).contains(&c.gx) && (0.0..=15.0).contains(&c.gy));
        }
    }
}
