//! Raw video I/O: YUV4MPEG2 and headerless I420, plus the 2x resolution
//! conversions used to derive the base layer and the inter-layer predictor.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

pub const MB_SIZE: usize = 16;

const Y4M_MAGIC: &[u8] = b"YUV4MPEG2";
const FRAME_TAG: &[u8] = b"FRAME";

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("malformed Y4M header: {0}")]
    MalformedHeader(String),
    #[error("unsupported chroma mode `{0}` (only 4:2:0 is accepted)")]
    UnsupportedChroma(String),
    #[error("dimensions {width}x{height} are not a multiple of {multiple}")]
    Misaligned {
        width: usize,
        height: usize,
        multiple: usize,
    },
    #[error("truncated frame {index}: expected {expected} payload bytes, got {got}")]
    TruncatedFrame {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("malformed frame marker at frame {0}")]
    MalformedFrame(usize),
    #[error("raw file size {size} is not a multiple of the frame size {frame_size}")]
    RawSize { size: usize, frame_size: usize },
    #[error("frame {index} has dimensions {width}x{height}, sequence is {seq_width}x{seq_height}")]
    DimensionMismatch {
        index: usize,
        width: usize,
        height: usize,
        seq_width: usize,
        seq_height: usize,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Frame rate as an exact rational, so Y4M headers round-trip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FrameRate {
    pub num: u32,
    pub den: u32,
}

impl FrameRate {
    pub const fn new(num: u32, den: u32) -> Self {
        Self { num, den }
    }

    pub const fn from_hz(hz: u32) -> Self {
        Self { num: hz, den: 1 }
    }

    pub fn hz(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Rate after keeping one frame out of `divisor`.
    pub fn divided(&self, divisor: u32) -> Self {
        Self {
            num: self.num,
            den: self.den * divisor,
        }
    }
}

/// Planar 8-bit 4:2:0 picture.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub index: usize,
    pub width: usize,
    pub height: usize,
    pub y: Vec<u8>,
    pub u: Vec<u8>,
    pub v: Vec<u8>,
}

impl Frame {
    /// Frame filled with constant planes. Dimensions must be MB-aligned.
    pub fn filled(index: usize, width: usize, height: usize, luma: u8, chroma: u8) -> Self {
        debug_assert!(width.is_multiple_of(MB_SIZE) && height.is_multiple_of(MB_SIZE));
        Self {
            index,
            width,
            height,
            y: vec![luma; width * height],
            u: vec![chroma; (width / 2) * (height / 2)],
            v: vec![chroma; (width / 2) * (height / 2)],
        }
    }

    pub fn from_planes(
        index: usize,
        width: usize,
        height: usize,
        y: Vec<u8>,
        u: Vec<u8>,
        v: Vec<u8>,
    ) -> Result<Self, VideoError> {
        check_mb_aligned(width, height)?;
        let chroma = (width / 2) * (height / 2);
        if y.len() != width * height || u.len() != chroma || v.len() != chroma {
            return Err(VideoError::TruncatedFrame {
                index,
                expected: frame_bytes(width, height),
                got: y.len() + u.len() + v.len(),
            });
        }
        Ok(Self {
            index,
            width,
            height,
            y,
            u,
            v,
        })
    }

    pub fn chroma_width(&self) -> usize {
        self.width / 2
    }

    pub fn chroma_height(&self) -> usize {
        self.height / 2
    }

    pub fn mb_cols(&self) -> usize {
        self.width / MB_SIZE
    }

    pub fn mb_rows(&self) -> usize {
        self.height / MB_SIZE
    }

    #[inline]
    pub fn luma(&self, x: usize, y: usize) -> u8 {
        self.y[y * self.width + x]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sequence {
    pub width: usize,
    pub height: usize,
    pub frame_rate: FrameRate,
    pub frames: Vec<Frame>,
}

impl Sequence {
    pub fn new(width: usize, height: usize, frame_rate: FrameRate) -> Result<Self, VideoError> {
        check_mb_aligned(width, height)?;
        Ok(Self {
            width,
            height,
            frame_rate,
            frames: Vec::new(),
        })
    }

    /// Appends a frame, renumbering it to keep indices contiguous.
    pub fn push(&mut self, mut frame: Frame) -> Result<(), VideoError> {
        if frame.width != self.width || frame.height != self.height {
            return Err(VideoError::DimensionMismatch {
                index: frame.index,
                width: frame.width,
                height: frame.height,
                seq_width: self.width,
                seq_height: self.height,
            });
        }
        frame.index = self.frames.len();
        self.frames.push(frame);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

pub fn frame_bytes(width: usize, height: usize) -> usize {
    width * height + 2 * (width / 2) * (height / 2)
}

fn check_mb_aligned(width: usize, height: usize) -> Result<(), VideoError> {
    if width == 0 || height == 0 || !width.is_multiple_of(MB_SIZE) || !height.is_multiple_of(MB_SIZE) {
        return Err(VideoError::Misaligned {
            width,
            height,
            multiple: MB_SIZE,
        });
    }
    Ok(())
}

fn parse_header(line: &[u8]) -> Result<(usize, usize, FrameRate), VideoError> {
    let text = std::str::from_utf8(line)
        .map_err(|_| VideoError::MalformedHeader("header is not ASCII".into()))?;
    let mut tokens = text.split(' ').filter(|t| !t.is_empty());
    if tokens.next() != Some("YUV4MPEG2") {
        return Err(VideoError::MalformedHeader("missing YUV4MPEG2 magic".into()));
    }
    let (mut width, mut height, mut rate) = (None, None, None);
    let mut chroma = None;
    for token in tokens {
        let (tag, value) = token.split_at(1);
        match tag {
            "W" => width = Some(parse_dim(value, "W")?),
            "H" => height = Some(parse_dim(value, "H")?),
            "F" => {
                let (num, den) = value
                    .split_once(':')
                    .ok_or_else(|| VideoError::MalformedHeader(format!("bad frame rate `{value}`")))?;
                let num: u32 = num
                    .parse()
                    .map_err(|_| VideoError::MalformedHeader(format!("bad frame rate `{value}`")))?;
                let den: u32 = den
                    .parse()
                    .map_err(|_| VideoError::MalformedHeader(format!("bad frame rate `{value}`")))?;
                if num == 0 || den == 0 {
                    return Err(VideoError::MalformedHeader(format!("bad frame rate `{value}`")));
                }
                rate = Some(FrameRate { num, den });
            }
            "C" => chroma = Some(value.to_string()),
            // Interlacing, aspect ratio and extensions carry no information we use.
            "I" | "A" | "X" => {}
            _ => {
                return Err(VideoError::MalformedHeader(format!("unknown tag `{token}`")));
            }
        }
    }
    if let Some(c) = chroma {
        if !matches!(c.as_str(), "420" | "420jpeg" | "420paldv" | "420mpeg2") {
            return Err(VideoError::UnsupportedChroma(c));
        }
    }
    let width = width.ok_or_else(|| VideoError::MalformedHeader("missing W".into()))?;
    let height = height.ok_or_else(|| VideoError::MalformedHeader("missing H".into()))?;
    let rate = rate.ok_or_else(|| VideoError::MalformedHeader("missing F".into()))?;
    check_mb_aligned(width, height)?;
    Ok((width, height, rate))
}

fn parse_dim(value: &str, tag: &str) -> Result<usize, VideoError> {
    value
        .parse()
        .map_err(|_| VideoError::MalformedHeader(format!("bad {tag} value `{value}`")))
}

/// Parses a complete YUV4MPEG2 stream held in memory.
pub fn parse_y4m(bytes: &[u8]) -> Result<Sequence, VideoError> {
    if !bytes.starts_with(Y4M_MAGIC) {
        return Err(VideoError::MalformedHeader("missing YUV4MPEG2 magic".into()));
    }
    let header_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| VideoError::MalformedHeader("unterminated header".into()))?;
    let (width, height, rate) = parse_header(&bytes[..header_end])?;
    let mut seq = Sequence::new(width, height, rate)?;
    let luma = width * height;
    let chroma = luma / 4;
    let payload = frame_bytes(width, height);

    let mut pos = header_end + 1;
    while pos < bytes.len() {
        let index = seq.len();
        let rest = &bytes[pos..];
        if !rest.starts_with(FRAME_TAG) {
            return Err(VideoError::MalformedFrame(index));
        }
        let line_end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(VideoError::MalformedFrame(index))?;
        // "FRAME" may carry parameters; anything else glued to the tag is garbage.
        if line_end > FRAME_TAG.len() && rest[FRAME_TAG.len()] != b' ' {
            return Err(VideoError::MalformedFrame(index));
        }
        pos += line_end + 1;
        let available = bytes.len() - pos;
        if available < payload {
            return Err(VideoError::TruncatedFrame {
                index,
                expected: payload,
                got: available,
            });
        }
        let data = &bytes[pos..pos + payload];
        seq.frames.push(Frame {
            index,
            width,
            height,
            y: data[..luma].to_vec(),
            u: data[luma..luma + chroma].to_vec(),
            v: data[luma + chroma..].to_vec(),
        });
        pos += payload;
    }
    Ok(seq)
}

pub fn read_y4m(path: impl AsRef<Path>) -> Result<Sequence, VideoError> {
    parse_y4m(&fs::read(path)?)
}

/// Splits headerless I420 bytes into frames.
pub fn parse_raw_yuv(
    bytes: &[u8],
    width: usize,
    height: usize,
    frame_rate: FrameRate,
) -> Result<Sequence, VideoError> {
    let mut seq = Sequence::new(width, height, frame_rate)?;
    let frame_size = frame_bytes(width, height);
    if !bytes.len().is_multiple_of(frame_size) {
        return Err(VideoError::RawSize {
            size: bytes.len(),
            frame_size,
        });
    }
    let luma = width * height;
    let chroma = luma / 4;
    for (index, data) in bytes.chunks_exact(frame_size).enumerate() {
        seq.frames.push(Frame {
            index,
            width,
            height,
            y: data[..luma].to_vec(),
            u: data[luma..luma + chroma].to_vec(),
            v: data[luma + chroma..].to_vec(),
        });
    }
    Ok(seq)
}

pub fn read_raw_yuv(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    frame_rate: FrameRate,
) -> Result<Sequence, VideoError> {
    check_mb_aligned(width, height)?;
    parse_raw_yuv(&fs::read(path)?, width, height, frame_rate)
}

/// Writes `seq` as YUV4MPEG2 and returns the number of bytes emitted.
pub fn write_y4m<W: Write>(seq: &Sequence, sink: &mut W) -> io::Result<usize> {
    let header = format!(
        "YUV4MPEG2 W{} H{} F{}:{} C420\n",
        seq.width, seq.height, seq.frame_rate.num, seq.frame_rate.den
    );
    sink.write_all(header.as_bytes())?;
    let mut written = header.len();
    for frame in &seq.frames {
        sink.write_all(b"FRAME\n")?;
        sink.write_all(&frame.y)?;
        sink.write_all(&frame.u)?;
        sink.write_all(&frame.v)?;
        written += 6 + frame.y.len() + frame.u.len() + frame.v.len();
    }
    Ok(written)
}

fn downsample_plane(src: &[u8], width: usize, height: usize) -> Vec<u8> {
    let (ow, oh) = (width / 2, height / 2);
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        let r0 = &src[2 * y * width..][..width];
        let r1 = &src[(2 * y + 1) * width..][..width];
        for x in 0..ow {
            let sum = r0[2 * x] as u32 + r0[2 * x + 1] as u32 + r1[2 * x] as u32 + r1[2 * x + 1] as u32;
            out.push(((sum + 2) >> 2) as u8);
        }
    }
    out
}

/// Halves each dimension with a rounded 2x2 mean per plane.
pub fn downsample_2x2(frame: &Frame) -> Result<Frame, VideoError> {
    if !frame.width.is_multiple_of(2 * MB_SIZE) || !frame.height.is_multiple_of(2 * MB_SIZE) {
        return Err(VideoError::Misaligned {
            width: frame.width,
            height: frame.height,
            multiple: 2 * MB_SIZE,
        });
    }
    let (cw, ch) = (frame.chroma_width(), frame.chroma_height());
    Ok(Frame {
        index: frame.index,
        width: frame.width / 2,
        height: frame.height / 2,
        y: downsample_plane(&frame.y, frame.width, frame.height),
        u: downsample_plane(&frame.u, cw, ch),
        v: downsample_plane(&frame.v, cw, ch),
    })
}

// Co-sited bilinear: even outputs copy the source sample, odd outputs sit
// midway to the next one. The last column/row replicates its neighbour.
fn upsample_plane(src: &[u8], width: usize, height: usize) -> Vec<u8> {
    let (ow, oh) = (width * 2, height * 2);
    // Horizontal pass at 2x precision.
    let mut rows = vec![0u16; ow * height];
    for y in 0..height {
        let s = &src[y * width..][..width];
        let d = &mut rows[y * ow..][..ow];
        for x in 0..width {
            let a = s[x] as u16;
            let b = s[(x + 1).min(width - 1)] as u16;
            d[2 * x] = 2 * a;
            d[2 * x + 1] = a + b;
        }
    }
    let mut out = vec![0u8; ow * oh];
    for y in 0..height {
        let r0 = &rows[y * ow..][..ow];
        let r1 = &rows[(y + 1).min(height - 1) * ow..][..ow];
        for x in 0..ow {
            let even = (2 * r0[x] + 2) >> 2;
            let odd = (r0[x] + r1[x] + 2) >> 2;
            out[2 * y * ow + x] = even.min(255) as u8;
            out[(2 * y + 1) * ow + x] = odd.min(255) as u8;
        }
    }
    out
}

/// Doubles each dimension with separable bilinear interpolation.
pub fn upsample_bilinear_2x(frame: &Frame) -> Frame {
    let (cw, ch) = (frame.chroma_width(), frame.chroma_height());
    Frame {
        index: frame.index,
        width: frame.width * 2,
        height: frame.height * 2,
        y: upsample_plane(&frame.y, frame.width, frame.height),
        u: upsample_plane(&frame.u, cw, ch),
        v: upsample_plane(&frame.v, cw, ch),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray_seq(width: usize, height: usize, frames: usize) -> Sequence {
        let mut seq = Sequence::new(width, height, FrameRate::from_hz(15)).unwrap();
        for i in 0..frames {
            seq.push(Frame::filled(i, width, height, 128, 128)).unwrap();
        }
        seq
    }

    #[test]
    fn empty_sequence_is_header_only() {
        let seq = gray_seq(176, 144, 0);
        let mut out = Vec::new();
        let n = write_y4m(&seq, &mut out).unwrap();
        assert_eq!(out, b"YUV4MPEG2 W176 H144 F15:1 C420\n");
        assert_eq!(n, out.len());
        let back = parse_y4m(&out).unwrap();
        assert!(back.is_empty());
        assert_eq!((back.width, back.height), (176, 144));
    }

    #[test]
    fn qcif_three_frames() {
        let seq = gray_seq(176, 144, 3);
        let mut out = Vec::new();
        write_y4m(&seq, &mut out).unwrap();
        let back = parse_y4m(&out).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.frame_rate, FrameRate::from_hz(15));
        assert_eq!(back.frames[2].index, 2);
    }

    #[test]
    fn one_gray_frame_size() {
        let seq = gray_seq(176, 144, 1);
        let mut out = Vec::new();
        let n = write_y4m(&seq, &mut out).unwrap();
        let header = b"YUV4MPEG2 W176 H144 F15:1 C420\n".len();
        assert_eq!(n, header + 6 + 176 * 144 * 3 / 2);
    }

    #[test]
    fn rejects_422() {
        let err = parse_y4m(b"YUV4MPEG2 W176 H144 F15:1 C422\n").unwrap_err();
        assert!(matches!(err, VideoError::UnsupportedChroma(c) if c == "422"));
    }

    #[test]
    fn rejects_unaligned_and_malformed() {
        assert!(matches!(
            parse_y4m(b"YUV4MPEG2 W170 H144 F15:1 C420\n"),
            Err(VideoError::Misaligned { .. })
        ));
        assert!(matches!(
            parse_y4m(b"YUV4MPEG2 W176 F15:1\n"),
            Err(VideoError::MalformedHeader(_))
        ));
        assert!(matches!(parse_y4m(b"RIFF"), Err(VideoError::MalformedHeader(_))));
        let mut truncated = b"YUV4MPEG2 W16 H16 F30:1 C420\nFRAME\n".to_vec();
        truncated.extend(std::iter::repeat_n(0, 100));
        assert!(matches!(
            parse_y4m(&truncated),
            Err(VideoError::TruncatedFrame { expected: 384, got: 100, .. })
        ));
    }

    #[test]
    fn frame_parameters_are_tolerated() {
        let mut bytes = b"YUV4MPEG2 W16 H16 F30:1 Ip A1:1 C420jpeg\nFRAME Ixyz\n".to_vec();
        bytes.extend(std::iter::repeat_n(7, 384));
        let seq = parse_y4m(&bytes).unwrap();
        assert_eq!(seq.len(), 1);
        assert!(seq.frames[0].y.iter().all(|&s| s == 7));
    }

    #[test]
    fn raw_size_arithmetic() {
        let one = vec![0u8; 176 * 144 * 3 / 2];
        assert_eq!(parse_raw_yuv(&one, 176, 144, FrameRate::from_hz(15)).unwrap().len(), 1);
        let partial = vec![0u8; 176 * 144 * 3 / 2 * 5 / 2];
        assert!(matches!(
            parse_raw_yuv(&partial, 176, 144, FrameRate::from_hz(15)),
            Err(VideoError::RawSize { .. })
        ));
        let ten = vec![0u8; 352 * 288 * 3 / 2 * 10];
        let seq = parse_raw_yuv(&ten, 352, 288, FrameRate::from_hz(30)).unwrap();
        assert_eq!(seq.len(), 10);
        assert_eq!(seq.frames[9].width, 352);
        assert!(matches!(
            parse_raw_yuv(&ten, 350, 288, FrameRate::from_hz(30)),
            Err(VideoError::Misaligned { .. })
        ));
    }

    #[test]
    fn raw_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.yuv");
        std::fs::write(&path, vec![9u8; 32 * 32 * 3 / 2 * 2]).unwrap();
        let seq = read_raw_yuv(&path, 32, 32, FrameRate::from_hz(30)).unwrap();
        assert_eq!(seq.len(), 2);
    }

    #[test]
    fn downsample_rounding() {
        let mut f = Frame::filled(0, 32, 32, 1, 128);
        assert!(downsample_2x2(&f).unwrap().y.iter().all(|&s| s == 1));
        f.y.fill(0);
        f.y[32 + 1] = 4; // (1,1) inside the first 2x2 block
        let d = downsample_2x2(&f).unwrap();
        assert_eq!(d.y[0], 1);
        assert_eq!((d.width, d.height), (16, 16));
        assert!(matches!(
            downsample_2x2(&Frame::filled(0, 48, 32, 0, 0)),
            Err(VideoError::Misaligned { multiple: 32, .. })
        ));
    }

    #[test]
    fn upsample_constant_and_midpoints() {
        let f = Frame::filled(0, 16, 16, 128, 128);
        let up = upsample_bilinear_2x(&f);
        assert_eq!((up.width, up.height), (32, 32));
        assert!(up.y.iter().all(|&s| s == 128));
        assert_eq!(downsample_2x2(&up).unwrap(), f);

        let mut g = Frame::filled(0, 16, 16, 0, 128);
        g.y[0] = 10;
        g.y[1] = 21;
        let up = upsample_bilinear_2x(&g);
        assert_eq!(up.y[0], 10);
        assert_eq!(up.y[1], 16); // (10 + 21 + 1) / 2
        assert_eq!(up.y[2], 21);
    }

    #[test]
    fn down_up_on_gradient_ramp() {
        // Ramp with slope 3 per sample horizontally and 2 vertically.
        let (w, h) = (64, 64);
        let mut f = Frame::filled(0, w, h, 0, 128);
        for y in 0..h {
            for x in 0..w {
                f.y[y * w + x] = (x * 3 + y * 2).min(255) as u8;
            }
        }
        let back = downsample_2x2(&upsample_bilinear_2x(&f)).unwrap();
        // Interior only: the replicated last row/column breaks the ramp.
        for y in 0..h - 1 {
            for x in 0..w - 1 {
                let d = (back.y[y * w + x] as i32 - f.y[y * w + x] as i32).abs();
                assert!(d <= 2, "({x},{y}) error {d}");
            }
        }
    }

    fn mean_pool_oracle(src: &[u8], w: usize, h: usize) -> Vec<u8> {
        let mut out = vec![];
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let mut s = 0u32;
                for dy in 0..2 {
                    for dx in 0..2 {
                        s += src[(2 * oy + dy) * w + 2 * ox + dx] as u32;
                    }
                }
                out.push(((s as f64 / 4.0) + 0.5).floor() as u8);
            }
        }
        out
    }

    fn arb_frame(max_mbs: usize) -> impl Strategy<Value = Frame> {
        (1..=max_mbs, 1..=max_mbs).prop_flat_map(|(mw, mh)| {
            let (w, h) = (mw * 16, mh * 16);
            let c = (w / 2) * (h / 2);
            (
                proptest::collection::vec(any::<u8>(), w * h),
                proptest::collection::vec(any::<u8>(), c),
                proptest::collection::vec(any::<u8>(), c),
            )
                .prop_map(move |(y, u, v)| Frame::from_planes(0, w, h, y, u, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn downsample_matches_pooling_oracle(f in arb_frame(4)) {
            prop_assume!(f.width % 32 == 0 && f.height % 32 == 0);
            let d = downsample_2x2(&f).unwrap();
            prop_assert_eq!(d.y, mean_pool_oracle(&f.y, f.width, f.height));
            prop_assert_eq!(d.u, mean_pool_oracle(&f.u, f.width / 2, f.height / 2));
        }

        #[test]
        fn y4m_round_trip(frames in proptest::collection::vec(arb_frame(2), 0..3), num in 1u32..60, den in 1u32..3) {
            let (w, h) = frames.first().map(|f| (f.width, f.height)).unwrap_or((16, 16));
            let mut seq = Sequence::new(w, h, FrameRate::new(num, den)).unwrap();
            for f in frames.into_iter().filter(|f| f.width == w && f.height == h) {
                seq.push(f).unwrap();
            }
            let mut bytes = Vec::new();
            write_y4m(&seq, &mut bytes).unwrap();
            let back = parse_y4m(&bytes).unwrap();
            prop_assert_eq!(&back, &seq);
            let mut again = Vec::new();
            write_y4m(&back, &mut again).unwrap();
            prop_assert_eq!(again, bytes);
        }
    }
}
