//! Seeded synthetic test sequences.
//!
//! The base texture is a gentle luminance ramp plus sinusoids whose periods
//! divide the macroblock size, plus a little uniform grain. Because every
//! 16-sample run of those sinusoids sums to zero, the mean of any 16x16
//! block follows the ramp, so a translation of the content changes block
//! sums in proportion to the displacement.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::video_io::{Frame, FrameRate, Sequence, VideoError, MB_SIZE};

/// Largest noise amplitude that never clips the base texture.
pub const MAX_NOISE_AMPLITUDE: u8 = 32;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad pattern `{0}`; expected static, pan(dx,dy), object(speed), noise(amplitude) or mixed")]
    BadPattern(String),
    #[error("noise amplitude {0} exceeds {MAX_NOISE_AMPLITUDE}")]
    NoiseTooLarge(u8),
    #[error("bad size `{0}`; expected cif, qcif or WxH")]
    BadSize(String),
    #[error("{width}x{height} is not a multiple of {unit}")]
    Unaligned { width: usize, height: usize, unit: usize },
    #[error(transparent)]
    Video(#[from] VideoError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pattern {
    Static,
    /// Global translation by (dx, dy) pixels per frame, wrapping around.
    Pan { dx: i32, dy: i32 },
    /// Textured square moving right by `speed` pixels per frame.
    Object { speed: i32 },
    /// Static texture plus a zero-sum ±amplitude checkerboard that flips
    /// every frame.
    Noise { amplitude: u8 },
    /// Quadrants: static, pan(2,1), object(4), noise(4).
    Mixed,
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Static => write!(f, "static"),
            Pattern::Pan { dx, dy } => write!(f, "pan({dx},{dy})"),
            Pattern::Object { speed } => write!(f, "object({speed})"),
            Pattern::Noise { amplitude } => write!(f, "noise({amplitude})"),
            Pattern::Mixed => write!(f, "mixed"),
        }
    }
}

fn args(s: &str, name: &str) -> Option<Vec<String>> {
    let inner = s.strip_prefix(name)?.trim().strip_prefix('(')?.strip_suffix(')')?;
    Some(inner.split(',').map(|a| a.trim().to_string()).collect())
}

impl FromStr for Pattern {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        let bad = || SynthError::BadPattern(s.to_string());
        let int = |v: &str| v.parse::<i32>().map_err(|_| bad());
        let pattern = match t.as_str() {
            "static" => Pattern::Static,
            "mixed" => Pattern::Mixed,
            _ => {
                if let Some(a) = args(&t, "pan") {
                    let [dx, dy] = &a[..] else { return Err(bad()) };
                    Pattern::Pan { dx: int(dx)?, dy: int(dy)? }
                } else if let Some(a) = args(&t, "object") {
                    let [speed] = &a[..] else { return Err(bad()) };
                    Pattern::Object { speed: int(speed)? }
                } else if let Some(a) = args(&t, "noise") {
                    let [amp] = &a[..] else { return Err(bad()) };
                    let amplitude: u8 = amp.parse().map_err(|_| bad())?;
                    if amplitude > MAX_NOISE_AMPLITUDE {
                        return Err(SynthError::NoiseTooLarge(amplitude));
                    }
                    Pattern::Noise { amplitude }
                } else {
                    return Err(bad());
                }
            }
        };
        Ok(pattern)
    }
}

/// `cif`, `qcif` or `WxH`.
pub fn parse_size(s: &str) -> Result<(usize, usize), SynthError> {
    let t = s.trim().to_ascii_lowercase();
    let size = match t.as_str() {
        "cif" => (352, 288),
        "qcif" => (176, 144),
        _ => {
            let (w, h) = t.split_once('x').ok_or_else(|| SynthError::BadSize(s.to_string()))?;
            let p = |v: &str| v.parse::<usize>().map_err(|_| SynthError::BadSize(s.to_string()));
            (p(w)?, p(h)?)
        }
    };
    if size.0 == 0 || size.1 == 0 || size.0 % MB_SIZE != 0 || size.1 % MB_SIZE != 0 {
        return Err(SynthError::Unaligned {
            width: size.0,
            height: size.1,
            unit: MB_SIZE,
        });
    }
    Ok(size)
}

/// Row-major luma texture.
struct Texture {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Texture {
    fn base(width: usize, height: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phases: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..TAU));
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (xf, yf) = (x as f64, y as f64);
                let smooth = 72.0
                    + 0.2 * xf
                    + 0.1 * yf
                    + 10.0 * (TAU * xf / 16.0 + phases[0]).sin()
                    + 8.0 * (TAU * yf / 16.0 + phases[1]).sin()
                    + 6.0 * (TAU * (xf + yf) / 8.0 + phases[2]).sin();
                let grain: i32 = rng.gen_range(-4..=4);
                data.push((smooth.round() as i32 + grain).clamp(0, 255) as u8);
            }
        }
        Self { width, height, data }
    }

    /// High-contrast blocky texture for moving objects.
    fn object(size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells: Vec<u8> = (0..16).map(|_| rng.gen_range(150..=230)).collect();
        let mut data = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let cell = cells[(y * 4 / size) * 4 + x * 4 / size] as i32;
                data.push((cell + rng.gen_range(-6..=6)).clamp(0, 255) as u8);
            }
        }
        Self {
            width: size,
            height: size,
            data,
        }
    }

    fn at(&self, x: i64, y: i64) -> u8 {
        let x = x.rem_euclid(self.width as i64) as usize;
        let y = y.rem_euclid(self.height as i64) as usize;
        self.data[y * self.width + x]
    }
}

/// Luma of one pattern at frame `t`, `width` x `height`.
fn render(pattern: Pattern, width: usize, height: usize, t: usize, seed: u64) -> Vec<u8> {
    let base = Texture::base(width, height, seed);
    let t64 = t as i64;
    let mut out = vec![0u8; width * height];
    match pattern {
        Pattern::Static => out.copy_from_slice(&base.data),
        Pattern::Pan { dx, dy } => {
            for y in 0..height {
                for x in 0..width {
                    out[y * width + x] = base.at(x as i64 + dx as i64 * t64, y as i64 + dy as i64 * t64);
                }
            }
        }
        Pattern::Object { speed } => {
            out.copy_from_slice(&base.data);
            let size = (width.min(height) / 3).clamp(MB_SIZE, 64);
            let obj = Texture::object(size, seed ^ 0x000b_1ec7);
            let y0 = (height - size) / 2;
            let x0 = (width as i64 / 4 + speed as i64 * t64).rem_euclid(width as i64);
            for oy in 0..size {
                for ox in 0..size {
                    let x = (x0 + ox as i64).rem_euclid(width as i64) as usize;
                    out[(y0 + oy) * width + x] = obj.data[oy * size + ox];
                }
            }
        }
        Pattern::Noise { amplitude } => {
            let a = amplitude as i32;
            for y in 0..height {
                for x in 0..width {
                    let sign = if (x + y + t).is_multiple_of(2) { 1 } else { -1 };
                    out[y * width + x] = (base.data[y * width + x] as i32 + sign * a) as u8;
                }
            }
        }
        Pattern::Mixed => {
            let (qw, qh) = (width / 2, height / 2);
            let quadrants = [
                Pattern::Static,
                Pattern::Pan { dx: 2, dy: 1 },
                Pattern::Object { speed: 4 },
                Pattern::Noise { amplitude: 4 },
            ];
            for (q, &p) in quadrants.iter().enumerate() {
                let tile = render(p, qw, qh, t, seed.wrapping_add(q as u64 + 1));
                let (ox, oy) = ((q % 2) * qw, (q / 2) * qh);
                for y in 0..qh {
                    out[(oy + y) * width + ox..][..qw].copy_from_slice(&tile[y * qw..][..qw]);
                }
            }
        }
    }
    out
}

/// Generates `frames` pictures at 30 Hz with neutral chroma.
pub fn generate(pattern: Pattern, width: usize, height: usize, frames: usize, seed: u64) -> Result<Sequence, SynthError> {
    // Mixed quadrants must stay macroblock aligned.
    let unit = if pattern == Pattern::Mixed { 2 * MB_SIZE } else { MB_SIZE };
    if width == 0 || height == 0 || !width.is_multiple_of(unit) || !height.is_multiple_of(unit) {
        return Err(SynthError::Unaligned { width, height, unit });
    }
    if let Pattern::Noise { amplitude } = pattern {
        if amplitude > MAX_NOISE_AMPLITUDE {
            return Err(SynthError::NoiseTooLarge(amplitude));
        }
    }
    let mut seq = Sequence::new(width, height, FrameRate::from_hz(30))?;
    let chroma = (width / 2) * (height / 2);
    for t in 0..frames {
        let y = render(pattern, width, height, t, seed);
        seq.push(Frame::from_planes(t, width, height, y, vec![128; chroma], vec![128; chroma])?)?;
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_patterns() {
        assert_eq!("static".parse::<Pattern>().unwrap(), Pattern::Static);
        assert_eq!("pan(2,1)".parse::<Pattern>().unwrap(), Pattern::Pan { dx: 2, dy: 1 });
        assert_eq!("pan( -3 , 0 )".parse::<Pattern>().unwrap(), Pattern::Pan { dx: -3, dy: 0 });
        assert_eq!("object(4)".parse::<Pattern>().unwrap(), Pattern::Object { speed: 4 });
        assert_eq!("noise(1)".parse::<Pattern>().unwrap(), Pattern::Noise { amplitude: 1 });
        assert_eq!("MIXED".parse::<Pattern>().unwrap(), Pattern::Mixed);
        for bad in ["", "pan(1)", "pan(a,b)", "wobble", "noise(300)", "object()"] {
            assert!(bad.parse::<Pattern>().is_err(), "{bad}");
        }
        assert!(matches!("noise(40)".parse::<Pattern>(), Err(SynthError::NoiseTooLarge(40))));
        for p in ["static", "pan(2,1)", "object(4)", "noise(3)", "mixed"] {
            assert_eq!(p.parse::<Pattern>().unwrap().to_string(), p);
        }
    }

    #[test]
    fn sizes() {
        assert_eq!(parse_size("cif").unwrap(), (352, 288));
        assert_eq!(parse_size("QCIF").unwrap(), (176, 144));
        assert_eq!(parse_size("64x48").unwrap(), (64, 48));
        assert!(parse_size("65x48").is_err());
        assert!(parse_size("big").is_err());
    }

    #[test]
    fn static_frames_identical() {
        let s = generate(Pattern::Static, 352, 288, 16, 7).unwrap();
        assert_eq!(s.len(), 16);
        assert!(s.frames.iter().all(|f| f.y == s.frames[0].y));
    }

    #[test]
    fn pan_shifts_by_t() {
        let s = generate(Pattern::Pan { dx: 1, dy: 0 }, 64, 48, 5, 3).unwrap();
        let f0 = &s.frames[0];
        for (t, f) in s.frames.iter().enumerate() {
            for y in 0..48 {
                for x in 0..64 {
                    assert_eq!(f.y[y * 64 + x], f0.y[y * 64 + (x + t) % 64]);
                }
            }
        }
    }

    #[test]
    fn noise_keeps_frame_mean() {
        let st = generate(Pattern::Static, 352, 288, 1, 11).unwrap();
        let total = |f: &Frame| f.y.iter().map(|&v| v as u64).sum::<u64>();
        let ns = generate(Pattern::Noise { amplitude: 1 }, 352, 288, 4, 11).unwrap();
        for f in &ns.frames {
            assert_eq!(total(f), total(&st.frames[0]));
            assert_ne!(f.y, st.frames[0].y);
        }
        let big = generate(Pattern::Noise { amplitude: MAX_NOISE_AMPLITUDE }, 352, 288, 2, 11).unwrap();
        assert_eq!(total(&big.frames[1]), total(&st.frames[0]));
    }

    #[test]
    fn block_means_follow_the_ramp() {
        // Sinusoid terms cancel over any 16x16 window, leaving ramp + grain.
        let s = generate(Pattern::Pan { dx: 2, dy: 1 }, 352, 288, 2, 5).unwrap();
        let block = |f: &Frame, x0: usize, y0: usize| -> i64 {
            (0..16).flat_map(|j| (0..16).map(move |i| (i, j))).map(|(i, j)| f.y[(y0 + j) * 352 + x0 + i] as i64).sum()
        };
        let (a, b) = (&s.frames[0], &s.frames[1]);
        let mut diffs = Vec::new();
        for y0 in (16..240).step_by(16) {
            for x0 in (16..300).step_by(16) {
                diffs.push(block(b, x0, y0) - block(a, x0, y0));
            }
        }
        // Ramp slope 0.2 * 2 + 0.1 * 1 per frame over 256 samples ≈ 128.
        let mean = diffs.iter().sum::<i64>() as f64 / diffs.len() as f64;
        assert!((mean - 128.0).abs() < 16.0, "{mean}");
    }

    #[test]
    fn seeded_and_in_range() {
        let a = generate(Pattern::Mixed, 352, 288, 3, 42).unwrap();
        let b = generate(Pattern::Mixed, 352, 288, 3, 42).unwrap();
        let c = generate(Pattern::Mixed, 352, 288, 3, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.frames[0].y, c.frames[0].y);
        assert!(generate(Pattern::Mixed, 48, 48, 1, 0).is_err());
    }
}
