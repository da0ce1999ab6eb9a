//! Artifact formats and atomic file writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::bd_metrics::RdPoint;
use crate::encoder::{MbRecord, OperatingPoint};
use crate::mode_classifier::ClassLabel;

/// Writes to a sibling temp file and renames it over `path`, so readers
/// never see a partial artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().with_context(|| format!("{} is not a file path", path.display()))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(e).with_context(|| format!("writing {}", path.display()));
    }
    Ok(())
}

/// `report.json` -> `report.baseline.json`.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{suffix}"),
    };
    path.with_file_name(name)
}

pub const RD_HEADER: &str = "qp,rate_kbps,psnr_db";

/// Floats use the shortest representation that parses back exactly.
pub fn rd_csv(points: &[OperatingPoint]) -> String {
    let mut s = format!("{RD_HEADER}\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.qp, p.rate_kbps, p.psnr_db));
    }
    s
}

pub fn parse_rd_csv(text: &str) -> Result<Vec<RdPoint>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim() == RD_HEADER => {}
        Some((_, header)) => bail!("expected header `{RD_HEADER}`, found `{header}`"),
        None => bail!("empty RD file"),
    }
    lines
        .map(|(n, line)| {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [_, rate, psnr] = fields[..] else {
                bail!("line {}: expected 3 fields", n + 1);
            };
            let rate: f64 = rate.parse().with_context(|| format!("line {}: bad rate `{rate}`", n + 1))?;
            let psnr: f64 = psnr.parse().with_context(|| format!("line {}: bad psnr `{psnr}`", n + 1))?;
            if !(rate.is_finite() && rate > 0.0 && psnr.is_finite()) {
                bail!("line {}: rate must be positive and values finite", n + 1);
            }
            Ok(RdPoint::new(rate, psnr))
        })
        .collect()
}

pub const MAP_HEADER: &str = "frame,mb_x,mb_y,sod,dcog,class,mode";

/// Key-picture rows leave the analysis columns empty.
pub fn class_map_csv(mbs: &[MbRecord]) -> String {
    let mut s = format!("{MAP_HEADER}\n");
    for mb in mbs {
        let opt = |v: Option<String>| v.unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            mb.frame,
            mb.mb_x,
            mb.mb_y,
            opt(mb.sod.map(|v| v.to_string())),
            opt(mb.dcog.map(|v| format!("{v:.6}"))),
            opt(mb.class.map(|c| c.to_string())),
            mb.mode
        ));
    }
    s
}

/// One binary P5 image per frame, concatenated. Unclassified (key) MBs are
/// black.
pub fn class_map_pgm(mbs: &[MbRecord], cols: usize, rows: usize, frames: usize) -> Vec<u8> {
    let mut grids = vec![vec![0u8; cols * rows]; frames];
    for mb in mbs {
        grids[mb.frame][mb.mb_y * cols + mb.mb_x] = mb.class.map_or(0, ClassLabel::gray_level);
    }
    let mut out = Vec::new();
    for g in grids {
        out.extend_from_slice(format!("P5\n{cols} {rows}\n255\n").as_bytes());
        out.extend_from_slice(&g);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rd_csv_round_trip() {
        let pts = vec![
            OperatingPoint {
                name: "EL2".into(),
                qp: 24,
                frame_rate: 30.0,
                rate_kbps: 1234.567890123,
                psnr_db: 38.123456789012345,
            },
            OperatingPoint {
                name: "EL2".into(),
                qp: 28,
                frame_rate: 30.0,
                rate_kbps: 0.1 + 0.2,
                psnr_db: 35.0,
            },
        ];
        let parsed = parse_rd_csv(&rd_csv(&pts)).unwrap();
        for (p, q) in pts.iter().zip(&parsed) {
            assert_eq!(p.rate_kbps.to_bits(), q.rate.to_bits());
            assert_eq!(p.psnr_db.to_bits(), q.psnr.to_bits());
        }
    }

    #[test]
    fn rd_csv_errors() {
        assert!(parse_rd_csv("").is_err());
        assert!(parse_rd_csv("rate,psnr\n1,2\n").is_err());
        assert!(parse_rd_csv("qp,rate_kbps,psnr_db\n24,abc,30\n").is_err());
        assert!(parse_rd_csv("qp,rate_kbps,psnr_db\n24,-1,30\n").is_err());
        assert!(parse_rd_csv("qp,rate_kbps,psnr_db\n24,1\n").is_err());
    }

    #[test]
    fn suffixes() {
        assert_eq!(with_suffix(Path::new("out/r.json"), "baseline"), PathBuf::from("out/r.baseline.json"));
        assert_eq!(with_suffix(Path::new("r"), "qp24"), PathBuf::from("r.qp24"));
    }

    #[test]
    fn pgm_layout() {
        let pgm = class_map_pgm(&[], 22, 18, 2);
        let header = b"P5\n22 18\n255\n";
        assert_eq!(pgm.len(), 2 * (header.len() + 22 * 18));
        assert!(pgm.starts_with(header));
    }
}
