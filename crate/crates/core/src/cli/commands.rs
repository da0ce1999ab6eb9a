use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use super::config::RunConfig;
use super::output::{class_map_csv, class_map_pgm, parse_rd_csv, rd_csv, with_suffix, write_atomic};
use crate::bd_metrics::{bd_psnr, bd_rate, RdPoint};
use crate::encoder::{encode_sequence, EncodeReport, QpTriple, Strategy};
use crate::synth::{generate, parse_size};
use crate::video_io::{write_y4m, Sequence, MB_SIZE};

pub fn cmd_synth(pattern: &str, size: &str, frames: usize, seed: u64, path: &Path, out: &mut dyn Write) -> Result<()> {
    let (width, height) = parse_size(size)?;
    let seq = generate(pattern.parse()?, width, height, frames, seed)?;
    let mut bytes = Vec::new();
    write_y4m(&seq, &mut bytes)?;
    write_atomic(path, &bytes)?;
    writeln!(out, "wrote {} frames {}x{} to {}", seq.len(), width, height, path.display())?;
    Ok(())
}

fn finish(report: EncodeReport, timing: bool) -> EncodeReport {
    if timing {
        report
    } else {
        report.without_timing()
    }
}

/// Encodes `source` once per configured QP.
pub fn encode_all(source: &Sequence, cfg: &RunConfig, strategy: Strategy) -> Result<Vec<EncodeReport>> {
    cfg.qps
        .iter()
        .map(|&qp| {
            let report = encode_sequence(source, &cfg.encoder_for(qp), strategy)
                .with_context(|| format!("encoding at qp {qp} ({strategy})"))?;
            Ok(finish(report, cfg.timing))
        })
        .collect()
}

fn json(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn top_points(reports: &[EncodeReport]) -> Vec<crate::encoder::OperatingPoint> {
    reports.iter().map(|r| r.top_point().clone()).collect()
}

pub fn cmd_encode(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let source = cfg.source.load()?;
    let strategies = cfg.strategy.strategies();
    let mut runs = Vec::new();
    for &strategy in &strategies {
        let reports = encode_all(&source, cfg, strategy)?;
        for r in &reports {
            let p = r.top_point();
            writeln!(
                out,
                "{strategy} qp {}: {:.3} kbps, {:.4} dB, {} evaluations",
                r.qp, p.rate_kbps, p.psnr_db, r.evaluations
            )?;
        }
        runs.push((strategy, reports));
    }
    // Nothing is written until every encode has succeeded.
    let name = |path: &Path, s: Strategy| {
        if strategies.len() > 1 {
            with_suffix(path, &s.to_string())
        } else {
            path.to_path_buf()
        }
    };
    for (strategy, reports) in &runs {
        if let Some(path) = &cfg.report {
            write_atomic(&name(path, *strategy), &json(reports)?)?;
        }
        if let Some(path) = &cfg.rd_csv {
            write_atomic(&name(path, *strategy), rd_csv(&top_points(reports)).as_bytes())?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategyStats {
    pub rate_kbps: f64,
    pub psnr_db: f64,
    pub evaluations: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

impl StrategyStats {
    fn of(r: &EncodeReport) -> Self {
        let p = r.top_point();
        Self {
            rate_kbps: p.rate_kbps,
            psnr_db: p.psnr_db,
            evaluations: r.evaluations,
            wall_time_ms: r.wall_time_ms,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareRow {
    pub qp: QpTriple,
    pub proposed: StrategyStats,
    pub baseline: StrategyStats,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    /// Percent fewer candidate evaluations for the proposed strategy.
    pub evaluation_reduction_pct: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bd_psnr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bd_rate_pct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Evaluation reduction of `test` relative to `reference`, in percent.
pub fn reduction_pct(reference: u64, test: u64) -> f64 {
    if reference == 0 {
        0.0
    } else {
        (1.0 - test as f64 / reference as f64) * 100.0
    }
}

/// BD figures of `test` against `reference`, or `None` with fewer than
/// four points.
pub fn bd_pair(reference: &[RdPoint], test: &[RdPoint]) -> Result<Option<(f64, f64)>> {
    if reference.len() < 4 || test.len() < 4 {
        return Ok(None);
    }
    Ok(Some((bd_psnr(reference, test)?, bd_rate(reference, test)?)))
}

pub fn compare_reports(proposed: &[EncodeReport], baseline: &[EncodeReport]) -> Result<Comparison> {
    let rows: Vec<CompareRow> = proposed
        .iter()
        .zip(baseline)
        .map(|(p, b)| CompareRow {
            qp: p.qp,
            proposed: StrategyStats::of(p),
            baseline: StrategyStats::of(b),
        })
        .collect();
    let total = |f: fn(&CompareRow) -> u64| rows.iter().map(f).sum::<u64>();
    let reduction = reduction_pct(total(|r| r.baseline.evaluations), total(|r| r.proposed.evaluations));
    let curve = |reports: &[EncodeReport]| top_points(reports).iter().map(|p| p.rd_point()).collect::<Vec<_>>();
    let bd = bd_pair(&curve(baseline), &curve(proposed))?;
    Ok(Comparison {
        evaluation_reduction_pct: reduction,
        bd_psnr_db: bd.map(|b| b.0),
        bd_rate_pct: bd.map(|b| b.1),
        warning: bd
            .is_none()
            .then(|| format!("{} QP points given; BD metrics need at least 4", rows.len())),
        rows,
    })
}

pub fn cmd_compare(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let source = cfg.source.load()?;
    // The table always shows wall time; the JSON only with --timing.
    let timed = RunConfig {
        timing: true,
        ..cfg.clone()
    };
    let proposed = encode_all(&source, &timed, Strategy::Proposed)?;
    let baseline = encode_all(&source, &timed, Strategy::Baseline)?;
    let cmp = compare_reports(&proposed, &baseline)?;

    writeln!(
        out,
        "{:<10} {:>12} {:>10} {:>12} {:>10} {:>12} {:>10} {:>12} {:>10}",
        "qp", "prop_kbps", "prop_dB", "prop_evals", "prop_ms", "base_kbps", "base_dB", "base_evals", "base_ms"
    )?;
    let ms = |s: &StrategyStats| s.wall_time_ms.map_or("-".to_string(), |v| format!("{v:.0}"));
    for r in &cmp.rows {
        writeln!(
            out,
            "{:<10} {:>12.3} {:>10.4} {:>12} {:>10} {:>12.3} {:>10.4} {:>12} {:>10}",
            r.qp.to_string(),
            r.proposed.rate_kbps,
            r.proposed.psnr_db,
            r.proposed.evaluations,
            ms(&r.proposed),
            r.baseline.rate_kbps,
            r.baseline.psnr_db,
            r.baseline.evaluations,
            ms(&r.baseline)
        )?;
    }
    writeln!(out, "evaluation reduction: {:.2} %", cmp.evaluation_reduction_pct)?;
    match (cmp.bd_psnr_db, cmp.bd_rate_pct) {
        (Some(p), Some(r)) => {
            writeln!(out, "BD-PSNR: {p:.4} dB")?;
            writeln!(out, "BD-rate: {r:.4} %")?;
        }
        _ => {
            let warning = cmp.warning.as_deref().unwrap_or("BD metrics omitted");
            writeln!(out, "warning: {warning}")?;
            eprintln!("warning: {warning}");
        }
    }
    if let Some(path) = &cfg.report {
        let mut doc = cmp.clone();
        if !cfg.timing {
            for r in &mut doc.rows {
                r.proposed.wall_time_ms = None;
                r.baseline.wall_time_ms = None;
            }
        }
        write_atomic(path, &json(&doc)?)?;
    }
    if let Some(path) = &cfg.rd_csv {
        write_atomic(&with_suffix(path, "proposed"), rd_csv(&top_points(&proposed)).as_bytes())?;
        write_atomic(&with_suffix(path, "baseline"), rd_csv(&top_points(&baseline)).as_bytes())?;
    }
    Ok(())
}

pub fn cmd_bd(reference: &Path, test: &Path, out: &mut dyn Write) -> Result<()> {
    let load = |p: &Path| -> Result<Vec<RdPoint>> {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        parse_rd_csv(&text).with_context(|| format!("parsing {}", p.display()))
    };
    let (r, t) = (load(reference)?, load(test)?);
    writeln!(out, "BD-PSNR: {:.4} dB", bd_psnr(&r, &t)?)?;
    writeln!(out, "BD-rate: {:.4} %", bd_rate(&r, &t)?)?;
    Ok(())
}

pub fn cmd_classify_map(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let [qp] = cfg.qps[..] else {
        bail!("classify-map takes a single --qp");
    };
    let strategy = cfg.strategy.strategies()[0];
    let source = cfg.source.load()?;
    let mut enc = cfg.encoder_for(qp);
    enc.record_mbs = true;
    let report = finish(encode_sequence(&source, &enc, strategy)?, cfg.timing);
    let top = report.top_layer();
    let csv = class_map_csv(&top.mbs);
    match &cfg.map {
        Some(path) => write_atomic(path, csv.as_bytes())?,
        None => out.write_all(csv.as_bytes())?,
    }
    if let Some(path) = &cfg.pgm {
        let (cols, rows) = (top.width / MB_SIZE, top.height / MB_SIZE);
        write_atomic(path, &class_map_pgm(&top.mbs, cols, rows, top.frame_count))?;
    }
    if let Some(path) = &cfg.report {
        write_atomic(path, &json(&report)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, LayerMode};
    use crate::synth::Pattern;

    #[test]
    fn self_comparison_is_neutral() {
        let src = generate(Pattern::Mixed, 64, 64, 5, 1).unwrap();
        let reports: Vec<EncodeReport> = QpTriple::DEFAULTS
            .iter()
            .map(|&qp| {
                let cfg = EncoderConfig {
                    gop_size: 4,
                    qp,
                    layer_mode: LayerMode::Single,
                    ..EncoderConfig::default()
                };
                encode_sequence(&src, &cfg, Strategy::Proposed).unwrap().without_timing()
            })
            .collect();
        let cmp = compare_reports(&reports, &reports).unwrap();
        assert_eq!(cmp.bd_psnr_db, Some(0.0));
        assert_eq!(cmp.bd_rate_pct, Some(0.0));
        assert_eq!(cmp.evaluation_reduction_pct, 0.0);
        assert!(cmp.warning.is_none());

        let short = compare_reports(&reports[..3], &reports[..3]).unwrap();
        assert!(short.bd_psnr_db.is_none() && short.warning.is_some());
    }

    #[test]
    fn reduction() {
        assert_eq!(reduction_pct(200, 50), 75.0);
        assert_eq!(reduction_pct(0, 0), 0.0);
    }
}
