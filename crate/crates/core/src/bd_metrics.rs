//! Bjontegaard-delta metrics between two rate-distortion curves.
//!
//! Each curve is fitted with a cubic (interpolating for exactly four points,
//! least squares otherwise) and the fits are integrated analytically over
//! the interval both curves cover.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BdError {
    #[error("a curve needs at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("duplicate abscissa {0} in RD curve")]
    DuplicateAbscissa(f64),
    #[error("invalid RD point (rate {rate}, psnr {psnr}): rates must be positive and values finite")]
    InvalidPoint { rate: f64, psnr: f64 },
    #[error("the two curves do not overlap")]
    NoOverlap,
    #[error("singular system while fitting the curve")]
    Singular,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    /// kbps
    pub rate: f64,
    /// dB
    pub psnr: f64,
}

impl RdPoint {
    pub fn new(rate: f64, psnr: f64) -> Self {
        Self { rate, psnr }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitAxis {
    /// PSNR as a function of log10(rate).
    PsnrOnLogRate,
    /// log10(rate) as a function of PSNR.
    LogRateOnPsnr,
}

/// Cubic in a normalised variable `t = (x - center) / scale`, which keeps
/// the fit well conditioned for PSNR-valued abscissae.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cubic {
    center: f64,
    scale: f64,
    coef: [f64; 4],
}

impl Cubic {
    pub fn eval(&self, x: f64) -> f64 {
        let t = (x - self.center) / self.scale;
        self.coef.iter().rev().fold(0.0, |acc, &c| acc * t + c)
    }

    fn antiderivative_t(&self, t: f64) -> f64 {
        let [a, b, c, d] = self.coef;
        t * (a + t * (b / 2.0 + t * (c / 3.0 + t * d / 4.0)))
    }

    /// Exact integral over [lo, hi].
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        let tl = (lo - self.center) / self.scale;
        let th = (hi - self.center) / self.scale;
        self.scale * (self.antiderivative_t(th) - self.antiderivative_t(tl))
    }

    /// Coefficients `[c0, c1, c2, c3]` of `c0 + c1 x + c2 x^2 + c3 x^3`.
    pub fn coefficients(&self) -> [f64; 4] {
        let (m, s) = (self.center, self.scale);
        let a: Vec<f64> = (0..4).map(|k| self.coef[k] / s.powi(k as i32)).collect();
        // Expand a_k (x - m)^k.
        [
            a[0] - a[1] * m + a[2] * m * m - a[3] * m * m * m,
            a[1] - 2.0 * a[2] * m + 3.0 * a[3] * m * m,
            a[2] - 3.0 * a[3] * m,
            a[3],
        ]
    }
}

fn solve(mut a: Vec<[f64; 5]>) -> Result<[f64; 4], BdError> {
    // Gaussian elimination with partial pivoting on an augmented 4x5 system.
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return Err(BdError::Singular);
        }
        a.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (v, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *v -= f * p;
            }
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let tail: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (a[row][4] - tail) / a[row][row];
    }
    Ok(x)
}

fn check_points(points: &[RdPoint]) -> Result<(), BdError> {
    if points.len() < 4 {
        return Err(BdError::TooFewPoints(points.len()));
    }
    for p in points {
        if !p.rate.is_finite() || p.rate <= 0.0 || !p.psnr.is_finite() {
            return Err(BdError::InvalidPoint {
                rate: p.rate,
                psnr: p.psnr,
            });
        }
    }
    Ok(())
}

fn abscissa_ordinate(p: &RdPoint, axis: FitAxis) -> (f64, f64) {
    match axis {
        FitAxis::PsnrOnLogRate => (p.rate.log10(), p.psnr),
        FitAxis::LogRateOnPsnr => (p.psnr, p.rate.log10()),
    }
}

pub fn fit_rd_poly(points: &[RdPoint], axis: FitAxis) -> Result<Cubic, BdError> {
    check_points(points)?;
    let xy: Vec<(f64, f64)> = points.iter().map(|p| abscissa_ordinate(p, axis)).collect();
    let mut xs: Vec<f64> = xy.iter().map(|&(x, _)| x).collect();
    xs.sort_by(f64::total_cmp);
    if let Some(w) = xs.windows(2).find(|w| w[0] == w[1]) {
        return Err(BdError::DuplicateAbscissa(w[0]));
    }
    let center = xs.iter().sum::<f64>() / xs.len() as f64;
    let scale = xs.iter().map(|x| (x - center).abs()).fold(0.0, f64::max);
    let rows: Vec<([f64; 4], f64)> = xy
        .iter()
        .map(|&(x, y)| {
            let t = (x - center) / scale;
            ([1.0, t, t * t, t * t * t], y)
        })
        .collect();
    let system: Vec<[f64; 5]> = if rows.len() == 4 {
        rows.iter()
            .map(|(v, y)| [v[0], v[1], v[2], v[3], *y])
            .collect()
    } else {
        // Normal equations; t is in [-1, 1] so conditioning stays benign.
        (0..4)
            .map(|i| {
                let mut r = [0.0; 5];
                for (v, y) in &rows {
                    for j in 0..4 {
                        r[j] += v[i] * v[j];
                    }
                    r[4] += v[i] * y;
                }
                r
            })
            .collect()
    };
    Ok(Cubic {
        center,
        scale,
        coef: solve(system)?,
    })
}

fn overlap(a: &[RdPoint], b: &[RdPoint], axis: FitAxis) -> Result<(f64, f64), BdError> {
    let range = |pts: &[RdPoint]| {
        pts.iter()
            .map(|p| abscissa_ordinate(p, axis).0)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
    };
    let (alo, ahi) = range(a);
    let (blo, bhi) = range(b);
    let (lo, hi) = (alo.max(blo), ahi.min(bhi));
    if hi > lo {
        Ok((lo, hi))
    } else {
        Err(BdError::NoOverlap)
    }
}

fn mean_difference(reference: &[RdPoint], test: &[RdPoint], axis: FitAxis) -> Result<f64, BdError> {
    let fr = fit_rd_poly(reference, axis)?;
    let ft = fit_rd_poly(test, axis)?;
    let (lo, hi) = overlap(reference, test, axis)?;
    let ir = fr.integral(lo, hi);
    let it = ft.integral(lo, hi);
    Ok((it - ir) / (hi - lo))
}

/// Average PSNR gain of `test` over `reference` in dB.
pub fn bd_psnr(reference: &[RdPoint], test: &[RdPoint]) -> Result<f64, BdError> {
    mean_difference(reference, test, FitAxis::PsnrOnLogRate)
}

/// Average bitrate change of `test` relative to `reference` in percent;
/// negative means `test` needs fewer bits for the same quality.
pub fn bd_rate(reference: &[RdPoint], test: &[RdPoint]) -> Result<f64, BdError> {
    let delta = mean_difference(reference, test, FitAxis::LogRateOnPsnr)?;
    Ok((10f64.powf(delta) - 1.0) * 100.0)
}
