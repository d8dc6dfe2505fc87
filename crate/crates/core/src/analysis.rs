//! Peaks, power-law fits and photon bookkeeping on emission records.

use crate::error::{invalid, Result};
use crate::record::EmissionRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub t_peak: f64,
    pub r_peak: f64,
    /// The maximum lies after the first sample.
    pub burst: bool,
    /// Sample index of the discrete maximum.
    pub index: usize,
}

/// Peak of one channel (`Some(a)`) or of the total rate (`None`), refined
/// by a parabola through the three samples around the discrete maximum.
pub fn find_peak(record: &EmissionRecord, channel: Option<usize>) -> Result<Peak> {
    if record.is_empty() {
        return invalid("record is empty");
    }
    let series = match channel {
        Some(a) if a < record.n_channels() => record.rates[a].clone(),
        Some(a) => return invalid(format!("record has no channel {a}")),
        None => record.total(),
    };
    peak_of(&record.times, &series)
}

/// [`find_peak`] on bare arrays.
pub fn peak_of(times: &[f64], values: &[f64]) -> Result<Peak> {
    if values.is_empty() || times.len() != values.len() {
        return invalid("series must be nonempty and match the time grid");
    }
    let mut i = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[i] {
            i = k;
        }
    }
    if i == 0 {
        return Ok(Peak {
            t_peak: times[0],
            r_peak: values[0],
            burst: false,
            index: 0,
        });
    }
    if i + 1 == values.len() {
        return Ok(Peak {
            t_peak: times[i],
            r_peak: values[i],
            burst: true,
            index: i,
        });
    }
    let (t0, t1, t2) = (times[i - 1], times[i], times[i + 1]);
    let (y0, y1, y2) = (values[i - 1], values[i], values[i + 1]);
    // Lagrange parabola through the three points
    let d0 = y0 / ((t0 - t1) * (t0 - t2));
    let d1 = y1 / ((t1 - t0) * (t1 - t2));
    let d2 = y2 / ((t2 - t0) * (t2 - t1));
    let a = d0 + d1 + d2;
    let b = -(d0 * (t1 + t2) + d1 * (t0 + t2) + d2 * (t0 + t1));
    let c = d0 * t1 * t2 + d1 * t0 * t2 + d2 * t0 * t1;
    let (t_peak, r_peak) = if a < 0.0 {
        let tp = (-b / (2.0 * a)).clamp(t0, t2);
        (tp, a * tp * tp + b * tp + c)
    } else {
        (t1, y1)
    };
    Ok(Peak {
        t_peak,
        r_peak: r_peak.max(y1),
        burst: true,
        index: i,
    })
}

/// Log-log least-squares fit. For [`fit_power_law`]
/// `y = prefactor · N^exponent`; for [`fit_share`]
/// `1 − share = A / N^B` with `A = prefactor`, `B = exponent`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub exponent: f64,
    pub prefactor: f64,
    /// RMS residual in log space.
    pub residual: f64,
    pub n_range: Vec<f64>,
}

impl FitResult {
    pub fn a(&self) -> f64 {
        self.prefactor
    }

    pub fn b(&self) -> f64 {
        self.exponent
    }
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, intercept, rms)
}

fn select(pairs: &[(f64, f64)], n_min: f64) -> Result<Vec<(f64, f64)>> {
    let sel: Vec<_> = pairs.iter().copied().filter(|(n, _)| *n >= n_min).collect();
    if sel.len() < 3 {
        return invalid(format!("need at least 3 points with N >= {n_min}, got {}", sel.len()));
    }
    if sel.iter().any(|(n, _)| !(*n > 0.0)) {
        return invalid("atom numbers must be positive");
    }
    Ok(sel)
}

/// Least squares on (ln N, ln y) over pairs with N ≥ `n_min`.
pub fn fit_power_law(pairs: &[(f64, f64)], n_min: f64) -> Result<FitResult> {
    let sel = select(pairs, n_min)?;
    if sel.iter().any(|(_, y)| !(*y > 0.0)) {
        return invalid("peaks must be positive");
    }
    // logs of ratios, so a common scale factor only enters the prefactor
    let reference = sel[0].1;
    let x: Vec<f64> = sel.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = sel.iter().map(|p| (p.1 / reference).ln()).collect();
    let (slope, intercept, residual) = linear_fit(&x, &y);
    Ok(FitResult {
        exponent: slope,
        prefactor: intercept.exp() * reference,
        residual,
        n_range: sel.iter().map(|p| p.0).collect(),
    })
}

/// Fit `share = 1 − A/N^B` through ln(1 − share) = ln A − B ln N.
pub fn fit_share(pairs: &[(f64, f64)], n_min: f64) -> Result<FitResult> {
    let sel = select(pairs, n_min)?;
    if sel.iter().any(|(_, s)| !(*s > 0.0 && *s < 1.0)) {
        return invalid("shares must lie in (0, 1)");
    }
    let x: Vec<f64> = sel.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = sel.iter().map(|p| (1.0 - p.1).ln()).collect();
    let (slope, intercept, residual) = linear_fit(&x, &y);
    Ok(FitResult {
        exponent: -slope,
        prefactor: intercept.exp(),
        residual,
        n_range: sel.iter().map(|p| p.0).collect(),
    })
}

/// Fraction of photons per channel at the end of the record, from the
/// cumulative counts.
pub fn photon_shares(record: &EmissionRecord) -> Result<Vec<f64>> {
    if record.is_empty() {
        return invalid("record is empty");
    }
    let last: Vec<f64> = record
        .photons
        .iter()
        .map(|p| *p.last().unwrap_or(&0.0))
        .collect();
    let total: f64 = last.iter().sum();
    if !(total > 0.0) {
        return invalid("no photons emitted");
    }
    Ok(last.iter().map(|p| p / total).collect())
}

/// Total photons emitted on every channel.
pub fn photons_emitted(record: &EmissionRecord) -> f64 {
    record.photons.iter().map(|p| p.last().copied().unwrap_or(0.0)).sum()
}
