//! Time series produced by every solver.

use std::fmt::Write as _;

use crate::geometry::Detector;

/// Emission into one detector direction on one channel, per unit solid angle.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalSeries {
    pub channel: usize,
    pub detector: Detector,
    pub values: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
}

/// Emission rates sampled on a time grid. Times are in units of 1/Γ₀ and
/// rates in units of Γ₀, where Γ₀ is the total single-atom decay rate of the
/// scheme that produced the record.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionRecord {
    pub times: Vec<f64>,
    pub channel_labels: Vec<String>,
    /// `rates[a][i]` is the emission rate on channel `a` at `times[i]`.
    pub rates: Vec<Vec<f64>>,
    /// Cumulative emitted photons per channel, same layout as `rates`.
    pub photons: Vec<Vec<f64>>,
    pub directional: Vec<DirectionalSeries>,
    /// Standard error of `rates` for stochastic solvers.
    pub rate_stderr: Option<Vec<Vec<f64>>>,
    /// Standard error of the total rate for stochastic solvers.
    pub total_stderr: Option<Vec<f64>>,
}

impl EmissionRecord {
    pub fn new(channel_labels: Vec<String>) -> Self {
        let k = channel_labels.len();
        EmissionRecord {
            times: Vec::new(),
            channel_labels,
            rates: vec![Vec::new(); k],
            photons: vec![Vec::new(); k],
            directional: Vec::new(),
            rate_stderr: None,
            total_stderr: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.channel_labels.len()
    }

    pub fn total(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.rates.iter().map(|r| r[i]).sum())
            .collect()
    }

    /// Append one sample. `photons` may be empty when the solver does not
    /// track cumulative counts; they are then filled by trapezoidal
    /// integration of the rates.
    pub fn push(&mut self, t: f64, rates: &[f64], photons: &[f64], directional: &[f64]) {
        let prev_t = self.times.last().copied();
        self.times.push(t);
        for (a, &r) in rates.iter().enumerate() {
            self.rates[a].push(r);
            let count = if photons.is_empty() {
                match prev_t {
                    None => 0.0,
                    Some(t0) => {
                        let n = self.rates[a].len();
                        let c0 = self.photons[a][n - 2];
                        c0 + 0.5 * (t - t0) * (self.rates[a][n - 2] + r)
                    }
                }
            } else {
                photons[a]
            };
            self.photons[a].push(count);
        }
        for (s, &v) in self.directional.iter_mut().zip(directional) {
            s.values.push(v);
        }
    }

    /// Header of the CSV schema: `t_gamma0,R_total,R_<label>...,R_dir_<label>_<k>...`,
    /// followed by `stderr_*` columns when present.
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["t_gamma0".to_string(), "R_total".to_string()];
        for l in &self.channel_labels {
            cols.push(format!("R_{l}"));
        }
        for (k, d) in self.directional.iter().enumerate() {
            cols.push(format!("R_dir_{}_{}", self.channel_labels[d.channel], k));
        }
        if self.total_stderr.is_some() {
            cols.push("stderr_total".into());
        }
        if self.rate_stderr.is_some() {
            for l in &self.channel_labels {
                cols.push(format!("stderr_{l}"));
            }
        }
        for (k, d) in self.directional.iter().enumerate() {
            if d.stderr.is_some() {
                cols.push(format!("stderr_dir_{}_{}", self.channel_labels[d.channel], k));
            }
        }
        cols.join(",")
    }

    /// Render the record as CSV with 17 significant digits per float.
    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        let total = self.total();
        for i in 0..self.len() {
            let mut row = vec![fmt_f64(self.times[i]), fmt_f64(total[i])];
            row.extend(self.rates.iter().map(|r| fmt_f64(r[i])));
            row.extend(self.directional.iter().map(|d| fmt_f64(d.values[i])));
            if let Some(se) = &self.total_stderr {
                row.push(fmt_f64(se[i]));
            }
            if let Some(se) = &self.rate_stderr {
                row.extend(se.iter().map(|s| fmt_f64(s[i])));
            }
            for d in &self.directional {
                if let Some(se) = &d.stderr {
                    row.push(fmt_f64(se[i]));
                }
            }
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// Round-trip safe float formatting (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_fill_when_photons_missing() {
        let mut r = EmissionRecord::new(vec!["g".into()]);
        r.push(0.0, &[1.0], &[], &[]);
        r.push(1.0, &[3.0], &[], &[]);
        assert_eq!(r.photons[0], vec![0.0, 2.0]);
        assert_eq!(r.total(), vec![1.0, 3.0]);
    }

    #[test]
    fn csv_floats_round_trip() {
        let x = 0.1 + 0.2;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        let mut r = EmissionRecord::new(vec!["f".into(), "g".into()]);
        r.push(0.0, &[0.5, 0.25], &[0.0, 0.0], &[]);
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t_gamma0,R_total,R_f,R_g");
        let vals: Vec<f64> = lines.next().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(vals, vec![0.0, 0.75, 0.5, 0.25]);
    }
}
