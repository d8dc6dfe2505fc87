//! Burst conditions on the fully excited state and sweeps over lattice
//! spacing.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::atoms::LevelScheme;
use crate::error::{invalid, Error, Result};
use crate::geometry::{dot, square_lattice, ArrayGeometry, Detector};
use crate::interactions::{dissipative_matrix, CouplingSet};
use crate::record::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriterionKind {
    /// All light emitted on the channel.
    Variance,
    /// Light on the channel reaching one detector.
    Directional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub kind: CriterionKind,
    pub value: f64,
    pub threshold: f64,
    pub burst_predicted: bool,
    pub channel: String,
    pub detector: Option<Detector>,
}

impl CriterionResult {
    fn new(
        kind: CriterionKind,
        value: f64,
        threshold: f64,
        channel: &str,
        detector: Option<Detector>,
    ) -> Self {
        CriterionResult {
            kind,
            value,
            threshold,
            burst_predicted: value > threshold,
            channel: channel.to_string(),
            detector,
        }
    }

    /// The normalized second-order correlation g̃²(0) implied by the value,
    /// given N and the channel branching Γ₀ᵃ/Γ₀.
    pub fn implied_g2(&self, n_atoms: usize, branching: f64) -> f64 {
        let n = n_atoms as f64;
        match self.kind {
            CriterionKind::Variance => 1.0 + branching / n * (self.value - self.threshold),
            CriterionKind::Directional => 1.0 + (1.0 + branching) / n * (self.value - 1.0),
        }
    }
}

fn channel_index(set: &CouplingSet, channel: usize) -> Result<()> {
    if channel >= set.n_channels() {
        return invalid(format!("channel {channel} out of range"));
    }
    Ok(())
}

/// Var = (1/N)[Σ_jl |Γ_jl|²/(Γ₀ᵃ)² − N] from the Frobenius norm, against
/// the threshold Γ₀/Γ₀ᵃ.
pub fn variance_criterion(set: &CouplingSet, channel: usize) -> Result<CriterionResult> {
    channel_index(set, channel)?;
    let ch = &set.channels[channel];
    if !(ch.branching > 0.0) {
        return invalid(format!("channel {} has zero rate", ch.label));
    }
    let n = set.n_atoms as f64;
    let value = (ch.frobenius_sq() / (ch.branching * ch.branching) - n) / n;
    Ok(CriterionResult::new(
        CriterionKind::Variance,
        value,
        1.0 / ch.branching,
        &ch.label,
        None,
    ))
}

/// Phase factors e^{-i k 𝓡·𝐫_l}.
fn detector_phases(geometry: &ArrayGeometry, k: f64, detector: &Detector) -> Vec<C64> {
    geometry
        .positions
        .iter()
        .map(|r| C64::from_polar(1.0, -k * dot(detector.direction, *r)))
        .collect()
}

/// Σ_jl e^{ik𝓡·(𝐫_l−𝐫_j)} M_jl = v† M v with v_l = e^{ik𝓡·𝐫_l}.
fn phase_form(m: &DMatrix<C64>, phases: &[C64]) -> C64 {
    let n = phases.len();
    let mut acc = C64::new(0.0, 0.0);
    for j in 0..n {
        let mut row = C64::new(0.0, 0.0);
        for l in 0..n {
            row += m[(j, l)] * phases[l].conj();
        }
        acc += phases[j] * row;
    }
    acc
}

/// S = Σ_jl e^{ik𝓡·(𝐫_l−𝐫_j)} Γᵃ_jl / (N(Γ₀ᵃ + Γ₀)), threshold 1.
pub fn directional_criterion(
    set: &CouplingSet,
    geometry: &ArrayGeometry,
    channel: usize,
    detector: &Detector,
) -> Result<CriterionResult> {
    channel_index(set, channel)?;
    if geometry.len() != set.n_atoms {
        return invalid("geometry and coupling set sizes differ");
    }
    let ch = &set.channels[channel];
    let phases = detector_phases(geometry, ch.wavenumber, detector);
    let sum = phase_form(&ch.gamma, &phases);
    let value = sum.re / (set.n_atoms as f64 * (ch.branching + 1.0));
    Ok(CriterionResult::new(
        CriterionKind::Directional,
        value,
        1.0,
        &ch.label,
        Some(*detector),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub d_nm: f64,
    pub result: CriterionResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionSweep {
    pub points: Vec<SweepPoint>,
}

impl CriterionSweep {
    /// Closed intervals `[d_first, d_last]` of consecutive burst points.
    pub fn burst_intervals(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut start: Option<f64> = None;
        let mut last = 0.0;
        for p in &self.points {
            match (p.result.burst_predicted, start) {
                (true, None) => start = Some(p.d_nm),
                (false, Some(s)) => {
                    out.push((s, last));
                    start = None;
                }
                _ => {}
            }
            last = p.d_nm;
        }
        if let Some(s) = start {
            out.push((s, last));
        }
        out
    }

    /// Threshold crossings reported as midpoints of the bracketing interval,
    /// with `true` for entering a burst region as d grows.
    pub fn crossings(&self) -> Vec<(f64, bool)> {
        self.points
            .windows(2)
            .filter(|w| w[0].result.burst_predicted != w[1].result.burst_predicted)
            .map(|w| (0.5 * (w[0].d_nm + w[1].d_nm), w[1].result.burst_predicted))
            .collect()
    }

    /// True if `d_nm` lies inside a burst interval (within half a step).
    pub fn is_burst_at(&self, d_nm: f64) -> bool {
        let step = if self.points.len() > 1 {
            self.points[1].d_nm - self.points[0].d_nm
        } else {
            0.0
        };
        self.burst_intervals()
            .iter()
            .any(|&(a, b)| d_nm >= a - 0.5 * step && d_nm <= b + 0.5 * step)
    }

    /// CSV with columns `d_nm,channel,value,threshold,burst,theta,phi`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("d_nm,channel,value,threshold,burst,theta,phi\n");
        for p in &self.points {
            let r = &p.result;
            let (theta, phi) = r.detector.map(|d| (d.theta, d.phi)).unwrap_or((f64::NAN, f64::NAN));
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                fmt_f64(p.d_nm),
                r.channel,
                fmt_f64(r.value),
                fmt_f64(r.threshold),
                u8::from(r.burst_predicted),
                fmt_f64(theta),
                fmt_f64(phi)
            );
        }
        out
    }
}

/// Evaluate the variance criterion (no detector) or the directional
/// criterion on a grid of lattice constants `d_min, d_min + step, ... ≤ d_max`.
pub fn criterion_sweep(
    scheme: &LevelScheme,
    shape: (usize, usize),
    d_min: f64,
    d_max: f64,
    step: f64,
    channel: usize,
    detector: Option<Detector>,
) -> Result<CriterionSweep> {
    if !(step > 0.0) || !(d_min > 0.0) || d_max < d_min {
        return invalid("sweep needs 0 < d_min <= d_max and step > 0");
    }
    if channel >= scheme.n_channels() {
        return invalid(format!("channel {channel} out of range"));
    }
    let count = ((d_max - d_min) / step + 1e-9).floor() as usize + 1;
    let ch = &scheme.channels[channel];
    let branching = scheme.branching()[channel];
    if detector.is_none() && !(branching > 0.0) {
        return invalid(format!("channel {} has zero rate", ch.label));
    }
    let points = (0..count)
        .into_par_iter()
        .map(|i| {
            let d = d_min + i as f64 * step;
            let geometry = square_lattice(shape.0, shape.1, d)?;
            let n = geometry.len() as f64;
            let unit = dissipative_matrix(&geometry, ch)?;
            let result = match &detector {
                None => {
                    let frob: f64 = unit.iter().map(|x| x * x).sum();
                    CriterionResult::new(
                        CriterionKind::Variance,
                        (frob - n) / n,
                        1.0 / branching,
                        &ch.label,
                        None,
                    )
                }
                Some(det) => {
                    let phases = detector_phases(&geometry, ch.wavenumber(), det);
                    let m = unit.map(|x| C64::new(x * branching, 0.0));
                    let s = phase_form(&m, &phases).re / (n * (branching + 1.0));
                    CriterionResult::new(CriterionKind::Directional, s, 1.0, &ch.label, Some(*det))
                }
            };
            Ok(SweepPoint { d_nm: d, result })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CriterionSweep { points })
}

/// Exact evaluation of g̃²(0) on |e⟩^⊗N by explicit operator algebra.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct G2Oracle {
    /// Σ_b Σ_ν Γ_νᵇ ⟨e|O_νᵇ† D† D O_νᵇ|e⟩.
    pub numerator: f64,
    /// Total emission rate ⟨Σ_b Σ_ν Γ_νᵇ O_νᵇ† O_νᵇ⟩.
    pub emitted: f64,
    /// Detected rate ⟨D† D⟩.
    pub detected: f64,
    pub g2: f64,
}

impl G2Oracle {
    pub fn burst(&self) -> bool {
        self.g2 > 1.0
    }

    /// Initial slope of the detected rate, numerator − emitted·detected.
    pub fn initial_slope(&self) -> f64 {
        self.numerator - self.emitted * self.detected
    }
}

pub const MAX_ORACLE_ATOMS: usize = 12;

type Sparse = HashMap<u64, C64>;

// 2 bits per atom: 0 = excited, b + 1 = ground state of channel b.
fn lower(state: &Sparse, coeffs: &[C64], channel: usize) -> Sparse {
    let mut out = Sparse::new();
    for (&cfg, &amp) in state {
        for (l, &c) in coeffs.iter().enumerate() {
            if c == C64::new(0.0, 0.0) || (cfg >> (2 * l)) & 3 != 0 {
                continue;
            }
            let next = cfg | ((channel as u64 + 1) << (2 * l));
            *out.entry(next).or_default() += c * amp;
        }
    }
    out
}

fn norm_sqr(state: &Sparse) -> f64 {
    state.values().map(|z| z.norm_sqr()).sum()
}

/// Brute-force g̃²(0) for channel `channel`. Without a detector the
/// detected light is every photon on the channel, D†D = Σ_μ Γ_μᵃ O_μ†O_μ;
/// with a detector D = Σ_l e^{-ik𝓡·𝐫_l} σ_l (the angular prefactor cancels
/// in g̃²).
pub fn brute_force_g2(
    set: &CouplingSet,
    geometry: &ArrayGeometry,
    channel: usize,
    detector: Option<&Detector>,
) -> Result<G2Oracle> {
    channel_index(set, channel)?;
    let n = set.n_atoms;
    if n > MAX_ORACLE_ATOMS {
        return Err(Error::Resource(format!(
            "brute-force g2 supports at most {MAX_ORACLE_ATOMS} atoms, got {n}"
        )));
    }
    if set.n_channels() > 3 {
        return Err(Error::Resource("brute-force g2 supports at most 3 channels".into()));
    }
    let mode_coeffs = |b: usize, nu: usize| -> Vec<C64> {
        (0..n).map(|l| set.channels[b].alpha(nu, l)).collect()
    };
    let mut excited = Sparse::new();
    excited.insert(0, C64::new(1.0, 0.0));

    let detected_of = |psi: &Sparse| -> f64 {
        match detector {
            Some(det) => {
                let ch = &set.channels[channel];
                let phases = detector_phases(geometry, ch.wavenumber, det);
                norm_sqr(&lower(psi, &phases, channel))
            }
            None => (0..n)
                .map(|mu| {
                    let g = set.channels[channel].spectrum[mu];
                    if g == 0.0 {
                        0.0
                    } else {
                        g * norm_sqr(&lower(psi, &mode_coeffs(channel, mu), channel))
                    }
                })
                .sum(),
        }
    };

    let mut numerator = 0.0;
    let mut emitted = 0.0;
    for b in 0..set.n_channels() {
        for nu in 0..n {
            let g = set.channels[b].spectrum[nu];
            if g == 0.0 {
                continue;
            }
            let once = lower(&excited, &mode_coeffs(b, nu), b);
            emitted += g * norm_sqr(&once);
            numerator += g * detected_of(&once);
        }
    }
    if geometry.len() != n {
        return invalid("geometry and coupling set sizes differ");
    }
    let detected = detected_of(&excited);
    let g2 = if numerator == 0.0 || detected == 0.0 {
        0.0
    } else {
        numerator / (emitted * detected)
    };
    Ok(G2Oracle {
        numerator,
        emitted,
        detected,
        g2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atoms::spherical_polarization;
    use crate::geometry::{detector_direction, from_positions};
    use crate::interactions::coupling_matrices;
    use std::f64::consts::FRAC_PI_2;

    fn two_level_set(positions: Vec<[f64; 3]>) -> (CouplingSet, ArrayGeometry) {
        let scheme = LevelScheme::two_level(1.0, 1000.0, spherical_polarization(0)).unwrap();
        let g = from_positions(positions).unwrap();
        (coupling_matrices(&g, &scheme).unwrap(), g)
    }

    #[test]
    fn far_apart_atoms_never_burst() {
        let (set, g) = two_level_set(vec![[0.0; 3], [1e9, 0.0, 0.0], [0.0, 1e9, 0.0]]);
        let v = variance_criterion(&set, 0).unwrap();
        assert!(v.value.abs() < 1e-8 && !v.burst_predicted);
        let s = directional_criterion(&set, &g, 0, &detector_direction(FRAC_PI_2, 0.0)).unwrap();
        assert!((s.value - 0.5).abs() < 1e-6);
    }

    #[test]
    fn single_atom_oracle() {
        let (set, g) = two_level_set(vec![[0.0; 3]]);
        let o = brute_force_g2(&set, &g, 0, None).unwrap();
        assert_eq!(o.numerator, 0.0);
        assert!(!o.burst());
    }

    #[test]
    fn sweep_bookkeeping() {
        let sw = CriterionSweep {
            points: [(1.0, true), (2.0, true), (3.0, false), (4.0, true)]
                .iter()
                .map(|&(d, b)| SweepPoint {
                    d_nm: d,
                    result: CriterionResult::new(
                        CriterionKind::Variance,
                        if b { 2.0 } else { 0.0 },
                        1.0,
                        "f",
                        None,
                    ),
                })
                .collect(),
        };
        assert_eq!(sw.burst_intervals(), vec![(1.0, 2.0), (4.0, 4.0)]);
        assert_eq!(sw.crossings(), vec![(2.5, false), (3.5, true)]);
        assert!(sw.to_csv().starts_with("d_nm,channel,value,threshold,burst,theta,phi\n"));
    }
}
