//! Species transition data, Zeeman-resolved branching and reduced level schemes.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};

/// Complex polarization (dipole) vector in Cartesian components.
pub type Polarization = [Complex64; 3];

const HBAR: f64 = 1.054_571_817e-34; // J s
const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24; // J / T

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Species {
    Yb174,
    Sr88,
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Species::Yb174 => "Yb174",
            Species::Sr88 => "Sr88",
        })
    }
}

impl FromStr for Species {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "yb174" | "174yb" | "yb" => Ok(Species::Yb174),
            "sr88" | "88sr" | "sr" => Ok(Species::Sr88),
            other => invalid(format!("unknown species '{other}'")),
        }
    }
}

/// Fine-structure terms that appear in the transition tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    S0,
    P0,
    P1,
    P2,
    D1,
    D2,
    D3,
}

impl Term {
    /// Total electronic angular momentum J.
    pub fn j(self) -> i32 {
        match self {
            Term::S0 | Term::P0 => 0,
            Term::P1 | Term::D1 => 1,
            Term::P2 | Term::D2 => 2,
            Term::D3 => 3,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Term::S0 => "1S0",
            Term::P0 => "3P0",
            Term::P1 => "3P1",
            Term::P2 => "3P2",
            Term::D1 => "3D1",
            Term::D2 => "3D2",
            Term::D3 => "3D3",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub upper: Term,
    pub lower: Term,
    /// Vacuum wavelength in nm.
    pub wavelength: f64,
    /// Line decay rate in s⁻¹.
    pub line_rate: f64,
}

impl Transition {
    pub fn label(&self) -> String {
        format!("{}->{}", self.upper, self.lower)
    }
}

const fn tr(upper: Term, lower: Term, wavelength: f64, line_rate: f64) -> Transition {
    Transition {
        upper,
        lower,
        wavelength,
        line_rate,
    }
}

const YB174: [Transition; 7] = [
    tr(Term::P1, Term::S0, 556.0, 1.0e6),
    tr(Term::D1, Term::P0, 1389.0, 2.0e6),
    tr(Term::D1, Term::P1, 1540.0, 1.0e6),
    tr(Term::D1, Term::P2, 2090.0, 0.03e6),
    tr(Term::D2, Term::P1, 1480.0, 2.0e6),
    tr(Term::D2, Term::P2, 1980.0, 0.3e6),
    tr(Term::D3, Term::P2, 1800.0, 2.0e6),
];

const SR88: [Transition; 7] = [
    tr(Term::P1, Term::S0, 689.0, 0.47e5),
    tr(Term::D1, Term::P0, 2600.0, 2.8e5),
    tr(Term::D1, Term::P1, 2740.0, 1.8e5),
    tr(Term::D1, Term::P2, 3070.0, 0.088e5),
    tr(Term::D2, Term::P1, 2690.0, 3.3e5),
    tr(Term::D2, Term::P2, 3010.0, 0.79e5),
    tr(Term::D3, Term::P2, 2920.0, 5.9e5),
];

/// All tabulated transitions of a species.
pub fn species_transitions(species: Species) -> Vec<Transition> {
    match species {
        Species::Yb174 => YB174.to_vec(),
        Species::Sr88 => SR88.to_vec(),
    }
}

/// Look up one tabulated line.
pub fn transition(species: Species, upper: Term, lower: Term) -> Result<Transition> {
    species_transitions(species)
        .into_iter()
        .find(|t| t.upper == upper && t.lower == lower)
        .ok_or_else(|| {
            Error::InvalidArgument(format!("{species} has no tabulated {upper}->{lower} line"))
        })
}

fn factorial(n: i32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Clebsch–Gordan coefficient ⟨j1 m1; j2 m2 | j m⟩ for integer angular momenta
/// (Racah's closed form).
pub fn clebsch_gordan(j1: i32, m1: i32, j2: i32, m2: i32, j: i32, m: i32) -> f64 {
    if m1 + m2 != m
        || m1.abs() > j1
        || m2.abs() > j2
        || m.abs() > j
        || j < (j1 - j2).abs()
        || j > j1 + j2
    {
        return 0.0;
    }
    let pre = ((2 * j + 1) as f64 * factorial(j + j1 - j2) * factorial(j - j1 + j2)
        * factorial(j1 + j2 - j)
        / factorial(j1 + j2 + j + 1))
        .sqrt();
    let norm = (factorial(j + m)
        * factorial(j - m)
        * factorial(j1 - m1)
        * factorial(j1 + m1)
        * factorial(j2 - m2)
        * factorial(j2 + m2))
        .sqrt();
    let mut sum = 0.0;
    for k in 0..=(j1 + j2 - j) {
        let dens = [
            j1 + j2 - j - k,
            j1 - m1 - k,
            j2 + m2 - k,
            j - j2 + m1 + k,
            j - j1 - m2 + k,
        ];
        if dens.iter().any(|&d| d < 0) {
            continue;
        }
        let den: f64 = factorial(k) * dens.iter().map(|&d| factorial(d)).product::<f64>();
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign / den;
    }
    pre * norm * sum
}

/// Fraction of the J → J' line emitted by sublevel `m` into the photon
/// polarization `q`, i.e. into final sublevel m' = m − q. Summed over `q`
/// the weights for fixed (J, m, J') equal one.
pub fn relative_line_strength(j: i32, m: i32, q: i32, j_prime: i32) -> Result<f64> {
    if j < 0 || m.abs() > j {
        return invalid(format!("|m| = {} exceeds J = {j}", m.abs()));
    }
    if q.abs() > 1 {
        return invalid(format!("photon index q = {q} not in {{-1, 0, +1}}"));
    }
    if j_prime < 0 || (j_prime - j).abs() > 1 || (j == 0 && j_prime == 0) {
        return invalid(format!("J = {j} -> J' = {j_prime} is not an electric-dipole line"));
    }
    let m_final = m - q;
    if m_final.abs() > j_prime {
        return invalid(format!("final sublevel m' = {m_final} exceeds J' = {j_prime}"));
    }
    let cg = clebsch_gordan(j_prime, m_final, 1, q, j, m);
    Ok(cg * cg)
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Spherical basis vector for photon index q (π: ẑ, σ±: ∓(x̂ ± iŷ)/√2).
pub fn spherical_polarization(q: i32) -> Polarization {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    match q {
        0 => [c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)],
        1 => [c(-s, 0.0), c(0.0, -s), c(0.0, 0.0)],
        -1 => [c(s, 0.0), c(0.0, -s), c(0.0, 0.0)],
        _ => panic!("photon index must be -1, 0 or 1"),
    }
}

/// Hermitian inner product ⟨u, v⟩ = Σ u_i* v_i.
pub fn inner(u: &Polarization, v: &Polarization) -> Complex64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

/// One optical decay channel |e⟩ → |g_a⟩.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayChannel {
    /// Short key used in file columns (f, g, h, ...).
    pub label: String,
    /// Ground state reached, e.g. `3P1(m=+1)`.
    pub ground: String,
    /// Γ₀ᵃ in s⁻¹.
    pub rate: f64,
    /// Wavelength in nm.
    pub wavelength: f64,
    pub polarization: Polarization,
    /// False for a loss channel whose photons carry no spatial correlation.
    pub collective: bool,
}

impl DecayChannel {
    /// k₀ᵃ = 2π/λ₀ᵃ in nm⁻¹.
    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitialState {
    /// ³D₁ |J=1, m=0⟩
    D1M0,
    /// ³D₃ |J=3, m=0⟩
    D3M0,
    /// ³D₃ |J=3, m=3⟩
    D3M3,
}

impl fmt::Display for InitialState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitialState::D1M0 => "D1_m0",
            InitialState::D3M0 => "D3_m0",
            InitialState::D3M3 => "D3_m3",
        })
    }
}

impl FromStr for InitialState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "d1_m0" | "3d1_m0" => Ok(InitialState::D1M0),
            "d3_m0" | "3d3_m0" => Ok(InitialState::D3M0),
            "d3_m3" | "3d3_m3" => Ok(InitialState::D3M3),
            other => invalid(format!("unknown initial state '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SchemeOptions {
    /// Keep the weak ³D₁ → ³P₂ line as an extra, spatially uncorrelated
    /// loss channel.
    pub include_weak_p2_loss: bool,
}

/// Reduced excited-state decay structure used by the many-body solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelScheme {
    pub species: Option<Species>,
    pub initial_state: Option<InitialState>,
    pub channels: Vec<DecayChannel>,
    /// Γ₀ = Σₐ Γ₀ᵃ in s⁻¹.
    pub total_rate: f64,
}

const CHANNEL_KEYS: [&str; 6] = ["f", "g", "h", "i", "k", "l"];

impl LevelScheme {
    /// Build a scheme from explicit channels; labels are reassigned f, g, h...
    pub fn from_channels(mut channels: Vec<DecayChannel>) -> Result<Self> {
        if channels.is_empty() {
            return invalid("a level scheme needs at least one channel");
        }
        if channels.len() > CHANNEL_KEYS.len() {
            return invalid("too many decay channels");
        }
        for (ch, key) in channels.iter_mut().zip(CHANNEL_KEYS) {
            if !(ch.rate >= 0.0) || !(ch.wavelength > 0.0) {
                return invalid(format!("channel {} has invalid rate or wavelength", ch.ground));
            }
            let n = inner(&ch.polarization, &ch.polarization).re;
            if (n - 1.0).abs() > 1e-12 {
                return invalid(format!("channel {} polarization is not normalized", ch.ground));
            }
            ch.label = key.to_string();
        }
        let total_rate = channels.iter().map(|c| c.rate).sum::<f64>();
        if !(total_rate > 0.0) {
            return invalid("total decay rate must be positive");
        }
        Ok(LevelScheme {
            species: None,
            initial_state: None,
            channels,
            total_rate,
        })
    }

    /// Two-level scheme with a single channel.
    pub fn two_level(rate: f64, wavelength: f64, polarization: Polarization) -> Result<Self> {
        LevelScheme::from_channels(vec![DecayChannel {
            label: String::new(),
            ground: "g".into(),
            rate,
            wavelength,
            polarization,
            collective: true,
        }])
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// Γ₀ᵃ/Γ₀ for every channel.
    pub fn branching(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.rate / self.total_rate).collect()
    }

    /// Index of the strongest channel.
    pub fn dominant_channel(&self) -> usize {
        let mut best = 0;
        for (i, c) in self.channels.iter().enumerate() {
            if c.rate > self.channels[best].rate {
                best = i;
            }
        }
        best
    }

    /// Wavelength of the dominant channel (the λ₀ used to quote spacings).
    pub fn reference_wavelength(&self) -> f64 {
        self.channels[self.dominant_channel()].wavelength
    }

    /// Copy of the scheme with the listed channel rates set to zero.
    /// The total rate shrinks accordingly.
    pub fn with_channels_silenced(&self, silenced: &[usize]) -> Result<Self> {
        let mut out = self.clone();
        for &i in silenced {
            if i >= out.channels.len() {
                return invalid(format!("no channel {i}"));
            }
            out.channels[i].rate = 0.0;
        }
        out.total_rate = out.channels.iter().map(|c| c.rate).sum();
        if !(out.total_rate > 0.0) {
            return invalid("cannot silence every channel");
        }
        Ok(out)
    }
}

fn zeeman_channel(
    species: Species,
    upper: Term,
    lower: Term,
    m: i32,
    q: i32,
    polarization: Polarization,
) -> Result<DecayChannel> {
    let line = transition(species, upper, lower)?;
    let weight = relative_line_strength(upper.j(), m, q, lower.j())?;
    Ok(DecayChannel {
        label: String::new(),
        ground: format!("{}(m={:+})", lower, m - q),
        rate: line.line_rate * weight,
        wavelength: line.wavelength,
        polarization,
        collective: true,
    })
}

/// Reduced level scheme for a species prepared in `initial_state`.
pub fn build_level_scheme(
    species: Species,
    initial_state: InitialState,
    options: SchemeOptions,
) -> Result<LevelScheme> {
    let channels = match initial_state {
        InitialState::D1M0 => {
            let mut ch = vec![
                zeeman_channel(species, Term::D1, Term::P0, 0, 0, spherical_polarization(0))?,
                zeeman_channel(species, Term::D1, Term::P1, 0, -1, spherical_polarization(1))?,
                zeeman_channel(species, Term::D1, Term::P1, 0, 1, spherical_polarization(-1))?,
            ];
            // the m = 0 -> m' = 0 component of the same line is forbidden
            debug_assert_eq!(relative_line_strength(1, 0, 0, 1).ok(), Some(0.0));
            if options.include_weak_p2_loss {
                let line = transition(species, Term::D1, Term::P2)?;
                ch.push(DecayChannel {
                    label: String::new(),
                    ground: format!("{}(loss)", Term::P2),
                    rate: line.line_rate,
                    wavelength: line.wavelength,
                    polarization: spherical_polarization(0),
                    collective: false,
                });
            }
            ch
        }
        InitialState::D3M0 => vec![
            zeeman_channel(species, Term::D3, Term::P2, 0, 0, spherical_polarization(0))?,
            zeeman_channel(species, Term::D3, Term::P2, 0, -1, spherical_polarization(1))?,
            zeeman_channel(species, Term::D3, Term::P2, 0, 1, spherical_polarization(-1))?,
        ],
        InitialState::D3M3 => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            // rotated quantization axis: dipole (ŷ + iẑ)/√2
            let pol = [c(0.0, 0.0), c(s, 0.0), c(0.0, s)];
            vec![zeeman_channel(species, Term::D3, Term::P2, 3, 1, pol)?]
        }
    };
    let mut scheme = LevelScheme::from_channels(channels)?;
    scheme.species = Some(species);
    scheme.initial_state = Some(initial_state);
    Ok(scheme)
}

/// Field B = NħΓ₀/μ_B (in gauss) above which the Zeeman splitting exceeds
/// the collectively broadened linewidth.
pub fn min_zeeman_field(n_atoms: usize, total_rate: f64) -> Result<f64> {
    if n_atoms == 0 {
        return invalid("atom count must be at least 1");
    }
    let tesla = n_atoms as f64 * HBAR * total_rate / BOHR_MAGNETON;
    Ok(tesla * 1e4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows() {
        assert_eq!(species_transitions(Species::Yb174).len(), 7);
        assert_eq!(species_transitions(Species::Sr88).len(), 7);
        let t = transition(Species::Yb174, Term::D1, Term::P0).unwrap();
        assert_eq!((t.wavelength, t.line_rate), (1389.0, 2e6));
        let t = transition(Species::Sr88, Term::D3, Term::P2).unwrap();
        assert_eq!((t.wavelength, t.line_rate), (2920.0, 5.9e5));
        assert!(transition(Species::Sr88, Term::D3, Term::P0).is_err());
        assert!("Ra226".parse::<Species>().is_err());
    }

    #[test]
    fn known_strengths() {
        assert_eq!(relative_line_strength(1, 0, 0, 1).unwrap(), 0.0);
        assert!((relative_line_strength(3, 0, 0, 2).unwrap() - 0.6).abs() < 1e-14);
        assert!((relative_line_strength(3, 0, 1, 2).unwrap() - 0.2).abs() < 1e-14);
        assert!((relative_line_strength(3, 0, -1, 2).unwrap() - 0.2).abs() < 1e-14);
        assert!((relative_line_strength(3, 3, 1, 2).unwrap() - 1.0).abs() < 1e-14);
        assert!(relative_line_strength(1, 2, 0, 1).is_err());
        assert!(relative_line_strength(3, 3, -1, 2).is_err());
        assert!(relative_line_strength(3, 0, 0, 1).is_err());
    }

    #[test]
    fn yb_d1_scheme() {
        let s = build_level_scheme(Species::Yb174, InitialState::D1M0, SchemeOptions::default())
            .unwrap();
        assert_eq!(s.n_channels(), 3);
        assert!((s.channels[0].rate - 2e6).abs() < 1e-6);
        assert_eq!(s.channels[0].wavelength, 1389.0);
        for ch in &s.channels[1..] {
            assert!((ch.rate - 0.5e6).abs() < 1e-6);
            assert_eq!(ch.wavelength, 1540.0);
        }
        assert!((s.total_rate - 3e6).abs() < 1e-6);
        let labels: Vec<_> = s.channels.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(labels, ["f", "g", "h"]);
    }

    #[test]
    fn optional_loss_channel() {
        let opts = SchemeOptions {
            include_weak_p2_loss: true,
        };
        let s = build_level_scheme(Species::Yb174, InitialState::D1M0, opts).unwrap();
        assert_eq!(s.n_channels(), 4);
        assert!(!s.channels[3].collective);
        assert!((s.total_rate - 3.03e6).abs() < 1e-6);
    }

    #[test]
    fn sr_d3_pi_share() {
        let s = build_level_scheme(Species::Sr88, InitialState::D3M0, SchemeOptions::default())
            .unwrap();
        assert!((s.branching()[0] - 0.6).abs() < 1e-12);
        assert_eq!(s.dominant_channel(), 0);
    }

    #[test]
    fn d3_m3_is_two_level() {
        let s = build_level_scheme(Species::Yb174, InitialState::D3M3, SchemeOptions::default())
            .unwrap();
        assert_eq!(s.n_channels(), 1);
        assert!((s.total_rate - 2e6).abs() < 1e-6);
        assert_eq!(s.channels[0].wavelength, 1800.0);
    }

    #[test]
    fn polarizations_orthonormal() {
        for s in [InitialState::D1M0, InitialState::D3M0] {
            let sc = build_level_scheme(Species::Sr88, s, SchemeOptions::default()).unwrap();
            for (i, a) in sc.channels.iter().enumerate() {
                for (j, b) in sc.channels.iter().enumerate() {
                    let ip = inner(&a.polarization, &b.polarization);
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((ip - want).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zeeman_bound() {
        let one = min_zeeman_field(1, 3.53e6).unwrap();
        assert!((one - HBAR * 3.53e6 / BOHR_MAGNETON * 1e4).abs() < 1e-18);
        let big = min_zeeman_field(144, 3.53e6).unwrap();
        // tens of gauss: "order 100 G"
        assert!((57.0..59.0).contains(&big), "{big}");
        assert!(min_zeeman_field(0, 1.0).is_err());
    }
}
