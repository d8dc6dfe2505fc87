//! Photon-mediated couplings J and Γ from the free-space Green's tensor.
//!
//! All matrices are dimensionless in units of the scheme's total rate Γ₀, so
//! `gamma[(j, j)] = Γ₀ᵃ/Γ₀`.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::atoms::{DecayChannel, LevelScheme, Polarization};
use crate::error::{invalid, Error, Result};
use crate::geometry::{norm, sub, ArrayGeometry, Vec3};
use crate::record::fmt_f64;

/// |𝐝*·v̂|² for a real direction `v` (normalized internally).
pub fn projection(d: &Polarization, v: Vec3) -> f64 {
    let n = norm(v);
    let s: C64 = d.iter().zip(v).map(|(di, vi)| di.conj() * (vi / n)).sum();
    s.norm_sqr()
}

/// (J, Γ) in units of Γ₀ᵃ for dimensionless distance `u = k|r|` and
/// projection `p = |𝐝*·r̂|²`.
pub fn greens_real(u: f64, p: f64) -> (f64, f64) {
    let (s, c) = u.sin_cos();
    let (sinc, tail) = if u < 1e-2 {
        let u2 = u * u;
        (
            1.0 - u2 / 6.0 + u2 * u2 / 120.0,
            -1.0 / 3.0 + u2 / 30.0 - u2 * u2 / 840.0,
        )
    } else {
        (s / u, c / (u * u) - s / (u * u * u))
    };
    let gamma = 1.5 * ((1.0 - p) * sinc + (1.0 - 3.0 * p) * tail);
    let j = -0.75 * ((1.0 - p) * c / u - (1.0 - 3.0 * p) * (s / (u * u) + c / (u * u * u)));
    (j, gamma)
}

/// Coupling (J_jl, Γ_jl) between two atoms displaced by `r` (nm), in units
/// of the channel rate Γ₀ᵃ. Both are real because the dyadic propagator is a
/// real symmetric tensor contracted with 𝐝* and 𝐝.
pub fn greens_coupling(r: Vec3, channel: &DecayChannel) -> Result<(C64, C64)> {
    let dist = norm(r);
    if !(dist > 0.0) {
        return Err(Error::Domain(
            "coincident atoms; use the point model for atoms at one location".into(),
        ));
    }
    let (j, g) = greens_real(channel.wavenumber() * dist, projection(&channel.polarization, r));
    Ok((C64::new(j, 0.0), C64::new(g, 0.0)))
}

/// Γᵃ in units of Γ₀ᵃ (unit diagonal), as a real symmetric matrix.
pub fn dissipative_matrix(geometry: &ArrayGeometry, channel: &DecayChannel) -> Result<DMatrix<f64>> {
    Ok(real_matrices(geometry, channel, false)?.1)
}

fn real_matrices(
    geometry: &ArrayGeometry,
    channel: &DecayChannel,
    coherent: bool,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = geometry.len();
    let mut jm = DMatrix::<f64>::zeros(if coherent { n } else { 0 }, if coherent { n } else { 0 });
    let mut gm = DMatrix::<f64>::identity(n, n);
    if !channel.collective {
        return Ok((DMatrix::zeros(n, n), gm));
    }
    let k = channel.wavenumber();
    for j in 0..n {
        for l in j + 1..n {
            let r = sub(geometry.positions[l], geometry.positions[j]);
            let dist = norm(r);
            if !(k * dist > 1e-12) {
                return Err(Error::Domain(format!(
                    "atoms {j} and {l} coincide; use the point model for atoms at one location"
                )));
            }
            let (jv, gv) = greens_real(k * dist, projection(&channel.polarization, r));
            gm[(j, l)] = gv;
            gm[(l, j)] = gv;
            if coherent {
                jm[(j, l)] = jv;
                jm[(l, j)] = jv;
            }
        }
    }
    Ok((jm, gm))
}

/// Couplings of one channel in units of the total rate Γ₀.
#[derive(Debug, Clone)]
pub struct ChannelCoupling {
    pub label: String,
    /// Γ₀ᵃ/Γ₀.
    pub branching: f64,
    /// k₀ᵃ in nm⁻¹.
    pub wavenumber: f64,
    pub polarization: Polarization,
    pub gamma: DMatrix<C64>,
    pub j_coh: DMatrix<C64>,
    /// Collective decay rates Γ_ν, descending.
    pub spectrum: Vec<f64>,
    /// Column ν holds the eigenvector v_ν with Γ = Σ_ν Γ_ν v_ν v_ν†.
    /// The collective lowering operator is O_ν = Σ_l conj(v_ν[l]) σ_l.
    pub modes: DMatrix<C64>,
}

impl ChannelCoupling {
    /// α_{ν,l} = conj(V_{lν}).
    pub fn alpha(&self, nu: usize, l: usize) -> C64 {
        self.modes[(l, nu)].conj()
    }

    /// A = J − iΓ/2.
    pub fn a_matrix(&self) -> DMatrix<C64> {
        let half_i = C64::new(0.0, 0.5);
        self.j_coh.zip_map(&self.gamma, |j, g| j - half_i * g)
    }

    /// Σ_jl |Γ_jl|².
    pub fn frobenius_sq(&self) -> f64 {
        self.gamma.iter().map(|z| z.norm_sqr()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct CouplingSet {
    pub n_atoms: usize,
    pub channels: Vec<ChannelCoupling>,
}

impl CouplingSet {
    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// Per-channel rates Γ₀ᵃ/Γ₀.
    pub fn branching(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.branching).collect()
    }

    /// Row-major dump: `channel,j,l,gamma_re,gamma_im,j_re,j_im`.
    pub fn matrices_csv(&self) -> String {
        let mut out = String::from("channel,j,l,gamma_re,gamma_im,j_re,j_im\n");
        for ch in &self.channels {
            for j in 0..self.n_atoms {
                for l in 0..self.n_atoms {
                    let g = ch.gamma[(j, l)];
                    let h = ch.j_coh[(j, l)];
                    let _ = writeln!(
                        out,
                        "{},{j},{l},{},{},{},{}",
                        ch.label,
                        fmt_f64(g.re),
                        fmt_f64(g.im),
                        fmt_f64(h.re),
                        fmt_f64(h.im)
                    );
                }
            }
        }
        out
    }

    /// `channel,nu,gamma_nu` with rates in units of Γ₀.
    pub fn spectrum_csv(&self) -> String {
        let mut out = String::from("channel,nu,gamma_nu\n");
        for ch in &self.channels {
            for (nu, g) in ch.spectrum.iter().enumerate() {
                let _ = writeln!(out, "{},{nu},{}", ch.label, fmt_f64(*g));
            }
        }
        out
    }
}

/// Hermitian eigendecomposition with eigenvalues sorted descending.
pub fn hermitian_spectrum(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

fn to_complex(m: &DMatrix<f64>, scale: f64) -> DMatrix<C64> {
    m.map(|x| C64::new(x * scale, 0.0))
}

/// Build J and Γ for every channel of `scheme` and diagonalize each Γ.
pub fn coupling_matrices(geometry: &ArrayGeometry, scheme: &LevelScheme) -> Result<CouplingSet> {
    if geometry.is_empty() {
        return invalid("geometry has no atoms");
    }
    let n = geometry.len();
    let mut channels = Vec::with_capacity(scheme.n_channels());
    for (ch, branching) in scheme.channels.iter().zip(scheme.branching()) {
        let (jm, gm) = real_matrices(geometry, ch, true)?;
        let gamma = to_complex(&gm, branching);
        let j_coh = if jm.nrows() == n {
            to_complex(&jm, branching)
        } else {
            DMatrix::zeros(n, n)
        };
        let (mut spectrum, modes) = hermitian_spectrum(&gamma);
        for g in spectrum.iter_mut() {
            if *g < 0.0 {
                if *g < -1e-8 * branching {
                    log::warn!("channel {}: clamping eigenvalue {g:e} to zero", ch.label);
                }
                *g = 0.0;
            }
        }
        channels.push(ChannelCoupling {
            label: ch.label.clone(),
            branching,
            wavenumber: ch.wavenumber(),
            polarization: ch.polarization,
            gamma,
            j_coh,
            spectrum,
            modes,
        });
    }
    Ok(CouplingSet {
        n_atoms: n,
        channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atoms::spherical_polarization;
    use crate::geometry::{from_positions, square_lattice};
    use std::f64::consts::PI;

    fn channel(pol: Polarization, wavelength: f64) -> DecayChannel {
        DecayChannel {
            label: "f".into(),
            ground: "g".into(),
            rate: 1.0,
            wavelength,
            polarization: pol,
            collective: true,
        }
    }

    #[test]
    fn closed_form_values() {
        let ch = channel(spherical_polarization(0), 2.0 * PI);
        let (_, g) = greens_coupling([2.0 * PI, 0.0, 0.0], &ch).unwrap();
        assert!((g.re - 3.0 / (8.0 * PI * PI)).abs() < 1e-14);
        let (_, g) = greens_coupling([0.0, 0.0, 2.0 * PI], &ch).unwrap();
        assert!((g.re + 3.0 / (4.0 * PI * PI)).abs() < 1e-14);
        assert!(greens_coupling([0.0; 3], &ch).is_err());
    }

    #[test]
    fn point_limit_and_series_continuity() {
        for p in [0.0, 0.3, 1.0] {
            let (_, g) = greens_real(1e-3, p);
            assert!((g - 1.0).abs() < 1e-6);
            let below = greens_real(1e-2 * (1.0 - 1e-12), p).1;
            let above = greens_real(1e-2 * (1.0 + 1e-12), p).1;
            assert!((below - above).abs() < 1e-12);
        }
    }

    #[test]
    fn two_atoms_dicke_limit() {
        let ch = channel(spherical_polarization(0), 2.0 * PI);
        let mut scheme = LevelScheme::from_channels(vec![ch]).unwrap();
        scheme.channels[0].rate = 1.0;
        let g = from_positions(vec![[0.0; 3], [0.05, 0.0, 0.0]]).unwrap();
        let cs = coupling_matrices(&g, &scheme).unwrap();
        let s = &cs.channels[0].spectrum;
        assert!((s[0] - 2.0).abs() < 0.1 && s[1] < 0.1);
    }

    #[test]
    fn single_atom() {
        let scheme = LevelScheme::two_level(1e6, 800.0, spherical_polarization(0)).unwrap();
        let g = square_lattice(1, 1, 100.0).unwrap();
        let cs = coupling_matrices(&g, &scheme).unwrap();
        assert_eq!(cs.channels[0].spectrum, vec![1.0]);
        assert_eq!(cs.channels[0].gamma[(0, 0)], C64::new(1.0, 0.0));
    }
}
