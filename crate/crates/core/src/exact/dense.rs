//! Dense Lindblad evolution of a multilevel array, all channels included.
//!
//! Each atom has levels {e, g₀, …, g_{K−1}}; the Hilbert space is
//! (K+1)^N-dimensional and the density matrix is stored densely.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::cumulant::{ChannelConstants, CumulantState, Probe};
use crate::dicke_point::check_grid;
use crate::error::{invalid, Error, Result};
use crate::geometry::{ArrayGeometry, Detector};
use crate::interactions::CouplingSet;
use crate::ode::{Dopri5, Tolerances};
use crate::record::{DirectionalSeries, EmissionRecord};

pub const MAX_DENSE_DIM: usize = 1024;

const EXCITED: usize = 0;

/// Sparse entry `(row, col, value)`.
type Entry = (usize, usize, C64);

pub struct DenseLindblad {
    n: usize,
    k: usize,
    dim: usize,
    /// Effective non-Hermitian Hamiltonian, sparse.
    heff: Vec<Entry>,
    /// `lowered[x][l][s]`: basis index after σ_xe^l acts on `s`, if any.
    lowered: Vec<Vec<Vec<Option<usize>>>>,
    gamma: Vec<DMatrix<f64>>,
    consts: Vec<ChannelConstants>,
}

impl DenseLindblad {
    pub fn new(set: &CouplingSet) -> Result<DenseLindblad> {
        let n = set.n_atoms;
        let k = set.n_channels();
        if n == 0 || k == 0 {
            return invalid("need at least one atom and one channel");
        }
        let dim = (k + 1)
            .checked_pow(n as u32)
            .filter(|d| *d <= MAX_DENSE_DIM)
            .ok_or_else(|| {
                Error::Resource(format!(
                    "dense Lindblad limited to dimension {MAX_DENSE_DIM}; {n} atoms with {k} channels exceed it"
                ))
            })?;
        let stride: Vec<usize> = (0..n).map(|j| (k + 1).pow(j as u32)).collect();
        let level = |s: usize, j: usize| (s / stride[j]) % (k + 1);
        let lowered: Vec<Vec<Vec<Option<usize>>>> = (0..k)
            .map(|x| {
                (0..n)
                    .map(|l| {
                        (0..dim)
                            .map(|s| (level(s, l) == EXCITED).then(|| s + (x + 1) * stride[l]))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let consts = ChannelConstants::from_coupling_set(set);
        let mut heff = Vec::new();
        for (x, c) in consts.iter().enumerate() {
            for s in 0..dim {
                for l in 0..n {
                    let Some(mid) = lowered[x][l][s] else { continue };
                    for j in 0..n {
                        if level(mid, j) == x + 1 {
                            let a = c.a[(j, l)];
                            if a != C64::new(0.0, 0.0) {
                                heff.push((mid - (x + 1) * stride[j], s, a));
                            }
                        }
                    }
                }
            }
        }
        Ok(DenseLindblad {
            n,
            k,
            dim,
            heff,
            lowered,
            gamma: set.channels.iter().map(|c| c.gamma.map(|z| z.re)).collect(),
            consts,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major density matrix of the fully excited state.
    pub fn fully_excited(&self) -> Vec<C64> {
        let mut rho = vec![C64::new(0.0, 0.0); self.dim * self.dim];
        rho[0] = C64::new(1.0, 0.0);
        rho
    }

    /// dρ/dt = −i(Hρ − ρH†) + Σ_x Σ_jl Γ^x_jl σ_xe^l ρ σ_ex^j.
    pub fn rhs(&self, rho: &[C64], drho: &mut [C64]) {
        let d = self.dim;
        drho.fill(C64::new(0.0, 0.0));
        let i = C64::new(0.0, 1.0);
        for &(r, c, a) in &self.heff {
            // (Hρ)[r, :] += a ρ[c, :]; (ρH†)[:, r] += conj(a) ρ[:, c]
            for col in 0..d {
                drho[r * d + col] -= i * a * rho[c * d + col];
            }
            let ac = a.conj();
            for row in 0..d {
                drho[row * d + r] += i * ac * rho[row * d + c];
            }
        }
        for (x, g) in self.gamma.iter().enumerate() {
            let low = &self.lowered[x];
            for l in 0..self.n {
                for j in 0..self.n {
                    let w = g[(j, l)];
                    if w == 0.0 {
                        continue;
                    }
                    for a in 0..d {
                        let Some(ra) = low[l][a] else { continue };
                        for b in 0..d {
                            if let Some(rb) = low[j][b] {
                                drho[ra * d + rb] += rho[a * d + b] * w;
                            }
                        }
                    }
                }
            }
        }
    }

    fn level(&self, s: usize, j: usize) -> usize {
        (s / (self.k + 1).pow(j as u32)) % (self.k + 1)
    }

    /// Exact one- and two-body moments in the cumulant layout.
    pub fn moments(&self, rho: &[C64]) -> CumulantState {
        let (n, k, d) = (self.n, self.k, self.dim);
        let mut st = CumulantState {
            excited: vec![0.0; n],
            ground: vec![vec![0.0; n]; k],
            ee: DMatrix::zeros(n, n),
            eg: vec![DMatrix::zeros(n, n); k],
            coh: vec![DMatrix::zeros(n, n); k],
        };
        for s in 0..d {
            let p = rho[s * d + s].re;
            for j in 0..n {
                let lj = self.level(s, j);
                if lj == EXCITED {
                    st.excited[j] += p;
                } else {
                    st.ground[lj - 1][j] += p;
                }
                for l in 0..n {
                    if l == j || lj != EXCITED {
                        continue;
                    }
                    let ll = self.level(s, l);
                    if ll == EXCITED {
                        st.ee[(j, l)] += p;
                    } else {
                        st.eg[ll - 1][(j, l)] += p;
                    }
                }
            }
        }
        // ⟨σ_ex^j σ_xe^l⟩ = Σ_a ρ[a, b] with b = σ_ex^j σ_xe^l a
        for x in 0..k {
            let low = &self.lowered[x];
            for l in 0..n {
                for a in 0..d {
                    let Some(mid) = low[l][a] else { continue };
                    for j in 0..n {
                        if j == l {
                            continue;
                        }
                        if self.level(mid, j) == x + 1 {
                            let b = mid - (x + 1) * (self.k + 1).pow(j as u32);
                            st.coh[x][(j, l)] += rho[a * d + b];
                        }
                    }
                }
            }
            for j in 0..n {
                st.coh[x][(j, j)] = C64::new(st.excited[j], 0.0);
            }
        }
        st
    }

    /// Emission rate of every channel, R_x = Σ_jl Γ^x_jl Re⟨σ_ex^j σ_xe^l⟩.
    pub fn rates(&self, rho: &[C64]) -> Vec<f64> {
        let st = self.moments(rho);
        self.rates_of(&st)
    }

    fn rates_of(&self, st: &CumulantState) -> Vec<f64> {
        self.gamma
            .iter()
            .zip(&st.coh)
            .map(|(g, c)| {
                let mut r = 0.0;
                for j in 0..self.n {
                    for l in 0..self.n {
                        r += g[(j, l)] * c[(j, l)].re;
                    }
                }
                r
            })
            .collect()
    }

    /// dR_x/dt at `rho`.
    pub fn rate_derivatives(&self, rho: &[C64]) -> Vec<f64> {
        let mut drho = vec![C64::new(0.0, 0.0); rho.len()];
        self.rhs(rho, &mut drho);
        let st = self.moments(&drho);
        self.rates_of(&st)
    }

    /// Evolve the fully excited array, returning the emission record and the
    /// exact moments at each grid time.
    pub fn evolve(
        &self,
        geometry: Option<&ArrayGeometry>,
        probes: &[(usize, Detector)],
        t_grid: &[f64],
        tol: Tolerances,
    ) -> Result<(EmissionRecord, Vec<CumulantState>)> {
        check_grid(t_grid)?;
        let probes: Vec<Probe> = if probes.is_empty() {
            Vec::new()
        } else {
            let Some(g) = geometry else {
                return invalid("directional probes need the array geometry");
            };
            if g.len() != self.n {
                return invalid("geometry and coupling set sizes differ");
            }
            probes
                .iter()
                .map(|(c, det)| {
                    if *c >= self.k {
                        return invalid(format!("channel {c} out of range"));
                    }
                    Ok(Probe::new(&self.consts[*c], *c, g, det))
                })
                .collect::<Result<_>>()?
        };
        let mut record =
            EmissionRecord::new(self.consts.iter().map(|c| c.label.clone()).collect());
        record.directional = probes
            .iter()
            .map(|p| DirectionalSeries {
                channel: p.channel,
                detector: p.detector,
                values: Vec::new(),
                stderr: None,
            })
            .collect();
        let mut rho = self.fully_excited();
        let mut states = Vec::with_capacity(t_grid.len());
        let mut samples = Vec::with_capacity(t_grid.len());
        let mut solver = Dopri5::<C64>::new(rho.len(), tol);
        let res = solver.integrate(
            |_, y, dy| self.rhs(y, dy),
            0.0,
            &mut rho,
            t_grid,
            |t, y| {
                let st = self.moments(y);
                let rates = self.rates_of(&st);
                let dir: Vec<f64> = probes.iter().map(|p| p.eval(&st.coh[p.channel])).collect();
                samples.push((t, rates, dir));
                states.push(st);
            },
        );
        for (t, rates, dir) in samples {
            record.push(t, &rates, &[], &dir);
        }
        if let Err(fail) = res {
            return Err(Error::Integration {
                t: fail.t,
                reason: fail.reason,
                partial: Some(Box::new(record)),
            });
        }
        Ok((record, states))
    }
}
