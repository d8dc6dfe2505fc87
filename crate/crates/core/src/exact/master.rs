//! Master-equation evolution of two-level arrays.
//!
//! From the fully excited state the density matrix stays block diagonal in
//! the excitation number, so only the blocks ρ_k are stored:
//! dρ_k/dt = −i(H ρ_k − ρ_k H†) + Σ_jl Γ_jl σ_l⁻ ρ_{k+1} σ_j⁺.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use super::blocks::{effective_hamiltonian, Blocks, Csr};
use super::require_two_level;
use crate::cumulant::{ChannelConstants, Probe};
use crate::dicke_point::check_grid;
use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, Detector};
use crate::interactions::CouplingSet;
use crate::ode::{Dopri5, Tolerances};
use crate::record::{DirectionalSeries, EmissionRecord};

pub const MAX_MASTER_ATOMS: usize = 10;

#[derive(Debug, Clone)]
pub struct MasterOptions {
    pub tolerances: Tolerances,
    pub probes: Vec<Detector>,
}

impl Default for MasterOptions {
    fn default() -> Self {
        MasterOptions {
            tolerances: Tolerances::new(1e-9, 1e-12),
            probes: Vec::new(),
        }
    }
}

struct Model {
    blocks: Blocks,
    ham: Vec<Csr>,
    gamma: DMatrix<f64>,
    offsets: Vec<usize>,
    len: usize,
}

impl Model {
    fn new(set: &CouplingSet) -> Model {
        let n = set.n_atoms;
        let blocks = Blocks::new(n);
        let a = set.channels[0].a_matrix();
        let ham = (0..=n).map(|k| effective_hamiltonian(&blocks, k, &a)).collect();
        let mut offsets = Vec::with_capacity(n + 2);
        let mut acc = 0;
        for k in 0..=n {
            offsets.push(acc);
            acc += blocks.size(k) * blocks.size(k);
        }
        offsets.push(acc);
        Model {
            gamma: set.channels[0].gamma.map(|z| z.re),
            blocks,
            ham,
            offsets,
            len: acc,
        }
    }

    fn block<'a>(&self, y: &'a [C64], k: usize) -> &'a [C64] {
        &y[self.offsets[k]..self.offsets[k + 1]]
    }

    fn rhs(&self, y: &[C64], dy: &mut [C64]) {
        let n = self.blocks.n;
        let i = C64::new(0.0, 1.0);
        for k in 0..=n {
            let d = self.blocks.size(k);
            let rho = self.block(y, k);
            let out = &mut dy[self.offsets[k]..self.offsets[k + 1]];
            // M = H ρ (row-major blocks)
            let h = &self.ham[k];
            let mut m = vec![C64::new(0.0, 0.0); d * d];
            for r in 0..d {
                let row = &mut m[r * d..(r + 1) * d];
                h.for_row(r, |c, v| {
                    for (mm, s) in row.iter_mut().zip(&rho[c * d..(c + 1) * d]) {
                        *mm += v * s;
                    }
                });
            }
            for x in 0..d {
                for yy in 0..d {
                    out[x * d + yy] = -i * (m[x * d + yy] - m[yy * d + x].conj());
                }
            }
            if k < n {
                self.add_jumps(y, k, out);
            }
        }
        dy[self.len] = C64::new(self.rate(y), 0.0);
    }

    fn add_jumps(&self, y: &[C64], k: usize, out: &mut [C64]) {
        let n = self.blocks.n;
        let d = self.blocks.size(k);
        let up = self.blocks.size(k + 1);
        let rho = self.block(y, k + 1);
        // T[x, Y] = Σ_l Γ_jl ρ[x + l, Y] is not separable in j, so loop
        // over (x, l) rows first and scatter into every y reached by j.
        let states = &self.blocks.states[k];
        let mut raised: Vec<Vec<(usize, usize)>> = Vec::with_capacity(d);
        for &mask in states {
            raised.push(
                (0..n)
                    .filter(|b| mask & (1 << b) == 0)
                    .map(|b| (b, self.blocks.pos(mask | (1 << b))))
                    .collect(),
            );
        }
        for x in 0..d {
            for &(l, xl) in &raised[x] {
                let row = &rho[xl * up..(xl + 1) * up];
                for yy in 0..d {
                    let mut acc = C64::new(0.0, 0.0);
                    for &(j, yj) in &raised[yy] {
                        acc += row[yj] * self.gamma[(j, l)];
                    }
                    out[x * d + yy] += acc;
                }
            }
        }
    }

    /// C_jl = ⟨σ_j⁺σ_l⁻⟩ = Σ_a ρ[a, a − l + j].
    fn correlations(&self, y: &[C64]) -> DMatrix<C64> {
        let n = self.blocks.n;
        let mut c = DMatrix::zeros(n, n);
        for k in 1..=n {
            let d = self.blocks.size(k);
            let rho = self.block(y, k);
            for (ai, &mask) in self.blocks.states[k].iter().enumerate() {
                for l in 0..n {
                    if mask & (1 << l) == 0 {
                        continue;
                    }
                    let lowered = mask & !(1 << l);
                    for j in 0..n {
                        if lowered & (1 << j) != 0 {
                            continue;
                        }
                        let b = self.blocks.pos(lowered | (1 << j));
                        c[(j, l)] += rho[ai * d + b];
                    }
                }
            }
        }
        c
    }

    fn rate(&self, y: &[C64]) -> f64 {
        let c = self.correlations(y);
        let mut r = 0.0;
        for j in 0..self.blocks.n {
            for l in 0..self.blocks.n {
                r += self.gamma[(j, l)] * c[(j, l)].re;
            }
        }
        r
    }
}

/// Evolve the fully excited two-level array on `t_grid` (units 1/Γ₀).
pub fn master_equation_evolve(
    set: &CouplingSet,
    geometry: Option<&ArrayGeometry>,
    t_grid: &[f64],
    opts: &MasterOptions,
) -> Result<EmissionRecord> {
    require_two_level(set)?;
    check_grid(t_grid)?;
    let n = set.n_atoms;
    if n > MAX_MASTER_ATOMS {
        return Err(Error::Resource(format!(
            "master equation supports at most {MAX_MASTER_ATOMS} atoms, got {n}"
        )));
    }
    let probes = super::mcwf::build_probes(set, geometry, &opts.probes)?;
    let model = Model::new(set);
    let mut y = vec![C64::new(0.0, 0.0); model.len + 1];
    y[model.offsets[n]] = C64::new(1.0, 0.0);

    let mut record = EmissionRecord::new(vec![set.channels[0].label.clone()]);
    record.directional = probes
        .iter()
        .map(|p| DirectionalSeries {
            channel: 0,
            detector: p.detector,
            values: Vec::new(),
            stderr: None,
        })
        .collect();
    let mut samples = Vec::with_capacity(t_grid.len());
    let mut solver = Dopri5::<C64>::new(y.len(), opts.tolerances);
    let res = solver.integrate(
        |_, y, dy| model.rhs(y, dy),
        0.0,
        &mut y,
        t_grid,
        |t, y| {
            let c = model.correlations(y);
            let mut rate = 0.0;
            for j in 0..n {
                for l in 0..n {
                    rate += model.gamma[(j, l)] * c[(j, l)].re;
                }
            }
            // probes expect ⟨σ_l⁺σ_j⁻⟩ at (l, j), which is C itself
            let dir: Vec<f64> = probes.iter().map(|p| p.eval(&c)).collect();
            samples.push((t, rate, y[model.len].re, dir));
        },
    );
    for (t, rate, photons, dir) in samples {
        record.push(t, &[rate], &[photons], &dir);
    }
    if let Err(fail) = res {
        return Err(Error::Integration {
            t: fail.t,
            reason: fail.reason,
            partial: Some(Box::new(record)),
        });
    }
    Ok(record)
}

pub(crate) fn probe_for(set: &CouplingSet, geometry: &ArrayGeometry, det: &Detector) -> Probe {
    let consts = ChannelConstants::from_coupling_set(set);
    Probe::new(&consts[0], 0, geometry, det)
}
