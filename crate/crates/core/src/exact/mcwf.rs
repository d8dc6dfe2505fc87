//! Monte Carlo wavefunction trajectories for two-level arrays.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::blocks::{effective_hamiltonian, Blocks, Csr};
use super::master::probe_for;
use super::require_two_level;
use crate::cumulant::Probe;
use crate::dicke_point::check_grid;
use crate::error::{invalid, Error, Result};
use crate::geometry::{ArrayGeometry, Detector};
use crate::interactions::CouplingSet;
use crate::ode::{Dopri5, Tolerances};
use crate::record::{DirectionalSeries, EmissionRecord};

pub const MAX_MCWF_ATOMS: usize = 16;

/// Choice of jump operators L_m = Σ_l c_ml σ_l⁻ with Σ_m c̄_mj c_ml = Γ_jl.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unravelling {
    /// Collective eigenmodes: c_νl = √Γ_ν conj(V_lν).
    Modes,
    /// Symmetric square root Γ^{1/2}: one operator per site.
    Sites,
}

#[derive(Debug, Clone)]
pub struct McwfOptions {
    pub tolerances: Tolerances,
    pub unravelling: Unravelling,
    pub probes: Vec<Detector>,
    /// Relative accuracy of the jump time located by bisection.
    pub jump_time_tol: f64,
}

impl Default for McwfOptions {
    fn default() -> Self {
        McwfOptions {
            tolerances: Tolerances::new(1e-8, 1e-10),
            unravelling: Unravelling::Modes,
            probes: Vec::new(),
            jump_time_tol: 1e-10,
        }
    }
}

pub(crate) fn build_probes(
    set: &CouplingSet,
    geometry: Option<&ArrayGeometry>,
    detectors: &[Detector],
) -> Result<Vec<Probe>> {
    if detectors.is_empty() {
        return Ok(Vec::new());
    }
    let Some(g) = geometry else {
        return invalid("directional probes need the array geometry");
    };
    if g.len() != set.n_atoms {
        return invalid("geometry and coupling set sizes differ");
    }
    Ok(detectors.iter().map(|d| probe_for(set, g, d)).collect())
}

struct Model {
    n: usize,
    blocks: Blocks,
    ham: Vec<Csr>,
    gamma: DMatrix<f64>,
    /// Jump operator coefficients `jumps[m][l]`.
    jumps: Vec<Vec<C64>>,
}

impl Model {
    fn new(set: &CouplingSet, unravelling: Unravelling) -> Model {
        let ch = &set.channels[0];
        let n = set.n_atoms;
        let blocks = Blocks::new(n);
        let a = ch.a_matrix();
        let ham = (0..=n).map(|k| effective_hamiltonian(&blocks, k, &a)).collect();
        let jumps = match unravelling {
            Unravelling::Modes => (0..n)
                .filter(|&nu| ch.spectrum[nu] > 0.0)
                .map(|nu| {
                    let s = ch.spectrum[nu].sqrt();
                    (0..n).map(|l| ch.alpha(nu, l) * s).collect()
                })
                .collect(),
            Unravelling::Sites => {
                let root = DMatrix::from_fn(n, n, |r, c| {
                    (0..n)
                        .map(|nu| ch.modes[(r, nu)] * ch.spectrum[nu].sqrt() * ch.modes[(c, nu)].conj())
                        .sum::<C64>()
                });
                (0..n).map(|m| (0..n).map(|l| root[(m, l)]).collect()).collect()
            }
        };
        Model {
            n,
            gamma: ch.gamma.map(|z| z.re),
            blocks,
            ham,
            jumps,
        }
    }

    /// L ψ for coefficients `c`, mapping block k to block k − 1.
    fn lower(&self, k: usize, c: &[C64], psi: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.blocks.size(k - 1)];
        for (i, &mask) in self.blocks.states[k].iter().enumerate() {
            let amp = psi[i];
            for l in 0..self.n {
                if mask & (1 << l) != 0 {
                    out[self.blocks.pos(mask & !(1 << l))] += c[l] * amp;
                }
            }
        }
        out
    }

    fn observables(&self, k: usize, psi: &[C64], probes: &[Probe]) -> (f64, Vec<f64>) {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        let c = self.ham[k].correlations(&self.blocks.states[k], psi) / C64::new(norm, 0.0);
        let mut rate = 0.0;
        for j in 0..self.n {
            for l in 0..self.n {
                rate += self.gamma[(j, l)] * c[(j, l)].re;
            }
        }
        (rate, probes.iter().map(|p| p.eval(&c)).collect())
    }
}

struct Trajectory {
    rates: Vec<f64>,
    directional: Vec<Vec<f64>>,
    jumps: usize,
}

fn norm_sqr(psi: &[C64]) -> f64 {
    psi.iter().map(|z| z.norm_sqr()).sum()
}

/// One trajectory; `None` signals a norm underflow.
fn run_trajectory(
    model: &Model,
    t_grid: &[f64],
    probes: &[Probe],
    opts: &McwfOptions,
    rng: &mut ChaCha8Rng,
) -> Option<Trajectory> {
    let n = model.n;
    let mut k = n;
    let mut psi = vec![C64::new(1.0, 0.0)];
    let mut t = 0.0;
    let mut threshold: f64 = rng.random::<f64>();
    let mut out = Trajectory {
        rates: Vec::with_capacity(t_grid.len()),
        directional: vec![Vec::with_capacity(t_grid.len()); probes.len()],
        jumps: 0,
    };
    let record = |out: &mut Trajectory, k: usize, psi: &[C64]| {
        let (r, d) = if k == 0 {
            (0.0, vec![0.0; probes.len()])
        } else {
            model.observables(k, psi, probes)
        };
        out.rates.push(r);
        for (s, v) in out.directional.iter_mut().zip(d) {
            s.push(v);
        }
    };
    record(&mut out, k, &psi);
    let minus_i = C64::new(0.0, -1.0);
    let t_end = *t_grid.last().expect("checked grid");
    let mut solver = Dopri5::<C64>::new(psi.len(), opts.tolerances);
    let mut buf = psi.clone();
    let mut h: f64 = 1e-3;
    let mut next = 1;
    while next < t_grid.len() {
        if k == 0 {
            while next < t_grid.len() {
                record(&mut out, 0, &[]);
                next += 1;
            }
            break;
        }
        let ham = &model.ham[k];
        let mut f = |_: f64, y: &[C64], dy: &mut [C64]| {
            ham.apply(y, dy);
            dy.iter_mut().for_each(|v| *v *= minus_i);
        };
        let remaining = t_end - t;
        let step = h.min(remaining);
        if !(step >= opts.tolerances.h_min) {
            return None;
        }
        let err = solver.trial(&mut f, t, &psi, step);
        if !(err.is_finite() && err <= 1.0) {
            solver.reject();
            h = step * if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            continue;
        }
        let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        let end_norm = norm_sqr(solver.candidate());
        if !(end_norm > 1e-300) {
            return None;
        }
        // fraction of the step at which ‖ψ‖² reaches the threshold
        let jump = (end_norm <= threshold).then(|| {
            let (mut lo, mut hi) = (0.0, 1.0);
            while hi - lo > opts.jump_time_tol {
                let mid = 0.5 * (lo + hi);
                solver.dense_output(&psi, step, mid, &mut buf);
                if norm_sqr(&buf) > threshold {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        });
        let t_stop = t + jump.unwrap_or(1.0) * step;
        let slack = 1e-12 * t_stop.abs().max(1.0);
        while next < t_grid.len() && (t_grid[next] <= t_stop + slack || (jump.is_none() && step == remaining)) {
            let theta = ((t_grid[next] - t) / step).clamp(0.0, 1.0);
            solver.dense_output(&psi, step, theta, &mut buf);
            record(&mut out, k, &buf);
            next += 1;
        }
        let Some(theta) = jump else {
            solver.accept(&mut psi);
            t = if step == remaining { t_end } else { t + step };
            h = if step == remaining { h.max(step * grow) } else { step * grow };
            continue;
        };
        solver.dense_output(&psi, step, theta, &mut buf);
        psi.copy_from_slice(&buf);
        t = t_stop;
        // choose the jump ∝ ‖L_m ψ‖²
        let lowered: Vec<Vec<C64>> = model.jumps.iter().map(|c| model.lower(k, c, &psi)).collect();
        let weights: Vec<f64> = lowered.iter().map(|v| norm_sqr(v)).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = weights.len() - 1;
        for (m, w) in weights.iter().enumerate() {
            if pick < *w {
                chosen = m;
                break;
            }
            pick -= w;
        }
        psi = lowered.into_iter().nth(chosen).expect("nonempty");
        let nrm = norm_sqr(&psi).sqrt();
        psi.iter_mut().for_each(|z| *z /= nrm);
        k -= 1;
        out.jumps += 1;
        threshold = rng.random::<f64>();
        solver = Dopri5::<C64>::new(psi.len(), opts.tolerances);
        buf = psi.clone();
    }
    Some(out)
}

/// Counter-based per-trajectory generator: ChaCha stream `index` under the
/// master seed.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Ensemble of `n_traj` trajectories from the fully excited state. The
/// record carries the ensemble mean and its standard error per sample.
pub fn mcwf_ensemble(
    set: &CouplingSet,
    geometry: Option<&ArrayGeometry>,
    n_traj: usize,
    master_seed: u64,
    t_grid: &[f64],
    opts: &McwfOptions,
) -> Result<EmissionRecord> {
    require_two_level(set)?;
    check_grid(t_grid)?;
    if n_traj == 0 {
        return invalid("need at least one trajectory");
    }
    let n = set.n_atoms;
    if n > MAX_MCWF_ATOMS {
        return Err(Error::Resource(format!(
            "trajectories support at most {MAX_MCWF_ATOMS} atoms, got {n}"
        )));
    }
    let probes = build_probes(set, geometry, &opts.probes)?;
    let model = Model::new(set, opts.unravelling);
    let results: Vec<Trajectory> = (0..n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let mut attempt = 0u64;
            loop {
                let stream = i + attempt * n_traj as u64;
                let mut rng = trajectory_rng(master_seed, stream);
                if let Some(tr) = run_trajectory(&model, t_grid, &probes, opts, &mut rng) {
                    return Ok(tr);
                }
                log::warn!("trajectory {i}: norm underflow, restarting (attempt {attempt})");
                attempt += 1;
                if attempt > 10 {
                    return Err(Error::Integration {
                        t: 0.0,
                        reason: format!("trajectory {i} failed repeatedly"),
                        partial: None,
                    });
                }
            }
        })
        .collect::<Result<_>>()?;

    let m = t_grid.len();
    let count = n_traj as f64;
    let mean_se = |get: &dyn Fn(&Trajectory) -> &Vec<f64>| -> (Vec<f64>, Vec<f64>) {
        let mut mean = vec![0.0; m];
        for tr in &results {
            for (a, v) in mean.iter_mut().zip(get(tr)) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= count);
        let mut var = vec![0.0; m];
        for tr in &results {
            for ((s, v), mu) in var.iter_mut().zip(get(tr)).zip(&mean) {
                *s += (v - mu) * (v - mu);
            }
        }
        let se = var
            .iter()
            .map(|s| if n_traj > 1 { (s / (count - 1.0) / count).sqrt() } else { 0.0 })
            .collect();
        (mean, se)
    };
    let (mean, se) = mean_se(&|tr| &tr.rates);
    let mut record = EmissionRecord::new(vec![set.channels[0].label.clone()]);
    for (i, &t) in t_grid.iter().enumerate() {
        record.push(t, &[mean[i]], &[], &[]);
    }
    record.rate_stderr = Some(vec![se.clone()]);
    record.total_stderr = Some(se);
    for (p, probe) in probes.iter().enumerate() {
        let (values, stderr) = mean_se(&|tr| &tr.directional[p]);
        record.directional.push(DirectionalSeries {
            channel: 0,
            detector: probe.detector,
            values,
            stderr: Some(stderr),
        });
    }
    Ok(record)
}

/// Jumps per trajectory for the first `n_traj` trajectories (diagnostic).
pub fn jump_counts(
    set: &CouplingSet,
    n_traj: usize,
    master_seed: u64,
    t_grid: &[f64],
    opts: &McwfOptions,
) -> Result<Vec<usize>> {
    require_two_level(set)?;
    check_grid(t_grid)?;
    let model = Model::new(set, opts.unravelling);
    (0..n_traj as u64)
        .map(|i| {
            let mut rng = trajectory_rng(master_seed, i);
            run_trajectory(&model, t_grid, &[], opts, &mut rng)
                .map(|tr| tr.jumps)
                .ok_or_else(|| Error::Integration {
                    t: 0.0,
                    reason: "norm underflow".into(),
                    partial: None,
                })
        })
        .collect()
}
