//! Exact permutation-symmetric dynamics of atoms at a single point.
//!
//! Starting from the fully excited state, collective jumps and the no-jump
//! evolution keep the density matrix diagonal in symmetric occupation
//! states, so the master equation reduces to a classical rate equation on
//! the simplex of occupation numbers.

use std::collections::HashMap;

use crate::error::{invalid, Error, Result};
use crate::ode::{Dopri5, Tolerances};
use crate::record::EmissionRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PointModel {
    /// e → g.
    TwoLevel,
    /// e → g and e → h.
    Lambda,
    /// e → f → g.
    Ladder,
}

impl PointModel {
    pub fn n_levels(self) -> usize {
        match self {
            PointModel::TwoLevel => 2,
            PointModel::Lambda | PointModel::Ladder => 3,
        }
    }

    /// `(from, to)` level indices per channel; level 0 is the initial state.
    pub fn transitions(self) -> &'static [(usize, usize)] {
        match self {
            PointModel::TwoLevel => &[(0, 1)],
            PointModel::Lambda => &[(0, 1), (0, 2)],
            PointModel::Ladder => &[(0, 1), (1, 2)],
        }
    }

    pub fn channel_labels(self) -> &'static [&'static str] {
        match self {
            PointModel::TwoLevel => &["eg"],
            PointModel::Lambda => &["eg", "eh"],
            PointModel::Ladder => &["ef", "fg"],
        }
    }

    /// Photons emitted per atom when everything has decayed.
    pub fn photons_per_atom(self) -> usize {
        match self {
            PointModel::Ladder => 2,
            _ => 1,
        }
    }
}

impl std::str::FromStr for PointModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "two-level" | "twolevel" | "two_level" => Ok(PointModel::TwoLevel),
            "lambda" => Ok(PointModel::Lambda),
            "ladder" => Ok(PointModel::Ladder),
            other => invalid(format!("unknown point model '{other}'")),
        }
    }
}

/// Point-model parameters. Rates may be given in any unit; the dynamics are
/// expressed in units of Γ₀, the total decay rate out of the initial level.
#[derive(Debug, Clone, PartialEq)]
pub struct PointModelSpec {
    pub model: PointModel,
    pub n_atoms: usize,
    /// One rate per channel, ordered as [`PointModel::transitions`].
    pub rates: Vec<f64>,
}

impl PointModelSpec {
    pub fn new(model: PointModel, n_atoms: usize, rates: Vec<f64>) -> Result<Self> {
        let spec = PointModelSpec {
            model,
            n_atoms,
            rates,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rates.len() != self.model.transitions().len() {
            return invalid(format!(
                "{:?} needs {} rates, got {}",
                self.model,
                self.model.transitions().len(),
                self.rates.len()
            ));
        }
        if self.rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return invalid("rates must be finite and non-negative");
        }
        if !(self.gamma0() > 0.0) {
            return invalid("the initial level needs a positive decay rate");
        }
        if self.n_atoms == 0 {
            return invalid("atom count must be at least 1");
        }
        Ok(())
    }

    /// Total decay rate out of the initial level.
    pub fn gamma0(&self) -> f64 {
        self.model
            .transitions()
            .iter()
            .zip(&self.rates)
            .filter(|((from, _), _)| *from == 0)
            .map(|(_, r)| r)
            .sum()
    }

    /// Rates in units of Γ₀.
    pub fn scaled_rates(&self) -> Vec<f64> {
        let g0 = self.gamma0();
        self.rates.iter().map(|r| r / g0).collect()
    }
}

const TINY: f64 = 1e-200;

pub const MAX_CONFIGS: usize = 10_000_000;

/// Probability vector over occupation tuples `(n_0, n_1, ...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigDistribution {
    pub configs: Vec<Vec<usize>>,
    pub probs: Vec<f64>,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All occupation tuples of `levels` levels summing to `n`.
fn simplex(n: usize, levels: usize) -> Result<Vec<Vec<usize>>> {
    let size = binomial(n + levels - 1, levels - 1);
    if size > MAX_CONFIGS as f64 {
        return Err(Error::Resource(format!(
            "{size:.0} occupation configurations exceed the limit of {MAX_CONFIGS}"
        )));
    }
    fn rec(rest: usize, slots: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            cur.push(rest);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in (0..=rest).rev() {
            cur.push(k);
            rec(rest - k, slots - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::with_capacity(size as usize);
    rec(n, levels, &mut Vec::new(), &mut out);
    Ok(out)
}

impl ConfigDistribution {
    /// Every atom in level 0.
    pub fn fully_excited(model: PointModel, n_atoms: usize) -> Result<Self> {
        let configs = simplex(n_atoms, model.n_levels())?;
        let mut probs = vec![0.0; configs.len()];
        probs[0] = 1.0;
        Ok(ConfigDistribution { configs, probs })
    }

    pub fn total_probability(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Γ·n_from·(n_to + 1): the rate of one collective jump on `channel` out of
/// `config`, in the units of `spec.rates`.
pub fn config_jump_rate(spec: &PointModelSpec, config: &[usize], channel: usize) -> Result<f64> {
    let transitions = spec.model.transitions();
    let Some(&(from, to)) = transitions.get(channel) else {
        return invalid(format!("{:?} has no channel {channel}", spec.model));
    };
    if config.len() != spec.model.n_levels() {
        return invalid("configuration has the wrong number of levels");
    }
    Ok(spec.rates[channel] * config[from] as f64 * (config[to] as f64 + 1.0))
}

struct RateGraph {
    /// `(source, target, rate, channel)` in units of Γ₀.
    jumps: Vec<(usize, usize, f64, usize)>,
    outflow: Vec<f64>,
    n_channels: usize,
}

fn rate_graph(spec: &PointModelSpec, configs: &[Vec<usize>]) -> RateGraph {
    let index: HashMap<&[usize], usize> =
        configs.iter().enumerate().map(|(i, c)| (c.as_slice(), i)).collect();
    let scaled = spec.scaled_rates();
    let transitions = spec.model.transitions();
    let mut jumps = Vec::new();
    let mut outflow = vec![0.0; configs.len()];
    for (i, c) in configs.iter().enumerate() {
        for (a, &(from, to)) in transitions.iter().enumerate() {
            let rate = scaled[a] * c[from] as f64 * (c[to] as f64 + 1.0);
            if rate == 0.0 {
                continue;
            }
            let mut next = c.clone();
            next[from] -= 1;
            next[to] += 1;
            let j = index[next.as_slice()];
            jumps.push((i, j, rate, a));
            outflow[i] += rate;
        }
    }
    RateGraph {
        jumps,
        outflow,
        n_channels: transitions.len(),
    }
}

/// Integrate the rate equation from the fully excited state. Times in the
/// record are in units of 1/Γ₀ and rates in units of Γ₀; `photons` holds the
/// exact cumulative counts.
pub fn evolve_point(spec: &PointModelSpec, t_grid: &[f64]) -> Result<EmissionRecord> {
    evolve_point_with(spec, t_grid, Tolerances::new(1e-8, 1e-12)).map(|(r, _)| r)
}

/// As [`evolve_point`], also returning the final distribution.
pub fn evolve_point_with(
    spec: &PointModelSpec,
    t_grid: &[f64],
    tol: Tolerances,
) -> Result<(EmissionRecord, ConfigDistribution)> {
    spec.validate()?;
    check_grid(t_grid)?;
    let mut dist = ConfigDistribution::fully_excited(spec.model, spec.n_atoms)?;
    let graph = rate_graph(spec, &dist.configs);
    let m = dist.configs.len();
    let k = graph.n_channels;
    let mut y = vec![0.0; m + k];
    y[..m].copy_from_slice(&dist.probs);

    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        for (i, d) in dy[..m].iter_mut().enumerate() {
            *d = -graph.outflow[i] * y[i];
        }
        for d in dy[m..].iter_mut() {
            *d = 0.0;
        }
        for &(s, t, r, a) in &graph.jumps {
            // skip negligible sources; subnormal arithmetic is very slow
            if y[s].abs() < TINY {
                continue;
            }
            let flux = r * y[s];
            dy[t] += flux;
            dy[m + a] += flux;
        }
        for d in dy.iter_mut() {
            if d.abs() < TINY {
                *d = 0.0;
            }
        }
    };
    let labels = spec.model.channel_labels().iter().map(|s| s.to_string()).collect();
    let mut record = EmissionRecord::new(labels);
    let mut rates = vec![0.0; k];
    let mut observe = |t: f64, y: &[f64]| {
        rates.iter_mut().for_each(|r| *r = 0.0);
        for &(s, _, r, a) in &graph.jumps {
            rates[a] += r * y[s];
        }
        record.push(t, &rates, &y[m..], &[]);
    };
    let mut solver = Dopri5::<f64>::new(m + k, tol);
    let res = solver.integrate(rhs, t_grid[0], &mut y, t_grid, &mut observe);
    log::debug!("point model N={}: {:?}", spec.n_atoms, solver.stats);
    if let Err(fail) = res {
        return Err(Error::Integration {
            t: fail.t,
            reason: fail.reason,
            partial: Some(Box::new(record)),
        });
    }
    dist.probs.copy_from_slice(&y[..m]);
    Ok((record, dist))
}

pub(crate) fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return invalid("time grid is empty");
    }
    if t_grid[0] != 0.0 {
        return invalid("time grid must start at 0");
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return invalid("time grid must be strictly increasing");
    }
    Ok(())
}

pub const MAX_ORACLE_ATOMS: usize = 6;

/// Full Lindblad evolution in the m^N product space with collective jump
/// operators S_a = Σ_j σ_j(from→to). Returns the same record layout as
/// [`evolve_point`] (photon counts are integrated alongside).
pub fn symmetric_subspace_oracle(spec: &PointModelSpec, t_grid: &[f64]) -> Result<EmissionRecord> {
    spec.validate()?;
    check_grid(t_grid)?;
    let n = spec.n_atoms;
    if n > MAX_ORACLE_ATOMS {
        return Err(Error::Resource(format!(
            "oracle supports at most {MAX_ORACLE_ATOMS} atoms, got {n}"
        )));
    }
    let levels = spec.model.n_levels();
    let dim = levels.pow(n as u32);
    let transitions = spec.model.transitions();
    let scaled = spec.scaled_rates();
    let digit = |state: usize, j: usize| (state / levels.pow(j as u32)) % levels;

    // sparse jump operators as (row, col) pairs with unit weight
    let ops: Vec<Vec<(usize, usize)>> = transitions
        .iter()
        .map(|&(from, to)| {
            let mut entries = Vec::new();
            for col in 0..dim {
                for j in 0..n {
                    if digit(col, j) == from {
                        let row = col - from * levels.pow(j as u32) + to * levels.pow(j as u32);
                        entries.push((row, col));
                    }
                }
            }
            entries
        })
        .collect();
    // H = Σ_a γ_a S_a† S_a and each S_a† S_a as sparse (row, col, value) lists
    let mut sts: Vec<HashMap<(usize, usize), f64>> = vec![HashMap::new(); ops.len()];
    for (a, entries) in ops.iter().enumerate() {
        let mut by_row: HashMap<usize, Vec<usize>> = HashMap::new();
        for &(r, c) in entries {
            by_row.entry(r).or_default().push(c);
        }
        for cols in by_row.values() {
            for &c1 in cols {
                for &c2 in cols {
                    *sts[a].entry((c1, c2)).or_default() += 1.0;
                }
            }
        }
    }
    let mut h_map: HashMap<(usize, usize), f64> = HashMap::new();
    for (a, m) in sts.iter().enumerate() {
        for (&key, &v) in m {
            *h_map.entry(key).or_default() += scaled[a] * v;
        }
    }
    let mut h: Vec<(usize, usize, f64)> = h_map.into_iter().map(|((i, m), v)| (i, m, v)).collect();
    h.sort_by_key(|e| (e.0, e.1));
    let sts: Vec<Vec<(usize, usize, f64)>> = sts
        .into_iter()
        .map(|m| {
            let mut v: Vec<_> = m.into_iter().map(|((i, j), x)| (i, j, x)).collect();
            v.sort_by_key(|e| (e.0, e.1));
            v
        })
        .collect();
    let k = ops.len();
    let size = dim * dim;
    let mut y = vec![0.0; size + k];
    y[0] = 1.0; // level-0 digits everywhere: state index 0
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let rho = &y[..size];
        let (drho, dn) = dy.split_at_mut(size);
        drho.fill(0.0);
        // -1/2 (H rho + rho H)
        for &(i, m, v) in &h {
            let hv = 0.5 * v;
            for jj in 0..dim {
                drho[i * dim + jj] -= hv * rho[m * dim + jj];
                drho[jj * dim + m] -= hv * rho[jj * dim + i];
            }
        }
        for (a, entries) in ops.iter().enumerate() {
            for &(r1, c1) in entries {
                for &(r2, c2) in entries {
                    drho[r1 * dim + r2] += scaled[a] * rho[c1 * dim + c2];
                }
            }
            let rate: f64 = sts[a].iter().map(|&(i, m, v)| v * rho[m * dim + i]).sum();
            dn[a] = scaled[a] * rate;
        }
    };
    let labels = spec.model.channel_labels().iter().map(|s| s.to_string()).collect();
    let mut record = EmissionRecord::new(labels);
    let mut deriv = vec![0.0; size + k];
    let mut rhs = rhs;
    let mut solver = Dopri5::<f64>::new(size + k, Tolerances::new(1e-10, 1e-13));
    let mut samples = Vec::new();
    solver
        .integrate(&mut rhs, 0.0, &mut y, t_grid, |t, y| samples.push((t, y.to_vec())))
        .map_err(|f| Error::Integration {
            t: f.t,
            reason: f.reason,
            partial: None,
        })?;
    for (t, y) in samples {
        rhs(t, &y, &mut deriv);
        record.push(t, &deriv[size..], &y[size..], &[]);
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(t_max: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|i| t_max * i as f64 / n as f64).collect()
    }

    #[test]
    fn simplex_sizes() {
        assert_eq!(simplex(4, 2).unwrap().len(), 5);
        assert_eq!(simplex(40, 3).unwrap().len(), 41 * 42 / 2);
        assert_eq!(simplex(3, 3).unwrap()[0], vec![3, 0, 0]);
    }

    #[test]
    fn jump_rates() {
        let two = PointModelSpec::new(PointModel::TwoLevel, 10, vec![1.0]).unwrap();
        assert_eq!(config_jump_rate(&two, &[10, 0], 0).unwrap(), 10.0);
        assert_eq!(config_jump_rate(&two, &[5, 5], 0).unwrap(), 30.0);
        let lam = PointModelSpec::new(PointModel::Lambda, 2, vec![1.0, 0.5]).unwrap();
        assert_eq!(config_jump_rate(&lam, &[2, 0, 0], 0).unwrap(), 2.0);
        assert!(config_jump_rate(&lam, &[2, 0, 0], 2).is_err());
    }

    #[test]
    fn single_atom_exponential() {
        let spec = PointModelSpec::new(PointModel::TwoLevel, 1, vec![3.0]).unwrap();
        let rec = evolve_point(&spec, &grid(5.0, 50)).unwrap();
        for (t, r) in rec.times.iter().zip(&rec.rates[0]) {
            assert!((r - (-t).exp()).abs() < 1e-7);
        }
    }

    #[test]
    fn bad_specs_rejected() {
        assert!(PointModelSpec::new(PointModel::Lambda, 3, vec![1.0]).is_err());
        assert!(PointModelSpec::new(PointModel::Ladder, 3, vec![0.0, 1.0]).is_err());
        assert!(PointModelSpec::new(PointModel::TwoLevel, 0, vec![1.0]).is_err());
        let spec = PointModelSpec::new(PointModel::TwoLevel, 2, vec![1.0]).unwrap();
        assert!(evolve_point(&spec, &[0.5, 1.0]).is_err());
        assert!(symmetric_subspace_oracle(
            &PointModelSpec::new(PointModel::TwoLevel, 7, vec![1.0]).unwrap(),
            &[0.0]
        )
        .is_err());
    }
}
