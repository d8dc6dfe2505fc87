//! Second-order cumulant dynamics for multichannel arrays.
//!
//! Tracked moments for K channels with ground states g_x:
//! single-site populations a_j = ⟨σ_ee^j⟩ and p^x_j = ⟨σ_xx^j⟩, and for
//! j ≠ l the pair moments e_jl = ⟨σ_ee^j σ_ee^l⟩, X^x_jl = ⟨σ_ee^j σ_xx^l⟩
//! and the coherences P^x_jl = ⟨σ_ex^j σ_xe^l⟩. Third-order moments are
//! closed by dropping the third cumulant; single-site coherences stay zero.
//! One channel (the dominant one) is eliminated through completeness.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::atoms::{inner, LevelScheme, Polarization};
use crate::dicke_point::check_grid;
use crate::error::{invalid, Error, Result};
use crate::geometry::{dot, ArrayGeometry, Detector};
use crate::interactions::CouplingSet;
use crate::ode::{initial_step, Dopri5, Stats, Tolerances};
use crate::record::{DirectionalSeries, EmissionRecord};

/// Unpacked moments; every channel appears explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulantState {
    /// ⟨σ_ee^j⟩.
    pub excited: Vec<f64>,
    /// `ground[x][j]` = ⟨σ_xx^j⟩.
    pub ground: Vec<Vec<f64>>,
    /// ⟨σ_ee^j σ_ee^l⟩, symmetric, zero diagonal.
    pub ee: DMatrix<f64>,
    /// `eg[x][(j, l)]` = ⟨σ_ee^j σ_xx^l⟩, zero diagonal.
    pub eg: Vec<DMatrix<f64>>,
    /// `coh[x][(j, l)]` = ⟨σ_ex^j σ_xe^l⟩, Hermitian, diagonal holds a_j.
    pub coh: Vec<DMatrix<C64>>,
}

impl CumulantState {
    pub fn n_atoms(&self) -> usize {
        self.excited.len()
    }

    pub fn n_channels(&self) -> usize {
        self.ground.len()
    }
}

/// Every atom in |e⟩.
pub fn init_fully_excited(n_atoms: usize, n_channels: usize) -> Result<CumulantState> {
    if n_atoms == 0 || n_channels == 0 {
        return invalid("need at least one atom and one channel");
    }
    let n = n_atoms;
    let mut ee = DMatrix::from_element(n, n, 1.0);
    ee.fill_diagonal(0.0);
    Ok(CumulantState {
        excited: vec![1.0; n],
        ground: vec![vec![0.0; n]; n_channels],
        ee,
        eg: vec![DMatrix::zeros(n, n); n_channels],
        coh: vec![DMatrix::from_diagonal_element(n, n, C64::new(1.0, 0.0)); n_channels],
    })
}

/// Coupling constants of one channel, A = J − iΓ/2, in units of Γ₀.
#[derive(Debug, Clone)]
pub struct ChannelConstants {
    pub label: String,
    /// Γ₀ˣ/Γ₀.
    pub rate: f64,
    pub a: DMatrix<C64>,
    pub wavenumber: f64,
    pub polarization: Polarization,
    /// Γ with zero diagonal.
    gamma_off: DMatrix<f64>,
    /// [J; Γ/2] with zero diagonals, stacked to 2N × N.
    stacked: DMatrix<f64>,
    has_coherent: bool,
}

impl ChannelConstants {
    pub fn from_coupling_set(set: &CouplingSet) -> Vec<ChannelConstants> {
        set.channels
            .iter()
            .map(|ch| {
                let n = set.n_atoms;
                let mut gamma_off = ch.gamma.map(|z| z.re);
                gamma_off.fill_diagonal(0.0);
                let mut j_off = ch.j_coh.map(|z| z.re);
                j_off.fill_diagonal(0.0);
                let mut stacked = DMatrix::zeros(2 * n, n);
                stacked.rows_mut(0, n).copy_from(&j_off);
                stacked.rows_mut(n, n).copy_from(&(&gamma_off * 0.5));
                ChannelConstants {
                    label: ch.label.clone(),
                    rate: ch.branching,
                    a: ch.a_matrix(),
                    wavenumber: ch.wavenumber,
                    polarization: ch.polarization,
                    has_coherent: j_off.iter().any(|x| *x != 0.0),
                    gamma_off,
                    stacked,
                }
            })
            .collect()
    }

    fn is_active(&self) -> bool {
        self.rate > 0.0
    }
}

/// Packed real layout of the ODE state.
#[derive(Debug, Clone)]
struct Layout {
    n: usize,
    k: usize,
    /// Channels tracked explicitly (all but `completion`).
    explicit: Vec<usize>,
    completion: usize,
    pairs: Vec<(usize, usize)>,
    pop: usize,
    e: usize,
    x: usize,
    p: usize,
    photons: usize,
    len: usize,
}

impl Layout {
    fn new(n: usize, rates: &[f64]) -> Layout {
        let k = rates.len();
        let mut completion = 0;
        for (i, r) in rates.iter().enumerate() {
            if *r > rates[completion] {
                completion = i;
            }
        }
        let explicit: Vec<usize> = (0..k).filter(|&c| c != completion).collect();
        let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for j in 0..n {
            for l in j + 1..n {
                pairs.push((j, l));
            }
        }
        let t = pairs.len();
        let pop = n;
        let e = pop + explicit.len() * n;
        let x = e + t;
        let p = x + explicit.len() * n * n.saturating_sub(1);
        let photons = p + 2 * k * t;
        Layout {
            n,
            k,
            explicit,
            completion,
            pairs,
            pop,
            e,
            x,
            p,
            photons,
            len: photons + k,
        }
    }

    fn off(&self, j: usize, l: usize) -> usize {
        j * (self.n - 1) + if l < j { l } else { l - 1 }
    }

    fn pack(&self, s: &CumulantState, photons: &[f64], y: &mut [f64]) {
        let n = self.n;
        let t = self.pairs.len();
        y[..n].copy_from_slice(&s.excited);
        for (i, &c) in self.explicit.iter().enumerate() {
            y[self.pop + i * n..self.pop + (i + 1) * n].copy_from_slice(&s.ground[c]);
            for j in 0..n {
                for l in 0..n {
                    if j != l {
                        y[self.x + i * n * (n - 1) + self.off(j, l)] = s.eg[c][(j, l)];
                    }
                }
            }
        }
        for (q, &(j, l)) in self.pairs.iter().enumerate() {
            y[self.e + q] = s.ee[(j, l)];
            for c in 0..self.k {
                let z = s.coh[c][(j, l)];
                y[self.p + 2 * c * t + q] = z.re;
                y[self.p + (2 * c + 1) * t + q] = z.im;
            }
        }
        y[self.photons..].copy_from_slice(photons);
    }
}

/// Working matrices reused across right-hand-side evaluations.
struct Work {
    a: Vec<f64>,
    pop: Vec<Vec<f64>>,
    e: DMatrix<f64>,
    x: Vec<DMatrix<f64>>,
    pr: Vec<DMatrix<f64>>,
    pi: Vec<DMatrix<f64>>,
    w: Vec<Vec<f64>>,
    v: Vec<DMatrix<f64>>,
    rhs_pair: DMatrix<f64>,
    m1r: DMatrix<f64>,
    m1i: DMatrix<f64>,
    q: DMatrix<f64>,
    sum_wv: DMatrix<f64>,
}

impl Work {
    fn new(n: usize, k: usize) -> Work {
        let z = || DMatrix::<f64>::zeros(n, n);
        Work {
            a: vec![0.0; n],
            pop: vec![vec![0.0; n]; k],
            e: z(),
            x: vec![z(); k],
            pr: vec![z(); k],
            pi: vec![z(); k],
            w: vec![vec![0.0; n]; k],
            v: vec![z(); k],
            rhs_pair: DMatrix::zeros(n, 2 * n),
            m1r: z(),
            m1i: z(),
            q: DMatrix::zeros(2 * n, 2 * n),
            sum_wv: z(),
        }
    }

    /// Unpack `y` into full matrices, filling the completion channel.
    fn load(&mut self, lay: &Layout, y: &[f64]) {
        let n = lay.n;
        let t = lay.pairs.len();
        self.a.copy_from_slice(&y[..n]);
        let comp = lay.completion;
        for j in 0..n {
            self.pop[comp][j] = 1.0 - self.a[j];
        }
        for (i, &c) in lay.explicit.iter().enumerate() {
            let src = &y[lay.pop + i * n..lay.pop + (i + 1) * n];
            self.pop[c].copy_from_slice(src);
            for j in 0..n {
                self.pop[comp][j] -= src[j];
            }
        }
        for (q, &(j, l)) in lay.pairs.iter().enumerate() {
            let v = y[lay.e + q];
            self.e[(j, l)] = v;
            self.e[(l, j)] = v;
        }
        for j in 0..n {
            for l in 0..n {
                if j != l {
                    self.x[comp][(j, l)] = self.a[j] - self.e[(j, l)];
                }
            }
        }
        for (i, &c) in lay.explicit.iter().enumerate() {
            let base = lay.x + i * n * (n - 1);
            for j in 0..n {
                for l in 0..n {
                    if j != l {
                        let v = y[base + lay.off(j, l)];
                        self.x[c][(j, l)] = v;
                        self.x[comp][(j, l)] -= v;
                    }
                }
            }
        }
        for c in 0..lay.k {
            let re = &y[lay.p + 2 * c * t..lay.p + (2 * c + 1) * t];
            let im = &y[lay.p + (2 * c + 1) * t..lay.p + (2 * c + 2) * t];
            for (q, &(j, l)) in lay.pairs.iter().enumerate() {
                self.pr[c][(j, l)] = re[q];
                self.pr[c][(l, j)] = re[q];
                self.pi[c][(j, l)] = im[q];
                self.pi[c][(l, j)] = -im[q];
            }
        }
    }
}

/// Per-channel emission rate R_x = Γ₀ˣ Σ_j a_j + Σ_{j≠l} Γˣ_jl Re P_jl.
fn channel_rate(ch: &ChannelConstants, a: &[f64], pr: &DMatrix<f64>) -> f64 {
    if !ch.is_active() {
        return 0.0;
    }
    let diag: f64 = a.iter().sum::<f64>() * ch.rate;
    diag + ch.gamma_off.dot(pr)
}

struct Engine {
    lay: Layout,
    consts: Vec<ChannelConstants>,
    gamma_total: f64,
    work: Work,
}

impl Engine {
    fn new(consts: Vec<ChannelConstants>, n: usize) -> Engine {
        let rates: Vec<f64> = consts.iter().map(|c| c.rate).collect();
        let lay = Layout::new(n, &rates);
        let work = Work::new(n, lay.k);
        Engine {
            gamma_total: rates.iter().sum(),
            lay,
            consts,
            work,
        }
    }

    fn rhs(&mut self, y: &[f64], dy: &mut [f64]) {
        let lay = &self.lay;
        let n = lay.n;
        let t = lay.pairs.len();
        let g0 = self.gamma_total;
        let wk = &mut self.work;
        wk.load(lay, y);

        // w^x_j and v^x_jl
        for (c, ch) in self.consts.iter().enumerate() {
            wk.w[c].iter_mut().for_each(|v| *v = 0.0);
            if !ch.is_active() {
                wk.v[c].fill(0.0);
                continue;
            }
            for j in 0..n {
                let mut acc = 0.0;
                for l in 0..n {
                    if j == l {
                        wk.v[c][(j, l)] = 0.0;
                        continue;
                    }
                    let av = ch.a[(j, l)];
                    let (pr, pi) = (wk.pr[c][(j, l)], wk.pi[c][(j, l)]);
                    // 2 Im(A P)
                    let v = 2.0 * (av.re * pi + av.im * pr);
                    wk.v[c][(j, l)] = v;
                    acc += v;
                }
                wk.w[c][j] = acc;
            }
        }
        // Σ_y (w^y_j − v^y_jl)
        wk.sum_wv.fill(0.0);
        for c in 0..lay.k {
            if !self.consts[c].is_active() {
                continue;
            }
            for l in 0..n {
                for j in 0..n {
                    if j != l {
                        wk.sum_wv[(j, l)] += wk.w[c][j] - wk.v[c][(j, l)];
                    }
                }
            }
        }

        // single-site populations
        for j in 0..n {
            let mut d = -g0 * wk.a[j];
            for c in 0..lay.k {
                d += wk.w[c][j];
            }
            dy[j] = d;
        }
        for (i, &c) in lay.explicit.iter().enumerate() {
            let rate = self.consts[c].rate;
            for j in 0..n {
                dy[lay.pop + i * n + j] = rate * wk.a[j] - wk.w[c][j];
            }
        }
        // e_jl
        for (q, &(j, l)) in lay.pairs.iter().enumerate() {
            dy[lay.e + q] = -2.0 * g0 * wk.e[(j, l)]
                + wk.a[l] * wk.sum_wv[(j, l)]
                + wk.a[j] * wk.sum_wv[(l, j)];
        }
        // X^x_jl
        for (i, &c) in lay.explicit.iter().enumerate() {
            let rate = self.consts[c].rate;
            let base = lay.x + i * n * (n - 1);
            for j in 0..n {
                for l in 0..n {
                    if j == l {
                        continue;
                    }
                    let own = wk.w[c][l] - wk.v[c][(l, j)];
                    dy[base + lay.off(j, l)] = -g0 * wk.x[c][(j, l)]
                        + rate * wk.e[(j, l)]
                        + wk.v[c][(j, l)]
                        + wk.pop[c][l] * wk.sum_wv[(j, l)]
                        - wk.a[j] * own;
                }
            }
        }
        // P^x_jl
        for (c, ch) in self.consts.iter().enumerate() {
            let re_off = lay.p + 2 * c * t;
            let im_off = lay.p + (2 * c + 1) * t;
            if !ch.is_active() {
                dy[re_off..re_off + 2 * t].iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            // M1 = conj(Ã) P̃ from one stacked product [J; Γ/2]·[Pr Pi]
            wk.rhs_pair.columns_mut(0, n).copy_from(&wk.pr[c]);
            wk.rhs_pair.columns_mut(n, n).copy_from(&wk.pi[c]);
            let q = &mut wk.q;
            if ch.has_coherent {
                q.gemm(1.0, &ch.stacked, &wk.rhs_pair, 0.0);
            } else {
                q.rows_mut(0, n).fill(0.0);
                let mut lower = q.rows_mut(n, n);
                lower.gemm(1.0, &ch.stacked.rows(n, n), &wk.rhs_pair, 0.0);
            }
            for j in 0..n {
                for l in 0..n {
                    // conj(Ã) = J + iΓ/2
                    wk.m1r[(j, l)] = q[(j, l)] - q[(n + j, n + l)];
                    wk.m1i[(j, l)] = q[(j, n + l)] + q[(n + j, l)];
                }
            }
            let pop = &wk.pop[c];
            let x = &wk.x[c];
            for (k, &(j, l)) in lay.pairs.iter().enumerate() {
                let ajl = ch.a[(j, l)];
                let p = C64::new(wk.pr[c][(j, l)], wk.pi[c][(j, l)]);
                let i = C64::new(0.0, 1.0);
                let m1 = C64::new(wk.m1r[(j, l)], wk.m1i[(j, l)]);
                let m2 = C64::new(wk.m1r[(l, j)], -wk.m1i[(l, j)]);
                let d = -g0 * p
                    + ch.gamma_off[(l, j)] * wk.e[(j, l)]
                    + i * ajl.conj() * x[(l, j)]
                    - i * ajl * x[(j, l)]
                    + i * (pop[j] - wk.a[j]) * m1
                    + i * (wk.a[l] - pop[l]) * m2;
                dy[re_off + k] = d.re;
                dy[im_off + k] = d.im;
            }
        }
        // photon counters
        for (c, ch) in self.consts.iter().enumerate() {
            dy[lay.photons + c] = channel_rate(ch, &wk.a, &wk.pr[c]);
        }
    }

    fn rates(&mut self, y: &[f64]) -> Vec<f64> {
        self.work.load(&self.lay, y);
        self.consts
            .iter()
            .enumerate()
            .map(|(c, ch)| channel_rate(ch, &self.work.a, &self.work.pr[c]))
            .collect()
    }

    fn unpack(&mut self, y: &[f64]) -> CumulantState {
        self.work.load(&self.lay, y);
        let wk = &self.work;
        let n = self.lay.n;
        let coh = (0..self.lay.k)
            .map(|c| {
                DMatrix::from_fn(n, n, |j, l| {
                    if j == l {
                        C64::new(wk.a[j], 0.0)
                    } else {
                        C64::new(wk.pr[c][(j, l)], wk.pi[c][(j, l)])
                    }
                })
            })
            .collect();
        let mut ee = wk.e.clone();
        ee.fill_diagonal(0.0);
        let eg = wk
            .x
            .iter()
            .map(|m| {
                let mut m = m.clone();
                m.fill_diagonal(0.0);
                m
            })
            .collect();
        CumulantState {
            excited: wk.a.clone(),
            ground: wk.pop.clone(),
            ee,
            eg,
            coh,
        }
    }

    /// Largest excursion of populations and pair populations outside [0, 1].
    fn positivity_violation(&mut self, y: &[f64]) -> f64 {
        self.work.load(&self.lay, y);
        let wk = &self.work;
        let n = self.lay.n;
        let out = |v: f64| (-v).max(v - 1.0).max(0.0);
        let mut worst = 0.0f64;
        for j in 0..n {
            worst = worst.max(out(wk.a[j]));
            for p in &wk.pop {
                worst = worst.max(out(p[j]));
            }
            for l in 0..n {
                if j != l {
                    worst = worst.max(out(wk.e[(j, l)]));
                    for x in &wk.x {
                        worst = worst.max(out(x[(j, l)]));
                    }
                }
            }
        }
        worst
    }
}

fn check_dims(state: &CumulantState, consts: &[ChannelConstants]) -> Result<()> {
    let n = state.n_atoms();
    if state.n_channels() != consts.len()
        || state.eg.len() != consts.len()
        || state.coh.len() != consts.len()
        || state.ee.shape() != (n, n)
        || consts.iter().any(|c| c.a.shape() != (n, n))
        || state.eg.iter().chain(std::iter::once(&state.ee)).any(|m| m.shape() != (n, n))
        || state.coh.iter().any(|m| m.shape() != (n, n))
    {
        return invalid("state and channel constants have mismatched dimensions");
    }
    Ok(())
}

/// Time derivative of every moment. The eliminated channel's entries are
/// the derivatives implied by completeness.
pub fn cumulant_rhs(state: &CumulantState, consts: &[ChannelConstants]) -> Result<CumulantState> {
    check_dims(state, consts)?;
    let n = state.n_atoms();
    let mut engine = Engine::new(consts.to_vec(), n);
    let mut y = vec![0.0; engine.lay.len];
    engine.lay.pack(state, &vec![0.0; consts.len()], &mut y);
    let mut dy = vec![0.0; y.len()];
    engine.rhs(&y, &mut dy);
    // the completion channel's populations are 1 − a − Σ p, so a plain
    // unpack of dy would add a spurious constant
    let mut out = engine.unpack(&dy);
    let comp = engine.lay.completion;
    for j in 0..n {
        out.ground[comp][j] -= 1.0;
    }
    Ok(out)
}

/// dR_x/dt for every channel at `state`.
pub fn rate_derivatives(state: &CumulantState, consts: &[ChannelConstants]) -> Result<Vec<f64>> {
    let d = cumulant_rhs(state, consts)?;
    Ok(consts
        .iter()
        .enumerate()
        .map(|(c, ch)| {
            if !ch.is_active() {
                return 0.0;
            }
            let pr = d.coh[c].map(|z| z.re);
            let mut pr_off = pr;
            pr_off.fill_diagonal(0.0);
            channel_rate(ch, &d.excited, &pr_off)
        })
        .collect())
}

/// Emission per unit solid angle on channel `channel` towards `detector`:
/// (3Γ₀ˣ/8π)(1 − |𝐝*·𝓡|²) Σ_jl e^{ik𝓡·(𝐫_l−𝐫_j)} ⟨σ_ex^l σ_xe^j⟩.
pub fn directional_rate(
    state: &CumulantState,
    consts: &[ChannelConstants],
    channel: usize,
    geometry: &ArrayGeometry,
    detector: &Detector,
) -> Result<f64> {
    check_dims(state, consts)?;
    if channel >= consts.len() {
        return invalid(format!("channel {channel} out of range"));
    }
    if geometry.len() != state.n_atoms() {
        return invalid("geometry and state sizes differ");
    }
    let probe = Probe::new(&consts[channel], channel, geometry, detector);
    Ok(probe.eval(&state.coh[channel]))
}

pub(crate) struct Probe {
    pub(crate) channel: usize,
    pub(crate) detector: Detector,
    prefactor: f64,
    phases: Vec<C64>,
}

impl Probe {
    pub(crate) fn new(ch: &ChannelConstants, channel: usize, geometry: &ArrayGeometry, det: &Detector) -> Probe {
        let dir = [
            C64::new(det.direction[0], 0.0),
            C64::new(det.direction[1], 0.0),
            C64::new(det.direction[2], 0.0),
        ];
        let proj = inner(&ch.polarization, &dir).norm_sqr();
        Probe {
            channel,
            detector: *det,
            prefactor: 3.0 * ch.rate / (8.0 * std::f64::consts::PI) * (1.0 - proj),
            phases: geometry
                .positions
                .iter()
                .map(|r| C64::from_polar(1.0, ch.wavenumber * dot(det.direction, *r)))
                .collect(),
        }
    }

    /// `coh` must carry the populations on its diagonal.
    pub(crate) fn eval(&self, coh: &DMatrix<C64>) -> f64 {
        let n = self.phases.len();
        let mut acc = C64::new(0.0, 0.0);
        for l in 0..n {
            for j in 0..n {
                acc += self.phases[l] * self.phases[j].conj() * coh[(l, j)];
            }
        }
        self.prefactor * acc.re
    }
}

#[derive(Debug, Clone)]
pub struct CumulantOptions {
    pub tolerances: Tolerances,
    /// Directional probes `(channel, detector)` recorded alongside the rates.
    pub probes: Vec<(usize, Detector)>,
    /// Stop once the total rate has fallen below this fraction of its
    /// running maximum, after that maximum.
    pub stop_below_peak_fraction: Option<f64>,
    /// Positivity excursions beyond this are logged.
    pub positivity_tolerance: f64,
}

impl Default for CumulantOptions {
    fn default() -> Self {
        CumulantOptions {
            tolerances: Tolerances::new(1e-8, 1e-10),
            probes: Vec::new(),
            stop_below_peak_fraction: None,
            positivity_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CumulantRun {
    pub record: EmissionRecord,
    pub final_state: CumulantState,
    /// Largest excursion of any population outside [0, 1] over the samples.
    pub max_positivity_violation: f64,
    pub stats: Stats,
}

/// Evolve from the fully excited state, sampling on `t_grid` (units 1/Γ₀).
pub fn evolve_cumulant_on(
    set: &CouplingSet,
    geometry: Option<&ArrayGeometry>,
    t_grid: &[f64],
    opts: &CumulantOptions,
) -> Result<CumulantRun> {
    check_grid(t_grid)?;
    let n = set.n_atoms;
    let consts = ChannelConstants::from_coupling_set(set);
    let k = consts.len();
    if !opts.probes.is_empty() && geometry.is_none() {
        return invalid("directional probes need the array geometry");
    }
    let probes: Vec<Probe> = opts
        .probes
        .iter()
        .map(|(c, det)| {
            if *c >= k {
                return invalid(format!("probe channel {c} out of range"));
            }
            let g = geometry.expect("checked above");
            if g.len() != n {
                return invalid("geometry and coupling set sizes differ");
            }
            Ok(Probe::new(&consts[*c], *c, g, det))
        })
        .collect::<Result<_>>()?;
    let labels = consts.iter().map(|c| c.label.clone()).collect();
    let mut engine = Engine::new(consts, n);
    let mut y = vec![0.0; engine.lay.len];
    engine.lay.pack(&init_fully_excited(n, k)?, &vec![0.0; k], &mut y);

    let mut record = EmissionRecord::new(labels);
    record.directional = probes
        .iter()
        .map(|p| DirectionalSeries {
            channel: p.channel,
            detector: p.detector,
            values: Vec::new(),
            stderr: None,
        })
        .collect();

    let dim = engine.lay.len;
    let photons = engine.lay.photons;
    let mut solver = Dopri5::<f64>::new(dim, opts.tolerances);
    solver.reset();
    let mut worst = 0.0f64;
    let mut running_max = 0.0f64;
    let mut observe = |engine: &mut Engine, t: f64, y: &[f64], record: &mut EmissionRecord| {
        let rates = engine.rates(y);
        let dir: Vec<f64> = if probes.is_empty() {
            Vec::new()
        } else {
            let st = engine.unpack(y);
            probes.iter().map(|p| p.eval(&st.coh[p.channel])).collect()
        };
        let viol = engine.positivity_violation(y);
        if viol > opts.positivity_tolerance && viol > worst {
            log::warn!("cumulant positivity violated by {viol:e} at t = {t}");
        }
        worst = worst.max(viol);
        record.push(t, &rates, &y[photons..], &dir);
        rates.iter().sum::<f64>()
    };

    // manual sample loop so the run can stop early
    let mut t = 0.0;
    running_max = running_max.max(observe(&mut engine, 0.0, &y, &mut record));
    let span = t_grid[t_grid.len() - 1];
    let mut h = {
        let mut f = |_: f64, y: &[f64], dy: &mut [f64]| engine.rhs(y, dy);
        initial_step(&mut f, 0.0, &y, span, &opts.tolerances)
    };
    let mut peaked = false;
    for &ts in &t_grid[1..] {
        while ts - t > 1e-12 * ts.abs().max(1.0) {
            let st = solver.stats;
            if st.accepted + st.rejected > opts.tolerances.max_steps {
                return Err(Error::Integration {
                    t,
                    reason: "maximum number of steps exceeded".into(),
                    partial: Some(Box::new(record)),
                });
            }
            let remaining = ts - t;
            let clipped = h >= remaining;
            let step = {
                let mut f = |_: f64, y: &[f64], dy: &mut [f64]| engine.rhs(y, dy);
                solver.adaptive_step(&mut f, t, &mut y, h, remaining)
            };
            match step {
                Ok((taken, next)) => {
                    t = if clipped && taken == remaining { ts } else { t + taken };
                    h = if clipped { next.max(h) } else { next };
                }
                Err(fail) => {
                    return Err(Error::Integration {
                        t: fail.t,
                        reason: fail.reason,
                        partial: Some(Box::new(record)),
                    })
                }
            }
        }
        t = ts;
        let total = observe(&mut engine, ts, &y, &mut record);
        if total < running_max {
            peaked = true;
        }
        running_max = running_max.max(total);
        if let Some(frac) = opts.stop_below_peak_fraction {
            if peaked && total < frac * running_max {
                break;
            }
        }
    }
    let stats = solver.stats;
    Ok(CumulantRun {
        record,
        final_state: engine.unpack(&y),
        max_positivity_violation: worst,
        stats,
    })
}

/// Evolve to `t_max` with 400 uniform samples and no directional probes.
pub fn evolve_cumulant(
    scheme: &LevelScheme,
    set: &CouplingSet,
    t_max: f64,
    tolerances: Tolerances,
) -> Result<EmissionRecord> {
    if !(t_max > 0.0) {
        return invalid("t_max must be positive");
    }
    if scheme.n_channels() != set.n_channels() {
        return invalid("scheme and coupling set have different channel counts");
    }
    let grid = uniform_grid(t_max, 400);
    let opts = CumulantOptions {
        tolerances,
        ..Default::default()
    };
    Ok(evolve_cumulant_on(set, None, &grid, &opts)?.record)
}

/// `samples + 1` equally spaced times from 0 to `t_max`.
pub fn uniform_grid(t_max: f64, samples: usize) -> Vec<f64> {
    let s = samples.max(1);
    (0..=s).map(|i| t_max * i as f64 / s as f64).collect()
}

/// Keep only the channel with nonzero rate, as a one-channel scheme.
pub fn reduce_two_level(scheme: &LevelScheme) -> Result<LevelScheme> {
    let active: Vec<_> = scheme.channels.iter().filter(|c| c.rate > 0.0).collect();
    if active.len() != 1 {
        return invalid(format!(
            "scheme has {} channels with nonzero rate; silence all but one first",
            active.len()
        ));
    }
    let mut out = LevelScheme::from_channels(vec![active[0].clone()])?;
    out.species = scheme.species;
    out.initial_state = scheme.initial_state;
    Ok(out)
}
