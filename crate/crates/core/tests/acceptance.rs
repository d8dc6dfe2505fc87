//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exits with status 0 unless `SUPERBURST_ACCEPTANCE_STRICT=1`, in which case
//! any FAIL makes the process exit with status 1. The extended trajectory
//! benchmark runs only with `SUPERBURST_ACCEPTANCE_EXTENDED=1`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use superburst::analysis::{find_peak, fit_power_law, fit_share, peak_of, photon_shares, photons_emitted};
use superburst::atoms::{
    build_level_scheme, spherical_polarization, DecayChannel, InitialState, LevelScheme, SchemeOptions, Species,
};
use superburst::criteria::{brute_force_g2, criterion_sweep, directional_criterion, variance_criterion};
use superburst::cumulant::{
    cumulant_rhs, directional_rate, evolve_cumulant_on, init_fully_excited, rate_derivatives, uniform_grid,
    ChannelConstants, CumulantOptions,
};
use superburst::dicke_point::{evolve_point, PointModel, PointModelSpec};
use superburst::exact::{master_equation_evolve, mcwf_ensemble, MasterOptions, McwfOptions};
use superburst::geometry::{detector_direction, from_positions, square_lattice, ArrayGeometry, Detector};
use superburst::interactions::{coupling_matrices, greens_coupling, CouplingSet};
use superburst::C64;

struct Outcome {
    pass: bool,
    detail: String,
}

struct Check {
    pass: bool,
    notes: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Check { pass: true, notes: Vec::new() }
    }

    fn within(&mut self, what: &str, value: f64, target: f64, tol: f64) {
        let ok = (value - target).abs() <= tol;
        self.pass &= ok;
        self.notes.push(format!("{what} {value:.4} (target {target} ± {tol}){}", if ok { "" } else { " ✗" }));
    }

    fn relative(&mut self, what: &str, value: f64, target: f64, rel: f64) {
        let ok = (value / target - 1.0).abs() <= rel;
        self.pass &= ok;
        self.notes.push(format!(
            "{what} {value:.4} (target {target} ± {:.0}%){}",
            rel * 100.0,
            if ok { "" } else { " ✗" }
        ));
    }

    fn holds(&mut self, what: &str, ok: bool) {
        self.pass &= ok;
        self.notes.push(format!("{what}{}", if ok { "" } else { " ✗" }));
    }

    fn done(self) -> Outcome {
        Outcome { pass: self.pass, detail: self.notes.join("; ") }
    }
}

fn along_x() -> Detector {
    detector_direction(FRAC_PI_2, 0.0)
}

fn scheme(species: Species, state: InitialState) -> LevelScheme {
    build_level_scheme(species, state, SchemeOptions::default()).unwrap()
}

fn lambda_scalings() -> Outcome {
    let mut c = Check::new();
    let grid = uniform_grid(12.0, 2400);
    for (ratio, bright, weak) in [(2.0, 2.01, 1.56), (1.5, 2.00, 1.72), (1.0, 1.92, 1.92)] {
        let mut b = Vec::new();
        let mut w = Vec::new();
        for n in (20..=100).step_by(8) {
            let spec = PointModelSpec::new(PointModel::Lambda, n, vec![ratio, 1.0]).unwrap();
            let rec = evolve_point(&spec, &grid).unwrap();
            b.push((n as f64, find_peak(&rec, Some(0)).unwrap().r_peak));
            w.push((n as f64, find_peak(&rec, Some(1)).unwrap().r_peak));
        }
        let fb = fit_power_law(&b, 20.0).unwrap().exponent;
        let fw = fit_power_law(&w, 20.0).unwrap().exponent;
        if ratio == 1.0 {
            c.within("balanced", fb, bright, 0.05);
        } else {
            c.within(&format!("{ratio}:1 bright"), fb, bright, 0.05);
            c.within(&format!("{ratio}:1 weak"), fw, weak, 0.05);
        }
    }
    c.done()
}

fn lambda_share_fit() -> Outcome {
    let mut c = Check::new();
    let grid = uniform_grid(12.0, 2400);
    for (ratio, a, b) in [(2.0, 0.541, 0.31), (1.5, 0.513, 0.16)] {
        let shares: Vec<(f64, f64)> = (20..=100)
            .step_by(8)
            .map(|n| {
                let spec = PointModelSpec::new(PointModel::Lambda, n, vec![ratio, 1.0]).unwrap();
                (n as f64, photon_shares(&evolve_point(&spec, &grid).unwrap()).unwrap()[0])
            })
            .collect();
        let fit = fit_share(&shares, 20.0).unwrap();
        c.relative(&format!("{ratio}:1 A"), fit.a(), a, 0.15);
        c.relative(&format!("{ratio}:1 B"), fit.b(), b, 0.15);
    }
    c.done()
}

fn ladder() -> Outcome {
    let mut c = Check::new();
    let grid = uniform_grid(12.0, 2400);
    for r in [0.5, 1.0, 2.0] {
        let peaks: Vec<(f64, f64)> = (20..=100)
            .step_by(8)
            .map(|n| {
                let spec = PointModelSpec::new(PointModel::Ladder, n, vec![1.0, r]).unwrap();
                (n as f64, find_peak(&evolve_point(&spec, &grid).unwrap(), Some(0)).unwrap().r_peak)
            })
            .collect();
        c.within(&format!("ratio {r} first burst"), fit_power_law(&peaks, 20.0).unwrap().exponent, 2.0, 0.05);
        let spec = PointModelSpec::new(PointModel::Ladder, 40, vec![1.0, r]).unwrap();
        let rec = evolve_point(&spec, &uniform_grid(6.0, 1200)).unwrap();
        let first = find_peak(&rec, Some(0)).unwrap();
        let second = find_peak(&rec, Some(1)).unwrap();
        c.holds(
            &format!("N=40 ratio {r}: bursts at t={:.3} and t={:.3}", first.t_peak, second.t_peak),
            first.burst && second.burst && second.t_peak > first.t_peak,
        );
    }
    c.done()
}

fn criteria_thresholds() -> Outcome {
    let mut c = Check::new();
    for (species, boundary, islands) in [(Species::Yb174, 600.0, [700.0, 1400.0]), (Species::Sr88, 1000.0, [1300.0, 2600.0])] {
        let s = scheme(species, InitialState::D1M0);
        let sweep = criterion_sweep(&s, (12, 12), 100.0, 3000.0, 10.0, s.dominant_channel(), Some(along_x())).unwrap();
        let first_off = sweep.crossings().into_iter().find(|(_, on)| !on).map(|(d, _)| d).unwrap_or(f64::NAN);
        c.within(&format!("{species} boundary nm"), first_off, boundary, 20.0);
        for d in islands {
            c.holds(&format!("{species} island at {d} nm"), sweep.is_burst_at(d));
        }
    }
    c.done()
}

fn random_config(rng: &mut ChaCha8Rng) -> (CouplingSet, ArrayGeometry, Option<Detector>, usize) {
    let n = rng.random_range(2..=8);
    let scale = rng.random_range(50.0..600.0);
    let mut positions: Vec<[f64; 3]> = Vec::new();
    while positions.len() < n {
        let p = [rng.random_range(-1.0..1.0) * scale, rng.random_range(-1.0..1.0) * scale, 0.0];
        if positions.iter().all(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() > 0.05 * scale) {
            positions.push(p);
        }
    }
    let k = rng.random_range(1..=3);
    let channels = (0..k)
        .map(|_| {
            let v: Vec<C64> = (0..3).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            DecayChannel {
                label: String::new(),
                ground: "g".into(),
                rate: rng.random_range(0.05..2.0),
                wavelength: rng.random_range(500.0..2000.0),
                polarization: [v[0] / norm, v[1] / norm, v[2] / norm],
                collective: true,
            }
        })
        .collect();
    let s = LevelScheme::from_channels(channels).unwrap();
    let geom = from_positions(positions).unwrap();
    let set = coupling_matrices(&geom, &s).unwrap();
    let det = rng
        .random_bool(0.6)
        .then(|| detector_direction(rng.random_range(0.0..PI), rng.random_range(0.0..2.0 * PI)));
    let ch = rng.random_range(0..k);
    (set, geom, det, ch)
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut agree = 0;
    let total = 64;
    for _ in 0..total {
        let (set, geom, det, ch) = random_config(&mut rng);
        let crit = match &det {
            Some(d) => directional_criterion(&set, &geom, ch, d).unwrap(),
            None => variance_criterion(&set, ch).unwrap(),
        };
        let oracle = brute_force_g2(&set, &geom, ch, det.as_ref()).unwrap();
        worst = worst.max((crit.implied_g2(set.n_atoms, set.channels[ch].branching) - oracle.g2).abs());
        agree += (crit.burst_predicted == oracle.burst()) as usize;
    }
    let mut c = Check::new();
    c.holds(&format!("{total} configurations, max |Δg2| = {worst:.1e}"), worst < 1e-10);
    c.holds(&format!("burst flags agree {agree}/{total}"), agree == total);
    c.done()
}

fn two_level(n: usize, d_over_lambda: f64) -> (CouplingSet, ArrayGeometry) {
    let s = LevelScheme::two_level(1.0, 1000.0, spherical_polarization(0)).unwrap();
    let geom = square_lattice(n, n, d_over_lambda * 1000.0).unwrap();
    (coupling_matrices(&geom, &s).unwrap(), geom)
}

fn overestimate(cum: &[f64], exact: &[f64], times: &[f64]) -> f64 {
    peak_of(times, cum).unwrap().r_peak / peak_of(times, exact).unwrap().r_peak - 1.0
}

fn benchmark() -> Outcome {
    let mut c = Check::new();
    let grid = uniform_grid(1.0, 400);
    let det = along_x();
    for (f, check) in [(0.1, 0), (0.2, 1)] {
        let (set, geom) = two_level(3, f);
        let cum = evolve_cumulant_on(&set, Some(&geom), &grid, &CumulantOptions {
            probes: vec![(0, det)],
            ..Default::default()
        })
        .unwrap()
        .record;
        let exact = master_equation_evolve(&set, Some(&geom), &grid, &MasterOptions {
            probes: vec![det],
            ..Default::default()
        })
        .unwrap();
        let dir = overestimate(&cum.directional[0].values, &exact.directional[0].values, &grid);
        let tot = overestimate(&cum.total(), &exact.total(), &grid);
        if check == 0 {
            c.within(&format!("3x3 d=0.1λ x̂ overestimate (total-rate {tot:.4})"), dir, 0.09, 0.02);
        } else {
            c.holds(&format!("3x3 d=0.2λ x̂ overestimate {dir:.4} (total-rate {tot:.4}) ≤ 0.03"), dir <= 0.03);
        }
    }
    if std::env::var("SUPERBURST_ACCEPTANCE_EXTENDED").as_deref() == Ok("1") {
        let (set, geom) = two_level(4, 0.1);
        let opts = McwfOptions { probes: vec![det], ..Default::default() };
        let traj = mcwf_ensemble(&set, Some(&geom), 2000, 2024, &grid, &opts).unwrap();
        let cum = evolve_cumulant_on(&set, Some(&geom), &grid, &CumulantOptions {
            probes: vec![(0, det)],
            ..Default::default()
        })
        .unwrap()
        .record;
        let dir = overestimate(&cum.directional[0].values, &traj.directional[0].values, &grid);
        c.within("4x4 d=0.1λ x̂ overestimate (2000 trajectories)", dir, 0.12, 0.04);
    } else {
        c.notes.push("4x4 trajectory run skipped (set SUPERBURST_ACCEPTANCE_EXTENDED=1)".into());
    }
    c.done()
}

fn peak_scaling() -> Outcome {
    let mut c = Check::new();
    let grid = uniform_grid(2.0, 800);
    let opts = CumulantOptions { stop_below_peak_fraction: Some(0.5), ..Default::default() };
    for (species, state, target) in [
        (Species::Yb174, InitialState::D3M3, 1.38),
        (Species::Sr88, InitialState::D3M3, 1.47),
        (Species::Yb174, InitialState::D3M0, 1.29),
        (Species::Sr88, InitialState::D3M0, 1.37),
    ] {
        let s = scheme(species, state);
        let peaks: Vec<(f64, f64)> = (5..=12)
            .map(|n| {
                let geom = square_lattice(n, n, 244.0).unwrap();
                let set = coupling_matrices(&geom, &s).unwrap();
                let run = evolve_cumulant_on(&set, None, &grid, &opts).unwrap();
                ((n * n) as f64, find_peak(&run.record, None).unwrap().r_peak)
            })
            .collect();
        c.within(&format!("{species} {state}"), fit_power_law(&peaks, 25.0).unwrap().exponent, target, 0.08);
    }
    c.done()
}

fn transition_closing() -> Outcome {
    let mut c = Check::new();
    let grid = uniform_grid(10.0, 400);
    for (species, state, a, b) in [
        (Species::Sr88, InitialState::D3M0, 0.481, 0.091),
        (Species::Yb174, InitialState::D1M0, 0.400, 0.093),
    ] {
        let s = scheme(species, state);
        let d = 0.2 * s.reference_wavelength();
        let dom = s.dominant_channel();
        let shares: Vec<(f64, f64)> = (1..=12)
            .map(|n| {
                let geom = square_lattice(n, n, d).unwrap();
                let set = coupling_matrices(&geom, &s).unwrap();
                let run = evolve_cumulant_on(&set, None, &grid, &CumulantOptions::default()).unwrap();
                ((n * n) as f64, photon_shares(&run.record).unwrap()[dom])
            })
            .collect();
        if species == Species::Sr88 {
            c.within("Sr single-atom share", shares[0].1, 0.600, 0.002);
            let last = shares.last().unwrap().1;
            c.holds(&format!("Sr 12x12 share {last:.4} ≥ 0.68"), last >= 0.68);
        }
        let fit = fit_share(&shares, 25.0).unwrap();
        c.relative(&format!("{species} A"), fit.a(), a, 0.15);
        c.relative(&format!("{species} B"), fit.b(), b, 0.15);
    }
    c.done()
}

fn properties() -> Outcome {
    let mut c = Check::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    let mut worst_id: f64 = 0.0;
    for _ in 0..20 {
        let (set, _, _, _) = random_config(&mut rng);
        for ch in &set.channels {
            let n = set.n_atoms as f64;
            let trace: f64 = (0..set.n_atoms).map(|j| ch.gamma[(j, j)].re).sum();
            let frob: f64 = ch.gamma.iter().map(|z| z.norm_sqr()).sum();
            let eig: f64 = ch.spectrum.iter().map(|x| x * x).sum();
            worst_id = worst_id.max((trace - n * ch.branching).abs()).max((frob - eig).abs());
        }
    }
    c.holds(&format!("trace/Frobenius identities {worst_id:.1e}"), worst_id < 1e-8);

    let point = LevelScheme::two_level(1.0, 1000.0, spherical_polarization(0)).unwrap();
    let u = 1e-3;
    let r = u / (2.0 * PI / 1000.0);
    let (_, g) = greens_coupling([r, 0.0, 0.0], &point.channels[0]).unwrap();
    c.holds(&format!("point limit |Γ−1| = {:.1e}", (g.re - 1.0).abs()), (g.re - 1.0).abs() < 1e-6);

    let grid = uniform_grid(20.0, 400);
    let mut worst_photons: f64 = 0.0;
    for (model, rates, per_atom) in [
        (PointModel::TwoLevel, vec![1.0], 1.0),
        (PointModel::Lambda, vec![2.0, 1.0], 1.0),
        (PointModel::Ladder, vec![1.0, 0.5], 2.0),
    ] {
        for n in [5, 40] {
            let rec = evolve_point(&PointModelSpec::new(model, n, rates.clone()).unwrap(), &grid).unwrap();
            worst_photons = worst_photons.max((photons_emitted(&rec) - per_atom * n as f64).abs());
            c.pass &= rec.total()[0] == n as f64;
        }
    }
    c.holds(&format!("photon conservation {worst_photons:.1e}"), worst_photons < 1e-3);

    let (set, geom) = two_level(3, 0.15);
    let short = uniform_grid(0.2, 4);
    let cum = evolve_cumulant_on(&set, Some(&geom), &short, &CumulantOptions::default()).unwrap();
    let master = master_equation_evolve(&set, None, &short, &MasterOptions::default()).unwrap();
    let traj = mcwf_ensemble(&set, None, 8, 1, &short, &McwfOptions::default()).unwrap();
    c.holds(
        "R(0) = N for every solver",
        [&cum.record, &master, &traj].iter().all(|r| r.total()[0] == 9.0),
    );

    let mut worst_slope: f64 = 0.0;
    let mut slopes = 0;
    while slopes < 20 {
        let (set, geom, det, ch) = random_config(&mut rng);
        if set.n_atoms > 4 {
            continue;
        }
        slopes += 1;
        let consts = ChannelConstants::from_coupling_set(&set);
        let state = init_fully_excited(set.n_atoms, set.n_channels()).unwrap();
        let oracle = brute_force_g2(&set, &geom, ch, det.as_ref()).unwrap();
        let gap = match &det {
            None => rate_derivatives(&state, &consts).unwrap()[ch] - oracle.initial_slope(),
            Some(d) => {
                let pol = &set.channels[ch].polarization;
                let proj: C64 = (0..3).map(|i| pol[i].conj() * d.direction[i]).sum();
                let pre = 3.0 * set.channels[ch].branching / (8.0 * PI) * (1.0 - proj.norm_sqr());
                let ds = cumulant_rhs(&state, &consts).unwrap();
                directional_rate(&ds, &consts, ch, &geom, d).unwrap() - pre * oracle.initial_slope()
            }
        };
        worst_slope = worst_slope.max(gap.abs());
    }
    c.holds(&format!("initial slopes vs four-operator oracle {worst_slope:.1e}"), worst_slope < 1e-8);

    let s = scheme(Species::Yb174, InitialState::D1M0);
    let ch = s.dominant_channel();
    let mut agree = 0;
    let mut points = 0;
    for d_nm in [250.0, 500.0, 750.0, 1000.0, 1400.0] {
        let geom = square_lattice(5, 5, d_nm).unwrap();
        let set = coupling_matrices(&geom, &s).unwrap();
        let consts = ChannelConstants::from_coupling_set(&set);
        let ds = cumulant_rhs(&init_fully_excited(set.n_atoms, set.n_channels()).unwrap(), &consts).unwrap();
        for det in [along_x(), detector_direction(FRAC_PI_2, PI / 4.0), detector_direction(PI / 3.0, 0.0), detector_direction(0.3, 2.0)] {
            let crit = directional_criterion(&set, &geom, ch, &det).unwrap();
            let slope = directional_rate(&ds, &consts, ch, &geom, &det).unwrap();
            points += 1;
            agree += (crit.burst_predicted == (slope > 0.0)) as usize;
        }
    }
    c.holds(&format!("criterion sign vs slope {agree}/{points}"), agree == points);

    let (set, geom) = two_level(3, 0.2);
    let grid = uniform_grid(1.5, 30);
    let master = master_equation_evolve(&set, Some(&geom), &grid, &MasterOptions {
        probes: vec![along_x()],
        ..Default::default()
    })
    .unwrap();
    let opts = McwfOptions { probes: vec![along_x()], ..Default::default() };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| mcwf_ensemble(&set, Some(&geom), 1000, 5, &grid, &opts).unwrap())
    };
    let traj = run(1);
    let se = traj.total_stderr.clone().unwrap();
    let worst_z = (1..grid.len())
        .map(|i| (traj.rates[0][i] - master.rates[0][i]).abs() / se[i])
        .fold(0.0, f64::max);
    c.holds(&format!("trajectories vs master equation, max {worst_z:.2} standard errors"), worst_z <= 4.0);
    c.holds("byte-identical output at 1 and 3 threads", traj.to_csv() == run(3).to_csv());
    c.done()
}

fn main() {
    let strict = std::env::var("SUPERBURST_ACCEPTANCE_STRICT").as_deref() == Ok("1");
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("Λ point-model peak scalings", lambda_scalings),
        ("Λ bright-channel share fit", lambda_share_fit),
        ("ladder point model", ladder),
        ("criteria thresholds over lattice spacing", criteria_thresholds),
        ("closed-form criteria vs brute-force g2", oracle_equivalence),
        ("cumulant vs exact benchmark", benchmark),
        ("burst-peak scaling at 244 nm", peak_scaling),
        ("transition closing", transition_closing),
        ("property suite", properties),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        failures += !out.pass as usize;
        println!(
            "{} criterion {}: {name} [{:.1}s] {}",
            if out.pass { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64(),
            out.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if strict && failures > 0 {
        std::process::exit(1);
    }
}
