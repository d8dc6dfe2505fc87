//! Closed-form burst criteria against brute-force operator algebra on the
//! fully excited state, and against the initial slope of the dynamics.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use superburst::atoms::{build_level_scheme, DecayChannel, InitialState, LevelScheme, SchemeOptions, Species};
use superburst::criteria::{brute_force_g2, directional_criterion, variance_criterion};
use superburst::cumulant::{cumulant_rhs, directional_rate, init_fully_excited, rate_derivatives, ChannelConstants};
use superburst::exact::dense::DenseLindblad;
use superburst::geometry::{detector_direction, from_positions, square_lattice, ArrayGeometry, Detector};
use superburst::interactions::{coupling_matrices, CouplingSet};
use superburst::C64;

fn random_polarization(rng: &mut ChaCha8Rng) -> [C64; 3] {
    let v: Vec<C64> = (0..3)
        .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn random_config(rng: &mut ChaCha8Rng) -> (CouplingSet, ArrayGeometry, Option<Detector>, usize) {
    let n = rng.random_range(2..=8);
    let scale = rng.random_range(50.0..600.0);
    let mut positions: Vec<[f64; 3]> = Vec::new();
    while positions.len() < n {
        let p = [
            rng.random_range(-1.0..1.0) * scale,
            rng.random_range(-1.0..1.0) * scale,
            if rng.random_bool(0.5) { 0.0 } else { rng.random_range(-0.3..0.3) * scale },
        ];
        let far = positions.iter().all(|q| {
            let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() > 0.05 * scale
        });
        if far {
            positions.push(p);
        }
    }
    let k = rng.random_range(1..=3);
    let channels = (0..k)
        .map(|_| DecayChannel {
            label: String::new(),
            ground: "g".into(),
            rate: rng.random_range(0.05..2.0),
            wavelength: rng.random_range(500.0..2000.0),
            polarization: random_polarization(rng),
            collective: true,
        })
        .collect();
    let scheme = LevelScheme::from_channels(channels).unwrap();
    let geom = from_positions(positions).unwrap();
    let set = coupling_matrices(&geom, &scheme).unwrap();
    let det = rng
        .random_bool(0.6)
        .then(|| detector_direction(rng.random_range(0.0..PI), rng.random_range(0.0..2.0 * PI)));
    let ch = rng.random_range(0..k);
    (set, geom, det, ch)
}

#[test]
fn closed_forms_equal_brute_force_on_random_configurations() {
    let mut rng = ChaCha8Rng::seed_from_u64(20240607);
    let mut bursts = 0;
    for case in 0..60 {
        let (set, geom, det, ch) = random_config(&mut rng);
        let n = set.n_atoms;
        let b = set.channels[ch].branching;
        let crit = match &det {
            Some(d) => directional_criterion(&set, &geom, ch, d).unwrap(),
            None => variance_criterion(&set, ch).unwrap(),
        };
        let oracle = brute_force_g2(&set, &geom, ch, det.as_ref()).unwrap();
        let g2 = crit.implied_g2(n, b);
        assert!(
            (g2 - oracle.g2).abs() < 1e-10,
            "case {case}: closed form {g2} vs brute force {}",
            oracle.g2
        );
        assert_eq!(crit.burst_predicted, oracle.burst(), "case {case}");
        bursts += crit.burst_predicted as usize;
    }
    assert!(bursts > 5 && bursts < 55, "{bursts} bursts: sample is not mixed");
}

fn prefactor(set: &CouplingSet, ch: usize, det: &Detector) -> f64 {
    let d = &set.channels[ch].polarization;
    let proj: C64 = (0..3).map(|i| d[i].conj() * det.direction[i]).sum();
    3.0 * set.channels[ch].branching / (8.0 * PI) * (1.0 - proj.norm_sqr())
}

#[test]
fn initial_slopes_match_four_operator_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..30 {
        let (set, geom, det, ch) = loop {
            let c = random_config(&mut rng);
            if c.0.n_atoms <= 4 {
                break c;
            }
        };
        let consts = ChannelConstants::from_coupling_set(&set);
        let state = init_fully_excited(set.n_atoms, set.n_channels()).unwrap();
        let oracle = brute_force_g2(&set, &geom, ch, det.as_ref()).unwrap();
        let dense = DenseLindblad::new(&set).unwrap();
        let rho = dense.fully_excited();
        match &det {
            None => {
                let slope = rate_derivatives(&state, &consts).unwrap()[ch];
                assert!((slope - oracle.initial_slope()).abs() < 1e-8, "case {case}");
                let exact = dense.rate_derivatives(&rho)[ch];
                assert!((exact - oracle.initial_slope()).abs() < 1e-8, "case {case}");
                assert!((dense.rates(&rho)[ch] - set.n_atoms as f64 * set.channels[ch].branching).abs() < 1e-12);
            }
            Some(d) => {
                let ds = cumulant_rhs(&state, &consts).unwrap();
                let slope = directional_rate(&ds, &consts, ch, &geom, d).unwrap();
                let p = prefactor(&set, ch, d);
                assert!((slope - p * oracle.initial_slope()).abs() < 1e-8, "case {case}");
                let rate0 = directional_rate(&state, &consts, ch, &geom, d).unwrap();
                assert!((rate0 - p * oracle.detected).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn criterion_sign_agrees_with_cumulant_slope_on_a_grid() {
    let scheme = build_level_scheme(Species::Yb174, InitialState::D1M0, SchemeOptions::default()).unwrap();
    let ch = scheme.dominant_channel();
    let detectors = [
        detector_direction(FRAC_PI_2, 0.0),
        detector_direction(FRAC_PI_2, PI / 4.0),
        detector_direction(PI / 3.0, 0.0),
        detector_direction(0.2, 1.0),
    ];
    let mut checked = 0;
    for d_nm in [200.0, 450.0, 700.0, 1000.0, 1400.0] {
        let geom = square_lattice(4, 4, d_nm).unwrap();
        let set = coupling_matrices(&geom, &scheme).unwrap();
        let consts = ChannelConstants::from_coupling_set(&set);
        let state = init_fully_excited(set.n_atoms, set.n_channels()).unwrap();
        let ds = cumulant_rhs(&state, &consts).unwrap();
        for det in &detectors {
            let crit = directional_criterion(&set, &geom, ch, det).unwrap();
            let slope = directional_rate(&ds, &consts, ch, &geom, det).unwrap();
            if (crit.value - 1.0).abs() > 1e-9 {
                assert_eq!(crit.burst_predicted, slope > 0.0, "d = {d_nm}, {det:?}");
                checked += 1;
            }
        }
    }
    assert!(checked >= 18);
}
