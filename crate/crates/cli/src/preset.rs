//! Figure presets: bundles of configs plus the quantitative checks that
//! `preset --check` applies to their summaries.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use superburst::atoms::{InitialState, Species};
use superburst::dicke_point::PointModel;
use superburst::exact::Unravelling;

use crate::config::{
    Array, Atoms, ConfigError, DetectorAngles, ExactMethod, ExperimentConfig, Integration, Kind, Point, Scaling,
    Spacing, Sweep, Trajectories,
};

pub const PRESETS: &[&str] = &["fig2", "fig3", "fig5", "fig6", "fig7", "fig9", "fig10", "fig11"];

pub const DEFAULT_SEED: u64 = 2024;

const ALONG_X: DetectorAngles = DetectorAngles {
    theta_deg: 90.0,
    phi_deg: 0.0,
};
const DIAGONAL: DetectorAngles = DetectorAngles {
    theta_deg: 90.0,
    phi_deg: 45.0,
};
const TILTED: DetectorAngles = DetectorAngles {
    theta_deg: 45.0,
    phi_deg: 0.0,
};

fn integration(t_max: f64, samples: usize) -> Integration {
    Integration {
        t_max_gamma0: t_max,
        samples,
        ..Integration::default()
    }
}

fn atoms(species: Species, state: InitialState) -> Atoms {
    Atoms {
        species: Some(species),
        initial_state: Some(state),
        ..Atoms::default()
    }
}

fn short(species: Species) -> &'static str {
    match species {
        Species::Yb174 => "yb",
        Species::Sr88 => "sr",
    }
}

fn point_scaling(name: &str, model: PointModel, rates: Vec<f64>) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(name, Kind::Scaling);
    c.point = Some(Point {
        model,
        n_atoms: 1,
        rates,
    });
    c.scaling = Some(Scaling {
        sizes: (4..=100).step_by(4).collect(),
        fit_min_n: 20.0,
        stop_after_peak: false,
    });
    c.integration = integration(12.0, 2400);
    c
}

fn point_run(name: &str, model: PointModel, n_atoms: usize, rates: Vec<f64>) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(name, Kind::PointModel);
    c.point = Some(Point { model, n_atoms, rates });
    c.integration = integration(6.0, 1200);
    c
}

fn sweep(name: &str, species: Species, max_nm: f64, detector: Option<DetectorAngles>) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(name, Kind::CriteriaSweep);
    c.atoms = atoms(species, InitialState::D1M0);
    c.array = Some(Array {
        n_x: 12,
        n_y: 12,
        spacing: None,
    });
    c.detector = detector;
    c.sweep = Some(Sweep {
        min_nm: 100.0,
        max_nm,
        step_nm: 10.0,
        channel: None,
    });
    c
}

fn cumulant(name: &str, species: Species, spacing: Spacing, detector: Option<DetectorAngles>) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(name, Kind::Cumulant);
    c.atoms = atoms(species, InitialState::D1M0);
    c.array = Some(Array {
        n_x: 12,
        n_y: 12,
        spacing: Some(spacing),
    });
    c.detector = detector;
    c
}

fn array_scaling(
    name: &str,
    species: Species,
    state: InitialState,
    spacing: Spacing,
    sizes: Vec<usize>,
    fit_min_n: f64,
    stop_after_peak: bool,
) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(name, Kind::Scaling);
    c.atoms = atoms(species, state);
    c.array = Some(Array {
        n_x: 1,
        n_y: 1,
        spacing: Some(spacing),
    });
    c.scaling = Some(Scaling {
        sizes,
        fit_min_n,
        stop_after_peak,
    });
    c
}

fn benchmark(side: usize, fraction: f64, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(&format!("{side}x{side}_d{fraction}"), Kind::ExactBenchmark);
    c.atoms.wavelength_nm = Some(1000.0);
    c.array = Some(Array {
        n_x: side,
        n_y: side,
        spacing: Some(Spacing::Lambda(fraction)),
    });
    c.detector = Some(ALONG_X);
    c.integration = Integration {
        rel_tol: 1e-6,
        abs_tol: 1e-8,
        ..integration(1.0, 400)
    };
    c.trajectories = Some(Trajectories {
        count: 2000,
        seed,
        method: ExactMethod::Auto,
        unravelling: Unravelling::Modes,
    });
    c
}

/// Config bundle of a preset. `seed` replaces the trajectory seed.
pub fn preset(name: &str, seed: Option<u64>) -> Result<Vec<ExperimentConfig>, ConfigError> {
    let seed = seed.unwrap_or(DEFAULT_SEED);
    let bundle = match name {
        "fig2" => [2.0, 1.5, 1.0]
            .iter()
            .flat_map(|&r| {
                [
                    point_scaling(&format!("lambda_r{r}"), PointModel::Lambda, vec![r, 1.0]),
                    point_run(&format!("lambda_r{r}_n40"), PointModel::Lambda, 40, vec![r, 1.0]),
                ]
            })
            .collect(),
        "fig3" => [0.5, 1.0, 2.0]
            .iter()
            .flat_map(|&r| {
                [
                    point_scaling(&format!("ladder_r{r}"), PointModel::Ladder, vec![1.0, r]),
                    point_run(&format!("ladder_r{r}_n40"), PointModel::Ladder, 40, vec![1.0, r]),
                ]
            })
            .collect(),
        "fig5" => {
            let mut v = vec![
                sweep("sweep_yb", Species::Yb174, 2000.0, Some(ALONG_X)),
                sweep("sweep_sr", Species::Sr88, 3000.0, Some(ALONG_X)),
            ];
            for (species, ds) in [(Species::Yb174, [500.0, 1000.0, 1400.0]), (Species::Sr88, [800.0, 1150.0, 1300.0])] {
                for d in ds {
                    v.push(cumulant(&format!("{}_d{d}", short(species)), species, Spacing::Nm(d), Some(ALONG_X)));
                }
            }
            v
        }
        "fig6" => {
            let mut v = Vec::new();
            for (species, state) in [(Species::Sr88, InitialState::D3M0), (Species::Yb174, InitialState::D1M0)] {
                let mut c = array_scaling(
                    &format!("share_{}", short(species)),
                    species,
                    state,
                    Spacing::Lambda(0.2),
                    (1..=12).collect(),
                    25.0,
                    false,
                );
                c.integration = integration(10.0, 400);
                v.push(c);
                let mut s = sweep(&format!("variance_{}", short(species)), species, 0.0, None);
                s.atoms = atoms(species, state);
                let reference = if species == Species::Sr88 { 2920.0 } else { 1389.0 };
                s.sweep = Some(Sweep {
                    min_nm: 10.0,
                    max_nm: reference,
                    step_nm: 10.0,
                    channel: None,
                });
                v.push(s);
            }
            v
        }
        "fig7" => {
            let mut v = Vec::new();
            for species in [Species::Yb174, Species::Sr88] {
                for (state, tag) in [(InitialState::D3M0, "d3m0"), (InitialState::D3M3, "d3m3")] {
                    let mut c = array_scaling(
                        &format!("{}_{tag}", short(species)),
                        species,
                        state,
                        Spacing::Nm(244.0),
                        (5..=12).collect(),
                        25.0,
                        true,
                    );
                    c.integration = integration(2.0, 800);
                    v.push(c);
                }
            }
            v
        }
        "fig9" => [(3, 0.1), (3, 0.2), (4, 0.1), (4, 0.2)]
            .iter()
            .map(|&(side, f)| benchmark(side, f, seed))
            .collect(),
        "fig10" => [0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45]
            .iter()
            .map(|&f| {
                let mut c = array_scaling(
                    &format!("yb_d3m3_d{f}"),
                    Species::Yb174,
                    InitialState::D3M3,
                    Spacing::Lambda(f),
                    (2..=12).collect(),
                    1.0,
                    true,
                );
                c.integration = integration(4.0, 800);
                c
            })
            .collect(),
        "fig11" => {
            let mut v = Vec::new();
            for (tag, det) in [("all", None), ("x", Some(ALONG_X)), ("diag", Some(DIAGONAL)), ("tilt", Some(TILTED))] {
                v.push(sweep(&format!("sweep_{tag}"), Species::Yb174, 2000.0, det));
                for f in [0.5, 0.75, 1.0] {
                    v.push(cumulant(&format!("{tag}_d{f}"), Species::Yb174, Spacing::Lambda(f), det));
                }
            }
            v
        }
        other => {
            return Err(ConfigError {
                line: None,
                field: "preset".into(),
                message: format!("unknown preset '{other}'; known: {}", PRESETS.join(", ")),
            })
        }
    };
    Ok(bundle)
}

/// One quantitative comparison against a published value.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckLine {
    pub what: String,
    pub value: f64,
    pub target: String,
    pub pass: bool,
}

struct Checks<'a> {
    summaries: &'a [(String, Value)],
    lines: Vec<CheckLine>,
}

impl<'a> Checks<'a> {
    fn get(&self, run: &str, pointer: &str) -> Option<&'a Value> {
        self.summaries
            .iter()
            .find(|(n, _)| n == run)
            .and_then(|(_, v)| v.pointer(pointer))
    }

    fn num(&self, run: &str, pointer: &str) -> f64 {
        self.get(run, pointer).and_then(Value::as_f64).unwrap_or(f64::NAN)
    }

    fn within(&mut self, what: String, value: f64, target: f64, tol: f64) {
        self.lines.push(CheckLine {
            what,
            value,
            target: format!("{target} ± {tol}"),
            pass: (value - target).abs() <= tol,
        });
    }

    fn relative(&mut self, what: String, value: f64, target: f64, rel: f64) {
        self.lines.push(CheckLine {
            what,
            value,
            target: format!("{target} ± {}%", rel * 100.0),
            pass: (value / target - 1.0).abs() <= rel,
        });
    }

    fn holds(&mut self, what: String, value: f64, target: &str, pass: bool) {
        self.lines.push(CheckLine {
            what,
            value,
            target: target.into(),
            pass,
        });
    }

    /// Sweep entry of the dominant channel.
    fn dominant(&self, run: &str) -> Option<&'a Value> {
        let label = self.get(run, "/dominant_channel")?.as_str()?;
        self.get(run, "/channels")?
            .as_array()?
            .iter()
            .find(|c| c["label"] == label)
    }

    fn intervals(&self, run: &str) -> Vec<(f64, f64)> {
        self.dominant(run)
            .and_then(|c| c["intervals"].as_array())
            .map(|a| {
                a.iter()
                    .filter_map(|p| Some((p[0].as_f64()?, p[1].as_f64()?)))
                    .collect()
            })
            .unwrap_or_default()
    }

    fn burst_at(&self, run: &str, d: f64) -> bool {
        self.intervals(run).iter().any(|&(a, b)| d >= a - 5.0 && d <= b + 5.0)
    }

    /// First crossing out of the burst region that starts at small spacing.
    fn boundary(&self, run: &str) -> f64 {
        self.dominant(run)
            .and_then(|c| c["crossings"].as_array())
            .and_then(|a| a.iter().find(|x| x["entering"] == false))
            .and_then(|x| x["d_nm"].as_f64())
            .unwrap_or(f64::NAN)
    }

    fn minor_channels_silent(&mut self, run: &str) {
        let Some(dom) = self.get(run, "/dominant_channel").and_then(Value::as_str) else {
            return;
        };
        let Some(chs) = self.get(run, "/channels").and_then(Value::as_array) else {
            return;
        };
        let bursts = chs
            .iter()
            .filter(|c| c["label"] != dom)
            .map(|c| c["intervals"].as_array().map_or(0, Vec::len))
            .sum::<usize>();
        self.holds(format!("{run} minor channels never burst"), bursts as f64, "0 intervals", bursts == 0);
    }
}

/// Evaluate the checks of preset `name` on `(run name, summary)` pairs.
pub fn checks(name: &str, summaries: &[(String, Value)]) -> Vec<CheckLine> {
    let mut c = Checks {
        summaries,
        lines: Vec::new(),
    };
    match name {
        "fig2" => {
            for (r, bright, weak, a, b) in [
                (2.0, 2.01, Some(1.56), Some(0.541), Some(0.31)),
                (1.5, 2.00, Some(1.72), Some(0.513), Some(0.16)),
                (1.0, 1.92, None, None, None),
            ] {
                let run = format!("lambda_r{r}");
                let v = c.num(&run, "/channel_peak_fits/0/fit/exponent");
                c.within(format!("{run} bright peak exponent"), v, bright, 0.05);
                if let Some(w) = weak {
                    let v = c.num(&run, "/channel_peak_fits/1/fit/exponent");
                    c.within(format!("{run} weak peak exponent"), v, w, 0.05);
                }
                if let (Some(a), Some(b)) = (a, b) {
                    let va = c.num(&run, "/share_fit/A");
                    let vb = c.num(&run, "/share_fit/B");
                    c.relative(format!("{run} share A"), va, a, 0.15);
                    c.relative(format!("{run} share B"), vb, b, 0.15);
                }
            }
        }
        "fig3" => {
            for r in [0.5, 1.0, 2.0] {
                let run = format!("ladder_r{r}");
                let v = c.num(&run, "/channel_peak_fits/0/fit/exponent");
                c.within(format!("{run} first burst exponent"), v, 2.0, 0.05);
                let n40 = format!("{run}_n40");
                let t0 = c.num(&n40, "/channels/0/peak/t_peak");
                let t1 = c.num(&n40, "/channels/1/peak/t_peak");
                let both = c.get(&n40, "/channels/0/peak/burst") == Some(&Value::Bool(true))
                    && c.get(&n40, "/channels/1/peak/burst") == Some(&Value::Bool(true));
                c.holds(format!("{n40} second burst after first"), t1 - t0, "> 0 with both bursts", both && t1 > t0);
            }
        }
        "fig5" => {
            let v = c.boundary("sweep_yb");
            c.within("Yb burst region boundary (nm)".into(), v, 600.0, 20.0);
            let v = c.boundary("sweep_sr");
            c.within("Sr burst region boundary (nm)".into(), v, 1000.0, 20.0);
            for (run, d) in [("sweep_yb", 700.0), ("sweep_yb", 1400.0), ("sweep_sr", 1300.0), ("sweep_sr", 2600.0)] {
                let b = c.burst_at(run, d);
                c.holds(format!("{run} island at {d} nm"), d, "burst predicted", b);
            }
            for (species, ds) in [("yb", [500.0, 1000.0, 1400.0]), ("sr", [800.0, 1150.0, 1300.0])] {
                for d in ds {
                    let run = format!("{species}_d{d}");
                    let predicted = c.burst_at(&format!("sweep_{species}"), d);
                    let seen = c.get(&run, "/directional/0/peak/burst") == Some(&Value::Bool(true));
                    let t = c.num(&run, "/directional/0/peak/t_peak");
                    c.holds(format!("{run} dynamics agree with criterion"), t, "burst iff predicted", predicted == seen);
                }
            }
        }
        "fig6" => {
            for (species, a, b) in [("sr", 0.481, 0.091), ("yb", 0.400, 0.093)] {
                let run = format!("share_{species}");
                if species == "sr" {
                    let ch = c.num(&run, "/share_channel") as usize;
                    let first = c.num(&run, &format!("/rows/0/shares/{ch}"));
                    c.within("Sr single-atom share".into(), first, 0.600, 0.002);
                    let last = c.num(&run, &format!("/rows/11/shares/{ch}"));
                    c.holds("Sr 12x12 share".into(), last, "≥ 0.68", last >= 0.68);
                }
                let va = c.num(&run, "/share_fit/A");
                let vb = c.num(&run, "/share_fit/B");
                c.relative(format!("{run} A"), va, a, 0.15);
                c.relative(format!("{run} B"), vb, b, 0.15);
            }
        }
        "fig7" => {
            for (run, target) in [("yb_d3m3", 1.38), ("sr_d3m3", 1.47), ("yb_d3m0", 1.29), ("sr_d3m0", 1.37)] {
                let v = c.num(run, "/total_peak_fit/exponent");
                c.within(format!("{run} peak exponent"), v, target, 0.08);
            }
        }
        "fig9" => {
            let v = c.num("3x3_d0.1", "/overestimate_directional");
            c.within("3x3 d=0.1λ overestimate".into(), v, 0.09, 0.02);
            let v = c.num("3x3_d0.2", "/overestimate_directional");
            c.holds("3x3 d=0.2λ overestimate".into(), v, "≤ 0.03", v <= 0.03);
            let v = c.num("4x4_d0.1", "/overestimate_directional");
            c.within("4x4 d=0.1λ overestimate".into(), v, 0.12, 0.04);
        }
        "fig11" => {
            let lambda = c.num("sweep_all", "/reference_wavelength_nm");
            let v = c.boundary("sweep_all");
            c.holds("all light: burst for d ≤ 0.55λ₀ (nm)".into(), v, &format!("≥ {}", 0.55 * lambda), v >= 0.55 * lambda);
            for run in ["sweep_all", "sweep_x", "sweep_diag", "sweep_tilt"] {
                c.minor_channels_silent(run);
            }
            for (run, f, expect) in [
                ("sweep_x", 0.5, true),
                ("sweep_x", 0.75, false),
                ("sweep_x", 1.0, true),
                ("sweep_diag", 0.5, false),
                ("sweep_diag", 0.75, true),
                ("sweep_diag", 1.0, false),
            ] {
                let b = c.burst_at(run, f * lambda);
                c.holds(format!("{run} at {f}λ₀"), f * lambda, if expect { "burst" } else { "no burst" }, b == expect);
            }
            let tilt = c.boundary("sweep_tilt");
            let all = c.boundary("sweep_all");
            c.holds("tilted detector needs shorter spacing than all light".into(), tilt, &format!("< {all}"), tilt < all);
        }
        _ => {}
    }
    c.lines
}
