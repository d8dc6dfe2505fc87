//! Dispatch of configs to the solvers and persistence of their outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use superburst::analysis::{find_peak, fit_power_law, fit_share, peak_of, photon_shares, photons_emitted, Peak};
use superburst::atoms::{build_level_scheme, spherical_polarization, LevelScheme, SchemeOptions};
use superburst::criteria::criterion_sweep;
use superburst::cumulant::{evolve_cumulant_on, reduce_two_level, uniform_grid, CumulantOptions};
use superburst::dicke_point::{evolve_point_with, PointModelSpec};
use superburst::exact::{master_equation_evolve, mcwf_ensemble, MasterOptions, McwfOptions, Unravelling, MAX_MASTER_ATOMS};
use superburst::geometry::{detector_direction, square_lattice, ArrayGeometry, Detector};
use superburst::interactions::coupling_matrices;
use superburst::ode::Tolerances;
use superburst::record::{fmt_f64, EmissionRecord};

use crate::config::{point_model_name, ExactMethod, ExperimentConfig, Kind, Spacing};
use crate::preset::{self, CheckLine};

/// One output file held in memory before it is written.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

impl Artifact {
    fn new(name: impl Into<String>, contents: String) -> Self {
        Artifact {
            name: name.into(),
            contents,
        }
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub files: Vec<Artifact>,
    pub summary: Value,
}

/// Solver failure together with whatever output was produced before it.
#[derive(Debug)]
pub struct Failure {
    pub error: superburst::Error,
    pub partial: Vec<Artifact>,
}

impl From<superburst::Error> for Failure {
    fn from(error: superburst::Error) -> Self {
        let partial = match &error {
            superburst::Error::Integration { partial: Some(rec), .. } => {
                vec![Artifact::new("record.partial.csv", rec.to_csv())]
            }
            _ => Vec::new(),
        };
        Failure { error, partial }
    }
}

type RunResult<T> = std::result::Result<T, Failure>;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunRef {
    pub name: String,
    pub manifest: String,
    pub status: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub name: String,
    pub kind: String,
    pub config_sha256: String,
    pub threads: usize,
    pub wall_time_s: f64,
    pub status: String,
    pub partial: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub files: Vec<FileEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<RunRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<CheckLine>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn grid(cfg: &ExperimentConfig) -> Vec<f64> {
    uniform_grid(cfg.integration.t_max_gamma0, cfg.integration.samples)
}

fn tolerances(cfg: &ExperimentConfig) -> Tolerances {
    Tolerances::new(cfg.integration.rel_tol, cfg.integration.abs_tol)
}

fn scheme(cfg: &ExperimentConfig) -> superburst::Result<LevelScheme> {
    let a = &cfg.atoms;
    match (a.species, a.initial_state, a.wavelength_nm) {
        (Some(sp), Some(st), _) => build_level_scheme(
            sp,
            st,
            SchemeOptions {
                include_weak_p2_loss: a.include_weak_p2_loss,
            },
        ),
        (_, _, Some(w)) => LevelScheme::two_level(1.0, w, spherical_polarization(0)),
        _ => Err(superburst::Error::InvalidArgument("no atoms configured".into())),
    }
}

fn spacing_nm(cfg: &ExperimentConfig, scheme: &LevelScheme) -> superburst::Result<f64> {
    match cfg.array.and_then(|a| a.spacing) {
        Some(Spacing::Nm(d)) => Ok(d),
        Some(Spacing::Lambda(f)) => Ok(f * scheme.reference_wavelength()),
        None => Err(superburst::Error::InvalidArgument("array spacing is required".into())),
    }
}

fn detector(cfg: &ExperimentConfig) -> Option<Detector> {
    cfg.detector
        .map(|d| detector_direction(d.theta_deg.to_radians(), d.phi_deg.to_radians()))
}

fn peak_json(p: &Peak) -> Value {
    json!({ "t_peak": p.t_peak, "r_peak": p.r_peak, "burst": p.burst })
}

fn detector_json(d: &Detector) -> Value {
    json!({ "theta_deg": d.theta.to_degrees(), "phi_deg": d.phi.to_degrees() })
}

fn record_summary(rec: &EmissionRecord, scheme: Option<&LevelScheme>) -> superburst::Result<Value> {
    let shares = photon_shares(rec)?;
    let branching = scheme.map(|s| s.branching());
    let channels = (0..rec.n_channels())
        .map(|a| {
            let mut v = json!({
                "label": rec.channel_labels[a],
                "peak": peak_json(&find_peak(rec, Some(a))?),
                "share": shares[a],
            });
            if let (Some(s), Some(b)) = (scheme, &branching) {
                v["ground"] = json!(s.channels[a].ground);
                v["branching"] = json!(b[a]);
            }
            Ok(v)
        })
        .collect::<superburst::Result<Vec<_>>>()?;
    let directional = rec
        .directional
        .iter()
        .map(|d| {
            Ok(json!({
                "channel": rec.channel_labels[d.channel],
                "detector": detector_json(&d.detector),
                "peak": peak_json(&peak_of(&rec.times, &d.values)?),
            }))
        })
        .collect::<superburst::Result<Vec<_>>>()?;
    Ok(json!({
        "total": peak_json(&find_peak(rec, None)?),
        "channels": channels,
        "directional": directional,
        "photons_emitted": photons_emitted(rec),
    }))
}

fn array_json(geom: &ArrayGeometry, scheme: &LevelScheme) -> Value {
    json!({
        "n_x": geom.shape.0,
        "n_y": geom.shape.1,
        "n_atoms": geom.len(),
        "spacing_nm": geom.lattice_constant,
        "spacing_lambda": geom.lattice_constant / scheme.reference_wavelength(),
        "reference_wavelength_nm": scheme.reference_wavelength(),
    })
}

fn run_point(cfg: &ExperimentConfig) -> RunResult<Outcome> {
    let p = cfg.point.as_ref().expect("validated");
    let spec = PointModelSpec::new(p.model, p.n_atoms, p.rates.clone())?;
    let (rec, _) = evolve_point_with(&spec, &grid(cfg), tolerances(cfg))?;
    let mut summary = record_summary(&rec, None)?;
    summary["model"] = json!(point_model_name(p.model));
    summary["n_atoms"] = json!(p.n_atoms);
    summary["rates"] = json!(p.rates);
    Ok(Outcome {
        files: vec![Artifact::new("record.csv", rec.to_csv())],
        summary,
    })
}

fn run_cumulant(cfg: &ExperimentConfig) -> RunResult<Outcome> {
    let s = scheme(cfg)?;
    let a = cfg.array.expect("validated");
    let geom = square_lattice(a.n_x, a.n_y, spacing_nm(cfg, &s)?)?;
    let set = coupling_matrices(&geom, &s)?;
    let opts = CumulantOptions {
        tolerances: tolerances(cfg),
        probes: detector(cfg).map(|d| (s.dominant_channel(), d)).into_iter().collect(),
        ..Default::default()
    };
    let run = evolve_cumulant_on(&set, Some(&geom), &grid(cfg), &opts)?;
    let mut summary = record_summary(&run.record, Some(&s))?;
    summary["array"] = array_json(&geom, &s);
    summary["max_positivity_violation"] = json!(run.max_positivity_violation);
    summary["steps"] = json!({
        "accepted": run.stats.accepted,
        "rejected": run.stats.rejected,
        "rhs_evals": run.stats.rhs_evals,
    });
    Ok(Outcome {
        files: vec![Artifact::new("record.csv", run.record.to_csv())],
        summary,
    })
}

fn run_sweep(cfg: &ExperimentConfig) -> RunResult<Outcome> {
    let s = scheme(cfg)?;
    let a = cfg.array.expect("validated");
    let w = cfg.sweep.expect("validated");
    let det = detector(cfg);
    let channels: Vec<usize> = match w.channel {
        Some(c) => vec![c],
        None => (0..s.n_channels())
            .filter(|&c| s.channels[c].rate > 0.0 && s.channels[c].collective)
            .collect(),
    };
    let mut files = Vec::new();
    let mut entries = Vec::new();
    for c in channels {
        let sweep = criterion_sweep(&s, (a.n_x, a.n_y), w.min_nm, w.max_nm, w.step_nm, c, det)?;
        let label = &s.channels[c].label;
        files.push(Artifact::new(format!("sweep_{label}.csv"), sweep.to_csv()));
        entries.push(json!({
            "label": label,
            "ground": s.channels[c].ground,
            "intervals": sweep.burst_intervals(),
            "crossings": sweep
                .crossings()
                .iter()
                .map(|&(d, entering)| json!({ "d_nm": d, "entering": entering }))
                .collect::<Vec<_>>(),
        }));
    }
    let summary = json!({
        "n_x": a.n_x,
        "n_y": a.n_y,
        "reference_wavelength_nm": s.reference_wavelength(),
        "dominant_channel": s.channels[s.dominant_channel()].label,
        "detector": det.as_ref().map(detector_json),
        "channels": entries,
    });
    Ok(Outcome { files, summary })
}

fn overestimate(times: &[f64], approx: &[f64], exact: &[f64]) -> superburst::Result<f64> {
    Ok(peak_of(times, approx)?.r_peak / peak_of(times, exact)?.r_peak - 1.0)
}

fn run_benchmark(cfg: &ExperimentConfig) -> RunResult<Outcome> {
    let s = reduce_two_level(&scheme(cfg)?)?;
    let a = cfg.array.expect("validated");
    let geom = square_lattice(a.n_x, a.n_y, spacing_nm(cfg, &s)?)?;
    let set = coupling_matrices(&geom, &s)?;
    let det = detector(cfg).unwrap_or_else(|| detector_direction(std::f64::consts::FRAC_PI_2, 0.0));
    let t = grid(cfg);
    let tol = tolerances(cfg);
    let traj = cfg.trajectories.unwrap_or(crate::config::Trajectories {
        count: 1000,
        seed: 0,
        method: ExactMethod::Auto,
        unravelling: Unravelling::Modes,
    });
    let method = match traj.method {
        ExactMethod::Auto if geom.len() <= MAX_MASTER_ATOMS => ExactMethod::Master,
        ExactMethod::Auto => ExactMethod::Mcwf,
        m => m,
    };
    let cum = evolve_cumulant_on(
        &set,
        Some(&geom),
        &t,
        &CumulantOptions {
            tolerances: tol,
            probes: vec![(0, det)],
            ..Default::default()
        },
    )?
    .record;
    let exact = match method {
        ExactMethod::Mcwf => mcwf_ensemble(
            &set,
            Some(&geom),
            traj.count,
            traj.seed,
            &t,
            &McwfOptions {
                tolerances: tol,
                unravelling: traj.unravelling,
                probes: vec![det],
                ..Default::default()
            },
        )?,
        _ => master_equation_evolve(
            &set,
            Some(&geom),
            &t,
            &MasterOptions {
                tolerances: tol,
                probes: vec![det],
            },
        )?,
    };
    let mut summary = json!({
        "array": array_json(&geom, &s),
        "detector": detector_json(&det),
        "method": method.as_str(),
        "overestimate_directional": overestimate(&t, &cum.directional[0].values, &exact.directional[0].values)?,
        "overestimate_total": overestimate(&t, &cum.total(), &exact.total())?,
        "cumulant": record_summary(&cum, Some(&s))?,
        "exact": record_summary(&exact, Some(&s))?,
    });
    if method == ExactMethod::Mcwf {
        summary["trajectories"] = json!({
            "count": traj.count,
            "seed": traj.seed,
            "unravelling": crate::config::unravelling_name(traj.unravelling),
        });
    }
    Ok(Outcome {
        files: vec![
            Artifact::new("cumulant.csv", cum.to_csv()),
            Artifact::new("exact.csv", exact.to_csv()),
        ],
        summary,
    })
}

struct Row {
    n: usize,
    total: Peak,
    channels: Vec<Peak>,
    shares: Option<Vec<f64>>,
}

fn scaling_row(n: usize, rec: &EmissionRecord, with_shares: bool) -> superburst::Result<Row> {
    Ok(Row {
        n,
        total: find_peak(rec, None)?,
        channels: (0..rec.n_channels()).map(|a| find_peak(rec, Some(a))).collect::<superburst::Result<_>>()?,
        shares: if with_shares { Some(photon_shares(rec)?) } else { None },
    })
}

fn fit_json(pairs: &[(f64, f64)], n_min: f64) -> Value {
    match fit_power_law(pairs, n_min) {
        Ok(f) => json!({ "exponent": f.exponent, "prefactor": f.prefactor, "residual": f.residual }),
        Err(_) => Value::Null,
    }
}

fn run_scaling(cfg: &ExperimentConfig) -> RunResult<Outcome> {
    let sc = cfg.scaling.as_ref().expect("validated");
    let t = grid(cfg);
    let tol = tolerances(cfg);
    let with_shares = !sc.stop_after_peak;
    let (labels, share_channel, rows, mut summary) = if let Some(p) = &cfg.point {
        let rows = sc
            .sizes
            .par_iter()
            .map(|&n| {
                let spec = PointModelSpec::new(p.model, n, p.rates.clone())?;
                let (rec, _) = evolve_point_with(&spec, &t, tol)?;
                scaling_row(n, &rec, with_shares)
            })
            .collect::<superburst::Result<Vec<_>>>()?;
        let labels: Vec<String> = p.model.channel_labels().iter().map(|l| l.to_string()).collect();
        let summary = json!({ "model": point_model_name(p.model), "rates": p.rates });
        (labels, 0, rows, summary)
    } else {
        let s = scheme(cfg)?;
        let d = spacing_nm(cfg, &s)?;
        let opts = CumulantOptions {
            tolerances: tol,
            stop_below_peak_fraction: sc.stop_after_peak.then_some(0.5),
            ..Default::default()
        };
        let rows = sc
            .sizes
            .par_iter()
            .map(|&side| {
                let geom = square_lattice(side, side, d)?;
                let set = coupling_matrices(&geom, &s)?;
                let run = evolve_cumulant_on(&set, None, &t, &opts)?;
                scaling_row(side * side, &run.record, with_shares)
            })
            .collect::<superburst::Result<Vec<_>>>()?;
        let labels = s.channels.iter().map(|c| c.label.clone()).collect();
        let summary = json!({
            "spacing_nm": d,
            "spacing_lambda": d / s.reference_wavelength(),
            "reference_wavelength_nm": s.reference_wavelength(),
        });
        (labels, s.dominant_channel(), rows, summary)
    };

    let mut csv = String::from("n_atoms,t_peak_total,R_peak_total,burst_total");
    for l in &labels {
        let _ = write!(csv, ",t_peak_{l},R_peak_{l},burst_{l},share_{l}");
    }
    csv.push('\n');
    for r in &rows {
        let _ = write!(csv, "{},{},{},{}", r.n, fmt_f64(r.total.t_peak), fmt_f64(r.total.r_peak), u8::from(r.total.burst));
        for (a, p) in r.channels.iter().enumerate() {
            let share = r.shares.as_ref().map_or(f64::NAN, |s| s[a]);
            let _ = write!(csv, ",{},{},{},{}", fmt_f64(p.t_peak), fmt_f64(p.r_peak), u8::from(p.burst), fmt_f64(share));
        }
        csv.push('\n');
    }

    let pairs = |sel: &dyn Fn(&Row) -> Peak| -> Vec<(f64, f64)> {
        rows.iter()
            .map(|r| (r.n as f64, sel(r)))
            .filter(|(_, p)| p.burst)
            .map(|(n, p)| (n, p.r_peak))
            .collect()
    };
    summary["sizes"] = json!(rows.iter().map(|r| r.n).collect::<Vec<_>>());
    summary["fit_min_n"] = json!(sc.fit_min_n);
    summary["share_channel"] = json!(share_channel);
    summary["total_peak_fit"] = fit_json(&pairs(&|r| r.total), sc.fit_min_n);
    summary["channel_peak_fits"] = Value::Array(
        (0..labels.len())
            .map(|a| json!({ "label": labels[a], "fit": fit_json(&pairs(&|r| r.channels[a]), sc.fit_min_n) }))
            .collect(),
    );
    summary["share_fit"] = if with_shares {
        let shares: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| (r.n as f64, r.shares.as_ref().expect("computed")[share_channel]))
            .collect();
        match fit_share(&shares, sc.fit_min_n) {
            Ok(f) => json!({ "label": labels[share_channel], "A": f.a(), "B": f.b(), "residual": f.residual }),
            Err(_) => Value::Null,
        }
    } else {
        Value::Null
    };
    summary["rows"] = Value::Array(
        rows.iter()
            .map(|r| {
                json!({
                    "n_atoms": r.n,
                    "total": peak_json(&r.total),
                    "shares": r.shares,
                })
            })
            .collect(),
    );
    Ok(Outcome {
        files: vec![Artifact::new("scaling.csv", csv)],
        summary,
    })
}

/// Run a single (non-preset) config in memory.
pub fn execute(cfg: &ExperimentConfig) -> RunResult<Outcome> {
    match cfg.kind {
        Kind::PointModel => run_point(cfg),
        Kind::Cumulant => run_cumulant(cfg),
        Kind::CriteriaSweep => run_sweep(cfg),
        Kind::ExactBenchmark => run_benchmark(cfg),
        Kind::Scaling => run_scaling(cfg),
        Kind::Preset => Err(Failure::from(superburst::Error::InvalidArgument(
            "preset configs run as bundles".into(),
        ))),
    }
}

/// Result of a run as seen by the caller.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub name: String,
    pub dir: PathBuf,
    pub ok: bool,
    pub summary: Value,
    pub error: Option<String>,
    pub checks: Vec<CheckLine>,
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> anyhow::Result<FileEntry> {
    fs::write(dir.join(name), contents)?;
    Ok(FileEntry {
        path: name.to_string(),
        sha256: sha256_hex(contents),
        bytes: contents.len(),
    })
}

fn manifest_base(name: &str, kind: &str, config_text: &str) -> Manifest {
    Manifest {
        tool: "superburst".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        name: name.into(),
        kind: kind.into(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        threads: rayon::current_num_threads(),
        wall_time_s: 0.0,
        status: "ok".into(),
        partial: false,
        error: None,
        files: Vec::new(),
        runs: Vec::new(),
        checks: Vec::new(),
    }
}

fn write_manifest(dir: &Path, m: &Manifest) -> anyhow::Result<()> {
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(m)? + "\n")?;
    Ok(())
}

/// Run one config and write its files, summary and manifest into `dir`.
/// Presets are expanded into a bundle below `dir`.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<RunReport> {
    if cfg.kind == Kind::Preset {
        let name = cfg.preset.as_deref().expect("validated");
        let bundle = preset::preset(name, None)?;
        return run_bundle(name, &bundle, dir);
    }
    fs::create_dir_all(dir)?;
    let start = Instant::now();
    let text = cfg.to_ini();
    let mut manifest = manifest_base(&cfg.name, cfg.kind.as_str(), &text);
    manifest.files.push(write_file(dir, "config.ini", text.as_bytes())?);
    let (ok, summary, error) = match execute(cfg) {
        Ok(out) => {
            for f in &out.files {
                manifest.files.push(write_file(dir, &f.name, f.contents.as_bytes())?);
            }
            let body = serde_json::to_string_pretty(&out.summary)? + "\n";
            manifest.files.push(write_file(dir, "summary.json", body.as_bytes())?);
            (true, out.summary, None)
        }
        Err(fail) => {
            for f in &fail.partial {
                manifest.files.push(write_file(dir, &f.name, f.contents.as_bytes())?);
            }
            manifest.status = "failed".into();
            manifest.partial = !fail.partial.is_empty();
            manifest.error = Some(fail.error.to_string());
            log::error!("{}: {}", cfg.name, fail.error);
            (false, Value::Null, Some(fail.error.to_string()))
        }
    };
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    write_manifest(dir, &manifest)?;
    Ok(RunReport {
        name: cfg.name.clone(),
        dir: dir.to_path_buf(),
        ok,
        summary,
        error,
        checks: Vec::new(),
    })
}

/// Run every config of a preset in parallel, one subdirectory each, and
/// evaluate the preset's checks on the summaries.
pub fn run_bundle(name: &str, configs: &[ExperimentConfig], dir: &Path) -> anyhow::Result<RunReport> {
    fs::create_dir_all(dir)?;
    let start = Instant::now();
    let text: String = configs.iter().map(|c| c.to_ini() + "\n").collect();
    let mut manifest = manifest_base(name, "preset", &text);
    let reports = configs
        .par_iter()
        .map(|c| {
            log::info!("{name}: starting {}", c.name);
            run_to_dir(c, &dir.join(&c.name))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let ok = reports.iter().all(|r| r.ok);
    manifest.runs = reports
        .iter()
        .map(|r| RunRef {
            name: r.name.clone(),
            manifest: format!("{}/manifest.json", r.name),
            status: if r.ok { "ok".into() } else { "failed".into() },
        })
        .collect();
    let summaries: Vec<(String, Value)> = reports.iter().map(|r| (r.name.clone(), r.summary.clone())).collect();
    let checks = if ok { preset::checks(name, &summaries) } else { Vec::new() };
    manifest.checks = checks.clone();
    if !ok {
        manifest.status = "failed".into();
        manifest.partial = true;
        manifest.error = Some(
            reports
                .iter()
                .filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.name)))
                .collect::<Vec<_>>()
                .join("; "),
        );
    }
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    write_manifest(dir, &manifest)?;
    Ok(RunReport {
        name: name.to_string(),
        dir: dir.to_path_buf(),
        ok,
        summary: json!(summaries.into_iter().collect::<serde_json::Map<_, _>>()),
        error: manifest.error,
        checks,
    })
}
