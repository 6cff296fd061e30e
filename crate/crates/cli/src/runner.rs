//! Executes a validated scenario and writes its artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use difflab::dynamics::{reverse_ensemble, write_trajectories_csv, ReversePlan};
use difflab::fixedpoints::trace_tree;
use difflab::infotheory::{divergence_report, entropy_profile, fisher_spectrum, marginal_identity_residual};
use difflab::mc::derive_seed;
use difflab::model::{DataDistribution, NoiseSchedule};
use difflab::{discretegame, float};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::scenario::{LoadedScenario, OutputSpec};
use crate::CliError;

/// Substream labels per output kind, so adding an output never changes the
/// random numbers seen by another.
mod substreams {
    pub const PROFILE: u64 = 101;
    pub const ENSEMBLE: u64 = 103;
    pub const DIVERGENCE: u64 = 104;
    pub const TWENTYQ: u64 = 106;
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_root: PathBuf,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub manifest: PathBuf,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Versions {
    difflab: &'static str,
    difflab_cli: &'static str,
    scenario_format: u32,
}

#[derive(Serialize)]
struct ManifestEntry {
    kind: &'static str,
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    scenario: String,
    config_sha256: String,
    master_seed: u64,
    versions: Versions,
    threads: usize,
    outputs: Vec<ManifestEntry>,
    wall_time_seconds: f64,
}

struct Artifact {
    kind: &'static str,
    path: PathBuf,
    bytes: Vec<u8>,
}

/// Path of the manifest written for a scenario.
pub fn manifest_path(out_root: &Path, scenario_name: &str) -> PathBuf {
    out_root.join(format!("{scenario_name}.manifest.json"))
}

pub fn run(loaded: &LoadedScenario, opts: &RunOptions) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let sc = &loaded.scenario;
    let artifacts: Vec<Vec<Artifact>> = sc
        .outputs
        .par_iter()
        .map(|out| compute(loaded, out))
        .collect::<Result<_, _>>()?;
    let artifacts: Vec<Artifact> = artifacts.into_iter().flatten().collect();

    let manifest = Manifest {
        scenario: sc.name.clone(),
        config_sha256: loaded.config_hash(),
        master_seed: sc.master_seed,
        versions: Versions {
            difflab: difflab::VERSION,
            difflab_cli: env!("CARGO_PKG_VERSION"),
            scenario_format: crate::scenario::SCENARIO_VERSION,
        },
        threads: rayon::current_num_threads(),
        outputs: artifacts
            .iter()
            .map(|a| ManifestEntry {
                kind: a.kind,
                path: a.path.to_string_lossy().into_owned(),
                sha256: format!("{:x}", Sha256::digest(&a.bytes)),
            })
            .collect(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    let mut manifest_bytes = serde_json::to_vec_pretty(&manifest).map_err(difflab::Error::from)?;
    manifest_bytes.push(b'\n');

    let mut targets: Vec<(PathBuf, &[u8])> = artifacts
        .iter()
        .map(|a| (opts.out_root.join(&a.path), a.bytes.as_slice()))
        .collect();
    let manifest_file = manifest_path(&opts.out_root, &sc.name);
    targets.push((manifest_file.clone(), &manifest_bytes));
    write_all_atomic(&targets)?;

    Ok(RunReport {
        manifest: manifest_file,
        files: targets.into_iter().map(|(p, _)| p).collect(),
    })
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Writes every file to a temporary sibling, then renames them into place.
/// On failure nothing from this run is left behind.
fn write_all_atomic(targets: &[(PathBuf, &[u8])]) -> Result<(), CliError> {
    let mut temps = Vec::new();
    let mut placed = Vec::new();
    let result = (|| {
        for (path, bytes) in targets {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
            }
            let tmp = tmp_path(path);
            temps.push(tmp.clone());
            fs::write(&tmp, bytes).map_err(|e| CliError::io(format!("writing {}", tmp.display()), e))?;
        }
        for (path, _) in targets {
            let tmp = tmp_path(path);
            fs::rename(&tmp, path).map_err(|e| CliError::io(format!("renaming to {}", path.display()), e))?;
            placed.push(path.clone());
        }
        Ok(())
    })();
    if result.is_err() {
        for p in temps.iter().chain(&placed) {
            let _ = fs::remove_file(p);
        }
    }
    result
}

fn distribution(loaded: &LoadedScenario) -> Result<&DataDistribution, CliError> {
    loaded
        .distribution
        .as_ref()
        .ok_or_else(|| CliError::Validation(vec!["distribution: required by the requested outputs".into()]))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> difflab::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn time_of(schedule: &NoiseSchedule, sigma2: f64) -> Result<f64, CliError> {
    Ok(schedule.time_of(sigma2)?)
}

fn compute(loaded: &LoadedScenario, out: &OutputSpec) -> Result<Vec<Artifact>, CliError> {
    let sc = &loaded.scenario;
    let schedule = &sc.schedule;
    let grid = sc.sigma2_grid.values();
    let kind = out.kind();
    let single = |path: &PathBuf, bytes| {
        Ok(vec![Artifact {
            kind,
            path: path.clone(),
            bytes,
        }])
    };
    match out {
        OutputSpec::EntropyProfile { path } => {
            let dist = distribution(loaded)?;
            let seed = derive_seed(sc.master_seed, &[substreams::PROFILE]);
            let profile = entropy_profile(dist, schedule, &grid, &sc.estimators, sc.n_samples, seed)?;
            single(path, csv_bytes(|b| profile.write_csv(b))?)
        }
        OutputSpec::FixedPointTree { path, csv_path, n_grid } => {
            let dist = distribution(loaded)?;
            let t_hi = time_of(schedule, sc.sigma2_grid.max)?;
            let t_lo = time_of(schedule, sc.sigma2_grid.min)?;
            let tree = trace_tree(dist, schedule, t_hi, t_lo, *n_grid)?;
            let mut json = tree.to_json()?.into_bytes();
            json.push(b'\n');
            let mut v = vec![Artifact {
                kind,
                path: path.clone(),
                bytes: json,
            }];
            if let Some(cp) = csv_path {
                v.push(Artifact {
                    kind,
                    path: cp.clone(),
                    bytes: csv_bytes(|b| tree.write_csv(b))?,
                });
            }
            Ok(v)
        }
        OutputSpec::TrajectoryEnsemble {
            path,
            n_trajectories,
            n_steps,
            mode,
        } => {
            let dist = distribution(loaded)?;
            let t_hi = time_of(schedule, sc.sigma2_grid.max)?;
            let t_lo = time_of(schedule, sc.sigma2_grid.min)?;
            let plan = ReversePlan::new(t_hi, t_lo, *n_steps, *mode);
            let seed = derive_seed(sc.master_seed, &[substreams::ENSEMBLE]);
            let trajs = reverse_ensemble(dist, schedule, &plan, *n_trajectories, seed)?;
            single(path, csv_bytes(|b| write_trajectories_csv(&trajs, b))?)
        }
        OutputSpec::DivergenceSweep { path } => {
            let dist = distribution(loaded)?;
            let seed = derive_seed(sc.master_seed, &[substreams::DIVERGENCE]);
            let rows = grid
                .iter()
                .map(|&s2| -> Result<Vec<String>, CliError> {
                    let t = time_of(schedule, s2)?;
                    let nu2 = schedule.nu2(t)?;
                    let r = divergence_report(dist, schedule, t, sc.n_samples, seed)?;
                    let marginal = r.div.scaled(-0.5 * nu2);
                    let resid = marginal_identity_residual(dist, schedule, t, sc.n_samples, seed)?;
                    Ok(vec![
                        float(s2),
                        float(t),
                        float(r.div.value),
                        float(r.div.stderr),
                        float(r.div1),
                        float(r.delta_div.value),
                        float(marginal.value),
                        float(marginal.stderr),
                        float(resid.value),
                        float(resid.stderr),
                    ])
                })
                .collect::<Result<Vec<_>, _>>()?;
            let header = [
                "sigma2",
                "t",
                "div",
                "stderr_div",
                "div1",
                "delta_div",
                "marginal_rate",
                "stderr_marginal_rate",
                "identity_residual",
                "stderr_identity_residual",
            ];
            single(path, write_rows(&header, &rows)?)
        }
        OutputSpec::FisherSweep { path, probe } => {
            let dist = distribution(loaded)?;
            let x = match probe {
                Some(p) => DVector::from_column_slice(p),
                None => dist.mean(),
            };
            let d = dist.dim();
            let mut header = vec!["sigma2".to_string(), "t".into(), "est_manifold_dim".into()];
            header.extend((1..=d).map(|i| format!("lambda_{i}")));
            let rows = grid
                .iter()
                .map(|&s2| -> Result<Vec<String>, CliError> {
                    let t = time_of(schedule, s2)?;
                    let f = fisher_spectrum(dist, schedule, &x, t)?;
                    let mut row = vec![float(s2), float(t), f.est_manifold_dim.to_string()];
                    row.extend(f.eigenvalues.iter().map(|v| float(*v)));
                    Ok(row)
                })
                .collect::<Result<Vec<_>, _>>()?;
            single(path, write_rows(&header, &rows)?)
        }
        OutputSpec::Twentyq { path, universe, policy } => {
            let universe = universe
                .build()
                .map_err(|e| CliError::Validation(vec![format!("universe: {e}")]))?;
            let seed = derive_seed(sc.master_seed, &[substreams::TWENTYQ]);
            let record = discretegame::play_oracle(&universe, *policy, seed)?;
            single(path, csv_bytes(|b| record.write_csv(b))?)
        }
    }
}

fn write_rows<H: AsRef<[u8]>>(header: &[H], rows: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    })
}
