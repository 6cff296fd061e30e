//! Scenario files: strict, versioned JSON describing one experiment.

use std::collections::BTreeSet;
use std::path::{Component, Path, PathBuf};

use difflab::discretegame::{GameUniverse, Policy};
use difflab::dynamics::Mode;
use difflab::infotheory::RateEstimator;
use difflab::model::{load_pointcloud, DataDistribution, DistributionSpec, NoiseSchedule, PointCloudFormat};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<DistributionInput>,
    #[serde(default)]
    pub schedule: NoiseSchedule,
    pub sigma2_grid: GridSpec,
    pub estimators: Vec<RateEstimator>,
    pub n_samples: usize,
    pub master_seed: u64,
    pub outputs: Vec<OutputSpec>,
}

/// A distribution given inline or as a point-cloud file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistributionInput {
    File { pointcloud: PointCloudRef },
    Inline(DistributionSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointCloudRef {
    /// Relative paths resolve against the scenario file's directory.
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<PointCloudFormat>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Linear,
    Log,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub n: usize,
    #[serde(default = "default_spacing")]
    pub spacing: Spacing,
}

fn default_spacing() -> Spacing {
    Spacing::Log
}

impl GridSpec {
    /// Increasing σ² values.
    pub fn values(&self) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|k| {
                if k == 0 {
                    return self.min;
                }
                if k == n - 1 {
                    return self.max;
                }
                let f = k as f64 / (n - 1) as f64;
                match self.spacing {
                    Spacing::Linear => self.min + (self.max - self.min) * f,
                    Spacing::Log => self.min * (self.max / self.min).powf(f),
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniverseSpec {
    /// 2^bits elements with one question per bit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balanced_bits: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elements: Option<Vec<String>>,
    /// `questions[q][e]` is element e's answer to question q.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub questions: Option<Vec<Vec<bool>>>,
}

impl UniverseSpec {
    pub fn build(&self) -> Result<GameUniverse, String> {
        match (self.balanced_bits, &self.elements, &self.questions) {
            (Some(b), None, None) => GameUniverse::balanced(b).map_err(|e| e.to_string()),
            (None, Some(e), Some(q)) => GameUniverse::new(e.clone(), q.clone()).map_err(|e| e.to_string()),
            _ => Err("give either balanced_bits or both elements and questions".into()),
        }
    }
}

fn default_n_grid() -> usize {
    400
}
fn default_n_trajectories() -> usize {
    32
}
fn default_n_steps() -> usize {
    400
}
fn default_mode() -> Mode {
    Mode::ReverseSde
}
fn default_policy() -> Policy {
    Policy::LazyRandom
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OutputSpec {
    EntropyProfile {
        path: PathBuf,
    },
    /// Swept over the σ² range of `sigma2_grid`.
    FixedPointTree {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        csv_path: Option<PathBuf>,
        #[serde(default = "default_n_grid")]
        n_grid: usize,
    },
    /// Reverse trajectories from the top to the bottom of `sigma2_grid`.
    TrajectoryEnsemble {
        path: PathBuf,
        #[serde(default = "default_n_trajectories")]
        n_trajectories: usize,
        #[serde(default = "default_n_steps")]
        n_steps: usize,
        #[serde(default = "default_mode")]
        mode: Mode,
    },
    DivergenceSweep {
        path: PathBuf,
    },
    FisherSweep {
        path: PathBuf,
        /// Evaluation point; defaults to the data mean.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        probe: Option<Vec<f64>>,
    },
    Twentyq {
        path: PathBuf,
        universe: UniverseSpec,
        #[serde(default = "default_policy")]
        policy: Policy,
    },
}

impl OutputSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            OutputSpec::EntropyProfile { .. } => "entropy-profile",
            OutputSpec::FixedPointTree { .. } => "fixed-point-tree",
            OutputSpec::TrajectoryEnsemble { .. } => "trajectory-ensemble",
            OutputSpec::DivergenceSweep { .. } => "divergence-sweep",
            OutputSpec::FisherSweep { .. } => "fisher-sweep",
            OutputSpec::Twentyq { .. } => "twentyq",
        }
    }

    pub fn paths(&self) -> Vec<&Path> {
        match self {
            OutputSpec::FixedPointTree { path, csv_path, .. } => {
                let mut v = vec![path.as_path()];
                v.extend(csv_path.as_deref());
                v
            }
            OutputSpec::EntropyProfile { path }
            | OutputSpec::TrajectoryEnsemble { path, .. }
            | OutputSpec::DivergenceSweep { path }
            | OutputSpec::FisherSweep { path, .. }
            | OutputSpec::Twentyq { path, .. } => vec![path.as_path()],
        }
    }

    fn needs_distribution(&self) -> bool {
        !matches!(self, OutputSpec::Twentyq { .. })
    }

    fn is_monte_carlo(&self) -> bool {
        matches!(self, OutputSpec::EntropyProfile { .. } | OutputSpec::DivergenceSweep { .. })
    }
}

/// A parsed scenario with its distribution loaded.
#[derive(Clone, Debug)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub distribution: Option<DataDistribution>,
}

impl LoadedScenario {
    /// SHA-256 of the canonical form: the scenario re-serialized with
    /// defaults filled in, the description dropped and any point-cloud file
    /// replaced by its contents. Formatting, key order and file names do not
    /// affect it.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.scenario.clone();
        canonical.description = None;
        canonical.distribution = self
            .distribution
            .as_ref()
            .map(|d| DistributionInput::Inline(d.spec()));
        let bytes = serde_json::to_vec(&canonical).expect("scenario serializes");
        format!("{:x}", Sha256::digest(&bytes))
    }
}

fn check_relative(path: &Path, field: &str, errors: &mut Vec<String>) {
    let bad = path.as_os_str().is_empty()
        || path
            .components()
            .any(|c| !matches!(c, Component::Normal(_) | Component::CurDir));
    if bad {
        errors.push(format!(
            "{field}: {path:?} must be a relative path without '..'"
        ));
    }
}

/// Parses scenario JSON and checks every field, collecting all problems.
/// `base_dir` resolves relative point-cloud paths.
pub fn load_scenario(text: &str, base_dir: &Path) -> Result<LoadedScenario, CliError> {
    let scenario: Scenario =
        serde_json::from_str(text).map_err(|e| CliError::Validation(vec![format!("scenario: {e}")]))?;
    let mut errors = Vec::new();

    if scenario.version != SCENARIO_VERSION {
        errors.push(format!(
            "version: {} is not supported (expected {SCENARIO_VERSION})",
            scenario.version
        ));
    }
    if scenario.name.is_empty()
        || !scenario
            .name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    {
        errors.push("name: must be non-empty and use only letters, digits, '-' and '_'".into());
    }

    let g = scenario.sigma2_grid;
    if !(g.min.is_finite() && g.min > 0.0) {
        errors.push(format!("sigma2_grid.min: {} must be finite and > 0", g.min));
    }
    if !(g.max.is_finite() && g.max > g.min) {
        errors.push(format!("sigma2_grid.max: {} must be finite and > min", g.max));
    }
    if g.n < 2 {
        errors.push(format!("sigma2_grid.n: {} must be >= 2", g.n));
    }
    if g.max.is_finite() && scenario.schedule.time_of(g.max).is_err() {
        errors.push(format!(
            "sigma2_grid.max: {} exceeds the schedule's largest variance {}",
            g.max,
            scenario.schedule.sigma2_max()
        ));
    }

    if scenario.estimators.is_empty() {
        errors.push("estimators: at least one estimator is required".into());
    }
    let unique: BTreeSet<&str> = scenario.estimators.iter().map(|e| e.as_str()).collect();
    if unique.len() != scenario.estimators.len() {
        errors.push("estimators: duplicates are not allowed".into());
    }

    if scenario.outputs.is_empty() {
        errors.push("outputs: at least one output is required".into());
    }
    if scenario.outputs.iter().any(OutputSpec::is_monte_carlo) && scenario.n_samples < 100 {
        errors.push(format!(
            "n_samples: {} is below the minimum of 100 for Monte Carlo outputs",
            scenario.n_samples
        ));
    }

    let distribution = match &scenario.distribution {
        None => {
            if scenario.outputs.iter().any(OutputSpec::needs_distribution) {
                errors.push("distribution: required by the requested outputs".into());
            }
            None
        }
        Some(input) => {
            let built = match input {
                DistributionInput::Inline(spec) => spec.build().map_err(|e| e.to_string()),
                DistributionInput::File { pointcloud } => {
                    let path = base_dir.join(&pointcloud.path);
                    let format = pointcloud.format.unwrap_or_else(|| {
                        match path.extension().and_then(|e| e.to_str()) {
                            Some("json") => PointCloudFormat::Json,
                            _ => PointCloudFormat::Csv,
                        }
                    });
                    load_pointcloud(&path, format).map_err(|e| format!("{}: {e}", path.display()))
                }
            };
            match built {
                Ok(d) => Some(d),
                Err(e) => {
                    errors.push(format!("distribution: {e}"));
                    None
                }
            }
        }
    };

    let mut seen_paths = BTreeSet::new();
    for (i, out) in scenario.outputs.iter().enumerate() {
        let field = format!("outputs[{i}]");
        for p in out.paths() {
            check_relative(p, &format!("{field}.path"), &mut errors);
            if !seen_paths.insert(p.to_path_buf()) {
                errors.push(format!("{field}.path: {p:?} is written by more than one output"));
            }
        }
        match out {
            OutputSpec::FixedPointTree { n_grid, .. } if *n_grid < 2 => {
                errors.push(format!("{field}.n_grid: {n_grid} must be >= 2"));
            }
            OutputSpec::TrajectoryEnsemble {
                n_trajectories,
                n_steps,
                mode,
                ..
            } => {
                if *n_trajectories == 0 {
                    errors.push(format!("{field}.n_trajectories: must be >= 1"));
                }
                if *n_steps == 0 {
                    errors.push(format!("{field}.n_steps: must be >= 1"));
                }
                if *mode == Mode::ForwardSde {
                    errors.push(format!("{field}.mode: use reverse-sde or reverse-ode"));
                }
                if let Some(d) = &distribution {
                    if g.min < d.sigma2_floor() {
                        errors.push(format!(
                            "sigma2_grid.min: {} is below the integration floor {} needed by {field}",
                            g.min,
                            d.sigma2_floor()
                        ));
                    }
                }
            }
            OutputSpec::FisherSweep { probe: Some(p), .. } => {
                if let Some(d) = &distribution {
                    if p.len() != d.dim() {
                        errors.push(format!(
                            "{field}.probe: has {} coordinates, the distribution has {}",
                            p.len(),
                            d.dim()
                        ));
                    }
                }
                if p.iter().any(|v| !v.is_finite()) {
                    errors.push(format!("{field}.probe: must be finite"));
                }
            }
            OutputSpec::Twentyq { universe, policy, .. } => match universe.build() {
                Err(e) => errors.push(format!("{field}.universe: {e}")),
                Ok(u) => {
                    if let Policy::FixedElement { element } = policy {
                        if *element >= u.len() {
                            errors.push(format!(
                                "{field}.policy.element: {element} is outside a universe of {}",
                                u.len()
                            ));
                        }
                    }
                }
            },
            _ => {}
        }
    }

    if errors.is_empty() {
        Ok(LoadedScenario {
            scenario,
            distribution,
        })
    } else {
        Err(CliError::Validation(errors))
    }
}
