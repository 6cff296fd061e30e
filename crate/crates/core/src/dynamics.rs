//! Forward and reverse integration of the diffusion, and local Lyapunov
//! analysis of the reverse flow.
//!
//! Time runs forward on `[0, t_max]`; reverse integration walks the same axis
//! with decreasing `t`. In terms of the variance clock dσ² = ν²dt the
//! reverse dynamics read
//!
//! ```text
//! reverse SDE:  x ← x + Δσ²·s(x, σ²) + √Δσ² · ξ
//! reverse ODE:  x ← x + ½Δσ²·s(x, σ²)
//! ```
//!
//! with Δσ² > 0 the variance removed by the step. Reverse runs stop at the
//! floor σ²_floor = 10⁻⁶·scale² (see [`DataDistribution::sigma2_floor`]):
//! the score stiffens like 1/σ² and explicit steps cannot go further.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float;
use crate::linalg::sorted_symmetric_eigen;
use crate::mc::{derive_seed, stream_rng, streams};
use crate::model::{standard_normal, DataDistribution, NoiseSchedule};
use crate::score::{score_at, score_vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    ForwardSde,
    ReverseSde,
    ReverseOde,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::ForwardSde => "forward-sde",
            Mode::ReverseSde => "reverse-sde",
            Mode::ReverseOde => "reverse-ode",
        }
    }
}

/// Placement of the reverse-integration nodes in σ².
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepGrid {
    /// Constant ratio σ²_{k+1}/σ²_k: every step removes the same fraction
    /// of the variance, so Δσ²/σ² (the stiffness seen by a step) is constant.
    #[default]
    Geometric,
    /// Constant Δσ².
    Uniform,
}

impl StepGrid {
    fn nodes(&self, start: f64, end: f64, n: usize) -> Vec<f64> {
        (0..=n)
            .map(|k| {
                if k == 0 {
                    return start;
                }
                if k == n {
                    return end;
                }
                let f = k as f64 / n as f64;
                match self {
                    StepGrid::Geometric => start * (end / start).powf(f),
                    StepGrid::Uniform => start + (end - start) * f,
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub mode: Mode,
    pub seed: u64,
}

impl Trajectory {
    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("trajectories are never empty")
    }
}

/// A reverse run from `t_start` down to `t_end`.
#[derive(Clone, Copy, Debug)]
pub struct ReversePlan {
    pub t_start: f64,
    pub t_end: f64,
    pub n_steps: usize,
    pub mode: Mode,
    pub grid: StepGrid,
}

impl ReversePlan {
    pub fn new(t_start: f64, t_end: f64, n_steps: usize, mode: Mode) -> Self {
        ReversePlan {
            t_start,
            t_end,
            n_steps,
            mode,
            grid: StepGrid::default(),
        }
    }

    pub fn with_grid(mut self, grid: StepGrid) -> Self {
        self.grid = grid;
        self
    }

    fn nodes(&self, dist: &DataDistribution, schedule: &NoiseSchedule) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.mode == Mode::ForwardSde {
            return Err(Error::invalid("reverse plan", "mode must be reverse-sde or reverse-ode"));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("reverse plan", "n_steps must be >= 1"));
        }
        if !(self.t_start > self.t_end) {
            return Err(Error::invalid("reverse plan", "t_start must exceed t_end"));
        }
        let s_start = schedule.sigma2(self.t_start)?;
        let s_end = schedule.sigma2(self.t_end)?;
        let floor = dist.sigma2_floor();
        if s_end < floor * (1.0 - 1e-12) {
            return Err(Error::Domain {
                what: "sigma2(t_end)",
                value: s_end,
                domain: format!("[{floor:e}, inf) (reverse-integration floor)"),
            });
        }
        let sig = self.grid.nodes(s_start, s_end, self.n_steps);
        let mut times = Vec::with_capacity(sig.len());
        for (k, s) in sig.iter().enumerate() {
            times.push(if k == 0 {
                self.t_start
            } else if k == self.n_steps {
                self.t_end
            } else {
                schedule.time_of(*s)?
            });
        }
        Ok((times, sig))
    }

    /// Runs from x₀ ~ N(0, σ²(t_start)·I).
    pub fn run(&self, dist: &DataDistribution, schedule: &NoiseSchedule, seed: u64) -> Result<Trajectory> {
        let mut rng = stream_rng(seed, streams::REVERSE);
        let s_start = schedule.sigma2(self.t_start)?;
        let x0 = standard_normal(dist.dim(), &mut rng) * s_start.sqrt();
        self.integrate(dist, schedule, x0, &mut rng, seed, true)
    }

    /// Final state of [`run`](Self::run) without recording the path.
    pub fn terminal(&self, dist: &DataDistribution, schedule: &NoiseSchedule, seed: u64) -> Result<DVector<f64>> {
        let mut rng = stream_rng(seed, streams::REVERSE);
        let s_start = schedule.sigma2(self.t_start)?;
        let x0 = standard_normal(dist.dim(), &mut rng) * s_start.sqrt();
        let traj = self.integrate(dist, schedule, x0, &mut rng, seed, false)?;
        Ok(traj.states.into_iter().next_back().expect("non-empty"))
    }

    /// Runs from a given initial state.
    pub fn run_from(
        &self,
        dist: &DataDistribution,
        schedule: &NoiseSchedule,
        x0: DVector<f64>,
        seed: u64,
    ) -> Result<Trajectory> {
        let mut rng = stream_rng(seed, streams::REVERSE);
        self.integrate(dist, schedule, x0, &mut rng, seed, true)
    }

    /// Like [`run_from`](Self::run_from) but keeps only the final state.
    pub fn terminal_from(
        &self,
        dist: &DataDistribution,
        schedule: &NoiseSchedule,
        x0: DVector<f64>,
        seed: u64,
    ) -> Result<DVector<f64>> {
        let mut rng = stream_rng(seed, streams::REVERSE);
        let traj = self.integrate(dist, schedule, x0, &mut rng, seed, false)?;
        Ok(traj.states.into_iter().next_back().expect("non-empty"))
    }

    fn integrate(
        &self,
        dist: &DataDistribution,
        schedule: &NoiseSchedule,
        x0: DVector<f64>,
        rng: &mut rand_chacha::ChaCha8Rng,
        seed: u64,
        record: bool,
    ) -> Result<Trajectory> {
        if x0.len() != dist.dim() {
            return Err(Error::Dimension {
                expected: dist.dim(),
                got: x0.len(),
            });
        }
        let (times, sig) = self.nodes(dist, schedule)?;
        let mut x = x0;
        let mut states = Vec::with_capacity(if record { sig.len() } else { 1 });
        if record {
            states.push(x.clone());
        }
        for k in 0..self.n_steps {
            let delta = sig[k] - sig[k + 1];
            let s = score_vector(dist, &x, sig[k])?;
            match self.mode {
                Mode::ReverseOde => x.axpy(0.5 * delta, &s, 1.0),
                Mode::ReverseSde => {
                    x.axpy(delta, &s, 1.0);
                    let xi = standard_normal(x.len(), rng);
                    x.axpy(delta.sqrt(), &xi, 1.0);
                }
                Mode::ForwardSde => unreachable!("checked in nodes()"),
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::BlowUp {
                    step: k + 1,
                    t: times[k + 1],
                });
            }
            if record {
                states.push(x.clone());
            }
        }
        if !record {
            states.push(x);
        }
        let (times, sig) = if record {
            (times, sig)
        } else {
            (vec![*times.last().unwrap()], vec![*sig.last().unwrap()])
        };
        Ok(Trajectory {
            times,
            sigma2: sig,
            states,
            mode: self.mode,
            seed,
        })
    }
}

/// Integrates the reverse dynamics from t_start down to t_end with the
/// default geometric step grid, starting from N(0, σ²(t_start)·I).
pub fn integrate_reverse(
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    t_start: f64,
    t_end: f64,
    n_steps: usize,
    mode: Mode,
    seed: u64,
) -> Result<Trajectory> {
    ReversePlan::new(t_start, t_end, n_steps, mode).run(dist, schedule, seed)
}

/// Simulates the forward process exactly: y ~ ρ, then independent Gaussian
/// increments with variance σ²(t_{k+1}) − σ²(t_k) on a uniform time grid.
pub fn integrate_forward(
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    t_end: f64,
    n_steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    if n_steps == 0 {
        return Err(Error::invalid("forward integration", "n_steps must be >= 1"));
    }
    if !(t_end > 0.0) {
        return Err(Error::invalid("forward integration", "t_end must be > 0"));
    }
    schedule.sigma2(t_end)?;
    let mut rng = stream_rng(seed, streams::FORWARD);
    let mut x = dist.sample(&mut rng);
    let times: Vec<f64> = (0..=n_steps)
        .map(|k| if k == n_steps { t_end } else { t_end * k as f64 / n_steps as f64 })
        .collect();
    let sig: Vec<f64> = times.iter().map(|t| schedule.sigma2(*t)).collect::<Result<_>>()?;
    let mut states = vec![x.clone()];
    for k in 0..n_steps {
        let z = standard_normal(x.len(), &mut rng);
        x += z * (sig[k + 1] - sig[k]).sqrt();
        states.push(x.clone());
    }
    Ok(Trajectory {
        times,
        sigma2: sig,
        states,
        mode: Mode::ForwardSde,
        seed,
    })
}

/// Per-trajectory seed for member `index` of an ensemble.
pub fn ensemble_seed(master_seed: u64, index: usize) -> u64 {
    derive_seed(master_seed, &[streams::REVERSE, index as u64])
}

/// Runs `n` reverse trajectories in parallel, returned in index order.
pub fn reverse_ensemble(
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    plan: &ReversePlan,
    n: usize,
    master_seed: u64,
) -> Result<Vec<Trajectory>> {
    (0..n)
        .into_par_iter()
        .map(|i| plan.run(dist, schedule, ensemble_seed(master_seed, i)))
        .collect()
}

/// Final states of `n` reverse trajectories started from N(0, σ²(t_start)·I).
pub fn reverse_ensemble_terminal(
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    plan: &ReversePlan,
    n: usize,
    master_seed: u64,
) -> Result<Vec<DVector<f64>>> {
    (0..n)
        .into_par_iter()
        .map(|i| plan.terminal(dist, schedule, ensemble_seed(master_seed, i)))
        .collect()
}

/// Writes trajectories as CSV with columns `t, x_1..x_D, trajectory_id, mode`.
pub fn write_trajectories_csv<W: Write>(trajectories: &[Trajectory], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = trajectories.first().map(|t| t.states[0].len()).unwrap_or(0);
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|i| format!("x_{i}")));
    header.push("trajectory_id".into());
    header.push("mode".into());
    w.write_record(&header)?;
    for (id, traj) in trajectories.iter().enumerate() {
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let mut row = vec![float(*t)];
            row.extend(x.iter().map(|v| float(*v)));
            row.push(id.to_string());
            row.push(traj.mode.as_str().into());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Local Lyapunov spectrum: the eigenvalues of the score Jacobian at (x, σ²).
///
/// Eigenvalues are raw Jacobian eigenvalues. A positive eigenvalue marks a
/// direction along which the reverse flow amplifies perturbations.
#[derive(Clone, Debug)]
pub struct LyapunovReport {
    pub sigma2: f64,
    pub x: DVector<f64>,
    /// Ascending.
    pub eigenvalues: DVector<f64>,
    /// Column k belongs to `eigenvalues[k]`.
    pub eigenvectors: DMatrix<f64>,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub unstable_subspace_dim: usize,
}

pub fn lyapunov_at(dist: &DataDistribution, x: &DVector<f64>, sigma2: f64) -> Result<LyapunovReport> {
    let eval = score_at(dist, x, sigma2)?;
    let (eigenvalues, eigenvectors) = sorted_symmetric_eigen(&eval.jacobian)?;
    let min_eigenvalue = eigenvalues[0];
    let max_eigenvalue = eigenvalues[eigenvalues.len() - 1];
    let unstable_subspace_dim = eigenvalues.iter().filter(|l| **l > 0.0).count();
    Ok(LyapunovReport {
        sigma2,
        x: x.clone(),
        eigenvalues,
        eigenvectors,
        min_eigenvalue,
        max_eigenvalue,
        unstable_subspace_dim,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct SeparationOptions {
    pub epsilon: f64,
    pub n_steps: usize,
    /// Allowed |rate(ε) − rate(ε/10)| before the run is declared nonlinear.
    pub richardson_tol: f64,
}

impl Default for SeparationOptions {
    fn default() -> Self {
        SeparationOptions {
            epsilon: 1e-6,
            n_steps: 2000,
            richardson_tol: 1e-3,
        }
    }
}

/// Finite-time separation rate of the reverse ODE along `direction`:
/// (1/τ)·ln(‖x_{t−τ}(x + εw) − x_{t−τ}(x)‖ / ε). Positive means the reverse
/// flow pulls the two trajectories apart.
pub fn separation_rate(
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    x: &DVector<f64>,
    t: f64,
    direction: &DVector<f64>,
    window: f64,
) -> Result<f64> {
    separation_rate_with(dist, schedule, x, t, direction, window, SeparationOptions::default())
}

pub fn separation_rate_with(
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    x: &DVector<f64>,
    t: f64,
    direction: &DVector<f64>,
    window: f64,
    opts: SeparationOptions,
) -> Result<f64> {
    if direction.len() != x.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: direction.len(),
        });
    }
    if (direction.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("direction", "must be a unit vector"));
    }
    if !(window > 0.0) {
        return Err(Error::invalid("window", "must be > 0"));
    }
    let plan = ReversePlan::new(t, t - window, opts.n_steps, Mode::ReverseOde);
    let base = plan.terminal_from(dist, schedule, x.clone(), 0)?;
    let rate = |eps: f64| -> Result<f64> {
        let moved = plan.terminal_from(dist, schedule, x + direction * eps, 0)?;
        let sep = (moved - &base).norm();
        if !(sep > 0.0) {
            return Err(Error::Numeric("perturbation collapsed to zero separation".into()));
        }
        Ok((sep / eps).ln() / window)
    };
    let coarse = rate(opts.epsilon)?;
    let fine = rate(opts.epsilon / 10.0)?;
    if (coarse - fine).abs() > opts.richardson_tol * coarse.abs().max(1.0) {
        return Err(Error::Numeric(format!(
            "separation rate not linear in epsilon: {coarse} vs {fine}"
        )));
    }
    Ok(coarse)
}
