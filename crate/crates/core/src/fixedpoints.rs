//! Fixed points of the score, their paths through time, and the branch
//! events where generative decisions happen.
//!
//! A fixed point solves ∇log p_t(x*) = 0. For a point-mass mixture this is
//! the self-consistency equation x* = Σ_j w_j(x*)·y_j. As σ² shrinks, the
//! single large-noise fixed point near the data mean splits into a tree of
//! paths that end on the data points. A split is *continuous* when the parent
//! loses stability (the top Jacobian eigenvalue reaches 0) and the children
//! move away like ±(t_c − t)^{1/2}. It is a *jump* when a new mode appears at
//! a finite distance or a tracked root vanishes and warm starts snap to a
//! distant root.
//!
//! Stability uses ε_stab = 10⁻⁸/σ²: a node is stable when every eigenvalue of
//! the Jacobian lies below −ε_stab.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::StepGrid;
use crate::error::{Error, Result};
use crate::float;
use crate::linalg::sorted_symmetric_eigen;
use crate::model::{DataDistribution, DistributionSpec, NoiseSchedule};
use crate::score::{log_density, mixture_log_weights, score_at, score_vector};

const NEWTON_MAX_ITER: usize = 200;
const ASCENT_MAX_ITER: usize = 200_000;
const BRANCH_THRESHOLD: f64 = 1e-6;
/// |λ|·σ² below which a continuation point counts as degenerate.
const CRITICAL_TOL: f64 = 1e-6;

fn eps_stab(sigma2: f64) -> f64 {
    1e-8 / sigma2
}

fn residual_tol(dist: &DataDistribution, sigma2: f64) -> f64 {
    1e-9 * dist.data_scale() / sigma2
}

/// One solved fixed point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointNode {
    pub t: f64,
    pub sigma2: f64,
    pub x: Vec<f64>,
    /// ‖∇log p_t(x*)‖.
    pub residual: f64,
    /// Jacobian eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    pub stable: bool,
}

impl FixedPointNode {
    fn build(dist: &DataDistribution, x: DVector<f64>, t: f64, sigma2: f64) -> Result<(Self, DMatrix<f64>)> {
        let eval = score_at(dist, &x, sigma2)?;
        let (vals, vecs) = sorted_symmetric_eigen(&eval.jacobian)?;
        let stable = vals.iter().all(|l| *l < -eps_stab(sigma2));
        Ok((
            FixedPointNode {
                t,
                sigma2,
                residual: eval.score.norm(),
                x: x.iter().copied().collect(),
                eigenvalues: vals.iter().copied().collect(),
                stable,
            },
            vecs,
        ))
    }

    pub fn position(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x)
    }

    /// Largest Jacobian eigenvalue: the one that reaches 0 when the node
    /// loses stability.
    pub fn critical_eigenvalue(&self) -> f64 {
        *self.eigenvalues.last().expect("non-empty spectrum")
    }
}

/// Damped Newton on the score. Converges to the nearest root of any
/// stability type.
fn newton(dist: &DataDistribution, x0: &DVector<f64>, sigma2: f64) -> Result<DVector<f64>> {
    let tol = residual_tol(dist, sigma2);
    let mut x = x0.clone();
    let mut eval = score_at(dist, &x, sigma2)?;
    let mut r = eval.score.norm();
    for _ in 0..NEWTON_MAX_ITER {
        if r <= tol {
            return Ok(x);
        }
        let Some(step) = eval.jacobian.clone().lu().solve(&(-&eval.score)) else {
            break;
        };
        if step.iter().any(|v| !v.is_finite()) {
            break;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-8 {
            let trial = &x + &step * alpha;
            let te = score_at(dist, &trial, sigma2)?;
            let tr = te.score.norm();
            if tr < (1.0 - 1e-4 * alpha) * r || tr <= tol {
                accepted = Some((trial, te, tr));
                break;
            }
            alpha *= 0.5;
        }
        let Some((nx, ne, nr)) = accepted else {
            break;
        };
        x = nx;
        eval = ne;
        r = nr;
    }
    if r <= tol {
        Ok(x)
    } else {
        Err(Error::NoConvergence {
            iterations: NEWTON_MAX_ITER,
            residual: r,
        })
    }
}

fn is_negative_definite(dist: &DataDistribution, x: &DVector<f64>, sigma2: f64) -> Result<bool> {
    let jac = score_at(dist, x, sigma2)?.jacobian;
    Ok((-jac).cholesky().is_some())
}

/// Hill climbing on log p_t with the self-consistency map
/// x ← x + σ²·∇log p_t(x) (= Σ w_j(x) y_j for mixtures), polished with
/// Newton once the iterate sits in a concave region.
fn ascend(dist: &DataDistribution, x0: &DVector<f64>, sigma2: f64) -> Result<DVector<f64>> {
    ascend_toward(dist, x0, sigma2, None)
}

/// As [`ascend`]. A stall on a non-concave point is escaped with kicks of
/// doubling length along the top Jacobian eigenvector, oriented along
/// `prefer` when given.
fn ascend_toward(
    dist: &DataDistribution,
    x0: &DVector<f64>,
    sigma2: f64,
    prefer: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let tol = residual_tol(dist, sigma2);
    let mut x = x0.clone();
    let mut r = f64::INFINITY;
    let mut kick = 1e-4 * sigma2.sqrt();
    let mut last_dir: Option<DVector<f64>> = prefer.cloned();
    for it in 0..ASCENT_MAX_ITER {
        let s = score_vector(dist, &x, sigma2)?;
        r = s.norm();
        if r <= tol {
            if is_negative_definite(dist, &x, sigma2)? || kick > 1e3 * dist.data_scale() {
                return Ok(x);
            }
            let jac = score_at(dist, &x, sigma2)?.jacobian;
            let (_, vecs) = sorted_symmetric_eigen(&jac)?;
            let mut v = vecs.column(vecs.ncols() - 1).into_owned();
            if last_dir.as_ref().is_some_and(|d| d.dot(&v) < 0.0) {
                v = -v;
            }
            x.axpy(kick, &v, 1.0);
            last_dir = Some(v);
            kick *= 2.0;
            continue;
        }
        if it % 16 == 0 && is_negative_definite(dist, &x, sigma2)? {
            if let Ok(polished) = newton(dist, &x, sigma2) {
                if is_negative_definite(dist, &polished, sigma2)?
                    && log_density(dist, &polished, sigma2)? >= log_density(dist, &x, sigma2)? - 1e-12
                {
                    return Ok(polished);
                }
            }
        }
        x.axpy(sigma2, &s, 1.0);
    }
    Err(Error::NoConvergence {
        iterations: ASCENT_MAX_ITER,
        residual: r,
    })
}

/// Solves ∇log p_t(x*) = 0 near `x_init`: damped Newton first, then the
/// self-consistency iteration as fallback. May return a saddle.
pub fn solve_fixed_point(
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    x_init: &DVector<f64>,
    t: f64,
) -> Result<FixedPointNode> {
    let sigma2 = positive_sigma2(schedule, t)?;
    let x = match newton(dist, x_init, sigma2) {
        Ok(x) => x,
        Err(_) => ascend(dist, x_init, sigma2)?,
    };
    Ok(FixedPointNode::build(dist, x, t, sigma2)?.0)
}

/// Climbs from `x_init` to a local maximum of p_t (a stable fixed point).
pub fn find_mode(
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    x_init: &DVector<f64>,
    t: f64,
) -> Result<FixedPointNode> {
    let sigma2 = positive_sigma2(schedule, t)?;
    let x = ascend(dist, x_init, sigma2)?;
    Ok(FixedPointNode::build(dist, x, t, sigma2)?.0)
}

fn positive_sigma2(schedule: &NoiseSchedule, t: f64) -> Result<f64> {
    let s = schedule.sigma2(t)?;
    if s > 0.0 {
        Ok(s)
    } else {
        Err(Error::Domain {
            what: "t",
            value: t,
            domain: "(0, t_max]".into(),
        })
    }
}

/// Two hill-climbing endpoints belong to the same mode unless log p_t dips
/// below both endpoint values on the segment joining them. Near a
/// degenerate maximum the climb stalls at slightly different points, which
/// this merges.
pub fn same_mode(dist: &DataDistribution, a: &DVector<f64>, b: &DVector<f64>, sigma2: f64) -> Result<bool> {
    let d = (a - b).norm();
    if d <= 1e-9 * dist.data_scale() {
        return Ok(true);
    }
    let la = log_density(dist, a, sigma2)?;
    let lb = log_density(dist, b, sigma2)?;
    let floor = la.min(lb);
    let tol = 1e-12 * (1.0 + floor.abs());
    const N: usize = 32;
    for i in 1..N {
        let f = i as f64 / N as f64;
        let x = a * (1.0 - f) + b * f;
        if log_density(dist, &x, sigma2)? < floor - tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Distinct modes reached by hill climbing from every data point, with the
/// index of the mode each data point climbs to.
/// Gaussian data have the single mode at the mean.
pub fn mode_census(
    dist: &DataDistribution,
    sigma2: f64,
) -> Result<(Vec<DVector<f64>>, Vec<usize>)> {
    let mut modes: Vec<DVector<f64>> = Vec::new();
    let mut assign = Vec::new();
    let seeds: Vec<DVector<f64>> = match dist.as_mixture() {
        Some(m) => m.points().to_vec(),
        None => vec![dist.mean()],
    };
    let n_points = dist.as_mixture().map_or(0, |m| m.len());
    for (j, seed) in seeds.iter().enumerate() {
        let m = ascend(dist, seed, sigma2)?;
        let mut found = None;
        for (i, q) in modes.iter().enumerate() {
            if same_mode(dist, q, &m, sigma2)? {
                found = Some(i);
                break;
            }
        }
        let idx = match found {
            Some(i) => i,
            None => {
                modes.push(m);
                modes.len() - 1
            }
        };
        if j < n_points {
            assign.push(idx);
        }
    }
    Ok((modes, assign))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    Continuous,
    Jump,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchEvent {
    pub t_branch: f64,
    pub sigma2_branch: f64,
    pub parent_path: usize,
    pub child_paths: Vec<usize>,
    pub kind: BranchKind,
    /// Unit separation direction between the children (continuous) or from
    /// the parent to the new root (jump).
    pub direction: Vec<f64>,
    /// Distance from the parent to the nearest child when first resolved.
    pub gap: f64,
    /// Parent's largest Jacobian eigenvalue at `t_branch`.
    pub parent_critical_eigenvalue: f64,
    /// Parent position at `t_branch`.
    pub parent_x: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointPath {
    pub id: usize,
    pub parent: Option<usize>,
    /// Ordered by decreasing t (the sweep direction).
    pub nodes: Vec<FixedPointNode>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FixedPointTree {
    pub distribution: DistributionSpec,
    pub schedule: NoiseSchedule,
    /// Swept σ² values, decreasing.
    pub sigma2_grid: Vec<f64>,
    pub paths: Vec<FixedPointPath>,
    pub branch_events: Vec<BranchEvent>,
    /// For mixtures: `classes[k][j]` is the path whose mode data point j
    /// climbs to at grid index k.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<Vec<usize>>,
}

impl FixedPointTree {
    /// Paths still alive at the last grid point.
    pub fn leaves(&self) -> Vec<&FixedPointPath> {
        let last = *self.sigma2_grid.last().expect("non-empty grid");
        self.paths
            .iter()
            .filter(|p| p.nodes.last().is_some_and(|n| n.sigma2 == last))
            .collect()
    }

    pub fn continuous_events(&self) -> impl Iterator<Item = &BranchEvent> {
        self.branch_events.iter().filter(|e| e.kind == BranchKind::Continuous)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat CSV: `path_id, t, sigma2, x_1..x_D, stable, lambda_max`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.paths.first().map(|p| p.nodes[0].x.len()).unwrap_or(0);
        let mut header = vec!["path_id".to_string(), "t".into(), "sigma2".into()];
        header.extend((1..=d).map(|i| format!("x_{i}")));
        header.push("stable".into());
        header.push("lambda_max".into());
        w.write_record(&header)?;
        for p in &self.paths {
            for n in &p.nodes {
                let mut row = vec![p.id.to_string(), float(n.t), float(n.sigma2)];
                row.extend(n.x.iter().map(|v| float(*v)));
                row.push(n.stable.to_string());
                row.push(float(n.critical_eigenvalue()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TreeOptions {
    pub grid: StepGrid,
    /// A warm-started solve that moves more than `jump_factor` times the
    /// grid-predicted drift is a jump.
    pub jump_factor: f64,
}

impl Default for TreeOptions {
    fn default() -> Self {
        TreeOptions {
            grid: StepGrid::Geometric,
            jump_factor: 3.0,
        }
    }
}

#[derive(Clone)]
struct Active {
    path: usize,
    x: DVector<f64>,
    drift: f64,
}

/// Sweeps t from `t_hi` down to `t_lo` over `n_grid` points and records the
/// paths of stable fixed points and their branch events.
pub fn trace_tree(
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    t_hi: f64,
    t_lo: f64,
    n_grid: usize,
) -> Result<FixedPointTree> {
    trace_tree_with(dist, schedule, t_hi, t_lo, n_grid, TreeOptions::default())
}

pub fn trace_tree_with(
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    t_hi: f64,
    t_lo: f64,
    n_grid: usize,
    opts: TreeOptions,
) -> Result<FixedPointTree> {
    if n_grid < 2 {
        return Err(Error::invalid("n_grid", "must be >= 2"));
    }
    if !(t_hi > t_lo) {
        return Err(Error::invalid("trace_tree", "t_hi must exceed t_lo"));
    }
    let s_hi = positive_sigma2(schedule, t_hi)?;
    let s_lo = positive_sigma2(schedule, t_lo)?;
    let grid: Vec<f64> = {
        let n = n_grid - 1;
        (0..=n)
            .map(|k| match k {
                0 => s_hi,
                k if k == n => s_lo,
                k => {
                    let f = k as f64 / n as f64;
                    match opts.grid {
                        StepGrid::Geometric => s_hi * (s_lo / s_hi).powf(f),
                        StepGrid::Uniform => s_hi + (s_lo - s_hi) * f,
                    }
                }
            })
            .collect()
    };
    let times: Vec<f64> = grid
        .iter()
        .enumerate()
        .map(|(k, s)| match k {
            0 => Ok(t_hi),
            k if k == n_grid - 1 => Ok(t_lo),
            _ => schedule.time_of(*s),
        })
        .collect::<Result<_>>()?;

    let is_mixture = dist.as_mixture().is_some();

    let (modes, assign) = mode_census(dist, s_hi)?;
    if modes.len() != 1 {
        return Err(Error::invalid(
            "t_hi",
            format!(
                "{} modes at sigma2 = {s_hi}; start the sweep at larger noise so a single fixed point remains",
                modes.len()
            ),
        ));
    }
    let (root, _) = FixedPointNode::build(dist, modes[0].clone(), t_hi, s_hi)?;
    let mut paths = vec![FixedPointPath {
        id: 0,
        parent: None,
        nodes: vec![root],
    }];
    let mut events = Vec::new();
    let mut classes = Vec::new();
    if is_mixture {
        classes.push(assign.iter().map(|_| 0).collect::<Vec<_>>());
    }
    let mut active = vec![Active {
        path: 0,
        x: modes[0].clone(),
        drift: 0.0,
    }];

    for k in 1..n_grid {
        let (t, s2, s_prev) = (times[k], grid[k], grid[k - 1]);
        let allowance = |drift: f64| opts.jump_factor * drift.max((3.0 * (s_prev - s2).abs()).sqrt());
        let mut next: Vec<Active> = Vec::new();
        let mut ended: Vec<(usize, DVector<f64>)> = Vec::new();

        let current = std::mem::take(&mut active);
        for (i, a) in current.iter().enumerate() {
            let pending = &current[i + 1..];
            let tracked = newton(dist, &a.x, s2).or_else(|_| ascend(dist, &a.x, s2));
            let moved = tracked.as_ref().map(|x| (x - &a.x).norm()).unwrap_or(f64::INFINITY);
            let limit = allowance(a.drift);

            if let Some(x) = tracked.as_ref().ok().filter(|_| moved <= limit) {
                let (node, vecs) = FixedPointNode::build(dist, x.clone(), t, s2)?;
                // Hysteresis: keep tracking through the marginal band so
                // children are spawned only once they have separated.
                if node.stable || node.critical_eigenvalue() < BRANCH_THRESHOLD / s2 {
                    paths[a.path].nodes.push(node);
                    next.push(Active {
                        path: a.path,
                        x: x.clone(),
                        drift: moved,
                    });
                    continue;
                }
                // Lost stability: continuous branching, unless the warm
                // start merely hopped onto a nearby saddle.
                let known: Vec<Active> = next.iter().chain(pending).cloned().collect();
                let Some(ev) = continuous_branch(
                    dist, schedule, a, x, &node.eigenvalues, &vecs, s_prev, s2, t, limit, &mut paths, &known,
                )?
                else {
                    let climbed = ascend(dist, &a.x, s2)?;
                    let moved = (&climbed - &a.x).norm();
                    if moved <= limit {
                        let (node, _) = FixedPointNode::build(dist, climbed.clone(), t, s2)?;
                        paths[a.path].nodes.push(node);
                        next.push(Active {
                            path: a.path,
                            x: climbed,
                            drift: moved,
                        });
                    } else {
                        ended.push((a.path, a.x.clone()));
                    }
                    continue;
                };
                for &c in &ev.child_paths {
                    if !next.iter().chain(pending).any(|n| n.path == c) {
                        let pos = paths[c].nodes.last().unwrap().position();
                        next.push(Active {
                            path: c,
                            x: pos,
                            drift: 0.0,
                        });
                    }
                }
                events.push(ev);
                continue;
            }
            // The warm start snapped far away (or failed): the root vanished.
            ended.push((a.path, a.x.clone()));
        }

        for (parent, parent_x) in ended {
            let landing = ascend(dist, &parent_x, s2)?;
            let child = match find_tracked(dist, &next, &landing, s2)? {
                Some(p) => p,
                None => {
                    let id = new_path(&mut paths, dist, landing.clone(), t, s2, Some(parent))?;
                    next.push(Active {
                        path: id,
                        x: landing.clone(),
                        drift: 0.0,
                    });
                    id
                }
            };
            let gap = (&landing - &parent_x).norm();
            events.push(BranchEvent {
                t_branch: t,
                sigma2_branch: s2,
                parent_path: parent,
                child_paths: vec![child],
                kind: BranchKind::Jump,
                direction: unit(&(&landing - &parent_x)),
                gap,
                parent_critical_eigenvalue: paths[parent].nodes.last().unwrap().critical_eigenvalue(),
                parent_x: parent_x.iter().copied().collect(),
            });
        }

        if is_mixture {
            let prev_classes = classes.last().cloned().unwrap_or_default();
            let (modes, assign) = mode_census(dist, s2)?;
            let mut mode_path = vec![usize::MAX; modes.len()];
            for (mi, m) in modes.iter().enumerate() {
                if let Some(p) = find_tracked(dist, &next, m, s2)? {
                    mode_path[mi] = p;
                }
            }
            for (mi, m) in modes.iter().enumerate() {
                if mode_path[mi] != usize::MAX {
                    continue;
                }
                // A mode no tracked path leads to: born at finite distance.
                let members: Vec<usize> = (0..assign.len()).filter(|&j| assign[j] == mi).collect();
                let parent = members
                    .first()
                    .and_then(|&j| prev_classes.get(j).copied())
                    .filter(|p| next.iter().any(|n| n.path == *p))
                    .unwrap_or_else(|| nearest_active(&next, m));
                let parent_x = next.iter().find(|n| n.path == parent).map(|n| n.x.clone()).unwrap();
                let gap = (m - &parent_x).norm();
                let limit = allowance(next.iter().find(|n| n.path == parent).map(|n| n.drift).unwrap_or(0.0));
                // Next to a parent that is still strictly stable, a new mode
                // can only come from a saddle-node birth.
                let parent_lam = paths[parent].nodes.last().unwrap().critical_eigenvalue();
                let marginal = parent_lam * s2 >= -CRITICAL_TOL.sqrt();
                let id = new_path(&mut paths, dist, m.clone(), t, s2, Some(parent))?;
                events.push(BranchEvent {
                    t_branch: t,
                    sigma2_branch: s2,
                    parent_path: parent,
                    child_paths: vec![id],
                    kind: if marginal && gap <= limit {
                        BranchKind::Continuous
                    } else {
                        BranchKind::Jump
                    },
                    direction: unit(&(m - &parent_x)),
                    gap,
                    parent_critical_eigenvalue: parent_lam,
                    parent_x: parent_x.iter().copied().collect(),
                });
                mode_path[mi] = id;
                next.push(Active {
                    path: id,
                    x: m.clone(),
                    drift: 0.0,
                });
            }
            classes.push(assign.iter().map(|&mi| mode_path[mi]).collect());
        }
        active = next;
    }

    Ok(FixedPointTree {
        distribution: dist.spec(),
        schedule: schedule.clone(),
        sigma2_grid: grid,
        paths,
        branch_events: events,
        classes,
    })
}

fn unit(v: &DVector<f64>) -> Vec<f64> {
    let n = v.norm();
    if n > 0.0 {
        (v / n).iter().copied().collect()
    } else {
        v.iter().copied().collect()
    }
}

fn find_tracked(dist: &DataDistribution, active: &[Active], x: &DVector<f64>, sigma2: f64) -> Result<Option<usize>> {
    for a in active {
        if same_mode(dist, &a.x, x, sigma2)? {
            return Ok(Some(a.path));
        }
    }
    Ok(None)
}

fn nearest_active(active: &[Active], x: &DVector<f64>) -> usize {
    active
        .iter()
        .min_by(|a, b| (&a.x - x).norm().total_cmp(&(&b.x - x).norm()))
        .map(|a| a.path)
        .expect("at least one active path")
}

fn new_path(
    paths: &mut Vec<FixedPointPath>,
    dist: &DataDistribution,
    x: DVector<f64>,
    t: f64,
    sigma2: f64,
    parent: Option<usize>,
) -> Result<usize> {
    let id = paths.len();
    let (node, _) = FixedPointNode::build(dist, x, t, sigma2)?;
    paths.push(FixedPointPath {
        id,
        parent,
        nodes: vec![node],
    });
    Ok(id)
}

/// Top Jacobian eigenvalue along the Newton continuation from `x`.
fn critical_along(dist: &DataDistribution, x: &DVector<f64>, sigma2: f64) -> Result<(DVector<f64>, f64)> {
    let xs = newton(dist, x, sigma2)?;
    let jac = score_at(dist, &xs, sigma2)?.jacobian;
    let (vals, _) = sorted_symmetric_eigen(&jac)?;
    Ok((xs, vals[vals.len() - 1]))
}

#[allow(clippy::too_many_arguments)]
fn continuous_branch(
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    parent: &Active,
    x_unstable: &DVector<f64>,
    vals: &[f64],
    vecs: &DMatrix<f64>,
    s_prev: f64,
    s2: f64,
    t: f64,
    limit: f64,
    paths: &mut Vec<FixedPointPath>,
    tracked: &[Active],
) -> Result<Option<BranchEvent>> {
    // Bisection for the σ² at which the top eigenvalue crosses zero.
    let (mut hi, mut lo) = (s_prev, s2);
    let mut x_c = parent.x.clone();
    for _ in 0..80 {
        if (hi - lo) <= 1e-14 * hi {
            break;
        }
        let mid = 0.5 * (hi + lo);
        let (xm, lam) = critical_along(dist, &x_c, mid)?;
        x_c = xm;
        if lam < 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let s_c = 0.5 * (hi + lo);
    let (x_c, lam_c) = critical_along(dist, &x_c, s_c)?;
    if lam_c.abs() * s_c > CRITICAL_TOL {
        // The Newton continuation jumped between roots rather than passing
        // through a degenerate one.
        return Ok(None);
    }
    let t_c = schedule.time_of(s_c)?;
    let (crit_node, _) = FixedPointNode::build(dist, x_c.clone(), t_c, s_c)?;
    paths[parent.path].nodes.push(crit_node);

    // Every unstable direction, so degenerate (symmetric) splits yield all
    // their children at once.
    let unstable: Vec<usize> = (0..vals.len())
        .rev()
        .filter(|&i| i + 1 == vals.len() || vals[i] * s2 > BRANCH_THRESHOLD)
        .collect();
    let delta = 1e-4 * s2.sqrt();
    let mut children: Vec<(usize, DVector<f64>)> = Vec::new();
    for (i, sign) in unstable.iter().flat_map(|&i| [(i, 1.0), (i, -1.0)]) {
        let dir = vecs.column(i) * sign;
        let start = x_unstable + &dir * delta;
        let m = ascend_toward(dist, &start, s2, Some(&dir))?;
        let mut dup = false;
        for (_, c) in &children {
            dup |= same_mode(dist, c, &m, s2)?;
        }
        if dup {
            continue;
        }
        let id = match find_tracked(dist, tracked, &m, s2)? {
            Some(p) => p,
            None => new_path(paths, dist, m.clone(), t, s2, Some(parent.path))?,
        };
        children.push((id, m));
    }
    if children.len() < 2 && children.iter().all(|(_, c)| (c - x_unstable).norm() <= limit) {
        let grid_hint = ((s_prev / s2).ln().abs().recip() * 4.0).ceil() as usize;
        return Err(Error::GridTooCoarse {
            sigma2: s_c,
            suggested_n_grid: grid_hint.max(2),
        });
    }
    let gap = children
        .iter()
        .map(|(_, c)| (c - &x_c).norm())
        .fold(f64::INFINITY, f64::min);
    let far = children
        .iter()
        .map(|(_, c)| (c - &x_c).norm())
        .fold(0.0, f64::max);
    let direction = if children.len() >= 2 {
        unit(&(&children[0].1 - &children[1].1))
    } else {
        unit(&(&children[0].1 - &x_c))
    };
    Ok(Some(BranchEvent {
        t_branch: t_c,
        sigma2_branch: s_c,
        parent_path: parent.path,
        child_paths: children.iter().map(|(id, _)| *id).collect(),
        kind: if far <= limit {
            BranchKind::Continuous
        } else {
            BranchKind::Jump
        },
        direction,
        gap,
        parent_critical_eigenvalue: lam_c,
        parent_x: x_c.iter().copied().collect(),
    }))
}

/// Offsets t_c − t, relative to t_c, sampled log-uniformly for the
/// critical-exponent fit.
#[derive(Clone, Copy, Debug)]
pub struct CriticalWindow {
    pub min_rel_offset: f64,
    pub max_rel_offset: f64,
    pub n_points: usize,
}

impl Default for CriticalWindow {
    fn default() -> Self {
        CriticalWindow {
            min_rel_offset: 1e-4,
            max_rel_offset: 1e-2,
            n_points: 12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalFit {
    pub exponent: f64,
    pub amplitude: f64,
    /// RMS residual of the log-log fit.
    pub fit_residual: f64,
    pub n_points: usize,
}

/// Fits ‖child(t) − parent(t)‖ ≈ A·(t_c − t)^β just below a continuous
/// branch event and returns β, A and the fit residual.
pub fn critical_exponent(
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    tree: &FixedPointTree,
    event_index: usize,
    window: CriticalWindow,
) -> Result<CriticalFit> {
    let event = tree.branch_events.get(event_index).ok_or_else(|| {
        Error::Unsupported(format!(
            "no branch event {event_index} (tree has {})",
            tree.branch_events.len()
        ))
    })?;
    if event.kind != BranchKind::Continuous || event.child_paths.len() < 2 {
        return Err(Error::Unsupported(
            "critical exponent needs a continuous two-child branch event".into(),
        ));
    }
    let t_c = event.t_branch;
    let x_c = DVector::from_column_slice(&event.parent_x);
    let v = DVector::from_column_slice(&event.direction);
    let s_c = event.sigma2_branch;
    let floor = dist.sigma2_floor();

    let mut log_dt = Vec::new();
    let mut log_d = Vec::new();
    let n = window.n_points.max(1);
    for i in 0..n {
        let f = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
        let rel = window.min_rel_offset * (window.max_rel_offset / window.min_rel_offset).powf(f);
        let dt = rel * t_c;
        let t = t_c - dt;
        if t <= 0.0 {
            continue;
        }
        let s2 = schedule.sigma2(t)?;
        if s2 < floor {
            continue;
        }
        let Ok(parent) = newton(dist, &x_c, s2) else {
            continue;
        };
        let guess = &parent + &v * (3.0 * (s_c - s2)).max(0.0).sqrt();
        let child = match newton(dist, &guess, s2) {
            Ok(c) if is_negative_definite(dist, &c, s2)? && (&c - &parent).dot(&v) > 0.0 => c,
            _ => match ascend_toward(dist, &(&parent + &v * (1e-4 * s2.sqrt())), s2, Some(&v)) {
                Ok(c) => c,
                Err(_) => continue,
            },
        };
        let d = (&child - &parent).norm();
        if d > 0.0 && d.is_finite() {
            log_dt.push(dt.ln());
            log_d.push(d.ln());
        }
    }
    if log_dt.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "{} usable points below t_c (need 5)",
            log_dt.len()
        )));
    }
    let m = log_dt.len() as f64;
    let mx = log_dt.iter().sum::<f64>() / m;
    let my = log_d.iter().sum::<f64>() / m;
    let sxx: f64 = log_dt.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = log_dt.iter().zip(&log_d).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (log_dt
        .iter()
        .zip(&log_d)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    Ok(CriticalFit {
        exponent: slope,
        amplitude: intercept.exp(),
        fit_residual: rms,
        n_points: log_dt.len(),
    })
}

/// Summed posterior weight of each equivalence class at `x`.
pub fn class_weights(
    dist: &DataDistribution,
    x: &DVector<f64>,
    sigma2: f64,
    classes: &[usize],
) -> Result<std::collections::BTreeMap<usize, f64>> {
    let mix = dist
        .as_mixture()
        .ok_or_else(|| Error::Unsupported("class weights need a point-mass mixture".into()))?;
    let log_w = mixture_log_weights(mix, x, sigma2);
    let mut out = std::collections::BTreeMap::new();
    for (c, lw) in classes.iter().zip(log_w) {
        *out.entry(*c).or_insert(0.0) += lw.exp();
    }
    Ok(out)
}

/// Roots of the Curie–Weiss self-consistency equation x = tanh((x + φ)/σ²).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurieWeissSolution {
    pub sigma2: f64,
    pub phi: f64,
    /// Ascending.
    pub magnetizations: Vec<f64>,
    /// Stable when the map's slope sech²((x+φ)/σ²)/σ² is below 1.
    pub stabilities: Vec<bool>,
}

pub fn curie_weiss_solve(sigma2: f64, phi: f64) -> Result<CurieWeissSolution> {
    if !(sigma2.is_finite() && sigma2 > 0.0) || !phi.is_finite() {
        return Err(Error::Domain {
            what: "sigma2",
            value: sigma2,
            domain: "(0, inf) with finite phi".into(),
        });
    }
    let f = |x: f64| x - ((x + phi) / sigma2).tanh();
    // f is monotone between the points where sech²((x+φ)/σ²) = σ².
    let (lo, hi) = (-1.0 - phi.abs(), 1.0 + phi.abs());
    let mut cuts = vec![lo];
    if sigma2 < 1.0 {
        let u = (1.0 / sigma2.sqrt()).acosh();
        for c in [-u * sigma2 - phi, u * sigma2 - phi] {
            if c > lo && c < hi {
                cuts.push(c);
            }
        }
    }
    cuts.push(hi);
    let mut roots: Vec<f64> = Vec::new();
    for w in cuts.windows(2) {
        let (mut a, mut b) = (w[0], w[1]);
        let (fa, fb) = (f(a), f(b));
        if fa == 0.0 {
            roots.push(a);
            continue;
        }
        if fa.signum() == fb.signum() {
            continue;
        }
        let mut exact = None;
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid == a || mid == b {
                break;
            }
            let fm = f(mid);
            if fm == 0.0 {
                exact = Some(mid);
                break;
            }
            if (fm < 0.0) == (fa < 0.0) {
                a = mid;
            } else {
                b = mid;
            }
        }
        roots.push(exact.unwrap_or(if f(a).abs() <= f(b).abs() { a } else { b }));
    }
    if f(hi) == 0.0 {
        roots.push(hi);
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let stabilities = roots
        .iter()
        .map(|x| {
            let c = ((x + phi) / sigma2).cosh();
            1.0 / (c * c * sigma2) < 1.0
        })
        .collect();
    Ok(CurieWeissSolution {
        sigma2,
        phi,
        magnetizations: roots,
        stabilities,
    })
}
