//! Spatial planning: deployment-frame orientation, agent ordering along the
//! leader axis, reference weights and the separation certificate.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attitude::{local_basis, FrameAngles};
use crate::scenario::Scenario;
use crate::trajectory::TimeWindow;

/// Two coordinates closer than this along `c1` are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Optimal objective values below this are reported as degenerate.
pub const DEGENERATE_OBJECTIVE: f64 = 1e-9;

/// Default resolution of the orientation grid over `[0, pi)` per angle.
pub const DEFAULT_GRID: usize = 721;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("formation needs at least {min} agents, got {got}")]
    TooFewAgents { min: usize, got: usize },
    #[error("agents {0} and {1} share a position")]
    CoincidentAgents(usize, usize),
    #[error("degenerate formation: best separation along c1 is {0:e} m")]
    DegenerateFormation(f64),
    #[error("agents {0} and {1} are tied along c1; ordering undefined")]
    Tie(usize, usize),
    #[error("final formation is not sorted by the initial ordering (agents {0} and {1} swap)")]
    OrderingMismatch(usize, usize),
    #[error("initial and final formations have {0} and {1} agents")]
    SizeMismatch(usize, usize),
    #[error("plan not certified: margin {:.6} m (d_min {:.6} m, beta* {:.6})", .0.margin, .0.d_min, .0.beta_star)]
    InfeasiblePlan(Certificate),
    #[error("plan was built for a different scenario (hash {plan} vs {scenario})")]
    ScenarioMismatch { plan: String, scenario: String },
    #[error("grid resolution must be at least 2, got {0}")]
    BadGrid(usize),
}

/// Result of the orientation search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    pub angles: FrameAngles,
    /// Smallest pairwise separation along `c1` at `angles`.
    pub objective: f64,
}

/// Smallest pairwise separation of `points` projected on `axis`.
///
/// `scratch` is reused between calls to avoid allocation in the grid search.
fn min_projected_gap(points: &[Vector3<f64>], axis: &Vector3<f64>, scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend(points.iter().map(|p| p.dot(axis)));
    scratch.sort_unstable_by(|a, b| a.total_cmp(b));
    scratch
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
}

pub fn separation_objective(points: &[Vector3<f64>], angles: FrameAngles) -> f64 {
    let [c1, _, _] = local_basis(angles);
    min_projected_gap(points, &c1, &mut Vec::with_capacity(points.len()))
}

fn clamp_angle(a: f64) -> f64 {
    // the search domain is the half-open interval [0, pi)
    a.clamp(0.0, std::f64::consts::PI * (1.0 - f64::EPSILON))
}

/// Finds `(gamma, mu)` in `[0, pi)^2` maximizing the smallest separation of
/// the agents along `c1`: a `grid x grid` sweep followed by a Nelder-Mead
/// polish from the best cell.
pub fn optimize_orientation(points: &[Vector3<f64>], grid: usize) -> Result<Orientation, PlanError> {
    if points.len() < 2 {
        return Err(PlanError::TooFewAgents {
            min: 2,
            got: points.len(),
        });
    }
    if grid < 2 {
        return Err(PlanError::BadGrid(grid));
    }
    check_distinct(points)?;

    let step = std::f64::consts::PI / grid as f64;
    let mut scratch = Vec::with_capacity(points.len());
    let mut values = Vec::with_capacity(grid * grid);
    for ig in 0..grid {
        for im in 0..grid {
            let angles = FrameAngles::new(ig as f64 * step, im as f64 * step);
            let [c1, _, _] = local_basis(angles);
            values.push(min_projected_gap(points, &c1, &mut scratch));
        }
    }
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // lexicographically smallest (gamma, mu) within tolerance of the best
    let cell = values
        .iter()
        .position(|&v| v >= best - 1e-9)
        .expect("grid is non-empty");
    let start = [(cell / grid) as f64 * step, (cell % grid) as f64 * step];

    let mut objective = |x: [f64; 2]| {
        let [c1, _, _] = local_basis(FrameAngles::new(clamp_angle(x[0]), clamp_angle(x[1])));
        -min_projected_gap(points, &c1, &mut scratch)
    };
    let (x, fx) = nelder_mead(&mut objective, start, 0.5 * step, 400);
    let (angles, value) = if -fx > best {
        (FrameAngles::new(clamp_angle(x[0]), clamp_angle(x[1])), -fx)
    } else {
        (FrameAngles::new(start[0], start[1]), best)
    };
    if value < DEGENERATE_OBJECTIVE {
        return Err(PlanError::DegenerateFormation(value));
    }
    Ok(Orientation {
        angles,
        objective: value,
    })
}

fn check_distinct(points: &[Vector3<f64>]) -> Result<(), PlanError> {
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if points[i] == points[j] {
                return Err(PlanError::CoincidentAgents(i, j));
            }
        }
    }
    Ok(())
}

/// Minimal two-dimensional Nelder-Mead minimizer.
fn nelder_mead(
    f: &mut impl FnMut([f64; 2]) -> f64,
    start: [f64; 2],
    size: f64,
    max_iter: usize,
) -> ([f64; 2], f64) {
    let mut simplex = [
        start,
        [start[0] + size, start[1]],
        [start[0], start[1] + size],
    ];
    let mut vals = simplex.map(|p| f(p));
    let lin = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];

    for _ in 0..max_iter {
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = idx.map(|i| simplex[i]);
        vals = idx.map(|i| vals[i]);

        let spread = (simplex[1][0] - simplex[0][0])
            .abs()
            .max((simplex[1][1] - simplex[0][1]).abs())
            .max((simplex[2][0] - simplex[0][0]).abs())
            .max((simplex[2][1] - simplex[0][1]).abs());
        if spread < 1e-13 {
            break;
        }

        let centroid = lin(simplex[0], simplex[1], 0.5);
        let reflected = lin(simplex[2], centroid, 2.0);
        let fr = f(reflected);
        if fr < vals[0] {
            let expanded = lin(simplex[2], centroid, 3.0);
            let fe = f(expanded);
            if fe < fr {
                simplex[2] = expanded;
                vals[2] = fe;
            } else {
                simplex[2] = reflected;
                vals[2] = fr;
            }
        } else if fr < vals[1] {
            simplex[2] = reflected;
            vals[2] = fr;
        } else {
            let contracted = if fr < vals[2] {
                lin(centroid, reflected, 0.5)
            } else {
                lin(centroid, simplex[2], 0.5)
            };
            let fc = f(contracted);
            if fc < vals[2].min(fr) {
                simplex[2] = contracted;
                vals[2] = fc;
            } else {
                for k in 1..3 {
                    simplex[k] = lin(simplex[0], simplex[k], 0.5);
                    vals[k] = f(simplex[k]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    (simplex[best], vals[best])
}

/// Agents sorted by their coordinate along `c1` at the start of deployment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ordering {
    /// `order[k]` is the agent with rank `k` (0-based).
    pub order: Vec<usize>,
}

impl Ordering {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn first(&self) -> usize {
        self.order[0]
    }

    pub fn last(&self) -> usize {
        self.order[self.order.len() - 1]
    }

    pub fn leaders(&self) -> [usize; 2] {
        [self.first(), self.last()]
    }

    pub fn followers(&self) -> &[usize] {
        if self.order.len() <= 2 {
            &[]
        } else {
            &self.order[1..self.order.len() - 1]
        }
    }

    pub fn is_leader(&self, agent: usize) -> bool {
        agent == self.first() || agent == self.last()
    }

    /// Verifies `coords` strictly increase along this ordering.
    fn check_sorted(&self, coords: &[f64]) -> Result<(), PlanError> {
        for w in self.order.windows(2) {
            if coords[w[1]] - coords[w[0]] < TIE_TOLERANCE {
                return Err(PlanError::OrderingMismatch(w[0], w[1]));
            }
        }
        Ok(())
    }
}

pub fn order_agents(u: &[f64]) -> Result<Ordering, PlanError> {
    if u.len() < 2 {
        return Err(PlanError::TooFewAgents { min: 2, got: u.len() });
    }
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&a, &b| u[a].total_cmp(&u[b]).then(a.cmp(&b)));
    for w in order.windows(2) {
        if u[w[1]] - u[w[0]] < TIE_TOLERANCE {
            return Err(PlanError::Tie(w[0], w[1]));
        }
    }
    Ok(Ordering { order })
}

/// Normalized station of every agent between the two leaders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub start: Vec<f64>,
    #[serde(rename = "final")]
    pub end: Vec<f64>,
}

pub fn reference_weights(u_s: &[f64], u_f: &[f64], ordering: &Ordering) -> Result<WeightTable, PlanError> {
    if u_s.len() != u_f.len() || u_s.len() != ordering.len() {
        return Err(PlanError::SizeMismatch(u_s.len(), u_f.len()));
    }
    ordering.check_sorted(u_s)?;
    ordering.check_sorted(u_f)?;
    let weights = |u: &[f64]| {
        let lo = u[ordering.first()];
        let span = u[ordering.last()] - lo;
        u.iter().map(|&x| (x - lo) / span).collect::<Vec<_>>()
    };
    Ok(WeightTable {
        start: weights(u_s),
        end: weights(u_f),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub d_min: f64,
    pub beta_star: f64,
    /// `d_min * beta_star - 2 (delta + epsilon)`.
    pub margin: f64,
    pub feasible: bool,
}

impl Certificate {
    /// Guaranteed lower bound on pairwise separation along `c1`.
    pub fn separation_bound(&self) -> f64 {
        self.d_min * self.beta_star
    }
}

pub fn certify(
    u_s: &[f64],
    u_f: &[f64],
    ordering: &Ordering,
    weights: &WeightTable,
    delta: f64,
    epsilon: f64,
) -> Certificate {
    let (b1, bn) = (ordering.first(), ordering.last());
    let d_min = (u_s[bn] - u_s[b1]).min(u_f[bn] - u_f[b1]);
    // weights are sorted along the ordering at both ends, so the pairwise
    // minimum is attained by neighbours
    let beta_star = ordering
        .order
        .windows(2)
        .map(|w| {
            let ds = (weights.start[w[1]] - weights.start[w[0]]).abs();
            let df = (weights.end[w[1]] - weights.end[w[0]]).abs();
            ds.min(df)
        })
        .fold(f64::INFINITY, f64::min);
    let margin = d_min * beta_star - 2.0 * (delta + epsilon);
    Certificate {
        d_min,
        beta_star,
        margin,
        feasible: margin >= 0.0,
    }
}

/// Local `(u, v, w)` coordinates of `points` in the frame `angles`.
pub fn local_coordinates(points: &[Vector3<f64>], angles: FrameAngles) -> Vec<[f64; 3]> {
    let [c1, c2, c3] = local_basis(angles);
    points
        .iter()
        .map(|p| [p.dot(&c1), p.dot(&c2), p.dot(&c3)])
        .collect()
}

/// A certified (or explicitly uncertified) deployment plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentPlan {
    pub format: String,
    pub tool_version: String,
    pub scenario_hash: String,
    pub t_s: f64,
    pub t_f: f64,
    pub start: Orientation,
    #[serde(rename = "final")]
    pub end: Orientation,
    /// `(u, v, w)` of every agent at `t_s`.
    pub local_start: Vec<[f64; 3]>,
    /// `(u, v, w)` of every agent at `t_f`.
    pub local_final: Vec<[f64; 3]>,
    pub ordering: Ordering,
    pub weights: WeightTable,
    pub certificate: Certificate,
}

pub const PLAN_FORMAT: &str = "rtd-plan/1";

impl DeploymentPlan {
    pub fn agents(&self) -> usize {
        self.local_start.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Rejects a plan whose recorded scenario hash differs from `scenario`.
    pub fn check_scenario(&self, scenario: &Scenario) -> Result<(), PlanError> {
        let hash = scenario.planning_hash();
        if hash != self.scenario_hash {
            return Err(PlanError::ScenarioMismatch {
                plan: self.scenario_hash.clone(),
                scenario: hash,
            });
        }
        Ok(())
    }
}

/// Builds the deployment plan for a validated scenario.
///
/// Fails closed on an infeasible certificate unless the scenario allows
/// uncertified plans.
pub fn build_plan(scenario: &Scenario) -> Result<DeploymentPlan, PlanError> {
    let start_pts = scenario.relative_start_positions();
    let final_pts = scenario.relative_final_positions();
    if start_pts.len() != final_pts.len() {
        return Err(PlanError::SizeMismatch(start_pts.len(), final_pts.len()));
    }
    let grid = scenario.planner.grid;
    let start = optimize_orientation(&start_pts, grid)?;
    let end = optimize_orientation(&final_pts, grid)?;
    let local_start = local_coordinates(&start_pts, start.angles);
    let local_final = local_coordinates(&final_pts, end.angles);
    let plan = assemble_plan(
        start,
        end,
        local_start,
        local_final,
        scenario.window,
        scenario.safety.delta,
        scenario.safety.epsilon,
        scenario.planner.allow_uncertified,
        scenario.planning_hash(),
    )?;
    log::info!(
        "plan: start (gamma, mu) = ({:.4}, {:.4}) rad, final = ({:.4}, {:.4}) rad, margin {:.6} m",
        plan.start.angles.gamma,
        plan.start.angles.mu,
        plan.end.angles.gamma,
        plan.end.angles.mu,
        plan.certificate.margin
    );
    Ok(plan)
}

/// Orders, weights and certifies agents given their local coordinates at
/// both ends of the window.
#[allow(clippy::too_many_arguments)]
pub fn assemble_plan(
    start: Orientation,
    end: Orientation,
    local_start: Vec<[f64; 3]>,
    local_final: Vec<[f64; 3]>,
    window: TimeWindow,
    delta: f64,
    epsilon: f64,
    allow_uncertified: bool,
    scenario_hash: String,
) -> Result<DeploymentPlan, PlanError> {
    if local_start.len() != local_final.len() {
        return Err(PlanError::SizeMismatch(local_start.len(), local_final.len()));
    }
    let u_s: Vec<f64> = local_start.iter().map(|a| a[0]).collect();
    let u_f: Vec<f64> = local_final.iter().map(|a| a[0]).collect();
    let ordering = order_agents(&u_s)?;
    let weights = reference_weights(&u_s, &u_f, &ordering)?;
    let certificate = certify(&u_s, &u_f, &ordering, &weights, delta, epsilon);
    if !certificate.feasible && !allow_uncertified {
        return Err(PlanError::InfeasiblePlan(certificate));
    }
    Ok(DeploymentPlan {
        format: PLAN_FORMAT.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        scenario_hash,
        t_s: window.t_s,
        t_f: window.t_f,
        start,
        end,
        local_start,
        local_final,
        ordering,
        weights,
        certificate,
    })
}
