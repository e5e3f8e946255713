//! Joint power allocation and power splitting.
//!
//! The sum rate is maximized by alternating between closed-form updates of
//! the MMSE equalizers `c` and weights `a = 1/e°` and a convex subproblem in
//! `(p, β)` solved by [`crate::cone`]. Each pass can only increase the true
//! sum rate, so the iteration is an ascent method.
//!
//! Subproblem variables per user, scaled by the power budget `P_t`:
//! `[p̂, q̂, β, τ, μ̂]` with `q̂² ≤ p̂`, `τβ ≥ 1` and `μ̂(1-β) ≥ P_min/(ηP_t)`.

use std::f64::consts::LN_2;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::channel::{ChannelSet, C64};
use crate::clustering::GroupingPlan;
use crate::cone::{self, ConeProblem, ConeSpec, ConeStatus, Matrix, Settings, Vector};
use crate::config::{MultipleAccess, RateMinPolicy, SystemConfig};
use crate::link::{LinkModel, PowerSolution, TrialMetrics};
use crate::precoding::{fully_digital, HybridPrecoder, PrecodingError};

/// Margin keeping β inside the open unit interval.
pub const BETA_MARGIN: f64 = 1e-6;

const VARS_PER_USER: usize = 5;
const P: usize = 0;
const Q: usize = 1;
const BETA: usize = 2;
const TAU: usize = 3;
const MU: usize = 4;

const PHASE1_EXIT: f64 = -1e-3;
const PHASE1_FEASIBLE: f64 = 1e-6;
const MAX_SOLVER_ITERATIONS: usize = 100;

/// Data of one convex subproblem: the link, the fixed auxiliaries and the
/// per-user floors.
#[derive(Debug, Clone)]
pub struct SubproblemSpec {
    pub link: LinkModel,
    pub a: Vec<f64>,
    pub c: Vec<C64>,
    pub rate_min: Vec<f64>,
    pub eh_min: Vec<f64>,
    pub budget: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub solution: PowerSolution,
    pub subproblem_objective: f64,
    pub residuals: Residuals,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizeError {
    #[error("power subproblem infeasible at iteration {iteration}")]
    Infeasible { iteration: usize },
    #[error("cone solver failed at iteration {iteration}")]
    NumericalFailure { iteration: usize },
}

/// One row of the per-iteration trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub sum_rate: f64,
    pub min_rate_slack: f64,
    pub min_eh_slack: f64,
}

#[derive(Debug, Clone)]
pub struct JointOutcome {
    pub solution: PowerSolution,
    pub metrics: TrialMetrics,
    pub records: Vec<IterationRecord>,
}

/// `c = (√p h̄ᴴd)* / (p‖h̄ᴴd‖² + ξ)`.
pub fn equalizer(link: &LinkModel, user: usize, p: &[f64], beta: f64) -> C64 {
    let u = link.own_coupling(user);
    let signal = p[user] * link.own_gain(user);
    (u * p[user].sqrt()).conj() / (signal + link.interference_term(user, p, beta))
}

/// MSE with a given equalizer: `1 - 2Re(c√p u) + |c|²(pG + ξ)`.
pub fn mse(link: &LinkModel, user: usize, p: &[f64], beta: f64, c: C64) -> f64 {
    let u = link.own_coupling(user);
    let total = p[user] * link.own_gain(user) + link.interference_term(user, p, beta);
    1.0 - 2.0 * (c * u * p[user].sqrt()).re + c.norm_sqr() * total
}

/// MSE at the optimal equalizer, `1 - pG/(pG + ξ)`.
pub fn minimum_mse(link: &LinkModel, user: usize, p: &[f64], beta: f64) -> f64 {
    let signal = p[user] * link.own_gain(user);
    1.0 - signal / (signal + link.interference_term(user, p, beta))
}

pub fn update_c(link: &LinkModel, sol: &PowerSolution) -> Vec<C64> {
    (0..link.n_users())
        .map(|k| equalizer(link, k, &sol.p, sol.beta[k]))
        .collect()
}

pub fn update_a(link: &LinkModel, sol: &PowerSolution) -> Vec<f64> {
    (0..link.n_users())
        .map(|k| 1.0 / minimum_mse(link, k, &sol.p, sol.beta[k]))
        .collect()
}

/// Lower bound on `-log2 e` that is tight at `a = 1/e`.
pub fn rate_surrogate(a: f64, e: f64) -> f64 {
    -a * e / LN_2 + a.log2() + 1.0 / LN_2
}

impl SubproblemSpec {
    pub fn n_users(&self) -> usize {
        self.link.n_users()
    }

    /// SINR target `ω = 2^{R_min/share} - 1` for the user's rate floor.
    pub fn omega(&self, user: usize) -> f64 {
        (self.rate_min[user] / self.link.share(user)).exp2() - 1.0
    }

    /// Objective weight `a · share`.
    pub fn weight(&self, user: usize) -> f64 {
        self.a[user] * self.link.share(user)
    }

    /// `Σ_k a_k share_k e_k(p, β)` with `c` fixed; the quantity the
    /// subproblem minimizes once `τ = 1/β` and `q = √p`.
    pub fn weighted_mse(&self, p: &[f64], beta: &[f64]) -> f64 {
        (0..self.n_users())
            .map(|k| self.weight(k) * mse(&self.link, k, p, beta[k], self.c[k]))
            .sum()
    }

    /// Whether `(p, β)` meets the budget and every floor, through the exact
    /// rate and harvested-energy expressions, up to relative slack `rel`.
    pub fn satisfies_constraints(&self, p: &[f64], beta: &[f64], rel: f64) -> bool {
        let budget_ok = p.iter().all(|&x| x >= -rel * self.budget)
            && p.iter().sum::<f64>() <= self.budget * (1.0 + rel);
        let beta_ok = beta.iter().all(|&b| b > 0.0 && b < 1.0);
        budget_ok
            && beta_ok
            && (0..self.n_users()).all(|k| {
                let r = self.link.rate(k, p, beta[k]);
                let eh = self.link.harvested_energy(k, p, beta[k]);
                r >= self.rate_min[k] * (1.0 - rel) && eh >= self.eh_min[k] * (1.0 - rel)
            })
    }
}

fn idx(user: usize, var: usize) -> usize {
    user * VARS_PER_USER + var
}

/// Linear coefficients of `received_power(k, p̂)` in the scaled powers.
fn received_row(link: &LinkModel, user: usize) -> Vec<(usize, f64)> {
    (0..link.n_users())
        .map(|j| (idx(j, P), link.gain(user, link.beam_of[j])))
        .collect()
}

/// Coefficients of `G_k Σ_{j ∈ I_k} p̂_j + inter_k(p̂)` (interference powers).
fn interference_row(link: &LinkModel, user: usize) -> Vec<(usize, f64)> {
    let g = link.beam_of[user];
    let mut row: Vec<(usize, f64)> = link
        .intra_interferers(user)
        .iter()
        .map(|&j| (idx(j, P), link.own_gain(user)))
        .collect();
    for j in 0..link.n_users() {
        if link.beam_of[j] != g {
            row.push((idx(j, P), link.gain(user, link.beam_of[j])));
        }
    }
    row
}

struct Rows {
    g: Vec<Vec<(usize, f64)>>,
    h: Vec<f64>,
    /// Row may be relaxed during phase 1.
    relaxable: Vec<bool>,
}

impl Rows {
    fn push(&mut self, row: Vec<(usize, f64)>, h: f64, relaxable: bool) {
        self.g.push(row);
        self.h.push(h);
        self.relaxable.push(relaxable);
    }
}

struct Formulation {
    problem: ConeProblem,
    relaxable: Vec<bool>,
    /// Constant part of the objective and its normalization factor.
    constant: f64,
    scale: f64,
}

fn formulate(spec: &SubproblemSpec) -> Formulation {
    let link = &spec.link;
    let k_users = spec.n_users();
    let n = k_users * VARS_PER_USER;
    let pt = spec.budget;
    let sv = link.noise_var / pt;
    let su = link.splitter_noise_var / pt;

    // objective Σ w (1 - 2Re(cu)√Pt q̂ + |c|²Pt(G Σ_{j≤m} p̂ + inter + σ̂_u²τ + share σ̂_v²))
    let mut obj = vec![0.0; n];
    let mut constant = 0.0;
    for k in 0..k_users {
        let w = spec.weight(k);
        let cu = (spec.c[k] * link.own_coupling(k)).re.max(0.0);
        let c2 = spec.c[k].norm_sqr() * pt;
        constant += w * (1.0 + c2 * link.share(k) * sv);
        obj[idx(k, Q)] -= 2.0 * w * cu * pt.sqrt();
        obj[idx(k, P)] += w * c2 * link.own_gain(k);
        for (j, v) in interference_row(link, k) {
            obj[j] += w * c2 * v;
        }
        obj[idx(k, TAU)] += w * c2 * su;
    }
    let scale = obj.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);

    let mut rows = Rows {
        g: Vec::new(),
        h: Vec::new(),
        relaxable: Vec::new(),
    };
    for k in 0..k_users {
        rows.push(vec![(idx(k, P), -1.0)], 0.0, false);
    }
    rows.push((0..k_users).map(|k| (idx(k, P), 1.0)).collect(), 1.0, false);
    for k in 0..k_users {
        let omega = spec.omega(k);
        if omega > 0.0 {
            // ω(interference + σ̂_u²τ) - G p̂ ≤ -ω share σ̂_v²
            let mut row: Vec<(usize, f64)> = interference_row(link, k)
                .into_iter()
                .map(|(j, v)| (j, omega * v))
                .collect();
            row.push((idx(k, P), -link.own_gain(k)));
            row.push((idx(k, TAU), omega * su));
            rows.push(row, -omega * link.share(k) * sv, true);
        }
    }
    for k in 0..k_users {
        // μ̂ ≤ received + σ̂_v²
        let mut row: Vec<(usize, f64)> = received_row(link, k)
            .into_iter()
            .map(|(j, v)| (j, -v))
            .collect();
        row.push((idx(k, MU), 1.0));
        rows.push(row, sv, true);
    }
    for k in 0..k_users {
        rows.push(vec![(idx(k, BETA), -1.0)], -BETA_MARGIN, false);
        rows.push(vec![(idx(k, BETA), 1.0)], 1.0 - BETA_MARGIN, false);
        rows.push(vec![(idx(k, TAU), 1.0)], 2.0 / BETA_MARGIN, false);
    }
    let nonneg = rows.g.len();

    for k in 0..k_users {
        // (p̂ + 1, p̂ - 1, 2q̂)
        rows.push(vec![(idx(k, P), -1.0)], 1.0, false);
        rows.push(vec![(idx(k, P), -1.0)], -1.0, false);
        rows.push(vec![(idx(k, Q), -2.0)], 0.0, false);
        // (τ + β, τ - β, 2)
        rows.push(vec![(idx(k, TAU), -1.0), (idx(k, BETA), -1.0)], 0.0, false);
        rows.push(vec![(idx(k, TAU), -1.0), (idx(k, BETA), 1.0)], 0.0, false);
        rows.push(vec![], 2.0, false);
        // (μ̂ + 1 - β, μ̂ - 1 + β, 2√r̂)
        let r_hat = spec.eh_min[k] / (link.eh_efficiency * pt);
        rows.push(vec![(idx(k, MU), -1.0), (idx(k, BETA), 1.0)], 1.0, false);
        rows.push(vec![(idx(k, MU), -1.0), (idx(k, BETA), -1.0)], -1.0, false);
        rows.push(vec![], 2.0 * r_hat.sqrt(), false);
    }

    let m = rows.g.len();
    let mut g = Matrix::zeros(m, n);
    for (i, row) in rows.g.iter().enumerate() {
        for &(j, v) in row {
            g[(i, j)] += v;
        }
    }
    Formulation {
        problem: ConeProblem {
            c: Vector::from_vec(obj) / scale,
            g,
            h: Vector::from_vec(rows.h),
            cones: ConeSpec {
                nonneg,
                soc: vec![3; 3 * k_users],
            },
        },
        relaxable: rows.relaxable,
        constant,
        scale,
    }
}

fn hand_start(spec: &SubproblemSpec) -> Vector {
    let k_users = spec.n_users();
    let mut x = Vector::zeros(k_users * VARS_PER_USER);
    for k in 0..k_users {
        let p = 0.5 / k_users as f64;
        let r_hat = spec.eh_min[k] / (spec.link.eh_efficiency * spec.budget);
        x[idx(k, P)] = p;
        x[idx(k, Q)] = 0.5 * p.sqrt();
        x[idx(k, BETA)] = 0.5;
        x[idx(k, TAU)] = 4.0;
        x[idx(k, MU)] = 4.0 * r_hat + 1.0;
    }
    x
}

enum PhaseOne {
    Feasible(Vector),
    Infeasible,
    Failed,
}

/// Minimizes a uniform relaxation `ζ` of the link rows; the rows are
/// jointly satisfiable iff `ζ* ≤ 0`.
fn phase_one(form: &Formulation, spec: &SubproblemSpec) -> PhaseOne {
    let base = &form.problem;
    let (m, n) = base.g.shape();
    let nonneg = base.cones.nonneg;
    let mut g = Matrix::zeros(m + 1, n + 1);
    let mut h = Vector::zeros(m + 1);
    // the extra `-ζ ≤ 1` row goes last among the orthant rows
    for i in 0..m {
        let dst = if i < nonneg { i } else { i + 1 };
        g.view_mut((dst, 0), (1, n)).copy_from(&base.g.row(i));
        h[dst] = base.h[i];
        if form.relaxable[i] {
            g[(dst, n)] = -base.g.row(i).norm().max(1.0);
        }
    }
    g[(nonneg, n)] = -1.0;
    h[nonneg] = 1.0;
    let cones = ConeSpec {
        nonneg: nonneg + 1,
        soc: base.cones.soc.clone(),
    };

    let x_hand = hand_start(spec);
    let mut x0 = Vector::zeros(n + 1);
    x0.rows_mut(0, n).copy_from(&x_hand);
    let slack = &base.h - &base.g * &x_hand;
    let mut zeta = 0.0f64;
    for i in 0..m {
        if form.relaxable[i] {
            zeta = zeta.max(-slack[i] / base.g.row(i).norm().max(1.0));
        }
    }
    x0[n] = zeta + 1.0;

    let mut c = Vector::zeros(n + 1);
    c[n] = 1.0;
    let problem = ConeProblem { c, g, h, cones };
    let settings = Settings {
        tolerance: spec.tolerance,
        max_iterations: MAX_SOLVER_ITERATIONS,
    };
    let stop = |x: &Vector| x[n] < PHASE1_EXIT;
    let sol = cone::solve(&problem, Some(&x0), &settings, Some(&stop));
    let zeta = sol.x[n];
    let x = sol.x.rows(0, n).clone_owned();
    match sol.status {
        _ if zeta <= PHASE1_FEASIBLE => PhaseOne::Feasible(x),
        ConeStatus::Optimal => PhaseOne::Infeasible,
        _ => PhaseOne::Failed,
    }
}

/// Maps a scaled solver point back to physical units, lifting β to the
/// largest value the energy floor allows (never worse for the objective).
fn polish(spec: &SubproblemSpec, x: &Vector) -> PowerSolution {
    let link = &spec.link;
    let k_users = spec.n_users();
    let mut p: Vec<f64> = (0..k_users)
        .map(|k| x[idx(k, P)].max(0.0) * spec.budget)
        .collect();
    let total: f64 = p.iter().sum();
    if total > spec.budget {
        p.iter_mut().for_each(|v| *v *= spec.budget / total);
    }
    let mut beta = Vec::with_capacity(k_users);
    let mut mu = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let available = link.received_power(k, &p) + link.noise_var;
        let required = spec.eh_min[k] / link.eh_efficiency;
        beta.push((1.0 - required / available).clamp(BETA_MARGIN, 1.0 - BETA_MARGIN));
        mu.push(available);
    }
    let mut sol = PowerSolution::new(p, beta);
    sol.mu = mu;
    sol.a = spec.a.clone();
    sol.c = spec.c.clone();
    sol
}

fn failed(spec: &SubproblemSpec, status: SolveStatus) -> SolveOutcome {
    let k = spec.n_users();
    SolveOutcome {
        status,
        solution: PowerSolution::equal_split(k, spec.budget, 0.5),
        subproblem_objective: f64::NAN,
        residuals: Residuals::default(),
    }
}

/// Solves the convex subproblem for fixed `a`, `c`.
pub fn solve_power_subproblem(spec: &SubproblemSpec) -> SolveOutcome {
    let form = formulate(spec);
    let start = match phase_one(&form, spec) {
        PhaseOne::Feasible(x) => x,
        PhaseOne::Infeasible => return failed(spec, SolveStatus::Infeasible),
        PhaseOne::Failed => return failed(spec, SolveStatus::NumericalFailure),
    };
    let settings = Settings {
        tolerance: spec.tolerance,
        max_iterations: MAX_SOLVER_ITERATIONS,
    };
    let sol = cone::solve(&form.problem, Some(&start), &settings, None);
    let residuals = Residuals {
        primal: sol.primal_residual,
        dual: sol.dual_residual,
        gap: sol.gap / sol.primal_objective.abs().max(1.0),
    };
    if sol.status != ConeStatus::Optimal {
        log::debug!(
            "cone solver stopped with {:?} after {} iterations ({residuals:?})",
            sol.status,
            sol.iterations
        );
        return SolveOutcome {
            residuals,
            ..failed(spec, SolveStatus::NumericalFailure)
        };
    }
    let solution = polish(spec, &sol.x);
    log::trace!(
        "subproblem solved in {} iterations, solver objective {}",
        sol.iterations,
        sol.primal_objective * form.scale + form.constant
    );
    SolveOutcome {
        status: SolveStatus::Optimal,
        subproblem_objective: spec.weighted_mse(&solution.p, &solution.beta),
        solution,
        residuals,
    }
}

fn record(spec: &SubproblemSpec, sol: &PowerSolution, iteration: usize) -> IterationRecord {
    let link = &spec.link;
    let k_users = spec.n_users();
    let rates = link.rates(sol);
    let eh = link.harvested(sol);
    IterationRecord {
        iteration,
        sum_rate: rates.iter().sum(),
        min_rate_slack: (0..k_users)
            .map(|k| rates[k] - spec.rate_min[k])
            .fold(f64::INFINITY, f64::min),
        min_eh_slack: (0..k_users)
            .map(|k| eh[k] - spec.eh_min[k])
            .fold(f64::INFINITY, f64::min),
    }
}

/// Alternates the closed-form updates with the convex subproblem for
/// exactly `max_iterations` passes, starting from equal power and β = 0.5.
pub fn joint_optimize_link(
    link: &LinkModel,
    cfg: &SystemConfig,
    rate_min: &[f64],
) -> Result<JointOutcome, OptimizeError> {
    let k_users = link.n_users();
    let mut sol = PowerSolution::equal_split(k_users, cfg.total_power, 0.5);
    let mut records = Vec::with_capacity(cfg.max_iterations);
    let mut trace = Vec::with_capacity(cfg.max_iterations);
    let mut spec = SubproblemSpec {
        link: link.clone(),
        a: Vec::new(),
        c: Vec::new(),
        rate_min: rate_min.to_vec(),
        eh_min: vec![cfg.eh_min; k_users],
        budget: cfg.total_power,
        tolerance: cfg.solver_tolerance,
    };
    for t in 1..=cfg.max_iterations {
        spec.c = update_c(link, &sol);
        spec.a = update_a(link, &sol);
        let outcome = solve_power_subproblem(&spec);
        match outcome.status {
            SolveStatus::Optimal => sol = outcome.solution,
            SolveStatus::Infeasible => return Err(OptimizeError::Infeasible { iteration: t }),
            SolveStatus::NumericalFailure if t == 1 => {
                return Err(OptimizeError::NumericalFailure { iteration: t })
            }
            SolveStatus::NumericalFailure => {
                log::warn!("subproblem failed at iteration {t}; keeping previous solution");
            }
        }
        let rec = record(&spec, &sol, t);
        trace.push(rec.sum_rate);
        records.push(rec);
    }
    sol.objective_trace = trace;
    let metrics = link.metrics(&sol, cfg, true);
    Ok(JointOutcome {
        solution: sol,
        metrics,
        records,
    })
}

/// [`joint_optimize_link`] on the link defined by a precoder and grouping.
pub fn joint_optimize(
    pre: &HybridPrecoder,
    plan: &GroupingPlan,
    cfg: &SystemConfig,
    rate_min: &[f64],
) -> Result<JointOutcome, OptimizeError> {
    joint_optimize_link(&LinkModel::new(pre, plan, cfg), cfg, rate_min)
}

/// Per-user rate floors under the configured policy. The fractional policy
/// scales the minimum user rate of fully-digital ZF with equal power and
/// β = 0.5 on the same channels.
pub fn compute_rate_floor(cfg: &SystemConfig, channels: &ChannelSet) -> Result<Vec<f64>, PrecodingError> {
    let k = channels.n_users();
    match cfg.rate_min_policy {
        RateMinPolicy::Absolute(r) => Ok(vec![r; k]),
        RateMinPolicy::FractionOfDigitalMin(fraction) => {
            if fraction == 0.0 {
                return Ok(vec![0.0; k]);
            }
            let (pre, plan) = fully_digital(channels)?;
            let link = LinkModel::new(
                &pre,
                &plan,
                &SystemConfig {
                    multiple_access: MultipleAccess::Noma,
                    ..cfg.clone()
                },
            );
            let sol = PowerSolution::equal_split(k, cfg.total_power, 0.5);
            let r_min = link.rates(&sol).into_iter().fold(f64::INFINITY, f64::min);
            Ok(vec![fraction * r_min; k])
        }
    }
}

/// CSV with columns `iteration,sum_rate,min_rate_slack,min_eh_slack`.
pub fn write_trace_csv<W: Write>(records: &[IterationRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(["iteration", "sum_rate", "min_rate_slack", "min_eh_slack"])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_user(coupling: f64, noise: f64, splitter: f64) -> LinkModel {
        LinkModel::from_coupling(
            vec![vec![C64::new(coupling, 0.0)]],
            vec![vec![0]],
            noise,
            splitter,
            0.6,
            MultipleAccess::Noma,
        )
    }

    fn random_link(rng: &mut ChaCha8Rng, beams: Vec<Vec<usize>>, access: MultipleAccess) -> LinkModel {
        let k: usize = beams.iter().map(Vec::len).sum();
        let g = beams.len();
        let coupling = (0..k)
            .map(|_| {
                (0..g)
                    .map(|_| C64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
                    .collect()
            })
            .collect();
        let link = LinkModel::from_coupling(coupling, beams, 0.03, 0.03, 0.6, access);
        // SIC order: strongest own gain first
        let mut beams = link.beams.clone();
        for beam in &mut beams {
            beam.sort_by(|&a, &b| link.own_gain(b).total_cmp(&link.own_gain(a)));
        }
        LinkModel::from_coupling(link.coupling, beams, 0.03, 0.03, 0.6, access)
    }

    fn spec_at(link: &LinkModel, sol: &PowerSolution, rate_min: f64, eh_min: f64, budget: f64) -> SubproblemSpec {
        SubproblemSpec {
            link: link.clone(),
            a: update_a(link, sol),
            c: update_c(link, sol),
            rate_min: vec![rate_min; link.n_users()],
            eh_min: vec![eh_min; link.n_users()],
            budget,
            tolerance: 1e-7,
        }
    }

    #[test]
    fn equalizer_and_weight_examples() {
        // G = 1, ξ = 2 through σ_v² alone
        let link = single_user(1.0, 2.0, 0.0);
        let sol = PowerSolution::new(vec![4.0], vec![0.5]);
        let c = update_c(&link, &sol);
        assert!((c[0] - C64::new(1.0 / 3.0, 0.0)).norm() < 1e-15);
        let e = mse(&link, 0, &sol.p, 0.5, c[0]);
        assert!((e - 1.0 / 3.0).abs() < 1e-15);
        assert!((update_a(&link, &sol)[0] - 3.0).abs() < 1e-12);

        let zero = PowerSolution::new(vec![0.0], vec![0.5]);
        assert_eq!(update_c(&link, &zero)[0], C64::new(0.0, 0.0));
        assert_eq!(update_a(&link, &zero)[0], 1.0);
    }

    #[test]
    fn mmse_and_surrogate_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let link = random_link(&mut rng, vec![vec![0, 1], vec![2, 3, 4]], MultipleAccess::Noma);
            let p: Vec<f64> = (0..5).map(|_| rng.random_range(0.001..0.01)).collect();
            let beta: Vec<f64> = (0..5).map(|_| rng.random_range(0.05..0.95)).collect();
            let sol = PowerSolution::new(p.clone(), beta.clone());
            let c = update_c(&link, &sol);
            let a = update_a(&link, &sol);
            for k in 0..5 {
                let sinr = link.sinr(k, &p, beta[k]);
                let e = mse(&link, k, &p, beta[k], c[k]);
                assert!((1.0 / (1.0 + sinr) - e).abs() <= 1e-10);
                assert!((rate_surrogate(a[k], e) + e.log2()).abs() <= 1e-9);
                assert!((rate_surrogate(a[k], e) - (1.0 + sinr).log2()).abs() <= 1e-9);
                // any other equalizer does worse
                let other = c[k] * C64::new(1.1, 0.05);
                assert!(mse(&link, k, &p, beta[k], other) >= e);
            }
        }
    }

    /// Dense search over (p, β) for one user with all power available.
    fn grid_single(spec: &SubproblemSpec, steps: usize) -> f64 {
        let mut best = f64::INFINITY;
        for i in 1..=steps {
            let p = [spec.budget * i as f64 / steps as f64];
            for j in 1..steps {
                let beta = [j as f64 / steps as f64];
                if spec.satisfies_constraints(&p, &beta, 0.0) {
                    best = best.min(spec.weighted_mse(&p, &beta));
                }
            }
        }
        best
    }

    #[test]
    fn single_user_matches_grid() {
        let link = single_user(1.0, 0.1, 0.1);
        let start = PowerSolution::equal_split(1, 1.0, 0.5);
        for eh_min in [0.0, 0.2] {
            let spec = spec_at(&link, &start, 0.0, eh_min, 1.0);
            let out = solve_power_subproblem(&spec);
            assert_eq!(out.status, SolveStatus::Optimal);
            assert!((out.solution.p[0] - 1.0).abs() < 1e-6);
            let b = out.solution.beta[0];
            assert!(b > 0.0 && b < 1.0);
            let grid = grid_single(&spec, 400);
            assert!(out.subproblem_objective <= grid * 1.0000001);
            assert!((out.subproblem_objective - grid).abs() / grid < 0.01);
            assert!(out.residuals.primal <= 1e-7 && out.residuals.dual <= 1e-7 && out.residuals.gap <= 1e-7);
        }
    }

    #[test]
    fn unreachable_energy_floor_is_infeasible() {
        let link = single_user(1.0, 0.1, 0.1);
        let start = PowerSolution::equal_split(1, 1.0, 0.5);
        // P_min/η = 2 > P_t·G + σ_v² = 1.1
        let spec = spec_at(&link, &start, 0.0, 1.2, 1.0);
        assert_eq!(solve_power_subproblem(&spec).status, SolveStatus::Infeasible);
    }

    #[test]
    fn far_out_of_reach_energy_floor_is_infeasible() {
        let link = single_user(1.0, 0.1, 0.1);
        let start = PowerSolution::equal_split(1, 1.0, 0.5);
        for eh in [1.2, 10.0, 100.0, 1e4] {
            let spec = spec_at(&link, &start, 0.0, eh, 1.0);
            assert_eq!(solve_power_subproblem(&spec).status, SolveStatus::Infeasible, "{eh}");
        }
    }

    #[test]
    fn unreachable_rate_floor_is_infeasible() {
        let link = single_user(1.0, 0.1, 0.1);
        let start = PowerSolution::equal_split(1, 1.0, 0.5);
        // even β → 1 caps the SINR at 1/0.2 = 5
        let spec = spec_at(&link, &start, 3.0, 0.0, 1.0);
        assert_eq!(solve_power_subproblem(&spec).status, SolveStatus::Infeasible);
    }

    #[test]
    fn beta_hits_upper_bound_without_splitter_noise() {
        let link = single_user(1.0, 0.1, 0.0);
        let start = PowerSolution::equal_split(1, 1.0, 0.5);
        let spec = spec_at(&link, &start, 0.0, 0.0, 1.0);
        let out = solve_power_subproblem(&spec);
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!(out.solution.beta[0] >= 1.0 - 10.0 * spec.tolerance);
    }

    fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let x1 = hi - r * (hi - lo);
            let x2 = lo + r * (hi - lo);
            if f(x1) > f(x2) {
                hi = x2;
            } else {
                lo = x1;
            }
        }
        f((lo + hi) / 2.0)
    }

    #[test]
    fn single_user_rate_matches_golden_section() {
        let cfg = SystemConfig {
            n_users: 1,
            n_beams: 1,
            n_rf: 1,
            eh_min: 1e-4,
            ..SystemConfig::baseline()
        };
        let link = LinkModel::from_coupling(
            vec![vec![C64::new(0.8, -0.6)]],
            vec![vec![0]],
            cfg.noise_var,
            cfg.splitter_noise_var,
            cfg.eh_efficiency,
            MultipleAccess::Noma,
        );
        let out = joint_optimize_link(&link, &cfg, &[0.0]).unwrap();
        let p = [cfg.total_power];
        // largest β meeting the energy floor, found by bisection
        let (mut lo, mut hi) = (1e-9, 1.0 - 1e-9);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if link.harvested_energy(0, &p, mid) >= cfg.eh_min {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = golden_section(|b| link.rate(0, &p, b), 1e-9, lo);
        let got = out.metrics.sum_rate;
        assert!((got - oracle).abs() / oracle < 0.005, "{got} vs {oracle}");
        assert_eq!(out.solution.objective_trace.len(), cfg.max_iterations);
    }

    #[test]
    fn ascent_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = SystemConfig::baseline();
        let mut feasible = 0;
        for case in 0..30 {
            let access = if case % 2 == 0 { MultipleAccess::Noma } else { MultipleAccess::Oma };
            let link = random_link(&mut rng, vec![vec![0, 1, 2], vec![3, 4], vec![5]], access);
            let Ok(out) = joint_optimize_link(&link, &cfg, &[0.01; 6]) else {
                continue;
            };
            feasible += 1;
            let trace = &out.solution.objective_trace;
            for w in trace.windows(2) {
                assert!(w[1] >= w[0] - 10.0 * cfg.solver_tolerance * w[0].max(1.0), "{trace:?}");
            }
            let spec = SubproblemSpec {
                link: link.clone(),
                a: out.solution.a.clone(),
                c: out.solution.c.clone(),
                rate_min: vec![0.01; 6],
                eh_min: vec![cfg.eh_min; 6],
                budget: cfg.total_power,
                tolerance: cfg.solver_tolerance,
            };
            assert!(spec.satisfies_constraints(&out.solution.p, &out.solution.beta, 1e-6));
        }
        assert!(feasible >= 20, "only {feasible} feasible");
    }

    #[test]
    fn rate_floor_policies() {
        let cfg = SystemConfig {
            rate_min_policy: RateMinPolicy::Absolute(0.25),
            ..SystemConfig::baseline()
        };
        let channels = crate::channel::generate_scenario(1, &cfg);
        assert_eq!(compute_rate_floor(&cfg, &channels).unwrap(), vec![0.25; 6]);
        let zero = SystemConfig {
            rate_min_policy: RateMinPolicy::FractionOfDigitalMin(0.0),
            ..cfg.clone()
        };
        assert_eq!(compute_rate_floor(&zero, &channels).unwrap(), vec![0.0; 6]);
        let frac = SystemConfig::baseline();
        let floors = compute_rate_floor(&frac, &channels).unwrap();
        assert!(floors.iter().all(|&r| r > 0.0 && r == floors[0]));
    }

    #[test]
    fn trace_csv_layout() {
        let rec = IterationRecord {
            iteration: 1,
            sum_rate: 2.5,
            min_rate_slack: 0.1,
            min_eh_slack: 0.0,
        };
        let mut buf = Vec::new();
        write_trace_csv(&[rec], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("iteration,sum_rate,min_rate_slack,min_eh_slack"));
        assert_eq!(text.lines().count(), 2);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn surrogate_never_exceeds_rate(
            seed in 0u64..1000,
            a_scale in 0.2f64..5.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let link = random_link(&mut rng, vec![vec![0, 1], vec![2]], MultipleAccess::Noma);
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..0.01)).collect();
            let beta: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..0.95)).collect();
            let sol = PowerSolution::new(p.clone(), beta.clone());
            let c = update_c(&link, &sol);
            let a = update_a(&link, &sol);
            for k in 0..3 {
                let e = mse(&link, k, &p, beta[k], c[k]);
                let rate = link.rate(k, &p, beta[k]);
                proptest::prop_assert!(rate_surrogate(a[k] * a_scale, e) <= rate + 1e-12);
                proptest::prop_assert!(a[k] >= 1.0);
            }
        }
    }
}
