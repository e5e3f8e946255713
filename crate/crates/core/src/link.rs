//! SINR, achievable rate, harvested energy and energy efficiency for a
//! fixed precoder and grouping.
//!
//! Users are indexed globally (`0..K`); [`LinkModel`] knows which beam
//! each user sits in and its SIC position there (strongest first).

use serde::Serialize;

use crate::channel::C64;
use crate::clustering::GroupingPlan;
use crate::config::{Architecture, MultipleAccess, SystemConfig, P_BB, P_PS, P_RF};
use crate::precoding::HybridPrecoder;

/// Power allocation, splitting factors and the optimizer's auxiliaries,
/// all indexed by user.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerSolution {
    pub p: Vec<f64>,
    pub beta: Vec<f64>,
    pub tau: Vec<f64>,
    pub mu: Vec<f64>,
    #[serde(skip)]
    pub c: Vec<C64>,
    pub a: Vec<f64>,
    pub objective_trace: Vec<f64>,
}

impl PowerSolution {
    /// Power and splitting only; auxiliaries at their neutral values.
    pub fn new(p: Vec<f64>, beta: Vec<f64>) -> Self {
        let k = p.len();
        assert_eq!(k, beta.len());
        PowerSolution {
            tau: beta.iter().map(|b| 1.0 / b).collect(),
            mu: vec![0.0; k],
            c: vec![C64::new(0.0, 0.0); k],
            a: vec![1.0; k],
            objective_trace: Vec::new(),
            p,
            beta,
        }
    }

    pub fn equal_split(n_users: usize, total_power: f64, beta: f64) -> Self {
        Self::new(vec![total_power / n_users as f64; n_users], vec![beta; n_users])
    }

    pub fn total_power(&self) -> f64 {
        self.p.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialMetrics {
    pub per_user_rate: Vec<f64>,
    pub per_user_eh: Vec<f64>,
    pub sum_rate: f64,
    pub energy_efficiency: f64,
    pub feasible: bool,
}

impl TrialMetrics {
    /// Placeholder for trials without a usable solution.
    pub fn infeasible(n_users: usize) -> Self {
        TrialMetrics {
            per_user_rate: vec![0.0; n_users],
            per_user_eh: vec![0.0; n_users],
            sum_rate: 0.0,
            energy_efficiency: 0.0,
            feasible: false,
        }
    }
}

/// Effective downlink seen by every user after precoding.
#[derive(Debug, Clone)]
pub struct LinkModel {
    /// `h̄_kᴴ d_i`, user-major.
    pub coupling: Vec<Vec<C64>>,
    pub beams: Vec<Vec<usize>>,
    pub beam_of: Vec<usize>,
    pub position: Vec<usize>,
    pub noise_var: f64,
    pub splitter_noise_var: f64,
    pub eh_efficiency: f64,
    pub access: MultipleAccess,
}

impl LinkModel {
    pub fn new(pre: &HybridPrecoder, plan: &GroupingPlan, cfg: &SystemConfig) -> Self {
        Self::from_coupling(
            pre.coupling_matrix(),
            plan.beams.clone(),
            cfg.noise_var,
            cfg.splitter_noise_var,
            cfg.eh_efficiency,
            cfg.multiple_access,
        )
    }

    /// `beams` must already be in SIC order.
    pub fn from_coupling(
        coupling: Vec<Vec<C64>>,
        beams: Vec<Vec<usize>>,
        noise_var: f64,
        splitter_noise_var: f64,
        eh_efficiency: f64,
        access: MultipleAccess,
    ) -> Self {
        let k = coupling.len();
        let mut beam_of = vec![0; k];
        let mut position = vec![0; k];
        for (g, beam) in beams.iter().enumerate() {
            for (m, &u) in beam.iter().enumerate() {
                beam_of[u] = g;
                position[u] = m;
            }
        }
        LinkModel {
            coupling,
            beams,
            beam_of,
            position,
            noise_var,
            splitter_noise_var,
            eh_efficiency,
            access,
        }
    }

    pub fn n_users(&self) -> usize {
        self.coupling.len()
    }

    pub fn n_beams(&self) -> usize {
        self.beams.len()
    }

    /// `‖h̄_kᴴ d_i‖²`.
    pub fn gain(&self, user: usize, beam: usize) -> f64 {
        self.coupling[user][beam].norm_sqr()
    }

    /// Gain towards the user's own beam.
    pub fn own_gain(&self, user: usize) -> f64 {
        self.gain(user, self.beam_of[user])
    }

    pub fn own_coupling(&self, user: usize) -> C64 {
        self.coupling[user][self.beam_of[user]]
    }

    /// Bandwidth share: `1/|S_g|` under OMA, 1 under NOMA.
    pub fn share(&self, user: usize) -> f64 {
        match self.access {
            MultipleAccess::Noma => 1.0,
            MultipleAccess::Oma => 1.0 / self.beams[self.beam_of[user]].len() as f64,
        }
    }

    /// Users whose signals remain as intra-beam interference after SIC
    /// (the stronger ones ahead in the beam). Empty under OMA.
    pub fn intra_interferers(&self, user: usize) -> &[usize] {
        match self.access {
            MultipleAccess::Noma => &self.beams[self.beam_of[user]][..self.position[user]],
            MultipleAccess::Oma => &[],
        }
    }

    pub fn beam_power(&self, beam: usize, p: &[f64]) -> f64 {
        self.beams[beam].iter().map(|&j| p[j]).sum()
    }

    pub fn intra_power(&self, user: usize, p: &[f64]) -> f64 {
        self.intra_interferers(user).iter().map(|&j| p[j]).sum()
    }

    /// `Σ_{i≠g} ‖h̄ᴴd_i‖² Σ_j p_{i,j}`.
    pub fn inter_beam(&self, user: usize, p: &[f64]) -> f64 {
        let g = self.beam_of[user];
        (0..self.n_beams())
            .filter(|&i| i != g)
            .map(|i| self.gain(user, i) * self.beam_power(i, p))
            .sum()
    }

    /// Total received power before splitting, noise excluded.
    pub fn received_power(&self, user: usize, p: &[f64]) -> f64 {
        (0..self.n_beams())
            .map(|i| self.gain(user, i) * self.beam_power(i, p))
            .sum()
    }

    /// Interference-plus-noise `ξ` seen by the information decoder.
    ///
    /// NOMA: `‖h̄ᴴd_g‖² Σ_{j<m} p_{g,j} + inter + σ_v² + σ_u²/β`.
    /// OMA: no intra-beam term and thermal noise scaled by `1/|S_g|`.
    pub fn interference_term(&self, user: usize, p: &[f64], beta: f64) -> f64 {
        self.own_gain(user) * self.intra_power(user, p)
            + self.inter_beam(user, p)
            + self.share(user) * self.noise_var
            + self.splitter_noise_var / beta
    }

    pub fn sinr(&self, user: usize, p: &[f64], beta: f64) -> f64 {
        self.own_gain(user) * p[user] / self.interference_term(user, p, beta)
    }

    /// Achievable rate in bps/Hz (1 Hz bandwidth).
    pub fn rate(&self, user: usize, p: &[f64], beta: f64) -> f64 {
        self.share(user) * (1.0 + self.sinr(user, p, beta)).log2()
    }

    /// Rate with NOMA superposition and SIC, whatever `self.access` says.
    pub fn noma_rate(&self, user: usize, p: &[f64], beta: f64) -> f64 {
        self.with_access(MultipleAccess::Noma).rate(user, p, beta)
    }

    /// Rate with equal-bandwidth FDMA inside each beam.
    pub fn oma_rate(&self, user: usize, p: &[f64], beta: f64) -> f64 {
        self.with_access(MultipleAccess::Oma).rate(user, p, beta)
    }

    pub fn with_access(&self, access: MultipleAccess) -> LinkModel {
        LinkModel {
            access,
            ..self.clone()
        }
    }

    /// `η (1-β) (Σ_i Σ_j ‖h̄ᴴd_i‖² p_{i,j} + σ_v²)`.
    pub fn harvested_energy(&self, user: usize, p: &[f64], beta: f64) -> f64 {
        self.eh_efficiency * (1.0 - beta) * (self.received_power(user, p) + self.noise_var)
    }

    pub fn rates(&self, sol: &PowerSolution) -> Vec<f64> {
        (0..self.n_users())
            .map(|k| self.rate(k, &sol.p, sol.beta[k]))
            .collect()
    }

    pub fn harvested(&self, sol: &PowerSolution) -> Vec<f64> {
        (0..self.n_users())
            .map(|k| self.harvested_energy(k, &sol.p, sol.beta[k]))
            .collect()
    }

    pub fn sum_rate(&self, sol: &PowerSolution) -> f64 {
        sum_rate(&self.rates(sol))
    }

    pub fn metrics(&self, sol: &PowerSolution, cfg: &SystemConfig, feasible: bool) -> TrialMetrics {
        let per_user_rate = self.rates(sol);
        let sum = sum_rate(&per_user_rate);
        TrialMetrics {
            per_user_eh: self.harvested(sol),
            energy_efficiency: energy_efficiency(sum, sol.total_power(), cfg),
            sum_rate: sum,
            per_user_rate,
            feasible,
        }
    }
}

pub fn sum_rate(rates: &[f64]) -> f64 {
    rates.iter().sum()
}

/// Phase shifters needed by the architecture.
pub fn phase_shifter_count(cfg: &SystemConfig) -> usize {
    match cfg.architecture {
        Architecture::FullyConnected => cfg.n_antennas * cfg.n_rf,
        Architecture::SubConnected => cfg.n_antennas,
        Architecture::FullyDigital => 0,
    }
}

/// RF chains in use; one per antenna for fully digital.
pub fn rf_chain_count(cfg: &SystemConfig) -> usize {
    match cfg.architecture {
        Architecture::FullyDigital => cfg.n_antennas,
        _ => cfg.n_rf,
    }
}

/// Transmit plus circuit power, watts.
pub fn total_consumption(transmit_power: f64, cfg: &SystemConfig) -> f64 {
    transmit_power
        + rf_chain_count(cfg) as f64 * P_RF
        + phase_shifter_count(cfg) as f64 * P_PS
        + P_BB
}

/// Sum rate over total consumed power, bps/Hz/W.
pub fn energy_efficiency(sum_rate: f64, transmit_power: f64, cfg: &SystemConfig) -> f64 {
    sum_rate / total_consumption(transmit_power, cfg)
}
