//! System parameters shared by every stage of the pipeline.
//!
//! A [`SystemConfig`] is immutable once built. It is read from JSON with the
//! same snake_case field names as the struct, and unknown keys are rejected.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Power drawn by one RF chain, watts.
pub const P_RF: f64 = 0.3;
/// Power drawn by one phase shifter, watts.
pub const P_PS: f64 = 0.04;
/// Baseband processing power, watts.
pub const P_BB: f64 = 0.2;

/// How the per-user rate floor is produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMinPolicy {
    /// `fraction` times the weakest user rate of a fully-digital ZF
    /// reference with equal power and an even split.
    FractionOfDigitalMin(f64),
    /// The same floor, in bps/Hz, for every user.
    Absolute(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    FullyConnected,
    SubConnected,
    FullyDigital,
}

impl Architecture {
    pub fn label(self) -> &'static str {
        match self {
            Architecture::FullyConnected => "full",
            Architecture::SubConnected => "sub",
            Architecture::FullyDigital => "digital",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultipleAccess {
    Noma,
    Oma,
}

impl MultipleAccess {
    pub fn label(self) -> &'static str {
        match self {
            MultipleAccess::Noma => "noma",
            MultipleAccess::Oma => "oma",
        }
    }
}

impl fmt::Display for MultipleAccess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Every scalar parameter of the downlink scenario.
///
/// Powers and noise variances are in watts, antenna spacings in wavelengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n_antennas: usize,
    pub n_horizontal: usize,
    pub n_vertical: usize,
    pub n_rf: usize,
    pub n_beams: usize,
    pub n_users: usize,
    pub quant_bits: u32,
    pub total_power: f64,
    pub noise_var: f64,
    pub splitter_noise_var: f64,
    pub eh_efficiency: f64,
    pub eh_min: f64,
    pub rate_min_policy: RateMinPolicy,
    pub architecture: Architecture,
    pub multiple_access: MultipleAccess,
    pub antenna_spacing_h: f64,
    pub antenna_spacing_v: f64,
    pub n_paths: usize,
    pub los_gain_var: f64,
    pub nlos_gain_var: f64,
    pub chs_threshold_init: f64,
    pub max_iterations: usize,
    pub solver_tolerance: f64,
}

impl SystemConfig {
    /// The reference scenario: a 64-element horizontal ULA with 4 RF chains
    /// serving 6 users at 0 dB SNR.
    pub fn baseline() -> Self {
        let total_power = 0.030;
        SystemConfig {
            n_antennas: 64,
            n_horizontal: 64,
            n_vertical: 1,
            n_rf: 4,
            n_beams: 4,
            n_users: 6,
            quant_bits: 4,
            total_power,
            noise_var: total_power,
            splitter_noise_var: total_power,
            eh_efficiency: 0.6,
            eh_min: 1e-4,
            rate_min_policy: RateMinPolicy::FractionOfDigitalMin(0.1),
            architecture: Architecture::FullyConnected,
            multiple_access: MultipleAccess::Noma,
            antenna_spacing_h: 0.5,
            antenna_spacing_v: 0.5,
            n_paths: 3,
            los_gain_var: 1.0,
            nlos_gain_var: 0.1,
            chs_threshold_init: 0.5,
            max_iterations: 10,
            solver_tolerance: 1e-7,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Antennas per RF chain in the sub-connected layout.
    pub fn antennas_per_rf(&self) -> usize {
        self.n_antennas / self.n_rf
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.total_power / self.noise_var).log10()
    }

    /// Copy with the thermal noise set for the given SNR (`P_t / noise_var`).
    ///
    /// The splitter noise keeps its ratio to the thermal noise.
    pub fn with_snr_db(&self, snr_db: f64) -> Self {
        let ratio = self.splitter_noise_var / self.noise_var;
        let noise_var = self.total_power / 10f64.powf(snr_db / 10.0);
        SystemConfig {
            noise_var,
            splitter_noise_var: ratio * noise_var,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let mut check = |ok: bool, field: &'static str, message: String| {
            if !ok {
                report.violations.push(Violation { field, message });
            }
        };

        for (field, value) in [
            ("n_antennas", self.n_antennas),
            ("n_horizontal", self.n_horizontal),
            ("n_vertical", self.n_vertical),
            ("n_rf", self.n_rf),
            ("n_beams", self.n_beams),
            ("n_users", self.n_users),
            ("n_paths", self.n_paths),
            ("max_iterations", self.max_iterations),
        ] {
            check(value >= 1, field, format!("{field} must be positive"));
        }
        check(self.quant_bits >= 1, "quant_bits", "quant_bits must be positive".into());
        check(
            self.quant_bits <= 24,
            "quant_bits",
            "quant_bits above 24 is not supported".into(),
        );
        check(
            self.n_antennas == self.n_horizontal * self.n_vertical,
            "n_antennas",
            format!(
                "N \u{2260} N1\u{b7}N2 ({} \u{2260} {}\u{b7}{})",
                self.n_antennas, self.n_horizontal, self.n_vertical
            ),
        );
        check(
            self.n_beams == self.n_rf,
            "n_beams",
            format!("G = N_RF required ({} vs {})", self.n_beams, self.n_rf),
        );
        check(
            self.n_users >= self.n_beams,
            "n_users",
            format!("K \u{2265} G required ({} < {})", self.n_users, self.n_beams),
        );
        check(
            self.n_rf <= self.n_antennas,
            "n_rf",
            "N_RF cannot exceed N".into(),
        );
        if self.architecture == Architecture::SubConnected && self.n_rf > 0 {
            check(
                self.n_antennas.is_multiple_of(self.n_rf),
                "n_rf",
                format!("N mod N_RF must be 0 ({} mod {})", self.n_antennas, self.n_rf),
            );
        }
        if self.architecture == Architecture::FullyDigital {
            check(
                self.n_users <= self.n_antennas,
                "n_users",
                "fully-digital ZF needs K \u{2264} N".into(),
            );
        }

        for (field, value) in [
            ("total_power", self.total_power),
            ("noise_var", self.noise_var),
            ("splitter_noise_var", self.splitter_noise_var),
            ("los_gain_var", self.los_gain_var),
            ("nlos_gain_var", self.nlos_gain_var),
            ("solver_tolerance", self.solver_tolerance),
        ] {
            check(
                value.is_finite() && value > 0.0,
                field,
                format!("{field} must be finite and > 0"),
            );
        }
        check(
            self.eh_min.is_finite() && self.eh_min >= 0.0,
            "eh_min",
            "eh_min must be \u{2265} 0".into(),
        );
        check(
            (0.0..=1.0).contains(&self.eh_efficiency),
            "eh_efficiency",
            "eh_efficiency must lie in [0, 1]".into(),
        );
        check(
            self.chs_threshold_init > 0.0 && self.chs_threshold_init < 1.0,
            "chs_threshold_init",
            "chs_threshold_init must lie in (0, 1)".into(),
        );
        for (field, value) in [
            ("antenna_spacing_h", self.antenna_spacing_h),
            ("antenna_spacing_v", self.antenna_spacing_v),
        ] {
            check(value.is_finite(), field, format!("{field} must be finite"));
        }
        match self.rate_min_policy {
            RateMinPolicy::FractionOfDigitalMin(f) => check(
                f.is_finite() && f >= 0.0,
                "rate_min_policy",
                "fraction must be finite and \u{2265} 0".into(),
            ),
            RateMinPolicy::Absolute(r) => check(
                r.is_finite() && r >= 0.0,
                "rate_min_policy",
                "absolute floor must be finite and \u{2265} 0".into(),
            ),
        }
        report
    }
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self::baseline()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_field(&self, field: &str) -> bool {
        self.violations.iter().any(|v| v.field == field)
    }

    pub fn into_result(self) -> Result<(), ConfigError> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", v.field, v.message)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(ValidationReport),
    #[error("malformed configuration JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
