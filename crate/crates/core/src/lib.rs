//! Hybrid-precoding mmWave massive MIMO link simulator with NOMA user
//! grouping and SWIPT power splitting.
//!
//! The pipeline per trial: [`channel`] draws multipath channels,
//! [`clustering`] picks cluster heads and groups users onto beams,
//! [`precoding`] builds the analog and zero-forcing digital stages,
//! [`optimizer`] jointly allocates power and splitting factors (on top of
//! the conic solver in [`cone`]), and [`link`] evaluates rates, harvested
//! energy and energy efficiency. [`harness`] runs sweeps and writes CSV.

pub mod channel;
pub mod clustering;
pub mod cone;
pub mod config;
pub mod harness;
pub mod link;
pub mod optimizer;
pub mod precoding;

pub use config::{Architecture, MultipleAccess, RateMinPolicy, SystemConfig};
pub use harness::{run_sweep, run_trial, Scenario, SweepResult, SweepSpec};
pub use link::{PowerSolution, TrialMetrics};
