//! Suite runner and oracle commands behind the `sflsim` binary.

pub mod error;
pub mod oracles;
pub mod runner;
pub mod suite;

pub use error::{HarnessError, Result};
pub use runner::{run_suite, ConfigOutcome};
pub use suite::{DataSource, NamedConfig, Suite};
