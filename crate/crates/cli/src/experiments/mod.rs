//! One module per subcommand, plus the shared sequential driver.

pub mod driver;
pub mod gmm;
pub mod incremental;
pub mod memory;
pub mod permuted;
pub mod regression;
pub mod verify;
