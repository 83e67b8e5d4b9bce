//! Multiuser OTFS uplink simulation: delay-Doppler grids, OTFS modulation,
//! time-varying multipath channels with per-user timing and carrier offsets,
//! and pilot-based joint timing, CFO and channel estimation.

pub mod channel;
pub mod config;
pub mod error;
pub mod grid;
pub mod harness;
pub mod modem;
pub mod pilot;
pub mod sync;

pub use config::SystemConfig;
pub use error::{Error, Result};

pub type Cplx = num_complex::Complex64;
