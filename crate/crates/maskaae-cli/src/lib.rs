//! Library surface of the command-line tool, split out so integration
//! tests can drive the orchestration layers (presets, run execution,
//! sweeps, exports) without shelling out.

pub mod config;
pub mod export;
pub mod nac;
pub mod runner;
pub mod sweep;
pub mod theorycheck;
