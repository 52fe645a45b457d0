//! Command-line harness around the `pnpsplit` solver: image I/O, configuration, the external
//! denoiser client and the degrade / restore / evaluate / sweep drivers.

pub mod commands;
pub mod config;
pub mod external;
pub mod imageio;
