pub mod analytics;
pub mod clock;
pub mod commands;
pub mod config;
pub mod fixtures;
pub mod guiding_agent;
pub mod inference;
pub mod level_agent;
pub mod model;
pub mod process;
pub mod session;
pub mod testing;
pub mod toolchain;
pub mod trace;
