pub mod backend;
pub mod commander;
pub mod config;
pub mod controller;
pub mod dataset;
pub mod frontend;
pub mod loadgen;
pub mod local;
pub mod node;
pub mod registry;
pub mod scheduler;
pub mod wire;
