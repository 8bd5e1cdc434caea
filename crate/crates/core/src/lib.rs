#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod assets;
pub mod backends;
pub mod config;
pub mod dialogue;
pub mod domain;
pub mod engine;
pub mod log;
pub mod metrics;
pub mod replay;
pub mod rng;
pub mod scheduler;
pub mod sim;
pub mod store;
pub mod time;
