pub mod checkpoint;
pub mod config;
pub mod diagnostics;
pub mod diffcore;
pub mod env;
pub mod io;
pub mod policy;
pub mod rng;
pub mod trainers;
pub mod transfer;
pub mod verify;
