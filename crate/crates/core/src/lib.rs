pub mod kernel;
pub mod data;
pub mod model;
pub mod train;
pub mod eval;
pub mod cli;
