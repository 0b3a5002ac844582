pub mod fem;
pub mod geometry;
pub mod numerics;
pub mod scenario;
pub mod cell_solver;
pub mod timestep;
pub mod macro_solver;
pub mod micro_solver;
pub mod correctors;
pub mod harness;
pub mod cli;
