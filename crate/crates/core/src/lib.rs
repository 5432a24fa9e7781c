//! Central-limit approximation model checking for stochastic reaction networks.

pub mod abstraction;
pub mod cli;
pub mod cla;
pub mod csl;
pub mod expr;
pub mod gauss;
pub mod lex;
pub mod model;
pub mod ode;
pub mod rewards;
pub mod ssa;
