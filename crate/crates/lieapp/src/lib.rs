pub mod catalog;
pub mod cli;
pub mod io;
pub mod conserved;
pub mod gauge;
pub mod legendre;
pub mod error;
pub mod minkowski;
pub mod transforms;
