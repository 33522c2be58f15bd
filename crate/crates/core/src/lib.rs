pub mod error;
pub mod lattice;
pub mod sum;
pub mod green;
pub mod jointlaw;
pub mod rng;
pub mod walk;
pub mod stats;
pub mod heavylab;
pub mod io;
pub mod experiment;
pub mod verify;
pub mod cli;
