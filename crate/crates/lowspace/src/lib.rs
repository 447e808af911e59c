pub mod agsp;
pub mod cli;
pub mod error;
pub mod hamiltonian;
pub mod mps;
pub mod oracle;
pub mod solver;
pub mod tensor;
pub mod truncation;
pub mod verify;
pub mod viable;

pub use error::{Error, Result};
