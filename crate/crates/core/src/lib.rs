pub mod distance;
pub mod error;
pub mod flp;
pub mod gaussian_processes;
pub mod hermite;
pub mod io;
pub mod levy;
pub mod mc_engine;
pub mod numerics;
pub mod subordinated_clt;
pub mod wiener_poisson;

pub use error::{Error, Result};
