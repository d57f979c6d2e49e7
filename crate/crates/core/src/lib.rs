pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod io;
pub mod littlewood_paley;
pub mod model_a1;
pub mod model_a2;
pub mod picard;
pub mod thermo;

pub use error::{Error, Result};
