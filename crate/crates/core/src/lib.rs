pub mod augment;
pub mod cli;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod exec;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod seeding;
pub mod verify;

pub use error::{Error, Result};
