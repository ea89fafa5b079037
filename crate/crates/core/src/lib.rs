pub mod bundle;
pub mod cli;
pub mod connection;
pub mod curvature;
pub mod domain;
pub mod dynamics;
pub mod error;
pub mod exprjet;
pub mod finsler;
pub mod gallery;
pub mod leaf;
pub mod linalg;
pub mod model;

pub use error::{Error, Result};
pub use model::{Model, ModelSpec};
