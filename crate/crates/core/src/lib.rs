//! Simulation, geometry, language, ground-truth and evaluation layers of the
//! language-guided navigation stack.

pub mod geometry;
pub mod raster;
pub mod worldsim;
pub mod route;
pub mod command;
pub mod navctl;
pub mod oracle;
pub mod metrics;
pub mod datastore;
