pub mod aux;
pub mod fields;
pub mod geometry;
pub mod jet;
pub mod lie;
pub mod report;
pub mod solver;
pub mod tensor;

pub use report::ResidualReport;
