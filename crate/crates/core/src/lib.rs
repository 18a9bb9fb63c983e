pub mod error;
pub mod geometry;
pub mod linalg;
pub mod modal_basis;
pub mod decomposition;
pub mod par;
pub mod interpolation;
pub mod plan;
pub mod io;
pub mod pipeline;
