//! Trajectory optimization with DDP and iLQR for rigid-body systems.
//!
//! Second-order dynamics information is provided by interchangeable
//! derivative backends; the tensor-free ones compute the costate-contracted
//! Hessian blocks with the same complexity as first-order partials.

pub mod autodiff;
pub mod ddp;
pub mod derivs;
pub mod dynamics;
pub mod problem;
pub mod rbmodel;
pub mod scalar;
pub mod spatial;

pub use scalar::Scalar;
