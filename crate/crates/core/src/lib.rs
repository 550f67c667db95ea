//! Spectral curvature clustering for hybrid linear modeling.
//!
//! Points sampled near `K` affine `d`-flats are segmented by building a
//! `(d+2)`-way affinity tensor from polar curvatures, collapsing it to the
//! `N x N` weight matrix `W = A A'`, and running K-means on the top
//! eigenvectors of the normalized weights.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`curvature`] | simplex volume, polar sine, polar curvature, `c_dls`, `c_h` |
//! | [`affinity`] | affinity values, streamed `W`, perfect-tensor closed forms |
//! | [`spectral`] | normalization, eigen-embedding, row normalizations, K-means, pipeline |
//! | [`diagnostics`] | TV, projector distance, principal angles, separation factor, bound constants |
//! | [`modelgen`] | mixture samplers, named measures, least-squares flats, dataset I/O |
//! | [`incidence`] | Monte Carlo curvature moments, incidence constants, closed-form bounds |

pub mod affinity;
pub mod curvature;
pub mod diagnostics;
mod error;
pub mod incidence;
mod linalg;
pub mod modelgen;
mod partition;
pub mod spectral;

pub use error::{Error, Result};
pub use partition::Partition;
