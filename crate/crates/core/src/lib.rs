//! Bi-fidelity data fusion.
//!
//! Fuses a large low-fidelity dataset with a handful of high-fidelity
//! samples. The pipeline builds a weighted graph over the low-fidelity
//! points, takes the low modes of a graph Laplacian, clusters the spectral
//! embedding to decide which points deserve a high-fidelity evaluation, and
//! then solves a regularized regression in the eigenfunction basis whose
//! influence functions shift every low-fidelity point toward the
//! high-fidelity truth.
//!
//! Modules follow the pipeline order:
//!
//! - [`dataset`]: points, component scaling, permutations, CSV/JSON I/O
//! - [`graph`]: Gaussian kernel weights, degrees, Laplacian normalizations
//! - [`spectral`]: low eigenpairs (dense and iterative), Fiedler vector,
//!   spectral embeddings
//! - [`selection`]: K-means over the embedding, centroid-nearest sample
//!   selection, seeded random baselines
//! - [`fusion`]: influence functions, the regularized data-fit loss, its
//!   analytic gradient, and the quasi-Newton solver
//! - [`regtune`]: regularization-weight sweeps and L-curve elbow detection
//! - [`metrics`]: relative-error reports and random-selection studies
//! - [`synthetic`]: deterministic generators for the built-in test problems

pub mod dataset;
pub mod error;
pub mod fusion;
pub mod graph;
pub mod metrics;
pub mod regtune;
pub mod rng;
pub mod selection;
pub mod spectral;
pub mod synthetic;

pub use dataset::{ComponentBounds, Dataset, Fidelity, ScalingRecord};
pub use error::{Error, Result};
pub use fusion::{FusionConfig, FusionContext, FusionModel, IterationRecord, LossBreakdown};
pub use graph::{KernelSpec, LaplacianBundle};
pub use selection::{KMeansConfig, KMeansOutcome, SelectionResult};
pub use spectral::{SpectralEmbedding, Spectrum};
