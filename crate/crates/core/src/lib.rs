//! Multivariate vital-sign time-series clustering.
//!
//! The pipeline turns fixed-grid ICU vital-sign series (five channels, one
//! sample per hour) into an interpretable feature matrix, clusters patients
//! with k-means, k-medoids, k-shape or DBSCAN, picks the number of clusters
//! with the elbow method plus Calinski-Harabasz / Davies-Bouldin indices,
//! and summarises mortality and vital-sign trajectories per subgroup.
//!
//! Module map:
//! - [`model`]: shared domain types and cohort validation.
//! - [`ingest`]: CSV parsing, cohort filters, era split, synthetic cohorts.
//! - [`features`]: the 110-column feature catalog, cleaning, normalization, selection.
//! - [`cluster`]: the four clusterers and frozen assignment.
//! - [`validity`]: inertia, CHI, DBI, elbow, ARI and the model-selection sweep.
//! - [`prognosis`]: bootstrap mortality statistics and label alignment.
//! - [`trajectories`]: per-subgroup hourly summaries and plot output.
//! - [`pipeline`]: config handling and the end-to-end commands behind the CLI.

pub mod cluster;
pub mod error;
pub mod features;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod prognosis;
pub mod rng;
pub mod trajectories;
pub mod validity;

pub use error::{Error, Result};
pub use model::{Cohort, Era, PatientSeries, StaticRecord, VitalChannel};
