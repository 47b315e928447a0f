//! Spatial outlier removal for GSM cell-location data.
//!
//! Pipeline: parse a mobility trace ([`ingest`]), resolve each distinct cell
//! to coordinates through a cell database ([`resolver`]), cluster every
//! location area on its own and keep its densest cluster ([`cluster`]), then
//! emit retention tables, coverage series and GeoJSON/CSV/SVG outputs
//! ([`report`]). [`synth`] builds synthetic networks with known outliers for
//! scoring, and [`cli`] wires it all to the `lacclust` binary.

pub mod cli;
pub mod cluster;
pub mod exec;
pub mod geo;
pub mod ingest;
pub mod report;
pub mod resolver;
pub mod synth;

pub use cluster::{
    clean_dataset, clean_dataset_with, CleanResult, ClusterError, ClusterParams, Dendrogram, LacGroup, Linkage, Role,
};
pub use exec::Execution;
pub use geo::{DistanceMetric, GeoPoint};
pub use ingest::{CellIdentity, CellSet, TraceEvent};
pub use resolver::{CellDatabase, MatchPolicy, ResolvedCell};
