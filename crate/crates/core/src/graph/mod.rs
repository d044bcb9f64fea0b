//! Irregular sensor tasks: node sampling, k-NN graphs, task assembly and
//! the on-disk task format.

pub mod io;
mod knn;
mod task;

pub use knn::{knn_graph, Metric, SpatialGraph};
pub use task::{
    analytic_task, build_task, build_task_with, make_meta_suite, sample_nodes, FamilyConfig, Provenance,
    TaskDataset,
};
