pub mod autodiff;
pub mod graph;
pub mod ingest;
pub mod trees;
pub mod features;
pub mod augment;
pub mod stgt;
pub mod train;
pub mod pipeline;
