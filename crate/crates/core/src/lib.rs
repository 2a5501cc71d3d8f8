pub mod graphs;
pub mod kmeans;
pub mod models;
pub mod numcore;
pub mod rng;
pub mod semantic;
pub mod structural;
pub mod theory;
pub mod metrics;
pub mod federation;
pub mod experiment;
