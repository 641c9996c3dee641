pub mod classifier;
pub mod geometry;
pub mod renderer;
pub mod parallel;
pub mod rng;
pub mod run;
pub mod search;
pub mod testkit;
pub mod analysis;
