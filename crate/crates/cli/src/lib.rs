//! Library side of the `posehunt` binary: config resolution and the HTTP
//! service, exposed for integration tests.

pub mod config;
pub mod service;
