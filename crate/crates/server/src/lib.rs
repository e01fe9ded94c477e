//! HTTP/JSON API and command line driver over [`bns_core::Engine`].

pub mod cli;
pub mod http;
pub mod service;

pub use service::{Reply, Service};
