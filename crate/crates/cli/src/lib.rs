//! Command line front end and HTTP service for preference-aware recourse.

pub mod api;
pub mod config;
pub mod error;
pub mod experiment;
pub mod render;
pub mod service;
pub mod setup;
