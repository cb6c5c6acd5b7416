//! Command-line and network front end for the `visguardian` library.

pub mod cli;
pub mod server;

pub use server::{ApiEvent, ApiEventBody, FrameMessage, MetricsSnapshot, PolicySnapshot, ServeOptions, Service};
