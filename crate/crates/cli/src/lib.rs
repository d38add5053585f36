//! Shared pieces of the command-line front end: dataset loading helpers and
//! the HTTP attribution service, kept in a library target so integration
//! tests can drive the router in-process.

pub mod data;
pub mod http;
