//! Request handling shared by the `finegrain` command line and its HTTP
//! service. Both front ends build an [`api::AttributeRequest`], run it through
//! [`api::attribute`] and print the same serialized response.

pub mod api;
pub mod config;
pub mod server;
