//! Test support for the selection toolkit: an in-process mock completions
//! endpoint and a seeded synthetic long-CoT pool generator.

pub mod mock_endpoint;
pub mod synthetic;

pub use mock_endpoint::{MockBehavior, MockEndpoint};
pub use synthetic::{synthetic_pool, write_pool_file};
