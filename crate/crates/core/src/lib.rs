//! Execution-grounded vulnerability lifecycle.
//!
//! Detection fuses a GraphSAGE encoding of a universal AST with a semantic
//! source embedding. Flagged samples are validated by running generated
//! exploit harnesses in a sandbox, and only samples with execution-backed
//! confirmation enter the iterative repair loop.

pub mod encoder;
pub mod fusion;
pub mod pipeline;
pub mod repair;
pub mod semantic;
pub mod uast;
pub mod util;
pub mod validation;
