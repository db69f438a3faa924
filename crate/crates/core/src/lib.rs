#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod cli;
pub mod expr;
pub mod integrate;
pub mod metric;
pub mod morphism;
pub mod stability;
pub mod system;
