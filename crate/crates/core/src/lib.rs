//! Execution-verified code preference pairs with token-level masks, plus a
//! reference kernel for masked DPO/RPO losses and their gradients.

pub mod config;
pub mod dataset;
pub mod diff;
pub mod filters;
pub mod llm;
pub mod loss;
pub mod mask;
pub mod model;
pub mod orchestrator;
pub mod sandbox;
