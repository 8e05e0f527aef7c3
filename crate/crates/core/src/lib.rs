//! Closed-loop harness for a language-model driving agent on a simulated highway.

pub mod expert;
pub mod fixtures;
pub mod harness;
pub mod llm;
pub mod memory;
pub mod perception;
pub mod planner;
pub mod react;
pub mod sim;
pub mod template;
