//! Build-recipe synthesis toolkit: recipe parsing and scoring, repository
//! analysis, reference retrieval, model access, staged validation, and the
//! repair loop that ties them together.

pub mod bench;
pub mod eval;
pub mod kb;
pub mod llm;
pub mod metrics;
pub mod recipe;
pub mod repair;
pub mod repo;
pub mod text;
