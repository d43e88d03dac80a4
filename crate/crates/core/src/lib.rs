pub mod construct;
pub mod corpus;
pub mod eval;
pub mod explore;
pub mod filter;
pub mod fixtures;
pub mod llm;
pub mod model;
pub mod pipeline;
