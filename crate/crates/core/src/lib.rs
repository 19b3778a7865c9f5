pub mod autograd;
mod binio;
pub mod corpus;
pub mod embeddings;
pub mod model;
pub mod evalkit;
pub mod trainer;
pub mod synth;
