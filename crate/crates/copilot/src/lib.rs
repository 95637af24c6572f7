pub mod index;
pub mod provider;
pub mod querygen;
pub mod retrieval;
pub mod pipeline;
pub mod orchestrator;
pub mod config;
pub mod gateway;
pub mod evalkit;
pub mod cli;
