pub mod fixtures;
pub mod parser;
pub mod prompt;
pub mod record_store;
pub mod gateway;
pub mod mock_server;
pub mod consensus;
pub mod analytics;
pub mod orchestrator;
