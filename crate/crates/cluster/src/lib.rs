//! Processes of the bank cluster: branch servers ([`node`]), the recovery
//! module ([`rm`]), the heartbeat [`monitor`], the [`client`] used by
//! `bankctl`, and the [`faultlab`] scenario harness.

pub mod client;
pub mod config;
pub mod durability;
pub mod faultlab;
pub mod monitor;
pub mod net;
pub mod node;
pub mod rm;

pub use config::ServerConfig;
pub use node::Server;
