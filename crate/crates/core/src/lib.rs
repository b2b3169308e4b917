//! Federated second-order optimization simulator.
//!
//! Clients run preconditioned local steps (Sophia, Muon or SOAP) on shards of
//! a synthetic task; the server averages parameter deltas and, for FedPAC,
//! also averages optimizer states (alignment) and broadcasts a global
//! direction that clients mix into their local steps (correction).
//!
//! ```no_run
//! use fedpac_core::datagen::TaskSpec;
//! use fedpac_core::federation::{run_federated, Algorithm, Engine, RoundConfig};
//! use fedpac_core::preconditioners::Variant;
//!
//! let cfg = RoundConfig::default();
//! let task = TaskSpec { alpha: Some(0.1), ..TaskSpec::default() }.build(cfg.n_clients, 7)?;
//! let reports = run_federated(&task, &cfg, &Algorithm::new(Engine::FedPac, Variant::Soap))?;
//! println!("final accuracy {}", reports.last().unwrap().test_acc);
//! # Ok::<(), fedpac_core::Error>(())
//! ```

pub mod datagen;
pub mod error;
pub mod federation;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod oracles;
pub mod params;
pub mod preconditioners;

pub use error::{Error, Result};
