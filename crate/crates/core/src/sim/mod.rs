//! Simulated instruments sharing one physical world model.
//!
//! [`world`] holds the plates, stations, and clock; [`devices`] implements a
//! [`crate::node::Device`] per instrument model; [`workcell`] builds a full
//! set of nodes and clients from a [`crate::specs::WorkcellSpec`].

pub mod devices;
pub mod protocol;
pub mod workcell;
pub mod world;

use std::sync::{Arc, Mutex};

pub use devices::FaultMode;
pub use protocol::{parse_protocol, ProtocolSpec, TransferCommand};
pub use workcell::{SimOptions, SimWorkcell};
pub use world::{well_index, well_name, GrowthParams, PlateModel, WellContent, WorldModel};

/// Handle to the world shared by every device in a workcell.
pub type SharedWorld = Arc<Mutex<WorldModel>>;

pub fn shared_world(seed: u64) -> SharedWorld {
    Arc::new(Mutex::new(WorldModel::new(seed)))
}
