//! Build a running simulated workcell from a workcell spec.
//!
//! Every module entry gets a simulated device (chosen by `model`), a node,
//! an adapter server where the interface calls for one, and a client handle.
//! All devices share one world, so effects are visible across modules.

use indexmap::IndexMap;
use serde_json::Value;
use thiserror::Error;

use std::sync::Arc;

use super::devices::{
    CameraDevice, IncubatorDevice, LiquidHandlerDevice, ManipulatorDevice, PeelerDevice,
    ReaderDevice, Reservoir, SciclopsDevice, SealerDevice, StubDevice, ThermocyclerDevice,
};
use super::{shared_world, SharedWorld};
use crate::node::{loopback, rest, tcp, AboutInfo, Device, ModuleClient, Node};
use crate::specs::{AdapterKind, ModuleDirectory, ModuleSpec, WorkcellSpec};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("module `{module}`: {message}")]
    Config { module: String, message: String },
    #[error("module `{module}`: cannot serve adapter: {source}")]
    Serve {
        module: String,
        source: std::io::Error,
    },
}

fn config_error(module: &str, message: impl Into<String>) -> BuildError {
    BuildError::Config {
        module: module.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub seed: u64,
    /// Real seconds slept per simulated second of action duration.
    pub time_scale: f64,
    /// Force every module onto one adapter, ignoring `interface:` entries.
    pub adapter_override: Option<AdapterKind>,
}

impl Default for SimOptions {
    fn default() -> SimOptions {
        SimOptions {
            seed: 0,
            time_scale: 0.0,
            adapter_override: None,
        }
    }
}

/// Keeps adapter servers alive for the lifetime of the workcell.
#[allow(dead_code)]
enum ServerHandle {
    Rest(rest::RestServer),
    Tcp(tcp::TcpServer),
}

/// A running simulated workcell: one node and client per module, all sharing
/// a world. Dropping it stops any adapter servers.
pub struct SimWorkcell {
    pub spec: WorkcellSpec,
    world: SharedWorld,
    nodes: IndexMap<String, Arc<Node>>,
    clients: IndexMap<String, Arc<ModuleClient>>,
    adapters: IndexMap<String, AdapterKind>,
    endpoints: IndexMap<String, String>,
    _servers: Vec<ServerHandle>,
}

impl SimWorkcell {
    pub fn build(spec: &WorkcellSpec, options: &SimOptions) -> Result<SimWorkcell, BuildError> {
        let world = shared_world(options.seed);
        {
            let mut w = world.lock().unwrap();
            for (name, station) in &spec.locations {
                w.add_station(name);
                if station.labware_type == "trash" {
                    w.trash_stations.insert(name.clone());
                }
            }
        }

        let mut nodes = IndexMap::new();
        let mut clients = IndexMap::new();
        let mut adapters = IndexMap::new();
        let mut endpoints = IndexMap::new();
        let mut servers = Vec::new();
        for module in &spec.modules {
            let device = build_device(module, spec, &world)?;
            let node = Node::new(&module.name, device, options.time_scale);
            let adapter = options.adapter_override.or_else(|| module.adapter(&spec.config));
            let adapter = adapter.ok_or_else(|| {
                config_error(&module.name, format!("unknown interface `{}`", module.interface))
            })?;
            let client = match adapter {
                AdapterKind::Loopback => loopback::client(Arc::clone(&node)),
                AdapterKind::Rest => {
                    let server = rest::serve(Arc::clone(&node), &bind_address(module))
                        .map_err(|source| BuildError::Serve { module: module.name.clone(), source })?;
                    let client = rest::client(&server.base_url());
                    endpoints.insert(module.name.clone(), server.base_url());
                    servers.push(ServerHandle::Rest(server));
                    client
                }
                AdapterKind::Tcp => {
                    let server = tcp::serve(Arc::clone(&node), &bind_address(module))
                        .map_err(|source| BuildError::Serve { module: module.name.clone(), source })?;
                    let client = tcp::client(&server.addr().to_string());
                    endpoints.insert(module.name.clone(), server.addr().to_string());
                    servers.push(ServerHandle::Tcp(server));
                    client
                }
            };
            nodes.insert(module.name.clone(), node);
            clients.insert(module.name.clone(), Arc::new(client));
            adapters.insert(module.name.clone(), adapter);
        }

        Ok(SimWorkcell {
            spec: spec.clone(),
            world,
            nodes,
            clients,
            adapters,
            endpoints,
            _servers: servers,
        })
    }

    /// Network endpoint of a module's adapter: the base URL for REST, the
    /// socket address for TCP, `None` for loopback.
    pub fn endpoint(&self, name: &str) -> Option<&str> {
        self.endpoints.get(name).map(String::as_str)
    }

    pub fn world(&self) -> SharedWorld {
        Arc::clone(&self.world)
    }

    pub fn node(&self, name: &str) -> Option<&Arc<Node>> {
        self.nodes.get(name)
    }

    pub fn client(&self, name: &str) -> Option<Arc<ModuleClient>> {
        self.clients.get(name).map(Arc::clone)
    }

    pub fn clients(&self) -> &IndexMap<String, Arc<ModuleClient>> {
        &self.clients
    }

    pub fn adapter(&self, name: &str) -> Option<AdapterKind> {
        self.adapters.get(name).copied()
    }

    pub fn module_names(&self) -> Vec<String> {
        self.nodes.keys().cloned().collect()
    }

    pub fn snapshot(&self) -> Value {
        self.world.lock().unwrap().snapshot()
    }
}

impl ModuleDirectory for SimWorkcell {
    fn about(&self, module: &str) -> Option<AboutInfo> {
        self.clients.get(module)?.about().ok()
    }

    fn online(&self, module: &str) -> bool {
        self.clients.get(module).map(|c| c.ping()).unwrap_or(false)
    }
}

fn bind_address(module: &ModuleSpec) -> String {
    match module.config.get("port").and_then(Value::as_u64) {
        Some(port) => format!("127.0.0.1:{port}"),
        None => "127.0.0.1:0".to_string(),
    }
}

/// Resolve the station a single-nest device sits at: an explicit config key,
/// else the `<module>.<suffix>` convention checked against the locations.
fn station_for(
    module: &ModuleSpec,
    spec: &WorkcellSpec,
    keys: &[&str],
    suffix: &str,
) -> Result<String, BuildError> {
    for key in keys {
        if let Some(Value::String(station)) = module.config.get(*key) {
            return Ok(station.clone());
        }
    }
    let conventional = format!("{}.{}", module.name, suffix);
    if spec.locations.contains_key(&conventional) {
        return Ok(conventional);
    }
    Err(config_error(
        &module.name,
        format!(
            "no `{}` config key and no `{conventional}` location defined",
            keys.first().unwrap_or(&"station")
        ),
    ))
}

fn color_from(value: &Value) -> Option<[u8; 3]> {
    let channels = value.as_array()?;
    if channels.len() != 3 {
        return None;
    }
    let mut color = [0u8; 3];
    for (i, channel) in channels.iter().enumerate() {
        let v = channel.as_f64()?;
        if !(0.0..=255.0).contains(&v) {
            return None;
        }
        color[i] = v as u8;
    }
    Some(color)
}

fn reservoirs_from(module: &ModuleSpec) -> Result<IndexMap<String, Reservoir>, BuildError> {
    let mut reservoirs = IndexMap::new();
    let Some(value) = module.config.get("reservoirs") else {
        return Ok(reservoirs);
    };
    let entries = value.as_object().ok_or_else(|| {
        config_error(&module.name, "`reservoirs` must be a map of name -> properties")
    })?;
    for (name, entry) in entries {
        let color = entry
            .get("color")
            .and_then(color_from)
            .ok_or_else(|| {
                config_error(&module.name, format!("reservoir `{name}` needs `color: [r, g, b]`"))
            })?;
        let volume = entry
            .get("volume")
            .and_then(Value::as_f64)
            .unwrap_or(100_000.0);
        let mut reservoir = Reservoir::new(color, volume);
        if let Some(od) = entry.get("od").and_then(Value::as_f64) {
            reservoir.od = od;
        }
        if let Some(t) = entry.get("treatment").and_then(Value::as_f64) {
            reservoir.treatment = t;
        }
        if let Some(i) = entry.get("inoculated").and_then(Value::as_bool) {
            reservoir.inoculated = i;
        }
        reservoirs.insert(name.clone(), reservoir);
    }
    Ok(reservoirs)
}

fn reach_from(module: &ModuleSpec) -> Option<Vec<String>> {
    let entries = module.config.get("reach")?.as_array()?;
    Some(
        entries
            .iter()
            .filter_map(|v| v.as_str().map(str::to_string))
            .collect(),
    )
}

fn build_device(
    module: &ModuleSpec,
    spec: &WorkcellSpec,
    world: &SharedWorld,
) -> Result<Box<dyn Device>, BuildError> {
    let device: Box<dyn Device> = match module.model.as_str() {
        "sciclops" => {
            let exchange = station_for(module, spec, &["exchange", "station"], "exchange")?;
            let mut towers: IndexMap<String, (u64, u64)> = IndexMap::new();
            if let Some(Value::Object(entries)) = module.config.get("towers") {
                for (name, count) in entries {
                    let capacity = count.as_u64().ok_or_else(|| {
                        config_error(&module.name, format!("tower `{name}` count must be an integer"))
                    })?;
                    towers.insert(name.clone(), (capacity, capacity));
                }
            } else {
                // Convention: any location named `<module>.tower*` is a tower.
                let prefix = format!("{}.tower", module.name);
                for name in spec.locations.keys() {
                    if name.starts_with(&prefix) {
                        towers.insert(name.clone(), (20, 20));
                    }
                }
            }
            if towers.is_empty() {
                return Err(config_error(
                    &module.name,
                    "no towers: add a `towers` config map or `<module>.tower*` locations",
                ));
            }
            Box::new(SciclopsDevice::new(Arc::clone(world), &exchange, towers))
        }
        "pf400" | "platecrane" => Box::new(ManipulatorDevice::new(
            Arc::clone(world),
            &module.model,
            reach_from(module),
        )),
        "ot2" | "solo" => {
            let deck = station_for(module, spec, &["deck", "station"], "deck")?;
            let reservoirs = reservoirs_from(module)?;
            let tips = module
                .config
                .get("tips")
                .and_then(Value::as_f64)
                .unwrap_or(960.0);
            Box::new(LiquidHandlerDevice::new(
                Arc::clone(world),
                &module.model,
                &deck,
                reservoirs,
                tips,
            ))
        }
        "a4s_sealer" | "sealer" => {
            let station = station_for(module, spec, &["station", "nest"], "nest")?;
            Box::new(SealerDevice::new(Arc::clone(world), &module.model, &station))
        }
        "brooks_peeler" | "peeler" => {
            let station = station_for(module, spec, &["station", "nest"], "nest")?;
            Box::new(PeelerDevice::new(Arc::clone(world), &module.model, &station))
        }
        "biometra" => {
            let station = station_for(module, spec, &["station", "nest"], "nest")?;
            Box::new(ThermocyclerDevice::new(Arc::clone(world), &module.model, &station))
        }
        "camera" => {
            let station = station_for(module, spec, &["station", "nest"], "nest")?;
            Box::new(CameraDevice::new(Arc::clone(world), &station))
        }
        "hidex" | "tecan" => {
            let station = station_for(module, spec, &["station", "nest"], "nest")?;
            Box::new(ReaderDevice::new(Arc::clone(world), &module.model, &station))
        }
        "liconic" => {
            let nest = station_for(module, spec, &["station", "nest"], "nest")?;
            let count = module
                .config
                .get("slots")
                .and_then(Value::as_u64)
                .unwrap_or(20) as usize;
            let slots: Vec<String> = (0..count)
                .map(|i| format!("{}.slot{}", module.name, i + 1))
                .collect();
            {
                let mut w = world.lock().unwrap();
                for slot in &slots {
                    w.add_station(slot);
                    w.incubator_stations.insert(slot.clone());
                }
            }
            Box::new(IncubatorDevice::new(Arc::clone(world), &nest, slots))
        }
        // Models whose physical effects are out of scope run as no-ops.
        "ur" | "mir" | "chemspeed" => Box::new(StubDevice::new(Arc::clone(world), &module.model)),
        other => {
            return Err(config_error(
                &module.name,
                format!("no simulated device for model `{other}`"),
            ))
        }
    };
    Ok(device)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::ActionRequest;
    use crate::specs::parse_workcell;

    const MINI_WORKCELL: &str = r#"
name: mini
modules:
  - name: arm
    model: pf400
    interface: rest
  - name: stacker
    model: sciclops
    interface: tcp
    config:
      exchange: stacker.exchange
      towers:
        stacker.tower1: 5
  - name: cam
    model: camera
    interface: loopback
locations:
  stacker.exchange:
    labware_type: plate_nest
    coordinates: [0.0, 0.0, 0.0]
  stacker.tower1:
    labware_type: stack
    coordinates: [0.1, 0.0, 0.0]
  cam.nest:
    labware_type: plate_nest
    coordinates: [0.2, 0.0, 0.0]
  disposal:
    labware_type: trash
    coordinates: [0.3, 0.0, 0.0]
"#;

    #[test]
    fn builds_nodes_and_clients_per_interface() {
        let spec = parse_workcell(MINI_WORKCELL).unwrap();
        let cell = SimWorkcell::build(&spec, &SimOptions::default()).unwrap();
        assert_eq!(cell.adapter("arm"), Some(AdapterKind::Rest));
        assert_eq!(cell.adapter("stacker"), Some(AdapterKind::Tcp));
        assert_eq!(cell.adapter("cam"), Some(AdapterKind::Loopback));

        // The same plate is visible through different adapters' modules.
        let stacker = cell.client("stacker").unwrap();
        let result = stacker
            .action(&ActionRequest::new("get_plate").with_var("pos", "stacker.tower1"))
            .unwrap();
        assert_eq!(result.code(), "ok");
        let arm = cell.client("arm").unwrap();
        let moved = arm
            .action(
                &ActionRequest::new("transfer")
                    .with_var("source", "stacker.exchange")
                    .with_var("target", "cam.nest"),
            )
            .unwrap();
        assert_eq!(moved.code(), "ok");
        let world = cell.world();
        assert_eq!(world.lock().unwrap().station_occupied("cam.nest"), Some(true));

        // Trash stations destroy plates.
        arm.action(
            &ActionRequest::new("transfer")
                .with_var("source", "cam.nest")
                .with_var("target", "disposal"),
        )
        .unwrap();
        assert_eq!(world.lock().unwrap().plates.len(), 0);
    }

    #[test]
    fn adapter_override_forces_loopback() {
        let spec = parse_workcell(MINI_WORKCELL).unwrap();
        let options = SimOptions {
            adapter_override: Some(AdapterKind::Loopback),
            ..SimOptions::default()
        };
        let cell = SimWorkcell::build(&spec, &options).unwrap();
        for name in cell.module_names() {
            assert_eq!(cell.adapter(&name), Some(AdapterKind::Loopback));
        }
    }
}
