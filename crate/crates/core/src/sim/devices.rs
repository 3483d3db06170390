//! Simulated device implementations.
//!
//! Every device applies its effects against the shared [`WorldModel`] and
//! advances the simulated clock by the action's nominal duration, so the
//! reported outcome of an action and the state of the world can be compared
//! independently. Each device carries a fault slot for error injection via
//! the `inject_fault` admin command: a `fail` fault makes the next action
//! fail loudly, a `silent` fault makes it report success without applying
//! its effect (an operational error, detectable only by auditing the world).

use indexmap::IndexMap;
use serde_json::{json, Map, Value};

use super::protocol::parse_protocol;
use super::world::well_name;
use super::SharedWorld;
use crate::node::{ActionVars, Device, DeviceFault, ResourceLevel, ResourceLevels};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultMode {
    /// Next action fails with a reported fault.
    Fail,
    /// Next action reports success but has no effect.
    Silent,
}

impl FaultMode {
    pub fn from_name(name: &str) -> Option<FaultMode> {
        match name {
            "fail" => Some(FaultMode::Fail),
            "silent" => Some(FaultMode::Silent),
            _ => None,
        }
    }
}

/// One-shot fault armed by `inject_fault`.
#[derive(Default)]
struct FaultSlot(Option<FaultMode>);

impl FaultSlot {
    fn arm(&mut self, args: &ActionVars) -> Result<(), DeviceFault> {
        let name = match args.get("mode") {
            Some(Value::String(s)) => s.as_str(),
            None => "fail",
            Some(other) => {
                return Err(DeviceFault::new("BAD_ARGS", format!("bad fault mode {other}")))
            }
        };
        let mode = FaultMode::from_name(name)
            .ok_or_else(|| DeviceFault::new("BAD_ARGS", format!("unknown fault mode `{name}`")))?;
        self.0 = Some(mode);
        Ok(())
    }

    /// Consume an armed fault. `Ok(true)` means fail silently (skip the
    /// effect but report success).
    fn consume(&mut self) -> Result<bool, DeviceFault> {
        match self.0.take() {
            Some(FaultMode::Fail) => Err(DeviceFault::new("INJECTED_FAULT", "injected device fault")),
            Some(FaultMode::Silent) => Ok(true),
            None => Ok(false),
        }
    }
}

/// Handle the admin commands shared by all devices; `None` means the command
/// is device-specific (currently only `refill`).
fn common_admin(
    fault: &mut FaultSlot,
    command: &str,
    args: &ActionVars,
) -> Option<Result<Option<Map<String, Value>>, DeviceFault>> {
    match command {
        "home" => Some(Ok(None)),
        "inject_fault" => Some(fault.arm(args).map(|()| None)),
        "clear_fault" => {
            fault.0 = None;
            Some(Ok(None))
        }
        _ => None,
    }
}

fn charge(world: &SharedWorld, handle: &str, device: &dyn Device, vars: &ActionVars) {
    let seconds = device.duration(handle, vars);
    world.lock().unwrap().advance(seconds);
}

fn str_var<'a>(vars: &'a ActionVars, key: &str) -> Result<&'a str, DeviceFault> {
    match vars.get(key) {
        Some(Value::String(s)) => Ok(s),
        other => Err(DeviceFault::new(
            "BAD_ARGS",
            format!("arg `{key}` must be a string, got {other:?}"),
        )),
    }
}

fn f64_var(vars: &ActionVars, key: &str) -> Result<f64, DeviceFault> {
    match vars.get(key).and_then(Value::as_f64) {
        Some(v) => Ok(v),
        None => Err(DeviceFault::new("BAD_ARGS", format!("arg `{key}` must be a number"))),
    }
}

fn no_plate(station: &str) -> DeviceFault {
    DeviceFault::new("NO_PLATE", format!("no plate at station `{station}`"))
}

// ---------------------------------------------------------------------------
// Plate manipulators (pf400, platecrane)
// ---------------------------------------------------------------------------

/// Robot arm moving plates between stations and handling plate lids.
pub struct ManipulatorDevice {
    world: SharedWorld,
    model: String,
    /// Stations this arm can reach; `None` means unrestricted.
    reach: Option<Vec<String>>,
    fault: FaultSlot,
}

impl ManipulatorDevice {
    pub fn new(world: SharedWorld, model: &str, reach: Option<Vec<String>>) -> ManipulatorDevice {
        ManipulatorDevice {
            world,
            model: model.to_string(),
            reach,
            fault: FaultSlot::default(),
        }
    }

    fn check_reach(&self, station: &str) -> Result<(), DeviceFault> {
        match &self.reach {
            Some(reach) if !reach.iter().any(|s| s == station) => Err(DeviceFault::new(
                "UNREACHABLE",
                format!("station `{station}` is outside the arm's reach"),
            )),
            _ => Ok(()),
        }
    }
}

impl Device for ManipulatorDevice {
    fn model(&self) -> String {
        self.model.clone()
    }

    fn perform(
        &mut self,
        handle: &str,
        vars: &ActionVars,
    ) -> Result<Option<Map<String, Value>>, DeviceFault> {
        charge(&self.world, handle, self, vars);
        if self.fault.consume()? {
            return Ok(None);
        }
        match handle {
            "transfer" => {
                let source = str_var(vars, "source")?;
                let target = str_var(vars, "target")?;
                self.check_reach(source)?;
                self.check_reach(target)?;
                self.world.lock().unwrap().move_plate(source, target)?;
                Ok(None)
            }
            "remove_lid" | "replace_lid" => {
                let target = str_var(vars, "target")?;
                self.check_reach(target)?;
                let mut world = self.world.lock().unwrap();
                let plate = world.plate_at_mut(target).ok_or_else(|| no_plate(target))?;
                match (handle, plate.lidded) {
                    ("remove_lid", false) => {
                        Err(DeviceFault::new("LID_ALREADY_OFF", "plate has no lid"))
                    }
                    ("replace_lid", true) => {
                        Err(DeviceFault::new("LID_ALREADY_ON", "plate already lidded"))
                    }
                    (h, _) => {
                        plate.lidded = h == "replace_lid";
                        Ok(None)
                    }
                }
            }
            // Motion-only actions with no labware effect.
            "home" | "explore_workcell" => Ok(None),
            other => Err(DeviceFault::new("UNKNOWN_ACTION", format!("`{other}` not implemented"))),
        }
    }

    fn admin(
        &mut self,
        command: &str,
        args: &ActionVars,
    ) -> Result<Option<Map<String, Value>>, DeviceFault> {
        common_admin(&mut self.fault, command, args).unwrap_or(Ok(None))
    }
}

// ---------------------------------------------------------------------------
// Plate stacker (sciclops)
// ---------------------------------------------------------------------------

/// Plate stacker: dispenses fresh plates from its towers onto an exchange
/// station and moves plates within reach.
pub struct SciclopsDevice {
    world: SharedWorld,
    /// Station where `get_plate` deposits a fresh plate.
    exchange: String,
    /// Tower name -> (plates remaining, capacity).
    towers: IndexMap<String, (u64, u64)>,
    fault: FaultSlot,
}

impl SciclopsDevice {
    pub fn new(
        world: SharedWorld,
        exchange: &str,
        towers: IndexMap<String, (u64, u64)>,
    ) -> SciclopsDevice {
        SciclopsDevice {
            world,
            exchange: exchange.to_string(),
            towers,
            fault: FaultSlot::default(),
        }
    }
}

impl Device for SciclopsDevice {
    fn model(&self) -> String {
        "sciclops".to_string()
    }

    fn resources(&self) -> ResourceLevels {
        let current: u64 = self.towers.values().map(|(c, _)| c).sum();
        let capacity: u64 = self.towers.values().map(|(_, k)| k).sum();
        let mut levels = IndexMap::new();
        levels.insert(
            "plates".to_string(),
            ResourceLevel {
                current: current as f64,
                capacity: capacity as f64,
                units: "plates".to_string(),
            },
        );
        ResourceLevels { levels }
    }

    fn perform(
        &mut self,
        handle: &str,
        vars: &ActionVars,
    ) -> Result<Option<Map<String, Value>>, DeviceFault> {
        charge(&self.world, handle, self, vars);
        if self.fault.consume()? {
            return Ok(None);
        }
        match handle {
            "home" => Ok(None),
            "transfer" => {
                let source = str_var(vars, "source")?;
                let target = str_var(vars, "target")?;
                self.world.lock().unwrap().move_plate(source, target)?;
                Ok(None)
            }
            "get_plate" => {
                let pos = str_var(vars, "pos")?;
                let (remaining, _) = self
                    .towers
                    .get_mut(pos)
                    .ok_or_else(|| DeviceFault::new("UNKNOWN_TOWER", format!("no tower `{pos}`")))?;
                if *remaining == 0 {
                    return Err(DeviceFault::new("TOWER_EMPTY", format!("tower `{pos}` is empty")));
                }
                let plate_id = self.world.lock().unwrap().create_plate(&self.exchange)?;
                *remaining -= 1;
                let mut data = Map::new();
                data.insert("plate_id".to_string(), json!(plate_id));
                data.insert("pos".to_string(), json!(self.exchange));
                Ok(Some(data))
            }
            other => Err(DeviceFault::new("UNKNOWN_ACTION", format!("`{other}` not implemented"))),
        }
    }

    fn admin(
        &mut self,
        command: &str,
        args: &ActionVars,
    ) -> Result<Option<Map<String, Value>>, DeviceFault> {
        if let Some(result) = common_admin(&mut self.fault, command, args) {
            return result;
        }
        if command == "refill" {
            for (remaining, capacity) in self.towers.values_mut() {
                *remaining = *capacity;
            }
        }
        Ok(None)
    }
}

// ---------------------------------------------------------------------------
// Liquid handlers (ot2, solo)
// ---------------------------------------------------------------------------

/// A named liquid source on a liquid handler's deck.
#[derive(Debug, Clone)]
pub struct Reservoir {
    pub color: [u8; 3],
    pub volume: f64,
    pub capacity: f64,
    pub od: f64,
    pub treatment: f64,
    pub inoculated: bool,
}

impl Reservoir {
    pub fn new(color: [u8; 3], volume: f64) -> Reservoir {
        Reservoir {
            color,
            volume,
            capacity: volume,
            od: 0.0,
            treatment: 0.0,
            inoculated: false,
        }
    }
}

/// Pipetting robot executing transfer protocols against the plate on its deck.
pub struct LiquidHandlerDevice {
    world: SharedWorld,
    model: String,
    /// Station holding the plate being pipetted into.
    deck: String,
    pub reservoirs: IndexMap<String, Reservoir>,
    tips: f64,
    tip_capacity: f64,
    /// Simulated seconds per protocol command.
    seconds_per_command: f64,
    fault: FaultSlot,
}

impl LiquidHandlerDevice {
    pub fn new(
        world: SharedWorld,
        model: &str,
        deck: &str,
        reservoirs: IndexMap<String, Reservoir>,
        tips: f64,
    ) -> LiquidHandlerDevice {
        LiquidHandlerDevice {
            world,
            model: model.to_string(),
            deck: deck.to_string(),
            reservoirs,
            tips,
            tip_capacity: tips,
            seconds_per_command: 2.0,
            fault: FaultSlot::default(),
        }
    }
}

impl Device for LiquidHandlerDevice {
    fn model(&self) -> String {
        self.model.clone()
    }

    fn resources(&self) -> ResourceLevels {
        let mut levels = IndexMap::new();
        levels.insert(
            "tips".to_string(),
            ResourceLevel {
                current: self.tips,
                capacity: self.tip_capacity,
                units: "tips".to_string(),
            },
        );
        for (name, reservoir) in &self.reservoirs {
            levels.insert(
                name.clone(),
                ResourceLevel {
                    current: reservoir.volume,
                    capacity: reservoir.capacity,
                    units: "uL".to_string(),
                },
            );
        }
        ResourceLevels { levels }
    }

    fn duration(&self, handle: &str, vars: &ActionVars) -> f64 {
        if handle == "run_protocol" {
            if let Some(Value::String(document)) = vars.get("protocol") {
                if let Ok(spec) = parse_protocol(document) {
                    return spec.commands.len() as f64 * self.seconds_per_command;
                }
            }
        }
        self.actions()
            .iter()
            .find(|sig| sig.handle == handle)
            .map(|sig| sig.duration)
            .unwrap_or(0.0)
    }

    fn perform(
        &mut self,
        handle: &str,
        vars: &ActionVars,
    ) -> Result<Option<Map<String, Value>>, DeviceFault> {
        charge(&self.world, handle, self, vars);
        if self.fault.consume()? {
            return Ok(None);
        }
        if handle != "run_protocol" {
            return Err(DeviceFault::new("UNKNOWN_ACTION", format!("`{handle}` not implemented")));
        }
        let document = str_var(vars, "protocol")?;
        let spec = parse_protocol(document)
            .map_err(|e| DeviceFault::new("BAD_PROTOCOL", e.to_string()))?;
        let mut world = self.world.lock().unwrap();
        {
            let plate = world
                .plate_at(&self.deck)
                .ok_or_else(|| no_plate(&self.deck))?;
            if plate.sealed {
                return Err(DeviceFault::new("PLATE_SEALED", "cannot pipette into a sealed plate"));
            }
            if plate.lidded {
                return Err(DeviceFault::new("LIDDED", "cannot pipette into a lidded plate"));
            }
        }
        // All-or-nothing: check the full command list before touching a well.
        for command in &spec.commands {
            let reservoir = self.reservoirs.get(&command.source).ok_or_else(|| {
                DeviceFault::new("UNKNOWN_RESERVOIR", format!("no reservoir `{}`", command.source))
            })?;
            if reservoir.volume < command.volume {
                return Err(DeviceFault::new(
                    "RESERVOIR_EMPTY",
                    format!("reservoir `{}` holds {:.1} uL", command.source, reservoir.volume),
                ));
            }
        }
        if self.tips < spec.commands.len() as f64 {
            return Err(DeviceFault::new(
                "TIPS_EXHAUSTED",
                format!("{} tips left, {} needed", self.tips, spec.commands.len()),
            ));
        }
        let plate = world.plate_at_mut(&self.deck).expect("checked above");
        for command in &spec.commands {
            let reservoir = self.reservoirs.get_mut(&command.source).expect("checked above");
            let index = super::world::well_index(&command.destination).expect("validated by parse");
            plate.wells[index].mix(
                command.volume,
                reservoir.color,
                reservoir.od,
                reservoir.treatment,
                reservoir.inoculated,
            );
            reservoir.volume -= command.volume;
            self.tips -= 1.0;
        }
        let mut data = Map::new();
        data.insert("commands".to_string(), json!(spec.commands.len()));
        Ok(Some(data))
    }

    fn admin(
        &mut self,
        command: &str,
        args: &ActionVars,
    ) -> Result<Option<Map<String, Value>>, DeviceFault> {
        if let Some(result) = common_admin(&mut self.fault, command, args) {
            return result;
        }
        if command == "refill" {
            self.tips = self.tip_capacity;
            for reservoir in self.reservoirs.values_mut() {
                reservoir.volume = reservoir.capacity;
            }
        }
        Ok(None)
    }
}

// ---------------------------------------------------------------------------
// Sealer / peeler
// ---------------------------------------------------------------------------

/// Applies a seal to the plate at its nest.
pub struct SealerDevice {
    world: SharedWorld,
    model: String,
    station: String,
    fault: FaultSlot,
}

impl SealerDevice {
    pub fn new(world: SharedWorld, model: &str, station: &str) -> SealerDevice {
        SealerDevice {
            world,
            model: model.to_string(),
            station: station.to_string(),
            fault: FaultSlot::default(),
        }
    }
}

impl Device for SealerDevice {
    fn model(&self) -> String {
        self.model.clone()
    }

    fn perform(
        &mut self,
        handle: &str,
        vars: &ActionVars,
    ) -> Result<Option<Map<String, Value>>, DeviceFault> {
        charge(&self.world, handle, self, vars);
        if self.fault.consume()? {
            return Ok(None);
        }
        if handle != "seal" {
            return Err(DeviceFault::new("UNKNOWN_ACTION", format!("`{handle}` not implemented")));
        }
        let mut world = self.world.lock().unwrap();
        let plate = world
            .plate_at_mut(&self.station)
            .ok_or_else(|| no_plate(&self.station))?;
        if plate.sealed {
            return Err(DeviceFault::new("ALREADY_SEALED", "plate is already sealed"));
        }
        if plate.lidded {
            return Err(DeviceFault::new("LIDDED", "remove the lid before sealing"));
        }
        plate.sealed = true;
        Ok(None)
    }

    fn admin(
        &mut self,
        command: &str,
        args: &ActionVars,
    ) -> Result<Option<Map<String, Value>>, DeviceFault> {
        common_admin(&mut self.fault, command, args).unwrap_or(Ok(None))
    }
}

/// Removes the seal from the plate at its nest.
pub struct PeelerDevice {
    world: SharedWorld,
    model: String,
    station: String,
    fault: FaultSlot,
}

impl PeelerDevice {
    pub fn new(world: SharedWorld, model: &str, station: &str) -> PeelerDevice {
        PeelerDevice {
            world,
            model: model.to_string(),
            station: station.to_string(),
            fault: FaultSlot::default(),
        }
    }
}

impl Device for PeelerDevice {
    fn model(&self) -> String {
        self.model.clone()
    }

    fn perform(
        &mut self,
        handle: &str,
        vars: &ActionVars,
    ) -> Result<Option<Map<String, Value>>, DeviceFault> {
        charge(&self.world, handle, self, vars);
        if self.fault.consume()? {
            return Ok(None);
        }
        if handle != "peel" {
            return Err(DeviceFault::new("UNKNOWN_ACTION", format!("`{handle}` not implemented")));
        }
        let mut world = self.world.lock().unwrap();
        let plate = world
            .plate_at_mut(&self.station)
            .ok_or_else(|| no_plate(&self.station))?;
        if !plate.sealed {
            return Err(DeviceFault::new("NOT_SEALED", "plate has no seal to peel"));
        }
        plate.sealed = false;
        Ok(None)
    }

    fn admin(
        &mut self,
        command: &str,
        args: &ActionVars,
    ) -> Result<Option<Map<String, Value>>, DeviceFault> {
        common_admin(&mut self.fault, command, args).unwrap_or(Ok(None))
    }
}

// ---------------------------------------------------------------------------
// Thermocycler (biometra)
// ---------------------------------------------------------------------------

/// Thermocycler with its own lid; runs named programs on the sealed plate in
/// its block.
pub struct ThermocyclerDevice {
    world: SharedWorld,
    model: String,
    station: String,
    /// Device lid; starts open so a plate can be inserted.
    lid_open: bool,
    fault: FaultSlot,
}

impl ThermocyclerDevice {
    pub fn new(world: SharedWorld, model: &str, station: &str) -> ThermocyclerDevice {
        ThermocyclerDevice {
            world,
            model: model.to_string(),
            station: station.to_string(),
            lid_open: true,
            fault: FaultSlot::default(),
        }
    }
}

impl Device for ThermocyclerDevice {
    fn model(&self) -> String {
        self.model.clone()
    }

    fn perform(
        &mut self,
        handle: &str,
        vars: &ActionVars,
    ) -> Result<Option<Map<String, Value>>, DeviceFault> {
        charge(&self.world, handle, self, vars);
        if self.fault.consume()? {
            return Ok(None);
        }
        match handle {
            "open_lid" => {
                if self.lid_open {
                    return Err(DeviceFault::new("LID_ALREADY_OPEN", "lid is already open"));
                }
                self.lid_open = true;
                Ok(None)
            }
            "close_lid" => {
                if !self.lid_open {
                    return Err(DeviceFault::new("LID_ALREADY_CLOSED", "lid is already closed"));
                }
                self.lid_open = false;
                Ok(None)
            }
            "run_program" => {
                let program = str_var(vars, "program")?;
                if self.lid_open {
                    return Err(DeviceFault::new("LID_OPEN", "close the lid before running"));
                }
                let mut world = self.world.lock().unwrap();
                let plate = world
                    .plate_at_mut(&self.station)
                    .ok_or_else(|| no_plate(&self.station))?;
                if !plate.sealed {
                    return Err(DeviceFault::new("NOT_SEALED", "plate must be sealed for cycling"));
                }
                plate.programs.push(program.to_string());
                Ok(None)
            }
            other => Err(DeviceFault::new("UNKNOWN_ACTION", format!("`{other}` not implemented"))),
        }
    }

    fn admin(
        &mut self,
        command: &str,
        args: &ActionVars,
    ) -> Result<Option<Map<String, Value>>, DeviceFault> {
        common_admin(&mut self.fault, command, args).unwrap_or(Ok(None))
    }
}

// ---------------------------------------------------------------------------
// Camera
// ---------------------------------------------------------------------------

/// Overhead camera reporting per-well colors with Gaussian pixel noise.
pub struct CameraDevice {
    world: SharedWorld,
    station: String,
    fault: FaultSlot,
}

impl CameraDevice {
    pub fn new(world: SharedWorld, station: &str) -> CameraDevice {
        CameraDevice {
            world,
            station: station.to_string(),
            fault: FaultSlot::default(),
        }
    }
}

impl Device for CameraDevice {
    fn model(&self) -> String {
        "camera".to_string()
    }

    fn perform(
        &mut self,
        handle: &str,
        vars: &ActionVars,
    ) -> Result<Option<Map<String, Value>>, DeviceFault> {
        charge(&self.world, handle, self, vars);
        if self.fault.consume()? {
            return Ok(None);
        }
        if handle != "grab_image" {
            return Err(DeviceFault::new("UNKNOWN_ACTION", format!("`{handle}` not implemented")));
        }
        let mut world = self.world.lock().unwrap();
        let sigma = world.camera_sigma;
        let (colors, clock) = {
            let plate = world
                .plate_at(&self.station)
                .ok_or_else(|| no_plate(&self.station))?;
            if plate.lidded {
                return Err(DeviceFault::new("LIDDED", "cannot image through a plate lid"));
            }
            let colors: Vec<(usize, [u8; 3])> = plate
                .wells
                .iter()
                .enumerate()
                .filter(|(_, w)| !w.is_empty())
                .map(|(i, w)| (i, w.color))
                .collect();
            (colors, world.clock)
        };
        let mut wells = Map::new();
        for (index, color) in colors {
            let noisy: Vec<f64> = color
                .iter()
                .map(|&c| (c as f64 + world.noise(sigma)).round().clamp(0.0, 255.0))
                .collect();
            wells.insert(well_name(index), json!(noisy));
        }
        let mut data = Map::new();
        data.insert("wells".to_string(), Value::Object(wells));
        data.insert("clock".to_string(), json!(clock));
        Ok(Some(data))
    }

    fn admin(
        &mut self,
        command: &str,
        args: &ActionVars,
    ) -> Result<Option<Map<String, Value>>, DeviceFault> {
        common_admin(&mut self.fault, command, args).unwrap_or(Ok(None))
    }
}

// ---------------------------------------------------------------------------
// Plate readers (hidex, tecan)
// ---------------------------------------------------------------------------

/// Absorbance reader reporting per-well optical density with noise.
pub struct ReaderDevice {
    world: SharedWorld,
    model: String,
    station: String,
    /// Only meaningful for models with lid actions (hidex); starts open so a
    /// plate can be loaded.
    lid_open: bool,
    fault: FaultSlot,
}

impl ReaderDevice {
    pub fn new(world: SharedWorld, model: &str, station: &str) -> ReaderDevice {
        ReaderDevice {
            world,
            model: model.to_string(),
            station: station.to_string(),
            lid_open: true,
            fault: FaultSlot::default(),
        }
    }

    fn has_lid(&self) -> bool {
        self.model == "hidex"
    }
}

impl Device for ReaderDevice {
    fn model(&self) -> String {
        self.model.clone()
    }

    fn perform(
        &mut self,
        handle: &str,
        vars: &ActionVars,
    ) -> Result<Option<Map<String, Value>>, DeviceFault> {
        charge(&self.world, handle, self, vars);
        if self.fault.consume()? {
            return Ok(None);
        }
        match handle {
            "open_lid" if self.has_lid() => {
                if self.lid_open {
                    return Err(DeviceFault::new("LID_ALREADY_OPEN", "lid is already open"));
                }
                self.lid_open = true;
                Ok(None)
            }
            "close_lid" if self.has_lid() => {
                if !self.lid_open {
                    return Err(DeviceFault::new("LID_ALREADY_CLOSED", "lid is already closed"));
                }
                self.lid_open = false;
                Ok(None)
            }
            "measure_sample" => {
                if self.has_lid() && self.lid_open {
                    return Err(DeviceFault::new("LID_OPEN", "close the lid before measuring"));
                }
                let mut world = self.world.lock().unwrap();
                let (sigma, baseline) = (world.od_sigma, world.od_baseline);
                let readings: Vec<(usize, f64)> = {
                    let plate = world
                        .plate_at(&self.station)
                        .ok_or_else(|| no_plate(&self.station))?;
                    plate
                        .wells
                        .iter()
                        .enumerate()
                        .filter(|(_, w)| !w.is_empty())
                        .map(|(i, w)| (i, w.od))
                        .collect()
                };
                let clock = world.clock;
                let mut od = Map::new();
                for (index, value) in readings {
                    od.insert(well_name(index), json!(baseline + value + world.noise(sigma)));
                }
                let mut data = Map::new();
                data.insert("od".to_string(), Value::Object(od));
                data.insert("clock".to_string(), json!(clock));
                Ok(Some(data))
            }
            other => Err(DeviceFault::new("UNKNOWN_ACTION", format!("`{other}` not implemented"))),
        }
    }

    fn admin(
        &mut self,
        command: &str,
        args: &ActionVars,
    ) -> Result<Option<Map<String, Value>>, DeviceFault> {
        common_admin(&mut self.fault, command, args).unwrap_or(Ok(None))
    }
}

// ---------------------------------------------------------------------------
// Incubator (liconic)
// ---------------------------------------------------------------------------

const TEMP_TAU_SECONDS: f64 = 300.0;

/// Incubator with internal slots, environmental control, and shaking. Plates
/// in its slots grow as the simulated clock advances.
pub struct IncubatorDevice {
    world: SharedWorld,
    /// Exchange nest used by `load_plate` / `unload_plate`.
    nest: String,
    /// Internal slot station names, registered with the world at build time.
    slots: Vec<String>,
    target_temp: f64,
    temp: f64,
    target_humidity: f64,
    humidity: f64,
    shaking: bool,
    last_clock: f64,
    fault: FaultSlot,
}

impl IncubatorDevice {
    pub fn new(world: SharedWorld, nest: &str, slots: Vec<String>) -> IncubatorDevice {
        IncubatorDevice {
            world,
            nest: nest.to_string(),
            slots,
            target_temp: 37.0,
            temp: 22.0,
            target_humidity: 95.0,
            humidity: 50.0,
            shaking: false,
            last_clock: 0.0,
            fault: FaultSlot::default(),
        }
    }

    /// Exponential first-order relaxation of temperature and humidity toward
    /// their targets over the simulated time since the last observation.
    fn relax(&mut self, clock: f64) {
        let dt = (clock - self.last_clock).max(0.0);
        let alpha = 1.0 - (-dt / TEMP_TAU_SECONDS).exp();
        self.temp += (self.target_temp - self.temp) * alpha;
        self.humidity += (self.target_humidity - self.humidity) * alpha;
        self.last_clock = clock;
    }
}

impl Device for IncubatorDevice {
    fn model(&self) -> String {
        "liconic".to_string()
    }

    fn resources(&self) -> ResourceLevels {
        let world = self.world.lock().unwrap();
        let free = self
            .slots
            .iter()
            .filter(|slot| world.station_occupied(slot) == Some(false))
            .count();
        let mut levels = IndexMap::new();
        levels.insert(
            "free_slots".to_string(),
            ResourceLevel {
                current: free as f64,
                capacity: self.slots.len() as f64,
                units: "slots".to_string(),
            },
        );
        ResourceLevels { levels }
    }

    fn perform(
        &mut self,
        handle: &str,
        vars: &ActionVars,
    ) -> Result<Option<Map<String, Value>>, DeviceFault> {
        charge(&self.world, handle, self, vars);
        if self.fault.consume()? {
            return Ok(None);
        }
        let clock = self.world.lock().unwrap().clock;
        self.relax(clock);
        match handle {
            "load_plate" => {
                let mut world = self.world.lock().unwrap();
                if world.station_occupied(&self.nest) != Some(true) {
                    return Err(no_plate(&self.nest));
                }
                let slot = self
                    .slots
                    .iter()
                    .find(|slot| world.station_occupied(slot) == Some(false))
                    .cloned()
                    .ok_or_else(|| DeviceFault::new("INCUBATOR_FULL", "no free slots"))?;
                world.move_plate(&self.nest, &slot)?;
                let mut data = Map::new();
                data.insert("slot".to_string(), json!(slot));
                Ok(Some(data))
            }
            "unload_plate" => {
                let mut world = self.world.lock().unwrap();
                if world.station_occupied(&self.nest) == Some(true) {
                    return Err(DeviceFault::new(
                        "TARGET_OCCUPIED",
                        format!("station `{}` already holds a plate", self.nest),
                    ));
                }
                let slot = self
                    .slots
                    .iter()
                    .find(|slot| world.station_occupied(slot) == Some(true))
                    .cloned()
                    .ok_or_else(|| DeviceFault::new("NO_PLATE", "no plates in the incubator"))?;
                world.move_plate(&slot, &self.nest)?;
                let mut data = Map::new();
                data.insert("slot".to_string(), json!(slot));
                Ok(Some(data))
            }
            "set_target_temp" => {
                self.target_temp = f64_var(vars, "temp")?;
                Ok(None)
            }
            "get_current_temp" => {
                let mut data = Map::new();
                data.insert("temp".to_string(), json!(self.temp));
                Ok(Some(data))
            }
            "set_target_humidity" => {
                self.target_humidity = f64_var(vars, "humidity")?;
                Ok(None)
            }
            "get_target_humidity" => {
                let mut data = Map::new();
                data.insert("humidity".to_string(), json!(self.target_humidity));
                Ok(Some(data))
            }
            "get_current_humidity" => {
                let mut data = Map::new();
                data.insert("humidity".to_string(), json!(self.humidity));
                Ok(Some(data))
            }
            "begin_shake" => {
                if self.shaking {
                    return Err(DeviceFault::new("ALREADY_SHAKING", "shaker is already running"));
                }
                self.shaking = true;
                Ok(None)
            }
            "end_shake" => {
                if !self.shaking {
                    return Err(DeviceFault::new("NOT_SHAKING", "shaker is not running"));
                }
                self.shaking = false;
                Ok(None)
            }
            other => Err(DeviceFault::new("UNKNOWN_ACTION", format!("`{other}` not implemented"))),
        }
    }

    fn admin(
        &mut self,
        command: &str,
        args: &ActionVars,
    ) -> Result<Option<Map<String, Value>>, DeviceFault> {
        common_admin(&mut self.fault, command, args).unwrap_or(Ok(None))
    }
}

// ---------------------------------------------------------------------------
// Stub (chemspeed, ur, mir)
// ---------------------------------------------------------------------------

/// No-op device for models whose effects are out of scope; it obeys the full
/// lifecycle and timing but changes nothing in the world.
pub struct StubDevice {
    world: SharedWorld,
    model: String,
    fault: FaultSlot,
}

impl StubDevice {
    pub fn new(world: SharedWorld, model: &str) -> StubDevice {
        StubDevice {
            world,
            model: model.to_string(),
            fault: FaultSlot::default(),
        }
    }
}

impl Device for StubDevice {
    fn model(&self) -> String {
        self.model.clone()
    }

    fn perform(
        &mut self,
        handle: &str,
        vars: &ActionVars,
    ) -> Result<Option<Map<String, Value>>, DeviceFault> {
        charge(&self.world, handle, self, vars);
        if self.fault.consume()? {
            return Ok(None);
        }
        Ok(None)
    }

    fn admin(
        &mut self,
        command: &str,
        args: &ActionVars,
    ) -> Result<Option<Map<String, Value>>, DeviceFault> {
        common_admin(&mut self.fault, command, args).unwrap_or(Ok(None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::{ActionRequest, ActionStatus, Node, NodeStatus};
    use crate::sim::shared_world;

    fn world_with(stations: &[&str]) -> SharedWorld {
        let world = shared_world(7);
        {
            let mut w = world.lock().unwrap();
            for s in stations {
                w.add_station(s);
            }
        }
        world
    }

    #[test]
    fn sciclops_dispenses_until_towers_empty() {
        let world = world_with(&["exchange", "elsewhere"]);
        let mut towers = IndexMap::new();
        towers.insert("tower1".to_string(), (2, 2));
        let node = Node::new(
            "sciclops",
            Box::new(SciclopsDevice::new(world.clone(), "exchange", towers)),
            0.0,
        );
        let get = ActionRequest::new("get_plate").with_var("pos", "tower1");
        assert_eq!(node.action(&get).status, ActionStatus::Succeeded);
        let transfer = ActionRequest::new("transfer")
            .with_var("source", "exchange")
            .with_var("target", "elsewhere");
        assert_eq!(node.action(&transfer).status, ActionStatus::Succeeded);
        assert_eq!(node.action(&get).status, ActionStatus::Succeeded);
        // Third plate: tower exhausted, node enters ERROR.
        let result = node.action(&get);
        assert_eq!(result.status, ActionStatus::Failed);
        assert!(result.detail.contains("TOWER_EMPTY"));
        assert_eq!(node.state().status, NodeStatus::Error);
        node.reset();
        assert_eq!(node.state().status, NodeStatus::Idle);
        // Refill restores the tower.
        let refilled = node.admin("refill", &IndexMap::new());
        assert_eq!(refilled.status, ActionStatus::Succeeded);
        assert_eq!(node.resources().levels["plates"].current, 2.0);
    }

    #[test]
    fn liquid_handler_mixes_colors_in_wells() {
        let world = world_with(&["deck"]);
        world.lock().unwrap().create_plate("deck").unwrap();
        let mut reservoirs = IndexMap::new();
        reservoirs.insert("red".to_string(), Reservoir::new([255, 0, 0], 1000.0));
        reservoirs.insert("blue".to_string(), Reservoir::new([0, 0, 255], 1000.0));
        let node = Node::new(
            "ot2",
            Box::new(LiquidHandlerDevice::new(world.clone(), "ot2", "deck", reservoirs, 10.0)),
            0.0,
        );
        let protocol = "name: t\ncommands:\n  - {source: red, destination: A1, volume: 50}\n  - {source: blue, destination: A1, volume: 50}\n";
        let result = node.action(&ActionRequest::new("run_protocol").with_var("protocol", protocol));
        assert_eq!(result.status, ActionStatus::Succeeded, "{}", result.detail);
        let w = world.lock().unwrap();
        let plate = w.plate_at("deck").unwrap();
        assert_eq!(plate.wells[0].color, [128, 0, 128]);
        assert_eq!(plate.wells[0].volume, 100.0);
        // Two commands took two tips and 2 x 2 simulated seconds.
        assert_eq!(node.resources().levels["tips"].current, 8.0);
        assert_eq!(w.clock, 4.0);
    }

    #[test]
    fn sealer_peeler_round_trip_and_idempotence_errors() {
        let world = world_with(&["nest"]);
        world.lock().unwrap().create_plate("nest").unwrap();
        let sealer = Node::new(
            "sealer",
            Box::new(SealerDevice::new(world.clone(), "a4s_sealer", "nest")),
            0.0,
        );
        let peeler = Node::new(
            "peeler",
            Box::new(PeelerDevice::new(world.clone(), "brooks_peeler", "nest")),
            0.0,
        );
        let peel_unsealed = peeler.action(&ActionRequest::new("peel"));
        assert!(peel_unsealed.detail.contains("NOT_SEALED"));
        peeler.reset();
        assert_eq!(sealer.action(&ActionRequest::new("seal")).status, ActionStatus::Succeeded);
        assert!(world.lock().unwrap().plate_at("nest").unwrap().sealed);
        let reseal = sealer.action(&ActionRequest::new("seal"));
        assert!(reseal.detail.contains("ALREADY_SEALED"));
        sealer.reset();
        assert_eq!(peeler.action(&ActionRequest::new("peel")).status, ActionStatus::Succeeded);
        assert!(!world.lock().unwrap().plate_at("nest").unwrap().sealed);
    }

    #[test]
    fn thermocycler_requires_closed_lid_and_sealed_plate() {
        let world = world_with(&["block"]);
        world.lock().unwrap().create_plate("block").unwrap();
        let node = Node::new(
            "biometra",
            Box::new(ThermocyclerDevice::new(world.clone(), "biometra", "block")),
            0.0,
        );
        let run = ActionRequest::new("run_program").with_var("program", "pcr_40cycles");
        let open = node.action(&run);
        assert!(open.detail.contains("LID_OPEN"));
        node.reset();
        assert_eq!(node.action(&ActionRequest::new("close_lid")).status, ActionStatus::Succeeded);
        let unsealed = node.action(&run);
        assert!(unsealed.detail.contains("NOT_SEALED"));
        node.reset();
        world.lock().unwrap().plate_at_mut("block").unwrap().sealed = true;
        assert_eq!(node.action(&run).status, ActionStatus::Succeeded);
        let w = world.lock().unwrap();
        assert_eq!(w.plate_at("block").unwrap().programs, vec!["pcr_40cycles".to_string()]);
    }

    #[test]
    fn camera_reads_colors_with_bounded_noise() {
        let world = world_with(&["stage"]);
        {
            let mut w = world.lock().unwrap();
            w.create_plate("stage").unwrap();
            w.plate_at_mut("stage").unwrap().wells[0].mix(100.0, [120, 120, 120], 0.0, 0.0, false);
        }
        let node = Node::new("camera", Box::new(CameraDevice::new(world.clone(), "stage")), 0.0);
        let result = node.action(&ActionRequest::new("grab_image"));
        assert_eq!(result.status, ActionStatus::Succeeded);
        let data = result.data.unwrap();
        let wells = data["wells"].as_object().unwrap();
        assert_eq!(wells.len(), 1);
        let rgb: Vec<f64> = wells["A1"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        for channel in rgb {
            assert!((channel - 120.0).abs() < 15.0, "noise far beyond 6 sigma: {channel}");
        }
    }

    #[test]
    fn incubator_cycles_plates_and_relaxes_temperature() {
        let world = world_with(&["nest"]);
        {
            let mut w = world.lock().unwrap();
            for i in 0..3 {
                let slot = format!("incubator_slot_{i}");
                w.add_station(&slot);
                w.incubator_stations.insert(slot);
            }
        }
        let slots: Vec<String> = (0..3).map(|i| format!("incubator_slot_{i}")).collect();
        let node = Node::new(
            "incubator",
            Box::new(IncubatorDevice::new(world.clone(), "nest", slots)),
            0.0,
        );
        world.lock().unwrap().create_plate("nest").unwrap();
        assert_eq!(node.action(&ActionRequest::new("load_plate")).status, ActionStatus::Succeeded);
        assert_eq!(node.resources().levels["free_slots"].current, 2.0);
        // Long wait: temperature converges to the 37 C target.
        world.lock().unwrap().advance(3600.0);
        let temp = node.action(&ActionRequest::new("get_current_temp"));
        let reading = temp.data.unwrap()["temp"].as_f64().unwrap();
        assert!((reading - 37.0).abs() < 0.1, "temp {reading}");
        assert_eq!(node.action(&ActionRequest::new("unload_plate")).status, ActionStatus::Succeeded);
        assert!(world.lock().unwrap().station_occupied("nest").unwrap());
    }

    #[test]
    fn silent_fault_reports_success_without_effect() {
        let world = world_with(&["a", "b"]);
        world.lock().unwrap().create_plate("a").unwrap();
        let node = Node::new(
            "arm",
            Box::new(ManipulatorDevice::new(world.clone(), "pf400", None)),
            0.0,
        );
        let mut args = IndexMap::new();
        args.insert("mode".to_string(), json!("silent"));
        assert_eq!(node.admin("inject_fault", &args).status, ActionStatus::Succeeded);
        let transfer = ActionRequest::new("transfer")
            .with_var("source", "a")
            .with_var("target", "b");
        let result = node.action(&transfer);
        // Reported success, but the plate never moved: an operational error.
        assert_eq!(result.status, ActionStatus::Succeeded);
        assert_eq!(world.lock().unwrap().station_occupied("b"), Some(false));
        assert_eq!(world.lock().unwrap().station_occupied("a"), Some(true));
        // Fault is one-shot; the next transfer really happens.
        let result = node.action(&transfer);
        assert_eq!(result.status, ActionStatus::Succeeded);
        assert_eq!(world.lock().unwrap().station_occupied("b"), Some(true));
    }

    #[test]
    fn fail_fault_drives_node_to_error_until_cleared() {
        let world = world_with(&["a", "b"]);
        world.lock().unwrap().create_plate("a").unwrap();
        let node = Node::new(
            "arm",
            Box::new(ManipulatorDevice::new(world.clone(), "pf400", None)),
            0.0,
        );
        let mut args = IndexMap::new();
        args.insert("mode".to_string(), json!("fail"));
        node.admin("inject_fault", &args);
        let transfer = ActionRequest::new("transfer")
            .with_var("source", "a")
            .with_var("target", "b");
        let result = node.action(&transfer);
        assert_eq!(result.status, ActionStatus::Failed);
        assert!(result.detail.contains("INJECTED_FAULT"));
        assert_eq!(node.state().status, NodeStatus::Error);
        // Actions are rejected while in ERROR.
        assert_eq!(node.action(&transfer).status, ActionStatus::Rejected);
        node.admin("clear_fault", &IndexMap::new());
        assert_eq!(node.state().status, NodeStatus::Idle);
        assert_eq!(node.action(&transfer).status, ActionStatus::Succeeded);
    }

    #[test]
    fn reach_restriction_is_enforced() {
        let world = world_with(&["a", "b", "c"]);
        world.lock().unwrap().create_plate("a").unwrap();
        let node = Node::new(
            "arm",
            Box::new(ManipulatorDevice::new(
                world.clone(),
                "pf400",
                Some(vec!["a".to_string(), "b".to_string()]),
            )),
            0.0,
        );
        let out_of_reach = ActionRequest::new("transfer")
            .with_var("source", "a")
            .with_var("target", "c");
        let result = node.action(&out_of_reach);
        assert!(result.detail.contains("UNREACHABLE"));
    }
}
