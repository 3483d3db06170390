//! Workcell and workflow specification documents.
//!
//! Both documents are YAML. A workcell lists the modules that make it up
//! (with adapter configuration and physical coordinates) plus the named
//! stations where labware can sit. A workflow names the modules it needs and
//! an ordered `flowdef` of steps, each step invoking one command on one
//! module.

mod parse;
mod validate;

pub use parse::{parse_workcell, parse_workflow, SpecError};
pub use validate::{validate, Finding, ModuleDirectory, Severity, ValidationReport};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Transport binding used to reach a module node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    Rest,
    Tcp,
    Loopback,
}

impl AdapterKind {
    /// Resolve an `interface:` string from a workcell document.
    ///
    /// Besides the three literal kinds, a few legacy interface names are
    /// mapped onto the loopback adapter. The mapping can be extended through
    /// workcell config entries of the form `interface_alias.<name>: <kind>`.
    pub fn resolve(interface: &str, config: &IndexMap<String, Value>) -> Option<AdapterKind> {
        let alias_key = format!("interface_alias.{interface}");
        if let Some(Value::String(kind)) = config.get(&alias_key) {
            return AdapterKind::from_name(kind);
        }
        AdapterKind::from_name(interface).or(match interface {
            "wei_ros_node" | "wei_ros2_node" | "ros" | "epics" => Some(AdapterKind::Loopback),
            "wei_rest_node" => Some(AdapterKind::Rest),
            "wei_tcp_node" => Some(AdapterKind::Tcp),
            _ => None,
        })
    }

    fn from_name(name: &str) -> Option<AdapterKind> {
        match name {
            "rest" => Some(AdapterKind::Rest),
            "tcp" => Some(AdapterKind::Tcp),
            "loopback" => Some(AdapterKind::Loopback),
            _ => None,
        }
    }
}

/// One module entry in a workcell document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleSpec {
    pub name: String,
    pub model: String,
    /// Raw `interface:` value as written in the document; resolve with
    /// [`AdapterKind::resolve`]. Kept verbatim so reserialization round-trips.
    pub interface: String,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub config: IndexMap<String, Value>,
    /// Position (x, y, z, millimetres) plus unit quaternion (w, x, y, z).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workcell_coordinates: Option<[f64; 7]>,
}

impl ModuleSpec {
    pub fn adapter(&self, workcell_config: &IndexMap<String, Value>) -> Option<AdapterKind> {
        AdapterKind::resolve(&self.interface, workcell_config)
    }
}

/// A named labware position within a workcell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSpec {
    pub name: String,
    pub labware_type: String,
    /// 3-vector pose or seven-element joint vector, kept opaque.
    pub coordinates: Vec<f64>,
}

/// Declarative description of a workcell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkcellSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub config: IndexMap<String, Value>,
    pub modules: Vec<ModuleSpec>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub locations: IndexMap<String, StationSpec>,
    /// Unknown top-level keys, preserved for forward compatibility.
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub extra: IndexMap<String, Value>,
}

impl WorkcellSpec {
    pub fn module(&self, name: &str) -> Option<&ModuleSpec> {
        self.modules.iter().find(|m| m.name == name)
    }

    /// Serialize back to the external document format.
    pub fn to_yaml(&self) -> String {
        let mut doc = serde_yaml::Mapping::new();
        doc.insert("name".into(), self.name.clone().into());
        if !self.config.is_empty() {
            doc.insert("config".into(), json_map_to_yaml(&self.config));
        }
        let modules: Vec<serde_yaml::Value> = self
            .modules
            .iter()
            .map(|m| {
                let mut entry = serde_yaml::Mapping::new();
                entry.insert("name".into(), m.name.clone().into());
                entry.insert("model".into(), m.model.clone().into());
                entry.insert("interface".into(), m.interface.clone().into());
                if !m.config.is_empty() {
                    entry.insert("config".into(), json_map_to_yaml(&m.config));
                }
                if let Some(coords) = &m.workcell_coordinates {
                    entry.insert(
                        "workcell_coordinates".into(),
                        serde_yaml::Value::Sequence(coords.iter().map(|c| (*c).into()).collect()),
                    );
                }
                serde_yaml::Value::Mapping(entry)
            })
            .collect();
        doc.insert("modules".into(), serde_yaml::Value::Sequence(modules));
        if !self.locations.is_empty() {
            let mut locs = serde_yaml::Mapping::new();
            for (name, station) in &self.locations {
                let mut entry = serde_yaml::Mapping::new();
                entry.insert("labware_type".into(), station.labware_type.clone().into());
                entry.insert(
                    "coordinates".into(),
                    serde_yaml::Value::Sequence(
                        station.coordinates.iter().map(|c| (*c).into()).collect(),
                    ),
                );
                locs.insert(name.clone().into(), serde_yaml::Value::Mapping(entry));
            }
            doc.insert("locations".into(), serde_yaml::Value::Mapping(locs));
        }
        for (key, value) in &self.extra {
            doc.insert(key.clone().into(), json_to_yaml(value));
        }
        serde_yaml::to_string(&serde_yaml::Value::Mapping(doc)).expect("workcell spec serializes")
    }
}

fn json_to_yaml(value: &Value) -> serde_yaml::Value {
    serde_yaml::to_value(value).expect("json value converts to yaml")
}

fn json_map_to_yaml(map: &IndexMap<String, Value>) -> serde_yaml::Value {
    let mut out = serde_yaml::Mapping::new();
    for (k, v) in map {
        out.insert(k.clone().into(), json_to_yaml(v));
    }
    serde_yaml::Value::Mapping(out)
}

/// One step of a workflow `flowdef`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSpec {
    pub name: String,
    pub module: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub args: IndexMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
}

/// A named sequence of (module, command, args) steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub metadata: IndexMap<String, Value>,
    pub modules: Vec<String>,
    pub flowdef: Vec<StepSpec>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub extra: IndexMap<String, Value>,
}

impl WorkflowSpec {
    /// Serialize back to the external document format.
    pub fn to_yaml(&self) -> String {
        let mut doc = serde_yaml::Mapping::new();
        doc.insert("name".into(), self.name.clone().into());
        if !self.metadata.is_empty() {
            doc.insert("metadata".into(), json_map_to_yaml(&self.metadata));
        }
        doc.insert(
            "modules".into(),
            serde_yaml::Value::Sequence(self.modules.iter().map(|m| m.clone().into()).collect()),
        );
        let steps: Vec<serde_yaml::Value> = self
            .flowdef
            .iter()
            .map(|s| {
                let mut entry = serde_yaml::Mapping::new();
                entry.insert("name".into(), s.name.clone().into());
                entry.insert("module".into(), s.module.clone().into());
                entry.insert("command".into(), s.command.clone().into());
                if !s.args.is_empty() {
                    entry.insert("args".into(), json_map_to_yaml(&s.args));
                }
                if let Some(comment) = &s.comment {
                    entry.insert("comment".into(), comment.clone().into());
                }
                serde_yaml::Value::Mapping(entry)
            })
            .collect();
        doc.insert("flowdef".into(), serde_yaml::Value::Sequence(steps));
        for (key, value) in &self.extra {
            doc.insert(key.clone().into(), json_to_yaml(value));
        }
        serde_yaml::to_string(&serde_yaml::Value::Mapping(doc)).expect("workflow spec serializes")
    }
}
