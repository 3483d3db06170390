//! YAML parsing for workcell and workflow documents.
//!
//! Parsing is hand-rolled over `serde_yaml::Value` so that schema errors can
//! name the offending document path (`modules[2].workcell_coordinates`), and
//! so unknown keys can be preserved rather than rejected.

use indexmap::IndexMap;
use serde_json::Value as Json;
use serde_yaml::Value as Yaml;
use thiserror::Error;

use super::{ModuleSpec, StationSpec, StepSpec, WorkcellSpec, WorkflowSpec};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
}

impl SpecError {
    fn at(path: impl Into<String>, message: impl Into<String>) -> SpecError {
        SpecError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Parse a workcell document.
pub fn parse_workcell(document: &str) -> Result<WorkcellSpec, SpecError> {
    let root = parse_yaml(document)?;
    let map = as_mapping(&root, "")?;

    let mut spec = WorkcellSpec {
        name: String::new(),
        config: IndexMap::new(),
        modules: Vec::new(),
        locations: IndexMap::new(),
        extra: IndexMap::new(),
    };
    let mut saw_modules = false;
    for (key, value) in map {
        let key = key_string(key, "")?;
        match key.as_str() {
            "name" => spec.name = string_value(value, "name")?,
            "config" => spec.config = scalar_map(value, "config")?,
            "modules" => {
                saw_modules = true;
                let list = as_sequence(value, "modules")?;
                for (i, entry) in list.iter().enumerate() {
                    spec.modules.push(parse_module(entry, &format!("modules[{i}]"))?);
                }
            }
            "locations" => {
                let locs = as_mapping(value, "locations")?;
                for (lkey, lval) in locs {
                    let lname = key_string(lkey, "locations")?;
                    let path = format!("locations.{lname}");
                    let station = parse_station(&lname, lval, &path)?;
                    spec.locations.insert(lname, station);
                }
            }
            _ => {
                spec.extra.insert(key, yaml_to_json(value, "")?);
            }
        }
    }
    if !saw_modules || spec.modules.is_empty() {
        return Err(SpecError::at("modules", "workcell must declare at least one module"));
    }
    check_workcell(&spec)?;
    Ok(spec)
}

/// Parse a workflow document.
pub fn parse_workflow(document: &str) -> Result<WorkflowSpec, SpecError> {
    let root = parse_yaml(document)?;
    let map = as_mapping(&root, "")?;

    let mut spec = WorkflowSpec {
        name: String::new(),
        metadata: IndexMap::new(),
        modules: Vec::new(),
        flowdef: Vec::new(),
        extra: IndexMap::new(),
    };
    for (key, value) in map {
        let key = key_string(key, "")?;
        match key.as_str() {
            "name" => spec.name = string_value(value, "name")?,
            "metadata" => spec.metadata = scalar_map(value, "metadata")?,
            "modules" => {
                let list = as_sequence(value, "modules")?;
                for (i, entry) in list.iter().enumerate() {
                    let path = format!("modules[{i}]");
                    // Accept either a bare name or a `{name: ...}` mapping.
                    let name = match entry {
                        Yaml::String(s) => s.clone(),
                        Yaml::Mapping(m) => {
                            let v = m
                                .get(Yaml::from("name"))
                                .ok_or_else(|| SpecError::at(&path, "missing `name`"))?;
                            string_value(v, &path)?
                        }
                        _ => return Err(SpecError::at(&path, "expected module name")),
                    };
                    spec.modules.push(name);
                }
            }
            "flowdef" => {
                let list = as_sequence(value, "flowdef")?;
                for (i, entry) in list.iter().enumerate() {
                    spec.flowdef.push(parse_step(entry, &format!("flowdef[{i}]"))?);
                }
            }
            _ => {
                spec.extra.insert(key, yaml_to_json(value, "")?);
            }
        }
    }
    if spec.flowdef.is_empty() {
        return Err(SpecError::at("flowdef", "workflow must contain at least one step"));
    }
    for (i, step) in spec.flowdef.iter().enumerate() {
        if !spec.modules.contains(&step.module) {
            return Err(SpecError::at(
                format!("flowdef[{i}] ({})", step.name),
                format!("step references module `{}` absent from the modules manifest", step.module),
            ));
        }
    }
    Ok(spec)
}

fn parse_module(value: &Yaml, path: &str) -> Result<ModuleSpec, SpecError> {
    let map = as_mapping(value, path)?;
    let mut name = None;
    let mut model = None;
    let mut interface = None;
    let mut config = IndexMap::new();
    let mut coords = None;
    for (key, v) in map {
        let key = key_string(key, path)?;
        let kpath = format!("{path}.{key}");
        match key.as_str() {
            "name" => name = Some(string_value(v, &kpath)?),
            "model" => model = Some(string_value(v, &kpath)?),
            "interface" => interface = Some(string_value(v, &kpath)?),
            "config" => config = scalar_map(v, &kpath)?,
            "workcell_coordinates" => {
                let nums = number_list(v, &kpath)?;
                if nums.len() != 7 {
                    return Err(SpecError::at(
                        &kpath,
                        format!("expected 7 values (position + quaternion), got {}", nums.len()),
                    ));
                }
                let quat_norm: f64 = nums[3..].iter().map(|q| q * q).sum::<f64>().sqrt();
                if (quat_norm - 1.0).abs() > 1e-6 {
                    return Err(SpecError::at(
                        &kpath,
                        format!("non-unit quaternion, norm {quat_norm:.4}"),
                    ));
                }
                let mut arr = [0.0; 7];
                arr.copy_from_slice(&nums);
                coords = Some(arr);
            }
            _ => {
                config.insert(key, yaml_to_json(v, &kpath)?);
            }
        }
    }
    Ok(ModuleSpec {
        name: name.ok_or_else(|| SpecError::at(format!("{path}.name"), "missing required field"))?,
        model: model.ok_or_else(|| SpecError::at(format!("{path}.model"), "missing required field"))?,
        interface: interface
            .ok_or_else(|| SpecError::at(format!("{path}.interface"), "missing required field"))?,
        config,
        workcell_coordinates: coords,
    })
}

fn parse_station(name: &str, value: &Yaml, path: &str) -> Result<StationSpec, SpecError> {
    // Stations are written either as a bare coordinate list or as a mapping
    // with `labware_type` and `coordinates`.
    let (labware_type, coordinates) = match value {
        Yaml::Sequence(_) => ("plate_96well".to_string(), number_list(value, path)?),
        Yaml::Mapping(m) => {
            let labware = match m.get(Yaml::from("labware_type")) {
                Some(v) => string_value(v, &format!("{path}.labware_type"))?,
                None => "plate_96well".to_string(),
            };
            let coords = m
                .get(Yaml::from("coordinates"))
                .ok_or_else(|| SpecError::at(format!("{path}.coordinates"), "missing required field"))?;
            (labware, number_list(coords, &format!("{path}.coordinates"))?)
        }
        _ => return Err(SpecError::at(path, "expected coordinate list or station mapping")),
    };
    if coordinates.len() != 3 && coordinates.len() != 7 {
        return Err(SpecError::at(
            path,
            format!("coordinate vector must have 3 or 7 elements, got {}", coordinates.len()),
        ));
    }
    Ok(StationSpec {
        name: name.to_string(),
        labware_type,
        coordinates,
    })
}

fn parse_step(value: &Yaml, path: &str) -> Result<StepSpec, SpecError> {
    let map = as_mapping(value, path)?;
    let mut step = StepSpec {
        name: String::new(),
        module: String::new(),
        command: String::new(),
        args: IndexMap::new(),
        comment: None,
    };
    for (key, v) in map {
        let key = key_string(key, path)?;
        let kpath = format!("{path}.{key}");
        match key.as_str() {
            "name" => step.name = string_value(v, &kpath)?,
            "module" => step.module = string_value(v, &kpath)?,
            "command" => step.command = string_value(v, &kpath)?,
            "args" => step.args = scalar_map(v, &kpath)?,
            "comment" => step.comment = Some(string_value(v, &kpath)?),
            _ => return Err(SpecError::at(&kpath, "unknown step key")),
        }
    }
    if step.module.is_empty() {
        return Err(SpecError::at(format!("{path}.module"), "missing required field"));
    }
    if step.command.is_empty() {
        return Err(SpecError::at(format!("{path}.command"), "missing required field"));
    }
    if step.name.is_empty() {
        step.name = format!("{}:{}", step.module, step.command);
    }
    Ok(step)
}

fn check_workcell(spec: &WorkcellSpec) -> Result<(), SpecError> {
    let mut seen = std::collections::HashSet::new();
    for m in &spec.modules {
        if !seen.insert(m.name.as_str()) {
            return Err(SpecError::at("modules", format!("duplicate module name `{}`", m.name)));
        }
    }
    for (name, station) in &spec.locations {
        if station.coordinates.iter().any(|c| !c.is_finite()) {
            return Err(SpecError::at(
                format!("locations.{name}"),
                "coordinates must be finite numbers",
            ));
        }
    }
    // Station-valued module config entries must point at known locations.
    for m in &spec.modules {
        for key in ["station", "exchange", "deck", "nest"] {
            if let Some(Json::String(s)) = m.config.get(key) {
                if !spec.locations.is_empty() && !spec.locations.contains_key(s) {
                    return Err(SpecError::at(
                        format!("modules.{}.config.{key}", m.name),
                        format!("references unknown station `{s}`"),
                    ));
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// YAML helpers

fn parse_yaml(document: &str) -> Result<Yaml, SpecError> {
    let value: Yaml =
        serde_yaml::from_str(document).map_err(|e| SpecError::Syntax(e.to_string()))?;
    Ok(value)
}

fn as_mapping<'a>(value: &'a Yaml, path: &str) -> Result<&'a serde_yaml::Mapping, SpecError> {
    value
        .as_mapping()
        .ok_or_else(|| SpecError::at(path, "expected a mapping"))
}

fn as_sequence<'a>(value: &'a Yaml, path: &str) -> Result<&'a Vec<Yaml>, SpecError> {
    match value {
        Yaml::Sequence(seq) => Ok(seq),
        _ => Err(SpecError::at(path, "expected a list")),
    }
}

fn key_string(key: &Yaml, path: &str) -> Result<String, SpecError> {
    key.as_str()
        .map(str::to_string)
        .ok_or_else(|| SpecError::at(path, "mapping keys must be strings"))
}

fn string_value(value: &Yaml, path: &str) -> Result<String, SpecError> {
    match value {
        Yaml::String(s) => Ok(s.clone()),
        Yaml::Number(n) => Ok(n.to_string()),
        _ => Err(SpecError::at(path, "expected a string")),
    }
}

fn number_list(value: &Yaml, path: &str) -> Result<Vec<f64>, SpecError> {
    let seq = as_sequence(value, path)?;
    seq.iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_f64()
                .filter(|f| f.is_finite())
                .ok_or_else(|| SpecError::at(format!("{path}[{i}]"), "expected a finite number"))
        })
        .collect()
}

/// Convert a YAML value into JSON, rejecting YAML-only constructs.
fn yaml_to_json(value: &Yaml, path: &str) -> Result<Json, SpecError> {
    match value {
        Yaml::Null => Ok(Json::Null),
        Yaml::Bool(b) => Ok(Json::Bool(*b)),
        Yaml::Number(n) => {
            if let Some(i) = n.as_i64() {
                Ok(Json::from(i))
            } else if let Some(f) = n.as_f64() {
                serde_json::Number::from_f64(f)
                    .map(Json::Number)
                    .ok_or_else(|| SpecError::at(path, "non-finite number"))
            } else {
                Err(SpecError::at(path, "unsupported number"))
            }
        }
        Yaml::String(s) => Ok(Json::String(s.clone())),
        Yaml::Sequence(seq) => {
            let items: Result<Vec<_>, _> = seq
                .iter()
                .enumerate()
                .map(|(i, v)| yaml_to_json(v, &format!("{path}[{i}]")))
                .collect();
            Ok(Json::Array(items?))
        }
        Yaml::Mapping(map) => {
            let mut out = serde_json::Map::new();
            for (k, v) in map {
                let key = key_string(k, path)?;
                out.insert(key.clone(), yaml_to_json(v, &format!("{path}.{key}"))?);
            }
            Ok(Json::Object(out))
        }
        Yaml::Tagged(_) => Err(SpecError::at(path, "YAML tags are not supported")),
    }
}

/// Scalar-valued map (module/workcell config, step args, metadata).
/// Nested values are allowed in config maps and preserved as JSON.
fn scalar_map(value: &Yaml, path: &str) -> Result<IndexMap<String, Json>, SpecError> {
    match value {
        Yaml::Null => Ok(IndexMap::new()),
        Yaml::Mapping(map) => {
            let mut out = IndexMap::new();
            for (k, v) in map {
                let key = key_string(k, path)?;
                out.insert(key.clone(), yaml_to_json(v, &format!("{path}.{key}"))?);
            }
            Ok(out)
        }
        _ => Err(SpecError::at(path, "expected a mapping")),
    }
}
