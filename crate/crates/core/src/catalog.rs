//! Static catalog of device models and the actions they support.
//!
//! The catalog backs both the simulated devices (their `about` reports are
//! generated from it) and workflow validation when no live module directory
//! is available.

use crate::node::{ActionSignature, ArgKind, ArgSpec};

/// Default argument keys treated as station references.
pub const STATION_ARG_KEYS: [&str; 3] = ["source", "target", "pos"];

fn arg(name: &str, kind: ArgKind) -> ArgSpec {
    ArgSpec {
        name: name.to_string(),
        kind,
        station: STATION_ARG_KEYS.contains(&name),
        required: true,
    }
}

fn station_arg(name: &str) -> ArgSpec {
    ArgSpec {
        name: name.to_string(),
        kind: ArgKind::String,
        station: true,
        required: true,
    }
}

fn sig(handle: &str, args: Vec<ArgSpec>, duration: f64) -> ActionSignature {
    ActionSignature {
        handle: handle.to_string(),
        args,
        duration,
        transfer: false,
    }
}

fn transfer_sig(duration: f64) -> ActionSignature {
    ActionSignature {
        handle: "transfer".to_string(),
        args: vec![station_arg("source"), station_arg("target")],
        duration,
        transfer: true,
    }
}

/// Actions for a device model, or `None` for unknown models.
pub fn actions_for_model(model: &str) -> Option<Vec<ActionSignature>> {
    let actions = match model {
        "sciclops" => vec![
            sig("home", vec![], 5.0),
            transfer_sig(10.0),
            sig("get_plate", vec![station_arg("pos")], 10.0),
        ],
        "pf400" => vec![
            sig("explore_workcell", vec![], 10.0),
            transfer_sig(10.0),
            sig("remove_lid", vec![station_arg("target")], 5.0),
            sig("replace_lid", vec![station_arg("target")], 5.0),
        ],
        "platecrane" => vec![
            transfer_sig(10.0),
            sig("remove_lid", vec![station_arg("target")], 5.0),
            sig("replace_lid", vec![station_arg("target")], 5.0),
        ],
        "ur" => vec![
            transfer_sig(10.0),
            sig("run_urp_program", vec![arg("program", ArgKind::String)], 30.0),
        ],
        "a4s_sealer" | "sealer" => vec![sig("seal", vec![], 5.0)],
        "brooks_peeler" | "peeler" => vec![sig("peel", vec![], 5.0)],
        "biometra" => vec![
            sig("open_lid", vec![], 2.0),
            sig("close_lid", vec![], 2.0),
            sig("run_program", vec![arg("program", ArgKind::String)], 600.0),
        ],
        "chemspeed" => vec![
            sig("open_lid", vec![], 2.0),
            sig("close_lid", vec![], 2.0),
            sig("run_program", vec![arg("program", ArgKind::String)], 600.0),
        ],
        "ot2" | "solo" => vec![sig("run_protocol", vec![arg("protocol", ArgKind::String)], 60.0)],
        "camera" => vec![sig("grab_image", vec![], 1.0)],
        "hidex" => vec![
            sig("open_lid", vec![], 2.0),
            sig("close_lid", vec![], 2.0),
            sig("measure_sample", vec![], 30.0),
        ],
        "tecan" => vec![sig("measure_sample", vec![], 30.0)],
        "liconic" => vec![
            sig("load_plate", vec![], 10.0),
            sig("unload_plate", vec![], 10.0),
            sig("set_target_temp", vec![arg("temp", ArgKind::Number)], 1.0),
            sig("get_current_temp", vec![], 1.0),
            sig("set_target_humidity", vec![arg("humidity", ArgKind::Number)], 1.0),
            sig("get_target_humidity", vec![], 1.0),
            sig("get_current_humidity", vec![], 1.0),
            sig("begin_shake", vec![], 1.0),
            sig("end_shake", vec![], 1.0),
        ],
        "mir" => vec![
            // `target` here is a named waypoint, not a workcell station.
            ActionSignature {
                handle: "move".to_string(),
                args: vec![ArgSpec {
                    name: "target".to_string(),
                    kind: ArgKind::String,
                    station: false,
                    required: true,
                }],
                duration: 60.0,
                transfer: false,
            },
            sig("dock", vec![], 30.0),
        ],
        _ => return None,
    };
    Some(actions)
}

/// Admin commands every simulated node understands.
pub const ADMIN_COMMANDS: [&str; 4] = ["home", "refill", "inject_fault", "clear_fault"];
