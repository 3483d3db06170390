//! Liquid-handler protocol files.
//!
//! A protocol is an ordered list of transfer commands, each moving a volume
//! from a named reservoir on the liquid handler into a plate well:
//!
//! ```yaml
//! name: mix colors
//! commands:
//!   - source: red
//!     destination: A1
//!     volume: 50.0
//! ```

use serde::{Deserialize, Serialize};

use super::world::well_index;
use crate::specs::SpecError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferCommand {
    /// Reservoir name on the liquid handler.
    pub source: String,
    /// Destination well, e.g. "A1".
    pub destination: String,
    /// Microlitres to dispense.
    pub volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub name: String,
    pub commands: Vec<TransferCommand>,
}

impl ProtocolSpec {
    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("protocol serializes")
    }
}

pub fn parse_protocol(document: &str) -> Result<ProtocolSpec, SpecError> {
    let spec: ProtocolSpec =
        serde_yaml::from_str(document).map_err(|e| SpecError::Syntax(e.to_string()))?;
    for (i, command) in spec.commands.iter().enumerate() {
        let path = format!("commands[{i}]");
        if command.volume <= 0.0 || !command.volume.is_finite() {
            return Err(SpecError::Schema {
                path: format!("{path}.volume"),
                message: format!("volume must be positive, got {}", command.volume),
            });
        }
        if well_index(&command.destination).is_none() {
            return Err(SpecError::Schema {
                path: format!("{path}.destination"),
                message: format!("`{}` is not a well of a 96-well plate", command.destination),
            });
        }
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_validates_wells() {
        let doc = "name: t\ncommands:\n  - source: red\n    destination: A1\n    volume: 50\n";
        let spec = parse_protocol(doc).unwrap();
        assert_eq!(spec.commands.len(), 1);

        let bad = "name: t\ncommands:\n  - source: red\n    destination: Z9\n    volume: 50\n";
        assert!(parse_protocol(bad).is_err());

        let negative = "name: t\ncommands:\n  - source: red\n    destination: A1\n    volume: -1\n";
        assert!(parse_protocol(negative).is_err());
    }
}
