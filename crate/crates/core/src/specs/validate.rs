//! Cross-validation of a workflow against a workcell.
//!
//! Checks run in a fixed order: undefined modules, unknown actions, unknown
//! stations in station-valued args, then (with a live module directory)
//! offline modules. All problems are findings; nothing here talks to
//! hardware except through the supplied directory snapshot.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{WorkcellSpec, WorkflowSpec};
use crate::catalog::actions_for_model;
use crate::node::{AboutInfo, ActionSignature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub code: String,
    pub message: String,
    /// Step or module the finding refers to.
    pub subject: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn has_code(&self, code: &str) -> bool {
        self.findings.iter().any(|f| f.code == code)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }
}

/// Live view of the modules behind a workcell, used when validation should
/// check real `about` reports and reachability instead of the static catalog.
pub trait ModuleDirectory {
    fn about(&self, module: &str) -> Option<AboutInfo>;
    fn online(&self, module: &str) -> bool;
}

pub fn validate(
    workflow: &WorkflowSpec,
    workcell: &WorkcellSpec,
    live: Option<&dyn ModuleDirectory>,
) -> ValidationReport {
    let mut findings = Vec::new();

    // 1. Modules listed in the workflow must be defined in the workcell.
    for name in &workflow.modules {
        if workcell.module(name).is_none() {
            findings.push(Finding {
                severity: Severity::Error,
                code: "UNDEFINED_MODULE".to_string(),
                message: format!("workflow module `{name}` is not defined in workcell `{}`", workcell.name),
                subject: name.clone(),
            });
        }
    }

    // 2. Every step's command must exist on its module, per the live `about`
    // report when available, else per the static catalog for the model.
    for step in &workflow.flowdef {
        let Some(module) = workcell.module(&step.module) else {
            continue; // already reported above
        };
        let signatures = live
            .and_then(|dir| dir.about(&step.module))
            .map(|about| about.actions)
            .or_else(|| actions_for_model(&module.model));
        let Some(signatures) = signatures else {
            findings.push(Finding {
                severity: Severity::Warning,
                code: "UNKNOWN_MODEL".to_string(),
                message: format!(
                    "model `{}` of module `{}` has no action catalog entry; step not checkable",
                    module.model, step.module
                ),
                subject: step.name.clone(),
            });
            continue;
        };
        let Some(signature) = signatures.iter().find(|s| s.handle == step.command) else {
            findings.push(Finding {
                severity: Severity::Error,
                code: "UNKNOWN_ACTION".to_string(),
                message: format!(
                    "module `{}` (model `{}`) has no action `{}`",
                    step.module, module.model, step.command
                ),
                subject: step.name.clone(),
            });
            continue;
        };
        check_step_args(step, signature, workcell, &mut findings);
    }

    // 4. With a live directory, every workcell-defined workflow module must
    // answer a ping.
    if let Some(dir) = live {
        for name in &workflow.modules {
            if workcell.module(name).is_some() && !dir.online(name) {
                findings.push(Finding {
                    severity: Severity::Error,
                    code: "MODULE_OFFLINE".to_string(),
                    message: format!("module `{name}` did not respond to a state query"),
                    subject: name.clone(),
                });
            }
        }
    }

    // Advisory findings.
    for name in &workflow.modules {
        if !workflow.flowdef.iter().any(|s| &s.module == name) {
            findings.push(Finding {
                severity: Severity::Warning,
                code: "UNUSED_MODULE".to_string(),
                message: format!("module `{name}` is listed but never used in flowdef"),
                subject: name.clone(),
            });
        }
    }
    for key in workflow.extra.keys() {
        findings.push(unknown_key_finding(key, "workflow"));
    }
    for key in workcell.extra.keys() {
        findings.push(unknown_key_finding(key, "workcell"));
    }

    let ok = !findings.iter().any(|f| f.severity == Severity::Error);
    ValidationReport { ok, findings }
}

fn check_step_args(
    step: &super::StepSpec,
    signature: &ActionSignature,
    workcell: &WorkcellSpec,
    findings: &mut Vec<Finding>,
) {
    for arg in &signature.args {
        if arg.required && !step.args.contains_key(&arg.name) {
            findings.push(Finding {
                severity: Severity::Error,
                code: "BAD_ARGS".to_string(),
                message: format!("step is missing required arg `{}`", arg.name),
                subject: step.name.clone(),
            });
        }
    }
    for (key, value) in &step.args {
        let Some(arg) = signature.args.iter().find(|a| &a.name == key) else {
            findings.push(Finding {
                severity: Severity::Error,
                code: "BAD_ARGS".to_string(),
                message: format!("action `{}` does not take arg `{key}`", signature.handle),
                subject: step.name.clone(),
            });
            continue;
        };
        // 3. Station-valued args must name known stations. Payload
        // placeholders are resolved at dispatch and skipped here.
        if arg.station {
            if let Value::String(station) = value {
                if !station.starts_with("payload.") && !workcell.locations.contains_key(station) {
                    findings.push(Finding {
                        severity: Severity::Error,
                        code: "UNKNOWN_STATION".to_string(),
                        message: format!("arg `{key}` references unknown station `{station}`"),
                        subject: step.name.clone(),
                    });
                }
            }
        }
    }
}

fn unknown_key_finding(key: &str, which: &str) -> Finding {
    Finding {
        severity: Severity::Warning,
        code: "UNKNOWN_KEY".to_string(),
        message: format!("unknown top-level key `{key}` in {which} document (preserved)"),
        subject: key.to_string(),
    }
}
