//! Bundled workcell and workflow documents.
//!
//! Two workcells are provided: `rpl_workcell` (full instrument set including
//! thermocycler and camera) and `bio_workcell` (a differently equipped cell
//! whose modules carry different names but expose the same station names).
//! The workflow documents cover the PCR run, the two-part growth assay for
//! both workcells, and the three color-picker building blocks.
//!
//! The raw YAML strings are exposed alongside parsed helpers so tests and
//! applications can either load them directly or mutate the text first.

use crate::specs::{parse_workcell, parse_workflow, WorkcellSpec, WorkflowSpec};

/// Workcell with sciclops/pf400/ot2/sealer/peeler/biometra/camera/hidex/liconic.
pub const RPL_WORKCELL: &str = include_str!("../fixtures/rpl_workcell.yaml");
/// Workcell with stacker/platecrane/solo/sealer/peeler/hidex/liconic. Station
/// names are identical to [`RPL_WORKCELL`] so workflows retarget by renaming
/// modules only.
pub const BIO_WORKCELL: &str = include_str!("../fixtures/bio_workcell.yaml");

/// PCR preparation, thermocycling, and imaging (RPL workcell).
pub const PCR_WORKFLOW: &str = include_str!("../fixtures/pcr_workflow.yaml");

/// Growth assay part 1: dose dispensing, seal, T0 read, incubator load (RPL).
pub const GROWTH_T0_RPL: &str = include_str!("../fixtures/growth_t0_rpl.yaml");
/// Growth assay part 2: incubator unload, peel, T12 read, handoff (RPL).
pub const GROWTH_T12_RPL: &str = include_str!("../fixtures/growth_t12_rpl.yaml");
/// Growth assay part 1 retargeted to the BIO workcell.
pub const GROWTH_T0_BIO: &str = include_str!("../fixtures/growth_t0_bio.yaml");
/// Growth assay part 2 retargeted to the BIO workcell.
pub const GROWTH_T12_BIO: &str = include_str!("../fixtures/growth_t12_bio.yaml");

/// Color picker: fetch a fresh plate onto the liquid-handler deck.
pub const CP_NEWPLATE: &str = include_str!("../fixtures/cp_newplate.yaml");
/// Color picker: mix one batch of candidate colors and image the plate.
/// Takes the mixing protocol via `payload.protocol`.
pub const CP_MIXCOLOR: &str = include_str!("../fixtures/cp_mixcolor.yaml");
/// Color picker: discard the current plate.
pub const CP_TRASHPLATE: &str = include_str!("../fixtures/cp_trashplate.yaml");

fn workcell(text: &str) -> WorkcellSpec {
    parse_workcell(text).expect("bundled workcell fixture parses")
}

fn workflow(text: &str) -> WorkflowSpec {
    parse_workflow(text).expect("bundled workflow fixture parses")
}

/// Parsed [`RPL_WORKCELL`].
pub fn rpl_workcell() -> WorkcellSpec {
    workcell(RPL_WORKCELL)
}

/// Parsed [`BIO_WORKCELL`].
pub fn bio_workcell() -> WorkcellSpec {
    workcell(BIO_WORKCELL)
}

/// [`rpl_workcell`] with the ot2 color reservoirs replaced.
///
/// `colors` maps onto the `red`, `green`, and `blue` reservoirs in order.
/// Useful for experiments that need exactly-known input colors (for example
/// pure primaries, where the mixed color has a closed form).
pub fn rpl_workcell_with_colors(colors: [[u8; 3]; 3]) -> WorkcellSpec {
    let mut spec = rpl_workcell();
    let ot2 = spec
        .modules
        .iter_mut()
        .find(|m| m.name == "ot2")
        .expect("rpl workcell has ot2");
    let reservoirs = ot2
        .config
        .get_mut("reservoirs")
        .and_then(|v| v.as_object_mut())
        .expect("ot2 config has reservoirs");
    for (name, color) in ["red", "green", "blue"].iter().zip(colors) {
        let entry = reservoirs
            .get_mut(*name)
            .and_then(|v| v.as_object_mut())
            .expect("color reservoir present");
        entry.insert(
            "color".to_string(),
            serde_json::json!([color[0], color[1], color[2]]),
        );
    }
    spec
}

/// Parsed [`PCR_WORKFLOW`].
pub fn pcr_workflow() -> WorkflowSpec {
    workflow(PCR_WORKFLOW)
}

/// Parsed growth-assay workflows for the RPL workcell: (T0, T12).
pub fn growth_workflows_rpl() -> (WorkflowSpec, WorkflowSpec) {
    (workflow(GROWTH_T0_RPL), workflow(GROWTH_T12_RPL))
}

/// Parsed growth-assay workflows for the BIO workcell: (T0, T12).
pub fn growth_workflows_bio() -> (WorkflowSpec, WorkflowSpec) {
    (workflow(GROWTH_T0_BIO), workflow(GROWTH_T12_BIO))
}

/// Parsed color-picker workflows: (new plate, mix batch, trash plate).
pub fn color_picker_workflows() -> (WorkflowSpec, WorkflowSpec, WorkflowSpec) {
    (
        workflow(CP_NEWPLATE),
        workflow(CP_MIXCOLOR),
        workflow(CP_TRASHPLATE),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specs::validate;

    #[test]
    fn all_fixtures_parse_and_cross_validate() {
        let rpl = rpl_workcell();
        let bio = bio_workcell();
        for wf in [
            pcr_workflow(),
            growth_workflows_rpl().0,
            growth_workflows_rpl().1,
            color_picker_workflows().0,
            color_picker_workflows().1,
            color_picker_workflows().2,
        ] {
            let report = validate(&wf, &rpl, None);
            assert!(report.ok, "{} vs rpl: {:?}", wf.name, report.findings);
        }
        for wf in [growth_workflows_bio().0, growth_workflows_bio().1] {
            let report = validate(&wf, &bio, None);
            assert!(report.ok, "{} vs bio: {:?}", wf.name, report.findings);
        }
    }

    #[test]
    fn growth_workflows_differ_only_in_module_names() {
        for (rpl_text, bio_text) in [
            (GROWTH_T0_RPL, GROWTH_T0_BIO),
            (GROWTH_T12_RPL, GROWTH_T12_BIO),
        ] {
            let renames = [
                ("sciclops", "stacker"),
                ("pf400", "platecrane"),
                ("ot2", "solo"),
            ];
            let mut rewritten = rpl_text.to_string();
            for (from, to) in renames {
                rewritten = rewritten.replace(from, to);
            }
            assert_eq!(rewritten, bio_text);
        }
    }

    #[test]
    fn color_override_replaces_reservoir_colors() {
        let spec = rpl_workcell_with_colors([[255, 0, 0], [0, 255, 0], [0, 0, 255]]);
        let ot2 = spec.modules.iter().find(|m| m.name == "ot2").unwrap();
        let reservoirs = ot2.config.get("reservoirs").unwrap();
        assert_eq!(
            reservoirs["red"]["color"],
            serde_json::json!([255, 0, 0])
        );
        assert_eq!(
            reservoirs["blue"]["color"],
            serde_json::json!([0, 0, 255])
        );
    }
}
