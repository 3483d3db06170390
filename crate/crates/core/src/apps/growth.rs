//! Two-part growth assay with a dose–response readout.
//!
//! Part one builds an assay plate (a concentration gradient of an inhibitor
//! across the columns, replicate rows down the plate), seals it, takes the
//! T0 absorbance, and loads the incubator. After a simulated incubation the
//! second part unloads, peels, and takes the final read. The report is the
//! per-concentration mean OD at both reads; an analysis hook flags an
//! experiment-class error when the untreated column failed to grow.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::events::{Draft, EventKind};
use crate::exec::Executor;
use crate::sim::{well_name, SharedWorld};
use crate::specs::WorkflowSpec;

use super::{run_to_completion, step_data, AppError};

/// Plate layout and dosing for one assay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthPlan {
    /// Inhibitor concentration per plate column, in the same units as the
    /// simulator's EC50.
    pub concentrations: Vec<f64>,
    /// Replicate rows per concentration (top rows of the plate).
    pub replicate_rows: usize,
    /// Liquid volume per well in microliters.
    pub well_volume: f64,
    /// Concentration of the compound stock reservoir.
    pub stock_concentration: f64,
    pub incubation_hours: f64,
    /// Minimum OD gain the untreated column must show; less marks the
    /// assay with an experiment-class error.
    pub min_untreated_growth: f64,
}

impl Default for GrowthPlan {
    fn default() -> GrowthPlan {
        // Zero plus a doubling ladder bracketing the simulator EC50 of 1.
        let mut concentrations = vec![0.0];
        let mut dose = 0.0625;
        while concentrations.len() < 12 {
            concentrations.push(dose);
            dose *= 2.0;
        }
        GrowthPlan {
            concentrations,
            replicate_rows: 8,
            well_volume: 100.0,
            stock_concentration: 128.0,
            incubation_hours: 12.0,
            min_untreated_growth: 0.05,
        }
    }
}

impl GrowthPlan {
    fn check(&self) -> Result<(), AppError> {
        if self.concentrations.is_empty() || self.concentrations.len() > 12 {
            return Err(AppError::BadPlan("1..=12 concentrations fit a plate".to_string()));
        }
        if self.replicate_rows == 0 || self.replicate_rows > 8 {
            return Err(AppError::BadPlan("1..=8 replicate rows fit a plate".to_string()));
        }
        if let Some(&worst) = self
            .concentrations
            .iter()
            .find(|&&c| c < 0.0 || c > self.stock_concentration)
        {
            return Err(AppError::BadPlan(format!(
                "concentration {worst} outside 0..=stock ({})",
                self.stock_concentration
            )));
        }
        Ok(())
    }

    /// Dispensing protocol: media plus stock compound per well, with the
    /// compound volume setting the target concentration.
    fn protocol(&self) -> String {
        let mut doc = String::from("name: growth_doses\ncommands:\n");
        for (column, &concentration) in self.concentrations.iter().enumerate() {
            let compound = concentration / self.stock_concentration * self.well_volume;
            let media = self.well_volume - compound;
            for row in 0..self.replicate_rows {
                let well = well_name(row * 12 + column);
                if media > 1e-9 {
                    doc.push_str(&format!(
                        "  - {{source: media, destination: {well}, volume: {media:.4}}}\n"
                    ));
                }
                if compound > 1e-9 {
                    doc.push_str(&format!(
                        "  - {{source: compound, destination: {well}, volume: {compound:.4}}}\n"
                    ));
                }
            }
        }
        doc
    }
}

/// Dose–response table plus provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthReport {
    pub experiment_id: String,
    pub plan: GrowthPlan,
    pub t0_run: String,
    pub t12_run: String,
    pub concentrations: Vec<f64>,
    /// Mean OD per concentration at the first read.
    pub mean_t0: Vec<f64>,
    /// Mean OD per concentration at the final read.
    pub mean_t12: Vec<f64>,
    /// Evidence string if the analysis hook flagged an experiment error.
    pub flagged: Option<String>,
}

impl GrowthReport {
    /// Tabular text export (tab-separated, one row per concentration).
    pub fn to_table(&self) -> String {
        let mut out = String::from("concentration\tmean_od_t0\tmean_od_t12\tdelta\n");
        for (i, &c) in self.concentrations.iter().enumerate() {
            out.push_str(&format!(
                "{:.4}\t{:.4}\t{:.4}\t{:+.4}\n",
                c,
                self.mean_t0[i],
                self.mean_t12[i],
                self.mean_t12[i] - self.mean_t0[i],
            ));
        }
        out
    }
}

/// Per-concentration means from a reader's `od` data map.
fn column_means(
    od: &serde_json::Map<String, Value>,
    plan: &GrowthPlan,
    run_id: &str,
) -> Result<Vec<f64>, AppError> {
    let mut means = Vec::with_capacity(plan.concentrations.len());
    for column in 0..plan.concentrations.len() {
        let mut total = 0.0;
        for row in 0..plan.replicate_rows {
            let well = well_name(row * 12 + column);
            let value = od.get(&well).and_then(Value::as_f64).ok_or_else(|| {
                AppError::MissingData(format!("well {well} missing from read"), run_id.to_string())
            })?;
            total += value;
        }
        means.push(total / plan.replicate_rows as f64);
    }
    Ok(means)
}

/// Analysis hook: evidence that the assay, though it executed cleanly, did
/// not produce a scientifically sensible result.
pub fn analyze_growth(report: &GrowthReport) -> Option<String> {
    let untreated = report
        .concentrations
        .iter()
        .position(|&c| c == 0.0)?;
    let gain = report.mean_t12[untreated] - report.mean_t0[untreated];
    if gain < report.plan.min_untreated_growth {
        return Some(format!(
            "no growth in untreated wells: mean OD gain {gain:.4} < {:.4}",
            report.plan.min_untreated_growth
        ));
    }
    None
}

/// Run the two-part assay. `workflows` carries the (T0, T12) documents so
/// the same assay retargets across workcells whose modules differ only in
/// name; `world` supplies the simulated clock for the incubation wait,
/// which elapses instantly in real time.
pub fn growth_assay_run(
    executor: &Executor,
    workflows: &(WorkflowSpec, WorkflowSpec),
    plan: &GrowthPlan,
    world: &SharedWorld,
) -> Result<GrowthReport, AppError> {
    plan.check()?;
    let experiment_id = format!("growth-{}h", plan.incubation_hours);
    let log = executor.log();
    log.emit(
        Draft::new(EventKind::ExperimentStart)
            .experiment(&experiment_id)
            .attr("application", "growth_assay")
            .attr("concentrations", json!(plan.concentrations))
            .attr("incubation_hours", plan.incubation_hours),
    );

    let mut payload = IndexMap::new();
    payload.insert("protocol".to_string(), Value::String(plan.protocol()));
    let t0 = run_to_completion(executor, &workflows.0, payload, &experiment_id)?;
    let t0_data = step_data(&t0, "measure_sample")?;
    let t0_od = t0_data
        .get("od")
        .and_then(Value::as_object)
        .ok_or_else(|| AppError::MissingData("reader data lacks od".to_string(), t0.run_id.clone()))?;
    let mean_t0 = column_means(t0_od, plan, &t0.run_id)?;

    // Timed incubation on the simulated clock.
    world.lock().unwrap().advance(plan.incubation_hours * 3600.0);
    log.emit(
        Draft::new(EventKind::Note)
            .experiment(&experiment_id)
            .attr("note", "incubation elapsed")
            .attr("hours", plan.incubation_hours),
    );

    let t12 = run_to_completion(executor, &workflows.1, IndexMap::new(), &experiment_id)?;
    let t12_data = step_data(&t12, "measure_sample")?;
    let t12_od = t12_data
        .get("od")
        .and_then(Value::as_object)
        .ok_or_else(|| AppError::MissingData("reader data lacks od".to_string(), t12.run_id.clone()))?;
    let mean_t12 = column_means(t12_od, plan, &t12.run_id)?;

    let mut report = GrowthReport {
        experiment_id: experiment_id.clone(),
        plan: plan.clone(),
        t0_run: t0.run_id,
        t12_run: t12.run_id.clone(),
        concentrations: plan.concentrations.clone(),
        mean_t0,
        mean_t12,
        flagged: None,
    };
    if let Some(evidence) = analyze_growth(&report) {
        executor.flag_experiment_error(&t12.run_id, &evidence);
        report.flagged = Some(evidence);
    }
    log.emit(
        Draft::new(EventKind::ExperimentEnd)
            .experiment(&experiment_id)
            .attr("flagged", report.flagged.is_some()),
    );
    Ok(report)
}
