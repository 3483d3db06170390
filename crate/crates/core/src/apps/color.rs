//! Closed-loop color picker.
//!
//! The loop mirrors the classic demo: fetch a plate, then per batch mix
//! candidate pigment ratios on the liquid handler, image the wells, score
//! each well against the target color, feed the scores to the evolutionary
//! solver, and publish the batch record; finally discard the plate. The
//! plate is swapped for a fresh one whenever its 96 wells fill up.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::events::{Draft, EventKind};
use crate::exec::Executor;
use crate::sim::well_name;

use super::solver::{color_score, ColorSample, SolverConfig, SolverState};
use super::{run_to_completion, step_data, AppError};

/// Wells on the assay plate.
const PLATE_WELLS: usize = 96;

/// What to optimize and how hard to try.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    /// Target color in RGB.
    pub target: [f64; 3],
    /// Total samples N to mix and score.
    pub total_samples: usize,
    /// Samples mixed per batch B.
    pub batch_size: usize,
    /// The three pigment colors available to the liquid handler. Purely
    /// informational for the report; the workcell's reservoirs define what
    /// is actually dispensed.
    pub input_colors: [[u8; 3]; 3],
    pub seed: u64,
    /// Liquid volume per well in microliters.
    pub well_volume: f64,
    pub solver: SolverConfig,
}

impl ExperimentPlan {
    pub fn new(target: [f64; 3], total_samples: usize, batch_size: usize, seed: u64) -> ExperimentPlan {
        ExperimentPlan {
            target,
            total_samples,
            batch_size,
            input_colors: [[230, 65, 65], [65, 230, 65], [65, 65, 230]],
            seed,
            well_volume: 100.0,
            solver: SolverConfig::default(),
        }
    }

    /// Batches needed: ceil(N / B).
    pub fn batches(&self) -> usize {
        self.total_samples.div_ceil(self.batch_size)
    }

    fn check(&self) -> Result<(), AppError> {
        if self.total_samples == 0 || self.batch_size == 0 {
            return Err(AppError::BadPlan("N and B must be positive".to_string()));
        }
        if self.batch_size > PLATE_WELLS {
            return Err(AppError::BadPlan(format!(
                "PLATE_EXHAUSTED: batch of {} exceeds the {PLATE_WELLS}-well plate",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// One scored sample in arrival order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub index: usize,
    pub batch: usize,
    pub well: String,
    pub ratios: [f64; 3],
    pub measured: [f64; 3],
    pub score: f64,
    /// Best score over samples 0..=index.
    pub best_so_far: f64,
    /// Simulated seconds since the experiment started when this sample was
    /// measured.
    pub elapsed_sim: f64,
}

/// Everything written per batch to the publish directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchRecord {
    pub experiment_id: String,
    pub batch: usize,
    pub run_id: String,
    pub samples: Vec<SampleRow>,
}

/// Final experiment report; deterministic given the plan and a fresh
/// simulated workcell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColorReport {
    pub experiment_id: String,
    pub plan: ExperimentPlan,
    pub samples: Vec<SampleRow>,
    pub best: ColorSample,
    pub final_score: f64,
    /// Simulated seconds from experiment start to the last measurement.
    pub elapsed_sim: f64,
    pub plates_used: usize,
    /// Publish-directory paths of the batch records, relative to the
    /// publish root.
    pub published: Vec<PathBuf>,
}

impl ColorReport {
    /// Tabular text export (tab-separated, one row per sample).
    pub fn to_table(&self) -> String {
        let mut out = String::from(
            "index\tbatch\twell\tratio_r\tratio_g\tratio_b\tmeasured_r\tmeasured_g\tmeasured_b\tscore\tbest_so_far\telapsed_sim\n",
        );
        for row in &self.samples {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.1}\t{:.1}\t{:.1}\t{:.4}\t{:.4}\t{:.1}\n",
                row.index,
                row.batch,
                row.well,
                row.ratios[0],
                row.ratios[1],
                row.ratios[2],
                row.measured[0],
                row.measured[1],
                row.measured[2],
                row.score,
                row.best_so_far,
                row.elapsed_sim,
            ));
        }
        out
    }
}

/// Write one batch record under `<publish_dir>/<experiment_id>/batch_<k>/`.
/// Idempotent per (experiment id, batch index): an existing record is left
/// untouched. Returns the path relative to `publish_dir`.
pub fn publish_hook(
    publish_dir: &Path,
    record: &BatchRecord,
) -> Result<PathBuf, AppError> {
    let relative = PathBuf::from(&record.experiment_id)
        .join(format!("batch_{}", record.batch))
        .join("record.json");
    let full = publish_dir.join(&relative);
    if !full.exists() {
        std::fs::create_dir_all(full.parent().expect("record has parent"))?;
        std::fs::write(&full, serde_json::to_vec_pretty(record)?)?;
    }
    Ok(relative)
}

impl From<serde_json::Error> for AppError {
    fn from(error: serde_json::Error) -> AppError {
        AppError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, error))
    }
}

/// Build the liquid-handler protocol mixing `ratios[i]` of red/green/blue
/// into consecutive wells starting at `first_well`.
fn mix_protocol(batch: usize, first_well: usize, ratios: &[[f64; 3]], well_volume: f64) -> String {
    let mut doc = format!("name: mix_batch_{batch}\ncommands:\n");
    for (offset, ratio) in ratios.iter().enumerate() {
        let well = well_name(first_well + offset);
        for (component, reservoir) in ["red", "green", "blue"].iter().enumerate() {
            let volume = ratio[component] * well_volume;
            if volume <= 1e-9 {
                continue;
            }
            doc.push_str(&format!(
                "  - {{source: {reservoir}, destination: {well}, volume: {volume:.4}}}\n"
            ));
        }
    }
    doc
}

/// Run the full closed-loop experiment against an executor whose workcell
/// has the color-picker modules (plate stack, manipulator, liquid handler
/// with red/green/blue reservoirs, camera).
pub fn color_picker_run(
    executor: &Executor,
    plan: &ExperimentPlan,
    publish_dir: &Path,
) -> Result<ColorReport, AppError> {
    plan.check()?;
    let experiment_id = format!(
        "cp-s{}-b{}-n{}",
        plan.seed, plan.batch_size, plan.total_samples
    );
    let log = executor.log();
    let (newplate, mixcolor, trashplate) = crate::fixtures::color_picker_workflows();
    log.emit(
        Draft::new(EventKind::ExperimentStart)
            .experiment(&experiment_id)
            .attr("application", "color_picker")
            .attr("target", json!(plan.target))
            .attr("total_samples", plan.total_samples as u64)
            .attr("batch_size", plan.batch_size as u64)
            .attr("seed", plan.seed),
    );

    let mut solver = SolverState::new(plan.seed, plan.solver.clone());
    let mut samples: Vec<SampleRow> = Vec::new();
    let mut published = Vec::new();
    let mut wells_used = 0usize;
    let mut plates_used = 1usize;
    let mut start_clock: Option<f64> = None;

    run_to_completion(executor, &newplate, IndexMap::new(), &experiment_id)?;

    for batch in 0..plan.batches() {
        let remaining = plan.total_samples - samples.len();
        let batch_size = remaining.min(plan.batch_size);

        // Solver proposal (uniform random on the first generation).
        log.emit(
            Draft::new(EventKind::ComputeInvoked)
                .experiment(&experiment_id)
                .attr("compute", "solver_propose")
                .attr("generation", solver.generation as u64)
                .attr("batch", batch as u64)
                .attr("batch_size", batch_size as u64),
        );
        let ratios = solver.propose(batch_size);

        // Swap in a fresh plate when this batch would overflow the wells.
        if wells_used + batch_size > PLATE_WELLS {
            log.emit(
                Draft::new(EventKind::Decision)
                    .experiment(&experiment_id)
                    .attr("decision", "swap_plate")
                    .attr("reason", "plate full")
                    .attr("wells_used", wells_used as u64),
            );
            run_to_completion(executor, &trashplate, IndexMap::new(), &experiment_id)?;
            run_to_completion(executor, &newplate, IndexMap::new(), &experiment_id)?;
            wells_used = 0;
            plates_used += 1;
        }

        let first_well = wells_used;
        let protocol = mix_protocol(batch, first_well, &ratios, plan.well_volume);
        let mut payload = IndexMap::new();
        payload.insert("protocol".to_string(), Value::String(protocol));
        let record = run_to_completion(executor, &mixcolor, payload, &experiment_id)?;
        wells_used += batch_size;

        // Score this batch from the camera image.
        let image = step_data(&record, "grab_image")?;
        let wells = image
            .get("wells")
            .and_then(Value::as_object)
            .ok_or_else(|| {
                AppError::MissingData("camera data lacks wells".to_string(), record.run_id.clone())
            })?;
        let clock = image.get("clock").and_then(Value::as_f64).unwrap_or(0.0);
        let start = *start_clock.get_or_insert(clock);
        let mut batch_rows = Vec::new();
        for (offset, ratio) in ratios.iter().enumerate() {
            let well = well_name(first_well + offset);
            let measured = wells
                .get(&well)
                .and_then(Value::as_array)
                .filter(|v| v.len() == 3)
                .map(|v| {
                    [
                        v[0].as_f64().unwrap_or(0.0),
                        v[1].as_f64().unwrap_or(0.0),
                        v[2].as_f64().unwrap_or(0.0),
                    ]
                })
                .ok_or_else(|| {
                    AppError::MissingData(
                        format!("well {well} missing from image"),
                        record.run_id.clone(),
                    )
                })?;
            let score = color_score(measured, plan.target);
            solver.observe(ColorSample {
                ratios: *ratio,
                measured,
                score,
            });
            let best = solver.best_so_far.as_ref().expect("observed").score;
            batch_rows.push(SampleRow {
                index: samples.len() + batch_rows.len(),
                batch,
                well,
                ratios: *ratio,
                measured,
                score,
                best_so_far: best,
                elapsed_sim: clock - start,
            });
        }
        samples.extend(batch_rows.iter().cloned());

        let batch_record = BatchRecord {
            experiment_id: experiment_id.clone(),
            batch,
            run_id: record.run_id.clone(),
            samples: batch_rows,
        };
        let path = publish_hook(publish_dir, &batch_record)?;
        log.emit(
            Draft::new(EventKind::PublishInvoked)
                .experiment(&experiment_id)
                .run(&record.run_id)
                .attr("batch", batch as u64)
                .attr("path", path.to_string_lossy().as_ref()),
        );
        published.push(path);

        let best = solver.best_so_far.as_ref().expect("observed").score;
        let done = samples.len() >= plan.total_samples;
        log.emit(
            Draft::new(EventKind::LoopCheck)
                .experiment(&experiment_id)
                .attr("samples_scored", samples.len() as u64)
                .attr("samples_planned", plan.total_samples as u64)
                .attr("best_score", best),
        );
        log.emit(
            Draft::new(EventKind::Decision)
                .experiment(&experiment_id)
                .attr("decision", if done { "stop" } else { "continue" })
                .attr("reason", "sample budget"),
        );
    }

    run_to_completion(executor, &trashplate, IndexMap::new(), &experiment_id)?;

    let best = solver.best_so_far.clone().expect("N >= 1 samples scored");
    let elapsed_sim = samples.last().map(|s| s.elapsed_sim).unwrap_or(0.0);
    log.emit(
        Draft::new(EventKind::ExperimentEnd)
            .experiment(&experiment_id)
            .attr("final_score", best.score)
            .attr("elapsed_sim", elapsed_sim)
            .attr("samples", samples.len() as u64),
    );
    Ok(ColorReport {
        experiment_id,
        plan: plan.clone(),
        samples,
        final_score: best.score,
        best,
        elapsed_sim,
        plates_used,
        published,
    })
}
