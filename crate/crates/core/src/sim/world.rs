//! Shared physical world model: plates, wells, stations, and the simulated
//! clock. Every device in a workcell applies its effects against one world,
//! so workflow steps have observable consequences.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::node::DeviceFault;

pub const PLATE_WELLS: usize = 96;
const WELL_COLS: usize = 12;

/// Map a well name like "A1" or "H12" onto its index.
pub fn well_index(name: &str) -> Option<usize> {
    let mut chars = name.chars();
    let row = chars.next()?.to_ascii_uppercase();
    if !('A'..='H').contains(&row) {
        return None;
    }
    let col: usize = chars.as_str().parse().ok()?;
    if !(1..=WELL_COLS).contains(&col) {
        return None;
    }
    Some((row as usize - 'A' as usize) * WELL_COLS + (col - 1))
}

/// Inverse of [`well_index`].
pub fn well_name(index: usize) -> String {
    let row = (b'A' + (index / WELL_COLS) as u8) as char;
    format!("{}{}", row, index % WELL_COLS + 1)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WellContent {
    /// Microlitres of liquid; color and growth state are undefined at zero.
    pub volume: f64,
    pub color: [u8; 3],
    /// Optical density of any culture in the well.
    pub od: f64,
    /// Treatment concentration, volume-weighted on mixing.
    pub treatment: f64,
    pub inoculated: bool,
}

impl WellContent {
    pub fn is_empty(&self) -> bool {
        self.volume <= 0.0
    }

    /// Add `volume` of liquid with the given properties, volume-weighting the
    /// color (rounded half-up per channel), optical density, and treatment.
    pub fn mix(&mut self, volume: f64, color: [u8; 3], od: f64, treatment: f64, inoculated: bool) {
        if self.is_empty() {
            self.color = color;
            self.od = od;
            self.treatment = treatment;
        } else {
            let total = self.volume + volume;
            for c in 0..3 {
                let blended =
                    (self.volume * self.color[c] as f64 + volume * color[c] as f64) / total;
                self.color[c] = blended.round().clamp(0.0, 255.0) as u8;
            }
            self.od = (self.volume * self.od + volume * od) / total;
            self.treatment = (self.volume * self.treatment + volume * treatment) / total;
        }
        self.volume += volume;
        self.inoculated |= inoculated;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateModel {
    pub plate_id: String,
    pub wells: Vec<WellContent>,
    pub sealed: bool,
    pub lidded: bool,
    pub location: String,
    /// Thermocycler programs this plate has been run through.
    pub programs: Vec<String>,
}

impl PlateModel {
    fn new(plate_id: String, location: String) -> PlateModel {
        PlateModel {
            plate_id,
            wells: vec![WellContent::default(); PLATE_WELLS],
            sealed: false,
            lidded: false,
            location,
            programs: Vec::new(),
        }
    }

    pub fn total_volume(&self) -> f64 {
        self.wells.iter().map(|w| w.volume).sum()
    }
}

/// Logistic growth with Hill-type treatment inhibition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthParams {
    /// Uninhibited growth rate, per hour.
    pub rate_per_hour: f64,
    /// Carrying capacity in OD units.
    pub capacity: f64,
    /// Treatment concentration halving the growth rate.
    pub ec50: f64,
    pub hill: f64,
    /// When false the model is frozen; used for experiment-error injection.
    pub enabled: bool,
}

impl Default for GrowthParams {
    fn default() -> GrowthParams {
        GrowthParams {
            rate_per_hour: 0.6,
            capacity: 1.0,
            ec50: 1.0,
            hill: 4.0,
            enabled: true,
        }
    }
}

impl GrowthParams {
    /// Effective growth rate per second at the given treatment concentration.
    pub fn rate_per_second(&self, treatment: f64) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        let inhibition = 1.0 + (treatment / self.ec50).powf(self.hill);
        self.rate_per_hour / 3600.0 / inhibition
    }

    /// Closed-form logistic advance of an OD value over `dt` seconds.
    pub fn advance(&self, od: f64, treatment: f64, dt: f64) -> f64 {
        if od <= 0.0 {
            return od;
        }
        let r = self.rate_per_second(treatment);
        if r <= 0.0 || dt <= 0.0 {
            return od;
        }
        let k = self.capacity;
        k / (1.0 + ((k - od) / od) * (-r * dt).exp())
    }
}

#[derive(Debug)]
pub struct WorldModel {
    /// Station name -> plate currently there. A station holds at most one
    /// plate; this is checked after every effect.
    pub stations: IndexMap<String, Option<String>>,
    pub plates: IndexMap<String, PlateModel>,
    /// Simulated seconds since the world was created.
    pub clock: f64,
    /// Stations that destroy a plate deposited on them.
    pub trash_stations: HashSet<String>,
    /// Stations inside an incubator; plates here grow as the clock advances.
    pub incubator_stations: HashSet<String>,
    pub growth: GrowthParams,
    pub camera_sigma: f64,
    pub od_sigma: f64,
    pub od_baseline: f64,
    rng: ChaCha8Rng,
    plate_counter: u64,
    plates_created: u64,
    plates_trashed: u64,
}

impl WorldModel {
    pub fn new(seed: u64) -> WorldModel {
        WorldModel {
            stations: IndexMap::new(),
            plates: IndexMap::new(),
            clock: 0.0,
            trash_stations: HashSet::new(),
            incubator_stations: HashSet::new(),
            growth: GrowthParams::default(),
            camera_sigma: 2.0,
            od_sigma: 0.005,
            od_baseline: 0.04,
            rng: ChaCha8Rng::seed_from_u64(seed),
            plate_counter: 0,
            plates_created: 0,
            plates_trashed: 0,
        }
    }

    pub fn add_station(&mut self, name: &str) {
        self.stations.entry(name.to_string()).or_insert(None);
    }

    /// Advance the simulated clock, growing any incubated cultures.
    pub fn advance(&mut self, dt: f64) {
        assert!(dt >= 0.0, "clock is monotone nondecreasing");
        self.clock += dt;
        let growth = self.growth.clone();
        let incubated: Vec<String> = self
            .plates
            .values()
            .filter(|p| self.incubator_stations.contains(&p.location))
            .map(|p| p.plate_id.clone())
            .collect();
        for plate_id in incubated {
            if let Some(plate) = self.plates.get_mut(&plate_id) {
                for well in plate.wells.iter_mut().filter(|w| w.inoculated) {
                    well.od = growth.advance(well.od, well.treatment, dt);
                }
            }
        }
    }

    pub fn plate_at(&self, station: &str) -> Option<&PlateModel> {
        let id = self.stations.get(station)?.as_ref()?;
        self.plates.get(id)
    }

    pub fn plate_at_mut(&mut self, station: &str) -> Option<&mut PlateModel> {
        let id = self.stations.get(station)?.clone()?;
        self.plates.get_mut(&id)
    }

    pub fn station_occupied(&self, station: &str) -> Option<bool> {
        self.stations.get(station).map(|slot| slot.is_some())
    }

    /// Create a fresh plate at a station (sciclops `get_plate`).
    pub fn create_plate(&mut self, at: &str) -> Result<String, DeviceFault> {
        let slot = self
            .stations
            .get(at)
            .ok_or_else(|| DeviceFault::new("UNKNOWN_STATION", format!("no station `{at}`")))?;
        if slot.is_some() {
            return Err(DeviceFault::new(
                "TARGET_OCCUPIED",
                format!("station `{at}` already holds a plate"),
            ));
        }
        self.plate_counter += 1;
        self.plates_created += 1;
        let plate_id = format!("plate-{:04}", self.plate_counter);
        self.plates
            .insert(plate_id.clone(), PlateModel::new(plate_id.clone(), at.to_string()));
        self.stations[at] = Some(plate_id.clone());
        Ok(plate_id)
    }

    /// Move a plate between stations. Moving onto a trash station destroys
    /// the plate.
    pub fn move_plate(&mut self, source: &str, target: &str) -> Result<(), DeviceFault> {
        let source_slot = self
            .stations
            .get(source)
            .ok_or_else(|| DeviceFault::new("UNKNOWN_STATION", format!("no station `{source}`")))?;
        let Some(plate_id) = source_slot.clone() else {
            return Err(DeviceFault::new(
                "SOURCE_EMPTY",
                format!("no plate at station `{source}`"),
            ));
        };
        if self.trash_stations.contains(target) {
            self.stations[source] = None;
            self.plates.shift_remove(&plate_id);
            self.plates_trashed += 1;
            return Ok(());
        }
        let target_slot = self
            .stations
            .get(target)
            .ok_or_else(|| DeviceFault::new("UNKNOWN_STATION", format!("no station `{target}`")))?;
        if target_slot.is_some() {
            return Err(DeviceFault::new(
                "TARGET_OCCUPIED",
                format!("station `{target}` already holds a plate"),
            ));
        }
        self.stations[source] = None;
        self.stations[target] = Some(plate_id.clone());
        self.plates.get_mut(&plate_id).unwrap().location = target.to_string();
        Ok(())
    }

    /// Gaussian sample from the world RNG.
    pub fn noise(&mut self, sigma: f64) -> f64 {
        if sigma <= 0.0 {
            return 0.0;
        }
        Normal::new(0.0, sigma).unwrap().sample(&mut self.rng)
    }

    pub fn plates_created(&self) -> u64 {
        self.plates_created
    }

    pub fn plates_trashed(&self) -> u64 {
        self.plates_trashed
    }

    /// Verify station/plate bookkeeping is a bijection on occupied stations.
    pub fn check_consistent(&self) -> Result<(), String> {
        let mut seen = HashSet::new();
        for (station, slot) in &self.stations {
            if let Some(plate_id) = slot {
                if !seen.insert(plate_id.clone()) {
                    return Err(format!("plate `{plate_id}` appears at two stations"));
                }
                match self.plates.get(plate_id) {
                    Some(plate) if &plate.location == station => {}
                    Some(plate) => {
                        return Err(format!(
                            "plate `{plate_id}` location `{}` disagrees with station `{station}`",
                            plate.location
                        ))
                    }
                    None => return Err(format!("station `{station}` holds unknown plate `{plate_id}`")),
                }
            }
        }
        for plate in self.plates.values() {
            if self.stations.get(&plate.location) != Some(&Some(plate.plate_id.clone())) {
                return Err(format!(
                    "plate `{}` claims station `{}` but the station disagrees",
                    plate.plate_id, plate.location
                ));
            }
        }
        Ok(())
    }

    /// Self-describing snapshot for test assertions and the CLI.
    pub fn snapshot(&self) -> serde_json::Value {
        let stations: IndexMap<&String, &Option<String>> = self.stations.iter().collect();
        let plates: Vec<serde_json::Value> = self
            .plates
            .values()
            .map(|p| {
                serde_json::json!({
                    "plate_id": p.plate_id,
                    "location": p.location,
                    "sealed": p.sealed,
                    "lidded": p.lidded,
                    "programs": p.programs,
                    "total_volume": p.total_volume(),
                    "occupied_wells": p.wells.iter().filter(|w| !w.is_empty()).count(),
                })
            })
            .collect();
        serde_json::json!({
            "clock": self.clock,
            "stations": stations,
            "plates": plates,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn well_names_round_trip() {
        assert_eq!(well_index("A1"), Some(0));
        assert_eq!(well_index("H12"), Some(95));
        assert_eq!(well_index("I1"), None);
        assert_eq!(well_index("A13"), None);
        for i in 0..PLATE_WELLS {
            assert_eq!(well_index(&well_name(i)), Some(i));
        }
    }

    #[test]
    fn equal_volume_mix_rounds_half_up() {
        let mut well = WellContent::default();
        well.mix(50.0, [255, 0, 0], 0.0, 0.0, false);
        well.mix(50.0, [0, 0, 255], 0.0, 0.0, false);
        assert_eq!(well.color, [128, 0, 128]);
        assert_eq!(well.volume, 100.0);
    }

    #[test]
    fn mix_is_order_independent_within_rounding() {
        let a = [200, 30, 60];
        let b = [10, 220, 90];
        let mut w1 = WellContent::default();
        w1.mix(40.0, a, 0.0, 0.0, false);
        w1.mix(40.0, b, 0.0, 0.0, false);
        let mut w2 = WellContent::default();
        w2.mix(40.0, b, 0.0, 0.0, false);
        w2.mix(40.0, a, 0.0, 0.0, false);
        for c in 0..3 {
            assert!((w1.color[c] as i16 - w2.color[c] as i16).abs() <= 1);
        }
    }

    #[test]
    fn trash_station_destroys_plates() {
        let mut world = WorldModel::new(0);
        world.add_station("a");
        world.add_station("trash");
        world.trash_stations.insert("trash".to_string());
        world.create_plate("a").unwrap();
        assert_eq!(world.plates.len(), 1);
        world.move_plate("a", "trash").unwrap();
        assert_eq!(world.plates.len(), 0);
        assert_eq!(world.plates_trashed(), 1);
        world.check_consistent().unwrap();
    }

    #[test]
    fn growth_is_inhibited_by_treatment() {
        let growth = GrowthParams::default();
        let twelve_hours = 12.0 * 3600.0;
        let untreated = growth.advance(0.05, 0.0, twelve_hours);
        let treated = growth.advance(0.05, 16.0 * growth.ec50, twelve_hours);
        assert!(untreated > 0.9);
        assert!(treated - 0.05 < 0.01);
    }
}
