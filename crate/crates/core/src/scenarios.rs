//! Scenario files, a synthetic city generator and two small hand-built
//! scenarios used throughout the examples and tests.

use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{kmeans_segment, Depot, Grid, Hospital, RateModel, RegionId, Segmentation, TravelModel, World, HOUR_S};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub cell_size_miles: f64,
}

/// How travel times are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TravelSpec {
    /// Centroid distance at `speed_mph`, one multiplier per bucket.
    Generator { speed_mph: f64, bucket_duration_s: f64, multipliers: Vec<f64> },
    /// Explicit tables, row-major `from x to`, one per bucket.
    Tables { bucket_duration_s: f64, tables: Vec<Vec<f64>> },
}

/// How cells are grouped into regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmentationSpec {
    Labels { region_of_cell: Vec<RegionId> },
    Kmeans { k: usize, seed: u64, rate_weight: Option<f64> },
}

/// Scenario document. Times in seconds, rates in incidents per hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub grid: GridSpec,
    pub depots: Vec<Depot>,
    pub hospitals: Vec<Hospital>,
    pub travel: TravelSpec,
    pub rates: RateModel,
    pub segmentation: SegmentationSpec,
    #[serde(default = "default_t_serve")]
    pub t_serve_s: f64,
    /// Default fleet size.
    pub n_responders: usize,
    /// Default episode length.
    pub horizon_s: f64,
}

fn default_t_serve() -> f64 {
    1200.0
}

impl Scenario {
    pub fn world(&self) -> Result<World> {
        let grid = Grid::new(self.grid.width, self.grid.height, self.grid.cell_size_miles)?;
        let travel = match &self.travel {
            TravelSpec::Generator { speed_mph, bucket_duration_s, multipliers } => {
                TravelModel::synthetic(&grid, *speed_mph, *bucket_duration_s, multipliers)?
            }
            TravelSpec::Tables { bucket_duration_s, tables } => TravelModel::from_tables(grid.len(), *bucket_duration_s, tables.clone())?,
        };
        let segmentation = match &self.segmentation {
            SegmentationSpec::Labels { region_of_cell } => Segmentation::from_cell_regions(region_of_cell.clone(), &self.depots)?,
            SegmentationSpec::Kmeans { k, seed, rate_weight } => {
                kmeans_segment(&grid, &self.rates, &self.depots, *k, *seed, *rate_weight)?
            }
        };
        World::new(grid, self.depots.clone(), self.hospitals.clone(), travel, self.rates.clone(), segmentation)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_serve_s > 0.0) || !(self.horizon_s > 0.0) {
            return Err(Error::Config("service time and horizon must be positive".into()));
        }
        if self.n_responders == 0 || self.n_responders > self.depots.len() {
            return Err(Error::Config(format!("fleet of {} does not fit {} depots", self.n_responders, self.depots.len())));
        }
        self.world().map(|_| ())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let s: Scenario = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Parameters of the synthetic city generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub width: usize,
    pub height: usize,
    pub cell_size_miles: f64,
    pub n_depots: usize,
    pub n_hospitals: usize,
    pub n_regions: usize,
    pub n_responders: usize,
    pub n_hotspots: usize,
    /// City-wide incidents per hour averaged over the week.
    pub mean_city_rate: f64,
    pub speed_mph: f64,
    pub horizon_s: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            width: 12,
            height: 12,
            cell_size_miles: 1.0,
            n_depots: 16,
            n_hospitals: 3,
            n_regions: 3,
            n_responders: 10,
            n_hotspots: 4,
            mean_city_rate: 2.5,
            speed_mph: 30.0,
            horizon_s: 11.0 * 24.0 * HOUR_S,
        }
    }
}

/// Weekly-cycling hourly rates: Gaussian hotspots on a low background,
/// a diurnal profile with a daytime peak, hotspots that drift between day
/// and night, and a slower travel speed during rush hours.
pub fn generate_synthetic(p: &SyntheticParams, seed: u64) -> Result<Scenario> {
    let n = p.width * p.height;
    if n == 0 || p.n_depots == 0 || p.n_hospitals == 0 || p.n_depots > n || p.n_hospitals > n {
        return Err(Error::Config("generator needs a nonempty grid with room for depots and hospitals".into()));
    }
    if p.n_regions == 0 || p.n_regions > p.n_depots {
        return Err(Error::Config("regions must number between 1 and the depot count".into()));
    }
    if p.n_responders == 0 || p.n_responders > p.n_depots {
        return Err(Error::Config("fleet must number between 1 and the depot count".into()));
    }
    if !(p.mean_city_rate >= 0.0) || !(p.speed_mph > 0.0) || !(p.horizon_s > 0.0) {
        return Err(Error::Config("rates, speed and horizon must be valid".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid::new(p.width, p.height, p.cell_size_miles)?;
    let mut depot_cells = index::sample(&mut rng, n, p.n_depots).into_vec();
    depot_cells.sort_unstable();
    let depots: Vec<Depot> = depot_cells.iter().enumerate().map(|(id, &cell)| Depot { id, cell, capacity: 1 }).collect();
    let mut hosp_cells = index::sample(&mut rng, n, p.n_hospitals).into_vec();
    hosp_cells.sort_unstable();
    let hospitals: Vec<Hospital> = hosp_cells.iter().enumerate().map(|(id, &cell)| Hospital { id, cell }).collect();

    let extent = grid.diagonal_miles();
    let hotspots: Vec<(f64, f64, f64, f64)> = (0..p.n_hotspots.max(1))
        .map(|_| {
            let x = rng.gen_range(0.0..p.width as f64) * p.cell_size_miles;
            let y = rng.gen_range(0.0..p.height as f64) * p.cell_size_miles;
            let spread = rng.gen_range(0.08..0.2) * extent;
            let night_weight = rng.gen_range(0.2..1.0);
            (x, y, spread, night_weight)
        })
        .collect();
    let spatial = |hour: usize| -> Vec<f64> {
        let day = (7..19).contains(&(hour % 24));
        let mut w: Vec<f64> = grid
            .cells()
            .iter()
            .map(|c| {
                let mut v = 0.05;
                for &(x, y, s, nw) in &hotspots {
                    let d2 = (c.x - x).powi(2) + (c.y - y).powi(2);
                    v += (if day { 1.0 } else { nw }) * (-d2 / (2.0 * s * s)).exp();
                }
                v
            })
            .collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w
    };
    let diurnal = |hour: usize| -> f64 {
        let h = (hour % 24) as f64;
        1.0 + 0.6 * ((h - 14.0) / 24.0 * std::f64::consts::TAU).cos()
    };
    let mean_diurnal: f64 = (0..24).map(diurnal).sum::<f64>() / 24.0;
    let rates: Vec<Vec<f64>> = (0..168)
        .map(|hour| {
            let city = p.mean_city_rate * diurnal(hour) / mean_diurnal;
            spatial(hour).into_iter().map(|w| w * city).collect()
        })
        .collect();
    let multipliers: Vec<f64> =
        (0..168).map(|h| if matches!(h % 24, 7 | 8 | 16 | 17) && h / 24 < 5 { 1.3 } else { 1.0 }).collect();

    let rates = RateModel::new(HOUR_S, rates)?;
    let segmentation = SegmentationSpec::Kmeans { k: p.n_regions, seed, rate_weight: None };
    let scenario = Scenario {
        name: format!("synthetic-{seed}"),
        grid: GridSpec { width: p.width, height: p.height, cell_size_miles: p.cell_size_miles },
        depots,
        hospitals,
        travel: TravelSpec::Generator { speed_mph: p.speed_mph, bucket_duration_s: HOUR_S, multipliers },
        rates,
        segmentation,
        t_serve_s: 1200.0,
        n_responders: p.n_responders,
        horizon_s: p.horizon_s,
    };
    // freeze the clustering so the file is self-contained
    let world = scenario.world()?;
    Ok(Scenario {
        segmentation: SegmentationSpec::Labels { region_of_cell: world.segmentation.cell_labels().to_vec() },
        ..scenario
    })
}

/// A 1 x 6 street at 30 mph (120 s per cell) with depot 0 at cell 0,
/// depot 1 at cell 5, a hospital at cell 5, one responder, and every
/// incident in cells 4 and 5.
pub fn toy_single_region() -> Scenario {
    let mut rates = vec![0.0; 6];
    rates[4] = 0.3;
    rates[5] = 0.3;
    Scenario {
        name: "toy-single-region".into(),
        grid: GridSpec { width: 6, height: 1, cell_size_miles: 1.0 },
        depots: vec![Depot { id: 0, cell: 0, capacity: 1 }, Depot { id: 1, cell: 5, capacity: 1 }],
        hospitals: vec![Hospital { id: 0, cell: 5 }],
        travel: TravelSpec::Generator { speed_mph: 30.0, bucket_duration_s: HOUR_S, multipliers: vec![1.0] },
        rates: RateModel { bucket_duration_s: 24.0 * HOUR_S, rates: vec![rates] },
        segmentation: SegmentationSpec::Labels { region_of_cell: vec![0; 6] },
        t_serve_s: 1200.0,
        n_responders: 1,
        horizon_s: 48.0 * HOUR_S,
    }
}

/// An 8 x 2 grid split into a west region (columns 0-3) and an east region
/// (columns 4-7), two depots and a hospital in each, three responders, and
/// incident mass that swings between the regions every four hours.
pub fn toy_two_region() -> Scenario {
    let (w, h) = (8usize, 2usize);
    let labels: Vec<RegionId> = (0..w * h).map(|c| usize::from(c % w >= 4)).collect();
    let (high, low) = (2.0, 0.2);
    let bucket = |hot: RegionId| -> Vec<f64> {
        labels.iter().map(|&g| if g == hot { high / 8.0 } else { low / 8.0 }).collect()
    };
    Scenario {
        name: "toy-two-region".into(),
        grid: GridSpec { width: w, height: h, cell_size_miles: 1.0 },
        depots: vec![
            Depot { id: 0, cell: 1, capacity: 1 },
            Depot { id: 1, cell: 10, capacity: 1 },
            Depot { id: 2, cell: 5, capacity: 1 },
            Depot { id: 3, cell: 14, capacity: 1 },
        ],
        hospitals: vec![Hospital { id: 0, cell: 9 }, Hospital { id: 1, cell: 6 }],
        travel: TravelSpec::Generator { speed_mph: 30.0, bucket_duration_s: HOUR_S, multipliers: vec![1.0] },
        rates: RateModel { bucket_duration_s: 4.0 * HOUR_S, rates: vec![bucket(0), bucket(1)] },
        segmentation: SegmentationSpec::Labels { region_of_cell: labels },
        t_serve_s: 1200.0,
        n_responders: 3,
        horizon_s: 48.0 * HOUR_S,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toys_build() {
        let w = toy_single_region().world().unwrap();
        assert_eq!(w.n_regions(), 1);
        assert_eq!(w.travel.time(0, 5, 0.0), 600.0);
        let w = toy_two_region().world().unwrap();
        assert_eq!(w.n_regions(), 2);
        assert_eq!(w.segmentation.depots(0), &[0, 1]);
        assert_eq!(w.segmentation.depots(1), &[2, 3]);
        let r0 = w.region_rates(0.0);
        let r1 = w.region_rates(4.0 * HOUR_S);
        assert!(r0[0] > r0[1] && r1[1] > r1[0]);
    }

    #[test]
    fn synthetic_is_deterministic_and_valid() {
        let p = SyntheticParams::default();
        let a = generate_synthetic(&p, 3).unwrap();
        let b = generate_synthetic(&p, 3).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        let w = a.world().unwrap();
        assert!(w.n_regions() >= 1 && w.n_regions() <= 3);
        let weekly: f64 = (0..168).map(|h| w.rates.rates[h].iter().sum::<f64>()).sum::<f64>() / 168.0;
        assert!((weekly - p.mean_city_rate).abs() < 1e-9);
    }

    #[test]
    fn json_round_trip() {
        let s = toy_two_region();
        let text = serde_json::to_string(&s).unwrap();
        let back: Scenario = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn oversized_fleet_is_a_config_error() {
        let mut s = toy_two_region();
        s.n_responders = 5;
        assert!(matches!(s.validate(), Err(Error::Config(_))));
    }
}
