//! Geography: grid cells, depots, hospitals, the time-varying travel model,
//! per-cell incident rates and the decomposition of the city into regions.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

pub type CellId = usize;
pub type DepotId = usize;
pub type HospitalId = usize;
pub type RegionId = usize;

pub const HOUR_S: f64 = 3600.0;
pub const WEEK_S: f64 = 7.0 * 24.0 * HOUR_S;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: CellId,
    pub x: f64,
    pub y: f64,
}

/// Row-major grid of square cells. Cell `id = row * width + col`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    cell_size_miles: f64,
    cells: Vec<Cell>,
}

impl Grid {
    pub fn new(width: usize, height: usize, cell_size_miles: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return input("grid must have at least one cell");
        }
        if !(cell_size_miles > 0.0 && cell_size_miles.is_finite()) {
            return input("cell size must be positive");
        }
        let cells = (0..height)
            .flat_map(|row| (0..width).map(move |col| (row, col)))
            .map(|(row, col)| Cell {
                id: row * width + col,
                x: (col as f64 + 0.5) * cell_size_miles,
                y: (row as f64 + 0.5) * cell_size_miles,
            })
            .collect();
        Ok(Self { width, height, cell_size_miles, cells })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size_miles(&self) -> f64 {
        self.cell_size_miles
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, id: CellId) -> Result<&Cell> {
        self.cells
            .get(id)
            .ok_or_else(|| Error::Input(format!("unknown cell {id}")))
    }

    /// Euclidean distance between two cell centroids in miles.
    pub fn distance(&self, a: CellId, b: CellId) -> f64 {
        let (a, b) = (&self.cells[a], &self.cells[b]);
        (a.x - b.x).hypot(a.y - b.y)
    }

    pub fn diagonal_miles(&self) -> f64 {
        (self.width as f64 * self.cell_size_miles).hypot(self.height as f64 * self.cell_size_miles)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Depot {
    pub id: DepotId,
    pub cell: CellId,
    #[serde(default = "one")]
    pub capacity: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hospital {
    pub id: HospitalId,
    pub cell: CellId,
}

/// Piecewise-constant travel times. Bucket `b` covers
/// `[b * bucket_duration_s, (b + 1) * bucket_duration_s)` and the bucket
/// sequence repeats; 168 hourly buckets give a weekly cycle.
///
/// Buckets may share a table (`bucket_table[b]` indexes `tables`), which keeps
/// generated models with few distinct speed profiles small.
#[derive(Debug, Clone, PartialEq)]
pub struct TravelModel {
    n_cells: usize,
    bucket_duration_s: f64,
    tables: Vec<Vec<f64>>,
    bucket_table: Vec<usize>,
}

impl TravelModel {
    /// One full `n_cells x n_cells` table (row = from, col = to) per bucket.
    pub fn from_tables(n_cells: usize, bucket_duration_s: f64, tables: Vec<Vec<f64>>) -> Result<Self> {
        let bucket_table = (0..tables.len()).collect();
        Self::with_shared_tables(n_cells, bucket_duration_s, tables, bucket_table)
    }

    pub fn with_shared_tables(
        n_cells: usize,
        bucket_duration_s: f64,
        tables: Vec<Vec<f64>>,
        bucket_table: Vec<usize>,
    ) -> Result<Self> {
        if !(bucket_duration_s > 0.0) {
            return input("travel bucket duration must be positive");
        }
        if tables.is_empty() || bucket_table.is_empty() {
            return input("travel model needs at least one bucket");
        }
        for (k, table) in tables.iter().enumerate() {
            if table.len() != n_cells * n_cells {
                return input(format!("travel table {k} has {} entries, expected {}", table.len(), n_cells * n_cells));
            }
            if table.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return input(format!("travel table {k} has negative or non-finite entries"));
            }
            if (0..n_cells).any(|c| table[c * n_cells + c] != 0.0) {
                return input(format!("travel table {k} has a nonzero diagonal"));
            }
        }
        if let Some(bad) = bucket_table.iter().find(|&&i| i >= tables.len()) {
            return input(format!("bucket refers to missing table {bad}"));
        }
        Ok(Self { n_cells, bucket_duration_s, tables, bucket_table })
    }

    /// Straight-line centroid distance at `speed_mph`, scaled per bucket by
    /// `multipliers` (values > 1 model congestion).
    pub fn synthetic(grid: &Grid, speed_mph: f64, bucket_duration_s: f64, multipliers: &[f64]) -> Result<Self> {
        if !(speed_mph > 0.0) {
            return input("speed must be positive");
        }
        if multipliers.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return input("travel multipliers must be positive");
        }
        let n = grid.len();
        let base: Vec<f64> = (0..n * n)
            .map(|k| grid.distance(k / n, k % n) / speed_mph * HOUR_S)
            .collect();
        let mut distinct: Vec<f64> = Vec::new();
        let mut bucket_table = Vec::with_capacity(multipliers.len());
        for &m in multipliers {
            let idx = match distinct.iter().position(|&d| d == m) {
                Some(i) => i,
                None => {
                    distinct.push(m);
                    distinct.len() - 1
                }
            };
            bucket_table.push(idx);
        }
        let tables = distinct
            .iter()
            .map(|&m| base.iter().map(|v| (v * m).round()).collect())
            .collect();
        Self::with_shared_tables(n, bucket_duration_s, tables, bucket_table)
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_buckets(&self) -> usize {
        self.bucket_table.len()
    }

    pub fn bucket_duration_s(&self) -> f64 {
        self.bucket_duration_s
    }

    pub fn bucket_of(&self, t: f64) -> usize {
        bucket_index(t, self.bucket_duration_s, self.bucket_table.len())
    }

    /// Travel time without bounds checking on the cell ids.
    #[inline]
    pub fn time(&self, from: CellId, to: CellId, t: f64) -> f64 {
        let table = &self.tables[self.bucket_table[self.bucket_of(t)]];
        table[from * self.n_cells + to]
    }

    pub fn travel_time(&self, from: CellId, to: CellId, t: f64) -> Result<f64> {
        if from >= self.n_cells || to >= self.n_cells {
            return input(format!("unknown cell in travel query ({from}, {to})"));
        }
        if !(t >= 0.0) {
            return input("travel query time must be nonnegative");
        }
        Ok(self.time(from, to, t))
    }

    /// Table for bucket `b` (row-major, from x to).
    pub fn table(&self, b: usize) -> &[f64] {
        &self.tables[self.bucket_table[b % self.bucket_table.len()]]
    }
}

fn bucket_index(t: f64, duration: f64, n: usize) -> usize {
    let k = (t.max(0.0) / duration).floor() as usize;
    k % n
}

/// Per-bucket, per-cell incident rates in incidents per hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    pub bucket_duration_s: f64,
    /// `rates[bucket][cell]`.
    pub rates: Vec<Vec<f64>>,
}

impl RateModel {
    pub fn new(bucket_duration_s: f64, rates: Vec<Vec<f64>>) -> Result<Self> {
        if !(bucket_duration_s > 0.0) {
            return input("rate bucket duration must be positive");
        }
        if rates.is_empty() {
            return input("rate model needs at least one bucket");
        }
        let n = rates[0].len();
        for (b, row) in rates.iter().enumerate() {
            if row.len() != n {
                return input(format!("rate bucket {b} has {} cells, expected {n}", row.len()));
            }
            if row.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                return input(format!("rate bucket {b} has negative or non-finite rates"));
            }
        }
        Ok(Self { bucket_duration_s, rates })
    }

    pub fn constant(n_cells: usize, rate: f64) -> Self {
        Self { bucket_duration_s: WEEK_S, rates: vec![vec![rate; n_cells]] }
    }

    pub fn n_cells(&self) -> usize {
        self.rates[0].len()
    }

    pub fn n_buckets(&self) -> usize {
        self.rates.len()
    }

    pub fn bucket_of(&self, t: f64) -> usize {
        bucket_index(t, self.bucket_duration_s, self.rates.len())
    }

    pub fn rate(&self, cell: CellId, t: f64) -> f64 {
        self.rates[self.bucket_of(t)][cell]
    }

    pub fn bucket(&self, t: f64) -> &[f64] {
        &self.rates[self.bucket_of(t)]
    }

    /// First bucket boundary strictly after `t`.
    pub fn next_boundary(&self, t: f64) -> f64 {
        ((t / self.bucket_duration_s).floor() + 1.0) * self.bucket_duration_s
    }

    pub fn mean_rates(&self) -> Vec<f64> {
        let n = self.n_buckets() as f64;
        (0..self.n_cells())
            .map(|c| self.rates.iter().map(|row| row[c]).sum::<f64>() / n)
            .collect()
    }
}

/// Partition of the cells into regions, each holding at least one depot.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    region_of_cell: Vec<RegionId>,
    depot_region: Vec<RegionId>,
    region_cells: Vec<Vec<CellId>>,
    region_depots: Vec<Vec<DepotId>>,
}

impl Segmentation {
    /// Builds a segmentation from a per-cell region label. Labels must be
    /// `0..k` with every label used; depots inherit the region of their cell.
    pub fn from_cell_regions(region_of_cell: Vec<RegionId>, depots: &[Depot]) -> Result<Self> {
        let k = region_of_cell.iter().max().map_or(0, |m| m + 1);
        let mut region_cells = vec![Vec::new(); k];
        for (c, &g) in region_of_cell.iter().enumerate() {
            region_cells[g].push(c);
        }
        if let Some(g) = region_cells.iter().position(Vec::is_empty) {
            return input(format!("region {g} has no cells"));
        }
        let mut depot_region = Vec::with_capacity(depots.len());
        let mut region_depots = vec![Vec::new(); k];
        for (i, d) in depots.iter().enumerate() {
            if d.id != i {
                return input(format!("depot ids must be 0..n in order, found {} at {i}", d.id));
            }
            let g = *region_of_cell
                .get(d.cell)
                .ok_or_else(|| Error::Input(format!("depot {} on unknown cell {}", d.id, d.cell)))?;
            depot_region.push(g);
            region_depots[g].push(d.id);
        }
        if let Some(g) = region_depots.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("region {g} contains no depot")));
        }
        Ok(Self { region_of_cell, depot_region, region_cells, region_depots })
    }

    pub fn single(n_cells: usize, depots: &[Depot]) -> Result<Self> {
        Self::from_cell_regions(vec![0; n_cells], depots)
    }

    pub fn n_regions(&self) -> usize {
        self.region_cells.len()
    }

    pub fn region_of_cell(&self, c: CellId) -> RegionId {
        self.region_of_cell[c]
    }

    pub fn region_of_depot(&self, d: DepotId) -> RegionId {
        self.depot_region[d]
    }

    pub fn cells(&self, g: RegionId) -> &[CellId] {
        &self.region_cells[g]
    }

    /// Depots of region `g` in ascending id order.
    pub fn depots(&self, g: RegionId) -> &[DepotId] {
        &self.region_depots[g]
    }

    pub fn cell_labels(&self) -> &[RegionId] {
        &self.region_of_cell
    }
}

/// Lloyd's k-means over `(x, y, w * mean_rate)` cell features.
///
/// Several seeded restarts are run and the lowest-inertia clustering in which
/// every cluster holds a depot wins. If no restart achieves that, depot-less
/// clusters are folded into the nearest cluster that has one, which can leave
/// fewer than `k` regions.
pub fn kmeans_segment(
    grid: &Grid,
    rates: &RateModel,
    depots: &[Depot],
    k: usize,
    seed: u64,
    rate_weight: Option<f64>,
) -> Result<Segmentation> {
    const RESTARTS: usize = 8;
    const MAX_ITERS: usize = 200;

    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if k > depots.len() {
        return Err(Error::Config(format!("k = {k} exceeds the {} depots", depots.len())));
    }
    if rates.n_cells() != grid.len() {
        return input("rate model and grid disagree on cell count");
    }
    let n = grid.len();
    if k > n {
        return Err(Error::Config(format!("k = {k} exceeds the {n} cells")));
    }
    let mean = rates.mean_rates();
    let max_rate = mean.iter().cloned().fold(0.0, f64::max);
    let w = rate_weight.unwrap_or(if max_rate > 0.0 { grid.diagonal_miles() / max_rate } else { 0.0 });
    let feats: Vec<[f64; 3]> = grid.cells().iter().map(|c| [c.x, c.y, w * mean[c.id]]).collect();

    let has_depot: Vec<bool> = {
        let mut v = vec![false; n];
        for d in depots {
            v[d.cell] = true;
        }
        v
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best_valid: Option<(f64, Vec<usize>)> = None;
    let mut best_any: Option<(f64, Vec<usize>, Vec<[f64; 3]>)> = None;
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..RESTARTS {
        order.shuffle(&mut rng);
        let mut centers: Vec<[f64; 3]> = order[..k].iter().map(|&c| feats[c]).collect();
        let mut labels = vec![usize::MAX; n];
        for _ in 0..MAX_ITERS {
            let mut changed = false;
            for (c, f) in feats.iter().enumerate() {
                let l = nearest_center(f, &centers);
                if labels[c] != l {
                    labels[c] = l;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let mut sums = vec![[0.0; 3]; k];
            let mut counts = vec![0usize; k];
            for (c, f) in feats.iter().enumerate() {
                let s = &mut sums[labels[c]];
                for j in 0..3 {
                    s[j] += f[j];
                }
                counts[labels[c]] += 1;
            }
            for j in 0..k {
                if counts[j] > 0 {
                    centers[j] = sums[j].map(|s| s / counts[j] as f64);
                }
            }
        }
        let inertia: f64 = feats.iter().enumerate().map(|(c, f)| sq_dist(f, &centers[labels[c]])).sum();
        let mut nonempty = vec![false; k];
        let mut with_depot = vec![false; k];
        for c in 0..n {
            nonempty[labels[c]] = true;
            with_depot[labels[c]] |= has_depot[c];
        }
        let valid = nonempty.iter().zip(&with_depot).all(|(a, b)| *a && *b);
        if valid && best_valid.as_ref().map_or(true, |(b, _)| inertia < *b) {
            best_valid = Some((inertia, labels.clone()));
        }
        if best_any.as_ref().map_or(true, |(b, _, _)| inertia < *b) {
            best_any = Some((inertia, labels, centers));
        }
    }

    let labels = match best_valid {
        Some((_, labels)) => labels,
        None => {
            let (_, mut labels, centers) = best_any.expect("at least one restart");
            let mut with_depot = vec![false; k];
            for c in 0..n {
                with_depot[labels[c]] |= has_depot[c];
            }
            let keep: Vec<usize> = (0..k).filter(|&j| with_depot[j]).collect();
            let kept_centers: Vec<[f64; 3]> = keep.iter().map(|&j| centers[j]).collect();
            for c in 0..n {
                if !with_depot[labels[c]] {
                    labels[c] = keep[nearest_center(&feats[c], &kept_centers)];
                }
            }
            labels
        }
    };
    Segmentation::from_cell_regions(relabel_by_first_cell(&labels), depots)
}

fn nearest_center(f: &[f64; 3], centers: &[[f64; 3]]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(f, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|j| (a[j] - b[j]).powi(2)).sum()
}

/// Renumbers labels so regions are ordered by their lowest cell id.
fn relabel_by_first_cell(labels: &[usize]) -> Vec<RegionId> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Scale constants used to normalize observations before they reach the
/// networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScales {
    pub time_s: f64,
    pub depot_rate: f64,
    pub region_rate: f64,
}

/// Immutable scenario geography shared by the simulator, features and planners.
#[derive(Debug, Clone)]
pub struct World {
    pub grid: Grid,
    pub depots: Vec<Depot>,
    pub hospitals: Vec<Hospital>,
    pub travel: TravelModel,
    pub rates: RateModel,
    pub segmentation: Segmentation,
    pub scales: FeatureScales,
}

impl World {
    pub fn new(
        grid: Grid,
        depots: Vec<Depot>,
        hospitals: Vec<Hospital>,
        travel: TravelModel,
        rates: RateModel,
        segmentation: Segmentation,
    ) -> Result<Self> {
        let n = grid.len();
        if travel.n_cells() != n || rates.n_cells() != n || segmentation.cell_labels().len() != n {
            return input("grid, travel model, rate model and segmentation disagree on cell count");
        }
        if depots.is_empty() {
            return input("scenario has no depots");
        }
        if hospitals.is_empty() {
            return input("scenario has no hospitals");
        }
        for (i, h) in hospitals.iter().enumerate() {
            if h.id != i || h.cell >= n {
                return input(format!("hospital {i} malformed"));
            }
        }
        for d in &depots {
            if d.cell >= n || d.capacity == 0 {
                return input(format!("depot {} malformed", d.id));
            }
            if segmentation.region_of_depot(d.id) != segmentation.region_of_cell(d.cell) {
                return input(format!("depot {} outside its region", d.id));
            }
        }
        let mut world = Self {
            grid,
            depots,
            hospitals,
            travel,
            rates,
            segmentation,
            scales: FeatureScales { time_s: HOUR_S, depot_rate: 1.0, region_rate: 1.0 },
        };
        world.scales = world.compute_scales();
        Ok(world)
    }

    fn compute_scales(&self) -> FeatureScales {
        let mut depot_rate: f64 = 0.0;
        let mut region_rate: f64 = 0.0;
        for b in 0..self.rates.n_buckets() {
            let t = b as f64 * self.rates.bucket_duration_s;
            for g in 0..self.segmentation.n_regions() {
                region_rate = region_rate.max(self.region_rate(g, t));
                for r in self.depot_rates(g, t) {
                    depot_rate = depot_rate.max(r);
                }
            }
        }
        let nz = |v: f64| if v > 0.0 { v } else { 1.0 };
        FeatureScales { time_s: HOUR_S, depot_rate: nz(depot_rate), region_rate: nz(region_rate) }
    }

    pub fn n_regions(&self) -> usize {
        self.segmentation.n_regions()
    }

    pub fn depot_cell(&self, d: DepotId) -> CellId {
        self.depots[d].cell
    }

    /// Hospital with the shortest travel time from `cell` at `t`; lowest id on ties.
    pub fn nearest_hospital(&self, cell: CellId, t: f64) -> HospitalId {
        let mut best = 0;
        let mut best_t = f64::INFINITY;
        for h in &self.hospitals {
            let tt = self.travel.time(cell, h.cell, t);
            if tt < best_t {
                best_t = tt;
                best = h.id;
            }
        }
        best
    }

    /// Cells in `cells` grouped by their closest depot in `depots` at `t`
    /// (travel time cell -> depot); ties go to the lowest depot id.
    pub fn near_cells_within(&self, depots: &[DepotId], cells: &[CellId], t: f64) -> Result<BTreeMap<DepotId, Vec<CellId>>> {
        if depots.is_empty() {
            return input("near_cells needs at least one depot");
        }
        if let Some(&d) = depots.iter().find(|&&d| d >= self.depots.len()) {
            return input(format!("unknown depot {d}"));
        }
        let mut sorted = depots.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut out: BTreeMap<DepotId, Vec<CellId>> = sorted.iter().map(|&d| (d, Vec::new())).collect();
        for &c in cells {
            if c >= self.grid.len() {
                return input(format!("unknown cell {c}"));
            }
            let d = self.closest_depot(&sorted, c, t);
            out.get_mut(&d).expect("depot present").push(c);
        }
        Ok(out)
    }

    /// `NearCells` over the whole grid.
    pub fn near_cells(&self, depots: &[DepotId], t: f64) -> Result<BTreeMap<DepotId, Vec<CellId>>> {
        let all: Vec<CellId> = (0..self.grid.len()).collect();
        self.near_cells_within(depots, &all, t)
    }

    fn closest_depot(&self, sorted_depots: &[DepotId], c: CellId, t: f64) -> DepotId {
        let mut best = sorted_depots[0];
        let mut best_t = f64::INFINITY;
        for &d in sorted_depots {
            let tt = self.travel.time(c, self.depots[d].cell, t);
            if tt < best_t {
                best_t = tt;
                best = d;
            }
        }
        best
    }

    /// Nearby incident rate of every depot of region `g` (in `depots(g)` order):
    /// the summed rate of the region's cells for which that depot is the
    /// closest of the region's depots.
    pub fn depot_rates(&self, g: RegionId, t: f64) -> Vec<f64> {
        let depots = self.segmentation.depots(g);
        let rates = self.rates.bucket(t);
        let mut out = vec![0.0; depots.len()];
        for &c in self.segmentation.cells(g) {
            let mut best = 0;
            let mut best_t = f64::INFINITY;
            for (k, &d) in depots.iter().enumerate() {
                let tt = self.travel.time(c, self.depots[d].cell, t);
                if tt < best_t {
                    best_t = tt;
                    best = k;
                }
            }
            out[best] += rates[c];
        }
        out
    }

    /// Nearby incident rate of a single depot, scoped to its own region.
    pub fn nearby_incident_rate(&self, d: DepotId, t: f64) -> Result<f64> {
        if d >= self.depots.len() {
            return input(format!("unknown depot {d}"));
        }
        let g = self.segmentation.region_of_depot(d);
        let k = self.segmentation.depots(g).iter().position(|&x| x == d).expect("depot in region");
        Ok(self.depot_rates(g, t)[k])
    }

    /// Summed incident rate of the cells of region `g`.
    pub fn region_rate(&self, g: RegionId, t: f64) -> f64 {
        let rates = self.rates.bucket(t);
        self.segmentation.cells(g).iter().map(|&c| rates[c]).sum()
    }

    pub fn region_rates(&self, t: f64) -> Vec<f64> {
        (0..self.n_regions()).map(|g| self.region_rate(g, t)).collect()
    }
}
