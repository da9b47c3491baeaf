//! Projections of the simulator state onto the fixed-size features consumed
//! by the planners.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::geo::{DepotId, FeatureScales, RegionId, World};
use crate::nn::Matrix;
use crate::sim::{ResponderId, ResponderState, SimState};

/// Time for responder `r` to be idle at depot `d` after finishing its current
/// task, measured from `t`. Zero if it is already at the depot.
pub fn arrival_time(r: &ResponderState, d: DepotId, t: f64, world: &World) -> f64 {
    let depot_cell = world.depot_cell(d);
    match r.task {
        Some(task) if task.t_avail >= t => {
            let h = world.hospitals[task.hospital].cell;
            (task.t_avail - t) + world.travel.time(h, depot_cell, task.t_avail)
        }
        _ => {
            if r.track.is_at(depot_cell, t) {
                0.0
            } else {
                r.track.time_to(depot_cell, t, &world.travel)
            }
        }
    }
}

/// `phi[v][d]` for the given responders (rows) and depots (columns).
pub fn arrival_table(state: &SimState, responders: &[ResponderId], depots: &[DepotId], world: &World) -> Matrix {
    let mut m = Matrix::zeros(responders.len(), depots.len());
    for (i, &v) in responders.iter().enumerate() {
        let r = &state.responders[v];
        for (j, &d) in depots.iter().enumerate() {
            m.set(i, j, arrival_time(r, d, state.now, world));
        }
    }
    m
}

/// Likelihood that some responder is stationed at depot column `d`:
/// the column sum of the action clipped to `[0, 1]`.
pub fn depot_occupancy(action: &Matrix, d: usize) -> f64 {
    action.col_sum(d).clamp(0.0, 1.0)
}

/// Likelihood-weighted arrival time at depot column `d`.
pub fn likely_available_time(action: &Matrix, phi: &Matrix, d: usize) -> f64 {
    (0..action.rows()).map(|v| action.get(v, d) * phi.get(v, d)).sum()
}

/// Raw low-level observation of one region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionObs {
    pub region: RegionId,
    pub responders: Vec<ResponderId>,
    pub depots: Vec<DepotId>,
    /// Arrival times in seconds, responders x depots.
    pub phi: Matrix,
    /// Nearby incident rate per depot (incidents/hour).
    pub depot_rates: Vec<f64>,
}

impl RegionObs {
    pub fn capture(state: &SimState, world: &World, g: RegionId) -> Self {
        let responders = state.region_responders(g);
        let depots = world.segmentation.depots(g).to_vec();
        let phi = arrival_table(state, &responders, &depots, world);
        let depot_rates = world.depot_rates(g, state.now);
        Self { region: g, responders, depots, phi, depot_rates }
    }

    pub fn n_responders(&self) -> usize {
        self.responders.len()
    }

    pub fn n_depots(&self) -> usize {
        self.depots.len()
    }

    /// Copy with log-normal multiplicative noise on the time and rate channels.
    pub fn with_noise(&self, noise: &ObservationNoise, rng: &mut impl Rng) -> Self {
        let mut out = self.clone();
        if noise.sigma_time > 0.0 {
            let noisy = apply_observation_noise(self.phi.data(), noise.sigma_time, rng);
            out.phi.data_mut().copy_from_slice(&noisy);
        }
        if noise.sigma_rate > 0.0 {
            out.depot_rates = apply_observation_noise(&self.depot_rates, noise.sigma_rate, rng);
        }
        out
    }
}

/// Actor input: one row per responder, `(phi, lambda)` pairs for each depot.
pub fn llp_actor_input(obs: &RegionObs, scales: &FeatureScales) -> Matrix {
    let m = obs.n_depots();
    let mut x = Matrix::zeros(obs.n_responders(), 2 * m);
    for v in 0..obs.n_responders() {
        let row = x.row_mut(v);
        for d in 0..m {
            row[2 * d] = obs.phi.get(v, d) / scales.time_s;
            row[2 * d + 1] = obs.depot_rates[d] / scales.depot_rate;
        }
    }
    x
}

pub fn llp_critic_dim(n_depots: usize) -> usize {
    3 * n_depots
}

/// Critic input: `(eta, beta, lambda)` per depot.
pub fn llp_critic_input(obs: &RegionObs, action: &Matrix, scales: &FeatureScales) -> Vec<f64> {
    let m = obs.n_depots();
    let mut x = Vec::with_capacity(3 * m);
    for d in 0..m {
        x.push(depot_occupancy(action, d));
        x.push(likely_available_time(action, &obs.phi, d) / scales.time_s);
        x.push(obs.depot_rates[d] / scales.depot_rate);
    }
    x
}

/// Chain rule from critic-input gradients back to the likelihood matrix.
/// Occupancy contributes only where its column sum lies strictly inside the
/// clipping interval.
pub fn llp_critic_input_backward(obs: &RegionObs, action: &Matrix, d_input: &[f64], scales: &FeatureScales) -> Matrix {
    let (n, m) = (action.rows(), action.cols());
    let mut da = Matrix::zeros(n, m);
    for d in 0..m {
        let s = action.col_sum(d);
        let d_eta = if s > 0.0 && s < 1.0 { d_input[3 * d] } else { 0.0 };
        let d_beta = d_input[3 * d + 1] / scales.time_s;
        for v in 0..n {
            da.set(v, d, d_eta + d_beta * obs.phi.get(v, d));
        }
    }
    da
}

/// Raw high-level observation.
#[derive(Debug, Clone, PartialEq)]
pub struct CityObs {
    pub region_rates: Vec<f64>,
    pub counts: Vec<usize>,
    pub n_responders: usize,
}

impl CityObs {
    pub fn capture(state: &SimState, world: &World) -> Self {
        Self {
            region_rates: world.region_rates(state.now),
            counts: state.region_counts(world.n_regions()),
            n_responders: state.responders.len(),
        }
    }

    pub fn with_noise(&self, noise: &ObservationNoise, rng: &mut impl Rng) -> Self {
        let mut out = self.clone();
        if noise.sigma_rate > 0.0 {
            out.region_rates = apply_observation_noise(&self.region_rates, noise.sigma_rate, rng);
        }
        out
    }
}

/// High-level input: `(lambda_g, A[g])` per region.
pub fn hlp_input(obs: &CityObs, scales: &FeatureScales) -> Vec<f64> {
    let v = obs.n_responders.max(1) as f64;
    obs.region_rates
        .iter()
        .zip(&obs.counts)
        .flat_map(|(&r, &a)| [r / scales.region_rate, a as f64 / v])
        .collect()
}

/// Standard deviations of the log-normal observation noise per channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObservationNoise {
    pub sigma_rate: f64,
    pub sigma_time: f64,
}

impl ObservationNoise {
    pub fn is_none(&self) -> bool {
        self.sigma_rate == 0.0 && self.sigma_time == 0.0
    }
}

/// Multiplies each value by an independent `exp(N(0, sigma^2))` draw.
pub fn apply_observation_noise(values: &[f64], sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    assert!(sigma >= 0.0, "noise sigma must be nonnegative");
    if sigma == 0.0 {
        return values.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    values.iter().map(|&v| v * normal.sample(rng).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{Depot, Grid, Hospital, RateModel, Segmentation, TravelModel, HOUR_S};
    use crate::sim::{Incident, SimConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world() -> World {
        let grid = Grid::new(6, 1, 1.0).unwrap();
        let depots = vec![Depot { id: 0, cell: 0, capacity: 1 }, Depot { id: 1, cell: 5, capacity: 1 }];
        let travel = TravelModel::synthetic(&grid, 30.0, HOUR_S, &[1.0]).unwrap();
        let seg = Segmentation::single(6, &depots).unwrap();
        World::new(grid, depots, vec![Hospital { id: 0, cell: 3 }], travel, RateModel::constant(6, 0.1), seg).unwrap()
    }

    #[test]
    fn arrival_time_cases() {
        let w = world();
        let mut s = SimState::new(&w, SimConfig::default(), &[(0, 0)]).unwrap();
        assert_eq!(arrival_time(&s.responders[0], 0, 0.0, &w), 0.0);
        assert_eq!(arrival_time(&s.responders[0], 1, 0.0, &w), 600.0);
        s.now = 100.0;
        s.dispatch(Incident { id: 0, cell: 2, report_t: 100.0, scene_arrival_t: None }, &w).unwrap();
        let r = &s.responders[0];
        let t_avail = r.t_avail().unwrap();
        // hospital cell 3 -> depot cell 5 = 240 s
        assert_eq!(arrival_time(r, 1, 100.0, &w), t_avail - 100.0 + 240.0);
        assert!(arrival_time(r, 1, 100.0, &w) >= t_avail - 100.0);
    }

    #[test]
    fn busy_formula_direct() {
        // t = 100, t_avail = 400, travel(h, d) = 250 -> 550
        let grid = Grid::new(2, 1, 1.0).unwrap();
        let depots = vec![Depot { id: 0, cell: 1, capacity: 1 }];
        let travel = TravelModel::from_tables(2, HOUR_S, vec![vec![0.0, 250.0, 250.0, 0.0]]).unwrap();
        let seg = Segmentation::single(2, &depots).unwrap();
        let w = World::new(grid, depots, vec![Hospital { id: 0, cell: 0 }], travel, RateModel::constant(2, 0.0), seg).unwrap();
        let mut s = SimState::new(&w, SimConfig::default(), &[(0, 0)]).unwrap();
        s.responders[0].task = Some(crate::sim::Task {
            incident: 0,
            incident_cell: 0,
            hospital: 0,
            scene_arrival_t: 50.0,
            t_avail: 400.0,
        });
        assert_eq!(arrival_time(&s.responders[0], 0, 100.0, &w), 550.0);
    }

    #[test]
    fn occupancy_and_available_time() {
        let a = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.8, 0.2]]);
        assert_eq!(depot_occupancy(&a, 0), 1.0);
        let b = Matrix::from_rows(&[vec![0.4, 0.6]]);
        assert_eq!(depot_occupancy(&b, 0), 0.4);
        assert_eq!(depot_occupancy(&Matrix::zeros(0, 2), 0), 0.0);

        let a = Matrix::from_rows(&[vec![1.0]]);
        let phi = Matrix::from_rows(&[vec![300.0]]);
        assert_eq!(likely_available_time(&a, &phi, 0), 300.0);
        let a = Matrix::from_rows(&[vec![0.25, 0.75], vec![0.5, 0.5]]);
        let phi = Matrix::from_rows(&[vec![100.0, 0.0], vec![500.0, 0.0]]);
        assert_eq!(likely_available_time(&a, &phi, 0), 275.0);
        let z = Matrix::from_rows(&[vec![0.0, 1.0]]);
        assert_eq!(likely_available_time(&z, &Matrix::from_rows(&[vec![9.0, 9.0]]), 0), 0.0);
    }

    #[test]
    fn occupancy_is_permutation_invariant() {
        let a = Matrix::from_rows(&[vec![0.1, 0.9], vec![0.3, 0.7], vec![0.2, 0.8]]);
        let p = a.permute_rows(&[2, 0, 1]);
        for d in 0..2 {
            assert!((depot_occupancy(&a, d) - depot_occupancy(&p, d)).abs() < 1e-15);
        }
    }

    #[test]
    fn critic_backward_matches_finite_difference() {
        let w = world();
        let s = SimState::new(&w, SimConfig::default(), &[(0, 0), (1, 0)]).unwrap();
        let obs = RegionObs::capture(&s, &w, 0);
        let a = Matrix::from_rows(&[vec![0.3, 0.7], vec![0.45, 0.55]]);
        let weights = [0.7, -1.3, 0.2, 0.4, 2.0, -0.5];
        let f = |a: &Matrix| -> f64 {
            llp_critic_input(&obs, a, &w.scales).iter().zip(&weights).map(|(x, w)| x * w).sum()
        };
        let g = llp_critic_input_backward(&obs, &a, &weights, &w.scales);
        let eps = 1e-6;
        for v in 0..2 {
            for d in 0..2 {
                let mut p = a.clone();
                p.add_at(v, d, eps);
                let mut m = a.clone();
                m.add_at(v, d, -eps);
                let fd = (f(&p) - f(&m)) / (2.0 * eps);
                assert!((fd - g.get(v, d)).abs() < 1e-6, "{fd} vs {}", g.get(v, d));
            }
        }
    }

    #[test]
    fn noise_identity_and_median() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = vec![1.0, 2.5, 0.0];
        assert_eq!(apply_observation_noise(&v, 0.0, &mut rng), v);
        let ones = vec![1.0; 100_000];
        let mut noisy = apply_observation_noise(&ones, 0.2, &mut rng);
        assert!(noisy.iter().all(|x| *x >= 0.0));
        noisy.sort_by(f64::total_cmp);
        let median = noisy[50_000];
        assert!((median - 1.0).abs() < 0.02, "median {median}");
    }

    #[test]
    fn hlp_counts_sum_to_fleet() {
        let w = world();
        let s = SimState::new(&w, SimConfig::default(), &[(0, 0), (1, 0)]).unwrap();
        let obs = CityObs::capture(&s, &w);
        assert_eq!(obs.counts.iter().sum::<usize>(), 2);
        assert_eq!(hlp_input(&obs, &w.scales).len(), 2);
    }
}
