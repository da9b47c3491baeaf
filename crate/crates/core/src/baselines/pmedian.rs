use rand_chacha::ChaCha8Rng;

use super::{check_region, match_to_depots};
use crate::error::{Error, Result};
use crate::features::RegionObs;
use crate::geo::{DepotId, World};
use crate::hierarchy::{EpochCause, LowLevelPlanner};
use crate::nn::Matrix;
use crate::sim::SimState;

/// Largest number of subsets solved by enumeration.
pub const EXACT_LIMIT: u64 = 100_000;

const TIE_TOL: f64 = 1e-12;

/// Demand-weighted facility selection with a penalty on uneven coverage.
#[derive(Debug, Clone)]
pub struct PMedianProblem {
    /// Demand per cell.
    pub demand: Vec<f64>,
    /// Travel time, cells x candidate depots.
    pub cost: Matrix,
}

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u64) / (i as u64 + 1);
        if acc > u64::MAX / 2 {
            return u64::MAX;
        }
    }
    acc
}

fn better(a: f64, b: f64) -> bool {
    a < b - TIE_TOL * (1.0 + b.abs())
}

impl PMedianProblem {
    pub fn new(demand: Vec<f64>, cost: Matrix) -> Result<Self> {
        if demand.len() != cost.rows() {
            return Err(Error::Input(format!("{} demands for {} cells", demand.len(), cost.rows())));
        }
        if cost.cols() == 0 {
            return Err(Error::Input("no candidate depots".into()));
        }
        Ok(Self { demand, cost })
    }

    pub fn n_depots(&self) -> usize {
        self.cost.cols()
    }

    /// Distance term plus `alpha` times the population variance of the demand
    /// each selected depot covers. `sel` must be sorted.
    pub fn objective(&self, sel: &[usize], alpha: f64) -> f64 {
        let mut covered = vec![0.0; sel.len()];
        let mut dist = 0.0;
        for (c, &w) in self.demand.iter().enumerate() {
            let mut best = 0;
            for k in 1..sel.len() {
                if self.cost.get(c, sel[k]) < self.cost.get(c, sel[best]) {
                    best = k;
                }
            }
            dist += w * self.cost.get(c, sel[best]);
            covered[best] += w;
        }
        if alpha == 0.0 {
            return dist;
        }
        let n = sel.len() as f64;
        let mean = covered.iter().sum::<f64>() / n;
        let var = covered.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        dist + alpha * var
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.n_depots() {
            return Err(Error::Infeasible(format!("cannot select {k} of {} depots", self.n_depots())));
        }
        Ok(())
    }

    /// Best subset by enumeration; lexicographically smallest on ties.
    pub fn solve_exact(&self, k: usize, alpha: f64) -> Result<Vec<usize>> {
        self.check_k(k)?;
        let m = self.n_depots();
        let mut sel: Vec<usize> = (0..k).collect();
        let mut best = sel.clone();
        let mut best_v = self.objective(&sel, alpha);
        loop {
            // next combination
            let mut i = k;
            while i > 0 && sel[i - 1] == m - k + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            sel[i - 1] += 1;
            for j in i..k {
                sel[j] = sel[j - 1] + 1;
            }
            let v = self.objective(&sel, alpha);
            if better(v, best_v) {
                best_v = v;
                best.copy_from_slice(&sel);
            }
        }
        Ok(best)
    }

    /// Greedy construction from `seed` followed by best-improvement
    /// interchange.
    fn descend(&self, k: usize, alpha: f64, seed: Option<usize>) -> (Vec<usize>, f64) {
        let m = self.n_depots();
        let mut sel: Vec<usize> = seed.into_iter().collect();
        while sel.len() < k {
            let mut pick: Option<(usize, f64)> = None;
            for j in (0..m).filter(|j| !sel.contains(j)) {
                let mut trial = sel.clone();
                trial.push(j);
                trial.sort_unstable();
                let v = self.objective(&trial, alpha);
                if pick.map_or(true, |(_, b)| better(v, b)) {
                    pick = Some((j, v));
                }
            }
            sel.push(pick.expect("free depot").0);
            sel.sort_unstable();
        }
        let mut cur = self.objective(&sel, alpha);
        loop {
            let mut step: Option<(Vec<usize>, f64)> = None;
            for out in 0..k {
                for j in (0..m).filter(|j| !sel.contains(j)) {
                    let mut trial = sel.clone();
                    trial[out] = j;
                    trial.sort_unstable();
                    let v = self.objective(&trial, alpha);
                    let bar = step.as_ref().map_or(cur, |s| s.1);
                    if better(v, bar) {
                        step = Some((trial, v));
                    }
                }
            }
            match step {
                Some((s, v)) => {
                    sel = s;
                    cur = v;
                }
                None => return (sel, cur),
            }
        }
    }

    /// Interchange local search restarted from a greedy construction and from
    /// every depot as forced first pick; keeps the best local optimum.
    pub fn solve_swap(&self, k: usize, alpha: f64) -> Result<Vec<usize>> {
        self.check_k(k)?;
        let mut best = self.descend(k, alpha, None);
        for j in 0..self.n_depots() {
            let cand = self.descend(k, alpha, Some(j));
            if better(cand.1, best.1) || (!better(best.1, cand.1) && cand.0 < best.0) {
                best = cand;
            }
        }
        Ok(best.0)
    }

    /// Exact when the number of subsets is at most [`EXACT_LIMIT`].
    pub fn solve(&self, k: usize, alpha: f64) -> Result<Vec<usize>> {
        self.check_k(k)?;
        if binomial(self.n_depots(), k) <= EXACT_LIMIT {
            self.solve_exact(k, alpha)
        } else {
            self.solve_swap(k, alpha)
        }
    }
}

/// p-median stationing of one region with coverage balancing weight `alpha`.
pub fn pmedian_plan(obs: &RegionObs, world: &World, t: f64, alpha: f64) -> Result<Vec<DepotId>> {
    check_region(obs)?;
    let cells = world.segmentation.cells(obs.region);
    let rates = world.rates.bucket(t);
    let demand: Vec<f64> = cells.iter().map(|&c| rates[c]).collect();
    let mut cost = Matrix::zeros(cells.len(), obs.n_depots());
    for (i, &c) in cells.iter().enumerate() {
        for (j, &d) in obs.depots.iter().enumerate() {
            cost.set(i, j, world.travel.time(world.depot_cell(d), c, t));
        }
    }
    let chosen = PMedianProblem::new(demand, cost)?.solve(obs.n_responders(), alpha)?;
    match_to_depots(obs, &chosen)
}

pub struct PMedianLlp {
    pub alpha: f64,
}

impl LowLevelPlanner for PMedianLlp {
    fn plan(&mut self, obs: &RegionObs, _: EpochCause, state: &SimState, world: &World, _: &mut ChaCha8Rng) -> Result<Vec<DepotId>> {
        pmedian_plan(obs, world, state.now, self.alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_problem(rng: &mut ChaCha8Rng, cells: usize, depots: usize) -> PMedianProblem {
        let demand = (0..cells).map(|_| rng.gen_range(0.0..2.0)).collect();
        let cost = Matrix::from_vec(cells, depots, (0..cells * depots).map(|_| rng.gen_range(0.0..600.0)).collect());
        PMedianProblem::new(demand, cost).unwrap()
    }

    #[test]
    fn single_median_is_brute_force_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let p = random_problem(&mut rng, 12, 6);
            let mut best = 0;
            let mut best_v = f64::INFINITY;
            for j in 0..6 {
                let v: f64 = (0..12).map(|c| p.demand[c] * p.cost.get(c, j)).sum();
                if v < best_v {
                    best_v = v;
                    best = j;
                }
            }
            assert_eq!(p.solve(1, 0.0).unwrap(), vec![best]);
        }
    }

    #[test]
    fn balance_term_breaks_distance_tie() {
        let cost = Matrix::from_rows(&[vec![0.0, 10.0, 10.0], vec![5.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]);
        let p = PMedianProblem::new(vec![2.0, 1.0, 1.0], cost).unwrap();
        assert_eq!(p.objective(&[0, 1], 0.0), p.objective(&[0, 2], 0.0));
        assert_eq!(p.solve(2, 0.0).unwrap(), vec![0, 1]);
        assert_eq!(p.solve(2, 1e6).unwrap(), vec![0, 2]);
    }

    #[test]
    fn zero_demand_picks_lowest_ids() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = random_problem(&mut rng, 8, 5);
        p.demand.iter_mut().for_each(|d| *d = 0.0);
        assert_eq!(p.solve(3, 0.5).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn interchange_agrees_with_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..100 {
            let m = rng.gen_range(2..=10);
            let k = rng.gen_range(1..=m);
            let p = random_problem(&mut rng, 20, m);
            let alpha = if trial % 2 == 0 { 0.0 } else { 50.0 };
            let e = p.objective(&p.solve_exact(k, alpha).unwrap(), alpha);
            let s = p.objective(&p.solve_swap(k, alpha).unwrap(), alpha);
            assert!((e - s).abs() <= 1e-9 * (1.0 + e.abs()), "trial {trial}: exact {e} swap {s}");
        }
    }

    #[test]
    fn too_many_responders_is_infeasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_problem(&mut rng, 4, 2);
        assert!(matches!(p.solve(3, 0.0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn binomial_saturates() {
        assert_eq!(binomial(10, 3), 120);
        assert_eq!(binomial(5, 5), 1);
        assert!(binomial(200, 100) > EXACT_LIMIT);
    }

    #[test]
    fn interchange_agrees_on_planar_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..300 {
            let m = rng.gen_range(2..=10);
            let k = rng.gen_range(1..=m);
            let pts: Vec<(f64, f64)> = (0..20 + m).map(|_| (rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0))).collect();
            let demand = (0..20).map(|_| rng.gen_range(0.0..2.0)).collect();
            let mut cost = Matrix::zeros(20, m);
            for c in 0..20 {
                for j in 0..m {
                    let (a, b) = (pts[c], pts[20 + j]);
                    cost.set(c, j, (a.0 - b.0).hypot(a.1 - b.1));
                }
            }
            let p = PMedianProblem::new(demand, cost).unwrap();
            let alpha = if trial % 2 == 0 { 0.0 } else { 5.0 };
            let e = p.objective(&p.solve_exact(k, alpha).unwrap(), alpha);
            let s = p.objective(&p.solve_swap(k, alpha).unwrap(), alpha);
            assert!((e - s).abs() <= 1e-9 * (1.0 + e.abs()), "trial {trial}: exact {e} swap {s}");
        }
    }
}
