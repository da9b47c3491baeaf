use crate::error::{Error, Result};

/// Appends the constant 1 to the high-level actor output and L1-normalizes,
/// giving the target proportion of responders per region.
pub fn normalize_hlp(a_h: &[f64]) -> Result<Vec<f64>> {
    if a_h.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::Input("high-level action entries must be finite and nonnegative".into()));
    }
    let total: f64 = a_h.iter().sum::<f64>() + 1.0;
    Ok(a_h.iter().chain(std::iter::once(&1.0)).map(|x| x / total).collect())
}

/// Integer responder counts per region close to `proportions * n_responders`
/// without exceeding `caps` (the depot count of each region).
///
/// Follows the greedy procedure exactly: floor the proportional shares of
/// the still-open regions, hand out the remainder one at a time to the
/// region with the largest `p[g] * V_avail - A[g]` (lowest id on ties), then
/// pin any region above its cap at the cap, close it and repeat on the
/// remaining responders.
pub fn greedy_redistribute(proportions: &[f64], n_responders: usize, caps: &[usize]) -> Result<Vec<usize>> {
    let k = proportions.len();
    if caps.len() != k {
        return Err(Error::Input("one cap per region required".into()));
    }
    if proportions.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Input("proportions must be finite and nonnegative".into()));
    }
    let capacity: usize = caps.iter().sum();
    if n_responders > capacity {
        return Err(Error::Infeasible(format!("{n_responders} responders exceed {capacity} depots")));
    }

    let mut counts = vec![0usize; k];
    let mut open: Vec<bool> = vec![true; k];
    let mut v_avail = n_responders;
    loop {
        let assigned: usize = (0..k).filter(|&g| open[g]).map(|g| counts[g]).sum();
        if assigned >= v_avail {
            break;
        }
        let denom: f64 = (0..k).filter(|&g| open[g]).map(|g| proportions[g]).sum();
        for g in (0..k).filter(|&g| open[g]) {
            counts[g] = if denom > 0.0 {
                (proportions[g] / denom * v_avail as f64 + 1e-9).floor() as usize
            } else {
                0
            };
        }
        let assigned: usize = (0..k).filter(|&g| open[g]).map(|g| counts[g]).sum();
        let mut remain = v_avail.saturating_sub(assigned);
        while remain > 0 {
            let mut best: Option<(usize, f64)> = None;
            for g in (0..k).filter(|&g| open[g]) {
                let gap = proportions[g] * v_avail as f64 - counts[g] as f64;
                if best.map_or(true, |(_, b)| gap > b) {
                    best = Some((g, gap));
                }
            }
            let (g, _) = best.ok_or_else(|| Error::Logic("no open region left for remaining responders".into()))?;
            counts[g] += 1;
            remain -= 1;
        }
        let mut closed_any = false;
        for g in 0..k {
            if open[g] && counts[g] > caps[g] {
                counts[g] = caps[g];
                open[g] = false;
                v_avail -= caps[g];
                closed_any = true;
            }
        }
        if !closed_any {
            let assigned: usize = (0..k).filter(|&g| open[g]).map(|g| counts[g]).sum();
            if assigned != v_avail {
                return Err(Error::Logic("redistribution made no progress".into()));
            }
            break;
        }
    }
    Ok(counts)
}
