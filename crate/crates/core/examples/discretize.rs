//! Turns continuous planner outputs into concrete moves: depot matching for
//! a region, integer fleet counts for the city, and the cheapest set of
//! cross-region moves that realizes new counts.

use erm_core::nn::Matrix;
use erm_core::optim::{assignment_value, greedy_redistribute, max_weight_match, min_cost_flow_assign, normalize_hlp};

fn main() -> erm_core::Result<()> {
    let likelihoods = Matrix::from_rows(&[vec![0.9, 0.1], vec![0.8, 0.2]]);
    let m = max_weight_match(&likelihoods)?;
    println!("matching {m:?}, total likelihood {:.2}", assignment_value(&likelihoods, &m));

    let wide = Matrix::from_rows(&[vec![0.2, 0.1, 0.7], vec![0.1, 0.2, 0.7]]);
    println!("two responders, three depots: {:?}", max_weight_match(&wide)?);

    let shares = normalize_hlp(&[3.0, 1.0])?;
    println!("city output [3, 1] -> shares {shares:?}");
    println!("0.55/0.45 of 5 responders -> {:?}", greedy_redistribute(&[0.55, 0.45], 5, &[10, 10])?);
    println!("0.8/0.2 of 6 with region 0 capped at 2 -> {:?}", greedy_redistribute(&[0.8, 0.2], 6, &[2, 10])?);

    // region 0 holds responders 0 and 1 and must give both up; region 1 has free depots 2 and 3
    let cost = [[0.0, 0.0, 100.0, 300.0], [0.0, 0.0, 200.0, 250.0]];
    let moves = min_cost_flow_assign(&[2, 0], &[0, 2], &[vec![0, 1], vec![]], &[vec![], vec![2, 3]], |v, d| cost[v][d])?;
    let total: f64 = moves.iter().map(|m| cost[m.responder][m.depot]).sum();
    for m in &moves {
        println!("responder {} -> depot {}", m.responder, m.depot);
    }
    println!("total travel {total} s");
    Ok(())
}
