//! Discretization of continuous actions: maximum-weight matching of
//! responders to depots, greedy redistribution of responder counts across
//! regions, and min-cost-flow selection of the responders that move.

mod flow;
mod matching;
mod redistribute;

pub use flow::{min_cost_flow_assign, FlowMove};
pub use matching::{assignment_value, max_weight_match, min_cost_assignment};
pub use redistribute::{greedy_redistribute, normalize_hlp};
