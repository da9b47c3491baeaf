use std::cell::RefCell;
use std::rc::Rc;

use rand::SeedableRng;

use super::*;
use crate::scenarios::toy_two_region;
use crate::sim::{run_episode, sample_chain, ResponseRecord};

#[derive(Default)]
struct Calls {
    llp: Vec<(RegionId, EpochCause)>,
    hlp: usize,
}

struct KeepLlp(Rc<RefCell<Calls>>);

impl LowLevelPlanner for KeepLlp {
    fn plan(&mut self, obs: &RegionObs, cause: EpochCause, state: &SimState, _: &World, _: &mut ChaCha8Rng) -> Result<Vec<DepotId>> {
        self.0.borrow_mut().llp.push((obs.region, cause));
        Ok(obs.responders.iter().map(|&v| state.responders[v].depot).collect())
    }
}

struct FixedHlp(Rc<RefCell<Calls>>, Vec<usize>);

impl HighLevelPlanner for FixedHlp {
    fn plan(&mut self, _: &CityObs, _: &[usize], _: &SimState, _: &World, _: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        self.0.borrow_mut().hlp += 1;
        Ok(self.1.clone())
    }
}

fn setup(mode: TriggerMode, counts: Vec<usize>) -> (World, SimState, Controller<'static>, Rc<RefCell<Calls>>) {
    let world = toy_two_region().world().unwrap();
    let placement = initial_placement(&world, 3).unwrap();
    let trig = TriggerPolicy::new(mode);
    let state = SimState::new(&world, trig.sim_config(1200.0), &placement).unwrap();
    let calls = Rc::new(RefCell::new(Calls::default()));
    let llps: Vec<Box<dyn LowLevelPlanner>> = vec![Box::new(KeepLlp(calls.clone())), Box::new(KeepLlp(calls.clone()))];
    let ctl = Controller::new(trig, Some(Box::new(FixedHlp(calls.clone(), counts))), llps);
    (world, state, ctl, calls)
}

fn record(region: RegionId) -> ResponseRecord {
    ResponseRecord { incident: 0, cell: 0, report_t: 0.0, response_time_s: 250.0, responder: 0, region }
}

#[test]
fn initial_placement_uses_lowest_depots() {
    let world = toy_two_region().world().unwrap();
    // equal mean rates: floors 1 and 1, the spare goes to region 0
    assert_eq!(initial_placement(&world, 3).unwrap(), vec![(0, 0), (1, 0), (2, 1)]);
    assert!(matches!(initial_placement(&world, 5), Err(Error::Config(_))));
}

#[test]
fn rate_change_inside_interval_is_ignored() {
    let (world, mut state, mut ctl, calls) = setup(TriggerMode::Ours, vec![2, 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    ctl.on_event(&SimEvent::Start, &mut state, &world, &mut rng).unwrap();
    assert_eq!(calls.borrow().hlp, 1);
    state.now = 1800.0;
    ctl.last_hlp_rates = Some(vec![-1.0, -1.0]);
    ctl.on_event(&SimEvent::RateBoundary { bucket: 1 }, &mut state, &world, &mut rng).unwrap();
    assert_eq!(calls.borrow().hlp, 1);
    state.now = 3600.0;
    ctl.on_event(&SimEvent::RateBoundary { bucket: 1 }, &mut state, &world, &mut rng).unwrap();
    assert_eq!(calls.borrow().hlp, 2);
}

#[test]
fn unchanged_rates_do_not_fire() {
    let (world, mut state, mut ctl, calls) = setup(TriggerMode::Ours, vec![2, 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    ctl.on_event(&SimEvent::Start, &mut state, &world, &mut rng).unwrap();
    state.now = 3.0 * 3600.0;
    ctl.on_event(&SimEvent::RateBoundary { bucket: 0 }, &mut state, &world, &mut rng).unwrap();
    assert_eq!(calls.borrow().hlp, 1);
}

#[test]
fn dispatch_runs_only_that_region() {
    let (world, mut state, mut ctl, calls) = setup(TriggerMode::Ours, vec![2, 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    ctl.on_event(&SimEvent::Start, &mut state, &world, &mut rng).unwrap();
    calls.borrow_mut().llp.clear();
    let ev = SimEvent::Incident { incident: 0, cell: 5, outcome: Some(record(1)) };
    ctl.on_event(&ev, &mut state, &world, &mut rng).unwrap();
    assert_eq!(calls.borrow().llp, vec![(1, EpochCause::Dispatch { response_time_s: 250.0 })]);
    assert_eq!(calls.borrow().hlp, 1);
}

#[test]
fn changed_counts_run_every_region() {
    let (world, mut state, mut ctl, calls) = setup(TriggerMode::Ours, vec![1, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    ctl.on_event(&SimEvent::Start, &mut state, &world, &mut rng).unwrap();
    assert_eq!(state.region_counts(2), vec![1, 2]);
    assert!(state.depots_exclusive());
    let regions: Vec<RegionId> = calls.borrow().llp.iter().map(|c| c.0).collect();
    assert_eq!(regions, vec![0, 1]);
    assert_eq!(ctl.log.hlp_epochs[0].counts_before, vec![2, 1]);
    assert_eq!(ctl.log.hlp_epochs[0].counts_after, vec![1, 2]);
}

#[test]
fn baseline_runs_everything_on_incidents() {
    let (world, mut state, mut ctl, calls) = setup(TriggerMode::Baseline, vec![2, 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    ctl.on_event(&SimEvent::Start, &mut state, &world, &mut rng).unwrap();
    calls.borrow_mut().llp.clear();
    ctl.on_event(&SimEvent::Incident { incident: 0, cell: 5, outcome: Some(record(1)) }, &mut state, &world, &mut rng).unwrap();
    ctl.on_event(&SimEvent::Incident { incident: 1, cell: 5, outcome: None }, &mut state, &world, &mut rng).unwrap();
    ctl.on_event(&SimEvent::IdleTimeout, &mut state, &world, &mut rng).unwrap();
    assert_eq!(calls.borrow().hlp, 4);
    let c = &calls.borrow().llp;
    assert_eq!(c.len(), 6);
    assert_eq!(c[0], (0, EpochCause::Incident));
    assert_eq!(c[1], (1, EpochCause::Dispatch { response_time_s: 250.0 }));
    assert_eq!(c[5], (1, EpochCause::Timeout));
}

#[test]
fn apply_hlp_reaches_requested_counts() {
    let world = toy_two_region().world().unwrap();
    for target in [vec![1, 2], vec![2, 1], vec![0, 2], vec![2, 0]] {
        let n: usize = target.iter().sum();
        let placement = initial_placement(&world, n).unwrap();
        let mut state = SimState::new(&world, SimConfig::default(), &placement).unwrap();
        apply_hlp(&target, &mut state, &world).unwrap();
        assert_eq!(state.region_counts(2), target);
        assert!(state.depots_exclusive());
        for r in &state.responders {
            assert_eq!(world.segmentation.region_of_depot(r.depot), r.region);
        }
    }
}

#[test]
fn ours_hlp_calls_are_spaced() {
    // full episode with an HLP that alternates its answer
    struct Flip(usize);
    impl HighLevelPlanner for Flip {
        fn plan(&mut self, _: &CityObs, _: &[usize], _: &SimState, _: &World, _: &mut ChaCha8Rng) -> Result<Vec<usize>> {
            self.0 += 1;
            Ok(if self.0 % 2 == 0 { vec![2, 1] } else { vec![1, 2] })
        }
    }
    let world = toy_two_region().world().unwrap();
    let trig = TriggerPolicy::new(TriggerMode::Ours);
    let placement = initial_placement(&world, 3).unwrap();
    let state = SimState::new(&world, trig.sim_config(1200.0), &placement).unwrap();
    let calls = Rc::new(RefCell::new(Calls::default()));
    let llps: Vec<Box<dyn LowLevelPlanner>> = vec![Box::new(KeepLlp(calls.clone())), Box::new(KeepLlp(calls.clone()))];
    let mut ctl = Controller::new(trig, Some(Box::new(Flip(0))), llps);
    let chain = sample_chain(&world.rates, 24.0 * 3600.0, 4).unwrap();
    run_episode(&world, &chain, state, &mut ctl, 4).unwrap();
    let ts: Vec<f64> = ctl.log.hlp_epochs.iter().map(|e| e.t).collect();
    assert!(ts.len() >= 6);
    assert!(ts.windows(2).all(|w| w[1] - w[0] >= 3600.0));
}
