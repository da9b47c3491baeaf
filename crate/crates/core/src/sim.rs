//! Continuous-time discrete-event simulation of incident arrivals,
//! nearest-available dispatch, on-scene service, hospital transport and
//! return-to-depot movement.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::io::{Read, Write};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::geo::{CellId, DepotId, HospitalId, RateModel, RegionId, TravelModel, World, HOUR_S};

pub type ResponderId = usize;
pub type IncidentId = usize;

/// Movement of a responder from `origin` to `destination`. A track with
/// `origin == destination` is stationary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationTrack {
    pub origin: CellId,
    pub destination: CellId,
    pub depart_t: f64,
    pub arrive_t: f64,
}

impl LocationTrack {
    pub fn stationary(cell: CellId, t: f64) -> Self {
        Self { origin: cell, destination: cell, depart_t: t, arrive_t: t }
    }

    pub fn is_stationary(&self) -> bool {
        self.origin == self.destination
    }

    /// True if the responder is (effectively) at `cell` at time `now`.
    pub fn is_at(&self, cell: CellId, now: f64) -> bool {
        if self.is_stationary() {
            return self.origin == cell;
        }
        now >= self.arrive_t && self.destination == cell
    }

    /// Time needed to reach `target` from the position at `now`.
    ///
    /// Midpoint rule: during the first half of a leg the responder counts as
    /// still at the origin, with the elapsed time credited against the trip
    /// (clamped at zero); during the second half it counts as at the
    /// destination and must finish the leg first.
    pub fn time_to(&self, target: CellId, now: f64, travel: &TravelModel) -> f64 {
        if self.is_stationary() || now >= self.arrive_t {
            return travel.time(self.destination, target, now);
        }
        if now < self.depart_t {
            return (self.depart_t - now) + (self.arrive_t - self.depart_t) + travel.time(self.destination, target, now);
        }
        let elapsed = now - self.depart_t;
        let total = self.arrive_t - self.depart_t;
        if elapsed < 0.5 * total {
            (travel.time(self.origin, target, now) - elapsed).max(0.0)
        } else {
            (self.arrive_t - now) + travel.time(self.destination, target, now)
        }
    }

    /// New track heading to `target`, consistent with [`Self::time_to`].
    pub fn reroute(&self, target: CellId, now: f64, travel: &TravelModel) -> Self {
        let at_destination = self.is_stationary() || now >= self.arrive_t;
        if !at_destination && self.destination == target {
            return *self;
        }
        let tt = self.time_to(target, now, travel);
        let start = if at_destination {
            self.destination
        } else {
            let elapsed = now - self.depart_t;
            if now >= self.depart_t && elapsed < 0.5 * (self.arrive_t - self.depart_t) {
                self.origin
            } else {
                self.destination
            }
        };
        if start == target || tt <= 0.0 {
            return Self::stationary(target, now + tt.max(0.0));
        }
        Self { origin: start, destination: target, depart_t: now, arrive_t: now + tt }
    }

    /// Cell the responder is treated as occupying at `now`.
    pub fn effective_cell(&self, now: f64) -> CellId {
        if self.is_stationary() || now >= self.arrive_t {
            return self.destination;
        }
        if now < self.depart_t || now - self.depart_t < 0.5 * (self.arrive_t - self.depart_t) {
            self.origin
        } else {
            self.destination
        }
    }
}

/// Task of a responder currently assigned to an incident.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub incident: IncidentId,
    pub incident_cell: CellId,
    pub hospital: HospitalId,
    pub scene_arrival_t: f64,
    pub t_avail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponderState {
    pub id: ResponderId,
    /// Depot the responder waits at when not serving an incident.
    pub depot: DepotId,
    pub task: Option<Task>,
    pub track: LocationTrack,
    pub region: RegionId,
}

impl ResponderState {
    pub fn is_busy(&self) -> bool {
        self.task.is_some()
    }

    pub fn incident_cell(&self) -> Option<CellId> {
        self.task.map(|t| t.incident_cell)
    }

    pub fn hospital(&self) -> Option<HospitalId> {
        self.task.map(|t| t.hospital)
    }

    pub fn t_avail(&self) -> Option<f64> {
        self.task.map(|t| t.t_avail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub id: IncidentId,
    pub cell: CellId,
    pub report_t: f64,
    pub scene_arrival_t: Option<f64>,
}

/// Time-sorted realization of incident arrivals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentChain {
    /// `(report_t_s, cell)` in nondecreasing time order.
    pub incidents: Vec<(f64, CellId)>,
    pub horizon_s: f64,
    pub seed: u64,
}

impl IncidentChain {
    pub fn new(mut incidents: Vec<(f64, CellId)>, horizon_s: f64, seed: u64) -> Result<Self> {
        if incidents.iter().any(|(t, _)| !(t.is_finite() && *t >= 0.0)) {
            return input("incident times must be finite and nonnegative");
        }
        incidents.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let horizon_s = incidents.last().map_or(horizon_s, |l| horizon_s.max(l.0));
        Ok(Self { incidents, horizon_s, seed })
    }

    pub fn len(&self) -> usize {
        self.incidents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.incidents.is_empty()
    }

    /// Keeps only incidents whose cell satisfies `keep`.
    pub fn filter_cells(&self, keep: impl Fn(CellId) -> bool) -> Self {
        Self {
            incidents: self.incidents.iter().copied().filter(|(_, c)| keep(*c)).collect(),
            horizon_s: self.horizon_s,
            seed: self.seed,
        }
    }

    /// CSV with header `report_t_s,cell_id`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["report_t_s", "cell_id"])?;
        for (t, c) in &self.incidents {
            out.write_record([t.to_string(), c.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, horizon_s: f64, seed: u64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["report_t_s", "cell_id"] {
            return input(format!("unexpected chain header {headers:?}"));
        }
        let mut incidents = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let t: f64 = rec[0].trim().parse().map_err(|e| Error::Input(format!("bad report time: {e}")))?;
            let c: CellId = rec[1].trim().parse().map_err(|e| Error::Input(format!("bad cell id: {e}")))?;
            incidents.push((t, c));
        }
        Self::new(incidents, horizon_s, seed)
    }
}

/// Samples an incident chain: within every rate bucket overlapping
/// `[0, horizon_s)`, each cell draws a Poisson count with mean
/// `rate * bucket_hours` and spreads those arrivals uniformly over the bucket.
pub fn sample_chain(rates: &RateModel, horizon_s: f64, seed: u64) -> Result<IncidentChain> {
    if !(horizon_s > 0.0) {
        return input("horizon must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut incidents = Vec::new();
    let dur = rates.bucket_duration_s;
    let mut start = 0.0;
    while start < horizon_s {
        let end = (start + dur).min(horizon_s);
        let bucket = rates.bucket(start);
        let hours = (end - start) / HOUR_S;
        for (cell, &lambda) in bucket.iter().enumerate() {
            let mean = lambda * hours;
            if mean <= 0.0 {
                continue;
            }
            let count = Poisson::new(mean).map_err(|e| Error::Input(e.to_string()))?.sample(&mut rng) as u64;
            for _ in 0..count {
                incidents.push((rng.gen_range(start..end), cell));
            }
        }
        start = end;
    }
    IncidentChain::new(incidents, horizon_s, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// On-scene service time.
    pub t_serve_s: f64,
    /// Emit an idle-timeout event after this long without incidents or resets.
    pub idle_timeout_s: Option<f64>,
    /// Emit an event at every rate-bucket boundary.
    pub rate_events: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { t_serve_s: 1200.0, idle_timeout_s: None, rate_events: true }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_serve_s > 0.0) {
            return Err(Error::Config("t_serve_s must be positive".into()));
        }
        if let Some(t) = self.idle_timeout_s {
            if !(t > 0.0) {
                return Err(Error::Config("idle timeout must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub incident: IncidentId,
    pub cell: CellId,
    pub report_t: f64,
    pub response_time_s: f64,
    pub responder: ResponderId,
    /// Region of the responder at dispatch time.
    pub region: RegionId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scheduled {
    t: f64,
    seq: u64,
    responder: ResponderId,
    generation: u64,
    kind: ScheduledKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScheduledKind {
    Release,
    DepotArrival,
}

impl Eq for Scheduled {}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (t, seq)
        other.t.total_cmp(&self.t).then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Full simulator state.
#[derive(Debug, Clone)]
pub struct SimState {
    pub now: f64,
    pub responders: Vec<ResponderState>,
    pub queue: VecDeque<Incident>,
    pub response_log: Vec<ResponseRecord>,
    /// Index of the next chain incident to be reported.
    pub cursor: usize,
    config: SimConfig,
    calendar: BinaryHeap<Scheduled>,
    generations: Vec<u64>,
    seq: u64,
    last_activity: f64,
}

impl SimState {
    /// Responders start stationary at their depots.
    pub fn new(world: &World, config: SimConfig, placement: &[(DepotId, RegionId)]) -> Result<Self> {
        config.validate()?;
        let mut seen = vec![false; world.depots.len()];
        let mut responders = Vec::with_capacity(placement.len());
        for (id, &(d, g)) in placement.iter().enumerate() {
            if d >= world.depots.len() || g >= world.n_regions() {
                return input(format!("responder {id} placed on unknown depot/region"));
            }
            if std::mem::replace(&mut seen[d], true) {
                return Err(Error::Config(format!("depot {d} assigned twice")));
            }
            responders.push(ResponderState {
                id,
                depot: d,
                task: None,
                track: LocationTrack::stationary(world.depot_cell(d), 0.0),
                region: g,
            });
        }
        Ok(Self {
            now: 0.0,
            generations: vec![0; responders.len()],
            responders,
            queue: VecDeque::new(),
            response_log: Vec::new(),
            cursor: 0,
            config,
            calendar: BinaryHeap::new(),
            seq: 0,
            last_activity: 0.0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Responders currently assigned to region `g`, in id order.
    pub fn region_responders(&self, g: RegionId) -> Vec<ResponderId> {
        self.responders.iter().filter(|r| r.region == g).map(|r| r.id).collect()
    }

    pub fn region_counts(&self, n_regions: usize) -> Vec<usize> {
        let mut counts = vec![0; n_regions];
        for r in &self.responders {
            counts[r.region] += 1;
        }
        counts
    }

    /// Restarts the idle-timeout clock.
    pub fn touch(&mut self) {
        self.last_activity = self.now;
    }

    fn schedule(&mut self, t: f64, responder: ResponderId, kind: ScheduledKind) {
        self.seq += 1;
        let generation = self.generations[responder];
        self.calendar.push(Scheduled { t, seq: self.seq, responder, generation, kind });
    }

    /// Assigns the nearest available responder to `incident` or queues it.
    pub fn dispatch(&mut self, incident: Incident, world: &World) -> Option<ResponseRecord> {
        let mut best: Option<(ResponderId, f64)> = None;
        for r in self.responders.iter().filter(|r| !r.is_busy()) {
            let tt = r.track.time_to(incident.cell, self.now, &world.travel);
            if best.map_or(true, |(_, b)| tt < b) {
                best = Some((r.id, tt));
            }
        }
        match best {
            Some((v, _)) => Some(self.assign(v, incident, world)),
            None => {
                self.queue.push_back(incident);
                None
            }
        }
    }

    fn assign(&mut self, v: ResponderId, incident: Incident, world: &World) -> ResponseRecord {
        let now = self.now;
        let t_serve = self.config.t_serve_s;
        let r = &mut self.responders[v];
        let track = r.track.reroute(incident.cell, now, &world.travel);
        let scene = track.arrive_t.max(now);
        let hospital = world.nearest_hospital(incident.cell, scene);
        let leave_scene = scene + t_serve;
        let t_avail = leave_scene + world.travel.time(incident.cell, world.hospitals[hospital].cell, leave_scene);
        r.track = track;
        r.task = Some(Task { incident: incident.id, incident_cell: incident.cell, hospital, scene_arrival_t: scene, t_avail });
        let rec = ResponseRecord {
            incident: incident.id,
            cell: incident.cell,
            report_t: incident.report_t,
            response_time_s: scene - incident.report_t,
            responder: v,
            region: r.region,
        };
        self.generations[v] += 1;
        self.schedule(t_avail, v, ScheduledKind::Release);
        self.response_log.push(rec);
        rec
    }

    /// Frees responder `v` at its availability time: it takes the head of the
    /// waiting queue if any, otherwise drives back to its depot.
    pub fn release(&mut self, v: ResponderId, world: &World) -> Result<Option<ResponseRecord>> {
        let r = self.responders.get_mut(v).ok_or_else(|| Error::Input(format!("unknown responder {v}")))?;
        let task = r.task.ok_or_else(|| Error::Logic(format!("responder {v} released while idle")))?;
        if (task.t_avail - self.now).abs() > 1e-6 {
            return Err(Error::Logic(format!("responder {v} released at {} but due at {}", self.now, task.t_avail)));
        }
        let hospital_cell = world.hospitals[task.hospital].cell;
        r.task = None;
        r.track = LocationTrack::stationary(hospital_cell, self.now);
        if let Some(next) = self.queue.pop_front() {
            return Ok(Some(self.assign(v, next, world)));
        }
        self.head_to_depot(v, world);
        Ok(None)
    }

    fn head_to_depot(&mut self, v: ResponderId, world: &World) {
        let now = self.now;
        let r = &mut self.responders[v];
        r.track = r.track.reroute(world.depot_cell(r.depot), now, &world.travel);
        let arrive = r.track.arrive_t;
        self.generations[v] += 1;
        if arrive > now {
            self.schedule(arrive, v, ScheduledKind::DepotArrival);
        }
    }

    /// Changes the depot of `v`. Idle or depot-bound responders reroute at
    /// once; busy ones head to the new depot when they become available.
    pub fn reassign(&mut self, v: ResponderId, depot: DepotId, world: &World) -> Result<()> {
        if depot >= world.depots.len() {
            return input(format!("unknown depot {depot}"));
        }
        let r = self.responders.get_mut(v).ok_or_else(|| Error::Input(format!("unknown responder {v}")))?;
        if r.depot == depot {
            return Ok(());
        }
        r.depot = depot;
        if !r.is_busy() {
            self.head_to_depot(v, world);
        }
        Ok(())
    }

    pub fn set_region(&mut self, v: ResponderId, g: RegionId) {
        self.responders[v].region = g;
    }

    /// True if no two responders share a depot.
    pub fn depots_exclusive(&self) -> bool {
        let mut ds: Vec<DepotId> = self.responders.iter().map(|r| r.depot).collect();
        ds.sort_unstable();
        ds.windows(2).all(|w| w[0] != w[1])
    }
}

/// Events delivered to the planning hooks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimEvent {
    Start,
    /// An incident was reported; `outcome` is absent if it was queued.
    Incident { incident: IncidentId, cell: CellId, outcome: Option<ResponseRecord> },
    /// A responder finished its task; `redispatch` is set if it took a queued incident.
    Released { responder: ResponderId, redispatch: Option<ResponseRecord> },
    DepotArrival { responder: ResponderId },
    RateBoundary { bucket: usize },
    IdleTimeout,
    End,
}

/// Planning hooks invoked by [`run_episode`]. Returns the number of planner
/// decisions made while handling the event (used for latency accounting).
pub trait SimHooks {
    fn on_event(&mut self, event: &SimEvent, state: &mut SimState, world: &World, rng: &mut ChaCha8Rng) -> Result<u32>;
}

/// Hooks that never reallocate.
pub struct NoHooks;

impl SimHooks for NoHooks {
    fn on_event(&mut self, _: &SimEvent, _: &mut SimState, _: &World, _: &mut ChaCha8Rng) -> Result<u32> {
        Ok(0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_s: f64,
    pub max_s: f64,
    pub p50_s: f64,
    pub p95_s: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        Self {
            count: s.len(),
            mean_s: s.iter().sum::<f64>() / s.len() as f64,
            max_s: *s.last().unwrap(),
            p50_s: percentile(&s, 0.5),
            p95_s: percentile(&s, 0.95),
        }
    }
}

/// Nearest-rank percentile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    /// One record per chain incident, ordered by incident id.
    pub log: Vec<ResponseRecord>,
    pub mean_response_s: Option<f64>,
    pub latency: LatencyStats,
    /// Wall-clock seconds of every event handling that made a decision.
    pub decision_latencies_s: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub incidents: usize,
    pub mean_response_s: Option<f64>,
    pub p50_response_s: Option<f64>,
    pub p90_response_s: Option<f64>,
    pub p95_response_s: Option<f64>,
    pub max_response_s: Option<f64>,
    pub decision_latency: LatencyStats,
}

impl EpisodeResult {
    pub fn summary(&self) -> EpisodeSummary {
        let mut rts: Vec<f64> = self.log.iter().map(|r| r.response_time_s).collect();
        rts.sort_by(f64::total_cmp);
        let pct = |q| (!rts.is_empty()).then(|| percentile(&rts, q));
        EpisodeSummary {
            incidents: rts.len(),
            mean_response_s: self.mean_response_s,
            p50_response_s: pct(0.5),
            p90_response_s: pct(0.9),
            p95_response_s: pct(0.95),
            max_response_s: rts.last().copied(),
            decision_latency: self.latency.clone(),
        }
    }

    /// CSV `incident_id,report_t_s,response_time_s`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["incident_id", "report_t_s", "response_time_s"])?;
        for r in &self.log {
            out.write_record([r.incident.to_string(), r.report_t.to_string(), r.response_time_s.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Next {
    Release,
    DepotArrival,
    Incident,
    Rate,
    Idle,
}

/// Runs one episode over `chain`, starting from `state`, until every incident
/// has been served. Simultaneous events are ordered: releases, depot
/// arrivals, incident reports, rate boundaries, idle timeouts.
pub fn run_episode(
    world: &World,
    chain: &IncidentChain,
    mut state: SimState,
    hooks: &mut dyn SimHooks,
    seed: u64,
) -> Result<EpisodeResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut latencies = Vec::new();
    let mut call = |ev: SimEvent, state: &mut SimState, hooks: &mut dyn SimHooks, rng: &mut ChaCha8Rng| -> Result<()> {
        let t0 = Instant::now();
        let decisions = hooks.on_event(&ev, state, world, rng)?;
        if decisions > 0 {
            latencies.push(t0.elapsed().as_secs_f64());
        }
        Ok(())
    };

    if let Some(&(_, c)) = chain.incidents.iter().find(|(_, c)| *c >= world.grid.len()) {
        return input(format!("chain refers to unknown cell {c}"));
    }
    state.touch();
    call(SimEvent::Start, &mut state, hooks, &mut rng)?;
    let mut next_rate = world.rates.next_boundary(state.now);

    loop {
        let pending = state.cursor < chain.len() || !state.queue.is_empty();
        if !pending {
            break;
        }
        // drop stale depot arrivals
        while let Some(top) = state.calendar.peek() {
            if top.kind == ScheduledKind::DepotArrival && top.generation != state.generations[top.responder] {
                state.calendar.pop();
            } else {
                break;
            }
        }
        let mut candidates: Vec<(f64, Next)> = Vec::with_capacity(4);
        if let Some(top) = state.calendar.peek() {
            let kind = match top.kind {
                ScheduledKind::Release => Next::Release,
                ScheduledKind::DepotArrival => Next::DepotArrival,
            };
            candidates.push((top.t, kind));
        }
        if let Some(&(t, _)) = chain.incidents.get(state.cursor) {
            candidates.push((t, Next::Incident));
        }
        if state.config.rate_events {
            candidates.push((next_rate, Next::Rate));
        }
        if let Some(timeout) = state.config.idle_timeout_s {
            candidates.push((state.last_activity + timeout, Next::Idle));
        }
        let (t, kind) = candidates
            .into_iter()
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .ok_or_else(|| Error::Logic("no event left while incidents remain".into()))?;
        if t < state.now {
            return Err(Error::Logic(format!("clock moved backwards: {t} < {}", state.now)));
        }
        state.now = t;
        match kind {
            Next::Release => {
                let item = state.calendar.pop().expect("peeked");
                let redispatch = state.release(item.responder, world)?;
                call(SimEvent::Released { responder: item.responder, redispatch }, &mut state, hooks, &mut rng)?;
            }
            Next::DepotArrival => {
                let item = state.calendar.pop().expect("peeked");
                call(SimEvent::DepotArrival { responder: item.responder }, &mut state, hooks, &mut rng)?;
            }
            Next::Incident => {
                let (report_t, cell) = chain.incidents[state.cursor];
                let incident = Incident { id: state.cursor, cell, report_t, scene_arrival_t: None };
                state.cursor += 1;
                state.touch();
                let outcome = state.dispatch(incident, world);
                call(SimEvent::Incident { incident: incident.id, cell, outcome }, &mut state, hooks, &mut rng)?;
            }
            Next::Rate => {
                next_rate = world.rates.next_boundary(t);
                let bucket = world.rates.bucket_of(t);
                call(SimEvent::RateBoundary { bucket }, &mut state, hooks, &mut rng)?;
            }
            Next::Idle => {
                call(SimEvent::IdleTimeout, &mut state, hooks, &mut rng)?;
                state.touch();
            }
        }
    }
    call(SimEvent::End, &mut state, hooks, &mut rng)?;

    let mut log = state.response_log;
    log.sort_by_key(|r| r.incident);
    if log.len() != chain.len() {
        return Err(Error::Logic(format!("{} incidents logged for a chain of {}", log.len(), chain.len())));
    }
    let mean_response_s =
        (!log.is_empty()).then(|| log.iter().map(|r| r.response_time_s).sum::<f64>() / log.len() as f64);
    Ok(EpisodeResult { log, mean_response_s, latency: LatencyStats::from_samples(&latencies), decision_latencies_s: latencies })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{Depot, Grid, Hospital, Segmentation};

    /// 1 x n line of one-mile cells at 30 mph (120 s per cell).
    fn line_world(n: usize, depot_cells: &[CellId], hospital_cell: CellId) -> World {
        let grid = Grid::new(n, 1, 1.0).unwrap();
        let depots: Vec<Depot> =
            depot_cells.iter().enumerate().map(|(i, &c)| Depot { id: i, cell: c, capacity: 1 }).collect();
        let travel = TravelModel::synthetic(&grid, 30.0, HOUR_S, &[1.0]).unwrap();
        let seg = Segmentation::single(n, &depots).unwrap();
        World::new(grid, depots, vec![Hospital { id: 0, cell: hospital_cell }], travel, RateModel::constant(n, 0.0), seg)
            .unwrap()
    }

    fn cfg() -> SimConfig {
        SimConfig { t_serve_s: 1200.0, idle_timeout_s: None, rate_events: false }
    }

    #[test]
    fn zero_rates_give_empty_chain() {
        let c = sample_chain(&RateModel::constant(4, 0.0), 86400.0, 1).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn chain_count_concentrates() {
        let rates = RateModel::constant(1, 1.0);
        let horizon = 10_000.0 * HOUR_S;
        let c = sample_chain(&rates, horizon, 7).unwrap();
        let n = c.len() as f64;
        assert!((n - 10_000.0).abs() <= 4.0 * 100.0, "count {n}");
        assert!(c.incidents.windows(2).all(|w| w[0].0 <= w[1].0));
        assert!(c.incidents.iter().all(|(t, _)| *t < horizon));
        assert_eq!(c, sample_chain(&rates, horizon, 7).unwrap());
    }

    #[test]
    fn chain_csv_round_trip() {
        let c = IncidentChain::new(vec![(10.5, 3), (2.0, 1)], 100.0, 0).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("report_t_s,cell_id\n"));
        assert_eq!(IncidentChain::read_csv(buf.as_slice(), 100.0, 0).unwrap(), c);
    }

    #[test]
    fn dispatch_at_incident_cell() {
        let w = line_world(5, &[2], 4);
        let mut s = SimState::new(&w, cfg(), &[(0, 0)]).unwrap();
        s.now = 50.0;
        let rec = s.dispatch(Incident { id: 0, cell: 2, report_t: 50.0, scene_arrival_t: None }, &w).unwrap();
        assert_eq!(rec.response_time_s, 0.0);
        assert_eq!(s.responders[0].t_avail(), Some(50.0 + 1200.0 + 240.0));
    }

    #[test]
    fn dispatch_picks_fastest() {
        // responders at cells 0, 3, 6 ; incident at 4 -> travel 480, 120, 240
        let w = line_world(8, &[0, 3, 6], 0);
        let mut s = SimState::new(&w, cfg(), &[(0, 0), (1, 0), (2, 0)]).unwrap();
        let rec = s.dispatch(Incident { id: 0, cell: 4, report_t: 0.0, scene_arrival_t: None }, &w).unwrap();
        assert_eq!(rec.responder, 1);
        assert_eq!(rec.response_time_s, 120.0);
    }

    #[test]
    fn all_busy_enqueues() {
        let w = line_world(3, &[0], 0);
        let mut s = SimState::new(&w, cfg(), &[(0, 0)]).unwrap();
        s.dispatch(Incident { id: 0, cell: 1, report_t: 0.0, scene_arrival_t: None }, &w).unwrap();
        let before = s.response_log.len();
        assert!(s.dispatch(Incident { id: 1, cell: 2, report_t: 0.0, scene_arrival_t: None }, &w).is_none());
        assert_eq!(s.queue.len(), 1);
        assert_eq!(s.response_log.len(), before);
    }

    #[test]
    fn release_returns_to_depot() {
        let w = line_world(5, &[0], 4);
        let mut s = SimState::new(&w, cfg(), &[(0, 0)]).unwrap();
        s.dispatch(Incident { id: 0, cell: 2, report_t: 0.0, scene_arrival_t: None }, &w).unwrap();
        let due = s.responders[0].t_avail().unwrap();
        s.now = due - 1.0;
        assert!(matches!(s.release(0, &w), Err(Error::Logic(_))));
        s.now = due;
        assert!(s.release(0, &w).unwrap().is_none());
        let r = &s.responders[0];
        assert!(!r.is_busy());
        assert_eq!(r.track.destination, 0);
        assert_eq!(r.track.arrive_t, due + 480.0);
    }

    #[test]
    fn release_serves_queue_in_report_order() {
        let w = line_world(5, &[0], 0);
        let mut s = SimState::new(&w, cfg(), &[(0, 0)]).unwrap();
        s.dispatch(Incident { id: 0, cell: 0, report_t: 0.0, scene_arrival_t: None }, &w).unwrap();
        s.now = 10.0;
        s.dispatch(Incident { id: 1, cell: 3, report_t: 10.0, scene_arrival_t: None }, &w);
        s.now = 20.0;
        s.dispatch(Incident { id: 2, cell: 1, report_t: 20.0, scene_arrival_t: None }, &w);
        // first release at 1200 (served at hospital cell)
        s.now = s.responders[0].t_avail().unwrap();
        assert_eq!(s.now, 1200.0);
        let rec = s.release(0, &w).unwrap().unwrap();
        assert_eq!(rec.incident, 1);
        // hand trace: hospital cell 0 -> cell 3 = 360 s, counted from report at 10
        assert_eq!(rec.response_time_s, 1200.0 + 360.0 - 10.0);
        s.now = s.responders[0].t_avail().unwrap();
        let rec = s.release(0, &w).unwrap().unwrap();
        assert_eq!(rec.incident, 2);
    }

    #[test]
    fn episode_two_separated_incidents() {
        let w = line_world(6, &[1], 5);
        let chain = IncidentChain::new(vec![(0.0, 3), (20_000.0, 0)], 30_000.0, 0).unwrap();
        let s = SimState::new(&w, cfg(), &[(0, 0)]).unwrap();
        let res = run_episode(&w, &chain, s, &mut NoHooks, 0).unwrap();
        assert_eq!(res.log.len(), 2);
        assert_eq!(res.log[0].response_time_s, 240.0);
        assert_eq!(res.log[1].response_time_s, 120.0);
        assert_eq!(res.mean_response_s, Some(180.0));
    }

    #[test]
    fn empty_chain_has_no_mean() {
        let w = line_world(3, &[1], 0);
        let chain = IncidentChain::new(vec![], 100.0, 0).unwrap();
        let s = SimState::new(&w, cfg(), &[(0, 0)]).unwrap();
        let res = run_episode(&w, &chain, s, &mut NoHooks, 0).unwrap();
        assert!(res.log.is_empty());
        assert_eq!(res.mean_response_s, None);
    }

    #[test]
    fn midpoint_rule() {
        let w = line_world(6, &[0], 0);
        // leg 0 -> 5 takes 600 s
        let track = LocationTrack { origin: 0, destination: 5, depart_t: 0.0, arrive_t: 600.0 };
        // first half: counted at origin, elapsed credited
        assert_eq!(track.time_to(2, 100.0, &w.travel), 240.0 - 100.0);
        assert_eq!(track.time_to(1, 200.0, &w.travel), 0.0);
        // second half: finish leg then travel from destination
        assert_eq!(track.time_to(4, 400.0, &w.travel), 200.0 + 120.0);
        assert_eq!(track.effective_cell(100.0), 0);
        assert_eq!(track.effective_cell(400.0), 5);
        let rr = track.reroute(4, 400.0, &w.travel);
        assert_eq!(rr.arrive_t, 400.0 + 320.0);
    }

    #[test]
    fn reassign_idle_reroutes_busy_defers() {
        let w = line_world(6, &[0, 5], 0);
        let mut s = SimState::new(&w, cfg(), &[(0, 0)]).unwrap();
        s.reassign(0, 1, &w).unwrap();
        assert_eq!(s.responders[0].track.destination, 5);
        assert_eq!(s.responders[0].track.arrive_t, 600.0);

        let mut s = SimState::new(&w, cfg(), &[(0, 0)]).unwrap();
        s.dispatch(Incident { id: 0, cell: 2, report_t: 0.0, scene_arrival_t: None }, &w).unwrap();
        s.reassign(0, 1, &w).unwrap();
        assert_eq!(s.responders[0].track.destination, 2);
        s.now = s.responders[0].t_avail().unwrap();
        s.release(0, &w).unwrap();
        assert_eq!(s.responders[0].track.destination, 5);
    }
}
