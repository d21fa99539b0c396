//! Point-queue traffic engine.
//!
//! Vehicles cross each link at free-flow speed, then wait in a FIFO at the
//! stop line until a green movement with spare discharge credit and
//! downstream room lets them through. Signals switch only after the minimum
//! green has elapsed and every switch costs an all-red interval.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roadnet::{FlowSpec, LaneRef, RoadNetwork};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("unknown intersection {0}")]
    UnknownIntersection(String),
    #[error("intersection {0} is not signalized")]
    NotSignalized(String),
    #[error("no action given for intersection {0}")]
    MissingAction(String),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("phase {phase} out of range for intersection {intersection} ({count} phases)")]
    InvalidPhase {
        intersection: String,
        phase: usize,
        count: usize,
    },
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("unknown link {0}")]
    UnknownLink(String),
    #[error("invalid vehicle placement: {0}")]
    InvalidPlacement(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Vehicles per second discharged by one green lane.
    pub saturation_rate: f64,
    /// All-red interval charged on every phase switch, seconds.
    pub lost_time: f64,
    pub min_green: f64,
    /// Vehicles a lane holds (queued plus moving) before it blocks upstream discharge.
    pub lane_capacity: usize,
    /// Vehicles slower than this count as waiting, m/s.
    pub waiting_speed: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            saturation_rate: 0.5,
            lost_time: 2.0,
            min_green: 10.0,
            lane_capacity: 40,
            waiting_speed: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleRecord {
    pub id: usize,
    /// Full route as link indices; `route_pos` marks the current link.
    pub route: Vec<usize>,
    pub route_pos: usize,
    pub spawn_time: f64,
    pub speed: f64,
    lane: usize,
}

impl VehicleRecord {
    pub fn remaining_route(&self) -> &[usize] {
        &self.route[self.route_pos..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletedTrip {
    pub vehicle: usize,
    pub enter: f64,
    pub exit: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct LaneState {
    queue: VecDeque<usize>,
    /// (vehicle, arrival time at the stop line), arrival-ordered.
    transit: VecDeque<(usize, f64)>,
    occupancy: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct SignalState {
    phase: usize,
    elapsed: f64,
    red_remaining: f64,
    credit: Vec<f64>,
}

/// Static lookup tables derived once from the network.
#[derive(Debug)]
struct Topology {
    lane_offset: Vec<usize>,
    /// Per intersection: global indices of entering and exiting lanes.
    entering: Vec<Vec<usize>>,
    exiting: Vec<Vec<usize>>,
    /// `permit[intersection][phase][entering pos]` = links reachable while green.
    permit: Vec<Vec<Vec<Vec<usize>>>>,
    /// Links reachable from an entering lane regardless of phase.
    free: Vec<Vec<Vec<usize>>>,
    /// Lanes of `link` that lead on to `next` at the link's downstream end.
    lanes_toward: HashMap<(usize, usize), Vec<usize>>,
    signalized: Vec<usize>,
    agent_of: Vec<Option<usize>>,
}

impl Topology {
    fn build(net: &RoadNetwork) -> Self {
        let mut lane_offset = Vec::with_capacity(net.links.len());
        let mut total = 0;
        for l in &net.links {
            lane_offset.push(total);
            total += l.lane_count;
        }
        let global = |r: LaneRef| lane_offset[r.link] + r.lane;

        let mut entering = Vec::new();
        let mut exiting = Vec::new();
        let mut permit = Vec::new();
        let mut free = Vec::new();
        let mut lanes_toward: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for inter in &net.intersections {
            let pos_of: HashMap<LaneRef, usize> = inter
                .entering_lanes
                .iter()
                .enumerate()
                .map(|(p, &l)| (l, p))
                .collect();
            entering.push(inter.entering_lanes.iter().map(|&l| global(l)).collect());
            exiting.push(inter.exiting_lanes.iter().map(|&l| global(l)).collect());

            let table = vec![Vec::new(); inter.entering_lanes.len()];
            let add = |table: &mut Vec<Vec<usize>>, m: &crate::roadnet::Movement| {
                let slot = &mut table[pos_of[&m.entering]];
                if !slot.contains(&m.exiting.link) {
                    slot.push(m.exiting.link);
                }
            };
            let mut always = table.clone();
            if inter.signalized {
                for m in &inter.free_movements {
                    add(&mut always, m);
                }
                let phases = inter
                    .phases
                    .iter()
                    .map(|p| {
                        let mut t = table.clone();
                        for m in &p.movements {
                            add(&mut t, m);
                        }
                        t
                    })
                    .collect();
                permit.push(phases);
            } else {
                for rl in &inter.road_links {
                    for m in rl.movements() {
                        add(&mut always, &m);
                    }
                }
                permit.push(Vec::new());
            }
            free.push(always);

            for rl in &inter.road_links {
                let entry = lanes_toward.entry((rl.from_link, rl.to_link)).or_default();
                for &(a, _) in &rl.lane_links {
                    if !entry.contains(&a) {
                        entry.push(a);
                    }
                }
                entry.sort_unstable();
            }
        }

        let signalized = net.signalized();
        let mut agent_of = vec![None; net.intersections.len()];
        for (a, &k) in signalized.iter().enumerate() {
            agent_of[k] = Some(a);
        }
        Topology {
            lane_offset,
            entering,
            exiting,
            permit,
            free,
            lanes_toward,
            signalized,
            agent_of,
        }
    }
}

/// Where [`SimState::insert_vehicle`] puts a vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Placement {
    /// Waiting at the stop line of the given lane of the current link.
    Queued { lane: usize },
    /// Moving on the given lane, reaching the stop line at `arrival`.
    InTransit { lane: usize, arrival: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub spawned: usize,
    pub queued: usize,
    pub in_transit: usize,
    pub completed: usize,
}

impl Census {
    pub fn conserved(&self) -> bool {
        self.spawned == self.queued + self.in_transit + self.completed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub avg_travel_time: f64,
    pub throughput: usize,
    pub mean_queue: f64,
}

/// Counts an agent observes at its intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub waiting_per_entering_lane: Vec<u32>,
    pub count_per_exiting_lane: Vec<u32>,
    pub current_phase: Vec<f64>,
}

impl Observation {
    pub fn dim(&self) -> usize {
        self.waiting_per_entering_lane.len()
            + self.count_per_exiting_lane.len()
            + self.current_phase.len()
    }

    /// Flat network input: counts divided by `count_scale`, then the phase one-hot.
    pub fn to_features(&self, count_scale: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend(self.waiting_per_entering_lane.iter().map(|&c| c as f64 / count_scale));
        out.extend(self.count_per_exiting_lane.iter().map(|&c| c as f64 / count_scale));
        out.extend_from_slice(&self.current_phase);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Spawn {
    time: f64,
    flow: usize,
}

#[derive(Debug, Clone)]
pub struct SimState {
    net: Arc<RoadNetwork>,
    topo: Arc<Topology>,
    config: SimConfig,
    seed: u64,
    routes: Vec<Vec<usize>>,
    schedule: Vec<Spawn>,
    cursor: usize,
    clock: f64,
    lanes: Vec<LaneState>,
    signals: Vec<SignalState>,
    vehicles: Vec<VehicleRecord>,
    completed: Vec<CompletedTrip>,
    queue_integral: f64,
    observed_time: f64,
}

impl PartialEq for SimState {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.seed == other.seed
            && self.routes == other.routes
            && self.schedule == other.schedule
            && self.cursor == other.cursor
            && self.clock == other.clock
            && self.lanes == other.lanes
            && self.signals == other.signals
            && self.vehicles == other.vehicles
            && self.completed == other.completed
            && self.queue_integral == other.queue_integral
            && self.observed_time == other.observed_time
    }
}

impl SimState {
    /// Fresh state at clock 0. The spawn schedule is the deterministic
    /// headway sequence of every flow; `seed` is only recorded.
    pub fn init(
        net: Arc<RoadNetwork>,
        flows: &[FlowSpec],
        seed: u64,
        config: SimConfig,
    ) -> Result<Self, SimError> {
        Self::with_horizon(net, flows, seed, config, f64::INFINITY)
    }

    /// As [`SimState::init`], dropping spawns at or after `horizon`.
    pub fn with_horizon(
        net: Arc<RoadNetwork>,
        flows: &[FlowSpec],
        seed: u64,
        config: SimConfig,
        horizon: f64,
    ) -> Result<Self, SimError> {
        let topo = Arc::new(Topology::build(&net));
        let mut routes = Vec::with_capacity(flows.len());
        let mut schedule = Vec::new();
        for (k, f) in flows.iter().enumerate() {
            let route = f
                .route
                .iter()
                .map(|id| net.link_index(id).ok_or_else(|| SimError::UnknownLink(id.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            routes.push(route);
            schedule.extend(f.spawn_times(horizon).map(|time| Spawn { time, flow: k }));
        }
        // Stable: equal times keep flow order.
        schedule.sort_by(|a, b| a.time.total_cmp(&b.time));

        let signals = net
            .intersections
            .iter()
            .enumerate()
            .map(|(k, _)| SignalState {
                phase: 0,
                elapsed: config.min_green,
                red_remaining: 0.0,
                credit: vec![0.0; topo.entering[k].len()],
            })
            .collect();
        let lanes = vec![LaneState::default(); net.total_lanes()];
        Ok(SimState {
            net,
            topo,
            config,
            seed,
            routes,
            schedule,
            cursor: 0,
            clock: 0.0,
            lanes,
            signals,
            vehicles: Vec::new(),
            completed: Vec::new(),
            queue_integral: 0.0,
            observed_time: 0.0,
        })
    }

    pub fn network(&self) -> &Arc<RoadNetwork> {
        &self.net
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    /// Signalized intersections in agent order.
    pub fn agents(&self) -> &[usize] {
        &self.topo.signalized
    }

    pub fn agent_of(&self, intersection: usize) -> Option<usize> {
        self.topo.agent_of[intersection]
    }

    pub fn next_spawn_time(&self) -> Option<f64> {
        self.schedule.get(self.cursor).map(|s| s.time)
    }

    pub fn vehicles(&self) -> &[VehicleRecord] {
        &self.vehicles
    }

    pub fn completed(&self) -> &[CompletedTrip] {
        &self.completed
    }

    pub fn current_phase(&self, intersection: usize) -> usize {
        self.signals[intersection].phase
    }

    pub fn phase_elapsed(&self, intersection: usize) -> f64 {
        self.signals[intersection].elapsed
    }

    /// Sets the active phase directly, as if it had just started.
    pub fn set_phase(&mut self, intersection: usize, phase: usize) -> Result<(), SimError> {
        self.check_phase(intersection, phase)?;
        let s = &mut self.signals[intersection];
        s.phase = phase;
        s.elapsed = self.config.min_green;
        s.red_remaining = 0.0;
        s.credit.iter_mut().for_each(|c| *c = 0.0);
        Ok(())
    }

    fn global_lane(&self, lane: LaneRef) -> usize {
        self.topo.lane_offset[lane.link] + lane.lane
    }

    pub fn queued(&self, lane: LaneRef) -> usize {
        self.lanes[self.global_lane(lane)].queue.len()
    }

    pub fn waiting(&self, lane: LaneRef) -> usize {
        self.waiting_on(self.global_lane(lane))
    }

    fn waiting_on(&self, g: usize) -> usize {
        let thr = self.config.waiting_speed;
        let lane = &self.lanes[g];
        lane.queue.iter().filter(|&&v| self.vehicles[v].speed < thr).count()
            + lane.transit.iter().filter(|&&(v, _)| self.vehicles[v].speed < thr).count()
    }

    /// Queued plus moving vehicles on the lane.
    pub fn lane_vehicles(&self, lane: LaneRef) -> usize {
        self.lanes[self.global_lane(lane)].occupancy
    }

    pub fn census(&self) -> Census {
        let (queued, in_transit) = self
            .lanes
            .iter()
            .fold((0, 0), |(q, t), l| (q + l.queue.len(), t + l.transit.len()));
        Census {
            spawned: self.vehicles.len(),
            queued,
            in_transit,
            completed: self.completed.len(),
        }
    }

    /// Places a vehicle directly, bypassing the spawn schedule. `route_pos`
    /// selects the current link; the vehicle counts as spawned at the current clock.
    pub fn insert_vehicle(
        &mut self,
        route: Vec<usize>,
        route_pos: usize,
        placement: Placement,
    ) -> Result<usize, SimError> {
        let link = *route
            .get(route_pos)
            .ok_or_else(|| SimError::InvalidPlacement("route position past end of route".into()))?;
        let lane = match placement {
            Placement::Queued { lane } | Placement::InTransit { lane, .. } => lane,
        };
        if link >= self.net.links.len() || lane >= self.net.links[link].lane_count {
            return Err(SimError::InvalidPlacement(format!("lane {lane} of link {link}")));
        }
        let g = self.topo.lane_offset[link] + lane;
        let id = self.vehicles.len();
        let speed = match placement {
            Placement::Queued { .. } => 0.0,
            Placement::InTransit { .. } => self.net.links[link].free_flow_speed,
        };
        self.vehicles.push(VehicleRecord {
            id,
            route,
            route_pos,
            spawn_time: self.clock,
            speed,
            lane: g,
        });
        let ls = &mut self.lanes[g];
        ls.occupancy += 1;
        match placement {
            Placement::Queued { .. } => ls.queue.push_back(id),
            Placement::InTransit { arrival, .. } => {
                let at = ls.transit.partition_point(|&(_, t)| t <= arrival);
                ls.transit.insert(at, (id, arrival));
            }
        }
        Ok(id)
    }

    fn check_phase(&self, intersection: usize, phase: usize) -> Result<(), SimError> {
        let inter = &self.net.intersections[intersection];
        if !inter.signalized {
            return Err(SimError::NotSignalized(inter.id.clone()));
        }
        if phase >= inter.phases.len() {
            return Err(SimError::InvalidPhase {
                intersection: inter.id.clone(),
                phase,
                count: inter.phases.len(),
            });
        }
        Ok(())
    }

    /// Advances by `dt` with one requested phase per agent (see [`SimState::agents`]).
    pub fn step(&mut self, actions: &[usize], dt: f64) -> Result<(), SimError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::InvalidStep(dt));
        }
        if actions.len() != self.topo.signalized.len() {
            return Err(SimError::ActionCount {
                expected: self.topo.signalized.len(),
                got: actions.len(),
            });
        }
        for (&k, &a) in self.topo.signalized.iter().zip(actions) {
            self.check_phase(k, a)?;
        }

        let topo = Arc::clone(&self.topo);
        for (&k, &a) in topo.signalized.iter().zip(actions) {
            let s = &mut self.signals[k];
            if a != s.phase && s.elapsed >= self.config.min_green {
                s.phase = a;
                s.elapsed = 0.0;
                s.red_remaining = self.config.lost_time;
                s.credit.iter_mut().for_each(|c| *c = 0.0);
            }
        }

        let end = self.clock + dt;
        self.spawn_until(end);
        self.arrive_until(end);
        self.discharge(dt, end);

        for &k in &topo.signalized {
            self.signals[k].elapsed += dt;
        }
        let waiting: usize = topo
            .signalized
            .iter()
            .flat_map(|&k| topo.entering[k].iter())
            .map(|&g| self.waiting_on(g))
            .sum();
        let lanes: usize = topo.signalized.iter().map(|&k| topo.entering[k].len()).sum();
        if lanes > 0 {
            self.queue_integral += waiting as f64 / lanes as f64 * dt;
        }
        self.observed_time += dt;
        self.clock = end;
        Ok(())
    }

    /// Map-keyed variant of [`SimState::step`].
    pub fn step_by_id(&mut self, actions: &HashMap<String, usize>, dt: f64) -> Result<(), SimError> {
        for id in actions.keys() {
            match self.net.intersection_index(id) {
                None => return Err(SimError::UnknownIntersection(id.clone())),
                Some(k) if !self.net.intersections[k].signalized => {
                    return Err(SimError::NotSignalized(id.clone()))
                }
                Some(_) => {}
            }
        }
        let ordered = self
            .topo
            .signalized
            .iter()
            .map(|&k| {
                let id = &self.net.intersections[k].id;
                actions
                    .get(id)
                    .copied()
                    .ok_or_else(|| SimError::MissingAction(id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.step(&ordered, dt)
    }

    fn choose_lane(&self, link: usize, next: Option<usize>) -> usize {
        let base = self.topo.lane_offset[link];
        let all: Vec<usize>;
        let candidates = match next.and_then(|n| self.topo.lanes_toward.get(&(link, n))) {
            Some(c) if !c.is_empty() => c.as_slice(),
            _ => {
                all = (0..self.net.links[link].lane_count).collect();
                all.as_slice()
            }
        };
        let best = candidates
            .iter()
            .copied()
            .min_by_key(|&l| (self.lanes[base + l].occupancy, l))
            .expect("links have at least one lane");
        base + best
    }

    fn spawn_until(&mut self, end: f64) {
        while let Some(&Spawn { time, flow }) = self.schedule.get(self.cursor) {
            if time >= end {
                break;
            }
            self.cursor += 1;
            let route = self.routes[flow].clone();
            let link = route[0];
            let g = self.choose_lane(link, route.get(1).copied());
            let l = &self.net.links[link];
            let id = self.vehicles.len();
            self.vehicles.push(VehicleRecord {
                id,
                route,
                route_pos: 0,
                spawn_time: time,
                speed: l.free_flow_speed,
                lane: g,
            });
            let arrival = time + l.free_flow_time();
            let ls = &mut self.lanes[g];
            ls.occupancy += 1;
            ls.transit.push_back((id, arrival));
        }
    }

    fn arrive_until(&mut self, end: f64) {
        for g in 0..self.lanes.len() {
            while let Some(&(v, arrival)) = self.lanes[g].transit.front() {
                if arrival > end {
                    break;
                }
                self.lanes[g].transit.pop_front();
                let veh = &mut self.vehicles[v];
                veh.speed = 0.0;
                if veh.route_pos + 1 == veh.route.len() {
                    self.completed.push(CompletedTrip {
                        vehicle: v,
                        enter: veh.spawn_time,
                        exit: arrival,
                    });
                    self.lanes[g].occupancy -= 1;
                } else {
                    self.lanes[g].queue.push_back(v);
                }
            }
        }
    }

    fn discharge(&mut self, dt: f64, end: f64) {
        let topo = Arc::clone(&self.topo);
        let sat = self.config.saturation_rate;
        let cap = self.config.lane_capacity;
        for k in 0..self.net.intersections.len() {
            let signalized = self.net.intersections[k].signalized;
            let (phase, green_time) = {
                let s = &mut self.signals[k];
                let red = s.red_remaining.min(dt);
                s.red_remaining -= red;
                (s.phase, dt - red)
            };
            for (p, &g) in topo.entering[k].iter().enumerate() {
                let phase_links: &[usize] = if signalized && green_time > 0.0 {
                    &topo.permit[k][phase][p]
                } else {
                    &[]
                };
                let free_links = &topo.free[k][p];
                let gain = if !free_links.is_empty() {
                    sat * dt
                } else if !phase_links.is_empty() {
                    sat * green_time
                } else {
                    0.0
                };
                if gain == 0.0 {
                    self.signals[k].credit[p] = 0.0;
                    continue;
                }
                let mut credit = self.signals[k].credit[p] + gain;
                while credit >= 1.0 {
                    let Some(&v) = self.lanes[g].queue.front() else {
                        break;
                    };
                    let veh = &self.vehicles[v];
                    let next = veh.route[veh.route_pos + 1];
                    if !phase_links.contains(&next) && !free_links.contains(&next) {
                        break;
                    }
                    let target = self.choose_lane(next, veh.route.get(veh.route_pos + 2).copied());
                    if self.lanes[target].occupancy >= cap {
                        break;
                    }
                    self.lanes[g].queue.pop_front();
                    self.lanes[g].occupancy -= 1;
                    let link = &self.net.links[next];
                    let veh = &mut self.vehicles[v];
                    veh.route_pos += 1;
                    veh.lane = target;
                    veh.speed = link.free_flow_speed;
                    let arrival = end + link.free_flow_time();
                    let ls = &mut self.lanes[target];
                    ls.occupancy += 1;
                    ls.transit.push_back((v, arrival));
                    credit -= 1.0;
                }
                // Unused green cannot be banked beyond one step's worth.
                self.signals[k].credit[p] = credit.min(gain.max(1.0));
            }
        }
    }

    pub fn observe(&self, intersection: usize) -> Observation {
        let inter = &self.net.intersections[intersection];
        let mut one_hot = vec![0.0; inter.phases.len()];
        if let Some(slot) = one_hot.get_mut(self.signals[intersection].phase) {
            *slot = 1.0;
        }
        Observation {
            waiting_per_entering_lane: self.topo.entering[intersection]
                .iter()
                .map(|&g| self.waiting_on(g) as u32)
                .collect(),
            count_per_exiting_lane: self.topo.exiting[intersection]
                .iter()
                .map(|&g| self.lanes[g].occupancy as u32)
                .collect(),
            current_phase: one_hot,
        }
    }

    pub fn observe_id(&self, id: &str) -> Result<Observation, SimError> {
        self.net
            .intersection_index(id)
            .map(|k| self.observe(k))
            .ok_or_else(|| SimError::UnknownIntersection(id.to_string()))
    }

    /// Negated count of waiting vehicles on the intersection's entering lanes.
    pub fn raw_reward(&self, intersection: usize) -> f64 {
        let waiting: usize = self.topo.entering[intersection]
            .iter()
            .map(|&g| self.waiting_on(g))
            .sum();
        -(waiting as f64)
    }

    /// Average travel time censors unfinished trips at the current clock;
    /// with no vehicles at all it is 0.
    pub fn metrics(&self) -> MetricsReport {
        let finished: f64 = self.completed.iter().map(|c| c.exit - c.enter).sum();
        let mut done = vec![false; self.vehicles.len()];
        for c in &self.completed {
            done[c.vehicle] = true;
        }
        let active: f64 = self
            .vehicles
            .iter()
            .filter(|v| !done[v.id])
            .map(|v| self.clock - v.spawn_time)
            .sum();
        let n = self.vehicles.len();
        MetricsReport {
            avg_travel_time: if n == 0 { 0.0 } else { (finished + active) / n as f64 },
            throughput: self.completed.len(),
            mean_queue: if self.observed_time > 0.0 {
                self.queue_integral / self.observed_time
            } else {
                0.0
            },
        }
    }
}
