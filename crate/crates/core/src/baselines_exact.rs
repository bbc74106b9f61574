//! Greedy dispatch baselines, a branch-and-bound oracle for the static
//! problem and an independent post-hoc route validator.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{total_length, DispatchError, DispatchPolicy, EpisodeReport, JointState};
use crate::instance::{DeliveryOrder, Instance, NodeId, OrderId, VehicleId};
use crate::routing::{Action, Cargo, Route, Stop};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GreedyKind {
    /// Shortest incremental route length.
    Incremental,
    /// Shortest total route length after accepting.
    Total,
    /// Most orders already accepted.
    MaxOrders,
}

impl GreedyKind {
    pub const ALL: [GreedyKind; 3] = [GreedyKind::Incremental, GreedyKind::Total, GreedyKind::MaxOrders];

    pub fn label(self) -> &'static str {
        match self {
            GreedyKind::Incremental => "greedy1",
            GreedyKind::Total => "greedy2",
            GreedyKind::MaxOrders => "greedy3",
        }
    }
}

/// Picks a feasible vehicle by the baseline rule; ties go to the lowest id.
pub fn greedy_dispatch(state: &JointState, kind: GreedyKind) -> Result<VehicleId, DispatchError> {
    let mut best: Option<(VehicleId, f64)> = None;
    for v in state.feasible() {
        let row = &state.rows[v.0];
        let key = match kind {
            GreedyKind::Incremental => row.delta_d(),
            GreedyKind::Total => row.d_new(),
            GreedyKind::MaxOrders => -(state.accepted[v.0] as f64),
        };
        if best.is_none_or(|(_, b)| key < b) {
            best = Some((v, key));
        }
    }
    best.map(|(v, _)| v).ok_or(DispatchError::NoFeasibleVehicle(state.order))
}

#[derive(Clone, Copy, Debug)]
pub struct Greedy(pub GreedyKind);

impl DispatchPolicy for Greedy {
    fn name(&self) -> String {
        self.0.label().to_string()
    }

    fn dispatch(&mut self, state: &JointState) -> Result<VehicleId, DispatchError> {
        greedy_dispatch(state, self.0)
    }
}

/// Follows a precomputed order → vehicle assignment, falling back to
/// the incremental greedy rule when the planned vehicle cannot take the order.
#[derive(Clone, Debug)]
pub struct ExactPlanPolicy {
    pub assignment: HashMap<OrderId, VehicleId>,
    pub fallbacks: usize,
}

impl ExactPlanPolicy {
    pub fn new(solution: &ExactSolution) -> Self {
        Self { assignment: solution.assignment.iter().copied().collect(), fallbacks: 0 }
    }
}

impl DispatchPolicy for ExactPlanPolicy {
    fn name(&self) -> String {
        "exact-plan".to_string()
    }

    fn dispatch(&mut self, state: &JointState) -> Result<VehicleId, DispatchError> {
        match self.assignment.get(&state.order) {
            Some(v) if state.is_feasible(*v) => Ok(*v),
            _ => {
                self.fallbacks += 1;
                greedy_dispatch(state, GreedyKind::Incremental)
            }
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ExactError {
    #[error("budget must be positive")]
    ZeroBudget,
    #[error("no feasible plan serves every order")]
    Infeasible,
    #[error("budget exhausted before any complete plan was found")]
    NoPlanWithinBudget,
    #[error("{0} orders exceed the solver limit of 63")]
    TooManyOrders(usize),
}

/// Best plan found by the oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactSolution {
    pub tc: f64,
    pub nuv: usize,
    pub ttl: f64,
    /// True when the search completed; false means the budget ran out.
    pub optimal: bool,
    pub assignment: Vec<(OrderId, VehicleId)>,
    pub routes: Vec<Route>,
    pub nodes: u64,
    pub seconds: f64,
}

impl ExactSolution {
    /// Per-vehicle stop lists, `node(+o|-o)` joined by arrows.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for r in self.routes.iter().filter(|r| r.is_used()) {
            let _ = write!(out, "vehicle {}:", r.vehicle);
            for (i, s) in r.stops.iter().enumerate() {
                let _ = write!(out, "{}{}", if i == 0 { " " } else { " -> " }, s.node);
                for a in &s.actions {
                    let _ = match a {
                        Action::Pickup(c) => write!(out, "(+{})", c.order),
                        Action::Deliver(c) => write!(out, "(-{})", c.order),
                    };
                }
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "NUV {} TTL {:.4} TC {:.4} {}",
            self.nuv,
            self.ttl,
            self.tc,
            if self.optimal { "optimal" } else { "budget-exhausted" }
        );
        out
    }

    /// The static plan as an episode report (no per-order log).
    pub fn to_report(&self) -> EpisodeReport {
        EpisodeReport { nuv: self.nuv, ttl: self.ttl, tc: self.tc, log: Vec::new(), routes: self.routes.clone() }
    }
}

/// Minimum-cost plan for the clairvoyant static problem.
///
/// Branches on order → vehicle assignments (unused vehicles at the same
/// depot are interchangeable, so only the first one is tried). Each
/// vehicle's order set is sequenced by an exhaustive LIFO-respecting search,
/// memoised per (depot, set). On metric networks a set's best length never
/// decreases when orders are added, which makes the partial cost a valid
/// lower bound; otherwise only the fixed cost of used vehicles is used.
pub fn solve_exact(instance: &Instance, budget: Duration) -> Result<ExactSolution, ExactError> {
    if budget.is_zero() {
        return Err(ExactError::ZeroBudget);
    }
    if instance.orders.len() > 63 {
        return Err(ExactError::TooManyOrders(instance.orders.len()));
    }
    let started = Instant::now();
    let metric = instance.network.is_metric(1e-9);
    let mut search = Search {
        inst: instance,
        metric,
        memo: HashMap::new(),
        deadline: started + budget,
        timed_out: false,
        nodes: 0,
        best: None,
        sets: vec![0; instance.fleet.len()],
    };
    search.dfs(0);
    let seconds = started.elapsed().as_secs_f64();
    let Some((_, sets)) = search.best.clone() else {
        return Err(if search.timed_out { ExactError::NoPlanWithinBudget } else { ExactError::Infeasible });
    };
    let mut routes = Vec::with_capacity(sets.len());
    let mut assignment = Vec::new();
    for (k, v) in instance.fleet.vehicles.iter().enumerate() {
        let mut route = Route::new(v.id, v.depot);
        if sets[k] != 0 {
            let (_, stops) = search.sequence(v.depot, sets[k]).clone().expect("chosen sets are feasible");
            route.stops = stops;
            for (i, o) in instance.orders.iter().enumerate() {
                if sets[k] & (1 << i) != 0 {
                    assignment.push((o.id, v.id));
                }
            }
        }
        route.retime(&instance.network);
        route.frozen_until = route.stops.len() - 1;
        routes.push(route);
    }
    assignment.sort();
    let nuv = routes.iter().filter(|r| r.is_used()).count();
    let ttl = total_length(routes.iter().map(|r| r.length));
    Ok(ExactSolution {
        tc: instance.fleet.total_cost(nuv, ttl),
        nuv,
        ttl,
        optimal: !search.timed_out,
        assignment,
        routes,
        nodes: search.nodes,
        seconds,
    })
}

type Sequence = Option<(f64, Vec<Stop>)>;

struct Search<'a> {
    inst: &'a Instance,
    metric: bool,
    memo: HashMap<(NodeId, u64), Sequence>,
    deadline: Instant,
    timed_out: bool,
    nodes: u64,
    best: Option<(f64, Vec<u64>)>,
    sets: Vec<u64>,
}

impl Search<'_> {
    fn sequence(&mut self, depot: NodeId, set: u64) -> &Sequence {
        if !self.memo.contains_key(&(depot, set)) {
            let orders: Vec<&DeliveryOrder> =
                self.inst.orders.iter().enumerate().filter(|(i, _)| set & (1 << i) != 0).map(|(_, o)| o).collect();
            let seq = best_sequence(self.inst, depot, &orders, self.metric);
            self.memo.insert((depot, set), seq);
        }
        &self.memo[&(depot, set)]
    }

    /// Cost of the current partial assignment, `None` if some set is infeasible.
    fn partial_cost(&mut self, check_all: bool) -> Option<f64> {
        let fleet = &self.inst.fleet;
        let mut lengths = Vec::new();
        let mut used = 0;
        for k in 0..self.sets.len() {
            if self.sets[k] == 0 {
                continue;
            }
            used += 1;
            if self.metric || check_all {
                let depot = fleet.vehicles[k].depot;
                let set = self.sets[k];
                lengths.push(self.sequence(depot, set).as_ref()?.0);
            }
        }
        Some(fleet.total_cost(used, total_length(lengths)))
    }

    fn dfs(&mut self, i: usize) {
        self.nodes += 1;
        if self.nodes.is_multiple_of(1024) && Instant::now() > self.deadline {
            self.timed_out = true;
        }
        if self.timed_out {
            return;
        }
        let n = self.inst.orders.len();
        let Some(cost) = self.partial_cost(i == n) else { return };
        if let Some((best, _)) = &self.best {
            let prune = if i == n { cost >= *best } else { cost > *best + 1e-9 };
            if prune {
                return;
            }
        }
        if i == n {
            self.best = Some((cost, self.sets.clone()));
            return;
        }
        let vehicles = &self.inst.fleet.vehicles;
        let mut tried_depots: Vec<NodeId> = Vec::new();
        let mut candidates = Vec::new();
        for k in 0..vehicles.len() {
            if self.sets[k] != 0 {
                candidates.push(k);
            }
        }
        for (k, v) in vehicles.iter().enumerate() {
            if self.sets[k] == 0 && !tried_depots.contains(&v.depot) {
                tried_depots.push(v.depot);
                candidates.push(k);
            }
        }
        for k in candidates {
            self.sets[k] |= 1 << i;
            self.dfs(i + 1);
            self.sets[k] &= !(1 << i);
        }
    }
}

/// Shortest feasible stop sequence from `depot` serving exactly `orders`,
/// leaving the depot at minute 0. One stop per action.
fn best_sequence(inst: &Instance, depot: NodeId, orders: &[&DeliveryOrder], metric: bool) -> Sequence {
    let mut dfs = SeqSearch {
        inst,
        orders,
        depot,
        metric,
        best_len: f64::INFINITY,
        best: None,
        path: Vec::with_capacity(2 * orders.len()),
        stack: Vec::with_capacity(orders.len()),
        picked: vec![false; orders.len()],
    };
    dfs.go(depot, 0.0, 0, 0.0, 0);
    let path = dfs.best?;
    let mut stops = vec![Stop::new(depot, Vec::new())];
    stops.extend(path.into_iter().map(|(node, a)| Stop::new(node, vec![a])));
    stops.push(Stop::new(depot, Vec::new()));
    Some((dfs.best_len, stops))
}

struct SeqSearch<'a> {
    inst: &'a Instance,
    orders: &'a [&'a DeliveryOrder],
    depot: NodeId,
    metric: bool,
    best_len: f64,
    best: Option<Vec<(NodeId, Action)>>,
    path: Vec<(NodeId, Action)>,
    stack: Vec<usize>,
    picked: Vec<bool>,
}

impl SeqSearch<'_> {
    fn go(&mut self, at: NodeId, time: f64, load: u32, len: f64, delivered: usize) {
        let net = &self.inst.network;
        let service = net.service_time();
        if delivered == self.orders.len() {
            let total = len + net.dist(at, self.depot);
            if total < self.best_len {
                self.best_len = total;
                self.best = Some(self.path.clone());
            }
            return;
        }
        if self.metric {
            if len + net.dist(at, self.depot) > self.best_len + 1e-9 {
                return;
            }
            for &o in &self.stack {
                let ord = self.orders[o];
                if time + net.travel_time(at, ord.delivery) + service > f64::from(ord.latest_delivery) {
                    return;
                }
            }
        }
        if let Some(&top) = self.stack.last() {
            let o = self.orders[top];
            let done = time + net.travel_time(at, o.delivery) + service;
            if done <= f64::from(o.latest_delivery) {
                self.stack.pop();
                self.path.push((o.delivery, Action::Deliver(Cargo::from(o))));
                self.go(o.delivery, done, load - o.quantity, len + net.dist(at, o.delivery), delivered + 1);
                self.path.pop();
                self.stack.push(top);
            }
        }
        for i in 0..self.orders.len() {
            let o = self.orders[i];
            if self.picked[i] || load + o.quantity > self.inst.fleet.capacity {
                continue;
            }
            let arrive = time + net.travel_time(at, o.pickup);
            let done = arrive.max(f64::from(o.created_at)) + service;
            if self.metric && done + net.travel_time(o.pickup, o.delivery) + service > f64::from(o.latest_delivery) {
                continue;
            }
            self.picked[i] = true;
            self.stack.push(i);
            self.path.push((o.pickup, Action::Pickup(Cargo::from(o))));
            self.go(o.pickup, done, load + o.quantity, len + net.dist(at, o.pickup), delivered);
            self.path.pop();
            self.stack.pop();
            self.picked[i] = false;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IssueKind {
    BackToDepot,
    Pairing,
    TimeWindow,
    Capacity,
    Lifo,
    Timeline,
    FrozenPrefix,
    TcIdentity,
    UnknownOrder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub kind: IssueKind,
    pub vehicle: Option<VehicleId>,
    pub stop: Option<usize>,
    pub order: Option<OrderId>,
    pub detail: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.kind)?;
        if let Some(v) = self.vehicle {
            write!(f, " vehicle {v}")?;
        }
        if let Some(s) = self.stop {
            write!(f, " stop {s}")?;
        }
        if let Some(o) = self.order {
            write!(f, " order {o}")?;
        }
        write!(f, ": {}", self.detail)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub issues: Vec<Issue>,
}

impl Validation {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has(&self, kind: IssueKind) -> bool {
        self.issues.iter().any(|i| i.kind == kind)
    }
}

const TIME_TOL: f64 = 1e-6;

/// Re-simulates every executed route from the instance data alone and
/// re-checks all routing rules, the frozen-prefix log and the cost identity.
pub fn validate_routes(report: &EpisodeReport, instance: &Instance) -> Validation {
    let mut issues = Vec::new();
    let mut push = |kind, vehicle: Option<VehicleId>, stop, order, detail: String| {
        issues.push(Issue { kind, vehicle, stop, order, detail })
    };
    let net = &instance.network;
    let orders: HashMap<OrderId, &DeliveryOrder> = instance.orders.iter().map(|o| (o.id, o)).collect();
    let mut served: HashMap<OrderId, usize> = HashMap::new();
    let mut recomputed_lengths = Vec::new();

    for route in &report.routes {
        let v = Some(route.vehicle);
        let depot = instance.fleet.vehicles.get(route.vehicle.0).map(|x| x.depot);
        let stops = &route.stops;
        if stops.len() < 2 || Some(stops[0].node) != depot || Some(stops[stops.len() - 1].node) != depot {
            push(IssueKind::BackToDepot, v, None, None, "route must start and end at the vehicle's depot".into());
            continue;
        }
        if !stops[stops.len() - 1].actions.is_empty() {
            push(IssueKind::BackToDepot, v, Some(stops.len() - 1), None, "actions at the terminal depot".into());
        }
        let mut length = 0.0;
        let mut departure = 0.0;
        let mut stack: Vec<OrderId> = Vec::new();
        let mut load: u64 = 0;
        let mut picked: Vec<OrderId> = Vec::new();
        for (i, s) in stops.iter().enumerate() {
            let arrival = if i == 0 {
                route.start_time
            } else {
                length += net.dist(stops[i - 1].node, s.node);
                departure + net.dist(stops[i - 1].node, s.node) / net.speed()
            };
            let mut start = arrival.max(s.hold_until);
            for a in &s.actions {
                if let Action::Pickup(c) = a {
                    if let Some(o) = orders.get(&c.order) {
                        start = start.max(f64::from(o.created_at));
                    }
                }
            }
            let expected_departure = start + net.service_time() * s.actions.len() as f64;
            if (arrival - s.arrival).abs() > TIME_TOL || (expected_departure - s.departure).abs() > TIME_TOL {
                push(IssueKind::Timeline, v, Some(i), None, format!(
                    "stored times ({:.3}, {:.3}) differ from re-simulated ({arrival:.3}, {expected_departure:.3})",
                    s.arrival, s.departure
                ));
            }
            departure = expected_departure;
            for (k, a) in s.actions.iter().enumerate() {
                let done = start + net.service_time() * (k + 1) as f64;
                let Some(o) = orders.get(&a.order()) else {
                    push(IssueKind::UnknownOrder, v, Some(i), Some(a.order()), "order not in instance".into());
                    continue;
                };
                match a {
                    Action::Pickup(_) => {
                        if s.node != o.pickup {
                            push(IssueKind::Pairing, v, Some(i), Some(o.id), "pickup at the wrong node".into());
                        }
                        if picked.contains(&o.id) {
                            push(IssueKind::Pairing, v, Some(i), Some(o.id), "picked up twice".into());
                        }
                        if done - net.service_time() < f64::from(o.created_at) - TIME_TOL {
                            push(IssueKind::TimeWindow, v, Some(i), Some(o.id), "picked up before creation".into());
                        }
                        picked.push(o.id);
                        *served.entry(o.id).or_default() += 1;
                        stack.push(o.id);
                        load += u64::from(o.quantity);
                        if load > u64::from(instance.fleet.capacity) {
                            push(IssueKind::Capacity, v, Some(i), Some(o.id), format!("load {load} exceeds capacity"));
                        }
                    }
                    Action::Deliver(_) => {
                        if s.node != o.delivery {
                            push(IssueKind::Pairing, v, Some(i), Some(o.id), "delivery at the wrong node".into());
                        }
                        match stack.iter().rposition(|x| *x == o.id) {
                            None => {
                                push(IssueKind::Pairing, v, Some(i), Some(o.id), "delivered without pickup".into())
                            }
                            Some(pos) => {
                                if pos + 1 != stack.len() {
                                    push(IssueKind::Lifo, v, Some(i), Some(o.id), "order is not on top of the stack".into());
                                }
                                stack.remove(pos);
                                load -= u64::from(o.quantity);
                            }
                        }
                        if done > f64::from(o.latest_delivery) + TIME_TOL {
                            push(IssueKind::TimeWindow, v, Some(i), Some(o.id), format!("delivered at {done:.3}"));
                        }
                    }
                }
            }
        }
        for o in stack {
            push(IssueKind::Pairing, v, None, Some(o), "picked up but never delivered".into());
        }
        if (length - route.length).abs() > 1e-6 {
            push(IssueKind::Timeline, v, None, None, format!("stored length {} vs {length}", route.length));
        }
        recomputed_lengths.push(length);
    }

    for o in &instance.orders {
        match served.get(&o.id) {
            Some(1) => {}
            Some(n) => push(IssueKind::Pairing, None, None, Some(o.id), format!("served {n} times")),
            None => push(IssueKind::Pairing, None, None, Some(o.id), "never served".into()),
        }
    }

    for entry in &report.log {
        let Some(route) = report.routes.iter().find(|r| r.vehicle == entry.vehicle) else {
            push(IssueKind::FrozenPrefix, Some(entry.vehicle), None, Some(entry.order), "vehicle has no route".into());
            continue;
        };
        let n = entry.frozen_prefix.len();
        let kept = route.stops.len() >= n
            && entry.frozen_prefix.iter().zip(&route.stops).all(|(p, s)| p.node == s.node && p.actions == s.actions);
        if !kept {
            push(IssueKind::FrozenPrefix, Some(entry.vehicle), None, Some(entry.order), "frozen stops were changed".into());
            continue;
        }
        // The stop the vehicle was at or heading to must lie in the prefix.
        let stops = &route.stops;
        let reached = stops.iter().rposition(|s| s.arrival <= entry.time).unwrap_or(0);
        let committed =
            if reached + 1 < stops.len() && stops[reached].departure < entry.time { reached + 1 } else { reached };
        if committed >= n && stops.iter().any(|s| !s.actions.is_empty()) && n < stops.len() {
            let was_used = entry.frozen_prefix.iter().any(|p| !p.actions.is_empty());
            if was_used {
                push(IssueKind::FrozenPrefix, Some(entry.vehicle), Some(committed), Some(entry.order), format!(
                    "vehicle was committed to stop {committed} but only {n} stops were frozen"
                ));
            }
        }
        let pickup_at = stops
            .iter()
            .position(|s| s.actions.iter().any(|a| matches!(a, Action::Pickup(c) if c.order == entry.order)));
        if pickup_at.is_some_and(|p| p < n) {
            push(IssueKind::FrozenPrefix, Some(entry.vehicle), pickup_at, Some(entry.order), "order inserted into frozen prefix".into());
        }
    }

    let nuv = report.routes.iter().filter(|r| r.stops.iter().any(|s| !s.actions.is_empty())).count();
    if nuv != report.nuv {
        push(IssueKind::TcIdentity, None, None, None, format!("nuv {} but {nuv} routes used", report.nuv));
    }
    let ttl = total_length(recomputed_lengths);
    if (ttl - report.ttl).abs() > 1e-6 {
        push(IssueKind::TcIdentity, None, None, None, format!("ttl {} but routes sum to {ttl}", report.ttl));
    }
    let fleet = &instance.fleet;
    if report.tc != fleet.fixed_cost * report.nuv as f64 + fleet.unit_cost * report.ttl {
        push(IssueKind::TcIdentity, None, None, None, format!("tc {} != fixed*nuv + unit*ttl", report.tc));
    }
    Validation { issues }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{run_episode, EnvConfig, VehicleState};
    use crate::instance::{generate_instance, FleetConfig, Node, NodeRole, RoadNetwork, Vehicle};

    fn state(deltas: &[(f64, f64)], accepted: &[usize], feasible: &[bool]) -> JointState {
        JointState {
            order: OrderId(0),
            interval: 0,
            rows: deltas
                .iter()
                .zip(feasible)
                .map(|(&(cur, new), &f)| VehicleState {
                    features: if f { [cur, new, 0.5, 0.0, 0.0] } else { [-1.0; 5] },
                    feasible: f,
                })
                .collect(),
            positions: vec![(0.0, 0.0); deltas.len()],
            accepted: accepted.to_vec(),
        }
    }

    #[test]
    fn greedy_rules() {
        let s = state(&[(10.0, 13.0), (0.0, 7.0)], &[2, 0], &[true, true]);
        assert_eq!(greedy_dispatch(&s, GreedyKind::Incremental), Ok(VehicleId(0)));
        assert_eq!(greedy_dispatch(&s, GreedyKind::Total), Ok(VehicleId(1)));
        assert_eq!(greedy_dispatch(&s, GreedyKind::MaxOrders), Ok(VehicleId(0)));
        let fresh = state(&[(0.0, 9.0), (0.0, 9.0), (0.0, 9.0)], &[0, 0, 0], &[true, true, true]);
        for kind in GreedyKind::ALL {
            assert_eq!(greedy_dispatch(&fresh, kind), Ok(VehicleId(0)));
        }
        let forced = state(&[(1.0, 2.0), (0.0, 50.0), (3.0, 4.0)], &[5, 0, 9], &[false, true, false]);
        for kind in GreedyKind::ALL {
            assert_eq!(greedy_dispatch(&forced, kind), Ok(VehicleId(1)));
        }
        let none = state(&[(1.0, 2.0)], &[0], &[false]);
        assert_eq!(greedy_dispatch(&none, GreedyKind::Total), Err(DispatchError::NoFeasibleVehicle(OrderId(0))));
    }

    fn tiny(orders: Vec<DeliveryOrder>, vehicles: usize, fixed_cost: f64) -> Instance {
        let nodes = vec![
            Node { id: NodeId(0), role: NodeRole::Depot, x: 0.0, y: 0.0 },
            Node { id: NodeId(1), role: NodeRole::Factory, x: 3.0, y: 0.0 },
            Node { id: NodeId(2), role: NodeRole::Factory, x: 3.0, y: 4.0 },
        ];
        let network = RoadNetwork::new(nodes, None, 1.0, 0.0).unwrap();
        let fleet = FleetConfig {
            vehicles: (0..vehicles).map(|k| Vehicle { id: VehicleId(k), depot: NodeId(0) }).collect(),
            capacity: 10,
            fixed_cost,
            unit_cost: 2.0,
        };
        Instance::new(network, orders, fleet, 144, None).unwrap()
    }

    fn order(id: usize, tc: u32) -> DeliveryOrder {
        DeliveryOrder {
            id: OrderId(id),
            pickup: NodeId(1),
            delivery: NodeId(2),
            quantity: 2,
            created_at: tc,
            latest_delivery: 1000,
        }
    }

    #[test]
    fn exact_single_order() {
        let inst = tiny(vec![order(0, 0)], 1, 300.0);
        let sol = solve_exact(&inst, Duration::from_secs(5)).unwrap();
        assert!(sol.optimal);
        assert_eq!(sol.tc, 300.0 + 2.0 * 12.0);
        assert_eq!(sol.nuv, 1);
        assert!(validate_routes(&sol.to_report(), &inst).is_valid());
    }

    #[test]
    fn exact_consolidates_identical_orders() {
        let inst = tiny(vec![order(0, 0), order(1, 0)], 2, 1e6);
        let sol = solve_exact(&inst, Duration::from_secs(5)).unwrap();
        assert_eq!(sol.nuv, 1);
        assert_eq!(sol.ttl, 12.0);
        assert!(sol.dump().contains("vehicle 0:"));
    }

    #[test]
    fn exact_errors() {
        let inst = tiny(vec![order(0, 0)], 1, 300.0);
        assert_eq!(solve_exact(&inst, Duration::ZERO), Err(ExactError::ZeroBudget));
        let mut late = order(0, 0);
        late.latest_delivery = 3;
        let inst = tiny(vec![late], 1, 300.0);
        assert_eq!(solve_exact(&inst, Duration::from_secs(1)), Err(ExactError::Infeasible));
    }

    #[test]
    fn exact_dominates_greedy_on_generated() {
        let inst = generate_instance(1, 12, 6, 5, 144);
        let sol = solve_exact(&inst, Duration::from_secs(30)).unwrap();
        assert!(sol.optimal);
        assert!(validate_routes(&sol.to_report(), &inst).is_valid());
        for kind in GreedyKind::ALL {
            let ep = run_episode(&inst, &mut Greedy(kind), &EnvConfig::default(), false).unwrap();
            assert!(sol.tc <= ep.report.tc, "{kind:?}: {} > {}", sol.tc, ep.report.tc);
        }
        let mut plan = ExactPlanPolicy::new(&sol);
        let ep = run_episode(&inst, &mut plan, &EnvConfig::default(), false).unwrap();
        assert!(sol.tc <= ep.report.tc);
        assert!(validate_routes(&ep.report, &inst).is_valid());
    }

    #[test]
    fn validator_accepts_greedy_episodes() {
        for seed in 0..5 {
            let inst = generate_instance(seed, 10, 25, 6, 144);
            for kind in GreedyKind::ALL {
                let ep = run_episode(&inst, &mut Greedy(kind), &EnvConfig::default(), false).unwrap();
                let v = validate_routes(&ep.report, &inst);
                assert!(v.is_valid(), "seed {seed} {kind:?}: {:?}", v.issues);
            }
        }
    }

    #[test]
    fn validator_names_lifo_stop() {
        let inst = tiny(vec![order(0, 0), order(1, 0)], 1, 300.0);
        let ep = run_episode(&inst, &mut Greedy(GreedyKind::Incremental), &EnvConfig::default(), false).unwrap();
        let mut report = ep.report.clone();
        let route = &mut report.routes[0];
        // Swap the two deliveries so the first-loaded order leaves first.
        let deliveries: Vec<usize> = route
            .stops
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s.actions.first(), Some(Action::Deliver(_))))
            .map(|(i, _)| i)
            .collect();
        let (a, b) = (deliveries[0], deliveries[1]);
        let tmp = route.stops[a].actions.clone();
        route.stops[a].actions = route.stops[b].actions.clone();
        route.stops[b].actions = tmp;
        let v = validate_routes(&report, &inst);
        let lifo = v.issues.iter().find(|i| i.kind == IssueKind::Lifo).expect("LIFO issue");
        assert_eq!(lifo.stop, Some(a));
    }

    #[test]
    fn validator_catches_tampered_cost() {
        let inst = tiny(vec![order(0, 0)], 1, 300.0);
        let ep = run_episode(&inst, &mut Greedy(GreedyKind::Total), &EnvConfig::default(), false).unwrap();
        let mut report = ep.report.clone();
        report.tc += 1.0;
        let v = validate_routes(&report, &inst);
        assert!(v.has(IssueKind::TcIdentity));
        assert_eq!(v.issues.len(), 1);
    }

    #[test]
    fn validator_catches_changed_prefix() {
        let inst = tiny(vec![order(0, 0), order(1, 100)], 1, 300.0);
        let ep = run_episode(&inst, &mut Greedy(GreedyKind::Total), &EnvConfig::default(), false).unwrap();
        assert!(validate_routes(&ep.report, &inst).is_valid());
        let mut report = ep.report.clone();
        report.log[1].frozen_prefix[1].node = NodeId(2);
        assert!(validate_routes(&report, &inst).has(IssueKind::FrozenPrefix));
    }
}
