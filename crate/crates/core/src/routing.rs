//! Routes, timeline simulation, constraint checking and insertion planning.
//!
//! A route always starts and ends at its vehicle's depot. Stops up to
//! `frozen_until` have been executed or are the vehicle's current target;
//! planning only ever inserts after them. When a vehicle that already came
//! back to its depot gets new work, the terminal depot stop stays in the
//! executed prefix and a fresh terminal stop is appended.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::instance::{DeliveryOrder, FleetConfig, NodeId, OrderId, RoadNetwork, VehicleId};
use crate::st_demand::{capacity_vector, demand_vector, st_score, StdMatrix};

/// Cargo carried by one order, copied into the actions that move it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cargo {
    pub order: OrderId,
    pub quantity: u32,
    /// Earliest pickup, minutes.
    pub ready: u32,
    /// Latest delivery completion, minutes.
    pub due: u32,
}

impl From<&DeliveryOrder> for Cargo {
    fn from(o: &DeliveryOrder) -> Self {
        Self { order: o.id, quantity: o.quantity, ready: o.created_at, due: o.latest_delivery }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Action {
    Pickup(Cargo),
    Deliver(Cargo),
}

impl Action {
    pub fn cargo(&self) -> &Cargo {
        match self {
            Action::Pickup(c) | Action::Deliver(c) => c,
        }
    }

    pub fn order(&self) -> OrderId {
        self.cargo().order
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub node: NodeId,
    pub actions: Vec<Action>,
    pub arrival: f64,
    pub departure: f64,
    /// The vehicle does not leave this stop before this time.
    pub hold_until: f64,
}

impl Stop {
    pub fn new(node: NodeId, actions: Vec<Action>) -> Self {
        Self { node, actions, arrival: 0.0, departure: 0.0, hold_until: 0.0 }
    }

    /// Time at which service starts: after arrival, any hold, and every pickup's ready time.
    pub fn service_start(&self) -> f64 {
        self.actions
            .iter()
            .filter_map(|a| match a {
                Action::Pickup(c) => Some(f64::from(c.ready)),
                Action::Deliver(_) => None,
            })
            .fold(self.arrival.max(self.hold_until), f64::max)
    }

    pub fn same_plan(&self, other: &Stop) -> bool {
        self.node == other.node && self.actions == other.actions
    }
}

/// Where a vehicle is at a given time along its route.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Location {
    /// Arrived at the stop and not yet departed.
    AtStop(usize),
    /// Driving from `to - 1` toward `to`; `fraction` of the leg's travel time elapsed.
    EnRoute { to: usize, fraction: f64 },
    /// Back at the terminal depot with nothing left to do.
    Finished,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub vehicle: VehicleId,
    pub depot: NodeId,
    pub stops: Vec<Stop>,
    pub frozen_until: usize,
    pub length: f64,
    /// Departure time from the first stop is never earlier than this.
    pub start_time: f64,
}

impl Route {
    /// Unused route `depot → depot`, waiting at the depot.
    pub fn new(vehicle: VehicleId, depot: NodeId) -> Self {
        Self {
            vehicle,
            depot,
            stops: vec![Stop::new(depot, Vec::new()), Stop::new(depot, Vec::new())],
            frozen_until: 0,
            length: 0.0,
            start_time: 0.0,
        }
    }

    pub fn from_stops(vehicle: VehicleId, depot: NodeId, stops: Vec<Stop>) -> Self {
        Self { vehicle, depot, stops, frozen_until: 0, length: 0.0, start_time: 0.0 }
    }

    /// Whether the vehicle has ever been given an order.
    pub fn is_used(&self) -> bool {
        self.stops.iter().any(|s| !s.actions.is_empty())
    }

    /// Orders picked up anywhere on the route.
    pub fn orders(&self) -> impl Iterator<Item = OrderId> + '_ {
        self.stops.iter().flat_map(|s| s.actions.iter()).filter_map(|a| match a {
            Action::Pickup(c) => Some(c.order),
            Action::Deliver(_) => None,
        })
    }

    pub fn order_count(&self) -> usize {
        self.orders().count()
    }

    /// Load on board when arriving at each stop.
    pub fn arrival_loads(&self) -> Vec<u32> {
        let mut load = 0u32;
        self.stops
            .iter()
            .map(|s| {
                let on_arrival = load;
                for a in &s.actions {
                    match a {
                        Action::Pickup(c) => load += c.quantity,
                        Action::Deliver(c) => load = load.saturating_sub(c.quantity),
                    }
                }
                on_arrival
            })
            .collect()
    }

    /// Load on board after leaving each stop.
    pub fn load_profile(&self) -> Vec<u32> {
        let mut loads = self.arrival_loads();
        loads.rotate_left(1);
        if let Some(last) = loads.last_mut() {
            *last = 0;
        }
        loads
    }

    /// LIFO stack (bottom first) after leaving each stop.
    pub fn stack_profile(&self) -> Vec<Vec<OrderId>> {
        let mut stack = Vec::new();
        self.stops
            .iter()
            .map(|s| {
                for a in &s.actions {
                    match a {
                        Action::Pickup(c) => stack.push(c.order),
                        Action::Deliver(c) => {
                            if let Some(pos) = stack.iter().rposition(|o| *o == c.order) {
                                stack.remove(pos);
                            }
                        }
                    }
                }
                stack.clone()
            })
            .collect()
    }

    /// Recomputes arrival, departure and length from scratch.
    pub fn retime(&mut self, network: &RoadNetwork) {
        self.retime_from(network, 0);
    }

    /// Recomputes times for stops `from..` keeping earlier stops as they are.
    pub fn retime_from(&mut self, network: &RoadNetwork, from: usize) {
        let service = network.service_time();
        for i in from..self.stops.len() {
            let arrival = if i == 0 {
                self.start_time
            } else {
                let prev = &self.stops[i - 1];
                prev.departure + network.travel_time(prev.node, self.stops[i].node)
            };
            let stop = &mut self.stops[i];
            stop.arrival = arrival;
            stop.departure = stop.service_start() + service * stop.actions.len() as f64;
        }
        self.length = route_length(network, &self.stops);
    }

    /// Current position of the vehicle at time `now`.
    pub fn locate(&self, now: f64) -> Location {
        if !self.is_used() {
            return Location::AtStop(0);
        }
        let last = self.stops.len() - 1;
        match self.stops.iter().rposition(|s| s.arrival <= now) {
            None => Location::AtStop(0),
            Some(i) if i == last => Location::Finished,
            Some(i) if self.stops[i].departure >= now => Location::AtStop(i),
            Some(i) => {
                let leg = self.stops[i + 1].arrival - self.stops[i].departure;
                let fraction = if leg > 0.0 { (now - self.stops[i].departure) / leg } else { 1.0 };
                Location::EnRoute { to: i + 1, fraction: fraction.clamp(0.0, 1.0) }
            }
        }
    }

    /// Index of the last stop that can no longer be changed at time `now`.
    pub fn frozen_index_at(&self, now: f64) -> usize {
        match self.locate(now) {
            Location::AtStop(i) => i,
            Location::EnRoute { to, .. } => to,
            Location::Finished => self.stops.len() - 1,
        }
    }

    /// Sets `frozen_until` for time `now`. It never moves backwards.
    pub fn advance(&mut self, now: f64) {
        self.frozen_until = self.frozen_until.max(self.frozen_index_at(now));
    }

    /// Planar position at `now`, interpolated along the current leg.
    pub fn position(&self, network: &RoadNetwork, now: f64) -> (f64, f64) {
        match self.locate(now) {
            Location::AtStop(i) => network.position(self.stops[i].node),
            Location::Finished => network.position(self.stops[self.stops.len() - 1].node),
            Location::EnRoute { to, fraction } => {
                let (x0, y0) = network.position(self.stops[to - 1].node);
                let (x1, y1) = network.position(self.stops[to].node);
                (x0 + (x1 - x0) * fraction, y0 + (y1 - y0) * fraction)
            }
        }
    }

    /// One line per stop: `node arrival departure [+o|-o]...`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for s in &self.stops {
            let _ = write!(out, "{} {:.2} {:.2}", s.node, s.arrival, s.departure);
            for a in &s.actions {
                let _ = match a {
                    Action::Pickup(c) => write!(out, " +{}", c.order),
                    Action::Deliver(c) => write!(out, " -{}", c.order),
                };
            }
            out.push('\n');
        }
        out
    }
}

/// Sum of leg distances in stop order.
pub fn route_length(network: &RoadNetwork, stops: &[Stop]) -> f64 {
    stops.windows(2).map(|w| network.dist(w[0].node, w[1].node)).sum()
}

/// Recomputes a route's timeline from `start_time` and returns it.
pub fn simulate_timeline(route: &Route, network: &RoadNetwork, start_time: f64) -> Route {
    let mut out = route.clone();
    out.start_time = start_time;
    out.retime(network);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViolationKind {
    BackToDepot,
    /// Order picked twice, delivered without pickup, or never delivered.
    Pairing,
    TimeWindow,
    Capacity,
    Lifo,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ViolationKind::BackToDepot => "back-to-depot",
            ViolationKind::Pairing => "pairing",
            ViolationKind::TimeWindow => "time-window",
            ViolationKind::Capacity => "capacity",
            ViolationKind::Lifo => "LIFO",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub stop: usize,
    pub order: Option<OrderId>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violation at stop {}", self.kind, self.stop)?;
        if let Some(o) = self.order {
            write!(f, " (order {o})")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Feasible,
    Violated(Violation),
}

impl Verdict {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Verdict::Feasible)
    }
}

/// Checks a timed route against the back-to-depot, pairing, time-window,
/// capacity and LIFO rules. Reports the first violation in route order.
pub fn check_feasibility(route: &Route, fleet: &FleetConfig) -> Verdict {
    let violated = |kind, stop, order| Verdict::Violated(Violation { kind, stop, order });
    let last = route.stops.len().saturating_sub(1);
    if route.stops.first().map(|s| s.node) != Some(route.depot) {
        return violated(ViolationKind::BackToDepot, 0, None);
    }
    if route.stops.len() < 2 || route.stops[last].node != route.depot || !route.stops[last].actions.is_empty() {
        return violated(ViolationKind::BackToDepot, last, None);
    }
    let service = route_service_time(route);
    let mut stack: Vec<OrderId> = Vec::new();
    let mut seen: Vec<OrderId> = Vec::new();
    let mut load = 0u32;
    for (i, stop) in route.stops.iter().enumerate() {
        let start = stop.service_start();
        for (k, action) in stop.actions.iter().enumerate() {
            let done = start + service * (k + 1) as f64;
            match action {
                Action::Pickup(c) => {
                    if seen.contains(&c.order) {
                        return violated(ViolationKind::Pairing, i, Some(c.order));
                    }
                    seen.push(c.order);
                    stack.push(c.order);
                    load += c.quantity;
                    if load > fleet.capacity {
                        return violated(ViolationKind::Capacity, i, Some(c.order));
                    }
                }
                Action::Deliver(c) => match stack.last() {
                    Some(top) if *top == c.order => {
                        stack.pop();
                        load -= c.quantity;
                        if done > f64::from(c.due) {
                            return violated(ViolationKind::TimeWindow, i, Some(c.order));
                        }
                    }
                    _ if stack.contains(&c.order) => return violated(ViolationKind::Lifo, i, Some(c.order)),
                    _ => return violated(ViolationKind::Pairing, i, Some(c.order)),
                },
            }
        }
    }
    match stack.first() {
        Some(o) => violated(ViolationKind::Pairing, last, Some(*o)),
        None => Verdict::Feasible,
    }
}

/// Service time per action as implied by the stored timeline.
fn route_service_time(route: &Route) -> f64 {
    route
        .stops
        .iter()
        .find(|s| !s.actions.is_empty())
        .map(|s| (s.departure - s.service_start()) / s.actions.len() as f64)
        .unwrap_or(0.0)
        .max(0.0)
}

/// Output of the insertion planner for one (vehicle, order) pair.
///
/// When no insertion is feasible every numeric field is `-1` and
/// `best_route` is `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannerResult {
    pub feasible: bool,
    pub cur_len: f64,
    pub new_len: f64,
    pub st_score: f64,
    pub used_flag: f64,
    pub interval: i64,
    pub best_route: Option<Route>,
}

impl PlannerResult {
    pub fn infeasible() -> Self {
        Self {
            feasible: false,
            cur_len: -1.0,
            new_len: -1.0,
            st_score: -1.0,
            used_flag: -1.0,
            interval: -1,
            best_route: None,
        }
    }

    /// Incremental length, `-1` when infeasible.
    pub fn delta(&self) -> f64 {
        if self.feasible {
            self.new_len - self.cur_len
        } else {
            -1.0
        }
    }

    /// The five state features `(d_cur, d_new, score, used, interval)`.
    pub fn features(&self) -> [f64; 5] {
        [self.cur_len, self.new_len, self.st_score, self.used_flag, self.interval as f64]
    }
}

/// Shared read-only context for insertion planning.
#[derive(Clone, Copy)]
pub struct Planner<'a> {
    pub network: &'a RoadNetwork,
    pub fleet: &'a FleetConfig,
    pub demand: &'a StdMatrix<f64>,
    pub horizon: u32,
}

impl<'a> Planner<'a> {
    pub fn new(network: &'a RoadNetwork, fleet: &'a FleetConfig, demand: &'a StdMatrix<f64>, horizon: u32) -> Self {
        Self { network, fleet, demand, horizon }
    }

    /// The route the planner enumerates insertions into: the terminal depot is
    /// re-opened if the vehicle already finished, and the frozen stop is held
    /// until `now`.
    pub fn editable_base(&self, route: &Route, now: f64) -> Route {
        let mut base = route.clone();
        let last = base.stops.len() - 1;
        if base.frozen_until >= last {
            base.frozen_until = last;
            base.stops.push(Stop::new(base.depot, Vec::new()));
        }
        let f = base.frozen_until;
        base.stops[f].hold_until = base.stops[f].hold_until.max(now);
        base.retime_from(self.network, f);
        base
    }

    /// Shortest feasible insertion of `order`'s pickup and delivery after the
    /// frozen prefix, preserving the relative order of existing stops.
    pub fn plan_insertion(&self, route: &Route, order: &DeliveryOrder, now: f64) -> PlannerResult {
        let base = self.editable_base(route, now);
        let f = base.frozen_until;
        let m = base.stops.len();
        let cargo = Cargo::from(order);
        let mut best: Option<Route> = None;
        let mut candidate = base.clone();
        for i in f + 1..m {
            for j in i..m {
                candidate.stops.clear();
                candidate.stops.extend_from_slice(&base.stops[..i]);
                candidate.stops.push(Stop::new(order.pickup, vec![Action::Pickup(cargo)]));
                candidate.stops.extend_from_slice(&base.stops[i..j]);
                candidate.stops.push(Stop::new(order.delivery, vec![Action::Deliver(cargo)]));
                candidate.stops.extend_from_slice(&base.stops[j..]);
                candidate.retime_from(self.network, i);
                if best.as_ref().is_some_and(|b| candidate.length >= b.length) {
                    continue;
                }
                if check_feasibility(&candidate, self.fleet).is_feasible() {
                    best = Some(candidate.clone());
                }
            }
        }
        let Some(best) = best else {
            return PlannerResult::infeasible();
        };
        let cap = capacity_vector::<f64>(&best, self.fleet.capacity, self.network, self.horizon);
        let dem = demand_vector(&best, self.demand, self.network, self.horizon);
        let score = st_score(&cap, &dem).expect("route with an order has factory stops");
        PlannerResult {
            feasible: true,
            cur_len: route.length,
            new_len: best.length,
            st_score: score,
            used_flag: if route.is_used() { 1.0 } else { 0.0 },
            interval: crate::instance::interval_of(now, self.horizon) as i64,
            best_route: Some(best),
        }
    }
}

/// Whether `after` keeps the first `frozen_until + 1` stops of `before` unchanged.
pub fn preserves_prefix(before: &Route, after: &Route) -> bool {
    let n = before.frozen_until + 1;
    after.stops.len() >= n && before.stops[..n].iter().zip(&after.stops[..n]).all(|(a, b)| a.same_plan(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{Node, NodeRole, Vehicle};

    /// Depot 0 at the origin and factories on a line.
    fn line(xs: &[f64], service: f64) -> RoadNetwork {
        let mut nodes = vec![Node { id: NodeId(0), role: NodeRole::Depot, x: 0.0, y: 0.0 }];
        for (i, &x) in xs.iter().enumerate() {
            nodes.push(Node { id: NodeId(i + 1), role: NodeRole::Factory, x, y: 0.0 });
        }
        RoadNetwork::new(nodes, None, 1.0, service).unwrap()
    }

    fn fleet(capacity: u32) -> FleetConfig {
        FleetConfig {
            vehicles: vec![Vehicle { id: VehicleId(0), depot: NodeId(0) }],
            capacity,
            fixed_cost: 300.0,
            unit_cost: 2.0,
        }
    }

    fn cargo(order: usize, q: u32, ready: u32, due: u32) -> Cargo {
        Cargo { order: OrderId(order), quantity: q, ready, due }
    }

    fn route(net: &RoadNetwork, stops: Vec<(usize, Vec<Action>)>) -> Route {
        let mut all = vec![Stop::new(NodeId(0), vec![])];
        all.extend(stops.into_iter().map(|(n, a)| Stop::new(NodeId(n), a)));
        all.push(Stop::new(NodeId(0), vec![]));
        let r = Route::from_stops(VehicleId(0), NodeId(0), all);
        simulate_timeline(&r, net, 0.0)
    }

    fn order(id: usize, p: usize, d: usize, q: u32, tc: u32, tl: u32) -> DeliveryOrder {
        DeliveryOrder {
            id: OrderId(id),
            pickup: NodeId(p),
            delivery: NodeId(d),
            quantity: q,
            created_at: tc,
            latest_delivery: tl,
        }
    }

    #[test]
    fn empty_route_has_zero_length() {
        let net = line(&[5.0], 0.0);
        let r = simulate_timeline(&Route::new(VehicleId(0), NodeId(0)), &net, 0.0);
        assert_eq!(r.length, 0.0);
        assert!(r.stops.iter().all(|s| s.arrival == 0.0 && s.departure == 0.0));
        assert!(!r.is_used());
    }

    #[test]
    fn out_and_back_timeline() {
        let net = line(&[5.0], 0.0);
        let c = cargo(0, 1, 0, 100);
        let r = route(&net, vec![(1, vec![Action::Pickup(c), Action::Deliver(c)])]);
        assert_eq!(r.stops[1].arrival, 5.0);
        assert_eq!(r.stops[2].arrival, 10.0);
        assert_eq!(r.length, 10.0);
    }

    #[test]
    fn early_pickup_waits() {
        let net = line(&[5.0, 6.0], 0.0);
        let c = cargo(0, 1, 20, 100);
        let r = route(&net, vec![(1, vec![Action::Pickup(c)]), (2, vec![Action::Deliver(c)])]);
        assert_eq!(r.stops[1].arrival, 5.0);
        assert_eq!(r.stops[1].departure, 20.0);
        assert_eq!(r.stops[2].arrival, 21.0);
    }

    #[test]
    fn service_time_per_action() {
        let net = line(&[5.0, 6.0], 2.0);
        let (a, b) = (cargo(0, 1, 0, 100), cargo(1, 1, 0, 100));
        let r = route(
            &net,
            vec![(1, vec![Action::Pickup(a), Action::Pickup(b)]), (2, vec![Action::Deliver(b), Action::Deliver(a)])],
        );
        assert_eq!(r.stops[1].departure - r.stops[1].arrival, 4.0);
        assert_eq!(r.stops[2].arrival, 10.0);
        assert!(check_feasibility(&r, &fleet(10)).is_feasible());
    }

    #[test]
    fn nested_pairs_are_feasible() {
        let net = line(&[1.0, 2.0, 3.0, 4.0], 0.0);
        let (a, b) = (cargo(1, 1, 0, 100), cargo(2, 1, 0, 100));
        let r = route(
            &net,
            vec![
                (1, vec![Action::Pickup(a)]),
                (2, vec![Action::Pickup(b)]),
                (3, vec![Action::Deliver(b)]),
                (4, vec![Action::Deliver(a)]),
            ],
        );
        assert_eq!(check_feasibility(&r, &fleet(10)), Verdict::Feasible);
        assert_eq!(r.stack_profile()[2], vec![OrderId(1), OrderId(2)]);
        assert_eq!(r.load_profile(), vec![0, 1, 2, 1, 0, 0]);
    }

    #[test]
    fn crossed_pairs_violate_lifo() {
        let net = line(&[1.0, 2.0, 3.0, 4.0], 0.0);
        let (a, b) = (cargo(1, 1, 0, 100), cargo(2, 1, 0, 100));
        let r = route(
            &net,
            vec![
                (1, vec![Action::Pickup(a)]),
                (2, vec![Action::Pickup(b)]),
                (3, vec![Action::Deliver(a)]),
                (4, vec![Action::Deliver(b)]),
            ],
        );
        assert_eq!(
            check_feasibility(&r, &fleet(10)),
            Verdict::Violated(Violation { kind: ViolationKind::Lifo, stop: 3, order: Some(OrderId(1)) })
        );
    }

    #[test]
    fn overload_violates_capacity() {
        let net = line(&[1.0, 2.0, 3.0, 4.0], 0.0);
        let (a, b) = (cargo(1, 6, 0, 100), cargo(2, 6, 0, 100));
        let r = route(
            &net,
            vec![
                (1, vec![Action::Pickup(a)]),
                (2, vec![Action::Pickup(b)]),
                (3, vec![Action::Deliver(b)]),
                (4, vec![Action::Deliver(a)]),
            ],
        );
        match check_feasibility(&r, &fleet(10)) {
            Verdict::Violated(v) => assert_eq!((v.kind, v.stop), (ViolationKind::Capacity, 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn late_delivery_and_depot_rules() {
        let net = line(&[5.0, 10.0], 0.0);
        let a = cargo(1, 1, 0, 9);
        let r = route(&net, vec![(1, vec![Action::Pickup(a)]), (2, vec![Action::Deliver(a)])]);
        match check_feasibility(&r, &fleet(10)) {
            Verdict::Violated(v) => assert_eq!(v.kind, ViolationKind::TimeWindow),
            other => panic!("{other:?}"),
        }
        let mut bad = r.clone();
        bad.stops.pop();
        match check_feasibility(&bad, &fleet(10)) {
            Verdict::Violated(v) => assert_eq!(v.kind, ViolationKind::BackToDepot),
            other => panic!("{other:?}"),
        }
        let mut open = route(&net, vec![(1, vec![Action::Pickup(cargo(1, 1, 0, 100))])]);
        open.retime(&net);
        match check_feasibility(&open, &fleet(10)) {
            Verdict::Violated(v) => assert_eq!(v.kind, ViolationKind::Pairing),
            other => panic!("{other:?}"),
        }
    }

    fn planner_parts(net: &RoadNetwork) -> StdMatrix<f64> {
        StdMatrix::zeros(net.factory_count(), 144)
    }

    #[test]
    fn insert_into_empty_route() {
        let net = line(&[3.0, 7.0], 0.0);
        let fl = fleet(10);
        let dm = planner_parts(&net);
        let planner = Planner::new(&net, &fl, &dm, 144);
        let r = Route::new(VehicleId(0), NodeId(0));
        let res = planner.plan_insertion(&r, &order(0, 1, 2, 2, 0, 1000), 0.0);
        assert!(res.feasible);
        assert_eq!(res.cur_len, 0.0);
        assert_eq!(res.new_len, 3.0 + 4.0 + 7.0);
        assert_eq!(res.used_flag, 0.0);
        let best = res.best_route.unwrap();
        let nodes: Vec<_> = best.stops.iter().map(|s| s.node.0).collect();
        assert_eq!(nodes, vec![0, 1, 2, 0]);
    }

    #[test]
    fn impossible_deadline_gives_sentinels() {
        let net = line(&[30.0, 60.0], 0.0);
        let fl = fleet(10);
        let dm = planner_parts(&net);
        let planner = Planner::new(&net, &fl, &dm, 144);
        let res = planner.plan_insertion(&Route::new(VehicleId(0), NodeId(0)), &order(0, 1, 2, 1, 0, 50), 0.0);
        assert_eq!(res, PlannerResult::infeasible());
        assert_eq!(res.features(), [-1.0; 5]);
    }

    #[test]
    fn idle_vehicle_departs_at_assignment_time() {
        let net = line(&[3.0, 7.0], 0.0);
        let fl = fleet(10);
        let dm = planner_parts(&net);
        let planner = Planner::new(&net, &fl, &dm, 144);
        let res = planner.plan_insertion(&Route::new(VehicleId(0), NodeId(0)), &order(0, 1, 2, 1, 100, 200), 100.0);
        let best = res.best_route.unwrap();
        assert_eq!(best.stops[0].departure, 100.0);
        assert_eq!(best.stops[1].arrival, 103.0);
        assert_eq!(res.interval, 10);
    }

    #[test]
    fn finished_vehicle_reopens_its_depot() {
        let net = line(&[3.0, 7.0], 0.0);
        let fl = fleet(10);
        let dm = planner_parts(&net);
        let planner = Planner::new(&net, &fl, &dm, 144);
        let first = planner.plan_insertion(&Route::new(VehicleId(0), NodeId(0)), &order(0, 1, 2, 1, 0, 200), 0.0);
        let mut r = first.best_route.unwrap();
        r.advance(500.0);
        assert_eq!(r.frozen_until, 3);
        let res = planner.plan_insertion(&r, &order(1, 2, 1, 1, 500, 900), 500.0);
        let best = res.best_route.unwrap();
        assert_eq!(best.stops.len(), 7);
        assert!(preserves_prefix(&r, &best));
        assert_eq!(best.stops[3].departure, 500.0);
        assert_eq!(res.new_len, 28.0);
        assert_eq!(res.used_flag, 1.0);
        assert!(check_feasibility(&best, &fl).is_feasible());
    }

    #[test]
    fn in_service_vehicle_keeps_destination() {
        let net = line(&[10.0, 20.0, 1.0, 2.0], 0.0);
        let fl = fleet(10);
        let dm = planner_parts(&net);
        let planner = Planner::new(&net, &fl, &dm, 144);
        let a = order(0, 1, 2, 1, 0, 1000);
        let mut r = planner.plan_insertion(&Route::new(VehicleId(0), NodeId(0)), &a, 0.0).best_route.unwrap();
        r.advance(5.0);
        assert_eq!(r.locate(5.0), Location::EnRoute { to: 1, fraction: 0.5 });
        assert_eq!(r.frozen_until, 1);
        assert_eq!(r.position(&net, 5.0), (5.0, 0.0));
        let res = planner.plan_insertion(&r, &order(1, 3, 4, 1, 5, 1000), 5.0);
        let best = res.best_route.unwrap();
        assert!(preserves_prefix(&r, &best));
        assert_eq!(best.stops[1].node, NodeId(1));
    }

    #[test]
    fn dump_lists_actions() {
        let net = line(&[3.0, 7.0], 0.0);
        let fl = fleet(10);
        let dm = planner_parts(&net);
        let planner = Planner::new(&net, &fl, &dm, 144);
        let best = planner
            .plan_insertion(&Route::new(VehicleId(0), NodeId(0)), &order(4, 1, 2, 1, 0, 200), 0.0)
            .best_route
            .unwrap();
        assert_eq!(best.dump(), "0 0.00 0.00\n1 3.00 3.00 +4\n2 7.00 7.00 -4\n0 14.00 14.00\n");
    }
}
