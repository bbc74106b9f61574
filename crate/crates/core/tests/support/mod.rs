//! Brute-force oracles shared by the integration tests. Nothing here calls
//! the planner, the exact solver or the validator.

#![allow(dead_code)]

use std::collections::HashMap;

use dpdp::instance::{DeliveryOrder, GeneratorConfig, Instance, NodeId};
use dpdp::routing::{Action, Route};

/// One stop of a candidate sequence: node plus (order index or cargo, pickup?) actions.
#[derive(Clone, Copy, Debug)]
struct Visit {
    node: NodeId,
    order: usize,
    pickup: bool,
    quantity: u32,
    ready: f64,
    due: f64,
}

/// Walks `visits` from `node` at time `t` with an initial stack; returns the
/// added length if every rule holds and the walk ends empty at `depot`.
fn walk(inst: &Instance, start: NodeId, mut t: f64, mut stack: Vec<(usize, u32)>, visits: &[Vec<Visit>], depot: NodeId) -> Option<f64> {
    let net = &inst.network;
    let s = net.service_time();
    let mut load: u32 = stack.iter().map(|x| x.1).sum();
    let mut at = start;
    let mut legs = Vec::new();
    for stop in visits {
        let node = stop[0].node;
        legs.push(net.dist(at, node));
        let arrival = t + net.dist(at, node) / net.speed();
        let start_service = stop.iter().filter(|v| v.pickup).map(|v| v.ready).fold(arrival, f64::max);
        for (k, v) in stop.iter().enumerate() {
            let done = start_service + s * (k + 1) as f64;
            if v.pickup {
                load += v.quantity;
                if load > inst.fleet.capacity {
                    return None;
                }
                stack.push((v.order, v.quantity));
            } else {
                if stack.last().map(|x| x.0) != Some(v.order) {
                    return None;
                }
                stack.pop();
                load -= v.quantity;
                if done > v.due {
                    return None;
                }
            }
        }
        t = start_service + s * stop.len() as f64;
        at = node;
    }
    legs.push(net.dist(at, depot));
    stack.is_empty().then_some(())?;
    Some(legs.into_iter().fold(0.0, |a, b| a + b))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn visits_of(stop: &dpdp::routing::Stop) -> Vec<Visit> {
    stop.actions
        .iter()
        .map(|a| {
            let (c, pickup) = match a {
                Action::Pickup(c) => (c, true),
                Action::Deliver(c) => (c, false),
            };
            Visit { node: stop.node, order: c.order.0, pickup, quantity: c.quantity, ready: f64::from(c.ready), due: f64::from(c.due) }
        })
        .collect()
}

/// Minimum route length over every placement of the order's pickup and
/// delivery among the editable stops, found by enumerating all permutations
/// of (editable stops + the two new stops) and keeping those that preserve
/// the existing order.
pub fn brute_force_insertion(route: &Route, order: &DeliveryOrder, inst: &Instance, now: f64) -> Option<f64> {
    let stops = &route.stops;
    let last = stops.len() - 1;
    let f = route.frozen_until.min(last);
    let prefix = &stops[..=f];
    let tail: Vec<Vec<Visit>> = if f < last { stops[f + 1..last].iter().map(visits_of).collect() } else { Vec::new() };

    let mut stack = Vec::new();
    for s in prefix {
        for v in visits_of(s) {
            if v.pickup {
                stack.push((v.order, v.quantity));
            } else {
                let pos = stack.iter().rposition(|x| x.0 == v.order)?;
                stack.remove(pos);
            }
        }
    }
    let t0 = stops[f].departure.max(now);
    let base = |pickup| Visit {
        node: if pickup { order.pickup } else { order.delivery },
        order: order.id.0,
        pickup,
        quantity: order.quantity,
        ready: f64::from(order.created_at),
        due: f64::from(order.latest_delivery),
    };
    let r = tail.len();
    let mut best: Option<f64> = None;
    for perm in permutations(r + 2) {
        let pos_p = perm.iter().position(|&x| x == r).unwrap();
        let pos_d = perm.iter().position(|&x| x == r + 1).unwrap();
        let existing: Vec<usize> = perm.iter().copied().filter(|&x| x < r).collect();
        if pos_p > pos_d || existing.windows(2).any(|w| w[0] > w[1]) {
            continue;
        }
        let seq: Vec<Vec<Visit>> = perm
            .iter()
            .map(|&x| if x < r { tail[x].clone() } else { vec![base(x == r)] })
            .collect();
        if walk(inst, stops[f].node, t0, stack.clone(), &seq, route.depot).is_some() {
            // Whole-route length summed leg by leg from the first stop.
            let mut nodes: Vec<NodeId> = prefix.iter().map(|s| s.node).collect();
            nodes.extend(seq.iter().map(|v| v[0].node));
            nodes.push(route.depot);
            let total = nodes.windows(2).fold(0.0, |a, w| a + inst.network.dist(w[0], w[1]));
            if best.is_none_or(|b| total < b) {
                best = Some(total);
            }
        }
    }
    best
}

/// Shortest feasible single-vehicle plan for `orders` from `depot` at time 0,
/// over every sequence in which each pickup precedes its delivery.
fn best_plan(inst: &Instance, depot: NodeId, orders: &[&DeliveryOrder]) -> Option<f64> {
    let n = orders.len();
    let mut best: Option<f64> = None;
    let mut seq: Vec<(usize, bool)> = Vec::with_capacity(2 * n);
    fn rec(
        inst: &Instance,
        depot: NodeId,
        orders: &[&DeliveryOrder],
        seq: &mut Vec<(usize, bool)>,
        state: &mut Vec<u8>,
        best: &mut Option<f64>,
    ) {
        if seq.len() == 2 * orders.len() {
            let visits: Vec<Vec<Visit>> = seq
                .iter()
                .map(|&(i, pickup)| {
                    let o = orders[i];
                    vec![Visit {
                        node: if pickup { o.pickup } else { o.delivery },
                        order: i,
                        pickup,
                        quantity: o.quantity,
                        ready: f64::from(o.created_at),
                        due: f64::from(o.latest_delivery),
                    }]
                })
                .collect();
            if let Some(len) = walk(inst, depot, 0.0, Vec::new(), &visits, depot) {
                if best.is_none_or(|b| len < b) {
                    *best = Some(len);
                }
            }
            return;
        }
        for i in 0..orders.len() {
            if state[i] < 2 {
                let pickup = state[i] == 0;
                state[i] += 1;
                seq.push((i, pickup));
                rec(inst, depot, orders, seq, state, best);
                seq.pop();
                state[i] -= 1;
            }
        }
    }
    let mut state = vec![0u8; n];
    rec(inst, depot, orders, &mut seq, &mut state, &mut best);
    best
}

/// Optimal total cost of the static problem by trying every order → vehicle
/// assignment and every stop sequence per vehicle.
pub fn exhaustive_tc(inst: &Instance) -> Option<f64> {
    let n = inst.orders.len();
    let k = inst.fleet.vehicles.len();
    let mut memo: HashMap<(NodeId, u64), Option<f64>> = HashMap::new();
    let mut best: Option<f64> = None;
    let mut assign = vec![0usize; n];
    loop {
        let mut masks = vec![0u64; k];
        for (i, &v) in assign.iter().enumerate() {
            masks[v] |= 1 << i;
        }
        let mut lengths = Vec::new();
        let mut ok = true;
        for (v, &mask) in masks.iter().enumerate() {
            if mask == 0 {
                continue;
            }
            let depot = inst.fleet.vehicles[v].depot;
            let len = *memo.entry((depot, mask)).or_insert_with(|| {
                let subset: Vec<&DeliveryOrder> =
                    inst.orders.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, o)| o).collect();
                best_plan(inst, depot, &subset)
            });
            match len {
                Some(l) => lengths.push(l),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            lengths.sort_by(f64::total_cmp);
            let ttl = lengths.iter().fold(0.0, |a, b| a + b);
            let tc = inst.fleet.fixed_cost * lengths.len() as f64 + inst.fleet.unit_cost * ttl;
            if best.is_none_or(|b| tc < b) {
                best = Some(tc);
            }
        }
        // Next assignment in base-k counting.
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            assign[i] += 1;
            if assign[i] < k {
                break;
            }
            assign[i] = 0;
            i += 1;
        }
    }
}

/// Small generated instance for oracle comparisons.
pub fn tiny_instance(seed: u64, vehicles: usize, orders: usize) -> Instance {
    dpdp::instance::generate(&GeneratorConfig {
        seed,
        n_orders: orders,
        n_vehicles: vehicles,
        n_factories: 8,
        ..GeneratorConfig::default()
    })
}

/// Fuzzed (route with up to three orders, new order) pairs on one vehicle.
/// Routes are built by dispatching earlier orders through the planner.
pub fn planner_cases(count: usize) -> Vec<(Instance, Route, DeliveryOrder, f64)> {
    use dpdp::env::predicted_demand;
    use dpdp::routing::Planner;
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::with_capacity(count);
    let mut seed = 0;
    while out.len() < count {
        seed += 1;
        let prior = rng.gen_range(0..=3);
        let cfg = GeneratorConfig {
            seed,
            n_orders: prior + 1,
            n_vehicles: 1,
            n_depots: 1,
            n_factories: rng.gen_range(3..8),
            capacity: rng.gen_range(4..10),
            service_time: if rng.gen_bool(0.3) { 5.0 } else { 0.0 },
            min_slack: rng.gen_range(20..60),
            max_slack: rng.gen_range(60..240),
            ..GeneratorConfig::default()
        };
        let inst = dpdp::instance::generate(&cfg);
        let demand = predicted_demand(&inst);
        let planner = Planner::new(&inst.network, &inst.fleet, &demand, inst.horizon);
        let vehicle = &inst.fleet.vehicles[0];
        let mut route = Route::new(vehicle.id, vehicle.depot);
        for o in &inst.orders[..prior] {
            let now = f64::from(o.created_at);
            route.advance(now);
            if let Some(r) = planner.plan_insertion(&route, o, now).best_route {
                route = r;
            }
        }
        let new = inst.orders[prior].clone();
        let now = f64::from(new.created_at);
        route.advance(now);
        out.push((inst, route, new, now));
    }
    out
}
