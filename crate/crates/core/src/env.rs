//! Episode simulator and the per-order decision process.
//!
//! Orders are processed one at a time in creation order and assigned
//! immediately. For every order the simulator asks the insertion planner
//! about each vehicle, hands the resulting joint state to a dispatch policy
//! and commits the chosen vehicle's planned route.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{DeliveryOrder, Instance, NodeId, OrderId, VehicleId};
use crate::routing::{Action, Planner, PlannerResult, Route, Stop};
use crate::st_demand::{build_std_matrix, predict_std, StdMatrix};

/// Score assigned to vehicles that cannot take the order.
pub const INFEASIBLE_Q: f64 = -1e9;

/// One vehicle's row of the joint state: `(d_cur, d_new, score, used, interval)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub features: [f64; 5],
    pub feasible: bool,
}

impl VehicleState {
    pub fn from_plan(plan: &PlannerResult) -> Self {
        Self { features: plan.features(), feasible: plan.feasible }
    }

    pub fn d_cur(&self) -> f64 {
        self.features[0]
    }

    pub fn d_new(&self) -> f64 {
        self.features[1]
    }

    pub fn st_score(&self) -> f64 {
        self.features[2]
    }

    pub fn used_flag(&self) -> f64 {
        self.features[3]
    }

    pub fn interval(&self) -> f64 {
        self.features[4]
    }

    pub fn delta_d(&self) -> f64 {
        self.d_new() - self.d_cur()
    }
}

/// State of the whole fleet with respect to one order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub order: OrderId,
    pub interval: usize,
    pub rows: Vec<VehicleState>,
    pub positions: Vec<(f64, f64)>,
    /// Orders accepted so far by each vehicle.
    pub accepted: Vec<usize>,
}

impl JointState {
    pub fn fleet_size(&self) -> usize {
        self.rows.len()
    }

    pub fn feasible(&self) -> impl Iterator<Item = VehicleId> + '_ {
        self.rows.iter().enumerate().filter(|(_, r)| r.feasible).map(|(k, _)| VehicleId(k))
    }

    pub fn any_feasible(&self) -> bool {
        self.rows.iter().any(|r| r.feasible)
    }

    pub fn is_feasible(&self, v: VehicleId) -> bool {
        self.rows.get(v.0).is_some_and(|r| r.feasible)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispatchError {
    #[error("no feasible vehicle for order {0}")]
    NoFeasibleVehicle(OrderId),
    #[error("{0}")]
    Policy(String),
}

/// Chooses the vehicle that serves an order.
pub trait DispatchPolicy {
    fn name(&self) -> String;

    /// Must return a feasible row whenever the state has one.
    fn dispatch(&mut self, state: &JointState) -> Result<VehicleId, DispatchError>;
}

/// One recorded decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: JointState,
    pub action: VehicleId,
    /// Last order of its interval; no bootstrapping past it.
    pub interval_end: bool,
    pub reward: f64,
    pub next_state: Option<JointState>,
}

/// Stop plan without timing, used to snapshot frozen prefixes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedStop {
    pub node: NodeId,
    pub actions: Vec<Action>,
}

impl From<&Stop> for PlannedStop {
    fn from(s: &Stop) -> Self {
        Self { node: s.node, actions: s.actions.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderLog {
    pub order: OrderId,
    pub vehicle: VehicleId,
    /// Assignment time, minutes.
    pub time: f64,
    pub interval: usize,
    pub delta_d: f64,
    pub fixed_charge: bool,
    pub instant_reward: f64,
    pub reward: f64,
    /// Stops the assignment was not allowed to change.
    pub frozen_prefix: Vec<PlannedStop>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub nuv: usize,
    pub ttl: f64,
    pub tc: f64,
    pub log: Vec<OrderLog>,
    pub routes: Vec<Route>,
}

impl EpisodeReport {
    /// Per-order lines `order_id vehicle_id delta_d reward`.
    pub fn trace(&self) -> String {
        let mut out = String::new();
        for l in &self.log {
            let _ = writeln!(out, "{} {} {:.6} {:.6}", l.order, l.vehicle, l.delta_d, l.reward);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}

/// Sum of route lengths in ascending order, so the total does not depend on
/// which vehicle drove which route.
pub fn total_length(lengths: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = lengths.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Reward scale.
    pub alpha: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { alpha: 0.01 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("order {0} cannot be served by any vehicle")]
    Unserviceable(OrderId),
    #[error("policy chose vehicle {vehicle} which cannot take order {order}")]
    InfeasibleAction { order: OrderId, vehicle: VehicleId },
    #[error("policy failed on order {order}")]
    Dispatch { order: OrderId, source: DispatchError },
    #[error("long-term reward needs at least one served order")]
    NoOrders,
}

/// Reward for assigning an order: the fixed cost is charged once, when the
/// vehicle is activated by this assignment (`used == false`).
pub fn instant_reward(used: bool, delta_d: f64, fixed_cost: f64, unit_cost: f64, alpha: f64) -> f64 {
    let fixed = if used { 0.0 } else { fixed_cost };
    -alpha * (fixed + unit_cost * delta_d)
}

/// Mean instant reward over the episode and the per-order final rewards `r + mean`.
pub fn long_term_reward(instant: &[f64]) -> Result<(f64, Vec<f64>), EnvError> {
    if instant.is_empty() {
        return Err(EnvError::NoOrders);
    }
    let mean = instant.iter().sum::<f64>() / instant.len() as f64;
    Ok((mean, instant.iter().map(|r| r + mean).collect()))
}

/// Averaged demand of the instance's history, or an all-zero grid without history.
pub fn predicted_demand(instance: &Instance) -> StdMatrix<f64> {
    let rows = instance.network.factory_count();
    let cols = instance.horizon as usize;
    match &instance.history {
        Some(days) if !days.is_empty() => {
            let grids: Vec<StdMatrix<f64>> = days
                .iter()
                .map(|d| build_std_matrix(d, &instance.network, rows, cols).expect("validated history"))
                .collect();
            predict_std(&grids).expect("non-empty history")
        }
        _ => StdMatrix::zeros(rows, cols),
    }
}

/// Mutable per-episode fleet state.
#[derive(Clone, Debug)]
pub struct FleetState {
    pub routes: Vec<Route>,
}

impl FleetState {
    pub fn new(instance: &Instance) -> Self {
        let routes = instance.fleet.vehicles.iter().map(|v| Route::new(v.id, v.depot)).collect();
        Self { routes }
    }
}

/// Plans `order` for every vehicle at its creation time and assembles the joint state.
pub fn build_joint_state(
    instance: &Instance,
    fleet: &mut FleetState,
    order: &DeliveryOrder,
    planner: &Planner<'_>,
) -> (JointState, Vec<PlannerResult>) {
    let now = f64::from(order.created_at);
    let mut rows = Vec::with_capacity(fleet.routes.len());
    let mut positions = Vec::with_capacity(fleet.routes.len());
    let mut accepted = Vec::with_capacity(fleet.routes.len());
    let mut plans = Vec::with_capacity(fleet.routes.len());
    for route in &mut fleet.routes {
        route.advance(now);
        let plan = planner.plan_insertion(route, order, now);
        rows.push(VehicleState::from_plan(&plan));
        positions.push(route.position(&instance.network, now));
        accepted.push(route.order_count());
        plans.push(plan);
    }
    let state = JointState { order: order.id, interval: instance.interval_of(now), rows, positions, accepted };
    (state, plans)
}

/// Outcome of one simulated day.
#[derive(Clone, Debug)]
pub struct Episode {
    pub report: EpisodeReport,
    pub transitions: Vec<Transition>,
    /// Wall-clock seconds spent per dispatch decision (planning included).
    pub decision_seconds: Vec<f64>,
}

/// Runs one day: every order in creation order, assigned immediately.
pub fn run_episode(
    instance: &Instance,
    policy: &mut dyn DispatchPolicy,
    cfg: &EnvConfig,
    record: bool,
) -> Result<Episode, EnvError> {
    let demand = predicted_demand(instance);
    let planner = Planner::new(&instance.network, &instance.fleet, &demand, instance.horizon);
    let mut fleet = FleetState::new(instance);
    let fleet_cfg = &instance.fleet;
    let mut log = Vec::with_capacity(instance.orders.len());
    let mut states = Vec::new();
    let mut decision_seconds = Vec::with_capacity(instance.orders.len());

    for order in &instance.orders {
        let started = Instant::now();
        let (state, mut plans) = build_joint_state(instance, &mut fleet, order, &planner);
        if !state.any_feasible() {
            return Err(EnvError::Unserviceable(order.id));
        }
        let vehicle =
            policy.dispatch(&state).map_err(|source| EnvError::Dispatch { order: order.id, source })?;
        if !state.is_feasible(vehicle) {
            return Err(EnvError::InfeasibleAction { order: order.id, vehicle });
        }
        decision_seconds.push(started.elapsed().as_secs_f64());

        let plan = &mut plans[vehicle.0];
        let route = &mut fleet.routes[vehicle.0];
        let used = route.is_used();
        let delta_d = plan.new_len - plan.cur_len;
        let frozen_prefix = route.stops[..=route.frozen_until].iter().map(PlannedStop::from).collect();
        *route = plan.best_route.take().expect("feasible plan has a route");
        log.push(OrderLog {
            order: order.id,
            vehicle,
            time: f64::from(order.created_at),
            interval: state.interval,
            delta_d,
            fixed_charge: !used,
            instant_reward: instant_reward(used, delta_d, fleet_cfg.fixed_cost, fleet_cfg.unit_cost, cfg.alpha),
            reward: 0.0,
            frozen_prefix,
        });
        if record {
            states.push(state);
        }
    }

    let transitions = if log.is_empty() {
        Vec::new()
    } else {
        let instant: Vec<f64> = log.iter().map(|l| l.instant_reward).collect();
        let (_, finals) = long_term_reward(&instant)?;
        for (l, r) in log.iter_mut().zip(&finals) {
            l.reward = *r;
        }
        if record {
            let n = log.len();
            let mut out = Vec::with_capacity(n);
            let mut next: Option<JointState> = None;
            for i in (0..n).rev() {
                let interval_end = i + 1 == n || log[i + 1].interval != log[i].interval;
                let state = states.pop().expect("one state per order");
                out.push(Transition {
                    action: log[i].vehicle,
                    interval_end,
                    reward: log[i].reward,
                    next_state: if interval_end { None } else { next.take() },
                    state: state.clone(),
                });
                next = Some(state);
            }
            out.reverse();
            out
        } else {
            Vec::new()
        }
    };

    let routes = fleet.routes;
    let nuv = routes.iter().filter(|r| r.is_used()).count();
    let ttl = total_length(routes.iter().map(|r| r.length));
    let tc = fleet_cfg.total_cost(nuv, ttl);
    Ok(Episode { report: EpisodeReport { nuv, ttl, tc, log, routes }, transitions, decision_seconds })
}
