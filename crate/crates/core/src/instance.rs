//! Problem data model, the JSON instance format and a seeded generator.
//!
//! An [`Instance`] bundles the road network, the order stream of one
//! simulated day, the fleet configuration and optionally the order lists of
//! past days used for demand prediction. Times are integer minutes from
//! midnight, distances are kilometres and cargo is counted in integer units.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minutes in one simulated day.
pub const DAY_MINUTES: u32 = 1440;

/// Default number of equal intervals a day is split into.
pub const DEFAULT_HORIZON: u32 = 144;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OrderId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for OrderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Depot,
    Factory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub role: NodeRole,
    pub x: f64,
    pub y: f64,
}

/// Complete directed graph over depots and factories.
#[derive(Clone, Debug, PartialEq)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    dist: Vec<Vec<f64>>,
    speed: f64,
    service_time: f64,
    factory_index: Vec<Option<usize>>,
    factory_nodes: Vec<NodeId>,
}

impl RoadNetwork {
    /// Builds a network, deriving Euclidean distances when `dist` is `None`.
    pub fn new(
        nodes: Vec<Node>,
        dist: Option<Vec<Vec<f64>>>,
        speed: f64,
        service_time: f64,
    ) -> Result<Self, InstanceError> {
        if nodes.is_empty() {
            return Err(invalid("network.nodes", "at least one node is required"));
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.id.0 != i {
                return Err(invalid(
                    format!("network.nodes[{i}].id"),
                    "node ids must equal their position in the list",
                ));
            }
            if !node.x.is_finite() || !node.y.is_finite() {
                return Err(invalid(format!("network.nodes[{i}]"), "coordinates must be finite"));
            }
        }
        let dist = match dist {
            Some(dist) => dist,
            None => euclidean_matrix(&nodes),
        };
        if dist.len() != nodes.len() {
            return Err(invalid("network.dist", "matrix must have one row per node"));
        }
        for (i, row) in dist.iter().enumerate() {
            if row.len() != nodes.len() {
                return Err(invalid(
                    format!("network.dist[{i}]"),
                    "matrix must have one column per node",
                ));
            }
            for (j, &d) in row.iter().enumerate() {
                if !d.is_finite() || d < 0.0 {
                    return Err(invalid(
                        format!("network.dist[{i}][{j}]"),
                        "distances must be finite and non-negative",
                    ));
                }
                if i == j && d != 0.0 {
                    return Err(invalid(format!("network.dist[{i}][{i}]"), "diagonal must be zero"));
                }
            }
        }
        if !(speed.is_finite() && speed > 0.0) {
            return Err(invalid("network.speed", "speed must be positive"));
        }
        if !(service_time.is_finite() && service_time >= 0.0) {
            return Err(invalid("network.service_time", "service_time must be non-negative"));
        }
        let mut factory_index = vec![None; nodes.len()];
        let mut factory_nodes = Vec::new();
        for node in &nodes {
            if node.role == NodeRole::Factory {
                factory_index[node.id.0] = Some(factory_nodes.len());
                factory_nodes.push(node.id);
            }
        }
        Ok(Self { nodes, dist, speed, service_time, factory_index, factory_nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn dist(&self, from: NodeId, to: NodeId) -> f64 {
        self.dist[from.0][to.0]
    }

    pub fn dist_matrix(&self) -> &[Vec<f64>] {
        &self.dist
    }

    #[inline]
    pub fn travel_time(&self, from: NodeId, to: NodeId) -> f64 {
        self.dist(from, to) / self.speed
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn service_time(&self) -> f64 {
        self.service_time
    }

    pub fn position(&self, id: NodeId) -> (f64, f64) {
        let n = &self.nodes[id.0];
        (n.x, n.y)
    }

    pub fn is_depot(&self, id: NodeId) -> bool {
        self.nodes[id.0].role == NodeRole::Depot
    }

    /// Row of `id` in the demand grid, `None` for depots.
    pub fn factory_index(&self, id: NodeId) -> Option<usize> {
        self.factory_index.get(id.0).copied().flatten()
    }

    pub fn factory_count(&self) -> usize {
        self.factory_nodes.len()
    }

    pub fn factory_nodes(&self) -> &[NodeId] {
        &self.factory_nodes
    }

    /// Whether the distance matrix satisfies the triangle inequality up to `tol`.
    pub fn is_metric(&self, tol: f64) -> bool {
        let n = self.nodes.len();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if self.dist[i][j] > self.dist[i][k] + self.dist[k][j] + tol {
                        return false;
                    }
                }
            }
        }
        true
    }
}

fn euclidean_matrix(nodes: &[Node]) -> Vec<Vec<f64>> {
    nodes
        .iter()
        .map(|a| {
            nodes
                .iter()
                .map(|b| if a.id == b.id { 0.0 } else { (a.x - b.x).hypot(a.y - b.y) })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryOrder {
    pub id: OrderId,
    pub pickup: NodeId,
    pub delivery: NodeId,
    pub quantity: u32,
    pub created_at: u32,
    pub latest_delivery: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: VehicleId,
    pub depot: NodeId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub vehicles: Vec<Vehicle>,
    pub capacity: u32,
    pub fixed_cost: f64,
    pub unit_cost: f64,
}

impl FleetConfig {
    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    /// Total cost of a plan: fixed cost per used vehicle plus distance cost.
    pub fn total_cost(&self, used_vehicles: usize, total_length: f64) -> f64 {
        self.fixed_cost * used_vehicles as f64 + self.unit_cost * total_length
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub network: RoadNetwork,
    pub orders: Vec<DeliveryOrder>,
    pub fleet: FleetConfig,
    pub horizon: u32,
    pub history: Option<Vec<Vec<DeliveryOrder>>>,
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("cannot read or write {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation")]
    Schema(#[from] serde_json::Error),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> InstanceError {
    InstanceError::Invalid { field: field.into(), message: message.into() }
}

impl Instance {
    /// Validates every invariant and sorts the orders by creation time.
    pub fn new(
        network: RoadNetwork,
        mut orders: Vec<DeliveryOrder>,
        fleet: FleetConfig,
        horizon: u32,
        history: Option<Vec<Vec<DeliveryOrder>>>,
    ) -> Result<Self, InstanceError> {
        if horizon == 0 || !DAY_MINUTES.is_multiple_of(horizon) {
            return Err(invalid("horizon", "horizon must divide 1440"));
        }
        validate_orders(&network, &orders, "orders")?;
        let mut seen = std::collections::HashSet::new();
        for (i, o) in orders.iter().enumerate() {
            if !seen.insert(o.id) {
                return Err(invalid(format!("orders[{i}].id"), "order ids must be unique"));
            }
        }
        orders.sort_by_key(|o| (o.created_at, o.id));
        if let Some(days) = &history {
            for (d, day) in days.iter().enumerate() {
                validate_orders(&network, day, &format!("history[{d}]"))?;
            }
        }
        if fleet.vehicles.is_empty() {
            return Err(invalid("fleet.vehicles", "at least one vehicle is required"));
        }
        for (i, v) in fleet.vehicles.iter().enumerate() {
            if v.id.0 != i {
                return Err(invalid(
                    format!("fleet.vehicles[{i}].id"),
                    "vehicle ids must equal their position in the list",
                ));
            }
            if v.depot.0 >= network.len() || !network.is_depot(v.depot) {
                return Err(invalid(format!("fleet.vehicles[{i}].depot"), "start depot must be a depot node"));
            }
        }
        if fleet.capacity == 0 {
            return Err(invalid("fleet.capacity", "capacity must be positive"));
        }
        if !(fleet.fixed_cost.is_finite() && fleet.fixed_cost >= 0.0) {
            return Err(invalid("fleet.fixed_cost", "fixed_cost must be non-negative"));
        }
        if !(fleet.unit_cost.is_finite() && fleet.unit_cost >= 0.0) {
            return Err(invalid("fleet.unit_cost", "unit_cost must be non-negative"));
        }
        Ok(Self { network, orders, fleet, horizon, history })
    }

    /// Minutes per demand interval.
    pub fn interval_minutes(&self) -> u32 {
        DAY_MINUTES / self.horizon
    }

    /// Interval index of a time, clamped into `[0, horizon)`.
    pub fn interval_of(&self, minutes: f64) -> usize {
        interval_of(minutes, self.horizon)
    }

    pub fn order(&self, id: OrderId) -> Option<&DeliveryOrder> {
        self.orders.iter().find(|o| o.id == id)
    }

    pub fn from_json(text: &str) -> Result<Self, InstanceError> {
        let file: InstanceFile = serde_json::from_str(text)?;
        file.into_instance()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&InstanceFile::from_instance(self)).expect("instance serialization")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), InstanceError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json())
            .map_err(|source| InstanceError::Io { path: path.to_path_buf(), source })
    }
}

/// Interval index of `minutes` for a day split into `horizon` intervals.
/// Intervals are left-closed and right-open; times past the day clamp to the last one.
pub fn interval_of(minutes: f64, horizon: u32) -> usize {
    let width = f64::from(DAY_MINUTES / horizon);
    let idx = (minutes.max(0.0) / width).floor() as usize;
    idx.min(horizon as usize - 1)
}

fn validate_orders(network: &RoadNetwork, orders: &[DeliveryOrder], field: &str) -> Result<(), InstanceError> {
    for (i, o) in orders.iter().enumerate() {
        let at = |name: &str| format!("{field}[{i}].{name}");
        for (name, node) in [("pickup", o.pickup), ("delivery", o.delivery)] {
            if node.0 >= network.len() {
                return Err(invalid(at(name), "unknown node"));
            }
            if network.factory_index(node).is_none() {
                return Err(invalid(at(name), "must be a factory node"));
            }
        }
        if o.pickup == o.delivery {
            return Err(invalid(at("delivery"), "delivery must differ from pickup"));
        }
        if o.quantity == 0 {
            return Err(invalid(at("quantity"), "quantity must be positive"));
        }
        if o.created_at >= o.latest_delivery {
            return Err(invalid(at("latest_delivery"), "latest_delivery must exceed created_at"));
        }
        if o.latest_delivery > DAY_MINUTES {
            return Err(invalid(at("latest_delivery"), "latest_delivery must not exceed 1440"));
        }
    }
    Ok(())
}

/// Loads and validates an instance file.
pub fn load_instance(path: impl AsRef<Path>) -> Result<Instance, InstanceError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| InstanceError::Io { path: path.to_path_buf(), source })?;
    Instance::from_json(&text)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    nodes: Vec<Node>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dist: Option<Vec<Vec<f64>>>,
    speed: f64,
    #[serde(default)]
    service_time: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    network: NetworkFile,
    orders: Vec<DeliveryOrder>,
    fleet: FleetConfig,
    #[serde(default = "default_horizon")]
    horizon: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    history: Option<Vec<Vec<DeliveryOrder>>>,
}

fn default_horizon() -> u32 {
    DEFAULT_HORIZON
}

impl InstanceFile {
    fn into_instance(self) -> Result<Instance, InstanceError> {
        let network =
            RoadNetwork::new(self.network.nodes, self.network.dist, self.network.speed, self.network.service_time)?;
        Instance::new(network, self.orders, self.fleet, self.horizon, self.history)
    }

    fn from_instance(inst: &Instance) -> Self {
        Self {
            network: NetworkFile {
                nodes: inst.network.nodes.clone(),
                dist: Some(inst.network.dist.clone()),
                speed: inst.network.speed,
                service_time: inst.network.service_time,
            },
            orders: inst.orders.clone(),
            fleet: inst.fleet.clone(),
            horizon: inst.horizon,
            history: inst.history.clone(),
        }
    }
}

/// Parameters of the synthetic instance generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_factories: usize,
    pub n_orders: usize,
    pub n_vehicles: usize,
    pub n_depots: usize,
    pub horizon: u32,
    /// Side of the square service area in km.
    pub area_km: f64,
    pub speed: f64,
    pub service_time: f64,
    pub capacity: u32,
    pub max_quantity: u32,
    pub fixed_cost: f64,
    pub unit_cost: f64,
    /// Extra relative weight of hot-spot factories and peak hours; 0 is uniform.
    pub hotspot_skew: f64,
    /// Slack added on top of the direct service time, in minutes.
    pub min_slack: u32,
    pub max_slack: u32,
    pub history_days: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_factories: 12,
            n_orders: 30,
            n_vehicles: 10,
            n_depots: 2,
            horizon: DEFAULT_HORIZON,
            area_km: 30.0,
            speed: 0.6,
            service_time: 0.0,
            capacity: 10,
            max_quantity: 5,
            fixed_cost: 300.0,
            unit_cost: 2.0,
            hotspot_skew: 3.0,
            min_slack: 120,
            max_slack: 360,
            history_days: 7,
        }
    }
}

/// Generates an instance with default settings for everything but the counts.
pub fn generate_instance(seed: u64, n_factories: usize, n_orders: usize, n_vehicles: usize, horizon: u32) -> Instance {
    generate(&GeneratorConfig { seed, n_factories, n_orders, n_vehicles, horizon, ..GeneratorConfig::default() })
}

/// Deterministic synthetic instance; the same config always yields the same instance.
///
/// Factories and depots are scattered uniformly over the service area.
/// A quarter of the factories and two daily peaks receive `1 + hotspot_skew`
/// times the sampling weight of the rest; history days reuse the same hot spots.
pub fn generate(cfg: &GeneratorConfig) -> Instance {
    assert!(cfg.n_factories >= 1 && cfg.n_vehicles >= 1, "counts must be positive");
    assert!(cfg.n_factories >= 2, "orders need two distinct factories");
    assert!(cfg.horizon >= 1 && DAY_MINUTES.is_multiple_of(cfg.horizon), "horizon must divide 1440");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_depots = cfg.n_depots.clamp(1, cfg.n_vehicles);
    let round = |v: f64| (v * 100.0).round() / 100.0;

    let mut nodes = Vec::with_capacity(n_depots + cfg.n_factories);
    for i in 0..n_depots + cfg.n_factories {
        let role = if i < n_depots { NodeRole::Depot } else { NodeRole::Factory };
        let x = round(rng.gen::<f64>() * cfg.area_km);
        let y = round(rng.gen::<f64>() * cfg.area_km);
        nodes.push(Node { id: NodeId(i), role, x, y });
    }
    let network = RoadNetwork::new(nodes, None, cfg.speed, cfg.service_time).expect("generated network");

    let mut hot: Vec<usize> = (0..cfg.n_factories).collect();
    hot.shuffle(&mut rng);
    hot.truncate(cfg.n_factories.div_ceil(4));
    let factory_weights: Vec<f64> = (0..cfg.n_factories)
        .map(|f| if hot.contains(&f) { 1.0 + cfg.hotspot_skew } else { 1.0 })
        .collect();

    let depots: Vec<NodeId> = (0..n_depots).map(NodeId).collect();
    let vehicles =
        (0..cfg.n_vehicles).map(|k| Vehicle { id: VehicleId(k), depot: depots[k % n_depots] }).collect();
    let fleet = FleetConfig {
        vehicles,
        capacity: cfg.capacity,
        fixed_cost: cfg.fixed_cost,
        unit_cost: cfg.unit_cost,
    };

    let sampler = OrderSampler { cfg, network: &network, depots: &depots, factory_weights: &factory_weights };
    let history = (cfg.history_days > 0)
        .then(|| (0..cfg.history_days).map(|_| sampler.day(&mut rng)).collect::<Vec<_>>());
    let orders = sampler.day(&mut rng);

    Instance::new(network, orders, fleet, cfg.horizon, history).expect("generated instance")
}

struct OrderSampler<'a> {
    cfg: &'a GeneratorConfig,
    network: &'a RoadNetwork,
    depots: &'a [NodeId],
    factory_weights: &'a [f64],
}

impl OrderSampler<'_> {
    fn day(&self, rng: &mut ChaCha8Rng) -> Vec<DeliveryOrder> {
        let cfg = self.cfg;
        let factories = self.network.factory_nodes();
        let mut orders = Vec::with_capacity(cfg.n_orders);
        for _ in 0..cfg.n_orders {
            let p = weighted_index(rng, self.factory_weights);
            let mut d = rng.gen_range(0..factories.len() - 1);
            if d >= p {
                d += 1;
            }
            let (pickup, delivery) = (factories[p], factories[d]);
            let quantity = rng.gen_range(1..=cfg.max_quantity.min(cfg.capacity).max(1));
            let reach = self
                .depots
                .iter()
                .map(|&w| self.network.travel_time(w, pickup))
                .fold(0.0, f64::max);
            let direct = reach + self.network.travel_time(pickup, delivery) + 2.0 * cfg.service_time;
            let slack = rng.gen_range(cfg.min_slack..=cfg.max_slack.max(cfg.min_slack));
            let window = (direct.ceil() as u32 + slack).clamp(1, DAY_MINUTES - 1);
            let created_at = self.sample_minute(rng, DAY_MINUTES - window);
            orders.push(DeliveryOrder {
                id: OrderId(0),
                pickup,
                delivery,
                quantity,
                created_at,
                latest_delivery: created_at + window,
            });
        }
        orders.sort_by_key(|o| o.created_at);
        for (i, o) in orders.iter_mut().enumerate() {
            o.id = OrderId(i);
        }
        orders
    }

    /// Minute in `[0, limit)` drawn with the peak-hour weighting.
    fn sample_minute(&self, rng: &mut ChaCha8Rng, limit: u32) -> u32 {
        let peak = |m: u32| (480..660).contains(&m) || (840..1020).contains(&m);
        let hours: Vec<f64> = (0..limit.div_ceil(60))
            .map(|h| if peak(h * 60) { 1.0 + self.cfg.hotspot_skew } else { 1.0 })
            .collect();
        let hour = weighted_index(rng, &hours) as u32;
        let lo = hour * 60;
        let hi = (lo + 60).min(limit);
        rng.gen_range(lo..hi)
    }
}

fn weighted_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if r < *w {
            return i;
        }
        r -= w;
    }
    weights.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
      "network": {
        "nodes": [
          {"id": 0, "role": "depot", "x": 0.0, "y": 0.0},
          {"id": 1, "role": "factory", "x": 3.0, "y": 4.0},
          {"id": 2, "role": "factory", "x": 6.0, "y": 8.0}
        ],
        "speed": 1.0
      },
      "orders": [
        {"id": 0, "pickup": 1, "delivery": 2, "quantity": 2, "created_at": 10, "latest_delivery": 200}
      ],
      "fleet": {"vehicles": [{"id": 0, "depot": 0}], "capacity": 10, "fixed_cost": 300.0, "unit_cost": 2.0}
    }"#;

    #[test]
    fn minimal_file_loads() {
        let inst = Instance::from_json(MINIMAL).unwrap();
        assert_eq!(inst.orders.len(), 1);
        assert_eq!(inst.horizon, DEFAULT_HORIZON);
        assert_eq!(inst.network.service_time(), 0.0);
    }

    #[test]
    fn missing_dist_is_derived_from_coordinates() {
        let inst = Instance::from_json(MINIMAL).unwrap();
        let net = &inst.network;
        assert_eq!(net.dist(NodeId(0), NodeId(1)), 5.0);
        assert_eq!(net.dist(NodeId(0), NodeId(2)), 10.0);
        for i in 0..3 {
            assert_eq!(net.dist(NodeId(i), NodeId(i)), 0.0);
        }
    }

    #[test]
    fn rejects_inverted_window() {
        let text = MINIMAL.replace("\"created_at\": 10", "\"created_at\": 200");
        let err = Instance::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("latest_delivery must exceed created_at"), "{err}");
        assert!(err.to_string().contains("orders[0].latest_delivery"), "{err}");
    }

    #[test]
    fn rejects_bad_fields() {
        let cases = [
            (MINIMAL.replace("\"speed\": 1.0", "\"speed\": 0.0"), "network.speed"),
            (MINIMAL.replace("\"capacity\": 10", "\"capacity\": 0"), "fleet.capacity"),
            (MINIMAL.replace("\"delivery\": 2", "\"delivery\": 1"), "orders[0].delivery"),
            (MINIMAL.replace("\"pickup\": 1", "\"pickup\": 0"), "orders[0].pickup"),
            (MINIMAL.replace("\"depot\": 0", "\"depot\": 1"), "fleet.vehicles[0].depot"),
            (MINIMAL.replace("\"quantity\": 2", "\"quantity\": 0"), "orders[0].quantity"),
        ];
        for (text, field) in cases {
            let err = Instance::from_json(&text).unwrap_err();
            assert!(err.to_string().starts_with(field), "{field}: {err}");
        }
        let with_horizon = MINIMAL.replacen('{', "{\"horizon\": 7,", 1);
        assert!(Instance::from_json(&with_horizon).unwrap_err().to_string().starts_with("horizon"));
        assert!(matches!(Instance::from_json("{\"network\": 3}"), Err(InstanceError::Schema(_))));
    }

    #[test]
    fn explicit_asymmetric_matrix_is_kept() {
        let text = MINIMAL.replace(
            "\"speed\": 1.0",
            "\"dist\": [[0, 1, 2], [9, 0, 3], [4, 5, 0]], \"speed\": 1.0",
        );
        let inst = Instance::from_json(&text).unwrap();
        assert_eq!(inst.network.dist(NodeId(1), NodeId(0)), 9.0);
        assert_eq!(inst.network.dist(NodeId(0), NodeId(1)), 1.0);
        let bad = MINIMAL.replace("\"speed\": 1.0", "\"dist\": [[1, 1, 2], [9, 0, 3], [4, 5, 0]], \"speed\": 1.0");
        assert!(Instance::from_json(&bad).unwrap_err().to_string().starts_with("network.dist[0][0]"));
    }

    #[test]
    fn generator_is_deterministic() {
        let a = generate_instance(7, 8, 20, 4, 144).to_json();
        let b = generate_instance(7, 8, 20, 4, 144).to_json();
        assert_eq!(a, b);
        assert_ne!(a, generate_instance(8, 8, 20, 4, 144).to_json());
    }

    #[test]
    fn table_scale_instance() {
        let inst = generate_instance(1, 12, 6, 5, 144);
        assert_eq!(inst.orders.len(), 6);
        assert_eq!(inst.fleet.len(), 5);
    }

    #[test]
    fn std_grid_dimensions() {
        let inst = generate_instance(3, 27, 50, 5, 144);
        assert_eq!(inst.network.factory_count(), 27);
        assert_eq!(inst.horizon, 144);
        assert_eq!(inst.history.as_ref().map(Vec::len), Some(7));
    }

    #[test]
    fn derived_distances_are_metric() {
        let inst = generate_instance(11, 15, 10, 3, 144);
        assert!(inst.network.is_metric(1e-9));
    }

    #[test]
    fn interval_boundaries() {
        assert_eq!(interval_of(0.0, 144), 0);
        assert_eq!(interval_of(9.999, 144), 0);
        assert_eq!(interval_of(10.0, 144), 1);
        assert_eq!(interval_of(5000.0, 144), 143);
    }
}
