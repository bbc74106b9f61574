//! Spatial-temporal demand grids and the route score built on them.
//!
//! A [`StdMatrix`] holds, for every factory and day interval, the total
//! cargo created there. Averaging past days gives the predicted grid. Along a
//! planned route we compare the vehicle's residual capacity at each stop with
//! the predicted demand at the same (factory, interval) coordinate; the
//! Jensen-Shannon divergence between the two profiles is the route's score.
//! Low scores mean capacity is available where and when demand is expected.

use std::fmt::Write as _;

use thiserror::Error;

use crate::instance::{interval_of, DeliveryOrder, RoadNetwork, DAY_MINUTES};
use crate::routing::Route;
use crate::scalar::Scalar;

/// Additive smoothing applied after normalisation.
pub const SMOOTHING: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum StDemandError {
    #[error("order {order}: pickup factory {factory:?} outside grid with {rows} rows")]
    FactoryOutOfRange { order: usize, factory: Option<usize>, rows: usize },
    #[error("order {order}: created_at {minute} outside the day")]
    TimeOutOfRange { order: usize, minute: u32 },
    #[error("prediction needs at least one historical matrix")]
    EmptyHistory,
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("vector length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("vectors disagree on coordinate at entry {0}")]
    Misaligned(usize),
    #[error("score needs non-empty vectors")]
    Empty,
}

/// Factory × interval grid of cargo units.
#[derive(Clone, Debug, PartialEq)]
pub struct StdMatrix<F> {
    rows: usize,
    cols: usize,
    values: Vec<F>,
}

impl<F: Scalar> StdMatrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![F::zero(); rows * cols] }
    }

    /// Factory count.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Interval count.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, factory: usize, interval: usize) -> F {
        self.values[factory * self.cols + interval]
    }

    pub fn set(&mut self, factory: usize, interval: usize, value: F) {
        self.values[factory * self.cols + interval] = value;
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn total(&self) -> F {
        self.values.iter().copied().sum()
    }

    /// Rows are factories, columns are intervals; no header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                if c > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{}", self.get(r, c));
            }
            out.push('\n');
        }
        out
    }
}

/// Sums order quantities per (pickup factory, creation interval).
pub fn build_std_matrix<F: Scalar>(
    orders: &[DeliveryOrder],
    network: &RoadNetwork,
    factories: usize,
    intervals: usize,
) -> Result<StdMatrix<F>, StDemandError> {
    let mut grid = StdMatrix::zeros(factories, intervals);
    let width = DAY_MINUTES as usize / intervals.max(1);
    for (i, o) in orders.iter().enumerate() {
        let factory = network.factory_index(o.pickup);
        let row = match factory {
            Some(f) if f < factories => f,
            _ => return Err(StDemandError::FactoryOutOfRange { order: i, factory, rows: factories }),
        };
        let col = o.created_at as usize / width;
        if col >= intervals {
            return Err(StDemandError::TimeOutOfRange { order: i, minute: o.created_at });
        }
        let v = grid.get(row, col) + F::lit(f64::from(o.quantity));
        grid.set(row, col, v);
    }
    Ok(grid)
}

/// Element-wise mean of past days' grids.
pub fn predict_std<F: Scalar>(history: &[StdMatrix<F>]) -> Result<StdMatrix<F>, StDemandError> {
    let first = history.first().ok_or(StDemandError::EmptyHistory)?;
    let dims = (first.rows, first.cols);
    let mut sum = StdMatrix::zeros(dims.0, dims.1);
    for m in history {
        if (m.rows, m.cols) != dims {
            return Err(StDemandError::DimensionMismatch { expected: dims, found: (m.rows, m.cols) });
        }
        for (acc, v) in sum.values.iter_mut().zip(&m.values) {
            *acc += *v;
        }
    }
    let k = F::count(history.len());
    for v in &mut sum.values {
        *v /= k;
    }
    Ok(sum)
}

/// Position of a route stop in the demand grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StCoord {
    pub factory: usize,
    pub interval: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VectorKind {
    Capacity,
    Demand,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StVector<F> {
    pub kind: VectorKind,
    pub entries: Vec<(StCoord, F)>,
}

impl<F: Scalar> StVector<F> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn values(&self) -> Vec<F> {
        self.entries.iter().map(|(_, v)| *v).collect()
    }
}

fn route_coords<'r>(
    route: &'r Route,
    network: &'r RoadNetwork,
    horizon: u32,
) -> impl Iterator<Item = (usize, StCoord)> + 'r {
    route.stops.iter().enumerate().filter_map(move |(i, s)| {
        network
            .factory_index(s.node)
            .map(|factory| (i, StCoord { factory, interval: interval_of(s.arrival, horizon) }))
    })
}

/// Residual capacity on arrival at every factory stop.
pub fn capacity_vector<F: Scalar>(
    route: &Route,
    capacity: u32,
    network: &RoadNetwork,
    horizon: u32,
) -> StVector<F> {
    let loads = route.arrival_loads();
    let entries = route_coords(route, network, horizon)
        .map(|(i, c)| (c, F::lit(f64::from(capacity) - f64::from(loads[i]))))
        .collect();
    StVector { kind: VectorKind::Capacity, entries }
}

/// Predicted demand looked up at every factory stop's coordinate.
pub fn demand_vector<F: Scalar>(
    route: &Route,
    predicted: &StdMatrix<F>,
    network: &RoadNetwork,
    horizon: u32,
) -> StVector<F> {
    let entries = route_coords(route, network, horizon)
        .map(|(_, c)| (c, predicted.get(c.factory, c.interval.min(predicted.cols - 1))))
        .collect();
    StVector { kind: VectorKind::Demand, entries }
}

/// Scales non-negative values to a distribution with additive smoothing.
/// An all-zero vector becomes uniform.
pub fn normalize<F: Scalar>(values: &[F]) -> Vec<F> {
    let n = F::count(values.len());
    let total: F = values.iter().copied().sum();
    let eps = F::lit(SMOOTHING);
    let denom = F::one() + n * eps;
    values
        .iter()
        .map(|&v| {
            let p = if total > F::zero() { v / total } else { F::one() / n };
            (p + eps) / denom
        })
        .collect()
}

/// Jensen-Shannon divergence in bits between two distributions.
pub fn js_divergence<F: Scalar>(p: &[F], q: &[F]) -> F {
    let half = F::lit(0.5);
    let kl = |a: &[F], m: &[F]| -> F {
        a.iter()
            .zip(m)
            .filter(|(x, _)| **x > F::zero())
            .map(|(&x, &mm)| x * (x / mm).log2())
            .sum()
    };
    let m: Vec<F> = p.iter().zip(q).map(|(&a, &b)| half * (a + b)).collect();
    let d = half * kl(p, &m) + half * kl(q, &m);
    d.max(F::zero()).min(F::one())
}

/// Divergence between a route's capacity and demand profiles, in `[0, 1]`.
pub fn st_score<F: Scalar>(capacity: &StVector<F>, demand: &StVector<F>) -> Result<F, StDemandError> {
    if capacity.len() != demand.len() {
        return Err(StDemandError::LengthMismatch(capacity.len(), demand.len()));
    }
    if capacity.is_empty() {
        return Err(StDemandError::Empty);
    }
    if let Some(i) = capacity.entries.iter().zip(&demand.entries).position(|(a, b)| a.0 != b.0) {
        return Err(StDemandError::Misaligned(i));
    }
    let p = normalize(&capacity.values());
    let q = normalize(&demand.values());
    Ok(js_divergence(&p, &q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{Node, NodeId, NodeRole, OrderId};
    use proptest::prelude::*;

    fn network(factories: usize) -> RoadNetwork {
        let mut nodes = vec![Node { id: NodeId(0), role: NodeRole::Depot, x: 0.0, y: 0.0 }];
        for i in 1..=factories {
            nodes.push(Node { id: NodeId(i), role: NodeRole::Factory, x: i as f64, y: 0.0 });
        }
        RoadNetwork::new(nodes, None, 1.0, 0.0).unwrap()
    }

    fn order(pickup: usize, q: u32, t: u32) -> DeliveryOrder {
        let delivery = if pickup == 1 { 2 } else { 1 };
        DeliveryOrder {
            id: OrderId(0),
            pickup: NodeId(pickup),
            delivery: NodeId(delivery),
            quantity: q,
            created_at: t,
            latest_delivery: 1440,
        }
    }

    fn vector(kind: VectorKind, values: &[f64]) -> StVector<f64> {
        StVector {
            kind,
            entries: values
                .iter()
                .enumerate()
                .map(|(i, &v)| (StCoord { factory: i, interval: 0 }, v))
                .collect(),
        }
    }

    #[test]
    fn empty_orders_give_zero_grid() {
        let m: StdMatrix<f64> = build_std_matrix(&[], &network(3), 3, 144).unwrap();
        assert!(m.values().iter().all(|v| *v == 0.0));
        assert_eq!((m.rows(), m.cols()), (3, 144));
    }

    #[test]
    fn quantities_accumulate_per_cell() {
        // Factory row 1 is node 2; interval 3 covers minutes [30, 40).
        let orders = [order(2, 2, 31), order(2, 3, 39)];
        let m: StdMatrix<f64> = build_std_matrix(&orders, &network(3), 3, 144).unwrap();
        assert_eq!(m.get(1, 3), 5.0);
        assert_eq!(m.total(), 5.0);
    }

    #[test]
    fn boundary_goes_to_later_interval() {
        let m: StdMatrix<f64> = build_std_matrix(&[order(1, 4, 20)], &network(2), 2, 144).unwrap();
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.get(0, 2), 4.0);
    }

    #[test]
    fn out_of_range_factory() {
        let err = build_std_matrix::<f64>(&[order(3, 1, 0)], &network(3), 2, 144).unwrap_err();
        assert!(matches!(err, StDemandError::FactoryOutOfRange { .. }));
    }

    #[test]
    fn prediction_is_elementwise_mean() {
        let mut days = Vec::new();
        for v in [2.0, 4.0, 6.0] {
            let mut m = StdMatrix::<f64>::zeros(2, 3);
            m.set(1, 2, v);
            days.push(m);
        }
        let p = predict_std(&days).unwrap();
        assert_eq!(p.get(1, 2), 4.0);
        assert_eq!(predict_std(&days[..1]).unwrap(), days[0]);
        let zeros = vec![StdMatrix::<f64>::zeros(2, 3); 4];
        assert_eq!(predict_std(&zeros).unwrap(), StdMatrix::zeros(2, 3));
    }

    #[test]
    fn prediction_errors() {
        assert_eq!(predict_std::<f64>(&[]).unwrap_err(), StDemandError::EmptyHistory);
        let err = predict_std(&[StdMatrix::<f64>::zeros(2, 3), StdMatrix::zeros(3, 3)]).unwrap_err();
        assert!(matches!(err, StDemandError::DimensionMismatch { .. }));
    }

    #[test]
    fn score_examples() {
        let cap = vector(VectorKind::Capacity, &[2.0, 4.0]);
        let dem = vector(VectorKind::Demand, &[1.0, 2.0]);
        assert!(st_score(&cap, &dem).unwrap() < 1e-12);

        let a = vector(VectorKind::Capacity, &[1.0, 0.0]);
        let b = vector(VectorKind::Demand, &[0.0, 1.0]);
        assert!((st_score(&a, &b).unwrap() - 1.0).abs() < 1e-6);

        // Frozen from an independent evaluation of the base-2 JS formula.
        let c = vector(VectorKind::Capacity, &[0.5, 0.5]);
        let d = vector(VectorKind::Demand, &[1.0, 0.0]);
        assert!((st_score(&c, &d).unwrap() - 0.311_278_124_459_132_8).abs() < 1e-6);
    }

    #[test]
    fn score_errors() {
        let a = vector(VectorKind::Capacity, &[1.0, 0.0]);
        let b = vector(VectorKind::Demand, &[1.0]);
        assert_eq!(st_score(&a, &b).unwrap_err(), StDemandError::LengthMismatch(2, 1));
        let e = vector(VectorKind::Demand, &[]);
        assert_eq!(st_score(&e, &e).unwrap_err(), StDemandError::Empty);
        let mut c = vector(VectorKind::Demand, &[1.0, 1.0]);
        c.entries[1].0.interval = 4;
        assert_eq!(st_score(&a, &c).unwrap_err(), StDemandError::Misaligned(1));
    }

    #[test]
    fn works_in_single_precision() {
        let a = StVector { kind: VectorKind::Capacity, entries: vec![(StCoord { factory: 0, interval: 0 }, 0.5f32), (StCoord { factory: 1, interval: 0 }, 0.5)] };
        let b = StVector { kind: VectorKind::Demand, entries: vec![(a.entries[0].0, 1.0f32), (a.entries[1].0, 0.0)] };
        assert!((st_score(&a, &b).unwrap() - 0.3113).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn score_symmetric_and_bounded(
            a in prop::collection::vec(0.0f64..50.0, 1..8),
            seed in prop::collection::vec(0.0f64..50.0, 8),
        ) {
            let b = &seed[..a.len()];
            let va = vector(VectorKind::Capacity, &a);
            let vb = vector(VectorKind::Demand, b);
            let ab = st_score(&va, &vb).unwrap();
            let ba = st_score(&vb, &va).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!(st_score(&va, &vector(VectorKind::Demand, &a)).unwrap() < 1e-9);
        }

        #[test]
        fn grid_mass_is_conserved(qs in prop::collection::vec((1usize..4, 1u32..9, 0u32..1440), 0..30)) {
            let orders: Vec<_> = qs.iter().map(|&(f, q, t)| order(f, q, t)).collect();
            let m: StdMatrix<f64> = build_std_matrix(&orders, &network(3), 3, 144).unwrap();
            let expected: u32 = qs.iter().map(|x| x.1).sum();
            prop_assert_eq!(m.total(), f64::from(expected));
        }

        #[test]
        fn prediction_ignores_day_order(vals in prop::collection::vec(0u32..20, 12), rot in 0usize..3) {
            let days: Vec<StdMatrix<f64>> = vals.chunks(4).map(|c| {
                let mut m = StdMatrix::zeros(2, 2);
                for (i, v) in c.iter().enumerate() { m.set(i / 2, i % 2, f64::from(*v)); }
                m
            }).collect();
            let mut rotated = days.clone();
            rotated.rotate_left(rot);
            let a = predict_std(&days).unwrap();
            let b = predict_std(&rotated).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
