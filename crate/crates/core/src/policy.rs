//! Graph-attention Q-network over the fleet, the Double-DQN trainer and the
//! learned dispatch policy.

use std::collections::VecDeque;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{run_episode, DispatchError, DispatchPolicy, EnvConfig, EnvError, JointState, Transition, INFEASIBLE_Q};
use crate::instance::{Instance, VehicleId};
use crate::neural::{read_archive, write_archive, zero_grad, Adam, Attention, Mlp, Module, NeuralError, Param, Tensor2};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("no feasible vehicle in state")]
    NoFeasibleVehicle,
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: usize,
    /// Hidden layers in each MLP.
    pub mlp_layers: usize,
    /// Stacked attention levels; 0 gives a plain per-vehicle DQN tower.
    pub levels: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub max_neighbors: usize,
    pub use_st_score: bool,
    /// Distances are divided by this before entering the network (km).
    pub distance_scale: f64,
    /// Interval indices are divided by this.
    pub horizon: u32,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            mlp_layers: 2,
            levels: 2,
            heads: 4,
            head_dim: 16,
            max_neighbors: 8,
            use_st_score: true,
            distance_scale: 100.0,
            horizon: 144,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Baseline without neighbourhood attention and without the ST score feature.
    pub fn plain(seed: u64) -> Self {
        Self { levels: 0, use_st_score: false, seed, ..Self::default() }
    }
}

/// For each listed vehicle: itself, then its `max` Euclidean-nearest other
/// listed vehicles (ties by id). Indices refer to positions in `members`.
pub fn neighbor_sets(positions: &[(f64, f64)], members: &[usize], max: usize) -> Vec<Vec<usize>> {
    let ne = max.min(members.len().saturating_sub(1));
    members
        .iter()
        .enumerate()
        .map(|(a, &i)| {
            let (xi, yi) = positions[i];
            let mut others: Vec<(f64, usize, usize)> = members
                .iter()
                .enumerate()
                .filter(|(b, _)| *b != a)
                .map(|(b, &j)| {
                    let (xj, yj) = positions[j];
                    ((xi - xj).hypot(yi - yj), j, b)
                })
                .collect();
            others.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
            std::iter::once(a).chain(others.into_iter().take(ne).map(|o| o.2)).collect()
        })
        .collect()
}

/// Shared-weight Q tower evaluated on every feasible vehicle at once.
#[derive(Clone, Debug)]
pub struct QNetwork<F> {
    pub config: NetworkConfig,
    pub embed: Mlp<F>,
    pub levels: Vec<Attention<F>>,
    pub head: Mlp<F>,
    cache: Option<(Vec<usize>, usize)>,
}

impl<F: Scalar> QNetwork<F> {
    pub fn new(config: NetworkConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let h = config.hidden;
        let mut widths = vec![5];
        widths.extend(std::iter::repeat_n(h, config.mlp_layers.max(1)));
        let embed = Mlp::new("embed", &widths, true, &mut rng);
        let levels = (0..config.levels)
            .map(|l| Attention::new(&format!("level{}", l + 1), h, config.heads, config.head_dim, h, &mut rng))
            .collect();
        let mut widths = vec![h * (config.levels + 1)];
        widths.extend(std::iter::repeat_n(h, config.mlp_layers));
        widths.push(1);
        let head = Mlp::new("head", &widths, false, &mut rng);
        Self { config, embed, levels, head, cache: None }
    }

    /// Scaled network input for one feasible row.
    pub fn input_row(&self, features: &[f64; 5]) -> Vec<F> {
        let c = &self.config;
        let st = if c.use_st_score { features[2] } else { 0.0 };
        [features[0] / c.distance_scale, features[1] / c.distance_scale, st, features[3], features[4] / f64::from(c.horizon)]
            .into_iter()
            .map(F::lit)
            .collect()
    }

    /// One score per vehicle; infeasible rows get the sentinel and are not evaluated.
    pub fn q_values(&mut self, state: &JointState) -> Result<Vec<F>, PolicyError> {
        let members: Vec<usize> = state.feasible().map(|v| v.0).collect();
        if members.is_empty() {
            return Err(PolicyError::NoFeasibleVehicle);
        }
        let rows: Vec<Vec<F>> = members.iter().map(|&i| self.input_row(&state.rows[i].features)).collect();
        let x = Tensor2::from_rows(&rows)?;
        let nb = neighbor_sets(&state.positions, &members, self.config.max_neighbors);
        let mut reps = vec![self.embed.forward(&x)?];
        for level in &mut self.levels {
            let next = level.forward(reps.last().expect("non-empty"), &nb)?;
            reps.push(next);
        }
        let cat = Tensor2::hcat(&reps.iter().collect::<Vec<_>>())?;
        let out = self.head.forward(&cat)?;
        let mut q = vec![F::lit(INFEASIBLE_Q); state.fleet_size()];
        for (r, &i) in members.iter().enumerate() {
            q[i] = out.get(r, 0);
        }
        self.cache = Some((members, state.fleet_size()));
        Ok(q)
    }

    /// Back-propagates d(loss)/d(q) from the last `q_values` call.
    /// Entries of infeasible rows are ignored.
    pub fn backward(&mut self, dq: &[F]) -> Result<(), PolicyError> {
        let (members, k) = self.cache.as_ref().ok_or(NeuralError::NoForward("q-network"))?;
        if dq.len() != *k {
            return Err(NeuralError::Shape { op: "q backward", expected: k.to_string(), got: dq.len().to_string() }.into());
        }
        let dy = Tensor2::from_vec(members.len(), 1, members.iter().map(|&i| dq[i]).collect())?;
        let dcat = self.head.backward(&dy)?;
        let h = self.config.hidden;
        let mut grads: Vec<Tensor2<F>> = (0..=self.levels.len()).map(|l| dcat.columns(l * h, (l + 1) * h)).collect();
        for l in (0..self.levels.len()).rev() {
            let d = self.levels[l].backward(&grads[l + 1])?;
            grads[l].add_assign(&d)?;
        }
        self.embed.backward(&grads[0])?;
        Ok(())
    }

    /// Argmax over feasible rows, lowest id on ties.
    pub fn best_action(&mut self, state: &JointState) -> Result<VehicleId, PolicyError> {
        let q = self.q_values(state)?;
        Ok(argmax_feasible(state, &q).expect("q_values checked feasibility"))
    }

    pub fn copy_weights_from(&mut self, other: &Self) {
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            dst.value = src.value.clone();
        }
    }

    pub fn to_archive(&self, metadata: &str) -> Vec<u8> {
        let params = self.params();
        let named: Vec<(&str, &Tensor2<F>)> = params.iter().map(|p| (p.name.as_str(), &p.value)).collect();
        write_archive(&named, metadata)
    }

    /// Restores weights from named tensors; every parameter must be present with its shape.
    pub fn load_tensors(&mut self, tensors: &[(String, Tensor2<F>)]) -> Result<(), PolicyError> {
        for p in self.params_mut() {
            let (_, t) = tensors
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| PolicyError::Checkpoint(format!("missing tensor {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(PolicyError::Checkpoint(format!("tensor {} has shape {:?}", p.name, t.shape())));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}

impl<F: Scalar> Module<F> for QNetwork<F> {
    fn params(&self) -> Vec<&Param<F>> {
        let mut out = self.embed.params();
        for l in &self.levels {
            out.extend(l.params());
        }
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut out = self.embed.params_mut();
        for l in &mut self.levels {
            out.extend(l.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }
}

pub fn argmax_feasible<F: Scalar>(state: &JointState, q: &[F]) -> Option<VehicleId> {
    let mut best: Option<(usize, F)> = None;
    for v in state.feasible() {
        if best.is_none_or(|(_, b)| q[v.0] > b) {
            best = Some((v.0, q[v.0]));
        }
    }
    best.map(|(i, _)| VehicleId(i))
}

/// ε-greedy choice: uniform over feasible vehicles with probability ε.
pub fn select_action<F: Scalar>(
    state: &JointState,
    net: &mut QNetwork<F>,
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<VehicleId, PolicyError> {
    let feasible: Vec<VehicleId> = state.feasible().collect();
    if feasible.is_empty() {
        return Err(PolicyError::NoFeasibleVehicle);
    }
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(*feasible.choose(rng).expect("non-empty"));
    }
    net.best_action(state)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the run over which ε decays linearly.
    pub epsilon_decay: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Target network sync period in episodes.
    pub target_period: usize,
    pub learning_rate: f64,
    /// Gradient steps after each episode.
    pub steps_per_episode: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay: 0.6,
            buffer_capacity: 100_000,
            batch_size: 64,
            target_period: 5,
            learning_rate: 1e-3,
            steps_per_episode: 1,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    /// Linear schedule; constant at the end value after the decay phase.
    pub fn epsilon(&self, episode: usize, total: usize) -> f64 {
        let span = (self.epsilon_decay * total as f64).round().max(1.0);
        let frac = episode as f64 / span;
        if frac >= 1.0 {
            return self.epsilon_end;
        }
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Bounded FIFO of transitions.
#[derive(Clone, Debug, Default)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, items: VecDeque::new() }
    }

    pub fn push(&mut self, t: Transition) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        (0..n).map(|_| rng.gen_range(0..self.items.len())).collect()
    }
}

/// One learning-curve row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    /// Mean squared TD error of the episode's gradient steps; `None` during warm-up.
    pub loss: Option<f64>,
    pub nuv: usize,
    pub tc: f64,
    pub epsilon: f64,
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("episode,loss,nuv,tc,epsilon\n");
    for p in points {
        let loss = p.loss.map_or(String::new(), |l| format!("{l:.9}"));
        out.push_str(&format!("{},{},{},{:.6},{:.6}\n", p.episode, loss, p.nuv, p.tc, p.epsilon));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub network: NetworkConfig,
    pub trainer: TrainerConfig,
    pub episodes: usize,
    pub epsilon: f64,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
}

/// Online and target networks with replay and optimizer state.
pub struct Trainer<F> {
    pub config: TrainerConfig,
    pub online: QNetwork<F>,
    pub target: QNetwork<F>,
    pub buffer: ReplayBuffer,
    pub optimizer: Adam<F>,
    pub rng: ChaCha8Rng,
    pub episodes: usize,
    pub epsilon: f64,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(network: NetworkConfig, config: TrainerConfig) -> Self {
        let online = QNetwork::new(network);
        let target = online.clone();
        Self {
            buffer: ReplayBuffer::new(config.buffer_capacity),
            optimizer: Adam::new(config.learning_rate),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            epsilon: config.epsilon_start,
            episodes: 0,
            config,
            online,
            target,
        }
    }

    /// y = R at interval ends, else R + γ·Q'(S', argmax_a Q(S', a)).
    pub fn double_q_target(&mut self, t: &Transition) -> Result<F, PolicyError> {
        let r = F::lit(t.reward);
        let gamma = F::lit(self.config.gamma);
        match &t.next_state {
            Some(next) if !t.interval_end && gamma != F::zero() => {
                let a = self.online.best_action(next)?;
                let q = self.target.q_values(next)?;
                Ok(r + gamma * q[a.0])
            }
            _ => Ok(r),
        }
    }

    /// One mini-batch gradient step; `None` while the buffer is smaller than a batch.
    pub fn train_step(&mut self) -> Result<Option<f64>, PolicyError> {
        let b = self.config.batch_size;
        if b == 0 || self.buffer.len() < b {
            return Ok(None);
        }
        let idx = self.buffer.sample_indices(b, &mut self.rng);
        let mut targets = Vec::with_capacity(b);
        for &i in &idx {
            let t = self.buffer.get(i).clone();
            targets.push(self.double_q_target(&t)?);
        }
        zero_grad(&mut self.online);
        let mut loss = 0.0;
        let scale = F::lit(2.0) / F::count(b);
        for (&i, y) in idx.iter().zip(targets) {
            let t = self.buffer.get(i);
            let q = self.online.q_values(&t.state)?;
            let err = q[t.action.0] - y;
            loss += err.as_f64() * err.as_f64();
            let mut dq = vec![F::zero(); q.len()];
            dq[t.action.0] = scale * err;
            self.online.backward(&dq)?;
        }
        self.optimizer.update(self.online.params_mut(), F::one());
        Ok(Some(loss / b as f64))
    }

    /// Runs `episodes` training episodes, drawing each instance from `source`.
    pub fn train(
        &mut self,
        mut source: impl FnMut(usize) -> Instance,
        episodes: usize,
        env: &EnvConfig,
    ) -> Result<Vec<CurvePoint>, PolicyError> {
        let mut curve = Vec::with_capacity(episodes);
        for e in 0..episodes {
            let instance = source(e);
            self.epsilon = self.config.epsilon(e, episodes);
            let mut explorer = Explorer { net: &mut self.online, rng: &mut self.rng, epsilon: self.epsilon };
            let episode = run_episode(&instance, &mut explorer, env, true)?;
            for t in episode.transitions {
                self.buffer.push(t);
            }
            let mut losses = Vec::new();
            for _ in 0..self.config.steps_per_episode {
                if let Some(l) = self.train_step()? {
                    losses.push(l);
                }
            }
            self.episodes += 1;
            if self.config.target_period > 0 && self.episodes.is_multiple_of(self.config.target_period) {
                self.target.copy_weights_from(&self.online);
            }
            curve.push(CurvePoint {
                episode: e,
                loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
                nuv: episode.report.nuv,
                tc: episode.report.tc,
                epsilon: self.epsilon,
            });
        }
        Ok(curve)
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            network: self.online.config.clone(),
            trainer: self.config.clone(),
            episodes: self.episodes,
            epsilon: self.epsilon,
            rng_seed: self.config.seed,
            rng_word_pos: self.rng.get_word_pos(),
        }
    }

    /// Online weights plus trainer metadata; see [`load_checkpoint`].
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_string(&self.meta()).expect("metadata serializes");
        self.online.to_archive(&meta)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<String, PolicyError> {
        let bytes = self.checkpoint_bytes();
        std::fs::write(path.as_ref(), &bytes)
            .map_err(|source| PolicyError::Io { path: path.as_ref().display().to_string(), source })?;
        Ok(checkpoint_hash(&bytes))
    }

    pub fn policy(&self) -> LearnedPolicy<F> {
        LearnedPolicy::new(self.online.clone())
    }
}

/// Hex SHA-256 of checkpoint bytes.
pub fn checkpoint_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn parse_checkpoint<F: Scalar>(bytes: &[u8]) -> Result<(QNetwork<F>, CheckpointMeta), PolicyError> {
    let (tensors, meta) = read_archive::<F>(bytes)?;
    let meta: CheckpointMeta = serde_json::from_str(&meta).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
    let mut net = QNetwork::new(meta.network.clone());
    if tensors.len() != net.params().len() {
        return Err(PolicyError::Checkpoint(format!(
            "expected {} tensors, found {}",
            net.params().len(),
            tensors.len()
        )));
    }
    net.load_tensors(&tensors)?;
    Ok((net, meta))
}

pub fn load_checkpoint<F: Scalar>(path: impl AsRef<Path>) -> Result<(QNetwork<F>, CheckpointMeta), PolicyError> {
    let bytes = std::fs::read(path.as_ref())
        .map_err(|source| PolicyError::Io { path: path.as_ref().display().to_string(), source })?;
    parse_checkpoint(&bytes)
}

struct Explorer<'a, F> {
    net: &'a mut QNetwork<F>,
    rng: &'a mut ChaCha8Rng,
    epsilon: f64,
}

impl<F: Scalar> DispatchPolicy for Explorer<'_, F> {
    fn name(&self) -> String {
        "explorer".into()
    }

    fn dispatch(&mut self, state: &JointState) -> Result<VehicleId, DispatchError> {
        select_action(state, self.net, self.epsilon, self.rng).map_err(|e| match e {
            PolicyError::NoFeasibleVehicle => DispatchError::NoFeasibleVehicle(state.order),
            other => DispatchError::Policy(other.to_string()),
        })
    }
}

/// Greedy dispatch by a trained network.
#[derive(Clone, Debug)]
pub struct LearnedPolicy<F> {
    pub net: QNetwork<F>,
    pub label: String,
}

impl<F: Scalar> LearnedPolicy<F> {
    pub fn new(net: QNetwork<F>) -> Self {
        let label = if net.config.levels == 0 { "dqn" } else { "st-ddgn" }.to_string();
        Self { net, label }
    }
}

impl<F: Scalar> DispatchPolicy for LearnedPolicy<F> {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn dispatch(&mut self, state: &JointState) -> Result<VehicleId, DispatchError> {
        self.net.best_action(state).map_err(|e| match e {
            PolicyError::NoFeasibleVehicle => DispatchError::NoFeasibleVehicle(state.order),
            other => DispatchError::Policy(other.to_string()),
        })
    }
}
