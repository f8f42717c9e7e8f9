//! DQN test agent: drives the environment to maximise constraint violations.

mod replay;
mod state;
mod trace;

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::behavior::{flatten, FlightStateMachine, ModelError, TransitionTable};
use crate::config::{ConfigError, KeyValues};
use crate::constraint::{evaluate, Constraint, ConstraintError};
use crate::domain::{DomainError, DomainSchema, Snapshot};
use crate::neural::{encode_tuple, huber, FeatureScale, ForwardCache, NeuralError, Workspace, INPUT_DIM};
use crate::sim::{Backend, SimError, Terminal};
use crate::{Adam, Network};

pub use replay::{Experience, ReplayMemory};
pub use state::{load_model, load_training, save_model, save_training};
pub use trace::{
    append_trace, parse_traces, write_traces, EpisodeEnd, EpisodeTrace, StepRecord, TraceError, TraceFile,
    TRACE_HEADER,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for AgentError {
    fn from(e: std::io::Error) -> Self {
        AgentError::Io(e.to_string())
    }
}

/// DQN hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// episodes between target-network syncs
    pub target_update: u64,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// in agent steps
    pub eps_decay: f64,
    pub training_episodes: u64,
    pub evaluation_episodes: u64,
    pub history_len: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    /// episodes between checkpoints; 0 writes only the final one
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 128,
            replay_capacity: 1024,
            target_update: 10,
            gamma: 0.999,
            eps_start: 1.0,
            eps_end: 0.01,
            eps_decay: 100.0,
            training_episodes: 1000,
            evaluation_episodes: 100,
            history_len: 4,
            hidden_dim: 10,
            layers: 3,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<TrainConfig, AgentError> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            learning_rate: kv.get_or("learning_rate", d.learning_rate)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            replay_capacity: kv.get_or("replay_capacity", d.replay_capacity)?,
            target_update: kv.get_or("target_update", d.target_update)?,
            gamma: kv.get_or("gamma", d.gamma)?,
            eps_start: kv.get_or("eps_start", d.eps_start)?,
            eps_end: kv.get_or("eps_end", d.eps_end)?,
            eps_decay: kv.get_or("eps_decay", d.eps_decay)?,
            training_episodes: kv.get_or("training_episodes", d.training_episodes)?,
            evaluation_episodes: kv.get_or("evaluation_episodes", d.evaluation_episodes)?,
            history_len: kv.get_or("history_len", d.history_len)?,
            hidden_dim: kv.get_or("hidden_dim", d.hidden_dim)?,
            layers: kv.get_or("layers", d.layers)?,
            checkpoint_every: kv.get_or("checkpoint_every", d.checkpoint_every)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.eps_end) || !(0.0..=1.0).contains(&self.eps_start) {
            return bad("epsilon bounds must lie in [0, 1]");
        }
        if self.eps_end > self.eps_start {
            return bad("eps_end must not exceed eps_start");
        }
        if !(self.eps_decay > 0.0) || !(self.learning_rate > 0.0) {
            return bad("eps_decay and learning_rate must be positive");
        }
        if self.batch_size == 0
            || self.replay_capacity == 0
            || self.target_update == 0
            || self.training_episodes == 0
            || self.evaluation_episodes == 0
            || self.history_len == 0
            || self.hidden_dim == 0
            || self.layers == 0
        {
            return bad("sizes, capacities and episode counts must be positive");
        }
        Ok(())
    }
}

/// `1 + m` for a correct action, `-1` otherwise.
pub fn compute_reward(action_correct: bool, m: usize) -> f64 {
    if action_correct {
        1.0 + m as f64
    } else {
        -1.0
    }
}

/// `sum_t gamma^t * r_t`
pub fn cumulative_reward(rewards: &[f64], gamma: f64) -> f64 {
    rewards
        .iter()
        .enumerate()
        .map(|(t, r)| gamma.powi(t as i32) * r)
        .sum()
}

/// Exploration rate after `step` agent actions.
pub fn epsilon(step: u64, cfg: &TrainConfig) -> f64 {
    cfg.eps_end + (cfg.eps_start - cfg.eps_end) * (-(step as f64) / cfg.eps_decay).exp()
}

/// Uniform over all actions with probability `eps`, else the greedy action.
/// Legality is not consulted; the environment judges it.
pub fn select_action<R: Rng>(
    policy: &Network,
    window: &[f64],
    eps: f64,
    rng: &mut R,
    cache: &mut ForwardCache<f64>,
) -> Result<usize, AgentError> {
    if eps > 0.0 && rng.random::<f64>() < eps {
        return Ok(rng.random_range(0..policy.action_count()));
    }
    policy.forward_cached(window, cache)?;
    Ok(Network::argmax(cache.last_q()))
}

/// Which family of episode seeds a run draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    Training,
    Evaluation,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Environment seed for one episode.
pub fn episode_seed(seed: u64, stream: SeedStream, episode: u64) -> u64 {
    let salt = match stream {
        SeedStream::Training => 0x7261_696e,
        SeedStream::Evaluation => 0x6576_616c,
    };
    splitmix(splitmix(seed ^ salt).wrapping_add(episode))
}

fn agent_rng(seed: u64, stream: SeedStream, episode: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(episode_seed(seed, stream, episode)))
}

/// Flattened machine, schema, and oracle shared by every run.
#[derive(Debug, Clone)]
pub struct Setup {
    pub machine: FlightStateMachine,
    pub table: TransitionTable,
    pub schema: DomainSchema,
    pub constraints: Vec<Constraint>,
    pub scale: FeatureScale,
}

impl Setup {
    pub fn new(
        machine: &FlightStateMachine,
        schema: DomainSchema,
        constraints: Vec<Constraint>,
    ) -> Result<Setup, AgentError> {
        let machine = if machine.is_flat() { machine.clone() } else { flatten(machine)? };
        let table = machine.table()?;
        Ok(Setup {
            machine,
            table,
            schema,
            constraints,
            scale: FeatureScale::default(),
        })
    }

    pub fn actions(&self) -> &[String] {
        &self.table.event_names
    }

    pub fn initial(&self) -> &str {
        &self.table.state_names[self.table.initial]
    }

    fn encode(&self, snapshot: &Snapshot) -> Result<[f64; INPUT_DIM], AgentError> {
        let tuple = snapshot.to_state_tuple(&self.schema)?;
        let idx = self.machine.state_index(&tuple.flight_state).unwrap_or(0);
        let mut row = [0.0; INPUT_DIM];
        encode_tuple(&tuple, idx, self.table.state_count(), &self.scale, &mut row);
        Ok(row)
    }

    /// Fails when a checkpoint does not fit this machine.
    pub fn check_model(&self, net: &Network, names: &[String]) -> Result<(), AgentError> {
        if net.input_dim() != INPUT_DIM {
            return Err(AgentError::Incompatible(format!(
                "input width {} (expected {INPUT_DIM})",
                net.input_dim()
            )));
        }
        if names != self.actions() {
            return Err(AgentError::Incompatible(format!(
                "checkpoint has {} actions, machine has {} events",
                names.len(),
                self.actions().len()
            )));
        }
        Ok(())
    }
}

/// The last `H` encoded observations, zero-padded at episode start.
struct History {
    rows: VecDeque<[f64; INPUT_DIM]>,
    len: usize,
}

impl History {
    fn new(len: usize) -> Self {
        History {
            rows: VecDeque::with_capacity(len),
            len,
        }
    }

    fn push(&mut self, row: [f64; INPUT_DIM]) {
        if self.rows.len() == self.len {
            self.rows.pop_front();
        }
        self.rows.push_back(row);
    }

    fn window(&self) -> Vec<f64> {
        let mut out = vec![0.0; (self.len - self.rows.len()) * INPUT_DIM];
        for r in &self.rows {
            out.extend_from_slice(r);
        }
        out
    }
}

/// Policy and target networks plus everything needed to continue training.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub policy: Network,
    pub target: Network,
    pub adam: Adam,
    pub replay: ReplayMemory,
    pub episodes_done: u64,
    pub steps_done: u64,
}

#[derive(Default)]
struct Scratch {
    cache: ForwardCache<f64>,
    target_cache: ForwardCache<f64>,
    ws: Workspace<f64>,
    grad: Vec<f64>,
}

impl Learner {
    pub fn new(cfg: &TrainConfig, action_count: usize) -> Result<Learner, AgentError> {
        let policy = Network::init(cfg.seed, INPUT_DIM, cfg.hidden_dim, cfg.layers, action_count)?;
        Ok(Learner {
            target: policy.clone(),
            adam: Adam::new(policy.params().len()),
            replay: ReplayMemory::new(cfg.replay_capacity),
            policy,
            episodes_done: 0,
            steps_done: 0,
        })
    }

    /// One DQN step on a uniformly sampled batch; no-op until the batch fits.
    fn update(&mut self, cfg: &TrainConfig, rng: &mut ChaCha8Rng, s: &mut Scratch) -> Result<(), AgentError> {
        if self.replay.len() < cfg.batch_size {
            return Ok(());
        }
        let batch = self.replay.sample_indices(cfg.batch_size, rng);
        s.grad.clear();
        s.grad.resize(self.policy.params().len(), 0.0);
        let scale = 1.0 / batch.len() as f64;
        for i in batch {
            let e = self.replay.get(i);
            let y = if e.done {
                e.reward
            } else {
                self.target.forward_cached(&e.next, &mut s.target_cache)?;
                let best = s.target_cache.last_q().iter().copied().fold(f64::NEG_INFINITY, f64::max);
                e.reward + cfg.gamma * best
            };
            self.policy.forward_cached(&e.state, &mut s.cache)?;
            let (_, d) = huber(s.cache.last_q()[e.action] - y);
            self.policy
                .accumulate_gradient(&e.state, &s.cache, e.action, d * scale, &mut s.grad, &mut s.ws)?;
        }
        self.adam.update(self.policy.params_mut(), &s.grad, cfg.learning_rate)?;
        Ok(())
    }
}

enum Actor<'a> {
    Learn(&'a mut Learner, &'a mut Scratch),
    Greedy(&'a Network, &'a mut ForwardCache<f64>),
    Random,
}

fn run_episode(
    setup: &Setup,
    cfg: &TrainConfig,
    env: &mut dyn Backend,
    actor: &mut Actor<'_>,
    episode: u64,
    stream: SeedStream,
) -> Result<EpisodeTrace, AgentError> {
    let mut rng = agent_rng(cfg.seed, stream, episode);
    let mut trace = EpisodeTrace {
        episode,
        initial: setup.initial().to_string(),
        steps: Vec::new(),
        end: EpisodeEnd::Aborted,
        cumulative: 0.0,
    };
    let first = match env.reset(episode_seed(cfg.seed, stream, episode)) {
        Ok(o) => o,
        Err(_) => return Ok(trace),
    };
    trace.initial = first.flight_state.clone();
    let mut history = History::new(cfg.history_len);
    history.push(setup.encode(&first.snapshot)?);
    let actions = setup.actions();
    let mut rewards = Vec::new();
    while !env.is_terminal().is_done() {
        let window = history.window();
        let a = match actor {
            Actor::Learn(l, s) => {
                let eps = epsilon(l.steps_done, cfg);
                select_action(&l.policy, &window, eps, &mut rng, &mut s.cache)?
            }
            Actor::Greedy(net, cache) => select_action(net, &window, 0.0, &mut rng, cache)?,
            Actor::Random => rng.random_range(0..actions.len()),
        };
        let out = match env.step(&actions[a]) {
            Ok(o) => o,
            Err(_) => break,
        };
        let failed = if out.action_correct {
            evaluate(&setup.constraints, &out.snapshot)?.failed
        } else {
            Vec::new()
        };
        let reward = compute_reward(out.action_correct, failed.len());
        let tuple = out.snapshot.to_state_tuple(&setup.schema)?;
        let terminal = env.is_terminal();
        history.push(setup.encode(&out.snapshot)?);
        if let Actor::Learn(l, s) = actor {
            l.replay.push(Experience {
                state: window,
                action: a,
                reward,
                next: history.window(),
                done: matches!(terminal, Terminal::Crashed | Terminal::Goal),
            });
            l.steps_done += 1;
            l.update(cfg, &mut rng, s)?;
        }
        rewards.push(reward);
        trace.steps.push(StepRecord {
            tick: out.snapshot.tick,
            state: out.flight_state,
            action: actions[a].clone(),
            correct: out.action_correct,
            failed,
            reward,
            tuple: Some(tuple),
        });
        if terminal.is_done() {
            trace.end = terminal.into();
        }
    }
    trace.cumulative = cumulative_reward(&rewards, cfg.gamma);
    Ok(trace)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub traces: Vec<EpisodeTrace>,
    pub learner: Learner,
}

impl TrainOutput {
    pub fn rewards(&self) -> Vec<f64> {
        self.traces.iter().map(|t| t.cumulative).collect()
    }
}

/// Runs `cfg.training_episodes` more episodes, continuing `resume` if given.
/// `on_episode` sees the learner after every episode (for checkpointing).
pub fn train<F>(
    cfg: &TrainConfig,
    setup: &Setup,
    env: &mut dyn Backend,
    resume: Option<Learner>,
    mut on_episode: F,
) -> Result<TrainOutput, AgentError>
where
    F: FnMut(&Learner, &EpisodeTrace) -> Result<(), AgentError>,
{
    cfg.validate()?;
    let mut learner = match resume {
        Some(l) => {
            setup.check_model(&l.policy, setup.actions())?;
            l
        }
        None => Learner::new(cfg, setup.actions().len())?,
    };
    let mut scratch = Scratch::default();
    let start = learner.episodes_done;
    let mut traces = Vec::with_capacity(cfg.training_episodes as usize);
    for episode in start..start + cfg.training_episodes {
        let trace = {
            let mut actor = Actor::Learn(&mut learner, &mut scratch);
            run_episode(setup, cfg, env, &mut actor, episode, SeedStream::Training)?
        };
        learner.episodes_done = episode + 1;
        if learner.episodes_done % cfg.target_update == 0 {
            learner.target = learner.policy.clone();
        }
        on_episode(&learner, &trace)?;
        traces.push(trace);
    }
    Ok(TrainOutput { traces, learner })
}

/// Pure exploitation: greedy actions, no learning.
pub fn evaluate_policy(
    cfg: &TrainConfig,
    setup: &Setup,
    env: &mut dyn Backend,
    net: &Network,
) -> Result<Vec<EpisodeTrace>, AgentError> {
    let mut cache = ForwardCache::default();
    (0..cfg.evaluation_episodes)
        .map(|ep| {
            let mut actor = Actor::Greedy(net, &mut cache);
            run_episode(setup, cfg, env, &mut actor, ep, SeedStream::Evaluation)
        })
        .collect()
}

/// Uniform random actions through the same environment and oracle.
pub fn random_baseline(
    cfg: &TrainConfig,
    setup: &Setup,
    env: &mut dyn Backend,
    episodes: u64,
    stream: SeedStream,
) -> Result<Vec<EpisodeTrace>, AgentError> {
    (0..episodes)
        .map(|ep| run_episode(setup, cfg, env, &mut Actor::Random, ep, stream))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rewards() {
        assert_eq!(compute_reward(true, 4), 5.0);
        assert_eq!(compute_reward(true, 0), 1.0);
        assert_eq!(compute_reward(false, 7), -1.0);
    }

    #[test]
    fn discounted_sum() {
        assert_eq!(cumulative_reward(&[1.0, 1.0, -1.0], 1.0), 1.0);
        assert_eq!(cumulative_reward(&[], 0.9), 0.0);
        assert_eq!(cumulative_reward(&[2.0, 4.0], 0.5), 4.0);
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(epsilon(0, &cfg), 1.0);
        let at_decay = epsilon(100, &cfg);
        assert!((at_decay - (0.01 + 0.99 * (-1.0f64).exp())).abs() < 1e-15);
        assert!((at_decay - 0.374).abs() < 1e-3);
        assert!((epsilon(100_000, &cfg) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let kv = KeyValues::parse("gamma = 1.5").unwrap();
        assert!(TrainConfig::from_kv(&kv).is_err());
        let kv = KeyValues::parse("eps_start = 0.1\neps_end = 0.2").unwrap();
        assert!(TrainConfig::from_kv(&kv).is_err());
        let kv = KeyValues::parse("batch_size = 32").unwrap();
        assert_eq!(TrainConfig::from_kv(&kv).unwrap().batch_size, 32);
    }

    #[test]
    fn history_pads_with_zeros() {
        let mut h = History::new(3);
        h.push([1.0; INPUT_DIM]);
        let w = h.window();
        assert_eq!(w.len(), 30);
        assert!(w[..20].iter().all(|v| *v == 0.0));
        for k in 2..6 {
            h.push([k as f64; INPUT_DIM]);
        }
        assert_eq!(h.window()[0], 3.0);
        assert_eq!(h.window()[29], 5.0);
    }

    #[test]
    fn greedy_selection_is_deterministic() {
        let net = Network::init(3, INPUT_DIM, 5, 2, 7).unwrap();
        let w: Vec<f64> = (0..40).map(|i| (i as f64).cos()).collect();
        let mut c = ForwardCache::default();
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        let a = select_action(&net, &w, 0.0, &mut r1, &mut c).unwrap();
        let b = select_action(&net, &w, 0.0, &mut r2, &mut c).unwrap();
        assert_eq!(a, b);
    }
}
