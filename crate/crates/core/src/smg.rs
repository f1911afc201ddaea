//! Sequential Markov game layer: the environment contract, the subgame-state
//! information pattern (each agent observes the actions of everyone who
//! already acted this step), windowed rollouts, and the two transition
//! record types feeding the lower and upper replay buffers.

use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::games::{ExecutionOrder, GroupScheme};
use crate::policy::{ActionDistribution, PolicyError};

#[derive(Debug, Error)]
pub enum SmgError {
    #[error("episode finished; reset the environment before stepping")]
    EpisodeFinished,
    #[error("joint action has {got} entries, environment has {expected} agents")]
    JointActionLength { got: usize, expected: usize },
    #[error("action {action} out of range for agent {agent} (has {count} actions)")]
    ActionOutOfRange {
        agent: usize,
        action: usize,
        count: usize,
    },
    #[error("window length must be at least 1")]
    ZeroWindow,
    #[error("agent {agent} policy error: {source}")]
    Policy {
        agent: usize,
        source: PolicyError,
    },
}

/// State space descriptor. The built-in environments are all discrete;
/// the vector variant keeps the contract open for feature-based states.
#[derive(Clone, Debug, PartialEq)]
pub enum StateSpace {
    Discrete { count: usize },
    Continuous { dim: usize },
}

/// Static description of an environment: spaces, horizon, discount, and the
/// reward normalizer (so oracles can denormalize).
#[derive(Clone, Debug, PartialEq)]
pub struct EnvContract {
    pub state_space: StateSpace,
    pub action_counts: Vec<usize>,
    pub horizon: usize,
    pub discount: f64,
    pub reward_normalizer: f64,
}

impl EnvContract {
    pub fn agents(&self) -> usize {
        self.action_counts.len()
    }

    pub fn state_count(&self) -> usize {
        match self.state_space {
            StateSpace::Discrete { count } => count,
            StateSpace::Continuous { .. } => panic!("discrete state count requested"),
        }
    }
}

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: usize,
    /// Per-agent external rewards.
    pub rewards: Vec<f64>,
    pub done: bool,
}

/// A sequential Markov game environment with discrete states.
pub trait Env {
    fn contract(&self) -> &EnvContract;
    /// Current state index.
    fn state(&self) -> usize;
    fn is_done(&self) -> bool;
    /// Returns the initial state; deterministic given construction.
    fn reset(&mut self) -> usize;
    fn step(&mut self, joint_action: &[usize]) -> Result<StepOutcome, SmgError>;
}

pub(crate) fn validate_joint(contract: &EnvContract, joint: &[usize]) -> Result<(), SmgError> {
    if joint.len() != contract.agents() {
        return Err(SmgError::JointActionLength {
            got: joint.len(),
            expected: contract.agents(),
        });
    }
    for (agent, (&a, &count)) in joint.iter().zip(&contract.action_counts).enumerate() {
        if a >= count {
            return Err(SmgError::ActionOutOfRange {
                agent,
                action: a,
                count,
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Subgame states
// ---------------------------------------------------------------------------

/// What one agent observes before acting: the base state plus the actions of
/// every agent that already acted this step, in acting order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubgameState {
    pub state: usize,
    /// `(agent, action)` pairs of the predecessors, acting order.
    pub predecessors: Vec<(usize, usize)>,
}

/// Fixed-size observation encoding for one agent: the state one-hot followed
/// by, per other agent in native order, a `(count + 1)`-way one-hot of its
/// action with an extra "not yet acted" symbol. The same layout backs the
/// tabular index, so every approximator kind sees the identical information
/// pattern.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentObsEncoder {
    pub agent: usize,
    pub state_count: usize,
    /// Action counts of all agents, native order.
    pub action_counts: Vec<usize>,
}

impl AgentObsEncoder {
    pub fn new(agent: usize, state_count: usize, action_counts: Vec<usize>) -> Self {
        AgentObsEncoder {
            agent,
            state_count,
            action_counts,
        }
    }

    fn others(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.action_counts
            .iter()
            .copied()
            .enumerate()
            .filter(move |(j, _)| *j != self.agent)
    }

    /// Rows of the tabular view: `state_count * prod(count_j + 1)`.
    pub fn table_size(&self) -> usize {
        self.state_count * self.others().map(|(_, c)| c + 1).product::<usize>()
    }

    /// Tabular index of an observation.
    pub fn index(&self, obs: &SubgameState) -> usize {
        let mut idx = obs.state;
        for (j, count) in self.others() {
            let symbol = obs
                .predecessors
                .iter()
                .find(|(agent, _)| *agent == j)
                .map_or(count, |(_, action)| *action);
            idx = idx * (count + 1) + symbol;
        }
        idx
    }

    pub fn feature_dim(&self) -> usize {
        self.state_count + self.others().map(|(_, c)| c + 1).sum::<usize>()
    }

    /// One-hot feature encoding of an observation.
    pub fn features(&self, obs: &SubgameState) -> Vec<f64> {
        let mut out = vec![0.0; self.feature_dim()];
        out[obs.state] = 1.0;
        let mut offset = self.state_count;
        for (j, count) in self.others() {
            let symbol = obs
                .predecessors
                .iter()
                .find(|(agent, _)| *agent == j)
                .map_or(count, |(_, action)| *action);
            out[offset + symbol] = 1.0;
            offset += count + 1;
        }
        out
    }
}

/// Per-agent decision source used during rollouts. Implemented by the
/// trainer's lower agents and by instrumented test policies.
pub trait AgentPolicy {
    fn distribution(&self, obs: &SubgameState) -> Result<ActionDistribution, PolicyError>;
}

// ---------------------------------------------------------------------------
// Transitions
// ---------------------------------------------------------------------------

/// One per-step record in the lower buffer. Log-probabilities are stored at
/// collection time and never recomputed; each agent's observation is
/// reconstructable from the joint action and the active ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct LowerTransition {
    pub state: usize,
    pub joint_action: Vec<usize>,
    /// Per-agent external rewards.
    pub rewards: Vec<f64>,
    pub next_state: usize,
    /// Per-agent log-probability of the chosen action at collection time.
    pub old_log_probs: Vec<f64>,
    pub ordering: ExecutionOrder,
    pub done: bool,
}

impl LowerTransition {
    /// Rebuilds agent `agent`'s observation at collection time.
    pub fn observation_for(&self, agent: usize, scheme: &GroupScheme) -> SubgameState {
        let acting = scheme.acting_order(&self.ordering);
        let position = acting
            .iter()
            .position(|&a| a == agent)
            .expect("agent participates in the ordering");
        let predecessors = acting[..position]
            .iter()
            .map(|&a| (a, self.joint_action[a]))
            .collect();
        SubgameState {
            state: self.state,
            predecessors,
        }
    }
}

/// One per-window record in the upper buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct UpperTransition {
    pub start_state: usize,
    /// Index of the active option in the trainer's option set.
    pub option: usize,
    pub ordering: ExecutionOrder,
    /// Team-summed external reward over the window.
    pub window_return: f64,
    pub end_state: usize,
    pub done: bool,
    /// Steps actually executed (can be shorter than `k` at episode end).
    pub len: usize,
    /// Joint action taken at the window's first step (the composite action
    /// the tabular option-action table is keyed by).
    pub first_action: Vec<usize>,
    /// Log-probability of the option under the option policy at collection.
    pub old_log_prob: f64,
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

/// Executes up to `k` environment steps under a fixed ordering. Within each
/// step the agents act sequentially in ordering position (members of a group
/// in native index order), each sampling from its policy given its subgame
/// state. Returns the per-step records and the aggregated window record
/// (option index and log-probability left for the caller to fill).
pub fn rollout_window<R: Rng>(
    env: &mut dyn Env,
    ordering: &ExecutionOrder,
    scheme: &GroupScheme,
    policies: &[&dyn AgentPolicy],
    k: usize,
    rng: &mut R,
) -> Result<(Vec<LowerTransition>, UpperTransition), SmgError> {
    if k == 0 {
        return Err(SmgError::ZeroWindow);
    }
    if env.is_done() {
        return Err(SmgError::EpisodeFinished);
    }
    let n = env.contract().agents();
    let acting = scheme.acting_order(ordering);
    let start_state = env.state();

    let mut lower = Vec::with_capacity(k);
    let mut window_return = 0.0;
    let mut first_action = Vec::new();

    for _ in 0..k {
        let state = env.state();
        let mut joint = vec![usize::MAX; n];
        let mut predecessors: Vec<(usize, usize)> = Vec::with_capacity(n);
        let mut log_probs = vec![0.0; n];
        for &agent in &acting {
            let obs = SubgameState {
                state,
                predecessors: predecessors.clone(),
            };
            let dist = policies[agent]
                .distribution(&obs)
                .map_err(|source| SmgError::Policy { agent, source })?;
            let action = dist.sample_with(rng.random::<f64>());
            log_probs[agent] = dist.log_prob(action);
            joint[agent] = action;
            predecessors.push((agent, action));
        }
        let outcome = env.step(&joint)?;
        window_return += outcome.rewards.iter().sum::<f64>();
        if first_action.is_empty() {
            first_action = joint.clone();
        }
        lower.push(LowerTransition {
            state,
            joint_action: joint,
            rewards: outcome.rewards,
            next_state: outcome.next_state,
            old_log_probs: log_probs,
            ordering: ordering.clone(),
            done: outcome.done,
        });
        if outcome.done {
            break;
        }
    }

    let last = lower.last().expect("at least one step executed");
    let upper = UpperTransition {
        start_state,
        option: 0,
        ordering: ordering.clone(),
        window_return,
        end_state: last.next_state,
        done: last.done,
        len: lower.len(),
        first_action,
        old_log_prob: 0.0,
    };
    Ok((lower, upper))
}

/// Discounted suffix sums: `R_t = sum_{u >= t} gamma^(u-t) r_u`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Trajectory dump: columns `t,state,a_1..a_n,r_1..r_n,ordering,done`.
pub fn trajectory_csv(transitions: &[LowerTransition]) -> String {
    let n = transitions.first().map_or(0, |t| t.joint_action.len());
    let mut out = String::from("t,state");
    for a in 1..=n {
        let _ = write!(out, ",a_{a}");
    }
    for r in 1..=n {
        let _ = write!(out, ",r_{r}");
    }
    out.push_str(",ordering,done\n");
    for (t, tr) in transitions.iter().enumerate() {
        let _ = write!(out, "{t},{}", tr.state);
        for a in &tr.joint_action {
            let _ = write!(out, ",{a}");
        }
        for r in &tr.rewards {
            let _ = write!(out, ",{r}");
        }
        let _ = writeln!(out, ",{},{}", tr.ordering, tr.done);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::cell::RefCell;

    /// Two-agent counter environment: state is the step index, rewards are
    /// the chosen actions.
    struct CounterEnv {
        contract: EnvContract,
        t: usize,
        done: bool,
    }

    impl CounterEnv {
        fn new(horizon: usize) -> Self {
            CounterEnv {
                contract: EnvContract {
                    state_space: StateSpace::Discrete { count: horizon + 1 },
                    action_counts: vec![2, 3],
                    horizon,
                    discount: 1.0,
                    reward_normalizer: 1.0,
                },
                t: 0,
                done: false,
            }
        }
    }

    impl Env for CounterEnv {
        fn contract(&self) -> &EnvContract {
            &self.contract
        }
        fn state(&self) -> usize {
            self.t
        }
        fn is_done(&self) -> bool {
            self.done
        }
        fn reset(&mut self) -> usize {
            self.t = 0;
            self.done = false;
            0
        }
        fn step(&mut self, joint: &[usize]) -> Result<StepOutcome, SmgError> {
            if self.done {
                return Err(SmgError::EpisodeFinished);
            }
            validate_joint(&self.contract, joint)?;
            self.t += 1;
            self.done = self.t >= self.contract.horizon;
            Ok(StepOutcome {
                next_state: self.t,
                rewards: joint.iter().map(|&a| a as f64).collect(),
                done: self.done,
            })
        }
    }

    struct UniformPolicy {
        actions: usize,
    }

    impl AgentPolicy for UniformPolicy {
        fn distribution(&self, _obs: &SubgameState) -> Result<ActionDistribution, PolicyError> {
            ActionDistribution::new(vec![1.0 / self.actions as f64; self.actions])
        }
    }

    /// Records every observation it is asked to act on.
    struct Recorder {
        actions: usize,
        seen: RefCell<Vec<SubgameState>>,
    }

    impl AgentPolicy for Recorder {
        fn distribution(&self, obs: &SubgameState) -> Result<ActionDistribution, PolicyError> {
            self.seen.borrow_mut().push(obs.clone());
            ActionDistribution::new(vec![1.0 / self.actions as f64; self.actions])
        }
    }

    fn singleton_ordering(perm: &[usize]) -> (ExecutionOrder, GroupScheme) {
        (
            ExecutionOrder::new(perm.to_vec()).unwrap(),
            GroupScheme::singletons(perm.len()),
        )
    }

    #[test]
    fn discounted_return_examples() {
        assert_eq!(discounted_returns(&[1.0, 1.0, 1.0], 1.0), vec![3.0, 2.0, 1.0]);
        assert_eq!(discounted_returns(&[1.0, 0.0, 0.0], 0.5), vec![1.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rewards: Vec<f64> = (0..16).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let fast = discounted_returns(&rewards, 0.93);
        for t in 0..rewards.len() {
            let mut brute = 0.0;
            for u in t..rewards.len() {
                brute += 0.93f64.powi((u - t) as i32) * rewards[u];
            }
            assert!((fast[t] - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn sequential_information_pattern() {
        // Under ordering [1, 0] agent 1 sees nothing and agent 0 sees
        // agent 1's action; permuting the ordering permutes who-sees-whom.
        let (ordering, scheme) = singleton_ordering(&[1, 0]);
        let mut env = CounterEnv::new(1);
        env.reset();
        let rec0 = Recorder {
            actions: 2,
            seen: RefCell::new(Vec::new()),
        };
        let rec1 = Recorder {
            actions: 3,
            seen: RefCell::new(Vec::new()),
        };
        let policies: Vec<&dyn AgentPolicy> = vec![&rec0, &rec1];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (lower, _) =
            rollout_window(&mut env, &ordering, &scheme, &policies, 1, &mut rng).unwrap();
        let seen1 = rec1.seen.borrow();
        assert_eq!(seen1[0].predecessors, vec![]);
        let seen0 = rec0.seen.borrow();
        assert_eq!(seen0[0].predecessors.len(), 1);
        assert_eq!(seen0[0].predecessors[0].0, 1);
        assert_eq!(seen0[0].predecessors[0].1, lower[0].joint_action[1]);
    }

    #[test]
    fn window_accounting_and_partial_final_window() {
        let (ordering, scheme) = singleton_ordering(&[0, 1]);
        let p0 = UniformPolicy { actions: 2 };
        let p1 = UniformPolicy { actions: 3 };
        let policies: Vec<&dyn AgentPolicy> = vec![&p0, &p1];
        let mut env = CounterEnv::new(5);
        env.reset();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut lower_total = 0;
        let mut windows = 0;
        while !env.is_done() {
            let (lower, upper) =
                rollout_window(&mut env, &ordering, &scheme, &policies, 2, &mut rng).unwrap();
            let expect: f64 = lower
                .iter()
                .map(|t| t.rewards.iter().sum::<f64>())
                .sum();
            assert!((upper.window_return - expect).abs() < 1e-9);
            assert_eq!(upper.len, lower.len());
            lower_total += lower.len();
            windows += 1;
        }
        // H = 5, k = 2: windows of length 2, 2, 1.
        assert_eq!(lower_total, 5);
        assert_eq!(windows, 3);
        assert!(matches!(
            rollout_window(&mut env, &ordering, &scheme, &policies, 2, &mut rng),
            Err(SmgError::EpisodeFinished)
        ));
    }

    #[test]
    fn rollouts_are_deterministic_given_seed() {
        let (ordering, scheme) = singleton_ordering(&[0, 1]);
        let p0 = UniformPolicy { actions: 2 };
        let p1 = UniformPolicy { actions: 3 };
        let policies: Vec<&dyn AgentPolicy> = vec![&p0, &p1];
        let run = || {
            let mut env = CounterEnv::new(4);
            env.reset();
            let mut rng = ChaCha8Rng::seed_from_u64(1234);
            let mut all = Vec::new();
            while !env.is_done() {
                let (lower, _) =
                    rollout_window(&mut env, &ordering, &scheme, &policies, 2, &mut rng).unwrap();
                all.extend(lower);
            }
            all
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn observation_reconstruction_matches_collection() {
        let (ordering, scheme) = singleton_ordering(&[1, 0]);
        let p0 = UniformPolicy { actions: 2 };
        let p1 = UniformPolicy { actions: 3 };
        let policies: Vec<&dyn AgentPolicy> = vec![&p0, &p1];
        let mut env = CounterEnv::new(2);
        env.reset();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (lower, _) =
            rollout_window(&mut env, &ordering, &scheme, &policies, 2, &mut rng).unwrap();
        for tr in &lower {
            let obs1 = tr.observation_for(1, &scheme);
            assert_eq!(obs1.predecessors, vec![]);
            let obs0 = tr.observation_for(0, &scheme);
            assert_eq!(obs0.predecessors, vec![(1, tr.joint_action[1])]);
        }
    }

    #[test]
    fn encoder_index_and_features_agree() {
        let enc = AgentObsEncoder::new(0, 2, vec![2, 3, 2]);
        assert_eq!(enc.table_size(), 2 * 4 * 3);
        assert_eq!(enc.feature_dim(), 2 + 4 + 3);
        let mut seen = std::collections::HashSet::new();
        for state in 0..2 {
            for sym1 in 0..4usize {
                for sym2 in 0..3usize {
                    let mut predecessors = Vec::new();
                    if sym1 < 3 {
                        predecessors.push((1, sym1));
                    }
                    if sym2 < 2 {
                        predecessors.push((2, sym2));
                    }
                    let obs = SubgameState {
                        state,
                        predecessors,
                    };
                    let idx = enc.index(&obs);
                    assert!(idx < enc.table_size());
                    assert!(seen.insert(idx), "index collision at {idx}");
                    let f = enc.features(&obs);
                    assert_eq!(f.iter().filter(|&&v| v == 1.0).count(), 3);
                }
            }
        }
        assert_eq!(seen.len(), enc.table_size());
    }

    #[test]
    fn trajectory_csv_layout() {
        let tr = LowerTransition {
            state: 0,
            joint_action: vec![1, 2],
            rewards: vec![0.5, -0.25],
            next_state: 1,
            old_log_probs: vec![-0.1, -0.2],
            ordering: ExecutionOrder::new(vec![0, 1]).unwrap(),
            done: true,
        };
        let csv = trajectory_csv(&[tr]);
        assert_eq!(
            csv,
            "t,state,a_1,a_2,r_1,r_2,ordering,done\n0,0,1,2,0.5,-0.25,0-1,true\n"
        );
    }
}
