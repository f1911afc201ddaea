//! Hierarchical priority-adjustment trainer.
//!
//! An option-critic upper level treats each execution order as an option: a
//! categorical option policy picks the order per window, a termination head
//! decides whether to keep it, and a tabular option-action value table plus a
//! state critic score the choices. Lower per-agent policies act every step;
//! the upper level acts every `k` steps, and its advantage is spread over the
//! window as an intrinsic reward that joins the external reward for lower
//! training. All randomness flows from one seed through named sub-streams.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::EnvParams;
use crate::games::{enumerate_orderings, ExecutionOrder, GameError, GroupScheme};
use crate::policy::{
    entropy_logit_grad, gae_advantages, log_prob_logit_grad, ppo_clip_grad_logp, ppo_clip_term,
    value_clip_grad, value_clip_loss, ActionDistribution, Approximator, GradAscent, Input,
    PolicyError,
};
use crate::smg::{
    rollout_window, AgentObsEncoder, AgentPolicy, Env, LowerTransition, SmgError, SubgameState,
    UpperTransition,
};

#[derive(Debug, Error)]
pub enum HpaError {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("non-finite {what}; update aborted")]
    NonFinite { what: String },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Smg(#[from] SmgError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("artifact directory malformed: {0}")]
    Artifacts(String),
}

fn config_err(field: &str, reason: impl Into<String>) -> HpaError {
    HpaError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Trainer hyperparameters. The JSON config file mirrors these field names.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct HpaConfig {
    /// Window length: the upper level acts every `k` steps.
    pub k: usize,
    /// Lower-level discount per environment step.
    pub gamma: f64,
    /// Upper-level discount per window.
    pub gamma_upper: f64,
    /// PPO clip range (also the value-clip width).
    pub clip: f64,
    /// Entropy bonus coefficient.
    pub entropy_coef: f64,
    /// Termination regularizer biasing options to keep running.
    pub termination_reg: f64,
    /// TD step size of the option-action table.
    pub lr_qu: f64,
    /// Termination-head step size.
    pub lr_termination: f64,
    /// Policy and critic step size (Adam).
    pub lr_policy: f64,
    /// GAE lambda for lower advantages.
    pub gae_lambda: f64,
    pub episodes: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Gradient passes over each episode batch.
    pub update_epochs: usize,
    /// Uniform mixture weight baked into every lower policy. Keeps every
    /// information-set row visited so best responses never freeze; the
    /// sampling distribution and the PPO ratios stay identical.
    pub exploration_floor: f64,
    /// Restrict the option set to a single fixed ordering.
    pub fixed_ordering: Option<Vec<usize>>,
}

impl Default for HpaConfig {
    fn default() -> Self {
        HpaConfig {
            k: 2,
            gamma: 0.99,
            gamma_upper: 0.99,
            clip: 0.2,
            entropy_coef: 0.01,
            termination_reg: 0.01,
            lr_qu: 0.2,
            lr_termination: 0.1,
            lr_policy: 0.03,
            gae_lambda: 0.95,
            episodes: 6250,
            horizon: 8,
            seed: 0,
            update_epochs: 4,
            exploration_floor: 0.1,
            fixed_ordering: None,
        }
    }
}

impl HpaConfig {
    pub fn validate(&self) -> Result<(), HpaError> {
        if self.k == 0 {
            return Err(config_err("k", "window length must be at least 1"));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(config_err("clip", "must lie in (0, 1)"));
        }
        for (field, rate) in [
            ("lr_qu", self.lr_qu),
            ("lr_termination", self.lr_termination),
            ("lr_policy", self.lr_policy),
        ] {
            if !(rate > 0.0) {
                return Err(config_err(field, "learning rate must be positive"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(config_err("gamma", "must lie in (0, 1]"));
        }
        if !(self.gamma_upper > 0.0 && self.gamma_upper <= 1.0) {
            return Err(config_err("gamma_upper", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(config_err("gae_lambda", "must lie in [0, 1]"));
        }
        if self.horizon == 0 {
            return Err(config_err("horizon", "must be at least 1"));
        }
        if self.update_epochs == 0 {
            return Err(config_err("update_epochs", "must be at least 1"));
        }
        if !(0.0..=0.5).contains(&self.exploration_floor) {
            return Err(config_err("exploration_floor", "must lie in [0, 0.5]"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Upper and lower state
// ---------------------------------------------------------------------------

/// Tabular option-action values keyed by (state, option, composite action).
/// Missing entries read as 0 and report an initialization flag.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptionActionTable {
    entries: BTreeMap<(usize, usize, usize), f64>,
}

impl OptionActionTable {
    /// Returns `(value, initialized)`.
    pub fn get(&self, state: usize, option: usize, action: usize) -> (f64, bool) {
        match self.entries.get(&(state, option, action)) {
            Some(&v) => (v, true),
            None => (0.0, false),
        }
    }

    pub fn add(&mut self, state: usize, option: usize, action: usize, delta: f64) {
        *self.entries.entry((state, option, action)).or_insert(0.0) += delta;
    }

    pub fn set(&mut self, state: usize, option: usize, action: usize, value: f64) {
        self.entries.insert((state, option, action), value);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<serde_json::Value> = self
            .entries
            .iter()
            .map(|(&(s, w, a), &v)| serde_json::json!([s, w, a, v]))
            .collect();
        let mut text = serde_json::to_string_pretty(&rows).expect("table serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, HpaError> {
        let rows: Vec<(usize, usize, usize, f64)> = serde_json::from_str(text)
            .map_err(|e| HpaError::Artifacts(format!("option table: {e}")))?;
        let mut table = OptionActionTable::default();
        for (s, w, a, v) in rows {
            table.set(s, w, a, v);
        }
        Ok(table)
    }
}

/// The upper option-critic level.
#[derive(Clone, Debug)]
pub struct UpperState {
    pub options: Vec<ExecutionOrder>,
    /// Categorical option policy: logits per (state, option).
    pub option_policy: Approximator,
    /// State value head.
    pub critic: Approximator,
    /// Termination logits per (state, option); probability via sigmoid.
    pub termination: Approximator,
    pub option_values: OptionActionTable,
    state_count: usize,
}

/// Termination logits start positive (beta ~ 0.88) so early boundaries
/// re-consult the option policy and every (state, option) pair keeps getting
/// on-policy coverage; they stay clamped inside the limit, which both keeps
/// the sigmoid responsive and leaves a small floor of option re-selection.
const TERMINATION_LOGIT_INIT: f64 = 2.0;
const TERMINATION_LOGIT_MIN: f64 = -4.0;
const TERMINATION_LOGIT_MAX: f64 = 4.0;

impl UpperState {
    pub fn new(state_count: usize, options: Vec<ExecutionOrder>) -> Self {
        let n_opt = options.len();
        let mut termination = Approximator::tabular(state_count, n_opt);
        for z in termination.params_mut() {
            *z = TERMINATION_LOGIT_INIT;
        }
        UpperState {
            options,
            option_policy: Approximator::tabular(state_count, n_opt),
            critic: Approximator::tabular(state_count, 1),
            termination,
            option_values: OptionActionTable::default(),
            state_count,
        }
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn option_count(&self) -> usize {
        self.options.len()
    }

    pub fn option_distribution(&self, state: usize) -> Result<ActionDistribution, PolicyError> {
        self.option_policy.policy(Input::Index(state))
    }

    /// Termination probability of `option` at `state`.
    pub fn termination_prob(&self, state: usize, option: usize) -> f64 {
        let z = self.termination.forward(Input::Index(state))[option];
        1.0 / (1.0 + (-z).exp())
    }

    pub fn state_value(&self, state: usize) -> f64 {
        self.critic.value(Input::Index(state))
    }
}

/// One lower agent: tabular softmax policy over its observation encoding,
/// mixed with a uniform exploration floor, plus a state-value critic. The
/// mixture is the policy — sampling, stored log-probabilities, and the PPO
/// ratios all use it.
#[derive(Clone, Debug)]
pub struct LowerAgent {
    pub agent: usize,
    pub encoder: AgentObsEncoder,
    pub policy: Approximator,
    pub critic: Approximator,
    pub floor: f64,
}

impl LowerAgent {
    pub fn new(agent: usize, state_count: usize, action_counts: Vec<usize>, floor: f64) -> Self {
        let actions = action_counts[agent];
        let encoder = AgentObsEncoder::new(agent, state_count, action_counts);
        LowerAgent {
            agent,
            policy: Approximator::tabular(encoder.table_size(), actions),
            critic: Approximator::tabular(state_count, 1),
            encoder,
            floor,
        }
    }

    /// Softmax head before the floor is applied.
    fn softmax(&self, row: usize) -> Result<ActionDistribution, PolicyError> {
        self.policy.policy(Input::Index(row))
    }
}

impl AgentPolicy for LowerAgent {
    fn distribution(&self, obs: &SubgameState) -> Result<ActionDistribution, PolicyError> {
        let softmax = self.softmax(self.encoder.index(obs))?;
        ActionDistribution::new(floor_mix(softmax.probs(), self.floor))
    }
}

fn floor_mix(probs: &[f64], floor: f64) -> Vec<f64> {
    let uniform = floor / probs.len() as f64;
    probs.iter().map(|p| (1.0 - floor) * p + uniform).collect()
}

/// Gradient of `log mix[action]` with respect to the softmax logits, where
/// `mix = (1 - floor) * softmax + floor / m`.
fn mix_log_prob_logit_grad(
    softmax: &[f64],
    mix: &[f64],
    action: usize,
    floor: f64,
) -> Vec<f64> {
    let p_a = softmax[action];
    softmax
        .iter()
        .enumerate()
        .map(|(j, &p_j)| {
            let indicator = if j == action { 1.0 } else { 0.0 };
            (1.0 - floor) * p_a * (indicator - p_j) / mix[action]
        })
        .collect()
}

/// Gradient of the mixture's Shannon entropy with respect to the logits.
fn mix_entropy_logit_grad(softmax: &[f64], mix: &[f64], floor: f64) -> Vec<f64> {
    let mean_log: f64 = softmax
        .iter()
        .zip(mix)
        .map(|(&p, &m)| p * m.ln())
        .sum();
    softmax
        .iter()
        .zip(mix)
        .map(|(&p_j, &m_j)| -(1.0 - floor) * p_j * (m_j.ln() - mean_log))
        .collect()
}

fn composite_index(action_counts: &[usize], joint: &[usize]) -> usize {
    let mut idx = 0;
    for (&a, &m) in joint.iter().zip(action_counts) {
        idx = idx * m + a;
    }
    idx
}

fn all_joint_actions(action_counts: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = action_counts.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut joint = vec![0usize; action_counts.len()];
    for _ in 0..total {
        out.push(joint.clone());
        for pos in (0..joint.len()).rev() {
            joint[pos] += 1;
            if joint[pos] < action_counts[pos] {
                break;
            }
            joint[pos] = 0;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Upper-level operations
// ---------------------------------------------------------------------------

/// Window-boundary option choice: terminate the previous option with its
/// termination probability, then sample the option policy (always on the
/// first window); otherwise keep it. Returns the choice, its log-probability
/// under the option policy, and whether a fresh sample happened.
pub fn select_option(
    upper: &UpperState,
    state: usize,
    prev: Option<usize>,
    rng: &mut impl Rng,
) -> Result<(usize, f64, bool), HpaError> {
    let dist = upper.option_distribution(state)?;
    let (choice, sampled) = match prev {
        None => (dist.sample_with(rng.random::<f64>()), true),
        Some(prev_option) => {
            let beta = upper.termination_prob(state, prev_option);
            if !(0.0..=1.0).contains(&beta) {
                return Err(HpaError::NonFinite {
                    what: "termination probability".to_string(),
                });
            }
            if rng.random::<f64>() < beta {
                (dist.sample_with(rng.random::<f64>()), true)
            } else {
                (prev_option, false)
            }
        }
    };
    Ok((choice, dist.log_prob(choice), sampled))
}

/// Option value `Q(s, option)`: expectation of the option-action table over
/// the ordered joint lower-policy distribution at `state`.
pub fn q_omega(
    upper: &UpperState,
    state: usize,
    option: usize,
    lower: &[LowerAgent],
    scheme: &GroupScheme,
) -> Result<f64, HpaError> {
    let action_counts: Vec<usize> = lower
        .iter()
        .map(|ag| ag.encoder.action_counts[ag.agent])
        .collect();
    let acting = scheme.acting_order(&upper.options[option]);
    let mut total = 0.0;
    for joint in all_joint_actions(&action_counts) {
        let mut prob = 1.0;
        let mut predecessors: Vec<(usize, usize)> = Vec::with_capacity(acting.len());
        for &agent in &acting {
            let obs = SubgameState {
                state,
                predecessors: predecessors.clone(),
            };
            let dist = lower[agent].distribution(&obs)?;
            prob *= dist.probs()[joint[agent]];
            predecessors.push((agent, joint[agent]));
        }
        if prob == 0.0 {
            continue;
        }
        let (value, _) = upper
            .option_values
            .get(state, option, composite_index(&action_counts, &joint));
        total += prob * value;
    }
    Ok(total)
}

fn best_q_omega(
    upper: &UpperState,
    state: usize,
    lower: &[LowerAgent],
    scheme: &GroupScheme,
) -> Result<f64, HpaError> {
    let mut best = f64::NEG_INFINITY;
    for option in 0..upper.option_count() {
        best = best.max(q_omega(upper, state, option, lower, scheme)?);
    }
    Ok(best)
}

/// Termination target `U(option, s')`: the convex combination
/// `(1 - beta) Q(s', option) + beta V(s')`.
pub fn u_target(
    upper: &UpperState,
    option: usize,
    next_state: usize,
    lower: &[LowerAgent],
    scheme: &GroupScheme,
) -> Result<f64, HpaError> {
    let beta = upper.termination_prob(next_state, option);
    let q = q_omega(upper, next_state, option, lower, scheme)?;
    Ok((1.0 - beta) * q + beta * upper.state_value(next_state))
}

/// Window-level TD update of the option-action table. Terminal windows use
/// only the reward term; otherwise the target bootstraps through the
/// termination-weighted continuation.
pub fn td_update_qu(
    upper: &mut UpperState,
    transition: &UpperTransition,
    lower: &[LowerAgent],
    scheme: &GroupScheme,
    cfg: &HpaConfig,
) -> Result<f64, HpaError> {
    let action_counts: Vec<usize> = lower
        .iter()
        .map(|ag| ag.encoder.action_counts[ag.agent])
        .collect();
    let action = composite_index(&action_counts, &transition.first_action);
    let (current, _) = upper
        .option_values
        .get(transition.start_state, transition.option, action);
    let mut delta = transition.window_return - current;
    if !transition.done {
        let beta = upper.termination_prob(transition.end_state, transition.option);
        let continuation =
            q_omega(upper, transition.end_state, transition.option, lower, scheme)?;
        let best = best_q_omega(upper, transition.end_state, lower, scheme)?;
        delta += cfg.gamma_upper * ((1.0 - beta) * continuation + beta * best);
    }
    if !delta.is_finite() {
        return Err(HpaError::NonFinite {
            what: "option-value TD error".to_string(),
        });
    }
    upper.option_values.add(
        transition.start_state,
        transition.option,
        action,
        cfg.lr_qu * delta,
    );
    Ok(delta)
}

/// Termination gradient step at the window's end state: descends
/// `beta(s') * (Q(s', option) - max over alternatives + psi)`, so the head
/// learns to keep options that beat every alternative and to cut the rest.
/// Returns the local objective value.
pub fn termination_step(
    upper: &mut UpperState,
    next_state: usize,
    option: usize,
    lower: &[LowerAgent],
    scheme: &GroupScheme,
    cfg: &HpaConfig,
) -> Result<f64, HpaError> {
    let q_self = q_omega(upper, next_state, option, lower, scheme)?;
    let mut best_alt = f64::NEG_INFINITY;
    for other in 0..upper.option_count() {
        if other != option {
            best_alt = best_alt.max(q_omega(upper, next_state, other, lower, scheme)?);
        }
    }
    let advantage = if best_alt.is_finite() {
        q_self - best_alt
    } else {
        0.0
    };
    let coefficient = advantage + cfg.termination_reg;
    let beta = upper.termination_prob(next_state, option);
    let grad = beta * (1.0 - beta) * coefficient;
    if !grad.is_finite() {
        return Err(HpaError::NonFinite {
            what: "termination gradient".to_string(),
        });
    }
    let n_opt = upper.option_count();
    let slot = &mut upper.termination.params_mut()[next_state * n_opt + option];
    *slot = (*slot - cfg.lr_termination * grad)
        .clamp(TERMINATION_LOGIT_MIN, TERMINATION_LOGIT_MAX);
    Ok(beta * coefficient)
}

/// Upper advantage of one window against the critic baseline:
/// `R + gamma_u * V(s') * (1 - done) - V(s)`.
pub fn upper_advantage(upper: &UpperState, t: &UpperTransition, gamma_upper: f64) -> f64 {
    let bootstrap = if t.done {
        0.0
    } else {
        gamma_upper * upper.state_value(t.end_state)
    };
    t.window_return + bootstrap - upper.state_value(t.start_state)
}

/// Option advantage `Q(s, option) - V(s)`: the intrinsic-reward source.
///
/// Unlike the realized window advantage, this is fixed once the option is
/// chosen, so spreading it over the window cannot tilt any agent's
/// preference between its own actions — it passes the upper level's option
/// assessment down without overriding the per-agent external rewards.
pub fn option_advantage(
    upper: &UpperState,
    state: usize,
    option: usize,
    lower: &[LowerAgent],
    scheme: &GroupScheme,
) -> Result<f64, HpaError> {
    Ok(q_omega(upper, state, option, lower, scheme)? - upper.state_value(state))
}

/// Spreads a window advantage evenly over its steps. The divisor is always
/// `k`; a truncated final window receives fewer (identical) entries.
pub fn intrinsic_rewards(upper_advantage: f64, k: usize, window_len: usize) -> Vec<f64> {
    vec![upper_advantage / k as f64; window_len]
}

/// Per-episode losses of the upper updates.
#[derive(Clone, Copy, Debug, Default)]
pub struct UpperLosses {
    pub policy: f64,
    pub critic: f64,
    pub entropy: f64,
}

/// Clipped-surrogate update of the option policy (ratios over options, with
/// entropy bonus) and clipped regression of the critic onto the bootstrapped
/// window return. Advantage and targets are frozen against the pre-update
/// critic. A non-finite gradient aborts the update.
pub fn upper_policy_update(
    upper: &mut UpperState,
    batch: &[UpperTransition],
    cfg: &HpaConfig,
    opt_policy: &mut GradAscent,
    opt_critic: &mut GradAscent,
) -> Result<UpperLosses, HpaError> {
    if batch.is_empty() {
        return Ok(UpperLosses::default());
    }
    let v_old: Vec<f64> = (0..upper.state_count)
        .map(|s| upper.state_value(s))
        .collect();
    let targets: Vec<f64> = batch
        .iter()
        .map(|t| {
            let bootstrap = if t.done {
                0.0
            } else {
                cfg.gamma_upper * v_old[t.end_state]
            };
            t.window_return + bootstrap
        })
        .collect();
    let advantages: Vec<f64> = batch
        .iter()
        .zip(&targets)
        .map(|(t, target)| target - v_old[t.start_state])
        .collect();

    let scale = 1.0 / batch.len() as f64;
    let mut losses = UpperLosses::default();
    for _ in 0..cfg.update_epochs {
        let mut policy_grad = vec![0.0; upper.option_policy.param_count()];
        let mut critic_grad = vec![0.0; upper.critic.param_count()];
        let mut policy_obj = 0.0;
        let mut critic_loss = 0.0;
        let mut entropy_sum = 0.0;
        for (t, (&target, &adv)) in batch.iter().zip(targets.iter().zip(&advantages)) {
            let dist = upper.option_distribution(t.start_state)?;
            let ratio = (dist.log_prob(t.option) - t.old_log_prob).exp();
            let coef = ppo_clip_grad_logp(ratio, adv, cfg.clip);
            let lp = log_prob_logit_grad(&dist, t.option);
            let ent = entropy_logit_grad(&dist);
            let upstream: Vec<f64> = lp
                .iter()
                .zip(&ent)
                .map(|(l, e)| scale * (coef * l + cfg.entropy_coef * e))
                .collect();
            upper
                .option_policy
                .backward(Input::Index(t.start_state), &upstream, &mut policy_grad);
            policy_obj +=
                scale * (ppo_clip_term(ratio, adv, cfg.clip)? + cfg.entropy_coef * dist.entropy());
            entropy_sum += scale * dist.entropy();

            let v_new = upper.state_value(t.start_state);
            critic_loss +=
                scale * value_clip_loss(v_new, v_old[t.start_state], target, cfg.clip);
            let g = value_clip_grad(v_new, v_old[t.start_state], target, cfg.clip);
            upper.critic.backward(
                Input::Index(t.start_state),
                &[-scale * g],
                &mut critic_grad,
            );
        }
        if policy_grad.iter().any(|g| !g.is_finite())
            || critic_grad.iter().any(|g| !g.is_finite())
        {
            return Err(HpaError::NonFinite {
                what: "upper update gradient".to_string(),
            });
        }
        opt_policy.step(upper.option_policy.params_mut(), &policy_grad);
        opt_critic.step(upper.critic.params_mut(), &critic_grad);
        losses = UpperLosses {
            policy: -policy_obj,
            critic: critic_loss,
            entropy: entropy_sum,
        };
    }
    Ok(losses)
}

// ---------------------------------------------------------------------------
// Lower-level update
// ---------------------------------------------------------------------------

/// Per-agent clipped-surrogate and clipped-value update over one episode.
/// `merged_rewards[t][agent]` already contains external plus intrinsic
/// reward. Agents are updated in the acting order of the episode's first
/// window. Returns one loss per agent (surrogate negated plus value loss).
pub fn lower_policy_update(
    lower: &mut [LowerAgent],
    episode: &[LowerTransition],
    merged_rewards: &[Vec<f64>],
    scheme: &GroupScheme,
    cfg: &HpaConfig,
    opt_policy: &mut [GradAscent],
    opt_critic: &mut [GradAscent],
) -> Result<Vec<f64>, HpaError> {
    let mut losses = vec![0.0; lower.len()];
    if episode.is_empty() {
        return Ok(losses);
    }
    let steps = episode.len();
    let scale = 1.0 / steps as f64;
    let update_order = scheme.acting_order(&episode[0].ordering);

    for &agent in &update_order {
        let rewards: Vec<f64> = merged_rewards.iter().map(|r| r[agent]).collect();
        let mut values: Vec<f64> = episode
            .iter()
            .map(|t| lower[agent].critic.value(Input::Index(t.state)))
            .collect();
        let last = episode.last().expect("non-empty episode");
        values.push(if last.done {
            0.0
        } else {
            lower[agent].critic.value(Input::Index(last.next_state))
        });
        let advantages = gae_advantages(&rewards, &values, cfg.gamma, cfg.gae_lambda)?;
        let targets: Vec<f64> = advantages.iter().zip(&values).map(|(a, v)| a + v).collect();
        let v_old = values.clone();

        for _ in 0..cfg.update_epochs {
            let mut policy_grad = vec![0.0; lower[agent].policy.param_count()];
            let mut critic_grad = vec![0.0; lower[agent].critic.param_count()];
            let mut policy_obj = 0.0;
            let mut critic_loss = 0.0;
            for (t, tr) in episode.iter().enumerate() {
                let obs = tr.observation_for(agent, scheme);
                let row = lower[agent].encoder.index(&obs);
                let softmax = lower[agent].softmax(row)?;
                let floor = lower[agent].floor;
                let mix = ActionDistribution::new(floor_mix(softmax.probs(), floor))?;
                let action = tr.joint_action[agent];
                let ratio = (mix.log_prob(action) - tr.old_log_probs[agent]).exp();
                let coef = ppo_clip_grad_logp(ratio, advantages[t], cfg.clip);
                let lp = mix_log_prob_logit_grad(softmax.probs(), mix.probs(), action, floor);
                let ent = mix_entropy_logit_grad(softmax.probs(), mix.probs(), floor);
                let upstream: Vec<f64> = lp
                    .iter()
                    .zip(&ent)
                    .map(|(l, e)| scale * (coef * l + cfg.entropy_coef * e))
                    .collect();
                lower[agent]
                    .policy
                    .backward(Input::Index(row), &upstream, &mut policy_grad);
                policy_obj += scale
                    * (ppo_clip_term(ratio, advantages[t], cfg.clip)?
                        + cfg.entropy_coef * mix.entropy());

                let v_new = lower[agent].critic.value(Input::Index(tr.state));
                critic_loss += scale * value_clip_loss(v_new, v_old[t], targets[t], cfg.clip);
                let g = value_clip_grad(v_new, v_old[t], targets[t], cfg.clip);
                lower[agent].critic.backward(
                    Input::Index(tr.state),
                    &[-scale * g],
                    &mut critic_grad,
                );
            }
            if policy_grad.iter().any(|g| !g.is_finite())
                || critic_grad.iter().any(|g| !g.is_finite())
            {
                return Err(HpaError::NonFinite {
                    what: format!("lower agent {agent} gradient"),
                });
            }
            opt_policy[agent].step(lower[agent].policy.params_mut(), &policy_grad);
            opt_critic[agent].step(lower[agent].critic.params_mut(), &critic_grad);
            losses[agent] = -policy_obj + critic_loss;
        }
    }
    Ok(losses)
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct MetricsRow {
    pub episode: usize,
    pub env_steps: usize,
    pub mean_team_return: f64,
    pub upper_entropy: f64,
    pub option_freq: Vec<f64>,
    pub mean_upper_advantage: f64,
    pub loss_upper_policy: f64,
    pub loss_critic: f64,
    pub loss_termination: f64,
    pub lower_losses: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct Metrics {
    pub option_labels: Vec<String>,
    pub agent_count: usize,
    pub rows: Vec<MetricsRow>,
}

impl Metrics {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("episode,env_steps,mean_team_return,upper_entropy");
        for label in &self.option_labels {
            let _ = write!(out, ",freq_{label}");
        }
        out.push_str(",mean_upper_advantage,loss_upper_policy,loss_critic,loss_termination");
        for agent in 1..=self.agent_count {
            let _ = write!(out, ",lower_loss_{agent}");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{}",
                row.episode, row.env_steps, row.mean_team_return, row.upper_entropy
            );
            for f in &row.option_freq {
                let _ = write!(out, ",{f}");
            }
            let _ = write!(
                out,
                ",{},{},{},{}",
                row.mean_upper_advantage,
                row.loss_upper_policy,
                row.loss_critic,
                row.loss_termination
            );
            for l in &row.lower_losses {
                let _ = write!(out, ",{l}");
            }
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Everything a finished run produces: the trained components, per-episode
/// metrics, and the worst intrinsic-reward conservation error observed over
/// complete windows.
#[derive(Clone, Debug)]
pub struct TrainedArtifacts {
    pub config: HpaConfig,
    pub scheme: GroupScheme,
    pub options: Vec<ExecutionOrder>,
    pub upper: UpperState,
    pub lower: Vec<LowerAgent>,
    pub metrics: Metrics,
    pub conservation_max_err: f64,
}

fn substream(seed: u64, tag: &str) -> ChaCha8Rng {
    let mut h = 0xcbf29ce484222325u64 ^ seed;
    for b in tag.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100000001b3);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58476d1ce4e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d049bb133111eb);
    h ^= h >> 31;
    ChaCha8Rng::seed_from_u64(h)
}

/// Runs the full two-timescale loop: windowed rollouts under the sampled
/// option, intrinsic-reward merge, option-value TD and termination steps,
/// then the clipped-surrogate updates of both levels. Deterministic given
/// the config seed.
pub fn train(
    env: &mut dyn Env,
    scheme: &GroupScheme,
    cfg: &HpaConfig,
) -> Result<TrainedArtifacts, HpaError> {
    cfg.validate()?;
    let contract = env.contract().clone();
    let state_count = contract.state_count();
    let agents = contract.agents();
    if scheme.agent_count() != agents {
        return Err(config_err(
            "groups",
            format!(
                "scheme covers {} agents, environment has {agents}",
                scheme.agent_count()
            ),
        ));
    }
    let options = match &cfg.fixed_ordering {
        Some(perm) => {
            let ordering = ExecutionOrder::new(perm.clone())?;
            if ordering.len() != scheme.group_count() {
                return Err(config_err(
                    "fixed_ordering",
                    format!("must permute {} groups", scheme.group_count()),
                ));
            }
            vec![ordering]
        }
        None => enumerate_orderings(scheme)?,
    };

    let mut upper = UpperState::new(state_count, options.clone());
    let mut lower: Vec<LowerAgent> = (0..agents)
        .map(|agent| {
            LowerAgent::new(
                agent,
                state_count,
                contract.action_counts.clone(),
                cfg.exploration_floor,
            )
        })
        .collect();

    let mut opt_option = GradAscent::adam(cfg.lr_policy, upper.option_policy.param_count());
    let mut opt_upper_critic = GradAscent::adam(cfg.lr_policy, upper.critic.param_count());
    let mut opt_lower_policy: Vec<GradAscent> = lower
        .iter()
        .map(|ag| GradAscent::adam(cfg.lr_policy, ag.policy.param_count()))
        .collect();
    let mut opt_lower_critic: Vec<GradAscent> = lower
        .iter()
        .map(|ag| GradAscent::adam(cfg.lr_policy, ag.critic.param_count()))
        .collect();

    let mut upper_rng = substream(cfg.seed, "upper");
    let mut lower_rng = substream(cfg.seed, "lower");

    let mut metrics = Metrics {
        option_labels: options.iter().map(ToString::to_string).collect(),
        agent_count: agents,
        rows: Vec::with_capacity(cfg.episodes),
    };
    let mut conservation_max_err = 0.0_f64;
    let mut env_steps = 0usize;

    for episode in 0..cfg.episodes {
        env.reset();
        let mut prev: Option<usize> = None;
        let mut upper_buf: Vec<UpperTransition> = Vec::new();
        let mut lower_buf: Vec<LowerTransition> = Vec::new();

        while !env.is_done() {
            let state = env.state();
            let (option, log_prob, _) = select_option(&upper, state, prev, &mut upper_rng)?;
            let policies: Vec<&dyn AgentPolicy> =
                lower.iter().map(|ag| ag as &dyn AgentPolicy).collect();
            let (mut lows, mut up) = rollout_window(
                env,
                &options[option],
                scheme,
                &policies,
                cfg.k,
                &mut lower_rng,
            )?;
            up.option = option;
            up.old_log_prob = log_prob;
            prev = Some(option);
            lower_buf.append(&mut lows);
            upper_buf.push(up);
        }
        env_steps += lower_buf.len();

        // Intrinsic-reward merge against the pre-update upper state.
        let mut merged: Vec<Vec<f64>> = lower_buf.iter().map(|t| t.rewards.clone()).collect();
        let mut advantage_sum = 0.0;
        let mut offset = 0;
        for up in &upper_buf {
            advantage_sum += upper_advantage(&upper, up, cfg.gamma_upper);
            let source = option_advantage(&upper, up.start_state, up.option, &lower, scheme)?;
            let intrinsic = intrinsic_rewards(source, cfg.k, up.len);
            if up.len == cfg.k {
                let total: f64 = intrinsic.iter().sum();
                conservation_max_err = conservation_max_err.max((total - source).abs());
            }
            for (i, r) in intrinsic.iter().enumerate() {
                for slot in merged[offset + i].iter_mut() {
                    *slot += r;
                }
            }
            offset += up.len;
        }

        // Upper improvement: option-value TD, termination steps, then the
        // clipped policy/critic updates.
        let mut termination_loss = 0.0;
        let mut termination_count = 0usize;
        for up in &upper_buf {
            td_update_qu(&mut upper, up, &lower, scheme, cfg)?;
            if !up.done {
                termination_loss +=
                    termination_step(&mut upper, up.end_state, up.option, &lower, scheme, cfg)?;
                termination_count += 1;
            }
        }
        let upper_losses = upper_policy_update(
            &mut upper,
            &upper_buf,
            cfg,
            &mut opt_option,
            &mut opt_upper_critic,
        )?;
        let lower_losses = lower_policy_update(
            &mut lower,
            &lower_buf,
            &merged,
            scheme,
            cfg,
            &mut opt_lower_policy,
            &mut opt_lower_critic,
        )?;

        let team_return: f64 = lower_buf
            .iter()
            .map(|t| t.rewards.iter().sum::<f64>())
            .sum::<f64>()
            / lower_buf.len() as f64;
        let mut option_freq = vec![0.0; options.len()];
        for up in &upper_buf {
            option_freq[up.option] += 1.0;
        }
        for f in &mut option_freq {
            *f /= upper_buf.len() as f64;
        }
        metrics.rows.push(MetricsRow {
            episode,
            env_steps,
            mean_team_return: team_return,
            upper_entropy: upper_losses.entropy,
            option_freq,
            mean_upper_advantage: advantage_sum / upper_buf.len() as f64,
            loss_upper_policy: upper_losses.policy,
            loss_critic: upper_losses.critic,
            loss_termination: if termination_count > 0 {
                termination_loss / termination_count as f64
            } else {
                0.0
            },
            lower_losses,
        });
    }

    Ok(TrainedArtifacts {
        config: cfg.clone(),
        scheme: scheme.clone(),
        options,
        upper,
        lower,
        metrics,
        conservation_max_err,
    })
}

// ---------------------------------------------------------------------------
// Greedy evaluation
// ---------------------------------------------------------------------------

/// Greedy-policy evaluation report.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub boundaries: usize,
    pub mean_team_return_per_step: f64,
    /// Boundary counts per (state, option).
    pub option_histogram: Vec<Vec<usize>>,
}

/// Runs evaluation episodes with window length `k`: options follow the
/// trained upper level (termination sampled with its probability, fresh
/// options sampled from the option policy) through the seeded `eval`
/// sub-stream, while every agent takes its greedy argmax action.
/// Deterministic given the seed.
pub fn evaluate(
    env: &mut dyn Env,
    upper: &UpperState,
    lower: &[LowerAgent],
    scheme: &GroupScheme,
    k: usize,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport, HpaError> {
    evaluate_trace(env, upper, lower, scheme, k, episodes, seed).map(|(report, _)| report)
}

/// [`evaluate`] plus the per-step transition trace of every episode, in the
/// trajectory-dump layout.
pub fn evaluate_trace(
    env: &mut dyn Env,
    upper: &UpperState,
    lower: &[LowerAgent],
    scheme: &GroupScheme,
    k: usize,
    episodes: usize,
    seed: u64,
) -> Result<(EvalReport, Vec<LowerTransition>), HpaError> {
    if k == 0 {
        return Err(config_err("k", "window length must be at least 1"));
    }
    let state_count = env.contract().state_count();
    let agents = env.contract().agents();
    let mut histogram = vec![vec![0usize; upper.option_count()]; state_count];
    let mut boundaries = 0usize;
    let mut reward_sum = 0.0;
    let mut steps = 0usize;
    let mut rng = substream(seed, "eval");
    let mut trace = Vec::new();

    for _ in 0..episodes {
        env.reset();
        let mut prev: Option<usize> = None;
        while !env.is_done() {
            let state = env.state();
            let (option, _, _) = select_option(upper, state, prev, &mut rng)?;
            histogram[state][option] += 1;
            boundaries += 1;
            prev = Some(option);

            let ordering = &upper.options[option];
            let acting = scheme.acting_order(ordering);
            for _ in 0..k {
                if env.is_done() {
                    break;
                }
                let step_state = env.state();
                let mut joint = vec![0usize; agents];
                let mut log_probs = vec![0.0; agents];
                let mut predecessors: Vec<(usize, usize)> = Vec::with_capacity(agents);
                for &agent in &acting {
                    let obs = SubgameState {
                        state: step_state,
                        predecessors: predecessors.clone(),
                    };
                    let dist = lower[agent].distribution(&obs)?;
                    let action = dist.argmax();
                    log_probs[agent] = dist.log_prob(action);
                    joint[agent] = action;
                    predecessors.push((agent, action));
                }
                let outcome = env.step(&joint)?;
                reward_sum += outcome.rewards.iter().sum::<f64>();
                steps += 1;
                trace.push(LowerTransition {
                    state: step_state,
                    joint_action: joint,
                    rewards: outcome.rewards,
                    next_state: outcome.next_state,
                    old_log_probs: log_probs,
                    ordering: ordering.clone(),
                    done: outcome.done,
                });
            }
        }
    }

    let report = EvalReport {
        episodes,
        boundaries,
        mean_team_return_per_step: if steps > 0 {
            reward_sum / steps as f64
        } else {
            0.0
        },
        option_histogram: histogram,
    };
    Ok((report, trace))
}

// ---------------------------------------------------------------------------
// Artifact persistence
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ArtifactManifest {
    env_name: String,
    env_params: EnvParams,
    scheme: GroupScheme,
    options: Vec<ExecutionOrder>,
    config: HpaConfig,
    agents: usize,
    state_count: usize,
    action_counts: Vec<usize>,
    components: Vec<String>,
}

impl TrainedArtifacts {
    /// Writes metrics, one checkpoint per component, the option-value table,
    /// and the artifact manifest into `dir`. Returns the written paths.
    pub fn write_to_dir(
        &self,
        dir: &Path,
        env_name: &str,
        env_params: &EnvParams,
    ) -> Result<Vec<PathBuf>, HpaError> {
        std::fs::create_dir_all(dir).map_err(|source| HpaError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let mut written = Vec::new();
        let mut components = Vec::new();
        let seed = self.config.seed;

        let write = |name: &str, bytes: &[u8], written: &mut Vec<PathBuf>| -> Result<(), HpaError> {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|source| HpaError::Io {
                path: path.display().to_string(),
                source,
            })?;
            written.push(path);
            Ok(())
        };

        write("metrics.csv", self.metrics.to_csv().as_bytes(), &mut written)?;
        for (name, approx) in [
            ("upper_policy.ckpt", &self.upper.option_policy),
            ("upper_critic.ckpt", &self.upper.critic),
            ("termination.ckpt", &self.upper.termination),
        ] {
            write(name, &approx.to_checkpoint_bytes(seed), &mut written)?;
            components.push(name.to_string());
        }
        for agent in &self.lower {
            let pol = format!("lower_policy_{}.ckpt", agent.agent);
            write(&pol, &agent.policy.to_checkpoint_bytes(seed), &mut written)?;
            components.push(pol);
            let val = format!("lower_critic_{}.ckpt", agent.agent);
            write(&val, &agent.critic.to_checkpoint_bytes(seed), &mut written)?;
            components.push(val);
        }
        write(
            "option_values.json",
            self.upper.option_values.to_json().as_bytes(),
            &mut written,
        )?;
        components.push("option_values.json".to_string());

        let manifest = ArtifactManifest {
            env_name: env_name.to_string(),
            env_params: env_params.clone(),
            scheme: self.scheme.clone(),
            options: self.options.clone(),
            config: self.config.clone(),
            agents: self.lower.len(),
            state_count: self.upper.state_count(),
            action_counts: self
                .lower
                .first()
                .map(|ag| ag.encoder.action_counts.clone())
                .unwrap_or_default(),
            components,
        };
        let mut manifest_text =
            serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        manifest_text.push('\n');
        write("hpa_manifest.json", manifest_text.as_bytes(), &mut written)?;
        Ok(written)
    }
}

/// Artifacts reloaded from a run directory.
pub struct LoadedArtifacts {
    pub env_name: String,
    pub env_params: EnvParams,
    pub scheme: GroupScheme,
    pub options: Vec<ExecutionOrder>,
    pub config: HpaConfig,
    pub upper: UpperState,
    pub lower: Vec<LowerAgent>,
}

/// Reloads checkpoints written by [`TrainedArtifacts::write_to_dir`].
pub fn load_artifacts(dir: &Path) -> Result<LoadedArtifacts, HpaError> {
    let read = |name: &str| -> Result<Vec<u8>, HpaError> {
        let path = dir.join(name);
        std::fs::read(&path).map_err(|source| HpaError::Io {
            path: path.display().to_string(),
            source,
        })
    };
    let manifest_text = read("hpa_manifest.json")?;
    let manifest: ArtifactManifest = serde_json::from_slice(&manifest_text)
        .map_err(|e| HpaError::Artifacts(format!("manifest: {e}")))?;

    let load_approx = |name: &str| -> Result<Approximator, HpaError> {
        let bytes = read(name)?;
        let (approx, _) = Approximator::from_checkpoint_bytes(&bytes)?;
        Ok(approx)
    };

    let mut upper = UpperState::new(manifest.state_count, manifest.options.clone());
    upper.option_policy = load_approx("upper_policy.ckpt")?;
    upper.critic = load_approx("upper_critic.ckpt")?;
    upper.termination = load_approx("termination.ckpt")?;
    upper.option_values =
        OptionActionTable::from_json(&String::from_utf8_lossy(&read("option_values.json")?))?;

    let state_count = manifest.state_count;
    let mut lower = Vec::with_capacity(manifest.agents);
    for agent in 0..manifest.agents {
        let policy = load_approx(&format!("lower_policy_{agent}.ckpt"))?;
        let critic = load_approx(&format!("lower_critic_{agent}.ckpt"))?;
        let encoder = AgentObsEncoder::new(agent, state_count, manifest.action_counts.clone());
        if policy.in_dim() != encoder.table_size() {
            return Err(HpaError::Artifacts(format!(
                "lower policy {agent} shape {} does not match encoder table {}",
                policy.in_dim(),
                encoder.table_size()
            )));
        }
        lower.push(LowerAgent {
            agent,
            encoder,
            policy,
            critic,
            floor: manifest.config.exploration_floor,
        });
    }

    Ok(LoadedArtifacts {
        env_name: manifest.env_name,
        env_params: manifest.env_params,
        scheme: manifest.scheme,
        options: manifest.options,
        config: manifest.config,
        upper,
        lower,
    })
}
