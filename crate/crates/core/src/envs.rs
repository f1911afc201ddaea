//! Built-in desk-scale environments.
//!
//! `iterated_fig2` repeats the 2x2 order-sensitive game in a single abstract
//! state. `switching_leader` alternates between that game and its role-swapped
//! mirror at window boundaries, so the optimal execution order is a function
//! of the state — the quantitative target the hierarchical trainer must
//! exploit. Rewards are normalized by the maximum per-agent mean absolute
//! payoff of the generating matrix (40 for the fig2 pair), recorded in the
//! contract so oracles can denormalize.

use thiserror::Error;

use crate::equilibrium::{se_backward_induction, EquilibriumError};
use crate::games::{fig2, ExecutionOrder, Game, GameError, GroupScheme, MatrixGame};
use crate::smg::{validate_joint, Env, EnvContract, SmgError, StateSpace, StepOutcome};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown environment `{0}`")]
    UnknownName(String),
    #[error("environment requires a matrix game, `{0}` is quadratic")]
    NotAMatrixGame(String),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
}

/// Construction parameters shared by the built-in environments.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct EnvParams {
    pub horizon: usize,
    /// Window length; drives the state flip of `switching_leader`.
    pub window: usize,
    pub discount: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            horizon: 8,
            window: 2,
            discount: 0.99,
        }
    }
}

/// A built-in environment: one or more matrix games played repeatedly, with
/// the active game selected by the discrete state.
pub struct BuiltinEnv {
    name: String,
    /// One game per state.
    games: Vec<MatrixGame>,
    /// Steps per state segment; `0` means the state never changes.
    flip_every: usize,
    contract: EnvContract,
    t: usize,
    done: bool,
}

impl BuiltinEnv {
    fn new(
        name: impl Into<String>,
        games: Vec<MatrixGame>,
        flip_every: usize,
        params: &EnvParams,
    ) -> Result<Self, EnvError> {
        if params.horizon == 0 {
            return Err(EnvError::ZeroHorizon);
        }
        let base = &games[0];
        let normalizer = games
            .iter()
            .map(MatrixGame::max_mean_abs_payoff)
            .fold(0.0_f64, f64::max)
            .max(1e-12);
        let contract = EnvContract {
            state_space: StateSpace::Discrete { count: games.len() },
            action_counts: base.actions().to_vec(),
            horizon: params.horizon,
            discount: params.discount,
            reward_normalizer: normalizer,
        };
        Ok(BuiltinEnv {
            name: name.into(),
            games,
            flip_every,
            contract,
            t: 0,
            done: false,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_count(&self) -> usize {
        self.games.len()
    }

    pub fn state_game(&self, state: usize) -> &MatrixGame {
        &self.games[state]
    }

    fn state_at(&self, t: usize) -> usize {
        if self.flip_every == 0 || self.games.len() == 1 {
            0
        } else {
            (t / self.flip_every) % self.games.len()
        }
    }

    /// Leader-optimal per-step team return of each state's game under
    /// `ordering`, in normalized reward units.
    pub fn oracle_per_step(
        &self,
        ordering: &ExecutionOrder,
        scheme: &GroupScheme,
    ) -> Result<Vec<f64>, EnvError> {
        self.games
            .iter()
            .map(|game| {
                let solution = se_backward_induction(game, ordering, scheme)?;
                Ok(solution.welfare() / self.contract.reward_normalizer)
            })
            .collect()
    }

    /// Per-window optimal team return per state: the per-step value times the
    /// window length.
    pub fn oracle_per_window(
        &self,
        ordering: &ExecutionOrder,
        scheme: &GroupScheme,
        k: usize,
    ) -> Result<Vec<f64>, EnvError> {
        Ok(self
            .oracle_per_step(ordering, scheme)?
            .into_iter()
            .map(|v| v * k as f64)
            .collect())
    }

    /// State-matched option: for each state, the ordering (by index into
    /// `orderings`) with the highest oracle per-step return.
    pub fn oracle_best_ordering(
        &self,
        orderings: &[ExecutionOrder],
        scheme: &GroupScheme,
    ) -> Result<Vec<usize>, EnvError> {
        let mut best = vec![0usize; self.games.len()];
        let mut best_value = vec![f64::NEG_INFINITY; self.games.len()];
        for (idx, ordering) in orderings.iter().enumerate() {
            let values = self.oracle_per_step(ordering, scheme)?;
            for (state, &v) in values.iter().enumerate() {
                if v > best_value[state] {
                    best_value[state] = v;
                    best[state] = idx;
                }
            }
        }
        Ok(best)
    }
}

impl Env for BuiltinEnv {
    fn contract(&self) -> &EnvContract {
        &self.contract
    }

    fn state(&self) -> usize {
        self.state_at(self.t)
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn reset(&mut self) -> usize {
        self.t = 0;
        self.done = false;
        self.state()
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepOutcome, SmgError> {
        if self.done {
            return Err(SmgError::EpisodeFinished);
        }
        validate_joint(&self.contract, joint_action)?;
        let game = &self.games[self.state()];
        let raw = game
            .payoff(joint_action)
            .expect("validated joint action indexes the tensor");
        let rewards = raw
            .iter()
            .map(|r| r / self.contract.reward_normalizer)
            .collect();
        self.t += 1;
        self.done = self.t >= self.contract.horizon;
        Ok(StepOutcome {
            next_state: self.state_at(self.t),
            rewards,
            done: self.done,
        })
    }
}

/// Role-swapped copy of a two-player game: player roles (and so the leader
/// seat) trade places, payoff pairs swapped with the transpose.
pub fn role_swapped(game: &MatrixGame) -> MatrixGame {
    game.relabeled(&[1, 0]).expect("two-player relabel")
}

/// Builds a registered environment.
///
/// Names: `iterated_fig2`, `switching_leader`, `iterated:<path>`, and
/// `switching:<path0>,<path1>` (the latter two load game files).
pub fn make_builtin(name: &str, params: &EnvParams) -> Result<BuiltinEnv, EnvError> {
    if params.window == 0 {
        return Err(EnvError::ZeroWindow);
    }
    match name {
        "iterated_fig2" => BuiltinEnv::new(name, vec![fig2()], 0, params),
        "switching_leader" => BuiltinEnv::new(
            name,
            vec![fig2(), role_swapped(&fig2())],
            params.window,
            params,
        ),
        other => {
            if let Some(path) = other.strip_prefix("iterated:") {
                let game = load_matrix(path)?;
                BuiltinEnv::new(other, vec![game], 0, params)
            } else if let Some(paths) = other.strip_prefix("switching:") {
                let mut games = Vec::new();
                for path in paths.split(',') {
                    games.push(load_matrix(path)?);
                }
                if games.len() != 2 {
                    return Err(EnvError::UnknownName(other.to_string()));
                }
                BuiltinEnv::new(other, games, params.window, params)
            } else {
                Err(EnvError::UnknownName(other.to_string()))
            }
        }
    }
}

fn load_matrix(path: &str) -> Result<MatrixGame, EnvError> {
    match crate::games::load_game(path)? {
        Game::Matrix(g) => Ok(g),
        Game::Quadratic(g) => Err(EnvError::NotAMatrixGame(g.name().to_string())),
    }
}
