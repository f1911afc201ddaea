//! Game data model: finite matrix games, quadratic continuous games,
//! execution orders, agent grouping, and JSON file loading.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Mat;

/// Largest group count an ordering sweep will enumerate (8! = 40320).
pub const MAX_SWEEP_GROUPS: usize = 8;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("action index {index} out of range for player {player} (has {count} actions)")]
    ActionOutOfRange {
        player: usize,
        index: usize,
        count: usize,
    },
    #[error("joint action has {got} entries, game has {expected} players")]
    JointActionLength { got: usize, expected: usize },
    #[error("ordering sweep refused: {groups} groups would enumerate {groups}! orderings (limit {MAX_SWEEP_GROUPS})")]
    TooManyGroups { groups: usize },
    #[error("`{field}` is not a permutation of 0..{expected}")]
    NotAPermutation { field: String, expected: usize },
}

fn invalid(field: &str, reason: impl Into<String>) -> GameError {
    GameError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

// ---------------------------------------------------------------------------
// MatrixGame
// ---------------------------------------------------------------------------

/// Finite n-player normal-form game held as per-player payoff tensors.
///
/// Tensors are stored flat in row-major joint-action order (player 0's action
/// is the most significant digit). Shared-payoff games store one tensor and a
/// flag and expand to the per-player view on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixGame {
    name: String,
    actions: Vec<usize>,
    payoffs: Vec<Vec<f64>>,
    shared: bool,
}

impl MatrixGame {
    pub fn new(
        name: impl Into<String>,
        actions: Vec<usize>,
        payoffs: Vec<Vec<f64>>,
        shared: bool,
    ) -> Result<Self, GameError> {
        let name = name.into();
        let players = actions.len();
        if players == 0 {
            return Err(invalid("players", "game needs at least one player"));
        }
        if actions.iter().any(|&m| m == 0) {
            return Err(invalid("actions", "every player needs at least one action"));
        }
        let expected_tensors = if shared { 1 } else { players };
        if payoffs.len() != expected_tensors {
            return Err(invalid(
                "payoffs",
                format!("expected {expected_tensors} tensors, got {}", payoffs.len()),
            ));
        }
        let cells: usize = actions.iter().product();
        for (player, tensor) in payoffs.iter().enumerate() {
            if tensor.len() != cells {
                return Err(invalid(
                    "payoffs",
                    format!(
                        "tensor {player} has {} entries, shape requires {cells}",
                        tensor.len()
                    ),
                ));
            }
            if let Some(pos) = tensor.iter().position(|v| !v.is_finite()) {
                return Err(invalid(
                    "payoffs",
                    format!("tensor {player} entry {pos} is not finite"),
                ));
            }
        }
        Ok(MatrixGame {
            name,
            actions,
            payoffs,
            shared,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn players(&self) -> usize {
        self.actions.len()
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn is_shared(&self) -> bool {
        self.shared
    }

    pub fn cell_count(&self) -> usize {
        self.actions.iter().product()
    }

    /// Flat row-major index of a joint action.
    pub fn cell_index(&self, joint: &[usize]) -> Result<usize, GameError> {
        if joint.len() != self.players() {
            return Err(GameError::JointActionLength {
                got: joint.len(),
                expected: self.players(),
            });
        }
        let mut idx = 0;
        for (player, (&a, &m)) in joint.iter().zip(&self.actions).enumerate() {
            if a >= m {
                return Err(GameError::ActionOutOfRange {
                    player,
                    index: a,
                    count: m,
                });
            }
            idx = idx * m + a;
        }
        Ok(idx)
    }

    /// Per-player payoffs at a joint action; a shared game replicates its
    /// single value for every player.
    pub fn payoff(&self, joint: &[usize]) -> Result<Vec<f64>, GameError> {
        let idx = self.cell_index(joint)?;
        Ok((0..self.players())
            .map(|p| self.payoffs[if self.shared { 0 } else { p }][idx])
            .collect())
    }

    /// Payoff of one player at an already-validated flat cell index.
    pub(crate) fn payoff_at_cell(&self, player: usize, cell: usize) -> f64 {
        self.payoffs[if self.shared { 0 } else { player }][cell]
    }

    /// All joint actions in lexicographic order.
    pub fn joint_actions(&self) -> JointActionIter {
        JointActionIter {
            actions: self.actions.clone(),
            next: Some(vec![0; self.actions.len()]),
        }
    }

    /// Maximum absolute payoff over all cells and players.
    pub fn max_abs_payoff(&self) -> f64 {
        self.payoffs
            .iter()
            .flatten()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Maximum over cells of the mean per-player absolute payoff; the reward
    /// normalizer used by the built-in environments.
    pub fn max_mean_abs_payoff(&self) -> f64 {
        let n = self.players() as f64;
        (0..self.cell_count())
            .map(|cell| {
                (0..self.players())
                    .map(|p| self.payoff_at_cell(p, cell).abs())
                    .sum::<f64>()
                    / n
            })
            .fold(0.0_f64, f64::max)
    }

    /// Game with player roles swapped by `perm` (player `perm[p]` takes the
    /// seat of player `p`): payoffs and action axes are relabeled together.
    pub fn relabeled(&self, perm: &[usize]) -> Result<MatrixGame, GameError> {
        check_permutation(perm, self.players(), "perm")?;
        let actions: Vec<usize> = perm.iter().map(|&p| self.actions[p]).collect();
        let cells = self.cell_count();
        let tensors = if self.shared { 1 } else { self.players() };
        let mut payoffs = vec![vec![0.0; cells]; tensors];
        let relabeled_shape = actions.clone();
        let mut joint = vec![0usize; self.players()];
        for cell in 0..cells {
            // Decode the cell in the relabeled shape, map back to the
            // original joint action, and copy the payoffs across.
            let mut rem = cell;
            for (pos, &m) in relabeled_shape.iter().enumerate().rev() {
                joint[pos] = rem % m;
                rem /= m;
            }
            let mut original = vec![0usize; self.players()];
            for (pos, &p) in perm.iter().enumerate() {
                original[p] = joint[pos];
            }
            let orig_cell = self.cell_index(&original)?;
            for (t, tensor) in payoffs.iter_mut().enumerate() {
                let source = if self.shared { 0 } else { perm[t] };
                tensor[cell] = self.payoffs[source][orig_cell];
            }
        }
        MatrixGame::new(self.name.clone(), actions, payoffs, self.shared)
    }
}

/// Lexicographic iterator over joint actions.
pub struct JointActionIter {
    actions: Vec<usize>,
    next: Option<Vec<usize>>,
}

impl Iterator for JointActionIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        for pos in (0..succ.len()).rev() {
            succ[pos] += 1;
            if succ[pos] < self.actions[pos] {
                self.next = Some(succ);
                return Some(current);
            }
            succ[pos] = 0;
        }
        Some(current)
    }
}

// ---------------------------------------------------------------------------
// QuadraticGame
// ---------------------------------------------------------------------------

/// Continuous-strategy game with one scalar strategy per player and payoff
/// `Q_i(pi) = piᵀ A_i pi + b_iᵀ pi + c_i`.
#[derive(Clone, Debug)]
pub struct QuadraticGame {
    name: String,
    quad: Vec<Mat>,
    linear: Vec<Vec<f64>>,
    constant: Vec<f64>,
}

impl QuadraticGame {
    pub fn new(
        name: impl Into<String>,
        quad: Vec<Mat>,
        linear: Vec<Vec<f64>>,
        constant: Vec<f64>,
    ) -> Result<Self, GameError> {
        let name = name.into();
        let players = quad.len();
        if players == 0 {
            return Err(invalid("players", "game needs at least one player"));
        }
        if linear.len() != players || constant.len() != players {
            return Err(invalid(
                "b",
                format!("expected {players} linear/constant terms"),
            ));
        }
        for (i, a) in quad.iter().enumerate() {
            if a.rows() != players || a.cols() != players {
                return Err(invalid(
                    "A",
                    format!("A[{i}] must be {players}x{players}"),
                ));
            }
            if !a.is_finite() {
                return Err(invalid("A", format!("A[{i}] has a non-finite entry")));
            }
            for r in 0..players {
                for c in (r + 1)..players {
                    if (a.get(r, c) - a.get(c, r)).abs() > SYMMETRY_TOL {
                        return Err(invalid(
                            "A",
                            format!("A[{i}] is asymmetric at ({r},{c})"),
                        ));
                    }
                }
            }
            if !(a.get(i, i) < 0.0) {
                return Err(invalid(
                    "A",
                    format!("non-concave: A[{i}][{i},{i}] = {} must be negative", a.get(i, i)),
                ));
            }
        }
        for (i, b) in linear.iter().enumerate() {
            if b.len() != players {
                return Err(invalid("b", format!("b[{i}] must have length {players}")));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(invalid("b", format!("b[{i}] has a non-finite entry")));
            }
        }
        if constant.iter().any(|v| !v.is_finite()) {
            return Err(invalid("c", "non-finite entry"));
        }
        Ok(QuadraticGame {
            name,
            quad,
            linear,
            constant,
        })
    }

    /// Decoupled game `Q_i = -(pi_i - c_i)^2`; every ordering shares the
    /// argmax `pi = c`.
    pub fn decoupled(name: impl Into<String>, targets: &[f64]) -> Result<Self, GameError> {
        let n = targets.len();
        let mut quad = Vec::with_capacity(n);
        let mut linear = Vec::with_capacity(n);
        let mut constant = Vec::with_capacity(n);
        for (i, &c) in targets.iter().enumerate() {
            let mut a = Mat::zeros(n, n);
            a.set(i, i, -1.0);
            quad.push(a);
            let mut b = vec![0.0; n];
            b[i] = 2.0 * c;
            linear.push(b);
            constant.push(-c * c);
        }
        QuadraticGame::new(name, quad, linear, constant)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn players(&self) -> usize {
        self.quad.len()
    }

    pub fn quad(&self, player: usize) -> &Mat {
        &self.quad[player]
    }

    pub fn linear(&self, player: usize) -> &[f64] {
        &self.linear[player]
    }

    pub fn constant(&self, player: usize) -> f64 {
        self.constant[player]
    }

    /// Per-player payoffs at a strategy profile.
    pub fn payoff(&self, strategy: &[f64]) -> Vec<f64> {
        (0..self.players())
            .map(|p| self.payoff_of(p, strategy))
            .collect()
    }

    pub fn payoff_of(&self, player: usize, strategy: &[f64]) -> f64 {
        let a = &self.quad[player];
        let ax = a.matvec(strategy);
        let quad_term: f64 = strategy.iter().zip(&ax).map(|(x, y)| x * y).sum();
        let lin_term: f64 = self.linear[player]
            .iter()
            .zip(strategy)
            .map(|(b, x)| b * x)
            .sum();
        quad_term + lin_term + self.constant[player]
    }

    /// Gradient of `Q_player`: `2 A pi + b`.
    pub fn gradient_of(&self, player: usize, strategy: &[f64]) -> Vec<f64> {
        let ax = self.quad[player].matvec(strategy);
        ax.iter()
            .zip(&self.linear[player])
            .map(|(v, b)| 2.0 * v + b)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// ExecutionOrder and GroupScheme
// ---------------------------------------------------------------------------

/// A priority permutation of agent groups: the execution sequence for one
/// decision round, and the option the upper policy chooses between.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExecutionOrder(Vec<usize>);

impl ExecutionOrder {
    pub fn new(perm: Vec<usize>) -> Result<Self, GameError> {
        check_permutation(&perm, perm.len(), "ordering")?;
        Ok(ExecutionOrder(perm))
    }

    /// The identity order `0,1,...,g-1`.
    pub fn identity(groups: usize) -> Self {
        ExecutionOrder((0..groups).collect())
    }

    /// All `g!` orderings in lexicographic order. Refuses `g > 8`.
    pub fn all(groups: usize) -> Result<Vec<ExecutionOrder>, GameError> {
        if groups > MAX_SWEEP_GROUPS {
            return Err(GameError::TooManyGroups { groups });
        }
        let mut out = Vec::new();
        let mut current: Vec<usize> = (0..groups).collect();
        let mut scratch = Vec::with_capacity(groups);
        permute_lex(&mut current, &mut scratch, &mut out);
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Group executing at `position`.
    pub fn group_at(&self, position: usize) -> usize {
        self.0[position]
    }

    /// Position at which `group` executes.
    pub fn position_of(&self, group: usize) -> Option<usize> {
        self.0.iter().position(|&g| g == group)
    }
}

fn permute_lex(pool: &mut Vec<usize>, prefix: &mut Vec<usize>, out: &mut Vec<ExecutionOrder>) {
    if pool.is_empty() {
        out.push(ExecutionOrder(prefix.clone()));
        return;
    }
    for i in 0..pool.len() {
        let item = pool.remove(i);
        prefix.push(item);
        permute_lex(pool, prefix, out);
        prefix.pop();
        pool.insert(i, item);
    }
}

impl fmt::Display for ExecutionOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|g| g.to_string()).collect();
        write!(f, "{}", parts.join("-"))
    }
}

impl FromStr for ExecutionOrder {
    type Err = GameError;

    fn from_str(s: &str) -> Result<Self, GameError> {
        let perm: Result<Vec<usize>, _> = s
            .split(|c| c == ',' || c == '-')
            .filter(|p| !p.is_empty())
            .map(|p| p.trim().parse::<usize>())
            .collect();
        let perm = perm.map_err(|e| GameError::Parse(format!("bad ordering `{s}`: {e}")))?;
        ExecutionOrder::new(perm)
    }
}

/// Partition of agents `0..n-1` into ordered groups; orderings permute groups
/// while members keep their native index order inside a group.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupScheme {
    groups: Vec<Vec<usize>>,
}

impl GroupScheme {
    pub fn new(mut groups: Vec<Vec<usize>>, agents: usize) -> Result<Self, GameError> {
        if groups.is_empty() {
            return Err(invalid("groups", "at least one group required"));
        }
        let mut seen = BTreeSet::new();
        for group in &mut groups {
            if group.is_empty() {
                return Err(invalid("groups", "groups must be non-empty"));
            }
            group.sort_unstable();
            for &agent in group.iter() {
                if agent >= agents {
                    return Err(invalid(
                        "groups",
                        format!("agent {agent} out of range for {agents} agents"),
                    ));
                }
                if !seen.insert(agent) {
                    return Err(invalid("groups", format!("agent {agent} appears twice")));
                }
            }
        }
        if seen.len() != agents {
            return Err(invalid(
                "groups",
                format!("groups cover {} agents, game has {agents}", seen.len()),
            ));
        }
        Ok(GroupScheme { groups })
    }

    /// One singleton group per agent.
    pub fn singletons(agents: usize) -> Self {
        GroupScheme {
            groups: (0..agents).map(|a| vec![a]).collect(),
        }
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn agent_count(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.groups[group]
    }

    /// Agents in acting sequence under `ordering`: groups in order position,
    /// members in native index order.
    pub fn acting_order(&self, ordering: &ExecutionOrder) -> Vec<usize> {
        ordering
            .as_slice()
            .iter()
            .flat_map(|&g| self.groups[g].iter().copied())
            .collect()
    }
}

impl FromStr for GroupScheme {
    type Err = GameError;

    /// Parses `0,1|2,3` into two groups; agent count is inferred.
    fn from_str(s: &str) -> Result<Self, GameError> {
        let mut groups = Vec::new();
        for block in s.split('|') {
            let members: Result<Vec<usize>, _> = block
                .split(',')
                .filter(|p| !p.is_empty())
                .map(|p| p.trim().parse::<usize>())
                .collect();
            let members =
                members.map_err(|e| GameError::Parse(format!("bad groups `{s}`: {e}")))?;
            groups.push(members);
        }
        let agents = groups.iter().flatten().count();
        GroupScheme::new(groups, agents)
    }
}

/// All `g!` group orderings of `scheme` in lexicographic order.
pub fn enumerate_orderings(scheme: &GroupScheme) -> Result<Vec<ExecutionOrder>, GameError> {
    ExecutionOrder::all(scheme.group_count())
}

fn check_permutation(perm: &[usize], expected: usize, field: &str) -> Result<(), GameError> {
    if perm.len() != expected {
        return Err(GameError::NotAPermutation {
            field: field.to_string(),
            expected,
        });
    }
    let mut seen = vec![false; expected];
    for &p in perm {
        if p >= expected || seen[p] {
            return Err(GameError::NotAPermutation {
                field: field.to_string(),
                expected,
            });
        }
        seen[p] = true;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

/// A loaded game file: either flavor.
#[derive(Clone, Debug)]
pub enum Game {
    Matrix(MatrixGame),
    Quadratic(QuadraticGame),
}

impl Game {
    pub fn name(&self) -> &str {
        match self {
            Game::Matrix(g) => g.name(),
            Game::Quadratic(g) => g.name(),
        }
    }

    pub fn as_matrix(&self) -> Option<&MatrixGame> {
        match self {
            Game::Matrix(g) => Some(g),
            Game::Quadratic(_) => None,
        }
    }

    pub fn as_quadratic(&self) -> Option<&QuadraticGame> {
        match self {
            Game::Quadratic(g) => Some(g),
            Game::Matrix(_) => None,
        }
    }
}

#[derive(Deserialize)]
struct RawMatrixGame {
    name: String,
    players: usize,
    actions: Vec<usize>,
    shared: bool,
    payoffs: serde_json::Value,
}

#[derive(Deserialize)]
struct RawQuadraticGame {
    name: String,
    players: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<Vec<f64>>>,
    b: Vec<Vec<f64>>,
    c: Vec<f64>,
}

/// Loads and validates a game file (see the JSON schema in the README).
pub fn load_game(path: impl AsRef<Path>) -> Result<Game, GameError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GameError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_game(&text)
}

/// Parses a game from JSON text. Matrix games carry a `payoffs` field,
/// quadratic games an `A` field.
pub fn parse_game(text: &str) -> Result<Game, GameError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| GameError::Parse(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| GameError::Parse("top-level value must be an object".into()))?;
    if obj.contains_key("payoffs") {
        let raw: RawMatrixGame =
            serde_json::from_value(value.clone()).map_err(|e| GameError::Parse(e.to_string()))?;
        matrix_from_raw(raw).map(Game::Matrix)
    } else if obj.contains_key("A") {
        let raw: RawQuadraticGame =
            serde_json::from_value(value.clone()).map_err(|e| GameError::Parse(e.to_string()))?;
        quadratic_from_raw(raw).map(Game::Quadratic)
    } else {
        Err(GameError::Parse(
            "neither `payoffs` (matrix game) nor `A` (quadratic game) present".into(),
        ))
    }
}

fn matrix_from_raw(raw: RawMatrixGame) -> Result<MatrixGame, GameError> {
    if raw.players != raw.actions.len() {
        return Err(invalid(
            "players",
            format!(
                "players = {} but actions lists {} entries",
                raw.players,
                raw.actions.len()
            ),
        ));
    }
    let tensors = raw
        .payoffs
        .as_array()
        .ok_or_else(|| invalid("payoffs", "must be a list of payoff tensors"))?;
    let mut flat = Vec::with_capacity(tensors.len());
    for (idx, tensor) in tensors.iter().enumerate() {
        let mut out = Vec::new();
        flatten_tensor(tensor, &raw.actions, idx, &mut out)?;
        flat.push(out);
    }
    MatrixGame::new(raw.name, raw.actions, flat, raw.shared)
}

fn flatten_tensor(
    value: &serde_json::Value,
    shape: &[usize],
    tensor_idx: usize,
    out: &mut Vec<f64>,
) -> Result<(), GameError> {
    match shape.split_first() {
        None => {
            let v = value.as_f64().ok_or_else(|| {
                invalid("payoffs", format!("tensor {tensor_idx}: expected a number"))
            })?;
            out.push(v);
            Ok(())
        }
        Some((&dim, rest)) => {
            let arr = value.as_array().ok_or_else(|| {
                invalid(
                    "payoffs",
                    format!("tensor {tensor_idx}: expected a nested list"),
                )
            })?;
            if arr.len() != dim {
                return Err(invalid(
                    "payoffs",
                    format!(
                        "tensor {tensor_idx}: axis has {} entries, shape requires {dim}",
                        arr.len()
                    ),
                ));
            }
            for item in arr {
                flatten_tensor(item, rest, tensor_idx, out)?;
            }
            Ok(())
        }
    }
}

fn quadratic_from_raw(raw: RawQuadraticGame) -> Result<QuadraticGame, GameError> {
    let n = raw.players;
    if raw.a.len() != n {
        return Err(invalid("A", format!("expected {n} matrices")));
    }
    let mut quad = Vec::with_capacity(n);
    for (i, rows) in raw.a.into_iter().enumerate() {
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(invalid("A", format!("A[{i}] must be {n}x{n}")));
        }
        quad.push(Mat::from_rows(rows));
    }
    QuadraticGame::new(raw.name, quad, raw.b, raw.c)
}

#[derive(Serialize)]
struct MatrixGameOut<'a> {
    name: &'a str,
    players: usize,
    actions: &'a [usize],
    shared: bool,
    payoffs: serde_json::Value,
}

/// Canonical JSON for a matrix game; `parse_game(save_matrix_game(g))`
/// round-trips bit-identically.
pub fn save_matrix_game(game: &MatrixGame) -> String {
    let tensors: Vec<serde_json::Value> = game
        .payoffs
        .iter()
        .map(|flat| nest_tensor(flat, &game.actions))
        .collect();
    let out = MatrixGameOut {
        name: &game.name,
        players: game.players(),
        actions: &game.actions,
        shared: game.shared,
        payoffs: serde_json::Value::Array(tensors),
    };
    let mut text = serde_json::to_string_pretty(&out).expect("matrix game serializes");
    text.push('\n');
    text
}

fn nest_tensor(flat: &[f64], shape: &[usize]) -> serde_json::Value {
    match shape.split_first() {
        None => serde_json::json!(flat[0]),
        Some((&dim, rest)) => {
            let chunk = flat.len() / dim;
            let items: Vec<serde_json::Value> = (0..dim)
                .map(|i| nest_tensor(&flat[i * chunk..(i + 1) * chunk], rest))
                .collect();
            serde_json::Value::Array(items)
        }
    }
}

// ---------------------------------------------------------------------------
// Built-in games
// ---------------------------------------------------------------------------

/// Built-in game registry: `fig1_left`, `fig1_right`, `fig2`.
pub fn builtin(name: &str) -> Option<Game> {
    match name {
        "fig1_left" => Some(Game::Matrix(fig1_left())),
        "fig1_right" => Some(Game::Matrix(fig1_right())),
        "fig2" => Some(Game::Matrix(fig2())),
        _ => None,
    }
}

pub const BUILTIN_GAMES: [&str; 3] = ["fig1_left", "fig1_right", "fig2"];

/// Shared-payoff 3x3 game with three pure Nash points and a single
/// leader-optimal outcome worth 10.
pub fn fig1_left() -> MatrixGame {
    MatrixGame::new(
        "fig1_left",
        vec![3, 3],
        vec![vec![-10.0, 0.0, 10.0, 0.0, 2.0, 0.0, 8.0, 0.0, -10.0]],
        true,
    )
    .expect("builtin is valid")
}

/// General-sum 3x3 game whose leader-optimal outcome Pareto-dominates its
/// unique pure Nash point.
pub fn fig1_right() -> MatrixGame {
    MatrixGame::new(
        "fig1_right",
        vec![3, 3],
        vec![
            vec![0.0, -10.0, -8.0, -5.0, -5.0, -15.0, 5.0, -10.0, -10.0],
            vec![5.0, -5.0, 4.0, -10.0, 0.0, -5.0, 0.0, -5.0, 5.0],
        ],
        false,
    )
    .expect("builtin is valid")
}

/// 2x2 general-sum game whose leader-optimal outcome moves with the
/// execution order: (40,40) when player 0 commits first, (20,20) when
/// player 1 does.
pub fn fig2() -> MatrixGame {
    MatrixGame::new(
        "fig2",
        vec![2, 2],
        vec![vec![40.0, 0.0, 80.0, 20.0], vec![40.0, 0.0, 0.0, 20.0]],
        false,
    )
    .expect("builtin is valid")
}
