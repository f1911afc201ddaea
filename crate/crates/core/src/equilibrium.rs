//! Exact pure-strategy Nash enumeration and N-level leader/follower backward
//! induction on finite games, plus scanning over every execution order.
//!
//! Grouped agents act as one composite level: the group's joint action space
//! is the product of member action spaces and the group maximizes the payoff
//! of its first (lowest-index) member. Ties are always broken toward the
//! lowest composite-action index, and earlier levels anticipate exactly that
//! rule.

use std::fmt::Write as _;

use thiserror::Error;

use crate::exec::{map_ordered, ExecMode};
use crate::games::{enumerate_orderings, ExecutionOrder, GameError, GroupScheme, MatrixGame};

#[derive(Debug, Error)]
pub enum EquilibriumError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("ordering has {ordering_len} positions, scheme has {groups} groups")]
    OrderingMismatch { ordering_len: usize, groups: usize },
    #[error("scheme covers {scheme_agents} agents, game has {players} players")]
    AgentMismatch {
        scheme_agents: usize,
        players: usize,
    },
    #[error("payoff vectors have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
}

// ---------------------------------------------------------------------------
// Pareto comparison
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParetoRelation {
    Dominates,
    Dominated,
    Incomparable,
    Equal,
}

impl std::fmt::Display for ParetoRelation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ParetoRelation::Dominates => "dominates",
            ParetoRelation::Dominated => "dominated",
            ParetoRelation::Incomparable => "incomparable",
            ParetoRelation::Equal => "equal",
        };
        f.write_str(s)
    }
}

/// Componentwise Pareto comparison of two payoff vectors.
pub fn pareto_compare(x: &[f64], y: &[f64]) -> Result<ParetoRelation, EquilibriumError> {
    if x.len() != y.len() {
        return Err(EquilibriumError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let mut any_greater = false;
    let mut any_less = false;
    for (a, b) in x.iter().zip(y) {
        if a > b {
            any_greater = true;
        } else if a < b {
            any_less = true;
        }
    }
    Ok(match (any_greater, any_less) {
        (false, false) => ParetoRelation::Equal,
        (true, false) => ParetoRelation::Dominates,
        (false, true) => ParetoRelation::Dominated,
        (true, true) => ParetoRelation::Incomparable,
    })
}

// ---------------------------------------------------------------------------
// Pure Nash enumeration
// ---------------------------------------------------------------------------

/// All joint actions at which no player has a strictly improving unilateral
/// deviation, in lexicographic order.
pub fn pure_nash(game: &MatrixGame) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    'cells: for joint in game.joint_actions() {
        let cell = game.cell_index(&joint).expect("iterator yields valid cells");
        for player in 0..game.players() {
            let own = game.payoff_at_cell(player, cell);
            let mut deviation = joint.clone();
            for alt in 0..game.actions()[player] {
                if alt == joint[player] {
                    continue;
                }
                deviation[player] = alt;
                let alt_cell = game.cell_index(&deviation).expect("valid deviation");
                if game.payoff_at_cell(player, alt_cell) > own {
                    continue 'cells;
                }
            }
        }
        out.push(joint);
    }
    out
}

// ---------------------------------------------------------------------------
// Backward induction
// ---------------------------------------------------------------------------

/// One composite decision level: a group of agents acting together.
#[derive(Clone, Debug)]
struct Level {
    members: Vec<usize>,
    sizes: Vec<usize>,
    composite: usize,
    objective: usize,
}

fn build_levels(
    game: &MatrixGame,
    ordering: &ExecutionOrder,
    scheme: &GroupScheme,
) -> Result<Vec<Level>, EquilibriumError> {
    if ordering.len() != scheme.group_count() {
        return Err(EquilibriumError::OrderingMismatch {
            ordering_len: ordering.len(),
            groups: scheme.group_count(),
        });
    }
    if scheme.agent_count() != game.players() {
        return Err(EquilibriumError::AgentMismatch {
            scheme_agents: scheme.agent_count(),
            players: game.players(),
        });
    }
    Ok(ordering
        .as_slice()
        .iter()
        .map(|&g| {
            let members = scheme.members(g).to_vec();
            let sizes: Vec<usize> = members.iter().map(|&m| game.actions()[m]).collect();
            let composite = sizes.iter().product();
            let objective = members[0];
            Level {
                members,
                sizes,
                composite,
                objective,
            }
        })
        .collect())
}

fn prefix_index(levels: &[Level], upto: usize, composite: &[usize]) -> usize {
    let mut idx = 0;
    for (level, &c) in levels[..upto].iter().zip(composite) {
        idx = idx * level.composite + c;
    }
    idx
}

fn composite_to_native(levels: &[Level], composite: &[usize], players: usize) -> Vec<usize> {
    let mut joint = vec![0usize; players];
    for (level, &c) in levels.iter().zip(composite) {
        let mut rem = c;
        for (pos, &member) in level.members.iter().enumerate().rev() {
            joint[member] = rem % level.sizes[pos];
            rem /= level.sizes[pos];
        }
    }
    joint
}

/// Best-response table of one non-first level: the composite action chosen
/// for every predecessor prefix, indexed in mixed radix (earliest level most
/// significant).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReactionTable {
    /// Position of this level in the ordering (1-based positions appear at
    /// `reactions[position - 1]`).
    pub position: usize,
    /// Composite action-space sizes of the predecessor levels.
    pub prefix_sizes: Vec<usize>,
    /// Chosen composite action per prefix index.
    pub choices: Vec<usize>,
}

/// Equilibrium of one execution order: the committed joint action, the
/// resulting payoffs, and the anticipated best-response tables.
#[derive(Clone, Debug, PartialEq)]
pub struct StackelbergSolution {
    pub ordering: ExecutionOrder,
    /// Joint action in native player indexing.
    pub joint_action: Vec<usize>,
    pub payoffs: Vec<f64>,
    pub reactions: Vec<ReactionTable>,
}

impl StackelbergSolution {
    /// Replays the reaction tables from the leader's committed action and
    /// returns the reproduced native joint action.
    pub fn replay(
        &self,
        game: &MatrixGame,
        scheme: &GroupScheme,
    ) -> Result<Vec<usize>, EquilibriumError> {
        let levels = build_levels(game, &self.ordering, scheme)?;
        let mut composite = vec![encode_level_action(&levels[0], &self.joint_action)];
        for table in &self.reactions {
            let idx = prefix_index(&levels, table.position, &composite);
            composite.push(table.choices[idx]);
        }
        Ok(composite_to_native(&levels, &composite, game.players()))
    }

    pub fn welfare(&self) -> f64 {
        self.payoffs.iter().sum()
    }
}

fn encode_level_action(level: &Level, joint: &[usize]) -> usize {
    let mut c = 0;
    for (pos, &member) in level.members.iter().enumerate() {
        c = c * level.sizes[pos] + joint[member];
    }
    c
}

/// N-level backward induction under one execution order.
///
/// The last level best-responds to every predecessor prefix; each earlier
/// level maximizes its own payoff anticipating the exact deterministic
/// responses of all later levels.
pub fn se_backward_induction(
    game: &MatrixGame,
    ordering: &ExecutionOrder,
    scheme: &GroupScheme,
) -> Result<StackelbergSolution, EquilibriumError> {
    let levels = build_levels(game, ordering, scheme)?;
    let num_levels = levels.len();

    let mut tables: Vec<Vec<usize>> = vec![Vec::new(); num_levels];
    for l in (0..num_levels).rev() {
        let prefix_count: usize = levels[..l].iter().map(|lv| lv.composite).product();
        let mut table = vec![0usize; prefix_count];
        let mut prefix = vec![0usize; l];
        for (slot, choice) in table.iter_mut().enumerate() {
            decode_prefix(&levels, l, slot, &mut prefix);
            let mut best_action = 0usize;
            let mut best_value = f64::NEG_INFINITY;
            for cand in 0..levels[l].composite {
                let mut composite = prefix.clone();
                composite.push(cand);
                for j in (l + 1)..num_levels {
                    let idx = prefix_index(&levels, j, &composite);
                    composite.push(tables[j][idx]);
                }
                let joint = composite_to_native(&levels, &composite, game.players());
                let cell = game.cell_index(&joint)?;
                let value = game.payoff_at_cell(levels[l].objective, cell);
                if value > best_value {
                    best_value = value;
                    best_action = cand;
                }
            }
            *choice = best_action;
        }
        tables[l] = table;
    }

    let mut composite = Vec::with_capacity(num_levels);
    for j in 0..num_levels {
        let idx = prefix_index(&levels, j, &composite);
        composite.push(tables[j][idx]);
    }
    let joint_action = composite_to_native(&levels, &composite, game.players());
    let payoffs = game.payoff(&joint_action)?;

    let reactions = tables
        .into_iter()
        .enumerate()
        .skip(1)
        .map(|(position, choices)| ReactionTable {
            position,
            prefix_sizes: levels[..position].iter().map(|lv| lv.composite).collect(),
            choices,
        })
        .collect();

    Ok(StackelbergSolution {
        ordering: ordering.clone(),
        joint_action,
        payoffs,
        reactions,
    })
}

fn decode_prefix(levels: &[Level], upto: usize, mut idx: usize, out: &mut [usize]) {
    for pos in (0..upto).rev() {
        out[pos] = idx % levels[pos].composite;
        idx /= levels[pos].composite;
    }
}

// ---------------------------------------------------------------------------
// Order scan
// ---------------------------------------------------------------------------

/// Leader-optimal solutions for every execution order, with the pure Nash
/// set for comparison.
#[derive(Clone, Debug)]
pub struct OrderScanReport {
    pub solutions: Vec<StackelbergSolution>,
    /// True iff any two orderings yield different joint actions or payoffs.
    pub se_shift: bool,
    pub nash: Vec<Vec<usize>>,
}

impl OrderScanReport {
    /// True iff any two orderings yield different payoff vectors (the joint
    /// action may still differ under ties).
    pub fn payoffs_shift(&self) -> bool {
        self.solutions
            .iter()
            .any(|s| s.payoffs != self.solutions[0].payoffs)
    }

    /// CSV export: one row per ordering.
    pub fn to_csv(&self) -> String {
        let players = self
            .solutions
            .first()
            .map_or(0, |s| s.payoffs.len());
        let mut out = String::from("ordering,joint_action");
        for p in 1..=players {
            let _ = write!(out, ",payoff_{p}");
        }
        out.push_str(",welfare,is_pure_nash\n");
        for solution in &self.solutions {
            let joint: Vec<String> = solution.joint_action.iter().map(|a| a.to_string()).collect();
            let _ = write!(out, "{},{}", solution.ordering, joint.join("-"));
            for payoff in &solution.payoffs {
                let _ = write!(out, ",{payoff}");
            }
            let is_nash = self.nash.contains(&solution.joint_action);
            let _ = writeln!(out, ",{},{}", solution.welfare(), is_nash);
        }
        out
    }
}

/// Solves every ordering of `scheme` with the requested execution mode,
/// emitting results in lexicographic ordering order.
pub fn solve_all_orderings(
    game: &MatrixGame,
    scheme: &GroupScheme,
    mode: ExecMode,
) -> Result<Vec<StackelbergSolution>, EquilibriumError> {
    let orderings = enumerate_orderings(scheme)?;
    map_ordered(&orderings, mode, |ordering| {
        se_backward_induction(game, ordering, scheme)
    })
    .into_iter()
    .collect()
}

/// Full order scan with the default execution mode.
pub fn order_scan(
    game: &MatrixGame,
    scheme: &GroupScheme,
) -> Result<OrderScanReport, EquilibriumError> {
    order_scan_with(game, scheme, ExecMode::default())
}

pub fn order_scan_with(
    game: &MatrixGame,
    scheme: &GroupScheme,
    mode: ExecMode,
) -> Result<OrderScanReport, EquilibriumError> {
    let solutions = solve_all_orderings(game, scheme, mode)?;
    let se_shift = solutions.iter().any(|s| {
        s.joint_action != solutions[0].joint_action || s.payoffs != solutions[0].payoffs
    });
    Ok(OrderScanReport {
        solutions,
        se_shift,
        nash: pure_nash(game),
    })
}
