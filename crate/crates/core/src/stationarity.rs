//! Continuous-strategy order analysis for quadratic games: per-order
//! first-order conditions via backward affine substitution, the stacked
//! dual-order system, and its solvability tests (rank equality for the
//! linear form, damped least squares for the residual form).

use thiserror::Error;

use crate::games::{ExecutionOrder, QuadraticGame};
use crate::linalg::{self, Mat};

/// Default relative tolerance for numerical rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Forward-difference step for Jacobians of black-box residuals.
const FD_STEP: f64 = 1e-6;

const CONCAVITY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum StationarityError {
    #[error("ordering has {ordering_len} positions, game has {players} players")]
    OrderingMismatch {
        ordering_len: usize,
        players: usize,
    },
    #[error("strategy vector has {got} entries, game has {expected} players")]
    StrategyLength { got: usize, expected: usize },
    #[error("substituted objective of player {player} (level {level}) is not strictly concave (coefficient {coefficient:e})")]
    SubstitutionConcavity {
        level: usize,
        player: usize,
        coefficient: f64,
    },
    #[error("singular linear solve at level {level} (player {player})")]
    SingularSolve { level: usize, player: usize },
    #[error("the two orderings must differ")]
    IdenticalOrderings,
    #[error("rank test requires a linear-mode system")]
    NonlinearRankTest,
    #[error("residual evaluator produced a non-finite value")]
    NonFiniteResidual,
}

// ---------------------------------------------------------------------------
// Reaction model
// ---------------------------------------------------------------------------

/// Equilibrium-path reaction structure of one ordering: each non-leading
/// player's strategy as an affine function of its predecessors, plus the
/// total derivatives obtained by expanding the reaction chain.
#[derive(Clone, Debug)]
pub struct ReactionModel {
    ordering: ExecutionOrder,
    /// `alpha[p]`: constant term of player `p`'s reaction (leader: its
    /// committed equilibrium value).
    alpha: Vec<f64>,
    /// `beta[p][q]`: reaction coefficient of player `p` on predecessor `q`
    /// (native indexing; zero unless `q` acts before `p`).
    beta: Vec<Vec<f64>>,
    /// `total[j][i]`: total derivative `d pi_j / d pi_i` along the chain.
    total: Vec<Vec<f64>>,
}

impl ReactionModel {
    pub fn ordering(&self) -> &ExecutionOrder {
        &self.ordering
    }

    /// Reaction constant of player `p`.
    pub fn alpha(&self, player: usize) -> f64 {
        self.alpha[player]
    }

    /// Reaction coefficient of `player` on predecessor `pred`.
    pub fn beta(&self, player: usize, pred: usize) -> f64 {
        self.beta[player][pred]
    }

    /// Total derivative `d pi_j / d pi_i` (zero unless `i` precedes `j`).
    pub fn total_derivative(&self, j: usize, i: usize) -> f64 {
        self.total[j][i]
    }

    /// Overwrites the entries of `pi` for every player at order position
    /// `from_level` or later with its affine reaction to the earlier entries.
    pub fn replay(&self, pi: &mut [f64], from_level: usize) {
        for position in from_level..self.ordering.len() {
            let player = self.ordering.group_at(position);
            let mut value = self.alpha[player];
            for earlier in 0..position {
                let q = self.ordering.group_at(earlier);
                value += self.beta[player][q] * pi[q];
            }
            pi[player] = value;
        }
    }
}

// ---------------------------------------------------------------------------
// Backward substitution
// ---------------------------------------------------------------------------

/// Leader-optimal strategy profile of a quadratic game under one ordering,
/// by backward affine substitution from the last mover to the first.
///
/// Each level's substituted objective must stay strictly concave in its own
/// variable; the returned profile zeroes the per-order stationarity residual.
pub fn continuous_se(
    game: &QuadraticGame,
    ordering: &ExecutionOrder,
) -> Result<(Vec<f64>, ReactionModel), StationarityError> {
    let n = game.players();
    if ordering.len() != n {
        return Err(StationarityError::OrderingMismatch {
            ordering_len: ordering.len(),
            players: n,
        });
    }

    // Working affine forms over the native variables: substituted players
    // hold their reaction composed down to currently-free variables.
    let mut coeffs = Mat::identity(n);
    let mut consts = vec![0.0; n];

    let mut alpha = vec![0.0; n];
    let mut beta = vec![vec![0.0; n]; n];

    for level in (0..n).rev() {
        let player = ordering.group_at(level);

        // Reduced quadratic of `player` over the free variables:
        //   Q(pi) = piᵀ A pi + bᵀ pi + c with pi = T x + t.
        // The own-variable stationarity condition only needs row `player`
        // of TᵀAT and entry `player` of (2 TᵀA t + Tᵀ b).
        let a = game.quad(player);
        let b = game.linear(player);

        // at = A t, arow = (TᵀAT) row for `player`, brow = own linear term.
        let at = a.matvec(&consts);
        let t_col_player: Vec<f64> = (0..n).map(|r| coeffs.get(r, player)).collect();
        let a_tp = a.matvec(&t_col_player);

        let mut own_quad = 0.0;
        for r in 0..n {
            own_quad += t_col_player[r] * a_tp[r];
        }
        if own_quad >= -CONCAVITY_TOL {
            if own_quad.abs() <= CONCAVITY_TOL {
                return Err(StationarityError::SingularSolve { level, player });
            }
            return Err(StationarityError::SubstitutionConcavity {
                level,
                player,
                coefficient: own_quad,
            });
        }

        // Cross terms toward each earlier free variable q: (TᵀAT)_{player,q}.
        let mut cross = vec![0.0; n];
        for earlier in 0..level {
            let q = ordering.group_at(earlier);
            let mut s = 0.0;
            for r in 0..n {
                s += coeffs.get(r, q) * a_tp[r];
            }
            cross[q] = s;
        }
        let mut lin = 0.0;
        for r in 0..n {
            lin += t_col_player[r] * (2.0 * at[r] + b[r]);
        }

        // dQ/dx_player = 2*own_quad*x_player + sum_q 2*cross_q*x_q + lin = 0.
        let denom = 2.0 * own_quad;
        alpha[player] = -lin / denom;
        for earlier in 0..level {
            let q = ordering.group_at(earlier);
            beta[player][q] = -2.0 * cross[q] / denom;
        }

        // Eliminate x_player from every already-substituted form, then
        // record the player's own reaction as its working form.
        let alpha_p = alpha[player];
        let beta_p = beta[player].clone();
        for later in (level + 1)..n {
            let s = ordering.group_at(later);
            let weight = coeffs.get(s, player);
            if weight == 0.0 {
                continue;
            }
            consts[s] += weight * alpha_p;
            for (q, &bq) in beta_p.iter().enumerate() {
                if bq != 0.0 {
                    let v = coeffs.get(s, q) + weight * bq;
                    coeffs.set(s, q, v);
                }
            }
            coeffs.set(s, player, 0.0);
        }
        consts[player] = alpha_p;
        for (q, &bq) in beta_p.iter().enumerate() {
            coeffs.set(player, q, bq);
        }
        coeffs.set(player, player, 0.0);
    }

    // Total derivatives by expanding the reaction chain level by level.
    let mut total = vec![vec![0.0; n]; n];
    for i_pos in 0..n {
        let i = ordering.group_at(i_pos);
        total[i][i] = 1.0;
        for j_pos in (i_pos + 1)..n {
            let j = ordering.group_at(j_pos);
            let mut d = 0.0;
            for k_pos in i_pos..j_pos {
                let k = ordering.group_at(k_pos);
                d += beta[j][k] * total[k][i];
            }
            total[j][i] = d;
        }
    }

    let model = ReactionModel {
        ordering: ordering.clone(),
        alpha,
        beta,
        total,
    };

    let mut pi = vec![0.0; n];
    model.replay(&mut pi, 0);

    if pi.iter().any(|v| !v.is_finite()) {
        return Err(StationarityError::NonFiniteResidual);
    }
    Ok((pi, model))
}

// ---------------------------------------------------------------------------
// Stationarity residual
// ---------------------------------------------------------------------------

/// Per-player stationarity residual under `ordering`, native indexing:
/// `F_p = dQ_p/dpi_p + sum over successors j of dQ_p/dpi_j * dpi_j/dpi_p`.
pub fn stationarity_residual(
    game: &QuadraticGame,
    ordering: &ExecutionOrder,
    pi: &[f64],
) -> Result<Vec<f64>, StationarityError> {
    if pi.len() != game.players() {
        return Err(StationarityError::StrategyLength {
            got: pi.len(),
            expected: game.players(),
        });
    }
    let (_, model) = continuous_se(game, ordering)?;
    Ok(residual_with_model(game, &model, pi))
}

fn residual_with_model(game: &QuadraticGame, model: &ReactionModel, pi: &[f64]) -> Vec<f64> {
    let n = game.players();
    let ordering = model.ordering();
    let mut out = vec![0.0; n];
    for pos in 0..n {
        let p = ordering.group_at(pos);
        let grad = game.gradient_of(p, pi);
        let mut f = grad[p];
        for later in (pos + 1)..n {
            let j = ordering.group_at(later);
            f += grad[j] * model.total_derivative(j, p);
        }
        out[p] = f;
    }
    out
}

// ---------------------------------------------------------------------------
// Stacked dual-order system
// ---------------------------------------------------------------------------

/// The stacked stationarity system of two orderings.
///
/// Quadratic payoffs make the residual affine, so the stack is held as a
/// `2n x n` linear system `A pi = b`; the nonlinear variant wraps a black-box
/// residual evaluator for future payoff classes.
pub enum JointSystem {
    Linear { a: Mat, b: Vec<f64> },
    Nonlinear { f: ResidualFn, dim: usize },
}

pub type ResidualFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

impl JointSystem {
    pub fn nonlinear(dim: usize, f: ResidualFn) -> Self {
        JointSystem::Nonlinear { f, dim }
    }

    pub fn dim(&self) -> usize {
        match self {
            JointSystem::Linear { a, .. } => a.cols(),
            JointSystem::Nonlinear { dim, .. } => *dim,
        }
    }

    /// Residual `J(pi)` (rows of ord1 then ord2 in linear mode).
    pub fn residual(&self, pi: &[f64]) -> Vec<f64> {
        match self {
            JointSystem::Linear { a, b } => {
                let mut r = a.matvec(pi);
                for (ri, bi) in r.iter_mut().zip(b) {
                    *ri -= bi;
                }
                r
            }
            JointSystem::Nonlinear { f, .. } => f(pi),
        }
    }

    /// Squared residual norm `E(pi) = ||J(pi)||^2`.
    pub fn energy(&self, pi: &[f64]) -> f64 {
        self.residual(pi).iter().map(|v| v * v).sum()
    }

    fn jacobian(&self, pi: &[f64], base: &[f64]) -> Mat {
        match self {
            JointSystem::Linear { a, .. } => a.clone(),
            JointSystem::Nonlinear { f, dim } => {
                let mut jac = Mat::zeros(base.len(), *dim);
                let mut probe = pi.to_vec();
                for c in 0..*dim {
                    let h = FD_STEP * (1.0 + pi[c].abs());
                    probe[c] = pi[c] + h;
                    let shifted = f(&probe);
                    probe[c] = pi[c];
                    for r in 0..base.len() {
                        jac.set(r, c, (shifted[r] - base[r]) / h);
                    }
                }
                jac
            }
        }
    }
}

/// Builds the `2n x n` stacked system of the two orderings' first-order
/// conditions; rows `0..n` come from `ord1`, rows `n..2n` from `ord2`, and
/// `b` collects the negated constant terms.
pub fn stack_joint_system(
    game: &QuadraticGame,
    ord1: &ExecutionOrder,
    ord2: &ExecutionOrder,
) -> Result<JointSystem, StationarityError> {
    if ord1 == ord2 {
        return Err(StationarityError::IdenticalOrderings);
    }
    let n = game.players();
    let (_, model1) = continuous_se(game, ord1)?;
    let (_, model2) = continuous_se(game, ord2)?;

    let mut a = Mat::zeros(2 * n, n);
    let mut b = vec![0.0; 2 * n];
    fill_block(game, &model1, 0, &mut a, &mut b);
    fill_block(game, &model2, n, &mut a, &mut b);
    Ok(JointSystem::Linear { a, b })
}

fn fill_block(game: &QuadraticGame, model: &ReactionModel, row0: usize, a: &mut Mat, b: &mut [f64]) {
    let n = game.players();
    let ordering = model.ordering();
    for pos in 0..n {
        let p = ordering.group_at(pos);
        // F_p(pi) = 2 A_p[p,:] pi + b_p[p]
        //         + sum_j d_jp (2 A_p[j,:] pi + b_p[j]).
        let quad = game.quad(p);
        let lin = game.linear(p);
        let mut row = vec![0.0; n];
        for c in 0..n {
            row[c] = 2.0 * quad.get(p, c);
        }
        let mut constant = lin[p];
        for later in (pos + 1)..n {
            let j = ordering.group_at(later);
            let d = model.total_derivative(j, p);
            if d == 0.0 {
                continue;
            }
            for c in 0..n {
                row[c] += d * 2.0 * quad.get(j, c);
            }
            constant += d * lin[j];
        }
        for c in 0..n {
            a.set(row0 + p, c, row[c]);
        }
        b[row0 + p] = -constant;
    }
}

// ---------------------------------------------------------------------------
// Solvability tests
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Solvable,
    Unsolvable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rank,
    Lm,
}

/// Outcome of a solvability test on a stacked system.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SolvabilityReport {
    pub verdict: Verdict,
    pub method: Method,
    pub rank_a: Option<usize>,
    pub rank_ab: Option<usize>,
    /// Final squared residual norm `E(pi*)`.
    pub residual: f64,
    /// Accepted iterations (always 0 for the rank test).
    pub iterations: usize,
    /// Candidate common strategy.
    pub candidate: Vec<f64>,
    /// Tolerance the verdict was decided at.
    pub tolerance: f64,
    /// `E` after each accepted step (LM only).
    pub residual_trace: Vec<f64>,
}

/// Rank solvability test: the stacked linear system admits a common solution
/// iff `rank(A) = rank(A|b)` at the given relative tolerance.
pub fn rank_test(sys: &JointSystem, tol: f64) -> Result<SolvabilityReport, StationarityError> {
    let (a, b) = match sys {
        JointSystem::Linear { a, b } => (a, b),
        JointSystem::Nonlinear { .. } => return Err(StationarityError::NonlinearRankTest),
    };
    let rank_a = linalg::numerical_rank(a, tol);
    let rank_ab = linalg::numerical_rank(&a.augmented(b), tol);
    let candidate = linalg::lstsq_min_norm(a, b, tol);
    let residual = sys.energy(&candidate);
    let verdict = if rank_a == rank_ab {
        Verdict::Solvable
    } else {
        Verdict::Unsolvable
    };
    Ok(SolvabilityReport {
        verdict,
        method: Method::Rank,
        rank_a: Some(rank_a),
        rank_ab: Some(rank_ab),
        residual,
        iterations: 0,
        candidate,
        tolerance: tol,
        residual_trace: Vec::new(),
    })
}

/// Damped least-squares minimization of `E(pi) = ||J(pi)||^2`.
///
/// Damping starts at 1e-3, grows tenfold on rejected steps and shrinks
/// tenfold on accepted ones; `E` never increases across accepted steps. The
/// verdict is solvable iff the final `E` is below `eps`; hitting `max_iter`
/// is reported through the iteration count, not an error.
pub fn lm_minimize(
    sys: &JointSystem,
    pi0: &[f64],
    eps: f64,
    max_iter: usize,
) -> Result<SolvabilityReport, StationarityError> {
    let dim = sys.dim();
    if pi0.len() != dim {
        return Err(StationarityError::StrategyLength {
            got: pi0.len(),
            expected: dim,
        });
    }

    let mut pi = pi0.to_vec();
    let mut residual = sys.residual(&pi);
    check_finite(&residual)?;
    let mut energy: f64 = residual.iter().map(|v| v * v).sum();
    let mut lambda = 1e-3;
    let mut accepted = 0usize;
    let mut trace = Vec::new();

    for _pass in 0..max_iter {
        if energy < eps {
            break;
        }
        let jac = sys.jacobian(&pi, &residual);
        let grad = jac.t_matvec(&residual);
        if grad.iter().map(|g| g.abs()).fold(0.0, f64::max) < 1e-14 {
            break;
        }
        let mut normal = jac.gram();
        for d in 0..dim {
            let v = normal.get(d, d) + lambda;
            normal.set(d, d, v);
        }
        let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
        let Some(step) = linalg::solve(&normal, &neg_grad) else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
            continue;
        };
        let trial: Vec<f64> = pi.iter().zip(&step).map(|(x, s)| x + s).collect();
        let trial_residual = sys.residual(&trial);
        check_finite(&trial_residual)?;
        let trial_energy: f64 = trial_residual.iter().map(|v| v * v).sum();
        if trial_energy <= energy {
            pi = trial;
            residual = trial_residual;
            energy = trial_energy;
            lambda = (lambda / 10.0).max(1e-12);
            accepted += 1;
            trace.push(energy);
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }

    let verdict = if energy < eps {
        Verdict::Solvable
    } else {
        Verdict::Unsolvable
    };
    Ok(SolvabilityReport {
        verdict,
        method: Method::Lm,
        rank_a: None,
        rank_ab: None,
        residual: energy,
        iterations: accepted,
        candidate: pi,
        tolerance: eps,
        residual_trace: trace,
    })
}

fn check_finite(values: &[f64]) -> Result<(), StationarityError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StationarityError::NonFiniteResidual);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::QuadraticGame;
    use crate::linalg::Mat;

    fn ord(perm: &[usize]) -> ExecutionOrder {
        ExecutionOrder::new(perm.to_vec()).unwrap()
    }

    /// Q_1 = -pi_1^2 + pi_2, Q_2 = -(pi_2 - pi_1)^2: the worked coupled
    /// game whose two orderings disagree.
    fn coupled_game() -> QuadraticGame {
        QuadraticGame::new(
            "coupled",
            vec![
                Mat::from_rows(vec![vec![-1.0, 0.0], vec![0.0, 0.0]]),
                Mat::from_rows(vec![vec![-1.0, 1.0], vec![1.0, -1.0]]),
            ],
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            vec![0.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn coupled_game_closed_form() {
        let game = coupled_game();
        let (pi, model) = continuous_se(&game, &ord(&[0, 1])).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-12);
        assert!((pi[1] - 0.5).abs() < 1e-12);
        assert!((model.total_derivative(1, 0) - 1.0).abs() < 1e-12);

        let (pi_rev, _) = continuous_se(&game, &ord(&[1, 0])).unwrap();
        assert!(pi_rev[0].abs() < 1e-12);
        assert!(pi_rev[1].abs() < 1e-12);
    }

    #[test]
    fn decoupled_game_is_order_invariant() {
        let targets = [1.5, -0.25, 3.0];
        let game = QuadraticGame::decoupled("dec", &targets).unwrap();
        for ordering in ExecutionOrder::all(3).unwrap() {
            let (pi, model) = continuous_se(&game, &ordering).unwrap();
            for (v, t) in pi.iter().zip(&targets) {
                assert!((v - t).abs() < 1e-12);
            }
            for j in 0..3 {
                for i in 0..3 {
                    if i != j {
                        assert_eq!(model.total_derivative(j, i), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn residual_vanishes_at_equilibrium_and_reports_off_path() {
        let game = coupled_game();
        let ordering = ord(&[0, 1]);
        let (pi, _) = continuous_se(&game, &ordering).unwrap();
        let f = stationarity_residual(&game, &ordering, &pi).unwrap();
        assert!(f.iter().all(|v| v.abs() < 1e-9));

        // Decoupled game one unit off target: direct differentiation of
        // -(pi - c)^2 gives -2.
        let dec = QuadraticGame::decoupled("dec", &[0.5, -1.0]).unwrap();
        let shifted = [1.5, 0.0];
        let f = stationarity_residual(&dec, &ord(&[0, 1]), &shifted).unwrap();
        assert!((f[0] + 2.0).abs() < 1e-12);
        assert!((f[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn stacked_system_rows_match_residual() {
        let game = coupled_game();
        let sys = stack_joint_system(&game, &ord(&[0, 1]), &ord(&[1, 0])).unwrap();
        let probe = [0.3, -0.7];
        let stacked = sys.residual(&probe);
        let f1 = stationarity_residual(&game, &ord(&[0, 1]), &probe).unwrap();
        let f2 = stationarity_residual(&game, &ord(&[1, 0]), &probe).unwrap();
        for p in 0..2 {
            assert!((stacked[p] - f1[p]).abs() < 1e-12);
            assert!((stacked[2 + p] - f2[p]).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_orderings_are_rejected() {
        let game = coupled_game();
        assert!(matches!(
            stack_joint_system(&game, &ord(&[0, 1]), &ord(&[0, 1])),
            Err(StationarityError::IdenticalOrderings)
        ));
        let solo = QuadraticGame::decoupled("solo", &[1.0]).unwrap();
        assert!(matches!(
            stack_joint_system(&solo, &ord(&[0]), &ord(&[0])),
            Err(StationarityError::IdenticalOrderings)
        ));
    }

    #[test]
    fn decoupled_stack_is_solvable_with_duplicate_rows() {
        let targets = [2.0, -1.0];
        let game = QuadraticGame::decoupled("dec", &targets).unwrap();
        let sys = stack_joint_system(&game, &ord(&[0, 1]), &ord(&[1, 0])).unwrap();
        let report = rank_test(&sys, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(report.verdict, Verdict::Solvable);
        assert_eq!(report.rank_a, Some(2));
        assert_eq!(report.rank_ab, Some(2));
        for (c, t) in report.candidate.iter().zip(&targets) {
            assert!((c - t).abs() < 1e-9);
        }
    }

    #[test]
    fn coupled_stack_fails_the_rank_test() {
        let game = coupled_game();
        let sys = stack_joint_system(&game, &ord(&[0, 1]), &ord(&[1, 0])).unwrap();
        let report = rank_test(&sys, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(report.verdict, Verdict::Unsolvable);
        assert_eq!(report.rank_a, Some(2));
        assert_eq!(report.rank_ab, Some(3));
    }

    #[test]
    fn homogeneous_system_is_always_solvable() {
        // b = 0: the origin satisfies both blocks.
        let game = QuadraticGame::decoupled("origin", &[0.0, 0.0]).unwrap();
        let sys = stack_joint_system(&game, &ord(&[0, 1]), &ord(&[1, 0])).unwrap();
        let report = rank_test(&sys, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(report.verdict, Verdict::Solvable);
        assert!(report.candidate.iter().all(|v| v.abs() < 1e-12));

        // LM from the root: zero accepted iterations, zero energy.
        let lm = lm_minimize(&sys, &[0.0, 0.0], 1e-8, 200).unwrap();
        assert_eq!(lm.iterations, 0);
        assert_eq!(lm.residual, 0.0);
        assert_eq!(lm.verdict, Verdict::Solvable);
    }

    #[test]
    fn lm_converges_on_decoupled_and_plateaus_on_coupled() {
        let targets = [2.0, -1.0];
        let dec = QuadraticGame::decoupled("dec", &targets).unwrap();
        let sys = stack_joint_system(&dec, &ord(&[0, 1]), &ord(&[1, 0])).unwrap();
        let report = lm_minimize(&sys, &[0.0, 0.0], 1e-8, 200).unwrap();
        assert_eq!(report.verdict, Verdict::Solvable);
        assert!(report.residual < 1e-8);
        for (c, t) in report.candidate.iter().zip(&targets) {
            assert!((c - t).abs() < 1e-3);
        }
        // Monotone non-increase across accepted steps.
        for w in report.residual_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }

        let coupled = coupled_game();
        let sys = stack_joint_system(&coupled, &ord(&[0, 1]), &ord(&[1, 0])).unwrap();
        let report = lm_minimize(&sys, &[0.2, 0.2], 1e-8, 200).unwrap();
        assert_eq!(report.verdict, Verdict::Unsolvable);
        assert!(report.residual > 1e-4);
        // Analytic minimum of the stacked energy is 0.5 at (0.25, 0.25).
        assert!((report.residual - 0.5).abs() < 1e-6);
    }

    fn random_concave(rng: &mut impl FnMut() -> f64, players: usize) -> QuadraticGame {
        let off = 0.3 / players as f64;
        let mut quad = Vec::new();
        let mut linear = Vec::new();
        let mut constant = Vec::new();
        for i in 0..players {
            let mut a = Mat::zeros(players, players);
            for r in 0..players {
                for c in r..players {
                    let v = if r == c && r == i {
                        -(1.0 + rng())
                    } else {
                        (rng() - 0.5) * off
                    };
                    a.set(r, c, v);
                    a.set(c, r, v);
                }
            }
            quad.push(a);
            linear.push((0..players).map(|_| rng() * 2.0 - 1.0).collect());
            constant.push(rng() - 0.5);
        }
        QuadraticGame::new("random", quad, linear, constant).unwrap()
    }

    fn xorshift(seed: u64) -> impl FnMut() -> f64 {
        let mut state = seed.max(1);
        move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    #[test]
    fn total_derivatives_match_finite_differences_of_reactions() {
        let mut rng = xorshift(77);
        for _ in 0..30 {
            let players = 2 + (rng() * 3.0) as usize % 3;
            let game = random_concave(&mut rng, players);
            let orderings = ExecutionOrder::all(players).unwrap();
            let ordering = &orderings[(rng() * orderings.len() as f64) as usize % orderings.len()];
            let (pi, model) = continuous_se(&game, ordering).unwrap();
            let h = 1e-6;
            for i_pos in 0..players {
                let i = ordering.group_at(i_pos);
                for j_pos in (i_pos + 1)..players {
                    let j = ordering.group_at(j_pos);
                    let eval = |x: f64| {
                        let mut probe = pi.clone();
                        probe[i] = x;
                        model.replay(&mut probe, i_pos + 1);
                        probe[j]
                    };
                    let fd = (eval(pi[i] + h) - eval(pi[i] - h)) / (2.0 * h);
                    assert!(
                        (model.total_derivative(j, i) - fd).abs() < 1e-6,
                        "d pi_{j}/d pi_{i}: {} vs {fd}",
                        model.total_derivative(j, i)
                    );
                }
            }
        }
    }

    #[test]
    fn equilibria_zero_the_residual_on_random_games() {
        let mut rng = xorshift(101);
        for _ in 0..100 {
            let players = 2 + (rng() * 3.0) as usize % 3;
            let game = random_concave(&mut rng, players);
            let orderings = ExecutionOrder::all(players).unwrap();
            let ordering = &orderings[(rng() * orderings.len() as f64) as usize % orderings.len()];
            let (pi, _) = continuous_se(&game, ordering).unwrap();
            let residual = stationarity_residual(&game, ordering, &pi).unwrap();
            let max = residual.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(max < 1e-9, "residual {max}");
        }
    }

    #[test]
    fn order_shift_implies_unsolvable_stack() {
        // Whenever the two orderings commit to well-separated equilibria, no
        // common strategy satisfies both stacked condition sets. The stacked
        // energy scales quadratically with the equilibrium gap, so the
        // witness needs a gap comfortably above sqrt(eps).
        let mut rng = xorshift(303);
        let mut witnessed = 0;
        for _ in 0..60 {
            let players = 2 + (rng() * 2.0) as usize % 2;
            let game = random_concave(&mut rng, players);
            let orderings = ExecutionOrder::all(players).unwrap();
            let ord1 = &orderings[0];
            let ord2 = orderings.last().unwrap();
            let (pi1, _) = continuous_se(&game, ord1).unwrap();
            let (pi2, _) = continuous_se(&game, ord2).unwrap();
            let gap = pi1
                .iter()
                .zip(&pi2)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            if gap <= 1e-2 {
                continue;
            }
            witnessed += 1;
            let sys = stack_joint_system(&game, ord1, ord2).unwrap();
            let report = lm_minimize(&sys, &pi1, 1e-8, 200).unwrap();
            assert_eq!(report.verdict, Verdict::Unsolvable, "gap {gap}");
        }
        assert!(witnessed >= 5, "only {witnessed} shifted instances generated");
    }

    #[test]
    fn non_finite_residuals_abort_lm() {
        let sys = JointSystem::nonlinear(
            1,
            Box::new(|pi: &[f64]| vec![if pi[0] > 0.5 { f64::NAN } else { pi[0] - 1.0 }]),
        );
        assert!(matches!(
            lm_minimize(&sys, &[0.9], 1e-8, 50),
            Err(StationarityError::NonFiniteResidual)
        ));
    }

    #[test]
    fn nonlinear_mode_runs_lm_and_rejects_rank() {
        // Wrap the linear residual of the decoupled stack as a black box.
        let game = QuadraticGame::decoupled("dec", &[1.0, 2.0]).unwrap();
        let sys = stack_joint_system(&game, &ord(&[0, 1]), &ord(&[1, 0])).unwrap();
        let boxed = JointSystem::nonlinear(
            2,
            Box::new(move |pi: &[f64]| sys.residual(pi)),
        );
        assert!(matches!(
            rank_test(&boxed, DEFAULT_RANK_TOL),
            Err(StationarityError::NonlinearRankTest)
        ));
        let report = lm_minimize(&boxed, &[0.0, 0.0], 1e-8, 200).unwrap();
        assert_eq!(report.verdict, Verdict::Solvable);
        assert!((report.candidate[0] - 1.0).abs() < 1e-3);
        assert!((report.candidate[1] - 2.0).abs() < 1e-3);
    }
}
