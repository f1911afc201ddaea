//! Desk-scale toolkit for execution-order analysis in sequential multi-agent games.
//!
//! The crate has three layers:
//!
//! * exact game solvers ([`games`], [`equilibrium`]) — pure-strategy Nash
//!   enumeration and N-level leader/follower backward induction on finite
//!   matrix games, including scans over every execution order;
//! * continuous-strategy stationarity analysis ([`stationarity`]) — per-order
//!   first-order conditions of quadratic games, the stacked dual-order system,
//!   and its rank / damped-least-squares solvability tests;
//! * a hierarchical trainer ([`hpa`]) that learns a state-dependent execution
//!   order on the built-in sequential Markov game environments ([`smg`],
//!   [`envs`]) with hand-rolled policy approximators ([`policy`]).
//!
//! Order scans run data-parallel via rayon by default; build with
//! `--no-default-features` for the sequential fallback.

pub mod envs;
pub mod equilibrium;
pub mod exec;
pub mod games;
pub mod hpa;
pub mod linalg;
pub mod policy;
pub mod smg;
pub mod stationarity;

pub use exec::ExecMode;
