//! Proximal solvers for the three convex blocks.
//!
//! Holding two factors fixed, the objective separates into independent
//! problems over rows of `W` (with `mu` appended), columns of `C`, and columns
//! of `T`. Each is solved with [`fista_minimize`].

mod fista;
pub(crate) mod subproblems;

pub use fista::{
    fista_minimize, ClosureObjective, FistaConfig, Identity, NonNegative, NonNegativeL1,
    ProximalTerm, SmoothObjective, SubproblemResult,
};
pub use subproblems::{
    grad_c_column, grad_t_column, grad_w_row, prox_nonneg, prox_w, CColumnProblem, TColumnProblem,
    WRowProblem,
};
