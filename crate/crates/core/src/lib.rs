//! Symmetry classification checks, coordinate maps, closed-form barrier
//! solutions and a finite-difference solver for the semilinear
//! Black-Scholes-Merton equation `u_t + s^2 x^2 u_xx / 2 + r x u_x + f(u) = 0`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classification;
pub mod cli;
pub mod equivalence;
pub mod expr;
pub mod jet;
pub mod solutions;
pub mod solver;
