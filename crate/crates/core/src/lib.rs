//! Inverse quadratic transportation problems.
//!
//! Given a balanced transportation instance, a quadratic cost `(Q, c)` and a
//! feasible flow `x0`, find the nearest cost `(H, d)` under an L1 or L-infinity
//! perturbation norm for which `x0` is optimal. Solutions come from an exact
//! linear program or from a closed-form repair of the reduced costs, and are
//! checked by brute-force oracles on small instances.

pub mod cli;
pub mod forward;
pub mod inverse;
pub mod inverse_l1;
pub mod inverse_linf;
pub mod io;
pub mod kkt;
pub mod linprog;
pub mod model;
pub mod oracle;
