//! Gas-lifted oil-well model: parameters, algebraic relations and the
//! three-state mass balance.

mod model;
mod params;
pub mod scalar;
mod steady;

pub use model::{
    compute_algebraics, compute_algebraics_generic, friction_lambda_tb, is_feasible, ode_rhs,
    ode_rhs_jacobian, safeguarded_sqrt, AlgebraicRecord, ControlInput, Mode, WellState,
    SQRT_FLOOR,
};
pub use params::{FrictionPoly, WellFile, WellParameters, BAR};
pub use steady::{steady_state, steady_state_from};
