//! Curve-straight engagement zones under pursuer-parameter uncertainty.
//!
//! * [`geom`]: exact curve-straight intercept geometry and the zone function `z`.
//! * [`diff`]: nested forward-mode dual numbers for gradients and Hessians.
//! * [`belief`]: Gaussian belief over the pursuer parameters.
//! * [`cspez`]: Monte Carlo, linearised, quadratic and neural estimators of
//!   the probability that an evader lies inside the true zone.
//! * [`surrogate`]: feature map, Latin hypercube data generation and the MLP.
//! * [`spline`]: uniform B-spline trajectories and unicycle flat outputs.
//! * [`planner`]: minimum-time chance-constrained trajectory optimisation.
//! * [`eval`]: accuracy metrics, level-set grids and trace-binned errors.

pub mod belief;
pub mod cspez;
pub mod diff;
pub mod error;
pub mod eval;
pub mod geom;
pub mod planner;
pub mod spline;
pub mod surrogate;

pub use belief::{gaussian_cdf, PursuerBelief, RngStream};
pub use cspez::{CspezEstimate, Method};
pub use diff::{Dual, Real};
pub use error::{Error, Result};
pub use geom::{ez_value, EvaderState, PursuerParams, Side, Vec2};
pub use spline::{FlatOutputs, SplineTrajectory};
