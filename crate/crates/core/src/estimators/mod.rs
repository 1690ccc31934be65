//! Linear-model engine: declarative specs, design matrices with dummy and
//! interaction expansion, OLS and within-person fixed-effects fits with
//! cluster-robust (CR1) inference.

mod design;
mod fit;
mod qr;
mod report;
mod spec;

pub use design::{build_design, Design, DesignMatrix};
pub use fit::{fit, fit_fe, fit_ols, Coefficient, ControlFit, FitResult, Model};
pub use report::render_table;
pub use spec::{Reference, RegressionSpec, Term, Var};

/// Relative residual norm below which a column counts as collinear with the
/// columns declared before it.
pub const COLLINEARITY_TOL: f64 = 1e-9;
