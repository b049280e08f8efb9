use crate::error::QpError;

/// Algorithm used by [`crate::solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Operator splitting with active-set polishing.
    #[default]
    Admm,
    /// Primal-dual interior point (Mehrotra predictor-corrector). Falls back
    /// to ADMM when it stalls, which also covers infeasibility certificates.
    InteriorPoint,
}

impl std::str::FromStr for Method {
    type Err = QpError;

    fn from_str(s: &str) -> Result<Self, QpError> {
        match s {
            "admm" => Ok(Method::Admm),
            "ipm" | "interior-point" => Ok(Method::InteriorPoint),
            other => Err(QpError::Settings(format!("unknown method `{other}`"))),
        }
    }
}

/// Tuning knobs of the solver. Most fields only affect the operator-splitting
/// iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub method: Method,
    /// Absolute tolerance on primal and dual residuals.
    pub eps_abs: f64,
    /// Relative tolerance on primal and dual residuals.
    pub eps_rel: f64,
    /// Tolerance of the primal infeasibility certificate.
    pub eps_prim_inf: f64,
    /// Tolerance of the dual infeasibility (unboundedness) certificate.
    pub eps_dual_inf: f64,
    pub max_iter: usize,
    /// Initial step penalty.
    pub rho: f64,
    /// Proximal regularization on the primal variable.
    pub sigma: f64,
    /// Over-relaxation parameter, in (0, 2).
    pub alpha: f64,
    pub adaptive_rho: bool,
    /// Iterations between step penalty updates.
    pub adaptive_rho_interval: usize,
    /// A new penalty is only adopted if it differs from the current one by
    /// more than this factor.
    pub adaptive_rho_tolerance: f64,
    /// Ruiz equilibration passes.
    pub scaling_iters: usize,
    /// Iterations between termination checks.
    pub check_interval: usize,
    pub polish: bool,
    /// Residuals must be within this factor of the tolerances before an
    /// early polish is attempted.
    pub polish_trigger: f64,
    pub polish_refine_iters: usize,
    pub polish_delta: f64,
    pub ipm_max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            method: Method::Admm,
            eps_abs: 1e-8,
            eps_rel: 1e-8,
            eps_prim_inf: 1e-6,
            eps_dual_inf: 1e-6,
            max_iter: 200_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            adaptive_rho_interval: 50,
            adaptive_rho_tolerance: 5.0,
            scaling_iters: 10,
            check_interval: 25,
            polish: true,
            polish_trigger: 1e4,
            polish_refine_iters: 8,
            polish_delta: 1e-7,
            ipm_max_iter: 200,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), QpError> {
        let bad = |msg: &str| Err(QpError::Settings(msg.to_string()));
        if !(self.eps_abs > 0.0 && self.eps_rel > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.eps_prim_inf > 0.0 && self.eps_dual_inf > 0.0) {
            return bad("infeasibility tolerances must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return bad("alpha must lie in (0, 2)");
        }
        if !(self.rho > 0.0 && self.sigma > 0.0) {
            return bad("rho and sigma must be positive");
        }
        if self.max_iter == 0
            || self.ipm_max_iter == 0
            || self.check_interval == 0
            || self.adaptive_rho_interval == 0
        {
            return bad("iteration counts must be positive");
        }
        if !(self.polish_delta > 0.0) {
            return bad("polish_delta must be positive");
        }
        Ok(())
    }
}
