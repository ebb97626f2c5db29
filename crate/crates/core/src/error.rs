use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{name} is not symmetric positive semidefinite (asymmetry {asymmetry:.3e}, min eigenvalue {min_eigenvalue:.3e})")]
    NotPsd {
        name: &'static str,
        asymmetry: f64,
        min_eigenvalue: f64,
    },

    /// `Upsilon_k` is not positive definite, so the strict problem has no unique minimiser.
    #[error("Upsilon is not positive definite at step {step} (min eigenvalue {min_eigenvalue:.3e})")]
    Solvability { step: usize, min_eigenvalue: f64 },

    /// The range condition `Upsilon Upsilon^+ M = M` fails.
    #[error("regular condition violated at step {step} (residual {residual:.3e})")]
    Regularity { step: usize, residual: f64 },

    #[error("stationary Riccati iteration did not converge in {iterations} iterations (last change {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("closed loop is not stable (spectral radius {spectral_radius:.6})")]
    Stabilization { spectral_radius: f64 },

    #[error("step {k} outside horizon 0..={horizon}")]
    Index { k: usize, horizon: usize },

    #[error("normal equations are singular (condition estimate {condition:.3e}); minimiser is not unique")]
    NonUnique { condition: f64 },

    #[error("controller failed at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }

    /// Strips any step wrapper.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for data/configuration problems as opposed to numerical solver failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self.root(),
            Error::Dimension(_) | Error::Domain(_) | Error::NotPsd { .. } | Error::Index { .. }
        )
    }
}
