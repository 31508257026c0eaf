//! Tolerances shared by every module, gathered in one record so a run can
//! snapshot (and override) all of them at once.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

static ACTIVE: OnceLock<NumericPolicy> = OnceLock::new();

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NumericPolicy {
    /// Algebraic identities: hermiticity, tracelessness, orthonormality, closure residuals.
    pub algebraic: f64,
    /// Closure residuals for pseudo-Cartan relations and centralizer commutators.
    pub closure: f64,
    /// Unitarity defect ‖UU† − 𝕀‖_F.
    pub unitarity: f64,
    /// Distance from the principal branch cut at π below which logm refuses to choose.
    pub branch_cut: f64,
    /// Absolute tolerance for merging eigenvalues of the fixed element â.
    pub eigen_cluster: f64,
    /// Relative singular-value threshold of the restricted (ad_a)⁻¹ pseudo-inverse.
    pub pinv_threshold: f64,
    /// Self-consistency target for time-ordered exponentials.
    pub time_ordering: f64,
    /// Default local error tolerance of the adaptive integrator.
    pub integration: f64,
    /// Terminal cost below which a boundary-value solve counts as converged.
    pub bvp_success: f64,
}

impl Default for NumericPolicy {
    fn default() -> Self {
        Self {
            algebraic: 1e-12,
            closure: 1e-10,
            unitarity: 1e-10,
            branch_cut: 1e-9,
            eigen_cluster: 1e-9,
            pinv_threshold: 1e-10,
            time_ordering: 1e-9,
            integration: 1e-10,
            bvp_success: 1e-6,
        }
    }
}

impl NumericPolicy {
    /// Load a policy from JSON; keys that are absent keep their defaults.
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Policy in effect for this process: the installed one, else the defaults.
    pub fn current() -> Self {
        ACTIVE.get().copied().unwrap_or_default()
    }

    /// Installs the process-wide policy. Only the first call takes effect;
    /// later calls return `false`.
    pub fn install(self) -> bool {
        ACTIVE.set(self).is_ok()
    }
}
