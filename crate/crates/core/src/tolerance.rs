use serde::{Deserialize, Serialize};

/// Numerical thresholds shared by the certificates, the root finder and the simulator.
///
/// All defaults can be multiplied by a common factor with [`Tolerances::scaled`]; the
/// command-line tool wires this to `PHS_LAB_TOLERANCE_SCALE`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Singular values below `rank * sigma_max` count as zero.
    pub rank: f64,
    /// Eigenvalues above `-psd * scale` count as nonnegative.
    pub psd: f64,
    /// Gram entries below `isotropy * |b_i| |b_j|` count as zero.
    pub isotropy: f64,
    /// Relative reconstruction error allowed for `P1 H = S^-1 Delta S`.
    pub diagonalization: f64,
    /// Relative precision of the best decay constant.
    pub bisection: f64,
    /// Relative residual for linear solves inside the time stepper.
    pub solver: f64,
    /// Relative residual that stops Newton refinement of eigenvalues.
    pub newton: f64,
    /// Local error control of the adaptive RK4 transfer propagation.
    pub transfer: f64,
    /// Factor in the balance-residual threshold `factor * (dt^2 + dz^2)`.
    pub balance_factor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rank: 1e-10,
            psd: 1e-10,
            isotropy: 1e-10,
            diagonalization: 1e-10,
            bisection: 1e-10,
            solver: 1e-12,
            newton: 1e-10,
            transfer: 1e-10,
            balance_factor: 10.0,
        }
    }
}

impl Tolerances {
    pub fn scaled(factor: f64) -> Self {
        Tolerances::default().scale(factor)
    }

    pub fn scale(self, factor: f64) -> Self {
        Tolerances {
            rank: self.rank * factor,
            psd: self.psd * factor,
            isotropy: self.isotropy * factor,
            diagonalization: self.diagonalization * factor,
            bisection: self.bisection * factor,
            solver: self.solver * factor,
            newton: self.newton * factor,
            transfer: self.transfer * factor,
            balance_factor: self.balance_factor * factor,
        }
    }
}
