//! Ready-made systems: transmission line, vibrating string with a boundary damper and
//! scalar transport with a single boundary row.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::model::{
    BoundaryForm, BoundaryStructure, HamiltonianDensity, PortHamiltonianSystem, SpatialDomain,
    StructureMatrices,
};

fn positive(field: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(crate::PhsError::invalid(field, format!("must be positive, got {v}")))
    }
}

/// Lossless line on `[0, 1]` with state `(Q, phi)`, voltage input `V(a) = u`, resistive
/// load `V(b) = R I(b)` and output `y = I(a)`.
pub fn transmission_line(c: f64, l: f64, r: f64) -> Result<PortHamiltonianSystem> {
    let c = positive("C", c)?;
    let l = positive("L", l)?;
    if !(r >= 0.0 && r.is_finite()) {
        return Err(crate::PhsError::invalid("R", format!("must be nonnegative, got {r}")));
    }
    let matrices = StructureMatrices::new(
        DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]),
        DMatrix::zeros(2, 2),
    )?;
    let density = HamiltonianDensity::constant(DMatrix::from_row_slice(
        2,
        2,
        &[1.0 / c, 0.0, 0.0, 1.0 / l],
    ))?;
    // Position coordinates (V(b), I(b), V(a), I(a)).
    let boundary = BoundaryStructure::new(
        DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 1.0, 0.0]),
        DMatrix::from_row_slice(1, 4, &[1.0, -r, 0.0, 0.0]),
        DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 0.0, 1.0]),
        BoundaryForm::Position,
    )?;
    PortHamiltonianSystem::new(SpatialDomain::new(0.0, 1.0)?, matrices, density, boundary)
}

/// String `rho w_tt = (T w_z)_z` on `[0, 1]` with state `(rho w_t, w_z)`, fixed at `a`,
/// force input `T w_z(b) + k w_t(b) = u` and velocity output `y = w_t(b)`.
pub fn wave_equation(rho: f64, tension: f64, k: f64) -> Result<PortHamiltonianSystem> {
    let rho = positive("rho", rho)?;
    let tension = positive("T", tension)?;
    if !(k >= 0.0 && k.is_finite()) {
        return Err(crate::PhsError::invalid("k", format!("must be nonnegative, got {k}")));
    }
    let matrices = StructureMatrices::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        DMatrix::zeros(2, 2),
    )?;
    let density = HamiltonianDensity::constant(DMatrix::from_row_slice(
        2,
        2,
        &[1.0 / rho, 0.0, 0.0, tension],
    ))?;
    // Position coordinates (w_t(b), T w_z(b), w_t(a), T w_z(a)).
    let boundary = BoundaryStructure::new(
        DMatrix::from_row_slice(1, 4, &[k, 1.0, 0.0, 0.0]),
        DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 1.0, 0.0]),
        DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]),
        BoundaryForm::Position,
    )?;
    PortHamiltonianSystem::new(SpatialDomain::new(0.0, 1.0)?, matrices, density, boundary)
}

/// `x_t = x_z` on `[a, b]` with the single homogeneous row `row . (x(b), x(a)) = 0`.
pub fn scalar_transport(a: f64, b: f64, row: [f64; 2]) -> Result<PortHamiltonianSystem> {
    let matrices = StructureMatrices::new(DMatrix::identity(1, 1), DMatrix::zeros(1, 1))?;
    let density = HamiltonianDensity::constant(DMatrix::identity(1, 1))?;
    let boundary = BoundaryStructure::new(
        DMatrix::zeros(0, 2),
        DMatrix::from_row_slice(1, 2, &row),
        DMatrix::zeros(0, 2),
        BoundaryForm::Position,
    )?;
    PortHamiltonianSystem::new(SpatialDomain::new(a, b)?, matrices, density, boundary)
}

/// Lossless part of the heat equation on `[0, 1]`: `f1 = d e2/dz`, `f2 = d e1/dz` with the
/// closure `e2 = alpha f2` treated as storage, so `H = diag(h, 1/alpha)`, and insulated
/// ends `e2(a) = e2(b) = 0`.
pub fn heat_skeleton(alpha: f64, h: f64) -> Result<PortHamiltonianSystem> {
    let alpha = positive("alpha", alpha)?;
    let h = positive("h", h)?;
    let matrices = StructureMatrices::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        DMatrix::zeros(2, 2),
    )?;
    let density = HamiltonianDensity::constant(DMatrix::from_row_slice(
        2,
        2,
        &[h, 0.0, 0.0, 1.0 / alpha],
    ))?;
    let boundary = BoundaryStructure::new(
        DMatrix::zeros(0, 4),
        DMatrix::from_row_slice(2, 4, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
        DMatrix::zeros(0, 4),
        BoundaryForm::Position,
    )?;
    PortHamiltonianSystem::new(SpatialDomain::new(0.0, 1.0)?, matrices, density, boundary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameters_are_validated() {
        assert!(transmission_line(0.0, 1.0, 1.0).is_err());
        assert!(transmission_line(1.0, 1.0, -1.0).is_err());
        assert!(wave_equation(1.0, -1.0, 0.0).is_err());
        assert!(heat_skeleton(1.0, 0.0).is_err());
    }

    #[test]
    fn wave_generation_matrix_is_diag_2k_0() {
        let k = 0.7;
        let sys = wave_equation(2.0, 3.0, k).unwrap();
        let m = crate::analysis::generation_matrix(sys.boundary());
        let expected = DMatrix::from_row_slice(2, 2, &[2.0 * k, 0.0, 0.0, 0.0]);
        assert!((m - expected).amax() < 1e-12);
    }
}
