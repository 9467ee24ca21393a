//! Numeric policy shared by every module.
//!
//! All thresholds used by geometry, solvers and checks live here so that a
//! single record documents the precision contract of the crate.

/// Tolerances and iteration caps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NumericPolicy {
    /// Residual target of exact geometric operations (projection, resolvent).
    pub geometry: f64,
    /// Slack used by randomized property checks.
    pub property: f64,
    /// Unit-norm tolerance for polytope face normals.
    pub unit_normal: f64,
    /// Iteration cap of the alternating-projection loop.
    pub dykstra_max_cycles: usize,
    /// Slack below which a face counts as tight when polishing a projection.
    pub active_face: f64,
    /// Half-width of the artificial box used to certify polytope boundedness.
    pub bounding_radius: f64,
    /// Relative pivot threshold for dropping collinear regression columns.
    pub regression_pivot: f64,
    /// Snap distance for breakpoints and grid alignment (relative to the horizon).
    pub time_snap: f64,
}

impl NumericPolicy {
    pub const DEFAULT: NumericPolicy = NumericPolicy {
        geometry: 1e-12,
        property: 1e-10,
        unit_normal: 1e-12,
        dykstra_max_cycles: 100_000,
        active_face: 1e-9,
        bounding_radius: 1e6,
        regression_pivot: 1e-10,
        time_snap: 1e-12,
    };
}

impl Default for NumericPolicy {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// The policy used by all free functions of the crate.
pub const POLICY: NumericPolicy = NumericPolicy::DEFAULT;
