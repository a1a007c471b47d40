//! Coordinate-form test models for the regularity classifier.

use std::sync::Arc;

use crate::regular::{CommonFormModel, CoordinateModel};

/// `x_j = theta + u_j`.
pub fn location_model(n: usize) -> CoordinateModel {
    CoordinateModel::new(
        n,
        1,
        Arc::new(|_, u, th| th[0] + u),
        Arc::new(|_, _, _| 1.0),
        Arc::new(|_, _, _, _| 1.0),
    )
    .unwrap()
}

/// `x_j = theta * u_j` on positive ranges.
pub fn scale_model(n: usize) -> CoordinateModel {
    CoordinateModel::new(
        n,
        1,
        Arc::new(|_, u, th| th[0] * u),
        Arc::new(|_, _, th| th[0]),
        Arc::new(|_, u, _, _| u),
    )
    .unwrap()
}

/// `x_1 = theta + u_1`, `x_2 = u_2 + theta^2 u_2 + theta`: the derivative
/// ratio depends on theta, so no observed conditioning variable exists.
pub fn nonseparable_model() -> CoordinateModel {
    CoordinateModel::new(
        2,
        1,
        Arc::new(|j, u, th| {
            if j == 0 {
                th[0] + u
            } else {
                u + th[0] * th[0] * u + th[0]
            }
        }),
        Arc::new(|j, _, th| if j == 0 { 1.0 } else { 1.0 + th[0] * th[0] }),
        Arc::new(|j, u, th, _| {
            if j == 0 {
                1.0
            } else {
                2.0 * th[0] * u + 1.0
            }
        }),
    )
    .unwrap()
}

/// Location model with one rogue coordinate (index 3, 1-based) that breaks
/// separability.
pub fn mixed_model(n: usize) -> CoordinateModel {
    assert!(n >= 3);
    CoordinateModel::new(
        n,
        1,
        Arc::new(|j, u, th| {
            if j == 2 {
                u + th[0] * th[0] * u + th[0]
            } else {
                th[0] + u
            }
        }),
        Arc::new(|j, _, th| if j == 2 { 1.0 + th[0] * th[0] } else { 1.0 }),
        Arc::new(|j, u, th, _| {
            if j == 2 {
                2.0 * th[0] * u + 1.0
            } else {
                1.0
            }
        }),
    )
    .unwrap()
}

/// `x = theta_2 u + theta_1`: the affine two-parameter family.
pub fn affine_two_parameter_model() -> CommonFormModel {
    CommonFormModel::new(
        2,
        Arc::new(|th, u| th[1] * u + th[0]),
        Arc::new(|th, _| th[1]),
        Arc::new(|_, u, k| if k == 0 { 1.0 } else { u }),
    )
}

/// `x = theta_1 + theta_2 u + theta_2^2 u^3`: no affine structure.
pub fn cubic_two_parameter_model() -> CommonFormModel {
    CommonFormModel::new(
        2,
        Arc::new(|th, u| th[0] + th[1] * u + th[1] * th[1] * u * u * u),
        Arc::new(|th, u| th[1] + 3.0 * th[1] * th[1] * u * u),
        Arc::new(|th, u, k| {
            if k == 0 {
                1.0
            } else {
                u + 2.0 * th[1] * u * u * u
            }
        }),
    )
}

/// `x = theta_1 + theta_2 u + theta_3 u`: parameters 2 and 3 act through
/// their sum only.
pub fn duplicated_three_parameter_model() -> CommonFormModel {
    CommonFormModel::new(
        3,
        Arc::new(|th, u| th[0] + th[1] * u + th[2] * u),
        Arc::new(|th, _| th[1] + th[2]),
        Arc::new(|_, u, k| if k == 0 { 1.0 } else { u }),
    )
}

/// `x = theta_1 + theta_2 u + theta_3 u^2`: a full-rank Vandermonde family.
pub fn vandermonde_three_parameter_model() -> CommonFormModel {
    CommonFormModel::new(
        3,
        Arc::new(|th, u| th[0] + th[1] * u + th[2] * u * u),
        Arc::new(|th, u| th[1] + 2.0 * th[2] * u),
        Arc::new(|_, u, k| match k {
            0 => 1.0,
            1 => u,
            _ => u * u,
        }),
    )
}
