//! Azimuth helpers on the circle.

/// Wraps an angle in degrees into `(-180, 180]`.
pub fn wrap_deg(a: f64) -> f64 {
    let mut w = a.rem_euclid(360.0);
    if w > 180.0 {
        w -= 360.0;
    }
    w
}

/// Absolute angular difference in degrees, in `[0, 180]`.
pub fn circular_diff_deg(a: f64, b: f64) -> f64 {
    wrap_deg(a - b).abs()
}
