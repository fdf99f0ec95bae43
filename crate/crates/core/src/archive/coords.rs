//! J2000 equatorial <-> Galactic conversion and sexagesimal formatting.

/// Right ascension of the north Galactic pole, degrees (J2000).
pub const NGP_RA_DEG: f64 = 192.85948;
/// Declination of the north Galactic pole, degrees (J2000).
pub const NGP_DEC_DEG: f64 = 27.12825;
/// Galactic longitude of the north celestial pole, degrees.
pub const NCP_L_DEG: f64 = 122.93192;

fn wrap360(x: f64) -> f64 {
    let r = x.rem_euclid(360.0);
    // rem_euclid can return 360.0 for tiny negative inputs.
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Rotate (lon, lat) into the frame whose pole is at (pole_lon, pole_lat)
/// and in which the source frame's pole has longitude `node`.
fn rotate(lon: f64, lat: f64, pole_lon: f64, pole_lat: f64, node: f64) -> (f64, f64) {
    let (sd, cd) = lat.to_radians().sin_cos();
    let (sp, cp) = pole_lat.to_radians().sin_cos();
    let (sa, ca) = (lon - pole_lon).to_radians().sin_cos();
    let sin_b = (sd * sp + cd * cp * ca).clamp(-1.0, 1.0);
    let b = sin_b.asin().to_degrees();
    if 90.0 - b.abs() < 1e-9 {
        return (0.0, b.signum() * 90.0);
    }
    let y = cd * sa;
    let x = sd * cp - cd * sp * ca;
    (wrap360(node - y.atan2(x).to_degrees()), b)
}

/// (ra, dec) in degrees to (l, b) in degrees; l in [0, 360). At the poles
/// l is undefined and returned as 0.
pub fn equatorial_to_galactic(ra_deg: f64, dec_deg: f64) -> (f64, f64) {
    rotate(ra_deg, dec_deg, NGP_RA_DEG, NGP_DEC_DEG, NCP_L_DEG)
}

/// (l, b) in degrees to (ra, dec) in degrees; ra in [0, 360).
pub fn galactic_to_equatorial(l_deg: f64, b_deg: f64) -> (f64, f64) {
    // The NCP sits at (NCP_L, NGP_DEC) in Galactic coordinates and the NGP
    // has right ascension NGP_RA, so the inverse is the same rotation.
    rotate(l_deg, b_deg, NCP_L_DEG, NGP_DEC_DEG, NGP_RA_DEG)
}

/// Great-circle distance in degrees (Vincenty form, accurate at all scales).
pub fn angular_separation(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (s1, c1) = lat1.to_radians().sin_cos();
    let (s2, c2) = lat2.to_radians().sin_cos();
    let (sd, cd) = (lon2 - lon1).to_radians().sin_cos();
    let num = ((c2 * sd).powi(2) + (c1 * s2 - s1 * c2 * cd).powi(2)).sqrt();
    let den = s1 * s2 + c1 * c2 * cd;
    num.atan2(den).to_degrees()
}

/// `hh:mm:ss.ss`, rounding to the nearest hundredth of a second of time.
pub fn format_ra_hms(ra_deg: f64) -> String {
    let day = 24 * 3600 * 100;
    let total = ((wrap360(ra_deg) / 15.0 * 3600.0 * 100.0).round() as i64).rem_euclid(day);
    let (h, rest) = (total / 360_000, total % 360_000);
    let (m, cs) = (rest / 6000, rest % 6000);
    format!("{h:02}:{m:02}:{:02}.{:02}", cs / 100, cs % 100)
}

/// `±dd:mm:ss.s`, rounding to the nearest tenth of an arcsecond.
pub fn format_dec_dms(dec_deg: f64) -> String {
    let sign = if dec_deg < 0.0 { '-' } else { '+' };
    let total = (dec_deg.abs() * 36_000.0).round() as i64;
    let (d, rest) = (total / 36_000, total % 36_000);
    let (m, ds) = (rest / 600, rest % 600);
    let sign = if total == 0 { '+' } else { sign };
    format!("{sign}{d:02}:{m:02}:{:02}.{}", ds / 10, ds % 10)
}
