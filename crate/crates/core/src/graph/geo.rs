use serde::{Deserialize, Serialize};

use super::GraphError;

/// Mean Earth radius used for great-circle distances.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Latitude/longitude in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GraphError> {
        let p = Self { lat, lon };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), GraphError> {
        if !(self.lat.abs() <= 90.0 && self.lon.abs() <= 180.0) {
            return Err(GraphError::InvalidCoordinate { lat: self.lat, lon: self.lon });
        }
        Ok(())
    }
}

/// Haversine distance in kilometres.
pub fn great_circle_km(a: LatLon, b: LatLon) -> Result<f64, GraphError> {
    a.validate()?;
    b.validate()?;
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    Ok(2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Spherical law of cosines, an independent route to the same distance.
    fn law_of_cosines_km(a: LatLon, b: LatLon) -> f64 {
        let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
        let dl = (b.lon - a.lon).to_radians();
        let c = (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos()).clamp(-1.0, 1.0);
        EARTH_RADIUS_KM * c.acos()
    }

    #[test]
    fn identical_points_are_zero_apart() {
        let p = LatLon::new(35.4, -97.5).unwrap();
        assert_eq!(great_circle_km(p, p).unwrap(), 0.0);
    }

    #[test]
    fn antipodal_on_equator() {
        let d = great_circle_km(LatLon::new(0.0, 0.0).unwrap(), LatLon::new(0.0, 180.0).unwrap()).unwrap();
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 1e-6);
        assert!((d - 20015.1).abs() < 0.1);
    }

    #[test]
    fn one_degree_of_latitude_matches_law_of_cosines() {
        let a = LatLon::new(35.0, -97.0).unwrap();
        let b = LatLon::new(36.0, -97.0).unwrap();
        let d = great_circle_km(a, b).unwrap();
        assert!((d - law_of_cosines_km(a, b)).abs() < 0.1);
        assert!((d - great_circle_km(b, a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_coordinates_are_rejected() {
        assert!(LatLon::new(91.0, 0.0).is_err());
        assert!(LatLon::new(0.0, -180.5).is_err());
        let bad = LatLon { lat: f64::NAN, lon: 0.0 };
        assert!(great_circle_km(bad, LatLon::new(0.0, 0.0).unwrap()).is_err());
    }
}
