//! Great-circle geometry on (longitude, latitude) pairs in degrees.

const EARTH_RADIUS_KM: f64 = 6371.0088;

/// A (longitude, latitude) position in degrees.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LonLat {
    pub lon: f64,
    pub lat: f64,
}

impl LonLat {
    pub fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }
}

/// Haversine distance in kilometres.
pub fn haversine_km(a: LonLat, b: LonLat) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Equirectangular projection to planar kilometres around `origin`.
/// Accurate to well under a percent across a city-sized rectangle.
pub fn project_km(p: LonLat, origin: LonLat) -> (f64, f64) {
    let k = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
    let x = (p.lon - origin.lon) * k * origin.lat.to_radians().cos();
    let y = (p.lat - origin.lat) * k;
    (x, y)
}

/// Inverse of [`project_km`].
pub fn unproject_km(xy: (f64, f64), origin: LonLat) -> LonLat {
    let k = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
    LonLat {
        lon: origin.lon + xy.0 / (k * origin.lat.to_radians().cos()),
        lat: origin.lat + xy.1 / k,
    }
}

/// Axis-aligned study region.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Rectangle {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl Rectangle {
    pub fn contains(&self, p: LonLat) -> bool {
        p.lon >= self.min_lon && p.lon <= self.max_lon && p.lat >= self.min_lat && p.lat <= self.max_lat
    }

    /// Width (east-west, at the centre latitude) and height in kilometres.
    pub fn extent_km(&self) -> (f64, f64) {
        let mid = (self.min_lat + self.max_lat) / 2.0;
        let w = haversine_km(LonLat::new(self.min_lon, mid), LonLat::new(self.max_lon, mid));
        let h = haversine_km(LonLat::new(self.min_lon, self.min_lat), LonLat::new(self.min_lon, self.max_lat));
        (w, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_degree_of_latitude() {
        let d = haversine_km(LonLat::new(-74.0, 40.0), LonLat::new(-74.0, 41.0));
        assert!((d - 111.19).abs() < 0.05, "{d}");
    }

    #[test]
    fn projection_round_trip() {
        let o = LonLat::new(-73.98, 40.75);
        let p = LonLat::new(-73.95, 40.80);
        let back = unproject_km(project_km(p, o), o);
        assert!((back.lon - p.lon).abs() < 1e-12 && (back.lat - p.lat).abs() < 1e-12);
        let (x, y) = project_km(p, o);
        let planar = (x * x + y * y).sqrt();
        assert!((planar - haversine_km(o, p)).abs() / planar < 1e-3);
    }
}
