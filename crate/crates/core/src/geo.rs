//! Great-circle distance and the max-rank transform.

use serde::{Deserialize, Serialize};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub longitude_deg: f64,
    pub latitude_deg: f64,
    pub elevation_m: f64,
}

impl GeoPoint {
    pub fn new(longitude_deg: f64, latitude_deg: f64, elevation_m: f64) -> Self {
        GeoPoint {
            longitude_deg,
            latitude_deg,
            elevation_m,
        }
    }

    pub fn is_valid(&self) -> bool {
        (-180.0..=180.0).contains(&self.longitude_deg)
            && (-90.0..=90.0).contains(&self.latitude_deg)
            && self.elevation_m.is_finite()
    }
}

/// Haversine great-circle distance on a sphere of radius [`EARTH_RADIUS_KM`].
pub fn spherical_distance_km(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let (lat1, lat2) = (a.latitude_deg.to_radians(), b.latitude_deg.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.longitude_deg - a.longitude_deg).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.clamp(0.0, 1.0).sqrt().asin()
}

pub fn elevation_diff_m(a: &GeoPoint, b: &GeoPoint) -> f64 {
    b.elevation_m - a.elevation_m
}

/// Rank of each value as the number of values less than or equal to it, so
/// tied values all receive the largest rank of their group.
pub fn max_rank(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        for &idx in &order[start..end] {
            ranks[idx] = end;
        }
        start = end;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(lon: f64, lat: f64) -> GeoPoint {
        GeoPoint::new(lon, lat, 0.0)
    }

    #[test]
    fn closed_form_distances() {
        assert_eq!(spherical_distance_km(&p(12.0, -3.0), &p(12.0, -3.0)), 0.0);
        let quarter = std::f64::consts::FRAC_PI_2 * EARTH_RADIUS_KM;
        assert!((spherical_distance_km(&p(0.0, 0.0), &p(0.0, 90.0)) - 10007.543).abs() < 1e-3);
        assert!((spherical_distance_km(&p(0.0, 0.0), &p(0.0, 90.0)) - quarter).abs() < 1e-9);
        assert!((spherical_distance_km(&p(0.0, 0.0), &p(180.0, 0.0)) - 20015.087).abs() < 1e-3);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(max_rank(&[3.2, 1.1, 5.0]), vec![2, 1, 3]);
        assert_eq!(max_rank(&[2.0, 2.0, 1.0]), vec![3, 3, 1]);
        assert_eq!(max_rank(&[7.0]), vec![1]);
    }

    fn indicator_sum(values: &[f64]) -> Vec<usize> {
        values
            .iter()
            .map(|x| values.iter().filter(|y| x >= y).count())
            .collect()
    }

    proptest! {
        #[test]
        fn rank_matches_indicator_sum(v in prop::collection::vec(-5i32..5, 1..30)) {
            let v: Vec<f64> = v.into_iter().map(f64::from).collect();
            prop_assert_eq!(max_rank(&v), indicator_sum(&v));
        }

        #[test]
        fn rank_invariant_under_increasing_transform(v in prop::collection::vec(-3.0f64..3.0, 1..30)) {
            let t: Vec<f64> = v.iter().map(|x| x.exp() * 2.0 + 1.0).collect();
            prop_assert_eq!(max_rank(&v), max_rank(&t));
        }

        #[test]
        fn distance_symmetric_and_triangle(
            a in (-180.0f64..180.0, -90.0f64..90.0),
            b in (-180.0f64..180.0, -90.0f64..90.0),
            c in (-180.0f64..180.0, -90.0f64..90.0),
        ) {
            let (a, b, c) = (p(a.0, a.1), p(b.0, b.1), p(c.0, c.1));
            let ab = spherical_distance_km(&a, &b);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, spherical_distance_km(&b, &a));
            let ac = spherical_distance_km(&a, &c);
            let cb = spherical_distance_km(&c, &b);
            prop_assert!(ab <= (ac + cb) * (1.0 + 1e-9) + 1e-9);
        }
    }
}
