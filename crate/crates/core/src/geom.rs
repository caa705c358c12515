//! Small vector helpers shared by the template, tracker and phantom code.

use nalgebra::Vector3;

/// A point or vector in physical (mm) coordinates.
pub type Point3 = Vector3<f64>;

/// Deterministic orthonormal pair `(e1, e2)` perpendicular to unit vector `v`.
///
/// `e1` is built from the coordinate axis least aligned with `v`, so the basis
/// only depends on `v`.
pub fn orthonormal_basis(v: &Point3) -> (Point3, Point3) {
    let a = v.x.abs();
    let b = v.y.abs();
    let c = v.z.abs();
    let helper = if a <= b && a <= c {
        Point3::x()
    } else if b <= c {
        Point3::y()
    } else {
        Point3::z()
    };
    let e1 = v.cross(&helper).normalize();
    let e2 = v.cross(&e1);
    (e1, e2)
}

/// Angle between two unit vectors in radians, robust near 0 and pi.
pub fn angle_between(a: &Point3, b: &Point3) -> f64 {
    let cross = a.cross(b).norm();
    let dot = a.dot(b);
    cross.atan2(dot)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_is_orthonormal() {
        for v in [
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 0.0, -1.0),
            Point3::new(0.3, -0.4, 0.866).normalize(),
        ] {
            let (e1, e2) = orthonormal_basis(&v);
            assert!((e1.norm() - 1.0).abs() < 1e-12);
            assert!((e2.norm() - 1.0).abs() < 1e-12);
            assert!(e1.dot(&v).abs() < 1e-12);
            assert!(e2.dot(&v).abs() < 1e-12);
            assert!(e1.dot(&e2).abs() < 1e-12);
        }
    }

    #[test]
    fn angle_of_perpendicular_vectors() {
        let a = angle_between(&Point3::x(), &Point3::y());
        assert!((a - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }
}
