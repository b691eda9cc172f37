use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;

pub fn random_rotation<R: Rng>(rng: &mut R) -> Matrix3<f64> {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    *Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).matrix()
}
