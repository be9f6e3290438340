//! Labelled synthetic surfaces used as a small classification benchmark.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::PointCloud;
use crate::error::{ensure_param, Error, Result};

pub const NUM_SHAPE_CLASSES: usize = 4;

pub const TORUS_MAJOR: f64 = 1.0;
pub const TORUS_MINOR: f64 = 0.35;
pub const CYLINDER_RADIUS: f64 = 0.5;
pub const CYLINDER_HEIGHT: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeClass {
    /// Unit sphere.
    Sphere,
    /// Cube of side 1.
    Cube,
    /// Torus about z with major radius 1 and tube radius 0.35.
    Torus,
    /// Closed cylinder along z, radius 0.5 and height 2.
    Cylinder,
}

impl ShapeClass {
    pub fn from_id(id: usize) -> Result<Self> {
        Ok(match id {
            0 => ShapeClass::Sphere,
            1 => ShapeClass::Cube,
            2 => ShapeClass::Torus,
            3 => ShapeClass::Cylinder,
            _ => {
                return Err(Error::param(format!(
                    "unknown shape class {id} (expected 0..{NUM_SHAPE_CLASSES})"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cube => "cube",
            ShapeClass::Torus => "torus",
            ShapeClass::Cylinder => "cylinder",
        }
    }

    fn sample<R: Rng>(self, rng: &mut R) -> [f64; 3] {
        match self {
            ShapeClass::Sphere => loop {
                let v: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if n > 1e-9 {
                    break v.map(|c| c / n);
                }
            },
            ShapeClass::Cube => {
                let face = rng.random_range(0..6usize);
                let axis = face / 2;
                let side = if face % 2 == 0 { -0.5 } else { 0.5 };
                let mut p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.5..=0.5));
                p[axis] = side;
                p
            }
            ShapeClass::Torus => {
                // area element ∝ (R + r cos θ); accept θ by rejection
                let theta = loop {
                    let t = rng.random_range(0.0..TAU);
                    let accept = (TORUS_MAJOR + TORUS_MINOR * t.cos()) / (TORUS_MAJOR + TORUS_MINOR);
                    if rng.random::<f64>() < accept {
                        break t;
                    }
                };
                let phi = rng.random_range(0.0..TAU);
                let ring = TORUS_MAJOR + TORUS_MINOR * theta.cos();
                [ring * phi.cos(), ring * phi.sin(), TORUS_MINOR * theta.sin()]
            }
            ShapeClass::Cylinder => {
                let side = TAU * CYLINDER_RADIUS * CYLINDER_HEIGHT;
                let caps = 2.0 * PI * CYLINDER_RADIUS * CYLINDER_RADIUS;
                let phi = rng.random_range(0.0..TAU);
                let half = CYLINDER_HEIGHT / 2.0;
                if rng.random::<f64>() < side / (side + caps) {
                    let z = rng.random_range(-half..=half);
                    [CYLINDER_RADIUS * phi.cos(), CYLINDER_RADIUS * phi.sin(), z]
                } else {
                    let rad = CYLINDER_RADIUS * rng.random::<f64>().sqrt();
                    let z = if rng.random::<bool>() { half } else { -half };
                    [rad * phi.cos(), rad * phi.sin(), z]
                }
            }
        }
    }
}

/// Samples `n_points` points roughly uniformly over the surface of a class.
pub fn synthesize_shapes(class_id: usize, n_points: usize, rng_seed: u64) -> Result<PointCloud> {
    let class = ShapeClass::from_id(class_id)?;
    ensure_param!(n_points >= 16, "need at least 16 points, got {n_points}");
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let points = (0..n_points).map(|_| class.sample(&mut rng)).collect();
    PointCloud::new(points, Some(class_id))
}
