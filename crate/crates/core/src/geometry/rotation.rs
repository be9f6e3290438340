use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::PointCloud;
use crate::error::{ensure_param, Result};

/// A proper rotation matrix of SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    m: [[f64; 3]; 3],
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Accepts `m` if it is orthonormal with determinant +1 to within `1e-9`.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self> {
        let r = Rotation { m };
        ensure_param!(r.orthogonality_error() < 1e-9, "matrix is not orthogonal");
        ensure_param!((r.det() - 1.0).abs() < 1e-9, "determinant is not +1");
        Ok(r)
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    /// Rotation by `angle` radians about the z axis.
    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation {
            m: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Rotation of a unit quaternion `(w, x, y, z)`.
    pub fn from_quaternion(q: [f64; 4]) -> Self {
        let [w, x, y, z] = q;
        Rotation {
            m: [
                [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
                [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
                [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
            ],
        }
    }

    /// Haar-uniform rotation drawn from `rng`.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return Self::from_quaternion(q.map(|v| v / norm));
            }
        }
    }

    /// Uniform angle about z drawn from `rng`.
    pub fn sample_z<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::about_z(rng.random_range(0.0..std::f64::consts::TAU))
    }

    #[inline]
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        std::array::from_fn(|i| m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2])
    }

    pub fn transpose(&self) -> Rotation {
        Rotation {
            m: std::array::from_fn(|i| std::array::from_fn(|j| self.m[j][i])),
        }
    }

    /// Matrix product `self · other`.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation {
            m: std::array::from_fn(|i| {
                std::array::from_fn(|j| (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum())
            }),
        }
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn trace(&self) -> f64 {
        self.m[0][0] + self.m[1][1] + self.m[2][2]
    }

    /// Largest entry of `|RᵀR − I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let rtr = self.transpose().compose(self);
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((rtr.m[i][j] - target).abs());
            }
        }
        err
    }
}

/// Uniform random rotation, reproducible per seed.
pub fn random_rotation(seed: u64) -> Rotation {
    Rotation::sample(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// The 24 rotations of the cube: signed permutation matrices with det +1.
///
/// Enumerated over permutations in lexicographic order, then sign patterns
/// `(+,+,+), (+,+,−), …` in binary order; index 0 is the identity.
pub fn signed_permutation_rotation(index: usize) -> Result<Rotation> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    ensure_param!(index < 24, "signed permutation index {index} out of range 0..24");
    let mut found = 0;
    for perm in PERMS {
        for signs in 0..8u32 {
            let mut m = [[0.0; 3]; 3];
            for (row, &col) in perm.iter().enumerate() {
                m[row][col] = if signs >> (2 - row) & 1 == 1 { -1.0 } else { 1.0 };
            }
            let r = Rotation { m };
            if r.det() == 1.0 {
                if found == index {
                    return Ok(r);
                }
                found += 1;
            }
        }
    }
    unreachable!("exactly 24 signed permutations have det +1")
}

pub fn apply_rotation(cloud: &PointCloud, rot: &Rotation) -> PointCloud {
    PointCloud {
        points: cloud.points().iter().map(|&p| rot.apply(p)).collect(),
        label: cloud.label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_rotations_are_proper() {
        for seed in 0..200 {
            let r = random_rotation(seed);
            assert!(r.orthogonality_error() <= 1e-12, "seed {seed}");
            assert!((r.det() - 1.0).abs() <= 1e-12, "seed {seed}");
        }
        assert_eq!(random_rotation(42), random_rotation(42));
        assert_ne!(random_rotation(42), random_rotation(43));
    }

    #[test]
    fn uniform_trace_has_zero_mean() {
        // Haar measure on SO(3): E[tr R] = 0.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let mean = (0..n).map(|_| Rotation::sample(&mut rng).trace()).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean trace {mean}");
    }

    #[test]
    fn signed_permutations_form_a_group() {
        let all: Vec<Rotation> = (0..24).map(|i| signed_permutation_rotation(i).unwrap()).collect();
        assert_eq!(all[0], Rotation::IDENTITY);
        for r in &all {
            assert_eq!(r.det(), 1.0);
            assert!(r.m.iter().flatten().all(|v| [-1.0, 0.0, 1.0].contains(v)));
        }
        for i in 0..24 {
            for j in i + 1..24 {
                assert_ne!(all[i], all[j]);
            }
        }
        for a in &all {
            for b in &all {
                let ab = a.compose(b);
                assert!(all.contains(&ab), "product escaped the set");
            }
        }
        assert!(signed_permutation_rotation(24).is_err());
    }

    #[test]
    fn rotate_points() {
        let cloud = PointCloud::new(vec![[1.0, 0.0, 0.0], [0.3, -2.0, 5.0]], Some(1)).unwrap();
        assert_eq!(apply_rotation(&cloud, &Rotation::IDENTITY), cloud);
        let quarter = Rotation::from_matrix([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(apply_rotation(&cloud, &quarter).points()[0], [0.0, 1.0, 0.0]);
        let r = random_rotation(9);
        let back = apply_rotation(&apply_rotation(&cloud, &r), &r.transpose());
        for (a, b) in back.points().iter().zip(cloud.points()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-12);
            }
        }
        assert_eq!(back.label, Some(1));
    }

    #[test]
    fn z_rotation_keeps_z() {
        let r = Rotation::about_z(1.1);
        let p = r.apply([0.2, 0.4, -0.7]);
        assert_eq!(p[2], -0.7);
        assert!(Rotation::from_matrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]]).is_err());
    }
}
