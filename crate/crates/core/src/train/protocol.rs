use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::Error;
use crate::geometry::Rotation;

/// Rotation applied to each sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RotMode {
    /// Identity (upright data).
    None,
    /// Uniform angle in `[0, 2π)` about the z axis.
    Z,
    /// Uniform over SO(3).
    So3,
}

impl RotMode {
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> Rotation {
        match self {
            RotMode::None => Rotation::about_z(0.0),
            RotMode::Z => Rotation::sample_z(rng),
            RotMode::So3 => Rotation::sample(rng),
        }
    }
}

impl FromStr for RotMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "i" => Ok(RotMode::None),
            "z" => Ok(RotMode::Z),
            "so3" => Ok(RotMode::So3),
            _ => Err(Error::Param(format!("unknown rotation '{s}' (expected none, z or so3)"))),
        }
    }
}

impl fmt::Display for RotMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RotMode::None => "I",
            RotMode::Z => "z",
            RotMode::So3 => "SO3",
        })
    }
}

/// Train-time augmentation and test-time rotation, written `train/test`
/// as in `I/SO3` or `z/z`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalProtocol {
    pub train_rot: RotMode,
    pub test_rot: RotMode,
}

impl FromStr for EvalProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let (a, b) = s
            .split_once('/')
            .ok_or_else(|| Error::Param(format!("protocol '{s}' must look like I/SO3")))?;
        let test_rot: RotMode = b.parse()?;
        if test_rot == RotMode::None {
            return Err(Error::Param("test rotation must be z or so3".into()));
        }
        Ok(EvalProtocol {
            train_rot: a.parse()?,
            test_rot,
        })
    }
}

impl fmt::Display for EvalProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.train_rot, self.test_rot)
    }
}
