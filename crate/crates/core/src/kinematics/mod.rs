//! Morphology parameterization, module catalog, robot realization, forward
//! kinematics and the geometric Jacobian.

mod catalog;
mod robot;

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use catalog::{AttachSide, CatalogCapsule, ModuleCatalog, ModuleChoice, CATALOG_FORMAT_VERSION};
pub use robot::{
    build_robot, forward_kinematics, geometric_jacobian, jacobian_from_frames, Attach, Axis, Element, FkResult, RobotModel, ShapeSpec,
    Source,
};

/// Capsule radius of parameterized links: 120 mm diameter.
pub const LINK_RADIUS: f64 = 0.06;
/// Upper bound on `d` and `|a|` in free mode (m).
pub const FREE_LENGTH_MAX: f64 = 0.4;
/// Lower and upper bounds of the nonzero economic length intervals (m).
pub const ECONOMIC_LENGTH_MIN: f64 = 0.1;
pub const ECONOMIC_LENGTH_MAX: f64 = 0.4;
/// Admissible economic twist angles.
pub const ECONOMIC_TWISTS: [f64; 3] = [0.0, FRAC_PI_2, -FRAC_PI_2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("row {row}: {reason}")]
    ConstraintViolation { row: usize, reason: String },
    #[error("slot {slot}: module index {index} out of range ({available} choices)")]
    BadSlot { slot: usize, index: usize, available: usize },
    #[error("modular designs need a module catalog")]
    MissingCatalog,
    #[error("joint {0}: (x, y) pair is (0, 0)")]
    DegeneratePair(usize),
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMode {
    Free,
    Economic,
    Modular,
}

impl fmt::Display for DesignMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DesignMode::Free => "free",
            DesignMode::Economic => "economic",
            DesignMode::Modular => "modular",
        })
    }
}

impl FromStr for DesignMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "free" => Ok(DesignMode::Free),
            "economic" => Ok(DesignMode::Economic),
            "modular" => Ok(DesignMode::Modular),
            other => Err(format!("unknown design mode '{other}'")),
        }
    }
}

/// One Denavit-Hartenberg style row: offset along the previous joint axis,
/// offset along the common normal, and twist about that normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct DhRow {
    pub d: f64,
    pub a: f64,
    pub alpha: f64,
}

impl DhRow {
    pub fn new(d: f64, a: f64, alpha: f64) -> Self {
        DhRow { d, a, alpha }
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.d, self.a, self.alpha]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DesignParams {
    Free { rows: Vec<DhRow> },
    Economic { rows: Vec<DhRow> },
    Modular { slots: Vec<usize> },
}

pub fn in_economic_length_set(x: f64) -> bool {
    x == 0.0 || (ECONOMIC_LENGTH_MIN..=ECONOMIC_LENGTH_MAX).contains(&x.abs())
}

impl DesignParams {
    pub fn mode(&self) -> DesignMode {
        match self {
            DesignParams::Free { .. } => DesignMode::Free,
            DesignParams::Economic { .. } => DesignMode::Economic,
            DesignParams::Modular { .. } => DesignMode::Modular,
        }
    }

    pub fn dof(&self) -> usize {
        match self {
            DesignParams::Free { rows } | DesignParams::Economic { rows } => rows.len(),
            DesignParams::Modular { slots } => slots.len(),
        }
    }

    pub fn rows(&self) -> Option<&[DhRow]> {
        match self {
            DesignParams::Free { rows } | DesignParams::Economic { rows } => Some(rows),
            DesignParams::Modular { .. } => None,
        }
    }

    /// Same mode, new rows. Panics for modular designs.
    pub fn with_rows(&self, rows: Vec<DhRow>) -> DesignParams {
        match self {
            DesignParams::Free { .. } => DesignParams::Free { rows },
            DesignParams::Economic { .. } => DesignParams::Economic { rows },
            DesignParams::Modular { .. } => panic!("modular designs have no continuous rows"),
        }
    }

    pub fn validate(&self, catalog: Option<&ModuleCatalog>) -> Result<(), KinematicsError> {
        match self {
            DesignParams::Free { rows } => {
                for (row, r) in rows.iter().enumerate() {
                    let ok = (0.0..=FREE_LENGTH_MAX).contains(&r.d)
                        && r.a.abs() <= FREE_LENGTH_MAX
                        && (-PI..=PI).contains(&r.alpha);
                    if !ok {
                        return Err(KinematicsError::ConstraintViolation {
                            row,
                            reason: format!("free-mode bounds violated by {r:?}"),
                        });
                    }
                }
                Ok(())
            }
            DesignParams::Economic { rows } => {
                for (row, r) in rows.iter().enumerate() {
                    if !(r.d >= 0.0 && in_economic_length_set(r.d)) {
                        return Err(KinematicsError::ConstraintViolation {
                            row,
                            reason: format!("d = {} not in {{0}} ∪ [0.1, 0.4]", r.d),
                        });
                    }
                    if !in_economic_length_set(r.a) {
                        return Err(KinematicsError::ConstraintViolation {
                            row,
                            reason: format!("a = {} not in {{0}} ∪ ±[0.1, 0.4]", r.a),
                        });
                    }
                    if !ECONOMIC_TWISTS.contains(&r.alpha) {
                        return Err(KinematicsError::ConstraintViolation {
                            row,
                            reason: format!("alpha = {} not in {{0, ±π/2}}", r.alpha),
                        });
                    }
                }
                Ok(())
            }
            DesignParams::Modular { slots } => {
                let catalog = catalog.ok_or(KinematicsError::MissingCatalog)?;
                for (slot, &index) in slots.iter().enumerate() {
                    if index >= catalog.choices.len() {
                        return Err(KinematicsError::BadSlot { slot, index, available: catalog.choices.len() });
                    }
                }
                Ok(())
            }
        }
    }

    /// Flat parameter vector used by the diversity terms: the `n × 3` rows,
    /// or concatenated one-hot slot encodings for modular designs.
    pub fn feature_vector(&self, n_choices: usize) -> Vec<f64> {
        match self {
            DesignParams::Free { rows } | DesignParams::Economic { rows } => {
                rows.iter().flat_map(|r| r.to_array()).collect()
            }
            DesignParams::Modular { slots } => {
                let mut v = vec![0.0; slots.len() * n_choices];
                for (i, &s) in slots.iter().enumerate() {
                    if s < n_choices {
                        v[i * n_choices + s] = 1.0;
                    }
                }
                v
            }
        }
    }

    /// Total link length: the sum of distances between consecutive module
    /// interfaces (`Σ d + Σ |a|` for parameterized designs).
    pub fn reach(&self, catalog: Option<&ModuleCatalog>) -> f64 {
        match self {
            DesignParams::Free { rows } | DesignParams::Economic { rows } => {
                rows.iter().map(|r| r.d.abs() + r.a.abs()).sum()
            }
            DesignParams::Modular { slots } => {
                let catalog = catalog.expect("modular reach needs a catalog");
                slots.iter().map(|&s| catalog.choices[s].interface_distance()).sum()
            }
        }
    }
}

/// Joint angles in radians, each in `[−π, π]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct JointVector(pub Vec<f64>);

impl JointVector {
    pub fn zeros(n: usize) -> Self {
        JointVector(vec![0.0; n])
    }

    pub fn wrapped(mut self) -> Self {
        for q in &mut self.0 {
            *q = crate::geometry::wrap_angle(*q);
        }
        self
    }

    pub fn in_range(&self) -> bool {
        self.0.iter().all(|q| (-PI..=PI).contains(q))
    }
}

impl std::ops::Deref for JointVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::DerefMut for JointVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for JointVector {
    fn from(v: Vec<f64>) -> Self {
        JointVector(v)
    }
}

/// `q_i = atan2(x_i, y_i)`; continuous in the pair and invariant to positive scale.
pub fn joint_angles_from_xy(pairs: &[(f64, f64)]) -> Result<JointVector, KinematicsError> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| if x == 0.0 && y == 0.0 { Err(KinematicsError::DegeneratePair(i)) } else { Ok(x.atan2(y)) })
        .collect::<Result<Vec<_>, _>>()
        .map(JointVector)
}

/// Number of distinct assemblies a catalog yields for `dof` slots.
pub fn assembly_count(catalog: &ModuleCatalog, dof: usize) -> u128 {
    (catalog.choices.len() as u128).pow(dof as u32)
}

/// Every modular assembly in lexicographic slot order.
pub fn enumerate_assemblies(catalog: &ModuleCatalog, dof: usize) -> impl Iterator<Item = DesignParams> {
    let k = catalog.choices.len();
    let total = if k == 0 { 0 } else { k.pow(dof as u32) };
    (0..total).map(move |mut idx| {
        let mut slots = vec![0; dof];
        for slot in slots.iter_mut().rev() {
            *slot = idx % k;
            idx /= k;
        }
        DesignParams::Modular { slots }
    })
}
