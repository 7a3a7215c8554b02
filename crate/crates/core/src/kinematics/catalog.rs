use serde::{Deserialize, Serialize};

use super::KinematicsError;
use crate::geometry::{compose, Pose};

pub const CATALOG_FORMAT_VERSION: u32 = 1;

const DEFAULT_CATALOG: &str = include_str!("../../data/default_catalog.json");

/// Which side of the joint a capsule is rigidly attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachSide {
    /// The incoming interface frame, i.e. the preceding body.
    Proximal,
    /// The frame right after the joint rotation.
    Distal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogCapsule {
    pub attach: AttachSide,
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
}

/// One connection choice for a slot: an optional static extension followed
/// by a joint module. The joint rotates about the local z axis between the
/// proximal and distal transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleChoice {
    pub id: String,
    pub proximal: Pose,
    pub distal: Pose,
    pub capsules: Vec<CatalogCapsule>,
    pub cost: f64,
}

impl ModuleChoice {
    /// Distance between the incoming and outgoing interface of the slot.
    pub fn interface_distance(&self) -> f64 {
        compose(&self.proximal, &self.distal).position.norm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleCatalog {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub choices: Vec<ModuleChoice>,
}

impl ModuleCatalog {
    /// The bundled five-choice catalog (direct joint connection plus short
    /// and long extensions in orthogonal and parallel geometry).
    pub fn default_catalog() -> Self {
        Self::from_json(DEFAULT_CATALOG.as_bytes()).expect("bundled catalog is valid")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, KinematicsError> {
        let cat: ModuleCatalog =
            serde_json::from_slice(bytes).map_err(|e| KinematicsError::InvalidCatalog(e.to_string()))?;
        cat.validate()?;
        Ok(cat)
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        if self.format_version != CATALOG_FORMAT_VERSION {
            return Err(KinematicsError::InvalidCatalog(format!(
                "unsupported format_version {} (expected {CATALOG_FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.choices.is_empty() {
            return Err(KinematicsError::InvalidCatalog("catalog has no choices".into()));
        }
        for c in &self.choices {
            let valid = |p: &Pose| p.rotation.is_valid(1e-9) && p.position.iter().all(|x| x.is_finite());
            if !valid(&c.proximal) || !valid(&c.distal) {
                return Err(KinematicsError::InvalidCatalog(format!("choice {}: invalid transform", c.id)));
            }
            if c.capsules.iter().any(|k| !(k.radius > 0.0)) || !(c.cost >= 0.0) {
                return Err(KinematicsError::InvalidCatalog(format!("choice {}: bad radius or cost", c.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }
}

impl Default for ModuleCatalog {
    fn default() -> Self {
        Self::default_catalog()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_catalog_loads() {
        let cat = ModuleCatalog::default_catalog();
        assert_eq!(cat.len(), 5);
        assert_eq!(cat.choices[0].id, "direct");
        assert!((cat.choices[0].interface_distance() - 0.12).abs() < 1e-12);
        let json = serde_json::to_vec(&cat).unwrap();
        assert_eq!(ModuleCatalog::from_json(&json).unwrap(), cat);
    }

    #[test]
    fn wrong_version_rejected() {
        let mut cat = ModuleCatalog::default_catalog();
        cat.format_version = 9;
        let json = serde_json::to_vec(&cat).unwrap();
        assert!(matches!(ModuleCatalog::from_json(&json), Err(KinematicsError::InvalidCatalog(_))));
    }
}
