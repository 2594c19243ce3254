use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EmbeddingError;
use crate::geometry::Pose;

/// Declared discrete factors of the simulated task board.
pub const FACTOR_DOMAINS: &[(&str, &[&str])] = &[
    ("door", &["open", "closed"]),
    ("peg", &["A", "B", "absent"]),
    ("probe", &["B", "absent"]),
    ("cable", &["left", "right"]),
];

pub fn factor_domain(name: &str) -> Option<&'static [&'static str]> {
    FACTOR_DOMAINS.iter().find(|(n, _)| *n == name).map(|(_, d)| *d)
}

/// Footprint radius of a board object, meters.
pub fn object_radius(name: &str) -> f64 {
    match name {
        "door" => 0.05,
        "bowl" => 0.06,
        "peg" | "probe" => 0.03,
        "cable_post" => 0.02,
        "cable_end" => 0.025,
        _ => 0.03,
    }
}

pub(crate) const PEG_A: [f64; 3] = [0.10, 0.08, 0.03];
pub(crate) const PEG_B: [f64; 3] = [0.10, -0.10, 0.03];
pub(crate) const PROBE_B: [f64; 3] = [-0.10, -0.08, 0.03];
pub(crate) const DOOR: [f64; 3] = [-0.12, 0.10, 0.02];
pub(crate) const BOWL: [f64; 3] = [0.28, 0.0, 0.01];
pub(crate) const CABLE_POST: [f64; 3] = [0.0, 0.25, 0.04];

/// Object visible in the scene together with the class label it renders as.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub label: String,
    pub pose: Pose,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SceneState {
    pub factors: BTreeMap<String, String>,
    #[serde(default)]
    pub object_poses: BTreeMap<String, Pose>,
    #[serde(default = "default_robot_pose")]
    pub robot_pose: Pose,
    pub seed: u64,
}

fn default_robot_pose() -> Pose {
    Pose::looking_down([0.0, 0.0, 0.45])
}

impl SceneState {
    /// Canonical task-board layout for the given factor assignment. Absent
    /// objects are simply not placed.
    pub fn taskboard(factors: &[(&str, &str)], seed: u64) -> Result<Self, EmbeddingError> {
        let factors: BTreeMap<String, String> = factors.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let mut scene = Self { factors, object_poses: BTreeMap::new(), robot_pose: default_robot_pose(), seed };
        scene.validate()?;
        scene.object_poses = scene.default_layout();
        Ok(scene)
    }

    /// Validates a scene read from a file and places the canonical layout
    /// when the file lists no object poses.
    pub fn completed(mut self) -> Result<Self, EmbeddingError> {
        self.validate()?;
        if self.object_poses.is_empty() {
            self.object_poses = self.default_layout();
        }
        Ok(self)
    }

    fn default_layout(&self) -> BTreeMap<String, Pose> {
        let mut objects = BTreeMap::new();
        objects.insert("bowl".to_string(), Pose::at(BOWL));
        if self.factors.contains_key("door") {
            objects.insert("door".to_string(), Pose::at(DOOR));
        }
        match self.factor("peg") {
            Some("A") => {
                objects.insert("peg".to_string(), Pose::at(PEG_A));
            }
            Some("B") => {
                objects.insert("peg".to_string(), Pose::at(PEG_B));
            }
            _ => {}
        }
        if self.factor("probe") == Some("B") {
            objects.insert("probe".to_string(), Pose::at(PROBE_B));
        }
        if let Some(side) = self.factor("cable") {
            objects.insert("cable_post".to_string(), Pose::at(CABLE_POST));
            let dx = if side == "left" { -0.06 } else { 0.06 };
            objects.insert("cable_end".to_string(), Pose::at([CABLE_POST[0] + dx, CABLE_POST[1] - 0.04, 0.01]));
        }
        objects
    }

    /// Fills in the canonical layout when a scene document lists no objects.
    pub fn with_default_layout(mut self) -> Self {
        if self.object_poses.is_empty() {
            self.object_poses = self.default_layout();
        }
        self
    }

    pub fn factor(&self, name: &str) -> Option<&str> {
        self.factors.get(name).map(String::as_str)
    }

    pub fn set_factor(&mut self, name: &str, value: &str) -> Result<(), EmbeddingError> {
        self.factors.insert(name.to_string(), value.to_string());
        self.validate()
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        for (name, value) in &self.factors {
            let domain =
                factor_domain(name).ok_or_else(|| EmbeddingError::InvalidScene(format!("unknown factor {name}")))?;
            if !domain.contains(&value.as_str()) {
                return Err(EmbeddingError::InvalidScene(format!("{name}={value} not in {domain:?}")));
            }
        }
        Ok(())
    }

    /// Objects as rendered: the door's label carries its open/closed state.
    pub fn objects(&self) -> Vec<SceneObject> {
        self.object_poses
            .iter()
            .map(|(name, pose)| {
                let label = match (name.as_str(), self.factor(name)) {
                    ("door", Some(state)) => format!("door:{state}"),
                    _ => name.clone(),
                };
                SceneObject { name: name.clone(), label, pose: *pose, radius: object_radius(name) }
            })
            .collect()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Short human-readable id such as `door=open,peg=A`.
    pub fn variant_name(&self) -> String {
        self.factors.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taskboard_places_objects_by_factor() {
        let s = SceneState::taskboard(&[("door", "closed"), ("peg", "absent"), ("probe", "B")], 1).unwrap();
        let names: Vec<_> = s.objects().iter().map(|o| o.label.clone()).collect();
        assert_eq!(names, vec!["bowl", "door:closed", "probe"]);
    }

    #[test]
    fn files_without_poses_get_the_layout() {
        let doc = r#"{"factors": {"peg": "B", "door": "open"}, "seed": 4}"#;
        let s: SceneState = serde_json::from_str(doc).unwrap();
        let full = SceneState::taskboard(&[("peg", "B"), ("door", "open")], 4).unwrap();
        assert_eq!(s.completed().unwrap(), full);
        let bad: SceneState = serde_json::from_str(r#"{"factors": {"peg": "Z"}, "seed": 0}"#).unwrap();
        assert!(bad.completed().is_err());
    }

    #[test]
    fn factor_values_are_checked() {
        assert!(SceneState::taskboard(&[("peg", "C")], 0).is_err());
        assert!(SceneState::taskboard(&[("lamp", "on")], 0).is_err());
    }

    #[test]
    fn scene_document_round_trip() {
        let s = SceneState::taskboard(&[("peg", "B")], 42).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("objectPoses"));
        let back: SceneState = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        let minimal: SceneState = serde_json::from_str(r#"{"factors":{"peg":"A"},"seed":3}"#).unwrap();
        assert_eq!(minimal.with_default_layout().object_poses["peg"].position, PEG_A);
    }
}
