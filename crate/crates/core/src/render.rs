//! Render-ready geometry for ranked candidates: world-frame capsules and
//! joint frames at every selected goal configuration.

use serde::{Deserialize, Serialize};

use crate::geometry::{Capsule, Pose};
use crate::kinematics::{build_robot, forward_kinematics, DesignParams, KinematicsError, ModuleCatalog};
use crate::objective::{goal_error, solved_check, GoalError, LossBreakdown};
use crate::scene::Scene;
use crate::solver::Candidate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderCapsule {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
}

impl From<Capsule> for RenderCapsule {
    fn from(c: Capsule) -> Self {
        RenderCapsule { a: c.a.into(), b: c.b.into(), radius: c.radius }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderGoal {
    pub goal_id: String,
    pub q: Vec<f64>,
    pub capsules: Vec<RenderCapsule>,
    /// Base frame followed by one frame per joint.
    pub joint_frames: Vec<Pose>,
    pub ee: Pose,
    pub solved: bool,
    pub error: GoalError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderCandidate {
    pub rank: usize,
    pub params: DesignParams,
    pub loss: LossBreakdown,
    pub benchmark_loss: f64,
    pub goals: Vec<RenderGoal>,
}

/// Geometry in meters, expressed in the scene's world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderModel {
    pub units: String,
    pub candidates: Vec<RenderCandidate>,
}

pub fn render_candidate(
    scene: &Scene,
    cand: &Candidate,
    rank: usize,
    catalog: Option<&ModuleCatalog>,
) -> Result<RenderCandidate, KinematicsError> {
    let robot = build_robot(&cand.params, catalog)?.with_base(scene.base_pose);
    let goals = scene
        .goals
        .iter()
        .zip(&cand.ik)
        .map(|(goal, q)| {
            let fk = forward_kinematics(&robot, q);
            RenderGoal {
                goal_id: goal.id.clone(),
                q: q.0.clone(),
                capsules: robot.world_capsules(q).into_iter().map(RenderCapsule::from).collect(),
                joint_frames: fk.frames.clone(),
                ee: fk.ee,
                solved: solved_check(goal, &fk.ee),
                error: goal_error(goal, &fk.ee),
            }
        })
        .collect();
    Ok(RenderCandidate {
        rank,
        params: cand.params.clone(),
        loss: cand.loss,
        benchmark_loss: cand.benchmark_loss,
        goals,
    })
}

/// Render data for ranked candidates, keeping their order.
pub fn render_model(
    scene: &Scene,
    candidates: &[Candidate],
    catalog: Option<&ModuleCatalog>,
) -> Result<RenderModel, KinematicsError> {
    let candidates = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| render_candidate(scene, c, i, catalog))
        .collect::<Result<_, _>>()?;
    Ok(RenderModel { units: "m".into(), candidates })
}
