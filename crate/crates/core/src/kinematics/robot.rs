use nalgebra::{Matrix6xX, Vector6};

use super::{DesignParams, KinematicsError, ModuleCatalog, AttachSide, LINK_RADIUS};
use crate::geometry::{Capsule, Pose, Rotation, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Z,
}

impl Axis {
    fn of(self, r: &Rotation) -> Vec3 {
        match self {
            Axis::X => r.x_axis(),
            Axis::Z => r.z_axis(),
        }
    }
}

/// Where the value of a variable element comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// Joint angle `q[j]`.
    Joint(usize),
    /// Design parameter row `row`, column `col` (0 = d, 1 = a, 2 = α).
    Param { row: usize, col: usize },
}

/// One elementary transform of the kinematic chain.
#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    Fixed(Pose),
    Revolute { axis: Axis, source: Source, value: f64 },
    Prismatic { axis: Axis, source: Source, value: f64 },
}

impl Element {
    /// Applies this element on the right of `frame`.
    #[inline]
    fn apply(&self, frame: &Pose, q: &[f64]) -> Pose {
        let value = |source: &Source, value: f64| match *source {
            Source::Joint(j) => q[j],
            Source::Param { .. } => value,
        };
        match self {
            Element::Fixed(p) => frame.compose(p),
            Element::Revolute { axis, source, value: v } => {
                let angle = value(source, *v);
                let r = match axis {
                    Axis::X => Rotation::rot_x(angle),
                    Axis::Z => Rotation::rot_z(angle),
                };
                Pose::new(frame.position, frame.rotation * r)
            }
            Element::Prismatic { axis, source, value: v } => {
                let len = value(source, *v);
                Pose::new(frame.position + axis.of(&frame.rotation) * len, frame.rotation)
            }
        }
    }

    pub fn source(&self) -> Option<Source> {
        match self {
            Element::Fixed(_) => None,
            Element::Revolute { source, .. } | Element::Prismatic { source, .. } => Some(*source),
        }
    }

    /// Unit direction (world frame) of the motion generated by this element,
    /// given the frame it is applied to.
    pub fn world_axis(&self, frame: &Pose) -> Option<Vec3> {
        match self {
            Element::Fixed(_) => None,
            Element::Revolute { axis, .. } | Element::Prismatic { axis, .. } => Some(axis.of(&frame.rotation)),
        }
    }
}

/// A point rigidly attached to an element frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attach {
    /// Index into the element-frame list (0 = robot base).
    pub frame: usize,
    pub local: Vec3,
}

impl Attach {
    fn at(frame: usize) -> Self {
        Attach { frame, local: Vec3::zeros() }
    }
}

/// A collision capsule whose two endpoints may hang off different frames of
/// the same rigid body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeSpec {
    pub body: usize,
    pub a: Attach,
    pub b: Attach,
    pub radius: f64,
}

/// A realized kinematic chain with its collision geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub dof: usize,
    pub base: Pose,
    pub elements: Vec<Element>,
    /// Element index of each joint rotation.
    pub joint_elements: Vec<usize>,
    /// Element-frame index that closes each joint's link.
    pub link_frames: Vec<usize>,
    pub shapes: Vec<ShapeSpec>,
    /// Shape index pairs that are checked for self collision.
    pub pairs: Vec<(usize, usize)>,
    /// Body 0 is the static base; body `j` moves with joint `j`.
    pub n_bodies: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FkResult {
    /// Base frame followed by one frame per joint.
    pub frames: Vec<Pose>,
    pub ee: Pose,
    /// Frame after every elementary transform; index 0 is the base.
    pub element_frames: Vec<Pose>,
}

impl RobotModel {
    pub fn with_base(mut self, base: Pose) -> Self {
        self.base = base;
        self
    }

    pub fn element_frames(&self, q: &[f64]) -> Vec<Pose> {
        debug_assert_eq!(q.len(), self.dof);
        let mut frames = Vec::with_capacity(self.elements.len() + 1);
        frames.push(self.base);
        for e in &self.elements {
            let next = e.apply(frames.last().expect("non-empty"), q);
            frames.push(next);
        }
        frames
    }

    pub fn attach_point(&self, frames: &[Pose], at: &Attach) -> Vec3 {
        frames[at.frame].transform_point(&at.local)
    }

    pub fn world_capsule(&self, frames: &[Pose], shape: &ShapeSpec) -> Capsule {
        Capsule::new(self.attach_point(frames, &shape.a), self.attach_point(frames, &shape.b), shape.radius)
    }

    pub fn world_capsules(&self, q: &[f64]) -> Vec<Capsule> {
        let frames = self.element_frames(q);
        self.shapes.iter().map(|s| self.world_capsule(&frames, s)).collect()
    }

    pub fn ee_frame_index(&self) -> usize {
        self.elements.len()
    }
}

fn pair_table(shapes: &[ShapeSpec]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..shapes.len() {
        for j in i + 1..shapes.len() {
            if shapes[i].body.abs_diff(shapes[j].body) >= 2 {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Realizes a design as a kinematic chain with capsule geometry.
pub fn build_robot(params: &DesignParams, catalog: Option<&ModuleCatalog>) -> Result<RobotModel, KinematicsError> {
    match params {
        DesignParams::Free { rows } | DesignParams::Economic { rows } => {
            if matches!(params, DesignParams::Economic { .. }) {
                params.validate(None)?;
            }
            let dof = rows.len();
            let mut elements = Vec::with_capacity(4 * dof);
            let mut shapes = Vec::new();
            let mut joint_elements = Vec::with_capacity(dof);
            let mut link_frames = Vec::with_capacity(dof);
            for (j, r) in rows.iter().enumerate() {
                let k = elements.len();
                joint_elements.push(k);
                elements.push(Element::Revolute { axis: Axis::Z, source: Source::Joint(j), value: 0.0 });
                elements.push(Element::Prismatic { axis: Axis::Z, source: Source::Param { row: j, col: 0 }, value: r.d });
                elements.push(Element::Prismatic { axis: Axis::X, source: Source::Param { row: j, col: 1 }, value: r.a });
                elements.push(Element::Revolute { axis: Axis::X, source: Source::Param { row: j, col: 2 }, value: r.alpha });
                // Frames k+1 (after the joint), k+2 (after d), k+3 (after a).
                let body = j + 1;
                if r.d != 0.0 {
                    shapes.push(ShapeSpec { body, a: Attach::at(k + 1), b: Attach::at(k + 2), radius: LINK_RADIUS });
                }
                if r.a != 0.0 {
                    shapes.push(ShapeSpec { body, a: Attach::at(k + 2), b: Attach::at(k + 3), radius: LINK_RADIUS });
                }
                if r.d == 0.0 && r.a == 0.0 {
                    shapes.push(ShapeSpec { body, a: Attach::at(k + 1), b: Attach::at(k + 1), radius: LINK_RADIUS });
                }
                link_frames.push(k + 4);
            }
            let pairs = pair_table(&shapes);
            Ok(RobotModel {
                dof,
                base: Pose::identity(),
                elements,
                joint_elements,
                link_frames,
                shapes,
                pairs,
                n_bodies: dof + 1,
            })
        }
        DesignParams::Modular { slots } => {
            let catalog = catalog.ok_or(KinematicsError::MissingCatalog)?;
            params.validate(Some(catalog))?;
            let dof = slots.len();
            let mut elements = Vec::with_capacity(3 * dof);
            let mut shapes = Vec::new();
            let mut joint_elements = Vec::with_capacity(dof);
            let mut link_frames = Vec::with_capacity(dof);
            for (s, &choice) in slots.iter().enumerate() {
                let m = &catalog.choices[choice];
                let k = elements.len();
                elements.push(Element::Fixed(m.proximal));
                joint_elements.push(k + 1);
                elements.push(Element::Revolute { axis: Axis::Z, source: Source::Joint(s), value: 0.0 });
                elements.push(Element::Fixed(m.distal));
                for c in &m.capsules {
                    let (frame, body) = match c.attach {
                        AttachSide::Proximal => (k, s),
                        AttachSide::Distal => (k + 2, s + 1),
                    };
                    shapes.push(ShapeSpec {
                        body,
                        a: Attach { frame, local: Vec3::from(c.a) },
                        b: Attach { frame, local: Vec3::from(c.b) },
                        radius: c.radius,
                    });
                }
                link_frames.push(k + 3);
            }
            let pairs = pair_table(&shapes);
            Ok(RobotModel {
                dof,
                base: Pose::identity(),
                elements,
                joint_elements,
                link_frames,
                shapes,
                pairs,
                n_bodies: dof + 1,
            })
        }
    }
}

pub fn forward_kinematics(robot: &RobotModel, q: &[f64]) -> FkResult {
    let element_frames = robot.element_frames(q);
    let mut frames = Vec::with_capacity(robot.dof + 1);
    frames.push(robot.base);
    frames.extend(robot.link_frames.iter().map(|&f| element_frames[f]));
    let ee = *element_frames.last().expect("non-empty");
    FkResult { frames, ee, element_frames }
}

/// Geometric Jacobian of the end effector: linear rows on top, angular below.
pub fn geometric_jacobian(robot: &RobotModel, q: &[f64]) -> Matrix6xX<f64> {
    let frames = robot.element_frames(q);
    jacobian_from_frames(robot, &frames)
}

/// Jacobian from precomputed element frames.
pub fn jacobian_from_frames(robot: &RobotModel, frames: &[Pose]) -> Matrix6xX<f64> {
    let p_ee = frames.last().expect("non-empty").position;
    let mut j = Matrix6xX::zeros(robot.dof);
    for (col, &k) in robot.joint_elements.iter().enumerate() {
        let f = &frames[k];
        let z = f.rotation.z_axis();
        let lin = z.cross(&(p_ee - f.position));
        j.set_column(col, &Vector6::new(lin.x, lin.y, lin.z, z.x, z.y, z.z));
    }
    j
}
