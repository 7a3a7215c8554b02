//! Computational co-design of robot arms: kinematics, a differentiable
//! objective over designs and joint configurations, per-task optimization
//! and assembly search.

pub mod config;
pub mod geometry;
pub mod grad;
pub mod kinematics;
pub mod modes;
pub mod objective;
pub mod render;
pub mod scene;
pub mod search;
pub mod solver;
