//! Planar mass-spring simulator for voxel robots.
//!
//! Every non-empty voxel is a square of four corner masses joined by four
//! edge springs and two diagonal shear springs. Corners and edges shared by
//! neighbouring voxels are merged. Ground contact is a penalty spring along
//! the local terrain normal with Coulomb friction applied as a bounded
//! tangential velocity impulse. Integration is semi-implicit Euler: elastic,
//! gravity and contact forces are explicit, while spring damping is applied
//! as sequential pairwise velocity impulses (exact exponential decay of each
//! spring's axial relative speed), which stays dissipative at any damping.

mod body;
mod terrain;

pub use body::{ActuatorAxis, PointMass, SoftBody, Spring, TrajectoryRow};
pub use terrain::Terrain;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::VoxelType;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material<T> {
    /// N/m
    pub stiffness: T,
    /// N*s/m
    pub damping: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig<T> {
    /// Physics substep, seconds.
    pub dt: T,
    pub substeps_per_control: usize,
    /// Downward gravitational acceleration, m/s^2.
    pub gravity: T,
    /// Voxel edge length, m.
    pub voxel_size: T,
    /// Mass of one voxel, kg, split equally among its corners.
    pub voxel_mass: T,
    pub rigid: Material<T>,
    pub soft: Material<T>,
    pub actuator: Material<T>,
    /// Rest-length multipliers reached at actions -1 and +1.
    pub actuation_range: (T, T),
    pub contact_stiffness: T,
    pub contact_damping: T,
    /// Decay rate, 1/s, of point velocities relative to the COM velocity.
    /// Preserves momentum; damps low-frequency wobble and rocking.
    pub internal_damping: T,
    /// Ground friction coefficient used by the task terrains.
    pub friction: T,
    /// Penetration depth tolerated at rest, m.
    pub penalty_layer: T,
    /// Per-point speed clamp, m/s.
    pub max_speed: T,
}

/// Damping coefficient giving `ratio` of critical for mass `mass`.
fn damping_for<T: Scalar>(stiffness: T, mass: T, ratio: T) -> T {
    ratio * T::of(2.0) * (stiffness * mass).sqrt()
}

impl<T: Scalar> Default for SimConfig<T> {
    fn default() -> Self {
        let voxel_mass = T::of(0.1);
        // half of critical against one voxel mass; lighter damping leaves
        // tall soft bodies wobbling for many seconds
        let ratio = T::of(0.5);
        let material = |k: f64| Material {
            stiffness: T::of(k),
            damping: damping_for(T::of(k), voxel_mass, ratio),
        };
        SimConfig {
            dt: T::of(1e-3),
            substeps_per_control: 20,
            gravity: T::of(9.81),
            voxel_size: T::of(0.1),
            voxel_mass,
            rigid: material(6000.0),
            soft: material(800.0),
            actuator: material(2000.0),
            actuation_range: (T::of(0.6), T::of(1.6)),
            contact_stiffness: T::of(1.5e4),
            contact_damping: T::of(15.0),
            internal_damping: T::of(5.0),
            friction: T::of(1.0),
            penalty_layer: T::of(0.005),
            max_speed: T::of(10.0),
        }
    }
}

impl<T: Scalar> SimConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("dt", self.dt)?;
        positive("voxel_size", self.voxel_size)?;
        positive("voxel_mass", self.voxel_mass)?;
        positive("rigid stiffness", self.rigid.stiffness)?;
        positive("soft stiffness", self.soft.stiffness)?;
        positive("actuator stiffness", self.actuator.stiffness)?;
        positive("contact_stiffness", self.contact_stiffness)?;
        positive("max_speed", self.max_speed)?;
        if self.substeps_per_control == 0 {
            return Err(Error::Config("substeps_per_control must be >= 1".into()));
        }
        let (lo, hi) = self.actuation_range;
        if !(lo > T::zero() && lo <= T::one() && hi >= T::one() && hi < T::of(2.0)) {
            return Err(Error::Config(format!(
                "actuation_range ({lo}, {hi}) must lie in (0, 2) and contain 1"
            )));
        }
        for (name, v) in [
            ("gravity", self.gravity),
            ("contact_damping", self.contact_damping),
            ("internal_damping", self.internal_damping),
            ("friction", self.friction),
            ("penalty_layer", self.penalty_layer),
            ("rigid damping", self.rigid.damping),
            ("soft damping", self.soft.damping),
            ("actuator damping", self.actuator.damping),
        ] {
            if !(v >= T::zero() && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn material(&self, v: VoxelType) -> Material<T> {
        match v {
            VoxelType::Rigid => self.rigid,
            VoxelType::Soft => self.soft,
            VoxelType::HorizontalActuator | VoxelType::VerticalActuator => self.actuator,
            VoxelType::Empty => panic!("empty voxels have no material"),
        }
    }

    /// Simulated seconds per control step.
    pub fn control_period(&self) -> T {
        self.dt * T::of_usize(self.substeps_per_control)
    }

    /// Rest-length multiplier for an action, linear on each side of 0.
    pub fn multiplier(&self, action: T) -> T {
        let u = action.max(-T::one()).min(T::one());
        let (lo, hi) = self.actuation_range;
        if u >= T::zero() {
            T::one() + u * (hi - T::one())
        } else {
            T::one() + u * (T::one() - lo)
        }
    }
}
