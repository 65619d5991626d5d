use std::collections::HashMap;

use arrayvec::ArrayVec;
use serde::{Deserialize, Serialize};

use super::{SimConfig, Terrain};
use crate::error::{Error, Result};
use crate::genome::{Genome, VoxelType};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMass<T> {
    pub pos: [T; 2],
    pub vel: [T; 2],
    pub mass: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spring<T> {
    pub a: usize,
    pub b: usize,
    /// Rest length with all actuators at multiplier 1.
    pub rest_length: T,
    pub stiffness: T,
    pub damping: T,
    /// Actuators driving this spring; a spring on the shared edge of two
    /// actuator voxels follows the mean of their multipliers.
    pub actuated_by: ArrayVec<usize, 2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActuatorAxis {
    Horizontal,
    Vertical,
}

/// One row of the optional per-control-step trajectory dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub com_x: f64,
    pub com_y: f64,
    pub com_vx: f64,
    pub com_vy: f64,
    pub kinetic_energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftBody<T> {
    pub points: Vec<PointMass<T>>,
    pub springs: Vec<Spring<T>>,
    pub actuator_axes: Vec<ActuatorAxis>,
    /// Current effective rest length of each spring.
    rest: Vec<T>,
    force: Vec<[T; 2]>,
}

type Corner = (usize, usize);

impl<T: Scalar> SoftBody<T> {
    /// Builds the lattice for a valid genome and rests its lowest point on
    /// the terrain, horizontally centred on `spawn_x`.
    pub fn build(g: &Genome, config: &SimConfig<T>, terrain: &Terrain<T>, spawn_x: T) -> Self {
        Self::build_lifted(g, config, terrain, spawn_x, T::zero())
    }

    /// Like [`SoftBody::build`] but with a clearance of `lift` metres.
    pub fn build_lifted(
        g: &Genome,
        config: &SimConfig<T>,
        terrain: &Terrain<T>,
        spawn_x: T,
        lift: T,
    ) -> Self {
        let s = config.voxel_size;
        let corner_mass = config.voxel_mass / T::of(4.0);
        let h = g.height();

        let mut index: HashMap<Corner, usize> = HashMap::new();
        let mut points: Vec<PointMass<T>> = Vec::new();
        let mut corner_of = |corner: Corner, points: &mut Vec<PointMass<T>>| -> usize {
            *index.entry(corner).or_insert_with(|| {
                let (i, j) = corner;
                points.push(PointMass {
                    pos: [T::of_usize(j) * s, T::of_usize(h - i) * s],
                    vel: [T::zero(); 2],
                    mass: T::zero(),
                });
                points.len() - 1
            })
        };

        // edge springs keyed by their (sorted) corner pair
        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edge_materials: Vec<Vec<VoxelType>> = Vec::new();
        let mut edge_actuators: Vec<ArrayVec<usize, 2>> = Vec::new();
        let mut springs: Vec<Spring<T>> = Vec::new();
        let mut actuator_axes = Vec::new();

        for (r, c, v) in g.voxels() {
            let tl = corner_of((r, c), &mut points);
            let tr = corner_of((r, c + 1), &mut points);
            let bl = corner_of((r + 1, c), &mut points);
            let br = corner_of((r + 1, c + 1), &mut points);
            for p in [tl, tr, bl, br] {
                points[p].mass += corner_mass;
            }

            let actuator = match v {
                VoxelType::HorizontalActuator => Some(ActuatorAxis::Horizontal),
                VoxelType::VerticalActuator => Some(ActuatorAxis::Vertical),
                _ => None,
            }
            .map(|axis| {
                actuator_axes.push(axis);
                (actuator_axes.len() - 1, axis)
            });

            let edges = [
                (tl, tr, ActuatorAxis::Horizontal),
                (bl, br, ActuatorAxis::Horizontal),
                (tl, bl, ActuatorAxis::Vertical),
                (tr, br, ActuatorAxis::Vertical),
            ];
            for (a, b, axis) in edges {
                let key = (a.min(b), a.max(b));
                let e = *edge_index.entry(key).or_insert_with(|| {
                    springs.push(Spring {
                        a: key.0,
                        b: key.1,
                        rest_length: T::zero(),
                        stiffness: T::zero(),
                        damping: T::zero(),
                        actuated_by: ArrayVec::new(),
                    });
                    edge_materials.push(Vec::new());
                    edge_actuators.push(ArrayVec::new());
                    springs.len() - 1
                });
                edge_materials[e].push(v);
                if let Some((id, act_axis)) = actuator {
                    if act_axis == axis {
                        edge_actuators[e].push(id);
                    }
                }
            }
            let m = config.material(v);
            for (a, b) in [(tl, br), (tr, bl)] {
                springs.push(Spring {
                    a,
                    b,
                    rest_length: T::zero(),
                    stiffness: m.stiffness,
                    damping: m.damping,
                    actuated_by: ArrayVec::new(),
                });
                edge_materials.push(Vec::new());
                edge_actuators.push(ArrayVec::new());
            }
        }

        for (i, spring) in springs.iter_mut().enumerate() {
            let pa = points[spring.a].pos;
            let pb = points[spring.b].pos;
            spring.rest_length = distance(pa, pb);
            if !edge_materials[i].is_empty() {
                // shared edges take the mean of both voxels' materials
                let n = T::of_usize(edge_materials[i].len());
                let (k, c) = edge_materials[i].iter().fold((T::zero(), T::zero()), |acc, &v| {
                    let m = config.material(v);
                    (acc.0 + m.stiffness, acc.1 + m.damping)
                });
                spring.stiffness = k / n;
                spring.damping = c / n;
                spring.actuated_by = edge_actuators[i].clone();
            }
        }

        let rest = springs.iter().map(|s| s.rest_length).collect();
        let force = vec![[T::zero(); 2]; points.len()];
        let mut body = SoftBody {
            points,
            springs,
            actuator_axes,
            rest,
            force,
        };
        body.place(terrain, spawn_x, lift);
        body
    }

    fn place(&mut self, terrain: &Terrain<T>, spawn_x: T, lift: T) {
        let (min_x, max_x) = self.points.iter().fold(
            (T::infinity(), T::neg_infinity()),
            |(lo, hi), p| (lo.min(p.pos[0]), hi.max(p.pos[0])),
        );
        let dx = spawn_x - (min_x + max_x) / T::of(2.0);
        for p in &mut self.points {
            p.pos[0] += dx;
        }
        let dy = self
            .points
            .iter()
            .map(|p| terrain.height(p.pos[0]) - p.pos[1])
            .fold(T::neg_infinity(), T::max);
        for p in &mut self.points {
            p.pos[1] += dy + lift;
        }
    }

    pub fn actuator_count(&self) -> usize {
        self.actuator_axes.len()
    }

    pub fn total_mass(&self) -> T {
        self.points.iter().map(|p| p.mass).sum()
    }

    pub fn center_of_mass(&self) -> [T; 2] {
        let m = self.total_mass();
        let mut c = [T::zero(); 2];
        for p in &self.points {
            c[0] += p.mass * p.pos[0];
            c[1] += p.mass * p.pos[1];
        }
        [c[0] / m, c[1] / m]
    }

    pub fn com_velocity(&self) -> [T; 2] {
        let m = self.total_mass();
        let mut v = [T::zero(); 2];
        for p in &self.points {
            v[0] += p.mass * p.vel[0];
            v[1] += p.mass * p.vel[1];
        }
        [v[0] / m, v[1] / m]
    }

    pub fn momentum(&self) -> [T; 2] {
        let mut v = [T::zero(); 2];
        for p in &self.points {
            v[0] += p.mass * p.vel[0];
            v[1] += p.mass * p.vel[1];
        }
        v
    }

    pub fn kinetic_energy(&self) -> T {
        self.points
            .iter()
            .map(|p| T::of(0.5) * p.mass * (p.vel[0] * p.vel[0] + p.vel[1] * p.vel[1]))
            .sum()
    }

    /// Deepest vertical penetration below the terrain (0 when clear).
    pub fn max_penetration(&self, terrain: &Terrain<T>) -> T {
        self.points
            .iter()
            .map(|p| terrain.height(p.pos[0]) - p.pos[1])
            .fold(T::zero(), T::max)
    }

    pub fn min_clearance(&self, terrain: &Terrain<T>) -> T {
        self.points
            .iter()
            .map(|p| p.pos[1] - terrain.height(p.pos[0]))
            .fold(T::infinity(), T::min)
    }

    /// Length of [`SoftBody::observe`] for a body with `points` points and
    /// `extras` task values.
    pub fn observation_len(points: usize, extras: usize) -> usize {
        2 + 2 * points + extras
    }

    /// COM velocity, then every point position relative to the COM, then
    /// the task extras.
    pub fn observe(&self, extras: &[T]) -> Vec<T> {
        let com = self.center_of_mass();
        let mut obs = Vec::with_capacity(Self::observation_len(self.points.len(), extras.len()));
        obs.extend(self.com_velocity());
        for p in &self.points {
            obs.push(p.pos[0] - com[0]);
            obs.push(p.pos[1] - com[1]);
        }
        obs.extend_from_slice(extras);
        obs
    }

    pub fn trajectory_row(&self, step: usize) -> TrajectoryRow {
        let c = self.center_of_mass();
        let v = self.com_velocity();
        TrajectoryRow {
            step,
            com_x: c[0].to_f64_lossy(),
            com_y: c[1].to_f64_lossy(),
            com_vx: v[0].to_f64_lossy(),
            com_vy: v[1].to_f64_lossy(),
            kinetic_energy: self.kinetic_energy().to_f64_lossy(),
        }
    }

    /// Advances one control step (`substeps_per_control` substeps) with the
    /// given per-actuator actions in `[-1, 1]`.
    pub fn step(&mut self, terrain: &Terrain<T>, actions: &[T], config: &SimConfig<T>) -> Result<()> {
        if actions.len() != self.actuator_count() {
            return Err(Error::DimensionMismatch {
                what: "actions",
                expected: self.actuator_count(),
                got: actions.len(),
            });
        }
        let multipliers: Vec<T> = actions.iter().map(|&u| config.multiplier(u)).collect();
        for (rest, spring) in self.rest.iter_mut().zip(&self.springs) {
            *rest = if spring.actuated_by.is_empty() {
                spring.rest_length
            } else {
                let sum: T = spring.actuated_by.iter().map(|&i| multipliers[i]).sum();
                spring.rest_length * sum / T::of_usize(spring.actuated_by.len())
            };
        }
        for _ in 0..config.substeps_per_control {
            self.substep(terrain, config);
        }
        self.check_finite()
    }

    fn substep(&mut self, terrain: &Terrain<T>, config: &SimConfig<T>) {
        let dt = config.dt;
        for (f, p) in self.force.iter_mut().zip(&self.points) {
            *f = [T::zero(), -config.gravity * p.mass];
        }

        // elastic forces from the current positions
        for (spring, &rest) in self.springs.iter().zip(&self.rest) {
            let (pa, pb) = (&self.points[spring.a], &self.points[spring.b]);
            let d = [pb.pos[0] - pa.pos[0], pb.pos[1] - pa.pos[1]];
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if len <= T::zero() {
                continue;
            }
            // positive tension pulls the endpoints together
            let tension = spring.stiffness * (len - rest);
            let f = [tension * d[0] / len, tension * d[1] / len];
            let fa = &mut self.force[spring.a];
            fa[0] += f[0];
            fa[1] += f[1];
            let fb = &mut self.force[spring.b];
            fb[0] -= f[0];
            fb[1] -= f[1];
        }

        // contact forces use the pre-step velocity
        let mu = terrain.friction_coefficient;
        let mut normal_dv = vec![T::zero(); self.points.len()];
        for (i, (p, f)) in self.points.iter_mut().zip(&self.force).enumerate() {
            p.vel[0] += dt * f[0] / p.mass;
            p.vel[1] += dt * f[1] / p.mass;
            let (ground, slope) = terrain.sample(p.pos[0]);
            let below = ground - p.pos[1];
            if below > T::zero() {
                let norm = (T::one() + slope * slope).sqrt();
                let n = [-slope / norm, T::one() / norm];
                let vn = (p.vel[0] - dt * f[0] / p.mass) * n[0] + (p.vel[1] - dt * f[1] / p.mass) * n[1];
                let normal_force = (config.contact_stiffness * below / norm
                    - config.contact_damping * vn)
                    .max(T::zero());
                normal_dv[i] = dt * normal_force / p.mass;
                p.vel[0] += normal_dv[i] * n[0];
                p.vel[1] += normal_dv[i] * n[1];
            }
        }

        // Spring damping as sequential pairwise impulses: each one shrinks
        // the relative axial speed by 1 - exp(-c dt (1/ma + 1/mb)), so the
        // pass dissipates energy for any c and dt.
        for spring in &self.springs {
            if spring.damping <= T::zero() {
                continue;
            }
            let (pa, pb) = (&self.points[spring.a], &self.points[spring.b]);
            let d = [pb.pos[0] - pa.pos[0], pb.pos[1] - pa.pos[1]];
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if len <= T::zero() {
                continue;
            }
            let dir = [d[0] / len, d[1] / len];
            let rel = (pb.vel[0] - pa.vel[0]) * dir[0] + (pb.vel[1] - pa.vel[1]) * dir[1];
            let (wa, wb) = (T::one() / pa.mass, T::one() / pb.mass);
            let fraction = T::one() - (-spring.damping * dt * (wa + wb)).exp();
            let impulse = fraction * rel / (wa + wb);
            let pa = &mut self.points[spring.a];
            pa.vel[0] += impulse * wa * dir[0];
            pa.vel[1] += impulse * wa * dir[1];
            let pb = &mut self.points[spring.b];
            pb.vel[0] -= impulse * wb * dir[0];
            pb.vel[1] -= impulse * wb * dir[1];
        }

        if config.internal_damping > T::zero() {
            let vc = self.com_velocity();
            let keep = (-config.internal_damping * dt).exp();
            for p in &mut self.points {
                p.vel[0] = vc[0] + (p.vel[0] - vc[0]) * keep;
                p.vel[1] = vc[1] + (p.vel[1] - vc[1]) * keep;
            }
        }

        for (p, &dvn) in self.points.iter_mut().zip(&normal_dv) {
            if dvn > T::zero() {
                // Coulomb friction as a bounded tangential impulse
                let slope = terrain.sample(p.pos[0]).1;
                let norm = (T::one() + slope * slope).sqrt();
                let t = [T::one() / norm, slope / norm];
                let vt = p.vel[0] * t[0] + p.vel[1] * t[1];
                let max_dv = mu * dvn;
                let dvt = if vt.abs() <= max_dv { vt } else { max_dv * vt.signum() };
                p.vel[0] -= dvt * t[0];
                p.vel[1] -= dvt * t[1];
            }
            let speed = (p.vel[0] * p.vel[0] + p.vel[1] * p.vel[1]).sqrt();
            if speed > config.max_speed {
                let k = config.max_speed / speed;
                p.vel[0] *= k;
                p.vel[1] *= k;
            }
            p.pos[0] += dt * p.vel[0];
            p.pos[1] += dt * p.vel[1];
        }
    }

    fn check_finite(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !(p.pos.iter().chain(&p.vel).all(|v| v.is_finite())) {
                return Err(Error::NumericalBlowup(format!(
                    "point {i} has non-finite state {:?} / {:?}",
                    p.pos, p.vel
                )));
            }
        }
        Ok(())
    }
}

fn distance<T: Scalar>(a: [T; 2], b: [T; 2]) -> T {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    (dx * dx + dy * dy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat() -> Terrain<f64> {
        Terrain::flat(1.0)
    }

    fn body(w: usize, h: usize, codes: &[u8]) -> SoftBody<f64> {
        SoftBody::build(
            &Genome::from_codes(w, h, codes),
            &SimConfig::default(),
            &flat(),
            0.0,
        )
    }

    #[test]
    fn single_voxel_structure() {
        let b = body(1, 1, &[3]);
        assert_eq!(b.points.len(), 4);
        assert_eq!(b.springs.len(), 6);
        assert_eq!(b.actuator_count(), 1);
        let driven = b.springs.iter().filter(|s| !s.actuated_by.is_empty()).count();
        assert_eq!(driven, 2);
        assert!((b.total_mass() - 0.1).abs() < 1e-15);
        assert!(b.min_clearance(&flat()).abs() < 1e-15);
    }

    #[test]
    fn two_voxels_share_an_edge() {
        // 6 corners; edges 4 + 4 - 1 shared; 2 diagonals each
        let b = body(2, 1, &[3, 1]);
        assert_eq!(b.points.len(), 6);
        assert_eq!(b.springs.len(), 11);
    }

    #[test]
    fn shared_horizontal_edge_between_stacked_actuators() {
        let b = body(1, 2, &[3, 3]);
        let shared: Vec<_> = b.springs.iter().filter(|s| s.actuated_by.len() == 2).collect();
        assert_eq!(shared.len(), 1);
        // vertical actuators drive vertical edges only
        let v = body(1, 1, &[4]);
        for s in v.springs.iter().filter(|s| !s.actuated_by.is_empty()) {
            let (pa, pb) = (&v.points[s.a].pos, &v.points[s.b].pos);
            assert_eq!(pa[0], pb[0]);
        }
    }

    #[test]
    fn full_five_by_five_lattice() {
        let b = body(5, 5, &[3; 25]);
        assert_eq!(b.points.len(), 36);
        // 2*5*6 lattice edges + 2 diagonals per voxel
        assert_eq!(b.springs.len(), 60 + 50);
    }

    #[test]
    fn observation_layout() {
        let b = body(1, 1, &[3]);
        assert_eq!(b.observe(&[]).len(), 10);
        assert_eq!(body(5, 5, &[3; 25]).observe(&[]).len(), 74);
        let obs = b.observe(&[7.0]);
        assert_eq!(obs.last(), Some(&7.0));
        assert_eq!(SoftBody::<f64>::observation_len(36, 0), 74);
    }

    #[test]
    fn observation_is_translation_invariant() {
        let g = Genome::from_codes(2, 2, &[3, 1, 4, 2]);
        let cfg = SimConfig::default();
        let a = SoftBody::build(&g, &cfg, &flat(), 0.0);
        let b = SoftBody::build(&g, &cfg, &flat(), 3.0);
        let (oa, ob) = (a.observe(&[]), b.observe(&[]));
        for (x, y) in oa.iter().zip(&ob) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_action_count_is_rejected() {
        let mut b = body(1, 1, &[3]);
        let err = b.step(&flat(), &[0.0, 0.0], &SimConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 1, got: 2, .. }));
    }

    #[test]
    fn unstable_config_reports_blowup() {
        let mut cfg = SimConfig::<f64>::default();
        cfg.dt = 0.05;
        cfg.max_speed = f64::INFINITY;
        let g = Genome::from_codes(2, 2, &[1, 1, 3, 1]);
        let mut b = SoftBody::build_lifted(&g, &cfg, &flat(), 0.0, 0.1);
        let mut hit = false;
        for _ in 0..200 {
            if let Err(Error::NumericalBlowup(_)) = b.step(&flat(), &[1.0], &cfg) {
                hit = true;
                break;
            }
        }
        assert!(hit);
    }

    #[test]
    fn rest_state_without_gravity_is_fixed_point() {
        let mut cfg = SimConfig::<f64>::default();
        cfg.gravity = 0.0;
        let g = Genome::from_codes(3, 2, &[1, 3, 2, 4, 0, 4]);
        let mut b = SoftBody::build_lifted(&g, &cfg, &flat(), 0.3, 0.05);
        let before: Vec<_> = b.points.iter().map(|p| p.pos).collect();
        for _ in 0..5 {
            b.step(&flat(), &[0.0; 3], &cfg).unwrap();
        }
        for (p, q) in b.points.iter().zip(&before) {
            assert!((p.pos[0] - q[0]).abs() < 1e-12 && (p.pos[1] - q[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn momentum_conserved_without_gravity_or_friction() {
        let mut cfg = SimConfig::<f64>::default();
        cfg.gravity = 0.0;
        let ice = Terrain::flat(0.0);
        let g = Genome::from_codes(3, 3, &[3, 4, 3, 1, 2, 1, 4, 3, 4]);
        let mut b = SoftBody::build_lifted(&g, &cfg, &ice, 0.0, 0.2);
        for p in &mut b.points {
            p.vel = [0.3, 0.0];
        }
        let actions = [0.7, -0.4, 1.0, -1.0, 0.2, 0.0];
        for _ in 0..20 {
            let before = b.momentum()[0];
            b.step(&ice, &actions, &cfg).unwrap();
            assert!((b.momentum()[0] - before).abs() < 1e-9);
        }
    }

    #[test]
    fn stepping_is_bit_deterministic() {
        let g = Genome::from_codes(3, 2, &[3, 4, 3, 2, 0, 1]);
        let cfg = SimConfig::<f64>::default();
        let run = || {
            let mut b = SoftBody::build_lifted(&g, &cfg, &flat(), 0.0, 0.05);
            for k in 0..30 {
                let u = (k as f64 * 0.37).sin();
                b.step(&flat(), &[u, -u, 0.5 * u], &cfg).unwrap();
            }
            b.points
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn drop_settles_without_deep_penetration() {
        let g = Genome::from_codes(3, 3, &[1, 2, 1, 3, 4, 3, 2, 1, 2]);
        let cfg = SimConfig::<f64>::default();
        let mut b = SoftBody::build_lifted(&g, &cfg, &flat(), 0.0, 0.5);
        let mut deepest = 0.0f64;
        for k in 0..250 {
            b.step(&flat(), &[0.0; 3], &cfg).unwrap();
            if k > 150 {
                deepest = deepest.max(b.max_penetration(&flat()));
            }
        }
        assert!(deepest <= cfg.penalty_layer, "penetration {deepest}");
        let c0 = b.center_of_mass();
        b.step(&flat(), &[0.0; 3], &cfg).unwrap();
        let c1 = b.center_of_mass();
        assert!(((c1[0] - c0[0]).powi(2) + (c1[1] - c0[1]).powi(2)).sqrt() < 1e-4);
    }
}
