//! Quasi-static compliance of the fin-ray finger.
//!
//! The finger cross-section is a triangle of two segmented side beams joined
//! at the tip, with crossbeam ribs between them: rigid segments, torsional
//! springs at the joints, linear springs for the ribs and tip closure.
//! Contact with a rigid object primitive is a quadratic penalty on node
//! penetration. Equilibrium is the minimum of the total energy, found by
//! damped gradient descent with a backtracking (Armijo) line search.
//!
//! Actuation rotates the finger base towards the object; deformation is
//! measured against the rigidly rotated rest shape, so a free finger at any
//! actuation reports zero deformation.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ComplianceError {
    #[error("NonConvergence: gradient norm {grad_norm} after {iterations} iterations")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error("InvalidPlacement: object penetrates the rest shape by {depth} mm")]
    InvalidPlacement { depth: f64 },
    #[error("InvalidModel: {0}")]
    InvalidModel(String),
    #[error("NonMonotoneSchedule: actuation step {index} decreases")]
    NonMonotoneSchedule { index: usize },
}

/// Triangular rest profile. The front (contact) beam runs from the origin to
/// the tip; the back beam from `(-base_width, 0)` to the same tip. The tip
/// sits at `(tip_offset, height)`, so 0 gives the classic straight contact
/// face and `-base_width / 2` a mirror-symmetric profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestShape {
    pub base_width: f64,
    pub height: f64,
    #[serde(default)]
    pub tip_offset: f64,
}

/// Pseudo-rigid-body parameters of one finger.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinRayModel {
    /// Rigid segments per side beam.
    pub n_segments: usize,
    /// Torsional spring constant per joint, N.mm/rad.
    pub joint_stiffness: f64,
    /// Crossbeam spring constant, N/mm.
    pub rib_stiffness: f64,
    pub rib_count: usize,
    /// Tip closure spring, N/mm.
    pub tip_stiffness: f64,
    pub rest_shape: RestShape,
    /// Contact penalty stiffness, N/mm.
    pub contact_penalty: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Convergence threshold on the energy-gradient infinity norm, N.mm.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_max_iterations() -> usize {
    50_000
}

fn default_tolerance() -> f64 {
    1e-6
}

impl Default for FinRayModel {
    fn default() -> Self {
        FinRayModel {
            n_segments: 12,
            joint_stiffness: 80.0,
            rib_stiffness: 1.5,
            rib_count: 4,
            tip_stiffness: 10.0,
            rest_shape: RestShape {
                base_width: 25.0,
                height: 80.0,
                tip_offset: 0.0,
            },
            contact_penalty: 50.0,
            max_iterations: default_max_iterations(),
            tolerance: default_tolerance(),
        }
    }
}

impl FinRayModel {
    pub fn validate(&self) -> Result<(), ComplianceError> {
        if self.n_segments < 3 {
            return Err(ComplianceError::InvalidModel(format!(
                "n_segments must be at least 3, got {}",
                self.n_segments
            )));
        }
        for (name, v) in [
            ("joint_stiffness", self.joint_stiffness),
            ("rib_stiffness", self.rib_stiffness),
            ("tip_stiffness", self.tip_stiffness),
            ("contact_penalty", self.contact_penalty),
            ("base_width", self.rest_shape.base_width),
            ("height", self.rest_shape.height),
            ("tolerance", self.tolerance),
        ] {
            if !(v > 0.0) {
                return Err(ComplianceError::InvalidModel(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// A mirror-symmetric variant of this model (tip centred over the base).
    pub fn symmetric(mut self) -> Self {
        self.rest_shape.tip_offset = -self.rest_shape.base_width / 2.0;
        self
    }
}

/// Rigid object cross-sections in the finger plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectShape {
    /// Sphere cross-section: circle of the characteristic radius.
    Sphere,
    /// Cube cross-section: axis-aligned square of half-width equal to the
    /// characteristic radius.
    Cube,
    /// Cylinder pressed side-on: axis-aligned rectangle, half-width equal to
    /// the characteristic radius and half-height twice that.
    Cylinder,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectPrimitive {
    pub shape: ObjectShape,
    pub characteristic_radius: f64,
    /// Centre in the finger plane, mm.
    pub center: [f64; 2],
}

impl ObjectPrimitive {
    /// Places the object so its near face clears the undeformed contact face
    /// by `clearance` mm at mid-height.
    pub fn facing_finger(shape: ObjectShape, radius: f64, model: &FinRayModel, clearance: f64) -> Self {
        ObjectPrimitive {
            shape,
            characteristic_radius: radius,
            center: [radius + clearance, 0.55 * model.rest_shape.height],
        }
    }

    /// Box half-extents for the rectangular shapes.
    fn half_extents(&self) -> Vector2<f64> {
        let r = self.characteristic_radius;
        match self.shape {
            ObjectShape::Sphere => Vector2::new(r, r),
            ObjectShape::Cube => Vector2::new(r, r),
            ObjectShape::Cylinder => Vector2::new(r, 2.0 * r),
        }
    }

    /// Corner rounding of the box shapes (5% of the characteristic radius),
    /// which keeps the contact gradient continuous around the corners.
    fn corner_radius(&self) -> f64 {
        0.05 * self.characteristic_radius
    }

    /// Penetration depth of a point into the object (positive inside).
    fn depth(&self, p: Vector2<f64>) -> f64 {
        let c = Vector2::new(self.center[0], self.center[1]);
        match self.shape {
            ObjectShape::Sphere => self.characteristic_radius - (p - c).norm(),
            ObjectShape::Cube | ObjectShape::Cylinder => {
                let h = self.half_extents();
                let rc = self.corner_radius();
                let q = Vector2::new((p.x - c.x).abs() - (h.x - rc), (p.y - c.y).abs() - (h.y - rc));
                let outside = Vector2::new(q.x.max(0.0), q.y.max(0.0)).norm();
                let inside = q.x.max(q.y).min(0.0);
                rc - (outside + inside)
            }
        }
    }

    /// Outward (depenetration) direction at a point inside the object.
    fn outward(&self, p: Vector2<f64>) -> Vector2<f64> {
        let c = Vector2::new(self.center[0], self.center[1]);
        match self.shape {
            ObjectShape::Sphere => {
                let d = p - c;
                let n = d.norm();
                if n < 1e-12 {
                    Vector2::new(-1.0, 0.0)
                } else {
                    d / n
                }
            }
            ObjectShape::Cube | ObjectShape::Cylinder => {
                let h = self.half_extents();
                let rc = self.corner_radius();
                let rel = p - c;
                let q = Vector2::new(rel.x.abs() - (h.x - rc), rel.y.abs() - (h.y - rc));
                if q.x > 0.0 || q.y > 0.0 {
                    // Corner band: radial from the rounded-corner centre.
                    let d = Vector2::new(q.x.max(0.0) * rel.x.signum(), q.y.max(0.0) * rel.y.signum());
                    let n = d.norm();
                    if n > 1e-12 {
                        return d / n;
                    }
                }
                if q.x >= q.y {
                    Vector2::new(rel.x.signum(), 0.0)
                } else {
                    Vector2::new(0.0, rel.y.signum())
                }
            }
        }
    }
}

/// Point load applied to a beam node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExternalLoad {
    pub node: NodeRef,
    /// Force vector, N.
    pub force: Vector2<f64>,
}

/// Node addressing: segment-chain index along the front or back beam,
/// 1..=n_segments (node 0 is the clamped base).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeRef {
    Front(usize),
    Back(usize),
}

/// Equilibrium summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComplianceResult {
    /// Max node displacement from the rigidly rotated rest shape, mm.
    pub max_deformation: f64,
    /// Sum of penalty contact forces, N.
    pub total_contact_force: f64,
    pub contact_point_count: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Final total energy, N.mm.
    pub energy: f64,
    /// Deformed node positions, front beam then back beam, base to tip.
    #[serde(skip)]
    pub nodes: Vec<Vector2<f64>>,
    /// Deepest node penetration into the object at equilibrium, mm.
    pub max_penetration: f64,
}

struct Assembly {
    n: usize,
    front_base: Vector2<f64>,
    back_base: Vector2<f64>,
    front_len: f64,
    back_len: f64,
    /// Rest absolute segment angles, front then back.
    rest_angles: Vec<f64>,
    /// Rib connections: (front node, back node, rest length).
    ribs: Vec<(usize, usize, f64)>,
}

impl Assembly {
    fn new(model: &FinRayModel) -> Assembly {
        let n = model.n_segments;
        let w = model.rest_shape.base_width;
        let h = model.rest_shape.height;
        let tip = Vector2::new(model.rest_shape.tip_offset, h);
        let front_base = Vector2::new(0.0, 0.0);
        let back_base = Vector2::new(-w, 0.0);
        let front_vec = tip - front_base;
        let back_vec = tip - back_base;
        let front_angle = front_vec.y.atan2(front_vec.x);
        let back_angle = back_vec.y.atan2(back_vec.x);
        let mut rest_angles = vec![front_angle; n];
        rest_angles.extend(std::iter::repeat(back_angle).take(n));
        let mut ribs = Vec::with_capacity(model.rib_count);
        for i in 1..=model.rib_count {
            let frac = i as f64 / (model.rib_count + 1) as f64;
            let node = ((frac * n as f64).round() as usize).clamp(1, n - 1);
            let pf = front_base + front_vec * (node as f64 / n as f64);
            let pb = back_base + back_vec * (node as f64 / n as f64);
            ribs.push((node, node, (pf - pb).norm()));
        }
        Assembly {
            n,
            front_base,
            back_base,
            front_len: front_vec.norm() / n as f64,
            back_len: back_vec.norm() / n as f64,
            rest_angles,
            ribs,
        }
    }

    /// Node positions for segment angles `q`: front nodes 0..=n then back
    /// nodes 0..=n, base first.
    fn positions(&self, q: &[f64], actuation: f64) -> Vec<Vector2<f64>> {
        let n = self.n;
        let mut nodes = Vec::with_capacity(2 * n + 2);
        let rot = nalgebra::Rotation2::new(-actuation);
        let mut p = rot * self.front_base;
        nodes.push(p);
        for &angle in &q[..n] {
            p += Vector2::new(angle.cos(), angle.sin()) * self.front_len;
            nodes.push(p);
        }
        let mut p = rot * self.back_base;
        nodes.push(p);
        for &angle in &q[n..] {
            p += Vector2::new(angle.cos(), angle.sin()) * self.back_len;
            nodes.push(p);
        }
        nodes
    }

    /// Rest angles after rotating the whole base by the actuation angle
    /// (clockwise, towards the object side).
    fn actuated_rest(&self, actuation: f64) -> Vec<f64> {
        self.rest_angles.iter().map(|a| a - actuation).collect()
    }

    fn front_node(&self, nodes: &[Vector2<f64>], k: usize) -> Vector2<f64> {
        nodes[k]
    }

    fn back_node(&self, nodes: &[Vector2<f64>], k: usize) -> Vector2<f64> {
        nodes[self.n + 1 + k]
    }
}

struct Problem<'m> {
    model: &'m FinRayModel,
    assembly: Assembly,
    actuation: f64,
    rest_q: Vec<f64>,
    object: Option<ObjectPrimitive>,
    loads: Vec<ExternalLoad>,
}

impl<'m> Problem<'m> {
    /// Total energy and its gradient with respect to the segment angles.
    fn energy_gradient(&self, q: &[f64]) -> (f64, Vec<f64>) {
        let asm = &self.assembly;
        let n = asm.n;
        let k_joint = self.model.joint_stiffness;
        let nodes = asm.positions(q, self.actuation);
        let mut energy = 0.0;
        let mut grad = vec![0.0; 2 * n];
        // Per-node positional forces dE/dp, front nodes 1..=n and back 1..=n.
        let mut node_force = vec![Vector2::zeros(); 2 * n + 2];

        // Torsional springs per chain.
        for chain in 0..2 {
            let off = chain * n;
            for j in 0..n {
                let (delta, rest_delta) = if j == 0 {
                    (q[off], self.rest_q[off])
                } else {
                    (q[off + j] - q[off + j - 1], self.rest_q[off + j] - self.rest_q[off + j - 1])
                };
                let twist = delta - rest_delta;
                energy += 0.5 * k_joint * twist * twist;
                grad[off + j] += k_joint * twist;
                if j > 0 {
                    grad[off + j - 1] -= k_joint * twist;
                }
            }
        }

        // Ribs.
        for &(fk, bk, rest_len) in &asm.ribs {
            let pf = asm.front_node(&nodes, fk);
            let pb = asm.back_node(&nodes, bk);
            let d = pf - pb;
            let len = d.norm().max(1e-12);
            let stretch = len - rest_len;
            energy += 0.5 * self.model.rib_stiffness * stretch * stretch;
            let f = d / len * (self.model.rib_stiffness * stretch);
            node_force[fk] += f;
            node_force[n + 1 + bk] -= f;
        }

        // Tip closure.
        {
            let tf = asm.front_node(&nodes, n);
            let tb = asm.back_node(&nodes, n);
            let d = tf - tb;
            energy += 0.5 * self.model.tip_stiffness * d.norm_squared();
            let f = d * self.model.tip_stiffness;
            node_force[n] += f;
            node_force[2 * n + 1] -= f;
        }

        // Contact penalty on every free node.
        if let Some(object) = &self.object {
            for (slot, p) in nodes.iter().enumerate() {
                if slot == 0 || slot == n + 1 {
                    continue; // clamped bases
                }
                let depth = object.depth(*p);
                if depth > 0.0 {
                    energy += 0.5 * self.model.contact_penalty * depth * depth;
                    node_force[slot] -= object.outward(*p) * (self.model.contact_penalty * depth);
                }
            }
        }

        // External loads: E -= f . p.
        for load in &self.loads {
            let slot = match load.node {
                NodeRef::Front(k) => k,
                NodeRef::Back(k) => n + 1 + k,
            };
            energy -= load.force.dot(&nodes[slot]);
            node_force[slot] -= load.force;
        }

        // Chain rule: dp_k/dq_j = len * (-sin q_j, cos q_j) for k >= j.
        for chain in 0..2 {
            let off = chain * n;
            let (base_slot, len) = if chain == 0 {
                (0, asm.front_len)
            } else {
                (n + 1, asm.back_len)
            };
            let mut suffix = Vector2::zeros();
            for j in (0..n).rev() {
                suffix += node_force[base_slot + j + 1];
                let tangent = Vector2::new(-q[off + j].sin(), q[off + j].cos()) * len;
                grad[off + j] += tangent.dot(&suffix);
            }
        }
        (energy, grad)
    }

    /// Energy Hessian with respect to the segment angles: exact torsional
    /// terms, positional-spring blocks (stretch direction plus the signed
    /// perpendicular curvature), and the geometric term from the curvature
    /// of the chain map itself. Indefiniteness is handled by the caller's
    /// Levenberg damping.
    fn hessian(&self, q: &[f64]) -> nalgebra::DMatrix<f64> {
        let asm = &self.assembly;
        let n = asm.n;
        let dim = 2 * n;
        let mut hess = nalgebra::DMatrix::zeros(dim, dim);
        let k_joint = self.model.joint_stiffness;
        for chain in 0..2 {
            let off = chain * n;
            hess[(off, off)] += k_joint;
            for j in 1..n {
                hess[(off + j, off + j)] += k_joint;
                hess[(off + j - 1, off + j - 1)] += k_joint;
                hess[(off + j, off + j - 1)] -= k_joint;
                hess[(off + j - 1, off + j)] -= k_joint;
            }
        }
        let nodes = asm.positions(q, self.actuation);
        // d p_node / d q_j = len * (-sin q_j, cos q_j) for upstream angles.
        let tangent = |chain: usize, j: usize| -> Vector2<f64> {
            let (off, len) = if chain == 0 {
                (0, asm.front_len)
            } else {
                (n, asm.back_len)
            };
            Vector2::new(-q[off + j].sin(), q[off + j].cos()) * len
        };
        // Adds stiffness * (u . dp/dq_a)(u . dp/dq_b) for a scalar residual
        // observing nodes along direction u. `node` is (chain, index).
        let rank_one = |hess: &mut nalgebra::DMatrix<f64>,
                            terms: &[((usize, usize), Vector2<f64>)],
                            stiffness: f64| {
            let mut jac = vec![0.0; dim];
            for &((chain, node), u) in terms {
                for j in 0..node {
                    jac[chain * n + j] += u.dot(&tangent(chain, j));
                }
            }
            for a in 0..dim {
                if jac[a] == 0.0 {
                    continue;
                }
                for b in 0..dim {
                    if jac[b] != 0.0 {
                        hess[(a, b)] += stiffness * jac[a] * jac[b];
                    }
                }
            }
        };
        let perp = |u: Vector2<f64>| Vector2::new(-u.y, u.x);
        for &(fk, bk, rest_len) in &asm.ribs {
            let d = asm.front_node(&nodes, fk) - asm.back_node(&nodes, bk);
            let len = d.norm().max(1e-12);
            let u = d / len;
            let pair = [((0usize, fk), u), ((1usize, bk), -u)];
            rank_one(&mut hess, &pair, self.model.rib_stiffness);
            let pair_perp = [((0usize, fk), perp(u)), ((1usize, bk), -perp(u))];
            rank_one(
                &mut hess,
                &pair_perp,
                self.model.rib_stiffness * (len - rest_len) / len,
            );
        }
        {
            // Zero-rest-length tip spring: Hessian in p is isotropic.
            for axis in [Vector2::x(), Vector2::y()] {
                rank_one(
                    &mut hess,
                    &[((0, n), axis), ((1, n), -axis)],
                    self.model.tip_stiffness,
                );
            }
        }
        if let Some(object) = &self.object {
            for (slot, p) in nodes.iter().enumerate() {
                if slot == 0 || slot == n + 1 {
                    continue;
                }
                let depth = object.depth(*p);
                if depth > 0.0 {
                    let u = object.outward(*p);
                    let node = if slot <= n { (0, slot) } else { (1, slot - n - 1) };
                    rank_one(&mut hess, &[(node, u)], self.model.contact_penalty);
                    // Surface curvature term for the round shapes.
                    if let ObjectShape::Sphere = object.shape {
                        let dist = (object.characteristic_radius - depth).max(1e-9);
                        rank_one(
                            &mut hess,
                            &[(node, perp(u))],
                            -self.model.contact_penalty * depth / dist,
                        );
                    }
                }
            }
        }
        // Geometric term: sum_k (dE/dp_k) . d^2 p_k / dq_a^2, diagonal in
        // the angles because distinct segments enter the chain sum
        // independently. d^2 p_k / dq_a^2 = -len * (cos q_a, sin q_a).
        let node_force = self.node_forces(&nodes);
        for chain in 0..2 {
            let off = chain * n;
            let (base_slot, len) = if chain == 0 {
                (0, asm.front_len)
            } else {
                (n + 1, asm.back_len)
            };
            let mut suffix = Vector2::zeros();
            for j in (0..n).rev() {
                suffix += node_force[base_slot + j + 1];
                let second = Vector2::new(q[off + j].cos(), q[off + j].sin()) * (-len);
                hess[(off + j, off + j)] += second.dot(&suffix);
            }
        }
        hess
    }

    /// dE/dp per node slot from the positional terms (ribs, tip closure,
    /// contact, external loads).
    fn node_forces(&self, nodes: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
        let asm = &self.assembly;
        let n = asm.n;
        let mut node_force = vec![Vector2::zeros(); 2 * n + 2];
        for &(fk, bk, rest_len) in &asm.ribs {
            let d = asm.front_node(nodes, fk) - asm.back_node(nodes, bk);
            let len = d.norm().max(1e-12);
            let f = d / len * (self.model.rib_stiffness * (len - rest_len));
            node_force[fk] += f;
            node_force[n + 1 + bk] -= f;
        }
        {
            let d = asm.front_node(nodes, n) - asm.back_node(nodes, n);
            let f = d * self.model.tip_stiffness;
            node_force[n] += f;
            node_force[2 * n + 1] -= f;
        }
        if let Some(object) = &self.object {
            for (slot, p) in nodes.iter().enumerate() {
                if slot == 0 || slot == n + 1 {
                    continue;
                }
                let depth = object.depth(*p);
                if depth > 0.0 {
                    node_force[slot] -= object.outward(*p) * (self.model.contact_penalty * depth);
                }
            }
        }
        for load in &self.loads {
            let slot = match load.node {
                NodeRef::Front(k) => k,
                NodeRef::Back(k) => n + 1 + k,
            };
            node_force[slot] -= load.force;
        }
        node_force
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

/// Minimises the assembly energy for a fixed actuation angle.
///
/// `initial` seeds the solver (used for warm starts); `None` starts from the
/// rigidly rotated rest shape.
pub fn solve_equilibrium_with(
    model: &FinRayModel,
    object: Option<ObjectPrimitive>,
    actuation: f64,
    loads: &[ExternalLoad],
    initial: Option<&[f64]>,
) -> Result<(ComplianceResult, Vec<f64>), ComplianceError> {
    model.validate()?;
    if actuation < 0.0 {
        return Err(ComplianceError::InvalidModel(format!(
            "actuation must be non-negative, got {actuation}"
        )));
    }
    let assembly = Assembly::new(model);
    // Placement guard: the unactuated rest shape must be penetration-free.
    if let Some(obj) = &object {
        let rest_nodes = assembly.positions(&assembly.rest_angles, 0.0);
        let worst = rest_nodes
            .iter()
            .map(|p| obj.depth(*p))
            .fold(f64::NEG_INFINITY, f64::max);
        if worst > 0.0 {
            return Err(ComplianceError::InvalidPlacement { depth: worst });
        }
    }
    let rest_q = assembly.actuated_rest(actuation);
    let problem = Problem {
        model,
        assembly,
        actuation,
        rest_q: rest_q.clone(),
        object,
        loads: loads.to_vec(),
    };
    let q0: Vec<f64> = match initial {
        Some(q0) => q0.to_vec(),
        None => rest_q.clone(),
    };
    let descent = descend(&problem, q0, model.max_iterations, model.tolerance);
    if !descent.converged {
        return Err(ComplianceError::NonConvergence {
            iterations: descent.iterations,
            grad_norm: descent.grad_norm,
        });
    }
    let result = summarise(&problem, &descent.q, descent.energy, descent.iterations, true);
    Ok((result, descent.q))
}

struct Descent {
    q: Vec<f64>,
    energy: f64,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
    /// Energy after every accepted step (first entry is the start energy).
    #[allow(dead_code)] // read by the descent tests
    accepted_energies: Vec<f64>,
}

fn descend(problem: &Problem<'_>, mut q: Vec<f64>, max_iterations: usize, tolerance: f64) -> Descent {
    let (mut energy, mut grad) = problem.energy_gradient(&q);
    let mut accepted_energies = vec![energy];
    // Levenberg-damped Gauss-Newton with Armijo backtracking. The damped
    // system (H + lambda I) is positive definite, so every step is a descent
    // direction; backtracking keeps the energy non-increasing and the
    // damping adapts to the contact set. The step is solved from the local
    // model, so convergence does not rely on resolving energy differences
    // near float resolution.
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    let dim = q.len();
    while iterations < max_iterations {
        let g_norm = inf_norm(&grad);
        if g_norm <= tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let mut hess = problem.hessian(&q);
        for i in 0..dim {
            hess[(i, i)] += lambda;
        }
        let g_vec = nalgebra::DVector::from_column_slice(&grad);
        let step = match hess.clone().cholesky() {
            Some(chol) => chol.solve(&g_vec),
            None => {
                lambda = (lambda * 10.0).min(1e12);
                continue;
            }
        };
        let slope: f64 = grad.iter().zip(step.iter()).map(|(g, d)| g * d).sum();
        if !(slope > 0.0) {
            lambda = (lambda * 10.0).min(1e12);
            continue;
        }
        let mut alpha = 1.0f64;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate: Vec<f64> = q
                .iter()
                .zip(step.iter())
                .map(|(qi, di)| qi - alpha * di)
                .collect();
            let (e_new, g_new) = problem.energy_gradient(&candidate);
            // Armijo sufficient decrease; once the predicted decrease falls
            // below float resolution of the energy, accept up to rounding
            // noise (the Newton step still contracts the gradient).
            let decrease = 1e-4 * alpha * slope;
            let floor = 1e-14 * energy.abs().max(1.0);
            let ok = if decrease >= floor {
                e_new <= energy - decrease
            } else {
                e_new <= energy + floor
            };
            if ok {
                let moved = candidate != q;
                q = candidate;
                energy = e_new;
                grad = g_new;
                accepted_energies.push(energy);
                accepted = moved;
                break;
            }
            alpha *= 0.5;
        }
        if accepted {
            lambda = (lambda / 3.0).max(1e-10);
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                // No measurable progress at maximal damping.
                break;
            }
        }
    }
    let grad_norm = inf_norm(&grad);
    if grad_norm <= tolerance {
        converged = true;
    }
    Descent {
        q,
        energy,
        grad_norm,
        iterations,
        converged,
        accepted_energies,
    }
}

fn summarise(
    problem: &Problem<'_>,
    q: &[f64],
    energy: f64,
    iterations: usize,
    converged: bool,
) -> ComplianceResult {
    let asm = &problem.assembly;
    let nodes = asm.positions(q, problem.actuation);
    let rest_nodes = asm.positions(&problem.rest_q, problem.actuation);
    let max_deformation = nodes
        .iter()
        .zip(&rest_nodes)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0f64, f64::max);
    let mut total_contact_force = 0.0;
    let mut contact_point_count = 0;
    let mut max_penetration = 0.0f64;
    if let Some(object) = &problem.object {
        for (slot, p) in nodes.iter().enumerate() {
            if slot == 0 || slot == asm.n + 1 {
                continue;
            }
            let depth = object.depth(*p);
            if depth > 0.0 {
                contact_point_count += 1;
                total_contact_force += problem.model.contact_penalty * depth;
                max_penetration = max_penetration.max(depth);
            }
        }
    }
    ComplianceResult {
        max_deformation,
        total_contact_force,
        contact_point_count,
        converged,
        iterations,
        energy,
        nodes,
        max_penetration,
    }
}

/// Equilibrium of the finger pressed on `object` at the given base-bend
/// actuation.
///
/// A cold start ramps the actuation internally (quasi-static loading) so the
/// solver tracks the physical equilibrium branch instead of snapping through
/// the contact.
pub fn solve_equilibrium(
    model: &FinRayModel,
    object: &ObjectPrimitive,
    actuation: f64,
) -> Result<ComplianceResult, ComplianceError> {
    const RAMP_STEP: f64 = 0.05;
    let substeps = (actuation / RAMP_STEP).ceil().max(1.0) as usize;
    let mut warm: Option<Vec<f64>> = None;
    let mut result = None;
    let mut total_iterations = 0;
    for k in 1..=substeps {
        let a = actuation * k as f64 / substeps as f64;
        let (r, q) = solve_equilibrium_with(model, Some(*object), a, &[], warm.as_deref())?;
        total_iterations += r.iterations;
        warm = Some(q);
        result = Some(r);
    }
    let mut r = result.expect("at least one substep");
    r.iterations = total_iterations;
    Ok(r)
}

/// One equilibrium per schedule step, warm-started from the previous step.
///
/// The schedule must be monotone non-decreasing.
pub fn contact_force_profile(
    model: &FinRayModel,
    object: &ObjectPrimitive,
    actuation_schedule: &[f64],
) -> Result<Vec<ComplianceResult>, ComplianceError> {
    for (i, pair) in actuation_schedule.windows(2).enumerate() {
        if pair[1] < pair[0] {
            return Err(ComplianceError::NonMonotoneSchedule { index: i + 1 });
        }
    }
    let mut results = Vec::with_capacity(actuation_schedule.len());
    let mut warm: Option<Vec<f64>> = None;
    for &actuation in actuation_schedule {
        let (result, q) =
            solve_equilibrium_with(model, Some(*object), actuation, &[], warm.as_deref())?;
        warm = Some(q);
        results.push(result);
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn model() -> FinRayModel {
        FinRayModel::default()
    }

    fn sphere(radius: f64, center: [f64; 2]) -> ObjectPrimitive {
        ObjectPrimitive {
            shape: ObjectShape::Sphere,
            characteristic_radius: radius,
            center,
        }
    }

    #[test]
    fn free_finger_at_rest_has_no_deformation() {
        let object = sphere(20.0, [60.0, 40.0]);
        let r = solve_equilibrium(&model(), &object, 0.0).unwrap();
        assert_abs_diff_eq!(r.max_deformation, 0.0, epsilon = 1e-9);
        assert_eq!(r.contact_point_count, 0);
        assert_abs_diff_eq!(r.total_contact_force, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn free_finger_under_actuation_has_no_deformation() {
        let object = sphere(10.0, [200.0, 40.0]);
        let r = solve_equilibrium(&model(), &object, 0.4).unwrap();
        assert!(r.converged);
        // Residual lies within the displacement implied by the gradient
        // tolerance.
        assert_abs_diff_eq!(r.max_deformation, 0.0, epsilon = 1e-5);
        assert_eq!(r.contact_point_count, 0);
    }

    #[test]
    fn rest_penetration_is_rejected() {
        let object = sphere(20.0, [5.0, 40.0]);
        assert!(matches!(
            solve_equilibrium(&model(), &object, 0.1),
            Err(ComplianceError::InvalidPlacement { .. })
        ));
    }

    #[test]
    fn shape_ordering_circle_smallest() {
        let m = model();
        let radius = 20.0;
        let actuation = 0.25;
        let mut deformation = Vec::new();
        let mut force = Vec::new();
        for shape in [ObjectShape::Sphere, ObjectShape::Cube, ObjectShape::Cylinder] {
            let object = ObjectPrimitive::facing_finger(shape, radius, &m, 1.0);
            let r = solve_equilibrium(&m, &object, actuation).unwrap();
            assert!(r.converged);
            deformation.push(r.max_deformation);
            force.push(r.total_contact_force);
        }
        assert!(
            deformation[0] < deformation[1] && deformation[0] < deformation[2],
            "sphere deformation {:?} not smallest",
            deformation
        );
        assert!(
            force[0] < force[1] && force[0] < force[2],
            "sphere force {:?} not smallest",
            force
        );
    }

    /// Nominal grasp actuation used by the calibration checks, rad.
    pub(super) const NOMINAL_ACTUATION: f64 = 0.22;

    #[test]
    fn default_calibration_regime() {
        // Default stiffnesses put the sphere case in the 5..10 mm range at
        // the nominal actuation.
        let m = model();
        let object = ObjectPrimitive::facing_finger(ObjectShape::Sphere, 20.0, &m, 1.0);
        let r = solve_equilibrium(&m, &object, NOMINAL_ACTUATION).unwrap();
        assert!(
            (5.0..=10.0).contains(&r.max_deformation),
            "sphere deformation {} outside calibrated range",
            r.max_deformation
        );
    }

    #[test]
    fn tip_load_linearity() {
        let m = model();
        let f = 0.05;
        let deflection = |scale: f64| {
            let loads = [
                ExternalLoad {
                    node: NodeRef::Front(m.n_segments),
                    force: Vector2::new(-f * scale / 2.0, 0.0),
                },
                ExternalLoad {
                    node: NodeRef::Back(m.n_segments),
                    force: Vector2::new(-f * scale / 2.0, 0.0),
                },
            ];
            let (r, _) = solve_equilibrium_with(&m, None, 0.0, &loads, None).unwrap();
            r.max_deformation
        };
        let d1 = deflection(1.0);
        let d2 = deflection(2.0);
        assert!(
            (d2 / d1 - 2.0).abs() <= 0.05 * 2.0,
            "deflection ratio {} not 2.0 within 5%",
            d2 / d1
        );
    }

    #[test]
    fn constant_schedule_is_idempotent() {
        let m = model();
        let object = ObjectPrimitive::facing_finger(ObjectShape::Sphere, 20.0, &m, 1.0);
        let results = contact_force_profile(&m, &object, &[0.2, 0.2, 0.2]).unwrap();
        for r in &results[1..] {
            assert_abs_diff_eq!(
                r.max_deformation,
                results[0].max_deformation,
                epsilon = 1e-9
            );
            assert_abs_diff_eq!(
                r.total_contact_force,
                results[0].total_contact_force,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn increasing_schedule_force_is_monotone() {
        let m = model();
        let object = ObjectPrimitive::facing_finger(ObjectShape::Sphere, 20.0, &m, 1.0);
        let schedule: Vec<f64> = (0..8).map(|i| 0.05 + i as f64 * 0.03).collect();
        let results = contact_force_profile(&m, &object, &schedule).unwrap();
        for pair in results.windows(2) {
            assert!(
                pair[1].total_contact_force >= pair[0].total_contact_force - 1e-9,
                "force decreased: {} -> {}",
                pair[0].total_contact_force,
                pair[1].total_contact_force
            );
        }
    }

    #[test]
    fn circle_force_smaller_than_square_at_final_step() {
        let m = model();
        let schedule = [0.1, 0.15, 0.2, 0.25];
        let run = |shape| {
            let object = ObjectPrimitive::facing_finger(shape, 20.0, &m, 1.0);
            contact_force_profile(&m, &object, &schedule).unwrap()
        };
        let circle = run(ObjectShape::Sphere);
        let square = run(ObjectShape::Cube);
        assert!(
            circle.last().unwrap().total_contact_force
                < square.last().unwrap().total_contact_force
        );
    }

    #[test]
    fn non_monotone_schedule_is_rejected() {
        let m = model();
        let object = ObjectPrimitive::facing_finger(ObjectShape::Sphere, 20.0, &m, 1.0);
        assert!(matches!(
            contact_force_profile(&m, &object, &[0.2, 0.1]),
            Err(ComplianceError::NonMonotoneSchedule { index: 1 })
        ));
    }

    #[test]
    fn penetration_bounded_by_penalty() {
        let m = model();
        let object = ObjectPrimitive::facing_finger(ObjectShape::Sphere, 20.0, &m, 1.0);
        let r = solve_equilibrium(&m, &object, 0.3).unwrap();
        assert!(r.contact_point_count > 0);
        assert!(
            r.max_penetration <= 5.0 / m.contact_penalty,
            "penetration {} exceeds bound {}",
            r.max_penetration,
            5.0 / m.contact_penalty
        );
    }

    #[test]
    fn symmetric_press_deforms_symmetrically() {
        // Mirror-symmetric profile with a circle centred on the symmetry
        // axis between the beams; opposing mid-beam loads squeeze the beams
        // onto it. The deformed shape must stay mirror symmetric.
        let m = model().symmetric();
        let axis_x = -m.rest_shape.base_width / 2.0;
        let mid = m.n_segments / 2;
        let object = sphere(5.0, [axis_x, 0.5 * m.rest_shape.height]);
        let loads = [
            ExternalLoad {
                node: NodeRef::Front(mid),
                force: Vector2::new(-8.0, 0.0),
            },
            ExternalLoad {
                node: NodeRef::Back(mid),
                force: Vector2::new(8.0, 0.0),
            },
        ];
        let (r, _) = solve_equilibrium_with(&m, Some(object), 0.0, &loads, None).unwrap();
        assert!(r.contact_point_count > 0, "squeeze should reach the object");
        let n = m.n_segments;
        // Front node k mirrors back node k about the axis.
        for k in 0..=n {
            let pf = r.nodes[k];
            let pb = r.nodes[n + 1 + k];
            let mirrored = Vector2::new(2.0 * axis_x - pb.x, pb.y);
            assert_abs_diff_eq!((pf - mirrored).norm(), 0.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn energy_descent_is_monotone() {
        let m = model();
        let object = ObjectPrimitive::facing_finger(ObjectShape::Cube, 20.0, &m, 1.0);
        let assembly = Assembly::new(&m);
        let rest_q = assembly.actuated_rest(0.25);
        let problem = Problem {
            model: &m,
            assembly,
            actuation: 0.25,
            rest_q: rest_q.clone(),
            object: Some(object),
            loads: Vec::new(),
        };
        let descent = descend(&problem, rest_q, m.max_iterations, m.tolerance);
        assert!(descent.converged);
        for pair in descent.accepted_energies.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-12 * pair[0].abs().max(1.0),
                "energy increased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }
}
