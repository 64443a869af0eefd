use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::SimError;

/// Rigid rod between two nodes. Its mass is split evenly between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strut {
    pub nodes: [usize; 2],
    pub length_mm: f64,
    pub mass_g: f64,
}

/// Bilateral Hooke spring with linear damping along its axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spring {
    pub nodes: [usize; 2],
    pub stiffness_n_per_mm: f64,
    pub rest_length_mm: f64,
    pub damping_n_s_per_mm: f64,
}

/// Eccentric rotating mass mounted at a strut's midpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Motor {
    pub strut: usize,
    pub eccentric_mass_g: f64,
    pub arm_mm: f64,
}

/// Node template, struts, springs and motors of the robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureSpec {
    /// Template node positions, mm, z up.
    pub nodes: Vec<[f64; 3]>,
    pub struts: Vec<Strut>,
    pub springs: Vec<Spring>,
    /// Motor `i` is driven by frequency byte `f(i+1)`.
    pub motors: Vec<Motor>,
}

pub const STRUT_COUNT: usize = 6;
pub const SPRING_COUNT: usize = 18;
pub const MOTOR_COUNT: usize = 3;

/// Knobs for the default six-strut prism. Struts run from bottom node `k`
/// to top node `k`; springs close the bottom hexagon, the top hexagon, and
/// tie bottom node `k` to top node `k - 1`. Motors sit on struts 0, 4, 2 so
/// that the cyclic motor permutation equals a +120 degree body rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrismParams {
    pub radius_mm: f64,
    pub height_mm: f64,
    /// Top ring rotation. With equal stiffness and prestrain on every
    /// spring the prism is self-equilibrated at 120 degrees.
    pub twist_deg: f64,
    pub passive_strut_mass_g: f64,
    pub motor_strut_mass_g: f64,
    pub ring_stiffness_n_per_mm: f64,
    pub side_stiffness_n_per_mm: f64,
    pub prestrain: f64,
    pub damping_n_s_per_mm: f64,
    pub eccentric_mass_g: f64,
    pub arm_mm: f64,
}

impl Default for PrismParams {
    fn default() -> Self {
        Self {
            radius_mm: 50.0,
            height_mm: 52.0,
            twist_deg: 120.0,
            passive_strut_mass_g: 12.0,
            motor_strut_mass_g: 20.0,
            ring_stiffness_n_per_mm: 0.3,
            side_stiffness_n_per_mm: 0.3,
            prestrain: 0.1,
            damping_n_s_per_mm: 1e-3,
            eccentric_mass_g: 5.0,
            arm_mm: 10.0,
        }
    }
}

impl StructureSpec {
    pub fn hexagonal_prism(p: &PrismParams) -> Self {
        let n = 6;
        let ring = |k: usize, z: f64, offset: f64| {
            let a = (60.0 * k as f64 + offset).to_radians();
            [p.radius_mm * a.cos(), p.radius_mm * a.sin(), z]
        };
        let mut nodes: Vec<[f64; 3]> = (0..n).map(|k| ring(k, 0.0, 0.0)).collect();
        nodes.extend((0..n).map(|k| ring(k, p.height_mm, p.twist_deg)));

        let dist = |a: usize, b: usize| {
            let (u, v) = (nodes[a], nodes[b]);
            ((u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2) + (u[2] - v[2]).powi(2)).sqrt()
        };
        let motorized = [0, 4, 2];
        let struts = (0..n)
            .map(|k| Strut {
                nodes: [k, n + k],
                length_mm: dist(k, n + k),
                mass_g: if motorized.contains(&k) { p.motor_strut_mass_g } else { p.passive_strut_mass_g },
            })
            .collect();
        let spring = |a: usize, b: usize, k: f64| Spring {
            nodes: [a, b],
            stiffness_n_per_mm: k,
            rest_length_mm: dist(a, b) * (1.0 - p.prestrain),
            damping_n_s_per_mm: p.damping_n_s_per_mm,
        };
        let mut springs = Vec::with_capacity(SPRING_COUNT);
        springs.extend((0..n).map(|k| spring(k, (k + 1) % n, p.ring_stiffness_n_per_mm)));
        springs.extend((0..n).map(|k| spring(n + k, n + (k + 1) % n, p.ring_stiffness_n_per_mm)));
        springs.extend((0..n).map(|k| spring(k, n + (k + n - 1) % n, p.side_stiffness_n_per_mm)));
        let motors = motorized
            .iter()
            .map(|&s| Motor { strut: s, eccentric_mass_g: p.eccentric_mass_g, arm_mm: p.arm_mm })
            .collect();
        Self { nodes, struts, springs, motors }
    }

    /// Same structure rotated about the vertical axis through the origin.
    pub fn rotated_about_z(&self, degrees: f64) -> Self {
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), degrees.to_radians());
        let mut out = self.clone();
        for n in &mut out.nodes {
            let v = r * Vector3::from(*n);
            *n = [v.x, v.y, v.z];
        }
        out
    }

    pub fn node_mass(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.nodes.len()];
        for s in &self.struts {
            m[s.nodes[0]] += s.mass_g / 2.0;
            m[s.nodes[1]] += s.mass_g / 2.0;
        }
        m
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidStructure(msg));
        if self.struts.len() != STRUT_COUNT {
            return bad(format!("expected {STRUT_COUNT} struts, found {}", self.struts.len()));
        }
        if self.springs.len() != SPRING_COUNT {
            return bad(format!("expected {SPRING_COUNT} springs, found {}", self.springs.len()));
        }
        if self.motors.len() != MOTOR_COUNT {
            return bad(format!("expected {MOTOR_COUNT} motors, found {}", self.motors.len()));
        }
        if self.nodes.len() != 2 * STRUT_COUNT {
            return bad(format!("expected {} nodes, found {}", 2 * STRUT_COUNT, self.nodes.len()));
        }
        if self.nodes.iter().flatten().any(|c| !c.is_finite()) {
            return bad("non-finite node coordinate".into());
        }
        // every node belongs to exactly one strut
        let mut owner = vec![None; self.nodes.len()];
        for (i, s) in self.struts.iter().enumerate() {
            if !(s.length_mm > 0.0 && s.mass_g > 0.0) {
                return bad(format!("strut {i} needs positive length and mass"));
            }
            for &n in &s.nodes {
                match owner.get(n) {
                    None => return bad(format!("strut {i} references missing node {n}")),
                    Some(Some(j)) => return bad(format!("node {n} shared by struts {j} and {i}")),
                    Some(None) => owner[n] = Some(i),
                }
            }
        }
        for (i, s) in self.springs.iter().enumerate() {
            if s.nodes.iter().any(|&n| n >= self.nodes.len()) || s.nodes[0] == s.nodes[1] {
                return bad(format!("spring {i} has invalid endpoints {:?}", s.nodes));
            }
            if !(s.stiffness_n_per_mm > 0.0 && s.rest_length_mm >= 0.0 && s.damping_n_s_per_mm >= 0.0) {
                return bad(format!("spring {i} has invalid constants"));
            }
        }
        let mut motor_struts: Vec<usize> = self.motors.iter().map(|m| m.strut).collect();
        motor_struts.sort_unstable();
        motor_struts.dedup();
        if motor_struts.len() != MOTOR_COUNT || motor_struts.iter().any(|&s| s >= STRUT_COUNT) {
            return bad("motors must sit on three distinct struts".into());
        }
        if !self.spring_graph_connected() {
            return Err(SimError::Disconnected);
        }
        self.check_three_fold_symmetry()
    }

    pub fn spring_graph_connected(&self) -> bool {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for s in &self.springs {
            adj[s.nodes[0]].push(s.nodes[1]);
            adj[s.nodes[1]].push(s.nodes[0]);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// A +120 degree turn about the vertical axis through the node centroid
    /// must map nodes, struts, springs and the motor cycle onto themselves.
    pub fn check_three_fold_symmetry(&self) -> Result<(), SimError> {
        let asym = |m: String| Err(SimError::Asymmetric(m));
        let pts: Vec<Vector3<f64>> = self.nodes.iter().map(|n| Vector3::from(*n)).collect();
        let c = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
        let scale = pts.iter().map(|p| (p - c).norm()).fold(0.0, f64::max).max(1.0);
        let tol = 1e-6 * scale;
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), 2.0 * PI / 3.0);
        let mut image = vec![0usize; pts.len()];
        for (i, p) in pts.iter().enumerate() {
            let q = c + r * (p - c);
            match pts.iter().position(|o| (o - q).norm() < tol) {
                Some(j) => image[i] = j,
                None => return asym(format!("node {i} has no rotated counterpart")),
            }
        }
        let same = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        let edge = |e: [usize; 2]| {
            let m = [image[e[0]], image[e[1]]];
            move |o: [usize; 2]| o == m || o == [m[1], m[0]]
        };
        for (i, s) in self.struts.iter().enumerate() {
            let hit = edge(s.nodes);
            match self.struts.iter().find(|o| hit(o.nodes)) {
                Some(o) if same(o.mass_g, s.mass_g) && same(o.length_mm, s.length_mm) => {}
                _ => return asym(format!("strut {i} has no matching rotated strut")),
            }
        }
        for (i, s) in self.springs.iter().enumerate() {
            let hit = edge(s.nodes);
            match self.springs.iter().find(|o| hit(o.nodes)) {
                Some(o)
                    if same(o.stiffness_n_per_mm, s.stiffness_n_per_mm)
                        && same(o.rest_length_mm, s.rest_length_mm)
                        && same(o.damping_n_s_per_mm, s.damping_n_s_per_mm) => {}
                _ => return asym(format!("spring {i} has no matching rotated spring")),
            }
        }
        // motor i must be the image of motor i+1, so that (f1, f2, f3) -> (f2, f3, f1)
        // turns the whole motion by +120 degrees
        for i in 0..MOTOR_COUNT {
            let j = (i + 1) % MOTOR_COUNT;
            let (m, next) = (&self.motors[i], &self.motors[j]);
            let rotated = self.struts[next.strut].nodes.map(|n| image[n]);
            if rotated != self.struts[m.strut].nodes {
                return asym(format!("motor {i} is not the +120 degree image of motor {j}"));
            }
            if !(same(m.eccentric_mass_g, next.eccentric_mass_g) && same(m.arm_mm, next.arm_mm)) {
                return asym(format!("motors {i} and {j} differ"));
            }
        }
        Ok(())
    }
}

impl Default for StructureSpec {
    fn default() -> Self {
        Self::hexagonal_prism(&PrismParams::default())
    }
}
