//! Surrogate tensegrity dynamics.
//!
//! Six struts are modeled as pairs of endpoint point masses held at fixed
//! distance by axial reaction forces plus a projection that removes drift.
//! Eighteen damped springs connect the endpoints and three struts carry
//! rotating eccentric-mass motors. Ground contact is a penalty spring with
//! Coulomb friction applied as iterated velocity impulses, which gives true
//! sticking. The integrator is semi-implicit Euler.
//!
//! Internal units are mm, g and s, so forces are in g·mm/s² (1 N = 1e6).
//!
//! This model exists to exercise the search pipeline. It makes no claim of
//! fidelity to a physical robot.

mod config;
mod structure;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::descriptor::{to_local_behavior, PoseSample};
use crate::repertoire::{Behavior, ParameterSet};

pub use config::SimConfig;
pub use structure::{Motor, PrismParams, Spring, Strut, StructureSpec, MOTOR_COUNT, SPRING_COUNT, STRUT_COUNT};

const NEWTON: f64 = 1e6;
const BLOWUP_MM: f64 = 1e5;
const STABILITY_LIMIT: f64 = 0.3;
const FRICTION_ITERATIONS: usize = 20;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid structure: {0}")]
    InvalidStructure(String),
    #[error("spring graph is disconnected")]
    Disconnected,
    #[error("structure is not three-fold symmetric: {0}")]
    Asymmetric(String),
    #[error("unstable pre-stress: {0}")]
    Unstable(String),
    #[error("timestep {dt} s too large: fastest mode {omega:.1} rad/s gives omega*dt = {ratio:.3} (limit 0.3)")]
    StabilityGuard { dt: f64, omega: f64, ratio: f64 },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("numerical blow-up at t = {time:.4} s: node {node} at {position:?}")]
    BlowUp { time: f64, node: usize, position: [f64; 3] },
}

/// Node positions (mm) and velocities (mm/s) at time `time` (s).
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub positions: Vec<Vector3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
    pub time: f64,
}

/// Angular frequency of each motor, rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotorDrive(pub [f64; MOTOR_COUNT]);

impl MotorDrive {
    pub fn from_params(p: &ParameterSet, cfg: &SimConfig) -> Self {
        Self(p.as_array().map(|f| cfg.omega(f)))
    }
}

#[derive(Debug, Clone)]
struct SpringK {
    a: usize,
    b: usize,
    k: f64,
    rest: f64,
    c: f64,
}

#[derive(Debug, Clone)]
struct MotorK {
    a: usize,
    b: usize,
    /// Eccentric mass times arm, g·mm.
    unbalance: f64,
}

/// A validated structure and config with the settled resting state cached.
#[derive(Debug, Clone)]
pub struct Simulator {
    spec: StructureSpec,
    cfg: SimConfig,
    mass: Vec<f64>,
    inv_mass: Vec<f64>,
    springs: Vec<SpringK>,
    motors: Vec<MotorK>,
    ground_k: f64,
    ground_c: f64,
    settled: SimState,
    /// Horizontal node offsets from the centroid in the settled state, in a
    /// body frame whose x axis points at the midpoint of the first motor's
    /// strut. Yaw is measured against this layout.
    frame: Vec<[f64; 2]>,
}

impl Simulator {
    /// Validate, check the stability guard and settle the structure at rest
    /// on the ground.
    pub fn new(spec: StructureSpec, cfg: SimConfig) -> Result<Self, SimError> {
        spec.validate()?;
        check_config(&cfg)?;
        let mass = spec.node_mass();
        let inv_mass = mass.iter().map(|m| 1.0 / m).collect::<Vec<_>>();
        let springs = spec
            .springs
            .iter()
            .map(|s| SpringK {
                a: s.nodes[0],
                b: s.nodes[1],
                k: s.stiffness_n_per_mm * NEWTON,
                rest: s.rest_length_mm,
                c: s.damping_n_s_per_mm * NEWTON,
            })
            .collect::<Vec<_>>();
        let motors = spec
            .motors
            .iter()
            .map(|m| {
                let [a, b] = spec.struts[m.strut].nodes;
                MotorK { a, b, unbalance: m.eccentric_mass_g * m.arm_mm }
            })
            .collect();
        let ground_k = cfg.ground_stiffness_n_per_mm * NEWTON;
        let ground_c = cfg.ground_damping_n_s_per_mm * NEWTON;

        // Gershgorin bound on the fastest linearized mode
        let mut row = vec![ground_k; mass.len()];
        for s in &springs {
            row[s.a] += 2.0 * s.k;
            row[s.b] += 2.0 * s.k;
        }
        let omega = row.iter().zip(&inv_mass).map(|(r, w)| (r * w).sqrt()).fold(0.0, f64::max);
        let ratio = omega * cfg.timestep_s;
        if ratio >= STABILITY_LIMIT {
            return Err(SimError::StabilityGuard { dt: cfg.timestep_s, omega, ratio });
        }

        let mut sim = Self {
            spec,
            cfg,
            mass,
            inv_mass,
            springs,
            motors,
            ground_k,
            ground_c,
            settled: SimState { positions: Vec::new(), velocities: Vec::new(), time: 0.0 },
            frame: Vec::new(),
        };
        sim.settled = sim.settle()?;
        sim.frame = sim.body_frame(&sim.settled.positions);
        Ok(sim)
    }

    pub fn spec(&self) -> &StructureSpec {
        &self.spec
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Resting state reached after settling, with zero velocity and time 0.
    pub fn settled(&self) -> &SimState {
        &self.settled
    }

    /// Same structure with a different config. Settles again only if the
    /// change can affect the resting pose.
    pub fn with_config(&self, cfg: SimConfig) -> Result<Self, SimError> {
        let resettle = cfg.timestep_s != self.cfg.timestep_s
            || cfg.gravity_mm_s2 != self.cfg.gravity_mm_s2
            || cfg.ground_stiffness_n_per_mm != self.cfg.ground_stiffness_n_per_mm
            || cfg.ground_damping_n_s_per_mm != self.cfg.ground_damping_n_s_per_mm
            || cfg.contact_skin_mm != self.cfg.contact_skin_mm
            || cfg.friction_coefficient != self.cfg.friction_coefficient
            || cfg.settle_s != self.cfg.settle_s
            || cfg.settle_damping_per_s != self.cfg.settle_damping_per_s
            || cfg.unilateral_springs != self.cfg.unilateral_springs;
        if resettle {
            return Self::new(self.spec.clone(), cfg);
        }
        check_config(&cfg)?;
        Ok(Self { cfg, ..self.clone() })
    }

    fn settle(&self) -> Result<SimState, SimError> {
        let mut positions: Vec<Vector3<f64>> = self.spec.nodes.iter().map(|n| Vector3::from(*n)).collect();
        let lowest = positions.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        for p in &mut positions {
            p.z += self.cfg.contact_skin_mm - lowest;
        }
        let mut state = SimState { velocities: vec![Vector3::zeros(); positions.len()], positions, time: 0.0 };
        self.project(&mut state);
        let template_height = height(&state.positions);

        let damped = self.cfg.steps(self.cfg.settle_s * 0.75);
        let free = self.cfg.steps(self.cfg.settle_s) - damped;
        let drive = MotorDrive::default();
        for _ in 0..damped {
            self.advance(&mut state, &drive, self.cfg.settle_damping_per_s, None);
        }
        for _ in 0..free {
            self.advance(&mut state, &drive, 0.0, None);
        }
        self.check_finite(&state)?;

        let h = height(&state.positions);
        if h < 0.5 * template_height {
            return Err(SimError::Unstable(format!(
                "height fell from {template_height:.1} mm to {h:.1} mm while settling"
            )));
        }
        let vmax = state.velocities.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if vmax > 1.0 {
            return Err(SimError::Unstable(format!("still moving at {vmax:.3} mm/s after settling")));
        }
        for v in &mut state.velocities {
            *v = Vector3::zeros();
        }
        state.time = 0.0;
        Ok(state)
    }

    /// One integration step.
    pub fn step(&self, state: &mut SimState, drive: &MotorDrive) -> Result<(), SimError> {
        self.advance(state, drive, 0.0, None);
        self.check_finite(state)
    }

    fn advance(&self, state: &mut SimState, drive: &MotorDrive, extra_damping: f64, noise: Option<&mut ProcessNoise>) {
        let dt = self.cfg.timestep_s;
        let n = state.positions.len();
        let x = &mut state.positions;
        let v = &mut state.velocities;
        let mut force = [Vector3::zeros(); 2 * STRUT_COUNT];

        for i in 0..n {
            force[i].z -= self.mass[i] * self.cfg.gravity_mm_s2;
        }

        for s in &self.springs {
            let d = x[s.b] - x[s.a];
            let len = d.norm();
            if len <= f64::EPSILON {
                continue;
            }
            let dir = d / len;
            let stretch = len - s.rest;
            if self.cfg.unilateral_springs && stretch <= 0.0 {
                continue;
            }
            let rate = (v[s.b] - v[s.a]).dot(&dir);
            let f = dir * (s.k * stretch + s.c * rate);
            force[s.a] += f;
            force[s.b] -= f;
        }

        for (m, w) in self.motors.iter().zip(drive.0) {
            if w == 0.0 {
                continue;
            }
            let axis = (x[m.b] - x[m.a]).normalize();
            let mut u = axis.cross(&Vector3::z());
            let un = u.norm();
            u = if un > 1e-9 { u / un } else { Vector3::x() };
            let vv = axis.cross(&u);
            let (s, c) = (w * state.time).sin_cos();
            let f = (u * c + vv * s) * (m.unbalance * w * w * 0.5);
            force[m.a] += f;
            force[m.b] += f;
        }

        if let Some(noise) = noise {
            if state.time >= noise.onset {
                for f in force.iter_mut().take(n) {
                    f.x += noise.dist.sample(&mut noise.rng);
                    f.y += noise.dist.sample(&mut noise.rng);
                }
            }
        }

        // Strut reactions: the axial force that keeps each strut's length
        // constant to second order, including the centripetal term.
        for st in &self.spec.struts {
            let [a, b] = st.nodes;
            let (wa, wb) = (self.inv_mass[a], self.inv_mass[b]);
            let d = x[b] - x[a];
            let len = d.norm();
            let dir = d / len;
            let vr = v[b] - v[a];
            let along = vr.dot(&dir);
            let perp2 = (vr.norm_squared() - along * along).max(0.0);
            let rel = (force[b] * wb - force[a] * wa).dot(&dir);
            let lambda = (-perp2 / len - rel) / (wa + wb);
            force[b] += dir * lambda;
            force[a] -= dir * lambda;
        }

        let skin = self.cfg.contact_skin_mm;
        let mu = self.cfg.friction_coefficient;
        let mut budget = [0.0; 2 * STRUT_COUNT];
        for i in 0..n {
            if x[i].z < skin {
                let normal = (self.ground_k * (skin - x[i].z) - self.ground_c * v[i].z).max(0.0);
                force[i].z += normal;
                budget[i] = mu * normal * dt;
            }
            v[i] += force[i] * (self.inv_mass[i] * dt);
        }

        // Coulomb friction as accumulated, cone-clamped impulses, alternated
        // with the strut velocity constraint so that sticking feet stay put.
        if budget.iter().any(|&b| b > 0.0) {
            let mut acc = [[0.0f64; 2]; 2 * STRUT_COUNT];
            for _ in 0..FRICTION_ITERATIONS {
                for i in 0..n {
                    if budget[i] <= 0.0 {
                        continue;
                    }
                    let m = self.mass[i];
                    let want = [acc[i][0] - m * v[i].x, acc[i][1] - m * v[i].y];
                    let mag = want[0].hypot(want[1]);
                    let scale = if mag > budget[i] { budget[i] / mag } else { 1.0 };
                    let next = [want[0] * scale, want[1] * scale];
                    v[i].x += (next[0] - acc[i][0]) / m;
                    v[i].y += (next[1] - acc[i][1]) / m;
                    acc[i] = next;
                }
                self.project_velocities(x, v);
            }
        } else {
            self.project_velocities(x, v);
        }

        if extra_damping > 0.0 {
            let keep = (1.0 - extra_damping * dt).max(0.0);
            for vi in v.iter_mut().take(n) {
                *vi *= keep;
            }
        }
        for i in 0..n {
            x[i] += v[i] * dt;
        }
        state.time += dt;
        self.project_positions(&mut state.positions);
    }

    /// Restore every strut length exactly and remove relative velocity along
    /// each strut, conserving momentum.
    fn project(&self, state: &mut SimState) {
        self.project_positions(&mut state.positions);
        self.project_velocities(&state.positions, &mut state.velocities);
    }

    fn project_positions(&self, x: &mut [Vector3<f64>]) {
        for s in &self.spec.struts {
            let [a, b] = s.nodes;
            let (wa, wb) = (self.inv_mass[a], self.inv_mass[b]);
            let d = x[b] - x[a];
            let len = d.norm();
            let corr = d * ((len - s.length_mm) / len / (wa + wb));
            x[a] += corr * wa;
            x[b] -= corr * wb;
        }
    }

    fn project_velocities(&self, x: &[Vector3<f64>], v: &mut [Vector3<f64>]) {
        for s in &self.spec.struts {
            let [a, b] = s.nodes;
            let (wa, wb) = (self.inv_mass[a], self.inv_mass[b]);
            let dir = (x[b] - x[a]).normalize();
            let rate = (v[b] - v[a]).dot(&dir) / (wa + wb);
            v[a] += dir * (rate * wa);
            v[b] -= dir * (rate * wb);
        }
    }

    fn check_finite(&self, state: &SimState) -> Result<(), SimError> {
        for (node, p) in state.positions.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite() && c.abs() <= BLOWUP_MM) {
                return Err(SimError::BlowUp { time: state.time, node, position: [p.x, p.y, p.z] });
            }
        }
        Ok(())
    }

    /// Planar pose of the robot: mass-weighted centroid, and the yaw of the
    /// best rigid fit of the horizontal node layout to the settled layout.
    pub fn pose(&self, state: &SimState) -> PoseSample {
        let c = self.centroid(&state.positions);
        let (mut cross, mut dot) = (0.0, 0.0);
        for ((p, r), m) in state.positions.iter().zip(&self.frame).zip(&self.mass) {
            let q = [p.x - c.x, p.y - c.y];
            cross += m * (r[0] * q[1] - r[1] * q[0]);
            dot += m * (r[0] * q[0] + r[1] * q[1]);
        }
        PoseSample::new(state.time, c.x, c.y, cross.atan2(dot).to_degrees())
    }

    fn body_frame(&self, x: &[Vector3<f64>]) -> Vec<[f64; 2]> {
        let c = self.centroid(x);
        let [a, b] = self.spec.struts[self.spec.motors[0].strut].nodes;
        let m = (x[a] + x[b]) * 0.5 - c;
        let (s, co) = m.y.atan2(m.x).sin_cos();
        x.iter()
            .map(|p| {
                let (dx, dy) = (p.x - c.x, p.y - c.y);
                [co * dx + s * dy, -s * dx + co * dy]
            })
            .collect()
    }

    fn centroid(&self, x: &[Vector3<f64>]) -> Vector3<f64> {
        let total: f64 = self.mass.iter().sum();
        x.iter().zip(&self.mass).map(|(p, m)| p * *m).sum::<Vector3<f64>>() / total
    }

    /// Settled start state for one trial, with the configured position
    /// noise applied.
    pub fn initial_state(&self, rng: &mut ChaCha8Rng) -> SimState {
        let mut state = self.settled.clone();
        if self.cfg.noise_mm > 0.0 {
            let dist = Normal::new(0.0, self.cfg.noise_mm).expect("validated noise");
            for p in &mut state.positions {
                for c in p.iter_mut() {
                    *c += dist.sample(rng);
                }
            }
            self.project(&mut state);
        }
        state
    }

    /// Run one trial of `cfg.duration_s` seconds and return the full state
    /// history at the given sampling interval (always including both ends).
    pub fn simulate(&self, p: &ParameterSet, sample_every_s: Option<f64>) -> Result<Vec<(SimState, PoseSample)>, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut state = self.initial_state(&mut rng);
        let mut noise = ProcessNoise::new(&self.cfg, &mut rng);
        let drive = MotorDrive::from_params(p, &self.cfg);
        let steps = self.cfg.steps(self.cfg.duration_s);
        let every = sample_every_s.map(|s| self.cfg.steps(s).max(1)).unwrap_or(usize::MAX);
        let mut out = vec![(state.clone(), self.pose(&state))];
        for k in 1..=steps {
            self.advance(&mut state, &drive, 0.0, noise.as_mut());
            if k % 64 == 0 || k == steps {
                self.check_finite(&state)?;
            }
            if k % every == 0 || k == steps {
                out.push((state.clone(), self.pose(&state)));
            }
        }
        if out.last().map(|(s, _)| s.time) != Some(state.time) {
            out.push((state.clone(), self.pose(&state)));
        }
        Ok(out)
    }

    /// Behavior of one trial: first and last pose, in the initial frame.
    pub fn evaluate(&self, p: &ParameterSet) -> Result<Behavior, SimError> {
        self.trial(p, self.cfg.duration_s, self.cfg.seed)
    }

    /// [`Simulator::evaluate`] with the duration and noise seed given
    /// explicitly instead of taken from the config.
    pub fn trial(&self, p: &ParameterSet, duration_s: f64, seed: u64) -> Result<Behavior, SimError> {
        if !(duration_s.is_finite() && duration_s > 0.0) {
            return Err(SimError::InvalidConfig(format!("trial duration {duration_s} s")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = self.initial_state(&mut rng);
        let mut noise = ProcessNoise::new(&self.cfg, &mut rng);
        let drive = MotorDrive::from_params(p, &self.cfg);
        let start = self.pose(&state);
        let steps = self.cfg.steps(duration_s).max(1);
        for k in 1..=steps {
            self.advance(&mut state, &drive, 0.0, noise.as_mut());
            if k % 64 == 0 {
                self.check_finite(&state)?;
            }
        }
        self.check_finite(&state)?;
        let end = self.pose(&state);
        Ok(to_local_behavior(&start, &end).expect("trial duration is positive"))
    }

    /// Total mechanical energy in g·mm²/s²: kinetic, gravitational, spring
    /// and ground-penalty terms.
    pub fn energy(&self, state: &SimState) -> f64 {
        let mut e = 0.0;
        for i in 0..state.positions.len() {
            e += 0.5 * self.mass[i] * state.velocities[i].norm_squared();
            e += self.mass[i] * self.cfg.gravity_mm_s2 * state.positions[i].z;
            let pen = self.cfg.contact_skin_mm - state.positions[i].z;
            if pen > 0.0 {
                e += 0.5 * self.ground_k * pen * pen;
            }
        }
        for s in &self.springs {
            let stretch = (state.positions[s.b] - state.positions[s.a]).norm() - s.rest;
            if !(self.cfg.unilateral_springs && stretch <= 0.0) {
                e += 0.5 * s.k * stretch * stretch;
            }
        }
        e
    }

    /// Largest relative deviation of any strut from its rest length.
    pub fn max_strut_drift(&self, state: &SimState) -> f64 {
        self.spec
            .struts
            .iter()
            .map(|s| ((state.positions[s.nodes[1]] - state.positions[s.nodes[0]]).norm() - s.length_mm).abs() / s.length_mm)
            .fold(0.0, f64::max)
    }
}

struct ProcessNoise {
    rng: ChaCha8Rng,
    dist: Normal<f64>,
    onset: f64,
}

impl ProcessNoise {
    fn new(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Option<Self> {
        (cfg.process_noise_n > 0.0).then(|| Self {
            rng: ChaCha8Rng::from_rng(rng),
            dist: Normal::new(0.0, cfg.process_noise_n * NEWTON).expect("validated noise"),
            onset: cfg.process_noise_onset_s,
        })
    }
}

fn height(positions: &[Vector3<f64>]) -> f64 {
    let (lo, hi) = positions.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)));
    hi - lo
}

fn check_config(cfg: &SimConfig) -> Result<(), SimError> {
    let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
    if !(cfg.timestep_s.is_finite() && cfg.timestep_s > 0.0) {
        return bad("timestep_s must be positive");
    }
    if !(cfg.duration_s.is_finite() && cfg.duration_s > 0.0) {
        return bad("duration_s must be positive");
    }
    if !(cfg.noise_mm.is_finite() && cfg.noise_mm >= 0.0) {
        return bad("noise_mm must be non-negative");
    }
    if !(cfg.process_noise_n.is_finite() && cfg.process_noise_n >= 0.0) {
        return bad("process_noise_n must be non-negative");
    }
    if !(cfg.friction_coefficient >= 0.0 && cfg.ground_stiffness_n_per_mm > 0.0 && cfg.ground_damping_n_s_per_mm >= 0.0) {
        return bad("contact constants must be non-negative (ground stiffness positive)");
    }
    if !(cfg.settle_s >= 0.0 && cfg.settle_damping_per_s >= 0.0) {
        return bad("settling parameters must be non-negative");
    }
    Ok(())
}

/// Build and settle a structure; the settled state is what every trial
/// starts from.
pub fn build_structure(spec: StructureSpec, cfg: SimConfig) -> Result<(Simulator, SimState), SimError> {
    let sim = Simulator::new(spec, cfg)?;
    let state = sim.settled().clone();
    Ok((sim, state))
}

/// One-shot evaluation: builds the simulator, settles, and runs one trial.
/// Prefer [`Simulator::evaluate`] when evaluating many parameter sets.
pub fn evaluate(p: &ParameterSet, spec: StructureSpec, cfg: SimConfig) -> Result<Behavior, SimError> {
    Simulator::new(spec, cfg)?.evaluate(p)
}
