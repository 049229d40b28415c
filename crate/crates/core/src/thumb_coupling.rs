//! Two-link thumb coupling between the exoskeleton and the passive thumb.
//!
//! The exoskeleton frame `{E}` is free to move relative to the palm-base
//! frame `{B}` subject to two distance constraints: each rigid link of length
//! `L_i` joins an exoskeleton-fixed point `r̄_i` to a passive-thumb attachment
//! point `r_i(q_p)`,
//!
//! ```text
//! g_i = ‖R·r̄_i + p − r_i(q_p)‖ − L_i = 0,   i ∈ {d, m}
//! ```
//!
//! With six pose coordinates and two independent constraints the set of
//! admissible poses for a fixed `q_p` is generically a 4-D manifold. This
//! module evaluates the constraints and their Jacobian, projects poses onto
//! the manifold, inverts the coupling for `q_p`, reports the local kernel
//! dimension and random-walks the manifold.
//!
//! Pose perturbations are body-frame twists `[v; ω]` applied by
//! [`Pose::retract`].

use nalgebra::{DMatrix, Matrix2, RowVector6, SMatrix, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::hand_model::{
    attachment_jacobians, attachment_points_unchecked, check_limits, ChainError, CouplingFunction,
    KinematicChain, PassiveThumbConfig, ThumbLayout, THETA2_JOINT, THETA4_JOINT,
};
use crate::keyvalue::{KeyValueError, KeyValues};
use crate::pose::{Pose, Twist};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_SV_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 50;

/// Difference vectors shorter than this make a constraint gradient undefined.
const SINGULAR_DISTANCE: f64 = 1e-12;
/// Largest joint update per Newton iteration in [`ThumbModel::solve_passive`].
const MAX_JOINT_STEP: f64 = 0.5;

pub type ConstraintJacobian = SMatrix<f64, 2, 6>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CouplingError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("invalid coupling geometry: {0}")]
    Geometry(String),
    #[error("singular configuration: {0} attachment points coincide")]
    Singular(&'static str),
    #[error("no convergence after {iterations} iterations (residual {residual:e} m)")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        /// The passive solve ended pinned against a joint limit.
        at_limit: bool,
    },
    #[error("passive Jacobian is singular at θ₂={theta2}, θ₄={theta4}")]
    SingularPassive { theta2: f64, theta4: f64 },
    #[error("{0}")]
    InvalidInput(String),
}

/// Exoskeleton-side attachment points and link lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingGeometry {
    pub r_bar_d: Vector3<f64>,
    pub r_bar_m: Vector3<f64>,
    pub l_d: f64,
    pub l_m: f64,
}

impl CouplingGeometry {
    pub fn new(
        r_bar_d: Vector3<f64>,
        r_bar_m: Vector3<f64>,
        l_d: f64,
        l_m: f64,
    ) -> Result<Self, CouplingError> {
        if !(l_d.is_finite() && l_d > 0.0 && l_m.is_finite() && l_m > 0.0) {
            return Err(CouplingError::Geometry(format!(
                "link lengths must be positive (L_d={l_d}, L_m={l_m})"
            )));
        }
        if r_bar_d.iter().chain(r_bar_m.iter()).any(|v| !v.is_finite()) {
            return Err(CouplingError::Geometry("attachment points must be finite".into()));
        }
        if r_bar_d == r_bar_m {
            return Err(CouplingError::Geometry(
                "distal and metacarpal attachment points coincide".into(),
            ));
        }
        Ok(Self {
            r_bar_d,
            r_bar_m,
            l_d,
            l_m,
        })
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self, GeometryFileError> {
        Ok(Self::new(
            kv.vec3("r_bar_d")?,
            kv.vec3("r_bar_m")?,
            kv.f64("L_d")?,
            kv.f64("L_m")?,
        )?)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.insert("r_bar_d", self.r_bar_d.iter());
        kv.insert("r_bar_m", self.r_bar_m.iter());
        kv.insert("L_d", [self.l_d]);
        kv.insert("L_m", [self.l_m]);
        kv
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GeometryFileError {
    #[error(transparent)]
    Format(#[from] KeyValueError),
    #[error(transparent)]
    Invalid(#[from] CouplingError),
    #[error("coupling table: {0}")]
    Coupling(#[from] crate::hand_model::CouplingError),
}

/// Reads the optional `coupling = θ2 θ3 θ2 θ3 ...` entry of a geometry block.
/// Without it the coupling is the identity over the θ₂ joint limits.
pub fn coupling_from_key_values(
    kv: &KeyValues,
    chain: &KinematicChain,
) -> Result<CouplingFunction, GeometryFileError> {
    if kv.get("coupling").is_none() {
        let (lo, hi) = chain.joint_limits(THETA2_JOINT).map_err(CouplingError::from)?;
        if lo == hi {
            return Ok(CouplingFunction::new(vec![(lo, lo), (lo + 1.0, lo + 1.0)])?);
        }
        return Ok(CouplingFunction::identity(lo, hi));
    }
    let values = kv.f64s("coupling")?;
    if values.len() % 2 != 0 {
        return Err(KeyValueError::BadValue {
            key: "coupling".into(),
            message: "expected θ₂ θ₃ pairs".into(),
        }
        .into());
    }
    Ok(CouplingFunction::new(
        values.chunks(2).map(|c| (c[0], c[1])).collect(),
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintResidual {
    pub g_d: f64,
    pub g_m: f64,
}

impl ConstraintResidual {
    pub fn max_abs(&self) -> f64 {
        self.g_d.abs().max(self.g_m.abs())
    }

    fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.g_d, self.g_m)
    }
}

/// Exoskeleton attachment point expressed in the base frame: `R·r̄ + p`.
pub fn attachment_in_base(pose: &Pose, r_bar: &Vector3<f64>) -> Vector3<f64> {
    pose.transform_point(r_bar)
}

/// Residuals for explicit passive-hand attachment points `(r_d, r_m)`.
pub fn residual_at_points(
    pose: &Pose,
    hand: &(Vector3<f64>, Vector3<f64>),
    geom: &CouplingGeometry,
) -> ConstraintResidual {
    ConstraintResidual {
        g_d: (attachment_in_base(pose, &geom.r_bar_d) - hand.0).norm() - geom.l_d,
        g_m: (attachment_in_base(pose, &geom.r_bar_m) - hand.1).norm() - geom.l_m,
    }
}

/// Constraint Jacobian for explicit attachment points; rows `d`, `m`,
/// columns body twist `[v; ω]`.
pub fn jacobian_at_points(
    pose: &Pose,
    hand: &(Vector3<f64>, Vector3<f64>),
    geom: &CouplingGeometry,
) -> Result<ConstraintJacobian, CouplingError> {
    let row = |r_bar: &Vector3<f64>, target: &Vector3<f64>, which| {
        let diff = attachment_in_base(pose, r_bar) - target;
        let len = diff.norm();
        if !(len > SINGULAR_DISTANCE) {
            return Err(CouplingError::Singular(which));
        }
        let u_body = pose.rotation().inverse() * (diff / len);
        let w = r_bar.cross(&u_body);
        Ok(RowVector6::new(u_body.x, u_body.y, u_body.z, w.x, w.y, w.z))
    };
    let rd = row(&geom.r_bar_d, &hand.0, "distal")?;
    let rm = row(&geom.r_bar_m, &hand.1, "metacarpal")?;
    Ok(ConstraintJacobian::from_rows(&[rd, rm]))
}

/// Number of right-singular directions of `rows` (a stack of 1×6
/// constraint gradients) whose singular value does not exceed
/// `sv_tol · σ_max`. An empty stack has a 6-D kernel.
pub fn kernel_dimension(rows: &[RowVector6<f64>], sv_tol: f64) -> usize {
    if rows.is_empty() {
        return 6;
    }
    let m = DMatrix::from_fn(rows.len(), 6, |i, j| rows[i][j]);
    let sv = m.singular_values();
    let max = sv.max();
    if !(max > 0.0) {
        return 6;
    }
    6 - sv.iter().filter(|&&s| s > sv_tol * max).count()
}

fn pseudo_inverse(j: &ConstraintJacobian) -> SMatrix<f64, 6, 2> {
    let svd = j.svd(true, true);
    let cutoff = 1e-12 * svd.singular_values.max();
    svd.pseudo_inverse(cutoff)
        .expect("both singular vector sets were computed")
}

/// Result of a manifold projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pose: Pose,
    pub iterations: usize,
}

/// Result of inverting the coupling for the passive configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassiveSolution {
    pub config: PassiveThumbConfig,
    pub iterations: usize,
    /// θ₂ or θ₄ sits exactly on one of its joint limits.
    pub at_limit: bool,
}

/// Poses gathered by a self-motion walk that stopped early.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("self-motion walk stopped after {} poses: {source}", poses.len())]
pub struct WalkInterrupted {
    pub poses: Vec<Pose>,
    pub source: CouplingError,
}

/// Passive hand, coupling table and link geometry bundled for repeated queries.
#[derive(Debug, Clone)]
pub struct ThumbModel {
    chain: KinematicChain,
    coupling: CouplingFunction,
    geometry: CouplingGeometry,
    layout: ThumbLayout,
}

impl ThumbModel {
    pub fn new(
        chain: KinematicChain,
        coupling: CouplingFunction,
        geometry: CouplingGeometry,
    ) -> Result<Self, CouplingError> {
        let layout = ThumbLayout::of(&chain)?;
        Ok(Self {
            chain,
            coupling,
            geometry,
            layout,
        })
    }

    pub fn chain(&self) -> &KinematicChain {
        &self.chain
    }

    pub fn coupling(&self) -> &CouplingFunction {
        &self.coupling
    }

    pub fn geometry(&self) -> &CouplingGeometry {
        &self.geometry
    }

    /// Passive attachment points `(r_d, r_m)` for `q`.
    pub fn hand_points(
        &self,
        q: &PassiveThumbConfig,
    ) -> Result<(Vector3<f64>, Vector3<f64>), CouplingError> {
        check_limits(&self.chain, q)?;
        Ok(attachment_points_unchecked(&self.chain, &self.layout, &self.coupling, q))
    }

    pub fn constraint_residual(
        &self,
        pose: &Pose,
        q: &PassiveThumbConfig,
    ) -> Result<ConstraintResidual, CouplingError> {
        Ok(residual_at_points(pose, &self.hand_points(q)?, &self.geometry))
    }

    pub fn constraint_jacobian(
        &self,
        pose: &Pose,
        q: &PassiveThumbConfig,
    ) -> Result<ConstraintJacobian, CouplingError> {
        jacobian_at_points(pose, &self.hand_points(q)?, &self.geometry)
    }

    /// Gauss–Newton projection of `guess` onto the constraint manifold for a
    /// fixed `q`, taking the minimum-norm twist step at every iteration.
    pub fn project_to_manifold(
        &self,
        guess: &Pose,
        q: &PassiveThumbConfig,
        tol: f64,
        max_iter: usize,
    ) -> Result<Projection, CouplingError> {
        if !(tol > 0.0) {
            return Err(CouplingError::InvalidInput(format!("tolerance must be positive, got {tol}")));
        }
        if !guess.is_finite() {
            return Err(CouplingError::InvalidInput("guess pose is not finite".into()));
        }
        let hand = self.hand_points(q)?;
        self.project_with_points(guess, &hand, tol, max_iter)
    }

    fn project_with_points(
        &self,
        guess: &Pose,
        hand: &(Vector3<f64>, Vector3<f64>),
        tol: f64,
        max_iter: usize,
    ) -> Result<Projection, CouplingError> {
        let mut pose = *guess;
        let mut residual = residual_at_points(&pose, hand, &self.geometry);
        for iterations in 0..=max_iter {
            if residual.max_abs() <= tol {
                return Ok(Projection { pose, iterations });
            }
            if iterations == max_iter || !residual.max_abs().is_finite() {
                break;
            }
            let jac = jacobian_at_points(&pose, hand, &self.geometry)?;
            let step: Twist = -(pseudo_inverse(&jac) * residual.as_vector());
            pose = pose.retract(&step);
            residual = residual_at_points(&pose, hand, &self.geometry);
        }
        Err(CouplingError::NoConvergence {
            iterations: max_iter,
            residual: residual.max_abs(),
            at_limit: false,
        })
    }

    /// Newton solve of the two constraints for `q_p = [θ₂, θ₄]` at a fixed
    /// exoskeleton pose, starting from `q_init` and clamping to joint limits.
    pub fn solve_passive(
        &self,
        pose: &Pose,
        q_init: &PassiveThumbConfig,
        tol: f64,
        max_iter: usize,
    ) -> Result<PassiveSolution, CouplingError> {
        check_limits(&self.chain, q_init)?;
        let (lo2, hi2) = self.chain.joint_limits(THETA2_JOINT)?;
        let (lo4, hi4) = self.chain.joint_limits(THETA4_JOINT)?;
        let pinned = |q: &PassiveThumbConfig| {
            q.theta2 == lo2 || q.theta2 == hi2 || q.theta4 == lo4 || q.theta4 == hi4
        };
        let e_d = attachment_in_base(pose, &self.geometry.r_bar_d);
        let e_m = attachment_in_base(pose, &self.geometry.r_bar_m);

        let mut q = *q_init;
        let mut residual = f64::INFINITY;
        for iterations in 0..=max_iter {
            let hand = attachment_points_unchecked(&self.chain, &self.layout, &self.coupling, &q);
            let g = residual_at_points(pose, &hand, &self.geometry);
            residual = g.max_abs();
            if residual <= tol {
                return Ok(PassiveSolution {
                    config: q,
                    iterations,
                    at_limit: pinned(&q),
                });
            }
            if iterations == max_iter || !residual.is_finite() {
                break;
            }
            let (jd, jm) =
                attachment_jacobians(&self.chain, &self.layout, &self.coupling, &q);
            let mut a = Matrix2::zeros();
            for (row, (e, r, j)) in [(e_d, hand.0, jd), (e_m, hand.1, jm)].into_iter().enumerate() {
                let diff = e - r;
                let len = diff.norm();
                if !(len > SINGULAR_DISTANCE) {
                    return Err(CouplingError::Singular(if row == 0 { "distal" } else { "metacarpal" }));
                }
                // g = ‖e − r(q)‖ − L  ⇒  ∂g/∂q = −uᵀ ∂r/∂q
                a.set_row(row, &(-(diff / len).transpose() * j));
            }
            let delta = a.lu().solve(&(-g.as_vector())).ok_or(CouplingError::SingularPassive {
                theta2: q.theta2,
                theta4: q.theta4,
            })?;
            let scale = (MAX_JOINT_STEP / delta.amax()).min(1.0);
            let next = PassiveThumbConfig::new(
                (q.theta2 + scale * delta[0]).clamp(lo2, hi2),
                (q.theta4 + scale * delta[1]).clamp(lo4, hi4),
            );
            if next == q {
                break;
            }
            q = next;
        }
        Err(CouplingError::NoConvergence {
            iterations: max_iter,
            residual,
            at_limit: pinned(&q),
        })
    }

    /// Local self-motion dimension: `6 − rank(J)` with singular values
    /// counted above `sv_tol · σ_max`.
    pub fn nullspace_dimension(
        &self,
        pose: &Pose,
        q: &PassiveThumbConfig,
        sv_tol: f64,
    ) -> Result<usize, CouplingError> {
        let jac = self.constraint_jacobian(pose, q)?;
        Ok(kernel_dimension(&[jac.row(0).into_owned(), jac.row(1).into_owned()], sv_tol))
    }

    /// Random walk on the self-motion manifold of `q`: at each step a random
    /// unit direction in the Jacobian kernel, scaled by `step`, followed by a
    /// projection back onto the manifold. `pose0` itself is not included.
    pub fn sample_self_motion(
        &self,
        pose0: &Pose,
        q: &PassiveThumbConfig,
        n: usize,
        step: f64,
        seed: u64,
    ) -> Result<Vec<Pose>, WalkInterrupted> {
        let fail = |poses: Vec<Pose>, source| WalkInterrupted { poses, source };
        if !(step > 0.0 && step.is_finite()) {
            return Err(fail(
                Vec::new(),
                CouplingError::InvalidInput(format!("step must be positive, got {step}")),
            ));
        }
        let hand = self.hand_points(q).map_err(|e| fail(Vec::new(), e))?;
        let start = residual_at_points(pose0, &hand, &self.geometry).max_abs();
        if !(start <= 1e-8) {
            return Err(fail(
                Vec::new(),
                CouplingError::InvalidInput(format!(
                    "starting pose is not on the manifold (residual {start:e} m)"
                )),
            ));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut poses = Vec::with_capacity(n);
        let mut current = *pose0;
        while poses.len() < n {
            let jac = match jacobian_at_points(&current, &hand, &self.geometry) {
                Ok(j) => j,
                Err(e) => return Err(fail(poses, e)),
            };
            let projector = SMatrix::<f64, 6, 6>::identity() - pseudo_inverse(&jac) * jac;
            let z = Twist::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let tangent = projector * z;
            let norm = tangent.norm();
            if !(norm > 1e-12) {
                continue;
            }
            let candidate = current.retract(&(tangent * (step / norm)));
            match self.project_with_points(&candidate, &hand, DEFAULT_TOL, DEFAULT_MAX_ITER) {
                Ok(p) => {
                    current = p.pose;
                    poses.push(current);
                }
                Err(e) => return Err(fail(poses, e)),
            }
        }
        Ok(poses)
    }
}
