//! Landmark-based 2D/3D registration.
//!
//! A [`RegistrationProblem`] pairs world landmarks with registration-frame
//! observations. [`estimate_pose`] minimizes the summed squared reprojection
//! residual over the 6 pose parameters with a box-projected first-order
//! ([`Method::Adam`]) or quasi-Newton ([`Method::Lbfgs`]) method.

mod adam;
mod lbfgs;

use nalgebra::{Point2, Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{
    center_detector_pixel, project_point_jacobian, rodrigues, rodrigues_derivatives, AxisMap,
    CameraIntrinsics, LandmarkSet2D, LandmarkSet3D, Pose, Projector,
};

pub use adam::Adam;
pub use lbfgs::Lbfgs;

/// Pose parameters as a flat vector `(r_x, r_y, r_z, t_x, t_y, t_z)`.
pub type Params = [f64; 6];

/// Box bounds applied to the pose after every optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    /// Symmetric bound on each rotation component (rad).
    pub rotation: f64,
    /// Symmetric bound on each translation component (mm).
    pub translation: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            rotation: 2.0 * std::f64::consts::PI,
            translation: 500.0,
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        if self.rotation > 0.0 && self.translation > 0.0 {
            Ok(())
        } else {
            Err(invalid(format!("bounds must be positive, got {self:?}")))
        }
    }

    pub fn contains(&self, p: &Params) -> bool {
        p[..3].iter().all(|v| v.abs() <= self.rotation)
            && p[3..].iter().all(|v| v.abs() <= self.translation)
    }

    pub fn project(&self, p: &mut Params) {
        for v in &mut p[..3] {
            *v = v.clamp(-self.rotation, self.rotation);
        }
        for v in &mut p[3..] {
            *v = v.clamp(-self.translation, self.translation);
        }
    }
}

/// Corresponding 3D world landmarks and 2D registration-frame observations.
#[derive(Clone, Debug)]
pub struct RegistrationProblem {
    landmarks: LandmarkSet3D,
    observations: LandmarkSet2D,
    projector: Projector,
    bounds: Bounds,
}

impl RegistrationProblem {
    pub fn new(
        landmarks: LandmarkSet3D,
        observations: LandmarkSet2D,
        intrinsics: CameraIntrinsics,
        bounds: Bounds,
    ) -> Result<Self> {
        if landmarks.len() != observations.len() {
            return Err(invalid(format!(
                "landmark count mismatch: {} 3D vs {} 2D",
                landmarks.len(),
                observations.len()
            )));
        }
        landmarks.check_registrable(1e-9)?;
        intrinsics.validate()?;
        bounds.validate()?;
        Ok(Self {
            landmarks,
            observations,
            projector: Projector::new(intrinsics),
            bounds,
        })
    }

    pub fn with_axes(mut self, axes: AxisMap) -> Self {
        self.projector.axes = axes;
        self
    }

    /// Rotate about `pivot` (world mm) instead of the world origin.
    pub fn with_pivot(mut self, pivot: Point3<f64>) -> Result<Self> {
        self.projector.pivot = pivot;
        self.projector.validate()?;
        Ok(self)
    }

    /// Uses the full projection model of `projector`.
    pub fn with_projector(mut self, projector: Projector) -> Result<Self> {
        projector.validate()?;
        self.projector = projector;
        Ok(self)
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    pub fn landmarks(&self) -> &LandmarkSet3D {
        &self.landmarks
    }

    pub fn observations(&self) -> &LandmarkSet2D {
        &self.observations
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.projector.intrinsics
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn axes(&self) -> &AxisMap {
        &self.projector.axes
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    /// Registration-frame projection of every landmark under `pose`.
    pub fn project(&self, pose: &Pose) -> Result<Vec<Point2<f64>>> {
        let rot = rodrigues(&pose.rotation)?;
        let proj = &self.projector;
        Ok(self
            .landmarks
            .points()
            .iter()
            .map(|p| proj.image_point(&proj.to_camera(&rot, &pose.translation, p)))
            .collect())
    }

    /// Loss and its gradient with respect to `(r, t)`.
    pub fn loss_and_gradient(&self, pose: &Pose) -> Result<(f64, Params)> {
        let rot = rodrigues(&pose.rotation)?;
        let d_rot = rodrigues_derivatives(&pose.rotation, &rot);
        let proj = &self.projector;
        let axes = proj.axes.matrix();
        let mut loss = 0.0;
        let mut grad_r = Vector3::zeros();
        let mut grad_t = Vector3::zeros();
        for (p, obs) in self.landmarks.points().iter().zip(self.observations.points()) {
            let arm = p - proj.pivot;
            let cam = proj.to_camera(&rot, &pose.translation, p);
            let (uv, jac) = project_point_jacobian(&proj.intrinsics, &cam);
            let q = center_detector_pixel(&proj.intrinsics, &uv);
            let e: Vector2<f64> = q - obs;
            loss += e.norm_squared();
            // dL/dq = 2e, dq/duv = diag(1, -1)
            let de = 2.0 * Vector2::new(e.x, -e.y);
            let d_cam = jac.transpose() * de;
            let d_world = axes.transpose() * d_cam;
            grad_t += d_world;
            for (i, di) in d_rot.iter().enumerate() {
                grad_r[i] += d_world.dot(&(di * arm));
            }
        }
        Ok((
            loss,
            [grad_r.x, grad_r.y, grad_r.z, grad_t.x, grad_t.y, grad_t.z],
        ))
    }
}

/// Sum of squared registration-frame residuals (px^2).
pub fn reprojection_loss(pose: &Pose, prob: &RegistrationProblem) -> Result<f64> {
    let projected = prob.project(pose)?;
    Ok(projected
        .iter()
        .zip(prob.observations.points())
        .map(|(q, l)| (q - l).norm_squared())
        .sum())
}

/// Gradient of [`reprojection_loss`] with respect to `(r_x, r_y, r_z, t_x, t_y, t_z)`.
pub fn loss_gradient(pose: &Pose, prob: &RegistrationProblem) -> Result<Params> {
    prob.loss_and_gradient(pose).map(|(_, g)| g)
}

/// Root-mean-square reprojection residual per landmark (px).
pub fn reprojection_rmse(pose: &Pose, prob: &RegistrationProblem) -> Result<f64> {
    Ok((reprojection_loss(pose, prob)? / prob.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Adam,
    Lbfgs,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Method::Adam),
            "lbfgs" => Ok(Method::Lbfgs),
            other => Err(invalid(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub method: Method,
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once `|loss_k - loss_{k-1}| < tolerance`.
    pub tolerance: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Number of curvature pairs kept by L-BFGS.
    pub history: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl OptimizerConfig {
    /// Adam, learning rate 1e-3, 100 iterations.
    pub fn paper() -> Self {
        Self {
            method: Method::Adam,
            learning_rate: 1e-3,
            max_iters: 100,
            tolerance: 1e-10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            history: 10,
        }
    }

    /// Adam, learning rate 1e-2, 2000 iterations.
    pub fn converge() -> Self {
        Self {
            learning_rate: 1e-2,
            max_iters: 2000,
            tolerance: 1e-10,
            ..Self::paper()
        }
    }

    /// L-BFGS with unit initial step and a backtracking line search.
    pub fn lbfgs() -> Self {
        Self {
            method: Method::Lbfgs,
            learning_rate: 1.0,
            max_iters: 500,
            tolerance: 1e-14,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.max_iters < 1 {
            return Err(invalid("max_iters must be >= 1"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(invalid(format!(
                "tolerance must be >= 0, got {}",
                self.tolerance
            )));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(invalid("Adam epsilon must be >= 0"));
        }
        if self.method == Method::Lbfgs && self.history < 1 {
            return Err(invalid("L-BFGS history must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationResult {
    /// Lowest-loss iterate seen, including the starting pose.
    pub pose: Pose,
    /// Loss at [`RegistrationResult::pose`] (px^2).
    pub final_loss: f64,
    pub iterations_run: usize,
    pub converged: bool,
    /// Loss after each iteration.
    pub trace: Vec<f64>,
}

/// One optimizer update. Implementations move `params` in place and keep
/// whatever state they need between calls.
pub(crate) trait Step {
    /// `loss`/`grad` are evaluated at `params`; returns the loss and gradient
    /// at the updated parameters.
    fn step(
        &mut self,
        prob: &RegistrationProblem,
        params: &mut Params,
        loss: f64,
        grad: &Params,
    ) -> Result<(f64, Params)>;
}

pub(crate) fn evaluate(prob: &RegistrationProblem, params: &Params) -> Result<(f64, Params)> {
    prob.loss_and_gradient(&Pose::from_array(*params))
}

/// Minimizes [`reprojection_loss`] starting from `initial`.
pub fn estimate_pose(
    prob: &RegistrationProblem,
    cfg: &OptimizerConfig,
    initial: &Pose,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    let mut params = initial.to_array();
    if !initial.is_finite() || !prob.bounds.contains(&params) {
        return Err(invalid("initial pose must be finite and within bounds"));
    }
    let mut stepper: Box<dyn Step> = match cfg.method {
        Method::Adam => Box::new(Adam::new(cfg)),
        Method::Lbfgs => Box::new(Lbfgs::new(cfg)),
    };

    let (mut loss, mut grad) = evaluate(prob, &params)?;
    if !loss.is_finite() {
        return Err(Error::Diverged { iteration: 0 });
    }
    let mut best = (params, loss);
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;

    for iteration in 1..=cfg.max_iters {
        let (next_loss, next_grad) = stepper.step(prob, &mut params, loss, &grad)?;
        if !next_loss.is_finite() || next_grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iteration });
        }
        trace.push(next_loss);
        if next_loss < best.1 {
            best = (params, next_loss);
        }
        let change = (loss - next_loss).abs();
        loss = next_loss;
        grad = next_grad;
        if change < cfg.tolerance {
            converged = true;
            break;
        }
    }

    Ok(RegistrationResult {
        pose: Pose::from_array(best.0),
        final_loss: best.1,
        iterations_run: trace.len(),
        converged,
        trace,
    })
}

/// Root-mean-square difference over the raw 6-vector `(r, t)`.
///
/// Radians and millimetres are mixed, so the value is unitless.
pub fn pose_rmse(a: &Pose, b: &Pose) -> f64 {
    let (a, b) = (a.to_array(), b.to_array());
    let sq: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    (sq / 6.0).sqrt()
}

/// `seg + weight * pose`
pub fn composite_loss(seg: f64, pose: f64, weight: f64) -> Result<f64> {
    if !(weight >= 0.0) {
        return Err(invalid(format!("pose loss weight must be >= 0, got {weight}")));
    }
    Ok(seg + weight * pose)
}
