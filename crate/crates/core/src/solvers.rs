//! Classical alternating-projection solvers: error reduction (ER), hybrid
//! input-output (HIO), the accelerated ER variant (AER) and a literal
//! Douglas–Rachford style evaluation of the reflective HIO form.
//!
//! All run functions record one residual `‖y − |Ax|‖²` per iteration, taken on
//! the iterate the loop hands to the next iteration (for AER acceleration
//! iterations, on the space-projected point before extrapolation).

use std::fmt;

use num_complex::Complex64;

use crate::error::{check_dim, invalid, Error, Result};
use crate::fourier::{plan, residual_of_spectrum, residual_of_values};
use crate::grid::{ImageGrid, MagnitudeMeasurements};
use crate::projections::{
    impose_magnitudes, project_magnitude, project_space_in_place, project_space_with, reflect_with,
    ProjectionKind, SpaceConstraint,
};

/// Acceleration is skipped when successive centers are closer than this.
pub const DEGENERATE_DIRECTION: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverParams {
    /// HIO feedback `β ∈ (0, 1]`.
    pub beta: f64,
    /// AER step scale `ζ > 0`.
    pub zeta: f64,
    /// AER fires on iterations `n ≡ −1 (mod accel_period)`.
    pub accel_period: usize,
    pub max_iters: usize,
    /// Stop early once a recorded residual drops below this value.
    pub tolerance: Option<f64>,
    pub constraint: SpaceConstraint,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            beta: 0.9,
            zeta: 0.6,
            accel_period: 10,
            max_iters: 200,
            tolerance: None,
            constraint: SpaceConstraint::SupportNonNegative,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(invalid("beta", format!("{} not in (0, 1]", self.beta)));
        }
        if !(self.zeta > 0.0) || !self.zeta.is_finite() {
            return Err(invalid("zeta", format!("{} is not > 0", self.zeta)));
        }
        if self.accel_period < 2 {
            return Err(invalid("accel_period", "must be at least 2"));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be positive"));
        }
        Ok(())
    }
}

/// State carried between AER acceleration points.
#[derive(Clone, Debug, Default)]
pub struct AccelState {
    /// Center `c` from the previous acceleration opportunity.
    pub prev_center: Option<Vec<f64>>,
    /// Last unit direction `a`.
    pub direction: Option<Vec<f64>>,
    /// Last radius `r = ½‖x′ − x″‖`.
    pub radius: f64,
    /// Number of extrapolations actually applied.
    pub applied: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverTrace {
    pub residuals: Vec<f64>,
    pub iterations_run: usize,
    pub final_image: ImageGrid,
}

impl SolverTrace {
    pub fn last_residual(&self) -> Option<f64> {
        self.residuals.last().copied()
    }

    /// `iter,residual` lines, 1-based.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,residual\n");
        for (i, r) in self.residuals.iter().enumerate() {
            out.push_str(&format!("{},{:e}\n", i + 1, r));
        }
        out
    }
}

/// A run that hit a non-finite iterate; `trace` holds everything up to it.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverAbort {
    pub iteration: usize,
    pub trace: SolverTrace,
}

impl fmt::Display for SolverAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "non-finite iterate at iteration {}", self.iteration)
    }
}

impl std::error::Error for SolverAbort {}

impl From<SolverAbort> for Error {
    fn from(a: SolverAbort) -> Self {
        Error::Diverged {
            iteration: a.iteration,
        }
    }
}

pub type RunResult = std::result::Result<SolverTrace, SolverAbort>;

/// One ER iteration `P_S P_F x`.
pub fn er_step(x: &ImageGrid, y: &MagnitudeMeasurements) -> Result<ImageGrid> {
    er_step_with(x, y, SpaceConstraint::SupportNonNegative)
}

pub fn er_step_with(
    x: &ImageGrid,
    y: &MagnitudeMeasurements,
    constraint: SpaceConstraint,
) -> Result<ImageGrid> {
    check_dim("padded dimension", x.padded_dim(), y.padded_dim())?;
    let mut ws = Workspace::new(y.padded_dim());
    let mut values = x.values().to_vec();
    ws.magnitude_projection(&values, y);
    values.copy_from_slice(&ws.projected);
    project_space_in_place(&mut values, x.support(), constraint);
    Ok(x.with_values(values))
}

/// One HIO iteration: `x′ = P_F x`, keep `x′` where the space constraints
/// hold and use `x − βx′` on the violation set.
pub fn hio_step(x: &ImageGrid, y: &MagnitudeMeasurements, beta: f64) -> Result<ImageGrid> {
    hio_step_with(x, y, beta, SpaceConstraint::SupportNonNegative)
}

pub fn hio_step_with(
    x: &ImageGrid,
    y: &MagnitudeMeasurements,
    beta: f64,
    constraint: SpaceConstraint,
) -> Result<ImageGrid> {
    check_dim("padded dimension", x.padded_dim(), y.padded_dim())?;
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(invalid("beta", format!("{beta} not in (0, 1]")));
    }
    let mut ws = Workspace::new(y.padded_dim());
    let mut values = x.values().to_vec();
    ws.magnitude_projection(&values, y);
    hio_update(&mut values, &ws.projected, x, beta, constraint);
    Ok(x.with_values(values))
}

#[inline]
fn hio_update(values: &mut [f64], projected: &[f64], x: &ImageGrid, beta: f64, c: SpaceConstraint) {
    let support = x.support();
    for (i, (v, &p)) in values.iter_mut().zip(projected).enumerate() {
        *v = if c.violates(support, i, p) { *v - beta * p } else { p };
    }
}

/// Reflective form `[(I + R_S R_F)/2 + (1 − β)(I − P_S)P_F] x`, evaluated
/// directly from the projector and reflector definitions.
pub fn dr_step(x: &ImageGrid, y: &MagnitudeMeasurements, beta: f64) -> Result<ImageGrid> {
    dr_step_with(x, y, beta, SpaceConstraint::SupportNonNegative)
}

pub fn dr_step_with(
    x: &ImageGrid,
    y: &MagnitudeMeasurements,
    beta: f64,
    constraint: SpaceConstraint,
) -> Result<ImageGrid> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(invalid("beta", format!("{beta} not in (0, 1]")));
    }
    let rf = reflect_with(x, ProjectionKind::Magnitude, Some(y), constraint)?;
    let rsrf = reflect_with(&rf, ProjectionKind::Space, None, constraint)?;
    let averaged = x.lin_comb(0.5, &rsrf, 0.5);
    let pf = project_magnitude(x, y)?;
    let (ps_pf, _) = project_space_with(&pf, constraint);
    let outside = pf.lin_comb(1.0, &ps_pf, -1.0);
    Ok(averaged.lin_comb(1.0, &outside, 1.0 - beta))
}

/// Reusable buffers for one frame size.
struct Workspace {
    op: std::sync::Arc<crate::fourier::Fourier2d>,
    spec: Vec<Complex64>,
    projected: Vec<f64>,
    /// Residual of the frame whose spectrum was last taken.
    last_residual: f64,
}

impl Workspace {
    fn new(p: usize) -> Self {
        Self {
            op: plan(p),
            spec: vec![Complex64::default(); p * p],
            projected: vec![0.0; p * p],
            last_residual: 0.0,
        }
    }

    /// `projected ← P_F values`; also records the residual of `values`.
    fn magnitude_projection(&mut self, values: &[f64], y: &MagnitudeMeasurements) {
        for (s, &v) in self.spec.iter_mut().zip(values) {
            *s = Complex64::new(v, 0.0);
        }
        self.op.forward_in_place(&mut self.spec);
        self.last_residual = residual_of_spectrum(&self.spec, y);
        impose_magnitudes(&mut self.spec, y.magnitudes());
        self.op.inverse_in_place(&mut self.spec);
        for (p, s) in self.projected.iter_mut().zip(&self.spec) {
            *p = s.re;
        }
    }
}

fn is_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

fn norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Shared loop: `update` maps the current frame and its magnitude projection
/// to the next frame and returns `Some(residual)` when the residual to record
/// is not the one of the next frame.
fn iterate<F>(x0: &ImageGrid, y: &MagnitudeMeasurements, iters: usize, tolerance: Option<f64>, mut update: F) -> RunResult
where
    F: FnMut(usize, &mut Vec<f64>, &[f64], &mut Workspace) -> Option<f64>,
{
    let mut ws = Workspace::new(y.padded_dim());
    let mut values = x0.values().to_vec();
    let mut residuals = Vec::with_capacity(iters);
    // Residual of the next frame is only known after its forward transform;
    // `pending` marks that the previous iteration's entry is still open.
    let mut pending = false;
    let mut stop = false;
    let mut n = 0;
    while n < iters && !stop {
        n += 1;
        if !is_finite(&values) {
            let trace = SolverTrace {
                iterations_run: residuals.len(),
                residuals,
                final_image: x0.with_values(values),
            };
            return Err(SolverAbort { iteration: n, trace });
        }
        ws.magnitude_projection(&values, y);
        if pending {
            residuals.push(ws.last_residual);
            pending = false;
            if let Some(tol) = tolerance {
                if ws.last_residual < tol {
                    break;
                }
            }
        }
        let projected = std::mem::take(&mut ws.projected);
        let explicit = update(n, &mut values, &projected, &mut ws);
        ws.projected = projected;
        if !is_finite(&values) {
            let trace = SolverTrace {
                iterations_run: residuals.len(),
                residuals,
                final_image: x0.with_values(values),
            };
            return Err(SolverAbort { iteration: n, trace });
        }
        match explicit {
            Some(r) => {
                residuals.push(r);
                if let Some(tol) = tolerance {
                    stop = r < tol;
                }
            }
            None => pending = true,
        }
    }
    if pending {
        residuals.push(residual_of_values(&values, y));
    }
    Ok(SolverTrace {
        iterations_run: residuals.len(),
        residuals,
        final_image: x0.with_values(values),
    })
}

/// Plain ER for `params.max_iters` iterations.
pub fn run_er(x0: &ImageGrid, y: &MagnitudeMeasurements, params: &SolverParams) -> Result<RunResult> {
    params.validate()?;
    check_dim("padded dimension", x0.padded_dim(), y.padded_dim())?;
    let support = x0.support().clone();
    let c = params.constraint;
    Ok(iterate(x0, y, params.max_iters, params.tolerance, |_, values, projected, _| {
        values.copy_from_slice(projected);
        project_space_in_place(values, &support, c);
        None
    }))
}

/// HIO for `iters` iterations with `params.beta`.
pub fn run_hio(
    x0: &ImageGrid,
    y: &MagnitudeMeasurements,
    params: &SolverParams,
    iters: usize,
) -> Result<RunResult> {
    params.validate()?;
    check_dim("padded dimension", x0.padded_dim(), y.padded_dim())?;
    if iters == 0 {
        return Err(invalid("iters", "must be at least 1"));
    }
    let (beta, c) = (params.beta, params.constraint);
    Ok(iterate(x0, y, iters, params.tolerance, |_, values, projected, _| {
        hio_update(values, projected, x0, beta, c);
        None
    }))
}

/// Accelerated ER for `params.max_iters` iterations.
pub fn run_aer(x0: &ImageGrid, y: &MagnitudeMeasurements, params: &SolverParams) -> Result<RunResult> {
    let mut state = AccelState::default();
    run_aer_with_state(x0, y, params, params.max_iters, &mut state)
}

/// AER continuing from an existing acceleration state.
pub fn run_aer_with_state(
    x0: &ImageGrid,
    y: &MagnitudeMeasurements,
    params: &SolverParams,
    iters: usize,
    state: &mut AccelState,
) -> Result<RunResult> {
    params.validate()?;
    check_dim("padded dimension", x0.padded_dim(), y.padded_dim())?;
    if iters == 0 {
        return Err(invalid("iters", "must be at least 1"));
    }
    let support = x0.support().clone();
    let (period, zeta, c) = (params.accel_period, params.zeta, params.constraint);
    Ok(iterate(x0, y, iters, params.tolerance, |n, values, projected, _ws| {
        // values ← x″ = P_S x′
        values.copy_from_slice(projected);
        project_space_in_place(values, &support, c);
        if n % period != period - 1 {
            return None;
        }
        let center: Vec<f64> = projected.iter().zip(values.iter()).map(|(a, b)| 0.5 * (a + b)).collect();
        let mut explicit = None;
        if let Some(prev) = state.prev_center.as_ref() {
            let diff: Vec<f64> = center.iter().zip(prev).map(|(a, b)| a - b).collect();
            let dist = norm(&diff);
            if dist > DEGENERATE_DIRECTION {
                let radius = 0.5
                    * projected
                        .iter()
                        .zip(values.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                explicit = Some(residual_of_values(values, y));
                let direction: Vec<f64> = diff.iter().map(|d| d / dist).collect();
                for ((v, &cn), &a) in values.iter_mut().zip(&center).zip(&direction) {
                    *v = cn + zeta * radius * a;
                }
                state.direction = Some(direction);
                state.radius = radius;
                state.applied += 1;
            }
        }
        state.prev_center = Some(center);
        explicit
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::{measure, residual};
    use crate::grid::NoiseModel;

    fn instance() -> (ImageGrid, MagnitudeMeasurements) {
        let px: Vec<f64> = (0..16).map(|i| ((i * 7 % 11) as f64) / 10.0).collect();
        let x = ImageGrid::from_inner(4, 8, &px).unwrap();
        let y = measure(&x, &NoiseModel::new(0.0), 0).unwrap();
        (x, y)
    }

    #[test]
    fn solution_is_fixed_by_every_step() {
        let (x, y) = instance();
        assert!(er_step(&x, &y).unwrap().distance(&x) < 1e-10);
        assert!(hio_step(&x, &y, 0.9).unwrap().distance(&x) < 1e-10);
        assert!(dr_step(&x, &y, 0.9).unwrap().distance(&x) < 1e-10);
    }

    #[test]
    fn er_from_zero_is_projected_backprojection() {
        let (_, y) = instance();
        let zero = ImageGrid::zeros(4, 8);
        let spec: Vec<Complex64> = y.magnitudes().iter().map(|&m| Complex64::new(m, 0.0)).collect();
        let mut expected = plan(8).inverse_real(spec);
        project_space_in_place(&mut expected, zero.support(), SpaceConstraint::SupportNonNegative);
        let got = er_step(&zero, &y).unwrap();
        for (a, b) in got.values().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn hio_equals_er_when_nothing_violates() {
        let (x, y) = instance();
        // perturb inside the support only by a feasible amount, then check
        // pixels where x′ is feasible agree with ER
        let mut z = x.clone();
        z.values_mut()[0] += 0.05;
        let h = hio_step(&z, &y, 0.9).unwrap();
        let e = er_step(&z, &y).unwrap();
        let pf = project_magnitude(&z, &y).unwrap();
        for i in 0..64 {
            if z.support().contains(i) && pf.values()[i] >= 0.0 {
                assert_eq!(h.values()[i], e.values()[i]);
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let (x, y) = instance();
        assert!(hio_step(&x, &y, 0.0).is_err());
        assert!(hio_step(&x, &y, 1.5).is_err());
        let p = SolverParams { accel_period: 1, ..Default::default() };
        assert!(run_aer(&x, &y, &p).is_err());
        assert!(run_hio(&x, &y, &SolverParams::default(), 0).is_err());
    }

    #[test]
    fn solution_traces_are_constant_zero() {
        let (x, y) = instance();
        let p = SolverParams { max_iters: 25, accel_period: 3, ..Default::default() };
        let t = run_aer(&x, &y, &p).unwrap().unwrap();
        assert_eq!(t.iterations_run, 25);
        assert!(t.residuals.iter().all(|&r| r < 1e-20));
        assert!(t.final_image.distance(&x) < 1e-10);
        let t = run_hio(&x, &y, &p, 7).unwrap().unwrap();
        assert_eq!(t.residuals.len(), 7);
        assert!(t.residuals.iter().all(|&r| r < 1e-20));
    }

    #[test]
    fn single_hio_iteration_matches_step() {
        let (x, y) = instance();
        let start = x.lin_comb(0.5, &x.with_values(vec![0.1; 64]), 1.0);
        let t = run_hio(&start, &y, &SolverParams::default(), 1).unwrap().unwrap();
        let s = hio_step(&start, &y, 0.9).unwrap();
        assert_eq!(t.final_image, s);
        assert_eq!(t.residuals[0], residual(&s, &y).unwrap());
    }

    #[test]
    fn tolerance_stops_early() {
        let (x, y) = instance();
        let p = SolverParams { max_iters: 50, tolerance: Some(1.0), ..Default::default() };
        let t = run_er(&x, &y, &p).unwrap().unwrap();
        assert_eq!(t.iterations_run, 1);
    }

    #[test]
    fn divergence_is_reported_with_trace() {
        let (x, y) = instance();
        let mut bad = x.clone();
        bad.values_mut()[0] = f64::NAN;
        let r = run_hio(&bad, &y, &SolverParams::default(), 3).unwrap();
        let abort = r.unwrap_err();
        assert_eq!(abort.iteration, 1);
        assert!(abort.trace.residuals.is_empty());
    }

    #[test]
    fn csv_trace_format() {
        let (x, y) = instance();
        let t = run_er(&x, &y, &SolverParams { max_iters: 2, ..Default::default() }).unwrap().unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with("iter,residual\n1,"));
        assert_eq!(csv.lines().count(), 3);
    }
}
