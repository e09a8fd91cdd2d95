//! Pseudo-arclength continuation of steady branches with detection,
//! bisection refinement and classification of branch points, limit points and
//! Hopf points, plus branch switching.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{steady_residual, CellRow, ParamId, ParameterSet, SteadyVector};
use crate::numerics::{
    classify_stability, fd_jacobian, rank_deficiency, singular_value_extrema,
    solve_lu, NumericsConfig, Spectrum, StabilityTag,
};

/// Steady system with one active continuation parameter.
#[derive(Debug, Clone)]
pub struct System {
    pub row: CellRow,
    pub base: ParameterSet,
    pub param: ParamId,
}

impl System {
    pub fn new(row: CellRow, base: ParameterSet, param: ParamId) -> System {
        System { row, base, param }
    }

    pub fn params_at(&self, lambda: f64) -> ParameterSet {
        self.param.with(&self.base, lambda)
    }

    pub fn residual(&self, u: &SteadyVector, lambda: f64) -> Result<DVector<f64>> {
        steady_residual(u, &self.row, &self.params_at(lambda))
    }

    pub fn jacobian_u(
        &self,
        u: &SteadyVector,
        lambda: f64,
        cfg: &NumericsConfig,
    ) -> Result<DMatrix<f64>> {
        fd_jacobian(|v| self.residual(v, lambda), u, cfg)
    }

    /// Central finite difference of the residual in the active parameter.
    pub fn jacobian_lambda(
        &self,
        u: &SteadyVector,
        lambda: f64,
        cfg: &NumericsConfig,
    ) -> Result<DVector<f64>> {
        let eps = cfg.fd_epsilon;
        let fp = self.residual(u, lambda + eps)?;
        let fm = self.residual(u, lambda - eps)?;
        Ok((fp - fm) / (2.0 * eps))
    }

    /// The 2n x (2n+1) augmented Jacobian [J_U | J_lambda].
    pub fn augmented(
        &self,
        u: &SteadyVector,
        lambda: f64,
        cfg: &NumericsConfig,
    ) -> Result<DMatrix<f64>> {
        let ju = self.jacobian_u(u, lambda, cfg)?;
        let jl = self.jacobian_lambda(u, lambda, cfg)?;
        let dim = u.len();
        let mut aug = DMatrix::zeros(dim, dim + 1);
        aug.view_mut((0, 0), (dim, dim)).copy_from(&ju);
        aug.set_column(dim, &jl);
        Ok(aug)
    }
}

/// Step-size schedule and event tolerances.
#[derive(Debug, Clone, Copy)]
pub struct ContinuationConfig {
    pub numerics: NumericsConfig,
    /// Initial arclength step.
    pub ds0: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    /// Grow the step after this many consecutive accepts.
    pub grow_after: usize,
    pub grow_factor: f64,
    /// Point budget per marching direction.
    pub max_points: usize,
    /// Target width of the bracketing lambda interval after refinement.
    pub event_lambda_tol: f64,
    pub max_bisections: usize,
    /// Initial offset along the secondary null direction when switching.
    pub switch_delta: f64,
    /// When false, crossings are not refined into events (cheaper sweeps of
    /// long secondary branches where only the points matter).
    pub detect_events: bool,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        ContinuationConfig {
            numerics: NumericsConfig::default(),
            ds0: 0.01,
            ds_min: 1e-6,
            ds_max: 0.1,
            grow_after: 4,
            grow_factor: 1.3,
            max_points: 5000,
            event_lambda_tol: 1e-7,
            max_bisections: 40,
            switch_delta: 1e-2,
            detect_events: true,
        }
    }
}

/// Scalar test functions recorded at every accepted point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TestValues {
    /// Parity proxy for the Jacobian determinant sign: flips when a single
    /// real eigenvalue crosses the axis.
    pub det_sign_proxy: f64,
    pub unstable_count: usize,
    /// Last tangent component.
    pub dlambda_ds: f64,
}

/// One accepted continuation point.
#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub u: SteadyVector,
    pub lambda: f64,
    /// Unit tangent in R^{2n+1}, state components first.
    pub tangent: DVector<f64>,
    pub stability: StabilityTag,
    pub spectrum: Spectrum,
    pub test_values: TestValues,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EventKind {
    BranchPoint,
    LimitPoint,
    Hopf,
}

/// A refined bifurcation event.
#[derive(Debug, Clone)]
pub struct BifurcationEvent {
    pub kind: EventKind,
    pub u: SteadyVector,
    pub lambda: f64,
    /// Imaginary part of the crossing pair (Hopf only).
    pub beta: Option<f64>,
    /// Incoming tangent followed by the secondary null direction (branch
    /// points only).
    pub null_directions: Vec<DVector<f64>>,
    pub bracket_width: f64,
    /// Set when a step contains more than one crossing; refine with a
    /// smaller step size to resolve.
    pub unresolved: bool,
}

/// An ordered curve of continuation points with its detected events.
#[derive(Debug, Clone)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub param: ParamId,
    pub events: Vec<BifurcationEvent>,
}

impl Branch {
    pub fn lambda_range(&self) -> (f64, f64) {
        self.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, p| {
            (acc.0.min(p.lambda), acc.1.max(p.lambda))
        })
    }

    /// Point with the active parameter closest to `lambda`.
    pub fn nearest_point(&self, lambda: f64) -> &BranchPoint {
        self.points
            .iter()
            .min_by(|a, b| {
                (a.lambda - lambda)
                    .abs()
                    .partial_cmp(&(b.lambda - lambda).abs())
                    .unwrap()
            })
            .expect("branch is nonempty")
    }
}

fn extend(u: &SteadyVector, lambda: f64) -> DVector<f64> {
    let mut x = DVector::zeros(u.len() + 1);
    x.rows_mut(0, u.len()).copy_from(u);
    x[u.len()] = lambda;
    x
}

/// Unit tangent of the solution curve: the null vector of [J_U | J_lambda],
/// sign-aligned with `previous` (or with +lambda when none). Errors at a
/// branch point where the null space is two-dimensional.
pub fn tangent(
    system: &System,
    u: &SteadyVector,
    lambda: f64,
    previous: Option<&DVector<f64>>,
    cfg: &NumericsConfig,
) -> Result<DVector<f64>> {
    let aug = system.augmented(u, lambda, cfg)?;
    tangent_from_aug(&aug, previous)
}

fn tangent_from_aug(aug: &DMatrix<f64>, previous: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    let dim = aug.nrows();
    let mut bordered = DMatrix::zeros(dim + 1, dim + 1);
    bordered.view_mut((0, 0), (dim, dim + 1)).copy_from(aug);
    match previous {
        Some(t) => bordered.row_mut(dim).copy_from(&t.transpose()),
        None => bordered[(dim, dim)] = 1.0,
    }
    let mut rhs = DVector::zeros(dim + 1);
    rhs[dim] = 1.0;
    // The border equation <prev, t> = 1 fixes the orientation before
    // normalization.
    let t = solve_lu(&bordered, &rhs).map_err(|_| Error::TangentAtBranchPoint)?;
    let norm = t.norm();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::TangentAtBranchPoint);
    }
    Ok(t / norm)
}

fn make_point(
    system: &System,
    u: SteadyVector,
    lambda: f64,
    previous_tangent: Option<&DVector<f64>>,
    cfg: &NumericsConfig,
) -> Result<BranchPoint> {
    let ju = system.jacobian_u(&u, lambda, cfg)?;
    let jl = system.jacobian_lambda(&u, lambda, cfg)?;
    let dim = u.len();
    let mut aug = DMatrix::zeros(dim, dim + 1);
    aug.view_mut((0, 0), (dim, dim)).copy_from(&ju);
    aug.set_column(dim, &jl);
    let tangent = tangent_from_aug(&aug, previous_tangent)?;
    let spectrum = crate::integrate::dynamic_spectrum(&u, &system.row, &system.params_at(lambda), cfg)?;
    let stability = classify_stability(&spectrum, cfg);
    let test_values = TestValues {
        det_sign_proxy: if stability.unstable_count % 2 == 0 { 1.0 } else { -1.0 },
        unstable_count: stability.unstable_count,
        dlambda_ds: tangent[dim],
    };
    Ok(BranchPoint {
        u,
        lambda,
        tangent,
        stability,
        spectrum,
        test_values,
    })
}

/// Bordered Newton corrector: solves F = 0 on the hyperplane through
/// `(u_pred, lambda_pred)` orthogonal to `tangent`.
fn correct(
    system: &System,
    u_pred: &SteadyVector,
    lambda_pred: f64,
    tangent: &DVector<f64>,
    cfg: &NumericsConfig,
) -> Result<(SteadyVector, f64)> {
    let dim = u_pred.len();
    let x_pred = extend(u_pred, lambda_pred);
    let mut u = u_pred.clone();
    let mut lambda = lambda_pred;
    for iter in 0..=cfg.newton_max_iter {
        let r = system.residual(&u, lambda)?;
        let x = extend(&u, lambda);
        let g = tangent.dot(&(&x - &x_pred));
        if r.amax() <= cfg.newton_tol && g.abs() <= cfg.newton_tol * (1.0 + x.norm()) {
            return Ok((u, lambda));
        }
        if iter == cfg.newton_max_iter {
            return Err(Error::NonConvergence {
                iterations: iter,
                residual: r.amax(),
            });
        }
        let aug = system.augmented(&u, lambda, cfg)?;
        let mut jac = DMatrix::zeros(dim + 1, dim + 1);
        jac.view_mut((0, 0), (dim, dim + 1)).copy_from(&aug);
        jac.row_mut(dim).copy_from(&tangent.transpose());
        let mut rhs = DVector::zeros(dim + 1);
        for i in 0..dim {
            rhs[i] = -r[i];
        }
        rhs[dim] = -g;
        let step = solve_lu(&jac, &rhs)?;
        for i in 0..dim {
            u[i] += step[i];
        }
        lambda += step[dim];
        if !lambda.is_finite() || !u.iter().all(|v| v.is_finite()) {
            return Err(Error::NonConvergence {
                iterations: iter + 1,
                residual: f64::INFINITY,
            });
        }
    }
    unreachable!()
}

/// One predictor-corrector step of signed arclength `ds` from `point`.
pub fn arclength_step(
    system: &System,
    point: &BranchPoint,
    ds: f64,
    cfg: &ContinuationConfig,
) -> Result<BranchPoint> {
    assert!(ds != 0.0);
    let dim = point.u.len();
    let u_pred = &point.u + point.tangent.rows(0, dim) * ds;
    let lambda_pred = point.lambda + ds * point.tangent[dim];
    let direction = if ds > 0.0 {
        point.tangent.clone()
    } else {
        -&point.tangent
    };
    let (u, lambda) = correct(system, &u_pred, lambda_pred, &point.tangent, &cfg.numerics)
        .map_err(|_| Error::StepRejected)?;
    make_point(system, u, lambda, Some(&direction), &cfg.numerics)
        .map_err(|_| Error::StepRejected)
}

fn march(
    system: &System,
    start: &BranchPoint,
    window: (f64, f64),
    cfg: &ContinuationConfig,
) -> Vec<BranchPoint> {
    let (lo, hi) = window;
    let mut points = Vec::new();
    let mut current = start.clone();
    let mut ds = cfg.ds0;
    let mut accepts = 0usize;
    while points.len() < cfg.max_points {
        match arclength_step(system, &current, ds, cfg) {
            Ok(next) => {
                let lambda = next.lambda;
                points.push(next.clone());
                current = next;
                accepts += 1;
                if accepts >= cfg.grow_after {
                    ds = (ds * cfg.grow_factor).min(cfg.ds_max);
                    accepts = 0;
                }
                if lambda < lo || lambda > hi {
                    break;
                }
            }
            Err(_) => {
                ds /= 2.0;
                accepts = 0;
                if ds < cfg.ds_min {
                    break;
                }
            }
        }
    }
    points
}

/// Traces the branch through `start` across the parameter window, marching in
/// both directions, and detects bifurcation events along it.
pub fn continue_branch(
    system: &System,
    u0: &SteadyVector,
    lambda0: f64,
    window: (f64, f64),
    cfg: &ContinuationConfig,
    tangent_hint: Option<&DVector<f64>>,
) -> Result<Branch> {
    // Polish the start onto the branch at fixed lambda.
    let (u0, _) = crate::numerics::newton_solve(
        |v| system.residual(v, lambda0),
        u0,
        &cfg.numerics,
    )?;
    let start = make_point(system, u0, lambda0, tangent_hint, &cfg.numerics)?;
    trace(system, start, window, cfg)
}

/// Marches both directions from an already-converged branch point and
/// assembles the ordered branch with its events.
fn trace(
    system: &System,
    start: BranchPoint,
    window: (f64, f64),
    cfg: &ContinuationConfig,
) -> Result<Branch> {
    let forward = march(system, &start, window, cfg);
    let mut backward_start = start.clone();
    backward_start.tangent = -&start.tangent;
    backward_start.test_values.dlambda_ds = -start.test_values.dlambda_ds;
    let backward = march(system, &backward_start, window, cfg);

    let mut points = Vec::with_capacity(backward.len() + 1 + forward.len());
    for mut p in backward.into_iter().rev() {
        p.tangent = -&p.tangent;
        p.test_values.dlambda_ds = -p.test_values.dlambda_ds;
        points.push(p);
    }
    points.push(start);
    points.extend(forward);

    let events = if cfg.detect_events {
        detect_bifurcations(system, &points, cfg)?
    } else {
        Vec::new()
    };
    Ok(Branch {
        points,
        param: system.param,
        events,
    })
}

/// Convenience wrapper: continuation in the allocation blend `omega`.
pub fn continue_in_omega(
    row: CellRow,
    params: ParameterSet,
    u0: &SteadyVector,
    window: (f64, f64),
    cfg: &ContinuationConfig,
) -> Result<Branch> {
    let system = System::new(row, params, ParamId::Omega);
    continue_branch(&system, u0, params.omega, window, cfg, None)
}

/// Locates and classifies the eigenvalue crossings between consecutive
/// points. Each crossing is refined by bisection on arclength.
pub fn detect_bifurcations(
    system: &System,
    points: &[BranchPoint],
    cfg: &ContinuationConfig,
) -> Result<Vec<BifurcationEvent>> {
    let mut events = Vec::new();
    for pair in points.windows(2) {
        // One marching step can straddle several crossings; peel them off
        // from the left until the whole count change is accounted for.
        let mut left = pair[0].clone();
        let right = &pair[1];
        for _ in 0..8 {
            if left.test_values.unstable_count == right.test_values.unstable_count {
                break;
            }
            let (event, after) = refine_crossing(system, &left, right, cfg)?;
            events.push(event);
            if after.test_values.unstable_count == left.test_values.unstable_count {
                break;
            }
            left = after;
        }
    }
    Ok(events)
}

fn refine_crossing(
    system: &System,
    a: &BranchPoint,
    b: &BranchPoint,
    cfg: &ContinuationConfig,
) -> Result<(BifurcationEvent, BranchPoint)> {
    let mut pa = a.clone();
    let mut pb = b.clone();
    let count_a = pa.test_values.unstable_count;
    for _ in 0..cfg.max_bisections {
        if (pb.lambda - pa.lambda).abs() <= cfg.event_lambda_tol {
            break;
        }
        let dist = {
            let du = (&pb.u - &pa.u).norm_squared();
            (du + (pb.lambda - pa.lambda).powi(2)).sqrt()
        };
        let mut stepped = None;
        for frac in [0.5, 0.25, 0.1] {
            match arclength_step(system, &pa, frac * dist, cfg) {
                Ok(mid) => {
                    stepped = Some(mid);
                    break;
                }
                Err(_) => continue,
            }
        }
        let Some(mid) = stepped else { break };
        // Guard against the corrector jumping past the bracket.
        if (mid.lambda - pa.lambda).abs() > 2.0 * (pb.lambda - pa.lambda).abs() + 1e-12 {
            break;
        }
        if mid.test_values.unstable_count == count_a {
            pa = mid;
        } else {
            pb = mid;
        }
    }
    let event = classify_crossing(system, &pa, &pb, cfg)?;
    Ok((event, pb))
}

fn classify_crossing(
    system: &System,
    pa: &BranchPoint,
    pb: &BranchPoint,
    cfg: &ContinuationConfig,
) -> Result<BifurcationEvent> {
    let delta = pb.test_values.unstable_count as isize - pa.test_values.unstable_count as isize;
    let bracket_width = (pb.lambda - pa.lambda).abs();
    // The eigenvalue closest to the imaginary axis at the unstable-side
    // endpoint identifies the crossing mode.
    let unstable_side = if pb.test_values.unstable_count > pa.test_values.unstable_count {
        pb
    } else {
        pa
    };
    let crossing = unstable_side
        .spectrum
        .eigenvalues
        .iter()
        .filter(|z| z.re > 0.0)
        .min_by(|x, y| x.re.partial_cmp(&y.re).unwrap())
        .copied()
        .unwrap_or_default();
    let crossing_is_pair = crossing.im.abs() > 1e-3;

    if delta.abs() == 2 && crossing_is_pair {
        // Hopf: report the endpoint whose crossing pair sits closest to the axis.
        let event_point = nearest_axis_endpoint(pa, pb);
        return Ok(BifurcationEvent {
            kind: EventKind::Hopf,
            u: event_point.u.clone(),
            lambda: event_point.lambda,
            beta: Some(crossing.im.abs()),
            null_directions: vec![],
            bracket_width,
            unresolved: false,
        });
    }

    if delta.abs() == 1 && !crossing_is_pair {
        // Real crossing: branch point vs limit point by augmented rank.
        let event_point = smaller_sigma_endpoint(system, pa, pb, cfg)?;
        let aug = system.augmented(&event_point.u, event_point.lambda, &cfg.numerics)?;
        let deficiency = rank_deficiency(&aug, &cfg.numerics);
        if deficiency >= 1 {
            let psi = secondary_null_direction(&aug, &event_point.tangent)?;
            return Ok(BifurcationEvent {
                kind: EventKind::BranchPoint,
                u: event_point.u.clone(),
                lambda: event_point.lambda,
                beta: None,
                null_directions: vec![event_point.tangent.clone(), psi],
                bracket_width,
                unresolved: false,
            });
        }
        return Ok(BifurcationEvent {
            kind: EventKind::LimitPoint,
            u: event_point.u.clone(),
            lambda: event_point.lambda,
            beta: None,
            null_directions: vec![event_point.tangent.clone()],
            bracket_width,
            unresolved: false,
        });
    }

    // Double or mixed crossing inside one step.
    Ok(BifurcationEvent {
        kind: if crossing_is_pair {
            EventKind::Hopf
        } else {
            EventKind::BranchPoint
        },
        u: pb.u.clone(),
        lambda: pb.lambda,
        beta: crossing_is_pair.then(|| crossing.im.abs()),
        null_directions: vec![],
        bracket_width,
        unresolved: true,
    })
}

fn nearest_axis_endpoint<'a>(pa: &'a BranchPoint, pb: &'a BranchPoint) -> &'a BranchPoint {
    let axis_dist = |p: &BranchPoint| {
        p.spectrum
            .eigenvalues
            .iter()
            .filter(|z| z.im.abs() > 1e-3)
            .map(|z| z.re.abs())
            .fold(f64::INFINITY, f64::min)
    };
    if axis_dist(pa) <= axis_dist(pb) {
        pa
    } else {
        pb
    }
}

fn smaller_sigma_endpoint<'a>(
    system: &System,
    pa: &'a BranchPoint,
    pb: &'a BranchPoint,
    cfg: &ContinuationConfig,
) -> Result<&'a BranchPoint> {
    let ratio = |p: &BranchPoint| -> Result<f64> {
        let ju = system.jacobian_u(&p.u, p.lambda, &cfg.numerics)?;
        let (min_sv, max_sv) = singular_value_extrema(&ju);
        Ok(min_sv / max_sv.max(f64::MIN_POSITIVE))
    };
    if ratio(pa)? <= ratio(pb)? {
        Ok(pa)
    } else {
        Ok(pb)
    }
}

/// Second null direction of the augmented Jacobian at a branch point,
/// orthogonal to the incoming tangent.
fn secondary_null_direction(
    aug: &DMatrix<f64>,
    incoming: &DVector<f64>,
) -> Result<DVector<f64>> {
    let dim = aug.nrows();
    let mut bordered = DMatrix::zeros(dim + 1, dim + 1);
    bordered.view_mut((0, 0), (dim, dim + 1)).copy_from(aug);
    bordered.row_mut(dim).copy_from(&incoming.transpose());
    let svd = bordered.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let mut min_idx = 0;
    for (i, sv) in svd.singular_values.iter().enumerate() {
        if *sv < svd.singular_values[min_idx] {
            min_idx = i;
        }
    }
    let mut psi: DVector<f64> = v_t.row(min_idx).transpose();
    // Project out any residual component along the incoming tangent.
    psi -= incoming * incoming.dot(&psi);
    let norm = psi.norm();
    if !(norm > 1e-8) {
        return Err(Error::SwitchFailed(
            "secondary null direction degenerate".into(),
        ));
    }
    Ok(psi / norm)
}

/// Starter points on the branch crossing at a refined branch point, one per
/// sign of the secondary null direction.
pub fn switch_branch(
    system: &System,
    event: &BifurcationEvent,
    cfg: &ContinuationConfig,
) -> Result<Vec<BranchPoint>> {
    if event.kind != EventKind::BranchPoint {
        return Err(Error::SwitchFailed(format!(
            "cannot switch at a {:?} event",
            event.kind
        )));
    }
    let dim = event.u.len();
    let (_incoming, psi) = match event.null_directions.as_slice() {
        [incoming, psi, ..] => (incoming.clone(), psi.clone()),
        _ => {
            let aug = system.augmented(&event.u, event.lambda, &cfg.numerics)?;
            let incoming = tangent_from_aug(&aug, None)?;
            let psi = secondary_null_direction(&aug, &incoming)?;
            (incoming, psi)
        }
    };
    let x_event = extend(&event.u, event.lambda);
    let mut starters = Vec::new();
    let mut failures = Vec::new();
    for sign in [1.0, -1.0] {
        let dir = &psi * sign;
        let mut delta = cfg.switch_delta;
        let mut found = None;
        while delta <= 0.1 + 1e-12 {
            let u_pred = &event.u + dir.rows(0, dim) * delta;
            let lambda_pred = event.lambda + delta * dir[dim];
            match correct(system, &u_pred, lambda_pred, &dir, &cfg.numerics) {
                Ok((u, lambda)) => {
                    // The border equation pins the component along `dir` to
                    // delta, so a converged point carries a nonzero amplitude
                    // of the new null mode and cannot lie on the incoming
                    // branch (which is orthogonal to `dir` through the event).
                    let x = extend(&u, lambda);
                    let w = &x - &x_event;
                    if w.norm() > 1e-10 {
                        found = Some((u, lambda));
                        break;
                    }
                    failures.push(format!(
                        "sign {sign:+} delta {delta:.1e}: corrector collapsed onto the event point"
                    ));
                }
                Err(e) => failures.push(format!("sign {sign:+} delta {delta:.1e}: {e}")),
            }
            delta *= 2.0;
        }
        if let Some((u, lambda)) = found {
            if let Ok(point) = make_point(system, u, lambda, Some(&dir), &cfg.numerics) {
                starters.push(point);
            }
        }
    }
    if starters.is_empty() {
        return Err(Error::SwitchFailed(failures.join("; ")));
    }
    Ok(starters)
}

/// Continues the branch through an already-constructed starter point.
pub fn continue_from_point(
    system: &System,
    starter: &BranchPoint,
    window: (f64, f64),
    cfg: &ContinuationConfig,
) -> Result<Branch> {
    // No fixed-lambda re-polish here: so close to the branch point, plain
    // Newton slides back onto the branch the starter just left.
    trace(system, starter.clone(), window, cfg)
}
