//! Fixed-step RK4 time integration and orbit characterization.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    dynamic_rhs, steady_pin_of_a, trivial_values, CellRow, DynamicState, ParameterSet,
    SteadyVector,
};
use crate::numerics::{eigenvalues, fd_jacobian, NumericsConfig, Spectrum};

/// Amplitude guard; states beyond this are treated as numerical blow-up.
const BLOWUP_LIMIT: f64 = 1e6;

/// Sampled trajectory of a simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DynamicState>,
    pub sample_stride: usize,
    pub dt: f64,
}

impl Trajectory {
    pub fn last(&self) -> &DynamicState {
        self.states.last().expect("trajectory holds at least t = 0")
    }
}

/// Summary of the post-transient behavior of a trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct OrbitSummary {
    pub converged: bool,
    pub period: f64,
    /// Per interior cell, minimum IAA over the post-transient span.
    pub envelope_min: Vec<f64>,
    /// Per interior cell, maximum IAA over the post-transient span.
    pub envelope_max: Vec<f64>,
    /// (time, probe value) at each increasing crossing of the section.
    pub poincare_points: Vec<(f64, f64)>,
    /// Why convergence was not established, if it was not.
    pub diagnostics: Option<String>,
}

/// One classical RK4 stage update for a generic right-hand side on flat
/// vectors. Exposed for integrator order checks against scalar equations.
pub fn rk4_generic<F>(f: &F, v: &DVector<f64>, dt: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = f(v)?;
    let k2 = f(&(v + &k1 * (dt / 2.0)))?;
    let k3 = f(&(v + &k2 * (dt / 2.0)))?;
    let k4 = f(&(v + &k3 * dt))?;
    let next = v + (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (dt / 6.0);
    if !next.iter().all(|x| x.is_finite()) {
        return Err(Error::BlowUp { time: f64::NAN });
    }
    Ok(next)
}

pub fn flatten(state: &DynamicState) -> DVector<f64> {
    let np = state.p.len();
    let n = state.a.len();
    let mut v = DVector::zeros(np + n);
    v.rows_mut(0, np).copy_from(&state.p);
    v.rows_mut(np, n).copy_from(&state.a);
    v
}

pub fn unflatten(v: &DVector<f64>, n: usize) -> DynamicState {
    DynamicState {
        p: v.rows(0, n + 2).into_owned(),
        a: v.rows(n + 2, n).into_owned(),
    }
}

/// Spectrum of the time-evolution operator linearized at a steady interior
/// pattern. The boundary PIN levels are reinstated as dynamic variables (at
/// their own steady values), so this is the linearization that decides
/// whether the pattern attracts nearby trajectories — the reduced steady-state
/// Jacobian has the boundary response slaved and reports different
/// eigenvalues.
pub fn dynamic_spectrum(
    u: &SteadyVector,
    row: &CellRow,
    params: &ParameterSet,
    cfg: &NumericsConfig,
) -> Result<Spectrum> {
    let state = tile_pattern(u, 1, params)?;
    let n = row.n;
    let v0 = flatten(&state);
    let jac = fd_jacobian(
        |v| dynamic_rhs(&unflatten(v, n), row, params).map(|r| flatten(&r)),
        &v0,
        cfg,
    )?;
    eigenvalues(&jac)
}

/// One RK4 step of the cell-row model.
pub fn rk4_step(
    state: &DynamicState,
    dt: f64,
    row: &CellRow,
    params: &ParameterSet,
) -> Result<DynamicState> {
    assert!(dt > 0.0);
    let n = row.n;
    let f = |v: &DVector<f64>| {
        let s = unflatten(v, n);
        let rhs = dynamic_rhs(&s, row, params)?;
        Ok(flatten(&rhs))
    };
    let next = rk4_generic(&f, &flatten(state), dt)?;
    Ok(unflatten(&next, n))
}

/// The trivial state plus the symmetry-breaking sine perturbation
/// `amplitude * sin(frequency * (i+2) * pi / (n+4))` on the interior IAA.
pub fn perturbed_trivial(
    row: &CellRow,
    params: &ParameterSet,
    amplitude: f64,
    frequency: u32,
) -> Result<DynamicState> {
    let (p_star, a_star) = trivial_values(params)?;
    let n = row.n;
    let p = DVector::from_element(n + 2, p_star);
    let a = DVector::from_fn(n, |k, _| {
        let i = k + 1;
        a_star
            + amplitude
                * ((frequency as f64 * (i + 2) as f64 * std::f64::consts::PI)
                    / (n + 4) as f64)
                    .sin()
    });
    Ok(DynamicState { p, a })
}

/// Integrates with fixed step `dt` up to `t_end`, sampling every
/// `sample_stride` steps. On blow-up the partial trajectory is returned with
/// the error.
pub fn simulate(
    state0: &DynamicState,
    row: &CellRow,
    params: &ParameterSet,
    t_end: f64,
    dt: f64,
    sample_stride: usize,
) -> std::result::Result<Trajectory, (Error, Trajectory)> {
    assert!(t_end > 0.0 && dt > 0.0 && sample_stride >= 1);
    let steps = (t_end / dt).round().max(1.0) as usize;
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![state0.clone()],
        sample_stride,
        dt,
    };
    let mut state = state0.clone();
    for step in 1..=steps {
        let t = step as f64 * dt;
        match rk4_step(&state, dt, row, params) {
            Ok(next) if next.max_abs() <= BLOWUP_LIMIT => state = next,
            Ok(_) => return Err((Error::BlowUp { time: t }, traj)),
            Err(Error::BlowUp { .. }) => return Err((Error::BlowUp { time: t }, traj)),
            Err(e) => return Err((e, traj)),
        }
        if step % sample_stride == 0 || step == steps {
            traj.times.push(t);
            traj.states.push(state.clone());
        }
    }
    Ok(traj)
}

/// Detects a periodic orbit from the post-transient part of a trajectory.
///
/// The Poincare section is anchored at the post-transient mean of the probe
/// cell; increasing crossings define the period. `probe_cell` is 1-based.
pub fn analyze_orbit(
    traj: &Trajectory,
    probe_cell: usize,
    transient_fraction: f64,
) -> OrbitSummary {
    let n = traj.states[0].a.len();
    assert!(probe_cell >= 1 && probe_cell <= n);
    let t_end = *traj.times.last().unwrap();
    let t_cut = transient_fraction * t_end;
    let start = traj.times.partition_point(|&t| t < t_cut);
    let times = &traj.times[start..];
    let states = &traj.states[start..];

    let mut envelope_min = vec![f64::INFINITY; n];
    let mut envelope_max = vec![f64::NEG_INFINITY; n];
    for s in states {
        for i in 0..n {
            envelope_min[i] = envelope_min[i].min(s.a[i]);
            envelope_max[i] = envelope_max[i].max(s.a[i]);
        }
    }

    let series: Vec<f64> = states.iter().map(|s| s.a[probe_cell - 1]).collect();
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let mut crossings = Vec::new();
    for k in 0..series.len().saturating_sub(1) {
        if series[k] < mean && series[k + 1] >= mean {
            let frac = (mean - series[k]) / (series[k + 1] - series[k]);
            let t = times[k] + frac * (times[k + 1] - times[k]);
            crossings.push((t, mean));
        }
    }

    if crossings.len() < 3 {
        let note = format!(
            "only {} section crossings; steady state or t_end too short",
            crossings.len()
        );
        return OrbitSummary {
            converged: false,
            period: 0.0,
            envelope_min,
            envelope_max,
            poincare_points: crossings,
            diagnostics: Some(note),
        };
    }

    let gaps: Vec<f64> = crossings.windows(2).map(|w| w[1].0 - w[0].0).collect();
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let var = gaps.iter().map(|g| (g - mean_gap).powi(2)).sum::<f64>() / gaps.len() as f64;
    let std = var.sqrt();
    let converged = mean_gap > 0.0 && std <= 0.01 * mean_gap;
    OrbitSummary {
        converged,
        period: mean_gap,
        envelope_min,
        envelope_max,
        poincare_points: crossings,
        diagnostics: if converged {
            None
        } else {
            Some(format!(
                "crossing gap spread {:.3e} exceeds 1% of mean gap {:.3e}",
                std, mean_gap
            ))
        },
    }
}

/// Concatenates a steady interior pattern `copies` times into a dynamic state
/// on `copies * n` cells.
pub fn tile_pattern(
    pattern: &SteadyVector,
    copies: usize,
    params: &ParameterSet,
) -> Result<DynamicState> {
    assert!(copies >= 1);
    assert!(pattern.len() % 2 == 0);
    let n = pattern.len() / 2;
    let big_n = n * copies;
    let mut p = DVector::zeros(big_n + 2);
    let mut a = DVector::zeros(big_n);
    for c in 0..copies {
        for i in 0..n {
            p[c * n + i + 1] = pattern[i];
            a[c * n + i] = pattern[n + i];
        }
    }
    p[0] = steady_pin_of_a(a[0], params)?;
    p[big_n + 1] = steady_pin_of_a(a[big_n - 1], params)?;
    Ok(DynamicState { p, a })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{count_peaks, steady_residual, trivial_solution};
    use approx::assert_relative_eq;

    fn row20() -> CellRow {
        CellRow::new(20).unwrap()
    }

    #[test]
    fn rk4_keeps_fixed_point() {
        let params = ParameterSet::preset("M2").unwrap();
        let row = row20();
        let u = trivial_solution(&row, &params).unwrap();
        let state = DynamicState::from_steady(&u, &row, &params).unwrap();
        let next = rk4_step(&state, 0.01, &row, &params).unwrap();
        assert!((next.p - &state.p).amax() <= 1e-13);
        assert!((next.a - &state.a).amax() <= 1e-13);
    }

    #[test]
    fn rk4_matches_scalar_decay() {
        let f = |v: &DVector<f64>| Ok(-v.clone());
        let mut v = DVector::from_vec(vec![1.0]);
        for _ in 0..10 {
            v = rk4_generic(&f, &v, 0.01).unwrap();
        }
        assert!((v[0] - (-0.1_f64).exp()).abs() <= 1e-10);
    }

    #[test]
    fn rk4_one_step_error_is_fifth_order() {
        let params = ParameterSet::preset("M1").unwrap();
        let row = row20();
        let state = perturbed_trivial(&row, &params, 0.2, 5).unwrap();
        let one_step_error = |dt: f64| {
            // Reference: many tiny steps over the same span.
            let sub = 200;
            let mut reference = state.clone();
            for _ in 0..sub {
                reference = rk4_step(&reference, dt / sub as f64, &row, &params).unwrap();
            }
            let coarse = rk4_step(&state, dt, &row, &params).unwrap();
            (coarse.a - reference.a).amax()
        };
        let e1 = one_step_error(0.2);
        let e2 = one_step_error(0.1);
        let ratio = e1 / e2;
        assert!(
            (16.0..64.0).contains(&ratio),
            "local order ratio {ratio} (e1={e1:.3e}, e2={e2:.3e})"
        );
    }

    #[test]
    fn perturbed_trivial_matches_stated_form() {
        let params = ParameterSet::preset("M1").unwrap();
        let row = row20();
        let flat = perturbed_trivial(&row, &params, 0.0, 5).unwrap();
        let (p_star, a_star) = trivial_values(&params).unwrap();
        assert!(flat.p.iter().all(|&v| v == p_star));
        assert!(flat.a.iter().all(|&v| v == a_star));

        let state = perturbed_trivial(&row, &params, 0.2, 5).unwrap();
        let expected = a_star + 0.2 * (15.0 * std::f64::consts::PI / 24.0).sin();
        assert_relative_eq!(state.a[0], expected, epsilon = 1e-14);
    }

    #[test]
    fn simulate_m1_relaxes_to_single_peak() {
        let params = ParameterSet::preset("M1").unwrap();
        let row = row20();
        let state0 = perturbed_trivial(&row, &params, 0.2, 5).unwrap();
        let traj = simulate(&state0, &row, &params, 200.0, 0.01, 100).unwrap();
        let last = traj.last();
        let rhs = dynamic_rhs(last, &row, &params).unwrap();
        assert!(rhs.max_abs() <= 1e-6, "residual {}", rhs.max_abs());
        assert_eq!(count_peaks(last.a.as_slice()), 1);
    }

    #[test]
    fn simulate_holds_newton_refined_steady_state() {
        let params = ParameterSet::preset("M1").unwrap();
        let row = row20();
        let state0 = perturbed_trivial(&row, &params, 0.2, 5).unwrap();
        let traj = simulate(&state0, &row, &params, 200.0, 0.01, 200).unwrap();
        let cfg = crate::numerics::NumericsConfig::default();
        let (u, _) = crate::numerics::newton_solve(
            |v| steady_residual(v, &row, &params),
            &traj.last().to_steady(),
            &cfg,
        )
        .unwrap();
        let steady = DynamicState::from_steady(&u, &row, &params).unwrap();
        let held = simulate(&steady, &row, &params, 10.0, 0.01, 100).unwrap();
        let drift = (held.last().a.clone() - &steady.a).amax();
        assert!(drift <= 1e-8, "drift {drift}");
    }

    #[test]
    fn simulate_is_deterministic() {
        let params = ParameterSet::preset("M3").unwrap();
        let row = row20();
        let state0 = perturbed_trivial(&row, &params, 0.02, 5).unwrap();
        let a = simulate(&state0, &row, &params, 5.0, 0.01, 10).unwrap();
        let b = simulate(&state0, &row, &params, 5.0, 0.01, 10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn orbit_analysis_rejects_steady_trajectory() {
        let params = ParameterSet::preset("M2").unwrap();
        let row = row20();
        let u = trivial_solution(&row, &params).unwrap();
        let state = DynamicState::from_steady(&u, &row, &params).unwrap();
        let traj = simulate(&state, &row, &params, 20.0, 0.01, 10).unwrap();
        let orbit = analyze_orbit(&traj, 6, 0.5);
        assert!(!orbit.converged);
        let width: f64 = orbit
            .envelope_max
            .iter()
            .zip(&orbit.envelope_min)
            .map(|(hi, lo)| hi - lo)
            .fold(0.0, f64::max);
        assert!(width <= 1e-8);
    }

    #[test]
    fn orbit_analysis_recovers_synthetic_period() {
        // a_6(t) = 2 + sin(0.5 t) has period 4 pi.
        let n = 20;
        let dt = 0.05;
        let mut traj = Trajectory {
            times: vec![],
            states: vec![],
            sample_stride: 1,
            dt,
        };
        for k in 0..=8000 {
            let t = k as f64 * dt;
            let mut a = DVector::from_element(n, 2.0);
            a[5] = 2.0 + (0.5 * t).sin();
            traj.times.push(t);
            traj.states.push(DynamicState {
                p: DVector::from_element(n + 2, 1.0),
                a,
            });
        }
        let orbit = analyze_orbit(&traj, 6, 0.25);
        assert!(orbit.converged, "{:?}", orbit.diagnostics);
        let expected = 4.0 * std::f64::consts::PI;
        assert!((orbit.period - expected).abs() <= 0.01 * expected);
    }

    #[test]
    fn tile_pattern_round_trip_and_peaks() {
        let params = ParameterSet::preset("M1").unwrap();
        let row = row20();
        let state0 = perturbed_trivial(&row, &params, 0.2, 5).unwrap();
        let traj = simulate(&state0, &row, &params, 200.0, 0.01, 200).unwrap();
        let pattern = traj.last().to_steady();

        let once = tile_pattern(&pattern, 1, &params).unwrap();
        assert_eq!(once.to_steady(), pattern);

        let tiled = tile_pattern(&pattern, 5, &params).unwrap();
        assert_eq!(tiled.a.len(), 100);
        assert_eq!(count_peaks(tiled.a.as_slice()), 5);
    }
}
