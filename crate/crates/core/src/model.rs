//! The coupled PIN1/IAA transport model on a one-dimensional file of cells.
//!
//! Cells are indexed `-1..=n+2` with interior cells `1..=n`. The two ghost
//! cells on each side realize zero-flux boundary conditions: IAA in a ghost
//! cell mirrors the nearest interior cell, while PIN1 in cells `0` and `n+1`
//! is a genuine dynamic variable coupled to the mirrored IAA value. PIN1 in
//! cells `-1` and `n+2` never enters the equations.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The eleven model constants plus the transport-family parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSet {
    /// Base for exponential PIN allocation.
    pub b: f64,
    /// PIN production saturation coefficient.
    pub kappa_pin: f64,
    /// Transport saturation coefficient.
    pub kappa_t: f64,
    /// IAA production saturation coefficient.
    pub kappa_iaa: f64,
    /// Base production rate of PIN (1/s).
    pub rho_pin0: f64,
    /// Auxin-driven PIN production rate (1/s).
    pub rho_pin: f64,
    /// PIN decay rate (1/s).
    pub mu_pin: f64,
    /// IAA decay rate (1/s).
    pub mu_iaa: f64,
    /// IAA production rate (1/s).
    pub rho_iaa: f64,
    /// IAA diffusion coefficient (1/s).
    pub d: f64,
    /// Polar IAA transport coefficient (1/s).
    pub t: f64,
    /// Blend between exponential (1) and linear (0) PIN allocation.
    #[serde(default = "default_omega")]
    pub omega: f64,
    /// Exponent of the auxin dependence in the active transport.
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_omega() -> f64 {
    1.0
}

fn default_tau() -> f64 {
    2.0
}

/// Identifies one continuously adjustable parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamId {
    B,
    KappaPin,
    KappaT,
    KappaIaa,
    RhoPin0,
    RhoPin,
    MuPin,
    MuIaa,
    RhoIaa,
    D,
    T,
    Omega,
    Tau,
}

impl ParamId {
    pub const ALL: [ParamId; 13] = [
        ParamId::B,
        ParamId::KappaPin,
        ParamId::KappaT,
        ParamId::KappaIaa,
        ParamId::RhoPin0,
        ParamId::RhoPin,
        ParamId::MuPin,
        ParamId::MuIaa,
        ParamId::RhoIaa,
        ParamId::D,
        ParamId::T,
        ParamId::Omega,
        ParamId::Tau,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ParamId::B => "b",
            ParamId::KappaPin => "kappa_pin",
            ParamId::KappaT => "kappa_t",
            ParamId::KappaIaa => "kappa_iaa",
            ParamId::RhoPin0 => "rho_pin0",
            ParamId::RhoPin => "rho_pin",
            ParamId::MuPin => "mu_pin",
            ParamId::MuIaa => "mu_iaa",
            ParamId::RhoIaa => "rho_iaa",
            ParamId::D => "d",
            ParamId::T => "t",
            ParamId::Omega => "omega",
            ParamId::Tau => "tau",
        }
    }

    pub fn parse(name: &str) -> Result<ParamId> {
        Self::ALL
            .iter()
            .copied()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    pub fn get(&self, params: &ParameterSet) -> f64 {
        match self {
            ParamId::B => params.b,
            ParamId::KappaPin => params.kappa_pin,
            ParamId::KappaT => params.kappa_t,
            ParamId::KappaIaa => params.kappa_iaa,
            ParamId::RhoPin0 => params.rho_pin0,
            ParamId::RhoPin => params.rho_pin,
            ParamId::MuPin => params.mu_pin,
            ParamId::MuIaa => params.mu_iaa,
            ParamId::RhoIaa => params.rho_iaa,
            ParamId::D => params.d,
            ParamId::T => params.t,
            ParamId::Omega => params.omega,
            ParamId::Tau => params.tau,
        }
    }

    pub fn set(&self, params: &mut ParameterSet, value: f64) {
        match self {
            ParamId::B => params.b = value,
            ParamId::KappaPin => params.kappa_pin = value,
            ParamId::KappaT => params.kappa_t = value,
            ParamId::KappaIaa => params.kappa_iaa = value,
            ParamId::RhoPin0 => params.rho_pin0 = value,
            ParamId::RhoPin => params.rho_pin = value,
            ParamId::MuPin => params.mu_pin = value,
            ParamId::MuIaa => params.mu_iaa = value,
            ParamId::RhoIaa => params.rho_iaa = value,
            ParamId::D => params.d = value,
            ParamId::T => params.t = value,
            ParamId::Omega => params.omega = value,
            ParamId::Tau => params.tau = value,
        }
    }

    pub fn with(&self, params: &ParameterSet, value: f64) -> ParameterSet {
        let mut out = *params;
        self.set(&mut out, value);
        out
    }
}

impl ParameterSet {
    /// The three tabulated parameter sets. They differ only in `rho_iaa`
    /// (1.5 / 0.75 / 0.5) and all use the exponential quadratic transport
    /// (omega = 1, tau = 2).
    pub fn preset(name: &str) -> Result<ParameterSet> {
        let rho_iaa = match name {
            "M1" | "m1" => 1.5,
            "M2" | "m2" => 0.75,
            "M3" | "m3" => 0.5,
            other => return Err(Error::UnknownPreset(other.to_string())),
        };
        Ok(ParameterSet {
            b: 3.0,
            kappa_pin: 1.0,
            kappa_t: 1.0,
            kappa_iaa: 1.0,
            rho_pin0: 0.0,
            rho_pin: 1.0,
            mu_pin: 0.1,
            mu_iaa: 0.1,
            rho_iaa,
            d: 1.0,
            t: 3.5,
            omega: 1.0,
            tau: 2.0,
        })
    }

    /// Checks the admissible ranges: all rates nonnegative and finite,
    /// `omega` in [0,1], `tau` positive.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("b", self.b),
            ("kappa_pin", self.kappa_pin),
            ("kappa_t", self.kappa_t),
            ("kappa_iaa", self.kappa_iaa),
            ("rho_pin0", self.rho_pin0),
            ("rho_pin", self.rho_pin),
            ("mu_pin", self.mu_pin),
            ("mu_iaa", self.mu_iaa),
            ("rho_iaa", self.rho_iaa),
            ("d", self.d),
            ("t", self.t),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::InvalidParameter(format!(
                "omega must lie in [0,1], got {}",
                self.omega
            )));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Geometry of the one-dimensional file of cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    /// Interior cell count.
    pub n: usize,
    /// All walls share the unit length; the value cancels from the equations.
    pub wall_length: f64,
}

impl CellRow {
    pub fn new(n: usize) -> Result<CellRow> {
        if n < 2 {
            return Err(Error::Config(format!("cell count must be >= 2, got {n}")));
        }
        Ok(CellRow { n, wall_length: 1.0 })
    }

    /// Dimension of the steady unknown vector.
    pub fn dim(&self) -> usize {
        2 * self.n
    }
}

/// Dynamic state: PIN1 in cells `0..=n+1` (two tracked ghosts) and IAA in the
/// interior cells.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicState {
    /// PIN1 concentrations, length n+2, entry k holds cell k.
    pub p: DVector<f64>,
    /// IAA concentrations, length n, entry k holds cell k+1.
    pub a: DVector<f64>,
}

/// Steady unknown vector of length 2n, ordered (p_1..p_n, a_1..a_n).
pub type SteadyVector = DVector<f64>;

impl DynamicState {
    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// IAA value of cell `i` with ghost mirroring.
    pub fn a_cell(&self, i: isize) -> f64 {
        mirror_a(self.a.as_slice(), i)
    }

    /// Builds a dynamic state from a steady vector; ghost PIN comes from the
    /// closed-form steady value at the mirrored IAA concentration.
    pub fn from_steady(u: &SteadyVector, row: &CellRow, params: &ParameterSet) -> Result<DynamicState> {
        let n = row.n;
        assert_eq!(u.len(), 2 * n);
        let mut p = DVector::zeros(n + 2);
        let a = DVector::from_fn(n, |i, _| u[n + i]);
        p[0] = steady_pin_of_a(a[0], params)?;
        p[n + 1] = steady_pin_of_a(a[n - 1], params)?;
        for i in 0..n {
            p[i + 1] = u[i];
        }
        Ok(DynamicState { p, a })
    }

    /// Interior part as a steady vector (ghost PIN dropped).
    pub fn to_steady(&self) -> SteadyVector {
        let n = self.n();
        let mut u = DVector::zeros(2 * n);
        for i in 0..n {
            u[i] = self.p[i + 1];
            u[n + i] = self.a[i];
        }
        u
    }

    pub fn max_abs(&self) -> f64 {
        self.p.amax().max(self.a.amax())
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.a.iter()).all(|v| v.is_finite())
    }
}

/// Mirrored IAA lookup on an interior slice: cells `<= 0` map to cell 1 and
/// cells `>= n+1` map to cell n.
fn mirror_a(a: &[f64], i: isize) -> f64 {
    let n = a.len() as isize;
    if i <= 0 {
        a[0]
    } else if i >= n + 1 {
        a[(n - 1) as usize]
    } else {
        a[(i - 1) as usize]
    }
}

/// `x^tau` with integer exponents extended to negative bases; fractional
/// exponents of negative values are undefined and rejected.
pub fn pow_tau(x: f64, tau: f64) -> Result<f64> {
    if x >= 0.0 {
        Ok(x.powf(tau))
    } else if tau.fract() == 0.0 {
        Ok(x.powi(tau as i32))
    } else {
        Err(Error::FractionalPower { value: x, tau })
    }
}

/// PIN allocation weight of a neighbor with IAA concentration `a_j`:
/// `omega * b^a_j + (1 - omega) * a_j`.
pub fn allocation_weight(a_j: f64, params: &ParameterSet) -> f64 {
    params.omega * params.b.powf(a_j) + (1.0 - params.omega) * a_j
}

/// Directed active transport out of a cell holding (`p_i`, `a_i`) into a
/// neighbor holding `a_j`. `weight_sum` is the allocation normalization of the
/// source cell, i.e. the sum of `allocation_weight` over its neighbors.
pub fn active_transport(
    p_i: f64,
    a_i: f64,
    a_j: f64,
    weight_sum: f64,
    params: &ParameterSet,
) -> Result<f64> {
    if !(weight_sum > 0.0) {
        return Err(Error::DegenerateDenominator { cell: -1 });
    }
    let num = pow_tau(a_i, params.tau)?;
    let sat = 1.0 + params.kappa_t * pow_tau(a_j, params.tau)?;
    Ok(params.t * p_i * allocation_weight(a_j, params) / weight_sum * num / sat)
}

fn pin_rate(a: f64, p: f64, params: &ParameterSet) -> f64 {
    (params.rho_pin0 + params.rho_pin * a) / (1.0 + params.kappa_pin * p) - params.mu_pin * p
}

/// Net IAA rate of interior cell `i` given cell-indexed lookups for PIN and
/// (mirrored) IAA.
fn iaa_rate(
    i: isize,
    p_at: &dyn Fn(isize) -> f64,
    a_at: &dyn Fn(isize) -> f64,
    params: &ParameterSet,
) -> Result<f64> {
    let a_i = a_at(i);
    let mut rate = params.rho_iaa / (1.0 + params.kappa_iaa * a_i) - params.mu_iaa * a_i;
    let wsum_i = allocation_weight(a_at(i - 1), params) + allocation_weight(a_at(i + 1), params);
    for j in [i - 1, i + 1] {
        let a_j = a_at(j);
        rate -= params.d * (a_i - a_j);
        let wsum_j = allocation_weight(a_at(j - 1), params) + allocation_weight(a_at(j + 1), params);
        let incoming = active_transport(p_at(j), a_j, a_i, wsum_j, params)
            .map_err(|_| Error::DegenerateDenominator { cell: j })?;
        let outgoing = active_transport(p_at(i), a_i, a_j, wsum_i, params)
            .map_err(|_| Error::DegenerateDenominator { cell: i })?;
        rate += incoming - outgoing;
    }
    Ok(rate)
}

/// Time derivative of the dynamic state.
pub fn dynamic_rhs(state: &DynamicState, row: &CellRow, params: &ParameterSet) -> Result<DynamicState> {
    let n = row.n;
    assert_eq!(state.a.len(), n);
    assert_eq!(state.p.len(), n + 2);
    let a = state.a.as_slice();
    let a_at = |i: isize| mirror_a(a, i);
    let p_at = |i: isize| state.p[i as usize];

    let mut dp = DVector::zeros(n + 2);
    for k in 0..n + 2 {
        dp[k] = pin_rate(a_at(k as isize), state.p[k], params);
    }
    let mut da = DVector::zeros(n);
    for i in 1..=n {
        da[i - 1] = iaa_rate(i as isize, &p_at, &a_at, params)?;
    }
    Ok(DynamicState { p: dp, a: da })
}

/// Steady PIN concentration coupled to a fixed IAA value, the positive root of
/// the steady PIN equation. Used to eliminate the ghost PIN unknowns.
pub fn steady_pin_of_a(a: f64, params: &ParameterSet) -> Result<f64> {
    if params.mu_pin <= 0.0 {
        return Err(Error::Domain("mu_pin must be positive".into()));
    }
    let prod = params.rho_pin0 + params.rho_pin * a;
    if params.kappa_pin == 0.0 {
        return Ok(prod / params.mu_pin);
    }
    let radicand = 1.0 + 4.0 * params.kappa_pin * prod / params.mu_pin;
    if radicand < 0.0 {
        return Err(Error::Domain(format!(
            "steady PIN root undefined for a = {a}"
        )));
    }
    Ok((-1.0 + radicand.sqrt()) / (2.0 * params.kappa_pin))
}

/// Steady residual of the 2n-dimensional system. The first n entries are the
/// steady PIN equations of the interior cells; the last n entries the steady
/// IAA equations with ghost PIN eliminated through [`steady_pin_of_a`].
pub fn steady_residual(u: &SteadyVector, row: &CellRow, params: &ParameterSet) -> Result<DVector<f64>> {
    let n = row.n;
    assert_eq!(u.len(), 2 * n);
    let a = &u.as_slice()[n..];
    let a_at = |i: isize| mirror_a(a, i);
    let p_ghost_left = steady_pin_of_a(a_at(0), params)?;
    let p_ghost_right = steady_pin_of_a(a_at(n as isize + 1), params)?;
    let p_at = move |i: isize| {
        if i == 0 {
            p_ghost_left
        } else if i == n as isize + 1 {
            p_ghost_right
        } else {
            u[(i - 1) as usize]
        }
    };

    let mut res = DVector::zeros(2 * n);
    for i in 1..=n {
        res[i - 1] = pin_rate(a_at(i as isize), u[i - 1], params);
    }
    for i in 1..=n {
        res[n + i - 1] = iaa_rate(i as isize, &p_at, &a_at, params)?;
    }
    Ok(res)
}

/// The spatially homogeneous steady state in closed form. Independent of D, T,
/// omega and tau.
pub fn trivial_solution(row: &CellRow, params: &ParameterSet) -> Result<SteadyVector> {
    let (p_star, a_star) = trivial_values(params)?;
    let n = row.n;
    let mut u = DVector::zeros(2 * n);
    for i in 0..n {
        u[i] = p_star;
        u[n + i] = a_star;
    }
    Ok(u)
}

/// Closed-form concentrations (p*, a*) of the trivial solution.
pub fn trivial_values(params: &ParameterSet) -> Result<(f64, f64)> {
    if params.mu_iaa <= 0.0 || params.mu_pin <= 0.0 {
        return Err(Error::Domain("decay rates must be positive".into()));
    }
    if params.kappa_iaa <= 0.0 || params.kappa_pin <= 0.0 {
        return Err(Error::Domain("saturation coefficients must be positive".into()));
    }
    let a_star = (-1.0
        + (1.0 + 4.0 * params.kappa_iaa * params.rho_iaa / params.mu_iaa).sqrt())
        / (2.0 * params.kappa_iaa);
    let p_star = steady_pin_of_a(a_star, params)?;
    Ok((p_star, a_star))
}

/// Reflection i -> n+1-i of a steady vector.
pub fn reflect_steady(u: &SteadyVector, n: usize) -> SteadyVector {
    let mut out = DVector::zeros(2 * n);
    for i in 0..n {
        out[i] = u[n - 1 - i];
        out[n + i] = u[2 * n - 1 - i];
    }
    out
}

/// Reflection of a dynamic state (both ghost PIN cells swap ends).
pub fn reflect_dynamic(state: &DynamicState) -> DynamicState {
    let m = state.p.len();
    let n = state.a.len();
    DynamicState {
        p: DVector::from_fn(m, |i, _| state.p[m - 1 - i]),
        a: DVector::from_fn(n, |i, _| state.a[n - 1 - i]),
    }
}

/// Counts peaks in a concentration profile: strict local maxima that exceed
/// the profile mean.
pub fn count_peaks(a: &[f64]) -> usize {
    if a.len() < 2 {
        return 0;
    }
    let mean = a.iter().sum::<f64>() / a.len() as f64;
    let mut count = 0;
    let mut i = 0;
    while i < a.len() {
        // Treat a run of equal values as one candidate plateau.
        let mut j = i;
        while j + 1 < a.len() && a[j + 1] == a[i] {
            j += 1;
        }
        let left_ok = i == 0 || a[i] > a[i - 1];
        let right_ok = j == a.len() - 1 || a[j] > a[j + 1];
        if left_ok && right_ok && a[i] > mean {
            count += 1;
        }
        i = j + 1;
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn row20() -> CellRow {
        CellRow::new(20).unwrap()
    }

    #[test]
    fn presets_match_table() {
        let m2 = ParameterSet::preset("M2").unwrap();
        assert_eq!(m2.rho_iaa, 0.75);
        assert_eq!(m2.t, 3.5);
        assert_eq!(m2.d, 1.0);
        assert_eq!(m2.mu_iaa, 0.1);
        assert_eq!(m2.omega, 1.0);
        assert_eq!(m2.tau, 2.0);

        let m1 = ParameterSet::preset("M1").unwrap();
        let m3 = ParameterSet::preset("M3").unwrap();
        assert_eq!(m1.rho_iaa, 1.5);
        assert_eq!(m3.rho_iaa, 0.5);
        let strip = |mut p: ParameterSet| {
            p.rho_iaa = 0.0;
            p
        };
        assert_eq!(strip(m1), strip(m2));
        assert_eq!(strip(m3), strip(m2));
    }

    #[test]
    fn unknown_preset_is_an_error() {
        let err = ParameterSet::preset("M4").unwrap_err();
        assert!(err.to_string().contains("M1, M2, M3"));
    }

    #[test]
    fn allocation_weight_cases() {
        let mut p = ParameterSet::preset("M1").unwrap();
        assert_relative_eq!(allocation_weight(2.0, &p), 9.0);
        p.omega = 0.0;
        assert_relative_eq!(allocation_weight(2.0, &p), 2.0);
        p.omega = 0.5;
        assert_relative_eq!(allocation_weight(2.0, &p), 5.5);
    }

    #[test]
    fn active_transport_direct_evaluation() {
        let p = ParameterSet::preset("M1").unwrap();
        let wsum = 3.0_f64 + 27.0;
        let flux = active_transport(2.0, 2.0, 3.0, wsum, &p).unwrap();
        assert_relative_eq!(flux, 2.52, epsilon = 1e-12);
    }

    #[test]
    fn active_transport_zero_source() {
        let p = ParameterSet::preset("M1").unwrap();
        assert_eq!(active_transport(2.0, 0.0, 3.0, 30.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn active_transport_symmetric_at_homogeneous_state() {
        let p = ParameterSet::preset("M2").unwrap();
        let (ps, as_) = trivial_values(&p).unwrap();
        let wsum = 2.0 * allocation_weight(as_, &p);
        let fwd = active_transport(ps, as_, as_, wsum, &p).unwrap();
        let bwd = active_transport(ps, as_, as_, wsum, &p).unwrap();
        assert_eq!(fwd, bwd);
    }

    #[test]
    fn degenerate_denominator_at_omega_zero() {
        let mut p = ParameterSet::preset("M1").unwrap();
        p.omega = 0.0;
        assert!(matches!(
            active_transport(1.0, 1.0, 0.0, 0.0, &p),
            Err(Error::DegenerateDenominator { .. })
        ));
    }

    #[test]
    fn trivial_values_closed_form() {
        let m2 = ParameterSet::preset("M2").unwrap();
        let (p2, a2) = trivial_values(&m2).unwrap();
        assert_relative_eq!(a2, (-1.0 + 31.0_f64.sqrt()) / 2.0, epsilon = 1e-14);
        assert_relative_eq!(a2, 2.283882, epsilon = 1e-6);
        assert_relative_eq!(p2, 4.3050829, epsilon = 1e-6);

        let m1 = ParameterSet::preset("M1").unwrap();
        let (p1, a1) = trivial_values(&m1).unwrap();
        assert_relative_eq!(a1, (-1.0 + 61.0_f64.sqrt()) / 2.0, epsilon = 1e-14);
        assert_relative_eq!(a1, 3.405125, epsilon = 1e-6);
        assert_relative_eq!(p1, 5.3567268, epsilon = 1e-6);

        let m3 = ParameterSet::preset("M3").unwrap();
        let (p3, a3) = trivial_values(&m3).unwrap();
        assert_relative_eq!(a3, 1.791288, epsilon = 1e-6);
        assert_relative_eq!(p3, 3.7617929, epsilon = 1e-6);
    }

    #[test]
    fn trivial_values_rejects_zero_coefficients() {
        let mut p = ParameterSet::preset("M2").unwrap();
        p.mu_iaa = 0.0;
        assert!(trivial_values(&p).is_err());
        let mut p = ParameterSet::preset("M2").unwrap();
        p.kappa_iaa = 0.0;
        assert!(trivial_values(&p).is_err());
    }

    #[test]
    fn trivial_solution_has_zero_residual() {
        for name in ["M1", "M2", "M3"] {
            let params = ParameterSet::preset(name).unwrap();
            let row = row20();
            let u = trivial_solution(&row, &params).unwrap();
            let res = steady_residual(&u, &row, &params).unwrap();
            assert!(res.amax() <= 1e-12, "{name}: {}", res.amax());
        }
    }

    #[test]
    fn trivial_residual_across_transport_family() {
        let row = row20();
        for name in ["M1", "M2", "M3"] {
            for omega in [0.0, 0.5, 1.0] {
                for tau in [0.5, 1.0, 2.0] {
                    let mut params = ParameterSet::preset(name).unwrap();
                    params.omega = omega;
                    params.tau = tau;
                    let u = trivial_solution(&row, &params).unwrap();
                    let res = steady_residual(&u, &row, &params).unwrap();
                    assert!(
                        res.amax() <= 1e-10,
                        "{name} omega={omega} tau={tau}: {}",
                        res.amax()
                    );
                }
            }
        }
    }

    #[test]
    fn dynamic_rhs_vanishes_at_trivial_state() {
        let params = ParameterSet::preset("M2").unwrap();
        let row = row20();
        let u = trivial_solution(&row, &params).unwrap();
        let state = DynamicState::from_steady(&u, &row, &params).unwrap();
        let rhs = dynamic_rhs(&state, &row, &params).unwrap();
        assert!(rhs.max_abs() <= 1e-12);
    }

    #[test]
    fn dynamic_rhs_is_reflection_equivariant() {
        let params = ParameterSet::preset("M1").unwrap();
        let row = CellRow::new(7).unwrap();
        let p = DVector::from_iterator(9, (0..9).map(|k| 4.0 + 0.3 * (k as f64).sin()));
        let a = DVector::from_iterator(7, (0..7).map(|k| 3.0 + 0.2 * (1.7 * k as f64).cos()));
        let state = DynamicState { p, a };
        let fwd = dynamic_rhs(&state, &row, &params).unwrap();
        let bwd = dynamic_rhs(&reflect_dynamic(&state), &row, &params).unwrap();
        let diff = (reflect_dynamic(&fwd).p - &bwd.p).amax().max((reflect_dynamic(&fwd).a - &bwd.a).amax());
        assert!(diff <= 1e-14, "reflection drift {diff}");
    }

    #[test]
    fn steady_residual_locality() {
        // Perturbing a single IAA value touches only cells within the
        // second-neighbor stencil.
        let params = ParameterSet::preset("M1").unwrap();
        let row = row20();
        let n = row.n;
        let base = trivial_solution(&row, &params).unwrap();
        let mut u = base.clone();
        u[n + 5] += 0.1; // a_6
        let res = steady_residual(&u, &row, &params).unwrap();
        for i in 1..=n {
            let pin_row = res[i - 1].abs();
            let iaa_row = res[n + i - 1].abs();
            if i == 6 {
                assert!(pin_row > 1e-6);
            } else {
                assert!(pin_row <= 1e-13, "pin row {i}: {pin_row}");
            }
            if (4..=8).contains(&i) {
                assert!(iaa_row > 1e-9, "iaa row {i} unexpectedly zero");
            } else {
                assert!(iaa_row <= 1e-13, "iaa row {i}: {iaa_row}");
            }
        }
    }

    #[test]
    fn fractional_power_of_negative_errors() {
        assert!(pow_tau(-0.5, 0.5).is_err());
        assert_eq!(pow_tau(-2.0, 2.0).unwrap(), 4.0);
        assert_eq!(pow_tau(-2.0, 3.0).unwrap(), -8.0);
    }

    #[test]
    fn parameter_json_round_trip() {
        let params = ParameterSet::preset("M1").unwrap();
        let text = serde_json::to_string(&params).unwrap();
        for key in [
            "\"b\"", "\"kappa_pin\"", "\"kappa_t\"", "\"kappa_iaa\"", "\"rho_pin0\"",
            "\"rho_pin\"", "\"mu_pin\"", "\"mu_iaa\"", "\"rho_iaa\"", "\"d\"", "\"t\"",
            "\"omega\"", "\"tau\"",
        ] {
            assert!(text.contains(key), "missing {key} in {text}");
        }
        let back: ParameterSet = serde_json::from_str(&text).unwrap();
        assert_eq!(back, params);
        // Unknown keys are rejected.
        assert!(serde_json::from_str::<ParameterSet>(
            &text.replace("\"b\":", "\"bogus\":")
        )
        .is_err());
    }

    #[test]
    fn count_peaks_basic() {
        assert_eq!(count_peaks(&[0.0, 1.0, 0.0, 1.0, 0.0]), 2);
        assert_eq!(count_peaks(&[1.0, 1.0, 1.0]), 0);
        assert_eq!(count_peaks(&[5.0, 0.1, 0.1, 0.1]), 1);
        // A flat-topped peak counts once; a fully flat profile not at all.
        assert_eq!(count_peaks(&[0.0, 2.0, 2.0, 0.0, 3.0, 0.0]), 2);
        assert_eq!(count_peaks(&[1.0, 1.0, 1.0, 1.0]), 0);
    }
}
