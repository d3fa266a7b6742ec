//! Local energies near a point, empirical constants for their decay
//! estimates, and the iteration lemma behind those estimates.
//!
//! All constants reported here are measured on finite data. They support
//! the estimates numerically and prove nothing.

use rayon::prelude::*;

use crate::capacity::CapacityProblem;
use crate::elliptic::{local_dirichlet_energy, local_l2_squared, EllipticCoefficients, Field};
use crate::error::{Error, Result};
use crate::green::green_on_ball;
use crate::grid::{dist, mask, BallSpec, NodeSet, Shape};
use crate::measures::{cell_mu_energy, kato_norm, MeasureSpec};
use crate::relaxed::{local_oscillation, Oscillation};
use crate::wiener::{Verdict, WienerProfile};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyOptions {
    /// Green functions live on `B_{2r/q}(x₀)`; `q` must lie in `(0, 1/(5m))`.
    pub q: f64,
    pub m: f64,
    /// Radius, in grid spacings, of the neighbourhood of `x₀` left out of
    /// the Green-weighted integrals.
    pub exclusion: f64,
    pub rel_tol: f64,
    /// Largest Green-ball radius, in fine spacings, solved on a single
    /// grid; larger balls use a coarse outer level. `None` picks 512 in 2-D
    /// and 48 in 3-D.
    pub max_green_cells: Option<usize>,
}

impl Default for EnergyOptions {
    fn default() -> Self {
        EnergyOptions {
            q: 0.125,
            m: 1.0,
            exclusion: 2.0,
            rel_tol: crate::elliptic::DEFAULT_REL_TOL,
            max_green_cells: None,
        }
    }
}

impl EnergyOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.m >= 1.0) {
            return Err(Error::invalid(format!("m must be at least 1, got {}", self.m)));
        }
        if !(self.q > 0.0 && self.q < 1.0 / (5.0 * self.m)) {
            return Err(Error::invalid(format!(
                "q must lie in (0, 1/(5m)) = (0, {}), got {}",
                1.0 / (5.0 * self.m),
                self.q
            )));
        }
        if !(self.exclusion >= 0.0) {
            return Err(Error::invalid("exclusion radius must be nonnegative"));
        }
        crate::elliptic::SolverOptions::with_tol(self.rel_tol).validate()
    }

    fn green_cells(&self, dim: usize) -> usize {
        self.max_green_cells
            .unwrap_or(if dim == 2 { 512 } else { 48 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VReport {
    pub r: f64,
    pub value: f64,
    /// `max u²` over the nodes of `B_r`.
    pub sup: f64,
    /// `∫_{B_r} |Du|² G dx` without the excluded cells.
    pub gradient_term: f64,
    /// `∫_{B_r} u² G dμ` without the excluded cells.
    pub mu_term: f64,
    /// Both weighted terms over the excluded cells (not part of `value`).
    pub excluded: f64,
    pub cells: usize,
    pub excluded_cells: usize,
}

fn check_point(u: &Field, x0: &[f64], r: f64) -> Result<()> {
    if x0.len() != u.grid().dim() {
        return Err(Error::invalid("point dimension differs from the grid"));
    }
    if !(r > 0.0) {
        return Err(Error::invalid("radius must be positive"));
    }
    if !u.grid().contains_ball(&BallSpec::new(x0, r)) {
        return Err(Error::Geometry(format!("B_{r}({x0:?}) leaves the solution grid")));
    }
    Ok(())
}

/// `V(r) = sup_{B_r} u² + ∫_{B_r} |Du|² G dx + ∫_{B_r} u² G dμ` with
/// `G = G^{x₀}_{B_{2r/q}}`, sampled at cell centres. Cells whose centre lies
/// within `exclusion · h` of `x₀` are left out of both integrals.
pub fn local_energy_v(
    u: &Field,
    x0: &[f64],
    r: f64,
    mu: &MeasureSpec,
    coeffs: &EllipticCoefficients,
    opts: &EnergyOptions,
) -> Result<VReport> {
    opts.validate()?;
    check_point(u, x0, r)?;
    let grid = u.grid();
    let d = grid.dim();
    let h = grid.spacing();
    let ball = BallSpec::new(x0, r);
    let sup = grid
        .nodes_in_ball(&ball)
        .iter()
        .map(|&n| u.get(n) * u.get(n))
        .fold(0.0, f64::max);
    let green = green_on_ball(grid, x0, 2.0 * r / opts.q, r, coeffs, opts.rel_tol, opts.green_cells(d))?;
    let gg = green.grid();
    let (mut kept, mut dropped) = (Vec::new(), Vec::new());
    for c in grid.cells_in_ball(&ball) {
        let centre = grid.cell_center(c);
        let origin = gg
            .locate(&grid.coord(c)[..d])
            .ok_or_else(|| Error::Geometry("Green grid does not cover the ball".into()))?;
        let corners = gg.cell_corners(origin);
        let w = corners[..gg.corners_per_cell()]
            .iter()
            .map(|&k| green.get(k))
            .sum::<f64>()
            / gg.corners_per_cell() as f64;
        if dist(&centre[..d], x0) > opts.exclusion * h {
            kept.push((c, w));
        } else {
            dropped.push((c, w));
        }
    }
    let weighted = |set: &[(usize, f64)]| -> Result<(f64, f64)> {
        let cells: Vec<usize> = set.iter().map(|p| p.0).collect();
        let w: Vec<f64> = set.iter().map(|p| p.1).collect();
        Ok((
            local_dirichlet_energy(u, &cells, Some(&w)),
            cell_mu_energy(mu, u, &cells, Some(&w))?,
        ))
    };
    let (gradient_term, mu_term) = weighted(&kept)?;
    let (ex_grad, ex_mu) = weighted(&dropped)?;
    Ok(VReport {
        r,
        value: sup + gradient_term + mu_term,
        sup,
        gradient_term,
        mu_term,
        excluded: ex_grad + ex_mu,
        cells: kept.len(),
        excluded_cells: dropped.len(),
    })
}

/// `E_μ(r) = ∫_{B_r} |Du|² dx + ∫_{B_r} u² dμ` over the cells whose centre
/// lies in `B_r(x₀)`.
pub fn mu_energy(u: &Field, x0: &[f64], r: f64, mu: &MeasureSpec) -> Result<f64> {
    check_point(u, x0, r)?;
    let cells = u.grid().cells_in_ball(&BallSpec::new(x0, r));
    Ok(local_dirichlet_energy(u, &cells, None) + cell_mu_energy(mu, u, &cells, None)?)
}

/// `‖ν‖_{K_N(B_r(x₀))}` evaluated on the grid cropped to the ball.
pub fn local_kato(nu: &MeasureSpec, x0: &[f64], r: f64) -> Result<f64> {
    let ball = BallSpec::new(x0, r);
    let local = match nu.grid() {
        Some(g) => nu.crop_to(&g.crop_to_ball(&ball)?)?,
        None => nu.clone(),
    };
    Ok(kato_norm(&local, &ball, None)?.value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyProfile {
    pub x0: Vec<f64>,
    pub q: f64,
    /// Radii in decreasing order.
    pub radii: Vec<f64>,
    pub v: Vec<VReport>,
    pub e_mu: Vec<f64>,
    /// `‖ν‖_{K_N(B_r)}` per radius.
    pub kato: Vec<f64>,
    /// Largest relative decrease of `V` as `r` grows (0 when monotone).
    pub monotonicity_defect: f64,
}

impl EnergyProfile {
    pub fn values(&self) -> Vec<f64> {
        self.v.iter().map(|v| v.value).collect()
    }

    pub fn is_monotone(&self, rel_tol: f64) -> bool {
        self.monotonicity_defect <= 5.0 * rel_tol
    }

    /// True when `V` strictly decreases along the (decreasing) radii.
    pub fn strictly_decreasing(&self) -> bool {
        self.v.windows(2).all(|w| w[1].value < w[0].value)
    }

    /// Rows `(r, V, sup u², gradient term, μ term, excluded, E_μ, Kato)`.
    pub fn rows(&self) -> Vec<[f64; 8]> {
        self.v
            .iter()
            .zip(&self.e_mu)
            .zip(&self.kato)
            .map(|((v, e), k)| [v.r, v.value, v.sup, v.gradient_term, v.mu_term, v.excluded, *e, *k])
            .collect()
    }
}

/// `V`, `E_μ` and the Kato norm of `ν` at each radius.
pub fn energy_profile(
    u: &Field,
    x0: &[f64],
    radii: &[f64],
    mu: &MeasureSpec,
    nu: &MeasureSpec,
    coeffs: &EllipticCoefficients,
    opts: &EnergyOptions,
) -> Result<EnergyProfile> {
    if radii.is_empty() || radii.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::invalid("radii must be non-empty and strictly decreasing"));
    }
    let rows = radii
        .par_iter()
        .map(|&r| -> Result<(VReport, f64, f64)> {
            Ok((
                local_energy_v(u, x0, r, mu, coeffs, opts)?,
                mu_energy(u, x0, r, mu)?,
                local_kato(nu, x0, r)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut v = Vec::new();
    let mut e_mu = Vec::new();
    let mut kato = Vec::new();
    for (a, b, c) in rows {
        v.push(a);
        e_mu.push(b);
        kato.push(c);
    }
    let mut defect: f64 = 0.0;
    for w in v.windows(2) {
        // w[0] has the larger radius
        if w[1].value > w[0].value {
            defect = defect.max((w[1].value - w[0].value) / w[0].value.max(f64::MIN_POSITIVE));
        }
    }
    Ok(EnergyProfile {
        x0: x0.to_vec(),
        q: opts.q,
        radii: radii.to_vec(),
        v,
        e_mu,
        kato,
        monotonicity_defect: defect,
    })
}

/// One `(r, R)` comparison `lhs <= k (ω^β a + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitPair {
    pub r: f64,
    pub big_r: f64,
    pub lhs: f64,
    pub omega: f64,
    pub a: f64,
    pub b: f64,
    pub training: bool,
    /// `lhs / (k (ω^β a + b))` at the reported constants.
    pub ratio: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateFit {
    pub k: f64,
    pub beta: f64,
    /// A `(k, β)` with `k <= MAX_FIT_K` passed every validation pair.
    pub passed: bool,
    pub pairs: Vec<FitPair>,
    pub max_ratio: f64,
    /// `(β, k(β), passes validation)` for every candidate.
    pub candidates: Vec<(f64, f64, bool)>,
}

impl EstimateFit {
    /// Whether the reported constants satisfy every pair, training and
    /// validation alike.
    pub fn holds_on_all_pairs(&self) -> bool {
        self.pairs.iter().all(|p| p.holds)
    }
}

pub const MAX_FIT_K: f64 = 1e6;
const FIT_SLACK: f64 = 1e-12;

fn unit_rhs(omega: f64, a: f64, b: f64, beta: f64) -> f64 {
    omega.powf(beta) * a + b
}

fn needed_k(lhs: f64, unit: f64) -> f64 {
    if lhs <= 0.0 {
        0.0
    } else if unit > 0.0 {
        lhs / unit
    } else {
        f64::INFINITY
    }
}

/// Grid search over `β ∈ {0.1, ..., 2.0}`. For each `β`, `k` is the largest
/// ratio over the training pairs; the reported pair has the smallest `k`
/// among those passing every validation pair (ties go to the larger `β`).
/// Pairs alternate between training and validation; with a single pair it
/// serves as both.
pub fn fit_constants(samples: &[(f64, f64, f64, f64, f64, f64)]) -> Result<EstimateFit> {
    fit_constants_above(samples, 0.0)
}

/// As [`fit_constants`], with every candidate `k` raised to at least
/// `k_floor`, a lower bound the inequality itself forces.
pub fn fit_constants_above(samples: &[(f64, f64, f64, f64, f64, f64)], k_floor: f64) -> Result<EstimateFit> {
    if samples.is_empty() {
        return Err(Error::invalid("no (r, R) pairs to fit"));
    }
    let training = |i: usize| i.is_multiple_of(2);
    let validating = |i: usize| samples.len() == 1 || i % 2 == 1;
    let mut candidates = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for step in 1..=20 {
        let beta = step as f64 / 10.0;
        let k = samples
            .iter()
            .enumerate()
            .filter(|(i, _)| training(*i))
            .map(|(_, &(_, _, lhs, w, a, b))| needed_k(lhs, unit_rhs(w, a, b, beta)))
            .fold(k_floor, f64::max)
            .max(f64::MIN_POSITIVE);
        let passes = k <= MAX_FIT_K
            && samples.iter().enumerate().filter(|(i, _)| validating(*i)).all(
                |(_, &(_, _, lhs, w, a, b))| lhs <= k * unit_rhs(w, a, b, beta) * (1.0 + FIT_SLACK),
            );
        candidates.push((beta, k, passes));
        if passes && best.is_none_or(|(bk, _)| k <= bk) {
            best = Some((k, beta));
        }
    }
    let passed = best.is_some();
    let (k, beta) = best.unwrap_or_else(|| {
        // report the candidate with the smallest validation excess
        candidates
            .iter()
            .map(|&(beta, k, _)| (k, beta))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("twenty candidates")
    });
    let mut max_ratio: f64 = 0.0;
    let pairs = samples
        .iter()
        .enumerate()
        .map(|(i, &(r, big_r, lhs, omega, a, b))| {
            let rhs = k * unit_rhs(omega, a, b, beta);
            let ratio = if lhs <= 0.0 { 0.0 } else if rhs > 0.0 { lhs / rhs } else { f64::INFINITY };
            max_ratio = max_ratio.max(ratio);
            FitPair {
                r,
                big_r,
                lhs,
                omega,
                a,
                b,
                training: training(i),
                ratio,
                holds: ratio <= 1.0 + FIT_SLACK,
            }
        })
        .collect();
    if !passed {
        log::warn!("no (k, β) with k <= {MAX_FIT_K} satisfies the validation pairs");
    }
    Ok(EstimateFit {
        k,
        beta,
        passed,
        pairs,
        max_ratio,
        candidates,
    })
}

/// Every `(r, R)` with `r < R` from the profile radii, larger `R` first.
fn radius_pairs(radii: &[f64]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..radii.len() {
        for j in i + 1..radii.len() {
            out.push((j, i));
        }
    }
    out
}

/// Fits `V(r) <= k ω(r, R)^β V(R) + k ‖ν‖²_{K_N(B_R)}` over all radius
/// pairs of the profile, with `ω` read from a Wiener profile covering them.
///
/// Letting `r → R`, where `ω → 1`, the inequality needs
/// `k >= V(R) / (V(R) + ‖ν‖²)`; the fit starts from the largest such bound
/// over the profile radii, so a monotone `V` with `ω ≡ 1` passes with `k = 1`.
pub fn verify_energy_decay(profile: &EnergyProfile, wiener: &WienerProfile) -> Result<EstimateFit> {
    let k_floor = profile
        .v
        .iter()
        .zip(&profile.kato)
        .map(|(v, kato)| {
            let total = v.value + kato * kato;
            if total > 0.0 { v.value / total } else { 0.0 }
        })
        .fold(0.0, f64::max);
    let mut samples = Vec::new();
    for (j, i) in radius_pairs(&profile.radii) {
        let (r, big_r) = (profile.radii[j], profile.radii[i]);
        let omega = wiener.omega(r, big_r)?;
        samples.push((
            r,
            big_r,
            profile.v[j].value,
            omega,
            profile.v[i].value,
            profile.kato[i] * profile.kato[i],
        ));
    }
    fit_constants_above(&samples, k_floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityReport {
    pub oscillations: Vec<Oscillation>,
    pub radii: Vec<f64>,
    /// Oscillation at the smallest radius over that at the largest.
    pub osc_ratio: f64,
    /// `|average|` at the smallest radius over that at the largest.
    pub average_ratio: f64,
    pub v_strictly_decreasing: bool,
    pub osc_nonincreasing: bool,
}

/// Oscillation and ball averages of `u` on shrinking balls around `x₀`,
/// together with the trend of `V`. Refuses points not classified as Wiener
/// points.
pub fn continuity_report(
    verdict: Verdict,
    u: &Field,
    x0: &[f64],
    radii: &[f64],
    profile: &EnergyProfile,
) -> Result<ContinuityReport> {
    if verdict != Verdict::WienerPoint {
        return Err(Error::Hypothesis(format!(
            "continuity is only asserted at Wiener points, got {}",
            verdict.as_str()
        )));
    }
    if radii.len() < 2 || radii.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::invalid("need at least two strictly decreasing radii"));
    }
    let oscillations = radii
        .iter()
        .map(|&r| local_oscillation(u, x0, r))
        .collect::<Result<Vec<_>>>()?;
    let first = &oscillations[0];
    let last = &oscillations[oscillations.len() - 1];
    let ratio = |a: f64, b: f64| if b == 0.0 { if a == 0.0 { 0.0 } else { f64::INFINITY } } else { a / b };
    Ok(ContinuityReport {
        osc_ratio: ratio(last.osc, first.osc),
        average_ratio: ratio(last.average.abs(), first.average.abs()),
        osc_nonincreasing: oscillations.windows(2).all(|w| w[1].osc <= w[0].osc),
        oscillations,
        radii: radii.to_vec(),
        v_strictly_decreasing: profile.strictly_decreasing(),
    })
}

/// Fits `E_μ(r) <= k ω(r, R)^β r^{N−2} E_μ(2R) / Cap_μ(B_{2R}, B_{4R}) +
/// k r^{N−2} ‖ν‖_{K_N(B_{2R})}` over pairs `r <= R` drawn from `radii`.
#[allow(clippy::too_many_arguments)]
pub fn verify_mu_energy_decay(
    verdict: Verdict,
    u: &Field,
    x0: &[f64],
    radii: &[f64],
    mu: &MeasureSpec,
    nu: &MeasureSpec,
    coeffs: &EllipticCoefficients,
    wiener: &WienerProfile,
    rel_tol: f64,
) -> Result<EstimateFit> {
    if verdict != Verdict::WienerPoint {
        return Err(Error::Hypothesis(format!(
            "μ-energy decay is checked at Wiener points only, got {}",
            verdict.as_str()
        )));
    }
    if radii.len() < 2 || radii.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::invalid("need at least two strictly decreasing radii"));
    }
    let grid = u.grid();
    let n = grid.dim() as i32;
    let per_r = radii
        .par_iter()
        .map(|&r| -> Result<(f64, f64, f64, f64)> {
            let outer = BallSpec::new(x0, 4.0 * r);
            if !grid.contains_ball(&outer) {
                return Err(Error::Geometry(format!("B_{}({x0:?}) leaves the grid", 4.0 * r)));
            }
            let sub = grid.crop_to_ball(&outer)?;
            let domain = mask(&sub, &Shape::Ball(outer))?;
            let inner = mask(&sub, &Shape::ball(x0, 2.0 * r))?;
            let cap = CapacityProblem::new(&domain, coeffs, rel_tol)?
                .mu_capacity(&inner, &mu.crop_to(&sub)?)?
                .value;
            Ok((
                mu_energy(u, x0, r, mu)?,
                mu_energy(u, x0, 2.0 * r, mu)?,
                cap,
                local_kato(nu, x0, 2.0 * r)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::new();
    for (j, i) in radius_pairs(radii) {
        let (r, big_r) = (radii[j], radii[i]);
        let (e_r, _, _, _) = per_r[j];
        let (_, e_2r, cap, kato) = per_r[i];
        if !(cap > 0.0) {
            return Err(Error::Hypothesis(format!("Cap_μ(B_{}, B_{}) vanishes", 2.0 * big_r, 4.0 * big_r)));
        }
        let scale = r.powi(n - 2);
        samples.push((r, big_r, e_r, wiener.omega(r, big_r)?, scale * e_2r / cap, scale * kato));
    }
    fit_constants(&samples)
}

/// Smallest constants in the local sup bound and the local `V` bound at one
/// resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBoundConstants {
    pub big_r: f64,
    pub q: f64,
    /// `sup_{B_{qR}} |u|`.
    pub sup_abs: f64,
    /// `(R^{-2} ∫_{B_R − B_{qR}} u²)^{1/2}`.
    pub annulus_rms: f64,
    /// `R^{-N} ∫_{B_R − B_{qR}} u²`.
    pub annulus_mean: f64,
    pub kato: f64,
    pub v: f64,
    /// `sup |u| <= k (annulus_rms + kato)`; `None` when both sides vanish.
    pub k_sup: Option<f64>,
    /// `V(qR) <= k (annulus_mean + kato²)`; `None` when both sides vanish.
    pub k_v: Option<f64>,
}

/// Evaluates both local bounds for `u` on `B_R(x₀)` with annulus ratio `q`.
#[allow(clippy::too_many_arguments)]
pub fn local_bound_constants(
    u: &Field,
    x0: &[f64],
    big_r: f64,
    q: f64,
    mu: &MeasureSpec,
    nu: &MeasureSpec,
    coeffs: &EllipticCoefficients,
    opts: &EnergyOptions,
) -> Result<LocalBoundConstants> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("annulus ratio must lie in (0, 1), got {q}")));
    }
    check_point(u, x0, big_r)?;
    let grid = u.grid();
    let d = grid.dim();
    let inner = BallSpec::new(x0, q * big_r);
    let sup_abs = grid
        .nodes_in_ball(&inner)
        .iter()
        .map(|&n| u.get(n).abs())
        .fold(0.0, f64::max);
    let annulus: Vec<usize> = grid
        .cells_in_ball(&BallSpec::new(x0, big_r))
        .into_iter()
        .filter(|&c| dist(&grid.cell_center(c)[..d], x0) > q * big_r)
        .collect();
    let l2 = local_l2_squared(u, &annulus);
    let annulus_rms = (l2 / (big_r * big_r)).sqrt();
    let annulus_mean = l2 / big_r.powi(d as i32);
    let kato = local_kato(nu, x0, big_r)?;
    let v = local_energy_v(u, x0, q * big_r, mu, coeffs, opts)?.value;
    let constant = |lhs: f64, rhs: f64| {
        if lhs == 0.0 && rhs == 0.0 {
            None
        } else {
            Some(needed_k(lhs, rhs))
        }
    };
    Ok(LocalBoundConstants {
        big_r,
        q,
        sup_abs,
        annulus_rms,
        annulus_mean,
        kato,
        v,
        k_sup: constant(sup_abs, annulus_rms + kato),
        k_v: constant(v, annulus_mean + kato * kato),
    })
}

/// Relative change of the two constants between resolutions `h` and `h/2`.
/// Degenerate constants compare as unchanged.
pub fn constant_changes(coarse: &LocalBoundConstants, fine: &LocalBoundConstants) -> (f64, f64) {
    let change = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) if a > 0.0 => (b - a).abs() / a,
        (None, None) => 0.0,
        (Some(a), Some(b)) if a == b => 0.0,
        _ => f64::INFINITY,
    };
    (change(coarse.k_sup, fine.k_sup), change(coarse.k_v, fine.k_v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaBound {
    pub beta: f64,
    pub k0: f64,
    /// Radii in decreasing order, the first one being `R`.
    pub radii: Vec<f64>,
    /// `k₀ exp(−β |log q|⁻¹ ∫_r^R δ dρ/ρ) V(R)` per radius.
    pub bound: Vec<f64>,
    /// `Π_{j<i} (1 + k δ(ρ_j))⁻¹ V(R)` per radius.
    pub recursion: Vec<f64>,
}

/// `β = k/(1+k)`, `k₀ = e^β`.
pub fn lemma_constants(k: f64) -> (f64, f64) {
    let beta = k / (1.0 + k);
    (beta, beta.exp())
}

/// Closed-form factor `k₀ exp(−β |log q|⁻¹ I)` for `I = ∫_r^R δ dρ/ρ`.
pub fn lemma_factor(integral: f64, q: f64, k: f64) -> f64 {
    let (beta, k0) = lemma_constants(k);
    k0 * (-beta * integral / q.ln().abs()).exp()
}

/// Checks the hypothesis `V(qρ) <= V(ρ) / (1 + k δ(ρ))` on samples at
/// `ρ_i = R qⁱ` and returns the closed-form bound next to the iterated
/// recursion. `δ` between samples is taken piecewise linear in `log ρ`.
pub fn integration_lemma(v: &[f64], delta: &[f64], q: f64, k: f64, big_r: f64) -> Result<LemmaBound> {
    if !(q > 0.0 && q < 1.0) || !(k > 0.0) || !(big_r > 0.0) {
        return Err(Error::invalid("need 0 < q < 1, k > 0 and R > 0"));
    }
    if v.len() < 2 || v.len() != delta.len() {
        return Err(Error::invalid("need at least two levels of V and δ"));
    }
    if delta.iter().any(|d| !(0.0..=1.0).contains(d)) {
        return Err(Error::invalid("δ samples must lie in [0, 1]"));
    }
    for i in 0..v.len() - 1 {
        let allowed = v[i] / (1.0 + k * delta[i]);
        if v[i + 1] > allowed * (1.0 + FIT_SLACK) {
            return Err(Error::Hypothesis(format!(
                "V(qρ) = {} exceeds V(ρ)/(1 + kδ(ρ)) = {allowed} at level {i}",
                v[i + 1]
            )));
        }
    }
    let radii: Vec<f64> = (0..v.len()).map(|i| big_r * q.powi(i as i32)).collect();
    let profile = WienerProfile::from_samples(&[0.0; 2], &radii, delta, 0.0)?;
    let (beta, k0) = lemma_constants(k);
    let mut bound = Vec::new();
    let mut recursion = Vec::new();
    let mut product = 1.0;
    for (i, &r) in radii.iter().enumerate() {
        if i > 0 {
            product /= 1.0 + k * delta[i - 1];
        }
        recursion.push(product * v[0]);
        bound.push(lemma_factor(profile.integral(r, big_r)?, q, k) * v[0]);
    }
    for (i, (&vi, &b)) in v.iter().zip(&bound).enumerate() {
        if vi > b * (1.0 + FIT_SLACK) {
            return Err(Error::BoundViolation(format!(
                "V = {vi} exceeds the closed-form bound {b} at level {i}"
            )));
        }
    }
    Ok(LemmaBound {
        beta,
        k0,
        radii,
        bound,
        recursion,
    })
}

/// Nodes of `B_r(x₀)` on the solution grid, for callers that need the
/// support of the local quantities.
pub fn ball_nodes(u: &Field, x0: &[f64], r: f64) -> Result<NodeSet> {
    mask(u.grid(), &Shape::ball(x0, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::measures::MeasureModel;
    use crate::relaxed::{ball_grid, solve_nested, solve_relaxed, Datum, NestedProblem, RelaxedProblem};
    use crate::wiener::{delta_profile, WienerOptions};
    use proptest::prelude::{prop_assert, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lap(d: usize) -> EllipticCoefficients {
        EllipticCoefficients::laplacian(d)
    }

    fn opts() -> EnergyOptions {
        EnergyOptions {
            rel_tol: 1e-10,
            ..Default::default()
        }
    }

    #[test]
    fn trivial_fields() {
        let g = ball_grid(&[0.0, 0.0], 0.5, 1.0 / 64.0).unwrap();
        let zero = Field::zeros(&g);
        let v = local_energy_v(&zero, &[0.0, 0.0], 0.25, &MeasureSpec::Zero, &lap(2), &opts()).unwrap();
        assert_eq!(v.value, 0.0);
        assert_eq!(mu_energy(&zero, &[0.0, 0.0], 0.25, &MeasureSpec::Zero).unwrap(), 0.0);
        let c = Field::constant(&g, 1.5);
        let v = local_energy_v(&c, &[0.0, 0.0], 0.25, &MeasureSpec::Zero, &lap(2), &opts()).unwrap();
        assert!((v.value - 2.25).abs() < 1e-12);
        assert_eq!(v.sup, 2.25);
    }

    #[test]
    fn linear_field_mu_energy_is_ball_area() {
        let r = 0.25;
        let g = ball_grid(&[0.0, 0.0], 0.3, r / 20.0).unwrap();
        let u = Field::from_fn(&g, |x| x[0]);
        let e = mu_energy(&u, &[0.0, 0.0], r, &MeasureSpec::Zero).unwrap();
        let area = std::f64::consts::PI * r * r;
        assert!((e - area).abs() < 0.02 * area, "{e} vs {area}");
    }

    #[test]
    fn v_dominates_sup_and_grows_with_r() {
        let x0 = [0.0, 0.0];
        let h = 1.0 / 128.0;
        let g = ball_grid(&x0, 1.0, h).unwrap();
        let domain = mask(&g, &Shape::ball(&x0, 1.0)).unwrap();
        let mu = MeasureSpec::density(Field::constant(&g, 20.0)).unwrap();
        let p = RelaxedProblem::new(
            &domain,
            &lap(2),
            mu.clone(),
            MeasureSpec::Zero,
            Field::from_fn(&g, |x| 1.0 + x[0] + 0.5 * x[1] * x[1]),
        )
        .unwrap();
        let s = solve_relaxed(&p, 1e-11).unwrap();
        let radii = [0.1, 0.05, 0.025];
        let prof = energy_profile(&s.u, &x0, &radii, &mu, &MeasureSpec::Zero, &lap(2), &opts()).unwrap();
        assert!(prof.is_monotone(1e-10), "{}", prof.monotonicity_defect);
        for v in &prof.v {
            assert!(v.value >= v.sup && v.gradient_term > 0.0 && v.mu_term > 0.0);
            assert!(v.excluded > 0.0 && v.excluded_cells > 0);
        }
        for w in prof.e_mu.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn closed_form_worked_value() {
        let f = lemma_factor((1.0f64 / 0.125).ln(), 0.5, 1.0);
        let expected = 1.64872 * 0.125f64.powf(0.72135);
        assert!((f - expected).abs() < 1e-5 * expected);
        let (beta, k0) = lemma_constants(1.0);
        assert_eq!(beta, 0.5);
        assert!((k0 - 1.64872).abs() < 1e-5);
        assert!((0.5 / 2f64.ln() - 0.72135).abs() < 1e-5);
    }

    #[test]
    fn lemma_with_zero_delta_accepts_any_monotone_v() {
        let v = [4.0, 3.0, 3.0, 1.0];
        let b = integration_lemma(&v, &[0.0; 4], 0.5, 2.0, 1.0).unwrap();
        for x in &b.bound {
            assert!((x - b.k0 * 4.0).abs() < 1e-12);
        }
        assert!(integration_lemma(&[1.0, 2.0], &[0.0; 2], 0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn lemma_rejects_hypothesis_violation() {
        let v = [1.0, 0.9, 0.5];
        assert!(matches!(
            integration_lemma(&v, &[1.0; 3], 0.5, 1.0, 1.0),
            Err(Error::Hypothesis(_))
        ));
    }

    #[test]
    fn closed_form_dominates_recursion_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let levels = rng.gen_range(2..12);
            let q = rng.gen_range(0.05..0.95);
            let k = rng.gen_range(0.01..20.0);
            let delta: Vec<f64> = (0..levels).map(|_| rng.gen_range(0.0..=1.0)).collect();
            // the extremal V saturates the hypothesis at every level
            let mut v = vec![1.0];
            for i in 0..levels - 1 {
                v.push(v[i] / (1.0 + k * delta[i]));
            }
            let b = integration_lemma(&v, &delta, q, k, 1.0).unwrap();
            for i in 0..levels {
                assert!((b.recursion[i] - v[i]).abs() <= 1e-12 * v[i]);
                assert!(b.recursion[i] <= b.bound[i] * (1.0 + 1e-12));
                // and the closed form is never looser than the e^β slack
                // over the product bound with the trapezoid integral
                assert!(b.bound[i] <= b.k0 * v[0] * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn fit_on_a_control_profile_passes_with_k_one() {
        // μ = 0: ω ≡ 1 and V is monotone, so k = 1 passes for every β
        let samples = vec![
            (0.1, 0.2, 0.5, 1.0, 0.8, 0.0),
            (0.05, 0.2, 0.3, 1.0, 0.8, 0.0),
            (0.05, 0.1, 0.3, 1.0, 0.5, 0.0),
        ];
        let fit = fit_constants(&samples).unwrap();
        assert!(fit.passed && fit.k <= 1.0 && fit.holds_on_all_pairs());
        assert_eq!(fit.candidates.len(), 20);
    }

    #[test]
    fn floor_lets_held_out_adjacent_pairs_pass() {
        // ω ≡ 1 with the tightest ratio on a validation pair: the training
        // maximum alone fails, the floor k = 1 passes for every β
        let samples = vec![
            (0.1, 0.2, 0.90, 1.0, 1.0, 0.0),
            (0.05, 0.1, 0.88, 1.0, 0.90, 0.0),
            (0.05, 0.2, 0.88, 1.0, 1.0, 0.0),
        ];
        assert!(!fit_constants(&samples).unwrap().passed);
        let fit = fit_constants_above(&samples, 1.0).unwrap();
        assert!(fit.passed && fit.k == 1.0 && fit.holds_on_all_pairs());
        assert!(fit.candidates.iter().all(|c| c.2));
    }

    #[test]
    fn kato_dominated_pairs() {
        // tiny energies, large Kato term: k = V(r)/‖ν‖² suffices
        let samples = vec![(0.05, 0.2, 1e-6, 0.3, 1e-6, 4.0), (0.1, 0.2, 1e-6, 0.5, 1e-6, 4.0)];
        let fit = fit_constants(&samples).unwrap();
        assert!(fit.passed);
        assert!(fit.k <= 1e-6 / 4.0 * 1.01);
    }

    #[test]
    fn obstacle_at_the_point_gives_decay_and_a_passing_fit() {
        let x0 = vec![0.0, 0.0];
        let nested = solve_nested(&NestedProblem {
            x0: x0.clone(),
            parent_radius: 1.0,
            parent_h: 1.0 / 64.0,
            local_radius: 0.25,
            h: 1.0 / 512.0,
            coeffs: lap(2),
            mu: MeasureModel::Obstacle(Shape::HalfSpace { normal: vec![0.0, 1.0], offset: 0.0 }),
            nu: MeasureModel::Zero,
            datum: Datum::new(|x| 1.0 + x[0]),
            rel_tol: 1e-10,
        })
        .unwrap();
        let u = &nested.solution.u;
        let mu = &nested.local.mu;
        let radii = [0.0625, 0.03125, 0.0234375];
        let eo = EnergyOptions { max_green_cells: Some(128), ..opts() };
        let prof = energy_profile(u, &x0, &radii, mu, &MeasureSpec::Zero, &lap(2), &eo).unwrap();
        assert!(prof.strictly_decreasing());
        let wp = delta_profile(
            u.grid(),
            &x0,
            0.125,
            mu,
            &lap(2),
            &WienerOptions { levels: 4, rel_tol: 1e-10, ..Default::default() },
        )
        .unwrap();
        assert!(wp.deltas().iter().all(|&d| d > 0.2));
        let fit = verify_energy_decay(&prof, &wp).unwrap();
        assert!(fit.passed, "{fit:?}");
        assert!(fit.k <= 100.0);
    }

    #[test]
    fn local_bounds_for_a_harmonic_field() {
        let x0 = [0.0, 0.0];
        let mut ks = Vec::new();
        for h in [1.0 / 64.0, 1.0 / 128.0] {
            let g = ball_grid(&x0, 0.6, h).unwrap();
            let u = Field::from_fn(&g, |x| 2.0 + x[0]);
            let c = local_bound_constants(&u, &x0, 0.5, 0.5, &MeasureSpec::Zero, &MeasureSpec::Zero, &lap(2), &opts())
                .unwrap();
            assert!(c.k_sup.unwrap().is_finite() && c.k_v.unwrap().is_finite());
            ks.push(c);
        }
        let (a, b) = constant_changes(&ks[0], &ks[1]);
        assert!(a < 0.2 && b < 0.2, "{a} {b}");
        let g = ball_grid(&x0, 0.6, 1.0 / 32.0).unwrap();
        let zero = Field::zeros(&g);
        let c = local_bound_constants(&zero, &x0, 0.5, 0.5, &MeasureSpec::Zero, &MeasureSpec::Zero, &lap(2), &opts())
            .unwrap();
        assert_eq!((c.k_sup, c.k_v), (None, None));
    }

    #[test]
    fn continuity_is_refused_away_from_wiener_points() {
        let g = Grid::new(2, &[(-1.0, 1.0), (-1.0, 1.0)], 0.125).unwrap();
        let u = Field::zeros(&g);
        let prof = EnergyProfile {
            x0: vec![0.0, 0.0],
            q: 0.125,
            radii: vec![],
            v: vec![],
            e_mu: vec![],
            kato: vec![],
            monotonicity_defect: 0.0,
        };
        assert!(matches!(
            continuity_report(Verdict::NotWienerPoint, &u, &[0.0, 0.0], &[0.5, 0.25], &prof),
            Err(Error::Hypothesis(_))
        ));
    }

    proptest! {
        #[test]
        fn fitted_constants_satisfy_training_pairs(
            vals in proptest::collection::vec((1e-3f64..1.0, 0.0f64..1.0, 1e-3f64..1.0, 0.0f64..1.0), 1..8)
        ) {
            let samples: Vec<_> = vals
                .iter()
                .enumerate()
                .map(|(i, &(lhs, w, a, b))| (0.1 / (i + 1) as f64, 0.2, lhs, w, a, b))
                .collect();
            let fit = fit_constants(&samples).unwrap();
            for p in fit.pairs.iter().filter(|p| p.training) {
                prop_assert!(p.holds);
            }
            if fit.passed {
                prop_assert!(fit.holds_on_all_pairs());
            }
        }
    }
}
