//! Capacity-ratio profiles `δ(ρ)`, the Wiener modulus and point
//! classification.
//!
//! Each level solves on the sub-grid cropped to `B_{2ρ}(x₀)`. Nodes outside
//! the ball are prescribed, so cropping does not change the result.

use rayon::prelude::*;

use crate::capacity::CapacityProblem;
use crate::elliptic::EllipticCoefficients;
use crate::error::{Error, Result};
use crate::grid::{dist, mask, BallSpec, Grid, NodeSet, Shape};
use crate::measures::MeasureSpec;

/// Operator used for the harmonic capacity in the denominator of `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Denominator {
    /// The same `L` as the numerator.
    #[default]
    SameOperator,
    Laplacian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WienerOptions {
    /// Ratio between consecutive radii.
    pub ratio: f64,
    pub levels: usize,
    pub rel_tol: f64,
    pub denominator: Denominator,
}

impl Default for WienerOptions {
    fn default() -> Self {
        WienerOptions {
            ratio: 0.5,
            levels: 5,
            rel_tol: crate::elliptic::DEFAULT_REL_TOL,
            denominator: Denominator::SameOperator,
        }
    }
}

impl WienerOptions {
    fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::invalid(format!("radius ratio must lie in (0, 1), got {}", self.ratio)));
        }
        if self.levels == 0 {
            return Err(Error::invalid("a profile needs at least one level"));
        }
        crate::elliptic::SolverOptions::with_tol(self.rel_tol).validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WienerLevel {
    pub rho: f64,
    pub cap_mu: f64,
    pub cap: f64,
    /// `cap_mu / cap` clamped to `[0, 1]`.
    pub delta: f64,
    /// Unclamped ratio.
    pub raw_delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WienerProfile {
    pub center: Vec<f64>,
    /// Largest radius `R`.
    pub r_max: f64,
    pub ratio: f64,
    pub h: f64,
    pub rel_tol: f64,
    pub denominator: Denominator,
    /// Levels by decreasing radius.
    pub levels: Vec<WienerLevel>,
}

impl WienerProfile {
    /// Builds a profile from given `δ` samples, largest radius first.
    pub fn from_samples(center: &[f64], radii: &[f64], deltas: &[f64], rel_tol: f64) -> Result<WienerProfile> {
        if radii.is_empty() || radii.len() != deltas.len() {
            return Err(Error::invalid("radii and δ samples must be non-empty and of equal length"));
        }
        if radii.windows(2).any(|w| !(w[1] < w[0])) || !(radii[radii.len() - 1] > 0.0) {
            return Err(Error::invalid("radii must be positive and strictly decreasing"));
        }
        let levels = radii
            .iter()
            .zip(deltas)
            .map(|(&rho, &d)| WienerLevel {
                rho,
                cap_mu: d,
                cap: 1.0,
                delta: d.clamp(0.0, 1.0),
                raw_delta: d,
            })
            .collect();
        Ok(WienerProfile {
            center: center.to_vec(),
            r_max: radii[0],
            ratio: if radii.len() > 1 { radii[1] / radii[0] } else { 0.5 },
            h: 0.0,
            rel_tol,
            denominator: Denominator::SameOperator,
            levels,
        })
    }

    pub fn radii(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.rho).collect()
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.delta).collect()
    }

    pub fn rho_min(&self) -> f64 {
        self.levels[self.levels.len() - 1].rho
    }

    /// `∫_r^R δ(ρ) dρ/ρ` with `δ` piecewise linear in `log ρ` between
    /// samples.
    pub fn integral(&self, r: f64, big_r: f64) -> Result<f64> {
        let lo = self.rho_min();
        let hi = self.levels[0].rho;
        let slack = 1e-12;
        if r < lo * (1.0 - slack) {
            return Err(Error::Extrapolation(r));
        }
        if big_r > hi * (1.0 + slack) {
            return Err(Error::Extrapolation(big_r));
        }
        if r > big_r * (1.0 + slack) {
            return Err(Error::invalid(format!("need r <= R, got r = {r}, R = {big_r}")));
        }
        let (a, b) = (r.clamp(lo, hi).ln(), big_r.clamp(lo, hi).ln());
        let mut total = 0.0;
        for w in self.levels.windows(2) {
            // segment [t0, t1] in log radius, t0 < t1
            let (t0, d0) = (w[1].rho.ln(), w[1].delta);
            let (t1, d1) = (w[0].rho.ln(), w[0].delta);
            let s = a.max(t0);
            let e = b.min(t1);
            if e <= s {
                continue;
            }
            let at = |t: f64| d0 + (d1 - d0) * (t - t0) / (t1 - t0);
            total += 0.5 * (at(s) + at(e)) * (e - s);
        }
        Ok(total)
    }

    /// `ω(r, R) = exp(−∫_r^R δ dρ/ρ)`.
    pub fn omega(&self, r: f64, big_r: f64) -> Result<f64> {
        Ok((-self.integral(r, big_r)?).exp())
    }

    /// Rows `(level, ρ, Cap_μ, Cap, δ, I(ρ, R), ω(ρ, R))`.
    pub fn rows(&self) -> Vec<(usize, f64, f64, f64, f64, f64, f64)> {
        let top = self.levels[0].rho;
        self.levels
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let i = self.integral(l.rho, top).unwrap_or(f64::NAN);
                (k, l.rho, l.cap_mu, l.cap, l.delta, i, (-i).exp())
            })
            .collect()
    }

    /// Violations of `−tol ≤ δ ≤ 1 + tol` and `r/R ≤ ω(r, R) ≤ 1 + tol`
    /// over all sampled pairs, with `tol = 5·rel_tol`. Only the lower
    /// bound on `δ` and the upper bound on `ω` apply with a Laplacian
    /// denominator.
    pub fn bound_violations(&self) -> Vec<String> {
        let tol = 5.0 * self.rel_tol;
        let same = self.denominator == Denominator::SameOperator;
        let mut out = Vec::new();
        for l in &self.levels {
            if l.raw_delta < -tol || (same && l.raw_delta > 1.0 + tol) {
                out.push(format!("δ({}) = {}", l.rho, l.raw_delta));
            }
        }
        for (j, big) in self.levels.iter().enumerate() {
            for small in &self.levels[j..] {
                let w = self.omega(small.rho, big.rho).unwrap_or(f64::NAN);
                let floor = if same { small.rho / big.rho * (1.0 - 1e-12) } else { 0.0 };
                if !(w >= floor && w <= 1.0 + tol) {
                    out.push(format!("ω({}, {}) = {}", small.rho, big.rho, w));
                }
            }
        }
        out
    }

    /// `∫` over the last octave-sized step: `(I(ρ_K, R) − I(ρ_{K−2}, R)) / 2`,
    /// the mean increment per level over the last three levels.
    pub fn tail_slope(&self) -> f64 {
        let n = self.levels.len();
        if n < 2 {
            return 0.0;
        }
        let span = 2.min(n - 1);
        let lo = self.levels[n - 1].rho;
        let hi = self.levels[n - 1 - span].rho;
        self.integral(lo, hi).unwrap_or(0.0) / span as f64
    }
}

pub fn wiener_modulus(profile: &WienerProfile, r: f64, big_r: f64) -> Result<f64> {
    profile.omega(r, big_r)
}

/// Radii `R q^k` that are at least `4h`; warns when levels are dropped.
fn radii(r_max: f64, opts: &WienerOptions, h: f64) -> Result<Vec<f64>> {
    let all: Vec<f64> = (0..opts.levels).map(|k| r_max * opts.ratio.powi(k as i32)).collect();
    let kept: Vec<f64> = all.iter().copied().filter(|&r| r >= 4.0 * h * (1.0 - 1e-9)).collect();
    if kept.len() < all.len() {
        log::warn!(
            "dropping {} level(s) with radius below 4h = {}",
            all.len() - kept.len(),
            4.0 * h
        );
    }
    if kept.is_empty() {
        return Err(Error::Geometry(format!("R = {r_max} is below 4h = {}", 4.0 * h)));
    }
    Ok(kept)
}

/// Turns a capacity pair into a level, enforcing the bounds on `δ`. With a
/// Laplacian denominator `δ` may exceed 1 and is only clamped below.
fn level(rho: f64, cap_mu: f64, cap: f64, opts: &WienerOptions) -> Result<WienerLevel> {
    let raw = cap_mu / cap;
    let tol = 5.0 * opts.rel_tol;
    let upper = match opts.denominator {
        Denominator::SameOperator => 1.0,
        Denominator::Laplacian => f64::INFINITY,
    };
    if !(raw >= -tol && raw <= upper + tol) {
        return Err(Error::BoundViolation(format!(
            "δ({rho}) = {raw} (Cap_μ = {cap_mu}, Cap = {cap})"
        )));
    }
    let delta = raw.clamp(0.0, upper);
    if delta != raw {
        log::debug!("clamped δ({rho}) from {raw} to {delta}");
    }
    Ok(WienerLevel {
        rho,
        cap_mu,
        cap,
        delta,
        raw_delta: raw,
    })
}

/// Ball pair on the sub-grid around `B_{2ρ}(x₀)`.
struct LocalBalls {
    sub: Grid,
    inner: NodeSet,
    outer: NodeSet,
}

fn local_balls(grid: &Grid, x0: &[f64], rho: f64) -> Result<LocalBalls> {
    let outer_ball = BallSpec::new(x0, 2.0 * rho);
    if !grid.contains_ball(&outer_ball) {
        return Err(Error::Geometry(format!(
            "B_{}({x0:?}) leaves the grid",
            2.0 * rho
        )));
    }
    let sub = grid.crop_to_ball(&outer_ball)?;
    let outer = mask(&sub, &Shape::Ball(outer_ball))?;
    let inner = mask(&sub, &Shape::ball(x0, rho))?;
    Ok(LocalBalls { sub, inner, outer })
}

/// `Cap(B_ρ, B_{2ρ})` with a guard against degenerate denominators.
fn denominator(problem: &CapacityProblem, inner: &NodeSet) -> Result<f64> {
    let cap = problem.harmonic(inner)?.value;
    // Cap(node) <= a(φ, φ), so a value above 10·rel_tol·max K_ii clears
    // the zero-capacity threshold without computing it
    let kmax = problem.stiffness().diagonal().iter().cloned().fold(0.0, f64::max);
    if cap < 10.0 * problem.rel_tol() * kmax && cap < problem.zero_capacity_threshold()? {
        return Err(Error::Geometry(format!("ball capacity {cap} is below the zero-capacity threshold")));
    }
    Ok(cap)
}

fn denominator_problem(
    balls: &LocalBalls,
    coeffs: &EllipticCoefficients,
    opts: &WienerOptions,
) -> Result<Option<CapacityProblem>> {
    match opts.denominator {
        Denominator::SameOperator => Ok(None),
        Denominator::Laplacian => {
            Ok(Some(CapacityProblem::new(
                &balls.outer,
                &EllipticCoefficients::laplacian(coeffs.dim()),
                opts.rel_tol,
            )?))
        }
    }
}

/// `δ(ρ_k) = Cap_μ(B_ρ, B_{2ρ}) / Cap(B_ρ, B_{2ρ})` for `ρ_k = R q^k`.
pub fn delta_profile(
    grid: &Grid,
    x0: &[f64],
    r_max: f64,
    mu: &MeasureSpec,
    coeffs: &EllipticCoefficients,
    opts: &WienerOptions,
) -> Result<WienerProfile> {
    opts.validate()?;
    if x0.len() != grid.dim() {
        return Err(Error::invalid("point dimension differs from the grid"));
    }
    if mu.grid().is_some_and(|g| g != grid) {
        return Err(Error::GridMismatch);
    }
    let rs = radii(r_max, opts, grid.spacing())?;
    if !grid.contains_ball(&BallSpec::new(x0, 2.0 * r_max)) {
        return Err(Error::Geometry(format!("B_{}({x0:?}) leaves the grid", 2.0 * r_max)));
    }
    let levels = rs
        .par_iter()
        .map(|&rho| -> Result<WienerLevel> {
            let balls = local_balls(grid, x0, rho)?;
            let problem = CapacityProblem::new(&balls.outer, coeffs, opts.rel_tol)?;
            let local_mu = mu.crop_to(&balls.sub)?;
            let cap_mu = problem.mu_capacity(&balls.inner, &local_mu)?.value;
            let cap = match denominator_problem(&balls, coeffs, opts)? {
                Some(p) => denominator(&p, &balls.inner)?,
                None => denominator(&problem, &balls.inner)?,
            };
            level(rho, cap_mu, cap, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WienerProfile {
        center: x0.to_vec(),
        r_max,
        ratio: opts.ratio,
        h: grid.spacing(),
        rel_tol: opts.rel_tol,
        denominator: opts.denominator,
        levels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    WienerPoint,
    NotWienerPoint,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::WienerPoint => "wiener_point",
            Verdict::NotWienerPoint => "not_wiener_point",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    /// Minimum mean tail increment of `I` per level.
    pub slope_min: f64,
    /// Largest `|δ_h − δ_{h/2}|` counted as h-stable.
    pub stability: f64,
    /// Minimum relative drop of `δ` under refinement, at every shared
    /// level, for the refinement-decay rule.
    pub decay: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            slope_min: 0.05,
            stability: 0.1,
            decay: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub verdict: Verdict,
    pub slope_coarse: f64,
    pub slope_fine: f64,
    /// Largest `|δ_h − δ_{h/2}|` over shared radii.
    pub max_change: f64,
    /// True when `δ` dropped by at least the decay fraction at every shared
    /// radius.
    pub decays_under_refinement: bool,
}

/// Two-resolution decision rule, applied in order:
/// - not a Wiener point when `δ` drops by the decay fraction at every
///   shared radius under refinement, the signature of a fixed-h artefact
///   such as the positive discrete capacity of a single node;
/// - Wiener point when both tail slopes reach `slope_min` and the shared
///   `δ` values are h-stable;
/// - not a Wiener point when the tails are flat at both resolutions and
///   h-stable;
/// - inconclusive otherwise.
pub fn classify_point(
    coarse: &WienerProfile,
    fine: &WienerProfile,
    opts: &ClassifyOptions,
) -> Result<Classification> {
    if coarse.center.len() != fine.center.len()
        || dist(&coarse.center, &fine.center) > 1e-12
        || (coarse.r_max - fine.r_max).abs() > 1e-12 * coarse.r_max
    {
        return Err(Error::invalid("profiles must share the point and R"));
    }
    let mut max_change: f64 = 0.0;
    let mut shared = 0;
    let mut decays = true;
    for c in &coarse.levels {
        let Some(f) = fine
            .levels
            .iter()
            .find(|f| (f.rho - c.rho).abs() <= 1e-9 * c.rho)
        else {
            continue;
        };
        shared += 1;
        max_change = max_change.max((c.delta - f.delta).abs());
        if !(f.delta <= c.delta * (1.0 - opts.decay)) {
            decays = false;
        }
    }
    if shared == 0 {
        return Err(Error::invalid("profiles share no radius"));
    }
    let slope_coarse = coarse.tail_slope();
    let slope_fine = fine.tail_slope();
    let stable = max_change <= opts.stability;
    let verdict = if decays {
        Verdict::NotWienerPoint
    } else if stable && slope_coarse >= opts.slope_min && slope_fine >= opts.slope_min {
        Verdict::WienerPoint
    } else if stable && slope_coarse < opts.slope_min && slope_fine < opts.slope_min {
        Verdict::NotWienerPoint
    } else {
        Verdict::Inconclusive
    };
    Ok(Classification {
        verdict,
        slope_coarse,
        slope_fine,
        max_change,
        decays_under_refinement: decays,
    })
}

#[derive(Debug, Clone)]
pub struct BoundaryProfile {
    /// Profile with numerator `Cap(B_ρ ∩ CΩ, B_{2ρ})`.
    pub profile: WienerProfile,
    /// `Cap_{∞_{Ω′−Ω}}(B_ρ, B_{2ρ})` per level.
    pub relaxed_caps: Vec<f64>,
    /// Largest relative difference between the two numerators.
    pub max_disagreement: f64,
    /// False flags a discretisation defect.
    pub agrees: bool,
}

/// Wiener profile of the classical problem on `Ω` at `x₀ ∈ ∂Ω`, computed
/// both from `Cap(B_ρ ∩ CΩ, B_{2ρ})` and from the obstacle `∞_{Ω′−Ω}`.
pub fn boundary_wiener_modulus(
    omega: &NodeSet,
    omega_prime: &NodeSet,
    x0: &[f64],
    r_max: f64,
    coeffs: &EllipticCoefficients,
    opts: &WienerOptions,
) -> Result<BoundaryProfile> {
    opts.validate()?;
    let grid = omega.grid();
    if omega_prime.grid() != grid {
        return Err(Error::GridMismatch);
    }
    if x0.len() != grid.dim() {
        return Err(Error::invalid("point dimension differs from the grid"));
    }
    if !omega.is_subset(omega_prime) {
        return Err(Error::Geometry("Ω is not contained in Ω′".into()));
    }
    let near = grid.nodes_in_ball(&BallSpec::new(x0, grid.spacing() * (grid.dim() as f64).sqrt()));
    let inside = near.iter().filter(|&&n| omega.contains(n)).count();
    if inside == 0 || inside == near.len() {
        return Err(Error::Geometry(format!("{x0:?} is not a boundary point of Ω")));
    }
    let big = mask(grid, &Shape::ball(x0, 2.0 * r_max))?;
    if !grid.contains_ball(&BallSpec::new(x0, 2.0 * r_max)) || !big.is_subset(omega_prime) {
        return Err(Error::Geometry("B_2R(x₀) is not contained in Ω′".into()));
    }
    let outside = omega.complement();
    let obstacle = MeasureSpec::obstacle(omega_prime.difference(omega)?);
    let rs = radii(r_max, opts, grid.spacing())?;
    let results = rs
        .par_iter()
        .map(|&rho| -> Result<(WienerLevel, f64)> {
            let balls = local_balls(grid, x0, rho)?;
            let problem = CapacityProblem::new(&balls.outer, coeffs, opts.rel_tol)?;
            let e = balls.inner.intersection(&outside.crop_to(&balls.sub)?)?;
            let classical = problem.harmonic(&e)?.value;
            let relaxed = problem
                .mu_capacity(&balls.inner, &obstacle.crop_to(&balls.sub)?)?
                .value;
            let cap = match denominator_problem(&balls, coeffs, opts)? {
                Some(p) => denominator(&p, &balls.inner)?,
                None => denominator(&problem, &balls.inner)?,
            };
            Ok((level(rho, classical, cap, opts)?, relaxed))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut max_disagreement: f64 = 0.0;
    for (l, relaxed) in &results {
        let scale = l.cap_mu.abs().max(relaxed.abs()).max(f64::MIN_POSITIVE);
        let diff = (l.cap_mu - relaxed).abs();
        if diff > 0.0 {
            max_disagreement = max_disagreement.max(diff / scale);
        }
    }
    let agrees = max_disagreement <= 5.0 * opts.rel_tol;
    if !agrees {
        log::warn!("classical and obstacle capacities differ by {max_disagreement:.3e}");
    }
    let (levels, relaxed_caps) = results.into_iter().unzip();
    Ok(BoundaryProfile {
        profile: WienerProfile {
            center: x0.to_vec(),
            r_max,
            ratio: opts.ratio,
            h: grid.spacing(),
            rel_tol: opts.rel_tol,
            denominator: opts.denominator,
            levels,
        },
        relaxed_caps,
        max_disagreement,
        agrees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::Field;
    use crate::relaxed::open_nodes;
    use proptest::prelude::*;

    fn square(h: f64) -> Grid {
        Grid::new(2, &[(0.0, 1.0), (0.0, 1.0)], h).unwrap()
    }

    fn lap2() -> EllipticCoefficients {
        EllipticCoefficients::laplacian(2)
    }

    fn opts(levels: usize) -> WienerOptions {
        WienerOptions {
            levels,
            rel_tol: 1e-10,
            ..Default::default()
        }
    }

    #[test]
    fn zero_measure_gives_trivial_modulus() {
        let g = square(1.0 / 64.0);
        let p = delta_profile(&g, &[0.5, 0.5], 0.2, &MeasureSpec::Zero, &lap2(), &opts(3)).unwrap();
        assert!(p.deltas().iter().all(|&d| d == 0.0));
        assert_eq!(p.omega(p.rho_min(), 0.2).unwrap(), 1.0);
        assert!(p.bound_violations().is_empty());
    }

    #[test]
    fn full_obstacle_gives_delta_one() {
        let g = square(1.0 / 64.0);
        let x0 = [0.5, 0.5];
        let e = mask(&g, &Shape::ball(&x0, 0.2)).unwrap();
        let p = delta_profile(&g, &x0, 0.2, &MeasureSpec::obstacle(e), &lap2(), &opts(3)).unwrap();
        for l in &p.levels {
            assert!((l.raw_delta - 1.0).abs() < 5e-10, "{l:?}");
        }
        let w = p.omega(0.1, 0.2).unwrap();
        assert!((w - 0.5).abs() < 1e-9);
        assert!(p.bound_violations().is_empty());
    }

    #[test]
    fn quadrature_closed_forms() {
        let radii = [1.0, 0.5, 0.25, 0.125];
        let one = WienerProfile::from_samples(&[0.0, 0.0], &radii, &[1.0; 4], 1e-8).unwrap();
        assert!((one.omega(0.125, 1.0).unwrap() - 0.125).abs() < 1e-15);
        let half = WienerProfile::from_samples(&[0.0, 0.0], &radii, &[0.5; 4], 1e-8).unwrap();
        let w = half.omega(0.125, 1.0).unwrap();
        assert!((w - 0.35355).abs() < 1e-5);
        assert!((w - 0.125f64.sqrt()).abs() < 1e-15);
        let zero = WienerProfile::from_samples(&[0.0, 0.0], &radii, &[0.0; 4], 1e-8).unwrap();
        assert_eq!(zero.omega(0.125, 1.0).unwrap(), 1.0);
        assert!(matches!(one.omega(0.1, 1.0), Err(Error::Extrapolation(_))));
        assert!(matches!(one.omega(0.2, 1.5), Err(Error::Extrapolation(_))));
        // interpolation between samples is exact for constant δ
        assert!((one.omega(0.3, 0.9).unwrap() - 0.3 / 0.9).abs() < 1e-15);
    }

    #[test]
    fn single_node_delta_decreases_under_refinement() {
        let x0 = [0.5, 0.5];
        let mut at_fixed_rho = Vec::new();
        for h in [1.0 / 64.0, 1.0 / 128.0] {
            let g = square(h);
            let e = NodeSet::single(&g, g.nearest_node(&x0));
            let p = delta_profile(&g, &x0, 0.2, &MeasureSpec::obstacle(e), &lap2(), &opts(3)).unwrap();
            // discrete point capacity in B_2ρ is about 2π / ln(2ρ / (c h));
            // with Cap(B_ρ, B_2ρ) = 2π / ln 2 the ratio is ln 2 / ln(2ρ / (c h))
            for l in &p.levels {
                let c = (2.0 * l.rho / h) / (2f64.ln() / l.delta).exp();
                assert!(c > 0.05 && c < 1.0, "effective node radius {c} h");
            }
            at_fixed_rho.push(p.levels[0].delta);
        }
        assert!(at_fixed_rho[1] < at_fixed_rho[0]);
    }

    #[test]
    fn classification_examples() {
        let x0 = [0.5, 0.5];
        let r = 0.2;
        let o = opts(4);
        let c = ClassifyOptions::default();
        let profiles = |make: &dyn Fn(&Grid) -> MeasureSpec| {
            [1.0 / 80.0, 1.0 / 160.0].map(|h| {
                let g = square(h);
                delta_profile(&g, &x0, r, &make(&g), &lap2(), &o).unwrap()
            })
        };
        let half = profiles(&|g| {
            MeasureSpec::obstacle(
                mask(g, &Shape::HalfSpace { normal: vec![0.0, 1.0], offset: 0.5 }).unwrap(),
            )
        });
        let v = classify_point(&half[0], &half[1], &c).unwrap();
        assert_eq!(v.verdict, Verdict::WienerPoint, "{v:?}");

        let point = profiles(&|g| MeasureSpec::obstacle(NodeSet::single(g, g.nearest_node(&x0))));
        let v = classify_point(&point[0], &point[1], &c).unwrap();
        assert_eq!(v.verdict, Verdict::NotWienerPoint, "{v:?}");
        assert!(v.decays_under_refinement);

        let zero = profiles(&|_| MeasureSpec::Zero);
        let v = classify_point(&zero[0], &zero[1], &c).unwrap();
        assert_eq!(v.verdict, Verdict::NotWienerPoint);
    }

    #[test]
    fn boundary_paths_agree_at_an_edge_midpoint() {
        let g = Grid::new(2, &[(-0.5, 1.5), (-0.5, 1.5)], 1.0 / 64.0).unwrap();
        let omega = open_nodes(&g, &Shape::Box { min: vec![0.0, 0.0], max: vec![1.0, 1.0] }).unwrap();
        let omega_prime = NodeSet::full(&g).interior();
        let b = boundary_wiener_modulus(&omega, &omega_prime, &[0.5, 0.0], 0.2, &lap2(), &opts(3))
            .unwrap();
        assert!(b.agrees, "{}", b.max_disagreement);
        // the complement of a square near an edge midpoint is a half-plane:
        // δ is bounded well away from zero
        for l in &b.profile.levels {
            assert!(l.delta > 0.3 && l.delta < 0.8, "{l:?}");
        }
    }

    #[test]
    fn puncture_is_not_a_wiener_point() {
        let x0 = [0.5, 0.5];
        let profiles = [1.0 / 64.0, 1.0 / 128.0].map(|h| {
            let g = square(h);
            let disc = open_nodes(&g, &Shape::ball(&x0, 0.45)).unwrap();
            let omega = disc
                .difference(&NodeSet::single(&g, g.nearest_node(&x0)))
                .unwrap();
            let omega_prime = NodeSet::full(&g).interior();
            let b = boundary_wiener_modulus(&omega, &omega_prime, &x0, 0.2, &lap2(), &opts(3)).unwrap();
            assert!(b.agrees, "{}", b.max_disagreement);
            b.profile
        });
        let v = classify_point(&profiles[0], &profiles[1], &ClassifyOptions::default()).unwrap();
        assert_eq!(v.verdict, Verdict::NotWienerPoint, "{v:?}");
    }

    #[test]
    fn boundary_modulus_needs_a_boundary_point() {
        let g = Grid::new(2, &[(-0.5, 1.5), (-0.5, 1.5)], 1.0 / 32.0).unwrap();
        let omega = open_nodes(&g, &Shape::Box { min: vec![0.0, 0.0], max: vec![1.0, 1.0] }).unwrap();
        let omega_prime = NodeSet::full(&g).interior();
        assert!(
            boundary_wiener_modulus(&omega, &omega_prime, &[0.5, 0.5], 0.1, &lap2(), &opts(2)).is_err()
        );
    }

    #[test]
    fn delta_is_sandwiched_between_operators() {
        let g = square(1.0 / 64.0);
        let x0 = [0.5, 0.5];
        let e = mask(&g, &Shape::HalfSpace { normal: vec![1.0, 0.0], offset: 0.5 }).unwrap();
        let mu = MeasureSpec::obstacle(e);
        let a = [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0; 3]];
        let l = EllipticCoefficients::constant(2, a, 1.0, 2.0).unwrap();
        let pd = delta_profile(&g, &x0, 0.2, &mu, &lap2(), &opts(3)).unwrap();
        let pl = delta_profile(&g, &x0, 0.2, &mu, &l, &opts(3)).unwrap();
        let pm = delta_profile(
            &g,
            &x0,
            0.2,
            &mu,
            &l,
            &WienerOptions { denominator: Denominator::Laplacian, ..opts(3) },
        )
        .unwrap();
        let k = l.bound() / l.lambda();
        for ((d, dl), dm) in pd.levels.iter().zip(&pl.levels).zip(&pm.levels) {
            assert!(dl.delta >= d.delta / k - 1e-8 && dl.delta <= d.delta * k + 1e-8);
            assert!(dm.cap_mu == dl.cap_mu);
            assert!((dm.cap - d.cap).abs() < 1e-8 * d.cap);
        }
    }

    #[test]
    fn obstacle_delta_is_invariant_under_scaling_the_operator() {
        let g = square(1.0 / 64.0);
        let x0 = [0.5, 0.5];
        let mu = MeasureSpec::obstacle(
            mask(&g, &Shape::ball(&[0.6, 0.5], 0.1)).unwrap(),
        );
        let a = delta_profile(&g, &x0, 0.2, &mu, &lap2(), &opts(3)).unwrap();
        let b = delta_profile(&g, &x0, 0.2, &mu, &lap2().scaled(7.5), &opts(3)).unwrap();
        for (x, y) in a.levels.iter().zip(&b.levels) {
            assert!((x.delta - y.delta).abs() <= 5e-10, "{x:?} {y:?}");
        }
    }

    #[test]
    fn larger_density_gives_larger_delta() {
        let g = square(1.0 / 64.0);
        let x0 = [0.5, 0.5];
        let base = Field::from_fn(&g, |x| 50.0 * (1.0 + x[0]));
        let mu1 = MeasureSpec::density(base.clone()).unwrap();
        let mu2 = MeasureSpec::density(base.scaled(3.0)).unwrap();
        let p1 = delta_profile(&g, &x0, 0.2, &mu1, &lap2(), &opts(3)).unwrap();
        let p2 = delta_profile(&g, &x0, 0.2, &mu2, &lap2(), &opts(3)).unwrap();
        for (a, b) in p1.levels.iter().zip(&p2.levels) {
            assert!(a.delta <= b.delta + 5e-10);
            assert!(a.delta > 0.0);
        }
    }

    #[test]
    fn levels_below_four_h_are_dropped() {
        let g = square(1.0 / 32.0);
        let p = delta_profile(&g, &[0.5, 0.5], 0.2, &MeasureSpec::Zero, &lap2(), &opts(6)).unwrap();
        assert!(p.levels.iter().all(|l| l.rho >= 4.0 / 32.0 - 1e-12));
        assert_eq!(p.levels.len(), 1);
        assert!(delta_profile(&g, &[0.5, 0.5], 0.05, &MeasureSpec::Zero, &lap2(), &opts(2)).is_err());
    }

    proptest! {
        #[test]
        fn modulus_is_multiplicative(ds in proptest::collection::vec(0.0f64..=1.0, 6), m in 1usize..5) {
            let radii: Vec<f64> = (0..6).map(|k| 0.5f64.powi(k)).collect();
            let p = WienerProfile::from_samples(&[0.0, 0.0], &radii, &ds, 1e-8).unwrap();
            let (r, mid, big) = (radii[5], radii[m], radii[0]);
            let whole = p.omega(r, big).unwrap();
            let split = p.omega(r, mid).unwrap() * p.omega(mid, big).unwrap();
            prop_assert!((whole - split).abs() <= 1e-14);
            prop_assert!(p.bound_violations().is_empty());
        }

        #[test]
        fn modulus_is_nonincreasing_as_r_shrinks(ds in proptest::collection::vec(0.0f64..=1.0, 5), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let radii: Vec<f64> = (0..5).map(|k| 0.5f64.powi(k)).collect();
            let p = WienerProfile::from_samples(&[0.0, 0.0], &radii, &ds, 1e-8).unwrap();
            let lo = radii[4];
            let r1 = lo * 16f64.powf(a.min(b));
            let r2 = lo * 16f64.powf(a.max(b));
            let (w1, w2) = (p.omega(r1, 1.0).unwrap(), p.omega(r2, 1.0).unwrap());
            prop_assert!(w1 <= w2 + 1e-15);
            prop_assert!(w1 >= r1 * (1.0 - 1e-12) && w2 <= 1.0);
        }
    }
}
