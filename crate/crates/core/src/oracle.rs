//! Exact equilibria of the LLP-GAN game on finite-support ("tabular") worlds.
//!
//! All expectations are finite sums over the support. Per support point
//! `x` we write `A = Σ_i p_d^i(x)`, `c_k = Σ_i p_i(k) p_d^i(x)` and
//! `g = p_g(x)`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DENSITY_TOL: f64 = 1e-9;
pub const BEST_RESPONSE_RESTARTS: usize = 5;
pub const BEST_RESPONSE_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 200_000;

/// Settings for [`numeric_best_response`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestResponse {
    /// Bound on the unit-step projected-gradient norm.
    pub tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Iteration cap per restart.
    pub max_iterations: usize,
}

impl Default for BestResponse {
    fn default() -> Self {
        Self { tolerance: BEST_RESPONSE_TOL, restarts: BEST_RESPONSE_RESTARTS, seed: 0, max_iterations: MAX_ITERATIONS }
    }
}

impl BestResponse {
    pub fn seeded(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

/// Finite-support world: `n` bag densities over `support_size` points, one
/// class prior per bag and an optional generator density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularWorld {
    pub support_size: usize,
    pub n: usize,
    pub k: usize,
    pub bag_densities: Vec<Vec<f64>>,
    pub priors: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_density: Option<Vec<f64>>,
}

fn check_simplex(v: &[f64], len: usize, what: &str) -> Result<()> {
    if v.len() != len {
        return Err(Error::Validation(format!("{what} has {} entries, expected {len}", v.len())));
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::Validation(format!("{what} has invalid entry {x}")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > DENSITY_TOL {
        return Err(Error::Validation(format!("{what} sums to {s}")));
    }
    Ok(())
}

impl TabularWorld {
    pub fn new(
        bag_densities: Vec<Vec<f64>>,
        priors: Vec<Vec<f64>>,
        generator_density: Option<Vec<f64>>,
    ) -> Result<Self> {
        let world = Self {
            support_size: bag_densities.first().map_or(0, Vec::len),
            n: bag_densities.len(),
            k: priors.first().map_or(0, Vec::len),
            bag_densities,
            priors,
            generator_density,
        };
        world.validate()?;
        Ok(world)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Validation("a world needs at least one bag".into()));
        }
        if self.k < 2 {
            return Err(Error::Validation(format!("class count must be at least 2, got {}", self.k)));
        }
        if self.support_size == 0 {
            return Err(Error::Validation("empty support".into()));
        }
        if self.bag_densities.len() != self.n || self.priors.len() != self.n {
            return Err(Error::Validation(format!(
                "n = {} but {} densities and {} priors",
                self.n,
                self.bag_densities.len(),
                self.priors.len()
            )));
        }
        for (i, d) in self.bag_densities.iter().enumerate() {
            check_simplex(d, self.support_size, &format!("bag density {i}"))?;
        }
        for (i, p) in self.priors.iter().enumerate() {
            check_simplex(p, self.k, &format!("prior {i}"))?;
        }
        if let Some(g) = &self.generator_density {
            check_simplex(g, self.support_size, "generator density")?;
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let w: Self = serde_json::from_str(s)?;
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn with_generator(&self, g: Vec<f64>) -> Result<Self> {
        let mut w = self.clone();
        w.generator_density = Some(g);
        w.validate()?;
        Ok(w)
    }

    /// The world restricted to bag `i` alone.
    pub fn single_bag(&self, i: usize) -> Self {
        Self {
            support_size: self.support_size,
            n: 1,
            k: self.k,
            bag_densities: vec![self.bag_densities[i].clone()],
            priors: vec![self.priors[i].clone()],
            generator_density: self.generator_density.clone(),
        }
    }

    /// `A(x) = Σ_i p_d^i(x)` (unnormalized; sums to `n`).
    pub fn mixture(&self) -> Vec<f64> {
        (0..self.support_size).map(|s| self.bag_densities.iter().map(|d| d[s]).sum()).collect()
    }

    /// `c_k(x) = Σ_i p_i(k) p_d^i(x)`.
    pub fn class_mass(&self, s: usize) -> Vec<f64> {
        (0..self.k)
            .map(|k| (0..self.n).map(|i| self.priors[i][k] * self.bag_densities[i][s]).sum())
            .collect()
    }

    /// Random world with Dirichlet(1) densities and priors.
    pub fn random(rng: &mut impl Rng, support_size: usize, n: usize, k: usize, with_generator: bool) -> Self {
        let bag_densities = (0..n).map(|_| random_simplex(rng, support_size)).collect();
        let priors = (0..n).map(|_| random_simplex(rng, k)).collect();
        let generator_density = with_generator.then(|| random_simplex(rng, support_size));
        Self { support_size, n, k, bag_densities, priors, generator_density }
    }

    fn generator(&self) -> Result<&[f64]> {
        self.generator_density
            .as_deref()
            .ok_or_else(|| Error::config("this operation needs a generator density"))
    }
}

/// Uniform draw from the probability simplex (normalized exponentials).
pub fn random_simplex(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..len).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `P_D(·|x)` on every support point; the last entry of each row is fake.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDiscriminator {
    pub rows: Vec<Vec<f64>>,
}

impl TabularDiscriminator {
    pub fn validate(&self, k: usize) -> Result<()> {
        for (s, row) in self.rows.iter().enumerate() {
            check_simplex(row, k + 1, &format!("discriminator row {s}"))?;
        }
        Ok(())
    }

    /// Class probabilities with the fake mass removed.
    pub fn normalized_posterior(&self, s: usize) -> Vec<f64> {
        crate::losses::normalize_posterior(&self.rows[s])
    }

    pub fn max_abs_deviation(&self, other: &Self) -> f64 {
        self.rows
            .iter()
            .zip(&other.rows)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// `P_D*(k|x) = c_k / (A + g)`, fake entry `g / (A + g)`; zero-mass points
/// get the uniform row.
pub fn optimal_discriminator_closed_form(world: &TabularWorld) -> Result<TabularDiscriminator> {
    world.validate()?;
    let g = world.generator()?;
    let a = world.mixture();
    let rows = (0..world.support_size)
        .map(|s| {
            let z = a[s] + g[s];
            if z <= 0.0 {
                return vec![1.0 / (world.k + 1) as f64; world.k + 1];
            }
            let mut row: Vec<f64> = world.class_mass(s).into_iter().map(|c| c / z).collect();
            row.push(g[s] / z);
            row
        })
        .collect();
    Ok(TabularDiscriminator { rows })
}

/// Final classifier at one point and the bag weights that produce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPosterior {
    pub posterior: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `p̃*(y|x) = Σ_i w_i(x) p_i(y)` with `w_i = p_d^i(x) / A(x)`.
pub fn classifier_posterior_at(world: &TabularWorld, point: usize) -> Result<PointPosterior> {
    let a: f64 = world.bag_densities.iter().map(|d| d[point]).sum();
    if a <= 0.0 {
        return Err(Error::UndefinedPoint { point });
    }
    let weights: Vec<f64> = world.bag_densities.iter().map(|d| d[point] / a).collect();
    let posterior = (0..world.k).map(|k| (0..world.n).map(|i| weights[i] * world.priors[i][k]).sum()).collect();
    Ok(PointPosterior { posterior, weights })
}

/// [`classifier_posterior_at`] for every support point.
pub fn classifier_posterior_and_weights(world: &TabularWorld) -> Result<Vec<PointPosterior>> {
    world.validate()?;
    (0..world.support_size).map(|s| classifier_posterior_at(world, s)).collect()
}

fn xlny(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Per-point discriminator objective
/// `A ln(1-P_f) + Σ_k c_k ln(P_k / (1-P_f)) + g ln P_f`; zero-coefficient
/// terms count as zero.
fn point_objective(a: f64, c: &[f64], g: f64, p: &[f64]) -> f64 {
    let k = c.len();
    let real = 1.0 - p[k];
    let mut v = xlny(a, real) + xlny(g, p[k]);
    for (ck, pk) in c.iter().zip(p) {
        if *ck != 0.0 {
            v += ck * (pk / real).ln();
        }
    }
    v
}

fn point_gradient(a: f64, c: &[f64], g: f64, p: &[f64]) -> Vec<f64> {
    let k = c.len();
    let csum: f64 = c.iter().sum();
    let mut grad: Vec<f64> = c.iter().zip(p).map(|(ck, pk)| if *ck == 0.0 { 0.0 } else { ck / pk }).collect();
    // the real-mass terms cancel up to rounding because Σ_k c_k = A
    let residual = if a == csum { 0.0 } else { (csum - a) / (1.0 - p[k]) };
    grad.push(if g == 0.0 { 0.0 } else { g / p[k] } + residual);
    grad
}

/// The discriminator objective of the game summed over the support.
pub fn discriminator_objective(world: &TabularWorld, disc: &TabularDiscriminator) -> Result<f64> {
    let g = world.generator()?;
    let a = world.mixture();
    Ok((0..world.support_size).map(|s| point_objective(a[s], &world.class_mass(s), g[s], &disc.rows[s])).sum())
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (j, uj) in u.iter().enumerate() {
        css += uj;
        let t = (css - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn inf_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

struct Ascent {
    x: Vec<f64>,
    value: f64,
    pg_norm: f64,
    iterations: usize,
}

/// Spectral projected gradient ascent over the simplex with a non-monotone
/// Armijo line search. Stops when the unit-step projected gradient
/// `‖Π(x + ∇f) - x‖∞` falls below `tol`.
fn simplex_ascent(
    f: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64]) -> Vec<f64>,
    x0: Vec<f64>,
    tol: f64,
    max_iters: usize,
) -> Ascent {
    const MEMORY: usize = 10;
    const MAX_STALLS: usize = 50;
    let pg = |x: &[f64], g: &[f64]| {
        let moved: Vec<f64> = x.iter().zip(g).map(|(a, b)| a + b).collect();
        inf_norm_diff(&project_simplex(&moved), x)
    };
    let mut x = x0;
    let mut fx = f(&x);
    let mut g = grad(&x);
    let mut history = vec![fx];
    let mut alpha = 1.0;
    let mut stalls = 0;
    let mut best = Ascent { x: x.clone(), value: fx, pg_norm: pg(&x, &g), iterations: 0 };
    for it in 1..=max_iters {
        let norm = pg(&x, &g);
        if fx > best.value || (fx == best.value && norm < best.pg_norm) {
            best = Ascent { x: x.clone(), value: fx, pg_norm: norm, iterations: it - 1 };
        }
        if norm < tol {
            return Ascent { x, value: fx, pg_norm: norm, iterations: it - 1 };
        }
        let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + alpha * b).collect();
        let d: Vec<f64> = project_simplex(&trial).iter().zip(&x).map(|(p, a)| p - a).collect();
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        let reference = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut lambda = 1.0;
        let (xn, fn_) = loop {
            let cand: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + lambda * b).collect();
            let fc = f(&cand);
            if fc.is_finite() && fc >= reference + 1e-4 * lambda * slope {
                break (cand, fc);
            }
            lambda *= 0.5;
            if lambda < 1e-20 {
                break (x.clone(), fx);
            }
        };
        let gn = grad(&xn);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| b - a).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        alpha = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { 1e6 };
        if ss == 0.0 {
            // line search stalled at rounding level; retry with a small step a few times
            stalls += 1;
            if stalls > MAX_STALLS {
                break;
            }
            alpha = 1e-3;
        } else {
            stalls = 0;
        }
        x = xn;
        fx = fn_;
        g = gn;
        history.push(fx);
        if history.len() > MEMORY {
            history.remove(0);
        }
    }
    let norm = pg(&x, &g);
    if fx > best.value || (fx == best.value && norm < best.pg_norm) {
        best = Ascent { x, value: fx, pg_norm: norm, iterations: max_iters };
    }
    best
}

/// Brute-force maximizer of the discriminator objective, one support point
/// at a time, from `restarts` starting points (the first is uniform, the rest
/// random). Independent of the closed form.
pub fn numeric_best_response(world: &TabularWorld, opts: &BestResponse) -> Result<TabularDiscriminator> {
    world.validate()?;
    let BestResponse { tolerance, restarts, seed, max_iterations } = *opts;
    let g = world.generator()?;
    let a = world.mixture();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(world.support_size);
    let mut worst: Option<(usize, f64)> = None;
    for s in 0..world.support_size {
        let c = world.class_mass(s);
        if a[s] + g[s] <= 0.0 {
            // objective is identically zero: every row is optimal
            rows.push(vec![1.0 / (world.k + 1) as f64; world.k + 1]);
            continue;
        }
        let f = |p: &[f64]| point_objective(a[s], &c, g[s], p);
        let grad = |p: &[f64]| point_gradient(a[s], &c, g[s], p);
        let mut best: Option<Ascent> = None;
        for r in 0..restarts.max(1) {
            let x0 = if r == 0 { vec![1.0 / (world.k + 1) as f64; world.k + 1] } else { random_simplex(&mut rng, world.k + 1) };
            let run = simplex_ascent(f, grad, x0, tolerance, max_iterations);
            if best.as_ref().is_none_or(|b| run.value > b.value) {
                best = Some(run);
            }
        }
        let best = best.expect("at least one restart");
        if best.pg_norm >= tolerance {
            worst = Some(match worst {
                Some((it, n)) if n >= best.pg_norm => (it, n),
                _ => (best.iterations, best.pg_norm),
            });
        }
        rows.push(best.x);
    }
    if let Some((iterations, grad_norm)) = worst {
        return Err(Error::NonConvergence { iterations, grad_norm, best: rows });
    }
    Ok(TabularDiscriminator { rows })
}

/// `p_g* = (1/n) Σ_i p_d^i`.
pub fn optimal_generator(world: &TabularWorld) -> Vec<f64> {
    let n = world.n as f64;
    world.mixture().into_iter().map(|a| a / n).collect()
}

/// Game value `C(G)` at generator density `g`: the discriminator objective at
/// the optimal discriminator for that `g`.
pub fn game_value(world: &TabularWorld, g: &[f64]) -> Result<f64> {
    let w = world.with_generator(g.to_vec())?;
    let d = optimal_discriminator_closed_form(&w)?;
    discriminator_objective(&w, &d)
}

/// Derivative of `C(G)` with respect to `p_g(x)`: `ln(g / (A + g))`.
fn game_value_gradient(a: &[f64], g: &[f64]) -> Vec<f64> {
    a.iter().zip(g).map(|(a, g)| (g.max(1e-300) / (a + g.max(1e-300))).ln()).collect()
}

/// Numeric minimizer of `C(G)` over the simplex of generator densities.
pub fn minimize_game_value(world: &TabularWorld, tolerance: f64) -> Result<Vec<f64>> {
    world.validate()?;
    let a = world.mixture();
    let s = world.support_size;
    let neg = |g: &[f64]| -> f64 {
        let mut v = 0.0;
        for (a, g) in a.iter().zip(g) {
            let z = a + g;
            if z > 0.0 {
                v += xlny(*a, a / z) + xlny(*g, g / z);
            }
        }
        -v
    };
    let grad = |g: &[f64]| game_value_gradient(&a, g).into_iter().map(|d| -d).collect::<Vec<_>>();
    let run = simplex_ascent(neg, grad, vec![1.0 / s as f64; s], tolerance, MAX_ITERATIONS);
    if run.pg_norm >= tolerance {
        return Err(Error::NonConvergence { iterations: run.iterations, grad_norm: run.pg_norm, best: vec![run.x] });
    }
    Ok(run.x)
}

/// Equilibrium value split into the divergence part `n ln n - (n+1) ln(n+1)`
/// and the expected prior cross-entropy part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumValue {
    pub divergence_part: f64,
    pub ce_part: f64,
    pub total: f64,
}

pub fn equilibrium_value(world: &TabularWorld) -> Result<EquilibriumValue> {
    world.validate()?;
    let n = world.n as f64;
    let divergence_part = n * n.ln() - (n + 1.0) * (n + 1.0).ln();
    let mut ce_part = 0.0;
    for s in 0..world.support_size {
        if world.bag_densities.iter().all(|d| d[s] == 0.0) {
            continue;
        }
        let post = classifier_posterior_at(world, s)?.posterior;
        for i in 0..world.n {
            let w = world.bag_densities[i][s];
            for k in 0..world.k {
                let p = world.priors[i][k];
                if w * p != 0.0 {
                    if post[k] <= 0.0 {
                        return Err(Error::UndefinedPoint { point: s });
                    }
                    ce_part -= w * p * post[k].ln();
                }
            }
        }
    }
    Ok(EquilibriumValue { divergence_part, ce_part, total: divergence_part - ce_part })
}

/// `Σ_x p_d(x) KL(p ‖ p̃_D(·|x))` for a single-bag world.
pub fn single_bag_kl(world: &TabularWorld, disc: &TabularDiscriminator) -> f64 {
    let prior = &world.priors[0];
    (0..world.support_size)
        .map(|s| {
            let w = world.bag_densities[0][s];
            if w == 0.0 {
                return 0.0;
            }
            let q = disc.normalized_posterior(s);
            w * prior.iter().zip(&q).map(|(p, q)| if *p == 0.0 { 0.0 } else { p * (p / q).ln() }).sum::<f64>()
        })
        .sum()
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// Best response vs closed form, and generator independence of the classifier.
    Discriminator,
    /// Single-bag posteriors equal the bag prior.
    Prior,
    /// The bag mixture minimizes the game value.
    Generator,
    Value,
    All,
}

impl std::str::FromStr for Check {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discriminator" => Ok(Self::Discriminator),
            "prior" => Ok(Self::Prior),
            "generator" => Ok(Self::Generator),
            "value" => Ok(Self::Value),
            "all" => Ok(Self::All),
            other => Err(Error::config(format!("unknown check `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub deviation: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, deviation: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed: deviation <= tolerance, deviation, tolerance, detail: detail.into() }
    }

    fn failed(name: &str, tolerance: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed: false, deviation: f64::INFINITY, tolerance, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub checks: Vec<CheckOutcome>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl std::fmt::Display for OracleReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<22} deviation {:.3e} (tolerance {:.0e})  {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.deviation,
                c.tolerance,
                c.detail
            )?;
        }
        Ok(())
    }
}

/// Generator densities used when a check needs several: uniform, the
/// bag mixture and a linearly skewed vector.
fn probe_generators(world: &TabularWorld) -> Vec<Vec<f64>> {
    let s = world.support_size;
    let skew_total = (s * (s + 1) / 2) as f64;
    vec![
        vec![1.0 / s as f64; s],
        optimal_generator(world),
        (1..=s).map(|j| j as f64 / skew_total).collect(),
    ]
}

fn check_discriminator(world: &TabularWorld, seed: u64) -> Vec<CheckOutcome> {
    let w = match &world.generator_density {
        Some(_) => world.clone(),
        None => world.with_generator(optimal_generator(world)).expect("mixture is a density"),
    };
    let mut out = Vec::new();
    let closed = optimal_discriminator_closed_form(&w).expect("validated world");
    match numeric_best_response(&w, &BestResponse::seeded(seed)) {
        Ok(num) => out.push(CheckOutcome::new(
            "best_response_closed_form",
            num.max_abs_deviation(&closed),
            1e-4,
            "numeric best response vs closed form",
        )),
        Err(e) => out.push(CheckOutcome::failed("best_response_closed_form", 1e-4, e.to_string())),
    }
    let mut dev: f64 = 0.0;
    for g in probe_generators(world).into_iter().chain(w.generator_density.clone()) {
        let wg = world.with_generator(g).expect("probe densities are valid");
        let d = optimal_discriminator_closed_form(&wg).expect("validated world");
        for s in 0..world.support_size {
            if let Ok(pp) = classifier_posterior_at(world, s) {
                dev = dev.max(inf_norm_diff(&d.normalized_posterior(s), &pp.posterior));
            }
        }
    }
    out.push(CheckOutcome::new("classifier_generator_independent", dev, 1e-9, "normalized closed form vs weighted priors"));
    out
}

fn check_prior(world: &TabularWorld, seed: u64) -> Vec<CheckOutcome> {
    let mut dev: f64 = 0.0;
    let mut kl: f64 = 0.0;
    for i in 0..world.n {
        let single = world.single_bag(i);
        for g in probe_generators(&single) {
            let w = single.with_generator(g).expect("probe densities are valid");
            match numeric_best_response(&w, &BestResponse::seeded(seed)) {
                Ok(d) => {
                    for s in 0..w.support_size {
                        if w.bag_densities[0][s] > 0.0 {
                            dev = dev.max(inf_norm_diff(&d.normalized_posterior(s), &w.priors[0]));
                        }
                    }
                    kl = kl.max(single_bag_kl(&w, &d));
                }
                Err(e) => return vec![CheckOutcome::failed("single_bag_prior", 1e-4, e.to_string())],
            }
        }
    }
    vec![
        CheckOutcome::new("single_bag_prior", dev, 1e-4, format!("{} bag(s) x 3 generator densities", world.n)),
        CheckOutcome::new("single_bag_kl", kl, 1e-6, "expected KL(prior || normalized posterior)"),
    ]
}

fn check_generator(world: &TabularWorld, seed: u64) -> Vec<CheckOutcome> {
    let opt = optimal_generator(world);
    let mut out = match minimize_game_value(world, 1e-8) {
        Ok(g) => vec![CheckOutcome::new(
            "generator_minimizer",
            total_variation(&g, &opt),
            1e-3,
            "total variation to the bag mixture",
        )],
        Err(e) => vec![CheckOutcome::failed("generator_minimizer", 1e-3, e.to_string())],
    };
    let at_opt = game_value(world, &opt).expect("mixture is a density");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut excess = 0f64;
    for _ in 0..100 {
        let g = random_simplex(&mut rng, world.support_size);
        excess = excess.max(at_opt - game_value(world, &g).expect("random density"));
    }
    out.push(CheckOutcome::new("generator_global_min", excess.max(0.0), 1e-12, "C(mixture) <= C(g) for 100 random g"));
    out
}

fn check_value(world: &TabularWorld) -> Vec<CheckOutcome> {
    let v = match equilibrium_value(world) {
        Ok(v) => v,
        Err(e) => return vec![CheckOutcome::failed("equilibrium_value", 1e-9, e.to_string())],
    };
    let at_opt = game_value(world, &optimal_generator(world)).expect("mixture is a density");
    let mut out = vec![CheckOutcome::new(
        "equilibrium_value",
        (at_opt - v.total).abs(),
        1e-9,
        format!("divergence {:.6} ce {:.6} total {:.6}", v.divergence_part, v.ce_part, v.total),
    )];
    if world.n == 1 {
        out.push(CheckOutcome::new(
            "value_single_bag_log2",
            (v.divergence_part + 2.0 * 2f64.ln()).abs(),
            1e-12,
            "divergence part equals -2 ln 2",
        ));
    }
    out
}

/// Runs the selected checks on a world. Deterministic for a given seed.
pub fn run_checks(world: &TabularWorld, check: Check, seed: u64) -> Result<OracleReport> {
    world.validate()?;
    let mut checks = Vec::new();
    if matches!(check, Check::Discriminator | Check::All) {
        checks.extend(check_discriminator(world, seed));
    }
    if matches!(check, Check::Prior | Check::All) {
        checks.extend(check_prior(world, seed));
    }
    if matches!(check, Check::Generator | Check::All) {
        checks.extend(check_generator(world, seed));
    }
    if matches!(check, Check::Value | Check::All) {
        checks.extend(check_value(world));
    }
    Ok(OracleReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn closed_form_single_point() {
        let w = TabularWorld::new(vec![vec![1.0]], vec![vec![0.7, 0.3]], Some(vec![1.0])).unwrap();
        let d = optimal_discriminator_closed_form(&w).unwrap();
        assert_abs_diff_eq!(d.rows[0].as_slice(), [0.35, 0.15, 0.5].as_slice(), epsilon = 1e-15);
    }

    #[test]
    fn projection_lands_on_simplex() {
        let p = project_simplex(&[0.9, 0.8, -2.0]);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.as_slice(), [0.55, 0.45, 0.0].as_slice(), epsilon = 1e-12);
        assert_eq!(project_simplex(&[0.2, 0.8]), vec![0.2, 0.8]);
    }

    #[test]
    fn gradient_matches_objective() {
        let (a, c, g) = (1.3, [0.5, 0.8], 0.4);
        let p = [0.3, 0.5, 0.2];
        let grad = point_gradient(a, &c, g, &p);
        for j in 0..3 {
            let h = 1e-6;
            let mut up = p;
            let mut dn = p;
            up[j] += h;
            dn[j] -= h;
            let fd = (point_objective(a, &c, g, &up) - point_objective(a, &c, g, &dn)) / (2.0 * h);
            assert_abs_diff_eq!(grad[j], fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn best_response_matches_closed_form_on_a_small_world() {
        let w = TabularWorld::new(
            vec![vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3]],
            vec![vec![0.25, 0.75], vec![0.9, 0.1]],
            Some(vec![0.1, 0.1, 0.8]),
        )
        .unwrap();
        let num = numeric_best_response(&w, &BestResponse::seeded(7)).unwrap();
        let closed = optimal_discriminator_closed_form(&w).unwrap();
        assert!(num.max_abs_deviation(&closed) < 1e-6);
    }

    #[test]
    fn degenerate_prior_gives_certain_class() {
        let w = TabularWorld::new(vec![vec![1.0]], vec![vec![1.0, 0.0]], Some(vec![0.3])).unwrap_err();
        assert!(matches!(w, Error::Validation(_)));
        let w = TabularWorld::new(vec![vec![1.0]], vec![vec![1.0, 0.0]], Some(vec![1.0])).unwrap();
        let d = numeric_best_response(&w, &BestResponse { restarts: 3, ..Default::default() }).unwrap();
        assert_abs_diff_eq!(d.normalized_posterior(0)[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_mass_points() {
        let w = TabularWorld::new(vec![vec![1.0, 0.0]], vec![vec![0.5, 0.5]], Some(vec![1.0, 0.0])).unwrap();
        let d = optimal_discriminator_closed_form(&w).unwrap();
        assert_eq!(d.rows[1], vec![1.0 / 3.0; 3]);
        assert!(matches!(classifier_posterior_and_weights(&w), Err(Error::UndefinedPoint { point: 1 })));
        assert!(equilibrium_value(&w).is_ok());
    }

    #[test]
    fn bag_weights_normalize() {
        let w = TabularWorld::new(
            vec![vec![0.2, 0.8], vec![0.6, 0.4]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            None,
        )
        .unwrap();
        let pp = classifier_posterior_at(&w, 0).unwrap();
        assert_abs_diff_eq!(pp.weights.as_slice(), [0.25, 0.75].as_slice(), epsilon = 1e-15);
        assert_abs_diff_eq!(pp.posterior.as_slice(), [0.25, 0.75].as_slice(), epsilon = 1e-15);
    }

    #[test]
    fn optimal_generator_examples() {
        let w = TabularWorld::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0.5, 0.5]; 2], None).unwrap();
        assert_eq!(optimal_generator(&w), vec![0.5, 0.5]);
        let w1 = w.single_bag(0);
        assert_eq!(optimal_generator(&w1), w1.bag_densities[0]);
    }

    #[test]
    fn value_examples() {
        let w = TabularWorld::new(vec![vec![1.0]], vec![vec![0.5, 0.5]], None).unwrap();
        let v = equilibrium_value(&w).unwrap();
        let ln2 = 2f64.ln();
        assert_abs_diff_eq!(v.divergence_part, -2.0 * ln2, epsilon = 1e-12);
        assert_abs_diff_eq!(v.ce_part, ln2, epsilon = 1e-12);
        assert_abs_diff_eq!(v.total, -3.0 * ln2, epsilon = 1e-12);
        let w2 = TabularWorld::new(vec![vec![1.0], vec![1.0]], vec![vec![0.5, 0.5]; 2], None).unwrap();
        let v2 = equilibrium_value(&w2).unwrap();
        assert_abs_diff_eq!(v2.divergence_part, 2.0 * ln2 - 3.0 * 3f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(v2.divergence_part, -1.9095, epsilon = 1e-4);
    }

    #[test]
    fn world_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = TabularWorld::random(&mut rng, 4, 2, 3, true);
        let back = TabularWorld::from_json_str(&serde_json::to_string(&w).unwrap()).unwrap();
        assert_eq!(w, back);
        let bad = r#"{"support_size":2,"n":1,"k":2,"bag_densities":[[0.5,0.6]],"priors":[[0.5,0.5]]}"#;
        assert!(matches!(TabularWorld::from_json_str(bad), Err(Error::Validation(_))));
    }
}
