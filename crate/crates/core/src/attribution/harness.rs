use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{attribute, AttributionRequest, BatchSum, Family, Method, ScaledTarget, SmoothFn, SumTarget, TapeTarget, Target};
use crate::error::{Error, Result};

pub const AXIOMS: [&str; 6] =
    ["linearity", "completeness", "null_player", "fidelity_to_control", "batchability", "implementation_invariance"];

/// Copies stacked for the batchability check.
const BATCH_COPIES: usize = 3;
/// Input width of each copy in the batchability check.
const BATCH_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub method: Method,
    pub cases: usize,
    pub max_dim: usize,
    pub seed: u64,
    pub tol: f64,
    /// Bound on `|f(x) − f(x̄) − Σ A|`; quadrature error keeps this looser than `tol` for IG.
    pub completeness_tol: f64,
    pub families: Vec<Family>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            method: Method::IntegratedGradients { steps: 200 },
            cases: 200,
            max_dim: 16,
            seed: 0,
            tol: 1e-8,
            completeness_tol: 1e-4,
            families: Family::ALL.to_vec(),
        }
    }
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_dim < 2 {
            return Err(Error::Config("max_dim must be at least 2".into()));
        }
        if matches!(self.method, Method::Shapley) && self.max_dim > super::MAX_SHAPLEY_DIM {
            return Err(Error::Config(format!("Shapley harness needs max_dim ≤ {}", super::MAX_SHAPLEY_DIM)));
        }
        if matches!(self.method, Method::IntegratedGradients { steps: 0 }) {
            return Err(Error::Config("integrated gradients needs at least one step".into()));
        }
        if self.families.is_empty() {
            return Err(Error::Config("no function families selected".into()));
        }
        if !(self.tol >= 0.0) || !(self.completeness_tol >= 0.0) {
            return Err(Error::Config("tolerances must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub axiom: String,
    pub evaluated: usize,
    pub violations: usize,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub axiom: String,
    pub case: usize,
    pub family: Family,
    pub dim: usize,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub method: Method,
    pub cases: usize,
    pub tol: f64,
    pub completeness_tol: f64,
    pub checks: Vec<CheckSummary>,
    pub violations: Vec<ViolationRecord>,
}

impl AxiomReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn check(&self, axiom: &str) -> Option<&CheckSummary> {
        self.checks.iter().find(|c| c.axiom == axiom)
    }
}

struct CaseResult {
    family: Family,
    dim: usize,
    /// `(axiom index, error)`; errors are absolute.
    errors: Vec<(usize, f64)>,
}

/// Runs every axiom check on `cfg.cases` random smooth functions.
///
/// Errors only on an invalid configuration or a failed attribution call;
/// axiom failures are reported, not raised.
pub fn axiom_harness(cfg: &HarnessConfig) -> Result<AxiomReport> {
    cfg.validate()?;
    let results: Vec<CaseResult> = (0..cfg.cases).into_par_iter().map(|case| run_case(cfg, case)).collect::<Result<_>>()?;

    let mut checks: Vec<CheckSummary> = AXIOMS
        .iter()
        .map(|a| CheckSummary { axiom: a.to_string(), evaluated: 0, violations: 0, max_error: 0.0 })
        .collect();
    let mut violations = Vec::new();
    for (case, r) in results.iter().enumerate() {
        for &(ax, err) in &r.errors {
            let limit = if ax == 1 { cfg.completeness_tol } else { cfg.tol };
            let c = &mut checks[ax];
            c.evaluated += 1;
            c.max_error = c.max_error.max(err);
            if !(err <= limit) {
                c.violations += 1;
                violations.push(ViolationRecord {
                    axiom: AXIOMS[ax].to_string(),
                    case,
                    family: r.family,
                    dim: r.dim,
                    error: err,
                });
            }
        }
    }
    Ok(AxiomReport {
        method: cfg.method,
        cases: cfg.cases,
        tol: cfg.tol,
        completeness_tol: cfg.completeness_tol,
        checks,
        violations,
    })
}

fn run_case(cfg: &HarnessConfig, case: usize) -> Result<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(case as u64);
    let family = cfg.families[case % cfg.families.len()];
    let d = rng.random_range(2..=cfg.max_dim);
    let used = subset(&mut rng, d);
    let f = SmoothFn::random(family, d, &used, &mut rng);
    let g = SmoothFn::random(family, d, &subset(&mut rng, d), &mut rng);
    let c = rng.random_range(-2.0..2.0);

    let mut x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let xb: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    // pin one used coordinate to the baseline
    let pinned = used[rng.random_range(0..used.len())];
    x[pinned] = xb[pinned];

    let run = |t: &dyn Target, x: &[f64], xb: &[f64]| {
        attribute(&AttributionRequest { target: t, input: x, baseline: xb, method: cfg.method })
    };
    let af = run(&f, &x, &xb)?;
    let ag = run(&g, &x, &xb)?;
    let sum = run(&SumTarget(&f, &g), &x, &xb)?;
    let scaled = run(&ScaledTarget(c, &f), &x, &xb)?;
    let additive = (0..d).map(|i| (sum.scores[i] - af.scores[i] - ag.scores[i]).abs());
    let homogeneous = (0..d).map(|i| (scaled.scores[i] - c * af.scores[i]).abs());
    let linearity = additive.chain(homogeneous).fold(0.0, f64::max);

    let null_player = (0..d).filter(|i| !used.contains(i)).map(|i| af.scores[i].abs()).fold(0.0, f64::max);
    let fidelity = (0..d).filter(|&i| x[i] == xb[i]).map(|i| af.scores[i].abs()).fold(0.0, f64::max);

    let tape_f = {
        let f = f.clone();
        TapeTarget::new(d, move |v| f.on_tape(v))
    };
    let invariance = run(&tape_f, &x, &xb)?
        .scores
        .iter()
        .zip(&af.scores)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    // sum of copies of a narrower function
    let db = d.min(BATCH_DIM);
    let fb = SmoothFn::random(family, db, &subset(&mut rng, db), &mut rng);
    let xs: Vec<f64> = (0..db * BATCH_COPIES).map(|_| rng.random_range(-1.0..1.0)).collect();
    let xbs: Vec<f64> = (0..db * BATCH_COPIES).map(|_| rng.random_range(-1.0..1.0)).collect();
    let joint = run(&BatchSum { inner: &fb, copies: BATCH_COPIES }, &xs, &xbs)?;
    let mut batchability: f64 = 0.0;
    for i in 0..BATCH_COPIES {
        let r = i * db..(i + 1) * db;
        let single = run(&fb, &xs[r.clone()], &xbs[r.clone()])?;
        for (a, b) in joint.scores[r].iter().zip(&single.scores) {
            batchability = batchability.max((a - b).abs());
        }
    }

    Ok(CaseResult {
        family,
        dim: d,
        errors: vec![
            (0, linearity),
            (1, af.gap.abs()),
            (2, null_player),
            (3, fidelity),
            (4, batchability),
            (5, invariance),
        ],
    })
}

/// Nonempty proper subset of `0..d`, sorted.
fn subset<R: Rng>(rng: &mut R, d: usize) -> Vec<usize> {
    let k = rng.random_range(1..d);
    let mut v = sample(rng, d, k).into_vec();
    v.sort_unstable();
    v
}
