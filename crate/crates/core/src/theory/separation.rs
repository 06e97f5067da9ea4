use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CsbmParams;
use crate::seed::rng_for;

/// Allowed gap between the simulated and requested distance ratio.
pub const RATIO_TOLERANCE: f64 = 0.05;

/// Width of the reported confidence band, in standard errors.
const BAND_Z: f64 = 3.0;

/// Expected distance between the class means after neighbour-mean
/// aggregation: `|p − q| / (p + q) · ‖μ1 − μ2‖`.
pub fn csbm_expected_distance(params: &CsbmParams) -> Result<f64> {
    let (p, q) = (params.p, params.q);
    if p + q <= 0.0 {
        return Err(Error::Undefined("p = q = 0: nodes have no neighbours, the aggregated distance is undefined".into()));
    }
    Ok((p - q).abs() / (p + q) * params.mean_gap())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaxRatio {
    Bounded(f64),
    /// `p = q`: the unprompted distance is zero, so any ratio is reachable.
    Unbounded,
}

/// Largest amplification `1 + p / |p − q|` reachable with two anchors.
pub fn theorem1_max_ratio(p: f64, q: f64) -> MaxRatio {
    if p == q {
        MaxRatio::Unbounded
    } else {
        MaxRatio::Bounded(1.0 + p / (p - q).abs())
    }
}

/// Anchors `{μ1, μ2}` and the expected class-pair scores that realise a
/// target ratio. An edge between classes `a` and `b` carries the prompt
/// `b_ab·μ1 + (1 − b_ab)·μ2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Witness {
    pub anchors: [Vec<f64>; 2],
    pub b11: f64,
    pub b22: f64,
    pub b12: f64,
    pub b21: f64,
    pub target_ratio: f64,
}

impl Theorem1Witness {
    fn prompt(&self, a: usize, b: usize) -> Vec<f64> {
        let w = match (a, b) {
            (0, 0) => self.b11,
            (1, 1) => self.b22,
            (0, _) => self.b12,
            _ => self.b21,
        };
        self.anchors[0].iter().zip(&self.anchors[1]).map(|(m1, m2)| w * m1 + (1.0 - w) * m2).collect()
    }
}

pub fn theorem1_construct_witness(params: &CsbmParams, t: f64) -> Result<Theorem1Witness> {
    params.validate()?;
    let (p, q) = (params.p, params.q);
    let t_max = match theorem1_max_ratio(p, q) {
        MaxRatio::Bounded(m) => m,
        MaxRatio::Unbounded => {
            return Err(Error::Range("p = q: the unprompted distance is zero and no finite ratio is defined".into()));
        }
    };
    // A relative slack of 1e-12 admits `T_max` written as a decimal or fraction.
    if !(t > 1.0 && t <= t_max * (1.0 + 1e-12)) {
        return Err(Error::Range(format!("target ratio {t} outside (1, {t_max}] (T_max = 1 + p/|p-q| = {t_max})")));
    }
    let delta = (t - 1.0) * (p - q) / p;
    // Guard the T = T_max endpoint against rounding just past ±1.
    let delta = delta.clamp(-1.0, 1.0);
    let (b11, b22) = if delta > 0.0 {
        (delta, 0.0)
    } else if delta < 0.0 {
        (0.0, -delta)
    } else {
        (0.5, 0.5)
    };
    Ok(Theorem1Witness {
        anchors: [params.mu1.clone(), params.mu2.clone()],
        b11,
        b22,
        b12: 0.5,
        b21: 0.5,
        target_ratio: t,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimates {
    pub unprompted: f64,
    pub prompted: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub theorem: String,
    pub params: CsbmParams,
    pub witness: Theorem1Witness,
    pub analytic: DistanceEstimates,
    /// Means over trials.
    pub empirical: DistanceEstimates,
    /// Confidence half-widths of the empirical means.
    pub half_width: DistanceEstimates,
    pub trials: usize,
    pub nodes_per_class: usize,
    pub pass: bool,
}

impl DistanceReport {
    pub fn band_contains_target(&self) -> bool {
        (self.empirical.ratio - self.witness.target_ratio).abs() <= self.half_width.ratio
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// One CSBM draw: class-mean distances of the neighbour means without and
/// with the witness prompts on every edge.
fn simulate_trial<R: Rng + ?Sized>(params: &CsbmParams, witness: &Theorem1Witness, n: usize, rng: &mut R) -> (f64, f64) {
    let dim = params.mu1.len();
    let total = 2 * n;
    let class = |i: usize| usize::from(i >= n);
    let mut x = vec![0.0; total * dim];
    for i in 0..total {
        let mu = if class(i) == 0 { &params.mu1 } else { &params.mu2 };
        for c in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            x[i * dim + c] = mu[c] + z;
        }
    }
    let mut sums = vec![0.0; total * dim];
    let mut same = vec![0usize; total];
    let mut other = vec![0usize; total];
    for i in 0..total {
        for j in i + 1..total {
            let same_class = class(i) == class(j);
            if rng.random::<f64>() < if same_class { params.p } else { params.q } {
                for c in 0..dim {
                    sums[i * dim + c] += x[j * dim + c];
                    sums[j * dim + c] += x[i * dim + c];
                }
                let counter = if same_class { &mut same } else { &mut other };
                counter[i] += 1;
                counter[j] += 1;
            }
        }
    }
    let prompts = [[witness.prompt(0, 0), witness.prompt(0, 1)], [witness.prompt(1, 1), witness.prompt(1, 0)]];
    let mut plain = [vec![0.0; dim], vec![0.0; dim]];
    let mut prompted = [vec![0.0; dim], vec![0.0; dim]];
    let mut counts = [0usize; 2];
    for i in 0..total {
        let deg = same[i] + other[i];
        if deg == 0 {
            continue;
        }
        let k = class(i);
        counts[k] += 1;
        let inv = 1.0 / deg as f64;
        for c in 0..dim {
            let h = sums[i * dim + c] * inv;
            let e = (same[i] as f64 * prompts[k][0][c] + other[i] as f64 * prompts[k][1][c]) * inv;
            plain[k][c] += h;
            prompted[k][c] += h + e;
        }
    }
    for k in 0..2 {
        let inv = 1.0 / counts[k].max(1) as f64;
        plain[k].iter_mut().chain(prompted[k].iter_mut()).for_each(|v| *v *= inv);
    }
    (norm_diff(&plain[0], &plain[1]), norm_diff(&prompted[0], &prompted[1]))
}

/// Monte-Carlo check that the witness scales the class distance by its
/// target ratio under neighbour-mean aggregation (no weights, no activation).
///
/// Trial `t` draws from a generator seeded by `(seed, t)`.
pub fn theorem1_verify(
    params: &CsbmParams,
    witness: &Theorem1Witness,
    nodes_per_class: usize,
    trials: usize,
    seed: u64,
) -> Result<DistanceReport> {
    params.validate()?;
    if trials == 0 || nodes_per_class == 0 {
        return Err(Error::Config("theorem1_verify needs at least one trial and one node per class".into()));
    }
    if witness.anchors[0].len() != params.mu1.len() || witness.anchors[1].len() != params.mu1.len() {
        return Err(Error::shape("witness anchors and class means differ in dimension"));
    }
    let d = csbm_expected_distance(params)?;
    let delta = witness.b11 - witness.b22;
    let dp = (params.p * (1.0 + delta) - params.q).abs() / (params.p + params.q) * params.mean_gap();
    let analytic = DistanceEstimates { unprompted: d, prompted: dp, ratio: if d > 0.0 { dp / d } else { f64::NAN } };

    let (mut plain, mut prompted, mut ratios) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..trials {
        let (a, b) = simulate_trial(params, witness, nodes_per_class, &mut rng_for(seed, &[t as u64]));
        plain.push(a);
        prompted.push(b);
        ratios.push(b / a);
    }
    let se = |xs: &[f64]| {
        let (m, s) = mean_sd(xs);
        (m, BAND_Z * s / (xs.len() as f64).sqrt())
    };
    let ((m0, h0), (m1, h1), (mr, hr)) = (se(&plain), se(&prompted), se(&ratios));
    let pass = (mr - witness.target_ratio).abs() <= RATIO_TOLERANCE;
    Ok(DistanceReport {
        theorem: "theorem1".into(),
        params: params.clone(),
        witness: witness.clone(),
        analytic,
        empirical: DistanceEstimates { unprompted: m0, prompted: m1, ratio: mr },
        half_width: DistanceEstimates { unprompted: h0, prompted: h1, ratio: hr },
        trials,
        nodes_per_class,
        pass,
    })
}
