//! Performance statistics over trial logs: deflection taxonomy, per-trial
//! metrics, the participant score, proficiency clustering, equiprobability
//! curves, the followed-suggestion heuristic and paired tests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

use crate::error::{Error, Result};
use crate::harness::TrialLog;
use crate::pilots::{Proficiency, DEAD_BAND};
use crate::rng::seeded;

/// Angle beyond which an excursion counts toward recoveries, degrees.
pub const RECOVERY_ANGLE: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeflectionClass {
    Destabilizing,
    Anticipatory,
    Corrective,
    None,
}

impl DeflectionClass {
    pub fn as_str(self) -> &'static str {
        match self {
            DeflectionClass::Destabilizing => "destabilizing",
            DeflectionClass::Anticipatory => "anticipatory",
            DeflectionClass::Corrective => "corrective",
            DeflectionClass::None => "none",
        }
    }
}

impl std::str::FromStr for DeflectionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "destabilizing" => DeflectionClass::Destabilizing,
            "anticipatory" => DeflectionClass::Anticipatory,
            "corrective" => DeflectionClass::Corrective,
            "none" => DeflectionClass::None,
            other => return Err(Error::Recording(format!("unknown deflection class {other:?}"))),
        })
    }
}

/// Destabilizing: θ, ω and d share a sign. Anticipatory: d pushes the way
/// θ leans while ω already points back. Everything else with a deflection,
/// including θ or ω exactly zero, is corrective.
pub fn classify_deflection(theta: f64, omega: f64, d: f64) -> DeflectionClass {
    if d.abs() < DEAD_BAND {
        return DeflectionClass::None;
    }
    if theta == 0.0 || omega == 0.0 {
        return DeflectionClass::Corrective;
    }
    let (st, so, sd) = (theta.signum(), omega.signum(), d.signum());
    if st == sd && so == st {
        DeflectionClass::Destabilizing
    } else if st == sd && so == -st {
        DeflectionClass::Anticipatory
    } else {
        DeflectionClass::Corrective
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub crashes: usize,
    pub pct_destab: f64,
    pub pct_anticipatory: f64,
    pub mean_abs_theta: f64,
    pub sd_theta: f64,
    pub mean_abs_vel: f64,
    pub rms_vel: f64,
    pub recoveries: usize,
}

pub fn trial_metrics(log: &TrialLog) -> Result<TrialMetrics> {
    let rows = &log.rows;
    if rows.is_empty() {
        return Err(Error::Empty("trial log"));
    }
    let n = rows.len() as f64;
    let mut crashes = 0;
    let (mut active, mut destab, mut antic) = (0usize, 0usize, 0usize);
    let (mut sum_t, mut sum_abs_t, mut sum_abs_w, mut sum_w2) = (0.0, 0.0, 0.0, 0.0);
    let mut recoveries = 0;
    let mut outside = false;
    for r in rows {
        sum_t += r.theta;
        sum_abs_t += r.theta.abs();
        sum_abs_w += r.omega.abs();
        sum_w2 += r.omega * r.omega;
        match classify_deflection(r.theta, r.omega, r.executed_deflection) {
            DeflectionClass::None => {}
            c => {
                active += 1;
                destab += usize::from(c == DeflectionClass::Destabilizing);
                antic += usize::from(c == DeflectionClass::Anticipatory);
            }
        }
        if r.theta.abs() > RECOVERY_ANGLE {
            outside = true;
        } else if outside && r.theta.abs() < RECOVERY_ANGLE {
            recoveries += 1;
            outside = false;
        }
        if r.crash_flag {
            crashes += 1;
            outside = false;
        }
    }
    let mean_t = sum_t / n;
    let var = rows.iter().map(|r| (r.theta - mean_t).powi(2)).sum::<f64>() / n;
    let pct = |k: usize| if active == 0 { 0.0 } else { 100.0 * k as f64 / active as f64 };
    Ok(TrialMetrics {
        crashes,
        pct_destab: pct(destab),
        pct_anticipatory: pct(antic),
        mean_abs_theta: sum_abs_t / n,
        sd_theta: var.sqrt(),
        mean_abs_vel: sum_abs_w / n,
        rms_vel: (sum_w2 / n).sqrt(),
        recoveries,
    })
}

/// Trial metrics averaged over several trials.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub crashes: f64,
    pub pct_destab: f64,
    pub pct_anticipatory: f64,
    pub mean_abs_theta: f64,
    pub sd_theta: f64,
    pub mean_abs_vel: f64,
    pub rms_vel: f64,
    pub recoveries: f64,
}

impl AggregateMetrics {
    pub const FIELDS: [&'static str; 8] = [
        "crashes",
        "pct_destab",
        "pct_anticipatory",
        "mean_abs_theta",
        "sd_theta",
        "mean_abs_vel",
        "rms_vel",
        "recoveries",
    ];

    pub fn mean_of(trials: &[TrialMetrics]) -> Option<Self> {
        if trials.is_empty() {
            return None;
        }
        let n = trials.len() as f64;
        let avg = |f: fn(&TrialMetrics) -> f64| trials.iter().map(f).sum::<f64>() / n;
        Some(AggregateMetrics {
            crashes: avg(|m| m.crashes as f64),
            pct_destab: avg(|m| m.pct_destab),
            pct_anticipatory: avg(|m| m.pct_anticipatory),
            mean_abs_theta: avg(|m| m.mean_abs_theta),
            sd_theta: avg(|m| m.sd_theta),
            mean_abs_vel: avg(|m| m.mean_abs_vel),
            rms_vel: avg(|m| m.rms_vel),
            recoveries: avg(|m| m.recoveries as f64),
        })
    }

    pub fn values(&self) -> [f64; 8] {
        [
            self.crashes,
            self.pct_destab,
            self.pct_anticipatory,
            self.mean_abs_theta,
            self.sd_theta,
            self.mean_abs_vel,
            self.rms_vel,
            self.recoveries,
        ]
    }

    /// Field-wise `self − baseline`.
    pub fn minus(&self, baseline: &AggregateMetrics) -> AggregateMetrics {
        let a = self.values();
        let b = baseline.values();
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        AggregateMetrics {
            crashes: d[0],
            pct_destab: d[1],
            pct_anticipatory: d[2],
            mean_abs_theta: d[3],
            sd_theta: d[4],
            mean_abs_vel: d[5],
            rms_vel: d[6],
            recoveries: d[7],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreInputs {
    pub mean_abs_theta: f64,
    pub crashes: f64,
    pub pct_destab: f64,
    pub pct_anticipatory: f64,
    pub recoveries: f64,
    pub max_recoveries: f64,
    pub max_crashes: f64,
}

impl ScoreInputs {
    /// Inputs for `m` scored against cohort maxima.
    pub fn from_metrics(m: &TrialMetrics, max_recoveries: f64, max_crashes: f64) -> Self {
        ScoreInputs {
            mean_abs_theta: m.mean_abs_theta,
            crashes: m.crashes as f64,
            pct_destab: m.pct_destab,
            pct_anticipatory: m.pct_anticipatory,
            recoveries: m.recoveries as f64,
            max_recoveries,
            max_crashes,
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Participant score: higher is better.
pub fn score(s: &ScoreInputs) -> f64 {
    (60.0 - s.mean_abs_theta) / 60.0
        + (1.0 - s.crashes / 90.0)
        + (1.0 - s.pct_destab / 100.0)
        + s.pct_anticipatory / 100.0
        + (ratio(s.recoveries, s.max_recoveries) - ratio(s.crashes, s.max_crashes))
}

/// Scores every entry of a cohort against the cohort's own maxima.
pub fn cohort_scores(cohort: &[TrialMetrics]) -> Vec<f64> {
    let max_r = cohort.iter().map(|m| m.recoveries).max().unwrap_or(0) as f64;
    let max_c = cohort.iter().map(|m| m.crashes).max().unwrap_or(0) as f64;
    cohort
        .iter()
        .map(|m| score(&ScoreInputs::from_metrics(m, max_r, max_c)))
        .collect()
}

/// Feature vector used for proficiency clustering; `rms_vel` is last.
pub fn proficiency_features(m: &TrialMetrics) -> Vec<f64> {
    vec![
        m.crashes as f64,
        m.pct_destab,
        m.pct_anticipatory,
        m.mean_abs_theta,
        m.sd_theta,
        m.mean_abs_vel,
        m.rms_vel,
    ]
}

/// k-means (k = 3) over z-normalized [`proficiency_features`]; clusters are
/// named Good, Medium, Bad by ascending mean `rms_vel`.
pub fn cluster_proficiency(metrics: &[TrialMetrics], seed: u64) -> Result<Vec<Proficiency>> {
    let feats: Vec<Vec<f64>> = metrics.iter().map(proficiency_features).collect();
    let order_dim = feats.first().map_or(0, |f| f.len() - 1);
    cluster_by(&feats, order_dim, seed)
}

/// Three-way clustering of arbitrary feature vectors, ordered by the raw
/// mean of dimension `order_dim`.
pub fn cluster_by(features: &[Vec<f64>], order_dim: usize, seed: u64) -> Result<Vec<Proficiency>> {
    const K: usize = 3;
    if features.len() < K {
        return Err(Error::Degenerate(format!(
            "clustering needs at least {K} points, got {}",
            features.len()
        )));
    }
    let dim = features[0].len();
    if order_dim >= dim || features.iter().any(|f| f.len() != dim) {
        return Err(Error::Shape("feature vectors must share one length".into()));
    }
    if features.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("clustering features"));
    }
    let z = z_normalize(features);
    // Canonical order so the result does not depend on input order.
    let mut order: Vec<usize> = (0..z.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&features[a], &features[b]));
    let sorted: Vec<Vec<f64>> = order.iter().map(|&i| z[i].clone()).collect();
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < K {
        return Err(Error::Degenerate(format!(
            "only {} distinct feature vectors",
            distinct.len()
        )));
    }
    let assign_sorted = kmeans(&sorted, K, 50, &mut seeded(seed));
    let mut assign = vec![0; z.len()];
    for (pos, &i) in order.iter().enumerate() {
        assign[i] = assign_sorted[pos];
    }
    let mut means: Vec<(f64, usize)> = (0..K)
        .map(|c| {
            let members: Vec<f64> = (0..features.len())
                .filter(|&i| assign[i] == c)
                .map(|i| features[i][order_dim])
                .collect();
            (members.iter().sum::<f64>() / members.len().max(1) as f64, c)
        })
        .collect();
    means.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let names = [Proficiency::Good, Proficiency::Medium, Proficiency::Bad];
    let mut label_of = [Proficiency::Good; K];
    for (rank, &(_, c)) in means.iter().enumerate() {
        label_of[c] = names[rank];
    }
    Ok(assign.iter().map(|&c| label_of[c]).collect())
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.total_cmp(y);
        if o.is_ne() {
            return o;
        }
    }
    std::cmp::Ordering::Equal
}

/// Per-dimension `(x − mean) / sd`; constant dimensions become 0.
fn z_normalize(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len() as f64;
    let dim = x[0].len();
    let mut out = vec![vec![0.0; dim]; x.len()];
    for j in 0..dim {
        let mean = x.iter().map(|r| r[j]).sum::<f64>() / n;
        let sd = (x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd > 0.0 {
            for (o, r) in out.iter_mut().zip(x) {
                o[j] = (r[j] - mean) / sd;
            }
        }
    }
    out
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, ctr) in centers.iter().enumerate() {
        let d = dist2(p, ctr);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Best-of-`restarts` Lloyd iterations from k-means++ seeds.
fn kmeans(x: &[Vec<f64>], k: usize, restarts: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts {
        let mut centers = plus_plus(x, k, rng);
        let mut assign = vec![usize::MAX; x.len()];
        for _ in 0..300 {
            let next: Vec<usize> = x.iter().map(|p| nearest(p, &centers).0).collect();
            let changed = next != assign;
            assign = next;
            for (c, ctr) in centers.iter_mut().enumerate() {
                let members: Vec<&Vec<f64>> = x.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
                if members.is_empty() {
                    continue;
                }
                for (j, v) in ctr.iter_mut().enumerate() {
                    *v = members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64;
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = x.iter().zip(&assign).map(|(p, &a)| dist2(p, &centers[a])).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, assign));
        }
    }
    best.map(|b| b.1).unwrap_or_default()
}

fn plus_plus(x: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![x[rng.gen_range(0..x.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = x.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen_range(0.0..total);
            let mut idx = x.len() - 1;
            for (i, w) in d.iter().enumerate() {
                if r < *w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        } else {
            rng.gen_range(0..x.len())
        };
        centers.push(x[pick].clone());
    }
    centers
}

/// Class counts in one bin of folded position.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinCounts {
    pub destabilizing: usize,
    pub anticipatory: usize,
    pub corrective: usize,
}

impl BinCounts {
    pub fn total(&self) -> usize {
        self.destabilizing + self.anticipatory + self.corrective
    }

    fn share(&self, k: usize) -> Option<f64> {
        let t = self.total();
        (t > 0).then(|| k as f64 / t as f64)
    }

    pub fn p_destabilizing(&self) -> Option<f64> {
        self.share(self.destabilizing)
    }

    pub fn p_anticipatory(&self) -> Option<f64> {
        self.share(self.anticipatory)
    }

    pub fn p_corrective(&self) -> Option<f64> {
        self.share(self.corrective)
    }

    fn add(&mut self, o: &BinCounts) {
        self.destabilizing += o.destabilizing;
        self.anticipatory += o.anticipatory;
        self.corrective += o.corrective;
    }
}

/// Deflection-class shares against folded position, `θ·sign(ω)`: positive
/// values are on the side the pendulum is currently moving toward. At
/// `ω = 0` the sign of `θ` is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquiprobabilityCurve {
    pub bin_width: f64,
    /// Keyed by bin index `floor(folded / bin_width)`; only populated bins.
    pub bins: BTreeMap<i64, BinCounts>,
}

pub fn folded_position(theta: f64, omega: f64) -> f64 {
    if omega == 0.0 {
        theta.abs()
    } else {
        theta * omega.signum()
    }
}

impl EquiprobabilityCurve {
    pub fn bin(&self, index: i64) -> Option<&BinCounts> {
        self.bins.get(&index)
    }

    /// Counts merged over bins lying within `[lo, hi)` degrees; `None` when
    /// none of them is populated.
    pub fn range(&self, lo: f64, hi: f64) -> Option<BinCounts> {
        let mut acc = BinCounts::default();
        let mut any = false;
        for (&i, c) in &self.bins {
            let start = i as f64 * self.bin_width;
            if start >= lo - 1e-9 && start + self.bin_width <= hi + 1e-9 {
                acc.add(c);
                any = true;
            }
        }
        any.then_some(acc)
    }

    /// `(bin_start, p_destab, p_anticipatory, p_corrective, count)` rows.
    pub fn rows(&self) -> Vec<(f64, f64, f64, f64, usize)> {
        self.bins
            .iter()
            .filter_map(|(&i, c)| {
                Some((
                    i as f64 * self.bin_width,
                    c.p_destabilizing()?,
                    c.p_anticipatory()?,
                    c.p_corrective()?,
                    c.total(),
                ))
            })
            .collect()
    }
}

pub fn equiprobability_curve(logs: &[TrialLog], bin_width: f64) -> Result<EquiprobabilityCurve> {
    if logs.is_empty() || logs.iter().all(|l| l.rows.is_empty()) {
        return Err(Error::Empty("trial logs"));
    }
    if !(bin_width > 0.0) {
        return Err(Error::Config(format!("bin width {bin_width} must be positive")));
    }
    let mut bins: BTreeMap<i64, BinCounts> = BTreeMap::new();
    for r in logs.iter().flat_map(|l| &l.rows) {
        let c = classify_deflection(r.theta, r.omega, r.executed_deflection);
        if c == DeflectionClass::None {
            continue;
        }
        let idx = (folded_position(r.theta, r.omega) / bin_width).floor() as i64;
        let b = bins.entry(idx).or_default();
        match c {
            DeflectionClass::Destabilizing => b.destabilizing += 1,
            DeflectionClass::Anticipatory => b.anticipatory += 1,
            DeflectionClass::Corrective => b.corrective += 1,
            DeflectionClass::None => {}
        }
    }
    Ok(EquiprobabilityCurve { bin_width, bins })
}

/// Share of suggestions followed by a same-sign pilot deflection within
/// `window_ms` after issue; `None` without suggestions.
pub fn followed_rate(log: &TrialLog, window_ms: f64) -> Option<f64> {
    let rows = &log.rows;
    let window = window_ms / 1000.0;
    let mut total = 0usize;
    let mut followed = 0usize;
    for (i, r) in rows.iter().enumerate() {
        let Some(s) = r.assistant_deflection else {
            continue;
        };
        if s.abs() < DEAD_BAND {
            continue;
        }
        total += 1;
        let hit = rows[i + 1..]
            .iter()
            .take_while(|x| x.t <= r.t + window + 1e-9)
            .any(|x| x.pilot_deflection.abs() >= DEAD_BAND && x.pilot_deflection.signum() == s.signum());
        followed += usize::from(hit);
    }
    (total > 0).then(|| followed as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W−)`.
    pub w: f64,
    pub p: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
}

/// Wilcoxon signed-rank test on paired samples, two-sided.
pub fn paired_wilcoxon(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            context: "paired samples".into(),
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 5 {
        return Err(Error::Degenerate(format!("{} pairs; at least 5 needed", a.len())));
    }
    let mut d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|x| *x != 0.0).collect();
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("paired differences"));
    }
    if d.is_empty() {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    d.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    let n = d.len();
    // Doubled average ranks stay integral under ties.
    let mut rank2 = vec![0u64; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && d[j].abs() == d[i].abs() {
            j += 1;
        }
        let r2 = (i + 1 + j) as u64;
        rank2[i..j].iter_mut().for_each(|r| *r = r2);
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let w_plus2: u64 = d.iter().zip(&rank2).filter(|(x, _)| **x > 0.0).map(|(_, r)| *r).sum();
    let total2: u64 = rank2.iter().sum();
    let w2 = w_plus2.min(total2 - w_plus2);
    let p = if n <= 25 {
        // Count sign patterns with doubled W+ ≤ w2.
        let mut ways = vec![0f64; total2 as usize + 1];
        ways[0] = 1.0;
        for &r in &rank2 {
            for s in (r as usize..ways.len()).rev() {
                ways[s] += ways[s - r as usize];
            }
        }
        let tail: f64 = ways[..=w2 as usize].iter().sum();
        2.0 * tail / 2f64.powi(n as i32)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let z = (w2 as f64 / 2.0 - mean) / var.sqrt();
        2.0 * Normal::standard().cdf(z)
    };
    Ok(WilcoxonResult {
        w: w2 as f64 / 2.0,
        p: p.min(1.0),
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTestResult {
    /// Pairs with `a > b`.
    pub plus: usize,
    /// Pairs with `a < b`.
    pub minus: usize,
    pub p: f64,
}

/// Exact two-sided sign test; ties are dropped.
pub fn sign_test(a: &[f64], b: &[f64]) -> Result<SignTestResult> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            context: "paired samples".into(),
            expected: a.len(),
            got: b.len(),
        });
    }
    let plus = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let minus = a.iter().zip(b).filter(|(x, y)| x < y).count();
    let n = plus + minus;
    if n == 0 {
        return Err(Error::Degenerate("all pairs tied".into()));
    }
    let bin = Binomial::new(0.5, n as u64).expect("valid binomial");
    let p = (2.0 * bin.cdf(plus.min(minus) as u64)).min(1.0);
    Ok(SignTestResult { plus, minus, p })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub label: String,
    #[serde(flatten)]
    pub metrics: TrialMetrics,
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Recording(format!("{}: {e}", path.display())))?;
    w.write_record([
        "label",
        "crashes",
        "pct_destab",
        "pct_anticipatory",
        "mean_abs_theta",
        "sd_theta",
        "mean_abs_vel",
        "rms_vel",
        "recoveries",
    ])?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.label.clone(),
            m.crashes.to_string(),
            m.pct_destab.to_string(),
            m.pct_anticipatory.to_string(),
            m.mean_abs_theta.to_string(),
            m.sd_theta.to_string(),
            m.mean_abs_vel.to_string(),
            m.rms_vel.to_string(),
            m.recoveries.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_metrics_json(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, serde_json::to_string_pretty(rows)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;
