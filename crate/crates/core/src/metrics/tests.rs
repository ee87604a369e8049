use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::harness::LogRow;
use crate::pilots::Executor;

fn log_of(states: &[(f64, f64, f64)], crashes: &[usize]) -> TrialLog {
    TrialLog {
        rows: states
            .iter()
            .enumerate()
            .map(|(k, &(theta, omega, d))| LogRow {
                t: k as f64 / 200.0,
                theta,
                omega,
                executed_deflection: d,
                crash_probability: 0.0,
                pilot_deflection: d,
                assistant_deflection: None,
                executor: Executor::Pilot,
                deflection_class: classify_deflection(theta, omega, d),
                crash_flag: crashes.contains(&k),
            })
            .collect(),
    }
}

#[test]
fn taxonomy_examples() {
    assert_eq!(classify_deflection(5.0, 2.0, 0.3), DeflectionClass::Destabilizing);
    assert_eq!(classify_deflection(5.0, -2.0, 0.3), DeflectionClass::Anticipatory);
    assert_eq!(classify_deflection(5.0, 2.0, -0.3), DeflectionClass::Corrective);
    assert_eq!(classify_deflection(5.0, 2.0, 0.001), DeflectionClass::None);
    assert_eq!(classify_deflection(-5.0, -2.0, -0.3), DeflectionClass::Destabilizing);
    assert_eq!(classify_deflection(-5.0, 2.0, -0.3), DeflectionClass::Anticipatory);
    assert_eq!(classify_deflection(0.0, 2.0, 0.3), DeflectionClass::Corrective);
    assert_eq!(classify_deflection(5.0, 0.0, 0.3), DeflectionClass::Corrective);
    assert_eq!(classify_deflection(5.0, 2.0, 0.01), DeflectionClass::Destabilizing);
}

#[test]
fn constant_log_metrics() {
    let m = trial_metrics(&log_of(&[(10.0, 0.0, 0.0); 50], &[])).unwrap();
    assert_eq!(m.crashes, 0);
    assert_eq!((m.pct_destab, m.pct_anticipatory), (0.0, 0.0));
    assert_eq!(m.mean_abs_theta, 10.0);
    assert_eq!(m.sd_theta, 0.0);
    assert_eq!(m.rms_vel, 0.0);
    assert_eq!(m.recoveries, 0);
    assert!(trial_metrics(&TrialLog::default()).is_err());
}

#[test]
fn one_recovery() {
    let states: Vec<_> = [10.0, 25.0, 25.0, 15.0].iter().map(|&t| (t, 0.0, 0.0)).collect();
    assert_eq!(trial_metrics(&log_of(&states, &[])).unwrap().recoveries, 1);
}

#[test]
fn crash_cancels_a_recovery() {
    let states: Vec<_> = [10.0, 25.0, 59.0, 0.0, 5.0].iter().map(|&t| (t, 0.0, 0.0)).collect();
    let m = trial_metrics(&log_of(&states, &[2])).unwrap();
    assert_eq!((m.crashes, m.recoveries), (1, 0));
}

#[test]
fn constant_velocity_closed_form() {
    let states: Vec<_> = (0..100).map(|k| (k as f64 * 0.15 - 7.0, 30.0, 0.0)).collect();
    let m = trial_metrics(&log_of(&states, &[])).unwrap();
    assert!((m.rms_vel - 30.0).abs() < 1e-12);
    assert!((m.mean_abs_vel - 30.0).abs() < 1e-12);
}

#[test]
fn percentages_use_deflecting_samples() {
    let states = [
        (5.0, 2.0, 0.3),
        (5.0, -2.0, 0.3),
        (5.0, 2.0, -0.3),
        (5.0, 2.0, -0.3),
        (5.0, 2.0, 0.0),
    ];
    let m = trial_metrics(&log_of(&states, &[])).unwrap();
    assert_eq!(m.pct_destab, 25.0);
    assert_eq!(m.pct_anticipatory, 25.0);
}

#[test]
fn population_sd() {
    let states: Vec<_> = [1.0, 3.0].iter().map(|&t| (t, 0.0, 0.0)).collect();
    assert_eq!(trial_metrics(&log_of(&states, &[])).unwrap().sd_theta, 1.0);
}

fn inputs(mu: f64, c: f64, pd: f64, pa: f64, r: f64, max_r: f64, max_c: f64) -> ScoreInputs {
    ScoreInputs {
        mean_abs_theta: mu,
        crashes: c,
        pct_destab: pd,
        pct_anticipatory: pa,
        recoveries: r,
        max_recoveries: max_r,
        max_crashes: max_c,
    }
}

#[test]
fn score_examples() {
    assert_eq!(score(&inputs(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)), 3.0);
    // 0.75 + 29/30 + 0.8 + 0.1 + (0.6 − 1/3)
    let oracle = 0.75 + (1.0 - 3.0 / 90.0) + 0.8 + 0.1 + (6.0 / 10.0 - 3.0 / 9.0);
    let s = score(&inputs(15.0, 3.0, 20.0, 10.0, 6.0, 10.0, 9.0));
    assert!((s - oracle).abs() < 1e-12);
    assert!((s - 2.883_333_333_333_333).abs() < 1e-9);
    let a = score(&inputs(15.0, 3.0, 20.0, 10.0, 6.0, 10.0, 9.0));
    let b = score(&inputs(15.0, 3.0, 30.0, 10.0, 6.0, 10.0, 9.0));
    assert!((b - a + 0.1).abs() < 1e-12);
}

#[test]
fn cohort_scores_use_cohort_maxima() {
    let base = TrialMetrics {
        crashes: 2,
        pct_destab: 10.0,
        pct_anticipatory: 5.0,
        mean_abs_theta: 6.0,
        sd_theta: 1.0,
        mean_abs_vel: 3.0,
        rms_vel: 4.0,
        recoveries: 4,
    };
    let other = TrialMetrics {
        crashes: 4,
        recoveries: 1,
        ..base
    };
    let s = cohort_scores(&[base, other]);
    assert_eq!(s[0], score(&ScoreInputs::from_metrics(&base, 4.0, 4.0)));
    assert!(s[0] > s[1]);
}

proptest! {
    #[test]
    fn taxonomy_partitions(th in -60.0..60.0f64, om in -300.0..300.0f64, d in -1.0..1.0f64) {
        let c = classify_deflection(th, om, d);
        prop_assert_eq!(c == DeflectionClass::None, d.abs() < 0.01);
    }

    #[test]
    fn score_is_monotone(
        mu in 0.0..60.0f64, c in 0.0..9.0f64, pd in 0.0..100.0f64, pa in 0.0..100.0f64,
        r in 0.0..10.0f64, step in 0.0..5.0f64, which in 0usize..5,
    ) {
        let base = inputs(mu, c, pd, pa, r, 10.0, 9.0);
        let mut better = base;
        match which {
            0 => better.mean_abs_theta = (mu - step).max(0.0),
            1 => better.crashes = (c - step).max(0.0),
            2 => better.pct_destab = (pd - step).max(0.0),
            3 => better.pct_anticipatory = pa + step,
            _ => better.recoveries = r + step,
        }
        prop_assert!(score(&better) >= score(&base));
    }

    #[test]
    fn concatenation_weights_means(
        a in prop::collection::vec((-19.0..19.0f64, -200.0..200.0f64), 1..40),
        b in prop::collection::vec((-19.0..19.0f64, -200.0..200.0f64), 1..40),
    ) {
        let la = log_of(&a.iter().map(|&(t, w)| (t, w, 0.0)).collect::<Vec<_>>(), &[]);
        let lb = log_of(&b.iter().map(|&(t, w)| (t, w, 0.0)).collect::<Vec<_>>(), &[]);
        let mut both = la.clone();
        both.rows.extend(lb.rows.iter().copied());
        let (ma, mb, mc) = (trial_metrics(&la).unwrap(), trial_metrics(&lb).unwrap(), trial_metrics(&both).unwrap());
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let w = |x: f64, y: f64| (na * x + nb * y) / (na + nb);
        prop_assert!((mc.mean_abs_theta - w(ma.mean_abs_theta, mb.mean_abs_theta)).abs() < 1e-9);
        prop_assert!((mc.mean_abs_vel - w(ma.mean_abs_vel, mb.mean_abs_vel)).abs() < 1e-9);
        prop_assert!((mc.rms_vel.powi(2) - w(ma.rms_vel.powi(2), mb.rms_vel.powi(2))).abs() < 1e-6);
    }
}

fn blob_metrics(seed: u64) -> (Vec<TrialMetrics>, Vec<usize>) {
    let mut rng = seeded(seed);
    let centers = [40.0, 90.0, 140.0];
    let mut out = Vec::new();
    let mut truth = Vec::new();
    for i in 0..30 {
        let b = i % 3;
        let c = centers[b];
        let j = |rng: &mut ChaCha8Rng, s: f64| rng.gen_range(-s..s);
        out.push(TrialMetrics {
            crashes: b * 3,
            pct_destab: 10.0 + 10.0 * b as f64 + j(&mut rng, 2.0),
            pct_anticipatory: 30.0 - 8.0 * b as f64 + j(&mut rng, 2.0),
            mean_abs_theta: 5.0 + 6.0 * b as f64 + j(&mut rng, 1.0),
            sd_theta: 4.0 + 5.0 * b as f64 + j(&mut rng, 1.0),
            mean_abs_vel: c * 0.8 + j(&mut rng, 3.0),
            rms_vel: c + j(&mut rng, 4.0),
            recoveries: 0,
        });
        truth.push(b);
    }
    (out, truth)
}

#[test]
fn separated_blobs_are_recovered() {
    let (m, truth) = blob_metrics(1);
    let labels = cluster_proficiency(&m, 7).unwrap();
    let names = [Proficiency::Good, Proficiency::Medium, Proficiency::Bad];
    for (l, t) in labels.iter().zip(&truth) {
        assert_eq!(*l, names[*t]);
    }
}

#[test]
fn clustering_ignores_input_order() {
    let (m, _) = blob_metrics(2);
    let labels = cluster_proficiency(&m, 3).unwrap();
    let mut perm: Vec<usize> = (0..m.len()).collect();
    perm.reverse();
    perm.swap(0, 11);
    let shuffled: Vec<_> = perm.iter().map(|&i| m[i]).collect();
    let l2 = cluster_proficiency(&shuffled, 3).unwrap();
    for (pos, &i) in perm.iter().enumerate() {
        assert_eq!(l2[pos], labels[i]);
    }
}

#[test]
fn duplicates_share_labels_and_scaling_is_irrelevant() {
    let (mut m, _) = blob_metrics(3);
    m.push(m[4]);
    let labels = cluster_proficiency(&m, 0).unwrap();
    assert_eq!(labels[4], *labels.last().unwrap());
    let scaled: Vec<Vec<f64>> = m
        .iter()
        .map(|x| {
            let mut f = proficiency_features(x);
            f[3] *= 1000.0;
            f
        })
        .collect();
    assert_eq!(cluster_by(&scaled, 6, 0).unwrap(), labels);
}

#[test]
fn clustering_rejects_degenerate_input() {
    let (m, _) = blob_metrics(4);
    assert!(matches!(cluster_proficiency(&m[..2], 0), Err(Error::Degenerate(_))));
    assert!(matches!(cluster_proficiency(&[m[0]; 5], 0), Err(Error::Degenerate(_))));
    let two = [m[0], m[0], m[1], m[1]];
    assert!(matches!(cluster_proficiency(&two, 0), Err(Error::Degenerate(_))));
}

#[test]
fn all_destabilizing_curve() {
    let states: Vec<_> = (1..100).map(|k| (k as f64 * 0.5, 10.0, 0.5)).collect();
    let curve = equiprobability_curve(&[log_of(&states, &[])], 5.0).unwrap();
    assert!(!curve.bins.is_empty());
    for c in curve.bins.values() {
        assert_eq!(c.p_destabilizing(), Some(1.0));
    }
    assert!(curve.bin(-3).is_none());
    assert!(equiprobability_curve(&[], 5.0).is_err());
}

#[test]
fn folding_follows_motion() {
    assert_eq!(folded_position(10.0, 5.0), 10.0);
    assert_eq!(folded_position(10.0, -5.0), -10.0);
    assert_eq!(folded_position(-10.0, -5.0), 10.0);
    assert_eq!(folded_position(-10.0, 0.0), 10.0);
}

#[test]
fn range_merges_bins() {
    let states = [(1.0, 1.0, 0.5), (3.0, 1.0, -0.5), (7.0, 1.0, -0.5), (50.0, 1.0, -0.5)];
    let curve = equiprobability_curve(&[log_of(&states, &[])], 5.0).unwrap();
    let near = curve.range(0.0, 5.0).unwrap();
    assert_eq!((near.destabilizing, near.corrective), (1, 1));
    let wide = curve.range(0.0, 10.0).unwrap();
    assert_eq!(wide.total(), 3);
    assert_eq!(curve.range(45.0, 60.0).unwrap().p_corrective(), Some(1.0));
    assert!(curve.range(20.0, 40.0).is_none());
}

proptest! {
    #[test]
    fn bin_shares_sum_to_one(states in prop::collection::vec((-59.0..59.0f64, -300.0..300.0f64, -1.0..1.0f64), 1..200)) {
        let curve = equiprobability_curve(&[log_of(&states, &[])], 5.0).unwrap();
        for c in curve.bins.values() {
            let s = c.p_destabilizing().unwrap() + c.p_anticipatory().unwrap() + c.p_corrective().unwrap();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

fn suggestion_log(events: &[(f64, Option<f64>, f64)]) -> TrialLog {
    TrialLog {
        rows: events
            .iter()
            .map(|&(t, s, h)| LogRow {
                t,
                theta: 0.0,
                omega: 0.0,
                executed_deflection: h,
                crash_probability: 0.0,
                pilot_deflection: h,
                assistant_deflection: s,
                executor: Executor::Pilot,
                deflection_class: DeflectionClass::None,
                crash_flag: false,
            })
            .collect(),
    }
}

#[test]
fn followed_within_window() {
    let log = suggestion_log(&[(2.0, Some(-1.0), 0.0), (2.1, None, 0.0), (2.3, None, -0.3)]);
    assert_eq!(followed_rate(&log, 450.0), Some(1.0));
    let late = suggestion_log(&[(2.0, Some(-1.0), 0.0), (2.5, None, -0.3)]);
    assert_eq!(followed_rate(&late, 450.0), Some(0.0));
    let wrong_sign = suggestion_log(&[(2.0, Some(-1.0), 0.0), (2.2, None, 0.3)]);
    assert_eq!(followed_rate(&wrong_sign, 450.0), Some(0.0));
    assert_eq!(followed_rate(&suggestion_log(&[(0.0, None, 0.5)]), 450.0), None);
}

#[test]
fn wilcoxon_shift_oracle() {
    let b: Vec<f64> = (0..10).map(|i| i as f64 * 1.7).collect();
    let a: Vec<f64> = b.iter().map(|x| x + 1.0).collect();
    let r = paired_wilcoxon(&a, &b).unwrap();
    assert_eq!(r.w, 0.0);
    assert!((r.p - 2.0 / 1024.0).abs() < 1e-15);
}

/// Brute-force exact p over all 2^n sign patterns.
fn enumerate_p(d: &[f64]) -> f64 {
    let mut abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let rank = |v: f64| {
        let lo = abs.iter().position(|&x| x == v).unwrap();
        let hi = abs.iter().rposition(|&x| x == v).unwrap();
        (lo + hi + 2) as f64 / 2.0
    };
    let ranks: Vec<f64> = d.iter().map(|x| rank(x.abs())).collect();
    let total: f64 = ranks.iter().sum();
    let obs_plus: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let obs = obs_plus.min(total - obs_plus);
    let n = d.len();
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w.min(total - w) <= obs + 1e-9 {
            hits += 1;
        }
    }
    (hits as f64 / (1u64 << n) as f64).min(1.0)
}

#[test]
fn exact_wilcoxon_matches_enumeration() {
    let mut rng = seeded(5);
    for n in [5usize, 8, 12] {
        for _ in 0..20 {
            let a: Vec<f64> = (0..n).map(|_| (rng.gen_range(-4..5) as f64) * 0.5).collect();
            let b = vec![0.0; n];
            let d: Vec<f64> = a.iter().copied().filter(|x| *x != 0.0).collect();
            if d.is_empty() {
                continue;
            }
            let r = paired_wilcoxon(&a, &b).unwrap();
            assert!((r.p - enumerate_p(&d)).abs() < 1e-12, "{a:?}");
        }
    }
}

#[test]
fn wilcoxon_edge_cases() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let mut b = a;
    b[2] += 0.5;
    assert!(paired_wilcoxon(&a, &b).unwrap().p > 0.99);
    assert!(matches!(paired_wilcoxon(&a, &a), Err(Error::Degenerate(_))));
    assert!(paired_wilcoxon(&a[..4], &a[..4]).is_err());
    assert!(paired_wilcoxon(&a, &a[..5]).is_err());
    let c = [1.0, 3.0, 2.0, 7.0, 5.0, 9.0];
    let mut perm_a = a;
    let mut perm_c = c;
    perm_a.reverse();
    perm_c.reverse();
    assert_eq!(paired_wilcoxon(&a, &c).unwrap(), paired_wilcoxon(&perm_a, &perm_c).unwrap());
}

#[test]
fn wilcoxon_normal_branch() {
    let b: Vec<f64> = (0..40).map(|i| i as f64).collect();
    let a: Vec<f64> = b.iter().enumerate().map(|(i, x)| x + if i % 4 == 0 { -1.0 } else { 1.0 + i as f64 * 0.01 }).collect();
    let r = paired_wilcoxon(&a, &b).unwrap();
    assert_eq!(r.n, 40);
    assert!(r.p < 0.01 && r.p > 0.0);
}

#[test]
fn sign_test_exact() {
    let a = [2.0; 10];
    let b = [1.0; 10];
    let r = sign_test(&a, &b).unwrap();
    assert_eq!((r.plus, r.minus), (10, 0));
    assert!((r.p - 2.0 / 1024.0).abs() < 1e-15);
    let mixed = sign_test(&[1.0, 2.0, 3.0, 3.0], &[0.0, 3.0, 2.0, 3.0]).unwrap();
    assert_eq!((mixed.plus, mixed.minus), (2, 1));
    assert_eq!(mixed.p, 1.0);
    assert!(sign_test(&[1.0], &[1.0]).is_err());
}

#[test]
fn reports_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = trial_metrics(&log_of(&[(5.0, 2.0, 0.3), (1.0, -1.0, 0.2)], &[])).unwrap();
    let rows = vec![MetricsRow { label: "a".into(), metrics: m }];
    write_metrics_csv(dir.path().join("m.csv"), &rows).unwrap();
    write_metrics_json(dir.path().join("m.json"), &rows).unwrap();
    let back: Vec<MetricsRow> = serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(back, rows);
    let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert!(csv.starts_with("label,crashes,pct_destab"));
}
