//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line and then asserts.
//!
//! Run with `cargo test --release --test acceptance -- --nocapture --test-threads 1`
//! to see the lines in order.

use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use margin_lab::audit::{
    band_accuracy, band_index, churn_report, class_audit, classify_token, expansion_report, frequency_audit,
    frequency_bucket, rotation_report, target_counts, TokenClass, BAND_EDGES,
};
use margin_lab::autodiff::{grad_check, Tensor};
use margin_lab::io::{encode_audit, read_audit, AuditHeader};
use margin_lab::margin::{compute_margins, emulate_bf16, recompute_fp32_logits, spearman, unique_value_count};
use margin_lab::objectives::{fisher_distance, fisher_loss_var, margin_loss_var, Objective};
use margin_lab::synth::{validate_scaling, ManifoldSpec};
use margin_lab::toy::{
    audit_tokens, base_pretrain_config, dose_response, metrics_csv, to_checkpoint, train, ToyData, ToyLm,
    ToyLmConfig, TrainConfig,
};
use margin_lab::MarginRecord;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: u32, name: &str, pass: bool, detail: String) {
    println!("CRITERION {n} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Smallest distance from any row's sorted top-`k+1` logits to a tie, and
/// from the top-1/top-2 gap to `tau`.
fn kink_distance(logits: &Tensor, k: usize, tau: Option<f64>) -> f64 {
    let mut worst = f64::INFINITY;
    for r in 0..logits.rows() {
        let mut row = logits.row(r).to_vec();
        row.sort_by(|a, b| b.total_cmp(a));
        for w in row.windows(2).take(k) {
            worst = worst.min(w[0] - w[1]);
        }
        if let Some(t) = tau {
            worst = worst.min((row[0] - row[1] - t).abs());
        }
    }
    worst
}

#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_margin, mut worst_fisher) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        // Redraw until no top-k boundary or gate edge sits within a finite-difference step.
        let (logits, tau) = loop {
            let v = rng.random_range(2..=50);
            let rows = rng.random_range(1..=4);
            let logits = random(&mut rng, rows, v, 3.0);
            let tau = rng.random_range(0.1..2.0);
            if kink_distance(&logits, 2, Some(tau)) > 1e-4 {
                break (logits, tau);
            }
        };
        let e = grad_check(|t, x| margin_loss_var(t, x, tau), &logits, 1e-6).unwrap();
        worst_margin = worst_margin.max(e);
    }
    for _ in 0..100 {
        let (logits, w, k) = loop {
            let v = rng.random_range(5..=50);
            let k = rng.random_range(2..=5usize);
            let d = rng.random_range(2..=8);
            let rows = rng.random_range(1..=4);
            let logits = random(&mut rng, rows, v, 3.0);
            if kink_distance(&logits, k, None) > 1e-4 {
                break (logits, random(&mut rng, v, d, 1.0), k);
            }
        };
        let wc = w.clone();
        let e1 = grad_check(
            |t, x| {
                let wv = t.constant(wc.clone());
                fisher_loss_var(t, x, wv, k, 1e-8)
            },
            &logits,
            1e-6,
        )
        .unwrap();
        let lc = logits.clone();
        let e2 = grad_check(
            |t, x| {
                let lv = t.constant(lc.clone());
                fisher_loss_var(t, lv, x, k, 1e-8)
            },
            &w,
            1e-6,
        )
        .unwrap();
        worst_fisher = worst_fisher.max(e1).max(e2);
    }
    let elapsed = start.elapsed();
    let pass = worst_margin < 1e-4 && worst_fisher < 1e-4 && elapsed < Duration::from_secs(120);
    verdict(
        1,
        "gradient correctness",
        pass,
        format!("worst relative error margin {worst_margin:.2e}, fisher {worst_fisher:.2e} (< 1e-4); {elapsed:.2?} (< 120s)"),
    );
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

#[test]
fn criterion_2_fisher_kl_equivalence() {
    let s = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let k = rng.random_range(2..=5usize);
        let d = rng.random_range(k..=8);
        let mut rows = random(&mut rng, k, d, 1.0);
        for row in rows.data_mut().chunks_exact_mut(d) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.iter_mut().for_each(|x| *x /= n);
        }
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lp = log_softmax(&z);
        let p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
        let i = rng.random_range(0..k);
        let j = (i + rng.random_range(1..k)) % k;

        // Moving the hidden state by s·(w_i − w_j) shifts each top-k logit by s·(w_i − w_j)·w_a.
        let proj: Vec<f64> = (0..k)
            .map(|a| (0..d).map(|c| (rows.get(i, c) - rows.get(j, c)) * rows.get(a, c)).sum())
            .collect();
        let zq: Vec<f64> = z.iter().zip(&proj).map(|(z, x)| z + s * x).collect();
        let lq = log_softmax(&zq);
        let kl: f64 = p.iter().zip(lp.iter().zip(&lq)).map(|(p, (a, b))| p * (a - b)).sum();

        let d2 = fisher_distance(&p, &rows, i, j, 1e-300).unwrap().powi(2);
        let rel = (2.0 * kl / (s * s) - d2).abs() / d2;
        worst = worst.max(rel);
    }
    verdict(2, "Fisher/KL equivalence", worst < 0.01, format!("worst |2KL/s^2 - d_F^2| / d_F^2 = {worst:.2e} over 50 instances (< 1%)"));
}

#[test]
fn criterion_3_scaling_law() {
    let start = Instant::now();
    let spec = ManifoldSpec::circle_antipodal(1_000_000, 3);
    let v = validate_scaling(&spec).unwrap();
    let elapsed = start.elapsed();
    let analytic = 1.0 / (2.0 * std::f64::consts::PI);
    let alpha_err = (v.fit.alpha_constrained - analytic).abs() / analytic;
    let beta_ok = (0.98..=1.02).contains(&v.fit.beta);
    let r2_ok = v.fit.r2 > 0.995;
    let alpha_ok = alpha_err < 0.05;
    let time_ok = elapsed < Duration::from_secs(60);
    verdict(
        3,
        "scaling-law validation",
        beta_ok && r2_ok && alpha_ok && time_ok,
        format!(
            "beta {:.4} [{}], R^2 {:.5} [{}], alpha {:.4} vs 1/(2pi) {:.4}: rel err {:.1}% [{}], \
             dense-oracle alpha {:.4} (rel err {:.1}%), {elapsed:.2?} [{}]",
            v.fit.beta,
            ok(beta_ok),
            v.fit.r2,
            ok(r2_ok),
            v.fit.alpha_constrained,
            analytic,
            100.0 * alpha_err,
            ok(alpha_ok),
            v.oracle_alpha,
            100.0 * v.relative_alpha_error,
            ok(time_ok),
        ),
    );
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "out of bound"
    }
}

/// Random orthogonal `n × n` matrix by Gram–Schmidt.
fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for b in &q {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    q
}

#[test]
fn criterion_4_bf16_artifact() {
    let (n, v) = (10_000, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = orthogonal(&mut rng, v);
    let w32: Vec<f32> = w.iter().flatten().map(|&x| x as f32).collect();
    let mut logits = Vec::with_capacity(n * v);
    let mut hidden = Vec::with_capacity(n * v);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let l: Vec<f64> = (0..v).map(|_| rng.random_range(1.0..8.0)).collect();
        // With orthogonal W, h = Wᵀ l reproduces l as W h.
        let h: Vec<f32> = (0..v).map(|c| (0..v).map(|r| w[r][c] * l[r]).sum::<f64>() as f32).collect();
        logits.extend(recompute_fp32_logits(&h, &w32).unwrap());
        hidden.push(h);
        targets.push(rng.random_range(0..v as u32));
    }
    let margins = |vals: &[f32]| -> Vec<f64> {
        compute_margins(vals, v, &targets).unwrap().iter().map(|r| r.margin).collect()
    };
    let fp32 = unique_value_count(&margins(&logits));
    let degraded: Vec<f32> = logits.iter().map(|&x| emulate_bf16(x)).collect();
    let bf16 = unique_value_count(&margins(&degraded));
    let recomputed: Vec<f32> = hidden.iter().flat_map(|h| recompute_fp32_logits(h, &w32).unwrap()).collect();
    let restored = unique_value_count(&margins(&recomputed));
    let in_range = logits.iter().all(|&x| (0.999..=8.001).contains(&x));

    let ratio = bf16 as f64 / fp32 as f64;
    let full = restored == fp32;
    verdict(
        4,
        "bf16 artifact reproduction",
        in_range && ratio <= 0.05 && full,
        format!(
            "unique margins fp32 {fp32}, bf16 {bf16} ({:.2}% of fp32, <= 5%), fp32 recompute {restored} (== fp32 count) over {n} positions",
            100.0 * ratio
        ),
    );
}

#[test]
fn criterion_5_dose_response() {
    let start = Instant::now();
    let data = ToyData::bundled();
    let init = ToyLm::new(data.model_config(), 0).unwrap();
    let base = train(&init, &data.train, &base_pretrain_config(0)).unwrap().model;
    let lambdas = [0.0, 0.15, 0.3, 0.6];
    let d = dose_response(&base, &data.train, &data.audit, &lambdas, Objective::Fisher, &TrainConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let med: Vec<f64> = d.rows.iter().map(|r| r.summary.median_margin).collect();
    let pr: Vec<f64> = d.rows.iter().map(|r| r.summary.pr_below_half).collect();
    let med_ok = med.windows(2).all(|w| w[1] >= w[0]);
    let pr_ok = pr.windows(2).all(|w| w[1] <= w[0]);
    let time_ok = elapsed < Duration::from_secs(600);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    verdict(
        5,
        "dose-response monotonicity",
        med_ok && pr_ok && time_ok,
        format!(
            "lambda {lambdas:?}: median margin [{}] non-decreasing [{}]; Pr(m<0.5) [{}] non-increasing [{}]; {elapsed:.2?} [{}]",
            fmt(&med),
            ok(med_ok),
            fmt(&pr),
            ok(pr_ok),
            ok(time_ok)
        ),
    );
}

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Hand-enumerated expectations for the shipped 6-position pair.
fn fixture_matches() -> std::result::Result<(), String> {
    let (_, b) = read_audit(&fixture("baseline6.jsonl")).map_err(|e| e.to_string())?;
    let (_, p) = read_audit(&fixture("polished6.jsonl")).map_err(|e| e.to_string())?;
    let check = |what: &str, cond: bool| if cond { Ok(()) } else { Err(format!("fixture {what} mismatch")) };

    let c = churn_report(&b, &p).unwrap();
    check("churn", (c.total, c.churned, c.w2r, c.r2w, c.w2w, c.flip_ratio, c.net_corrected) == (6, 4, 2, 1, 1, Some(2.0), 1))?;
    let r = rotation_report(&b, &p).unwrap();
    check("rotation", (r.rotated, r.rotated_wider, r.mean_margin_delta) == (1, 1, 0.5))?;

    let bands = |t: &margin_lab::audit::BandTable| {
        t.bands.iter().map(|b| (b.count, b.accuracy)).collect::<Vec<_>>()
    };
    let tb = band_accuracy(&b).unwrap();
    check("baseline bands", bands(&tb) == vec![(2, Some(0.5)), (0, None), (2, Some(0.5)), (1, Some(0.0)), (1, Some(0.0))])?;
    check("baseline accuracy", tb.overall_accuracy == 2.0 / 6.0)?;
    let tp = band_accuracy(&p).unwrap();
    check("polished bands", bands(&tp) == vec![(1, Some(1.0)), (2, Some(0.5)), (1, Some(1.0)), (1, Some(0.0)), (1, Some(0.0))])?;

    let e = expansion_report(&b, &p).unwrap();
    check("expansion", (e.pct_wider, e.mean_delta, e.median_delta) == (50.0, -0.5 / 6.0, -0.5))?;

    let counts: HashMap<u32, u64> = HashMap::from([(1, 1), (0, 3), (4, 7), (2, 25), (5, 150)]);
    let f = frequency_audit(&b, &p, &counts).unwrap();
    let got: Vec<_> = f
        .buckets
        .iter()
        .map(|g| (g.label.as_str(), g.positions, g.baseline_accuracy, g.polished_accuracy, g.delta, g.net, g.share_of_net))
        .collect();
    check(
        "frequency",
        got == vec![
            ("1", 1, Some(0.0), Some(1.0), Some(1.0), 1, Some(1.0)),
            ("2-4", 2, Some(0.5), Some(1.0), Some(0.5), 1, Some(1.0)),
            ("5-19", 1, Some(1.0), Some(0.0), Some(-1.0), -1, Some(-1.0)),
            ("20-99", 1, Some(0.0), Some(0.0), Some(0.0), 0, Some(0.0)),
            ("100+", 1, Some(0.0), Some(0.0), Some(0.0), 0, Some(0.0)),
        ] && f.total_net == 1,
    )?;

    let texts: Vec<String> = [",", "the", "Paris", "running", "x3", "2023"].iter().map(|s| s.to_string()).collect();
    let cl = class_audit(&b, &p, &texts).unwrap();
    let got: Vec<_> = cl.classes.iter().map(|g| (g.label.as_str(), g.positions, g.net, g.share_of_net)).collect();
    check(
        "class",
        got == vec![
            ("structural", 1, 1, Some(1.0)),
            ("numeric", 1, 0, Some(0.0)),
            ("function_word", 1, 1, Some(1.0)),
            ("entity_like", 1, -1, Some(-1.0)),
            ("content_word", 1, 0, Some(0.0)),
        ] && (cl.fragment.positions, cl.fragment.net) == (1, 0)
            && cl.total_net == 1,
    )?;
    Ok(())
}

fn random_pair(rng: &mut ChaCha8Rng, n: usize, vocab: u32) -> (Vec<MarginRecord>, Vec<MarginRecord>) {
    let rec = |rng: &mut ChaCha8Rng, position: usize, target: u32| {
        let top1 = if rng.random_bool(0.4) { target } else { rng.random_range(0..vocab) };
        let mut top2 = rng.random_range(0..vocab);
        if top2 == top1 {
            top2 = (top1 + 1) % vocab;
        }
        let margin = (rng.random_range(0.0f64..7.0) * 64.0).round() / 64.0;
        MarginRecord { position, target, top1, top2, margin, correct: top1 == target }
    };
    let mut base = Vec::with_capacity(n);
    let mut pol = Vec::with_capacity(n);
    for i in 0..n {
        // Log-uniform targets: a heavy head and a long tail of singletons, so every bucket is populated.
        let target = ((vocab as f64).powf(rng.random_range(0.0f64..1.0)) - 1.0) as u32;
        let b = rec(rng, i, target);
        let p = if rng.random_bool(0.5) {
            let mut p = b;
            p.margin = (rng.random_range(0.0f64..7.0) * 64.0).round() / 64.0;
            if rng.random_bool(0.3) {
                p.top2 = (p.top2 + 1) % vocab;
                if p.top2 == p.top1 {
                    p.top2 = (p.top2 + 1) % vocab;
                }
            }
            p
        } else {
            rec(rng, i, target)
        };
        base.push(b);
        pol.push(p);
    }
    pol.shuffle(rng);
    (base, pol)
}

/// Direct recomputation of every report with plain loops, keyed by position.
fn brute_force_matches(base: &[MarginRecord], pol: &[MarginRecord], texts: &[String]) -> std::result::Result<(), String> {
    let by_pos: HashMap<usize, &MarginRecord> = pol.iter().map(|r| (r.position, r)).collect();
    let n = base.len();
    let (mut churned, mut w2r, mut r2w, mut w2w, mut rotated, mut wider) = (0, 0, 0, 0, 0, 0);
    let mut rot_sum = 0.0;
    let mut deltas = Vec::new();
    let mut band_counts = [(0usize, 0usize); 5];
    let mut class_net: HashMap<&str, i64> = HashMap::new();
    let mut bucket_net = [0i64; 5];
    let mut counts: HashMap<u32, u64> = HashMap::new();
    for r in base {
        *counts.entry(r.target).or_default() += 1;
    }
    let bucket_of = |c: u64| match c {
        1 => 0,
        2..=4 => 1,
        5..=19 => 2,
        20..=99 => 3,
        _ => 4,
    };
    let mut sorted_base: Vec<&MarginRecord> = base.iter().collect();
    sorted_base.sort_by_key(|r| r.position);
    for b in &sorted_base {
        let p = by_pos[&b.position];
        let mut net = 0;
        if b.top1 != p.top1 {
            churned += 1;
            if !b.correct && p.correct {
                w2r += 1;
                net = 1;
            } else if b.correct && !p.correct {
                r2w += 1;
                net = -1;
            } else {
                w2w += 1;
            }
        } else if b.top2 != p.top2 {
            rotated += 1;
            rot_sum += p.margin - b.margin;
            if p.margin > b.margin {
                wider += 1;
            }
        }
        deltas.push(p.margin - b.margin);
        let band = if b.margin < 0.5 {
            0
        } else if b.margin < 1.0 {
            1
        } else if b.margin < 2.0 {
            2
        } else if b.margin < 5.0 {
            3
        } else {
            4
        };
        band_counts[band].0 += 1;
        band_counts[band].1 += b.correct as usize;
        let class = match classify_token(&texts[b.position]) {
            TokenClass::Structural => "structural",
            TokenClass::Numeric => "numeric",
            TokenClass::FunctionWord => "function_word",
            TokenClass::EntityLike => "entity_like",
            TokenClass::ContentWord => "content_word",
            TokenClass::Fragment => "fragment",
        };
        *class_net.entry(class).or_default() += net;
        bucket_net[bucket_of(counts[&b.target])] += net;
    }

    let c = churn_report(base, pol).map_err(|e| e.to_string())?;
    if (c.churned, c.w2r, c.r2w, c.w2w) != (churned, w2r, r2w, w2w) {
        return Err("churn".into());
    }
    let r = rotation_report(base, pol).map_err(|e| e.to_string())?;
    let mean_rot = if rotated > 0 { rot_sum / rotated as f64 } else { 0.0 };
    if (r.rotated, r.rotated_wider) != (rotated, wider) || (r.mean_margin_delta - mean_rot).abs() > 1e-12 {
        return Err("rotation".into());
    }
    let t = band_accuracy(base).map_err(|e| e.to_string())?;
    if t.bands.iter().map(|b| (b.count, b.correct)).collect::<Vec<_>>() != band_counts.to_vec() {
        return Err("bands".into());
    }
    let e = expansion_report(base, pol).map_err(|e| e.to_string())?;
    let mean = deltas.iter().sum::<f64>() / n as f64;
    let pct = 100.0 * deltas.iter().filter(|&&d| d > 0.0).count() as f64 / n as f64;
    deltas.sort_by(f64::total_cmp);
    let median = deltas[(n + 1) / 2 - 1];
    if (e.mean_delta - mean).abs() > 1e-12 || e.pct_wider != pct || e.median_delta != median {
        return Err("expansion".into());
    }
    let counts_lib: HashMap<u32, u64> = target_counts(base).into_iter().collect();
    let f = frequency_audit(base, pol, &counts_lib).map_err(|e| e.to_string())?;
    if f.buckets.iter().map(|g| g.net).collect::<Vec<_>>() != bucket_net.to_vec() {
        return Err("frequency".into());
    }
    if f.buckets.iter().any(|g| g.positions == 0) {
        return Err("frequency oracle left a bucket empty".into());
    }
    let cl = class_audit(base, pol, texts).map_err(|e| e.to_string())?;
    for g in cl.classes.iter().chain(std::iter::once(&cl.fragment)) {
        if g.net != class_net.get(g.label.as_str()).copied().unwrap_or(0) {
            return Err(format!("class {}", g.label));
        }
    }
    Ok(())
}

#[test]
fn criterion_6_audit_suite_oracles() {
    let fixture = fixture_matches();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (base, pol) = random_pair(&mut rng, 10_000, 5000);
    let pool = [",", ".", "the", "of", "Paris", "NASA", "2023", "3.5%", "running", "x3", " ", "don't", "which"];
    let texts: Vec<String> = (0..10_000).map(|_| pool[rng.random_range(0..pool.len())].to_string()).collect();
    let brute = brute_force_matches(&base, &pol, &texts);
    let band_edges_ok = BAND_EDGES == [0.5, 1.0, 2.0, 5.0] && band_index(0.5) == 1 && frequency_bucket(100) == Some(4);
    let describe = |r: &std::result::Result<(), String>| match r {
        Ok(()) => "exact".to_string(),
        Err(e) => format!("differs ({e})"),
    };
    verdict(
        6,
        "audit-suite oracle equivalence",
        fixture.is_ok() && brute.is_ok() && band_edges_ok,
        format!("6-position fixture: {}; seeded 10^4 pair vs brute force: {}", describe(&fixture), describe(&brute)),
    );
}

#[test]
fn criterion_7_token_classes() {
    use TokenClass::*;
    let cases = [
        (",", Structural),
        ("123", Numeric),
        ("2023", Numeric),
        ("3.14", Numeric),
        ("50%", Numeric),
        ("the", FunctionWord),
        ("of", FunctionWord),
        ("is", FunctionWord),
        ("they", FunctionWord),
        ("which", FunctionWord),
        ("Paris", EntityLike),
        ("John", EntityLike),
        ("USA", EntityLike),
        ("NLP", EntityLike),
    ];
    let wrong: Vec<String> = cases
        .iter()
        .filter(|(t, c)| classify_token(t) != *c)
        .map(|(t, c)| format!("{t:?} -> {:?} (want {c:?})", classify_token(t)))
        .collect();
    verdict(
        7,
        "token-class conformance",
        wrong.is_empty(),
        if wrong.is_empty() { format!("{} / {} example tokens", cases.len(), cases.len()) } else { wrong.join("; ") },
    );
}

/// O(n²) mid-ranks: 1 + (number below) + (ties − 1) / 2.
fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    let ranks = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let below = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                1.0 + below + (equal - 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn criterion_8_spearman_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    let mut with_ties = 0;
    for _ in 0..100 {
        let n = rng.random_range(3..300);
        let levels = rng.random_range(2..20);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v * 0.5 + rng.random_range(0..levels) as f64).collect();
        if x.iter().all(|v| *v == x[0]) || y.iter().all(|v| *v == y[0]) {
            continue;
        }
        with_ties += 1;
        worst = worst.max((spearman(&x, &y).unwrap() - brute_spearman(&x, &y)).abs());
    }
    verdict(
        8,
        "Spearman oracle",
        worst <= 1e-12 && with_ties >= 95,
        format!("max |rho - brute force| = {worst:.1e} on {with_ties} tied vectors (<= 1e-12)"),
    );
}

#[test]
fn criterion_9_determinism() {
    let text = &margin_lab::toy::BUNDLED_CORPUS[..6000];
    let run = || {
        let data = ToyData::from_text(text, 256, 0.2).unwrap();
        let cfg = ToyLmConfig { vocab_size: data.tokenizer.len(), hidden_dim: 16, context: 16, ..ToyLmConfig::default() };
        let mut tc = TrainConfig { steps: 5, learning_rate: 3e-3, seed: 9, ..TrainConfig::default() };
        tc.mrp.lambda_mrp = 0.3;
        let out = train(&ToyLm::new(cfg, 9).unwrap(), &data.train, &tc).unwrap();
        let ckpt = to_checkpoint(&out.model, &data.tokenizer, Some(&tc), 9, 5).encode();
        let audit = audit_tokens(&out.model, &data.audit).unwrap();
        let audit_bytes = encode_audit(&AuditHeader { created: None, ..AuditHeader::new("f32", audit.len(), 0.5, Some(9)) }, &audit).unwrap();
        let base = audit_tokens(&ToyLm::new(cfg, 9).unwrap(), &data.audit).unwrap();
        let report = serde_json::to_vec(&(
            churn_report(&base, &audit).unwrap(),
            rotation_report(&base, &audit).unwrap(),
            expansion_report(&base, &audit).unwrap(),
        ))
        .unwrap();
        (ckpt, audit_bytes, report, metrics_csv(&out.log))
    };
    let (a, b) = (run(), run());
    let same = [a.0 == b.0, a.1 == b.1, a.2 == b.2, a.3 == b.3];
    verdict(
        9,
        "determinism",
        same.iter().all(|&s| s),
        format!(
            "checkpoint {}, audit {}, report {}, metric log {} (bit-identical across two runs)",
            ok_same(same[0]),
            ok_same(same[1]),
            ok_same(same[2]),
            ok_same(same[3])
        ),
    );
}

fn ok_same(b: bool) -> &'static str {
    if b {
        "identical"
    } else {
        "DIFFERS"
    }
}
