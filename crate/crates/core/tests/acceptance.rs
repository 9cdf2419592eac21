//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Runs as a plain binary (`harness = false`) so the report is printed by
//! `cargo test` without `--nocapture`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slam_core::analysis::{coverage, selection_metrics};
use slam_core::bench::{run_scenario, BenchAlgorithm, Scenario, ScenarioReport};
use slam_core::estimation::{
    digamma, e_step, em_fit, m_step_all_effect, m_step_two_param, pem_fit, FitConfig, ModelKind,
};
use slam_core::identifiability::{check_strict, equivalence_classes, SearchOptions, Verdict};
use slam_core::patterns::{build_gamma, AttributePattern, PatternSet, QMatrix};
use slam_core::pipeline::{run_pipeline, PipelineConfig};
use slam_core::response::{
    response_pmf, theta_all_effect, theta_two_param, AllEffectItemParams, ProportionVector,
    ResponseMatrix, TwoParamItemParams,
};
use slam_core::screening::{gibbs_screen, ScreenConfig};
use slam_core::simulation::{gen_responses, replicate_seed, simulate, SimDesign};

const REPLICATES: usize = 20;

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, pass, detail }
}

fn scenario(name: &str, design: SimDesign, algo: BenchAlgorithm) -> ScenarioReport {
    run_scenario::<f64>(&Scenario::new(name, design, algo, REPLICATES)).expect("scenario runs")
}

fn strong_pem() -> Outcome {
    let t = Instant::now();
    let rep = scenario("strong", SimDesign::two_param(10, 1000, 0.1, 101), BenchAlgorithm::Pem);
    let elapsed = t.elapsed();
    let (fdr, tpr) = (rep.one_minus_fdr.mean, rep.tpr.mean);
    outcome(
        "1",
        fdr >= 0.97 && tpr >= 0.97 && elapsed < Duration::from_secs(600),
        format!(
            "strong signal PEM, K=10 N=1000: mean 1-FDR {fdr:.3}, mean TPR {tpr:.3} (need >= 0.97 each), {:.0}s (need < 600s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn weak_pem() -> Outcome {
    let rep = scenario("weak", SimDesign::two_param(10, 500, 0.2, 202), BenchAlgorithm::Pem);
    let (fdr, tpr) = (rep.one_minus_fdr.mean, rep.tpr.mean);
    outcome(
        "2",
        fdr >= 0.90 && tpr >= 0.95,
        format!("weak signal PEM, K=10 N=500: mean 1-FDR {fdr:.3} (need >= 0.90), mean TPR {tpr:.3} (need >= 0.95)"),
    )
}

fn em_overselects() -> Outcome {
    let rep = scenario("strong-em", SimDesign::two_param(10, 1000, 0.1, 101), BenchAlgorithm::Em);
    let (fdr, tpr) = (rep.one_minus_fdr.mean, rep.tpr.mean);
    outcome(
        "3",
        fdr <= 0.45 && tpr >= 0.95,
        format!("plain EM, strong signal: mean 1-FDR {fdr:.3} (need <= 0.45), mean TPR {tpr:.3} (need >= 0.95)"),
    )
}

fn variational_support() -> Outcome {
    let design = SimDesign::two_param(10, 500, 0.1, 303);
    let fp = scenario("fpvem", design.clone(), BenchAlgorithm::FpVem);
    let vem = scenario("vem", design, BenchAlgorithm::Vem);
    let (modal, median) = (fp.modal_support(), vem.median_support());
    outcome(
        "4",
        modal == 10 && median > 10,
        format!("K=10 N=500: FP-VEM modal support {modal} (need 10), plain VEM median support {median} (need > 10)"),
    )
}

fn all_effect_pem() -> Outcome {
    let rep = scenario("all-effect", SimDesign::all_effect(10, 1000, 0.1, 0.9, 404), BenchAlgorithm::Pem);
    let (fdr, tpr) = (rep.one_minus_fdr.mean, rep.tpr.mean);
    outcome(
        "5",
        fdr >= 0.95 && tpr >= 0.97,
        format!("all-effect PEM, K=10 N=1000: mean 1-FDR {fdr:.3} (need >= 0.95), mean TPR {tpr:.3} (need >= 0.97)"),
    )
}

/// Per-replicate (coverage, candidate count) of Gibbs screening.
fn screen_runs(noise: f64, enhance_period: Option<usize>) -> Vec<(f64, usize)> {
    (0..REPLICATES)
        .map(|rep| {
            let seed = replicate_seed(505, rep);
            let sim = simulate(&SimDesign::two_param(15, 500, noise, seed)).unwrap();
            let cfg = ScreenConfig {
                enhance_period,
                seed,
                ..ScreenConfig::default()
            };
            let res = gibbs_screen::<f64>(&sim.responses, &sim.q, &cfg).unwrap();
            (coverage(&sim.a0, &res.a_screen).unwrap(), res.a_screen.len())
        })
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn screening() -> Outcome {
    let plain = screen_runs(0.1, None);
    let cov = mean(plain.iter().map(|r| r.0));
    let largest = plain.iter().map(|r| r.1).max().unwrap();
    let weak = mean(screen_runs(0.2, None).iter().map(|r| r.0));
    let weak_enh = mean(screen_runs(0.2, Some(3)).iter().map(|r| r.0));
    outcome(
        "6",
        cov >= 0.95 && largest <= 500 && weak_enh > weak,
        format!(
            "screening K=15 N=500: mean coverage {cov:.3} (need >= 0.95), largest candidate set {largest} (need <= 500); \
             noise 0.2 coverage {weak:.3} plain vs {weak_enh:.3} with M=3 (need strictly higher)"
        ),
    )
}

fn pset(xs: &[&str]) -> PatternSet {
    let members = xs.iter().map(|s| AttributePattern::parse(s).unwrap()).collect();
    PatternSet::from_unsorted(xs[0].len(), members).unwrap()
}

fn identifiability() -> Outcome {
    let opts = SearchOptions::default();
    let stacked = QMatrix::from_rows(&[vec![1, 0], vec![0, 1], vec![1, 0], vec![0, 1], vec![1, 1]]).unwrap();
    let strict = check_strict(&stacked, &pset(&["01", "10"]), &opts).unwrap().verdict;
    let two_item = QMatrix::from_rows(&[vec![0, 1], vec![1, 1]]).unwrap();
    let report = check_strict(&two_item, &pset(&["00", "01"]), &opts).unwrap();
    let classes = equivalence_classes(&two_item).unwrap().len();
    outcome(
        "7",
        strict == Verdict::Strict
            && report.verdict == Verdict::FailsNecessary
            && !report.condition_c
            && classes == 3,
        format!(
            "identifiability: stacked design {strict:?} (need Strict), two-item design {:?} with condition C {} \
             (need FailsNecessary, false), {classes} equivalence classes (need 3)",
            report.verdict, report.condition_c
        ),
    )
}

/// A random small two-parameter or all-effect data set over the full pattern space.
fn random_instance(rng: &mut ChaCha8Rng, model: ModelKind) -> (QMatrix, ResponseMatrix) {
    let k = rng.gen_range(2..=3);
    let j = rng.gen_range(k + 1..=7);
    let rows: Vec<Vec<u8>> = (0..j)
        .map(|jj| {
            if jj < k {
                (0..k).map(|kk| u8::from(kk == jj)).collect()
            } else {
                loop {
                    let row: Vec<u8> = (0..k).map(|_| rng.gen_range(0..=1)).collect();
                    if row.contains(&1) {
                        break row;
                    }
                }
            }
        })
        .collect();
    let q = QMatrix::from_rows(&rows).unwrap();
    let a = PatternSet::full(k).unwrap();
    let weights: Vec<f64> = (0..a.len()).map(|_| rng.gen_range(0.1..1.0)).collect();
    let p = ProportionVector::from_weights(&weights).unwrap();
    let theta = match model {
        ModelKind::TwoParam => {
            let plus = (0..j).map(|_| rng.gen_range(0.6..0.95)).collect();
            let minus = (0..j).map(|_| rng.gen_range(0.05..0.4)).collect();
            let g = build_gamma(&q, &a).unwrap();
            theta_two_param(&g, &TwoParamItemParams::new(plus, minus).unwrap()).unwrap()
        }
        ModelKind::AllEffect => {
            let base = rng.gen_range(0.05..0.3);
            let top = rng.gen_range(0.7..0.95);
            let items = AllEffectItemParams::equal_effects(&q, base, top).unwrap();
            theta_all_effect(&q, &items, &a).unwrap()
        }
    };
    let n = rng.gen_range(60..200);
    let (r, _) = gen_responses(&theta, &p, n, rng.gen()).unwrap();
    (q, r)
}

fn em_monotone() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst = 0.0f64;
    let mut steps = 0;
    for inst in 0..100 {
        let model = if inst % 2 == 0 { ModelKind::TwoParam } else { ModelKind::AllEffect };
        let (q, r) = random_instance(&mut rng, model);
        let a = PatternSet::full(q.k()).unwrap();
        let cfg = FitConfig {
            max_iter: 200,
            ..FitConfig::em(model)
        };
        let res = em_fit::<f64>(&r, &q, &a, &cfg, None).unwrap();
        for w in res.trace.windows(2) {
            worst = worst.max(w[0].loglik - w[1].loglik);
            steps += 1;
        }
    }
    outcome(
        "8a",
        worst <= 1e-8,
        format!("EM log-likelihood over 100 random instances ({steps} steps): largest decrease {worst:.2e} (need <= 1e-8)"),
    )
}

fn pem_guarded() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(809);
    // (largest decrease, steps checked) under the stated guard, and with the
    // extra requirement that no proportion sits in the flat part of log_rho.
    let (mut stated, mut stated_steps) = (0.0f64, 0);
    let (mut strict, mut strict_steps) = (0.0f64, 0);
    for inst in 0..40 {
        let model = if inst % 2 == 0 { ModelKind::TwoParam } else { ModelKind::AllEffect };
        let (q, r) = random_instance(&mut rng, model);
        let a = PatternSet::full(q.k()).unwrap();
        let lambda = [-0.2, -0.5, -1.0, -2.0][inst % 4];
        let cfg = FitConfig {
            max_iter: 200,
            ..FitConfig::pem(model, lambda)
        };
        let res = pem_fit::<f64>(&r, &q, &a, &cfg, None).unwrap();
        for w in res.trace.windows(2) {
            if w[0].weights_clamped == 0 && !w[0].crossed_rho {
                let drop = w[0].objective - w[1].objective;
                stated = stated.max(drop);
                stated_steps += 1;
                if !w[0].below_rho {
                    strict = strict.max(drop);
                    strict_steps += 1;
                }
            }
        }
    }
    outcome(
        "8b",
        stated <= 1e-8 && stated_steps > 0,
        format!(
            "PEM objective in iterations with no clamp and no rho crossing ({stated_steps} steps): largest decrease \
             {stated:.2e} (need <= 1e-8); additionally excluding proportions at or below rho ({strict_steps} steps): {strict:.2e}"
        ),
    )
}

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(810);
    let mut worst = 0.0f64;
    for inst in 0..20 {
        let model = if inst % 2 == 0 { ModelKind::TwoParam } else { ModelKind::AllEffect };
        let (q, r) = random_instance(&mut rng, model);
        let a = PatternSet::full(q.k()).unwrap();
        let res = pem_fit::<f64>(&r, &q, &a, &FitConfig::pem(model, -1.0), None).unwrap();
        worst = worst.max((res.p_hat.values().iter().sum::<f64>() - 1.0).abs());
        let e = e_step(&res.theta_hat, &res.weights, &r).unwrap();
        for row in e.phi.rows() {
            worst = worst.max((row.sum() - 1.0).abs());
        }
    }
    outcome(
        "8c",
        worst <= 1e-10,
        format!("responsibility rows and proportions: largest deviation from 1 is {worst:.2e} (need <= 1e-10)"),
    )
}

/// Maximiser of `a ln t + b ln(1 - t)` on (0, 1) by golden-section search.
fn golden_max(a: f64, b: f64) -> f64 {
    let f = |t: f64| a * t.ln() + b * (1.0 - t).ln();
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (1e-12, 1.0 - 1e-12);
    while hi - lo > 1e-12 {
        let (x1, x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
        if f(x1) < f(x2) {
            lo = x1;
        } else {
            hi = x2;
        }
    }
    (lo + hi) / 2.0
}

/// Expected complete-data sufficient statistics `(sum of phi * R, sum of phi * (1 - R))`
/// for item `j` over the pattern columns accepted by `member`.
fn cell_stats(phi: &ndarray::Array2<f64>, r: &ResponseMatrix, j: usize, member: impl Fn(usize) -> bool) -> (f64, f64) {
    let (mut yes, mut no) = (0.0, 0.0);
    for i in 0..r.n() {
        for l in 0..phi.ncols() {
            if member(l) {
                let w = phi[[i, l]];
                if r.get(i, j) == 1 {
                    yes += w;
                } else {
                    no += w;
                }
            }
        }
    }
    (yes, no)
}

fn m_step_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(811);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let (q, r) = random_instance(&mut rng, ModelKind::TwoParam);
        let a = PatternSet::full(q.k()).unwrap();
        let mut phi = ndarray::Array2::<f64>::zeros((r.n(), a.len()));
        for mut row in phi.rows_mut() {
            row.mapv_inplace(|_| rng.gen_range(0.01..1.0));
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        let g = build_gamma(&q, &a).unwrap();
        let prev = TwoParamItemParams::uniform(q.j(), 0.8, 0.2).unwrap();
        let (two, _) = m_step_two_param(&phi, &g, &r, &prev).unwrap();
        for j in 0..q.j() {
            for (capable, est) in [(1u8, two.theta_plus[j]), (0, two.theta_minus[j])] {
                let (yes, no) = cell_stats(&phi, &r, j, |l| g.get(j, l) == capable);
                worst = worst.max((golden_max(yes, no) - est).abs());
            }
        }
        let prev: Vec<Vec<f64>> = (0..q.j()).map(|j| vec![0.5; 1 << q.required(j).len()]).collect();
        let (cells, _) = m_step_all_effect(&phi, &q, &a, &r, &prev).unwrap();
        for j in 0..q.j() {
            let req = q.required(j);
            for (c, &est) in cells[j].iter().enumerate() {
                let in_cell = |l: usize| {
                    let alpha = a.get(l);
                    req.iter().enumerate().all(|(t, &k)| alpha.get(k) == (c >> t & 1 == 1))
                };
                let (yes, no) = cell_stats(&phi, &r, j, in_cell);
                worst = worst.max((golden_max(yes, no) - est).abs());
            }
        }
    }
    outcome(
        "8d",
        worst <= 1e-6,
        format!("closed-form M-steps vs numeric maximisers: largest gap {worst:.2e} (need <= 1e-6)"),
    )
}

fn gamma_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(812);
    let mut mismatches = 0;
    let mut entries = 0;
    for k in 1..=4usize {
        let a = PatternSet::full(k).unwrap();
        // Every possible item row, then random Q-matrices up to six items.
        let all_rows: Vec<Vec<u8>> = (1..1u32 << k).map(|b| (0..k).map(|t| (b >> t & 1) as u8).collect()).collect();
        let mut designs = vec![all_rows.clone()];
        for j in 1..=6 {
            for _ in 0..20 {
                designs.push((0..j).map(|_| all_rows[rng.gen_range(0..all_rows.len())].clone()).collect());
            }
        }
        for rows in designs {
            let q = QMatrix::from_rows(&rows).unwrap();
            let g = build_gamma(&q, &a).unwrap();
            for (j, row) in rows.iter().enumerate() {
                for l in 0..a.len() {
                    let alpha = a.get(l).entries();
                    let expected = row.iter().zip(&alpha).all(|(&qk, &ak)| ak >= qk);
                    entries += 1;
                    if (g.get(j, l) == 1) != expected {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    outcome(
        "8e",
        mismatches == 0,
        format!("Gamma vs brute-force dominance for K <= 4, J <= 6: {mismatches} mismatches in {entries} entries (need 0)"),
    )
}

fn pmf_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(813);
    let mut worst = 0.0f64;
    for j in [1usize, 3, 6, 10] {
        let k = 3;
        let rows: Vec<Vec<u8>> = (0..j)
            .map(|jj| (0..k).map(|t| u8::from(t == jj % k || rng.gen_bool(0.3))).collect())
            .collect();
        let q = QMatrix::from_rows(&rows).unwrap();
        let a = PatternSet::full(k).unwrap();
        let g = build_gamma(&q, &a).unwrap();
        let plus = (0..j).map(|_| rng.gen_range(0.5..0.99)).collect();
        let minus = (0..j).map(|_| rng.gen_range(0.01..0.5)).collect();
        let theta = theta_two_param(&g, &TwoParamItemParams::new(plus, minus).unwrap()).unwrap();
        let weights: Vec<f64> = (0..a.len()).map(|_| rng.gen_range(0.1..1.0)).collect();
        let p = ProportionVector::from_weights(&weights).unwrap();
        let total: f64 = (0..1u32 << j)
            .map(|b| {
                let resp: Vec<u8> = (0..j).map(|t| (b >> t & 1) as u8).collect();
                response_pmf(&theta, &p, &resp).unwrap()
            })
            .sum();
        worst = worst.max((total - 1.0).abs());
    }
    outcome(
        "8f",
        worst <= 1e-10,
        format!("response pmf summed over all 2^J outcomes (J <= 10): largest deviation {worst:.2e} (need <= 1e-10)"),
    )
}

fn digamma_identities() -> Outcome {
    const EULER: f64 = 0.577_215_664_901_532_9;
    let mut worst = (digamma(1.0).unwrap() + EULER).abs();
    worst = worst.max((digamma(0.5).unwrap() + EULER + 2.0 * 2f64.ln()).abs());
    for x in [0.01, 0.3, 1.7, 4.0, 12.5, 150.0] {
        worst = worst.max((digamma(x + 1.0).unwrap() - digamma(x).unwrap() - 1.0 / x).abs());
    }
    outcome(
        "8g",
        worst <= 1e-10,
        format!("digamma at 1, 1/2 and the recurrence: largest error {worst:.2e} (need <= 1e-10)"),
    )
}

fn thread_invariance() -> Outcome {
    let sim = simulate(&SimDesign::two_param(13, 300, 0.1, 814)).unwrap();
    let config = PipelineConfig::pem(ModelKind::TwoParam);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_pipeline::<f64>(&sim.responses, &sim.q, &config, None).unwrap())
    };
    let (one, four) = (run(1), run(4));
    let bits = |w: &[f64]| w.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let same = one.candidates == four.candidates
        && one.path.chosen == four.path.chosen
        && one.path.entries.iter().zip(&four.path.entries).all(|(x, y)| {
            x.fit.selected == y.fit.selected
                && bits(&x.fit.weights) == bits(&y.fit.weights)
                && x.fit.loglik.to_bits() == y.fit.loglik.to_bits()
        });
    outcome(
        "8h",
        same && one.screened,
        format!(
            "screen + path at K=13 on 1 and 4 threads: {} (need bit-identical)",
            if same { "bit-identical" } else { "different" }
        ),
    )
}

fn large_smoke() -> Outcome {
    let t = Instant::now();
    let sim = simulate(&SimDesign::two_param(20, 150, 0.1, 909)).unwrap();
    let res = run_pipeline::<f64>(&sim.responses, &sim.q, &PipelineConfig::pem(ModelKind::TwoParam), None).unwrap();
    let m = selection_metrics(&sim.a0, &res.path.chosen_fit().selected).unwrap();
    let elapsed = t.elapsed();
    outcome(
        "smoke",
        res.screened && elapsed < Duration::from_secs(900),
        format!(
            "K=20 N=150 end to end: {} candidates, TPR {:.2}, 1-FDR {:.2}, {:.1}s (need < 900s)",
            res.candidates.len(),
            m.tpr,
            m.one_minus_fdr,
            elapsed.as_secs_f64()
        ),
    )
}

fn main() -> ExitCode {
    let checks: [fn() -> Outcome; 16] = [
        strong_pem,
        weak_pem,
        em_overselects,
        variational_support,
        all_effect_pem,
        screening,
        identifiability,
        em_monotone,
        pem_guarded,
        normalization,
        m_step_oracles,
        gamma_brute_force,
        pmf_normalization,
        digamma_identities,
        thread_invariance,
        large_smoke,
    ];
    let mut failed = 0;
    for check in checks {
        let o = check();
        println!("[{}] criterion {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} of {} checks passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
