//! Acceptance gate. Prints one PASS/FAIL line per criterion, then fails the
//! test if any criterion that can run in this environment failed.
//!
//! The ranking-trend criterion needs the MSLR-WEB30K Fold1 files; set
//! `CALIRANK_WEB30K_DIR` to the directory holding train.txt, vali.txt and
//! test.txt and run the ignored `criterion_7_web30k` test. Without the data
//! the default run reports it as FAIL and shows the same trend checks on
//! synthetic LETOR data for information.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use calirank::experiment::{
    dominance_flags, run_sweep, ExperimentConfig, Method, SweepResults,
};
use calirank::letor::{prepare_splits, PrepareOptions};
use calirank::losses::{list_ce, softmax_ce, LossSpec, Transformation};
use calirank::metrics::{aucpr, dcg_at_k, ece};
use calirank::oracle::{
    synthetic_letor, verify_divergence_under_translation, verify_fixed_point, FixedPointOptions,
    SyntheticLetorConfig, SyntheticWorld,
};
use common::{
    all_losses, aucpr_oracle, dcg_oracle, dominated_oracle, fd_score_grad, network_grad_error,
    permutations, random_list, rel_err,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: u32,
    passed: bool,
    detail: String,
}

fn report(id: u32, passed: bool, detail: String) -> Outcome {
    println!(
        "criterion {id}: {} | {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    Outcome { id, passed, detail }
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut loss_gap, mut grad_gap) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(1..=50);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.3))).collect();
        let a = list_ce(Transformation::Exp, &s, &y);
        let b = softmax_ce(&s, &y);
        loss_gap = loss_gap.max((a.loss - b.loss).abs());
        for (x, z) in a.grad.iter().zip(&b.grad) {
            grad_gap = grad_gap.max((x - z).abs());
        }
    }
    let el = t.elapsed();
    report(
        1,
        loss_gap < 1e-12 && grad_gap < 1e-12 && within(el, 1.0),
        format!("max |loss gap| {loss_gap:.2e}, max |grad gap| {grad_gap:.2e} (< 1e-12), {el:.2?} (< 1 s)"),
    )
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let worlds: Vec<Vec<f64>> = (0..100)
        .map(|_| {
            let n = rng.random_range(1..=16);
            (0..n).map(|_| rng.random_range(0.01..=0.99)).collect()
        })
        .collect();
    let world = SyntheticWorld::from_probabilities(worlds, 2).unwrap();
    let mut worst = 0.0f64;
    let mut slow = 0;
    let mut diverged = false;
    for alpha in [0.1, 0.5, 0.9] {
        let r = verify_fixed_point(&LossSpec::rcr(alpha).unwrap(), &world, &FixedPointOptions::default()).unwrap();
        worst = worst.max(r.max_calibration_error);
        slow += r.groups.iter().filter(|g| !g.converged).count();
        diverged |= r.any_diverged;
    }
    let el = t.elapsed();
    report(
        2,
        worst < 1e-6 && !diverged && within(el, 60.0),
        format!("100 worlds, alpha in {{0.1,0.5,0.9}}: max |sigmoid(s)-P| {worst:.2e} (< 1e-6), {slow} of 300 runs hit the step cap above the 1e-9 gradient tolerance, {el:.2?} (< 60 s)"),
    )
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let world = SyntheticWorld::from_probabilities(vec![vec![0.6, 0.2]], 3).unwrap();
    let opts = FixedPointOptions::default();
    let multi = verify_fixed_point(&LossSpec::multi_objective(0.5).unwrap(), &world, &opts).unwrap();
    let rcr = verify_fixed_point(&LossSpec::rcr(0.5).unwrap(), &world, &opts).unwrap();
    let el = t.elapsed();
    report(
        3,
        multi.max_calibration_error > 0.01 && rcr.max_calibration_error < 1e-6 && within(el, 5.0),
        format!(
            "P=[0.6,0.2], alpha 0.5: sigmoid_ce+softmax_ce error {:.4} (> 0.01), rcr error {:.2e} (< 1e-6), {el:.2?} (< 5 s)",
            multi.max_calibration_error, rcr.max_calibration_error
        ),
    )
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let mut worst_net = 0.0f64;
    let mut worst_score = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for instance in 0..50u64 {
        let n = rng.random_range(1..=10);
        let (s, y) = random_list(&mut rng, n, false);
        for spec in all_losses() {
            worst_net = worst_net.max(network_grad_error(&spec, 400 + instance));
            let g = spec.evaluate(&s, &y).grad;
            worst_score = worst_score.max(rel_err(&g, &fd_score_grad(&spec, &s, &y, 1e-5)));
        }
    }
    let el = t.elapsed();
    report(
        4,
        worst_net < 1e-4 && worst_score < 1e-4 && within(el, 30.0),
        format!("50 instances x {} losses: network rel err {worst_net:.2e}, score rel err {worst_score:.2e} (< 1e-4), {el:.2?} (< 30 s)", all_losses().len()),
    )
}

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let labels = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
    let mut dcg_gap = 0.0f64;
    let perms = permutations(6);
    for p in &perms {
        let s: Vec<f64> = p.iter().map(|&r| r as f64).collect();
        for k in 1..=6 {
            dcg_gap = dcg_gap.max((dcg_at_k(&s, &labels, k) - dcg_oracle(&s, &labels, k)).abs());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ap_gap = 0.0f64;
    for _ in 0..2000 {
        let n = rng.random_range(1..=32);
        let p: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..10u8)) / 9.0).collect();
        let mut y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.3))).collect();
        y[0] = 1.0;
        ap_gap = ap_gap.max((aucpr(&p, &y).unwrap() - aucpr_oracle(&p, &y)).abs());
    }
    let mut pareto_ok = true;
    for _ in 0..50 {
        let pts: Vec<(f64, f64)> = (0..200)
            .map(|_| (f64::from(rng.random_range(0..30u8)), f64::from(rng.random_range(0..30u8))))
            .collect();
        pareto_ok &= dominance_flags(&pts) == dominated_oracle(&pts);
    }
    let el = t.elapsed();
    report(
        5,
        perms.len() == 720 && dcg_gap < 1e-12 && ap_gap < 1e-12 && pareto_ok && within(el, 30.0),
        format!(
            "{} permutations DCG gap {dcg_gap:.1e}, AUCPR gap {ap_gap:.1e} over 2000 lists, Pareto 50 x 200-point clouds match {pareto_ok}, {el:.2?} (< 30 s)",
            perms.len()
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut invariant_gap = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(2..=20);
        let (s, mut y) = random_list(&mut rng, n, false);
        y[0] = 1.0;
        let c = rng.random_range(-100.0..100.0);
        for spec in [LossSpec::softmax_ce(), LossSpec::pairwise_logistic()] {
            let r = verify_divergence_under_translation(&spec, &s, &y, c, 0).unwrap();
            invariant_gap = invariant_gap.max(r.loss_change.max(r.grad_change));
        }
    }
    let s = [0.3, -1.2, 0.8, 2.0];
    let y = [1.0, 0.0, 0.0, 1.0];
    let sig = verify_divergence_under_translation(&LossSpec::sigmoid_ce(), &s, &y, 1.0, 0).unwrap();
    let lce = verify_divergence_under_translation(&LossSpec::list_ce(Transformation::Sigmoid), &s, &y, 10.0, 0).unwrap();
    report(
        6,
        invariant_gap < 1e-9 && sig.loss_change > 0.0 && lce.loss_change > 0.0,
        format!(
            "softmax/pairwise max change {invariant_gap:.2e} (< 1e-9); counterexamples: sigmoid_ce s+1 changes loss by {:.4}, list_ce(sigmoid) s+10 by {:.4}",
            sig.loss_change, lce.loss_change
        ),
    )
}

struct Trends {
    a: bool,
    b: bool,
    c: bool,
    detail: String,
}

fn selected(results: &SweepResults, m: Method) -> Option<(f64, f64)> {
    let t = results.get(m)?.selected.as_ref()?;
    Some((t.test.ndcg(10), t.test.logloss))
}

fn trends(results: &SweepResults) -> Trends {
    let nan = (f64::NAN, f64::NAN);
    let sig = selected(results, Method::SigmoidCe).unwrap_or(nan);
    let rcr = selected(results, Method::SigmoidCePlusListCe).unwrap_or(nan);
    let soft = selected(results, Method::SoftmaxCe).unwrap_or(nan);
    let calibrated = [
        Method::SigmoidCe,
        Method::SoftmaxCePlatt,
        Method::SigmoidCePlusSoftmaxCe,
        Method::SigmoidCePlusListCe,
    ];
    let worst_calibrated = calibrated
        .iter()
        .map(|&m| selected(results, m).unwrap_or(nan).1)
        .fold(f64::NEG_INFINITY, f64::max);
    let ratio = soft.1 / worst_calibrated;
    Trends {
        a: rcr.0 > sig.0,
        b: ratio >= 5.0,
        c: (rcr.1 - sig.1).abs() <= 0.05,
        detail: format!(
            "(a) rcr ndcg@10 {:.4} vs sigmoid_ce {:.4}; (b) softmax_ce logloss {:.4} = {ratio:.2}x worst calibrated {worst_calibrated:.4} (need >= 5x); (c) |rcr - sigmoid_ce| logloss {:.4} (<= 0.05)",
            rcr.0,
            sig.0,
            soft.1,
            (rcr.1 - sig.1).abs()
        ),
    }
}

fn desk_grid(config: &mut ExperimentConfig) {
    config.methods = Method::TABLE.to_vec();
    config.learning_rates = vec![0.001, 0.01];
    config.alphas = vec![0.1, 0.5, 0.9];
    config.epochs = 30;
    config.seed = 0;
}

/// Same protocol on synthetic LETOR data with a small network.
fn surrogate_sweep() -> SweepResults {
    let [train, vali, test] = synthetic_letor(&SyntheticLetorConfig::default());
    let data = prepare_splits(&train, &vali, &test, &PrepareOptions::default()).unwrap();
    let mut config = ExperimentConfig::default();
    desk_grid(&mut config);
    config.hidden = vec![64, 32];
    config.batch_queries = 32;
    run_sweep(&config, &data).unwrap()
}

fn web30k_dir() -> Option<PathBuf> {
    let dir = PathBuf::from(std::env::var_os("CALIRANK_WEB30K_DIR")?);
    ["train.txt", "vali.txt", "test.txt"]
        .iter()
        .all(|f| dir.join(f).exists())
        .then_some(dir)
}

fn web30k_sweep(dir: &std::path::Path) -> SweepResults {
    let mut config = ExperimentConfig::default();
    desk_grid(&mut config);
    config.train = Some(dir.join("train.txt"));
    config.vali = Some(dir.join("vali.txt"));
    config.test = Some(dir.join("test.txt"));
    config.subsample_queries = Some(2000);
    config.eval_max_docs = Some(3000);
    let data = calirank::experiment::load_data(&config).unwrap();
    run_sweep(&config, &data).unwrap()
}

fn criterion_7(surrogate: &SweepResults) -> Outcome {
    match web30k_dir() {
        Some(dir) => {
            let t = Instant::now();
            let tr = trends(&web30k_sweep(&dir));
            report(
                7,
                tr.a && tr.b && tr.c,
                format!("MSLR-WEB30K desk run ({:.0?}): {}", t.elapsed(), tr.detail),
            )
        }
        None => {
            let tr = trends(surrogate);
            report(
                7,
                false,
                format!(
                    "MSLR-WEB30K not available (set CALIRANK_WEB30K_DIR), criterion unverified; synthetic surrogate for reference: a={} b={} c={}: {}",
                    tr.a, tr.b, tr.c, tr.detail
                ),
            )
        }
    }
}

fn criterion_8(surrogate: &SweepResults) -> Outcome {
    let raw = &surrogate.get(Method::SoftmaxCe).unwrap().trials;
    let platt = &surrogate.get(Method::SoftmaxCePlatt).unwrap().trials;
    let mut pairs = 0;
    let mut equal = raw.len() == platt.len() && !raw.is_empty();
    for (r, p) in raw.iter().zip(platt) {
        pairs += 1;
        equal &= r.learning_rate == p.learning_rate
            && r.test.ndcg_at.iter().zip(&p.test.ndcg_at).all(|(a, b)| a.0 == b.0 && a.1.to_bits() == b.1.to_bits());
    }
    let sel_raw = selected(surrogate, Method::SoftmaxCe).map(|v| v.0.to_bits());
    let sel_platt = selected(surrogate, Method::SoftmaxCePlatt).map(|v| v.0.to_bits());
    equal &= sel_raw.is_some() && sel_raw == sel_platt;
    report(
        8,
        equal,
        format!("{pairs} softmax_ce trials and the selected model: Platt test NDCG bit-equal {equal}"),
    )
}

fn criterion_9() -> Outcome {
    // ten bins of ten documents; bin b has b positives and predicts b/10
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for b in 0..10 {
        for i in 0..10 {
            preds.push(b as f64 / 10.0);
            labels.push(if i < b { 1.0 } else { 0.0 });
        }
    }
    let calibrated = ece(&[preds], &[labels], 10);
    let worst = ece(&[vec![1.0; 7], vec![1.0; 23]], &[vec![0.0; 7], vec![0.0; 23]], 10);
    report(
        9,
        calibrated < 1e-12 && worst == 1.0,
        format!("calibrated ECE {calibrated:.1e} (< 1e-12), y_hat=1/y=0 ECE {worst} (== 1.0)"),
    )
}

#[test]
fn acceptance() {
    let mut outcomes = vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
    ];
    let surrogate = surrogate_sweep();
    outcomes.push(criterion_7(&surrogate));
    outcomes.push(criterion_8(&surrogate));
    outcomes.push(criterion_9());

    let data_available = web30k_dir().is_some();
    let blocking: Vec<&Outcome> = outcomes
        .iter()
        .filter(|o| !o.passed && (o.id != 7 || data_available))
        .collect();
    assert!(
        blocking.is_empty(),
        "failed: {:?}",
        blocking.iter().map(|o| (o.id, &o.detail)).collect::<Vec<_>>()
    );
}

#[test]
#[ignore = "needs MSLR-WEB30K Fold1 in CALIRANK_WEB30K_DIR; hours of CPU"]
fn criterion_7_web30k() {
    let dir = web30k_dir().expect("CALIRANK_WEB30K_DIR must hold train.txt, vali.txt, test.txt");
    let tr = trends(&web30k_sweep(&dir));
    println!("{}", tr.detail);
    assert!(tr.a && tr.b && tr.c, "{}", tr.detail);
}
