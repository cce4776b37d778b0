//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (visible with --nocapture). The heavy training-based
//! criteria share a lazily computed desk-scale run.

mod common;

use std::sync::OnceLock;

use deconet::acf::{self, AcfProblem};
use deconet::bounds::{self, BoundInputs, ScalingTemplate};
use deconet::data;
use deconet::linalg::{gaussian_measurement, spectral_norm_default, Mat};
use deconet::net::{self, DecoderConfig, TrainHyper, TrainOptions};
use deconet::operators::{finite_difference, haar_redundant, init_learnable, InitScheme};
use deconet::schedule::Schedule;
use deconet::seed;
use deconet::verify::{self, VerifyOptions};

// ---------------------------------------------------------------------------
// Criterion 1: exact formula identities.
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_formula_unit_tests() {
    let tol = 1e-12;

    // Gain cap at unit operator norms.
    let sched3 = Schedule::geometric(3, 100.0, 0.9, 0.9, 1000.0).unwrap();
    let bi = BoundInputs {
        lambda: 1.0,
        a_norm: 1.0,
        sched: sched3.clone(),
        big_n: 20,
        n: 10,
        m: 5,
        s: 8,
        y_fro: 1.0,
        b_in: 1.0,
        b_out: 1.0,
        delta: 0.05,
    };
    let (_, gamma_cap) = bounds::gamma_seq(&bi);
    assert!((gamma_cap - 13.0).abs() <= tol, "gamma cap {gamma_cap}");

    // Geometric-series and two-layer aggregate identities at that cap.
    assert!((bounds::zeta(13.0, 2) - 14.0).abs() <= tol);
    assert!((bounds::kappa(13.0, 2) - 156.0).abs() <= tol);
    assert!((bounds::kappa(13.0, 2) - 13.0 * 12.0).abs() <= tol);

    // One-layer perturbation constant is 2‖A‖‖Y‖_F.
    let one = BoundInputs {
        sched: Schedule::geometric(1, 100.0, 0.9, 0.9, 1000.0).unwrap(),
        a_norm: 2.3,
        y_fro: 4.2,
        ..bi
    };
    let k1 = bounds::k_l_general(&one).unwrap().k_l;
    assert!((k1 - 2.0 * 2.3 * 4.2).abs() <= tol, "K_1 = {k1}");

    // Step-multiplier decay root at mu = 100, envelope 1000.
    let root = (100.0f64 / 1000.0).sqrt();
    let tp_expect = (1.0 - root) / (1.0 + root);
    match sched3.rule {
        deconet::schedule::ScheduleRule::Geometric { theta_prime, .. } => {
            assert!((theta_prime - tp_expect).abs() <= tol);
            assert!((theta_prime - 0.519495).abs() <= 2e-6);
        }
        _ => panic!("geometric schedule lost its rule"),
    }
    println!("criterion 1: PASS (gamma=13, zeta_2=14, kappa_2=156, K_1=2|A||Y|, theta'={tp_expect:.9})");
}

// ---------------------------------------------------------------------------
// Criterion 2: hand-derived gradient vs central finite differences.
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_gradient_correctness() {
    let want = 25;
    let mut done = 0;
    let mut attempt = 0u64;
    let mut worst = 0.0f64;
    while done < want {
        assert!(attempt < 500, "could not draw {want} kink-free instances");
        let seed_v = seed::sub_seed(0xace5, "gradient").wrapping_add(attempt);
        attempt += 1;
        match verify::gradient_check_case(seed_v) {
            None => continue, // pre-activation or clip margin too small; redraw
            Some(max_rel) => {
                done += 1;
                worst = worst.max(max_rel);
                assert!(
                    max_rel <= 1e-5,
                    "instance {done}: max relative gradient error {max_rel}"
                );
            }
        }
    }
    println!("criterion 2: PASS ({want} instances, worst relative error {worst:.3e})");
}

// ---------------------------------------------------------------------------
// Criteria 3/4/5: perturbation, state-growth and layer-gain inequalities.
// The draw regime keeps every link of the bound chain valid: constant
// coefficients c = 1/mu with mu = 2 and Lambda = |A| = 0.99*sqrt(mu), so the
// boundedness assumptions hold at each layer with the gain caps dominating
// the materialized block norms.
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_lipschitz_perturbation() {
    for layers in [1usize, 2, 5] {
        let opts = VerifyOptions {
            seed: 0x7e0,
            layers,
            pairs: 200,
            ..VerifyOptions::default()
        };
        let rep = verify::lipschitz_family(&opts);
        assert!(
            rep.pass,
            "L={layers}: {} violations, worst margin {}, {}",
            rep.violations, rep.worst_margin, rep.detail
        );
        println!(
            "criterion 3: PASS at L={layers} (200 pairs, {} checks, worst margin {:.3e})",
            rep.checks, rep.worst_margin
        );
    }
}

#[test]
fn criterion_4_state_norm_growth() {
    let opts = VerifyOptions {
        seed: 0x4e0,
        layers: 5,
        draws: 200,
        ..VerifyOptions::default()
    };
    let rep = verify::state_growth_family(&opts);
    assert!(
        rep.pass,
        "{} violations, worst margin {}, {}",
        rep.violations, rep.worst_margin, rep.detail
    );
    println!(
        "criterion 4: PASS (200 draws, k=1..5 both bounds, {} checks, worst margin {:.3e})",
        rep.checks, rep.worst_margin
    );
}

#[test]
fn criterion_5_layer_gain_bound() {
    let opts = VerifyOptions {
        seed: 0x5e0,
        layers: 5,
        draws: 100,
        ..VerifyOptions::default()
    };
    let rep = verify::layer_gain_family(&opts);
    assert!(
        rep.pass,
        "{} violations, worst margin {}, {}",
        rep.violations, rep.worst_margin, rep.detail
    );
    println!(
        "criterion 5: PASS (100 draws, {} checks, worst margin {:.3e})",
        rep.checks, rep.worst_margin
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: solver against an independent primal-dual reference.
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_solver_matches_reference() {
    use rand::Rng;
    use rand_distr::StandardNormal;

    let mu = 10.0;
    let (n, m, big_n) = (8usize, 4usize, 12usize);
    // Unit-radius truncation with unit dual steps keeps the l1 term at unit
    // coefficient; unit-norm W keeps the step inside the stability margin.
    let sched = Schedule::unit_theta(5000, mu, 1.0, 1.0).unwrap();
    let mut worst = 0.0f64;
    for inst in 0..20u64 {
        let a = gaussian_measurement(m, n, seed::sub_seed(inst, "c7-a")).unwrap();
        let w_raw = init_learnable(n, big_n, InitScheme::Normal, seed::sub_seed(inst, "c7-w"))
            .unwrap()
            .w;
        let w = w_raw.scale(1.0 / spectral_norm_default(&w_raw).unwrap().value);
        let mut rng = seed::rng(seed::sub_seed(inst, "c7-x"));
        let x_true: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let y = deconet::linalg::matvec(&a, false, &x_true);

        let prob = AcfProblem::new(&a, &w, y.clone(), mu, 0.0).unwrap();
        let oracle = common::reference_minimizer(&a, &w, &y, &prob.x0, mu, 60_000);
        assert!(
            oracle.kkt_residual <= 1e-10,
            "instance {inst}: reference residual {} too large",
            oracle.kkt_residual
        );

        let out = acf::acf_solve(&prob, &sched, 5000).unwrap();
        let rel = common::rel_distance(&out.x_hat, &oracle.x);
        worst = worst.max(rel);
        assert!(
            rel <= 1e-4,
            "instance {inst}: relative distance to the reference {rel}"
        );
    }
    println!("criterion 7: PASS (20 instances, worst relative distance {worst:.3e})");
}

// ---------------------------------------------------------------------------
// Shared desk-scale runs (criteria 6, 9, 10).
// ---------------------------------------------------------------------------

const DESK_N: usize = 100;
const DESK_M: usize = 25;
const DESK_REDUNDANCY: usize = 500;
const DESK_LAYERS: usize = 10;
const DESK_SAMPLES: usize = 2500; // 2000 train / 500 test
const DESK_MU: f64 = 100.0;
const DESK_EPOCHS: usize = 80;
const DESK_LR: f64 = 1e-3;

struct DeskSeedRun {
    seed: u64,
    final_test_mse: f64,
    final_train_mse: f64,
    mse_tv: f64,
    mse_haar: f64,
    mse_tv_recursion: f64,
    mse_haar_recursion: f64,
    anchor_mse: f64,
    metrics_csv: String,
    clip_excess: f64,
}

fn desk_clip_excess(w: &Mat, y: &Mat, cfg: &DecoderConfig, a: &Mat) -> f64 {
    let xhat = net::decode(w, y, cfg, a).unwrap();
    let mut worst = f64::NEG_INFINITY;
    for j in 0..xhat.cols() {
        worst = worst.max(xhat.col_norm_sq(j).sqrt() - cfg.b_out);
    }
    worst
}

fn run_desk_seed(seed_v: u64) -> DeskSeedRun {
    let a = gaussian_measurement(DESK_M, DESK_N, seed::sub_seed(seed_v, "measurement")).unwrap();
    let ds = data::build_synthetic(&a, DESK_N, DESK_SAMPLES, 1e-4, seed_v).unwrap();
    let split = data::split(DESK_SAMPLES, 0.8).unwrap();
    assert_eq!(split.train.len(), 2000);
    assert_eq!(split.test.len(), 500);
    let x_train = ds.x.gather_cols(&split.train);
    let y_train = ds.y.gather_cols(&split.train);
    let x_test = ds.x.gather_cols(&split.test);
    let y_test = ds.y.gather_cols(&split.test);
    let (_, b_out) = data::estimate_bounds_constants(&ds.x, &ds.y, &split.train).unwrap();

    // Fixed-operator baselines at the network's layer count, run both with
    // the same geometric schedule the layers use and with the solver default.
    let geo = Schedule::geometric(DESK_LAYERS, DESK_MU, 0.9, 0.9, 1000.0).unwrap();
    let rec = Schedule::recursion(DESK_LAYERS, DESK_MU, 1.0, 1.0).unwrap();
    let haar = haar_redundant(DESK_N).unwrap().w;
    let tv = finite_difference(DESK_N).unwrap().w;
    let mse_haar =
        acf::baseline_mse(&a, &haar, &x_test, &y_test, DESK_MU, ds.eps, &geo, DESK_LAYERS).unwrap();
    let mse_tv =
        acf::baseline_mse(&a, &tv, &x_test, &y_test, DESK_MU, ds.eps, &geo, DESK_LAYERS).unwrap();
    let mse_haar_recursion =
        acf::baseline_mse(&a, &haar, &x_test, &y_test, DESK_MU, ds.eps, &rec, DESK_LAYERS).unwrap();
    let mse_tv_recursion =
        acf::baseline_mse(&a, &tv, &x_test, &y_test, DESK_MU, ds.eps, &rec, DESK_LAYERS).unwrap();

    let x0 = a.matmul_opts(true, &y_test, false, 1.0);
    let (anchor_mse, _) = net::mse_loss(&x0, &x_test).unwrap();

    let cfg = DecoderConfig::new(geo, b_out, ds.eps).unwrap();
    let w0 = init_learnable(
        DESK_N,
        DESK_REDUNDANCY,
        InitScheme::Normal,
        seed::sub_seed(seed_v, "init"),
    )
    .unwrap()
    .w;
    let opts = TrainOptions {
        hyper: TrainHyper {
            lr: DESK_LR,
            ..TrainHyper::default()
        },
        batch: 128,
        // The train/test gap grows monotonically on this data, so the
        // gap-improvement rule must not cut the budget short.
        patience: DESK_EPOCHS,
        max_epochs: DESK_EPOCHS,
        project_lambda: None,
        seed: seed_v,
    };
    let out = net::train(&a, &x_train, &y_train, &x_test, &y_test, w0, &cfg, &opts).unwrap();
    let last = out.metrics.last().unwrap();

    // Clip check on both splits with the final-epoch decoder state is not
    // available (the outcome keeps the best-gap snapshot), so measure on the
    // returned snapshot and on a fresh decode of the test split.
    let clip_excess = desk_clip_excess(&out.w, &y_test, &cfg, &a)
        .max(desk_clip_excess(&out.w, &y_train, &cfg, &a));

    DeskSeedRun {
        seed: seed_v,
        final_test_mse: last.test_mse,
        final_train_mse: last.train_mse,
        mse_tv,
        mse_haar,
        mse_tv_recursion,
        mse_haar_recursion,
        anchor_mse,
        metrics_csv: net::metrics_csv_string(&out.metrics),
        clip_excess,
    }
}

static DESK: OnceLock<Vec<DeskSeedRun>> = OnceLock::new();

fn desk_runs() -> &'static Vec<DeskSeedRun> {
    DESK.get_or_init(|| [1u64, 2, 3].iter().map(|&s| run_desk_seed(s)).collect())
}

// ---------------------------------------------------------------------------
// Criterion 6: desk-scale comparison of the trained decoder against the two
// fixed-operator baselines at equal layer/iteration count.
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_desk_table_ordering() {
    let runs = desk_runs();
    let mut all_hold = true;
    for r in runs {
        let best_acf = r.mse_tv.min(r.mse_haar);
        let beats_both = r.final_test_mse < r.mse_tv && r.final_test_mse < r.mse_haar;
        let tv_below_haar = r.mse_tv < r.mse_haar;
        let five_fold = 5.0 * r.final_test_mse <= best_acf;
        println!(
            "criterion 6 seed {}: deconet={:.3} (train {:.3}) tv={:.3} haar={:.3} \
             [solver-default schedule: tv={:.3} haar={:.3}; anchor={:.3}] -> \
             deconet<both: {beats_both}, tv<haar: {tv_below_haar}, 5x margin: {five_fold} \
             (ratio {:.2})",
            r.seed,
            r.final_test_mse,
            r.final_train_mse,
            r.mse_tv,
            r.mse_haar,
            r.mse_tv_recursion,
            r.mse_haar_recursion,
            r.anchor_mse,
            best_acf / r.final_test_mse,
        );
        all_hold &= beats_both && tv_below_haar && five_fold;
    }
    if all_hold {
        println!("criterion 6: PASS");
    } else {
        println!(
            "criterion 6: FAIL — the trained decoder beats both baselines on every seed, \
             but (a) the two fixed operators rank haar < tv on dense Gaussian signals (the \
             redundant averaging rows shrink signal energy, which is the better prior here), \
             and (b) a 5x MSE margin is unreachable: any decoder's test MSE is floored near \
             n - m = {} by the conditional covariance of the signal model, while a \
             10-iteration baseline already improves well past 5x that floor.",
            DESK_N - DESK_M
        );
    }
    assert!(
        all_hold,
        "strict desk-scale ordering condition failed; see the printed analysis"
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: generalization-gap scaling across the (N, L) grid.
// ---------------------------------------------------------------------------

const GRID_N: usize = 50;
const GRID_M: usize = 12;
const GRID_EPOCHS: usize = 40;
const GRID_SEEDS: [u64; 5] = [11, 22, 33, 44, 55];

struct GridOutcome {
    cells: Vec<(usize, usize)>,
    mean_ege: Vec<f64>,
    sqrt_nl: Vec<f64>,
    clip_excess: f64,
}

fn run_grid_cell(big_n: usize, layers: usize, seed_v: u64) -> (f64, f64) {
    let a = gaussian_measurement(GRID_M, GRID_N, seed::sub_seed(seed_v, "measurement")).unwrap();
    let ds = data::build_synthetic(&a, GRID_N, 2500, 1e-4, seed_v).unwrap();
    let split = data::split(2500, 0.8).unwrap();
    let x_train = ds.x.gather_cols(&split.train);
    let y_train = ds.y.gather_cols(&split.train);
    let x_test = ds.x.gather_cols(&split.test);
    let y_test = ds.y.gather_cols(&split.test);
    let (_, b_out) = data::estimate_bounds_constants(&ds.x, &ds.y, &split.train).unwrap();
    let sched = Schedule::geometric(layers, DESK_MU, 0.9, 0.9, 1000.0).unwrap();
    let cfg = DecoderConfig::new(sched, b_out, ds.eps).unwrap();
    let w0 = init_learnable(GRID_N, big_n, InitScheme::Normal, seed::sub_seed(seed_v, "init"))
        .unwrap()
        .w;
    let opts = TrainOptions {
        hyper: TrainHyper {
            lr: 1e-3,
            ..TrainHyper::default()
        },
        batch: 128,
        patience: GRID_EPOCHS,
        max_epochs: GRID_EPOCHS,
        project_lambda: None,
        seed: seed_v,
    };
    let out = net::train(&a, &x_train, &y_train, &x_test, &y_test, w0, &cfg, &opts).unwrap();
    let gap = out.metrics.last().unwrap().ege;
    let clip = desk_clip_excess(&out.w, &y_test, &cfg, &a);
    (gap, clip)
}

static GRID: OnceLock<GridOutcome> = OnceLock::new();

fn grid_runs() -> &'static GridOutcome {
    GRID.get_or_init(|| {
        use rayon::prelude::*;
        let mut cells = Vec::new();
        for ratio in [2usize, 5, 10] {
            for layers in [5usize, 10, 15] {
                cells.push((ratio * GRID_N, layers));
            }
        }
        let mut jobs = Vec::new();
        for (ci, _) in cells.iter().enumerate() {
            for &s in &GRID_SEEDS {
                jobs.push((ci, s));
            }
        }
        let results: Vec<(usize, f64, f64)> = jobs
            .par_iter()
            .map(|&(ci, s)| {
                let (big_n, layers) = cells[ci];
                let (gap, clip) = run_grid_cell(big_n, layers, s);
                (ci, gap, clip)
            })
            .collect();
        let mut mean_ege = vec![0.0; cells.len()];
        let mut clip_excess = f64::NEG_INFINITY;
        for &(ci, gap, clip) in &results {
            mean_ege[ci] += gap / GRID_SEEDS.len() as f64;
            clip_excess = clip_excess.max(clip);
        }
        let sqrt_nl = cells
            .iter()
            .map(|&(nn, l)| ((nn * l) as f64).sqrt())
            .collect();
        GridOutcome {
            cells,
            mean_ege,
            sqrt_nl,
            clip_excess,
        }
    })
}

#[test]
fn criterion_8_scaling_trend() {
    let grid = grid_runs();
    for (i, &(nn, l)) in grid.cells.iter().enumerate() {
        println!(
            "criterion 8 cell N={nn:4} L={l:2}: sqrt(NL)={:7.2} mean EGE={:.4}",
            grid.sqrt_nl[i], grid.mean_ege[i]
        );
    }
    let rho = common::spearman(&grid.mean_ege, &grid.sqrt_nl);

    // Bound side: fixed nominal inputs across the same grid must be exactly
    // monotone along both axes.
    let tpl = ScalingTemplate {
        lambda: 1.2,
        a_norm: 2.0,
        mu: DESK_MU,
        alpha: 0.9,
        beta: 0.9,
        l_tilde: 1000.0,
        n: GRID_N,
        m: GRID_M,
        y_fro_per_sqrt_s: (GRID_M as f64).sqrt(),
        b_out: (GRID_N as f64).sqrt() * 1.5,
        delta: 0.05,
    };
    let grid_pts: Vec<(usize, usize, usize)> = grid
        .cells
        .iter()
        .map(|&(nn, l)| (nn, l, 2000))
        .collect();
    let pts = bounds::scaling_curve(&tpl, &grid_pts).unwrap();
    let bound_at = |nn: usize, l: usize| {
        pts.iter()
            .find(|p| p.big_n == nn && p.layers == l)
            .unwrap()
            .bound
    };
    let mut monotone = true;
    for &l in &[5usize, 10, 15] {
        monotone &= bound_at(100, l) < bound_at(250, l) && bound_at(250, l) < bound_at(500, l);
    }
    for &nn in &[100usize, 250, 500] {
        monotone &= bound_at(nn, 5) < bound_at(nn, 10) && bound_at(nn, 10) < bound_at(nn, 15);
    }

    println!(
        "criterion 8: {} (Spearman(EGE, sqrt(NL)) = {rho:.3} >= 0.7: {}, bound monotone: {monotone})",
        if rho >= 0.7 && monotone { "PASS" } else { "FAIL" },
        rho >= 0.7
    );
    assert!(rho >= 0.7, "Spearman correlation {rho} below 0.7");
    assert!(monotone, "bound not monotone along both axes");
}

// ---------------------------------------------------------------------------
// Criterion 9: no decoder output ever exceeds the clip level; the invariant
// families report zero violations.
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_output_clipping() {
    let desk_excess = desk_runs()
        .iter()
        .map(|r| r.clip_excess)
        .fold(f64::NEG_INFINITY, f64::max);
    let grid_excess = grid_runs().clip_excess;
    assert!(
        desk_excess <= 1e-12,
        "desk runs exceeded the clip level by {desk_excess}"
    );
    assert!(
        grid_excess <= 1e-12,
        "grid runs exceeded the clip level by {grid_excess}"
    );

    let rep = verify::clipping_family(&VerifyOptions::default());
    assert!(rep.pass && rep.violations == 0, "clip family: {:?}", rep.detail);
    println!(
        "criterion 9: PASS (worst excess desk {desk_excess:.3e}, grid {grid_excess:.3e}, \
         family {} checks zero violations)",
        rep.checks
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: repeating a desk run with identical seeds reproduces the
// metrics file byte for byte.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_metrics_determinism() {
    let first = &desk_runs()[0];
    let again = run_desk_seed(first.seed);
    assert_eq!(
        first.metrics_csv, again.metrics_csv,
        "metrics differ between identical runs"
    );
    println!(
        "criterion 10: PASS (seed {} rerun byte-identical, {} bytes)",
        first.seed,
        first.metrics_csv.len()
    );
}
