//! Acceptance suite: every criterion runs in order and prints one
//! PASS/FAIL line. Run with `cargo test --test acceptance -- --nocapture`
//! to watch the lines; the test fails if any criterion fails.

use std::collections::BTreeSet;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voxground::autodiff::{checkpoint, AdamConfig, AdamMoments, ParamStore, Tape};
use voxground::harness::{
    evaluate, generate_dataset, generate_scene, profile, read_dataset, write_dataset,
    GroundingSample, SceneSpec,
};
use voxground::head::{diou_loss, focal_loss, iou3d, Box3D};
use voxground::matrix::Matrix;
use voxground::pipeline::{
    forward, grad_check_full, infer, init_params, train_step, AdditionMode, FusionMode,
    ModelConfig,
};
use voxground::sparse::{
    coord_align_mask, farthest_point_sample, interpolation_plan, level_voxel_size, voxelize,
    Coord3, SparseGrid,
};
use voxground::text::Vocabulary;
use voxground::tgp::{build_scene_supervision, build_target_supervision};

const TRAIN_STEPS: u64 = 3000;
const TRAIN_SCENES: usize = 16;

fn bench_spec() -> SceneSpec {
    SceneSpec {
        objects_min: 2,
        objects_max: 3,
        extent: 1.6,
        points_per_object: 96,
        floor_points: 256,
    }
}

fn bench_config() -> ModelConfig {
    ModelConfig::default()
}

fn schedule_lr(t: u64, steps: u64) -> f64 {
    let frac = t as f64 / steps as f64;
    if frac < 0.6 {
        2e-3
    } else if frac < 0.85 {
        6e-4
    } else {
        2e-4
    }
}

fn train_model(
    config: &ModelConfig,
    vocab: &Vocabulary,
    data: &[GroundingSample],
    steps: u64,
) -> ParamStore {
    let mut store = init_params(config, vocab).expect("init");
    let mut moments = AdamMoments::default();
    for t in 1..=steps {
        let adam = AdamConfig { lr: schedule_lr(t, steps), ..AdamConfig::default() };
        let sample = &data[(t as usize - 1) % data.len()];
        train_step(
            std::slice::from_ref(sample),
            &mut store,
            &mut moments,
            &adam,
            config,
            vocab,
            t,
        )
        .expect("train step");
    }
    store
}

struct Fixture {
    vocab: Vocabulary,
    config: ModelConfig,
    train_set: Vec<GroundingSample>,
    heldout: Vec<GroundingSample>,
    store: ParamStore,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let vocab = Vocabulary::builtin();
        let config = bench_config();
        let train_set = generate_dataset(100, TRAIN_SCENES, &bench_spec()).expect("scenes");
        let heldout = generate_dataset(9_000, TRAIN_SCENES, &bench_spec()).expect("scenes");
        let store = train_model(&config, &vocab, &train_set, TRAIN_STEPS);
        Fixture { vocab, config, train_set, heldout, store }
    })
}

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(outcomes: &mut Vec<Outcome>, name: &'static str, pass: bool, detail: String) {
    println!(
        "[acceptance] criterion {name}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    outcomes.push(Outcome { name, pass, detail });
}

// ---------------------------------------------------------------- criterion 1

fn criterion_1(outcomes: &mut Vec<Outcome>) {
    let vocab = Vocabulary::builtin();
    let mut config = bench_config();
    // the original block ordering plus completion at both levels binds
    // every parameter group of the full pipeline
    config.fusion_mode = FusionMode::Tgp;
    config.addition_mode = AdditionMode::Cba;
    config.cba_levels = vec![1, 2];
    config.seed = 1;
    let spec = SceneSpec {
        objects_min: 2,
        objects_max: 2,
        extent: 1.0,
        points_per_object: 48,
        floor_points: 96,
    };
    let sample = generate_scene(1, &spec).expect("scene");
    let base_voxels = voxelize(&sample.points, config.base_voxel_size)
        .expect("voxelize")
        .len();
    let t = Instant::now();
    let result = grad_check_full(&sample, &config, &vocab, 1e-5, 16, 1);
    let elapsed = t.elapsed().as_secs_f64();
    match result {
        Ok(rep) => {
            let pass = rep.passes(1e-4) && elapsed < 300.0 && base_voxels <= 200;
            report(
                outcomes,
                "1 (gradient suite)",
                pass,
                format!(
                    "max rel err {:.3e} (worst {}), {} tensors, {base_voxels} base voxels, {elapsed:.1}s",
                    rep.max_rel_err,
                    rep.worst_tensor,
                    rep.tensors.len()
                ),
            );
        }
        Err(e) => report(outcomes, "1 (gradient suite)", false, format!("error: {e}")),
    }
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2(outcomes: &mut Vec<Outcome>) {
    let fx = fixture();
    let eval = evaluate(&fx.train_set, &fx.store, &fx.config, &fx.vocab).expect("eval");
    let hits = eval.ious.iter().filter(|&&v| v >= 0.5).count();

    // keep-recall of the target-level block against its supervision mask
    let mut kept_pos = 0usize;
    let mut total_pos = 0usize;
    for sample in &fx.train_set {
        let mut tape = Tape::new();
        let out = forward(
            &mut tape,
            &fx.store,
            &fx.config,
            &fx.vocab,
            &sample.points,
            &sample.description,
        )
        .expect("forward");
        let aux = out
            .tgp_aux
            .iter()
            .find(|a| !a.scene_kind)
            .expect("target-level block present");
        let host = SparseGrid::new(
            aux.coords.clone(),
            Matrix::zeros(aux.coords.len(), 0),
            aux.level,
            level_voxel_size(aux.level),
        )
        .expect("host grid");
        let mask = build_target_supervision(
            &sample.target_box(),
            &sample.relevant_boxes(),
            fx.config.cube_l,
            &host,
        );
        let probs = tape.value(aux.probs);
        let (kept, _) = voxground::tgp::keep_indices(
            probs.data(),
            fx.config.sigma_tar,
            fx.config.k_min,
        );
        let kept: BTreeSet<usize> = kept.into_iter().collect();
        for (i, &v) in mask.values().iter().enumerate() {
            if v == 1.0 {
                total_pos += 1;
                if kept.contains(&i) {
                    kept_pos += 1;
                }
            }
        }
    }
    let recall = kept_pos as f64 / total_pos.max(1) as f64;
    let pass = hits >= 15 && recall >= 0.95;
    report(
        outcomes,
        "2 (overfit benchmark)",
        pass,
        format!("train acc@0.5 {hits}/{TRAIN_SCENES}, target keep-recall {recall:.4}"),
    );
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3(outcomes: &mut Vec<Outcome>) {
    let fx = fixture();
    let baseline_cfg = ModelConfig {
        fusion_mode: FusionMode::Concat,
        addition_mode: AdditionMode::Full,
        cba_levels: vec![],
        ..fx.config.clone()
    };
    let baseline_store = init_params(&baseline_cfg, &fx.vocab).expect("init");
    let mut tgp_total = 0.0;
    let mut base_total = 0.0;
    for sample in &fx.train_set {
        let (_, trace) = infer(
            &sample.points,
            &sample.description,
            &fx.store,
            &fx.config,
            &fx.vocab,
        )
        .expect("infer");
        tgp_total += trace.u_voxels[0] as f64;
        let (_, trace) = infer(
            &sample.points,
            &sample.description,
            &baseline_store,
            &baseline_cfg,
            &fx.vocab,
        )
        .expect("infer");
        base_total += trace.u_voxels[0] as f64;
    }
    let ratio = tgp_total / base_total;
    report(
        outcomes,
        "3 (pruning effect)",
        ratio <= 0.30,
        format!(
            "mean U1 voxels: pruned {:.1} vs baseline {:.1} (ratio {ratio:.3})",
            tgp_total / TRAIN_SCENES as f64,
            base_total / TRAIN_SCENES as f64
        ),
    );
}

// ---------------------------------------------------------------- criterion 4

fn random_coords(rng: &mut ChaCha8Rng, n: usize, span: i32) -> Vec<Coord3> {
    let mut coords: Vec<Coord3> = (0..n)
        .map(|_| {
            Coord3::new(
                rng.random_range(-span..span),
                rng.random_range(-span..span),
                rng.random_range(-span..span),
            )
        })
        .collect();
    coords.sort_unstable();
    coords.dedup();
    coords
}

fn criterion_4(outcomes: &mut Vec<Outcome>) {
    let mut failures = Vec::new();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(40_000 + seed);
        let level = rng.random_range(2..=3);
        let n_coords = rng.random_range(2..50);
        let coords = random_coords(&mut rng, n_coords, 8);
        let grid = SparseGrid::new(
            coords.clone(),
            Matrix::zeros(coords.len(), 1),
            level,
            level_voxel_size(level),
        )
        .expect("grid");

        // generative upsampling coordinate set == brute-force {2c+o}
        let up =
            voxground::sparse::generative_upsample(&grid, &Matrix::zeros(8, 1)).expect("upsample");
        let mut expected: Vec<Coord3> = coords
            .iter()
            .flat_map(|c| {
                (0..2).flat_map(move |dx| {
                    (0..2).flat_map(move |dy| {
                        (0..2).map(move |dz| Coord3::new(2 * c.x + dx, 2 * c.y + dy, 2 * c.z + dz))
                    })
                })
            })
            .collect();
        expected.sort_unstable();
        expected.dedup();
        if up.coords() != &expected[..] {
            failures.push(format!("upsample seed {seed}"));
        }

        // align mask == set membership
        let n_other = rng.random_range(2..50);
        let other_coords = random_coords(&mut rng, n_other, 8);
        let other = SparseGrid::new(
            other_coords.clone(),
            Matrix::zeros(other_coords.len(), 1),
            level,
            level_voxel_size(level),
        )
        .expect("grid");
        let mask = coord_align_mask(&grid, &other).expect("align");
        let set: BTreeSet<Coord3> = coords.iter().copied().collect();
        for (i, &c) in other_coords.iter().enumerate() {
            if (mask.values()[i] == 1.0) != set.contains(&c) {
                failures.push(format!("align seed {seed} at {c:?}"));
                break;
            }
        }

        // supervision masks == brute-force cube containment
        let vs = grid.voxel_size;
        let objects: Vec<Box3D> = (0..rng.random_range(1..4))
            .map(|_| {
                Box3D::new(
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ],
                    [0.3, 0.25, 0.2],
                )
                .expect("box")
            })
            .collect();
        let l_cube = [3usize, 5, 7][rng.random_range(0..3)];
        let scene_mask = build_scene_supervision(&objects, l_cube, &grid);
        let half = (l_cube as i32 - 1) / 2;
        for (i, &c) in grid.coords().iter().enumerate() {
            let expect = objects.iter().any(|o| {
                let cell = [
                    (o.center[0] / vs).floor() as i32,
                    (o.center[1] / vs).floor() as i32,
                    (o.center[2] / vs).floor() as i32,
                ];
                (c.x - cell[0]).abs() <= half
                    && (c.y - cell[1]).abs() <= half
                    && (c.z - cell[2]).abs() <= half
            });
            if (scene_mask.values()[i] == 1.0) != expect {
                failures.push(format!("scene mask seed {seed}"));
                break;
            }
        }
        let target_mask = build_target_supervision(&objects[0], &objects[1..], l_cube, &grid);
        if target_mask != scene_mask {
            failures.push(format!("target/scene mask mismatch seed {seed}"));
        }

        // farthest point sampling == greedy max-min oracle
        let k = rng.random_range(1..=grid.len());
        let got = farthest_point_sample(&grid, k).expect("fps");
        let centers: Vec<[f64; 3]> = (0..grid.len()).map(|i| grid.voxel_center(i)).collect();
        let mut selected = vec![0usize];
        while selected.len() < k {
            let mut best = 0;
            let mut best_d = f64::NEG_INFINITY;
            for i in 0..centers.len() {
                let d = selected
                    .iter()
                    .map(|&s| {
                        (0..3)
                            .map(|a| (centers[i][a] - centers[s][a]).powi(2))
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min);
                if d > best_d {
                    best_d = d;
                    best = i;
                }
            }
            selected.push(best);
        }
        if got.selection_order != selected {
            failures.push(format!("fps seed {seed}"));
        }
    }
    report(
        outcomes,
        "4 (coordinate oracles)",
        failures.is_empty(),
        if failures.is_empty() {
            "100 seeded instances exact for upsample/align/supervision/fps".into()
        } else {
            format!("{} failures: {:?}", failures.len(), &failures[..failures.len().min(3)])
        },
    );
}

// ---------------------------------------------------------------- criterion 5

fn monte_carlo_iou(a: &Box3D, b: &Box3D, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = [
        a.min_corner()[0].min(b.min_corner()[0]),
        a.min_corner()[1].min(b.min_corner()[1]),
        a.min_corner()[2].min(b.min_corner()[2]),
    ];
    let hi = [
        a.max_corner()[0].max(b.max_corner()[0]),
        a.max_corner()[1].max(b.max_corner()[1]),
        a.max_corner()[2].max(b.max_corner()[2]),
    ];
    let mut inter = 0usize;
    let mut union = 0usize;
    for _ in 0..samples {
        let p = [
            rng.random_range(lo[0]..hi[0]),
            rng.random_range(lo[1]..hi[1]),
            rng.random_range(lo[2]..hi[2]),
        ];
        let in_a = a.contains(p);
        let in_b = b.contains(p);
        if in_a && in_b {
            inter += 1;
        }
        if in_a || in_b {
            union += 1;
        }
    }
    inter as f64 / union.max(1) as f64
}

fn criterion_5(outcomes: &mut Vec<Outcome>) {
    let mut worst_mc = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(50_000);
    for pair in 0..100u64 {
        let a = Box3D::new(
            [
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
            ],
            [
                rng.random_range(0.4..1.4),
                rng.random_range(0.4..1.4),
                rng.random_range(0.4..1.4),
            ],
        )
        .expect("box");
        let b = Box3D::new(
            [
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
            ],
            [
                rng.random_range(0.4..1.4),
                rng.random_range(0.4..1.4),
                rng.random_range(0.4..1.4),
            ],
        )
        .expect("box");
        let exact = iou3d(&a, &b);
        let mc = monte_carlo_iou(&a, &b, 1_000_000, 51_000 + pair);
        worst_mc = worst_mc.max((exact - mc).abs());
    }
    let mc_ok = worst_mc < 2e-3;

    let b = Box3D::new([0.3, -0.7, 0.2], [0.9, 0.4, 0.6]).expect("box");
    let diou_ok = diou_loss(&b, &b) == 0.0;

    let mut focal_worst = 0.0f64;
    for trial in 0..20 {
        let mut r = ChaCha8Rng::seed_from_u64(52_000 + trial);
        let probs: Vec<f64> = (0..40).map(|_| r.random_range(0.01..0.99)).collect();
        let labels: Vec<bool> = (0..40).map(|_| r.random_bool(0.3)).collect();
        let focal = focal_loss(&probs, &labels, 0.5, 0.0).expect("focal");
        let bce: f64 = probs
            .iter()
            .zip(&labels)
            .map(|(&p, &y)| if y { -p.ln() } else { -(1.0 - p).ln() })
            .sum::<f64>()
            / probs.len() as f64;
        focal_worst = focal_worst.max((focal - 0.5 * bce).abs());
    }
    let focal_ok = focal_worst < 1e-9;

    let mut pou_worst = 0.0f64;
    for seed in 0..50u64 {
        let mut r = ChaCha8Rng::seed_from_u64(53_000 + seed);
        let n_coords = r.random_range(4..40);
        let coords = random_coords(&mut r, n_coords, 5);
        let queries = random_coords(&mut r, 10, 5);
        let plan = interpolation_plan(&coords, &queries);
        for q in 0..queries.len() {
            let w: f64 = plan
                .mix
                .entries
                .iter()
                .filter(|&&(o, _, _)| o == q)
                .map(|&(_, _, w)| w)
                .sum();
            if !plan.misses[q] {
                pou_worst = pou_worst.max((w - 1.0).abs());
            }
        }
    }
    let pou_ok = pou_worst < 1e-9;

    let pass = mc_ok && diou_ok && focal_ok && pou_ok;
    report(
        outcomes,
        "5 (numeric oracles)",
        pass,
        format!(
            "MC-IoU worst |err| {worst_mc:.2e}, diou(b,b)={}, focal-vs-BCE worst {focal_worst:.2e}, partition-of-unity worst {pou_worst:.2e}",
            diou_loss(&b, &b)
        ),
    );
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6(outcomes: &mut Vec<Outcome>) {
    let vocab = Vocabulary::builtin();
    let spec = bench_spec();
    let base_cfg = ModelConfig {
        fusion_mode: FusionMode::Concat,
        addition_mode: AdditionMode::Full,
        cba_levels: vec![],
        ..bench_config()
    };
    let tsp_cfg = ModelConfig {
        sigma_sce: 0.0,
        sigma_tar: 0.0,
        tau: 0.0,
        ..bench_config()
    };
    let base_store = init_params(&base_cfg, &vocab).expect("init");
    let tsp_store = init_params(&tsp_cfg, &vocab).expect("init");
    let mut mismatches = 0usize;
    for seed in 0..20u64 {
        let sample = generate_scene(60_000 + seed, &spec).expect("scene");
        let mut tape_a = Tape::new();
        let base = forward(
            &mut tape_a,
            &base_store,
            &base_cfg,
            &vocab,
            &sample.points,
            &sample.description,
        )
        .expect("baseline forward");
        let mut tape_b = Tape::new();
        let tsp = forward(
            &mut tape_b,
            &tsp_store,
            &tsp_cfg,
            &vocab,
            &sample.points,
            &sample.description,
        )
        .expect("tsp forward");
        for ((na, ca), (nb, cb)) in base.stage_coords.iter().zip(&tsp.stage_coords) {
            if na != nb || ca != cb {
                mismatches += 1;
            }
        }
    }
    report(
        outcomes,
        "6 (no-prune limit)",
        mismatches == 0,
        format!("20 scenes, stage-wise coordinate sets equal (mismatched stages: {mismatches})"),
    );
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7(outcomes: &mut Vec<Outcome>) {
    let fx = fixture();

    // (a) trained full model vs trained concat baseline on held-out scenes
    let baseline_cfg = ModelConfig {
        fusion_mode: FusionMode::Concat,
        addition_mode: AdditionMode::Full,
        cba_levels: vec![],
        ..fx.config.clone()
    };
    let baseline_store = train_model(&baseline_cfg, &fx.vocab, &fx.train_set, TRAIN_STEPS);
    let full_eval = evaluate(&fx.heldout, &fx.store, &fx.config, &fx.vocab).expect("eval");
    let base_eval = evaluate(&fx.heldout, &baseline_store, &baseline_cfg, &fx.vocab).expect("eval");
    let acc_ok = full_eval.acc_at_50 >= base_eval.acc_at_50;

    // (b) simplified vs original block wall time, and (c) attention-without-
    // pruning FLOPs strictly above the pruning pipeline's, per scene
    let timing_scenes = generate_dataset(70_000, 100, &bench_spec()).expect("scenes");
    let configs = vec![
        ("tgp".to_string(), ModelConfig { fusion_mode: FusionMode::Tgp, ..fx.config.clone() }),
        (
            "simplified_tgp".to_string(),
            ModelConfig { fusion_mode: FusionMode::SimplifiedTgp, ..fx.config.clone() },
        ),
        (
            "attention".to_string(),
            ModelConfig {
                fusion_mode: FusionMode::Attention,
                addition_mode: AdditionMode::Full,
                cba_levels: vec![],
                ..fx.config.clone()
            },
        ),
    ];
    let prof = profile(&timing_scenes, &fx.store, &configs, &fx.vocab).expect("profile");
    let median = |xs: &[f64]| {
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let tgp_ms = median(&prof.per_scene_ms["tgp"]);
    let simp_ms = median(&prof.per_scene_ms["simplified_tgp"]);
    let time_ok = simp_ms <= tgp_ms;
    let flops_ok = prof.per_scene_flops["attention"]
        .iter()
        .zip(prof.per_scene_flops["tgp"].iter())
        .all(|(a, t)| a > t)
        && prof.per_scene_flops["attention"]
            .iter()
            .zip(prof.per_scene_flops["simplified_tgp"].iter())
            .all(|(a, s)| a > s);

    let pass = acc_ok && time_ok && flops_ok;
    report(
        outcomes,
        "7 (ablation ordering)",
        pass,
        format!(
            "held-out acc@0.5 full {:.3} vs baseline {:.3}; median ms simplified {simp_ms:.2} vs original {tgp_ms:.2}; attention FLOPs strictly higher on all 100 scenes: {flops_ok}",
            full_eval.acc_at_50, base_eval.acc_at_50
        ),
    );
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8(outcomes: &mut Vec<Outcome>) {
    let vocab = Vocabulary::builtin();
    let config = bench_config();
    let spec = bench_spec();
    let data = generate_dataset(80_000, 4, &spec).expect("scenes");

    // bit-exact loss trajectory across two runs
    let run = || -> Vec<u64> {
        let mut store = init_params(&config, &vocab).expect("init");
        let mut moments = AdamMoments::default();
        let mut losses = Vec::new();
        for t in 1..=10u64 {
            let sample = &data[(t as usize - 1) % data.len()];
            let report = train_step(
                std::slice::from_ref(sample),
                &mut store,
                &mut moments,
                &AdamConfig::default(),
                &config,
                &vocab,
                t,
            )
            .expect("train");
            losses.push(report.total.to_bits());
        }
        losses
    };
    let deterministic = run() == run();

    // dataset round-trip: bitwise points, exact metadata
    let dir = tempfile::tempdir().expect("tmp");
    let scenes_dir = dir.path().join("scenes");
    write_dataset(&data, &scenes_dir).expect("write");
    let loaded = read_dataset(&scenes_dir).expect("read");
    let dataset_ok = loaded == data;

    // checkpoint round-trip reproduces the forward loss bit-exactly
    let store = init_params(&config, &vocab).expect("init");
    let ckpt = dir.path().join("model.ckpt");
    checkpoint::save(&store, &ckpt).expect("save");
    let restored = checkpoint::load(&ckpt).expect("load");
    let loss_of = |s: &ParamStore| -> u64 {
        let mut tape = Tape::new();
        let out = forward(
            &mut tape,
            s,
            &config,
            &vocab,
            &data[0].points,
            &data[0].description,
        )
        .expect("forward");
        let (loss, _) =
            voxground::pipeline::build_loss(&mut tape, &out, &data[0], &config).expect("loss");
        tape.value(loss).as_scalar().expect("scalar").to_bits()
    };
    let ckpt_ok = loss_of(&store) == loss_of(&restored);

    let pass = deterministic && dataset_ok && ckpt_ok;
    report(
        outcomes,
        "8 (determinism & IO)",
        pass,
        format!(
            "loss trajectory bit-exact: {deterministic}, dataset round-trip: {dataset_ok}, checkpoint loss bit-exact: {ckpt_ok}"
        ),
    );
}

#[test]
fn acceptance() {
    let mut outcomes = Vec::new();
    criterion_4(&mut outcomes);
    criterion_5(&mut outcomes);
    criterion_6(&mut outcomes);
    criterion_8(&mut outcomes);
    criterion_1(&mut outcomes);
    criterion_2(&mut outcomes);
    criterion_3(&mut outcomes);
    criterion_7(&mut outcomes);

    let failed: Vec<&Outcome> = outcomes.iter().filter(|o| !o.pass).collect();
    for o in &outcomes {
        // repeat the summary at the end for scrollback convenience
        println!(
            "[acceptance] {}: {}",
            o.name,
            if o.pass { "PASS" } else { &o.detail }
        );
    }
    assert!(
        failed.is_empty(),
        "{} criterion(s) failed: {:?}",
        failed.len(),
        failed.iter().map(|o| o.name).collect::<Vec<_>>()
    );
}
