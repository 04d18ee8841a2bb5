//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them).
//!
//! Criterion 7 trains on MovieLens 1M, which is not redistributable with
//! this repository; point `MOVIELENS_1M_DIR` at an unpacked copy (or place
//! it under `data/ml-1m/`) to run the full check. Without the dataset the
//! test still drives the complete training pipeline on synthetic data and
//! checks that it learns (held-out AUC above chance), but reports the
//! paper-value window as skipped.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lrfwfm::data::{self, Auction, FeatureRef, Fragment, RawDataset, Sample};
use lrfwfm::decompose::{self, PruneBudget};
use lrfwfm::engine::{per_item_op_count, Engine, OpCounter};
use lrfwfm::linalg::{sym_eig, trace_form, Mat};
use lrfwfm::model::{
    forward, gather_field_vectors, linear_term, materialize_r, num_pairs, pairwise_bruteforce,
    pairwise_dense, pairwise_dplr_fast, pairwise_fm_fast, pairwise_pruned, DenseSym, Dplr,
    FieldVectors, InteractionSpec, ModelParams, PrunedSparse, VariantKind,
};
use lrfwfm::schema::{FieldDef, FieldKind, FieldSchema, Role};
use lrfwfm::serialize;
use lrfwfm::train::{self, evaluate, loss_and_grad, LossKind, TrainConfig};

const VARIANTS: [&str; 4] = ["fm", "fwfm", "pruned", "dplr"];

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn out_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).expect("create output dir");
    dir
}

fn synthetic_schema(m_c: usize, m: usize, vocab: u32) -> FieldSchema {
    let fields = (0..m)
        .map(|i| {
            let role = if i < m_c { Role::Context } else { Role::Item };
            let mut def = FieldDef::new(format!("f{i}"), role, FieldKind::CategoricalSingle);
            def.vocab_size = vocab;
            for t in 1..vocab {
                def.tokens.insert(format!("tok{t}"), t);
            }
            def
        })
        .collect();
    FieldSchema::new(fields).expect("valid synthetic schema")
}

fn random_model(
    rng: &mut ChaCha8Rng,
    m_c: usize,
    m: usize,
    k: usize,
    variant: &str,
    rank: usize,
) -> ModelParams {
    let vocab = 4u32;
    let schema = synthetic_schema(m_c, m, vocab);
    let n = schema.total_features() as usize;
    let b0 = rng.gen_range(-0.5..0.5) as f32;
    let b: Vec<f32> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let w: Vec<f32> = (0..n * k).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let interaction = match variant {
        "fm" => InteractionSpec::FmImplicit,
        "fwfm" => {
            let tri: Vec<f32> = (0..num_pairs(m)).map(|_| rng.gen_range(-1.0..1.0)).collect();
            InteractionSpec::DenseSym(DenseSym::from_upper(m, tri).expect("triangle"))
        }
        "pruned" => {
            let mut entries = Vec::new();
            for i in 0..m {
                for j in (i + 1)..m {
                    if rng.gen_bool(0.5) {
                        entries.push((i as u32, j as u32, rng.gen_range(-1.0..1.0)));
                    }
                }
            }
            InteractionSpec::PrunedSparse(PrunedSparse::new(m, entries).expect("entries"))
        }
        "dplr" => {
            let u: Vec<f32> = (0..rank * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let e: Vec<f32> = (0..rank).map(|_| rng.gen_range(-1.0..1.0)).collect();
            InteractionSpec::Dplr(Dplr::new(rank, m, u, e).expect("dplr"))
        }
        _ => unreachable!(),
    };
    ModelParams::new(schema, k, b0, b, w, interaction).expect("model")
}

/// Fragment over fields lo..hi; roughly every fourth field gets three
/// weighted values so multi-value handling is exercised too.
fn random_fragment(rng: &mut ChaCha8Rng, params: &ModelParams, lo: usize, hi: usize) -> Fragment {
    let mut entries = Vec::new();
    for f in lo..hi {
        let vocab = params.schema.field(f).vocab_size;
        if rng.gen_bool(0.25) {
            let q = 3;
            for _ in 0..q {
                entries.push(FeatureRef {
                    field: f as u16,
                    id: rng.gen_range(0..vocab),
                    weight: 1.0 / q as f64,
                });
            }
        } else {
            entries.push(FeatureRef {
                field: f as u16,
                id: rng.gen_range(0..vocab),
                weight: 1.0,
            });
        }
    }
    Fragment { entries }
}

fn random_auction(rng: &mut ChaCha8Rng, params: &ModelParams, items: usize) -> Auction {
    let m = params.num_fields();
    let m_c = params.num_context();
    Auction {
        context: random_fragment(rng, params, 0, m_c),
        items: (0..items).map(|_| random_fragment(rng, params, m_c, m)).collect(),
    }
}

fn random_field_vectors(rng: &mut ChaCha8Rng, m: usize, k: usize) -> FieldVectors {
    FieldVectors::from_rows(m, k, (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

// -------------------------------------------------------------------------
// criterion 1: fast paths and cached auctions equal the brute-force oracle
// -------------------------------------------------------------------------

#[test]
fn criterion_1_equivalence_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let mut checked = 0usize;
    for round in 0..250 {
        for variant in VARIANTS {
            let m = rng.gen_range(2..=12);
            let m_c = rng.gen_range(1..m);
            let k = rng.gen_range(1..=8);
            let rank = rng.gen_range(1..=4);
            let params = random_model(&mut rng, m_c, m, k, variant, rank);

            // fast pairwise op against the materialized double loop
            let auction = random_auction(&mut rng, &params, 3);
            let joined = Sample::join_fragments(&auction.context, &auction.items[0]);
            let v = gather_field_vectors(&joined, &params).expect("gather");
            let brute = pairwise_bruteforce(&v, &params.interaction).expect("oracle");
            let fast = match &params.interaction {
                InteractionSpec::FmImplicit => pairwise_fm_fast(&v),
                InteractionSpec::DenseSym(d) => pairwise_dense(&v, d).expect("dense"),
                InteractionSpec::PrunedSparse(p) => pairwise_pruned(&v, p).expect("pruned"),
                InteractionSpec::Dplr(d) => pairwise_dplr_fast(&v, d).expect("dplr"),
            };
            assert!(
                close(fast, brute, 1e-9),
                "round {round} {variant}: fast {fast} vs brute {brute}"
            );

            // cached auction scores against linear + brute force per item
            let engine = Engine::new(&params);
            let mut ops = OpCounter::new();
            let scores = engine.score_auction(&auction, &mut ops).expect("auction");
            for (item, score) in auction.items.iter().zip(&scores) {
                let joined = Sample::join_fragments(&auction.context, item);
                let vi = gather_field_vectors(&joined, &params).expect("gather");
                let want = linear_term(&joined, &params).expect("linear")
                    + pairwise_bruteforce(&vi, &params.interaction).expect("oracle");
                assert!(
                    close(*score, want, 1e-9),
                    "round {round} {variant}: cached {score} vs oracle {want}"
                );
            }
            checked += 1;
        }
    }
    assert!(checked >= 1000);
    println!("criterion 1: PASS - {checked} random instances, fast paths and cached auctions match the brute-force oracle at 1e-9");
}

// -------------------------------------------------------------------------
// criterion 2: trace identity, low-rank proposition, FM matrix spectrum
// -------------------------------------------------------------------------

#[test]
fn criterion_2_identity_and_proposition_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);

    // trace identity: double sum over row inner products = trace(A^T Q A)
    for _ in 0..1000 {
        let m = rng.gen_range(1..=10);
        let k = rng.gen_range(1..=8);
        let a = Mat::from_vec(m, k, (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .expect("A");
        let q = Mat::from_vec(m, m, (0..m * m).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .expect("Q");
        let mut double_sum = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                let dot: f64 = a.row(i).iter().zip(a.row(j)).map(|(x, y)| x * y).sum();
                double_sum += dot * q.get(i, j);
            }
        }
        let tf = trace_form(&a, &q).expect("trace form");
        assert!((double_sum - tf).abs() <= 1e-9 * (1.0 + tf.abs()), "{double_sum} vs {tf}");
    }

    // low-rank proposition: full pairwise sum = diagonal part + row norms of UV
    for _ in 0..1000 {
        let m = rng.gen_range(2..=10);
        let k = rng.gen_range(1..=8);
        let rank = rng.gen_range(1..=4);
        let u: Vec<f32> = (0..rank * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let e: Vec<f32> = (0..rank).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dplr = Dplr::new(rank, m, u, e).expect("dplr");
        let v = random_field_vectors(&mut rng, m, k);
        let full_sum =
            trace_form(&v.as_mat(), &materialize_r(&InteractionSpec::Dplr(dplr.clone()), m).expect("R"))
                .expect("trace");
        let fast = 2.0 * pairwise_dplr_fast(&v, &dplr).expect("fast");
        assert!(close(fast, full_sum, 1e-9), "{fast} vs {full_sum}");
    }

    // all-ones off-diagonal matrix: eigenvalues m-1 and -1 repeated
    for m in 3..=10 {
        let r = materialize_r(&InteractionSpec::FmImplicit, m).expect("R");
        let eig = sym_eig(&r).expect("eig");
        assert!(close(eig.eigenvalues[0], (m - 1) as f64, 1e-9), "m={m}: {:?}", eig.eigenvalues);
        for i in 1..m {
            assert!(close(eig.eigenvalues[i], -1.0, 1e-9), "m={m}: {:?}", eig.eigenvalues);
        }
    }

    println!("criterion 2: PASS - trace identity and low-rank proposition hold on 1000 instances each; all-ones interaction spectrum is {{m-1, -1, ...}} for m in 3..=10");
}

// -------------------------------------------------------------------------
// criterion 3: rank-1 all-ones decomposition reproduces the plain FM
// -------------------------------------------------------------------------

#[test]
fn criterion_3_dplr_equals_fm_special_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    for _ in 0..1000 {
        let m = rng.gen_range(2..=12);
        let k = rng.gen_range(1..=8);
        let v = random_field_vectors(&mut rng, m, k);
        let dplr = Dplr::new(1, m, vec![1.0; m], vec![1.0]).expect("dplr");
        let via_dplr = pairwise_dplr_fast(&v, &dplr).expect("dplr fast");
        let via_fm = pairwise_fm_fast(&v);
        assert!(close(via_dplr, via_fm, 1e-9), "{via_dplr} vs {via_fm}");
    }

    // same equivalence through the cached engines
    for _ in 0..100 {
        let m = rng.gen_range(2..=10);
        let m_c = rng.gen_range(1..m);
        let k = rng.gen_range(1..=6);
        let mut params = random_model(&mut rng, m_c, m, k, "fm", 0);
        let auction = random_auction(&mut rng, &params, 4);
        let mut ops = OpCounter::new();
        let fm_scores = Engine::new(&params).score_auction(&auction, &mut ops).expect("fm");
        params.interaction =
            InteractionSpec::Dplr(Dplr::new(1, m, vec![1.0; m], vec![1.0]).expect("dplr"));
        let dplr_scores = Engine::new(&params).score_auction(&auction, &mut ops).expect("dplr");
        for (a, b) in fm_scores.iter().zip(&dplr_scores) {
            assert!(close(*a, *b, 1e-9), "{a} vs {b}");
        }
    }
    println!("criterion 3: PASS - rank-1 all-ones low-rank part reproduces FM scores at 1e-9, both as a pairwise op and through the cached engine");
}

// -------------------------------------------------------------------------
// criterion 4: analytic gradients match central finite differences
// -------------------------------------------------------------------------

#[test]
fn criterion_4_gradient_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    let mut points = 0usize;
    for variant in VARIANTS {
        for trial in 0..25 {
            let m = rng.gen_range(2..=8);
            let m_c = rng.gen_range(1..m);
            let k = rng.gen_range(1..=4);
            let rank = rng.gen_range(1..=3);
            let params = random_model(&mut rng, m_c, m, k, variant, rank);
            let loss = if trial % 2 == 0 { LossKind::LogLoss } else { LossKind::Mse };
            let batch: Vec<Sample> = (0..4)
                .map(|_| {
                    let auction = random_auction(&mut rng, &params, 1);
                    let mut s = Sample::join_fragments(&auction.context, &auction.items[0]);
                    s.label = match loss {
                        LossKind::LogLoss => {
                            if rng.gen_bool(0.5) {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        LossKind::Mse => rng.gen_range(-1.0..1.0),
                    };
                    s
                })
                .collect();
            let (_, grads) = loss_and_grad(&batch, &params, loss).expect("grads");

            // flatten the sparse gradient into parameter order
            let n = params.n();
            let mut flat = vec![0.0f64; params.param_count()];
            flat[0] = grads.b0;
            for &(id, g) in &grads.b {
                flat[1 + id as usize] = g;
            }
            for (id, row) in &grads.w {
                for (c, &g) in row.iter().enumerate() {
                    flat[1 + n + *id as usize * k + c] = g;
                }
            }
            let base = 1 + n + n * k;
            match &grads.interaction {
                train::InterGrad::None => {}
                train::InterGrad::Dense(g) | train::InterGrad::Pruned(g) => {
                    flat[base..base + g.len()].copy_from_slice(g);
                }
                train::InterGrad::Dplr { u, e } => {
                    flat[base..base + u.len()].copy_from_slice(u);
                    flat[base + u.len()..base + u.len() + e.len()].copy_from_slice(e);
                }
            }

            for p in 0..params.param_count() {
                let h = 1e-4f32;
                let mut up = params.clone();
                up.set_flat(p, params.get_flat(p) + h);
                let mut down = params.clone();
                down.set_flat(p, params.get_flat(p) - h);
                let (lu, _) = loss_and_grad(&batch, &up, loss).expect("loss+");
                let (ld, _) = loss_and_grad(&batch, &down, loss).expect("loss-");
                let step = up.get_flat(p) as f64 - down.get_flat(p) as f64;
                let fd = (lu - ld) / step;
                let analytic = flat[p];
                assert!(
                    (analytic - fd).abs() <= 1e-4 * (1.0 + analytic.abs().max(fd.abs())),
                    "{variant} point {points} param {p}: analytic {analytic} vs fd {fd}"
                );
            }
            points += 1;
        }
    }
    assert_eq!(points, 100);
    println!("criterion 4: PASS - analytic gradients match central differences at 1e-4 for all four variants over {points} random parameter points");
}

// -------------------------------------------------------------------------
// criterion 5: exact cost model of the cached engine
// -------------------------------------------------------------------------

#[test]
fn criterion_5_cost_model() {
    // Per-item multiply-accumulate count for a fixed item block must be
    // bit-identical no matter how many context fields the model carries
    // (the largest configuration is the 40-field protocol).
    let item_fields = 10;
    let context_counts = [10usize, 15, 20, 25, 30];
    let k = 8;
    for rank in [1usize, 2, 3] {
        let counts: Vec<u64> = context_counts
            .iter()
            .map(|&m_c| {
                let schema = synthetic_schema(m_c, m_c + item_fields, 3);
                let params =
                    ModelParams::init(schema, k, VariantKind::Dplr { rank }, 7).expect("init");
                assert_eq!(params.num_fields(), m_c + item_fields);
                per_item_op_count(&params).expect("ops")
            })
            .collect();
        assert!(
            counts.windows(2).all(|w| w[0] == w[1]),
            "rank {rank}: per-item ops vary with context count: {counts:?}"
        );
    }

    // Doubling the rank at the 40-field configuration costs at most 2.2x.
    let schema40 = synthetic_schema(30, 40, 3);
    for rank in [1usize, 2, 3] {
        let a = per_item_op_count(
            &ModelParams::init(schema40.clone(), k, VariantKind::Dplr { rank }, 7).expect("init"),
        )
        .expect("ops");
        let b = per_item_op_count(
            &ModelParams::init(schema40.clone(), k, VariantKind::Dplr { rank: 2 * rank }, 7)
                .expect("init"),
        )
        .expect("ops");
        assert!(
            (b as f64) <= 2.2 * a as f64,
            "rank {rank} -> {}: ops {a} -> {b} grow by more than 2.2x",
            2 * rank
        );
    }

    // Wall times are hardware-bound: emit a small grid for inspection only.
    let grid = lrfwfm::bench::BenchGrid {
        m: 40,
        context_counts: vec![10, 30],
        ranks: vec![1, 2],
        auction_sizes: vec![10, 50],
        repetitions: 3,
        auctions_per_measurement: 10,
        k,
        seed: 5,
    };
    let records = lrfwfm::bench::run_grid(&grid).expect("bench grid");
    let dir = out_dir();
    let records_path = dir.join("bench_records.csv");
    std::fs::write(&records_path, lrfwfm::bench::records_csv(&records)).expect("write records");
    let summary = lrfwfm::bench::summarize(&records).expect("summary");
    let summary_path = dir.join("bench_summary.csv");
    std::fs::write(&summary_path, lrfwfm::bench::summary_csv(&summary)).expect("write summary");

    println!("criterion 5: PASS - per-item op count is bit-identical across context counts 10..30 at fixed item block, and rank doubling grows it by at most 2.2x; wall times emitted to {} (not asserted)", records_path.display());
}

// -------------------------------------------------------------------------
// criterion 6: pruning budgets reproduce the published sparsity column
// -------------------------------------------------------------------------

#[test]
fn criterion_6_sparsity_accounting() {
    let cases: [(usize, [f64; 5]); 2] = [
        (39, [5.4, 10.8, 16.2, 21.6, 27.0]),
        (33, [6.4, 12.9, 19.3, 25.8, 32.2]),
    ];
    for (m, expected) in cases {
        let mut rng = ChaCha8Rng::seed_from_u64(m as u64);
        let tri: Vec<f32> = (0..num_pairs(m)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dense = DenseSym::from_upper(m, tri).expect("dense");
        for (rank, want) in (1..=5).zip(expected) {
            let budget = PruneBudget::RankEquivalent(rank);
            let pruned = decompose::prune(&dense, &budget).expect("prune");
            assert_eq!(pruned.keep_count(), rank * (m + 1));
            let got = decompose::sparsity_percent(pruned.keep_count(), m);
            assert!(
                (got - want).abs() <= 0.05,
                "m={m} rank={rank}: sparsity {got:.3}% vs published {want}%"
            );
        }
    }
    println!("criterion 6: PASS - rank-equivalent budgets at m=39 and m=33 reproduce the published sparsity percentages within 0.05");
}

// -------------------------------------------------------------------------
// criterion 7: desk-scale training
// -------------------------------------------------------------------------

fn movielens_dir() -> Option<PathBuf> {
    if let Ok(dir) = std::env::var("MOVIELENS_1M_DIR") {
        let p = PathBuf::from(dir);
        if p.join("ratings.dat").exists() {
            return Some(p);
        }
    }
    let fallback = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-1m");
    if fallback.join("ratings.dat").exists() {
        return Some(fallback);
    }
    None
}

/// Synthetic binary CTR dataset with planted field interactions, used when
/// the real dataset is not mounted: the pipeline must at least learn signal.
fn synthetic_ctr_rows(n: usize, seed: u64) -> (FieldSchema, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fields: Vec<FieldDef> = Vec::new();
    for i in 0..3 {
        fields.push(FieldDef::new(format!("c{i}"), Role::Context, FieldKind::CategoricalSingle));
    }
    for i in 0..3 {
        fields.push(FieldDef::new(format!("i{i}"), Role::Item, FieldKind::CategoricalSingle));
    }
    let schema = FieldSchema::new(fields).expect("schema");
    let vocab = 20i64;
    let mut lines = Vec::with_capacity(n);
    for _ in 0..n {
        let ids: Vec<i64> = (0..6).map(|_| rng.gen_range(0..vocab)).collect();
        // planted logit: aligned context/item ids attract clicks
        let logit = 0.9 * ((ids[0] - ids[3]).abs() as f64 * -0.2 + 1.0)
            + 0.6 * if ids[1] % 3 == ids[4] % 3 { 1.0 } else { -1.0 }
            - 0.4;
        let p = 1.0 / (1.0 + (-logit).exp());
        let label = u8::from(rng.gen_bool(p));
        let cells: Vec<String> = ids.iter().map(|i| format!("v{i}")).collect();
        lines.push(format!("{label}\t{}", cells.join("\t")));
    }
    (schema, lines)
}

/// Train one variant over a learning-rate grid and return the parameters
/// with the best validation metric.
fn fit_variant(
    variant: &str,
    rank: usize,
    schema: &FieldSchema,
    train_set: &[Sample],
    val_set: &[Sample],
    k: usize,
    epochs: usize,
    loss: LossKind,
    lr_grid: &[f64],
) -> ModelParams {
    let mut best: Option<(f64, ModelParams)> = None;
    for &lr in lr_grid {
        let mut config = TrainConfig::new(loss, lr, epochs, 0);
        config.batch_size = 256;
        let outcome = match variant {
            "pruned" => train::train_pruned(
                train_set,
                val_set,
                schema.clone(),
                k,
                &PruneBudget::RankEquivalent(rank),
                &config,
                &mut |_| {},
            )
            .expect("train pruned"),
            _ => {
                let kind = match variant {
                    "fm" => VariantKind::Fm,
                    "fwfm" => VariantKind::Fwfm,
                    "dplr" => VariantKind::Dplr { rank },
                    _ => unreachable!(),
                };
                let init = ModelParams::init(schema.clone(), k, kind, 0).expect("init");
                train::train(train_set, val_set, init, &config, &mut |_| {}).expect("train")
            }
        };
        let report = evaluate(val_set, &outcome.params, loss).expect("eval");
        let val = match loss {
            LossKind::Mse => report.mse.expect("mse"),
            LossKind::LogLoss => report.logloss.expect("logloss"),
        };
        if best.as_ref().is_none_or(|(v, _)| val < *v) {
            best = Some((val, outcome.params));
        }
    }
    best.expect("at least one learning rate").1
}

#[test]
fn criterion_7_desk_scale_training() {
    match movielens_dir() {
        Some(dir) => {
            let (declared, lines) = data::ingest_movielens_1m(&dir).expect("ingest");
            let dataset = RawDataset::new(lines, '\t');
            let split = data::split(dataset.len(), 0).expect("split");
            let schema =
                data::build_vocab(&dataset, &split.train, &declared, 10).expect("vocab");
            let train_set = data::encode_rows(&dataset, &split.train, &schema).expect("encode");
            let val_set =
                data::encode_rows(&dataset, &split.validation, &schema).expect("encode");
            let test_set = data::encode_rows(&dataset, &split.test, &schema).expect("encode");
            let lr_grid = [1e-3, 3e-4, 1e-4];
            let epochs = 8;

            let targets =
                [("fm", 0.7431), ("fwfm", 0.7407), ("dplr", 0.7418), ("pruned", 0.7464)];
            let mut measured = Vec::new();
            for (variant, target) in targets {
                let params = fit_variant(
                    variant,
                    2,
                    &schema,
                    &train_set,
                    &val_set,
                    8,
                    epochs,
                    LossKind::Mse,
                    &lr_grid,
                );
                let test_mse =
                    evaluate(&test_set, &params, LossKind::Mse).expect("eval").mse.expect("mse");
                println!("criterion 7: {variant} test mse {test_mse:.4} (target {target:.4})");
                assert!(
                    (test_mse - target).abs() <= 0.05,
                    "{variant}: test MSE {test_mse:.4} outside {target:.4} +- 0.05"
                );
                measured.push((variant, test_mse));
            }
            let dplr_mse = measured.iter().find(|(v, _)| *v == "dplr").expect("dplr").1;
            let pruned_mse = measured.iter().find(|(v, _)| *v == "pruned").expect("pruned").1;
            assert!(
                dplr_mse <= pruned_mse + 0.01,
                "rank-2 decomposition ({dplr_mse:.4}) must not trail the pruned model ({pruned_mse:.4}) by more than 0.01"
            );
            println!("criterion 7: PASS - MovieLens test MSE within 0.05 of the published values for all four variants, and the rank-2 model does not trail the pruned one by more than 0.01");
        }
        None => {
            // Full pipeline smoke on synthetic data: ingest-shaped rows,
            // split, vocabulary, training, evaluation; must beat chance.
            let (declared, lines) = synthetic_ctr_rows(6000, 0x51);
            let dataset = RawDataset::new(lines, '\t');
            let split = data::split(dataset.len(), 0).expect("split");
            let schema = data::build_vocab(&dataset, &split.train, &declared, 10).expect("vocab");
            let train_set = data::encode_rows(&dataset, &split.train, &schema).expect("encode");
            let val_set =
                data::encode_rows(&dataset, &split.validation, &schema).expect("encode");
            let test_set = data::encode_rows(&dataset, &split.test, &schema).expect("encode");
            for (variant, rank) in [("fm", 0), ("fwfm", 0), ("dplr", 2), ("pruned", 2)] {
                let params = fit_variant(
                    variant,
                    rank,
                    &schema,
                    &train_set,
                    &val_set,
                    4,
                    3,
                    LossKind::LogLoss,
                    &[1e-2],
                );
                let report = evaluate(&test_set, &params, LossKind::LogLoss).expect("eval");
                let auc = report.auc.expect("both classes present");
                assert!(auc > 0.5, "{variant}: held-out AUC {auc:.4} is not above chance");
            }
            println!("criterion 7: SKIP(paper values) / PASS(pipeline smoke) - MovieLens 1M not mounted (set MOVIELENS_1M_DIR or unpack to data/ml-1m); the full pipeline was exercised on synthetic data and every variant scored held-out AUC above 0.5");
        }
    }
}

// -------------------------------------------------------------------------
// criterion 8: post-hoc analysis
// -------------------------------------------------------------------------

#[test]
fn criterion_8_posthoc_analysis() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC8);

    // objective never increases over 200 random instances
    for _ in 0..200 {
        let m = rng.gen_range(3..=20);
        let rank = rng.gen_range(1..=5).min(m);
        let tri: Vec<f32> = (0..num_pairs(m)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dense = DenseSym::from_upper(m, tri).expect("dense");
        let fit = decompose::posthoc_dplr(&dense, rank, 40, 1e-12).expect("fit");
        for w in fit.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "objective increased: {:?}", fit.objective_history);
        }
    }

    // exact recovery of the all-ones interaction matrix at rank 1
    for m in [3usize, 6, 10] {
        let fm = DenseSym::from_upper(m, vec![1.0; num_pairs(m)]).expect("dense");
        let fit = decompose::posthoc_dplr(&fm, 1, 300, 1e-14).expect("fit");
        assert!(fit.frobenius_error <= 1e-8, "m={m}: error {}", fit.frobenius_error);
    }

    // signed trace inequality on 500 random instances
    for _ in 0..500 {
        let m = rng.gen_range(3..=10);
        let k = rng.gen_range(1..=6);
        let tri: Vec<f32> = (0..num_pairs(m)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dense = DenseSym::from_upper(m, tri).expect("dense");
        let approx: InteractionSpec = if rng.gen_bool(0.5) {
            let keep = rng.gen_range(0..=num_pairs(m));
            InteractionSpec::PrunedSparse(
                decompose::prune(&dense, &PruneBudget::KeepCount(keep)).expect("prune"),
            )
        } else {
            let rank = rng.gen_range(1..=3);
            let fit = decompose::posthoc_dplr(&dense, rank, 20, 1e-10).expect("fit");
            InteractionSpec::Dplr(fit.to_model_form(m).expect("model form"))
        };
        let v = random_field_vectors(&mut rng, m, k);
        let report = decompose::error_spectrum(&dense, &approx, &v).expect("spectrum");
        assert!(
            report.exact_trace <= report.bound + 1e-9,
            "trace {} exceeds bound {}",
            report.exact_trace,
            report.bound
        );
    }

    // error-spectrum report from a desk-scale trained dense model: emitted,
    // not asserted beyond its documented fields
    let (declared, lines) = synthetic_ctr_rows(4000, 0x58);
    let dataset = RawDataset::new(lines, '\t');
    let split = data::split(dataset.len(), 0).expect("split");
    let schema = data::build_vocab(&dataset, &split.train, &declared, 10).expect("vocab");
    let train_set = data::encode_rows(&dataset, &split.train, &schema).expect("encode");
    let val_set = data::encode_rows(&dataset, &split.validation, &schema).expect("encode");
    let mut config = TrainConfig::new(LossKind::LogLoss, 1e-2, 2, 0);
    config.batch_size = 128;
    let init = ModelParams::init(schema.clone(), 4, VariantKind::Fwfm, 0).expect("init");
    let outcome = train::train(&train_set, &val_set, init, &config, &mut |_| {}).expect("train");
    let InteractionSpec::DenseSym(dense) = &outcome.params.interaction else { unreachable!() };
    let m = outcome.params.num_fields();
    let rank = 5.min(m);
    let keep = (rank * (m + 1)).min(num_pairs(m));
    let v = gather_field_vectors(&train_set[0], &outcome.params).expect("gather");

    let fit = decompose::posthoc_dplr(dense, rank, 100, 1e-12).expect("fit");
    let dplr_report = decompose::error_spectrum(
        dense,
        &InteractionSpec::Dplr(fit.to_model_form(m).expect("model form")),
        &v,
    )
    .expect("spectrum");
    let pruned_report = decompose::error_spectrum(
        dense,
        &InteractionSpec::PrunedSparse(
            decompose::prune(dense, &PruneBudget::KeepCount(keep)).expect("prune"),
        ),
        &v,
    )
    .expect("spectrum");
    let dir = out_dir();
    for (name, report) in
        [("spectrum_dplr.csv", &dplr_report), ("spectrum_pruned.csv", &pruned_report)]
    {
        let text = decompose::spectrum_report_text(report);
        assert!(text.starts_with("index,sigma_error,lambda_vvt,cumulative_bound\n"));
        assert_eq!(text.lines().count(), m + 1);
        std::fs::write(dir.join(name), text).expect("write report");
    }

    println!("criterion 8: PASS - post-hoc objective non-increasing on 200 instances, all-ones matrix recovered at rank 1 (error <= 1e-8), signed trace inequality held on 500 instances; spectrum reports for a trained model written to {} (reported, not asserted)", dir.display());
}

// -------------------------------------------------------------------------
// criterion 9: binary format round-trip
// -------------------------------------------------------------------------

#[test]
fn criterion_9_format_round_trip() {
    let schema = synthetic_schema(2, 5, 3);
    let mut models = vec![
        ModelParams::init(schema.clone(), 4, VariantKind::Fm, 1).expect("fm"),
        ModelParams::init(schema.clone(), 4, VariantKind::Fwfm, 2).expect("fwfm"),
        ModelParams::init(schema.clone(), 4, VariantKind::Dplr { rank: 3 }, 3).expect("dplr"),
    ];
    let dense = ModelParams::init(schema.clone(), 4, VariantKind::Fwfm, 4).expect("dense");
    let InteractionSpec::DenseSym(r) = &dense.interaction else { unreachable!() };
    let pruned = decompose::prune(r, &PruneBudget::RankEquivalent(1)).expect("prune");
    models.push(
        ModelParams::new(
            schema,
            4,
            dense.b0,
            dense.b.clone(),
            dense.w.clone(),
            InteractionSpec::PrunedSparse(pruned),
        )
        .expect("pruned model"),
    );

    for params in &models {
        let bytes = serialize::model_bytes(params).expect("write");
        let loaded = serialize::read_model(bytes.as_slice()).expect("read");
        let bytes2 = serialize::model_bytes(&loaded).expect("write again");
        assert_eq!(bytes, bytes2, "{}: round trip is not byte-identical", params.interaction.kind_name());

        let mut corrupt = bytes.clone();
        corrupt[0] ^= 0x5A;
        assert!(
            serialize::read_model(corrupt.as_slice()).is_err(),
            "corrupted magic must be rejected"
        );
    }
    println!("criterion 9: PASS - write/read/write is byte-identical for all four model kinds and a corrupted magic byte is rejected");
}

// -------------------------------------------------------------------------
// engine scoring must also survive a serialization round trip
// -------------------------------------------------------------------------

#[test]
fn round_trip_preserves_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC9);
    for variant in VARIANTS {
        let params = random_model(&mut rng, 2, 6, 4, variant, 2);
        let auction = random_auction(&mut rng, &params, 3);
        let mut ops = OpCounter::new();
        let before = Engine::new(&params).score_auction(&auction, &mut ops).expect("score");
        let loaded =
            serialize::read_model(serialize::model_bytes(&params).expect("bytes").as_slice())
                .expect("load");
        let after = Engine::new(&loaded).score_auction(&auction, &mut ops).expect("score");
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(a, b, "{variant}: scores changed across serialization");
        }
        // forward on the assembled sample agrees too
        let joined = Sample::join_fragments(&auction.context, &auction.items[0]);
        assert!(close(
            forward(&joined, &loaded).expect("forward"),
            before[0],
            1e-9
        ));
    }
}
