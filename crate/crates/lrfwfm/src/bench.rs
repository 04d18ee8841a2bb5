//! Synthetic latency harness.
//!
//! Random models over `m` fields are scored on random auctions for every
//! combination of context-field count, DPLR rank (with a parameter-matched
//! pruned comparator) and auction size. Scores are validated against the
//! brute-force oracle once per configuration before anything is timed; the
//! timed region covers cache building plus item scoring only. Because wall
//! clocks are hardware-bound, every record also carries the instrumented
//! multiply-accumulate count per item, which is deterministic and what the
//! scaling assertions run on.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Auction, FeatureRef, Fragment, Sample};
use crate::decompose::{prune, PruneBudget};
use crate::engine::{Engine, OpCounter};
use crate::error::{Error, Result};
use crate::model::{forward, num_pairs, InteractionSpec, ModelParams, VariantKind};
use crate::schema::{FieldDef, FieldKind, FieldSchema, Role};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchGrid {
    pub m: usize,
    pub context_counts: Vec<usize>,
    pub ranks: Vec<usize>,
    pub auction_sizes: Vec<usize>,
    pub repetitions: usize,
    pub auctions_per_measurement: usize,
    pub k: usize,
    pub seed: u64,
}

impl BenchGrid {
    /// The default protocol: 40 fields, 10..30 of them context, ranks 1-3,
    /// 50 repetitions of 10 scored auctions each.
    pub fn standard(k: usize, seed: u64) -> BenchGrid {
        BenchGrid {
            m: 40,
            context_counts: vec![10, 15, 20, 25, 30],
            ranks: vec![1, 2, 3],
            auction_sizes: vec![10, 50, 100, 500, 1000],
            repetitions: 50,
            auctions_per_measurement: 10,
            k,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.context_counts.iter().any(|&c| c == 0 || c >= self.m) {
            return Err(Error::Data(format!(
                "context counts must lie in 1..{} (m={})",
                self.m, self.m
            )));
        }
        if self.repetitions < 2 {
            return Err(Error::Data("need at least 2 repetitions to estimate error".into()));
        }
        if self.ranks.contains(&0) {
            return Err(Error::Data("ranks must be at least 1".into()));
        }
        if self.auction_sizes.contains(&0) {
            return Err(Error::Data("auction sizes must be at least 1".into()));
        }
        if self.auctions_per_measurement == 0 {
            return Err(Error::Data("need at least 1 auction per measurement".into()));
        }
        Ok(())
    }
}

/// One timed measurement of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub engine: String,
    /// DPLR rank, pruned keep-count, or the full pair count for dense.
    pub rank_or_keep: usize,
    pub m: usize,
    pub context_fields: usize,
    pub auction_size: usize,
    pub rep: usize,
    /// Wall time of one auction (cache build + all items), nanoseconds.
    pub total_ns: u64,
    pub per_item_ns: f64,
    pub per_item_ops: u64,
    /// Set when the whole measurement took under a microsecond, where timer
    /// resolution dominates.
    pub low_resolution: bool,
}

pub const RECORDS_HEADER: &str =
    "engine,rank_or_keep,m,context_fields,auction_size,rep,total_ns,per_item_ns,per_item_ops";

pub fn records_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from(RECORDS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.1},{}\n",
            r.engine,
            r.rank_or_keep,
            r.m,
            r.context_fields,
            r.auction_size,
            r.rep,
            r.total_ns,
            r.per_item_ns,
            r.per_item_ops
        ));
    }
    out
}

const BENCH_VOCAB: u32 = 50;

fn bench_schema(m_c: usize, m: usize) -> FieldSchema {
    let fields = (0..m)
        .map(|i| {
            let role = if i < m_c { Role::Context } else { Role::Item };
            let mut def = FieldDef::new(format!("f{i}"), role, FieldKind::CategoricalSingle);
            def.vocab_size = BENCH_VOCAB;
            def
        })
        .collect();
    FieldSchema::new(fields).expect("bench schema is valid")
}

fn random_fragment(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> Fragment {
    Fragment {
        entries: (lo..hi)
            .map(|f| FeatureRef {
                field: f as u16,
                id: rng.gen_range(0..BENCH_VOCAB),
                weight: 1.0,
            })
            .collect(),
    }
}

fn random_auction(rng: &mut ChaCha8Rng, m_c: usize, m: usize, items: usize) -> Auction {
    Auction {
        context: random_fragment(rng, 0, m_c),
        items: (0..items).map(|_| random_fragment(rng, m_c, m)).collect(),
    }
}

/// Deterministic sub-stream per (engine slot, context count): keeps every
/// configuration reproducible regardless of grid iteration order.
fn config_seed(base: u64, engine_slot: u64, m_c: usize) -> u64 {
    base ^ (engine_slot.wrapping_mul(0x9e37_79b9_7f4a_7c15)) ^ ((m_c as u64) << 32)
}

fn random_model(grid: &BenchGrid, m_c: usize, variant: VariantKind, slot: u64) -> ModelParams {
    let schema = bench_schema(m_c, grid.m);
    let mut params = ModelParams::init(schema, grid.k, variant, config_seed(grid.seed, slot, m_c))
        .expect("bench model init");
    // Embeddings from init; give the linear part and interactions some spread
    // so the scored values are not degenerate.
    let mut rng = ChaCha8Rng::seed_from_u64(config_seed(grid.seed, slot ^ 0xb, m_c));
    for b in params.b.iter_mut() {
        *b = rng.gen_range(-0.1..0.1);
    }
    if let InteractionSpec::DenseSym(d) = &mut params.interaction {
        for v in d.upper_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    params
}

struct EngineConfig {
    name: &'static str,
    rank_or_keep: usize,
    params: ModelParams,
}

/// The engine line-up for one context count: plain FM, dense FwFM, and a
/// DPLR/pruned pair per rank with matched parameter budgets.
fn engines_for(grid: &BenchGrid, m_c: usize) -> Result<Vec<EngineConfig>> {
    let mut out = Vec::new();
    out.push(EngineConfig {
        name: "fm",
        rank_or_keep: 0,
        params: random_model(grid, m_c, VariantKind::Fm, 1),
    });
    let dense = random_model(grid, m_c, VariantKind::Fwfm, 2);
    out.push(EngineConfig {
        name: "fwfm",
        rank_or_keep: num_pairs(grid.m),
        params: dense.clone(),
    });
    for (slot, &rank) in grid.ranks.iter().enumerate() {
        out.push(EngineConfig {
            name: "dplr",
            rank_or_keep: rank,
            params: random_model(grid, m_c, VariantKind::Dplr { rank }, 3 + slot as u64),
        });
        let budget = PruneBudget::RankEquivalent(rank);
        let keep = budget.keep_count(grid.m).min(num_pairs(grid.m));
        let InteractionSpec::DenseSym(r) = &dense.interaction else { unreachable!() };
        let pruned = prune(r, &PruneBudget::KeepCount(keep))?;
        out.push(EngineConfig {
            name: "pruned",
            rank_or_keep: keep,
            params: ModelParams::new(
                dense.schema.clone(),
                dense.k,
                dense.b0,
                dense.b.clone(),
                dense.w.clone(),
                InteractionSpec::PrunedSparse(pruned),
            )?,
        });
    }
    Ok(out)
}

fn validate_against_oracle(params: &ModelParams, auction: &Auction) -> Result<()> {
    let engine = Engine::new(params);
    let mut ops = OpCounter::new();
    let scores = engine.score_auction(auction, &mut ops)?;
    for (item, score) in auction.items.iter().zip(&scores) {
        let joined = Sample::join_fragments(&auction.context, item);
        let want = forward(&joined, params)?;
        let err = (score - want).abs();
        if err > 1e-9 * (1.0 + score.abs().max(want.abs())) {
            return Err(Error::Numeric(format!(
                "engine/oracle mismatch in bench config: {score} vs {want}"
            )));
        }
    }
    Ok(())
}

/// Run the whole grid. Auctions are drawn fresh from the seeded stream for
/// every repetition; op counts are measured outside the timed region.
pub fn run_grid(grid: &BenchGrid) -> Result<Vec<BenchRecord>> {
    grid.validate()?;
    let mut records = Vec::new();
    for &m_c in &grid.context_counts {
        for config in engines_for(grid, m_c)? {
            let engine = Engine::new(&config.params);
            let per_item_ops = crate::engine::per_item_op_count(&config.params)?;
            let mut rng =
                ChaCha8Rng::seed_from_u64(config_seed(grid.seed, config.rank_or_keep as u64, m_c));

            // correctness gate, then warm-up, both outside the timed region
            let gate = random_auction(&mut rng, m_c, grid.m, 8);
            validate_against_oracle(&config.params, &gate)?;

            for &size in &grid.auction_sizes {
                let warm = random_auction(&mut rng, m_c, grid.m, size);
                let mut ops = OpCounter::new();
                engine.score_auction(&warm, &mut ops)?;

                for rep in 0..grid.repetitions {
                    let auctions: Vec<Auction> = (0..grid.auctions_per_measurement)
                        .map(|_| random_auction(&mut rng, m_c, grid.m, size))
                        .collect();
                    let start = Instant::now();
                    for auction in &auctions {
                        let mut ops = OpCounter::new();
                        let scores = engine.score_auction(auction, &mut ops)?;
                        std::hint::black_box(&scores);
                    }
                    let elapsed = start.elapsed().as_nanos() as u64;
                    let total_ns = elapsed / grid.auctions_per_measurement as u64;
                    records.push(BenchRecord {
                        engine: config.name.to_string(),
                        rank_or_keep: config.rank_or_keep,
                        m: grid.m,
                        context_fields: m_c,
                        auction_size: size,
                        rep,
                        total_ns,
                        per_item_ns: total_ns as f64 / size as f64,
                        per_item_ops,
                        low_resolution: elapsed < 1_000,
                    });
                }
            }
        }
    }
    Ok(records)
}

/// Mean and standard error per configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub engine: String,
    pub rank_or_keep: usize,
    pub m: usize,
    pub context_fields: usize,
    pub auction_size: usize,
    pub reps: usize,
    pub mean_total_ns: f64,
    pub se_total_ns: f64,
    pub mean_per_item_ns: f64,
    pub se_per_item_ns: f64,
    pub per_item_ops: u64,
    pub low_resolution: bool,
}

pub const SUMMARY_HEADER: &str = "engine,rank_or_keep,m,context_fields,auction_size,reps,\
mean_total_ns,se_total_ns,mean_per_item_ns,se_per_item_ns,per_item_ops";

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt() / n.sqrt())
}

pub fn summarize(records: &[BenchRecord]) -> Result<Vec<SummaryRow>> {
    let mut groups: Vec<(String, usize, usize, usize, usize)> = Vec::new();
    for r in records {
        let key =
            (r.engine.clone(), r.rank_or_keep, r.m, r.context_fields, r.auction_size);
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    let mut rows = Vec::with_capacity(groups.len());
    for (engine, rank_or_keep, m, m_c, size) in groups {
        let members: Vec<&BenchRecord> = records
            .iter()
            .filter(|r| {
                r.engine == engine
                    && r.rank_or_keep == rank_or_keep
                    && r.m == m
                    && r.context_fields == m_c
                    && r.auction_size == size
            })
            .collect();
        if members.len() < 2 {
            return Err(Error::Data(format!(
                "configuration {engine}/{rank_or_keep}/{m_c}/{size} has {} records, need >= 2",
                members.len()
            )));
        }
        let totals: Vec<f64> = members.iter().map(|r| r.total_ns as f64).collect();
        let per_items: Vec<f64> = members.iter().map(|r| r.per_item_ns).collect();
        let (mean_total_ns, se_total_ns) = mean_and_se(&totals);
        let (mean_per_item_ns, se_per_item_ns) = mean_and_se(&per_items);
        rows.push(SummaryRow {
            engine,
            rank_or_keep,
            m,
            context_fields: m_c,
            auction_size: size,
            reps: members.len(),
            mean_total_ns,
            se_total_ns,
            mean_per_item_ns,
            se_per_item_ns,
            per_item_ops: members[0].per_item_ops,
            low_resolution: members.iter().any(|r| r.low_resolution),
        });
    }
    Ok(rows)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.1},{:.1},{:.1},{:.1},{}\n",
            r.engine,
            r.rank_or_keep,
            r.m,
            r.context_fields,
            r.auction_size,
            r.reps,
            r.mean_total_ns,
            r.se_total_ns,
            r.mean_per_item_ns,
            r.se_per_item_ns,
            r.per_item_ops
        ));
    }
    out
}

/// Per-item op counts for one item block size under growing context counts,
/// DPLR engine. This is the exact-counter form of the scaling claim: the
/// per-item cost depends on the item fields and rank only.
pub fn dplr_per_item_ops_fixed_items(
    item_fields: usize,
    context_counts: &[usize],
    rank: usize,
    k: usize,
) -> Result<Vec<u64>> {
    context_counts
        .iter()
        .map(|&m_c| {
            let schema = bench_schema(m_c, m_c + item_fields);
            let params = ModelParams::init(schema, k, VariantKind::Dplr { rank }, 17)?;
            crate::engine::per_item_op_count(&params)
        })
        .collect()
}
