//! Auction scoring with a cached context.
//!
//! One auction scores many items that share the same context fields, so
//! everything that depends only on the context is computed once per auction
//! and reused. For the DPLR variant the cache holds the context slice of
//! `P = U V` and the context part of the diagonal sum; each item then costs
//! O(rank * item_fields * k) regardless of how many context fields exist.
//! The FM cache holds the context vector sum, and the dense/pruned caches
//! hold the partial pairwise sum over context-context pairs (cross and
//! item-item pairs still have to be walked per item, which is exactly the
//! cost this crate is built to avoid).
//!
//! Every scoring entry point threads an [`OpCounter`] that tallies
//! multiply-accumulate work, so the cost model can be asserted exactly
//! instead of inferred from noisy wall clocks.

use crate::data::{Auction, Fragment, Sample};
use crate::error::{Error, Result};
use crate::model::{InteractionSpec, ModelParams};

/// Multiply-accumulate tally for one scoring call.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct OpCounter {
    macs: u64,
}

impl OpCounter {
    pub fn new() -> OpCounter {
        OpCounter::default()
    }

    #[inline]
    pub fn add(&mut self, n: u64) {
        self.macs += n;
    }

    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn reset(&mut self) {
        self.macs = 0;
    }
}

/// Pruned entries classified once per engine by where their fields live, so
/// the per-item loop touches exactly the pairs it must.
#[derive(Debug, Clone)]
struct PrunedPairs {
    /// Both fields in the context: folded into the cache.
    cc: Vec<(usize, usize, f64)>,
    /// Context-item pairs: context side read from the cached field vectors.
    cross: Vec<(usize, usize, f64)>,
    /// Both fields in the item block.
    ii: Vec<(usize, usize, f64)>,
}

/// Scoring engine bound to one immutable model.
pub struct Engine<'a> {
    params: &'a ModelParams,
    pruned: Option<PrunedPairs>,
}

/// Context-only quantities, a pure function of (context fragment, params).
#[derive(Debug, Clone)]
pub enum ContextCache {
    Fm {
        linear: f64,
        vec_sum: Vec<f64>,
        sq_sum: f64,
    },
    Dense {
        linear: f64,
        rows: Vec<f64>,
        pair_sum: f64,
    },
    Pruned {
        linear: f64,
        rows: Vec<f64>,
        pair_sum: f64,
    },
    Dplr {
        linear: f64,
        /// rank x k context slice of P = U V.
        p_ctx: Vec<f64>,
        /// sum over context fields of d_i ||v_i||^2.
        diag_sum: f64,
    },
}

impl<'a> Engine<'a> {
    pub fn new(params: &'a ModelParams) -> Engine<'a> {
        let pruned = match &params.interaction {
            InteractionSpec::PrunedSparse(p) => {
                let m_c = params.num_context();
                let mut classes = PrunedPairs { cc: vec![], cross: vec![], ii: vec![] };
                for &(i, j, v) in p.entries() {
                    let (i, j, v) = (i as usize, j as usize, v as f64);
                    if j < m_c {
                        classes.cc.push((i, j, v));
                    } else if i < m_c {
                        classes.cross.push((i, j, v));
                    } else {
                        classes.ii.push((i, j, v));
                    }
                }
                Some(classes)
            }
            _ => None,
        };
        Engine { params, pruned }
    }

    pub fn params(&self) -> &ModelParams {
        self.params
    }

    fn check_fragment(&self, frag: &Fragment, lo: usize, hi: usize, what: &str) -> Result<()> {
        let mut covered = vec![false; hi - lo];
        for e in &frag.entries {
            let f = e.field as usize;
            if f < lo || f >= hi {
                return Err(Error::Data(format!(
                    "{what} fragment contains field {f}, expected fields {lo}..{hi}"
                )));
            }
            covered[f - lo] = true;
        }
        if let Some(missing) = covered.iter().position(|c| !c) {
            return Err(Error::Data(format!(
                "{what} fragment is missing field {}",
                lo + missing
            )));
        }
        Ok(())
    }

    /// Gather field vectors for a fragment covering fields `lo..hi` into a
    /// dense (hi-lo) x k block, counting one MAC per embedding lane.
    fn gather_block(
        &self,
        frag: &Fragment,
        lo: usize,
        hi: usize,
        ops: &mut OpCounter,
    ) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let k = self.params.k;
        let rows = hi - lo;
        let mut block = vec![0.0f64; rows * k];
        let mut linear = 0.0f64;
        for e in &frag.entries {
            let global = self.params.global_id(e.field as usize, e.id)?;
            let emb = self.params.embedding_row(global);
            let out = &mut block[(e.field as usize - lo) * k..(e.field as usize - lo + 1) * k];
            for (o, &x) in out.iter_mut().zip(emb) {
                *o += e.weight * x as f64;
            }
            ops.add(k as u64);
            linear += e.weight * self.params.b[global] as f64;
            ops.add(1);
        }
        let mut sq = vec![0.0f64; rows];
        for (i, s) in sq.iter_mut().enumerate() {
            *s = block[i * k..(i + 1) * k].iter().map(|x| x * x).sum();
            ops.add(k as u64);
        }
        Ok((block, sq, linear))
    }

    /// Everything that depends on the context only. For DPLR this is step 1
    /// of the cached inference: `P_ctx = U_ctx V_ctx` and the context part of
    /// the diagonal sum.
    pub fn build_context_cache(&self, context: &Fragment, ops: &mut OpCounter) -> Result<ContextCache> {
        let m_c = self.params.num_context();
        let k = self.params.k;
        self.check_fragment(context, 0, m_c, "context")?;
        let (rows, sq, ctx_linear) = self.gather_block(context, 0, m_c, ops)?;
        let linear = self.params.b0 as f64 + ctx_linear;

        let cache = match &self.params.interaction {
            InteractionSpec::FmImplicit => {
                let mut vec_sum = vec![0.0f64; k];
                let mut sq_sum = 0.0f64;
                for i in 0..m_c {
                    for (t, &x) in vec_sum.iter_mut().zip(&rows[i * k..(i + 1) * k]) {
                        *t += x;
                    }
                    ops.add(k as u64);
                    sq_sum += sq[i];
                    ops.add(1);
                }
                ContextCache::Fm { linear, vec_sum, sq_sum }
            }
            InteractionSpec::DenseSym(dense) => {
                let mut pair_sum = 0.0f64;
                for i in 0..m_c {
                    for j in (i + 1)..m_c {
                        let dot: f64 = rows[i * k..(i + 1) * k]
                            .iter()
                            .zip(&rows[j * k..(j + 1) * k])
                            .map(|(a, b)| a * b)
                            .sum();
                        pair_sum += dot * dense.get(i, j) as f64;
                        ops.add(k as u64 + 1);
                    }
                }
                ContextCache::Dense { linear, rows, pair_sum }
            }
            InteractionSpec::PrunedSparse(_) => {
                let classes = self.pruned.as_ref().expect("pruned pairs precomputed");
                let mut pair_sum = 0.0f64;
                for &(i, j, v) in &classes.cc {
                    let dot: f64 = rows[i * k..(i + 1) * k]
                        .iter()
                        .zip(&rows[j * k..(j + 1) * k])
                        .map(|(a, b)| a * b)
                        .sum();
                    pair_sum += dot * v;
                    ops.add(k as u64 + 1);
                }
                ContextCache::Pruned { linear, rows, pair_sum }
            }
            InteractionSpec::Dplr(dplr) => {
                let rank = dplr.rank();
                let mut p_ctx = vec![0.0f64; rank * k];
                for r in 0..rank {
                    for i in 0..m_c {
                        let uri = dplr.u_at(r, i) as f64;
                        let dst = &mut p_ctx[r * k..(r + 1) * k];
                        for (p, &x) in dst.iter_mut().zip(&rows[i * k..(i + 1) * k]) {
                            *p += uri * x;
                        }
                        ops.add(k as u64);
                    }
                }
                let mut diag_sum = 0.0f64;
                for (&sqi, &di) in sq.iter().zip(dplr.d()) {
                    diag_sum += di * sqi;
                    ops.add(1);
                }
                ContextCache::Dplr { linear, p_ctx, diag_sum }
            }
        };
        Ok(cache)
    }

    /// Score one item against a cached context. Returns the raw model score
    /// (bias + linear + half the full pairwise sum); consumers apply the
    /// sigmoid when they need a probability.
    pub fn score_item(&self, cache: &ContextCache, item: &Fragment, ops: &mut OpCounter) -> Result<f64> {
        let m = self.params.num_fields();
        let m_c = self.params.num_context();
        let k = self.params.k;
        self.check_fragment(item, m_c, m, "item")?;
        let (rows, sq, item_linear) = self.gather_block(item, m_c, m, ops)?;
        let n_item = m - m_c;

        let score = match (&self.params.interaction, cache) {
            (InteractionSpec::FmImplicit, ContextCache::Fm { linear, vec_sum, sq_sum }) => {
                let mut total = vec_sum.clone();
                let mut item_sq = 0.0f64;
                for (i, &sqi) in sq.iter().enumerate() {
                    for (t, &x) in total.iter_mut().zip(&rows[i * k..(i + 1) * k]) {
                        *t += x;
                    }
                    ops.add(k as u64);
                    item_sq += sqi;
                    ops.add(1);
                }
                let total_sq: f64 = total.iter().map(|x| x * x).sum();
                ops.add(k as u64);
                let pairwise = 0.5 * (total_sq - sq_sum - item_sq);
                linear + item_linear + pairwise
            }
            (InteractionSpec::DenseSym(dense), ContextCache::Dense { linear, rows: ctx_rows, pair_sum }) => {
                let mut pairwise = *pair_sum;
                // context-item cross pairs
                for i in 0..m_c {
                    for j in 0..n_item {
                        let dot: f64 = ctx_rows[i * k..(i + 1) * k]
                            .iter()
                            .zip(&rows[j * k..(j + 1) * k])
                            .map(|(a, b)| a * b)
                            .sum();
                        pairwise += dot * dense.get(i, m_c + j) as f64;
                        ops.add(k as u64 + 1);
                    }
                }
                // item-item pairs
                for i in 0..n_item {
                    for j in (i + 1)..n_item {
                        let dot: f64 = rows[i * k..(i + 1) * k]
                            .iter()
                            .zip(&rows[j * k..(j + 1) * k])
                            .map(|(a, b)| a * b)
                            .sum();
                        pairwise += dot * dense.get(m_c + i, m_c + j) as f64;
                        ops.add(k as u64 + 1);
                    }
                }
                linear + item_linear + pairwise
            }
            (InteractionSpec::PrunedSparse(_), ContextCache::Pruned { linear, rows: ctx_rows, pair_sum }) => {
                let classes = self.pruned.as_ref().expect("pruned pairs precomputed");
                let mut pairwise = *pair_sum;
                for &(i, j, v) in &classes.cross {
                    let dot: f64 = ctx_rows[i * k..(i + 1) * k]
                        .iter()
                        .zip(&rows[(j - m_c) * k..(j - m_c + 1) * k])
                        .map(|(a, b)| a * b)
                        .sum();
                    pairwise += dot * v;
                    ops.add(k as u64 + 1);
                }
                for &(i, j, v) in &classes.ii {
                    let dot: f64 = rows[(i - m_c) * k..(i - m_c + 1) * k]
                        .iter()
                        .zip(&rows[(j - m_c) * k..(j - m_c + 1) * k])
                        .map(|(a, b)| a * b)
                        .sum();
                    pairwise += dot * v;
                    ops.add(k as u64 + 1);
                }
                linear + item_linear + pairwise
            }
            (InteractionSpec::Dplr(dplr), ContextCache::Dplr { linear, p_ctx, diag_sum }) => {
                let rank = dplr.rank();
                // step 2: P = P_ctx + U_item V_item
                let mut p = p_ctx.clone();
                ops.add((rank * k) as u64);
                for r in 0..rank {
                    for i in 0..n_item {
                        let uri = dplr.u_at(r, m_c + i) as f64;
                        let dst = &mut p[r * k..(r + 1) * k];
                        for (pv, &x) in dst.iter_mut().zip(&rows[i * k..(i + 1) * k]) {
                            *pv += uri * x;
                        }
                        ops.add(k as u64);
                    }
                }
                // step 3: diagonal and low-rank sums
                let mut diag = *diag_sum;
                for (&sqi, &di) in sq.iter().zip(&dplr.d()[m_c..]) {
                    diag += di * sqi;
                    ops.add(1);
                }
                let mut low_rank = 0.0f64;
                for r in 0..rank {
                    let norm_sq: f64 = p[r * k..(r + 1) * k].iter().map(|x| x * x).sum();
                    low_rank += dplr.e()[r] as f64 * norm_sq;
                    ops.add(k as u64 + 1);
                }
                let pairwise = 0.5 * (diag + low_rank);
                ops.add(2);
                linear + item_linear + pairwise
            }
            _ => {
                return Err(Error::Data(
                    "context cache was built for a different interaction variant".into(),
                ))
            }
        };
        Ok(score)
    }

    /// Build the cache once and score every item; output order matches the
    /// input order.
    pub fn score_auction(&self, auction: &Auction, ops: &mut OpCounter) -> Result<Vec<f64>> {
        if auction.items.is_empty() {
            return Err(Error::Data("auction has no items to score".into()));
        }
        let cache = self.build_context_cache(&auction.context, ops)?;
        auction
            .items
            .iter()
            .map(|item| self.score_item(&cache, item, ops))
            .collect()
    }
}

/// Multiply-accumulate count of one `score_item` call for this model, using
/// a minimal single-value fragment per field. The count depends only on the
/// model structure, so it is deterministic.
pub fn per_item_op_count(params: &ModelParams) -> Result<u64> {
    let engine = Engine::new(params);
    let (context, item) = unit_fragments(params);
    let mut warm = OpCounter::new();
    let cache = engine.build_context_cache(&context, &mut warm)?;
    let mut ops = OpCounter::new();
    engine.score_item(&cache, &item, &mut ops)?;
    Ok(ops.macs())
}

/// Fragments with one rare-id feature per field, the minimal valid input.
pub fn unit_fragments(params: &ModelParams) -> (Fragment, Fragment) {
    let m = params.num_fields();
    let m_c = params.num_context();
    let sample = Sample {
        label: 0.0,
        entries: (0..m)
            .map(|f| crate::data::FeatureRef { field: f as u16, id: 0, weight: 1.0 })
            .collect(),
    };
    sample.split_fragments(m_c)
}
