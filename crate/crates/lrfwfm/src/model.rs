//! Model parameters and the pairwise interaction machinery.
//!
//! A score is `b0 + <b, x> + sum_{i<j} <v_i, v_j> R_ij`, where the field
//! vectors `v_i` are weighted sums of embedding rows and `R` is the field
//! interaction matrix. `R` is handled through one of four interchangeable
//! forms:
//!
//! * `FmImplicit` — all off-diagonal entries equal 1 (a plain factorization
//!   machine), evaluated through the squared-sum trick in linear time;
//! * `DenseSym` — an explicit symmetric zero-diagonal matrix, stored as its
//!   strict upper triangle;
//! * `PrunedSparse` — the surviving upper-triangular entries after magnitude
//!   pruning;
//! * `Dplr` — `R = U^T diag(e) U + diag(d)` with `d = -diagof(U^T diag(e) U)`
//!   so the diagonal is exactly zero. The pairwise term then collapses to
//!   `1/2 (sum_i d_i ||v_i||^2 + sum_r e_r ||P_r||^2)` with `P = U V`, which
//!   costs O(rank * m * k) instead of O(m^2 k).
//!
//! Parameters are stored as `f32`; every reduction accumulates in `f64` so
//! the fast paths agree with the brute-force double loop to tight tolerance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::schema::FieldSchema;

/// Index of the pair (i, j), i < j, in a row-major strict upper triangle.
#[inline]
pub fn pair_index(i: usize, j: usize, m: usize) -> usize {
    debug_assert!(i < j && j < m);
    i * (2 * m - i - 1) / 2 + (j - i - 1)
}

pub fn num_pairs(m: usize) -> usize {
    m * (m - 1) / 2
}

/// Symmetric zero-diagonal interaction matrix stored as its upper triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSym {
    m: usize,
    tri: Vec<f32>,
}

impl DenseSym {
    pub fn new(m: usize) -> DenseSym {
        DenseSym { m, tri: vec![0.0; num_pairs(m)] }
    }

    pub fn from_upper(m: usize, tri: Vec<f32>) -> Result<DenseSym> {
        if tri.len() != num_pairs(m) {
            return Err(Error::Dimension(format!(
                "upper triangle for m={m} needs {} values, got {}",
                num_pairs(m),
                tri.len()
            )));
        }
        Ok(DenseSym { m, tri })
    }

    pub fn num_fields(&self) -> usize {
        self.m
    }

    pub fn upper(&self) -> &[f32] {
        &self.tri
    }

    pub fn upper_mut(&mut self) -> &mut [f32] {
        &mut self.tri
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        if i == j {
            0.0
        } else if i < j {
            self.tri[pair_index(i, j, self.m)]
        } else {
            self.tri[pair_index(j, i, self.m)]
        }
    }

    pub fn set_pair(&mut self, i: usize, j: usize, v: f32) {
        assert!(i < j && j < self.m);
        self.tri[pair_index(i, j, self.m)] = v;
    }
}

/// Retained entries after magnitude pruning: strictly upper-triangular,
/// unique, sorted lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedSparse {
    m: usize,
    entries: Vec<(u32, u32, f32)>,
}

impl PrunedSparse {
    pub fn new(m: usize, mut entries: Vec<(u32, u32, f32)>) -> Result<PrunedSparse> {
        entries.sort_by_key(|&(i, j, _)| (i, j));
        for window in entries.windows(2) {
            if window[0].0 == window[1].0 && window[0].1 == window[1].1 {
                return Err(Error::Data(format!(
                    "duplicate pruned entry ({}, {})",
                    window[0].0, window[0].1
                )));
            }
        }
        for &(i, j, _) in &entries {
            if i >= j || j as usize >= m {
                return Err(Error::Data(format!(
                    "pruned entry ({i}, {j}) is not strictly upper-triangular for m={m}"
                )));
            }
        }
        Ok(PrunedSparse { m, entries })
    }

    pub fn num_fields(&self) -> usize {
        self.m
    }

    pub fn entries(&self) -> &[(u32, u32, f32)] {
        &self.entries
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f32> {
        self.entries.iter_mut().map(|(_, _, v)| v)
    }

    pub fn keep_count(&self) -> usize {
        self.entries.len()
    }
}

/// Diagonal plus low-rank form of the interaction matrix.
///
/// `u` is rank x m row-major and `e` has one scale per rank. The derived
/// diagonal `d` is cached here and must be refreshed whenever `u` or `e`
/// change; it is what forces the reconstructed matrix to a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Dplr {
    rank: usize,
    m: usize,
    u: Vec<f32>,
    e: Vec<f32>,
    d: Vec<f64>,
}

impl Dplr {
    pub fn new(rank: usize, m: usize, u: Vec<f32>, e: Vec<f32>) -> Result<Dplr> {
        if rank == 0 {
            return Err(Error::Dimension("DPLR rank must be at least 1".into()));
        }
        if u.len() != rank * m || e.len() != rank {
            return Err(Error::Dimension(format!(
                "DPLR with rank={rank}, m={m} needs {}+{} parameters, got {}+{}",
                rank * m,
                rank,
                u.len(),
                e.len()
            )));
        }
        let mut dplr = Dplr { rank, m, u, e, d: vec![0.0; m] };
        dplr.refresh_d();
        Ok(dplr)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn num_fields(&self) -> usize {
        self.m
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn e(&self) -> &[f32] {
        &self.e
    }

    /// Derived diagonal `d_i = -sum_r e_r U_{r,i}^2`.
    pub fn d(&self) -> &[f64] {
        &self.d
    }

    #[inline]
    pub fn u_at(&self, r: usize, i: usize) -> f32 {
        self.u[r * self.m + i]
    }

    /// Mutate (u, e) in place and recompute the derived diagonal.
    pub fn update<F: FnOnce(&mut [f32], &mut [f32])>(&mut self, f: F) {
        f(&mut self.u, &mut self.e);
        self.refresh_d();
    }

    fn refresh_d(&mut self) {
        for i in 0..self.m {
            let mut acc = 0.0f64;
            for r in 0..self.rank {
                let uri = self.u[r * self.m + i] as f64;
                acc += self.e[r] as f64 * uri * uri;
            }
            self.d[i] = -acc;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InteractionSpec {
    FmImplicit,
    DenseSym(DenseSym),
    PrunedSparse(PrunedSparse),
    Dplr(Dplr),
}

impl InteractionSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            InteractionSpec::FmImplicit => "fm",
            InteractionSpec::DenseSym(_) => "fwfm",
            InteractionSpec::PrunedSparse(_) => "pruned",
            InteractionSpec::Dplr(_) => "dplr",
        }
    }

    /// Trainable parameters beyond the shared `b0, b, W`.
    pub fn extra_param_count(&self) -> usize {
        match self {
            InteractionSpec::FmImplicit => 0,
            InteractionSpec::DenseSym(r) => num_pairs(r.num_fields()),
            InteractionSpec::PrunedSparse(p) => p.keep_count(),
            InteractionSpec::Dplr(d) => d.rank() * d.num_fields() + d.rank(),
        }
    }
}

/// Dense interaction matrix for any variant: symmetric with an exactly zero
/// diagonal. This is what oracles, pruning and the decomposition analysis
/// operate on.
pub fn materialize_r(interaction: &InteractionSpec, m: usize) -> Result<Mat> {
    let mut r = Mat::zeros(m, m);
    match interaction {
        InteractionSpec::FmImplicit => {
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        r.set(i, j, 1.0);
                    }
                }
            }
        }
        InteractionSpec::DenseSym(dense) => {
            if dense.num_fields() != m {
                return Err(Error::Dimension(format!(
                    "dense interaction has m={} but {m} was requested",
                    dense.num_fields()
                )));
            }
            for i in 0..m {
                for j in (i + 1)..m {
                    let v = dense.get(i, j) as f64;
                    r.set(i, j, v);
                    r.set(j, i, v);
                }
            }
        }
        InteractionSpec::PrunedSparse(pruned) => {
            if pruned.num_fields() != m {
                return Err(Error::Dimension(format!(
                    "pruned interaction has m={} but {m} was requested",
                    pruned.num_fields()
                )));
            }
            for &(i, j, v) in pruned.entries() {
                r.set(i as usize, j as usize, v as f64);
                r.set(j as usize, i as usize, v as f64);
            }
        }
        InteractionSpec::Dplr(dplr) => {
            if dplr.num_fields() != m {
                return Err(Error::Dimension(format!(
                    "DPLR interaction has m={} but {m} was requested",
                    dplr.num_fields()
                )));
            }
            // Off-diagonal entries of U^T diag(e) U; the derived diagonal
            // cancels the diagonal exactly, so it is left at zero.
            for i in 0..m {
                for j in (i + 1)..m {
                    let mut acc = 0.0f64;
                    for row in 0..dplr.rank() {
                        acc += dplr.e()[row] as f64
                            * dplr.u_at(row, i) as f64
                            * dplr.u_at(row, j) as f64;
                    }
                    r.set(i, j, acc);
                    r.set(j, i, acc);
                }
            }
        }
    }
    Ok(r)
}

/// Per-field vectors of one sample: row i is the weighted sum of the
/// embeddings of field i's active features, plus cached squared norms.
#[derive(Debug, Clone)]
pub struct FieldVectors {
    m: usize,
    k: usize,
    v: Vec<f64>,
    sq_norms: Vec<f64>,
}

impl FieldVectors {
    pub fn from_rows(m: usize, k: usize, v: Vec<f64>) -> FieldVectors {
        assert_eq!(v.len(), m * k);
        let sq_norms = (0..m)
            .map(|i| v[i * k..(i + 1) * k].iter().map(|x| x * x).sum())
            .collect();
        FieldVectors { m, k, v, sq_norms }
    }

    pub fn num_fields(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.v[i * self.k..(i + 1) * self.k]
    }

    pub fn sq_norm(&self, i: usize) -> f64 {
        self.sq_norms[i]
    }

    pub fn as_mat(&self) -> Mat {
        Mat::from_vec(self.m, self.k, self.v.clone()).expect("field vectors are finite")
    }
}

/// Full parameter set of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub schema: FieldSchema,
    pub k: usize,
    pub b0: f32,
    pub b: Vec<f32>,
    pub w: Vec<f32>,
    pub interaction: InteractionSpec,
    offsets: Vec<u32>,
}

impl ModelParams {
    pub fn new(
        schema: FieldSchema,
        k: usize,
        b0: f32,
        b: Vec<f32>,
        w: Vec<f32>,
        interaction: InteractionSpec,
    ) -> Result<ModelParams> {
        if !schema.vocab_built() {
            return Err(Error::Data("schema vocabulary has not been built".into()));
        }
        let n = schema.total_features() as usize;
        if b.len() != n || w.len() != n * k {
            return Err(Error::Dimension(format!(
                "model with n={n}, k={k} needs {n} linear weights and {} embedding values, got {} and {}",
                n * k,
                b.len(),
                w.len()
            )));
        }
        let expected_m = schema.num_fields();
        let inter_m = match &interaction {
            InteractionSpec::FmImplicit => expected_m,
            InteractionSpec::DenseSym(d) => d.num_fields(),
            InteractionSpec::PrunedSparse(p) => p.num_fields(),
            InteractionSpec::Dplr(d) => d.num_fields(),
        };
        if inter_m != expected_m {
            return Err(Error::Dimension(format!(
                "interaction is sized for {inter_m} fields but the schema has {expected_m}"
            )));
        }
        let offsets = schema.feature_offsets();
        Ok(ModelParams { schema, k, b0, b, w, interaction, offsets })
    }

    /// Total features n (sum of vocabulary sizes).
    pub fn n(&self) -> usize {
        self.b.len()
    }

    pub fn num_fields(&self) -> usize {
        self.schema.num_fields()
    }

    pub fn num_context(&self) -> usize {
        self.schema.num_context()
    }

    pub fn feature_offsets(&self) -> &[u32] {
        &self.offsets
    }

    /// Global feature index of (field, in-field id), bounds-checked.
    pub fn global_id(&self, field: usize, id: u32) -> Result<usize> {
        let size = self.schema.field(field).vocab_size;
        if id >= size {
            return Err(Error::Data(format!(
                "feature id {id} out of range for field `{}` (vocab size {size})",
                self.schema.field(field).name
            )));
        }
        Ok(self.offsets[field] as usize + id as usize)
    }

    pub fn embedding_row(&self, global: usize) -> &[f32] {
        &self.w[global * self.k..(global + 1) * self.k]
    }

    /// Number of trainable parameters: `1 + n + n k` plus the interaction's.
    pub fn param_count(&self) -> usize {
        1 + self.n() + self.n() * self.k + self.interaction.extra_param_count()
    }

    /// Read one trainable parameter by its flat index. The order is fixed:
    /// `b0`, then `b`, then `W` row-major, then the interaction parameters
    /// (upper triangle / retained values / `U` row-major followed by `e`).
    pub fn get_flat(&self, idx: usize) -> f32 {
        let n = self.n();
        let nk = n * self.k;
        if idx == 0 {
            return self.b0;
        }
        if idx < 1 + n {
            return self.b[idx - 1];
        }
        if idx < 1 + n + nk {
            return self.w[idx - 1 - n];
        }
        let j = idx - 1 - n - nk;
        match &self.interaction {
            InteractionSpec::FmImplicit => panic!("flat index {idx} out of range"),
            InteractionSpec::DenseSym(d) => d.upper()[j],
            InteractionSpec::PrunedSparse(p) => p.entries()[j].2,
            InteractionSpec::Dplr(d) => {
                let un = d.rank() * d.num_fields();
                if j < un {
                    d.u()[j]
                } else {
                    d.e()[j - un]
                }
            }
        }
    }

    /// Write one trainable parameter by flat index; the DPLR derived
    /// diagonal is refreshed when `U` or `e` change.
    pub fn set_flat(&mut self, idx: usize, value: f32) {
        let n = self.n();
        let nk = n * self.k;
        if idx == 0 {
            self.b0 = value;
            return;
        }
        if idx < 1 + n {
            self.b[idx - 1] = value;
            return;
        }
        if idx < 1 + n + nk {
            self.w[idx - 1 - n] = value;
            return;
        }
        let j = idx - 1 - n - nk;
        match &mut self.interaction {
            InteractionSpec::FmImplicit => panic!("flat index {idx} out of range"),
            InteractionSpec::DenseSym(d) => d.upper_mut()[j] = value,
            InteractionSpec::PrunedSparse(p) => {
                let v = p.values_mut().nth(j).expect("flat index in range");
                *v = value;
            }
            InteractionSpec::Dplr(d) => {
                let un = d.rank() * d.num_fields();
                d.update(|u, e| {
                    if j < un {
                        u[j] = value;
                    } else {
                        e[j - un] = value;
                    }
                });
            }
        }
    }

    /// Fresh model with the standard initialization: embeddings are
    /// zero-mean with standard deviation `1/sqrt(k)`, linear terms start at
    /// zero. For the DPLR variant the first row of `U` is all ones scaled by
    /// `1/sqrt(m)` with `e_0 = 1`, so training starts close to a plain FM;
    /// later rows are zero-mean with standard deviation `1/sqrt(m)` and the
    /// remaining `e` entries alternate +1/-1.
    pub fn init(schema: FieldSchema, k: usize, variant: VariantKind, seed: u64) -> Result<ModelParams> {
        let n = schema.total_features() as usize;
        let m = schema.num_fields();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = Normal::new(0.0f64, 1.0 / (k as f64).sqrt())
            .map_err(|e| Error::Numeric(e.to_string()))?;
        let w: Vec<f32> = (0..n * k).map(|_| emb.sample(&mut rng) as f32).collect();
        let interaction = match variant {
            VariantKind::Fm => InteractionSpec::FmImplicit,
            VariantKind::Fwfm => {
                // All-ones off-diagonal: exactly a plain FM at initialization.
                InteractionSpec::DenseSym(DenseSym::from_upper(m, vec![1.0; num_pairs(m)])?)
            }
            VariantKind::Dplr { rank } => {
                let scale = 1.0 / (m as f64).sqrt();
                let row_dist = Normal::new(0.0f64, scale)
                    .map_err(|e| Error::Numeric(e.to_string()))?;
                let mut u = vec![0.0f32; rank * m];
                for x in u.iter_mut().take(m) {
                    *x = scale as f32;
                }
                for x in u.iter_mut().skip(m) {
                    *x = row_dist.sample(&mut rng) as f32;
                }
                let mut e = vec![0.0f32; rank];
                e[0] = 1.0;
                for (idx, v) in e.iter_mut().enumerate().skip(1) {
                    *v = if idx % 2 == 1 { 1.0 } else { -1.0 };
                }
                InteractionSpec::Dplr(Dplr::new(rank, m, u, e)?)
            }
        };
        ModelParams::new(schema, k, 0.0, vec![0.0; n], w, interaction)
    }
}

/// Model variants constructible from scratch. Pruned models are derived from
/// a trained dense model rather than initialized directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VariantKind {
    Fm,
    Fwfm,
    Dplr { rank: usize },
}

/// Build the field-vector matrix V for a fully specified sample.
pub fn gather_field_vectors(sample: &Sample, params: &ModelParams) -> Result<FieldVectors> {
    let m = params.num_fields();
    let k = params.k;
    let mut v = vec![0.0f64; m * k];
    for e in &sample.entries {
        let global = params.global_id(e.field as usize, e.id)?;
        let row = params.embedding_row(global);
        let out = &mut v[e.field as usize * k..(e.field as usize + 1) * k];
        for (o, &x) in out.iter_mut().zip(row) {
            *o += e.weight * x as f64;
        }
    }
    Ok(FieldVectors::from_rows(m, k, v))
}

/// Pairwise interaction by the explicit double loop over the materialized
/// dense matrix. Quadratic and slow on purpose: this is the oracle every
/// fast path is checked against.
pub fn pairwise_bruteforce(v: &FieldVectors, interaction: &InteractionSpec) -> Result<f64> {
    let m = v.num_fields();
    let r = materialize_r(interaction, m)?;
    let mut acc = 0.0f64;
    for i in 0..m {
        for j in (i + 1)..m {
            let rij = r.get(i, j);
            if rij == 0.0 {
                continue;
            }
            let dot: f64 = v.row(i).iter().zip(v.row(j)).map(|(a, b)| a * b).sum();
            acc += dot * rij;
        }
    }
    Ok(acc)
}

/// Linear-time FM pairwise term: `1/2 (||sum_i v_i||^2 - sum_i ||v_i||^2)`.
pub fn pairwise_fm_fast(v: &FieldVectors) -> f64 {
    let k = v.dim();
    let mut total = vec![0.0f64; k];
    let mut sq_sum = 0.0f64;
    for i in 0..v.num_fields() {
        for (t, &x) in total.iter_mut().zip(v.row(i)) {
            *t += x;
        }
        sq_sum += v.sq_norm(i);
    }
    let total_sq: f64 = total.iter().map(|x| x * x).sum();
    0.5 * (total_sq - sq_sum)
}

/// DPLR pairwise term: `1/2 (sum_i d_i ||v_i||^2 + sum_r e_r ||P_r||^2)`
/// with `P = U V`. Costs O(rank * m * k).
pub fn pairwise_dplr_fast(v: &FieldVectors, dplr: &Dplr) -> Result<f64> {
    let m = v.num_fields();
    if dplr.num_fields() != m {
        return Err(Error::Dimension(format!(
            "DPLR has {} field columns but V has {m} rows",
            dplr.num_fields()
        )));
    }
    let k = v.dim();
    let mut diag_part = 0.0f64;
    for (i, &di) in dplr.d().iter().enumerate() {
        diag_part += di * v.sq_norm(i);
    }
    let mut low_rank_part = 0.0f64;
    let mut p_row = vec![0.0f64; k];
    for r in 0..dplr.rank() {
        p_row.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..m {
            let uri = dplr.u_at(r, i) as f64;
            if uri == 0.0 {
                continue;
            }
            for (p, &x) in p_row.iter_mut().zip(v.row(i)) {
                *p += uri * x;
            }
        }
        let norm_sq: f64 = p_row.iter().map(|x| x * x).sum();
        low_rank_part += dplr.e()[r] as f64 * norm_sq;
    }
    Ok(0.5 * (diag_part + low_rank_part))
}

/// Pairwise term over the retained entries only; O(keep_count * k).
pub fn pairwise_pruned(v: &FieldVectors, pruned: &PrunedSparse) -> Result<f64> {
    if pruned.num_fields() != v.num_fields() {
        return Err(Error::Dimension(format!(
            "pruned interaction has {} fields but V has {}",
            pruned.num_fields(),
            v.num_fields()
        )));
    }
    let mut acc = 0.0f64;
    for &(i, j, r) in pruned.entries() {
        let dot: f64 =
            v.row(i as usize).iter().zip(v.row(j as usize)).map(|(a, b)| a * b).sum();
        acc += dot * r as f64;
    }
    Ok(acc)
}

/// Pairwise term of a dense symmetric matrix, looping over field pairs.
pub fn pairwise_dense(v: &FieldVectors, dense: &DenseSym) -> Result<f64> {
    if dense.num_fields() != v.num_fields() {
        return Err(Error::Dimension(format!(
            "dense interaction has {} fields but V has {}",
            dense.num_fields(),
            v.num_fields()
        )));
    }
    let m = v.num_fields();
    let mut acc = 0.0f64;
    for i in 0..m {
        for j in (i + 1)..m {
            let rij = dense.get(i, j) as f64;
            if rij == 0.0 {
                continue;
            }
            let dot: f64 = v.row(i).iter().zip(v.row(j)).map(|(a, b)| a * b).sum();
            acc += dot * rij;
        }
    }
    Ok(acc)
}

/// Linear part: `b0 + sum (weight * b[id])` over all active features.
pub fn linear_term(sample: &Sample, params: &ModelParams) -> Result<f64> {
    let mut acc = params.b0 as f64;
    for e in &sample.entries {
        let global = params.global_id(e.field as usize, e.id)?;
        acc += e.weight * params.b[global] as f64;
    }
    Ok(acc)
}

/// Raw model score for a fully specified sample, using the variant's fast
/// pairwise path. Classification consumers apply the sigmoid themselves.
pub fn forward(sample: &Sample, params: &ModelParams) -> Result<f64> {
    let v = gather_field_vectors(sample, params)?;
    let pairwise = match &params.interaction {
        InteractionSpec::FmImplicit => pairwise_fm_fast(&v),
        InteractionSpec::DenseSym(dense) => pairwise_dense(&v, dense)?,
        InteractionSpec::PrunedSparse(pruned) => pairwise_pruned(&v, pruned)?,
        InteractionSpec::Dplr(dplr) => pairwise_dplr_fast(&v, dplr)?,
    };
    Ok(linear_term(sample, params)? + pairwise)
}
