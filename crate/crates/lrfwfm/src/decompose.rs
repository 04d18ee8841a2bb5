//! Post-training transformations of the field interaction matrix:
//! magnitude pruning, a post-hoc diagonal-plus-low-rank fit, and the error
//! spectrum diagnostic that bounds how much an approximation can move
//! scores.
//!
//! The post-hoc fit alternates two exact sub-steps: the best Frobenius
//! rank-r approximation of `R - diag(d)` via eigen-truncation, then the best
//! free diagonal for the fixed low-rank part. Each sub-step is optimal given
//! the other, so the objective never increases. Because the target has a
//! zero diagonal, the optimal free diagonal coincides with the derived-
//! diagonal rule of the model form; the fit is carried in `f64` and the cast
//! to `f32` model parameters is reported separately.

use crate::error::{Error, Result};
use crate::linalg::{sym_eig, sym_singular_values, trace_form, Mat};
use crate::model::{
    materialize_r, num_pairs, DenseSym, Dplr, FieldVectors, InteractionSpec, PrunedSparse,
};

/// How many interaction entries survive a pruning pass: either a raw count
/// or the count matching the parameter budget of a rank-r DPLR model,
/// `r * (m + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneBudget {
    KeepCount(usize),
    RankEquivalent(usize),
}

impl PruneBudget {
    pub fn keep_count(&self, m: usize) -> usize {
        match *self {
            PruneBudget::KeepCount(q) => q,
            PruneBudget::RankEquivalent(rank) => rank * (m + 1),
        }
    }
}

/// Percentage of interaction entries a keep-count retains.
pub fn sparsity_percent(keep: usize, m: usize) -> f64 {
    100.0 * keep as f64 / num_pairs(m) as f64
}

/// Keep the `q` largest-magnitude upper-triangular entries. Ties are broken
/// toward the lexicographically smaller (i, j).
pub fn prune(dense: &DenseSym, budget: &PruneBudget) -> Result<PrunedSparse> {
    let m = dense.num_fields();
    let q = budget.keep_count(m);
    if q > num_pairs(m) {
        return Err(Error::Data(format!(
            "cannot keep {q} of {} interaction entries",
            num_pairs(m)
        )));
    }
    let mut entries: Vec<(u32, u32, f32)> = Vec::with_capacity(num_pairs(m));
    for i in 0..m {
        for j in (i + 1)..m {
            entries.push((i as u32, j as u32, dense.get(i, j)));
        }
    }
    entries.sort_by(|a, b| {
        b.2.abs()
            .partial_cmp(&a.2.abs())
            .expect("interaction weights are finite")
            .then_with(|| (a.0, a.1).cmp(&(b.0, b.1)))
    });
    entries.truncate(q);
    PrunedSparse::new(m, entries)
}

/// Result of the alternating post-hoc fit, in full precision.
#[derive(Debug, Clone)]
pub struct PosthocFit {
    pub rank: usize,
    /// rank x m, row-major.
    pub u: Vec<f64>,
    pub e: Vec<f64>,
    pub d: Vec<f64>,
    /// Frobenius norm of `R - (U^T diag(e) U + diag(d))` at the last iterate.
    pub frobenius_error: f64,
    /// Objective value after every iteration; non-increasing.
    pub objective_history: Vec<f64>,
}

impl PosthocFit {
    /// Cast to the f32 model form, re-deriving the diagonal.
    pub fn to_model_form(&self, m: usize) -> Result<Dplr> {
        let u: Vec<f32> = self.u.iter().map(|&x| x as f32).collect();
        let e: Vec<f32> = self.e.iter().map(|&x| x as f32).collect();
        Dplr::new(self.rank, m, u, e)
    }
}

fn reconstruction_error(r: &Mat, u: &[f64], e: &[f64], d: &[f64], rank: usize) -> f64 {
    let m = r.rows();
    let mut acc = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            let mut approx = if i == j { d[i] } else { 0.0 };
            for t in 0..rank {
                approx += e[t] * u[t * m + i] * u[t * m + j];
            }
            let diff = r.get(i, j) - approx;
            acc += diff * diff;
        }
    }
    acc.sqrt()
}

/// Alternating minimization of `||R - (U^T diag(e) U + diag(d))||_F` over a
/// fixed rank. Stops when the objective improves by less than `tol` or after
/// `max_iters` iterations.
pub fn posthoc_dplr(
    dense: &DenseSym,
    rank: usize,
    max_iters: usize,
    tol: f64,
) -> Result<PosthocFit> {
    if rank == 0 {
        return Err(Error::Data("post-hoc fit needs rank >= 1".into()));
    }
    let m = dense.num_fields();
    let r = materialize_r(&InteractionSpec::DenseSym(dense.clone()), m)?;
    let rank = rank.min(m);

    let mut d = vec![0.0f64; m];
    let mut u = vec![0.0f64; rank * m];
    let mut e = vec![0.0f64; rank];
    let mut history = Vec::new();
    let mut last = f64::INFINITY;

    for _ in 0..max_iters.max(1) {
        // (1) best rank-r part of R - diag(d): keep the largest-magnitude
        // eigenpairs (eigenvalues arrive magnitude-sorted).
        let mut target = r.clone();
        for (i, &di) in d.iter().enumerate() {
            target.set(i, i, target.get(i, i) - di);
        }
        let eig = sym_eig(&target)?;
        for t in 0..rank {
            e[t] = eig.eigenvalues[t];
            for i in 0..m {
                u[t * m + i] = eig.eigenvectors.get(i, t);
            }
        }
        // (2) best free diagonal given the low-rank part; with diag(R) = 0
        // this is exactly the derived-diagonal rule.
        for (i, di) in d.iter_mut().enumerate() {
            let mut low = 0.0f64;
            for t in 0..rank {
                low += e[t] * u[t * m + i] * u[t * m + i];
            }
            *di = r.get(i, i) - low;
        }
        let objective = reconstruction_error(&r, &u, &e, &d, rank);
        history.push(objective);
        if last - objective < tol {
            break;
        }
        last = objective;
    }

    Ok(PosthocFit {
        rank,
        u,
        e,
        d,
        frobenius_error: *history.last().expect("at least one iteration ran"),
        objective_history: history,
    })
}

/// Frobenius distance between a dense target and a materialized variant.
pub fn model_form_error(dense: &DenseSym, approx: &InteractionSpec) -> Result<f64> {
    let m = dense.num_fields();
    let r = materialize_r(&InteractionSpec::DenseSym(dense.clone()), m)?;
    let a = materialize_r(approx, m)?;
    let mut acc = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            let diff = r.get(i, j) - a.get(i, j);
            acc += diff * diff;
        }
    }
    Ok(acc.sqrt())
}

/// Spectrum diagnostic of an approximation `R~ = R + E`: the singular values
/// of `E`, the eigenvalues of `V V^T`, their inner product (the trace-
/// inequality bound on the score perturbation) and the exact signed value
/// `trace(V^T E V)` for comparison.
#[derive(Debug, Clone)]
pub struct SpectrumReport {
    pub sigma_error: Vec<f64>,
    pub lambda_vvt: Vec<f64>,
    pub bound: f64,
    pub exact_trace: f64,
}

pub fn error_spectrum(
    dense: &DenseSym,
    approx: &InteractionSpec,
    v: &FieldVectors,
) -> Result<SpectrumReport> {
    let m = dense.num_fields();
    if v.num_fields() != m {
        return Err(Error::Dimension(format!(
            "field vectors have {} rows but the interaction matrix is {m}x{m}",
            v.num_fields()
        )));
    }
    let r = materialize_r(&InteractionSpec::DenseSym(dense.clone()), m)?;
    let a = materialize_r(approx, m)?;
    let mut err = Mat::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            err.set(i, j, a.get(i, j) - r.get(i, j));
        }
    }
    let sigma_error = sym_singular_values(&err)?;
    let vm = v.as_mat();
    let gram = crate::linalg::matmul(&vm, &vm.transpose())?;
    let lambda_vvt = sym_eig(&gram)?.eigenvalues;
    let bound: f64 = lambda_vvt.iter().zip(&sigma_error).map(|(l, s)| l * s).sum();
    let exact_trace = trace_form(&vm, &err)?;
    Ok(SpectrumReport { sigma_error, lambda_vvt, bound, exact_trace })
}

/// Render the report in the delimited text layout consumed by plotting:
/// `index,sigma_error,lambda_vvt,cumulative_bound` with one header line.
pub fn spectrum_report_text(report: &SpectrumReport) -> String {
    let mut out = String::from("index,sigma_error,lambda_vvt,cumulative_bound\n");
    let mut cumulative = 0.0f64;
    for (i, (s, l)) in report.sigma_error.iter().zip(&report.lambda_vvt).enumerate() {
        cumulative += s * l;
        out.push_str(&format!("{i},{s:.10e},{l:.10e},{cumulative:.10e}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_dense(rng: &mut ChaCha8Rng, m: usize) -> DenseSym {
        let tri: Vec<f32> = (0..num_pairs(m)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseSym::from_upper(m, tri).unwrap()
    }

    fn fm_matrix(m: usize) -> DenseSym {
        DenseSym::from_upper(m, vec![1.0; num_pairs(m)]).unwrap()
    }

    #[test]
    fn prune_budgets_match_table_sparsities() {
        // rank-equivalent budgets at the two public CTR field counts
        assert_eq!(PruneBudget::RankEquivalent(3).keep_count(39), 120);
        let s = sparsity_percent(120, 39);
        assert!((s - 16.2).abs() < 0.05, "{s}");
        assert_eq!(PruneBudget::RankEquivalent(1).keep_count(33), 34);
        let s = sparsity_percent(34, 33);
        assert!((s - 6.4).abs() < 0.05, "{s}");
    }

    #[test]
    fn prune_zero_keeps_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dense = random_dense(&mut rng, 6);
        let pruned = prune(&dense, &PruneBudget::KeepCount(0)).unwrap();
        assert_eq!(pruned.keep_count(), 0);
    }

    #[test]
    fn prune_full_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = 7;
        let dense = random_dense(&mut rng, m);
        let pruned = prune(&dense, &PruneBudget::KeepCount(num_pairs(m))).unwrap();
        let r = materialize_r(&InteractionSpec::PrunedSparse(pruned), m).unwrap();
        let want = materialize_r(&InteractionSpec::DenseSym(dense), m).unwrap();
        assert_eq!(r.data(), want.data());
    }

    #[test]
    fn prune_keeps_largest_magnitudes() {
        let mut dense = DenseSym::new(4);
        dense.set_pair(0, 1, 0.1);
        dense.set_pair(0, 2, -0.9);
        dense.set_pair(0, 3, 0.5);
        dense.set_pair(1, 2, 0.05);
        dense.set_pair(1, 3, -0.5); // tie with (0,3): lexicographic order wins
        dense.set_pair(2, 3, 0.2);
        let pruned = prune(&dense, &PruneBudget::KeepCount(2)).unwrap();
        let kept: Vec<(u32, u32)> = pruned.entries().iter().map(|&(i, j, _)| (i, j)).collect();
        assert_eq!(kept, vec![(0, 2), (0, 3)]);
    }

    #[test]
    fn prune_rejects_oversized_budget() {
        let dense = fm_matrix(4);
        assert!(prune(&dense, &PruneBudget::KeepCount(7)).is_err());
    }

    #[test]
    fn posthoc_recovers_fm_matrix_at_rank_one() {
        for m in [3usize, 5, 8] {
            let fit = posthoc_dplr(&fm_matrix(m), 1, 200, 1e-13).unwrap();
            assert!(fit.frobenius_error <= 1e-8, "m={m}: error {}", fit.frobenius_error);
        }
    }

    #[test]
    fn posthoc_full_rank_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = 6;
        let dense = random_dense(&mut rng, m);
        let fit = posthoc_dplr(&dense, m, 200, 1e-13).unwrap();
        assert!(fit.frobenius_error <= 1e-10, "error {}", fit.frobenius_error);
    }

    #[test]
    fn posthoc_objective_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let m = rng.gen_range(3..=12);
            let rank = rng.gen_range(1..=4).min(m);
            let dense = random_dense(&mut rng, m);
            let fit = posthoc_dplr(&dense, rank, 60, 1e-12).unwrap();
            for w in fit.objective_history.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-12,
                    "objective increased: {:?}",
                    fit.objective_history
                );
            }
            assert!(*fit.objective_history.last().unwrap() <= fit.objective_history[0] + 1e-12);
        }
    }

    #[test]
    fn posthoc_free_diagonal_matches_derived_rule() {
        // With a zero-diagonal target the optimal free diagonal IS the
        // derived diagonal, so converting to model form only loses f32
        // rounding.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = 8;
        let dense = random_dense(&mut rng, m);
        let fit = posthoc_dplr(&dense, 2, 100, 1e-12).unwrap();
        for i in 0..m {
            let mut low = 0.0f64;
            for t in 0..fit.rank {
                low += fit.e[t] * fit.u[t * m + i] * fit.u[t * m + i];
            }
            assert!((fit.d[i] + low).abs() < 1e-12);
        }
        let model = fit.to_model_form(m).unwrap();
        let cast_err = model_form_error(&dense, &InteractionSpec::Dplr(model)).unwrap();
        assert!(cast_err <= fit.frobenius_error + 1e-4, "cast error {cast_err}");
    }

    #[test]
    fn spectrum_of_exact_approximation_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 5;
        let dense = random_dense(&mut rng, m);
        let v = FieldVectors::from_rows(
            m,
            3,
            (0..m * 3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let report =
            error_spectrum(&dense, &InteractionSpec::DenseSym(dense.clone()), &v).unwrap();
        assert!(report.sigma_error.iter().all(|&s| s == 0.0));
        assert_eq!(report.bound, 0.0);
        assert_eq!(report.exact_trace, 0.0);
    }

    #[test]
    fn error_singular_values_match_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = 5;
        let dense = random_dense(&mut rng, m);
        let approx = InteractionSpec::PrunedSparse(
            prune(&dense, &PruneBudget::KeepCount(3)).unwrap(),
        );
        let v = FieldVectors::from_rows(
            m,
            2,
            (0..m * 2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let report = error_spectrum(&dense, &approx, &v).unwrap();
        // oracle: build E explicitly, |eigenvalues| sorted descending
        let r = materialize_r(&InteractionSpec::DenseSym(dense.clone()), m).unwrap();
        let a = materialize_r(&approx, m).unwrap();
        let mut err = Mat::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                err.set(i, j, a.get(i, j) - r.get(i, j));
            }
        }
        let eig = sym_eig(&err).unwrap();
        for (got, l) in report.sigma_error.iter().zip(&eig.eigenvalues) {
            assert!((got - l.abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn signed_trace_inequality_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let m = rng.gen_range(3..=9);
            let k = rng.gen_range(1..=5);
            let dense = random_dense(&mut rng, m);
            let budget = PruneBudget::KeepCount(rng.gen_range(0..=num_pairs(m)));
            let approx = InteractionSpec::PrunedSparse(prune(&dense, &budget).unwrap());
            let v = FieldVectors::from_rows(
                m,
                k,
                (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            );
            let report = error_spectrum(&dense, &approx, &v).unwrap();
            assert!(
                report.exact_trace <= report.bound + 1e-9,
                "trace {} exceeds bound {}",
                report.exact_trace,
                report.bound
            );
        }
    }

    #[test]
    fn report_text_has_header_and_rows() {
        let report = SpectrumReport {
            sigma_error: vec![2.0, 1.0],
            lambda_vvt: vec![3.0, 0.5],
            bound: 6.5,
            exact_trace: 1.0,
        };
        let text = spectrum_report_text(&report);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "index,sigma_error,lambda_vvt,cumulative_bound");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,"));
    }
}
