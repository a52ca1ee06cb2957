//! Doppler-set recovery from cycle frequencies: permutation least squares
//! followed by classification against the known LoS Doppler.

use nalgebra::{DMatrix, DVector};

use crate::cyclo::CyclePeakList;
use crate::{Error, Result};

/// Number of cycle frequencies produced by `k_u` and `k_j` paths.
pub fn peak_count(k_u: usize, k_j: usize) -> usize {
    (k_u * (k_u + 1) + k_j * (k_j + 1)) / 2
}

/// Solve `K_J^2 + K_J = 2 L_a - K_U (K_U + 1)` for a non-negative integer.
pub fn infer_kj(l_a: usize, k_u: usize) -> Result<usize> {
    let rhs = 2 * l_a as i64 - (k_u * (k_u + 1)) as i64;
    if rhs < 0 {
        return Err(Error::InconsistentPeakCount(format!("{l_a} peaks cannot hold {k_u} UAV paths")));
    }
    let mut k = 0i64;
    while k * (k + 1) < rhs {
        k += 1;
    }
    if k * (k + 1) == rhs {
        Ok(k as usize)
    } else {
        Err(Error::InconsistentPeakCount(format!("{l_a} peaks with {k_u} UAV paths leave no integer jammer path count")))
    }
}

/// Largest consistent peak count not exceeding `count`.
pub fn admissible_count(count: usize, k_u: usize) -> Option<usize> {
    (0..=count).rev().find(|&l| infer_kj(l, k_u).is_ok())
}

/// Structure matrix with rows `2 e_i` for every path, then `e_k + e_h`
/// for UAV pairs `k < h`, then for jammer pairs.
pub fn structure_matrix(k_u: usize, k_j: usize) -> DMatrix<f64> {
    let k = k_u + k_j;
    let mut rows: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut r = vec![0.0; k];
            r[i] = 2.0;
            r
        })
        .collect();
    for (off, n) in [(0, k_u), (k_u, k_j)] {
        for a in 0..n {
            for b in a + 1..n {
                let mut r = vec![0.0; k];
                r[off + a] = 1.0;
                r[off + b] = 1.0;
                rows.push(r);
            }
        }
    }
    DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j])
}

/// Path pair `(k, h)` behind each row of [`structure_matrix`]; self rows
/// have `k == h`.
pub fn row_paths(k_u: usize, k_j: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..k_u + k_j).map(|i| (i, i)).collect();
    for (off, n) in [(0, k_u), (k_u, k_j)] {
        for a in 0..n {
            for b in a + 1..n {
                out.push((off + a, off + b));
            }
        }
    }
    out
}

/// Cycle-frequency vector `B nu` for `nu = (nu_u, nu_j)`.
pub fn cycle_vector(nu_u: &[f64], nu_j: &[f64]) -> Vec<f64> {
    let b = structure_matrix(nu_u.len(), nu_j.len());
    let nu = DVector::from_iterator(nu_u.len() + nu_j.len(), nu_u.iter().chain(nu_j).copied());
    (b * nu).iter().copied().collect()
}

#[derive(Clone, Debug)]
pub struct PermLsProblem {
    pub alpha: Vec<f64>,
    pub b: DMatrix<f64>,
    pub k_u: usize,
    pub k_j: usize,
    /// Projector onto the range of `B`.
    pub pi: DMatrix<f64>,
    /// `(B^T B)^-1 B^T`.
    pinv: DMatrix<f64>,
}

impl PermLsProblem {
    pub fn new(alpha: Vec<f64>, k_u: usize, k_j: usize) -> Result<Self> {
        let l_a = peak_count(k_u, k_j);
        if alpha.len() != l_a {
            return Err(Error::InconsistentPeakCount(format!("{} cycle frequencies, expected {l_a}", alpha.len())));
        }
        let b = structure_matrix(k_u, k_j);
        let btb = b.transpose() * &b;
        let inv = btb.try_inverse().ok_or_else(|| Error::ModelMismatch("structure matrix rank deficient".into()))?;
        let pinv = inv * b.transpose();
        let pi = &b * &pinv;
        Ok(PermLsProblem { alpha, b, k_u, k_j, pi, pinv })
    }

    pub fn l_a(&self) -> usize {
        self.alpha.len()
    }

    /// `x = P^T alpha` where row `i` of the model takes `alpha[perm[i]]`.
    fn permuted(&self, perm: &[usize]) -> DVector<f64> {
        DVector::from_iterator(perm.len(), perm.iter().map(|&j| self.alpha[j]))
    }

    /// `alpha^T P Pi P^T alpha`.
    pub fn objective(&self, perm: &[usize]) -> f64 {
        let x = self.permuted(perm);
        x.dot(&(&self.pi * &x))
    }

    pub fn norm2(&self) -> f64 {
        self.alpha.iter().map(|a| a * a).sum()
    }

    pub fn nu_ls(&self, perm: &[usize]) -> Vec<f64> {
        (&self.pinv * self.permuted(perm)).iter().copied().collect()
    }
}

/// Qualification rule for a permutation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Qualify {
    /// `||alpha||^2 - objective <= rel ||alpha||^2`.
    Analytic { rel: f64 },
    /// Residual RMS of the fit at most `rms`.
    Data { rms: f64 },
}

impl Qualify {
    fn bound(&self, prob: &PermLsProblem) -> f64 {
        match *self {
            Qualify::Analytic { rel } => rel * prob.norm2(),
            Qualify::Data { rms } => rms * rms * prob.l_a() as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PermSolution {
    pub perm: Vec<usize>,
    pub nu: Vec<f64>,
    /// `||(I - Pi) P^T alpha||^2`.
    pub residual: f64,
}

fn partial_residual(b: &DMatrix<f64>, x: &[f64]) -> f64 {
    let d = x.len();
    let bs = b.rows(0, d).into_owned();
    let xs = DVector::from_column_slice(x);
    let svd = bs.clone().svd(true, true);
    match svd.solve(&xs, 1e-12) {
        Ok(nu) => (&xs - &bs * nu).norm_squared(),
        Err(_) => f64::INFINITY,
    }
}

/// Enumerate permutations depth-first, pruning when the least-squares
/// residual of the rows assigned so far already exceeds the bound (adding
/// rows never lowers it). Solutions are sorted by residual.
pub fn solve_permutation_ls(prob: &PermLsProblem, rule: Qualify) -> Result<Vec<PermSolution>> {
    let l_a = prob.l_a();
    if l_a > 10 {
        return Err(Error::Config(format!("{l_a} cycle frequencies exceed the exhaustive regime")));
    }
    let bound = rule.bound(prob);
    let k = prob.k_u + prob.k_j;
    let mut out = Vec::new();
    let mut perm = Vec::with_capacity(l_a);
    let mut used = vec![false; l_a];
    let mut vals = Vec::with_capacity(l_a);
    fn dfs(
        prob: &PermLsProblem,
        k: usize,
        bound: f64,
        perm: &mut Vec<usize>,
        vals: &mut Vec<f64>,
        used: &mut [bool],
        out: &mut Vec<PermSolution>,
    ) {
        let l_a = prob.l_a();
        if perm.len() > k && partial_residual(&prob.b, vals) > bound {
            return;
        }
        if perm.len() == l_a {
            let residual = (prob.norm2() - prob.objective(perm)).max(0.0);
            if residual <= bound {
                out.push(PermSolution { perm: perm.clone(), nu: prob.nu_ls(perm), residual });
            }
            return;
        }
        for j in 0..l_a {
            if used[j] {
                continue;
            }
            used[j] = true;
            perm.push(j);
            vals.push(prob.alpha[j]);
            dfs(prob, k, bound, perm, vals, used, out);
            vals.pop();
            perm.pop();
            used[j] = false;
        }
    }
    dfs(prob, k, bound, &mut perm, &mut vals, &mut used, &mut out);
    if out.is_empty() {
        return Err(Error::ModelMismatch("no permutation reaches the least-squares bound".into()));
    }
    out.sort_by(|a, b| a.residual.total_cmp(&b.residual));
    Ok(out)
}

/// Recovered per-link Doppler sets.
#[derive(Clone, Debug, PartialEq)]
pub struct DopplerSets {
    pub uav: Vec<f64>,
    pub jam: Vec<f64>,
    pub k_j: usize,
}

/// Match tolerance for classification.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifyTol {
    /// Relative error threshold on `|nu + nu_U1 - alpha| / |alpha|`.
    pub rel: f64,
    /// Absolute floor on the same difference.
    pub abs: f64,
}

impl ClassifyTol {
    pub const ANALYTIC: ClassifyTol = ClassifyTol { rel: 1e-9, abs: 0.0 };
}

/// Assign each entry of a solution to the UAV set when `nu + nu_U1`
/// matches some observed cycle frequency. Every qualifying solution is
/// scanned in turn; the first that yields `K_U` UAV members is used.
pub fn classify_links(solutions: &[PermSolution], k_u: usize, nu_u1: f64, alpha: &[f64], tol: ClassifyTol) -> Result<DopplerSets> {
    let matches = |nu: f64| {
        alpha.iter().any(|&a| {
            let d = (nu + nu_u1 - a).abs();
            d < tol.rel * a.abs() || d < tol.abs
        })
    };
    for sol in solutions {
        let mut uav = Vec::new();
        let mut jam = Vec::new();
        for &nu in &sol.nu {
            if uav.len() < k_u && matches(nu) {
                uav.push(nu);
            } else {
                jam.push(nu);
            }
        }
        if uav.len() == k_u {
            let k_j = jam.len();
            return Ok(DopplerSets { uav, jam, k_j });
        }
    }
    Err(Error::Classification(format!("no solution has {k_u} entries consistent with the LoS Doppler")))
}

/// Peaks considered by the data-driven search, strongest first.
pub const MAX_SEARCH_PEAKS: usize = 12;
/// Most peaks the data-driven search may leave unexplained.
pub const MAX_DROPPED_PEAKS: usize = 3;
/// Most structure rows the data-driven search may leave unobserved.
pub const MAX_MISSING_ROWS: usize = 2;

/// Observed cycle frequencies matched to a subset of the rows of `B`.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignSolution {
    /// Row of `B` assigned to each observed frequency.
    pub rows: Vec<usize>,
    pub nu: Vec<f64>,
    pub residual: f64,
    /// `B nu` over all rows, unobserved ones included.
    pub fitted: Vec<f64>,
}

fn ls_rows(b: &DMatrix<f64>, rows: &[usize], x: &[f64]) -> (Option<DVector<f64>>, f64, usize) {
    let bs = DMatrix::from_fn(rows.len(), b.ncols(), |i, j| b[(rows[i], j)]);
    let xs = DVector::from_column_slice(x);
    let svd = bs.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&v| v > 1e-9 * smax.max(1.0)).count();
    match svd.solve(&xs, 1e-9 * smax.max(1.0)) {
        Ok(nu) => {
            let r = (&xs - &bs * &nu).norm_squared();
            (Some(nu), r, rank)
        }
        Err(_) => (None, f64::INFINITY, rank),
    }
}

/// Generalization of the permutation problem to fewer observations than
/// rows: every injective map from observed frequencies to rows of `B`
/// whose selected rows keep full column rank and whose least-squares
/// residual stays within `bound`. Only self rows `2 nu_k` may go
/// unobserved: a cross peak carries `g_k g_h` and is at least as strong as
/// the weaker of the two self peaks, so it cannot vanish while both of
/// those are visible. Sorted by residual.
pub fn solve_assignment_ls(alpha: &[f64], k_u: usize, k_j: usize, bound: f64) -> Result<Vec<AssignSolution>> {
    let b = structure_matrix(k_u, k_j);
    let (l_a, k) = (b.nrows(), b.ncols());
    if alpha.len() > l_a || l_a > 10 {
        return Err(Error::Config(format!("{} observations for {l_a} rows", alpha.len())));
    }
    let mut out = Vec::new();
    let mut rows = Vec::with_capacity(alpha.len());
    let mut used = vec![false; l_a];
    #[allow(clippy::too_many_arguments)]
    fn dfs(b: &DMatrix<f64>, k: usize, alpha: &[f64], bound: f64, rows: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<AssignSolution>) {
        let d = rows.len();
        if d > k && ls_rows(b, rows, &alpha[..d]).1 > bound {
            return;
        }
        if d == alpha.len() {
            let (nu, residual, rank) = ls_rows(b, rows, alpha);
            let cross_seen = (k..b.nrows()).all(|r| used[r]);
            if let (Some(nu), true, true, true) = (nu, rank == k, residual <= bound, cross_seen) {
                let fitted = (b * &nu).iter().copied().collect();
                out.push(AssignSolution { rows: rows.clone(), nu: nu.iter().copied().collect(), residual, fitted });
            }
            return;
        }
        for r in 0..b.nrows() {
            if used[r] {
                continue;
            }
            used[r] = true;
            rows.push(r);
            dfs(b, k, alpha, bound, rows, used, out);
            rows.pop();
            used[r] = false;
        }
    }
    dfs(&b, k, alpha, bound, &mut rows, &mut used, &mut out);
    if out.is_empty() {
        return Err(Error::ModelMismatch("no row assignment reaches the least-squares bound".into()));
    }
    out.sort_by(|a, b| a.residual.total_cmp(&b.residual));
    Ok(out)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// An unobserved self peak `2 nu_k` means path `k` is weak, so every
/// observed cross peak of `k` with a path `h` whose self peak is observed
/// must score below that self peak (`|g_k g_h| < |g_h|^2`).
fn missing_rows_plausible(sol: &AssignSolution, k_u: usize, k_j: usize, scores: &[f64]) -> bool {
    let pairs = row_paths(k_u, k_j);
    let k = k_u + k_j;
    let mut self_score = vec![None; k];
    for (i, &r) in sol.rows.iter().enumerate() {
        if r < k {
            self_score[r] = Some(scores[i]);
        }
    }
    sol.rows.iter().enumerate().all(|(i, &r)| {
        let (a, b) = pairs[r];
        if a == b {
            return true;
        }
        match (self_score[a], self_score[b]) {
            (None, Some(sb)) => scores[i] <= sb,
            (Some(sa), None) => scores[i] <= sa,
            _ => true,
        }
    })
}

/// Full data-driven step. Peaks that fit the model exactly are handled by
/// the permutation problem. A path too weak for its own peak `2 nu` can
/// still show up through its cross peaks, and a spurious peak can slip
/// over the threshold, so the search also allows unobserved structure rows
/// and unexplained peaks. Candidates are ranked by peaks left unexplained,
/// then rows left unobserved, then jammer path count; within a rank the
/// smallest residual wins (ties: larger total score). Classification of an
/// assignment with unobserved rows matches against the fitted vector
/// `B nu`. Returns the sets and the cycle frequencies used.
pub fn estimate_dopplers(peaks: &CyclePeakList, k_u: usize, nu_u1: f64) -> Result<(DopplerSets, Vec<f64>)> {
    let mut idx: Vec<usize> = (0..peaks.alphas.len()).collect();
    idx.sort_by(|&a, &b| peaks.scores[b].total_cmp(&peaks.scores[a]).then(a.cmp(&b)));
    idx.truncate(MAX_SEARCH_PEAKS);
    let n = idx.len();
    let rms = 10.0 * peaks.resolution;
    let tol = ClassifyTol { rel: 1e-3, abs: 4.0 * peaks.resolution };
    let mut last_err = Error::InconsistentPeakCount(format!("{n} peaks for {k_u} UAV paths"));
    for dropped in 0..=MAX_DROPPED_PEAKS.min(n.saturating_sub(1)) {
        let size = n - dropped;
        let mut models: Vec<(usize, usize)> = (0..=4)
            .filter_map(|k_j| {
                let l_a = peak_count(k_u, k_j);
                let missing = l_a.checked_sub(size)?;
                let ok = l_a <= 10 && missing <= MAX_MISSING_ROWS && (missing == 0 || size > k_u + k_j);
                ok.then_some((missing, k_j))
            })
            .collect();
        models.sort();
        for (missing, k_j) in models {
            let mut best: Option<(f64, f64, DopplerSets, Vec<f64>)> = None;
            for sub in combinations(n, size) {
                let mut obs: Vec<(f64, f64)> = sub.iter().map(|&i| (peaks.alphas[idx[i]], peaks.scores[idx[i]])).collect();
                obs.sort_by(|a, b| a.0.total_cmp(&b.0));
                let alpha: Vec<f64> = obs.iter().map(|o| o.0).collect();
                let obs_scores: Vec<f64> = obs.iter().map(|o| o.1).collect();
                let score: f64 = obs_scores.iter().sum();
                let attempt = if missing == 0 {
                    PermLsProblem::new(alpha.clone(), k_u, k_j)
                        .and_then(|prob| solve_permutation_ls(&prob, Qualify::Data { rms }))
                        .and_then(|sols| Ok((sols[0].residual, classify_links(&sols, k_u, nu_u1, &alpha, tol)?)))
                } else {
                    solve_assignment_ls(&alpha, k_u, k_j, rms * rms * size as f64).and_then(|sols| {
                        let mut err = Error::Classification("no assignment classifies".into());
                        for s in sols.iter().filter(|s| missing_rows_plausible(s, k_u, k_j, &obs_scores)) {
                            let one = [PermSolution { perm: s.rows.clone(), nu: s.nu.clone(), residual: s.residual }];
                            match classify_links(&one, k_u, nu_u1, &s.fitted, tol) {
                                Ok(sets) => return Ok((s.residual, sets)),
                                Err(e) => err = e,
                            }
                        }
                        Err(err)
                    })
                };
                match attempt {
                    Ok((res, sets)) => {
                        if best.as_ref().is_none_or(|b| res < b.0 || (res == b.0 && score > b.1)) {
                            best = Some((res, score, sets, alpha));
                        }
                    }
                    Err(e) => last_err = e,
                }
            }
            if let Some((_, _, sets, alpha)) = best {
                return Ok((sets, alpha));
            }
        }
    }
    Err(last_err)
}
