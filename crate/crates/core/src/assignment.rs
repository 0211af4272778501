//! Label-assignment strategies over a [`LossMatrix`]: exhaustive PIT,
//! Hungarian selection, fixed assignment (PIT-fix) and SinkPIT soft
//! assignment.

use crate::types::{LossMatrix, Permutation};
use crate::{Error, Result};

/// Outcome of an assignment strategy. `total_loss` is the mean of the
/// selected pairwise losses; `soft` marks SinkPIT-style weighted losses.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub permutation: Permutation,
    pub total_loss: f64,
    pub soft: bool,
}

/// Doubly stochastic transport plan produced by Sinkhorn normalization of
/// the Gibbs kernel `exp(-beta * C)`.
#[derive(Debug, Clone)]
pub struct SinkhornPlan {
    n: usize,
    gamma: Vec<f64>,
    pub beta: f64,
    pub iterations: usize,
}

impl SinkhornPlan {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gamma(&self, i: usize, j: usize) -> f64 {
        self.gamma[i * self.n + j]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.gamma[i * self.n..(i + 1) * self.n].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> f64 {
        (0..self.n).map(|i| self.gamma(i, j)).sum()
    }
}

/// Enumerates permutations of `0..n` in lexicographic order.
pub fn permutations_lex(n: usize) -> Vec<Permutation> {
    let mut out = Vec::new();
    let mut cur = (0..n).collect::<Vec<usize>>();
    loop {
        out.push(Permutation::new(cur.clone()).expect("valid by construction"));
        // next_permutation
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| cur[i] < cur[i + 1]) else {
            break;
        };
        let j = (i + 1..n).rev().find(|&j| cur[j] > cur[i]).unwrap();
        cur.swap(i, j);
        cur[i + 1..].reverse();
    }
    out
}

/// Exhaustive traversal of all `n!` assignments; ties go to the
/// lexicographically smallest mapping.
pub fn exhaustive_select(matrix: &LossMatrix) -> Result<AssignmentResult> {
    let n = matrix.n();
    let mut best: Option<(Permutation, f64)> = None;
    for perm in permutations_lex(n) {
        let loss = matrix.mean_under(&perm)?;
        match &best {
            Some((_, b)) if loss >= *b => {}
            _ => best = Some((perm, loss)),
        }
    }
    let (permutation, total_loss) = best.expect("n >= 1");
    Ok(AssignmentResult {
        permutation,
        total_loss,
        soft: false,
    })
}

/// Minimum-cost assignment via the Hungarian algorithm with potentials
/// (O(n^3)). Same minimal total loss as [`exhaustive_select`]; the chosen
/// permutation may differ only under ties.
pub fn hungarian_select(matrix: &LossMatrix) -> Result<AssignmentResult> {
    let n = matrix.n();
    // 1-based potentials; p[j] is the row matched to column j.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = matrix.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut mapping = vec![0usize; n];
    for j in 1..=n {
        mapping[p[j] - 1] = j - 1;
    }
    let permutation = Permutation::new(mapping)?;
    let total_loss = matrix.mean_under(&permutation)?;
    Ok(AssignmentResult {
        permutation,
        total_loss,
        soft: false,
    })
}

/// PIT selection: exhaustive enumeration for n <= 4, Hungarian above.
pub fn pit_select(matrix: &LossMatrix) -> Result<AssignmentResult> {
    if matrix.n() <= 4 {
        exhaustive_select(matrix)
    } else {
        hungarian_select(matrix)
    }
}

/// Loss under a caller-supplied permutation (PIT-fix). Never below the
/// PIT minimum.
pub fn fixed_assignment_loss(matrix: &LossMatrix, fixed: &Permutation) -> Result<AssignmentResult> {
    let total_loss = matrix.mean_under(fixed)?;
    Ok(AssignmentResult {
        permutation: fixed.clone(),
        total_loss,
        soft: false,
    })
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = terms.collect();
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// SinkPIT soft assignment: Sinkhorn normalization (log domain) of
/// `exp(-beta * C)` into a doubly stochastic plan, and the weighted loss
/// `(1/n) * sum_ij gamma[i][j] * C[i][j]`.
///
/// The plan is treated as a constant weight per step; the loss does not
/// backpropagate through gamma.
pub fn sinkpit_loss(
    matrix: &LossMatrix,
    beta: f64,
    iterations: usize,
) -> Result<(f64, SinkhornPlan)> {
    if !(beta > 0.0) {
        return Err(Error::NonPositiveBeta(beta));
    }
    if iterations == 0 {
        return Err(Error::ZeroIterations);
    }
    let n = matrix.n();
    let log_k: Vec<f64> = matrix.entries().iter().map(|&c| -beta * c).collect();
    let mut fu = vec![0.0f64; n];
    let mut fv = vec![0.0f64; n];
    for _ in 0..iterations {
        for i in 0..n {
            fu[i] = -log_sum_exp((0..n).map(|j| log_k[i * n + j] + fv[j]));
        }
        for j in 0..n {
            fv[j] = -log_sum_exp((0..n).map(|i| log_k[i * n + j] + fu[i]));
        }
    }
    let mut gamma = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            gamma[i * n + j] = (log_k[i * n + j] + fu[i] + fv[j]).exp();
        }
    }
    let soft_loss = gamma
        .iter()
        .zip(matrix.entries())
        .map(|(g, c)| g * c)
        .sum::<f64>()
        / n as f64;
    Ok((
        soft_loss,
        SinkhornPlan {
            n,
            gamma,
            beta,
            iterations,
        },
    ))
}

/// Training-time inverse-temperature schedule for SinkPIT: geometric ramp
/// from `beta_start` to `beta_end` over the first half of the epochs, then
/// constant at `beta_end`.
pub fn sinkpit_beta_schedule(epoch: usize, total_epochs: usize, beta_start: f64, beta_end: f64) -> f64 {
    let half = (total_epochs / 2).max(1);
    if epoch >= half || half == 1 {
        return beta_end;
    }
    let t = (epoch.saturating_sub(1)) as f64 / (half - 1) as f64;
    beta_start * (beta_end / beta_start).powf(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn m(rows: &[Vec<f64>]) -> LossMatrix {
        LossMatrix::from_rows(rows).unwrap()
    }

    fn random_matrix(rng: &mut ChaCha20Rng, n: usize) -> LossMatrix {
        LossMatrix::from_flat(n, (0..n * n).map(|_| rng.gen_range(-10.0..10.0)).collect())
            .unwrap()
    }

    #[test]
    fn pit_select_hand_cases() {
        let r = pit_select(&m(&[vec![0.0, 5.0], vec![5.0, 0.0]])).unwrap();
        assert_eq!(r.permutation.mapping(), &[0, 1]);
        assert_eq!(r.total_loss, 0.0);

        let r = pit_select(&m(&[vec![3.0, 1.0], vec![2.0, 4.0]])).unwrap();
        assert_eq!(r.permutation.mapping(), &[1, 0]);
        assert_eq!(r.total_loss, 1.5);
    }

    #[test]
    fn pit_ties_break_lexicographically() {
        let r = pit_select(&m(&[vec![1.0, 1.0], vec![1.0, 1.0]])).unwrap();
        assert_eq!(r.permutation.mapping(), &[0, 1]);
        assert_eq!(r.total_loss, 1.0);
    }

    #[test]
    fn hungarian_matches_exhaustive_up_to_n7() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for n in 1..=7 {
            for _ in 0..50 {
                let mat = random_matrix(&mut rng, n);
                let a = exhaustive_select(&mat).unwrap();
                let b = hungarian_select(&mat).unwrap();
                assert_eq!(a.total_loss, b.total_loss, "n={n}");
            }
        }
    }

    #[test]
    fn hungarian_constant_matrix_ties() {
        let r = hungarian_select(&m(&[vec![2.5; 3], vec![2.5; 3], vec![2.5; 3]])).unwrap();
        assert_eq!(r.total_loss, 2.5);
    }

    #[test]
    fn fixed_assignment_never_beats_pit() {
        let mat = m(&[vec![3.0, 1.0], vec![2.0, 4.0]]);
        let id = Permutation::identity(2);
        let r = fixed_assignment_loss(&mat, &id).unwrap();
        assert_eq!(r.total_loss, 3.5);

        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=5);
            let mat = random_matrix(&mut rng, n);
            let pit = pit_select(&mat).unwrap();
            for sigma in permutations_lex(n) {
                let fixed = fixed_assignment_loss(&mat, &sigma).unwrap();
                assert!(fixed.total_loss >= pit.total_loss - 1e-12);
                if sigma == pit.permutation {
                    assert_eq!(fixed.total_loss, pit.total_loss);
                }
            }
        }
    }

    #[test]
    fn sinkhorn_doubly_stochastic_and_limits() {
        let mat = m(&[vec![0.0, 10.0], vec![10.0, 0.0]]);
        let (_, plan) = sinkpit_loss(&mat, 1.0, 50).unwrap();
        for i in 0..2 {
            assert!((plan.row_sum(i) - 1.0).abs() < 1e-6);
            assert!((plan.col_sum(i) - 1.0).abs() < 1e-6);
        }

        // constant matrix: uniform plan, soft loss equals the constant
        let c = 3.25;
        let (loss, plan) = sinkpit_loss(&m(&[vec![c; 3], vec![c; 3], vec![c; 3]]), 1.0, 50).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((plan.gamma(i, j) - 1.0 / 3.0).abs() < 1e-9);
            }
        }
        assert!((loss - c).abs() < 1e-9);

        // large beta approaches the hard PIT loss on unique-optimum
        // matrices. Sinkhorn's contraction factor degrades like
        // 1 - exp(-beta * gap) on generic matrices, so "unique optimum"
        // must hold entrywise: the optimal pairing is the strict minimum
        // of its row and column. Such matrices converge in a few sweeps.
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mat = dominant_optimum_matrix(&mut rng, 3);
            let pit = exhaustive_select(&mat).unwrap();
            let (soft, _) = sinkpit_loss(&mat, 1e3, 50).unwrap();
            assert!((soft - pit.total_loss).abs() < 1e-3);
            assert!(soft >= pit.total_loss - 1e-9);
        }
    }

    /// Random matrix whose optimal assignment entries are entrywise
    /// dominant (each at least 5 below anything in its row or column).
    fn dominant_optimum_matrix(rng: &mut ChaCha20Rng, n: usize) -> LossMatrix {
        let mut entries: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let perms = permutations_lex(n);
        let sigma = &perms[rng.gen_range(0..perms.len())];
        for i in 0..n {
            entries[i * n + sigma.target_of(i)] = rng.gen_range(-12.0..-10.0);
        }
        LossMatrix::from_flat(n, entries).unwrap()
    }

    #[test]
    fn sinkhorn_monotone_in_beta() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mat = dominant_optimum_matrix(&mut rng, 3);
            let losses: Vec<f64> = [0.1, 1.0, 10.0, 100.0]
                .iter()
                .map(|&b| sinkpit_loss(&mat, b, 200).unwrap().0)
                .collect();
            for w in losses.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{losses:?}");
            }
        }
    }

    #[test]
    fn sinkpit_rejects_bad_args() {
        let mat = m(&[vec![1.0]]);
        assert!(matches!(sinkpit_loss(&mat, 0.0, 10), Err(Error::NonPositiveBeta(_))));
        assert!(matches!(sinkpit_loss(&mat, -1.0, 10), Err(Error::NonPositiveBeta(_))));
        assert!(matches!(sinkpit_loss(&mat, 1.0, 0), Err(Error::ZeroIterations)));
    }

    #[test]
    fn selectors_are_permutation_equivariant() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        for _ in 0..200 {
            let n = rng.gen_range(2..=5);
            let mat = random_matrix(&mut rng, n);
            let base = pit_select(&mat).unwrap();
            for pi in permutations_lex(n) {
                // permuted targets: entries'[i][j] = entries[i][pi(j)]
                let mut entries = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        entries[i * n + j] = mat.get(i, pi.target_of(j));
                    }
                }
                let permuted = LossMatrix::from_flat(n, entries).unwrap();
                let r = pit_select(&permuted).unwrap();
                assert_eq!(r.total_loss, base.total_loss);
                for i in 0..n {
                    assert_eq!(pi.target_of(r.permutation.target_of(i)), base.permutation.target_of(i));
                }
            }
        }
    }

    #[test]
    fn beta_schedule_geometric_then_constant() {
        let b1 = sinkpit_beta_schedule(1, 60, 2.0, 20.0);
        assert!((b1 - 2.0).abs() < 1e-12);
        let b30 = sinkpit_beta_schedule(30, 60, 2.0, 20.0);
        assert_eq!(b30, 20.0);
        let b60 = sinkpit_beta_schedule(60, 60, 2.0, 20.0);
        assert_eq!(b60, 20.0);
        let b15 = sinkpit_beta_schedule(15, 60, 2.0, 20.0);
        assert!(b15 > 2.0 && b15 < 20.0);
    }
}
