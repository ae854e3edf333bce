//! Mixing weights: simple, Metropolis, and loss-based adaptive weights.

use crate::graph::Graph;
use crate::{Error, Result};

/// Floor applied to a server's total closed-neighborhood loss before taking
/// its inverse, so a perfectly fit model yields a large but finite centrality.
pub const LOSS_FLOOR: f64 = 1e-8;

/// Dense `n × n` row-stochastic mixing matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl WeightMatrix {
    /// Wraps a dense matrix after checking it is square, nonnegative, and
    /// row-stochastic within 1e-12.
    pub fn from_dense(n: usize, entries: Vec<f64>) -> Result<Self> {
        let w = Self::from_dense_unchecked(n, entries);
        w.check_row_stochastic(1e-12)?;
        Ok(w)
    }

    pub fn from_dense_unchecked(n: usize, entries: Vec<f64>) -> Self {
        assert_eq!(entries.len(), n * n, "weight matrix must be n*n");
        Self { n, entries }
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        Self { n, entries }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    /// Nonzero entries of row `i` as `(j, w_ij)`.
    pub fn sparse_row(&self, i: usize) -> Vec<(usize, f64)> {
        self.row(i)
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(j, &w)| (j, w))
            .collect()
    }

    /// `W x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    /// `Wᵀ x`.
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, &xi) in x.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.row(i)) {
                *o += w * xi;
            }
        }
        out
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.n)
            .map(|i| (self.row(i).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_col_sum_error(&self) -> f64 {
        (0..self.n)
            .map(|j| ((0..self.n).map(|i| self.get(i, j)).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn check_row_stochastic(&self, tol: f64) -> Result<()> {
        if let Some(&bad) = self.entries.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::Contract(format!(
                "weight entry {bad} outside [0, 1]"
            )));
        }
        let err = self.max_row_sum_error();
        if err > tol {
            return Err(Error::Contract(format!(
                "rows must sum to 1 (max deviation {err:e})"
            )));
        }
        Ok(())
    }

    /// Fails if any nonzero entry lies outside the closed neighborhood.
    pub fn check_sparsity(&self, g: &Graph) -> Result<()> {
        if g.n() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "weight matrix is {}x{} but graph has {} nodes",
                self.n,
                self.n,
                g.n()
            )));
        }
        for i in 0..self.n {
            for (j, &w) in self.row(i).iter().enumerate() {
                if w != 0.0 && j != i && !g.is_adjacent(i, j) {
                    return Err(Error::Sparsity { i, j, value: w });
                }
            }
        }
        Ok(())
    }
}

/// Equal weight `1/(1+d_i)` on the closed neighborhood.
pub fn simple_weights(g: &Graph) -> WeightMatrix {
    let n = g.n();
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        let w = 1.0 / (1 + g.neighbors(i).len()) as f64;
        for j in g.closed_neighborhood(i) {
            entries[i * n + j] = w;
        }
    }
    WeightMatrix { n, entries }
}

/// Metropolis weights: `1/(1+max(d_i,d_j))` on edges, residual on the diagonal.
pub fn metropolis_weights(g: &Graph) -> WeightMatrix {
    let n = g.n();
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        let di = g.neighbors(i).len();
        let mut off = 0.0;
        for &j in g.neighbors(i) {
            let w = 1.0 / (1 + di.max(g.neighbors(j).len())) as f64;
            entries[i * n + j] = w;
            off += w;
        }
        entries[i * n + i] = 1.0 - off;
    }
    WeightMatrix { n, entries }
}

/// Losses `L_jm` for every server `j` and every `m` in its closed
/// neighborhood (model of `j` evaluated on the data of `m`), plus the
/// centralities derived from them.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTable {
    /// `losses[j]` is aligned with `g.closed_neighborhood(j)`.
    losses: Vec<Vec<(usize, f64)>>,
    centralities: Vec<f64>,
}

impl LossTable {
    /// Builds the table from a loss oracle `loss(j, m)` and computes every
    /// centrality.
    pub fn from_fn(g: &Graph, mut loss: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let losses: Vec<Vec<(usize, f64)>> = (0..g.n())
            .map(|j| {
                g.closed_neighborhood(j)
                    .into_iter()
                    .map(|m| (m, loss(j, m)))
                    .collect()
            })
            .collect();
        Self::from_rows(g, losses)
    }

    /// `rows[j]` must list `(m, L_jm)` for exactly the closed neighborhood of `j`.
    pub fn from_rows(g: &Graph, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.len() != g.n() {
            return Err(Error::DimensionMismatch(format!(
                "loss table has {} rows for {} servers",
                rows.len(),
                g.n()
            )));
        }
        let mut sorted = Vec::with_capacity(rows.len());
        for (j, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(m, _)| m);
            let keys: Vec<usize> = row.iter().map(|&(m, _)| m).collect();
            if keys != g.closed_neighborhood(j) {
                return Err(Error::Contract(format!(
                    "losses for server {j} cover {keys:?}, expected its closed neighborhood"
                )));
            }
            if let Some(&(m, l)) = row.iter().find(|(_, l)| !(l.is_finite() && *l >= 0.0)) {
                return Err(Error::Contract(format!(
                    "loss L[{j}][{m}] = {l} is not a finite nonnegative value"
                )));
            }
            sorted.push(row);
        }
        let mut table = Self {
            losses: sorted,
            centralities: Vec::new(),
        };
        table.centralities = (0..g.n()).map(|j| table.centrality_of(j)).collect();
        Ok(table)
    }

    pub fn n(&self) -> usize {
        self.losses.len()
    }

    pub fn get(&self, j: usize, m: usize) -> Option<f64> {
        self.losses
            .get(j)?
            .iter()
            .find(|&&(k, _)| k == m)
            .map(|&(_, l)| l)
    }

    pub fn row(&self, j: usize) -> &[(usize, f64)] {
        &self.losses[j]
    }

    pub fn centralities(&self) -> &[f64] {
        &self.centralities
    }

    fn centrality_of(&self, j: usize) -> f64 {
        let row = &self.losses[j];
        let total: f64 = row.iter().map(|&(_, l)| l).sum();
        row.len() as f64 / total.max(LOSS_FLOOR)
    }
}

/// Centrality `p_j = (1 + d_j) / Σ_{m ∈ {j} ∪ N(j)} L_jm`, the inverse of the
/// mean loss of `j`'s model over its own and its neighbors' data.
pub fn centrality(g: &Graph, losses: &LossTable, j: usize) -> Result<f64> {
    g.degree(j)?;
    let mut total = 0.0;
    for m in g.closed_neighborhood(j) {
        let l = losses
            .get(j, m)
            .ok_or_else(|| Error::Contract(format!("missing loss L[{j}][{m}]")))?;
        total += l;
    }
    if total <= 0.0 {
        return Err(Error::Contract(format!(
            "total loss for server {j} is zero; centrality undefined"
        )));
    }
    Ok((1 + g.neighbors(j).len()) as f64 / total.max(LOSS_FLOOR))
}

/// Row `i` of the adaptive weights from the centralities `i` has received:
/// `w_ij = p_j / Σ_{k ∈ {i} ∪ N(i)} p_k`.
pub fn dynaweight_row(g: &Graph, i: usize, p: impl Fn(usize) -> f64) -> Result<Vec<(usize, f64)>> {
    let hood = g.closed_neighborhood(i);
    let mut values = Vec::with_capacity(hood.len());
    for &k in &hood {
        let pk = p(k);
        if !(pk > 0.0 && pk.is_finite()) {
            return Err(Error::NonPositiveCentrality {
                server: k,
                value: pk,
            });
        }
        values.push(pk);
    }
    let total: f64 = values.iter().sum();
    Ok(hood
        .into_iter()
        .zip(values)
        .map(|(k, pk)| (k, pk / total))
        .collect())
}

pub fn dynaweight_weights(g: &Graph, p: &[f64]) -> Result<WeightMatrix> {
    let n = g.n();
    if p.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} centralities for {n} servers",
            p.len()
        )));
    }
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for (j, w) in dynaweight_row(g, i, |k| p[k])? {
            entries[i * n + j] = w;
        }
    }
    Ok(WeightMatrix { n, entries })
}

/// Appends the nonzero entries of `w` as `epoch,i,j,w` CSV records.
pub fn write_weight_records<W: std::io::Write>(
    wtr: &mut csv::Writer<W>,
    epoch: usize,
    rows: &[Vec<(usize, f64)>],
) -> Result<()> {
    for (i, row) in rows.iter().enumerate() {
        for &(j, w) in row {
            wtr.serialize((epoch, i, j, w))?;
        }
    }
    Ok(())
}

pub const WEIGHT_CSV_HEADER: [&str; 4] = ["epoch", "i", "j", "w"];
