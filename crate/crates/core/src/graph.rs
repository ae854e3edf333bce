//! Undirected communication topologies.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::weighting::WeightMatrix;
use crate::{Error, Result};

/// Named topology used in run configs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Ring,
    Line,
    Chordal,
    Exp,
}

impl Topology {
    pub const ALL: [Topology; 4] = [
        Topology::Ring,
        Topology::Line,
        Topology::Chordal,
        Topology::Exp,
    ];

    pub fn build(self, n: usize) -> Result<Graph> {
        match self {
            Topology::Ring => Graph::ring(n),
            Topology::Line => Graph::line(n),
            Topology::Chordal => Graph::chordal(n),
            Topology::Exp => Graph::static_exponential(n),
        }
    }

    /// Smallest node count the constructor accepts.
    pub fn min_nodes(self) -> usize {
        match self {
            Topology::Ring => 3,
            Topology::Line | Topology::Exp => 2,
            Topology::Chordal => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Topology::Ring => "ring",
            Topology::Line => "line",
            Topology::Chordal => "chordal",
            Topology::Exp => "exp",
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Topology::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown topology `{s}`, expected one of: ring, line, chordal, exp"
                ))
            })
    }
}

/// Immutable undirected graph over nodes `0..n`. Adjacency lists are sorted
/// and exclude the node itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from an undirected edge list. Self-loops and duplicate
    /// edges are dropped.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSize {
                what: "graph",
                reason: "n must be at least 1".into(),
            });
        }
        let mut adjacency = vec![Vec::new(); n];
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::IndexOutOfRange { index: a.max(b), n });
            }
            if a == b {
                continue;
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { adjacency })
    }

    /// Cycle `0 - 1 - ... - (n-1) - 0`.
    pub fn ring(n: usize) -> Result<Self> {
        check_size("ring", n, 3)?;
        Self::from_edges(n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    /// Path `0 - 1 - ... - (n-1)`.
    pub fn line(n: usize) -> Result<Self> {
        check_size("line", n, 2)?;
        Self::from_edges(n, (0..n - 1).map(|i| (i, i + 1)))
    }

    /// Ring plus distance-2 chords `(i, i+2 mod n)`, so every 4-cycle of the
    /// ring has a chord. For `n = 4` this is K4.
    pub fn chordal(n: usize) -> Result<Self> {
        check_size("chordal", n, 4)?;
        let ring = (0..n).map(|i| (i, (i + 1) % n));
        let chords = (0..n).map(|i| (i, (i + 2) % n));
        Self::from_edges(n, ring.chain(chords))
    }

    /// Undirected static exponential graph: `i` links to `i + 2^k mod n` for
    /// `k = 0..=floor(log2(n-1))`, with mirrored edges merged.
    pub fn static_exponential(n: usize) -> Result<Self> {
        check_size("static exponential", n, 2)?;
        let max_k = usize::BITS - 1 - (n - 1).leading_zeros();
        let edges =
            (0..n).flat_map(move |i| (0..=max_k).map(move |k| (i, (i + (1usize << k)) % n)));
        Self::from_edges(n, edges)
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> Result<usize> {
        self.adjacency
            .get(i)
            .map(Vec::len)
            .ok_or(Error::IndexOutOfRange {
                index: i,
                n: self.n(),
            })
    }

    /// `{i} ∪ N(i)` in ascending order.
    pub fn closed_neighborhood(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.adjacency[i].len() + 1);
        let pos = self.adjacency[i].partition_point(|&j| j < i);
        out.extend_from_slice(&self.adjacency[i][..pos]);
        out.push(i);
        out.extend_from_slice(&self.adjacency[i][pos..]);
        out
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency
            .get(i)
            .is_some_and(|list| list.binary_search(&j).is_ok())
    }

    /// Each undirected edge once, as `(src, dst)` with `src < dst`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == n
    }

    pub fn is_symmetric(&self) -> bool {
        self.adjacency
            .iter()
            .enumerate()
            .all(|(i, list)| list.iter().all(|&j| j != i && self.is_adjacent(j, i)))
    }

    /// Edge list as CSV with header `src,dst`.
    pub fn write_edge_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["src", "dst"])?;
        for (a, b) in self.edges() {
            wtr.serialize((a, b))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn check_size(what: &'static str, n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(Error::InvalidSize {
            what,
            reason: format!("need at least {min} nodes, got {n}"),
        });
    }
    Ok(())
}

// Successive-estimate tolerance; tighter than the 1e-9 accuracy target since
// the change per iteration understates the remaining error.
const GAP_TOL: f64 = 1e-12;
const GAP_MAX_ITERS: usize = 200_000;

/// `1 - |λ₂|` of a row-stochastic mixing matrix.
///
/// The unit eigenvalue is deflated with the stationary distribution `π`
/// (`B = W - 1πᵀ`), then `|λ₂|` is the spectral radius of `B`, estimated by
/// power iteration over two-step norm ratios so that `±λ` pairs do not
/// oscillate the estimate.
pub fn spectral_gap(w: &WeightMatrix) -> Result<f64> {
    w.check_row_stochastic(1e-9)?;
    let n = w.n();
    if n == 1 {
        return Ok(1.0);
    }

    let pi = stationary_distribution(w);
    let deflated = |x: &[f64]| -> Vec<f64> {
        let proj: f64 = pi.iter().zip(x).map(|(p, v)| p * v).sum();
        let mut y = w.apply(x);
        for v in &mut y {
            *v -= proj;
        }
        y
    };

    // Deterministic start with components in every eigendirection.
    let mut x: Vec<f64> = (0..n)
        .map(|i| 1.0 + ((i as f64 + 1.0) * 0.754_877_666).sin())
        .collect();
    normalize(&mut x);

    let mut estimate = f64::NAN;
    for _ in 0..GAP_MAX_ITERS {
        let y = deflated(&x);
        let z = deflated(&y);
        let norm = l2(&z);
        if norm < 1e-300 {
            return Ok(1.0);
        }
        let next = norm.sqrt();
        x = z;
        normalize(&mut x);
        if (next - estimate).abs() < GAP_TOL {
            estimate = next;
            break;
        }
        estimate = next;
    }
    Ok((1.0 - estimate).max(0.0))
}

fn stationary_distribution(w: &WeightMatrix) -> Vec<f64> {
    let n = w.n();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..GAP_MAX_ITERS {
        let next = w.apply_transpose(&pi);
        let total: f64 = next.iter().sum();
        let next: Vec<f64> = next.into_iter().map(|v| v / total).collect();
        let delta = next
            .iter()
            .zip(&pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        pi = next;
        if delta < 1e-15 {
            break;
        }
    }
    pi
}

fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn normalize(x: &mut [f64]) {
    let norm = l2(x);
    if norm > 0.0 {
        for v in x {
            *v /= norm;
        }
    }
}
