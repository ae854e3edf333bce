use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

/// How many classes a non-balanced server draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MinorClasses {
    Fixed(usize),
    /// Drawn uniformly per server from `[lo, hi]`.
    Range(usize, usize),
}

impl MinorClasses {
    fn bounds(self) -> (usize, usize) {
        match self {
            MinorClasses::Fixed(k) => (k, k),
            MinorClasses::Range(lo, hi) => (lo, hi),
        }
    }
}

/// Disjoint per-server shards of a source dataset.
#[derive(Clone, Debug)]
pub struct Partition {
    pub shards: Vec<Dataset>,
    /// Source row indices of each shard, in shard order.
    pub indices: Vec<Vec<usize>>,
    pub seed: u64,
}

impl Partition {
    fn from_indices(ds: &Dataset, indices: Vec<Vec<usize>>, seed: u64) -> Result<Self> {
        if let Some(server) = indices.iter().position(Vec::is_empty) {
            return Err(Error::Allocation {
                class: 0,
                detail: format!("server {server} received no samples"),
            });
        }
        let shards = indices.iter().map(|idx| ds.subset(idx)).collect();
        Ok(Self {
            shards,
            indices,
            seed,
        })
    }

    pub fn n_servers(&self) -> usize {
        self.shards.len()
    }

    /// Union of all shards in server order.
    pub fn union(&self) -> Result<Dataset> {
        Dataset::concat(&self.shards)
    }

    /// `(server, class, count)` for every nonzero count.
    pub fn class_summary(&self) -> Vec<(usize, usize, usize)> {
        self.shards
            .iter()
            .enumerate()
            .flat_map(|(s, shard)| {
                shard
                    .class_counts()
                    .into_iter()
                    .enumerate()
                    .filter(|&(_, n)| n > 0)
                    .map(move |(c, n)| (s, c, n))
            })
            .collect()
    }

    pub fn write_summary_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["server", "class", "count"])?;
        for row in self.class_summary() {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Servers whose 1-based id is a multiple of 4 hold every class.
pub fn is_balanced_server(server: usize) -> bool {
    (server + 1).is_multiple_of(4)
}

/// Heterogeneous split: balanced servers (0-based 3, 7, 11, ...) take
/// `balanced_per_class` samples of every class; every other server draws a
/// set of classes uniformly at random and the leftover pool of each class is
/// divided equally among the servers that drew it.
///
/// `balanced_per_class = None` uses `(len / n_servers) / num_classes`.
pub fn partition_heterogeneous(
    ds: &Dataset,
    n_servers: usize,
    minor_classes: MinorClasses,
    balanced_per_class: Option<usize>,
    seed: u64,
) -> Result<Partition> {
    let k = ds.num_classes();
    let (lo, hi) = minor_classes.bounds();
    if n_servers == 0 {
        return Err(Error::InvalidSize {
            what: "partition",
            reason: "need at least one server".into(),
        });
    }
    if lo == 0 || lo > hi || hi > k {
        return Err(Error::Config(format!(
            "minor_classes must satisfy 1 <= lo <= hi <= num_classes ({k}), got [{lo}, {hi}]"
        )));
    }
    let per_class = balanced_per_class.unwrap_or_else(|| (ds.len() / n_servers / k).max(1));

    let mut rng = stream_rng(Stream::Partition, &[seed]);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in ds.labels().iter().enumerate() {
        pools[y].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }

    let mut indices: Vec<Vec<usize>> = vec![Vec::new(); n_servers];
    for server in (0..n_servers).filter(|&s| is_balanced_server(s)) {
        for (class, pool) in pools.iter_mut().enumerate() {
            if pool.len() < per_class {
                return Err(Error::Allocation {
                    class,
                    detail: format!(
                        "balanced server {server} needs {per_class}, {} left",
                        pool.len()
                    ),
                });
            }
            indices[server].extend(pool.drain(..per_class));
        }
    }

    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); k];
    for server in (0..n_servers).filter(|&s| !is_balanced_server(s)) {
        let count = rng.random_range(lo..=hi);
        let mut classes = index::sample(&mut rng, k, count).into_vec();
        classes.sort_unstable();
        for c in classes {
            holders[c].push(server);
        }
    }

    for (class, servers) in holders.iter().enumerate() {
        if servers.is_empty() {
            continue;
        }
        let share = pools[class].len() / servers.len();
        if share == 0 {
            return Err(Error::Allocation {
                class,
                detail: format!(
                    "{} samples left for {} servers",
                    pools[class].len(),
                    servers.len()
                ),
            });
        }
        for (slot, &server) in servers.iter().enumerate() {
            indices[server].extend_from_slice(&pools[class][slot * share..(slot + 1) * share]);
        }
    }

    Partition::from_indices(ds, indices, seed)
}

/// Seeded shuffle followed by a contiguous split into near-equal shards; the
/// first `len % n_servers` shards get one extra sample.
pub fn partition_iid(ds: &Dataset, n_servers: usize, seed: u64) -> Result<Partition> {
    if n_servers == 0 || n_servers > ds.len() {
        return Err(Error::InvalidSize {
            what: "partition",
            reason: format!("cannot split {} samples over {n_servers} servers", ds.len()),
        });
    }
    let mut rng = stream_rng(Stream::Partition, &[seed]);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);

    let base = ds.len() / n_servers;
    let extra = ds.len() % n_servers;
    let mut indices = Vec::with_capacity(n_servers);
    let mut start = 0;
    for s in 0..n_servers {
        let len = base + usize::from(s < extra);
        indices.push(order[start..start + len].to_vec());
        start += len;
    }
    Partition::from_indices(ds, indices, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_blobs, BlobSpec};
    use std::collections::HashSet;

    fn blobs(k: usize, per_class: usize) -> Dataset {
        generate_blobs(BlobSpec {
            num_classes: k,
            dim: 2,
            per_class,
            spread: 0.1,
            seed: 5,
        })
        .unwrap()
    }

    fn label_set(ds: &Dataset) -> HashSet<usize> {
        ds.labels().iter().copied().collect()
    }

    fn assert_disjoint(p: &Partition) {
        let mut seen = HashSet::new();
        for idx in &p.indices {
            for &i in idx {
                assert!(seen.insert(i), "sample {i} assigned twice");
            }
        }
    }

    #[test]
    fn heterogeneous_n8() {
        let ds = blobs(10, 200);
        let p = partition_heterogeneous(&ds, 8, MinorClasses::Fixed(3), None, 11).unwrap();
        assert_disjoint(&p);
        for (s, shard) in p.shards.iter().enumerate() {
            let classes = label_set(shard);
            if s == 3 || s == 7 {
                assert_eq!(classes.len(), 10, "server {s}");
                assert_eq!(shard.class_counts(), vec![25; 10]);
            } else {
                assert_eq!(classes.len(), 3, "server {s}");
            }
        }
        let again = partition_heterogeneous(&ds, 8, MinorClasses::Fixed(3), None, 11).unwrap();
        assert_eq!(p.indices, again.indices);
    }

    #[test]
    fn heterogeneous_n4_has_one_balanced_server() {
        let ds = blobs(10, 100);
        let p = partition_heterogeneous(&ds, 4, MinorClasses::Fixed(3), Some(5), 0).unwrap();
        let full: Vec<usize> = p
            .shards
            .iter()
            .enumerate()
            .filter(|(_, s)| label_set(s).len() == 10)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(full, vec![3]);
    }

    #[test]
    fn heterogeneous_range_mode() {
        let ds = blobs(20, 60);
        let p = partition_heterogeneous(&ds, 8, MinorClasses::Range(4, 6), Some(2), 2).unwrap();
        assert_disjoint(&p);
        for (s, shard) in p.shards.iter().enumerate() {
            let n = label_set(shard).len();
            if is_balanced_server(s) {
                assert_eq!(n, 20);
            } else {
                assert!((4..=6).contains(&n), "server {s} has {n} classes");
            }
        }
    }

    #[test]
    fn heterogeneous_exhaustion_names_class() {
        let ds = blobs(3, 4);
        let err = partition_heterogeneous(&ds, 8, MinorClasses::Fixed(2), Some(3), 0).unwrap_err();
        assert!(matches!(err, Error::Allocation { class: 0, .. }), "{err}");
        let err = partition_heterogeneous(&ds, 2, MinorClasses::Fixed(4), None, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn iid_sizes() {
        let ds = blobs(10, 10);
        let p = partition_iid(&ds, 8, 3).unwrap();
        let mut sizes: Vec<usize> = p.shards.iter().map(Dataset::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![12, 12, 12, 12, 13, 13, 13, 13]);
        assert_disjoint(&p);

        let one = partition_iid(&ds, 1, 3).unwrap();
        assert_eq!(one.shards[0].len(), 100);
        let mut idx = one.indices[0].clone();
        idx.sort_unstable();
        assert_eq!(idx, (0..100).collect::<Vec<_>>());
        assert!(partition_iid(&ds, 101, 0).is_err());
    }

    #[test]
    fn iid_class_frequencies_track_global() {
        // 1000 samples, 10 classes, 4 shards; seed fixed.
        let ds = blobs(10, 100);
        let p = partition_iid(&ds, 4, 2024).unwrap();
        for shard in &p.shards {
            for &count in &shard.class_counts() {
                let freq = count as f64 / shard.len() as f64;
                assert!((freq - 0.1).abs() <= 0.05, "freq {freq}");
            }
        }
    }

    #[test]
    fn summary_csv() {
        let ds = blobs(2, 2);
        let p = partition_iid(&ds, 2, 0).unwrap();
        let mut buf = Vec::new();
        p.write_summary_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("server,class,count\n"));
        let total: usize = text
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, 4);
    }
}
