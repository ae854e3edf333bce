//! Per-epoch building blocks: local training, then the Readout, Evaluation
//! and Gossip phases of a consensus round.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::mailbox::{Mailbox, Message};
use crate::data::Dataset;
use crate::graph::Graph;
use crate::model::{evaluate_rows, ModelSpec, OptimizerState, ParamVector};
use crate::rng::{stream_rng, Stream};
use crate::weighting::{dynaweight_row, LossTable, WeightMatrix};
use crate::{Error, Result};

/// One simulated server.
#[derive(Clone, Debug)]
pub struct ServerState<'a> {
    pub id: usize,
    pub params: ParamVector,
    pub shard: &'a Dataset,
    pub opt: OptimizerState,
    /// Scratch slot for evaluating a neighbor's parameters on the local shard.
    /// Overwritten on every use; never read across rounds.
    pub ghost_params: ParamVector,
}

impl<'a> ServerState<'a> {
    pub fn new(id: usize, params: ParamVector, shard: &'a Dataset, opt: OptimizerState) -> Self {
        let ghost_params = ParamVector::zeros(params.len());
        Self {
            id,
            params,
            shard,
            opt,
            ghost_params,
        }
    }

    /// Full-shard loss of `params` evaluated through the ghost slot.
    fn ghost_loss(&mut self, spec: &ModelSpec, params: &ParamVector) -> Result<f64> {
        self.ghost_params.copy_from_slice(params);
        let rows: Vec<usize> = (0..self.shard.len()).collect();
        evaluate_rows(&self.ghost_params, spec, self.shard, &rows, None)
    }
}

/// Parameters received by each server during a readout, keyed by sender and
/// sorted by sender id.
pub type Received = Vec<Vec<(usize, Arc<ParamVector>)>>;

/// One pass over the shard in a seeded order, one optimizer step per
/// mini-batch. The order depends only on `(seed, server id, epoch)`.
pub fn local_epoch(
    server: &mut ServerState<'_>,
    spec: &ModelSpec,
    epoch: usize,
    batch_size: usize,
    seed: u64,
) -> Result<()> {
    if server.shard.is_empty() {
        return Err(Error::EmptyDataset("local epoch"));
    }
    let mut order: Vec<usize> = (0..server.shard.len()).collect();
    let mut rng = stream_rng(Stream::Shuffle, &[seed, server.id as u64, epoch as u64]);
    order.shuffle(&mut rng);

    let mut grad = ParamVector::zeros(server.params.len());
    let mut rows = Vec::with_capacity(batch_size);
    for batch in order.chunks(batch_size.max(1)) {
        // Row order inside a batch only affects rounding; sorted rows make a
        // whole-shard batch match `gradient` bit for bit.
        rows.clear();
        rows.extend_from_slice(batch);
        rows.sort_unstable();
        evaluate_rows(&server.params, spec, server.shard, &rows, Some(&mut grad))?;
        server.opt.step(&mut server.params, &grad, epoch)?;
    }
    Ok(())
}

/// Every server sends its current parameters to each neighbor.
pub fn readout_phase(
    servers: &[ServerState<'_>],
    g: &Graph,
    mailbox: &mut Mailbox,
) -> Result<Received> {
    mailbox.begin_phase();
    for s in servers {
        let params = Arc::new(s.params.clone());
        mailbox.broadcast(Message::Params { from: s.id, params })?;
    }
    (0..servers.len())
        .map(|i| {
            let mut got = Vec::with_capacity(g.neighbors(i).len());
            for msg in mailbox.drain(i) {
                match msg {
                    Message::Params { from, params } => got.push((from, params)),
                    other => {
                        return Err(Error::ProtocolDesync {
                            server: i,
                            detail: format!("unexpected {other:?} during readout"),
                        })
                    }
                }
            }
            let senders: Vec<usize> = got.iter().map(|(j, _)| *j).collect();
            if senders != g.neighbors(i) {
                return Err(Error::ProtocolDesync {
                    server: i,
                    detail: format!(
                        "expected parameters from {:?}, got {senders:?}",
                        g.neighbors(i)
                    ),
                });
            }
            Ok(got)
        })
        .collect()
}

/// Each server scores its own and each received model on its local shard,
/// returns `L_ji` to server `j`, and every server turns the losses it got
/// back into its centrality.
pub fn evaluation_phase(
    servers: &mut [ServerState<'_>],
    g: &Graph,
    spec: &ModelSpec,
    received: &Received,
    mailbox: &mut Mailbox,
) -> Result<LossTable> {
    mailbox.begin_phase();
    // (own loss, [(j, L_ji)]) per evaluating server i.
    let evaluated: Vec<(f64, Vec<(usize, f64)>)> = servers
        .par_iter_mut()
        .map(|s| {
            let own = s.params.clone();
            let own_loss = s.ghost_loss(spec, &own)?;
            let mut theirs = Vec::with_capacity(received[s.id].len());
            for (j, params) in &received[s.id] {
                theirs.push((*j, s.ghost_loss(spec, params)?));
            }
            Ok((own_loss, theirs))
        })
        .collect::<Result<_>>()?;

    for (i, (_, theirs)) in evaluated.iter().enumerate() {
        for &(j, value) in theirs {
            mailbox.send(
                j,
                Message::Loss {
                    from: i,
                    to: j,
                    value,
                },
            )?;
        }
    }

    let mut rows = Vec::with_capacity(servers.len());
    for (j, (own_loss, _)) in evaluated.iter().enumerate() {
        let mut row = vec![(j, *own_loss)];
        for msg in mailbox.drain(j) {
            match msg {
                Message::Loss { from, to, value } if to == j => row.push((from, value)),
                other => {
                    return Err(Error::ProtocolDesync {
                        server: j,
                        detail: format!("unexpected {other:?} during evaluation"),
                    })
                }
            }
        }
        if row.len() != g.neighbors(j).len() + 1 {
            return Err(Error::ProtocolDesync {
                server: j,
                detail: format!(
                    "received {} losses for degree {}",
                    row.len() - 1,
                    g.neighbors(j).len()
                ),
            });
        }
        rows.push(row);
    }
    LossTable::from_rows(g, rows)
}

/// Centralities seen by each server after the exchange: its own plus one per
/// neighbor, sorted by server id.
pub type CentralityView = Vec<Vec<(usize, f64)>>;

/// Each server broadcasts its centrality to its neighbors.
pub fn exchange_centralities(
    centralities: &[f64],
    g: &Graph,
    mailbox: &mut Mailbox,
) -> Result<CentralityView> {
    mailbox.begin_phase();
    for (j, &value) in centralities.iter().enumerate() {
        mailbox.broadcast(Message::Centrality { from: j, value })?;
    }
    (0..g.n())
        .map(|i| {
            let mut seen = vec![(i, centralities[i])];
            for msg in mailbox.drain(i) {
                match msg {
                    Message::Centrality { from, value } => seen.push((from, value)),
                    other => {
                        return Err(Error::ProtocolDesync {
                            server: i,
                            detail: format!("unexpected {other:?} during centrality exchange"),
                        })
                    }
                }
            }
            seen.sort_by_key(|&(k, _)| k);
            if seen.len() != g.neighbors(i).len() + 1 {
                return Err(Error::ProtocolDesync {
                    server: i,
                    detail: "missing neighbor centrality".into(),
                });
            }
            Ok(seen)
        })
        .collect()
}

/// Builds the adaptive mixing matrix row by row, each row from the
/// centralities its server has seen.
pub fn weights_from_view(g: &Graph, view: &CentralityView) -> Result<WeightMatrix> {
    let n = g.n();
    let mut entries = vec![0.0; n * n];
    for (i, seen) in view.iter().enumerate() {
        let lookup = |k: usize| {
            seen.binary_search_by_key(&k, |&(id, _)| id)
                .map(|pos| seen[pos].1)
                .unwrap_or(f64::NAN)
        };
        for (j, w) in dynaweight_row(g, i, lookup)? {
            entries[i * n + j] = w;
        }
    }
    Ok(WeightMatrix::from_dense_unchecked(n, entries))
}

/// Row `i` of one mixing round: `Σ_{j ∈ {i} ∪ N(i)} w_ij θ_j`, with the
/// neighbor values taken from what `i` received.
fn mix_row(
    i: usize,
    own: &ParamVector,
    got: &[(usize, Arc<ParamVector>)],
    g: &Graph,
    w: &WeightMatrix,
) -> Result<ParamVector> {
    let mut out = ParamVector::zeros(own.len());
    for j in g.closed_neighborhood(i) {
        let wij = w.get(i, j);
        if wij == 0.0 {
            continue;
        }
        let theta = if j == i {
            own
        } else {
            got.binary_search_by_key(&j, |(k, _)| *k)
                .map(|pos| got[pos].1.as_ref())
                .map_err(|_| Error::ProtocolDesync {
                    server: i,
                    detail: format!("no parameters from neighbor {j} for gossip"),
                })?
        };
        for (o, v) in out.iter_mut().zip(theta.iter()) {
            *o += wij * v;
        }
    }
    Ok(out)
}

/// `consensus_steps` synchronous mixing rounds; each round consumes the
/// previous round's outputs. The first round reuses parameters already
/// delivered by a readout when `cached` is given; every other round
/// exchanges parameters again.
pub fn gossip_phase(
    servers: &mut [ServerState<'_>],
    g: &Graph,
    w: &WeightMatrix,
    consensus_steps: usize,
    mailbox: &mut Mailbox,
    cached: Option<Received>,
) -> Result<()> {
    w.check_sparsity(g)?;
    w.check_row_stochastic(1e-9)?;
    let mut cached = cached;
    for _ in 0..consensus_steps {
        let received = match cached.take() {
            Some(r) => r,
            None => readout_phase(servers, g, mailbox)?,
        };
        let next: Vec<ParamVector> = servers
            .par_iter()
            .map(|s| mix_row(s.id, &s.params, &received[s.id], g, w))
            .collect::<Result<_>>()?;
        for (s, p) in servers.iter_mut().zip(next) {
            s.params = p;
        }
    }
    Ok(())
}
