//! Training loops: decentralized rounds with static or adaptive mixing, plus
//! FedAvg and centralized baselines.
//!
//! A decentralized epoch runs local training on every server, then (for the
//! adaptive scheme) a readout, an evaluation, and a centrality exchange, and
//! finally `C` gossip steps. Phases are separated by barriers; within a phase
//! servers run on the rayon pool and all cross-server data moves through the
//! [`Mailbox`], drained in sender order.

mod mailbox;
mod phases;

pub use mailbox::{Mailbox, Message, MessageStats};
pub use phases::{
    evaluation_phase, exchange_centralities, gossip_phase, local_epoch, readout_phase,
    weights_from_view, CentralityView, Received, ServerState,
};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Partition};
use crate::graph::Graph;
use crate::metrics::{consensus_error, mean, per_server_accuracy, RoundLog};
use crate::model::{init_params, ModelSpec, OptimizerConfig, OptimizerState, ParamVector};
use crate::rng::derive_seed;
use crate::weighting::{metropolis_weights, simple_weights, LossTable, WeightMatrix};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Centralized,
    Fedavg,
    Simple,
    Metropolis,
    Dynaweight,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Centralized,
        Scheme::Fedavg,
        Scheme::Simple,
        Scheme::Metropolis,
        Scheme::Dynaweight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Centralized => "centralized",
            Scheme::Fedavg => "fedavg",
            Scheme::Simple => "simple",
            Scheme::Metropolis => "metropolis",
            Scheme::Dynaweight => "dynaweight",
        }
    }

    pub fn is_decentralized(self) -> bool {
        matches!(
            self,
            Scheme::Simple | Scheme::Metropolis | Scheme::Dynaweight
        )
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown scheme `{s}`, expected one of: centralized, fedavg, simple, metropolis, dynaweight"
            ))
        })
    }
}

/// How initial parameters are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Every server starts from the same draw.
    #[default]
    Shared,
    /// Each server draws its own initialization.
    PerServer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    pub epochs: usize,
    pub consensus_steps: usize,
    pub batch_size: usize,
    pub scheme: Scheme,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub init: InitMode,
    /// Fill `RoundLog::wall_ms`; off by default because it breaks
    /// byte-identical logs.
    #[serde(default)]
    pub record_timing: bool,
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.consensus_steps == 0 {
            return Err(Error::Config("consensus_steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.optimizer.validate()
    }

    fn init_for(&self, spec: &ModelSpec, server: usize) -> ParamVector {
        match self.init {
            InitMode::Shared => init_params(spec, self.seed),
            InitMode::PerServer => init_params(spec, derive_seed(&[self.seed, server as u64])),
        }
    }
}

/// Source of the mixing matrix for each decentralized epoch.
pub trait WeightPolicy: Send {
    /// Whether the readout/evaluation/centrality exchange runs every epoch.
    fn adaptive(&self) -> bool;

    /// Mixing matrix for the coming gossip phase. Adaptive policies receive
    /// the epoch's loss table and each server's view of the centralities.
    fn weights(
        &mut self,
        g: &Graph,
        evaluation: Option<(&LossTable, &CentralityView)>,
    ) -> Result<WeightMatrix>;
}

/// Connectivity-only weights, fixed for the whole run.
pub struct StaticPolicy(pub WeightMatrix);

impl WeightPolicy for StaticPolicy {
    fn adaptive(&self) -> bool {
        false
    }

    fn weights(
        &mut self,
        _: &Graph,
        _: Option<(&LossTable, &CentralityView)>,
    ) -> Result<WeightMatrix> {
        Ok(self.0.clone())
    }
}

/// Loss-derived weights recomputed every epoch.
pub struct AdaptivePolicy;

impl WeightPolicy for AdaptivePolicy {
    fn adaptive(&self) -> bool {
        true
    }

    fn weights(
        &mut self,
        g: &Graph,
        evaluation: Option<(&LossTable, &CentralityView)>,
    ) -> Result<WeightMatrix> {
        let (_, view) = evaluation
            .ok_or_else(|| Error::Contract("adaptive weights need an evaluation phase".into()))?;
        weights_from_view(g, view)
    }
}

/// Snapshot handed to observers after each epoch.
pub struct EpochView<'v, 'a> {
    /// 1-based.
    pub epoch: usize,
    pub servers: &'v [ServerState<'a>],
    pub weights: Option<&'v WeightMatrix>,
    pub losses: Option<&'v LossTable>,
    /// Messages sent during this epoch.
    pub messages: MessageStats,
}

pub type Observer<'o> = dyn FnMut(&EpochView<'_, '_>) -> Result<()> + 'o;

fn make_servers<'a>(
    cfg: &RoundConfig,
    spec: &ModelSpec,
    shards: impl IntoIterator<Item = &'a Dataset>,
) -> Result<Vec<ServerState<'a>>> {
    shards
        .into_iter()
        .enumerate()
        .map(|(id, shard)| {
            if shard.is_empty() {
                return Err(Error::EmptyDataset("server shard"));
            }
            let params = cfg.init_for(spec, id);
            let opt = OptimizerState::new(cfg.optimizer, params.len());
            Ok(ServerState::new(id, params, shard, opt))
        })
        .collect()
}

fn train_all(
    servers: &mut [ServerState<'_>],
    spec: &ModelSpec,
    cfg: &RoundConfig,
    epoch: usize,
) -> Result<()> {
    servers
        .par_iter_mut()
        .try_for_each(|s| local_epoch(s, spec, epoch, cfg.batch_size, cfg.seed))
}

fn log_epoch(
    epoch: usize,
    servers: &[ServerState<'_>],
    spec: &ModelSpec,
    test: &Dataset,
    weights: Option<&WeightMatrix>,
    lr: f64,
    started: Option<Instant>,
) -> Result<RoundLog> {
    let params: Vec<&ParamVector> = servers.iter().map(|s| &s.params).collect();
    let acc = per_server_accuracy(&params, spec, test)?;
    Ok(RoundLog {
        epoch,
        avg_test_accuracy: mean(&acc),
        per_server_test_accuracy: acc,
        consensus_error: consensus_error(&params)?,
        weight_rows: weights.map(|w| (0..w.n()).map(|i| w.sparse_row(i)).collect()),
        lr,
        wall_ms: started.map_or(0, |t| t.elapsed().as_millis() as u64),
    })
}

/// Decentralized training over a fixed graph.
pub struct Simulation<'a> {
    cfg: RoundConfig,
    graph: &'a Graph,
    spec: &'a ModelSpec,
    test: &'a Dataset,
    servers: Vec<ServerState<'a>>,
    policy: Box<dyn WeightPolicy + 'a>,
    mailbox: Mailbox,
    epoch: usize,
    last_weights: Option<WeightMatrix>,
    last_losses: Option<LossTable>,
}

impl<'a> Simulation<'a> {
    /// Uses the policy implied by `cfg.scheme`, which must be decentralized.
    pub fn new(
        cfg: &RoundConfig,
        graph: &'a Graph,
        shards: &'a [Dataset],
        spec: &'a ModelSpec,
        test: &'a Dataset,
    ) -> Result<Self> {
        let policy: Box<dyn WeightPolicy> = match cfg.scheme {
            Scheme::Simple => Box::new(StaticPolicy(simple_weights(graph))),
            Scheme::Metropolis => Box::new(StaticPolicy(metropolis_weights(graph))),
            Scheme::Dynaweight => Box::new(AdaptivePolicy),
            other => {
                return Err(Error::Config(format!(
                    "scheme {other} is not a decentralized scheme"
                )))
            }
        };
        Self::with_policy(cfg, graph, shards, spec, test, policy)
    }

    pub fn with_policy(
        cfg: &RoundConfig,
        graph: &'a Graph,
        shards: &'a [Dataset],
        spec: &'a ModelSpec,
        test: &'a Dataset,
        policy: Box<dyn WeightPolicy + 'a>,
    ) -> Result<Self> {
        cfg.validate()?;
        if shards.len() != graph.n() {
            return Err(Error::Config(format!(
                "{} shards for a graph with {} nodes",
                shards.len(),
                graph.n()
            )));
        }
        Ok(Self {
            cfg: cfg.clone(),
            graph,
            spec,
            test,
            servers: make_servers(cfg, spec, shards)?,
            policy,
            mailbox: Mailbox::new(graph),
            epoch: 0,
            last_weights: None,
            last_losses: None,
        })
    }

    pub fn servers(&self) -> &[ServerState<'a>] {
        &self.servers
    }

    pub fn params(&self) -> Vec<&ParamVector> {
        self.servers.iter().map(|s| &s.params).collect()
    }

    pub fn message_stats(&self) -> MessageStats {
        self.mailbox.stats()
    }

    pub fn last_weights(&self) -> Option<&WeightMatrix> {
        self.last_weights.as_ref()
    }

    pub fn last_losses(&self) -> Option<&LossTable> {
        self.last_losses.as_ref()
    }

    /// Runs one epoch and returns its log.
    pub fn step(&mut self) -> Result<RoundLog> {
        let epoch = self.epoch;
        self.step_inner().map_err(|e| e.at_epoch(epoch + 1))
    }

    fn step_inner(&mut self) -> Result<RoundLog> {
        let started = self.cfg.record_timing.then(Instant::now);
        let epoch = self.epoch;
        let g = self.graph;
        train_all(&mut self.servers, self.spec, &self.cfg, epoch)?;

        let (weights, cached, losses) = if self.policy.adaptive() {
            let received = readout_phase(&self.servers, g, &mut self.mailbox)?;
            let table = evaluation_phase(
                &mut self.servers,
                g,
                self.spec,
                &received,
                &mut self.mailbox,
            )?;
            let view = exchange_centralities(table.centralities(), g, &mut self.mailbox)?;
            let w = self.policy.weights(g, Some((&table, &view)))?;
            (w, Some(received), Some(table))
        } else {
            (self.policy.weights(g, None)?, None, None)
        };

        gossip_phase(
            &mut self.servers,
            g,
            &weights,
            self.cfg.consensus_steps,
            &mut self.mailbox,
            cached,
        )?;

        self.epoch += 1;
        let adaptive = self.policy.adaptive();
        let log = log_epoch(
            self.epoch,
            &self.servers,
            self.spec,
            self.test,
            adaptive.then_some(&weights),
            self.cfg.optimizer.lr(epoch),
            started,
        )?;
        self.last_weights = Some(weights);
        self.last_losses = losses;
        Ok(log)
    }

    /// Runs all configured epochs, calling `observer` after each one.
    pub fn run(mut self, observer: &mut Observer<'_>) -> Result<Vec<RoundLog>> {
        let mut logs = Vec::with_capacity(self.cfg.epochs);
        for _ in 0..self.cfg.epochs {
            let before = self.mailbox.stats();
            let log = self.step()?;
            let view = EpochView {
                epoch: log.epoch,
                servers: &self.servers,
                weights: self.last_weights.as_ref(),
                losses: self.last_losses.as_ref(),
                messages: self.mailbox.stats() - before,
            };
            observer(&view).map_err(|e| e.at_epoch(log.epoch))?;
            logs.push(log);
        }
        Ok(logs)
    }
}

/// Decentralized training with the scheme named in `cfg`.
pub fn run_decentralized(
    cfg: &RoundConfig,
    graph: &Graph,
    partition: &Partition,
    spec: &ModelSpec,
    test: &Dataset,
) -> Result<Vec<RoundLog>> {
    run_decentralized_observed(cfg, graph, partition, spec, test, &mut |_| Ok(()))
}

pub fn run_decentralized_observed(
    cfg: &RoundConfig,
    graph: &Graph,
    partition: &Partition,
    spec: &ModelSpec,
    test: &Dataset,
    observer: &mut Observer<'_>,
) -> Result<Vec<RoundLog>> {
    Simulation::new(cfg, graph, &partition.shards, spec, test)?.run(observer)
}

/// Element-wise mean of all parameter vectors, summed in server order.
pub fn average_params<P: AsRef<[f64]>>(params: &[P]) -> Result<ParamVector> {
    let first = params
        .first()
        .ok_or(Error::EmptyDataset("parameter average"))?;
    let d = first.as_ref().len();
    let mut out = ParamVector::zeros(d);
    for p in params {
        let p = p.as_ref();
        if p.len() != d {
            return Err(Error::DimensionMismatch(
                "parameter vectors differ in length".into(),
            ));
        }
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    let inv = 1.0 / params.len() as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

/// FedAvg with full participation: local epochs, then every server adopts
/// the plain average.
pub fn run_fedavg(
    cfg: &RoundConfig,
    shards: &[Dataset],
    spec: &ModelSpec,
    test: &Dataset,
    observer: &mut Observer<'_>,
) -> Result<Vec<RoundLog>> {
    cfg.validate()?;
    let mut servers = make_servers(cfg, spec, shards)?;
    if servers.is_empty() {
        return Err(Error::Config("FedAvg needs at least one server".into()));
    }
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = cfg.record_timing.then(Instant::now);
        let result: Result<RoundLog> = (|| {
            train_all(&mut servers, spec, cfg, epoch)?;
            let params: Vec<&ParamVector> = servers.iter().map(|s| &s.params).collect();
            let avg = average_params(&params)?;
            for s in &mut servers {
                s.params.copy_from_slice(&avg);
            }
            let log = log_epoch(
                epoch + 1,
                &servers,
                spec,
                test,
                None,
                cfg.optimizer.lr(epoch),
                started,
            )?;
            observer(&EpochView {
                epoch: epoch + 1,
                servers: &servers,
                weights: None,
                losses: None,
                messages: MessageStats::default(),
            })?;
            Ok(log)
        })();
        logs.push(result.map_err(|e| e.at_epoch(epoch + 1))?);
    }
    Ok(logs)
}

/// One model trained on the whole dataset with the same optimizer and
/// schedule as the servers. It uses server 0's initialization and shuffle
/// stream, so it matches single-server FedAvg exactly.
pub fn run_centralized(
    cfg: &RoundConfig,
    full: &Dataset,
    spec: &ModelSpec,
    test: &Dataset,
    observer: &mut Observer<'_>,
) -> Result<Vec<RoundLog>> {
    cfg.validate()?;
    if full.is_empty() {
        return Err(Error::EmptyDataset("centralized training"));
    }
    let mut servers = make_servers(cfg, spec, [full])?;
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = cfg.record_timing.then(Instant::now);
        let result: Result<RoundLog> = (|| {
            local_epoch(&mut servers[0], spec, epoch, cfg.batch_size, cfg.seed)?;
            let log = log_epoch(
                epoch + 1,
                &servers,
                spec,
                test,
                None,
                cfg.optimizer.lr(epoch),
                started,
            )?;
            observer(&EpochView {
                epoch: epoch + 1,
                servers: &servers,
                weights: None,
                losses: None,
                messages: MessageStats::default(),
            })?;
            Ok(log)
        })();
        logs.push(result.map_err(|e| e.at_epoch(epoch + 1))?);
    }
    Ok(logs)
}

#[cfg(test)]
mod tests;
