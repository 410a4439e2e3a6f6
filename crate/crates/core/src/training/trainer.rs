use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::{assemble, build_training_set, TrainingSet};
use crate::error::{Error, Result};
use crate::evaluation::{check_checkpoint_vocabulary, evaluate_with_index, EvalOptions};
use crate::model::{HyTransformer, TokenSequence};
use crate::numerics::{AdamState, Checkpoint, Mode, Tape, Tensor};
use crate::rng::{stream, Stream};
use crate::scalar::Scalar;
use crate::store::{build_filter_index, AnswerIndex, KnowledgeGraph, Split};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogRecord {
    Header {
        n_queries: usize,
        n_aux_queries: usize,
        steps_per_epoch: u64,
        label_smoothing: f64,
        batch_size: usize,
        /// How auxiliary queries share batches with main queries.
        aux_batching: String,
        seed: u64,
    },
    Step {
        step: u64,
        epoch: u64,
        loss: f64,
        lr: f64,
        elapsed_s: f64,
    },
    Validation {
        epoch: u64,
        step: u64,
        mrr: f64,
        h1: f64,
        h10: f64,
        elapsed_s: f64,
    },
}

impl LogRecord {
    /// The record with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> LogRecord {
        let mut r = self.clone();
        match &mut r {
            LogRecord::Step { elapsed_s, .. } | LogRecord::Validation { elapsed_s, .. } => {
                *elapsed_s = 0.0
            }
            LogRecord::Header { .. } => {}
        }
        r
    }
}

/// Best-on-validation parameters.
#[derive(Debug, Clone)]
pub struct BestModel<F> {
    pub model: HyTransformer<F>,
    pub mrr: f64,
    pub epoch: u64,
    pub step: u64,
}

struct Batch<F> {
    step: u64,
    epoch: u64,
    queries: Vec<usize>,
    seqs: Vec<TokenSequence>,
    targets: Vec<F>,
}

/// Owns the parameters and optimizer state of one training run.
pub struct Trainer<'g, F: Scalar> {
    graph: &'g KnowledgeGraph,
    cfg: TrainConfig,
    set: Arc<TrainingSet>,
    model: HyTransformer<F>,
    optimizer: AdamState<F>,
    step: u64,
    filter: Option<AnswerIndex>,
    best: Option<BestModel<F>>,
    best_mrr: Option<(f64, u64)>,
    last_eval_step: Option<u64>,
}

impl<'g, F: Scalar> Trainer<'g, F> {
    pub fn new(
        graph: &'g KnowledgeGraph,
        model: HyTransformer<F>,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        crate::evaluation::check_model_matches(&model, graph)?;
        let set = Arc::new(build_training_set(graph, &cfg)?);
        let optimizer = AdamState::for_params(cfg.adam(), model.params());
        let filter = (cfg.eval_every > 0 && graph.split_len(Split::Valid) > 0)
            .then(|| build_filter_index(graph));
        Ok(Trainer {
            graph,
            cfg,
            set,
            model,
            optimizer,
            step: 0,
            filter,
            best: None,
            best_mrr: None,
            last_eval_step: None,
        })
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(
        graph: &'g KnowledgeGraph,
        ckpt: &Checkpoint<F>,
        cfg: TrainConfig,
    ) -> Result<Self> {
        check_checkpoint_vocabulary(ckpt, graph)?;
        let model = HyTransformer::from_checkpoint(ckpt)?;
        let optimizer = ckpt
            .optimizer
            .clone()
            .ok_or_else(|| Error::Checkpoint("no optimizer state to resume from".into()))?;
        if optimizer.moments().0.len() != model.params().len() {
            return Err(Error::Checkpoint(
                "optimizer state does not match the model".into(),
            ));
        }
        let extra = &ckpt.meta["extra"];
        let step = extra["step"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("missing step counter".into()))?;
        let mut trainer = Trainer::new(graph, model, cfg)?;
        trainer.optimizer = AdamState {
            config: trainer.cfg.adam(),
            ..optimizer
        };
        trainer.step = step;
        if let (Some(mrr), Some(epoch)) = (extra["best_mrr"].as_f64(), extra["best_epoch"].as_u64())
        {
            trainer.best_mrr = Some((mrr, epoch));
        }
        Ok(trainer)
    }

    pub fn model(&self) -> &HyTransformer<F> {
        &self.model
    }

    pub fn optimizer(&self) -> &AdamState<F> {
        &self.optimizer
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn training_set(&self) -> &TrainingSet {
        &self.set
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.set.len().div_ceil(self.cfg.batch_size) as u64
    }

    /// Step count at which the run stops.
    pub fn total_steps(&self) -> u64 {
        let full = (self.cfg.epochs as u64).saturating_mul(self.steps_per_epoch());
        self.cfg.max_steps.map_or(full, |m| m.min(full))
    }

    /// Best validation result so far, including one restored from a
    /// checkpoint.
    pub fn best_score(&self) -> Option<(f64, u64)> {
        self.best_mrr
    }

    pub fn best(&self) -> Option<&BestModel<F>> {
        self.best.as_ref()
    }

    pub fn into_parts(self) -> (HyTransformer<F>, Option<BestModel<F>>) {
        (self.model, self.best)
    }

    /// Model, optimizer state and step counter; everything needed to resume.
    pub fn checkpoint(&self) -> Checkpoint<F> {
        let mut extra = serde_json::json!({
            "step": self.step,
            "vocabulary": self.graph.vocabulary_fingerprint(),
            "train": self.cfg,
        });
        if let Some((mrr, epoch)) = self.best_mrr {
            extra["best_mrr"] = mrr.into();
            extra["best_epoch"] = epoch.into();
        }
        self.model.to_checkpoint(Some(&self.optimizer), extra)
    }

    pub fn best_checkpoint(&self) -> Option<Checkpoint<F>> {
        self.best.as_ref().map(|b| {
            b.model.to_checkpoint(
                None,
                serde_json::json!({
                    "step": b.step,
                    "epoch": b.epoch,
                    "valid_mrr": b.mrr,
                    "vocabulary": self.graph.vocabulary_fingerprint(),
                    "train": self.cfg,
                }),
            )
        })
    }

    pub fn header(&self) -> LogRecord {
        LogRecord::Header {
            n_queries: self.set.len(),
            n_aux_queries: self.set.n_aux(),
            steps_per_epoch: self.steps_per_epoch(),
            label_smoothing: self.cfg.label_smoothing,
            batch_size: self.cfg.batch_size,
            aux_batching: "mixed".into(),
            seed: self.cfg.seed,
        }
    }

    /// Query order for `epoch`, a pure function of the seed.
    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        epoch_order(self.set.len(), self.cfg.seed, epoch)
    }

    /// One Adam step on the given training queries; returns the loss.
    pub fn train_on(&mut self, queries: &[usize]) -> Result<f64> {
        let spe = self.steps_per_epoch();
        let batch = make_batch(
            &self.set,
            &self.cfg,
            &self.model,
            self.step,
            self.step / spe,
            queries.to_vec(),
        )?;
        self.apply(batch)
    }

    fn apply(&mut self, batch: Batch<F>) -> Result<f64> {
        debug_assert_eq!(batch.step, self.step);
        let network = self.model.network();
        let encoded = network.encode_batch(&batch.seqs)?;
        let tape = Tape::new();
        let params = self.model.bind(&tape, true);
        let mut rng = stream(self.cfg.seed, Stream::Dropout { step: batch.step });
        let loss = network.loss(&params, &encoded, batch.targets, Mode::Train, &mut rng)?;
        let value = tape.scalar(loss).as_f64();
        if !value.is_finite() {
            return Err(self.divergence(
                &batch.queries,
                batch.step,
                batch.epoch,
                &format!("loss {value}"),
            ));
        }
        let mut grads = tape.backward(loss);
        let grads: Vec<Tensor<F>> = params
            .bound()
            .into_iter()
            .zip(self.model.params())
            .map(|(v, p)| {
                v.and_then(|v| grads.take(v))
                    .unwrap_or_else(|| Tensor::zeros(p.shape()))
            })
            .collect();
        drop(params);
        if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
            let what = format!("non-finite gradient for {}", self.model.param_names()[i]);
            return Err(self.divergence(&batch.queries, batch.step, batch.epoch, &what));
        }
        self.optimizer.step(self.model.params_mut(), &grads)?;
        self.step += 1;
        Ok(value)
    }

    fn divergence(&self, queries: &[usize], step: u64, epoch: u64, what: &str) -> Error {
        let shown: Vec<String> = queries
            .iter()
            .take(3)
            .map(|&i| {
                let q = &self.set.queries[i];
                format!("{} masked at {}", q.source, q.slot)
            })
            .collect();
        Error::Divergence {
            step,
            epoch,
            detail: format!(
                "{what} on a batch of {} queries, first: {}",
                queries.len(),
                shown.join("; ")
            ),
        }
    }

    /// Filtered validation MRR; ties with the best so far go to the later epoch.
    pub fn validate(&mut self, epoch: u64) -> Result<Option<LogRecord>> {
        let Some(index) = &self.filter else {
            return Ok(None);
        };
        let opts = EvalOptions {
            batch_size: self.cfg.eval_batch_size,
            ..EvalOptions::default()
        };
        let report = evaluate_with_index(&self.model, self.graph, index, Split::Valid, &opts)?;
        let mrr = report.overall.mrr;
        self.last_eval_step = Some(self.step);
        if self.best_mrr.is_none_or(|(best, _)| mrr >= best) {
            self.best_mrr = Some((mrr, epoch));
            self.best = Some(BestModel {
                model: self.model.clone(),
                mrr,
                epoch,
                step: self.step,
            });
        }
        Ok(Some(LogRecord::Validation {
            epoch,
            step: self.step,
            mrr,
            h1: report.overall.h1,
            h10: report.overall.h10,
            elapsed_s: 0.0,
        }))
    }

    /// Trains until the configured epoch count or step cap, sending every
    /// log record to `sink` as it is produced.
    pub fn run(&mut self, sink: &mut dyn FnMut(&LogRecord)) -> Result<()> {
        let start = Instant::now();
        if self.step == 0 {
            sink(&self.header());
        }
        let spe = self.steps_per_epoch();
        let total = self.total_steps();
        let first = self.step;
        if first >= total {
            return Ok(());
        }
        let (set, cfg) = (Arc::clone(&self.set), self.cfg.clone());
        let n_entities = self.model.n_entities();
        let max_len = self.model.config().max_len;
        std::thread::scope(|scope| {
            let (tx, rx) = sync_channel(cfg.prefetch);
            let producer = scope
                .spawn(move || produce::<F>(&set, &cfg, max_len, n_entities, first..total, tx));
            let result = self.consume(rx, spe, total, start, sink);
            producer.join().expect("batch producer panicked");
            result
        })
    }

    fn consume(
        &mut self,
        rx: Receiver<Result<Batch<F>>>,
        spe: u64,
        total: u64,
        start: Instant,
        sink: &mut dyn FnMut(&LogRecord),
    ) -> Result<()> {
        for batch in rx {
            let batch = batch?;
            let (step, epoch) = (batch.step, batch.epoch);
            let loss = self.apply(batch)?;
            sink(&LogRecord::Step {
                step,
                epoch,
                loss,
                lr: self.cfg.lr,
                elapsed_s: start.elapsed().as_secs_f64(),
            });
            let done = self.step;
            let epoch_end = done % spe == 0;
            let completed = done.div_ceil(spe);
            let scheduled =
                epoch_end && self.cfg.eval_every > 0 && completed % self.cfg.eval_every as u64 == 0;
            if scheduled || (done == total && self.last_eval_step != Some(done)) {
                if let Some(mut rec) = self.validate(completed)? {
                    if let LogRecord::Validation { elapsed_s, .. } = &mut rec {
                        *elapsed_s = start.elapsed().as_secs_f64();
                    }
                    sink(&rec);
                }
            }
        }
        Ok(())
    }
}

fn epoch_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut stream(seed, Stream::Shuffle { epoch }));
    order
}

fn make_batch<F: Scalar>(
    set: &TrainingSet,
    cfg: &TrainConfig,
    model: &HyTransformer<F>,
    step: u64,
    epoch: u64,
    queries: Vec<usize>,
) -> Result<Batch<F>> {
    build_batch(
        set,
        cfg,
        model.config().max_len,
        model.n_entities(),
        step,
        epoch,
        queries,
    )
}

fn build_batch<F: Scalar>(
    set: &TrainingSet,
    cfg: &TrainConfig,
    max_len: usize,
    n_entities: usize,
    step: u64,
    epoch: u64,
    queries: Vec<usize>,
) -> Result<Batch<F>> {
    let refs: Vec<_> = queries.iter().map(|&i| &set.queries[i]).collect();
    let mut permute = cfg
        .shuffle_qualifiers
        .then(|| stream(cfg.seed, Stream::Permute { step }));
    let (seqs, targets) = assemble(&refs, cfg, max_len, n_entities, permute.as_mut())?;
    Ok(Batch {
        step,
        epoch,
        queries,
        seqs,
        targets,
    })
}

/// Assembles batches for `steps` in order and hands them over a bounded
/// queue; stops early once the consumer hangs up.
fn produce<F: Scalar>(
    set: &TrainingSet,
    cfg: &TrainConfig,
    max_len: usize,
    n_entities: usize,
    steps: std::ops::Range<u64>,
    tx: SyncSender<Result<Batch<F>>>,
) {
    let spe = set.len().div_ceil(cfg.batch_size) as u64;
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for step in steps {
        let epoch = step / spe;
        if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
            cached = Some((epoch, epoch_order(set.len(), cfg.seed, epoch)));
        }
        let order = &cached.as_ref().expect("order cached").1;
        let offset = (step % spe) as usize * cfg.batch_size;
        let queries = order[offset..(offset + cfg.batch_size).min(order.len())].to_vec();
        let batch = build_batch(set, cfg, max_len, n_entities, step, epoch, queries);
        let failed = batch.is_err();
        if tx.send(batch).is_err() || failed {
            return;
        }
    }
}
