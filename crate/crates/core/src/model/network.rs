use std::cell::RefCell;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::embedding::ProcessedTables;
use super::score::ScoreVector;
use super::sequence::{Token, TokenSequence};
use crate::error::{Error, Result};
use crate::numerics::{AdamState, AttentionShape, Checkpoint, Mode, Objective, Tape, Tensor, Var};
use crate::rng::{stream, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
struct LayerSlots {
    ln1_gain: usize,
    ln1_bias: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_gain: usize,
    ln2_bias: usize,
    ff1_w: usize,
    ff1_b: usize,
    ff2_w: usize,
    ff2_b: usize,
}

/// Index of every parameter tensor in the flat parameter list.
#[derive(Debug, Clone)]
struct Layout {
    entity: usize,
    relation: usize,
    entity_ln_gain: usize,
    entity_ln_bias: usize,
    relation_ln_gain: usize,
    relation_ln_bias: usize,
    input_w: usize,
    input_b: usize,
    position: usize,
    layers: Vec<LayerSlots>,
    final_gain: usize,
    final_bias: usize,
    head_w1: usize,
    head_b1: usize,
    head_w2: usize,
    head_b2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn build_layout(cfg: &ModelConfig, n_entities: usize, n_relations: usize) -> (Layout, Vec<Spec>) {
    let mut specs: Vec<Spec> = Vec::new();
    let mut add = |name: &str, shape: &[usize], init: Init| {
        specs.push(Spec {
            name: name.to_owned(),
            shape: shape.to_vec(),
            init,
        });
        specs.len() - 1
    };
    let (de, dh, t) = (cfg.d_embed, cfg.d_hidden, cfg.max_len);
    let dff = cfg.ffn_mult * dh;
    let entity = add("embed.entity", &[n_entities + 1, de], Init::Normal);
    let relation = add("embed.relation", &[n_relations, de], Init::Normal);
    let entity_ln_gain = add("embed.entity_ln.gain", &[de], Init::Ones);
    let entity_ln_bias = add("embed.entity_ln.bias", &[de], Init::Zeros);
    let relation_ln_gain = add("embed.relation_ln.gain", &[de], Init::Ones);
    let relation_ln_bias = add("embed.relation_ln.bias", &[de], Init::Zeros);
    let input_w = add("input.weight", &[de, dh], Init::Normal);
    let input_b = add("input.bias", &[dh], Init::Zeros);
    let position = add("input.position", &[t, dh], Init::Normal);
    let layers = (0..cfg.n_layers)
        .map(|l| {
            let p = |s: &str| format!("encoder.{l}.{s}");
            LayerSlots {
                ln1_gain: add(&p("ln1.gain"), &[dh], Init::Ones),
                ln1_bias: add(&p("ln1.bias"), &[dh], Init::Zeros),
                wq: add(&p("attn.query.weight"), &[dh, dh], Init::Normal),
                bq: add(&p("attn.query.bias"), &[dh], Init::Zeros),
                wk: add(&p("attn.key.weight"), &[dh, dh], Init::Normal),
                wv: add(&p("attn.value.weight"), &[dh, dh], Init::Normal),
                bv: add(&p("attn.value.bias"), &[dh], Init::Zeros),
                wo: add(&p("attn.out.weight"), &[dh, dh], Init::Normal),
                bo: add(&p("attn.out.bias"), &[dh], Init::Zeros),
                ln2_gain: add(&p("ln2.gain"), &[dh], Init::Ones),
                ln2_bias: add(&p("ln2.bias"), &[dh], Init::Zeros),
                ff1_w: add(&p("ff.inner.weight"), &[dh, dff], Init::Normal),
                ff1_b: add(&p("ff.inner.bias"), &[dff], Init::Zeros),
                ff2_w: add(&p("ff.outer.weight"), &[dff, dh], Init::Normal),
                ff2_b: add(&p("ff.outer.bias"), &[dh], Init::Zeros),
            }
        })
        .collect();
    let final_gain = add("encoder.final_ln.gain", &[dh], Init::Ones);
    let final_bias = add("encoder.final_ln.bias", &[dh], Init::Zeros);
    let head_w1 = add("head.inner.weight", &[dh, dh], Init::Normal);
    let head_b1 = add("head.inner.bias", &[dh], Init::Zeros);
    let head_w2 = add("head.outer.weight", &[dh, de], Init::Normal);
    let head_b2 = add("head.outer.bias", &[de], Init::Zeros);
    let layout = Layout {
        entity,
        relation,
        entity_ln_gain,
        entity_ln_bias,
        relation_ln_gain,
        relation_ln_bias,
        input_w,
        input_b,
        position,
        layers,
        final_gain,
        final_bias,
        head_w1,
        head_b1,
        head_w2,
        head_b2,
    };
    (layout, specs)
}

/// Where a forward pass takes its parameter nodes from.
///
/// Tensors are copied onto the tape lazily, on first use.
pub struct Params<'a, S: Scalar> {
    tape: &'a Tape<S>,
    source: Source<'a, S>,
}

enum Source<'a, S> {
    Tensors {
        tensors: &'a [Tensor<S>],
        vars: RefCell<Vec<Option<Var>>>,
        trainable: bool,
    },
    Vars(&'a [Var]),
}

impl<'a, S: Scalar> Params<'a, S> {
    pub fn from_tensors(tape: &'a Tape<S>, tensors: &'a [Tensor<S>], trainable: bool) -> Self {
        Params {
            tape,
            source: Source::Tensors {
                tensors,
                vars: RefCell::new(vec![None; tensors.len()]),
                trainable,
            },
        }
    }

    /// Parameters already on the tape, in layout order.
    pub fn from_vars(tape: &'a Tape<S>, vars: &'a [Var]) -> Self {
        Params {
            tape,
            source: Source::Vars(vars),
        }
    }

    pub fn tape(&self) -> &'a Tape<S> {
        self.tape
    }

    fn get(&self, i: usize) -> Var {
        match &self.source {
            Source::Vars(v) => v[i],
            Source::Tensors {
                tensors,
                vars,
                trainable,
            } => *vars.borrow_mut()[i]
                .get_or_insert_with(|| self.tape.leaf(tensors[i].clone(), *trainable)),
        }
    }

    /// Tape nodes bound so far, by parameter index.
    pub fn bound(&self) -> Vec<Option<Var>> {
        match &self.source {
            Source::Vars(v) => v.iter().copied().map(Some).collect(),
            Source::Tensors { vars, .. } => vars.borrow().clone(),
        }
    }
}

/// A batch of token sequences resolved to table rows.
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    pub size: usize,
    pub seq: usize,
    /// Row in `[Ê; R̂]` per token, `None` for padding.
    tokens: Vec<Option<usize>>,
    keep: Vec<bool>,
    mask_rows: Vec<usize>,
}

impl EncodedBatch {
    pub fn new(seqs: &[TokenSequence], n_entities: usize, n_relations: usize) -> Result<Self> {
        let seq = seqs.first().map_or(0, TokenSequence::len);
        let mut tokens = Vec::with_capacity(seqs.len() * seq);
        let mut keep = Vec::with_capacity(seqs.len() * seq);
        let mut mask_rows = Vec::with_capacity(seqs.len());
        for (b, s) in seqs.iter().enumerate() {
            if s.len() != seq {
                return Err(Error::Shape(format!(
                    "sequence {b} has length {} but the batch uses {seq}",
                    s.len()
                )));
            }
            for tok in s.tokens() {
                let row = match *tok {
                    Token::Entity(e) if e < n_entities => Some(e),
                    Token::Entity(e) => {
                        return Err(Error::OutOfVocabulary {
                            kind: "entity",
                            id: e,
                            size: n_entities,
                        })
                    }
                    Token::Relation(r) if r < n_relations => Some(n_entities + 1 + r),
                    Token::Relation(r) => {
                        return Err(Error::OutOfVocabulary {
                            kind: "relation",
                            id: r,
                            size: n_relations,
                        })
                    }
                    Token::Mask => Some(n_entities),
                    Token::Pad => None,
                };
                tokens.push(row);
                keep.push(row.is_some());
            }
            mask_rows.push(b * seq + s.mask_index());
        }
        Ok(EncodedBatch {
            size: seqs.len(),
            seq,
            tokens,
            keep,
            mask_rows,
        })
    }

    /// `false` at padding positions.
    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn mask_rows(&self) -> &[usize] {
        &self.mask_rows
    }
}

/// Per-tensor parameter count, for `describe`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
}

/// Pure forward computation of the network, independent of parameter
/// storage and precision.
#[derive(Debug, Clone)]
pub struct Network {
    cfg: ModelConfig,
    n_entities: usize,
    n_relations: usize,
    layout: Layout,
}

impl Network {
    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    pub fn encode_batch(&self, seqs: &[TokenSequence]) -> Result<EncodedBatch> {
        if let Some(s) = seqs.iter().find(|s| s.len() != self.cfg.max_len) {
            return Err(Error::Shape(format!(
                "sequence of length {} fed to a model with max_len {}",
                s.len(),
                self.cfg.max_len
            )));
        }
        EncodedBatch::new(seqs, self.n_entities, self.n_relations)
    }

    /// `(Ê, R̂)` on the tape.
    pub fn process_embeddings<S: Scalar>(
        &self,
        p: &Params<'_, S>,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<(Var, Var)> {
        let tape = p.tape();
        let l = &self.layout;
        let eps = S::of(self.cfg.ln_eps);
        let mut ent = p.get(l.entity);
        if self.cfg.use_entity_ln {
            ent = tape.layer_norm(ent, p.get(l.entity_ln_gain), p.get(l.entity_ln_bias), eps)?;
        }
        if self.cfg.use_entity_dropout {
            ent = tape.dropout(ent, self.cfg.ent_emb_dropout, mode, rng)?;
        }
        let mut rel = p.get(l.relation);
        if self.cfg.use_relation_ln {
            rel = tape.layer_norm(
                rel,
                p.get(l.relation_ln_gain),
                p.get(l.relation_ln_bias),
                eps,
            )?;
        }
        Ok((ent, rel))
    }

    /// Statement representation `S`: gathered embeddings projected to the
    /// encoder width, plus position embeddings.
    pub fn embed<S: Scalar>(
        &self,
        p: &Params<'_, S>,
        ent: Var,
        rel: Var,
        batch: &EncodedBatch,
    ) -> Result<Var> {
        let tape = p.tape();
        let l = &self.layout;
        let table = tape.concat_rows(ent, rel)?;
        let x = tape.gather(table, batch.tokens.clone())?;
        let mut x = tape.linear(x, p.get(l.input_w), p.get(l.input_b))?;
        if self.cfg.use_positions {
            let positions = (0..batch.size)
                .flat_map(|_| (0..batch.seq).map(Some))
                .collect();
            let pos = tape.gather(p.get(l.position), positions)?;
            x = tape.add(x, pos)?;
        }
        Ok(x)
    }

    /// Runs the pre-norm encoder stack over `x` (`(B·T) × d_hidden`).
    pub fn encode_rows<S: Scalar>(
        &self,
        p: &Params<'_, S>,
        mut x: Var,
        batch: &EncodedBatch,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let tape = p.tape();
        let eps = S::of(self.cfg.ln_eps);
        let shape = AttentionShape {
            batch: batch.size,
            seq: batch.seq,
            heads: self.cfg.n_heads,
        };
        for ls in &self.layout.layers {
            let h = tape.layer_norm(x, p.get(ls.ln1_gain), p.get(ls.ln1_bias), eps)?;
            let q = tape.linear(h, p.get(ls.wq), p.get(ls.bq))?;
            let k = tape.matmul(h, p.get(ls.wk))?;
            let v = tape.linear(h, p.get(ls.wv), p.get(ls.bv))?;
            let a = tape.attention(q, k, v, shape, &batch.keep)?;
            let a = tape.linear(a, p.get(ls.wo), p.get(ls.bo))?;
            let a = tape.dropout(a, self.cfg.attn_dropout, mode, rng)?;
            x = tape.add(x, a)?;

            let h = tape.layer_norm(x, p.get(ls.ln2_gain), p.get(ls.ln2_bias), eps)?;
            let f = tape.linear(h, p.get(ls.ff1_w), p.get(ls.ff1_b))?;
            let f = tape.gelu(f);
            let f = tape.linear(f, p.get(ls.ff2_w), p.get(ls.ff2_b))?;
            let f = tape.dropout(f, self.cfg.attn_dropout, mode, rng)?;
            x = tape.add(x, f)?;
        }
        let l = &self.layout;
        tape.layer_norm(x, p.get(l.final_gain), p.get(l.final_bias), eps)
    }

    /// `Ŝ = Transformer(S)`.
    pub fn encode<S: Scalar>(
        &self,
        p: &Params<'_, S>,
        ent: Var,
        rel: Var,
        batch: &EncodedBatch,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let x = self.embed(p, ent, rel, batch)?;
        self.encode_rows(p, x, batch, mode, rng)
    }

    /// `f(Ŝ_mask)`, the query vector in entity-embedding space (`B × d_embed`).
    pub fn query_vectors<S: Scalar>(
        &self,
        p: &Params<'_, S>,
        rep: Var,
        batch: &EncodedBatch,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let tape = p.tape();
        let l = &self.layout;
        let m = tape.gather(rep, batch.mask_rows.iter().copied().map(Some).collect())?;
        let h = tape.linear(m, p.get(l.head_w1), p.get(l.head_b1))?;
        let h = tape.gelu(h);
        let h = tape.dropout(h, self.cfg.head_dropout, mode, rng)?;
        tape.linear(h, p.get(l.head_w2), p.get(l.head_b2))
    }

    /// Logits against every non-mask entity (`B × N`).
    pub fn score_logits<S: Scalar>(&self, p: &Params<'_, S>, query: Var, ent: Var) -> Result<Var> {
        let tape = p.tape();
        let candidates = tape.slice_rows(ent, 0, self.n_entities)?;
        tape.matmul_bt(query, candidates)
    }

    /// Full forward pass to logits, processing the tables on the tape.
    pub fn logits<S: Scalar>(
        &self,
        p: &Params<'_, S>,
        batch: &EncodedBatch,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let (ent, rel) = self.process_embeddings(p, mode, rng)?;
        let rep = self.encode(p, ent, rel, batch, mode, rng)?;
        let query = self.query_vectors(p, rep, batch, mode, rng)?;
        self.score_logits(p, query, ent)
    }

    /// Mean smoothed binary cross-entropy over the batch; `targets` are
    /// already smoothed, row-major `B × N`.
    pub fn loss<S: Scalar>(
        &self,
        p: &Params<'_, S>,
        batch: &EncodedBatch,
        targets: Vec<S>,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let logits = self.logits(p, batch, mode, rng)?;
        p.tape().bce_with_logits(logits, targets)
    }
}

/// The smoothed-BCE training loss of a fixed batch as a function of all
/// parameters, for finite-difference checks.
///
/// Dropout masks are drawn from a fixed stream, so every evaluation sees
/// the same masks.
pub struct ModelLoss<'a> {
    pub network: &'a Network,
    pub batch: EncodedBatch,
    /// Smoothed targets, `B × N`.
    pub targets: Vec<f64>,
    pub mode: Mode,
    pub seed: u64,
}

impl Objective for ModelLoss<'_> {
    fn evaluate<S: Scalar>(&self, tape: &Tape<S>, params: &[Var]) -> Result<Var> {
        let p = Params::from_vars(tape, params);
        let mut rng = stream(self.seed, Stream::Dropout { step: 0 });
        let targets = self.targets.iter().map(|&t| S::of(t)).collect();
        self.network
            .loss(&p, &self.batch, targets, self.mode, &mut rng)
    }
}

/// The model: configuration, vocabulary sizes and parameters.
#[derive(Debug, Clone)]
pub struct HyTransformer<F> {
    network: Network,
    names: Vec<String>,
    params: Vec<Tensor<F>>,
}

impl<F: Scalar> HyTransformer<F> {
    /// Normal(0, init_std²) weights and tables, zero biases, unit LN gains.
    pub fn new(cfg: ModelConfig, n_entities: usize, n_relations: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if n_entities == 0 || n_relations == 0 {
            return Err(Error::Config(
                "model needs at least one entity and one relation".into(),
            ));
        }
        let (layout, specs) = build_layout(&cfg, n_entities, n_relations);
        let mut rng = stream(seed, Stream::Init);
        let params = specs
            .iter()
            .map(|s| match s.init {
                Init::Normal => Tensor::randn(&s.shape, cfg.init_std, &mut rng),
                Init::Zeros => Tensor::zeros(&s.shape),
                Init::Ones => Tensor::ones(&s.shape),
            })
            .collect();
        Ok(HyTransformer {
            network: Network {
                cfg,
                n_entities,
                n_relations,
                layout,
            },
            names: specs.into_iter().map(|s| s.name).collect(),
            params,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn config(&self) -> &ModelConfig {
        &self.network.cfg
    }

    pub fn n_entities(&self) -> usize {
        self.network.n_entities
    }

    pub fn n_relations(&self) -> usize {
        self.network.n_relations
    }

    pub fn params(&self) -> &[Tensor<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<F>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.params[i])
    }

    pub fn describe(&self) -> Vec<ParamInfo> {
        self.names
            .iter()
            .zip(&self.params)
            .map(|(n, t)| ParamInfo {
                name: n.clone(),
                shape: t.shape().to_vec(),
                count: t.len(),
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn bind<'a>(&'a self, tape: &'a Tape<F>, trainable: bool) -> Params<'a, F> {
        Params::from_tensors(tape, &self.params, trainable)
    }

    /// Eval-mode `(Ê, R̂)`; computed once and reused for many queries.
    pub fn processed_tables(&self) -> Result<ProcessedTables<F>> {
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        let mut rng = stream(0, Stream::Data);
        let (ent, rel) = self.network.process_embeddings(&p, Mode::Eval, &mut rng)?;
        let entity = tape.value(ent).clone();
        let relation = tape.value(rel).clone();
        Ok(ProcessedTables { entity, relation })
    }

    /// Eval-mode logits (`B × N`) for a batch of sequences.
    pub fn predict_logits(
        &self,
        seqs: &[TokenSequence],
        tables: &ProcessedTables<F>,
    ) -> Result<Tensor<F>> {
        if seqs.is_empty() {
            return Tensor::new(&[0, self.n_entities()], Vec::new());
        }
        let batch = self.network.encode_batch(seqs)?;
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        let ent = tape.constant(tables.entity.clone());
        let rel = tape.constant(tables.relation.clone());
        let mut rng = stream(0, Stream::Data);
        let rep = self
            .network
            .encode(&p, ent, rel, &batch, Mode::Eval, &mut rng)?;
        let q = self
            .network
            .query_vectors(&p, rep, &batch, Mode::Eval, &mut rng)?;
        let logits = self.network.score_logits(&p, q, ent)?;
        let out = tape.value(logits).clone();
        Ok(out)
    }

    /// Eval-mode probabilities for one sequence.
    pub fn score(
        &self,
        seq: &TokenSequence,
        tables: &ProcessedTables<F>,
    ) -> Result<ScoreVector<F>> {
        let logits = self.predict_logits(std::slice::from_ref(seq), tables)?;
        Ok(ScoreVector::from_logits(logits.data()))
    }

    pub fn cast<G: Scalar>(&self) -> HyTransformer<G> {
        HyTransformer {
            network: self.network.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// Packs parameters, configuration and optional optimizer state.
    ///
    /// `extra` is stored under `meta.extra` verbatim.
    pub fn to_checkpoint(
        &self,
        optimizer: Option<&AdamState<F>>,
        extra: serde_json::Value,
    ) -> Checkpoint<F> {
        let meta = serde_json::json!({
            "format": "hytransformer",
            "scalar": F::NAME,
            "config": self.network.cfg,
            "n_entities": self.network.n_entities,
            "n_relations": self.network.n_relations,
            "extra": extra,
        });
        Checkpoint {
            meta,
            tensors: self
                .names
                .iter()
                .cloned()
                .zip(self.params.iter().cloned())
                .collect(),
            optimizer: optimizer.cloned(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint<F>) -> Result<Self> {
        let meta = &ckpt.meta;
        if meta.get("format").and_then(|v| v.as_str()) != Some("hytransformer") {
            return Err(Error::Checkpoint("not a model checkpoint".into()));
        }
        let cfg: ModelConfig = serde_json::from_value(meta["config"].clone())
            .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        let count = |k: &str| {
            meta.get(k)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| Error::Checkpoint(format!("missing {k}")))
        };
        let mut model =
            HyTransformer::<F>::new(cfg, count("n_entities")?, count("n_relations")?, 0)?;
        if ckpt.tensors.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                model.params.len(),
                ckpt.tensors.len()
            )));
        }
        for ((name, t), (want, slot)) in ckpt
            .tensors
            .iter()
            .zip(model.names.iter().zip(model.params.iter_mut()))
        {
            if name != want || t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}{:?} does not match {want}{:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(model)
    }
}
