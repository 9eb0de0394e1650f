use std::rc::Rc;

use super::{LayerIds, LstmIds, Mode, Sdgnn};
use crate::graphbuild::{Batch, DepGraph};
use crate::numcore::{ParamStore, Rng, Tape, Tensor, Var};
use crate::{Error, Result};

/// Tape handles produced by [`Sdgnn::forward_tape`].
pub struct TapeOutput {
    /// Spoiler probabilities, shape `[B]`.
    pub probs: Var,
    /// Per sentence, per layer: edge weights in graph edge order.
    pub edge_weights: Vec<Vec<Var>>,
    /// Per sentence: pooling weights over `n_max` positions.
    pub pooling: Vec<Var>,
}

/// Plain values of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub probs: Vec<f64>,
    /// `[sentence][layer][edge]`, edges in `Batch::graphs[sentence]` order.
    /// Softmax-normalized attention, or raw gates in gating mode.
    pub edge_weights: Vec<Vec<Vec<f64>>>,
    /// `[sentence][token]` over real tokens.
    pub pooling: Vec<Vec<f64>>,
}

/// Per-layer relation tables shared by every sentence of a batch.
pub struct RelationTables {
    /// `d × |L|`: column `r` is `W_att · e_r` (attention) or `e_r` (gating).
    proj_t: Var,
    bias: Var,
    count: usize,
}

impl Sdgnn {
    fn lstm(&self, tape: &mut Tape<'_>, x: Var, ids: &LstmIds, reverse: bool) -> Result<Var> {
        let h = self.config.hidden();
        let n = tape.value(x).dims2().0;
        let w_ih = tape.param(ids.w_ih);
        let w_hh = tape.param(ids.w_hh);
        let b = tape.param(ids.b);
        let xw = tape.matmul(x, w_ih)?;
        let xw = tape.add_row(xw, b)?;

        let mut state: Option<(Var, Var)> = None;
        let mut outputs: Vec<Option<Var>> = vec![None; n];
        let steps: Box<dyn Iterator<Item = usize>> = if reverse { Box::new((0..n).rev()) } else { Box::new(0..n) };
        for t in steps {
            let mut gates = tape.slice_rows(xw, t, t + 1)?;
            if let Some((h_prev, _)) = state {
                let rec = tape.matmul(h_prev, w_hh)?;
                gates = tape.add(gates, rec)?;
            }
            let i = tape.slice_cols(gates, 0, h)?;
            let i = tape.sigmoid(i);
            let f = tape.slice_cols(gates, h, 2 * h)?;
            let f = tape.sigmoid(f);
            let g = tape.slice_cols(gates, 2 * h, 3 * h)?;
            let g = tape.tanh(g);
            let o = tape.slice_cols(gates, 3 * h, 4 * h)?;
            let o = tape.sigmoid(o);
            let mut c = tape.mul(i, g)?;
            if let Some((_, c_prev)) = state {
                let keep = tape.mul(f, c_prev)?;
                c = tape.add(keep, c)?;
            }
            let tc = tape.tanh(c);
            let h_t = tape.mul(o, tc)?;
            outputs[t] = Some(h_t);
            state = Some((h_t, c));
        }
        let outputs: Vec<Var> = outputs.into_iter().map(|o| o.expect("every step ran")).collect();
        tape.concat_rows(&outputs)
    }

    /// Contextual token features, one `n_max × d` matrix per sentence. The
    /// forward LSTM fills the first `d/2` columns and the backward LSTM the
    /// rest; padded rows are zero.
    pub fn encode(&self, tape: &mut Tape<'_>, batch: &Batch, mut rng: Option<&mut Rng>) -> Result<Vec<Var>> {
        let d = self.config.d;
        let mut out = Vec::with_capacity(batch.size());
        for b in 0..batch.size() {
            let tokens = batch.tokens(b);
            let n = tokens.len();
            if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
                return Err(Error::Vocab(format!("word id {bad} outside vocabulary of {}", self.config.vocab_size)));
            }
            if n == 0 {
                out.push(tape.constant(Tensor::zeros(&[batch.n_max, d])));
                continue;
            }
            let table = tape.param(self.ids.word_emb);
            let emb = tape.gather_rows(table, tokens)?;
            let emb = tape.dropout(emb, self.config.dropout, rng.as_deref_mut())?;
            let fwd = self.lstm(tape, emb, &self.ids.lstm[0], false)?;
            let bwd = self.lstm(tape, emb, &self.ids.lstm[1], true)?;
            let mut h0 = tape.concat_cols(&[fwd, bwd])?;
            if n < batch.n_max {
                let pad = tape.constant(Tensor::zeros(&[batch.n_max - n, d]));
                h0 = tape.concat_rows(&[h0, pad])?;
            }
            out.push(h0);
        }
        Ok(out)
    }

    /// Relation tables for `layer`; computed once per batch.
    pub fn relation_tables(&self, tape: &mut Tape<'_>, layer: usize) -> Result<RelationTables> {
        let ids: &LayerIds = &self.ids.layers[layer];
        let emb = tape.param(ids.rel_emb);
        let proj_t = match ids.w_att {
            Some(w_att) => {
                // row r of E·W_attᵀ is (W_att e_r)ᵀ
                let w = tape.param(w_att);
                let wt = tape.transpose(w);
                let proj = tape.matmul(emb, wt)?;
                tape.transpose(proj)
            }
            None => tape.transpose(emb),
        };
        Ok(RelationTables { proj_t, bias: tape.param(ids.rel_bias), count: self.config.num_relations })
    }

    /// Maps graph relation ids through the mode's relation map.
    fn mapped_relations(&self, graph: &DepGraph, count: usize) -> Result<Vec<usize>> {
        graph
            .edges()
            .iter()
            .map(|e| {
                let mapped = self
                    .relation_map
                    .get(e.relation)
                    .copied()
                    .ok_or(Error::RelationId { id: e.relation, count: self.relation_map.len() })?;
                if mapped >= count {
                    return Err(Error::RelationId { id: mapped, count });
                }
                Ok(mapped)
            })
            .collect()
    }

    /// `h_u · t_r + bias_r` for every edge, `u` the receiver and `t_r` the
    /// relation's column of the table.
    fn edge_bilinear(
        &self,
        tape: &mut Tape<'_>,
        h_prev: Var,
        graph: &DepGraph,
        tables: &RelationTables,
    ) -> Result<Var> {
        let rels = self.mapped_relations(graph, tables.count)?;
        let scores = tape.matmul(h_prev, tables.proj_t)?;
        let flat = graph.edges().iter().zip(&rels).map(|(e, &r)| e.receiver * tables.count + r).collect();
        let picked = tape.gather_flat(scores, flat)?;
        let bias = tape.gather_flat(tables.bias, rels)?;
        tape.add(picked, bias)
    }

    /// Raw attention score of every edge:
    /// `LeakyReLU(h_u · W_att · e_r + b_r)` with `u` the receiver. The score
    /// does not depend on the sender's features.
    pub fn relation_attention(
        &self,
        tape: &mut Tape<'_>,
        h_prev: Var,
        graph: &DepGraph,
        tables: &RelationTables,
    ) -> Result<Var> {
        let a = self.edge_bilinear(tape, h_prev, graph, tables)?;
        Ok(tape.leaky_relu(a, self.config.leaky_slope))
    }

    /// Softmax of raw scores over each receiver's incoming edges.
    pub fn normalize_attention(tape: &mut Tape<'_>, raw: Var, graph: &DepGraph) -> Result<Var> {
        tape.segment_softmax(raw, Rc::from(graph.offsets()))
    }

    /// Gating variant: `sigmoid(h_u · e_r + b_r)` per edge, not normalized.
    pub fn gating_scores(
        &self,
        tape: &mut Tape<'_>,
        h_prev: Var,
        graph: &DepGraph,
        tables: &RelationTables,
    ) -> Result<Var> {
        let a = self.edge_bilinear(tape, h_prev, graph, tables)?;
        Ok(tape.sigmoid(a))
    }

    /// `h_u = ReLU(Σ_v w_uv · h_v W + b)` for every node at once; rows where
    /// `mask` is false are zeroed.
    #[allow(clippy::too_many_arguments)]
    pub fn gnn_layer(
        &self,
        tape: &mut Tape<'_>,
        h_prev: Var,
        weights: Var,
        graph: &DepGraph,
        layer: usize,
        mask: &[bool],
        rng: Option<&mut Rng>,
    ) -> Result<Var> {
        let ids = &self.ids.layers[layer];
        let rows = tape.value(h_prev).dims2().0;
        let w = tape.param(ids.w);
        let msg = tape.matmul(h_prev, w)?;
        let agg = tape.edge_aggregate(weights, msg, graph.receivers(), graph.senders(), rows)?;
        let b = tape.param(ids.b);
        let z = tape.add_row(agg, b)?;
        let mut h = tape.relu(z);
        if mask.iter().any(|&m| !m) {
            h = tape.mul_const(h, row_mask(mask, self.config.d))?;
        }
        tape.dropout(h, self.config.dropout, rng)
    }

    /// Runs every graph layer from `h0`; returns the final features and each
    /// layer's edge weights.
    pub fn propagate(
        &self,
        tape: &mut Tape<'_>,
        h0: Var,
        graph: &DepGraph,
        mask: &[bool],
        tables: &[RelationTables],
        mut rng: Option<&mut Rng>,
    ) -> Result<(Var, Vec<Var>)> {
        let mut h = h0;
        let mut weights = Vec::with_capacity(self.config.k);
        for (layer, t) in tables.iter().enumerate() {
            let w = match self.config.mode {
                Mode::Gating => self.gating_scores(tape, h, graph, t)?,
                Mode::Attention | Mode::Collapsed => {
                    let raw = self.relation_attention(tape, h, graph, t)?;
                    Self::normalize_attention(tape, raw, graph)?
                }
            };
            h = self.gnn_layer(tape, h, w, graph, layer, mask, rng.as_deref_mut())?;
            weights.push(w);
        }
        Ok((h, weights))
    }

    /// Genre-guided attention pooling. The genre feature `g` is the mean of
    /// the sentence's genre embeddings (zero when it has none); token `i`
    /// scores `LeakyReLU(h_i · W_p · g)`, and the result is the
    /// softmax-weighted sum of rows. Returns `(x: 1 × d, weights: [n_max])`.
    pub fn genre_pool(&self, tape: &mut Tape<'_>, h: Var, genre_ids: &[usize], mask: &[bool]) -> Result<(Var, Var)> {
        let d = self.config.d;
        let rows = tape.value(h).dims2().0;
        let g = if genre_ids.is_empty() {
            tape.constant(Tensor::zeros(&[1, d]))
        } else {
            let table = tape.param(self.ids.genre_emb);
            let rows = tape.gather_rows(table, genre_ids)?;
            tape.mean_rows(rows)
        };
        let wp = tape.param(self.ids.pool_w);
        let gt = tape.transpose(g);
        let q = tape.matmul(wp, gt)?;
        let s = tape.matmul(h, q)?;
        let s = tape.reshape(s, &[rows])?;
        let s = tape.leaky_relu(s, self.config.leaky_slope);
        let alpha = tape.softmax_masked(s, mask)?;
        let alpha_row = tape.reshape(alpha, &[1, rows])?;
        let x = tape.matmul(alpha_row, h)?;
        Ok((x, alpha))
    }

    /// Logit `w·x + b` of a `1 × d` sentence vector, as `1 × 1`.
    pub fn logit(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.ids.cls_w);
        let b = tape.param(self.ids.cls_b);
        let z = tape.matmul(x, w)?;
        tape.add_row(z, b)
    }

    /// Spoiler probability `sigmoid(w·x + b)`.
    pub fn classify(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let z = self.logit(tape, x)?;
        Ok(tape.sigmoid(z))
    }

    /// Full pipeline on a tape. Dropout is active iff `rng` is given.
    pub fn forward_tape(&self, tape: &mut Tape<'_>, batch: &Batch, mut rng: Option<&mut Rng>) -> Result<TapeOutput> {
        if batch.size() == 0 {
            return Err(Error::EmptyCorpus);
        }
        let h0 = self.encode(tape, batch, rng.as_deref_mut())?;
        let tables = (0..self.config.k).map(|l| self.relation_tables(tape, l)).collect::<Result<Vec<_>>>()?;
        let mut logits = Vec::with_capacity(batch.size());
        let mut edge_weights = Vec::with_capacity(batch.size());
        let mut pooling = Vec::with_capacity(batch.size());
        for (b, &h) in h0.iter().enumerate() {
            let mask = batch.mask_row(b);
            let (h, weights) = self.propagate(tape, h, &batch.graphs[b], mask, &tables, rng.as_deref_mut())?;
            let (x, alpha) = self.genre_pool(tape, h, &batch.genre_ids[b], mask)?;
            logits.push(self.logit(tape, x)?);
            edge_weights.push(weights);
            pooling.push(alpha);
        }
        let z = tape.concat_rows(&logits)?;
        let z = tape.reshape(z, &[batch.size()])?;
        let probs = tape.sigmoid(z);
        Ok(TapeOutput { probs, edge_weights, pooling })
    }

    /// Eval-mode forward pass (no dropout).
    pub fn forward(&self, store: &ParamStore, batch: &Batch) -> Result<ForwardOutput> {
        let mut tape = Tape::new(store);
        let out = self.forward_tape(&mut tape, batch, None)?;
        Ok(ForwardOutput {
            probs: tape.value(out.probs).data().to_vec(),
            edge_weights: out
                .edge_weights
                .iter()
                .map(|layers| layers.iter().map(|&w| tape.value(w).data().to_vec()).collect())
                .collect(),
            pooling: out
                .pooling
                .iter()
                .enumerate()
                .map(|(b, &p)| tape.value(p).data()[..batch.len_of(b)].to_vec())
                .collect(),
        })
    }
}

/// `rows × d` matrix of ones on unmasked rows, zeros elsewhere.
fn row_mask(mask: &[bool], d: usize) -> Tensor {
    let data = mask.iter().flat_map(|&m| std::iter::repeat_n(if m { 1.0 } else { 0.0 }, d)).collect();
    Tensor::new(vec![mask.len(), d], data).expect("size")
}
