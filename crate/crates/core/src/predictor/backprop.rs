//! Forward pass with cached activations and its exact reverse-mode gradient.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

use super::{Example, GateParams, GgnParams, ModelConfig, ModelError, Params, PredictorModel};
use crate::graph::CharGraph;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

pub(super) fn check_example(cfg: &ModelConfig, ex: &Example) -> Result<(), ModelError> {
    let n = ex.num_chars();
    if ex.semantic.ncols() != cfg.semantic_dim {
        return Err(ModelError::DimMismatch {
            expected: cfg.semantic_dim,
            found: ex.semantic.ncols(),
        });
    }
    if ex.semantic.nrows() != n || ex.graph.num_chars() != n {
        return Err(ModelError::LengthMismatch {
            id: ex.id.clone(),
            expected: n,
            found: ex.semantic.nrows().min(ex.graph.num_chars()),
        });
    }
    if let Some(e) = ex.graph.edges.iter().find(|e| e.relation >= cfg.num_relations) {
        return Err(ModelError::DimMismatch {
            expected: cfg.num_relations,
            found: e.relation + 1,
        });
    }
    if let Some(l) = &ex.labels {
        if l.len() != n {
            return Err(ModelError::LengthMismatch {
                id: ex.id.clone(),
                expected: n,
                found: l.len(),
            });
        }
    }
    Ok(())
}

/// Returns the per-character input rows `semantic ⊕ pos` and the initial
/// node states.
pub(super) fn node_init(p: &Params, ex: &Example) -> Result<(Array2<f64>, Array2<f64>), ModelError> {
    let n = ex.num_chars();
    let pos = p.pos_table.lookup(&ex.pos_per_char)?;
    let sd = ex.semantic.ncols();
    let mut x = Array2::zeros((n, sd + pos.ncols()));
    x.slice_mut(s![.., ..sd]).assign(&ex.semantic);
    x.slice_mut(s![.., sd..]).assign(&pos);
    let hidden = p.proj_w.nrows();
    let mut h0 = Array2::zeros((n + 2, hidden));
    h0.row_mut(0).assign(&p.boundary.row(0));
    h0.row_mut(n + 1).assign(&p.boundary.row(1));
    h0.slice_mut(s![1..n + 1, ..])
        .assign(&(x.dot(&p.proj_w.t()) + &p.proj_b));
    Ok((x, h0))
}

struct Step {
    h: Array2<f64>,
    m: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    c: Array2<f64>,
    rh: Array2<f64>,
}

fn messages(p: &GgnParams, g: &CharGraph, h: &Array2<f64>) -> Array2<f64> {
    let mut m = Array2::zeros(h.raw_dim());
    for e in &g.edges {
        let k = GgnParams::msg_index(e.relation, e.direction);
        let msg = p.msg_w[k].dot(&h.row(e.src)) + &p.msg_b[k];
        let mut dst = m.row_mut(e.dst);
        dst += &msg;
    }
    m
}

fn gate_pre(g: &GateParams, m: &Array2<f64>, h: &Array2<f64>) -> Array2<f64> {
    m.dot(&g.input.t()) + h.dot(&g.recurrent.t()) + &g.bias
}

fn ggn_steps(p: &GgnParams, g: &CharGraph, h0: &Array2<f64>) -> (Vec<Step>, Array2<f64>) {
    let mut h = h0.clone();
    let mut steps = Vec::with_capacity(p.num_iterations);
    for _ in 0..p.num_iterations {
        let m = messages(p, g, &h);
        let z = gate_pre(&p.update, &m, &h).mapv(sigmoid);
        let r = gate_pre(&p.reset, &m, &h).mapv(sigmoid);
        let rh = &r * &h;
        let c = gate_pre(&p.candidate, &m, &rh).mapv(f64::tanh);
        let next = &z * &h + &(1.0 - &z) * &c;
        steps.push(Step { h, m, z, r, c, rh });
        h = next;
    }
    (steps, h)
}

/// Runs the gated propagation from `h0` and returns the final node states.
pub fn ggn_forward(p: &GgnParams, graph: &CharGraph, h0: &Array2<f64>) -> Array2<f64> {
    ggn_steps(p, graph, h0).1
}

struct Cache {
    x: Array2<f64>,
    steps: Vec<Step>,
    hc: Array2<f64>,
    a1: Array2<f64>,
    q: Array2<f64>,
    logits: Array2<f64>,
}

fn forward_cached(p: &Params, ex: &Example) -> Result<Cache, ModelError> {
    let (x, h0) = node_init(p, ex)?;
    let (steps, h) = ggn_steps(&p.ggn, &ex.graph, &h0);
    let n = ex.num_chars();
    let hc = h.slice(s![1..n + 1, ..]).to_owned();
    let a1 = hc.dot(&p.head.w1.t()) + &p.head.b1;
    let q = a1.mapv(|v| v.max(0.0));
    let logits = q.dot(&p.head.w2.t()) + &p.head.b2;
    Ok(Cache {
        x,
        steps,
        hc,
        a1,
        q,
        logits,
    })
}

pub(super) fn logits(p: &Params, ex: &Example) -> Result<Array2<f64>, ModelError> {
    Ok(forward_cached(p, ex)?.logits)
}

fn add_outer(dst: &mut Array2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        for (d, &bj) in dst.row_mut(i).iter_mut().zip(b.iter()) {
            *d += ai * bj;
        }
    }
}

/// Gate backward: given `da` (gradient at the pre-activation), accumulates
/// parameter gradients and returns `(d_input_side, d_recurrent_side)`.
fn gate_back(
    g: &GateParams,
    grad: &mut GateParams,
    da: &Array2<f64>,
    m: &Array2<f64>,
    h: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    grad.input += &da.t().dot(m);
    grad.recurrent += &da.t().dot(h);
    grad.bias += &da.sum_axis(Axis(0));
    (da.dot(&g.input), da.dot(&g.recurrent))
}

/// Backpropagates `dh` at the final states to the initial states.
fn ggn_backward(
    p: &GgnParams,
    graph: &CharGraph,
    steps: &[Step],
    mut dh_next: Array2<f64>,
    grad: &mut GgnParams,
) -> Array2<f64> {
    for st in steps.iter().rev() {
        // h' = z*h + (1-z)*c
        let dz = &dh_next * &(&st.h - &st.c);
        let dc = &dh_next * &(1.0 - &st.z);
        let mut dh = &dh_next * &st.z;

        let da_c = dc * &(1.0 - &st.c * &st.c);
        let (mut dm, drh) = gate_back(&p.candidate, &mut grad.candidate, &da_c, &st.m, &st.rh);
        let dr = &drh * &st.h;
        dh += &(&drh * &st.r);

        let da_r = dr * &(&st.r * &(1.0 - &st.r));
        let (dm_r, dh_r) = gate_back(&p.reset, &mut grad.reset, &da_r, &st.m, &st.h);
        dm += &dm_r;
        dh += &dh_r;

        let da_z = dz * &(&st.z * &(1.0 - &st.z));
        let (dm_z, dh_z) = gate_back(&p.update, &mut grad.update, &da_z, &st.m, &st.h);
        dm += &dm_z;
        dh += &dh_z;

        for e in &graph.edges {
            let k = GgnParams::msg_index(e.relation, e.direction);
            let g_out = dm.row(e.dst);
            if grad.msg_w[k].is_empty() {
                grad.msg_w[k] = Array2::zeros(p.msg_w[k].raw_dim());
                grad.msg_b[k] = Array1::zeros(p.msg_b[k].raw_dim());
            }
            add_outer(&mut grad.msg_w[k], g_out, st.h.row(e.src));
            grad.msg_b[k] += &g_out;
            let back = p.msg_w[k].t().dot(&g_out);
            let mut d_src = dh.row_mut(e.src);
            d_src += &back;
        }
        dh_next = dh;
    }
    dh_next
}

/// Weighted cross-entropy summed over the example's characters (times
/// `scale`) and the matching gradient. Message gradients for unused
/// relations stay empty.
fn weighted_ce(logits: &Array2<f64>, i: usize, y: usize, w: f64) -> f64 {
    let row = logits.row(i);
    let max = row[0].max(row[1]);
    let lse = max + ((row[0] - max).exp() + (row[1] - max).exp()).ln();
    w * (lse - row[y])
}

fn total_chars(model: &PredictorModel, batch: &[Example]) -> Result<usize, ModelError> {
    let total: usize = batch.iter().map(Example::num_chars).sum();
    if total == 0 {
        return Err(ModelError::EmptyDataset);
    }
    for ex in batch {
        check_example(&model.config, ex)?;
    }
    Ok(total)
}

/// The training loss alone; agrees with the first value of `loss_and_grads`.
pub fn batch_loss(model: &PredictorModel, batch: &[Example], pos_weight: f64) -> Result<f64, ModelError> {
    let scale = 1.0 / total_chars(model, batch)? as f64;
    let mut loss = 0.0;
    for ex in batch {
        let labels = ex
            .labels
            .as_ref()
            .ok_or_else(|| ModelError::MissingLabels(ex.id.clone()))?;
        let z = logits(&model.params, ex)?;
        for (i, &y) in labels.iter().enumerate() {
            let y = usize::from(y != 0);
            loss += weighted_ce(&z, i, y, if y == 1 { pos_weight } else { 1.0 } * scale);
        }
    }
    Ok(loss)
}

fn example_grads(
    p: &Params,
    ex: &Example,
    pos_weight: f64,
    scale: f64,
) -> Result<(f64, Params), ModelError> {
    let labels = ex
        .labels
        .as_ref()
        .ok_or_else(|| ModelError::MissingLabels(ex.id.clone()))?;
    let cache = forward_cached(p, ex)?;
    let probs = softmax_rows(&cache.logits);
    let n = ex.num_chars();
    let mut loss = 0.0;
    let mut dlogits = Array2::zeros((n, 2));
    for (i, &y) in labels.iter().enumerate() {
        let y = usize::from(y != 0);
        let w = if y == 1 { pos_weight } else { 1.0 } * scale;
        loss += weighted_ce(&cache.logits, i, y, w);
        for k in 0..2 {
            dlogits[[i, k]] = w * (probs[[i, k]] - if k == y { 1.0 } else { 0.0 });
        }
    }

    let mut grad = p.sparse_zeros_like();
    grad.head.w2 = dlogits.t().dot(&cache.q);
    grad.head.b2 = dlogits.sum_axis(Axis(0));
    let dq = dlogits.dot(&p.head.w2);
    let da1 = dq * &cache.a1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    grad.head.w1 = da1.t().dot(&cache.hc);
    grad.head.b1 = da1.sum_axis(Axis(0));
    let dhc = da1.dot(&p.head.w1);

    let mut dh = Array2::zeros((n + 2, p.ggn.hidden_dim));
    dh.slice_mut(s![1..n + 1, ..]).assign(&dhc);
    let dh0 = ggn_backward(&p.ggn, &ex.graph, &cache.steps, dh, &mut grad.ggn);

    grad.boundary.row_mut(0).assign(&dh0.row(0));
    grad.boundary.row_mut(1).assign(&dh0.row(n + 1));
    let dchars = dh0.slice(s![1..n + 1, ..]);
    grad.proj_w = dchars.t().dot(&cache.x);
    grad.proj_b = dchars.sum_axis(Axis(0));
    let dx = dchars.dot(&p.proj_w);
    let sd = ex.semantic.ncols();
    grad.pos_table.matrix = p
        .pos_table
        .backward(&ex.pos_per_char, dx.slice(s![.., sd..]));
    Ok((loss, grad))
}

/// Batch loss `Σ w_y · CE / Σ num_chars` and its exact gradient, with
/// per-utterance gradients summed in input order.
pub fn loss_and_grads(
    model: &PredictorModel,
    batch: &[Example],
    pos_weight: f64,
) -> Result<(f64, Params), ModelError> {
    let scale = 1.0 / total_chars(model, batch)? as f64;
    let parts: Vec<(f64, Params)> = batch
        .par_iter()
        .map(|ex| example_grads(&model.params, ex, pos_weight, scale))
        .collect::<Result<_, _>>()?;
    let mut grad = model.params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        grad.accumulate(g);
    }
    Ok((loss, grad))
}
