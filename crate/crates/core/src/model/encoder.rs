//! Post-norm transformer encoder and MLM head: forward with caches, exact backward.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use super::ops::{
    gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, softmax_rows, NormCache,
};
use super::weights::{EncoderLayer, MlmHead, Weights};
use super::{ModelConfig, Real};

/// Cached activations of one encoder layer.
#[derive(Debug, Clone)]
pub struct LayerCache<F> {
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    probs: Vec<Array2<F>>,
    ctx: Array2<F>,
    attn_norm: NormCache<F>,
    h1: Array2<F>,
    ffn_pre: Array2<F>,
    ffn_act: Array2<F>,
    out_norm: NormCache<F>,
}

/// Every intermediate needed to differentiate through the embedding layer and
/// the first `hidden.len() - 1` encoder layers.
#[derive(Debug, Clone)]
pub struct Trace<F> {
    pub ids: Vec<u32>,
    pub override_pos: Option<usize>,
    /// `hidden[0]` is the embedding-layer output, `hidden[l]` the output of layer `l`.
    pub hidden: Vec<Array2<F>>,
    embed_norm: NormCache<F>,
    layers: Vec<LayerCache<F>>,
}

/// `LayerNorm(tok + pos + seg0)` before normalization, with one token row optionally replaced.
fn embedding_sum<F: Real>(w: &Weights<F>, ids: &[u32], over: Option<(usize, ArrayView1<F>)>) -> Array2<F> {
    let e = &w.embeddings;
    let n = ids.len();
    let d = e.word.ncols();
    let mut x = Array2::zeros((n, d));
    for (i, &id) in ids.iter().enumerate() {
        let mut row = x.row_mut(i);
        match over {
            Some((p, ref z)) if p == i => row.assign(z),
            _ => row.assign(&e.word.row(id as usize)),
        }
        row += &e.position.row(i);
        row += &e.token_type.row(0);
    }
    x
}

/// Embedding-layer output without caches.
pub fn embed<F: Real>(w: &Weights<F>, cfg: &ModelConfig, ids: &[u32], over: Option<(usize, ArrayView1<F>)>) -> Array2<F> {
    let eps = F::from_f64(cfg.layernorm_epsilon).unwrap();
    layer_norm(&embedding_sum(w, ids, over), &w.embeddings.norm, eps).0
}

/// Runs the first `num_layers` encoder layers on an embedding-layer output;
/// returns `num_layers + 1` hidden-state matrices starting with `x0`.
pub fn run_layers<F: Real>(w: &Weights<F>, cfg: &ModelConfig, x0: Array2<F>, num_layers: usize) -> Vec<Array2<F>> {
    let eps = F::from_f64(cfg.layernorm_epsilon).unwrap();
    let mut hidden = vec![x0];
    for layer in &w.layers[..num_layers] {
        let (y, _) = layer_forward(layer, cfg, hidden.last().unwrap(), eps);
        hidden.push(y);
    }
    hidden
}

/// Forward pass that keeps every cache needed by [`backward`].
pub fn forward<F: Real>(
    w: &Weights<F>,
    cfg: &ModelConfig,
    ids: &[u32],
    over: Option<(usize, ArrayView1<F>)>,
    num_layers: usize,
) -> Trace<F> {
    assert!(num_layers <= w.layers.len());
    assert!(ids.len() <= cfg.max_positions);
    let eps = F::from_f64(cfg.layernorm_epsilon).unwrap();
    let sum = embedding_sum(w, ids, over);
    let (x0, embed_norm) = layer_norm(&sum, &w.embeddings.norm, eps);
    let mut hidden = vec![x0];
    let mut layers = Vec::with_capacity(num_layers);
    for layer in &w.layers[..num_layers] {
        let (y, cache) = layer_forward(layer, cfg, hidden.last().unwrap(), eps);
        hidden.push(y);
        layers.push(cache);
    }
    Trace {
        ids: ids.to_vec(),
        override_pos: over.map(|(p, _)| p),
        hidden,
        embed_norm,
        layers,
    }
}

fn layer_forward<F: Real>(l: &EncoderLayer<F>, cfg: &ModelConfig, x: &Array2<F>, eps: F) -> (Array2<F>, LayerCache<F>) {
    let xv = x.view();
    let q = linear(&xv, &l.query);
    let k = linear(&xv, &l.key);
    let v = linear(&xv, &l.value);
    let hd = cfg.head_dim();
    let scale = F::one() / F::from_usize(hd).unwrap().sqrt();
    let mut ctx = Array2::zeros(x.raw_dim());
    let mut probs = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let cols = s![.., h * hd..(h + 1) * hd];
        let mut p = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut p);
        ctx.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        probs.push(p);
    }
    let attn = linear(&ctx.view(), &l.attn_out);
    let (h1, attn_norm) = layer_norm(&(x + &attn), &l.attn_norm, eps);
    let ffn_pre = linear(&h1.view(), &l.intermediate);
    let ffn_act = ffn_pre.mapv(gelu);
    let out = linear(&ffn_act.view(), &l.output);
    let (h2, out_norm) = layer_norm(&(&h1 + &out), &l.out_norm, eps);
    let cache = LayerCache {
        q,
        k,
        v,
        probs,
        ctx,
        attn_norm,
        h1,
        ffn_pre,
        ffn_act,
        out_norm,
    };
    (h2, cache)
}

fn layer_backward<F: Real>(
    l: &EncoderLayer<F>,
    cfg: &ModelConfig,
    x: &Array2<F>,
    c: &LayerCache<F>,
    dy: &Array2<F>,
    mut g: Option<&mut EncoderLayer<F>>,
) -> Array2<F> {
    let ds = layer_norm_backward(dy, &c.out_norm, &l.out_norm, g.as_deref_mut().map(|g| &mut g.out_norm));
    let dact = linear_backward(&c.ffn_act.view(), &l.output, &ds, g.as_deref_mut().map(|g| &mut g.output));
    let dpre = &dact * &c.ffn_pre.mapv(gelu_grad);
    let mut dh1 = ds;
    dh1 += &linear_backward(&c.h1.view(), &l.intermediate, &dpre, g.as_deref_mut().map(|g| &mut g.intermediate));
    let dz = layer_norm_backward(&dh1, &c.attn_norm, &l.attn_norm, g.as_deref_mut().map(|g| &mut g.attn_norm));
    let dctx = linear_backward(&c.ctx.view(), &l.attn_out, &dz, g.as_deref_mut().map(|g| &mut g.attn_out));

    let hd = cfg.head_dim();
    let scale = F::one() / F::from_usize(hd).unwrap().sqrt();
    let mut dq = Array2::zeros(x.raw_dim());
    let mut dk = Array2::zeros(x.raw_dim());
    let mut dv = Array2::zeros(x.raw_dim());
    for (h, p) in c.probs.iter().enumerate() {
        let cols = s![.., h * hd..(h + 1) * hd];
        let dc = dctx.slice(cols);
        dv.slice_mut(cols).assign(&p.t().dot(&dc));
        let dp = dc.dot(&c.v.slice(cols).t());
        let mut dsc = &dp * p;
        let row_sums = dsc.sum_axis(Axis(1));
        dsc -= &(p * &row_sums.insert_axis(Axis(1)));
        dsc *= scale;
        dq.slice_mut(cols).assign(&dsc.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&dsc.t().dot(&c.q.slice(cols)));
    }
    let xv = x.view();
    let mut dx = dz;
    dx += &linear_backward(&xv, &l.query, &dq, g.as_deref_mut().map(|g| &mut g.query));
    dx += &linear_backward(&xv, &l.key, &dk, g.as_deref_mut().map(|g| &mut g.key));
    dx += &linear_backward(&xv, &l.value, &dv, g.as_deref_mut().map(|g| &mut g.value));
    dx
}

/// Backpropagates `d_top` (gradient w.r.t. `trace.hidden.last()`) to the
/// pre-normalization embedding sum. Returns that gradient, whose row at the
/// override position is the gradient with respect to the override vector.
/// Parameter gradients are accumulated into `grads` when given; the override
/// row contributes no word-embedding gradient.
pub fn backward<F: Real>(
    w: &Weights<F>,
    cfg: &ModelConfig,
    trace: &Trace<F>,
    d_top: Array2<F>,
    mut grads: Option<&mut Weights<F>>,
) -> Array2<F> {
    let mut d = d_top;
    for i in (0..trace.layers.len()).rev() {
        d = layer_backward(
            &w.layers[i],
            cfg,
            &trace.hidden[i],
            &trace.layers[i],
            &d,
            grads.as_deref_mut().map(|g| &mut g.layers[i]),
        );
    }
    let de = layer_norm_backward(
        &d,
        &trace.embed_norm,
        &w.embeddings.norm,
        grads.as_deref_mut().map(|g| &mut g.embeddings.norm),
    );
    if let Some(g) = grads {
        for (i, &id) in trace.ids.iter().enumerate() {
            let row = de.row(i);
            if trace.override_pos != Some(i) {
                let mut wr = g.embeddings.word.row_mut(id as usize);
                wr += &row;
            }
            let mut pr = g.embeddings.position.row_mut(i);
            pr += &row;
        }
        let mut tr = g.embeddings.token_type.row_mut(0);
        tr += &de.sum_axis(Axis(0));
    }
    de
}

#[derive(Debug, Clone)]
pub struct HeadCache<F> {
    input: Array2<F>,
    pre: Array2<F>,
    norm: NormCache<F>,
    normed: Array2<F>,
}

/// Dense + GELU + layer norm + vocabulary projection, applied to each row of `h`.
pub fn head_forward<F: Real>(head: &MlmHead<F>, cfg: &ModelConfig, h: Array2<F>) -> (Array2<F>, HeadCache<F>) {
    let eps = F::from_f64(cfg.layernorm_epsilon).unwrap();
    let pre = linear(&h.view(), &head.transform);
    let act = pre.mapv(gelu);
    let (normed, norm) = layer_norm(&act, &head.norm, eps);
    let logits = linear(&normed.view(), &head.decoder);
    (
        logits,
        HeadCache {
            input: h,
            pre,
            norm,
            normed,
        },
    )
}

pub fn head_backward<F: Real>(
    head: &MlmHead<F>,
    c: &HeadCache<F>,
    dlogits: &Array2<F>,
    mut g: Option<&mut MlmHead<F>>,
) -> Array2<F> {
    let dn = linear_backward(&c.normed.view(), &head.decoder, dlogits, g.as_deref_mut().map(|g| &mut g.decoder));
    let dact = layer_norm_backward(&dn, &c.norm, &head.norm, g.as_deref_mut().map(|g| &mut g.norm));
    let dpre = &dact * &c.pre.mapv(gelu_grad);
    linear_backward(&c.input.view(), &head.transform, &dpre, g.map(|g| &mut g.transform))
}

/// Rows of `m` at `positions`, stacked.
pub fn gather_rows<F: Real>(m: &Array2<F>, positions: &[usize]) -> Array2<F> {
    let mut out = Array2::zeros((positions.len(), m.ncols()));
    for (r, &p) in positions.iter().enumerate() {
        out.row_mut(r).assign(&m.row(p));
    }
    out
}

/// Adds row `r` of `src` into row `positions[r]` of a fresh `n × d` matrix.
pub fn scatter_rows<F: Real>(src: &Array2<F>, positions: &[usize], n: usize) -> Array2<F> {
    let mut out = Array2::zeros((n, src.ncols()));
    for (r, &p) in positions.iter().enumerate() {
        let mut row = out.row_mut(p);
        row += &src.row(r);
    }
    out
}

/// Squared-L2 reconstruction loss at one position (64-bit accumulation) and
/// its gradient with respect to the top hidden state.
pub fn reconstruction_loss<F: Real>(top: &Array2<F>, pos: usize, target: &Array1<F>) -> (f64, Array2<F>) {
    let diff = &top.row(pos) - target;
    let loss = diff.iter().map(|v| v.to_f64().unwrap().powi(2)).sum::<f64>();
    let mut grad = Array2::zeros(top.raw_dim());
    grad.row_mut(pos).assign(&(diff * F::from_f64(2.0).unwrap()));
    (loss, grad)
}
