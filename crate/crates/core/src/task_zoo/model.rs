//! Forward passes and hand-derived gradients for the task families.

use super::activation::Activation;
use super::config::OutputConstraint;
use super::dataset::Batch;
use crate::numkit::{matmul_into, sigmoid, softmax_in_place, Tensor};

/// Name, shape and fan-in of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

impl ParamShape {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, fan_in: usize) -> Self {
        Self {
            name: name.into(),
            shape,
            fan_in,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }
}

#[derive(Clone, Debug)]
pub enum Head {
    Classifier,
    Reconstruction {
        log_loss: bool,
        center: bool,
        constrain: OutputConstraint,
    },
}

/// Fully connected network; weights are stored `[fan_in, fan_out]`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
}

/// Single-layer tanh RNN over bytes.
#[derive(Clone, Debug)]
pub struct ByteRnn {
    pub hidden: usize,
    pub seq_len: usize,
}

pub const VOCAB: usize = 256;

#[derive(Clone, Debug)]
pub enum Model {
    Mlp(Mlp),
    Rnn(ByteRnn),
}

impl Model {
    pub fn param_shapes(&self) -> Vec<ParamShape> {
        match self {
            Model::Mlp(m) => {
                let mut out = Vec::new();
                for (l, w) in m.sizes.windows(2).enumerate() {
                    out.push(ParamShape::new(format!("layer{l}/w"), vec![w[0], w[1]], w[0]));
                    out.push(ParamShape::new(format!("layer{l}/b"), vec![w[1]], w[0]));
                }
                out
            }
            Model::Rnn(r) => {
                let h = r.hidden;
                vec![
                    ParamShape::new("embed", vec![VOCAB, h], 1),
                    ParamShape::new("rnn/w_hh", vec![h, h], h),
                    ParamShape::new("rnn/b", vec![h], h),
                    ParamShape::new("out/w", vec![h, VOCAB], h),
                    ParamShape::new("out/b", vec![VOCAB], h),
                ]
            }
        }
    }

    /// Mean minibatch loss; fills `grads` when given.
    pub fn loss_grad(&self, params: &[Tensor], batch: &Batch, grads: Option<&mut [Tensor]>) -> f64 {
        match (self, batch) {
            (Model::Mlp(m), Batch::Images { x, y, rows, dim }) => {
                debug_assert_eq!(*dim, m.sizes[0]);
                m.loss_grad(params, x, y, *rows, grads)
            }
            (Model::Rnn(r), Batch::Text { tokens, rows, len }) => {
                debug_assert_eq!(*len, r.seq_len + 1);
                r.loss_grad(params, tokens, *rows, grads)
            }
            _ => unreachable!("dataset kind checked at task construction"),
        }
    }
}

impl Mlp {
    fn loss_grad(
        &self,
        params: &[Tensor],
        x: &[f64],
        y: &[usize],
        rows: usize,
        grads: Option<&mut [Tensor]>,
    ) -> f64 {
        let layers = self.sizes.len() - 1;
        let din = self.sizes[0];

        let input_owned;
        let input: &[f64] = match self.head {
            Head::Reconstruction { center: true, .. } => {
                input_owned = x.iter().map(|&v| 2.0 * v - 1.0).collect::<Vec<_>>();
                &input_owned
            }
            _ => x,
        };

        // pre[l]: pre-activations of layer l; post[l]: activations feeding layer l.
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(layers);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(layers);
        post.push(input.to_vec());
        for l in 0..layers {
            let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
            let mut z = vec![0.0; rows * fo];
            matmul_into(&post[l], params[2 * l].data(), &mut z, rows, fi, fo);
            let b = params[2 * l + 1].data();
            for r in 0..rows {
                for (zv, bv) in z[r * fo..(r + 1) * fo].iter_mut().zip(b) {
                    *zv += bv;
                }
            }
            if l + 1 < layers {
                post.push(z.iter().map(|&v| self.activation.apply(v)).collect());
            }
            pre.push(z);
        }

        let out_dim = self.sizes[layers];
        let logits = &pre[layers - 1];
        let mut dz = vec![0.0; rows * out_dim];
        let loss = match &self.head {
            Head::Classifier => {
                let mut total = 0.0;
                let mut probs = vec![0.0; out_dim];
                for r in 0..rows {
                    probs.copy_from_slice(&logits[r * out_dim..(r + 1) * out_dim]);
                    let lse = softmax_in_place(&mut probs);
                    total += lse - logits[r * out_dim + y[r]];
                    let d = &mut dz[r * out_dim..(r + 1) * out_dim];
                    for (dv, &p) in d.iter_mut().zip(&probs) {
                        *dv = p / rows as f64;
                    }
                    d[y[r]] -= 1.0 / rows as f64;
                }
                total / rows as f64
            }
            Head::Reconstruction {
                log_loss,
                constrain,
                ..
            } => {
                debug_assert_eq!(out_dim, din);
                let n = (rows * out_dim) as f64;
                let mut sse = 0.0;
                for (i, &z) in logits.iter().enumerate() {
                    let (o, dodz) = match constrain {
                        OutputConstraint::None => (z, 1.0),
                        OutputConstraint::Sigmoid => {
                            let s = sigmoid(z);
                            (s, s * (1.0 - s))
                        }
                        OutputConstraint::Tanh => {
                            let t = z.tanh();
                            (t, 1.0 - t * t)
                        }
                    };
                    let e = o - input[i];
                    sse += e * e;
                    dz[i] = 2.0 * e * dodz / n;
                }
                let mse = sse / n;
                if *log_loss {
                    let s = 1.0 / (mse + 1e-8);
                    dz.iter_mut().for_each(|d| *d *= s);
                    (mse + 1e-8).ln()
                } else {
                    mse
                }
            }
        };

        let Some(grads) = grads else {
            return loss;
        };
        for l in (0..layers).rev() {
            let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
            let a = &post[l];
            let gw = grads[2 * l].data_mut();
            gw.iter_mut().for_each(|g| *g = 0.0);
            for r in 0..rows {
                let drow = &dz[r * fo..(r + 1) * fo];
                for (i, &av) in a[r * fi..(r + 1) * fi].iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    for (g, &d) in gw[i * fo..(i + 1) * fo].iter_mut().zip(drow) {
                        *g += av * d;
                    }
                }
            }
            let gb = grads[2 * l + 1].data_mut();
            gb.iter_mut().for_each(|g| *g = 0.0);
            for r in 0..rows {
                for (g, &d) in gb.iter_mut().zip(&dz[r * fo..(r + 1) * fo]) {
                    *g += d;
                }
            }
            if l == 0 {
                break;
            }
            let w = params[2 * l].data();
            let zprev = &pre[l - 1];
            let mut dprev = vec![0.0; rows * fi];
            for r in 0..rows {
                let drow = &dz[r * fo..(r + 1) * fo];
                for i in 0..fi {
                    let s: f64 = w[i * fo..(i + 1) * fo].iter().zip(drow).map(|(a, b)| a * b).sum();
                    dprev[r * fi + i] = s * self.activation.derivative(zprev[r * fi + i]);
                }
            }
            dz = dprev;
        }
        loss
    }
}

impl ByteRnn {
    fn loss_grad(&self, params: &[Tensor], tokens: &[u8], rows: usize, grads: Option<&mut [Tensor]>) -> f64 {
        let h = self.hidden;
        let steps = self.seq_len;
        let window = steps + 1;
        let (embed, whh, bh, wout, bout) = (
            params[0].data(),
            params[1].data(),
            params[2].data(),
            params[3].data(),
            params[4].data(),
        );
        let scale = 1.0 / (rows * steps) as f64;

        let mut loss = 0.0;
        let mut states = vec![0.0; (steps + 1) * h];
        let mut dlogits = vec![0.0; steps * VOCAB];
        let mut want_grad = grads;
        if let Some(g) = want_grad.as_deref_mut() {
            g.iter_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
        }
        let mut logits = vec![0.0; VOCAB];
        let mut dh = vec![0.0; h];
        let mut dpre_next = vec![0.0; h];

        for r in 0..rows {
            let seq = &tokens[r * window..(r + 1) * window];
            states[..h].iter_mut().for_each(|v| *v = 0.0);
            for t in 0..steps {
                let x = seq[t] as usize;
                let (prev, cur) = states.split_at_mut((t + 1) * h);
                let prev = &prev[t * h..];
                let cur = &mut cur[..h];
                for j in 0..h {
                    cur[j] = embed[x * h + j] + bh[j];
                }
                for (i, &pv) in prev.iter().enumerate() {
                    if pv == 0.0 {
                        continue;
                    }
                    for (c, &w) in cur.iter_mut().zip(&whh[i * h..(i + 1) * h]) {
                        *c += pv * w;
                    }
                }
                cur.iter_mut().for_each(|v| *v = v.tanh());
                logits.copy_from_slice(bout);
                for (i, &hv) in cur.iter().enumerate() {
                    for (lv, &w) in logits.iter_mut().zip(&wout[i * VOCAB..(i + 1) * VOCAB]) {
                        *lv += hv * w;
                    }
                }
                let target = seq[t + 1] as usize;
                let raw_target = logits[target];
                let lse = softmax_in_place(&mut logits);
                loss += lse - raw_target;
                let d = &mut dlogits[t * VOCAB..(t + 1) * VOCAB];
                for (dv, &p) in d.iter_mut().zip(&logits) {
                    *dv = p * scale;
                }
                d[target] -= scale;
            }

            let Some(g) = want_grad.as_deref_mut() else {
                continue;
            };
            let (g_embed, rest) = g.split_at_mut(1);
            let (g_whh, rest) = rest.split_at_mut(1);
            let (g_bh, rest) = rest.split_at_mut(1);
            let (g_wout, g_bout) = rest.split_at_mut(1);
            let (g_embed, g_whh, g_bh) = (g_embed[0].data_mut(), g_whh[0].data_mut(), g_bh[0].data_mut());
            let (g_wout, g_bout) = (g_wout[0].data_mut(), g_bout[0].data_mut());
            dpre_next.iter_mut().for_each(|v| *v = 0.0);
            for t in (0..steps).rev() {
                let ht = &states[(t + 1) * h..(t + 2) * h];
                let hprev = &states[t * h..(t + 1) * h];
                let d = &dlogits[t * VOCAB..(t + 1) * VOCAB];
                for (gb, &dv) in g_bout.iter_mut().zip(d) {
                    *gb += dv;
                }
                for i in 0..h {
                    let hv = ht[i];
                    let wrow = &wout[i * VOCAB..(i + 1) * VOCAB];
                    let grow = &mut g_wout[i * VOCAB..(i + 1) * VOCAB];
                    let mut acc = 0.0;
                    for ((gw, &w), &dv) in grow.iter_mut().zip(wrow).zip(d) {
                        *gw += hv * dv;
                        acc += w * dv;
                    }
                    // recurrent contribution from step t+1
                    let rec: f64 = whh[i * h..(i + 1) * h].iter().zip(&dpre_next).map(|(a, b)| a * b).sum();
                    dh[i] = acc + rec;
                }
                let x = seq[t] as usize;
                for j in 0..h {
                    let dp = dh[j] * (1.0 - ht[j] * ht[j]);
                    dpre_next[j] = dp;
                    g_bh[j] += dp;
                    g_embed[x * h + j] += dp;
                }
                for (i, &pv) in hprev.iter().enumerate() {
                    if pv == 0.0 {
                        continue;
                    }
                    for (gw, &dp) in g_whh[i * h..(i + 1) * h].iter_mut().zip(&dpre_next) {
                        *gw += pv * dp;
                    }
                }
            }
        }
        loss * scale
    }
}
