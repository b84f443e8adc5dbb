//! Transformer building blocks expressed on the autodiff tape.

use rand::Rng;

use crate::numcore::{Bind, NumError, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let std = 0.02;
        let w = store.add_normal(format!("{name}.w"), &[fan_in, fan_out], std, rng);
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[1, fan_out])));
        Self { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, bind: Bind, x: Var) -> Result<Var, NumError> {
        let w = bind.var(tape, self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = bind.var(tape, b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Layer normalisation with learnable gain and bias.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, eps: f64) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[1, dim], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[1, dim])),
            eps,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bind: Bind, x: Var) -> Result<Var, NumError> {
        let n = tape.layer_norm(x, self.eps);
        let g = bind.var(tape, self.gain);
        let b = bind.var(tape, self.bias);
        let y = tape.mul_row(n, g)?;
        tape.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, true, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, true, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, true, rng),
            heads,
        }
    }

    /// Multi-head attention of `queries` over `context`. With `causal`, query
    /// `i` sees context rows `0..=i` only.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: Bind,
        queries: Var,
        context: Var,
        causal: bool,
    ) -> Result<Var, NumError> {
        let q = self.q.forward(tape, bind, queries)?;
        let k = self.k.forward(tape, bind, context)?;
        let v = self.v.forward(tape, bind, context)?;
        let dim = tape.value(q).cols();
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, (h + 1) * dh)?;
            let kh = tape.slice_cols(k, h * dh, (h + 1) * dh)?;
            let vh = tape.slice_cols(v, h * dh, (h + 1) * dh)?;
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt)?;
            let mut scores = tape.scale(scores, scale);
            if causal {
                scores = tape.causal_mask(scores)?;
            }
            let attn = tape.softmax(scores);
            outs.push(tape.matmul(attn, vh)?);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)?
        };
        self.o.forward(tape, bind, cat)
    }
}

/// Two-layer GELU perceptron.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, out: usize, rng: &mut impl Rng) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, hidden, true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, out, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bind: Bind, x: Var) -> Result<Var, NumError> {
        let h = self.fc1.forward(tape, bind, x)?;
        let h = tape.gelu(h);
        self.fc2.forward(tape, bind, h)
    }
}

/// Pre-norm self-attention block.
#[derive(Clone, Debug)]
pub struct SelfBlock {
    pub ln1: Norm,
    pub attn: Attention,
    pub ln2: Norm,
    pub mlp: Mlp,
}

impl SelfBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        eps: f64,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            ln1: Norm::new(store, &format!("{name}.ln1"), dim, eps),
            attn: Attention::new(store, &format!("{name}.attn"), dim, heads, rng),
            ln2: Norm::new(store, &format!("{name}.ln2"), dim, eps),
            mlp: Mlp::new(store, &format!("{name}.mlp"), dim, dim * mlp_ratio, dim, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bind: Bind, x: Var, causal: bool) -> Result<Var, NumError> {
        let n = self.ln1.forward(tape, bind, x)?;
        let a = self.attn.forward(tape, bind, n, n, causal)?;
        let x = tape.add(x, a)?;
        let n = self.ln2.forward(tape, bind, x)?;
        let m = self.mlp.forward(tape, bind, n)?;
        tape.add(x, m)
    }
}

/// Pre-norm cross-attention block: queries attend to a fixed context and
/// never to each other.
#[derive(Clone, Debug)]
pub struct CrossBlock {
    pub ln_q: Norm,
    pub ln_kv: Norm,
    pub attn: Attention,
    pub ln2: Norm,
    pub mlp: Mlp,
}

impl CrossBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        eps: f64,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            ln_q: Norm::new(store, &format!("{name}.ln_q"), dim, eps),
            ln_kv: Norm::new(store, &format!("{name}.ln_kv"), dim, eps),
            attn: Attention::new(store, &format!("{name}.attn"), dim, heads, rng),
            ln2: Norm::new(store, &format!("{name}.ln2"), dim, eps),
            mlp: Mlp::new(store, &format!("{name}.mlp"), dim, dim * mlp_ratio, dim, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bind: Bind, q: Var, context: Var) -> Result<Var, NumError> {
        let nq = self.ln_q.forward(tape, bind, q)?;
        let nc = self.ln_kv.forward(tape, bind, context)?;
        let a = self.attn.forward(tape, bind, nq, nc, false)?;
        let q = tape.add(q, a)?;
        let n = self.ln2.forward(tape, bind, q)?;
        let m = self.mlp.forward(tape, bind, n)?;
        tape.add(q, m)
    }
}
