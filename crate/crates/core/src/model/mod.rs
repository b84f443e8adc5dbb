//! The gaze-ordered world model.
//!
//! * online encoder: linear patch embedding plus learned position embedding,
//!   followed by pre-norm transformer blocks over all patches;
//! * target encoder: a frozen copy of the encoder parameters, moved only by
//!   EMA;
//! * fixation embedder: `h_i = W_z z + row(p) + col(p) + rank(i) + w_d log(1 + dwell)`;
//! * causal predictor with a two-layer GELU head for next-fixation targets;
//! * completion decoder: mask token plus spatial embedding as queries,
//!   cross-attending to the predictor context.

mod checkpoint;
mod config;
mod losses;
pub mod nn;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointError,
};
pub use config::ModelConfig;
pub use losses::{loss_ar, loss_sc, loss_total};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gazedata::{DataError, FixationSequence, ImageGray};
use crate::numcore::{Bind, NumError, ParamId, ParamStore, Tape, Tensor, Var};
use nn::{CrossBlock, Linear, Mlp, Norm, SelfBlock};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("image {id} is {width}x{height}, model expects {expected_w}x{expected_h}")]
    ImageSize {
        id: String,
        width: usize,
        height: usize,
        expected_w: usize,
        expected_h: usize,
    },
    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("next-fixation loss needs at least 2 visited patches, got {0}")]
    SequenceTooShort(usize),
}

const EMBED_STD: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct EncoderLayout {
    pub patch_embed: Linear,
    pub pos: ParamId,
    pub blocks: Vec<SelfBlock>,
    pub norm: Norm,
}

#[derive(Clone, Debug)]
pub struct EmbedderLayout {
    pub w_z: Linear,
    pub row: ParamId,
    pub col: ParamId,
    pub rank: ParamId,
    pub w_dur: ParamId,
}

#[derive(Clone, Debug)]
pub struct CompletionLayout {
    pub mask_token: ParamId,
    pub blocks: Vec<CrossBlock>,
    pub norm: Norm,
    pub out: Linear,
}

/// Readout token and projection used only by the linear probe.
#[derive(Clone, Debug)]
pub struct ReadoutLayout {
    pub token: ParamId,
    pub proj: Linear,
}

#[derive(Clone, Debug)]
pub struct Layout {
    pub encoder: EncoderLayout,
    /// Encoder parameters occupy ids `0..encoder_len` of the online store.
    pub encoder_len: usize,
    pub embedder: EmbedderLayout,
    pub predictor: Vec<SelfBlock>,
    pub predictor_norm: Norm,
    pub head: Mlp,
    pub completion: CompletionLayout,
    pub readout: ReadoutLayout,
}

/// Architecture plus parameters: the online store holds every learnable
/// tensor, the target store a frozen copy of the encoder prefix.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub layout: Layout,
    pub online: ParamStore,
    pub target: ParamStore,
}

/// Output of the causal predictor over one token sequence.
#[derive(Clone, Copy, Debug)]
pub struct Prediction {
    /// Trunk hidden states at every position (`L x d`).
    pub context: Var,
    /// Head outputs at positions `1..L`, i.e. predictions for `s_2..s_L`.
    pub next: Option<Var>,
}

/// Loss terms of one sample, still on the tape.
#[derive(Clone, Copy, Debug)]
pub struct SampleLoss {
    pub l_ar: Var,
    pub l_sc: Var,
    pub total: Var,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let d = config.embed_dim;
        let eps = config.ln_eps;
        let n = config.num_patches();
        let mut s = ParamStore::new();

        let patch_embed = Linear::new(
            &mut s,
            "encoder.patch_embed",
            config.patch_px * config.patch_px,
            d,
            true,
            &mut rng,
        );
        let encoder = EncoderLayout {
            patch_embed,
            pos: s.add_normal("encoder.pos", &[n, d], EMBED_STD, &mut rng),
            blocks: (0..config.encoder_layers)
                .map(|i| {
                    SelfBlock::new(
                        &mut s,
                        &format!("encoder.block{i}"),
                        d,
                        config.encoder_heads,
                        config.mlp_ratio,
                        eps,
                        &mut rng,
                    )
                })
                .collect(),
            norm: Norm::new(&mut s, "encoder.norm", d, eps),
        };
        let encoder_len = s.len();

        let embedder = EmbedderLayout {
            w_z: Linear::new(&mut s, "embedder.w_z", d, d, false, &mut rng),
            row: s.add_normal("embedder.row", &[config.grid.rows, d], EMBED_STD, &mut rng),
            col: s.add_normal("embedder.col", &[config.grid.cols, d], EMBED_STD, &mut rng),
            rank: s.add_normal("embedder.rank", &[config.max_seq_len, d], EMBED_STD, &mut rng),
            w_dur: s.add_normal("embedder.w_dur", &[1, d], EMBED_STD, &mut rng),
        };
        let predictor = (0..config.predictor_layers)
            .map(|i| {
                SelfBlock::new(
                    &mut s,
                    &format!("predictor.block{i}"),
                    d,
                    config.predictor_heads,
                    config.mlp_ratio,
                    eps,
                    &mut rng,
                )
            })
            .collect();
        let predictor_norm = Norm::new(&mut s, "predictor.norm", d, eps);
        let head = Mlp::new(&mut s, "head", d, d * config.mlp_ratio, d, &mut rng);
        let completion = CompletionLayout {
            mask_token: s.add_normal("completion.mask_token", &[1, d], EMBED_STD, &mut rng),
            blocks: (0..config.completion_layers)
                .map(|i| {
                    CrossBlock::new(
                        &mut s,
                        &format!("completion.block{i}"),
                        d,
                        config.completion_heads,
                        config.mlp_ratio,
                        eps,
                        &mut rng,
                    )
                })
                .collect(),
            norm: Norm::new(&mut s, "completion.norm", d, eps),
            out: Linear::new(&mut s, "completion.out", d, d, true, &mut rng),
        };
        let readout = ReadoutLayout {
            token: s.add_normal("readout.token", &[1, d], 1.0, &mut rng),
            proj: Linear::new(&mut s, "readout.proj", d, d, false, &mut rng),
        };
        // the readout is never trained by the world-model objective
        s.get_mut(readout.token).requires_grad = false;
        s.get_mut(readout.proj.w).requires_grad = false;

        let target = s.frozen_prefix(encoder_len);
        Ok(Self {
            config,
            layout: Layout {
                encoder,
                encoder_len,
                embedder,
                predictor,
                predictor_norm,
                head,
                completion,
                readout,
            },
            online: s,
            target,
        })
    }

    /// Patch matrix (`N x patch_px^2`) of an image, in raster order.
    pub fn patch_tensor(&self, image: &ImageGray) -> Result<Tensor, ModelError> {
        let (ew, eh) = (
            self.config.grid.cols * self.config.patch_px,
            self.config.grid.rows * self.config.patch_px,
        );
        if image.width() != ew || image.height() != eh {
            return Err(ModelError::ImageSize {
                id: image.id.clone(),
                width: image.width(),
                height: image.height(),
                expected_w: ew,
                expected_h: eh,
            });
        }
        let patches = image.patches(self.config.grid)?;
        let p2 = self.config.patch_px * self.config.patch_px;
        let data = patches.into_iter().flatten().collect();
        Ok(Tensor::new(vec![self.config.num_patches(), p2], data)?)
    }

    /// Linear patch embedding plus position embedding, before any attention.
    pub fn embed_patches(&self, tape: &mut Tape, bind: Bind, patches: Var) -> Result<Var, ModelError> {
        let enc = &self.layout.encoder;
        let x = enc.patch_embed.forward(tape, bind, patches)?;
        let pos = bind.var(tape, enc.pos);
        Ok(tape.add(x, pos)?)
    }

    /// Encoder forward on the tape. `bind` may point at the online or the
    /// target store; both share encoder ids.
    pub fn encoder_forward(&self, tape: &mut Tape, bind: Bind, patches: Var) -> Result<Var, ModelError> {
        let enc = &self.layout.encoder;
        let mut x = self.embed_patches(tape, bind, patches)?;
        for block in &enc.blocks {
            x = block.forward(tape, bind, x, false)?;
        }
        Ok(enc.norm.forward(tape, bind, x)?)
    }

    fn encode_with(&self, store: &ParamStore, patches: &Tensor) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let p = tape.constant(patches.clone());
        let z = self.encoder_forward(&mut tape, Bind::Frozen(store), p)?;
        Ok(tape.value(z).clone())
    }

    /// Online encoder output for a precomputed patch matrix.
    pub fn encode_patches(&self, patches: &Tensor) -> Result<Tensor, ModelError> {
        self.encode_with(&self.online, patches)
    }

    /// Target encoder output for a precomputed patch matrix.
    pub fn target_encode_patches(&self, patches: &Tensor) -> Result<Tensor, ModelError> {
        self.encode_with(&self.target, patches)
    }

    /// Online patch representations `Z` (`N x d`).
    pub fn encode(&self, image: &ImageGray) -> Result<Tensor, ModelError> {
        self.encode_patches(&self.patch_tensor(image)?)
    }

    /// Target-encoder representations, computed without gradient tracking.
    pub fn target_encode(&self, image: &ImageGray) -> Result<Tensor, ModelError> {
        self.target_encode_patches(&self.patch_tensor(image)?)
    }

    /// Fixation tokens for the visited patches (`L x d`).
    pub fn embed_tokens(
        &self,
        tape: &mut Tape,
        bind: Bind,
        z: Var,
        visited: &[usize],
        dwell: &[f64],
    ) -> Result<Var, ModelError> {
        let len = visited.len();
        if len > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len,
                max: self.config.max_seq_len,
            });
        }
        let emb = &self.layout.embedder;
        let grid = self.config.grid;
        let zs = tape.gather_rows(z, visited)?;
        let mut h = emb.w_z.forward(tape, bind, zs)?;

        let rows: Vec<usize> = visited.iter().map(|&p| grid.row_col(p).0).collect();
        let cols: Vec<usize> = visited.iter().map(|&p| grid.row_col(p).1).collect();
        let ranks: Vec<usize> = (0..len).collect();
        let row_t = bind.var(tape, emb.row);
        let col_t = bind.var(tape, emb.col);
        let rank_t = bind.var(tape, emb.rank);
        let r = tape.gather_rows(row_t, &rows)?;
        let c = tape.gather_rows(col_t, &cols)?;
        let k = tape.gather_rows(rank_t, &ranks)?;

        let log_dwell = Tensor::new(vec![len, 1], dwell.iter().map(|d| d.ln_1p()).collect())?;
        let log_dwell = tape.constant(log_dwell);
        let w_dur = bind.var(tape, emb.w_dur);
        let dur = tape.matmul(log_dwell, w_dur)?;

        for term in [r, c, k, dur] {
            h = tape.add(h, term)?;
        }
        Ok(h)
    }

    /// One fixation token from a patch vector, outside any graph.
    pub fn embed_fixation(&self, z: &[f64], patch: usize, rank: usize, dwell: f64) -> Result<Vec<f64>, ModelError> {
        if rank >= self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len: rank + 1,
                max: self.config.max_seq_len,
            });
        }
        if patch >= self.config.num_patches() {
            return Err(NumError::IndexOutOfRange {
                index: patch,
                len: self.config.num_patches(),
            }
            .into());
        }
        let mut tape = Tape::new();
        let bind = Bind::Frozen(&self.online);
        let emb = &self.layout.embedder;
        let zv = tape.constant(Tensor::row(z.to_vec()));
        let mut h = emb.w_z.forward(&mut tape, bind, zv)?;
        let (r, c) = self.config.grid.row_col(patch);
        let row_t = bind.var(&mut tape, emb.row);
        let col_t = bind.var(&mut tape, emb.col);
        let rank_t = bind.var(&mut tape, emb.rank);
        let rv = tape.gather_rows(row_t, &[r])?;
        let cv = tape.gather_rows(col_t, &[c])?;
        let kv = tape.gather_rows(rank_t, &[rank])?;
        let w_dur = bind.var(&mut tape, emb.w_dur);
        let dur = tape.scale(w_dur, dwell.ln_1p());
        for term in [rv, cv, kv, dur] {
            h = tape.add(h, term)?;
        }
        Ok(tape.value(h).data().to_vec())
    }

    /// Causal predictor trunk only (`L x d`).
    pub fn predictor_trunk(&self, tape: &mut Tape, bind: Bind, tokens: Var) -> Result<Var, ModelError> {
        let len = tape.value(tokens).rows();
        if len == 0 || len > self.config.max_seq_len + 1 {
            return Err(ModelError::SequenceTooLong {
                len,
                max: self.config.max_seq_len,
            });
        }
        let mut x = tokens;
        for block in &self.layout.predictor {
            x = block.forward(tape, bind, x, true)?;
        }
        Ok(self.layout.predictor_norm.forward(tape, bind, x)?)
    }

    /// Predictor trunk plus prediction head. Position `i` of the context
    /// only sees tokens `0..=i`; the head output at `i` predicts patch
    /// `s_{i+2}` (1-based).
    pub fn predict(&self, tape: &mut Tape, bind: Bind, tokens: Var) -> Result<Prediction, ModelError> {
        let len = tape.value(tokens).rows();
        if len > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len,
                max: self.config.max_seq_len,
            });
        }
        let context = self.predictor_trunk(tape, bind, tokens)?;
        let next = if len >= 2 {
            let idx: Vec<usize> = (0..len - 1).collect();
            let prefix = tape.gather_rows(context, &idx)?;
            Some(self.layout.head.forward(tape, bind, prefix)?)
        } else {
            None
        };
        Ok(Prediction { context, next })
    }

    /// Spatial embedding `row(p) + col(p)` for each patch (`|patches| x d`).
    pub fn spatial_embedding(&self, tape: &mut Tape, bind: Bind, patches: &[usize]) -> Result<Var, ModelError> {
        let grid = self.config.grid;
        let rows: Vec<usize> = patches.iter().map(|&p| grid.row_col(p).0).collect();
        let cols: Vec<usize> = patches.iter().map(|&p| grid.row_col(p).1).collect();
        let row_t = bind.var(tape, self.layout.embedder.row);
        let col_t = bind.var(tape, self.layout.embedder.col);
        let r = tape.gather_rows(row_t, &rows)?;
        let c = tape.gather_rows(col_t, &cols)?;
        Ok(tape.add(r, c)?)
    }

    /// Completion decoder from explicit query rows (`mask + e_p`).
    pub fn complete_queries(&self, tape: &mut Tape, bind: Bind, queries: Var, context: Var) -> Result<Var, ModelError> {
        let comp = &self.layout.completion;
        let mut q = queries;
        for block in &comp.blocks {
            q = block.forward(tape, bind, q, context)?;
        }
        let q = comp.norm.forward(tape, bind, q)?;
        Ok(comp.out.forward(tape, bind, q)?)
    }

    /// One predicted representation per unvisited patch (`|U| x d`); an
    /// empty set yields a `0 x d` constant.
    pub fn complete_unvisited(
        &self,
        tape: &mut Tape,
        bind: Bind,
        context: Var,
        unvisited: &[usize],
    ) -> Result<Var, ModelError> {
        if unvisited.is_empty() {
            return Ok(tape.constant(Tensor::zeros(&[0, self.config.embed_dim])));
        }
        let e = self.spatial_embedding(tape, bind, unvisited)?;
        let mask = bind.var(tape, self.layout.completion.mask_token);
        let queries = tape.add_row(e, mask)?;
        self.complete_queries(tape, bind, queries, context)
    }

    /// Full objective for one image and its fixation sequence. `target_z` is
    /// the target-encoder output for the same image and enters as a
    /// constant.
    pub fn sample_loss(
        &self,
        tape: &mut Tape,
        bind: Bind,
        patches: &Tensor,
        seq: &FixationSequence,
        target_z: &Tensor,
    ) -> Result<SampleLoss, ModelError> {
        if seq.len() < 2 {
            return Err(ModelError::SequenceTooShort(seq.len()));
        }
        let cfg = &self.config;
        let p = tape.constant(patches.clone());
        let z = self.encoder_forward(tape, bind, p)?;
        let tokens = self.embed_tokens(tape, bind, z, seq.visited(), seq.dwell())?;
        let pred = self.predict(tape, bind, tokens)?;
        let next = pred.next.expect("len >= 2");

        let zbar = tape.constant(target_z.clone());
        let ar_targets = tape.gather_rows(zbar, &seq.visited()[1..])?;
        let l_ar = loss_ar(tape, next, ar_targets, cfg.smooth_l1_beta, cfg.ln_eps, cfg.symmetric_ln)?;

        let unvisited = seq.unvisited();
        let rhat = self.complete_unvisited(tape, bind, pred.context, &unvisited)?;
        let sc_targets = if unvisited.is_empty() {
            rhat
        } else {
            tape.gather_rows(zbar, &unvisited)?
        };
        let l_sc = loss_sc(tape, rhat, sc_targets, cfg.smooth_l1_beta, cfg.ln_eps)?;
        let total = loss_total(tape, l_ar, l_sc, cfg.lambda_sc)?;
        Ok(SampleLoss { l_ar, l_sc, total })
    }

    /// Trainable parameters that carry no gradient after a backward pass are
    /// given zero buffers so the optimizer sees every parameter.
    pub fn ensure_grad_buffers(&mut self) {
        for p in self.online.params_mut() {
            if p.requires_grad && p.grad.is_none() {
                p.grad = Some(Tensor::zeros(p.value.shape()));
            }
        }
    }
}
