use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use langnav_core::command::PAD_ID;
use langnav_core::raster::{SemanticRaster, MASK_ON};
use langnav_nn::layers::{Conv2d, Conv3d, Embedding, Linear, MultiHeadAttention};
use langnav_nn::tensor::{shape_err, Result};
use langnav_nn::{Graph, ParamId, ParamSet, Scalar, Tensor, Var};

use crate::config::ModelConfig;

/// One query in tensor form.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInput<T> {
    /// One-hot classes, `[T, classes, S, S]`, oldest frame first.
    pub frames: Tensor<T>,
    /// Binary trail map, `[1, S, S]`.
    pub context: Tensor<T>,
    pub tokens: Vec<usize>,
    pub token_mask: Vec<bool>,
}

pub fn one_hot<T: Scalar>(frames: &[&SemanticRaster], classes: usize, size: usize) -> Result<Tensor<T>> {
    let plane = size * size;
    let mut data = vec![T::zero(); frames.len() * classes * plane];
    for (t, f) in frames.iter().enumerate() {
        if f.width() != size || f.height() != size {
            return shape_err(format!("frame {}x{}, expected {size}x{size}", f.width(), f.height()));
        }
        for (i, &c) in f.data().iter().enumerate() {
            let c = c as usize;
            if c >= classes {
                return shape_err(format!("class id {c} out of range"));
            }
            data[(t * classes + c) * plane + i] = T::one();
        }
    }
    Tensor::new(&[frames.len(), classes, size, size], data)
}

pub fn encode_input<T: Scalar>(
    frames: &[&SemanticRaster],
    context: &SemanticRaster,
    tokens: &[u32],
    cfg: &ModelConfig,
) -> Result<EncodedInput<T>> {
    if frames.len() != cfg.n_frames {
        return shape_err(format!("{} frames for a {}-frame model", frames.len(), cfg.n_frames));
    }
    if tokens.len() != cfg.max_tokens {
        return shape_err(format!("{} tokens, expected {}", tokens.len(), cfg.max_tokens));
    }
    let size = cfg.image_size;
    if context.width() != size || context.height() != size {
        return shape_err("context map size");
    }
    let ctx = context
        .data()
        .iter()
        .map(|&v| if v > 0 { T::one() } else { T::zero() })
        .collect();
    Ok(EncodedInput {
        frames: one_hot(frames, cfg.classes, size)?,
        context: Tensor::new(&[1, size, size], ctx)?,
        tokens: tokens.iter().map(|&t| (t as usize).min(cfg.vocab_size - 1)).collect(),
        token_mask: tokens.iter().map(|&t| t != PAD_ID).collect(),
    })
}

#[derive(Debug, Clone)]
struct Encoder {
    convs: [Conv2d; 3],
}

impl Encoder {
    fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, cin: usize, c: usize, rng: &mut ChaCha8Rng) -> Self {
        let mid = (c / 2).max(1);
        Self {
            convs: [
                Conv2d::new(ps, &format!("{name}.conv0"), cin, mid, 3, 2, 1, rng),
                Conv2d::new(ps, &format!("{name}.conv1"), mid, c, 3, 2, 1, rng),
                Conv2d::new(ps, &format!("{name}.conv2"), c, c, 3, 2, 1, rng),
            ],
        }
    }

    /// `[N, cin, S, S]` to `[N, C, S/8, S/8]`.
    fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(g, h)?;
            h = g.relu(h);
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
struct Decoder {
    convs: [Conv2d; 3],
}

impl Decoder {
    fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, c: usize, mid: [usize; 2], rng: &mut ChaCha8Rng) -> Self {
        Self {
            convs: [
                Conv2d::new(ps, &format!("{name}.conv0"), c, mid[0], 3, 1, 1, rng),
                Conv2d::new(ps, &format!("{name}.conv1"), mid[0], mid[1], 3, 1, 1, rng),
                Conv2d::new(ps, &format!("{name}.conv2"), mid[1], 1, 3, 1, 1, rng),
            ],
        }
    }

    /// `[C, G, G]` to logits `[8G, 8G]`.
    fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, m: Var) -> Result<Var> {
        let mut h = m;
        for (i, conv) in self.convs.iter().enumerate() {
            h = g.upsample2(h)?;
            h = conv.forward(g, h)?;
            if i < 2 {
                h = g.relu(h);
            }
        }
        let s = g.shape(h).to_vec();
        g.reshape(h, &s[1..])
    }
}

#[derive(Debug, Clone)]
enum ContextBranch {
    Encoded { encoder: Encoder, mlp: Linear },
    Constant(ParamId),
}

/// Intermediate nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub nav_logits: Var,
    pub traj_logits: Var,
    /// Joint feature matrix `[(T+1)G^2 + N, C]`.
    pub fused: Var,
    /// Head-averaged attention weights `[L, L]`.
    pub attention: Var,
    /// Temporal volume `[C, T+1, G, G]` fed to Conv3D.
    pub volume: Var,
    /// Conv3D output `[C, 1, G, G]`.
    pub collapsed: Var,
}

#[derive(Debug, Clone)]
pub struct GrounderModel<T> {
    pub cfg: ModelConfig,
    pub params: ParamSet<T>,
    frame_encoder: Encoder,
    context: ContextBranch,
    embed: Embedding,
    text_proj: Linear,
    text_pos: ParamId,
    attention: MultiHeadAttention,
    fuse: Conv3d,
    nav_head: Decoder,
    traj_head: Decoder,
}

impl<T: Scalar> GrounderModel<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        if let Err(e) = cfg.validate() {
            return shape_err(e);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let c = cfg.channels;
        let cells = cfg.grid * cfg.grid;
        let frame_encoder = Encoder::new(&mut ps, "frame", cfg.classes, c, &mut rng);
        let context = if cfg.use_context {
            ContextBranch::Encoded {
                encoder: Encoder::new(&mut ps, "context", 1, c, &mut rng),
                mlp: Linear::new(&mut ps, "context.mlp", c, c, &mut rng),
            }
        } else {
            ContextBranch::Constant(ps.add_uniform("context.const", &[cells, c], 0.1, &mut rng))
        };
        let embed = Embedding::new(&mut ps, "text.embed", cfg.vocab_size, c, &mut rng);
        let text_proj = Linear::new(&mut ps, "text.proj", c, c, &mut rng);
        let text_pos = ps.add_uniform("text.pos", &[cfg.max_tokens, c], 0.1, &mut rng);
        let attention = MultiHeadAttention::new(&mut ps, "fusion.attn", c, cfg.heads, false, &mut rng)?;
        let t1 = cfg.n_frames + 1;
        let fuse = Conv3d::new(&mut ps, "fusion.conv3d", c, c, [t1, 3, 3], [0, 1, 1], &mut rng);
        let nav_head = Decoder::new(&mut ps, "nav_head", c, cfg.decoder_channels, &mut rng);
        let traj_head = Decoder::new(&mut ps, "traj_head", c, cfg.decoder_channels, &mut rng);
        Ok(Self {
            cfg,
            params: ps,
            frame_encoder,
            context,
            embed,
            text_proj,
            text_pos,
            attention,
            fuse,
            nav_head,
            traj_head,
        })
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> GrounderModel<U> {
        GrounderModel {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            frame_encoder: self.frame_encoder.clone(),
            context: self.context.clone(),
            embed: self.embed.clone(),
            text_proj: self.text_proj.clone(),
            text_pos: self.text_pos,
            attention: self.attention.clone(),
            fuse: self.fuse.clone(),
            nav_head: self.nav_head.clone(),
            traj_head: self.traj_head.clone(),
        }
    }

    /// `[rows, C, G, G]` to `[rows * G^2, C]`, position-major within each row block.
    fn to_rows(g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (n, c, cells) = (s[0], s[1], s[2] * s[3]);
        let x = g.reshape(x, &[n, c, cells])?;
        let x = g.permute3(x, [0, 2, 1])?;
        g.reshape(x, &[n * cells, c])
    }

    pub fn forward(&self, g: &mut Graph<'_, T>, input: &EncodedInput<T>) -> Result<ForwardVars> {
        let cfg = &self.cfg;
        let (c, gs) = (cfg.channels, cfg.grid);
        let cells = gs * gs;
        let t = cfg.n_frames;
        if input.frames.shape != [t, cfg.classes, cfg.image_size, cfg.image_size] {
            return shape_err(format!("frame tensor {:?}", input.frames.shape));
        }
        if input.tokens.len() != cfg.max_tokens || input.token_mask.len() != cfg.max_tokens {
            return shape_err("token length");
        }
        let frames = g.input(input.frames.clone());
        let fv = self.frame_encoder.forward(g, frames)?;
        let fv = Self::to_rows(g, fv)?;
        let fp = match &self.context {
            ContextBranch::Encoded { encoder, mlp } => {
                let s = cfg.image_size;
                let x = g.input(input.context.clone());
                let x = g.reshape(x, &[1, 1, s, s])?;
                let h = encoder.forward(g, x)?;
                let h = Self::to_rows(g, h)?;
                mlp.forward(g, h)?
            }
            ContextBranch::Constant(id) => g.param(*id),
        };
        let fl = self.embed.forward(g, &input.tokens)?;
        let fl = self.text_proj.forward(g, fl)?;
        let pos = g.param(self.text_pos);
        let fl = g.add(fl, pos)?;
        let fused = g.concat_rows(&[fv, fp, fl])?;
        let mut key_mask = vec![true; cfg.visual_rows()];
        key_mask.extend_from_slice(&input.token_mask);
        let att = self.attention.forward(g, fused, Some(&key_mask))?;
        let mut ctx = g.matmul(att.weights, fused)?;
        if cfg.residual {
            ctx = g.add(ctx, fused)?;
        }
        let visual = g.slice_rows(ctx, 0, cfg.visual_rows())?;
        let visual = g.reshape(visual, &[t + 1, cells, c])?;
        let volume = g.permute3(visual, [2, 0, 1])?;
        let volume = g.reshape(volume, &[c, t + 1, gs, gs])?;
        let collapsed = self.fuse.forward(g, volume)?;
        if g.shape(collapsed)[1] != 1 {
            return shape_err("temporal dimension not collapsed");
        }
        let m = g.reshape(collapsed, &[c, gs, gs])?;
        let m = g.relu(m);
        let nav_logits = self.nav_head.forward(g, m)?;
        let traj_logits = self.traj_head.forward(g, m)?;
        Ok(ForwardVars {
            nav_logits,
            traj_logits,
            fused,
            attention: att.weights,
            volume,
            collapsed,
        })
    }

    /// Logits for both heads, each `[S, S]`.
    pub fn infer(&self, input: &EncodedInput<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, input)?;
        Ok((g.value(out.nav_logits).clone(), g.value(out.traj_logits).clone()))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Binary mask of pixels whose sigmoid probability exceeds 0.5 strictly.
pub fn threshold_logits<T: Scalar>(logits: &Tensor<T>) -> SemanticRaster {
    let (h, w) = (logits.shape[0], logits.shape[1]);
    let data = logits
        .data
        .iter()
        .map(|v| if sigmoid(v.as_f64()) > 0.5 { MASK_ON } else { 0 })
        .collect();
    SemanticRaster::from_data(w, h, data).expect("logit map is rectangular")
}
