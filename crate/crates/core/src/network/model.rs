use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelVariant, NetworkConfig};
use crate::error::{shape_err, Result};
use crate::kernels::add_into;
use crate::nn::{
    concat_column, join, small_normal, split_column_grad, CnnCache, CnnEncoder, EncoderCache, Linear, Mlp,
    MlpCache, ParamSet, TransformerEncoder,
};
use crate::scalar::Scalar;
use crate::simworld::{Observation, MAP_CHANNELS};
use crate::tensor::Tensor;

/// Perception module `P`: CNN image and map encoders plus the image-token
/// Transformer encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptionParams<T> {
    pub image_cnn: CnnEncoder<T>,
    pub map_cnn: CnnEncoder<T>,
    /// Learned positional column, `N × 1`.
    pub pos: Tensor<T>,
    pub encoder: TransformerEncoder<T>,
}

/// Planning module `Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanningParams<T> {
    /// Per-position `1 → E` expansion of each fused-feature scalar, `P × E`.
    pub expand_w: Tensor<T>,
    pub expand_b: Tensor<T>,
    pub pos: Tensor<T>,
    pub encoder: TransformerEncoder<T>,
    pub head: Linear<T>,
}

/// Control module `R`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlParams<T> {
    pub pre: Mlp<T>,
    pub fc: Linear<T>,
    pub post: Mlp<T>,
}

/// Full policy parameters `θ = (θ_P, θ_Q, θ_R)`.
///
/// A zeroed clone doubles as the gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct MoNetParams<T> {
    pub variant: ModelVariant,
    pub config: NetworkConfig,
    pub perception: PerceptionParams<T>,
    pub planning: Option<PlanningParams<T>>,
    pub control: ControlParams<T>,
}

/// Deterministic initialization from `seed`.
pub fn init_params<T: Scalar>(seed: u64, variant: ModelVariant, config: &NetworkConfig) -> Result<MoNetParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.token_dim;
    let enc = |dim: usize, rng: &mut ChaCha8Rng| {
        let mut e = TransformerEncoder::new(dim, config.heads, config.head_dim, config.mlp_hidden, rng);
        e.bypass_norm = config.bypass_norm;
        e
    };
    let perception = PerceptionParams {
        image_cnn: CnnEncoder::new(1, &config.image_stages, config.grid, &mut rng),
        map_cnn: CnnEncoder::new(MAP_CHANNELS, &config.map_stages, 1, &mut rng),
        pos: small_normal(&[config.tokens(), 1], 0.02, &mut rng),
        encoder: enc(d + 1, &mut rng),
    };
    let fused = config.fused_dim();
    let planning = variant.has_planning_params().then(|| PlanningParams {
        expand_w: crate::nn::fan_in_uniform(&[fused, config.plan_embed], 1, &mut rng),
        expand_b: Tensor::zeros(&[fused, config.plan_embed]),
        pos: small_normal(&[fused, 1], 0.02, &mut rng),
        encoder: enc(config.plan_embed + 1, &mut rng),
        head: Linear::new(config.plan_embed + 1, config.latent_dim, &mut rng),
    });
    let control = ControlParams {
        pre: Mlp::new(fused, config.control_hidden, config.latent_dim, &mut rng),
        fc: Linear::new(config.latent_dim, config.latent_dim, &mut rng),
        post: Mlp::new(config.latent_dim, config.control_hidden, 2, &mut rng),
    };
    Ok(MoNetParams {
        variant,
        config: config.clone(),
        perception,
        planning,
        control,
    })
}

impl<T: Scalar> ParamSet<T> for PerceptionParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.image_cnn.visit(&join(prefix, "image_cnn"), f);
        self.map_cnn.visit(&join(prefix, "map_cnn"), f);
        f(join(prefix, "pos"), &self.pos);
        self.encoder.visit(&join(prefix, "encoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.image_cnn.visit_mut(&join(prefix, "image_cnn"), f);
        self.map_cnn.visit_mut(&join(prefix, "map_cnn"), f);
        f(join(prefix, "pos"), &mut self.pos);
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
    }
}

impl<T: Scalar> ParamSet<T> for PlanningParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "expand_w"), &self.expand_w);
        f(join(prefix, "expand_b"), &self.expand_b);
        f(join(prefix, "pos"), &self.pos);
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "expand_w"), &mut self.expand_w);
        f(join(prefix, "expand_b"), &mut self.expand_b);
        f(join(prefix, "pos"), &mut self.pos);
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

impl<T: Scalar> ParamSet<T> for ControlParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.pre.visit(&join(prefix, "pre"), f);
        self.fc.visit(&join(prefix, "fc"), f);
        self.post.visit(&join(prefix, "post"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.pre.visit_mut(&join(prefix, "pre"), f);
        self.fc.visit_mut(&join(prefix, "fc"), f);
        self.post.visit_mut(&join(prefix, "post"), f);
    }
}

impl<T: Scalar> ParamSet<T> for MoNetParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.perception.visit(&join(prefix, "perception"), f);
        if let Some(p) = &self.planning {
            p.visit(&join(prefix, "planning"), f);
        }
        self.control.visit(&join(prefix, "control"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.perception.visit_mut(&join(prefix, "perception"), f);
        if let Some(p) = &mut self.planning {
            p.visit_mut(&join(prefix, "planning"), f);
        }
        self.control.visit_mut(&join(prefix, "control"), f);
    }
}

// ---------------------------------------------------------------------------
// Perception

#[derive(Clone, Debug)]
pub struct PerceptionOutput<T> {
    /// Image feature `z_I`, `C × g × g` (channel-major).
    pub z_image: Vec<T>,
    /// Route feature `z^flat_M`, length `D_p`.
    pub z_map: Vec<T>,
    /// Encoder input tokens `[z^flat_I ; z^pos]`, `N × (D_p + 1)`.
    pub tokens: Vec<T>,
    /// Head-averaged attention matrix, `N × N`.
    pub attention: Vec<T>,
    /// Mean-pooled attended image feature `z^att_I`, length `D_p + 1`.
    pub z_att: Vec<T>,
    /// Fused feature `z^p = [z^att_I ; z^flat_M]`.
    pub z_p: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct PerceptionCache<T> {
    image: CnnCache<T>,
    map: CnnCache<T>,
    encoder: EncoderCache<T>,
}

fn check_observation(o: &Observation, cfg: &NetworkConfig) -> Result<()> {
    if o.image_h != cfg.image_size || o.image_w != cfg.image_size || o.image.len() != o.image_h * o.image_w {
        return Err(shape_err(format!(
            "image is {}×{}, network expects {s}×{s}",
            o.image_h,
            o.image_w,
            s = cfg.image_size
        )));
    }
    if o.map_size != cfg.map_size || o.map.len() != o.map_size * o.map_size * MAP_CHANNELS {
        return Err(shape_err(format!(
            "map is {s}×{s}×3, network expects {m}×{m}×3",
            s = o.map_size,
            m = cfg.map_size
        )));
    }
    Ok(())
}

/// Converts the HWC map to channel-major.
fn map_chw<T: Scalar>(o: &Observation) -> Vec<T> {
    let s = o.map_size;
    let mut out = vec![T::zero(); MAP_CHANNELS * s * s];
    for (p, px) in o.map.chunks(MAP_CHANNELS).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            out[c * s * s + p] = T::from_f32v(v);
        }
    }
    out
}

/// `C × g × g` feature map → `g² × C` tokens (row-major cell order).
fn to_tokens<T: Scalar>(feat: &[T], c: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * c];
    for ch in 0..c {
        for t in 0..n {
            out[t * c + ch] = feat[ch * n + t];
        }
    }
    out
}

fn from_tokens<T: Scalar>(tok: &[T], c: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * c];
    for ch in 0..c {
        for t in 0..n {
            out[ch * n + t] = tok[t * c + ch];
        }
    }
    out
}

impl<T: Scalar> PerceptionParams<T> {
    pub fn forward(&self, o: &Observation, cfg: &NetworkConfig) -> Result<(PerceptionOutput<T>, PerceptionCache<T>)> {
        check_observation(o, cfg)?;
        let image: Vec<T> = o.image.iter().map(|&v| T::from_f32v(v)).collect();
        let (z_image, image_cache) = self.image_cnn.forward(&image, o.image_h, o.image_w);
        let (z_map, map_cache) = self.map_cnn.forward(&map_chw::<T>(o), o.map_size, o.map_size);

        let n = cfg.tokens();
        let d = cfg.token_dim;
        let flat = to_tokens(&z_image, d, n);
        let tokens = concat_column(&flat, n, d, self.pos.data());
        let (enc, encoder_cache) = self.encoder.forward(&tokens, n);
        let mut z_p = enc.pooled.clone();
        z_p.extend_from_slice(&z_map);
        Ok((
            PerceptionOutput {
                z_image,
                z_map,
                tokens,
                attention: enc.attention,
                z_att: enc.pooled,
                z_p,
            },
            PerceptionCache {
                image: image_cache,
                map: map_cache,
                encoder: encoder_cache,
            },
        ))
    }

    pub fn backward(&self, cache: &PerceptionCache<T>, cfg: &NetworkConfig, dz_p: &[T], grad: &mut Self) {
        let n = cfg.tokens();
        let d = cfg.token_dim;
        let (d_att, d_map) = dz_p.split_at(d + 1);
        let d_tokens = self.encoder.backward(&cache.encoder, d_att, &mut grad.encoder);
        let (d_flat, d_pos) = split_column_grad(&d_tokens, n, d);
        add_into(grad.pos.data_mut(), &d_pos);
        let d_image = from_tokens(&d_flat, d, n);
        self.image_cnn.backward(&cache.image, &d_image, &mut grad.image_cnn);
        self.map_cnn.backward(&cache.map, d_map, &mut grad.map_cnn);
    }
}

// ---------------------------------------------------------------------------
// Planning

#[derive(Clone, Debug)]
pub struct PlanningOutput<T> {
    /// Token embedding `z^emb`, `P × E`. Empty for the identity planner.
    pub z_emb: Vec<T>,
    /// Latent decision `h^d`, length `N_d`.
    pub h_d: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct PlanningCache<T> {
    z_p: Vec<T>,
    encoder: EncoderCache<T>,
    pooled: Vec<T>,
}

impl<T: Scalar> PlanningParams<T> {
    pub fn forward(&self, z_p: &[T], cfg: &NetworkConfig) -> Result<(PlanningOutput<T>, PlanningCache<T>)> {
        let p = cfg.fused_dim();
        let e = cfg.plan_embed;
        if z_p.len() != p {
            return Err(shape_err(format!("z^p has length {}, expected {p}", z_p.len())));
        }
        let w = self.expand_w.data();
        let b = self.expand_b.data();
        let mut z_emb = Vec::with_capacity(p * e);
        for (i, &v) in z_p.iter().enumerate() {
            for k in 0..e {
                z_emb.push(v * w[i * e + k] + b[i * e + k]);
            }
        }
        let tokens = concat_column(&z_emb, p, e, self.pos.data());
        let (enc, encoder) = self.encoder.forward(&tokens, p);
        let h_d = self.head.forward(&enc.pooled, 1);
        Ok((
            PlanningOutput { z_emb, h_d },
            PlanningCache {
                z_p: z_p.to_vec(),
                encoder,
                pooled: enc.pooled,
            },
        ))
    }

    /// Returns `∂L/∂z^p`.
    pub fn backward(&self, cache: &PlanningCache<T>, cfg: &NetworkConfig, dh: &[T], grad: &mut Self) -> Vec<T> {
        let p = cfg.fused_dim();
        let e = cfg.plan_embed;
        let d_pooled = self.head.backward(&cache.pooled, 1, dh, &mut grad.head);
        let d_tokens = self.encoder.backward(&cache.encoder, &d_pooled, &mut grad.encoder);
        let (d_emb, d_pos) = split_column_grad(&d_tokens, p, e);
        add_into(grad.pos.data_mut(), &d_pos);
        let w = self.expand_w.data();
        let mut dz = vec![T::zero(); p];
        for i in 0..p {
            let mut acc = T::zero();
            for k in 0..e {
                let g = d_emb[i * e + k];
                let gw = &mut grad.expand_w.data_mut()[i * e + k];
                *gw = *gw + cache.z_p[i] * g;
                let gb = &mut grad.expand_b.data_mut()[i * e + k];
                *gb = *gb + g;
                acc = acc + w[i * e + k] * g;
            }
            dz[i] = acc;
        }
        dz
    }
}

/// Identity planner: `h^d = z^p[0..N_d]`, zero-padded when `N_d` exceeds
/// the fused width.
pub fn identity_planning<T: Scalar>(z_p: &[T], latent_dim: usize) -> Vec<T> {
    (0..latent_dim).map(|i| z_p.get(i).copied().unwrap_or_else(T::zero)).collect()
}

// ---------------------------------------------------------------------------
// Control

#[derive(Clone, Debug)]
pub struct ControlOutput<T> {
    pub x_pre: Vec<T>,
    /// Modulated feature; for `ViTNet` this is the control-level feature `z^c`.
    pub x_mod: Vec<T>,
    /// `[δ^c, τ^c]`, strictly inside `(-1, 1)`.
    pub action: [T; 2],
}

#[derive(Clone, Debug)]
pub struct ControlCache<T> {
    pre: MlpCache<T>,
    x_pre: Vec<T>,
    fc_out: Vec<T>,
    h_d: Option<Vec<T>>,
    post: MlpCache<T>,
    action: [T; 2],
}

impl<T: Scalar> ControlParams<T> {
    pub fn forward(
        &self,
        z_p: &[T],
        h_d: Option<&[T]>,
        variant: ModelVariant,
        cfg: &NetworkConfig,
    ) -> Result<(ControlOutput<T>, ControlCache<T>)> {
        if z_p.len() != cfg.fused_dim() {
            return Err(shape_err(format!("z^p has length {}, expected {}", z_p.len(), cfg.fused_dim())));
        }
        match (variant.has_latent_decision(), h_d) {
            (true, Some(h)) if h.len() == cfg.latent_dim => {}
            (true, Some(h)) => {
                return Err(shape_err(format!("h^d has length {}, expected {}", h.len(), cfg.latent_dim)))
            }
            (true, None) => return Err(shape_err(format!("variant {variant} requires a latent decision"))),
            (false, Some(_)) => return Err(shape_err("vitnet takes no latent decision")),
            (false, None) => {}
        }
        let (x_pre, pre) = self.pre.forward(z_p, 1);
        let fc_out = self.fc.forward(&x_pre, 1);
        let x_mod: Vec<T> = match (variant, h_d) {
            (ModelVariant::MoNetMul, Some(h)) => fc_out.iter().zip(h).map(|(&a, &b)| a * b).collect(),
            (_, Some(h)) => fc_out.iter().zip(h).map(|(&a, &b)| a + b).collect(),
            (_, None) => fc_out.clone(),
        };
        let (u, post) = self.post.forward(&x_mod, 1);
        let action = [u[0].tanh(), u[1].tanh()];
        Ok((
            ControlOutput {
                x_pre: x_pre.clone(),
                x_mod,
                action,
            },
            ControlCache {
                pre,
                x_pre,
                fc_out,
                h_d: h_d.map(<[T]>::to_vec),
                post,
                action,
            },
        ))
    }

    /// Returns `(∂L/∂z^p, ∂L/∂h^d)`; the latter is `None` without a decision input.
    pub fn backward(
        &self,
        cache: &ControlCache<T>,
        variant: ModelVariant,
        d_action: [T; 2],
        grad: &mut Self,
    ) -> (Vec<T>, Option<Vec<T>>) {
        let du: Vec<T> = d_action
            .iter()
            .zip(cache.action)
            .map(|(&g, a)| g * (T::one() - a * a))
            .collect();
        let dx_mod = self.post.backward(&cache.post, &du, &mut grad.post);
        let (d_fc, dh) = match (&cache.h_d, variant) {
            (Some(h), ModelVariant::MoNetMul) => {
                let d_fc = dx_mod.iter().zip(h).map(|(&g, &hv)| g * hv).collect();
                let dh = dx_mod.iter().zip(&cache.fc_out).map(|(&g, &f)| g * f).collect();
                (d_fc, Some(dh))
            }
            (Some(_), _) => (dx_mod.clone(), Some(dx_mod)),
            (None, _) => (dx_mod, None),
        };
        let dx_pre = self.fc.backward(&cache.x_pre, 1, &d_fc, &mut grad.fc);
        let dz = self.pre.backward(&cache.pre, &dx_pre, &mut grad.pre);
        (dz, dh)
    }
}

// ---------------------------------------------------------------------------
// Whole policy

#[derive(Clone, Debug)]
pub struct PolicyOutput<T> {
    pub action: [T; 2],
    pub z_p: Vec<T>,
    /// Latent decision; absent for `ViTNet`.
    pub h_d: Option<Vec<T>>,
    /// Control-level feature `z^c` (the modulated feature); exposed for
    /// every variant, used as the decision surrogate for `ViTNet`.
    pub z_c: Vec<T>,
    pub attention: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct PolicyCache<T> {
    perception: PerceptionCache<T>,
    planning: Option<PlanningCache<T>>,
    control: ControlCache<T>,
}

/// Upstream gradients entering a policy backward pass.
#[derive(Clone, Debug, Default)]
pub struct PolicySeed<T> {
    /// `∂L/∂a^c`. `None` skips the control module entirely.
    pub action: Option<[T; 2]>,
    /// Extra `∂L/∂h^d` from losses defined on the latent decision.
    pub h_d: Option<Vec<T>>,
}

impl<T: Scalar> MoNetParams<T> {
    pub fn forward_cached(&self, o: &Observation) -> Result<(PolicyOutput<T>, PolicyCache<T>)> {
        let cfg = &self.config;
        let (perc, perception) = self.perception.forward(o, cfg)?;
        let (h_d, planning) = match (&self.planning, self.variant) {
            (Some(q), _) => {
                let (out, cache) = q.forward(&perc.z_p, cfg)?;
                (Some(out.h_d), Some(cache))
            }
            (None, ModelVariant::MoNetIden) => (Some(identity_planning(&perc.z_p, cfg.latent_dim)), None),
            (None, ModelVariant::ViTNet) => (None, None),
            (None, v) => return Err(shape_err(format!("variant {v} is missing planning parameters"))),
        };
        let (ctrl, control) = self.control.forward(&perc.z_p, h_d.as_deref(), self.variant, cfg)?;
        Ok((
            PolicyOutput {
                action: ctrl.action,
                z_p: perc.z_p,
                h_d,
                z_c: ctrl.x_mod,
                attention: perc.attention,
            },
            PolicyCache {
                perception,
                planning,
                control,
            },
        ))
    }

    /// Accumulates `∂L/∂θ` into `grad` following the module routing:
    /// the action seed reaches `R`, `Q` and `P`; the `h^d` seed reaches
    /// only `Q` and `P`.
    pub fn backward(&self, cache: &PolicyCache<T>, seed: &PolicySeed<T>, grad: &mut Self) {
        let cfg = &self.config;
        let mut dz_p = vec![T::zero(); cfg.fused_dim()];
        let mut dh: Option<Vec<T>> = seed.h_d.clone();
        let mut touched = false;
        if let Some(da) = seed.action {
            let (dz, dh_c) = self.control.backward(&cache.control, self.variant, da, &mut grad.control);
            add_into(&mut dz_p, &dz);
            touched = true;
            if let Some(g) = dh_c {
                match dh.as_mut() {
                    Some(acc) => add_into(acc, &g),
                    None => dh = Some(g),
                }
            }
        }
        if let Some(g) = dh.filter(|_| self.variant.has_latent_decision()) {
            match (&self.planning, &cache.planning, grad.planning.as_mut()) {
                (Some(q), Some(qc), Some(gq)) => {
                    add_into(&mut dz_p, &q.backward(qc, cfg, &g, gq));
                }
                _ => {
                    for (i, v) in g.iter().enumerate().take(dz_p.len()) {
                        dz_p[i] = dz_p[i] + *v;
                    }
                }
            }
            touched = true;
        }
        if touched {
            self.perception.backward(&cache.perception, cfg, &dz_p, &mut grad.perception);
        }
    }
}

/// Composes perception, planning and control.
pub fn policy_forward<T: Scalar>(o: &Observation, params: &MoNetParams<T>) -> Result<PolicyOutput<T>> {
    params.forward_cached(o).map(|(out, _)| out)
}

pub fn perception_forward<T: Scalar>(o: &Observation, params: &MoNetParams<T>) -> Result<PerceptionOutput<T>> {
    params.perception.forward(o, &params.config).map(|(out, _)| out)
}

/// Planning output for the variants that have one; `None` for `ViTNet`.
pub fn planning_forward<T: Scalar>(z_p: &[T], params: &MoNetParams<T>) -> Result<Option<PlanningOutput<T>>> {
    match (&params.planning, params.variant) {
        (Some(q), _) => q.forward(z_p, &params.config).map(|(o, _)| Some(o)),
        (None, ModelVariant::MoNetIden) => {
            if z_p.len() != params.config.fused_dim() {
                return Err(shape_err("z^p length does not match config"));
            }
            Ok(Some(PlanningOutput {
                z_emb: Vec::new(),
                h_d: identity_planning(z_p, params.config.latent_dim),
            }))
        }
        _ => Ok(None),
    }
}

pub fn control_forward<T: Scalar>(
    z_p: &[T],
    h_d: Option<&[T]>,
    params: &MoNetParams<T>,
) -> Result<ControlOutput<T>> {
    params
        .control
        .forward(z_p, h_d, params.variant, &params.config)
        .map(|(o, _)| o)
}
