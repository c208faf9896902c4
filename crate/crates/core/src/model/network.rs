//! Flux-to-surface network: patch transformer per observation, set fusion,
//! and a style-modulated convolutional generator.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::datagen::{Observation, MAX_OBSERVATIONS};
use crate::error::{HelioError, Result};
use crate::geometry::Vec3;
use crate::nurbs::{HeliostatSurface, GRID};
use crate::optics::TargetGeometry;
use crate::rng::SimRng;

pub const POSITION_FEATURES: usize = 12;
pub const MAP_SIDE: usize = 2 * GRID;
const CONST_SIDE: usize = 4;
const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub mlp_dim: usize,
    pub encoder_depth: usize,
    pub encoder_heads: usize,
    pub fusion_depth: usize,
    pub fusion_heads: usize,
    pub latent_blocks: usize,
    pub latent_dim: usize,
    /// Generator channels per style block.
    pub gen_channels: Vec<usize>,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 64,
            patch_size: 16,
            embed_dim: 64,
            mlp_dim: 128,
            encoder_depth: 4,
            encoder_heads: 4,
            fusion_depth: 4,
            fusion_heads: 4,
            latent_blocks: 3,
            latent_dim: 32,
            gen_channels: vec![32, 32, 16],
            dropout: 0.2,
        }
    }
}

impl ModelConfig {
    /// Widths matching the published architecture, for parameter counting.
    pub fn full_scale() -> Self {
        ModelConfig {
            embed_dim: 128,
            mlp_dim: 256,
            encoder_depth: 8,
            fusion_depth: 8,
            gen_channels: vec![256, 256, 128],
            ..Default::default()
        }
    }

    /// Smallest sensible network, used by gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            image_size: 32,
            patch_size: 16,
            embed_dim: 8,
            mlp_dim: 16,
            encoder_depth: 1,
            encoder_heads: 2,
            fusion_depth: 1,
            fusion_heads: 2,
            latent_blocks: 3,
            latent_dim: 8,
            gen_channels: vec![4, 4, 4],
            dropout: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HelioError::invalid(m.to_string()));
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return bad("image_size must be a positive multiple of patch_size");
        }
        if self.embed_dim == 0 || self.mlp_dim == 0 || self.latent_dim == 0 {
            return bad("widths must be positive");
        }
        if self.encoder_heads == 0 || self.embed_dim % self.encoder_heads != 0 {
            return bad("encoder_heads must divide embed_dim");
        }
        if self.fusion_heads == 0 || self.embed_dim % self.fusion_heads != 0 {
            return bad("fusion_heads must divide embed_dim");
        }
        // the generator doubles a 4x4 constant once per block after the first
        if self.latent_blocks == 0 || CONST_SIDE << (self.latent_blocks - 1) != MAP_SIDE {
            return bad("latent_blocks must grow the 4x4 constant to the 16x16 control map (3 blocks)");
        }
        if self.gen_channels.len() != self.latent_blocks || self.gen_channels.contains(&0) {
            return bad("gen_channels needs one positive entry per latent block");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn patches(&self) -> usize {
        (self.image_size / self.patch_size).pow(2)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size
    }
}

#[derive(Debug, Clone, Copy)]
struct Lin {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    ln1: Norm,
    qkv: Lin,
    proj: Lin,
    ln2: Norm,
    fc1: Lin,
    fc2: Lin,
}

#[derive(Debug, Clone, Copy)]
struct StyleConv {
    style: Lin,
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    patch1: Lin,
    patch2: Lin,
    cls: usize,
    pos: usize,
    encoder: Vec<Block>,
    encoder_ln: Norm,
    pos_mlp1: Lin,
    pos_mlp2: Lin,
    fusion: Vec<Block>,
    fusion_ln: Norm,
    to_latent: Lin,
    constant: usize,
    convs: Vec<StyleConv>,
    to_map: usize,
    gain: usize,
    map_bias: usize,
}

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy)]
enum Init {
    /// Normal with standard deviation `sqrt(gain / fan_in)`.
    Fan(f64),
    Normal(f64),
    Const(f64),
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    inits: Vec<Init>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.names.push(name);
        self.shapes.push((rows, cols));
        self.inits.push(init);
        self.names.len() - 1
    }

    fn lin(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64) -> Lin {
        Lin {
            w: self.add(format!("{name}.w"), fan_in, fan_out, Init::Fan(gain)),
            b: self.add(format!("{name}.b"), 1, fan_out, Init::Const(0.0)),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.add(format!("{name}.g"), 1, d, Init::Const(1.0)),
            b: self.add(format!("{name}.b"), 1, d, Init::Const(0.0)),
        }
    }

    fn block(&mut self, name: &str, d: usize, mlp: usize) -> Block {
        Block {
            ln1: self.norm(&format!("{name}.ln1"), d),
            qkv: self.lin(&format!("{name}.qkv"), d, 3 * d, 1.0),
            proj: self.lin(&format!("{name}.proj"), d, d, 1.0),
            ln2: self.norm(&format!("{name}.ln2"), d),
            fc1: self.lin(&format!("{name}.fc1"), d, mlp, 2.0),
            fc2: self.lin(&format!("{name}.fc2"), mlp, d, 1.0),
        }
    }
}

fn layout(cfg: &ModelConfig) -> (Layout, Builder) {
    let mut b = Builder {
        names: Vec::new(),
        shapes: Vec::new(),
        inits: Vec::new(),
    };
    let d = cfg.embed_dim;
    let patch1 = b.lin("patch.fc1", cfg.patch_dim(), d, 2.0);
    let patch2 = b.lin("patch.fc2", d, d, 1.0);
    let cls = b.add("cls".into(), 1, d, Init::Normal(0.02));
    let pos = b.add("pos".into(), cfg.patches() + 1, d, Init::Normal(0.02));
    let encoder = (0..cfg.encoder_depth).map(|i| b.block(&format!("enc{i}"), d, cfg.mlp_dim)).collect();
    let encoder_ln = b.norm("enc.ln", d);
    let pos_mlp1 = b.lin("posmlp.fc1", POSITION_FEATURES, d, 2.0);
    let pos_mlp2 = b.lin("posmlp.fc2", d, d, 1.0);
    let fusion = (0..cfg.fusion_depth).map(|i| b.block(&format!("fuse{i}"), d, cfg.mlp_dim)).collect();
    let fusion_ln = b.norm("fuse.ln", d);
    let to_latent = b.lin("latent", d, cfg.latent_blocks * cfg.latent_dim, 1.0);
    let c0 = cfg.gen_channels[0];
    let constant = b.add("gen.const".into(), c0, CONST_SIDE * CONST_SIDE, Init::Normal(1.0));
    let mut convs = Vec::new();
    let mut c_in = c0;
    for (k, &c_out) in cfg.gen_channels.iter().enumerate() {
        let style = Lin {
            w: b.add(format!("gen{k}.style.w"), cfg.latent_dim, c_in, Init::Fan(1.0)),
            b: b.add(format!("gen{k}.style.b"), 1, c_in, Init::Const(1.0)),
        };
        let weight = b.add(format!("gen{k}.conv.w"), c_out, 9 * c_in, Init::Normal(1.0));
        let bias = b.add(format!("gen{k}.conv.b"), c_out, 1, Init::Const(0.0));
        convs.push(StyleConv { style, weight, bias });
        c_in = c_out;
    }
    let to_map = b.add("gen.out.w".into(), 1, c_in, Init::Fan(1.0));
    let gain = b.add("gen.out.gain".into(), 1, 1, Init::Const(1.0));
    let map_bias = b.add("gen.out.bias".into(), 1, MAP_SIDE * MAP_SIDE, Init::Const(0.0));
    let l = Layout {
        patch1,
        patch2,
        cls,
        pos,
        encoder,
        encoder_ln,
        pos_mlp1,
        pos_mlp2,
        fusion,
        fusion_ln,
        to_latent,
        constant,
        convs,
        to_map,
        gain,
        map_bias,
    };
    (l, b)
}

/// Network inputs derived from one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsInput {
    /// `patches x patch_dim`, patches in row-major image order.
    pub patches: Tensor,
    pub features: [f64; POSITION_FEATURES],
}

/// Position features: sun direction, heliostat position / 100 m, aim offset
/// from the target centre in m, target centre / 50 m.
pub fn position_features(sun: Vec3, heliostat_pos: Vec3, aim: Vec3, target_center: Vec3) -> [f64; POSITION_FEATURES] {
    let h = heliostat_pos * 0.01;
    let a = aim - target_center;
    let c = target_center * 0.02;
    [sun.x, sun.y, sun.z, h.x, h.y, h.z, a.x, a.y, a.z, c.x, c.y, c.z]
}

fn target_center(g: &TargetGeometry) -> Vec3 {
    match g {
        TargetGeometry::Plane(p) => p.center,
        TargetGeometry::Receiver(r) => r.apex(),
    }
}

/// `(patch, pixel)` matrix of a `size x size` row-major grid.
pub fn patchify(data: &[f64], size: usize, patch: usize) -> Tensor {
    let per_side = size / patch;
    let mut t = Tensor::zeros(per_side * per_side, patch * patch);
    for pr in 0..per_side {
        for pc in 0..per_side {
            let row = t.row_mut(pr * per_side + pc);
            for y in 0..patch {
                let src = (pr * patch + y) * size + pc * patch;
                row[y * patch..(y + 1) * patch].copy_from_slice(&data[src..src + patch]);
            }
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentW(pub Vec<f64>);

/// Dropout masks come from this rng when training; `None` is eval mode.
pub type DropoutRng<'a> = Option<&'a mut SimRng>;

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    layout: Layout,
    names: Vec<String>,
    pub params: Vec<Tensor>,
}

impl Model {
    pub fn new(config: ModelConfig, rng: &mut SimRng) -> Result<Self> {
        config.validate()?;
        let (layout, b) = layout(&config);
        let params = b
            .shapes
            .iter()
            .zip(&b.inits)
            .map(|(&(r, c), init)| {
                let data = match *init {
                    Init::Const(v) => vec![v; r * c],
                    Init::Normal(s) => (0..r * c).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect(),
                    Init::Fan(g) => {
                        let s = (g / r as f64).sqrt();
                        (0..r * c).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
                    }
                };
                Tensor { rows: r, cols: c, data }
            })
            .collect();
        Ok(Model {
            config,
            layout,
            names: b.names,
            params,
        })
    }

    /// Rebuilds a model from named tensors, checking names and shapes.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let (layout, b) = layout(&config);
        if named.len() != b.names.len() {
            return Err(HelioError::Format(format!(
                "checkpoint has {} tensors, config expects {}",
                named.len(),
                b.names.len()
            )));
        }
        let mut params = Vec::with_capacity(named.len());
        for ((name, t), (want, shape)) in named.into_iter().zip(b.names.iter().zip(&b.shapes)) {
            if &name != want || t.shape() != *shape {
                return Err(HelioError::Format(format!(
                    "tensor {name} {:?} does not match expected {want} {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(HelioError::Format(format!("tensor {name} holds non-finite values")));
            }
            params.push(t);
        }
        Ok(Model {
            config,
            layout,
            names: b.names,
            params,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|t| t.data.len()).sum()
    }

    pub fn prepare(&self, obs: &Observation, heliostat_pos: Vec3) -> Result<ObsInput> {
        let g = obs.flux.normalized();
        let s = self.config.image_size;
        if g.width() != s || g.height() != s {
            return Err(HelioError::Shape(format!(
                "flux image is {}x{}, model expects {s}x{s}",
                g.width(),
                g.height()
            )));
        }
        Ok(ObsInput {
            patches: patchify(g.data(), s, self.config.patch_size),
            features: position_features(
                obs.sun.direction,
                heliostat_pos,
                obs.aim_point,
                target_center(obs.flux.geometry()),
            ),
        })
    }

    fn dropout(&self, g: &mut Graph, x: Var, rng: &mut DropoutRng) -> Var {
        let p = self.config.dropout;
        match rng {
            Some(r) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let n = g.value(x).data.len();
                let mask = (0..n).map(|_| if r.random::<f64>() < p { 0.0 } else { keep }).collect();
                g.mask(x, mask)
            }
            _ => x,
        }
    }

    fn lin(&self, g: &mut Graph, x: Var, l: Lin) -> Var {
        let (w, b) = (g.param(l.w), g.param(l.b));
        g.linear(x, w, b)
    }

    fn norm(&self, g: &mut Graph, x: Var, n: Norm) -> Var {
        let (gg, bb) = (g.param(n.g), g.param(n.b));
        g.layer_norm(x, gg, bb)
    }

    /// Pre-norm transformer block over sequences of `seq_len` rows.
    fn block(&self, g: &mut Graph, x: Var, b: &Block, seq_len: usize, heads: usize, rng: &mut DropoutRng) -> Var {
        let h = self.norm(g, x, b.ln1);
        let qkv = self.lin(g, h, b.qkv);
        let a = g.attention(qkv, seq_len, heads);
        let a = self.lin(g, a, b.proj);
        let a = self.dropout(g, a, rng);
        let x = g.add(x, a);
        let h = self.norm(g, x, b.ln2);
        let h = self.lin(g, h, b.fc1);
        let h = g.gelu(h);
        let h = self.lin(g, h, b.fc2);
        let h = self.dropout(g, h, rng);
        g.add(x, h)
    }

    /// Patch tokens with class token and positional embedding, `(P + 1) x D`
    /// per observation, stacked.
    pub fn embed(&self, g: &mut Graph, inputs: &[ObsInput]) -> Result<Var> {
        let np = self.config.patches();
        let mut stacked = Vec::with_capacity(inputs.len() * np * self.config.patch_dim());
        for inp in inputs {
            if inp.patches.shape() != (np, self.config.patch_dim()) {
                return Err(HelioError::Shape("observation patches do not match the model".into()));
            }
            stacked.extend_from_slice(&inp.patches.data);
        }
        let x = g.input(Tensor::from_vec(inputs.len() * np, self.config.patch_dim(), stacked)?);
        let e = self.lin(g, x, self.layout.patch1);
        let e = g.gelu(e);
        let e = self.lin(g, e, self.layout.patch2);
        let cls = g.param(self.layout.cls);
        let mut parts = Vec::with_capacity(2 * inputs.len());
        for k in 0..inputs.len() {
            parts.push(cls);
            parts.push(g.select_rows(e, (k * np..(k + 1) * np).collect()));
        }
        let tokens = g.concat_rows(parts);
        let pos = g.param(self.layout.pos);
        Ok(g.add_tiled(tokens, pos))
    }

    /// Latent `w+` for 1..=8 observations, as a `1 x (blocks * latent_dim)` node.
    pub fn encode(&self, g: &mut Graph, inputs: &[ObsInput], mut rng: DropoutRng) -> Result<Var> {
        if inputs.is_empty() || inputs.len() > MAX_OBSERVATIONS {
            return Err(HelioError::invalid(format!(
                "encoder takes 1..={MAX_OBSERVATIONS} observations, got {}",
                inputs.len()
            )));
        }
        let seq = self.config.patches() + 1;
        let mut x = self.embed(g, inputs)?;
        x = self.dropout(g, x, &mut rng);
        for b in &self.layout.encoder {
            x = self.block(g, x, b, seq, self.config.encoder_heads, &mut rng);
        }
        x = self.norm(g, x, self.layout.encoder_ln);
        let cls_out = g.select_rows(x, (0..inputs.len()).map(|k| k * seq).collect());

        let feats: Vec<f64> = inputs.iter().flat_map(|i| i.features).collect();
        let f = g.input(Tensor::from_vec(inputs.len(), POSITION_FEATURES, feats)?);
        let f = self.lin(g, f, self.layout.pos_mlp1);
        let f = g.gelu(f);
        let f = self.lin(g, f, self.layout.pos_mlp2);
        let mut z = g.add(cls_out, f);
        for b in &self.layout.fusion {
            z = self.block(g, z, b, inputs.len(), self.config.fusion_heads, &mut rng);
        }
        z = self.norm(g, z, self.layout.fusion_ln);
        let pooled = g.mean_rows(z);
        Ok(self.lin(g, pooled, self.layout.to_latent))
    }

    /// 16x16 control map (`1 x 256`, row-major) from a `w+` node.
    pub fn generate(&self, g: &mut Graph, w: Var) -> Var {
        let ld = self.config.latent_dim;
        let mut x = g.param(self.layout.constant);
        let mut side = CONST_SIDE;
        for (k, conv) in self.layout.convs.iter().enumerate() {
            if k > 0 {
                x = g.upsample2x(x, side, side);
                side *= 2;
            }
            let wk = g.slice_cols(w, k * ld, (k + 1) * ld);
            let style = self.lin(g, wk, conv.style);
            let weight = g.param(conv.weight);
            let kernel = g.mod_demod(weight, style);
            let cols = g.im2col3(x, side, side);
            let y = g.matmul(kernel, cols);
            let bias = g.param(conv.bias);
            let y = g.add_col_bias(y, bias);
            x = g.leaky_relu(y, LEAKY_SLOPE);
        }
        let out_w = g.param(self.layout.to_map);
        let m = g.matmul(out_w, x);
        let gain = g.param(self.layout.gain);
        let m = g.mul_scalar(m, gain);
        let bias = g.param(self.layout.map_bias);
        g.add(m, bias)
    }

    /// Full forward pass to the control map node.
    pub fn forward(&self, g: &mut Graph, inputs: &[ObsInput], rng: DropoutRng) -> Result<Var> {
        let w = self.encode(g, inputs, rng)?;
        Ok(self.generate(g, w))
    }

    pub fn latent(&self, inputs: &[ObsInput]) -> Result<LatentW> {
        let mut g = Graph::new(&self.params);
        let w = self.encode(&mut g, inputs, None)?;
        Ok(LatentW(g.value(w).data.clone()))
    }

    pub fn predict_inputs(&self, inputs: &[ObsInput]) -> Result<HeliostatSurface> {
        let mut g = Graph::new(&self.params);
        let m = self.forward(&mut g, inputs, None)?;
        let mut s = HeliostatSurface::from_map(&g.value(m).data)?;
        s.facets.iter_mut().for_each(|f| f.clip());
        Ok(s)
    }

    /// Eval-mode surface prediction.
    pub fn predict_surface(&self, observations: &[Observation], heliostat_pos: Vec3) -> Result<HeliostatSurface> {
        let inputs = observations
            .iter()
            .map(|o| self.prepare(o, heliostat_pos))
            .collect::<Result<Vec<_>>>()?;
        self.predict_inputs(&inputs)
    }

    /// Loss and parameter gradients for one sample.
    pub fn loss_and_grad(&self, inputs: &[ObsInput], truth: &HeliostatSurface, rng: DropoutRng) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new(&self.params);
        let m = self.forward(&mut g, inputs, rng)?;
        let loss = g.l1_loss(m, truth.to_map());
        let value = g.value(loss).data[0];
        Ok((value, g.backward(loss)))
    }

    pub fn loss(&self, inputs: &[ObsInput], truth: &HeliostatSurface) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let m = self.forward(&mut g, inputs, None)?;
        let loss = g.l1_loss(m, truth.to_map());
        Ok(g.value(loss).data[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, domain};

    fn model(cfg: ModelConfig, seed: u64) -> Model {
        Model::new(cfg, &mut rng::stream(seed, domain::INIT, 0)).unwrap()
    }

    fn input(cfg: &ModelConfig, k: usize) -> ObsInput {
        let s = cfg.image_size;
        let data: Vec<f64> = (0..s * s)
            .map(|i| {
                let (c, r) = ((i % s) as f64, (i / s) as f64);
                (-((c - 10.0 - k as f64).powi(2) + (r - 14.0 + k as f64).powi(2)) / 30.0).exp()
            })
            .collect();
        ObsInput {
            patches: patchify(&data, s, cfg.patch_size),
            features: position_features(
                Vec3::new(0.1 * k as f64, -0.6, 0.79).normalized(),
                Vec3::new(20.0, 120.0, 2.0),
                Vec3::new(0.3, 0.0, -0.2 * k as f64),
                Vec3::new(0.0, 0.0, 36.0),
            ),
        }
    }

    #[test]
    fn config_validation() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
        let mut c = ModelConfig::default();
        c.fusion_heads = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.image_size = 60;
        assert!(c.validate().is_err());
    }

    #[test]
    fn patchify_layout() {
        let data: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let p = patchify(&data, 4, 2);
        assert_eq!(p.row(0), &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(p.row(3), &[10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn zero_image_tokens_equal_positional_embeddings() {
        let cfg = ModelConfig::tiny();
        let m = model(cfg.clone(), 1);
        let inp = ObsInput {
            patches: Tensor::zeros(cfg.patches(), cfg.patch_dim()),
            features: [0.0; POSITION_FEATURES],
        };
        let mut g = Graph::new(&m.params);
        let t = m.embed(&mut g, &[inp]).unwrap();
        let tokens = g.value(t);
        assert_eq!(tokens.shape(), (cfg.patches() + 1, cfg.embed_dim));
        let pos = &m.params[m.layout.pos];
        for r in 1..tokens.rows {
            assert_eq!(tokens.row(r), pos.row(r));
        }
    }

    #[test]
    fn shapes_and_permutation_invariance() {
        let cfg = ModelConfig::tiny();
        let m = model(cfg.clone(), 2);
        let inputs: Vec<ObsInput> = (0..4).map(|k| input(&cfg, k)).collect();
        let w = m.latent(&inputs).unwrap();
        assert_eq!(w.0.len(), cfg.latent_blocks * cfg.latent_dim);
        let mut perm = inputs.clone();
        perm.swap(0, 3);
        perm.swap(1, 2);
        let wp = m.latent(&perm).unwrap();
        assert!(w.0.iter().zip(&wp.0).all(|(a, b)| (a - b).abs() < 1e-9));
        for n in 1..=MAX_OBSERVATIONS {
            let obs: Vec<ObsInput> = (0..n).map(|k| input(&cfg, k % 3)).collect();
            assert!(m.latent(&obs).unwrap().0.iter().all(|v| v.is_finite()));
        }
        assert!(m.latent(&[]).is_err());
    }

    #[test]
    fn eval_forward_is_deterministic_and_valid() {
        let cfg = ModelConfig::tiny();
        let m = model(cfg.clone(), 3);
        let inputs = vec![input(&cfg, 0), input(&cfg, 1)];
        let a = m.predict_inputs(&inputs).unwrap();
        assert_eq!(a, m.predict_inputs(&inputs).unwrap());
        a.validate().unwrap();
        let b = m.predict_inputs(&[input(&cfg, 2)]).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn forward_finite_on_extreme_images() {
        let cfg = ModelConfig::tiny();
        let m = model(cfg.clone(), 4);
        for v in [0.0, 1.0] {
            let inp = ObsInput {
                patches: Tensor::filled(cfg.patches(), cfg.patch_dim(), v),
                features: [v; POSITION_FEATURES],
            };
            let s = m.predict_inputs(&[inp]).unwrap();
            assert!(s.flatten().iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn full_scale_parameter_count() {
        let m = model(ModelConfig::full_scale(), 0);
        let n = m.parameter_count();
        assert!(n > 3_000_000 && n < 5_000_000, "{n}");
    }
}
