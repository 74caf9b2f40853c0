//! The denoising network: per-category input MLPs, the attention scene
//! encoder and the recurrent plan decoder, wrapped in the preconditioned
//! denoiser `D = c_skip x + c_out F(c_in x; scene, c_noise)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::autodiff::{Graph, Mat, Node, ParamId, ParamStore};
use super::normalize::PlanNormalizer;
use super::sampler::Denoiser;
use super::scene::{EdgeSet, SceneConfig, SceneGraph, AGENT_FEATURES, EDGE_FEATURES, MAP_FEATURES, POS_FEATURES};
use super::schedule::{NoiseSchedule, Precond};
use super::PlannerError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding width `N_h`.
    pub hidden: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Repetitions of the agent-map / agent-agent attention pair.
    pub encoder_layers: usize,
    /// Decoder refinement passes (weights shared across passes).
    pub recurrent_steps: usize,
    pub dropout: f64,
    pub future_steps: usize,
    pub freq_bands: usize,
    pub edge_hidden: usize,
    pub ffn_mult: usize,
    /// Seconds per plan step.
    pub tick: f64,
    pub scene: SceneConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            heads: 4,
            head_dim: 16,
            encoder_layers: 1,
            recurrent_steps: 2,
            dropout: 0.1,
            future_steps: 80,
            freq_bands: 64,
            edge_hidden: 32,
            ffn_mult: 2,
            tick: 0.1,
            scene: SceneConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Full-size configuration (embedding 128, 8 heads of 64, 2 layers).
    pub fn full_scale() -> Self {
        ModelConfig {
            hidden: 128,
            heads: 8,
            head_dim: 64,
            encoder_layers: 2,
            edge_hidden: 128,
            ..ModelConfig::default()
        }
    }

    pub fn attn_width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn plan_width(&self) -> usize {
        2 * self.future_steps
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        self.scene.validate()?;
        let ok = self.hidden > 0
            && self.heads > 0
            && self.head_dim > 0
            && self.future_steps > 0
            && self.freq_bands > 0
            && self.edge_hidden > 0
            && self.ffn_mult > 0
            && self.tick > 0.0
            && (0.0..1.0).contains(&self.dropout);
        if ok {
            Ok(())
        } else {
            Err(PlannerError::Config(format!("invalid model configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn new(ps: &mut ParamStore, name: &str, i: usize, o: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            w: ps.add_weight(format!("{name}.w"), i, o, rng),
            b: ps.add(format!("{name}.b"), Mat::zeros(1, o)),
        }
    }

    fn fwd(&self, g: &mut Graph, x: Node) -> Node {
        let w = g.param(self.w);
        let m = g.matmul(x, w);
        let b = g.param(self.b);
        g.add_row(m, b)
    }
}

#[derive(Debug, Clone, Copy)]
struct Mlp {
    a: Linear,
    b: Linear,
}

impl Mlp {
    fn new(ps: &mut ParamStore, name: &str, i: usize, h: usize, o: usize, rng: &mut ChaCha8Rng) -> Self {
        Mlp {
            a: Linear::new(ps, &format!("{name}.0"), i, h, rng),
            b: Linear::new(ps, &format!("{name}.1"), h, o, rng),
        }
    }

    fn fwd(&self, g: &mut Graph, x: Node) -> Node {
        let h = self.a.fwd(g, x);
        let h = g.relu(h);
        self.b.fwd(g, h)
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

impl Norm {
    fn new(ps: &mut ParamStore, name: &str, d: usize) -> Self {
        Norm {
            g: ps.add(format!("{name}.g"), Mat::filled(1, d, 1.0)),
            b: ps.add(format!("{name}.b"), Mat::zeros(1, d)),
        }
    }

    fn fwd(&self, g: &mut Graph, x: Node) -> Node {
        let (gm, b) = (g.param(self.g), g.param(self.b));
        g.layer_norm(x, gm, b)
    }
}

/// Per-run options: dropout needs a random source.
pub(crate) struct Mode<'r> {
    dropout: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl Mode<'_> {
    fn eval() -> Mode<'static> {
        Mode { dropout: 0.0, rng: None }
    }

    fn drop(&mut self, g: &mut Graph, x: Node) -> Node {
        match self.rng.as_deref_mut() {
            Some(rng) if self.dropout > 0.0 => g.dropout(x, self.dropout, rng),
            _ => x,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Kv {
    k: Node,
    v: Node,
}

/// Attention over edges followed by a feed-forward layer, both residual
/// with post-normalization. Edge features always enter the values and, when
/// `ek` is present, the keys too.
#[derive(Debug, Clone, Copy)]
struct AttnBlock {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ek: Option<Mlp>,
    ev: Mlp,
    ln1: Norm,
    ffn: Mlp,
    ln2: Norm,
}

impl AttnBlock {
    fn new(ps: &mut ParamStore, name: &str, cfg: &ModelConfig, edge_dim: usize, edge_keys: bool, rng: &mut ChaCha8Rng) -> Self {
        let (d, w, eh) = (cfg.hidden, cfg.attn_width(), cfg.edge_hidden);
        AttnBlock {
            q: Linear::new(ps, &format!("{name}.q"), d, w, rng),
            k: Linear::new(ps, &format!("{name}.k"), d, w, rng),
            v: Linear::new(ps, &format!("{name}.v"), d, w, rng),
            o: Linear::new(ps, &format!("{name}.o"), w, d, rng),
            ek: edge_keys.then(|| Mlp::new(ps, &format!("{name}.ek"), edge_dim, eh, w, rng)),
            ev: Mlp::new(ps, &format!("{name}.ev"), edge_dim, eh, w, rng),
            ln1: Norm::new(ps, &format!("{name}.ln1"), d),
            ffn: Mlp::new(ps, &format!("{name}.ffn"), d, d * cfg.ffn_mult, d, rng),
            ln2: Norm::new(ps, &format!("{name}.ln2"), d),
        }
    }

    fn kv(&self, g: &mut Graph, src: Node, edges: &EdgeSet, ef: Node) -> Kv {
        let ks = self.k.fwd(g, src);
        let mut k = g.gather(ks, edges.src.clone());
        if let Some(ek) = &self.ek {
            let e = ek.fwd(g, ef);
            k = g.add(k, e);
        }
        let vs = self.v.fwd(g, src);
        let v = g.gather(vs, edges.src.clone());
        let e = self.ev.fwd(g, ef);
        Kv { k, v: g.add(v, e) }
    }

    fn attend(&self, g: &mut Graph, x: Node, kv: Kv, edges: &EdgeSet, heads: usize, mode: &mut Mode) -> Node {
        let q = self.q.fwd(g, x);
        let a = g.attention(q, kv.k, kv.v, edges.dst.clone(), heads);
        let a = self.o.fwd(g, a);
        let a = mode.drop(g, a);
        let h = g.add(x, a);
        let h = self.ln1.fwd(g, h);
        let f = self.ffn.fwd(g, h);
        let f = mode.drop(g, f);
        let o = g.add(h, f);
        self.ln2.fwd(g, o)
    }
}

#[derive(Debug, Clone)]
struct Layers {
    agent_in: Mlp,
    map_in: Mlp,
    m2m: AttnBlock,
    temporal: AttnBlock,
    pl2a: Vec<AttnBlock>,
    a2a: Vec<AttnBlock>,
    plan_in: Mlp,
    noise_in: Mlp,
    dec_map: AttnBlock,
    dec_agents: AttnBlock,
    dec_hist: AttnBlock,
    dec_self: AttnBlock,
    out: Mlp,
    /// Per-element, noise-dependent gain on the plan input added to `out`.
    /// Without it the network has to route every plan component through
    /// `hidden` units to cancel the noise at small sigma.
    skip_gate: Linear,
}

impl Layers {
    fn build(cfg: &ModelConfig, ps: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.hidden;
        Layers {
            agent_in: Mlp::new(ps, "enc.agent_in", AGENT_FEATURES, d, d, rng),
            map_in: Mlp::new(ps, "enc.map_in", MAP_FEATURES, d, d, rng),
            m2m: AttnBlock::new(ps, "enc.m2m", cfg, EDGE_FEATURES, false, rng),
            temporal: AttnBlock::new(ps, "enc.temporal", cfg, POS_FEATURES, false, rng),
            pl2a: (0..cfg.encoder_layers)
                .map(|l| AttnBlock::new(ps, &format!("enc.pl2a{l}"), cfg, EDGE_FEATURES, false, rng))
                .collect(),
            a2a: (0..cfg.encoder_layers)
                .map(|l| AttnBlock::new(ps, &format!("enc.a2a{l}"), cfg, EDGE_FEATURES, false, rng))
                .collect(),
            plan_in: Mlp::new(ps, "dec.plan_in", cfg.plan_width(), d, d, rng),
            noise_in: Mlp::new(ps, "dec.noise_in", 2 * cfg.freq_bands, d, d, rng),
            dec_map: AttnBlock::new(ps, "dec.map", cfg, EDGE_FEATURES, true, rng),
            dec_agents: AttnBlock::new(ps, "dec.agents", cfg, EDGE_FEATURES, true, rng),
            dec_hist: AttnBlock::new(ps, "dec.hist", cfg, POS_FEATURES, true, rng),
            dec_self: AttnBlock::new(ps, "dec.self", cfg, EDGE_FEATURES, true, rng),
            out: Mlp::new(ps, "dec.out", d, d, cfg.plan_width(), rng),
            skip_gate: Linear {
                w: ps.add("dec.skip_gate.w", Mat::zeros(2 * cfg.freq_bands, cfg.plan_width())),
                b: ps.add("dec.skip_gate.b", Mat::zeros(1, cfg.plan_width())),
            },
        }
    }
}

/// Encoder outputs as graph nodes.
#[derive(Debug, Clone, Copy)]
struct Encoded {
    map: Node,
    agents: Node,
    history: Node,
}

/// Cached decoder inputs that do not depend on the noisy plan.
#[derive(Debug, Clone, Copy)]
struct DecoderCache {
    map: Kv,
    agents: Kv,
    history: Kv,
    self_edges: Node,
}

/// Map embedding `[M, N_h]` and agent embedding `[A, T_h, N_h]` (stored
/// as `[A * T_h, N_h]`).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneEmbedding {
    pub map: Mat,
    pub agents: Mat,
    pub history_steps: usize,
}

impl SceneEmbedding {
    pub fn agent_step(&self, agent: usize, step: usize) -> &[f64] {
        self.agents.row(agent * self.history_steps + step)
    }
}

/// Fourier features of the noise conditioning scalar.
pub fn fourier_features(c_noise: f64, bands: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * bands);
    for k in 0..bands {
        let w = if bands == 1 { 1.0 } else { 64f64.powf(k as f64 / (bands - 1) as f64) };
        out.push((w * c_noise).sin());
        out.push((w * c_noise).cos());
    }
    out
}

/// Trainable planner: configuration, parameters and plan statistics.
#[derive(Debug, Clone)]
pub struct PlannerModel {
    pub config: ModelConfig,
    pub schedule: NoiseSchedule,
    pub normalizer: PlanNormalizer,
    pub params: ParamStore,
    layers: Layers,
}

impl PlannerModel {
    pub fn new(config: ModelConfig, schedule: NoiseSchedule, normalizer: PlanNormalizer, seed: u64) -> Result<Self, PlannerError> {
        config.validate()?;
        schedule.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let layers = Layers::build(&config, &mut params, &mut rng);
        Ok(PlannerModel {
            config,
            schedule,
            normalizer,
            params,
            layers,
        })
    }

    fn check_scene(&self, scene: &SceneGraph) -> Result<(), PlannerError> {
        if scene.history_steps != self.config.scene.history_steps {
            return Err(PlannerError::Config(format!(
                "scene has {} history steps, model expects {}",
                scene.history_steps, self.config.scene.history_steps
            )));
        }
        if scene.agent_count() == 0 {
            return Err(PlannerError::NoAgents);
        }
        Ok(())
    }

    fn encode(&self, g: &mut Graph, scene: &SceneGraph, mode: &mut Mode) -> Encoded {
        let l = &self.layers;
        let heads = self.config.heads;
        let th = scene.history_steps;
        let mf = g.input(scene.map_feats.clone());
        let mut map = l.map_in.fwd(g, mf);
        let ef = g.input(scene.m2m.feats.clone());
        let kv = l.m2m.kv(g, map, &scene.m2m, ef);
        map = l.m2m.attend(g, map, kv, &scene.m2m, heads, mode);

        let af = g.input(scene.agent_feats.clone());
        let hist = l.agent_in.fwd(g, af);
        let now: std::sync::Arc<Vec<usize>> = std::sync::Arc::new((0..scene.agent_count()).map(|a| a * th + th - 1).collect());
        let cur = g.gather(hist, now.clone());
        let pf = g.input(scene.temporal.feats.clone());
        let kv = l.temporal.kv(g, hist, &scene.temporal, pf);
        let mut agents = l.temporal.attend(g, cur, kv, &scene.temporal, heads, mode);
        for layer in 0..self.config.encoder_layers {
            let ef = g.input(scene.pl2a.feats.clone());
            let kv = l.pl2a[layer].kv(g, map, &scene.pl2a, ef);
            agents = l.pl2a[layer].attend(g, agents, kv, &scene.pl2a, heads, mode);
            let ef = g.input(scene.a2a.feats.clone());
            let kv = l.a2a[layer].kv(g, agents, &scene.a2a, ef);
            agents = l.a2a[layer].attend(g, agents, kv, &scene.a2a, heads, mode);
        }
        let history = g.set_rows(hist, now, agents);
        Encoded { map, agents, history }
    }

    fn decoder_cache(&self, g: &mut Graph, scene: &SceneGraph, enc: Encoded) -> DecoderCache {
        let l = &self.layers;
        let ef = g.input(scene.pl2m.feats.clone());
        let map = l.dec_map.kv(g, enc.map, &scene.pl2m, ef);
        let ef = g.input(scene.a2m.feats.clone());
        let agents = l.dec_agents.kv(g, enc.agents, &scene.a2m, ef);
        let pf = g.input(scene.temporal.feats.clone());
        let history = l.dec_hist.kv(g, enc.history, &scene.temporal, pf);
        let self_edges = g.input(scene.plan_self.feats.clone());
        DecoderCache {
            map,
            agents,
            history,
            self_edges,
        }
    }

    /// Network output `F` for scaled plan input `x_in` and per-row noise
    /// features.
    fn decode(&self, g: &mut Graph, scene: &SceneGraph, cache: &DecoderCache, x_in: Node, noise: Node, mode: &mut Mode) -> Node {
        let l = &self.layers;
        let heads = self.config.heads;
        let p = l.plan_in.fwd(g, x_in);
        let n = l.noise_in.fwd(g, noise);
        let mut q = g.add(p, n);
        for _ in 0..self.config.recurrent_steps {
            q = l.dec_map.attend(g, q, cache.map, &scene.pl2m, heads, mode);
            q = l.dec_agents.attend(g, q, cache.agents, &scene.a2m, heads, mode);
            q = l.dec_hist.attend(g, q, cache.history, &scene.temporal, heads, mode);
            let kv = l.dec_self.kv(g, q, &scene.plan_self, cache.self_edges);
            q = l.dec_self.attend(g, q, kv, &scene.plan_self, heads, mode);
        }
        let out = l.out.fwd(g, q);
        let gate = l.skip_gate.fwd(g, noise);
        let skip = g.mul(gate, x_in);
        g.add(out, skip)
    }

    fn noise_input(&self, sigmas: &[f64]) -> Mat {
        let bands = self.config.freq_bands;
        let mut m = Mat::zeros(sigmas.len(), 2 * bands);
        for (i, s) in sigmas.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&fourier_features(Precond::new(*s, self.schedule.sigma_data).c_noise, bands));
        }
        m
    }

    /// Scene embeddings without dropout.
    pub fn encode_scene(&self, scene: &SceneGraph) -> Result<SceneEmbedding, PlannerError> {
        self.check_scene(scene)?;
        let mut g = Graph::new(&self.params);
        let enc = self.encode(&mut g, scene, &mut Mode::eval());
        Ok(SceneEmbedding {
            map: g.value(enc.map).clone(),
            agents: g.value(enc.history).clone(),
            history_steps: scene.history_steps,
        })
    }

    /// Denoiser bound to one scene; the encoder runs once here.
    pub fn denoiser<'m>(&'m self, scene: &'m SceneGraph) -> Result<SceneDenoiser<'m>, PlannerError> {
        self.check_scene(scene)?;
        let mut graph = Graph::new(&self.params);
        let enc = self.encode(&mut graph, scene, &mut Mode::eval());
        let cache = self.decoder_cache(&mut graph, scene, enc);
        Ok(SceneDenoiser {
            model: self,
            scene,
            base: graph.len(),
            graph,
            cache,
            evaluations: 0,
        })
    }

    /// Denoising loss `Σ w_i ||D(x0 + σ_i ε) - x0||² / (rows · cols)` over
    /// rows with `mask`, built on `g`. With `edm_weighting` each row is
    /// weighted by `1 / c_out²`, i.e. the loss is taken on `F` directly.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn loss(
        &self,
        g: &mut Graph,
        scene: &SceneGraph,
        x0: &Mat,
        mask: &[bool],
        sigmas: &[f64],
        eps: &Mat,
        edm_weighting: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Node {
        let mut mode = Mode {
            dropout: self.config.dropout,
            rng,
        };
        let enc = self.encode(g, scene, &mut mode);
        let cache = self.decoder_cache(g, scene, enc);
        let (rows, cols) = x0.shape();
        let mut x_in = Mat::zeros(rows, cols);
        let mut target = Mat::zeros(rows, cols);
        let mut weights = vec![0.0; rows];
        for i in 0..rows {
            let pc = Precond::new(sigmas[i], self.schedule.sigma_data);
            for j in 0..cols {
                let noisy = x0.get(i, j) + sigmas[i] * eps.get(i, j);
                x_in.set(i, j, pc.c_in * noisy);
                target.set(i, j, (x0.get(i, j) - pc.c_skip * noisy) / pc.c_out);
            }
            if mask[i] {
                weights[i] = if edm_weighting { 1.0 } else { pc.c_out * pc.c_out };
            }
        }
        let x_in = g.input(x_in);
        let noise = g.input(self.noise_input(sigmas));
        let f = self.decode(g, scene, &cache, x_in, noise, &mut mode);
        let denom = (mask.iter().filter(|m| **m).count().max(1) * cols) as f64;
        g.masked_mse(f, target, weights, denom)
    }

    /// Replaces parameter values by name, checking shapes.
    pub fn load_params(&mut self, named: impl IntoIterator<Item = (String, Mat)>) -> Result<(), PlannerError> {
        let mut seen = 0;
        for (name, m) in named {
            let id = self
                .params
                .find(&name)
                .ok_or_else(|| PlannerError::Checkpoint(format!("unknown parameter {name}")))?;
            if self.params.get(id).shape() != m.shape() {
                return Err(PlannerError::Checkpoint(format!("shape mismatch for {name}")));
            }
            if !m.is_finite() {
                return Err(PlannerError::Checkpoint(format!("non-finite values in {name}")));
            }
            *self.params.get_mut(id) = m;
            seen += 1;
        }
        if seen != self.params.len() {
            return Err(PlannerError::Checkpoint(format!("expected {} parameters, found {seen}", self.params.len())));
        }
        Ok(())
    }
}

/// A [`Denoiser`] for one scene, reusing the encoder and the decoder's
/// cross-attention keys and values across calls.
pub struct SceneDenoiser<'m> {
    model: &'m PlannerModel,
    scene: &'m SceneGraph,
    graph: Graph<'m>,
    base: usize,
    cache: DecoderCache,
    pub evaluations: usize,
}

impl Denoiser for SceneDenoiser<'_> {
    fn denoise(&mut self, x: &Mat, sigma: f64) -> Result<Mat, PlannerError> {
        if !(sigma > 0.0) {
            return Err(PlannerError::Config(format!("noise level must be positive, got {sigma}")));
        }
        if !x.is_finite() {
            return Err(PlannerError::NonFiniteInput);
        }
        let cfg = &self.model.config;
        if x.shape() != (self.scene.agent_count(), cfg.plan_width()) {
            return Err(PlannerError::Config(format!("plan shape {:?} does not match the scene", x.shape())));
        }
        self.evaluations += 1;
        self.graph.truncate(self.base);
        let pc = Precond::new(sigma, self.model.schedule.sigma_data);
        let g = &mut self.graph;
        let x_in = g.input(x.scaled(pc.c_in));
        let noise = g.input(self.model.noise_input(&vec![sigma; x.rows]));
        let f = self.model.decode(g, self.scene, &self.cache, x_in, noise, &mut Mode::eval());
        Ok(x.zip(g.value(f), |a, b| pc.c_skip * a + pc.c_out * b))
    }
}
