use rand::Rng as _;

use avnav_tensor::{Archive, ParamId, ParamStore, Tape, Tensor, Var};

use crate::env::Action;
use crate::error::{Error, Result};
use crate::seed;
use crate::sim::Observation;

/// (sin yaw, cos yaw, sin pitch, cos pitch).
pub const ANGLE_DIM: usize = 4;

/// Floor added before log-compressing spectrogram magnitudes.
const AUDIO_FLOOR: f32 = 1e-3;
const AUDIO_LOG_SCALE: f32 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyConfig {
    pub bins: usize,
    pub frames: usize,
    pub rays: usize,
    pub max_depth: f32,
    /// Output size of the audio classifier (heard categories).
    pub classes: usize,
    pub audio_hidden: usize,
    pub audio_out: usize,
    pub visual_hidden: usize,
    pub visual_out: usize,
    pub hidden: usize,
    pub head_hidden: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            bins: 8,
            frames: 8,
            rays: 16,
            max_depth: 10.0,
            classes: crate::acoustics::NUM_HEARD,
            audio_hidden: 128,
            audio_out: 64,
            visual_hidden: 64,
            visual_out: 32,
            hidden: 128,
            head_hidden: 64,
        }
    }
}

impl PolicyConfig {
    pub fn audio_dim(&self) -> usize {
        2 * self.bins * self.frames
    }

    pub fn core_input(&self) -> usize {
        self.audio_out + self.visual_out + Action::COUNT
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    AudioEncoder,
    VisualEncoder,
    Recurrent,
    Actor,
    Critic,
    AudioClassifier,
    LocationPredictor,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::AudioEncoder,
        ParamGroup::VisualEncoder,
        ParamGroup::Recurrent,
        ParamGroup::Actor,
        ParamGroup::Critic,
        ParamGroup::AudioClassifier,
        ParamGroup::LocationPredictor,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            ParamGroup::AudioEncoder => "audio_encoder",
            ParamGroup::VisualEncoder => "visual_encoder",
            ParamGroup::Recurrent => "recurrent",
            ParamGroup::Actor => "actor",
            ParamGroup::Critic => "critic",
            ParamGroup::AudioClassifier => "audio_classifier",
            ParamGroup::LocationPredictor => "location_predictor",
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn forward<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.matmul(x, w)?;
        Ok(tape.add_bias(y, b)?)
    }
}

/// Stack of linear layers with ReLU between them, and after the last one when
/// `relu_out` is set.
#[derive(Clone, Debug)]
struct Mlp {
    layers: Vec<Linear>,
    relu_out: bool,
}

impl Mlp {
    fn forward<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, mut x: Var) -> Result<Var> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, store, x)?;
            if self.relu_out || i + 1 < self.layers.len() {
                x = tape.relu(x)?;
            }
        }
        Ok(x)
    }
}

#[derive(Clone, Copy, Debug)]
struct Gru {
    /// `[input, 3 * hidden]`, gate blocks ordered reset, update, candidate.
    w_in: ParamId,
    w_h: ParamId,
    b_in: ParamId,
    b_h: ParamId,
    hidden: usize,
}

impl Gru {
    fn cell<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, x_proj: Var, h: Var) -> Result<Var> {
        let hs = self.hidden;
        let (w_h, b_h) = (tape.param(store, self.w_h), tape.param(store, self.b_h));
        let h_proj = tape.matmul(h, w_h)?;
        let h_proj = tape.add_bias(h_proj, b_h)?;

        let xr = tape.slice(x_proj, 0, hs)?;
        let xz = tape.slice(x_proj, hs, 2 * hs)?;
        let xn = tape.slice(x_proj, 2 * hs, 3 * hs)?;
        let hr = tape.slice(h_proj, 0, hs)?;
        let hz = tape.slice(h_proj, hs, 2 * hs)?;
        let hn = tape.slice(h_proj, 2 * hs, 3 * hs)?;

        let r = tape.add(xr, hr)?;
        let r = tape.sigmoid(r)?;
        let z = tape.add(xz, hz)?;
        let z = tape.sigmoid(z)?;
        let gated = tape.mul(r, hn)?;
        let n = tape.add(xn, gated)?;
        let n = tape.tanh(n)?;
        // h' = (1 - z) * n + z * h = n + z * (h - n)
        let diff = tape.sub(h, n)?;
        let keep = tape.mul(z, diff)?;
        Ok(tape.add(n, keep)?)
    }

    fn project<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(store, self.w_in), tape.param(store, self.b_in));
        let y = tape.matmul(x, w)?;
        Ok(tape.add_bias(y, b)?)
    }
}

/// Which auxiliary heads to evaluate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Heads {
    pub classifier: bool,
    pub locator: bool,
    /// Gradient reversal strength between the audio encoder and the classifier.
    pub lambda: f32,
}

impl Heads {
    pub const NONE: Heads = Heads { classifier: false, locator: false, lambda: 0.0 };

    pub fn all(lambda: f32) -> Self {
        Heads { classifier: true, locator: true, lambda }
    }
}

/// Preprocessed inputs for `steps` consecutive steps of `batch` parallel
/// streams. Rows are step-major: row `t * batch + b`.
#[derive(Clone, Debug)]
pub struct SeqInput {
    pub steps: usize,
    pub batch: usize,
    pub audio: Tensor,
    pub depth: Tensor,
    pub prev_action: Tensor,
    /// Row starts a new episode; the recurrent state is zeroed before it.
    pub starts: Vec<bool>,
    /// Recurrent state before the first step, `[batch, hidden]`.
    pub h0: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct SeqVars {
    pub audio_features: Var,
    /// Recurrent outputs, `[steps * batch, hidden]`.
    pub core: Var,
    pub logits: Var,
    pub value: Var,
    pub class_logits: Option<Var>,
    pub angle_pred: Option<Var>,
    /// State after the final step, `[batch, hidden]`.
    pub h_last: Var,
}

/// Network outputs for one step of a batch, copied off the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub action_logits: Tensor,
    pub value: Tensor,
    pub class_logits: Tensor,
    pub angle_pred: Tensor,
    pub hidden: Tensor,
}

/// Turns observations into network input rows: log-compressed audio
/// (left then right channel), normalized depth and a one-hot previous action.
pub fn encode_observations(cfg: &PolicyConfig, obs: &[&Observation]) -> Result<(Tensor, Tensor, Tensor)> {
    let (ad, r) = (cfg.audio_dim(), cfg.rays);
    let mut audio = Vec::with_capacity(obs.len() * ad);
    let mut depth = Vec::with_capacity(obs.len() * r);
    let mut prev = vec![0.0f32; obs.len() * Action::COUNT];
    for (i, o) in obs.iter().enumerate() {
        if o.audio.left.len() + o.audio.right.len() != ad || o.depth.len() != r {
            return Err(Error::InvalidArgument(format!(
                "observation has {} audio values and {} rays, policy expects {ad} and {r}",
                o.audio.left.len() + o.audio.right.len(),
                o.depth.len()
            )));
        }
        audio.extend(
            o.audio
                .left
                .iter()
                .chain(&o.audio.right)
                .map(|&m| (m.max(0.0) + AUDIO_FLOOR).ln() * AUDIO_LOG_SCALE),
        );
        depth.extend(o.depth.iter().map(|&d| d / cfg.max_depth));
        if let Some(a) = o.prev_action {
            prev[i * Action::COUNT + a.index()] = 1.0;
        }
    }
    let n = obs.len();
    Ok((
        Tensor::new(&[n, ad], audio)?,
        Tensor::new(&[n, r], depth)?,
        Tensor::new(&[n, Action::COUNT], prev)?,
    ))
}

/// Parameter layout; the values live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct PolicyNet {
    pub cfg: PolicyConfig,
    audio: Mlp,
    visual: Mlp,
    gru: Gru,
    actor: Linear,
    critic: Linear,
    classifier: Mlp,
    locator: Mlp,
}

enum Init {
    /// He-uniform for layers feeding a ReLU.
    Relu,
    /// Uniform in +-1/sqrt(hidden).
    Recurrent,
    /// He-uniform scaled down, for output layers.
    Scaled(f32),
    Zero,
}

struct Builder<'a> {
    store: ParamStore,
    rng: &'a mut seed::Rng,
}

impl Builder<'_> {
    fn tensor(&mut self, name: String, rows: usize, cols: usize, fan_in: usize, init: &Init) -> ParamId {
        let bound = match init {
            Init::Relu => (6.0 / fan_in as f32).sqrt(),
            Init::Recurrent => 1.0 / (fan_in as f32).sqrt(),
            Init::Scaled(s) => s * (6.0 / fan_in as f32).sqrt(),
            Init::Zero => 0.0,
        };
        let shape: Vec<usize> = if rows == 1 { vec![cols] } else { vec![rows, cols] };
        let data = (0..rows * cols)
            .map(|_| if bound > 0.0 { self.rng.random_range(-bound..bound) } else { 0.0 })
            .collect();
        self.store.add(name, Tensor::new(&shape, data).expect("shape matches data"))
    }

    fn linear(&mut self, name: &str, input: usize, output: usize, init: Init) -> Linear {
        let w = self.tensor(format!("{name}.w"), input, output, input, &init);
        let b = self.tensor(format!("{name}.b"), 1, output, input, &Init::Zero);
        Linear { w, b }
    }

    fn mlp(&mut self, prefix: &str, sizes: &[usize], relu_out: bool, last: Init) -> Mlp {
        let n = sizes.len() - 1;
        let mut last = Some(last);
        let layers = (0..n)
            .map(|i| {
                let init = if i + 1 == n { last.take().unwrap_or(Init::Relu) } else { Init::Relu };
                self.linear(&format!("{prefix}.{i}"), sizes[i], sizes[i + 1], init)
            })
            .collect();
        Mlp { layers, relu_out }
    }
}

impl PolicyNet {
    /// Builds the layout and freshly initialized parameter values.
    pub fn init(cfg: PolicyConfig, rng: &mut seed::Rng) -> (Self, ParamStore) {
        let mut b = Builder { store: ParamStore::new(), rng };
        let audio = b.mlp("audio_encoder", &[cfg.audio_dim(), cfg.audio_hidden, cfg.audio_out], true, Init::Relu);
        let visual = b.mlp("visual_encoder", &[cfg.rays, cfg.visual_hidden, cfg.visual_out], true, Init::Relu);
        let (i, h) = (cfg.core_input(), cfg.hidden);
        let gru = Gru {
            w_in: b.tensor("recurrent.w_in".into(), i, 3 * h, h, &Init::Recurrent),
            w_h: b.tensor("recurrent.w_h".into(), h, 3 * h, h, &Init::Recurrent),
            b_in: b.tensor("recurrent.b_in".into(), 1, 3 * h, h, &Init::Recurrent),
            b_h: b.tensor("recurrent.b_h".into(), 1, 3 * h, h, &Init::Recurrent),
            hidden: h,
        };
        let actor = b.linear("actor", h, Action::COUNT, Init::Scaled(0.01));
        let critic = b.linear("critic", h, 1, Init::Scaled(0.5));
        let hh = cfg.head_hidden;
        let classifier = b.mlp(
            "audio_classifier",
            &[cfg.audio_out, hh, hh, hh, cfg.classes],
            false,
            Init::Scaled(0.5),
        );
        let locator = b.mlp("location_predictor", &[h, hh, hh, hh, ANGLE_DIM], false, Init::Scaled(0.5));
        let net = PolicyNet { cfg, audio, visual, gru, actor, critic, classifier, locator };
        (net, b.store)
    }

    pub fn group_of(&self, store: &ParamStore, id: ParamId) -> Option<ParamGroup> {
        let name = &store.get(id).name;
        ParamGroup::ALL
            .into_iter()
            .find(|g| name.split('.').next() == Some(g.prefix()))
    }

    pub fn group_ids(&self, store: &ParamStore, group: ParamGroup) -> Vec<ParamId> {
        store.ids().filter(|&id| self.group_of(store, id) == Some(group)).collect()
    }

    pub fn audio_features<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, audio: Var) -> Result<Var> {
        self.audio.forward(tape, store, audio)
    }

    /// Audio classifier on gradient-reversed audio features.
    pub fn classify<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, features: Var, lambda: f32) -> Result<Var> {
        let reversed = tape.grad_reverse(features, lambda)?;
        self.classifier.forward(tape, store, reversed)
    }

    /// Audio classifier without gradient reversal.
    pub fn classify_plain<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, features: Var) -> Result<Var> {
        self.classifier.forward(tape, store, features)
    }

    pub fn locate<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, core: Var) -> Result<Var> {
        self.locator.forward(tape, store, core)
    }

    pub fn actor_critic<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, core: Var) -> Result<(Var, Var)> {
        Ok((self.actor.forward(tape, store, core)?, self.critic.forward(tape, store, core)?))
    }

    /// One recurrent step on already-projected input.
    pub fn recurrent_step<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore, x: Var, h: Var) -> Result<Var> {
        let proj = self.gru.project(tape, store, x)?;
        self.gru.cell(tape, store, proj, h)
    }

    /// Unrolls the network over a step-major sequence batch.
    pub fn forward_seq<'p>(
        &self,
        tape: &mut Tape<'p>,
        store: &'p ParamStore,
        input: &SeqInput,
        heads: Heads,
    ) -> Result<SeqVars> {
        let (steps, batch) = (input.steps, input.batch);
        if steps == 0 || batch == 0 || input.starts.len() != steps * batch || input.audio.rows() != steps * batch {
            return Err(Error::InvalidArgument(format!(
                "sequence input of {} rows for {steps} steps x {batch} streams",
                input.audio.rows()
            )));
        }
        let audio_in = tape.constant(input.audio.clone())?;
        let depth_in = tape.constant(input.depth.clone())?;
        let prev_in = tape.constant(input.prev_action.clone())?;
        let audio_features = self.audio.forward(tape, store, audio_in)?;
        let visual_features = self.visual.forward(tape, store, depth_in)?;
        let fused = tape.concat(&[audio_features, visual_features, prev_in])?;
        let projected = self.gru.project(tape, store, fused)?;

        let mut h = tape.constant(input.h0.clone())?;
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let starts = &input.starts[t * batch..(t + 1) * batch];
            if starts.iter().any(|&s| s) {
                let mask: Vec<f32> = starts
                    .iter()
                    .flat_map(|&s| std::iter::repeat_n(if s { 0.0 } else { 1.0 }, self.gru.hidden))
                    .collect();
                let mask = tape.constant(Tensor::new(&[batch, self.gru.hidden], mask)?)?;
                h = tape.mul(h, mask)?;
            }
            let x = if steps == 1 { projected } else { tape.slice_rows(projected, t * batch, (t + 1) * batch)? };
            h = self.gru.cell(tape, store, x, h)?;
            outputs.push(h);
        }
        let core = if steps == 1 { outputs[0] } else { tape.concat_rows(&outputs)? };
        let (logits, value) = self.actor_critic(tape, store, core)?;
        let class_logits = if heads.classifier {
            Some(self.classify(tape, store, audio_features, heads.lambda)?)
        } else {
            None
        };
        let angle_pred = if heads.locator { Some(self.locate(tape, store, core)?) } else { None };
        Ok(SeqVars { audio_features, core, logits, value, class_logits, angle_pred, h_last: h })
    }

    pub fn zero_hidden(&self, batch: usize) -> Tensor {
        Tensor::zeros(&[batch, self.cfg.hidden])
    }

    /// Single-step input for a batch of observations.
    pub fn step_input(&self, obs: &[&Observation], hidden: &Tensor) -> Result<SeqInput> {
        let (audio, depth, prev_action) = encode_observations(&self.cfg, obs)?;
        Ok(SeqInput {
            steps: 1,
            batch: obs.len(),
            audio,
            depth,
            prev_action,
            starts: vec![false; obs.len()],
            h0: hidden.clone(),
        })
    }
}

/// Network layout together with its parameter values.
#[derive(Clone, Debug)]
pub struct Policy {
    pub net: PolicyNet,
    pub store: ParamStore,
}

impl Policy {
    pub fn new(cfg: PolicyConfig, rng: &mut seed::Rng) -> Self {
        let (net, store) = PolicyNet::init(cfg, rng);
        Self { net, store }
    }

    /// Every parameter set to zero.
    pub fn zeros(cfg: PolicyConfig) -> Self {
        let mut p = Self::new(cfg, &mut seed::stream(0, "policy-init", 0));
        for param in p.store.iter_mut() {
            param.value.data_mut().fill(0.0);
        }
        p
    }

    pub fn cfg(&self) -> &PolicyConfig {
        &self.net.cfg
    }

    /// Full forward pass for one step of a batch of observations.
    pub fn forward(&self, obs: &[&Observation], hidden: &Tensor, lambda: f32) -> Result<PolicyOutput> {
        let input = self.net.step_input(obs, hidden)?;
        let mut tape = Tape::new();
        let v = self.net.forward_seq(&mut tape, &self.store, &input, Heads::all(lambda))?;
        let get = |var: Option<Var>| var.map(|x| tape.value(x).clone()).ok_or(Error::EmptyInput("head output"));
        Ok(PolicyOutput {
            action_logits: tape.value(v.logits).clone(),
            value: tape.value(v.value).clone(),
            class_logits: get(v.class_logits)?,
            angle_pred: get(v.angle_pred)?,
            hidden: tape.value(v.h_last).clone(),
        })
    }

    /// Actor and critic only; returns `(logits, values, next hidden)`.
    pub fn act_step(&self, obs: &[&Observation], hidden: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let input = self.net.step_input(obs, hidden)?;
        let mut tape = Tape::new();
        let v = self.net.forward_seq(&mut tape, &self.store, &input, Heads::NONE)?;
        Ok((tape.value(v.logits).clone(), tape.value(v.value).clone(), tape.value(v.h_last).clone()))
    }

    /// Frozen audio-encoder features for a batch of observations.
    pub fn audio_features(&self, obs: &[&Observation]) -> Result<Tensor> {
        let (audio, _, _) = encode_observations(&self.net.cfg, obs)?;
        let mut tape = Tape::new();
        let x = tape.constant(audio)?;
        let f = self.net.audio_features(&mut tape, &self.store, x)?;
        Ok(tape.value(f).clone())
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::default();
        let c = &self.net.cfg;
        for (k, v) in [
            ("bins", c.bins),
            ("frames", c.frames),
            ("rays", c.rays),
            ("classes", c.classes),
            ("hidden", c.hidden),
        ] {
            a.meta.insert(format!("policy.{k}"), v.to_string());
        }
        for (_, p) in self.store.iter() {
            a.tensors.push((format!("param.{}", p.name), p.value.clone()));
        }
        a
    }

    /// Copies parameter values from an archive written by [`Policy::to_archive`].
    pub fn load_archive(&mut self, archive: &Archive) -> Result<()> {
        let ids: Vec<ParamId> = self.store.ids().collect();
        for id in ids {
            let name = format!("param.{}", self.store.get(id).name);
            let t = archive
                .get(&name)
                .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks {name}")))?;
            self.store.set_value(id, t.clone())?;
        }
        Ok(())
    }
}
