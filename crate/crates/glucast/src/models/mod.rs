//! The three base architectures: a single-layer LSTM, an attentive
//! bidirectional GRU, and a causal Transformer encoder. Each maps a
//! normalized (36 x 4) window to an h-step forecast head.

mod gru;
mod lstm;
mod transformer;

use autodiff::rng::SplitMix64;
use autodiff::{DropoutKey, ParamSet, Tape, Tensor, Var};

use crate::data::{NUM_CHANNELS, WINDOW_LEN};
use crate::error::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Architecture {
    Lstm,
    GruAttn,
    Transformer,
}

impl Architecture {
    pub fn all() -> [Architecture; 3] {
        [
            Architecture::Lstm,
            Architecture::GruAttn,
            Architecture::Transformer,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Lstm => "lstm",
            Architecture::GruAttn => "gru_attn",
            Architecture::Transformer => "transformer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lstm" => Some(Architecture::Lstm),
            "gru_attn" | "gru" => Some(Architecture::GruAttn),
            "transformer" | "transf" => Some(Architecture::Transformer),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum HeadKind {
    /// Point forecast, h outputs.
    Plain,
    /// Point forecast with dropout active at train and MC-sample time.
    Dropout,
    /// Raw evidential tuple, 4h outputs, constrained downstream.
    Evidential,
}

impl HeadKind {
    pub fn all() -> [HeadKind; 3] {
        [HeadKind::Plain, HeadKind::Dropout, HeadKind::Evidential]
    }

    pub fn name(&self) -> &'static str {
        match self {
            HeadKind::Plain => "plain",
            HeadKind::Dropout => "dropout",
            HeadKind::Evidential => "evidential",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "plain" => Some(HeadKind::Plain),
            "dropout" => Some(HeadKind::Dropout),
            "evidential" => Some(HeadKind::Evidential),
            _ => None,
        }
    }

    pub fn is_probabilistic(&self) -> bool {
        !matches!(self, HeadKind::Plain)
    }
}

/// Head width: h for point heads, one (gamma, nu, alpha, beta) tuple per
/// horizon step for the evidential head.
pub fn output_width(head: HeadKind, horizon: usize) -> usize {
    match head {
        HeadKind::Plain | HeadKind::Dropout => horizon,
        HeadKind::Evidential => 4 * horizon,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub head: HeadKind,
    pub horizon: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon != 6 && self.horizon != 12 {
            return Err(ModelError::Config(format!(
                "horizon must be 6 or 12 steps, got {}",
                self.horizon
            )));
        }
        if self.head == HeadKind::Dropout && !(self.dropout_rate >= 0.0 && self.dropout_rate < 1.0)
        {
            return Err(ModelError::Config(format!(
                "dropout head requires a rate in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn cell_name(&self) -> String {
        format!("{}_{}", self.architecture.name(), self.head.name())
    }
}

/// How dropout behaves during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Dropout active for the dropout head, keyed by (model seed, site, step).
    Train { step: u64 },
    /// Deterministic; all masks disabled.
    Eval,
    /// Dropout active for the dropout head at inference, keyed by the
    /// sampling seed and pass index.
    McSample { seed: u64, pass: u64 },
}

/// A constructed architecture with its parameters.
#[derive(Debug, Clone)]
pub struct SequenceModel {
    config: ModelConfig,
    params: ParamSet,
}

/// Per-tape bindings of the model's parameters.
pub struct Bound<'m, 't> {
    model: &'m SequenceModel,
    vars: Vec<Var<'t>>,
}

impl<'m, 't> Bound<'m, 't> {
    pub fn var(&self, name: &str) -> Var<'t> {
        let id = self
            .model
            .params
            .id_of(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        self.vars[id]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}

impl SequenceModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let out = output_width(config.head, config.horizon);
        match config.architecture {
            Architecture::Lstm => lstm::build(&mut params, out),
            Architecture::GruAttn => gru::build(&mut params, out),
            Architecture::Transformer => transformer::build(&mut params, out),
        }
        init_params(&mut params, config.seed);
        if config.architecture == Architecture::Lstm {
            lstm::bias_forget_gate(&mut params);
        }
        Ok(Self { config, params })
    }

    /// Same base wiring, different head. Re-initializes from the same seed.
    pub fn with_head(&self, head: HeadKind) -> Result<SequenceModel> {
        SequenceModel::new(ModelConfig {
            head,
            ..self.config
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamSet) {
        self.params = params;
    }

    pub fn param_count(&self) -> usize {
        self.params.total_elements()
    }

    pub fn output_width(&self) -> usize {
        output_width(self.config.head, self.config.horizon)
    }

    /// Register every parameter on a fresh tape.
    pub fn bind<'m, 't>(&'m self, tape: &'t Tape) -> Bound<'m, 't> {
        Bound {
            model: self,
            vars: self
                .params
                .iter()
                .map(|p| tape.param(p.value.clone()))
                .collect(),
        }
    }

    /// Forward pass over a (B, 36, 4) batch of normalized windows.
    /// Output is (B, head width).
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        bound: &Bound<'_, 't>,
        input: &Tensor,
        mode: ForwardMode,
    ) -> Result<Var<'t>> {
        let shape = input.shape();
        if shape.len() != 3 || shape[1] != WINDOW_LEN || shape[2] != NUM_CHANNELS {
            return Err(ModelError::Shape {
                got: shape.to_vec(),
                expected: vec![0, WINDOW_LEN, NUM_CHANNELS],
            });
        }
        let x = tape.constant(input.clone());
        let dropout = self.dropout_plan(mode);
        match self.config.architecture {
            Architecture::Lstm => lstm::forward(tape, bound, x, shape[0], dropout),
            Architecture::GruAttn => gru::forward(tape, bound, x, shape[0], dropout),
            Architecture::Transformer => transformer::forward(tape, bound, x, shape[0], dropout),
        }
    }

    /// Convenience for a single (36, 4) window.
    pub fn forward_window<'t>(
        &self,
        tape: &'t Tape,
        bound: &Bound<'_, 't>,
        window: &Tensor,
        mode: ForwardMode,
    ) -> Result<Var<'t>> {
        if window.shape() != [WINDOW_LEN, NUM_CHANNELS] {
            return Err(ModelError::Shape {
                got: window.shape().to_vec(),
                expected: vec![WINDOW_LEN, NUM_CHANNELS],
            });
        }
        let batched = window
            .reshaped(vec![1, WINDOW_LEN, NUM_CHANNELS])
            .expect("window reshape");
        self.forward(tape, bound, &batched, mode)
    }

    fn dropout_plan(&self, mode: ForwardMode) -> Option<(f64, DropoutKey)> {
        if self.config.head != HeadKind::Dropout {
            return None;
        }
        match mode {
            ForwardMode::Eval => None,
            ForwardMode::Train { step } => Some((
                self.config.dropout_rate,
                DropoutKey {
                    seed: self.config.seed,
                    layer: 1,
                    step,
                },
            )),
            ForwardMode::McSample { seed, pass } => Some((
                self.config.dropout_rate,
                DropoutKey {
                    seed,
                    layer: 1,
                    step: pass,
                },
            )),
        }
    }

    /// Closed-form parameter count per architecture, the regression guard
    /// against silent wiring changes.
    pub fn expected_param_count(arch: Architecture, out: usize) -> usize {
        match arch {
            // gates 4x128: input (4 x 512) + recurrent (128 x 512) + bias 512;
            // head 128 -> 64 -> out
            Architecture::Lstm => {
                4 * 512 + 128 * 512 + 512 + (128 * 64 + 64) + (64 * out + out)
            }
            // 3 bidirectional layers of hidden 40 (rates r/z/n = 3x40 = 120
            // wide): per direction in x 120 + 40 x 120 + two 120 biases;
            // additive attention 80 -> 64 -> 1; head 80 -> 32 -> out
            Architecture::GruAttn => {
                let layer = |input: usize| 2 * (input * 120 + 40 * 120 + 120 + 120);
                layer(4)
                    + layer(80)
                    + layer(80)
                    + (80 * 64 + 64 + 64)
                    + (80 * 32 + 32)
                    + (32 * out + out)
            }
            // input proj 4 -> 64; 2 pre-norm blocks of 4-head attention
            // (4 x (64 x 64 + 64)) and ff 64 -> 128 -> 64 with two layer
            // norms; final norm; head 64 -> out
            Architecture::Transformer => {
                let block = 2 * 128 + 4 * (64 * 64 + 64) + (64 * 128 + 128) + (128 * 64 + 64);
                (4 * 64 + 64) + 2 * block + 128 + (64 * out + out)
            }
        }
    }
}

type Result<T> = std::result::Result<T, ModelError>;

/// Uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for matrices,
/// zeros for biases and norm offsets, ones for norm gains. Streams are
/// forked per parameter index so insertion order pins the draw.
fn init_params(params: &mut ParamSet, seed: u64) {
    let root = SplitMix64::new(seed);
    for id in 0..params.len() {
        let mut rng = root.fork(id as u64);
        let param = params.by_id_mut(id);
        let shape = param.value.shape().to_vec();
        let is_gain = param.name.ends_with(".g");
        if shape.len() == 1 {
            let fill = if is_gain { 1.0 } else { 0.0 };
            param.value = Tensor::full(&shape, fill);
        } else {
            let fan_in = shape[0] as f64;
            let bound = 1.0 / fan_in.sqrt();
            let data: Vec<f64> = (0..param.value.len())
                .map(|_| rng.uniform(-bound, bound))
                .collect();
            param.value = Tensor::new(shape, data).expect("init shape");
        }
    }
}

pub(crate) fn apply_dropout<'t>(
    tape: &'t Tape,
    x: Var<'t>,
    plan: Option<(f64, DropoutKey)>,
) -> Var<'t> {
    match plan {
        Some((rate, key)) => tape.dropout(x, rate, key),
        None => x,
    }
}

/// Mean squared error over every element.
pub fn mse_loss<'t>(pred: Var<'t>, target: Var<'t>) -> Var<'t> {
    let diff = pred - target;
    (diff * diff).mean()
}
