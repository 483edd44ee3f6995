//! Graph convolution over the variable/constraint graph, an LSTM across
//! timesteps, and per-variable heads producing Beta parameters.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParameterStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::featurize::{build_triplets, NodeTriplets};
use crate::loss::PenaltyData;
use crate::milp::{BipartiteGraph, MilpInstance};
use crate::sparse::CsrMatrix;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Node feature width `D_u`.
    pub feature_dim: usize,
    pub feature_activation: Activation,
    pub gcn_layers: usize,
    pub gcn_width: usize,
    pub gcn_activation: Activation,
    pub layer_norm: bool,
    pub lstm_layers: usize,
    pub lstm_width: usize,
    pub head_width: usize,
    pub continuous_head_width: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 8,
            feature_activation: Activation::Relu,
            gcn_layers: 2,
            gcn_width: 8,
            gcn_activation: Activation::Relu,
            layer_norm: true,
            lstm_layers: 1,
            lstm_width: 16,
            head_width: 16,
            continuous_head_width: 16,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("feature_dim", self.feature_dim),
            ("gcn_layers", self.gcn_layers),
            ("gcn_width", self.gcn_width),
            ("lstm_layers", self.lstm_layers),
            ("lstm_width", self.lstm_width),
            ("head_width", self.head_width),
            ("continuous_head_width", self.continuous_head_width),
        ];
        for (name, v) in widths {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Everything the model reads from one normalized instance.
#[derive(Debug, Clone)]
pub struct GraphInput {
    pub num_vars: usize,
    pub num_rows: usize,
    pub num_binary: usize,
    /// Triplets of every variable slot, `(num_vars·m_c) × 3`.
    var_triplets: Tensor,
    /// Mean over unmasked slots, `num_vars × (num_vars·m_c)`.
    var_mean: Arc<CsrMatrix>,
    con_triplets: Tensor,
    con_mean: Arc<CsrMatrix>,
    adjacency: Arc<CsrMatrix>,
    pub penalty: PenaltyData,
}

fn mean_matrix(nodes: usize, width: usize, mask: &[bool]) -> Result<CsrMatrix> {
    let mut entries = Vec::new();
    for v in 0..nodes {
        let slots = &mask[v * width..(v + 1) * width];
        let count = slots.iter().filter(|m| **m).count();
        for (k, m) in slots.iter().enumerate() {
            if *m {
                entries.push((v, v * width + k, 1.0 / count as f64));
            }
        }
    }
    CsrMatrix::from_triplets(nodes, nodes * width, entries)
}

impl GraphInput {
    /// `instance` must already be normalized.
    pub fn new(instance: &MilpInstance, m_c: usize, m_v: usize) -> Result<Self> {
        let t: NodeTriplets = build_triplets(instance, m_c, m_v)?;
        let graph = BipartiteGraph::build(instance);
        Ok(Self {
            num_vars: instance.num_vars(),
            num_rows: instance.num_rows(),
            num_binary: instance.num_binary(),
            var_triplets: Tensor::matrix(t.num_vars * m_c, 3, t.var.clone())?,
            var_mean: Arc::new(mean_matrix(t.num_vars, m_c, &t.var_mask)?),
            con_triplets: Tensor::matrix(t.num_rows * m_v, 3, t.con.clone())?,
            con_mean: Arc::new(mean_matrix(t.num_rows, m_v, &t.con_mask)?),
            adjacency: Arc::new(graph.normalized_adjacency()),
            penalty: PenaltyData {
                a: Arc::new(instance.a().clone()),
                b: instance.b().to_vec(),
                c: instance.c().to_vec(),
            },
        })
    }

    pub fn num_continuous(&self) -> usize {
        self.num_vars - self.num_binary
    }

    pub fn adjacency(&self) -> &Arc<CsrMatrix> {
        &self.adjacency
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct GcnLayer {
    dense: Dense,
    gain: ParamId,
    shift: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct LstmLayer {
    w_x: ParamId,
    w_h: ParamId,
    b: ParamId,
}

/// Parameter handles; the values live in a [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    embed_var: Dense,
    embed_con: Dense,
    gcn: Vec<GcnLayer>,
    lstm: Vec<LstmLayer>,
    bin_hidden: Dense,
    bin_out: Dense,
    cont_hidden: Dense,
    cont_out: Dense,
}

/// Per-timestep outputs as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    /// `[D_z_b]`, each ≥ 1.
    pub alpha: Var,
    pub beta: Var,
    /// `[D_z_c]`.
    pub z_continuous: Var,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub z_continuous: Vec<f64>,
}

/// LSTM state for every layer: `(h, c)`, each `[D_z × lstm_width]`.
#[derive(Debug, Clone)]
pub struct LstmState(Vec<(Var, Var)>);

fn dense(
    store: &mut ParameterStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) -> Result<Dense> {
    Ok(Dense {
        w: store.add_glorot(&format!("{name}.w"), fan_in, fan_out, rng)?,
        b: store.add_filled(&format!("{name}.b"), &[fan_out], 0.0)?,
    })
}

impl Model {
    /// Registers all parameters in `store`, initialized from `config.seed`.
    pub fn new(config: ModelConfig, store: &mut ParameterStore) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let du = config.feature_dim;
        let embed_var = dense(store, &mut rng, "embed.var", 3, du)?;
        let embed_con = dense(store, &mut rng, "embed.con", 3, du)?;
        let mut gcn = Vec::with_capacity(config.gcn_layers);
        for l in 0..config.gcn_layers {
            let fan_in = if l == 0 { du } else { config.gcn_width + du };
            gcn.push(GcnLayer {
                dense: dense(
                    store,
                    &mut rng,
                    &format!("gcn{l}"),
                    fan_in,
                    config.gcn_width,
                )?,
                gain: store.add_filled(&format!("gcn{l}.ln_gain"), &[config.gcn_width], 1.0)?,
                shift: store.add_filled(&format!("gcn{l}.ln_shift"), &[config.gcn_width], 0.0)?,
            });
        }
        let hw = config.lstm_width;
        let mut lstm = Vec::with_capacity(config.lstm_layers);
        for l in 0..config.lstm_layers {
            let fan_in = if l == 0 { config.gcn_width } else { hw };
            let w_x = store.add_glorot(&format!("lstm{l}.w_x"), fan_in, 4 * hw, &mut rng)?;
            let w_h = store.add_glorot(&format!("lstm{l}.w_h"), hw, 4 * hw, &mut rng)?;
            // gate order i, f, g, o; forget bias starts at 1
            let mut bias = vec![0.0; 4 * hw];
            bias[hw..2 * hw].iter_mut().for_each(|v| *v = 1.0);
            let b = store.add(&format!("lstm{l}.b"), Tensor::vector(bias))?;
            lstm.push(LstmLayer { w_x, w_h, b });
        }
        let head_in = config.gcn_width + hw;
        let bin_hidden = dense(
            store,
            &mut rng,
            "head.bin.hidden",
            head_in,
            config.head_width,
        )?;
        let bin_out = dense(store, &mut rng, "head.bin.out", config.head_width, 2)?;
        let cont_hidden = dense(
            store,
            &mut rng,
            "head.cont.hidden",
            head_in,
            config.continuous_head_width,
        )?;
        let cont_out = dense(
            store,
            &mut rng,
            "head.cont.out",
            config.continuous_head_width,
            1,
        )?;
        Ok(Self {
            config,
            embed_var,
            embed_con,
            gcn,
            lstm,
            bin_hidden,
            bin_out,
            cont_hidden,
            cont_out,
        })
    }

    fn apply_dense(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        d: Dense,
        x: Var,
    ) -> Result<Var> {
        let w = tape.param(store, d.w);
        let b = tape.param(store, d.b);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }

    fn activate(tape: &mut Tape, act: Activation, x: Var) -> Result<Var> {
        match act {
            Activation::Relu => tape.relu(x),
            Activation::None => Ok(x),
        }
    }

    /// Node features `U`: variable rows, then constraint rows.
    pub fn embed_features(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        input: &GraphInput,
    ) -> Result<Var> {
        let act = self.config.feature_activation;
        let tv = tape.constant(input.var_triplets.clone());
        let hv = self.apply_dense(tape, store, self.embed_var, tv)?;
        let hv = Self::activate(tape, act, hv)?;
        let uv = tape.spmm(&input.var_mean, hv)?;
        if input.num_rows == 0 {
            return Ok(uv);
        }
        let tc = tape.constant(input.con_triplets.clone());
        let hc = self.apply_dense(tape, store, self.embed_con, tc)?;
        let hc = Self::activate(tape, act, hc)?;
        let uc = tape.spmm(&input.con_mean, hc)?;
        tape.concat(&[uv, uc], 0)
    }

    /// `L` layers of `act(norm(Â · [X, U] · W + b))`; the first layer reads `U` alone.
    pub fn gcn_forward(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        u: Var,
        adjacency: &Arc<CsrMatrix>,
    ) -> Result<Var> {
        let mut x = u;
        for (l, layer) in self.gcn.iter().enumerate() {
            let input = if l == 0 { u } else { tape.concat(&[x, u], 1)? };
            let w = tape.param(store, layer.dense.w);
            let b = tape.param(store, layer.dense.b);
            let xw = tape.matmul(input, w)?;
            let mixed = tape.spmm(adjacency, xw)?;
            let mut y = tape.add_row(mixed, b)?;
            if self.config.layer_norm {
                y = tape.layer_norm(y, LAYER_NORM_EPS)?;
                let gain = tape.param(store, layer.gain);
                let shift = tape.param(store, layer.shift);
                y = tape.mul_row(y, gain)?;
                y = tape.add_row(y, shift)?;
            }
            x = Self::activate(tape, self.config.gcn_activation, y)?;
        }
        Ok(x)
    }

    pub fn initial_state(&self, tape: &mut Tape, num_vars: usize) -> LstmState {
        let hw = self.config.lstm_width;
        let layers = (0..self.lstm.len())
            .map(|_| {
                let h = tape.constant(Tensor::zeros(&[num_vars, hw]));
                let c = tape.constant(Tensor::zeros(&[num_vars, hw]));
                (h, c)
            })
            .collect();
        LstmState(layers)
    }

    /// One LSTM step per node with shared weights; returns the top-layer `h`.
    pub fn lstm_step(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        state: &mut LstmState,
        x: Var,
    ) -> Result<Var> {
        let hw = self.config.lstm_width;
        let mut input = x;
        for (layer, (h_prev, c_prev)) in self.lstm.iter().zip(state.0.iter_mut()) {
            if tape.shape(*h_prev)[0] != tape.shape(input)[0] {
                return Err(Error::shape(
                    "lstm_step",
                    format!(
                        "state for {} nodes, input has {}",
                        tape.shape(*h_prev)[0],
                        tape.shape(input)[0]
                    ),
                ));
            }
            let wx = tape.param(store, layer.w_x);
            let wh = tape.param(store, layer.w_h);
            let b = tape.param(store, layer.b);
            let gx = tape.matmul(input, wx)?;
            let gh = tape.matmul(*h_prev, wh)?;
            let gates = tape.add(gx, gh)?;
            let gates = tape.add_row(gates, b)?;
            let i = tape.slice(gates, 1, 0, hw)?;
            let f = tape.slice(gates, 1, hw, hw)?;
            let g = tape.slice(gates, 1, 2 * hw, hw)?;
            let o = tape.slice(gates, 1, 3 * hw, hw)?;
            let (i, f, g, o) = (
                tape.sigmoid(i)?,
                tape.sigmoid(f)?,
                tape.tanh(g)?,
                tape.sigmoid(o)?,
            );
            let keep = tape.mul(f, *c_prev)?;
            let write = tape.mul(i, g)?;
            let c = tape.add(keep, write)?;
            let tc = tape.tanh(c)?;
            let h = tape.mul(o, tc)?;
            *h_prev = h;
            *c_prev = c;
            input = h;
        }
        Ok(input)
    }

    /// Heads on variable rows of `[x, h]`: binaries get `α, β = 1 + softplus(·)`,
    /// continuous variables a direct value.
    pub fn project_heads(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        x_vars: Var,
        h: Var,
        num_binary: usize,
    ) -> Result<StepOutput> {
        let joined = tape.concat(&[x_vars, h], 1)?;
        let nv = tape.shape(joined)[0];
        let bin = tape.slice(joined, 0, 0, num_binary)?;
        let hid = self.apply_dense(tape, store, self.bin_hidden, bin)?;
        let hid = tape.relu(hid)?;
        let raw = self.apply_dense(tape, store, self.bin_out, hid)?;
        let to_param = |tape: &mut Tape, col: usize| -> Result<Var> {
            let r = tape.slice(raw, 1, col, 1)?;
            let r = tape.reshape(r, &[num_binary])?;
            let s = tape.softplus(r)?;
            tape.add_scalar(s, 1.0)
        };
        let alpha = to_param(tape, 0)?;
        let beta = to_param(tape, 1)?;

        let nc = nv - num_binary;
        let cont = tape.slice(joined, 0, num_binary, nc)?;
        let hid = self.apply_dense(tape, store, self.cont_hidden, cont)?;
        let hid = tape.relu(hid)?;
        let out = self.apply_dense(tape, store, self.cont_out, hid)?;
        let z_continuous = tape.reshape(out, &[nc])?;
        Ok(StepOutput {
            alpha,
            beta,
            z_continuous,
        })
    }

    /// Stateless part of one timestep: embedding and GCN, variable rows only.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        input: &GraphInput,
    ) -> Result<Var> {
        let u = self.embed_features(tape, store, input)?;
        let x = self.gcn_forward(tape, store, u, &input.adjacency)?;
        tape.slice(x, 0, 0, input.num_vars)
    }

    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        state: &mut LstmState,
        input: &GraphInput,
    ) -> Result<StepOutput> {
        let xv = self.encode(tape, store, input)?;
        let h = self.lstm_step(tape, store, state, xv)?;
        self.project_heads(tape, store, xv, h, input.num_binary)
    }

    /// Runs a series in time order from a zero state.
    pub fn forward_series(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        inputs: &[GraphInput],
    ) -> Result<Vec<StepOutput>> {
        let Some(first) = inputs.first() else {
            return Ok(Vec::new());
        };
        let mut state = self.initial_state(tape, first.num_vars);
        inputs
            .iter()
            .map(|input| {
                if input.num_vars != first.num_vars || input.num_binary != first.num_binary {
                    return Err(Error::dims(
                        "forward_series",
                        first.num_vars,
                        input.num_vars,
                    ));
                }
                self.step(tape, store, &mut state, input)
            })
            .collect()
    }

    /// Forward pass without keeping the tape.
    pub fn predict_series(
        &self,
        store: &ParameterStore,
        inputs: &[GraphInput],
    ) -> Result<Vec<ModelOutput>> {
        let mut tape = Tape::new();
        let steps = self.forward_series(&mut tape, store, inputs)?;
        Ok(steps.iter().map(|s| read_output(&tape, s)).collect())
    }
}

pub fn read_output(tape: &Tape, s: &StepOutput) -> ModelOutput {
    ModelOutput {
        alpha: tape.value(s.alpha).data().to_vec(),
        beta: tape.value(s.beta).data().to_vec(),
        z_continuous: tape.value(s.z_continuous).data().to_vec(),
    }
}
