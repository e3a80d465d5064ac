//! From-scratch GRU encoder-decoder with analytic backpropagation through
//! time.
//!
//! The cell computes, in order and with no bias terms:
//!
//! ```text
//! gate_reset  = sigmoid(W_input_reset x_t + W_hidden_reset h_prev)
//! r           = tanh(gate_reset .* (W_hidden_cand h_prev) + W_input_cand x_t)
//! gate_update = sigmoid(W_input_update x_t + W_hidden_update h_prev)
//! u           = gate_update .* h_prev
//! h_t         = r .* (1 - gate_update) + u
//! ```
//!
//! Note the reset gate multiplies the already-projected hidden path
//! (`gate .* (W h_prev)`, gate outside the matrix product) — this cell is
//! implemented exactly as specified, not as the more common variant that
//! gates h_prev before the projection.
//!
//! The encoder runs `num_layers` stacked cells over the input window with
//! inverted dropout on inter-layer activations (train mode only, fresh
//! mask per layer boundary and timestep). Each decoder layer starts from
//! the matching encoder layer's final hidden state; the decoder input is
//! autoregressive — the previous predicted 3-vector, seeded with the last
//! input sample — and a fully connected head maps the top hidden state to
//! each predicted 3-vector.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NormStatsRef};

use crate::numerics::{Matrix, Rng, Vec3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("tape does not match this model ({0})")]
    StaleTape(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("unsupported checkpoint version {got} (expected {expected})")]
    VersionMismatch { got: u32, expected: u32 },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Architecture hyperparameters. `in_len`/`out_len` are window lengths in
/// samples; `input_dim`/`output_dim` stay 3 for trajectory work.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub dropout_rate: f64,
    pub in_len: usize,
    pub out_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 3,
            output_dim: 3,
            hidden_dim: 64,
            num_layers: 2,
            dropout_rate: 0.5,
            in_len: 20,
            out_len: 10,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_dim < 1 || self.num_layers < 1 {
            return Err(ModelError::InvalidConfig(
                "hidden_dim and num_layers must be >= 1".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.in_len < 1 || self.out_len < 1 {
            return Err(ModelError::InvalidConfig(
                "window lengths must be >= 1".to_string(),
            ));
        }
        // The pipeline is 3D end to end; the fields exist so checkpoints
        // self-describe.
        if self.input_dim != 3 || self.output_dim != 3 {
            return Err(ModelError::InvalidConfig(
                "input_dim and output_dim must be 3".to_string(),
            ));
        }
        Ok(())
    }
}

/// The six weight matrices of one GRU layer. Input matrices are
/// hidden x in_width, hidden matrices hidden x hidden.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayerWeights {
    pub reset_input: Matrix,
    pub reset_hidden: Matrix,
    pub update_input: Matrix,
    pub update_hidden: Matrix,
    pub cand_input: Matrix,
    pub cand_hidden: Matrix,
}

impl GruLayerWeights {
    pub fn zeros(in_width: usize, hidden: usize) -> Self {
        GruLayerWeights {
            reset_input: Matrix::zeros(hidden, in_width),
            reset_hidden: Matrix::zeros(hidden, hidden),
            update_input: Matrix::zeros(hidden, in_width),
            update_hidden: Matrix::zeros(hidden, hidden),
            cand_input: Matrix::zeros(hidden, in_width),
            cand_hidden: Matrix::zeros(hidden, hidden),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.reset_hidden.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.reset_input.cols()
    }

    fn slices(&self) -> [&[f64]; 6] {
        [
            self.reset_input.data(),
            self.reset_hidden.data(),
            self.update_input.data(),
            self.update_hidden.data(),
            self.cand_input.data(),
            self.cand_hidden.data(),
        ]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.reset_input.data_mut(),
            self.reset_hidden.data_mut(),
            self.update_input.data_mut(),
            self.update_hidden.data_mut(),
            self.cand_input.data_mut(),
            self.cand_hidden.data_mut(),
        ]
    }
}

/// All trainable parameters: encoder stack, decoder stack, output head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Vec<GruLayerWeights>,
    pub decoder: Vec<GruLayerWeights>,
    pub head_weight: Matrix,
    pub head_bias: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let enc_layer = |l: usize| {
            let width = if l == 0 {
                config.input_dim
            } else {
                config.hidden_dim
            };
            GruLayerWeights::zeros(width, config.hidden_dim)
        };
        let dec_layer = |l: usize| {
            let width = if l == 0 {
                config.output_dim
            } else {
                config.hidden_dim
            };
            GruLayerWeights::zeros(width, config.hidden_dim)
        };
        ModelParams {
            encoder: (0..config.num_layers).map(enc_layer).collect(),
            decoder: (0..config.num_layers).map(dec_layer).collect(),
            head_weight: Matrix::zeros(config.output_dim, config.hidden_dim),
            head_bias: vec![0.0; config.output_dim],
        }
    }

    /// Flat views over every parameter in the documented fixed order:
    /// encoder layers then decoder layers (each: reset_input, reset_hidden,
    /// update_input, update_hidden, cand_input, cand_hidden), head weight,
    /// head bias. Checkpoints and the optimizer both follow this order.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in self.encoder.iter().chain(self.decoder.iter()) {
            out.extend(layer.slices());
        }
        out.push(self.head_weight.data());
        out.push(self.head_bias.as_slice());
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.extend(layer.slices_mut());
        }
        out.push(self.head_weight.data_mut());
        out.push(self.head_bias.as_mut_slice());
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn matches_config(&self, config: &ModelConfig) -> bool {
        self.encoder.len() == config.num_layers
            && self.decoder.len() == config.num_layers
            && self
                .encoder
                .first()
                .is_some_and(|l| l.input_dim() == config.input_dim)
            && self
                .decoder
                .first()
                .is_some_and(|l| l.input_dim() == config.output_dim)
            && self
                .encoder
                .iter()
                .chain(self.decoder.iter())
                .all(|l| l.hidden_dim() == config.hidden_dim)
            && self.head_weight.rows() == config.output_dim
            && self.head_weight.cols() == config.hidden_dim
            && self.head_bias.len() == config.output_dim
    }
}

/// Uniform(-1/sqrt(hidden_dim), +1/sqrt(hidden_dim)) for every entry,
/// drawn in `param_slices` order; deterministic per seed.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams, ModelError> {
    config.validate()?;
    let bound = 1.0 / (config.hidden_dim as f64).sqrt();
    let mut rng = Rng::new(seed);
    let mut params = ModelParams::zeros(config);
    for slice in params.param_slices_mut() {
        for v in slice {
            *v = rng.uniform(-bound, bound).expect("bound > 0");
        }
    }
    Ok(params)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Activations of one cell step, sufficient to replay the exact backward
/// pass: the cell input, previous hidden, both gate outputs, the projected
/// hidden path inside the tanh, the tanh output, and the new hidden.
#[derive(Debug, Clone)]
pub struct CellTape {
    pub input: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub gate_reset: Vec<f64>,
    pub hidden_path: Vec<f64>,
    pub cand: Vec<f64>,
    pub gate_update: Vec<f64>,
    pub h: Vec<f64>,
}

/// Everything recorded during a forward pass that the backward pass needs.
#[derive(Debug, Clone)]
pub struct TapeCache {
    /// Encoder cells, indexed `[layer][timestep]`.
    pub encoder: Vec<Vec<CellTape>>,
    /// Decoder cells, indexed `[layer][step]`.
    pub decoder: Vec<Vec<CellTape>>,
    /// Inverted-dropout multipliers (0 or 1/(1-rate)) per encoder layer
    /// boundary and timestep; `None` outside train mode or at rate 0.
    pub dropout: Option<Vec<Vec<Vec<f64>>>>,
    /// Predicted outputs, one 3-vector-sized row per decoder step.
    pub outputs: Vec<Vec<f64>>,
}

/// Whether a forward pass draws dropout masks.
pub enum ForwardMode<'a> {
    Train(&'a mut Rng),
    Eval,
}

fn cell_step(x: &[f64], h_prev: &[f64], w: &GruLayerWeights) -> CellTape {
    let hidden = w.hidden_dim();
    let mut a_reset = vec![0.0; hidden];
    let mut tmp = vec![0.0; hidden];
    w.reset_input.matvec(x, &mut a_reset);
    w.reset_hidden.matvec(h_prev, &mut tmp);
    let gate_reset: Vec<f64> = a_reset
        .iter()
        .zip(&tmp)
        .map(|(a, b)| sigmoid(a + b))
        .collect();

    let mut hidden_path = vec![0.0; hidden];
    w.cand_hidden.matvec(h_prev, &mut hidden_path);
    let mut a_cand = vec![0.0; hidden];
    w.cand_input.matvec(x, &mut a_cand);
    let cand: Vec<f64> = gate_reset
        .iter()
        .zip(&hidden_path)
        .zip(&a_cand)
        .map(|((g, q), a)| (g * q + a).tanh())
        .collect();

    let mut a_update = vec![0.0; hidden];
    w.update_input.matvec(x, &mut a_update);
    w.update_hidden.matvec(h_prev, &mut tmp);
    let gate_update: Vec<f64> = a_update
        .iter()
        .zip(&tmp)
        .map(|(a, b)| sigmoid(a + b))
        .collect();

    let h: Vec<f64> = cand
        .iter()
        .zip(&gate_update)
        .zip(h_prev)
        .map(|((r, g), hp)| r * (1.0 - g) + g * hp)
        .collect();

    CellTape {
        input: x.to_vec(),
        h_prev: h_prev.to_vec(),
        gate_reset,
        hidden_path,
        cand,
        gate_update,
        h,
    }
}

/// One GRU cell step. Dimensions of `x` and `h_prev` must match the
/// layer's weights.
pub fn gru_cell_forward(
    x: &[f64],
    h_prev: &[f64],
    w: &GruLayerWeights,
) -> Result<Vec<f64>, ModelError> {
    if x.len() != w.input_dim() || h_prev.len() != w.hidden_dim() {
        return Err(ModelError::DimensionMismatch(format!(
            "cell expects input {} and hidden {}, got {} and {}",
            w.input_dim(),
            w.hidden_dim(),
            x.len(),
            h_prev.len()
        )));
    }
    Ok(cell_step(x, h_prev, w).h)
}

/// Full encoder-decoder forward pass over one input window.
///
/// Returns the predicted window and the tape required by
/// [`model_backward`]. Eval mode is deterministic; train mode with a zero
/// dropout rate draws nothing and matches eval bit-for-bit.
pub fn model_forward(
    input: &[Vec3],
    params: &ModelParams,
    config: &ModelConfig,
    mode: ForwardMode<'_>,
) -> Result<(Vec<Vec3>, TapeCache), ModelError> {
    config.validate()?;
    if !params.matches_config(config) {
        return Err(ModelError::DimensionMismatch(
            "params do not match config".to_string(),
        ));
    }
    if input.len() != config.in_len {
        return Err(ModelError::DimensionMismatch(format!(
            "input has {} rows, config.in_len is {}",
            input.len(),
            config.in_len
        )));
    }
    let layers = config.num_layers;
    let hidden = config.hidden_dim;
    let mut dropout_rng = match mode {
        ForwardMode::Train(rng) if config.dropout_rate > 0.0 => Some(rng),
        _ => None,
    };
    let keep_scale = 1.0 / (1.0 - config.dropout_rate);

    let mut enc_tape: Vec<Vec<CellTape>> = (0..layers).map(|_| Vec::new()).collect();
    let mut masks: Vec<Vec<Vec<f64>>> = (0..layers.saturating_sub(1))
        .map(|_| Vec::new())
        .collect();
    let mut h_enc: Vec<Vec<f64>> = (0..layers).map(|_| vec![0.0; hidden]).collect();

    for sample in input.iter().take(config.in_len) {
        let mut x: Vec<f64> = sample.to_vec();
        for l in 0..layers {
            let tape = cell_step(&x, &h_enc[l], &params.encoder[l]);
            h_enc[l] = tape.h.clone();
            if l + 1 < layers {
                x = tape.h.clone();
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    let mask: Vec<f64> = (0..hidden)
                        .map(|_| {
                            if rng.uniform_unit() < config.dropout_rate {
                                0.0
                            } else {
                                keep_scale
                            }
                        })
                        .collect();
                    for (v, m) in x.iter_mut().zip(&mask) {
                        *v *= m;
                    }
                    masks[l].push(mask);
                }
            }
            enc_tape[l].push(tape);
        }
    }

    // Decoder layers start from the encoder's final hidden states; the
    // step-0 input is the last input sample, afterwards the previous
    // prediction.
    let mut dec_tape: Vec<Vec<CellTape>> = (0..layers).map(|_| Vec::new()).collect();
    let mut h_dec = h_enc;
    let mut outputs: Vec<Vec3> = Vec::with_capacity(config.out_len);
    let mut tape_outputs: Vec<Vec<f64>> = Vec::with_capacity(config.out_len);
    let mut y_prev: Vec<f64> = input[config.in_len - 1].to_vec();
    for _ in 0..config.out_len {
        let mut x = y_prev;
        for l in 0..layers {
            let tape = cell_step(&x, &h_dec[l], &params.decoder[l]);
            h_dec[l] = tape.h.clone();
            x = tape.h.clone();
            dec_tape[l].push(tape);
        }
        let mut y = params.head_bias.clone();
        let mut proj = vec![0.0; config.output_dim];
        params.head_weight.matvec(&x, &mut proj);
        for (a, b) in y.iter_mut().zip(&proj) {
            *a += b;
        }
        outputs.push([y[0], y[1], y[2]]);
        tape_outputs.push(y.clone());
        y_prev = y;
    }

    let tape = TapeCache {
        encoder: enc_tape,
        decoder: dec_tape,
        dropout: if dropout_rng.is_some() { Some(masks) } else { None },
        outputs: tape_outputs,
    };
    Ok((outputs, tape))
}

/// Forward pass without tape recording; eval mode only. Same arithmetic as
/// [`model_forward`] in eval mode.
pub fn model_predict(
    input: &[Vec3],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Vec<Vec3>, ModelError> {
    model_forward(input, params, config, ForwardMode::Eval).map(|(out, _)| out)
}

/// Gradient of one cell step given dL/dh. Accumulates weight gradients
/// into `grads` and returns (dL/dx, dL/dh_prev).
fn cell_backward(
    tape: &CellTape,
    w: &GruLayerWeights,
    grads: &mut GruLayerWeights,
    dh: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let in_width = w.input_dim();

    // h = cand * (1 - gate_update) + gate_update * h_prev
    let d_cand: Vec<f64> = dh
        .iter()
        .zip(&tape.gate_update)
        .map(|(d, g)| d * (1.0 - g))
        .collect();
    let d_gate_update: Vec<f64> = dh
        .iter()
        .zip(&tape.h_prev)
        .zip(&tape.cand)
        .map(|((d, hp), r)| d * (hp - r))
        .collect();
    let mut dh_prev: Vec<f64> = dh
        .iter()
        .zip(&tape.gate_update)
        .map(|(d, g)| d * g)
        .collect();

    // cand = tanh(gate_reset * hidden_path + cand_input x)
    let d_a_cand: Vec<f64> = d_cand
        .iter()
        .zip(&tape.cand)
        .map(|(d, r)| d * (1.0 - r * r))
        .collect();
    let d_gate_reset: Vec<f64> = d_a_cand
        .iter()
        .zip(&tape.hidden_path)
        .map(|(d, q)| d * q)
        .collect();
    let d_hidden_path: Vec<f64> = d_a_cand
        .iter()
        .zip(&tape.gate_reset)
        .map(|(d, g)| d * g)
        .collect();

    let mut dx = vec![0.0; in_width];
    grads.cand_input.add_outer(&d_a_cand, &tape.input);
    w.cand_input.matvec_transpose_add(&d_a_cand, &mut dx);
    grads.cand_hidden.add_outer(&d_hidden_path, &tape.h_prev);
    w.cand_hidden
        .matvec_transpose_add(&d_hidden_path, &mut dh_prev);

    // gate_reset = sigmoid(reset_input x + reset_hidden h_prev)
    let d_a_reset: Vec<f64> = d_gate_reset
        .iter()
        .zip(&tape.gate_reset)
        .map(|(d, g)| d * g * (1.0 - g))
        .collect();
    grads.reset_input.add_outer(&d_a_reset, &tape.input);
    w.reset_input.matvec_transpose_add(&d_a_reset, &mut dx);
    grads.reset_hidden.add_outer(&d_a_reset, &tape.h_prev);
    w.reset_hidden
        .matvec_transpose_add(&d_a_reset, &mut dh_prev);

    // gate_update = sigmoid(update_input x + update_hidden h_prev)
    let d_a_update: Vec<f64> = d_gate_update
        .iter()
        .zip(&tape.gate_update)
        .map(|(d, g)| d * g * (1.0 - g))
        .collect();
    grads.update_input.add_outer(&d_a_update, &tape.input);
    w.update_input.matvec_transpose_add(&d_a_update, &mut dx);
    grads.update_hidden.add_outer(&d_a_update, &tape.h_prev);
    w.update_hidden
        .matvec_transpose_add(&d_a_update, &mut dh_prev);

    (dx, dh_prev)
}

/// Exact reverse-mode gradients of [`model_forward`] with respect to every
/// parameter, given dL/d(output). The tape must come from a forward pass
/// with the same params and config.
pub fn model_backward(
    params: &ModelParams,
    config: &ModelConfig,
    tape: &TapeCache,
    d_output: &[Vec3],
) -> Result<ModelParams, ModelError> {
    let layers = config.num_layers;
    let hidden = config.hidden_dim;
    if tape.encoder.len() != layers
        || tape.decoder.len() != layers
        || tape.encoder.iter().any(|l| l.len() != config.in_len)
        || tape.decoder.iter().any(|l| l.len() != config.out_len)
        || tape.outputs.len() != config.out_len
        || tape
            .encoder
            .iter()
            .chain(tape.decoder.iter())
            .any(|l| l.iter().any(|c| c.h.len() != hidden))
    {
        return Err(ModelError::StaleTape(
            "tape shape does not match config".to_string(),
        ));
    }
    if !params.matches_config(config) {
        return Err(ModelError::DimensionMismatch(
            "params do not match config".to_string(),
        ));
    }
    if d_output.len() != config.out_len {
        return Err(ModelError::DimensionMismatch(format!(
            "d_output has {} rows, config.out_len is {}",
            d_output.len(),
            config.out_len
        )));
    }

    let mut grads = ModelParams::zeros(config);

    // Decoder, newest step first. d_next_input carries the gradient that
    // flows into prediction y_{k-1} through step k's autoregressive input.
    let mut dh_time: Vec<Vec<f64>> = (0..layers).map(|_| vec![0.0; hidden]).collect();
    let mut d_next_input = vec![0.0; config.output_dim];
    for k in (0..config.out_len).rev() {
        let mut dy: Vec<f64> = d_output[k].to_vec();
        for (a, b) in dy.iter_mut().zip(&d_next_input) {
            *a += b;
        }
        let top_h = &tape.decoder[layers - 1][k].h;
        grads.head_weight.add_outer(&dy, top_h);
        for (g, d) in grads.head_bias.iter_mut().zip(&dy) {
            *g += d;
        }
        let mut dh_from_above = vec![0.0; hidden];
        params
            .head_weight
            .matvec_transpose_add(&dy, &mut dh_from_above);

        for l in (0..layers).rev() {
            let mut dh = std::mem::take(&mut dh_time[l]);
            for (a, b) in dh.iter_mut().zip(&dh_from_above) {
                *a += b;
            }
            let (dx, dh_prev) = cell_backward(
                &tape.decoder[l][k],
                &params.decoder[l],
                &mut grads.decoder[l],
                &dh,
            );
            dh_time[l] = dh_prev;
            if l > 0 {
                dh_from_above = dx;
            } else {
                d_next_input = dx;
            }
        }
    }
    // After step 0 the time-carries are gradients w.r.t. the decoder's
    // initial hiddens, i.e. the encoder's final hiddens. (d_next_input now
    // targets the last input sample — data, not a parameter.)

    for t in (0..config.in_len).rev() {
        let mut dh_from_above: Vec<f64> = Vec::new();
        for l in (0..layers).rev() {
            let mut dh = std::mem::take(&mut dh_time[l]);
            if l + 1 < layers {
                // dh_from_above is d w.r.t. the input of layer l+1; the
                // stored multipliers already carry the inverted-dropout
                // scale.
                match &tape.dropout {
                    Some(masks) => {
                        for ((a, b), m) in dh.iter_mut().zip(&dh_from_above).zip(&masks[l][t]) {
                            *a += b * m;
                        }
                    }
                    None => {
                        for (a, b) in dh.iter_mut().zip(&dh_from_above) {
                            *a += b;
                        }
                    }
                }
            }
            let (dx, dh_prev) = cell_backward(
                &tape.encoder[l][t],
                &params.encoder[l],
                &mut grads.encoder[l],
                &dh,
            );
            dh_time[l] = dh_prev;
            dh_from_above = dx;
        }
    }

    Ok(grads)
}

#[cfg(test)]
mod tests;
