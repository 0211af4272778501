//! Toy time-domain masking separation model: learned frame encoder, a
//! stack of gated feed-forward blocks with residual connections, and a
//! shared mask-estimation head plus shared decoder that reconstruct
//! per-layer source estimates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::metrics::GUARD;
use crate::types::Waveform;
use crate::{Error, Result};

fn default_frame_size() -> usize {
    16
}
fn default_hop() -> usize {
    8
}
fn default_hidden_dim() -> usize {
    32
}
fn default_n_blocks() -> usize {
    6
}
fn default_n_sources() -> usize {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeparatorConfig {
    #[serde(default = "default_frame_size")]
    pub frame_size: usize,
    #[serde(default = "default_hop")]
    pub hop: usize,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_n_blocks")]
    pub n_blocks: usize,
    #[serde(default = "default_n_sources")]
    pub n_sources: usize,
}

impl Default for SeparatorConfig {
    fn default() -> Self {
        Self {
            frame_size: default_frame_size(),
            hop: default_hop(),
            hidden_dim: default_hidden_dim(),
            n_blocks: default_n_blocks(),
            n_sources: default_n_sources(),
        }
    }
}

impl SeparatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_size == 0 || self.hop == 0 || self.hop > self.frame_size {
            return Err(Error::Config(format!(
                "need 0 < hop <= frame_size, got hop {} frame {}",
                self.hop, self.frame_size
            )));
        }
        if self.n_blocks == 0 {
            return Err(Error::Config("n_blocks must be >= 1".into()));
        }
        if self.n_sources < 2 {
            return Err(Error::Config("n_sources must be >= 2".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// Which layers to decode through the shared mask head / decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerScope {
    FinalOnly,
    All,
}

/// The mask head and decoder parameters are the same objects for every
/// layer's reconstruction path.
#[derive(Debug, Clone)]
pub struct SeparatorModel {
    config: SeparatorConfig,
    params: Vec<(String, Tensor)>,
}

/// Handles into a forward graph: parameter leaves (aligned with the
/// model's parameter order) and per-layer source estimates.
pub struct ForwardPass {
    pub param_vars: Vec<Var>,
    /// `estimates[l][k]` is source k reconstructed from decoded layer l.
    pub estimates: Vec<Vec<Var>>,
    /// Block index of each decoded layer (0-based).
    pub layer_ids: Vec<usize>,
}

impl SeparatorModel {
    /// Deterministic uniform initialization scaled by 1/sqrt(fan_in);
    /// biases start at zero.
    pub fn init(config: SeparatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params: Vec<(String, Tensor)> = Vec::new();
        let h = config.hidden_dim;
        let f = config.frame_size;
        let s = config.n_sources;

        let weight = |name: &str, rows: usize, cols: usize, rng: &mut ChaCha20Rng| {
            let bound = 1.0 / (rows as f64).sqrt();
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            (name.to_string(), Tensor::matrix(rows, cols, data).expect("shape"))
        };

        params.push(weight("encoder_w", f, h, &mut rng));
        for b in 0..config.n_blocks {
            params.push(weight(&format!("block{b}_value_w"), h, h, &mut rng));
            params.push((format!("block{b}_value_b"), Tensor::vector(vec![0.0; h])));
            params.push(weight(&format!("block{b}_gate_w"), h, h, &mut rng));
            params.push((format!("block{b}_gate_b"), Tensor::vector(vec![0.0; h])));
        }
        params.push(weight("mask_w", h, s * h, &mut rng));
        params.push(("mask_b".to_string(), Tensor::vector(vec![0.0; s * h])));
        params.push(weight("decoder_w", h, f, &mut rng));

        Ok(Self { config, params })
    }

    pub fn config(&self) -> &SeparatorConfig {
        &self.config
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, t) in &self.params {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut off = 0;
        for (_, t) in &mut self.params {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Zero a named parameter (used in tests to construct the symmetric
    /// all-0.5-mask initialization).
    pub fn zero_param(&mut self, name: &str) -> Result<()> {
        for (n, t) in &mut self.params {
            if n == name {
                t.data_mut().fill(0.0);
                return Ok(());
            }
        }
        Err(Error::Config(format!("no parameter named {name:?}")))
    }

    /// Build the forward graph for one mixture on `tape`. Parameter
    /// leaves require gradients iff `trainable`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        mixture: &Waveform,
        scope: LayerScope,
        trainable: bool,
    ) -> Result<ForwardPass> {
        if mixture.len() < self.config.frame_size {
            return Err(Error::Shape(format!(
                "mixture of {} samples shorter than frame size {}",
                mixture.len(),
                self.config.frame_size
            )));
        }
        let param_vars: Vec<Var> = self
            .params
            .iter()
            .map(|(_, t)| tape.leaf(t.clone(), trainable))
            .collect();
        let mut idx = 0usize;
        let mut next = || {
            let v = param_vars[idx];
            idx += 1;
            v
        };
        let encoder_w = next();
        let mut blocks = Vec::with_capacity(self.config.n_blocks);
        for _ in 0..self.config.n_blocks {
            let value_w = next();
            let value_b = next();
            let gate_w = next();
            let gate_b = next();
            blocks.push((value_w, value_b, gate_w, gate_b));
        }
        let mask_w = next();
        let mask_b = next();
        let decoder_w = next();

        let mix = tape.constant(Tensor::vector(mixture.samples().to_vec()));
        let frames = tape.frame(mix, self.config.frame_size, self.config.hop)?;
        let pre = tape.matmul(frames, encoder_w)?;
        let enc = tape.relu(pre);

        let mut hidden = enc;
        let mut hiddens = Vec::with_capacity(self.config.n_blocks);
        for (value_w, value_b, gate_w, gate_b) in blocks {
            let v_lin = tape.matmul(hidden, value_w)?;
            let v_aff = tape.add_row(v_lin, value_b)?;
            let value = tape.tanh(v_aff);
            let g_lin = tape.matmul(hidden, gate_w)?;
            let g_aff = tape.add_row(g_lin, gate_b)?;
            let gate = tape.sigmoid(g_aff);
            let update = tape.mul(value, gate)?;
            hidden = tape.add(hidden, update)?;
            hiddens.push(hidden);
        }

        let layer_ids: Vec<usize> = match scope {
            LayerScope::All => (0..self.config.n_blocks).collect(),
            LayerScope::FinalOnly => vec![self.config.n_blocks - 1],
        };
        let h = self.config.hidden_dim;
        let mut estimates = Vec::with_capacity(layer_ids.len());
        for &l in &layer_ids {
            let m_lin = tape.matmul(hiddens[l], mask_w)?;
            let m_aff = tape.add_row(m_lin, mask_b)?;
            let masks = tape.sigmoid(m_aff);
            let mut sources = Vec::with_capacity(self.config.n_sources);
            for k in 0..self.config.n_sources {
                let mask_k = tape.slice_cols(masks, k * h, h)?;
                let masked = tape.mul(mask_k, enc)?;
                let dec = tape.matmul(masked, decoder_w)?;
                let est = tape.overlap_add(dec, self.config.hop, mixture.len())?;
                sources.push(est);
            }
            estimates.push(sources);
        }
        Ok(ForwardPass {
            param_vars,
            estimates,
            layer_ids,
        })
    }

    /// Gradient vector aligned with [`SeparatorModel::flatten`];
    /// disconnected parameters contribute zeros.
    pub fn flat_grads(&self, grads: &Gradients, pass: &ForwardPass) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (v, (_, t)) in pass.param_vars.iter().zip(&self.params) {
            match grads.get(*v) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat(0.0).take(t.numel())),
            }
        }
        out
    }
}

/// SI-SDR of a graph estimate against a fixed target, as a graph scalar.
/// Matches [`crate::metrics::si_sdr`] including the projection-normalized
/// guard; the numerator is the constant `|t|^2 + GUARD`, so only the
/// residual term carries gradient.
pub fn si_sdr_node(tape: &mut Tape, estimate: Var, target: &Waveform) -> Result<Var> {
    let t = tape.constant(Tensor::vector(target.samples().to_vec()));
    let t_energy = target.energy();
    if t_energy == 0.0 {
        return Err(Error::ZeroTarget);
    }
    let e_dot_t = tape.dot(estimate, t)?;
    let alpha = tape.scale(e_dot_t, 1.0 / (t_energy + GUARD));
    let inv_alpha = tape.pow(alpha, -1.0);
    let e_norm = tape.mul_scalar(inv_alpha, estimate)?;
    let resid = tape.sub(e_norm, t)?;
    let r_sq = tape.dot(resid, resid)?;
    let den = tape.add_const(r_sq, GUARD);
    let lg = tape.log10(den);
    let neg = tape.scale(lg, -10.0);
    Ok(tape.add_const(neg, 10.0 * (t_energy + GUARD).log10()))
}

/// All pairwise SI-SDR scalars between graph estimates and fixed targets.
pub fn pairwise_si_sdr_nodes(
    tape: &mut Tape,
    estimates: &[Var],
    targets: &[Waveform],
) -> Result<Vec<Vec<Var>>> {
    if estimates.len() != targets.len() {
        return Err(Error::CountMismatch(estimates.len(), targets.len()));
    }
    estimates
        .iter()
        .map(|&e| targets.iter().map(|t| si_sdr_node(tape, e, t)).collect())
        .collect()
}
