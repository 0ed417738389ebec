//! Dense layers, MLPs, named parameter groups, Adam, and the byte-exact
//! checkpoint format.
//!
//! Parameters live outside any tape as plain tensors. Each forward pass
//! binds them onto the active tape through a [`Binding`], which also
//! remembers the tape id per parameter name so gradients can be collected
//! by name afterwards.

use std::collections::HashMap;

use crate::autodiff::{Tape, Tensor, VarId};
use crate::error::{Error, Result};
use crate::rng::Xoshiro256StarStar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

/// One fully connected layer with optional ReLU.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: Tensor, // in x out
    pub bias: Tensor,   // out
    pub activation: Activation,
}

impl DenseLayer {
    /// Xavier-uniform initialization: U(-a, a) with a = sqrt(6/(fan_in+fan_out)).
    pub fn xavier(input: usize, output: usize, activation: Activation, rng: &mut Xoshiro256StarStar) -> Self {
        let a = (6.0 / (input + output) as f64).sqrt();
        let data: Vec<f64> = (0..input * output).map(|_| rng.uniform(-a, a)).collect();
        DenseLayer {
            weight: Tensor::new(vec![input, output], data).expect("finite init"),
            bias: Tensor::zeros(vec![output]),
            activation,
        }
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        DenseLayer {
            weight: Tensor::zeros(vec![input, output]),
            bias: Tensor::zeros(vec![output]),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// A named stack of dense layers. The name doubles as the parameter-group
/// name ("E", "C", "S", "I.identity", ...).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub name: String,
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(name: impl Into<String>, layers: Vec<DenseLayer>) -> Self {
        Mlp { name: name.into(), layers }
    }

    /// Forward through all layers, recording on `tape` via `binding`.
    pub fn forward(&self, tape: &mut Tape, binding: &mut Binding, x: VarId) -> Result<VarId> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = binding.bind(tape, &format!("{}.{i}.weight", self.name), &layer.weight)?;
            let b = binding.bind(tape, &format!("{}.{i}.bias", self.name), &layer.bias)?;
            h = tape
                .matmul(h, w)
                .and_then(|h| tape.add_row(h, b))
                .map_err(|e| {
                    Error::Dimension(format!("layer {}.{i}: {e}", self.name))
                })?;
            if layer.activation == Activation::Relu {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// (name, tensor) pairs in layer order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("{}.{i}.weight", self.name), &layer.weight));
            out.push((format!("{}.{i}.bias", self.name), &layer.bias));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let name = self.name.clone();
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("{name}.{i}.weight"), &mut layer.weight));
            out.push((format!("{name}.{i}.bias"), &mut layer.bias));
        }
        out
    }
}

/// Maps parameter names to tape ids for the current forward pass. Binding
/// the same name twice reuses the first leaf so gradients accumulate on a
/// single node.
#[derive(Default)]
pub struct Binding {
    ids: HashMap<String, VarId>,
}

impl Binding {
    pub fn new() -> Self {
        Binding { ids: HashMap::new() }
    }

    pub fn bind(&mut self, tape: &mut Tape, name: &str, value: &Tensor) -> Result<VarId> {
        if let Some(&id) = self.ids.get(name) {
            return Ok(id);
        }
        let id = tape.leaf(value.clone())?;
        self.ids.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id_of(&self, name: &str) -> Option<VarId> {
        self.ids.get(name).copied()
    }

    /// Collect gradients for every bound parameter by name.
    pub fn collect_grads(&self, grads: &crate::autodiff::Gradients) -> HashMap<String, Tensor> {
        self.ids
            .iter()
            .map(|(name, &id)| (name.clone(), grads.wrt(id)))
            .collect()
    }
}

/// Adam with bias correction. One state instance per training step so the
/// two alternating objectives keep independent moments.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// Apply one Adam step to the listed parameters. Parameters not listed
    /// are untouched; a listed parameter without a gradient is a contract
    /// error.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor)],
        grads: &HashMap<String, Tensor>,
    ) -> Result<()> {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, value) in params.iter_mut() {
            let grad = grads.get(name.as_str()).ok_or_else(|| {
                Error::Contract(format!("missing gradient for parameter {name}"))
            })?;
            if grad.shape() != value.shape() {
                return Err(Error::Dimension(format!(
                    "gradient shape {:?} vs parameter shape {:?} for {name}",
                    grad.shape(),
                    value.shape()
                )));
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; value.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; value.len()]);
            let data = value.data_mut();
            for i in 0..data.len() {
                let g = grad.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Moment buffers and step counter, sorted by name (for state files).
    pub fn export_moments(
        &self,
    ) -> (
        std::collections::BTreeMap<String, Vec<f64>>,
        std::collections::BTreeMap<String, Vec<f64>>,
        u64,
    ) {
        (
            self.m.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            self.v.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            self.t,
        )
    }

    pub fn import_moments(
        &mut self,
        m: std::collections::BTreeMap<String, Vec<f64>>,
        v: std::collections::BTreeMap<String, Vec<f64>>,
        t: u64,
    ) {
        self.m = m.into_iter().collect();
        self.v = v.into_iter().collect();
        self.t = t;
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "DASN", version u32, count u32, then per
// parameter: name (u16 len + UTF-8), ndim u8, extents (u32 each), data
// (little-endian f64). Byte-exact round trip.
// ---------------------------------------------------------------------------

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DASN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialize named parameters to the checkpoint byte format.
pub fn snapshot(params: &[(String, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(tensor.shape().len() as u8);
        for &e in tensor.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parse a checkpoint image back into (name, tensor) pairs.
pub fn parse_snapshot(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| Error::Format("non-UTF-8 parameter name".into()))?;
        let ndim = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(&mut pos, numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if pos != bytes.len() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    Ok(out)
}

/// Restore a checkpoint image into existing parameters. Names and shapes
/// must match exactly.
pub fn restore(bytes: &[u8], params: &mut [(String, &mut Tensor)]) -> Result<()> {
    let parsed = parse_snapshot(bytes)?;
    let mut by_name: HashMap<String, Tensor> = parsed.into_iter().collect();
    for (name, value) in params.iter_mut() {
        let loaded = by_name.remove(name.as_str()).ok_or_else(|| {
            Error::Format(format!("checkpoint missing parameter {name}"))
        })?;
        if loaded.shape() != value.shape() {
            return Err(Error::Format(format!(
                "checkpoint shape {:?} vs model shape {:?} for {name}",
                loaded.shape(),
                value.shape()
            )));
        }
        **value = loaded;
    }
    if let Some(name) = by_name.keys().next() {
        return Err(Error::Format(format!(
            "checkpoint has extra parameter {name}"
        )));
    }
    Ok(())
}
