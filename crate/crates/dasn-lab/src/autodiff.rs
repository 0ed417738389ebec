//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! Define-by-run: every forward pass records onto a fresh [`Tape`]; calling
//! [`Tape::backward`] replays the recorded operations in reverse. The tape
//! includes the gradient reversal operation ([`Tape::grl`]) that the
//! adversarial objectives are built on: identity on the forward pass,
//! multiplication by exactly -1 on the backward pass.
//!
//! Non-finite values (NaN/Inf) are rejected at op boundaries so training
//! divergence surfaces as an error instead of propagating silently.

use crate::error::{Error, Result};

/// Shape-carrying dense tensor of 64-bit floats, flat row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Arity(format!("zero extent in shape {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        let t = Tensor { shape, data };
        t.check_finite("tensor construction")?;
        Ok(t)
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Tensor::new(vec![1], vec![v])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if !self.is_scalar() {
            return Err(Error::Contract(format!(
                "item() on non-scalar tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    fn check_finite(&self, context: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{context}: element {i} is {v}"
                )));
            }
        }
        Ok(())
    }

    /// Rows/cols of a 2-D tensor; a 1-D tensor is treated as a single row.
    fn as_matrix(&self) -> Result<(usize, usize)> {
        match self.shape.len() {
            1 => Ok((1, self.shape[0])),
            2 => Ok((self.shape[0], self.shape[1])),
            _ => Err(Error::Dimension(format!(
                "expected 1-D or 2-D tensor, got shape {:?}",
                self.shape
            ))),
        }
    }
}

/// Handle to a value recorded on a tape.
pub type VarId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: VarId, b: VarId },
    Add { a: VarId, b: VarId },
    AddRow { a: VarId, bias: VarId },
    Relu { a: VarId },
    Grl { a: VarId },
    Softmax { a: VarId },
    ReduceMean { a: VarId },
    GatherRows { a: VarId, idx: Vec<usize> },
    LnClamped { a: VarId, floor: f64 },
    Scale { a: VarId, c: f64 },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Wengert tape: records ops during the forward pass, replays them in
/// reverse for gradients. Built fresh for every forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> VarId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    /// Record a constant/parameter value on the tape.
    pub fn leaf(&mut self, value: Tensor) -> Result<VarId> {
        value.check_finite("leaf")?;
        Ok(self.push(Op::Leaf, value))
    }

    /// Matrix product. 1-D operands are treated as single-row matrices.
    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (m, ka) = self.value(a).as_matrix()?;
        let (kb, n) = self.value(b).as_matrix()?;
        if ka != kb {
            return Err(Error::Dimension(format!(
                "matmul inner extents differ: lhs shape {:?}, rhs shape {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..ka {
                let aip = av[i * ka + p];
                if aip == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += aip * bv[p * n + j];
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Op::Matmul { a, b }, value))
    }

    /// Elementwise addition of same-shape tensors.
    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "add of mismatched shapes {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Add { a, b }, value))
    }

    /// Broadcast a 1-D bias over the rows of a matrix.
    pub fn add_row(&mut self, a: VarId, bias: VarId) -> Result<VarId> {
        let (m, n) = self.value(a).as_matrix()?;
        let bshape = self.value(bias).shape().to_vec();
        if bshape != [n] {
            return Err(Error::Dimension(format!(
                "row-broadcast add: matrix shape {:?}, bias shape {:?}",
                self.value(a).shape(),
                bshape
            )));
        }
        let bv = self.value(bias).data().to_vec();
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[i % n])
            .collect();
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(Op::AddRow { a, bias }, value))
    }

    /// Elementwise max(0, x). Gradient at exactly 0 is defined as 0.
    pub fn relu(&mut self, a: VarId) -> Result<VarId> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x.max(0.0)).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Relu { a }, value))
    }

    /// Gradient reversal: forward identity, backward multiplies by -1.
    pub fn grl(&mut self, a: VarId) -> Result<VarId> {
        let value = self.value(a).clone();
        Ok(self.push(Op::Grl { a }, value))
    }

    /// Row-wise softmax with max-subtraction. A 1-D input is one row.
    pub fn softmax(&mut self, a: VarId) -> Result<VarId> {
        let (m, n) = self.value(a).as_matrix()?;
        if n < 2 {
            return Err(Error::Arity(format!(
                "softmax needs at least 2 classes, got shape {:?}",
                self.value(a).shape()
            )));
        }
        let av = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..n {
                let e = (row[j] - mx).exp();
                out[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                out[i * n + j] /= sum;
            }
        }
        let value = Tensor::new(self.value(a).shape().to_vec(), out)?;
        Ok(self.push(Op::Softmax { a }, value))
    }

    /// Mean over all elements, producing a scalar.
    pub fn reduce_mean(&mut self, a: VarId) -> Result<VarId> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::Arity("reduce_mean of empty tensor".into()));
        }
        let mean = v.data().iter().sum::<f64>() / v.len() as f64;
        let value = Tensor::scalar(mean)?;
        Ok(self.push(Op::ReduceMean { a }, value))
    }

    /// Pick one element per row: out[i] = a[i, idx[i]].
    pub fn gather_rows(&mut self, a: VarId, idx: &[usize]) -> Result<VarId> {
        let (m, n) = self.value(a).as_matrix()?;
        if idx.len() != m {
            return Err(Error::Dimension(format!(
                "gather_rows: {m} rows but {} indices",
                idx.len()
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= n) {
            return Err(Error::Label(format!(
                "gather_rows index {bad} out of range for {n} columns"
            )));
        }
        let av = self.value(a).data();
        let data: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| av[i * n + j]).collect();
        let value = Tensor::new(vec![m], data)?;
        Ok(self.push(Op::GatherRows { a, idx: idx.to_vec() }, value))
    }

    /// Elementwise ln(max(x, floor)). Backward is 1/x above the floor and 0
    /// below it (the clamp makes the value locally constant there).
    pub fn ln_clamped(&mut self, a: VarId, floor: f64) -> Result<VarId> {
        if !(floor > 0.0) {
            return Err(Error::Contract(format!(
                "ln_clamped floor must be positive, got {floor}"
            )));
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|x| x.max(floor).ln())
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::LnClamped { a, floor }, value))
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, a: VarId, c: f64) -> Result<VarId> {
        if !c.is_finite() {
            return Err(Error::NonFinite(format!("scale constant {c}")));
        }
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x * c).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Scale { a, c }, value))
    }

    /// Reverse pass from a scalar root. Returns per-node gradients; nodes the
    /// root does not depend on get an exact zero gradient.
    /// Distance of the recorded computation to its nearest point of
    /// non-differentiability: the smallest |x| over all ReLU inputs and the
    /// smallest |x - floor| over all clamped-log inputs. Infinity when the
    /// tape contains neither. Useful for excluding kink-adjacent points
    /// from finite-difference comparisons.
    pub fn min_kink_distance(&self) -> f64 {
        let mut min = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu { a } => {
                    for &x in self.nodes[*a].value.data() {
                        min = min.min(x.abs());
                    }
                }
                Op::LnClamped { a, floor } => {
                    for &x in self.nodes[*a].value.data() {
                        min = min.min((x - floor).abs());
                    }
                }
                _ => {}
            }
        }
        min
    }

    pub fn backward(&mut self, root: VarId) -> Result<Gradients> {
        if root >= self.nodes.len() {
            return Err(Error::Contract(format!("backward root {root} not on tape")));
        }
        if !self.value(root).is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        grads[root][0] = 1.0;

        for id in (0..=root).rev() {
            // split off the current gradient so inputs can be accumulated
            let g = std::mem::take(&mut grads[id]);
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (a, b) = (*a, *b);
                    let (m, k) = self.value(a).as_matrix()?;
                    let (_, n) = self.value(b).as_matrix()?;
                    let av = self.nodes[a].value.data();
                    let bv = self.nodes[b].value.data();
                    // dA = G · B^T
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * bv[p * n + j];
                            }
                            grads[a][i * k + p] += acc;
                        }
                    }
                    // dB = A^T · G
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += av[i * k + p] * g[i * n + j];
                            }
                            grads[b][p * n + j] += acc;
                        }
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    for (i, gv) in g.iter().enumerate() {
                        grads[a][i] += gv;
                    }
                    for (i, gv) in g.iter().enumerate() {
                        grads[b][i] += gv;
                    }
                }
                Op::AddRow { a, bias } => {
                    let (a, bias) = (*a, *bias);
                    let n = self.nodes[bias].value.len();
                    for (i, gv) in g.iter().enumerate() {
                        grads[a][i] += gv;
                        grads[bias][i % n] += gv;
                    }
                }
                Op::Relu { a } => {
                    let a = *a;
                    let inp = self.nodes[a].value.data();
                    for (i, gv) in g.iter().enumerate() {
                        if inp[i] > 0.0 {
                            grads[a][i] += gv;
                        }
                    }
                }
                Op::Grl { a } => {
                    let a = *a;
                    for (i, gv) in g.iter().enumerate() {
                        grads[a][i] += -gv;
                    }
                }
                Op::Softmax { a } => {
                    let a = *a;
                    let (m, n) = self.nodes[id].value.as_matrix()?;
                    let y = self.nodes[id].value.data();
                    // dx = y * (g - <g, y>) per row
                    for i in 0..m {
                        let row_y = &y[i * n..(i + 1) * n];
                        let row_g = &g[i * n..(i + 1) * n];
                        let dot: f64 = row_y.iter().zip(row_g).map(|(y, g)| y * g).sum();
                        for j in 0..n {
                            grads[a][i * n + j] += row_y[j] * (row_g[j] - dot);
                        }
                    }
                }
                Op::ReduceMean { a } => {
                    let a = *a;
                    let count = self.nodes[a].value.len() as f64;
                    let share = g[0] / count;
                    for gv in grads[a].iter_mut() {
                        *gv += share;
                    }
                }
                Op::GatherRows { a, idx } => {
                    let a = *a;
                    let (_, n) = self.nodes[a].value.as_matrix()?;
                    for (i, &j) in idx.clone().iter().enumerate() {
                        grads[a][i * n + j] += g[i];
                    }
                }
                Op::LnClamped { a, floor } => {
                    let (a, floor) = (*a, *floor);
                    let inp = self.nodes[a].value.data();
                    for (i, gv) in g.iter().enumerate() {
                        if inp[i] > floor {
                            grads[a][i] += gv / inp[i];
                        }
                    }
                }
                Op::Scale { a, c } => {
                    let (a, c) = (*a, *c);
                    for (i, gv) in g.iter().enumerate() {
                        grads[a][i] += gv * c;
                    }
                }
            }
            // put the gradient back so it stays queryable after the sweep
            grads[id] = g;
        }

        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Gradients of a scalar root with respect to every tape node.
pub struct Gradients {
    grads: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient tensor w.r.t. the given node (exact zeros if unreachable).
    pub fn wrt(&self, id: VarId) -> Tensor {
        Tensor {
            shape: self.shapes[id].clone(),
            data: self.grads[id].clone(),
        }
    }
}
