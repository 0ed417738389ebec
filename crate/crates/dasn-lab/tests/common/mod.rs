//! Shared helpers for the integration and acceptance suites: a replayable
//! random op-composition generator and a central finite-difference
//! gradient checker with kink exclusion.

#![allow(dead_code)]

use std::collections::HashMap;

use dasn_lab::autodiff::{Tape, Tensor, VarId};
use dasn_lab::error::Result;
use dasn_lab::losses::LossWeights;
use dasn_lab::model::{DasnConfig, DasnModel, FactorKind};
use dasn_lab::nn::Binding;
use dasn_lab::rng::Xoshiro256StarStar;
use dasn_lab::synthdata::Batch;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Coordinates whose perturbed evaluations pass within this distance of a
/// ReLU or clamped-log kink are excluded from the comparison.
pub const KINK_EXCLUSION: f64 = 1e-3;

/// One instruction of a replayable tape program. Operands index the node
/// list: leaves first (in order), then instruction outputs.
#[derive(Debug, Clone)]
pub enum Inst {
    Matmul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Relu(usize),
    Grl(usize),
    Softmax(usize),
    GatherRows(usize, Vec<usize>),
    LnClamped(usize, f64),
    Scale(usize, f64),
    ReduceMean(usize),
}

/// A randomly generated differentiable program: leaf tensors plus an
/// instruction list ending in a scalar.
#[derive(Debug, Clone)]
pub struct Program {
    pub leaves: Vec<Tensor>,
    pub insts: Vec<Inst>,
}

impl Program {
    /// Replay on a fresh tape. Returns the tape, the leaf var ids, and the
    /// root id (output of the final instruction).
    pub fn replay(&self, leaves: &[Tensor]) -> Result<(Tape, Vec<VarId>, VarId)> {
        let mut tape = Tape::new();
        let mut ids = Vec::new();
        for leaf in leaves {
            ids.push(tape.leaf(leaf.clone())?);
        }
        for inst in &self.insts {
            let id = match inst {
                Inst::Matmul(a, b) => tape.matmul(ids[*a], ids[*b])?,
                Inst::Add(a, b) => tape.add(ids[*a], ids[*b])?,
                Inst::AddRow(a, b) => tape.add_row(ids[*a], ids[*b])?,
                Inst::Relu(a) => tape.relu(ids[*a])?,
                Inst::Grl(a) => tape.grl(ids[*a])?,
                Inst::Softmax(a) => tape.softmax(ids[*a])?,
                Inst::GatherRows(a, idx) => tape.gather_rows(ids[*a], idx)?,
                Inst::LnClamped(a, floor) => tape.ln_clamped(ids[*a], *floor)?,
                Inst::Scale(a, c) => tape.scale(ids[*a], *c)?,
                Inst::ReduceMean(a) => tape.reduce_mean(ids[*a])?,
            };
            ids.push(id);
        }
        let root = *ids.last().expect("program has at least one node");
        Ok((tape, ids[..self.leaves.len()].to_vec(), root))
    }

    /// Scalar value plus the distance to the nearest kink of the whole
    /// computation, for a given leaf assignment.
    pub fn eval(&self, leaves: &[Tensor]) -> Result<(f64, f64)> {
        let (tape, _, root) = self.replay(leaves)?;
        Ok((tape.value(root).item()?, tape.min_kink_distance()))
    }
}

/// Generate a random program with up to `depth` non-root instructions,
/// matrix extents at most `max_extent`.
pub fn random_program(rng: &mut Xoshiro256StarStar, depth: usize, max_extent: usize) -> Program {
    let ext = |rng: &mut Xoshiro256StarStar| 1 + rng.below(max_extent);
    let mut leaves: Vec<Tensor> = Vec::new();
    let mut insts: Vec<Inst> = Vec::new();

    // Build with node handles (Leaf(i) | Out(i)) and resolve to the final
    // "leaves first, then outputs" numbering at the end, so new leaves can
    // be introduced at any point without shifting operand indices.
    #[derive(Clone, Copy)]
    enum H {
        Leaf(usize),
        Out(usize),
    }
    let mut raw: Vec<(InstKind, H, Option<H>, Vec<usize>, f64)> = Vec::new();
    #[derive(Clone, Copy)]
    enum InstKind {
        Matmul,
        Add,
        AddRow,
        Relu,
        Softmax,
        GatherRows,
        SoftmaxLn,
        Scale,
    }
    // (handle, (rows, cols), is one-dimensional)
    let mut nodes: Vec<(H, (usize, usize), bool)> = Vec::new();
    let r0 = ext(rng);
    let c0 = ext(rng);
    let data: Vec<f64> = (0..r0 * c0).map(|_| rng.uniform(-2.0, 2.0)).collect();
    leaves.push(Tensor::new(vec![r0, c0], data).unwrap());
    nodes.push((H::Leaf(0), (r0, c0), false));

    let steps = 1 + rng.below(depth);
    for _ in 0..steps {
        let pick = rng.below(nodes.len());
        let (h, (rows, cols), one_d) = nodes[pick];
        let kind = match rng.below(9) {
            0 => InstKind::Matmul,
            1 => InstKind::Add,
            2 => InstKind::AddRow,
            3 => InstKind::Relu,
            // GRL is excluded here: its backward pass negates gradients on
            // purpose, so finite differences cannot serve as its oracle. Its
            // contract has dedicated exact tests.
            4 => InstKind::Relu,
            5 if cols >= 2 => InstKind::Softmax,
            6 => InstKind::GatherRows,
            7 if cols >= 2 => InstKind::SoftmaxLn,
            _ => InstKind::Scale,
        };
        match kind {
            InstKind::Matmul => {
                let n = ext(rng);
                let data: Vec<f64> = (0..cols * n).map(|_| rng.uniform(-2.0, 2.0)).collect();
                leaves.push(Tensor::new(vec![cols, n], data).unwrap());
                let partner = H::Leaf(leaves.len() - 1);
                raw.push((InstKind::Matmul, h, Some(partner), vec![], 0.0));
                nodes.push((H::Out(raw.len() - 1), (if one_d { 1 } else { rows }, n), false));
            }
            InstKind::Add => {
                let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform(-2.0, 2.0)).collect();
                // the partner leaf must match the picked node's exact shape
                let shape = if one_d { vec![rows * cols] } else { vec![rows, cols] };
                leaves.push(Tensor::new(shape, data).unwrap());
                let partner = H::Leaf(leaves.len() - 1);
                raw.push((InstKind::Add, h, Some(partner), vec![], 0.0));
                nodes.push((H::Out(raw.len() - 1), (rows, cols), one_d));
            }
            InstKind::AddRow => {
                let data: Vec<f64> = (0..cols).map(|_| rng.uniform(-2.0, 2.0)).collect();
                leaves.push(Tensor::new(vec![cols], data).unwrap());
                let partner = H::Leaf(leaves.len() - 1);
                raw.push((InstKind::AddRow, h, Some(partner), vec![], 0.0));
                nodes.push((H::Out(raw.len() - 1), (if one_d { 1 } else { rows }, cols), false));
            }
            InstKind::Relu => {
                raw.push((InstKind::Relu, h, None, vec![], 0.0));
                nodes.push((H::Out(raw.len() - 1), (rows, cols), one_d));
            }
            InstKind::Softmax => {
                raw.push((InstKind::Softmax, h, None, vec![], 0.0));
                nodes.push((H::Out(raw.len() - 1), (rows, cols), one_d));
            }
            InstKind::GatherRows => {
                // one column index per row; output is a single row of length `rows`
                let idx: Vec<usize> = (0..rows).map(|_| rng.below(cols)).collect();
                raw.push((InstKind::GatherRows, h, None, idx, 0.0));
                nodes.push((H::Out(raw.len() - 1), (1, rows), true));
            }
            InstKind::SoftmaxLn => {
                raw.push((InstKind::Softmax, h, None, vec![], 0.0));
                let sm = H::Out(raw.len() - 1);
                nodes.push((sm, (rows, cols), one_d));
                raw.push((InstKind::SoftmaxLn, sm, None, vec![], 1e-12));
                nodes.push((H::Out(raw.len() - 1), (rows, cols), one_d));
            }
            InstKind::Scale => {
                let c = rng.uniform(-2.0, 2.0);
                raw.push((InstKind::Scale, h, None, vec![], c));
                nodes.push((H::Out(raw.len() - 1), (rows, cols), one_d));
            }
        }
    }

    // resolve handles: final numbering is leaves then instruction outputs
    let n_leaves = leaves.len();
    let resolve = |h: H| -> usize {
        match h {
            H::Leaf(i) => i,
            H::Out(i) => n_leaves + i,
        }
    };
    for (kind, a, b, idx, c) in raw {
        let a = resolve(a);
        let inst = match kind {
            InstKind::Matmul => Inst::Matmul(a, resolve(b.unwrap())),
            InstKind::Add => Inst::Add(a, resolve(b.unwrap())),
            InstKind::AddRow => Inst::AddRow(a, resolve(b.unwrap())),
            InstKind::Relu => Inst::Relu(a),
            InstKind::Softmax => Inst::Softmax(a),
            InstKind::GatherRows => Inst::GatherRows(a, idx),
            InstKind::SoftmaxLn => Inst::LnClamped(a, c),
            InstKind::Scale => Inst::Scale(a, c),
        };
        insts.push(inst);
    }
    // root: mean of the last produced node
    let last = n_leaves + insts.len().saturating_sub(1);
    let root_input = if insts.is_empty() { n_leaves - 1 } else { last };
    insts.push(Inst::ReduceMean(root_input));
    Program { leaves, insts }
}

/// Outcome of checking one program or model against finite differences.
pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / f64::max(1.0, a.abs().max(n.abs()))
}

/// Compare analytic gradients of a program against central differences on
/// every leaf coordinate, excluding kink-adjacent coordinates.
pub fn grad_check_program(program: &Program) -> GradCheck {
    let (mut tape, leaf_ids, root) = program.replay(&program.leaves).expect("replay");
    let grads = tape.backward(root).expect("backward");
    let mut result = GradCheck { checked: 0, skipped: 0, max_rel_err: 0.0 };
    for (li, id) in leaf_ids.iter().enumerate() {
        let analytic = grads.wrt(*id);
        for ci in 0..program.leaves[li].len() {
            let mut plus = program.leaves.clone();
            plus[li].data_mut()[ci] += FD_STEP;
            let mut minus = program.leaves.clone();
            minus[li].data_mut()[ci] -= FD_STEP;
            let (fp, kp) = program.eval(&plus).expect("eval+");
            let (fm, km) = program.eval(&minus).expect("eval-");
            if kp < KINK_EXCLUSION || km < KINK_EXCLUSION {
                result.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            result.checked += 1;
            result.max_rel_err = result.max_rel_err.max(rel_err(analytic.data()[ci], numeric));
        }
    }
    result
}

/// A toy model + batch for objective-level gradient checks.
pub struct ToyCase {
    pub model: DasnModel,
    pub batch: Batch,
    pub weights: LossWeights,
}

/// Random toy model (feature_dim <= 8, batch <= 4) with random factors and
/// a random consistent batch.
pub fn random_toy_case(rng: &mut Xoshiro256StarStar) -> ToyCase {
    let input_dim = 2 + rng.below(4);
    let feature_dim = 2 + rng.below(7); // 2..=8
    let hidden_dim = 2 + rng.below(5);
    let n_factors = 1 + rng.below(3);
    let all = [FactorKind::Identity, FactorKind::Environment, FactorKind::Sensor];
    let factors: Vec<FactorKind> = all[..n_factors].to_vec();
    let class_counts: Vec<usize> = factors.iter().map(|_| 2 + rng.below(3)).collect();
    let config = DasnConfig {
        input_dim,
        feature_dim,
        hidden_dim,
        factors: factors.clone(),
        class_counts: class_counts.clone(),
    };
    let model = DasnModel::init(config, rng.next_u64()).expect("toy model");

    let batch_size = 1 + rng.below(4);
    let x_data: Vec<f64> = (0..batch_size * input_dim).map(|_| rng.uniform(-1.5, 1.5)).collect();
    let x = Tensor::new(vec![batch_size, input_dim], x_data).unwrap();
    let y: Vec<usize> = (0..batch_size).map(|_| rng.below(2)).collect();
    let mut factor_labels = HashMap::new();
    for (kind, &n) in factors.iter().zip(class_counts.iter()) {
        let labels: Vec<usize> = (0..batch_size).map(|_| rng.below(n)).collect();
        factor_labels.insert(*kind, labels);
    }
    let batch = Batch { x, y, factor_labels };

    let mut weights = LossWeights::defaults();
    for kind in &factors {
        weights.set(*kind, rng.uniform(0.01, 0.2));
    }
    ToyCase { model, batch, weights }
}

/// The individual loss terms of a toy model, built without any gradient
/// reversal so central finite differences are a valid oracle. The training
/// objectives are signed combinations of exactly these terms (verified
/// separately by the decomposition tests), so checking them term-by-term
/// plus the exact GRL negation covers the full objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossTerm {
    SpoofCls,
    Sif(FactorKind),
    SecondaryCls(FactorKind),
}

pub fn case_terms(case: &ToyCase) -> Vec<LossTerm> {
    let mut terms = vec![LossTerm::SpoofCls];
    for &kind in &case.model.config.factors {
        terms.push(LossTerm::Sif(kind));
        terms.push(LossTerm::SecondaryCls(kind));
    }
    terms
}

fn term_root(
    model: &DasnModel,
    batch: &Batch,
    term: LossTerm,
) -> Result<(Tape, Binding, VarId)> {
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let x = tape.leaf(batch.x.clone())?;
    let features = model.encode(&mut tape, &mut binding, x)?;
    let root = match term {
        LossTerm::SpoofCls => {
            let logits = model.classify_spoof(&mut tape, &mut binding, features)?;
            dasn_lab::losses::spoof_cls_loss(&mut tape, logits, &batch.y)?
        }
        LossTerm::Sif(kind) => {
            let (_, logits) = model.head_forward(&mut tape, &mut binding, kind, features, false)?;
            dasn_lab::losses::sif_cls_loss(&mut tape, logits, batch.labels_for(kind)?)?
        }
        LossTerm::SecondaryCls(kind) => {
            let logits = model.secondary_classify(&mut tape, &mut binding, kind, features, false)?;
            dasn_lab::losses::secondary_cls_loss(&mut tape, logits, &batch.y)?
        }
    };
    Ok((tape, binding, root))
}

/// Check analytic parameter gradients of one GRL-free loss term against
/// central finite differences, over every model parameter coordinate.
pub fn grad_check_term(case: &ToyCase, term: LossTerm) -> GradCheck {
    let (mut tape, binding, root) = term_root(&case.model, &case.batch, term).expect("term");
    let grads = tape.backward(root).expect("backward");
    let by_name = binding.collect_grads(&grads);

    let mut result = GradCheck { checked: 0, skipped: 0, max_rel_err: 0.0 };
    let names: Vec<String> = case.model.params().iter().map(|(n, _)| n.clone()).collect();
    for name in names {
        let n_coords = {
            let params = case.model.params();
            params.iter().find(|(n, _)| *n == name).unwrap().1.len()
        };
        for ci in 0..n_coords {
            let eval_at = |delta: f64| -> (f64, f64) {
                let mut m = case.model.clone();
                for (n, t) in m.params_mut() {
                    if n == name {
                        t.data_mut()[ci] += delta;
                    }
                }
                let (tape, _, root) = term_root(&m, &case.batch, term).expect("term eval");
                (tape.value(root).item().expect("scalar"), tape.min_kink_distance())
            };
            let (fp, kp) = eval_at(FD_STEP);
            let (fm, km) = eval_at(-FD_STEP);
            if kp < KINK_EXCLUSION || km < KINK_EXCLUSION {
                result.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            let analytic = by_name.get(&name).map(|t| t.data()[ci]).unwrap_or(0.0);
            result.checked += 1;
            result.max_rel_err = result.max_rel_err.max(rel_err(analytic, numeric));
        }
    }
    result
}
