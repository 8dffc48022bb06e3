//! Reverse-mode differentiation over a linear tape of vector operations.
//!
//! Nodes are appended in evaluation order, so the tape is topologically sorted
//! by construction and the backward sweep is a single reverse pass. Parameters
//! are read from a borrowed [`ParamSet`]; their gradients are collected in a
//! [`Gradients`] buffer that the caller folds back into the set.

use rand::Rng;

use super::tensor::{ParamId, ParamSet};
use crate::crf::{self, CrfParams, EmissionMatrix};
use crate::error::{Error, Result};

/// A value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
enum Bias {
    None,
    Param(ParamId),
    Var(Var),
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Row { param: ParamId, row: usize },
    Affine { w: ParamId, x: Var, bias: Bias },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    Dropout { x: Var, mask: Vec<f64> },
    Sum(Var),
    Dot(Var, Var),
    WeightedSum { weights: Var, items: Vec<Var> },
    LstmState { gates: Var, c_prev: Option<Var> },
    LstmHidden { gates: Var, c: Var },
    CrfNll(Box<CrfNode>),
}

#[derive(Debug)]
struct CrfNode {
    rows: Vec<Var>,
    transitions: ParamId,
    start: ParamId,
    end: ParamId,
    grads: crf::CrfGradients,
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Per-parameter gradient buffers produced by [`Tape::backward`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_deref().map(|g| (ParamId(i), g)))
    }

    fn slot(&mut self, id: ParamId, len: usize) -> &mut [f64] {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        self.grads[id.0].get_or_insert_with(|| vec![0.0; len])
    }
}

/// Records operations against a frozen parameter snapshot.
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    consumed: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(1024),
            consumed: false,
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn param_needs(&self, id: ParamId) -> bool {
        self.params.get(id).requires_grad
    }

    fn push(&mut self, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, values: Vec<f64>) -> Var {
        self.push(values, Op::Constant, false)
    }

    pub fn zeros(&mut self, len: usize) -> Var {
        self.constant(vec![0.0; len])
    }

    /// Whole parameter tensor as a flat vector.
    pub fn param(&mut self, id: ParamId) -> Var {
        let t = self.params.get(id);
        let needs = t.requires_grad;
        self.push(t.values().to_vec(), Op::Param(id), needs)
    }

    /// One row of an embedding matrix. The frozen row reads as a constant.
    pub fn row(&mut self, id: ParamId, row: usize) -> Result<Var> {
        let t = self.params.get(id);
        if row >= t.rows() {
            return Err(Error::Index {
                index: row,
                len: t.rows(),
            });
        }
        let value = t.row(row).to_vec();
        if t.frozen_row() == Some(row) {
            return Ok(self.push(value, Op::Constant, false));
        }
        let needs = t.requires_grad;
        Ok(self.push(value, Op::Row { param: id, row }, needs))
    }

    /// `W x + b` with an optional parameter bias.
    pub fn affine(&mut self, w: ParamId, x: Var, b: Option<ParamId>) -> Result<Var> {
        let bias = match b {
            Some(id) => Bias::Param(id),
            None => Bias::None,
        };
        self.affine_impl(w, x, bias)
    }

    /// `W x + base` where `base` is a recorded vector.
    pub fn affine_onto(&mut self, w: ParamId, x: Var, base: Var) -> Result<Var> {
        self.affine_impl(w, x, Bias::Var(base))
    }

    fn affine_impl(&mut self, w: ParamId, x: Var, bias: Bias) -> Result<Var> {
        let wt = self.params.get(w);
        let (m, k) = (wt.rows(), wt.cols());
        let xv = &self.nodes[x.0].value;
        if wt.shape().len() != 2 || xv.len() != k {
            return Err(Error::dimension("affine W·x", wt.shape(), &[xv.len()]));
        }
        let mut out = match bias {
            Bias::None => vec![0.0; m],
            Bias::Param(b) => {
                let bt = self.params.get(b);
                if bt.len() != m {
                    return Err(Error::dimension("affine bias", &[m], bt.shape()));
                }
                bt.values().to_vec()
            }
            Bias::Var(v) => {
                let bv = &self.nodes[v.0].value;
                if bv.len() != m {
                    return Err(Error::dimension("affine base", &[m], &[bv.len()]));
                }
                bv.clone()
            }
        };
        let wv = wt.values();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &wv[i * k..(i + 1) * k];
            *o += row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
        }
        let needs = self.param_needs(w)
            || self.needs(x)
            || match bias {
                Bias::None => false,
                Bias::Param(b) => self.param_needs(b),
                Bias::Var(v) => self.needs(v),
            };
        Ok(self.push(out, Op::Affine { w, x, bias }, needs))
    }

    fn same_len(&self, context: &'static str, a: Var, b: Var) -> Result<usize> {
        let (la, lb) = (self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        if la != lb {
            return Err(Error::dimension(context, &[la], &[lb]));
        }
        Ok(la)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("add", a, b)?;
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("mul", a, b)?;
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| x * factor).collect();
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, factor), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.iter().map(|&x| sigmoid(x)).collect();
        let needs = self.needs(a);
        self.push(value, Op::Sigmoid(a), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        let needs = self.needs(a);
        self.push(value, Op::Tanh(a), needs)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let value = softmax(&self.nodes[a.0].value)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Softmax(a), needs))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Domain("concat of an empty list".into()));
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let total = parts.iter().map(|p| self.nodes[p.0].value.len()).sum();
        let mut value = Vec::with_capacity(total);
        for p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), needs))
    }

    /// Inverted dropout; identity when `training` is false or `p` is zero.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Domain(format!("dropout rate {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.nodes[x.0].value.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let value = self.nodes[x.0]
            .value
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let needs = self.needs(x);
        Ok(self.push(value, Op::Dropout { x, mask }, needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = vec![self.nodes[a.0].value.iter().sum()];
        let needs = self.needs(a);
        self.push(value, Op::Sum(a), needs)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("dot", a, b)?;
        let value = vec![self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .sum()];
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Dot(a, b), needs))
    }

    /// `Σ_j weights[j] · items[j]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        let w = &self.nodes[weights.0].value;
        if w.len() != items.len() || items.is_empty() {
            return Err(Error::dimension("weighted sum", &[w.len()], &[items.len()]));
        }
        let width = self.nodes[items[0].0].value.len();
        let mut value = vec![0.0; width];
        for (j, item) in items.iter().enumerate() {
            let iv = &self.nodes[item.0].value;
            if iv.len() != width {
                return Err(Error::dimension("weighted sum item", &[width], &[iv.len()]));
            }
            let wj = w[j];
            value.iter_mut().zip(iv).for_each(|(o, x)| *o += wj * x);
        }
        let needs = self.needs(weights) || items.iter().any(|&i| self.needs(i));
        Ok(self.push(
            value,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
            needs,
        ))
    }

    /// LSTM cell state `c = σ(z_f)⊙c_prev + σ(z_i)⊙tanh(z_g)` from stacked
    /// pre-activations `z = [z_i; z_f; z_g; z_o]`. A missing `c_prev` is zero.
    pub fn lstm_state(&mut self, gates: Var, c_prev: Option<Var>) -> Result<Var> {
        let z = &self.nodes[gates.0].value;
        if z.len() % 4 != 0 {
            return Err(Error::dimension("lstm gates", &[z.len()], &[4]));
        }
        let h = z.len() / 4;
        if let Some(c) = c_prev {
            let lc = self.nodes[c.0].value.len();
            if lc != h {
                return Err(Error::dimension("lstm cell state", &[h], &[lc]));
            }
        }
        let mut value = vec![0.0; h];
        for k in 0..h {
            let i = sigmoid(z[k]);
            let g = z[2 * h + k].tanh();
            let mut c = i * g;
            if let Some(cp) = c_prev {
                c += sigmoid(z[h + k]) * self.nodes[cp.0].value[k];
            }
            value[k] = c;
        }
        let needs = self.needs(gates) || c_prev.is_some_and(|c| self.needs(c));
        Ok(self.push(value, Op::LstmState { gates, c_prev }, needs))
    }

    /// LSTM output `h = σ(z_o)⊙tanh(c)`.
    pub fn lstm_hidden(&mut self, gates: Var, c: Var) -> Result<Var> {
        let z = &self.nodes[gates.0].value;
        let cv = &self.nodes[c.0].value;
        if z.len() != 4 * cv.len() {
            return Err(Error::dimension("lstm hidden", &[z.len()], &[4 * cv.len()]));
        }
        let h = cv.len();
        let value = (0..h)
            .map(|k| sigmoid(z[3 * h + k]) * cv[k].tanh())
            .collect();
        let needs = self.needs(gates) || self.needs(c);
        Ok(self.push(value, Op::LstmHidden { gates, c }, needs))
    }

    /// Linear-chain CRF negative log-likelihood of `gold` given emission rows.
    pub fn crf_nll(
        &mut self,
        rows: &[Var],
        transitions: ParamId,
        start: ParamId,
        end: ParamId,
        gold: &[usize],
    ) -> Result<Var> {
        let crf = CrfParams::from_tensors(
            self.params.get(transitions),
            self.params.get(start),
            self.params.get(end),
        )?;
        let k = crf.num_tags();
        let mut scores = Vec::with_capacity(rows.len() * k);
        for r in rows {
            let v = &self.nodes[r.0].value;
            if v.len() != k {
                return Err(Error::dimension("crf emission row", &[k], &[v.len()]));
            }
            scores.extend_from_slice(v);
        }
        let emissions = EmissionMatrix::new(rows.len(), k, scores)?;
        let (loss, grads) = crf::nll_with_gradients(&emissions, &crf, gold)?;
        let needs = rows.iter().any(|&r| self.needs(r))
            || self.param_needs(transitions)
            || self.param_needs(start)
            || self.param_needs(end);
        Ok(self.push(
            vec![loss],
            Op::CrfNll(Box::new(CrfNode {
                rows: rows.to_vec(),
                transitions,
                start,
                end,
                grads,
            })),
            needs,
        ))
    }

    /// Reverse sweep from a scalar `loss`. A tape can be swept only once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::State("backward already ran on this tape".into()));
        }
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::Domain(format!(
                "backward needs a scalar loss, got length {}",
                lv.len()
            )));
        }
        if !lv[0].is_finite() {
            return Err(Error::Domain(format!("non-finite loss {}", lv[0])));
        }
        self.consumed = true;

        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        grads[loss.0] = vec![1.0];
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            if grads[idx].is_empty() || !self.nodes[idx].needs_grad {
                continue;
            }
            let gy = std::mem::take(&mut grads[idx]);
            self.backprop_node(idx, &gy, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn backprop_node(&self, idx: usize, gy: &[f64], grads: &mut [Vec<f64>], out: &mut Gradients) {
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].needs_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = &mut grads[v.0];
            if slot.is_empty() {
                *slot = vec![0.0; nodes[v.0].value.len()];
            }
            f(slot);
        };
        let node = &nodes[idx];
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => {
                let len = self.params.get(*id).len();
                add_into(out.slot(*id, len), gy);
            }
            Op::Row { param, row } => {
                let t = self.params.get(*param);
                let c = t.cols();
                let slot = out.slot(*param, t.len());
                add_into(&mut slot[row * c..(row + 1) * c], gy);
            }
            Op::Affine { w, x, bias } => {
                let wt = self.params.get(*w);
                let k = wt.cols();
                let wv = wt.values();
                if needs(*x) {
                    acc(*x, &mut |dx| {
                        for (i, g) in gy.iter().enumerate() {
                            if *g != 0.0 {
                                let row = &wv[i * k..(i + 1) * k];
                                dx.iter_mut().zip(row).for_each(|(d, r)| *d += g * r);
                            }
                        }
                    });
                }
                if wt.requires_grad {
                    let xv = &nodes[x.0].value;
                    let slot = out.slot(*w, wt.len());
                    for (i, g) in gy.iter().enumerate() {
                        if *g != 0.0 {
                            let row = &mut slot[i * k..(i + 1) * k];
                            row.iter_mut().zip(xv).for_each(|(d, xj)| *d += g * xj);
                        }
                    }
                }
                match bias {
                    Bias::None => {}
                    Bias::Param(b) => {
                        if self.params.get(*b).requires_grad {
                            add_into(out.slot(*b, gy.len()), gy);
                        }
                    }
                    Bias::Var(v) => acc(*v, &mut |d| add_into(d, gy)),
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, gy));
                acc(*b, &mut |d| add_into(d, gy));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |d| {
                    d.iter_mut()
                        .zip(gy.iter().zip(bv))
                        .for_each(|(d, (g, y))| *d += g * y)
                });
                acc(*b, &mut |d| {
                    d.iter_mut()
                        .zip(gy.iter().zip(av))
                        .for_each(|(d, (g, x))| *d += g * x)
                });
            }
            Op::Scale(a, f) => acc(*a, &mut |d| {
                d.iter_mut().zip(gy).for_each(|(d, g)| *d += g * f)
            }),
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc(*a, &mut |d| {
                    d.iter_mut()
                        .zip(gy.iter().zip(y))
                        .for_each(|(d, (g, s))| *d += g * s * (1.0 - s))
                });
            }
            Op::Tanh(a) => {
                let y = &node.value;
                acc(*a, &mut |d| {
                    d.iter_mut()
                        .zip(gy.iter().zip(y))
                        .for_each(|(d, (g, t))| *d += g * (1.0 - t * t))
                });
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let inner: f64 = gy.iter().zip(y).map(|(g, s)| g * s).sum();
                acc(*a, &mut |d| {
                    d.iter_mut()
                        .zip(gy.iter().zip(y))
                        .for_each(|(d, (g, s))| *d += s * (g - inner))
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    let seg = &gy[offset..offset + len];
                    acc(*p, &mut |d| add_into(d, seg));
                    offset += len;
                }
            }
            Op::Dropout { x, mask } => acc(*x, &mut |d| {
                d.iter_mut()
                    .zip(gy.iter().zip(mask))
                    .for_each(|(d, (g, m))| *d += g * m)
            }),
            Op::Sum(a) => {
                let g = gy[0];
                acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g));
            }
            Op::Dot(a, b) => {
                let g = gy[0];
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |d| {
                    d.iter_mut().zip(bv).for_each(|(d, y)| *d += g * y)
                });
                acc(*b, &mut |d| {
                    d.iter_mut().zip(av).for_each(|(d, x)| *d += g * x)
                });
            }
            Op::WeightedSum { weights, items } => {
                if needs(*weights) {
                    let dw: Vec<f64> = items
                        .iter()
                        .map(|it| nodes[it.0].value.iter().zip(gy).map(|(x, g)| x * g).sum())
                        .collect();
                    acc(*weights, &mut |d| add_into(d, &dw));
                }
                let w = &nodes[weights.0].value;
                for (j, it) in items.iter().enumerate() {
                    let wj = w[j];
                    acc(*it, &mut |d| {
                        d.iter_mut().zip(gy).for_each(|(d, g)| *d += wj * g)
                    });
                }
            }
            Op::LstmState { gates, c_prev } => {
                let z = &nodes[gates.0].value;
                let h = gy.len();
                let cp = c_prev.map(|c| &nodes[c.0].value);
                acc(*gates, &mut |d| {
                    for k in 0..h {
                        let i = sigmoid(z[k]);
                        let g = z[2 * h + k].tanh();
                        d[k] += gy[k] * g * i * (1.0 - i);
                        d[2 * h + k] += gy[k] * i * (1.0 - g * g);
                        if let Some(cp) = cp {
                            let f = sigmoid(z[h + k]);
                            d[h + k] += gy[k] * cp[k] * f * (1.0 - f);
                        }
                    }
                });
                if let Some(c) = c_prev {
                    acc(*c, &mut |d| {
                        for k in 0..h {
                            d[k] += gy[k] * sigmoid(z[h + k]);
                        }
                    });
                }
            }
            Op::LstmHidden { gates, c } => {
                let z = &nodes[gates.0].value;
                let cv = &nodes[c.0].value;
                let h = cv.len();
                acc(*gates, &mut |d| {
                    for k in 0..h {
                        let o = sigmoid(z[3 * h + k]);
                        d[3 * h + k] += gy[k] * cv[k].tanh() * o * (1.0 - o);
                    }
                });
                acc(*c, &mut |d| {
                    for k in 0..h {
                        let o = sigmoid(z[3 * h + k]);
                        let t = cv[k].tanh();
                        d[k] += gy[k] * o * (1.0 - t * t);
                    }
                });
            }
            Op::CrfNll(crf_node) => {
                let g = gy[0];
                let cg = &crf_node.grads;
                let k = cg.start.len();
                for (t, r) in crf_node.rows.iter().enumerate() {
                    let seg = &cg.emissions[t * k..(t + 1) * k];
                    acc(*r, &mut |d| {
                        d.iter_mut().zip(seg).for_each(|(d, e)| *d += g * e)
                    });
                }
                for (id, src) in [
                    (crf_node.transitions, &cg.transitions),
                    (crf_node.start, &cg.start),
                    (crf_node.end, &cg.end),
                ] {
                    if self.params.get(id).requires_grad {
                        let slot = out.slot(id, src.len());
                        slot.iter_mut()
                            .zip(src.iter())
                            .for_each(|(d, s)| *d += g * s);
                    }
                }
            }
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}
