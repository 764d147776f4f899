//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Nodes are
//! appended after their inputs, so walking the node list backwards is a
//! valid topological order for the adjoint sweep.

use ndarray::{s, Array2, Axis, Zip};

use super::params::{ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    LogSoftmax(Var),
    LogSigmoid(Var),
    SumCols(Var),
    SumAll(Var),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    Gather(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    CosineRows(Var, Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: Vec<(ParamId, Var)>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Array2<f64>>>,
    bound: Vec<(ParamId, Var)>,
}

impl Grads {
    pub fn of(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of every parameter bound during the forward pass.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Array2<f64>)> {
        self.bound
            .iter()
            .filter_map(|(id, v)| self.grads[v.0].as_ref().map(|g| (*id, g)))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a parameter as a leaf; repeated binds return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some((_, v)) = self.bound.iter().find(|(p, _)| *p == id) {
            return *v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf);
        self.bound.push((id, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a + b` where `b` is a single row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::AddRow(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) / self.value(b);
        self.push(out, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) * k;
        self.push(out, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) + k;
        self.push(out, Op::AddScalar(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).mapv(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| v * v);
        self.push(out, Op::Square(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).mapv(|v| v.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        self.push(out, Op::LogSoftmax(a))
    }

    /// Numerically stable `ln σ(a)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(log_sigmoid);
        self.push(out, Op::LogSigmoid(a))
    }

    /// Sums each row into an `r × 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(out, Op::SumCols(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat row counts agree");
        self.push(out, Op::Concat(parts.to_vec()))
    }

    /// Columns `start..end`.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(out, Op::Slice(a, start, end))
    }

    /// Rows of `a` in the order given by `rows` (repeats allowed).
    pub fn gather(&mut self, a: Var, rows: &[usize]) -> Var {
        let out = self.value(a).select(Axis(0), rows);
        self.push(out, Op::Gather(a, rows.to_vec()))
    }

    /// `out[i] = a[i, cols[i]]` as an `r × 1` column.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Var {
        let va = self.value(a);
        let out = Array2::from_shape_fn((cols.len(), 1), |(i, _)| va[[i, cols[i]]]);
        self.push(out, Op::Pick(a, cols.to_vec()))
    }

    /// Row-wise cosine similarity; zero-norm rows yield 0 and are counted.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> (Var, usize) {
        let (va, vb) = (self.value(a), self.value(b));
        let mut degenerate = 0;
        let out = Array2::from_shape_fn((va.nrows(), 1), |(i, _)| {
            let (ra, rb) = (va.row(i), vb.row(i));
            let (na, nb) = (ra.dot(&ra).sqrt(), rb.dot(&rb).sqrt());
            if na == 0.0 || nb == 0.0 {
                degenerate += 1;
                0.0
            } else {
                ra.dot(&rb) / (na * nb)
            }
        });
        (self.push(out, Op::CosineRows(a, b)), degenerate)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, root: Var) -> Grads {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::ones(self.value(root).raw_dim()));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads {
            grads,
            bound: self.bound.clone(),
        }
    }

    fn propagate(&self, idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[idx];
        let val = |v: &Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                accumulate(grads, *a, g.dot(&val(b).t()));
                accumulate(grads, *b, val(a).t().dot(g));
            }
            Op::AddRow(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g * val(b));
                accumulate(grads, *b, g * val(a));
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(a), val(b));
                accumulate(grads, *a, g / vb);
                let mut gb = g * va;
                Zip::from(&mut gb).and(vb).for_each(|x, d| *x = -*x / (d * d));
                accumulate(grads, *b, gb);
            }
            Op::Scale(a, k) => accumulate(grads, *a, g * *k),
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::LeakyRelu(a, slope) => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(val(a)).for_each(|x, v| {
                    if *v <= 0.0 {
                        *x *= slope
                    }
                });
                accumulate(grads, *a, ga);
            }
            Op::Exp(a) => accumulate(grads, *a, g * &node.value),
            Op::Square(a) => accumulate(grads, *a, g * val(a) * 2.0),
            Op::Clamp(a, lo, hi) => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(val(a)).for_each(|x, v| {
                    if *v < *lo || *v > *hi {
                        *x = 0.0
                    }
                });
                accumulate(grads, *a, ga);
            }
            Op::LogSoftmax(a) => {
                let mut ga = g.clone();
                for (mut row, (out, grow)) in ga
                    .rows_mut()
                    .into_iter()
                    .zip(node.value.rows().into_iter().zip(g.rows()))
                {
                    let total = grow.sum();
                    Zip::from(&mut row)
                        .and(&out)
                        .for_each(|x, o| *x -= o.exp() * total);
                }
                accumulate(grads, *a, ga);
            }
            Op::LogSigmoid(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga)
                    .and(val(a))
                    .for_each(|x, v| *x *= sigmoid(-*v));
                accumulate(grads, *a, ga);
            }
            Op::SumCols(a) => {
                let va = val(a);
                let ga = Array2::from_shape_fn(va.raw_dim(), |(i, _)| g[[i, 0]]);
                accumulate(grads, *a, ga);
            }
            Op::SumAll(a) => {
                accumulate(grads, *a, Array2::from_elem(val(a).raw_dim(), g[[0, 0]]));
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = val(p).ncols();
                    accumulate(grads, *p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::Slice(a, start, end) => {
                let mut ga = Array2::zeros(val(a).raw_dim());
                ga.slice_mut(s![.., *start..*end]).assign(g);
                accumulate(grads, *a, ga);
            }
            Op::Gather(a, rows) => {
                let mut ga = Array2::zeros(val(a).raw_dim());
                for (i, &r) in rows.iter().enumerate() {
                    let mut dst = ga.row_mut(r);
                    dst += &g.row(i);
                }
                accumulate(grads, *a, ga);
            }
            Op::Pick(a, cols) => {
                let mut ga = Array2::zeros(val(a).raw_dim());
                for (i, &c) in cols.iter().enumerate() {
                    ga[[i, c]] += g[[i, 0]];
                }
                accumulate(grads, *a, ga);
            }
            Op::CosineRows(a, b) => {
                let (va, vb) = (val(a), val(b));
                let mut ga = Array2::zeros(va.raw_dim());
                let mut gb = Array2::zeros(vb.raw_dim());
                for i in 0..va.nrows() {
                    let (ra, rb) = (va.row(i), vb.row(i));
                    let (na, nb) = (ra.dot(&ra).sqrt(), rb.dot(&rb).sqrt());
                    if na == 0.0 || nb == 0.0 {
                        continue;
                    }
                    let c = node.value[[i, 0]];
                    let gi = g[[i, 0]];
                    let inv = 1.0 / (na * nb);
                    ga.row_mut(i)
                        .assign(&((&rb * inv - &ra * (c / (na * na))) * gi));
                    gb.row_mut(i)
                        .assign(&((&ra * inv - &rb * (c / (nb * nb))) * gi));
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}
