//! Tape-based reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value in a [`Graph`] is a 2-D matrix. Scalars are `1 x 1`, column
//! vectors `n x 1`. Binary element-wise operations broadcast in the numpy
//! sense along either axis whose extent is 1.
//!
//! A graph is built fresh for each forward pass and dropped afterwards.
//! Leaves created with [`Graph::param`] track gradients, leaves created with
//! [`Graph::constant`] do not, and nodes that depend only on constants are
//! skipped during the backward sweep.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

pub type Matrix = Array2<f64>;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LogClamp(Var, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    RepeatRows(Var),
    SumCols(Var),
    Sum(Var),
    Mean(Var),
    MaxOf(Vec<Var>),
    PickPerRow(Var, Vec<usize>),
    EmbedRows(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
}

/// A computation graph recording operations for a single backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the output with respect to `v`; zeros when `v` did not
    /// influence the output.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Matrix::zeros(self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => Matrix::zeros(self.shapes[v.0]),
        }
    }
}

fn shape(m: &Matrix) -> (usize, usize) {
    (m.nrows(), m.ncols())
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("incompatible broadcast shapes {a:?} and {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

fn bview(m: &Matrix, to: (usize, usize)) -> ArrayView2<'_, f64> {
    m.broadcast(to).expect("broadcast checked by broadcast_shape")
}

/// Sum `g` down to `to`, undoing a broadcast.
fn reduce_to(g: Matrix, to: (usize, usize)) -> Matrix {
    let mut g = g;
    if to.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if to.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax of a matrix.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Row-wise log-softmax of a matrix.
pub fn log_softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// A leaf whose gradient is wanted.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Matrix::from_elem((1, 1), value))
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(shape(m), (1, 1));
        m[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape(self.value(v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let t = self.tracked(&[a, b]);
        self.push(value, Op::MatMul(a, b), t)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (va, vb) = (self.value(a), self.value(b));
        let out = broadcast_shape(shape(va), shape(vb));
        let mut value = Matrix::zeros(out);
        Zip::from(&mut value)
            .and(&bview(va, out))
            .and(&bview(vb, out))
            .for_each(|o, &x, &y| *o = f(x, y));
        value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary(a, b, |x, y| x + y);
        let t = self.tracked(&[a, b]);
        self.push(value, Op::Add(a, b), t)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary(a, b, |x, y| x - y);
        let t = self.tracked(&[a, b]);
        self.push(value, Op::Sub(a, b), t)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary(a, b, |x, y| x * y);
        let t = self.tracked(&[a, b]);
        self.push(value, Op::Mul(a, b), t)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        let t = self.tracked(&[a]);
        self.push(value, Op::Scale(a, k), t)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) + k;
        let t = self.tracked(&[a]);
        self.push(value, Op::AddScalar(a), t)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let t = self.tracked(&[a]);
        self.push(value, Op::Sigmoid(a), t)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let t = self.tracked(&[a]);
        self.push(value, Op::Tanh(a), t)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let t = self.tracked(&[a]);
        self.push(value, Op::Relu(a), t)
    }

    /// `ln(max(a, floor))`; the gradient is zero where the floor is active.
    pub fn log_clamp(&mut self, a: Var, floor: f64) -> Var {
        let value = self.value(a).mapv(|x| x.max(floor).ln());
        let t = self.tracked(&[a]);
        self.push(value, Op::LogClamp(a, floor), t)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let t = self.tracked(&[a]);
        self.push(value, Op::SoftmaxRows(a), t)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let value = log_softmax_rows(self.value(a));
        let t = self.tracked(&[a]);
        self.push(value, Op::LogSoftmaxRows(a), t)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        let t = self.tracked(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), t)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("column counts must agree");
        let t = self.tracked(parts);
        self.push(value, Op::ConcatRows(parts.to_vec()), t)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        let t = self.tracked(&[a]);
        self.push(value, Op::SliceCols(a, start, end), t)
    }

    /// Repeat a `1 x n` row `rows` times.
    pub fn repeat_rows(&mut self, a: Var, rows: usize) -> Var {
        let v = self.value(a);
        assert_eq!(v.nrows(), 1, "repeat_rows expects a single row");
        let value = v.broadcast((rows, v.ncols())).unwrap().to_owned();
        let t = self.tracked(&[a]);
        self.push(value, Op::RepeatRows(a), t)
    }

    /// Per-row sum, producing an `m x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let t = self.tracked(&[a]);
        self.push(value, Op::SumCols(a), t)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::from_elem((1, 1), self.value(a).sum());
        let t = self.tracked(&[a]);
        self.push(value, Op::Sum(a), t)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Matrix::from_elem((1, 1), v.sum() / v.len() as f64);
        let t = self.tracked(&[a]);
        self.push(value, Op::Mean(a), t)
    }

    /// Element-wise maximum over equally shaped inputs. Ties route the
    /// gradient to the earliest input.
    pub fn max_of(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "max of nothing");
        let mut value = self.value(parts[0]).clone();
        for p in &parts[1..] {
            Zip::from(&mut value)
                .and(self.value(*p))
                .for_each(|m, &x| *m = m.max(x));
        }
        let t = self.tracked(parts);
        self.push(value, Op::MaxOf(parts.to_vec()), t)
    }

    /// `out[i] = a[i, cols[i]]`, an `m x 1` column.
    pub fn pick_per_row(&mut self, a: Var, cols: &[usize]) -> Var {
        let v = self.value(a);
        assert_eq!(v.nrows(), cols.len());
        let value = Matrix::from_shape_fn((cols.len(), 1), |(i, _)| v[[i, cols[i]]]);
        let t = self.tracked(&[a]);
        self.push(value, Op::PickPerRow(a, cols.to_vec()), t)
    }

    /// Row lookup into an embedding table.
    pub fn embed_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let v = self.value(table);
        let value = v.select(Axis(0), ids);
        let t = self.tracked(&[table]);
        self.push(value, Op::EmbedRows(table, ids.to_vec()), t)
    }

    /// Reverse sweep from `output`, seeded with ones.
    pub fn backward(&self, output: Var) -> Gradients {
        let n = output.0 + 1;
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Matrix::ones(shape(&self.nodes[output.0].value)));

        let accumulate = |grads: &mut Vec<Option<Matrix>>, v: Var, g: Matrix| {
            if !self.nodes[v.0].tracked {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        };

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let va = self.value(*a);
                    let vb = self.value(*b);
                    if self.nodes[a.0].tracked {
                        accumulate(&mut grads, *a, g.dot(&vb.t()));
                    }
                    if self.nodes[b.0].tracked {
                        accumulate(&mut grads, *b, va.t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    let (sa, sb) = (self.shape(*a), self.shape(*b));
                    accumulate(&mut grads, *b, reduce_to(g.clone(), sb));
                    accumulate(&mut grads, *a, reduce_to(g, sa));
                }
                Op::Sub(a, b) => {
                    let (sa, sb) = (self.shape(*a), self.shape(*b));
                    accumulate(&mut grads, *b, reduce_to(-&g, sb));
                    accumulate(&mut grads, *a, reduce_to(g, sa));
                }
                Op::Mul(a, b) => {
                    let out = shape(&g);
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.nodes[a.0].tracked {
                        let ga = &g * &bview(vb, out);
                        accumulate(&mut grads, *a, reduce_to(ga, shape(va)));
                    }
                    if self.nodes[b.0].tracked {
                        let gb = &g * &bview(va, out);
                        accumulate(&mut grads, *b, reduce_to(gb, shape(vb)));
                    }
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, g * *k),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Sigmoid(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(y).for_each(|d, &s| *d *= s * (1.0 - s));
                    accumulate(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(y).for_each(|d, &t| *d *= 1.0 - t * t);
                    accumulate(&mut grads, *a, d);
                }
                Op::Relu(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(self.value(*a))
                        .for_each(|d, &x| {
                            if x <= 0.0 {
                                *d = 0.0
                            }
                        });
                    accumulate(&mut grads, *a, d);
                }
                Op::LogClamp(a, floor) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                        *d = if x > *floor { *d / x } else { 0.0 };
                    });
                    accumulate(&mut grads, *a, d);
                }
                Op::SoftmaxRows(a) => {
                    let mut d = &g * y;
                    let dot = d.sum_axis(Axis(1)).insert_axis(Axis(1));
                    d -= &(y * &dot);
                    accumulate(&mut grads, *a, d);
                }
                Op::LogSoftmaxRows(a) => {
                    let total = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let probs = y.mapv(f64::exp);
                    let d = g - &probs * &total;
                    accumulate(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        if self.nodes[p.0].tracked {
                            let piece = g.slice(s![.., start..start + w]).to_owned();
                            accumulate(&mut grads, *p, piece);
                        }
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = self.shape(*p).0;
                        if self.nodes[p.0].tracked {
                            let piece = g.slice(s![start..start + h, ..]).to_owned();
                            accumulate(&mut grads, *p, piece);
                        }
                        start += h;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let mut d = Matrix::zeros(self.shape(*a));
                    d.slice_mut(s![.., *start..*end]).assign(&g);
                    accumulate(&mut grads, *a, d);
                }
                Op::RepeatRows(a) => {
                    accumulate(&mut grads, *a, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::SumCols(a) => {
                    let sa = self.shape(*a);
                    accumulate(&mut grads, *a, g.broadcast(sa).unwrap().to_owned());
                }
                Op::Sum(a) => {
                    let sa = self.shape(*a);
                    accumulate(&mut grads, *a, Matrix::from_elem(sa, g[[0, 0]]));
                }
                Op::Mean(a) => {
                    let sa = self.shape(*a);
                    let k = g[[0, 0]] / (sa.0 * sa.1) as f64;
                    accumulate(&mut grads, *a, Matrix::from_elem(sa, k));
                }
                Op::MaxOf(parts) => {
                    let mut claimed = Array2::from_elem(shape(y), false);
                    for p in parts {
                        let mut d = Matrix::zeros(shape(y));
                        Zip::from(&mut d)
                            .and(&mut claimed)
                            .and(self.value(*p))
                            .and(y)
                            .and(&g)
                            .for_each(|d, c, &x, &m, &gv| {
                                if !*c && x == m {
                                    *c = true;
                                    *d = gv;
                                }
                            });
                        accumulate(&mut grads, *p, d);
                    }
                }
                Op::PickPerRow(a, cols) => {
                    let mut d = Matrix::zeros(self.shape(*a));
                    for (i, &c) in cols.iter().enumerate() {
                        d[[i, c]] = g[[i, 0]];
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::EmbedRows(table, ids) => {
                    let mut d = Matrix::zeros(self.shape(*table));
                    for (i, &id) in ids.iter().enumerate() {
                        let mut row = d.row_mut(id);
                        row += &g.row(i);
                    }
                    accumulate(&mut grads, *table, d);
                }
            }
        }

        Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| shape(&n.value)).collect(),
        }
    }
}
