//! Recording tape for reverse-mode differentiation.
//!
//! Every operation on a [`Var`] appends a node to its [`Tape`]; node ids are
//! assigned in evaluation order, so a reverse sweep over ids is a valid
//! topological order for the backward pass. A tape supports exactly one
//! backward pass.

use std::cell::{Cell, Ref, RefCell};

use super::tensor::{Scalar, Tensor};
use super::NnError;

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulCol(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Silu(usize),
    Relu(usize),
    Square(usize),
    SumAll(usize),
    MeanAll(usize),
    SumCols(usize),
    Concat(Vec<usize>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Single-use recording of a forward computation.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Trainable leaf: gradients are computed for it.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: no gradient is ever computed for it.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn unary(&self, a: usize, op: Op<T>, f: impl FnOnce(&Tensor<T>) -> Tensor<T>) -> Var<'_, T> {
        let value = f(&self.nodes.borrow()[a].value);
        let rg = self.requires(&[a]);
        self.push(value, op, rg)
    }

    fn binary(&self, a: usize, b: usize, op: Op<T>, f: impl FnOnce(&Tensor<T>, &Tensor<T>) -> Tensor<T>) -> Var<'_, T> {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a].value, &nodes[b].value)
        };
        let rg = self.requires(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t, T>]) -> Var<'t, T> {
        assert!(!parts.is_empty(), "concat of nothing");
        let ids: Vec<usize> = parts.iter().map(|v| v.id).collect();
        let value = {
            let nodes = self.nodes.borrow();
            let rows = nodes[ids[0]].value.rows();
            let cols: usize = ids.iter().map(|&i| nodes[i].value.cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for &i in &ids {
                    let v = &nodes[i].value;
                    assert_eq!(v.rows(), rows, "concat row mismatch");
                    data.extend_from_slice(v.row(r));
                }
            }
            Tensor::new(rows, cols, data)
        };
        let rg = self.requires(&ids);
        self.push(value, Op::Concat(ids), rg)
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>, NnError> {
        let shape = loss.shape();
        if shape != (1, 1) {
            return Err(NnError::NonScalarLoss {
                rows: shape.0,
                cols: shape.1,
            });
        }
        self.backward_seeded(&[(loss, Tensor::scalar(T::one()))])
    }

    /// Reverse sweep with explicit output cotangents.
    ///
    /// Each `(var, seed)` pair adds `seed` to the gradient of `var` before the
    /// sweep, so externally computed gradients (e.g. a score-distillation
    /// direction on a generated sample) can be injected alongside a scalar loss.
    pub fn backward_seeded(&self, seeds: &[(Var<'_, T>, Tensor<T>)]) -> Result<Gradients<T>, NnError> {
        if self.consumed.replace(true) {
            return Err(NnError::TapeConsumed);
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        for (var, seed) in seeds {
            assert!(std::ptr::eq(var.tape, self), "seed var from another tape");
            assert_eq!(nodes[var.id].value.shape(), seed.shape(), "seed shape mismatch");
            accumulate(&mut grads[var.id], seed.clone());
        }
        let top = seeds.iter().map(|(v, _)| v.id).max().unwrap_or(0);
        for id in (0..=top.min(nodes.len().saturating_sub(1))).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                // Leaves keep their gradient for the caller.
                grads[id] = Some(g);
                continue;
            }
            let val = |i: usize| &nodes[i].value;
            let needs = |i: usize| nodes[i].requires_grad;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if needs(*a) {
                        accumulate(&mut grads[*a], g.matmul_t(val(*b)));
                    }
                    if needs(*b) {
                        accumulate(&mut grads[*b], val(*a).t_matmul(&g));
                    }
                }
                Op::AddBias(a, b) => {
                    if needs(*b) {
                        let mut gb = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (o, &x) in gb.data_mut().iter_mut().zip(g.row(r)) {
                                *o = *o + x;
                            }
                        }
                        accumulate(&mut grads[*b], gb);
                    }
                    if needs(*a) {
                        accumulate(&mut grads[*a], g);
                    }
                }
                Op::Add(a, b) => {
                    if needs(*b) {
                        accumulate(&mut grads[*b], g.clone());
                    }
                    if needs(*a) {
                        accumulate(&mut grads[*a], g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*b) {
                        accumulate(&mut grads[*b], g.map(|x| -x));
                    }
                    if needs(*a) {
                        accumulate(&mut grads[*a], g);
                    }
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        accumulate(&mut grads[*a], g.zip_map(val(*b), |x, y| x * y));
                    }
                    if needs(*b) {
                        accumulate(&mut grads[*b], g.zip_map(val(*a), |x, y| x * y));
                    }
                }
                Op::MulCol(a, c) => {
                    let av = val(*a);
                    let cv = val(*c);
                    if needs(*a) {
                        let mut ga = g.clone();
                        let cols = ga.cols();
                        for (i, chunk) in ga.data_mut().chunks_mut(cols).enumerate() {
                            let k = cv.data()[i];
                            chunk.iter_mut().for_each(|x| *x = *x * k);
                        }
                        accumulate(&mut grads[*a], ga);
                    }
                    if needs(*c) {
                        let gc: Vec<T> = (0..g.rows())
                            .map(|i| g.row(i).iter().zip(av.row(i)).map(|(&x, &y)| x * y).sum())
                            .collect();
                        accumulate(&mut grads[*c], Tensor::column(gc));
                    }
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    accumulate(&mut grads[*a], g.map(|x| x * k));
                }
                Op::AddScalar(a) => accumulate(&mut grads[*a], g),
                Op::Silu(a) => {
                    let d = val(*a).map(|x| {
                        let s = T::one() / (T::one() + (-x).exp());
                        s * (T::one() + x * (T::one() - s))
                    });
                    accumulate(&mut grads[*a], g.zip_map(&d, |x, y| x * y));
                }
                Op::Relu(a) => {
                    let gi = g.zip_map(val(*a), |x, y| if y > T::zero() { x } else { T::zero() });
                    accumulate(&mut grads[*a], gi);
                }
                Op::Square(a) => {
                    let two = T::one() + T::one();
                    let gi = g.zip_map(val(*a), |x, y| two * x * y);
                    accumulate(&mut grads[*a], gi);
                }
                Op::SumAll(a) => {
                    let (r, c) = val(*a).shape();
                    accumulate(&mut grads[*a], Tensor::full(r, c, g.item()));
                }
                Op::MeanAll(a) => {
                    let (r, c) = val(*a).shape();
                    let n = T::from_usize(r * c).expect("count");
                    accumulate(&mut grads[*a], Tensor::full(r, c, g.item() / n));
                }
                Op::SumCols(a) => {
                    let (r, c) = val(*a).shape();
                    let mut data = Vec::with_capacity(r * c);
                    for &gi in g.data() {
                        data.extend(std::iter::repeat_n(gi, c));
                    }
                    accumulate(&mut grads[*a], Tensor::new(r, c, data));
                }
                Op::Concat(ids) => {
                    let mut offset = 0;
                    for &i in ids {
                        let w = val(i).cols();
                        if needs(i) {
                            let mut data = Vec::with_capacity(g.rows() * w);
                            for r in 0..g.rows() {
                                data.extend_from_slice(&g.row(r)[offset..offset + w]);
                            }
                            accumulate(&mut grads[i], Tensor::new(g.rows(), w, data));
                        }
                        offset += w;
                    }
                }
            }
        }
        // Intermediate grads are dropped; only leaves are reported.
        for (id, node) in nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Gradients of leaves after a backward pass.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `var`; exactly zero when `var` did not influence the output.
    pub fn wrt(&self, var: Var<'_, T>) -> Tensor<T> {
        match self.grads.get(var.id).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = var.shape();
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn value_ref(&self) -> Ref<'t, Tensor<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: &Var<'t, T>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    pub fn matmul(self, rhs: Var<'t, T>) -> Var<'t, T> {
        self.same_tape(&rhs);
        self.tape
            .binary(self.id, rhs.id, Op::MatMul(self.id, rhs.id), |a, b| a.matmul(b))
    }

    /// Adds a `1×n` row to every row.
    pub fn add_bias(self, bias: Var<'t, T>) -> Var<'t, T> {
        self.same_tape(&bias);
        self.tape
            .binary(self.id, bias.id, Op::AddBias(self.id, bias.id), |a, b| {
                assert_eq!(b.rows(), 1, "bias must be a row");
                assert_eq!(a.cols(), b.cols(), "bias width mismatch");
                let mut out = a.clone();
                let cols = out.cols();
                for chunk in out.data_mut().chunks_mut(cols) {
                    for (x, &y) in chunk.iter_mut().zip(b.data()) {
                        *x = *x + y;
                    }
                }
                out
            })
    }

    /// Multiplies row `i` by the `i`-th entry of a column vector.
    pub fn mul_col(self, col: Var<'t, T>) -> Var<'t, T> {
        self.same_tape(&col);
        self.tape.binary(self.id, col.id, Op::MulCol(self.id, col.id), |a, c| {
            assert_eq!(c.shape(), (a.rows(), 1), "mul_col expects an n×1 column");
            let mut out = a.clone();
            let cols = out.cols();
            for (i, chunk) in out.data_mut().chunks_mut(cols).enumerate() {
                let k = c.data()[i];
                chunk.iter_mut().for_each(|x| *x = *x * k);
            }
            out
        })
    }

    pub fn scale(self, k: T) -> Var<'t, T> {
        self.tape.unary(self.id, Op::Scale(self.id, k), |a| a.scaled(k))
    }

    pub fn add_scalar(self, k: T) -> Var<'t, T> {
        self.tape.unary(self.id, Op::AddScalar(self.id), |a| a.map(|x| x + k))
    }

    pub fn silu(self) -> Var<'t, T> {
        self.tape
            .unary(self.id, Op::Silu(self.id), |a| a.map(|x| x / (T::one() + (-x).exp())))
    }

    pub fn relu(self) -> Var<'t, T> {
        self.tape.unary(self.id, Op::Relu(self.id), |a| {
            a.map(|x| if x > T::zero() { x } else { T::zero() })
        })
    }

    pub fn square(self) -> Var<'t, T> {
        self.tape.unary(self.id, Op::Square(self.id), |a| a.map(|x| x * x))
    }

    pub fn sum(self) -> Var<'t, T> {
        self.tape
            .unary(self.id, Op::SumAll(self.id), |a| Tensor::scalar(a.sum()))
    }

    pub fn mean(self) -> Var<'t, T> {
        self.tape.unary(self.id, Op::MeanAll(self.id), |a| {
            Tensor::scalar(a.sum() / T::from_usize(a.len()).expect("count"))
        })
    }

    /// Per-row sums as an `n×1` column.
    pub fn sum_cols(self) -> Var<'t, T> {
        self.tape.unary(self.id, Op::SumCols(self.id), |a| {
            Tensor::column((0..a.rows()).map(|i| a.row(i).iter().copied().sum()).collect())
        })
    }

    /// Forward identity that blocks every gradient.
    pub fn stop_gradient(self) -> Var<'t, T> {
        let value = self.value();
        self.tape.push(value, Op::Leaf, false)
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $op:ident, $f:expr) => {
        impl<'t, T: Scalar> std::ops::$trait for Var<'t, T> {
            type Output = Var<'t, T>;
            fn $method(self, rhs: Var<'t, T>) -> Var<'t, T> {
                self.same_tape(&rhs);
                self.tape
                    .binary(self.id, rhs.id, Op::$op(self.id, rhs.id), |a, b| a.zip_map(b, $f))
            }
        }
    };
}

binop!(Add, add, Add, |x, y| x + y);
binop!(Sub, sub, Sub, |x, y| x - y);
binop!(Mul, mul, Mul, |x, y| x * y);

impl<'t, T: Scalar> std::ops::Neg for Var<'t, T> {
    type Output = Var<'t, T>;
    fn neg(self) -> Var<'t, T> {
        self.scale(-T::one())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_of_double() {
        // y = (2x)^2 at x = 1
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        let y = x.scale(2.0).square().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 8.0);
    }

    #[test]
    fn sum_gives_ones() {
        let tape = Tape::<f32>::new();
        let v = tape.leaf(Tensor::new(2, 3, vec![1., -2., 3., 0.5, 7., -1.]));
        let g = tape.backward(v.sum()).unwrap();
        assert!(g.wrt(v).data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn stop_gradient_forward_identity_and_blocks() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(1, 3, vec![1., 2., 3.]));
        let sg = x.stop_gradient();
        assert_eq!(sg.value(), x.value());
        let g = tape.backward(sg.sum()).unwrap();
        assert!(g.wrt(x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn product_with_detached_factor() {
        // f(x) = x · sg(x) at x = 3 → df/dx = 3
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let f = (x * x.stop_gradient()).sum();
        assert_eq!(f.value().item(), 9.0);
        let g = tape.backward(f).unwrap();
        assert_eq!(g.wrt(x).item(), 3.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::<f32>::new();
        let v = tape.leaf(Tensor::zeros(2, 2));
        assert!(matches!(
            tape.backward(v),
            Err(NnError::NonScalarLoss { rows: 2, cols: 2 })
        ));
    }

    #[test]
    fn second_backward_is_rejected() {
        let tape = Tape::<f32>::new();
        let v = tape.leaf(Tensor::scalar(1.0));
        let l = v.square().sum();
        tape.backward(l).unwrap();
        assert!(matches!(tape.backward(l), Err(NnError::TapeConsumed)));
    }

    #[test]
    fn unreachable_leaf_has_zero_grad() {
        let tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::scalar(2.0));
        let b = tape.leaf(Tensor::new(1, 2, vec![5.0, 6.0]));
        let g = tape.backward(a.square().sum()).unwrap();
        assert_eq!(g.wrt(b).data(), &[0.0, 0.0]);
        assert!(g.get(b).is_none());
    }

    #[test]
    fn concat_and_mul_col_route_gradients() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::new(2, 1, vec![1., 2.]));
        let b = tape.leaf(Tensor::new(2, 2, vec![3., 4., 5., 6.]));
        let c = tape.leaf(Tensor::column(vec![2., -1.]));
        let cat = tape.concat_cols(&[a, b]).mul_col(c);
        let loss = cat.sum();
        assert_eq!(loss.value().item(), 2. * (1. + 3. + 4.) - (2. + 5. + 6.));
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(a).data(), &[2., -1.]);
        assert_eq!(g.wrt(b).data(), &[2., 2., -1., -1.]);
        assert_eq!(g.wrt(c).data(), &[8., 13.]);
    }
}
