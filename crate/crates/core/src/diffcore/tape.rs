//! Eager reverse-mode differentiation over dense 2-D blocks.
//!
//! Every operation computes its value immediately when it is added to the
//! [`Graph`]; [`Graph::backward`] then walks the nodes in reverse creation
//! order, which is always a valid topological order.

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use ndarray::{s, Array1, Array2, Axis, Zip};

use super::params::{ParamStore, SliceId};
use crate::error::{Error, Result};
use crate::numeric::{sigmoid, softplus};

pub type Mat = Array2<f64>;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    AddRow(Var, Var),
    BroadcastRows(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Relu(Var),
    Sqrt(Var),
    Square(Var),
    MulRowConst(Var, Rc<Array1<f64>>),
    Cols(Var, usize),
    Concat(Vec<Var>),
    SoftmaxRows(Var),
    CumsumPad(Var),
    Gather(Var, Rc<Vec<usize>>),
    Select(Rc<Vec<bool>>, Var, Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    LogSumExpCols(Var),
}

struct Node {
    value: Mat,
    op: Op,
}

/// Recording of one computation.
///
/// Not `Sync`; build one graph per thread. Parameter leaves are shared per
/// slice, so binding the same slice twice yields the same [`Var`].
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    bound: RefCell<HashMap<SliceId, Var>>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds the gradient of every bound parameter leaf into `store.grads`.
    pub fn accumulate(&self, graph: &Graph, store: &mut ParamStore) {
        for (&slice, &var) in graph.bound.borrow().iter() {
            if let Some(g) = self.wrt(var) {
                let dst = store.grad_slice_mut(slice);
                for (d, s) in dst.iter_mut().zip(g.iter()) {
                    *d += s;
                }
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Mat, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Mat> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn constant(&self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant_scalar(&self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    /// Binds a parameter slice as a differentiable leaf.
    pub fn param(&self, store: &ParamStore, slice: SliceId) -> Var {
        if let Some(&v) = self.bound.borrow().get(&slice) {
            return v;
        }
        let v = self.push(store.slice_matrix(slice), Op::Param);
        self.bound.borrow_mut().insert(slice, v);
        v
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            if va.ncols() != vb.nrows() {
                return Err(Error::Shape(format!(
                    "matmul: {:?} x {:?}",
                    va.dim(),
                    vb.dim()
                )));
            }
            va.dot(&*vb)
        };
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `a` (n×m) plus the row vector `b` (1×m) on every row.
    pub fn add_row(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            if vb.nrows() != 1 || vb.ncols() != va.ncols() {
                return Err(Error::Shape(format!(
                    "add_row: {:?} + {:?}",
                    va.dim(),
                    vb.dim()
                )));
            }
            &*va + &*vb
        };
        Ok(self.push(value, Op::AddRow(a, b)))
    }

    /// Repeats a 1×m row `n` times.
    pub fn broadcast_rows(&self, a: Var, n: usize) -> Result<Var> {
        let value = {
            let va = self.value(a);
            if va.nrows() != 1 {
                return Err(Error::Shape(format!("broadcast_rows from {:?}", va.dim())));
            }
            va.broadcast((n, va.ncols())).unwrap().to_owned()
        };
        Ok(self.push(value, Op::BroadcastRows(a)))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let value = &*self.value(a) + &*self.value(b);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "sub")?;
        let value = &*self.value(a) - &*self.value(b);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "mul")?;
        let value = &*self.value(a) * &*self.value(b);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "div")?;
        let value = &*self.value(a) / &*self.value(b);
        Ok(self.push(value, Op::Div(a, b)))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let value = &*self.value(a) * c;
        self.push(value, Op::Scale(a, c))
    }

    pub fn shift(&self, a: Var, c: f64) -> Var {
        let value = &*self.value(a) + c;
        self.push(value, Op::Shift(a))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).mapv(f);
        self.push(value, op)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Multiplies every row elementwise by a constant row (dropout masks).
    pub fn mul_row_const(&self, a: Var, row: Rc<Array1<f64>>) -> Result<Var> {
        let value = {
            let va = self.value(a);
            if va.ncols() != row.len() {
                return Err(Error::Shape(format!(
                    "mul_row_const: {:?} by row of {}",
                    va.dim(),
                    row.len()
                )));
            }
            &*va * &row.view().insert_axis(Axis(0))
        };
        Ok(self.push(value, Op::MulRowConst(a, row)))
    }

    /// Columns `start..start + len`.
    pub fn cols(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let value = {
            let va = self.value(a);
            if start + len > va.ncols() {
                return Err(Error::Shape(format!(
                    "cols {start}..{} of {:?}",
                    start + len,
                    va.dim()
                )));
            }
            va.slice(s![.., start..start + len]).to_owned()
        };
        Ok(self.push(value, Op::Cols(a, start)))
    }

    /// Column-wise concatenation.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of nothing".into()));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let views: Vec<_> = parts.iter().map(|p| nodes[p.0].value.view()).collect();
            ndarray::concatenate(Axis(1), &views)
                .map_err(|e| Error::Shape(format!("concat: {e}")))?
        };
        Ok(self.push(value, Op::Concat(parts.to_vec())))
    }

    pub fn softmax_rows(&self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Row-wise cumulative sum with a leading zero column: n×K → n×(K+1).
    pub fn cumsum_pad(&self, a: Var) -> Var {
        let value = {
            let va = self.value(a);
            let (n, k) = va.dim();
            let mut out = Array2::zeros((n, k + 1));
            for r in 0..n {
                let mut acc = 0.0;
                for c in 0..k {
                    acc += va[[r, c]];
                    out[[r, c + 1]] = acc;
                }
            }
            out
        };
        self.push(value, Op::CumsumPad(a))
    }

    /// Picks `a[r, idx[r]]` for every row: n×K → n×1.
    pub fn gather(&self, a: Var, idx: Rc<Vec<usize>>) -> Result<Var> {
        let value = {
            let va = self.value(a);
            if idx.len() != va.nrows() || idx.iter().any(|&i| i >= va.ncols()) {
                return Err(Error::Shape(format!(
                    "gather: {} indices into {:?}",
                    idx.len(),
                    va.dim()
                )));
            }
            Array2::from_shape_fn((va.nrows(), 1), |(r, _)| va[[r, idx[r]]])
        };
        Ok(self.push(value, Op::Gather(a, idx)))
    }

    /// Elementwise `mask ? a : b`, mask in row-major order.
    pub fn select(&self, mask: Rc<Vec<bool>>, a: Var, b: Var) -> Result<Var> {
        let (n, m) = self.check_same(a, b, "select")?;
        if mask.len() != n * m {
            return Err(Error::Shape(format!("select mask of {} for {n}x{m}", mask.len())));
        }
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            let mut out = vb.clone();
            for ((o, &x), &keep) in out.iter_mut().zip(va.iter()).zip(mask.iter()) {
                if keep {
                    *o = x;
                }
            }
            out
        };
        Ok(self.push(value, Op::Select(mask, a, b)))
    }

    pub fn sum(&self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        let value = {
            let va = self.value(a);
            Array2::from_elem((1, 1), va.sum() / va.len() as f64)
        };
        self.push(value, Op::Mean(a))
    }

    /// Sum across columns: n×m → n×1.
    pub fn sum_cols(&self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::SumCols(a))
    }

    /// Row-wise log-sum-exp: n×m → n×1.
    pub fn logsumexp_cols(&self, a: Var) -> Var {
        let value = {
            let va = self.value(a);
            Array2::from_shape_fn((va.nrows(), 1), |(r, _)| {
                crate::numeric::logsumexp(va.row(r).iter().copied())
            })
        };
        self.push(value, Op::LogSumExpCols(a))
    }

    /// Reverse pass from a 1×1 node.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let nodes = self.nodes.borrow();
        if loss.0 >= nodes.len() {
            return Err(Error::State("backward on a node that was never recorded".into()));
        }
        if nodes[loss.0].value.dim() != (1, 1) {
            return Err(Error::State(format!(
                "backward needs a scalar loss, got {:?}",
                nodes[loss.0].value.dim()
            )));
        }
        let mut grads: Vec<Option<Mat>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf | Op::Param => grads[i] = Some(g),
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.dot(&val(*b).t()));
                    acc(&mut grads, *b, val(*a).t().dot(&g));
                }
                Op::AddRow(a, b) => {
                    acc(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g);
                }
                Op::BroadcastRows(a) => {
                    acc(&mut grads, *a, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &g * val(*b));
                    acc(&mut grads, *b, &g * val(*a));
                }
                Op::Div(a, b) => {
                    let vb = val(*b);
                    let ga = &g / vb;
                    let gb = -(&ga * &node.value);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::Shift(a) => acc(&mut grads, *a, g),
                Op::Exp(a) => acc(&mut grads, *a, g * &node.value),
                Op::Log(a) => acc(&mut grads, *a, g / val(*a)),
                Op::Softplus(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(val(*a)).for_each(|gi, &x| *gi *= sigmoid(x));
                    acc(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(val(*a)).for_each(|gi, &x| {
                        if x <= 0.0 {
                            *gi = 0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Sqrt(a) => acc(&mut grads, *a, g / (&node.value * 2.0)),
                Op::Square(a) => acc(&mut grads, *a, g * val(*a) * 2.0),
                Op::MulRowConst(a, row) => {
                    acc(&mut grads, *a, g * row.view().insert_axis(Axis(0)));
                }
                Op::Cols(a, start) => {
                    let mut ga = Array2::zeros(val(*a).dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = val(*p).ncols();
                        acc(&mut grads, *p, g.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(gi, yi)| gi * yi).sum();
                        for c in 0..y.ncols() {
                            ga[[r, c]] = y[[r, c]] * (g[[r, c]] - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::CumsumPad(a) => {
                    let (n, k) = val(*a).dim();
                    let mut ga = Array2::zeros((n, k));
                    for r in 0..n {
                        let mut tail = 0.0;
                        for c in (0..k).rev() {
                            tail += g[[r, c + 1]];
                            ga[[r, c]] = tail;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Gather(a, idx) => {
                    let mut ga = Array2::zeros(val(*a).dim());
                    for (r, &c) in idx.iter().enumerate() {
                        ga[[r, c]] += g[[r, 0]];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Select(mask, a, b) => {
                    let mut ga = g.clone();
                    let mut gb = g;
                    for ((x, y), &keep) in ga.iter_mut().zip(gb.iter_mut()).zip(mask.iter()) {
                        if keep {
                            *y = 0.0;
                        } else {
                            *x = 0.0;
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Sum(a) => {
                    acc(&mut grads, *a, Array2::from_elem(val(*a).dim(), g[[0, 0]]));
                }
                Op::Mean(a) => {
                    let va = val(*a);
                    let c = g[[0, 0]] / va.len() as f64;
                    acc(&mut grads, *a, Array2::from_elem(va.dim(), c));
                }
                Op::SumCols(a) => {
                    let dim = val(*a).dim();
                    acc(&mut grads, *a, g.broadcast(dim).unwrap().to_owned());
                }
                Op::LogSumExpCols(a) => {
                    let va = val(*a);
                    let mut ga = Array2::zeros(va.dim());
                    for r in 0..va.nrows() {
                        let lse = node.value[[r, 0]];
                        for c in 0..va.ncols() {
                            ga[[r, c]] = g[[r, 0]] * (va[[r, c]] - lse).exp();
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
            }
        }
        Ok(Grads { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{DropoutMask, Mlp, MlpSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of d loss / d store for every parameter.
    fn check_store_grads(store: &mut ParamStore, loss: impl Fn(&Graph, &ParamStore) -> Var) {
        let g = Graph::new();
        let l = loss(&g, store);
        let grads = g.backward(l).unwrap();
        store.zero_grads();
        grads.accumulate(&g, store);
        let analytic = store.grads().to_vec();
        let h = 1e-5;
        for i in 0..store.len() {
            let orig = store.values()[i];
            store.values_mut()[i] = orig + h;
            let gp = Graph::new();
            let lp = gp.scalar(loss(&gp, store));
            store.values_mut()[i] = orig - h;
            let gm = Graph::new();
            let lm = gm.scalar(loss(&gm, store));
            store.values_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let a = analytic[i];
            let err = (a - fd).abs();
            assert!(
                err < 1e-6 || err / a.abs().max(fd.abs()) < 1e-4,
                "param {i} ({:?}): analytic {a} vs fd {fd}",
                store.name_of(i)
            );
        }
    }

    #[test]
    fn square_gradient() {
        let mut store = ParamStore::new();
        let t = store.add("theta", 1, 1);
        store.slice_values_mut(t)[0] = 3.0;
        let g = Graph::new();
        let th = g.param(&store, t);
        let l = g.sum(g.square(th));
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(th).unwrap()[[0, 0]], 6.0);
    }

    #[test]
    fn log_softplus_gradient() {
        let g = Graph::new();
        let th = g.constant_scalar(0.0);
        let l = g.sum(g.log(g.softplus(th)));
        let grads = g.backward(l).unwrap();
        // sigmoid(0) / softplus(0) = 0.5 / ln 2
        let expected = 0.5 / std::f64::consts::LN_2;
        assert!((grads.wrt(th).unwrap()[[0, 0]] - expected).abs() < 1e-12);
        assert!((expected - 0.7213).abs() < 1e-4);
    }

    #[test]
    fn backward_needs_recorded_scalar() {
        let g = Graph::new();
        let a = g.constant(Array2::zeros((2, 2)));
        assert!(matches!(g.backward(a), Err(Error::State(_))));
        let other = Graph::new();
        assert!(matches!(other.backward(a), Err(Error::State(_))));
    }

    #[test]
    fn untouched_params_get_zero() {
        let mut store = ParamStore::new();
        let a = store.add("a", 1, 1);
        store.add("b", 1, 1);
        store.slice_values_mut(a)[0] = 2.0;
        let g = Graph::new();
        let av = g.param(&store, a);
        let l = g.sum(g.exp(av));
        g.backward(l).unwrap().accumulate(&g, &mut store);
        assert_eq!(store.grads()[1], 0.0);
        assert!((store.grads()[0] - 2f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let a = store.add("a", 3, 4);
        let b = store.add("b", 3, 4);
        let r = store.add("r", 1, 4);
        let w = store.add("w", 4, 2);
        for v in store.values_mut() {
            *v = rng.gen_range(0.2..1.5);
        }
        check_store_grads(&mut store, |g, s| {
            let (a, b, r) = (g.param(s, a), g.param(s, b), g.param(s, r));
            let x = g.add(g.mul(a, b).unwrap(), g.div(a, b).unwrap()).unwrap();
            let y = g.sub(g.sqrt(x), g.log(b)).unwrap();
            let y = g.add_row(g.shift(g.scale(y, 1.7), 0.3), r).unwrap();
            let z = g.concat(&[g.softmax_rows(y), g.cols(g.exp(a), 1, 2).unwrap()]).unwrap();
            let c = g.cumsum_pad(g.softplus(z));
            let idx = Rc::new(vec![0, 3, 6]);
            let pick = g.gather(c, idx).unwrap();
            let lse = g.logsumexp_cols(g.square(z));
            let mask = Rc::new(vec![true, false, true]);
            let sel = g.select(mask, pick, lse).unwrap();
            let bc = g.broadcast_rows(r, 3).unwrap();
            let row = Rc::new(ndarray::arr1(&[2.0, 0.0, 1.0, 0.5]));
            let m = g.mul_row_const(g.relu(g.shift(bc, -0.8)), row).unwrap();
            let tail = g.sum_cols(m);
            let tot = g.add(sel, tail).unwrap();
            g.add(g.mean(tot), g.sum(g.neg(g.matmul(a, g.param(s, w)).unwrap())))
                .unwrap()
        });
    }

    #[test]
    fn mlp_with_mask_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, "net", MlpSpec::new(3, 2, 7, 2), &mut rng);
        for v in store.values_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
        let x = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));
        let mask = DropoutMask::generate(&[7, 7], 0.5, &mut rng).unwrap();
        check_store_grads(&mut store, |g, s| {
            let xv = g.constant(x.clone());
            let out = net.forward_graph(g, s, xv, Some(&mask)).unwrap();
            g.mean(g.square(out))
        });
    }
}
