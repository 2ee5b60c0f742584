//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! Every value on the tape is a 2-D matrix whose rows index batch samples.
//! The set of operations is closed: affine maps (matrix product, row bias,
//! scalar affine, add/sub), `relu`, `tanh`, `log`, `exp`, `square`,
//! elementwise product and `min`, plus reductions (`sum`, `mean`, row sums)
//! and column slicing / concatenation. Anything else is composed from these.
//!
//! Shape errors inside the tape are programmer errors and panic; public
//! entry points that accept user data validate shapes first.

use ndarray::{s, Array2, Axis, Zip};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
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
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    SumCols(Var),
    Sum(Var),
    Mean(Var),
    Cols(Var, usize, usize),
    Concat(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros shaped like `like` when the loss does not
    /// depend on `v`.
    pub fn get_or_zeros(&self, v: Var, like: &Mat) -> Mat {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Mat::zeros(like.raw_dim()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf that gradients are not tracked for.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is collected by [`Tape::backward`].
    pub fn param(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Mat::from_elem((1, 1), x))
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar_value on non-scalar node");
        m[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// `x` (n x k) plus a broadcast row `row` (1 x k).
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (xv, rv) = (self.value(x), self.value(row));
        assert_eq!(rv.nrows(), 1, "add_row expects a single row");
        assert_eq!(xv.ncols(), rv.ncols(), "add_row column mismatch");
        let value = xv + rv;
        let ng = self.needs(x) || self.needs(row);
        self.push(value, Op::AddRow(x, row), ng)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: operand shapes differ"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let value = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let value = self.value(a) - self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let value = self.value(a) * self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "min");
        let mut value = self.value(a).clone();
        Zip::from(&mut value)
            .and(self.value(b))
            .for_each(|x, &y| *x = x.min(y));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Min(a, b), ng)
    }

    /// `factor * x`.
    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x) * factor;
        let ng = self.needs(x);
        self.push(value, Op::Affine(x, factor), ng)
    }

    /// `x + c`, implemented as an addition with a constant.
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let shape = self.shape(x);
        let k = self.constant(Mat::from_elem(shape, c));
        self.add(x, k)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v.max(0.0));
        let ng = self.needs(x);
        self.push(value, Op::Relu(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::tanh);
        let ng = self.needs(x);
        self.push(value, Op::Tanh(x), ng)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::exp);
        let ng = self.needs(x);
        self.push(value, Op::Exp(x), ng)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::ln);
        let ng = self.needs(x);
        self.push(value, Op::Log(x), ng)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v * v);
        let ng = self.needs(x);
        self.push(value, Op::Square(x), ng)
    }

    /// Row sums: (n x k) -> (n x 1).
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let value = self.value(x).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.needs(x);
        self.push(value, Op::SumCols(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.value(x).sum());
        let ng = self.needs(x);
        self.push(value, Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Mat::from_elem((1, 1), v.sum() / v.len() as f64);
        let ng = self.needs(x);
        self.push(value, Op::Mean(x), ng)
    }

    /// Columns `start..start + len`.
    pub fn cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self
            .value(x)
            .slice(s![.., start..start + len])
            .to_owned();
        let ng = self.needs(x);
        self.push(value, Op::Cols(x, start, len), ng)
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let value = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat: row counts differ");
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Concat(a, b), ng)
    }

    /// Clamp to `[lo, hi]`, written as `min(hi, -min(-x, -lo))`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let shape = self.shape(x);
        let neg_x = self.neg(x);
        let neg_lo = self.constant(Mat::from_elem(shape, -lo));
        let m = self.min(neg_x, neg_lo);
        let lower = self.neg(m);
        let hi = self.constant(Mat::from_elem(shape, hi));
        self.min(lower, hi)
    }

    /// `ln(1 + e^x)` written as `relu(x) + ln(1 + e^{-|x|})`, which never
    /// overflows.
    pub fn softplus(&mut self, x: Var) -> Var {
        let pos = self.relu(x);
        let neg_x = self.neg(x);
        let neg = self.relu(neg_x);
        let abs = self.add(pos, neg);
        let neg_abs = self.neg(abs);
        let e = self.exp(neg_abs);
        let one_plus = self.add_scalar(e, 1.0);
        let l = self.log(one_plus);
        self.add(pos, l)
    }

    /// Gradients of the 1x1 node `loss` with respect to every tracked node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward expects a scalar loss");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.needs(a) {
                        let ga = g.dot(&self.value(b).t());
                        accumulate(&mut grads, a, ga);
                    }
                    if self.needs(b) {
                        let gb = self.value(a).t().dot(&g);
                        accumulate(&mut grads, b, gb);
                    }
                }
                Op::AddRow(x, row) => {
                    if self.needs(row) {
                        let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, row, gr);
                    }
                    if self.needs(x) {
                        accumulate(&mut grads, x, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(a) && self.needs(b) {
                        accumulate(&mut grads, a, g.clone());
                        accumulate(&mut grads, b, g);
                    } else if self.needs(a) {
                        accumulate(&mut grads, a, g);
                    } else {
                        accumulate(&mut grads, b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(b) {
                        accumulate(&mut grads, b, -&g);
                    }
                    if self.needs(a) {
                        accumulate(&mut grads, a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(a) {
                        accumulate(&mut grads, a, &g * self.value(b));
                    }
                    if self.needs(b) {
                        accumulate(&mut grads, b, &g * self.value(a));
                    }
                }
                Op::Min(a, b) => {
                    let (av, bv) = (self.value(a), self.value(b));
                    if self.needs(a) {
                        let mut ga = g.clone();
                        Zip::from(&mut ga).and(av).and(bv).for_each(|g, &x, &y| {
                            if x > y {
                                *g = 0.0;
                            }
                        });
                        accumulate(&mut grads, a, ga);
                    }
                    if self.needs(b) {
                        let mut gb = g;
                        Zip::from(&mut gb).and(av).and(bv).for_each(|g, &x, &y| {
                            if x <= y {
                                *g = 0.0;
                            }
                        });
                        accumulate(&mut grads, b, gb);
                    }
                }
                Op::Affine(x, factor) => accumulate(&mut grads, x, g * factor),
                Op::Relu(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(x))
                        .for_each(|g, &v| {
                            if v <= 0.0 {
                                *g = 0.0;
                            }
                        });
                    accumulate(&mut grads, x, gx);
                }
                Op::Tanh(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(&node.value)
                        .for_each(|g, &y| *g *= 1.0 - y * y);
                    accumulate(&mut grads, x, gx);
                }
                Op::Exp(x) => accumulate(&mut grads, x, g * &node.value),
                Op::Log(x) => accumulate(&mut grads, x, g / self.value(x)),
                Op::Square(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(x))
                        .for_each(|g, &v| *g *= 2.0 * v);
                    accumulate(&mut grads, x, gx);
                }
                Op::SumCols(x) => {
                    let shape = self.shape(x);
                    let gx = g
                        .broadcast(shape)
                        .expect("sum_cols broadcast")
                        .to_owned();
                    accumulate(&mut grads, x, gx);
                }
                Op::Sum(x) => {
                    let gx = Mat::from_elem(self.shape(x), g[[0, 0]]);
                    accumulate(&mut grads, x, gx);
                }
                Op::Mean(x) => {
                    let shape = self.shape(x);
                    let n = (shape.0 * shape.1) as f64;
                    accumulate(&mut grads, x, Mat::from_elem(shape, g[[0, 0]] / n));
                }
                Op::Cols(x, start, len) => {
                    let mut gx = Mat::zeros(self.shape(x));
                    gx.slice_mut(s![.., start..start + len]).assign(&g);
                    accumulate(&mut grads, x, gx);
                }
                Op::Concat(a, b) => {
                    let ka = self.shape(a).1;
                    if self.needs(a) {
                        accumulate(&mut grads, a, g.slice(s![.., ..ka]).to_owned());
                    }
                    if self.needs(b) {
                        accumulate(&mut grads, b, g.slice(s![.., ka..]).to_owned());
                    }
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd<F: Fn(&Mat) -> f64>(f: F, x: &Mat) -> Mat {
        let eps = 1e-6;
        let mut out = Mat::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += eps;
            xm.as_slice_mut().unwrap()[idx] -= eps;
            out.as_slice_mut().unwrap()[idx] = (f(&xp) - f(&xm)) / (2.0 * eps);
        }
        out
    }

    #[test]
    fn matmul_bias_tanh_gradient() {
        let x = array![[0.3, -1.2], [0.7, 0.1], [-0.4, 0.9]];
        let w = array![[0.5, -0.3, 0.2], [0.1, 0.8, -0.6]];
        let b = array![[0.05, -0.1, 0.2]];
        let f = |w: &Mat| {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let wv = t.param(w.clone());
            let bv = t.constant(b.clone());
            let z = t.matmul(xv, wv);
            let z = t.add_row(z, bv);
            let h = t.tanh(z);
            let sq = t.square(h);
            let l = t.mean(sq);
            t.scalar_value(l)
        };
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let wv = t.param(w.clone());
        let bv = t.constant(b.clone());
        let z = t.matmul(xv, wv);
        let z = t.add_row(z, bv);
        let h = t.tanh(z);
        let sq = t.square(h);
        let l = t.mean(sq);
        let g = t.backward(l);
        let numeric = fd(f, &w);
        let analytic = g.get(wv).unwrap();
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            assert!((a - n).abs() < 1e-8, "{a} vs {n}");
        }
    }

    #[test]
    fn min_routes_gradient_to_smaller_operand() {
        let mut t = Tape::new();
        let a = t.param(array![[1.0, 5.0]]);
        let b = t.param(array![[2.0, 3.0]]);
        let m = t.min(a, b);
        let l = t.sum(m);
        let g = t.backward(l);
        assert_eq!(g.get(a).unwrap(), &array![[1.0, 0.0]]);
        assert_eq!(g.get(b).unwrap(), &array![[0.0, 1.0]]);
    }

    #[test]
    fn softplus_is_stable_and_correct() {
        let mut t = Tape::new();
        let x = t.param(array![[-800.0, -1.0, 0.0, 2.0, 800.0]]);
        let y = t.softplus(x);
        let v = t.value(y).clone();
        assert_eq!(v[[0, 0]], 0.0);
        assert!((v[[0, 1]] - (1.0f64 + (-1.0f64).exp()).ln()).abs() < 1e-15);
        assert!((v[[0, 2]] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(v[[0, 4]], 800.0);
        let l = t.sum(y);
        let g = t.backward(l);
        let gx = g.get(x).unwrap();
        // d/dx softplus = sigmoid(x)
        assert!((gx[[0, 3]] - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-12);
        assert!(gx.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn clamp_passes_gradient_only_inside() {
        let mut t = Tape::new();
        let x = t.param(array![[-5.0, 0.5, 5.0]]);
        let c = t.clamp(x, -1.0, 1.0);
        assert_eq!(t.value(c), &array![[-1.0, 0.5, 1.0]]);
        let l = t.sum(c);
        let g = t.backward(l);
        assert_eq!(g.get(x).unwrap(), &array![[0.0, 1.0, 0.0]]);
    }

    #[test]
    fn cols_and_concat_are_inverse_for_gradients() {
        let mut t = Tape::new();
        let a = t.param(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = t.param(array![[5.0], [6.0]]);
        let c = t.concat(a, b);
        let right = t.cols(c, 1, 2);
        let sq = t.square(right);
        let l = t.sum(sq);
        let g = t.backward(l);
        assert_eq!(g.get(a).unwrap(), &array![[0.0, 4.0], [0.0, 8.0]]);
        assert_eq!(g.get(b).unwrap(), &array![[10.0], [12.0]]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let a = t.constant(array![[2.0]]);
        let b = t.param(array![[3.0]]);
        let p = t.mul(a, b);
        let g = t.backward(p);
        assert!(g.get(a).is_none());
        assert_eq!(g.get(b).unwrap()[[0, 0]], 2.0);
    }
}
