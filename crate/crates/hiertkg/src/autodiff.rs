//! Minimal reverse-mode automatic differentiation over `ndarray::Array2<f64>`.
//!
//! A [`Tape`] records operations in topological order; [`Tape::backward`]
//! replays them in reverse accumulating gradients. Every tensor is a 2-D
//! array; vectors are 1×d rows. The tape is rebuilt per batch, so nodes
//! never outlive a single forward/backward pass.

use ndarray::{concatenate, s, Array2, Axis};
use std::cell::RefCell;

type BackFn = Box<dyn Fn(&Array2<f64>) -> Vec<(usize, Array2<f64>)>>;

struct Node {
    value: Array2<f64>,
    back: Option<BackFn>,
}

pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    pub id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<f64>, back: Option<BackFn>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { value, back });
        Var { tape: self, id }
    }

    /// Insert a leaf (input or parameter). Gradients accumulate at leaves.
    pub fn leaf(&self, value: Array2<f64>) -> Var<'_> {
        self.push(value, None)
    }

    /// Insert a constant; identical to a leaf, named for intent.
    pub fn constant(&self, value: Array2<f64>) -> Var<'_> {
        self.push(value, None)
    }

    pub fn value(&self, id: usize) -> Array2<f64> {
        self.nodes.borrow()[id].value.clone()
    }

    /// Reverse sweep from `out` (must be 1×1). Returns per-node gradients;
    /// nodes not on a path to `out` get `None`.
    pub fn backward(&self, out: Var<'_>) -> Vec<Option<Array2<f64>>> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; nodes.len()];
        let seed = Array2::ones(nodes[out.id].value.dim());
        grads[out.id] = Some(seed);
        for id in (0..=out.id).rev() {
            let g = match &grads[id] {
                Some(g) => g.clone(),
                None => continue,
            };
            if let Some(back) = &nodes[id].back {
                for (pid, pg) in back(&g) {
                    match &mut grads[pid] {
                        Some(acc) => *acc += &pg,
                        slot => *slot = Some(pg),
                    }
                }
            }
        }
        grads
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Array2<f64> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        let v = self.tape.nodes.borrow();
        v[self.id].value.dim()
    }

    pub fn add(&self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let (ida, idb) = (self.id, other.id);
        let v = &a + &b;
        self.tape.push(
            v,
            Some(Box::new(move |g| {
                vec![(ida, g.clone()), (idb, g.clone())]
            })),
        )
    }

    pub fn sub(&self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let (ida, idb) = (self.id, other.id);
        let v = &a - &b;
        self.tape.push(
            v,
            Some(Box::new(move |g| vec![(ida, g.clone()), (idb, -g)])),
        )
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let (ida, idb) = (self.id, other.id);
        let v = &a * &b;
        self.tape.push(
            v,
            Some(Box::new(move |g| vec![(ida, g * &b), (idb, g * &a)])),
        )
    }

    pub fn matmul(&self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let (ida, idb) = (self.id, other.id);
        let v = a.dot(&b);
        self.tape.push(
            v,
            Some(Box::new(move |g| {
                vec![(ida, g.dot(&b.t())), (idb, a.t().dot(g))]
            })),
        )
    }

    pub fn transpose(&self) -> Var<'t> {
        let a = self.value();
        let ida = self.id;
        self.tape.push(
            a.t().to_owned(),
            Some(Box::new(move |g| vec![(ida, g.t().to_owned())])),
        )
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let a = self.value();
        let ida = self.id;
        self.tape
            .push(a * c, Some(Box::new(move |g| vec![(ida, g * c)])))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        let a = self.value();
        let ida = self.id;
        self.tape
            .push(a + c, Some(Box::new(move |g| vec![(ida, g.clone())])))
    }

    fn unary(
        &self,
        f: impl Fn(f64) -> f64,
        // derivative as a function of (input, output)
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var<'t> {
        let a = self.value();
        let ida = self.id;
        let v = a.mapv(&f);
        let vv = v.clone();
        self.tape.push(
            v,
            Some(Box::new(move |g| {
                let mut d = Array2::zeros(a.dim());
                ndarray::Zip::from(&mut d)
                    .and(&a)
                    .and(&vv)
                    .for_each(|d, &x, &y| *d = df(x, y));
                vec![(ida, g * &d)]
            })),
        )
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(|x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn cos(&self) -> Var<'t> {
        self.unary(f64::cos, |x, _| -x.sin())
    }

    pub fn ln(&self) -> Var<'t> {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    /// Clamp to [lo, hi]; gradient is zero in the clamped region.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(
            move |x| x.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&self) -> Var<'t> {
        let a = self.value();
        let ida = self.id;
        let mut v = a.clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        let vv = v.clone();
        self.tape.push(
            v,
            Some(Box::new(move |g| {
                // dL/dx_ij = y_ij * (g_ij - sum_k g_ik y_ik)
                let mut d = Array2::zeros(vv.dim());
                for i in 0..vv.nrows() {
                    let dot: f64 = g.row(i).iter().zip(vv.row(i)).map(|(a, b)| a * b).sum();
                    for j in 0..vv.ncols() {
                        d[[i, j]] = vv[[i, j]] * (g[[i, j]] - dot);
                    }
                }
                vec![(ida, d)]
            })),
        )
    }

    pub fn sum_all(&self) -> Var<'t> {
        let a = self.value();
        let ida = self.id;
        let v = Array2::from_elem((1, 1), a.sum());
        self.tape.push(
            v,
            Some(Box::new(move |g| {
                vec![(ida, Array2::from_elem(a.dim(), g[[0, 0]]))]
            })),
        )
    }

    pub fn mean_all(&self) -> Var<'t> {
        let n = {
            let (r, c) = self.shape();
            (r * c) as f64
        };
        self.sum_all().scale(1.0 / n)
    }

    /// Gather rows by index; repeated indices scatter-add in backward.
    pub fn rows(&self, indices: &[usize]) -> Var<'t> {
        let a = self.value();
        let ida = self.id;
        let idx = indices.to_vec();
        let mut v = Array2::zeros((idx.len(), a.ncols()));
        for (k, &i) in idx.iter().enumerate() {
            v.row_mut(k).assign(&a.row(i));
        }
        let dim = a.dim();
        self.tape.push(
            v,
            Some(Box::new(move |g| {
                let mut d = Array2::zeros(dim);
                for (k, &i) in idx.iter().enumerate() {
                    let mut r = d.row_mut(i);
                    r += &g.row(k);
                }
                vec![(ida, d)]
            })),
        )
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Var<'t> {
        let a = self.value();
        let ida = self.id;
        let v = a.slice(s![.., start..end]).to_owned();
        let dim = a.dim();
        self.tape.push(
            v,
            Some(Box::new(move |g| {
                let mut d: Array2<f64> = Array2::zeros(dim);
                d.slice_mut(s![.., start..end]).assign(g);
                vec![(ida, d)]
            })),
        )
    }

    pub fn concat_cols(tape: &'t Tape, parts: &[Var<'t>]) -> Var<'t> {
        let vals: Vec<Array2<f64>> = parts.iter().map(|p| p.value()).collect();
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols: row counts must match");
        let widths: Vec<usize> = vals.iter().map(|v| v.ncols()).collect();
        tape.push(
            v,
            Some(Box::new(move |g| {
                let mut out = Vec::with_capacity(ids.len());
                let mut off = 0;
                for (&id, &w) in ids.iter().zip(&widths) {
                    out.push((id, g.slice(s![.., off..off + w]).to_owned()));
                    off += w;
                }
                out
            })),
        )
    }

    pub fn concat_rows(tape: &'t Tape, parts: &[Var<'t>]) -> Var<'t> {
        let vals: Vec<Array2<f64>> = parts.iter().map(|p| p.value()).collect();
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows: col counts must match");
        let heights: Vec<usize> = vals.iter().map(|v| v.nrows()).collect();
        tape.push(
            v,
            Some(Box::new(move |g| {
                let mut out = Vec::with_capacity(ids.len());
                let mut off = 0;
                for (&id, &h) in ids.iter().zip(&heights) {
                    out.push((id, g.slice(s![off..off + h, ..]).to_owned()));
                    off += h;
                }
                out
            })),
        )
    }

    /// Broadcast a 1×c row over r rows.
    pub fn broadcast_rows(&self, r: usize) -> Var<'t> {
        let a = self.value();
        assert_eq!(a.nrows(), 1, "broadcast_rows expects a 1×c input");
        let ida = self.id;
        let mut v = Array2::zeros((r, a.ncols()));
        for mut row in v.rows_mut() {
            row.assign(&a.row(0));
        }
        self.tape.push(
            v,
            Some(Box::new(move |g| {
                let d = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                vec![(ida, d)]
            })),
        )
    }
}

/// Central finite differences of a scalar function of flat parameters,
/// for gradient verification in tests and the acceptance suite.
pub fn finite_difference(
    params: &[Array2<f64>],
    f: &dyn Fn(&[Array2<f64>]) -> f64,
    step: f64,
) -> Vec<Array2<f64>> {
    let mut grads = Vec::with_capacity(params.len());
    for (pi, p) in params.iter().enumerate() {
        let mut g = Array2::zeros(p.dim());
        for i in 0..p.nrows() {
            for j in 0..p.ncols() {
                let mut plus = params.to_vec();
                plus[pi][[i, j]] += step;
                let mut minus = params.to_vec();
                minus[pi][[i, j]] -= step;
                g[[i, j]] = (f(&plus) - f(&minus)) / (2.0 * step);
            }
        }
        grads.push(g);
    }
    grads
}

/// Max relative error between analytic and numeric gradients,
/// with an absolute floor to avoid blowing up near zero.
pub fn max_rel_error(analytic: &[Array2<f64>], numeric: &[Array2<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        for (x, y) in a.iter().zip(n.iter()) {
            let denom = x.abs().max(y.abs()).max(1e-6);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}
