//! Tape-recorded reverse-mode autodiff over [`Tensor`] values.
//!
//! Each operation appends a node to the tape; `backward` walks the tape in
//! reverse, accumulating gradients into every node that (transitively)
//! requires them. One graph is built per forward pass; parameters enter as
//! leaves with `requires_grad = true`.

use std::sync::Arc;

use super::{GatherPlan, Result, Scalar, Tensor, TensorError};

/// Handle to a node in a [`Graph`]. Only valid for the graph that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
pub enum Op<T> {
    Leaf,
    /// [m,k] @ [k,n]
    Matmul { a: usize, b: usize },
    /// [B,m,k] @ [B,k,n], batched
    Bmm { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: T },
    AddScalar { x: usize, c: T },
    /// x[..., d] + v[d]
    AddVec { x: usize, v: usize },
    /// x[..., d] * v[d]
    MulVec { x: usize, v: usize },
    ConcatLast { a: usize, b: usize },
    Gather { x: usize, plan: Arc<GatherPlan> },
    LayerNorm { x: usize, gamma: usize, beta: usize, eps: f64 },
    RmsNorm { x: usize, gamma: usize, eps: f64 },
    Softmax { x: usize },
    Gelu { x: usize },
    Silu { x: usize },
    Sum { x: usize },
    Mean { x: usize },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    /// True when this node or any ancestor is a grad-requiring leaf.
    needs_grad: bool,
    op: Op<T>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    /// Scan every op output for non-finite values and fail loudly.
    pub validate: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            validate: cfg!(debug_assertions),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` targets w.r.t. `v`, if any was
    /// accumulated. Leaves never reached by backward keep `None` (zero).
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if self.validate {
            if let Some(index) = value.first_non_finite() {
                return Err(TensorError::NonFinite { op: "leaf", index });
            }
        }
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad: requires_grad,
            op: Op::Leaf,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, parents: &[usize]) -> Result<Var> {
        if self.validate {
            if let Some(index) = value.first_non_finite() {
                return Err(TensorError::NonFinite { op: op_name, index });
            }
        }
        let needs_grad = parents.iter().any(|&p| self.nodes[p].needs_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    // ── forward ops ─────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(TensorError::DimMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m, k, n,
            T::one(),
            va.data(), k as isize, 1,
            vb.data(), n as isize, 1,
            T::zero(),
            &mut out, n as isize, 1,
        );
        let value = Tensor::new(vec![m, n], out)?;
        self.push("matmul", value, Op::Matmul { a: a.0, b: b.0 }, &[a.0, b.0])
    }

    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let ok = va.rank() == 3
            && vb.rank() == 3
            && va.shape()[0] == vb.shape()[0]
            && va.shape()[2] == vb.shape()[1];
        if !ok {
            return Err(TensorError::DimMismatch {
                op: "bmm",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (bs, m, k, n) = (va.shape()[0], va.shape()[1], va.shape()[2], vb.shape()[2]);
        let mut out = vec![T::zero(); bs * m * n];
        for i in 0..bs {
            T::gemm(
                m, k, n,
                T::one(),
                &va.data()[i * m * k..(i + 1) * m * k], k as isize, 1,
                &vb.data()[i * k * n..(i + 1) * k * n], n as isize, 1,
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n], n as isize, 1,
            );
        }
        let value = Tensor::new(vec![bs, m, n], out)?;
        self.push("bmm", value, Op::Bmm { a: a.0, b: b.0 }, &[a.0, b.0])
    }

    fn binary_elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(TensorError::DimMismatch {
                op: name,
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push(name, value, op, &[a.0, b.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub { a: a.0, b: b.0 })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul { a: a.0, b: b.0 })
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let value = self.nodes[x.0].value.map(|v| v * c);
        self.push("scale", value, Op::Scale { x: x.0, c }, &[x.0])
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        let value = self.nodes[x.0].value.map(|v| v + c);
        self.push("add_scalar", value, Op::AddScalar { x: x.0, c }, &[x.0])
    }

    fn vec_broadcast(
        &mut self,
        name: &'static str,
        x: Var,
        v: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (vx, vv) = (&self.nodes[x.0].value, &self.nodes[v.0].value);
        if vv.rank() != 1 || vx.last_dim() != vv.numel() {
            return Err(TensorError::DimMismatch {
                op: name,
                lhs: vx.shape().to_vec(),
                rhs: vv.shape().to_vec(),
            });
        }
        let d = vv.numel();
        let mut data = Vec::with_capacity(vx.numel());
        for row in vx.data().chunks_exact(d) {
            for (j, &x_ij) in row.iter().enumerate() {
                data.push(f(x_ij, vv.data()[j]));
            }
        }
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        self.push(name, value, op, &[x.0, v.0])
    }

    pub fn add_vec(&mut self, x: Var, v: Var) -> Result<Var> {
        self.vec_broadcast("add_vec", x, v, |a, b| a + b, Op::AddVec { x: x.0, v: v.0 })
    }

    pub fn mul_vec(&mut self, x: Var, v: Var) -> Result<Var> {
        self.vec_broadcast("mul_vec", x, v, |a, b| a * b, Op::MulVec { x: x.0, v: v.0 })
    }

    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let same_lead = va.rank() == vb.rank()
            && va.rank() >= 1
            && va.shape()[..va.rank() - 1] == vb.shape()[..vb.rank() - 1];
        if !same_lead {
            return Err(TensorError::DimMismatch {
                op: "concat_last",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (da, db) = (va.last_dim(), vb.last_dim());
        let rows = va.leading();
        let mut data = Vec::with_capacity(rows * (da + db));
        for r in 0..rows {
            data.extend_from_slice(&va.data()[r * da..(r + 1) * da]);
            data.extend_from_slice(&vb.data()[r * db..(r + 1) * db]);
        }
        let mut shape = va.shape().to_vec();
        *shape.last_mut().unwrap() = da + db;
        let value = Tensor::new(shape, data)?;
        self.push("concat_last", value, Op::ConcatLast { a: a.0, b: b.0 }, &[a.0, b.0])
    }

    /// Reinterpret the value with a new shape (same element order). Pure
    /// metadata; gradient passes straight through.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        let src = &self.nodes[x.0].value;
        if numel != src.numel() {
            return Err(TensorError::ShapeData {
                shape,
                expected: numel,
                actual: src.numel(),
            });
        }
        let idx: Vec<usize> = (0..numel).collect();
        let plan = GatherPlan::new(shape, src.numel(), idx)?;
        self.gather(x, plan)
    }

    pub fn gather(&mut self, x: Var, plan: Arc<GatherPlan>) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        if plan.src_numel != src.numel() {
            return Err(TensorError::InvalidArg {
                op: "gather",
                msg: format!(
                    "plan built for {} source elements, tensor has {}",
                    plan.src_numel,
                    src.numel()
                ),
            });
        }
        let data: Vec<T> = plan
            .idx
            .iter()
            .map(|&i| {
                if i == GatherPlan::PAD {
                    T::zero()
                } else {
                    src.data()[i]
                }
            })
            .collect();
        let value = Tensor::new(plan.out_shape.clone(), data)?;
        self.push("gather", value, Op::Gather { x: x.0, plan }, &[x.0])
    }

    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(TensorError::InvalidArg {
                op: "layernorm",
                msg: format!("eps must be > 0, got {eps}"),
            });
        }
        let (vx, vg, vb) = (
            &self.nodes[x.0].value,
            &self.nodes[gamma.0].value,
            &self.nodes[beta.0].value,
        );
        let d = vx.last_dim();
        if vg.numel() != d || vb.numel() != d || vg.rank() != 1 || vb.rank() != 1 {
            return Err(TensorError::DimMismatch {
                op: "layernorm",
                lhs: vx.shape().to_vec(),
                rhs: vg.shape().to_vec(),
            });
        }
        let epst = T::from_f64(eps);
        let dn = T::from_f64(d as f64);
        let mut data = Vec::with_capacity(vx.numel());
        for row in vx.data().chunks_exact(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let inv = (var + epst).sqrt().recip();
            for (j, &v) in row.iter().enumerate() {
                data.push((v - mean) * inv * vg.data()[j] + vb.data()[j]);
            }
        }
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        self.push(
            "layernorm",
            value,
            Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, eps },
            &[x.0, gamma.0, beta.0],
        )
    }

    pub fn rmsnorm(&mut self, x: Var, gamma: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(TensorError::InvalidArg {
                op: "rmsnorm",
                msg: format!("eps must be > 0, got {eps}"),
            });
        }
        let (vx, vg) = (&self.nodes[x.0].value, &self.nodes[gamma.0].value);
        let d = vx.last_dim();
        if vg.numel() != d || vg.rank() != 1 {
            return Err(TensorError::DimMismatch {
                op: "rmsnorm",
                lhs: vx.shape().to_vec(),
                rhs: vg.shape().to_vec(),
            });
        }
        let epst = T::from_f64(eps);
        let dn = T::from_f64(d as f64);
        let mut data = Vec::with_capacity(vx.numel());
        for row in vx.data().chunks_exact(d) {
            let ms = row.iter().map(|&v| v * v).sum::<T>() / dn;
            let inv = (ms + epst).sqrt().recip();
            for (j, &v) in row.iter().enumerate() {
                data.push(v * inv * vg.data()[j]);
            }
        }
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        self.push(
            "rmsnorm",
            value,
            Op::RmsNorm { x: x.0, gamma: gamma.0, eps },
            &[x.0, gamma.0],
        )
    }

    /// Numerically stable softmax over the last axis (max subtraction).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let vx = &self.nodes[x.0].value;
        let d = vx.last_dim();
        if d == 0 {
            return Err(TensorError::Rank {
                op: "softmax",
                expected: 1,
                shape: vx.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(vx.numel());
        for row in vx.data().chunks_exact(d) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
            let sum = exps.iter().copied().sum::<T>();
            data.extend(exps.into_iter().map(|e| e / sum));
        }
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        self.push("softmax", value, Op::Softmax { x: x.0 }, &[x.0])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let value = self.nodes[x.0].value.map(gelu_tanh);
        self.push("gelu", value, Op::Gelu { x: x.0 }, &[x.0])
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let value = self.nodes[x.0].value.map(|v| v * sigmoid(v));
        self.push("silu", value, Op::Silu { x: x.0 }, &[x.0])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.nodes[x.0].value.data().iter().copied().sum::<T>();
        self.push("sum", Tensor::scalar(s), Op::Sum { x: x.0 }, &[x.0])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        let s = v.data().iter().copied().sum::<T>() / T::from_f64(v.numel() as f64);
        self.push("mean", Tensor::scalar(s), Op::Mean { x: x.0 }, &[x.0])
    }

    /// Mean squared error between two same-shape tensors (elementwise mean).
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let diff = self.sub(a, b)?;
        let sq = self.mul(diff, diff)?;
        self.mean(sq)
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Accumulate d`loss`/d`node` into every reachable grad-requiring node.
    /// Repeated calls without `zero_grad` keep accumulating.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(()); // nothing reachable requires gradients
        }

        // Pass-local adjoints, merged into persistent grads at the end so that
        // repeated backward calls accumulate instead of double-propagating.
        let mut adj: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj)?;
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(&g) {
                        *a = *a + *b;
                    }
                }
                None => {
                    node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                }
            }
        }
        Ok(())
    }

    fn accumulate(adj: &mut [Option<Vec<T>>], target: usize, numel: usize, f: impl FnOnce(&mut [T])) {
        let slot = adj[target].get_or_insert_with(|| vec![T::zero(); numel]);
        f(slot);
    }

    fn propagate(&self, i: usize, g: &[T], adj: &mut [Option<Vec<T>>]) -> Result<()> {
        let needs = |idx: usize| self.nodes[idx].needs_grad;
        let val = |idx: usize| &self.nodes[idx].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if needs(*a) {
                    // dA = G @ B^T
                    Self::accumulate(adj, *a, m * k, |da| {
                        T::gemm(
                            m, n, k,
                            T::one(),
                            g, n as isize, 1,
                            vb.data(), 1, n as isize,
                            T::one(),
                            da, k as isize, 1,
                        );
                    });
                }
                if needs(*b) {
                    // dB = A^T @ G
                    Self::accumulate(adj, *b, k * n, |db| {
                        T::gemm(
                            k, m, n,
                            T::one(),
                            va.data(), 1, k as isize,
                            g, n as isize, 1,
                            T::one(),
                            db, n as isize, 1,
                        );
                    });
                }
            }
            Op::Bmm { a, b } => {
                let (va, vb) = (val(*a), val(*b));
                let (bs, m, k, n) = (va.shape()[0], va.shape()[1], va.shape()[2], vb.shape()[2]);
                if needs(*a) {
                    Self::accumulate(adj, *a, bs * m * k, |da| {
                        for s in 0..bs {
                            T::gemm(
                                m, n, k,
                                T::one(),
                                &g[s * m * n..(s + 1) * m * n], n as isize, 1,
                                &vb.data()[s * k * n..(s + 1) * k * n], 1, n as isize,
                                T::one(),
                                &mut da[s * m * k..(s + 1) * m * k], k as isize, 1,
                            );
                        }
                    });
                }
                if needs(*b) {
                    Self::accumulate(adj, *b, bs * k * n, |db| {
                        for s in 0..bs {
                            T::gemm(
                                k, m, n,
                                T::one(),
                                &va.data()[s * m * k..(s + 1) * m * k], 1, k as isize,
                                &g[s * m * n..(s + 1) * m * n], n as isize, 1,
                                T::one(),
                                &mut db[s * k * n..(s + 1) * k * n], n as isize, 1,
                            );
                        }
                    });
                }
            }
            Op::Add { a, b } => {
                for &(t, _sign) in &[(*a, 1), (*b, 1)] {
                    if needs(t) {
                        Self::accumulate(adj, t, g.len(), |d| {
                            for (x, y) in d.iter_mut().zip(g) {
                                *x = *x + *y;
                            }
                        });
                    }
                }
            }
            Op::Sub { a, b } => {
                if needs(*a) {
                    Self::accumulate(adj, *a, g.len(), |d| {
                        for (x, y) in d.iter_mut().zip(g) {
                            *x = *x + *y;
                        }
                    });
                }
                if needs(*b) {
                    Self::accumulate(adj, *b, g.len(), |d| {
                        for (x, y) in d.iter_mut().zip(g) {
                            *x = *x - *y;
                        }
                    });
                }
            }
            Op::Mul { a, b } => {
                let (va, vb) = (val(*a), val(*b));
                if needs(*a) {
                    Self::accumulate(adj, *a, g.len(), |d| {
                        for ((x, y), &v) in d.iter_mut().zip(g).zip(vb.data()) {
                            *x = *x + *y * v;
                        }
                    });
                }
                if needs(*b) {
                    Self::accumulate(adj, *b, g.len(), |d| {
                        for ((x, y), &v) in d.iter_mut().zip(g).zip(va.data()) {
                            *x = *x + *y * v;
                        }
                    });
                }
            }
            Op::Scale { x, c } => {
                if needs(*x) {
                    let c = *c;
                    Self::accumulate(adj, *x, g.len(), |d| {
                        for (xg, y) in d.iter_mut().zip(g) {
                            *xg = *xg + *y * c;
                        }
                    });
                }
            }
            Op::AddScalar { x, .. } => {
                if needs(*x) {
                    Self::accumulate(adj, *x, g.len(), |d| {
                        for (xg, y) in d.iter_mut().zip(g) {
                            *xg = *xg + *y;
                        }
                    });
                }
            }
            Op::AddVec { x, v } => {
                let d_len = val(*v).numel();
                if needs(*x) {
                    Self::accumulate(adj, *x, g.len(), |d| {
                        for (xg, y) in d.iter_mut().zip(g) {
                            *xg = *xg + *y;
                        }
                    });
                }
                if needs(*v) {
                    Self::accumulate(adj, *v, d_len, |dv| {
                        for row in g.chunks_exact(d_len) {
                            for (j, y) in row.iter().enumerate() {
                                dv[j] = dv[j] + *y;
                            }
                        }
                    });
                }
            }
            Op::MulVec { x, v } => {
                let (vx, vv) = (val(*x), val(*v));
                let d_len = vv.numel();
                if needs(*x) {
                    Self::accumulate(adj, *x, g.len(), |d| {
                        for (r, row) in g.chunks_exact(d_len).enumerate() {
                            for (j, y) in row.iter().enumerate() {
                                d[r * d_len + j] = d[r * d_len + j] + *y * vv.data()[j];
                            }
                        }
                    });
                }
                if needs(*v) {
                    Self::accumulate(adj, *v, d_len, |dv| {
                        for (r, row) in g.chunks_exact(d_len).enumerate() {
                            for (j, y) in row.iter().enumerate() {
                                dv[j] = dv[j] + *y * vx.data()[r * d_len + j];
                            }
                        }
                    });
                }
            }
            Op::ConcatLast { a, b } => {
                let (va, vb) = (val(*a), val(*b));
                let (da, db) = (va.last_dim(), vb.last_dim());
                let rows = va.leading();
                if needs(*a) {
                    Self::accumulate(adj, *a, va.numel(), |d| {
                        for r in 0..rows {
                            for j in 0..da {
                                d[r * da + j] = d[r * da + j] + g[r * (da + db) + j];
                            }
                        }
                    });
                }
                if needs(*b) {
                    Self::accumulate(adj, *b, vb.numel(), |d| {
                        for r in 0..rows {
                            for j in 0..db {
                                d[r * db + j] = d[r * db + j] + g[r * (da + db) + da + j];
                            }
                        }
                    });
                }
            }
            Op::Gather { x, plan } => {
                if needs(*x) {
                    Self::accumulate(adj, *x, plan.src_numel, |d| {
                        for (o, &src) in plan.idx.iter().enumerate() {
                            if src != GatherPlan::PAD {
                                d[src] = d[src] + g[o];
                            }
                        }
                    });
                }
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (vx, vg) = (val(*x), val(*gamma));
                let d_len = vg.numel();
                let rows = vx.leading();
                let epst = T::from_f64(*eps);
                let dn = T::from_f64(d_len as f64);
                if needs(*x) {
                    Self::accumulate(adj, *x, vx.numel(), |dx| {
                        for r in 0..rows {
                            let row = &vx.data()[r * d_len..(r + 1) * d_len];
                            let grow = &g[r * d_len..(r + 1) * d_len];
                            let mean = row.iter().copied().sum::<T>() / dn;
                            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
                            let inv = (var + epst).sqrt().recip();
                            // h = gamma .* g; dx = inv*(h - mean(h) - xhat*mean(h .* xhat))
                            let mut mean_h = T::zero();
                            let mut mean_hx = T::zero();
                            for j in 0..d_len {
                                let h = vg.data()[j] * grow[j];
                                let xhat = (row[j] - mean) * inv;
                                mean_h = mean_h + h;
                                mean_hx = mean_hx + h * xhat;
                            }
                            mean_h = mean_h / dn;
                            mean_hx = mean_hx / dn;
                            for j in 0..d_len {
                                let h = vg.data()[j] * grow[j];
                                let xhat = (row[j] - mean) * inv;
                                dx[r * d_len + j] =
                                    dx[r * d_len + j] + inv * (h - mean_h - xhat * mean_hx);
                            }
                        }
                    });
                }
                if needs(*gamma) {
                    Self::accumulate(adj, *gamma, d_len, |dg| {
                        for r in 0..rows {
                            let row = &vx.data()[r * d_len..(r + 1) * d_len];
                            let grow = &g[r * d_len..(r + 1) * d_len];
                            let mean = row.iter().copied().sum::<T>() / dn;
                            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
                            let inv = (var + epst).sqrt().recip();
                            for j in 0..d_len {
                                dg[j] = dg[j] + grow[j] * (row[j] - mean) * inv;
                            }
                        }
                    });
                }
                if needs(*beta) {
                    Self::accumulate(adj, *beta, d_len, |db| {
                        for row in g.chunks_exact(d_len) {
                            for (j, y) in row.iter().enumerate() {
                                db[j] = db[j] + *y;
                            }
                        }
                    });
                }
            }
            Op::RmsNorm { x, gamma, eps } => {
                let (vx, vg) = (val(*x), val(*gamma));
                let d_len = vg.numel();
                let rows = vx.leading();
                let epst = T::from_f64(*eps);
                let dn = T::from_f64(d_len as f64);
                if needs(*x) {
                    Self::accumulate(adj, *x, vx.numel(), |dx| {
                        for r in 0..rows {
                            let row = &vx.data()[r * d_len..(r + 1) * d_len];
                            let grow = &g[r * d_len..(r + 1) * d_len];
                            let ms = row.iter().map(|&v| v * v).sum::<T>() / dn;
                            let rinv = (ms + epst).sqrt().recip();
                            let mut dot = T::zero();
                            for j in 0..d_len {
                                dot = dot + grow[j] * vg.data()[j] * row[j];
                            }
                            let r3 = rinv * rinv * rinv;
                            for j in 0..d_len {
                                dx[r * d_len + j] = dx[r * d_len + j]
                                    + grow[j] * vg.data()[j] * rinv
                                    - row[j] * dot * r3 / dn;
                            }
                        }
                    });
                }
                if needs(*gamma) {
                    Self::accumulate(adj, *gamma, d_len, |dg| {
                        for r in 0..rows {
                            let row = &vx.data()[r * d_len..(r + 1) * d_len];
                            let grow = &g[r * d_len..(r + 1) * d_len];
                            let ms = row.iter().map(|&v| v * v).sum::<T>() / dn;
                            let rinv = (ms + epst).sqrt().recip();
                            for j in 0..d_len {
                                dg[j] = dg[j] + grow[j] * row[j] * rinv;
                            }
                        }
                    });
                }
            }
            Op::Softmax { x } => {
                if needs(*x) {
                    let y = &self.nodes[i].value;
                    let d_len = y.last_dim();
                    Self::accumulate(adj, *x, y.numel(), |dx| {
                        for (r, (yrow, grow)) in y
                            .data()
                            .chunks_exact(d_len)
                            .zip(g.chunks_exact(d_len))
                            .enumerate()
                        {
                            let dot: T = yrow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                            for j in 0..d_len {
                                dx[r * d_len + j] =
                                    dx[r * d_len + j] + yrow[j] * (grow[j] - dot);
                            }
                        }
                    });
                }
            }
            Op::Gelu { x } => {
                if needs(*x) {
                    let vx = val(*x);
                    Self::accumulate(adj, *x, vx.numel(), |dx| {
                        for (j, (&v, &gy)) in vx.data().iter().zip(g).enumerate() {
                            dx[j] = dx[j] + gy * gelu_tanh_grad(v);
                        }
                    });
                }
            }
            Op::Silu { x } => {
                if needs(*x) {
                    let vx = val(*x);
                    Self::accumulate(adj, *x, vx.numel(), |dx| {
                        for (j, (&v, &gy)) in vx.data().iter().zip(g).enumerate() {
                            let s = sigmoid(v);
                            dx[j] = dx[j] + gy * s * (T::one() + v * (T::one() - s));
                        }
                    });
                }
            }
            Op::Sum { x } => {
                if needs(*x) {
                    let n = val(*x).numel();
                    let gy = g[0];
                    Self::accumulate(adj, *x, n, |dx| {
                        for v in dx.iter_mut() {
                            *v = *v + gy;
                        }
                    });
                }
            }
            Op::Mean { x } => {
                if needs(*x) {
                    let n = val(*x).numel();
                    let gy = g[0] / T::from_f64(n as f64);
                    Self::accumulate(adj, *x, n, |dx| {
                        for v in dx.iter_mut() {
                            *v = *v + gy;
                        }
                    });
                }
            }
        }
        Ok(())
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    (T::one() + (-x).exp()).recip()
}

/// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
fn gelu_tanh<T: Scalar>(x: T) -> T {
    let c = T::from_f64(0.7978845608028654); // sqrt(2/pi)
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_tanh_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64(0.7978845608028654);
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * c * (T::one() + three * k * x * x)
}
