use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    CausalSoftmax(Var),
    LogSoftmaxGather(Var, Vec<usize>),
    Gather(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    L2NormalizeRows(Var),
    SqrtClamped(Var, f64),
    Mean(Var),
    MaskedMean(Var, Vec<bool>),
    BlockGram(Var, usize),
    QuadraticForm(Var, Var),
    PairWeightedSum(Var, Var),
    RmsNorm(Var, f64),
    Gelu(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive applications in evaluation order.
///
/// Nodes are appended as they are computed, so recording order is already a
/// topological order; [`Tape::backward`] walks it once in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient of the differentiated output with respect to `var`.
    ///
    /// `None` when `var` does not require gradients or does not influence the output.
    pub fn get(&self, var: Var) -> Option<Tensor> {
        let [r, c] = self.shapes[var.0];
        self.grads[var.0]
            .as_ref()
            .map(|g| Tensor::new(r, c, g.clone()).expect("gradient shape"))
    }

    /// Like [`Gradients::get`] but returns zeros instead of `None`.
    pub fn get_or_zeros(&self, var: Var) -> Tensor {
        let [r, c] = self.shapes[var.0];
        self.get(var).unwrap_or_else(|| Tensor::zeros(r, c))
    }
}

fn shape_err(op: &str, a: [usize; 2], b: [usize; 2]) -> Error {
    Error::usage(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ([m, k], [k2, n]) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(shape_err("matmul", [m, k], [k2, n]));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::new(m, n, out)?, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let ([m, k], [n, k2]) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(shape_err("matmul_t", [m, k], [n, k2]));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::new(m, n, out)?, Op::MatMulT(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", self.shape(a), self.shape(b)));
        }
        let [r, c] = self.shape(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(Tensor::new(r, c, data)?, Op::Add(a, b), &[a, b]))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let ([r, c], rs) = (self.shape(a), self.shape(row));
        if rs != [1, c] {
            return Err(shape_err("add_row", [r, c], rs));
        }
        let rv = self.value(row).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_exact_mut(c) {
            chunk.iter_mut().zip(&rv).for_each(|(x, y)| *x += y);
        }
        Ok(self.push(Tensor::new(r, c, data)?, Op::AddRow(a, row), &[a, row]))
    }

    /// Multiplies every row of `a` elementwise by a `1 × n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let ([r, c], rs) = (self.shape(a), self.shape(row));
        if rs != [1, c] {
            return Err(shape_err("mul_row", [r, c], rs));
        }
        let rv = self.value(row).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_exact_mut(c) {
            chunk.iter_mut().zip(&rv).for_each(|(x, y)| *x *= y);
        }
        Ok(self.push(Tensor::new(r, c, data)?, Op::MulRow(a, row), &[a, row]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let [r, c] = self.shape(a);
        let data = self.value(a).data().iter().map(|x| x * s).collect();
        self.push(Tensor::new(r, c, data).expect("same shape"), Op::Scale(a, s), &[a])
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let [r, c] = self.shape(a);
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_exact_mut(c) {
            softmax_in_place(row);
        }
        self.push(Tensor::new(r, c, data).expect("same shape"), Op::Softmax(a), &[a])
    }

    /// Row-wise softmax of a square score matrix where row `i` only sees columns `0..=i`.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var> {
        let [r, c] = self.shape(a);
        if r != c {
            return Err(shape_err("causal_softmax", [r, c], [c, r]));
        }
        let mut data = self.value(a).data().to_vec();
        for (i, row) in data.chunks_exact_mut(c).enumerate() {
            softmax_in_place(&mut row[..=i]);
            row[i + 1..].iter_mut().for_each(|x| *x = 0.0);
        }
        Ok(self.push(Tensor::new(r, c, data)?, Op::CausalSoftmax(a), &[a]))
    }

    /// Per row `i`, `log_softmax(a)[i, targets[i]]`, as an `r × 1` column.
    pub fn log_softmax_gather(&mut self, a: Var, targets: &[usize]) -> Result<Var> {
        let [r, c] = self.shape(a);
        if targets.len() != r {
            return Err(Error::usage(format!(
                "log_softmax_gather: {r} rows but {} targets",
                targets.len()
            )));
        }
        if let Some(t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::data(format!("target id {t} out of range for {c} classes")));
        }
        let x = self.value(a);
        let data = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let row = x.row(i);
                row[t] - log_sum_exp(row)
            })
            .collect();
        Ok(self.push(
            Tensor::new(r, 1, data)?,
            Op::LogSoftmaxGather(a, targets.to_vec()),
            &[a],
        ))
    }

    /// Values of the `k` largest entries of each row, in descending order,
    /// with ties broken toward the lower column.
    ///
    /// Returns the `r × k` values and the flat selected column ids (row-major).
    /// The selection is fixed at record time; gradients reach the selected
    /// entries only.
    pub fn topk_values_gather(&mut self, a: Var, k: usize) -> Result<(Var, Vec<usize>)> {
        let [r, c] = self.shape(a);
        if k == 0 || k > c {
            return Err(Error::usage(format!("top-{k} of a row with {c} entries")));
        }
        let x = self.value(a);
        let mut idx = Vec::with_capacity(r * k);
        for i in 0..r {
            idx.extend(top_k_indices(x.row(i), k));
        }
        let data = idx
            .iter()
            .enumerate()
            .map(|(n, &j)| x.get(n / k, j))
            .collect();
        let flat: Vec<usize> = idx
            .iter()
            .enumerate()
            .map(|(n, &j)| (n / k) * c + j)
            .collect();
        let out = self.push(Tensor::new(r, k, data)?, Op::Gather(a, flat), &[a]);
        Ok((out, idx))
    }

    /// Rows of `a` at `ids`, stacked in order.
    pub fn gather_rows(&mut self, a: Var, ids: &[usize]) -> Result<Var> {
        let [r, c] = self.shape(a);
        if let Some(i) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::data(format!("row id {i} out of range for {r} rows")));
        }
        let x = self.value(a);
        let data = ids.iter().flat_map(|&i| x.row(i).iter().copied()).collect();
        Ok(self.push(
            Tensor::new(ids.len(), c, data)?,
            Op::GatherRows(a, ids.to_vec()),
            &[a],
        ))
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let [r, c] = self.shape(a);
        let mut data = self.value(a).data().to_vec();
        for (i, row) in data.chunks_exact_mut(c).enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::numerical(format!("row {i} has zero norm")));
            }
            row.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(self.push(Tensor::new(r, c, data)?, Op::L2NormalizeRows(a), &[a]))
    }

    /// `sqrt(max(a, floor))` elementwise; entries below the floor get zero gradient.
    pub fn sqrt_clamped(&mut self, a: Var, floor: f64) -> Result<Var> {
        if floor <= 0.0 {
            return Err(Error::usage(format!("clamp floor must be positive, got {floor}")));
        }
        let [r, c] = self.shape(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| x.max(floor).sqrt())
            .collect();
        Ok(self.push(Tensor::new(r, c, data)?, Op::SqrtClamped(a, floor), &[a]))
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a).data();
        let m = x.iter().sum::<f64>() / x.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(a), &[a])
    }

    /// Mean over the entries where `mask` is set; zero when none are.
    pub fn masked_mean(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let x = self.value(a).data();
        if mask.len() != x.len() {
            return Err(Error::usage(format!(
                "masked_mean: mask of {} for {} entries",
                mask.len(),
                x.len()
            )));
        }
        let count = mask.iter().filter(|&&m| m).count();
        let total: f64 = x.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v).sum();
        let m = if count == 0 { 0.0 } else { total / count as f64 };
        Ok(self.push(Tensor::scalar(m), Op::MaskedMean(a, mask.to_vec()), &[a]))
    }

    /// For `a` of shape `(m·k) × d`, the `m` Gram matrices of consecutive
    /// `k`-row blocks, flattened to `m × k²`.
    pub fn block_gram(&mut self, a: Var, k: usize) -> Result<Var> {
        let [r, d] = self.shape(a);
        if k == 0 || r % k != 0 {
            return Err(Error::usage(format!("block_gram: {r} rows in blocks of {k}")));
        }
        let m = r / k;
        let x = self.value(a).data();
        let mut out = vec![0.0; m * k * k];
        for b in 0..m {
            let block = &x[b * k * d..(b + 1) * k * d];
            gemm_nt(block, block, &mut out[b * k * k..(b + 1) * k * k], k, d, k);
        }
        Ok(self.push(Tensor::new(m, k * k, out)?, Op::BlockGram(a, k), &[a]))
    }

    /// Squared distances under a softmax covariance.
    ///
    /// Row `r` of `p` (`m × k`) is a distribution and row `r` of `gram`
    /// (`m × k²`) a `k × k` matrix `G`. Entry `(i, j)` of the result is
    /// `xᵀ(diag(p) − ppᵀ)x` with `x = G[i,:] − G[j,:]`.
    pub fn quadratic_form(&mut self, p: Var, gram: Var) -> Result<Var> {
        let ([m, k], gs) = (self.shape(p), self.shape(gram));
        if gs != [m, k * k] {
            return Err(shape_err("quadratic_form", [m, k], gs));
        }
        let (pv, gv) = (self.value(p).data(), self.value(gram).data());
        let mut out = vec![0.0; m * k * k];
        for r in 0..m {
            let pr = &pv[r * k..(r + 1) * k];
            let g = &gv[r * k * k..(r + 1) * k * k];
            for i in 0..k {
                for j in 0..k {
                    out[r * k * k + i * k + j] = covariance_form(pr, g, k, i, j).0;
                }
            }
        }
        Ok(self.push(Tensor::new(m, k * k, out)?, Op::QuadraticForm(p, gram), &[p, gram]))
    }

    /// Per row, `Σ_{i≠j} p_i p_j D_ij` with `p: m × k` and `D: m × k²`.
    pub fn pair_weighted_sum(&mut self, p: Var, dist: Var) -> Result<Var> {
        let ([m, k], ds) = (self.shape(p), self.shape(dist));
        if ds != [m, k * k] {
            return Err(shape_err("pair_weighted_sum", [m, k], ds));
        }
        let (pv, dv) = (self.value(p).data(), self.value(dist).data());
        let data = (0..m)
            .map(|r| {
                let pr = &pv[r * k..(r + 1) * k];
                let dr = &dv[r * k * k..(r + 1) * k * k];
                let mut s = 0.0;
                for i in 0..k {
                    for j in 0..k {
                        if i != j {
                            s += pr[i] * pr[j] * dr[i * k + j];
                        }
                    }
                }
                s
            })
            .collect();
        Ok(self.push(Tensor::new(m, 1, data)?, Op::PairWeightedSum(p, dist), &[p, dist]))
    }

    /// `x / sqrt(mean(x²) + eps)` per row.
    pub fn rms_norm(&mut self, a: Var, eps: f64) -> Var {
        let [r, c] = self.shape(a);
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_exact_mut(c) {
            let scale = rms(row, eps);
            row.iter_mut().for_each(|x| *x /= scale);
        }
        self.push(Tensor::new(r, c, data).expect("same shape"), Op::RmsNorm(a, eps), &[a])
    }

    /// tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let [r, c] = self.shape(a);
        let data = self.value(a).data().iter().map(|&x| gelu(x).0).collect();
        self.push(Tensor::new(r, c, data).expect("same shape"), Op::Gelu(a), &[a])
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let [r, c] = self.shape(a);
        if start + len > c {
            return Err(Error::usage(format!(
                "slice_cols {start}..{} of {c} columns",
                start + len
            )));
        }
        let x = self.value(a);
        let data = (0..r)
            .flat_map(|i| x.row(i)[start..start + len].iter().copied())
            .collect();
        Ok(self.push(Tensor::new(r, len, data)?, Op::SliceCols(a, start), &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts.first().map_or(0, |&p| self.shape(p)[0]);
        if parts.iter().any(|&p| self.shape(p)[0] != r) {
            return Err(Error::usage("concat_cols: row counts differ"));
        }
        let c: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        Ok(self.push(Tensor::new(r, c, data)?, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts.first().map_or(0, |&p| self.shape(p)[1]);
        if parts.iter().any(|&p| self.shape(p)[1] != c) {
            return Err(Error::usage("concat_rows: column counts differ"));
        }
        let r: usize = parts.iter().map(|&p| self.shape(p)[0]).sum();
        let mut data = Vec::with_capacity(r * c);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::new(r, c, data)?, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Reverse pass from `output`, seeded with ones.
    pub fn backward(&self, output: Var) -> Gradients {
        let n = output.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0; self.nodes[output.0].value.data().len()]);

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        Gradients {
            grads: grads
                .into_iter()
                .zip(&self.nodes)
                .map(|(g, node)| g.filter(|_| node.requires_grad))
                .collect(),
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        let [yr, yc] = node.value.shape();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ([m, k], [_, n]) = (self.shape(*a), self.shape(*b));
                if let Some(ga) = self.slot(*a, grads) {
                    gemm_nt(g, self.value(*b).data(), ga, m, n, k);
                }
                if let Some(gb) = self.slot(*b, grads) {
                    gemm_tn(self.value(*a).data(), g, gb, m, k, n);
                }
            }
            Op::MatMulT(a, b) => {
                let ([m, k], [n, _]) = (self.shape(*a), self.shape(*b));
                if let Some(ga) = self.slot(*a, grads) {
                    gemm_nn(g, self.value(*b).data(), ga, m, n, k);
                }
                if let Some(gb) = self.slot(*b, grads) {
                    gemm_tn(g, self.value(*a).data(), gb, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.slot(*v, grads) {
                        gv.iter_mut().zip(g).for_each(|(x, d)| *x += d);
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(ga) = self.slot(*a, grads) {
                    ga.iter_mut().zip(g).for_each(|(x, d)| *x += d);
                }
                if let Some(gr) = self.slot(*row, grads) {
                    for chunk in g.chunks_exact(yc) {
                        gr.iter_mut().zip(chunk).for_each(|(x, d)| *x += d);
                    }
                }
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (self.value(*a).data(), self.value(*row).data());
                if let Some(ga) = self.slot(*a, grads) {
                    for (gchunk, dchunk) in ga.chunks_exact_mut(yc).zip(g.chunks_exact(yc)) {
                        for ((x, d), w) in gchunk.iter_mut().zip(dchunk).zip(rv) {
                            *x += d * w;
                        }
                    }
                }
                if let Some(gr) = self.slot(*row, grads) {
                    for (achunk, dchunk) in av.chunks_exact(yc).zip(g.chunks_exact(yc)) {
                        for ((x, d), a) in gr.iter_mut().zip(dchunk).zip(achunk) {
                            *x += d * a;
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.slot(*a, grads) {
                    ga.iter_mut().zip(g).for_each(|(x, d)| *x += s * d);
                }
            }
            Op::Softmax(a) | Op::CausalSoftmax(a) => {
                if let Some(ga) = self.slot(*a, grads) {
                    for ((gr, dr), yrow) in ga
                        .chunks_exact_mut(yc)
                        .zip(g.chunks_exact(yc))
                        .zip(y.chunks_exact(yc))
                    {
                        let dot: f64 = dr.iter().zip(yrow).map(|(d, p)| d * p).sum();
                        for ((x, d), p) in gr.iter_mut().zip(dr).zip(yrow) {
                            *x += p * (d - dot);
                        }
                    }
                }
            }
            Op::LogSoftmaxGather(a, targets) => {
                let xa = self.value(*a);
                let c = xa.cols();
                if let Some(ga) = self.slot(*a, grads) {
                    for (i, &t) in targets.iter().enumerate() {
                        let mut p = xa.row(i).to_vec();
                        softmax_in_place(&mut p);
                        let gr = &mut ga[i * c..(i + 1) * c];
                        for (j, (x, pj)) in gr.iter_mut().zip(&p).enumerate() {
                            let ind = if j == t { 1.0 } else { 0.0 };
                            *x += g[i] * (ind - pj);
                        }
                    }
                }
            }
            Op::Gather(a, flat) => {
                if let Some(ga) = self.slot(*a, grads) {
                    for (&f, d) in flat.iter().zip(g) {
                        ga[f] += d;
                    }
                }
            }
            Op::GatherRows(a, ids) => {
                let c = yc;
                if let Some(ga) = self.slot(*a, grads) {
                    for (n, &i) in ids.iter().enumerate() {
                        let src = &g[n * c..(n + 1) * c];
                        ga[i * c..(i + 1) * c]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, d)| *x += d);
                    }
                }
            }
            Op::L2NormalizeRows(a) => {
                let xa = self.value(*a).data();
                if let Some(ga) = self.slot(*a, grads) {
                    for r in 0..yr {
                        let xr = &xa[r * yc..(r + 1) * yc];
                        let norm = xr.iter().map(|x| x * x).sum::<f64>().sqrt();
                        let yrow = &y[r * yc..(r + 1) * yc];
                        let dr = &g[r * yc..(r + 1) * yc];
                        let dot: f64 = dr.iter().zip(yrow).map(|(d, v)| d * v).sum();
                        for ((x, d), v) in ga[r * yc..(r + 1) * yc].iter_mut().zip(dr).zip(yrow) {
                            *x += (d - v * dot) / norm;
                        }
                    }
                }
            }
            Op::SqrtClamped(a, floor) => {
                let xa = self.value(*a).data();
                if let Some(ga) = self.slot(*a, grads) {
                    for ((x, d), (&xi, &yi)) in ga.iter_mut().zip(g).zip(xa.iter().zip(y)) {
                        if xi >= *floor {
                            *x += d * 0.5 / yi;
                        }
                    }
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = self.slot(*a, grads) {
                    let share = g[0] / ga.len() as f64;
                    ga.iter_mut().for_each(|x| *x += share);
                }
            }
            Op::MaskedMean(a, mask) => {
                let count = mask.iter().filter(|&&m| m).count();
                if let Some(ga) = self.slot(*a, grads) {
                    if count > 0 {
                        let share = g[0] / count as f64;
                        for (x, &m) in ga.iter_mut().zip(mask) {
                            if m {
                                *x += share;
                            }
                        }
                    }
                }
            }
            Op::BlockGram(a, k) => {
                let k = *k;
                let xa = self.value(*a);
                let d = xa.cols();
                if let Some(ga) = self.slot(*a, grads) {
                    for b in 0..yr {
                        let gb = &g[b * k * k..(b + 1) * k * k];
                        let xb = &xa.data()[b * k * d..(b + 1) * k * d];
                        let out = &mut ga[b * k * d..(b + 1) * k * d];
                        // dX = (dG + dGᵀ) X
                        for i in 0..k {
                            for j in 0..k {
                                let w = gb[i * k + j] + gb[j * k + i];
                                if w == 0.0 {
                                    continue;
                                }
                                for t in 0..d {
                                    out[i * d + t] += w * xb[j * d + t];
                                }
                            }
                        }
                    }
                }
            }
            Op::QuadraticForm(p, gram) => {
                let k = self.shape(*p)[1];
                let (pv, gv) = (self.value(*p).data(), self.value(*gram).data());
                let mut dp = vec![0.0; pv.len()];
                let mut dg = vec![0.0; gv.len()];
                for r in 0..yr {
                    let pr = &pv[r * k..(r + 1) * k];
                    let gr = &gv[r * k * k..(r + 1) * k * k];
                    for i in 0..k {
                        for j in 0..k {
                            let dy = g[r * k * k + i * k + j];
                            if i == j || dy == 0.0 {
                                continue;
                            }
                            let s = covariance_form(pr, gr, k, i, j).1;
                            for a in 0..k {
                                let x = gr[i * k + a] - gr[j * k + a];
                                dp[r * k + a] += dy * (x * x - 2.0 * s * x);
                                let dx = dy * 2.0 * pr[a] * (x - s);
                                dg[r * k * k + i * k + a] += dx;
                                dg[r * k * k + j * k + a] -= dx;
                            }
                        }
                    }
                }
                self.accumulate(*p, &dp, grads);
                self.accumulate(*gram, &dg, grads);
            }
            Op::PairWeightedSum(p, dist) => {
                let k = self.shape(*p)[1];
                let (pv, dv) = (self.value(*p).data(), self.value(*dist).data());
                let mut dp = vec![0.0; pv.len()];
                let mut dd = vec![0.0; dv.len()];
                for r in 0..yr {
                    let pr = &pv[r * k..(r + 1) * k];
                    let dr = &dv[r * k * k..(r + 1) * k * k];
                    for i in 0..k {
                        for j in 0..k {
                            if i == j {
                                continue;
                            }
                            dp[r * k + i] += g[r] * pr[j] * (dr[i * k + j] + dr[j * k + i]);
                            dd[r * k * k + i * k + j] += g[r] * pr[i] * pr[j];
                        }
                    }
                }
                self.accumulate(*p, &dp, grads);
                self.accumulate(*dist, &dd, grads);
            }
            Op::RmsNorm(a, eps) => {
                let xa = self.value(*a).data();
                if let Some(ga) = self.slot(*a, grads) {
                    for r in 0..yr {
                        let scale = rms(&xa[r * yc..(r + 1) * yc], *eps);
                        let yrow = &y[r * yc..(r + 1) * yc];
                        let dr = &g[r * yc..(r + 1) * yc];
                        let dot = dr.iter().zip(yrow).map(|(d, v)| d * v).sum::<f64>() / yc as f64;
                        for ((x, d), v) in ga[r * yc..(r + 1) * yc].iter_mut().zip(dr).zip(yrow) {
                            *x += (d - v * dot) / scale;
                        }
                    }
                }
            }
            Op::Gelu(a) => {
                let xa = self.value(*a).data();
                if let Some(ga) = self.slot(*a, grads) {
                    for ((x, d), &xi) in ga.iter_mut().zip(g).zip(xa) {
                        *x += d * gelu(xi).1;
                    }
                }
            }
            Op::SliceCols(a, start) => {
                let c = self.shape(*a)[1];
                if let Some(ga) = self.slot(*a, grads) {
                    for r in 0..yr {
                        ga[r * c + start..r * c + start + yc]
                            .iter_mut()
                            .zip(&g[r * yc..(r + 1) * yc])
                            .for_each(|(x, d)| *x += d);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p)[1];
                    if let Some(gp) = self.slot(p, grads) {
                        for r in 0..yr {
                            gp[r * pc..(r + 1) * pc]
                                .iter_mut()
                                .zip(&g[r * yc + offset..r * yc + offset + pc])
                                .for_each(|(x, d)| *x += d);
                        }
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).data().len();
                    if let Some(gp) = self.slot(p, grads) {
                        gp.iter_mut()
                            .zip(&g[offset..offset + len])
                            .for_each(|(x, d)| *x += d);
                    }
                    offset += len;
                }
            }
        }
    }

    /// Gradient buffer for `v`, created on first use; `None` if `v` takes no gradient.
    fn slot<'g>(&self, v: Var, grads: &'g mut [Option<Vec<f64>>]) -> Option<&'g mut [f64]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.data().len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]).as_mut_slice())
    }

    fn accumulate(&self, v: Var, delta: &[f64], grads: &mut [Option<Vec<f64>>]) {
        if let Some(gv) = self.slot(v, grads) {
            gv.iter_mut().zip(delta).for_each(|(x, d)| *x += d);
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Column ids of the `k` largest entries, descending, lower id first on ties.
pub(crate) fn top_k_indices(row: &[f64], k: usize) -> Vec<usize> {
    let mut best: Vec<usize> = Vec::with_capacity(k + 1);
    for (j, &v) in row.iter().enumerate() {
        // strict comparison keeps earlier ids ahead of equal later ones
        let pos = best.partition_point(|&b| row[b] >= v);
        if pos < k {
            best.insert(pos, j);
            best.truncate(k);
        }
    }
    best
}

/// `(xᵀ(diag(p) − ppᵀ)x, pᵀx)` for `x = G[i,:] − G[j,:]`.
fn covariance_form(p: &[f64], g: &[f64], k: usize, i: usize, j: usize) -> (f64, f64) {
    let (mut quad, mut lin) = (0.0, 0.0);
    for a in 0..k {
        let x = g[i * k + a] - g[j * k + a];
        quad += p[a] * x * x;
        lin += p[a] * x;
    }
    (quad - lin * lin, lin)
}

fn rms(row: &[f64], eps: f64) -> f64 {
    (row.iter().map(|x| x * x).sum::<f64>() / row.len() as f64 + eps).sqrt()
}

/// `(gelu(x), gelu'(x))`.
fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let value = 0.5 * x * (1.0 + t);
    let deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (value, deriv)
}
