//! Reverse-mode differentiation over a linear tape.
//!
//! Forward methods compute values eagerly through the kernels and append one
//! node per operation. Because ops only reference earlier nodes, a single
//! reverse sweep visits consumers before producers; each op accumulates into
//! its inputs' gradient buffers with an explicit backward rule. There is no
//! graph rewriting: the network architecture is fixed, so the smallest
//! correct machinery wins.

use crate::error::{HpiError, Result};
use crate::kernels::{conv, dense, layout as klay, norm};
use crate::patching::{self, PatchLayout};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a tensor stored on a [`GradTape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TensorId(pub(crate) usize);

/// Partner-selection flavor for the patch-matching op.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SelectKind {
    /// argmax over the similarity row, no gradient to the similarities.
    Hard,
    /// Hard forward (argmax of perturbed logits), soft backward.
    StraightThrough,
    /// Fully soft mixture forward and backward; used by gradient checks.
    Soft,
}

#[derive(Clone, Debug)]
pub(crate) struct SelectionRecord<T> {
    kind: SelectKind,
    tau: f64,
    /// Row-stochastic weights with zero diagonal; empty in Hard mode.
    weights: Vec<T>,
    /// Per-row argmax (of perturbed logits when noisy).
    pub hard: Vec<usize>,
}

enum Op<T> {
    Leaf,
    Add { a: TensorId, b: TensorId },
    Scale { a: TensorId, factor: T },
    Matmul { a: TensorId, b: TensorId },
    Bmm { a: TensorId, b: TensorId },
    BiasAdd { a: TensorId, bias: TensorId },
    Softmax { a: TensorId, axis: usize },
    LayerNorm { a: TensorId, gamma: TensorId, beta: TensorId, eps: f64 },
    Gelu { a: TensorId },
    Conv3x3 { x: TensorId, w: TensorId, b: TensorId },
    MeanRows { a: TensorId },
    PixelShuffle { a: TensorId, r: usize },
    CropSpatial { a: TensorId },
    L1Loss { a: TensorId, b: TensorId },
    Sum { a: TensorId },
    Reshape { a: TensorId },
    Permute { a: TensorId, perm: Vec<usize> },
    Divide { x: TensorId, layout: PatchLayout },
    Aggregate { p: TensorId, layout: PatchLayout },
    ZeroDiag { a: TensorId },
    Select { s: TensorId, x: TensorId, record: SelectionRecord<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs: bool,
}

/// Gradients produced by [`GradTape::backward`], indexed by [`TensorId`].
pub struct GradMap<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> GradMap<T> {
    pub fn get(&self, id: TensorId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: TensorId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }

    /// Largest absolute gradient entry over all recorded gradients.
    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for g in self.grads.iter().flatten() {
            for v in g.data() {
                let a = v.as_f64().abs();
                if a > m {
                    m = a;
                }
            }
        }
        m
    }
}

#[derive(Default)]
pub struct GradTape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> GradTape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register an input tensor; it participates in gradients iff its
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, t: Tensor<T>) -> TensorId {
        let needs = t.requires_grad();
        self.push(t, Op::Leaf, needs)
    }

    /// Register a tensor that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor<T>) -> TensorId {
        t.set_requires_grad(false);
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, id: TensorId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn dims(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].value.dims()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs: bool) -> TensorId {
        self.nodes.push(Node { value, op, needs });
        TensorId(self.nodes.len() - 1)
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs
    }

    // ── forward ops ─────────────────────────────────────────────────────

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.dims(a) != self.dims(b) {
            return Err(HpiError::Shape(format!(
                "add dims {:?} vs {:?}",
                self.dims(a),
                self.dims(b)
            )));
        }
        let mut out = Tensor::zeros(self.dims(a));
        dense::add(self.value(a).data(), self.value(b).data(), out.data_mut());
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b }, needs))
    }

    pub fn scale(&mut self, a: TensorId, factor: T) -> TensorId {
        let mut out = Tensor::zeros(self.dims(a));
        dense::scale(self.value(a).data(), factor, out.data_mut());
        let needs = self.needs(a);
        self.push(out, Op::Scale { a, factor }, needs)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da.len() != 2 || db.len() != 2 || da[1] != db[0] {
            return Err(HpiError::Shape(format!("matmul dims {da:?} x {db:?}")));
        }
        let (m, k, n) = (da[0], da[1], db[1]);
        let mut out = Tensor::zeros(&[m, n]);
        dense::matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n, out.data_mut());
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Matmul { a, b }, needs))
    }

    pub fn bmm(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da.len() != 3 || db.len() != 3 || da[0] != db[0] || da[2] != db[1] {
            return Err(HpiError::Shape(format!("bmm dims {da:?} x {db:?}")));
        }
        let (batch, m, k, n) = (da[0], da[1], da[2], db[2]);
        let mut out = Tensor::zeros(&[batch, m, n]);
        dense::bmm_nn(self.value(a).data(), self.value(b).data(), batch, m, k, n, out.data_mut());
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Bmm { a, b }, needs))
    }

    pub fn bias_add(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let (da, db) = (self.dims(a), self.dims(bias));
        if db.len() != 1 || da.last() != Some(&db[0]) {
            return Err(HpiError::Shape(format!("bias_add dims {da:?} + {db:?}")));
        }
        let mut out = Tensor::zeros(da);
        dense::bias_add(self.value(a).data(), self.value(bias).data(), out.data_mut());
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(out, Op::BiasAdd { a, bias }, needs))
    }

    pub fn softmax(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        let da = self.dims(a).to_vec();
        if axis >= da.len() {
            return Err(HpiError::Usage(format!("softmax axis {axis} out of range for {da:?}")));
        }
        let mut out = Tensor::zeros(&da);
        norm::softmax(self.value(a).data(), &da, axis, out.data_mut());
        let needs = self.needs(a);
        Ok(self.push(out, Op::Softmax { a, axis }, needs))
    }

    pub fn layer_norm(&mut self, a: TensorId, gamma: TensorId, beta: TensorId, eps: f64) -> Result<TensorId> {
        let da = self.dims(a).to_vec();
        let c = *da.last().ok_or_else(|| HpiError::Shape("layer_norm on rank-0".into()))?;
        if self.dims(gamma) != [c] || self.dims(beta) != [c] {
            return Err(HpiError::Shape(format!(
                "layer_norm params must be [{c}], got {:?}/{:?}",
                self.dims(gamma),
                self.dims(beta)
            )));
        }
        let mut out = Tensor::zeros(&da);
        norm::layer_norm(
            self.value(a).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
            out.data_mut(),
        );
        let needs = self.needs(a) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(out, Op::LayerNorm { a, gamma, beta, eps }, needs))
    }

    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        let mut out = Tensor::zeros(self.dims(a));
        norm::gelu(self.value(a).data(), out.data_mut());
        let needs = self.needs(a);
        self.push(out, Op::Gelu { a }, needs)
    }

    pub fn conv3x3(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let (dx, dw, db) = (self.dims(x), self.dims(w), self.dims(b));
        if dx.len() != 3 || dw.len() != 4 || dw[2] != 3 || dw[3] != 3 || db.len() != 1 {
            return Err(HpiError::Shape(format!("conv3x3 dims x{dx:?} w{dw:?} b{db:?}")));
        }
        if dw[1] != dx[0] || db[0] != dw[0] {
            return Err(HpiError::Shape(format!(
                "conv3x3 channel mismatch: x has {}, w expects {}, w out {}, b {}",
                dx[0], dw[1], dw[0], db[0]
            )));
        }
        let (c_in, h, wd) = (dx[0], dx[1], dx[2]);
        let c_out = dw[0];
        let mut out = Tensor::zeros(&[c_out, h, wd]);
        conv::conv3x3(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            c_in,
            c_out,
            h,
            wd,
            out.data_mut(),
        );
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::Conv3x3 { x, w, b }, needs))
    }

    /// Mean over the second-to-last axis: [.., rows, c] -> [.., c].
    pub fn mean_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let da = self.dims(a).to_vec();
        if da.len() < 2 {
            return Err(HpiError::Shape(format!("mean_rows needs rank >= 2, got {da:?}")));
        }
        let (rows, c) = (da[da.len() - 2], da[da.len() - 1]);
        if rows == 0 {
            return Err(HpiError::Shape("mean_rows over empty axis".into()));
        }
        let mut out_dims = da.clone();
        out_dims.remove(da.len() - 2);
        let mut out = Tensor::zeros(&out_dims);
        klay::mean_rows(self.value(a).data(), rows, c, out.data_mut());
        let needs = self.needs(a);
        Ok(self.push(out, Op::MeanRows { a }, needs))
    }

    pub fn pixel_shuffle(&mut self, a: TensorId, r: usize) -> Result<TensorId> {
        let da = self.dims(a).to_vec();
        if da.len() != 3 || r == 0 || da[0] % (r * r) != 0 {
            return Err(HpiError::Shape(format!(
                "pixel_shuffle needs [r²·c, h, w] with r²={} dividing channels, got {da:?}",
                r * r
            )));
        }
        let c_out = da[0] / (r * r);
        let mut out = Tensor::zeros(&[c_out, da[1] * r, da[2] * r]);
        klay::pixel_shuffle(self.value(a).data(), c_out, r, da[1], da[2], out.data_mut());
        let needs = self.needs(a);
        Ok(self.push(out, Op::PixelShuffle { a, r }, needs))
    }

    pub fn crop_spatial(&mut self, a: TensorId, oh: usize, ow: usize) -> Result<TensorId> {
        let da = self.dims(a).to_vec();
        if da.len() != 3 || oh > da[1] || ow > da[2] {
            return Err(HpiError::Shape(format!("crop {oh}x{ow} from {da:?}")));
        }
        let mut out = Tensor::zeros(&[da[0], oh, ow]);
        klay::crop_spatial(self.value(a).data(), da[1], da[2], oh, ow, out.data_mut());
        let needs = self.needs(a);
        Ok(self.push(out, Op::CropSpatial { a }, needs))
    }

    /// Mean absolute difference, reduced in f64 and returned as a scalar.
    pub fn l1_loss(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.dims(a) != self.dims(b) {
            return Err(HpiError::Shape(format!(
                "l1_loss dims {:?} vs {:?}",
                self.dims(a),
                self.dims(b)
            )));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut acc = 0.0f64;
        for i in 0..av.len() {
            acc += (av[i] - bv[i]).as_f64().abs();
        }
        let out = Tensor::scalar(T::from_f64(acc / av.len() as f64));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::L1Loss { a, b }, needs))
    }

    /// Sum of all elements, reduced in f64 and returned as a scalar.
    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let acc: f64 = self.value(a).data().iter().map(|v| v.as_f64()).sum();
        let out = Tensor::scalar(T::from_f64(acc));
        let needs = self.needs(a);
        self.push(out, Op::Sum { a }, needs)
    }

    pub fn reshape(&mut self, a: TensorId, dims: Vec<usize>) -> Result<TensorId> {
        let out = self.value(a).clone().reshaped(dims)?;
        let needs = self.needs(a);
        Ok(self.push(out, Op::Reshape { a }, needs))
    }

    pub fn permute(&mut self, a: TensorId, perm: Vec<usize>) -> Result<TensorId> {
        let da = self.dims(a).to_vec();
        let mut seen = vec![false; da.len()];
        if perm.len() != da.len() || perm.iter().any(|&p| p >= da.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(HpiError::Usage(format!("invalid permutation {perm:?} for {da:?}")));
        }
        let out_dims: Vec<usize> = perm.iter().map(|&p| da[p]).collect();
        let mut out = Tensor::zeros(&out_dims);
        klay::permute(self.value(a).data(), &da, &perm, out.data_mut());
        let needs = self.needs(a);
        Ok(self.push(out, Op::Permute { a, perm }, needs))
    }

    /// Split [c, h, w] into patches of size `p`: output [n, p², c].
    pub fn divide(&mut self, x: TensorId, p: usize) -> Result<(TensorId, PatchLayout)> {
        let dx = self.dims(x).to_vec();
        if dx.len() != 3 {
            return Err(HpiError::Shape(format!("divide expects [c,h,w], got {dx:?}")));
        }
        let layout = PatchLayout::new(dx[1], dx[2], p)?;
        let mut out = Tensor::zeros(&[layout.num_patches(), p * p, dx[0]]);
        patching::divide_into(self.value(x).data(), dx[0], &layout, out.data_mut());
        let needs = self.needs(x);
        let id = self.push(out, Op::Divide { x, layout: layout.clone() }, needs);
        Ok((id, layout))
    }

    /// Paste [n, p², c] patches back into [c, h, w], averaging overlaps.
    pub fn aggregate(&mut self, p: TensorId, layout: &PatchLayout) -> Result<TensorId> {
        let dp = self.dims(p).to_vec();
        let sq = layout.patch_size() * layout.patch_size();
        if dp.len() != 3 || dp[0] != layout.num_patches() || dp[1] != sq {
            return Err(HpiError::Geometry(format!(
                "aggregate dims {dp:?} inconsistent with layout ({} patches of {sq})",
                layout.num_patches()
            )));
        }
        let c = dp[2];
        let mut out = Tensor::zeros(&[c, layout.height(), layout.width()]);
        patching::aggregate_into(self.value(p).data(), c, layout, out.data_mut());
        let needs = self.needs(p);
        Ok(self.push(out, Op::Aggregate { p, layout: layout.clone() }, needs))
    }

    /// Copy of a square matrix with the diagonal forced to zero.
    pub fn zero_diag(&mut self, a: TensorId) -> Result<TensorId> {
        let da = self.dims(a).to_vec();
        if da.len() != 2 || da[0] != da[1] {
            return Err(HpiError::Shape(format!("zero_diag needs a square matrix, got {da:?}")));
        }
        let n = da[0];
        let mut out = self.value(a).clone();
        out.set_requires_grad(false);
        for i in 0..n {
            out.data_mut()[i * n + i] = T::zero();
        }
        let needs = self.needs(a);
        Ok(self.push(out, Op::ZeroDiag { a }, needs))
    }

    /// Partner selection over a zero-diagonal similarity matrix.
    ///
    /// `s` is [n, n], `x` is [n, r, c]; the output is [n, r, c] where row i
    /// holds the selected partner's patch. Hard mode picks
    /// `argmax_{j≠i} s[i][j]` (ties to the smallest j) and passes no gradient
    /// to `s`. The noisy modes perturb `s[i][j]/tau + noise[i·n+j]` and form
    /// row-stochastic weights over `j ≠ i`; straight-through outputs the
    /// argmax patch but backpropagates through the weights, soft outputs the
    /// weighted mixture (making it finite-difference checkable).
    pub fn select_partner(
        &mut self,
        s: TensorId,
        x: TensorId,
        kind: SelectKind,
        tau: f64,
        noise: Option<&[f64]>,
    ) -> Result<(TensorId, Vec<usize>)> {
        let ds = self.dims(s).to_vec();
        let dx = self.dims(x).to_vec();
        if ds.len() != 2 || ds[0] != ds[1] || dx.len() != 3 || dx[0] != ds[0] {
            return Err(HpiError::Shape(format!("select_partner dims s{ds:?} x{dx:?}")));
        }
        let n = ds[0];
        if n < 2 {
            return Err(HpiError::Usage("select_partner needs at least 2 patches".into()));
        }
        if let Some(nz) = noise {
            if nz.len() != n * n {
                return Err(HpiError::Usage("noise must have n*n entries".into()));
            }
        }
        if !(tau > 0.0) {
            return Err(HpiError::Usage("tau must be positive".into()));
        }

        let sv = self.value(s).data();
        let (mut weights, mut hard) = (Vec::new(), vec![0usize; n]);
        match kind {
            SelectKind::Hard => {
                for i in 0..n {
                    hard[i] = argmax_excluding(&sv[i * n..(i + 1) * n], i);
                }
            }
            SelectKind::StraightThrough | SelectKind::Soft => {
                weights = vec![T::zero(); n * n];
                let inv_tau = 1.0 / tau;
                for i in 0..n {
                    // perturbed logits l = s/tau + g; diagonal excluded
                    let mut logits = vec![T::neg_infinity(); n];
                    for j in 0..n {
                        if j == i {
                            continue;
                        }
                        let nz = noise.map_or(0.0, |z| z[i * n + j]);
                        logits[j] = T::from_f64(sv[i * n + j].as_f64() * inv_tau + nz);
                    }
                    hard[i] = argmax_excluding(&logits, i);
                    let mx = logits[hard[i]];
                    let mut sum = T::zero();
                    for j in 0..n {
                        if j == i {
                            continue;
                        }
                        let e = (logits[j] - mx).exp();
                        weights[i * n + j] = e;
                        sum += e;
                    }
                    for j in 0..n {
                        if j != i {
                            weights[i * n + j] = weights[i * n + j] / sum;
                        }
                    }
                }
            }
        }

        let block = dx[1] * dx[2];
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); n * block];
        match kind {
            SelectKind::Hard | SelectKind::StraightThrough => {
                for i in 0..n {
                    let j = hard[i];
                    out[i * block..(i + 1) * block].copy_from_slice(&xv[j * block..(j + 1) * block]);
                }
            }
            SelectKind::Soft => {
                for i in 0..n {
                    for j in 0..n {
                        let w = weights[i * n + j];
                        if w == T::zero() {
                            continue;
                        }
                        for e in 0..block {
                            out[i * block + e] += w * xv[j * block + e];
                        }
                    }
                }
            }
        }
        let value = Tensor::new(dx.clone(), out)?;
        let needs = match kind {
            SelectKind::Hard => self.needs(x),
            _ => self.needs(x) || self.needs(s),
        };
        let record = SelectionRecord { kind, tau, weights, hard: hard.clone() };
        let id = self.push(value, Op::Select { s, x, record }, needs);
        Ok((id, hard))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss; returns a gradient per node that
    /// participates in differentiation.
    pub fn backward(&self, loss: TensorId) -> Result<GradMap<T>> {
        if self.value(loss).len() != 1 {
            return Err(HpiError::Usage(format!(
                "backward requires a scalar loss, got dims {:?}",
                self.dims(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.0].needs {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|v| Tensor::new(self.nodes[i].value.dims().to_vec(), v).expect("grad dims")))
            .collect();
        Ok(GradMap { grads })
    }

    fn ensure<'a>(&self, grads: &'a mut [Option<Vec<T>>], id: TensorId) -> &'a mut Vec<T> {
        let slot = &mut grads[id.0];
        if slot.is_none() {
            *slot = Some(vec![T::zero(); self.nodes[id.0].value.len()]);
        }
        slot.as_mut().unwrap()
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                if self.needs(*a) {
                    dense::acc_scaled(g, T::one(), self.ensure(grads, *a));
                }
                if self.needs(*b) {
                    dense::acc_scaled(g, T::one(), self.ensure(grads, *b));
                }
            }
            Op::Scale { a, factor } => {
                if self.needs(*a) {
                    dense::acc_scaled(g, *factor, self.ensure(grads, *a));
                }
            }
            Op::Matmul { a, b } => {
                let (da, db) = (self.dims(*a), self.dims(*b));
                let (m, k, n) = (da[0], da[1], db[1]);
                if self.needs(*a) {
                    let bv = self.value(*b).data();
                    dense::matmul_nt(g, bv, m, n, k, self.ensure(grads, *a));
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    dense::matmul_tn(av, g, k, m, n, self.ensure(grads, *b));
                }
            }
            Op::Bmm { a, b } => {
                let (da, db) = (self.dims(*a), self.dims(*b));
                let (batch, m, k, n) = (da[0], da[1], da[2], db[2]);
                if self.needs(*a) {
                    let bv = self.value(*b).data();
                    dense::bmm_nt(g, bv, batch, m, n, k, self.ensure(grads, *a));
                }
                if self.needs(*b) {
                    let av = self.value(*a).data();
                    dense::bmm_tn(av, g, batch, k, m, n, self.ensure(grads, *b));
                }
            }
            Op::BiasAdd { a, bias } => {
                if self.needs(*a) {
                    dense::acc_scaled(g, T::one(), self.ensure(grads, *a));
                }
                if self.needs(*bias) {
                    let c = self.value(*bias).len();
                    dense::bias_grad(g, c, self.ensure(grads, *bias));
                }
            }
            Op::Softmax { a, axis } => {
                if self.needs(*a) {
                    let y = self.nodes[i].value.data();
                    let dims = self.nodes[i].value.dims();
                    norm::softmax_backward(y, g, dims, *axis, self.ensure(grads, *a));
                }
            }
            Op::LayerNorm { a, gamma, beta, eps } => {
                let need_a = self.needs(*a);
                let need_g = self.needs(*gamma);
                let need_b = self.needs(*beta);
                if need_a || need_g || need_b {
                    let xv = self.value(*a).data();
                    let gv = self.value(*gamma).data();
                    let c = gv.len();
                    let mut dx = vec![T::zero(); xv.len()];
                    let mut dgamma = vec![T::zero(); c];
                    let mut dbeta = vec![T::zero(); c];
                    norm::layer_norm_backward(xv, gv, *eps, g, &mut dx, &mut dgamma, &mut dbeta);
                    if need_a {
                        dense::acc_scaled(&dx, T::one(), self.ensure(grads, *a));
                    }
                    if need_g {
                        dense::acc_scaled(&dgamma, T::one(), self.ensure(grads, *gamma));
                    }
                    if need_b {
                        dense::acc_scaled(&dbeta, T::one(), self.ensure(grads, *beta));
                    }
                }
            }
            Op::Gelu { a } => {
                if self.needs(*a) {
                    norm::gelu_backward(self.value(*a).data(), g, self.ensure(grads, *a));
                }
            }
            Op::Conv3x3 { x, w, b } => {
                let dx = self.dims(*x);
                let (c_in, h, wd) = (dx[0], dx[1], dx[2]);
                let c_out = self.dims(*w)[0];
                if self.needs(*x) {
                    let wv = self.value(*w).data();
                    conv::conv3x3_grad_input(g, wv, c_in, c_out, h, wd, self.ensure(grads, *x));
                }
                if self.needs(*w) {
                    let xv = self.value(*x).data();
                    conv::conv3x3_grad_weight(g, xv, c_in, c_out, h, wd, self.ensure(grads, *w));
                }
                if self.needs(*b) {
                    conv::conv3x3_grad_bias(g, c_out, h, wd, self.ensure(grads, *b));
                }
            }
            Op::MeanRows { a } => {
                if self.needs(*a) {
                    let da = self.dims(*a);
                    let (rows, c) = (da[da.len() - 2], da[da.len() - 1]);
                    klay::mean_rows_acc(g, rows, c, self.ensure(grads, *a));
                }
            }
            Op::PixelShuffle { a, r } => {
                if self.needs(*a) {
                    let da = self.dims(*a);
                    let c_out = da[0] / (r * r);
                    klay::pixel_unshuffle_acc(g, c_out, *r, da[1], da[2], self.ensure(grads, *a));
                }
            }
            Op::CropSpatial { a } => {
                if self.needs(*a) {
                    let da = self.dims(*a);
                    let od = self.nodes[i].value.dims();
                    klay::crop_spatial_acc(g, da[1], da[2], od[1], od[2], self.ensure(grads, *a));
                }
            }
            Op::L1Loss { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let gs = g[0] / T::from_f64(av.len() as f64);
                if self.needs(*a) {
                    let ga = self.ensure(grads, *a);
                    for e in 0..av.len() {
                        ga[e] += gs * sign(av[e] - bv[e]);
                    }
                }
                if self.needs(*b) {
                    let gb = self.ensure(grads, *b);
                    for e in 0..av.len() {
                        gb[e] -= gs * sign(av[e] - bv[e]);
                    }
                }
            }
            Op::Sum { a } => {
                if self.needs(*a) {
                    let ga = self.ensure(grads, *a);
                    for v in ga.iter_mut() {
                        *v += g[0];
                    }
                }
            }
            Op::Reshape { a } => {
                if self.needs(*a) {
                    dense::acc_scaled(g, T::one(), self.ensure(grads, *a));
                }
            }
            Op::Permute { a, perm } => {
                if self.needs(*a) {
                    let out_dims = self.nodes[i].value.dims().to_vec();
                    let inv = klay::inverse_perm(perm);
                    klay::permute_acc(g, &out_dims, &inv, self.ensure(grads, *a));
                }
            }
            Op::Divide { x, layout } => {
                if self.needs(*x) {
                    let c = self.dims(*x)[0];
                    patching::divide_acc(g, c, layout, self.ensure(grads, *x));
                }
            }
            Op::Aggregate { p, layout } => {
                if self.needs(*p) {
                    let c = self.dims(*p)[2];
                    patching::aggregate_acc(g, c, layout, self.ensure(grads, *p));
                }
            }
            Op::ZeroDiag { a } => {
                if self.needs(*a) {
                    let n = self.dims(*a)[0];
                    let ga = self.ensure(grads, *a);
                    for r in 0..n {
                        for cidx in 0..n {
                            if r != cidx {
                                ga[r * n + cidx] += g[r * n + cidx];
                            }
                        }
                    }
                }
            }
            Op::Select { s, x, record } => {
                let n = self.dims(*s)[0];
                let dxd = self.dims(*x);
                let block = dxd[1] * dxd[2];
                if self.needs(*x) {
                    let gx = self.ensure(grads, *x);
                    match record.kind {
                        SelectKind::Hard | SelectKind::StraightThrough => {
                            for i2 in 0..n {
                                let j = record.hard[i2];
                                for e in 0..block {
                                    gx[j * block + e] += g[i2 * block + e];
                                }
                            }
                        }
                        SelectKind::Soft => {
                            for i2 in 0..n {
                                for j in 0..n {
                                    let w = record.weights[i2 * n + j];
                                    if w == T::zero() {
                                        continue;
                                    }
                                    for e in 0..block {
                                        gx[j * block + e] += w * g[i2 * block + e];
                                    }
                                }
                            }
                        }
                    }
                }
                if record.kind != SelectKind::Hard && self.needs(*s) {
                    let xv = self.value(*x).data();
                    let inv_tau = T::from_f64(1.0 / record.tau);
                    let gs = self.ensure(grads, *s);
                    for i2 in 0..n {
                        // dw[j] = <g_i, x_j>, then softmax jacobian over the row
                        let gi = &g[i2 * block..(i2 + 1) * block];
                        let mut dw = vec![T::zero(); n];
                        let mut dot = T::zero();
                        for j in 0..n {
                            if j == i2 {
                                continue;
                            }
                            let xj = &xv[j * block..(j + 1) * block];
                            let mut acc = T::zero();
                            for e in 0..block {
                                acc += gi[e] * xj[e];
                            }
                            dw[j] = acc;
                            dot += record.weights[i2 * n + j] * acc;
                        }
                        for j in 0..n {
                            if j == i2 {
                                continue;
                            }
                            let w = record.weights[i2 * n + j];
                            gs[i2 * n + j] += w * (dw[j] - dot) * inv_tau;
                        }
                    }
                }
            }
        }
    }
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Index of the row maximum, skipping `excl`; ties go to the smallest index.
fn argmax_excluding<T: Scalar>(row: &[T], excl: usize) -> usize {
    let mut best = usize::MAX;
    let mut best_v = T::neg_infinity();
    for (j, &v) in row.iter().enumerate() {
        if j == excl {
            continue;
        }
        if best == usize::MAX || v > best_v {
            best = j;
            best_v = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = GradTape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f64).with_grad());
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = GradTape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2], |i| i as f64).with_grad());
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn constant_inputs_receive_no_gradient() {
        let mut tape = GradTape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 2], |i| i as f64).with_grad());
        let c = tape.constant(Tensor::from_fn(&[2, 2], |i| (i + 1) as f64));
        let y = tape.matmul(x, c).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert!(grads.get(x).is_some());
    }

    #[test]
    fn hard_select_picks_argmax_with_smallest_tie_index() {
        let mut tape = GradTape::<f32>::new();
        // row 0: [0, 3, 3, 1] -> partner 1 (tie with 2, smallest wins)
        let s = Tensor::new(
            vec![4, 4],
            vec![
                0.0, 3.0, 3.0, 1.0, //
                1.0, 0.0, 2.0, 0.5, //
                0.1, 0.2, 0.0, 0.3, //
                9.0, 8.0, 7.0, 0.0,
            ],
        )
        .unwrap();
        let s = tape.leaf(s);
        let x = tape.leaf(Tensor::from_fn(&[4, 1, 2], |i| i as f32));
        let (out, hard) = tape.select_partner(s, x, SelectKind::Hard, 1.0, None).unwrap();
        assert_eq!(hard, vec![1, 2, 3, 0]);
        assert!(hard.iter().enumerate().all(|(i, &j)| i != j));
        // output row i equals patch hard[i]
        let ov = tape.value(out).data();
        let xv = tape.value(x).data();
        for i in 0..4 {
            assert_eq!(&ov[i * 2..i * 2 + 2], &xv[hard[i] * 2..hard[i] * 2 + 2]);
        }
    }

    #[test]
    fn straight_through_forward_equals_hard_with_zero_noise() {
        let mut tape = GradTape::<f32>::new();
        let sdata = Tensor::new(vec![3, 3], vec![0.0, 0.4, 0.9, 0.7, 0.0, 0.1, 0.5, 0.2, 0.0]).unwrap();
        let s = tape.leaf(sdata);
        let x = tape.leaf(Tensor::from_fn(&[3, 2, 2], |i| (i as f32).sin()));
        let (h_out, h_idx) = tape.select_partner(s, x, SelectKind::Hard, 1.0, None).unwrap();
        let (st_out, st_idx) = tape
            .select_partner(s, x, SelectKind::StraightThrough, 0.37, None)
            .unwrap();
        assert_eq!(h_idx, st_idx);
        assert_eq!(tape.value(h_out).data(), tape.value(st_out).data());
    }

    #[test]
    fn two_patches_select_each_other() {
        let mut tape = GradTape::<f32>::new();
        let s = tape.leaf(Tensor::new(vec![2, 2], vec![0.0, -5.0, -7.0, 0.0]).unwrap());
        let x = tape.leaf(Tensor::from_fn(&[2, 1, 1], |i| i as f32));
        for kind in [SelectKind::Hard, SelectKind::StraightThrough] {
            let (_, hard) = tape.select_partner(s, x, kind, 1.0, None).unwrap();
            assert_eq!(hard, vec![1, 0]);
        }
    }
}
