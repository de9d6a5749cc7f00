//! Reverse-mode autodiff over a tape of primitive applications.
//!
//! Every primitive records the operands it needs for backward; `backward`
//! walks the records once in reverse execution order and accumulates exact
//! analytic gradients into the leaves registered with `param`. Values read
//! back from the tape are plain tensors with no gradient linkage.

use rand::Rng;

use crate::scalar::{real, Real};

use super::tensor::{Shape, Tensor};
use super::NumericsError;

/// Probabilities are clamped away from 0/1 before the cross-entropy logs.
pub const BCE_CLAMP: f64 = 1e-12;

/// Handle to a tape node.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

enum Op<T> {
    Leaf,
    Matmul(Var, Var),
    Linear {
        x: Var,
        w: Var,
    },
    Concat(Var, Var),
    ConcatCols(Var, Var),
    Hadamard(Var, Var),
    ScaleAdd {
        a: Var,
        ca: T,
        b: Var,
        cb: T,
    },
    Affine {
        x: Var,
        mul: T,
    },
    Dot(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu {
        x: Var,
        slope: T,
    },
    RowSoftmaxMasked {
        x: Var,
        mask: Vec<bool>,
    },
    AttnScores {
        q: Var,
        k: Var,
        q_block: Vec<usize>,
        keys_per_block: usize,
        scale: T,
    },
    AttnApply {
        w: Var,
        v: Var,
        q_block: Vec<usize>,
        keys_per_block: usize,
    },
    GatherRows {
        src: Var,
        idx: Vec<usize>,
        valid: Vec<bool>,
    },
    TileRows {
        x: Var,
        times: usize,
    },
    RepeatEachRow {
        x: Var,
        times: usize,
    },
    RowSum(Var),
    RowOf {
        x: Var,
        index: usize,
    },
    SegmentedSoftmax {
        x: Var,
        segments: Vec<usize>,
    },
    SegmentedRowSum {
        x: Var,
        segments: Vec<usize>,
    },
    MulRowBroadcast {
        x: Var,
        row: Var,
    },
    PairedRowDots {
        a: Var,
        b: Var,
        pairs: Vec<(usize, usize)>,
    },
    Scatter {
        src: Var,
        positions: Vec<usize>,
    },
    AddRowBroadcast {
        x: Var,
        bias: Var,
    },
    Dropout {
        x: Var,
        keep: Vec<bool>,
        scale: T,
    },
    Bce {
        probs: Var,
        targets: Vec<T>,
        weights: Option<Vec<T>>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    needs_grad: bool,
    op: Op<T>,
}

#[allow(dead_code)]
impl<T> Node<T> {
    fn op_name(&self) -> &'static str {
        match &self.op {
            Op::Leaf => "leaf",
            Op::Matmul(..) => "matmul",
            Op::Linear { .. } => "linear",
            Op::Concat(..) => "concat",
            Op::ConcatCols(..) => "concat_cols",
            Op::Hadamard(..) => "hadamard",
            Op::ScaleAdd { .. } => "scale_add",
            Op::Affine { .. } => "affine",
            Op::Dot(..) => "dot",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::RowSoftmaxMasked { .. } => "softmax",
            Op::AttnScores { .. } => "attn_scores",
            Op::AttnApply { .. } => "attn_apply",
            Op::GatherRows { .. } => "gather_rows",
            Op::TileRows { .. } => "tile_rows",
            Op::RepeatEachRow { .. } => "repeat_each_row",
            Op::RowSum(..) => "row_sum",
            Op::RowOf { .. } => "row_of",
            Op::SegmentedSoftmax { .. } => "segmented_softmax",
            Op::SegmentedRowSum { .. } => "segmented_row_sum",
            Op::MulRowBroadcast { .. } => "mul_row_broadcast",
            Op::PairedRowDots { .. } => "paired_row_dots",
            Op::Scatter { .. } => "scatter",
            Op::AddRowBroadcast { .. } => "add_row_broadcast",
            Op::Dropout { .. } => "dropout",
            Op::Bce { .. } => "bce",
        }
    }
}

/// Gradients produced by one backward pass, indexed by `Var`.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss w.r.t. `var`, if any path reached it.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads[var.0].as_ref()
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads[var.0].take()
    }
}

/// Ordered record of primitive applications.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a leaf that accumulates gradients.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            needs_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Register a leaf with no gradient linkage.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            needs_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn push(
        &mut self,
        name: &'static str,
        value: Tensor<T>,
        needs_grad: bool,
        op: Op<T>,
    ) -> Result<Var, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn mismatch(op: &'static str, details: String) -> NumericsError {
        NumericsError::ShapeMismatch { op, details }
    }

    // ----- primitive suite -------------------------------------------------

    /// Matrix product. Accepts `Mat(m,k) x Mat(k,n) -> Mat(m,n)` and
    /// `Mat(m,k) x Vec(k) -> Vec(m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = match (av.shape(), bv.shape()) {
            (Shape::Matrix(m, k), Shape::Matrix(k2, n)) if k == k2 => {
                let mut out = Tensor::zeros(Shape::Matrix(m, n));
                for i in 0..m {
                    for l in 0..k {
                        let ail = av.get(i, l);
                        let brow = bv.row(l);
                        let orow = out.row_mut(i);
                        for j in 0..n {
                            orow[j] += ail * brow[j];
                        }
                    }
                }
                out
            }
            (Shape::Matrix(m, k), Shape::Vector(k2)) if k == k2 => {
                let x = bv.values();
                let mut out = vec![T::zero(); m];
                for (i, o) in out.iter_mut().enumerate() {
                    *o = dot_slices(av.row(i), x);
                }
                Tensor::vector(out)
            }
            (sa, sb) => return Err(Self::mismatch("matmul", format!("{sa} x {sb}"))),
        };
        let ng = self.needs(a) || self.needs(b);
        self.push("matmul", out, ng, Op::Matmul(a, b))
    }

    /// `x * w^T` for row-major operands: `Mat(r,i) x Mat(o,i) -> Mat(r,o)`.
    /// The batched building block for every weight application.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var, NumericsError> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (r, i) = match xv.shape() {
            Shape::Matrix(r, i) => (r, i),
            s => return Err(Self::mismatch("linear", format!("input {s} is not a matrix"))),
        };
        let (o, i2) = match wv.shape() {
            Shape::Matrix(o, i2) => (o, i2),
            s => return Err(Self::mismatch("linear", format!("weight {s} is not a matrix"))),
        };
        if i != i2 {
            return Err(Self::mismatch("linear", format!("input {} x weight {}", xv.shape(), wv.shape())));
        }
        let mut out = Tensor::zeros(Shape::Matrix(r, o));
        for rr in 0..r {
            let xrow = xv.row(rr);
            let orow = out.row_mut(rr);
            for oo in 0..o {
                orow[oo] = dot_slices(xrow, wv.row(oo));
            }
        }
        let ng = self.needs(x) || self.needs(w);
        self.push("linear", out, ng, Op::Linear { x, w })
    }

    /// Concatenation of two vectors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        match (av.shape(), bv.shape()) {
            (Shape::Vector(_), Shape::Vector(_)) => {}
            (sa, sb) => return Err(Self::mismatch("concat", format!("{sa} and {sb}"))),
        }
        let mut data = av.values().to_vec();
        data.extend_from_slice(bv.values());
        let ng = self.needs(a) || self.needs(b);
        self.push("concat", Tensor::vector(data), ng, Op::Concat(a, b))
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (r1, c1, r2, c2) = match (av.shape(), bv.shape()) {
            (Shape::Matrix(r1, c1), Shape::Matrix(r2, c2)) => (r1, c1, r2, c2),
            (sa, sb) => return Err(Self::mismatch("concat_cols", format!("{sa} and {sb}"))),
        };
        if r1 != r2 {
            return Err(Self::mismatch("concat_cols", format!("{} and {}", av.shape(), bv.shape())));
        }
        let mut out = Tensor::zeros(Shape::Matrix(r1, c1 + c2));
        for r in 0..r1 {
            out.row_mut(r)[..c1].copy_from_slice(av.row(r));
            out.row_mut(r)[c1..].copy_from_slice(bv.row(r));
        }
        let ng = self.needs(a) || self.needs(b);
        self.push("concat_cols", out, ng, Op::ConcatCols(a, b))
    }

    /// Elementwise product of same-shape tensors.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Self::mismatch("hadamard", format!("{} and {}", av.shape(), bv.shape())));
        }
        let mut out = Tensor::zeros(av.shape());
        for ((o, x), y) in out.values_mut().iter_mut().zip(av.values()).zip(bv.values()) {
            *o = *x * *y;
        }
        let ng = self.needs(a) || self.needs(b);
        self.push("hadamard", out, ng, Op::Hadamard(a, b))
    }

    /// Scale-and-add: `ca * a + cb * b` with scalar constants.
    pub fn scale_add(&mut self, a: Var, ca: T, b: Var, cb: T) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Self::mismatch("scale_add", format!("{} and {}", av.shape(), bv.shape())));
        }
        let mut out = Tensor::zeros(av.shape());
        for ((o, x), y) in out.values_mut().iter_mut().zip(av.values()).zip(bv.values()) {
            *o = ca * *x + cb * *y;
        }
        let ng = self.needs(a) || self.needs(b);
        self.push("scale_add", out, ng, Op::ScaleAdd { a, ca, b, cb })
    }

    /// Elementwise sum.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.scale_add(a, T::one(), b, T::one())
    }

    /// Elementwise `mul * x + add` with scalar constants.
    pub fn affine(&mut self, x: Var, mul: T, add: T) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.shape());
        for (o, v) in out.values_mut().iter_mut().zip(xv.values()) {
            *o = mul * *v + add;
        }
        let ng = self.needs(x);
        self.push("affine", out, ng, Op::Affine { x, mul })
    }

    /// Dot product of two vectors, producing a scalar tensor.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        match (av.shape(), bv.shape()) {
            (Shape::Vector(n), Shape::Vector(m)) if n == m => {}
            (sa, sb) => return Err(Self::mismatch("dot", format!("{sa} and {sb}"))),
        }
        let out = Tensor::scalar(dot_slices(av.values(), bv.values()));
        let ng = self.needs(a) || self.needs(b);
        self.push("dot", out, ng, Op::Dot(a, b))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, NumericsError> {
        let out = self.map_values(x, |v| v.tanh());
        let ng = self.needs(x);
        self.push("tanh", out, ng, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, NumericsError> {
        let out = self.map_values(x, sigmoid_scalar);
        let ng = self.needs(x);
        self.push("sigmoid", out, ng, Op::Sigmoid(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var, NumericsError> {
        let out = self.map_values(x, |v| if v > T::zero() { v } else { slope * v });
        let ng = self.needs(x);
        self.push("leaky_relu", out, ng, Op::LeakyRelu { x, slope })
    }

    fn map_values(&self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.shape());
        for (o, v) in out.values_mut().iter_mut().zip(xv.values()) {
            *o = f(*v);
        }
        out
    }

    /// Row-wise softmax with masking. Masked positions yield exactly zero;
    /// unmasked outputs are positive and sum to one per row (stabilized by
    /// max-subtraction). A fully masked row is an error.
    pub fn softmax_masked(&mut self, x: Var, mask: &[bool]) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        if mask.len() != xv.numel() {
            return Err(Self::mismatch(
                "softmax_masked",
                format!("mask length {} for tensor {}", mask.len(), xv.shape()),
            ));
        }
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut out = Tensor::zeros(xv.shape());
        for r in 0..rows {
            let xrow = xv.row(r);
            let mrow = &mask[r * cols..(r + 1) * cols];
            let mut maxv = T::neg_infinity();
            for (v, keep) in xrow.iter().zip(mrow) {
                if *keep && *v > maxv {
                    maxv = *v;
                }
            }
            if maxv == T::neg_infinity() {
                return Err(NumericsError::EmptySoftmaxRow { row: r });
            }
            let orow = out.row_mut(r);
            let mut denom = T::zero();
            for ((o, v), keep) in orow.iter_mut().zip(xrow).zip(mrow) {
                if *keep {
                    *o = (*v - maxv).exp();
                    denom += *o;
                }
            }
            for (o, keep) in orow.iter_mut().zip(mrow) {
                if *keep {
                    *o = *o / denom;
                }
            }
        }
        let ng = self.needs(x);
        self.push(
            "softmax_masked",
            out,
            ng,
            Op::RowSoftmaxMasked {
                x,
                mask: mask.to_vec(),
            },
        )
    }

    /// Blocked attention logits: `out[i][j] = scale * <q[i], k[block(i)*kpb + j]>`.
    /// `q_block` maps each query row to its block of `keys_per_block` key rows.
    pub fn attn_scores(
        &mut self,
        q: Var,
        k: Var,
        q_block: &[usize],
        keys_per_block: usize,
        scale: T,
    ) -> Result<Var, NumericsError> {
        let (qv, kv) = (self.value(q), self.value(k));
        let (nq, d) = match qv.shape() {
            Shape::Matrix(nq, d) => (nq, d),
            s => return Err(Self::mismatch("attn_scores", format!("queries {s}"))),
        };
        let (nk, dk) = match kv.shape() {
            Shape::Matrix(nk, dk) => (nk, dk),
            s => return Err(Self::mismatch("attn_scores", format!("keys {s}"))),
        };
        if d != dk || q_block.len() != nq {
            return Err(Self::mismatch(
                "attn_scores",
                format!("queries {} keys {} block-map {}", qv.shape(), kv.shape(), q_block.len()),
            ));
        }
        if let Some(max_block) = q_block.iter().max() {
            if (max_block + 1) * keys_per_block > nk {
                return Err(NumericsError::IndexOutOfRange {
                    op: "attn_scores",
                    index: (max_block + 1) * keys_per_block,
                    limit: nk,
                });
            }
        }
        let mut out = Tensor::zeros(Shape::Matrix(nq, keys_per_block));
        for i in 0..nq {
            let qrow = qv.row(i);
            let base = q_block[i] * keys_per_block;
            let orow = out.row_mut(i);
            for (j, o) in orow.iter_mut().enumerate() {
                *o = scale * dot_slices(qrow, kv.row(base + j));
            }
        }
        let ng = self.needs(q) || self.needs(k);
        self.push(
            "attn_scores",
            out,
            ng,
            Op::AttnScores {
                q,
                k,
                q_block: q_block.to_vec(),
                keys_per_block,
                scale,
            },
        )
    }

    /// Blocked attention aggregation: `out[i] = sum_j w[i][j] * v[block(i)*kpb + j]`.
    pub fn attn_apply(
        &mut self,
        w: Var,
        v: Var,
        q_block: &[usize],
        keys_per_block: usize,
    ) -> Result<Var, NumericsError> {
        let (wv, vv) = (self.value(w), self.value(v));
        let (nq, kpb) = match wv.shape() {
            Shape::Matrix(nq, kpb) => (nq, kpb),
            s => return Err(Self::mismatch("attn_apply", format!("weights {s}"))),
        };
        let (nv, d) = match vv.shape() {
            Shape::Matrix(nv, d) => (nv, d),
            s => return Err(Self::mismatch("attn_apply", format!("values {s}"))),
        };
        if kpb != keys_per_block || q_block.len() != nq {
            return Err(Self::mismatch(
                "attn_apply",
                format!("weights {} block-map {}", wv.shape(), q_block.len()),
            ));
        }
        if let Some(max_block) = q_block.iter().max() {
            if (max_block + 1) * keys_per_block > nv {
                return Err(NumericsError::IndexOutOfRange {
                    op: "attn_apply",
                    index: (max_block + 1) * keys_per_block,
                    limit: nv,
                });
            }
        }
        let mut out = Tensor::zeros(Shape::Matrix(nq, d));
        for i in 0..nq {
            let base = q_block[i] * keys_per_block;
            let wrow = wv.row(i);
            let orow = out.row_mut(i);
            for (j, wij) in wrow.iter().enumerate() {
                if *wij != T::zero() {
                    let vrow = vv.row(base + j);
                    for (o, val) in orow.iter_mut().zip(vrow) {
                        *o += *wij * *val;
                    }
                }
            }
        }
        let ng = self.needs(w) || self.needs(v);
        self.push(
            "attn_apply",
            out,
            ng,
            Op::AttnApply {
                w,
                v,
                q_block: q_block.to_vec(),
                keys_per_block,
            },
        )
    }

    /// Gather rows of `src` by index; rows with `valid[i] == false` are zero
    /// and receive no gradient (used for padding).
    pub fn gather_rows(
        &mut self,
        src: Var,
        idx: &[usize],
        valid: &[bool],
    ) -> Result<Var, NumericsError> {
        let sv = self.value(src);
        let (n, d) = match sv.shape() {
            Shape::Matrix(n, d) => (n, d),
            s => return Err(Self::mismatch("gather_rows", format!("source {s}"))),
        };
        if idx.len() != valid.len() {
            return Err(Self::mismatch(
                "gather_rows",
                format!("{} indices, {} validity flags", idx.len(), valid.len()),
            ));
        }
        let mut out = Tensor::zeros(Shape::Matrix(idx.len(), d));
        for (i, (&ix, &ok)) in idx.iter().zip(valid).enumerate() {
            if ok {
                if ix >= n {
                    return Err(NumericsError::IndexOutOfRange {
                        op: "gather_rows",
                        index: ix,
                        limit: n,
                    });
                }
                out.row_mut(i).copy_from_slice(sv.row(ix));
            }
        }
        let ng = self.needs(src);
        self.push(
            "gather_rows",
            out,
            ng,
            Op::GatherRows {
                src,
                idx: idx.to_vec(),
                valid: valid.to_vec(),
            },
        )
    }

    /// Stack `times` copies of the whole matrix: `[x; x; ...; x]`.
    pub fn tile_rows(&mut self, x: Var, times: usize) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let (r, c) = match xv.shape() {
            Shape::Matrix(r, c) => (r, c),
            s => return Err(Self::mismatch("tile_rows", format!("{s}"))),
        };
        let mut out = Tensor::zeros(Shape::Matrix(r * times, c));
        for t in 0..times {
            for rr in 0..r {
                out.row_mut(t * r + rr).copy_from_slice(xv.row(rr));
            }
        }
        let ng = self.needs(x);
        self.push("tile_rows", out, ng, Op::TileRows { x, times })
    }

    /// Repeat each row `times` times consecutively: `[r0; r0; ...; r1; r1; ...]`.
    pub fn repeat_each_row(&mut self, x: Var, times: usize) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let (r, c) = match xv.shape() {
            Shape::Matrix(r, c) => (r, c),
            s => return Err(Self::mismatch("repeat_each_row", format!("{s}"))),
        };
        let mut out = Tensor::zeros(Shape::Matrix(r * times, c));
        for rr in 0..r {
            for t in 0..times {
                out.row_mut(rr * times + t).copy_from_slice(xv.row(rr));
            }
        }
        let ng = self.needs(x);
        self.push("repeat_each_row", out, ng, Op::RepeatEachRow { x, times })
    }

    /// Per-row sums of a matrix, as a vector.
    pub fn row_sum(&mut self, x: Var) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let r = match xv.shape() {
            Shape::Matrix(r, _) => r,
            s => return Err(Self::mismatch("row_sum", format!("{s}"))),
        };
        let data = (0..r)
            .map(|rr| xv.row(rr).iter().fold(T::zero(), |s, v| s + *v))
            .collect();
        let ng = self.needs(x);
        self.push("row_sum", Tensor::vector(data), ng, Op::RowSum(x))
    }

    /// Extract one row of a matrix as a vector.
    pub fn row_of(&mut self, x: Var, index: usize) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let r = xv.rows();
        if index >= r {
            return Err(NumericsError::IndexOutOfRange {
                op: "row_of",
                index,
                limit: r,
            });
        }
        let out = Tensor::vector(xv.row(index).to_vec());
        let ng = self.needs(x);
        self.push("row_of", out, ng, Op::RowOf { x, index })
    }

    /// Softmax independently over each (row, column-segment) block.
    /// `segments` are consecutive column ranges covering the width exactly;
    /// stabilized by max-subtraction. Zero-width segments are rejected.
    pub fn segmented_softmax(&mut self, x: Var, segments: &[usize]) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let (rows, cols) = match xv.shape() {
            Shape::Matrix(r, c) => (r, c),
            s => return Err(Self::mismatch("segmented_softmax", format!("{s}"))),
        };
        let total: usize = segments.iter().sum();
        if total != cols || segments.iter().any(|s| *s == 0) {
            return Err(Self::mismatch(
                "segmented_softmax",
                format!("segments {segments:?} do not tile {cols} columns"),
            ));
        }
        let mut out = Tensor::zeros(xv.shape());
        for r in 0..rows {
            let xrow = xv.row(r);
            let orow = out.row_mut(r);
            let mut start = 0usize;
            for &len in segments {
                let seg = &xrow[start..start + len];
                let mut maxv = seg[0];
                for v in seg {
                    if *v > maxv {
                        maxv = *v;
                    }
                }
                let mut denom = T::zero();
                for (o, v) in orow[start..start + len].iter_mut().zip(seg) {
                    *o = (*v - maxv).exp();
                    denom += *o;
                }
                for o in &mut orow[start..start + len] {
                    *o = *o / denom;
                }
                start += len;
            }
        }
        let ng = self.needs(x);
        self.push(
            "segmented_softmax",
            out,
            ng,
            Op::SegmentedSoftmax {
                x,
                segments: segments.to_vec(),
            },
        )
    }

    /// Per-row sums over column segments, transposed for row extraction:
    /// `out[s][r] = sum of x[r, segment s]`.
    pub fn segmented_row_sum(&mut self, x: Var, segments: &[usize]) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let (rows, cols) = match xv.shape() {
            Shape::Matrix(r, c) => (r, c),
            s => return Err(Self::mismatch("segmented_row_sum", format!("{s}"))),
        };
        let total: usize = segments.iter().sum();
        if total != cols {
            return Err(Self::mismatch(
                "segmented_row_sum",
                format!("segments {segments:?} do not tile {cols} columns"),
            ));
        }
        let mut out = Tensor::zeros(Shape::Matrix(segments.len(), rows));
        for r in 0..rows {
            let xrow = xv.row(r);
            let mut start = 0usize;
            for (s, &len) in segments.iter().enumerate() {
                let mut sum = T::zero();
                for v in &xrow[start..start + len] {
                    sum += *v;
                }
                out.row_mut(s)[r] = sum;
                start += len;
            }
        }
        let ng = self.needs(x);
        self.push(
            "segmented_row_sum",
            out,
            ng,
            Op::SegmentedRowSum {
                x,
                segments: segments.to_vec(),
            },
        )
    }

    /// Multiply every row of `x` elementwise by a `1 x cols` row.
    pub fn mul_row_broadcast(&mut self, x: Var, row: Var) -> Result<Var, NumericsError> {
        let (xv, rv) = (self.value(x), self.value(row));
        let (rows, cols) = match xv.shape() {
            Shape::Matrix(r, c) => (r, c),
            s => return Err(Self::mismatch("mul_row_broadcast", format!("{s}"))),
        };
        match rv.shape() {
            Shape::Matrix(1, c) if c == cols => {}
            s => {
                return Err(Self::mismatch(
                    "mul_row_broadcast",
                    format!("matrix {} with row {s}", xv.shape()),
                ))
            }
        }
        let mut out = Tensor::zeros(xv.shape());
        for r in 0..rows {
            for ((o, a), b) in out.row_mut(r).iter_mut().zip(xv.row(r)).zip(rv.row(0)) {
                *o = *a * *b;
            }
        }
        let ng = self.needs(x) || self.needs(row);
        self.push("mul_row_broadcast", out, ng, Op::MulRowBroadcast { x, row })
    }

    /// Dot products of row pairs: `out[p] = <a[pairs[p].0], b[pairs[p].1]>`.
    pub fn paired_row_dots(
        &mut self,
        a: Var,
        b: Var,
        pairs: &[(usize, usize)],
    ) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ra, ca) = (av.rows(), av.cols());
        let (rb, cb) = (bv.rows(), bv.cols());
        if ca != cb {
            return Err(Self::mismatch(
                "paired_row_dots",
                format!("{} and {}", av.shape(), bv.shape()),
            ));
        }
        let mut data = Vec::with_capacity(pairs.len());
        for &(ia, ib) in pairs {
            if ia >= ra || ib >= rb {
                return Err(NumericsError::IndexOutOfRange {
                    op: "paired_row_dots",
                    index: ia.max(ib),
                    limit: ra.min(rb),
                });
            }
            data.push(dot_slices(av.row(ia), bv.row(ib)));
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(
            "paired_row_dots",
            Tensor::vector(data),
            ng,
            Op::PairedRowDots {
                a,
                b,
                pairs: pairs.to_vec(),
            },
        )
    }

    /// Scatter a packed vector into a zero vector of length `len`.
    /// Positions must be distinct.
    pub fn scatter(&mut self, src: Var, len: usize, positions: &[usize]) -> Result<Var, NumericsError> {
        let sv = self.value(src);
        let k = match sv.shape() {
            Shape::Vector(k) => k,
            s => return Err(Self::mismatch("scatter", format!("{s}"))),
        };
        if positions.len() != k {
            return Err(Self::mismatch(
                "scatter",
                format!("{} positions for source of length {k}", positions.len()),
            ));
        }
        let mut data = vec![T::zero(); len];
        for (&p, &v) in positions.iter().zip(sv.values()) {
            if p >= len {
                return Err(NumericsError::IndexOutOfRange {
                    op: "scatter",
                    index: p,
                    limit: len,
                });
            }
            data[p] = v;
        }
        let ng = self.needs(src);
        self.push(
            "scatter",
            Tensor::vector(data),
            ng,
            Op::Scatter {
                src,
                positions: positions.to_vec(),
            },
        )
    }

    /// Add a bias vector to every row of a matrix.
    pub fn add_row_broadcast(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let (r, c) = match xv.shape() {
            Shape::Matrix(r, c) => (r, c),
            s => return Err(Self::mismatch("add_row_broadcast", format!("{s}"))),
        };
        match bv.shape() {
            Shape::Vector(n) if n == c => {}
            s => {
                return Err(Self::mismatch(
                    "add_row_broadcast",
                    format!("matrix {} and bias {s}", xv.shape()),
                ))
            }
        }
        let mut out = Tensor::zeros(Shape::Matrix(r, c));
        for rr in 0..r {
            for ((o, v), b) in out.row_mut(rr).iter_mut().zip(xv.row(rr)).zip(bv.values()) {
                *o = *v + *b;
            }
        }
        let ng = self.needs(x) || self.needs(bias);
        self.push("add_row_broadcast", out, ng, Op::AddRowBroadcast { x, bias })
    }

    /// Inverted dropout: in training, zero each entry with probability `rate`
    /// and scale survivors by `1/(1-rate)`; in evaluation, identity.
    pub fn dropout(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<Var, NumericsError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NumericsError::BadDropoutRate { rate });
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let xv = self.value(x);
        let keep: Vec<bool> = (0..xv.numel()).map(|_| rng.gen::<f64>() >= rate).collect();
        let scale = real::<T>(1.0 / (1.0 - rate));
        let mut out = Tensor::zeros(xv.shape());
        for ((o, v), k) in out.values_mut().iter_mut().zip(xv.values()).zip(&keep) {
            if *k {
                *o = *v * scale;
            }
        }
        let ng = self.needs(x);
        self.push("dropout", out, ng, Op::Dropout { x, keep, scale })
    }

    /// Summed binary cross-entropy over all positions, with probabilities
    /// clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`. Optional per-position weights.
    pub fn bce_loss(
        &mut self,
        probs: Var,
        targets: &[T],
        weights: Option<&[T]>,
    ) -> Result<Var, NumericsError> {
        let pv = self.value(probs);
        if targets.len() != pv.numel() {
            return Err(Self::mismatch(
                "bce_loss",
                format!("{} targets for {} probabilities", targets.len(), pv.numel()),
            ));
        }
        if let Some(w) = weights {
            if w.len() != pv.numel() {
                return Err(Self::mismatch(
                    "bce_loss",
                    format!("{} weights for {} probabilities", w.len(), pv.numel()),
                ));
            }
        }
        let lo = real::<T>(BCE_CLAMP);
        let hi = T::one() - lo;
        let mut loss = T::zero();
        for (i, (p, y)) in pv.values().iter().zip(targets).enumerate() {
            let w = weights.map_or(T::one(), |w| w[i]);
            if w == T::zero() {
                continue;
            }
            let pc = clamp(*p, lo, hi);
            loss = loss - w * (*y * pc.ln() + (T::one() - *y) * (T::one() - pc).ln());
        }
        let ng = self.needs(probs);
        self.push(
            "bce_loss",
            Tensor::scalar(loss),
            ng,
            Op::Bce {
                probs,
                targets: targets.to_vec(),
                weights: weights.map(|w| w.to_vec()),
            },
        )
    }

    // ----- backward --------------------------------------------------------

    /// Reverse pass from a scalar loss. Visits records in reverse execution
    /// order exactly once and accumulates gradients into every reachable
    /// gradient-requiring node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumericsError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(NumericsError::NonScalarLoss { shape: lv.shape() });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = grads[i].take().expect("checked above");
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                match (av.shape(), bv.shape()) {
                    (Shape::Matrix(m, k), Shape::Matrix(_, n)) => {
                        if self.needs(*a) {
                            let da = self.grad_slot(grads, *a);
                            for i0 in 0..m {
                                for l in 0..k {
                                    da.row_mut(i0)[l] += dot_slices(g.row(i0), bv.row(l));
                                }
                            }
                        }
                        if self.needs(*b) {
                            let db = self.grad_slot(grads, *b);
                            for l in 0..k {
                                for i0 in 0..m {
                                    let ail = av.get(i0, l);
                                    let grow = g.row(i0);
                                    let drow = db.row_mut(l);
                                    for j in 0..n {
                                        drow[j] += ail * grow[j];
                                    }
                                }
                            }
                        }
                    }
                    (Shape::Matrix(m, _), Shape::Vector(_)) => {
                        if self.needs(*a) {
                            let da = self.grad_slot(grads, *a);
                            for i0 in 0..m {
                                let gi = g.values()[i0];
                                for (dv, xv) in da.row_mut(i0).iter_mut().zip(bv.values()) {
                                    *dv += gi * *xv;
                                }
                            }
                        }
                        if self.needs(*b) {
                            let db = self.grad_slot(grads, *b);
                            for i0 in 0..m {
                                let gi = g.values()[i0];
                                for (dv, av_) in db.values_mut().iter_mut().zip(av.row(i0)) {
                                    *dv += gi * *av_;
                                }
                            }
                        }
                    }
                    _ => unreachable!("validated at forward"),
                }
            }
            Op::Linear { x, w } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let r = xv.rows();
                let o = wv.rows();
                if self.needs(*x) {
                    let dx = self.grad_slot(grads, *x);
                    for rr in 0..r {
                        let grow = g.row(rr);
                        let drow = dx.row_mut(rr);
                        for oo in 0..o {
                            let go = grow[oo];
                            if go != T::zero() {
                                for (dv, wvv) in drow.iter_mut().zip(wv.row(oo)) {
                                    *dv += go * *wvv;
                                }
                            }
                        }
                    }
                }
                if self.needs(*w) {
                    let dw = self.grad_slot(grads, *w);
                    for rr in 0..r {
                        let grow = g.row(rr);
                        let xrow = xv.row(rr);
                        for oo in 0..o {
                            let go = grow[oo];
                            if go != T::zero() {
                                for (dv, xvv) in dw.row_mut(oo).iter_mut().zip(xrow) {
                                    *dv += go * *xvv;
                                }
                            }
                        }
                    }
                }
            }
            Op::Concat(a, b) => {
                let na = self.value(*a).numel();
                if self.needs(*a) {
                    let da = self.grad_slot(grads, *a);
                    for (dv, gv) in da.values_mut().iter_mut().zip(&g.values()[..na]) {
                        *dv += *gv;
                    }
                }
                if self.needs(*b) {
                    let db = self.grad_slot(grads, *b);
                    for (dv, gv) in db.values_mut().iter_mut().zip(&g.values()[na..]) {
                        *dv += *gv;
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let (r, c1) = (self.value(*a).rows(), self.value(*a).cols());
                if self.needs(*a) {
                    let da = self.grad_slot(grads, *a);
                    for rr in 0..r {
                        for (dv, gv) in da.row_mut(rr).iter_mut().zip(&g.row(rr)[..c1]) {
                            *dv += *gv;
                        }
                    }
                }
                if self.needs(*b) {
                    let db = self.grad_slot(grads, *b);
                    for rr in 0..r {
                        for (dv, gv) in db.row_mut(rr).iter_mut().zip(&g.row(rr)[c1..]) {
                            *dv += *gv;
                        }
                    }
                }
            }
            Op::Hadamard(a, b) => {
                if self.needs(*a) {
                    let bvals: Vec<T> = self.value(*b).values().to_vec();
                    let da = self.grad_slot(grads, *a);
                    for ((dv, gv), bv) in da.values_mut().iter_mut().zip(g.values()).zip(&bvals) {
                        *dv += *gv * *bv;
                    }
                }
                if self.needs(*b) {
                    let avals: Vec<T> = self.value(*a).values().to_vec();
                    let db = self.grad_slot(grads, *b);
                    for ((dv, gv), av) in db.values_mut().iter_mut().zip(g.values()).zip(&avals) {
                        *dv += *gv * *av;
                    }
                }
            }
            Op::ScaleAdd { a, ca, b, cb } => {
                if self.needs(*a) {
                    let (ca, da) = (*ca, self.grad_slot(grads, *a));
                    for (dv, gv) in da.values_mut().iter_mut().zip(g.values()) {
                        *dv += ca * *gv;
                    }
                }
                if self.needs(*b) {
                    let (cb, db) = (*cb, self.grad_slot(grads, *b));
                    for (dv, gv) in db.values_mut().iter_mut().zip(g.values()) {
                        *dv += cb * *gv;
                    }
                }
            }
            Op::Affine { x, mul } => {
                if self.needs(*x) {
                    let (mul, dx) = (*mul, self.grad_slot(grads, *x));
                    for (dv, gv) in dx.values_mut().iter_mut().zip(g.values()) {
                        *dv += mul * *gv;
                    }
                }
            }
            Op::Dot(a, b) => {
                let g0 = g.item();
                if self.needs(*a) {
                    let bvals: Vec<T> = self.value(*b).values().to_vec();
                    let da = self.grad_slot(grads, *a);
                    for (dv, bv) in da.values_mut().iter_mut().zip(&bvals) {
                        *dv += g0 * *bv;
                    }
                }
                if self.needs(*b) {
                    let avals: Vec<T> = self.value(*a).values().to_vec();
                    let db = self.grad_slot(grads, *b);
                    for (dv, av) in db.values_mut().iter_mut().zip(&avals) {
                        *dv += g0 * *av;
                    }
                }
            }
            Op::Tanh(x) => {
                if self.needs(*x) {
                    let yvals: Vec<T> = node.value.values().to_vec();
                    let dx = self.grad_slot(grads, *x);
                    for ((dv, gv), y) in dx.values_mut().iter_mut().zip(g.values()).zip(&yvals) {
                        *dv += *gv * (T::one() - *y * *y);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if self.needs(*x) {
                    let yvals: Vec<T> = node.value.values().to_vec();
                    let dx = self.grad_slot(grads, *x);
                    for ((dv, gv), y) in dx.values_mut().iter_mut().zip(g.values()).zip(&yvals) {
                        *dv += *gv * *y * (T::one() - *y);
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                if self.needs(*x) {
                    let xvals: Vec<T> = self.value(*x).values().to_vec();
                    let (slope, dx) = (*slope, self.grad_slot(grads, *x));
                    for ((dv, gv), xv) in dx.values_mut().iter_mut().zip(g.values()).zip(&xvals) {
                        *dv += *gv * if *xv > T::zero() { T::one() } else { slope };
                    }
                }
            }
            Op::RowSoftmaxMasked { x, mask } => {
                if self.needs(*x) {
                    let yv = &node.value;
                    let (rows, cols) = (yv.rows(), yv.cols());
                    let y: Vec<T> = yv.values().to_vec();
                    let dx = self.grad_slot(grads, *x);
                    for r in 0..rows {
                        let yrow = &y[r * cols..(r + 1) * cols];
                        let grow = g.row(r);
                        let mrow = &mask[r * cols..(r + 1) * cols];
                        let mut s = T::zero();
                        for ((gv, yv_), keep) in grow.iter().zip(yrow).zip(mrow) {
                            if *keep {
                                s += *gv * *yv_;
                            }
                        }
                        for (((dv, gv), yv_), keep) in
                            dx.row_mut(r).iter_mut().zip(grow).zip(yrow).zip(mrow)
                        {
                            if *keep {
                                *dv += *yv_ * (*gv - s);
                            }
                        }
                    }
                }
            }
            Op::AttnScores {
                q,
                k,
                q_block,
                keys_per_block,
                scale,
            } => {
                let scale = *scale;
                let kpb = *keys_per_block;
                if self.needs(*q) {
                    let kv_vals: Vec<T> = self.value(*k).values().to_vec();
                    let kcols = self.value(*k).cols();
                    let dq = self.grad_slot(grads, *q);
                    for (i, &blk) in q_block.iter().enumerate() {
                        let grow = g.row(i);
                        let drow = dq.row_mut(i);
                        for (j, gij) in grow.iter().enumerate() {
                            if *gij != T::zero() {
                                let krow = &kv_vals[(blk * kpb + j) * kcols..(blk * kpb + j + 1) * kcols];
                                let c = scale * *gij;
                                for (dv, kvv) in drow.iter_mut().zip(krow) {
                                    *dv += c * *kvv;
                                }
                            }
                        }
                    }
                }
                if self.needs(*k) {
                    let qv_vals: Vec<T> = self.value(*q).values().to_vec();
                    let qcols = self.value(*q).cols();
                    let dk = self.grad_slot(grads, *k);
                    for (i, &blk) in q_block.iter().enumerate() {
                        let grow = g.row(i);
                        let qrow = &qv_vals[i * qcols..(i + 1) * qcols];
                        for (j, gij) in grow.iter().enumerate() {
                            if *gij != T::zero() {
                                let c = scale * *gij;
                                for (dv, qvv) in dk.row_mut(blk * kpb + j).iter_mut().zip(qrow) {
                                    *dv += c * *qvv;
                                }
                            }
                        }
                    }
                }
            }
            Op::AttnApply {
                w,
                v,
                q_block,
                keys_per_block,
            } => {
                let kpb = *keys_per_block;
                if self.needs(*w) {
                    let vv_vals: Vec<T> = self.value(*v).values().to_vec();
                    let vcols = self.value(*v).cols();
                    let dw = self.grad_slot(grads, *w);
                    for (i, &blk) in q_block.iter().enumerate() {
                        let grow = g.row(i);
                        let drow = dw.row_mut(i);
                        for (j, dv) in drow.iter_mut().enumerate() {
                            let vrow = &vv_vals[(blk * kpb + j) * vcols..(blk * kpb + j + 1) * vcols];
                            *dv += dot_slices(grow, vrow);
                        }
                    }
                }
                if self.needs(*v) {
                    let wv_vals: Vec<T> = self.value(*w).values().to_vec();
                    let wcols = self.value(*w).cols();
                    let dv = self.grad_slot(grads, *v);
                    for (i, &blk) in q_block.iter().enumerate() {
                        let grow = g.row(i);
                        let wrow = &wv_vals[i * wcols..(i + 1) * wcols];
                        for (j, wij) in wrow.iter().enumerate() {
                            if *wij != T::zero() {
                                for (dvv, gv) in dv.row_mut(blk * kpb + j).iter_mut().zip(grow) {
                                    *dvv += *wij * *gv;
                                }
                            }
                        }
                    }
                }
            }
            Op::GatherRows { src, idx, valid } => {
                if self.needs(*src) {
                    let dsrc = self.grad_slot(grads, *src);
                    for (i, (&ix, &ok)) in idx.iter().zip(valid).enumerate() {
                        if ok {
                            for (dv, gv) in dsrc.row_mut(ix).iter_mut().zip(g.row(i)) {
                                *dv += *gv;
                            }
                        }
                    }
                }
            }
            Op::TileRows { x, times } => {
                if self.needs(*x) {
                    let r = self.value(*x).rows();
                    let dx = self.grad_slot(grads, *x);
                    for t in 0..*times {
                        for rr in 0..r {
                            for (dv, gv) in dx.row_mut(rr).iter_mut().zip(g.row(t * r + rr)) {
                                *dv += *gv;
                            }
                        }
                    }
                }
            }
            Op::RepeatEachRow { x, times } => {
                if self.needs(*x) {
                    let r = self.value(*x).rows();
                    let dx = self.grad_slot(grads, *x);
                    for rr in 0..r {
                        for t in 0..*times {
                            for (dv, gv) in dx.row_mut(rr).iter_mut().zip(g.row(rr * times + t)) {
                                *dv += *gv;
                            }
                        }
                    }
                }
            }
            Op::RowSum(x) => {
                if self.needs(*x) {
                    let dx = self.grad_slot(grads, *x);
                    for (rr, gv) in g.values().iter().enumerate() {
                        for dv in dx.row_mut(rr) {
                            *dv += *gv;
                        }
                    }
                }
            }
            Op::RowOf { x, index } => {
                if self.needs(*x) {
                    let dx = self.grad_slot(grads, *x);
                    for (dv, gv) in dx.row_mut(*index).iter_mut().zip(g.values()) {
                        *dv += *gv;
                    }
                }
            }
            Op::SegmentedSoftmax { x, segments } => {
                if self.needs(*x) {
                    let yv = &node.value;
                    let (rows, cols) = (yv.rows(), yv.cols());
                    let y: Vec<T> = yv.values().to_vec();
                    let dx = self.grad_slot(grads, *x);
                    for r in 0..rows {
                        let yrow = &y[r * cols..(r + 1) * cols];
                        let grow = g.row(r);
                        let drow = dx.row_mut(r);
                        let mut start = 0usize;
                        for &len in segments {
                            let mut s = T::zero();
                            for (gv, yv_) in grow[start..start + len]
                                .iter()
                                .zip(&yrow[start..start + len])
                            {
                                s += *gv * *yv_;
                            }
                            for ((dv, gv), yv_) in drow[start..start + len]
                                .iter_mut()
                                .zip(&grow[start..start + len])
                                .zip(&yrow[start..start + len])
                            {
                                *dv += *yv_ * (*gv - s);
                            }
                            start += len;
                        }
                    }
                }
            }
            Op::SegmentedRowSum { x, segments } => {
                if self.needs(*x) {
                    let rows = self.value(*x).rows();
                    let dx = self.grad_slot(grads, *x);
                    for r in 0..rows {
                        let drow = dx.row_mut(r);
                        let mut start = 0usize;
                        for (s, &len) in segments.iter().enumerate() {
                            let gv = g.get(s, r);
                            for dv in &mut drow[start..start + len] {
                                *dv += gv;
                            }
                            start += len;
                        }
                    }
                }
            }
            Op::MulRowBroadcast { x, row } => {
                if self.needs(*x) {
                    let rvals: Vec<T> = self.value(*row).values().to_vec();
                    let dx = self.grad_slot(grads, *x);
                    for r in 0..dx.rows() {
                        for ((dv, gv), b) in dx.row_mut(r).iter_mut().zip(g.row(r)).zip(&rvals) {
                            *dv += *gv * *b;
                        }
                    }
                }
                if self.needs(*row) {
                    let xvals: Vec<T> = self.value(*x).values().to_vec();
                    let (rows, cols) = (self.value(*x).rows(), self.value(*x).cols());
                    let drow = self.grad_slot(grads, *row);
                    for r in 0..rows {
                        let grow = g.row(r);
                        let xrow = &xvals[r * cols..(r + 1) * cols];
                        for ((dv, gv), xv_) in drow.values_mut().iter_mut().zip(grow).zip(xrow) {
                            *dv += *gv * *xv_;
                        }
                    }
                }
            }
            Op::PairedRowDots { a, b, pairs } => {
                if self.needs(*a) {
                    let bvals: Vec<T> = self.value(*b).values().to_vec();
                    let bcols = self.value(*b).cols();
                    let da = self.grad_slot(grads, *a);
                    for (p, &(ia, ib)) in pairs.iter().enumerate() {
                        let gp = g.values()[p];
                        if gp != T::zero() {
                            let brow = &bvals[ib * bcols..(ib + 1) * bcols];
                            for (dv, bv) in da.row_mut(ia).iter_mut().zip(brow) {
                                *dv += gp * *bv;
                            }
                        }
                    }
                }
                if self.needs(*b) {
                    let avals: Vec<T> = self.value(*a).values().to_vec();
                    let acols = self.value(*a).cols();
                    let db = self.grad_slot(grads, *b);
                    for (p, &(ia, ib)) in pairs.iter().enumerate() {
                        let gp = g.values()[p];
                        if gp != T::zero() {
                            let arow = &avals[ia * acols..(ia + 1) * acols];
                            for (dv, av) in db.row_mut(ib).iter_mut().zip(arow) {
                                *dv += gp * *av;
                            }
                        }
                    }
                }
            }
            Op::Scatter { src, positions } => {
                if self.needs(*src) {
                    let dsrc = self.grad_slot(grads, *src);
                    for (i, &p) in positions.iter().enumerate() {
                        dsrc.values_mut()[i] += g.values()[p];
                    }
                }
            }
            Op::AddRowBroadcast { x, bias } => {
                if self.needs(*x) {
                    let dx = self.grad_slot(grads, *x);
                    for (dv, gv) in dx.values_mut().iter_mut().zip(g.values()) {
                        *dv += *gv;
                    }
                }
                if self.needs(*bias) {
                    let rows = self.value(*x).rows();
                    let db = self.grad_slot(grads, *bias);
                    for rr in 0..rows {
                        for (dv, gv) in db.values_mut().iter_mut().zip(g.row(rr)) {
                            *dv += *gv;
                        }
                    }
                }
            }
            Op::Dropout { x, keep, scale } => {
                if self.needs(*x) {
                    let (scale, dx) = (*scale, self.grad_slot(grads, *x));
                    for ((dv, gv), k) in dx.values_mut().iter_mut().zip(g.values()).zip(keep) {
                        if *k {
                            *dv += *gv * scale;
                        }
                    }
                }
            }
            Op::Bce {
                probs,
                targets,
                weights,
            } => {
                if self.needs(*probs) {
                    let g0 = g.item();
                    let lo = real::<T>(BCE_CLAMP);
                    let hi = T::one() - lo;
                    let pvals: Vec<T> = self.value(*probs).values().to_vec();
                    let dp = self.grad_slot(grads, *probs);
                    for (i, (dv, p)) in dp.values_mut().iter_mut().zip(&pvals).enumerate() {
                        let w = weights.as_ref().map_or(T::one(), |w| w[i]);
                        if w == T::zero() {
                            continue;
                        }
                        // Clamped positions sit on a flat segment of the loss.
                        if *p < lo || *p > hi {
                            continue;
                        }
                        let y = targets[i];
                        *dv += g0 * w * (*p - y) / (*p * (T::one() - *p));
                    }
                }
            }
        }
    }

    fn grad_slot<'a>(&self, grads: &'a mut [Option<Tensor<T>>], var: Var) -> &'a mut Tensor<T> {
        let shape = self.value(var).shape();
        grads[var.0].get_or_insert_with(|| Tensor::zeros(shape))
    }
}

#[inline]
fn dot_slices<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s
}

#[inline]
fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn clamp<T: Real>(x: T, lo: T, hi: T) -> T {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}
