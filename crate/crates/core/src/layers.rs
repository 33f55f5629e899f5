//! Recurrent and feed-forward building blocks with explicit forward caches
//! and hand-written backward passes.
//!
//! Conventions: activations are column vectors; an LSTM weight matrix has
//! shape `hidden x (hidden + input)` and multiplies the stacked vector
//! `[h_prev; x_t]`. Biases sit inside the gate nonlinearities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{rng_uniform, sigmoid_scalar, Matrix, Rng};

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Weights and biases of one LSTM direction. Also used as its gradient
/// container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmCellParams {
    pub w_f: Matrix,
    pub w_i: Matrix,
    pub w_c: Matrix,
    pub w_o: Matrix,
    pub b_f: Matrix,
    pub b_i: Matrix,
    pub b_c: Matrix,
    pub b_o: Matrix,
}

impl LstmCellParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = Matrix::zeros(hidden, hidden + input);
        let b = Matrix::zeros(hidden, 1);
        LstmCellParams {
            w_f: w.clone(),
            w_i: w.clone(),
            w_c: w.clone(),
            w_o: w,
            b_f: b.clone(),
            b_i: b.clone(),
            b_c: b.clone(),
            b_o: b,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let limit = glorot_limit(hidden + input, hidden);
        let mut p = LstmCellParams::zeros(input, hidden);
        p.w_f = rng_uniform(rng, hidden, hidden + input, limit)?;
        p.w_i = rng_uniform(rng, hidden, hidden + input, limit)?;
        p.w_c = rng_uniform(rng, hidden, hidden + input, limit)?;
        p.w_o = rng_uniform(rng, hidden, hidden + input, limit)?;
        Ok(p)
    }

    pub fn hidden(&self) -> usize {
        self.w_f.rows()
    }

    pub fn input(&self) -> usize {
        self.w_f.cols() - self.w_f.rows()
    }

    pub fn zeros_like(&self) -> Self {
        LstmCellParams::zeros(self.input(), self.hidden())
    }

    pub fn tensors(&self) -> [&Matrix; 8] {
        [
            &self.w_f, &self.w_i, &self.w_c, &self.w_o, &self.b_f, &self.b_i, &self.b_c, &self.b_o,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 8] {
        [
            &mut self.w_f,
            &mut self.w_i,
            &mut self.w_c,
            &mut self.w_o,
            &mut self.b_f,
            &mut self.b_i,
            &mut self.b_c,
            &mut self.b_o,
        ]
    }

    pub const TENSOR_NAMES: [&'static str; 8] =
        ["w_f", "w_i", "w_c", "w_o", "b_f", "b_i", "b_c", "b_o"];

    fn validate(&self) -> Result<()> {
        let (h, hx) = self.w_f.shape();
        if hx < h {
            return Err(Error::Shape {
                op: "lstm params",
                left: (h, hx),
                right: (h, h),
            });
        }
        for w in [&self.w_i, &self.w_c, &self.w_o] {
            if w.shape() != (h, hx) {
                return Err(Error::Shape {
                    op: "lstm weights",
                    left: (h, hx),
                    right: w.shape(),
                });
            }
        }
        for b in [&self.b_f, &self.b_i, &self.b_c, &self.b_o] {
            if b.shape() != (h, 1) {
                return Err(Error::Shape {
                    op: "lstm bias",
                    left: (h, 1),
                    right: b.shape(),
                });
            }
        }
        Ok(())
    }
}

/// Everything one LSTM step needs to run backward.
#[derive(Clone, Debug)]
pub struct LstmStepCache {
    pub x_t: Matrix,
    pub h_prev: Matrix,
    pub c_prev: Matrix,
    pub f_t: Matrix,
    pub i_t: Matrix,
    pub o_t: Matrix,
    /// Candidate cell `c̃_t`.
    pub cand_t: Matrix,
    pub c_t: Matrix,
    pub h_t: Matrix,
}

/// Gradients produced by one backward step.
#[derive(Clone, Debug)]
pub struct LstmStepGrads {
    pub params: LstmCellParams,
    pub dx: Matrix,
    pub dh_prev: Matrix,
    pub dc_prev: Matrix,
}

fn gate(w: &Matrix, b: &Matrix, z: &Matrix, act: fn(f64) -> f64) -> Result<Matrix> {
    let mut pre = w.matmul(z)?;
    for (v, &bias) in pre.data_mut().iter_mut().zip(b.data()) {
        *v = act(*v + bias);
    }
    Ok(pre)
}

pub fn lstm_cell_forward(
    p: &LstmCellParams,
    x_t: &Matrix,
    h_prev: &Matrix,
    c_prev: &Matrix,
) -> Result<LstmStepCache> {
    p.validate()?;
    let (h, input) = (p.hidden(), p.input());
    if x_t.shape() != (input, 1) {
        return Err(Error::Shape {
            op: "lstm x_t",
            left: (input, 1),
            right: x_t.shape(),
        });
    }
    for s in [h_prev, c_prev] {
        if s.shape() != (h, 1) {
            return Err(Error::Shape {
                op: "lstm state",
                left: (h, 1),
                right: s.shape(),
            });
        }
    }
    let z = Matrix::vcat(&[h_prev, x_t])?;
    let f_t = gate(&p.w_f, &p.b_f, &z, sigmoid_scalar)?;
    let i_t = gate(&p.w_i, &p.b_i, &z, sigmoid_scalar)?;
    let cand_t = gate(&p.w_c, &p.b_c, &z, f64::tanh)?;
    let o_t = gate(&p.w_o, &p.b_o, &z, sigmoid_scalar)?;
    let c_t = f_t.hadamard(c_prev)?.add(&i_t.hadamard(&cand_t)?)?;
    let h_t = o_t.hadamard(&c_t.map(f64::tanh))?;
    Ok(LstmStepCache {
        x_t: x_t.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        f_t,
        i_t,
        o_t,
        cand_t,
        c_t,
        h_t,
    })
}

/// Backward through one step, adding parameter gradients into `grads`.
/// Returns `(dx, dh_prev, dc_prev)`.
pub fn lstm_cell_backward_into(
    p: &LstmCellParams,
    cache: &LstmStepCache,
    dh_t: &Matrix,
    dc_t: &Matrix,
    grads: &mut LstmCellParams,
) -> Result<(Matrix, Matrix, Matrix)> {
    let h = p.hidden();
    for d in [dh_t, dc_t] {
        if d.shape() != (h, 1) {
            return Err(Error::Shape {
                op: "lstm backward",
                left: (h, 1),
                right: d.shape(),
            });
        }
    }
    let mut dz_f = vec![0.0; h];
    let mut dz_i = vec![0.0; h];
    let mut dz_c = vec![0.0; h];
    let mut dz_o = vec![0.0; h];
    let mut dc_prev = vec![0.0; h];
    for k in 0..h {
        let (f, i, o, g) = (
            cache.f_t.data()[k],
            cache.i_t.data()[k],
            cache.o_t.data()[k],
            cache.cand_t.data()[k],
        );
        let tc = cache.c_t.data()[k].tanh();
        let dh = dh_t.data()[k];
        let dc = dc_t.data()[k] + dh * o * (1.0 - tc * tc);
        dz_o[k] = dh * tc * o * (1.0 - o);
        dz_f[k] = dc * cache.c_prev.data()[k] * f * (1.0 - f);
        dz_i[k] = dc * g * i * (1.0 - i);
        dz_c[k] = dc * i * (1.0 - g * g);
        dc_prev[k] = dc * f;
    }
    let z = Matrix::vcat(&[&cache.h_prev, &cache.x_t])?;
    let dz_f = Matrix::column(dz_f);
    let dz_i = Matrix::column(dz_i);
    let dz_c = Matrix::column(dz_c);
    let dz_o = Matrix::column(dz_o);

    let mut dzcat = Matrix::zeros(z.rows(), 1);
    for (w, b, dw, db, dz) in [
        (&p.w_f, &p.b_f, &mut grads.w_f, &mut grads.b_f, &dz_f),
        (&p.w_i, &p.b_i, &mut grads.w_i, &mut grads.b_i, &dz_i),
        (&p.w_c, &p.b_c, &mut grads.w_c, &mut grads.b_c, &dz_c),
        (&p.w_o, &p.b_o, &mut grads.w_o, &mut grads.b_o, &dz_o),
    ] {
        debug_assert_eq!(b.shape(), db.shape());
        dw.add_outer(dz, &z)?;
        db.add_assign(dz)?;
        dzcat.add_assign(&w.transpose_matmul(dz)?)?;
    }
    let dh_prev = dzcat.slice_rows(0, h);
    let dx = dzcat.slice_rows(h, z.rows());
    Ok((dx, dh_prev, Matrix::column(dc_prev)))
}

/// Gradients of one cached step with respect to its inputs and parameters.
pub fn lstm_cell_backward(
    p: &LstmCellParams,
    cache: &LstmStepCache,
    dh_t: &Matrix,
    dc_t: &Matrix,
) -> Result<LstmStepGrads> {
    let mut params = p.zeros_like();
    let (dx, dh_prev, dc_prev) = lstm_cell_backward_into(p, cache, dh_t, dc_t, &mut params)?;
    Ok(LstmStepGrads {
        params,
        dx,
        dh_prev,
        dc_prev,
    })
}

/// Caches of both directions. `backward[k]` belongs to position `len - 1 - k`.
#[derive(Clone, Debug)]
pub struct BiLstmCache {
    pub forward: Vec<LstmStepCache>,
    pub backward: Vec<LstmStepCache>,
}

impl BiLstmCache {
    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// `[→h_t ; ←h_t]` at every position.
    pub fn outputs(&self) -> Vec<Matrix> {
        let n = self.len();
        (0..n)
            .map(|t| {
                Matrix::vcat(&[&self.forward[t].h_t, &self.backward[n - 1 - t].h_t])
                    .expect("column vectors")
            })
            .collect()
    }
}

/// Runs both directions from zero initial state.
pub fn bilstm_forward(
    fwd: &LstmCellParams,
    bwd: &LstmCellParams,
    inputs: &[Matrix],
) -> Result<(Vec<Matrix>, BiLstmCache)> {
    if inputs.is_empty() {
        return Err(Error::Argument("bilstm over an empty sequence".into()));
    }
    let run = |p: &LstmCellParams, seq: &mut dyn Iterator<Item = &Matrix>| -> Result<Vec<LstmStepCache>> {
        let mut h = Matrix::zeros(p.hidden(), 1);
        let mut c = Matrix::zeros(p.hidden(), 1);
        let mut steps = Vec::with_capacity(inputs.len());
        for x in seq {
            let step = lstm_cell_forward(p, x, &h, &c)?;
            h = step.h_t.clone();
            c = step.c_t.clone();
            steps.push(step);
        }
        Ok(steps)
    };
    let cache = BiLstmCache {
        forward: run(fwd, &mut inputs.iter())?,
        backward: run(bwd, &mut inputs.iter().rev())?,
    };
    Ok((cache.outputs(), cache))
}

/// Backward through a Bi-LSTM given the gradient at every output position.
/// Parameter gradients accumulate into `g_fwd` / `g_bwd`; returns the
/// gradient for every input.
pub fn bilstm_backward_into(
    fwd: &LstmCellParams,
    bwd: &LstmCellParams,
    cache: &BiLstmCache,
    d_outputs: &[Matrix],
    g_fwd: &mut LstmCellParams,
    g_bwd: &mut LstmCellParams,
) -> Result<Vec<Matrix>> {
    let n = cache.len();
    if d_outputs.len() != n {
        return Err(Error::Argument(format!(
            "bilstm backward: {} output gradients for {n} positions",
            d_outputs.len()
        )));
    }
    let hf = fwd.hidden();
    let hb = bwd.hidden();
    let mut d_inputs: Vec<Matrix> = cache
        .forward
        .iter()
        .map(|s| Matrix::zeros_like(&s.x_t))
        .collect();

    let mut dh = Matrix::zeros(hf, 1);
    let mut dc = Matrix::zeros(hf, 1);
    for t in (0..n).rev() {
        let dh_t = dh.add(&d_outputs[t].slice_rows(0, hf))?;
        let (dx, dh_prev, dc_prev) =
            lstm_cell_backward_into(fwd, &cache.forward[t], &dh_t, &dc, g_fwd)?;
        d_inputs[t].add_assign(&dx)?;
        dh = dh_prev;
        dc = dc_prev;
    }

    let mut dh = Matrix::zeros(hb, 1);
    let mut dc = Matrix::zeros(hb, 1);
    for k in (0..n).rev() {
        let t = n - 1 - k;
        let dh_t = dh.add(&d_outputs[t].slice_rows(hf, hf + hb))?;
        let (dx, dh_prev, dc_prev) =
            lstm_cell_backward_into(bwd, &cache.backward[k], &dh_t, &dc, g_bwd)?;
        d_inputs[t].add_assign(&dx)?;
        dh = dh_prev;
        dc = dc_prev;
    }
    Ok(d_inputs)
}

/// Lookup table for token or tag ids. Row 0 is the padding entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub vectors: Matrix,
    pub trainable: bool,
}

pub const PAD_ID: usize = 0;

impl EmbeddingTable {
    pub fn new(vectors: Matrix, trainable: bool) -> Self {
        EmbeddingTable { vectors, trainable }
    }

    /// Glorot-uniform rows with the padding row zeroed.
    pub fn init(vocab_size: usize, dim: usize, rng: &mut Rng, trainable: bool) -> Result<Self> {
        let mut vectors = rng_uniform(rng, vocab_size, dim, glorot_limit(vocab_size, dim))?;
        if vocab_size > 0 {
            vectors.row_mut(PAD_ID).fill(0.0);
        }
        Ok(EmbeddingTable { vectors, trainable })
    }

    pub fn vocab_size(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn lookup(&self, ids: &[usize]) -> Result<Vec<Matrix>> {
        ids.iter()
            .map(|&id| {
                if id >= self.vocab_size() {
                    return Err(Error::Index {
                        index: id,
                        len: self.vocab_size(),
                    });
                }
                Ok(Matrix::column(self.vectors.row(id).to_vec()))
            })
            .collect()
    }
}

pub fn embedding_lookup(table: &EmbeddingTable, ids: &[usize]) -> Result<Vec<Matrix>> {
    table.lookup(ids)
}

/// Scatters upstream row gradients into `table_grad`. Repeated ids
/// accumulate; the padding row always stays zero.
pub fn embedding_backward_into(
    table_grad: &mut Matrix,
    ids: &[usize],
    upstream: &[Matrix],
) -> Result<()> {
    if ids.len() != upstream.len() {
        return Err(Error::Argument(format!(
            "{} ids but {} gradients",
            ids.len(),
            upstream.len()
        )));
    }
    for (&id, g) in ids.iter().zip(upstream) {
        if id >= table_grad.rows() {
            return Err(Error::Index {
                index: id,
                len: table_grad.rows(),
            });
        }
        if g.len() != table_grad.cols() {
            return Err(Error::Shape {
                op: "embedding backward",
                left: (table_grad.cols(), 1),
                right: g.shape(),
            });
        }
        if id == PAD_ID {
            continue;
        }
        for (a, b) in table_grad.row_mut(id).iter_mut().zip(g.data()) {
            *a += b;
        }
    }
    Ok(())
}

pub fn embedding_backward(
    table: &EmbeddingTable,
    ids: &[usize],
    upstream: &[Matrix],
) -> Result<Matrix> {
    let mut grad = Matrix::zeros_like(&table.vectors);
    embedding_backward_into(&mut grad, ids, upstream)?;
    Ok(grad)
}

/// Affine map `w · h + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub w: Matrix,
    pub b: Matrix,
}

impl LinearParams {
    pub fn zeros(input: usize, output: usize) -> Self {
        LinearParams {
            w: Matrix::zeros(output, input),
            b: Matrix::zeros(output, 1),
        }
    }

    pub fn init(input: usize, output: usize, rng: &mut Rng) -> Result<Self> {
        Ok(LinearParams {
            w: rng_uniform(rng, output, input, glorot_limit(input, output))?,
            b: Matrix::zeros(output, 1),
        })
    }

    pub fn zeros_like(&self) -> Self {
        LinearParams {
            w: Matrix::zeros_like(&self.w),
            b: Matrix::zeros_like(&self.b),
        }
    }

    fn check(&self) -> Result<()> {
        if self.b.shape() != (self.w.rows(), 1) {
            return Err(Error::Shape {
                op: "linear bias",
                left: (self.w.rows(), 1),
                right: self.b.shape(),
            });
        }
        Ok(())
    }
}

pub fn linear_forward(p: &LinearParams, h: &Matrix) -> Result<Matrix> {
    p.check()?;
    let mut y = p.w.matmul(h)?;
    if y.cols() != 1 {
        return Err(Error::Shape {
            op: "linear input",
            left: (p.w.cols(), 1),
            right: h.shape(),
        });
    }
    y.add_assign(&p.b)?;
    Ok(y)
}

/// Adds `dW = dy·hᵀ`, `db = dy` into `grads` and returns `dh = wᵀ·dy`.
pub fn linear_backward_into(
    p: &LinearParams,
    h: &Matrix,
    dy: &Matrix,
    grads: &mut LinearParams,
) -> Result<Matrix> {
    grads.w.add_outer(dy, h)?;
    grads.b.add_assign(dy)?;
    p.w.transpose_matmul(dy)
}

pub fn linear_backward(p: &LinearParams, h: &Matrix, dy: &Matrix) -> Result<(LinearParams, Matrix)> {
    let mut grads = p.zeros_like();
    let dh = linear_backward_into(p, h, dy, &mut grads)?;
    Ok((grads, dh))
}
