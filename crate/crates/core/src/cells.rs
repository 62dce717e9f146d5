//! Recurrent cells and the small building blocks shared by every model.
//!
//! Cells operate on batches: inputs are `[batch, input_dim]` matrices and
//! states `[batch, hidden_dim]`. A single vector is a batch of one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Uniform init range for weight matrices.
pub const INIT_SCALE: f64 = 0.08;
/// Epsilon inside the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl std::str::FromStr for CellKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            other => Err(Error::InvalidArgument(format!("unknown cell `{other}`"))),
        }
    }
}

/// Training or inference behaviour for stochastic layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Layout of one recurrent cell's parameters.
///
/// LSTM: `{prefix}.w` is `(input + hidden) x 4*hidden` with gate blocks in
/// the order input, forget, cell, output; `{prefix}.b` is `4*hidden`.
///
/// GRU: `{prefix}.w_zr` is `(input + hidden) x 2*hidden` (update, reset),
/// `{prefix}.w_nx` is `input x hidden`, `{prefix}.w_nh` is
/// `hidden x hidden`, plus biases `{prefix}.b_zr` and `{prefix}.b_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub prefix: String,
}

/// Graph handles of a bound cell.
#[derive(Debug, Clone, Copy)]
pub enum BoundCell {
    Lstm {
        w: Var,
        b: Var,
        hidden: usize,
    },
    Gru {
        w_zr: Var,
        b_zr: Var,
        w_nx: Var,
        w_nh: Var,
        b_n: Var,
        hidden: usize,
    },
}

/// Hidden state (and LSTM memory) of a recurrent layer.
#[derive(Debug, Clone, Copy)]
pub struct CellState {
    pub h: Var,
    pub c: Option<Var>,
}

impl CellParams {
    pub fn new(
        kind: CellKind,
        input_dim: usize,
        hidden_dim: usize,
        prefix: impl Into<String>,
    ) -> Self {
        CellParams {
            kind,
            input_dim,
            hidden_dim,
            prefix: prefix.into(),
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    /// Registers freshly initialised tensors in `params`.
    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, params: &mut ParamSet<T>, rng: &mut R) {
        let (i, h) = (self.input_dim, self.hidden_dim);
        match self.kind {
            CellKind::Lstm => {
                params.insert(
                    self.name("w"),
                    Tensor::uniform(vec![i + h, 4 * h], INIT_SCALE, rng),
                );
                let mut b = Tensor::zeros(vec![4 * h]);
                b.data_mut()[h..2 * h]
                    .iter_mut()
                    .for_each(|v| *v = T::one());
                params.insert(self.name("b"), b);
            }
            CellKind::Gru => {
                params.insert(
                    self.name("w_zr"),
                    Tensor::uniform(vec![i + h, 2 * h], INIT_SCALE, rng),
                );
                params.insert(self.name("b_zr"), Tensor::zeros(vec![2 * h]));
                params.insert(
                    self.name("w_nx"),
                    Tensor::uniform(vec![i, h], INIT_SCALE, rng),
                );
                params.insert(
                    self.name("w_nh"),
                    Tensor::uniform(vec![h, h], INIT_SCALE, rng),
                );
                params.insert(self.name("b_n"), Tensor::zeros(vec![h]));
            }
        }
    }

    pub fn bind(&self, b: &Bindings) -> Result<BoundCell> {
        let hidden = self.hidden_dim;
        Ok(match self.kind {
            CellKind::Lstm => BoundCell::Lstm {
                w: b.get(&self.name("w"))?,
                b: b.get(&self.name("b"))?,
                hidden,
            },
            CellKind::Gru => BoundCell::Gru {
                w_zr: b.get(&self.name("w_zr"))?,
                b_zr: b.get(&self.name("b_zr"))?,
                w_nx: b.get(&self.name("w_nx"))?,
                w_nh: b.get(&self.name("w_nh"))?,
                b_n: b.get(&self.name("b_n"))?,
                hidden,
            },
        })
    }
}

impl BoundCell {
    pub fn hidden(&self) -> usize {
        match *self {
            BoundCell::Lstm { hidden, .. } | BoundCell::Gru { hidden, .. } => hidden,
        }
    }

    /// All-zero state for a batch of `rows`.
    pub fn zero_state<T: Scalar>(&self, g: &mut Graph<T>, rows: usize) -> CellState {
        let h = g.constant(Tensor::zeros(vec![rows, self.hidden()]));
        let c = match self {
            BoundCell::Lstm { .. } => Some(g.constant(Tensor::zeros(vec![rows, self.hidden()]))),
            BoundCell::Gru { .. } => None,
        };
        CellState { h, c }
    }

    /// State whose hidden part is `h` (memory starts at zero).
    pub fn state_from<T: Scalar>(&self, g: &mut Graph<T>, h: Var) -> CellState {
        let c = match self {
            BoundCell::Lstm { .. } => {
                let rows = g.value(h).rows();
                Some(g.constant(Tensor::zeros(vec![rows, self.hidden()])))
            }
            BoundCell::Gru { .. } => None,
        };
        CellState { h, c }
    }

    pub fn step<T: Scalar>(&self, g: &mut Graph<T>, x: Var, s: CellState) -> Result<CellState> {
        match *self {
            BoundCell::Lstm { w, b, hidden } => {
                let c = s.c.ok_or_else(|| {
                    Error::InvalidArgument("LSTM step without memory cell".into())
                })?;
                let (h, c) = lstm_step(g, x, s.h, c, w, b, hidden)?;
                Ok(CellState { h, c: Some(c) })
            }
            BoundCell::Gru {
                w_zr,
                b_zr,
                w_nx,
                w_nh,
                b_n,
                hidden,
            } => {
                let h = gru_step(g, x, s.h, [w_zr, b_zr, w_nx, w_nh, b_n], hidden)?;
                Ok(CellState { h, c: None })
            }
        }
    }

    /// Step that keeps the previous state on rows whose mask is 0 (padding).
    pub fn masked_step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        s: CellState,
        mask: &[T],
    ) -> Result<CellState> {
        let next = self.step(g, x, s)?;
        if mask.iter().all(|&m| m == T::one()) {
            return Ok(next);
        }
        let h = g.blend_rows(next.h, s.h, mask)?;
        let c = match (next.c, s.c) {
            (Some(nc), Some(oc)) => Some(g.blend_rows(nc, oc, mask)?),
            _ => None,
        };
        Ok(CellState { h, c })
    }
}

fn check_step_dims<T: Scalar>(
    g: &Graph<T>,
    x: Var,
    h: Var,
    w: Var,
    hidden: usize,
    gates: usize,
) -> Result<()> {
    let (xs, hs, ws) = (g.value(x), g.value(h), g.value(w));
    if hs.cols() != hidden
        || xs.rows() != hs.rows()
        || ws.shape() != [xs.cols() + hidden, gates * hidden]
    {
        return Err(Error::InvalidShape(format!(
            "cell step x {:?}, h {:?}, w {:?} (hidden {hidden})",
            xs.shape(),
            hs.shape(),
            ws.shape()
        )));
    }
    Ok(())
}

/// One LSTM step: `c' = f*c + i*g`, `h' = o*tanh(c')`.
pub fn lstm_step<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    h: Var,
    c: Var,
    w: Var,
    b: Var,
    hidden: usize,
) -> Result<(Var, Var)> {
    check_step_dims(g, x, h, w, hidden, 4)?;
    if g.value(c).shape() != g.value(h).shape() {
        return Err(Error::InvalidShape(
            "LSTM memory and hidden state differ".into(),
        ));
    }
    let xh = g.concat_cols(&[x, h])?;
    let pre = g.matmul(xh, w)?;
    let pre = g.add_bias(pre, b)?;
    let i = g.slice_cols(pre, 0, hidden)?;
    let f = g.slice_cols(pre, hidden, hidden)?;
    let cand = g.slice_cols(pre, 2 * hidden, hidden)?;
    let o = g.slice_cols(pre, 3 * hidden, hidden)?;
    let i = g.sigmoid(i)?;
    let f = g.sigmoid(f)?;
    let cand = g.tanh(cand)?;
    let o = g.sigmoid(o)?;
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next)?;
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// One GRU step: `h' = z*h + (1-z)*n` with
/// `n = tanh(x W_nx + r*(h W_nh) + b_n)`.
pub fn gru_step<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    h: Var,
    p: [Var; 5],
    hidden: usize,
) -> Result<Var> {
    let [w_zr, b_zr, w_nx, w_nh, b_n] = p;
    check_step_dims(g, x, h, w_zr, hidden, 2)?;
    let xh = g.concat_cols(&[x, h])?;
    let zr = g.matmul(xh, w_zr)?;
    let zr = g.add_bias(zr, b_zr)?;
    let zr = g.sigmoid(zr)?;
    let z = g.slice_cols(zr, 0, hidden)?;
    let r = g.slice_cols(zr, hidden, hidden)?;
    let nx = g.matmul(x, w_nx)?;
    let nh = g.matmul(h, w_nh)?;
    let gated = g.mul(r, nh)?;
    let n = g.add(nx, gated)?;
    let n = g.add_bias(n, b_n)?;
    let n = g.tanh(n)?;
    let carry = g.mul(z, h)?;
    let one_minus_z = g.one_minus(z)?;
    let fresh = g.mul(one_minus_z, n)?;
    g.add(carry, fresh)
}

/// Output of a bidirectional pass.
#[derive(Debug, Clone)]
pub struct BiStates {
    /// `[rows, 2*hidden]` per time step: forward state then backward state.
    pub states: Vec<Var>,
    /// Forward state after the last real step of each row.
    pub fwd_final: Var,
    /// Backward state after reading back to the first step.
    pub bwd_final: Var,
}

/// Runs `fwd` left-to-right and `bwd` right-to-left over `seq` and
/// concatenates the two states at every position.
///
/// `masks[t][r]` is 1 for real input and 0 for padding; padded steps carry the
/// previous state through unchanged in both directions.
pub fn bidirectional_encode<T: Scalar>(
    g: &mut Graph<T>,
    seq: &[Var],
    masks: Option<&[Vec<T>]>,
    fwd: &BoundCell,
    bwd: &BoundCell,
) -> Result<BiStates> {
    if seq.is_empty() {
        return Err(Error::EmptyInput(
            "bidirectional_encode over an empty sequence".into(),
        ));
    }
    let rows = g.value(seq[0]).rows();
    let step = |g: &mut Graph<T>, cell: &BoundCell, t: usize, s: CellState| match masks {
        Some(m) => cell.masked_step(g, seq[t], s, &m[t]),
        None => cell.step(g, seq[t], s),
    };

    let mut s = fwd.zero_state(g, rows);
    let mut forward = Vec::with_capacity(seq.len());
    for t in 0..seq.len() {
        s = step(g, fwd, t, s)?;
        forward.push(s.h);
    }
    let fwd_final = s.h;

    let mut s = bwd.zero_state(g, rows);
    let mut backward = vec![s.h; seq.len()];
    for t in (0..seq.len()).rev() {
        s = step(g, bwd, t, s)?;
        backward[t] = s.h;
    }
    let bwd_final = s.h;

    let states = forward
        .iter()
        .zip(&backward)
        .map(|(&f, &b)| g.concat_cols(&[f, b]))
        .collect::<Result<Vec<_>>>()?;
    Ok(BiStates {
        states,
        fwd_final,
        bwd_final,
    })
}

/// Affine layer `x W + b` stored as `{prefix}.w` and `{prefix}.b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub input_dim: usize,
    pub output_dim: usize,
    pub prefix: String,
}

impl Linear {
    pub fn new(input_dim: usize, output_dim: usize, prefix: impl Into<String>) -> Self {
        Linear {
            input_dim,
            output_dim,
            prefix: prefix.into(),
        }
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(
        &self,
        params: &mut ParamSet<T>,
        scale: f64,
        rng: &mut R,
    ) {
        params.insert(
            format!("{}.w", self.prefix),
            Tensor::uniform(vec![self.input_dim, self.output_dim], scale, rng),
        );
        params.insert(
            format!("{}.b", self.prefix),
            Tensor::zeros(vec![self.output_dim]),
        );
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, b: &Bindings, x: Var) -> Result<Var> {
        let w = b.get(&format!("{}.w", self.prefix))?;
        let bias = b.get(&format!("{}.b", self.prefix))?;
        let y = g.matmul(x, w)?;
        g.add_bias(y, bias)
    }
}

/// Character embedding matrix, one row per vocabulary symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub table: Tensor<f64>,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn new(vocab_size: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        Ok(EmbeddingTable {
            table: Tensor::new(vec![vocab_size, dim], data)?,
            trainable: true,
        })
    }

    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        EmbeddingTable {
            table: Tensor::zeros(vec![vocab_size, dim]),
            trainable: true,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.table.row_slice(id)
    }

    /// Installs the table as the parameter `name`, keeping it trainable
    /// unless `trainable` is off.
    pub fn install(&self, params: &mut ParamSet<f64>, name: &str) -> Result<()> {
        if let Ok(existing) = params.get(name) {
            if existing.shape() != self.table.shape() {
                return Err(Error::InvalidShape(format!(
                    "embedding {:?} does not fit parameter {name} {:?}",
                    self.table.shape(),
                    existing.shape()
                )));
            }
        }
        params.insert(name, self.table.clone());
        params.get_mut(name)?.set_requires_grad(self.trainable);
        Ok(())
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)`; identity in
/// eval mode.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    x: Var,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let mask = (0..g.value(x).len())
        .map(|_| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    g.mul_const(x, mask)
}

/// Layer normalisation of a single vector (no graph).
pub fn layer_norm_vec(x: &[f64], gain: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    if x.len() != gain.len() || x.len() != bias.len() {
        return Err(Error::InvalidShape(format!(
            "layer_norm {} / {} / {}",
            x.len(),
            gain.len(),
            bias.len()
        )));
    }
    let mut g = Graph::<f64>::new();
    let xv = g.constant(Tensor::row(x));
    let gv = g.constant(Tensor::row(gain));
    let bv = g.constant(Tensor::row(bias));
    let y = g.layer_norm(xv, gv, bv, LAYER_NORM_EPS)?;
    Ok(g.value(y).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cell_with(
        kind: CellKind,
        input: usize,
        hidden: usize,
        fill: f64,
    ) -> (ParamSet<f64>, CellParams) {
        let cp = CellParams::new(kind, input, hidden, "c");
        let mut p = ParamSet::new();
        cp.init(&mut p, &mut ChaCha8Rng::seed_from_u64(0));
        for (_, t) in p.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = fill);
        }
        (p, cp)
    }

    #[test]
    fn lstm_zero_weights_give_zero_state() {
        let (p, cp) = cell_with(CellKind::Lstm, 3, 2, 0.0);
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let cell = cp.bind(&b).unwrap();
        let x = g.constant(Tensor::row(&[0.3, -1.0, 2.0]));
        let s = cell.zero_state(&mut g, 1);
        let s = cell.step(&mut g, x, s).unwrap();
        assert_eq!(g.value(s.h).data(), &[0.0, 0.0]);
        assert_eq!(g.value(s.c.unwrap()).data(), &[0.0, 0.0]);
    }

    #[test]
    fn lstm_saturated_gates_keep_memory() {
        let (mut p, cp) = cell_with(CellKind::Lstm, 2, 2, 0.0);
        let b = p.get_mut("c.b").unwrap().data_mut();
        // input gate -> 0, forget gate -> 1
        b[0..2].iter_mut().for_each(|v| *v = -50.0);
        b[2..4].iter_mut().for_each(|v| *v = 50.0);
        let mut g = Graph::new();
        let bound = p.bind(&mut g, false);
        let cell = cp.bind(&bound).unwrap();
        let x = g.constant(Tensor::row(&[1.0, 1.0]));
        let h = g.constant(Tensor::row(&[0.0, 0.0]));
        let c = g.constant(Tensor::row(&[0.7, -0.4]));
        let s = cell.step(&mut g, x, CellState { h, c: Some(c) }).unwrap();
        let c2 = g.value(s.c.unwrap()).data();
        assert!((c2[0] - 0.7).abs() < 1e-12 && (c2[1] + 0.4).abs() < 1e-12);
    }

    #[test]
    fn gru_zero_weights_halve_state() {
        let (p, cp) = cell_with(CellKind::Gru, 2, 3, 0.0);
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let cell = cp.bind(&b).unwrap();
        let x = g.constant(Tensor::row(&[5.0, -5.0]));
        let h = g.constant(Tensor::row(&[0.2, -0.6, 1.0]));
        let s = cell.step(&mut g, x, CellState { h, c: None }).unwrap();
        assert_eq!(g.value(s.h).data(), &[0.1, -0.3, 0.5]);
    }

    #[test]
    fn gru_update_gate_one_carries_state() {
        let (mut p, cp) = cell_with(CellKind::Gru, 2, 2, 0.3);
        p.get_mut("c.b_zr").unwrap().data_mut()[0..2]
            .iter_mut()
            .for_each(|v| *v = 60.0);
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let cell = cp.bind(&b).unwrap();
        let x = g.constant(Tensor::row(&[0.5, 0.5]));
        let h = g.constant(Tensor::row(&[0.25, -0.75]));
        let s = cell.step(&mut g, x, CellState { h, c: None }).unwrap();
        let out = g.value(s.h).data();
        assert!((out[0] - 0.25).abs() < 1e-12 && (out[1] + 0.75).abs() < 1e-12);
    }

    #[test]
    fn step_rejects_mismatched_dims() {
        let (p, cp) = cell_with(CellKind::Lstm, 3, 2, 0.1);
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let cell = cp.bind(&b).unwrap();
        let x = g.constant(Tensor::row(&[1.0, 2.0]));
        let s = cell.zero_state(&mut g, 1);
        assert!(matches!(
            cell.step(&mut g, x, s),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn bidirectional_output_dims_and_empty_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamSet::<f64>::new();
        let f = CellParams::new(CellKind::Lstm, 4, 80, "f");
        let bw = CellParams::new(CellKind::Lstm, 4, 80, "b");
        f.init(&mut p, &mut rng);
        bw.init(&mut p, &mut rng);
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let (fc, bc) = (f.bind(&b).unwrap(), bw.bind(&b).unwrap());
        let seq: Vec<Var> = (0..3)
            .map(|_| g.constant(Tensor::uniform(vec![1, 4], 1.0, &mut rng)))
            .collect();
        let out = bidirectional_encode(&mut g, &seq, None, &fc, &bc).unwrap();
        assert_eq!(out.states.len(), 3);
        assert!(out.states.iter().all(|&s| g.shape(s) == [1, 160]));
        assert!(matches!(
            bidirectional_encode(&mut g, &[], None, &fc, &bc),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn dropout_modes_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::row(&[1.0, 2.0, 3.0]));
        assert_eq!(dropout(&mut g, x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(dropout(&mut g, x, 0.5, Mode::Eval, &mut rng).unwrap(), x);
        assert!(matches!(
            dropout(&mut g, x, 1.0, Mode::Train, &mut rng),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn layer_norm_examples() {
        let out = layer_norm_vec(&[3.0, 3.0, 3.0], &[1.0; 3], &[0.0; 3]).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12));
        let out = layer_norm_vec(&[1.0, -1.0], &[1.0; 2], &[0.0; 2]).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-5 && (out[1] + 1.0).abs() < 1e-5);
        let out = layer_norm_vec(&[0.3, 7.0, -2.0], &[0.0; 3], &[0.5, -1.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.5, -1.0, 2.0]);
        assert!(matches!(
            layer_norm_vec(&[1.0], &[1.0, 1.0], &[0.0]),
            Err(Error::InvalidShape(_))
        ));
    }
}
