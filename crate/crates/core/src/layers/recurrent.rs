//! GRU and LSTM cells with fused gate weights over `state ⧺ input`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{join, Binder, InitSpec, ParamArray, ParamRole, Parameterized};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    #[default]
    Gru,
    Lstm,
}

/// Gate weights are `[(state + input) × state]`. The input gate is `1 - forget`
/// and is never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub wf: ParamArray,
    pub bf: ParamArray,
    pub wr: ParamArray,
    pub br: ParamArray,
    pub ws: ParamArray,
    pub bs: ParamArray,
    pub s0: ParamArray,
}

impl GruParams {
    pub fn new<R: Rng + ?Sized>(input: usize, state: usize, init: &InitSpec, rng: &mut R) -> Result<Self> {
        let geom = [state + input, state];
        Ok(GruParams {
            wf: init.sample(&geom, rng)?,
            bf: ParamArray::zeros(&[state]),
            wr: init.sample(&geom, rng)?,
            br: ParamArray::zeros(&[state]),
            ws: init.sample(&geom, rng)?,
            bs: ParamArray::zeros(&[state]),
            s0: init.sample(&[state], rng)?,
        })
    }

    /// All-zero parameters, including the initial state.
    pub fn zeros(input: usize, state: usize) -> Self {
        let geom = [state + input, state];
        GruParams {
            wf: ParamArray::zeros(&geom),
            bf: ParamArray::zeros(&[state]),
            wr: ParamArray::zeros(&geom),
            br: ParamArray::zeros(&[state]),
            ws: ParamArray::zeros(&geom),
            bs: ParamArray::zeros(&[state]),
            s0: ParamArray::zeros(&[state]),
        }
    }

    pub fn state_size(&self) -> usize {
        self.wf.shape[1]
    }

    pub fn input_size(&self) -> usize {
        self.wf.shape[0] - self.state_size()
    }

    pub fn bind(&self, prefix: &str, binder: &mut Binder) -> GruCell {
        GruCell {
            wf: binder.bind(join(prefix, "wf"), &self.wf),
            bf: binder.bind(join(prefix, "bf"), &self.bf),
            wr: binder.bind(join(prefix, "wr"), &self.wr),
            br: binder.bind(join(prefix, "br"), &self.br),
            ws: binder.bind(join(prefix, "ws"), &self.ws),
            bs: binder.bind(join(prefix, "bs"), &self.bs),
            s0: binder.bind(join(prefix, "s0"), &self.s0),
        }
    }
}

impl Parameterized for GruParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ParamArray, ParamRole)) {
        use ParamRole::*;
        for (name, p, role) in [
            ("wf", &self.wf, Weight),
            ("bf", &self.bf, Bias),
            ("wr", &self.wr, Weight),
            ("br", &self.br, Bias),
            ("ws", &self.ws, Weight),
            ("bs", &self.bs, Bias),
            ("s0", &self.s0, InitialState),
        ] {
            f(join(prefix, name), p, role);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ParamArray, ParamRole)) {
        use ParamRole::*;
        for (name, p, role) in [
            ("wf", &mut self.wf, Weight),
            ("bf", &mut self.bf, Bias),
            ("wr", &mut self.wr, Weight),
            ("br", &mut self.br, Bias),
            ("ws", &mut self.ws, Weight),
            ("bs", &mut self.bs, Bias),
            ("s0", &mut self.s0, InitialState),
        ] {
            f(join(prefix, name), p, role);
        }
    }
}

/// A bound GRU.
pub struct GruCell {
    pub wf: Tensor,
    pub bf: Tensor,
    pub wr: Tensor,
    pub br: Tensor,
    pub ws: Tensor,
    pub bs: Tensor,
    pub s0: Tensor,
}

fn last_axis(t: &Tensor) -> usize {
    t.rank().saturating_sub(1)
}

fn check_step_shapes(state: &Tensor, x: &Tensor, w: &Tensor) -> Result<()> {
    let s = *state.shape().last().unwrap_or(&0);
    let i = *x.shape().last().unwrap_or(&0);
    let lead_ok = state.shape()[..last_axis(state)] == x.shape()[..last_axis(x)];
    if !lead_ok || w.shape() != [s + i, s] {
        return Err(Error::Shape {
            op: "recurrent step",
            left: state.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    Ok(())
}

impl GruCell {
    /// One GRU step on a vector `[state]` or a batch `[B × state]`.
    pub fn step(&self, s_prev: &Tensor, x: &Tensor) -> Result<Tensor> {
        check_step_shapes(s_prev, x, &self.wf)?;
        let axis = last_axis(s_prev);
        let sx = s_prev.concat(x, axis)?;
        let forget = sx.matmul(&self.wf)?.add_row_vector(&self.bf)?.sigmoid();
        let input_gate = forget.one_minus();
        let reset = sx.matmul(&self.wr)?.add_row_vector(&self.br)?.sigmoid();
        let candidate = s_prev
            .mul(&reset)?
            .concat(x, axis)?
            .matmul(&self.ws)?
            .add_row_vector(&self.bs)?
            .tanh();
        input_gate.mul(&candidate)?.add(&forget.mul(s_prev)?)
    }

    pub fn state_size(&self) -> usize {
        self.wf.shape()[1]
    }
}

pub fn gru_step(s_prev: &Tensor, x: &Tensor, p: &GruCell) -> Result<Tensor> {
    p.step(s_prev, x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub wf: ParamArray,
    pub bf: ParamArray,
    pub wi: ParamArray,
    pub bi: ParamArray,
    pub wo: ParamArray,
    pub bo: ParamArray,
    pub wc: ParamArray,
    pub bc: ParamArray,
    pub h0: ParamArray,
    pub c0: ParamArray,
}

impl LstmParams {
    pub fn new<R: Rng + ?Sized>(input: usize, state: usize, init: &InitSpec, rng: &mut R) -> Result<Self> {
        let geom = [state + input, state];
        Ok(LstmParams {
            wf: init.sample(&geom, rng)?,
            bf: ParamArray::zeros(&[state]),
            wi: init.sample(&geom, rng)?,
            bi: ParamArray::zeros(&[state]),
            wo: init.sample(&geom, rng)?,
            bo: ParamArray::zeros(&[state]),
            wc: init.sample(&geom, rng)?,
            bc: ParamArray::zeros(&[state]),
            h0: init.sample(&[state], rng)?,
            c0: init.sample(&[state], rng)?,
        })
    }

    pub fn zeros(input: usize, state: usize) -> Self {
        let geom = [state + input, state];
        let z = |s: &[usize]| ParamArray::zeros(s);
        LstmParams {
            wf: z(&geom),
            bf: z(&[state]),
            wi: z(&geom),
            bi: z(&[state]),
            wo: z(&geom),
            bo: z(&[state]),
            wc: z(&geom),
            bc: z(&[state]),
            h0: z(&[state]),
            c0: z(&[state]),
        }
    }

    pub fn state_size(&self) -> usize {
        self.wf.shape[1]
    }

    pub fn input_size(&self) -> usize {
        self.wf.shape[0] - self.state_size()
    }

    pub fn bind(&self, prefix: &str, binder: &mut Binder) -> LstmCell {
        LstmCell {
            wf: binder.bind(join(prefix, "wf"), &self.wf),
            bf: binder.bind(join(prefix, "bf"), &self.bf),
            wi: binder.bind(join(prefix, "wi"), &self.wi),
            bi: binder.bind(join(prefix, "bi"), &self.bi),
            wo: binder.bind(join(prefix, "wo"), &self.wo),
            bo: binder.bind(join(prefix, "bo"), &self.bo),
            wc: binder.bind(join(prefix, "wc"), &self.wc),
            bc: binder.bind(join(prefix, "bc"), &self.bc),
            h0: binder.bind(join(prefix, "h0"), &self.h0),
            c0: binder.bind(join(prefix, "c0"), &self.c0),
        }
    }
}

impl Parameterized for LstmParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ParamArray, ParamRole)) {
        use ParamRole::*;
        for (name, p, role) in [
            ("wf", &self.wf, Weight),
            ("bf", &self.bf, Bias),
            ("wi", &self.wi, Weight),
            ("bi", &self.bi, Bias),
            ("wo", &self.wo, Weight),
            ("bo", &self.bo, Bias),
            ("wc", &self.wc, Weight),
            ("bc", &self.bc, Bias),
            ("h0", &self.h0, InitialState),
            ("c0", &self.c0, InitialState),
        ] {
            f(join(prefix, name), p, role);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ParamArray, ParamRole)) {
        use ParamRole::*;
        for (name, p, role) in [
            ("wf", &mut self.wf, Weight),
            ("bf", &mut self.bf, Bias),
            ("wi", &mut self.wi, Weight),
            ("bi", &mut self.bi, Bias),
            ("wo", &mut self.wo, Weight),
            ("bo", &mut self.bo, Bias),
            ("wc", &mut self.wc, Weight),
            ("bc", &mut self.bc, Bias),
            ("h0", &mut self.h0, InitialState),
            ("c0", &mut self.c0, InitialState),
        ] {
            f(join(prefix, name), p, role);
        }
    }
}

pub struct LstmCell {
    pub wf: Tensor,
    pub bf: Tensor,
    pub wi: Tensor,
    pub bi: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub wc: Tensor,
    pub bc: Tensor,
    pub h0: Tensor,
    pub c0: Tensor,
}

impl LstmCell {
    /// One LSTM step; returns `(hidden, cell)`.
    pub fn step(&self, h_prev: &Tensor, c_prev: &Tensor, x: &Tensor) -> Result<(Tensor, Tensor)> {
        check_step_shapes(h_prev, x, &self.wf)?;
        if h_prev.shape() != c_prev.shape() {
            return Err(Error::Shape {
                op: "lstm step",
                left: h_prev.shape().to_vec(),
                right: c_prev.shape().to_vec(),
            });
        }
        let hx = h_prev.concat(x, last_axis(h_prev))?;
        let gate = |w: &Tensor, b: &Tensor| -> Result<Tensor> {
            Ok(hx.matmul(w)?.add_row_vector(b)?.sigmoid())
        };
        let forget = gate(&self.wf, &self.bf)?;
        let input = gate(&self.wi, &self.bi)?;
        let output = gate(&self.wo, &self.bo)?;
        let candidate = hx.matmul(&self.wc)?.add_row_vector(&self.bc)?.tanh();
        let c = input.mul(&candidate)?.add(&forget.mul(c_prev)?)?;
        let h = output.mul(&c.tanh())?;
        Ok((h, c))
    }

    pub fn state_size(&self) -> usize {
        self.wf.shape()[1]
    }
}

pub fn lstm_step(h_prev: &Tensor, c_prev: &Tensor, x: &Tensor, p: &LstmCell) -> Result<(Tensor, Tensor)> {
    p.step(h_prev, c_prev, x)
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecurrentParams {
    Gru(GruParams),
    Lstm(LstmParams),
}

impl RecurrentParams {
    pub fn new<R: Rng + ?Sized>(
        kind: CellKind,
        input: usize,
        state: usize,
        init: &InitSpec,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match kind {
            CellKind::Gru => RecurrentParams::Gru(GruParams::new(input, state, init, rng)?),
            CellKind::Lstm => RecurrentParams::Lstm(LstmParams::new(input, state, init, rng)?),
        })
    }

    pub fn kind(&self) -> CellKind {
        match self {
            RecurrentParams::Gru(_) => CellKind::Gru,
            RecurrentParams::Lstm(_) => CellKind::Lstm,
        }
    }

    pub fn state_size(&self) -> usize {
        match self {
            RecurrentParams::Gru(p) => p.state_size(),
            RecurrentParams::Lstm(p) => p.state_size(),
        }
    }

    pub fn input_size(&self) -> usize {
        match self {
            RecurrentParams::Gru(p) => p.input_size(),
            RecurrentParams::Lstm(p) => p.input_size(),
        }
    }

    pub fn bind(&self, prefix: &str, binder: &mut Binder) -> RecurrentCell {
        match self {
            RecurrentParams::Gru(p) => RecurrentCell::Gru(p.bind(prefix, binder)),
            RecurrentParams::Lstm(p) => RecurrentCell::Lstm(p.bind(prefix, binder)),
        }
    }
}

impl Parameterized for RecurrentParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ParamArray, ParamRole)) {
        match self {
            RecurrentParams::Gru(p) => p.visit(prefix, f),
            RecurrentParams::Lstm(p) => p.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ParamArray, ParamRole)) {
        match self {
            RecurrentParams::Gru(p) => p.visit_mut(prefix, f),
            RecurrentParams::Lstm(p) => p.visit_mut(prefix, f),
        }
    }
}

/// Recurrent state: the hidden vector, plus the cell vector for an LSTM.
#[derive(Clone, Debug)]
pub struct CellState {
    pub h: Tensor,
    pub c: Option<Tensor>,
}

pub enum RecurrentCell {
    Gru(GruCell),
    Lstm(LstmCell),
}

impl RecurrentCell {
    pub fn state_size(&self) -> usize {
        match self {
            RecurrentCell::Gru(c) => c.state_size(),
            RecurrentCell::Lstm(c) => c.state_size(),
        }
    }

    /// The learned initial state broadcast over `batch` rows.
    pub fn learned_initial(&self, batch: usize) -> Result<CellState> {
        let rows = |v: &Tensor| -> Result<Tensor> {
            let n = v.numel();
            Tensor::ones(&[batch, 1]).matmul(&v.reshape(&[1, n])?)
        };
        Ok(match self {
            RecurrentCell::Gru(c) => CellState { h: rows(&c.s0)?, c: None },
            RecurrentCell::Lstm(c) => CellState {
                h: rows(&c.h0)?,
                c: Some(rows(&c.c0)?),
            },
        })
    }

    pub fn step(&self, state: &CellState, x: &Tensor) -> Result<CellState> {
        match self {
            RecurrentCell::Gru(cell) => Ok(CellState {
                h: cell.step(&state.h, x)?,
                c: None,
            }),
            RecurrentCell::Lstm(cell) => {
                let c_prev = state
                    .c
                    .as_ref()
                    .ok_or_else(|| Error::invalid("LSTM step without a cell state"))?;
                let (h, c) = cell.step(&state.h, c_prev, x)?;
                Ok(CellState { h, c: Some(c) })
            }
        }
    }
}

/// Runs the cell over the rows of `inputs` (`[T × input]`) from `init`,
/// returning the hidden states `[T × state]`. Parameters are shared by every
/// step.
pub fn rnn_unroll(inputs: &Tensor, init: &CellState, cell: &RecurrentCell) -> Result<Tensor> {
    let steps = match inputs.shape() {
        [t, _] => *t,
        _ => return Err(Error::invalid("rnn_unroll needs a [T × input] matrix")),
    };
    if steps == 0 {
        return Err(Error::invalid("rnn_unroll on an empty sequence"));
    }
    let mut state = init.clone();
    let mut hidden = Vec::with_capacity(steps);
    for t in 0..steps {
        let x = inputs.narrow(0, t, 1)?;
        state = cell.step(&state, &x)?;
        hidden.push(state.h.clone());
    }
    Tensor::cat(&hidden, 0)
}
