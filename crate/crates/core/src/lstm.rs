//! LSTM cell and left-to-right sequence encoder.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const GATES: [&str; 4] = ["i", "f", "o", "g"];
const FORGET: usize = 1;

/// Weights of one LSTM layer, gate order input, forget, output, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub d_in: usize,
    pub d_h: usize,
    w: [ParamId; 4],
    u: [ParamId; 4],
    b: [ParamId; 4],
}

impl LstmParams {
    /// Registers `{prefix}.W_*`, `{prefix}.U_*`, `{prefix}.b_*`. The forget
    /// bias starts at 1, every other bias at 0.
    pub fn new(store: &mut ParamStore, prefix: &str, d_in: usize, d_h: usize, rng: &mut Rng) -> Result<Self> {
        let mut w = Vec::with_capacity(4);
        let mut u = Vec::with_capacity(4);
        let mut b = Vec::with_capacity(4);
        for (k, gate) in GATES.iter().enumerate() {
            w.push(store.add_glorot(format!("{prefix}.W_{gate}"), d_h, d_in, rng)?);
            u.push(store.add_glorot(format!("{prefix}.U_{gate}"), d_h, d_h, rng)?);
            let bias = if k == FORGET { 1.0 } else { 0.0 };
            b.push(store.add_const(format!("{prefix}.b_{gate}"), d_h, bias)?);
        }
        Ok(Self {
            d_in,
            d_h,
            w: w.try_into().unwrap(),
            u: u.try_into().unwrap(),
            b: b.try_into().unwrap(),
        })
    }

    /// Look up an already-registered layer by prefix.
    pub fn find(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |kind: &str, gate: &str| {
            store
                .id(&format!("{prefix}.{kind}_{gate}"))
                .ok_or_else(|| Error::InvalidArgument(format!("missing {prefix}.{kind}_{gate}")))
        };
        let mut w = [ParamId(0); 4];
        let mut u = [ParamId(0); 4];
        let mut b = [ParamId(0); 4];
        for (k, gate) in GATES.iter().enumerate() {
            w[k] = get("W", gate)?;
            u[k] = get("U", gate)?;
            b[k] = get("b", gate)?;
        }
        let shape = store.get(w[0]).value.shape();
        Ok(Self {
            d_in: shape[1],
            d_h: shape[0],
            w,
            u,
            b,
        })
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> LstmVars {
        let bind = |ids: &[ParamId; 4], tape: &mut Tape| ids.map(|id| tape.param(store, id));
        LstmVars {
            d_in: self.d_in,
            d_h: self.d_h,
            w: bind(&self.w, tape),
            u: bind(&self.u, tape),
            b: bind(&self.b, tape),
        }
    }
}

/// Layer weights recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub d_in: usize,
    pub d_h: usize,
    w: [Var; 4],
    u: [Var; 4],
    b: [Var; 4],
}

#[derive(Debug, Clone, Copy)]
pub struct StateVars {
    pub h: Var,
    pub c: Var,
}

impl StateVars {
    pub fn zeros(tape: &mut Tape, d_h: usize) -> Self {
        Self {
            h: tape.zeros(d_h),
            c: tape.zeros(d_h),
        }
    }
}

/// One step of the recurrence.
pub fn cell(tape: &mut Tape, p: &LstmVars, x: Var, prev: StateVars) -> Result<StateVars> {
    if tape.len_of(x) != p.d_in {
        return Err(Error::Shape(format!(
            "lstm input has {} dims, expected {}",
            tape.len_of(x),
            p.d_in
        )));
    }
    if tape.len_of(prev.h) != p.d_h || tape.len_of(prev.c) != p.d_h {
        return Err(Error::Shape(format!("lstm state must have {} dims", p.d_h)));
    }
    let mut pre = [x; 4];
    for (k, slot) in pre.iter_mut().enumerate() {
        let wx = tape.matvec(p.w[k], x);
        let uh = tape.matvec(p.u[k], prev.h);
        *slot = tape.add_n(&[wx, uh, p.b[k]]);
    }
    let i = tape.sigmoid(pre[0]);
    let f = tape.sigmoid(pre[1]);
    let o = tape.sigmoid(pre[2]);
    let g = tape.tanh(pre[3]);
    let ig = tape.mul(i, g);
    let fc = tape.mul(f, prev.c);
    let c = tape.add(ig, fc);
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc);
    Ok(StateVars { h, c })
}

/// Run the layer over `inputs` from the zero state, returning every hidden
/// output and the final state. Padding positions are processed like any other.
pub fn run(tape: &mut Tape, p: &LstmVars, inputs: &[Var]) -> Result<(Vec<Var>, StateVars)> {
    if inputs.is_empty() {
        return Err(Error::Empty("lstm input sequence"));
    }
    let mut state = StateVars::zeros(tape, p.d_h);
    let mut outputs = Vec::with_capacity(inputs.len());
    for &x in inputs {
        state = cell(tape, p, x, state)?;
        outputs.push(state.h);
    }
    Ok((outputs, state))
}

/// Materialized hidden and cell state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(d_h: usize) -> Self {
        Self {
            h: Tensor::zeros(&[d_h]),
            c: Tensor::zeros(&[d_h]),
        }
    }

    fn record(&self, tape: &mut Tape) -> StateVars {
        StateVars {
            h: tape.input(self.h.data().to_vec()),
            c: tape.input(self.c.data().to_vec()),
        }
    }

    fn read(tape: &Tape, s: StateVars) -> Self {
        Self {
            h: tape.tensor(s.h),
            c: tape.tensor(s.c),
        }
    }
}

/// Single cell step on concrete tensors.
pub fn cell_step(store: &ParamStore, params: &LstmParams, x: &Tensor, prev: &LstmState) -> Result<LstmState> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, store);
    let xv = tape.input(x.data().to_vec());
    let prev = prev.record(&mut tape);
    let next = cell(&mut tape, &vars, xv, prev)?;
    tape.check_finite()?;
    Ok(LstmState::read(&tape, next))
}

/// Encode a sequence of input vectors on concrete tensors.
pub fn encode(store: &ParamStore, params: &LstmParams, inputs: &[Tensor]) -> Result<(Vec<Tensor>, LstmState)> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, store);
    let xs: Vec<Var> = inputs.iter().map(|x| tape.input(x.data().to_vec())).collect();
    let (outs, last) = run(&mut tape, &vars, &xs)?;
    tape.check_finite()?;
    Ok((
        outs.iter().map(|&h| tape.tensor(h)).collect(),
        LstmState::read(&tape, last),
    ))
}
