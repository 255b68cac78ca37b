//! Affine projections and the LSTM cell shared by all three tiers.
//!
//! Parameter structs are generic over their storage: `Linear<Tensor<T>>`
//! holds values, `Linear<Var>` holds the same parameters bound to a tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<P> {
    /// `[out × in]`
    pub weight: P,
    /// `[out]`
    pub bias: P,
}

pub type LinearParams<T> = Linear<Tensor<T>>;

/// LSTM weights with gate blocks laid out as input, forget, candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm<P> {
    /// `[4·hidden × in]`
    pub w_input: P,
    /// `[4·hidden × hidden]`
    pub w_hidden: P,
    /// `[4·hidden]`
    pub bias: P,
}

pub type LstmParams<T> = Lstm<Tensor<T>>;

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

/// LSTM state living on a tape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateVars {
    pub h: Var,
    pub c: Var,
}

impl<P> Linear<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Linear<Q> {
        Linear {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        f(format!("{prefix}.weight"), &self.weight);
        f(format!("{prefix}.bias"), &self.bias);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut P)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

impl<P> Lstm<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Lstm<Q> {
        Lstm {
            w_input: f(&self.w_input),
            w_hidden: f(&self.w_hidden),
            bias: f(&self.bias),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        f(format!("{prefix}.w_input"), &self.w_input);
        f(format!("{prefix}.w_hidden"), &self.w_hidden);
        f(format!("{prefix}.bias"), &self.bias);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut P)) {
        f(&mut self.w_input);
        f(&mut self.w_hidden);
        f(&mut self.bias);
    }
}

fn uniform<T: Real>(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Vec<T> {
    (0..rows * cols)
        .map(|_| T::of(rng.random_range(-bound..=bound)))
        .collect()
}

fn check_dims(dims: &[usize]) {
    assert!(dims.iter().all(|&d| d > 0), "layer dims must be positive: {dims:?}");
}

impl<T: Real> LinearParams<T> {
    /// Uniform `[-s, s]` with `s = sqrt(1/in)` for weight and bias.
    pub fn init(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        check_dims(&[input, output]);
        let s = (1.0 / input as f64).sqrt();
        Linear {
            weight: Tensor::matrix(output, input, uniform(rng, output, input, s)).unwrap(),
            bias: Tensor::vector(uniform(rng, output, 1, s)),
        }
    }

    pub fn init_seeded(input: usize, output: usize, seed: u64) -> Self {
        Self::init(input, output, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Linear<Var> {
        self.map(&mut |t| tape.leaf(t.clone()))
    }

    /// `weight·x + bias`
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let x = tape.leaf(x.clone());
        let y = p.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }
}

impl Linear<Var> {
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.affine(self.weight, x, self.bias)
    }

    pub fn grads<T: Real>(&self, grads: &Gradients<T>) -> LinearParams<T> {
        self.map(&mut |v| grads.get(*v))
    }
}

impl<T: Real> LstmParams<T> {
    /// Uniform `[-s, s]` with `s = sqrt(1/fan_in)` per matrix (the bias uses
    /// the input fan-in); the forget-gate bias block is then set to 1.
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        check_dims(&[input, hidden]);
        let si = (1.0 / input as f64).sqrt();
        let sh = (1.0 / hidden as f64).sqrt();
        let w_input = Tensor::matrix(4 * hidden, input, uniform(rng, 4 * hidden, input, si)).unwrap();
        let w_hidden = Tensor::matrix(4 * hidden, hidden, uniform(rng, 4 * hidden, hidden, sh)).unwrap();
        let mut bias: Vec<T> = uniform(rng, 4 * hidden, 1, si);
        bias[hidden..2 * hidden].fill(T::one());
        Lstm {
            w_input,
            w_hidden,
            bias: Tensor::vector(bias),
        }
    }

    pub fn init_seeded(input: usize, hidden: usize, seed: u64) -> Self {
        Self::init(input, hidden, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hidden.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Lstm<Var> {
        self.map(&mut |t| tape.leaf(t.clone()))
    }

    /// One recurrence step; the input state is left untouched.
    pub fn step(&self, x: &Tensor<T>, state: &LstmState<T>) -> Result<LstmState<T>> {
        let hidden = self.hidden_dim();
        if state.h.len() != hidden || state.c.len() != hidden {
            return Err(Error::Dimension(format!(
                "lstm state ({}, {}) does not match hidden size {hidden}",
                state.h.len(),
                state.c.len()
            )));
        }
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let x = tape.leaf(x.clone());
        let s = StateVars {
            h: tape.leaf(state.h.clone()),
            c: tape.leaf(state.c.clone()),
        };
        let out = p.step(&mut tape, x, s, hidden)?;
        Ok(LstmState {
            h: tape.value(out.h).clone(),
            c: tape.value(out.c).clone(),
        })
    }
}

impl Lstm<Var> {
    /// Standard (non-peephole) recurrence:
    /// `c' = f⊙c + i⊙tanh(ĝ)`, `h' = o⊙tanh(c')`.
    pub fn step<T: Real>(&self, tape: &mut Tape<T>, x: Var, state: StateVars, hidden: usize) -> Result<StateVars> {
        let from_x = tape.matvec(self.w_input, x)?;
        let from_h = tape.matvec(self.w_hidden, state.h)?;
        let pre = tape.add(from_x, from_h)?;
        let pre = tape.add(pre, self.bias)?;

        let block = |tape: &mut Tape<T>, k: usize| tape.slice(pre, k * hidden, hidden);
        let i = block(tape, 0)?;
        let i = tape.sigmoid(i)?;
        let f = block(tape, 1)?;
        let f = tape.sigmoid(f)?;
        let g = block(tape, 2)?;
        let g = tape.tanh(g)?;
        let o = block(tape, 3)?;
        let o = tape.sigmoid(o)?;

        let keep = tape.mul(f, state.c)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        Ok(StateVars { h, c })
    }

    pub fn grads<T: Real>(&self, grads: &Gradients<T>) -> LstmParams<T> {
        self.map(&mut |v| grads.get(*v))
    }
}

impl<T: Real> LstmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: Tensor::zeros(&[hidden]),
            c: Tensor::zeros(&[hidden]),
        }
    }
}
