use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{ActionBatch, Activation, Network, Real, Tape};
use crate::error::{Error, Result};

/// How actions enter the critic: discrete critics output one value per
/// action, continuous critics take `[state, action]` and output one value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "size", rename_all = "lowercase")]
pub enum CriticKind {
    Discrete(usize),
    Continuous(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Critic<F: Real = f32> {
    pub kind: CriticKind,
    pub net: Network<F>,
}

/// Forward record needed to backpropagate through `Q(s, a)`.
pub struct CriticTape<F: Real> {
    tape: Tape<F>,
    discrete_actions: Option<Vec<usize>>,
    state_dim: usize,
}

impl<F: Real> Critic<F> {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        kind: CriticKind,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let (input, output) = match kind {
            CriticKind::Discrete(n) => (state_dim, n),
            CriticKind::Continuous(d) => (state_dim + d, 1),
        };
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Ok(Critic {
            kind,
            net: Network::new(&sizes, activation, rng)?,
        })
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            CriticKind::Discrete(_) => self.net.input_dim(),
            CriticKind::Continuous(d) => self.net.input_dim() - d,
        }
    }

    pub fn cast<G: Real>(&self) -> Critic<G> {
        Critic {
            kind: self.kind,
            net: self.net.cast(),
        }
    }

    fn input(&self, states: ArrayView2<'_, F>, actions: &ActionBatch<F>) -> Result<Option<Array2<F>>> {
        if actions.len() != states.nrows() {
            return Err(Error::Shape(format!("{} actions for {} states", actions.len(), states.nrows())));
        }
        match (self.kind, actions) {
            (CriticKind::Continuous(d), ActionBatch::Continuous(a)) if a.ncols() == d => {
                Ok(Some(concatenate![Axis(1), states, a.view()]))
            }
            (CriticKind::Discrete(n), ActionBatch::Discrete(a)) => match a.iter().find(|&&i| i >= n) {
                Some(bad) => Err(Error::InvalidAction(format!("index {bad} outside [0, {n})"))),
                None => Ok(None),
            },
            _ => Err(Error::InvalidAction("action kind does not match critic".into())),
        }
    }

    /// `Q(s, a)` for every row.
    pub fn q(&self, states: ArrayView2<'_, F>, actions: &ActionBatch<F>) -> Result<Vec<F>> {
        match self.input(states, actions)? {
            Some(x) => Ok(self.net.forward(x.view())?.column(0).to_vec()),
            None => {
                let out = self.net.forward(states)?;
                let ActionBatch::Discrete(a) = actions else { unreachable!() };
                Ok(a.iter().enumerate().map(|(i, &ai)| out[[i, ai]]).collect())
            }
        }
    }

    /// Full action-value table; discrete critics only.
    pub fn q_all(&self, states: ArrayView2<'_, F>) -> Result<Array2<F>> {
        match self.kind {
            CriticKind::Discrete(_) => self.net.forward(states),
            CriticKind::Continuous(_) => Err(Error::InvalidArgument("continuous critics have no action table".into())),
        }
    }

    pub fn q_tape(&self, states: ArrayView2<'_, F>, actions: &ActionBatch<F>) -> Result<(Vec<F>, CriticTape<F>)> {
        let (tape, discrete_actions) = match self.input(states, actions)? {
            Some(x) => (self.net.forward_tape(x.view())?, None),
            None => {
                let ActionBatch::Discrete(a) = actions else { unreachable!() };
                (self.net.forward_tape(states)?, Some(a.clone()))
            }
        };
        let q = match &discrete_actions {
            Some(a) => a.iter().enumerate().map(|(i, &ai)| tape.output[[i, ai]]).collect(),
            None => tape.output.column(0).to_vec(),
        };
        Ok((
            q,
            CriticTape {
                tape,
                discrete_actions,
                state_dim: states.ncols(),
            },
        ))
    }

    /// Accumulates `sum_i dq[i] * dQ(s_i, a_i)/dparams` into `grads`.
    /// Continuous critics also return `dq[i] * dQ/da` per row.
    pub fn backward(&self, tape: &CriticTape<F>, dq: &[F], grads: &mut [F]) -> Result<Option<Array2<F>>> {
        let mut up = Array2::<F>::zeros(tape.tape.output.raw_dim());
        if dq.len() != up.nrows() {
            return Err(Error::Shape(format!("{} upstream values for {} rows", dq.len(), up.nrows())));
        }
        match &tape.discrete_actions {
            Some(a) => {
                for (i, (&ai, &g)) in a.iter().zip(dq).enumerate() {
                    up[[i, ai]] = g;
                }
                self.net.backward(&tape.tape, up.view(), grads)?;
                Ok(None)
            }
            None => {
                up.column_mut(0).iter_mut().zip(dq).for_each(|(u, &g)| *u = g);
                let dx = self.net.backward(&tape.tape, up.view(), grads)?;
                Ok(Some(dx.slice(s![.., tape.state_dim..]).to_owned()))
            }
        }
    }
}
