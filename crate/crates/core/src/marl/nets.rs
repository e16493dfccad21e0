//! Actor and critic networks: dense + ReLU, an LSTM over the history window,
//! and a dense head.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::neural::{
    relu, relu_backward, softmax, softmax_backward, DenseLayer, LstmCache, LstmLayer, LstmState, Params, Tensor,
};
use crate::perception::HistoryWindow;

/// Dense and ReLU over each row, LSTM over the rows, dense head on the last
/// hidden state. Shared by both networks.
#[derive(Clone, Debug, PartialEq)]
struct Body {
    input: DenseLayer,
    lstm: LstmLayer,
    head: DenseLayer,
}

#[derive(Clone, Debug)]
struct BodyCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    lstm: LstmCache,
    last: Vec<f64>,
}

impl Body {
    fn new(input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        Body {
            input: DenseLayer::new(input, hidden, rng),
            lstm: LstmLayer::new(hidden, hidden, rng),
            head: DenseLayer::new(hidden, output, rng),
        }
    }

    fn forward<X: AsRef<[f64]>>(&self, rows: &[X]) -> Result<(Vec<f64>, BodyCache)> {
        let hidden = self.lstm.hidden_size();
        let mut inputs = Vec::with_capacity(rows.len());
        let mut pre = Vec::with_capacity(rows.len());
        let mut acts = Vec::with_capacity(rows.len());
        for r in rows {
            let z = self.input.forward(r.as_ref())?;
            inputs.push(r.as_ref().to_vec());
            acts.push(relu(&z));
            pre.push(z);
        }
        let (_, state, lstm) = self.lstm.forward(&acts, &LstmState::zeros(hidden))?;
        let out = self.head.forward(&state.h)?;
        Ok((
            out,
            BodyCache {
                inputs,
                pre,
                acts,
                lstm,
                last: state.h,
            },
        ))
    }

    /// Accumulate parameter gradients for output gradient `dout`. Returns the
    /// gradient with respect to each row's input-layer output.
    fn backward(&self, cache: &BodyCache, dout: &[f64], grad: &mut Body) -> Result<Vec<Vec<f64>>> {
        let hidden = self.lstm.hidden_size();
        let mut dh = vec![0.0; hidden];
        self.head.backward(&cache.last, dout, &mut grad.head, Some(&mut dh));
        let steps = cache.acts.len();
        let mut d_outputs = vec![vec![0.0; hidden]; steps];
        if let Some(last) = d_outputs.last_mut() {
            *last = dh;
        }
        let (d_acts, _) = self.lstm.backward(&cache.lstm, &d_outputs, &mut grad.lstm)?;
        let d_pre: Vec<Vec<f64>> = cache
            .pre
            .iter()
            .zip(&d_acts)
            .map(|(z, da)| relu_backward(z, da))
            .collect();
        for (x, dz) in cache.inputs.iter().zip(&d_pre) {
            self.input.backward(x, dz, &mut grad.input, None);
        }
        Ok(d_pre)
    }

    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.input.tensors();
        v.extend(self.lstm.tensors());
        v.extend(self.head.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.input.tensors_mut();
        v.extend(self.lstm.tensors_mut());
        v.extend(self.head.tensors_mut());
        v
    }
}

/// Decentralized policy over one agent's own history window.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorNet {
    body: Body,
}

#[derive(Clone, Debug)]
pub struct ActorCache {
    body: BodyCache,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ActorNet {
    pub fn new(row_width: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        ActorNet {
            body: Body::new(row_width, hidden, 3, rng),
        }
    }

    pub fn row_width(&self) -> usize {
        self.body.input.input_size()
    }

    pub fn hidden(&self) -> usize {
        self.body.lstm.hidden_size()
    }

    /// Probabilities over KL, CL, CR.
    pub fn forward(&self, window: &HistoryWindow) -> Result<(Vec<f64>, ActorCache)> {
        let (logits, body) = self.body.forward(window.rows())?;
        let probs = softmax(&logits);
        Ok((probs.clone(), ActorCache { body, logits, probs }))
    }

    pub fn probs(&self, window: &HistoryWindow) -> Result<Vec<f64>> {
        Ok(self.forward(window)?.0)
    }

    /// Accumulate parameter gradients given the gradient on the output
    /// probabilities.
    pub fn backward(&self, cache: &ActorCache, dprobs: &[f64], grad: &mut ActorNet) -> Result<()> {
        self.backward_with_logits(cache, dprobs, &[0.0; 3], grad)
    }

    /// `backward` with an extra gradient applied directly to the logits.
    pub fn backward_with_logits(
        &self,
        cache: &ActorCache,
        dprobs: &[f64],
        dlogits_extra: &[f64],
        grad: &mut ActorNet,
    ) -> Result<()> {
        let mut dlogits = softmax_backward(&cache.probs, dprobs);
        for (d, e) in dlogits.iter_mut().zip(dlogits_extra) {
            *d += e;
        }
        self.body.backward(&cache.body, &dlogits, &mut grad.body)?;
        Ok(())
    }
}

impl Params for ActorNet {
    fn tensors(&self) -> Vec<&Tensor> {
        self.body.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.body.tensors_mut()
    }
}

/// Centralized Q(o, a): each input row concatenates every agent's history row
/// at that step; the joint action one-hots are appended to the final row and
/// are zero on earlier rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticNet {
    body: Body,
    agents: usize,
    row_width: usize,
}

#[derive(Clone, Debug)]
pub struct CriticCache {
    body: BodyCache,
    pub q: f64,
}

impl CriticNet {
    pub fn new(agents: usize, row_width: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        CriticNet {
            body: Body::new(agents * (row_width + 3), hidden, 1, rng),
            agents,
            row_width,
        }
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn row_width(&self) -> usize {
        self.row_width
    }

    pub fn hidden(&self) -> usize {
        self.body.lstm.hidden_size()
    }

    fn inputs(&self, windows: &[HistoryWindow], actions: &[[f64; 3]]) -> Result<Vec<Vec<f64>>> {
        if windows.len() != self.agents || actions.len() != self.agents {
            return Err(Error::Dimension {
                expected: self.agents,
                got: windows.len().min(actions.len()),
            });
        }
        let steps = windows[0].len();
        if windows.iter().any(|w| w.len() != steps) {
            return Err(Error::Dimension {
                expected: steps,
                got: windows.iter().map(|w| w.len()).max().unwrap_or(0),
            });
        }
        let width = self.agents * (self.row_width + 3);
        let mut rows = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut row = Vec::with_capacity(width);
            for w in windows {
                let r: &Arc<[f64]> = &w.rows()[t];
                if r.len() != self.row_width {
                    return Err(Error::Dimension {
                        expected: self.row_width,
                        got: r.len(),
                    });
                }
                row.extend_from_slice(r);
            }
            if t + 1 == steps {
                for a in actions {
                    row.extend_from_slice(a);
                }
            } else {
                row.resize(width, 0.0);
            }
            rows.push(row);
        }
        Ok(rows)
    }

    pub fn forward(&self, windows: &[HistoryWindow], actions: &[[f64; 3]]) -> Result<(f64, CriticCache)> {
        let rows = self.inputs(windows, actions)?;
        let (out, body) = self.body.forward(&rows)?;
        Ok((out[0], CriticCache { body, q: out[0] }))
    }

    pub fn q(&self, windows: &[HistoryWindow], actions: &[[f64; 3]]) -> Result<f64> {
        Ok(self.forward(windows, actions)?.0)
    }

    /// Accumulate parameter gradients for dL/dQ = `dq` into `grad` (when
    /// given) and return dL/d(action) for every agent.
    pub fn backward(&self, cache: &CriticCache, dq: f64, grad: Option<&mut CriticNet>) -> Result<Vec<[f64; 3]>> {
        let mut scratch;
        let grad = match grad {
            Some(g) => g,
            None => {
                scratch = self.zeros_like();
                &mut scratch
            }
        };
        let d_pre = self.body.backward(&cache.body, &[dq], &mut grad.body)?;
        // Action columns of the final row only.
        let width = self.body.input.input_size();
        let action_start = self.agents * self.row_width;
        let last = d_pre.last().expect("at least one row");
        let w = self.body.input.w.data();
        let mut out = vec![[0.0; 3]; self.agents];
        for (o, &dz) in last.iter().enumerate() {
            if dz == 0.0 {
                continue;
            }
            let row = &w[o * width..(o + 1) * width];
            for (k, slot) in out.iter_mut().enumerate() {
                for (c, g) in slot.iter_mut().enumerate() {
                    *g += dz * row[action_start + 3 * k + c];
                }
            }
        }
        Ok(out)
    }
}

impl Params for CriticNet {
    fn tensors(&self) -> Vec<&Tensor> {
        self.body.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.body.tensors_mut()
    }
}

/// One critic training sample: every agent's window, the joint action as
/// one-hot (or relaxed) vectors, and the regression target.
pub struct CriticSample<'a> {
    pub windows: &'a [HistoryWindow],
    pub actions: Vec<[f64; 3]>,
    pub target: f64,
}

/// Mean squared Bellman error and its gradient with respect to the critic.
pub fn critic_loss(critic: &CriticNet, samples: &[CriticSample<'_>]) -> Result<(f64, CriticNet)> {
    let mut grad = critic.zeros_like();
    let k = samples.len() as f64;
    let mut loss = 0.0;
    for s in samples {
        let (q, cache) = critic.forward(s.windows, &s.actions)?;
        let err = q - s.target;
        loss += err * err / k;
        critic.backward(&cache, 2.0 * err / k, Some(&mut grad))?;
    }
    Ok((loss, grad))
}

/// One actor training sample: the joint windows and actions from replay and
/// the agent whose action slot the actor fills.
pub struct ActorSample<'a> {
    pub windows: &'a [HistoryWindow],
    pub actions: Vec<[f64; 3]>,
    pub agent: usize,
}

/// Mean critic value with each sample's agent slot replaced by the actor's
/// probabilities, minus `logit_penalty` times the mean squared logit sum, and
/// the gradient of that objective with respect to the actor. The penalty
/// keeps the softmax out of saturation, where the critic's gradient vanishes.
pub fn actor_objective(
    actor: &ActorNet,
    critic: &CriticNet,
    samples: &[ActorSample<'_>],
    logit_penalty: f64,
) -> Result<(f64, ActorNet)> {
    let mut grad = actor.zeros_like();
    let k = samples.len() as f64;
    let mut objective = 0.0;
    for s in samples {
        let (probs, a_cache) = actor.forward(&s.windows[s.agent])?;
        let mut actions = s.actions.clone();
        actions[s.agent] = [probs[0], probs[1], probs[2]];
        let (q, c_cache) = critic.forward(s.windows, &actions)?;
        let squares: f64 = a_cache.logits.iter().map(|z| z * z).sum();
        objective += (q - logit_penalty * squares) / k;
        let da = critic.backward(&c_cache, 1.0 / k, None)?;
        let dz: Vec<f64> = a_cache.logits.iter().map(|z| -2.0 * logit_penalty * z / k).collect();
        actor.backward_with_logits(&a_cache, &da[s.agent], &dz, &mut grad)?;
    }
    Ok((objective, grad))
}
