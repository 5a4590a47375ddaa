use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Adam, Network, Real, Tape, LOG_STD_MAX, LOG_STD_MIN};
use crate::error::{Error, Result};

/// A batch of actions, one row (or index) per state.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionBatch<F: Real = f32> {
    Continuous(Array2<F>),
    Discrete(Vec<usize>),
}

impl<F: Real> ActionBatch<F> {
    pub fn len(&self) -> usize {
        match self {
            ActionBatch::Continuous(a) => a.nrows(),
            ActionBatch::Discrete(a) => a.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        match self {
            ActionBatch::Continuous(a) => ActionBatch::Continuous(a.select(Axis(0), rows)),
            ActionBatch::Discrete(a) => ActionBatch::Discrete(rows.iter().map(|&i| a[i]).collect()),
        }
    }

    pub fn cast<G: Real>(&self) -> ActionBatch<G> {
        match self {
            ActionBatch::Continuous(a) => ActionBatch::Continuous(a.mapv(|v| G::c(v.f64()))),
            ActionBatch::Discrete(a) => ActionBatch::Discrete(a.clone()),
        }
    }

    /// Row `i` as an `f64` vector (discrete actions become `[index]`).
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        match self {
            ActionBatch::Continuous(a) => a.row(i).iter().map(|v| v.f64()).collect(),
            ActionBatch::Discrete(a) => vec![a[i] as f64],
        }
    }
}

/// Diagonal gaussian with mean `bound * tanh(net(s))` and a
/// state-independent log standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy<F: Real = f32> {
    pub mean_net: Network<F>,
    pub log_std: Vec<F>,
    /// Deterministic actors are wrapped with a frozen log-std.
    pub learn_log_std: bool,
    pub action_bound: F,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalPolicy<F: Real = f32> {
    pub logit_net: Network<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PolicyHead<F: Real = f32> {
    Gaussian(GaussianPolicy<F>),
    Categorical(CategoricalPolicy<F>),
}

/// Gradient of `sum_i w_i log pi(a_i | s_i)` split by parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyGrad<F: Real = f32> {
    pub net: Vec<F>,
    pub log_std: Vec<F>,
}

impl<F: Real> PolicyGrad<F> {
    pub fn flat(&self) -> Vec<F> {
        self.net.iter().chain(&self.log_std).copied().collect()
    }

    pub fn scale(&mut self, k: F) {
        self.net.iter_mut().chain(self.log_std.iter_mut()).for_each(|g| *g *= k);
    }

    /// self += k * other
    pub fn add_scaled(&mut self, other: &PolicyGrad<F>, k: F) {
        for (a, &b) in self.net.iter_mut().zip(&other.net) {
            *a += k * b;
        }
        for (a, &b) in self.log_std.iter_mut().zip(&other.log_std) {
            *a += k * b;
        }
    }
}

/// Adam state for both parameter groups of a policy head.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PolicyOptimizer {
    pub net: Adam,
    pub log_std: Adam,
}

impl PolicyOptimizer {
    pub fn new<F: Real>(policy: &PolicyHead<F>, lr: f64) -> Self {
        PolicyOptimizer {
            net: Adam::new(policy.net().num_params(), lr),
            log_std: Adam::new(policy.log_std().len(), lr),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.net.lr = lr;
        self.log_std.lr = lr;
    }
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn log_softmax_rows<F: Real>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let lse = row.iter().map(|&v| (v - max).exp()).fold(F::zero(), |a, b| a + b).ln() + max;
        row.mapv_inplace(|v| v - lse);
    }
    out
}

impl<F: Real> PolicyHead<F> {
    pub fn net(&self) -> &Network<F> {
        match self {
            PolicyHead::Gaussian(g) => &g.mean_net,
            PolicyHead::Categorical(c) => &c.logit_net,
        }
    }

    pub fn net_mut(&mut self) -> &mut Network<F> {
        match self {
            PolicyHead::Gaussian(g) => &mut g.mean_net,
            PolicyHead::Categorical(c) => &mut c.logit_net,
        }
    }

    pub fn log_std(&self) -> &[F] {
        match self {
            PolicyHead::Gaussian(g) => &g.log_std,
            PolicyHead::Categorical(_) => &[],
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, PolicyHead::Categorical(_))
    }

    pub fn cast<G: Real>(&self) -> PolicyHead<G> {
        match self {
            PolicyHead::Gaussian(g) => PolicyHead::Gaussian(GaussianPolicy {
                mean_net: g.mean_net.cast(),
                log_std: g.log_std.iter().map(|v| G::c(v.f64())).collect(),
                learn_log_std: g.learn_log_std,
                action_bound: G::c(g.action_bound.f64()),
            }),
            PolicyHead::Categorical(c) => PolicyHead::Categorical(CategoricalPolicy {
                logit_net: c.logit_net.cast(),
            }),
        }
    }

    fn check_actions(&self, states: usize, actions: &ActionBatch<F>) -> Result<()> {
        if actions.len() != states {
            return Err(Error::Shape(format!("{} actions for {} states", actions.len(), states)));
        }
        match (self, actions) {
            (PolicyHead::Gaussian(g), ActionBatch::Continuous(a)) if a.ncols() == g.log_std.len() => Ok(()),
            (PolicyHead::Categorical(c), ActionBatch::Discrete(a)) => {
                let n = c.logit_net.output_dim();
                match a.iter().find(|&&i| i >= n) {
                    Some(bad) => Err(Error::InvalidAction(format!("index {bad} outside [0, {n})"))),
                    None => Ok(()),
                }
            }
            _ => Err(Error::InvalidAction("action kind does not match policy head".into())),
        }
    }

    /// Gaussian means, shape `(n, action_dim)`.
    pub fn mean(&self, states: ArrayView2<'_, F>) -> Result<Array2<F>> {
        match self {
            PolicyHead::Gaussian(g) => {
                let bound = g.action_bound;
                Ok(g.mean_net.forward(states)?.mapv(|z| bound * z.tanh()))
            }
            PolicyHead::Categorical(_) => Err(Error::InvalidArgument("categorical policy has no mean".into())),
        }
    }

    /// Gaussian mean with the tape needed by [`PolicyHead::mean_backward`].
    pub fn mean_tape(&self, states: ArrayView2<'_, F>) -> Result<(Array2<F>, Tape<F>)> {
        match self {
            PolicyHead::Gaussian(g) => {
                let tape = g.mean_net.forward_tape(states)?;
                let bound = g.action_bound;
                Ok((tape.output.mapv(|z| bound * z.tanh()), tape))
            }
            PolicyHead::Categorical(_) => Err(Error::InvalidArgument("categorical policy has no mean".into())),
        }
    }

    /// Accumulates `sum_ij dmean[i,j] * d mean[i,j] / d params` into `grads`.
    pub fn mean_backward(&self, tape: &Tape<F>, dmean: ArrayView2<'_, F>, grads: &mut [F]) -> Result<()> {
        let PolicyHead::Gaussian(g) = self else {
            return Err(Error::InvalidArgument("categorical policy has no mean".into()));
        };
        let bound = g.action_bound;
        let mut up = tape.output.mapv(|z| {
            let t = z.tanh();
            bound * (F::one() - t * t)
        });
        up *= &dmean;
        g.mean_net.backward(tape, up.view(), grads)?;
        Ok(())
    }

    /// Softmax probabilities, shape `(n, action_count)`.
    pub fn probs(&self, states: ArrayView2<'_, F>) -> Result<Array2<F>> {
        match self {
            PolicyHead::Categorical(c) => Ok(log_softmax_rows(&c.logit_net.forward(states)?).mapv(F::exp)),
            PolicyHead::Gaussian(_) => Err(Error::InvalidArgument("gaussian policy has no probability table".into())),
        }
    }

    /// Mean action (gaussian) or argmax (categorical).
    pub fn greedy(&self, states: ArrayView2<'_, F>) -> Result<ActionBatch<F>> {
        match self {
            PolicyHead::Gaussian(_) => Ok(ActionBatch::Continuous(self.mean(states)?)),
            PolicyHead::Categorical(c) => {
                let logits = c.logit_net.forward(states)?;
                Ok(ActionBatch::Discrete(
                    logits
                        .rows()
                        .into_iter()
                        .map(|r| {
                            let mut best = 0;
                            for (i, &v) in r.iter().enumerate() {
                                if v > r[best] {
                                    best = i;
                                }
                            }
                            best
                        })
                        .collect(),
                ))
            }
        }
    }

    /// Draws one action per state: clipped `mean + std * z` for gaussians,
    /// inverse-CDF sampling for categoricals.
    pub fn sample<R: Rng + ?Sized>(&self, states: ArrayView2<'_, F>, rng: &mut R) -> Result<ActionBatch<F>> {
        match self {
            PolicyHead::Gaussian(g) => {
                let mut mean = self.mean(states)?;
                let bound = g.action_bound;
                for mut row in mean.rows_mut() {
                    for (a, ls) in row.iter_mut().zip(&g.log_std) {
                        let z: f64 = StandardNormal.sample(rng);
                        let v = *a + ls.exp() * F::c(z);
                        *a = v.max(-bound).min(bound);
                    }
                }
                Ok(ActionBatch::Continuous(mean))
            }
            PolicyHead::Categorical(_) => {
                let probs = self.probs(states)?;
                let picks = probs
                    .rows()
                    .into_iter()
                    .map(|row| {
                        let u: f64 = rng.random();
                        let mut acc = 0.0;
                        for (i, p) in row.iter().enumerate() {
                            acc += p.f64();
                            if u < acc {
                                return i;
                            }
                        }
                        row.len() - 1
                    })
                    .collect();
                Ok(ActionBatch::Discrete(picks))
            }
        }
    }

    pub fn log_prob(&self, states: ArrayView2<'_, F>, actions: &ActionBatch<F>) -> Result<Vec<F>> {
        let n = actions.len();
        Ok(self.log_prob_grad(states, actions, &vec![F::zero(); n])?.0)
    }

    /// Log-densities of `actions` plus the gradient of
    /// `sum_i weights[i] * log pi(actions[i] | states[i])`.
    pub fn log_prob_grad(
        &self,
        states: ArrayView2<'_, F>,
        actions: &ActionBatch<F>,
        weights: &[F],
    ) -> Result<(Vec<F>, PolicyGrad<F>)> {
        self.check_actions(states.nrows(), actions)?;
        if weights.len() != actions.len() {
            return Err(Error::Shape(format!("{} weights for {} actions", weights.len(), actions.len())));
        }
        let mut grad = PolicyGrad {
            net: vec![F::zero(); self.net().num_params()],
            log_std: vec![F::zero(); self.log_std().len()],
        };
        match (self, actions) {
            (PolicyHead::Gaussian(g), ActionBatch::Continuous(a)) => {
                let tape = g.mean_net.forward_tape(states)?;
                let bound = g.action_bound;
                let dim = g.log_std.len();
                let mut up = Array2::<F>::zeros(tape.output.raw_dim());
                let mut logps = Vec::with_capacity(a.nrows());
                for i in 0..a.nrows() {
                    let mut lp = F::zero();
                    for d in 0..dim {
                        let t = tape.output[[i, d]].tanh();
                        let mu = bound * t;
                        let ls = g.log_std[d];
                        let inv_var = (-(ls + ls)).exp();
                        let diff = a[[i, d]] - mu;
                        let zsq = diff * diff * inv_var;
                        lp += -F::c(0.5) * zsq - ls - F::c(HALF_LN_2PI);
                        let w = weights[i];
                        up[[i, d]] = w * diff * inv_var * bound * (F::one() - t * t);
                        grad.log_std[d] += w * (zsq - F::one());
                    }
                    logps.push(lp);
                }
                g.mean_net.backward(&tape, up.view(), &mut grad.net)?;
                if !g.learn_log_std {
                    grad.log_std.iter_mut().for_each(|v| *v = F::zero());
                }
                Ok((logps, grad))
            }
            (PolicyHead::Categorical(c), ActionBatch::Discrete(a)) => {
                let tape = c.logit_net.forward_tape(states)?;
                let logp = log_softmax_rows(&tape.output);
                let mut up = logp.mapv(|v| -v.exp());
                let mut logps = Vec::with_capacity(a.len());
                for (i, &ai) in a.iter().enumerate() {
                    logps.push(logp[[i, ai]]);
                    up[[i, ai]] += F::one();
                    up.row_mut(i).mapv_inplace(|v| v * weights[i]);
                }
                c.logit_net.backward(&tape, up.view(), &mut grad.net)?;
                Ok((logps, grad))
            }
            _ => unreachable!("checked by check_actions"),
        }
    }

    /// One optimizer step descending along `grad`; clamps log-std afterwards.
    pub fn apply(&mut self, opt: &mut PolicyOptimizer, grad: &PolicyGrad<F>) -> Result<()> {
        opt.net.step(self.net_mut().params_mut(), &grad.net)?;
        if let PolicyHead::Gaussian(g) = self {
            if g.learn_log_std {
                opt.log_std.step(&mut g.log_std, &grad.log_std)?;
                let (lo, hi) = (F::c(LOG_STD_MIN), F::c(LOG_STD_MAX));
                g.log_std.iter_mut().for_each(|v| *v = v.max(lo).min(hi));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{finite_diff_check, Activation};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian(log_std: f64, rng: &mut ChaCha8Rng) -> PolicyHead<f64> {
        PolicyHead::Gaussian(GaussianPolicy {
            mean_net: Network::new(&[2, 8, 1], Activation::Tanh, rng).unwrap(),
            log_std: vec![log_std],
            learn_log_std: true,
            action_bound: 1.0,
        })
    }

    #[test]
    fn uniform_categorical_log_prob() {
        let net = Network::<f64>::zeros(&[3, 4], Activation::Tanh).unwrap();
        let policy = PolicyHead::Categorical(CategoricalPolicy { logit_net: net });
        let s = Array2::zeros((4, 3));
        let lp = policy.log_prob(s.view(), &ActionBatch::Discrete(vec![0, 1, 2, 3])).unwrap();
        for v in lp {
            assert!((v - 0.25f64.ln()).abs() < 1e-15);
        }
        let p = policy.probs(s.view()).unwrap();
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_index_rejected() {
        let net = Network::<f64>::zeros(&[3, 4], Activation::Tanh).unwrap();
        let policy = PolicyHead::Categorical(CategoricalPolicy { logit_net: net });
        let s = Array2::zeros((1, 3));
        assert!(matches!(
            policy.log_prob(s.view(), &ActionBatch::Discrete(vec![4])),
            Err(Error::InvalidAction(_))
        ));
    }

    #[test]
    fn gaussian_peak_density() {
        let net = Network::<f64>::zeros(&[2, 1], Activation::Tanh).unwrap();
        let policy = PolicyHead::Gaussian(GaussianPolicy {
            mean_net: net,
            log_std: vec![0.0],
            learn_log_std: true,
            action_bound: 1.0,
        });
        let s = Array2::zeros((1, 2));
        let lp = policy.log_prob(s.view(), &ActionBatch::Continuous(array![[0.0]])).unwrap();
        assert!((lp[0] + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_density_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let policy = gaussian(-1.0, &mut rng);
        let s = array![[0.2, -0.4]];
        let mu = policy.mean(s.view()).unwrap()[[0, 0]];
        let sigma = (-1.0f64).exp();
        let n = 2001;
        let (lo, hi) = (mu - 6.0 * sigma, mu + 6.0 * sigma);
        let h = (hi - lo) / (n - 1) as f64;
        let xs: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
        let states = Array2::from_shape_fn((n, 2), |(_, j)| s[[0, j]]);
        let acts = ActionBatch::Continuous(Array2::from_shape_vec((n, 1), xs).unwrap());
        let dens: Vec<f64> = policy.log_prob(states.view(), &acts).unwrap().iter().map(|v| v.exp()).collect();
        let integral = h * (dens.iter().sum::<f64>() - 0.5 * (dens[0] + dens[n - 1]));
        assert!((integral - 1.0).abs() < 1e-2, "{integral}");
    }

    #[test]
    fn gaussian_mean_gradient_matches_closed_form() {
        // With a single linear unit z = b, mu = tanh(b); d logp/d b = (a-mu)/sigma^2 * (1-mu^2).
        let mut net = Network::<f64>::zeros(&[1, 1], Activation::Tanh).unwrap();
        net.params_mut()[1] = 0.3;
        let policy = PolicyHead::Gaussian(GaussianPolicy {
            mean_net: net,
            log_std: vec![-0.5],
            learn_log_std: true,
            action_bound: 1.0,
        });
        let s = array![[0.0]];
        let a = ActionBatch::Continuous(array![[0.7]]);
        let (_, g) = policy.log_prob_grad(s.view(), &a, &[1.0]).unwrap();
        let mu = 0.3f64.tanh();
        let var = (-1.0f64).exp();
        assert!((g.net[1] - (0.7 - mu) / var * (1.0 - mu * mu)).abs() < 1e-12);
    }

    fn check_log_prob_grad(policy: PolicyHead<f64>, states: Array2<f64>, actions: ActionBatch<f64>) {
        let weights: Vec<f64> = (0..actions.len()).map(|i| 0.5 - i as f64 * 0.3).collect();
        let n_net = policy.net().num_params();
        let mut params: Vec<f64> = policy.net().params().to_vec();
        params.extend_from_slice(policy.log_std());
        let loss = |p: &[f64]| {
            let mut pol = policy.clone();
            pol.net_mut().params_mut().copy_from_slice(&p[..n_net]);
            if let PolicyHead::Gaussian(g) = &mut pol {
                g.log_std.copy_from_slice(&p[n_net..]);
            }
            let (lp, grad) = pol.log_prob_grad(states.view(), &actions, &weights).unwrap();
            (lp.iter().zip(&weights).map(|(l, w)| l * w).sum(), grad.flat())
        };
        let report = finite_diff_check(loss, &params, 1e-3);
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn gaussian_log_prob_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let policy = gaussian(-0.7, &mut rng);
        let states = array![[0.1, 0.2], [-0.5, 0.3], [0.9, -0.9]];
        let actions = ActionBatch::Continuous(array![[0.3], [-0.2], [0.8]]);
        check_log_prob_grad(policy, states, actions);
    }

    #[test]
    fn categorical_log_prob_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let policy = PolicyHead::Categorical(CategoricalPolicy {
            logit_net: Network::new(&[3, 7, 4], Activation::Tanh, &mut rng).unwrap(),
        });
        let states = array![[0.1, 0.2, 0.0], [-0.5, 0.3, 1.0], [0.9, -0.9, 0.4]];
        check_log_prob_grad(policy, states, ActionBatch::Discrete(vec![3, 0, 2]));
    }

    #[test]
    fn tiny_std_samples_concentrate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let policy = gaussian(-5.0, &mut rng).cast::<f32>();
        let states = Array2::from_elem((10_000, 2), 0.25f32);
        let mean = policy.mean(states.view()).unwrap()[[0, 0]];
        let ActionBatch::Continuous(a) = policy.sample(states.view(), &mut rng).unwrap() else {
            unreachable!()
        };
        // sigma = e^-5 ~ 0.0067, so it is the sample mean that sits within 0.01.
        let n = a.len() as f32;
        let sample_mean = a.sum() / n;
        let sample_std = (a.mapv(|v| (v - sample_mean).powi(2)).sum() / n).sqrt();
        assert!((sample_mean - mean).abs() < 0.01);
        assert!((sample_std - (-5.0f32).exp()).abs() < 1e-3);
        assert!(a.iter().all(|&v| v.abs() <= 1.0));
    }

    #[test]
    fn peaked_categorical_samples_argmax() {
        let mut net = Network::<f32>::zeros(&[1, 3], Activation::Tanh).unwrap();
        net.params_mut()[3 + 1] = 20.0; // bias of action 1
        let policy = PolicyHead::Categorical(CategoricalPolicy { logit_net: net });
        let states = Array2::zeros((10_000, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ActionBatch::Discrete(a) = policy.sample(states.view(), &mut rng).unwrap() else {
            unreachable!()
        };
        let hits = a.iter().filter(|&&i| i == 1).count() as f64 / a.len() as f64;
        assert!(hits > 0.999);
        assert_eq!(policy.greedy(states.view()).unwrap(), ActionBatch::Discrete(vec![1; 10_000]));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let policy = gaussian(-1.0, &mut rng);
        let states = array![[0.3, 0.1], [0.0, 0.0]];
        let a = policy.sample(states.view(), &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = policy.sample(states.view(), &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn log_std_clamped_after_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut policy = gaussian(-4.9999, &mut rng);
        let mut opt = PolicyOptimizer::new(&policy, 0.1);
        let grad = PolicyGrad {
            net: vec![0.0; policy.net().num_params()],
            log_std: vec![10.0],
        };
        policy.apply(&mut opt, &grad).unwrap();
        assert_eq!(policy.log_std(), &[LOG_STD_MIN]);
    }
}
