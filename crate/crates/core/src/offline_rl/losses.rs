//! Loss functions with hand-derived gradients. Every function returns the
//! scalar loss (accumulated in `f64`) and the gradient of that loss.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::critic::Critic;
use super::pool::Batch;
use crate::approx::{ActionBatch, Network, PolicyGrad, PolicyHead, Real};
use crate::error::{Error, Result};

/// Floor on the `mean |Q|` denominator of the TD3+BC trade-off.
pub const LAMBDA_DENOM_FLOOR: f64 = 1e-6;

fn check_finite<F: Real>(what: &str, values: &[F]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what}[{i}]"))),
        None => Ok(()),
    }
}

/// `sum_k mean_i (Q(s_i, a_i) - targets_k[i])^2` with one forward pass.
/// Returns the per-term losses and the gradient of their sum.
pub fn critic_regression<F: Real>(
    critic: &Critic<F>,
    states: ArrayView2<'_, F>,
    actions: &ActionBatch<F>,
    targets: &[&[F]],
) -> Result<(Vec<f64>, Vec<F>)> {
    let (q, tape) = critic.q_tape(states, actions)?;
    let n = q.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut dq = vec![F::zero(); n];
    let mut losses = Vec::with_capacity(targets.len());
    let scale = F::c(2.0 / n as f64);
    for t in targets {
        if t.len() != n {
            return Err(Error::Shape(format!("{} targets for {} rows", t.len(), n)));
        }
        check_finite("target", t)?;
        let mut loss = 0.0;
        for i in 0..n {
            let d = q[i] - t[i];
            loss += d.f64() * d.f64();
            dq[i] += scale * d;
        }
        losses.push(loss / n as f64);
    }
    let mut grads = vec![F::zero(); critic.net.num_params()];
    critic.backward(&tape, &dq, &mut grads)?;
    Ok((losses, grads))
}

/// Bootstrapped targets `r + gamma (1 - done) mean_k Q_target(s', a'_k)` with
/// `a'_k ~ pi(. | s')`.
pub fn td_targets<F: Real, R: Rng + ?Sized>(
    target_critic: &Critic<F>,
    policy: &PolicyHead<F>,
    batch: &Batch<F>,
    gamma: f64,
    action_samples: usize,
    rng: &mut R,
) -> Result<Vec<F>> {
    check_finite("reward", &batch.rewards)?;
    let samples = action_samples.max(1);
    let mut next_q = vec![F::zero(); batch.len()];
    for _ in 0..samples {
        let a = policy.sample(batch.next_states.view(), rng)?;
        for (acc, q) in next_q.iter_mut().zip(target_critic.q(batch.next_states.view(), &a)?) {
            *acc += q;
        }
    }
    Ok(bellman_targets(batch, &next_q, F::c(1.0 / samples as f64), gamma))
}

fn bellman_targets<F: Real>(batch: &Batch<F>, next: &[F], scale: F, gamma: f64) -> Vec<F> {
    let g = F::c(gamma);
    batch
        .rewards
        .iter()
        .zip(&batch.dones)
        .zip(next)
        .map(|((&r, &d), &q)| r + g * (F::one() - d) * q * scale)
        .collect()
}

/// One-sample TD loss: mean squared error between `Q(s, a)` and its
/// bootstrapped target.
pub fn td_loss<F: Real, R: Rng + ?Sized>(
    critic: &Critic<F>,
    target_critic: &Critic<F>,
    policy: &PolicyHead<F>,
    batch: &Batch<F>,
    gamma: f64,
    action_samples: usize,
    rng: &mut R,
) -> Result<(f64, Vec<F>)> {
    let y = td_targets(target_critic, policy, batch, gamma, action_samples, rng)?;
    let (losses, grads) = critic_regression(critic, batch.states.view(), &batch.actions, &[&y])?;
    Ok((losses[0], grads))
}

/// Asymmetric squared loss `|tau - 1(u < 0)| u^2`.
pub fn expectile_loss(u: f64, tau: f64) -> f64 {
    let w = if u < 0.0 { 1.0 - tau } else { tau };
    w * u * u
}

/// Mean expectile loss of `q_targets - V(s)` and its gradient wrt `V`'s params.
pub fn value_loss<F: Real>(
    value_net: &Network<F>,
    states: ArrayView2<'_, F>,
    q_targets: &[F],
    tau: f64,
) -> Result<(f64, Vec<F>)> {
    let tape = value_net.forward_tape(states)?;
    let n = q_targets.len();
    if n != tape.output.nrows() || n == 0 {
        return Err(Error::Shape(format!("{} targets for {} states", n, tape.output.nrows())));
    }
    let mut up = Array2::<F>::zeros((n, 1));
    let mut loss = 0.0;
    for i in 0..n {
        let u = q_targets[i] - tape.output[[i, 0]];
        loss += expectile_loss(u.f64(), tau);
        let w = if u < F::zero() { F::c(1.0 - tau) } else { F::c(tau) };
        up[[i, 0]] = -F::c(2.0 / n as f64) * w * u;
    }
    let mut grads = vec![F::zero(); value_net.num_params()];
    value_net.backward(&tape, up.view(), &mut grads)?;
    Ok((loss / n as f64, grads))
}

/// `min(exp(beta * adv), max_weight)` per sample.
pub fn awr_weights<F: Real>(advantages: &[F], beta: f64, max_weight: f64) -> Vec<F> {
    advantages
        .iter()
        .map(|a| F::c((beta * a.f64()).exp().min(max_weight)))
        .collect()
}

/// Advantage-weighted regression: `-mean_i w_i log pi(a_i | s_i)`.
pub fn awr_loss<F: Real>(
    policy: &PolicyHead<F>,
    states: ArrayView2<'_, F>,
    actions: &ActionBatch<F>,
    weights: &[F],
) -> Result<(f64, PolicyGrad<F>)> {
    let n = weights.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let scaled: Vec<F> = weights.iter().map(|&w| -w / F::c(n as f64)).collect();
    let (logps, grad) = policy.log_prob_grad(states, actions, &scaled)?;
    let loss = logps.iter().zip(&scaled).map(|(l, w)| l.f64() * w.f64()).sum();
    Ok((loss, grad))
}

/// `alpha / max(mean |Q|, 1e-6)`.
pub fn td3bc_lambda(q: &[f64], alpha: f64) -> f64 {
    let mean_abs = q.iter().map(|v| v.abs()).sum::<f64>() / q.len().max(1) as f64;
    alpha / mean_abs.max(LAMBDA_DENOM_FLOOR)
}

/// TD3+BC actor objective `-lambda mean Q(s, mu(s)) + mean (mu(s) - a)^2`,
/// the squared error averaged over every action component. `lambda` is
/// computed from the batch (and treated as a constant) unless supplied.
/// Returns `(loss, grad, lambda)`.
pub fn td3bc_actor_loss<F: Real>(
    policy: &PolicyHead<F>,
    critic: &Critic<F>,
    states: ArrayView2<'_, F>,
    actions: ArrayView2<'_, F>,
    alpha: f64,
    lambda: Option<f64>,
) -> Result<(f64, PolicyGrad<F>, f64)> {
    let (mu, tape) = policy.mean_tape(states)?;
    if mu.dim() != actions.dim() {
        return Err(Error::Shape(format!("actions {:?} vs policy output {:?}", actions.dim(), mu.dim())));
    }
    let (q, ctape) = critic.q_tape(states, &ActionBatch::Continuous(mu.clone()))?;
    let q64: Vec<f64> = q.iter().map(|v| v.f64()).collect();
    let lambda = lambda.unwrap_or_else(|| td3bc_lambda(&q64, alpha));
    let n = q.len();
    let elems = mu.len() as f64;
    let dq = vec![F::c(-lambda / n as f64); n];
    let mut scratch = vec![F::zero(); critic.net.num_params()];
    let mut dmean = critic.backward(&ctape, &dq, &mut scratch)?.expect("continuous critic");
    let diff = &mu - &actions;
    let bc: f64 = diff.iter().map(|d| d.f64() * d.f64()).sum::<f64>() / elems;
    dmean.scaled_add(F::c(2.0 / elems), &diff);
    let mut grad = PolicyGrad {
        net: vec![F::zero(); policy.net().num_params()],
        log_std: vec![F::zero(); policy.log_std().len()],
    };
    policy.mean_backward(&tape, dmean.view(), &mut grad.net)?;
    let loss = -lambda * q64.iter().sum::<f64>() / n as f64 + bc;
    Ok((loss, grad, lambda))
}

/// Clipped double-Q targets with target-policy smoothing:
/// `r + gamma (1 - done) min_k Q_k'(s', clip(mu'(s') + clip(eps)))`.
#[allow(clippy::too_many_arguments)]
pub fn td3_targets<F: Real, R: Rng + ?Sized>(
    target_critics: &[Critic<F>],
    target_policy: &PolicyHead<F>,
    batch: &Batch<F>,
    gamma: f64,
    noise: f64,
    noise_clip: f64,
    action_bound: f64,
    rng: &mut R,
) -> Result<Vec<F>> {
    check_finite("reward", &batch.rewards)?;
    let mut a = target_policy.mean(batch.next_states.view())?;
    a.mapv_inplace(|v| {
        let z: f64 = StandardNormal.sample(rng);
        let eps = (noise * z).clamp(-noise_clip, noise_clip);
        F::c((v.f64() + eps).clamp(-action_bound, action_bound))
    });
    let a = ActionBatch::Continuous(a);
    let mut next: Option<Vec<F>> = None;
    for c in target_critics {
        let q = c.q(batch.next_states.view(), &a)?;
        next = Some(match next {
            None => q,
            Some(m) => m.into_iter().zip(q).map(|(x, y)| x.min(y)).collect(),
        });
    }
    let next = next.ok_or_else(|| Error::InvalidArgument("no target critics".into()))?;
    Ok(bellman_targets(batch, &next, F::one(), gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{finite_diff_check, Activation, CategoricalPolicy, GaussianPolicy};
    use crate::offline_rl::critic::CriticKind;
    use ndarray::{array, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn const_critic(value: f64, kind: CriticKind, state_dim: usize) -> Critic<f64> {
        let (inp, out) = match kind {
            CriticKind::Discrete(n) => (state_dim, n),
            CriticKind::Continuous(d) => (state_dim + d, 1),
        };
        Critic {
            kind,
            net: Network::from_layers(
                vec![(Array2::zeros((inp, out)), vec![value; out])],
                vec![],
            )
            .unwrap(),
        }
    }

    fn scalar_batch(r: f64, done: bool) -> Batch<f64> {
        Batch {
            states: array![[0.0]],
            actions: ActionBatch::Discrete(vec![0]),
            rewards: vec![r],
            next_states: array![[0.0]],
            dones: vec![if done { 1.0 } else { 0.0 }],
        }
    }

    fn uniform_policy() -> PolicyHead<f64> {
        PolicyHead::Categorical(CategoricalPolicy {
            logit_net: Network::zeros(&[1, 1], Activation::Tanh).unwrap(),
        })
    }

    #[test]
    fn td_loss_hand_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pi = uniform_policy();
        let q1 = const_critic(1.0, CriticKind::Discrete(1), 1);
        let (loss, _) = td_loss(&q1, &q1, &pi, &scalar_batch(1.0, false), 0.9, 1, &mut rng).unwrap();
        assert!((loss - 0.81).abs() < 1e-12);

        let q0 = const_critic(0.0, CriticKind::Discrete(1), 1);
        let (loss, g) = td_loss(&q0, &q1, &pi, &scalar_batch(0.0, true), 0.9, 1, &mut rng).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));

        let bad = scalar_batch(f64::NAN, false);
        assert!(matches!(
            td_loss(&q1, &q1, &pi, &bad, 0.9, 1, &mut rng),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn expectile_values() {
        assert!((expectile_loss(2.0, 0.7) - 2.8).abs() < 1e-12);
        assert!((expectile_loss(-2.0, 0.7) - 1.2).abs() < 1e-12);
        for u in [-3.0, -0.5, 0.25, 4.0] {
            assert!((expectile_loss(u, 0.5) - 0.5 * u * u).abs() < 1e-15);
        }
        let u = 1.7;
        assert!((expectile_loss(u, 0.9) / expectile_loss(u, 0.1) - 9.0).abs() < 1e-12);
        assert!((expectile_loss(-u, 0.1) / expectile_loss(-u, 0.9) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_arithmetic() {
        assert_eq!(td3bc_lambda(&[1.0, -3.0], 2.5), 1.25);
        assert_eq!(td3bc_lambda(&[0.0, 0.0], 2.5), 2.5e6);
        assert_eq!(td3bc_lambda(&[4.0], 0.0), 0.0);
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, sdim: usize, actions: ActionBatch<f64>) -> Batch<f64> {
        Batch {
            states: Array2::from_shape_fn((n, sdim), |_| rng.random_range(-1.0..1.0)),
            actions,
            rewards: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            next_states: Array2::from_shape_fn((n, sdim), |_| rng.random_range(-1.0..1.0)),
            dones: (0..n).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect(),
        }
    }

    fn check<G: FnMut(&[f64]) -> (f64, Vec<f64>)>(params: &[f64], f: G) {
        let report = finite_diff_check(f, params, 1e-3);
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn critic_regression_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [CriticKind::Discrete(3), CriticKind::Continuous(2)] {
            let critic = Critic::<f64>::new(4, kind, &[6, 5], Activation::Tanh, &mut rng).unwrap();
            let actions = match kind {
                CriticKind::Discrete(_) => ActionBatch::Discrete(vec![0, 2, 1, 1, 0]),
                CriticKind::Continuous(d) => ActionBatch::Continuous(Array2::from_shape_fn((5, d), |_| rng.random_range(-1.0..1.0))),
            };
            let b = random_batch(&mut rng, 5, 4, actions);
            let t1: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t2: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            check(critic.net.params(), |p| {
                let mut c = critic.clone();
                c.net.params_mut().copy_from_slice(p);
                let (l, g) = critic_regression(&c, b.states.view(), &b.actions, &[&t1, &t2]).unwrap();
                (l.iter().sum(), g)
            });
        }
    }

    #[test]
    fn td_loss_gradient_with_fixed_samples() {
        // the target network is separate, so the sampled targets are constants
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let critic = Critic::<f64>::new(3, CriticKind::Continuous(1), &[5], Activation::Tanh, &mut rng).unwrap();
        let target = Critic::<f64>::new(3, CriticKind::Continuous(1), &[5], Activation::Tanh, &mut rng).unwrap();
        let pi = PolicyHead::Gaussian(GaussianPolicy {
            mean_net: Network::new(&[3, 4, 1], Activation::Tanh, &mut rng).unwrap(),
            log_std: vec![-1.0],
            learn_log_std: true,
            action_bound: 1.0,
        });
        let b = random_batch(&mut rng, 6, 3, ActionBatch::Continuous(Array2::from_shape_fn((6, 1), |(i, _)| i as f64 / 6.0)));
        check(critic.net.params(), |p| {
            let mut c = critic.clone();
            c.net.params_mut().copy_from_slice(p);
            td_loss(&c, &target, &pi, &b, 0.99, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
        });
    }

    #[test]
    fn value_loss_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = Network::<f64>::new(&[3, 6, 1], Activation::Tanh, &mut rng).unwrap();
        let s = Array2::from_shape_fn((7, 3), |_| rng.random_range(-1.0..1.0));
        let q: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
        check(v.params(), |p| {
            let mut net = v.clone();
            net.params_mut().copy_from_slice(p);
            value_loss(&net, s.view(), &q, 0.7).unwrap()
        });
        // constant net: loss is the mean expectile of the offsets
        let zero = Network::<f64>::zeros(&[3, 1], Activation::Tanh).unwrap();
        let (l, _) = value_loss(&zero, s.view(), &[2.0, -2.0, 2.0, -2.0, 2.0, -2.0, 0.0], 0.7).unwrap();
        assert!((l - (3.0 * 2.8 + 3.0 * 1.2) / 7.0).abs() < 1e-12);
    }

    #[test]
    fn awr_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
        let w = awr_weights(&[0.1, -0.3, 2.0, 0.0, 1.0], 3.0, 100.0);
        assert_eq!(w[3], 1.0);
        assert_eq!(w[2], 100.0f64.min(6.0f64.exp()));
        let cat = PolicyHead::Categorical(CategoricalPolicy {
            logit_net: Network::<f64>::new(&[2, 5, 3], Activation::Tanh, &mut rng).unwrap(),
        });
        let a = ActionBatch::Discrete(vec![0, 1, 2, 2, 1]);
        check(cat.net().params(), |p| {
            let mut pi = cat.clone();
            pi.net_mut().params_mut().copy_from_slice(p);
            let (l, g) = awr_loss(&pi, s.view(), &a, &w).unwrap();
            (l, g.net)
        });
        let gauss = PolicyHead::Gaussian(GaussianPolicy {
            mean_net: Network::<f64>::new(&[2, 5, 2], Activation::Tanh, &mut rng).unwrap(),
            log_std: vec![-0.5, 0.2],
            learn_log_std: true,
            action_bound: 1.0,
        });
        let a = ActionBatch::Continuous(Array2::from_shape_fn((5, 2), |_| rng.random_range(-0.9..0.9)));
        let n = gauss.net().num_params();
        let mut p0 = gauss.net().params().to_vec();
        p0.extend_from_slice(gauss.log_std());
        check(&p0, |p| {
            let mut pi = gauss.clone();
            pi.net_mut().params_mut().copy_from_slice(&p[..n]);
            if let PolicyHead::Gaussian(g) = &mut pi {
                g.log_std.copy_from_slice(&p[n..]);
            }
            let (l, g) = awr_loss(&pi, s.view(), &a, &w).unwrap();
            (l, g.flat())
        });
    }

    #[test]
    fn td3bc_actor_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let critic = Critic::<f64>::new(3, CriticKind::Continuous(2), &[6], Activation::Tanh, &mut rng).unwrap();
        let pi = PolicyHead::Gaussian(GaussianPolicy {
            mean_net: Network::<f64>::new(&[3, 5, 2], Activation::Tanh, &mut rng).unwrap(),
            log_std: vec![0.1f64.ln(); 2],
            learn_log_std: false,
            action_bound: 1.0,
        });
        let s = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        let a = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
        let (_, _, lambda) = td3bc_actor_loss(&pi, &critic, s.view(), a.view(), 2.5, None).unwrap();
        assert!(lambda > 0.0 && lambda.is_finite());
        check(pi.net().params(), |p| {
            let mut q = pi.clone();
            q.net_mut().params_mut().copy_from_slice(p);
            let (l, g, _) = td3bc_actor_loss(&q, &critic, s.view(), a.view(), 2.5, Some(lambda)).unwrap();
            (l, g.net)
        });
    }

    #[test]
    fn td3bc_zero_alpha_is_behavior_cloning() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let critic = Critic::<f64>::new(2, CriticKind::Continuous(1), &[4], Activation::Tanh, &mut rng).unwrap();
        let mut pi = PolicyHead::Gaussian(GaussianPolicy {
            mean_net: Network::<f64>::new(&[2, 8, 1], Activation::Tanh, &mut rng).unwrap(),
            log_std: vec![0.1f64.ln()],
            learn_log_std: false,
            action_bound: 1.0,
        });
        let s = array![[0.3, -0.4]];
        let a = array![[0.6]];
        let mut prev = f64::INFINITY;
        for _ in 0..2000 {
            let (l, g, lambda) = td3bc_actor_loss(&pi, &critic, s.view(), a.view(), 0.0, None).unwrap();
            assert_eq!(lambda, 0.0);
            assert!(l <= prev + 1e-12, "bc loss rose: {prev} -> {l}");
            prev = l;
            for (p, g) in pi.net_mut().params_mut().iter_mut().zip(&g.net) {
                *p -= 0.05 * g;
            }
        }
        let mu: Array1<f64> = pi.mean(s.view()).unwrap().row(0).to_owned();
        assert!((mu[0] - 0.6).abs() < 1e-3, "{mu}");
    }

    #[test]
    fn td3_targets_take_the_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let lo = const_critic(1.0, CriticKind::Continuous(1), 2);
        let hi = const_critic(5.0, CriticKind::Continuous(1), 2);
        let pi = PolicyHead::Gaussian(GaussianPolicy {
            mean_net: Network::<f64>::zeros(&[2, 1], Activation::Tanh).unwrap(),
            log_std: vec![-2.0],
            learn_log_std: false,
            action_bound: 1.0,
        });
        let b = random_batch(&mut rng, 4, 2, ActionBatch::Continuous(Array2::zeros((4, 1))));
        let y = td3_targets(&[hi, lo], &pi, &b, 0.5, 0.2, 0.5, 1.0, &mut rng).unwrap();
        for i in 0..4 {
            let expect = b.rewards[i] + 0.5 * (1.0 - b.dones[i]) * 1.0;
            assert!((y[i] - expect).abs() < 1e-12);
        }
    }
}
