use super::*;
use crate::foundation::hermite_rule;
use approx::assert_relative_eq;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

fn rule() -> QuadratureRule {
    hermite_rule(20).unwrap()
}

struct VeGraph {
    tape: Tape,
    root_sum: NodeId,
    ve: NodeId,
    mu: NodeId,
    var: NodeId,
    obs: Vec<NodeId>,
    leaves: ParamLeaves,
}

/// Builds sum(VE) over a batch so gradients can be taken.
fn ve_graph(lik: &LikelihoodSpec, store: &ParamStore, n: usize) -> VeGraph {
    let l = lik.latent_dim();
    let mut tape = Tape::new();
    let leaves = ParamLeaves::declare_all(&mut tape, store);
    let mu = tape.leaf(n, l);
    let var = tape.leaf(n, l);
    let obs = lik.declare_observations(&mut tape, n);
    let ve = lik
        .variational_expectations_graph(&mut tape, &leaves, &rule(), mu, var, &obs)
        .unwrap();
    let root_sum = tape.reduce_sum(ve).unwrap();
    VeGraph {
        tape,
        root_sum,
        ve,
        mu,
        var,
        obs,
        leaves,
    }
}

fn eval_ve(
    g: &mut VeGraph,
    lik: &LikelihoodSpec,
    store: &ParamStore,
    mu: &Value,
    var: &Value,
    y: &Value,
) -> Value {
    let mut bindings = g.leaves.bindings(store);
    bindings.push((g.mu, mu.clone()));
    bindings.push((g.var, var.clone()));
    for (leaf, v) in g.obs.iter().zip(lik.encode_observations(y).unwrap()) {
        bindings.push((*leaf, v));
    }
    g.tape.eval_many(&[g.root_sum, g.ve], &bindings).unwrap()[1].clone()
}

#[test]
fn log_prob_reference_values() {
    let store = ParamStore::new();
    assert_relative_eq!(
        LikelihoodSpec::Bernoulli.log_prob(&store, &[0.0], 1.0),
        0.5f64.ln(),
        epsilon = 1e-12
    );
    assert_relative_eq!(
        LikelihoodSpec::Poisson.log_prob(&store, &[0.0], 1.0),
        -1.0,
        epsilon = 1e-12
    );
    let mut store = ParamStore::new();
    let lik = LikelihoodSpec::gaussian(&mut store);
    assert_relative_eq!(
        lik.log_prob(&store, &[1.3], 1.3),
        -0.918_938_533_204_672_7,
        epsilon = 1e-12
    );
}

#[test]
fn multiclass_log_prob_branches() {
    let mut store = ParamStore::new();
    let lik = LikelihoodSpec::multiclass(&mut store, 4).unwrap();
    let hit = lik.log_prob(&store, &[0.1, 2.0, -1.0, 0.3], 1.0);
    assert_relative_eq!(hit, (1.0 - 1e-3f64).ln(), epsilon = 1e-12);
    let miss = lik.log_prob(&store, &[0.1, 2.0, -1.0, 0.3], 0.0);
    assert_relative_eq!(miss, (1e-3f64 / 3.0).ln(), epsilon = 1e-12);
}

#[test]
fn target_validation() {
    let mut store = ParamStore::new();
    assert!(LikelihoodSpec::Bernoulli
        .validate_targets(&Value::col(&[0.0, 1.0, 2.0]))
        .is_err());
    assert!(LikelihoodSpec::Poisson
        .validate_targets(&Value::col(&[0.0, 1.5]))
        .is_err());
    let mc = LikelihoodSpec::multiclass(&mut store, 3).unwrap();
    assert!(mc.validate_targets(&Value::col(&[0.0, 2.0])).is_ok());
    assert!(mc.validate_targets(&Value::col(&[3.0])).is_err());
}

#[test]
fn gaussian_ve_closed_form() {
    let mut store = ParamStore::new();
    let lik = LikelihoodSpec::gaussian(&mut store);
    let mut g = ve_graph(&lik, &store, 1);
    let v = eval_ve(
        &mut g,
        &lik,
        &store,
        &Value::scalar(0.0),
        &Value::scalar(1.0),
        &Value::scalar(0.0),
    );
    assert_relative_eq!(v.as_scalar(), -1.418_938_533_204_672_7, epsilon = 1e-12);
}

#[test]
fn ve_degenerate_variance_matches_log_prob() {
    let mut store = ParamStore::new();
    let liks = vec![
        LikelihoodSpec::gaussian(&mut store),
        LikelihoodSpec::Bernoulli,
        LikelihoodSpec::Poisson,
        LikelihoodSpec::multiclass(&mut store, 3).unwrap(),
    ];
    for lik in liks {
        let l = lik.latent_dim();
        let n = 4;
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mu = Value::from_fn(n, l, |_, _| rng.random_range(-1.5..1.5));
        let y = match &lik {
            LikelihoodSpec::Gaussian { .. } => Value::col(&[0.3, -0.7, 1.1, 0.0]),
            LikelihoodSpec::Bernoulli => Value::col(&[0.0, 1.0, 1.0, 0.0]),
            LikelihoodSpec::Poisson => Value::col(&[0.0, 2.0, 1.0, 4.0]),
            LikelihoodSpec::Multiclass { .. } => Value::col(&[0.0, 2.0, 1.0, 1.0]),
        };
        let mut g = ve_graph(&lik, &store, n);
        // v = 0 exactly
        let at_zero = eval_ve(&mut g, &lik, &store, &mu, &Value::zeros(n, l), &y);
        // v = 1e-10
        let near_zero = eval_ve(
            &mut g,
            &lik,
            &store,
            &mu,
            &Value::from_fn(n, l, |_, _| 1e-10),
            &y,
        );
        for i in 0..n {
            let f: Vec<f64> = (0..l).map(|j| mu[(i, j)]).collect();
            let lp = lik.log_prob(&store, &f, y[(i, 0)]);
            assert!(
                (at_zero[(i, 0)] - lp).abs() <= 1e-9,
                "{} row {i}: {} vs {}",
                lik.name(),
                at_zero[(i, 0)],
                lp
            );
            assert!(
                (near_zero[(i, 0)] - lp).abs() <= 1e-6,
                "{} row {i} at v=1e-10",
                lik.name()
            );
        }
    }
}

#[test]
fn bernoulli_ve_matches_monte_carlo() {
    let store = ParamStore::new();
    let lik = LikelihoodSpec::Bernoulli;
    let (mu, var, y) = (0.0, 4.0, 1.0);
    let mut g = ve_graph(&lik, &store, 1);
    let quad = eval_ve(
        &mut g,
        &lik,
        &store,
        &Value::scalar(mu),
        &Value::scalar(var),
        &Value::scalar(y),
    )
    .as_scalar();

    let mut rng = ChaCha12Rng::seed_from_u64(1234);
    let nsamp = 200_000;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..nsamp {
        let z: f64 = rng.sample(StandardNormal);
        let f = mu + var.sqrt() * z;
        let lp = special::log_normcdf(f);
        sum += lp;
        sumsq += lp * lp;
    }
    let mc_mean = sum / nsamp as f64;
    let mc_se = ((sumsq / nsamp as f64 - mc_mean * mc_mean) / nsamp as f64).sqrt();
    assert!(
        (quad - mc_mean).abs() <= 3.0 * mc_se,
        "quad={quad} mc={mc_mean} se={mc_se}"
    );
}

#[test]
fn poisson_ve_matches_closed_form() {
    // E[y f - e^f - log y!] = y mu - e^{mu + v/2} - log y!
    let store = ParamStore::new();
    let lik = LikelihoodSpec::Poisson;
    let (mu, var, y) = (0.4, 0.6, 3.0);
    let mut g = ve_graph(&lik, &store, 1);
    let quad = eval_ve(
        &mut g,
        &lik,
        &store,
        &Value::scalar(mu),
        &Value::scalar(var),
        &Value::scalar(y),
    )
    .as_scalar();
    let exact = y * mu - (mu + var / 2.0).exp() - special::ln_gamma(y + 1.0);
    assert_relative_eq!(quad, exact, epsilon = 1e-9);
}

#[test]
fn gaussian_ve_monotone_in_variance() {
    let mut store = ParamStore::new();
    let lik = LikelihoodSpec::gaussian(&mut store);
    let mut g = ve_graph(&lik, &store, 1);
    let mut last = f64::INFINITY;
    for v in [0.0, 0.1, 0.5, 2.0, 10.0] {
        let ve = eval_ve(
            &mut g,
            &lik,
            &store,
            &Value::scalar(0.2),
            &Value::scalar(v),
            &Value::scalar(0.0),
        )
        .as_scalar();
        assert!(ve <= last + 1e-12, "v={v}");
        last = ve;
    }
}

#[test]
fn ve_gradients_match_finite_differences() {
    let mut store = ParamStore::new();
    let liks = vec![
        LikelihoodSpec::gaussian(&mut store),
        LikelihoodSpec::Bernoulli,
        LikelihoodSpec::Poisson,
        LikelihoodSpec::multiclass(&mut store, 3).unwrap(),
    ];
    for lik in liks {
        let l = lik.latent_dim();
        let n = 3;
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mu0 = Value::from_fn(n, l, |_, _| rng.random_range(-1.0..1.0));
        let var0 = Value::from_fn(n, l, |_, _| rng.random_range(0.2..1.5));
        let y = match &lik {
            LikelihoodSpec::Gaussian { .. } => Value::col(&[0.3, -0.7, 1.1]),
            LikelihoodSpec::Bernoulli => Value::col(&[0.0, 1.0, 1.0]),
            LikelihoodSpec::Poisson => Value::col(&[0.0, 2.0, 1.0]),
            LikelihoodSpec::Multiclass { .. } => Value::col(&[0.0, 2.0, 1.0]),
        };
        let mut g = ve_graph(&lik, &store, n);
        let eval_sum = |g: &mut VeGraph, mu: &Value, var: &Value| -> f64 {
            let mut bindings = g.leaves.bindings(&store);
            bindings.push((g.mu, mu.clone()));
            bindings.push((g.var, var.clone()));
            for (leaf, v) in g.obs.iter().zip(lik.encode_observations(&y).unwrap()) {
                bindings.push((*leaf, v));
            }
            g.tape.eval(g.root_sum, &bindings).unwrap().as_scalar()
        };
        eval_sum(&mut g, &mu0, &var0);
        let grads = g.tape.grad(g.root_sum, &[g.mu, g.var]).unwrap();
        let h = 1e-6;
        for (which, base) in [(0usize, mu0.clone()), (1usize, var0.clone())] {
            for i in 0..n {
                for j in 0..l {
                    let mut p = base.clone();
                    let mut m = base.clone();
                    p[(i, j)] += h;
                    m[(i, j)] -= h;
                    let (fp, fm) = if which == 0 {
                        (eval_sum(&mut g, &p, &var0), eval_sum(&mut g, &m, &var0))
                    } else {
                        (eval_sum(&mut g, &mu0, &p), eval_sum(&mut g, &mu0, &m))
                    };
                    let fd = (fp - fm) / (2.0 * h);
                    let analytic = grads[which][(i, j)];
                    let denom = fd.abs().max(1e-6);
                    assert!(
                        (fd - analytic).abs() / denom <= 1e-5,
                        "{} input {which} entry ({i},{j}): fd={fd} analytic={analytic}",
                        lik.name()
                    );
                }
            }
        }
        eval_sum(&mut g, &mu0, &var0);
    }
}

#[test]
fn predict_reference_values() {
    let mut store = ParamStore::new();
    let lik = LikelihoodSpec::gaussian(&mut store);
    let noise = lik.param_ids()[0];
    store.set_constrained(noise, &Value::scalar(0.25)).unwrap();
    let (m, v) = lik
        .predict_mean_var(&store, &Value::scalar(1.0), &Value::scalar(0.5))
        .unwrap();
    assert_relative_eq!(m.as_scalar(), 1.0);
    assert_relative_eq!(v.as_scalar(), 0.75, epsilon = 1e-12);

    let (m, _) = LikelihoodSpec::Bernoulli
        .predict_mean_var(&store, &Value::scalar(0.0), &Value::scalar(2.7))
        .unwrap();
    assert_relative_eq!(m.as_scalar(), 0.5, epsilon = 1e-12);

    let (m, v) = LikelihoodSpec::Poisson
        .predict_mean_var(&store, &Value::scalar(0.0), &Value::scalar(0.0))
        .unwrap();
    assert_relative_eq!(m.as_scalar(), 1.0, epsilon = 1e-12);
    assert_relative_eq!(v.as_scalar(), 1.0, epsilon = 1e-12);
}

#[test]
fn multiclass_probabilities_sum_to_one() {
    let mut store = ParamStore::new();
    let lik = LikelihoodSpec::multiclass(&mut store, 4).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(17);
    let t = 6;
    let mu = Value::from_fn(t, 4, |_, _| rng.random_range(-2.0..2.0));
    let var = Value::from_fn(t, 4, |_, _| rng.random_range(0.1..2.0));
    let (p, _) = lik.predict_mean_var(&store, &mu, &var).unwrap();
    for i in 0..t {
        let s: f64 = (0..4).map(|c| p[(i, c)]).sum();
        assert!((s - 1.0).abs() <= 1e-8, "row {i}: sum={s}");
    }
}

#[test]
fn parse_likelihoods() {
    let mut store = ParamStore::new();
    assert!(LikelihoodSpec::parse("gaussian", &mut store).unwrap().is_gaussian());
    assert_eq!(
        LikelihoodSpec::parse("multiclass:10", &mut store)
            .unwrap()
            .latent_dim(),
        10
    );
    assert!(LikelihoodSpec::parse("multiclass:1", &mut store).is_err());
    assert!(LikelihoodSpec::parse("banana", &mut store).is_err());
}
