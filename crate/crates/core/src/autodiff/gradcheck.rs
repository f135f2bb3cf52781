//! Central finite-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamStore};
use super::tape::Tape;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient returned by `loss_fn` with central
/// differences at `probes` randomly chosen trainable coordinates.
pub fn grad_check<F>(
    params: &ParamStore,
    mut loss_fn: F,
    eps: f64,
    probes: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(f64, Gradients)>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::OutOfRange {
            what: "finite-difference step",
            detail: format!("{eps} not in [1e-6, 1e-3]"),
        });
    }
    let (base, grads) = loss_fn(params)?;
    let (again, _) = loss_fn(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Nondeterministic {
            first: base,
            second: again,
        });
    }

    let coords: Vec<(String, usize)> = params
        .iter()
        .filter(|p| p.trainable)
        .flat_map(|p| (0..p.tensor.len()).map(move |i| (p.name.clone(), i)))
        .collect();
    if coords.is_empty() {
        return Err(Error::Empty("no trainable coordinates to probe"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        probes: Vec::with_capacity(probes),
    };
    for _ in 0..probes {
        let (name, index) = coords[rng.random_range(0..coords.len())].clone();
        let analytic = grads.get(&name).map_or(0.0, |g| g.data()[index]);
        let orig = work.tensor(&name)?.data()[index];

        work.get_mut(&name)?.tensor.data_mut()[index] = orig + eps;
        let (plus, _) = loss_fn(&work)?;
        work.get_mut(&name)?.tensor.data_mut()[index] = orig - eps;
        let (minus, _) = loss_fn(&work)?;
        work.get_mut(&name)?.tensor.data_mut()[index] = orig;

        let numeric = (plus - minus) / (2.0 * eps);
        let rel_error = relative_error(analytic, numeric);
        report.max_rel_error = report.max_rel_error.max(rel_error);
        report.probes.push(Probe {
            param: name,
            index,
            analytic,
            numeric,
            rel_error,
        });
    }
    Ok(report)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
    Tensor::new(shape.to_vec(), data).expect("consistent shape")
}

/// Builds a scalar loss by projecting `out` onto a fixed random tensor, so
/// every output coordinate contributes a distinct weight.
fn project(tape: &mut Tape, out: super::tape::Var, rng: &mut ChaCha8Rng) -> Result<super::tape::Var> {
    let shape = tape.value(out).shape().to_vec();
    let w = tape.constant(random_tensor(rng, &shape, 1.0))?;
    let prod = tape.gated_activation(out, w)?;
    tape.sum(prod)
}

type OpBuilder = fn(&mut Tape, &ParamStore, &mut ChaCha8Rng) -> Result<super::tape::Var>;

/// Gradient checks of every differentiable op in isolation. Returns one
/// `(op name, report)` pair per op.
pub fn op_suite(eps: f64, probes: usize, seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    p.insert("x", random_tensor(&mut rng, &[3, 12], 1.0), true)?;
    p.insert("y", random_tensor(&mut rng, &[3, 12], 1.0), true)?;
    p.insert("k", random_tensor(&mut rng, &[4, 3, 2], 0.6), true)?;
    p.insert("ks", random_tensor(&mut rng, &[4, 3, 3], 0.6), true)?;
    p.insert("kt", random_tensor(&mut rng, &[3, 2, 8], 0.6), true)?;
    p.insert("b", random_tensor(&mut rng, &[3], 1.0), true)?;
    p.insert("m", random_tensor(&mut rng, &[5, 3], 1.0), true)?;
    p.insert("v", random_tensor(&mut rng, &[3], 1.0), true)?;
    p.insert("table", random_tensor(&mut rng, &[4, 3], 1.0), true)?;
    p.insert("cols", random_tensor(&mut rng, &[3, 6], 1.0), true)?;
    p.insert("logits", random_tensor(&mut rng, &[6, 5], 2.0), true)?;

    let cases: Vec<(&'static str, &[&str], OpBuilder)> = vec![
        ("causal_conv1d", &["x", "k"], |t, p, r| {
            let (x, k) = (t.param(p, "x")?, t.param(p, "k")?);
            let o = t.causal_conv1d(x, k, 3)?;
            project(t, o, r)
        }),
        ("strided_conv1d", &["x", "ks"], |t, p, r| {
            let (x, k) = (t.param(p, "x")?, t.param(p, "ks")?);
            let o = t.strided_conv1d(x, k, 2)?;
            project(t, o, r)
        }),
        ("transposed_conv1d", &["x", "kt"], |t, p, r| {
            let (x, k) = (t.param(p, "x")?, t.param(p, "kt")?);
            let o = t.transposed_conv1d(x, k, 4)?;
            project(t, o, r)
        }),
        ("gated_activation", &["x", "y"], |t, p, r| {
            let (x, y) = (t.param(p, "x")?, t.param(p, "y")?);
            let o = t.gated_activation(x, y)?;
            project(t, o, r)
        }),
        ("add", &["x", "y"], |t, p, r| {
            let (x, y) = (t.param(p, "x")?, t.param(p, "y")?);
            let o = t.add(x, y)?;
            project(t, o, r)
        }),
        ("add_bias", &["x", "b"], |t, p, r| {
            let (x, b) = (t.param(p, "x")?, t.param(p, "b")?);
            let o = t.add_bias(x, b)?;
            project(t, o, r)
        }),
        ("scale", &["x"], |t, p, r| {
            let x = t.param(p, "x")?;
            let o = t.scale(x, -1.7)?;
            project(t, o, r)
        }),
        ("relu", &["x"], |t, p, r| {
            let x = t.param(p, "x")?;
            let o = t.relu(x)?;
            project(t, o, r)
        }),
        ("mean_time", &["x"], |t, p, r| {
            let x = t.param(p, "x")?;
            let o = t.mean_time(x)?;
            project(t, o, r)
        }),
        ("matvec", &["m", "v"], |t, p, r| {
            let (m, v) = (t.param(p, "m")?, t.param(p, "v")?);
            let o = t.matvec(m, v)?;
            project(t, o, r)
        }),
        ("embedding_lookup", &["table"], |t, p, r| {
            let table = t.param(p, "table")?;
            let a = t.embedding_lookup(table, 2)?;
            let b = t.embedding_lookup(table, 2)?;
            let c = t.embedding_lookup(table, 0)?;
            let ab = t.gated_activation(a, b)?;
            let o = t.add(ab, c)?;
            project(t, o, r)
        }),
        ("gather_columns", &["cols"], |t, p, r| {
            let cols = t.param(p, "cols")?;
            let o = t.gather_columns(cols, &[0, 5, 5, 2, 1, 0, 3])?;
            project(t, o, r)
        }),
        ("softmax_cross_entropy", &["logits"], |t, p, _| {
            let z = t.param(p, "logits")?;
            t.softmax_cross_entropy(z, &[0, 5, 2, 2, 4])
        }),
        ("l2_normalize", &["v"], |t, p, r| {
            let v = t.param(p, "v")?;
            let o = t.l2_normalize(v)?;
            project(t, o, r)
        }),
        ("slice_time", &["x"], |t, p, r| {
            let x = t.param(p, "x")?;
            let o = t.slice_time(x, 3, 7)?;
            project(t, o, r)
        }),
        ("reshape", &["v"], |t, p, r| {
            let v = t.param(p, "v")?;
            let o = t.reshape(v, &[3, 1])?;
            project(t, o, r)
        }),
    ];

    let mut out = Vec::with_capacity(cases.len());
    for (i, (name, inputs, build)) in cases.into_iter().enumerate() {
        // probe only the inputs of this op
        let mut store = p.clone();
        for q in store.iter_mut() {
            q.trainable = inputs.contains(&q.name.as_str());
        }
        let proj_seed = seed.wrapping_add(1000 + i as u64);
        let report = grad_check(
            &store,
            |params| {
                let mut rng = ChaCha8Rng::seed_from_u64(proj_seed);
                let mut tape = Tape::new();
                let loss = build(&mut tape, params, &mut rng)?;
                let g = tape.backward(loss)?;
                Ok((tape.scalar(loss), g))
            },
            eps,
            probes,
            seed.wrapping_add(i as u64),
        )?;
        out.push((name, report));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `||p||^2` recorded as `p^T p` with `p` stored as a `1 x n` matrix.
    fn quadratic(params: &ParamStore) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new();
        let p = tape.param(params, "p")?;
        let loss = tape.matvec(p, p)?;
        let g = tape.backward(loss)?;
        Ok((tape.scalar(loss), g))
    }

    #[test]
    fn quadratic_loss_is_exact_up_to_rounding() {
        let mut p = ParamStore::new();
        p.insert("p", Tensor::new(vec![1, 5], vec![0.3, -1.2, 2.5, 0.01, -0.7]).unwrap(), true)
            .unwrap();
        let r = grad_check(&p, quadratic, 1e-4, 20, 1).unwrap();
        assert!(r.max_rel_error <= 1e-7, "{}", r.max_rel_error);
    }

    #[test]
    fn wrong_gradient_is_rejected() {
        let mut p = ParamStore::new();
        p.insert("p", Tensor::new(vec![1, 4], vec![0.3, -1.2, 2.5, 0.8]).unwrap(), true)
            .unwrap();
        let doubled = |params: &ParamStore| {
            let (l, mut g) = quadratic(params)?;
            g.scale(2.0);
            Ok((l, g))
        };
        let r = grad_check(&p, doubled, 1e-4, 10, 2).unwrap();
        // |2g - g| / max(|2g|, |g|) = 1/2
        assert!((r.max_rel_error - 0.5).abs() < 1e-6, "{}", r.max_rel_error);
        assert!(!r.passes(1e-4));
    }

    #[test]
    fn nondeterministic_loss_detected() {
        let mut p = ParamStore::new();
        p.insert("p", Tensor::vector(vec![1.0]), true).unwrap();
        let mut calls = 0.0;
        let f = |_: &ParamStore| {
            calls += 1.0;
            Ok((calls, Gradients::new()))
        };
        assert!(matches!(grad_check(&p, f, 1e-4, 1, 0), Err(Error::Nondeterministic { .. })));
    }

    #[test]
    fn eps_outside_range_rejected() {
        let mut p = ParamStore::new();
        p.insert("p", Tensor::vector(vec![1.0]), true).unwrap();
        assert!(grad_check(&p, quadratic, 1e-2, 1, 0).is_err());
    }

    #[test]
    fn every_op_passes_gradient_check() {
        for (name, report) in op_suite(1e-4, 20, 7).unwrap() {
            assert!(report.passes(1e-4), "{name}: {}", report.max_rel_error);
        }
    }

    #[test]
    fn gated_composite_within_tolerance() {
        let suite = op_suite(1e-4, 30, 11).unwrap();
        let (_, gated) = suite.iter().find(|(n, _)| *n == "gated_activation").unwrap();
        assert!(gated.max_rel_error <= 1e-5);
    }
}
