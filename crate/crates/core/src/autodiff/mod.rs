//! Reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Tape`] records a forward computation as an append-only list of
//! primitive ops. [`Tape::backward`] sweeps it once in reverse and adds the
//! gradient of a scalar root into the owning [`ParamStore`]. The store also
//! carries Adam state and a versioned text checkpoint format.
//!
//! ```
//! use ctes::autodiff::{ParamStore, Tape, Tensor};
//!
//! let mut store = ParamStore::new();
//! let x = store.add("x", Tensor::scalar(3.0)).unwrap();
//! let mut tape = Tape::new();
//! let xv = tape.param(&store, x);
//! let y = tape.mul(xv, xv).unwrap();
//! tape.backward(y, &mut store).unwrap();
//! assert_eq!(store.grad(x).item(), 6.0);
//! ```

mod params;
mod tape;
mod tensor;

pub use params::{Adam, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    #[error("domain error in `{op}`: input {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("index {index} out of range for `{op}` (len {len})")]
    Index { op: &'static str, index: usize, len: usize },
    #[error("`{op}` needs at least one input")]
    Empty { op: &'static str },
    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: (usize, usize) },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Compares autodiff gradients of `f` against central differences
/// `(f(θ + h e_i) - f(θ - h e_i)) / 2h` for every scalar in `store`.
///
/// Returns the largest element-wise relative error, using
/// `max(|a|, |b|, 1e-8)` as the denominator. Gradients in `store` are zero
/// on return and all parameter values are restored.
pub fn grad_check<E, F>(store: &mut ParamStore, step: f64, mut f: F) -> Result<f64, E>
where
    E: From<AutodiffError>,
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var, E>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    store.zero_grad();
    {
        let mut tape = Tape::new();
        let root = f(&mut tape, store)?;
        if !tape.scalar(root).is_finite() {
            return Err(AutodiffError::NonFinite("objective value".into()).into());
        }
        tape.backward(root, store)?;
    }
    let analytic: Vec<Tensor> = store.ids().map(|id| store.grad(id).clone()).collect();
    store.zero_grad();

    let mut eval = |store: &ParamStore| -> Result<f64, E> {
        let mut tape = Tape::new();
        let root = f(&mut tape, store)?;
        let v = tape.scalar(root);
        if !v.is_finite() {
            return Err(AutodiffError::NonFinite(format!("objective value {v}")).into());
        }
        Ok(v)
    };


    let mut worst = 0.0f64;
    let ids: Vec<ParamId> = store.ids().collect();
    for (id, grad) in ids.into_iter().zip(&analytic) {
        for i in 0..grad.len() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + step;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - step;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * step);
            let a = grad.data()[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type R<T> = Result<T, AutodiffError>;

    fn scalar_store(x: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::scalar(x)).unwrap();
        (s, id)
    }

    fn derivative(x: f64, f: impl Fn(&mut Tape, Var) -> R<Var>) -> f64 {
        let (mut s, id) = scalar_store(x);
        let mut t = Tape::new();
        let v = t.param(&s, id);
        let y = f(&mut t, v).unwrap();
        t.backward(y, &mut s).unwrap();
        s.grad(id).item()
    }

    #[test]
    fn scalar_derivatives() {
        assert_eq!(derivative(3.0, |t, x| t.mul(x, x)), 6.0);
        assert_eq!(derivative(2.0, |t, x| t.log(x)), 0.5);
        assert_eq!(derivative(0.0, |t, x| Ok(t.softplus(x))), 0.5);
    }

    #[test]
    fn sum_of_parameters_has_unit_gradient() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        let b = s.add("b", Tensor::scalar(4.0)).unwrap();
        let unused = s.add("unused", Tensor::scalar(5.0)).unwrap();
        let mut t = Tape::new();
        let av = t.param(&s, a);
        let bv = t.param(&s, b);
        let sa = t.sum(av);
        let root = t.add(sa, bv).unwrap();
        t.backward(root, &mut s).unwrap();
        assert_eq!(s.grad(a).data(), &[1.0, 1.0, 1.0]);
        assert_eq!(s.grad(b).item(), 1.0);
        assert_eq!(s.grad(unused).item(), 0.0);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let (mut s, id) = scalar_store(3.0);
        let mut t = Tape::new();
        let x = t.param(&s, id);
        let y = t.mul(x, x).unwrap();
        t.backward(y, &mut s).unwrap();
        t.backward(y, &mut s).unwrap();
        assert_eq!(s.grad(id).item(), 12.0);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut s = ParamStore::new();
        let id = s.add("v", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut t = Tape::new();
        let v = t.param(&s, id);
        assert!(matches!(t.backward(v, &mut s), Err(AutodiffError::NonScalarRoot { .. })));
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut t = Tape::new();
        let m = t.constant(Tensor::zeros(2, 3));
        let v = t.constant_vector(vec![1.0, 2.0]);
        let err = t.matvec(m, v).unwrap_err();
        assert_eq!(err, AutodiffError::Shape { op: "matvec", lhs: (2, 3), rhs: (2, 1) });
        assert!(err.to_string().contains("matvec"));
        let a = t.constant_vector(vec![1.0, 2.0, 3.0]);
        assert!(t.add(a, v).unwrap_err().to_string().contains("add"));
    }

    #[test]
    fn log_of_non_positive_is_domain_error() {
        let mut t = Tape::new();
        let x = t.constant_vector(vec![1.0, 0.0]);
        assert!(matches!(t.log(x), Err(AutodiffError::Domain { op: "log", .. })));
    }

    #[test]
    fn logsumexp_is_shift_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let xs: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
            let c = rng.random_range(-700.0..700.0);
            let mut t = Tape::new();
            let a = t.constant_vector(xs.clone());
            let b = t.constant_vector(xs.iter().map(|x| x + c).collect());
            let la = t.logsumexp(a);
            let lb = t.logsumexp(b);
            let diff = (t.scalar(lb) - c) - t.scalar(la);
            assert!(diff.abs() <= 1e-12, "shift {c}: diff {diff}");
        }
    }

    #[test]
    fn logsumexp_matches_naive_for_moderate_inputs() {
        let mut t = Tape::new();
        let a = t.constant_vector(vec![0.1, -0.4, 2.0]);
        let l = t.logsumexp(a);
        let naive = (0.1f64.exp() + (-0.4f64).exp() + 2.0f64.exp()).ln();
        assert!((t.scalar(l) - naive).abs() < 1e-14);
    }

    fn random_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect())
    }

    /// Projects any node to a scalar with fixed random weights so each
    /// primitive is checked through every output element.
    fn project(t: &mut Tape, v: Var, rng: &mut ChaCha8Rng) -> R<Var> {
        let (r, c) = t.value(v).shape();
        let w = t.constant(random_tensor(rng, r, c, -1.0, 1.0));
        t.dot(v, w)
    }

    fn check_primitive(name: &str, build: impl Fn(&mut Tape, &[Var]) -> R<Var>, shapes: &[(usize, usize)], positive: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
        for trial in 0..5 {
            let mut s = ParamStore::new();
            let (lo, hi) = if positive { (0.5, 2.0) } else { (-2.0, 2.0) };
            for (i, &(r, c)) in shapes.iter().enumerate() {
                s.add(format!("in{i}"), random_tensor(&mut rng, r, c, lo, hi)).unwrap();
            }
            let seed = rng.random::<u64>();
            let err = grad_check(&mut s, 1e-5, |t, s| {
                let mut proj_rng = ChaCha8Rng::seed_from_u64(seed);
                let ins: Vec<Var> = s.ids().map(|id| t.param(s, id)).collect();
                let out = build(t, &ins)?;
                project(t, out, &mut proj_rng)
            })
            .unwrap();
            assert!(err < 1e-6, "{name} trial {trial}: max relative error {err}");
        }
    }

    #[test]
    fn every_primitive_passes_gradient_check() {
        check_primitive("add", |t, v| t.add(v[0], v[1]), &[(3, 2), (3, 2)], false);
        check_primitive("add_broadcast", |t, v| t.add(v[0], v[1]), &[(4, 1), (1, 1)], false);
        check_primitive("sub", |t, v| t.sub(v[0], v[1]), &[(3, 1), (1, 1)], false);
        check_primitive("mul", |t, v| t.mul(v[0], v[1]), &[(3, 3), (3, 3)], false);
        check_primitive("mul_broadcast", |t, v| t.mul(v[0], v[1]), &[(1, 1), (5, 1)], false);
        check_primitive("div", |t, v| t.div(v[0], v[1]), &[(4, 1), (4, 1)], true);
        check_primitive("scale", |t, v| Ok(t.scale(v[0], -1.7)), &[(3, 1)], false);
        check_primitive("offset", |t, v| Ok(t.offset(v[0], 0.3)), &[(3, 1)], false);
        check_primitive("matvec", |t, v| t.matvec(v[0], v[1]), &[(3, 4), (4, 1)], false);
        check_primitive("matmul", |t, v| t.matmul(v[0], v[1]), &[(2, 3), (3, 4)], false);
        check_primitive("tanh", |t, v| Ok(t.tanh(v[0])), &[(5, 1)], false);
        check_primitive("sigmoid", |t, v| Ok(t.sigmoid(v[0])), &[(5, 1)], false);
        check_primitive("exp", |t, v| Ok(t.exp(v[0])), &[(5, 1)], false);
        check_primitive("log", |t, v| t.log(v[0]), &[(5, 1)], true);
        check_primitive("softplus", |t, v| Ok(t.softplus(v[0])), &[(5, 1)], false);
        check_primitive("sqrt", |t, v| t.sqrt(v[0]), &[(5, 1)], true);
        check_primitive("logsumexp", |t, v| Ok(t.logsumexp(v[0])), &[(6, 1)], false);
        check_primitive("sum", |t, v| Ok(t.sum(v[0])), &[(2, 3)], false);
        check_primitive("concat", |t, v| t.concat(&[v[0], v[1], v[0]]), &[(2, 1), (3, 1)], false);
        check_primitive("pick", |t, v| t.pick(v[0], 2), &[(4, 1)], false);
        check_primitive("row", |t, v| t.row(v[0], 1), &[(3, 4)], false);
    }

    /// Random 2-layer tanh network: 2 -> 4 -> 1, 17 parameters.
    fn two_layer(t: &mut Tape, s: &ParamStore, x: &[f64]) -> R<Var> {
        let w1 = t.param(s, s.id("w1").unwrap());
        let b1 = t.param(s, s.id("b1").unwrap());
        let w2 = t.param(s, s.id("w2").unwrap());
        let b2 = t.param(s, s.id("b2").unwrap());
        let xv = t.constant_vector(x.to_vec());
        let h = t.affine(w1, xv, b1)?;
        let h = t.tanh(h);
        let o = t.affine(w2, h, b2)?;
        let o = t.tanh(o);
        t.pick(o, 0)
    }

    #[test]
    fn two_layer_network_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = ParamStore::new();
            s.add_uniform("w1", 4, 2, 1.0, &mut rng).unwrap();
            s.add_uniform("b1", 4, 1, 1.0, &mut rng).unwrap();
            s.add_uniform("w2", 1, 4, 1.0, &mut rng).unwrap();
            s.add_uniform("b2", 1, 1, 1.0, &mut rng).unwrap();
            assert_eq!(s.numel(), 17);
            let x = [0.3, -0.8];
            let err = grad_check(&mut s, 1e-5, |t, s| two_layer(t, s, &x)).unwrap();
            assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        }
    }

    #[test]
    fn quadratic_gradient_check_is_exact() {
        let mut s = ParamStore::new();
        s.add("theta", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let err = grad_check(&mut s, 1e-5, |t, s| {
            let th = t.param(s, s.id("theta").unwrap());
            t.dot(th, th)
        })
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let (mut s, _) = scalar_store(1.0);
        let r: R<f64> = grad_check(&mut s, 1e-5, |t, s| {
            let x = t.param(s, s.id("x").unwrap());
            let big = t.scale(x, 1e308);
            let big = t.scale(big, 10.0);
            Ok(big)
        });
        assert!(matches!(r, Err(AutodiffError::NonFinite(_))));
    }

    #[test]
    fn backward_is_linear_in_the_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let mut s = ParamStore::new();
            let w = s.add_uniform("w", 3, 3, 1.0, &mut rng).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |t: &mut Tape, s: &ParamStore, inp: &[f64], use_tanh: bool| -> R<Var> {
                let wv = t.param(s, w);
                let iv = t.constant_vector(inp.to_vec());
                let h = t.matvec(wv, iv)?;
                let h = if use_tanh { t.tanh(h) } else { t.sigmoid(h) };
                Ok(t.sum(h))
            };
            let mut t = Tape::new();
            let l1 = loss(&mut t, &s, &x, true).unwrap();
            let l2 = loss(&mut t, &s, &y, false).unwrap();
            let total = t.add(l1, l2).unwrap();
            t.backward(total, &mut s).unwrap();
            let joint = s.grad(w).clone();
            s.zero_grad();
            t.backward(l1, &mut s).unwrap();
            t.backward(l2, &mut s).unwrap();
            for (a, b) in joint.data().iter().zip(s.grad(w).data()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }
}
