//! Builds a small logistic-regression loss on the tape, trains it with Adam
//! and checks its gradients against central differences.

use ctes::autodiff::{grad_check, Adam, AutodiffError, ParamStore, Tape, Tensor, Var};
use ctes::rng::rng;

fn loss(tape: &mut Tape, store: &ParamStore, data: &[(Vec<f64>, f64)]) -> Result<Var, AutodiffError> {
    let w = tape.param(store, store.id("w").unwrap());
    let b = tape.param(store, store.id("b").unwrap());
    let mut total = tape.constant_scalar(0.0);
    for (x, y) in data {
        let x = tape.constant_vector(x.clone());
        let z = tape.dot(w, x)?;
        let z = tape.add(z, b)?;
        // binary cross-entropy: softplus(z) - y z
        let sp = tape.softplus(z);
        let yz = tape.scale(z, *y);
        let l = tape.sub(sp, yz)?;
        total = tape.add(total, l)?;
    }
    Ok(tape.scale(total, 1.0 / data.len() as f64))
}

fn main() -> Result<(), AutodiffError> {
    let mut r = rng(0);
    let data: Vec<(Vec<f64>, f64)> = (0..200)
        .map(|i| {
            let x = vec![(i % 20) as f64 / 10.0 - 1.0, (i % 7) as f64 / 3.5 - 1.0];
            let y = if 2.0 * x[0] - x[1] > 0.2 { 1.0 } else { 0.0 };
            (x, y)
        })
        .collect();

    let mut store = ParamStore::new();
    store.add_uniform("w", 2, 1, 0.1, &mut r)?;
    store.add("b", Tensor::scalar(0.0))?;

    let err = grad_check(&mut store, 1e-5, |t, s| loss(t, s, &data))?;
    println!("max relative gradient error: {err:.2e}");

    let adam = Adam { lr: 0.1, ..Default::default() };
    for step in 0..=200 {
        let mut tape = Tape::new();
        let l = loss(&mut tape, &store, &data)?;
        if step % 50 == 0 {
            println!("step {step:3}  loss {:.4}", tape.scalar(l));
        }
        store.zero_grad();
        tape.backward(l, &mut store)?;
        store.adam_step(&adam)?;
    }
    println!("w = {:?}, b = {:.3}", store.value(store.id("w").unwrap()).data(), store.value(store.id("b").unwrap()).item());
    Ok(())
}
