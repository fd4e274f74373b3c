//! Checks reverse-mode gradients of a small convolutional graph against
//! central differences, then takes a few Adam steps on it.

use ensemble_downscaling::numerics::{adam_step, grad_check, AdamConfig, AdamState, Tape, Tensor, Var};
use ensemble_downscaling::rng::{normals, stream};

fn loss(tape: &mut Tape, x: Var, w: Var, b: Var) -> ensemble_downscaling::error::Result<Var> {
    let h = tape.conv3x3(x, w, b)?;
    let h = tape.tanh(h);
    let p = tape.avg_pool2(h)?;
    let u = tape.upsample2(p);
    let s = tape.square(u);
    Ok(tape.mean(s))
}

fn main() -> ensemble_downscaling::error::Result<()> {
    let mut rng = stream(3, &[]);
    let x = Tensor::new(vec![2, 1, 4, 6], normals(&mut rng, 48))?;
    let w = Tensor::new(vec![3, 18], normals(&mut rng, 54).iter().map(|v| 0.3 * v).collect())?;
    let b = Tensor::new(vec![3], normals(&mut rng, 3))?;

    let err = grad_check(
        |tape, v| {
            let w = tape.constant(w.clone());
            let b = tape.constant(b.clone());
            loss(tape, v, w, b)
        },
        &x,
        1e-5,
    )?;
    println!("input gradient: max relative discrepancy {err:.2e}");

    let mut params = vec![w, b];
    let mut state = AdamState::new(AdamConfig { learning_rate: 0.05, ..AdamConfig::default() }, &params)?;
    for step in 0..=20 {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.param(params[0].clone());
        let bv = tape.param(params[1].clone());
        let l = loss(&mut tape, xv, wv, bv)?;
        tape.backward(l)?;
        if step % 5 == 0 {
            println!("step {step:2}: loss {:.5}", tape.value(l).data()[0]);
        }
        let grads: Vec<Tensor> = [wv, bv]
            .iter()
            .zip(&params)
            .map(|(v, p)| Tensor::new(p.shape().to_vec(), tape.grad(*v).unwrap().to_vec()))
            .collect::<Result<_, _>>()?;
        adam_step(&mut params, &grads, &mut state)?;
    }
    Ok(())
}
