//! Builds a small network on the autograd tape, runs backward and compares
//! every gradient entry with a central finite difference in f64.

use streambeat::tensor::{Tape, Tensor};

fn loss(
    w1: &Tensor<f64>,
    w2: &Tensor<f64>,
    x: &Tensor<f64>,
    target: &[f64],
) -> anyhow::Result<(f64, Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::<f64>::new();
    let (w1v, w2v) = (tape.param(w1.clone()), tape.param(w2.clone()));
    let xv = tape.constant(x.clone());
    let h = tape.matmul(xv, w1v)?;
    let h = tape.relu(h)?;
    let y = tape.matmul(h, w2v)?;
    let l = tape.bce_with_logits(y, target, None)?;
    let value = tape.value(l).data()[0];
    let g = tape.backward(l)?;
    Ok((
        value,
        g.get(w1v).unwrap().to_vec(),
        g.get(w2v).unwrap().to_vec(),
    ))
}

fn main() -> anyhow::Result<()> {
    let w1 = Tensor::from_fn(&[4, 6], |i| ((i * 37 % 11) as f64 - 5.0) / 7.0);
    let w2 = Tensor::from_fn(&[6, 1], |i| ((i * 13 % 7) as f64 - 3.0) / 5.0);
    let x = Tensor::from_fn(&[5, 4], |i| ((i * 29 % 17) as f64 - 8.0) / 9.0);
    let target = [1.0, 0.0, 0.0, 1.0, 0.5];
    let (l0, g1, g2) = loss(&w1, &w2, &x, &target)?;
    println!("loss {l0:.6}");

    let eps = 1e-6;
    let mut worst = 0.0f64;
    for (which, analytic) in [(0, &g1), (1, &g2)] {
        for (i, &g) in analytic.iter().enumerate() {
            let bump = |d: f64| {
                let (mut a, mut b) = (w1.clone(), w2.clone());
                if which == 0 {
                    a.data_mut()[i] += d
                } else {
                    b.data_mut()[i] += d
                }
                loss(&a, &b, &x, &target).map(|r| r.0)
            };
            let fd = (bump(eps)? - bump(-eps)?) / (2.0 * eps);
            worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-8));
        }
    }
    println!(
        "{} gradient entries, worst relative error {worst:.2e}",
        g1.len() + g2.len()
    );
    Ok(())
}
