//! Reverse-mode differentiation on the tape: build a small expression,
//! backpropagate, and compare one entry against a central difference.

use state_vad::autodiff::Graph;
use state_vad::{Result, Tensor};

fn f(x: &Tensor<f64>, k: &Tensor<f64>) -> Result<f64> {
    let g = Graph::new();
    let y = g.constant(x.clone()).conv2d(g.constant(k.clone()), None, 1, 1)?;
    Ok(y.relu().softmax(1)?.pnorm_pow(2.0).value().item())
}

fn main() -> Result<()> {
    let x = Tensor::from_fn(&[1, 2, 5, 5], |i| ((i * 7919) % 97) as f64 / 97.0 - 0.5);
    let k = Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 104_729) % 89) as f64 / 89.0 - 0.5);

    let g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let kv = g.leaf(k.clone(), true);
    let loss = xv.conv2d(kv, None, 1, 1)?.relu().softmax(1)?.pnorm_pow(2.0);
    let grads = g.backward(loss)?;
    let dk = grads.get(kv).expect("kernel gradient");
    println!("loss {:.6}", loss.value().item());
    println!("kernel gradient shape {:?}", dk.shape());

    let h = 1e-6;
    let (mut up, mut down) = (k.clone(), k.clone());
    up.data_mut()[4] += h;
    down.data_mut()[4] -= h;
    let numeric = (f(&x, &up)? - f(&x, &down)?) / (2.0 * h);
    println!("d loss / d k[4]: tape {:.9}, central difference {numeric:.9}", dk.data()[4]);
    Ok(())
}
