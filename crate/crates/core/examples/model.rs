//! The spatio-temporal auto-encoder at full size: intermediate shapes,
//! parameter count and per-pixel attention weights of one cube.

use state_vad::autodiff::Graph;
use state_vad::model::{Mode, ModelConfig, StateModel};
use state_vad::{Result, Tensor};

fn main() -> Result<()> {
    let cfg = ModelConfig::raw();
    let model = StateModel::<f32>::new(cfg.clone(), 0)?;
    println!("raw branch: {} parameters in {} tensors", model.params().count(), model.params().len());

    let s = cfg.seq_len();
    let x = Tensor::from_fn(&[s, 3, cfg.height, cfg.width], |i| ((i * 31) % 255) as f32 / 255.0);
    let g = Graph::new();
    let b = model.bind(&g, Mode::Eval, false);
    let z = model.encode(&b, g.constant(x))?;
    println!("encoded {:?}", z.shape());
    let a = &model.attention_weights(&b, 0, z)?[0];
    let w = a.value();
    let row: Vec<String> = (0..s).map(|j| format!("{:.5}", w.at(&[0, s / 2, j, 0]))).collect();
    println!("layer 0, head 0, centre position, pixel 0 attends with [{}]", row.join(", "));
    let mut h = z;
    for l in 0..cfg.n_stacks {
        h = model.attention_layer(&b, l, h)?;
    }
    println!("decoded {:?}", model.decode(&b, h)?.shape());

    let motion = StateModel::<f32>::new(ModelConfig::motion(), 0)?;
    println!("motion branch: {} parameters", motion.params().count());
    Ok(())
}
