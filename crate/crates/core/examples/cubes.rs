//! Spatio-temporal context cubes and their flow targets for one clip.

use state_vad::synth::{cube_sources, flow_oracle, generate_clip, GenConfig, Split};
use state_vad::Result;

fn main() -> Result<()> {
    let cfg = GenConfig::default();
    let clip = generate_clip(&cfg, 7, Split::Test, 1)?;
    let sources = cube_sources(&clip, 0, 1);
    println!("{}: {} frames, {} cubes", clip.id, clip.len(), sources.len());

    let Some(&src) = sources.get(sources.len() / 2) else {
        return Ok(());
    };
    let cube = src.build(&clip, 3, (32, 32))?;
    println!(
        "object {} at frame {} box {:?}: patches {:?}, flows {:?}",
        src.object_id,
        src.t,
        src.bbox,
        cube.patches.shape(),
        cube.flows.shape()
    );
    let flow = flow_oracle(&clip, src.t);
    let (cx, cy) = ((src.bbox.x0 + src.bbox.x1) / 2, (src.bbox.y0 + src.bbox.y1) / 2);
    println!(
        "frame flow at the box centre ({}, {}), patch flow at its centre ({:.2}, {:.2})",
        flow.at(&[0, cy, cx]),
        flow.at(&[1, cy, cx]),
        cube.flows.at(&[3, 0, 16, 16]),
        cube.flows.at(&[3, 1, 16, 16])
    );
    Ok(())
}
