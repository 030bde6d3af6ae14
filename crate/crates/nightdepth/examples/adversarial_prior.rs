//! The depth-prior regularizer in isolation: a patch discriminator learns to
//! tell reference depth layouts from a degenerate prediction, and the
//! least-squares generator objective pushes the prediction toward the
//! reference distribution.
//!
//! ```bash
//! cargo run --release --example adversarial_prior
//! ```

use nightdepth::array::Array;
use nightdepth::geometry::Pose6;
use nightdepth::graph::Graph;
use nightdepth::optim::Adam;
use nightdepth::prior::{
    build_lsgan_discriminator_loss, build_lsgan_generator_loss, coord_image, normalize_depth,
    Discriminator,
};
use nightdepth::scene::{random_scene, render};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> nightdepth::Result<()> {
    let (h, w) = (64, 64);
    // reference pool: normalized ground-truth depths of random layouts
    let mut refs = Vec::new();
    for seed in 0..24u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = random_scene(&mut rng, w, h);
        let (_, depth) = render(&scene, &Pose6::IDENTITY)?;
        refs.push(normalize_depth(&depth)?);
    }
    // the "prediction": a flat depth map, far from any plausible layout
    let fake = normalize_depth(&Array::<f32>::full(&[1, h, w], 7.0))?;

    let mut disc = Discriminator::<f32>::init(5);
    let mut g = Graph::<f32>::new();
    let params = disc.declare_params(&mut g);
    let real_in = g.input(&[1, h, w]);
    let fake_in = g.input(&[1, h, w]);
    let coords = g.constant(coord_image(h, w)?);
    let sr = disc.build(&mut g, real_in, coords, &params);
    let sf = disc.build(&mut g, fake_in, coords, &params);
    let d_loss = build_lsgan_discriminator_loss(&mut g, sr, sf);
    let g_loss = build_lsgan_generator_loss(&mut g, sf);

    let shapes: Vec<Vec<usize>> = disc.params().iter().map(|(_, a)| a.shape().to_vec()).collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    let mut opt = Adam::new(&shape_refs);
    let mut eval = g.evaluation();

    println!("step  d_loss   g_loss   (fake scores should sink toward 0)");
    for step in 0..60 {
        let real = &refs[step % refs.len()];
        let mut inputs: Vec<&Array<f32>> = disc.params().into_iter().map(|(_, a)| a).collect();
        inputs.push(real);
        inputs.push(&fake);
        g.forward(&inputs, &mut eval)?;
        if step % 10 == 0 {
            println!(
                "{step:4}  {:.4}   {:.4}",
                eval.value(d_loss).item(),
                eval.value(g_loss).item()
            );
        }
        let grads = g.backward(&eval, d_loss, &Array::scalar(1.0))?;
        let n = shapes.len();
        let mut params_mut = disc.params_mut();
        opt.step(&mut params_mut, &grads[..n].to_vec(), 2e-4);
    }
    println!("the discriminator separates flat depth from real layouts;");
    println!("in training the same generator loss pulls depth the other way");
    Ok(())
}
