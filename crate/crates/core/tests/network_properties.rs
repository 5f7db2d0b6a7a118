use c2f_dft::network::{DftConfig, DftModel, LEVELS};
use c2f_dft::rng::{gaussian_tensor, gaussian_vec, seeded};

// Per-layer counts, written from the architecture description rather than
// from the model code.
fn conv3(ci: usize, co: usize) -> usize {
    co * ci * 9 + co
}
fn pointwise(ci: usize, co: usize) -> usize {
    co * ci + co
}
fn depthwise(c: usize) -> usize {
    c * 9 + c
}
fn norm(c: usize) -> usize {
    2 * c
}
fn linear(di: usize, d_out: usize) -> usize {
    d_out * di + d_out
}

fn block(c: usize, heads: usize, expansion: usize) -> usize {
    let attn = norm(c) + pointwise(c, 3 * c) + depthwise(3 * c) + heads + pointwise(c, c);
    let ffn = norm(c) + pointwise(c, expansion * c) + pointwise(expansion * c, c);
    attn + ffn
}

fn level(cfg: &DftConfig, width: usize, i: usize) -> usize {
    let time = if cfg.time_embedding {
        let base = 4 * cfg.base_channels;
        linear(base, 3 * width) + linear(base, width)
    } else {
        0
    };
    cfg.blocks[i] * block(width, cfg.heads[i], cfg.ffn_expansion) + time
}

fn expected_parameters(cfg: &DftConfig) -> usize {
    let c = cfg.channels;
    let mut n = conv3(2 * 3, c[0]);
    for i in 0..LEVELS - 1 {
        n += level(cfg, c[i], i) + pointwise(c[i], c[i] / 2);
    }
    n += level(cfg, c[3], 3);
    // decoder: level 3 and 2 fuse back to their width, level 1 stays at 2C
    n += pointwise(c[3], 2 * c[3]) + pointwise(2 * c[2], c[2]) + level(cfg, c[2], 2);
    n += pointwise(c[2], 2 * c[2]) + pointwise(2 * c[1], c[1]) + level(cfg, c[1], 1);
    n += pointwise(c[1], 2 * c[1]) + level(cfg, 2 * c[0], 0);
    n + conv3(2 * c[0], 3)
}

#[test]
fn parameter_counts_match_layer_walk() {
    let full = DftConfig::full();
    let model = DftModel::<f32>::new(&full, 0).unwrap();
    assert_eq!(model.num_parameters(), expected_parameters(&full));
    let mut plain = DftConfig::tiny();
    plain.time_embedding = false;
    for cfg in [DftConfig::tiny(), plain] {
        let model = DftModel::<f32>::new(&cfg, 0).unwrap();
        assert_eq!(model.num_parameters(), expected_parameters(&cfg));
    }
    let names: std::collections::BTreeSet<_> = model.params().iter().map(|(n, _)| n.to_string()).collect();
    assert_eq!(names.len(), model.params().len());
}

#[test]
fn full_config_forward_shape() {
    let model = DftModel::<f32>::new(&DftConfig::full(), 1).unwrap();
    let mut rng = seeded(2);
    let x = gaussian_tensor::<f32>(&mut rng, &[2, 3, 32, 32]);
    let y = gaussian_tensor::<f32>(&mut rng, &[2, 3, 32, 32]);
    let out = c2f_dft::autograd::no_grad(|| model.forward(&x, &y, &[1, 1000])).unwrap();
    assert_eq!(out.shape(), &[2, 3, 32, 32]);
}

fn perturbed_tiny(seed: u64) -> DftModel<f32> {
    let model = DftModel::<f32>::new(&DftConfig::tiny(), seed).unwrap();
    // the zero-initialized output conv would otherwise block every gradient
    // into the body
    for (name, p) in model.params().iter() {
        if name.starts_with("conv_out") {
            let v = gaussian_vec(&mut seeded(seed + 100), p.numel());
            p.set(v.iter().map(|v| (v * 0.05) as f32).collect());
        }
    }
    model
}

#[test]
fn any_multiple_of_eight_resolution() {
    let model = perturbed_tiny(3);
    let mut rng = seeded(4);
    for (h, w) in [(32, 32), (40, 40), (64, 64), (128, 128), (32, 40), (40, 64), (128, 32)] {
        let x = gaussian_tensor::<f32>(&mut rng, &[1, 3, h, w]);
        let y = gaussian_tensor::<f32>(&mut rng, &[1, 3, h, w]);
        let out = c2f_dft::autograd::no_grad(|| model.forward(&x, &y, &[500])).unwrap();
        assert_eq!(out.shape(), &[1, 3, h, w]);
        assert!(out.to_vec().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn gradients_are_finite_and_reach_nearly_all_parameters() {
    let model = perturbed_tiny(5);
    let mut rng = seeded(6);
    let x = gaussian_tensor::<f32>(&mut rng, &[2, 3, 16, 16]);
    let y = gaussian_tensor::<f32>(&mut rng, &[2, 3, 16, 16]);
    let leaves: Vec<_> = model.params().iter().map(|(n, p)| (n.to_string(), p.tensor())).collect();
    let loss = model.forward(&x, &y, &[20, 900]).unwrap().sqr().mean_all();
    let grads = loss.backward();
    let (mut total, mut nonzero) = (0usize, 0usize);
    for (name, leaf) in &leaves {
        let g = grads.get(leaf).unwrap_or_else(|| panic!("no gradient for {name}"));
        assert!(g.iter().all(|v| v.is_finite()), "non-finite gradient in {name}");
        total += g.len();
        nonzero += g.iter().filter(|v| **v != 0.0).count();
    }
    assert!(nonzero as f64 >= 0.99 * total as f64, "{nonzero} of {total} nonzero");
}

#[test]
fn forward_is_bitwise_deterministic() {
    let run = || {
        let model = perturbed_tiny(7);
        let mut rng = seeded(8);
        let x = gaussian_tensor::<f32>(&mut rng, &[2, 3, 32, 24]);
        let y = gaussian_tensor::<f32>(&mut rng, &[2, 3, 32, 24]);
        model.forward(&x, &y, &[3, 333]).unwrap().to_vec()
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
}
