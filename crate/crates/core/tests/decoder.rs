use dpi_core::diffusion::{make_schedule, training_loss};
use dpi_core::directional::NeighborSet;
use dpi_core::dit::{Block, Decoder, DecoderConfig};
use dpi_core::graph::Graph;
use dpi_core::params::{Init, ParamStore};
use dpi_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn tiny(k: usize) -> DecoderConfig {
    DecoderConfig {
        blocks: 2,
        global_blocks: k,
        d: 8,
        heads_global: 2,
        bins: 14,
        cond_dim: 8,
        ..Default::default()
    }
}

fn forward(dec: &Decoder, store: &ParamStore<f64>, x: &Tensor<f64>, cond: &Tensor<f64>, style: &Tensor<f64>, t: usize) -> Tensor<f64> {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let (xv, cv, sv) = (g.constant(x.clone()), g.constant(cond.clone()), g.constant(style.clone()));
    let y = dec.forward(&mut g, &p, xv, cv, t, sv).unwrap();
    g.value(y).clone()
}

#[test]
fn default_decoder_keeps_mel_shape() {
    let mut store = ParamStore::<f32>::new();
    let dec = Decoder::new(&mut store, &mut Init::generic(1), "dec", DecoderConfig::default()).unwrap();
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(Tensor::full(&[80, 140], 0.1));
    let c = g.constant(Tensor::full(&[140, 64], 0.2));
    let s = g.constant(Tensor::full(&[4, 64], 0.3));
    let y = dec.forward(&mut g, &p, x, c, 10, s).unwrap();
    assert_eq!(g.shape(y), &[80, 140]);
    assert!(g.value(y).is_finite());
}

#[test]
fn zero_gates_match_conv_patch_path() {
    let mut store = ParamStore::<f64>::new();
    let cfg = tiny(1);
    let dec = Decoder::new(&mut store, &mut Init::new(4), "dec", cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for frames in [1, 7, 13, 21] {
        let (x, c, s) = (randn(&[14, frames], &mut rng), randn(&[frames, 8], &mut rng), randn(&[2, 8], &mut rng));
        let full = forward(&dec, &store, &x, &c, &s, 3);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let (xv, cv) = (g.constant(x), g.constant(c));
        let base = dec.conv_patch_path(&mut g, &p, xv, cv).unwrap();
        assert!(full.bit_eq(g.value(base)), "frames {frames}");
    }
}

#[test]
fn causal_decoder_ignores_later_columns() {
    let mut store = ParamStore::<f64>::new();
    let dec = Decoder::new(&mut store, &mut Init::generic(5), "dec", tiny(0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let frames = 28;
    let (x, c, s) = (randn(&[14, frames], &mut rng), randn(&[frames, 8], &mut rng), randn(&[3, 8], &mut rng));
    let base = forward(&dec, &store, &x, &c, &s, 2);
    for col in 0..3 {
        let mut xp = x.clone();
        for b in 0..14 {
            for f in (col + 1) * 7..frames {
                xp.data_mut()[b * frames + f] -= 0.9;
            }
        }
        let out = forward(&dec, &store, &xp, &c, &s, 2);
        for b in 0..14 {
            for f in 0..(col + 1) * 7 {
                assert_eq!(out.data()[b * frames + f].to_bits(), base.data()[b * frames + f].to_bits());
            }
        }
        let later = (0..14).any(|b| out.data()[b * frames + frames - 1] != base.data()[b * frames + frames - 1]);
        assert!(later, "perturbation must reach its own column");
    }
}

#[test]
fn anticausal_decoder_leaks() {
    let mut cfg = tiny(0);
    cfg.neighbor_set = "n".parse().unwrap();
    let mut store = ParamStore::<f64>::new();
    let dec = Decoder::new(&mut store, &mut Init::generic(6), "dec", cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (x, c, s) = (randn(&[14, 14], &mut rng), randn(&[14, 8], &mut rng), randn(&[1, 8], &mut rng));
    let base = forward(&dec, &store, &x, &c, &s, 2);
    let mut xp = x.clone();
    xp.data_mut()[13] += 1.0;
    let out = forward(&dec, &store, &xp, &c, &s, 2);
    assert!((0..14).any(|b| out.data()[b * 14] != base.data()[b * 14]));
}

#[test]
fn self_only_block_with_one_style_token_is_pointwise() {
    let cfg = DecoderConfig {
        blocks: 1,
        global_blocks: 0,
        neighbor_set: NeighborSet::self_only(),
        ..tiny(0)
    };
    let mut store = ParamStore::<f64>::new();
    let dec = Decoder::new(&mut store, &mut Init::generic(7), "dec", cfg).unwrap();
    let Block::Directional(block) = &dec.blocks[0] else { panic!("expected directional block") };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (h, w, d) = (3, 4, 8);
    let x = randn(&[h * w, d], &mut rng);
    let style = randn(&[1, d], &mut rng);
    let cond = randn(&[1, d], &mut rng);
    let run = |x: &Tensor<f64>| {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let ctx = dec.context(&mut g, h, w, 1);
        let (xv, cv, sv) = (g.constant(x.clone()), g.constant(cond.clone()), g.constant(style.clone()));
        let y = block.forward(&mut g, &p, xv, cv, sv, &ctx);
        g.value(y).clone()
    };
    let base = run(&x);
    for src in 0..h * w {
        let mut xp = x.clone();
        xp.data_mut()[src * d + 1] += 0.5;
        let out = run(&xp);
        for dst in 0..h * w {
            let changed = (0..d).any(|c| out.data()[dst * d + c] != base.data()[dst * d + c]);
            assert_eq!(changed, dst == src, "src {src} dst {dst}");
        }
    }
}

#[test]
fn single_patch_attention_returns_value() {
    let mut g = Graph::<f64>::new();
    let q = g.constant(Tensor::new(vec![1, 4], vec![0.3, -1.0, 2.0, 0.5]).unwrap());
    let k = g.constant(Tensor::new(vec![1, 4], vec![1.0, 1.0, -2.0, 0.0]).unwrap());
    let v = g.constant(Tensor::new(vec![1, 4], vec![9.0, -8.0, 7.0, 6.0]).unwrap());
    let a = g.attention(q, k, v, 2, None);
    assert_eq!(g.value(a).data(), &[9.0, -8.0, 7.0, 6.0]);
}

#[test]
fn training_loss_gradients_match_finite_differences() {
    let cfg = tiny(1);
    let mut store = ParamStore::<f64>::new();
    let dec = Decoder::new(&mut store, &mut Init::generic(8), "dec", cfg).unwrap();
    let sched = make_schedule(5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let frames = 21;
    let (x0, eps) = (randn(&[14, frames], &mut rng), randn(&[14, frames], &mut rng));
    let (cond, style) = (randn(&[frames, 8], &mut rng), randn(&[2, 8], &mut rng));
    let loss = |store: &ParamStore<f64>, grads: bool| {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let (cv, sv) = (g.constant(cond.clone()), g.constant(style.clone()));
        let l = training_loss(&mut g, &x0, 4, &eps, &sched, |g, n, t| dec.forward(g, &p, n, cv, t, sv)).unwrap();
        let gr = grads.then(|| {
            let all = g.backward(l);
            p.vars().iter().map(|v| all.get(*v).cloned()).collect::<Vec<_>>()
        });
        (g.scalar_value(l), gr)
    };
    let (_, grads) = loss(&store, true);
    let grads = grads.unwrap();
    let ids: Vec<_> = store.ids().collect();
    for _ in 0..40 {
        let k = rng.gen_range(0..ids.len());
        let e = rng.gen_range(0..store.get(ids[k]).numel());
        let orig = store.get(ids[k]).data()[e];
        store.get_mut(ids[k]).data_mut()[e] = orig + 1e-6;
        let (up, _) = loss(&store, false);
        store.get_mut(ids[k]).data_mut()[e] = orig - 1e-6;
        let (down, _) = loss(&store, false);
        store.get_mut(ids[k]).data_mut()[e] = orig;
        let num = (up - down) / 2e-6;
        let ana = grads[k].as_ref().map_or(0.0, |g| g.data()[e]);
        let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-6);
        assert!(rel <= 1e-3, "{}[{e}]: analytic {ana} numeric {num}", store.name(ids[k]));
    }
}
