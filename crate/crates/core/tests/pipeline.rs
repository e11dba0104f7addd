use dpi_core::dit::DecoderConfig;
use dpi_core::model::{ModelConfig, Trainer};
use dpi_core::params::AdamConfig;
use dpi_core::spectro_io::{generate_corpus, read_corpus, write_corpus, CorpusParams};
use dpi_core::text::EncoderConfig;

fn small_model() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            layers: 2,
            d: 16,
            heads: 2,
            vocab: 10,
        },
        decoder: DecoderConfig {
            d: 16,
            cond_dim: 16,
            bins: 20,
            ..Default::default()
        },
        dp_hidden: 16,
        speakers: 2,
        diffusion_steps: 10,
        ..Default::default()
    }
}

#[test]
fn corpus_on_disk_trains_and_synthesizes() {
    let params = CorpusParams {
        n_utts: 12,
        vocab: 10,
        bins: 20,
        max_tokens: 5,
        speakers: 2,
        ..Default::default()
    };
    let corpus = generate_corpus(&params).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &corpus).unwrap();
    let back = read_corpus(dir.path()).unwrap();
    assert_eq!(back, corpus);

    let mut tr = Trainer::new(small_model(), AdamConfig::default(), 3, 9).unwrap();
    let first = tr.step(&back, 1).unwrap();
    for s in 2..=5 {
        tr.step(&back, s).unwrap();
    }
    assert!(first.diffusion.is_finite() && first.grad_norm > 0.0);

    let u = &back[0];
    let mel = tr.model.synthesize(&tr.store, &u.tokens, u.style_id, None, Some(&u.durations), 1).unwrap();
    assert_eq!(mel.shape(), &[20, u.mel.frames()]);
    assert!(mel.is_finite());
}

#[test]
fn checkpoint_reload_reproduces_samples() {
    let tr = Trainer::new(small_model(), AdamConfig::default(), 1, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    tr.store.save_dir(dir.path()).unwrap();
    let mut other = Trainer::new(small_model(), AdamConfig::default(), 1, 99).unwrap();
    other.store.load_dir(dir.path()).unwrap();
    let a = tr.model.synthesize(&tr.store, &[1, 2, 3], 0, None, None, 4).unwrap();
    let b = other.model.synthesize(&other.store, &[1, 2, 3], 0, None, None, 4).unwrap();
    assert!(a.bit_eq(&b));
}
