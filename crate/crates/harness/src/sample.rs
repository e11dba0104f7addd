use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use dpi_core::model::{StyleSource, TtsModel};
use dpi_core::params::{Init, ParamStore};
use dpi_core::spectro_io::save_tensor;
use dpi_core::Tensor;

use crate::config::RunConfig;
use crate::train::load_corpus;

/// Synthesizes utterance `utt` with predicted durations and writes the mel
/// TensorFile to `out`.
pub fn run_sample(cfg: &RunConfig, checkpoint: &Path, utt: &str, seed: u64, out: &Path) -> Result<Tensor<f32>> {
    cfg.validate()?;
    if !checkpoint.is_dir() {
        bail!("checkpoint directory {} does not exist", checkpoint.display());
    }
    let mut store = ParamStore::<f32>::new();
    let model = TtsModel::new(&mut store, &mut Init::new(cfg.seed), cfg.model())?;
    store
        .load_dir(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let corpus = load_corpus(cfg)?;
    let u = corpus
        .iter()
        .find(|u| u.id() == utt)
        .ok_or_else(|| anyhow!("utterance `{utt}` not in corpus"))?;
    let reference = (cfg.style_source == StyleSource::Reference).then(|| u.mel.to_tensor());
    let mel = model.synthesize(&store, &u.tokens, u.style_id, reference.as_ref(), None, seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    save_tensor(out, mel.shape(), mel.data())?;
    Ok(mel)
}
