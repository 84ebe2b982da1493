//! Network checkpoints: a JSON manifest plus one little-endian `f64` blob per
//! layer holding `W` (row-major) followed by `V`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{format_err, Result};
use crate::neuron::{Network, NeuronParams, RecurrentLayer};

const FORMAT: &str = "spiking-replay-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerManifest {
    pub inputs: usize,
    pub outputs: usize,
    pub recurrent: bool,
    pub params: NeuronParams,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub split_index: usize,
    pub seed: u64,
    pub layers: Vec<LayerManifest>,
}

pub const MANIFEST_FILE: &str = "network.json";

pub fn save_checkpoint(net: &Network, seed: u64, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut layers = Vec::with_capacity(net.len());
    for (i, l) in net.layers().iter().enumerate() {
        let file = format!("layer_{i:02}.f64");
        let mut blob = Vec::with_capacity(8 * (l.w().len() + l.v().len()));
        for x in l.w().iter().chain(l.v()) {
            blob.extend_from_slice(&x.to_le_bytes());
        }
        fs::write(dir.join(&file), blob)?;
        layers.push(LayerManifest {
            inputs: l.inputs(),
            outputs: l.outputs(),
            recurrent: l.is_recurrent(),
            params: l.params(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        version: 1,
        split_index: net.split_index(),
        seed,
        layers,
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Loads a checkpoint directory, returning the network and its recorded seed.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(Network, u64)> {
    let dir = dir.as_ref();
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    if manifest.format != FORMAT || manifest.version != 1 {
        return Err(format_err(0, "not a version 1 network checkpoint"));
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for lm in &manifest.layers {
        let blob = fs::read(dir.join(&lm.file))?;
        let nw = lm.inputs * lm.outputs;
        let nv = lm.outputs * lm.outputs;
        if blob.len() != 8 * (nw + nv) {
            return Err(format_err(
                blob.len() as u64,
                format!("{}: expected {} bytes", lm.file, 8 * (nw + nv)),
            ));
        }
        let vals: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let (w, v) = vals.split_at(nw);
        let v = lm.recurrent.then(|| v.to_vec());
        layers.push(RecurrentLayer::new(
            lm.inputs,
            lm.outputs,
            w.to_vec(),
            v,
            lm.params,
        )?);
    }
    Ok((Network::new(layers, manifest.split_index)?, manifest.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron::WeightInit;
    use crate::rng::{stream, Stream};

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = stream(5, Stream::Init, 0);
        let net = Network::build(
            &[9, 7, 5, 3],
            NeuronParams::default(),
            WeightInit::default(),
            2,
            &mut rng,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&net, 5, dir.path()).unwrap();
        let (back, seed) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(seed, 5);
        assert_eq!(back, net);
        assert_eq!(back.fingerprint(), net.fingerprint());
        assert_eq!(
            fs::metadata(dir.path().join("layer_00.f64")).unwrap().len(),
            8 * (9 * 7 + 7 * 7)
        );
    }

    #[test]
    fn truncated_blob_rejected() {
        let mut rng = stream(6, Stream::Init, 0);
        let net = Network::build(
            &[4, 3, 2],
            NeuronParams::default(),
            WeightInit::default(),
            0,
            &mut rng,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&net, 6, dir.path()).unwrap();
        fs::write(dir.path().join("layer_01.f64"), [0u8; 8]).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
