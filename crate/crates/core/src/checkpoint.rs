//! On-disk checkpoints: one file per parameter tensor plus committed masks.
//!
//! ```text
//! <dir>/FORMAT              format tag
//! <dir>/meta.tsv            kind, feature_dim, num_classes, tasks
//! <dir>/params/<name>.param `name<TAB>d0,d1,...` header line, then little-endian f64 values
//! <dir>/masks/task_000.hex  N_θ on the first line, hex bitset on the second
//! ```
//!
//! Scores are ordinary parameters, so the score table travels with the weights.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::baselines::GcnClassifier;
use crate::error::{Error, Result};
use crate::masking::Bitmask;
use crate::model::{Baseline, RamCgModel, TrainPlan};
use crate::tensor::{ParamStore, Tensor};

pub const FORMAT_TAG: &str = "ramcg-checkpoint 1";

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn encode_param(name: &str, value: &Tensor) -> Vec<u8> {
    let shape: Vec<String> = value.shape().iter().map(|d| d.to_string()).collect();
    let mut bytes = format!("{name}\t{}\n", shape.join(",")).into_bytes();
    bytes.extend(value.to_le_bytes());
    bytes
}

pub fn decode_param(bytes: &[u8], path: &Path) -> Result<(String, Tensor)> {
    let bad = |msg: &str| Error::data(path, 1, msg.to_string());
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not UTF-8"))?;
    let (name, shape) = header.split_once('\t').ok_or_else(|| bad("header needs name and shape"))?;
    let shape = shape
        .split(',')
        .map(|d| d.parse::<usize>().map_err(|_| bad("bad shape")))
        .collect::<Result<Vec<_>>>()?;
    let body = &bytes[nl + 1..];
    let count: usize = shape.iter().product();
    if body.len() != count * 8 {
        return Err(bad(&format!("{} bytes of data for shape {shape:?}", body.len())));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((name.to_string(), Tensor::new(shape, data)?))
}

fn save_store(store: &ParamStore, dir: &Path) -> Result<()> {
    let pdir = dir.join("params");
    mkdir(&pdir)?;
    for (_, p) in store.iter() {
        write(&pdir.join(format!("{}.param", p.name)), encode_param(&p.name, &p.value))?;
    }
    Ok(())
}

/// Overwrites every parameter of `store` from the checkpoint, by name and shape.
fn load_store(store: &mut ParamStore, dir: &Path) -> Result<()> {
    let pdir = dir.join("params");
    let mut found = BTreeMap::new();
    for entry in fs::read_dir(&pdir).map_err(|e| Error::io(&pdir, e))? {
        let path = entry.map_err(|e| Error::io(&pdir, e))?.path();
        let (name, value) = decode_param(&read(&path)?, &path)?;
        found.insert(name, value);
    }
    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        let value = found.remove(&name).ok_or_else(|| {
            Error::data(&pdir, 0, format!("checkpoint lacks parameter `{name}`"))
        })?;
        if value.shape() != store.value(id).shape() {
            return Err(Error::data(
                &pdir,
                0,
                format!("`{name}` has shape {:?}, model expects {:?}", value.shape(), store.value(id).shape()),
            ));
        }
        store.get_mut(id).value = value;
    }
    if let Some(extra) = found.keys().next() {
        return Err(Error::data(&pdir, 0, format!("unexpected parameter `{extra}` in checkpoint")));
    }
    Ok(())
}

fn write_meta(dir: &Path, kind: Baseline, feature_dim: usize, classes: usize, tasks: usize) -> Result<()> {
    mkdir(dir)?;
    write(&dir.join("FORMAT"), format!("{FORMAT_TAG}\n"))?;
    write(
        &dir.join("meta.tsv"),
        format!("kind\t{kind}\nfeature_dim\t{feature_dim}\nnum_classes\t{classes}\ntasks\t{tasks}\n"),
    )
}

/// Header of a checkpoint directory.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub kind: Baseline,
    pub feature_dim: usize,
    pub num_classes: usize,
    /// Tasks trained before the checkpoint was written.
    pub tasks: usize,
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let fpath = dir.join("FORMAT");
    let tag = fs::read_to_string(&fpath).map_err(|e| Error::io(&fpath, e))?;
    if tag.trim() != FORMAT_TAG {
        return Err(Error::data(&fpath, 1, format!("unsupported checkpoint format `{}`", tag.trim())));
    }
    let path = dir.join("meta.tsv");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut fields = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let (k, v) = line
            .split_once('\t')
            .ok_or_else(|| Error::data(&path, i + 1, "expected key<TAB>value"))?;
        fields.insert(k.to_string(), (i + 1, v.to_string()));
    }
    let get = |k: &str| -> Result<(usize, String)> {
        fields.get(k).cloned().ok_or_else(|| Error::data(&path, 0, format!("missing `{k}`")))
    };
    let num = |k: &str| -> Result<usize> {
        let (line, v) = get(k)?;
        v.parse().map_err(|_| Error::data(&path, line, format!("`{k}` is not a count")))
    };
    let (line, kind) = get("kind")?;
    Ok(CheckpointMeta {
        kind: kind.parse().map_err(|_| Error::data(&path, line, format!("unknown kind `{kind}`")))?,
        feature_dim: num("feature_dim")?,
        num_classes: num("num_classes")?,
        tasks: num("tasks")?,
    })
}

pub fn save_ramcg(model: &RamCgModel, feature_dim: usize, dir: &Path) -> Result<()> {
    let masks = model.registry.masks();
    write_meta(dir, Baseline::RamCg, feature_dim, model.num_classes, masks.len())?;
    save_store(&model.store, dir)?;
    let mdir = dir.join("masks");
    mkdir(&mdir)?;
    for (t, mask) in masks.iter().enumerate() {
        write(
            &mdir.join(format!("task_{t:03}.hex")),
            format!("{}\n{}\n", mask.len(), mask.to_hex()),
        )?;
    }
    Ok(())
}

pub fn load_mask(path: &Path) -> Result<Bitmask> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let n: usize = lines
        .next()
        .and_then(|l| l.trim().parse().ok())
        .ok_or_else(|| Error::data(path, 1, "expected the mask length"))?;
    let hex = lines.next().unwrap_or("").trim();
    Bitmask::from_hex(n, hex).map_err(|e| Error::data(path, 2, e.to_string()))
}

/// Rebuilds a model from `plan` and fills it from the checkpoint, committed masks included.
pub fn load_ramcg(plan: &TrainPlan, dir: &Path) -> Result<RamCgModel> {
    let meta = read_meta(dir)?;
    if meta.kind != Baseline::RamCg {
        return Err(Error::Config(format!("checkpoint holds a {} model", meta.kind)));
    }
    let mut model = RamCgModel::new(plan, meta.feature_dim, meta.num_classes)?;
    load_store(&mut model.store, dir)?;
    for t in 0..meta.tasks {
        let mask = load_mask(&dir.join("masks").join(format!("task_{t:03}.hex")))?;
        model.registry.commit(t, mask)?;
    }
    if meta.tasks > 0 {
        let mut frozen = model.encoder_params();
        frozen.extend(model.classifier.params());
        model.store.set_trainable(&frozen, false);
    }
    Ok(model)
}

pub fn save_gcn(model: &GcnClassifier, kind: Baseline, feature_dim: usize, tasks: usize, dir: &Path) -> Result<()> {
    write_meta(dir, kind, feature_dim, model.num_classes, tasks)?;
    save_store(&model.store, dir)
}

pub fn load_gcn(plan: &TrainPlan, dir: &Path) -> Result<(GcnClassifier, CheckpointMeta)> {
    let meta = read_meta(dir)?;
    if meta.kind == Baseline::RamCg {
        return Err(Error::Config("checkpoint holds a ramcg model".into()));
    }
    let mut model = GcnClassifier::new(plan, meta.feature_dim, meta.num_classes)?;
    load_store(&mut model.store, dir)?;
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_bytes_round_trip() {
        let t = Tensor::from_rows(&[[1.5, -0.0, f64::MIN_POSITIVE], [3.25, 1e300, -7.0]]).unwrap();
        let bytes = encode_param("enc.0.w", &t);
        let (name, back) = decode_param(&bytes, Path::new("p")).unwrap();
        assert_eq!(name, "enc.0.w");
        assert_eq!(back.to_le_bytes(), t.to_le_bytes());
        assert!(decode_param(&bytes[..bytes.len() - 1], Path::new("p")).is_err());
    }

    #[test]
    fn model_round_trips_with_masks() {
        let plan = TrainPlan {
            channels: 2,
            d_enc: 4,
            channel_dim: 2,
            ..Default::default()
        };
        let mut model = RamCgModel::new(&plan, 3, 2).unwrap();
        let mask = model.current_selection().unwrap();
        model.registry.commit(0, mask.clone()).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        save_ramcg(&model, 3, tmp.path()).unwrap();
        let back = load_ramcg(&plan, tmp.path()).unwrap();
        assert_eq!(back.registry.mask(0).unwrap(), &mask);
        let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
        assert_eq!(back.store.digest_of(&ids), model.store.digest_of(&ids));
    }

    #[test]
    fn wrong_format_tag_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join("FORMAT"), "something else\n").unwrap();
        assert_eq!(read_meta(tmp.path()).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let plan = TrainPlan {
            channels: 2,
            d_enc: 4,
            channel_dim: 2,
            ..Default::default()
        };
        let model = RamCgModel::new(&plan, 3, 2).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        save_ramcg(&model, 3, tmp.path()).unwrap();
        let wider = TrainPlan { d_enc: 5, ..plan };
        assert!(load_ramcg(&wider, tmp.path()).is_err());
    }
}
