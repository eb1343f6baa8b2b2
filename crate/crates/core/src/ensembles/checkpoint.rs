//! Model checkpoints: the flat parameter file followed by a mask section,
//! plus a text manifest carrying the model kind, its spec and the
//! standardisation.
//!
//! Mask section: `b"MASK"`, set count `u32`, then per set its name
//! (`u32` length + UTF-8), keep probability (`f64` bits), mask count `u32`,
//! layer count `u32`, layer widths (`u32` each) and, per mask and layer, a
//! little-endian bitset of `ceil(width/8)` bytes.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AnyModel, GpModel, MaskSet, ModelKind, ModelSpec};
use crate::diffcore::checkpoint::{manifest_lines, manifest_path, parse_manifest_slices, read_values, write_params};
use crate::diffcore::{DropoutMask, ParamStore};
use crate::error::{Error, Result};
use crate::flows::Normalizer;

const MASK_MAGIC: &[u8; 4] = b"MASK";

fn write_mask_sets<W: Write>(w: &mut W, sets: &[(String, &MaskSet)]) -> std::io::Result<()> {
    w.write_all(MASK_MAGIC)?;
    w.write_all(&(sets.len() as u32).to_le_bytes())?;
    for (name, set) in sets {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let first = &set.masks()[0];
        w.write_all(&first.keep_prob().to_bits().to_le_bytes())?;
        w.write_all(&(set.len() as u32).to_le_bytes())?;
        let widths = first.widths();
        w.write_all(&(widths.len() as u32).to_le_bytes())?;
        for wd in &widths {
            w.write_all(&(*wd as u32).to_le_bytes())?;
        }
        for m in set.masks() {
            for layer in m.layers() {
                let mut bytes = vec![0u8; layer.len().div_ceil(8)];
                for (i, &bit) in layer.iter().enumerate() {
                    if bit {
                        bytes[i / 8] |= 1 << (i % 8);
                    }
                }
                w.write_all(&bytes)?;
            }
        }
    }
    Ok(())
}

fn read_mask_sets<R: Read>(r: &mut R) -> Result<Vec<(String, MaskSet)>> {
    let fmt = |e: std::io::Error| Error::Format(format!("truncated mask section: {e}"));
    let u32_ = |r: &mut R| -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(fmt)?;
        Ok(u32::from_le_bytes(b))
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(fmt)?;
    if &magic != MASK_MAGIC {
        return Err(Error::Format("missing mask section".into()));
    }
    let n_sets = u32_(r)?;
    let mut out = Vec::new();
    for _ in 0..n_sets {
        let len = u32_(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(fmt)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(fmt)?;
        let keep = f64::from_bits(u64::from_le_bytes(b8));
        let m = u32_(r)? as usize;
        let n_layers = u32_(r)? as usize;
        let widths: Vec<usize> = (0..n_layers).map(|_| u32_(r).map(|v| v as usize)).collect::<Result<_>>()?;
        let mut masks = Vec::with_capacity(m);
        for _ in 0..m {
            let mut layers = Vec::with_capacity(n_layers);
            for &wd in &widths {
                let mut bytes = vec![0u8; wd.div_ceil(8)];
                r.read_exact(&mut bytes).map_err(fmt)?;
                layers.push((0..wd).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect());
            }
            masks.push(DropoutMask::new(layers, keep)?);
        }
        out.push((name, MaskSet::from_masks(masks)?));
    }
    Ok(out)
}

fn parts(model: &AnyModel) -> Result<(ParamStore, Vec<(String, &MaskSet)>, Option<Normalizer>)> {
    Ok(match model {
        AnyModel::NflowsOut(m) => (
            m.flow().params().clone(),
            m.mask_sets().iter().enumerate().map(|(i, s)| (format!("t{i}"), s)).collect(),
            Some(m.flow().normalizer().clone()),
        ),
        AnyModel::NflowsBase(m) => (
            m.flow().params().clone(),
            vec![("base".to_string(), m.mask_set())],
            Some(m.flow().normalizer().clone()),
        ),
        AnyModel::Pne(m) => (
            m.net().params().clone(),
            vec![("pne".to_string(), m.mask_set())],
            Some(m.net().normalizer().clone()),
        ),
        AnyModel::McDropout(m) => (
            m.net().params().clone(),
            vec![("test".to_string(), m.test_masks())],
            Some(m.net().normalizer().clone()),
        ),
        AnyModel::Gp(Some(gp), ..) => (gp.to_store(), Vec::new(), None),
        AnyModel::Gp(None, ..) => return Err(Error::State("cannot save an unfitted gaussian process".into())),
    })
}

/// Writes `path` and `path.manifest`.
pub fn save_model(model: &AnyModel, path: &Path) -> Result<()> {
    let (store, sets, norm) = parts(model)?;
    let mut buf = Vec::new();
    write_params(&mut buf, &store).and_then(|_| write_mask_sets(&mut buf, &sets)).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))?;

    let mut lines = vec![
        format!("kind {}", model.kind()),
        format!("spec {}", serde_json::to_string(&model.spec()).expect("spec serialises")),
    ];
    if let Some(n) = norm {
        lines.push(format!("normalizer {}", serde_json::to_string(&n).expect("normalizer serialises")));
    }
    lines.extend(manifest_lines(&store));
    let mpath = manifest_path(path);
    std::fs::write(&mpath, lines.join("\n") + "\n").map_err(|e| Error::io(mpath, e))
}

fn manifest_value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|rest| rest.strip_prefix(' ')))
}

pub fn load_model(path: &Path) -> Result<AnyModel> {
    let mpath = manifest_path(path);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let kind: ModelKind = manifest_value(&text, "kind")
        .ok_or_else(|| Error::Format("manifest lacks a kind line".into()))?
        .parse()?;
    let spec: ModelSpec = serde_json::from_str(
        manifest_value(&text, "spec").ok_or_else(|| Error::Format("manifest lacks a spec line".into()))?,
    )
    .map_err(|e| Error::Format(format!("bad spec: {e}")))?;
    if spec.kind != kind {
        return Err(Error::Format(format!("kind {kind} disagrees with spec kind {}", spec.kind)));
    }
    let norm: Option<Normalizer> = manifest_value(&text, "normalizer")
        .map(|v| serde_json::from_str(v).map_err(|e| Error::Format(format!("bad normalizer: {e}"))))
        .transpose()?;

    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = bytes.as_slice();
    let values = read_values(&mut r)?;
    let store = ParamStore::from_parts(parse_manifest_slices(&text)?, values)?;
    let mut sets = read_mask_sets(&mut r)?;

    if kind == ModelKind::Gp {
        let gp = GpModel::from_store(&store, spec.gp)?;
        return Ok(AnyModel::Gp(Some(gp), spec.gp, spec.x_dim, spec.y_dim));
    }
    let norm = norm.ok_or_else(|| Error::Format("manifest lacks a normalizer line".into()))?;
    // topology only; every random quantity is overwritten below
    let mut model = AnyModel::build(&spec, &mut ChaCha8Rng::seed_from_u64(0))?;
    let one = |sets: &mut Vec<(String, MaskSet)>| -> Result<MaskSet> {
        if sets.len() != 1 {
            return Err(Error::Format(format!("expected one mask set, found {}", sets.len())));
        }
        Ok(sets.remove(0).1)
    };
    match &mut model {
        AnyModel::NflowsOut(m) => {
            m.restore(store, sets.into_iter().map(|(_, s)| s).collect())?;
            m.set_normalizer(norm)?;
        }
        AnyModel::NflowsBase(m) => {
            m.restore(store, one(&mut sets)?)?;
            m.set_normalizer(norm)?;
        }
        AnyModel::Pne(m) => {
            m.restore(store, one(&mut sets)?)?;
            m.net_mut().set_normalizer(norm)?;
        }
        AnyModel::McDropout(m) => {
            m.restore(store, one(&mut sets)?)?;
            m.net_mut().set_normalizer(norm)?;
        }
        AnyModel::Gp(..) => unreachable!("handled above"),
    }
    debug_assert_eq!(model.density()?.kind(), kind);
    Ok(model)
}
