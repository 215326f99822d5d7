//! Model checkpoints: one directory per model.
//!
//! ```text
//! arch.kv      architecture record, mode and input statistics
//! adapter.kv   range adapter from generator output [-1, 1] to the model input
//! params.bin   trainable parameters, little-endian f64
//! buffers.bin  batch-norm running statistics, little-endian f64
//! digest.txt   parameter digest (hex)
//! ```

use std::fs;
use std::path::Path;

use degan_core::model::restore;
use degan_core::{ArchSpec, Family, ImageShape, InputStats, Mode, ModelHandle, RangeAdapter, Scale};

use crate::error::{format_error, Error, IoContext, Result};
use crate::kv;

fn to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(format_error(path, "length is not a multiple of 8 bytes"));
    }
    Ok(bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk"))).collect())
}

pub fn arch_record(arch: &ArchSpec) -> Vec<(&'static str, String)> {
    vec![
        ("family", arch.family.name().to_string()),
        ("width_multiplier", arch.width_multiplier.to_string()),
        ("image_shape", arch.image_shape.to_string()),
        ("num_classes", arch.num_classes.to_string()),
        ("latent_dim", arch.latent_dim.to_string()),
        ("scale", arch.scale.name().to_string()),
    ]
}

pub fn save(dir: &Path, model: &ModelHandle) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let mut arch = arch_record(model.arch());
    arch.push(("mode", if model.is_frozen() { "frozen" } else { "trainable" }.to_string()));
    arch.push(("input_stats", model.input_stats().describe()));
    arch.push(("param_count", model.param_count().to_string()));
    let adapter = RangeAdapter::new(model.input_stats());
    let adapter = [
        ("from", "range:-1:1".to_string()),
        ("to", model.input_stats().describe()),
        ("scale", adapter.scale.to_string()),
        ("shift", adapter.shift.to_string()),
    ];
    let files: [(&str, Vec<u8>); 5] = [
        ("params.bin", to_bytes(&model.flat_params())),
        ("buffers.bin", to_bytes(&model.flat_buffers())),
        ("arch.kv", kv::render(&arch).into_bytes()),
        ("adapter.kv", kv::render(&adapter).into_bytes()),
        ("digest.txt", format!("{}\n", model.param_digest()).into_bytes()),
    ];
    for (name, bytes) in files {
        fs::write(dir.join(name), bytes).at(dir.join(name))?;
    }
    Ok(())
}

pub fn load(dir: &Path) -> Result<ModelHandle> {
    let arch_path = dir.join("arch.kv");
    let map = kv::parse(&arch_path, &fs::read_to_string(&arch_path).at(&arch_path)?)?;
    let arch = ArchSpec {
        family: Family::parse(kv::get(&arch_path, &map, "family")?)?,
        width_multiplier: kv::get_parsed(&arch_path, &map, "width_multiplier")?,
        image_shape: ImageShape::parse(kv::get(&arch_path, &map, "image_shape")?)?,
        num_classes: kv::get_parsed(&arch_path, &map, "num_classes")?,
        latent_dim: kv::get_parsed(&arch_path, &map, "latent_dim")?,
        scale: Scale::parse(kv::get(&arch_path, &map, "scale")?)?,
    };
    let mode = match kv::get(&arch_path, &map, "mode")? {
        "frozen" => Mode::Frozen,
        "trainable" => Mode::Trainable,
        other => return Err(format_error(&arch_path, format!("unknown mode '{other}'"))),
    };
    let stats = InputStats::parse(kv::get(&arch_path, &map, "input_stats")?)?;
    let read = |name: &str| -> Result<Vec<f64>> {
        let p = dir.join(name);
        from_bytes(&p, &fs::read(&p).at(&p)?)
    };
    let model = restore(&arch, &read("params.bin")?, &read("buffers.bin")?, stats, mode)?;
    let digest_path = dir.join("digest.txt");
    let recorded = fs::read_to_string(&digest_path).at(&digest_path)?.trim().to_string();
    let found = model.param_digest().to_hex();
    if recorded != found {
        return Err(Error::Digest { path: dir.to_path_buf(), recorded, found });
    }
    Ok(model)
}
