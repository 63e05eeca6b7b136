//! Checkpoint serialization.
//!
//! Layout: magic "MSTC", u16 version, a length-prefixed block of canonical
//! `key=value` config lines (sorted keys; floats printed shortest-round-trip
//! so they reload exactly), a parameter table (name, shape, f32 data), then
//! one optimizer block per network (step count, hyperparameters, and the
//! first/second moments per parameter in table order). Integers and floats
//! are little-endian throughout.

use super::{ArchConfig, CycleGan, GanError, TrainingConfig, NETWORK_NAMES};
use crate::neural::{AdamConfig, Param, Tensor};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

type Result<T> = std::result::Result<T, GanError>;

const MAGIC: &[u8; 4] = b"MSTC";
const VERSION: u16 = 1;

/// A loaded checkpoint: the model plus everything needed to resume.
pub struct Checkpoint {
    pub model: CycleGan<f32>,
    pub arch: ArchConfig,
    pub train: TrainingConfig,
    pub epochs_completed: u64,
}

fn io_err(path: &Path, source: std::io::Error) -> GanError {
    GanError::IoFailure {
        path: path.display().to_string(),
        source,
    }
}

/// Write the model, its config, and optimizer state.
pub fn save_checkpoint(model: &CycleGan<f32>, cfg: &TrainingConfig, path: &Path) -> Result<()> {
    save_checkpoint_with_progress(model, cfg, 0, path)
}

/// Like [`save_checkpoint`], recording how many epochs have been completed
/// so training can resume from the file.
pub fn save_checkpoint_with_progress(
    model: &CycleGan<f32>,
    cfg: &TrainingConfig,
    epochs_completed: u64,
    path: &Path,
) -> Result<()> {
    let bytes = checkpoint_to_bytes(model, cfg, epochs_completed);
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&bytes).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Load a checkpoint, reconstructing the architecture from the embedded
/// config.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    checkpoint_from_bytes(&bytes, None)
}

/// Load a checkpoint into a caller-chosen architecture; a file written from
/// a different architecture fails with a shape error instead of producing a
/// silently wrong model.
pub fn load_checkpoint_as(path: &Path, arch: &ArchConfig) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    checkpoint_from_bytes(&bytes, Some(*arch))
}

pub fn checkpoint_to_bytes(
    model: &CycleGan<f32>,
    cfg: &TrainingConfig,
    epochs_completed: u64,
) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());

    let config_text = config_to_text(&model.arch, cfg, epochs_completed);
    out.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    out.extend_from_slice(config_text.as_bytes());

    let params = model.named_params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, p) in &params {
        push_str(&mut out, name);
        out.push(p.value.shape().len() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    let opts = [
        &model.opt_g_ab,
        &model.opt_g_ba,
        &model.opt_d_a,
        &model.opt_d_b,
        &model.opt_d_a_m,
        &model.opt_d_b_m,
    ];
    for (net, opt) in NETWORK_NAMES.iter().zip(opts) {
        push_str(&mut out, net);
        out.extend_from_slice(&opt.t.to_le_bytes());
        out.extend_from_slice(&opt.config.lr.to_le_bytes());
        out.extend_from_slice(&opt.config.beta1.to_le_bytes());
        out.extend_from_slice(&opt.config.beta2.to_le_bytes());
        out.extend_from_slice(&opt.config.epsilon.to_le_bytes());
        out.extend_from_slice(&(opt.moments.len() as u32).to_le_bytes());
        for (m, v) in &opt.moments {
            for x in m.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
            for x in v.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8], expect_arch: Option<ArchConfig>) -> Result<Checkpoint> {
    let mut cur = Reader { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(GanError::BadMagic);
    }
    let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(GanError::VersionMismatch(version));
    }
    let config_len = cur.u32("config length")? as usize;
    let config_text = std::str::from_utf8(cur.take(config_len, "config text")?)
        .map_err(|_| GanError::CorruptCheckpoint("config text is not UTF-8".into()))?;
    let (file_arch, train, epochs_completed) = config_from_text(config_text)?;
    let arch = expect_arch.unwrap_or(file_arch);

    // Build the skeleton, then overwrite every parameter from the table.
    let mut model = CycleGan::<f32>::new(&arch, &train.adam(), train.seed);
    model.arch = arch;

    let n_params = cur.u32("parameter count")? as usize;
    let mut table: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
    for _ in 0..n_params {
        let name = cur.string("parameter name")?;
        let ndim = cur.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32("dimension")? as usize);
        }
        let count: usize = shape.iter().product();
        if count == 0 || count > bytes.len() {
            return Err(GanError::CorruptCheckpoint(format!(
                "parameter {name} declares implausible shape {shape:?}"
            )));
        }
        let data = cur.f32s(count, "parameter data")?;
        let tensor = Tensor::new(shape, data)
            .map_err(|e| GanError::CorruptCheckpoint(format!("parameter {name}: {e}")))?;
        if table.insert(name.clone(), tensor).is_some() {
            return Err(GanError::CorruptCheckpoint(format!(
                "duplicate parameter {name}"
            )));
        }
    }

    {
        let params = model.named_params_mut();
        if params.len() != table.len() {
            return Err(GanError::CheckpointShape(format!(
                "architecture has {} parameters, file carries {}",
                params.len(),
                table.len()
            )));
        }
        for (name, p) in params {
            let tensor = table.remove(&name).ok_or_else(|| {
                GanError::CheckpointShape(format!("file is missing parameter {name}"))
            })?;
            if tensor.shape() != p.value.shape() {
                return Err(GanError::CheckpointShape(format!(
                    "parameter {name}: architecture wants {:?}, file carries {:?}",
                    p.value.shape(),
                    tensor.shape()
                )));
            }
            *p = Param::new(tensor);
        }
    }

    for net in NETWORK_NAMES {
        let name = cur.string("optimizer network name")?;
        if name != net {
            return Err(GanError::CorruptCheckpoint(format!(
                "expected optimizer block for {net}, found {name}"
            )));
        }
        let t = u64::from_le_bytes(cur.take(8, "step count")?.try_into().unwrap());
        let lr = cur.f64("lr")?;
        let beta1 = cur.f64("beta1")?;
        let beta2 = cur.f64("beta2")?;
        let epsilon = cur.f64("epsilon")?;
        let n = cur.u32("moment count")? as usize;
        let opt = match net {
            "g_ab" => &mut model.opt_g_ab,
            "g_ba" => &mut model.opt_g_ba,
            "d_a" => &mut model.opt_d_a,
            "d_b" => &mut model.opt_d_b,
            "d_a_m" => &mut model.opt_d_a_m,
            _ => &mut model.opt_d_b_m,
        };
        if n != opt.moments.len() {
            return Err(GanError::CheckpointShape(format!(
                "{net}: architecture wants {} moment pairs, file carries {n}",
                opt.moments.len()
            )));
        }
        opt.t = t;
        opt.config = AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        };
        for (m, v) in opt.moments.iter_mut() {
            let md = cur.f32s(m.len(), "first moment")?;
            let vd = cur.f32s(v.len(), "second moment")?;
            *m = Tensor::new(m.shape().to_vec(), md)
                .map_err(|e| GanError::CorruptCheckpoint(e.to_string()))?;
            *v = Tensor::new(v.shape().to_vec(), vd)
                .map_err(|e| GanError::CorruptCheckpoint(e.to_string()))?;
        }
    }

    if cur.pos != bytes.len() {
        return Err(GanError::CorruptCheckpoint(format!(
            "{} trailing byte(s)",
            bytes.len() - cur.pos
        )));
    }
    Ok(Checkpoint {
        model,
        arch,
        train,
        epochs_completed,
    })
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn config_to_text(arch: &ArchConfig, cfg: &TrainingConfig, epochs_completed: u64) -> String {
    // Keys sorted; Display round-trips f64 exactly.
    let pairs: Vec<(&str, String)> = vec![
        ("arch.base_filters", arch.base_filters.to_string()),
        ("arch.residual_blocks", arch.residual_blocks.to_string()),
        ("progress.epochs_completed", epochs_completed.to_string()),
        ("train.batch_size", cfg.batch_size.to_string()),
        ("train.beta1", cfg.beta1.to_string()),
        ("train.beta2", cfg.beta2.to_string()),
        ("train.checkpoint_every", cfg.checkpoint_every.to_string()),
        ("train.epochs", cfg.epochs.to_string()),
        ("train.gamma_mixed", cfg.gamma_mixed.to_string()),
        ("train.lambda_cycle", cfg.lambda_cycle.to_string()),
        ("train.lr", cfg.lr.to_string()),
        ("train.seed", cfg.seed.to_string()),
    ];
    let mut text = String::new();
    for (k, v) in pairs {
        text.push_str(k);
        text.push('=');
        text.push_str(&v);
        text.push('\n');
    }
    text
}

fn config_from_text(text: &str) -> Result<(ArchConfig, TrainingConfig, u64)> {
    let mut map: BTreeMap<&str, &str> = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            GanError::CorruptCheckpoint(format!("config line without '=': {line}"))
        })?;
        map.insert(k.trim(), v.trim());
    }
    fn get<T: std::str::FromStr>(map: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
        map.get(key)
            .ok_or_else(|| GanError::CorruptCheckpoint(format!("config key {key} missing")))?
            .parse::<T>()
            .map_err(|_| GanError::CorruptCheckpoint(format!("config key {key} unparsable")))
    }
    let arch = ArchConfig {
        base_filters: get(&map, "arch.base_filters")?,
        residual_blocks: get(&map, "arch.residual_blocks")?,
    };
    let train = TrainingConfig {
        epochs: get(&map, "train.epochs")?,
        batch_size: get(&map, "train.batch_size")?,
        lambda_cycle: get(&map, "train.lambda_cycle")?,
        gamma_mixed: get(&map, "train.gamma_mixed")?,
        lr: get(&map, "train.lr")?,
        beta1: get(&map, "train.beta1")?,
        beta2: get(&map, "train.beta2")?,
        seed: get(&map, "train.seed")?,
        checkpoint_every: get(&map, "train.checkpoint_every")?,
    };
    let epochs_completed = get(&map, "progress.epochs_completed")?;
    Ok((arch, train, epochs_completed))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(GanError::CorruptCheckpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        if len > self.bytes.len() {
            return Err(GanError::CorruptCheckpoint(format!(
                "implausible string length {len} for {what}"
            )));
        }
        String::from_utf8(self.take(len, what)?.to_vec())
            .map_err(|_| GanError::CorruptCheckpoint(format!("{what} is not UTF-8")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(4 * n, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cyclegan::{transfer, Direction};
    use crate::pianoroll::PianoRollPhrase;
    use crate::rng::SeedRng;

    fn small_arch(res: usize) -> ArchConfig {
        ArchConfig {
            base_filters: 2,
            residual_blocks: res,
        }
    }

    fn small_cfg() -> TrainingConfig {
        TrainingConfig {
            batch_size: 4,
            seed: 21,
            ..TrainingConfig::default()
        }
    }

    fn warmed_model() -> CycleGan<f32> {
        // Nudge optimizer state off zero so the round trip covers it.
        let cfg = small_cfg();
        let mut model = CycleGan::<f32>::new(&small_arch(1), &cfg.adam(), 77);
        let mut rng = SeedRng::new(1);
        let mut p = PianoRollPhrase::zeros();
        for _ in 0..100 {
            p.set(rng.below(64), rng.below(84), true);
        }
        let batch = crate::cyclegan::phrases_to_batch::<f32>(&[&p, &p]).unwrap();
        model
            .discriminator_losses(&batch, &batch, &batch, 1.0)
            .unwrap();
        let mut params: Vec<_> = model.d_a.params_mut().into_iter().map(|(_, p)| p).collect();
        let opt = &mut model.opt_d_a;
        opt.step(&mut params).unwrap();
        model
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let model = warmed_model();
        let cfg = small_cfg();
        let bytes = checkpoint_to_bytes(&model, &cfg, 3);
        let loaded = checkpoint_from_bytes(&bytes, None).unwrap();
        assert_eq!(loaded.epochs_completed, 3);
        assert_eq!(loaded.train, cfg);
        assert_eq!(loaded.arch, model.arch);
        let again = checkpoint_to_bytes(&loaded.model, &loaded.train, 3);
        assert_eq!(bytes, again);
    }

    #[test]
    fn loaded_model_transfers_identically() {
        let model = warmed_model();
        let cfg = small_cfg();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.mstc");
        save_checkpoint(&model, &cfg, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let mut rng = SeedRng::new(5);
        for _ in 0..3 {
            let mut p = PianoRollPhrase::zeros();
            for _ in 0..60 {
                p.set(rng.below(64), rng.below(84), true);
            }
            let a = transfer(&model, &p, Direction::AtoB).unwrap();
            let b = transfer(&loaded.model, &p, Direction::AtoB).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn architecture_drift_is_a_shape_error() {
        let model = warmed_model(); // 1 residual block
        let cfg = small_cfg();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.mstc");
        save_checkpoint(&model, &cfg, &path).unwrap();
        match load_checkpoint_as(&path, &small_arch(3)) {
            Err(GanError::CheckpointShape(_)) => {}
            other => panic!("expected CheckpointShape, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_bytes_are_typed_errors() {
        let model = warmed_model();
        let cfg = small_cfg();
        let bytes = checkpoint_to_bytes(&model, &cfg, 0);

        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'Z';
        assert!(matches!(
            checkpoint_from_bytes(&wrong_magic, None),
            Err(GanError::BadMagic)
        ));

        let mut wrong_version = bytes.clone();
        wrong_version[4] = 7;
        assert!(matches!(
            checkpoint_from_bytes(&wrong_version, None),
            Err(GanError::VersionMismatch(7))
        ));

        for cut in [10, 100, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                checkpoint_from_bytes(&bytes[..cut], None).is_err(),
                "truncation at {cut} slipped through"
            );
        }

        let mut trailing = bytes;
        trailing.push(1);
        assert!(matches!(
            checkpoint_from_bytes(&trailing, None),
            Err(GanError::CorruptCheckpoint(_))
        ));
    }
}
