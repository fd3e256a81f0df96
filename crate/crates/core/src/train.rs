//! Training loop, validation-based best-model selection, checkpoint
//! serialization, and transfer loading.

use crate::arch::{build_model, Arch, BackboneKind};
use crate::data::{split, AugmentConfig, Batch, Batcher, LabeledDataset, SplitIndices};
use crate::error::{Error, Result};
use crate::graph::ModelGraph;
use crate::layers::Mode;
use crate::loss::{cross_entropy, loss_gradient};
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// All randomness used during a run flows from these four seeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub split: u64,
    pub shuffle: u64,
    pub init: u64,
    pub augment: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            split: 1,
            shuffle: 2,
            init: 3,
            augment: 4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub arch: Arch,
    pub width: usize,
    pub input_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many epochs without a validation-loss improvement;
    /// 0 disables early stopping.
    pub early_stop_patience: usize,
    pub optimizer: OptimizerConfig,
    pub augment: AugmentConfig,
    pub augment_enabled: bool,
    pub stratified_split: bool,
    pub seeds: Seeds,
    /// Parameter-name prefixes excluded from optimizer updates.
    pub freeze_prefixes: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Arch::VggMini,
            width: 1,
            input_size: 128,
            epochs: 50,
            batch_size: 16,
            early_stop_patience: 10,
            optimizer: OptimizerConfig::default(),
            augment: AugmentConfig::default(),
            augment_enabled: true,
            stratified_split: false,
            seeds: Seeds::default(),
            freeze_prefixes: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        self.augment.validate()?;
        BackboneKind::new(self.arch, self.width, self.input_size)?;
        Ok(())
    }

    /// Parses a JSON config; every field is optional and defaulted.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn backbone_kind(&self) -> Result<BackboneKind> {
        BackboneKind::new(self.arch, self.width, self.input_size)
    }

    /// Fresh model with weights drawn from the init seed.
    pub fn build_model(&self, num_classes: usize) -> Result<ModelGraph<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seeds.init);
        build_model(&self.backbone_kind()?, num_classes, &mut rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

pub fn records_to_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_accuracy\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.train_loss, r.val_loss, r.val_accuracy
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"KVF1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A complete snapshot of model weights plus batchnorm running stats.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: BackboneKind,
    pub class_names: Vec<String>,
    /// Parameters then buffers, each `(name, tensor)`, in graph order.
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub epoch: usize,
    pub val_loss: f64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    arch: BackboneKind,
    class_names: Vec<String>,
    epoch: usize,
    val_loss: f64,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn from_model(
        model: &ModelGraph<f32>,
        kind: BackboneKind,
        class_names: &[String],
        epoch: usize,
        val_loss: f64,
    ) -> Self {
        let mut tensors: Vec<(String, Tensor<f32>)> = model
            .parameters()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        tensors.extend(model.buffers().into_iter().map(|(n, t)| (n, t.clone())));
        Self {
            kind,
            class_names: class_names.to_vec(),
            tensors,
            epoch,
            val_loss,
        }
    }

    /// Builds a fresh model of this checkpoint's architecture and loads every
    /// tensor into it.
    pub fn instantiate(&self) -> Result<ModelGraph<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = build_model(&self.kind, self.class_names.len(), &mut rng)?;
        transfer_load(&mut model, self, TransferMode::Full)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut offset = 0u64;
        let entries: Vec<TensorEntry> = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    dtype: "f32".into(),
                    offset,
                };
                offset += (t.len() * 4) as u64;
                e
            })
            .collect();
        let header = serde_json::to_vec(&CheckpointHeader {
            version: CHECKPOINT_VERSION,
            arch: self.kind,
            class_names: self.class_names.clone(),
            epoch: self.epoch,
            val_loss: self.val_loss,
            tensors: entries,
        })
        .map_err(|e| Error::Checkpoint(e.to_string()))?;

        let mut file = std::fs::File::create(path)?;
        file.write_all(CHECKPOINT_MAGIC)?;
        file.write_all(&(header.len() as u32).to_le_bytes())?;
        file.write_all(&header)?;
        for (_, t) in &self.tensors {
            let mut bytes = Vec::with_capacity(t.len() * 4);
            for &v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            file.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if bytes.len() < 8 + header_len {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: CheckpointHeader = serde_json::from_slice(&bytes[8..8 + header_len])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                header.version
            )));
        }
        let payload = &bytes[8 + header_len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            if entry.dtype != "f32" {
                return Err(Error::Checkpoint(format!("unsupported dtype {}", entry.dtype)));
            }
            let n: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + n * 4;
            if payload.len() < end {
                return Err(Error::Checkpoint(format!(
                    "truncated payload for {}",
                    entry.name
                )));
            }
            let data: Vec<f32> = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((entry.name.clone(), Tensor::from_vec(&entry.shape, data)?));
        }
        Ok(Self {
            kind: header.arch,
            class_names: header.class_names,
            tensors,
            epoch: header.epoch,
            val_loss: header.val_loss,
        })
    }

    fn find(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferMode {
    /// Every model tensor must be present in the checkpoint.
    Full,
    /// Only tensors under `backbone.` are copied; head tensors keep their
    /// fresh initialization.
    BackboneOnly,
}

pub fn transfer_load(
    model: &mut ModelGraph<f32>,
    ckpt: &Checkpoint,
    mode: TransferMode,
) -> Result<()> {
    let wanted = |name: &str| match mode {
        TransferMode::Full => true,
        TransferMode::BackboneOnly => name.starts_with("backbone."),
    };
    let copy = |name: &str, dst: &mut Tensor<f32>| -> Result<()> {
        if !wanted(name) {
            return Ok(());
        }
        let src = ckpt
            .find(name)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint missing tensor {name}")))?;
        if src.shape() != dst.shape() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {name}: checkpoint {:?}, model {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        *dst = src.clone();
        Ok(())
    };
    // collect names first: parameters_mut borrows the whole graph
    for (name, t) in model.parameters_mut() {
        copy(&name, t)?;
    }
    for (name, t) in model.buffers_mut() {
        copy(&name, t)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

fn batch_loss_and_grad(
    model: &mut ModelGraph<f32>,
    batch: &Batch,
    mode: Mode,
) -> Result<(f64, Option<crate::graph::GradStore<f32>>)> {
    let (probs, cache) = model.forward(&batch.images, mode)?;
    let loss = cross_entropy(&batch.labels, &probs)?;
    if !loss.mean.is_finite() {
        return Err(Error::NonFiniteLoss(format!(
            "loss became {} at step",
            loss.mean
        )));
    }
    if mode == Mode::Infer {
        return Ok((loss.mean as f64, None));
    }
    let grad_out = loss_gradient(&batch.labels, &probs)?;
    let (grads, _) = model.backward(&cache, &grad_out)?;
    Ok((loss.mean as f64, Some(grads)))
}

/// One pass over the given batches with optimizer updates; returns the mean
/// train loss. Parameters matching a freeze prefix receive no update.
pub fn train_epoch(
    model: &mut ModelGraph<f32>,
    optimizer: &mut OptimizerState<f32>,
    batches: &[Batch],
    freeze_prefixes: &[String],
) -> Result<f64> {
    if batches.is_empty() {
        return Err(Error::Data("no training batches".into()));
    }
    let mut total = 0.0;
    for batch in batches {
        let (loss, grads) = batch_loss_and_grad(model, batch, Mode::Train)?;
        let mut grads = grads.expect("train mode returns gradients");
        grads.retain(|name, _| !freeze_prefixes.iter().any(|p| name.starts_with(p)));
        let mut params = model.parameters_mut();
        optimizer.step(&mut params, &grads)?;
        total += loss;
    }
    Ok(total / batches.len() as f64)
}

/// Mean loss and accuracy over batches in inference mode; mutates nothing.
pub fn validate(model: &mut ModelGraph<f32>, batches: &[Batch]) -> Result<(f64, f64)> {
    if batches.is_empty() {
        return Err(Error::Data("empty validation set".into()));
    }
    let mut total_loss = 0.0;
    let (mut correct, mut seen) = (0usize, 0usize);
    for batch in batches {
        let (probs, _) = model.forward(&batch.images, Mode::Infer)?;
        let loss = cross_entropy(&batch.labels, &probs)?;
        total_loss += loss.mean as f64;
        let pred = probs.argmax_rows()?;
        let truth = batch.labels.argmax_rows()?;
        correct += pred.iter().zip(&truth).filter(|(a, b)| a == b).count();
        seen += pred.len();
    }
    Ok((total_loss / batches.len() as f64, correct as f64 / seen as f64))
}

pub struct FitOutcome {
    pub best: Checkpoint,
    pub records: Vec<EpochRecord>,
    pub split: SplitIndices,
}

/// Full training run: split, train with per-epoch validation, return the
/// checkpoint from the minimum-validation-loss epoch (earliest on ties).
/// The test indices are produced but never read.
pub fn fit(config: &TrainConfig, dataset: &LabeledDataset) -> Result<FitOutcome> {
    config.validate()?;
    let split = split(dataset, config.seeds.split, config.stratified_split)?;
    fit_with_split(config, dataset, &split)
}

/// As [`fit`] but with a caller-supplied partition (used by transfer runs
/// that must share one split across arms).
pub fn fit_with_split(
    config: &TrainConfig,
    dataset: &LabeledDataset,
    split: &SplitIndices,
) -> Result<FitOutcome> {
    config.validate()?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::Data("train and val splits must be non-empty".into()));
    }
    debug_assert!(split.train.iter().all(|i| !split.test.contains(i)));
    debug_assert!(split.val.iter().all(|i| !split.test.contains(i)));

    let mut model = config.build_model(dataset.num_classes())?;
    let mut optimizer = OptimizerState::new(config.optimizer);
    let augment = config
        .augment_enabled
        .then_some((config.augment, config.seeds.augment));
    let train_batcher = Batcher::new(
        dataset,
        &split.train,
        config.batch_size,
        Some(config.seeds.shuffle),
        augment,
    )?;
    let val_batches =
        Batcher::new(dataset, &split.val, config.batch_size, None, None)?.epoch(0)?;

    let mut records = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut best_loss = f64::INFINITY;
    let mut since_best = 0usize;
    let kind = config.backbone_kind()?;
    for epoch in 0..config.epochs {
        let batches = train_batcher.epoch(epoch)?;
        let train_loss = train_epoch(&mut model, &mut optimizer, &batches, &config.freeze_prefixes)?;
        let (val_loss, val_accuracy) = validate(&mut model, &val_batches)?;
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
        if val_loss < best_loss {
            best_loss = val_loss;
            best = Some(Checkpoint::from_model(
                &model,
                kind,
                &dataset.class_names,
                epoch,
                val_loss,
            ));
            since_best = 0;
        } else {
            since_best += 1;
            if config.early_stop_patience > 0 && since_best >= config.early_stop_patience {
                break;
            }
        }
    }
    Ok(FitOutcome {
        best: best.expect("at least one epoch ran"),
        records,
        split: split.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synthetic_dataset, PATTERN_KINDS};

    fn small_config() -> TrainConfig {
        TrainConfig {
            input_size: 16,
            epochs: 2,
            early_stop_patience: 0,
            augment_enabled: false,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.input_size = 100; // not divisible by 16
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn config_json_defaults() {
        let cfg = TrainConfig::from_json("{\"epochs\": 7}").unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.arch, Arch::VggMini);
        assert!(TrainConfig::from_json("{\"epochs\": 0}").is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let cfg = small_config();
        let model = cfg.build_model(4).unwrap();
        let ckpt = Checkpoint::from_model(
            &model,
            cfg.backbone_kind().unwrap(),
            &["a".into(), "b".into(), "c".into(), "d".into()],
            3,
            0.5,
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(ckpt, back);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOPE\x00\x00\x00\x00").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn full_transfer_restores_model_exactly() {
        let cfg = small_config();
        let model = cfg.build_model(3).unwrap();
        let ckpt = Checkpoint::from_model(
            &model,
            cfg.backbone_kind().unwrap(),
            &["x".into(), "y".into(), "z".into()],
            0,
            1.0,
        );
        let restored = ckpt.instantiate().unwrap();
        for ((na, ta), (nb, tb)) in model.parameters().iter().zip(restored.parameters()) {
            assert_eq!(na, &nb);
            assert_eq!(*ta, tb);
        }
    }

    #[test]
    fn backbone_only_transfer_across_class_counts() {
        let cfg = small_config();
        let source = cfg.build_model(6).unwrap();
        let ckpt = Checkpoint::from_model(
            &source,
            cfg.backbone_kind().unwrap(),
            &(0..6).map(|i| i.to_string()).collect::<Vec<_>>(),
            0,
            1.0,
        );
        let mut target = cfg.build_model(3).unwrap();
        // full mode must fail: head shapes differ
        assert!(transfer_load(&mut target, &ckpt, TransferMode::Full).is_err());
        transfer_load(&mut target, &ckpt, TransferMode::BackboneOnly).unwrap();
        for (name, t) in target.parameters() {
            if name.starts_with("backbone.") {
                assert_eq!(Some(t), ckpt.find(&name).as_deref().as_ref().copied());
            }
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut cfg = small_config();
        cfg.optimizer.learning_rate = 0.0;
        let dataset = synthetic_dataset(&PATTERN_KINDS[..2], 4, 16, 1);
        let mut model = cfg.build_model(2).unwrap();
        let before: Vec<(String, Tensor<f32>)> = model
            .parameters()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        let batcher = Batcher::new(&dataset, &(0..8).collect::<Vec<_>>(), 4, None, None).unwrap();
        let mut opt = OptimizerState::new(cfg.optimizer);
        train_epoch(&mut model, &mut opt, &batcher.epoch(0).unwrap(), &[]).unwrap();
        for ((n, before), (_, after)) in before.iter().zip(model.parameters()) {
            assert_eq!(before, after, "{n} changed under lr 0");
        }
    }

    #[test]
    fn validate_is_side_effect_free() {
        let cfg = small_config();
        let dataset = synthetic_dataset(&PATTERN_KINDS[..2], 4, 16, 2);
        let mut model = cfg.build_model(2).unwrap();
        let batches = Batcher::new(&dataset, &(0..8).collect::<Vec<_>>(), 4, None, None)
            .unwrap()
            .epoch(0)
            .unwrap();
        let a = validate(&mut model, &batches).unwrap();
        let b = validate(&mut model, &batches).unwrap();
        assert_eq!(a, b);
        // chance-level loss on an untrained 2-class model is near ln 2
        assert!((a.0 - 2.0f64.ln()).abs() < 0.5, "loss {}", a.0);
    }
}
