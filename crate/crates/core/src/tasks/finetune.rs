use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{Label, StudyRecord, TaskKind};
use super::metrics::{auc_binary, auc_macro, c_index, Summary};
use super::model::TaskModel;
use super::split::kfold_split;
use super::survival::{risk_score, SurvivalBins};
use crate::attention::DilationSchedule;
use crate::encoder::{EncoderConfig, EncoderGraph, EncoderWeights, Mode};
use crate::error::{Error, Result};
use crate::image::{load_patches, PipelineConfig};
use crate::par;
use crate::tensor::kernels::softmax_in_place;
use crate::tensor::{AdamW, AdamWConfig, Graph, LrSchedule, Tensor};

/// One example with its raw patches held in memory.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    /// `N × 3P²` normalized pixels.
    pub patches: Tensor,
    /// Patch grid (rows, cols).
    pub grid: (usize, usize),
    pub label: Label,
}

impl Sample {
    pub fn label_class(&self) -> usize {
        class_of(self)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub kind: TaskKind,
    pub samples: Vec<Sample>,
    /// Number of classes for subtyping; unused for survival.
    pub classes: usize,
    /// Fold per sample when every manifest row carried one.
    pub folds: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(kind: TaskKind, samples: Vec<Sample>, folds: Option<Vec<usize>>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::config("dataset is empty"));
        }
        let mut classes = 0;
        for s in &samples {
            match (kind, s.label) {
                (TaskKind::Subtype, Label::Class(c)) => classes = classes.max(c + 1),
                (TaskKind::Survival, Label::Survival { .. }) => {}
                _ => {
                    return Err(Error::config(format!(
                        "record {} does not fit a {kind} task",
                        s.id
                    )))
                }
            }
        }
        if kind == TaskKind::Subtype && classes < 2 {
            return Err(Error::config("subtyping needs at least two classes"));
        }
        if let Some(f) = &folds {
            if f.len() != samples.len() {
                return Err(Error::config("fold list does not match the samples"));
            }
        }
        Ok(Dataset {
            kind,
            samples,
            classes,
            folds,
        })
    }

    /// Reads and patchifies every record's image.
    pub fn load(
        records: &[StudyRecord],
        kind: TaskKind,
        pipeline: &PipelineConfig,
    ) -> Result<Self> {
        let grid = pipeline.grid()?;
        let samples = par::map_slice(records, |r| {
            Ok(Sample {
                id: r.id.clone(),
                patches: load_patches(&r.path, pipeline)?,
                grid: (grid.rows, grid.cols),
                label: r.label,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let folds = records.iter().map(|r| r.fold).collect::<Option<Vec<_>>>();
        Self::new(kind, samples, folds)
    }

    pub fn strata(&self) -> Vec<usize> {
        self.samples
            .iter()
            .map(|s| match s.label {
                Label::Class(c) => c,
                Label::Survival { event, .. } => usize::from(event),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub epochs: usize,
    /// Samples per forward/backward micro-batch.
    pub batch_size: usize,
    /// Micro-batches whose gradients are averaged into one optimizer step.
    pub accum: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    /// Fold count; `None` uses the task default (10 subtyping, 5 survival).
    pub folds: Option<usize>,
    pub seed: u64,
    pub schedule: DilationSchedule,
    pub survival_bins: usize,
}

impl FinetuneConfig {
    pub fn new(schedule: DilationSchedule) -> Self {
        FinetuneConfig {
            epochs: 10,
            batch_size: 8,
            accum: 1,
            lr: 5e-5,
            weight_decay: 0.05,
            warmup_epochs: 1,
            folds: None,
            seed: 0,
            schedule,
            survival_bins: 4,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.accum == 0 {
            return Err(Error::config(
                "epochs, batch size and accumulation steps must be positive",
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {} is invalid",
                self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    Bin { bin: usize, event: bool },
}

/// Loss and parameter gradients of one sample.
pub fn sample_gradients(
    model: &TaskModel,
    sample: &Sample,
    target: Target,
    schedule: &DilationSchedule,
    mode: &mut Mode,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let enc = EncoderGraph::new(&model.config, &model.encoder, true);
    let mut g = Graph::new();
    let x = g.constant_ref(&sample.patches);
    let (_, pooled) = enc.forward(&mut g, x, sample.grid, schedule, mode)?;
    let w = g.param("head.weight", &model.head.weight);
    let b = g.param("head.bias", &model.head.bias);
    let logits = g.matmul(pooled, w)?;
    let logits = g.add(logits, b)?;
    let loss = match target {
        Target::Class(c) => g.cross_entropy(logits, c)?,
        Target::Bin { bin, event } => g.survival_nll(logits, bin, event)?,
    };
    g.backward(loss)?;
    let mut grads = g.param_grads();
    // Branches skipped by drop-path never reach the tape.
    for (name, t) in model.named_params() {
        grads
            .entry(name)
            .or_insert_with(|| Tensor::zeros(t.shape()));
    }
    Ok((g.value(loss).data()[0], grads))
}

/// Head logits in evaluation mode.
pub fn predict(
    model: &TaskModel,
    sample: &Sample,
    schedule: &DilationSchedule,
) -> Result<Vec<f64>> {
    let enc = EncoderGraph::new(&model.config, &model.encoder, false);
    let mut g = Graph::new();
    let x = g.constant_ref(&sample.patches);
    let (_, pooled) = enc.forward(&mut g, x, sample.grid, schedule, &mut Mode::Eval)?;
    let w = g.constant_ref(&model.head.weight);
    let b = g.constant_ref(&model.head.bias);
    let logits = g.matmul(pooled, w)?;
    let logits = g.add(logits, b)?;
    Ok(g.value(logits).data().to_vec())
}

fn add_into(acc: &mut BTreeMap<String, Tensor>, grads: BTreeMap<String, Tensor>) {
    for (name, gr) in grads {
        match acc.get_mut(&name) {
            Some(a) => {
                for (x, y) in a.data_mut().iter_mut().zip(gr.data()) {
                    *x += y;
                }
            }
            None => {
                acc.insert(name, gr);
            }
        }
    }
}

/// Trains `model` on `train` (indices into `samples`) and returns the mean
/// loss of each epoch. Optimizer steps average per-sample gradients over
/// `batch_size × accum` samples, so splitting a step into micro-batches does
/// not change the update. The visiting order depends only on `seed`.
pub fn train(
    model: &mut TaskModel,
    samples: &[Sample],
    train: &[(usize, Target)],
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let group = cfg.batch_size * cfg.accum;
    let steps_per_epoch = train.len().div_ceil(group);
    let sched = LrSchedule {
        peak: cfg.lr,
        warmup_steps: cfg.warmup_epochs * steps_per_epoch,
        total_steps: cfg.epochs * steps_per_epoch,
    };
    let mut opt = AdamW::new(AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for step_items in order.chunks(group) {
            let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
            for micro in step_items.chunks(cfg.batch_size) {
                let jobs: Vec<(usize, u64)> = micro.iter().map(|&i| (i, rng.gen())).collect();
                let m = &*model;
                let results = par::map_slice(&jobs, |&(i, s)| {
                    let (idx, target) = train[i];
                    let mut drop_rng = ChaCha8Rng::seed_from_u64(s);
                    sample_gradients(
                        m,
                        &samples[idx],
                        target,
                        &cfg.schedule,
                        &mut Mode::Train(&mut drop_rng),
                    )
                });
                for r in results {
                    let (loss, grads) = r?;
                    epoch_loss += loss;
                    add_into(&mut acc, grads);
                }
            }
            let inv = 1.0 / step_items.len() as f64;
            for gr in acc.values_mut() {
                for v in gr.data_mut() {
                    *v *= inv;
                }
            }
            opt.step(model.named_params_mut(), &acc, sched.at(step))?;
            step += 1;
        }
        epoch_losses.push(epoch_loss / train.len() as f64);
    }
    Ok(epoch_losses)
}

/// Held-out metric for one fold: AUC (macro over classes when more than two)
/// or c-Index.
pub fn evaluate(
    model: &TaskModel,
    data: &Dataset,
    test: &[usize],
    schedule: &DilationSchedule,
) -> Result<f64> {
    let logits = par::map_slice(test, |&i| predict(model, &data.samples[i], schedule))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    match data.kind {
        TaskKind::Subtype => {
            let labels: Vec<usize> = test.iter().map(|&i| class_of(&data.samples[i])).collect();
            let mut probs = Vec::with_capacity(test.len() * data.classes);
            for mut l in logits {
                softmax_in_place(&mut l);
                probs.extend(l);
            }
            if data.classes == 2 {
                let p1: Vec<f64> = probs.iter().skip(1).step_by(2).copied().collect();
                let pos: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
                auc_binary(&p1, &pos)
            } else {
                auc_macro(&probs, data.classes, &labels)
            }
        }
        TaskKind::Survival => {
            let risks: Vec<f64> = logits.iter().map(|l| risk_score(l)).collect();
            let (times, events): (Vec<f64>, Vec<bool>) =
                test.iter().map(|&i| time_event(&data.samples[i])).unzip();
            c_index(&risks, &times, &events)
        }
    }
}

fn class_of(s: &Sample) -> usize {
    match s.label {
        Label::Class(c) => c,
        Label::Survival { .. } => 0,
    }
}

fn time_event(s: &Sample) -> (f64, bool) {
    match s.label {
        Label::Survival { time, event } => (time, event),
        Label::Class(_) => (0.0, false),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub metric: f64,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneReport {
    pub kind: TaskKind,
    pub folds: Vec<FoldResult>,
    pub summary: Summary,
}

impl fmt::Display for FinetuneReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self.kind.metric_name();
        for r in &self.folds {
            writeln!(
                f,
                "fold {:>2}: {name} {:.4}  (train {}, test {}, final loss {:.4})",
                r.fold, r.metric, r.train_size, r.test_size, r.final_loss
            )?;
        }
        write!(
            f,
            "{name} over {} folds: {}",
            self.folds.len(),
            self.summary
        )
    }
}

/// Fold assignment: the manifest's when present, else a stratified split.
pub fn assign_folds(data: &Dataset, cfg: &FinetuneConfig) -> Result<(Vec<usize>, usize)> {
    if let Some(f) = &data.folds {
        let k = f.iter().max().map_or(0, |m| m + 1);
        if let Some(want) = cfg.folds {
            if want != k {
                return Err(Error::config(format!(
                    "manifest defines {k} folds but {want} were requested"
                )));
            }
        }
        return Ok((f.clone(), k));
    }
    let k = cfg.folds.unwrap_or(data.kind.default_folds());
    Ok((kfold_split(&data.strata(), k, cfg.seed)?, k))
}

/// Cross-validated finetuning: every fold starts from `init` with a fresh
/// zero head, trains on the other folds and reports its held-out metric.
pub fn finetune(
    data: &Dataset,
    model_cfg: &EncoderConfig,
    init: &EncoderWeights,
    cfg: &FinetuneConfig,
) -> Result<FinetuneReport> {
    cfg.validate()?;
    let (folds, k) = assign_folds(data, cfg)?;
    let mut results = Vec::with_capacity(k);
    for fold in 0..k {
        let r = run_fold(data, model_cfg, init, cfg, &folds, fold).map_err(|e| Error::Fold {
            fold,
            source: Box::new(e),
        })?;
        log::info!("fold {fold}: {} {:.4}", data.kind.metric_name(), r.metric);
        results.push(r);
    }
    let metrics: Vec<f64> = results.iter().map(|r| r.metric).collect();
    Ok(FinetuneReport {
        kind: data.kind,
        summary: Summary::of(&metrics).ok_or_else(|| Error::config("no folds"))?,
        folds: results,
    })
}

fn run_fold(
    data: &Dataset,
    model_cfg: &EncoderConfig,
    init: &EncoderWeights,
    cfg: &FinetuneConfig,
    folds: &[usize],
    fold: usize,
) -> Result<FoldResult> {
    let test: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] == fold).collect();
    let train_idx: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] != fold).collect();
    if test.is_empty() || train_idx.is_empty() {
        return Err(Error::config("fold has no test or no training records"));
    }
    let (outputs, targets) = match data.kind {
        TaskKind::Subtype => (
            data.classes,
            train_idx
                .iter()
                .map(|&i| (i, Target::Class(class_of(&data.samples[i]))))
                .collect::<Vec<_>>(),
        ),
        TaskKind::Survival => {
            let events: Vec<f64> = train_idx
                .iter()
                .map(|&i| time_event(&data.samples[i]))
                .filter(|(_, e)| *e)
                .map(|(t, _)| t)
                .collect();
            let bins = SurvivalBins::from_event_times(&events, cfg.survival_bins)?;
            let targets = train_idx
                .iter()
                .map(|&i| {
                    let (time, event) = time_event(&data.samples[i]);
                    (
                        i,
                        Target::Bin {
                            bin: bins.bin(time),
                            event,
                        },
                    )
                })
                .collect();
            (bins.bins(), targets)
        }
    };
    let mut model = TaskModel::new(model_cfg.clone(), init.clone(), outputs);
    let fold_seed = cfg
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(fold as u64);
    let losses = train(&mut model, &data.samples, &targets, cfg, fold_seed)?;
    Ok(FoldResult {
        fold,
        train_size: train_idx.len(),
        test_size: test.len(),
        metric: evaluate(&model, data, &test, &cfg.schedule)?,
        final_loss: losses.last().copied().unwrap_or(f64::NAN),
    })
}
