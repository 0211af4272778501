//! The training loop: strategy dispatch per sample, batched optimizer
//! steps, post-epoch assignment logging, validation, and run artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::config::{RunConfig, Strategy};
use crate::analysis::{self, DecouplingReport, SwitchLog};
use crate::assignment::{self, sinkpit_beta_schedule, sinkpit_loss, SinkhornPlan};
use crate::autodiff::{clip_global_norm, write_tensors, Adam, PlateauScheduler, Tape, Var};
use crate::data::{self, DatasetConfig, MixtureSample};
use crate::dsd::{
    dsd_decide, DecisionKind, DsdConfig, DsdEpochStats, MemoryBank, MemoryBankEntry,
};
use crate::lo::{default_weights, LayerWeights};
use crate::metrics::{self, Metric};
use crate::model::{pairwise_si_sdr_nodes, ForwardPass, LayerScope, SeparatorModel};
use crate::types::{LossMatrix, Permutation, SampleId, Waveform};
use crate::{Error, Result};

/// One row of `epochs.csv`. Switching ratios are absent on the first
/// epoch (they compare adjacent epochs).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_si_sdri: f64,
    pub switch_ratios: Vec<Option<f64>>,
    pub drop_rate: f64,
    pub learning_rate: f64,
}

/// Everything a completed run produced, kept in memory for tests and
/// written to disk by [`run`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub strategy: String,
    pub records: Vec<EpochRecord>,
    pub decoupling: Option<DecouplingReport>,
    pub best_val_si_sdri: f64,
    pub best_epoch: usize,
    pub total_drops: usize,
    pub final_params: Vec<f64>,
    pub switch_log: SwitchLog,
    pub bank: MemoryBank,
}

#[derive(Serialize)]
struct FinalReport<'a> {
    strategy: &'a str,
    epochs: usize,
    best_val_si_sdri: f64,
    best_epoch: usize,
    final_train_loss: f64,
    total_drops: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    decoupling: &'a Option<DecouplingReport>,
}

const VAL_SEED_SALT: u64 = 0x76a1_51ab_9f2d_03c7;

fn validation_config(dataset: &DatasetConfig) -> DatasetConfig {
    DatasetConfig {
        n_samples: (dataset.n_samples / 5).max(1),
        seed: dataset.seed ^ VAL_SEED_SALT,
        ..dataset.clone()
    }
}

/// Loss entries (negated SI-SDR) read back from graph nodes, so the
/// selected permutation is consistent with the differentiated loss.
fn matrix_from_nodes(tape: &Tape, nodes: &[Vec<Var>]) -> Result<LossMatrix> {
    let n = nodes.len();
    let mut entries = Vec::with_capacity(n * n);
    for row in nodes {
        for &v in row {
            entries.push(-tape.value(v).item());
        }
    }
    LossMatrix::from_flat(n, entries)
}

/// Mean of `-si_sdr[i][perm(i)]` as a graph scalar.
fn perm_loss_node(tape: &mut Tape, nodes: &[Vec<Var>], perm: &Permutation) -> Result<Var> {
    let n = nodes.len();
    if perm.len() != n {
        return Err(Error::PermutationSize {
            perm: perm.len(),
            expected: n,
        });
    }
    let mut acc: Option<Var> = None;
    for (i, row) in nodes.iter().enumerate() {
        let v = row[perm.target_of(i)];
        acc = Some(match acc {
            Some(a) => tape.add(a, v)?,
            None => v,
        });
    }
    Ok(tape.scale(acc.expect("n >= 1"), -1.0 / n as f64))
}

/// `(1/n) * sum_ij gamma[i][j] * (-si_sdr[i][j])` with gamma held
/// constant.
fn soft_loss_node(tape: &mut Tape, nodes: &[Vec<Var>], plan: &SinkhornPlan) -> Result<Var> {
    let n = nodes.len();
    let mut acc: Option<Var> = None;
    for (i, row) in nodes.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let term = tape.scale(v, -plan.gamma(i, j) / n as f64);
            acc = Some(match acc {
                Some(a) => tape.add(a, term)?,
                None => term,
            });
        }
    }
    Ok(acc.expect("n >= 1"))
}

/// Weighted per-layer losses: `(1/n_layers) * sum_l w_l * loss_l` where
/// `loss_l` is the mean pair loss on layer `l` under `perms[l]`.
fn layerwise_loss_node(
    tape: &mut Tape,
    layer_nodes: &[Vec<Vec<Var>>],
    perms: &[Permutation],
    weights: &LayerWeights,
) -> Result<Var> {
    let n_layers = layer_nodes.len();
    let mut acc: Option<Var> = None;
    for ((nodes, perm), &w) in layer_nodes.iter().zip(perms).zip(weights.values()) {
        let layer = perm_loss_node(tape, nodes, perm)?;
        let term = tape.scale(layer, w);
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok(tape.scale(acc.expect("n_layers >= 1"), 1.0 / n_layers as f64))
}

/// What label a sample adopted this epoch, for the switch log. A sample
/// only counts as "switched" when it actually adopts a new assignment:
/// a rejected switch (dropout) keeps the previously logged labels, and a
/// pinned assignment (reorder, frozen PIT) logs the pinned permutation.
enum LabelOutcome {
    /// Trained under its freshly selected assignment; log the measured one.
    Adopt,
    /// Switch rejected and sample dropped; keep last epoch's labels.
    Freeze,
    /// Trained with `perm` on the final layer only.
    PinFinal(Permutation),
    /// Trained with `perm` on every layer.
    PinAll(Permutation),
}

/// Forward one sample and assemble its strategy loss. `None` means the
/// sample dropped out of this step.
#[allow(clippy::too_many_arguments)]
fn sample_step(
    model: &SeparatorModel,
    sample: &MixtureSample,
    strategy: &Strategy,
    epoch: usize,
    total_epochs: usize,
    weights: &LayerWeights,
    scope: LayerScope,
    bank: &mut MemoryBank,
    epoch_stats: &mut DsdEpochStats,
) -> Result<(Tape, ForwardPass, Option<Var>, LabelOutcome)> {
    let mut tape = Tape::new();
    let pass = model.forward(&mut tape, &sample.mixture, scope, true)?;

    let mut layer_nodes: Vec<Vec<Vec<Var>>> = Vec::with_capacity(pass.estimates.len());
    let mut layer_matrices: Vec<LossMatrix> = Vec::with_capacity(pass.estimates.len());
    for ests in &pass.estimates {
        let nodes = pairwise_si_sdr_nodes(&mut tape, ests, &sample.targets)?;
        let matrix = matrix_from_nodes(&tape, &nodes)?;
        layer_nodes.push(nodes);
        layer_matrices.push(matrix);
    }
    let final_nodes = layer_nodes.last().expect("at least one decoded layer");
    let final_matrix = layer_matrices.last().expect("at least one decoded layer");

    let mut outcome = LabelOutcome::Adopt;
    let loss = match strategy {
        Strategy::Pit => {
            let sel = assignment::pit_select(final_matrix)?;
            Some(perm_loss_node(&mut tape, final_nodes, &sel.permutation)?)
        }
        Strategy::PitFix { fix_epoch } => {
            if epoch <= *fix_epoch {
                let sel = assignment::pit_select(final_matrix)?;
                // the bank entry is overwritten every epoch, so after
                // epoch fix_epoch it holds that epoch's assignment
                bank.insert(MemoryBankEntry {
                    sample_id: sample.id,
                    best_metric: -sel.total_loss,
                    best_assignment: sel.permutation.clone(),
                    updated_epoch: epoch,
                });
                Some(perm_loss_node(&mut tape, final_nodes, &sel.permutation)?)
            } else {
                let perm = bank
                    .get(sample.id)
                    .ok_or(Error::UnknownSample(sample.id.0))?
                    .best_assignment
                    .clone();
                outcome = LabelOutcome::PinFinal(perm.clone());
                Some(perm_loss_node(&mut tape, final_nodes, &perm)?)
            }
        }
        Strategy::Sinkpit {
            beta_start,
            beta_end,
            iterations,
        } => {
            let beta = sinkpit_beta_schedule(epoch, total_epochs, *beta_start, *beta_end);
            let (_, plan) = sinkpit_loss(final_matrix, beta, *iterations)?;
            Some(soft_loss_node(&mut tape, final_nodes, &plan)?)
        }
        Strategy::Dsd {
            epsilon,
            mode,
            overwrite_on_keep,
        } => {
            let sel = assignment::pit_select(final_matrix)?;
            let dsd_config = DsdConfig {
                epsilon: *epsilon,
                mode: *mode,
                overwrite_on_keep: *overwrite_on_keep,
            };
            let decision = dsd_decide(
                sample.id,
                epoch,
                &sel.permutation,
                -sel.total_loss,
                bank,
                &dsd_config,
            )?;
            match decision.kind {
                DecisionKind::Dropout => {
                    epoch_stats.record_drop(sample.id);
                    outcome = LabelOutcome::Freeze;
                    None
                }
                DecisionKind::Reorder => {
                    let sigma = decision.assignment_to_use.expect("reorder carries sigma");
                    outcome = LabelOutcome::PinFinal(sigma.clone());
                    Some(perm_loss_node(&mut tape, final_nodes, &sigma)?)
                }
                _ => Some(perm_loss_node(&mut tape, final_nodes, &sel.permutation)?),
            }
        }
        Strategy::Lo { .. } => {
            let perms = layer_matrices
                .iter()
                .map(|m| assignment::pit_select(m).map(|s| s.permutation))
                .collect::<Result<Vec<_>>>()?;
            Some(layerwise_loss_node(&mut tape, &layer_nodes, &perms, weights)?)
        }
        Strategy::DsdLo {
            epsilon,
            mode,
            overwrite_on_keep,
            ..
        } => {
            let sel = assignment::pit_select(final_matrix)?;
            let dsd_config = DsdConfig {
                epsilon: *epsilon,
                mode: *mode,
                overwrite_on_keep: *overwrite_on_keep,
            };
            let decision = dsd_decide(
                sample.id,
                epoch,
                &sel.permutation,
                -sel.total_loss,
                bank,
                &dsd_config,
            )?;
            match decision.kind {
                DecisionKind::Dropout => {
                    epoch_stats.record_drop(sample.id);
                    outcome = LabelOutcome::Freeze;
                    None
                }
                DecisionKind::Reorder => {
                    let sigma = decision.assignment_to_use.expect("reorder carries sigma");
                    outcome = LabelOutcome::PinAll(sigma.clone());
                    let perms = vec![sigma; layer_nodes.len()];
                    Some(layerwise_loss_node(&mut tape, &layer_nodes, &perms, weights)?)
                }
                _ => {
                    let perms = layer_matrices
                        .iter()
                        .map(|m| assignment::pit_select(m).map(|s| s.permutation))
                        .collect::<Result<Vec<_>>>()?;
                    Some(layerwise_loss_node(&mut tape, &layer_nodes, &perms, weights)?)
                }
            }
        }
    };
    Ok((tape, pass, loss, outcome))
}

fn estimates_as_waveforms(tape: &Tape, ests: &[Var]) -> Result<Vec<Waveform>> {
    ests.iter()
        .map(|&v| Waveform::new(tape.value(v).data().to_vec()))
        .collect()
}

/// Train without touching the filesystem; [`run`] adds the artifacts.
pub fn train(config: &RunConfig) -> Result<RunSummary> {
    train_inner(config, None)
}

/// Train and write `epochs.csv`, `decoupling.json`, `bank.txt`,
/// `report.json` and periodic checkpoints under `config.out_dir`.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    fs::create_dir_all(&config.out_dir)?;
    let summary = train_inner(config, Some(&config.out_dir))?;
    write_artifacts(config, &summary)?;
    Ok(summary)
}

fn train_inner(config: &RunConfig, checkpoint_dir: Option<&Path>) -> Result<RunSummary> {
    config.validate()?;
    let train_set = data::generate(&config.dataset)?;
    let val_set = data::generate(&validation_config(&config.dataset))?;
    let n_blocks = config.model.n_blocks;

    let mut model = SeparatorModel::init(config.model.clone(), config.seed)?;
    let mut params = model.flatten();
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut scheduler = PlateauScheduler::new(config.learning_rate);
    let mut bank = MemoryBank::new();
    let weights = match &config.strategy {
        Strategy::Lo { weights: Some(w) } | Strategy::DsdLo { weights: Some(w), .. } => {
            LayerWeights::new(w.clone())?
        }
        _ => default_weights(n_blocks)?,
    };
    let scope = if config.strategy.uses_all_layers() {
        LayerScope::All
    } else {
        LayerScope::FinalOnly
    };

    let mut switch_log = SwitchLog::new();
    let mut records: Vec<EpochRecord> = Vec::with_capacity(config.epochs);
    let mut total_drops = 0usize;

    for epoch in 1..=config.epochs {
        adam.lr = scheduler.lr();
        let lr_used = scheduler.lr();
        let batches =
            data::epoch_batches(train_set.len(), config.batch_size, epoch, config.seed)?;
        let mut epoch_stats = DsdEpochStats::new(train_set.len());
        let mut batch_losses = Vec::with_capacity(batches.len());
        let mut label_overrides: BTreeMap<SampleId, LabelOutcome> = BTreeMap::new();

        for batch in &batches {
            model.load_flat(&params)?;
            let mut grad_acc = vec![0.0f64; params.len()];
            let mut kept_losses: Vec<f64> = Vec::with_capacity(batch.len());
            for &idx in batch {
                let sample = &train_set[idx];
                let (tape, pass, loss, outcome) = sample_step(
                    &model,
                    sample,
                    &config.strategy,
                    epoch,
                    config.epochs,
                    &weights,
                    scope,
                    &mut bank,
                    &mut epoch_stats,
                )?;
                match outcome {
                    LabelOutcome::Adopt => {}
                    other => {
                        label_overrides.insert(sample.id, other);
                    }
                }
                if let Some(loss) = loss {
                    kept_losses.push(tape.value(loss).item());
                    let grads = tape.backward(loss)?;
                    for (a, g) in grad_acc.iter_mut().zip(model.flat_grads(&grads, &pass)) {
                        *a += g;
                    }
                }
            }
            if kept_losses.is_empty() {
                // every sample dropped: no optimizer step
                batch_losses.push(0.0);
                continue;
            }
            let inv = 1.0 / kept_losses.len() as f64;
            for g in grad_acc.iter_mut() {
                *g *= inv;
            }
            clip_global_norm(&mut grad_acc, config.clip_norm);
            adam.step(&mut params, &grad_acc);
            batch_losses.push(kept_losses.iter().sum::<f64>() * inv);
        }
        model.load_flat(&params)?;
        let train_loss = batch_losses.iter().sum::<f64>() / batch_losses.len() as f64;

        // post-epoch assignment snapshot over the full training set,
        // every block, in sample-id order
        let mut layer_maps = vec![BTreeMap::new(); n_blocks];
        for sample in &train_set {
            let mut tape = Tape::new();
            let pass = model.forward(&mut tape, &sample.mixture, LayerScope::All, false)?;
            for (l, ests) in pass.estimates.iter().enumerate() {
                let waves = estimates_as_waveforms(&tape, ests)?;
                let matrix = metrics::pairwise_loss_matrix(&waves, &sample.targets)?;
                let sel = assignment::pit_select(&matrix)?;
                layer_maps[l].insert(sample.id, sel.permutation);
            }
        }
        // a sample that adopted no new assignment this epoch is not a
        // switch: frozen samples keep their previously logged labels and
        // pinned samples log the permutation they were trained toward
        for (id, outcome) in &label_overrides {
            match outcome {
                LabelOutcome::Adopt => {}
                LabelOutcome::Freeze => {
                    if let Some(prev) = switch_log.last_epoch() {
                        for (l, prev_layer) in prev.iter().enumerate() {
                            let perm = prev_layer
                                .get(id)
                                .ok_or(Error::UnknownSample(id.0))?
                                .clone();
                            layer_maps[l].insert(*id, perm);
                        }
                    }
                }
                LabelOutcome::PinFinal(perm) => {
                    layer_maps[n_blocks - 1].insert(*id, perm.clone());
                }
                LabelOutcome::PinAll(perm) => {
                    for layer in layer_maps.iter_mut() {
                        layer.insert(*id, perm.clone());
                    }
                }
            }
        }
        switch_log.push_epoch(layer_maps)?;

        // validation SI-SDR improvement on the final layer
        let mut val_sum = 0.0;
        for sample in &val_set {
            let mut tape = Tape::new();
            let pass = model.forward(&mut tape, &sample.mixture, LayerScope::FinalOnly, false)?;
            let waves = estimates_as_waveforms(&tape, pass.estimates.last().expect("final"))?;
            let matrix = metrics::pairwise_loss_matrix(&waves, &sample.targets)?;
            let sel = assignment::pit_select(&matrix)?;
            let mut improvement = 0.0;
            for (i, est) in waves.iter().enumerate() {
                improvement += metrics::metric_improvement(
                    est,
                    &sample.targets[sel.permutation.target_of(i)],
                    &sample.mixture,
                    Metric::SiSdr,
                )?;
            }
            val_sum += improvement / waves.len() as f64;
        }
        let val_si_sdri = val_sum / val_set.len() as f64;

        let switch_ratios = if epoch >= 2 {
            (0..n_blocks)
                .map(|l| switch_log.switching_ratio(epoch, l).map(Some))
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![None; n_blocks]
        };
        total_drops += epoch_stats.dropped_count();
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_si_sdri,
            switch_ratios,
            drop_rate: epoch_stats.drop_rate(),
            learning_rate: lr_used,
        });
        scheduler.observe(epoch, val_si_sdri);

        if let Some(dir) = checkpoint_dir {
            if epoch % 10 == 0 {
                let named: Vec<(String, &crate::autodiff::Tensor)> = model
                    .named_params()
                    .map(|(n, t)| (n.to_string(), t))
                    .collect();
                let file = fs::File::create(dir.join(format!("checkpoint_epoch_{epoch}.txt")))?;
                write_tensors(file, &named)?;
            }
        }
    }

    let (best_epoch, best_val_si_sdri) = records
        .iter()
        .map(|r| (r.epoch, r.val_si_sdri))
        .fold((0, f64::NEG_INFINITY), |acc, (e, v)| {
            if v > acc.1 {
                (e, v)
            } else {
                acc
            }
        });
    let decoupling = if n_blocks >= 2 {
        Some(analysis::decoupling_report(&switch_log)?)
    } else {
        None
    };
    Ok(RunSummary {
        strategy: config.strategy.name().to_string(),
        records,
        decoupling,
        best_val_si_sdri,
        best_epoch,
        total_drops,
        final_params: params,
        switch_log,
        bank,
    })
}

/// `epochs.csv` serialization: header then one row per epoch, columns in
/// [`EpochRecord`] field order, switch ratios expanded per layer.
pub fn write_epochs_csv<W: std::io::Write>(
    records: &[EpochRecord],
    n_layers: usize,
    mut w: W,
) -> Result<()> {
    let mut header = vec!["epoch".to_string(), "train_loss".into(), "val_si_sdri".into()];
    header.extend((1..=n_layers).map(|l| format!("switch_layer_{l}")));
    header.push("drop_rate".into());
    header.push("learning_rate".into());
    writeln!(w, "{}", header.join(","))?;
    for r in records {
        let mut row = vec![
            r.epoch.to_string(),
            format!("{}", r.train_loss),
            format!("{}", r.val_si_sdri),
        ];
        for l in 0..n_layers {
            match r.switch_ratios.get(l).copied().flatten() {
                Some(v) => row.push(format!("{v}")),
                None => row.push(String::new()),
            }
        }
        row.push(format!("{}", r.drop_rate));
        row.push(format!("{}", r.learning_rate));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_epochs_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty csv".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let n_layers = cols
        .iter()
        .filter(|c| c.starts_with("switch_layer_"))
        .count();
    if cols.len() != 5 + n_layers {
        return Err(Error::Parse(format!("unexpected csv header: {header:?}")));
    }
    let field = |s: &str, what: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Parse(format!("bad {what}: {s:?}")))
    };
    let mut records = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != cols.len() {
            return Err(Error::Parse(format!("short csv row: {line:?}")));
        }
        let switch_ratios = (0..n_layers)
            .map(|l| {
                let s = parts[3 + l];
                if s.is_empty() {
                    Ok(None)
                } else {
                    field(s, "switch ratio").map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(EpochRecord {
            epoch: parts[0]
                .parse()
                .map_err(|_| Error::Parse(format!("bad epoch: {:?}", parts[0])))?,
            train_loss: field(parts[1], "train loss")?,
            val_si_sdri: field(parts[2], "validation score")?,
            switch_ratios,
            drop_rate: field(parts[3 + n_layers], "drop rate")?,
            learning_rate: field(parts[4 + n_layers], "learning rate")?,
        });
    }
    Ok(records)
}

fn write_artifacts(config: &RunConfig, summary: &RunSummary) -> Result<()> {
    let dir = &config.out_dir;
    let mut csv = fs::File::create(dir.join("epochs.csv"))?;
    write_epochs_csv(&summary.records, config.model.n_blocks, &mut csv)?;
    if let Some(decoupling) = &summary.decoupling {
        fs::write(
            dir.join("decoupling.json"),
            serde_json::to_string_pretty(decoupling)?,
        )?;
    }
    let mut bank_file = fs::File::create(dir.join("bank.txt"))?;
    summary.bank.write_to(&mut bank_file)?;
    let report = FinalReport {
        strategy: &summary.strategy,
        epochs: config.epochs,
        best_val_si_sdri: summary.best_val_si_sdri,
        best_epoch: summary.best_epoch,
        final_train_loss: summary.records.last().map_or(0.0, |r| r.train_loss),
        total_drops: summary.total_drops,
        decoupling: &summary.decoupling,
    };
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(())
}
