//! End-to-end run: pretraining the surrogate encoder, base-task training of
//! the complementary adapter sets, and the incremental session loop, wired
//! together from a single seeded config into a final report.

use crate::backbone::{pretrain_backbone, FrozenBackbone, MergedAdapterSet};
use crate::config::RunConfig;
use crate::datagen::DatasetFixture;
use crate::error::{Result, SmpError};
use crate::metrics::{fnr_fpr, harmonic_accuracy, session_accuracy, RunReport};
use crate::numerics::SeededRng;
use crate::protocol::{
    build_stream, run_session, train_complementary, BaseTrainResult, IncrementalState,
    MpccSettings, SessionMetrics, TaskStream,
};

/// Which trained update blocks drive the incremental sessions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelVariant {
    /// Fisher-weighted merge of both sets (the full method).
    Merged,
    /// Margin-trained set alone.
    DiscriminativeOnly,
    /// Plain-loss set alone.
    GeneralizationOnly,
}

impl ModelVariant {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "merged" => Ok(ModelVariant::Merged),
            "discriminative" => Ok(ModelVariant::DiscriminativeOnly),
            "generalization" => Ok(ModelVariant::GeneralizationOnly),
            other => Err(SmpError::Config(format!(
                "unknown model variant {other:?}; expected merged|discriminative|generalization"
            ))),
        }
    }

    pub fn select(&self, result: &BaseTrainResult) -> MergedAdapterSet {
        match self {
            ModelVariant::Merged => result.merged.clone(),
            ModelVariant::DiscriminativeOnly => result.adapters_d.to_merged(),
            ModelVariant::GeneralizationOnly => result.adapters_g.to_merged(),
        }
    }
}

/// Pretrain the encoder on the pretext split; epochs and learning rate are
/// shared with the base-training section.
pub fn pretrain_stage(fixture: &DatasetFixture, config: &RunConfig) -> Result<(FrozenBackbone, f64)> {
    config.validate()?;
    let backbone_config = config.backbone.to_backbone_config();
    if fixture.spec.num_patches != config.backbone.num_patches {
        return Err(SmpError::Config(format!(
            "config has {} patches, fixture has {}",
            config.backbone.num_patches, fixture.spec.num_patches
        )));
    }
    let pretext: Vec<(Vec<f64>, usize)> = fixture.pretext_train.iter_owned().collect();
    let holdout: Vec<(Vec<f64>, usize)> = fixture.pretext_test.iter_owned().collect();
    let mut rng = SeededRng::new(config.seed).substream("pretrain", 0);
    pretrain_backbone(
        &backbone_config,
        fixture.spec.patch_dim,
        &pretext,
        &holdout,
        config.train.epochs,
        config.train.lr,
        &mut rng,
    )
}

/// Base-session complementary training on the stream's first task.
pub fn base_stage(
    backbone: &FrozenBackbone,
    stream: &TaskStream,
    config: &RunConfig,
) -> Result<BaseTrainResult> {
    let mut rng = SeededRng::new(config.seed).substream("train-base", 0);
    train_complementary(
        backbone,
        &stream.sessions[0],
        config.backbone.r,
        &config.train,
        &config.fisher,
        &mut rng,
    )
}

/// Run every session in order against the frozen backbone + chosen deltas.
pub fn fscil_stage(
    backbone: &FrozenBackbone,
    deltas: &MergedAdapterSet,
    result: &BaseTrainResult,
    stream: &TaskStream,
    config: &RunConfig,
    mpcc_enabled: bool,
) -> Result<Vec<SessionMetrics>> {
    let settings = MpccSettings {
        per_class: config.mpcc.per_class,
        iters: config.mpcc.iters,
        lr: config.mpcc.lr,
    };
    let mpcc = if mpcc_enabled { Some(&settings) } else { None };
    let mut state =
        IncrementalState::new(backbone.config.embed_dim, result.clf_d.weights.clone());
    let mut rng = SeededRng::new(config.seed).substream("sessions", 0);
    stream
        .sessions
        .iter()
        .map(|s| run_session(&mut state, s, backbone, deltas, mpcc, &config.train, &mut rng))
        .collect()
}

/// Fold per-session metrics into the final report.
pub fn summarize(sessions: &[SessionMetrics], config: &RunConfig) -> Result<RunReport> {
    if sessions.is_empty() {
        return Err(SmpError::Input("no sessions to summarize".into()));
    }
    let a_t: Vec<f64> = sessions.iter().map(|s| s.accuracy).collect();
    let a_avg = a_t.iter().sum::<f64>() / a_t.len() as f64;
    let final_records = &sessions.last().unwrap().records;
    let base: Vec<_> = final_records.iter().filter(|r| r.true_session == 0).copied().collect();
    let new: Vec<_> = final_records.iter().filter(|r| r.true_session > 0).copied().collect();
    let a_base = session_accuracy(&base)?;
    let a_new = if new.is_empty() { 0.0 } else { session_accuracy(&new)? };
    let hacc = harmonic_accuracy(a_base, a_new)?;
    let (fnr, fpr) = if new.is_empty() { (0.0, 0.0) } else { fnr_fpr(final_records)? };
    Ok(RunReport {
        a_final: *a_t.last().unwrap(),
        a_t,
        a_avg,
        a_base,
        a_new,
        hacc,
        fnr,
        fpr,
        seed: config.seed,
        config: serde_json::to_value(config)?,
    })
}

/// Everything a full in-memory run produces.
pub struct PipelineRun {
    pub backbone: FrozenBackbone,
    pub base: BaseTrainResult,
    pub deltas: MergedAdapterSet,
    pub sessions: Vec<SessionMetrics>,
    pub report: RunReport,
}

/// Fixture in, report out: pretrain, train the base task, run all sessions.
/// `mpcc_enabled` overrides the config toggle when given.
pub fn run_pipeline(
    fixture: &DatasetFixture,
    config: &RunConfig,
    variant: ModelVariant,
    mpcc_enabled: Option<bool>,
) -> Result<PipelineRun> {
    config.validate()?;
    let stream = build_stream(fixture, &config.stream)?;
    let (backbone, _) = pretrain_stage(fixture, config)?;
    let base = base_stage(&backbone, &stream, config)?;
    let deltas = variant.select(&base);
    let mpcc = mpcc_enabled.unwrap_or(config.mpcc.enabled);
    let sessions = fscil_stage(&backbone, &deltas, &base, &stream, config, mpcc)?;
    let report = summarize(&sessions, config)?;
    Ok(PipelineRun { backbone, base, deltas, sessions, report })
}
