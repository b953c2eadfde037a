//! Incremental task-stream orchestration: base-session training of the two
//! complementary adapter sets, prototype-based classifier growth, optional
//! calibration, and cumulative evaluation session by session.

use std::collections::{BTreeMap, BTreeSet};

use crate::backbone::{
    adapter_grads, backward, forward, AdapterSet, FrozenBackbone, MergedAdapterSet,
};
use crate::config::{FisherSection, StreamSection, TrainSection};
use crate::datagen::DatasetFixture;
use crate::error::{Result, SmpError};
use crate::margin::{loss, predict, CosineClassifier, LossKind};
use crate::metrics::{session_accuracy, ConfusionRecord};
use crate::miam::{export_merge_report, fis_weights, fisher_diag, merge_adapters, MergeReport};
use crate::mpcc::{
    borrow_covariance, calibrate, estimate_class_stats, BatchBuilder, ClassStats,
};
use crate::numerics::{DenseMatrix, DenseVector, SeededRng};

/// One task: its newly introduced classes, their training samples, and the
/// cumulative test set over every class seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionData {
    pub index: usize,
    pub new_classes: Vec<usize>,
    pub train: Vec<(Vec<f64>, usize)>,
    pub test: Vec<(Vec<f64>, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub sessions: Vec<SessionData>,
}

impl TaskStream {
    pub fn num_sessions(&self) -> usize {
        self.sessions.len()
    }

    /// Session in which a class is introduced.
    pub fn session_of(&self, class_id: usize) -> Option<usize> {
        self.sessions
            .iter()
            .position(|s| s.new_classes.contains(&class_id))
    }
}

/// Slice the fixture into a base session plus N-way K-shot increments with
/// mutually disjoint class sets and cumulative test sets.
pub fn build_stream(fixture: &DatasetFixture, stream: &StreamSection) -> Result<TaskStream> {
    let needed = stream.base_classes + stream.sessions * stream.n_way;
    if needed > fixture.spec.num_classes {
        return Err(SmpError::Config(format!(
            "stream needs {needed} classes, fixture has {}",
            fixture.spec.num_classes
        )));
    }
    if stream.k_shot > fixture.spec.samples_per_class_train {
        return Err(SmpError::Config(format!(
            "k_shot {} exceeds {} train samples per class",
            stream.k_shot, fixture.spec.samples_per_class_train
        )));
    }

    let mut train_by_class: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for (x, y) in fixture.train.iter_owned() {
        train_by_class.entry(y).or_default().push(x);
    }

    let class_range = |t: usize| -> Vec<usize> {
        if t == 0 {
            (0..stream.base_classes).collect()
        } else {
            let start = stream.base_classes + (t - 1) * stream.n_way;
            (start..start + stream.n_way).collect()
        }
    };

    let mut seen: BTreeSet<usize> = BTreeSet::new();
    let mut sessions = Vec::with_capacity(stream.sessions + 1);
    for t in 0..=stream.sessions {
        let new_classes = class_range(t);
        for c in &new_classes {
            if !seen.insert(*c) {
                return Err(SmpError::Protocol(format!("class {c} appears in two sessions")));
            }
        }
        let mut train = Vec::new();
        for c in &new_classes {
            let samples = train_by_class
                .get(c)
                .ok_or_else(|| SmpError::Input(format!("class {c} missing from fixture")))?;
            let take = if t == 0 { samples.len() } else { stream.k_shot };
            for x in samples.iter().take(take) {
                train.push((x.clone(), *c));
            }
        }
        let test: Vec<(Vec<f64>, usize)> = fixture
            .test
            .iter_owned()
            .filter(|(_, y)| seen.contains(y))
            .collect();
        sessions.push(SessionData { index: t, new_classes, train, test });
    }
    Ok(TaskStream { sessions })
}

/// Mean feature over the rows.
pub fn compute_prototype(features: &DenseMatrix) -> Result<DenseVector> {
    if features.rows() == 0 {
        return Err(SmpError::Input("no features for prototype".into()));
    }
    let mut proto = vec![0.0; features.cols()];
    for i in 0..features.rows() {
        for (p, v) in proto.iter_mut().zip(features.row(i)) {
            *p += v;
        }
    }
    for p in proto.iter_mut() {
        *p /= features.rows() as f64;
    }
    Ok(proto)
}

/// Both trained adapter sets with their classifiers, the merged update, the
/// merge diagnostics, and the base-class prototypes through the merged model.
#[derive(Debug, Clone)]
pub struct BaseTrainResult {
    pub adapters_d: AdapterSet,
    pub clf_d: CosineClassifier,
    pub adapters_g: AdapterSet,
    pub clf_g: CosineClassifier,
    pub merged: MergedAdapterSet,
    pub base_classes: Vec<usize>,
    pub base_prototypes: Vec<DenseVector>,
    pub merge_report: MergeReport,
}

fn add_adapter_grads(acc: &mut AdapterSet, grads: &AdapterSet) -> Result<()> {
    for (a, g) in acc.layers.iter_mut().zip(&grads.layers) {
        a.key.a.add_assign(&g.key.a)?;
        a.key.b.add_assign(&g.key.b)?;
        a.value.a.add_assign(&g.value.a)?;
        a.value.b.add_assign(&g.value.b)?;
    }
    Ok(())
}

fn step_adapters(adapters: &mut AdapterSet, grads: &AdapterSet, lr: f64) -> Result<()> {
    for (a, g) in adapters.layers.iter_mut().zip(&grads.layers) {
        a.key.a.step(&g.key.a, lr)?;
        a.key.b.step(&g.key.b, lr)?;
        a.value.a.step(&g.value.a, lr)?;
        a.value.b.step(&g.value.b, lr)?;
    }
    Ok(())
}

/// One adapter set + cosine classifier trained with per-batch SGD.
fn train_one_model(
    backbone: &FrozenBackbone,
    data: &[(Vec<f64>, usize)],
    column_of: &BTreeMap<usize, usize>,
    kind: LossKind,
    rank: usize,
    cfg: &TrainSection,
    rng: &mut SeededRng,
) -> Result<(AdapterSet, CosineClassifier)> {
    let d = backbone.config.embed_dim;
    let num_classes = column_of.len();
    let mut init_rng = rng.substream("init", 0);
    let mut adapters = AdapterSet::init(&backbone.config, rank, &mut init_rng)?;
    let weights = DenseMatrix::from_vec(d, num_classes, init_rng.normal_vec(d * num_classes, 0.02))?;
    let margin = match kind {
        LossKind::Discriminative => cfg.m,
        LossKind::Generalization => 0.0,
    };
    let mut clf = CosineClassifier::new(weights, cfg.s, margin)?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = rng.substream("shuffle", 0);
    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        for (step, chunk) in order.chunks(cfg.batch).enumerate() {
            let deltas = adapters.to_merged();
            let mut grad_adapters = adapters.zeros_like();
            let mut grad_w = DenseMatrix::zeros(d, num_classes);
            for &i in chunk {
                let (x, y) = &data[i];
                let col = *column_of
                    .get(y)
                    .ok_or_else(|| SmpError::Input(format!("label {y} outside base classes")))?;
                let trace = forward(backbone, &deltas, x)?;
                let lg = loss(kind, &trace.embedding, &clf, col)?;
                if !lg.loss.is_finite() {
                    return Err(SmpError::Numeric(format!(
                        "non-finite training loss at epoch {epoch} step {step}"
                    )));
                }
                let backbone_grads = backward(backbone, &trace, &lg.grad_f)?;
                add_adapter_grads(&mut grad_adapters, &adapter_grads(&adapters, &backbone_grads)?)?;
                grad_w.add_assign(&lg.grad_w)?;
            }
            let scale = cfg.lr / chunk.len() as f64;
            step_adapters(&mut adapters, &grad_adapters, scale)?;
            clf.weights.step(&grad_w, scale)?;
        }
    }
    Ok((adapters, clf))
}

fn features_through(
    backbone: &FrozenBackbone,
    deltas: &MergedAdapterSet,
    samples: &[&Vec<f64>],
) -> Result<DenseMatrix> {
    let mut out = DenseMatrix::zeros(samples.len(), backbone.config.embed_dim);
    for (i, x) in samples.iter().enumerate() {
        let trace = forward(backbone, deltas, x)?;
        out.row_mut(i).copy_from_slice(&trace.embedding);
    }
    Ok(out)
}

fn group_by_class<'a>(
    data: &'a [(Vec<f64>, usize)],
) -> BTreeMap<usize, Vec<&'a Vec<f64>>> {
    let mut grouped: BTreeMap<usize, Vec<&Vec<f64>>> = BTreeMap::new();
    for (x, y) in data {
        grouped.entry(*y).or_default().push(x);
    }
    grouped
}

/// Train the discriminative and generalization models independently on the
/// base session, estimate their Fisher magnitudes, merge the adapter updates,
/// and compute base prototypes through the merged model.
pub fn train_complementary(
    backbone: &FrozenBackbone,
    base: &SessionData,
    rank: usize,
    train_cfg: &TrainSection,
    fisher_cfg: &FisherSection,
    rng: &mut SeededRng,
) -> Result<BaseTrainResult> {
    if base.index != 0 {
        return Err(SmpError::Protocol("complementary training runs on the base session".into()));
    }
    if base.new_classes.len() < 2 {
        return Err(SmpError::Input("base session needs at least 2 classes".into()));
    }
    let mut base_classes = base.new_classes.clone();
    base_classes.sort_unstable();
    let column_of: BTreeMap<usize, usize> =
        base_classes.iter().enumerate().map(|(i, c)| (*c, i)).collect();

    let (adapters_d, clf_d) = train_one_model(
        backbone,
        &base.train,
        &column_of,
        LossKind::Discriminative,
        rank,
        train_cfg,
        &mut rng.substream("model-d", 0),
    )?;
    let (adapters_g, clf_g) = train_one_model(
        backbone,
        &base.train,
        &column_of,
        LossKind::Generalization,
        rank,
        train_cfg,
        &mut rng.substream("model-g", 0),
    )?;

    // Remap labels to classifier columns for the Fisher pass, on a seeded
    // subsample of the base training data.
    let mut fisher_data: Vec<(Vec<f64>, usize)> = base
        .train
        .iter()
        .map(|(x, y)| (x.clone(), column_of[y]))
        .collect();
    if fisher_cfg.subsample < fisher_data.len() {
        let mut order: Vec<usize> = (0..fisher_data.len()).collect();
        rng.substream("fisher-subsample", 0).shuffle(&mut order);
        order.truncate(fisher_cfg.subsample);
        order.sort_unstable();
        fisher_data = order.into_iter().map(|i| fisher_data[i].clone()).collect();
    }
    let fisher_d = fisher_diag(backbone, &adapters_d, &clf_d, &fisher_data)?;
    let fisher_g = fisher_diag(backbone, &adapters_g, &clf_g, &fisher_data)?;
    let weights = fis_weights(&fisher_d, &fisher_g)?;
    let merged = merge_adapters(&adapters_d, &adapters_g, &weights)?;
    let merge_report = export_merge_report(&fisher_d, &fisher_g, &weights);

    let grouped = group_by_class(&base.train);
    let mut base_prototypes = Vec::with_capacity(base_classes.len());
    for c in &base_classes {
        let features = features_through(backbone, &merged, &grouped[c])?;
        base_prototypes.push(compute_prototype(&features)?);
    }

    Ok(BaseTrainResult {
        adapters_d,
        clf_d,
        adapters_g,
        clf_g,
        merged,
        base_classes,
        base_prototypes,
        merge_report,
    })
}

/// Growing classifier: one column per seen class, plus the per-class Gaussian
/// statistics the calibration step needs.
#[derive(Debug, Clone)]
pub struct IncrementalState {
    pub weights: DenseMatrix,
    /// Column index -> class id.
    pub class_ids: Vec<usize>,
    /// Column index -> session the class was introduced in.
    pub class_sessions: Vec<usize>,
    pub next_session: usize,
    /// Estimated stats per base class, aligned with the base columns.
    base_stats: Vec<ClassStats>,
    /// Base-trained discriminative classifier, aligned with the base columns.
    clf_d: DenseMatrix,
}

impl IncrementalState {
    pub fn new(embed_dim: usize, clf_d: DenseMatrix) -> Self {
        IncrementalState {
            weights: DenseMatrix::zeros(embed_dim, 0),
            class_ids: Vec::new(),
            class_sessions: Vec::new(),
            next_session: 0,
            base_stats: Vec::new(),
            clf_d,
        }
    }

    pub fn num_seen(&self) -> usize {
        self.class_ids.len()
    }

    fn column_of(&self, class_id: usize) -> Option<usize> {
        self.class_ids.iter().position(|c| *c == class_id)
    }
}

/// Append one prototype column per new class, in class-id order, keeping
/// every existing column bitwise unchanged.
pub fn extend_classifier(
    state: &mut IncrementalState,
    new_classes: &[(usize, DenseVector)],
    session: usize,
) -> Result<()> {
    let d = state.weights.rows();
    let mut sorted: Vec<&(usize, DenseVector)> = new_classes.iter().collect();
    sorted.sort_by_key(|(c, _)| *c);
    let mut grown = DenseMatrix::zeros(d, state.num_seen() + sorted.len());
    for col in 0..state.num_seen() {
        grown.set_col(col, &state.weights.col(col));
    }
    let mut col = state.num_seen();
    for (class_id, proto) in sorted {
        if state.column_of(*class_id).is_some() {
            return Err(SmpError::Input(format!("class {class_id} already has a column")));
        }
        if proto.len() != d {
            return Err(SmpError::Shape(format!("prototype length {} != {d}", proto.len())));
        }
        grown.set_col(col, proto);
        state.class_ids.push(*class_id);
        state.class_sessions.push(session);
        col += 1;
    }
    state.weights = grown;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionMetrics {
    pub session: usize,
    pub accuracy: f64,
    pub records: Vec<ConfusionRecord>,
}

pub struct MpccSettings {
    pub per_class: usize,
    pub iters: usize,
    pub lr: f64,
}

/// Process one session against the frozen merged backbone: extract new-class
/// features, grow the classifier with prototypes, optionally calibrate, and
/// evaluate on the cumulative test set.
pub fn run_session(
    state: &mut IncrementalState,
    session: &SessionData,
    backbone: &FrozenBackbone,
    merged: &MergedAdapterSet,
    mpcc: Option<&MpccSettings>,
    train_cfg: &TrainSection,
    rng: &mut SeededRng,
) -> Result<SessionMetrics> {
    if session.index != state.next_session {
        return Err(SmpError::Protocol(format!(
            "session {} arrived, expected {}",
            session.index, state.next_session
        )));
    }

    let grouped = group_by_class(&session.train);
    {
        let expected: BTreeSet<usize> = session.new_classes.iter().copied().collect();
        let got: BTreeSet<usize> = grouped.keys().copied().collect();
        if expected != got {
            return Err(SmpError::Protocol(format!(
                "session {} train labels {got:?} do not match declared classes {expected:?}",
                session.index
            )));
        }
    }

    let mut new_features: Vec<(usize, DenseMatrix)> = Vec::with_capacity(grouped.len());
    for (class_id, samples) in &grouped {
        new_features.push((*class_id, features_through(backbone, merged, samples)?));
    }

    let prototypes: Vec<(usize, DenseVector)> = new_features
        .iter()
        .map(|(c, f)| Ok((*c, compute_prototype(f)?)))
        .collect::<Result<_>>()?;
    extend_classifier(state, &prototypes, session.index)?;

    if session.index == 0 {
        if state.clf_d.cols() != state.num_seen() {
            return Err(SmpError::Protocol(format!(
                "discriminative classifier has {} columns for {} base classes",
                state.clf_d.cols(),
                state.num_seen()
            )));
        }
        state.base_stats = new_features
            .iter()
            .map(|(_, f)| estimate_class_stats(f))
            .collect::<Result<_>>()?;
    } else if let Some(settings) = mpcc {
        // Base classes replay from their estimated Gaussians (prototype- and
        // classifier-centered), previously added few-shot classes from
        // borrowed-covariance Gaussians, current classes from real features.
        let base_count = state.base_stats.len();
        let base: Vec<(usize, &ClassStats, DenseVector)> = (0..base_count)
            .map(|col| (col, &state.base_stats[col], state.clf_d.col(col)))
            .collect();
        let mut pseudo_stats: Vec<(usize, ClassStats)> = Vec::new();
        for col in base_count..state.num_seen() {
            if state.class_sessions[col] == session.index {
                continue;
            }
            let proto = state.weights.col(col);
            pseudo_stats.push((col, borrow_covariance(&proto, &state.base_stats)?));
        }
        let pseudo: Vec<(usize, &ClassStats)> =
            pseudo_stats.iter().map(|(col, s)| (*col, s)).collect();
        let real: Vec<(usize, DenseMatrix)> = new_features
            .iter()
            .map(|(c, f)| {
                let col = state
                    .column_of(*c)
                    .ok_or_else(|| SmpError::Protocol(format!("class {c} missing column")))?;
                Ok((col, f.clone()))
            })
            .collect::<Result<_>>()?;
        let builder = BatchBuilder::new(&base, &pseudo, &real, settings.per_class)?;
        state.weights = calibrate(
            &state.weights,
            &builder,
            train_cfg.s,
            train_cfg.m,
            settings.lr,
            settings.iters,
            &mut rng.substream("calibrate", session.index as u64),
        )?;
    }

    // Cumulative evaluation, margin-free.
    let clf = CosineClassifier::new(state.weights.clone(), train_cfg.s, 0.0)?;
    let mut records = Vec::with_capacity(session.test.len());
    for (x, y) in &session.test {
        let true_col = state
            .column_of(*y)
            .ok_or_else(|| SmpError::Protocol(format!("test label {y} not yet seen")))?;
        let trace = forward(backbone, merged, x)?;
        let pred_col = predict(&trace.embedding, &clf)?;
        records.push(ConfusionRecord {
            true_class: *y,
            predicted_class: state.class_ids[pred_col],
            true_session: state.class_sessions[true_col],
            predicted_session: state.class_sessions[pred_col],
        });
    }
    let accuracy = session_accuracy(&records)?;
    state.next_session += 1;
    Ok(SessionMetrics { session: session.index, accuracy, records })
}
