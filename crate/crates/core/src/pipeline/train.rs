//! End-to-end training.

use log::info;

use crate::error::{Result, SparlowError, StageExt};
use crate::graphs::{build_pair, evaluate_pair, GraphSpec, StructurePair, Variant};
use crate::manifold::{Dictionary, ProductPoint, Projector};
use crate::objective::{Objective, ObjectiveReport, SparLowParams, DEFAULT_MU1, DEFAULT_MU2, DEFAULT_SIGMA};
use crate::optimizer::{optimize, CGConfig, CGTrace, StopReason};
use crate::pipeline::data::Dataset;
use crate::pipeline::init::{
    init_class_dictionaries, init_dictionary, init_projection, DictionaryFit, ProjectionFit,
};
use crate::pipeline::model::Model;
use crate::sparse::{batch_encode, CodeBatch, ElasticNetPrior};

pub const DEFAULT_LAMBDA1: f64 = 0.2;
pub const DEFAULT_LAMBDA2: f64 = 1e-3;

/// What is optimized after initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// CG over dictionary and projector.
    Joint,
    /// CG over the projector with the initial codes held fixed.
    FrozenDictionary,
    /// No CG: the trace-ratio projector on the initial codes.
    Sequential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub atoms: usize,
    pub dim: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub sigma: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub graph: GraphSpec,
    pub cg: CGConfig,
    pub dict_iters: usize,
    /// Learn one sub-dictionary per class when labels are available.
    pub class_dictionaries: bool,
    pub mode: TrainMode,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(variant: Variant, atoms: usize, dim: usize) -> Self {
        TrainConfig {
            atoms,
            dim,
            lambda1: DEFAULT_LAMBDA1,
            lambda2: DEFAULT_LAMBDA2,
            sigma: DEFAULT_SIGMA,
            mu1: DEFAULT_MU1,
            mu2: DEFAULT_MU2,
            graph: GraphSpec::new(variant),
            cg: CGConfig::default(),
            dict_iters: 10,
            class_dictionaries: variant.uses_labels(),
            mode: TrainMode::Joint,
            seed: 0,
        }
    }

    pub fn prior(&self) -> Result<ElasticNetPrior> {
        ElasticNetPrior::new(self.lambda1, self.lambda2)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: CGTrace,
    pub dictionary_fit: DictionaryFit,
    pub projection_fit: ProjectionFit,
    pub initial: ObjectiveReport,
    pub final_report: ObjectiveReport,
}

fn validate(dataset: &Dataset, config: &TrainConfig) -> Result<()> {
    let (m, n) = dataset.x.shape();
    if config.atoms == 0 || config.dim == 0 || config.dim >= config.atoms {
        return Err(SparlowError::Validation(format!(
            "need 1 ≤ dim < atoms, got dim = {}, atoms = {}",
            config.dim, config.atoms
        )));
    }
    if m == 0 || n < 2 {
        return Err(SparlowError::Validation("need at least 2 samples".into()));
    }
    let variant = config.graph.variant;
    match &dataset.labels {
        Some(l) if l.len() != n => {
            return Err(SparlowError::Validation(format!(
                "{} labels for {n} samples",
                l.len()
            )))
        }
        None if variant.uses_labels() && config.graph.targets.is_none() => {
            return Err(SparlowError::Validation(format!(
                "variant {variant} requires labels"
            )))
        }
        _ => {}
    }
    if variant.is_supervised()
        && config.graph.targets.is_none()
        && !dataset.labels.as_ref().is_some_and(|l| l.all_labeled())
    {
        return Err(SparlowError::DegenerateLabels(format!(
            "variant {variant} requires every sample to be labeled"
        )));
    }
    config.cg.validate()
}

/// Initial dictionary, codes, structure pair and projector.
pub struct Initialization {
    pub dictionary_fit: DictionaryFit,
    pub codes: CodeBatch,
    pub pair: StructurePair,
    pub projection_fit: ProjectionFit,
}

pub fn initialize(dataset: &Dataset, config: &TrainConfig) -> Result<Initialization> {
    validate(dataset, config).stage("validate")?;
    let prior = config.prior().stage("validate")?;
    let x = &dataset.x;

    let dictionary_fit = match (&dataset.labels, config.class_dictionaries) {
        (Some(labels), true) if labels.n_classes() > 0 => {
            init_class_dictionaries(x, labels, config.atoms, &prior, config.dict_iters, config.seed)
                .map(|(fit, _)| fit)
        }
        _ => init_dictionary(x, config.atoms, &prior, config.dict_iters, config.seed),
    }
    .stage("init_dictionary")?;
    let codes = batch_encode(x, dictionary_fit.dict.matrix(), &prior).stage("encode")?;
    let pair = build_pair(&config.graph, x, &codes, dataset.labels.as_ref()).stage("graph")?;
    let (a, b) = evaluate_pair(&pair, &codes.codes).stage("init_projection")?;
    let projection_fit = init_projection(&a, &b, config.dim, config.sigma).stage("init_projection")?;
    info!(
        "trace-ratio start: λ = {:.6} after {} updates",
        projection_fit.value(),
        projection_fit.lambdas.len()
    );
    Ok(Initialization {
        dictionary_fit,
        codes,
        pair,
        projection_fit,
    })
}

/// Dictionary learning, graph construction, trace-ratio start and CG.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let init = initialize(dataset, config)?;
    let prior = config.prior().stage("validate")?;
    let anchor = init.dictionary_fit.dict.clone();
    let params =
        SparLowParams::new(config.sigma, config.mu1, config.mu2, anchor.clone()).stage("validate")?;

    let objective = Objective::new(&dataset.x, &init.pair, prior, &params).stage("optimize")?;
    let objective = match config.mode {
        TrainMode::Joint => objective,
        _ => objective.with_frozen_codes(&init.codes),
    };
    let start = ProductPoint::new(anchor, init.projection_fit.proj.clone()).stage("optimize")?;
    let outcome = match config.mode {
        TrainMode::Sequential => {
            let eval = objective
                .evaluate(start.dict.matrix(), start.proj.matrix())
                .stage("optimize")?;
            crate::optimizer::CGOutcome {
                trace: CGTrace {
                    initial_j: eval.report.j_value,
                    records: Vec::new(),
                    stop: StopReason::MaxIterations,
                },
                point: start,
                evaluation: eval,
            }
        }
        _ => optimize(&objective, start, &config.cg).stage("optimize")?,
    };
    let initial = objective
        .evaluate(params.anchor.matrix(), init.projection_fit.proj.matrix())
        .stage("optimize")?
        .report;
    info!(
        "optimization: J {:.6} → {:.6} in {} iterations ({:?})",
        outcome.trace.initial_j,
        outcome.trace.final_j(),
        outcome.trace.iterations(),
        outcome.trace.stop
    );

    let (dict, proj) = finalize_point(outcome.point).stage("model")?;
    let mut graph = config.graph.clone();
    graph.targets = None;
    let model = Model::new(dict, proj, prior, params, graph).stage("model")?;
    Ok(TrainOutcome {
        model,
        trace: outcome.trace,
        dictionary_fit: init.dictionary_fit,
        projection_fit: init.projection_fit,
        initial,
        final_report: outcome.evaluation.report,
    })
}

fn finalize_point(point: ProductPoint) -> Result<(Dictionary, Projector)> {
    let ProductPoint { dict, proj } = point;
    if proj.check(1e-12, 1e-10).is_err() {
        return Ok((dict, proj.reprojected()?));
    }
    Ok((dict, proj))
}
