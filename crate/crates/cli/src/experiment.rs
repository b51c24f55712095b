//! The four-model experiment ladder, early stopping, and report assembly.
//!
//! Ladder models over 28×28 grayscale classification data:
//! 1. `ls` — plain least squares ‖Xθ−Y‖² + ‖θ‖², nothing tuned.
//! 2. `ls_reg2` — two tuned regularization weights: ridge + grid smoothness.
//! 3. `ls_reg3_feat` — archetype softmax features (x, s(−d(x)/e^σ), 1) with
//!    a tuned temperature and three tuned regularization weights.
//! 4. `ls_reg3_feat_weight` — adds one tuned log-weight per training
//!    example, constrained to sum to zero and ridge-regularized.

use std::cell::{Cell, RefCell};
use std::path::Path;
use std::time::Instant;

use lsqtune::datafit::{self, Dataset, FitProblem, Penalty, RegularizerTerm};
use lsqtune::featurize::{grid_incidence, ArchetypeSet, ArchetypeSoftmax, Identity};
use lsqtune::matrix::{self, DenseMatrix};
use lsqtune::tuner::{
    self, HyperVector, ProxRegularizer, SegmentProx, SegmentedReg, UniformReg,
};

use crate::config::{ExperimentConfig, Model};
use crate::errors::{CliError, DataError, Result};
use crate::idx;
use crate::report::{FinalMetrics, RunReport, TraceEntry, WeightExtremes, termination_name};
use crate::split::{split, Splits};

/// Consecutive accepted iterations with increasing monitor loss that trigger
/// early stopping.
pub const EARLY_STOP_PATIENCE: usize = 5;

/// Archetypes per class for the feature models.
const ARCHETYPES_PER_CLASS: usize = 5;
const KMEANS_MAX_ITER: usize = 60;

/// The held-out test set, guarded by an access counter so a run can prove it
/// touched the set exactly once.
pub struct TestSet {
    data: Dataset,
    accesses: Cell<usize>,
}

impl TestSet {
    pub fn new(data: Dataset) -> Self {
        TestSet { data, accesses: Cell::new(0) }
    }

    /// Grants access to the test data, counting the touch.
    pub fn take(&self) -> &Dataset {
        self.accesses.set(self.accesses.get() + 1);
        &self.data
    }

    pub fn accesses(&self) -> usize {
        self.accesses.get()
    }
}

pub struct ExperimentData {
    /// Source pool for train/val/monitor sampling.
    pub pool: Dataset,
    pub test: TestSet,
}

/// Loads the IDX quartet from `dir`, falling back to `train.csv`/`test.csv`.
pub fn load_data(dir: &Path) -> Result<ExperimentData> {
    let idx_train = dir.join("train-images-idx3-ubyte");
    if idx_train.exists() {
        let pool = idx::load_idx_pair(&idx_train, &dir.join("train-labels-idx1-ubyte"))?;
        let test = idx::load_idx_pair(
            &dir.join("t10k-images-idx3-ubyte"),
            &dir.join("t10k-labels-idx1-ubyte"),
        )?;
        return Ok(ExperimentData { pool, test: TestSet::new(test) });
    }
    let csv_train = dir.join("train.csv");
    let csv_test = dir.join("test.csv");
    if csv_train.exists() && csv_test.exists() {
        let pool = idx::load_csv(&csv_train)?;
        let test = idx::load_csv(&csv_test)?;
        return Ok(ExperimentData { pool, test: TestSet::new(test) });
    }
    Err(DataError::MissingFiles { dir: dir.to_path_buf() }.into())
}

/// True when the last `patience` steps of the monitor-loss sequence each
/// increased over their predecessor.
pub fn should_stop(monitor_losses: &[f64], patience: usize) -> bool {
    if patience == 0 || monitor_losses.len() < patience + 1 {
        return false;
    }
    let tail = &monitor_losses[monitor_losses.len() - patience - 1..];
    tail.windows(2).all(|w| w[1] > w[0])
}

/// k-means archetypes: `ARCHETYPES_PER_CLASS` centers per class, classes
/// stacked in label order, deterministic per seed.
fn build_archetypes(train: &Dataset, seed: u64) -> Result<ArchetypeSet> {
    let dim = train.inputs.cols();
    let mut centers = DenseMatrix::zeros(idx::CLASSES * ARCHETYPES_PER_CLASS, dim);
    for class in 0..idx::CLASSES {
        let rows: Vec<usize> = (0..train.len()).filter(|&i| train.label(i) == class).collect();
        if rows.len() < ARCHETYPES_PER_CLASS {
            return Err(CliError::Data(DataError::InsufficientData {
                needed: ARCHETYPES_PER_CLASS,
                available: rows.len(),
            }));
        }
        let points =
            DenseMatrix::from_fn(rows.len(), dim, |i, j| train.inputs.get(rows[i], j));
        let class_centers = lsqtune::featurize::kmeans(
            &points,
            ARCHETYPES_PER_CLASS,
            seed.wrapping_add(1000 + class as u64),
            KMEANS_MAX_ITER,
        )?;
        for r in 0..ARCHETYPES_PER_CLASS {
            centers
                .row_mut(class * ARCHETYPES_PER_CLASS + r)
                .copy_from_slice(class_centers.row(r));
        }
    }
    Ok(ArchetypeSet { centers, k_per_class: ARCHETYPES_PER_CLASS })
}

/// Identity on a column block: rows × total matrix equal to I on columns
/// [offset, offset+rows).
fn block_identity(rows: usize, total: usize, offset: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, total, |i, j| if j == offset + i { 1.0 } else { 0.0 })
}

/// A matrix placed into the first `total`-wide column block.
fn block_embed(m: &DenseMatrix, total: usize) -> DenseMatrix {
    DenseMatrix::from_fn(m.rows(), total, |i, j| if j < m.cols() { m.get(i, j) } else { 0.0 })
}

struct ModelSetup {
    problem: FitProblem,
    omega0: HyperVector,
    prox: Box<dyn ProxRegularizer>,
    hyperparam_count: usize,
    tuned: bool,
}

fn build_model(cfg: &ExperimentConfig, splits: &Splits) -> Result<ModelSetup> {
    let dim = splits.train.inputs.cols();
    let side = (dim as f64).sqrt() as usize;
    if side * side != dim {
        return Err(CliError::Config(format!(
            "ladder models need square images; got {dim} pixels"
        )));
    }
    let n_train = splits.train.len();
    let train = splits.train.clone();
    let val = splits.val.clone();
    match cfg.model {
        Model::Ls => {
            let problem = FitProblem::new(
                train,
                val,
                Box::new(Identity { dim }),
                vec![RegularizerTerm::new(DenseMatrix::identity(dim), "ridge")],
                Penalty::CrossEntropy,
                false,
            )?;
            let omega0 = HyperVector::zeros(problem.hyper_layout());
            Ok(ModelSetup {
                problem,
                omega0,
                prox: Box::new(UniformReg(SegmentProx::Zero)),
                hyperparam_count: 0,
                tuned: false,
            })
        }
        Model::LsReg2 => {
            let problem = FitProblem::new(
                train,
                val,
                Box::new(Identity { dim }),
                vec![
                    RegularizerTerm::new(DenseMatrix::identity(dim), "ridge"),
                    RegularizerTerm::new(grid_incidence(side, side), "smooth"),
                ],
                Penalty::CrossEntropy,
                false,
            )?;
            let layout = problem.hyper_layout();
            let omega0 = HyperVector::new(layout, vec![-2.0, -2.0])
                .expect("layout is (0, 0, 2) by construction");
            Ok(ModelSetup {
                problem,
                omega0,
                prox: Box::new(UniformReg(SegmentProx::Zero)),
                hyperparam_count: 2,
                tuned: true,
            })
        }
        Model::LsReg3Feat | Model::LsReg3FeatWeight => {
            let weighting = cfg.model == Model::LsReg3FeatWeight;
            let arch = build_archetypes(&train, cfg.seed)?;
            let n_arch = arch.count();
            let out_dim = dim + n_arch + 1;
            let featurizer = ArchetypeSoftmax::new(arch);
            let reg_terms = vec![
                RegularizerTerm::new(block_identity(dim, out_dim, 0), "ridge_pixels"),
                RegularizerTerm::new(block_identity(n_arch, out_dim, dim), "ridge_softmax"),
                RegularizerTerm::new(
                    block_embed(&grid_incidence(side, side), out_dim),
                    "smooth_pixels",
                ),
            ];
            let problem = FitProblem::new(
                train,
                val,
                Box::new(featurizer),
                reg_terms,
                Penalty::CrossEntropy,
                weighting,
            )?;
            let layout = problem.hyper_layout();
            // σ (the lone featurizer parameter, first segment) starts at 3
            let mut vals = vec![0.0; layout.total()];
            vals[layout.feat_range()][0] = 3.0;
            let omega0 =
                HyperVector::new(layout, vals).expect("layout built from this problem");
            let (prox, count): (Box<dyn ProxRegularizer>, usize) = if weighting {
                (
                    Box::new(SegmentedReg {
                        feat: SegmentProx::Zero,
                        data: SegmentProx::ZeroSumL2(0.01),
                        reg: SegmentProx::Zero,
                    }),
                    n_train + 4,
                )
            } else {
                (Box::new(UniformReg(SegmentProx::Zero)), 4)
            };
            Ok(ModelSetup { problem, omega0, prox, hyperparam_count: count, tuned: true })
        }
    }
}

/// Mean penalty of the fitted model over a dataset, with features taken at
/// the given featurizer parameters.
fn mean_penalty(
    problem: &FitProblem,
    theta: &DenseMatrix,
    omega_feat: &[f64],
    ds: &Dataset,
) -> f64 {
    let phi = problem.featurizer.features_batch(&ds.inputs, omega_feat);
    let yhat = matrix::matmul(&phi, theta);
    (0..ds.len())
        .map(|i| problem.penalty.value(yhat.row(i), ds.targets.row(i)))
        .sum::<f64>()
        / ds.len() as f64
}

fn weight_extremes(omega_data: &[f64], train_indices: &[usize]) -> WeightExtremes {
    let mut order: Vec<usize> = (0..omega_data.len()).collect();
    order.sort_by(|&a, &b| omega_data[a].total_cmp(&omega_data[b]));
    let lowest = order.iter().take(6).map(|&i| train_indices[i]).collect();
    let highest = order.iter().rev().take(6).map(|&i| train_indices[i]).collect();
    WeightExtremes { lowest, highest }
}

/// Runs one configured model end to end and assembles its report.
pub fn run_experiment(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<RunReport> {
    let t_start = Instant::now();
    let splits = split(&data.pool, cfg.dataset_scale, cfg.seed, cfg.early_stopping)?;
    let setup = build_model(cfg, &splits)?;
    let problem = setup.problem;
    let test_touches_before = data.test.accesses();

    let (trace, final_metrics) = if !setup.tuned {
        let (psi, _, theta) = problem.objective_and_gradient(&setup.omega0)?;
        let test_err =
            datafit::test_error(&theta, problem.featurizer.as_ref(), setup.omega0.feat(), data.test.take());
        (
            Vec::new(),
            FinalMetrics {
                validation_loss: psi,
                test_error: test_err,
                hyperparam_count: setup.hyperparam_count,
                wall_seconds: 0.0,
                termination: "none".into(),
                omega_feat: None,
                omega_reg: None,
                weight_extremes: None,
            },
        )
    } else {
        // θ and ω_feat snapshots: the first evaluation (the tuner's starting
        // point) and the evaluation behind each accepted step.
        let first_eval: RefCell<Option<(DenseMatrix, Vec<f64>)>> = RefCell::new(None);
        let latest_eval: RefCell<Option<(DenseMatrix, Vec<f64>)>> = RefCell::new(None);
        let accepted_eval: RefCell<Option<(DenseMatrix, Vec<f64>)>> = RefCell::new(None);
        let monitor_losses: RefCell<Vec<f64>> = RefCell::new(Vec::new());
        let monitor_by_k: RefCell<Vec<(usize, f64)>> = RefCell::new(Vec::new());

        let objective = |omega: &HyperVector| {
            let (psi, g, theta) = problem.objective_and_gradient(omega)?;
            let snapshot = (theta, omega.feat().to_vec());
            if first_eval.borrow().is_none() {
                *first_eval.borrow_mut() = Some(snapshot.clone());
            }
            *latest_eval.borrow_mut() = Some(snapshot);
            Ok((psi, g))
        };
        let on_accept = |it: &tuner::TunerIteration, _omega_next: &HyperVector| -> bool {
            *accepted_eval.borrow_mut() = latest_eval.borrow().clone();
            if let Some(mon) = &splits.monitor {
                let (theta, feat) =
                    latest_eval.borrow().clone().expect("accept follows an evaluation");
                let loss = mean_penalty(&problem, &theta, &feat, mon);
                monitor_losses.borrow_mut().push(loss);
                monitor_by_k.borrow_mut().push((it.k, loss));
                should_stop(&monitor_losses.borrow(), EARLY_STOP_PATIENCE)
            } else {
                false
            }
        };

        let tuner_report = tuner::run_with_callback(
            objective,
            setup.prox.as_ref(),
            &setup.omega0,
            &cfg.tuner.to_config(),
            on_accept,
        )?;

        let (theta, feat) = accepted_eval
            .borrow()
            .clone()
            .or_else(|| first_eval.borrow().clone())
            .expect("the tuner evaluated at least the starting point");
        let test_err =
            datafit::test_error(&theta, problem.featurizer.as_ref(), &feat, data.test.take());

        let monitor_by_k = monitor_by_k.into_inner();
        let trace: Vec<TraceEntry> = tuner_report
            .iterations
            .iter()
            .map(|it| {
                let mon = monitor_by_k
                    .iter()
                    .find(|(k, _)| *k == it.k)
                    .map(|(_, loss)| *loss);
                TraceEntry::from_iteration(it, mon)
            })
            .collect();

        let omega_final = &tuner_report.final_omega;
        let extremes = if cfg.model == Model::LsReg3FeatWeight {
            Some(weight_extremes(omega_final.data(), &splits.train_indices))
        } else {
            None
        };
        (
            trace,
            FinalMetrics {
                validation_loss: tuner_report.final_psi,
                test_error: test_err,
                hyperparam_count: setup.hyperparam_count,
                wall_seconds: 0.0,
                termination: termination_name(&tuner_report.termination),
                omega_feat: Some(omega_final.feat().to_vec()).filter(|v| !v.is_empty()),
                omega_reg: Some(omega_final.reg().to_vec()).filter(|v| !v.is_empty()),
                weight_extremes: extremes,
            },
        )
    };

    assert_eq!(
        data.test.accesses(),
        test_touches_before + 1,
        "the test set must be touched exactly once per run"
    );

    let mut final_metrics = final_metrics;
    final_metrics.wall_seconds = t_start.elapsed().as_secs_f64();
    Ok(RunReport { config: cfg.clone(), trace, final_metrics })
}
