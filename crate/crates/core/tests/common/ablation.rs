//! Synthetic NP / SP / TSP comparison at desk scale.

use std::time::Instant;

use nucprior::config::Mode;
use nucprior::data::{split_indices, training_tuples, DataConfig, ImageRecord, Split};
use nucprior::detect_eval::{pr_curve, threshold_grid, DetectionConfig, EvalConfig};
use nucprior::edges::CannyConfig;
use nucprior::network::{forward, train, DataTerm, HyperParams, NetworkConfig, NetworkParams};
use nucprior::shapes::{eliminate_shapes, CwSsimConfig, ShapeSet};
use nucprior::synth::{expert_shapes, generate_dataset, SynthConfig};

#[derive(Debug, Clone, Copy)]
pub struct Budget {
    pub network: NetworkConfig,
    pub epochs: usize,
    pub eta: f64,
    pub batch_size: usize,
    pub decay_every: usize,
    pub sp_lambda: f64,
    pub tsp_lambda: f64,
    pub tsp_gamma: f64,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            network: NetworkConfig {
                depth: 4,
                channels: 8,
                first_kernel: 5,
                mid_kernel: 3,
            },
            epochs: 20,
            eta: 1e-4,
            batch_size: 16,
            decay_every: 10,
            sp_lambda: 2e-4,
            tsp_lambda: 3e-4,
            tsp_gamma: 2.0,
        }
    }
}

pub struct Prepared {
    pub train: Vec<nucprior::data::TrainingTuple>,
    pub test: Vec<ImageRecord>,
    pub expert: ShapeSet,
    pub reference: ShapeSet,
}

/// 50:50 train/test split. With `validation`, the training half is split
/// again 2:1 and the held-out third takes the place of the test images, so
/// hyperparameters can be chosen without touching the test set.
pub fn prepare(synth: &SynthConfig, validation: bool) -> Prepared {
    let images = generate_dataset(synth).unwrap();
    let (mut tr, mut te) = split_indices(images.len(), Split { train: 50, test: 50 }, 0);
    if validation {
        let (a, b) = split_indices(tr.len(), Split { train: 2, test: 1 }, 1);
        let (sub_tr, val) = (a.iter().map(|&k| tr[k]).collect(), b.iter().map(|&k| tr[k]).collect());
        tr = sub_tr;
        te = val;
    }
    let record = |k: usize| ImageRecord {
        name: format!("img_{k:03}"),
        image: images[k].image.clone(),
        centers: images[k].centers.clone(),
        edge: None,
    };
    let train_records: Vec<ImageRecord> = tr.iter().map(|&k| record(k)).collect();
    let train = training_tuples(&train_records, &DataConfig::default(), &CannyConfig::default()).unwrap();
    let expert = expert_shapes(20).unwrap();
    let reference = eliminate_shapes(&expert, 0.8, &CwSsimConfig::default()).unwrap();
    Prepared {
        train,
        test: te.iter().map(|&k| record(k)).collect(),
        expert,
        reference,
    }
}

pub fn hyper(budget: &Budget, mode: Mode, seed: u64) -> HyperParams {
    let (lambda, gamma) = match mode {
        Mode::Np | Mode::Wnp => (0.0, 0.0),
        Mode::Sp => (budget.sp_lambda, 0.0),
        Mode::Tsp => (budget.tsp_lambda, budget.tsp_gamma),
    };
    HyperParams {
        lambda,
        gamma,
        eta: budget.eta,
        epochs: budget.epochs,
        batch_size: budget.batch_size,
        decay_every: budget.decay_every,
        seed,
        data_term: if mode == Mode::Wnp { DataTerm::Weighted } else { DataTerm::Mse },
        ..HyperParams::default()
    }
}

/// Best F1 over the default threshold grid on the test images.
pub fn run_mode(data: &Prepared, budget: &Budget, mode: Mode, seed: u64) -> (f64, f64) {
    let start = Instant::now();
    let mut params = NetworkParams::init(budget.network, seed).unwrap();
    let shapes_ref = match mode {
        Mode::Sp => Some(&data.expert),
        Mode::Tsp => {
            params = params.with_shapes(data.reference.to_learnable());
            Some(&data.reference)
        }
        _ => None,
    };
    let out = train(&data.train, params, shapes_ref, &hyper(budget, mode, seed), |_| {}).unwrap();
    let yhats: Vec<_> = data.test.iter().map(|r| forward(&r.image, &out.params).unwrap()).collect();
    let gts: Vec<_> = data.test.iter().map(|r| r.centers.clone()).collect();
    let curve = pr_curve(
        &yhats,
        &gts,
        &DetectionConfig::default(),
        &EvalConfig::default(),
        &threshold_grid(0.05).unwrap(),
    )
    .unwrap();
    (curve.best.f1, start.elapsed().as_secs_f64())
}
