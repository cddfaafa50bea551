//! Three browser operations over the engine: a partition view, accuracy
//! curves of ADMM against gradient baselines, and the per-iteration
//! residual and Lagrangian trace. Every entry point takes and returns JSON.

use admm_gcn::admm::lagrangian::lagrangian_terms;
use admm_gcn::admm::{Hyperparams, ModelState, Problem};
use admm_gcn::baselines::{train_baseline, OptimizerConfig, OptimizerKind};
use admm_gcn::data::{generate_sbm, Dataset, SbmSpec};
use admm_gcn::runtime::bench::partition_for;
use admm_gcn::runtime::{AdmmTrainer, InProcess, Schedule};
use admm_gcn::{nn, normalize_adjacency, seed};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub blocks: usize,
    pub size: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub signal: f64,
    pub communities: usize,
    pub hidden: usize,
    pub nu: f64,
    pub rho: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            size: 30,
            p_in: 0.2,
            p_out: 0.02,
            signal: 1.0,
            communities: 3,
            hidden: 32,
            nu: 1e-3,
            rho: 1e-3,
            lr: 1e-2,
            epochs: 40,
            seed: 0,
        }
    }
}

impl DemoConfig {
    fn dataset(&self) -> admm_gcn::Result<Dataset> {
        generate_sbm(&SbmSpec {
            communities: self.blocks,
            nodes_per_community: self.size,
            p_in: self.p_in,
            p_out: self.p_out,
            signal: self.signal,
            seed: seed::derive(self.seed, seed::SBM),
            ..SbmSpec::default()
        })
    }

    fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            nu: self.nu,
            rho: self.rho,
            hidden: vec![self.hidden],
            epochs: self.epochs,
            ..Hyperparams::default()
        }
    }

    fn trainer(&self, data: &Dataset) -> admm_gcn::Result<AdmmTrainer> {
        let hp = self.hyperparams();
        let problem = Problem::new(data, partition_for(data, self.communities, self.seed)?, &hp.hidden)?;
        let state = ModelState::initialize(&problem, &mut seed::stream(self.seed, seed::INIT))?;
        AdmmTrainer::new(problem, hp, state, Schedule::Serial, Box::new(InProcess))
    }
}

#[derive(Debug, Serialize)]
pub struct PartitionView {
    /// Node ids grouped community by community.
    pub order: Vec<usize>,
    /// Community of each entry of `order`.
    pub community: Vec<usize>,
    /// Ground-truth block of each entry of `order`.
    pub block: Vec<usize>,
    /// Edges as positions in `order`.
    pub edges: Vec<(usize, usize)>,
    pub sizes: Vec<usize>,
    pub neighbors: Vec<Vec<usize>>,
    pub cut_edges: usize,
    pub total_edges: usize,
}

pub fn partition_view(cfg: &DemoConfig) -> admm_gcn::Result<PartitionView> {
    let data = cfg.dataset()?;
    let p = partition_for(&data, cfg.communities, cfg.seed)?;
    let order = p.perm();
    let mut position = vec![0; order.len()];
    for (i, &v) in order.iter().enumerate() {
        position[v] = i;
    }
    Ok(PartitionView {
        community: order.iter().map(|&v| p.community_of(v)).collect(),
        block: order.iter().map(|&v| v / cfg.size).collect(),
        edges: data.graph.edges().map(|(u, v)| (position[u], position[v])).collect(),
        sizes: p.sizes(),
        neighbors: (0..p.num_communities()).map(|m| p.neighbors(m).to_vec()).collect(),
        cut_edges: p.cut_edges(&data.graph),
        total_edges: data.graph.edge_count(),
        order,
    })
}

#[derive(Debug, Default, Serialize)]
pub struct Curve {
    pub method: String,
    pub train_acc: Vec<f64>,
    pub test_acc: Vec<f64>,
    pub loss: Vec<f64>,
}

pub fn training_curves(cfg: &DemoConfig) -> admm_gcn::Result<Vec<Curve>> {
    let data = cfg.dataset()?;
    let mut curves = Vec::new();
    let mut admm = Curve {
        method: format!("admm ({} communities)", cfg.communities),
        ..Curve::default()
    };
    let mut trainer = cfg.trainer(&data)?;
    trainer.train(|e, _| {
        admm.train_acc.push(e.train_acc);
        admm.test_acc.push(e.test_acc);
        admm.loss.push(e.loss);
    })?;
    curves.push(admm);

    let a = normalize_adjacency(&data.graph);
    let dims = [data.features.cols(), cfg.hidden, data.labels.cols()];
    for (kind, lr) in [(OptimizerKind::Gd, OptimizerKind::Gd.default_lr()), (OptimizerKind::Adam, cfg.lr)] {
        let w = nn::init_weights(&dims, &mut seed::stream(cfg.seed, seed::INIT));
        let (_, run) = train_baseline(&a, &data, w, OptimizerConfig::new(kind, lr), cfg.epochs)?;
        curves.push(Curve {
            method: format!("{} (lr {lr})", kind.name()),
            train_acc: run.epochs.iter().map(|e| e.train_acc).collect(),
            test_acc: run.epochs.iter().map(|e| e.test_acc).collect(),
            loss: run.epochs.iter().map(|e| e.loss).collect(),
        });
    }
    Ok(curves)
}

#[derive(Debug, Serialize)]
pub struct TracePoint {
    pub k: usize,
    pub residual: f64,
    pub lagrangian: f64,
    pub risk: f64,
    pub penalty: f64,
    pub dual: f64,
    pub quadratic: f64,
    pub tau: Vec<f64>,
    pub theta: Vec<f64>,
    pub majorized: bool,
}

pub fn admm_trace(cfg: &DemoConfig) -> admm_gcn::Result<Vec<TracePoint>> {
    let data = cfg.dataset()?;
    let mut trainer = cfg.trainer(&data)?;
    let mut out = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let report = trainer.step()?;
        let (k, residual, majorized) = (report.k, report.residual, report.majorization_holds());
        let t = lagrangian_terms(trainer.problem(), trainer.state(), trainer.hyperparams())?;
        let state = trainer.state();
        out.push(TracePoint {
            k,
            residual,
            lagrangian: t.total(),
            risk: t.risk,
            penalty: t.penalty,
            dual: t.dual,
            quadratic: t.quadratic,
            tau: state.tau.clone(),
            theta: state.theta.iter().map(|t| t[0]).collect(),
            majorized,
        });
    }
    Ok(out)
}

fn call<T: Serialize>(config: &str, f: impl Fn(&DemoConfig) -> admm_gcn::Result<T>) -> Result<String, JsValue> {
    let cfg: DemoConfig = serde_json::from_str(config).map_err(|e| JsValue::from_str(&e.to_string()))?;
    let value = f(&cfg).map_err(|e| JsValue::from_str(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub fn partition(config: &str) -> Result<String, JsValue> {
    call(config, partition_view)
}

#[wasm_bindgen]
pub fn curves(config: &str) -> Result<String, JsValue> {
    call(config, training_curves)
}

#[wasm_bindgen]
pub fn trace(config: &str) -> Result<String, JsValue> {
    call(config, admm_trace)
}
