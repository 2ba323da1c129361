//! Pipeline configuration: one JSON document drives train, certify,
//! simulate and report, so a run is archivable as config + seed.

use std::fs;
use std::path::{Path, PathBuf};

use adpmpc::approximator::MonomialBasis;
use adpmpc::avi::AviConfig;
use adpmpc::certificates::SigmaGrid;
use adpmpc::system::{
    linear_system, rendezvous_system, toy1d_system, Benchmark, BoxSet, StageCost,
};
use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub system: SystemSection,
    pub state_box: Option<BoxSection>,
    pub input_box: Option<BoxSection>,
    /// Training domain Omega.
    pub training_box: Option<BoxSection>,
    pub stage_cost: Option<StageCostSection>,
    pub basis_degrees: Option<Vec<u32>>,
    pub avi: Option<AviSection>,
    pub seed: Option<u64>,
    pub beta: Option<f64>,
    /// Prediction horizon N for certification checks and simulation.
    pub horizon: Option<usize>,
    pub steps: Option<usize>,
    pub stop_tol: Option<f64>,
    pub sigma_grid: Option<SigmaGridSection>,
    /// Rollout length M for the controllability estimate; a pilot rule
    /// picks it when absent.
    pub rollout_length: Option<usize>,
    pub x0: Option<Vec<Vec<f64>>>,
    pub output_dir: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: String,
    /// rendezvous: discretization step (default 0.05).
    pub dt: Option<f64>,
    /// linear: dense A and B matrices, row major.
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<Vec<f64>>>,
    /// toy1d: scalar dynamics x+ = a1 x + b1 u.
    pub a1: Option<f64>,
    pub b1: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageCostSection {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaGridSection {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AviSection {
    pub samples: Option<usize>,
    pub test_samples: Option<usize>,
    pub max_iterations: Option<usize>,
    pub weight_tolerance: Option<f64>,
    pub lstar_exclusion: Option<f64>,
    pub ridge: Option<f64>,
    /// "fit" (default) or "lqr_shortcut".
    pub init_mode: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Fit,
    LqrShortcut,
}

/// Fully resolved configuration with all defaults applied.
#[derive(Debug)]
pub struct BuiltConfig {
    pub config_hash: String,
    pub benchmark: Benchmark,
    pub basis: MonomialBasis,
    pub avi: AviConfig,
    pub init_mode: InitMode,
    pub beta: f64,
    pub horizon: Option<usize>,
    pub steps: usize,
    pub stop_tol: f64,
    pub sigma_grid: SigmaGrid,
    pub rollout_length: Option<usize>,
    pub x0_list: Vec<DVector<f64>>,
    pub output_dir: PathBuf,
}

fn parse_box(section: &BoxSection, what: &str) -> Result<BoxSet> {
    BoxSet::new(
        DVector::from_vec(section.lower.clone()),
        DVector::from_vec(section.upper.clone()),
    )
    .map_err(|e| anyhow!("{what}: {e}"))
}

fn parse_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        bail!("{what} must not be empty");
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        bail!("{what} rows have inconsistent lengths");
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn load_config(path: &Path, out_override: Option<&Path>) -> Result<BuiltConfig> {
    let bytes =
        fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
    let parsed: PipelineConfig = serde_json::from_slice(&bytes)
        .with_context(|| format!("parsing config {}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    let config_hash: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    build(parsed, config_hash, out_override)
}

fn build(
    cfg: PipelineConfig,
    config_hash: String,
    out_override: Option<&Path>,
) -> Result<BuiltConfig> {
    let mut benchmark = match cfg.system.name.as_str() {
        "rendezvous" => rendezvous_system(cfg.system.dt.unwrap_or(0.05))?,
        "linear" => {
            let a = parse_matrix(
                cfg.system
                    .a
                    .as_deref()
                    .ok_or_else(|| anyhow!("system.a required for the linear system"))?,
                "system.a",
            )?;
            let b = parse_matrix(
                cfg.system
                    .b
                    .as_deref()
                    .ok_or_else(|| anyhow!("system.b required for the linear system"))?,
                "system.b",
            )?;
            let n = a.nrows();
            let m = b.ncols();
            let system = linear_system(a, b)?;
            Benchmark {
                system,
                state_box: BoxSet::symmetric(n, 10.0)?,
                input_box: BoxSet::symmetric(m, 10.0)?,
                cost: StageCost::new(DMatrix::identity(n, n), DMatrix::identity(m, m))?,
            }
        }
        "toy1d" => toy1d_system(cfg.system.a1.unwrap_or(0.5), cfg.system.b1.unwrap_or(1.0))?,
        other => bail!("unknown system '{other}' (registered: rendezvous, linear, toy1d)"),
    };

    if let Some(section) = &cfg.state_box {
        benchmark.state_box = parse_box(section, "state_box")?;
    }
    if let Some(section) = &cfg.input_box {
        benchmark.input_box = parse_box(section, "input_box")?;
    }
    if let Some(section) = &cfg.stage_cost {
        benchmark.cost = StageCost::new(
            parse_matrix(&section.q, "stage_cost.q")?,
            parse_matrix(&section.r, "stage_cost.r")?,
        )?;
    }
    let n = benchmark.system.state_dim();
    if benchmark.state_box.dim() != n {
        bail!("state_box dimension {} does not match the system ({n})", benchmark.state_box.dim());
    }
    if benchmark.input_box.dim() != benchmark.system.input_dim() {
        bail!("input_box dimension does not match the system");
    }

    let training_box = cfg
        .training_box
        .as_ref()
        .ok_or_else(|| anyhow!("training_box (the domain Omega) required"))?;
    let training_box = parse_box(training_box, "training_box")?;
    if !training_box.subset_of(&benchmark.state_box) {
        bail!("training_box must be contained in state_box");
    }

    let degrees = cfg.basis_degrees.unwrap_or_else(|| vec![2, 3]);
    let basis = MonomialBasis::new(n, &degrees)?;

    let seed = cfg.seed.unwrap_or(0);
    let mut avi = AviConfig::new(training_box, seed);
    let mut init_mode = InitMode::Fit;
    if let Some(section) = &cfg.avi {
        if let Some(v) = section.samples {
            avi.train_samples = v;
            avi.test_samples = 4 * v;
        }
        if let Some(v) = section.test_samples {
            avi.test_samples = v;
        }
        if let Some(v) = section.max_iterations {
            avi.max_iterations = v;
        }
        if let Some(v) = section.weight_tolerance {
            avi.weight_tolerance = v;
        }
        if let Some(v) = section.lstar_exclusion {
            avi.lstar_exclusion = v;
        }
        if let Some(v) = section.ridge {
            avi.ridge = v;
        }
        init_mode = match section.init_mode.as_deref() {
            None | Some("fit") => InitMode::Fit,
            Some("lqr_shortcut") => InitMode::LqrShortcut,
            Some(other) => bail!("avi.init_mode '{other}' unknown (fit | lqr_shortcut)"),
        };
    }
    avi.validate(&basis, &benchmark.state_box)
        .map_err(|e| anyhow!("avi configuration: {e}"))?;

    let beta = cfg
        .beta
        .ok_or_else(|| anyhow!("beta required (the level-set bound, beta > 0)"))?;
    if !(beta.is_finite() && beta > 0.0) {
        bail!("beta must be positive");
    }

    let sigma_grid = match cfg.sigma_grid {
        Some(s) => SigmaGrid {
            start: s.start,
            stop: s.stop,
            step: s.step,
        },
        None => SigmaGrid::default(),
    };
    sigma_grid.values().map_err(|e| anyhow!("sigma_grid: {e}"))?;

    // Default initial condition for the rendezvous benchmark: position
    // block at the upper corner of Omega, velocities zero.
    let x0_list: Vec<DVector<f64>> = match cfg.x0 {
        Some(list) => list
            .into_iter()
            .map(|x| {
                if x.len() == n {
                    Ok(DVector::from_vec(x))
                } else {
                    Err(anyhow!("x0 entries must have length {n}"))
                }
            })
            .collect::<Result<_>>()?,
        None if cfg.system.name == "rendezvous" => {
            let omega = &avi.training_box;
            vec![DVector::from_vec(vec![omega.upper()[0], omega.upper()[1], 0.0, 0.0])]
        }
        None => Vec::new(),
    };

    let output_dir = out_override
        .map(|p| p.to_path_buf())
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| anyhow!("output_dir required (or pass --out)"))?;

    Ok(BuiltConfig {
        config_hash,
        benchmark,
        basis,
        avi,
        init_mode,
        beta,
        horizon: cfg.horizon,
        steps: cfg.steps.unwrap_or(400),
        stop_tol: cfg.stop_tol.unwrap_or(1e-2),
        sigma_grid,
        rollout_length: cfg.rollout_length,
        x0_list,
        output_dir,
    })
}
