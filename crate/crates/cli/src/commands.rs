//! The four pipeline commands: train, certify, simulate, report.
//!
//! Exit-code contract: 0 when every gate the command evaluated passed,
//! 2 on a gate failure, 1 on errors (I/O, configuration, solver).

use std::fs;
use std::path::Path;

use adpmpc::approximator::{write_weight_history_csv, ValueApproximant};
use adpmpc::avi::{
    dare_solve, draw_sample_sets, input_constraint_check, run_avi, stability_margin_bound,
    theorem1_bounds_check, write_errors_csv, write_theorem1_csv, AviRun, GreedyPolicy, InitCost,
    LqrInit,
};
use adpmpc::certificates::{
    build_bundle, default_rollout_length, estimate_controllability, terminal_set_d,
    write_certificates_json, write_envelope_csv, HorizonContext,
};
use adpmpc::fmt::{f64_repr, Json};
use adpmpc::mpc::{
    closedloop_run_json, rdp_check, receding_horizon, write_closedloop_csv, OcpProblem,
};
use adpmpc::system::{linearize, Policy};
use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::config::{BuiltConfig, InitMode};
use crate::manifest::{GateStatus, RunManifest};

pub const TRAIN_FILE: &str = "train.json";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const ERRORS_FILE: &str = "errors.csv";
pub const THEOREM1_FILE: &str = "theorem1.csv";
pub const CERTIFICATES_FILE: &str = "certificates.json";
pub const CONTROLLABILITY_FILE: &str = "controllability.csv";
pub const CLOSEDLOOP_FILE: &str = "closedloop.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    AllPassed,
    GateFailed,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::AllPassed => 0,
            Outcome::GateFailed => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalMode {
    Avi,
    Lqr,
}

impl TerminalMode {
    pub fn tag(self) -> &'static str {
        match self {
            TerminalMode::Avi => "avi",
            TerminalMode::Lqr => "lqr",
        }
    }
}

fn lqr_init(cfg: &BuiltConfig) -> Result<LqrInit> {
    let bench = &cfg.benchmark;
    let n = bench.system.state_dim();
    let m = bench.system.input_dim();
    let (a, b) = linearize(&bench.system, &DVector::zeros(n), &DVector::zeros(m))?;
    Ok(dare_solve(&a, &b, bench.cost.state_weight(), bench.cost.input_weight())?)
}

fn matrix_json(m: &DMatrix<f64>) -> Json {
    Json::Array(
        (0..m.nrows())
            .map(|i| Json::Array((0..m.ncols()).map(|j| Json::Float(m[(i, j)])).collect()))
            .collect(),
    )
}

fn vector_json(v: &DVector<f64>) -> Json {
    Json::Array(v.iter().map(|x| Json::Float(*x)).collect())
}

/// Persisted summary of a training run; the full weight history lives in
/// weights.csv, this record carries what later stages reload.
#[derive(Debug, Deserialize)]
pub struct TrainRecord {
    pub c: f64,
    /// None encodes an undefined (infinite) bound on a refused run.
    pub gamma0: Option<f64>,
    pub sup_eps: f64,
    pub converged_at: Option<usize>,
    pub iterations: usize,
    pub margin_flagged: bool,
    pub aborted: Option<String>,
    pub basis_len: usize,
    pub weights_final: Vec<f64>,
    pub weights_prev: Vec<f64>,
    pub k_lqr: Vec<Vec<f64>>,
    pub p_lqr: Vec<Vec<f64>>,
    pub input_check_pass: Option<bool>,
    pub input_check_worst: Option<f64>,
    pub stability_margin_ok: bool,
}

impl TrainRecord {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(TRAIN_FILE);
        if !path.exists() {
            bail!("missing artifact {}; run train first", path.display());
        }
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn lqr(&self) -> Result<LqrInit> {
        let k = rows_to_matrix(&self.k_lqr)?;
        let p = rows_to_matrix(&self.p_lqr)?;
        Ok(LqrInit {
            gain: k,
            cost_matrix: p,
        })
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        bail!("malformed matrix in artifact");
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn write_train_record(
    dir: &Path,
    run: &AviRun,
    lqr: &LqrInit,
    input_check: &GateStatus,
    input_worst: Option<f64>,
    stability_ok: bool,
) -> Result<()> {
    let gamma0 = if run.gamma0.is_finite() {
        Json::Float(run.gamma0)
    } else {
        Json::Null
    };
    let record = Json::Object(vec![
        ("c".into(), Json::Float(run.c)),
        ("gamma0".into(), gamma0),
        (
            "sup_eps".into(),
            Json::Float(run.sup_eps_per_iter.iter().copied().fold(0.0, f64::max)),
        ),
        (
            "converged_at".into(),
            run.converged_at.map_or(Json::Null, |i| Json::Int(i as i64)),
        ),
        ("iterations".into(), Json::Int(run.iterations() as i64)),
        ("margin_flagged".into(), Json::Bool(run.margin_flagged)),
        (
            "aborted".into(),
            run.aborted.clone().map_or(Json::Null, Json::Str),
        ),
        ("basis_len".into(), Json::Int(run.basis.len() as i64)),
        (
            "weights_final".into(),
            vector_json(run.weights.last().expect("run records weights")),
        ),
        (
            "weights_prev".into(),
            vector_json(&run.weights[run.weights.len().saturating_sub(2)]),
        ),
        ("k_lqr".into(), matrix_json(&lqr.gain)),
        ("p_lqr".into(), matrix_json(&lqr.cost_matrix)),
        (
            "input_check_pass".into(),
            if input_check.evaluated {
                Json::Bool(input_check.passed)
            } else {
                Json::Null
            },
        ),
        (
            "input_check_worst".into(),
            input_worst.map_or(Json::Null, Json::Float),
        ),
        ("stability_margin_ok".into(), Json::Bool(stability_ok)),
    ]);
    let mut file = fs::File::create(dir.join(TRAIN_FILE))?;
    record.write(&mut file)?;
    Ok(())
}

/// Offline training: LQR initialization, the value iteration, the error
/// margins, and the margin-dependent gates.
pub fn cmd_train(cfg: &BuiltConfig) -> Result<Outcome> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;
    let bench = &cfg.benchmark;
    let lqr = lqr_init(cfg)?;
    let policy = lqr.policy();
    let init = match cfg.init_mode {
        InitMode::Fit => InitCost::Fit(&policy),
        InitMode::LqrShortcut => InitCost::LqrShortcut(&lqr),
    };

    let run = run_avi(
        &bench.system,
        &bench.cost,
        &cfg.basis,
        &bench.state_box,
        &bench.input_box,
        &cfg.avi,
        init,
    )?;

    let mut manifest = RunManifest::new(&cfg.config_hash);

    let mut file = fs::File::create(dir.join(WEIGHTS_FILE))?;
    write_weight_history_csv(&mut file, &run.weights)?;
    manifest.add_artifact(WEIGHTS_FILE);

    let mut file = fs::File::create(dir.join(ERRORS_FILE))?;
    write_errors_csv(&mut file, &run)?;
    manifest.add_artifact(ERRORS_FILE);

    let bounds = theorem1_bounds_check(&run, &bench.cost, &run.test_samples, cfg.avi.lstar_exclusion);
    let mut file = fs::File::create(dir.join(THEOREM1_FILE))?;
    write_theorem1_csv(&mut file, &bounds)?;
    manifest.add_artifact(THEOREM1_FILE);

    // Gate: error margin c < 1 over all recorded iterations.
    let margin_ok = run.c < 1.0 && !run.margin_flagged;
    manifest.gates.error_margin = GateStatus::result(
        margin_ok,
        if margin_ok {
            format!("c = {} < 1", f64_repr(run.c))
        } else {
            format!(
                "c = {} >= 1: adjust the training domain or enrich the basis, then retrain",
                f64_repr(run.c)
            )
        },
    );

    // Gate: trained greedy policy within the input box on the test samples.
    let policy_value = run.policy_value();
    let mu_hat = GreedyPolicy {
        value: &policy_value,
        sys: &bench.system,
        cost: &bench.cost,
        input_box: &bench.input_box,
    };
    let mut input_worst = None;
    manifest.gates.input_constraints =
        match input_constraint_check(&mu_hat, &bench.input_box, &run.test_samples) {
            Ok(check) => {
                input_worst = Some(check.worst_violation);
                GateStatus::result(
                    check.pass,
                    format!("worst input-box excess {}", f64_repr(check.worst_violation)),
                )
            }
            Err(e) => GateStatus {
                evaluated: false,
                passed: false,
                detail: format!("not evaluated: {e}"),
            },
        };

    // Gate: error-margin stability test of the iterated controller. Its
    // failure does not refuse anything (the predictive wrapper needs only
    // c < 1) but it is recorded and reflected in the exit code.
    let stability_ok = adpmpc::avi::stability_margin_check(run.c, run.gamma0);
    manifest.gates.stability_margin = stability_gate(&run, stability_ok);

    write_train_record(
        &dir,
        &run,
        &lqr,
        &manifest.gates.input_constraints,
        input_worst,
        stability_ok,
    )?;
    manifest.add_artifact(TRAIN_FILE);
    manifest.save(&dir)?;

    println!(
        "train: c = {}, gamma0 = {}, sup_eps = {}, iterations = {}, converged_at = {:?}",
        f64_repr(run.c),
        f64_repr(run.gamma0),
        f64_repr(run.sup_eps_per_iter.iter().copied().fold(0.0, f64::max)),
        run.iterations(),
        run.converged_at,
    );
    for gate in [
        ("error_margin", &manifest.gates.error_margin),
        ("input_constraints", &manifest.gates.input_constraints),
        ("stability_margin", &manifest.gates.stability_margin),
    ] {
        print_gate(gate.0, gate.1);
    }

    let passed = manifest.gates.error_margin.passed
        && (!manifest.gates.input_constraints.evaluated || manifest.gates.input_constraints.passed)
        && manifest.gates.stability_margin.passed;
    Ok(if passed {
        Outcome::AllPassed
    } else {
        Outcome::GateFailed
    })
}

fn stability_gate(run: &AviRun, ok: bool) -> GateStatus {
    let detail = if run.gamma0.is_finite() {
        format!(
            "c = {} vs bound {} (1 + 2 gamma0 - sqrt(4 gamma0^2 + 4 gamma0))",
            f64_repr(run.c),
            f64_repr(stability_margin_bound(run.gamma0))
        )
    } else {
        format!("undefined: gamma0 unbounded because c = {} >= 1", f64_repr(run.c))
    };
    GateStatus::result(ok, detail)
}

fn print_gate(name: &str, gate: &GateStatus) {
    let status = if !gate.evaluated {
        "NOT EVALUATED"
    } else if gate.passed {
        "PASS"
    } else {
        "FAIL"
    };
    println!("gate {name}: {status} ({})", gate.detail);
}

fn load_manifest_checked(cfg: &BuiltConfig) -> Result<RunManifest> {
    let manifest = RunManifest::load(&cfg.output_dir)?
        .ok_or_else(|| anyhow!("no manifest in {}; run train first", cfg.output_dir.display()))?;
    if manifest.config_hash != cfg.config_hash {
        bail!(
            "config hash mismatch: artifacts in {} were produced by a different config; re-run train",
            cfg.output_dir.display()
        );
    }
    Ok(manifest)
}

/// Controllability estimation, the terminal-set scalar, and the horizon
/// certificates. Refuses when the recorded margin reached 1.
pub fn cmd_certify(cfg: &BuiltConfig) -> Result<Outcome> {
    let dir = cfg.output_dir.clone();
    let mut manifest = load_manifest_checked(cfg)?;
    let record = TrainRecord::load(&dir)?;

    if record.margin_flagged || record.c >= 1.0 || record.gamma0.is_none() {
        println!(
            "certify: refused, error margin c = {} reached 1; adjust the training domain or \
             enrich the basis, then retrain",
            f64_repr(record.c)
        );
        manifest.gates.error_margin = GateStatus::result(
            false,
            format!("c = {} >= 1 (certification refused)", f64_repr(record.c)),
        );
        manifest.save(&dir)?;
        return Ok(Outcome::GateFailed);
    }
    let gamma0 = record.gamma0.expect("checked above");

    let bench = &cfg.benchmark;
    let lqr = record.lqr()?;
    let policy = lqr.policy();
    let (_train_samples, test_samples) = draw_sample_sets(&cfg.avi);

    let rollout_len = match cfg.rollout_length {
        Some(m) => m,
        None => default_rollout_length(
            &bench.system,
            &bench.cost,
            &policy,
            &test_samples,
            &bench.state_box,
            &bench.input_box,
            cfg.avi.lstar_exclusion,
        )?,
    };
    let d = terminal_set_d(&bench.cost, gamma0, &cfg.avi.training_box)?;
    let ctx = HorizonContext {
        gamma0,
        c: record.c,
        beta: cfg.beta,
        d,
    };
    let fit = estimate_controllability(
        &bench.system,
        &bench.cost,
        &policy,
        &test_samples,
        rollout_len,
        &bench.state_box,
        &bench.input_box,
        cfg.avi.lstar_exclusion,
        &cfg.sigma_grid,
        &ctx,
    )?;
    let bundle = build_bundle(
        gamma0,
        record.c,
        &fit,
        &bench.cost,
        &cfg.avi.training_box,
        cfg.beta,
        cfg.horizon,
    )?;

    let mut file = fs::File::create(dir.join(CERTIFICATES_FILE))?;
    write_certificates_json(&mut file, &bundle)?;
    manifest.add_artifact(CERTIFICATES_FILE);
    let mut file = fs::File::create(dir.join(CONTROLLABILITY_FILE))?;
    write_envelope_csv(&mut file, &fit)?;
    manifest.add_artifact(CONTROLLABILITY_FILE);

    manifest.gates.error_margin =
        GateStatus::result(true, format!("c = {} < 1", f64_repr(record.c)));
    manifest.gates.stability_margin = GateStatus::result(
        bundle.eq13_ok,
        format!(
            "c = {} vs bound {}",
            f64_repr(record.c),
            f64_repr(stability_margin_bound(gamma0))
        ),
    );
    if let (Some(n), Some(ok)) = (bundle.n_user, bundle.n_user_ok) {
        manifest.gates.horizon = GateStatus::result(
            ok,
            format!("N = {n} vs minimal certified horizon N_lower = {}", bundle.n_lower),
        );
    }
    manifest.save(&dir)?;

    println!(
        "certify: (C, sigma) = ({}, {}), M = {}, d = {}, gamma_V = {}, gamma = {}",
        f64_repr(bundle.c_envelope),
        f64_repr(bundle.sigma),
        bundle.rollout_len,
        f64_repr(bundle.d),
        f64_repr(bundle.gamma_v),
        f64_repr(bundle.gamma),
    );
    println!(
        "certify: N1_lower = {}, N2_lower = {}, N_lower = {}, excluded samples: {} small-l*, {} box",
        f64_repr(bundle.n1_lower),
        bundle.n2_lower,
        bundle.n_lower,
        fit.excluded_small_lstar,
        fit.excluded_box_violation,
    );
    print_gate("stability_margin", &manifest.gates.stability_margin);
    if manifest.gates.horizon.evaluated {
        print_gate("horizon", &manifest.gates.horizon);
    }
    if !bundle.eq13_ok {
        println!(
            "note: the stability-margin test concerns the standalone iterated controller; \
             the predictive controller's certificates above require only c < 1"
        );
    }

    let passed = manifest.gates.stability_margin.passed
        && (!manifest.gates.horizon.evaluated || manifest.gates.horizon.passed);
    Ok(if passed {
        Outcome::AllPassed
    } else {
        Outcome::GateFailed
    })
}

#[derive(Debug, Deserialize)]
pub struct CertRecord {
    pub c: f64,
    pub gamma0: f64,
    #[serde(rename = "C")]
    pub c_envelope: f64,
    pub sigma: f64,
    pub d: f64,
    pub epsilon: f64,
    #[serde(rename = "gamma_V")]
    pub gamma_v: f64,
    pub gamma: f64,
    #[serde(rename = "N_prime")]
    pub n_prime: usize,
    #[serde(rename = "N_dprime")]
    pub n_dprime: usize,
    #[serde(rename = "N_lower")]
    pub n_lower: usize,
    #[serde(rename = "N1_lower")]
    pub n1_lower: f64,
    #[serde(rename = "N2_lower")]
    pub n2_lower: usize,
    #[serde(rename = "N_user")]
    pub n_user: Option<usize>,
    #[serde(rename = "alpha1_at_N")]
    pub alpha1_at_n: Option<f64>,
}

impl CertRecord {
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(CERTIFICATES_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)?;
        let record =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(Some(record))
    }

    pub fn alpha1(&self, n: usize) -> f64 {
        adpmpc::certificates::alpha1(n, self.c, self.gamma_v, self.gamma0, self.n_prime)
    }
}

/// Evaluates the candidate-sequence bound on V_N(x0): the cheaper of a
/// zero-input rollout and a clamped-LQR rollout, provided the states stay
/// inside the state box.
fn candidate_value_bound(
    problem: &OcpProblem<'_>,
    x0: &DVector<f64>,
    lqr: &LqrInit,
) -> Result<Option<f64>> {
    let m = problem.sys.input_dim();
    let zero = move |_x: &DVector<f64>| DVector::zeros(m);
    let feedback = lqr.policy();
    let mut best: Option<f64> = None;
    for kind in 0..2 {
        let mut x = x0.clone();
        let mut cost = 0.0;
        let mut feasible = true;
        for _ in 0..problem.horizon {
            let u = if kind == 0 {
                zero(&x)
            } else {
                problem.input_box.project(&feedback.act(&x)?)
            };
            cost += problem.cost.eval(&x, &u);
            x = problem.sys.step(&x, &u)?;
            if !problem.state_box.contains(&x) {
                feasible = false;
                break;
            }
        }
        if feasible {
            cost += problem.v_f.eval(&x);
            best = Some(best.map_or(cost, |b: f64| b.min(cost)));
        }
    }
    Ok(best)
}

fn value_to_json(v: &serde_json::Value) -> Json {
    match v {
        serde_json::Value::Null => Json::Null,
        serde_json::Value::Bool(b) => Json::Bool(*b),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Json::Int(i)
            } else {
                Json::Float(n.as_f64().unwrap_or(f64::NAN))
            }
        }
        serde_json::Value::String(s) => Json::Str(s.clone()),
        serde_json::Value::Array(items) => Json::Array(items.iter().map(value_to_json).collect()),
        serde_json::Value::Object(map) => Json::Object(
            map.iter()
                .map(|(k, v)| (k.clone(), value_to_json(v)))
                .collect(),
        ),
    }
}

/// Receding-horizon simulation for every requested initial state, with the
/// trained or the LQR terminal cost.
pub fn cmd_simulate(
    cfg: &BuiltConfig,
    x0_override: &[DVector<f64>],
    terminal: TerminalMode,
) -> Result<Outcome> {
    let dir = cfg.output_dir.clone();
    let mut manifest = load_manifest_checked(cfg)?;
    let record = TrainRecord::load(&dir)?;
    let cert = CertRecord::load(&dir)?;
    let bench = &cfg.benchmark;
    let horizon = cfg
        .horizon
        .ok_or_else(|| anyhow!("horizon (N) required in the config for simulate"))?;

    let lqr = record.lqr()?;
    let v_f = match terminal {
        TerminalMode::Avi => ValueApproximant::new(
            cfg.basis.clone(),
            DVector::from_vec(record.weights_final.clone()),
        )?,
        TerminalMode::Lqr => {
            ValueApproximant::from_quadratic(cfg.basis.clone(), &lqr.cost_matrix)?
        }
    };
    let problem = OcpProblem::new(
        &bench.system,
        &bench.cost,
        &v_f,
        horizon,
        &bench.state_box,
        &bench.input_box,
        &cfg.avi.training_box,
    )?;

    let x0_list: Vec<DVector<f64>> = if x0_override.is_empty() {
        cfg.x0_list.clone()
    } else {
        x0_override.to_vec()
    };
    if x0_list.is_empty() {
        bail!("x0 required: provide x0 in the config or pass --x0");
    }

    let mut new_runs: Vec<(String, Json)> = Vec::new();
    for (i, x0) in x0_list.iter().enumerate() {
        let tag = format!("{}_{}", terminal.tag(), i);
        if !bench.state_box.contains(x0) {
            eprintln!(
                "simulate: skipping x0 #{i} {:?}: outside the state box",
                x0.as_slice()
            );
            continue;
        }
        let candidate = candidate_value_bound(&problem, x0, &lqr)?;
        let within_beta = candidate.map(|c| c <= cfg.beta);
        match within_beta {
            Some(true) => {}
            Some(false) => eprintln!(
                "simulate: x0 #{i}: candidate value {} exceeds beta = {}; the level-set \
                 certificate does not cover this start (adjust beta and re-certify if needed)",
                f64_repr(candidate.unwrap()),
                f64_repr(cfg.beta)
            ),
            None => eprintln!(
                "simulate: x0 #{i}: no feasible candidate sequence certified V_N(x0) <= beta"
            ),
        }

        let result = receding_horizon(
            &problem,
            x0,
            cfg.steps,
            cfg.stop_tol,
            cfg.avi.lstar_exclusion,
            cert.as_ref().map(|c| c.epsilon),
        )?;
        let bound = match (&cert, result.v_n_sequence.first()) {
            (Some(c), Some(v0)) => {
                let a1 = c.alpha1(horizon);
                if a1 > 0.0 {
                    Some(v0 / a1)
                } else {
                    None
                }
            }
            _ => None,
        };

        let csv_name = format!("trajectory_{tag}.csv");
        let mut file = fs::File::create(dir.join(&csv_name))?;
        write_closedloop_csv(&mut file, &result)?;
        manifest.add_artifact(&csv_name);

        let rdp = rdp_check(&result, 0.0);
        println!(
            "simulate [{tag}]: steps = {}, final |x| = {}, J = {}, min_alpha = {}, rdp(0) = {}",
            result.steps(),
            f64_repr(result.trajectory.states.last().map_or(0.0, |x| x.norm())),
            f64_repr(result.j_cost),
            result
                .min_alpha()
                .map_or("n/a".to_string(), f64_repr),
            if rdp.pass { "pass" } else { "fail" },
        );

        new_runs.push((
            tag.clone(),
            closedloop_run_json(&tag, x0, &result, within_beta, candidate, bound),
        ));
        if !manifest.x0_list.iter().any(|x| {
            x.len() == x0.len() && x.iter().zip(x0.iter()).all(|(a, b)| a == b)
        }) {
            manifest.x0_list.push(x0.iter().copied().collect());
        }
    }

    if new_runs.is_empty() {
        bail!("simulate: every requested x0 was skipped");
    }

    // Merge with previously recorded runs (other terminal mode or starts).
    let path = dir.join(CLOSEDLOOP_FILE);
    let mut runs: Vec<(String, Json)> = Vec::new();
    if path.exists() {
        let text = fs::read_to_string(&path)?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        if let Some(existing) = value.get("runs").and_then(|r| r.as_array()) {
            for run in existing {
                if let Some(tag) = run.get("tag").and_then(|t| t.as_str()) {
                    if !new_runs.iter().any(|(t, _)| t == tag) {
                        runs.push((tag.to_string(), value_to_json(run)));
                    }
                }
            }
        }
    }
    runs.extend(new_runs);
    runs.sort_by(|a, b| a.0.cmp(&b.0));
    let mut file = fs::File::create(&path)?;
    adpmpc::mpc::write_closedloop_json(
        &mut file,
        &runs.into_iter().map(|(_, j)| j).collect::<Vec<_>>(),
    )?;
    manifest.add_artifact(CLOSEDLOOP_FILE);
    manifest.save(&dir)?;

    Ok(Outcome::AllPassed)
}

/// Human-readable summary of everything the pipeline recorded.
pub fn cmd_report(dir: &Path) -> Result<Outcome> {
    let manifest = match RunManifest::load(dir)? {
        Some(m) => m,
        None => {
            println!("no artifacts in {}", dir.display());
            bail!("nothing to report");
        }
    };
    let missing = manifest.missing_artifacts(dir);
    if !missing.is_empty() {
        println!("missing artifacts in {}:", dir.display());
        for name in &missing {
            println!("  {name}");
        }
        bail!("{} artifact(s) missing", missing.len());
    }

    println!("run summary ({})", dir.display());
    println!("config hash: {}", manifest.config_hash);
    println!("artifacts: {}", manifest.artifacts.join(", "));

    if manifest.artifacts.iter().any(|a| a == TRAIN_FILE) {
        let record = TrainRecord::load(dir)?;
        println!("-- training");
        println!("  c                = {}", f64_repr(record.c));
        println!(
            "  gamma0           = {}",
            record.gamma0.map_or("undefined (c >= 1)".into(), f64_repr)
        );
        println!("  sup_eps          = {}", f64_repr(record.sup_eps));
        println!(
            "  converged_at     = {}",
            record
                .converged_at
                .map_or("not converged".into(), |i| i.to_string())
        );
        println!("  iterations       = {}", record.iterations);
    }

    if manifest.artifacts.iter().any(|a| a == CERTIFICATES_FILE) {
        if let Some(cert) = CertRecord::load(dir)? {
            println!("-- certificates");
            println!("  (C, sigma)       = ({}, {})", f64_repr(cert.c_envelope), f64_repr(cert.sigma));
            println!("  d                = {}", f64_repr(cert.d));
            println!("  epsilon (X_f)    = {}", f64_repr(cert.epsilon));
            println!("  gamma_V          = {}", f64_repr(cert.gamma_v));
            println!("  gamma            = {}", f64_repr(cert.gamma));
            println!("  N1_lower         = {}", f64_repr(cert.n1_lower));
            println!("  N2_lower         = {}", cert.n2_lower);
            println!("  N_lower          = {}", cert.n_lower);
            println!(
                "  chosen N         = {}",
                cert.n_user.map_or("not set".into(), |n| n.to_string())
            );
            println!(
                "  alpha1(N)        = {}",
                cert.alpha1_at_n.map_or("n/a".into(), f64_repr)
            );
        }
    }

    if manifest.artifacts.iter().any(|a| a == CLOSEDLOOP_FILE) {
        let text = fs::read_to_string(dir.join(CLOSEDLOOP_FILE))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if let Some(runs) = value.get("runs").and_then(|r| r.as_array()) {
            println!("-- closed loop");
            for run in runs {
                let tag = run.get("tag").and_then(|t| t.as_str()).unwrap_or("?");
                let fmt_field = |name: &str| -> String {
                    match run.get(name) {
                        Some(serde_json::Value::Number(n)) => {
                            n.as_f64().map_or("n/a".into(), f64_repr)
                        }
                        _ => "n/a".into(),
                    }
                };
                println!(
                    "  [{tag}] steps = {}, J = {}, min_alpha = {}, bound = {}",
                    run.get("steps").and_then(|s| s.as_i64()).unwrap_or(-1),
                    fmt_field("J"),
                    fmt_field("min_alpha"),
                    fmt_field("performance_bound"),
                );
            }
        }
    }

    println!("-- gates");
    print_gate("error_margin (c < 1)", &manifest.gates.error_margin);
    print_gate(
        "input_constraints (trained policy inside the input box)",
        &manifest.gates.input_constraints,
    );
    print_gate(
        "stability_margin (iterated controller)",
        &manifest.gates.stability_margin,
    );
    print_gate("horizon (N vs N_lower)", &manifest.gates.horizon);
    if manifest.gates.stability_margin.evaluated && !manifest.gates.stability_margin.passed {
        println!(
            "note: stability_margin concerns the standalone iterated controller; the predictive \
             controller's stability/performance chain requires only c < 1 and a horizon above \
             N_lower"
        );
    }

    Ok(if manifest.gates.all_evaluated_passed() {
        Outcome::AllPassed
    } else {
        Outcome::GateFailed
    })
}
