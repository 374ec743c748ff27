//! Subcommand implementations. Each returns an [`Outcome`] or an error;
//! `main` maps them to exit codes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use fixtures::uniform_matrix;
use safegame::bss::{
    block_pca_game, column_angles, game_quadratics, generate_mixed_sources, mix, pca_game, recover_mixing,
    rescaled_batches, run_pipeline, MixingModel, MixingRecoveryConfig, MixingStructure,
};
use safegame::dynamics::{nash_check, simulate, ProbeConfig, Termination};
use safegame::linalg::{orthonormalize, simultaneous_diagonalize_symmetric};
use safegame::nn::{fa_safety, pseudoinverse, LayerPair};
use safegame::safety::{
    certify_bilinear, certify_multilinear_symmetric, certify_quadratic_block, certify_quadratic_open,
    certify_strong_typing, empirical_safety, CertificateResult, Refutation, Verdict, Witness,
};
use safegame::sampling::stream;
use safegame::tensor::{hosvd, recover_symmetric_tensor_svd, tensor_svd_residual};
use safegame::{DenseTensor, Game, LossSpec};
use serde::Deserialize;

use crate::config::{load_matrix, BssConfig, BssMode, MatrixSource, Scenario, TensorConfig};
use crate::report::{matrix_csv, num, Report};

/// Tolerance for the Nash check after a finite simulation.
pub const NASH_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Safe, certified or converged.
    Success,
    /// The mathematical property checked does not hold.
    Refuted,
}

impl Outcome {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Self::Success
        } else {
            Self::Refuted
        }
    }
}

mod fixtures {
    use nalgebra::DMatrix;
    use safegame::sampling::stream;

    /// Entries uniform on `[-1, 1)` from stream `(seed, index)`.
    pub fn uniform_matrix(seed: u64, index: u64, r: usize, c: usize) -> DMatrix<f64> {
        use rand::Rng;
        let mut rng = stream(seed, index);
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }
}

fn scenario_game(scn: &Scenario) -> Result<Game> {
    if let Some(g) = scn.game()? {
        return Ok(g);
    }
    if let Some(b) = scn.bss() {
        return bss_game(scn, &b).map(|(g, _)| g);
    }
    match scn.example() {
        Some("fa") => bail!("the fa scenario is a feedback-alignment check, not a game; use check-safety or certify"),
        _ => bail!("scenario {} does not define a game", scn.label()),
    }
}

fn orthogonal_fixture(seed: u64, index: u64, d: usize) -> Result<DMatrix<f64>> {
    Ok(orthonormalize(&uniform_matrix(seed, index, d, d))?)
}

/// The PCA game of a BSS scenario, plus block sizes for block mode.
fn bss_game(scn: &Scenario, cfg: &BssConfig) -> Result<(Game, Option<Vec<usize>>)> {
    let dists = cfg.dists()?;
    let samples = cfg.samples.unwrap_or(2000);
    let seed = scn.seed();
    match cfg.mode {
        BssMode::Open => {
            let mixings = match &cfg.mixings {
                Some(ms) => ms.iter().map(|m| scn.matrix(m)).collect::<Result<Vec<_>>>()?,
                None => {
                    let p = orthogonal_fixture(seed, 1 << 40, 3)?;
                    vec![p.clone(), p]
                }
            };
            let refs: Vec<&DMatrix<f64>> = mixings.iter().collect();
            let batches = rescaled_batches(&refs, &dists, samples, seed)?;
            Ok((pca_game(&batches, true)?, None))
        }
        BssMode::Block => {
            let m = scn.matrix(cfg.mixing.as_ref().context("block mode needs `mixing`")?)?;
            let sizes = cfg.sizes.clone().context("block mode needs `sizes`")?;
            let refs = vec![&m; sizes.len()];
            let batches = rescaled_batches(&refs, &dists, samples, seed)?;
            Ok((block_pca_game(&batches, &sizes, true)?, Some(sizes)))
        }
        BssMode::Ica => bail!("the ica scenario is a recovery run, not a game; use the bss command"),
    }
}

pub fn check_safety(scn: &Scenario) -> Result<(Outcome, Report)> {
    let mut report = Report::new("check-safety", &scn.label(), &scn.hash, scn.seed());
    if scn.example() == Some("fa") {
        return fa_sweep(scn, report);
    }
    let game = scenario_game(scn)?;
    let cfg = scn.sampler()?;
    let r = empirical_safety(&game, &cfg)?;
    report.field("verdict", if r.is_safe() { "safe" } else { "violation-found" });
    report.count("samples", r.samples);
    report.number("tol", r.tol);
    report.number("worst_value", r.worst_value);
    report.field("worst_pair", format!("({}, {})", r.worst_pair.0, r.worst_pair.1));
    report.count("worst_index", r.worst_index);
    report.vector("worst_point", &r.worst_point);
    report.matrix("pair_min", &r.pair_min);
    let mut csv = String::from("player_m,player_n,min_inner_product\n");
    for m in 0..r.pair_min.nrows() {
        for n in 0..r.pair_min.ncols() {
            writeln!(csv, "{m},{n},{}", num(r.pair_min[(m, n)])).unwrap();
        }
    }
    report.csv("safety_pairs.csv", csv);
    Ok((Outcome::from_bool(r.is_safe()), report))
}

/// `⟨δ_FA, δ_BP⟩` over seeded layers with `B = αW†`, every third one rank one.
fn fa_sweep(scn: &Scenario, mut report: Report) -> Result<(Outcome, Report)> {
    use rand::Rng;
    let cases = scn.sampler()?.count;
    let tol = scn.config.tol.unwrap_or(1e-12);
    let mut csv = String::from("case,rows,cols,rank_deficient,alpha,safety,expected\n");
    let (mut worst, mut worst_gap) = (f64::INFINITY, 0.0f64);
    for i in 0..cases {
        let mut rng = stream(scn.seed(), i as u64);
        let (r, c) = (rng.random_range(1..6), rng.random_range(1..6));
        let deficient = i % 3 == 0;
        let w = if deficient {
            uniform_matrix(scn.seed(), (1 << 32) + i as u64, r, 1) * uniform_matrix(scn.seed(), (2 << 32) + i as u64, 1, c)
        } else {
            uniform_matrix(scn.seed(), (1 << 32) + i as u64, r, c)
        };
        let alpha = [0.5, 1.0, 2.0][i % 3];
        let e = DVector::from_fn(r, |_, _| rng.random_range(-1.0..1.0));
        let s = fa_safety(&LayerPair::scaled_pseudoinverse(w.clone(), alpha), &e)?;
        let expected = alpha * e.dot(&(&w * pseudoinverse(&w) * &e));
        worst = worst.min(s);
        worst_gap = worst_gap.max((s - expected).abs());
        writeln!(csv, "{i},{r},{c},{deficient},{alpha},{},{}", num(s), num(expected)).unwrap();
    }
    let safe = worst >= -tol;
    report.field("verdict", if safe { "safe" } else { "violation-found" });
    report.count("samples", cases);
    report.number("tol", tol);
    report.number("worst_value", worst);
    report.number("max_identity_gap", worst_gap);
    report.csv("fa_sweep.csv", csv);
    Ok((Outcome::from_bool(safe), report))
}

pub fn simulate_cmd(scn: &Scenario) -> Result<(Outcome, Report)> {
    let mut report = Report::new("simulate", &scn.label(), &scn.hash, scn.seed());
    let game = scenario_game(scn)?;
    let w0 = scn.start(&game)?;
    let cfg = scn.dynamics(&game)?;
    let traj = simulate(&game, &w0, &cfg)?;
    let nash = nash_check(&game, traj.last(), NASH_TOL, &ProbeConfig { seed: scn.seed(), ..ProbeConfig::default() })?;
    let converged = traj.termination == Termination::Converged;
    report.vector("start", &w0);
    report.count("rounds", traj.rounds());
    report.field("termination", traj.termination.as_str());
    report.flag("converged", converged);
    report.vector("final_point", traj.last());
    report.vector("final_losses", &DVector::from_vec(traj.losses.last().cloned().unwrap_or_default()));
    report.number("nash_tol", NASH_TOL);
    report.flag("nash", nash.is_nash());
    let per_player: Vec<String> = nash
        .players
        .iter()
        .map(|p| {
            format!(
                "player {}: {} (best improvement {}, projected gradient norm {})",
                p.player,
                if p.is_nash { "nash" } else { "not nash" },
                num(p.best_improvement),
                num(p.gradient_norm)
            )
        })
        .collect();
    report.lines("nash_players", &per_player);
    report.csv("trajectory.csv", traj.to_csv());
    Ok((Outcome::from_bool(converged && nash.is_nash()), report))
}

pub fn certify_cmd(scn: &Scenario) -> Result<(Outcome, Report)> {
    let mut report = Report::new("certify", &scn.label(), &scn.hash, scn.seed());
    let tol = scn.tol();
    let (family, cert) = if scn.example() == Some("fa") {
        ("feedback-alignment", certify_fa(scn, &mut report, tol)?)
    } else if let Some(b) = scn.bss() {
        let (game, sizes) = bss_game(scn, &b)?;
        let (mats, vecs) = game_quadratics(&game)?;
        match sizes {
            Some(s) => ("quadratic-block", certify_quadratic_block(&mats, &vecs, &s, None, tol)?),
            None => ("quadratic-open", certify_quadratic_open(&mats, &vecs, tol)?),
        }
    } else {
        let game = scenario_game(scn)?;
        match scn.factorization() {
            Some(spec) => ("strong-typing", certify_strong_typing(&game, &spec, &scn.sampler()?, tol)?),
            None => certify_game(&game, tol)?,
        }
    };
    report.field("family", family);
    report.field("verdict", &cert.verdict);
    report.lines("notes", &cert.notes);
    write_witness(&mut report, &cert.witness);
    Ok((Outcome::from_bool(cert.is_certified()), report))
}

fn certify_game(game: &Game, tol: f64) -> Result<(&'static str, CertificateResult)> {
    let losses = game.losses();
    if losses.iter().any(|l| matches!(l, LossSpec::BlackBox(_) | LossSpec::Factored { .. })) {
        bail!("certification is unsupported for black-box losses; run check-safety for an empirical check");
    }
    if losses.iter().all(|l| matches!(l, LossSpec::Quadratic { .. })) {
        let (mats, vecs) = game_quadratics(game)?;
        if game.is_block_game() {
            let sizes: Vec<usize> = match game.types().blocks() {
                Some(b) => b.iter().map(|r| r.len()).collect(),
                None => bail!("block certificate needs coordinate blocks"),
            };
            return Ok(("quadratic-block", certify_quadratic_block(&mats, &vecs, &sizes, None, tol)?));
        }
        if game.types().rank() == 1 {
            return Ok(("quadratic-open", certify_quadratic_open(&mats, &vecs, tol)?));
        }
        bail!("no quadratic certificate for this type structure");
    }
    if let [LossSpec::Bilinear { a, left, right }, LossSpec::Bilinear { a: b, left: l2, right: r2 }] = losses {
        if left != l2 || right != r2 {
            bail!("bilinear certificate needs both losses on the same blocks");
        }
        return Ok(("bilinear", certify_bilinear(a, b, tol)?));
    }
    if losses.iter().all(|l| matches!(l, LossSpec::Multilinear { .. })) {
        let tensors: Vec<DenseTensor> = losses
            .iter()
            .map(|l| match l {
                LossSpec::Multilinear { tensor } => tensor.clone(),
                _ => unreachable!(),
            })
            .collect();
        let rank = tensors[0].dims()[0];
        return Ok(("multilinear", certify_multilinear_symmetric(&tensors, rank, tol)?));
    }
    bail!("no certificate for this loss family; run check-safety for an empirical check")
}

/// The `fa` fixture: rank-two `W` (3×4) with `B = W†`. Certified when `B`
/// is a positive multiple of `W†`.
fn fa_fixture(seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let w = uniform_matrix(seed, 0, 3, 2) * uniform_matrix(seed, 1, 2, 4);
    let b = pseudoinverse(&w);
    (w, b)
}

fn certify_fa(scn: &Scenario, report: &mut Report, tol: f64) -> Result<CertificateResult> {
    let (w, b) = fa_fixture(scn.seed());
    let pinv = pseudoinverse(&w);
    let alpha = b.dot(&pinv) / pinv.norm_squared();
    let residual = (&b - &pinv * alpha).norm() / b.norm().max(1.0);
    report.matrix("w", &w);
    report.matrix("b", &b);
    report.number("alpha", alpha);
    let verdict = if residual > tol * (&pinv * alpha).norm().max(1.0) {
        Verdict::Refuted(Refutation::Structure(format!("B is not a multiple of W† (residual {residual:.3e})")))
    } else if alpha <= 0.0 {
        Verdict::Refuted(Refutation::Structure(format!("B = {alpha}·W† with a nonpositive multiple")))
    } else {
        Verdict::Certified
    };
    Ok(CertificateResult {
        verdict,
        witness: Witness { residual, ..Witness::default() },
        notes: vec![],
    })
}

fn write_witness(report: &mut Report, w: &Witness) {
    if let Some(p) = &w.p {
        report.matrix("witness_p", p);
    }
    if let Some(q) = &w.q {
        report.matrix("witness_q", q);
    }
    if let Some(r) = &w.r {
        report.matrix("witness_r", r);
    }
    for (i, d) in w.diagonals.iter().enumerate() {
        report.vector(&format!("witness_diagonal_{i}"), d);
    }
    if let Some(b) = &w.b {
        report.vector("witness_b", b);
    }
    for (i, f) in w.factors.iter().enumerate() {
        report.matrix(&format!("witness_factor_{i}"), f);
    }
    report.number("witness_residual", w.residual);
}

pub fn bss_cmd(scn: &Scenario) -> Result<(Outcome, Report)> {
    let mut report = Report::new("bss", &scn.label(), &scn.hash, scn.seed());
    let cfg = scn.bss().with_context(|| format!("scenario {} has no bss section", scn.label()))?;
    match cfg.mode {
        BssMode::Ica => ica(scn, &cfg, report),
        mode => {
            let (game, sizes) = bss_game(scn, &cfg)?;
            let (mats, vecs) = game_quadratics(&game)?;
            let cert = match &sizes {
                Some(s) => certify_quadratic_block(&mats, &vecs, s, None, scn.tol())?,
                None => certify_quadratic_open(&mats, &vecs, scn.tol())?,
            };
            let samples = scn.sampler()?.count;
            let r = run_pipeline(&game, cert, samples, scn.seed())?;
            report.field("mode", format!("{mode:?}").to_lowercase());
            report.field("certificate", &r.certificate.verdict);
            report.lines("certificate_notes", &r.certificate.notes);
            report.field("safety", if r.safety.is_safe() { "safe" } else { "violation-found" });
            report.number("worst_value", r.safety.worst_value);
            report.count("rounds", r.rounds);
            report.field("termination", r.termination.as_str());
            report.vector("final_point", &r.final_point);
            report.flag("nash", r.nash);
            let mut csv = String::from("key,value\n");
            writeln!(csv, "certificate,{}", r.certificate.verdict.label()).unwrap();
            writeln!(csv, "safe,{}", r.safety.is_safe()).unwrap();
            writeln!(csv, "worst_value,{}", num(r.safety.worst_value)).unwrap();
            writeln!(csv, "rounds,{}", r.rounds).unwrap();
            for (i, x) in r.final_point.iter().enumerate() {
                writeln!(csv, "w_{},{}", i + 1, num(*x)).unwrap();
            }
            report.csv("bss_summary.csv", csv);
            Ok((Outcome::from_bool(r.certificate.is_certified() && r.safety.is_safe()), report))
        }
    }
}

/// Largest principal angle, in degrees, counted as a successful recovery.
pub const RECOVERY_ANGLE_DEG: f64 = 5.0;

fn ica(scn: &Scenario, cfg: &BssConfig, mut report: Report) -> Result<(Outcome, Report)> {
    let dists = cfg.dists()?;
    let seed = scn.seed();
    let samples = cfg.samples.unwrap_or(100_000);
    // a single distribution without a mixing means three latents
    let mixing = match &cfg.mixing {
        Some(m) => scn.matrix(m)?,
        None => orthogonal_fixture(seed, 1 << 40, if dists.len() == 1 { 3 } else { dists.len() })?,
    };
    let dists = if dists.len() == 1 { vec![dists[0]; mixing.ncols()] } else { dists };
    let model = MixingModel::new(mixing.clone(), MixingStructure::Orthogonal, dists[0], cfg.noise, seed)?;
    let s = generate_mixed_sources(&dists, samples, seed)?;
    let x = mix(&model, &s)?;
    let rcfg = MixingRecoveryConfig {
        seed,
        contraction_fallback: cfg.fallback.unwrap_or(true),
        ..MixingRecoveryConfig::default()
    };
    let r = recover_mixing(&x.data, &rcfg)?;
    let angles = column_angles(&r.mixing, &mixing);
    let recovered = angles.iter().all(|&a| a < RECOVERY_ANGLE_DEG);
    report.field("mode", "ica");
    report.field("sources", dists.iter().map(|d| d.as_str()).collect::<Vec<_>>().join(","));
    report.count("samples", samples);
    report.number("noise", cfg.noise);
    report.flag("reliable", r.reliable);
    report.field("method", format!("{:?}", r.method).to_lowercase());
    report.number("residual", r.residual);
    report.vector("kurtosis", &r.kurtosis);
    report.matrix("true_mixing", &mixing);
    report.matrix("recovered_mixing", &r.mixing);
    report.vector("angles_deg", &DVector::from_vec(angles.clone()));
    report.flag("within_5_degrees", recovered);
    let mut csv = String::from("column,angle_deg\n");
    for (i, a) in angles.iter().enumerate() {
        writeln!(csv, "{i},{}", num(*a)).unwrap();
    }
    report.csv("recovery_angles.csv", csv);
    report.csv("recovered_mixing.csv", matrix_csv(&r.mixing));
    Ok((Outcome::from_bool(r.reliable && recovered), report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecomposeMode {
    Hosvd,
    TensorSvdRecover,
    JointDiag,
}

/// Input document for `decompose`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecomposeInput {
    #[serde(default)]
    tensor: Option<TensorConfig>,
    #[serde(default)]
    matrices: Option<Vec<MatrixSource>>,
    #[serde(default)]
    rank: Option<usize>,
}

pub fn decompose(input: &Path, mode: DecomposeMode, rank: Option<usize>, tol: f64) -> Result<(Outcome, Report)> {
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let doc: DecomposeInput =
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}:{}:{}: {e}", input.display(), e.line(), e.column()))?;
    let base: PathBuf = input.parent().map(Path::to_path_buf).unwrap_or_default();
    let hash = {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(text.as_bytes()))
    };
    let mut report = Report::new("decompose", &input.display().to_string(), &hash, 0);
    let tensor = || -> Result<DenseTensor> {
        let t = doc.tensor.as_ref().context("input needs a `tensor` with `dims` and `data`")?;
        Ok(DenseTensor::new(t.dims.clone(), t.data.clone())?)
    };
    match mode {
        DecomposeMode::Hosvd => {
            let t = tensor()?;
            let h = hosvd(&t);
            let rec = h.reconstruct().distance(&t)? / t.frobenius_norm().max(1.0);
            report.field("mode", "hosvd");
            report.number("reconstruction_residual", rec);
            report.number("all_orthogonality_residual", h.all_orthogonality_residual());
            for (k, f) in h.factors.iter().enumerate() {
                report.matrix(&format!("factor_{k}"), f);
                report.vector(&format!("singular_values_{k}"), &DVector::from_vec(h.singular_values[k].clone()));
                report.csv(&format!("factor_{k}.csv"), matrix_csv(f));
            }
            report.csv("core.csv", tensor_csv(&h.core));
        }
        DecomposeMode::TensorSvdRecover => {
            let t = tensor()?;
            let rank = rank.or(doc.rank).unwrap_or(t.dims()[0]);
            let f = recover_symmetric_tensor_svd(&t, rank)?;
            report.field("mode", "tensor-svd-recover");
            report.count("rank", rank);
            report.number("residual", tensor_svd_residual(&t, &f)?);
            report.vector("weights", &f.weights);
            for (k, m) in f.factors.iter().enumerate() {
                report.csv(&format!("factor_{k}.csv"), matrix_csv(m));
            }
            report.matrix("factor", &f.factors[0]);
            report.csv("weights.csv", matrix_csv(&DMatrix::from_column_slice(f.weights.len(), 1, f.weights.as_slice())));
        }
        DecomposeMode::JointDiag => {
            let srcs = doc.matrices.as_ref().context("input needs `matrices`")?;
            let mats = srcs.iter().map(|m| load_matrix(m, &base)).collect::<Result<Vec<_>>>()?;
            let j = simultaneous_diagonalize_symmetric(&mats, tol)?;
            report.field("mode", "joint-diag");
            report.number("residual", j.residual);
            report.matrix("basis", &j.basis);
            let diag = DMatrix::from_fn(j.diagonals.len(), j.basis.ncols(), |i, k| j.diagonals[i][k]);
            report.matrix("diagonals", &diag);
            report.csv("basis.csv", matrix_csv(&j.basis));
            report.csv("diagonals.csv", matrix_csv(&diag));
        }
    }
    Ok((Outcome::Success, report))
}

/// `dims` on the first line, then the entries in storage order.
fn tensor_csv(t: &DenseTensor) -> String {
    let dims: Vec<String> = t.dims().iter().map(usize::to_string).collect();
    let data: Vec<String> = t.data().iter().map(|&x| num(x)).collect();
    format!("{}\n{}\n", dims.join(","), data.join(","))
}
