use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use tvb_core::adjoint::{pair_problem, tracking_loss, Evaluator};
use tvb_core::data::{load_manifest, Dataset, DatasetRole, GaussianStream};
use tvb_core::grid::{GradientOperator, Scheme};
use tvb_core::io::{load_image, save_image};
use tvb_core::metrics::{psnr, ssim};
use tvb_core::multi::{build_multi_problem, MultiTermSpec};
use tvb_core::param::{ParamField, ParamKind};
use tvb_core::stationarity::{check_m_stationarity_pairs, StationarityInput};
use tvb_core::trust_region::{self, write_trace_csv, TrustRegionResult};
use tvb_core::Error;

use crate::alpha_file::{format_alpha, parse_alpha};
use crate::config::RunConfig;
use crate::error::CliError;

/// Dofs checked per phase by `gradcheck`; larger fields are subsampled.
const GRADCHECK_MAX_DOFS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Denoise,
    Train,
    Sweep,
    Gradcheck,
    Verify,
    CompareDiscretizations,
}

pub fn run(cmd: Command, cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Denoise => cmd_denoise(cfg, out),
        Command::Train => cmd_train(cfg, out),
        Command::Sweep => cmd_sweep(cfg, out),
        Command::Gradcheck => cmd_gradcheck(cfg, out),
        Command::Verify => cmd_verify(cfg, out),
        Command::CompareDiscretizations => cmd_compare_discretizations(cfg, out),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let manifest = cfg.input_file("data.manifest")?;
    Ok(load_manifest(manifest, DatasetRole::Train)?)
}

/// Fields from `param.file`, or constant fields of `param.kind` at `param.init`.
fn initial_params(cfg: &RunConfig, schemes: &[Scheme], shape: (usize, usize)) -> Result<Vec<ParamField>, CliError> {
    let files = cfg.paths("param.file");
    if files.is_empty() {
        let kind = cfg.param_kind()?;
        let init = cfg.f64_or("param.init", 0.01)?;
        let p = ParamField::constant(kind, shape.0, shape.1, init)?;
        return Ok(vec![p; schemes.len()]);
    }
    if files.len() != schemes.len() {
        return Err(CliError::Usage(format!("{} alpha files for {} schemes", files.len(), schemes.len())));
    }
    files
        .iter()
        .map(|f| {
            let text = std::fs::read_to_string(f).map_err(|e| CliError::Io(format!("{}: {e}", f.display())))?;
            parse_alpha(&text, shape.0, shape.1)
        })
        .collect()
}

fn operators(schemes: &[Scheme], shape: (usize, usize)) -> Vec<Arc<GradientOperator>> {
    schemes
        .iter()
        .map(|&s| Arc::new(GradientOperator::new(shape.0, shape.1, s)))
        .collect()
}

fn evaluator(cfg: &RunConfig, ds: Dataset, schemes: &[Scheme]) -> Result<Evaluator, CliError> {
    let ops = operators(schemes, ds.shape());
    let solver = cfg.solver()?;
    let mut ev = match cfg.get("run.threads") {
        Some(_) => Evaluator::with_threads(ds, ops, solver, cfg.usize_or("run.threads", 0)?)?,
        None => Evaluator::new(ds, ops, solver)?,
    };
    ev.huber_tol = cfg.huber_tol()?;
    Ok(ev)
}

fn dofs_of(params: &[ParamField]) -> Vec<f64> {
    params.iter().flat_map(|p| p.dofs().iter().copied()).collect()
}

fn with_dofs(templates: &[ParamField], dofs: &[f64]) -> Result<Vec<ParamField>, CliError> {
    let mut at = 0;
    let mut out = Vec::with_capacity(templates.len());
    for t in templates {
        out.push(t.with_dofs(dofs[at..at + t.len()].to_vec())?);
        at += t.len();
    }
    Ok(out)
}

fn kind_label(p: &ParamField) -> String {
    match p.kind() {
        ParamKind::Scalar => "scalar".into(),
        ParamKind::Patch { p1, p2 } => format!("{p1}x{p2}"),
        ParamKind::PerPixel => "perpixel".into(),
    }
}

pub fn cmd_denoise(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let input = cfg.input_file("data.input")?;
    let clean = cfg.get("data.clean").map(|_| cfg.input_file("data.clean")).transpose()?;
    let output = cfg.require_path("data.output")?;
    let dir = cfg.output_dir()?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
    }
    let solver = cfg.solver()?;
    let schemes = cfg.schemes(&[Scheme::Forward])?;

    let f = load_image(&input)?;
    let clean = clean.map(load_image).transpose()?;
    if let Some(c) = &clean {
        if !c.same_shape(&f) {
            return Err(CliError::Usage(format!("clean image {:?} vs input {:?}", c.shape(), f.shape())));
        }
    }
    let params = initial_params(cfg, &schemes, f.shape())?;
    let spec = MultiTermSpec::new(schemes, params, false)?;
    let problem = build_multi_problem(&f, &spec)?;
    let sol = solver.solve(&problem, None)?;
    save_image(&output, &sol.u)?;

    let mut report = format!(
        "iterations {}\nstationarity {:.6e}\ncomplementarity {:.6e}\ndual_feasibility {:.6e}\n",
        sol.iterations, sol.residuals.stationarity, sol.residuals.complementarity, sol.residuals.dual_feasibility
    );
    if let Some(c) = &clean {
        report += &format!(
            "psnr_noisy {:.6}\nssim_noisy {:.6}\npsnr {:.6}\nssim {:.6}\n",
            psnr(&f, c, 1.0)?,
            ssim(&f, c, 1.0)?,
            psnr(&sol.u, c, 1.0)?,
            ssim(&sol.u, c, 1.0)?
        );
    }
    write_text(&dir.join("denoise_report.txt"), &report)?;
    out.write_all(report.as_bytes())?;
    writeln!(out, "wrote {}", output.display())?;
    Ok(())
}

/// Outcome of one training run, for summaries.
struct TrainSummary {
    label: String,
    dofs: usize,
    iterations: usize,
    step_norm: f64,
    cost: f64,
    ssim: f64,
    psnr: f64,
}

fn alpha_file_names(schemes: &[Scheme]) -> Vec<String> {
    if schemes.len() == 1 {
        vec!["alpha.txt".into()]
    } else {
        schemes
            .iter()
            .enumerate()
            .map(|(k, s)| format!("alpha_{}_{s}.txt", k + 1))
            .collect()
    }
}

fn write_run_outputs(
    ev: &mut Evaluator,
    schemes: &[Scheme],
    result: &TrustRegionResult,
    dir: &Path,
) -> Result<TrainSummary, CliError> {
    for (name, p) in alpha_file_names(schemes).iter().zip(&result.alpha) {
        write_text(&dir.join(name), &format_alpha(p))?;
    }
    write_trace_csv(create(&dir.join("trace.csv"))?, &result.trace)?;

    let eval = ev.cost(&result.alpha)?;
    let mut pairs = create(&dir.join("pairs.csv"))?;
    writeln!(pairs, "id,cost,ssim,psnr,ssim_noisy,psnr_noisy")?;
    let (mut ssim_sum, mut psnr_sum) = (0.0, 0.0);
    for (pair, sol) in ev.dataset().pairs().iter().zip(&eval.solutions) {
        let loss = tracking_loss(sol.u.data(), pair.clean.data());
        let (s, p) = (ssim(&sol.u, &pair.clean, 1.0)?, psnr(&sol.u, &pair.clean, 1.0)?);
        ssim_sum += s;
        psnr_sum += p;
        writeln!(
            pairs,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            pair.id,
            loss,
            s,
            p,
            ssim(&pair.noisy, &pair.clean, 1.0)?,
            psnr(&pair.noisy, &pair.clean, 1.0)?
        )?;
    }
    pairs.flush()?;
    let n = ev.dataset().len() as f64;
    let step_norm = result.trace.iter().rev().find(|t| t.accepted).map_or(0.0, |t| t.step_norm);
    let summary = TrainSummary {
        label: kind_label(&result.alpha[0]),
        dofs: result.alpha.iter().map(ParamField::len).sum(),
        iterations: result.trace.len(),
        step_norm,
        cost: eval.cost,
        ssim: ssim_sum / n,
        psnr: psnr_sum / n,
    };
    let table = format!(
        "kind iterations step_norm cost ssim psnr\n{} {} {:.6e} {:.10} {:.4} {:.4}\n",
        summary.label, summary.iterations, summary.step_norm, summary.cost, summary.ssim, summary.psnr
    );
    write_text(&dir.join("metrics.txt"), &table)?;
    Ok(summary)
}

fn train_model(cfg: &RunConfig, ds: Dataset, schemes: &[Scheme], dir: &Path) -> Result<TrainSummary, CliError> {
    let tr = cfg.tr_config()?;
    let params = initial_params(cfg, schemes, ds.shape())?;
    MultiTermSpec::new(schemes.to_vec(), params.clone(), false)?;
    let mut ev = evaluator(cfg, ds, schemes)?;
    match trust_region::run(&mut ev, &params, &tr) {
        Ok(result) => write_run_outputs(&mut ev, schemes, &result, dir),
        Err(Error::MaxIterations { iterations, partial }) => {
            write_run_outputs(&mut ev, schemes, &partial, dir)?;
            Err(CliError::Numerical(format!(
                "trust region stopped after {iterations} iterations; last iterate written to {}",
                dir.display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

fn print_summaries(out: &mut dyn Write, rows: &[(&str, &TrainSummary)]) -> Result<(), CliError> {
    writeln!(out, "{:<10} {:>9} {:>6} {:>11} {:>14} {:>7} {:>8}", "model", "kind", "dofs", "step_norm", "cost", "ssim", "psnr")?;
    for (name, s) in rows {
        writeln!(
            out,
            "{:<10} {:>9} {:>6} {:>11.3e} {:>14.8} {:>7.4} {:>8.3}  ({} iterations)",
            name, s.label, s.dofs, s.step_norm, s.cost, s.ssim, s.psnr, s.iterations
        )?;
    }
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let schemes = cfg.schemes(&[Scheme::Forward])?;
    cfg.tr_config()?;
    let ds = dataset(cfg)?;
    let dir = cfg.output_dir()?;
    let s = train_model(cfg, ds, &schemes, &dir)?;
    print_summaries(out, &[("train", &s)])?;
    writeln!(out, "wrote {}", dir.display())?;
    Ok(())
}

pub fn cmd_compare_discretizations(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let schemes = cfg.schemes(&Scheme::ALL)?;
    cfg.tr_config()?;
    if cfg.get("param.file").is_some() {
        return Err(CliError::Usage("compare-discretizations starts from param.kind and param.init".into()));
    }
    let ds = dataset(cfg)?;
    let dir = cfg.output_dir()?;
    let (single_dir, multi_dir) = (dir.join("single"), dir.join("multi"));
    for d in [&single_dir, &multi_dir] {
        std::fs::create_dir_all(d).map_err(|e| CliError::Io(format!("{}: {e}", d.display())))?;
    }
    let single = train_model(cfg, ds.clone(), &[Scheme::Forward], &single_dir)?;
    let multi = train_model(cfg, ds, &schemes, &multi_dir)?;
    print_summaries(out, &[("forward", &single), ("multi", &multi)])?;
    writeln!(out, "wrote {}", dir.display())?;
    Ok(())
}

fn sweep_grid(cfg: &RunConfig) -> Result<Vec<f64>, CliError> {
    let mut grid = match (cfg.f64_list("sweep.alphas")?, cfg.f64_list("sweep.range")?) {
        (Some(a), None) => a,
        (None, Some(r)) => match r.as_slice() {
            &[lo, hi, count] if count >= 1.0 && count.fract() == 0.0 && lo <= hi => {
                let n = count as usize;
                if n == 1 {
                    vec![lo]
                } else {
                    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
                }
            }
            _ => return Err(CliError::Usage("`sweep.range` must be `lo, hi, count` with lo <= hi".into())),
        },
        (Some(_), Some(_)) => return Err(CliError::Usage("give `sweep.alphas` or `sweep.range`, not both".into())),
        (None, None) => return Err(CliError::Usage("`sweep.alphas` or `sweep.range` is required".into())),
    };
    if let Some(v) = grid.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(CliError::Usage(format!("sweep value {v} is not a finite nonnegative number")));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid)
}

pub fn cmd_sweep(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    if cfg.param_kind()? != ParamKind::Scalar {
        return Err(CliError::Usage("sweep needs param.kind = scalar".into()));
    }
    let grid = sweep_grid(cfg)?;
    let schemes = cfg.schemes(&[Scheme::Forward])?;
    let ds = dataset(cfg)?;
    let dir = cfg.output_dir()?;
    let shape = ds.shape();
    let mut ev = evaluator(cfg, ds, &schemes)?;
    let mut w = create(&dir.join("sweep.csv"))?;
    writeln!(w, "alpha,cost")?;
    let mut best = (f64::INFINITY, 0.0);
    for &a in &grid {
        let p = ParamField::scalar(shape.0, shape.1, a)?;
        let cost = ev.cost(&vec![p; schemes.len()])?.cost;
        writeln!(w, "{a:.16e},{cost:.16e}")?;
        if cost < best.0 {
            best = (cost, a);
        }
    }
    w.flush()?;
    writeln!(out, "{} values, lowest cost {:.10} at alpha {}", grid.len(), best.0, best.1)?;
    writeln!(out, "wrote {}", dir.join("sweep.csv").display())?;
    Ok(())
}

/// Dofs to probe: all of them, or an evenly spaced subset.
fn probe_indices(n: usize) -> Vec<usize> {
    if n <= GRADCHECK_MAX_DOFS {
        (0..n).collect()
    } else {
        (0..GRADCHECK_MAX_DOFS).map(|k| k * (n - 1) / (GRADCHECK_MAX_DOFS - 1)).collect()
    }
}

/// Largest relative gap between `grad` and second-order differences of
/// `cost`, one-sided at dofs closer than `h` to zero.
fn check_against_differences(
    grad: &[f64],
    base: &[f64],
    h: f64,
    mut cost: impl FnMut(&[f64]) -> Result<f64, CliError>,
) -> Result<f64, CliError> {
    let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut worst = 0.0f64;
    for k in probe_indices(base.len()) {
        let mut at = |t: f64| {
            let mut x = base.to_vec();
            x[k] += t;
            cost(&x)
        };
        let fd = if base[k] >= h {
            (at(h)? - at(-h)?) / (2.0 * h)
        } else {
            (-3.0 * at(0.0)? + 4.0 * at(h)? - at(2.0 * h)?) / (2.0 * h)
        };
        let denom = grad[k].abs().max(fd.abs()).max(1e-3 * scale).max(1e-12);
        worst = worst.max((fd - grad[k]).abs() / denom);
    }
    Ok(worst)
}

pub fn cmd_gradcheck(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let h = cfg.f64_or("gradcheck.h", 1e-5)?;
    if !(h > 0.0) || !h.is_finite() {
        return Err(CliError::Usage(format!("`gradcheck.h` must be positive, got {h}")));
    }
    let gammas = cfg.f64_list("gradcheck.gammas")?.unwrap_or_else(|| vec![10.0, 100.0, 1000.0]);
    if gammas.iter().any(|g| !(*g > 0.0)) {
        return Err(CliError::Usage("`gradcheck.gammas` must be positive".into()));
    }
    let threshold = cfg.f64_or("gradcheck.threshold", 1e-5)?;
    let with_bouligand = cfg.bool_or("gradcheck.bouligand", true)?;
    let schemes = cfg.schemes(&[Scheme::Forward])?;
    let ds = dataset(cfg)?;
    let dir = cfg.output_dir()?;
    let params = initial_params(cfg, &schemes, ds.shape())?;
    let base = dofs_of(&params);
    let mut ev = evaluator(cfg, ds, &schemes)?;

    let mut rows: Vec<(String, Option<f64>, String)> = Vec::new();
    for &gamma in &gammas {
        let g = ev.huber(&params, gamma)?.gradient.unwrap_or_default();
        let err = check_against_differences(&g, &base, h, |x| Ok(ev.huber(&with_dofs(&params, x)?, gamma)?.cost))?;
        rows.push((format!("huber gamma={gamma}"), Some(err), String::new()));
    }
    if with_bouligand {
        match ev.bouligand(&params) {
            Ok(r) if r.partitions.iter().flatten().all(|p| p.is_strictly_complementary()) => {
                let g = r.gradient.unwrap_or_default();
                let err = check_against_differences(&g, &base, h, |x| Ok(ev.cost(&with_dofs(&params, x)?)?.cost))?;
                rows.push(("bouligand".into(), Some(err), String::new()));
            }
            Ok(_) => rows.push(("bouligand".into(), None, "skipped: not strictly complementary".into())),
            Err(e) if e.is_numerical() => rows.push(("bouligand".into(), None, format!("skipped: {e}"))),
            Err(e) => return Err(e.into()),
        }
    }

    let mut csv = create(&dir.join("gradcheck.csv"))?;
    writeln!(csv, "phase,max_rel_error")?;
    let mut failed = 0;
    for (name, err, note) in &rows {
        match err {
            Some(e) => {
                let ok = *e <= threshold;
                failed += usize::from(!ok);
                writeln!(out, "{name}: max relative error {e:.3e} {}", if ok { "ok" } else { "FAIL" })?;
                writeln!(csv, "{name},{e:.16e}")?;
            }
            None => {
                writeln!(out, "{name}: {note}")?;
                writeln!(csv, "{name},")?;
            }
        }
    }
    csv.flush()?;
    writeln!(out, "checked {} of {} dofs, threshold {threshold:.1e}", probe_indices(base.len()).len(), base.len())?;
    if failed > 0 {
        return Err(CliError::Numerical(format!("{failed} gradient check(s) above {threshold:.1e}")));
    }
    Ok(())
}

pub fn cmd_verify(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let tol = cfg.f64_or("verify.tol", 1e-6)?;
    let perturb = cfg.f64_or("verify.perturb", 0.0)?;
    if !(tol > 0.0) || !(perturb >= 0.0) {
        return Err(CliError::Usage("`verify.tol` must be positive and `verify.perturb` nonnegative".into()));
    }
    let seed = cfg.u64_or("run.seed", 0)?;
    let schemes = cfg.schemes(&[Scheme::Forward])?;
    let solver = cfg.solver()?;
    let ds = dataset(cfg)?;
    let dir = cfg.output_dir()?;
    let mut params = initial_params(cfg, &schemes, ds.shape())?;
    if perturb > 0.0 {
        let mut noise = GaussianStream::new(seed);
        let moved: Vec<f64> = dofs_of(&params).iter().map(|a| (a + perturb * noise.next_normal()).max(0.0)).collect();
        params = with_dofs(&params, &moved)?;
    }
    let ops = operators(&schemes, ds.shape());
    let mut solved = Vec::with_capacity(ds.len());
    for (i, pair) in ds.pairs().iter().enumerate() {
        let problem = pair_problem(pair, &ops, &params).map_err(|e| e.in_pair(i))?;
        let sol = solver.solve(&problem, None).map_err(|e| e.in_pair(i))?;
        let grad: Vec<f64> = sol.u.data().iter().zip(pair.clean.data()).map(|(a, b)| a - b).collect();
        solved.push((problem, sol, grad));
    }
    let inputs: Vec<StationarityInput<'_>> = solved
        .iter()
        .map(|(problem, sol, grad_j)| StationarityInput { problem, sol, grad_j })
        .collect();
    let cert = check_m_stationarity_pairs(&inputs, tol)?;
    let report = cert.to_string();
    write_text(&dir.join("certificate.txt"), &report)?;
    out.write_all(report.as_bytes())?;
    if !cert.stationary {
        return Err(CliError::Numerical(format!("not M-stationary at tolerance {tol:.1e}")));
    }
    Ok(())
}

/// Paths a command will read, for early validation.
pub fn inputs_of(cmd: Command, cfg: &RunConfig) -> Vec<(&'static str, PathBuf)> {
    let mut keys = match cmd {
        Command::Denoise => vec!["data.input"],
        _ => vec!["data.manifest"],
    };
    if cmd == Command::Denoise && cfg.get("data.clean").is_some() {
        keys.push("data.clean");
    }
    let mut out: Vec<(&'static str, PathBuf)> = keys.into_iter().filter_map(|k| cfg.path(k).map(|p| (k, p))).collect();
    out.extend(cfg.paths("param.file").into_iter().map(|p| ("param.file", p)));
    out
}
