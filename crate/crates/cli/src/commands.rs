use std::io;
use std::path::Path;

use kcurve::data::{read_dataset, write_f32_matrix, LabelColumn};
use kcurve::document::SpectrumDocument;
use kcurve::experiment::{
    gegenbauer_target, theory_experiment_report, ExperimentPlan, SphereSpectrum, TheoryInput,
};
use kcurve::kernels::{
    dot_product_eigenvalues, effective_regularization_table, gram_eigendecompose, gram_matrix,
    nngp_dot_profile, ntk_dot_profile, project_target,
};
use kcurve::output::{
    curve_rows, fmt, fmt_p, phase_rows, report_rows, write_csv, write_csv_to, CURVE_HEADER, PHASE_HEADER,
    REPORT_HEADER,
};
use kcurve::spectral::{degeneracy, power_law_spectrum, Spectrum, TargetDecomposition};
use kcurve::theory::{
    classify_band_limited, generalization_error, stage_parameters, staged_eg, PhasePoint, TheorySolution,
};
use kcurve::{Error, Result};
use rayon::prelude::*;

use crate::{NetworkKernel, NtkTableArgs, PhaseArgs, PredictArgs, SpectrumArgs, StagesArgs, Status, VerifyArgs};

fn emit(out: Option<&Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    match out {
        Some(path) => write_csv(path, header, rows),
        None => write_csv_to(&mut io::stdout().lock(), header, rows).map_err(|e| Error::Io {
            path: "<stdout>".into(),
            source: e,
        }),
    }
}

fn geometric_sizes(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Invalid(format!("--p-range wants LO:HI:COUNT, got {spec:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    if !(lo >= 1.0 && hi >= lo && n >= 2) {
        return Err(bad());
    }
    let mut out: Vec<f64> = (0..n)
        .map(|i| (lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).round())
        .collect();
    out.dedup();
    Ok(out)
}

fn linear_grid(lo: f64, hi: f64, n: usize, name: &str) -> Result<Vec<f64>> {
    if n == 0 || !(hi >= lo) {
        return Err(Error::Invalid(format!("{name} grid needs steps >= 1 and max >= min")));
    }
    Ok((0..n)
        .map(|i| if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect())
}

pub fn spectrum(a: &SpectrumArgs) -> Result<Status> {
    let kernel = a.kernel.descriptor();
    kernel.validate()?;
    let doc = if a.analytic_sphere {
        let spec = SphereSpectrum::new(&kernel, a.dim, a.kmax)?;
        let target = match a.target_degree {
            Some(k) => spec.target(&gegenbauer_target(a.dim, k, a.seed, 1.0)?, a.sigma2)?,
            None => {
                let w = spec
                    .spectrum
                    .blocks()
                    .map(|(eta, d)| if eta > 0.0 { d as f64 } else { 0.0 })
                    .collect();
                TargetDecomposition::new(w, a.sigma2, 0.0)?
            }
        };
        SpectrumDocument::new(&spec.spectrum, &target)?
    } else {
        let path = a.data.as_deref().unwrap();
        if a.labels_col == LabelColumn::None {
            return Err(Error::Invalid("a label column is needed to decompose the target".into()));
        }
        let mut data = read_dataset(path, a.labels_col)?;
        data.normalize(a.normalize)?;
        let labels = if a.raw_labels {
            let y = data.labels.clone().ok_or_else(|| Error::Invalid("dataset has no labels".into()))?;
            nalgebra_column(&y)
        } else {
            data.one_hot()?.0
        };
        let gram = gram_matrix(&kernel, &data.points)?;
        let mean_diag = gram.trace() / data.len() as f64;
        let eig = gram_eigendecompose(&gram)?;
        drop(gram);
        let trace: f64 = eig.eigenvalues.iter().sum();
        log::info!("eigenvalue sum {trace:.6e}, mean kernel diagonal {mean_diag:.6e}");
        let mut spectrum = None;
        let mut channels = Vec::new();
        for c in 0..labels.ncols() {
            let y: Vec<f64> = labels.column(c).iter().copied().collect();
            let proj = project_target(&eig, &y)?;
            log::info!("channel {c}: Parseval residual {:.3e}", proj.parseval_residual());
            if spectrum.is_none() {
                spectrum = Some(proj.spectrum()?);
            }
            channels.push(proj.target(a.sigma2)?);
        }
        if let Some(side) = &a.eigvecs {
            write_f32_matrix(side, &eig.phi)?;
        }
        let spectrum = spectrum.ok_or_else(|| Error::Invalid("no label channels".into()))?;
        if channels.len() == 1 {
            SpectrumDocument::new(&spectrum, &channels[0])?
        } else {
            SpectrumDocument::multichannel(&spectrum, &channels)?
        }
    };
    doc.write(&a.out)?;
    Ok(Status::Ok)
}

fn nalgebra_column(y: &[f64]) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_column_slice(y.len(), 1, y)
}

fn load_theory(path: &Path, noise: Option<f64>) -> Result<(Spectrum, Vec<TargetDecomposition>)> {
    let doc = SpectrumDocument::read(path)?;
    let spectrum = doc.spectrum()?;
    let mut channels = doc.channel_targets()?;
    if let Some(s2) = noise {
        channels = channels.iter().map(|t| t.with_noise(s2)).collect();
    }
    Ok((spectrum, channels))
}

fn summed(spectrum: &Spectrum, channels: &[TargetDecomposition], ridge: f64, p: f64) -> Result<TheorySolution> {
    let mut total = generalization_error(spectrum, &channels[0], ridge, p)?;
    for t in &channels[1..] {
        let s = generalization_error(spectrum, t, ridge, p)?;
        total.eg += s.eg;
        total.bias += s.bias;
        total.variance += s.variance;
    }
    Ok(total)
}

pub fn predict(a: &PredictArgs) -> Result<Status> {
    let (spectrum, channels) = load_theory(&a.spectrum, a.sigma2)?;
    let grid = match &a.p_range {
        Some(r) => geometric_sizes(r)?,
        None => a.p.clone(),
    };
    let curve = grid
        .iter()
        .map(|&p| summed(&spectrum, &channels, a.lambda, p))
        .collect::<Result<Vec<_>>>()?;
    for s in curve.iter().filter(|s| s.diverged) {
        log::warn!("theory diverges at P = {}", fmt_p(s.sample_size));
    }
    let mut header: Vec<String> = CURVE_HEADER.iter().map(|s| s.to_string()).collect();
    let mut rows = curve_rows(&curve);
    if let Some(n) = a.stages {
        let n = n.min(spectrum.len());
        for l in 1..=n {
            header.push(format!("staged_eg_{l}"));
            let params: Vec<_> = channels
                .iter()
                .map(|t| stage_parameters(&spectrum, t, a.lambda, l))
                .collect();
            let size = spectrum.degeneracies()[l - 1] as f64;
            for (row, &p) in rows.iter_mut().zip(&grid) {
                let mut value = 0.0;
                for par in &params {
                    value += match par {
                        Ok(par) => staged_eg(par, p / size)?.eg,
                        Err(Error::Degenerate(_)) => f64::NAN,
                        Err(e) => return Err(Error::Invalid(e.to_string())),
                    };
                }
                row.push(fmt(value));
            }
        }
    }
    let header: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    emit(a.out.as_deref(), &header, &rows)?;
    Ok(Status::Ok)
}

pub fn verify(a: &VerifyArgs) -> Result<Status> {
    let plan = ExperimentPlan::read(&a.plan)?;
    let theory = match &a.spectrum {
        Some(path) => {
            let (spectrum, channels) = load_theory(path, Some(plan.noise_var))?;
            Some(TheoryInput { spectrum, channels })
        }
        None => None,
    };
    let report = theory_experiment_report(&plan, theory.as_ref())?;
    let frac = report.z_pass_fraction(3.0);
    log::info!(
        "{:.1}% of {} points within |z| <= 3; {:.1}s",
        100.0 * frac,
        report.points.len(),
        report.wall_time_secs
    );
    emit(a.out.as_deref(), &REPORT_HEADER, &report_rows(&report))?;
    if a.strict && frac < 0.95 {
        eprintln!(
            "kcurve: strict check failed: {:.1}% of points have |z| <= 3 (need 95%)",
            100.0 * frac
        );
        return Ok(Status::CheckFailed);
    }
    Ok(Status::Ok)
}

pub fn phase(a: &PhaseArgs) -> Result<Status> {
    let ridges = linear_grid(a.lambda_min, a.lambda_max, a.lambda_steps, "lambda")?;
    let noises = linear_grid(a.sigma2_min, a.sigma2_max, a.sigma2_steps, "sigma2")?;
    if ridges[0] < 0.0 || noises[0] < 0.0 {
        return Err(Error::Invalid("lambda and sigma2 must be >= 0".into()));
    }
    let cells: Vec<(f64, f64)> = ridges
        .iter()
        .flat_map(|&l| noises.iter().map(move |&s| (l, s)))
        .collect();
    let points = cells
        .par_iter()
        .map(|&(ridge, noise_sq)| {
            Ok(PhasePoint {
                ridge,
                noise_sq,
                classification: classify_band_limited(ridge, noise_sq)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    emit(a.out.as_deref(), &PHASE_HEADER, &phase_rows(&points)?)?;
    Ok(Status::Ok)
}

const STAGE_HEADER: [&str; 9] = [
    "stage",
    "n_l",
    "eta_bar",
    "weight_bar_sq",
    "eff_noise_sq",
    "eff_ridge",
    "peak_alpha",
    "peak_p",
    "status",
];

const STAGE_CURVE_HEADER: [&str; 5] = ["stage", "alpha", "P", "staged_eg", "full_eg"];

pub fn stages(a: &StagesArgs) -> Result<Status> {
    let (spectrum, target) = match (a.power_law, &a.spectrum) {
        (Some(s), _) => {
            let spectrum = power_law_spectrum(s, a.kmax, a.dim)?;
            let w = spectrum.degeneracies().iter().map(|d| *d as f64).collect();
            let target = TargetDecomposition::new(w, a.sigma2.unwrap_or(0.0), 0.0)?;
            (spectrum, target)
        }
        (None, Some(path)) => {
            let (spectrum, channels) = load_theory(path, a.sigma2)?;
            let target = channels
                .get(a.channel)
                .cloned()
                .ok_or_else(|| Error::Invalid(format!("document has no channel {}", a.channel)))?;
            (spectrum, target)
        }
        (None, None) => unreachable!("clap requires a source"),
    };
    let n = a.stages.min(spectrum.len());
    let alphas: Vec<f64> = if a.alpha_points >= 2 && a.alpha_min > 0.0 && a.alpha_max > a.alpha_min {
        (0..a.alpha_points)
            .map(|i| a.alpha_min * (a.alpha_max / a.alpha_min).powf(i as f64 / (a.alpha_points - 1) as f64))
            .collect()
    } else {
        return Err(Error::Invalid("alpha grid needs 0 < min < max and at least 2 points".into()));
    };
    let mut table = Vec::new();
    let mut curves = Vec::new();
    for l in 1..=n {
        let size = spectrum.degeneracies()[l - 1] as f64;
        match stage_parameters(&spectrum, &target, a.lambda, l) {
            Ok(p) => {
                let peak = 1.0 + p.eff_ridge;
                table.push(vec![
                    l.to_string(),
                    fmt_p(size),
                    fmt(p.eta_bar),
                    fmt(p.weight_bar_sq),
                    fmt(p.eff_noise_sq),
                    fmt(p.eff_ridge),
                    fmt(peak),
                    fmt(peak * size),
                    "ok".into(),
                ]);
                if a.curves.is_some() {
                    for &alpha in &alphas {
                        let staged = staged_eg(&p, alpha)?.eg;
                        let full = generalization_error(&spectrum, &target, a.lambda, alpha * size)?.eg;
                        curves.push(vec![l.to_string(), fmt(alpha), fmt(alpha * size), fmt(staged), fmt(full)]);
                    }
                }
            }
            Err(Error::Degenerate(msg)) => {
                log::warn!("stage {l}: {msg}");
                let mut row = vec![l.to_string(), fmt_p(size)];
                row.extend(std::iter::repeat_n("nan".to_string(), 6));
                row.push("zero_weight".into());
                table.push(row);
            }
            Err(e) => return Err(e),
        }
    }
    if let Some(path) = &a.curves {
        write_csv(path, &STAGE_CURVE_HEADER, &curves)?;
    }
    emit(a.out.as_deref(), &STAGE_HEADER, &table)?;
    Ok(Status::Ok)
}

const NTK_HEADER: [&str; 6] = ["depth", "degree", "degeneracy", "eta", "eta_bar", "eff_ridge"];

pub fn ntk_table(a: &NtkTableArgs) -> Result<Status> {
    if a.depths.is_empty() {
        return Err(Error::Invalid("no depths given".into()));
    }
    let mut rows = Vec::new();
    for &depth in &a.depths {
        let desc = match a.kernel {
            NetworkKernel::Ntk => kcurve::kernels::KernelDescriptor::ntk(depth, a.weight_var, a.bias_var),
            NetworkKernel::Nngp => kcurve::kernels::KernelDescriptor::nngp(depth, a.weight_var, a.bias_var),
        };
        desc.validate()?;
        let (w, b) = (a.weight_var, a.bias_var);
        let profile = move |t: f64| match a.kernel {
            NetworkKernel::Ntk => ntk_dot_profile(depth, t, w, b),
            NetworkKernel::Nngp => nngp_dot_profile(depth, t, w, b),
        };
        let eta = dot_product_eigenvalues(&profile, a.dim, a.lmax)?;
        let ridge = effective_regularization_table(&profile, a.dim, a.lmax, a.lambda)?;
        for (k, (e, r)) in eta.iter().zip(&ridge).enumerate() {
            let n = degeneracy(a.dim, k as u32)?;
            rows.push(vec![
                depth.to_string(),
                k.to_string(),
                n.to_string(),
                fmt(*e),
                fmt(*e * n as f64),
                fmt(*r),
            ]);
        }
    }
    emit(a.out.as_deref(), &NTK_HEADER, &rows)?;
    Ok(Status::Ok)
}
