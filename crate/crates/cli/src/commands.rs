use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use emagpie::field::ComplexField;
use emagpie::forward::{misfit, Dataset};
use emagpie::io::{
    dataset_fingerprint, load_dataset, load_reconstruction, read_log_csv, read_run_record, render, save_dataset_with,
    save_reconstruction, write_log_csv, write_run_record, ContainerReader, ContainerWriter, Metadata, Reconstruction,
    RunRecord,
};
use emagpie::runner::{noise_floor, run, Algorithm, ConvergenceLog, RunOptions, SolverConfig, StopConfig};
use emagpie::simulate::{
    derive_seed, init_object_constant, initial_guess, load_grayscale, make_fzp_probe, make_object, normalize_probe,
    procedural_object, synthesize, FzpParams, ProbePerturbation, Synthetic, SEED_OBJECT_INIT, WAVELENGTH_10KEV,
};
use emagpie::surrogate::{
    anchors_at, certify_regions, check_gradient_agreement, check_majorization, random_test_points,
};
use serde_json::json;

use crate::config::{out_dir, pick, switch, FileConfig};
use crate::exit::CliError;
use crate::{CertifyArgs, CompareArgs, FzpArgs, ReconstructArgs, SimulateArgs};

type CliResult = Result<(), CliError>;

/// Seed stage for certification test points; the library uses 1 to 4.
const SEED_CERTIFY_POINTS: u64 = 5;

pub const LOG_FILE: &str = "log.csv";
pub const RUN_FILE: &str = "run.json";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}

fn meta(pairs: serde_json::Value) -> Metadata {
    match pairs {
        serde_json::Value::Object(map) => map.into_iter().collect(),
        _ => Metadata::new(),
    }
}

pub fn simulate(a: SimulateArgs) -> CliResult {
    let f = FileConfig::load(a.common.config.as_deref())?;
    let n = pick(a.n, f.n, 128);
    let m = pick(a.m, f.m, 32);
    let overlap = pick(a.overlap, f.overlap, 0.5);
    let noise = pick(a.noise, f.noise, 0.0);
    let seed = pick(a.seed, f.seed, 1);
    let out = out_dir(a.common.out, f.out);

    let (object, source) = match (a.object_mag.or(f.object_mag), a.object_phase.or(f.object_phase)) {
        (Some(mp), Some(pp)) => {
            let obj = make_object(&load_grayscale(&mp)?, &load_grayscale(&pp)?, n)?;
            (obj, format!("{} + {}", mp.display(), pp.display()))
        }
        (None, None) => (procedural_object(n), "procedural".to_string()),
        _ => return Err(CliError::config("object-mag and object-phase must be given together")),
    };
    let params = FzpParams::synthetic(m);
    params.validate()?;
    for w in params.sampling_warnings() {
        log::warn!("{w}");
    }
    let probe = make_fzp_probe(&params)?;
    let exp = Synthetic { n, m, overlap, noise_percent: noise, seed };
    let ds = synthesize(&exp, &object, &probe)?;

    create_dir(&out)?;
    let metadata = meta(json!({
        "n": n,
        "m": m,
        "overlap": overlap,
        "noise_target_percent": noise,
        "noise_achieved_percent": ds.noise_percent,
        "seed": seed,
        "object_source": source,
        "probe": params,
    }));
    save_dataset_with(&out.join("dataset"), &ds, &metadata)?;
    save_reconstruction(
        &out.join("truth"),
        &Reconstruction { probe: probe.clone(), object: object.clone(), metadata: meta(json!({ "role": "truth" })) },
    )?;
    let png = out.join("png");
    create_dir(&png)?;
    render::save_complex(&png, "truth_object", &object)?;
    render::save_complex(&png, "truth_probe", &probe)?;

    println!("dataset    {}", out.join("dataset").display());
    println!("truth      {}", out.join("truth").display());
    println!("positions  {} (step {} px)", ds.len(), emagpie::simulate::scan_step(m, overlap)?);
    match ds.noise_percent {
        Some(p) => println!("noise      {p:.4}% (target {noise}%)"),
        None => println!("noise      none"),
    }
    Ok(())
}

/// Starting iterate: a probe from `probe_dir` if given, otherwise the
/// perturbed truth probe. The object starts constant.
fn starting_point(ds: &Dataset, probe_dir: Option<&Path>, seed: u64) -> Result<(ComplexField, ComplexField), CliError> {
    match probe_dir {
        Some(dir) => {
            let q = ContainerReader::open(dir)?.complex_field("probe")?;
            if q.shape() != (ds.probe_side(), ds.probe_side()) {
                return Err(CliError::data(format!(
                    "probe in {} is {:?}, dataset needs {}x{}",
                    dir.display(),
                    q.shape(),
                    ds.probe_side(),
                    ds.probe_side()
                )));
            }
            let q0 = normalize_probe(&q, ds)?;
            let z0 = init_object_constant(ds.object_side(), 0.0, derive_seed(seed, SEED_OBJECT_INIT))?;
            Ok((q0, z0))
        }
        None if ds.truth_probe.is_some() => Ok(initial_guess(ds, &ProbePerturbation::default(), 0.0, seed)?),
        None => Err(CliError::config("dataset carries no truth probe; pass --probe with a starting probe")),
    }
}

fn dataset_dir(flag: Option<PathBuf>, file: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = flag.or(file).ok_or_else(|| CliError::config("--dataset is required"))?;
    if !dir.is_dir() {
        return Err(CliError::data(format!("dataset {} not found", dir.display())));
    }
    Ok(dir)
}

pub fn reconstruct(a: ReconstructArgs) -> CliResult {
    let f = FileConfig::load(a.common.config.as_deref())?;
    let dir = dataset_dir(a.dataset, f.dataset)?;
    let defaults = StopConfig::default();
    let mut config = SolverConfig {
        algorithm: pick(a.algo, f.algo, Algorithm::Emagpie),
        alpha_q: pick(a.alpha, f.alpha, 0.05),
        levels: pick(a.levels, f.levels, 1),
        seed: pick(a.seed, f.seed, 1),
        stop: StopConfig {
            window: pick(a.window, f.window, defaults.window),
            patience: pick(a.patience, f.patience, defaults.patience),
            max_iters: pick(a.max_iters, f.max_iters, defaults.max_iters),
            floor_factor: pick(a.floor_factor, f.floor_factor, defaults.floor_factor),
            noise_floor: None,
        },
        ..Default::default()
    };
    let certify = switch(a.certify, f.certify);
    let record_time = !switch(a.no_timing, f.no_timing);
    let use_floor = !switch(a.no_noise_floor, f.no_noise_floor);
    config.stop.validate()?;

    let ds = load_dataset(&dir)?;
    config.validate(ds.probe_side())?;
    if use_floor && ds.noise_percent.is_some() && ds.truth_object.is_some() {
        config.stop.noise_floor = Some(noise_floor(&ds)?);
    }
    let (q0, z0) = starting_point(&ds, a.probe.or(f.probe).as_deref(), config.seed)?;
    let out = out_dir(a.common.out, f.out);
    create_dir(&out)?;

    log::info!(
        "{} on {} positions, n = {}, m = {}, alpha = {}, levels = {}",
        config.algorithm,
        ds.len(),
        ds.object_side(),
        ds.probe_side(),
        config.alpha_q,
        config.levels
    );
    let outcome = run(&ds, &config, q0, z0, RunOptions { certify, record_time })?;
    let log = outcome.log();
    let last = log.last().expect("a run has at least one sweep");

    write_log_csv(&out.join(LOG_FILE), log)?;
    let record = RunRecord {
        dataset_fingerprint: dataset_fingerprint(&dir)?,
        dataset_path: dir.display().to_string(),
        object_side: ds.object_side(),
        probe_side: ds.probe_side(),
        scan_positions: ds.len(),
        noise_percent: ds.noise_percent,
        solver: config,
        sweeps: outcome.state.iter,
        stop_reason: Some(outcome.stop_reason),
        final_residual: last.residual,
        final_mag_error: last.mag_error,
        noise_floor: config.stop.noise_floor,
    };
    write_run_record(&out.join(RUN_FILE), &record)?;
    let rec = Reconstruction {
        probe: outcome.state.q.clone(),
        object: outcome.state.z.clone(),
        metadata: meta(json!({ "algorithm": config.algorithm.to_string(), "sweeps": outcome.state.iter })),
    };
    save_reconstruction(&out.join("reconstruction"), &rec)?;
    let png = out.join("png");
    create_dir(&png)?;
    render::save_complex(&png, "object", &rec.object)?;
    render::save_complex(&png, "probe", &rec.probe)?;
    if let Some(truth) = &ds.truth_object {
        render::save_error_maps(&png, "object", &rec.object, truth)?;
    }

    println!("sweeps     {} ({})", outcome.state.iter, outcome.stop_reason);
    println!("residual   {:.6e}", last.residual);
    if let Some(e) = last.mag_error {
        println!("mag_error  {e:.6}");
    }
    if let Some(fl) = config.stop.noise_floor {
        println!("floor      {fl:.6e}");
    }
    println!("output     {}", out.display());
    if certify {
        report_certificates(log)?;
    }
    Ok(())
}

fn report_certificates(log: &ConvergenceLog) -> CliResult {
    let failed: Vec<usize> =
        log.certificates.iter().enumerate().filter(|(_, c)| !c.passed).map(|(i, _)| i + 1).collect();
    for (i, c) in log.certificates.iter().enumerate() {
        println!(
            "sweep {:4}  certified = {}  margin = {:.3e}  anchor_gap = {:.3e}  descended = {}/{}  entrywise_failures = {}",
            i + 1,
            c.passed,
            c.majorization_margin,
            c.anchor_gap,
            c.regions_descended,
            c.regions,
            c.entrywise_failures
        );
    }
    if failed.is_empty() {
        println!("certified  true ({} sweeps)", log.certificates.len());
        Ok(())
    } else {
        println!("certified  false");
        Err(CliError::certification(format!("certification failed at sweeps {failed:?}")))
    }
}

struct LoadedLog {
    label: String,
    log: ConvergenceLog,
    record: Option<RunRecord>,
}

fn load_log(path: &Path, label: String) -> Result<LoadedLog, CliError> {
    let (csv, dir) = if path.is_dir() {
        (path.join(LOG_FILE), path.to_path_buf())
    } else {
        (path.to_path_buf(), path.parent().map(Path::to_path_buf).unwrap_or_default())
    };
    let log = read_log_csv(&csv)?;
    if log.samples.is_empty() {
        return Err(CliError::data(format!("{} has no rows", csv.display())));
    }
    let run_json = dir.join(RUN_FILE);
    let record = if run_json.is_file() { Some(read_run_record(&run_json)?) } else { None };
    Ok(LoadedLog { label, log, record })
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or("-".into(), |x| format!("{x:.prec$e}"))
}

/// Largest absolute residual difference over the sweeps both logs reached.
fn max_residual_gap(a: &ConvergenceLog, b: &ConvergenceLog) -> f64 {
    a.samples.iter().zip(&b.samples).map(|(x, y)| (x.residual - y.residual).abs()).fold(0.0, f64::max)
}

pub fn compare(a: CompareArgs) -> CliResult {
    if !a.labels.is_empty() && a.labels.len() != a.logs.len() {
        return Err(CliError::config(format!("{} labels for {} logs", a.labels.len(), a.logs.len())));
    }
    let runs = a
        .logs
        .iter()
        .enumerate()
        .map(|(i, p)| load_log(p, a.labels.get(i).cloned().unwrap_or_else(|| p.display().to_string())))
        .collect::<Result<Vec<_>, _>>()?;

    let fingerprints: Vec<Option<&str>> =
        runs.iter().map(|r| r.record.as_ref().map(|rec| rec.dataset_fingerprint.as_str())).collect();
    let mismatch = match fingerprints[0] {
        Some(first) => fingerprints.iter().any(|f| f.is_some_and(|f| f != first)),
        None => false,
    };
    if mismatch {
        let msg = "runs come from different datasets; differences are not meaningful";
        if a.strict {
            return Err(CliError::data(msg));
        }
        eprintln!("warning: {msg}");
    } else if fingerprints.iter().any(Option::is_none) {
        log::warn!("some logs have no {RUN_FILE}; dataset identity not checked");
    }

    let base = &runs[0];
    let base_last = base.log.last().expect("non-empty");
    let width = runs.iter().map(|r| r.label.len()).max().unwrap_or(3).max(3);
    let mut table = String::new();
    writeln!(
        table,
        "{:width$}  {:>6}  {:>13}  {:>13}  {:>14}  {:>13}  {:>13}  dataset",
        "run", "sweeps", "residual", "mag_error", "stop", "d_residual", "max_gap"
    )
    .expect("string write");
    for r in &runs {
        let last = r.log.last().expect("non-empty");
        let stop = r.log.stop_reason.map_or("-".to_string(), |s| s.to_string());
        let dataset =
            r.record.as_ref().map_or("-".to_string(), |rec| rec.dataset_fingerprint.chars().take(12).collect());
        writeln!(
            table,
            "{:width$}  {:>6}  {:>13.6e}  {:>13}  {:>14}  {:>13.6e}  {:>13.6e}  {}",
            r.label,
            last.iter,
            last.residual,
            fmt_opt(last.mag_error, 6),
            stop,
            last.residual - base_last.residual,
            max_residual_gap(&base.log, &r.log),
            dataset
        )
        .expect("string write");
    }
    print!("{table}");

    if let Some(dir) = a.data_dir {
        create_dir(&dir)?;
        let mut summary = String::from("# index label sweeps residual mag_error\n");
        for (i, r) in runs.iter().enumerate() {
            let name = format!("run{i}.dat");
            let mut body = format!("# {}\n# iter residual mag_error\n", r.label);
            for s in &r.log.samples {
                writeln!(body, "{} {} {}", s.iter, s.residual, s.mag_error.map_or("NaN".into(), |e| e.to_string()))
                    .expect("string write");
            }
            fs::write(dir.join(&name), body).map_err(|e| CliError::data(format!("{name}: {e}")))?;
            let last = r.log.last().expect("non-empty");
            writeln!(
                summary,
                "{i} \"{}\" {} {} {}",
                r.label,
                last.iter,
                last.residual,
                last.mag_error.map_or("NaN".into(), |e| e.to_string())
            )
            .expect("string write");
        }
        fs::write(dir.join("summary.dat"), summary).map_err(|e| CliError::data(format!("summary.dat: {e}")))?;
        println!("data files {}", dir.display());
    }
    Ok(())
}

pub fn certify(a: CertifyArgs) -> CliResult {
    let f = FileConfig::load(a.common.config.as_deref())?;
    let dir = dataset_dir(a.dataset, f.dataset)?;
    let points = pick(a.points, f.points, 50);
    let scale = pick(a.scale, f.scale, 0.1);
    let sweeps = pick(a.sweeps, f.sweeps, 3);
    let seed = pick(a.seed, f.seed, 1);
    let config = SolverConfig {
        algorithm: pick(a.algo, f.algo, Algorithm::Emagpie),
        alpha_q: pick(a.alpha, f.alpha, 0.05),
        levels: pick(a.levels, f.levels, 0),
        seed,
        stop: StopConfig { max_iters: sweeps.max(1), patience: sweeps + 1, ..Default::default() },
        ..Default::default()
    };
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(CliError::config(format!("scale must be positive, got {scale}")));
    }
    let ds = load_dataset(&dir)?;
    config.validate(ds.probe_side())?;
    let (q, z) = match a.reconstruction.or(f.reconstruction) {
        Some(r) => {
            let rec = load_reconstruction(&r)?;
            (rec.probe, rec.object)
        }
        None => starting_point(&ds, None, seed)?,
    };
    let mut ok = true;

    let anchors = anchors_at(&q, &z, &ds, None)?;
    let phi = misfit(&q, &z, &ds)?;
    let at_anchor = check_majorization(&[(q.clone(), z.clone())], &ds, &anchors)?;
    let gap = at_anchor.points[0].margin.abs();
    let gap_ok = gap <= 1e-12 * (1.0 + phi);
    ok &= gap_ok;
    println!("misfit = {phi:.12e}");
    println!("anchor.gap = {gap:.3e}");
    println!("anchor.passed = {gap_ok}");

    let pts = random_test_points(&q, &z, points, scale, derive_seed(seed, SEED_CERTIFY_POINTS))?;
    let maj = check_majorization(&pts, &ds, &anchors)?;
    ok &= maj.passed();
    print!("{maj}");

    let grad = check_gradient_agreement(&q, &z, &ds, &anchors)?;
    ok &= grad.passed();
    print!("{grad}");

    let certs = certify_regions(&q, &z, &ds, &config.regularization()?, None)?;
    let descended = certs.iter().filter(|c| c.descended()).count();
    let passed = certs.iter().filter(|c| c.passed()).count();
    let worst = certs.iter().map(|c| c.entrywise_excess.max(c.thales_excess)).fold(f64::NEG_INFINITY, f64::max);
    println!("descent.regions = {}", certs.len());
    println!("descent.strict = {descended}");
    println!("descent.worst_bound_excess = {worst:.3e}");
    println!("descent.passed = {}", passed == certs.len());
    ok &= passed == certs.len();

    if sweeps > 0 {
        let outcome = run(&ds, &config, q, z, RunOptions { certify: true, record_time: false })?;
        if report_certificates(outcome.log()).is_err() {
            ok = false;
        }
    }
    if ok {
        println!("certified = true");
        Ok(())
    } else {
        println!("certified = false");
        Err(CliError::certification("one or more certificates failed"))
    }
}

pub fn fzp_probe(a: FzpArgs) -> CliResult {
    let f = FileConfig::load(a.common.config.as_deref())?;
    let m = pick(a.m, f.m, 128);
    let preset = pick(a.preset, f.preset, "synthetic".to_string());
    let pixel_size = a.pixel_size.or(f.pixel_size);
    let wavelength = a.wavelength.or(f.wavelength);
    let params = match preset.as_str() {
        "synthetic" => {
            if pixel_size.is_some() || wavelength.is_some() {
                return Err(CliError::config("pixel-size and wavelength apply to the velo preset only"));
            }
            FzpParams::synthetic(m)
        }
        "velo" => FzpParams::velo(m, pixel_size.unwrap_or(2e-6), wavelength.unwrap_or(WAVELENGTH_10KEV)),
        other => return Err(CliError::config(format!("unknown preset '{other}' (expected synthetic or velo)"))),
    };
    params.validate()?;
    let warnings = params.sampling_warnings();
    for w in &warnings {
        log::warn!("{w}");
    }
    let probe = make_fzp_probe(&params)?;

    let out = out_dir(a.common.out, f.out);
    create_dir(&out)?;
    let mut w = ContainerWriter::create(&out.join("probe"), "probe")?;
    w.put_complex_field("probe", &probe)?;
    w.manifest_mut().metadata = meta(json!({ "preset": preset, "fzp": params, "warnings": warnings }));
    w.finish()?;
    render::save_complex(&out, "probe", &probe)?;

    println!("grid         {m} x {m}, pixel {:.3e} m", params.pixel_size);
    println!("focal        {:.6e} m", params.focal_length());
    println!("propagation  {:.6e} m", params.propagation_distance());
    println!("energy       {:.6e}", probe.norm_sqr());
    println!("output       {}", out.display());
    Ok(())
}
