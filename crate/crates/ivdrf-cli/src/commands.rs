//! Subcommand implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ivdrf::crossfit::{crossfit_scores, CrossfitConfig};
use ivdrf::data::{load_dataset, write_dataset};
use ivdrf::diagnostics::{
    chi2_divergence_curve, check_urwf, cover_interval, kappa_sign_map, DiagnosticsConfig,
};
use ivdrf::drf::{
    bootstrap_drf, estimate_curve, Bandwidth, DrfConfig, DrfMethod,
};
use ivdrf::error::{Error, Result};
use ivdrf::kernel_smooth::Kernel;
use ivdrf::scores::EstimatorTag;
use ivdrf::sim::{run_benchmark, simulate_dgp, BenchmarkConfig, DgpSpec, DgpVariant, DiscreteToy};

use crate::config::RunConfig;
use crate::pi_spec::resolve_pi;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let json =
        serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

fn parse_variant(cfg: &RunConfig) -> Result<DgpVariant> {
    let name = cfg.get("variant").unwrap_or("paper_main");
    Ok(match name {
        "paper_main" => DgpVariant::PaperMain,
        "unconfounded" => DgpVariant::Unconfounded,
        "binary_iv_crossing" => DgpVariant::BinaryIvCrossing,
        "discrete_toy" => {
            let path = cfg.require("params")?;
            let text = std::fs::read_to_string(path)?;
            let toy: DiscreteToy = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("toy params: {e}")))?;
            toy.validate()?;
            DgpVariant::DiscreteToy(toy)
        }
        "custom" => {
            let path = cfg.require("params")?;
            let text = std::fs::read_to_string(path)?;
            let coeffs = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("coefficient params: {e}")))?;
            DgpVariant::Custom(coeffs)
        }
        other => return Err(Error::Config(format!("unknown variant '{other}'"))),
    })
}

pub fn cmd_simulate(cfg: &mut RunConfig, out_dir: &Path) -> Result<()> {
    cfg.set_if_absent("variant", "paper_main");
    cfg.set_if_absent("n", 5000);
    let n: usize = cfg.require_parse("n")?;
    let seed = cfg.seed()?;
    let variant = parse_variant(cfg)?;
    let sim = simulate_dgp(&DgpSpec {
        n,
        seed,
        variant: variant.clone(),
    })?;

    let data_path = out_dir.join("data.csv");
    write_dataset(&sim.dataset, create(&data_path)?)?;
    log::info!("wrote {} rows to {}", sim.dataset.len(), data_path.display());

    if let Some(u) = sim.dataset.latent_u() {
        if cfg.parse_or("with_u", true)? {
            let mut w = create(&out_dir.join("u.csv"))?;
            writeln!(w, "u")?;
            for v in u {
                writeln!(w, "{v}")?;
            }
        }
    }
    if let DgpVariant::DiscreteToy(toy) = &variant {
        // the enumerated observed law alongside the draw
        let law: Vec<_> = toy
            .observed_law()
            .into_iter()
            .map(|(l, z, a, y, p)| {
                serde_json::json!({"l": l, "z": z, "a": a, "y": y, "probability": p})
            })
            .collect();
        write_json(&law, &out_dir.join("law.json"))?;
    }
    cfg.write_manifest("simulate", out_dir)?;
    Ok(())
}

fn diagnostics_config(cfg: &RunConfig, seed: u64) -> Result<DiagnosticsConfig> {
    let mut d = DiagnosticsConfig {
        seed,
        ..Default::default()
    };
    if let Some(v) = cfg.parse::<usize>("l_grid_points")? {
        d.l_grid_points = v;
    }
    if let Some(v) = cfg.parse::<usize>("a_grid_size")? {
        d.a_grid_size = v;
    }
    if let Some(v) = cfg.parse::<f64>("epsilon")? {
        d.epsilon = Some(v);
    }
    if let Some(v) = cfg.parse::<f64>("divergence_threshold")? {
        d.divergence_threshold = v;
    }
    if let Some(v) = cfg.parse::<usize>("knn")? {
        d.knn = v;
    }
    if let Some(v) = cfg.parse::<f64>("pi_train_fraction")? {
        d.pi_train_fraction = v;
    }
    Ok(d)
}

pub fn cmd_diagnose(cfg: &mut RunConfig, out_dir: &Path) -> Result<()> {
    let input = cfg.require("input")?.to_string();
    let schema = cfg.schema()?;
    let data = load_dataset(&input, &schema)?;
    let seed = cfg.seed()?;
    let support = data.treatment_support();
    let default_iv = format!(
        "{},{}",
        support.0 + 0.125 * (support.1 - support.0),
        support.1 - 0.125 * (support.1 - support.0)
    );
    cfg.set_if_absent("interval", &default_iv);
    let interval = cfg.interval("interval")?.expect("interval defaulted");
    cfg.set_if_absent("pi", "coordinate:0");
    let pi_spec = cfg.require("pi")?.to_string();
    let pi_fraction = cfg.parse_or("pi_train_fraction", 0.2)?;
    let bw = cfg.parse_or("rwf_bandwidth_multiplier", 1.0)?;
    let dcfg = diagnostics_config(cfg, seed)?;

    let resolved = resolve_pi(&pi_spec, &data, pi_fraction, bw, seed)?;

    let a_grid = interval.grid(dcfg.a_grid_size.max(2));
    let curve = chi2_divergence_curve(&resolved.estimation, &a_grid, &dcfg)?;
    curve.write_csv(create(&out_dir.join("relevance.csv"))?)?;

    let verdict = check_urwf(&resolved.estimation, &resolved.pi, &interval, None, &dcfg)?;
    write_json(&verdict, &out_dir.join("urwf.json"))?;
    log::info!(
        "URWF verdict: pass = {}, min |kappa| = {:.4}, sign constant = {}",
        verdict.pass,
        verdict.min_abs_kappa,
        verdict.sign_constant
    );

    let map = kappa_sign_map(&resolved.estimation, &resolved.pi, &a_grid, &dcfg)?;
    map.write_csv(create(&out_dir.join("kappa_map.csv"))?)?;

    if let Some(cover_iv) = cfg.interval("cover")? {
        let plan = cover_interval(&data, (cover_iv.lo, cover_iv.hi), None, &dcfg)?;
        write_json(&plan, &out_dir.join("cover.json"))?;
    }

    cfg.write_manifest("diagnose", out_dir)?;
    if !verdict.pass {
        log::warn!("weighting function failed the uniform relevance check on the target interval");
    }
    Ok(())
}

fn crossfit_config(cfg: &RunConfig, seed: u64, tags: Vec<EstimatorTag>) -> Result<CrossfitConfig> {
    let mut cc = CrossfitConfig::new(seed);
    cc.folds = cfg.parse_or("folds", 5)?;
    cc.subsplit_fraction = cfg.parse_or("subsplit_fraction", 0.5)?;
    cc.nested = cfg.parse_or("nested", false)?;
    cc.inner_folds = cfg.parse_or("inner_folds", 2)?;
    cc.tags = tags;
    if let Some(cap) = cfg.parse::<usize>("emp_cap")? {
        cc.emp_cap = Some(cap);
    }
    if let Some(t) = cfg.parse::<f64>("multicat_target")? {
        cc.multicat_target = Some(t);
    }
    if let Some(v) = cfg.parse::<usize>("spline_df_treatment")? {
        cc.nuisance.regression.df_treatment = v;
    }
    if let Some(v) = cfg.parse::<usize>("spline_df_covariate")? {
        cc.nuisance.regression.df_covariate = v;
    }
    match cfg.get("ridge") {
        None | Some("gcv") => {}
        Some(v) => {
            let fixed: f64 = v
                .parse()
                .map_err(|_| Error::Config(format!("ridge must be 'gcv' or a number, got '{v}'")))?;
            cc.nuisance.regression.ridge = ivdrf::spline::RidgeSelect::Fixed(fixed);
        }
    }
    if let Some(v) = cfg.parse::<f64>("kappa_floor")? {
        cc.nuisance.kappa_floor = Some(v);
    }
    if let Some(v) = cfg.parse::<f64>("delta_cap")? {
        cc.nuisance.delta_cap = v;
    }
    if let Some(v) = cfg.parse::<f64>("density_floor")? {
        cc.nuisance.density_floor = v;
    }
    Ok(cc)
}

fn drf_config(cfg: &RunConfig) -> Result<DrfConfig> {
    let mut dc = DrfConfig::default();
    dc.method = match cfg.get("method").unwrap_or("llkr") {
        "llkr" => DrfMethod::Llkr,
        "erm" | "erm_spline" => DrfMethod::ErmSpline,
        other => return Err(Error::Config(format!("unknown method '{other}'"))),
    };
    dc.grid_size = cfg.parse_or("grid", 51)?;
    dc.erm_df = cfg.parse_or("spline_df", 3)?;
    dc.kernel = match cfg.get("kernel").unwrap_or("epanechnikov") {
        "epanechnikov" => Kernel::Epanechnikov,
        "triangular" => Kernel::Triangular,
        "uniform" => Kernel::Uniform,
        other => return Err(Error::Config(format!("unknown kernel '{other}'"))),
    };
    dc.bandwidth = match cfg.get("bandwidth").unwrap_or("auto") {
        "auto" => Bandwidth::Auto,
        v => Bandwidth::Fixed(v.parse().map_err(|_| {
            Error::Config(format!("bandwidth must be 'auto' or a number, got '{v}'"))
        })?),
    };
    Ok(dc)
}

pub fn cmd_estimate(cfg: &mut RunConfig, out_dir: &Path, force: bool) -> Result<bool> {
    let input = cfg.require("input")?.to_string();
    let schema = cfg.schema()?;
    let data = load_dataset(&input, &schema)?;
    let seed = cfg.seed()?;
    let interval = cfg
        .interval("interval")?
        .ok_or_else(|| Error::Config("missing required key 'interval'".into()))?;
    cfg.set_if_absent("pi", "density@{mid}".replace("{mid}", &interval.midpoint().to_string()));
    let pi_spec = cfg.require("pi")?.to_string();
    let pi_fraction = cfg.parse_or("pi_train_fraction", 0.2)?;
    let bw = cfg.parse_or("rwf_bandwidth_multiplier", 1.0)?;
    let resolved = resolve_pi(&pi_spec, &data, pi_fraction, bw, seed)?;
    let est_data = resolved.estimation;

    // refuse to estimate on a failing relevance verdict unless forced
    let dcfg = diagnostics_config(cfg, seed)?;
    let verdict = check_urwf(&est_data, &resolved.pi, &interval, None, &dcfg)?;
    write_json(&verdict, &out_dir.join("urwf.json"))?;
    if !verdict.pass && !force {
        log::error!(
            "weighting function '{}' fails the uniform relevance check on [{}, {}] \
             (min |kappa| = {:.4}, sign constant = {}); run `ivdrf diagnose` for the full \
             picture or pass --force to estimate anyway",
            resolved.pi.id,
            interval.lo,
            interval.hi,
            verdict.min_abs_kappa,
            verdict.sign_constant
        );
        return Ok(false);
    }

    let tags = cfg.tags("tags", &[EstimatorTag::AipwIv])?;
    let cc = crossfit_config(cfg, seed, tags.clone())?;
    let out = crossfit_scores(&est_data, &resolved.pi, &interval, &cc)?;

    // all requested tags in one long-format file
    let mut w = create(&out_dir.join("scores.csv"))?;
    writeln!(w, "index,fold,tag,value")?;
    for sv in &out.scores {
        for (i, (v, k)) in sv.values.iter().zip(&sv.fold).enumerate() {
            writeln!(w, "{i},{k},{},{v}", sv.tag)?;
        }
    }
    drop(w);

    let dc = drf_config(cfg)?;
    let boot: usize = cfg.parse_or("bootstrap", 0)?;
    for tag in &tags {
        let sv = out.by_tag(*tag).expect("tag computed");
        let est = if dc.method == DrfMethod::Llkr {
            ivdrf::drf::estimate_drf_llkr_with_ci(sv, est_data.a(), &interval, &dc, 1e-12)?
        } else {
            estimate_curve(sv, est_data.a(), &interval, &dc)?
        };
        write_json(&est, &out_dir.join(format!("curve_{tag}.json")))?;
        if boot >= 2 {
            let b = bootstrap_drf(
                &est_data,
                &resolved.pi,
                &interval,
                &cc,
                &dc,
                *tag,
                boot,
                seed,
            )?;
            // curve columns plus bootstrap spread
            let mut w = create(&out_dir.join(format!("curve_{tag}.csv")))?;
            let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            writeln!(w, "a,theta,se,lo,hi,boot_sd,boot_lo,boot_hi")?;
            for i in 0..est.grid.len() {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    est.grid[i],
                    cell(est.theta[i]),
                    cell(est.se[i]),
                    cell(est.ci_lo[i]),
                    cell(est.ci_hi[i]),
                    cell(b.sd[i]),
                    cell(b.lo[i]),
                    cell(b.hi[i]),
                )?;
            }
            write_json(&b, &out_dir.join(format!("bootstrap_{tag}.json")))?;
        } else {
            est.write_csv(create(&out_dir.join(format!("curve_{tag}.csv")))?)?;
        }
    }
    cfg.write_manifest("estimate", out_dir)?;
    Ok(true)
}

pub fn cmd_benchmark(cfg: &mut RunConfig, out_dir: &Path) -> Result<()> {
    cfg.set_if_absent("interval", "0.25,0.75");
    cfg.set_if_absent("n", 2000);
    cfg.set_if_absent("reps", 100);
    let interval = cfg.interval("interval")?.expect("interval defaulted");
    let n: usize = cfg.require_parse("n")?;
    let reps: usize = cfg.require_parse("reps")?;
    let seed = cfg.seed()?;

    let frameworks: Vec<String> = cfg
        .get("frameworks")
        .unwrap_or("iv,nuc")
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let estimators: Vec<String> = cfg
        .get("estimators")
        .unwrap_or("aipw,ipw,or")
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut tags = Vec::new();
    for f in &frameworks {
        for e in &estimators {
            let tag = match (f.as_str(), e.as_str()) {
                ("iv", "aipw") => EstimatorTag::AipwIv,
                ("iv", "ipw") => EstimatorTag::IpwIv,
                ("iv", "or") => EstimatorTag::OrIv,
                ("nuc", "aipw") => EstimatorTag::AipwNuc,
                ("nuc", "ipw") => EstimatorTag::IpwNuc,
                ("nuc", "or") => EstimatorTag::OrNuc,
                other => {
                    return Err(Error::Config(format!(
                        "unknown framework/estimator pair {other:?}"
                    )))
                }
            };
            tags.push(tag);
        }
    }

    let mut bc = BenchmarkConfig::new(n, reps, interval, seed);
    bc.tags = tags;
    bc.folds = cfg.parse_or("folds", 5)?;
    bc.variant = parse_variant(cfg)?;
    if let Some(a0) = cfg.parse::<f64>("a0")? {
        bc.a0 = Some(a0);
    }
    bc.pi_train_n = cfg.parse_or("pi_train_n", 2000)?;
    if let Some(cap) = cfg.parse::<usize>("emp_cap")? {
        bc.emp_cap = Some(cap);
    }
    bc.grid_size = cfg.parse_or("grid", 51)?;
    if let Some(v) = cfg.parse::<usize>("spline_df_treatment")? {
        bc.nuisance.regression.df_treatment = v;
    }
    if let Some(v) = cfg.parse::<usize>("spline_df_covariate")? {
        bc.nuisance.regression.df_covariate = v;
    }

    let report = run_benchmark(&bc)?;
    report.write_csv(create(&out_dir.join("benchmark.csv"))?)?;
    write_json(&report, &out_dir.join("benchmark.json"))?;
    cfg.write_manifest("benchmark", out_dir)?;
    Ok(())
}
