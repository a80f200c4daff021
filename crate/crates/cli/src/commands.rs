use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use latsurv::cohort::{
    simulate_cohort, split_cohort, Cohort, LogRiskForm, SimConfig, WeibullBaseline,
};
use latsurv::coxph::{breslow_baseline, fit_coxph, CoxFitConfig};
use latsurv::deepsurv::{train_deepsurv, TrainConfig};
use latsurv::evaluation::GridSpec;
use latsurv::latent::{
    self, age_attribute, health_attribute, manipulate as shift_latent, manipulation_sweep,
    mean_latent, project as project_one, render_pgm, single_dim_attribute, Attribute,
    FeatureExtractor, Generator, IdentityExtractor, LatentVector, LinearExtractor,
    ProjectionConfig, ToyGenerator,
};
use latsurv::numerics::AdamConfig;
use latsurv::SurvivalModel;
use serde::{Deserialize, Serialize};

use crate::artifacts::{manifest_path_for, truth_path_for, Manifest};
use crate::{
    AgeArgs, AttributeArgs, AttributeKind, Common, EvaluateArgs, ExtractorKind, FitCoxArgs,
    FitDeepsurvArgs, Form, FuseArgs, GeneratorArgs, HealthArgs, ManipulateArgs, ProjectArgs,
    SimulateArgs, SingleDimArgs, SplitArgs, SweepArgs,
};

/// One line of an observation file.
#[derive(Debug, Serialize, Deserialize)]
struct Observation {
    id: String,
    x: Vec<f64>,
}

fn finish(manifest: &Manifest, common: &Common, primary: &Path) -> Result<()> {
    let path = common
        .manifest
        .clone()
        .unwrap_or_else(|| manifest_path_for(primary));
    manifest.write(&path)
}

fn load_cohort(path: &Path, manifest: &mut Manifest) -> Result<Cohort> {
    manifest.input(path)?;
    Cohort::load_csv(path, None).with_context(|| format!("loading cohort {}", path.display()))
}

fn load_latents(path: &Path, manifest: &mut Manifest) -> Result<Vec<LatentVector>> {
    manifest.input(path)?;
    latent::read_latents(path).with_context(|| format!("loading latents {}", path.display()))
}

fn cohort_bytes(c: &Cohort) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    c.write_csv(&mut buf)?;
    Ok(buf)
}

fn latent_bytes(v: &[LatentVector]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    latent::write_latents(&mut buf, v)?;
    Ok(buf)
}

fn json_bytes(v: &impl Serialize) -> Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn build_generator(g: &GeneratorArgs, latent_dim: usize) -> Result<ToyGenerator> {
    Ok(ToyGenerator::build(
        g.generator.name(),
        latent_dim,
        g.output_dim,
        g.generator_seed,
    )?)
}

fn read_attribute(path: &Path, manifest: &mut Manifest) -> Result<Attribute> {
    manifest.input(path)?;
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing attribute {}", path.display()))
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut manifest = Manifest::new("simulate", a.common.seed, a)?;
    let true_coefficients = match (&a.coefficients, a.form) {
        (Some(w), _) => w.clone(),
        (None, Form::Nonlinear) => vec![0.0; a.dim],
        (None, Form::Linear) => (0..a.dim)
            .map(|i| match i {
                0 => 1.0,
                1 => -1.0,
                _ => 0.0,
            })
            .collect(),
    };
    let config = SimConfig {
        n: a.n,
        feature_dim: a.dim,
        true_coefficients,
        log_risk_form: match a.form {
            Form::Linear => LogRiskForm::Linear,
            Form::Nonlinear => LogRiskForm::Nonlinear,
        },
        baseline: WeibullBaseline {
            shape: a.weibull_shape,
            scale: a.weibull_scale,
        },
        target_censor_fraction: a.censor_fraction,
        time_range: (a.min_days, a.max_days),
        seed: a.common.seed,
        allow_ties: a.allow_ties,
    };
    let (cohort, truth) = simulate_cohort(&config)?;
    let cohort = if a.feature_prefix == "f" {
        cohort
    } else {
        let features = cohort
            .records()
            .iter()
            .map(|r| r.features.clone())
            .collect();
        cohort.with_features(
            features,
            Cohort::default_feature_names(a.dim, &a.feature_prefix),
        )?
    };
    manifest.output(&a.out, &cohort_bytes(&cohort)?)?;
    let mut truth_bytes = Vec::new();
    truth.write_csv(&mut truth_bytes)?;
    manifest.output(&truth_path_for(&a.out), &truth_bytes)?;

    if let Some(obs_path) = &a.observations {
        let g = build_generator(&a.generator, a.dim)?;
        let mut buf = Vec::new();
        for r in cohort.records() {
            let obs = Observation {
                id: r.id.clone(),
                x: g.forward(&r.features)?,
            };
            serde_json::to_writer(&mut buf, &obs)?;
            buf.push(b'\n');
        }
        manifest.output(obs_path, &buf)?;
    }
    eprintln!(
        "simulated {} records, censored fraction {:.3}",
        cohort.len(),
        cohort.censored_fraction()
    );
    finish(&manifest, &a.common, &a.out)
}

fn read_observations(path: &Path) -> Result<Vec<Observation>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let obs: Observation = serde_json::from_str(&line)
            .with_context(|| format!("{}: row {}", path.display(), i + 1))?;
        out.push(obs);
    }
    if out.is_empty() {
        bail!("{}: no records", path.display());
    }
    Ok(out)
}

pub fn project(a: &ProjectArgs) -> Result<()> {
    let mut manifest = Manifest::new("project", a.common.seed, a)?;
    manifest.input(&a.observations)?;
    let observations = read_observations(&a.observations)?;
    let g = build_generator(&a.generator, a.latent_dim)?;
    let phi: Box<dyn FeatureExtractor> = match a.extractor {
        ExtractorKind::Identity => Box::new(IdentityExtractor {
            dim: g.output_dim(),
        }),
        ExtractorKind::Linear => Box::new(LinearExtractor::random(
            g.output_dim(),
            a.extractor_dim,
            a.common.seed,
        )),
    };
    let init = match &a.init_from {
        Some(p) => {
            let zs: Vec<Vec<f64>> = load_latents(p, &mut manifest)?
                .into_iter()
                .map(|v| v.z)
                .collect();
            mean_latent(&zs)?
        }
        None => vec![0.0; a.latent_dim],
    };
    let config = ProjectionConfig {
        steps: a.steps,
        adam: AdamConfig::PROJECTION.with_learning_rate(a.learning_rate),
        init,
    };
    let mut latents = Vec::with_capacity(observations.len());
    let mut losses = String::from("id,final_loss\n");
    for obs in &observations {
        let p = project_one(&obs.x, &g, phi.as_ref(), &config)
            .with_context(|| format!("projecting {}", obs.id))?;
        losses.push_str(&format!("{},{}\n", obs.id, p.final_loss));
        latents.push(LatentVector::new(obs.id.clone(), p.z)?);
    }
    manifest.output(&a.out, &latent_bytes(&latents)?)?;
    if let Some(path) = &a.losses_out {
        manifest.output(path, losses.as_bytes())?;
    }
    finish(&manifest, &a.common, &a.out)
}

pub fn fit_cox(a: &FitCoxArgs) -> Result<()> {
    let mut manifest = Manifest::new("fit-cox", a.common.seed, a)?;
    let cohort = load_cohort(&a.cohort, &mut manifest)?;
    let config = CoxFitConfig {
        ridge_lambda: a.ridge,
        max_iters: a.max_iters,
        tolerance: a.tolerance,
        learning_rate: a.learning_rate,
    };
    let model = fit_coxph(&cohort, &config)?;
    let baseline = breslow_baseline(&model, &cohort)?;
    eprintln!("{}", model.diagnostics.message);
    let model = SurvivalModel::Coxph(model.with_baseline(baseline));
    manifest.output(&a.out, &json_bytes(&model)?)?;
    finish(&manifest, &a.common, &a.out)
}

pub fn fit_deepsurv(a: &FitDeepsurvArgs) -> Result<()> {
    let mut manifest = Manifest::new("fit-deepsurv", a.common.seed, a)?;
    let cohort = load_cohort(&a.cohort, &mut manifest)?;
    let config = TrainConfig {
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        dropout: a.dropout,
        max_epochs: a.epochs,
        patience: a.patience,
        validation_fraction: a.validation_fraction,
        hidden: a.hidden.clone(),
        seed: a.common.seed,
    };
    let model = train_deepsurv(&cohort, &config)?;
    let d = &model.diagnostics;
    eprintln!(
        "best validation C-index {:.4} at epoch {} of {}",
        d.validation_c_index[d.best_epoch],
        d.best_epoch,
        d.validation_c_index.len()
    );
    manifest.output(&a.out, &json_bytes(&SurvivalModel::Deepsurv(model))?)?;
    finish(&manifest, &a.common, &a.out)
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let mut manifest = Manifest::new("evaluate", a.common.seed, a)?;
    manifest.input(&a.model)?;
    let model = SurvivalModel::load(&a.model)
        .with_context(|| format!("loading model {}", a.model.display()))?;
    let cohort = load_cohort(&a.cohort, &mut manifest)?;
    if cohort.feature_names() != model.feature_names() {
        bail!(
            "cohort features {:?} do not match model features {:?}",
            cohort.feature_names(),
            model.feature_names()
        );
    }
    let grid = GridSpec {
        points: a.grid_points,
        lower_quantile: a.lower_quantile,
        upper_quantile: a.upper_quantile,
    };
    let report = model.evaluate(&cohort, &grid)?;
    let bytes = json_bytes(&report)?;
    match &a.out {
        Some(out) => {
            manifest.output(out, &bytes)?;
            finish(&manifest, &a.common, out)
        }
        None => {
            print!("{}", String::from_utf8(bytes.clone())?);
            manifest.stdout(&bytes);
            let default = a.cohort.with_extension("evaluation.json");
            finish(&manifest, &a.common, &default)
        }
    }
}

fn latents_as_features(cohort: &Cohort, latents: &[LatentVector]) -> Result<Cohort> {
    let by_id: HashMap<&str, &[f64]> = latents
        .iter()
        .map(|v| (v.id.as_str(), v.z.as_slice()))
        .collect();
    let dim = latents[0].z.len();
    let features = cohort
        .records()
        .iter()
        .map(|r| {
            by_id
                .get(r.id.as_str())
                .map(|z| z.to_vec())
                .ok_or_else(|| anyhow!("no latent for id {:?}", r.id))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(cohort.with_features(features, Cohort::default_feature_names(dim, "z"))?)
}

fn maybe_normalize(attr: Attribute, normalize: bool) -> Result<Attribute> {
    Ok(if normalize { attr.normalized()? } else { attr })
}

pub fn attribute(a: &AttributeArgs) -> Result<()> {
    match &a.kind {
        AttributeKind::Health(h) => health(h),
        AttributeKind::Age(g) => age(g),
        AttributeKind::SingleDim(s) => single_dim(s),
    }
}

fn health(a: &HealthArgs) -> Result<()> {
    let mut manifest = Manifest::new("attribute health", a.common.seed, a)?;
    let mut cohort = load_cohort(&a.cohort, &mut manifest)?;
    if let Some(p) = &a.latents {
        let latents = load_latents(p, &mut manifest)?;
        cohort = latents_as_features(&cohort, &latents)?;
    }
    let config = CoxFitConfig {
        ridge_lambda: a.ridge,
        ..CoxFitConfig::default()
    };
    let (attr, model) = health_attribute(&cohort, &config)?;
    manifest.output(&a.out, &json_bytes(&maybe_normalize(attr, a.normalize)?)?)?;
    if let Some(p) = &a.model_out {
        let baseline = breslow_baseline(&model, &cohort)?;
        manifest.output(
            p,
            &json_bytes(&SurvivalModel::Coxph(model.with_baseline(baseline)))?,
        )?;
    }
    finish(&manifest, &a.common, &a.out)
}

fn read_ages(path: &Path) -> Result<HashMap<String, f64>> {
    #[derive(Deserialize)]
    struct Row {
        id: String,
        age: f64,
    }
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = HashMap::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", path.display(), i + 2))?;
        if out.insert(row.id.clone(), row.age).is_some() {
            bail!(
                "{}: row {}: duplicate id {:?}",
                path.display(),
                i + 2,
                row.id
            );
        }
    }
    Ok(out)
}

fn age(a: &AgeArgs) -> Result<()> {
    let mut manifest = Manifest::new("attribute age", a.common.seed, a)?;
    let latents = load_latents(&a.latents, &mut manifest)?;
    manifest.input(&a.ages)?;
    let ages = read_ages(&a.ages)?;
    let mut zs = Vec::with_capacity(latents.len());
    let mut ys = Vec::with_capacity(latents.len());
    for v in &latents {
        let age = ages
            .get(&v.id)
            .ok_or_else(|| anyhow!("no age for id {:?}", v.id))?;
        zs.push(v.z.as_slice());
        ys.push(*age);
    }
    let attr = age_attribute(&zs, &ys, a.ridge)?;
    manifest.output(&a.out, &json_bytes(&maybe_normalize(attr, a.normalize)?)?)?;
    finish(&manifest, &a.common, &a.out)
}

fn single_dim(a: &SingleDimArgs) -> Result<()> {
    let mut manifest = Manifest::new("attribute single-dim", a.common.seed, a)?;
    let attr = single_dim_attribute(a.dim, a.latent_dim)?;
    manifest.output(&a.out, &json_bytes(&attr)?)?;
    finish(&manifest, &a.common, &a.out)
}

pub fn manipulate(a: &ManipulateArgs) -> Result<()> {
    let mut manifest = Manifest::new("manipulate", a.common.seed, a)?;
    let latents = load_latents(&a.latents, &mut manifest)?;
    let attr = read_attribute(&a.attribute, &mut manifest)?;
    let mut out = Vec::new();
    for v in latents {
        if a.id.as_ref().is_some_and(|id| *id != v.id) {
            continue;
        }
        let z = shift_latent(&v.z, &attr, a.beta).with_context(|| format!("editing {}", v.id))?;
        out.push(LatentVector::new(v.id, z)?);
    }
    if out.is_empty() {
        bail!(
            "no latent with id {:?}",
            a.id.as_deref().unwrap_or_default()
        );
    }
    manifest.output(&a.out, &latent_bytes(&out)?)?;
    finish(&manifest, &a.common, &a.out)
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let mut manifest = Manifest::new("sweep", a.common.seed, a)?;
    let latents = load_latents(&a.latent, &mut manifest)?;
    let v = match &a.id {
        Some(id) => latents
            .iter()
            .find(|v| v.id == *id)
            .ok_or_else(|| anyhow!("no latent with id {id:?}"))?,
        None => &latents[0],
    };
    let attr = read_attribute(&a.attribute, &mut manifest)?;
    let g = build_generator(&a.generator, v.z.len())?;
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))?;
    for (beta, x) in manipulation_sweep(&v.z, &attr, &a.betas, &g)? {
        let path = a.out_dir.join(format!("{}_beta_{}.pgm", v.id, beta));
        manifest.output(&path, render_pgm(&x).as_bytes())?;
    }
    let path = a
        .common
        .manifest
        .clone()
        .unwrap_or_else(|| a.out_dir.join("sweep.manifest.json"));
    manifest.write(&path)
}

pub fn fuse(a: &FuseArgs) -> Result<()> {
    let mut manifest = Manifest::new("fuse", a.common.seed, a)?;
    let cohort = load_cohort(&a.cohort, &mut manifest)?;
    let latents = load_latents(&a.latents, &mut manifest)?;
    let names = Cohort::default_feature_names(latents[0].z.len(), &a.latent_prefix);
    let by_id: HashMap<String, Vec<f64>> = latents.into_iter().map(|v| (v.id, v.z)).collect();
    let fused = cohort.fuse_with(&by_id, &names)?;
    manifest.output(&a.out, &cohort_bytes(&fused)?)?;
    finish(&manifest, &a.common, &a.out)
}

pub fn split(a: &SplitArgs) -> Result<()> {
    let mut manifest = Manifest::new("split", a.common.seed, a)?;
    let cohort = load_cohort(&a.cohort, &mut manifest)?;
    let (train, test) = split_cohort(&cohort, a.fraction, a.common.seed)?;
    manifest.output(&a.train_out, &cohort_bytes(&train)?)?;
    manifest.output(&a.test_out, &cohort_bytes(&test)?)?;
    finish(&manifest, &a.common, &a.train_out)
}
