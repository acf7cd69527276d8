//! The five verbs.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;

use momentguide::features::FeatureExtractor;
use momentguide::guidance::{guided_sample, reference_features, sample_unguided, TraceRecord};
use momentguide::metrics::EvalReport;
use momentguide::pgm::{decode_pgm, encode_pgm, PgmFormat};
use momentguide::score::{train_denoiser, ScoreModel, TinyDenoiser};
use momentguide::verify::run_checks;
use momentguide::{Image, NoiseRng};

use crate::config::{resolve, ExtractorName, ExtractorSection, RunConfig};
use crate::inputs::{load_extractor, load_model, load_reference, read_pgm_dir};
use crate::output::{sample_name, write_file, RunDir};
use crate::{CheckArgs, CliError, EvalArgs, RunArgs};

/// Samples are stored as 16-bit PGM.
const SAMPLE_MAXVAL: u16 = 65535;

struct Prepared {
    cfg: RunConfig,
    base: PathBuf,
    out: PathBuf,
}

fn prepare(args: &RunArgs) -> Result<Prepared, CliError> {
    let (mut cfg, base) = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    if let Some(w) = args.workers {
        if w == 0 {
            return Err(CliError::Config("--workers must be positive".into()));
        }
        cfg.run.workers = w;
    }
    let out = match (&args.out, &cfg.run.out_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => resolve(&base, o),
        (None, None) => return Err(CliError::Config("no output directory: pass --out or set run.out_dir".into())),
    };
    Ok(Prepared { cfg, base, out })
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))
}

struct ChainOutput {
    chain: usize,
    /// The sample as stored on disk, after quantization.
    stored: Image,
    trace: Vec<TraceRecord>,
}

struct Guide<'a> {
    extractor: &'a dyn FeatureExtractor,
    reference: &'a Image,
}

/// Runs every chain, writing `sample_NNNN.pgm` as each one finishes.
fn generate(p: &Prepared, verb: &str, guide: Option<Guide<'_>>, model: &dyn ScoreModel) -> Result<(RunDir, Vec<ChainOutput>), CliError> {
    let cfg = &p.cfg;
    let schedule = cfg.schedule()?;
    let sampler = cfg.sampler()?;
    let gcfg = cfg.guidance();
    if guide.is_some() {
        gcfg.validate(model).map_err(|e| CliError::Config(format!("guidance: {e}")))?;
    }
    let fref = match &guide {
        Some(g) => Some(reference_features(g.extractor, g.reference)?),
        None => None,
    };
    let (h, w) = (cfg.image.height, cfg.image.width);
    let mut dir = RunDir::create(p.out.clone())?;
    let results: Vec<Result<ChainOutput, CliError>> = pool(cfg.run.workers)?.install(|| {
        (0..cfg.run.batch_size)
            .into_par_iter()
            .map(|chain| {
                let mut rng = NoiseRng::for_chain(cfg.run.seed, chain as u64);
                let (sample, trace) = match (&guide, &fref) {
                    (Some(g), Some(f)) => {
                        let run = guided_sample(model, g.extractor, f, h, w, &schedule, &gcfg, sampler, &mut rng)?;
                        (run.sample, run.trace)
                    }
                    _ => (sample_unguided(model, h, w, &schedule, sampler, &mut rng)?, Vec::new()),
                };
                let bytes = encode_pgm(&sample, SAMPLE_MAXVAL, PgmFormat::Binary)?;
                write_file(&p.out.join(sample_name(chain)), &bytes)?;
                Ok(ChainOutput {
                    chain,
                    stored: decode_pgm(&bytes)?,
                    trace,
                })
            })
            .collect()
    });
    let mut ok = Vec::with_capacity(results.len());
    let mut first_err = None;
    for r in results {
        match r {
            Ok(c) => {
                dir.record(&sample_name(c.chain), "sample");
                ok.push(c);
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        dir.finish(verb, &cfg.hash(), false)?;
        return Err(e);
    }
    Ok((dir, ok))
}

fn trace_csv(chains: &[ChainOutput]) -> String {
    let mut s = String::from("chain_id,t,repeat_index,loss,grad_norm\n");
    for c in chains {
        for r in &c.trace {
            let _ = writeln!(s, "{},{},{},{:?},{:?}", c.chain, r.t, r.repeat, r.loss, r.grad_norm);
        }
    }
    s
}

fn finish_report(
    dir: &mut RunDir,
    cfg: &RunConfig,
    extractor: &dyn FeatureExtractor,
    reference: Option<&Image>,
    chains: &[ChainOutput],
) -> Result<(), CliError> {
    let samples: Vec<Image> = chains.iter().map(|c| c.stored.clone()).collect();
    let names = chains.iter().map(|c| sample_name(c.chain)).collect();
    let report = EvalReport::build(extractor, reference, &samples, names, cfg.echo())?;
    dir.write("report.txt", "report", report.to_text().as_bytes())?;
    dir.write("samples.csv", "per-sample", report.to_csv().as_bytes())?;
    dir.write("config.toml", "config", cfg.to_toml().as_bytes())
}

fn with_dir<T>(dir: &mut Option<RunDir>, verb: &str, hash: &str, r: Result<T, CliError>) -> Result<T, CliError> {
    if r.is_err() {
        if let Some(d) = dir.take() {
            d.finish(verb, hash, false)?;
        }
    }
    r
}

pub fn cmd_sample(args: &RunArgs) -> Result<i32, CliError> {
    let p = prepare(args)?;
    let model = load_model(&p.cfg, &p.base)?;
    let extractor = load_extractor(&p.cfg.extractor, &p.base, p.cfg.image.height, p.cfg.image.width)?;
    let reference = load_reference(&p.cfg, &p.base)?;
    let (dir, chains) = generate(&p, "sample", None, model.as_ref())?;
    let hash = p.cfg.hash();
    let mut dir = Some(dir);
    let r = finish_report(dir.as_mut().unwrap(), &p.cfg, extractor.as_ref(), reference.as_ref(), &chains);
    with_dir(&mut dir, "sample", &hash, r)?;
    dir.unwrap().finish("sample", &hash, true)?;
    Ok(0)
}

pub fn cmd_guide(args: &RunArgs) -> Result<i32, CliError> {
    let p = prepare(args)?;
    let reference = load_reference(&p.cfg, &p.base)?
        .ok_or_else(|| CliError::Config("guidance.reference is required for guide".into()))?;
    let model = load_model(&p.cfg, &p.base)?;
    let extractor = load_extractor(&p.cfg.extractor, &p.base, p.cfg.image.height, p.cfg.image.width)?;
    let guide = Guide {
        extractor: extractor.as_ref(),
        reference: &reference,
    };
    let (dir, chains) = generate(&p, "guide", Some(guide), model.as_ref())?;
    let hash = p.cfg.hash();
    let mut dir = Some(dir);
    let r = dir.as_mut().unwrap().write("trace.csv", "trace", trace_csv(&chains).as_bytes());
    with_dir(&mut dir, "guide", &hash, r)?;
    let r = finish_report(dir.as_mut().unwrap(), &p.cfg, extractor.as_ref(), Some(&reference), &chains);
    with_dir(&mut dir, "guide", &hash, r)?;
    dir.unwrap().finish("guide", &hash, true)?;
    Ok(0)
}

fn eval_extractor(args: &EvalArgs, h: usize, w: usize) -> Result<Arc<dyn FeatureExtractor>, CliError> {
    let (mut section, base) = match &args.config {
        Some(c) => {
            let (cfg, base) = RunConfig::load(c)?;
            (cfg.extractor, base)
        }
        None => (ExtractorSection::default(), PathBuf::new()),
    };
    if let Some(k) = &args.extractor {
        section.kind = match k.as_str() {
            "moments" => ExtractorName::Moments,
            "central-moments" => ExtractorName::CentralMoments,
            "deep-moments" => ExtractorName::DeepMoments,
            other => return Err(CliError::Config(format!("--extractor: unknown extractor `{other}`"))),
        };
    }
    if let Some(m) = args.max_order {
        section.max_order = m;
    }
    if let Some(n) = &args.net {
        section.net = Some(n.to_string_lossy().into_owned());
    }
    let base = if args.net.is_some() { PathBuf::new() } else { base };
    load_extractor(&section, &base, h, w)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<i32, CliError> {
    let samples = read_pgm_dir(&args.samples, "--samples")?;
    let (h, w) = (samples[0].1.height(), samples[0].1.width());
    let reference = match &args.reference {
        Some(r) => {
            let img = momentguide::pgm::read_image(r).map_err(|e| CliError::Config(format!("--reference: {e}")))?;
            img.check_dims(h, w).map_err(|e| CliError::Config(format!("--reference: {e}")))?;
            Some(img)
        }
        None => None,
    };
    let extractor = eval_extractor(args, h, w)?;
    let (names, imgs): (Vec<String>, Vec<Image>) = samples.into_iter().unzip();
    let mut echo = vec![("samples".to_string(), args.samples.display().to_string())];
    if let Some(r) = &args.reference {
        echo.push(("reference".into(), r.display().to_string()));
    }
    let report = EvalReport::build(extractor.as_ref(), reference.as_ref(), &imgs, names, echo)?;
    print!("{}", report.to_text());
    if let Some(out) = &args.out {
        let mut dir = RunDir::create(out.clone())?;
        dir.write("report.txt", "report", report.to_text().as_bytes())?;
        dir.write("samples.csv", "per-sample", report.to_csv().as_bytes())?;
        dir.finish("eval", "none", true)?;
    }
    Ok(0)
}

pub fn cmd_check(args: &CheckArgs) -> Result<i32, CliError> {
    let outcomes = run_checks(args.scope.as_deref()).map_err(|e| match e {
        momentguide::Error::InvalidArgument(m) => CliError::Config(m),
        e => CliError::from(e),
    })?;
    let width = outcomes.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut failed = 0;
    for c in &outcomes {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        println!("{:<10} {:<width$}  {mark}  {}", c.suite, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    println!("{} checks, {} failed", outcomes.len(), failed);
    Ok(if failed == 0 { 0 } else { 1 })
}

pub fn cmd_train(args: &RunArgs) -> Result<i32, CliError> {
    let p = prepare(args)?;
    let t = p
        .cfg
        .train
        .clone()
        .ok_or_else(|| CliError::Config("train section is required for train".into()))?;
    let data: Vec<Image> = read_pgm_dir(&resolve(&p.base, &t.dataset), "train.dataset")?
        .into_iter()
        .map(|(_, i)| i)
        .collect();
    let (h, w) = (data[0].height(), data[0].width());
    let schedule = p.cfg.schedule()?;
    let mut rng = NoiseRng::new(p.cfg.run.seed);
    let init = TinyDenoiser::init(h, w, (t.hidden1, t.hidden2), t.activation(), &mut rng)?;
    let mut dir = Some(RunDir::create(p.out.clone())?);
    let hash = p.cfg.hash();
    let r = train_denoiser(&init, &data, &schedule, &t.train_config(), &mut rng).map_err(CliError::from);
    let (model, report) = with_dir(&mut dir, "train", &hash, r)?;
    let mut d = dir.unwrap();
    d.write("denoiser.ckpt", "checkpoint", &model.to_checkpoint().to_bytes())?;
    let mut curve = String::from("step,loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        let _ = writeln!(curve, "{},{l:?}", i + 1);
    }
    d.write("losses.csv", "loss-curve", curve.as_bytes())?;
    let summary = format!(
        "steps: {}\ninitial_validation: {:?}\nfinal_validation: {:?}\nconfig_hash: {hash}\n",
        report.losses.len(),
        report.initial_validation,
        report.final_validation
    );
    d.write("train.txt", "report", summary.as_bytes())?;
    d.write("config.toml", "config", p.cfg.to_toml().as_bytes())?;
    d.finish("train", &hash, true)?;
    print!("{summary}");
    Ok(0)
}

