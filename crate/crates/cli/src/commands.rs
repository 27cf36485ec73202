use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use bof_core::compare::compare_runs;
use bof_core::dataset::{leakage_summary, load_manifest, materialize};
use bof_core::eval::{chance_baseline, evaluate, render_table};
use bof_core::experiment::{
    average_matrix, bof_marginal_matrix, bof_mc_matrix, extract_features, file_stem, fit_models,
    mean_features, method_column, run_experiment_full, write_report, ArtifactIndex, Cache,
    DistanceFile, IndexedItem,
};
use bof_core::{
    Error, EvalReport, ExperimentConfig, FeatureSequence, GmmModel, Method, Result, UnitPolicy,
};

use crate::args::{
    AuditArgs, CompareArgs, ConfigArgs, DistanceArgs, EvaluateArgs, ExtractArgs, FitArgs, RunArgs,
};

/// Warn when more than this fraction of a class's pairs share a recording.
pub const LEAKAGE_WARNING: f64 = 0.2;

/// Config file plus flag overrides. Method-level checks are left to
/// commands that run a method.
fn config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let manifest = args
                .manifest
                .clone()
                .ok_or_else(|| Error::Config("--manifest or --config is required".into()))?;
            ExperimentConfig::new(manifest)
        }
    };
    for (key, value) in args.overrides() {
        cfg.set(key, &value)?;
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EvalReport::from_json(&text)
}

fn load_features(dir: &Path, index: &ArtifactIndex) -> Result<Vec<FeatureSequence>> {
    index
        .items
        .iter()
        .map(|item| {
            FeatureSequence::read_binary(open(&dir.join(&item.file))?, item.item_id.as_str())
        })
        .collect()
}

fn load_models(dir: &Path, index: &ArtifactIndex) -> Result<Vec<GmmModel>> {
    index
        .items
        .iter()
        .map(|item| GmmModel::read_binary(open(&dir.join(&item.file))?))
        .collect()
}

pub fn extract(args: &ExtractArgs) -> Result<()> {
    let cfg = config(&args.config)?;
    let manifest = load_manifest(&cfg.manifest, cfg.unit_policy)?;
    let audio = materialize(&manifest, cfg.normalize)?;
    let features = extract_features(&audio, cfg.include_c0, &Cache::new(cfg.cache_dir.clone()))?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let mut items = Vec::with_capacity(features.len());
    for (entry, seq) in manifest.items.iter().zip(&features) {
        let stem = file_stem(&entry.item_id);
        let file = format!("{stem}.feat");
        let path = args.out.join(&file);
        seq.write_binary(create(&path)?)
            .map_err(|e| Error::io(&path, e))?;
        if args.csv {
            seq.write_csv(create(&args.out.join(format!("{stem}.csv")))?)?;
        }
        items.push(IndexedItem {
            item_id: entry.item_id.clone(),
            class_label: entry.class_label.clone(),
            file,
        });
    }
    let mut echo = BTreeMap::new();
    echo.insert("manifest".into(), cfg.manifest.display().to_string());
    echo.insert("unit_policy".into(), cfg.unit_policy.to_string());
    echo.insert("normalize".into(), cfg.normalize.to_string());
    echo.insert("include_c0".into(), cfg.include_c0.to_string());
    ArtifactIndex {
        dataset: manifest.name.clone(),
        unit_policy: manifest.unit_policy,
        config: echo,
        items,
    }
    .save(&args.out)?;
    log::info!(
        "wrote {} feature sequences to {}",
        features.len(),
        args.out.display()
    );
    Ok(())
}

pub fn fit(args: &FitArgs) -> Result<()> {
    if args.components == 0 {
        return Err(Error::Config("components must be at least 1".into()));
    }
    let index = ArtifactIndex::load(&args.features)?;
    let features = load_features(&args.features, &index)?;
    let models = fit_models(
        &index.ids(),
        &features,
        args.components,
        args.seed,
        &Cache::new(args.cache_dir.clone()),
    )?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut items = Vec::with_capacity(models.len());
    for (item, model) in index.items.iter().zip(&models) {
        let file = format!("{}.gmm", file_stem(&item.item_id));
        let path = args.out.join(&file);
        model
            .write_binary(create(&path)?)
            .map_err(|e| Error::io(&path, e))?;
        items.push(IndexedItem {
            file,
            ..item.clone()
        });
    }
    let mut echo = index.config.clone();
    echo.insert("components".into(), args.components.to_string());
    echo.insert("rng_seed".into(), args.seed.to_string());
    ArtifactIndex {
        items,
        config: echo,
        ..index
    }
    .save(&args.out)?;
    log::info!("wrote {} models to {}", models.len(), args.out.display());
    Ok(())
}

pub fn distances(args: &DistanceArgs) -> Result<()> {
    let method: Method = args.method.parse()?;
    if args.mc_samples.is_some() && method != Method::BofMc {
        return Err(Error::Config(format!(
            "--mc-samples applies only to bof_mc, not {method}"
        )));
    }
    let need = |dir: &Option<std::path::PathBuf>, flag: &str| {
        dir.clone()
            .ok_or_else(|| Error::Config(format!("{method} needs --{flag}")))
    };
    let (index, matrix, mut echo) = match method {
        Method::Average => {
            let dir = need(&args.features, "features")?;
            let index = ArtifactIndex::load(&dir)?;
            let ids = index.ids();
            let means = mean_features(&ids, &load_features(&dir, &index)?)?;
            let echo = index.config.clone();
            (index, average_matrix(&ids, &means)?, echo)
        }
        Method::BofMc => {
            let seed = args
                .seed
                .ok_or_else(|| Error::Config("bof_mc requires --seed".into()))?;
            let dir = need(&args.models, "models")?;
            let index = ArtifactIndex::load(&dir)?;
            let samples = args
                .mc_samples
                .unwrap_or(bof_core::bof_model::DEFAULT_MC_SAMPLES);
            let matrix = bof_mc_matrix(&index.ids(), &load_models(&dir, &index)?, samples, seed)?;
            let mut echo = index.config.clone();
            echo.insert("mc_samples".into(), samples.to_string());
            echo.insert("distance_seed".into(), seed.to_string());
            (index, matrix, echo)
        }
        Method::BofMarginal => {
            let fdir = need(&args.features, "features")?;
            let mdir = need(&args.models, "models")?;
            let findex = ArtifactIndex::load(&fdir)?;
            let mindex = ArtifactIndex::load(&mdir)?;
            if findex.ids() != mindex.ids() {
                return Err(Error::MismatchedItems(
                    "feature and model directories list different items".into(),
                ));
            }
            let matrix = bof_marginal_matrix(
                &mindex.ids(),
                &load_models(&mdir, &mindex)?,
                &load_features(&fdir, &findex)?,
            )?;
            let echo = mindex.config.clone();
            (mindex, matrix, echo)
        }
    };
    echo.insert("method".into(), method.to_string());
    DistanceFile {
        dataset: index.dataset.clone(),
        labels: index.labels(),
        config: echo,
        matrix,
    }
    .save(&args.out)
}

fn table(name: &str, method: &str, report: &EvalReport) -> String {
    bof_core::eval::report_table(
        &[(name.to_string(), report.chance.as_ref(), vec![Some(report)])],
        &[method],
    )
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let file = DistanceFile::load(&args.distances)?;
    let chance = chance_baseline(&file.labels, args.chance_trials, args.seed)?;
    let report = evaluate(&file.matrix, &file.labels)?
        .with_chance(chance)
        .with_config(file.config.clone());
    let method = file
        .config
        .get("method")
        .and_then(|m| m.parse::<Method>().ok());
    if let (Some(dir), Some(method)) = (&args.output_dir, method) {
        write_report(dir, &file.dataset, method, &report)?;
    }
    if args.json {
        println!("{}", report.to_json());
    } else {
        print!(
            "{}",
            table(
                &file.dataset,
                method.map_or("result", method_column),
                &report
            )
        );
    }
    Ok(())
}

pub fn run(args: &RunArgs) -> Result<()> {
    let cfg = config(&args.config)?;
    cfg.validate()?;
    let out = run_experiment_full(&cfg)?;
    if args.json {
        println!("{}", out.report.to_json());
    } else {
        print!(
            "{}",
            table(&out.manifest.name, method_column(cfg.method), &out.report)
        );
    }
    Ok(())
}

pub fn compare(args: &CompareArgs) -> Result<()> {
    let a = read_report(&args.a)?;
    let b = read_report(&args.b)?;
    let cmp = compare_runs(&a, &b, args.permutations, args.seed)?;
    if args.json {
        println!("{}", cmp.to_json());
        return Ok(());
    }
    let row = |name: &str, t: &bof_core::compare::PairedTest| {
        vec![
            name.to_string(),
            format!("{:+.2}", t.mean_difference),
            format!("{:.4}", t.p_value),
            if t.exact {
                "exact".into()
            } else {
                format!("{} draws", t.permutations)
            },
        ]
    };
    print!(
        "{}",
        render_table(
            &["metric", "mean a-b", "p", "test"],
            &[
                row("p@5", &cmp.precision_at_5),
                row("AP", &cmp.average_precision)
            ],
        )
    );
    println!("{} paired items", cmp.items);
    Ok(())
}

pub fn audit(args: &AuditArgs) -> Result<()> {
    let policy: UnitPolicy = args.unit_policy.parse()?;
    let manifest = load_manifest(&args.manifest, policy)?;
    let summary = leakage_summary(&manifest);
    let flagged: Vec<&str> = summary
        .classes
        .iter()
        .filter(|c| c.leakage_fraction > LEAKAGE_WARNING)
        .map(|c| c.class_label.as_str())
        .collect();
    if !flagged.is_empty() {
        eprintln!(
            "warning: more than {:.0}% of same-class pairs share a recording in {} class(es): {}",
            100.0 * LEAKAGE_WARNING,
            flagged.len(),
            flagged.join(", ")
        );
    }
    if args.json {
        println!("{}", summary.to_json());
        return Ok(());
    }
    let rows: Vec<Vec<String>> = summary
        .classes
        .iter()
        .map(|c| {
            vec![
                c.class_label.clone(),
                c.items.to_string(),
                c.recordings.to_string(),
                c.locations.to_string(),
                format!("{:.3}", c.leakage_fraction),
                if c.leakage_fraction > LEAKAGE_WARNING {
                    "!".into()
                } else {
                    String::new()
                },
            ]
        })
        .collect();
    println!(
        "{} ({}), {} items",
        summary.dataset, summary.unit_policy, summary.items
    );
    print!(
        "{}",
        render_table(
            &[
                "class",
                "items",
                "recordings",
                "locations",
                "shared pairs",
                ""
            ],
            &rows
        )
    );
    println!(
        "mean recordings per class {:.2}, mean locations per class {:.2}",
        summary.mean_recordings_per_class, summary.mean_locations_per_class
    );
    Ok(())
}
