//! Subcommand implementations. Each returns the list of files it wrote so
//! the caller can drop a manifest next to them.

use crate::config::RunConfig;
use crate::DataKind;
use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};
use tinynas::fixtures;
use tinynas::hw::{
    self, builtin_profiles, calibrate_all, estimate_energy, load_models, load_profiles,
    predict_latency, read_measurements_csv, save_models, synthetic_measurements, HwProxyModel,
    McuProfile,
};
use tinynas::resources::{
    any_feasible_selection, check_budget, doc_resources, Budget, BudgetCheck, ResourceReport,
};
use tinynas::search::{finetune, search_once, SearchConfig, SearchResult};
use tinynas::supernet::{ArchDoc, DiscreteNet, Supernet};
use tinynas::tasks::{
    self, anomaly_scores, auc_roc, gen_synthetic_ad_task, gen_synthetic_spectrogram_task,
    AdSpec, LabeledDataset, SpectrogramSpec, Split,
};

fn write_output(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let json = serde_json::to_string_pretty(value).expect("outputs serialize");
    println!("{json}");
    match out {
        Some(path) => {
            write_output(path, &json)?;
            Ok(vec![path.to_path_buf()])
        }
        None => Ok(vec![]),
    }
}

// ── gen-data ─────────────────────────────────────────────────────────

fn parse_shape(text: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = text
        .split('x')
        .map(|p| p.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("shape {text:?} is not HxWxC"))?;
    if parts.len() != 3 {
        bail!("shape {text:?} is not HxWxC");
    }
    Ok([parts[0], parts[1], parts[2]])
}

pub fn gen_data(
    kind: DataKind,
    seed: u64,
    classes: usize,
    machine_ids: usize,
    samples_per_class: usize,
    shape: &str,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    match kind {
        DataKind::Spectrogram => {
            let spec = SpectrogramSpec::new(classes, samples_per_class, parse_shape(shape)?, seed);
            let task = gen_synthetic_spectrogram_task(&spec)?;
            std::fs::write(out, tasks::io::encode_classification(&task))
                .with_context(|| format!("writing {}", out.display()))?;
        }
        DataKind::Anomaly => {
            let task = gen_synthetic_ad_task(&AdSpec::new(machine_ids, seed))?;
            std::fs::write(out, tasks::io::encode_anomaly(&task))
                .with_context(|| format!("writing {}", out.display()))?;
        }
        DataKind::Measurements => {
            let rows = synthetic_measurements(seed);
            write_output(out, &hw::write_measurements_csv(&rows))?;
        }
    }
    eprintln!("wrote {}", out.display());
    Ok(vec![out.to_path_buf()])
}

// ── calibrate ────────────────────────────────────────────────────────

pub fn calibrate(csv: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let text =
        std::fs::read_to_string(csv).with_context(|| format!("reading {}", csv.display()))?;
    let rows = read_measurements_csv(&text)?;
    let fits = calibrate_all(&rows)?;
    let mut models = Vec::with_capacity(fits.len());
    for (model, warnings) in fits {
        for w in warnings {
            eprintln!(
                "warning: {}/{}: {w}",
                model.backbone_id, model.mcu_id
            );
        }
        eprintln!(
            "fitted {}/{}: {:.4} ms/Mop + {:.3} ms (r^2 {:.4})",
            model.backbone_id, model.mcu_id, model.slope_ms_per_mop, model.intercept_ms, model.r_squared
        );
        models.push(model);
    }
    write_output(out, &save_models(&models))?;
    println!("{}", serde_json::to_string_pretty(&models).expect("models serialize"));
    Ok(vec![out.to_path_buf()])
}

// ── estimate ─────────────────────────────────────────────────────────

pub fn load_arch(arch: &str) -> Result<ArchDoc> {
    let path = Path::new(arch);
    if path.exists() {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        return Ok(ArchDoc::from_json(&text)?);
    }
    fixtures::bundled_arch(arch).ok_or_else(|| {
        anyhow!(
            "{arch}: no such file, and not a bundled architecture (try one of {})",
            fixtures::bundled_arch_json()
                .iter()
                .map(|(n, _)| *n)
                .collect::<Vec<_>>()
                .join(", ")
        )
    })
}

fn load_profile(mcu: &str) -> Result<McuProfile> {
    if let Some(profile) = builtin_profiles().into_iter().find(|p| p.name == mcu) {
        return Ok(profile);
    }
    let path = Path::new(mcu);
    if path.exists() {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let profiles = load_profiles(&text)?;
        return match profiles.len() {
            1 => Ok(profiles.into_iter().next().unwrap()),
            n => bail!("{mcu}: profile file must contain exactly one device, found {n}"),
        };
    }
    bail!(
        "{mcu}: no such profile file, and not a builtin device (try one of {})",
        builtin_profiles().iter().map(|p| p.name.clone()).collect::<Vec<_>>().join(", ")
    )
}

fn pick_hw_model<'m>(models: &'m [HwProxyModel], mcu: Option<&str>) -> Result<&'m HwProxyModel> {
    if models.is_empty() {
        bail!("hw model file contains no fitted models");
    }
    match mcu {
        Some(name) => models
            .iter()
            .find(|m| m.mcu_id == name)
            .ok_or_else(|| anyhow!("no fitted model for device {name} in the hw model file")),
        None => Ok(&models[0]),
    }
}

#[derive(Serialize)]
struct EstimateOutput {
    architecture: String,
    report: ResourceReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    budget: Option<Budget>,
    #[serde(skip_serializing_if = "Option::is_none")]
    check: Option<BudgetCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    predicted_latency_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    predicted_energy_mj: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    energy_low_confidence: Option<bool>,
}

pub fn estimate(
    arch: &str,
    mcu: Option<&str>,
    bits: u8,
    hw_model: Option<&Path>,
    out: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let doc = load_arch(arch)?;
    let report = doc_resources(&doc, bits, bits)?;
    let (budget, check) = match mcu {
        Some(name) => {
            let profile = load_profile(name)?;
            let budget = Budget {
                flash_bytes: Some(profile.flash_bytes),
                sram_bytes: Some(profile.sram_bytes),
                max_ops: None,
                ..Budget::default()
            };
            let check = check_budget(&report, &budget);
            (Some(budget), Some(check))
        }
        None => (None, None),
    };
    let mut output = EstimateOutput {
        architecture: doc.name.clone().unwrap_or_else(|| arch.to_string()),
        report,
        budget,
        check,
        predicted_latency_ms: None,
        predicted_energy_mj: None,
        energy_low_confidence: None,
    };
    if let Some(path) = hw_model {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let models = load_models(&text)?;
        let model = pick_hw_model(&models, mcu)?;
        output.predicted_latency_ms = Some(predict_latency(model, output.report.total_ops));
        if model.mean_power_mw.is_some() {
            let energy = estimate_energy(model, output.report.total_ops)?;
            output.predicted_energy_mj = Some(energy.energy_mj);
            output.energy_low_confidence = Some(energy.low_confidence);
        }
    }
    emit(&output, out)
}

// ── search ───────────────────────────────────────────────────────────

#[derive(Serialize)]
struct SearchOutput {
    result: SearchResult,
    architecture: ArchDoc,
}

#[allow(clippy::too_many_arguments)]
pub fn search(
    config_path: &Path,
    mcu: Option<&str>,
    budget_sram: Option<u64>,
    budget_flash: Option<u64>,
    budget_ops: Option<u64>,
    bits: Option<u8>,
    seed: Option<u64>,
    seeds: u64,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let config = RunConfig::load(config_path)?;
    let supernet = config.supernet()?;
    let task = config.classification_task()?;
    let mut search_config = config.search.clone();
    if let Some(name) = mcu {
        let profile = load_profile(name)?;
        search_config.budget.flash_bytes = Some(profile.flash_bytes);
        search_config.budget.sram_bytes = Some(profile.sram_bytes);
    }
    if budget_sram.is_some() {
        search_config.budget.sram_bytes = budget_sram;
    }
    if budget_flash.is_some() {
        search_config.budget.flash_bytes = budget_flash;
    }
    if budget_ops.is_some() {
        search_config.budget.max_ops = budget_ops;
    }
    if let Some(b) = bits {
        search_config.weight_bits = b;
        search_config.activation_bits = b;
    }
    if let Some(s) = seed {
        search_config.seed = s;
    }
    search_config.validate()?;

    // refuse budgets no vertex of the search space can satisfy
    check_feasibility(&supernet, &search_config)?;

    let base_seed = search_config.seed;
    let runs: Vec<Result<SearchOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..seeds)
            .map(|i| {
                let supernet = supernet.clone();
                let task = &task;
                let mut cfg = search_config.clone();
                cfg.seed = base_seed + i;
                scope.spawn(move || -> Result<SearchOutput> {
                    let (result, model) = search_once(supernet, task, &cfg)?;
                    let architecture = model.supernet.to_arch_doc(&result.selection)?;
                    Ok(SearchOutput { result, architecture })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("search threads do not panic"))
            .collect()
    });
    let outputs: Vec<SearchOutput> = runs.into_iter().collect::<Result<_>>()?;

    for o in &outputs {
        eprintln!(
            "seed {}: {:?} ops={} feasible={}",
            o.result.seed,
            o.result.selection.choices,
            o.result.report.total_ops,
            o.result.budget_check.passed
        );
    }

    let mut written = vec![out.to_path_buf()];
    if outputs.len() == 1 {
        write_output(out, &serde_json::to_string_pretty(&outputs[0]).expect("serializes"))?;
        let arch_path = out.with_extension("arch.json");
        write_output(&arch_path, &outputs[0].architecture.to_json())?;
        written.push(arch_path);
    } else {
        write_output(out, &serde_json::to_string_pretty(&outputs).expect("serializes"))?;
    }
    Ok(written)
}

fn check_feasibility(supernet: &Supernet, config: &SearchConfig) -> Result<()> {
    let constrained = config.budget.effective_flash().is_some()
        || config.budget.effective_sram().is_some()
        || config.budget.max_ops.is_some();
    if !constrained {
        return Ok(());
    }
    let enumerable = supernet
        .architecture_count()
        .is_some_and(|n| n <= tinynas::supernet::DEFAULT_ENUMERATION_CAP as u64);
    if enumerable {
        match any_feasible_selection(
            supernet,
            &config.budget,
            config.weight_bits,
            config.activation_bits,
            None,
        )? {
            Ok(_) => Ok(()),
            Err(reason) => bail!("budget infeasible for every architecture in the space: {reason}"),
        }
    } else {
        // spaces beyond the enumeration cap: check the per-decision
        // minimum vertex (exact for ops and size, heuristic for memory)
        let min_sel = tinynas::resources::min_selection(supernet);
        let report = tinynas::resources::discrete_resources(
            supernet,
            &min_sel,
            config.weight_bits,
            config.activation_bits,
        )?;
        let check = check_budget(&report, &config.budget);
        if let Some(name) = check.violated() {
            bail!(
                "budget infeasible: the minimum-resource selection violates the {name} constraint"
            );
        }
        Ok(())
    }
}

// ── train-eval ───────────────────────────────────────────────────────

#[derive(Serialize)]
struct TrainEvalOutput {
    architecture: String,
    accuracy: f64,
    final_train_loss: f64,
    quant_bits: Option<u8>,
}

pub fn train_eval(
    config_path: &Path,
    arch: &str,
    bits: Option<u8>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let config = RunConfig::load(config_path)?;
    let task = config.classification_task()?;
    let doc = load_arch(arch)?;
    let mut ft = config.finetune.clone();
    if let Some(b) = bits {
        ft.quant_bits = if b == 0 { None } else { Some(b) };
    }
    if let Some(s) = seed {
        ft.seed = s;
    }
    let mut net = DiscreteNet::from_doc(&doc, ft.seed)?;
    let outcome = finetune(&mut net, &task.train, &task.test, &ft)?;
    eprintln!("finetuned {arch}: accuracy {:.4}", outcome.accuracy);
    emit(
        &TrainEvalOutput {
            architecture: doc.name.clone().unwrap_or_else(|| arch.to_string()),
            accuracy: outcome.accuracy,
            final_train_loss: outcome.final_train_loss,
            quant_bits: ft.quant_bits,
        },
        out,
    )
}

// ── ad-eval ──────────────────────────────────────────────────────────

#[derive(Serialize)]
struct AdEvalOutput {
    auc: f64,
    classifier_accuracy: f64,
    scores_csv: PathBuf,
}

pub fn ad_eval(
    config_path: &Path,
    arch: Option<&str>,
    seed: Option<u64>,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let config = RunConfig::load(config_path)?;
    let task = config.anomaly_task()?;
    let doc = match arch {
        Some(a) => load_arch(a)?,
        None => fixtures::default_ad_classifier(task.num_machine_ids),
    };
    let mut ft = config.finetune.clone();
    if let Some(s) = seed {
        ft.seed = s;
    }
    let mut net = DiscreteNet::from_doc(&doc, ft.seed)?;

    // held-out classification quality on the normal test samples
    let normal_indices: Vec<usize> =
        (0..task.test.len()).filter(|&i| !task.test.is_anomalous[i]).collect();
    let elems: usize = task.test.shape.iter().product();
    let eval_split = LabeledDataset {
        shape: task.test.shape,
        features: normal_indices
            .iter()
            .flat_map(|&i| task.test.features[i * elems..(i + 1) * elems].to_vec())
            .collect(),
        labels: normal_indices.iter().map(|&i| task.test.machine_ids[i]).collect(),
        num_classes: task.num_machine_ids,
        split: Split::Test,
    };

    let outcome = finetune(&mut net, &task.train, &eval_split, &ft)?;
    let scores = anomaly_scores(&net, &task.test, outcome.quant.as_ref())?;
    let auc = auc_roc(&scores, &task.test.is_anomalous)?;
    write_output(out, &tasks::io::scores_to_csv(&scores, &task.test.is_anomalous))?;
    eprintln!("classifier accuracy {:.4}, AUC {:.4}", outcome.accuracy, auc);
    println!(
        "{}",
        serde_json::to_string_pretty(&AdEvalOutput {
            auc,
            classifier_accuracy: outcome.accuracy,
            scores_csv: out.to_path_buf(),
        })
        .expect("serializes")
    );
    Ok(vec![out.to_path_buf()])
}
