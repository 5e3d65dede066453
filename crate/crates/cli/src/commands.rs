use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rdkd::config::{RunConfig, Task};
use rdkd::data::{load_manifest_items, write_corpus, write_manifest, Corpus, Item, ManifestRow, Split};
use rdkd::distill::{TrainOutput, Trainer};
use rdkd::eval::{score as score_of, RobustnessReport, ScenarioSpec, ScoreTable, Upstream};
use rdkd::experiment::{ablation, AblationReport, Bench};
use rdkd::io::{write_atomic, write_json};
use rdkd::models::checkpoint::{self, DType};
use rdkd::models::{param_count, EnhancementKind, Teacher};
use rdkd::par::Parallelism;
use rdkd::signal::{wav, Action};
use rdkd::Error;

use crate::plot::grouped_bars;
use crate::{CliError, CliResult, ConfigArgs, EncoderKind};

const RESOLVED: &str = "config.resolved.json";
const TEACHER_FILE: &str = "teacher.rdkd";

fn load_config(args: &ConfigArgs, seed: Option<u64>) -> CliResult<RunConfig> {
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = cfg.with_global_seed(seed).resolved();
    cfg.validate()?;
    Ok(cfg)
}

fn write_resolved(out: &Path, cfg: &RunConfig) -> CliResult<()> {
    write_atomic(&out.join(RESOLVED), cfg.to_json().as_bytes())?;
    Ok(())
}

fn load_split(data: &Path, split: Split) -> CliResult<Vec<Item>> {
    let manifest = data.join(split.as_str()).join("manifest.csv");
    if !manifest.exists() {
        return Err(Error::data(data.display().to_string(), format!("no {} manifest; run `synth` first", split.as_str())).into());
    }
    Ok(load_manifest_items(&manifest)?)
}

fn load_teacher(cfg: &RunConfig, path: &Path) -> CliResult<Teacher> {
    let mut teacher = Teacher::from_params(cfg.teacher.encoder.clone(), checkpoint::load_store(path)?)?;
    teacher.freeze();
    Ok(teacher)
}

fn load_upstream(bench: &Bench, path: &Path, encoder: EncoderKind, name: Option<String>) -> CliResult<Upstream> {
    let enc = match encoder {
        EncoderKind::Teacher => bench.cfg.teacher.encoder.clone(),
        EncoderKind::Student => bench.cfg.student.encoder.clone(),
    };
    let name = name.unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "upstream".into())
    });
    let mut store = checkpoint::load_store(path)?;
    // A distilled run keeps its enhancement head beside the student.
    let head = path.with_file_name("enh_head.rdkd");
    if encoder == EncoderKind::Student && head.is_file() {
        log::info!("loading enhancement head from {}", head.display());
        store.extend(checkpoint::load_store(&head)?);
    }
    Ok(bench.upstream(&name, enc, &store)?)
}

fn scenario_spec(cfg: &RunConfig, tag: &str) -> CliResult<ScenarioSpec> {
    let action = Action::from_scenario_tag(tag)
        .ok_or_else(|| CliError::Usage(format!("unknown scenario `{tag}`; expected c, n, r or n+r")))?;
    Ok(cfg
        .eval
        .scenarios
        .iter()
        .find(|s| s.condition == action)
        .copied()
        .unwrap_or_else(|| ScenarioSpec::new(action, ScenarioSpec::TEST_SNR_DB)))
}

fn parse_task(task: &str) -> CliResult<Task> {
    Task::ALL
        .into_iter()
        .find(|t| t.as_str() == task)
        .ok_or_else(|| CliError::Usage(format!("unknown task `{task}`; expected kws, sid, asv or se")))
}

pub fn synth(args: &ConfigArgs, seed: Option<u64>, out: &Path) -> CliResult<()> {
    let cfg = load_config(args, seed)?;
    for split in [Split::Train, Split::Test] {
        let corpus = Corpus::generate(&cfg.data, split, Parallelism::Rayon)?;
        let manifest = write_corpus(&out.join(split.as_str()), &corpus)?;
        log::info!("{} clips -> {}", corpus.len(), manifest.display());
    }
    write_resolved(out, &cfg)
}

pub fn pretrain_teacher(args: &ConfigArgs, seed: Option<u64>, data: &Path, out: &Path) -> CliResult<()> {
    let cfg = load_config(args, seed)?;
    let bench = Bench::from_items(cfg, load_split(data, Split::Train)?, load_split(data, Split::Test)?, Parallelism::Rayon);
    if bench.train.iter().any(|i| i.frame_labels.is_empty()) {
        return Err(Error::data(data.display().to_string(), "training items lack frame labels").into());
    }
    let (teacher, report) = bench.pretrain_teacher()?;
    checkpoint::save_store(&out.join(TEACHER_FILE), &teacher.params, DType::F64)?;
    write_json(&out.join("pretrain.json"), &report)?;
    write_resolved(out, &bench.cfg)?;
    println!(
        "teacher: {} frozen parameters, held-out frame accuracy {:.3}",
        param_count(&teacher.params).total_frozen,
        report.heldout_accuracy
    );
    Ok(())
}

fn latest_checkpoint(out: &TrainOutput) -> Option<PathBuf> {
    let dir = out.dir.join("checkpoints");
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in std::fs::read_dir(dir).ok()?.flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(step) = name
            .strip_prefix("step-")
            .and_then(|s| s.strip_suffix(".rdkd"))
            .and_then(|s| s.parse::<u64>().ok())
        else {
            continue;
        };
        if best.as_ref().is_none_or(|(b, _)| step > *b) {
            best = Some((step, entry.path()));
        }
    }
    best.map(|(_, p)| p)
}

pub fn distill(
    args: &ConfigArgs,
    seed: Option<u64>,
    data: &Path,
    teacher: &Path,
    out: &Path,
    resume: bool,
    plain: bool,
) -> CliResult<()> {
    let mut cfg = load_config(args, seed)?;
    if plain {
        cfg.distill.contaminate = false;
        cfg.enhancement.kind = EnhancementKind::None;
    }
    let teacher = load_teacher(&cfg, teacher)?;
    let bench = Bench::from_items(cfg, load_split(data, Split::Train)?, Vec::new(), Parallelism::Rayon);
    let mut trainer: Trainer = bench.trainer(bench.distill_config(), &teacher)?;
    let output = TrainOutput::new(out);
    if resume {
        let from = latest_checkpoint(&output)
            .or_else(|| Some(output.state_path()).filter(|p| p.exists()))
            .ok_or_else(|| Error::State(format!("nothing to resume in {}", out.display())))?;
        trainer.load_state(&from)?;
        log::info!("resuming from {} at step {}", from.display(), trainer.step());
    }
    write_resolved(out, &bench.cfg)?;
    let records = trainer.run(&output)?;
    let counts = param_count(&trainer.params);
    match records.last() {
        Some(r) => println!(
            "step {}: distill {:.4} enh {:.4} total {:.4}; {} trainable parameters -> {}",
            r.step,
            r.distill,
            r.enh,
            r.total,
            counts.total_trainable,
            output.student_path().display()
        ),
        None => println!("already at step {}", trainer.step()),
    }
    Ok(())
}

pub fn contaminate(args: &ConfigArgs, seed: Option<u64>, data: &Path, scenario: &str, out: &Path) -> CliResult<()> {
    let cfg = load_config(args, seed)?;
    let spec = scenario_spec(&cfg, scenario)?;
    let bench = Bench::from_items(cfg, Vec::new(), load_split(data, Split::Test)?, Parallelism::Rayon);
    let test = bench.test_set(&bench.test)?;
    let tspec = test.spec_for(&spec)?;
    let mut rows = Vec::with_capacity(bench.test.len());
    for (i, item) in bench.test.iter().enumerate() {
        let view = test.view(&tspec, i)?;
        let rel = format!("{}.wav", item.id);
        wav::write(&out.join(&rel), &view.clip)?;
        write_json(&out.join(format!("{}.json", item.id)), &view.sidecar(format!("test/{rel}")))?;
        rows.push(ManifestRow {
            path: rel,
            speaker_id: item.speaker,
            keyword_id: item.keyword,
            duration_s: view.clip.duration_s(),
        });
    }
    write_manifest(&out.join("manifest.csv"), &rows)?;
    write_resolved(out, &bench.cfg)?;
    println!("{} clips under scenario {} -> {}", rows.len(), spec.tag(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    args: &ConfigArgs,
    seed: Option<u64>,
    data: &Path,
    upstream: &Path,
    encoder: EncoderKind,
    name: Option<String>,
    out: &Path,
    disentangle: bool,
) -> CliResult<()> {
    let cfg = load_config(args, seed)?;
    let bench = Bench::from_items(cfg, load_split(data, Split::Train)?, load_split(data, Split::Test)?, Parallelism::Rayon);
    let up = load_upstream(&bench, upstream, encoder, name)?;
    let report = bench.evaluate(&up)?;
    report.write(&out.join("report.json"), Some(&out.join("report.csv")))?;
    if disentangle {
        let results = [ScenarioSpec::new(Action::None, [0.0, 0.0]), ScenarioSpec::new(Action::Noise, [0.0, 0.0])]
            .iter()
            .map(|s| bench.disentanglement(&up, s))
            .collect::<Result<Vec<_>, _>>()?;
        for d in &results {
            println!("silhouette {} ({}): {:.4}", d.model, d.scenario, d.silhouette);
        }
        write_json(&out.join("disentanglement.json"), &results)?;
    }
    write_resolved(out, &bench.cfg)?;
    for (tag, tasks) in &report.scenarios {
        for (task, metrics) in tasks {
            for (metric, v) in metrics {
                println!("{tag}\t{task}\t{metric}\t{v:.4}");
            }
        }
    }
    Ok(())
}

pub fn score(table: &Path, anchors: &Path, upstream: &str) -> CliResult<()> {
    let t = ScoreTable::from_csv(table, anchors)?;
    let s = score_of(&t, upstream)?;
    if s.out_of_range {
        log::info!("score of `{upstream}` lies outside [0, 1000]");
    }
    println!("{:.1}", s.value);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn probe(
    args: &ConfigArgs,
    seed: Option<u64>,
    data: &Path,
    upstream: &Path,
    encoder: EncoderKind,
    task: &str,
    scenario: &str,
    out: Option<&Path>,
) -> CliResult<()> {
    let cfg = load_config(args, seed)?;
    let task = parse_task(task)?;
    let spec = scenario_spec(&cfg, scenario)?;
    let bench = Bench::from_items(cfg, load_split(data, Split::Train)?, load_split(data, Split::Test)?, Parallelism::Rayon);
    let up = load_upstream(&bench, upstream, encoder, None)?;
    let report = bench.evaluate_on(&up, &[task], &[spec])?;
    let metrics = report
        .scenarios
        .get(spec.tag())
        .and_then(|t| t.get(task.as_str()))
        .ok_or_else(|| Error::metric(format!("no {} result under {}", task.as_str(), spec.tag())))?;
    for (metric, v) in metrics {
        println!("{}\t{}\t{metric}\t{v:.4}", spec.tag(), task.as_str());
    }
    if let Some(dir) = out {
        report.write(&dir.join("probe.json"), None)?;
        write_resolved(dir, &bench.cfg)?;
    }
    Ok(())
}

const SCENARIO_ORDER: [&str; 4] = ["c", "n", "r", "n+r"];

fn scenario_rank(tag: &str) -> usize {
    SCENARIO_ORDER.iter().position(|t| *t == tag).unwrap_or(SCENARIO_ORDER.len())
}

pub fn report(inputs: &[PathBuf], ablation_path: Option<&Path>, out: &Path) -> CliResult<()> {
    let reports = inputs.iter().map(|p| RobustnessReport::read(p)).collect::<Result<Vec<_>, _>>()?;
    let mut csv = String::new();
    for (i, r) in reports.iter().enumerate() {
        let text = r.to_csv()?;
        let body = if i == 0 { text.as_str() } else { text.split_once('\n').map_or("", |x| x.1) };
        csv.push_str(body);
    }
    write_atomic(&out.join("reports.csv"), csv.as_bytes())?;

    let mut scenarios: Vec<String> = reports.iter().flat_map(|r| r.scenarios.keys().cloned()).collect::<BTreeSet<_>>().into_iter().collect();
    scenarios.sort_by_key(|t| (scenario_rank(t), t.clone()));
    let pairs: BTreeSet<(String, String)> = reports
        .iter()
        .flat_map(|r| r.scenarios.values())
        .flat_map(|tasks| tasks.iter().flat_map(|(t, m)| m.keys().map(move |k| (t.clone(), k.clone()))))
        .collect();
    let mut written = 0;
    for (task, metric) in &pairs {
        let series: Vec<(String, Vec<Option<f64>>)> = reports
            .iter()
            .map(|r| {
                let vals = scenarios
                    .iter()
                    .map(|s| r.scenarios.get(s).and_then(|t| t.get(task)).and_then(|m| m.get(metric)).copied())
                    .collect();
                (r.model.clone(), vals)
            })
            .collect();
        let svg = grouped_bars(&format!("{task} {metric} per scenario"), metric, &scenarios, &series);
        write_atomic(&out.join(format!("{task}_{metric}.svg")), svg.as_bytes())?;
        written += 1;
    }
    for (kind, pick) in [("noise_type", 0usize), ("room_class", 1)] {
        let rows = |r: &RobustnessReport| if pick == 0 { r.breakdowns.noise_type.clone() } else { r.breakdowns.room_class.clone() };
        let mut groups: Vec<(String, String)> = Vec::new();
        for r in &reports {
            for row in rows(r) {
                let key = (row.scenario.clone(), row.group.clone());
                if !groups.contains(&key) {
                    groups.push(key);
                }
            }
        }
        if groups.is_empty() {
            continue;
        }
        let labels: Vec<String> = groups.iter().map(|(s, g)| format!("{s}:{g}")).collect();
        let series = reports
            .iter()
            .map(|r| {
                let rs = rows(r);
                let vals = groups
                    .iter()
                    .map(|(s, g)| rs.iter().find(|x| &x.scenario == s && &x.group == g).map(|x| x.kws_accuracy))
                    .collect();
                (r.model.clone(), vals)
            })
            .collect::<Vec<_>>();
        let svg = grouped_bars(&format!("kws accuracy by {kind}"), "accuracy", &labels, &series);
        write_atomic(&out.join(format!("breakdown_{kind}.svg")), svg.as_bytes())?;
        written += 1;
    }
    if let Some(p) = ablation_path {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let ab: AblationReport = serde_json::from_str(&text).map_err(|e| Error::format(p.display().to_string(), e.to_string()))?;
        ab.validate()?;
        let labels: Vec<String> = ab
            .runs
            .iter()
            .map(|r| format!("{}-{}", if r.head == EnhancementKind::Mask { "mask" } else { "waveform" }, r.loss.as_str()))
            .collect();
        let series = vec![("SI-SDR gain (dB)".to_string(), ab.runs.iter().map(|r| Some(r.si_sdr_delta)).collect())];
        let svg = grouped_bars("enhancement head ablation", "dB", &labels, &series);
        write_atomic(&out.join("ablation.svg"), svg.as_bytes())?;
        written += 1;
    }
    println!("{} reports -> {} charts in {}", reports.len(), written, out.display());
    Ok(())
}

pub fn ablate(args: &ConfigArgs, seed: Option<u64>, data: &Path, teacher: &Path, steps: u64, out: &Path) -> CliResult<()> {
    if steps == 0 {
        return Err(CliError::Usage("--steps must be positive".into()));
    }
    let cfg = load_config(args, seed)?;
    let teacher = load_teacher(&cfg, teacher)?;
    let bench = Bench::from_items(cfg, load_split(data, Split::Train)?, load_split(data, Split::Test)?, Parallelism::Rayon);
    write_resolved(out, &bench.cfg)?;
    let report = ablation(&bench, &teacher, steps, out)?;
    for r in &report.runs {
        println!(
            "{:?}\t{}\tsi_sdr_delta {:.3}\tkws {:.3}",
            r.head,
            r.loss.as_str(),
            r.si_sdr_delta,
            r.kws_accuracy
        );
    }
    Ok(())
}
