use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use procnet::bench::{
    benchmark, generate_dataset, read_dataset, read_sequence, source_masks, write_dataset, BenchmarkConfig,
    DistanceBin, MaskSource, OcclusionBin, SequenceSample,
};
use procnet::loss::{run_config_grid, train, write_loss_csv};
use procnet::mask::LabelMask;
use procnet::net::{ParamStore, ProcNet};
use procnet::render::render_mask;
use procnet::search::{track, write_trajectory};
use procnet::selfcheck::{self, SelfCheckOptions};
use procnet::{Error, Result};

use crate::config::{MaskSourceKind, RunConfig};

/// Output of a command: text for stdout, and whether every check passed.
pub struct Outcome {
    pub text: String,
    pub ok: bool,
}

impl Outcome {
    fn ok(text: String) -> Self {
        Outcome { text, ok: true }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn load_net(cfg: &RunConfig, weights: &Path) -> Result<ProcNet> {
    let mut net = ProcNet::new(cfg.network.clone(), cfg.seed)?;
    net.params_mut().assign_from(&ParamStore::load(weights)?)?;
    Ok(net)
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let spec = cfg.dataset_spec()?;
    let samples = generate_dataset(&spec)?;
    write_dataset(out, &samples)?;
    let mut text = String::new();
    let frames = samples.first().map_or(0, SequenceSample::len);
    let _ = writeln!(text, "wrote {} sequences of {frames} frames to {}", samples.len(), out.display());
    for d in DistanceBin::ALL {
        let row: Vec<String> = OcclusionBin::ALL
            .iter()
            .map(|&o| {
                let n = samples.iter().filter(|s| s.distance_bin == d && s.occlusion_bin == o).count();
                format!("{}={n}", o.name())
            })
            .collect();
        let _ = writeln!(text, "  {:<7} {}", d.name(), row.join(" "));
    }
    let mean = samples.iter().map(SequenceSample::mean_occlusion).sum::<f64>() / samples.len().max(1) as f64;
    let warned = samples.iter().filter(|s| s.occlusion_warning).count();
    let _ = write!(text, "mean occlusion {mean:.1}%, {warned} sequences missed their occlusion target");
    Ok(Outcome::ok(text))
}

pub fn train_cmd(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<Outcome> {
    let data = read_dataset(dataset)?;
    let mut net = ProcNet::new(cfg.network.clone(), cfg.seed)?;
    let report = train(&mut net, &data, &cfg.train_options())?;
    create_dir(out)?;
    net.params().save(&out.join("weights.bin"))?;
    fs::write(out.join("loss.csv"), write_loss_csv(&report))?;
    fs::write(out.join("config.ini"), cfg.to_text())?;
    let last = report.epochs.last().map_or(report.initial.total, |e| e.loss.total);
    Ok(Outcome::ok(format!(
        "trained {} epochs on {} sequences: total loss {:.4} -> {:.4} ({:.1}% lower)\nweights: {}",
        report.epochs.len(),
        data.len(),
        report.initial.total,
        last,
        100.0 * report.reduction(),
        out.join("weights.bin").display()
    )))
}

pub fn grid(cfg: &RunConfig, dataset: &Path, heldout: Option<&Path>, out: &Path) -> Result<Outcome> {
    let mut data = read_dataset(dataset)?;
    let held = match heldout {
        Some(dir) => read_dataset(dir)?,
        None => {
            let n = ((data.len() as f64 * cfg.grid.heldout_fraction).ceil() as usize).max(1);
            if n >= data.len() {
                return Err(Error::InvalidConfiguration(format!(
                    "cannot hold out {n} of {} sequences; give a larger dataset or --heldout",
                    data.len()
                )));
            }
            data.split_off(data.len() - n)
        }
    };
    let configs = cfg.grid.configs(&cfg.network)?;
    let mut sums = vec![(0.0, 0.0); configs.len()];
    for &seed in &cfg.grid.seeds {
        let opts = procnet::loss::TrainOptions { seed, ..cfg.train_options() };
        for (i, row) in run_config_grid(&configs, &data, &held, &opts)?.iter().enumerate() {
            sums[i].0 += row.dice;
            sums[i].1 += row.focal;
        }
    }
    let k = cfg.grid.seeds.len() as f64;
    let mut csv = String::from("layers,cell,axonal_delay,prediction_loss,dice,focal,avg\n");
    let mut table = format!(
        "{:<7}{:<7}{:<7}{:<7}{:>9}{:>9}{:>9}\n",
        "Layers", "Cell", "Delay", "Pred", "Dice", "Focal", "Avg"
    );
    for (c, (d, f)) in configs.iter().zip(&sums) {
        let (dice, focal) = (d / k, f / k);
        let avg = (dice + focal) / 2.0;
        let (l, delay, pred) = (c.num_layers(), u8::from(c.axonal_delay), u8::from(c.use_prediction_loss));
        let _ = writeln!(csv, "{l},{},{delay},{pred},{dice:.6},{focal:.6},{avg:.6}", c.cell);
        let _ = writeln!(table, "{l:<7}{:<7}{delay:<7}{pred:<7}{dice:>9.4}{focal:>9.4}{avg:>9.4}", c.cell.to_string());
    }
    create_dir(out)?;
    fs::write(out.join("grid.csv"), &csv)?;
    fs::write(out.join("grid.txt"), &table)?;
    Ok(Outcome::ok(table.trim_end().to_string()))
}

fn masks_for(cfg: &RunConfig, sample: &SequenceSample, weights: Option<&Path>) -> Result<Vec<LabelMask>> {
    match cfg.benchmark.mask_source {
        MaskSourceKind::CorruptedTruth => {
            let mode = cfg.benchmark.corruption(cfg.seed)?;
            source_masks(sample, MaskSource::CorruptedTruth(&mode))
        }
        MaskSourceKind::Procnet => {
            let path = weights.ok_or_else(|| {
                Error::InvalidConfiguration("mask source 'procnet' needs --weights".into())
            })?;
            let net = load_net(cfg, path)?;
            source_masks(sample, MaskSource::Procnet(&net))
        }
    }
}

/// Overlay of a tracker input mask and the estimate's silhouette:
/// 0 neither, 1 input only, 2 estimate only, 3 both.
fn overlay(input: &LabelMask, estimate: &LabelMask) -> Vec<u8> {
    input.data().iter().zip(estimate.data()).map(|(&a, &b)| u8::from(a != 0) + 2 * u8::from(b != 0)).collect()
}

pub fn track_cmd(cfg: &RunConfig, sequence: &Path, weights: Option<&Path>, out: &Path) -> Result<Outcome> {
    let sample = read_sequence(sequence)?;
    let scene = cfg.scene.build()?;
    if (scene.camera.height, scene.camera.width) != (sample.height(), sample.width()) {
        return Err(Error::InvalidConfiguration(format!(
            "[scene] image {}x{} does not match the {}x{} sequence",
            scene.camera.height,
            scene.camera.width,
            sample.height(),
            sample.width()
        )));
    }
    let masks = masks_for(cfg, &sample, weights)?;
    let init = cfg.benchmark.init_from_truth.then(|| sample.poses[0].clone());
    let est = track(&masks, &scene.model, &scene.camera, init.as_ref(), sample.dt, &cfg.search)?;
    create_dir(out)?;
    let mut lines = Vec::new();
    write_trajectory(&mut lines, &est)?;
    fs::write(out.join("trajectory.jsonl"), lines)?;
    for (k, (m, e)) in masks.iter().zip(&est).enumerate() {
        let rendered = render_mask(&scene.model, &scene.camera, &e.pose)?;
        procnet::pgm::write(&out.join(format!("overlay_{k:04}.pgm")), m.width(), m.height(), &overlay(m, &rendered))?;
    }
    let converged = est.iter().filter(|e| e.converged).count();
    let mean = est.iter().map(|e| e.score).sum::<f64>() / est.len() as f64;
    Ok(Outcome::ok(format!(
        "tracked {} frames ({converged} converged), mean overlap {mean:.4}\ntrajectory: {}",
        est.len(),
        out.join("trajectory.jsonl").display()
    )))
}

pub fn benchmark_cmd(cfg: &RunConfig, dataset: &Path, weights: Option<&Path>, out: &Path) -> Result<Outcome> {
    let data = read_dataset(dataset)?;
    let scene = cfg.scene.build()?;
    let config =
        BenchmarkConfig { search: cfg.search.clone(), init_from_truth: cfg.benchmark.init_from_truth, bins: cfg.dataset.bins };
    let mode = cfg.benchmark.corruption(cfg.seed)?;
    let net = match cfg.benchmark.mask_source {
        MaskSourceKind::Procnet => Some(load_net(
            cfg,
            weights.ok_or_else(|| Error::InvalidConfiguration("mask source 'procnet' needs --weights".into()))?,
        )?),
        MaskSourceKind::CorruptedTruth => None,
    };
    let source = match &net {
        Some(n) => MaskSource::Procnet(n),
        None => MaskSource::CorruptedTruth(&mode),
    };
    let report = benchmark(&data, &scene.model, &scene.camera, source, &config)?;
    create_dir(out)?;
    let table = report.to_table();
    fs::write(out.join("results.csv"), report.to_csv())?;
    fs::write(out.join("table.txt"), &table)?;
    Ok(Outcome::ok(table.trim_end().to_string()))
}

pub fn selfcheck_cmd(perturbation: f32) -> Result<Outcome> {
    let report = selfcheck::run(&SelfCheckOptions { gradient_perturbation: perturbation })?;
    let mut text = report.to_string();
    if !report.passed() {
        let names: Vec<&str> = report.failures().iter().map(|c| c.name.as_str()).collect();
        let _ = write!(text, "\nfailed: {}", names.join(", "));
    }
    Ok(Outcome { text, ok: report.passed() })
}
