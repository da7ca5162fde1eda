//! Run configuration: an INI-style file of `key = value` lines grouped in
//! `[section]`s. Every key has a default; unknown sections or keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use procnet::bench::{Corruption, DatasetSpec, DistanceBins, SceneConfig};
use procnet::loss::{LossWeights, TrainOptions};
use procnet::net::{CellKind, NetworkConfig};
use procnet::render::ArticulatedModel;
use procnet::search::SearchConfig;
use procnet::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenePreset {
    MovingRectangle,
    Forearm,
}

impl FromStr for ScenePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moving-rectangle" => Ok(ScenePreset::MovingRectangle),
            "forearm" => Ok(ScenePreset::Forearm),
            other => Err(Error::InvalidConfiguration(format!("unknown scene preset '{other}'"))),
        }
    }
}

impl ScenePreset {
    fn name(self) -> &'static str {
        match self {
            ScenePreset::MovingRectangle => "moving-rectangle",
            ScenePreset::Forearm => "forearm",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskSourceKind {
    Procnet,
    CorruptedTruth,
}

impl FromStr for MaskSourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "procnet" => Ok(MaskSourceKind::Procnet),
            "corrupted-truth" => Ok(MaskSourceKind::CorruptedTruth),
            other => Err(Error::InvalidConfiguration(format!("unknown mask source '{other}'"))),
        }
    }
}

impl MaskSourceKind {
    pub fn name(self) -> &'static str {
        match self {
            MaskSourceKind::Procnet => "procnet",
            MaskSourceKind::CorruptedTruth => "corrupted-truth",
        }
    }
}

/// Scene settings; unset fields take the preset's value.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSettings {
    pub preset: ScenePreset,
    pub image: usize,
    /// articulated model file replacing the preset geometry
    pub model: Option<PathBuf>,
    pub distance: Option<f64>,
    pub length: Option<usize>,
    pub dt: Option<f64>,
    pub depth_jitter: Option<f64>,
    pub lateral_extent: Option<f64>,
    pub distractors: Option<usize>,
    pub noise: Option<f64>,
    pub background: Option<f64>,
    pub min_object_pixels: Option<usize>,
}

impl Default for SceneSettings {
    fn default() -> Self {
        SceneSettings {
            preset: ScenePreset::MovingRectangle,
            image: 64,
            model: None,
            distance: None,
            length: None,
            dt: None,
            depth_jitter: None,
            lateral_extent: None,
            distractors: None,
            noise: None,
            background: None,
            min_object_pixels: None,
        }
    }
}

impl SceneSettings {
    pub fn build(&self) -> Result<SceneConfig> {
        let mut s = match self.preset {
            ScenePreset::MovingRectangle => SceneConfig::moving_rectangle(self.image),
            ScenePreset::Forearm => SceneConfig::forearm(self.image, self.distance.unwrap_or(2.0)),
        };
        if let Some(path) = &self.model {
            s.model = ArticulatedModel::load(path)?;
        }
        if let Some(v) = self.distance {
            s.distance = v;
        }
        if let Some(v) = self.length {
            s.length = v;
        }
        if let Some(v) = self.dt {
            s.dt = v;
        }
        if let Some(v) = self.depth_jitter {
            s.depth_jitter = v;
        }
        if let Some(v) = self.lateral_extent {
            s.lateral_extent = v;
        }
        if let Some(v) = self.distractors {
            s.distractors = v;
        }
        if let Some(v) = self.noise {
            s.noise = v;
        }
        if let Some(v) = self.background {
            s.background = v;
        }
        if let Some(v) = self.min_object_pixels {
            s.min_object_pixels = v;
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSettings {
    pub sequences: usize,
    /// nominal distances cycled over sequences; empty keeps the scene distance
    pub distances: Vec<f64>,
    /// occlusion targets (%) cycled over sequences
    pub occlusion_targets: Vec<f64>,
    pub bins: DistanceBins,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        DatasetSettings {
            sequences: 20,
            distances: Vec::new(),
            occlusion_targets: vec![0.0],
            bins: DistanceBins::default(),
        }
    }
}

/// Configurations trained by `grid`: the product of every listed value.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSettings {
    pub layers: Vec<usize>,
    pub cells: Vec<CellKind>,
    pub delays: Vec<bool>,
    pub prediction_loss: Vec<bool>,
    /// layer widths; an L-layer network uses the first L
    pub channels: Vec<usize>,
    /// training seeds; held-out losses are averaged over them
    pub seeds: Vec<u64>,
    /// fraction of the dataset held out when no held-out set is given
    pub heldout_fraction: f64,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings {
            layers: vec![3, 4],
            cells: CellKind::ALL.to_vec(),
            delays: vec![false, true],
            prediction_loss: vec![false, true],
            channels: vec![1, 16, 32, 64],
            seeds: vec![1],
            heldout_fraction: 0.2,
        }
    }
}

impl GridSettings {
    pub fn configs(&self, base: &NetworkConfig) -> Result<Vec<NetworkConfig>> {
        let mut out = Vec::new();
        for &l in &self.layers {
            if l > self.channels.len() {
                return Err(Error::InvalidConfiguration(format!(
                    "grid asks for {l} layers but only {} channel widths are given",
                    self.channels.len()
                )));
            }
            for &cell in &self.cells {
                for &axonal_delay in &self.delays {
                    for &use_prediction_loss in &self.prediction_loss {
                        out.push(NetworkConfig {
                            channels: self.channels[..l].to_vec(),
                            cell,
                            axonal_delay,
                            use_prediction_loss,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkSettings {
    pub mask_source: MaskSourceKind,
    pub init_from_truth: bool,
    /// `erase-occluded` or `salt`
    pub corruption: String,
    pub salt_fraction: f64,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        BenchmarkSettings {
            mask_source: MaskSourceKind::CorruptedTruth,
            init_from_truth: true,
            corruption: "erase-occluded".into(),
            salt_fraction: 0.02,
        }
    }
}

impl BenchmarkSettings {
    pub fn corruption(&self, seed: u64) -> Result<Corruption> {
        match self.corruption.as_str() {
            "erase-occluded" => Ok(Corruption::EraseOccluded),
            "salt" => Ok(Corruption::EraseSaltNoise { fraction: self.salt_fraction, seed }),
            other => Err(Error::InvalidConfiguration(format!("unknown corruption '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub heldout: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub sequence: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    /// worker threads; 0 leaves the choice to `PROCNET_THREADS` or rayon
    pub threads: usize,
    pub network: NetworkConfig,
    pub loss: LossWeights,
    pub train: TrainOptions,
    pub search: SearchConfig,
    pub scene: SceneSettings,
    pub dataset: DatasetSettings,
    pub grid: GridSettings,
    pub benchmark: BenchmarkSettings,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            threads: 0,
            network: NetworkConfig::default(),
            loss: LossWeights::default(),
            train: TrainOptions::default(),
            search: SearchConfig::default(),
            scene: SceneSettings::default(),
            dataset: DatasetSettings::default(),
            grid: GridSettings::default(),
            benchmark: BenchmarkSettings::default(),
            paths: Paths::default(),
        }
    }
}

fn bad(section: &str, key: &str, value: &str, what: &str) -> Error {
    Error::InvalidConfiguration(format!("[{section}] {key} = '{value}': expected {what}"))
}

fn num<T: FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(section, key, v, "a number"))
}

/// Empty means "keep the preset's value".
fn opt_num<T: FromStr>(section: &str, key: &str, v: &str) -> Result<Option<T>> {
    if v.is_empty() {
        Ok(None)
    } else {
        num(section, key, v).map(Some)
    }
}

fn flag(section: &str, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(section, key, v, "true or false")),
    }
}

fn list<T: FromStr>(section: &str, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| bad(section, key, v, "a comma-separated list")))
        .collect()
}

fn flags(section: &str, key: &str, v: &str) -> Result<Vec<bool>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| flag(section, key, s)).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut cfg = RunConfig::default();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("run");
            for (key, value) in props.iter() {
                cfg.set(section, key, value.trim())?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one key, as if it appeared in `[section]`.
    pub fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        let (s, k) = (section, key);
        match (s, k) {
            ("run", "seed") => self.seed = num(s, k, v)?,
            ("run", "threads") => self.threads = num(s, k, v)?,

            ("network", "channels") => self.network.channels = list(s, k, v)?,
            ("network", "cell") => self.network.cell = v.parse()?,
            ("network", "axonal_delay") => self.network.axonal_delay = flag(s, k, v)?,
            ("network", "use_prediction_loss") => self.network.use_prediction_loss = flag(s, k, v)?,
            ("network", "conv_kernel") => self.network.conv_kernel = num(s, k, v)?,
            ("network", "prediction_kernel") => self.network.prediction_kernel = num(s, k, v)?,
            ("network", "hgru_kernel") => self.network.hgru_kernel = num(s, k, v)?,
            ("network", "num_classes") => self.network.num_classes = num(s, k, v)?,
            ("network", "decoder_width") => self.network.decoder_width = num(s, k, v)?,

            ("loss", "w_dice") => self.loss.dice = num(s, k, v)?,
            ("loss", "w_focal") => self.loss.focal = num(s, k, v)?,
            ("loss", "layer_weights") => self.loss.layer = list(s, k, v)?,
            ("loss", "focal_gamma") => self.loss.focal_gamma = num(s, k, v)?,
            ("loss", "focal_alpha") => self.loss.focal_alpha = num(s, k, v)?,
            ("loss", "dice_eps") => self.loss.dice_eps = num(s, k, v)?,

            ("train", "epochs") => self.train.epochs = num(s, k, v)?,
            ("train", "learning_rate") => self.train.learning_rate = num(s, k, v)?,
            ("train", "beta1") => self.train.beta1 = num(s, k, v)?,
            ("train", "beta2") => self.train.beta2 = num(s, k, v)?,
            ("train", "adam_eps") => self.train.adam_eps = num(s, k, v)?,
            ("train", "bptt") => self.train.bptt = num(s, k, v)?,

            ("search", "delta_pos") => self.search.delta_pos = num(s, k, v)?,
            ("search", "delta_ang") => self.search.delta_ang = num(s, k, v)?,
            ("search", "delta_joint") => self.search.delta_joint = num(s, k, v)?,
            ("search", "max_iterations") => self.search.max_iterations = num(s, k, v)?,
            ("search", "tolerance") => self.search.tolerance = num(s, k, v)?,
            ("search", "shrink") => self.search.shrink = num(s, k, v)?,
            ("search", "max_backtracks") => self.search.max_backtracks = num(s, k, v)?,
            ("search", "initial_step") => self.search.initial_step = num(s, k, v)?,
            ("search", "max_step") => self.search.max_step = num(s, k, v)?,
            ("search", "search_joints") => self.search.search_joints = flag(s, k, v)?,
            ("search", "parallel") => self.search.parallel = flag(s, k, v)?,
            ("search", "grid_depths") => self.search.grid.depths = list(s, k, v)?,
            ("search", "grid_lateral") => self.search.grid.lateral = num(s, k, v)?,
            ("search", "grid_joint_values") => self.search.grid.joint_values = list(s, k, v)?,
            ("search", "grid_cube_rotations") => self.search.grid.cube_rotations = flag(s, k, v)?,
            ("search", "grid_top_k") => self.search.grid.top_k = num(s, k, v)?,

            ("scene", "preset") => self.scene.preset = v.parse()?,
            ("scene", "image") => self.scene.image = num(s, k, v)?,
            ("scene", "model") => self.scene.model = path(v),
            ("scene", "distance") => self.scene.distance = opt_num(s, k, v)?,
            ("scene", "length") => self.scene.length = opt_num(s, k, v)?,
            ("scene", "dt") => self.scene.dt = opt_num(s, k, v)?,
            ("scene", "depth_jitter") => self.scene.depth_jitter = opt_num(s, k, v)?,
            ("scene", "lateral_extent") => self.scene.lateral_extent = opt_num(s, k, v)?,
            ("scene", "distractors") => self.scene.distractors = opt_num(s, k, v)?,
            ("scene", "noise") => self.scene.noise = opt_num(s, k, v)?,
            ("scene", "background") => self.scene.background = opt_num(s, k, v)?,
            ("scene", "min_object_pixels") => self.scene.min_object_pixels = opt_num(s, k, v)?,

            ("dataset", "sequences") => self.dataset.sequences = num(s, k, v)?,
            ("dataset", "distances") => self.dataset.distances = list(s, k, v)?,
            ("dataset", "occlusion_targets") => self.dataset.occlusion_targets = list(s, k, v)?,
            ("dataset", "short_max") => self.dataset.bins.short_max = num(s, k, v)?,
            ("dataset", "medium_max") => self.dataset.bins.medium_max = num(s, k, v)?,
            ("dataset", "large_max") => self.dataset.bins.large_max = num(s, k, v)?,

            ("grid", "layers") => self.grid.layers = list(s, k, v)?,
            ("grid", "cells") => self.grid.cells = list(s, k, v)?,
            ("grid", "delays") => self.grid.delays = flags(s, k, v)?,
            ("grid", "prediction_loss") => self.grid.prediction_loss = flags(s, k, v)?,
            ("grid", "channels") => self.grid.channels = list(s, k, v)?,
            ("grid", "seeds") => self.grid.seeds = list(s, k, v)?,
            ("grid", "heldout_fraction") => self.grid.heldout_fraction = num(s, k, v)?,

            ("benchmark", "mask_source") => self.benchmark.mask_source = v.parse()?,
            ("benchmark", "init_from_truth") => self.benchmark.init_from_truth = flag(s, k, v)?,
            ("benchmark", "corruption") => self.benchmark.corruption = v.to_string(),
            ("benchmark", "salt_fraction") => self.benchmark.salt_fraction = num(s, k, v)?,

            ("paths", "dataset") => self.paths.dataset = path(v),
            ("paths", "heldout") => self.paths.heldout = path(v),
            ("paths", "weights") => self.paths.weights = path(v),
            ("paths", "sequence") => self.paths.sequence = path(v),
            ("paths", "out") => self.paths.out = path(v),

            _ => return Err(Error::InvalidConfiguration(format!("unknown key '{k}' in section [{s}]"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.loss.validate()?;
        self.search.validate()?;
        self.benchmark.corruption(0)?;
        if self.train.bptt == 0 {
            return Err(Error::InvalidConfiguration("[train] bptt must be positive".into()));
        }
        if !(self.grid.heldout_fraction > 0.0 && self.grid.heldout_fraction < 1.0) {
            return Err(Error::InvalidConfiguration("[grid] heldout_fraction must be in (0, 1)".into()));
        }
        if self.grid.seeds.is_empty() {
            return Err(Error::InvalidConfiguration("[grid] seeds must not be empty".into()));
        }
        Ok(())
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions { seed: self.seed, weights: self.loss.clone(), ..self.train.clone() }
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        Ok(DatasetSpec {
            scene: self.scene.build()?,
            sequences: self.dataset.sequences,
            distances: self.dataset.distances.clone(),
            occlusion_targets: self.dataset.occlusion_targets.clone(),
            bins: self.dataset.bins,
            seed: self.seed,
        })
    }

    /// Every key with its current value; parsing the output reproduces `self`.
    pub fn to_text(&self) -> String {
        fn opt<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map(ToString::to_string).unwrap_or_default()
        }
        fn opt_path(v: &Option<PathBuf>) -> String {
            v.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
        }
        let cell = |c: CellKind| match c {
            CellKind::Conv => "conv",
            CellKind::Hgru => "hgru",
            CellKind::ConvLstm => "lstm",
        };
        let n = &self.network;
        let l = &self.loss;
        let t = &self.train;
        let s = &self.search;
        let sc = &self.scene;
        let d = &self.dataset;
        let g = &self.grid;
        let b = &self.benchmark;
        let p = &self.paths;
        let mut out = String::new();
        let _ = writeln!(out, "[run]\nseed = {}\nthreads = {}\n", self.seed, self.threads);
        let _ = writeln!(
            out,
            "[network]\nchannels = {}\ncell = {}\naxonal_delay = {}\nuse_prediction_loss = {}\nconv_kernel = {}\n\
             prediction_kernel = {}\nhgru_kernel = {}\nnum_classes = {}\ndecoder_width = {}\n",
            join(&n.channels),
            cell(n.cell),
            n.axonal_delay,
            n.use_prediction_loss,
            n.conv_kernel,
            n.prediction_kernel,
            n.hgru_kernel,
            n.num_classes,
            n.decoder_width
        );
        let _ = writeln!(
            out,
            "[loss]\nw_dice = {}\nw_focal = {}\nlayer_weights = {}\nfocal_gamma = {}\nfocal_alpha = {}\ndice_eps = {}\n",
            l.dice,
            l.focal,
            join(&l.layer),
            l.focal_gamma,
            l.focal_alpha,
            l.dice_eps
        );
        let _ = writeln!(
            out,
            "[train]\nepochs = {}\nlearning_rate = {}\nbeta1 = {}\nbeta2 = {}\nadam_eps = {}\nbptt = {}\n",
            t.epochs, t.learning_rate, t.beta1, t.beta2, t.adam_eps, t.bptt
        );
        let _ = writeln!(
            out,
            "[search]\ndelta_pos = {}\ndelta_ang = {}\ndelta_joint = {}\nmax_iterations = {}\ntolerance = {}\n\
             shrink = {}\nmax_backtracks = {}\ninitial_step = {}\nmax_step = {}\nsearch_joints = {}\nparallel = {}\n\
             grid_depths = {}\ngrid_lateral = {}\ngrid_joint_values = {}\ngrid_cube_rotations = {}\ngrid_top_k = {}\n",
            s.delta_pos,
            s.delta_ang,
            s.delta_joint,
            s.max_iterations,
            s.tolerance,
            s.shrink,
            s.max_backtracks,
            s.initial_step,
            s.max_step,
            s.search_joints,
            s.parallel,
            join(&s.grid.depths),
            s.grid.lateral,
            join(&s.grid.joint_values),
            s.grid.cube_rotations,
            s.grid.top_k
        );
        let _ = writeln!(
            out,
            "[scene]\npreset = {}\nimage = {}\nmodel = {}\ndistance = {}\nlength = {}\ndt = {}\ndepth_jitter = {}\n\
             lateral_extent = {}\ndistractors = {}\nnoise = {}\nbackground = {}\nmin_object_pixels = {}\n",
            sc.preset.name(),
            sc.image,
            opt_path(&sc.model),
            opt(&sc.distance),
            opt(&sc.length),
            opt(&sc.dt),
            opt(&sc.depth_jitter),
            opt(&sc.lateral_extent),
            opt(&sc.distractors),
            opt(&sc.noise),
            opt(&sc.background),
            opt(&sc.min_object_pixels)
        );
        let _ = writeln!(
            out,
            "[dataset]\nsequences = {}\ndistances = {}\nocclusion_targets = {}\nshort_max = {}\nmedium_max = {}\nlarge_max = {}\n",
            d.sequences,
            join(&d.distances),
            join(&d.occlusion_targets),
            d.bins.short_max,
            d.bins.medium_max,
            d.bins.large_max
        );
        let _ = writeln!(
            out,
            "[grid]\nlayers = {}\ncells = {}\ndelays = {}\nprediction_loss = {}\nchannels = {}\nseeds = {}\nheldout_fraction = {}\n",
            join(&g.layers),
            g.cells.iter().map(|&c| cell(c)).collect::<Vec<_>>().join(","),
            join(&g.delays),
            join(&g.prediction_loss),
            join(&g.channels),
            join(&g.seeds),
            g.heldout_fraction
        );
        let _ = writeln!(
            out,
            "[benchmark]\nmask_source = {}\ninit_from_truth = {}\ncorruption = {}\nsalt_fraction = {}\n",
            b.mask_source.name(),
            b.init_from_truth,
            b.corruption,
            b.salt_fraction
        );
        let _ = write!(
            out,
            "[paths]\ndataset = {}\nheldout = {}\nweights = {}\nsequence = {}\nout = {}\n",
            opt_path(&p.dataset),
            opt_path(&p.heldout),
            opt_path(&p.weights),
            opt_path(&p.sequence),
            opt_path(&p.out)
        );
        out
    }
}

impl PartialEq for RunConfig {
    fn eq(&self, other: &Self) -> bool {
        self.to_text() == other.to_text()
    }
}
