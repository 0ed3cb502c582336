//! Protocol execution and artifact emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use acid_core::adversary::{attack_acid, attack_network, AttackConfig, AttackResult};
use acid_core::engine::{acid_ablate, acid_run, contraction_probe, data_sweep, sweep_csv, AcidConfig, AcidVariant};
use acid_core::forward::{make_mask, RadonGeometry};
use acid_core::io::{read_f64grid, write_f64grid, write_mask, write_pgm};
use acid_core::lab::{add_noise, insert_structure, make_phantom, Ellipse, EllipsePhantomSpec, Glyph, StructuralInsert};
use acid_core::recon::{
    build_adjoint_recon, build_automap_mini, default_hidden, train_automap_mini, AutomapMini, PseudoInverseRecon,
    ReconOperator, ZeroRecon,
};
use acid_core::{psnr, ssim, ForwardModel, Image, MaskPattern, Measurement};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, ModelKind, OperatorKind, Protocol};

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub experiment_id: String,
    pub protocol: Protocol,
    pub seeds: Vec<(String, u64)>,
    pub model_descriptor: String,
    pub operator_descriptor: String,
    pub acid: AcidConfig,
    pub out_dir: PathBuf,
    /// File names relative to `out_dir`, in emission order.
    pub artifacts: Vec<String>,
    pub results: Vec<(String, String)>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn artifact_paths(&self) -> Vec<PathBuf> {
        self.artifacts.iter().map(|a| self.out_dir.join(a)).collect()
    }

    pub fn result(&self, key: &str) -> Option<f64> {
        self.results.iter().find(|(k, _)| k == key).and_then(|(_, v)| v.parse().ok())
    }

    /// Flat key-value text. The config block at the end makes the file a
    /// valid config for rerunning the experiment.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &str| writeln!(s, "{k} = {v}").expect("write to string");
        kv("manifest.experiment_id", &self.experiment_id);
        kv("manifest.protocol", self.protocol.as_str());
        kv("manifest.model", &self.model_descriptor);
        kv("manifest.operator", &self.operator_descriptor);
        for (name, seed) in &self.seeds {
            kv(&format!("manifest.seed.{name}"), &seed.to_string());
        }
        for a in &self.artifacts {
            kv("manifest.artifact", a);
        }
        for (k, v) in &self.results {
            kv(&format!("result.{k}"), v);
        }
        s.push('\n');
        s.push_str(&self.config.to_text());
        s
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{source}")]
    Runtime {
        source: acid_core::Error,
        /// Everything written before the failure.
        manifest: Box<RunManifest>,
    },
}

impl RunError {
    /// Process exit code: 2 for configuration problems, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Runtime { .. } => 3,
        }
    }
}

/// Reads a config (or a previous manifest) and runs its protocol into `out_dir`.
pub fn run_experiment(config_path: &Path, out_dir: &Path) -> Result<RunManifest, RunError> {
    let text = fs::read_to_string(config_path).map_err(ConfigError::Io)?;
    let cfg = ExperimentConfig::parse(&text)?;
    run_config(&cfg, out_dir)
}

/// 64-bit FNV-1a, used to pin operator blobs in manifests.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

struct Emitter {
    manifest: RunManifest,
}

impl Emitter {
    fn path(&mut self, name: &str) -> PathBuf {
        self.manifest.artifacts.push(name.to_string());
        self.manifest.out_dir.join(name)
    }

    fn text(&mut self, name: &str, body: &str) -> acid_core::Result<()> {
        let p = self.path(name);
        fs::write(p, body)?;
        Ok(())
    }

    fn grid(&mut self, name: &str, img: &Image) -> acid_core::Result<()> {
        let p = self.path(name);
        write_f64grid(p, img)
    }

    fn pgm(&mut self, name: &str, img: &Image, window: (f64, f64)) -> acid_core::Result<()> {
        let p = self.path(name);
        write_pgm(p, img, window.0, window.1)
    }

    fn result(&mut self, key: &str, value: impl ToString) {
        self.manifest.results.push((key.to_string(), value.to_string()));
    }

    fn finish(mut self) -> std::io::Result<RunManifest> {
        self.manifest.artifacts.push(MANIFEST_NAME.to_string());
        fs::write(self.manifest.out_dir.join(MANIFEST_NAME), self.manifest.to_text())?;
        Ok(self.manifest)
    }
}

/// Everything a protocol needs: the object, the forward model and `Φ`.
pub struct Lab {
    pub truth: Image,
    pub model: ForwardModel,
    pub op: Arc<dyn ReconOperator>,
    pub peak: f64,
}

pub fn build_phantom(cfg: &ExperimentConfig) -> acid_core::Result<Image> {
    let base = match &cfg.phantom_file {
        Some(p) => read_f64grid(p)?,
        None => {
            let spec = if cfg.ellipses.is_empty() {
                EllipsePhantomSpec::random(cfg.ellipse_count, cfg.phantom_seed)
            } else {
                let ellipses = cfg
                    .ellipses
                    .iter()
                    .map(|e| Ellipse { center: (e[0], e[1]), axes: (e[2], e[3]), rotation: e[4], intensity: e[5] })
                    .collect();
                EllipsePhantomSpec::new(ellipses, cfg.phantom_seed)
            };
            make_phantom(&spec, (cfg.size, cfg.size))?
        }
    };
    let glyph = match (&cfg.insert_text, &cfg.insert_bitmap) {
        (Some(t), _) => Some(Glyph::text(t)?),
        (None, Some(p)) => Some(Glyph::from_image(&read_f64grid(p)?, 0.5)),
        (None, None) => None,
    };
    match glyph {
        Some(glyph) => insert_structure(
            &base,
            &StructuralInsert { glyph, position: (cfg.insert_row, cfg.insert_col), intensity: cfg.insert_intensity },
        ),
        None => Ok(base),
    }
}

pub fn build_model(cfg: &ExperimentConfig) -> acid_core::Result<ForwardModel> {
    fourier_or_radon(cfg, cfg.sampling_rate, cfg.views)
}

fn fourier_or_radon(cfg: &ExperimentConfig, rate: f64, views: usize) -> acid_core::Result<ForwardModel> {
    let n = cfg.size;
    Ok(match cfg.model {
        ModelKind::Fourier => {
            let pattern = if rate >= 1.0 { MaskPattern::Full } else { cfg.mask };
            ForwardModel::fourier(make_mask(pattern, rate, (n, n), cfg.mask_seed)?)
        }
        ModelKind::Radon => ForwardModel::radon(RadonGeometry::uniform(views, n)?),
    })
}

/// Training pairs `(A f, f)` over phantoms with seeds `train_seed ..`.
pub fn training_pairs(cfg: &ExperimentConfig, model: &ForwardModel) -> acid_core::Result<Vec<(Measurement, Image)>> {
    (0..cfg.train_pairs as u64)
        .map(|i| {
            let f = make_phantom(&EllipsePhantomSpec::random(cfg.ellipse_count.max(1), cfg.train_seed + i), (cfg.size, cfg.size))?;
            Ok((model.apply(&f)?, f))
        })
        .collect()
}

/// Loads the blob at `automap_blob` when it exists, otherwise trains and
/// writes it there. Returns the operator and its blob hash.
pub fn load_or_train_automap(cfg: &ExperimentConfig, model: &ForwardModel) -> acid_core::Result<(AutomapMini, u64)> {
    if let Some(path) = cfg.automap_blob.as_ref().filter(|p| p.exists()) {
        let bytes = fs::read(path)?;
        let op = AutomapMini::from_blob(&bytes, model)?;
        return Ok((op, fnv1a(&bytes)));
    }
    let hidden = cfg.automap_hidden.unwrap_or_else(|| default_hidden(model));
    let op = build_automap_mini(model, hidden, cfg.automap_init_seed)?;
    let pairs = training_pairs(cfg, model)?;
    let (op, _) = train_automap_mini(op, model, &pairs, cfg.train_epochs, cfg.train_step)?;
    let bytes = op.to_blob();
    if let Some(path) = &cfg.automap_blob {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, &bytes)?;
    }
    Ok((op, fnv1a(&bytes)))
}

fn build_operator(cfg: &ExperimentConfig, model: &ForwardModel) -> acid_core::Result<(Arc<dyn ReconOperator>, Option<u64>)> {
    Ok(match cfg.operator {
        OperatorKind::Adjoint => (Arc::new(build_adjoint_recon(model)), None),
        OperatorKind::PseudoInverse => (Arc::new(PseudoInverseRecon::new(model.clone())), None),
        OperatorKind::Zero => (Arc::new(ZeroRecon::new(model)), None),
        OperatorKind::Automap => {
            let (op, hash) = load_or_train_automap(cfg, model)?;
            (Arc::new(op), Some(hash))
        }
    })
}

pub fn build_lab(cfg: &ExperimentConfig) -> acid_core::Result<(Lab, Option<u64>)> {
    let truth = build_phantom(cfg)?;
    let model = build_model(cfg)?;
    let (op, hash) = build_operator(cfg, &model)?;
    let peak = match (cfg.peak, cfg.model) {
        (Some(p), _) => p,
        (None, ModelKind::Fourier) => 1.0,
        (None, ModelKind::Radon) => {
            let (lo, hi) = truth.min_max();
            if hi > lo {
                hi - lo
            } else {
                1.0
            }
        }
    };
    Ok((Lab { truth, model, op, peak }, hash))
}

fn measure(model: &ForwardModel, f: &Image, sigma: f64, seed: u64) -> acid_core::Result<Measurement> {
    add_noise(&model.apply(f)?, sigma, seed)
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn ssim_or_nan(a: &Image, b: &Image, peak: f64) -> acid_core::Result<f64> {
    if a.width() >= acid_core::grid::SSIM_WINDOW && a.height() >= acid_core::grid::SSIM_WINDOW {
        ssim(a, b, peak)
    } else {
        Ok(f64::NAN)
    }
}

pub fn run_config(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest, RunError> {
    cfg.validate()?;
    let io_err = |e: std::io::Error| ConfigError::Io(e);
    fs::create_dir_all(out_dir).map_err(io_err)?;
    let mut seeds = vec![("phantom".to_string(), cfg.phantom_seed), ("noise".to_string(), cfg.noise_seed)];
    if cfg.model == ModelKind::Fourier {
        seeds.push(("mask".into(), cfg.mask_seed));
    }
    if cfg.operator == OperatorKind::Automap {
        seeds.push(("automap_init".into(), cfg.automap_init_seed));
        seeds.push(("train".into(), cfg.train_seed));
    }
    let mut em = Emitter {
        manifest: RunManifest {
            experiment_id: cfg.experiment_id.clone(),
            protocol: cfg.protocol,
            seeds,
            model_descriptor: String::new(),
            operator_descriptor: String::new(),
            acid: cfg.acid.clone(),
            out_dir: out_dir.to_path_buf(),
            artifacts: Vec::new(),
            results: Vec::new(),
            config: cfg.clone(),
        },
    };
    let outcome = build_lab(cfg).and_then(|(lab, hash)| {
        em.manifest.model_descriptor = lab.model.descriptor();
        em.manifest.operator_descriptor = lab.op.descriptor();
        if let Some(h) = hash {
            em.result("automap_blob_fnv1a", format!("{h:016x}"));
        }
        match cfg.protocol {
            Protocol::Reconstruct => reconstruct(cfg, &lab, &mut em),
            Protocol::Ablate => ablate(cfg, &lab, &mut em),
            Protocol::Sweep => sweep(cfg, &lab, &mut em),
            Protocol::AttackNet => attacks(cfg, &lab, &mut em, false),
            Protocol::AttackAcid => attacks(cfg, &lab, &mut em, true),
            Protocol::Contraction => contraction(cfg, &lab, &mut em),
            Protocol::NoiseStability => noise_stability(cfg, &lab, &mut em),
        }
    });
    match outcome {
        Ok(()) => Ok(em.finish().map_err(io_err)?),
        Err(source) => {
            em.result("error", source.to_string().replace('\n', " "));
            let manifest = em.finish().map_err(io_err)?;
            Err(RunError::Runtime { source, manifest: Box::new(manifest) })
        }
    }
}

fn reconstruct(cfg: &ExperimentConfig, lab: &Lab, em: &mut Emitter) -> acid_core::Result<()> {
    let acid = AcidConfig { peak: lab.peak, ..cfg.acid.clone() };
    let p0 = measure(&lab.model, &lab.truth, cfg.noise_sigma, cfg.noise_seed)?;
    let direct = lab.op.forward(&p0)?;
    let (out, history) = acid_run(&p0, &lab.model, lab.op.as_ref(), &acid, Some(&lab.truth))?;
    let window = lab.truth.min_max();
    em.grid("truth.f64grid", &lab.truth)?;
    em.pgm("truth.pgm", &lab.truth, window)?;
    em.grid("operator.f64grid", &direct)?;
    em.grid("final.f64grid", &out)?;
    em.pgm("final.pgm", &out, window)?;
    em.text("history.csv", &history.to_csv())?;
    for (k, snap) in &history.snapshots {
        em.grid(&format!("snapshot_{k:05}.f64grid"), snap)?;
    }
    let mut metrics = String::from("method,psnr,ssim\n");
    let mut row = |name: &str, img: &Image| -> acid_core::Result<(f64, f64)> {
        let (p, s) = (psnr(&lab.truth, img, lab.peak)?, ssim_or_nan(&lab.truth, img, lab.peak)?);
        writeln!(metrics, "{name},{p},{s}").expect("write to string");
        Ok((p, s))
    };
    let (op_psnr, _) = row("operator", &direct)?;
    let (acid_psnr, acid_ssim) = row("acid", &out)?;
    em.text("metrics.csv", &metrics)?;
    em.result("operator_psnr", op_psnr);
    em.result("acid_psnr", acid_psnr);
    em.result("acid_ssim", acid_ssim);
    Ok(())
}

fn ablate(cfg: &ExperimentConfig, lab: &Lab, em: &mut Emitter) -> acid_core::Result<()> {
    let acid = AcidConfig { peak: lab.peak, ..cfg.acid.clone() };
    let variants = [AcidVariant::Full, AcidVariant::NoIteration, AcidVariant::NoDeepLearning, AcidVariant::NoSparsity];
    let mut csv = String::from("seed,variant,psnr,ssim\n");
    let mut per_variant: Vec<Vec<f64>> = vec![Vec::new(); variants.len()];
    let window = lab.truth.min_max();
    for (i, &seed) in cfg.ablation_seeds.iter().enumerate() {
        let p0 = measure(&lab.model, &lab.truth, cfg.noise_sigma, seed)?;
        for (j, &v) in variants.iter().enumerate() {
            let (img, _) = acid_ablate(v, &p0, &lab.model, lab.op.as_ref(), &acid, None)?;
            let p = psnr(&lab.truth, &img, lab.peak)?;
            let s = ssim_or_nan(&lab.truth, &img, lab.peak)?;
            writeln!(csv, "{seed},{},{p},{s}", v.as_str()).expect("write to string");
            per_variant[j].push(p);
            if i == 0 {
                em.grid(&format!("ablation_{}.f64grid", v.as_str()), &img)?;
                em.pgm(&format!("ablation_{}.pgm", v.as_str()), &img, window)?;
            }
        }
    }
    em.text("ablation.csv", &csv)?;
    for (v, ps) in variants.iter().zip(&per_variant) {
        em.result(&format!("median_psnr.{}", v.as_str()), median(ps));
    }
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, lab: &Lab, em: &mut Emitter) -> acid_core::Result<()> {
    let acid = AcidConfig { peak: lab.peak, ..cfg.acid.clone() };
    let mut factory = |rate: f64| -> acid_core::Result<(ForwardModel, Arc<dyn ReconOperator>)> {
        let model = fourier_or_radon(cfg, rate, rate as usize)?;
        let op: Arc<dyn ReconOperator> = Arc::new(build_adjoint_recon(&model));
        Ok((model, op))
    };
    let mut meas = |m: &ForwardModel, f: &Image| measure(m, f, cfg.noise_sigma, cfg.noise_seed);
    let rows = data_sweep(&cfg.sweep_rates, &lab.truth, &acid, &mut factory, &mut meas)?;
    em.text("sweep.csv", &sweep_csv(&rows))?;
    for r in &rows {
        em.result(&format!("psnr_at.{}", r.rate), r.psnr);
    }
    Ok(())
}

/// Network attack per seed, then its perturbation replayed through ACID.
/// With `whole_pipeline` the ACID iteration is also attacked directly under
/// the same norm budget.
fn attacks(cfg: &ExperimentConfig, lab: &Lab, em: &mut Emitter, whole_pipeline: bool) -> acid_core::Result<()> {
    let acid = AcidConfig { peak: lab.peak, ..cfg.acid.clone() };
    let (f, model, op) = (&lab.truth, &lab.model, lab.op.as_ref());
    let budget = cfg.attack_budget.unwrap_or(cfg.attack_budget_rel * f.l2_norm());
    let attack = AttackConfig {
        gamma: cfg.attack_gamma,
        step: cfg.attack_step,
        momentum: cfg.attack_momentum,
        max_iters: cfg.attack_iters,
        norm_budget: Some(budget),
    };
    let clean = model.apply(f)?;
    let net_clean = psnr(f, &op.forward(&clean)?, lab.peak)?;
    let acid_clean = psnr(f, &acid_run(&clean, model, op, &acid, None)?.0, lab.peak)?;
    let acid_psnr = |e: &Image| -> acid_core::Result<f64> {
        let p = model.apply(&f.add(e))?;
        psnr(f, &acid_run(&p, model, op, &acid, None)?.0, lab.peak)
    };
    let mut csv = String::from(if whole_pipeline {
        "seed,budget,net_norm,net_psnr_clean,net_psnr_attacked,acid_psnr_clean,acid_psnr_replayed,acid_attack_norm,acid_psnr_attacked\n"
    } else {
        "seed,budget,net_norm,net_psnr_clean,net_psnr_attacked,acid_psnr_clean,acid_psnr_replayed\n"
    });
    let (mut d_net, mut d_replay, mut d_whole) = (Vec::new(), Vec::new(), Vec::new());
    let emit = |em: &mut Emitter, tag: &str, seed: u64, r: &AttackResult| -> acid_core::Result<()> {
        em.text(&format!("trace_{tag}_seed{seed}.csv"), &r.trace_csv())?;
        em.grid(&format!("perturbation_{tag}_seed{seed}.f64grid"), &r.perturbation)
    };
    for &seed in &cfg.attack_seeds {
        let r = attack_network(op, model, f, &attack, seed)?;
        emit(em, "net", seed, &r)?;
        let net_att = psnr(f, &op.forward(&model.apply(&f.add(&r.perturbation))?)?, lab.peak)?;
        let replay = acid_psnr(&r.perturbation)?;
        d_net.push(net_clean - net_att);
        d_replay.push(acid_clean - replay);
        write!(csv, "{seed},{budget},{},{net_clean},{net_att},{acid_clean},{replay}", r.perturbation_norm)
            .expect("write to string");
        if whole_pipeline {
            let ra = attack_acid(op, model, f, &acid, &attack, seed)?;
            emit(em, "acid", seed, &ra)?;
            let att = acid_psnr(&ra.perturbation)?;
            d_whole.push(acid_clean - att);
            write!(csv, ",{},{att}", ra.perturbation_norm).expect("write to string");
        }
        csv.push('\n');
    }
    em.text(if whole_pipeline { "attack_acid.csv" } else { "attack_net.csv" }, &csv)?;
    em.result("median_delta_net", median(&d_net));
    em.result("median_delta_acid_replayed", median(&d_replay));
    if whole_pipeline {
        em.result("median_delta_acid_attacked", median(&d_whole));
    }
    Ok(())
}

fn contraction(cfg: &ExperimentConfig, lab: &Lab, em: &mut Emitter) -> acid_core::Result<()> {
    let acid = AcidConfig { peak: lab.peak, ..cfg.acid.clone() };
    let mut errs = String::from("sigma,iter,observable_error\n");
    let mut summary = String::from("sigma,fitted_rate,predicted_rate,terminal_error,terminal_bound,support\n");
    for &sigma in &cfg.contraction_sigmas {
        let r = contraction_probe(sigma, &lab.model, &lab.truth, &acid)?;
        for (k, e) in r.observable_errors.iter().enumerate() {
            writeln!(errs, "{sigma},{k},{e}").expect("write to string");
        }
        writeln!(
            summary,
            "{sigma},{},{},{},{},{}",
            r.fitted_rate,
            r.predicted_rate,
            r.terminal_error(),
            r.terminal_bound,
            r.support
        )
        .expect("write to string");
    }
    em.text("contraction.csv", &errs)?;
    em.text("contraction_summary.csv", &summary)?;
    Ok(())
}

const HISTOGRAM_BINS: usize = 10;

fn noise_stability(cfg: &ExperimentConfig, lab: &Lab, em: &mut Emitter) -> acid_core::Result<()> {
    let acid = AcidConfig { peak: lab.peak, ..cfg.acid.clone() };
    let (f, model, op) = (&lab.truth, &lab.model, lab.op.as_ref());
    let clean = model.apply(f)?;
    let base_op = op.forward(&clean)?;
    let base_acid = acid_run(&clean, model, op, &acid, None)?.0;
    let mut csv = String::from("draw,noise_norm,ratio_operator,ratio_acid\n");
    let (mut r_op, mut r_acid) = (Vec::new(), Vec::new());
    for i in 0..cfg.stability_draws {
        let n = add_noise(&model.zero_image(), cfg.stability_sigma, cfg.stability_seed + i as u64)?;
        let p = model.apply(&f.add(&n))?;
        let nn = n.l2_norm();
        let a = op.forward(&p)?.sub(&base_op).l2_norm() / nn;
        let b = acid_run(&p, model, op, &acid, None)?.0.sub(&base_acid).l2_norm() / nn;
        writeln!(csv, "{i},{nn},{a},{b}").expect("write to string");
        r_op.push(a);
        r_acid.push(b);
    }
    em.text("stability.csv", &csv)?;
    let top = r_op.iter().chain(&r_acid).fold(0.0f64, |m, &x| m.max(x));
    let width = if top > 0.0 { top / HISTOGRAM_BINS as f64 } else { 1.0 };
    let mut hist = String::from("method,bin_lo,bin_hi,count\n");
    for (name, rs) in [("operator", &r_op), ("acid", &r_acid)] {
        let mut counts = [0usize; HISTOGRAM_BINS];
        for &r in rs.iter() {
            counts[((r / width) as usize).min(HISTOGRAM_BINS - 1)] += 1;
        }
        for (b, c) in counts.iter().enumerate() {
            writeln!(hist, "{name},{},{},{c}", b as f64 * width, (b + 1) as f64 * width).expect("write to string");
        }
    }
    em.text("stability_hist.csv", &hist)?;
    em.result("max_ratio_operator", r_op.iter().fold(0.0f64, |m, &x| m.max(x)));
    em.result("max_ratio_acid", r_acid.iter().fold(0.0f64, |m, &x| m.max(x)));
    Ok(())
}

/// Writes the phantom of a config as F64GRID and PGM.
pub fn write_phantom(cfg: &ExperimentConfig, out_dir: &Path) -> acid_core::Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let f = build_phantom(cfg)?;
    let (grid, pgm) = (out_dir.join("phantom.f64grid"), out_dir.join("phantom.pgm"));
    write_f64grid(&grid, &f)?;
    let (lo, hi) = f.min_max();
    write_pgm(&pgm, &f, lo, hi)?;
    Ok(vec![grid, pgm])
}

/// Writes the measurement of the config's phantom as `index,value` CSV, plus
/// the sampling mask for Fourier models.
pub fn write_forward(cfg: &ExperimentConfig, out_dir: &Path) -> acid_core::Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let f = build_phantom(cfg)?;
    let model = build_model(cfg)?;
    let p = measure(&model, &f, cfg.noise_sigma, cfg.noise_seed)?;
    let mut csv = String::from("index,value\n");
    for (i, v) in p.values().iter().enumerate() {
        writeln!(csv, "{i},{v}").expect("write to string");
    }
    let path = out_dir.join("measurement.csv");
    fs::write(&path, csv)?;
    let mut out = vec![path];
    if let ForwardModel::Fourier(m) = &model {
        let mp = out_dir.join("mask.f64grid");
        write_mask(&mp, m.mask())?;
        out.push(mp);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_hash() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn exit_codes() {
        let e = RunError::Config(ConfigError::Invalid { key: "k".into(), message: "m".into() });
        assert_eq!(e.exit_code(), 2);
    }
}
