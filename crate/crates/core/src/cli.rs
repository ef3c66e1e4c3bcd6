//! Command-line front end. [`run`] parses arguments, executes one
//! subcommand and returns the process exit code:
//! 0 success, 1 usage error, 2 I/O or format error, 3 verification failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::ParamStore;
use crate::cost::{analyze_graph, graph_macs, receptive_field_report};
use crate::error::{Error, Result};
use crate::gradcheck::{check_all, check_op, GradcheckOptions};
use crate::labels::LabelMap;
use crate::metrics::ConfusionMatrix;
use crate::netpbm::{self, Palette};
use crate::network::{crop, eadnet_graph, pad_to_multiple, EadnetConfig, GraphSpec, Model};
use crate::rf_probe;
use crate::synth::{synth_dataset, Sample, SynthConfig};
use crate::train::{evaluate, log_csv, train, TrainConfig};
use crate::weights::{load_weights_into, save_weights};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "eadnet", version, about = "Real-time semantic segmentation with multi-receptive-field blocks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Per-layer parameter and FLOP table.
    Summarize {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "1024x2048", value_parser = parse_size)]
        input_size: (usize, usize),
        /// Also write the cost report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Cost report as JSON.
    Analyze {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "1024x2048", value_parser = parse_size)]
        input_size: (usize, usize),
        /// Write to this file instead of standard output.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Receptive fields per layer and per MMRFC branch.
    RfReport {
        #[command(flatten)]
        model: ModelArgs,
        /// Compare against empirical footprints.
        #[arg(long)]
        verify: bool,
    },
    /// Segment a PPM image.
    Infer {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Colorized prediction (PPM).
        #[arg(long)]
        output: PathBuf,
        /// Raw class indices (PGM).
        #[arg(long)]
        labels_out: Option<PathBuf>,
        /// Ground-truth PGM; prints the mIoU of the prediction.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        palette: Option<PathBuf>,
        /// Edge-pad inputs whose size is not a multiple of 8.
        #[arg(long)]
        pad: bool,
    },
    /// Train on synthetic data or a dataset directory.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        /// Directory with `images/*.ppm` and `labels/*.pgm` of matching stems.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 2000)]
        iters: u64,
        #[arg(long, default_value_t = 5e-4)]
        base_lr: f64,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        weight_decay: f64,
        #[arg(long)]
        hflip: bool,
        #[arg(long, default_value = "eadnet.weights")]
        weights_out: PathBuf,
        #[arg(long, default_value = "loss.csv")]
        log: PathBuf,
        /// Print training-set mIoU after the last step.
        #[arg(long)]
        eval: bool,
    },
    /// Finite-difference gradient verification.
    Gradcheck {
        #[arg(long)]
        op: Option<String>,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 19)]
    pub classes: usize,
    /// Stage widths `c1,c2,c3`.
    #[arg(long, value_parser = parse_triple)]
    pub channels: Option<(usize, usize, usize)>,
    #[arg(long)]
    pub n1: Option<usize>,
    #[arg(long)]
    pub n2: Option<usize>,
    /// Stage-2 base dilations, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub dr2: Option<Vec<usize>>,
    /// Stage-3 base dilations, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub dr3: Option<Vec<usize>>,
    /// Layer graph in TOML; replaces the built-in topology.
    #[arg(long)]
    pub graph: Option<PathBuf>,
}

impl ModelArgs {
    pub fn config(&self) -> Result<EadnetConfig> {
        let mut cfg = EadnetConfig {
            num_classes: self.classes,
            ..EadnetConfig::default()
        };
        if let Some(c) = self.channels {
            cfg.stage_channels = c;
        }
        let n1 = self.n1.or(self.dr2.as_ref().map(Vec::len)).unwrap_or(cfg.n1);
        let n2 = self.n2.or(self.dr3.as_ref().map(Vec::len)).unwrap_or(cfg.n2);
        cfg = cfg.with_blocks(n1, n2);
        if let Some(d) = &self.dr2 {
            cfg.dr_schedule_stage2 = d.clone();
        }
        if let Some(d) = &self.dr3 {
            cfg.dr_schedule_stage3 = d.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn graph(&self) -> Result<GraphSpec> {
        match &self.graph {
            Some(path) => GraphSpec::from_toml(&fs::read_to_string(path)?),
            None => eadnet_graph(&self.config()?),
        }
    }
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HxW")?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v}: {e}"));
    let (h, w) = (parse(h)?, parse(w)?);
    if h == 0 || w == 0 {
        return Err("sizes must be positive".into());
    }
    Ok((h, w))
}

fn parse_triple(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse().map_err(|e| format!("{t}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err("expected three comma-separated widths".into()),
    }
}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_USAGE,
        Error::NonFinite(_) => EXIT_VERIFY,
        _ => EXIT_IO,
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} does not exist", path.display()),
        )))
    }
}

fn human(v: u64, unit: f64, suffix: &str) -> String {
    format!("{:.3}{suffix}", v as f64 / unit)
}

fn execute(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Summarize { model, input_size, json } => {
            let spec = model.graph()?;
            let dims = [1, spec.input_channels, input_size.0, input_size.1];
            let report = analyze_graph(&spec, dims)?;
            writeln!(out, "{:<16} {:<22} {:<20} {:>10} {:>16}", "layer", "kind", "out shape", "params", "FLOPs")?;
            for l in &report.layers {
                let shape = format!("{:?}", l.out_shape);
                writeln!(out, "{:<16} {:<22} {:<20} {:>10} {:>16}", l.name, l.kind, shape, l.params, l.flops)?;
            }
            let macs = graph_macs(&spec, dims)?;
            writeln!(
                out,
                "total: params {} ({}) + {} BN/PReLU, FLOPs {} ({}); 2xMAC {}",
                report.total_params,
                human(report.total_params, 1e6, "M"),
                report.total_params_aux,
                report.total_flops,
                human(report.total_flops, 1e9, "G"),
                human(2 * macs, 1e9, "G"),
            )?;
            if let Some(path) = json {
                fs::write(path, report.to_json()?)?;
            }
            Ok(EXIT_OK)
        }
        Command::Analyze { model, input_size, output } => {
            let spec = model.graph()?;
            let report = analyze_graph(&spec, [1, spec.input_channels, input_size.0, input_size.1])?;
            let text = report.to_json()?;
            match output {
                Some(path) => fs::write(path, text)?,
                None => writeln!(out, "{text}")?,
            }
            Ok(EXIT_OK)
        }
        Command::RfReport { model, verify } => rf_report(&model, verify, out),
        Command::Infer {
            model,
            weights,
            input,
            output,
            labels_out,
            truth,
            palette,
            pad,
        } => {
            for p in [Some(&weights), Some(&input), truth.as_ref(), palette.as_ref()].into_iter().flatten() {
                require_file(p)?;
            }
            let net = Model::new(model.graph()?)?;
            let mut store: ParamStore<f32> = net.init_store(&mut ChaCha8Rng::seed_from_u64(0))?;
            load_weights_into(&mut store, &weights)?;
            let palette = match palette {
                Some(p) => Palette::load(p)?,
                None => Palette::default(),
            };
            let image = netpbm::load_ppm(&input)?;
            let m = net.spec.required_multiple();
            let [_, _, h, w] = image.dims();
            let logits = if pad && (h % m != 0 || w % m != 0) {
                let (padded, (h, w)) = pad_to_multiple(&image, m);
                crop(&net.predict(&store, &padded)?, h, w)?
            } else {
                net.predict(&store, &image)?
            };
            let pred = LabelMap::argmax(&logits);
            netpbm::write_label_ppm(&pred, &palette, &output)?;
            if let Some(p) = labels_out {
                netpbm::write_pgm_labels(&pred, p)?;
            }
            if let Some(t) = truth {
                let truth = netpbm::load_pgm_labels(t)?;
                let mut cm = ConfusionMatrix::new(logits.c());
                cm.accumulate(&pred, &truth)?;
                writeln!(out, "mIoU {:.4}", cm.miou()?.miou)?;
            }
            Ok(EXIT_OK)
        }
        Command::Train {
            model,
            data,
            size,
            count,
            iters,
            base_lr,
            batch,
            seed,
            weight_decay,
            hflip,
            weights_out,
            log,
            eval,
        } => {
            let net = Model::new(model.graph()?)?;
            let classes = net
                .spec
                .infer_shapes([1, net.spec.input_channels, 8 * net.spec.required_multiple(), 8 * net.spec.required_multiple()])?
                .last()
                .map(|(_, d)| d[1])
                .unwrap_or(model.classes);
            let samples = match &data {
                Some(dir) => load_dataset_dir(dir)?,
                None => synth_dataset(seed, count, &SynthConfig::new(size, classes))?,
            };
            if samples.is_empty() {
                return Err(Error::InvalidArgument("the training set is empty".into()));
            }
            let mut store: ParamStore<f32> = net.init_store(&mut ChaCha8Rng::seed_from_u64(seed))?;
            let cfg = TrainConfig {
                iters,
                base_lr,
                batch_size: batch,
                seed,
                weight_decay,
                hflip,
                ..TrainConfig::default()
            };
            let entries = train(&net, &mut store, &samples, &cfg, |e| {
                if e.iter % 100 == 0 {
                    let _ = writeln!(out, "iter {:>5}  lr {:.3e}  loss {:.5}", e.iter, e.lr, e.loss);
                }
            })?;
            fs::write(&log, log_csv(&entries))?;
            save_weights(&store, &weights_out)?;
            if eval {
                let miou = evaluate(&net, &store, &samples, classes)?.miou()?.miou;
                writeln!(out, "training mIoU {miou:.4}")?;
            }
            writeln!(out, "wrote {} and {}", weights_out.display(), log.display())?;
            Ok(EXIT_OK)
        }
        Command::Gradcheck {
            op,
            instances,
            seed,
            corrupt,
        } => {
            let opts = GradcheckOptions {
                instances,
                seed,
                corrupt,
                ..GradcheckOptions::default()
            };
            let reports = match op {
                Some(op) => vec![check_op(&op, &opts)?],
                None => check_all(&opts)?,
            };
            let mut ok = true;
            for r in &reports {
                ok &= r.passed;
                writeln!(
                    out,
                    "{:<16} max rel err {:.3e}  checked {:>6}  replayed {:>4}  {}",
                    r.op,
                    r.max_rel_error,
                    r.checked,
                    r.replayed,
                    if r.passed { "PASS" } else { "FAIL" }
                )?;
            }
            Ok(if ok { EXIT_OK } else { EXIT_VERIFY })
        }
    }
}

fn rf_report(model: &ModelArgs, verify: bool, out: &mut dyn Write) -> Result<i32> {
    let spec = model.graph()?;
    for l in receptive_field_report(&spec)? {
        writeln!(out, "{:<16} {:<22} rf {:>4} x {:<4} jump {}", l.name, l.kind, l.rf.0, l.rf.1, l.jump)?;
        for b in &l.branches {
            writeln!(
                out,
                "    branch {} dilation {:?}: rectangle ({}, {}), image span ({}, {})",
                b.index, b.dilation, b.feature_rf.0, b.feature_rf.1, b.image_span.0, b.image_span.1
            )?;
        }
    }
    if !verify {
        return Ok(EXIT_OK);
    }
    let toy = Model::new(eadnet_graph(&rf_probe::toy_config())?)?;
    let mut checks = rf_probe::verify_branches(8, &[1, 2, 3, 4, 5, 6])?;
    checks.extend(rf_probe::verify_network(&toy)?);
    let mut ok = true;
    writeln!(out, "verification (branches at C=8, then a 2-block toy network):")?;
    for c in &checks {
        ok &= c.matches();
        writeln!(
            out,
            "  {:<20} analytic {:?} {} empirical {:?}",
            c.name,
            c.analytic,
            if c.matches() { "==" } else { "!=" },
            c.empirical
        )?;
    }
    Ok(if ok { EXIT_OK } else { EXIT_VERIFY })
}

/// Loads `images/<stem>.ppm` with `labels/<stem>.pgm` pairs, sorted by stem.
pub fn load_dataset_dir(dir: &Path) -> Result<Vec<Sample>> {
    let mut stems: Vec<String> = fs::read_dir(dir.join("images"))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    stems.sort();
    stems
        .into_iter()
        .map(|stem| {
            let image = netpbm::load_ppm(dir.join("images").join(format!("{stem}.ppm")))?;
            let labels = netpbm::load_pgm_labels(dir.join("labels").join(format!("{stem}.pgm")))?;
            if labels.dims()[1..] != image.dims()[2..] {
                return Err(Error::Shape(format!("image and labels of `{stem}` differ in size")));
            }
            Ok(Sample { image, labels })
        })
        .collect()
}
