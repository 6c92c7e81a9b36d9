//! The operations behind the `dehaze` binary, usable without it.
//!
//! A checkpoint only stores parameters. Training writes the run
//! configuration next to it as `<checkpoint>.cfg` and the loss log as
//! `<checkpoint>.log` (unless the configuration names another log path);
//! commands that load a checkpoint read that sidecar unless given a
//! configuration explicitly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{config, Error, Result};
use crate::haze::{load_dataset, make_dataset, write_dataset, SynthOptions};
use crate::imaging::{heatmap, Image, ImageError};
use crate::metrics::{psnr, ssim, LossConfig};
use crate::net::{DehazeNet, NetConfig};
use crate::params::ParamStore;
use crate::tensor::{Graph, Tensor};
use crate::train::{format_log, mean_loss, train, LogLine};

/// `path` with `suffix` appended to its file name.
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn config_sidecar(ckpt: &Path) -> PathBuf {
    with_suffix(ckpt, ".cfg")
}

pub fn log_sidecar(ckpt: &Path) -> PathBuf {
    with_suffix(ckpt, ".log")
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    ImageError::Io {
        path: path.display().to_string(),
        source,
    }
    .into()
}

/// Reads a configuration file, or the defaults when `path` is `None`.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

/// Generates a synthetic dataset into `out`; returns the number of pairs.
pub fn synth(out: &Path, opts: SynthOptions) -> Result<usize> {
    let pairs = make_dataset(opts)?;
    write_dataset(out, &pairs)?;
    Ok(pairs.len())
}

fn load_pairs(dir: &Path) -> Result<Vec<(Image, Image)>> {
    Ok(load_dataset(dir)?.into_iter().map(|(h, c, _)| (h, c)).collect())
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub log: Vec<LogLine>,
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
}

/// Trains from scratch on the dataset in `data` and writes the checkpoint,
/// its configuration sidecar and the loss log.
///
/// On divergence the last finite parameters and the log so far are still
/// written before the error is returned.
pub fn train_to(cfg: &RunConfig, data: &Path, out: &Path, mut on_step: impl FnMut(&LogLine)) -> Result<TrainSummary> {
    cfg.validate()?;
    let pairs = load_pairs(data)?;
    let (net, mut store) = DehazeNet::new::<f32>(cfg.net.clone())?;
    let mut log = Vec::new();
    let result = train(&net, &mut store, &pairs, &cfg.train, |l| {
        on_step(l);
        log.push(*l);
    });
    let log_path = cfg.log.clone().unwrap_or_else(|| log_sidecar(out));
    let mut saved = cfg.clone();
    saved.data = Some(data.to_path_buf());
    saved.checkpoint = Some(out.to_path_buf());
    saved.log = Some(log_path.clone());
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    checkpoint::save(&store, out)?;
    write_file(&config_sidecar(out), saved.to_text())?;
    write_file(&log_path, format_log(&log))?;
    result?;
    Ok(TrainSummary {
        log,
        checkpoint: out.to_path_buf(),
        log_path,
    })
}

/// A network with trained parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: RunConfig,
    pub net: DehazeNet,
    pub store: ParamStore<f32>,
}

impl Model {
    /// Loads `ckpt` into the network described by `cfg`, by default the
    /// checkpoint's sidecar, falling back to the desk defaults.
    pub fn load(ckpt: &Path, cfg: Option<&Path>) -> Result<Self> {
        let sidecar = config_sidecar(ckpt);
        let run = match cfg {
            Some(p) => RunConfig::load(p)?,
            None if sidecar.exists() => RunConfig::load(&sidecar)?,
            None => RunConfig::default(),
        };
        let loaded = checkpoint::load(ckpt)?;
        let (net, mut store) = DehazeNet::new::<f32>(run.net.clone())?;
        store
            .assign_from(&loaded)
            .map_err(|e| config(format!("checkpoint does not fit the configured network: {e}")))?;
        Ok(Self {
            config: run,
            net,
            store,
        })
    }

    pub fn dehaze(&self, image: &Image) -> Result<Image> {
        self.net.dehaze(&self.store, image)
    }
}

pub fn dehaze_file(model: &Model, input: &Path, output: &Path) -> Result<Image> {
    let out = model.dehaze(&Image::load(input)?)?;
    out.save(output)?;
    Ok(out)
}

/// Mean metrics of every pair sharing one haze coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub beta: f64,
    pub count: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Groups `(beta, prediction, reference)` triples by β (ascending) and
/// averages PSNR and SSIM within each group in input order.
pub fn eval_rows<'a>(
    items: impl IntoIterator<Item = (f64, &'a Image, &'a Image)>,
    loss: &LossConfig,
) -> Result<Vec<EvalRow>> {
    let mut rows: Vec<EvalRow> = Vec::new();
    for (beta, pred, reference) in items {
        let (p, s) = (psnr(pred, reference)?, ssim(pred, reference, loss)?);
        match rows.iter_mut().find(|r| r.beta == beta) {
            Some(r) => {
                r.count += 1;
                r.psnr += p;
                r.ssim += s;
            }
            None => rows.push(EvalRow {
                beta,
                count: 1,
                psnr: p,
                ssim: s,
            }),
        }
    }
    for r in &mut rows {
        r.psnr /= r.count as f64;
        r.ssim /= r.count as f64;
    }
    rows.sort_by(|a, b| a.beta.total_cmp(&b.beta));
    Ok(rows)
}

/// Dehazes every pair in `data` and tabulates the results per β.
pub fn evaluate(model: &Model, data: &Path) -> Result<Vec<EvalRow>> {
    let data = load_dataset(data)?;
    let preds = data
        .iter()
        .map(|(h, _, _)| model.dehaze(h))
        .collect::<Result<Vec<_>>>()?;
    eval_rows(
        data.iter().zip(&preds).map(|((_, c, b), p)| (*b, p, c)),
        &model.config.train.loss,
    )
}

pub fn eval_tsv(rows: &[EvalRow]) -> String {
    let mut s = String::from("beta\tcount\tpsnr\tssim\n");
    for r in rows {
        writeln!(s, "{}\t{}\t{:.4}\t{:.6}", r.beta, r.count, r.psnr, r.ssim).unwrap();
    }
    s
}

/// The nine component combinations as `(label, ams, gf, sgr, cgr)`.
pub const ABLATION_ROWS: [(&str, bool, bool, bool, bool); 9] = [
    ("base", false, false, false, false),
    ("AMS", true, false, false, false),
    ("AMS+GF", true, true, false, false),
    ("SGR", false, false, true, false),
    ("CGR", false, false, false, true),
    ("SGR+CGR", false, false, true, true),
    ("AMS+GF+SGR", true, true, true, false),
    ("AMS+GF+CGR", true, true, false, true),
    ("all", true, true, true, true),
];

/// Default grid sides for the SGR node sweep.
pub const Q_SWEEP: [usize; 4] = [1, 2, 4, 8];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub net: NetConfig,
    pub loss: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Every network the ablation trains: the nine switch rows, then the full
/// model once per entry of `q_sweep`.
pub fn ablation_configs(base: &NetConfig, q_sweep: &[usize]) -> Vec<(String, NetConfig)> {
    let mut out: Vec<(String, NetConfig)> = ABLATION_ROWS
        .iter()
        .map(|&(label, a, g, s, c)| (label.to_string(), base.clone().with_switches(a, g, s, c)))
        .collect();
    for &q in q_sweep {
        let net = NetConfig {
            q,
            ..base.clone().with_switches(true, true, true, true)
        };
        out.push((format!("all q={q}"), net));
    }
    out
}

/// Trains every configuration of [`ablation_configs`] from the same seeds
/// for `steps` steps on `train_dir` and scores it on `eval_dir`.
pub fn ablate(
    cfg: &RunConfig,
    train_dir: &Path,
    eval_dir: &Path,
    steps: usize,
    q_sweep: &[usize],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let pairs = load_pairs(train_dir)?;
    let eval_pairs = load_pairs(eval_dir)?;
    let mut tc = cfg.train.clone();
    tc.max_steps = Some(steps);
    let mut rows = Vec::new();
    for (label, net_cfg) in ablation_configs(&cfg.net, q_sweep) {
        let stage = |e: Error| config(format!("ablation row `{label}`: {e}"));
        let (net, mut store) = DehazeNet::new::<f32>(net_cfg.clone()).map_err(stage)?;
        train(&net, &mut store, &pairs, &tc, |_| {}).map_err(|e| match e {
            Error::Diverged { .. } => e,
            other => stage(other),
        })?;
        let (mut p, mut s) = (0.0, 0.0);
        for (hazy, clear) in &eval_pairs {
            let out = net.dehaze(&store, hazy)?;
            p += psnr(&out, clear)?;
            s += ssim(&out, clear, &tc.loss)?;
        }
        let n = eval_pairs.len() as f64;
        let row = AblationRow {
            label,
            loss: mean_loss(&net, &store, &eval_pairs, &tc.loss)?,
            net: net_cfg,
            psnr: p / n,
            ssim: s / n,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn ablation_tsv(rows: &[AblationRow]) -> String {
    let mut s = String::from("config\tams\tgf\tsgr\tcgr\tq\tloss\tpsnr\tssim\n");
    let flag = |b: bool| if b { "on" } else { "off" };
    for r in rows {
        let n = &r.net;
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.4}\t{:.6}",
            r.label,
            flag(n.enable_ams),
            flag(n.enable_gf),
            flag(n.enable_sgr),
            flag(n.enable_cgr),
            n.q,
            r.loss,
            r.psnr,
            r.ssim
        )
        .unwrap();
    }
    s
}

/// What the spatial branch did with one image.
#[derive(Clone, Debug)]
pub struct SpatialView {
    pub node: usize,
    /// Side of the node grid.
    pub q: usize,
    /// Projection weights of `node` over the reasoning feature map, `[h,w]`.
    pub projection: Tensor<f64>,
    /// Row `node` of the spatial adjacency.
    pub adjacency: Vec<f64>,
    pub strongest: usize,
    pub weakest: usize,
    pub projection_strongest: Tensor<f64>,
    pub projection_weakest: Tensor<f64>,
}

#[derive(Clone, Debug)]
pub struct ChannelView {
    pub node: usize,
    /// Row `node` of the channel adjacency.
    pub adjacency: Vec<f64>,
    /// `(rows, cols)` the row is laid out on for display.
    pub grid: (usize, usize),
}

#[derive(Clone, Debug)]
pub struct Inspection {
    /// Extents of the feature map the reasoning branches saw.
    pub feature: (usize, usize),
    pub spatial: Option<SpatialView>,
    pub channel: Option<ChannelView>,
}

/// Index of the largest (`max`) or smallest entry; the first one on ties.
fn extreme(row: &[f64], max: bool) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if (max && v > row[best]) || (!max && v < row[best]) {
            best = i;
        }
    }
    best
}

/// Near-square `(rows, cols)` with `rows·cols = n` and `rows ≤ cols`.
pub fn display_grid(n: usize) -> (usize, usize) {
    let rows = (1..=n)
        .take_while(|r| r * r <= n)
        .filter(|r| n.is_multiple_of(*r))
        .last()
        .unwrap_or(1);
    (rows, n / rows)
}

fn row_f64(t: &Tensor<f32>, row: usize) -> Vec<f64> {
    let width = t.shape()[1];
    t.data()[row * width..(row + 1) * width]
        .iter()
        .map(|&v| v as f64)
        .collect()
}

/// Runs `image` through the network and extracts the spatial node `node`
/// and the channel node `channel` views of whichever branches are enabled.
pub fn inspect(model: &Model, image: &Image, node: usize, channel: usize) -> Result<Inspection> {
    let net_cfg = &model.config.net;
    if !net_cfg.enable_sgr && !net_cfg.enable_cgr {
        return Err(config("inspection needs at least one reasoning branch enabled"));
    }
    if net_cfg.enable_sgr && node >= net_cfg.q * net_cfg.q {
        return Err(config(format!(
            "node {node} out of range ({} spatial nodes)",
            net_cfg.q * net_cfg.q
        )));
    }
    if net_cfg.enable_cgr && channel >= net_cfg.n_cgr {
        return Err(config(format!(
            "channel node {channel} out of range ({} nodes)",
            net_cfg.n_cgr
        )));
    }
    if image.channels() != 3 {
        return Err(config("inspection needs a color image"));
    }
    let mut g = Graph::<f32>::new();
    let p = model.store.bind(&mut g);
    let k = net_cfg.size_multiple();
    let (h, w) = (image.height(), image.width());
    let x = g.constant(image.to_tensor());
    let x = g.pad_replicate(x, h.div_ceil(k) * k - h, w.div_ceil(k) * k - w)?;
    let trace = model.net.forward(&mut g, &p, x)?;
    let &[_, fh, fw] = g.shape(trace.reasoning_input) else {
        unreachable!("feature maps are [C,H,W]")
    };

    let projection_row = |b: &Tensor<f32>, grid: (usize, usize), i: usize| -> Tensor<f64> {
        let row = row_f64(b, i);
        let data = (0..fh)
            .flat_map(|y| row[y * grid.1..y * grid.1 + fw].to_vec())
            .collect();
        Tensor::new([fh, fw], data).expect("feature extents")
    };
    let spatial = trace.sgr.map(|s| {
        let b = g.value(s.projection);
        let adjacency = row_f64(g.value(s.adjacency), node);
        let (strongest, weakest) = (extreme(&adjacency, true), extreme(&adjacency, false));
        SpatialView {
            node,
            q: net_cfg.q,
            projection: projection_row(b, s.grid, node),
            projection_strongest: projection_row(b, s.grid, strongest),
            projection_weakest: projection_row(b, s.grid, weakest),
            adjacency,
            strongest,
            weakest,
        }
    });
    let channel = trace.cgr.map(|c| ChannelView {
        node: channel,
        adjacency: row_f64(g.value(c.adjacency), channel),
        grid: display_grid(net_cfg.n_cgr),
    });
    Ok(Inspection {
        feature: (fh, fw),
        spatial,
        channel,
    })
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Writes the heatmaps and an `inspect.txt` summary with the raw rows into
/// `dir`; returns the files written.
pub fn write_inspection(ins: &Inspection, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let mut files = Vec::new();
    let mut summary = format!("feature {} {}\n", ins.feature.0, ins.feature.1);
    let mut save = |name: String, t: &Tensor<f64>| -> Result<()> {
        let path = dir.join(name);
        heatmap(t)?.save(&path)?;
        files.push(path);
        Ok(())
    };
    if let Some(s) = &ins.spatial {
        save(format!("projection_node{}.pgm", s.node), &s.projection)?;
        save(
            format!("adjacency_node{}.pgm", s.node),
            &Tensor::new([s.q, s.q], s.adjacency.clone())?,
        )?;
        save(
            format!("projection_strongest_node{}.pgm", s.strongest),
            &s.projection_strongest,
        )?;
        save(
            format!("projection_weakest_node{}.pgm", s.weakest),
            &s.projection_weakest,
        )?;
        writeln!(summary, "node {}", s.node).unwrap();
        writeln!(summary, "strongest {}", s.strongest).unwrap();
        writeln!(summary, "weakest {}", s.weakest).unwrap();
        writeln!(summary, "adjacency {}", list(&s.adjacency)).unwrap();
    }
    if let Some(c) = &ins.channel {
        save(
            format!("channel_adjacency_node{}.pgm", c.node),
            &Tensor::new([c.grid.0, c.grid.1], c.adjacency.clone())?,
        )?;
        writeln!(summary, "channel {}", c.node).unwrap();
        writeln!(summary, "channel_adjacency {}", list(&c.adjacency)).unwrap();
    }
    let path = dir.join("inspect.txt");
    write_file(&path, summary)?;
    files.push(path);
    Ok(files)
}
