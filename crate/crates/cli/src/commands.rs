use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use arpbox::config::Config;
use arpbox::eval::{evaluate, ApMetric, EvalReport, GroundTruth};
use arpbox::fit::{fit_box, perturbed, random_pair};
use arpbox::io::{
    parse_detections, parse_dota_document, tile_annotations, write_dota_document, AnnotationRecord,
    BoxSpec, ClassRef, ClassVocab, DetectionRecord, DotaDocument, TileSpec,
};
use arpbox::loss::{box_loss, multitask_loss, BoxLossKind, BoxPair, Sample};
use arpbox::post::{r_nms, select_final, Detection, FinalBox};
use arpbox::repr::{decode_vertices, encode_arp, quad_to_rect, ArpBox, Footprint, QuadBox};
use arpbox::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Fit runs ending at or above this IoU count as successes.
pub const FIT_SUCCESS_IOU: f64 = 0.9;

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn in_file<T>(path: &Path, r: arpbox::Result<T>) -> Result<T> {
    r.map_err(|source| CliError::File {
        path: path.to_owned(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BoxKind {
    Doc,
    Quad,
    Arp,
}

/// Converts between box forms. Quads are emitted in role order.
pub fn convert(from: BoxKind, to: BoxKind, values: &[f64]) -> Result<String> {
    let wrong_len = |n: usize| {
        Error::InvalidArgument(format!(
            "expected {n} values for {from:?}, got {}",
            values.len()
        ))
    };
    let spec = match from {
        BoxKind::Doc => BoxSpec::Doc(values.try_into().map_err(|_| wrong_len(5))?),
        BoxKind::Quad => BoxSpec::Quad(values.try_into().map_err(|_| wrong_len(8))?),
        BoxKind::Arp => BoxSpec::Arp(values.try_into().map_err(|_| wrong_len(7))?),
    };
    let rect = || -> arpbox::Result<_> {
        match spec {
            BoxSpec::Doc([cx, cy, w, h, t]) => arpbox::geom::OrientedRect::new(cx, cy, w, h, t),
            BoxSpec::Quad(c) => quad_to_rect(&QuadBox::from_coords(c)),
            BoxSpec::Arp(p) => quad_to_rect(&decode_vertices(&ArpBox::from_params(p)?)?),
        }
    };
    let out = match (from, to) {
        (BoxKind::Arp, BoxKind::Arp) => {
            BoxSpec::Arp(ArpBox::from_params(values.try_into().unwrap())?.params())
        }
        (_, BoxKind::Arp) => BoxSpec::Arp(encode_arp(&rect()?)?.params()),
        (BoxKind::Arp, BoxKind::Quad) => BoxSpec::Quad(
            decode_vertices(&ArpBox::from_params(values.try_into().unwrap())?)?.coords(),
        ),
        (_, BoxKind::Quad) => BoxSpec::Quad(arpbox::repr::rect_to_quad(&rect()?).coords()),
        (_, BoxKind::Doc) => BoxSpec::Doc(rect()?.params()),
    };
    Ok(serde_json::to_string(&out).expect("serializable") + "\n")
}

fn seven(v: &[f64], what: &str) -> Result<ArpBox> {
    let p: [f64; 7] = v
        .try_into()
        .map_err(|_| Error::InvalidArgument(format!("{what} needs 7 values, got {}", v.len())))?;
    Ok(ArpBox::from_params(p)?)
}

pub fn loss_pair(pred: &[f64], target: &[f64], kind: BoxLossKind, cfg: &Config) -> Result<String> {
    let pair = BoxPair::new(seven(pred, "pred")?, seven(target, "target")?);
    let b = box_loss(&pair, kind, &cfg.reiou())?;
    Ok(serde_json::to_string_pretty(&b).expect("serializable") + "\n")
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(line).map_err(|e| CliError::File {
            path: path.to_owned(),
            source: Error::Parse {
                line: i + 1,
                message: e.to_string(),
            },
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn loss_samples(path: &Path, kind: BoxLossKind, cfg: &Config) -> Result<String> {
    let samples: Vec<Sample> = parse_jsonl(path, &read(path)?)?;
    let b = multitask_loss(&samples, &cfg.weights, kind, &cfg.reiou())?;
    Ok(serde_json::to_string_pretty(&b).expect("serializable") + "\n")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitTarget {
    target: BoxSpec,
    #[serde(default)]
    init: Option<BoxSpec>,
}

pub struct FitSummary {
    pub csv: String,
    pub runs: usize,
    pub successes: usize,
}

/// Runs the fitting demo on pairs read from `targets` (a missing `init` is
/// drawn near the target) or on `random` generated pairs. The trace has one
/// row per run and step.
pub fn fit(
    targets: Option<&Path>,
    random: Option<usize>,
    kind: BoxLossKind,
    cfg: &Config,
) -> Result<FitSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pairs: Vec<(ArpBox, ArpBox)> = Vec::new();
    if let Some(path) = targets {
        let lines: Vec<FitTarget> = parse_jsonl(path, &read(path)?)?;
        for t in lines {
            let target = in_file(path, t.target.to_arp())?;
            let init = match t.init {
                Some(spec) => in_file(path, spec.to_arp())?,
                None => {
                    let rect = in_file(
                        path,
                        decode_vertices(&target).and_then(|q| quad_to_rect(&q)),
                    )?;
                    encode_arp(&perturbed(&mut rng, &rect))?
                }
            };
            pairs.push((target, init));
        }
    }
    for _ in 0..random.unwrap_or(0) {
        let (t, i) = random_pair(&mut rng);
        pairs.push((encode_arp(&t)?, encode_arp(&i)?));
    }

    let mut csv = String::from("run,step,loss,iou\n");
    let mut successes = 0;
    for (run, (target, init)) in pairs.iter().enumerate() {
        let out = fit_box(init, target, kind, &cfg.reiou(), &cfg.fit)?;
        for (step, (l, iou)) in out.losses.iter().zip(&out.ious).enumerate() {
            writeln!(csv, "{run},{step},{l},{iou}").unwrap();
        }
        if out.final_iou >= FIT_SUCCESS_IOU {
            successes += 1;
        }
    }
    Ok(FitSummary {
        csv,
        runs: pairs.len(),
        successes,
    })
}

/// Ground truth per image id together with the headers of each file.
pub struct GroundTruthSet {
    pub images: BTreeMap<String, DotaDocument>,
}

impl GroundTruthSet {
    /// A directory contributes every `.txt` file in it; a single file is
    /// one image. Image ids are file stems.
    pub fn load(path: &Path) -> Result<Self> {
        let files: Vec<PathBuf> = if path.is_dir() {
            let entries = fs::read_dir(path).map_err(|source| CliError::Io {
                path: path.to_owned(),
                source,
            })?;
            let mut files = Vec::new();
            for e in entries {
                let p = e
                    .map_err(|source| CliError::Io {
                        path: path.to_owned(),
                        source,
                    })?
                    .path();
                if p.extension().is_some_and(|x| x == "txt") {
                    files.push(p);
                }
            }
            files.sort();
            files
        } else {
            vec![path.to_owned()]
        };
        let mut images = BTreeMap::new();
        for f in files {
            let doc = in_file(&f, parse_dota_document(&read(&f)?))?;
            images.insert(stem(&f), doc);
        }
        Ok(Self { images })
    }

    fn categories(&self) -> impl Iterator<Item = &str> {
        self.images
            .values()
            .flat_map(|d| d.records.iter().map(|r| r.category.as_str()))
    }

    fn ground_truth(&self, vocab: &ClassVocab) -> BTreeMap<String, Vec<GroundTruth>> {
        self.images
            .iter()
            .map(|(id, doc)| {
                let gts = doc
                    .records
                    .iter()
                    .map(|r| GroundTruth {
                        quad: r.quad,
                        class_id: vocab
                            .id(&r.category)
                            .expect("vocabulary built from these records"),
                        difficult: r.difficult,
                    })
                    .collect();
                (id.clone(), gts)
            })
            .collect()
    }
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

fn vocab_for<'a>(names: impl Iterator<Item = &'a str>, dets: &'a [DetectionRecord]) -> ClassVocab {
    let det_names = dets.iter().filter_map(|d| match &d.class {
        ClassRef::Name(n) => Some(n.as_str()),
        ClassRef::Id(_) => None,
    });
    ClassVocab::new(names.chain(det_names))
}

fn load_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    in_file(path, parse_detections(&read(path)?))
}

fn detections_by_image(
    records: &[DetectionRecord],
    vocab: &ClassVocab,
) -> Result<BTreeMap<String, Vec<Detection>>> {
    let mut out: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for r in records {
        out.entry(r.image.clone())
            .or_default()
            .push(r.to_detection(vocab)?);
    }
    Ok(out)
}

/// Rotated NMS per image followed by the horizontal/oblique choice.
fn finalize(
    dets: &BTreeMap<String, Vec<Detection>>,
    cfg: &Config,
) -> BTreeMap<String, Vec<FinalBox>> {
    dets.iter()
        .map(|(id, d)| {
            let kept = r_nms(d, &cfg.nms());
            (
                id.clone(),
                kept.iter()
                    .map(|d| select_final(d, cfg.lambda_thr))
                    .collect(),
            )
        })
        .collect()
}

#[derive(Serialize)]
struct FinalRecord<'a> {
    image: &'a str,
    class: ClassRef,
    score: f64,
    shape: Footprint,
}

pub fn nms(dets_path: &Path, cfg: &Config) -> Result<String> {
    cfg.nms().validate()?;
    let records = load_detections(dets_path)?;
    let vocab = vocab_for(std::iter::empty(), &records);
    let finals = finalize(&detections_by_image(&records, &vocab)?, cfg);
    let mut out = String::new();
    for (image, boxes) in &finals {
        for b in boxes {
            let class = match vocab.names().get(b.class_id as usize) {
                Some(n) => ClassRef::Name(n.clone()),
                None => ClassRef::Id(b.class_id),
            };
            let rec = FinalRecord {
                image,
                class,
                score: b.score,
                shape: b.shape,
            };
            out.push_str(&serde_json::to_string(&rec).expect("serializable"));
            out.push('\n');
        }
    }
    Ok(out)
}

struct EvalInputs {
    gts: BTreeMap<String, Vec<GroundTruth>>,
    dets: BTreeMap<String, Vec<Detection>>,
    vocab: ClassVocab,
}

fn eval_inputs(gt_path: &Path, dets_path: &Path) -> Result<EvalInputs> {
    let gt = GroundTruthSet::load(gt_path)?;
    let records = load_detections(dets_path)?;
    let vocab = vocab_for(gt.categories(), &records);
    Ok(EvalInputs {
        gts: gt.ground_truth(&vocab),
        dets: detections_by_image(&records, &vocab)?,
        vocab,
    })
}

fn report(inputs: &EvalInputs, cfg: &Config, metric: ApMetric) -> Result<EvalReport> {
    let finals = finalize(&inputs.dets, cfg);
    let mut r = evaluate(&finals, &inputs.gts, cfg.match_iou, metric)?;
    r.label_classes(inputs.vocab.names());
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

pub fn eval(
    gt: &Path,
    dets: &Path,
    metric: ApMetric,
    format: ReportFormat,
    cfg: &Config,
) -> Result<String> {
    cfg.nms().validate()?;
    let r = report(&eval_inputs(gt, dets)?, cfg, metric)?;
    Ok(match format {
        ReportFormat::Json => r.to_json() + "\n",
        ReportFormat::Csv => r.to_csv(),
    })
}

/// mAP at each obliquity threshold; everything else is taken from `cfg`.
pub fn sweep(gt: &Path, dets: &Path, thresholds: &[f64], cfg: &Config) -> Result<String> {
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("empty threshold list".into()).into());
    }
    let inputs = eval_inputs(gt, dets)?;
    let mut csv = String::from("threshold,map07,map12\n");
    for &t in thresholds {
        let c = Config {
            lambda_thr: t,
            ..*cfg
        };
        c.validate()?;
        let r = report(&inputs, &c, ApMetric::default())?;
        writeln!(csv, "{t},{:.6},{:.6}", r.map07, r.map12).unwrap();
    }
    Ok(csv)
}

/// Writes one annotation file per tile into `dir`, named
/// `<stem>__<x0>_<y0>.txt`, and returns the written paths.
pub fn tile(
    ann: &Path,
    width: u32,
    height: u32,
    spec: &TileSpec,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let doc = in_file(ann, parse_dota_document(&read(ann)?))?;
    let tiles = tile_annotations(&doc.records, width, height, spec)?;
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_owned(),
        source,
    })?;
    let mut written = Vec::new();
    for (id, records) in tiles {
        let path = dir.join(format!("{}__{id}.txt", stem(ann)));
        let text = write_dota_document(&DotaDocument {
            headers: doc.headers.clone(),
            records: records.into_iter().collect::<Vec<AnnotationRecord>>(),
        })?;
        fs::write(&path, text).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}
