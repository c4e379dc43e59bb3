use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hd3_core::density::Support;
use hd3_core::matcher::MatchOutput;
use hd3_core::propagation::{propagate_sequence, score_segmentation, Guide, LabelProbMap};
use hd3_core::reliability::{
    classify_by_fb_consistency, classify_by_uncertainty, score_classification,
};
use hd3_core::synth::{occluded_pair, stereo_pair, translated_pair, SyntheticPair};
use hd3_core::toolkit::{
    compute_epe_fl, read_flo, read_image, read_kitti_disparity, read_kitti_flow, read_label_png,
    read_pgm, write_confidence_pgm, write_flo, write_gray_png, write_kitti_disparity,
    write_kitti_flow, write_label_png,
};
use hd3_core::{
    compose_full_density, compose_point_estimates, d2v, match_pair, v2d, DisparitySign, FieldKind,
    Hd3Error, Mask, MatchConfig, MatchDensity, MotionField,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

type Fallible<T> = Result<T, Box<dyn Error>>;

/// Probabilistic dense correspondence: matching, evaluation, outlier
/// classification and label propagation.
#[derive(Parser)]
#[command(name = "hd3", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Flow,
    Stereo,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sign {
    /// Horizontal displacement u = -disparity (left reference view).
    Negative,
    /// Horizontal displacement u = +disparity.
    Positive,
}

impl From<Sign> for DisparitySign {
    fn from(s: Sign) -> Self {
        match s {
            Sign::Negative => DisparitySign::NonPositive,
            Sign::Positive => DisparitySign::NonNegative,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Guidance {
    /// Move labels along point estimates.
    Flow,
    /// Move labels along the match densities.
    Density,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scene {
    Flow,
    Stereo,
    Occluded,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a flow or disparity field between two images.
    Match {
        image1: PathBuf,
        image2: PathBuf,
        /// Output field: `.flo`, or `.png` for KITTI 16-bit PNG.
        #[arg(short, long)]
        output: PathBuf,
        /// Write the confidence map as 16-bit PGM.
        #[arg(long)]
        confidence: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "flow")]
        mode: Mode,
        /// Pyramid levels (default 5 for flow, 6 for stereo).
        #[arg(long)]
        levels: Option<usize>,
        /// Search radius per level in pixels.
        #[arg(long)]
        range: Option<i32>,
        /// Softmax temperature over census costs.
        #[arg(long)]
        tau: Option<f64>,
        /// Cost aggregation radius (0 disables).
        #[arg(long)]
        aggregation: Option<usize>,
        #[arg(long, value_enum, default_value = "negative")]
        sign: Sign,
    },
    /// Score an estimated field against ground truth.
    Eval {
        estimate: PathBuf,
        ground_truth: PathBuf,
        /// Sign convention for disparity PNGs.
        #[arg(long, value_enum, default_value = "negative")]
        sign: Sign,
    },
    /// Classify outliers by uncertainty or forward-backward consistency.
    Classify {
        /// Estimated forward field.
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        /// Confidence map (PGM) for uncertainty thresholding.
        #[arg(long, conflicts_with = "backward", required_unless_present = "backward")]
        confidence: Option<PathBuf>,
        #[arg(long, default_value_t = 0.3)]
        sigma: f64,
        /// Backward field for the consistency check.
        #[arg(long)]
        backward: Option<PathBuf>,
        /// Non-occluded mask image (nonzero = non-occluded); default all pixels.
        #[arg(long)]
        noc: Option<PathBuf>,
    },
    /// Propagate a label map through a sequence.
    Propagate {
        /// Seed labels (indexed or 8-bit gray PNG, 255 = unlabeled).
        #[arg(long)]
        labels: PathBuf,
        /// Precomputed `.flo` guides, one per frame step.
        #[arg(long, num_args = 1.., conflicts_with = "frames", required_unless_present = "frames")]
        flows: Vec<PathBuf>,
        /// Frame images; consecutive pairs are matched.
        #[arg(long, num_args = 2..)]
        frames: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "density")]
        guidance: Guidance,
        /// Pyramid levels when matching frames.
        #[arg(long, default_value_t = 3)]
        levels: usize,
        /// Number of classes (default: from the seed labels).
        #[arg(long)]
        classes: Option<usize>,
        /// Ground-truth labels for each propagated frame.
        #[arg(long, num_args = 1..)]
        ground_truth: Vec<PathBuf>,
        /// Directory receiving one label PNG per propagated frame.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Dump the exactly composed full density of a tiny two-level grid.
    Oracle {
        /// Built-in example.
        #[arg(long, value_enum, default_value = "delta", conflicts_with_all = ["input", "seed"])]
        example: Example,
        /// JSON description of the density levels.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Random densities from this seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Atoms beyond this radius are reported as truncated.
        #[arg(long, default_value_t = 8)]
        max_support: i32,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic image pair with ground truth.
    Synth {
        #[arg(long, value_enum, default_value = "flow")]
        scene: Scene,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
        /// Horizontal displacement.
        #[arg(long, default_value_t = 6.0, allow_negative_numbers = true)]
        dx: f64,
        /// Vertical displacement (ignored for stereo).
        #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
        dy: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Example {
    /// Delta densities at both levels.
    Delta,
    /// Coarse delta, fine mass split between two cells.
    Split,
}

fn has_ext(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Reads `.flo`, KITTI flow PNG (RGB) or KITTI disparity PNG (gray).
fn read_field(path: &Path, sign: DisparitySign) -> Fallible<MotionField> {
    if has_ext(path, "flo") {
        return Ok(read_flo(path)?);
    }
    match read_kitti_flow(path) {
        Ok(f) => Ok(f),
        Err(Hd3Error::Format(_)) => Ok(read_kitti_disparity(path, sign)?),
        Err(e) => Err(e.into()),
    }
}

fn write_field(path: &Path, f: &MotionField, sign: DisparitySign) -> Fallible<()> {
    if has_ext(path, "png") {
        match f.kind() {
            FieldKind::Flow => write_kitti_flow(path, f)?,
            FieldKind::Stereo => {
                // KITTI reserves raw 0 for invalid pixels.
                let mut f = f.clone();
                let mut dropped = 0usize;
                for y in 0..f.height() {
                    for x in 0..f.width() {
                        if f.is_valid(x, y) && (f.get(x, y)[0] * 256.0).round() == 0.0 {
                            f.set_invalid(x, y);
                            dropped += 1;
                        }
                    }
                }
                if dropped > 0 {
                    eprintln!("note: {dropped} pixels with zero disparity written as invalid");
                }
                write_kitti_disparity(path, &f, sign)?
            }
        }
    } else {
        write_flo(path, f)?;
    }
    Ok(())
}

fn read_mask(path: &Path) -> Fallible<Mask> {
    let img = read_image(path)?;
    Ok(Mask::from_fn(img.width(), img.height(), |x, y| {
        img.get(x, y, 0) > 0.5
    }))
}

fn write_mask(path: &Path, m: &Mask) -> Fallible<()> {
    let (w, h) = m.size();
    let img = hd3_core::ScalarImage::from_fn(w, h, |x, y| f64::from(u8::from(m.get(x, y))));
    Ok(write_gray_png(path, &img)?)
}

#[allow(clippy::too_many_arguments)]
fn run_match(
    image1: &Path,
    image2: &Path,
    output: &Path,
    confidence: Option<&Path>,
    mode: Mode,
    levels: Option<usize>,
    range: Option<i32>,
    tau: Option<f64>,
    aggregation: Option<usize>,
    sign: Sign,
) -> Fallible<()> {
    let mut cfg = match mode {
        Mode::Flow => MatchConfig::flow(),
        Mode::Stereo => MatchConfig::stereo(),
    };
    if let Some(l) = levels {
        cfg.levels = l;
    }
    if let Some(r) = range {
        cfg.range = r;
    }
    if let Some(t) = tau {
        cfg.tau = t;
    }
    if let Some(a) = aggregation {
        cfg.aggregation = a;
    }
    cfg.stereo_sign = sign.into();
    let i1 = read_image(image1)?.to_gray();
    let i2 = read_image(image2)?.to_gray();
    let out = match_pair(&i1, &i2, &cfg)?;
    write_field(output, &out.field, cfg.stereo_sign)?;
    if let Some(c) = confidence {
        write_confidence_pgm(c, &out.confidence)?;
    }
    let mean_conf = out.confidence.data().iter().sum::<f64>() / out.confidence.data().len() as f64;
    println!(
        "wrote {} ({}x{}, {} levels, mean confidence {mean_conf:.3})",
        output.display(),
        out.field.width(),
        out.field.height(),
        cfg.levels
    );
    Ok(())
}

fn run_eval(estimate: &Path, ground_truth: &Path, sign: Sign) -> Fallible<()> {
    let est = read_field(estimate, sign.into())?;
    let gt = read_field(ground_truth, sign.into())?;
    println!("{}", compute_epe_fl(&est, &gt)?);
    Ok(())
}

fn run_classify(
    estimate: &Path,
    ground_truth: &Path,
    confidence: Option<&Path>,
    sigma: f64,
    backward: Option<&Path>,
    noc: Option<&Path>,
) -> Fallible<()> {
    let est = read_field(estimate, DisparitySign::NonPositive)?;
    let gt = read_field(ground_truth, DisparitySign::NonPositive)?;
    let pred = match (confidence, backward) {
        (Some(c), _) => classify_by_uncertainty(&read_pgm(c)?, sigma)?,
        (None, Some(b)) => {
            classify_by_fb_consistency(&est, &read_field(b, DisparitySign::NonPositive)?)?
        }
        (None, None) => unreachable!("clap requires one of the two"),
    };
    let noc = match noc {
        Some(p) => read_mask(p)?,
        None => Mask::new(gt.width(), gt.height(), true),
    };
    let mut report = score_classification(&pred, &gt, &est, &noc)?;
    report.sigma = confidence.map(|_| sigma);
    print!("{report}");
    for (k, v) in report.key_values() {
        println!("{k}={v:.4}");
    }
    Ok(())
}

/// Density whose cells are offsets from `round(f)`, so that density and
/// flow guidance move labels identically.
fn density_guide(f: &MotionField) -> (MatchDensity, MotionField) {
    let base = MotionField::from_fn(f.width(), f.height(), f.kind(), |x, y| {
        let v = f.get(x, y);
        f.is_valid(x, y).then(|| [v[0].round(), v[1].round()])
    });
    let residual = f.sub(&base).expect("same size");
    let support = match f.kind() {
        FieldKind::Flow => Support::flow(1),
        FieldKind::Stereo => Support::stereo(1),
    };
    (v2d(&residual, support), base)
}

/// Finest-level residual density and the prior it is relative to.
fn matcher_guide(out: &MatchOutput) -> Fallible<(MatchDensity, MotionField)> {
    let last = out.levels.last().ok_or("matcher produced no levels")?;
    let prior = last.running_field.sub(&last.residual_field)?;
    Ok((last.residual_density.clone(), prior))
}

#[allow(clippy::too_many_arguments)]
fn run_propagate(
    labels: &Path,
    flows: &[PathBuf],
    frames: &[PathBuf],
    guidance: Guidance,
    levels: usize,
    classes: Option<usize>,
    ground_truth: &[PathBuf],
    output: Option<&Path>,
) -> Fallible<()> {
    let seed_labels = read_label_png(labels)?;
    let classes = classes.unwrap_or_else(|| seed_labels.class_count()).max(1);
    let seed = LabelProbMap::from_labels(&seed_labels, classes)?;

    let mut fields = Vec::new();
    let mut densities = Vec::new();
    if frames.is_empty() {
        for p in flows {
            let f = read_flo(p)?;
            densities.push(density_guide(&f));
            fields.push(f);
        }
    } else {
        let cfg = MatchConfig::flow().with_levels(levels);
        for pair in frames.windows(2) {
            let i1 = read_image(&pair[0])?.to_gray();
            let i2 = read_image(&pair[1])?.to_gray();
            let out = match_pair(&i1, &i2, &cfg)?;
            densities.push(matcher_guide(&out)?);
            fields.push(out.field);
        }
    }
    let guides: Vec<Guide<'_>> = match guidance {
        Guidance::Flow => fields.iter().map(Guide::Flow).collect(),
        Guidance::Density => densities
            .iter()
            .map(|(density, base)| Guide::Density {
                density,
                base: Some(base),
            })
            .collect(),
    };
    if !ground_truth.is_empty() && ground_truth.len() != guides.len() {
        return Err(format!(
            "{} ground-truth maps for {} propagated frames",
            ground_truth.len(),
            guides.len()
        )
        .into());
    }
    let maps = propagate_sequence(&seed, &guides)?;
    if let Some(dir) = output {
        fs::create_dir_all(dir)?;
    }
    for (t, map) in maps.iter().enumerate() {
        let pred = map.argmax();
        if let Some(dir) = output {
            write_label_png(dir.join(format!("labels_{:03}.png", t + 1)), &pred)?;
        }
        let known = pred.labels.iter().flatten().count();
        match ground_truth.get(t) {
            Some(g) => {
                let s = score_segmentation(&pred, &read_label_png(g)?, classes)?;
                println!(
                    "frame={} known={known} miou={:.2} macc={:.2}",
                    t + 1,
                    s.miou,
                    s.macc
                );
            }
            None => println!("frame={} known={known}", t + 1),
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct OracleInput {
    /// `"flow"` or `"stereo"`.
    kind: String,
    radius: i32,
    /// Coarsest first; each pixel lists its support masses in row-major
    /// cell order, or `null` when invalid.
    levels: Vec<OracleLevel>,
}

#[derive(Deserialize)]
struct OracleLevel {
    width: usize,
    height: usize,
    pixels: Vec<Option<Vec<f64>>>,
}

#[derive(Serialize)]
struct OraclePixel {
    x: usize,
    y: usize,
    atoms: Vec<([i32; 2], f64)>,
    truncated: f64,
    point: Option<[f64; 2]>,
}

fn delta(support: Support, d: [i32; 2]) -> Vec<f64> {
    let mut m = vec![0.0; support.len()];
    m[support.index_of(d).expect("cell in support")] = 1.0;
    m
}

fn oracle_levels(example: Example, input: Option<&Path>, seed: Option<u64>) -> Fallible<Vec<MatchDensity>> {
    if let Some(path) = input {
        let spec: OracleInput = serde_json::from_str(&fs::read_to_string(path)?)?;
        let kind = match spec.kind.as_str() {
            "flow" => FieldKind::Flow,
            "stereo" => FieldKind::Stereo,
            other => return Err(format!("unknown kind {other:?}").into()),
        };
        let support = Support::new(kind, spec.radius)?;
        return spec
            .levels
            .into_iter()
            .map(|l| {
                if l.pixels.len() != l.width * l.height {
                    return Err(format!(
                        "{} pixels for a {}x{} level",
                        l.pixels.len(),
                        l.width,
                        l.height
                    )
                    .into());
                }
                Ok(MatchDensity::from_fn(l.width, l.height, support, |x, y| {
                    l.pixels[y * l.width + x].clone()
                })?)
            })
            .collect();
    }
    let support = Support::flow(1);
    if let Some(seed) = seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut random = |w, h| {
            MatchDensity::from_fn(w, h, support, |_, _| {
                let m: Vec<f64> = (0..support.len()).map(|_| rng.gen::<f64>()).collect();
                let s: f64 = m.iter().sum();
                Some(m.into_iter().map(|v| v / s).collect())
            })
        };
        return Ok(vec![random(1, 1)?, random(2, 2)?]);
    }
    let fine = match example {
        Example::Delta => delta(support, [0, 1]),
        Example::Split => {
            let mut m = delta(support, [0, 0]);
            m[support.index_of([0, 0]).expect("center")] = 0.5;
            m[support.index_of([1, 0]).expect("cell")] = 0.5;
            m
        }
    };
    Ok(vec![
        MatchDensity::from_fn(1, 1, support, |_, _| Some(delta(support, [1, 0])))?,
        MatchDensity::from_fn(2, 2, support, |_, _| Some(fine.clone()))?,
    ])
}

fn run_oracle(
    example: Example,
    input: Option<&Path>,
    seed: Option<u64>,
    max_support: i32,
    json: bool,
) -> Fallible<()> {
    let levels = oracle_levels(example, input, seed)?;
    let full = compose_full_density(&levels, max_support)?;
    let residuals: Vec<MotionField> = levels.iter().map(d2v).collect();
    let point = compose_point_estimates(&residuals)?;
    let mut pixels = Vec::new();
    for y in 0..full.height() {
        for x in 0..full.width() {
            pixels.push(OraclePixel {
                x,
                y,
                atoms: full.atoms(x, y).iter().map(|a| (a.offset, a.mass)).collect(),
                truncated: full.truncated(x, y),
                point: point.value(x, y),
            });
        }
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&pixels)?);
        return Ok(());
    }
    for p in &pixels {
        let atoms: Vec<String> = p
            .atoms
            .iter()
            .map(|(d, m)| format!("({},{}):{m:.6}", d[0], d[1]))
            .collect();
        let point = p
            .point
            .map_or("invalid".to_string(), |v| format!("({:.3},{:.3})", v[0], v[1]));
        println!(
            "x={} y={} atoms={} truncated={:.6} point={point}",
            p.x,
            p.y,
            atoms.join(" "),
            p.truncated
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_synth(
    scene: Scene,
    seed: u64,
    width: usize,
    height: usize,
    dx: f64,
    dy: f64,
    output: &Path,
) -> Fallible<()> {
    let pair: SyntheticPair = match scene {
        Scene::Flow => translated_pair(width, height, [dx, dy], seed),
        Scene::Stereo => stereo_pair(width, height, dx, seed),
        Scene::Occluded => {
            let band = width * 3 / 8..width * 5 / 8;
            occluded_pair(width, height, [dx, dy], band, seed)
        }
    };
    fs::create_dir_all(output)?;
    write_gray_png(output.join("frame1.png"), &pair.i1)?;
    write_gray_png(output.join("frame2.png"), &pair.i2)?;
    write_flo(output.join("gt.flo"), &pair.gt)?;
    write_mask(&output.join("noc.png"), &pair.noc)?;
    println!("wrote frame1.png frame2.png gt.flo noc.png to {}", output.display());
    Ok(())
}

fn run(cli: Cli) -> Fallible<()> {
    match cli.command {
        Command::Match {
            image1,
            image2,
            output,
            confidence,
            mode,
            levels,
            range,
            tau,
            aggregation,
            sign,
        } => run_match(
            &image1,
            &image2,
            &output,
            confidence.as_deref(),
            mode,
            levels,
            range,
            tau,
            aggregation,
            sign,
        ),
        Command::Eval {
            estimate,
            ground_truth,
            sign,
        } => run_eval(&estimate, &ground_truth, sign),
        Command::Classify {
            estimate,
            ground_truth,
            confidence,
            sigma,
            backward,
            noc,
        } => run_classify(
            &estimate,
            &ground_truth,
            confidence.as_deref(),
            sigma,
            backward.as_deref(),
            noc.as_deref(),
        ),
        Command::Propagate {
            labels,
            flows,
            frames,
            guidance,
            levels,
            classes,
            ground_truth,
            output,
        } => run_propagate(
            &labels,
            &flows,
            &frames,
            guidance,
            levels,
            classes,
            &ground_truth,
            output.as_deref(),
        ),
        Command::Oracle {
            example,
            input,
            seed,
            max_support,
            json,
        } => run_oracle(example, input.as_deref(), seed, max_support, json),
        Command::Synth {
            scene,
            seed,
            width,
            height,
            dx,
            dy,
            output,
        } => run_synth(scene, seed, width, height, dx, dy, &output),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hd3_core::toolkit::LabelImage;

    #[test]
    fn density_guide_matches_flow_guide() {
        let f = MotionField::from_fn(6, 4, FieldKind::Flow, |x, y| {
            Some([x as f64 * 0.7 - 2.0, 1.3 - y as f64 * 0.45])
        });
        let labels = LabelImage::new(6, 4, (0..24).map(|i| Some(i % 3)).collect()).unwrap();
        let seed = LabelProbMap::from_labels(&labels, 3).unwrap();
        let (density, base) = density_guide(&f);
        let a = propagate_sequence(&seed, &[Guide::Flow(&f)]).unwrap();
        let b = propagate_sequence(
            &seed,
            &[Guide::Density {
                density: &density,
                base: Some(&base),
            }],
        )
        .unwrap();
        for y in 0..4 {
            for x in 0..6 {
                assert_eq!(a[0].is_known(x, y), b[0].is_known(x, y));
                for (p, q) in a[0].probs(x, y).iter().zip(b[0].probs(x, y)) {
                    assert!((p - q).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn builtin_oracle_examples() {
        let levels = oracle_levels(Example::Delta, None, None).unwrap();
        let full = compose_full_density(&levels, 8).unwrap();
        assert_eq!(full.atoms(1, 1).len(), 1);
        assert_eq!(full.atoms(1, 1)[0].offset, [2, 1]);
        let levels = oracle_levels(Example::Split, None, None).unwrap();
        let full = compose_full_density(&levels, 8).unwrap();
        assert_eq!(full.mass_at(0, 0, [2, 0]), 0.5);
        assert_eq!(full.mass_at(0, 0, [3, 0]), 0.5);
    }
}
