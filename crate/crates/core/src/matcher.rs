//! Coarse-to-fine probabilistic matcher.
//!
//! At each level, frame-2 descriptors are sampled at `x + round(prior(x)) + d`
//! for every support offset `d`, turned into census costs, and converted into
//! a match density by a softmax over negated costs. Those masses are then
//! splatted onto residual cells relative to the unrounded prior, giving the
//! residual density. Its local expectation over W*, added to the prior, is
//! the running estimate passed (upsampled) to the next level.
//!
//! Binary descriptors do not interpolate well, so frame 2 is sampled on its
//! integer grid and the fractional part of the prior is carried by the
//! splat instead.

use crate::density::{confidence_map, d2v, v2d, MatchDensity, Splat, Support};
use crate::error::{check_same_size, Hd3Error, Result};
use crate::features::{build_pyramid, check_pyramid_geometry, match_cost, CensusImage};
use crate::field::{downsample_field, upsample_field, FieldKind, MotionField, ScalarImage};

/// Support radius used at every level.
pub const DEFAULT_RANGE: i32 = 4;
pub const DEFAULT_FLOW_LEVELS: usize = 5;
pub const DEFAULT_STEREO_LEVELS: usize = 6;
/// Softmax temperature. Small enough that a clear match dominates the 81
/// candidates, large enough that ambiguous costs keep the mass spread.
pub const DEFAULT_TAU: f64 = 0.03;
/// Cost-averaging window radius (5×5 window).
pub const DEFAULT_AGGREGATION: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    Flow,
    Stereo,
}

impl MatchMode {
    pub fn kind(self) -> FieldKind {
        match self {
            MatchMode::Flow => FieldKind::Flow,
            MatchMode::Stereo => FieldKind::Stereo,
        }
    }
}

/// Sign every stereo point estimate is clipped to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisparitySign {
    /// Horizontal displacement `<= 0`: frame 1 is the left view.
    NonPositive,
    /// Horizontal displacement `>= 0`: frame 1 is the right view.
    NonNegative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    pub mode: MatchMode,
    pub levels: usize,
    pub range: i32,
    /// Radius of the square window costs are averaged over (0: per pixel).
    pub aggregation: usize,
    /// Softmax temperature on costs in `[0, 1]`.
    pub tau: f64,
    pub stereo_sign: DisparitySign,
}

impl MatchConfig {
    pub fn flow() -> Self {
        Self {
            mode: MatchMode::Flow,
            levels: DEFAULT_FLOW_LEVELS,
            range: DEFAULT_RANGE,
            aggregation: DEFAULT_AGGREGATION,
            tau: DEFAULT_TAU,
            stereo_sign: DisparitySign::NonPositive,
        }
    }

    pub fn stereo() -> Self {
        Self {
            mode: MatchMode::Stereo,
            levels: DEFAULT_STEREO_LEVELS,
            ..Self::flow()
        }
    }

    pub fn with_levels(mut self, levels: usize) -> Self {
        self.levels = levels;
        self
    }

    pub fn with_aggregation(mut self, radius: usize) -> Self {
        self.aggregation = radius;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn support(&self) -> Support {
        Support::new(self.mode.kind(), self.range).expect("validated range")
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Hd3Error::InvalidParameter("levels must be at least 1".into()));
        }
        if self.range < 1 {
            return Err(Hd3Error::InvalidParameter(format!(
                "range must be at least 1, got {}",
                self.range
            )));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Hd3Error::InvalidParameter(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self::flow()
    }
}

/// Everything produced at one pyramid level.
#[derive(Debug, Clone)]
pub struct LevelOutput {
    pub residual_density: MatchDensity,
    /// Local expectation of `residual_density`, clipped in stereo mode so the
    /// running estimate keeps the configured sign.
    pub residual_field: MotionField,
    /// `upsample(previous running_field) + residual_field`.
    pub running_field: MotionField,
    pub confidence: ScalarImage,
}

/// Full-resolution estimate plus per-level diagnostics.
#[derive(Debug, Clone)]
pub struct MatchOutput {
    pub field: MotionField,
    /// W* mass of the finest-level density.
    pub confidence: ScalarImage,
    pub levels: Vec<LevelOutput>,
}

/// Census costs for every pixel and support offset, pixel-major in support
/// order. Offsets are taken around the integer base `x + round(prior(x))`;
/// samples outside frame 2 cost 1. With `aggregation > 0`, the cost of a
/// displacement is averaged over the surrounding `(2a + 1)²` window, all
/// evaluated at that same displacement, over neighbors whose sample stays
/// inside frame 2.
pub fn cost_volume(
    f1: &CensusImage,
    f2: &CensusImage,
    prior: &MotionField,
    support: Support,
    aggregation: usize,
) -> Result<Vec<f64>> {
    check_same_size(f1.size(), f2.size())?;
    check_same_size(f1.size(), prior.size())?;
    let (w, h) = f1.size();
    let n = support.len();
    let a = aggregation as i64;
    let sample = |x: i64, y: i64, dx: i64, dy: i64| {
        let (tx, ty) = (x + dx, y + dy);
        let inside = tx >= 0 && ty >= 0 && tx < w as i64 && ty < h as i64;
        inside.then(|| f2.get(tx as usize, ty as usize))
    };
    let mut costs = vec![0.0; w * h * n];
    for y in 0..h as i64 {
        let ys = (y - a).max(0)..=(y + a).min(h as i64 - 1);
        for x in 0..w as i64 {
            let xs = (x - a).max(0)..=(x + a).min(w as i64 - 1);
            let b = integer_base(prior.value(x as usize, y as usize), support.kind());
            let i = (y as usize * w + x as usize) * n;
            for (k, c) in costs[i..i + n].iter_mut().enumerate() {
                let d = support.cell(k);
                let (dx, dy) = (b[0] + i64::from(d[0]), b[1] + i64::from(d[1]));
                let own = f1.get(x as usize, y as usize);
                *c = match sample(x, y, dx, dy) {
                    None => 1.0,
                    Some(t) if a == 0 => match_cost(own, Some(t)),
                    Some(_) => {
                        // Neighbors whose own sample leaves the frame are skipped.
                        let mut sum = 0.0;
                        let mut count = 0usize;
                        for yy in ys.clone() {
                            for xx in xs.clone() {
                                if let Some(t) = sample(xx, yy, dx, dy) {
                                    sum += match_cost(f1.get(xx as usize, yy as usize), Some(t));
                                    count += 1;
                                }
                            }
                        }
                        sum / count as f64
                    }
                };
            }
        }
    }
    Ok(costs)
}

fn integer_base(prior: Option<[f64; 2]>, kind: FieldKind) -> [i64; 2] {
    let p = prior.unwrap_or([0.0; 2]);
    match kind {
        FieldKind::Flow => [p[0].round() as i64, p[1].round() as i64],
        FieldKind::Stereo => [p[0].round() as i64, 0],
    }
}

/// Re-expresses masses over offsets from the rounded base as masses over
/// residual cells relative to the prior: each offset `d` sits at residual
/// `round(p) - p + d` and is splatted bilinearly (clamped to the support).
fn resplat(mass: &[f64], prior: Option<[f64; 2]>, support: Support) -> Vec<f64> {
    let p = prior.unwrap_or([0.0; 2]);
    let b = integer_base(prior, support.kind());
    let delta = [b[0] as f64 - p[0], b[1] as f64 - p[1]];
    if delta == [0.0, 0.0] {
        return mass.to_vec();
    }
    let r = f64::from(support.radius());
    let mut out = vec![0.0; mass.len()];
    for (k, &m) in mass.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let d = support.cell(k);
        let v = [
            (delta[0] + f64::from(d[0])).clamp(-r, r),
            (delta[1] + f64::from(d[1])).clamp(-r, r),
        ];
        for (cell, wt) in Splat::new(v, support.kind()).iter() {
            if wt != 0.0 {
                let j = support.index_of(cell).expect("clamped into support");
                out[j] += m * wt;
            }
        }
    }
    out
}

/// `softmax(-costs / tau)`, computed stably.
pub fn softmax_costs(costs: &[f64], tau: f64) -> Vec<f64> {
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out: Vec<f64> = costs.iter().map(|c| (-(c - min) / tau).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// One level of the coarse-to-fine pipeline.
///
/// `prior` is the upsampled running estimate of the coarser level (zero
/// at the coarsest level).
pub fn match_level(
    f1: &CensusImage,
    f2: &CensusImage,
    prior: &MotionField,
    cfg: &MatchConfig,
) -> Result<LevelOutput> {
    cfg.validate()?;
    let support = cfg.support();
    let costs = cost_volume(f1, f2, prior, support, cfg.aggregation)?;
    let (w, h) = f1.size();
    let n = support.len();
    let residual_density = MatchDensity::from_fn(w, h, support, |x, y| {
        let i = (y * w + x) * n;
        let mass = softmax_costs(&costs[i..i + n], cfg.tau);
        Some(resplat(&mass, prior.value(x, y), support))
    })?;
    let mut residual_field = d2v(&residual_density);
    if cfg.mode == MatchMode::Stereo {
        clip_residual(&mut residual_field, prior, cfg.stereo_sign);
    }
    let running_field = prior.add(&residual_field)?;
    let confidence = confidence_map(&residual_density);
    Ok(LevelOutput {
        residual_density,
        residual_field,
        running_field,
        confidence,
    })
}

/// Limits each residual so `prior + residual` has the configured sign.
/// The prior already has it, being an upsampled clipped estimate.
fn clip_residual(residual: &mut MotionField, prior: &MotionField, sign: DisparitySign) {
    for y in 0..residual.height() {
        for x in 0..residual.width() {
            let (Some(r), Some(p)) = (residual.value(x, y), prior.value(x, y)) else {
                continue;
            };
            let bound = -p[0];
            let u = match sign {
                DisparitySign::NonPositive => r[0].min(bound),
                DisparitySign::NonNegative => r[0].max(bound),
            };
            residual.set(x, y, [u, 0.0]);
        }
    }
}

/// Runs the full pipeline on an image pair.
pub fn match_pair(i1: &ScalarImage, i2: &ScalarImage, cfg: &MatchConfig) -> Result<MatchOutput> {
    cfg.validate()?;
    check_same_size(i1.size(), i2.size())?;
    check_pyramid_geometry(i1.width(), i1.height(), cfg.levels)?;
    let p1 = build_pyramid(i1, cfg.levels)?;
    let p2 = build_pyramid(i2, cfg.levels)?;
    let kind = cfg.mode.kind();

    let mut levels: Vec<LevelOutput> = Vec::with_capacity(cfg.levels);
    for (f1, f2) in p1.levels().iter().zip(p2.levels()) {
        let prior = match levels.last() {
            Some(prev) => upsample_field(&prev.running_field),
            None => MotionField::zeros(f1.width(), f1.height(), kind),
        };
        levels.push(match_level(f1, f2, &prior, cfg)?);
    }
    let last = levels.last().expect("at least one level");
    Ok(MatchOutput {
        field: last.running_field.clone(),
        confidence: last.confidence.clone(),
        levels,
    })
}

/// Prior used at each level: zero at the coarsest, upsampled running
/// estimate of the previous level otherwise.
fn level_prior(outputs: &[LevelOutput], l: usize) -> MotionField {
    if l == 0 {
        let f = &outputs[0].running_field;
        MotionField::zeros(f.width(), f.height(), f.kind())
    } else {
        upsample_field(&outputs[l - 1].running_field)
    }
}

/// Per-level KL loss of predicted residual densities against the ground
/// truth. `gt` is at the finest level's resolution; each level compares
/// against `v2d(downsample(gt) - prior)`, excluding pixels whose residual
/// falls outside the support.
pub fn evaluate_levels(gt: &MotionField, outputs: &[LevelOutput]) -> Result<Vec<f64>> {
    let finest = outputs
        .last()
        .ok_or_else(|| Hd3Error::InvalidParameter("no level outputs".into()))?;
    check_same_size(finest.running_field.size(), gt.size())?;
    let n = outputs.len();
    let mut losses = Vec::with_capacity(n);
    for (l, out) in outputs.iter().enumerate() {
        let gt_l = downsample_field(gt, 1 << (n - 1 - l))?;
        let residual = gt_l.sub(&level_prior(outputs, l))?;
        let p_gt = v2d(&residual, out.residual_density.support());
        losses.push(crate::density::kl_loss(&p_gt, &out.residual_density)?);
    }
    Ok(losses)
}

/// Exact decomposition of a ground-truth field into per-level outputs:
/// each level's density is the splat of `downsample(gt) - prior`, so the
/// running estimates telescope back to the ground truth.
pub fn decompose_field(gt: &MotionField, levels: usize, support: Support) -> Result<Vec<LevelOutput>> {
    if levels == 0 {
        return Err(Hd3Error::InvalidParameter("levels must be at least 1".into()));
    }
    let mut outputs: Vec<LevelOutput> = Vec::with_capacity(levels);
    for l in 0..levels {
        let gt_l = downsample_field(gt, 1 << (levels - 1 - l))?;
        let prior = match outputs.last() {
            Some(prev) => upsample_field(&prev.running_field),
            None => MotionField::zeros(gt_l.width(), gt_l.height(), support.kind()),
        };
        let residual = gt_l.sub(&prior)?;
        let residual_density = v2d(&residual, support);
        let residual_field = d2v(&residual_density);
        let running_field = prior.add(&residual_field)?;
        let confidence = confidence_map(&residual_density);
        outputs.push(LevelOutput {
            residual_density,
            residual_field,
            running_field,
            confidence,
        });
    }
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::kl_pixel;
    use crate::features::census_transform;
    use crate::synth::{stereo_pair, translated_pair, Texture};
    use proptest::prelude::*;

    fn textured(w: usize, h: usize, seed: u64) -> ScalarImage {
        Texture::new(w, h, 8, 4, seed).render(w, h, [0.0, 0.0])
    }

    #[test]
    fn identical_frames_give_zero_residual() {
        let img = textured(32, 32, 3);
        let c = census_transform(&img);
        let prior = MotionField::zeros(32, 32, FieldKind::Flow);
        let out = match_level(&c, &c, &prior, &MatchConfig::flow()).unwrap();
        for y in 4..28 {
            for x in 4..28 {
                let v = out.residual_field.get(x, y);
                assert!(v[0].abs() < 0.05 && v[1].abs() < 0.05, "({x},{y}) {v:?}");
                assert!(out.confidence.get(x, y, 0) > 0.9);
            }
        }
    }

    #[test]
    fn integer_shift_mode_matches_brute_force_costs() {
        let tex = Texture::new(48, 32, 12, 4, 7);
        let i1 = tex.render(48, 32, [0.0, 0.0]);
        let i2 = tex.render(48, 32, [3.0, 0.0]);
        let (c1, c2) = (census_transform(&i1), census_transform(&i2));
        let prior = MotionField::zeros(48, 32, FieldKind::Flow);
        let cfg = MatchConfig::flow().with_aggregation(0);
        let out = match_level(&c1, &c2, &prior, &cfg).unwrap();
        let support = cfg.support();
        let mut ambiguous = 0;
        for y in 6..26 {
            for x in 6..38 {
                // Independent evaluation: popcount of XOR over all offsets.
                let brute: Vec<u32> = support
                    .cells()
                    .map(|d| {
                        let tx = (x as i32 + d[0]) as usize;
                        let ty = (y as i32 + d[1]) as usize;
                        (c1.get(x, y).0 ^ c2.get(tx, ty).0).count_ones()
                    })
                    .collect();
                let k3 = support.index_of([3, 0]).unwrap();
                assert_eq!(brute[k3], 0);
                // Local extrema have all-equal bits and match several offsets.
                if brute.iter().filter(|&&c| c == 0).count() > 1 {
                    ambiguous += 1;
                    continue;
                }
                let p = out.residual_density.pixel(x, y);
                let mode = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
                assert_eq!(support.cell(mode), [3, 0], "({x},{y})");
            }
        }
        assert!(ambiguous < 40, "{ambiguous} ambiguous pixels");
    }

    #[test]
    fn textureless_input_gives_uniform_density() {
        let img = ScalarImage::filled(32, 32, 1, 0.5);
        let c = census_transform(&img);
        let prior = MotionField::zeros(32, 32, FieldKind::Flow);
        let out = match_level(&c, &c, &prior, &MatchConfig::flow()).unwrap();
        for y in 4..28 {
            for x in 4..28 {
                for &m in out.residual_density.pixel(x, y) {
                    assert!((m - 1.0 / 81.0).abs() < 1e-12);
                }
                assert!((out.confidence.get(x, y, 0) - 4.0 / 81.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn running_field_recursion_is_exact() {
        let p = translated_pair(64, 64, [2.5, -1.25], 11);
        let out = match_pair(&p.i1, &p.i2, &MatchConfig::flow().with_levels(3)).unwrap();
        for l in 0..out.levels.len() {
            let expected = level_prior(&out.levels, l)
                .add(&out.levels[l].residual_field)
                .unwrap();
            assert_eq!(expected, out.levels[l].running_field);
            assert_eq!(
                out.levels[l].residual_field,
                d2v(&out.levels[l].residual_density),
            );
        }
        assert_eq!(&out.field, &out.levels[2].running_field);
    }

    #[test]
    fn stereo_estimates_keep_sign() {
        for (d, sign) in [(-3.0, DisparitySign::NonPositive), (3.0, DisparitySign::NonNegative)] {
            let p = stereo_pair(64, 32, d, 5);
            let mut cfg = MatchConfig::stereo().with_levels(2);
            cfg.stereo_sign = sign;
            let out = match_pair(&p.i1, &p.i2, &cfg).unwrap();
            for lvl in &out.levels {
                for v in lvl.running_field.vectors() {
                    match sign {
                        DisparitySign::NonPositive => assert!(v[0] <= 0.0),
                        DisparitySign::NonNegative => assert!(v[0] >= 0.0),
                    }
                    assert_eq!(v[1], 0.0);
                }
            }
        }
    }

    #[test]
    fn identical_pair_has_zero_flow() {
        let img = textured(64, 64, 2);
        let out = match_pair(&img, &img, &MatchConfig::flow().with_levels(3)).unwrap();
        let epe: f64 = out.field.vectors().iter().map(|v| v[0].hypot(v[1])).sum::<f64>() / 4096.0;
        assert!(epe < 0.1, "epe {epe}");
    }

    #[test]
    fn rejects_bad_geometry_and_config() {
        let a = ScalarImage::filled(64, 64, 1, 0.0);
        let b = ScalarImage::filled(32, 64, 1, 0.0);
        assert!(matches!(
            match_pair(&a, &b, &MatchConfig::flow().with_levels(2)),
            Err(Hd3Error::ResolutionMismatch { .. })
        ));
        assert!(match_pair(&a, &a, &MatchConfig::flow().with_levels(5)).is_err());
        assert!(match_pair(&a, &a, &MatchConfig::flow().with_tau(0.0)).is_err());
        let c = census_transform(&a);
        let prior = MotionField::zeros(32, 32, FieldKind::Flow);
        assert!(match_level(&c, &c, &prior, &MatchConfig::flow()).is_err());
    }

    #[test]
    fn fractional_prior_is_carried_by_the_density() {
        // Exact integer shift of 3 seen through a prior of 2.6: the masses sit
        // on residual 0.4, so the running estimate lands on 3.
        let tex = Texture::new(48, 32, 12, 4, 9);
        let c1 = census_transform(&tex.render(48, 32, [0.0, 0.0]));
        let c2 = census_transform(&tex.render(48, 32, [3.0, 0.0]));
        let prior = MotionField::constant(48, 32, FieldKind::Flow, [2.6, 0.0]);
        let out = match_level(&c1, &c2, &prior, &MatchConfig::flow().with_tau(0.01)).unwrap();
        for y in 8..24 {
            for x in 8..36 {
                let v = out.running_field.get(x, y);
                assert!((v[0] - 3.0).abs() < 1e-6 && v[1].abs() < 1e-6, "({x},{y}) {v:?}");
            }
        }
    }

    #[test]
    fn evaluate_levels_examples() {
        let gt = crate::synth::smooth_field(32, 32, FieldKind::Flow, 2.0, 4);
        let outputs = decompose_field(&gt, 3, Support::flow(4)).unwrap();
        for kl in evaluate_levels(&gt, &outputs).unwrap() {
            assert!(kl.abs() < 1e-9);
        }

        let zero = MotionField::zeros(16, 16, FieldKind::Flow);
        let uniform = |w| LevelOutput {
            residual_density: MatchDensity::uniform(w, w, Support::flow(4)),
            residual_field: MotionField::zeros(w, w, FieldKind::Flow),
            running_field: MotionField::zeros(w, w, FieldKind::Flow),
            confidence: ScalarImage::filled(w, w, 1, 4.0 / 81.0),
        };
        let outputs = vec![uniform(8), uniform(16)];
        for kl in evaluate_levels(&zero, &outputs).unwrap() {
            assert!((kl - 81f64.ln()).abs() < 1e-9);
        }

        let g = MotionField::constant(4, 4, FieldKind::Flow, [0.3, 0.7]);
        let outputs = decompose_field(&g, 1, Support::flow(4)).unwrap();
        assert!(evaluate_levels(&g, &outputs).unwrap()[0].abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn sharper_softmax_never_increases_kl_at_argmin(
            costs in prop::collection::vec(0.0f64..1.0, 2..40),
            t1 in 0.01f64..1.0,
            t2 in 0.01f64..1.0,
        ) {
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let best = (0..costs.len()).min_by(|&a, &b| costs[a].total_cmp(&costs[b])).unwrap();
            let mut delta = vec![0.0; costs.len()];
            delta[best] = 1.0;
            let kl_lo = kl_pixel(&delta, &softmax_costs(&costs, lo));
            let kl_hi = kl_pixel(&delta, &softmax_costs(&costs, hi));
            prop_assert!(kl_lo <= kl_hi + 1e-12);
        }

        #[test]
        fn softmax_is_a_distribution(costs in prop::collection::vec(0.0f64..1.0, 1..81), tau in 0.001f64..1.0) {
            let p = softmax_costs(&costs, tau);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
        }
    }
}
