//! Synthetic gradually-shifting streams and case-study perturbations.
//!
//! A stream of `num_domains + 1` domains is generated on the angle grid
//! m·total_angle/num_domains for m = 0..=num_domains: domain 0 is the
//! labeled source, domain num_domains the target (labels held out), and the
//! num_domains − 1 domains in between form the unlabeled intermediate pool,
//! concatenated in angle order with their angle stored as the truth index.

use super::{GeneratorSpec, LabeledSet, ShiftStream, UnlabeledSet};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::seed;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Class means on the unit circle, isotropic Gaussian noise, the whole
/// cloud rotated per domain.
pub fn gen_rotated_gaussians(
    num_classes: usize,
    points_per_domain: usize,
    num_domains: usize,
    total_angle: f64,
    noise_sd: f64,
    seed_value: u64,
) -> Result<ShiftStream> {
    validate_stream_config(num_classes, points_per_domain, num_domains, total_angle)?;
    if noise_sd < 0.0 {
        return Err(Error::contract("noise_sd must be nonnegative"));
    }
    let spec = GeneratorSpec::RotatedGaussians {
        num_classes,
        points_per_domain,
        num_domains,
        total_angle,
        noise_sd,
    };
    assemble_stream(spec, seed_value)
}

/// Two interleaved crescents (classes 0 and 1), centered so rotation spins
/// the figure in place, with isotropic Gaussian noise.
pub fn gen_rotated_moons(
    points_per_domain: usize,
    num_domains: usize,
    total_angle: f64,
    noise_sd: f64,
    seed_value: u64,
) -> Result<ShiftStream> {
    validate_stream_config(2, points_per_domain, num_domains, total_angle)?;
    if noise_sd < 0.0 {
        return Err(Error::contract("noise_sd must be nonnegative"));
    }
    let spec = GeneratorSpec::RotatedMoons {
        points_per_domain,
        num_domains,
        total_angle,
        noise_sd,
    };
    assemble_stream(spec, seed_value)
}

fn validate_stream_config(
    num_classes: usize,
    points_per_domain: usize,
    num_domains: usize,
    total_angle: f64,
) -> Result<()> {
    if num_classes < 2 {
        return Err(Error::contract("need at least 2 classes"));
    }
    if !(total_angle > 0.0 && total_angle < 180.0) {
        return Err(Error::contract(format!(
            "total_angle must lie in (0, 180) degrees, got {total_angle}"
        )));
    }
    if num_domains < 1 {
        return Err(Error::contract("num_domains must be at least 1"));
    }
    // Every class must appear in every domain; the remainder of an uneven
    // split goes to the lowest class indices.
    if points_per_domain < num_classes {
        return Err(Error::contract(format!(
            "points_per_domain {points_per_domain} cannot cover {num_classes} classes"
        )));
    }
    Ok(())
}

fn assemble_stream(spec: GeneratorSpec, seed_value: u64) -> Result<ShiftStream> {
    let num_domains = match &spec {
        GeneratorSpec::RotatedGaussians { num_domains, .. }
        | GeneratorSpec::RotatedMoons { num_domains, .. } => *num_domains,
        GeneratorSpec::External => unreachable!("assemble_stream is only called for generators"),
    };
    let mut source = None;
    let mut target = None;
    let mut inter_feats: Option<DenseMatrix> = None;
    let mut truth_index = Vec::new();
    let mut intermediate_labels = Vec::new();
    for m in 0..=num_domains {
        let angle = domain_angle(&spec, m);
        let (feats, labels) = generate_domain(&spec, angle, seed::derive_idx(seed_value, "domain", m as u64))?;
        if m == 0 {
            source = Some(LabeledSet::new(feats, labels)?);
        } else if m == num_domains {
            target = Some(LabeledSet::new(feats, labels)?);
        } else {
            truth_index.extend(std::iter::repeat(angle).take(feats.rows()));
            intermediate_labels.extend(labels);
            inter_feats = Some(match inter_feats {
                Some(acc) => acc.vstack(&feats)?,
                None => feats,
            });
        }
    }
    let cols = source.as_ref().map_or(0, |s| s.feature_dim());
    let stream = ShiftStream {
        source: source.expect("domain 0 always generated"),
        target: target.expect("last domain always generated"),
        intermediate: UnlabeledSet::new(inter_feats.unwrap_or_else(|| DenseMatrix::zeros(0, cols))),
        truth_index,
        intermediate_labels,
        spec,
        seed: seed_value,
    };
    stream.validate()?;
    Ok(stream)
}

fn domain_angle(spec: &GeneratorSpec, m: usize) -> f64 {
    let (num_domains, total_angle) = match spec {
        GeneratorSpec::RotatedGaussians {
            num_domains,
            total_angle,
            ..
        }
        | GeneratorSpec::RotatedMoons {
            num_domains,
            total_angle,
            ..
        } => (*num_domains, *total_angle),
        GeneratorSpec::External => (1, 0.0),
    };
    m as f64 * total_angle / num_domains as f64
}

/// One domain of the given generator at an arbitrary angle (degrees).
fn generate_domain(
    spec: &GeneratorSpec,
    angle_deg: f64,
    domain_seed: u64,
) -> Result<(DenseMatrix, Vec<usize>)> {
    let mut rng = seed::rng(domain_seed);
    match spec {
        GeneratorSpec::RotatedGaussians {
            num_classes,
            points_per_domain,
            noise_sd,
            ..
        } => Ok(gaussian_domain(
            *num_classes,
            *points_per_domain,
            angle_deg,
            *noise_sd,
            &mut rng,
        )),
        GeneratorSpec::RotatedMoons {
            points_per_domain,
            noise_sd,
            ..
        } => Ok(moons_domain(*points_per_domain, angle_deg, *noise_sd, &mut rng)),
        GeneratorSpec::External => Err(Error::contract(
            "stream has no generator; cannot synthesize new domains",
        )),
    }
}

/// Size of class `c` when `n` points are split as evenly as possible over
/// `num_classes` classes: the first `n % num_classes` classes take the
/// remainder.
fn class_share(n: usize, num_classes: usize, c: usize) -> usize {
    n / num_classes + usize::from(c < n % num_classes)
}

fn rotation(angle_deg: f64) -> [f64; 4] {
    let r = angle_deg.to_radians();
    [r.cos(), -r.sin(), r.sin(), r.cos()]
}

fn rotate(rot: &[f64; 4], x: f64, y: f64) -> (f64, f64) {
    (rot[0] * x + rot[1] * y, rot[2] * x + rot[3] * y)
}

fn gaussian_domain(
    num_classes: usize,
    n: usize,
    angle_deg: f64,
    noise_sd: f64,
    rng: &mut ChaCha8Rng,
) -> (DenseMatrix, Vec<usize>) {
    let rot = rotation(angle_deg);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for c in 0..num_classes {
        let phase = 2.0 * std::f64::consts::PI * c as f64 / num_classes as f64;
        let (mx, my) = (phase.cos(), phase.sin());
        for _ in 0..class_share(n, num_classes, c) {
            let nx: f64 = StandardNormal.sample(rng);
            let ny: f64 = StandardNormal.sample(rng);
            let (x, y) = rotate(&rot, mx + noise_sd * nx, my + noise_sd * ny);
            data.push(x);
            data.push(y);
            labels.push(c);
        }
    }
    let m = DenseMatrix::from_vec(n, 2, data).expect("finite by construction");
    (m, labels)
}

fn moons_domain(n: usize, angle_deg: f64, noise_sd: f64, rng: &mut ChaCha8Rng) -> (DenseMatrix, Vec<usize>) {
    let rot = rotation(angle_deg);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for c in 0..2usize {
        for _ in 0..class_share(n, 2, c) {
            let t: f64 = rng.random::<f64>() * std::f64::consts::PI;
            // Crescents centered on the figure's midpoint (0.5, 0.25) so the
            // per-domain rotation spins the figure in place.
            let (px, py) = if c == 0 {
                (t.cos() - 0.5, t.sin() - 0.25)
            } else {
                (0.5 - t.cos(), 0.25 - t.sin())
            };
            let nx: f64 = StandardNormal.sample(rng);
            let ny: f64 = StandardNormal.sample(rng);
            let (x, y) = rotate(&rot, px + noise_sd * nx, py + noise_sd * ny);
            data.push(x);
            data.push(y);
            labels.push(c);
        }
    }
    let m = DenseMatrix::from_vec(n, 2, data).expect("finite by construction");
    (m, labels)
}

/// Case-study perturbations of a stream's intermediate pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    /// Keep a class-stratified fraction of the intermediate examples.
    SubsampleFrac(f64),
    /// Replace the truth index of a fraction of examples with a uniform
    /// draw over the existing index range (data itself untouched).
    NoisyIndexFrac(f64),
    /// Append generated domains past both ends of the stream, on the same
    /// angle grid, until the truth-index range covers `[below, above]`.
    OutlierExtension { below: f64, above: f64 },
}

pub fn perturb_stream(
    stream: &ShiftStream,
    mode: Perturbation,
    seed_value: u64,
) -> Result<ShiftStream> {
    stream.validate()?;
    match mode {
        Perturbation::SubsampleFrac(frac) => subsample(stream, frac, seed_value),
        Perturbation::NoisyIndexFrac(frac) => noisy_index(stream, frac, seed_value),
        Perturbation::OutlierExtension { below, above } => {
            outlier_extension(stream, below, above, seed_value)
        }
    }
}

fn subsample(stream: &ShiftStream, frac: f64, seed_value: u64) -> Result<ShiftStream> {
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::contract(format!(
            "subsample fraction must lie in (0, 1], got {frac}"
        )));
    }
    if frac == 1.0 {
        return Ok(stream.clone());
    }
    let n = stream.intermediate.len();
    let total_keep = (frac * n as f64).round() as usize;
    if total_keep == 0 {
        return Err(Error::contract("subsample would leave an empty pool"));
    }
    // Group example indices by class, preserving pool order within a class.
    let num_classes = stream
        .intermediate_labels
        .iter()
        .max()
        .map_or(0, |&m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &c) in stream.intermediate_labels.iter().enumerate() {
        by_class[c].push(i);
    }
    // Largest-remainder apportionment of total_keep across classes keeps
    // every class within one example of frac times its size.
    let mut keep_per_class: Vec<usize> = Vec::with_capacity(num_classes);
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(num_classes);
    let mut assigned = 0usize;
    for (c, members) in by_class.iter().enumerate() {
        let exact = frac * members.len() as f64;
        let base = (exact.floor() as usize).min(members.len());
        keep_per_class.push(base);
        assigned += base;
        remainders.push((c, exact - base as f64));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut leftover = total_keep.saturating_sub(assigned);
    for &(c, _) in remainders.iter().cycle().take(remainders.len() * 2) {
        if leftover == 0 {
            break;
        }
        if keep_per_class[c] < by_class[c].len() {
            keep_per_class[c] += 1;
            leftover -= 1;
        }
    }
    let mut rng = seed::rng(seed::derive(seed_value, "subsample"));
    let mut kept: Vec<usize> = Vec::with_capacity(total_keep);
    for (members, &k) in by_class.iter().zip(&keep_per_class) {
        if members.is_empty() || k == 0 {
            continue;
        }
        let mut picks: Vec<usize> = sample(&mut rng, members.len(), k).into_iter().collect();
        picks.sort_unstable();
        kept.extend(picks.into_iter().map(|j| members[j]));
    }
    kept.sort_unstable();
    let mut out = stream.clone();
    out.intermediate = stream.intermediate.subset(&kept)?;
    out.truth_index = kept.iter().map(|&i| stream.truth_index[i]).collect();
    out.intermediate_labels = kept
        .iter()
        .map(|&i| stream.intermediate_labels[i])
        .collect();
    Ok(out)
}

fn noisy_index(stream: &ShiftStream, frac: f64, seed_value: u64) -> Result<ShiftStream> {
    if !(0.0..=1.0).contains(&frac) {
        return Err(Error::contract(format!(
            "noisy-index fraction must lie in [0, 1], got {frac}"
        )));
    }
    let n = stream.intermediate.len();
    let count = (frac * n as f64).round() as usize;
    let mut out = stream.clone();
    if count == 0 {
        return Ok(out);
    }
    let lo = stream.truth_index.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = stream
        .truth_index
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut rng = seed::rng(seed::derive(seed_value, "noisy-index"));
    let mut picks: Vec<usize> = sample(&mut rng, n, count).into_iter().collect();
    picks.sort_unstable();
    for i in picks {
        out.truth_index[i] = rng.random_range(lo..=hi);
    }
    Ok(out)
}

fn outlier_extension(
    stream: &ShiftStream,
    below: f64,
    above: f64,
    seed_value: u64,
) -> Result<ShiftStream> {
    let (num_domains, total_angle) = match &stream.spec {
        GeneratorSpec::RotatedGaussians {
            num_domains,
            total_angle,
            ..
        }
        | GeneratorSpec::RotatedMoons {
            num_domains,
            total_angle,
            ..
        } => (*num_domains, *total_angle),
        GeneratorSpec::External => {
            return Err(Error::contract(
                "outlier extension needs a generated stream; this one was loaded externally",
            ))
        }
    };
    if below > 0.0 || above < total_angle {
        return Err(Error::contract(format!(
            "outlier range [{below}, {above}] must enclose the stream's [0, {total_angle}]"
        )));
    }
    let step = total_angle / num_domains as f64;
    let mut angles = Vec::new();
    let mut k = 1usize;
    // Extend the existing angle grid downward past the source and upward
    // past the target, stopping at the requested bounds.
    loop {
        let a = -(k as f64) * step;
        if a < below - 1e-9 {
            break;
        }
        angles.push(a);
        k += 1;
    }
    k = 1;
    loop {
        let a = total_angle + k as f64 * step;
        if a > above + 1e-9 {
            break;
        }
        angles.push(a);
        k += 1;
    }
    let mut out = stream.clone();
    let mut feats = out.intermediate.features().clone();
    for (j, &angle) in angles.iter().enumerate() {
        let (f, labels) =
            generate_domain(&stream.spec, angle, seed::derive_idx(seed_value, "outlier-domain", j as u64))?;
        out.truth_index
            .extend(std::iter::repeat(angle).take(f.rows()));
        out.intermediate_labels.extend(labels);
        feats = feats.vstack(&f)?;
    }
    out.intermediate = UnlabeledSet::new(feats);
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(labels: &[usize], k: usize) -> Vec<usize> {
        let mut c = vec![0usize; k];
        for &l in labels {
            c[l] += 1;
        }
        c
    }

    #[test]
    fn source_domain_is_unrotated() {
        let s = gen_rotated_gaussians(2, 10000, 4, 90.0, 0.0, 7).unwrap();
        // Noise-free class-0 points sit exactly on the class mean (1, 0).
        let row = s.source.features().row(0);
        assert!((row[0] - 1.0).abs() < 1e-12 && row[1].abs() < 1e-12);
    }

    #[test]
    fn rotated_cluster_mean_matches_analytic_rotation() {
        // Noise-free: every domain-m class point equals R(m·Δ)·mean_c, with
        // the domain angle recorded in the truth index.
        let s = gen_rotated_gaussians(3, 10002, 3, 120.0, 0.0, 3).unwrap();
        for (i, &c) in s.intermediate_labels.iter().enumerate() {
            let rot = rotation(s.truth_index[i]);
            let phase = 2.0 * std::f64::consts::PI * c as f64 / 3.0;
            let (ex, ey) = rotate(&rot, phase.cos(), phase.sin());
            let row = s.intermediate.features().row(i);
            assert!((row[0] - ex).abs() < 1e-9 && (row[1] - ey).abs() < 1e-9);
        }
    }

    #[test]
    fn noisy_cluster_mean_concentrates_on_rotated_mean() {
        let sd = 0.05;
        let s = gen_rotated_gaussians(2, 20000, 2, 60.0, sd, 11).unwrap();
        let rot = rotation(30.0);
        let (ex, ey) = rotate(&rot, 1.0, 0.0);
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0);
        for (i, &c) in s.intermediate_labels.iter().enumerate() {
            if c == 0 {
                let row = s.intermediate.features().row(i);
                sx += row[0];
                sy += row[1];
                n += 1;
            }
        }
        let tol = 5.0 * sd / (n as f64).sqrt();
        assert!((sx / n as f64 - ex).abs() < tol);
        assert!((sy / n as f64 - ey).abs() < tol);
    }

    #[test]
    fn per_domain_class_histogram_is_uniform() {
        let s = gen_rotated_gaussians(3, 30, 5, 100.0, 0.1, 1).unwrap();
        assert_eq!(s.source.class_counts(3), vec![10, 10, 10]);
        assert_eq!(s.target.class_counts(3), vec![10, 10, 10]);
        for d in 0..4 {
            let slice = &s.intermediate_labels[d * 30..(d + 1) * 30];
            assert_eq!(counts(slice, 3), vec![10, 10, 10]);
        }
    }

    #[test]
    fn moons_points_lie_on_the_arcs_without_noise() {
        let s = gen_rotated_moons(100, 4, 80.0, 0.0, 5).unwrap();
        for (i, &c) in s.intermediate_labels.iter().enumerate() {
            let angle = s.truth_index[i];
            let inv = rotation(-angle);
            let row = s.intermediate.features().row(i);
            let (ux, uy) = rotate(&inv, row[0], row[1]);
            // Undoing the rotation and the centering recovers (cos t, sin t)
            // with t in [0, π] for both crescents.
            let (cx, cy) = if c == 0 {
                (ux + 0.5, uy + 0.25)
            } else {
                (0.5 - ux, 0.25 - uy)
            };
            assert!((cx * cx + cy * cy - 1.0).abs() < 1e-9, "off arc at {i}");
            assert!(cy > -1e-9);
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let a = gen_rotated_moons(40, 3, 60.0, 0.1, 9).unwrap();
        let b = gen_rotated_moons(40, 3, 60.0, 0.1, 9).unwrap();
        assert_eq!(a.intermediate.features(), b.intermediate.features());
        assert_eq!(a.source.features(), b.source.features());
        let c = gen_rotated_moons(40, 3, 60.0, 0.1, 10).unwrap();
        assert_ne!(a.intermediate.features(), c.intermediate.features());
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        assert!(gen_rotated_gaussians(1, 10, 4, 60.0, 0.1, 0).is_err());
        assert!(gen_rotated_gaussians(2, 10, 4, 0.0, 0.1, 0).is_err());
        assert!(gen_rotated_gaussians(2, 10, 4, 180.0, 0.1, 0).is_err());
        assert!(gen_rotated_gaussians(3, 2, 4, 60.0, 0.1, 0).is_err());
        assert!(gen_rotated_gaussians(2, 10, 0, 60.0, 0.1, 0).is_err());
        assert!(gen_rotated_moons(1, 4, 60.0, 0.1, 0).is_err());
    }

    #[test]
    fn subsample_is_identity_at_full_fraction() {
        let s = gen_rotated_gaussians(2, 20, 4, 60.0, 0.1, 2).unwrap();
        let p = perturb_stream(&s, Perturbation::SubsampleFrac(1.0), 99).unwrap();
        assert_eq!(p.intermediate.features(), s.intermediate.features());
        assert_eq!(p.truth_index, s.truth_index);
    }

    #[test]
    fn subsample_keeps_rounded_count_and_class_balance() {
        let s = gen_rotated_gaussians(2, 40, 6, 60.0, 0.1, 4).unwrap();
        let n = s.intermediate.len();
        let p = perturb_stream(&s, Perturbation::SubsampleFrac(0.3), 1).unwrap();
        assert_eq!(p.intermediate.len(), (0.3 * n as f64).round() as usize);
        let full = counts(&s.intermediate_labels, 2);
        let kept = counts(&p.intermediate_labels, 2);
        for c in 0..2 {
            assert!((kept[c] as f64 - 0.3 * full[c] as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn noisy_index_keeps_data_and_randomizes_fraction() {
        let s = gen_rotated_gaussians(2, 20, 6, 60.0, 0.1, 8).unwrap();
        let p = perturb_stream(&s, Perturbation::NoisyIndexFrac(0.5), 3).unwrap();
        assert_eq!(p.intermediate.features(), s.intermediate.features());
        let n = s.truth_index.len();
        let changed = s
            .truth_index
            .iter()
            .zip(&p.truth_index)
            .filter(|(a, b)| a != b)
            .count();
        // Redraws land on the exact old value with probability 0.
        assert_eq!(changed, n / 2);
        let (lo, hi) = (s.truth_index[0], s.truth_index[n - 1]);
        assert!(p.truth_index.iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn outlier_extension_widens_truth_range_to_requested_bounds() {
        // Δ = 60/6 = 10 degrees, so the grid lands exactly on −30 and 90.
        let s = gen_rotated_gaussians(2, 20, 6, 60.0, 0.1, 5).unwrap();
        let p = perturb_stream(
            &s,
            Perturbation::OutlierExtension {
                below: -30.0,
                above: 90.0,
            },
            7,
        )
        .unwrap();
        let lo = p.truth_index.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = p
            .truth_index
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((lo + 30.0).abs() < 1e-9 && (hi - 90.0).abs() < 1e-9);
        // 3 new domains per side, 20 points each, class-balanced.
        assert_eq!(p.intermediate.len(), s.intermediate.len() + 6 * 20);
        assert_eq!(counts(&p.intermediate_labels, 2), vec![
            p.intermediate.len() / 2,
            p.intermediate.len() / 2
        ]);
    }

    #[test]
    fn perturbations_are_deterministic() {
        let s = gen_rotated_moons(40, 5, 75.0, 0.05, 6).unwrap();
        let a = perturb_stream(&s, Perturbation::SubsampleFrac(0.5), 42).unwrap();
        let b = perturb_stream(&s, Perturbation::SubsampleFrac(0.5), 42).unwrap();
        assert_eq!(a.intermediate.features(), b.intermediate.features());
        assert_eq!(a.truth_index, b.truth_index);
    }
}
