//! Evaluation and post-processing: per-joint displacement, Fréchet motion
//! distance, foot-contact cleanup and attention-map export.

use nalgebra::{DMatrix, DVector, Rotation3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::motion::features::{integrate_root, to_world, yaw_rotation};
use crate::motion::{BodyPart, MotionClip, Skeleton, N_JOINTS};
use crate::net::{AttentionRecord, Model};
use crate::tensor::Tensor;

/// Per-joint mean squared distance between two world trajectories, divided by `height²`.
pub fn msd_metric(
    a: &[Vec<Vector3<f64>>],
    b: &[Vec<Vector3<f64>>],
    height: f64,
) -> Result<Vec<f64>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Contract(format!(
            "msd needs equal nonzero frame counts, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if !(height > 0.0) {
        return Err(Error::Contract(format!(
            "skeleton height must be positive, got {height}"
        )));
    }
    let joints = a[0].len();
    if a.iter().chain(b).any(|f| f.len() != joints) {
        return Err(Error::Contract(
            "msd needs equal joint counts in every frame".into(),
        ));
    }
    let mut out = vec![0.0; joints];
    for (fa, fb) in a.iter().zip(b) {
        for (j, o) in out.iter_mut().enumerate() {
            *o += (fa[j] - fb[j]).norm_squared();
        }
    }
    let scale = a.len() as f64 * height * height;
    Ok(out.into_iter().map(|v| v / scale).collect())
}

/// Locality report: per-joint MSD, the joints over the two reporting thresholds, optional FMD.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub joints: Vec<String>,
    pub msd: Vec<f64>,
    pub fmd: Option<f64>,
}

impl EvalReport {
    pub const THRESHOLDS: [f64; 2] = [0.1, 0.05];

    pub fn new(skeleton: &Skeleton, msd: Vec<f64>) -> Self {
        EvalReport {
            joints: skeleton.joints().iter().map(|j| j.name.clone()).collect(),
            msd,
            fmd: None,
        }
    }

    pub fn above(&self, threshold: f64) -> Vec<&str> {
        self.joints
            .iter()
            .zip(&self.msd)
            .filter(|(_, &m)| m > threshold)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    /// `joint,msd` rows followed by the threshold lists (and FMD when present).
    pub fn to_text(&self) -> String {
        let mut s = String::from("joint,msd\n");
        for (n, m) in self.joints.iter().zip(&self.msd) {
            s.push_str(&format!("{n},{m:.6}\n"));
        }
        for t in Self::THRESHOLDS {
            s.push_str(&format!("# msd > {t}: {}\n", self.above(t).join(" ")));
        }
        if let Some(f) = self.fmd {
            s.push_str(&format!("# fmd: {f:.6}\n"));
        }
        s
    }
}

fn mean_cov(set: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let d = set[0].len();
    let n = set.len() as f64;
    let mut mu = DVector::zeros(d);
    for v in set {
        mu += DVector::from_column_slice(v);
    }
    mu /= n;
    let mut cov = DMatrix::zeros(d, d);
    for v in set {
        let c = DVector::from_column_slice(v) - &mu;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= n - 1.0;
    (mu, cov)
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym);
    let root = e.eigenvalues.map(|l| l.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&root) * e.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted to two vector sets.
///
/// `Tr((Σa Σb)^½)` is evaluated as `Tr((Σa^½ Σb Σa^½)^½)`, which has the same
/// spectrum and stays symmetric; negative eigenvalues are clamped to zero.
pub fn fmd(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Contract(format!(
            "fmd needs at least 2 vectors per set, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d = a[0].len();
    if d == 0 || a.iter().chain(b).any(|v| v.len() != d) {
        return Err(Error::Contract(
            "fmd vectors must share one nonzero dimension".into(),
        ));
    }
    let (mu_a, cov_a) = mean_cov(a);
    let (mu_b, cov_b) = mean_cov(b);
    let ra = sqrt_psd(&cov_a);
    let inner = &ra * &cov_b * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    Ok((mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * cross)
}

/// Fixed-length clip descriptor for FMD: per-joint mean position (3) and mean
/// speed (1) in the facing frame, then the mean root velocity (3).
pub fn clip_descriptor(clip: &MotionClip) -> Vec<f64> {
    let n = clip.frames() as f64;
    let mut out = vec![0.0; N_JOINTS * 4 + 3];
    for t in 0..clip.frames() {
        for j in 0..N_JOINTS {
            let p = clip.position(t, j);
            for k in 0..3 {
                out[j * 4 + k] += p[k] / n;
            }
            out[j * 4 + 3] += clip.velocity(t, j).norm() / n;
        }
        for (k, v) in clip.root_velocity(t).into_iter().enumerate() {
            out[N_JOINTS * 4 + k] += v / n;
        }
    }
    out
}

/// Contact detection and blending parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FootConfig {
    /// Ankle speed threshold in meters per frame.
    pub speed: f64,
    /// Height threshold as a multiple of the rest ankle height above the lowest joint.
    pub height_ratio: f64,
    /// Frames on each side of a contact span over which the correction fades out.
    pub blend: usize,
}

impl Default for FootConfig {
    fn default() -> Self {
        FootConfig {
            speed: 0.003,
            height_ratio: 1.2,
            blend: 5,
        }
    }
}

/// Per-foot contact flags of a clip, computed on its world trajectories.
pub fn detect_contacts(clip: &MotionClip, skeleton: &Skeleton, cfg: &FootConfig) -> [Vec<bool>; 2] {
    let world = to_world(clip);
    let rest = skeleton.rest_positions();
    let floor = rest.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let chains = skeleton.leg_chains();
    std::array::from_fn(|leg| {
        let ankle = chains[leg][2];
        let h_thr = cfg.height_ratio * (rest[ankle].y - floor);
        (0..world.len())
            .map(|t| {
                let prev = world[t.saturating_sub(1)][ankle];
                let next = world[(t + 1).min(world.len() - 1)][ankle];
                let here = world[t][ankle];
                let speed = if t == 0 {
                    (next - here).norm()
                } else {
                    (here - prev).norm()
                };
                speed < cfg.speed && here.y < h_thr
            })
            .collect()
    })
}

fn spans(flags: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &f) in flags.iter().chain(std::iter::once(&false)).enumerate() {
        match (f, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s, t));
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Analytic two-bone solve. Returns the new knee and ankle positions; targets out
/// of reach are pulled onto the sphere of full extension.
pub fn two_bone_ik(
    hip: Vector3<f64>,
    knee: Vector3<f64>,
    ankle: Vector3<f64>,
    target: Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    let l1 = (knee - hip).norm();
    let l2 = (ankle - knee).norm();
    let to = target - hip;
    let d_raw = to.norm();
    if d_raw < 1e-12 {
        return (knee, ankle);
    }
    let dir = to / d_raw;
    let d = d_raw.clamp((l1 - l2).abs(), l1 + l2);
    let a = ((l1 * l1 - l2 * l2 + d * d) / (2.0 * d)).clamp(-l1, l1);
    let h = (l1 * l1 - a * a).max(0.0).sqrt();
    let bend = knee - hip;
    let bend = bend - dir * bend.dot(&dir);
    let bend = bend.try_normalize(1e-9).unwrap_or_else(|| {
        // straight leg: bend the knee toward the facing direction
        let f = Vector3::z() - dir * dir.z;
        f.try_normalize(1e-9).unwrap_or_else(Vector3::x)
    });
    let new_knee = hip + dir * a + bend * h;
    (new_knee, hip + dir * d)
}

fn rotation_between(a: Vector3<f64>, b: Vector3<f64>) -> Rotation3<f64> {
    Rotation3::rotation_between(&a, &b).unwrap_or_else(Rotation3::identity)
}

/// Pins each contacting foot of `output` to its average position over the
/// contact span detected on `source`, solving the leg analytically and fading the
/// correction out over `cfg.blend` frames at span boundaries.
pub fn foot_postprocess(
    source: &MotionClip,
    output: &MotionClip,
    skeleton: &Skeleton,
    cfg: &FootConfig,
) -> Result<MotionClip> {
    if source.frames() != output.frames() {
        return Err(Error::Contract(format!(
            "foot cleanup needs equal lengths, got {} and {}",
            source.frames(),
            output.frames()
        )));
    }
    let n = output.frames();
    let contacts = detect_contacts(source, skeleton, cfg);
    let roots = integrate_root(output);
    let world = to_world(output);
    let frame_of = |t: usize| {
        (
            yaw_rotation(roots[t].heading),
            Vector3::new(roots[t].x, 0.0, roots[t].z),
        )
    };
    let mut out = output.clone();
    let mut touched = vec![false; n];
    for (leg, chain) in skeleton.leg_chains().into_iter().enumerate() {
        let [hip, knee, ankle, toe] = chain;
        // weight and world target per frame; the strongest correction wins where blends overlap
        let mut goal: Vec<Option<(f64, Vector3<f64>)>> = vec![None; n];
        for (s, e) in spans(&contacts[leg]) {
            let avg = (s..e).map(|t| world[t][ankle]).sum::<Vector3<f64>>() / (e - s) as f64;
            let lo = s.saturating_sub(cfg.blend);
            let hi = (e + cfg.blend).min(n);
            for (t, g) in goal.iter_mut().enumerate().take(hi).skip(lo) {
                let w = if t < s {
                    1.0 - (s - t) as f64 / (cfg.blend + 1) as f64
                } else if t >= e {
                    1.0 - (t + 1 - e) as f64 / (cfg.blend + 1) as f64
                } else {
                    1.0
                };
                if g.map_or(true, |(w0, _)| w > w0) {
                    *g = Some((w, avg));
                }
            }
        }
        for (t, g) in goal.iter().enumerate() {
            let Some((w, target)) = *g else { continue };
            let (r, ground) = frame_of(t);
            let wanted = world[t][ankle].lerp(&target, w);
            let local_target = r.inverse() * (wanted - ground);
            let (ph, pk, pa, pt) = (
                out.position(t, hip),
                out.position(t, knee),
                out.position(t, ankle),
                out.position(t, toe),
            );
            let (nk, na) = two_bone_ik(ph, pk, pa, local_target);
            let r_thigh = rotation_between(pk - ph, nk - ph);
            let r_shin = rotation_between(r_thigh * (pa - pk), na - nk);
            out.set_rotation(t, hip, &(r_thigh * out.rotation(t, hip)));
            out.set_rotation(t, knee, &(r_shin * r_thigh * out.rotation(t, knee)));
            out.set_position(t, knee, nk);
            out.set_position(t, ankle, na);
            out.set_position(t, toe, na + (pt - pa));
            touched[t] = true;
        }
    }
    // velocities follow the moved positions wherever either endpoint moved
    for t in 0..n {
        let affected =
            touched[t] || (t + 1 < n && touched[t + 1] && t == 0) || (t > 0 && touched[t - 1]);
        if !affected {
            continue;
        }
        for chain in skeleton.leg_chains() {
            for &j in &chain[1..] {
                let v = if t == 0 {
                    if n > 1 {
                        out.position(1, j) - out.position(0, j)
                    } else {
                        out.velocity(0, j)
                    }
                } else {
                    out.position(t, j) - out.position(t - 1, j)
                };
                out.set_velocity(t, j, v);
            }
        }
    }
    Ok(out)
}

/// Spatially averaged attention map of one part at one 0-based level, for
/// `source` content decoded with `target` style (both normalized tensors).
pub fn export_attention(
    model: &Model<f32>,
    source: &Tensor<f32>,
    target: &Tensor<f32>,
    part: BodyPart,
    level: usize,
) -> Result<(AttentionRecord, Vec<Vec<f64>>)> {
    if level > 2 {
        return Err(Error::Contract(format!(
            "level must be 0, 1 or 2, got {level}"
        )));
    }
    let content = model.encode_content(source)?;
    let style = model.encode_style(target)?;
    let (_, records) = model.decode_features(&content, &style, false, true)?;
    let rec = records
        .into_iter()
        .find(|r| r.level == level && r.part == part)
        .ok_or_else(|| {
            Error::Contract(format!("no attention recorded for {part} at level {level}"))
        })?;
    let map = rec.frame_map();
    Ok((rec, map))
}

/// Comma-separated rows with '.' decimals.
pub fn matrix_csv(rows: &[Vec<f64>]) -> String {
    let mut s = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{extract_features, synth};

    #[test]
    fn msd_constant_offset() {
        let a: Vec<Vec<Vector3<f64>>> = (0..4)
            .map(|t| vec![Vector3::new(t as f64, 0.0, 0.0); 3])
            .collect();
        let mut b = a.clone();
        for f in &mut b {
            f[1].y += 0.3;
        }
        let m = msd_metric(&a, &b, 1.5).unwrap();
        assert_eq!(m[0], 0.0);
        assert!((m[1] - (0.3f64 / 1.5).powi(2)).abs() < 1e-15);
        assert!(msd_metric(&a, &b[..3], 1.5).is_err());
    }

    #[test]
    fn fmd_point_masses() {
        let a = vec![vec![1.0, 2.0]; 5];
        let b = vec![vec![-1.0, 0.5]; 3];
        assert_eq!(fmd(&a, &b).unwrap(), 4.0 + 2.25);
        assert!(fmd(&a, &[vec![1.0]]).is_err());
    }

    #[test]
    fn ik_reaches_and_clamps() {
        let hip = Vector3::new(0.0, 1.0, 0.0);
        let knee = Vector3::new(0.0, 0.55, 0.05);
        let ankle = Vector3::new(0.0, 0.1, 0.0);
        let target = Vector3::new(0.1, 0.2, 0.1);
        let (k, a) = two_bone_ik(hip, knee, ankle, target);
        assert!((a - target).norm() < 1e-12);
        assert!(((k - hip).norm() - (knee - hip).norm()).abs() < 1e-12);
        assert!(((a - k).norm() - (ankle - knee).norm()).abs() < 1e-12);
        let (_, a) = two_bone_ik(hip, knee, ankle, Vector3::new(0.0, -5.0, 0.0));
        let reach = (knee - hip).norm() + (ankle - knee).norm();
        assert!(((a - hip).norm() - reach).abs() < 1e-12);
    }

    #[test]
    fn no_contacts_is_identity() {
        let sk = Skeleton::standard();
        let clip = extract_features(&synth::translating(&sk, 20, 0.05), &sk).unwrap();
        let flags = detect_contacts(&clip, &sk, &FootConfig::default());
        assert!(flags.iter().all(|f| f.iter().all(|&c| !c)));
        let out = foot_postprocess(&clip, &clip, &sk, &FootConfig::default()).unwrap();
        assert_eq!(out, clip);
    }
}
