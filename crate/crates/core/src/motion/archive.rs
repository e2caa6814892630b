//! On-disk clip archive: binary clip files, a text manifest and normalization statistics.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::features::MotionClip;
use super::skeleton::{DOF, N_JOINTS};
use crate::error::{Error, Result};

const CLIP_MAGIC: &[u8; 4] = b"MPZ1";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const NORM_FILE: &str = "norm.csv";
/// Lower bound on per-dimension std so constant channels do not explode.
pub const STD_FLOOR: f64 = 1e-3;

pub fn encode_clip(clip: &MotionClip) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + clip.data().len() * 4);
    buf.extend_from_slice(CLIP_MAGIC);
    for v in [clip.frames(), N_JOINTS, DOF] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &x in clip.data() {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    buf
}

pub fn decode_clip(bytes: &[u8]) -> Result<MotionClip> {
    if bytes.len() < 16 || &bytes[..4] != CLIP_MAGIC {
        return Err(Error::Format("not an MPZ1 clip".into()));
    }
    let word =
        |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (frames, joints, dof) = (word(0), word(1), word(2));
    if joints != N_JOINTS || dof != DOF {
        return Err(Error::Format(format!(
            "clip layout {joints}x{dof}, expected {N_JOINTS}x{DOF}"
        )));
    }
    let n = frames * joints * dof;
    let payload = &bytes[16..];
    if payload.len() != n * 4 {
        return Err(Error::Format(format!(
            "clip payload has {} bytes, expected {}",
            payload.len(),
            n * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    MotionClip::new(frames, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_clip(path: &Path, clip: &MotionClip) -> Result<()> {
    fs::File::create(path)?.write_all(&encode_clip(clip))?;
    Ok(())
}

pub fn read_clip(path: &Path) -> Result<MotionClip> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_clip(&bytes)
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClipRecord {
    pub id: String,
    pub source: String,
    pub start: usize,
    pub mirrored: bool,
}

impl ClipRecord {
    fn to_line(&self) -> String {
        format!(
            "{},{},{},{}",
            self.id,
            self.source,
            self.start,
            u8::from(self.mirrored)
        )
    }

    fn parse(line: &str, lineno: usize) -> Result<ClipRecord> {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |msg: &str| Error::Parse {
            line: lineno,
            msg: msg.to_string(),
        };
        if fields.len() != 4 {
            return Err(bad("expected id,source,start,mirrored"));
        }
        Ok(ClipRecord {
            id: fields[0].to_string(),
            source: fields[1].to_string(),
            start: fields[2]
                .parse()
                .map_err(|_| bad("start frame is not an integer"))?,
            mirrored: match fields[3] {
                "0" | "false" => false,
                "1" | "true" => true,
                _ => return Err(bad("mirrored flag must be 0 or 1")),
            },
        })
    }
}

pub fn write_archive(dir: &Path, clips: &[(ClipRecord, MotionClip)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (rec, clip) in clips {
        write_clip(&dir.join(format!("{}.mpz", rec.id)), clip)?;
        manifest.push_str(&rec.to_line());
        manifest.push('\n');
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ClipRecord>> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| ClipRecord::parse(l, i + 1))
        .collect()
}

pub fn read_archive(dir: &Path) -> Result<Vec<(ClipRecord, MotionClip)>> {
    read_manifest(dir)?
        .into_iter()
        .map(|rec| {
            let clip = read_clip(&dir.join(format!("{}.mpz", rec.id)))?;
            Ok((rec, clip))
        })
        .collect()
}

/// Per-dimension feature mean and standard deviation (21 × 15 each).
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats {
            mean: vec![0.0; N_JOINTS * DOF],
            std: vec![1.0; N_JOINTS * DOF],
        }
    }

    pub fn compute<'a>(clips: impl IntoIterator<Item = &'a MotionClip>) -> Result<Self> {
        let w = N_JOINTS * DOF;
        let mut sum = vec![0.0; w];
        let mut sq = vec![0.0; w];
        let mut count = 0usize;
        for clip in clips {
            for t in 0..clip.frames() {
                for (k, &x) in clip.frame(t).iter().enumerate() {
                    sum[k] += x;
                    sq[k] += x * x;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Contract(
                "normalization needs at least one frame".into(),
            ));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n - m * m).max(0.0).sqrt().max(STD_FLOOR))
            .collect();
        Ok(NormStats { mean, std })
    }

    pub fn normalize(&self, clip: &MotionClip) -> MotionClip {
        self.map(clip, |x, m, s| (x - m) / s)
    }

    pub fn denormalize(&self, clip: &MotionClip) -> MotionClip {
        self.map(clip, |x, m, s| x * s + m)
    }

    fn map(&self, clip: &MotionClip, f: impl Fn(f64, f64, f64) -> f64) -> MotionClip {
        let w = N_JOINTS * DOF;
        let mut out = clip.clone();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            let k = i % w;
            *x = f(*x, self.mean[k], self.std[k]);
        }
        out
    }

    /// CSV with header, one row per joint: `kind,joint,d0..d14`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,joint");
        for d in 0..DOF {
            s.push_str(&format!(",d{d}"));
        }
        s.push('\n');
        for (kind, vals) in [("mean", &self.mean), ("std", &self.std)] {
            for j in 0..N_JOINTS {
                s.push_str(&format!("{kind},{j}"));
                for d in 0..DOF {
                    s.push_str(&format!(",{:e}", vals[j * DOF + d]));
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut stats = NormStats::identity();
        let mut seen = 0;
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse { line: i + 1, msg };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != DOF + 2 {
                return Err(bad(format!("expected {} fields, got {}", DOF + 2, f.len())));
            }
            let j: usize = f[1].parse().map_err(|_| bad("bad joint index".into()))?;
            if j >= N_JOINTS {
                return Err(bad(format!("joint {j} out of range")));
            }
            let dst = match f[0] {
                "mean" => &mut stats.mean,
                "std" => &mut stats.std,
                other => return Err(bad(format!("unknown row kind `{other}`"))),
            };
            for d in 0..DOF {
                dst[j * DOF + d] = f[2 + d]
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("bad number in column {d}")))?;
            }
            seen += 1;
        }
        if seen != 2 * N_JOINTS {
            return Err(Error::Format(format!(
                "normalization file has {seen} rows, expected {}",
                2 * N_JOINTS
            )));
        }
        Ok(stats)
    }
}
