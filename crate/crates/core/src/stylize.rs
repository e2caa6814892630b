//! Inference: per-part style assignment, interpolation and decoding.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::{foot_postprocess, FootConfig};
use crate::motion::{BodyPart, MotionClip, NormStats, Skeleton};
use crate::net::{Model, StyleFeatures};

/// Where one part takes its style from.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum PartSource {
    /// Keep the source motion's own style.
    #[default]
    Source,
    /// A style clip identified by path or archive id.
    Clip(String),
}

impl FromStr for PartSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "" => Err(Error::Resolution("empty style source".into())),
            "source" => Ok(PartSource::Source),
            other => Ok(PartSource::Clip(other.to_string())),
        }
    }
}

/// Style source per body part, indexed like [`BodyPart::ALL`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PartAssignment {
    pub parts: [PartSource; 5],
}

impl PartAssignment {
    pub fn all(src: PartSource) -> Self {
        PartAssignment {
            parts: std::array::from_fn(|_| src.clone()),
        }
    }

    /// Applies `PART=SOURCE` entries on top of `self`. `ALL=...` sets every part.
    pub fn apply_spec(&mut self, spec: &str) -> Result<()> {
        let (part, src) = spec.split_once('=').ok_or_else(|| {
            Error::Contract(format!(
                "part assignment `{spec}` is not PART=CLIP_OR_source"
            ))
        })?;
        let src: PartSource = src.parse()?;
        if part.trim() == "ALL" {
            self.parts = std::array::from_fn(|_| src.clone());
        } else {
            let p: BodyPart = part.trim().parse()?;
            self.parts[p.index()] = src;
        }
        Ok(())
    }

    /// Distinct clip names referenced by the assignment, in part order.
    pub fn clips(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for p in &self.parts {
            if let PartSource::Clip(c) = p {
                if !out.contains(&c.as_str()) {
                    out.push(c);
                }
            }
        }
        out
    }
}

/// Parses `PART=FLOAT` into a per-part weight table (default 1 for every part).
pub fn parse_alpha(specs: &[String]) -> Result<[f64; 5]> {
    let mut alpha = [1.0; 5];
    for s in specs {
        let (part, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Contract(format!("alpha `{s}` is not PART=FLOAT")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Contract(format!("alpha `{s}` has a non-numeric weight")))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Contract(format!("alpha `{s}` must lie in [0, 1]")));
        }
        if part.trim() == "ALL" {
            alpha = [v; 5];
        } else {
            let p: BodyPart = part.trim().parse()?;
            alpha[p.index()] = v;
        }
    }
    Ok(alpha)
}

/// A network with its normalization, ready for inference.
pub struct Stylizer<'a> {
    pub model: &'a Model<f32>,
    pub norm: &'a NormStats,
}

fn padded_len(frames: usize) -> usize {
    frames.div_ceil(4) * 4
}

impl Stylizer<'_> {
    /// Style features of a raw clip (edge-padded to a multiple of 4 frames, or to `frames`).
    pub fn style_of(&self, clip: &MotionClip, frames: Option<usize>) -> Result<StyleFeatures<f32>> {
        let len = frames.unwrap_or_else(|| padded_len(clip.frames()));
        let x = self.norm.normalize(&clip.fit_length(len)).to_tensor();
        self.model.encode_style(&x)
    }

    /// Stylizes `source`. `styles[k]` is the clip named by `assignment.clips()[k]`.
    ///
    /// A part with weight α < 1 uses `(1 − α)·own + α·target`; its target clip is
    /// fitted to the source length first so the features line up frame by frame.
    pub fn stylize(
        &self,
        source: &MotionClip,
        assignment: &PartAssignment,
        styles: &[&MotionClip],
        alpha: [f64; 5],
    ) -> Result<MotionClip> {
        let names = assignment.clips();
        if names.len() != styles.len() {
            return Err(Error::Resolution(format!(
                "{} style clips for {} referenced names",
                styles.len(),
                names.len()
            )));
        }
        let t = source.frames();
        let len = padded_len(t);
        let x = self.norm.normalize(&source.fit_length(len)).to_tensor();
        let own = self.model.encode_style(&x)?;
        let content = self.model.encode_content(&x)?;
        let mut per_part: Vec<StyleFeatures<f32>> = Vec::with_capacity(5);
        for (p, src) in assignment.parts.iter().enumerate() {
            let f = match src {
                PartSource::Source => own.clone(),
                PartSource::Clip(name) => {
                    let k = names
                        .iter()
                        .position(|n| n == name)
                        .expect("name collected above");
                    let a = alpha[p];
                    if a == 1.0 {
                        self.style_of(styles[k], None)?
                    } else {
                        let mut w = [0.0; 5];
                        w[p] = a;
                        own.interpolate(&self.style_of(styles[k], Some(len))?, w)?
                    }
                }
            };
            per_part.push(f);
        }
        let composed = StyleFeatures::compose(std::array::from_fn(|p| &per_part[p]));
        let (y, _) = self
            .model
            .decode_features(&content, &composed, false, false)?;
        if !y.all_finite() {
            return Err(Error::Numeric(
                "decoder produced non-finite features".into(),
            ));
        }
        let out = self.norm.denormalize(&MotionClip::from_tensor(&y)?);
        let mut out = out.slice(0, t);
        out.fps = source.fps;
        Ok(out)
    }

    /// Self-stylization: every part keeps the source style.
    pub fn reconstruct(&self, source: &MotionClip) -> Result<MotionClip> {
        self.stylize(source, &PartAssignment::default(), &[], [1.0; 5])
    }
}

/// [`Stylizer::stylize`] followed by optional foot-contact cleanup against the source.
pub fn stylize_with_cleanup(
    st: &Stylizer<'_>,
    source: &MotionClip,
    assignment: &PartAssignment,
    styles: &[&MotionClip],
    alpha: [f64; 5],
    cleanup: Option<(&Skeleton, &FootConfig)>,
) -> Result<MotionClip> {
    let out = st.stylize(source, assignment, styles, alpha)?;
    match cleanup {
        Some((sk, cfg)) => foot_postprocess(source, &out, sk, cfg),
        None => Ok(out),
    }
}
