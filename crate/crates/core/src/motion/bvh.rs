//! BVH reading and writing.
//!
//! Supports 3- and 6-channel joints with any rotation channel order; End
//! Sites are dropped. Retargeting onto the 21-joint skeleton is a plain
//! name lookup through a [`JointMap`].

use std::fmt::Write as _;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::features::RawMotion;
use super::skeleton::{Joint, Skeleton, DEFAULT_JOINT_NAMES, N_JOINTS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    Xposition,
    Yposition,
    Zposition,
    Xrotation,
    Yrotation,
    Zrotation,
}

impl Channel {
    fn parse(s: &str) -> Option<Channel> {
        Some(match s.to_ascii_lowercase().as_str() {
            "xposition" => Channel::Xposition,
            "yposition" => Channel::Yposition,
            "zposition" => Channel::Zposition,
            "xrotation" => Channel::Xrotation,
            "yrotation" => Channel::Yrotation,
            "zrotation" => Channel::Zrotation,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BvhJoint {
    pub name: String,
    pub parent: Option<usize>,
    /// Offset in file units.
    pub offset: Vector3<f64>,
    pub channels: Vec<Channel>,
}

/// A parsed BVH file, before retargeting.
#[derive(Clone, Debug, PartialEq)]
pub struct BvhDocument {
    pub joints: Vec<BvhJoint>,
    pub frame_time: f64,
    /// One row of channel values per frame.
    pub frames: Vec<Vec<f64>>,
}

impl BvhDocument {
    pub fn fps(&self) -> f64 {
        (1.0 / self.frame_time).round()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Global rotation and position of every joint at one frame, in file units.
    fn pose(&self, frame: &[f64]) -> (Vec<Rotation3<f64>>, Vec<Vector3<f64>>) {
        let n = self.joints.len();
        let mut rots = Vec::with_capacity(n);
        let mut pos = Vec::with_capacity(n);
        let mut cursor = 0;
        for j in &self.joints {
            let mut local_t = j.offset;
            let mut local_r = Rotation3::identity();
            for &c in &j.channels {
                let v = frame[cursor];
                cursor += 1;
                let rad = v.to_radians();
                match c {
                    Channel::Xposition => local_t.x = v,
                    Channel::Yposition => local_t.y = v,
                    Channel::Zposition => local_t.z = v,
                    Channel::Xrotation => {
                        local_r *= Rotation3::from_axis_angle(&Vector3::x_axis(), rad)
                    }
                    Channel::Yrotation => {
                        local_r *= Rotation3::from_axis_angle(&Vector3::y_axis(), rad)
                    }
                    Channel::Zrotation => {
                        local_r *= Rotation3::from_axis_angle(&Vector3::z_axis(), rad)
                    }
                }
            }
            match j.parent {
                Some(p) => {
                    let pr: Rotation3<f64> = rots[p];
                    pos.push(pos[p] + pr * local_t);
                    rots.push(pr * local_r);
                }
                None => {
                    pos.push(local_t);
                    rots.push(local_r);
                }
            }
        }
        (rots, pos)
    }
}

/// Names of the BVH joints that become skeleton joints 0..21, in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointMap {
    pub names: Vec<String>,
}

impl Default for JointMap {
    fn default() -> Self {
        JointMap {
            names: DEFAULT_JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .flat_map(|(i, l)| l.split_whitespace().map(move |w| (i + 1, w)))
            .collect();
        Tokens { items, pos: 0 }
    }

    fn line(&self) -> usize {
        self.items
            .get(self.pos)
            .or(self.items.last())
            .map_or(1, |t| t.0)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            line: self.line(),
            msg: msg.into(),
        })
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.pos).map(|t| t.1)
    }

    fn next(&mut self) -> Result<&'a str> {
        match self.items.get(self.pos) {
            Some(t) => {
                self.pos += 1;
                Ok(t.1)
            }
            None => self.err("unexpected end of file"),
        }
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        let line = self.line();
        let got = self.next()?;
        if got.eq_ignore_ascii_case(word) {
            Ok(())
        } else {
            Err(Error::Parse {
                line,
                msg: format!("expected `{word}`, found `{got}`"),
            })
        }
    }

    fn number(&mut self) -> Result<f64> {
        let line = self.line();
        let tok = self.next()?;
        tok.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("expected a number, found `{tok}`"),
        })
    }
}

fn parse_offset(t: &mut Tokens) -> Result<Vector3<f64>> {
    t.expect("OFFSET")?;
    Ok(Vector3::new(t.number()?, t.number()?, t.number()?))
}

fn parse_joint(t: &mut Tokens, parent: Option<usize>, joints: &mut Vec<BvhJoint>) -> Result<()> {
    let name = t.next()?.to_string();
    t.expect("{")?;
    let offset = parse_offset(t)?;
    t.expect("CHANNELS")?;
    let line = t.line();
    let n = t.number()?;
    if n != 3.0 && n != 6.0 {
        return Err(Error::Parse {
            line,
            msg: format!("joint `{name}` declares {n} channels; only 3 or 6 are supported"),
        });
    }
    let mut channels = Vec::new();
    for _ in 0..n as usize {
        let line = t.line();
        let tok = t.next()?;
        channels.push(Channel::parse(tok).ok_or_else(|| Error::Parse {
            line,
            msg: format!("unknown channel `{tok}`"),
        })?);
    }
    let id = joints.len();
    joints.push(BvhJoint {
        name,
        parent,
        offset,
        channels,
    });
    loop {
        match t.peek() {
            Some("}") => {
                t.next()?;
                return Ok(());
            }
            Some(w) if w.eq_ignore_ascii_case("JOINT") => {
                t.next()?;
                parse_joint(t, Some(id), joints)?;
            }
            Some(w) if w.eq_ignore_ascii_case("End") => {
                t.next()?;
                t.expect("Site")?;
                t.expect("{")?;
                parse_offset(t)?;
                t.expect("}")?;
            }
            Some(w) => return t.err(format!("unexpected `{w}` inside joint")),
            None => return t.err("unterminated joint block"),
        }
    }
}

/// Parses the HIERARCHY and MOTION sections of a BVH document.
pub fn parse(text: &str) -> Result<BvhDocument> {
    let mut t = Tokens::new(text);
    t.expect("HIERARCHY")?;
    t.expect("ROOT")?;
    let mut joints = Vec::new();
    parse_joint(&mut t, None, &mut joints)?;
    t.expect("MOTION")?;
    t.expect("Frames:")?;
    let line = t.line();
    let n_frames = t.number()?;
    if n_frames < 1.0 || n_frames.fract() != 0.0 {
        return Err(Error::Parse {
            line,
            msg: format!("frame count must be a positive integer, got {n_frames}"),
        });
    }
    t.expect("Frame")?;
    t.expect("Time:")?;
    let line = t.line();
    let frame_time = t.number()?;
    if frame_time <= 0.0 {
        return Err(Error::Parse {
            line,
            msg: "frame time must be positive".into(),
        });
    }
    let width: usize = joints.iter().map(|j| j.channels.len()).sum();
    let mut frames = Vec::with_capacity(n_frames as usize);
    for _ in 0..n_frames as usize {
        let mut row = Vec::with_capacity(width);
        for _ in 0..width {
            row.push(t.number()?);
        }
        frames.push(row);
    }
    if let Some(extra) = t.peek() {
        return t.err(format!("trailing data `{extra}` after the declared frames"));
    }
    Ok(BvhDocument {
        joints,
        frame_time,
        frames,
    })
}

/// Maps a parsed document onto the 21-joint skeleton.
///
/// Joints missing from `map` are dropped; a mapped joint hangs from its
/// nearest mapped ancestor with the rest-pose offset between them. `scale`
/// converts file units to meters.
pub fn retarget(doc: &BvhDocument, map: &JointMap, scale: f64) -> Result<(Skeleton, RawMotion)> {
    if map.names.len() != N_JOINTS {
        return Err(Error::Retarget(format!(
            "joint map lists {} joints, expected {N_JOINTS}",
            map.names.len()
        )));
    }
    let src: Vec<usize> = map
        .names
        .iter()
        .map(|n| {
            doc.joint_index(n)
                .ok_or_else(|| Error::Retarget(format!("BVH has no joint named `{n}`")))
        })
        .collect::<Result<_>>()?;
    // rest pose: offsets only, no channel values
    let rest = {
        let mut rest_doc = doc.clone();
        rest_doc.joints.iter_mut().for_each(|j| j.channels.clear());
        rest_doc.pose(&[]).1
    };
    let mut joints = Vec::with_capacity(N_JOINTS);
    let mut parents = Vec::with_capacity(N_JOINTS);
    for (i, &s) in src.iter().enumerate() {
        let mut anc = doc.joints[s].parent;
        let parent = loop {
            match anc {
                Some(a) => {
                    if let Some(pi) = src.iter().position(|&x| x == a) {
                        break Some(pi);
                    }
                    anc = doc.joints[a].parent;
                }
                None => break None,
            }
        };
        if (i == 0) != parent.is_none() {
            return Err(Error::Retarget(format!(
                "mapped joint `{}` must {} the mapped root",
                map.names[i],
                if i == 0 { "be" } else { "descend from" }
            )));
        }
        let offset = match parent {
            Some(p) => (rest[s] - rest[src[p]]) * scale,
            None => Vector3::zeros(),
        };
        parents.push(parent);
        joints.push(Joint {
            name: map.names[i].clone(),
            parent,
            offset,
        });
    }
    let skeleton = Skeleton::new(joints)?;

    let mut root_positions = Vec::with_capacity(doc.frames.len());
    let mut rotations = Vec::with_capacity(doc.frames.len());
    for frame in &doc.frames {
        let (grot, gpos) = doc.pose(frame);
        root_positions.push(gpos[src[0]] * scale);
        let local: Vec<Rotation3<f64>> = (0..N_JOINTS)
            .map(|i| match parents[i] {
                Some(p) => grot[src[p]].inverse() * grot[src[i]],
                None => grot[src[i]],
            })
            .collect();
        rotations.push(local);
    }
    let raw = RawMotion::new(root_positions, rotations, doc.fps())?;
    Ok((skeleton, raw))
}

/// [`parse`] followed by [`retarget`].
pub fn parse_bvh(text: &str, map: &JointMap, scale: f64) -> Result<(Skeleton, RawMotion)> {
    retarget(&parse(text)?, map, scale)
}

/// Writes a BVH file with a 6-channel root and Z-Y-X rotation channels.
pub fn write_bvh(skeleton: &Skeleton, raw: &RawMotion, scale: f64) -> String {
    let mut out = String::from("HIERARCHY\n");
    let children: Vec<Vec<usize>> = (0..N_JOINTS)
        .map(|j| {
            (0..N_JOINTS)
                .filter(|&c| skeleton.parent(c) == Some(j))
                .collect()
        })
        .collect();
    fn emit(
        out: &mut String,
        sk: &Skeleton,
        children: &[Vec<usize>],
        j: usize,
        depth: usize,
        scale: f64,
    ) {
        let pad = "  ".repeat(depth);
        let kw = if j == 0 { "ROOT" } else { "JOINT" };
        let o = sk.offset(j) / scale;
        let _ = writeln!(out, "{pad}{kw} {}", sk.joints()[j].name);
        let _ = writeln!(out, "{pad}{{");
        let _ = writeln!(out, "{pad}  OFFSET {:.6} {:.6} {:.6}", o.x, o.y, o.z);
        if j == 0 {
            let _ = writeln!(
                out,
                "{pad}  CHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation"
            );
        } else {
            let _ = writeln!(out, "{pad}  CHANNELS 3 Zrotation Yrotation Xrotation");
        }
        if children[j].is_empty() {
            let _ = writeln!(
                out,
                "{pad}  End Site\n{pad}  {{\n{pad}    OFFSET 0.000000 0.000000 0.000000\n{pad}  }}"
            );
        }
        for &c in &children[j] {
            emit(out, sk, children, c, depth + 1, scale);
        }
        let _ = writeln!(out, "{pad}}}");
    }
    emit(&mut out, skeleton, &children, 0, 0, scale);
    let _ = writeln!(
        out,
        "MOTION\nFrames: {}\nFrame Time: {:.6}",
        raw.frames(),
        1.0 / raw.fps
    );
    for t in 0..raw.frames() {
        let mut vals = Vec::with_capacity(3 + 3 * N_JOINTS);
        let p = raw.root_positions[t] / scale;
        vals.extend([p.x, p.y, p.z]);
        for r in &raw.rotations[t] {
            let (rx, ry, rz) = r.euler_angles();
            vals.extend([rz.to_degrees(), ry.to_degrees(), rx.to_degrees()]);
        }
        let line: Vec<String> = vals.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "HIERARCHY
ROOT Hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  JOINT Child
  {
    OFFSET 0 1 0
    CHANNELS 3 Zrotation Xrotation Yrotation
    End Site
    {
      OFFSET 0 1 0
    }
  }
}
MOTION
Frames: 2
Frame Time: 0.016667
0 0 0 0 0 0 0 0 0
1 0 0 0 0 90 0 0 0
";

    #[test]
    fn toy_hierarchy() {
        let doc = parse(TOY).unwrap();
        assert_eq!(doc.joints.len(), 2);
        assert_eq!(doc.joints[1].offset, Vector3::new(0.0, 1.0, 0.0));
        assert_eq!(doc.joints[1].parent, Some(0));
        assert_eq!(doc.fps(), 60.0);
        assert_eq!(doc.frames.len(), 2);
        // yaw of 90 degrees turns the child offset (0,1,0) into itself, the root moved +1 in X
        let (_, pos) = doc.pose(&doc.frames[1]);
        assert!((pos[1] - Vector3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn zero_frames_is_a_parse_error() {
        let text = TOY.replace("Frames: 2", "Frames: 0");
        assert!(matches!(parse(&text), Err(Error::Parse { .. })));
    }

    #[test]
    fn reports_line_numbers() {
        let text = TOY.replace("OFFSET 0 1 0\n    CHANNELS", "OFFSET 0 one 0\n    CHANNELS");
        match parse(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn toy_does_not_retarget() {
        let doc = parse(TOY).unwrap();
        assert!(matches!(
            retarget(&doc, &JointMap::default(), 1.0),
            Err(Error::Retarget(_))
        ));
    }
}
