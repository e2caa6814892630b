//! Building blocks evaluated on a tape: graph convolutions, part-wise AdaIN,
//! part-wise attention and the stylizing block that chains them.

use crate::error::{Error, Result};
use crate::motion::BodyPart;
use crate::skeletal::{join_parts, split_parts, stgcn_layer};
use crate::tensor::{Bound, Graph, Scalar, Tensor, Var};

use super::model::Model;

/// One captured attention matrix: rows index style positions, columns content
/// positions, both flattened frame-major over the part's vertices.
#[derive(Clone, Debug)]
pub struct AttentionRecord {
    /// 0-based graph level.
    pub level: usize,
    pub part: BodyPart,
    pub vertices: usize,
    pub style_frames: usize,
    pub content_frames: usize,
    pub matrix: Tensor<f64>,
}

impl AttentionRecord {
    /// Frame-by-frame map `(style frames × content frames)`: style vertices summed,
    /// content vertices averaged, so each column still sums to one.
    pub fn frame_map(&self) -> Vec<Vec<f64>> {
        let v = self.vertices;
        let ld = self.content_frames * v;
        let a = self.matrix.data();
        let mut out = vec![vec![0.0; self.content_frames]; self.style_frames];
        for (ts, row) in out.iter_mut().enumerate() {
            for vs in 0..v {
                let r = (ts * v + vs) * ld;
                for td in 0..self.content_frames {
                    for vd in 0..v {
                        row[td] += a[r + td * v + vd];
                    }
                }
            }
            row.iter_mut().for_each(|x| *x /= v as f64);
        }
        out
    }
}

/// Parameters bound to a tape plus per-pass switches.
pub struct Forward<'m, F: Scalar> {
    pub model: &'m Model<F>,
    pub bound: Bound,
    /// Replaces every AdaIN affine with (1, 0) and skips the attention path.
    pub nullify_style: bool,
    pub attention: Option<Vec<AttentionRecord>>,
    pub trace: Option<Vec<(String, Vec<usize>)>>,
}

impl<'m, F: Scalar> Forward<'m, F> {
    pub fn new(model: &'m Model<F>, g: &mut Graph<F>, trainable: bool) -> Self {
        Forward {
            model,
            bound: model.params.bind(g, trainable),
            nullify_style: false,
            attention: None,
            trace: None,
        }
    }

    /// Binds existing graph nodes as the parameters (store order).
    pub fn with_vars(model: &'m Model<F>, vars: Vec<Var>) -> Result<Self> {
        if vars.len() != model.params.len() {
            return Err(Error::Contract(format!(
                "{} variables for {} parameters",
                vars.len(),
                model.params.len()
            )));
        }
        Ok(Forward {
            model,
            bound: Bound::from_vars(vars),
            nullify_style: false,
            attention: None,
            trace: None,
        })
    }

    pub fn p(&self, name: &str) -> Result<Var> {
        self.model
            .params
            .id(name)
            .map(|id| self.bound.var(id))
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub(crate) fn record(&mut self, g: &Graph<F>, label: &str, v: Var) {
        if let Some(t) = &mut self.trace {
            t.push((label.to_string(), g.shape(v).to_vec()));
        }
    }
}

/// Graph convolution named `prefix` at 0-based `level` (weights `prefix.w`, `prefix.b`).
pub(crate) fn stconv<F: Scalar>(
    g: &mut Graph<F>,
    fx: &Forward<F>,
    x: Var,
    prefix: &str,
    level: usize,
) -> Result<Var> {
    let w = fx.p(&format!("{prefix}.w"))?;
    let b = fx.p(&format!("{prefix}.b"))?;
    stgcn_layer(g, x, &fx.model.graph.conv[level], w, Some(b))
}

pub(crate) fn conv1x1<F: Scalar>(
    g: &mut Graph<F>,
    fx: &Forward<F>,
    x: Var,
    prefix: &str,
) -> Result<Var> {
    let w = fx.p(&format!("{prefix}.w"))?;
    let b = fx.p(&format!("{prefix}.b"))?;
    g.linear(x, w, Some(b))
}

/// Instance-normalizes `d` over its whole (frames × vertices) extent and applies a
/// per-channel affine generated from the global average of `s` (`prefix.w`, `prefix.b`).
pub fn adain<F: Scalar>(
    g: &mut Graph<F>,
    fx: &Forward<F>,
    d: Var,
    s: Var,
    prefix: &str,
) -> Result<Var> {
    let c = *g.shape(d).last().unwrap();
    if g.shape(s).last() != Some(&c) {
        return Err(Error::dim(
            "adain",
            format!(
                "content {:?} and style {:?} channels differ",
                g.shape(d),
                g.shape(s)
            ),
        ));
    }
    let normed = g.instance_norm(d);
    if fx.nullify_style {
        return Ok(normed);
    }
    let pooled = g.channel_mean(s);
    let pooled = g.reshape(pooled, &[1, c])?;
    let affine = g.linear(
        pooled,
        fx.p(&format!("{prefix}.w"))?,
        Some(fx.p(&format!("{prefix}.b"))?),
    )?;
    let gamma = g.slice(affine, 1, 0, c)?;
    let gamma = g.reshape(gamma, &[c])?;
    let beta = g.slice(affine, 1, c, c)?;
    let beta = g.reshape(beta, &[c])?;
    let scaled = g.mul(normed, gamma)?;
    g.add(scaled, beta)
}

/// AdaIN applied independently to each body part; `styles[p]` is part `p`'s style feature.
pub fn bp_adain<F: Scalar>(
    g: &mut Graph<F>,
    fx: &Forward<F>,
    d: Var,
    styles: &[Var; 5],
    level: usize,
    prefix: &str,
) -> Result<Var> {
    let sg = fx.model.graph.clone();
    let parts = split_parts(g, &sg, d, level)?;
    let mut out = parts;
    for (p, o) in out.iter_mut().enumerate() {
        *o = adain(
            g,
            fx,
            parts[p],
            styles[p],
            &format!("{prefix}.{}", BodyPart::ALL[p]),
        )?;
    }
    join_parts(g, &sg, &out, level)
}

/// Attention from content positions onto style positions with a residual connection.
///
/// Weight names: `prefix.{m,n,l,o}.{w,b}`.
pub fn atn<F: Scalar>(
    g: &mut Graph<F>,
    fx: &mut Forward<F>,
    d: Var,
    s: Var,
    prefix: &str,
    probe: Option<(usize, BodyPart)>,
) -> Result<Var> {
    let ds = g.shape(d).to_vec();
    let ss = g.shape(s).to_vec();
    if ds.len() != 3 || ss.len() != 3 || ds[1] != ss[1] || ds[2] != ss[2] {
        return Err(Error::dim("atn", format!("content {ds:?} vs style {ss:?}")));
    }
    if fx.nullify_style {
        return Ok(d);
    }
    let (v, c) = (ds[1], ds[2]);
    let (ld, ls) = (ds[0] * v, ss[0] * v);
    let lin = |g: &mut Graph<F>, fx: &Forward<F>, x: Var, k: &str| -> Result<Var> {
        g.linear(
            x,
            fx.p(&format!("{prefix}.{k}.w"))?,
            Some(fx.p(&format!("{prefix}.{k}.b"))?),
        )
    };
    let ns = g.instance_norm(s);
    let nd = g.instance_norm(d);
    let m = lin(g, fx, ns, "m")?;
    let m = g.reshape(m, &[ls, c])?;
    let n = lin(g, fx, nd, "n")?;
    let n = g.reshape(n, &[ld, c])?;
    let scores = g.matmul(m, n, false, true)?;
    let attn = g.softmax(scores, 0)?;
    if let (Some(rec), Some((level, part))) = (&mut fx.attention, probe) {
        rec.push(AttentionRecord {
            level,
            part,
            vertices: v,
            style_frames: ss[0],
            content_frames: ds[0],
            matrix: g.value(attn).cast(),
        });
    }
    let l = lin(g, fx, s, "l")?;
    let l = g.reshape(l, &[ls, c])?;
    let gathered = g.matmul(attn, l, true, false)?;
    let proj = lin(g, fx, gathered, "o")?;
    let proj = g.reshape(proj, &ds)?;
    g.add(proj, d)
}

pub fn bp_atn<F: Scalar>(
    g: &mut Graph<F>,
    fx: &mut Forward<F>,
    d: Var,
    styles: &[Var; 5],
    level: usize,
    prefix: &str,
) -> Result<Var> {
    let sg = fx.model.graph.clone();
    let parts = split_parts(g, &sg, d, level)?;
    let mut out = parts;
    let per_part = fx.model.config.atn_per_part;
    for (p, o) in out.iter_mut().enumerate() {
        let part = BodyPart::ALL[p];
        let name = if per_part {
            format!("{prefix}.{part}")
        } else {
            prefix.to_string()
        };
        *o = atn(g, fx, parts[p], styles[p], &name, Some((level, part)))?;
    }
    join_parts(g, &sg, &out, level)
}

/// AdaIN → LReLU → graph conv → attention → graph conv (halving channels) → LReLU.
pub fn bp_stylenet<F: Scalar>(
    g: &mut Graph<F>,
    fx: &mut Forward<F>,
    d: Var,
    styles: &[Var; 5],
    level: usize,
    prefix: &str,
) -> Result<Var> {
    let h = bp_adain(g, fx, d, styles, level, &format!("{prefix}.adain"))?;
    let h = g.leaky_relu(h);
    let h = stconv(g, fx, h, &format!("{prefix}.conv1"), level)?;
    let h = bp_atn(g, fx, h, styles, level, &format!("{prefix}.atn"))?;
    let h = stconv(g, fx, h, &format!("{prefix}.conv2"), level)?;
    Ok(g.leaky_relu(h))
}
