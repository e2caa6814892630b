use std::sync::Arc;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{bp_adain, bp_stylenet, conv1x1, stconv, AttentionRecord, Forward};
use super::NetConfig;
use crate::error::{Error, Result};
use crate::motion::Skeleton;
use crate::motion::{BodyPart, DOF, N_JOINTS};
use crate::skeletal::{
    build_graph_levels, part_pool, part_unpool, split_parts, stgcn_weight_shape, SkeletalGraph,
};
use crate::tensor::LEAKY_SLOPE;
use crate::tensor::{Graph, ParamStore, Scalar, Tensor, Var};

const ENCODERS: [&str; 2] = ["style_enc", "content_enc"];
/// Decoder style blocks from coarse to fine with their 0-based graph level.
pub(crate) const DECODER_BLOCKS: [(&str, usize); 3] = [("dec.g3", 2), ("dec.g2", 1), ("dec.g1", 0)];

/// Style encoder outputs on a tape: whole levels and their part views.
#[derive(Clone, Copy, Debug)]
pub struct StyleVars {
    pub levels: [Var; 3],
    pub parts: [[Var; 5]; 3],
}

/// Detached per-level, per-part style features (`parts[level][part]`, shape `(T_i, V_p, C_i)`).
#[derive(Clone, Debug, PartialEq)]
pub struct StyleFeatures<F: Scalar = f32> {
    pub parts: [[Tensor<F>; 5]; 3],
}

impl<F: Scalar> StyleFeatures<F> {
    /// Takes part `p` at every level from `sources[p]`.
    pub fn compose(sources: [&StyleFeatures<F>; 5]) -> StyleFeatures<F> {
        StyleFeatures {
            parts: std::array::from_fn(|l| std::array::from_fn(|p| sources[p].parts[l][p].clone())),
        }
    }

    /// `(1 − α_p)·self + α_p·other` per part; α = 0 and 1 return exact copies.
    pub fn interpolate(
        &self,
        other: &StyleFeatures<F>,
        alpha: [f64; 5],
    ) -> Result<StyleFeatures<F>> {
        let mut parts = self.parts.clone();
        for (l, level) in parts.iter_mut().enumerate() {
            for (p, t) in level.iter_mut().enumerate() {
                let a = alpha[p];
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::Contract(format!(
                        "interpolation weight {a} outside [0, 1]"
                    )));
                }
                let o = &other.parts[l][p];
                if a == 0.0 {
                    continue;
                }
                if a == 1.0 {
                    *t = o.clone();
                    continue;
                }
                if t.shape() != o.shape() {
                    return Err(Error::Contract(format!(
                        "cannot interpolate {} style features of shapes {:?} and {:?}; use clips of equal length",
                        BodyPart::ALL[p],
                        t.shape(),
                        o.shape()
                    )));
                }
                let (wa, wb) = (F::lit(1.0 - a), F::lit(a));
                let data = t
                    .data()
                    .iter()
                    .zip(o.data())
                    .map(|(&x, &y)| wa * x + wb * y)
                    .collect();
                *t = Tensor::new(t.shape(), data)?;
            }
        }
        Ok(StyleFeatures { parts })
    }

    pub fn frames(&self, level: usize, part: BodyPart) -> usize {
        self.parts[level][part.index()].shape()[0]
    }
}

/// Network parameters together with the graph structure they act on.
#[derive(Clone, Debug)]
pub struct Model<F: Scalar = f32> {
    pub config: NetConfig,
    pub graph: Arc<SkeletalGraph>,
    pub params: ParamStore<F>,
}

struct Init {
    store: ParamStore<f64>,
    rng: ChaCha8Rng,
}

impl Init {
    fn uniform(&mut self, name: String, shape: &[usize], bound: f64) -> Result<()> {
        let n = shape.iter().product();
        let dist = Uniform::new_inclusive(-bound, bound);
        let data: Vec<f64> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.store.add(name, Tensor::new(shape, data)?)?;
        Ok(())
    }

    fn fill(&mut self, name: String, shape: &[usize], data: Vec<f64>) -> Result<()> {
        self.store.add(name, Tensor::new(shape, data)?)?;
        Ok(())
    }

    /// Fan-in uniform weight `prefix.w` with variance `gain² / fan_in`, zero bias `prefix.b`.
    fn dense_gain(&mut self, prefix: &str, shape: &[usize], gain: f64) -> Result<()> {
        let fan_in: usize = shape[..shape.len() - 1].iter().product();
        let cout = *shape.last().unwrap();
        self.uniform(
            format!("{prefix}.w"),
            shape,
            gain * (3.0 / fan_in as f64).sqrt(),
        )?;
        self.fill(format!("{prefix}.b"), &[cout], vec![0.0; cout])
    }

    /// Layer followed by a leaky ReLU.
    fn dense(&mut self, prefix: &str, shape: &[usize]) -> Result<()> {
        self.dense_gain(
            prefix,
            shape,
            (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt(),
        )
    }

    /// Affine generator: `(γ, β)` starts near `(1, 0)`.
    fn generator(&mut self, prefix: &str, c: usize, scale: f64) -> Result<()> {
        self.uniform(
            format!("{prefix}.w"),
            &[c, 2 * c],
            scale / (c as f64).sqrt(),
        )?;
        let mut b = vec![0.0; 2 * c];
        b[..c].iter_mut().for_each(|x| *x = 1.0);
        self.fill(format!("{prefix}.b"), &[2 * c], b)
    }
}

impl<F: Scalar> Model<F> {
    /// Fresh parameters: gain-scaled fan-in uniform weights, zero biases, AdaIN generators near identity.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        if config.base_channels < 2 || config.base_channels % 2 != 0 {
            return Err(Error::Contract(format!(
                "base_channels must be an even number ≥ 2, got {}",
                config.base_channels
            )));
        }
        for &k in config
            .encoder_kt
            .iter()
            .chain(&config.decoder_kt)
            .chain([&config.residual_kt])
        {
            if k % 2 == 0 {
                return Err(Error::Contract(format!(
                    "temporal kernels must be odd, got {k}"
                )));
            }
        }
        let graph = Arc::new(build_graph_levels(&Skeleton::standard(), config.reach)?);
        let mut init = Init {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let [c1, c2, c3] = config.level_channels();
        let c0 = config.io_channels();
        let k = config.reach.0;
        let rk = config.residual_kt;
        for enc in ENCODERS {
            init.dense(&format!("{enc}.conv_in"), &[DOF, c0])?;
            init.dense(
                &format!("{enc}.block1"),
                &stgcn_weight_shape(config.encoder_kt[0], k[0], c0, c1),
            )?;
            init.dense(
                &format!("{enc}.block2"),
                &stgcn_weight_shape(config.encoder_kt[1], k[1], c1, c2),
            )?;
            init.dense(
                &format!("{enc}.block3"),
                &stgcn_weight_shape(config.encoder_kt[2], k[2], c2, c3),
            )?;
            init.dense(
                &format!("{enc}.res.conv1"),
                &stgcn_weight_shape(rk, k[2], c3, c3),
            )?;
            init.dense(
                &format!("{enc}.res.conv2"),
                &stgcn_weight_shape(rk, k[2], c3, c3),
            )?;
        }
        for a in ["dec.res.adain1", "dec.res.adain2"] {
            for p in BodyPart::ALL {
                init.generator(&format!("{a}.{p}"), c3, config.adain_gen_scale)?;
            }
        }
        init.dense("dec.res.conv1", &stgcn_weight_shape(rk, k[2], c3, c3))?;
        init.dense("dec.res.conv2", &stgcn_weight_shape(rk, k[2], c3, c3))?;
        let channels = config.level_channels();
        for (i, &(prefix, level)) in DECODER_BLOCKS.iter().enumerate() {
            let c = channels[level];
            let kt = config.decoder_kt[i];
            for p in BodyPart::ALL {
                init.generator(&format!("{prefix}.adain.{p}"), c, config.adain_gen_scale)?;
            }
            init.dense(
                &format!("{prefix}.conv1"),
                &stgcn_weight_shape(kt, k[level], c, c),
            )?;
            let atn_prefixes: Vec<String> = if config.atn_per_part {
                BodyPart::ALL
                    .iter()
                    .map(|p| format!("{prefix}.atn.{p}"))
                    .collect()
            } else {
                vec![format!("{prefix}.atn")]
            };
            for ap in atn_prefixes {
                for m in ["m", "n", "l", "o"] {
                    init.dense_gain(&format!("{ap}.{m}"), &[c, c], 1.0)?;
                }
            }
            init.dense(
                &format!("{prefix}.conv2"),
                &stgcn_weight_shape(kt, k[level], c, c / 2),
            )?;
        }
        init.dense_gain("dec.conv_out", &[c0, DOF], 1.0)?;
        Ok(Model {
            config,
            graph,
            params: init.store.cast(),
        })
    }

    /// Same architecture and values in another precision.
    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            graph: self.graph.clone(),
            params: self.params.cast(),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }

    fn check_input(g: &Graph<F>, x: Var, who: &str) -> Result<usize> {
        let s = g.shape(x);
        if s.len() != 3 || s[1] != N_JOINTS || s[2] != DOF {
            return Err(Error::Shape(format!(
                "{who}: expected (T, {N_JOINTS}, {DOF}) input, got {s:?}"
            )));
        }
        if s[0] == 0 || s[0] % 4 != 0 {
            return Err(Error::Shape(format!(
                "{who}: frame count {} is not a positive multiple of 4; edge-pad the clip first",
                s[0]
            )));
        }
        Ok(s[0])
    }

    fn encode(
        &self,
        g: &mut Graph<F>,
        fx: &mut Forward<F>,
        x: Var,
        enc: &str,
        norm: bool,
    ) -> Result<[Var; 3]> {
        Self::check_input(g, x, enc)?;
        let pre = |g: &mut Graph<F>, h: Var| if norm { g.instance_norm(h) } else { h };
        let h = conv1x1(g, fx, x, &format!("{enc}.conv_in"))?;
        fx.record(g, &format!("{enc}.conv_in"), h);
        let h = pre(g, h);
        let h = stconv(g, fx, h, &format!("{enc}.block1"), 0)?;
        let f1 = g.leaky_relu(h);
        fx.record(g, &format!("{enc}.block1"), f1);
        let h = part_pool(g, &self.graph, f1, 0)?;
        let h = pre(g, h);
        let h = stconv(g, fx, h, &format!("{enc}.block2"), 1)?;
        let f2 = g.leaky_relu(h);
        fx.record(g, &format!("{enc}.block2"), f2);
        let h = part_pool(g, &self.graph, f2, 1)?;
        let h = pre(g, h);
        let h = stconv(g, fx, h, &format!("{enc}.block3"), 2)?;
        let h = g.leaky_relu(h);
        fx.record(g, &format!("{enc}.block3"), h);
        let r = pre(g, h);
        let r = stconv(g, fx, r, &format!("{enc}.res.conv1"), 2)?;
        let r = g.leaky_relu(r);
        let r = pre(g, r);
        let r = stconv(g, fx, r, &format!("{enc}.res.conv2"), 2)?;
        let f3 = g.add(h, r)?;
        fx.record(g, &format!("{enc}.res"), f3);
        Ok([f1, f2, f3])
    }

    /// Multi-level style features of a normalized `(T, 21, 15)` clip, `T` a multiple of 4.
    pub fn style_encode(&self, g: &mut Graph<F>, fx: &mut Forward<F>, x: Var) -> Result<StyleVars> {
        let levels = self.encode(g, fx, x, "style_enc", false)?;
        let mut parts = [[levels[0]; 5]; 3];
        for l in 0..3 {
            parts[l] = split_parts(g, &self.graph, levels[l], l)?;
        }
        Ok(StyleVars { levels, parts })
    }

    /// Style-invariant content feature `(T/4, 5, 4C)`.
    pub fn content_encode(&self, g: &mut Graph<F>, fx: &mut Forward<F>, x: Var) -> Result<Var> {
        Ok(self.encode(g, fx, x, "content_enc", true)?[2])
    }

    /// Decodes a content feature under per-level, per-part style features into a
    /// normalized `(T, 21, 15)` clip whose root channels are shared by all joints.
    pub fn decode(
        &self,
        g: &mut Graph<F>,
        fx: &mut Forward<F>,
        content: Var,
        styles: &[[Var; 5]; 3],
    ) -> Result<Var> {
        let c3 = self.config.level_channels()[2];
        let cs = g.shape(content).to_vec();
        if cs.len() != 3 || cs[1] != 5 || cs[2] != c3 {
            return Err(Error::Shape(format!(
                "content feature must be (T, 5, {c3}), got {cs:?}"
            )));
        }
        let r = bp_adain(g, fx, content, &styles[2], 2, "dec.res.adain1")?;
        let r = g.leaky_relu(r);
        let r = stconv(g, fx, r, "dec.res.conv1", 2)?;
        let r = bp_adain(g, fx, r, &styles[2], 2, "dec.res.adain2")?;
        let r = g.leaky_relu(r);
        let r = stconv(g, fx, r, "dec.res.conv2", 2)?;
        let mut h = g.add(content, r)?;
        fx.record(g, "dec.res", h);
        for &(prefix, level) in &DECODER_BLOCKS {
            h = bp_stylenet(g, fx, h, &styles[level], level, prefix)?;
            fx.record(g, prefix, h);
            if level > 0 {
                h = part_unpool(g, &self.graph, h, level - 1)?;
                fx.record(g, &format!("{prefix}.unpool"), h);
            }
        }
        let y = conv1x1(g, fx, h, "dec.conv_out")?;
        let out = self.collapse_root(g, y)?;
        fx.record(g, "dec.conv_out", out);
        Ok(out)
    }

    /// Replaces the per-joint root-velocity channels with their mean over joints.
    pub(crate) fn collapse_root(&self, g: &mut Graph<F>, y: Var) -> Result<Var> {
        let local = g.slice(y, 2, 0, 12)?;
        let root = g.slice(y, 2, 12, 3)?;
        let root = g.gather_weighted_sum(root, &self.graph.mean_all)?;
        g.concat(&[local, root], 2)
    }

    /// Style features of one normalized clip, detached from any tape.
    pub fn encode_style(&self, x: &Tensor<F>) -> Result<StyleFeatures<F>> {
        let mut g = Graph::new();
        let mut fx = Forward::new(self, &mut g, false);
        let xv = g.constant(x.clone());
        let sv = self.style_encode(&mut g, &mut fx, xv)?;
        Ok(StyleFeatures {
            parts: std::array::from_fn(|l| {
                std::array::from_fn(|p| g.value(sv.parts[l][p]).clone())
            }),
        })
    }

    pub fn encode_content(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = Graph::new();
        let mut fx = Forward::new(self, &mut g, false);
        let xv = g.constant(x.clone());
        let c = self.content_encode(&mut g, &mut fx, xv)?;
        Ok(g.value(c).clone())
    }

    /// Decodes detached features. With `capture`, every attention matrix is returned.
    pub fn decode_features(
        &self,
        content: &Tensor<F>,
        styles: &StyleFeatures<F>,
        nullify_style: bool,
        capture: bool,
    ) -> Result<(Tensor<F>, Vec<AttentionRecord>)> {
        let mut g = Graph::new();
        let mut fx = Forward::new(self, &mut g, false);
        fx.nullify_style = nullify_style;
        if capture {
            fx.attention = Some(Vec::new());
        }
        let c = g.constant(content.clone());
        let s: [[Var; 5]; 3] = std::array::from_fn(|l| {
            std::array::from_fn(|p| g.constant(styles.parts[l][p].clone()))
        });
        let out = self.decode(&mut g, &mut fx, c, &s)?;
        Ok((
            g.value(out).clone(),
            fx.attention.take().unwrap_or_default(),
        ))
    }

    /// Encoder and decoder output shapes for a `frames`-long input, in evaluation order.
    pub fn shape_trace(&self, frames: usize) -> Result<Vec<(String, Vec<usize>)>> {
        let mut g = Graph::new();
        let mut fx = Forward::new(self, &mut g, false);
        fx.trace = Some(Vec::new());
        let x = g.constant(Tensor::zeros(&[frames, N_JOINTS, DOF]));
        let s = self.style_encode(&mut g, &mut fx, x)?;
        let c = self.content_encode(&mut g, &mut fx, x)?;
        self.decode(&mut g, &mut fx, c, &s.parts)?;
        Ok(fx.trace.take().unwrap())
    }
}
