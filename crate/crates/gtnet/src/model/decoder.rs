//! Partial decoder: receptive-field refinement of the top three pyramid
//! levels, multiplicative feature broadcasting, and a truncated top-down
//! aggregation ending in a single-channel logit head at stride 8.
//!
//! Teacher and student instances share this structure but never parameters.

use crate::error::{GtError, Result};
use crate::nn::{Graph, ParamDef, ParamStore, Var};

/// Four-branch receptive-field block: a 1x1 branch plus three
/// 1x1 -> 3x3 branches at dilations 3/5/7, concatenated, fused by a 1x1
/// convolution and joined with a 1x1 residual shortcut.
#[derive(Debug, Clone)]
pub struct RfBlock {
    prefix: String,
    c_in: usize,
    width: usize,
}

const DILATIONS: [usize; 3] = [3, 5, 7];

impl RfBlock {
    pub fn new(prefix: impl Into<String>, c_in: usize, width: usize) -> Self {
        RfBlock { prefix: prefix.into(), c_in, width }
    }

    pub fn param_defs(&self) -> Vec<ParamDef> {
        let p = &self.prefix;
        let (c_in, w) = (self.c_in, self.width);
        let mut defs = vec![ParamDef::conv(format!("{p}.br0"), w, c_in, 1)];
        for (i, _) in DILATIONS.iter().enumerate() {
            defs.push(ParamDef::conv(format!("{p}.br{}.reduce", i + 1), w, c_in, 1));
            defs.push(ParamDef::conv(format!("{p}.br{}.dilated", i + 1), w, w, 3));
        }
        defs.push(ParamDef::conv(format!("{p}.fuse"), w, 4 * w, 1));
        defs.push(ParamDef::conv(format!("{p}.short"), w, c_in, 1));
        defs
    }

    fn conv(&self, g: &mut Graph, store: &ParamStore, name: &str, x: Var, pad: usize, dilation: usize) -> Var {
        let w = g.param(store, &format!("{}.{name}.w", self.prefix));
        let b = g.param(store, &format!("{}.{name}.b", self.prefix));
        g.conv2d(x, w, b, 1, pad, dilation)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 3 || shape[0] != self.c_in {
            return Err(GtError::Config(format!(
                "rf block {} expects ({},H,W), got {:?}",
                self.prefix, self.c_in, shape
            )));
        }
        let c0 = self.conv(g, store, "br0", x, 0, 1);
        let mut branches = vec![g.silu(c0)];
        for (i, &d) in DILATIONS.iter().enumerate() {
            let r = self.conv(g, store, &format!("br{}.reduce", i + 1), x, 0, 1);
            let r = g.silu(r);
            let c = self.conv(g, store, &format!("br{}.dilated", i + 1), r, d, d);
            branches.push(g.silu(c));
        }
        let cat = g.concat_channels(&branches);
        let fused = self.conv(g, store, "fuse", cat, 0, 1);
        let shortcut = self.conv(g, store, "short", x, 0, 1);
        let joined = g.add(fused, shortcut);
        Ok(g.silu(joined))
    }
}

/// The partial decoder over refined levels 3..5.
#[derive(Debug, Clone)]
pub struct PartialDecoder {
    prefix: String,
    rf: [RfBlock; 3],
    width: usize,
}

impl PartialDecoder {
    /// `in_widths` are the channel counts of the level 3/4/5 inputs.
    pub fn new(prefix: impl Into<String>, in_widths: [usize; 3], width: usize) -> Self {
        let prefix = prefix.into();
        let rf = [
            RfBlock::new(format!("{prefix}.rf3"), in_widths[0], width),
            RfBlock::new(format!("{prefix}.rf4"), in_widths[1], width),
            RfBlock::new(format!("{prefix}.rf5"), in_widths[2], width),
        ];
        PartialDecoder { prefix, rf, width }
    }

    pub fn param_defs(&self) -> Vec<ParamDef> {
        let p = &self.prefix;
        let w = self.width;
        let mut defs: Vec<ParamDef> = self.rf.iter().flat_map(|b| b.param_defs()).collect();
        // Broadcast transforms g<delta(r_i); W_i^k>, one per (source, target).
        defs.push(ParamDef::conv(format!("{p}.bc.g4_3"), w, w, 3));
        defs.push(ParamDef::conv(format!("{p}.bc.g5_3"), w, w, 3));
        defs.push(ParamDef::conv(format!("{p}.bc.g5_4"), w, w, 3));
        defs.push(ParamDef::conv(format!("{p}.agg.conv4"), w, w, 3));
        defs.push(ParamDef::conv(format!("{p}.agg.conv3"), w, w, 3));
        defs.push(ParamDef::conv(format!("{p}.agg.head"), 1, w, 1));
        defs
    }

    /// Receptive-field refinement of pyramid level `k` in {3,4,5}.
    pub fn rf_block(&self, g: &mut Graph, store: &ParamStore, k: usize, f_k: Var) -> Result<Var> {
        if !(3..=5).contains(&k) {
            return Err(GtError::Config(format!(
                "partial decoder refines levels 3..=5 only, got {k}"
            )));
        }
        self.rf[k - 3].forward(g, store, f_k)
    }

    /// Upsample-transform-gate: `relu(conv3x3(resize(src)))`. The plain
    /// rectifier keeps an exact identity configuration reachable.
    fn broadcast_transform(&self, g: &mut Graph, store: &ParamStore, name: &str, src: Var, size: usize) -> Var {
        let up = g.bilinear_resize(src, size, size);
        let w = g.param(store, &format!("{}.bc.{name}.w", self.prefix));
        let b = g.param(store, &format!("{}.bc.{name}.b", self.prefix));
        let c = g.conv2d(up, w, b, 1, 1, 1);
        g.relu(c)
    }

    fn check_triple(&self, g: &Graph, r3: Var, r4: Var, r5: Var) -> Result<(usize, usize, usize)> {
        let (s3, s4, s5) = (g.shape(r3).to_vec(), g.shape(r4).to_vec(), g.shape(r5).to_vec());
        for (lvl, s) in [(3, &s3), (4, &s4), (5, &s5)] {
            if s.len() != 3 || s[0] != self.width || s[1] != s[2] {
                return Err(GtError::Input(format!(
                    "refined level {lvl} must be ({},N,N), got {s:?}",
                    self.width
                )));
            }
        }
        if s3[1] != 2 * s4[1] || s4[1] != 2 * s5[1] {
            return Err(GtError::Input(format!(
                "refined levels must step down by exact 2x: {} / {} / {}",
                s3[1], s4[1], s5[1]
            )));
        }
        Ok((s3[1], s4[1], s5[1]))
    }

    /// Step-I: gate each level by the transformed upsamplings of all higher
    /// levels. Level 5 is the empty product and passes through untouched.
    pub fn feature_broadcast(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        r3: Var,
        r4: Var,
        r5: Var,
    ) -> Result<(Var, Var, Var)> {
        let (sz3, sz4, _) = self.check_triple(g, r3, r4, r5)?;
        let p5 = r5;
        let t5_4 = self.broadcast_transform(g, store, "g5_4", r5, sz4);
        let p4 = g.mul(r4, t5_4);
        let t4_3 = self.broadcast_transform(g, store, "g4_3", r4, sz3);
        let t5_3 = self.broadcast_transform(g, store, "g5_3", r5, sz3);
        let p3a = g.mul(r3, t4_3);
        let p3 = g.mul(p3a, t5_3);
        Ok((p3, p4, p5))
    }

    /// Step-II: truncated top-down pathway (additive fusion) ending in the
    /// 1-channel logit head at stride 8.
    pub fn unet_aggregate(&self, g: &mut Graph, store: &ParamStore, p3: Var, p4: Var, p5: Var) -> Result<Var> {
        let (sz3, sz4, _) = self.check_triple(g, p3, p4, p5)?;
        let p = &self.prefix;
        let up5 = g.bilinear_resize(p5, sz4, sz4);
        let s4 = g.add(up5, p4);
        let w4 = g.param(store, &format!("{p}.agg.conv4.w"));
        let b4 = g.param(store, &format!("{p}.agg.conv4.b"));
        let c4 = g.conv2d(s4, w4, b4, 1, 1, 1);
        let u4 = g.silu(c4);

        let up4 = g.bilinear_resize(u4, sz3, sz3);
        let s3 = g.add(up4, p3);
        let w3 = g.param(store, &format!("{p}.agg.conv3.w"));
        let b3 = g.param(store, &format!("{p}.agg.conv3.b"));
        let c3 = g.conv2d(s3, w3, b3, 1, 1, 1);
        let u3 = g.silu(c3);

        let wh = g.param(store, &format!("{p}.agg.head.w"));
        let bh = g.param(store, &format!("{p}.agg.head.b"));
        Ok(g.conv2d(u3, wh, bh, 1, 0, 1))
    }

    /// The whole partial decode: refine, broadcast, aggregate.
    pub fn decode(&self, g: &mut Graph, store: &ParamStore, f3: Var, f4: Var, f5: Var) -> Result<Var> {
        let r3 = self.rf_block(g, store, 3, f3)?;
        let r4 = self.rf_block(g, store, 4, f4)?;
        let r5 = self.rf_block(g, store, 5, f5)?;
        let (p3, p4, p5) = self.feature_broadcast(g, store, r3, r4, r5)?;
        self.unet_aggregate(g, store, p3, p4, p5)
    }
}

/// Ablation stand-in for the student partial decoder: project each taught
/// level to the decoder width, upsample-add, one 3x3 conv, 1x1 head.
#[derive(Debug, Clone)]
pub struct NaiveAggregator {
    prefix: String,
    in_widths: [usize; 3],
    width: usize,
}

impl NaiveAggregator {
    pub fn new(prefix: impl Into<String>, in_widths: [usize; 3], width: usize) -> Self {
        NaiveAggregator { prefix: prefix.into(), in_widths, width }
    }

    pub fn param_defs(&self) -> Vec<ParamDef> {
        let p = &self.prefix;
        let w = self.width;
        vec![
            ParamDef::conv(format!("{p}.proj3"), w, self.in_widths[0], 1),
            ParamDef::conv(format!("{p}.proj4"), w, self.in_widths[1], 1),
            ParamDef::conv(format!("{p}.proj5"), w, self.in_widths[2], 1),
            ParamDef::conv(format!("{p}.fuse"), w, w, 3),
            ParamDef::conv(format!("{p}.head"), 1, w, 1),
        ]
    }

    pub fn decode(&self, g: &mut Graph, store: &ParamStore, f3: Var, f4: Var, f5: Var) -> Result<Var> {
        let sz3 = g.shape(f3)[1];
        let p = &self.prefix;
        let mut acc: Option<Var> = None;
        for (idx, f) in [(3usize, f3), (4, f4), (5, f5)] {
            let w = g.param(store, &format!("{p}.proj{idx}.w"));
            let b = g.param(store, &format!("{p}.proj{idx}.b"));
            let c = g.conv2d(f, w, b, 1, 0, 1);
            let q = g.silu(c);
            let q = if g.shape(q)[1] == sz3 { q } else { g.bilinear_resize(q, sz3, sz3) };
            acc = Some(match acc {
                Some(a) => g.add(a, q),
                None => q,
            });
        }
        let s = acc.unwrap();
        let wf = g.param(store, &format!("{p}.fuse.w"));
        let bf = g.param(store, &format!("{p}.fuse.b"));
        let c = g.conv2d(s, wf, bf, 1, 1, 1);
        let u = g.silu(c);
        let wh = g.param(store, &format!("{p}.head.w"));
        let bh = g.param(store, &format!("{p}.head.b"));
        Ok(g.conv2d(u, wh, bh, 1, 0, 1))
    }
}
