//! Full dual-branch assembly: encoders, per-level implicit guidance, teacher
//! decode, explicit teaching, student decode, and the ablation switchboard.

use ndarray::{Array2, Array3};

use crate::config::{Mode, ModelConfig};
use crate::error::{GtError, Result};
use crate::nn::{count_elements, init_param_store, Graph, ParamDef, ParamStore, Var};

use super::backbone::Encoder;
use super::decoder::{NaiveAggregator, PartialDecoder, RfBlock};
use super::modulator::TemporalModulator;
use super::{MapDomain, ModelOutput, SaliencyMap};

/// Mask source when the teacher partial decoder is ablated away: the refined
/// level-5 feature through a 1x1 head, upsampled to stride 8.
#[derive(Debug, Clone)]
struct TeacherMaskHead {
    rf5: RfBlock,
}

/// Multiply the motion-guided probability mask into a taught feature level:
/// `f_et = f ⊕ (f ⊗ resize(mask))`, mask broadcast over channels.
pub fn explicit_teach(g: &mut Graph, f_tm: Var, mask_prob: Var, k: usize) -> Result<Var> {
    if !(3..=5).contains(&k) {
        return Err(GtError::Config(format!("explicit teaching applies to levels 3..=5, got {k}")));
    }
    let mshape = g.shape(mask_prob).to_vec();
    if mshape.len() != 3 || mshape[0] != 1 {
        return Err(GtError::Input(format!("teaching mask must be (1,H,W), got {mshape:?}")));
    }
    if g.value(mask_prob).iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(GtError::Domain("teaching mask must lie in [0,1]".into()));
    }
    let fshape = g.shape(f_tm).to_vec();
    let mask_k = if (mshape[1], mshape[2]) == (fshape[1], fshape[2]) {
        mask_prob
    } else {
        g.bilinear_resize(mask_prob, fshape[1], fshape[2])
    };
    let gated = g.scale_pixels(f_tm, mask_k);
    Ok(g.add(f_tm, gated))
}

/// Stride-8 and input-resolution logit nodes of one forward pass.
pub struct ForwardVars {
    /// Student prediction logits at input resolution.
    pub z_a: Option<Var>,
    /// Motion-guided mask logits at input resolution.
    pub z_m: Option<Var>,
    /// Student logits at stride 8 (before upsampling).
    pub z_a8: Option<Var>,
    /// Teacher logits at stride 8.
    pub z_m8: Option<Var>,
}

impl ForwardVars {
    /// The node this variant reports as its prediction.
    pub fn prediction(&self) -> Var {
        self.z_a.or(self.z_m).expect("forward produced no output")
    }
}

/// The assembled model. Which submodules exist follows from the ablation
/// flags, so absent paths have no parameters at all.
#[derive(Debug, Clone)]
pub struct GtNet {
    pub config: ModelConfig,
    teacher_enc: Option<Encoder>,
    student_enc: Option<Encoder>,
    modulators: Vec<TemporalModulator>,
    teacher_dec: Option<PartialDecoder>,
    teacher_mask_head: Option<TeacherMaskHead>,
    student_dec: Option<PartialDecoder>,
    student_naive: Option<NaiveAggregator>,
}

impl GtNet {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let eff = config.ablation.effective();
        let use_motion = eff.mode != Mode::A;
        let use_student = eff.mode != Mode::M;
        let dec_in = [config.widths[2], config.widths[3], config.widths[4]];
        let dw = config.decoder_width();

        let teacher_enc = use_motion.then(|| Encoder::new("teacher.enc", config.widths));
        let (teacher_dec, teacher_mask_head) = if use_motion {
            if eff.t_pd {
                (Some(PartialDecoder::new("teacher.dec", dec_in, dw)), None)
            } else {
                let rf5 = RfBlock::new("teacher.mask.rf5", config.widths[4], dw);
                (None, Some(TeacherMaskHead { rf5 }))
            }
        } else {
            (None, None)
        };

        let student_enc = use_student.then(|| Encoder::new("student.enc", config.widths));
        let (student_dec, student_naive) = if use_student {
            if eff.s_pd {
                (Some(PartialDecoder::new("student.dec", dec_in, dw)), None)
            } else {
                (None, Some(NaiveAggregator::new("student.naive", dec_in, dw)))
            }
        } else {
            (None, None)
        };

        let modulators = if config.ablation.fuses() && (eff.ca || eff.sa) {
            (1..=5)
                .map(|k| {
                    TemporalModulator::new(
                        format!("tm.l{k}"),
                        config.widths[k - 1],
                        config.ca_reduction,
                        config.sa_pool,
                        eff.ca,
                        eff.sa,
                    )
                })
                .collect()
        } else {
            Vec::new()
        };

        Ok(GtNet {
            config,
            teacher_enc,
            student_enc,
            modulators,
            teacher_dec,
            teacher_mask_head,
            student_dec,
            student_naive,
        })
    }

    pub fn param_defs(&self) -> Vec<ParamDef> {
        let mut defs = Vec::new();
        if let Some(enc) = &self.teacher_enc {
            defs.extend(enc.param_defs());
        }
        if let Some(dec) = &self.teacher_dec {
            defs.extend(dec.param_defs());
        }
        if let Some(head) = &self.teacher_mask_head {
            defs.extend(head.rf5.param_defs());
            defs.push(ParamDef::conv("teacher.mask.head", 1, self.config.decoder_width(), 1));
        }
        for tm in &self.modulators {
            defs.extend(tm.param_defs());
        }
        if let Some(enc) = &self.student_enc {
            defs.extend(enc.param_defs());
        }
        if let Some(dec) = &self.student_dec {
            defs.extend(dec.param_defs());
        }
        if let Some(agg) = &self.student_naive {
            defs.extend(agg.param_defs());
        }
        defs
    }

    /// Fresh parameters, deterministic in `config.seed`.
    pub fn init_parameters(&self) -> ParamStore {
        init_param_store(&self.param_defs(), self.config.seed)
    }

    /// Scalar parameter count without allocating anything.
    pub fn parameter_count(&self) -> usize {
        count_elements(&self.param_defs())
    }

    fn check_image(&self, name: &str, img: &Array3<f64>) -> Result<()> {
        let s = self.config.input_size;
        if img.dim() != (3, s, s) {
            return Err(GtError::Input(format!(
                "{name} must be (3,{s},{s}), got {:?}",
                img.dim()
            )));
        }
        if img.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(GtError::Input(format!("{name} values must lie in [0,1]")));
        }
        Ok(())
    }

    /// Build the forward graph. `frame` feeds the student branch, `flow` the
    /// teacher branch; single-branch modes need only their own input.
    /// `mask_override` replaces the teaching mask (stride-8 probability map),
    /// which is how the teaching path is probed in isolation.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        frame: Option<&Array3<f64>>,
        flow: Option<&Array3<f64>>,
        mask_override: Option<&Array2<f64>>,
    ) -> Result<ForwardVars> {
        let eff = self.config.ablation.effective();
        let s = self.config.input_size;
        let s8 = s / 8;

        // Teacher branch.
        let mut motion_levels: Option<[Var; 5]> = None;
        let mut z_m8 = None;
        if let Some(enc) = &self.teacher_enc {
            let flow = flow.ok_or_else(|| {
                GtError::Input(format!("mode {} requires an optical flow image", eff.mode))
            })?;
            self.check_image("flow", flow)?;
            let fv = g.constant(flow.clone().into_dyn());
            let m = enc.forward_vars(g, store, fv, None);
            motion_levels = Some(m);
            let logits8 = if let Some(dec) = &self.teacher_dec {
                dec.decode(g, store, m[2], m[3], m[4])?
            } else {
                let head = self.teacher_mask_head.as_ref().expect("mask source exists");
                let r5 = head.rf5.forward(g, store, m[4])?;
                let w = g.param(store, "teacher.mask.head.w");
                let b = g.param(store, "teacher.mask.head.b");
                let logits32 = g.conv2d(r5, w, b, 1, 0, 1);
                g.bilinear_resize(logits32, s8, s8)
            };
            z_m8 = Some(logits8);
        }

        // Student branch with in-path fusion at every level.
        let mut z_a8 = None;
        if let Some(enc) = &self.student_enc {
            let frame = frame.ok_or_else(|| {
                GtError::Input(format!("mode {} requires an appearance frame", eff.mode))
            })?;
            self.check_image("frame", frame)?;
            let xv = g.constant(frame.clone().into_dyn());
            let mut fused_levels = [xv; 5];
            let mut cur = xv;
            for k in 1..=5 {
                let a_k = enc.stage(g, store, k, cur);
                let f_k = if self.config.ablation.fuses() {
                    let m_k = motion_levels.expect("MA mode has motion features")[k - 1];
                    if self.modulators.is_empty() {
                        // Both attentions ablated: the modulator is the
                        // identity and fusion is a plain addition.
                        g.add(a_k, m_k)
                    } else {
                        self.modulators[k - 1].fuse(g, store, a_k, m_k)?
                    }
                } else {
                    a_k
                };
                fused_levels[k - 1] = f_k;
                cur = f_k;
            }

            // Explicit teaching on the top three levels.
            let taught: [Var; 3] = if eff.teaching {
                let mask8 = match mask_override {
                    Some(m) => {
                        if m.dim() != (s8, s8) {
                            return Err(GtError::Input(format!(
                                "mask override must be ({s8},{s8}), got {:?}",
                                m.dim()
                            )));
                        }
                        let m3 = m.clone().insert_axis(ndarray::Axis(0));
                        g.constant(m3.into_dyn())
                    }
                    None => {
                        let z = z_m8.ok_or_else(|| {
                            GtError::Config(
                                "teaching requested but no motion mask source exists".into(),
                            )
                        })?;
                        g.sigmoid(z)
                    }
                };
                let mut out = [fused_levels[2]; 3];
                for (i, k) in (3..=5).enumerate() {
                    out[i] = explicit_teach(g, fused_levels[k - 1], mask8, k)?;
                }
                out
            } else {
                [fused_levels[2], fused_levels[3], fused_levels[4]]
            };

            let logits8 = if let Some(dec) = &self.student_dec {
                dec.decode(g, store, taught[0], taught[1], taught[2])?
            } else {
                let agg = self.student_naive.as_ref().expect("student aggregator exists");
                agg.decode(g, store, taught[0], taught[1], taught[2])?
            };
            z_a8 = Some(logits8);
        }

        let z_m = z_m8.map(|z| g.bilinear_resize(z, s, s));
        let z_a = z_a8.map(|z| g.bilinear_resize(z, s, s));
        Ok(ForwardVars { z_a, z_m, z_a8, z_m8 })
    }

    /// Inference wrapper: runs the forward graph and activates the outputs.
    pub fn predict(
        &self,
        store: &ParamStore,
        frame: Option<&Array3<f64>>,
        flow: Option<&Array3<f64>>,
    ) -> Result<ModelOutput> {
        let mut g = Graph::new();
        let vars = self.forward(&mut g, store, frame, flow, None)?;
        let to_map = |g: &mut Graph, v: Var| -> (SaliencyMap, Array2<f64>) {
            let logits2 = squeeze_map(g.value(v));
            let act = g.sigmoid(v);
            let prob = squeeze_map(g.value(act));
            (SaliencyMap { data: prob, domain: MapDomain::Probability }, logits2)
        };
        let (z_a, z_a_logits) = match vars.z_a {
            Some(v) => {
                let (m, l) = to_map(&mut g, v);
                (Some(m), Some(l))
            }
            None => (None, None),
        };
        let (z_m, z_m_logits) = match vars.z_m {
            Some(v) => {
                let (m, l) = to_map(&mut g, v);
                (Some(m), Some(l))
            }
            None => (None, None),
        };
        Ok(ModelOutput { z_a, z_m, z_a_logits, z_m_logits })
    }
}

fn squeeze_map(v: &ndarray::ArrayD<f64>) -> Array2<f64> {
    let v3 = v.view().into_dimensionality::<ndarray::Ix3>().expect("map rank 3");
    assert_eq!(v3.dim().0, 1, "map must be single channel");
    v3.index_axis(ndarray::Axis(0), 0).to_owned()
}
