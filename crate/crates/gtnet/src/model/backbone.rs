//! Five-stage convolutional encoder, one instance per branch.
//!
//! Stage `k` halves the resolution (strided 3x3 conv) and applies a second
//! 3x3 conv, giving the (2,4,8,16,32) stride ladder. An external override can
//! replace a stage output as the next stage's input, which is how fused
//! features are injected into the student branch.

use ndarray::Array3;

use crate::config::ModelConfig;
use crate::error::{GtError, Result};
use crate::nn::{Graph, ParamDef, ParamStore, Var};

use super::{Branch, FeaturePyramid};

#[derive(Debug, Clone)]
pub struct Encoder {
    prefix: String,
    widths: [usize; 5],
}

impl Encoder {
    pub fn new(prefix: impl Into<String>, widths: [usize; 5]) -> Self {
        Encoder { prefix: prefix.into(), widths }
    }

    pub fn param_defs(&self) -> Vec<ParamDef> {
        let mut defs = Vec::new();
        let mut c_in = 3;
        for (i, &w) in self.widths.iter().enumerate() {
            let k = i + 1;
            defs.push(ParamDef::conv(format!("{}.s{k}.conv1", self.prefix), w, c_in, 3));
            defs.push(ParamDef::conv(format!("{}.s{k}.conv2", self.prefix), w, w, 3));
            c_in = w;
        }
        defs
    }

    /// Run stage `k` (1-based) on `input`.
    pub fn stage(&self, g: &mut Graph, store: &ParamStore, k: usize, input: Var) -> Var {
        assert!((1..=5).contains(&k));
        let p = &self.prefix;
        let w1 = g.param(store, &format!("{p}.s{k}.conv1.w"));
        let b1 = g.param(store, &format!("{p}.s{k}.conv1.b"));
        let c1 = g.conv2d(input, w1, b1, 2, 1, 1);
        let a1 = g.silu(c1);
        let w2 = g.param(store, &format!("{p}.s{k}.conv2.w"));
        let b2 = g.param(store, &format!("{p}.s{k}.conv2.b"));
        let c2 = g.conv2d(a1, w2, b2, 1, 1, 1);
        g.silu(c2)
    }

    /// All five stage outputs. `overrides[k-1]`, when present, replaces the
    /// stage-k output as the input of stage k+1; the reported pyramid still
    /// holds the encoder's own outputs.
    pub fn forward_vars(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        image: Var,
        overrides: Option<&[Option<Var>; 5]>,
    ) -> [Var; 5] {
        let mut levels = [image; 5];
        let mut cur = image;
        for k in 1..=5 {
            let f = self.stage(g, store, k, cur);
            levels[k - 1] = f;
            cur = overrides
                .and_then(|o| o[k - 1])
                .unwrap_or(f);
        }
        levels
    }
}

/// Run one branch encoder over an image and collect the feature pyramid.
///
/// `stage_inputs[k-1]`, when given, must match the shape of level k and is
/// consumed by stage k+1 instead of the encoder's own output.
pub fn extract_pyramid(
    config: &ModelConfig,
    store: &ParamStore,
    branch: Branch,
    image: &Array3<f64>,
    stage_inputs: Option<&[Option<Array3<f64>>; 5]>,
) -> Result<FeaturePyramid> {
    let s = config.input_size;
    if image.dim().0 != 3 || image.dim().1 != image.dim().2 {
        return Err(GtError::Input(format!(
            "expected a square 3-channel image, got {:?}",
            image.dim()
        )));
    }
    if image.dim().1 != s {
        return Err(GtError::Input(format!(
            "image is {}x{} but the configured input size is {s}",
            image.dim().1,
            image.dim().2
        )));
    }
    if image.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(GtError::Input("image values must lie in [0,1]".into()));
    }
    if let Some(inputs) = stage_inputs {
        for (i, slot) in inputs.iter().enumerate() {
            if let Some(t) = slot {
                let expect = config.pyramid_shapes()[i];
                if t.dim() != expect {
                    return Err(GtError::Config(format!(
                        "stage input override for level {} has shape {:?}, expected {:?}",
                        i + 1,
                        t.dim(),
                        expect
                    )));
                }
            }
        }
    }

    let encoder = encoder_for(config, branch);
    let mut g = Graph::new();
    let img = g.constant(image.clone().into_dyn());
    let override_vars = stage_inputs.map(|inputs| {
        let mut vars: [Option<Var>; 5] = [None; 5];
        for (i, slot) in inputs.iter().enumerate() {
            if let Some(t) = slot {
                vars[i] = Some(g.constant(t.clone().into_dyn()));
            }
        }
        vars
    });
    let levels = encoder.forward_vars(&mut g, store, img, override_vars.as_ref());
    let pyramid = FeaturePyramid {
        levels: levels
            .iter()
            .map(|&v| {
                g.value(v)
                    .clone()
                    .into_dimensionality::<ndarray::Ix3>()
                    .expect("stage output rank 3")
            })
            .collect(),
        branch,
    };
    pyramid.validate(config)?;
    Ok(pyramid)
}

/// The branch's encoder with its canonical parameter prefix.
pub fn encoder_for(config: &ModelConfig, branch: Branch) -> Encoder {
    match branch {
        Branch::Motion => Encoder::new("teacher.enc", config.widths),
        Branch::Appearance => Encoder::new("student.enc", config.widths),
    }
}
