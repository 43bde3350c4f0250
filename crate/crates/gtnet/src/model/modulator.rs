//! Temporal modulator: channel attention, then spatial attention, applied to
//! motion features before they are added into the appearance branch.
//!
//! Channel attention gates each channel with `sigmoid(fc2(relu(fc1(maxpool))))`
//! where the pooling is an adaptive spatial max to 1x1. Spatial attention
//! gates each pixel with a sigmoid-activated 7x7 convolution over the
//! channel-wise max (optionally stacked with the channel-wise mean).

use crate::config::SaPool;
use crate::error::{GtError, Result};
use crate::nn::{Graph, ParamDef, ParamStore, Var};

#[derive(Debug, Clone)]
pub struct TemporalModulator {
    prefix: String,
    channels: usize,
    reduction: usize,
    sa_pool: SaPool,
    use_ca: bool,
    use_sa: bool,
}

impl TemporalModulator {
    pub fn new(
        prefix: impl Into<String>,
        channels: usize,
        reduction: usize,
        sa_pool: SaPool,
        use_ca: bool,
        use_sa: bool,
    ) -> Self {
        assert!(channels > 0 && reduction > 0 && channels % reduction == 0,
            "reduction ratio must divide the channel count");
        TemporalModulator { prefix: prefix.into(), channels, reduction, sa_pool, use_ca, use_sa }
    }

    pub fn param_defs(&self) -> Vec<ParamDef> {
        let mut defs = Vec::new();
        if self.use_ca {
            let hidden = self.channels / self.reduction;
            defs.push(ParamDef::linear(format!("{}.ca.fc1", self.prefix), hidden, self.channels));
            defs.push(ParamDef::linear(format!("{}.ca.fc2", self.prefix), self.channels, hidden));
        }
        if self.use_sa {
            defs.push(ParamDef::conv(format!("{}.sa.conv", self.prefix), 1, self.sa_pool.channels(), 7));
        }
        defs
    }

    fn check_channels(&self, g: &Graph, x: Var) -> Result<()> {
        let shape = g.shape(x);
        if shape.len() != 3 || shape[0] != self.channels {
            return Err(GtError::Config(format!(
                "modulator {} expects ({},H,W) features, got {:?}",
                self.prefix, self.channels, shape
            )));
        }
        Ok(())
    }

    /// Per-channel sigmoid gate from the spatially max-pooled descriptor.
    pub fn channel_attention(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        self.check_channels(g, x)?;
        let pooled = g.global_max_pool(x);
        let w1 = g.param(store, &format!("{}.ca.fc1.w", self.prefix));
        let b1 = g.param(store, &format!("{}.ca.fc1.b", self.prefix));
        let h = g.linear(pooled, w1, b1);
        let h = g.relu(h);
        let w2 = g.param(store, &format!("{}.ca.fc2.w", self.prefix));
        let b2 = g.param(store, &format!("{}.ca.fc2.b", self.prefix));
        let z = g.linear(h, w2, b2);
        let gate = g.sigmoid(z);
        Ok(g.scale_channels(x, gate))
    }

    /// Per-pixel sigmoid gate from a 7x7 convolution over the pooled stack.
    pub fn spatial_attention(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        self.check_channels(g, x)?;
        let mx = g.channel_max(x);
        let desc = match self.sa_pool {
            SaPool::MaxMean => {
                let mean = g.channel_mean(x);
                g.concat_channels(&[mx, mean])
            }
            SaPool::MaxOnly => mx,
        };
        let w = g.param(store, &format!("{}.sa.conv.w", self.prefix));
        let b = g.param(store, &format!("{}.sa.conv.b", self.prefix));
        let z = g.conv2d(desc, w, b, 1, 3, 1);
        let gate = g.sigmoid(z);
        Ok(g.scale_pixels(x, gate))
    }

    /// The modulator function: spatial attention after channel attention.
    /// With both attentions ablated away this is the identity.
    pub fn modulate(&self, g: &mut Graph, store: &ParamStore, f_m: Var) -> Result<Var> {
        self.check_channels(g, f_m)?;
        let mut cur = f_m;
        if self.use_ca {
            cur = self.channel_attention(g, store, cur)?;
        }
        if self.use_sa {
            cur = self.spatial_attention(g, store, cur)?;
        }
        Ok(cur)
    }

    /// Implicit guidance: add the modulated motion feature into the
    /// appearance feature of the same pyramid level.
    pub fn fuse(&self, g: &mut Graph, store: &ParamStore, f_a: Var, f_m: Var) -> Result<Var> {
        if g.shape(f_a) != g.shape(f_m) {
            return Err(GtError::Config(format!(
                "implicit guidance needs matching shapes, got {:?} vs {:?}",
                g.shape(f_a),
                g.shape(f_m)
            )));
        }
        let modulated = self.modulate(g, store, f_m)?;
        Ok(g.add(f_a, modulated))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_param_store, Graph};
    use ndarray::{Array1, Array2, Array3, Array4};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(z: f64) -> f64 {
        1.0 / (1.0 + (-z).exp())
    }

    fn modulator(channels: usize, reduction: usize) -> (TemporalModulator, ParamStore) {
        let tm = TemporalModulator::new("tm.l3", channels, reduction, SaPool::MaxMean, true, true);
        let store = init_param_store(&tm.param_defs(), 9);
        (tm, store)
    }

    fn rand3(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Array3<f64> {
        Array3::from_shape_fn((c, h, w), |_| rng.gen_range(-1.0..1.0))
    }

    fn zero_store(store: &mut ParamStore) {
        let names: Vec<String> = store.names().map(String::from).collect();
        for n in names {
            store.get_mut(&n).unwrap().fill(0.0);
        }
    }

    /// Element-by-element channel attention written directly from the
    /// definition; the independent oracle for the tape implementation.
    fn channel_attention_scalar(
        x: &Array3<f64>,
        w1: &Array2<f64>,
        b1: &Array1<f64>,
        w2: &Array2<f64>,
        b2: &Array1<f64>,
    ) -> Array3<f64> {
        let (c, h, w) = x.dim();
        let mut pooled = vec![f64::NEG_INFINITY; c];
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    pooled[ci] = pooled[ci].max(x[(ci, i, j)]);
                }
            }
        }
        let hidden = w1.dim().0;
        let mut hvec = vec![0.0; hidden];
        for j in 0..hidden {
            let mut acc = b1[j];
            for ci in 0..c {
                acc += w1[(j, ci)] * pooled[ci];
            }
            hvec[j] = acc.max(0.0);
        }
        let mut out = x.clone();
        for ci in 0..c {
            let mut z = b2[ci];
            for j in 0..hidden {
                z += w2[(ci, j)] * hvec[j];
            }
            let gate = sigmoid(z);
            for i in 0..h {
                for j in 0..w {
                    out[(ci, i, j)] = gate * x[(ci, i, j)];
                }
            }
        }
        out
    }

    /// Scalar-loop spatial attention (max+mean stack, 7x7 conv, sigmoid).
    fn spatial_attention_scalar(
        x: &Array3<f64>,
        w: &Array4<f64>,
        b: f64,
    ) -> Array3<f64> {
        let (c, h, wd) = x.dim();
        let mut desc = Array3::<f64>::zeros((2, h, wd));
        for i in 0..h {
            for j in 0..wd {
                let mut mx = f64::NEG_INFINITY;
                let mut acc = 0.0;
                for ci in 0..c {
                    mx = mx.max(x[(ci, i, j)]);
                    acc += x[(ci, i, j)];
                }
                desc[(0, i, j)] = mx;
                desc[(1, i, j)] = acc / c as f64;
            }
        }
        let mut out = x.clone();
        for i in 0..h {
            for j in 0..wd {
                let mut z = b;
                for dc in 0..2 {
                    for ki in 0..7 {
                        for kj in 0..7 {
                            let iy = i as isize + ki as isize - 3;
                            let ix = j as isize + kj as isize - 3;
                            if iy < 0 || iy >= h as isize || ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            z += desc[(dc, iy as usize, ix as usize)] * w[(0, dc, ki, kj)];
                        }
                    }
                }
                let gate = sigmoid(z);
                for ci in 0..c {
                    out[(ci, i, j)] *= gate;
                }
            }
        }
        out
    }

    #[test]
    fn channel_attention_zero_input_gives_zero() {
        let (tm, store) = modulator(4, 4);
        let mut g = Graph::new();
        let x = g.constant(Array3::<f64>::zeros((4, 3, 3)).into_dyn());
        let y = tm.channel_attention(&mut g, &store, x).unwrap();
        assert!(g.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_attention_zero_params_halve_input() {
        let (tm, mut store) = modulator(4, 4);
        zero_store(&mut store);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xv = rand3(&mut rng, 4, 3, 3);
        let mut g = Graph::new();
        let x = g.constant(xv.clone().into_dyn());
        let y = tm.channel_attention(&mut g, &store, x).unwrap();
        for (&got, &orig) in g.value(y).iter().zip(xv.iter()) {
            assert!((got - 0.5 * orig).abs() < 1e-15);
        }
    }

    #[test]
    fn channel_attention_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..50 {
            let (tm, store) = {
                let tm = TemporalModulator::new("tm.l3", 2, 2, SaPool::MaxMean, true, true);
                let store = init_param_store(&tm.param_defs(), 100 + trial);
                (tm, store)
            };
            let xv = rand3(&mut rng, 2, 2, 2);
            let mut g = Graph::new();
            let x = g.constant(xv.clone().into_dyn());
            let y = tm.channel_attention(&mut g, &store, x).unwrap();

            let w1 = store.get("tm.l3.ca.fc1.w").unwrap().clone().into_dimensionality().unwrap();
            let b1 = store.get("tm.l3.ca.fc1.b").unwrap().clone().into_dimensionality().unwrap();
            let w2 = store.get("tm.l3.ca.fc2.w").unwrap().clone().into_dimensionality().unwrap();
            let b2 = store.get("tm.l3.ca.fc2.b").unwrap().clone().into_dimensionality().unwrap();
            let expect = channel_attention_scalar(&xv, &w1, &b1, &w2, &b2);
            for (&got, &want) in g.value(y).iter().zip(expect.iter()) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spatial_attention_zero_input_and_zero_params() {
        let (tm, mut store) = modulator(2, 2);
        let mut g = Graph::new();
        let x = g.constant(Array3::<f64>::zeros((2, 4, 4)).into_dyn());
        let y = tm.spatial_attention(&mut g, &store, x).unwrap();
        assert!(g.value(y).iter().all(|&v| v == 0.0));

        zero_store(&mut store);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xv = rand3(&mut rng, 2, 4, 4);
        let mut g = Graph::new();
        let x = g.constant(xv.clone().into_dyn());
        let y = tm.spatial_attention(&mut g, &store, x).unwrap();
        for (&got, &orig) in g.value(y).iter().zip(xv.iter()) {
            assert!((got - 0.5 * orig).abs() < 1e-15);
        }
    }

    #[test]
    fn spatial_attention_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..50 {
            let tm = TemporalModulator::new("tm.l3", 2, 2, SaPool::MaxMean, true, true);
            let store = init_param_store(&tm.param_defs(), 200 + trial);
            let xv = rand3(&mut rng, 2, 4, 4);
            let mut g = Graph::new();
            let x = g.constant(xv.clone().into_dyn());
            let y = tm.spatial_attention(&mut g, &store, x).unwrap();

            let w = store.get("tm.l3.sa.conv.w").unwrap().clone().into_dimensionality().unwrap();
            let b = store.get("tm.l3.sa.conv.b").unwrap()[[0]];
            let expect = spatial_attention_scalar(&xv, &w, b);
            for (&got, &want) in g.value(y).iter().zip(expect.iter()) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn max_only_descriptor_mode() {
        let tm = TemporalModulator::new("tm.l3", 2, 2, SaPool::MaxOnly, true, true);
        let store = init_param_store(&tm.param_defs(), 5);
        let w = store.get("tm.l3.sa.conv.w").unwrap();
        assert_eq!(w.shape(), &[1, 1, 7, 7], "max-only mode feeds a single channel");
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xv = rand3(&mut rng, 2, 4, 4);
        let mut g = Graph::new();
        let x = g.constant(xv.into_dyn());
        let y = tm.spatial_attention(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(y), &[2, 4, 4]);
    }

    #[test]
    fn modulate_composes_and_absorbs_zero() {
        let (tm, store) = modulator(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xv = rand3(&mut rng, 4, 5, 5);

        let mut g = Graph::new();
        let x = g.constant(xv.clone().into_dyn());
        let direct = tm.modulate(&mut g, &store, x).unwrap();
        let ca = tm.channel_attention(&mut g, &store, x).unwrap();
        let composed = tm.spatial_attention(&mut g, &store, ca).unwrap();
        assert_eq!(g.value(direct), g.value(composed));

        // Zero absorption holds for any parameters.
        let mut g = Graph::new();
        let z = g.constant(Array3::<f64>::zeros((4, 5, 5)).into_dyn());
        let out = tm.modulate(&mut g, &store, z).unwrap();
        assert!(g.value(out).iter().all(|&v| v == 0.0));

        // All-zero params compose two 0.5 gates.
        let (tm, mut store) = modulator(4, 2);
        zero_store(&mut store);
        let mut g = Graph::new();
        let x = g.constant(xv.clone().into_dyn());
        let out = tm.modulate(&mut g, &store, x).unwrap();
        for (&got, &orig) in g.value(out).iter().zip(xv.iter()) {
            assert!((got - 0.25 * orig).abs() < 1e-15);
        }
    }

    #[test]
    fn fuse_identities() {
        let (tm, store) = modulator(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let fa = rand3(&mut rng, 4, 5, 5);
        let fm = rand3(&mut rng, 4, 5, 5);

        // f_M = 0 leaves f_A untouched.
        let mut g = Graph::new();
        let a = g.constant(fa.clone().into_dyn());
        let zero = g.constant(Array3::<f64>::zeros((4, 5, 5)).into_dyn());
        let fused = tm.fuse(&mut g, &store, a, zero).unwrap();
        assert_eq!(g.value(fused), &fa.clone().into_dyn());

        // f_A = 0 returns the modulated motion feature.
        let mut g = Graph::new();
        let zero = g.constant(Array3::<f64>::zeros((4, 5, 5)).into_dyn());
        let m = g.constant(fm.clone().into_dyn());
        let fused = tm.fuse(&mut g, &store, zero, m).unwrap();
        let modulated = tm.modulate(&mut g, &store, m).unwrap();
        assert_eq!(g.value(fused), g.value(modulated));

        // Random pair: element-wise sum against a scalar loop.
        let mut g = Graph::new();
        let a = g.constant(fa.clone().into_dyn());
        let m = g.constant(fm.clone().into_dyn());
        let fused = tm.fuse(&mut g, &store, a, m).unwrap();
        let modulated = tm.modulate(&mut g, &store, m).unwrap();
        for ((&got, &fa_v), &mod_v) in g
            .value(fused)
            .iter()
            .zip(fa.iter())
            .zip(g.value(modulated).iter())
        {
            assert_eq!(got, fa_v + mod_v);
        }
    }

    #[test]
    fn shape_mismatches_are_config_errors() {
        let (tm, store) = modulator(4, 2);
        let mut g = Graph::new();
        let wrong = g.constant(Array3::<f64>::zeros((3, 5, 5)).into_dyn());
        assert!(matches!(
            tm.channel_attention(&mut g, &store, wrong),
            Err(GtError::Config(_))
        ));
        let a = g.constant(Array3::<f64>::zeros((4, 5, 5)).into_dyn());
        let b = g.constant(Array3::<f64>::zeros((4, 4, 5)).into_dyn());
        assert!(matches!(tm.fuse(&mut g, &store, a, b), Err(GtError::Config(_))));
    }

    /// Analytic gradients through the fused path vs central finite
    /// differences at step 1e-3.
    #[test]
    fn fuse_gradient_check() {
        let tm = TemporalModulator::new("tm.l3", 4, 2, SaPool::MaxMean, true, true);
        let store = init_param_store(&tm.param_defs(), 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let fa = rand3(&mut rng, 4, 4, 4);
        let fm = rand3(&mut rng, 4, 4, 4);

        let loss_at = |store: &ParamStore| -> f64 {
            let mut g = Graph::new();
            let a = g.constant(fa.clone().into_dyn());
            let m = g.constant(fm.clone().into_dyn());
            let fused = tm.fuse(&mut g, store, a, m).unwrap();
            let l = g.sum(fused);
            g.scalar_value(l)
        };

        let mut g = Graph::new();
        let a = g.constant(fa.clone().into_dyn());
        let m = g.constant(fm.clone().into_dyn());
        let fused = tm.fuse(&mut g, &store, a, m).unwrap();
        let loss = g.sum(fused);
        let grads = g.backward(loss);
        let by_name = g.param_grads(&grads);

        let step = 1e-3;
        let mut checked = 0;
        for (name, grad) in &by_name {
            for idx in 0..grad.len().min(8) {
                let mut plus = store.clone();
                plus.get_mut(name).unwrap().as_slice_mut().unwrap()[idx] += step;
                let mut minus = store.clone();
                minus.get_mut(name).unwrap().as_slice_mut().unwrap()[idx] -= step;
                let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
                let analytic = grad.as_slice().unwrap()[idx];
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    ((analytic - numeric) / denom).abs() < 1e-4,
                    "{name}[{idx}]: analytic {analytic} vs numeric {numeric}"
                );
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn shape_preserved_and_gates_bounded(
            c in 1usize..6,
            h in 1usize..6,
            w in 1usize..6,
            seed in 0u64..1000,
        ) {
            let tm = TemporalModulator::new("tm.l1", c, 1, SaPool::MaxMean, true, true);
            let store = init_param_store(&tm.param_defs(), seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xv = Array3::from_shape_fn((c, h, w), |_| rng.gen_range(-2.0..2.0));
            let mut g = Graph::new();
            let x = g.constant(xv.clone().into_dyn());
            let y = tm.modulate(&mut g, &store, x).unwrap();
            prop_assert_eq!(g.shape(y), &[c, h, w]);
            // |gate| < 1 twice over means |y| < |x| strictly unless x == 0.
            for (&out, &inp) in g.value(y).iter().zip(xv.iter()) {
                if inp == 0.0 {
                    prop_assert_eq!(out, 0.0);
                } else {
                    prop_assert!(out.abs() < inp.abs());
                    prop_assert!(out * inp >= 0.0, "gates never flip sign");
                }
            }
        }
    }
}
