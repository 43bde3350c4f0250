//! Finite-difference verification of every analytic gradient path.
//!
//! Each case builds a scalar loss over a parameter store, computes tape
//! gradients once, then probes a deterministic sample of parameters with
//! central differences (step 1e-3, f64). A case passes when every probed
//! coordinate agrees within the relative-error threshold 1e-4.

use indexmap::IndexMap;
use ndarray::{Array3, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ModelConfig, SaPool};
use crate::error::Result;
use crate::model::{Encoder, GtNet, PartialDecoder, TemporalModulator};
use crate::nn::{init_param_store, Graph, ParamStore};

pub const FD_STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub module: String,
    pub group: String,
    pub params_checked: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub step: f64,
    pub threshold: f64,
    pub rows: Vec<GroupReport>,
    pub pass: bool,
}

impl GradcheckReport {
    pub fn modules(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for row in &self.rows {
            if !seen.contains(&row.module) {
                seen.push(row.module.clone());
            }
        }
        seen
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "gradient check: step {:.0e}, threshold {:.0e}, seed {}\n",
            self.step, self.threshold, self.seed
        ));
        for row in &self.rows {
            out.push_str(&format!(
                "  [{}] {:32} {:>3} params  max rel err {:.3e}  {}\n",
                if row.pass { "PASS" } else { "FAIL" },
                format!("{}/{}", row.module, row.group),
                row.params_checked,
                row.max_rel_err,
                if row.pass { String::new() } else { format!("worst: {}", row.worst_param) }
            ));
        }
        out.push_str(if self.pass { "overall: PASS\n" } else { "overall: FAIL\n" });
        out
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

struct Case<'a> {
    module: &'a str,
    store: ParamStore,
    loss: Box<dyn Fn(&ParamStore) -> f64 + 'a>,
    analytic: IndexMap<String, ArrayD<f64>>,
    group_of: Box<dyn Fn(&str) -> String + 'a>,
    /// How many parameters to probe per group.
    budget_per_group: usize,
}

fn run_case(case: &Case, rng: &mut ChaCha8Rng, corrupt: Option<&str>) -> Vec<GroupReport> {
    // Collect probe slots per group.
    let mut groups: IndexMap<String, Vec<(String, usize)>> = IndexMap::new();
    for (name, grad) in &case.analytic {
        let group = (case.group_of)(name);
        let slots = groups.entry(group).or_default();
        for idx in 0..grad.len() {
            slots.push((name.clone(), idx));
        }
    }

    let mut rows = Vec::new();
    for (group, mut slots) in groups {
        // Deterministic subsample.
        let take = case.budget_per_group.min(slots.len());
        let mut chosen = Vec::with_capacity(take);
        for _ in 0..take {
            let i = rng.gen_range(0..slots.len());
            chosen.push(slots.swap_remove(i));
        }
        let corrupt_this = corrupt == Some(group.as_str());
        let mut max_rel = 0.0f64;
        let mut worst = String::new();
        for (name, idx) in chosen {
            let mut analytic = case.analytic[&name].as_slice().unwrap()[idx];
            if corrupt_this {
                analytic += 1.0;
            }
            let mut plus = case.store.clone();
            plus.get_mut(&name).unwrap().as_slice_mut().unwrap()[idx] += FD_STEP;
            let mut minus = case.store.clone();
            minus.get_mut(&name).unwrap().as_slice_mut().unwrap()[idx] -= FD_STEP;
            let numeric = ((case.loss)(&plus) - (case.loss)(&minus)) / (2.0 * FD_STEP);
            let e = rel_err(analytic, numeric);
            if e > max_rel {
                max_rel = e;
                worst = format!("{name}[{idx}]");
            }
        }
        rows.push(GroupReport {
            module: case.module.to_string(),
            group,
            params_checked: take,
            max_rel_err: max_rel,
            worst_param: worst,
            pass: max_rel < REL_TOL,
        });
    }
    rows
}

fn rand3(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Array3<f64> {
    Array3::from_shape_fn((c, h, w), |_| rng.gen_range(-1.0..1.0))
}

fn rand_image(rng: &mut ChaCha8Rng, s: usize) -> Array3<f64> {
    Array3::from_shape_fn((3, s, s), |_| rng.gen_range(0.0..1.0))
}

/// Run the whole suite. `corrupt` names a parameter group whose analytic
/// gradients are deliberately offset, for exercising the failure path.
pub fn run_gradcheck(seed: u64, corrupt: Option<&str>) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();

    // Backbone: sum of all pyramid levels of a narrow five-stage encoder.
    {
        let enc = Encoder::new("enc", [4, 6, 8, 10, 12]);
        let store = init_param_store(&enc.param_defs(), seed ^ 0x01);
        let image = rand_image(&mut rng, 32);
        let loss_of = {
            let enc = enc.clone();
            let image = image.clone();
            move |store: &ParamStore| -> f64 {
                let mut g = Graph::new();
                let img = g.constant(image.clone().into_dyn());
                let levels = enc.forward_vars(&mut g, store, img, None);
                let mut total = 0.0;
                for v in levels {
                    let s = g.sum(v);
                    total += g.scalar_value(s);
                }
                total
            }
        };
        let mut g = Graph::new();
        let img = g.constant(image.clone().into_dyn());
        let levels = enc.forward_vars(&mut g, &store, img, None);
        let sums: Vec<_> = levels.iter().map(|&v| g.sum(v)).collect();
        let mut loss = sums[0];
        for &s in &sums[1..] {
            loss = g.add(loss, s);
        }
        let grads = g.backward(loss);
        let analytic = g.param_grads(&grads);
        let case = Case {
            module: "backbone",
            store,
            loss: Box::new(loss_of),
            analytic,
            group_of: Box::new(|name: &str| {
                name.split('.').take(2).collect::<Vec<_>>().join(".")
            }),
            budget_per_group: 7,
        };
        rows.extend(run_case(&case, &mut rng, corrupt));
    }

    // Modulator: sum of the implicit-guidance fusion output.
    {
        let tm = TemporalModulator::new("tm.l3", 8, 4, SaPool::MaxMean, true, true);
        let store = init_param_store(&tm.param_defs(), seed ^ 0x02);
        let f_a = rand3(&mut rng, 8, 6, 6);
        let f_m = rand3(&mut rng, 8, 6, 6);
        let loss_of = {
            let tm = tm.clone();
            let (f_a, f_m) = (f_a.clone(), f_m.clone());
            move |store: &ParamStore| -> f64 {
                let mut g = Graph::new();
                let a = g.constant(f_a.clone().into_dyn());
                let m = g.constant(f_m.clone().into_dyn());
                let fused = tm.fuse(&mut g, store, a, m).unwrap();
                let l = g.sum(fused);
                g.scalar_value(l)
            }
        };
        let mut g = Graph::new();
        let a = g.constant(f_a.clone().into_dyn());
        let m = g.constant(f_m.clone().into_dyn());
        let fused = tm.fuse(&mut g, &store, a, m).unwrap();
        let loss = g.sum(fused);
        let grads = g.backward(loss);
        let analytic = g.param_grads(&grads);
        let case = Case {
            module: "modulator",
            store,
            loss: Box::new(loss_of),
            analytic,
            group_of: Box::new(|name: &str| {
                name.split('.').nth(2).unwrap_or("tm").to_string()
            }),
            budget_per_group: 16,
        };
        rows.extend(run_case(&case, &mut rng, corrupt));
    }

    // Decoder: sum of the partial-decode logits.
    {
        let dec = PartialDecoder::new("dec", [6, 8, 10], 4);
        let store = init_param_store(&dec.param_defs(), seed ^ 0x03);
        let f3 = rand3(&mut rng, 6, 8, 8);
        let f4 = rand3(&mut rng, 8, 4, 4);
        let f5 = rand3(&mut rng, 10, 2, 2);
        let loss_of = {
            let dec = dec.clone();
            let (f3, f4, f5) = (f3.clone(), f4.clone(), f5.clone());
            move |store: &ParamStore| -> f64 {
                let mut g = Graph::new();
                let v3 = g.constant(f3.clone().into_dyn());
                let v4 = g.constant(f4.clone().into_dyn());
                let v5 = g.constant(f5.clone().into_dyn());
                let z = dec.decode(&mut g, store, v3, v4, v5).unwrap();
                let l = g.sum(z);
                g.scalar_value(l)
            }
        };
        let mut g = Graph::new();
        let v3 = g.constant(f3.clone().into_dyn());
        let v4 = g.constant(f4.clone().into_dyn());
        let v5 = g.constant(f5.clone().into_dyn());
        let z = dec.decode(&mut g, &store, v3, v4, v5).unwrap();
        let loss = g.sum(z);
        let grads = g.backward(loss);
        let analytic = g.param_grads(&grads);
        let case = Case {
            module: "decoder",
            store,
            loss: Box::new(loss_of),
            analytic,
            group_of: Box::new(|name: &str| {
                name.split('.').nth(1).unwrap_or("dec").to_string()
            }),
            budget_per_group: 7,
        };
        rows.extend(run_case(&case, &mut rng, corrupt));
    }

    // End to end: L = sum(Z_A logits) + sum(Z_M logits) on the toy model,
    // sampled across every submodule.
    {
        let mut config = ModelConfig::toy();
        config.seed = seed ^ 0x04;
        let net = GtNet::new(config)?;
        let store = net.init_parameters();
        let frame = rand_image(&mut rng, 64);
        let flow = rand_image(&mut rng, 64);
        let loss_of = {
            let net = net.clone();
            let (frame, flow) = (frame.clone(), flow.clone());
            move |store: &ParamStore| -> f64 {
                let mut g = Graph::new();
                let vars = net.forward(&mut g, store, Some(&frame), Some(&flow), None).unwrap();
                let sa = g.sum(vars.z_a.unwrap());
                let sm = g.sum(vars.z_m.unwrap());
                let l = g.add(sa, sm);
                g.scalar_value(l)
            }
        };
        let mut g = Graph::new();
        let vars = net.forward(&mut g, &store, Some(&frame), Some(&flow), None)?;
        let sa = g.sum(vars.z_a.unwrap());
        let sm = g.sum(vars.z_m.unwrap());
        let loss = g.add(sa, sm);
        let grads = g.backward(loss);
        let analytic = g.param_grads(&grads);
        let case = Case {
            module: "gtnet",
            store,
            loss: Box::new(loss_of),
            analytic,
            group_of: Box::new(|name: &str| {
                if name.contains(".enc.") {
                    "backbone".to_string()
                } else if name.starts_with("tm.") {
                    "modulator".to_string()
                } else {
                    "decoder".to_string()
                }
            }),
            budget_per_group: 32,
        };
        rows.extend(run_case(&case, &mut rng, corrupt));
    }

    let pass = rows.iter().all(|r| r.pass);
    Ok(GradcheckReport { seed, step: FD_STEP, threshold: REL_TOL, rows, pass })
}
