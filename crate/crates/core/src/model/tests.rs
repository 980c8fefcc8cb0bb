use std::collections::BTreeSet;

use super::*;
use crate::testing::random_tensor;

fn cfg(use_gau: bool, use_pffm: bool) -> ModelConfig {
    ModelConfig {
        use_gau,
        use_pffm,
        ..ModelConfig::tiny()
    }
}

fn names(c: &ModelConfig) -> BTreeSet<String> {
    NetworkVars::declare(c).into_iter().map(|d| d.name).collect()
}

fn bound(model: &FgMamba<f64>, tape: &mut Tape<f64>) -> (Bindings, NetworkVars) {
    let b = Bindings::bind(tape, model.params());
    let vars = NetworkVars::bind(&b, model.config()).unwrap();
    (b, vars)
}

fn image(shape: &[usize], seed: u64) -> Tensor<f64> {
    random_tensor::<f64>(shape, seed, 0.5).map(|v| v + 0.5)
}

#[test]
fn output_extent_is_scaled_input() {
    for scale in [2, 3, 4] {
        for (h, w) in [(16, 16), (17, 17), (8, 13)] {
            let model = FgMamba::<f64>::new(
                ModelConfig {
                    scale,
                    ..ModelConfig::tiny()
                },
                1,
            )
            .unwrap();
            let y = model.infer(&image(&[1, 1, h, w], 2)).unwrap();
            assert_eq!(y.shape(), [1, 1, h * scale, w * scale]);
            assert!(y.is_finite());
        }
    }
}

#[test]
fn rgb_batches_and_determinism() {
    let c = ModelConfig {
        in_channels: 3,
        ..ModelConfig::tiny()
    };
    let model = FgMamba::<f32>::new(c, 3).unwrap();
    let x = image(&[2, 3, 9, 10], 4).cast::<f32>();
    let a = model.infer(&x).unwrap();
    let b = model.infer(&x).unwrap();
    assert_eq!(a.shape(), [2, 3, 18, 20]);
    assert_eq!(a.data(), b.data());
    assert_eq!(FgMamba::<f32>::new(c, 3).unwrap(), model);
}

#[test]
fn invalid_configs_and_inputs_are_rejected() {
    for scale in [0, 1, 5] {
        assert!(FgMamba::<f64>::new(
            ModelConfig {
                scale,
                ..ModelConfig::tiny()
            },
            0
        )
        .is_err());
    }
    assert!(FgMamba::<f64>::new(
        ModelConfig {
            in_channels: 2,
            ..ModelConfig::tiny()
        },
        0
    )
    .is_err());
    assert!(FgMamba::<f64>::new(
        ModelConfig {
            channels: 3,
            ..ModelConfig::tiny()
        },
        0
    )
    .is_err());
    let model = FgMamba::<f64>::new(ModelConfig::tiny(), 0).unwrap();
    assert!(matches!(
        model.infer(&image(&[1, 1, 7, 16], 0)),
        Err(Error::InvalidInput(_))
    ));
    assert!(matches!(
        model.infer(&image(&[1, 3, 8, 8], 0)),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn gasm_matches_step_by_step_composition() {
    let model = FgMamba::<f64>::new(ModelConfig::tiny(), 5).unwrap();
    let mut tape = Tape::new();
    let (_, vars) = bound(&model, &mut tape);
    let p = &vars.blocks[0].gasms[0];
    let x = tape.constant(random_tensor(&[2, 8, 9, 8], 6, 1.0));
    let y = gasm_forward(&mut tape, x, p).unwrap();

    let n1 = tape.layer_norm(x, p.norm1.0, p.norm1.1, 1e-6).unwrap();
    let v = vssm2d_forward(&mut tape, n1, &p.vssm).unwrap();
    let g = gau_forward(&mut tape, n1, p.gau.as_ref().unwrap()).unwrap();
    let s = tape.add(v, g).unwrap();
    let r1 = tape.mul(x, p.gamma1).unwrap();
    let a = tape.add(s, r1).unwrap();
    let n2 = tape.layer_norm(a, p.norm2.0, p.norm2.1, 1e-6).unwrap();
    let c1 = tape.conv2d(n2, &p.conv1).unwrap();
    let ca = channel_attention_block(&mut tape, c1, &p.attention).unwrap();
    let r2 = tape.mul(x, p.gamma2).unwrap();
    let b = tape.add(ca, r2).unwrap();
    let expect = tape.conv2d(b, &p.conv2).unwrap();
    assert_eq!(tape.shape(y), [2, 8, 9, 8]);
    assert_eq!(tape.data(y), tape.data(expect));
}

#[test]
fn gasm_propagates_zero() {
    let mut model = FgMamba::<f64>::new(ModelConfig::tiny(), 7).unwrap();
    for (name, t) in model.params_mut().iter_mut() {
        if name.ends_with("bias") {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut tape = Tape::new();
    let (_, vars) = bound(&model, &mut tape);
    let x = tape.constant(Tensor::zeros(vec![1, 8, 8, 8]));
    let y = gasm_forward(&mut tape, x, &vars.blocks[0].gasms[0]).unwrap();
    assert!(tape.data(y).iter().all(|v| *v == 0.0));
}

#[test]
fn pffm_is_linear_in_gamma() {
    let model = FgMamba::<f64>::new(ModelConfig::tiny(), 8).unwrap();
    let x = random_tensor(&[1, 8, 11, 9], 9, 1.0);
    let run = |gamma: f64| {
        let mut tape = Tape::new();
        let (_, vars) = bound(&model, &mut tape);
        let mut p = vars.blocks[0].pffm.unwrap();
        p.gamma = tape.constant(Tensor::full(vec![1], gamma));
        let xv = tape.constant(x.clone());
        let y = pffm_forward(&mut tape, xv, &p).unwrap();
        tape.detach(y)
    };
    assert!(run(0.0).data().iter().all(|v| *v == 0.0));
    let (one, two) = (run(0.3), run(0.6));
    assert_eq!(one.shape(), [1, 8, 11, 9]);
    for (a, b) in one.data().iter().zip(two.data()) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn pffm_of_constant_planes_matches_hand_composition() {
    // groups = 3 needs a width divisible by three
    let c = ModelConfig {
        channels: 12,
        ..ModelConfig::tiny()
    };
    let model = FgMamba::<f64>::new(c, 10).unwrap();
    let levels: Vec<f64> = (0..12).map(|i| 0.1 * i as f64 - 0.4).collect();
    let (h, w) = (10, 7);
    let x = Tensor::from_fn(vec![1, 12, h, w], |i| levels[i / (h * w)]);
    let mut tape = Tape::new();
    let (_, vars) = bound(&model, &mut tape);
    let p = vars.blocks[0].pffm.unwrap();
    let xv = tape.constant(x);
    let y = pffm_forward(&mut tape, xv, &p).unwrap();

    let get = |n: &str| {
        model
            .params()
            .get(&format!("blocks.0.pffm.{n}"))
            .unwrap()
            .data()
            .to_vec()
    };
    let (a1, a2, a4, gamma) = (get("alpha1")[0], get("alpha2")[0], get("alpha4")[0], get("gamma")[0]);
    let (wt, bias) = (get("fuse.weight"), get("fuse.bias"));
    let stacked: Vec<f64> = [a1, a2, a4]
        .iter()
        .flat_map(|a| levels.iter().map(move |l| a * l))
        .collect();
    let per_group = 12 / 3;
    for o in 0..12 {
        let g = o / per_group;
        let acc: f64 = bias[o] + (0..12).map(|k| wt[o * 12 + k] * stacked[g * 12 + k]).sum::<f64>();
        let expect = gamma * acc;
        for v in &tape.data(y)[o * h * w..][..h * w] {
            assert!((v - expect).abs() < 1e-12, "{v} vs {expect}");
        }
    }
}

#[test]
fn fgblock_reductions() {
    let base = cfg(false, false);
    let model = FgMamba::<f64>::new(base, 11).unwrap();
    let mut tape = Tape::new();
    let (_, vars) = bound(&model, &mut tape);
    let x = tape.constant(random_tensor(&[1, 8, 8, 10], 12, 1.0));
    let y = fgblock_forward(&mut tape, x, &vars.blocks[0]).unwrap();
    let g = gasm_forward(&mut tape, x, &vars.blocks[0].gasms[0]).unwrap();
    let expect = tape.add(g, x).unwrap();
    assert_eq!(tape.data(y), tape.data(expect));

    let full = FgMamba::<f64>::new(ModelConfig::desk(), 13).unwrap();
    let mut tape = Tape::new();
    let (_, vars) = bound(&full, &mut tape);
    let block = &vars.blocks[1];
    let x = tape.constant(random_tensor(&[1, 16, 9, 8], 14, 1.0));
    let y = fgblock_forward(&mut tape, x, block).unwrap();
    let mut g = x;
    for gasm in &block.gasms {
        g = gasm_forward(&mut tape, g, gasm).unwrap();
    }
    let f = pffm_forward(&mut tape, g, block.pffm.as_ref().unwrap()).unwrap();
    let gf = tape.add(g, f).unwrap();
    let expect = tape.add(gf, x).unwrap();
    assert_eq!(tape.shape(y), [1, 16, 9, 8]);
    assert_eq!(tape.data(y), tape.data(expect));
}

#[test]
fn zeroed_blocks_reduce_to_shallow_feature_reconstruction() {
    let mut model = FgMamba::<f64>::new(ModelConfig::desk(), 15).unwrap();
    for (name, t) in model.params_mut().iter_mut() {
        if name.starts_with("blocks.") {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let x = image(&[1, 1, 12, 12], 16);
    let y = model.infer(&x).unwrap();

    let mut tape = Tape::new();
    let (_, vars) = bound(&model, &mut tape);
    let xv = tape.constant(x);
    let shallow = tape.conv2d(xv, &vars.head).unwrap();
    // every block is the identity, so F_FGB = F_x and the global residual doubles it
    let fused = tape.add(shallow, shallow).unwrap();
    let e = tape.conv2d(fused, &vars.expand).unwrap();
    let up = tape.pixel_shuffle(e, 2).unwrap();
    let expect = tape.conv2d(up, &vars.out).unwrap();
    assert_eq!(y.data(), tape.data(expect));
}

#[test]
fn ablation_parameter_sets_differ_by_removed_modules() {
    let full = names(&cfg(true, true));
    let no_gau = names(&cfg(false, true));
    let no_freq = names(&cfg(true, false));
    let baseline = names(&cfg(false, false));
    let only = |a: &BTreeSet<String>, b: &BTreeSet<String>| a.difference(b).cloned().collect::<Vec<_>>();
    let removed_gau = only(&full, &no_gau);
    assert!(!removed_gau.is_empty());
    assert!(removed_gau.iter().all(|n| n.contains(".gau.")));
    assert!(full
        .iter()
        .filter(|n| n.contains(".gau."))
        .all(|n| removed_gau.contains(n)));
    let removed_freq = only(&full, &no_freq);
    assert!(!removed_freq.is_empty());
    assert!(removed_freq.iter().all(|n| n.contains(".pffm.")));
    assert!(no_gau.is_superset(&baseline) && no_freq.is_superset(&baseline));
    let both = only(&full, &baseline);
    assert_eq!(both.len(), removed_gau.len() + removed_freq.len());
    assert!(no_gau.is_subset(&full) && no_freq.is_subset(&full));
}

/// Silences the third gate (sigmoid(−1000) is exactly 0) so that F_gate vanishes.
pub(crate) fn silence_gates(model: &mut FgMamba<f64>) {
    for (name, t) in model.params_mut().iter_mut() {
        if name.contains(".gau.gate3.") {
            let v = if name.ends_with("bias") { -1000.0 } else { 0.0 };
            t.data_mut().iter_mut().for_each(|x| *x = v);
        }
    }
}

#[test]
fn zeroed_branches_reproduce_ablated_forward() {
    let x = image(&[1, 1, 11, 13], 17);
    let desk = |use_gau, use_pffm| ModelConfig {
        use_gau,
        use_pffm,
        ..ModelConfig::desk()
    };
    let ablated = |c: ModelConfig| FgMamba::<f64>::new(c, 18).unwrap().infer(&x).unwrap();

    let mut no_gau = FgMamba::<f64>::new(desk(true, true), 18).unwrap();
    silence_gates(&mut no_gau);
    assert_eq!(no_gau.infer(&x).unwrap(), ablated(desk(false, true)));

    let mut no_freq = FgMamba::<f64>::new(desk(true, true), 18).unwrap();
    for (name, t) in no_freq.params_mut().iter_mut() {
        if name.ends_with(".pffm.gamma") {
            t.data_mut()[0] = 0.0;
        }
    }
    assert_eq!(no_freq.infer(&x).unwrap(), ablated(desk(true, false)));

    let mut baseline = no_freq.clone();
    silence_gates(&mut baseline);
    assert_eq!(baseline.infer(&x).unwrap(), ablated(desk(false, false)));
}

#[test]
fn head_and_tail_only_count() {
    for (c, s, i) in [(8, 2, 1), (16, 3, 3), (30, 4, 1)] {
        let config = ModelConfig {
            channels: c,
            scale: s,
            in_channels: i,
            n_fgblocks: 0,
            ..ModelConfig::tiny()
        };
        let head = i * c * 9 + c;
        let expand = c * c * s * s * 9 + c * s * s;
        let out = c * i * 9 + i;
        assert_eq!(param_count(&config), head + expand + out);
    }
}

#[test]
fn count_grows_with_width() {
    let mut last = 0;
    for c in [4, 8, 12, 16, 24, 32] {
        let n = param_count(&ModelConfig {
            channels: c,
            ..ModelConfig::desk()
        });
        assert!(n > last);
        last = n;
    }
    let narrow = param_count(&ModelConfig::desk());
    let wide = param_count(&ModelConfig {
        channels: 32,
        ..ModelConfig::desk()
    });
    assert!(wide > 3 * narrow);
}

#[test]
fn breakdown_sums_to_total() {
    for p in Preset::ALL {
        let c = p.config();
        let parts = param_breakdown(&c);
        assert_eq!(parts.iter().map(|(_, n)| n).sum::<usize>(), param_count(&c));
        let model = FgMamba::<f32>::new(c, 0).unwrap();
        assert_eq!(model.params().scalar_count(), param_count(&c));
    }
}

#[test]
fn paper_preset_is_in_budget() {
    let n = param_count(&ModelConfig::paper());
    assert!((700_000..=750_000).contains(&n), "{n}");
    let x3 = param_count(&ModelConfig {
        scale: 3,
        ..ModelConfig::paper()
    });
    assert!((700_000..=750_000).contains(&x3), "{x3}");
    assert_eq!(ModelConfig::paper().fusion_groups(), 3);
}

#[test]
fn tiny_count_is_frozen() {
    assert_eq!(param_count(&ModelConfig::tiny()), TINY_PARAMS);
}

// head 80 + tail 2336 + 73 + one GASM 4065 + PFFM 204
const TINY_PARAMS: usize = 6758;

#[test]
fn from_params_checks_names_and_shapes() {
    let model = FgMamba::<f32>::new(ModelConfig::tiny(), 1).unwrap();
    let params = model.params().clone();
    assert!(FgMamba::from_params(ModelConfig::tiny(), params.clone()).is_ok());
    assert!(FgMamba::from_params(ModelConfig::desk(), params.clone()).is_err());
    assert!(FgMamba::from_params(cfg(false, true), params).is_err());
}
