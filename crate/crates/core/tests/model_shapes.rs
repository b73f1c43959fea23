mod common;

use common::{micro_config, param_count_oracle, rand_tensor, rng};
use vig_core::grapher::zero_all_params;
use vig_core::{Mode, ModelConfig, Parameterized, Task, Tensor, VigError, VigModel};

fn shape_of(m: &VigModel<f32>, name: &str) -> Vec<usize> {
    m.named_params()
        .into_iter()
        .find(|(n, _)| n == name)
        .unwrap_or_else(|| panic!("no parameter {name}"))
        .1
        .shape()
        .to_vec()
}

fn images(seed: u64, cfg: &ModelConfig, b: usize) -> Tensor<f32> {
    let t = rand_tensor(&mut rng(seed), &[b, cfg.in_channels, cfg.input_hw.0, cfg.input_hw.1]);
    Tensor::new(t.data().iter().map(|&v| v as f32).collect(), t.shape()).unwrap()
}

#[test]
fn default_layer_shapes() {
    for (hw, patches) in [(120, 900), (256, 4096)] {
        let cfg = ModelConfig::new(4, (hw, hw), 10, Task::Multiclass);
        let m = VigModel::<f32>::build(&cfg, 0).unwrap();
        assert_eq!(shape_of(&m, "pos_embed"), vec![patches, 128]);
        assert_eq!(shape_of(&m, "stem.conv1.weight"), vec![64, 4, 3, 3]);
        assert_eq!(shape_of(&m, "stem.conv2.weight"), vec![128, 64, 3, 3]);
        assert_eq!(shape_of(&m, "downsample.0.conv.weight"), vec![256, 128, 3, 3]);
        assert_eq!(shape_of(&m, "downsample.1.conv.weight"), vec![512, 256, 3, 3]);
        assert_eq!(shape_of(&m, "head.fc2.weight").iter().product::<usize>(), 1024 * 10);
        assert_eq!(m.stages.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 1]);
        assert_eq!(m.count_params(), param_count_oracle(&cfg).0);
    }
}

#[test]
fn stage_grids_round_odd_sizes_up() {
    let cfg = ModelConfig::new(3, (120, 120), 2, Task::Multiclass);
    assert_eq!(cfg.stage_grids(), [(30, 30), (15, 15), (8, 8)]);
    assert_eq!(cfg.effective_k(2), 9);
    let mut tiny = micro_config(Task::Multiclass, 2);
    tiny.input_hw = (8, 8);
    assert_eq!(tiny.stage_patches(), [4, 1, 1]);
    assert_eq!(tiny.effective_k(0), 3);
}

#[test]
fn invalid_configs_are_config_errors() {
    let base = micro_config(Task::Multiclass, 3);
    let mut bad = Vec::new();
    let mut c = base.clone();
    c.input_hw = (30, 32);
    bad.push(c);
    let mut c = base.clone();
    c.heads = 3;
    bad.push(c);
    let mut c = base.clone();
    c.stage_depths = vec![1, 0, 1];
    bad.push(c);
    let mut c = base.clone();
    c.stage_dims = vec![32, 64];
    bad.push(c);
    let mut c = base;
    c.k = 0;
    bad.push(c);
    for c in bad {
        assert!(matches!(VigModel::<f32>::build(&c, 0), Err(VigError::Config(_))), "{c:?}");
    }
}

#[test]
fn logits_shape_and_score_ranges() {
    let mut cfg = micro_config(Task::Multiclass, 10);
    cfg.input_hw = (64, 64);
    let m = VigModel::<f32>::build(&cfg, 3).unwrap();
    let logits = m.forward(&images(1, &cfg, 2), Mode::Eval).unwrap();
    assert_eq!(logits.shape(), &[2, 10]);
    for row in logits.softmax().data().chunks_exact(10) {
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }
    assert!(logits.sigmoid().data().iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn wrong_input_shape_is_a_dimension_error() {
    let cfg = micro_config(Task::Multiclass, 3);
    let m = VigModel::<f32>::build(&cfg, 0).unwrap();
    let mut other = cfg.clone();
    other.in_channels = 4;
    assert!(matches!(
        m.forward(&images(0, &other, 2), Mode::Eval),
        Err(VigError::Dimension { .. })
    ));
}

#[test]
fn same_seed_same_model() {
    let cfg = micro_config(Task::Multilabel, 4);
    let (a, b) = (VigModel::<f32>::build(&cfg, 9).unwrap(), VigModel::<f32>::build(&cfg, 9).unwrap());
    let c = VigModel::<f32>::build(&cfg, 10).unwrap();
    let flat = |m: &VigModel<f32>| m.named_params().into_iter().flat_map(|(_, t)| t.to_vec()).collect::<Vec<_>>();
    assert_eq!(flat(&a), flat(&b));
    assert_ne!(flat(&a), flat(&c));
    let x = images(2, &cfg, 3);
    assert_eq!(a.forward(&x, Mode::Eval).unwrap().data(), b.forward(&x, Mode::Eval).unwrap().data());
}

#[test]
fn eval_outputs_do_not_depend_on_batch_mates() {
    let cfg = micro_config(Task::Multiclass, 5);
    let m = VigModel::<f32>::build(&cfg, 4).unwrap();
    let x = images(5, &cfg, 3);
    let all = m.forward(&x, Mode::Eval).unwrap();
    let n = x.data().len() / 3;
    for i in 0..3 {
        let one = Tensor::new(x.data()[i * n..(i + 1) * n].to_vec(), &[1, 3, 32, 32]).unwrap();
        let y = m.forward(&one, Mode::Eval).unwrap();
        for (a, b) in y.data().iter().zip(&all.data()[i * 5..(i + 1) * 5]) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }
}

#[test]
fn zeroed_graph_blocks_leave_stem_downsample_and_head() {
    let cfg = micro_config(Task::Multiclass, 3);
    let mut m = VigModel::<f32>::build(&cfg, 6).unwrap();
    for blocks in &mut m.stages {
        for b in blocks {
            zero_all_params(&mut b.grapher);
            zero_all_params(&mut b.ffn);
        }
    }
    let x = images(8, &cfg, 2);
    let got = m.forward(&x, Mode::Eval).unwrap();
    let mut f = m.stem.forward(&x, Mode::Eval).unwrap();
    for d in &m.downsamples {
        f = d.forward(&f.pad_replicate_even().unwrap(), Mode::Eval).unwrap();
    }
    let hidden = m.head.fc1.forward(&f.global_avg_pool().unwrap()).unwrap().relu();
    let want = m.head.fc2.forward(&hidden).unwrap();
    for (a, b) in got.data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn stage_graphs_cover_each_image() {
    let cfg = micro_config(Task::Multiclass, 3);
    let m = VigModel::<f32>::build(&cfg, 1).unwrap();
    let x = images(3, &cfg, 2);
    let patches = cfg.stage_patches();
    for s in 0..3 {
        let g = m.stage_graphs(&x, s).unwrap();
        assert_eq!(g.len(), 2);
        for graph in &g {
            assert_eq!(graph.num_nodes(), patches[s]);
            assert_eq!(graph.k(), cfg.effective_k(s));
            graph.validate().unwrap();
        }
    }
    let (_, trace) = m.forward_traced(&x, Mode::Eval).unwrap();
    assert_eq!(m.stage_graphs(&x, 0).unwrap(), trace.stages[0].graphs);
    assert!(matches!(m.stage_graphs(&x, 3), Err(VigError::Usage(_))));
}
