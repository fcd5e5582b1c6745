use proptest::prelude::*;
use vargnet::{
    build, BlockKind, BuildOptions, GraphBuilder, LayerKind, NetworkGraph, Src, TensorShape,
    Version,
};

fn grid() -> Vec<(Version, f64, usize)> {
    let mut out = Vec::new();
    for version in [Version::V1, Version::V2] {
        for &scale in version.scales() {
            for g in [4, 8] {
                out.push((version, scale, g));
            }
        }
    }
    out
}

fn net(version: Version, scale: f64, g: usize) -> NetworkGraph {
    build(version, scale, g, &BuildOptions::default()).unwrap()
}

fn conv_count(net: &NetworkGraph, kind: BlockKind) -> Vec<usize> {
    net.blocks
        .iter()
        .filter(|b| b.kind == kind)
        .map(|b| {
            net.layers
                .iter()
                .filter(|l| l.block_id == b.id && l.kind.conv().is_some())
                .count()
        })
        .collect()
}

#[test]
fn published_grid_is_valid_and_ends_at_7x7() {
    for (version, scale, g) in grid() {
        let net = net(version, scale, g);
        let shapes = net.validate().unwrap();
        let pool = net
            .layers
            .iter()
            .find(|l| matches!(l.kind, LayerKind::GlobalPool))
            .unwrap();
        let before = shapes[pool.id].input;
        assert_eq!((before.h, before.w), (7, 7), "{}", net.name);
        assert_eq!(shapes.last().unwrap().output, TensorShape::new(1, 1000, 1, 1).unwrap());
    }
}

#[test]
fn block_conv_counts() {
    for (version, scale, g) in grid() {
        let net = net(version, scale, g);
        assert!(conv_count(&net, BlockKind::Normal).iter().all(|&n| n == 4));
        assert!(conv_count(&net, BlockKind::Head).iter().all(|&n| n == 4));
        assert!(conv_count(&net, BlockKind::Downsample).iter().all(|&n| n == 6));
    }
}

#[test]
fn expanded_conv_layer_totals() {
    // v1: 4 downsample + 5 normal blocks; v2: head + 3 downsample + 11 normal
    let v1 = net(Version::V1, 1.0, 8);
    assert_eq!(v1.conv_layers().count(), 2 + 4 * 6 + 5 * 4);
    let v2 = net(Version::V2, 1.0, 8);
    assert_eq!(v2.conv_layers().count(), 2 + 4 + 3 * 6 + 11 * 4);
}

#[test]
fn layer_counts_do_not_depend_on_scale() {
    for version in [Version::V1, Version::V2] {
        let counts: Vec<usize> = version
            .scales()
            .iter()
            .map(|&s| net(version, s, 8).layers.len())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] == w[1]), "{version}: {counts:?}");
    }
}

#[test]
fn conv_kinds_and_bn_after_every_conv() {
    for (version, scale, g) in grid() {
        let net = net(version, scale, g);
        let consumers = net.consumers();
        for (layer, spec) in net.conv_layers() {
            let block = net.blocks[layer.block_id].kind;
            match block {
                BlockKind::Stem => {
                    assert_eq!((spec.kernel, spec.c_in), (3, 3));
                    assert!(spec.is_dense());
                }
                BlockKind::Tail => assert!(spec.is_pointwise() && spec.is_dense()),
                _ => {
                    let vg = spec.kernel == 3 && spec.channels_per_group == g;
                    let pw = spec.kernel == 1 && spec.is_dense();
                    assert!(vg || pw, "{}: layer {}", net.name, layer.id);
                }
            }
            let next = &consumers[layer.id];
            assert_eq!(next.len(), 1);
            assert!(matches!(net.layers[next[0]].kind, LayerKind::BnAct { .. }));
        }
    }
}

#[test]
fn builds_are_deterministic_and_roundtrip() {
    for (version, scale, g) in [(Version::V1, 1.0, 8), (Version::V2, 0.25, 4)] {
        let a = net(version, scale, g);
        let b = net(version, scale, g);
        assert_eq!(a, b);
        let json = a.to_json();
        assert_eq!(json, b.to_json());
        assert_eq!(NetworkGraph::from_json(&json).unwrap(), a);
    }
}

#[test]
fn indivisible_group_is_rejected() {
    let err = build(Version::V1, 1.0, 7, &BuildOptions::default()).unwrap_err();
    assert!(err.is_config());
    assert!(err.to_string().contains("G=7"));
    assert!(build(Version::V2, 0.3, 8, &BuildOptions::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn normal_block_preserves_shape(
        c_mult in 1usize..9,
        g_pow in 0u32..4,
        h in 1usize..12,
        w in 1usize..12,
        n in 1usize..3,
    ) {
        let g = 1usize << g_pow;
        let c = g * c_mult;
        let mut b = GraphBuilder::new();
        b.begin_block(BlockKind::Stem, c, c, c);
        let x = b.bn(Src::Input, c, false);
        b.normal_block(x, c, g).unwrap();
        let shape = TensorShape::new(n, c, h, w).unwrap();
        let net = b.finish("block", 1.0, g, 0, shape);
        let shapes = net.infer_shapes(shape).unwrap();
        prop_assert_eq!(shapes.last().unwrap().output, shape);
    }

    #[test]
    fn downsample_halves_and_doubles(c_mult in 1usize..6, g_pow in 0u32..3, h in 2usize..14) {
        let g = 1usize << g_pow;
        let c = g * c_mult;
        let mut b = GraphBuilder::new();
        b.begin_block(BlockKind::Stem, c, c, c);
        let x = b.bn(Src::Input, c, false);
        b.downsample_block(x, c, g).unwrap();
        let shape = TensorShape::new(1, c, h, h).unwrap();
        let net = b.finish("ds", 1.0, g, 0, shape);
        let out = net.infer_shapes(shape).unwrap().last().unwrap().output;
        prop_assert_eq!(out, TensorShape::new(1, 2 * c, h.div_ceil(2), h.div_ceil(2)).unwrap());
    }
}
