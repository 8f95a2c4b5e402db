use wound_unet::model::{forward, Arch, ModelParams};
use wound_unet::tensor::Tensor;

fn conv(cin: usize, cout: usize, k: usize) -> usize {
    cin * cout * k * k + cout
}

#[test]
fn parameter_count_matches_layer_table() {
    let down = [(3, 16), (16, 32), (32, 64), (64, 128), (128, 256)]
        .iter()
        .map(|&(i, o)| conv(i, o, 3) + conv(o, o, 3))
        .sum::<usize>();
    let head = conv(256, 128, 3) + conv(128, 64, 3) + conv(64, 32, 3);
    let fc = (2048 * 120 + 120) + (120 * 84 + 84) + (84 * 4 + 4);
    let up = [(256, 128), (128, 64), (64, 32), (32, 16)]
        .iter()
        .map(|&(i, o)| conv(i, o, 2) + conv(2 * o, o, 3) + conv(o, o, 3))
        .sum::<usize>();
    let out = conv(16, 1, 1);
    let params = ModelParams::<f32>::init(Arch::standard(), 0).unwrap();
    assert_eq!(params.param_count(), down + head + fc + up + out);
    assert_eq!(params.param_count(), 2_584_785);
    assert_eq!(params.names().len(), 58);
}

#[test]
fn single_image_trace() {
    let params = ModelParams::<f32>::init(Arch::standard(), 1).unwrap();
    let x = Tensor::<f32>::new(&[1, 3, 128, 128], 0.5).unwrap();
    let (out, cache) = forward(&params, &x).unwrap();
    let t = cache.trace();
    let sizes = [128, 64, 32, 16, 8];
    let widths = [16, 32, 64, 128, 256];
    for (i, d) in t.down.iter().enumerate() {
        assert_eq!(d, &[1, widths[i], sizes[i], sizes[i]]);
    }
    for (i, u) in t.up.iter().enumerate() {
        assert_eq!(u, &[1, widths[3 - i], sizes[3 - i], sizes[3 - i]]);
    }
    assert_eq!(t.head, [1, 32, 8, 8]);
    assert_eq!(out.class_logits.dims(), &[1, 4]);
    assert_eq!(out.mask_logits.dims(), &[1, 1, 128, 128]);
    assert!(out.class_logits.all_finite() && out.mask_logits.all_finite());
}
