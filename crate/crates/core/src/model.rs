//! The dual-head U-Net.
//!
//! Down path: `conv-relu-conv-relu` blocks with 2x2 max pooling after every
//! block except the last, which is the bottleneck. The bottleneck feeds both a
//! classification head (3x3 conv stack, flatten, fully connected layers) and an
//! up path of transposed-conv blocks that concatenate the matching pre-pool
//! down-path activation before two more convolutions. A final 1x1 conv yields
//! one channel of mask logits.

use crate::error::{Error, Result};
use crate::nn::{
    concat_backward, concat_channels, conv2d_backward, conv2d_forward, convtranspose2d_backward,
    convtranspose2d_forward, linear_backward, linear_forward, maxpool2d_backward,
    maxpool2d_forward, relu, relu_backward, ConcatCache, Conv2dCache, ConvTranspose2dCache,
    LinearCache, PoolCache, ReluCache,
};
use crate::tensor::{kaiming_init_gain, Real, Rng, Tensor};

/// Layer widths of the network. [`Arch::standard`] is the production network;
/// smaller instances exist for whole-network gradient checks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arch {
    pub input_size: usize,
    pub in_channels: usize,
    /// Filters per down block; the last entry is the bottleneck.
    pub down: Vec<usize>,
    /// Channels of the classification-head convolutions.
    pub head: Vec<usize>,
    /// Hidden widths of the fully connected layers.
    pub hidden: Vec<usize>,
    pub classes: usize,
}

/// Name, shape and initialisation fan-in of one learnable tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    /// `None` for biases, which start at zero.
    pub fan_in: Option<usize>,
    /// Weight of an output layer, which feeds no ReLU.
    pub linear_output: bool,
}

impl Arch {
    /// 128x128x3 input, filters 16-32-64-128-256, head 128-64-32, FC 120-84-4.
    pub fn standard() -> Self {
        Arch {
            input_size: 128,
            in_channels: 3,
            down: vec![16, 32, 64, 128, 256],
            head: vec![128, 64, 32],
            hidden: vec![120, 84],
            classes: 4,
        }
    }

    /// Two-level variant small enough for exhaustive finite differences.
    pub fn tiny() -> Self {
        Arch {
            input_size: 8,
            in_channels: 3,
            down: vec![3, 4],
            head: vec![3, 2],
            hidden: vec![5],
            classes: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.down.is_empty() || self.head.is_empty() {
            return Err(Error::invalid("arch needs at least one down block and head conv"));
        }
        let pools = self.down.len() - 1;
        if self.input_size == 0 || !self.input_size.is_multiple_of(1 << pools) {
            return Err(Error::invalid(format!(
                "input size {} is not divisible by 2^{pools}",
                self.input_size
            )));
        }
        let widths = [self.in_channels, self.classes];
        if widths
            .iter()
            .chain(&self.down)
            .chain(&self.head)
            .chain(&self.hidden)
            .any(|&c| c == 0)
        {
            return Err(Error::invalid("arch has a zero width"));
        }
        Ok(())
    }

    /// Spatial side of the bottleneck.
    pub fn bottleneck_size(&self) -> usize {
        self.input_size >> (self.down.len() - 1)
    }

    pub fn flatten_len(&self) -> usize {
        self.head[self.head.len() - 1] * self.bottleneck_size().pow(2)
    }

    /// Every learnable tensor in storage order.
    pub fn manifest(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let mut cin = self.in_channels;
        for (i, &c) in self.down.iter().enumerate() {
            push_conv(&mut specs, format!("down{}.conv1", i + 1), cin, c, 3);
            push_conv(&mut specs, format!("down{}.conv2", i + 1), c, c, 3);
            cin = c;
        }
        for (i, &c) in self.head.iter().enumerate() {
            push_conv(&mut specs, format!("head.conv{}", i + 1), cin, c, 3);
            cin = c;
        }
        let mut fc_in = self.flatten_len();
        let widths: Vec<usize> = self.hidden.iter().copied().chain([self.classes]).collect();
        for (i, &w) in widths.iter().enumerate() {
            push_pair(&mut specs, format!("fc{}", i + 1), vec![fc_in, w], fc_in, w);
            fc_in = w;
        }
        for (k, level) in (0..self.down.len() - 1).rev().enumerate() {
            let (from, to) = (self.down[level + 1], self.down[level]);
            // Each output pixel of a 2x2 stride-2 transposed conv receives one
            // tap from every input channel.
            push_pair(&mut specs, format!("up{}.tconv", k + 1), vec![from, to, 2, 2], from, to);
            push_conv(&mut specs, format!("up{}.conv1", k + 1), 2 * to, to, 3);
            push_conv(&mut specs, format!("up{}.conv2", k + 1), to, to, 3);
        }
        push_conv(&mut specs, "out.conv".to_string(), self.down[0], 1, 1);
        let last_fc = format!("fc{}.weight", widths.len());
        for spec in &mut specs {
            spec.linear_output = spec.name == last_fc || spec.name == "out.conv.weight";
        }
        specs
    }
}

fn push_pair(specs: &mut Vec<ParamSpec>, prefix: String, dims: Vec<usize>, fan_in: usize, out: usize) {
    specs.push(ParamSpec {
        name: format!("{prefix}.weight"),
        dims,
        fan_in: Some(fan_in),
        linear_output: false,
    });
    specs.push(ParamSpec {
        name: format!("{prefix}.bias"),
        dims: vec![out],
        fan_in: None,
        linear_output: false,
    });
}

fn push_conv(specs: &mut Vec<ParamSpec>, prefix: String, cin: usize, cout: usize, k: usize) {
    push_pair(specs, prefix, vec![cout, cin, k, k], cin * k * k, cout);
}

/// All learnable tensors, ordered as in [`Arch::manifest`]. Gradients use the
/// same type.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f32> {
    arch: Arch,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

/// The standard network with freshly initialised weights.
pub fn build_model<T: Real>(seed: u64) -> ModelParams<T> {
    ModelParams::init(Arch::standard(), seed).expect("standard arch is valid")
}

impl<T: Real> ModelParams<T> {
    /// Kaiming-uniform weights drawn in manifest order from one seeded stream,
    /// with the ReLU gain except on the two output layers; zero biases.
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = Rng::new(seed);
        let manifest = arch.manifest();
        let mut names = Vec::with_capacity(manifest.len());
        let mut tensors = Vec::with_capacity(manifest.len());
        for spec in manifest {
            let t = match spec.fan_in {
                Some(fan_in) => {
                    let gain = if spec.linear_output { 1.0 } else { std::f64::consts::SQRT_2 };
                    kaiming_init_gain(&spec.dims, fan_in, gain, &mut rng)?
                }
                None => Tensor::zeros(&spec.dims)?,
            };
            names.push(spec.name);
            tensors.push(t);
        }
        Ok(ModelParams {
            arch,
            names,
            tensors,
        })
    }

    /// Wraps existing tensors after checking them against the manifest.
    pub fn from_tensors(arch: Arch, tensors: Vec<Tensor<T>>) -> Result<Self> {
        arch.validate()?;
        let manifest = arch.manifest();
        if manifest.len() != tensors.len() {
            return Err(Error::shape(format!(
                "expected {} tensors, got {}",
                manifest.len(),
                tensors.len()
            )));
        }
        for (spec, t) in manifest.iter().zip(&tensors) {
            if t.dims() != spec.dims.as_slice() {
                return Err(Error::shape(format!(
                    "{}: expected {:?}, got {}",
                    spec.name,
                    spec.dims,
                    t.shape()
                )));
            }
        }
        Ok(ModelParams {
            arch,
            names: manifest.into_iter().map(|s| s.name).collect(),
            tensors,
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            arch: self.arch.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::zeros_like).collect(),
        }
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Raw outputs of both heads.
#[derive(Clone, Debug)]
pub struct ModelOutput<T> {
    /// `[B, classes]`, pre-softmax.
    pub class_logits: Tensor<T>,
    /// `[B, 1, H, W]`, pre-sigmoid.
    pub mask_logits: Tensor<T>,
}

#[derive(Clone, Debug)]
struct ConvRelu<T> {
    conv: Conv2dCache<T>,
    relu: ReluCache<T>,
    weight: usize,
}

#[derive(Clone, Debug)]
struct DownBlock<T> {
    first: ConvRelu<T>,
    second: ConvRelu<T>,
    pool: Option<PoolCache>,
}

#[derive(Clone, Debug)]
struct UpBlock<T> {
    tconv: ConvTranspose2dCache<T>,
    tconv_weight: usize,
    concat: ConcatCache,
    first: ConvRelu<T>,
    second: ConvRelu<T>,
}

#[derive(Clone, Debug)]
struct FcLayer<T> {
    linear: LinearCache<T>,
    relu: Option<ReluCache<T>>,
    weight: usize,
}

/// Shapes of the main intermediate tensors of one forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeTrace {
    /// Output of each down block before pooling.
    pub down: Vec<Vec<usize>>,
    pub bottleneck: Vec<usize>,
    /// Classification-head output just before flattening.
    pub head: Vec<usize>,
    pub flatten: Vec<usize>,
    /// Output of each fully connected layer.
    pub fc: Vec<Vec<usize>>,
    /// Output of each up block.
    pub up: Vec<Vec<usize>>,
    pub mask: Vec<usize>,
}

/// Activations and routing decisions recorded by [`forward`].
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    down: Vec<DownBlock<T>>,
    head: Vec<ConvRelu<T>>,
    fc: Vec<FcLayer<T>>,
    up: Vec<UpBlock<T>>,
    out: Conv2dCache<T>,
    out_weight: usize,
    trace: ShapeTrace,
}

impl<T: Real> ForwardCache<T> {
    pub fn trace(&self) -> &ShapeTrace {
        &self.trace
    }

    /// Every ReLU on/off decision followed by every pooling argmax. Two
    /// forward passes with equal patterns lie in the same linear region.
    pub fn activation_pattern(&self) -> (Vec<bool>, Vec<usize>) {
        let mut active = Vec::new();
        let mut argmax = Vec::new();
        let relus = self
            .down
            .iter()
            .flat_map(|b| [&b.first.relu, &b.second.relu])
            .chain(self.head.iter().map(|l| &l.relu))
            .chain(self.fc.iter().filter_map(|l| l.relu.as_ref()))
            .chain(self.up.iter().flat_map(|b| [&b.first.relu, &b.second.relu]));
        for r in relus {
            active.extend(r.active());
        }
        for b in &self.down {
            if let Some(p) = &b.pool {
                argmax.extend_from_slice(p.argmax());
            }
        }
        (active, argmax)
    }
}

struct Cursor<'a, T> {
    params: &'a [Tensor<T>],
    next: usize,
}

impl<'a, T> Cursor<'a, T> {
    /// Next weight/bias pair and the weight's index.
    fn pair(&mut self) -> (usize, &'a Tensor<T>, &'a Tensor<T>) {
        let i = self.next;
        self.next += 2;
        (i, &self.params[i], &self.params[i + 1])
    }
}

fn conv_relu<T: Real>(
    x: &Tensor<T>,
    cursor: &mut Cursor<'_, T>,
) -> Result<(Tensor<T>, ConvRelu<T>)> {
    let (weight, w, b) = cursor.pair();
    let (pre, conv) = conv2d_forward(x, w, b)?;
    let (out, relu) = relu(&pre);
    Ok((out, ConvRelu { conv, relu, weight }))
}

/// Runs both heads on `input [B, in_channels, S, S]`.
pub fn forward<T: Real>(
    params: &ModelParams<T>,
    input: &Tensor<T>,
) -> Result<(ModelOutput<T>, ForwardCache<T>)> {
    let arch = &params.arch;
    let (batch, c, h, w) = input.shape().nchw()?;
    if c != arch.in_channels || h != arch.input_size || w != arch.input_size {
        return Err(Error::shape(format!(
            "model expects [B, {}, {s}, {s}], got {}",
            arch.in_channels,
            input.shape(),
            s = arch.input_size
        )));
    }
    let mut cursor = Cursor {
        params: &params.tensors,
        next: 0,
    };
    let last = arch.down.len() - 1;

    let mut down = Vec::with_capacity(arch.down.len());
    let mut skips = Vec::with_capacity(last);
    let mut trace_down = Vec::with_capacity(arch.down.len());
    let mut x = input.clone();
    for level in 0..=last {
        let (a, first) = conv_relu(&x, &mut cursor)?;
        let (b, second) = conv_relu(&a, &mut cursor)?;
        trace_down.push(b.dims().to_vec());
        let pool = if level < last {
            let (pooled, cache) = maxpool2d_forward(&b)?;
            x = pooled;
            skips.push(b);
            Some(cache)
        } else {
            x = b;
            None
        };
        down.push(DownBlock {
            first,
            second,
            pool,
        });
    }
    let bottleneck = x;

    let mut head = Vec::with_capacity(arch.head.len());
    let mut hx = bottleneck.clone();
    for _ in &arch.head {
        let (y, layer) = conv_relu(&hx, &mut cursor)?;
        head.push(layer);
        hx = y;
    }
    let head_dims = hx.dims().to_vec();
    let mut z = hx.into_reshaped(&[batch, arch.flatten_len()])?;
    let flatten_dims = z.dims().to_vec();
    let mut fc = Vec::new();
    let mut fc_dims = Vec::new();
    let fc_count = arch.hidden.len() + 1;
    for i in 0..fc_count {
        let (weight, wt, b) = cursor.pair();
        let (y, linear) = linear_forward(&z, wt, b)?;
        let (y, relu_cache) = if i + 1 < fc_count {
            let (r, cache) = relu(&y);
            (r, Some(cache))
        } else {
            (y, None)
        };
        fc_dims.push(y.dims().to_vec());
        fc.push(FcLayer {
            linear,
            relu: relu_cache,
            weight,
        });
        z = y;
    }
    let class_logits = z;

    let mut up = Vec::with_capacity(last);
    let mut trace_up = Vec::with_capacity(last);
    let mut u = bottleneck;
    for level in (0..last).rev() {
        let (tconv_weight, wt, b) = cursor.pair();
        let (upsampled, tconv) = convtranspose2d_forward(&u, wt, b)?;
        let (merged, concat) = concat_channels(&skips[level], &upsampled)?;
        let (a, first) = conv_relu(&merged, &mut cursor)?;
        let (y, second) = conv_relu(&a, &mut cursor)?;
        trace_up.push(y.dims().to_vec());
        up.push(UpBlock {
            tconv,
            tconv_weight,
            concat,
            first,
            second,
        });
        u = y;
    }
    let (out_weight, wt, b) = cursor.pair();
    let (mask_logits, out) = conv2d_forward(&u, wt, b)?;
    debug_assert_eq!(cursor.next, params.tensors.len());

    let trace = ShapeTrace {
        down: trace_down,
        bottleneck: down[last].second.relu.input().dims().to_vec(),
        head: head_dims,
        flatten: flatten_dims,
        fc: fc_dims,
        up: trace_up,
        mask: mask_logits.dims().to_vec(),
    };
    let cache = ForwardCache {
        down,
        head,
        fc,
        up,
        out,
        out_weight,
        trace,
    };
    Ok((
        ModelOutput {
            class_logits,
            mask_logits,
        },
        cache,
    ))
}

fn conv_relu_backward<T: Real>(
    layer: &ConvRelu<T>,
    grad: &Tensor<T>,
    grads: &mut ModelParams<T>,
) -> Result<Tensor<T>> {
    let g = relu_backward(&layer.relu, grad)?;
    let cg = conv2d_backward(&layer.conv, &g)?;
    grads.tensors[layer.weight] = cg.weight;
    grads.tensors[layer.weight + 1] = cg.bias;
    Ok(cg.input)
}

/// Gradients of every parameter given upstream gradients of both heads.
/// Tensors that feed two consumers (the bottleneck and every skip source)
/// receive the sum of both incoming gradients.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    grad_class_logits: &Tensor<T>,
    grad_mask_logits: &Tensor<T>,
) -> Result<ModelParams<T>> {
    let trace = &cache.trace;
    grad_class_logits.expect_shape(&trace.fc[trace.fc.len() - 1])?;
    grad_mask_logits.expect_shape(&trace.mask)?;
    let mut grads = params.zeros_like();

    // Segmentation branch.
    let og = conv2d_backward(&cache.out, grad_mask_logits)?;
    grads.tensors[cache.out_weight] = og.weight;
    grads.tensors[cache.out_weight + 1] = og.bias;
    let mut g = og.input;
    let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; cache.down.len()];
    let last = cache.down.len() - 1;
    for (block, level) in cache.up.iter().rev().zip(0..last) {
        g = conv_relu_backward(&block.second, &g, &mut grads)?;
        g = conv_relu_backward(&block.first, &g, &mut grads)?;
        let (g_skip, g_up) = concat_backward(&block.concat, &g)?;
        skip_grads[level] = Some(g_skip);
        let tg = convtranspose2d_backward(&block.tconv, &g_up)?;
        grads.tensors[block.tconv_weight] = tg.weight;
        grads.tensors[block.tconv_weight + 1] = tg.bias;
        g = tg.input;
    }
    let grad_bottleneck_seg = g;

    // Classification branch.
    let mut g = grad_class_logits.clone();
    for layer in cache.fc.iter().rev() {
        if let Some(r) = &layer.relu {
            g = relu_backward(r, &g)?;
        }
        let lg = linear_backward(&layer.linear, &g)?;
        grads.tensors[layer.weight] = lg.weight;
        grads.tensors[layer.weight + 1] = lg.bias;
        g = lg.input;
    }
    let mut g = g.into_reshaped(&trace.head)?;
    for layer in cache.head.iter().rev() {
        g = conv_relu_backward(layer, &g, &mut grads)?;
    }

    // Junction at the bottleneck, then down the encoder.
    g.add_assign(&grad_bottleneck_seg)?;
    for (level, block) in cache.down.iter().enumerate().rev() {
        if let Some(pool) = &block.pool {
            g = maxpool2d_backward(pool, &g)?;
            if let Some(skip) = &skip_grads[level] {
                g.add_assign(skip)?;
            }
        }
        g = conv_relu_backward(&block.second, &g, &mut grads)?;
        g = conv_relu_backward(&block.first, &g, &mut grads)?;
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::kaiming_init;

    #[test]
    fn standard_manifest_layout() {
        let arch = Arch::standard();
        let manifest = arch.manifest();
        // 10 down convs, 3 head convs, 3 FC, 4 x (tconv + 2 convs), 1 output conv
        assert_eq!(manifest.len(), 2 * (10 + 3 + 3 + 12 + 1));
        let filters: Vec<usize> = (1..=5)
            .map(|i| {
                let w = manifest
                    .iter()
                    .find(|s| s.name == format!("down{i}.conv2.weight"))
                    .unwrap();
                w.dims[0]
            })
            .collect();
        assert_eq!(filters, vec![16, 32, 64, 128, 256]);
        assert_eq!(arch.flatten_len(), 2048);
        let find = |n: &str| manifest.iter().find(|s| s.name == n).unwrap().dims.clone();
        assert_eq!(find("fc1.weight"), vec![2048, 120]);
        assert_eq!(find("fc2.weight"), vec![120, 84]);
        assert_eq!(find("fc3.weight"), vec![84, 4]);
        assert_eq!(find("up1.tconv.weight"), vec![256, 128, 2, 2]);
        assert_eq!(find("up1.conv1.weight"), vec![128, 256, 3, 3]);
        assert_eq!(find("up4.tconv.weight"), vec![32, 16, 2, 2]);
        assert_eq!(find("up4.conv1.weight"), vec![16, 32, 3, 3]);
        assert_eq!(find("out.conv.weight"), vec![1, 16, 1, 1]);
        assert_eq!(find("head.conv3.weight"), vec![32, 64, 3, 3]);
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelParams::<f32>::init(Arch::tiny(), 5).unwrap();
        let b = ModelParams::<f32>::init(Arch::tiny(), 5).unwrap();
        let c = ModelParams::<f32>::init(Arch::tiny(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.param_count(), b.param_count());
    }

    #[test]
    fn invalid_arch_is_rejected() {
        let mut arch = Arch::tiny();
        arch.input_size = 7;
        assert!(ModelParams::<f32>::init(arch, 0).is_err());
        let mut arch = Arch::tiny();
        arch.down.clear();
        assert!(ModelParams::<f32>::init(arch, 0).is_err());
    }

    #[test]
    fn wrong_input_shape_errors() {
        let params = ModelParams::<f32>::init(Arch::tiny(), 1).unwrap();
        let bad = Tensor::zeros(&[1, 3, 16, 16]).unwrap();
        assert!(matches!(forward(&params, &bad), Err(Error::Shape(_))));
        let bad = Tensor::zeros(&[1, 1, 8, 8]).unwrap();
        assert!(forward(&params, &bad).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let params = ModelParams::<f64>::init(Arch::tiny(), 2).unwrap();
        let x = kaiming_init(&[2, 3, 8, 8], 1, &mut Rng::new(3)).unwrap();
        let (out, cache) = forward(&params, &x).unwrap();
        let grads = backward(
            &params,
            &cache,
            &out.class_logits.zeros_like(),
            &out.mask_logits.zeros_like(),
        )
        .unwrap();
        assert!(grads.tensors().iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn dead_mask_branch_leaves_up_path_untouched() {
        let params = ModelParams::<f64>::init(Arch::tiny(), 4).unwrap();
        let x = kaiming_init(&[2, 3, 8, 8], 1, &mut Rng::new(5)).unwrap();
        let (out, cache) = forward(&params, &x).unwrap();
        let gc = kaiming_init(out.class_logits.dims(), 1, &mut Rng::new(6)).unwrap();
        let grads = backward(&params, &cache, &gc, &out.mask_logits.zeros_like()).unwrap();
        for (name, t) in grads.iter() {
            let zero = t.data().iter().all(|&v| v == 0.0);
            if name.starts_with("up") || name.starts_with("out") {
                assert!(zero, "{name} should have no gradient");
            }
        }
        assert!(grads.get("fc1.weight").unwrap().data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn forward_does_not_touch_params_and_is_repeatable() {
        let params = ModelParams::<f32>::init(Arch::tiny(), 7).unwrap();
        let before = params.clone();
        let x = kaiming_init(&[1, 3, 8, 8], 1, &mut Rng::new(8)).unwrap();
        let (a, _) = forward(&params, &x).unwrap();
        let (b, _) = forward(&params, &x).unwrap();
        assert_eq!(params, before);
        assert_eq!(a.class_logits, b.class_logits);
        assert_eq!(a.mask_logits, b.mask_logits);
    }

    #[test]
    fn skip_shapes_match_upsampled_maps() {
        let arch = Arch {
            input_size: 16,
            in_channels: 3,
            down: vec![2, 3, 4],
            head: vec![2],
            hidden: vec![3],
            classes: 4,
        };
        let params = ModelParams::<f32>::init(arch, 1).unwrap();
        let x = Tensor::new(&[1, 3, 16, 16], 0.5).unwrap();
        let (_, cache) = forward(&params, &x).unwrap();
        let trace = cache.trace();
        assert_eq!(trace.down[..2], [vec![1, 2, 16, 16], vec![1, 3, 8, 8]]);
        assert_eq!(trace.up, vec![vec![1, 3, 8, 8], vec![1, 2, 16, 16]]);
        assert_eq!(trace.bottleneck, vec![1, 4, 4, 4]);
    }
}
