//! The regression network.
//!
//! Topology: conv blocks (each `layers` 3x3 convolutions with ReLU, then 2x2
//! max pooling) → global average pooling → dense layer with activation →
//! dropout → linear head → target scaling. The head is either a plain linear
//! layer or the ridge layer, which adds `lambda * ||w||^2` on the head weights
//! during training.
//!
//! All trainable parameters live in one flat vector; [`ParamBlock`]s describe
//! the layout in declaration order (per conv layer kernel then bias, dense
//! weight and bias, head weight and bias).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, ConvGeom, KERNEL};
use super::Tensor;
use crate::error::{config_err, shape_err, Result};
use crate::imageops::GrayImage;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub filters: usize,
    pub layers: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_one")]
    pub stride: usize,
    #[serde(default = "default_one")]
    pub padding: usize,
}

fn default_kernel() -> usize {
    KERNEL
}

fn default_one() -> usize {
    1
}

impl ConvBlock {
    pub fn new(filters: usize, layers: usize) -> Self {
        ConvBlock {
            filters,
            layers,
            kernel: KERNEL,
            stride: 1,
            padding: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    #[default]
    RidgeLayer,
    PlainLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

/// Maps the head output to months: `offset + scale * raw`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaling {
    pub offset: f64,
    pub scale: f64,
}

impl Default for TargetScaling {
    fn default() -> Self {
        TargetScaling { offset: 0.0, scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input: InputShape,
    pub blocks: Vec<ConvBlock>,
    #[serde(default = "default_dense_width")]
    pub dense_width: usize,
    #[serde(default)]
    pub dense_activation: Activation,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    #[serde(default)]
    pub head: Head,
    #[serde(default)]
    pub target: TargetScaling,
}

fn default_dense_width() -> usize {
    1024
}

fn default_dropout() -> f64 {
    0.5
}

impl ModelSpec {
    /// Desk-scale profile: 64x64x1 input, three single-layer blocks.
    pub fn desk() -> Self {
        ModelSpec {
            input: InputShape { height: 64, width: 64, channels: 1 },
            blocks: vec![ConvBlock::new(8, 1), ConvBlock::new(16, 1), ConvBlock::new(16, 1)],
            dense_width: 32,
            dense_activation: Activation::Relu,
            dropout_rate: 0.1,
            head: Head::RidgeLayer,
            target: TargetScaling::default(),
        }
    }

    /// Full-size VGG-19-style geometry: 512x512x3 input, five blocks of
    /// 2, 2, 4, 4, 4 layers with 64..512 filters, 1024-wide dense layer.
    pub fn vgg19_like() -> Self {
        let blocks = [(64, 2), (128, 2), (256, 4), (512, 4), (512, 4)]
            .iter()
            .map(|&(f, l)| ConvBlock::new(f, l))
            .collect();
        ModelSpec {
            input: InputShape { height: 512, width: 512, channels: 3 },
            blocks,
            dense_width: 1024,
            dense_activation: Activation::Relu,
            dropout_rate: 0.5,
            head: Head::RidgeLayer,
            target: TargetScaling::default(),
        }
    }

    /// The same geometry with every convolution at stride 2. Spatial extent
    /// collapses before the last block, so this profile fails validation at
    /// 512x512; it exists to make that visible.
    pub fn vgg19_stride2() -> Self {
        let mut spec = Self::vgg19_like();
        for b in &mut spec.blocks {
            b.stride = 2;
        }
        spec
    }

    /// Checks the topology and returns the geometry of every convolution.
    pub fn conv_geometry(&self) -> Result<Vec<ConvGeom>> {
        let InputShape { height, width, channels } = self.input;
        if height == 0 || width == 0 || channels == 0 {
            return Err(config_err!("input shape {height}x{width}x{channels} has a zero extent"));
        }
        if self.blocks.is_empty() {
            return Err(config_err!("at least one conv block is required"));
        }
        if self.dense_width == 0 {
            return Err(config_err!("dense_width must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(config_err!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.target.scale.is_finite() && self.target.scale > 0.0 && self.target.offset.is_finite()) {
            return Err(config_err!("target scaling must have a finite positive scale"));
        }
        let (mut h, mut w, mut c) = (height, width, channels);
        let mut geoms = Vec::new();
        for (bi, block) in self.blocks.iter().enumerate() {
            if block.kernel != KERNEL {
                return Err(config_err!("block {bi}: only 3x3 kernels are supported"));
            }
            if block.filters == 0 || block.layers == 0 {
                return Err(config_err!("block {bi}: filters and layers must be positive"));
            }
            if !(1..=2).contains(&block.stride) {
                return Err(config_err!("block {bi}: stride must be 1 or 2"));
            }
            for li in 0..block.layers {
                let g = ConvGeom::new(h, w, c, block.filters, block.stride, block.padding)
                    .map_err(|_| config_err!("block {bi} layer {li}: spatial extent {h}x{w} collapses"))?;
                (h, w, c) = (g.out_h, g.out_w, g.out_c);
                geoms.push(g);
            }
            if h % 2 != 0 || w % 2 != 0 {
                return Err(config_err!("block {bi}: pooling needs even extents, got {h}x{w}"));
            }
            (h, w) = (h / 2, w / 2);
        }
        Ok(geoms)
    }

    pub fn validate(&self) -> Result<()> {
        self.conv_geometry().map(|_| ())
    }

    pub fn conv_layer_count(&self) -> usize {
        self.blocks.iter().map(|b| b.layers).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    geoms: Vec<ConvGeom>,
    layout: Vec<ParamBlock>,
    params: Vec<f64>,
}

// indices into the layout for the non-conv layers
const DENSE_W: usize = 0;
const DENSE_B: usize = 1;
const HEAD_W: usize = 2;
const HEAD_B: usize = 3;

impl Model {
    /// All parameters zero.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        let geoms = spec.conv_geometry()?;
        let mut layout = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let len = shape.iter().product();
            layout.push(ParamBlock { name, shape, offset, len });
            offset += len;
        };
        let mut li = 0;
        for (bi, block) in spec.blocks.iter().enumerate() {
            for l in 0..block.layers {
                let g = &geoms[li];
                push(format!("conv{bi}_{l}.kernel"), vec![g.out_c, KERNEL, KERNEL, g.in_c]);
                push(format!("conv{bi}_{l}.bias"), vec![g.out_c]);
                li += 1;
            }
        }
        let last_c = geoms.last().map(|g| g.out_c).expect("validated: at least one conv");
        push("dense.weight".into(), vec![spec.dense_width, last_c]);
        push("dense.bias".into(), vec![spec.dense_width]);
        push("head.weight".into(), vec![1, spec.dense_width]);
        push("head.bias".into(), vec![1]);
        Ok(Model {
            params: vec![0.0; offset],
            spec,
            geoms,
            layout,
        })
    }

    /// Kaiming-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero biases.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(spec)?;
        let mut rng = rng::derive(seed, u64::MAX, 0);
        for block in model.layout.clone() {
            if block.name.ends_with(".bias") {
                continue;
            }
            let fan_in: usize = block.shape[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut model.params[block.offset..block.offset + block.len] {
                *p = rng.random_range(-bound..=bound);
            }
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &[ParamBlock] {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(shape_err!("{} parameters for a model with {}", params.len(), self.params.len()));
        }
        self.params = params;
        Ok(())
    }

    pub fn set_target_scaling(&mut self, target: TargetScaling) -> Result<()> {
        let mut spec = self.spec.clone();
        spec.target = target;
        spec.validate()?;
        self.spec = spec;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn conv_geometry(&self) -> &[ConvGeom] {
        &self.geoms
    }

    fn tail_block(&self, which: usize) -> &ParamBlock {
        &self.layout[self.layout.len() - 4 + which]
    }

    fn slice(&self, block: &ParamBlock) -> &[f64] {
        &self.params[block.offset..block.offset + block.len]
    }

    pub fn head_weight_range(&self) -> std::ops::Range<usize> {
        let b = self.tail_block(HEAD_W);
        b.offset..b.offset + b.len
    }

    pub fn head_bias_index(&self) -> usize {
        self.tail_block(HEAD_B).offset
    }

    /// Sets the head so that `prediction = weights . features + intercept`
    /// in months.
    pub fn set_head(&mut self, weights: &[f64], intercept: f64) -> Result<()> {
        let range = self.head_weight_range();
        if weights.len() != range.len() {
            return Err(shape_err!("{} head weights for dense width {}", weights.len(), range.len()));
        }
        let TargetScaling { offset, scale } = self.spec.target;
        for (p, w) in self.params[range].iter_mut().zip(weights) {
            *p = w / scale;
        }
        let bias_at = self.head_bias_index();
        self.params[bias_at] = (intercept - offset) / scale;
        Ok(())
    }

    /// Converts an image to the input tensor, replicating the gray channel.
    pub fn input_tensor(&self, image: &GrayImage) -> Result<Tensor> {
        let InputShape { height, width, channels } = self.spec.input;
        if (image.width(), image.height()) != (width, height) {
            return Err(shape_err!(
                "image is {}x{}, model expects {width}x{height}",
                image.width(),
                image.height()
            ));
        }
        let data = image
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, channels))
            .collect();
        Ok(Tensor::from_parts(vec![height, width, channels], data))
    }
}

/// Everything backward and Grad-CAM need from a forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    /// Input to each convolution.
    conv_inputs: Vec<Tensor>,
    /// Post-ReLU output of each convolution.
    pub conv_activations: Vec<Tensor>,
    /// Per block: the pooled input's shape and winning indices.
    pools: Vec<(Vec<usize>, Vec<usize>)>,
    gap_shape: Vec<usize>,
    gap_out: Vec<f64>,
    dense_out: Vec<f64>,
    dropout_mask: Option<Vec<f64>>,
    /// Input to the head: dense activations after dropout.
    pub features: Vec<f64>,
    pub raw_output: f64,
    pub prediction: f64,
}

/// Runs the network; `dropout_mask` (inverted-dropout multipliers) applies
/// training-mode dropout, `None` is inference.
pub fn forward(model: &Model, input: &Tensor, dropout_mask: Option<&[f64]>) -> Result<Cache> {
    let InputShape { height, width, channels } = model.spec.input;
    if input.shape() != [height, width, channels] {
        return Err(shape_err!(
            "input shape {:?}, model expects [{height}, {width}, {channels}]",
            input.shape()
        ));
    }
    let mut conv_inputs = Vec::with_capacity(model.geoms.len());
    let mut conv_activations = Vec::with_capacity(model.geoms.len());
    let mut pools = Vec::with_capacity(model.spec.blocks.len());
    let mut x = input.clone();
    let mut li = 0;
    for block in &model.spec.blocks {
        for _ in 0..block.layers {
            let g = &model.geoms[li];
            let kernels = model.slice(&model.layout[2 * li]);
            let bias = model.slice(&model.layout[2 * li + 1]);
            let mut out = vec![0.0; g.out_h * g.out_w * g.out_c];
            layers::conv_forward_raw(g, x.data(), kernels, bias, &mut out);
            for v in &mut out {
                *v = v.max(0.0);
            }
            conv_inputs.push(x);
            x = Tensor::from_parts(vec![g.out_h, g.out_w, g.out_c], out);
            conv_activations.push(x.clone());
            li += 1;
        }
        let (pooled, argmax) = layers::maxpool2(&x)?;
        pools.push((x.shape().to_vec(), argmax));
        x = pooled;
    }
    let gap_shape = x.shape().to_vec();
    let gap_out = layers::gap(&x)?;
    let mut dense_out = layers::dense(
        &gap_out,
        model.slice(model.tail_block(DENSE_W)),
        model.slice(model.tail_block(DENSE_B)),
    )?;
    if model.spec.dense_activation == Activation::Relu {
        for v in &mut dense_out {
            *v = v.max(0.0);
        }
    }
    let features = match dropout_mask {
        Some(mask) => {
            if mask.len() != dense_out.len() {
                return Err(shape_err!("dropout mask of {} for width {}", mask.len(), dense_out.len()));
            }
            dense_out.iter().zip(mask).map(|(v, m)| v * m).collect()
        }
        None => dense_out.clone(),
    };
    let raw_output = layers::dense(
        &features,
        model.slice(model.tail_block(HEAD_W)),
        model.slice(model.tail_block(HEAD_B)),
    )?[0];
    let TargetScaling { offset, scale } = model.spec.target;
    Ok(Cache {
        conv_inputs,
        conv_activations,
        pools,
        gap_shape,
        gap_out,
        dense_out,
        dropout_mask: dropout_mask.map(<[f64]>::to_vec),
        features,
        raw_output,
        prediction: offset + scale * raw_output,
    })
}

pub fn predict(model: &Model, image: &GrayImage) -> Result<f64> {
    Ok(forward(model, &model.input_tensor(image)?, None)?.prediction)
}

/// Gradients of one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Same layout as [`Model::params`].
    pub params: Vec<f64>,
    /// Gradient with respect to each convolution's post-ReLU activation.
    pub conv_activations: Vec<Tensor>,
}

/// Backpropagates `upstream = dL/d(prediction)`, the loss gradient with
/// respect to the prediction in months.
pub fn backward(model: &Model, cache: &Cache, upstream: f64) -> Result<Gradients> {
    let mut grads = vec![0.0; model.params.len()];
    let raw_grad = upstream * model.spec.target.scale;

    // head
    let hw = model.tail_block(HEAD_W);
    let (g_features, g_hw, g_hb) = layers::dense_backward(&cache.features, model.slice(hw), &[raw_grad])?;
    grads[hw.offset..hw.offset + hw.len].copy_from_slice(&g_hw);
    grads[model.tail_block(HEAD_B).offset] = g_hb[0];

    // dropout and dense activation
    let mut g_dense: Vec<f64> = match &cache.dropout_mask {
        Some(mask) => g_features.iter().zip(mask).map(|(g, m)| g * m).collect(),
        None => g_features,
    };
    if model.spec.dense_activation == Activation::Relu {
        for (g, &v) in g_dense.iter_mut().zip(&cache.dense_out) {
            if v <= 0.0 {
                *g = 0.0;
            }
        }
    }
    let dw = model.tail_block(DENSE_W);
    let (g_gap, g_dw, g_db) = layers::dense_backward(&cache.gap_out, model.slice(dw), &g_dense)?;
    grads[dw.offset..dw.offset + dw.len].copy_from_slice(&g_dw);
    let db = model.tail_block(DENSE_B);
    grads[db.offset..db.offset + db.len].copy_from_slice(&g_db);

    let mut g = layers::gap_backward(&cache.gap_shape, &g_gap)?;
    let mut act_grads: Vec<Tensor> = Vec::with_capacity(model.geoms.len());
    let mut li = model.geoms.len();
    for (bi, block) in model.spec.blocks.iter().enumerate().rev() {
        let (shape, argmax) = &cache.pools[bi];
        g = layers::maxpool2_backward(shape, argmax, &g)?;
        for _ in 0..block.layers {
            li -= 1;
            act_grads.push(g.clone());
            // relu: the cached activation is positive exactly where the pre-activation was
            let act = &cache.conv_activations[li];
            for (gv, &a) in g.data_mut().iter_mut().zip(act.data()) {
                if a <= 0.0 {
                    *gv = 0.0;
                }
            }
            let geom = &model.geoms[li];
            let kb = &model.layout[2 * li];
            let bb = &model.layout[2 * li + 1];
            let (gk, rest) = grads[kb.offset..].split_at_mut(kb.len);
            let gb = &mut rest[bb.offset - kb.offset - kb.len..][..bb.len];
            let gi = layers::conv_backward_raw(
                geom,
                cache.conv_inputs[li].data(),
                model.slice(kb),
                g.data(),
                gk,
                gb,
                li > 0,
            );
            if let Some(gi) = gi {
                g = Tensor::from_parts(vec![geom.in_h, geom.in_w, geom.in_c], gi);
            }
        }
    }
    act_grads.reverse();
    Ok(Gradients {
        params: grads,
        conv_activations: act_grads,
    })
}
