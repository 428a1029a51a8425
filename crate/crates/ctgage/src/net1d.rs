//! Net1D: stacked residual 1D convolution blocks with
//! squeeze-and-excitation channel attention, a global-average-pool head,
//! and label standardization folded into the output.
//!
//! Each block is conv -> bn -> relu -> conv -> bn -> SE-scale, added to a
//! shortcut (1x1 conv + bn when the shape changes) and passed through a
//! final relu. Convolutions use "same" padding, so each stage's first
//! stride-s block divides the temporal length by s (ceiling).

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Padding, Tape, Tensor, VarId};

/// Fixed model input length: one screened window at 2 Hz.
pub const INPUT_LEN: usize = 1800;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Fixed input standardization applied inside the graph: FHR traces sit
/// around 140 bpm with ~20 bpm spread, far from the unit scale the
/// initialization assumes.
pub const INPUT_NORM_MEAN: f64 = 140.0;
pub const INPUT_NORM_SD: f64 = 20.0;
const CHECKPOINT_MAGIC: &[u8; 8] = b"CTGAGE1\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub blocks: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Net1DConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stages: Vec<StageConfig>,
    pub se_reduction: usize,
    pub head_hidden: usize,
    /// Running-statistics update rate for batchnorm in train mode;
    /// 0 freezes the running statistics.
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
}

fn default_bn_momentum() -> f64 {
    BN_MOMENTUM
}

impl Default for Net1DConfig {
    fn default() -> Self {
        Net1DConfig {
            in_channels: 1,
            stem_channels: 32,
            stem_kernel: 15,
            stem_stride: 2,
            stages: vec![
                StageConfig { blocks: 2, channels: 32, kernel: 7, stride: 2 },
                StageConfig { blocks: 2, channels: 64, kernel: 7, stride: 2 },
                StageConfig { blocks: 2, channels: 128, kernel: 7, stride: 2 },
                StageConfig { blocks: 3, channels: 256, kernel: 7, stride: 2 },
            ],
            se_reduction: 4,
            head_hidden: 64,
            bn_momentum: BN_MOMENTUM,
        }
    }
}

impl Net1DConfig {
    /// A deliberately small variant for desk-scale experiments and tests.
    pub fn small() -> Self {
        Net1DConfig {
            in_channels: 1,
            stem_channels: 8,
            stem_kernel: 9,
            stem_stride: 4,
            stages: vec![
                StageConfig { blocks: 1, channels: 16, kernel: 7, stride: 4 },
                StageConfig { blocks: 1, channels: 32, kernel: 7, stride: 4 },
            ],
            se_reduction: 4,
            head_hidden: 16,
            bn_momentum: BN_MOMENTUM,
        }
    }

    /// Temporal length after each stage for the fixed input length;
    /// errors if the stride schedule exhausts the signal.
    pub fn length_schedule(&self) -> Result<Vec<usize>> {
        let mut l = INPUT_LEN;
        let mut schedule = Vec::new();
        let apply = |name: String, stride: usize, l: &mut usize| -> Result<usize> {
            if stride == 0 || *l < stride {
                return Err(Error::Config(format!(
                    "stride {stride} at {name} underflows temporal length {l}"
                )));
            }
            *l = l.div_ceil(stride);
            Ok(*l)
        };
        schedule.push(apply("stem".into(), self.stem_stride, &mut l)?);
        for (i, st) in self.stages.iter().enumerate() {
            schedule.push(apply(format!("stage{i}"), st.stride, &mut l)?);
        }
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 1 && self.in_channels != 2 {
            return Err(Error::Config("in_channels must be 1 or 2".into()));
        }
        if self.se_reduction == 0 {
            return Err(Error::Config("se_reduction must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("bn_momentum must lie in [0, 1]".into()));
        }
        for (i, st) in self.stages.iter().enumerate() {
            if st.channels < self.se_reduction {
                return Err(Error::Config(format!(
                    "stage{i}: channels {} below se_reduction {}",
                    st.channels, self.se_reduction
                )));
            }
            if st.blocks == 0 || st.kernel == 0 {
                return Err(Error::Config(format!("stage{i}: empty block or kernel")));
            }
        }
        self.length_schedule()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeParams {
    pub fc1: DenseParams,
    pub fc2: DenseParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub conv1: ConvParams,
    pub bn1: BnParams,
    pub conv2: ConvParams,
    pub bn2: BnParams,
    pub se: SeParams,
    pub shortcut: Option<(ConvParams, BnParams)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Classifies parameters for the optimizer: batchnorm affine parameters
/// are excluded from weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    BnAffine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: Net1DConfig,
    pub stem_conv: ConvParams,
    pub stem_bn: BnParams,
    pub stages: Vec<Vec<BlockParams>>,
    pub head_fc1: DenseParams,
    pub head_fc2: DenseParams,
    pub label_mean: f64,
    pub label_sd: f64,
    pub mode: Mode,
}

fn he_uniform(rng: &mut ChaCha8Rng, fan_in: usize, shape: Vec<usize>) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor { shape, data }
}

fn conv_init(rng: &mut ChaCha8Rng, c_out: usize, c_in: usize, k: usize) -> ConvParams {
    ConvParams {
        w: he_uniform(rng, c_in * k, vec![c_out, c_in, k]),
        b: Tensor::zeros(vec![c_out]),
    }
}

fn dense_init(rng: &mut ChaCha8Rng, f_out: usize, f_in: usize) -> DenseParams {
    DenseParams {
        w: he_uniform(rng, f_in, vec![f_out, f_in]),
        b: Tensor::zeros(vec![f_out]),
    }
}

fn bn_init(c: usize) -> BnParams {
    BnParams {
        gamma: Tensor {
            shape: vec![c],
            data: vec![1.0; c],
        },
        beta: Tensor::zeros(vec![c]),
        running_mean: vec![0.0; c],
        running_var: vec![1.0; c],
    }
}

impl Model {
    pub fn build(config: Net1DConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem_conv = conv_init(&mut rng, config.stem_channels, config.in_channels, config.stem_kernel);
        let stem_bn = bn_init(config.stem_channels);
        let mut stages = Vec::new();
        let mut c_in = config.stem_channels;
        for st in &config.stages {
            let mut blocks = Vec::new();
            for bi in 0..st.blocks {
                let stride = if bi == 0 { st.stride } else { 1 };
                let c_out = st.channels;
                let se_hidden = (c_out / config.se_reduction).max(1);
                let shortcut = if c_in != c_out || stride != 1 {
                    Some((conv_init(&mut rng, c_out, c_in, 1), bn_init(c_out)))
                } else {
                    None
                };
                blocks.push(BlockParams {
                    conv1: conv_init(&mut rng, c_out, c_in, st.kernel),
                    bn1: bn_init(c_out),
                    conv2: conv_init(&mut rng, c_out, c_out, st.kernel),
                    bn2: bn_init(c_out),
                    se: SeParams {
                        fc1: dense_init(&mut rng, se_hidden, c_out),
                        fc2: dense_init(&mut rng, c_out, se_hidden),
                    },
                    shortcut,
                });
                c_in = c_out;
            }
            stages.push(blocks);
        }
        let head_fc1 = dense_init(&mut rng, config.head_hidden, c_in);
        let head_fc2 = dense_init(&mut rng, 1, config.head_hidden);
        Ok(Model {
            config,
            stem_conv,
            stem_bn,
            stages,
            head_fc1,
            head_fc2,
            label_mean: 0.0,
            label_sd: 1.0,
            mode: Mode::Eval,
        })
    }

    /// Visit every trainable parameter in the stable checkpoint order.
    pub fn visit_params_mut(&mut self, mut f: impl FnMut(String, &mut Tensor, ParamKind)) {
        f("stem.conv.w".into(), &mut self.stem_conv.w, ParamKind::Weight);
        f("stem.conv.b".into(), &mut self.stem_conv.b, ParamKind::Bias);
        f("stem.bn.gamma".into(), &mut self.stem_bn.gamma, ParamKind::BnAffine);
        f("stem.bn.beta".into(), &mut self.stem_bn.beta, ParamKind::BnAffine);
        for (si, blocks) in self.stages.iter_mut().enumerate() {
            for (bi, blk) in blocks.iter_mut().enumerate() {
                let p = format!("stage{si}.block{bi}");
                f(format!("{p}.conv1.w"), &mut blk.conv1.w, ParamKind::Weight);
                f(format!("{p}.conv1.b"), &mut blk.conv1.b, ParamKind::Bias);
                f(format!("{p}.bn1.gamma"), &mut blk.bn1.gamma, ParamKind::BnAffine);
                f(format!("{p}.bn1.beta"), &mut blk.bn1.beta, ParamKind::BnAffine);
                f(format!("{p}.conv2.w"), &mut blk.conv2.w, ParamKind::Weight);
                f(format!("{p}.conv2.b"), &mut blk.conv2.b, ParamKind::Bias);
                f(format!("{p}.bn2.gamma"), &mut blk.bn2.gamma, ParamKind::BnAffine);
                f(format!("{p}.bn2.beta"), &mut blk.bn2.beta, ParamKind::BnAffine);
                f(format!("{p}.se.fc1.w"), &mut blk.se.fc1.w, ParamKind::Weight);
                f(format!("{p}.se.fc1.b"), &mut blk.se.fc1.b, ParamKind::Bias);
                f(format!("{p}.se.fc2.w"), &mut blk.se.fc2.w, ParamKind::Weight);
                f(format!("{p}.se.fc2.b"), &mut blk.se.fc2.b, ParamKind::Bias);
                if let Some((sc, sbn)) = blk.shortcut.as_mut() {
                    f(format!("{p}.shortcut.conv.w"), &mut sc.w, ParamKind::Weight);
                    f(format!("{p}.shortcut.conv.b"), &mut sc.b, ParamKind::Bias);
                    f(format!("{p}.shortcut.bn.gamma"), &mut sbn.gamma, ParamKind::BnAffine);
                    f(format!("{p}.shortcut.bn.beta"), &mut sbn.beta, ParamKind::BnAffine);
                }
            }
        }
        f("head.fc1.w".into(), &mut self.head_fc1.w, ParamKind::Weight);
        f("head.fc1.b".into(), &mut self.head_fc1.b, ParamKind::Bias);
        f("head.fc2.w".into(), &mut self.head_fc2.w, ParamKind::Weight);
        f("head.fc2.b".into(), &mut self.head_fc2.b, ParamKind::Bias);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        let mut clone = self.clone();
        clone.visit_params_mut(|_, t, _| n += t.len());
        n
    }

    /// Forward pass on an existing tape. Registers all parameters as tape
    /// leaves and returns (output-in-days, named parameter vars). In train
    /// mode the running batchnorm statistics are updated in place.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        input: VarId,
        training: bool,
    ) -> Result<(VarId, Vec<(String, VarId)>)> {
        let batch = tape.value(input).shape[0];
        if tape.value(input).shape != vec![batch, self.config.in_channels, INPUT_LEN] {
            return Err(Error::Shape(format!(
                "model input must be [b, {}, {}], got {:?}",
                self.config.in_channels,
                INPUT_LEN,
                tape.value(input).shape
            )));
        }
        let mut params = Vec::new();
        let input = tape.affine(input, 1.0 / INPUT_NORM_SD, -INPUT_NORM_MEAN / INPUT_NORM_SD);

        fn leaf(
            tape: &mut Tape,
            params: &mut Vec<(String, VarId)>,
            name: String,
            t: &Tensor,
        ) -> VarId {
            let id = tape.leaf(t.clone());
            params.push((name, id));
            id
        }

        fn bn(
            tape: &mut Tape,
            params: &mut Vec<(String, VarId)>,
            prefix: &str,
            x: VarId,
            bnp: &mut BnParams,
            training: bool,
            momentum: f64,
        ) -> Result<VarId> {
            let gamma = leaf(tape, params, format!("{prefix}.gamma"), &bnp.gamma);
            let beta = leaf(tape, params, format!("{prefix}.beta"), &bnp.beta);
            let (y, mean, var) = tape.batchnorm1d(
                x,
                gamma,
                beta,
                BN_EPS,
                training,
                &bnp.running_mean,
                &bnp.running_var,
            )?;
            if training {
                for (rm, m) in bnp.running_mean.iter_mut().zip(&mean) {
                    *rm = (1.0 - momentum) * *rm + momentum * m;
                }
                for (rv, v) in bnp.running_var.iter_mut().zip(&var) {
                    *rv = (1.0 - momentum) * *rv + momentum * v;
                }
            }
            Ok(y)
        }

        // stem
        let w = leaf(tape, &mut params, "stem.conv.w".into(), &self.stem_conv.w);
        let b = leaf(tape, &mut params, "stem.conv.b".into(), &self.stem_conv.b);
        let mut x = tape.conv1d(input, w, b, self.config.stem_stride, Padding::Same)?;
        let momentum = self.config.bn_momentum;
        x = bn(tape, &mut params, "stem.bn", x, &mut self.stem_bn, training, momentum)?;
        x = tape.relu(x);

        // residual SE blocks
        let stages_len = self.stages.len();
        for si in 0..stages_len {
            let stride_cfg = self.config.stages[si].stride;
            for bi in 0..self.stages[si].len() {
                let prefix = format!("stage{si}.block{bi}");
                let stride = if bi == 0 { stride_cfg } else { 1 };
                // split borrow: move block out while wiring it
                let mut blk = self.stages[si][bi].clone();
                let w1 = leaf(tape, &mut params, format!("{prefix}.conv1.w"), &blk.conv1.w);
                let b1 = leaf(tape, &mut params, format!("{prefix}.conv1.b"), &blk.conv1.b);
                let mut y = tape.conv1d(x, w1, b1, stride, Padding::Same)?;
                y = bn(tape, &mut params, &format!("{prefix}.bn1"), y, &mut blk.bn1, training, momentum)?;
                y = tape.relu(y);
                let w2 = leaf(tape, &mut params, format!("{prefix}.conv2.w"), &blk.conv2.w);
                let b2 = leaf(tape, &mut params, format!("{prefix}.conv2.b"), &blk.conv2.b);
                y = tape.conv1d(y, w2, b2, 1, Padding::Same)?;
                y = bn(tape, &mut params, &format!("{prefix}.bn2"), y, &mut blk.bn2, training, momentum)?;

                // squeeze-and-excitation
                let pooled = tape.global_avg_pool(y)?;
                let sw1 = leaf(tape, &mut params, format!("{prefix}.se.fc1.w"), &blk.se.fc1.w);
                let sb1 = leaf(tape, &mut params, format!("{prefix}.se.fc1.b"), &blk.se.fc1.b);
                let mut s = tape.dense(pooled, sw1, sb1)?;
                s = tape.relu(s);
                let sw2 = leaf(tape, &mut params, format!("{prefix}.se.fc2.w"), &blk.se.fc2.w);
                let sb2 = leaf(tape, &mut params, format!("{prefix}.se.fc2.b"), &blk.se.fc2.b);
                s = tape.dense(s, sw2, sb2)?;
                s = tape.sigmoid(s);
                y = tape.scale_channels(y, s)?;

                let shortcut = match blk.shortcut.as_mut() {
                    Some((sc, sbn)) => {
                        let scw = leaf(tape, &mut params, format!("{prefix}.shortcut.conv.w"), &sc.w);
                        let scb = leaf(tape, &mut params, format!("{prefix}.shortcut.conv.b"), &sc.b);
                        let sx = tape.conv1d(x, scw, scb, stride, Padding::Same)?;
                        bn(tape, &mut params, &format!("{prefix}.shortcut.bn"), sx, sbn, training, momentum)?
                    }
                    None => x,
                };
                let sum = tape.add(y, shortcut)?;
                x = tape.relu(sum);
                self.stages[si][bi] = blk;
            }
        }

        // head
        let pooled = tape.global_avg_pool(x)?;
        let hw1 = leaf(tape, &mut params, "head.fc1.w".into(), &self.head_fc1.w);
        let hb1 = leaf(tape, &mut params, "head.fc1.b".into(), &self.head_fc1.b);
        let mut h = tape.dense(pooled, hw1, hb1)?;
        h = tape.relu(h);
        let hw2 = leaf(tape, &mut params, "head.fc2.w".into(), &self.head_fc2.w);
        let hb2 = leaf(tape, &mut params, "head.fc2.b".into(), &self.head_fc2.b);
        h = tape.dense(h, hw2, hb2)?;
        let flat = tape.reshape(h, vec![batch])?;
        // de-standardize to days inside the graph
        let days = tape.affine(flat, self.label_sd, self.label_mean);
        Ok((days, params))
    }

    /// Eval-mode prediction in days. Pure in (parameters, input).
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<f64>> {
        let mut clone = self.clone();
        let mut tape = Tape::new();
        let input = tape.leaf(batch.clone());
        let (out, _) = clone.forward(&mut tape, input, false)?;
        Ok(tape.value(out).data.clone())
    }

    /// d(predicted age)/d(input) per time step, summed over channels.
    pub fn input_gradient(&self, sample: &Tensor) -> Result<Vec<f64>> {
        if sample.shape.first() != Some(&1) {
            return Err(Error::Shape(format!(
                "input_gradient expects batch of 1, got {:?}",
                sample.shape
            )));
        }
        let mut clone = self.clone();
        let mut tape = Tape::new();
        let input = tape.leaf(sample.clone());
        let (out, _) = clone.forward(&mut tape, input, false)?;
        let scalar = tape.sum_all(out);
        tape.backward(scalar)?;
        let g = tape.grad(input);
        let c = sample.shape[1];
        let mut per_step = vec![0.0; INPUT_LEN];
        for ci in 0..c {
            for t in 0..INPUT_LEN {
                per_step[t] += g[ci * INPUT_LEN + t];
            }
        }
        Ok(per_step)
    }

    // ---- checkpoint i/o ----
    //
    // Format: magic, u32 header length, JSON header {config, label_mean,
    // label_sd, arrays: [{name, len}]}, then each array as f32
    // little-endian in header order. Trainable parameters come first in
    // visit order, then batchnorm running statistics.

    fn array_manifest(&self) -> Vec<(String, Vec<f64>)> {
        let mut arrays: Vec<(String, Vec<f64>)> = Vec::new();
        let mut clone = self.clone();
        clone.visit_params_mut(|name, t, _| arrays.push((name, t.data.clone())));
        let mut push_bn = |prefix: String, bn: &BnParams| {
            arrays.push((format!("{prefix}.running_mean"), bn.running_mean.clone()));
            arrays.push((format!("{prefix}.running_var"), bn.running_var.clone()));
        };
        push_bn("stem.bn".into(), &self.stem_bn);
        for (si, blocks) in self.stages.iter().enumerate() {
            for (bi, blk) in blocks.iter().enumerate() {
                push_bn(format!("stage{si}.block{bi}.bn1"), &blk.bn1);
                push_bn(format!("stage{si}.block{bi}.bn2"), &blk.bn2);
                if let Some((_, sbn)) = &blk.shortcut {
                    push_bn(format!("stage{si}.block{bi}.shortcut.bn"), sbn);
                }
            }
        }
        arrays
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let arrays = self.array_manifest();
        #[derive(Serialize)]
        struct Header<'a> {
            format_version: u32,
            config: &'a Net1DConfig,
            label_mean: f64,
            label_sd: f64,
            arrays: Vec<(String, usize)>,
        }
        let header = Header {
            format_version: 1,
            config: &self.config,
            label_mean: self.label_mean,
            label_sd: self.label_sd,
            arrays: arrays.iter().map(|(n, d)| (n.clone(), d.len())).collect(),
        };
        let header_json = serde_json::to_vec(&header).map_err(|e| Error::Parse(e.to_string()))?;
        let file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path.display().to_string(), e);
        w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
        w.write_all(&(header_json.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&header_json).map_err(io)?;
        for (_, data) in &arrays {
            for v in data {
                w.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let file =
            std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::io(path.display().to_string(), e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Parse("not a ctgage checkpoint".into()));
        }
        let mut len_bytes = [0u8; 4];
        r.read_exact(&mut len_bytes).map_err(io)?;
        let mut header_json = vec![0u8; u32::from_le_bytes(len_bytes) as usize];
        r.read_exact(&mut header_json).map_err(io)?;
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
            config: Net1DConfig,
            label_mean: f64,
            label_sd: f64,
            arrays: Vec<(String, usize)>,
        }
        let header: Header =
            serde_json::from_slice(&header_json).map_err(|e| Error::Parse(e.to_string()))?;
        if header.format_version != 1 {
            return Err(Error::Parse(format!(
                "unsupported checkpoint version {}",
                header.format_version
            )));
        }
        let mut model = Model::build(header.config, 0)?;
        model.label_mean = header.label_mean;
        model.label_sd = header.label_sd;
        let mut values: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
        for (name, n) in &header.arrays {
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf).map_err(io)?;
            let data: Vec<f64> = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            values.insert(name.clone(), data);
        }
        let mut missing = Vec::new();
        model.visit_params_mut(|name, t, _| match values.get(&name) {
            Some(data) if data.len() == t.len() => t.data.clone_from_slice(data),
            _ => missing.push(name),
        });
        if !missing.is_empty() {
            return Err(Error::Parse(format!(
                "checkpoint missing or mis-sized arrays: {missing:?}"
            )));
        }
        let load_bn = |prefix: String, bn: &mut BnParams| -> Result<()> {
            for (suffix, target) in [
                ("running_mean", &mut bn.running_mean),
                ("running_var", &mut bn.running_var),
            ] {
                let key = format!("{prefix}.{suffix}");
                let data = values
                    .get(&key)
                    .filter(|d| d.len() == target.len())
                    .ok_or_else(|| Error::Parse(format!("checkpoint missing {key}")))?;
                target.clone_from_slice(data);
            }
            Ok(())
        };
        load_bn("stem.bn".into(), &mut model.stem_bn)?;
        for si in 0..model.stages.len() {
            for bi in 0..model.stages[si].len() {
                let mut blk = model.stages[si][bi].clone();
                load_bn(format!("stage{si}.block{bi}.bn1"), &mut blk.bn1)?;
                load_bn(format!("stage{si}.block{bi}.bn2"), &mut blk.bn2)?;
                if let Some((_, sbn)) = blk.shortcut.as_mut() {
                    load_bn(format!("stage{si}.block{bi}.shortcut.bn"), sbn)?;
                }
                model.stages[si][bi] = blk;
            }
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_is_deterministic_per_seed() {
        let a = Model::build(Net1DConfig::small(), 1).unwrap();
        let b = Model::build(Net1DConfig::small(), 1).unwrap();
        let c = Model::build(Net1DConfig::small(), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn stride_overflow_is_config_error() {
        let mut cfg = Net1DConfig::small();
        cfg.stages.push(StageConfig {
            blocks: 1,
            channels: 32,
            kernel: 3,
            stride: 4096,
        });
        let err = Model::build(cfg, 1).unwrap_err();
        assert!(err.to_string().contains("stage2"), "{err}");
    }

    #[test]
    fn param_count_matches_closed_form() {
        // Hand formula for the small config:
        //   conv: c_out*c_in*k + c_out      bn: 2c      dense: f_out*f_in + f_out
        //   SE: c*(c/r) + c/r + (c/r)*c + c
        // stem: 8*1*9+8 + 16 = 96
        // stage0 block0 (in 8 -> 16, k7, stride 4, shortcut):
        //   conv1 16*8*7+16=912; bn1 32; conv2 16*16*7+16=1808; bn2 32
        //   se: 4*16+4 + 16*4+16 = 148; shortcut conv 16*8*1+16=144; bn 32
        //   total 3108
        // stage1 block0 (16 -> 32): conv1 32*16*7+32=3616; bn1 64;
        //   conv2 32*32*7+32=7200; bn2 64; se: 32*8+8=264, 8*32+32=288 -> 552;
        //   shortcut 32*16+32=544; bn 64 -> 12104
        // head: 16*32+16=528; 1*16+1=17
        // total = 96 + 3108 + 12104 + 528 + 17 = 15853
        let m = Model::build(Net1DConfig::small(), 1).unwrap();
        assert_eq!(m.param_count(), 15853);
    }

    #[test]
    fn zero_input_finite_output() {
        let m = Model::build(Net1DConfig::small(), 1).unwrap();
        let x = Tensor::zeros(vec![1, 1, INPUT_LEN]);
        let y = m.predict(&x).unwrap();
        assert_eq!(y.len(), 1);
        assert!(y[0].is_finite());
    }

    #[test]
    fn identical_rows_identical_outputs_in_eval() {
        let m = Model::build(Net1DConfig::small(), 3).unwrap();
        let row: Vec<f64> = (0..INPUT_LEN).map(|i| 140.0 + (i as f64 / 25.0).sin()).collect();
        let mut data = row.clone();
        data.extend(&row);
        let x = Tensor::new(vec![2, 1, INPUT_LEN], data).unwrap();
        let y = m.predict(&x).unwrap();
        assert_eq!(y[0], y[1]);
    }

    #[test]
    fn se_scaling_is_wired() {
        // force all SE sigmoid outputs to ~1 by biasing fc2 high; outputs
        // must change relative to the untouched model
        let m = Model::build(Net1DConfig::small(), 5).unwrap();
        let mut neutered = m.clone();
        for blocks in neutered.stages.iter_mut() {
            for blk in blocks.iter_mut() {
                for v in blk.se.fc2.w.data.iter_mut() {
                    *v = 0.0;
                }
                for v in blk.se.fc2.b.data.iter_mut() {
                    *v = 40.0; // sigmoid -> 1.0: scaling disabled
                }
            }
        }
        let x = Tensor::new(
            vec![1, 1, INPUT_LEN],
            (0..INPUT_LEN).map(|i| 140.0 + ((i % 97) as f64) / 10.0).collect(),
        )
        .unwrap();
        let y0 = m.predict(&x).unwrap()[0];
        let y1 = neutered.predict(&x).unwrap()[0];
        assert!((y0 - y1).abs() > 1e-9, "SE scaling had no effect");
    }

    #[test]
    fn wrong_input_length_rejected() {
        let m = Model::build(Net1DConfig::small(), 1).unwrap();
        let x = Tensor::zeros(vec![1, 1, 1799]);
        assert!(m.predict(&x).is_err());
    }

    #[test]
    fn predict_is_pure() {
        let m = Model::build(Net1DConfig::small(), 7).unwrap();
        let x = Tensor::new(
            vec![1, 1, INPUT_LEN],
            (0..INPUT_LEN).map(|i| 120.0 + (i % 13) as f64).collect(),
        )
        .unwrap();
        assert_eq!(m.predict(&x).unwrap(), m.predict(&x).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let mut m = Model::build(Net1DConfig::small(), 9).unwrap();
        m.label_mean = 260.0;
        m.label_sd = 18.5;
        m.save(&p1).unwrap();
        let m2 = Model::load(&p1).unwrap();
        assert_eq!(m2.label_mean, 260.0);
        assert_eq!(m2.label_sd, 18.5);
        // after one quantization pass the round trip is bit-exact
        m2.save(&p2).unwrap();
        let m3 = Model::load(&p2).unwrap();
        assert_eq!(m2, m3);
        let x = Tensor::new(
            vec![1, 1, INPUT_LEN],
            (0..INPUT_LEN).map(|i| 130.0 + (i % 29) as f64 / 3.0).collect(),
        )
        .unwrap();
        assert_eq!(m2.predict(&x).unwrap(), m3.predict(&x).unwrap());
        assert_eq!(
            std::fs::read(&p1).unwrap()[..],
            std::fs::read(&p2).unwrap()[..]
        );
    }

    #[test]
    fn length_schedule_documented() {
        let cfg = Net1DConfig::default();
        assert_eq!(cfg.length_schedule().unwrap(), vec![900, 450, 225, 113, 57]);
    }

    #[test]
    fn input_gradient_has_input_length() {
        let m = Model::build(Net1DConfig::small(), 2).unwrap();
        let x = Tensor::new(
            vec![1, 1, INPUT_LEN],
            (0..INPUT_LEN).map(|i| 140.0 - (i % 41) as f64 / 7.0).collect(),
        )
        .unwrap();
        let g = m.input_gradient(&x).unwrap();
        assert_eq!(g.len(), INPUT_LEN);
        assert!(g.iter().all(|v| v.is_finite()));
    }
}
