//! The finite-difference suite run by `stlm gradcheck` and the acceptance
//! tests: every tensor primitive and every loss, over many random seeds.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::Result;
use crate::losses;
use crate::model::{is_buffer, is_teacher, Binder, Model, ModelConfig};
use crate::synth::{procedural_texture, sample_training_pair, AnomalySpec, ImageSample, PerlinParams, SourceBank, TextureFamily};
use crate::train::{step_graph, Stage, StepInput};
use crate::rng::{derive, stream, Rng};
use crate::tensor::gradcheck::{check_with_fault, CheckReport, Probes, DEFAULT_REL_TOL};
use crate::tensor::{NodeId, Primitive, Tape, Tensor};

/// Looser tolerance for the end-to-end miniature model check.
pub const END_TO_END_REL_TOL: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: String,
    pub seeds: usize,
    pub max_rel_err: f64,
    pub rel_tol: f64,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.rel_tol
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SuiteOptions {
    pub seeds: usize,
    pub base_seed: u64,
    /// Deliberately wrong backward rule for the named primitive.
    pub fault: Option<&'static str>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seeds: 20,
            base_seed: 0x57_1a,
            fault: None,
        }
    }
}

pub const PRIMITIVES: [&str; 23] = [
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "conv2d",
    "layer_norm",
    "softmax",
    "gelu",
    "relu",
    "sigmoid",
    "bilinear_resize",
    "concat",
    "mean",
    "sum",
    "l2_normalize",
    "transpose",
    "reshape",
    "scaled_dot_attention",
    "log",
    "abs",
    "pow",
    "channel_affine",
];

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Uniform in `±[lo, hi]`, keeping away from a kink or pole at zero.
fn away_from_zero(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(lo..hi);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn random_uniform(rng: &mut Rng, max_rank: usize, max_dim: usize, lo: f64, hi: f64) -> Tensor<f64> {
    let shape = random_shape(rng, max_rank, max_dim);
    uniform(rng, &shape, lo, hi)
}

fn random_away(rng: &mut Rng, max_rank: usize, max_dim: usize, lo: f64, hi: f64) -> Tensor<f64> {
    let shape = random_shape(rng, max_rank, max_dim);
    away_from_zero(rng, &shape, lo, hi)
}

fn random_shape(rng: &mut Rng, max_rank: usize, max_dim: usize) -> Vec<usize> {
    let rank = rng.random_range(1..=max_rank);
    (0..rank).map(|_| rng.random_range(1..=max_dim)).collect()
}

/// Random inputs and a primitive instance for one seed.
fn primitive_case(name: &str, rng: &mut Rng) -> (Primitive, Vec<Tensor<f64>>) {
    match name {
        "add" | "sub" | "mul" | "div" => {
            let shape = random_shape(rng, 3, 5);
            // 0: same shape, 1: right operand scalar, 2: left operand scalar.
            let layout = rng.random_range(0..3);
            let (a_shape, b_shape) = match layout {
                0 => (shape.clone(), shape),
                1 => (shape, vec![]),
                _ => (vec![], shape),
            };
            let a = uniform(rng, &a_shape, -1.0, 1.0);
            let b = if name == "div" {
                away_from_zero(rng, &b_shape, 0.5, 1.5)
            } else {
                uniform(rng, &b_shape, -1.0, 1.0)
            };
            let prim = match name {
                "add" => Primitive::Add,
                "sub" => Primitive::Sub,
                "mul" => Primitive::Mul,
                _ => Primitive::Div,
            };
            (prim, vec![a, b])
        }
        "matmul" => {
            let (m, k, n) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6));
            let mut inputs = vec![uniform(rng, &[m, k], -1.0, 1.0), uniform(rng, &[k, n], -1.0, 1.0)];
            if rng.random_bool(0.5) {
                inputs.push(uniform(rng, &[n], -1.0, 1.0));
            }
            (Primitive::MatMul, inputs)
        }
        "conv2d" => loop {
            let c = rng.random_range(1..4);
            let o = rng.random_range(1..4);
            let h = rng.random_range(3..8);
            let w = rng.random_range(3..8);
            let k = rng.random_range(1..4);
            let stride = rng.random_range(1..3);
            let padding = rng.random_range(0..3);
            let dilation = rng.random_range(1..3);
            let span = dilation * (k - 1) + 1;
            if span > h + 2 * padding || span > w + 2 * padding {
                continue;
            }
            let mut inputs = vec![uniform(rng, &[c, h, w], -1.0, 1.0), uniform(rng, &[o, c, k, k], -1.0, 1.0)];
            if rng.random_bool(0.5) {
                inputs.push(uniform(rng, &[o], -1.0, 1.0));
            }
            break (
                Primitive::Conv2d {
                    stride,
                    padding,
                    dilation,
                },
                inputs,
            );
        },
        "layer_norm" => {
            let (r, d) = (rng.random_range(1..5), rng.random_range(2..7));
            let mut inputs = vec![uniform(rng, &[r, d], -1.0, 1.0)];
            if rng.random_bool(0.5) {
                inputs.push(uniform(rng, &[d], 0.5, 1.5));
                inputs.push(uniform(rng, &[d], -1.0, 1.0));
            }
            (Primitive::LayerNorm { eps: 1e-5 }, inputs)
        }
        "softmax" => (Primitive::Softmax, vec![random_uniform(rng, 2, 6, -2.0, 2.0)]),
        "gelu" => (Primitive::Gelu, vec![random_uniform(rng, 3, 5, -3.0, 3.0)]),
        "relu" => (Primitive::Relu, vec![random_away(rng, 3, 5, 0.01, 2.0)]),
        "sigmoid" => (Primitive::Sigmoid, vec![random_uniform(rng, 3, 5, -4.0, 4.0)]),
        "bilinear_resize" => {
            let (c, h, w) = (rng.random_range(1..3), rng.random_range(1..6), rng.random_range(1..6));
            let (oh, ow) = (rng.random_range(1..=2 * h + 1), rng.random_range(1..=2 * w + 1));
            (
                Primitive::BilinearResize { height: oh, width: ow },
                vec![uniform(rng, &[c, h, w], -1.0, 1.0)],
            )
        }
        "concat" => {
            let base = {
                let rank = rng.random_range(1..4);
                (0..rank).map(|_| rng.random_range(1..4)).collect::<Vec<_>>()
            };
            let axis = rng.random_range(0..base.len());
            let count = rng.random_range(1..4);
            let inputs = (0..count)
                .map(|_| {
                    let mut s = base.clone();
                    s[axis] = rng.random_range(1..4);
                    uniform(rng, &s, -1.0, 1.0)
                })
                .collect();
            (Primitive::Concat { axis }, inputs)
        }
        "mean" | "sum" => {
            let shape = random_shape(rng, 3, 5);
            let axis = if rng.random_bool(0.3) {
                None
            } else {
                Some(rng.random_range(0..shape.len()))
            };
            let prim = if name == "mean" {
                Primitive::Mean { axis }
            } else {
                Primitive::Sum { axis }
            };
            (prim, vec![uniform(rng, &shape, -1.0, 1.0)])
        }
        "l2_normalize" => {
            let shape = random_shape(rng, 3, 5);
            let axis = rng.random_range(0..shape.len());
            (Primitive::L2Normalize { axis }, vec![away_from_zero(rng, &shape, 0.1, 1.0)])
        }
        "transpose" => {
            let (r, c) = (rng.random_range(1..6), rng.random_range(1..6));
            (Primitive::Transpose, vec![uniform(rng, &[r, c], -1.0, 1.0)])
        }
        "reshape" => {
            let shape = random_shape(rng, 3, 4);
            let n: usize = shape.iter().product();
            (Primitive::Reshape { shape: vec![n] }, vec![uniform(rng, &shape, -1.0, 1.0)])
        }
        "scaled_dot_attention" => {
            let heads = rng.random_range(1..3);
            let d = heads * rng.random_range(1..4);
            let (n, m) = (rng.random_range(1..6), rng.random_range(1..6));
            (
                Primitive::ScaledDotAttention { heads },
                vec![
                    uniform(rng, &[n, d], -1.0, 1.0),
                    uniform(rng, &[m, d], -1.0, 1.0),
                    uniform(rng, &[m, d], -1.0, 1.0),
                ],
            )
        }
        "log" => (Primitive::Log, vec![random_uniform(rng, 3, 5, 0.2, 2.0)]),
        "abs" => (Primitive::Abs, vec![random_away(rng, 3, 5, 0.01, 2.0)]),
        "pow" => (
            Primitive::Pow {
                exponent: rng.random_range(-2.0..3.0),
            },
            vec![random_uniform(rng, 3, 5, 0.2, 2.0)],
        ),
        "channel_affine" => {
            let c = rng.random_range(1..4);
            let shape = [c, rng.random_range(1..4), rng.random_range(1..4)];
            (
                Primitive::ChannelAffine,
                vec![
                    uniform(rng, &shape, -1.0, 1.0),
                    uniform(rng, &[c], -1.0, 1.0),
                    uniform(rng, &[c], -1.0, 1.0),
                ],
            )
        }
        other => panic!("unknown primitive {other}"),
    }
}

/// Checks one primitive: loss = Σ prim(inputs) ⊙ R with a fixed random R.
pub fn check_primitive(name: &'static str, seed: u64, fault: Option<&'static str>) -> Result<CheckReport> {
    let mut rng = stream(seed, 0x11);
    let (prim, inputs) = primitive_case(name, &mut rng);
    let out_shape = {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let y = tape.apply(prim.clone(), &ids)?;
        tape.value(y).shape().to_vec()
    };
    let weights = uniform(&mut rng, &out_shape, -1.0, 1.0);
    check_with_fault(
        name,
        &inputs,
        |tape: &mut Tape<f64>, ids: &[NodeId]| {
            let y = tape.apply(prim.clone(), ids)?;
            let w = tape.constant(weights.clone());
            let yw = tape.mul(y, w)?;
            tape.sum(yw, None)
        },
        DEFAULT_REL_TOL,
        Probes(None),
        seed,
        fault,
    )
}

fn aggregate(name: &str, reports: &[CheckReport], rel_tol: f64) -> SuiteEntry {
    SuiteEntry {
        name: String::from(name),
        seeds: reports.len(),
        max_rel_err: reports.iter().map(CheckReport::max_rel_err).fold(0.0, f64::max),
        rel_tol,
    }
}

pub fn primitive_suite(opts: &SuiteOptions) -> Result<Vec<SuiteEntry>> {
    PRIMITIVES
        .iter()
        .enumerate()
        .map(|(p, name)| {
            let reports = (0..opts.seeds)
                .map(|s| check_primitive(name, derive(opts.base_seed, (p * 1000 + s) as u64), opts.fault))
                .collect::<Result<Vec<_>>>()?;
            Ok(aggregate(name, &reports, DEFAULT_REL_TOL))
        })
        .collect()
}

pub const LOSSES: [&str; 5] = ["cosine_distill", "focal", "l1", "total", "logit_distill"];

fn binary_mask(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| if rng.random_bool(0.4) { 1.0 } else { 0.0 })
}

fn probabilities(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    uniform(rng, shape, 0.05, 0.95)
}

/// Values in `(0.05, 0.95)` at least 0.05 away from 0.5, so binarization
/// is locally constant.
fn decisive(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v = rng.random_range(0.05..0.45);
        if rng.random_bool(0.5) {
            v
        } else {
            1.0 - v
        }
    })
}

fn feature_pairs(rng: &mut Rng, layers: usize) -> Vec<Tensor<f64>> {
    let (n, d) = (rng.random_range(1..6), rng.random_range(2..6));
    (0..2 * layers).map(|_| away_from_zero(rng, &[n, d], 0.2, 1.0)).collect()
}

fn cosine_of(tape: &mut Tape<f64>, ids: &[NodeId]) -> Result<NodeId> {
    let (t, s): (Vec<NodeId>, Vec<NodeId>) = ids.chunks(2).map(|p| (p[0], p[1])).unzip();
    losses::cosine_distill(tape, &t, &s)
}

/// Checks one loss (or the end-to-end miniature) for one seed.
pub fn check_loss(name: &'static str, seed: u64, fault: Option<&'static str>) -> Result<CheckReport> {
    let mut rng = stream(seed, 0x22);
    let shape = [rng.random_range(1..6), rng.random_range(1..6)];
    let gamma = [0.0, 2.0, 4.0][rng.random_range(0..3)];
    let check = |inputs: &[Tensor<f64>], f: &dyn Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>| {
        check_with_fault(name, inputs, f, DEFAULT_REL_TOL, Probes(None), seed, fault)
    };
    match name {
        "cosine_distill" => {
            let layers = rng.random_range(1..3);
            check(&feature_pairs(&mut rng, layers), &cosine_of)
        }
        "focal" => {
            let mask = binary_mask(&mut rng, &shape);
            check(&[probabilities(&mut rng, &shape)], &|tape, ids| {
                let m = tape.constant(mask.clone());
                losses::focal(tape, m, ids[0], gamma)
            })
        }
        "l1" => {
            let mask = binary_mask(&mut rng, &shape);
            check(&[probabilities(&mut rng, &shape)], &|tape, ids| {
                let m = tape.constant(mask.clone());
                losses::l1(tape, m, ids[0])
            })
        }
        "total" => {
            let mask = binary_mask(&mut rng, &shape);
            let mut inputs = feature_pairs(&mut rng, 2);
            inputs.push(probabilities(&mut rng, &shape));
            check(&inputs, &|tape, ids| {
                let m = tape.constant(mask.clone());
                let lp = cosine_of(tape, &ids[0..2])?;
                let lde = cosine_of(tape, &ids[2..4])?;
                let lf = losses::focal(tape, m, ids[4], 4.0)?;
                let ll = losses::l1(tape, m, ids[4])?;
                losses::sum_all(tape, &[lp, lde, lf, ll])
            })
        }
        "logit_distill" => {
            let teacher = decisive(&mut rng, &shape);
            let student = probabilities(&mut rng, &shape);
            check(&[teacher, student], &|tape, ids| losses::logit_distill(tape, ids[0], ids[1], gamma))
        }
        "end_to_end" => check_end_to_end(seed, fault),
        other => panic!("unknown loss {other}"),
    }
}

/// Gradient of the full training objective of a miniature model with
/// respect to every trainable tensor (probed at a few coordinates each).
fn check_end_to_end(seed: u64, fault: Option<&'static str>) -> Result<CheckReport> {
    let config = ModelConfig::miniature();
    let model: Model<f64> = Model::new(config.clone(), seed)?;
    let perlin = PerlinParams {
        base_period_range: (4, 8),
        ..PerlinParams::default()
    };
    let spec = AnomalySpec {
        activation_prob: 1.0,
        ..AnomalySpec::default()
    };
    let size = config.image_size;
    let inputs = (0..2u64)
        .map(|s| {
            let family = TextureFamily::ALL[(s as usize + seed as usize) % TextureFamily::ALL.len()];
            let normal = ImageSample::normal(procedural_texture(family, config.channels, size, size, derive(seed, s)));
            let pair = sample_training_pair(&normal, &spec, &perlin, &SourceBank::Procedural, derive(seed, 10 + s))?;
            Ok(StepInput {
                clean_tokens: Some(model.teacher_tokens(&pair.clean.image.to_tensor().cast())?),
                corrupted_tokens: Some(model.teacher_tokens(&pair.corrupted.image.to_tensor().cast())?),
                pair,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = model
        .params
        .iter()
        .filter(|(k, _)| !is_teacher(k) && !is_buffer(k))
        .map(|(k, _)| k.clone())
        .collect();
    let tensors: Vec<Tensor<f64>> = names.iter().map(|n| model.params.get(n).expect("listed").clone()).collect();
    let trainable = |n: &str| !is_teacher(n) && !is_buffer(n);
    check_with_fault(
        "end_to_end",
        &tensors,
        |tape: &mut Tape<f64>, ids: &[NodeId]| {
            let nodes = names.iter().cloned().zip(ids.iter().copied()).collect();
            let mut binder = Binder::with_nodes(&model.params, &trainable, nodes);
            let graph = step_graph(tape, &mut binder, &model, Stage::Joint, &inputs, 4.0)?;
            Ok(graph.total)
        },
        END_TO_END_REL_TOL,
        Probes(Some(2)),
        seed,
        fault,
    )
}

pub fn loss_suite(opts: &SuiteOptions) -> Result<Vec<SuiteEntry>> {
    LOSSES
        .iter()
        .chain(core::iter::once(&"end_to_end"))
        .enumerate()
        .map(|(p, name)| {
            let reports = (0..opts.seeds)
                .map(|s| check_loss(name, derive(opts.base_seed ^ 0x1055, (p * 1000 + s) as u64), opts.fault))
                .collect::<Result<Vec<_>>>()?;
            let tol = if *name == "end_to_end" {
                END_TO_END_REL_TOL
            } else {
                DEFAULT_REL_TOL
            };
            Ok(aggregate(name, &reports, tol))
        })
        .collect()
}

/// Primitives, then losses, then the end-to-end miniature.
pub fn full_suite(opts: &SuiteOptions) -> Result<Vec<SuiteEntry>> {
    let mut all = primitive_suite(opts)?;
    all.extend(loss_suite(opts)?);
    Ok(all)
}
