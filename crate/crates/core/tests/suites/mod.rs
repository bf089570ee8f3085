//! Checks shared by the per-module integration tests and the acceptance run.
//! Each returns `Ok(summary)` or `Err(what failed)`.

#![allow(dead_code)]

use std::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use predalign::alignkit::{
    build_prediction_vectors, class_weight_normalization, discriminator_loss, feature_alignment_losses,
    prediction_alignment_losses, weighted_alignment_losses, Discriminator, PredictionWeights,
};
use predalign::detector::{
    decode_box, encode_box, generate_default_boxes, ssd_loss, BoxTemplate, CxCyWh, DetectorConfig, DetectorModel,
    GroundTruth, Xyxy, DEFAULT_VARIANCES,
};
use predalign::evalmetrics::{aggregate_stats, average_precision, best_f1_operating_point, EvalSet, PointMetrics};
use predalign::numkernel::{grad_check_smooth, Activation, Tape, Tensor, Var};
use predalign::synthdomains::{
    generate_dataset, generate_scene, rotate_augment, DatasetRole, DatasetSpec, Domain, DomainParams,
};
use predalign::trainloop::{adapt, AdaptData, Mode, TrainConfig};

pub type Check = Result<String, String>;

pub const GRAD_EPS: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-3;
pub const GRAD_INSTANCES: usize = 20;
/// Largest share of probed coordinates allowed to sit within `ε` of a kink.
pub const MAX_SKIPPED_SHARE: f64 = 0.05;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

fn tensor(r: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), uniform(r, n, -scale, scale)).unwrap()
}

/// Values bounded away from zero, for inputs that pass through a kink at 0.
fn off_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = r.random_range(0.05..1.0);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// `Σ_i c_i · y_i` with fixed coefficients, reducing any output to a scalar.
fn probe(t: &mut Tape, y: Var, coefs: &[f64]) -> predalign::Result<Var> {
    let n = t.value(y).len();
    let flat = t.reshape(y, [1, n])?;
    let w = t.constant([n, 1], coefs.to_vec())?;
    let b = t.constant([1], vec![0.0])?;
    let d = t.dense(flat, w, b)?;
    t.sum(d)
}

type Loss = Box<dyn Fn(&mut Tape, &[Var]) -> predalign::Result<Var>>;

/// One random instance: input tensors, the scalar function, and an optional cap
/// on probed coordinates per tensor.
struct Instance {
    points: Vec<Tensor>,
    f: Loss,
    cap: Option<usize>,
}

fn probed(out_len: usize, r: &mut ChaCha8Rng, op: Loss) -> Loss {
    let coefs = uniform(r, out_len, -1.0, 1.0);
    Box::new(move |t, v| {
        let y = op(t, v)?;
        probe(t, y, &coefs)
    })
}

fn op_instance(name: &str, r: &mut ChaCha8Rng) -> Instance {
    let plain = |points: Vec<Tensor>, f: Loss| Instance { points, f, cap: None };
    match name {
        "conv2d_s1_p1" => {
            let f = probed(2 * 4 * 5 * 5, r, Box::new(|t, v| t.conv2d(v[0], v[1], v[2], 1, 1)));
            plain(vec![tensor(r, &[2, 3, 5, 5], 1.0), tensor(r, &[4, 3, 3, 3], 0.5), tensor(r, &[4], 0.5)], f)
        }
        "conv2d_s2_p1" => {
            let f = probed(3 * 3 * 3, r, Box::new(|t, v| t.conv2d(v[0], v[1], v[2], 2, 1)));
            plain(vec![tensor(r, &[1, 2, 6, 6], 1.0), tensor(r, &[3, 2, 3, 3], 0.5), tensor(r, &[3], 0.5)], f)
        }
        "conv2d_1x1" => {
            let f = probed(2 * 2 * 4 * 4, r, Box::new(|t, v| t.conv2d(v[0], v[1], v[2], 1, 0)));
            plain(vec![tensor(r, &[2, 3, 4, 4], 1.0), tensor(r, &[2, 3, 1, 1], 0.5), tensor(r, &[2], 0.5)], f)
        }
        "dense" => {
            let f = probed(12, r, Box::new(|t, v| t.dense(v[0], v[1], v[2])));
            plain(vec![tensor(r, &[3, 5], 1.0), tensor(r, &[5, 4], 1.0), tensor(r, &[4], 1.0)], f)
        }
        "relu" => {
            let f = probed(20, r, Box::new(|t, v| t.relu(v[0])));
            plain(vec![off_zero(r, &[20])], f)
        }
        "sigmoid" => {
            let f = probed(20, r, Box::new(|t, v| t.activation(Activation::Sigmoid, v[0])));
            plain(vec![tensor(r, &[20], 4.0)], f)
        }
        "softmax" => {
            let f = probed(12, r, Box::new(|t, v| t.softmax(v[0])));
            plain(vec![tensor(r, &[4, 3], 3.0)], f)
        }
        "gather" => {
            let index: Vec<usize> = (0..15).map(|_| r.random_range(0..10)).collect();
            let f = probed(15, r, Box::new(move |t, v| t.gather(v[0], index.clone(), [3, 5])));
            plain(vec![tensor(r, &[10], 1.0)], f)
        }
        "reshape" => {
            let f = probed(12, r, Box::new(|t, v| t.reshape(v[0], [4, 3])));
            plain(vec![tensor(r, &[2, 6], 1.0)], f)
        }
        "concat_cols" => {
            let f = probed(15, r, Box::new(|t, v| t.concat_cols(&[v[0], v[1]])));
            plain(vec![tensor(r, &[3, 2], 1.0), tensor(r, &[3, 3], 1.0)], f)
        }
        "add" => {
            let f = probed(8, r, Box::new(|t, v| t.add(v[0], v[1])));
            plain(vec![tensor(r, &[2, 4], 1.0), tensor(r, &[2, 4], 1.0)], f)
        }
        "scale" => {
            let c = r.random_range(-2.0..2.0);
            let f = probed(6, r, Box::new(move |t, v| t.scale(v[0], c)));
            plain(vec![tensor(r, &[6], 1.0)], f)
        }
        "sum" => plain(vec![tensor(r, &[7], 1.0)], Box::new(|t, v| t.sum(v[0]))),
        "mean" => plain(vec![tensor(r, &[2, 5], 1.0)], Box::new(|t, v| t.mean(v[0]))),
        "bce" => {
            let targets = uniform(r, 8, 0.0, 1.0);
            let weights = uniform(r, 8, 0.1, 2.0);
            plain(
                vec![tensor(r, &[8], 3.0)],
                Box::new(move |t, v| {
                    let p = t.sigmoid(v[0])?;
                    t.bce(p, &targets, Some(&weights))
                }),
            )
        }
        "cross_entropy" => {
            let labels: Vec<usize> = (0..5).map(|_| r.random_range(0..3)).collect();
            let weights = uniform(r, 5, 0.1, 2.0);
            plain(
                vec![tensor(r, &[5, 3], 3.0)],
                Box::new(move |t, v| {
                    let p = t.softmax(v[0])?;
                    t.cross_entropy(p, &labels, Some(&weights))
                }),
            )
        }
        "smooth_l1" => {
            let targets = uniform(r, 24, -2.0, 2.0);
            let weights = uniform(r, 6, 0.0, 1.0);
            plain(
                vec![tensor(r, &[6, 4], 2.5)],
                Box::new(move |t, v| t.smooth_l1(v[0], &targets, Some(&weights))),
            )
        }
        other => panic!("unknown op {other}"),
    }
}

pub const OPS: [&str; 17] = [
    "conv2d_s1_p1",
    "conv2d_s2_p1",
    "conv2d_1x1",
    "dense",
    "relu",
    "sigmoid",
    "softmax",
    "gather",
    "reshape",
    "concat_cols",
    "add",
    "scale",
    "sum",
    "mean",
    "bce",
    "cross_entropy",
    "smooth_l1",
];

pub const LOSSES: [&str; 9] = [
    "ssd_loss",
    "ssd_loss_through_detector",
    "feature_dis",
    "feature_ext",
    "prediction_dis",
    "prediction_det",
    "weighted_prediction_dis",
    "weighted_prediction_det",
    "cwn_unit_weights_det",
];

fn random_gts(r: &mut ChaCha8Rng, side: f64, k: usize) -> Vec<GroundTruth> {
    (0..k)
        .map(|_| {
            let w = r.random_range(5.0..13.0);
            let h = r.random_range(5.0..13.0);
            let x = r.random_range(0.0..side - w);
            let y = r.random_range(0.0..side - h);
            GroundTruth {
                bbox: Xyxy::new(x, y, x + w, y + h),
                label: 1,
            }
        })
        .collect()
}

fn small_detector() -> DetectorConfig {
    DetectorConfig {
        image_side: 16,
        in_channels: 3,
        backbone_channels: vec![4, 4],
        num_classes: 2,
        templates: vec![BoxTemplate { size: 6.0, aspect: 1.0 }],
        variances: DEFAULT_VARIANCES,
    }
}

fn params_of(d: &Discriminator) -> Vec<Tensor> {
    d.params.tensors().to_vec()
}

fn loss_instance(name: &str, r: &mut ChaCha8Rng) -> Instance {
    match name {
        "ssd_loss" => {
            let templates = [BoxTemplate { size: 8.0, aspect: 1.0 }, BoxTemplate { size: 14.0, aspect: 1.0 }];
            let defaults = generate_default_boxes(32, 4, 4, &templates)
                .unwrap()
                .with_variances(DEFAULT_VARIANCES);
            let nb = defaults.len();
            let gts = [random_gts(r, 32.0, 2), random_gts(r, 32.0, 3)];
            Instance {
                points: vec![tensor(r, &[2 * nb, 4], 1.5), tensor(r, &[2 * nb, 2], 2.0)],
                f: Box::new(move |t, v| {
                    let g: Vec<&[GroundTruth]> = gts.iter().map(|g| g.as_slice()).collect();
                    ssd_loss(t, v[0], v[1], &g, &defaults)
                }),
                cap: None,
            }
        }
        "ssd_loss_through_detector" => {
            let model = DetectorModel::new(small_detector(), r).unwrap();
            let images: Vec<Vec<f64>> = (0..2).map(|_| uniform(r, 3 * 16 * 16, 0.0, 1.0)).collect();
            let gts = [random_gts(r, 16.0, 1), random_gts(r, 16.0, 2)];
            let m = model.clone();
            Instance {
                points: model.params.tensors().to_vec(),
                f: Box::new(move |t, v| {
                    let refs: Vec<&[f64]> = images.iter().map(|i| i.as_slice()).collect();
                    let x = predalign::detector::stack_images(t, &refs, 3, 16)?;
                    let out = m.forward(t, v, x)?;
                    let g: Vec<&[GroundTruth]> = gts.iter().map(|g| g.as_slice()).collect();
                    ssd_loss(t, out.offsets, out.logits, &g, &m.defaults)
                }),
                cap: Some(8),
            }
        }
        "feature_dis" => {
            let d = Discriminator::feature(4, r);
            let mut points = vec![tensor(r, &[1, 4, 3, 3], 1.0), tensor(r, &[2, 4, 3, 3], 1.0)];
            points.extend(params_of(&d));
            Instance {
                points,
                f: Box::new(move |t, v| {
                    let ps = d.forward(t, &v[2..], v[0])?;
                    let pt = d.forward(t, &v[2..], v[1])?;
                    discriminator_loss(t, ps, pt, None, None)
                }),
                cap: Some(12),
            }
        }
        "feature_ext" => {
            let d = Discriminator::feature(4, r);
            let src = tensor(r, &[1, 4, 3, 3], 1.0);
            Instance {
                points: vec![tensor(r, &[2, 4, 3, 3], 1.0)],
                f: Box::new(move |t, v| {
                    let s = t.leaf(&src);
                    Ok(feature_alignment_losses(t, s, v[0], &d)?.gen)
                }),
                cap: None,
            }
        }
        "prediction_dis" | "weighted_prediction_dis" => {
            let d = Discriminator::prediction(6, r);
            let weighted = name.starts_with("weighted");
            let (ws, wt) = if weighted {
                (Some(cwn_weights(r, 5, &[1.0, 1.0])), Some(cwn_weights(r, 7, &[1.0, 1.0])))
            } else {
                (None, None)
            };
            let mut points = vec![tensor(r, &[5, 6], 1.0), tensor(r, &[7, 6], 1.0)];
            points.extend(params_of(&d));
            Instance {
                points,
                f: Box::new(move |t, v| {
                    let ps = d.forward(t, &v[2..], v[0])?;
                    let pt = d.forward(t, &v[2..], v[1])?;
                    discriminator_loss(t, ps, pt, ws.as_deref(), wt.as_deref())
                }),
                cap: Some(12),
            }
        }
        "prediction_det" | "weighted_prediction_det" | "cwn_unit_weights_det" => {
            let d = Discriminator::prediction(6, r);
            let src = tensor(r, &[5, 6], 1.0);
            let m = 7;
            let weights = match name {
                "weighted_prediction_det" => Some(cwn_weights(r, m, &[3.0, 1.0])),
                "cwn_unit_weights_det" => Some(vec![1.0; m]),
                _ => None,
            };
            Instance {
                points: vec![tensor(r, &[m, 4], 1.0), tensor(r, &[m, 2], 2.0)],
                f: Box::new(move |t, v| {
                    let s = t.leaf(&src);
                    let tv = build_prediction_vectors(t, v[0], v[1], false)?;
                    let losses = match &weights {
                        Some(w) => weighted_alignment_losses(
                            t,
                            s,
                            tv,
                            &d,
                            &PredictionWeights {
                                dis_source: None,
                                dis_target: None,
                                gen_target: Some(w.clone()),
                            },
                        )?,
                        None => prediction_alignment_losses(t, s, tv, &d)?,
                    };
                    Ok(losses.gen)
                }),
                cap: None,
            }
        }
        other => panic!("unknown loss {other}"),
    }
}

fn random_conf(r: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(n * classes);
    for _ in 0..n {
        let raw = uniform(r, classes, 0.0, 1.0);
        let s: f64 = raw.iter().sum();
        v.extend(raw.iter().map(|x| x / s));
    }
    v
}

fn cwn_weights(r: &mut ChaCha8Rng, n: usize, a: &[f64]) -> Vec<f64> {
    class_weight_normalization(&random_conf(r, n, a.len()), a, a.len())
        .unwrap()
        .per_prediction
}

#[derive(Debug, Clone, Copy)]
pub struct GradCase {
    pub worst: f64,
    pub compared: usize,
    pub skipped: usize,
}

impl GradCase {
    pub fn passes(&self) -> bool {
        self.worst <= GRAD_TOL && (self.skipped as f64) <= MAX_SKIPPED_SHARE * (self.compared + self.skipped) as f64
    }
}

/// Worst relative error over `GRAD_INSTANCES` random instances of one case.
pub fn grad_case(name: &str, seed: u64) -> Result<GradCase, String> {
    let mut r = rng(seed);
    let mut out = GradCase {
        worst: 0.0,
        compared: 0,
        skipped: 0,
    };
    for _ in 0..GRAD_INSTANCES {
        let inst = if OPS.contains(&name) {
            op_instance(name, &mut r)
        } else {
            loss_instance(name, &mut r)
        };
        let rep = grad_check_smooth(&inst.f, &inst.points, GRAD_EPS, inst.cap).map_err(|e| format!("{name}: {e}"))?;
        out.worst = out.worst.max(rep.max_rel_err);
        out.compared += rep.compared;
        out.skipped += rep.skipped;
    }
    Ok(out)
}

pub fn gradient_correctness() -> Check {
    let mut worst = (0.0, "");
    let (mut compared, mut skipped) = (0, 0);
    let mut failures = Vec::new();
    for (i, name) in OPS.iter().chain(LOSSES.iter()).enumerate() {
        let c = grad_case(name, 1000 + i as u64)?;
        if !c.passes() {
            failures.push(format!("{name} err {:.2e}, {} of {} skipped", c.worst, c.skipped, c.compared + c.skipped));
        }
        if c.worst > worst.0 {
            worst = (c.worst, name);
        }
        compared += c.compared;
        skipped += c.skipped;
    }
    let n = OPS.len() + LOSSES.len();
    if failures.is_empty() {
        Ok(format!(
            "{n} cases x {GRAD_INSTANCES} instances, {compared} coordinates, worst rel err {:.2e} ({}), {skipped} kink-straddling skipped",
            worst.0, worst.1
        ))
    } else {
        Err(failures.join("; "))
    }
}

pub fn analytic_gan_values() -> Check {
    let mut r = rng(7);
    let mut d_f = Discriminator::feature(4, &mut r);
    let mut d_p = Discriminator::prediction(6, &mut r);
    d_f.blind();
    d_p.blind();
    let mut t = Tape::new();
    let sm = t.leaf(&tensor(&mut r, &[2, 4, 5, 5], 2.0));
    let tm = t.leaf(&tensor(&mut r, &[3, 4, 5, 5], 2.0));
    let sv = t.leaf(&tensor(&mut r, &[9, 6], 2.0));
    let tv = t.leaf(&tensor(&mut r, &[4, 6], 2.0));
    let f = feature_alignment_losses(&mut t, sm, tm, &d_f).map_err(|e| e.to_string())?;
    let p = prediction_alignment_losses(&mut t, sv, tv, &d_p).map_err(|e| e.to_string())?;
    let got = [t.scalar(f.dis), t.scalar(p.dis), t.scalar(f.gen), t.scalar(p.gen)];
    let want = [2.0 * LN_2, 2.0 * LN_2, LN_2, LN_2];
    let dev = got.iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    if dev <= 1e-9 {
        Ok(format!("max deviation {dev:.1e}"))
    } else {
        Err(format!("values {got:?}, deviation {dev:.3e}"))
    }
}

pub fn cwn_invariants() -> Check {
    let mut r = rng(11);
    let mut worst_sum: f64 = 0.0;
    for _ in 0..500 {
        let classes = r.random_range(2..5);
        let n = r.random_range(1..60);
        let a = uniform(&mut r, classes, 0.1, 4.0);
        let cw = class_weight_normalization(&random_conf(&mut r, n, classes), &a, classes).map_err(|e| e.to_string())?;
        if cw.counts.iter().sum::<usize>() != n || cw.total != n {
            return Err(format!("counts {:?} do not sum to {n}", cw.counts));
        }
        let want: f64 = (n as f64 / classes as f64)
            * cw.counts
                .iter()
                .zip(&a)
                .filter(|(&c, _)| c > 0)
                .map(|(_, &ac)| ac)
                .sum::<f64>();
        let got: f64 = cw.per_prediction.iter().sum();
        worst_sum = worst_sum.max((got - want).abs());
    }
    if worst_sum > 1e-9 {
        return Err(format!("weight sum off by {worst_sum:.3e}"));
    }

    // Unit weights reproduce the unweighted losses.
    let mut worst_unit: f64 = 0.0;
    for _ in 0..50 {
        let d = Discriminator::prediction(6, &mut r);
        let (ns, nt) = (r.random_range(1..12), r.random_range(1..12));
        let mut t = Tape::new();
        let s = t.leaf(&tensor(&mut r, &[ns, 6], 1.5));
        let tv = t.leaf(&tensor(&mut r, &[nt, 6], 1.5));
        let plain = prediction_alignment_losses(&mut t, s, tv, &d).map_err(|e| e.to_string())?;
        let ones = PredictionWeights {
            dis_source: Some(vec![1.0; ns]),
            dis_target: Some(vec![1.0; nt]),
            gen_target: Some(vec![1.0; nt]),
        };
        let w = weighted_alignment_losses(&mut t, s, tv, &d, &ones).map_err(|e| e.to_string())?;
        worst_unit = worst_unit
            .max((t.scalar(plain.dis) - t.scalar(w.dis)).abs())
            .max((t.scalar(plain.gen) - t.scalar(w.gen)).abs());
    }
    if worst_unit > 1e-12 {
        return Err(format!("unit weights differ from unweighted by {worst_unit:.3e}"));
    }

    // Nine background-argmax predictions and one vehicle-argmax prediction.
    let mut conf = Vec::new();
    for _ in 0..9 {
        conf.extend([0.9, 0.1]);
    }
    conf.extend([0.2, 0.8]);
    let cases = [([1.0, 1.0], [0.5556, 5.0]), ([3.0, 1.0], [1.6667, 5.0])];
    for (a, want) in cases {
        let b = class_weight_normalization(&conf, &a, 2).map_err(|e| e.to_string())?.per_class;
        if (b[0] - want[0]).abs() > 1e-4 || (b[1] - want[1]).abs() > 1e-4 {
            return Err(format!("a = {a:?}: B = {b:?}, expected {want:?}"));
        }
    }
    Ok(format!(
        "500 random sum checks (worst {worst_sum:.1e}), unit weights within {worst_unit:.1e}, B = (0.5556, 5.0) and (1.6667, 5.0)"
    ))
}

pub fn box_coding() -> Check {
    let mut r = rng(13);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let gt = CxCyWh::new(
            r.random_range(0.0..64.0),
            r.random_range(0.0..64.0),
            r.random_range(1.0..64.0),
            r.random_range(1.0..64.0),
        );
        let d = CxCyWh::new(
            r.random_range(0.0..64.0),
            r.random_range(0.0..64.0),
            r.random_range(2.0..40.0),
            r.random_range(2.0..40.0),
        );
        let back = decode_box(&encode_box(&gt, &d).map_err(|e| e.to_string())?, &d);
        for (a, b) in [(gt.cx, back.cx), (gt.cy, back.cy), (gt.w, back.w), (gt.h, back.h)] {
            worst = worst.max((a - b).abs());
        }
    }
    if worst > 1e-9 {
        return Err(format!("roundtrip error {worst:.3e}"));
    }
    let params = DomainParams::source_default();
    for seed in 0..100 {
        let scene = generate_scene(&params, 32, Domain::Source, seed, seed).map_err(|e| e.to_string())?;
        let mut s = scene.clone();
        for _ in 0..4 {
            s = rotate_augment(&s, 90).map_err(|e| e.to_string())?;
        }
        let half = rotate_augment(&rotate_augment(&scene, 180).unwrap(), 180).unwrap();
        let mixed = rotate_augment(&rotate_augment(&scene, 90).unwrap(), 270).unwrap();
        for (what, x) in [("4 x 90", &s), ("180 + 180", &half), ("90 + 270", &mixed)] {
            if x.gts != scene.gts || x.image != scene.image {
                return Err(format!("seed {seed}: {what} is not the identity"));
            }
        }
    }
    Ok(format!("10^4 pairs, worst roundtrip {worst:.1e}; 100 scenes back to start after 360 degrees"))
}

/// Reference AP from the threshold-prefix definition, in exact rationals:
/// returns `(numerator, denominator)`.
fn oracle_ap(scores: &[f64], is_tp: &[bool], g: usize) -> (u128, u128) {
    let mut prefixes = Vec::new();
    for k in 1..=scores.len() {
        if k < scores.len() && scores[k] == scores[k - 1] {
            continue;
        }
        let tp = is_tp[..k].iter().filter(|&&t| t).count() as u128;
        prefixes.push((tp, k as u128));
    }
    let (mut num, mut den) = (0u128, 1u128);
    let mut prev_tp = 0u128;
    for (i, &(tp, _)) in prefixes.iter().enumerate() {
        // Best precision at this prefix or any longer one.
        let (bn, bd) = prefixes[i..]
            .iter()
            .fold((0u128, 1u128), |(bn, bd), &(t, k)| if t * bd > bn * k { (t, k) } else { (bn, bd) });
        let gain = tp - prev_tp;
        prev_tp = tp;
        num = num * bd + gain * bn * den;
        den *= bd;
    }
    (num, den * g as u128)
}

pub fn metric_oracles() -> Check {
    // Every TP/FP pattern and tie grouping with up to 6 detections and 4 gts.
    let mut cases = 0usize;
    let mut worst: f64 = 0.0;
    for n in 0..=6usize {
        for pattern in 0..(1u32 << n) {
            let is_tp: Vec<bool> = (0..n).map(|i| pattern >> i & 1 == 1).collect();
            let tps = is_tp.iter().filter(|&&t| t).count();
            let groupings = if n == 0 { 1 } else { 1u32 << (n - 1) };
            for cuts in 0..groupings {
                let mut level = 1.0;
                let mut scores = Vec::with_capacity(n);
                for i in 0..n {
                    if i > 0 && cuts >> (i - 1) & 1 == 1 {
                        level -= 0.125;
                    }
                    scores.push(level);
                }
                for g in tps.max(1)..=4 {
                    let set = EvalSet {
                        scores: scores.clone(),
                        is_tp: is_tp.clone(),
                        num_gt: g,
                    };
                    let got = average_precision(&set).map_err(|e| e.to_string())?;
                    let (num, den) = oracle_ap(&scores, &is_tp, g);
                    let want = num as f64 / den as f64;
                    worst = worst.max((got - want).abs());
                    cases += 1;
                }
            }
        }
    }
    if worst > 1e-12 {
        return Err(format!("AP differs from the prefix oracle by {worst:.3e}"));
    }

    let mut r = rng(17);
    for _ in 0..10_000 {
        let tp = r.random_range(0..1000);
        let fp = r.random_range(0..1000);
        if tp + fp == 0 {
            continue;
        }
        let m = PointMetrics::from_counts(tp, fp, r.random_range(0..1000));
        if m.pr + m.far != 1.0 {
            return Err(format!("PR + FAR = {} at TP={tp}, FP={fp}", m.pr + m.far));
        }
    }

    let mut worst_stats: f64 = 0.0;
    for _ in 0..1000 {
        let n = r.random_range(1..40);
        let v = uniform(&mut r, n, -5.0, 5.0);
        let (mean, se) = aggregate_stats(&v).map_err(|e| e.to_string())?;
        let m: f64 = v.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        worst_stats = worst_stats.max((mean - m).abs()).max((se - (var / n as f64).sqrt()).abs());
    }
    if worst_stats > 1e-12 {
        return Err(format!("aggregate_stats off by {worst_stats:.3e}"));
    }

    // Best-F1 dominates random thresholds.
    for _ in 0..200 {
        let n = r.random_range(1..30);
        let mut scores = uniform(&mut r, n, 0.0, 1.0);
        scores.sort_by(|a, b| b.total_cmp(a));
        let is_tp: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        let g = is_tp.iter().filter(|&&t| t).count() + r.random_range(0..4);
        if g == 0 {
            continue;
        }
        let set = EvalSet {
            scores,
            is_tp,
            num_gt: g,
        };
        let best = best_f1_operating_point(&set).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let thr = r.random_range(0.0..1.0);
            let (tp, fp) = set.counts_at(thr);
            if PointMetrics::from_counts(tp, fp, g - tp).f1 > best.f1 {
                return Err(format!("threshold {thr} beats the best-F1 point"));
            }
        }
    }
    Ok(format!(
        "{cases} exhaustive AP cases (worst {worst:.1e}), PR + FAR = 1 exactly, stats within {worst_stats:.1e}"
    ))
}

/// Small datasets for adaptation smoke runs.
pub fn tiny_data(count: usize) -> (predalign::synthdomains::Dataset, predalign::synthdomains::Dataset) {
    let g = |role, seed, p: &DomainParams| {
        generate_dataset(&DatasetSpec { role, count, seed }, p, 64).unwrap()
    };
    (
        g(DatasetRole::SourceTrain, 0, &DomainParams::source_default()),
        g(DatasetRole::TargetTrainUnlabeled, 1 << 20, &DomainParams::target_default()),
    )
}

pub fn alternation_purity() -> Check {
    let (source, target) = tiny_data(24);
    let cfg = TrainConfig {
        da_iterations: 100,
        batch_source: 4,
        batch_target: 4,
        check_purity: true,
        ..TrainConfig::default()
    };
    let model = DetectorModel::new(cfg.detector.clone(), &mut rng(3)).map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    for mode in [Mode::PlainAdv, Mode::NormDAndP, Mode::NormP] {
        let out = adapt(
            &model,
            &cfg.with_mode(mode),
            AdaptData {
                source: &source,
                target: &target,
                target_labels: None,
            },
        )
        .map_err(|e| format!("{}: {e}", mode.name()))?;
        if out.purity_checks != 200 {
            return Err(format!("{}: {} checks instead of 200", mode.name(), out.purity_checks));
        }
        summary.push(mode.name());
    }
    Ok(format!("100 iterations x 2 checksums each for {}", summary.join(", ")))
}

