//! Central finite-difference checks of every differentiable operation,
//! block, loss and the end-to-end model at small sizes in 64-bit.

use rand::Rng as _;

use crate::blocks::{
    cross_attn_block, factorized_block, factorized_block_with_cls, mha_spatial, mha_temporal, mlp, CrossBlockParams,
    FactorizedBlockParams,
};
use crate::error::Result;
use crate::losses::{alignment_loss, appearance_loss, motion_loss, MseReduction};
use crate::masking::{tube_mask, MaskSpec};
use crate::model::{ClipTargets, Model, ModelConfig, MotionTargetKind};
use crate::numerics::gradcheck::{check, GradCheckReport};
use crate::numerics::{concat, Tensor};
use crate::params::{ParamInit, ParamStore};
use crate::patch_embed::{add_pos, embed};
use crate::rng;
use crate::targets::{ClipOrder, MotionTarget, TokenTargets};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;

type LossFn = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>;

struct Case {
    name: String,
    params: Vec<Tensor<f64>>,
    loss: LossFn,
}

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed);
    let n = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).expect("consistent shape")
}

/// `Σ out ⊙ R` for a fixed random `R`, so every output entry matters.
fn project(out: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let w = rand_tensor(out.shape(), seed).detach();
    Ok(out.mul(&w)?.sum())
}

fn case(name: &str, params: Vec<Tensor<f64>>, loss: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + 'static) -> Case {
    Case { name: name.into(), params, loss: Box::new(loss) }
}

fn op_cases() -> Vec<Case> {
    let a = || rand_tensor(&[3, 4], 1);
    let b = || rand_tensor(&[4, 5], 2);
    let same = || rand_tensor(&[3, 4], 3);
    vec![
        case("matmul", vec![a(), b()], |p| project(&p[0].matmul(&p[1])?, 10)),
        case("bmm", vec![rand_tensor(&[2, 3, 4], 4), rand_tensor(&[2, 4, 2], 5)], |p| project(&p[0].bmm(&p[1], false)?, 11)),
        case("bmm_transposed", vec![rand_tensor(&[2, 3, 4], 4), rand_tensor(&[2, 5, 4], 6)], |p| {
            project(&p[0].bmm(&p[1], true)?, 12)
        }),
        case("add", vec![a(), same()], |p| project(&p[0].add(&p[1])?, 13)),
        case("sub", vec![a(), same()], |p| project(&p[0].sub(&p[1])?, 14)),
        case("mul", vec![a(), same()], |p| project(&p[0].mul(&p[1])?, 15)),
        case("scale", vec![a()], |p| project(&p[0].scale(-1.7), 16)),
        case("add_bias", vec![a(), rand_tensor(&[4], 7)], |p| project(&p[0].add_bias(&p[1])?, 17)),
        case("reshape", vec![a()], |p| project(&p[0].reshape(&[2, 6])?, 18)),
        case("permute", vec![rand_tensor(&[2, 3, 4], 8)], |p| project(&p[0].permute(&[2, 0, 1])?, 19)),
        case("softmax", vec![a()], |p| project(&p[0].softmax_lastdim()?, 20)),
        case("layer_norm", vec![a(), rand_tensor(&[4], 9), rand_tensor(&[4], 10)], |p| {
            project(&p[0].layer_norm(&p[1], &p[2], 1e-6)?, 21)
        }),
        case("gelu", vec![a()], |p| project(&p[0].gelu(), 22)),
        case("cross_entropy", vec![rand_tensor(&[3, 5], 11)], |p| p[0].cross_entropy(&[4, 0, 2])),
        case("index_rows", vec![rand_tensor(&[4, 3], 12)], |p| project(&p[0].index_rows(&[3, 0, 3, 1, 3])?, 23)),
        case("concat", vec![rand_tensor(&[2, 3, 2], 13), rand_tensor(&[2, 1, 2], 14)], |p| {
            project(&concat(&[p[0].clone(), p[1].clone()], 1)?, 24)
        }),
        case("narrow", vec![rand_tensor(&[4, 3, 2], 15)], |p| project(&p[0].narrow(1, 1, 2)?, 25)),
        case("sum", vec![a()], |p| Ok(p[0].sum())),
        case("mean", vec![a()], |p| Ok(p[0].mean())),
        case("linear", vec![a(), b(), rand_tensor(&[5], 16)], |p| project(&p[0].linear(&p[1], Some(&p[2]))?, 26)),
        case("embed", vec![rand_tensor(&[2, 3, 6], 17), rand_tensor(&[6, 4], 18), rand_tensor(&[4], 19)], |p| {
            project(&embed(&p[0], &p[1], &p[2])?, 27)
        }),
        case("add_pos", vec![rand_tensor(&[2, 3, 4], 20), rand_tensor(&[2, 4], 21), rand_tensor(&[3, 4], 22)], |p| {
            project(&add_pos(&p[0], &p[1], &p[2])?, 28)
        }),
    ]
}

fn loss_cases() -> Vec<Case> {
    vec![
        case("alignment_loss", vec![rand_tensor(&[5, 4], 30), rand_tensor(&[5, 4], 31)], |p| alignment_loss(&p[0], &p[1])),
        case("appearance_loss", vec![rand_tensor(&[4, 8], 32)], |p| appearance_loss(&p[0], &[1, 7, 0, 7])),
        case("motion_loss", vec![rand_tensor(&[3, 2, 6], 33), rand_tensor(&[3, 2, 6], 34)], |p| {
            motion_loss(&p[0], &p[1], MseReduction::PatchMean)
        }),
    ]
}

/// A store of one factorized block and one cross block at width 8.
fn block_store() -> (ParamStore<f64>, FactorizedBlockParams, CrossBlockParams) {
    let mut s = ParamStore::default();
    let mut r = rng::stream(40);
    let mut init = ParamInit { store: &mut s, rng: &mut r };
    let f = FactorizedBlockParams::init(&mut init, "f", 8, 16);
    let c = CrossBlockParams::init(&mut init, "c", 8, 16);
    // move biases and norm parameters off their trivial initial values
    let mut r = rng::stream(41);
    let perturbed: Vec<Tensor<f64>> = s
        .tensors()
        .iter()
        .map(|t| {
            let v = t.data().iter().map(|x| x + 0.1 * r.random_range(-1.0..1.0)).collect();
            Tensor::param(t.shape(), v).expect("same shape")
        })
        .collect();
    (s.with_tensors(perturbed).expect("same layout"), f, c)
}

fn block_case(
    name: &str,
    input: Tensor<f64>,
    f: impl Fn(&ParamStore<f64>, &FactorizedBlockParams, &CrossBlockParams, &Tensor<f64>) -> Result<Tensor<f64>> + 'static,
) -> Case {
    let (store, fb, cb) = block_store();
    let mut params = store.tensors().to_vec();
    params.push(input);
    case(name, params, move |p| {
        let (ws, x) = p.split_at(p.len() - 1);
        let ps = store.with_tensors(ws.to_vec())?;
        project(&f(&ps, &fb, &cb, &x[0])?, 50)
    })
}

fn block_cases() -> Vec<Case> {
    vec![
        block_case("mha_spatial", rand_tensor(&[2, 3, 8], 42), |ps, f, _, x| mha_spatial(ps, &f.attn_s, x, 2)),
        block_case("mha_temporal", rand_tensor(&[3, 2, 8], 43), |ps, f, _, x| mha_temporal(ps, &f.attn_t, x, 2)),
        block_case("mlp", rand_tensor(&[2, 2, 8], 44), |ps, f, _, x| mlp(ps, &f.mlp, x)),
        block_case("factorized_block", rand_tensor(&[2, 3, 8], 45), |ps, f, _, x| factorized_block(ps, f, x, 2)),
        block_case("factorized_block_with_cls", rand_tensor(&[3, 2, 8], 46), |ps, f, _, x| {
            factorized_block_with_cls(ps, f, x, 2)
        }),
        block_case("cross_attn_block", rand_tensor(&[4, 8], 47), |ps, _, c, x| {
            let kv = rand_tensor(&[3, 8], 48).detach();
            cross_attn_block(ps, c, x, &kv, 2)
        }),
    ]
}

/// Random inputs and targets for the tiny model.
fn tiny_setup(cfg: &ModelConfig) -> (Tensor<f64>, MaskSpec, ClipTargets) {
    let g = cfg.geometry().expect("valid preset");
    let patches = rand_tensor(&[g.t, g.n(), g.patch_dim()], 60).detach();
    let mask = tube_mask(g.n(), g.t, cfg.mask_ratio, 61).expect("valid ratio");
    let mut r = rng::stream(62);
    let tokens = TokenTargets {
        tokens: (0..g.t * g.n()).map(|_| r.random_range(0..cfg.vocab)).collect(),
        t: g.t,
        n: g.n(),
        vocab: cfg.vocab,
    };
    let nm = mask.per_frame().expect("tube mask");
    let shape = [g.t - 1, nm, cfg.motion_dim()];
    let motion = MotionTarget { values: (0..shape.iter().product()).map(|_| r.random_range(-1.0f32..1.0)).collect(), shape };
    (patches, mask, ClipTargets { tokens, motion: Some(motion), order: ClipOrder::Swapped })
}

fn model_case(name: &str, cfg: ModelConfig, run: impl Fn(&Model<f64>, &MaskSpec, &Tensor<f64>) -> Result<Tensor<f64>> + 'static) -> Case {
    let model = Model::<f64>::init(cfg, 63).expect("valid preset");
    let params = model.params.tensors().to_vec();
    case(name, params, move |p| {
        let m = model.with_tensors(p.to_vec())?;
        let (_, mask, _) = tiny_setup(&m.config);
        let r = rand_tensor(&[mask.num_masked(), m.config.decoder_dim()], 64).detach();
        run(&m, &mask, &r)
    })
}

/// End-to-end loss of the tiny model with the alignment targets held at
/// their value for the unperturbed parameters.
fn end_to_end(name: &str, cfg: ModelConfig) -> Case {
    let model = Model::<f64>::init(cfg, 65).expect("valid preset");
    let (patches, mask, targets) = tiny_setup(&model.config);
    let grid = model.embed_patches(&patches).expect("shapes");
    let r_hat = model.encode_alignment_targets(&grid, &mask).expect("tube mask");
    let params = model.params.tensors().to_vec();
    case(name, params, move |p| {
        let m = model.with_tensors(p.to_vec())?;
        Ok(m.forward_clip_with_alignment_targets(&patches, &mask, &targets, &r_hat)?.total)
    })
}

fn model_cases() -> Vec<Case> {
    let tiny = ModelConfig::tiny();
    let order = ModelConfig { motion_target: MotionTargetKind::ClipOrder, ..ModelConfig::tiny() };
    let narrow = ModelConfig { regressor_dim: 6, heads: 2, ..ModelConfig::tiny() };
    vec![
        model_case("decode_appearance", tiny.clone(), |m, mask, r| project(&m.decode_appearance(r, mask)?, 70)),
        model_case("decode_motion", tiny.clone(), |m, mask, r| project(&m.decode_motion(r, mask)?, 71)),
        model_case("decode_clip_order", order.clone(), |m, mask, r| {
            let (logits, label) = m.decode_clip_order(r, mask, ClipOrder::Swapped)?;
            logits.cross_entropy(&vec![label; logits.shape()[0]])
        }),
        end_to_end("model_rgb_diff", tiny),
        end_to_end("model_clip_order", order),
        end_to_end("model_width_projection", narrow),
    ]
}

/// Runs every check; each entry is the case name and its report.
pub fn run() -> Result<Vec<(String, GradCheckReport)>> {
    let mut out = Vec::new();
    for mut c in op_cases().into_iter().chain(loss_cases()).chain(block_cases()).chain(model_cases()) {
        let report = check(&mut c.params, &c.loss, STEP, 1)?;
        out.push((c.name, report));
    }
    Ok(out)
}
