//! Finite-difference gradient cases for every layer and every model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use windcast::gradcheck::{
    check, check_params, random_projection, random_tensor, GradCheck, DEFAULT_STEP,
};
use windcast::model::{Model, ModelKind, ModelSpec};
use windcast::nn::{
    AttentionAugmentation, BatchNorm, Conv2d, Conv3d, Dense, Depthwise, DepthwiseSeparable, Mode,
    Padding, ParamStore, Pointwise, TransposedConv2d,
};
use windcast::{Graph, Result, Var};

pub const TOLERANCE: f64 = 1e-4;
pub const INSTANCES: u64 = 5;

pub struct Case {
    pub name: String,
    run: Box<dyn Fn(u64) -> Result<GradCheck>>,
}

impl Case {
    fn new(name: impl Into<String>, run: impl Fn(u64) -> Result<GradCheck> + 'static) -> Self {
        Self {
            name: name.into(),
            run: Box::new(run),
        }
    }

    /// Worst relative error over [`INSTANCES`] seeds, or the first failure.
    pub fn run(&self) -> std::result::Result<f64, String> {
        let mut worst = 0.0f64;
        for seed in 1..=INSTANCES {
            let r = (self.run)(seed).map_err(|e| format!("{} seed {seed}: {e}", self.name))?;
            if r.max_relative_error >= TOLERANCE {
                return Err(format!(
                    "{} seed {seed}: relative error {:.3e} at {:?} (analytic {}, numeric {})",
                    self.name, r.max_relative_error, r.worst, r.analytic, r.numeric
                ));
            }
            // elements straddling a ReLU kink are set aside, never more than a sliver
            if r.nonsmooth * 100 > r.elements_checked || r.elements_checked == 0 {
                return Err(format!(
                    "{} seed {seed}: {} of {} elements non-smooth",
                    self.name, r.nonsmooth, r.elements_checked
                ));
            }
            worst = worst.max(r.max_relative_error);
        }
        Ok(worst)
    }
}

/// Replaces the rank-1 tensors (biases, batch-norm affine and running
/// statistics) with seeded random values so none sits at its neutral
/// initial value. Kernels keep their Glorot draw, which holds activations
/// near unit scale and the loss far from cancellation noise.
pub fn randomize(store: &mut ParamStore, seed: u64) {
    let ids: Vec<_> = store.ids().collect();
    for (i, id) in ids.into_iter().enumerate() {
        let shape = store.get(id).shape().to_vec();
        if shape.len() != 1 {
            continue;
        }
        let u = random_tensor(&shape, seed * 1000 + i as u64, 0.5);
        let name = store.name(id);
        let t = if name.ends_with("running_var") {
            u.map(|v| 0.5 + v.abs())
        } else if name.ends_with("gamma") {
            u.map(|v| 1.0 + v)
        } else {
            u
        };
        store.assign(id, t).unwrap();
    }
}

type Layer<L> = (L, ParamStore);

fn layer_case<L: Clone + 'static>(
    name: impl Into<String>,
    make: impl Fn(&mut ParamStore, &mut ChaCha8Rng) -> L + 'static,
    input: &[usize],
    forward: impl Fn(&mut Graph, &Layer<L>, Var) -> Result<Var> + 'static,
) -> Case {
    let input = input.to_vec();
    Case::new(name, move |seed| {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = make(&mut store, &mut rng);
        randomize(&mut store, seed);
        let subject = (l, store);
        let x = random_tensor(&input, 100 + seed, 1.0);
        check_params(
            &subject,
            |s| &mut s.1,
            &x,
            DEFAULT_STEP,
            |g, s, xv| {
                let y = forward(g, s, xv)?;
                random_projection(g, y, 200 + seed)
            },
        )
    })
}

pub fn layer_cases() -> Vec<Case> {
    let mut cases = vec![layer_case(
        "dense",
        |s, r| Dense::new(s, r, "d", 5, 4),
        &[3, 5],
        |g, (l, s), x| l.forward(g, s, x),
    )];
    for padding in [Padding::Valid, Padding::Same] {
        cases.push(layer_case(
            format!("conv2d {padding:?}"),
            move |s, r| Conv2d::new(s, r, "c", 2, 3, 3, padding, true),
            &[2, 2, 4, 5],
            |g, (l, s), x| l.forward(g, s, x),
        ));
    }
    cases.push(layer_case(
        "depthwise",
        |s, r| Depthwise::new(s, r, "d", 3, 3, Padding::Valid),
        &[2, 3, 4, 4],
        |g, (l, s), x| l.forward(g, s, x),
    ));
    cases.push(layer_case(
        "pointwise",
        |s, r| Pointwise::new(s, r, "p", 3, 4),
        &[2, 3, 3, 2],
        |g, (l, s), x| l.forward(g, s, x),
    ));
    for mode in [Mode::Train, Mode::Eval] {
        cases.push(layer_case(
            format!("dsc {mode:?}"),
            |s, r| DepthwiseSeparable::new(s, r, "b", 3, 4, 3),
            &[3, 3, 4, 4],
            move |g, (l, s), x| Ok(l.forward(g, s, x, mode)?.0),
        ));
        cases.push(layer_case(
            format!("batch norm {mode:?}"),
            |s, _| BatchNorm::new(s, "n", 3),
            &[4, 3, 2, 2],
            move |g, (l, s), x| Ok(l.forward(g, s, x, mode)?.0),
        ));
    }
    cases.push(layer_case(
        "conv3d",
        |s, r| Conv3d::new(s, r, "c", 1, 2, 3),
        &[2, 1, 3, 4, 3],
        |g, (l, s), x| l.forward(g, s, x),
    ));
    cases.push(layer_case(
        "transposed conv",
        |s, r| TransposedConv2d::new(s, r, "t", 2, 3),
        &[2, 2, 3, 2],
        |g, (l, s), x| l.forward(g, s, x),
    ));
    cases.push(layer_case(
        "attention",
        |s, r| AttentionAugmentation::new(s, r, "a", 3, 4, 4).unwrap(),
        &[2, 3, 2, 3],
        |g, (l, s), x| Ok(l.forward(g, s, x)?.output),
    ));
    cases.push(Case::new("permute/concat/softmax/flatten", |seed| {
        let a = random_tensor(&[2, 3, 4], seed, 1.0);
        let b = random_tensor(&[2, 2, 4], seed + 50, 1.0);
        check(&[a, b], DEFAULT_STEP, |g, v| {
            let p = g.permute(v[0], &[0, 2, 1])?;
            let q = g.permute(v[1], &[0, 2, 1])?;
            let c = g.concat(&[p, q], 2)?;
            let s = g.softmax(c)?;
            let f = g.flatten_batch(s)?;
            random_projection(g, f, seed)
        })
    }));
    cases.push(Case::new("mse", |seed| {
        let p = random_tensor(&[4, 3], seed, 2.0);
        let t = random_tensor(&[4, 3], seed + 9, 2.0);
        check(&[p, t], DEFAULT_STEP, |g, v| g.mse(v[0], v[1]))
    }));
    cases.push(Case::new("batch matmul", |seed| {
        let a = random_tensor(&[2, 3, 4], seed + 3, 1.0);
        let m = random_tensor(&[2, 4, 2], seed + 4, 1.0);
        check(&[a, m], DEFAULT_STEP, |g, v| {
            let y = g.batch_matmul(v[0], v[1])?;
            let y = g.scale(y, 0.7);
            random_projection(g, y, seed)
        })
    }));
    cases
}

/// Small inputs keep the full-model checks at every element affordable.
/// Upscaling quadruples the spatial area ahead of its dense layer, so it
/// gets the smallest legal input.
fn model_input(kind: ModelKind) -> [usize; 3] {
    match kind {
        ModelKind::Conv2dUpscaling => [3, 3, 3],
        _ => [3, 4, 3],
    }
}

pub fn model_case(kind: ModelKind, mode: Mode) -> Case {
    Case::new(format!("{kind} {mode:?}"), move |seed| {
        let input = model_input(kind);
        let mut model = Model::build(ModelSpec::new(kind, input, 2)?, seed)?;
        randomize(model.store_mut(), seed);
        model.set_output_scaling(&[0.5, -1.0], &[2.0, 0.5])?;
        let mut shape = vec![3];
        shape.extend_from_slice(&input);
        let x = random_tensor(&shape, 300 + seed, 1.0);
        check_params(
            &model,
            |m| m.store_mut(),
            &x,
            DEFAULT_STEP,
            |g, m, xv| {
                let (y, _) = m.forward(g, xv, mode)?;
                random_projection(g, y, 400 + seed)
            },
        )
    })
}

/// Every model in training mode, plus multidim in inference mode.
pub fn model_cases() -> Vec<Case> {
    let mut cases: Vec<Case> = ModelKind::TRAINABLE
        .iter()
        .map(|&k| model_case(k, Mode::Train))
        .collect();
    cases.push(model_case(ModelKind::Multidim, Mode::Eval));
    cases
}
