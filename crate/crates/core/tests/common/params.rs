//! Parameter accounting against closed forms.

use windcast::model::{count_parameters, Model, ModelKind, ModelSpec, HIDDEN_UNITS, KERNEL};
use windcast::repro::CriterionResult;

pub const DENMARK_SHAPE: ([usize; 3], usize) = ([5, 4, 4], 3);
pub const NETHERLANDS_SHAPE: ([usize; 3], usize) = ([7, 6, 6], 7);

/// Regression values for the shapes above, in [`ModelKind::TRAINABLE`]
/// order.
pub const FROZEN_DENMARK: [usize; 5] = [18_371, 20_815, 67_801, 16_155, 33_704];
pub const FROZEN_NETHERLANDS: [usize; 5] = [68_615, 77_203, 265_105, 103_711, 116_290];

const KK: usize = KERNEL * KERNEL;

fn head(flat: usize, targets: usize) -> usize {
    flat * HIDDEN_UNITS + HIDDEN_UNITS + HIDDEN_UNITS * targets + targets
}

/// Depthwise (no bias) + pointwise (no bias) + batch norm affine.
pub fn dsc(c: usize, o: usize) -> usize {
    c * KK + c * o + 2 * o
}

/// The standard convolution a DSC replaces, with the same batch norm.
pub fn standard(c: usize, o: usize) -> usize {
    c * o * KK + 2 * o
}

/// Trainable count of each builder as a function of its input shape.
pub fn closed_form(kind: ModelKind, [c, t, f]: [usize; 3], targets: usize) -> usize {
    let s = |e: usize| e + 1 - KERNEL;
    let m = kind.feature_maps();
    match kind {
        ModelKind::Multidim => {
            dsc(c, m)
                + dsc(t, m)
                + dsc(f, m)
                + head(m * (s(t) * s(f) + s(c) * s(f) + s(c) * s(t)), targets)
        }
        ModelKind::Conv2d => c * m * KK + m + head(m * s(t) * s(f), targets),
        ModelKind::Conv2dAttention => {
            let (dk, dv) = (4, 4);
            c * m * KK + m + 2 * (m * dk + dk) + m * dv + dv + head((m + dv) * s(t) * s(f), targets)
        }
        ModelKind::Conv2dUpscaling => {
            let (h, w) = (2 * t + 2 - 2 * KERNEL, 2 * f + 2 - 2 * KERNEL);
            c * c * 4 + c + dsc(c, m) + dsc(m, m) + head(m * h * w, targets)
        }
        ModelKind::Conv3d => m * KK * KERNEL + m + head(m * s(c) * s(t) * s(f), targets),
        ModelKind::Persistence => 0,
    }
}

/// The DSC blocks each builder uses at a shape, as `(in, out)` channels.
pub fn dsc_blocks(kind: ModelKind, [c, t, f]: [usize; 3]) -> Vec<(usize, usize)> {
    let m = kind.feature_maps();
    match kind {
        ModelKind::Multidim => vec![(c, m), (t, m), (f, m)],
        ModelKind::Conv2dUpscaling => vec![(c, m), (m, m)],
        _ => Vec::new(),
    }
}

pub fn built_count(kind: ModelKind, shape: [usize; 3], targets: usize) -> usize {
    count_parameters(&Model::build(ModelSpec::new(kind, shape, targets).unwrap(), 0).unwrap())
}

fn result(label: String, expected: String, observed: String, passed: bool) -> CriterionResult {
    CriterionResult {
        criterion: 9,
        label,
        expected,
        observed,
        passed,
    }
}

/// Built counts equal the closed form and the frozen values on both dataset
/// shapes and a grid of other shapes.
pub fn closed_forms() -> Vec<CriterionResult> {
    let mut out = Vec::new();
    for ((shape, targets), frozen, name) in [
        (DENMARK_SHAPE, FROZEN_DENMARK, "denmark"),
        (NETHERLANDS_SHAPE, FROZEN_NETHERLANDS, "netherlands"),
    ] {
        for (kind, frozen) in ModelKind::TRAINABLE.into_iter().zip(frozen) {
            let built = built_count(kind, shape, targets);
            let formula = closed_form(kind, shape, targets);
            out.push(result(
                format!("{name} {kind} parameter count"),
                format!("{formula} (closed form), {frozen} (frozen)"),
                built.to_string(),
                built == formula && built == frozen,
            ));
        }
    }
    let mut mismatches = Vec::new();
    let mut checked = 0;
    for c in 3..=6 {
        for t in 3..=6 {
            for f in [3, 5] {
                for kind in ModelKind::TRAINABLE {
                    checked += 1;
                    let (built, formula) = (
                        built_count(kind, [c, t, f], 2),
                        closed_form(kind, [c, t, f], 2),
                    );
                    if built != formula {
                        mismatches.push(format!("{kind} {:?}: {built} vs {formula}", [c, t, f]));
                    }
                }
            }
        }
    }
    out.push(result(
        "closed form over a shape grid".into(),
        format!("{checked} builds match"),
        format!("{} mismatches {}", mismatches.len(), mismatches.join("; ")),
        mismatches.is_empty(),
    ));
    out
}

/// Each DSC block used on the dataset shapes is smaller than the standard
/// convolution it replaces.
pub fn dsc_smaller() -> CriterionResult {
    let mut worst: Option<(usize, usize, usize, usize)> = None;
    let mut all = true;
    for (shape, _) in [DENMARK_SHAPE, NETHERLANDS_SHAPE] {
        for kind in ModelKind::TRAINABLE {
            for (c, o) in dsc_blocks(kind, shape) {
                let (d, s) = (dsc(c, o), standard(c, o));
                all &= d < s;
                if worst.is_none_or(|(_, _, wd, ws)| d * ws > wd * s) {
                    worst = Some((c, o, d, s));
                }
            }
        }
    }
    let (c, o, d, s) = worst.expect("at least one block");
    result(
        "DSC below standard convolution".into(),
        "dsc < standard for every block".into(),
        format!("largest ratio at {c}→{o}: {d} vs {s}"),
        all,
    )
}
