use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};

/// Settings for [`finite_diff_check_with`].
#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Tensors with more entries than this are checked on a random subsample
    /// of exactly this many entries.
    pub max_entries_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            max_entries_per_tensor: 200,
            seed: 0,
        }
    }
}

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(tensor, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
    pub entries_checked: usize,
}

/// `|a − b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of `build_loss` with central finite
/// differences at the given `step`.
///
/// `build_loss` receives a fresh tape with every entry of `params`
/// registered as a leaf under its map key.
pub fn finite_diff_check<F>(
    build_loss: F,
    params: &BTreeMap<String, Matrix>,
    step: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var>,
{
    finite_diff_check_with(
        build_loss,
        params,
        &GradCheckConfig {
            step,
            ..GradCheckConfig::default()
        },
    )
}

pub fn finite_diff_check_with<F>(
    build_loss: F,
    params: &BTreeMap<String, Matrix>,
    config: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var>,
{
    let eval = |params: &BTreeMap<String, Matrix>| -> Result<(Tape, Var)> {
        let mut tape = Tape::new();
        let vars = params
            .iter()
            .map(|(name, m)| Ok((name.clone(), tape.leaf(name.clone(), m.clone())?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let loss = build_loss(&mut tape, &vars)?;
        Ok((tape, loss))
    };

    let (tape, loss) = eval(params)?;
    let first = tape.scalar(loss)?;
    let analytic = tape.backward(loss)?;
    drop(tape);
    let (tape, loss) = eval(params)?;
    let second = tape.scalar(loss)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let loss_at = |params: &BTreeMap<String, Matrix>| -> Result<f64> {
        let (tape, loss) = eval(params)?;
        tape.scalar(loss)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut perturbed = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for (name, value) in params {
        let n = value.len();
        let entries: Vec<usize> = if n > config.max_entries_per_tensor {
            let mut idx = sample(&mut rng, n, config.max_entries_per_tensor).into_vec();
            idx.sort_unstable();
            idx
        } else {
            (0..n).collect()
        };
        for k in entries {
            let original = value.as_slice()[k];
            let slot = |p: &mut BTreeMap<String, Matrix>, v: f64| {
                p.get_mut(name).expect("same keys").as_mut_slice()[k] = v;
            };
            slot(&mut perturbed, original + config.step);
            let plus = loss_at(&perturbed)?;
            slot(&mut perturbed, original - config.step);
            let minus = loss_at(&perturbed)?;
            slot(&mut perturbed, original);

            let numeric = (plus - minus) / (2.0 * config.step);
            let exact = analytic[name].as_slice()[k];
            let err = relative_error(exact, numeric);
            report.entries_checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = Some((name.clone(), k, exact, numeric));
            }
        }
    }
    Ok(report)
}
