use super::{Tape, Tensor, Var};

/// Relative errors are measured against `max(|analytic|, |numeric|, floor)`
/// so that gradients that are zero up to rounding do not blow up the ratio.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, component)` of the worst component.
    pub worst: (usize, usize),
    pub checked: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_FLOOR)
}

fn eval(f: &dyn Fn(&mut Tape, &[Var]) -> Var, xs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.value(out).item()
}

/// Compares reverse-mode gradients of the scalar `f` with central
/// differences, for every input.
pub fn grad_check_many(f: &dyn Fn(&mut Tape, &[Var]) -> Var, xs: &[Tensor], eps: f64) -> GradCheckReport {
    let all: Vec<Vec<usize>> = xs.iter().map(|x| (0..x.len()).collect()).collect();
    grad_check_components(f, xs, eps, &all)
}

/// Like [`grad_check_many`] but only perturbs the listed components of each
/// input.
pub fn grad_check_components(
    f: &dyn Fn(&mut Tape, &[Var]) -> Var,
    xs: &[Tensor],
    eps: f64,
    components: &[Vec<usize>],
) -> GradCheckReport {
    assert_eq!(components.len(), xs.len(), "one component list per input");
    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.backward(out);
    let analytic: Vec<Vec<f64>> =
        vars.iter().zip(xs).map(|(&v, x)| tape.grad(v).map_or_else(|| vec![0.0; x.len()], <[f64]>::to_vec)).collect();

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: (0, 0), checked: 0 };
    let mut probe = xs.to_vec();
    for (i, comps) in components.iter().enumerate() {
        for &c in comps {
            let orig = probe[i].data()[c];
            probe[i].data_mut()[c] = orig + eps;
            let up = eval(f, &probe);
            probe[i].data_mut()[c] = orig - eps;
            let down = eval(f, &probe);
            probe[i].data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let e = rel_error(analytic[i][c], numeric);
            report.checked += 1;
            if e > report.max_rel_error || !e.is_finite() {
                report.max_rel_error = if e.is_finite() { e } else { f64::INFINITY };
                report.worst = (i, c);
            }
        }
    }
    report
}

/// Single-input form: maximum relative error of `d f / d x`.
pub fn grad_check(f: impl Fn(&mut Tape, Var) -> Var, x: &Tensor, eps: f64) -> f64 {
    grad_check_many(&|t: &mut Tape, v: &[Var]| f(t, v[0]), std::slice::from_ref(x), eps).max_rel_error
}
