use std::fmt;
use std::str::FromStr;

use crate::error::{contract, Error, Result, SolverError};
use crate::numcore::{Graph, Tensor, Var};

/// Right-hand side of an autonomous or time-dependent ODE recorded on a graph.
pub trait Rhs {
    fn eval(&self, g: &mut Graph, t: f64, z: Var) -> Result<Var>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverMethod {
    Dopri5,
    Rk4,
}

impl fmt::Display for SolverMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverMethod::Dopri5 => "dopri5",
            SolverMethod::Rk4 => "rk4",
        })
    }
}

impl FromStr for SolverMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dopri5" => Ok(SolverMethod::Dopri5),
            "rk4" => Ok(SolverMethod::Rk4),
            _ => Err(Error::Contract(format!("unknown solver '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Step size for `rk4`.
    pub step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::Dopri5,
            rtol: 1e-3,
            atol: 1e-4,
            max_steps: 10_000,
            step: 0.01,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.rtol > 0.0 && self.atol > 0.0, "rtol and atol must be positive");
        contract!(self.max_steps > 0, "max_steps must be positive");
        contract!(self.step > 0.0, "rk4 step must be positive");
        Ok(())
    }
}

/// Integration statistics of one solve.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const PI_ALPHA: f64 = 0.17;
const PI_BETA: f64 = 0.04;

const C: [f64; 6] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0];
const A: [&[f64]; 6] = [
    &[],
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ],
];
const B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
/// Fifth-order minus embedded fourth-order weights (seven stages, FSAL).
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

enum Outputs {
    Vars(Vec<Var>),
    Values(Vec<Tensor>),
}

/// Integrates from `(t0, z0)` and returns the state at each of `times`
/// (non-decreasing, all `>= t0`). Accepted steps stay on the tape so the
/// outputs are differentiable; rejected attempts are removed from it.
pub fn solve(
    g: &mut Graph,
    rhs: &dyn Rhs,
    z0: Var,
    t0: f64,
    times: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<Var>, SolveStats)> {
    match integrate(g, rhs, z0, t0, times, cfg, false)? {
        (Outputs::Vars(v), s) => Ok((v, s)),
        _ => unreachable!(),
    }
}

/// Like [`solve`] but keeps only the current state on the tape, so memory stays
/// bounded on long horizons. The tape is restored to its length at entry.
pub fn solve_detached(
    g: &mut Graph,
    rhs: &dyn Rhs,
    z0: &Tensor,
    t0: f64,
    times: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<Tensor>, SolveStats)> {
    let base = g.len();
    let z = g.constant(z0);
    let out = integrate(g, rhs, z, t0, times, cfg, true);
    g.truncate(base);
    match out? {
        (Outputs::Values(v), s) => Ok((v, s)),
        _ => unreachable!(),
    }
}

/// State at a single target time.
pub fn odesolve(g: &mut Graph, rhs: &dyn Rhs, z0: Var, t0: f64, t_target: f64, cfg: &SolverConfig) -> Result<Var> {
    Ok(solve(g, rhs, z0, t0, &[t_target], cfg)?.0[0])
}

struct Stepper<'a> {
    g: &'a mut Graph,
    rhs: &'a dyn Rhs,
    detach: bool,
    anchor: usize,
    atol: f64,
    rtol: f64,
    stats: SolveStats,
}

impl Stepper<'_> {
    fn f(&mut self, t: f64, z: Var) -> Result<Var> {
        self.stats.rhs_evals += 1;
        self.rhs.eval(self.g, t, z)
    }

    /// In detached mode, forget everything but the given values.
    fn compact(&mut self, keep: &[Var]) -> Vec<Var> {
        if !self.detach {
            return keep.to_vec();
        }
        let saved: Vec<Tensor> = keep.iter().map(|&v| self.g.tensor(v)).collect();
        self.g.truncate(self.anchor);
        saved.iter().map(|t| self.g.constant(t)).collect()
    }
}

fn integrate(
    g: &mut Graph,
    rhs: &dyn Rhs,
    z0: Var,
    t0: f64,
    times: &[f64],
    cfg: &SolverConfig,
    detach: bool,
) -> Result<(Outputs, SolveStats)> {
    cfg.validate()?;
    contract!(t0.is_finite(), "initial time must be finite");
    let mut prev = t0;
    for &t in times {
        if !(t >= prev) {
            return Err(SolverError::Backward { t0: prev, target: t }.into());
        }
        prev = t;
    }
    if g.value(z0).iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite { t: t0 }.into());
    }
    let mut st = Stepper {
        anchor: g.len(),
        g,
        rhs,
        detach,
        atol: cfg.atol,
        rtol: cfg.rtol,
        stats: SolveStats::default(),
    };
    let mut vars = Vec::new();
    let mut values = Vec::new();
    let mut emit = |st: &Stepper, z: Var| {
        if detach {
            values.push(st.g.tensor(z));
        } else {
            vars.push(z);
        }
    };
    let span = times.last().map_or(0.0, |&t| t - t0);
    let mut t = t0;
    let mut z = z0;
    if span > 0.0 {
        match cfg.method {
            SolverMethod::Dopri5 => {
                let mut k1 = st.f(t, z)?;
                let mut h_prop = 1e-3 * span;
                let mut err_prev = 1.0f64;
                let mut last_rejected = false;
                for &target in times {
                    while t < target {
                        if st.stats.accepted + st.stats.rejected >= cfg.max_steps {
                            return Err(SolverError::Divergence {
                                max_steps: cfg.max_steps,
                                target,
                                reached: t,
                            }
                            .into());
                        }
                        let remaining = target - t;
                        let clipped = h_prop >= remaining;
                        let h = if clipped { remaining } else { h_prop };
                        if !clipped && h <= 16.0 * f64::EPSILON * t.abs().max(span) {
                            return Err(SolverError::Stiffness { t, h }.into());
                        }
                        let mark = st.g.len();
                        let step = dopri5_step(&mut st, t, z, k1, h)?;
                        let (y_new, k7, err) = match step {
                            Some(s) => s,
                            None => (z, k1, f64::INFINITY),
                        };
                        if err <= 1.0 {
                            st.stats.accepted += 1;
                            let mut factor = if err == 0.0 {
                                MAX_FACTOR
                            } else {
                                SAFETY * err.powf(-PI_ALPHA) * err_prev.powf(PI_BETA)
                            };
                            factor = factor.clamp(MIN_FACTOR, MAX_FACTOR);
                            if last_rejected {
                                factor = factor.min(1.0);
                            }
                            err_prev = err.max(1e-4);
                            last_rejected = false;
                            let next = h * factor;
                            h_prop = if clipped { h_prop.max(next) } else { next };
                            t = if clipped { target } else { t + h };
                            let kept = st.compact(&[y_new, k7]);
                            z = kept[0];
                            k1 = kept[1];
                        } else {
                            st.stats.rejected += 1;
                            st.g.truncate(mark);
                            let factor = if err.is_finite() {
                                (SAFETY * err.powf(-0.2)).max(MIN_FACTOR)
                            } else {
                                MIN_FACTOR
                            };
                            h_prop = h * factor.min(1.0);
                            last_rejected = true;
                        }
                    }
                    emit(&st, z);
                }
            }
            SolverMethod::Rk4 => {
                for &target in times {
                    let interval = target - t;
                    if interval > 0.0 {
                        let n = (interval / cfg.step - 1e-9).ceil().max(1.0) as usize;
                        if st.stats.accepted + n > cfg.max_steps {
                            return Err(SolverError::Divergence {
                                max_steps: cfg.max_steps,
                                target,
                                reached: t,
                            }
                            .into());
                        }
                        let start = t;
                        for i in 0..n {
                            let t_next = if i + 1 == n {
                                target
                            } else {
                                start + interval * (i + 1) as f64 / n as f64
                            };
                            z = rk4_step(&mut st, t, z, t_next - t)?;
                            st.stats.accepted += 1;
                            if st.g.value(z).iter().any(|v| !v.is_finite()) {
                                return Err(SolverError::NonFinite { t: t_next }.into());
                            }
                            t = t_next;
                            z = st.compact(&[z])[0];
                        }
                    }
                    emit(&st, z);
                }
            }
        }
    } else {
        for _ in times {
            emit(&st, z);
        }
    }
    let stats = st.stats;
    let out = if detach {
        Outputs::Values(values)
    } else {
        Outputs::Vars(vars)
    };
    Ok((out, stats))
}

/// One Dormand-Prince attempt. Returns `None` when a stage went non-finite.
fn dopri5_step(st: &mut Stepper, t: f64, z: Var, k1: Var, h: f64) -> Result<Option<(Var, Var, f64)>> {
    let mut k = vec![k1];
    for s in 1..6 {
        let mut terms = vec![(z, 1.0)];
        terms.extend(A[s].iter().enumerate().map(|(j, a)| (k[j], h * a)));
        let y = st.g.lincomb(&terms)?;
        match st.f(t + C[s] * h, y) {
            Ok(v) => k.push(v),
            Err(Error::Numeric(_)) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    let mut terms = vec![(z, 1.0)];
    terms.extend(B.iter().enumerate().map(|(j, b)| (k[j], h * b)));
    let y_new = st.g.lincomb(&terms)?;
    if st.g.value(y_new).iter().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    let k7 = match st.f(t + h, y_new) {
        Ok(v) => v,
        Err(Error::Numeric(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    k.push(k7);
    let (y0, y1) = (st.g.value(z), st.g.value(y_new));
    let mut acc = 0.0;
    for i in 0..y0.len() {
        let mut e = 0.0;
        for (s, es) in E.iter().enumerate() {
            if *es != 0.0 {
                e += es * st.g.value(k[s])[i];
            }
        }
        let tol = st.atol + st.rtol * y0[i].abs().max(y1[i].abs());
        let r = h * e / tol;
        acc += r * r;
    }
    let err = (acc / y0.len().max(1) as f64).sqrt();
    Ok(Some((y_new, k7, if err.is_finite() { err } else { f64::INFINITY })))
}

fn rk4_step(st: &mut Stepper, t: f64, z: Var, h: f64) -> Result<Var> {
    let k1 = st.f(t, z)?;
    let y2 = st.g.lincomb(&[(z, 1.0), (k1, 0.5 * h)])?;
    let k2 = st.f(t + 0.5 * h, y2)?;
    let y3 = st.g.lincomb(&[(z, 1.0), (k2, 0.5 * h)])?;
    let k3 = st.f(t + 0.5 * h, y3)?;
    let y4 = st.g.lincomb(&[(z, 1.0), (k3, h)])?;
    let k4 = st.f(t + h, y4)?;
    st.g.lincomb(&[(z, 1.0), (k1, h / 6.0), (k2, h / 3.0), (k3, h / 3.0), (k4, h / 6.0)])
}
