//! Bijection between parameter sets and the sampler's unconstrained vector.
//!
//! Coordinates, in order: `T0` (S-1), each kernel row `T[a][s]` (S-1 each,
//! action-major), initial-regime locations (ordered), scales and dofs, then
//! the deterioration and repair groups (loc, scale, dof), then one
//! autoregressive coefficient per repair action.
//!
//! Simplex rows use centered stick-breaking, `z_k = logistic(y_k - ln(K-k-1))`,
//! so the uniform row maps to zero. Scales are `exp(u)`, dofs `2 + exp(u)`,
//! coefficients `logistic(u)`, and the initial locations are
//! `mu_0 = u_0, mu_i = mu_{i-1} - exp(u_i)` (strictly decreasing).

use maint_core::{Dims, ObservationModel, PomdpParams, StudentParams, TransitionModel};
use serde::{Deserialize, Serialize};

use crate::error::{InferenceError, Result};

/// Smallest simplex entry accepted by [`Layout::encode`].
pub const SIMPLEX_FLOOR: f64 = 1e-12;

/// Offset added to the unconstrained dof coordinate.
pub const DOF_SHIFT: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slice {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// Coordinate layout for a given number of states and actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub states: usize,
    pub actions: usize,
}

/// Gradient of a scalar with respect to the natural parameter coordinates:
/// log-probabilities for simplex entries, and loc/scale/dof/coefficient
/// values for the observation model.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalGrad {
    pub ln_initial: Vec<f64>,
    pub ln_kernel: Vec<Vec<Vec<f64>>>,
    /// `[d loc, d scale, d dof]` per state.
    pub initial: Vec<[f64; 3]>,
    pub deterioration: Vec<[f64; 3]>,
    pub repair: Vec<[f64; 3]>,
    pub ar: Vec<f64>,
}

impl NaturalGrad {
    pub fn zeros(dims: Dims) -> Self {
        let (s, a) = (dims.states, dims.actions);
        Self {
            ln_initial: vec![0.0; s],
            ln_kernel: vec![vec![vec![0.0; s]; s]; a],
            initial: vec![[0.0; 3]; s],
            deterioration: vec![[0.0; 3]; s],
            repair: vec![[0.0; 3]; s],
            ar: vec![0.0; a - 1],
        }
    }

    pub fn add_assign(&mut self, other: &NaturalGrad) {
        fn add(a: &mut [f64], b: &[f64]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        add(&mut self.ln_initial, &other.ln_initial);
        for (ra, rb) in self.ln_kernel.iter_mut().flatten().zip(other.ln_kernel.iter().flatten()) {
            add(ra, rb);
        }
        for (ga, gb) in [
            (&mut self.initial, &other.initial),
            (&mut self.deterioration, &other.deterioration),
            (&mut self.repair, &other.repair),
        ] {
            for (x, y) in ga.iter_mut().zip(gb.iter()) {
                add(x, y);
            }
        }
        add(&mut self.ar, &other.ar);
    }

    pub fn scale(&mut self, c: f64) {
        self.ln_initial.iter_mut().for_each(|x| *x *= c);
        self.ln_kernel.iter_mut().flatten().flatten().for_each(|x| *x *= c);
        for g in [&mut self.initial, &mut self.deterioration, &mut self.repair] {
            g.iter_mut().flatten().for_each(|x| *x *= c);
        }
        self.ar.iter_mut().for_each(|x| *x *= c);
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Log-probabilities of a stick-breaking row and its logistic break points.
fn stick_decode(y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = y.len() + 1;
    let mut ln_p = Vec::with_capacity(k);
    let mut zs = Vec::with_capacity(k - 1);
    let mut ln_rem = 0.0;
    for (j, yj) in y.iter().enumerate() {
        let x = yj - ((k - j - 1) as f64).ln();
        zs.push(logistic(x));
        ln_p.push(ln_rem - softplus(-x));
        ln_rem -= softplus(x);
    }
    ln_p.push(ln_rem);
    (ln_p, zs)
}

fn stick_encode(p: &[f64], out: &mut Vec<f64>) -> usize {
    let k = p.len();
    let mut clamped = 0;
    let mut q: Vec<f64> = p
        .iter()
        .map(|x| {
            if *x < SIMPLEX_FLOOR {
                clamped += 1;
                SIMPLEX_FLOOR
            } else {
                *x
            }
        })
        .collect();
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|x| *x /= total);
    // remaining stick computed as a suffix sum avoids subtractive cancellation
    let mut suffix = vec![0.0; k + 1];
    for j in (0..k).rev() {
        suffix[j] = suffix[j + 1] + q[j];
    }
    for j in 0..k - 1 {
        let z = q[j] / suffix[j];
        out.push(logit(z) + ((k - j - 1) as f64).ln());
    }
    clamped
}

/// Pull a gradient in log-probabilities back onto the stick-breaking inputs.
fn stick_pullback(g_ln_p: &[f64], zs: &[f64], out: &mut [f64]) {
    let mut tail: f64 = g_ln_p.iter().sum();
    for (j, z) in zs.iter().enumerate() {
        tail -= g_ln_p[j];
        out[j] += g_ln_p[j] * (1.0 - z) - z * tail;
    }
}

/// Result of decoding an unconstrained vector.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub params: PomdpParams,
    pub log_jacobian: f64,
    ln_initial: Vec<f64>,
    ln_kernel: Vec<Vec<Vec<f64>>>,
    sticks: Vec<Vec<f64>>,
}

impl Decoded {
    pub fn ln_initial(&self) -> &[f64] {
        &self.ln_initial
    }

    pub fn ln_kernel(&self) -> &[Vec<Vec<f64>>] {
        &self.ln_kernel
    }
}

impl Layout {
    pub fn new(dims: Dims) -> Self {
        Self { states: dims.states, actions: dims.actions }
    }

    pub fn dims(&self) -> Dims {
        Dims { states: self.states, actions: self.actions }
    }

    fn row_len(&self) -> usize {
        self.states - 1
    }

    pub fn kernel_start(&self, a: usize, s: usize) -> usize {
        self.row_len() * (1 + a * self.states + s)
    }

    fn obs_start(&self) -> usize {
        self.row_len() * (1 + self.actions * self.states)
    }

    /// Start of `(group, field)` where group 0/1/2 = initial/deterioration/repair
    /// and field 0/1/2 = loc/scale/dof.
    pub fn group_start(&self, group: usize, field: usize) -> usize {
        self.obs_start() + self.states * (3 * group + field)
    }

    pub fn ar_start(&self) -> usize {
        self.obs_start() + 9 * self.states
    }

    pub fn dim(&self) -> usize {
        self.ar_start() + self.actions - 1
    }

    pub fn slices(&self) -> Vec<Slice> {
        let mut out = vec![Slice { name: "T0".into(), start: 0, len: self.row_len() }];
        for a in 0..self.actions {
            for s in 0..self.states {
                out.push(Slice { name: format!("T[a{a}][s{s}]"), start: self.kernel_start(a, s), len: self.row_len() });
            }
        }
        for (g, group) in ["initial", "deterioration", "repair"].iter().enumerate() {
            for (f, field) in ["loc", "scale", "dof"].iter().enumerate() {
                out.push(Slice { name: format!("{group}.{field}"), start: self.group_start(g, f), len: self.states });
            }
        }
        out.push(Slice { name: "ar".into(), start: self.ar_start(), len: self.actions - 1 });
        out
    }

    pub fn decode(&self, u: &[f64]) -> Result<Decoded> {
        if u.len() != self.dim() {
            return Err(InferenceError::Decode(format!("vector has {} entries, layout needs {}", u.len(), self.dim())));
        }
        if let Some(i) = u.iter().position(|x| !x.is_finite()) {
            return Err(InferenceError::Decode(format!("coordinate {i} is not finite")));
        }
        let (s_count, rl) = (self.states, self.row_len());
        let mut log_jac = 0.0;
        let mut sticks = Vec::with_capacity(1 + self.actions * s_count);

        let mut row = |start: usize| {
            let (ln_p, zs) = stick_decode(&u[start..start + rl]);
            log_jac += ln_p.iter().sum::<f64>();
            sticks.push(zs);
            ln_p
        };
        let ln_initial = row(0);
        let ln_kernel: Vec<Vec<Vec<f64>>> =
            (0..self.actions).map(|a| (0..s_count).map(|s| row(self.kernel_start(a, s))).collect()).collect();

        let simplex = |ln_p: &[f64]| -> Vec<f64> {
            let p: Vec<f64> = ln_p.iter().map(|l| l.exp()).collect();
            let total: f64 = p.iter().sum();
            p.iter().map(|x| x / total).collect()
        };
        let initial = simplex(&ln_initial);
        let kernel = ln_kernel.iter().map(|rows| rows.iter().map(|r| simplex(r)).collect()).collect();

        let mut groups: Vec<Vec<StudentParams>> = Vec::with_capacity(3);
        for g in 0..3 {
            let loc_u = &u[self.group_start(g, 0)..self.group_start(g, 0) + s_count];
            let scale_u = &u[self.group_start(g, 1)..self.group_start(g, 1) + s_count];
            let dof_u = &u[self.group_start(g, 2)..self.group_start(g, 2) + s_count];
            let locs: Vec<f64> = if g == 0 {
                let mut m = Vec::with_capacity(s_count);
                m.push(loc_u[0]);
                for i in 1..s_count {
                    m.push(m[i - 1] - loc_u[i].exp());
                    log_jac += loc_u[i];
                }
                m
            } else {
                loc_u.to_vec()
            };
            let mut group = Vec::with_capacity(s_count);
            for i in 0..s_count {
                let scale = scale_u[i].exp();
                let dof = DOF_SHIFT + dof_u[i].exp();
                log_jac += scale_u[i] + dof_u[i];
                group.push(StudentParams::new(locs[i], scale, dof));
            }
            groups.push(group);
        }
        let ar: Vec<f64> = u[self.ar_start()..].iter().map(|x| logistic(*x)).collect();
        for x in &u[self.ar_start()..] {
            log_jac += -softplus(-x) - softplus(*x);
        }
        let repair = groups.pop().expect("three groups");
        let deterioration = groups.pop().expect("three groups");
        let initial_obs = groups.pop().expect("three groups");

        let params = PomdpParams {
            transition: TransitionModel { initial, kernel },
            observation: ObservationModel { initial: initial_obs, deterioration, repair, ar_coeff: ar },
        };
        let bad_value = |x: f64| !x.is_finite() || x <= 0.0;
        let obs = &params.observation;
        if obs.initial.iter().chain(&obs.deterioration).chain(&obs.repair).any(|p| bad_value(p.scale) || !p.dof.is_finite())
            || obs.initial.iter().any(|p| !p.loc.is_finite())
            || obs.initial.windows(2).any(|w| w[1].loc >= w[0].loc)
            || obs.ar_coeff.iter().any(|k| *k <= 0.0 || *k >= 1.0)
            || !log_jac.is_finite()
        {
            return Err(InferenceError::Decode("transform overflowed or underflowed".into()));
        }
        Ok(Decoded { params, log_jacobian: log_jac, ln_initial, ln_kernel, sticks })
    }

    /// Unconstrained coordinates of `theta`, with the number of simplex
    /// entries that had to be raised to [`SIMPLEX_FLOOR`].
    pub fn encode(&self, theta: &PomdpParams) -> Result<(Vec<f64>, usize)> {
        theta.validate()?;
        if theta.dims() != self.dims() {
            return Err(InferenceError::Incompatible(format!("parameters have {:?}, layout {:?}", theta.dims(), self.dims())));
        }
        let obs = &theta.observation;
        if obs.initial.windows(2).any(|w| w[1].loc >= w[0].loc) {
            return Err(InferenceError::Decode("initial-regime locations must be strictly decreasing".into()));
        }
        if obs.initial.iter().chain(&obs.deterioration).chain(&obs.repair).any(|p| p.dof <= DOF_SHIFT) {
            return Err(InferenceError::Decode(format!("degrees of freedom must exceed {DOF_SHIFT}")));
        }
        if obs.ar_coeff.iter().any(|k| *k <= 0.0 || *k >= 1.0) {
            return Err(InferenceError::Decode("autoregressive coefficients must lie in (0, 1)".into()));
        }
        let mut u = Vec::with_capacity(self.dim());
        let mut clamped = stick_encode(&theta.transition.initial, &mut u);
        for rows in &theta.transition.kernel {
            for r in rows {
                clamped += stick_encode(r, &mut u);
            }
        }
        for (g, group) in [&obs.initial, &obs.deterioration, &obs.repair].into_iter().enumerate() {
            if g == 0 {
                u.push(group[0].loc);
                for w in group.windows(2) {
                    u.push((w[0].loc - w[1].loc).ln());
                }
            } else {
                u.extend(group.iter().map(|p| p.loc));
            }
            u.extend(group.iter().map(|p| p.scale.ln()));
            u.extend(group.iter().map(|p| (p.dof - DOF_SHIFT).ln()));
        }
        u.extend(obs.ar_coeff.iter().map(|k| logit(*k)));
        Ok((u, clamped))
    }

    /// Gradient with respect to `u` of `f(decode(u)) + log|J(u)|`, given the
    /// natural-coordinate gradient of `f`.
    pub fn pullback(&self, u: &[f64], decoded: &Decoded, g: &NaturalGrad) -> Vec<f64> {
        let s_count = self.states;
        let mut out = vec![0.0; self.dim()];
        // the Jacobian of a stick-breaking row is the product of its entries
        let with_jac = |row: &[f64]| row.iter().map(|x| x + 1.0).collect::<Vec<f64>>();
        stick_pullback(&with_jac(&g.ln_initial), &decoded.sticks[0], &mut out[..s_count - 1]);
        for a in 0..self.actions {
            for s in 0..s_count {
                let start = self.kernel_start(a, s);
                stick_pullback(
                    &with_jac(&g.ln_kernel[a][s]),
                    &decoded.sticks[1 + a * s_count + s],
                    &mut out[start..start + s_count - 1],
                );
            }
        }
        let obs = &decoded.params.observation;
        for (gi, (group, grads)) in
            [(&obs.initial, &g.initial), (&obs.deterioration, &g.deterioration), (&obs.repair, &g.repair)].into_iter().enumerate()
        {
            let (l0, s0, d0) = (self.group_start(gi, 0), self.group_start(gi, 1), self.group_start(gi, 2));
            if gi == 0 {
                // mu_i = u_0 - sum_{j=1..i} exp(u_j)
                let mut suffix = 0.0;
                for i in (1..s_count).rev() {
                    suffix += grads[i][0];
                    out[l0 + i] = -u[l0 + i].exp() * suffix + 1.0;
                }
                out[l0] = suffix + grads[0][0];
            } else {
                for i in 0..s_count {
                    out[l0 + i] = grads[i][0];
                }
            }
            for i in 0..s_count {
                out[s0 + i] = grads[i][1] * group[i].scale + 1.0;
                out[d0 + i] = grads[i][2] * (group[i].dof - DOF_SHIFT) + 1.0;
            }
        }
        for (j, k) in obs.ar_coeff.iter().enumerate() {
            out[self.ar_start() + j] = g.ar[j] * k * (1.0 - k) + 1.0 - 2.0 * k;
        }
        out
    }

    /// Names of the flattened constrained coordinates (see [`flatten`]).
    pub fn constrained_names(&self) -> Vec<String> {
        let (s, a) = (self.states, self.actions);
        let mut names: Vec<String> = (0..s).map(|i| format!("T0[s{i}]")).collect();
        for ai in 0..a {
            for from in 0..s {
                for to in 0..s {
                    names.push(format!("T[a{ai}][s{from}][s{to}]"));
                }
            }
        }
        for group in ["initial", "deterioration", "repair"] {
            for field in ["loc", "scale", "dof"] {
                for i in 0..s {
                    names.push(format!("{group}.{field}[s{i}]"));
                }
            }
        }
        for ai in 1..a {
            names.push(format!("ar[a{ai}]"));
        }
        names
    }
}

/// Constrained parameters as one flat vector, in the order of
/// [`Layout::constrained_names`].
pub fn flatten(theta: &PomdpParams) -> Vec<f64> {
    let mut out = theta.transition.initial.clone();
    for row in theta.transition.kernel.iter().flatten() {
        out.extend_from_slice(row);
    }
    let obs = &theta.observation;
    for group in [&obs.initial, &obs.deterioration, &obs.repair] {
        out.extend(group.iter().map(|p| p.loc));
        out.extend(group.iter().map(|p| p.scale));
        out.extend(group.iter().map(|p| p.dof));
    }
    out.extend_from_slice(&obs.ar_coeff);
    out
}

pub fn constrained_dim(dims: Dims) -> usize {
    dims.states + dims.actions * dims.states * dims.states + 9 * dims.states + dims.actions - 1
}

/// Inverse of [`flatten`]; the result is not validated.
pub fn unflatten(dims: Dims, values: &[f64]) -> Result<PomdpParams> {
    if values.len() != constrained_dim(dims) {
        return Err(InferenceError::Incompatible(format!(
            "flat parameter vector has {} entries, expected {}",
            values.len(),
            constrained_dim(dims)
        )));
    }
    let s = dims.states;
    let mut it = values.iter().copied();
    let mut take = |n: usize| -> Vec<f64> { (&mut it).take(n).collect() };
    let initial = take(s);
    let kernel = (0..dims.actions).map(|_| (0..s).map(|_| take(s)).collect()).collect();
    let mut groups = Vec::with_capacity(3);
    for _ in 0..3 {
        let (loc, scale, dof) = (take(s), take(s), take(s));
        groups.push((0..s).map(|i| StudentParams::new(loc[i], scale[i], dof[i])).collect::<Vec<_>>());
    }
    let ar_coeff = take(dims.actions - 1);
    let repair = groups.pop().expect("three groups");
    let deterioration = groups.pop().expect("three groups");
    let initial_obs = groups.pop().expect("three groups");
    Ok(PomdpParams {
        transition: TransitionModel { initial, kernel },
        observation: ObservationModel { initial: initial_obs, deterioration, repair, ar_coeff },
    })
}
