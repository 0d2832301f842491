//! Path sampling for the probabilistic representation of the backward
//! equation.
//!
//! The process behind the semigroup is the continuous-time Markov chain
//! generated by half the form generator: holding rate
//! `r(z) = sum_y c(z,y) / (2 m(z))`, jump law proportional to `c(z, .)`.
//! Paths are jump paths. Sampling is counter-based: path i of a run with
//! master seed s draws from stream i of a ChaCha generator seeded with s,
//! so aggregates are bit-reproducible regardless of worker count.

use std::collections::HashMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::heat::{KernelMatrix, SpectralHeat};
use crate::potential::{Potential, PotentialKind};
use crate::space::{Field, Space};
use crate::timefield::TimeField;

/// Piecewise-constant jump path. `segments` holds `(entry_time, point)` in
/// increasing time order; the first entry time is the start time.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    pub start_time: f64,
    pub end_time: f64,
    pub segments: Vec<(f64, usize)>,
}

impl PathSample {
    pub fn state_at(&self, t: f64) -> usize {
        debug_assert!(t >= self.start_time - 1e-12 && t <= self.end_time + 1e-12);
        let idx = self.segments.partition_point(|&(entry, _)| entry <= t);
        self.segments[idx.saturating_sub(1)].1
    }

    pub fn end_state(&self) -> usize {
        self.segments.last().expect("paths are nonempty").1
    }

    pub fn jump_count(&self) -> usize {
        self.segments.len() - 1
    }

    /// Checks monotone times and that consecutive states share an edge.
    pub fn is_consistent(&self, s: &Space) -> bool {
        self.segments.windows(2).all(|w| {
            let ((t0, a), (t1, b)) = (w[0], w[1]);
            t1 > t0 && s.conductance()[(a, b)] > 0.0
        })
    }
}

/// Monte Carlo estimate with its sampling error.
#[derive(Clone, Copy, Debug)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub seed: u64,
}

fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Deterministic pairwise summation, independent of thread count.
fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    // path-independent functionals give bitwise-identical values; their
    // sample deviation is exactly zero, not mean-rounding noise
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let mean = pairwise_sum(values) / n as f64;
    let sq: Vec<f64> = values.iter().map(|&v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

fn holding_rates(s: &Space) -> Vec<f64> {
    (0..s.n())
        .map(|x| {
            let total: f64 = s.neighbors(x).iter().map(|&(_, c)| c).sum();
            total / (2.0 * s.measure()[x])
        })
        .collect()
}

fn sample_path_with_rng(
    s: &Space,
    rates: &[f64],
    t: f64,
    x: usize,
    end: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PathSample> {
    let span = end - t;
    let max_rate = rates.iter().copied().fold(0.0, f64::max);
    let budget = (50.0 * span * max_rate) as usize + 1000;
    let mut segments = vec![(t, x)];
    let mut now = t;
    let mut here = x;
    loop {
        let rate = rates[here];
        if rate <= 0.0 {
            break; // isolated point: invalid space, but do not spin
        }
        let u: f64 = 1.0 - rng.gen::<f64>(); // in (0, 1]
        now += -u.ln() / rate;
        if now >= end {
            break;
        }
        // jump proportional to conductance
        let total: f64 = s.neighbors(here).iter().map(|&(_, c)| c).sum();
        let mut draw = rng.gen::<f64>() * total;
        let mut next = s.neighbors(here).last().expect("connected").0;
        for &(y, c) in s.neighbors(here) {
            if draw < c {
                next = y;
                break;
            }
            draw -= c;
        }
        here = next;
        segments.push((now, here));
        if segments.len() > budget {
            return Err(CoreError::InvalidArgument(
                "path sampling exceeded its event budget".into(),
            ));
        }
    }
    Ok(PathSample { start_time: t, end_time: end, segments })
}

/// One chain path from `(t, x)` to time 0, deterministic in the seed.
pub fn sample_ctmc_path(s: &Space, t: f64, x: usize, seed: u64) -> Result<PathSample> {
    if !(t < 0.0) {
        return Err(CoreError::InvalidArgument(format!("need t < 0, got {t}")));
    }
    if x >= s.n() {
        return Err(CoreError::InvalidArgument(format!("point {x} out of range")));
    }
    let rates = holding_rates(s);
    sample_path_with_rng(s, &rates, t, x, 0.0, &mut path_rng(seed, 0))
}

/// Integral of the potential along a jump path; exact in space, exact in
/// time for constant potentials, composite Simpson per holding interval
/// otherwise.
pub fn path_potential_integral(potential: &Potential, path: &PathSample) -> f64 {
    if let PotentialKind::Constant(c) = potential.kind() {
        return c * (path.end_time - path.start_time);
    }
    let mut total = 0.0;
    for (i, &(entry, point)) in path.segments.iter().enumerate() {
        let exit = path
            .segments
            .get(i + 1)
            .map(|&(s, _)| s)
            .unwrap_or(path.end_time);
        total += simpson(|tau| potential.eval(tau, point), entry, exit);
    }
    total
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let len = b - a;
    if len <= 0.0 {
        return 0.0;
    }
    let panels = ((len / 0.02).ceil() as usize).max(1);
    let h = len / (2 * panels) as f64;
    let mut acc = f(a) + f(b);
    for k in 1..2 * panels {
        let weight = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += weight * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

/// Path-expectation estimator of the backward solution at `(t, x)`:
/// the mean of `exp(int F along path) * w0(endpoint)` over `n` paths.
pub fn feynman_kac_estimate(
    s: &Space,
    potential: &Potential,
    w0: &Field,
    t: f64,
    x: usize,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    s.check_field(w0)?;
    if !(t < 0.0) {
        return Err(CoreError::InvalidArgument(format!("need t < 0, got {t}")));
    }
    if n < 2 {
        return Err(CoreError::InvalidArgument("need at least 2 samples".into()));
    }
    let rates = holding_rates(s);
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            let path = sample_path_with_rng(s, &rates, t, x, 0.0, &mut rng)
                .expect("event budget is generous");
            path_potential_integral(potential, &path).exp() * w0.get(path.end_state())
        })
        .collect();
    let (mean, stderr) = mean_and_stderr(&values);
    Ok(McEstimate { mean, stderr, n_samples: n, seed })
}

/// Discretized path integral: `n_slices` alternating steps of kernel
/// transport over `|t|/n` and multiplication by `exp((|t|/n) F)`, with the
/// kernel outermost. First-order accurate in `1/n_slices`.
pub fn trotter_product(
    s: &Space,
    potential: &Potential,
    w0: &Field,
    t: f64,
    n_slices: usize,
) -> Result<Field> {
    s.check_field(w0)?;
    if !(t < 0.0) {
        return Err(CoreError::InvalidArgument(format!("need t < 0, got {t}")));
    }
    if n_slices == 0 {
        return Err(CoreError::InvalidArgument("need at least one slice".into()));
    }
    let delta = -t / n_slices as f64;
    let heat = SpectralHeat::new(s);
    let kernel = heat.kernel(delta)?;
    let mut v = w0.clone();
    for j in (1..=n_slices).rev() {
        let tau = t * (1.0 - j as f64 / n_slices as f64);
        let multiplier = potential.frame(s.n(), tau).map(|f| (delta * f).exp());
        v = kernel.apply(&multiplier.mul(&v));
    }
    Ok(v)
}

/// Endpoint-conditioned path sampler.
///
/// A bridge over `[t, send]` is refined dyadically: the midpoint state is
/// drawn from the exact kernel-ratio conditional, slices with equal
/// endpoints terminate early with the exact no-event probability, and the
/// event-count bookkeeping of the halves follows the conditioned
/// decomposition, so all dyadic-time marginals carry the exact bridge law.
/// Jump times are quantized to `span * 2^-16`.
pub struct BridgeSampler<'a> {
    space: &'a Space,
    heat: SpectralHeat,
    rates: Vec<f64>,
    kernels: HashMap<u64, KernelMatrix>,
}

const BRIDGE_DEPTH: u32 = 16;
const BRIDGE_HARD_DEPTH: u32 = 48;

impl<'a> BridgeSampler<'a> {
    pub fn new(space: &'a Space) -> Self {
        Self {
            space,
            heat: SpectralHeat::new(space),
            rates: holding_rates(space),
            kernels: HashMap::new(),
        }
    }

    fn kernel(&mut self, h: f64) -> Result<&KernelMatrix> {
        let key = h.to_bits();
        if !self.kernels.contains_key(&key) {
            let k = self.heat.kernel(h)?;
            self.kernels.insert(key, k);
        }
        Ok(&self.kernels[&key])
    }

    /// Draws one bridge path from `(t, x)` to `(send, y)`.
    pub fn sample(
        &mut self,
        t: f64,
        x: usize,
        send: f64,
        y: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<PathSample> {
        if !(t < send && send <= 0.0) {
            return Err(CoreError::InvalidArgument(format!(
                "need t < send <= 0, got t = {t}, send = {send}"
            )));
        }
        let span = send - t;
        let p_end = self.kernel(span)?.get(x, y);
        if p_end <= 0.0 {
            return Err(CoreError::ZeroProbabilityEndpoint { x, y, h: span, value: p_end });
        }
        let mut jumps: Vec<(f64, usize)> = Vec::new();
        self.refine(x, y, t, span, false, 0, &mut jumps, rng)?;
        let mut segments = vec![(t, x)];
        segments.extend(jumps);
        Ok(PathSample { start_time: t, end_time: send, segments })
    }

    /// Recursive slice refinement; returns whether the slice contains any
    /// event. `force_event` conditions an equal-endpoint slice on holding
    /// at least one jump.
    #[allow(clippy::too_many_arguments)]
    fn refine(
        &mut self,
        a: usize,
        b: usize,
        t0: f64,
        delta: f64,
        force_event: bool,
        depth: u32,
        jumps: &mut Vec<(f64, usize)>,
        rng: &mut ChaCha8Rng,
    ) -> Result<bool> {
        if depth >= BRIDGE_HARD_DEPTH {
            return Err(CoreError::InvalidArgument(
                "bridge refinement exceeded its depth budget".into(),
            ));
        }
        let no_event_prob = if a == b {
            let p = (-self.rates[a] * delta).exp() / self.kernel(delta)?.get(a, a);
            p.min(1.0)
        } else {
            0.0
        };
        if a == b && !force_event && rng.gen::<f64>() < no_event_prob {
            return Ok(false);
        }
        let at_resolution = depth >= BRIDGE_DEPTH;
        if at_resolution {
            if a == b {
                // unresolved excursion below the resolution floor
                return Ok(true);
            }
            if self.space.conductance()[(a, b)] > 0.0 {
                jumps.push((t0 + delta / 2.0, b));
                return Ok(true);
            }
            // a multi-jump transition squeezed below the floor: keep halving
        }

        // midpoint from the kernel-ratio law, minus the no-event mass when
        // the slice is conditioned on containing an event
        let half = delta / 2.0;
        let n = self.space.n();
        let mut weights = vec![0.0_f64; n];
        {
            let k_half = self.kernel(half)?;
            for (z, w) in weights.iter_mut().enumerate() {
                *w = k_half.get(a, z) * k_half.get(z, b);
            }
        }
        if a == b {
            weights[a] = (weights[a] - (-self.rates[a] * delta).exp()).max(0.0);
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(CoreError::InvalidArgument(
                "degenerate midpoint law in bridge refinement".into(),
            ));
        }
        let mut draw = rng.gen::<f64>() * total;
        let mut z = n - 1;
        for (idx, &w) in weights.iter().enumerate() {
            if draw < w {
                z = idx;
                break;
            }
            draw -= w;
        }

        let mid = t0 + half;
        if a == b && z == a {
            // both halves are equal-endpoint slices; place the promised
            // events by the conditioned two-sided decomposition
            let q = ((-self.rates[a] * half).exp() / self.kernel(half)?.get(a, a)).min(1.0);
            let w_left_only = (1.0 - q) * q;
            let w_right_only = q * (1.0 - q);
            let w_both = (1.0 - q) * (1.0 - q);
            let mut pick = rng.gen::<f64>() * (w_left_only + w_right_only + w_both);
            if pick < w_left_only {
                self.refine(a, z, t0, half, true, depth + 1, jumps, rng)?;
            } else {
                pick -= w_left_only;
                if pick < w_right_only {
                    self.refine(z, b, mid, half, true, depth + 1, jumps, rng)?;
                } else {
                    self.refine(a, z, t0, half, true, depth + 1, jumps, rng)?;
                    self.refine(z, b, mid, half, true, depth + 1, jumps, rng)?;
                }
            }
            Ok(true)
        } else {
            let left = self.refine(a, z, t0, half, false, depth + 1, jumps, rng)?;
            let right = self.refine(z, b, mid, half, false, depth + 1, jumps, rng)?;
            Ok(left || right || force_event)
        }
    }
}

/// One bridge path, deterministic in the seed.
pub fn sample_bridge_path(
    s: &Space,
    t: f64,
    x: usize,
    send: f64,
    y: usize,
    seed: u64,
) -> Result<PathSample> {
    BridgeSampler::new(s).sample(t, x, send, y, &mut path_rng(seed, 0))
}

/// Bridge-decomposed estimator of the conjugate flow value
/// `f(G, t, x) = (1/w(t,x)) sum_y G(y) w(send,y) p(x,y) E_bridge[exp(int F)]`,
/// with `n` bridge draws per endpoint y (stratified) and the error
/// propagated through the weighted sum.
#[allow(clippy::too_many_arguments)]
pub fn bridge_feynman_kac(
    s: &Space,
    potential: &Potential,
    w: &TimeField,
    g: &Field,
    t: f64,
    x: usize,
    send: f64,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    s.check_field(g)?;
    if !(t < send && send <= 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "need t < send <= 0, got t = {t}, send = {send}"
        )));
    }
    if n < 2 {
        return Err(CoreError::InvalidArgument("need at least 2 samples per endpoint".into()));
    }
    let w_t_x = w.value_at(t, x)?;
    if w_t_x <= 0.0 {
        return Err(CoreError::NonPositiveFrame { time: t, point: x, value: w_t_x });
    }
    let w_send = w.frame_at(send)?;
    let span_kernel = SpectralHeat::new(s).kernel(send - t)?;

    let per_endpoint: Vec<(f64, f64, f64)> = (0..s.n())
        .into_par_iter()
        .map(|y| -> Result<(f64, f64, f64)> {
            let coef = g.get(y) * w_send.get(y) * span_kernel.get(x, y) / w_t_x;
            if coef == 0.0 {
                return Ok((0.0, 0.0, 0.0));
            }
            let mut sampler = BridgeSampler::new(s);
            let values: Vec<f64> = (0..n)
                .map(|i| {
                    let mut rng = path_rng(seed, (y * n + i) as u64);
                    let path = sampler.sample(t, x, send, y, &mut rng)?;
                    Ok(path_potential_integral(potential, &path).exp())
                })
                .collect::<Result<Vec<f64>>>()?;
            let (mean, stderr) = mean_and_stderr(&values);
            Ok((coef, mean, stderr))
        })
        .collect::<Result<Vec<_>>>()?;

    let mean = pairwise_sum(&per_endpoint.iter().map(|&(c, m, _)| c * m).collect::<Vec<_>>());
    let var = pairwise_sum(
        &per_endpoint.iter().map(|&(c, _, e)| (c * e) * (c * e)).collect::<Vec<_>>(),
    );
    Ok(McEstimate { mean, stderr: var.sqrt(), n_samples: n, seed })
}
