//! Convex inner approximation of the energy-efficiency problem around a
//! linearization point.
//!
//! All channels are divided by the receiver noise amplitude, so every SINR
//! denominator is `1 + interference`, and rates are in bit/s/Hz. Per SINR
//! the program carries a slack pair `(t, beta)` with
//!
//! * `1 + sum |g^H w_j|^2 <= beta` (convex quadratic, as a rotated SOC),
//! * `2 Re{a^* g^H w} - |a|^2 >= (b/(2 t)) t'^2 + (t/(2 b)) beta^2` where
//!   `a = g^H w_bar`, `t = t_bar`, `b = beta_bar`; the left side is the
//!   tangent of `|g^H w|^2` and the right side majorizes `t' beta`,
//! * `xi <= log2(1 + t)` via an exponential cone.

use num_complex::Complex64;

use crate::conic::{Affine, ConeKind, ConicProgram};
use crate::grouping::GroupingResult;
use crate::optimizer::QosPartition;
use crate::rates::{self, BeamformerSet, Stream};
use crate::scenario::Scenario;

const LN_2: f64 = std::f64::consts::LN_2;

/// Point around which the non-convex SINR constraints are linearized.
/// Slack values are in units of the receiver noise power.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub beams: BeamformerSet,
    pub t_p: Vec<f64>,
    pub beta_p: Vec<f64>,
    /// Shared over all decoders of the message.
    pub t_c: Vec<f64>,
    /// `beta_c[k][n]` belongs to decoder `grouping.decoded_by(k)[n]`.
    pub beta_c: Vec<Vec<f64>>,
    /// Number of slack entries raised to the floor.
    pub floored: usize,
}

impl Linearization {
    /// Exact SINRs and denominators at `beams`, floored at `floor`.
    pub fn at(scenario: &Scenario, grouping: &GroupingResult, beams: &BeamformerSet, floor: f64) -> Self {
        let k = scenario.n_users();
        let mut floored = 0;
        let mut clamp = |v: f64| {
            if v < floor || !v.is_finite() {
                floored += 1;
                floor
            } else {
                v
            }
        };
        let mut t_p = vec![0.0; k];
        let mut beta_p = vec![0.0; k];
        let mut t_c = vec![0.0; k];
        let mut beta_c = Vec::with_capacity(k);
        for u in 0..k {
            let noise = scenario.noise_w()[u];
            if beams.private_active(u) {
                let p = rates::private_sinr_parts(scenario, beams, grouping, u);
                t_p[u] = clamp(p.sinr());
                beta_p[u] = clamp(p.denominator / noise);
            }
            let mut betas = Vec::new();
            let mut t_min = f64::INFINITY;
            for &rx in grouping.decoded_by(u) {
                let p = rates::common_sinr_parts(scenario, beams, grouping, rx, u)
                    .expect("decoded_by and decodes are dual");
                t_min = t_min.min(p.sinr());
                betas.push(clamp(p.denominator / scenario.noise_w()[rx]));
            }
            t_c[u] = clamp(t_min);
            beta_c.push(betas);
        }
        Linearization {
            beams: beams.clone(),
            t_p,
            beta_p,
            t_c,
            beta_c,
            floored,
        }
    }
}

/// Objective of the emitted program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SubproblemObjective {
    /// Maximize `sum xi - lambda * sum ||w||^2` with the QoS equalities;
    /// `lambda` in (bit/s/Hz)/W.
    Dinkelbach { lambda: f64 },
    /// Maximize `s` subject to `xi_p + xi_c >= s * R_k`, `s <= cap`.
    Feasibility { cap: f64 },
}

/// Index of every variable block in the decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VarLayout {
    pub n_tx: usize,
    pub w_p: Vec<Option<usize>>,
    pub w_c: Vec<usize>,
    pub xi_p: Vec<Option<usize>>,
    pub t_p: Vec<Option<usize>>,
    pub beta_p: Vec<Option<usize>>,
    pub xi_c: Vec<usize>,
    pub t_c: Vec<usize>,
    pub beta_c: Vec<Vec<usize>>,
    pub qos_scale: Option<usize>,
    pub n_vars: usize,
}

impl VarLayout {
    fn new(grouping: &GroupingResult, partition: &QosPartition, n_tx: usize, feasibility: bool) -> Self {
        let k = grouping.n_users();
        let mut next = 0;
        let mut alloc = |n: usize| {
            let at = next;
            next += n;
            at
        };
        let mut w_p = vec![None; k];
        let mut w_c = vec![0; k];
        for u in 0..k {
            if partition.is_hd(u) {
                w_p[u] = Some(alloc(2 * n_tx));
            }
            w_c[u] = alloc(2 * n_tx);
        }
        let mut xi_p = vec![None; k];
        let mut t_p = vec![None; k];
        let mut beta_p = vec![None; k];
        let mut xi_c = vec![0; k];
        let mut t_c = vec![0; k];
        let mut beta_c = Vec::with_capacity(k);
        for u in 0..k {
            if partition.is_hd(u) {
                xi_p[u] = Some(alloc(1));
                t_p[u] = Some(alloc(1));
                beta_p[u] = Some(alloc(1));
            }
            xi_c[u] = alloc(1);
            t_c[u] = alloc(1);
            beta_c.push(grouping.decoded_by(u).iter().map(|_| alloc(1)).collect());
        }
        let qos_scale = feasibility.then(|| alloc(1));
        VarLayout {
            n_tx,
            w_p,
            w_c,
            xi_p,
            t_p,
            beta_p,
            xi_c,
            t_c,
            beta_c,
            qos_scale,
            n_vars: next,
        }
    }

    fn beam_start(&self, s: Stream) -> Option<usize> {
        match s {
            Stream::Private(k) => self.w_p[k],
            Stream::Common(k) => Some(self.w_c[k]),
        }
    }

    fn beam_vars(&self) -> impl Iterator<Item = usize> + '_ {
        let n = 2 * self.n_tx;
        self.w_p
            .iter()
            .flatten()
            .chain(self.w_c.iter())
            .flat_map(move |&s| s..s + n)
    }

    /// Packs a beamformer set (plus zeros elsewhere) into a decision vector.
    pub fn pack_beams(&self, beams: &BeamformerSet, x: &mut [f64]) {
        let n = self.n_tx;
        let mut put = |start: usize, w: &[Complex64]| {
            for (i, z) in w.iter().enumerate() {
                x[start + i] = z.re;
                x[start + n + i] = z.im;
            }
        };
        for u in 0..self.w_c.len() {
            if let Some(s) = self.w_p[u] {
                put(s, beams.private(u));
            }
            put(self.w_c[u], beams.common(u));
        }
    }

    pub fn unpack_beams(&self, x: &[f64]) -> BeamformerSet {
        let n = self.n_tx;
        let k = self.w_c.len();
        let get = |start: usize| -> Vec<Complex64> {
            (0..n).map(|i| Complex64::new(x[start + i], x[start + n + i])).collect()
        };
        let mut beams = BeamformerSet::zeros(k, n);
        for u in 0..k {
            match self.w_p[u] {
                Some(s) => beams.set_private(u, get(s)),
                None => beams.deactivate_private(u),
            }
            beams.set_common(u, get(self.w_c[u]));
        }
        beams
    }
}

/// An emitted convex subproblem.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub program: ConicProgram,
    pub layout: VarLayout,
    /// Slack entries floored while forming the linearization point.
    pub floored: usize,
}

/// `Re` and `Im` of `g^H w` as affine functions of the beam block at `start`.
fn inner_product_rows(g: &[Complex64], start: usize) -> (Affine, Affine) {
    let n = g.len();
    let mut re = Affine::default();
    let mut im = Affine::default();
    for (i, z) in g.iter().enumerate() {
        re.add_term(start + i, z.re).add_term(start + n + i, z.im);
        im.add_term(start + i, -z.im).add_term(start + n + i, z.re);
    }
    (re, im)
}

/// `||rows||^2 <= lhs` as the SOC `(lhs + c, 2 sqrt(c) rows, lhs - c)`.
fn rotated_soc(lhs: &Affine, rows: Vec<Affine>, c: f64) -> Vec<Affine> {
    let f = 2.0 * c.sqrt();
    let mut out = Vec::with_capacity(rows.len() + 2);
    out.push(lhs.plus(&Affine::constant(c)));
    out.extend(rows.iter().map(|r| r.scaled(f)));
    out.push(lhs.plus(&Affine::constant(-c)));
    out
}

struct Emitter<'a> {
    scenario: &'a Scenario,
    layout: &'a VarLayout,
    program: ConicProgram,
}

impl Emitter<'_> {
    fn normalized_channel(&self, rx: usize) -> Vec<Complex64> {
        let s = self.scenario.noise_w()[rx].sqrt();
        self.scenario.channel().column(rx).iter().map(|z| z / s).collect()
    }

    /// `1 + sum_j |g^H w_j|^2 <= beta`.
    fn interference(&mut self, g: &[Complex64], interferers: &[Stream], beta: usize, beta_bar: f64) {
        let mut rows = Vec::with_capacity(2 * interferers.len());
        for &s in interferers {
            if let Some(start) = self.layout.beam_start(s) {
                let (re, im) = inner_product_rows(g, start);
                rows.push(re);
                rows.push(im);
            }
        }
        let mut lhs = Affine::var(beta, 1.0);
        lhs.constant = -1.0;
        let c = (beta_bar - 1.0).max(1e-6);
        self.program.push(ConeKind::SecondOrder, rotated_soc(&lhs, rows, c));
    }

    /// Tangent of `|g^H w|^2` at `w_bar` bounds the AM-GM majorant of `t * beta`.
    #[allow(clippy::too_many_arguments)]
    fn signal(&mut self, g: &[Complex64], w_bar: &[Complex64], start: usize, t: usize, beta: usize, t_bar: f64, beta_bar: f64) {
        let a: Complex64 = g.iter().zip(w_bar).map(|(x, y)| x.conj() * y).sum();
        let (re, im) = inner_product_rows(g, start);
        let mut lin = re.scaled(2.0 * a.re).plus(&im.scaled(2.0 * a.im));
        lin.constant -= a.norm_sqr();
        let ratio = beta_bar / t_bar;
        let rows = vec![
            Affine::var(t, (ratio / 2.0).sqrt()),
            Affine::var(beta, (1.0 / (2.0 * ratio)).sqrt()),
        ];
        let c = (t_bar * beta_bar).max(1e-12);
        self.program.push(ConeKind::SecondOrder, rotated_soc(&lin, rows, c));
    }

    /// `xi <= log2(1 + t)`.
    fn rate_cap(&mut self, xi: usize, t: usize) {
        let mut z = Affine::constant(1.0);
        z.add_term(t, 1.0);
        self.program.push(
            ConeKind::Exponential,
            vec![Affine::var(xi, LN_2), Affine::constant(1.0), z],
        );
    }
}

/// Emits the convex subproblem around `point`.
///
/// The QoS targets come from the scenario's rate tiers and `partition`;
/// users outside `H` carry no private beam. `p_avail_w` bounds the total
/// transmit power.
pub fn build_convex_subproblem(
    scenario: &Scenario,
    grouping: &GroupingResult,
    point: &Linearization,
    objective: SubproblemObjective,
    partition: &QosPartition,
    p_avail_w: f64,
) -> Subproblem {
    let cfg = scenario.config();
    let k = scenario.n_users();
    let feasibility = matches!(objective, SubproblemObjective::Feasibility { .. });
    let layout = VarLayout::new(grouping, partition, scenario.n_tx(), feasibility);
    let mut em = Emitter {
        scenario,
        layout: &layout,
        program: ConicProgram::new(layout.n_vars),
    };
    let beams = &point.beams;

    // objective
    match objective {
        SubproblemObjective::Dinkelbach { lambda } => {
            for v in layout.beam_vars() {
                em.program.p_diag[v] = 2.0 * lambda;
            }
            for u in 0..k {
                if let Some(x) = layout.xi_p[u] {
                    em.program.q[x] = -1.0;
                }
                em.program.q[layout.xi_c[u]] = -1.0;
            }
        }
        SubproblemObjective::Feasibility { cap } => {
            let s = layout.qos_scale.expect("feasibility layout");
            em.program.q[s] = -1.0;
            let mut row = Affine::constant(cap);
            row.add_term(s, -1.0);
            em.program.push(ConeKind::Nonnegative, vec![row]);
        }
    }

    // QoS tiers
    let mut qos_rows = Vec::with_capacity(k);
    for u in 0..k {
        let target = partition.target_bps(u, cfg) / cfg.bandwidth_hz;
        let mut row = Affine::var(layout.xi_c[u], 1.0);
        if let Some(x) = layout.xi_p[u] {
            row.add_term(x, 1.0);
        }
        match layout.qos_scale {
            Some(s) => {
                row.add_term(s, -target);
            }
            None => row.constant = -target,
        }
        qos_rows.push(row);
    }
    let qos_kind = if feasibility {
        ConeKind::Nonnegative
    } else {
        ConeKind::Zero
    };
    em.program.push(qos_kind, qos_rows);

    // sign constraints on rates and SINR slacks
    let mut nonneg = Vec::new();
    for u in 0..k {
        for v in [layout.xi_p[u], layout.t_p[u]].into_iter().flatten() {
            nonneg.push(Affine::var(v, 1.0));
        }
        nonneg.push(Affine::var(layout.xi_c[u], 1.0));
        nonneg.push(Affine::var(layout.t_c[u], 1.0));
    }
    em.program.push(ConeKind::Nonnegative, nonneg);

    for u in 0..k {
        // private stream
        if let (Some(w), Some(xi), Some(t), Some(beta)) =
            (layout.w_p[u], layout.xi_p[u], layout.t_p[u], layout.beta_p[u])
        {
            let g = em.normalized_channel(u);
            em.rate_cap(xi, t);
            let interferers = rates::private_interferers(beams, grouping, u);
            em.interference(&g, &interferers, beta, point.beta_p[u]);
            em.signal(&g, beams.private(u), w, t, beta, point.t_p[u], point.beta_p[u]);
        }

        // common stream, once per decoder
        em.rate_cap(layout.xi_c[u], layout.t_c[u]);
        for (n, &rx) in grouping.decoded_by(u).iter().enumerate() {
            let g = em.normalized_channel(rx);
            let beta = layout.beta_c[u][n];
            let interferers = rates::common_interferers(beams, grouping, rx, u)
                .expect("decoded_by and decodes are dual");
            em.interference(&g, &interferers, beta, point.beta_c[u][n]);
            em.signal(
                &g,
                beams.common(u),
                layout.w_c[u],
                layout.t_c[u],
                beta,
                point.t_c[u],
                point.beta_c[u][n],
            );
        }
    }

    // power budget: ||w|| <= sqrt(P_avail)
    let mut power = vec![Affine::constant(p_avail_w.sqrt())];
    power.extend(layout.beam_vars().map(|v| Affine::var(v, 1.0)));
    em.program.push(ConeKind::SecondOrder, power);

    Subproblem {
        program: em.program,
        layout,
        floored: point.floored,
    }
}

/// Decision vector holding `point` itself: its beams, the slacks of the
/// linearization and the given rates (bit/s/Hz).
pub fn point_vector(
    sub: &Subproblem,
    point: &Linearization,
    xi_p: &[f64],
    xi_c: &[f64],
    qos_scale: f64,
) -> Vec<f64> {
    let l = &sub.layout;
    let mut x = vec![0.0; l.n_vars];
    l.pack_beams(&point.beams, &mut x);
    for u in 0..l.w_c.len() {
        if let (Some(a), Some(b), Some(c)) = (l.xi_p[u], l.t_p[u], l.beta_p[u]) {
            x[a] = xi_p[u];
            x[b] = point.t_p[u];
            x[c] = point.beta_p[u];
        }
        x[l.xi_c[u]] = xi_c[u];
        x[l.t_c[u]] = point.t_c[u];
        for (n, &v) in l.beta_c[u].iter().enumerate() {
            x[v] = point.beta_c[u][n];
        }
    }
    if let Some(s) = l.qos_scale {
        x[s] = qos_scale;
    }
    x
}
