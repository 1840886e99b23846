//! Solver-agnostic description of a convex conic program and the
//! [`ConicSolver`] interface the optimizer uses to solve it.
//!
//! A program is
//!
//! ```text
//! minimize    ½ xᵀ P x + qᵀ x
//! subject to  s_c = A_c x + b_c ∈ K_c   for every cone block c
//! ```
//!
//! with `K_c` one of: the zero cone, the nonnegative orthant, a second-order
//! cone `{(s0, s1..) : ||s1..|| <= s0}` or the exponential cone
//! `{(x, y, z) : y exp(x / y) <= z, y > 0}`.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

/// Sparse affine function of the decision vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Affine {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(idx: usize, coef: f64) -> Self {
        Affine {
            terms: vec![(idx, coef)],
            constant: 0.0,
        }
    }

    pub fn add_term(&mut self, idx: usize, coef: f64) -> &mut Self {
        if coef != 0.0 {
            self.terms.push((idx, coef));
        }
        self
    }

    pub fn scaled(&self, f: f64) -> Self {
        Affine {
            terms: self.terms.iter().map(|&(i, c)| (i, c * f)).collect(),
            constant: self.constant * f,
        }
    }

    pub fn plus(&self, other: &Affine) -> Self {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        Affine {
            terms,
            constant: self.constant + other.constant,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    Zero,
    Nonnegative,
    SecondOrder,
    Exponential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeBlock {
    pub kind: ConeKind,
    pub rows: Vec<Affine>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProgram {
    pub n_vars: usize,
    /// Diagonal of `P`.
    pub p_diag: Vec<f64>,
    pub q: Vec<f64>,
    pub blocks: Vec<ConeBlock>,
}

impl ConicProgram {
    pub fn new(n_vars: usize) -> Self {
        ConicProgram {
            n_vars,
            p_diag: vec![0.0; n_vars],
            q: vec![0.0; n_vars],
            blocks: Vec::new(),
        }
    }

    pub fn push(&mut self, kind: ConeKind, rows: Vec<Affine>) {
        debug_assert!(kind != ConeKind::Exponential || rows.len() == 3);
        if !rows.is_empty() {
            self.blocks.push(ConeBlock { kind, rows });
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.p_diag)
            .zip(&self.q)
            .map(|((xi, p), q)| 0.5 * p * xi * xi + q * xi)
            .sum()
    }

    /// Largest cone-membership violation at `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let s: Vec<f64> = b.rows.iter().map(|r| r.eval(x)).collect();
                match b.kind {
                    ConeKind::Zero => s.iter().fold(0.0, |m, v| f64::max(m, v.abs())),
                    ConeKind::Nonnegative => s.iter().fold(0.0, |m, v| f64::max(m, -v)),
                    ConeKind::SecondOrder => {
                        let tail = s[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
                        (tail - s[0]).max(0.0)
                    }
                    ConeKind::Exponential => {
                        let (a, y, z) = (s[0], s[1], s[2]);
                        if y <= 0.0 {
                            f64::INFINITY
                        } else {
                            (y * (a / y).exp() - z).max(0.0)
                        }
                    }
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn n_rows(&self) -> usize {
        self.blocks.iter().map(|b| b.rows.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConicStatus {
    Solved,
    /// Solved to reduced accuracy.
    AlmostSolved,
    Infeasible,
    Failed,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: ConicStatus,
    pub detail: String,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: u32,
}

pub trait ConicSolver {
    fn solve(&self, program: &ConicProgram) -> ConicSolution;
}

/// Interior-point backend.
#[derive(Debug, Clone)]
pub struct ClarabelSolver {
    pub tol_gap: f64,
    pub max_iter: u32,
}

impl Default for ClarabelSolver {
    fn default() -> Self {
        ClarabelSolver {
            tol_gap: 1e-8,
            max_iter: 200,
        }
    }
}

impl ConicSolver for ClarabelSolver {
    fn solve(&self, program: &ConicProgram) -> ConicSolution {
        let n = program.n_vars;

        let mut pi = Vec::new();
        let mut pj = Vec::new();
        let mut pv = Vec::new();
        for (i, &d) in program.p_diag.iter().enumerate() {
            if d != 0.0 {
                pi.push(i);
                pj.push(i);
                pv.push(d);
            }
        }
        let p = CscMatrix::new_from_triplets(n, n, pi, pj, pv);

        // clarabel form: A x + s = b, s in K  =>  A = -A_c, b = b_c
        let m = program.n_rows();
        let (mut ai, mut aj, mut av) = (Vec::new(), Vec::new(), Vec::new());
        let mut b = Vec::with_capacity(m);
        let mut cones = Vec::with_capacity(program.blocks.len());
        let mut row = 0;
        for block in &program.blocks {
            for r in &block.rows {
                for &(j, c) in &r.terms {
                    ai.push(row);
                    aj.push(j);
                    av.push(-c);
                }
                b.push(r.constant);
                row += 1;
            }
            let d = block.rows.len();
            cones.push(match block.kind {
                ConeKind::Zero => SupportedConeT::ZeroConeT(d),
                ConeKind::Nonnegative => SupportedConeT::NonnegativeConeT(d),
                ConeKind::SecondOrder => SupportedConeT::SecondOrderConeT(d),
                ConeKind::Exponential => SupportedConeT::ExponentialConeT(),
            });
        }
        let a = CscMatrix::new_from_triplets(m, n, ai, aj, av);

        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(self.max_iter)
            .tol_gap_abs(self.tol_gap)
            .tol_gap_rel(self.tol_gap)
            .build()
            .expect("valid solver settings");

        let mut solver = match DefaultSolver::new(&p, &program.q, &a, &b, &cones, settings) {
            Ok(s) => s,
            Err(e) => {
                return ConicSolution {
                    status: ConicStatus::Failed,
                    detail: format!("{e:?}"),
                    x: vec![f64::NAN; n],
                    objective: f64::NAN,
                    iterations: 0,
                }
            }
        };
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved => ConicStatus::Solved,
            SolverStatus::AlmostSolved => ConicStatus::AlmostSolved,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => ConicStatus::Infeasible,
            _ => ConicStatus::Failed,
        };
        ConicSolution {
            status,
            detail: format!("{:?}", sol.status),
            x: sol.x.clone(),
            objective: sol.obj_val,
            iterations: sol.iterations,
        }
    }
}
