//! Limited-memory BFGS minimizer with a strong-Wolfe line search.
//!
//! The optimizer is driven one iteration at a time through [`Lbfgs::step`] so
//! that callers can interleave their own bookkeeping (dev evaluation, early
//! stopping) between iterations.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Function to minimize: returns `f(x)` and writes `∇f(x)` into `grad`.
pub trait Objective {
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Objective for F {
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        self(x, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub history: usize,
    /// Stop when `||∇f|| <= gradient_tol * max(1, ||x||)`.
    pub gradient_tol: f64,
    /// Stop when `|f_prev - f| / max(|f_prev|, |f|, 1) < relative_tol`.
    pub relative_tol: f64,
    pub max_line_search: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            history: 10,
            gradient_tol: 1e-5,
            relative_tol: 1e-8,
            max_line_search: 40,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    Gradient,
    RelativeChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    /// A new iterate was accepted; `converged` is set when it satisfies a
    /// stopping test.
    Accepted { converged: Option<Convergence> },
    /// No acceptable step along the search direction, even after a restart
    /// from steepest descent. The iterate is unchanged.
    Stalled,
}

pub struct Lbfgs<O> {
    config: LbfgsConfig,
    objective: O,
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    history: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    iteration: usize,
    evaluations: usize,
}

struct Trial {
    alpha: f64,
    f: f64,
    dphi: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl<O: Objective> Lbfgs<O> {
    pub fn new(config: LbfgsConfig, x0: Vec<f64>, mut objective: O) -> Result<Self> {
        let mut g = vec![0.0; x0.len()];
        let f = objective.evaluate(&x0, &mut g);
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                iteration: 0,
                detail: format!("objective {f} at the starting point"),
            });
        }
        Ok(Lbfgs {
            config,
            objective,
            x: x0,
            f,
            g,
            history: VecDeque::with_capacity(config.history),
            iteration: 0,
            evaluations: 1,
        })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn value(&self) -> f64 {
        self.f
    }

    pub fn gradient(&self) -> &[f64] {
        &self.g
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn into_objective(self) -> O {
        self.objective
    }

    fn gradient_converged(&self) -> bool {
        norm(&self.g) <= self.config.gradient_tol * norm(&self.x).max(1.0)
    }

    /// `-H ∇f` via the two-loop recursion.
    fn direction(&self) -> Vec<f64> {
        let mut q: Vec<f64> = self.g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(self.history.len());
        for (s, y, rho) in self.history.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.history.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in self.history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q
    }

    pub fn step(&mut self) -> Result<Step> {
        if self.gradient_converged() {
            return Ok(Step::Accepted {
                converged: Some(Convergence::Gradient),
            });
        }
        let mut direction = self.direction();
        let mut trial = None;
        for restart in [false, true] {
            if restart {
                self.history.clear();
                direction = self.g.iter().map(|v| -v).collect();
            }
            let dphi0 = dot(&self.g, &direction);
            if !(dphi0 < 0.0) {
                continue;
            }
            let alpha0 = if self.history.is_empty() {
                (1.0 / norm(&direction)).min(1.0)
            } else {
                1.0
            };
            trial = self.line_search(&direction, dphi0, alpha0);
            if trial.is_some() {
                break;
            }
        }
        let Some(trial) = trial else {
            return Ok(Step::Stalled);
        };

        let s: Vec<f64> = trial.x.iter().zip(&self.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial.g.iter().zip(&self.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm(&s) * norm(&y) {
            if self.history.len() == self.config.history {
                self.history.pop_front();
            }
            self.history.push_back((s, y, 1.0 / sy));
        }
        let f_prev = self.f;
        self.x = trial.x;
        self.g = trial.g;
        self.f = trial.f;
        self.iteration += 1;
        log::trace!(
            "lbfgs iter {} f={:.6e} step={:.3e}",
            self.iteration,
            self.f,
            trial.alpha
        );

        let rel = (f_prev - self.f).abs() / f_prev.abs().max(self.f.abs()).max(1.0);
        let converged = if self.gradient_converged() {
            Some(Convergence::Gradient)
        } else if rel < self.config.relative_tol {
            Some(Convergence::RelativeChange)
        } else {
            None
        };
        Ok(Step::Accepted { converged })
    }

    fn probe(&mut self, direction: &[f64], alpha: f64) -> Trial {
        let x: Vec<f64> = self.x.iter().zip(direction).map(|(x, d)| x + alpha * d).collect();
        let mut g = vec![0.0; x.len()];
        let mut f = self.objective.evaluate(&x, &mut g);
        self.evaluations += 1;
        if g.iter().any(|v| !v.is_finite()) {
            f = f64::NAN;
        }
        let dphi = dot(&g, direction);
        Trial { alpha, f, dphi, x, g }
    }

    fn line_search(&mut self, direction: &[f64], dphi0: f64, alpha0: f64) -> Option<Trial> {
        let (c1, c2) = (self.config.c1, self.config.c2);
        let f0 = self.f;
        let origin = Trial {
            alpha: 0.0,
            f: f0,
            dphi: dphi0,
            x: Vec::new(),
            g: Vec::new(),
        };
        let mut prev = origin;
        let mut alpha = alpha0;
        for i in 0..self.config.max_line_search {
            let t = self.probe(direction, alpha);
            if !t.f.is_finite() || t.f > f0 + c1 * alpha * dphi0 || (i > 0 && t.f >= prev.f) {
                return self.zoom(direction, dphi0, prev, t);
            }
            if t.dphi.abs() <= -c2 * dphi0 {
                return Some(t);
            }
            if t.dphi >= 0.0 {
                return self.zoom(direction, dphi0, t, prev);
            }
            alpha *= 2.0;
            prev = t;
        }
        None
    }

    /// Zoom phase; `lo` satisfies sufficient decrease, and the interval
    /// between `lo` and `hi` contains a strong-Wolfe point.
    fn zoom(&mut self, direction: &[f64], dphi0: f64, mut lo: Trial, mut hi: Trial) -> Option<Trial> {
        let (c1, c2) = (self.config.c1, self.config.c2);
        let f0 = self.f;
        for _ in 0..self.config.max_line_search {
            let alpha = interpolate(&lo, &hi);
            if (alpha - lo.alpha).abs() < 1e-16 * lo.alpha.abs().max(1.0) {
                break;
            }
            let t = self.probe(direction, alpha);
            if !t.f.is_finite() || t.f > f0 + c1 * alpha * dphi0 || t.f >= lo.f {
                hi = t;
            } else {
                if t.dphi.abs() <= -c2 * dphi0 {
                    return Some(t);
                }
                if t.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = t;
            }
        }
        // Accept a point with sufficient decrease even if curvature fails.
        (lo.alpha > 0.0 && lo.f < f0).then_some(lo)
    }
}

/// Minimizer of the cubic through `lo` and `hi`, safeguarded to the middle
/// 80% of the interval; bisection when the fit is unusable.
fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let (left, right) = (a.min(b), a.max(b));
    let margin = 0.1 * (right - left);
    let mid = 0.5 * (a + b);
    if !hi.f.is_finite() || !hi.dphi.is_finite() {
        return mid;
    }
    let d1 = lo.dphi + hi.dphi - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.dphi * hi.dphi;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let denom = hi.dphi - lo.dphi + 2.0 * d2;
    if denom == 0.0 {
        return mid;
    }
    let c = b - (b - a) * (hi.dphi + d2 - d1) / denom;
    if c.is_finite() && c >= left + margin && c <= right - margin {
        c
    } else {
        mid
    }
}
