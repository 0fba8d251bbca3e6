//! Sequential minimal optimization for the soft-margin SVM dual.
//!
//! Solves `min ½ αᵀQα − eᵀα` subject to `0 ≤ α ≤ C` and `yᵀα = 0`, with
//! `Q_ij = y_i y_j K(x_i, x_j)`. Each step picks the maximal-violating pair
//! using second-order information and solves the two-variable subproblem
//! in closed form.

/// Curvature floor for non-positive-definite pairs (e.g. sigmoid kernels).
const TAU: f64 = 1e-12;

pub(crate) struct Problem<'a> {
    /// Row-major `n × n` matrix of `y_i y_j K_ij`.
    pub q: &'a [f64],
    pub y: &'a [f64],
    pub c: f64,
    pub eps: f64,
    pub max_iter: usize,
}

pub(crate) struct Solution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    /// Dual objective `eᵀα − ½ αᵀQα` (maximization form).
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.y.len()
    }

    fn q(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.n() + j]
    }

    fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.q[i * n..(i + 1) * n]
    }

    pub fn solve(&self) -> Solution {
        let n = self.n();
        let c = self.c;
        let mut alpha = vec![0.0; n];
        let mut grad = vec![-1.0; n];

        let mut iterations = 0;
        let mut converged = false;
        while iterations < self.max_iter {
            let Some((i, j)) = self.select_pair(&alpha, &grad) else {
                converged = true;
                break;
            };
            iterations += 1;

            let (old_i, old_j) = (alpha[i], alpha[j]);
            let (qii, qjj, qij) = (self.q(i, i), self.q(j, j), self.q(i, j));
            if self.y[i] != self.y[j] {
                let quad = positive(qii + qjj + 2.0 * qij);
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > 0.0 {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = c - diff;
                    }
                } else if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            } else {
                let quad = positive(qii + qjj - 2.0 * qij);
                let delta = (grad[i] - grad[j]) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > c {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = sum - c;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > c {
                    if alpha[j] > c {
                        alpha[j] = c;
                        alpha[i] = sum - c;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }

            let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
            let (row_i, row_j) = (self.row(i), self.row(j));
            for k in 0..n {
                grad[k] += row_i[k] * di + row_j[k] * dj;
            }
        }

        let rho = self.rho(&alpha, &grad);
        let objective = alpha
            .iter()
            .zip(&grad)
            .map(|(&a, &g)| a - 0.5 * a * (g + 1.0))
            .sum();
        Solution {
            alpha,
            rho,
            objective,
            iterations,
            converged,
        }
    }

    fn upper(&self, a: f64) -> bool {
        a >= self.c
    }

    fn lower(a: f64) -> bool {
        a <= 0.0
    }

    /// Second-order working-set selection; `None` once the maximal KKT
    /// violation drops below `eps`.
    fn select_pair(&self, alpha: &[f64], grad: &[f64]) -> Option<(usize, usize)> {
        let n = self.n();
        let mut gmax = f64::NEG_INFINITY;
        let mut best_i = None;
        for t in 0..n {
            let (a, g) = (alpha[t], grad[t]);
            if self.y[t] > 0.0 {
                if !self.upper(a) && -g >= gmax {
                    gmax = -g;
                    best_i = Some(t);
                }
            } else if !Self::lower(a) && g >= gmax {
                gmax = g;
                best_i = Some(t);
            }
        }
        let i = best_i?;
        let yi = self.y[i];
        let qii = self.q(i, i);
        let row_i = self.row(i);

        let mut gmax2 = f64::NEG_INFINITY;
        let mut best_j = None;
        let mut best_obj = f64::INFINITY;
        for j in 0..n {
            let (a, g) = (alpha[j], grad[j]);
            let (grad_diff, quad) = if self.y[j] > 0.0 {
                if Self::lower(a) {
                    continue;
                }
                gmax2 = gmax2.max(g);
                (gmax + g, qii + self.q(j, j) - 2.0 * yi * row_i[j])
            } else {
                if self.upper(a) {
                    continue;
                }
                gmax2 = gmax2.max(-g);
                (gmax - g, qii + self.q(j, j) + 2.0 * yi * row_i[j])
            };
            if grad_diff > 0.0 {
                let obj = -(grad_diff * grad_diff) / positive(quad);
                if obj <= best_obj {
                    best_obj = obj;
                    best_j = Some(j);
                }
            }
        }
        if gmax + gmax2 < self.eps {
            return None;
        }
        best_j.map(|j| (i, j))
    }

    fn rho(&self, alpha: &[f64], grad: &[f64]) -> f64 {
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        let mut free_sum = 0.0;
        let mut free = 0usize;
        for t in 0..self.n() {
            let yg = self.y[t] * grad[t];
            let (a, y) = (alpha[t], self.y[t]);
            if self.upper(a) {
                if y < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if Self::lower(a) {
                if y > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                free_sum += yg;
            }
        }
        if free > 0 {
            free_sum / free as f64
        } else {
            (ub + lb) / 2.0
        }
    }
}

fn positive(quad: f64) -> f64 {
    if quad > 0.0 {
        quad
    } else {
        TAU
    }
}
