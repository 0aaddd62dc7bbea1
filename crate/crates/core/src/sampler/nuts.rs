//! Multinomial NUTS with a diagonal metric.
//!
//! Trajectories are grown by doubling in a random direction. A state is
//! drawn from each new subtree with probability proportional to
//! `exp(-H)`, biased towards the newer half. Growth stops on a generalized
//! U-turn, checked on the whole tree and on the two sub-trajectories that
//! straddle the join, or on a divergence.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::math::log_add_exp;
use crate::sampler::LogDensity;

/// Position, momentum, and cached log density with gradient.
#[derive(Debug, Clone)]
pub struct State {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub lp: f64,
}

impl State {
    /// Evaluate the density at `q`. Fails if it is not finite.
    pub fn new<M: LogDensity + ?Sized>(model: &M, q: Vec<f64>) -> crate::Result<Self> {
        let mut grad = vec![0.0; q.len()];
        let lp = model.log_density_and_gradient(&q, &mut grad)?;
        if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(crate::Error::Evaluation(format!(
                "log density {lp} or its gradient is not finite at the initial point"
            )));
        }
        Ok(Self {
            p: vec![0.0; q.len()],
            q,
            grad,
            lp,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionStats {
    pub accept_stat: f64,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
    pub energy: f64,
    pub lp: f64,
}

#[derive(Debug, Clone)]
pub struct Nuts {
    pub step_size: f64,
    /// Diagonal of the inverse metric (approximate posterior variances).
    pub inv_metric: Vec<f64>,
    pub max_depth: usize,
    pub max_delta_h: f64,
}

struct Walk<'r, R: Rng + ?Sized> {
    rng: &'r mut R,
    h0: f64,
    n_leapfrog: usize,
    sum_metro: f64,
    divergent: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_to(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

impl Nuts {
    pub fn new(step_size: f64, inv_metric: Vec<f64>, max_depth: usize, max_delta_h: f64) -> Self {
        Self {
            step_size,
            inv_metric,
            max_depth,
            max_delta_h,
        }
    }

    pub fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p
            .iter()
            .zip(&self.inv_metric)
            .map(|(x, m)| x * x * m)
            .sum::<f64>()
    }

    pub fn hamiltonian(&self, z: &State) -> f64 {
        -z.lp + self.kinetic(&z.p)
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(x, m)| x * m).collect()
    }

    pub fn sample_momentum<R: Rng + ?Sized>(&self, z: &mut State, rng: &mut R) {
        for (p, m) in z.p.iter_mut().zip(&self.inv_metric) {
            let u: f64 = rng.sample(StandardNormal);
            *p = u / m.sqrt();
        }
    }

    /// One leapfrog step of size `eps`; false if the density failed.
    pub fn leapfrog<M: LogDensity + ?Sized>(&self, model: &M, z: &mut State, eps: f64) -> bool {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        match model.log_density_and_gradient(&z.q, &mut z.grad) {
            Ok(lp) if !lp.is_nan() => z.lp = lp,
            _ => {
                z.lp = f64::NEG_INFINITY;
                return false;
            }
        }
        if !z.lp.is_finite() || z.grad.iter().any(|g| !g.is_finite()) {
            return false;
        }
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        true
    }

    /// One NUTS transition from `current`.
    pub fn transition<M: LogDensity + ?Sized, R: Rng + ?Sized>(
        &self,
        model: &M,
        current: &State,
        rng: &mut R,
    ) -> (State, TransitionStats) {
        let mut z = current.clone();
        self.sample_momentum(&mut z, rng);
        let h0 = self.hamiltonian(&z);

        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut z_sample = z.clone();
        let mut z_propose = z.clone();

        let p_sharp0 = self.p_sharp(&z.p);
        let mut p_fwd_fwd = z.p.clone();
        let mut p_sharp_fwd_fwd = p_sharp0.clone();
        let mut p_fwd_bck = z.p.clone();
        let mut p_sharp_fwd_bck = p_sharp0.clone();
        let mut p_bck_fwd = z.p.clone();
        let mut p_sharp_bck_fwd = p_sharp0.clone();
        let mut p_bck_bck = z.p.clone();
        let mut p_sharp_bck_bck = p_sharp0;

        let mut rho = z.p.clone();
        let mut log_sum_weight = 0.0;
        let mut depth = 0;
        let mut walk = Walk {
            rng,
            h0,
            n_leapfrog: 0,
            sum_metro: 0.0,
            divergent: false,
        };
        let dim = z.q.len();

        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; dim];
            let mut rho_bck = vec![0.0; dim];
            let mut log_sum_weight_subtree = f64::NEG_INFINITY;
            let valid;
            if walk.rng.random::<f64>() > 0.5 {
                rho_bck.copy_from_slice(&rho);
                // The old tree becomes the backward half; its forward end
                // borders the new subtree.
                p_bck_fwd.copy_from_slice(&p_fwd_fwd);
                p_sharp_bck_fwd.copy_from_slice(&p_sharp_fwd_fwd);
                let mut zi = z_fwd.clone();
                valid = self.build_tree(
                    model,
                    depth,
                    &mut zi,
                    &mut z_propose,
                    &mut p_sharp_fwd_bck,
                    &mut p_sharp_fwd_fwd,
                    &mut rho_fwd,
                    &mut p_fwd_bck,
                    &mut p_fwd_fwd,
                    1.0,
                    &mut walk,
                    &mut log_sum_weight_subtree,
                );
                z_fwd = zi;
            } else {
                rho_fwd.copy_from_slice(&rho);
                p_fwd_bck.copy_from_slice(&p_bck_bck);
                p_sharp_fwd_bck.copy_from_slice(&p_sharp_bck_bck);
                let mut zi = z_bck.clone();
                valid = self.build_tree(
                    model,
                    depth,
                    &mut zi,
                    &mut z_propose,
                    &mut p_sharp_bck_fwd,
                    &mut p_sharp_bck_bck,
                    &mut rho_bck,
                    &mut p_bck_fwd,
                    &mut p_bck_bck,
                    -1.0,
                    &mut walk,
                    &mut log_sum_weight_subtree,
                );
                z_bck = zi;
            }
            if !valid {
                break;
            }
            depth += 1;

            if log_sum_weight_subtree > log_sum_weight {
                z_sample = z_propose.clone();
            } else {
                let accept = (log_sum_weight_subtree - log_sum_weight).exp();
                if walk.rng.random::<f64>() < accept {
                    z_sample = z_propose.clone();
                }
            }
            log_sum_weight = log_add_exp(log_sum_weight, log_sum_weight_subtree);

            for ((r, b), f) in rho.iter_mut().zip(&rho_bck).zip(&rho_fwd) {
                *r = b + f;
            }
            let mut persist = no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            let mut rho_ext = rho_bck.clone();
            add_to(&mut rho_ext, &p_fwd_bck);
            persist &= no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_bck, &rho_ext);
            let mut rho_ext = rho_fwd.clone();
            add_to(&mut rho_ext, &p_bck_fwd);
            persist &= no_u_turn(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &rho_ext);
            if !persist {
                break;
            }
        }

        let n_leapfrog = walk.n_leapfrog.max(1);
        let stats = TransitionStats {
            accept_stat: walk.sum_metro / n_leapfrog as f64,
            tree_depth: depth,
            n_leapfrog: walk.n_leapfrog,
            divergent: walk.divergent,
            energy: self.hamiltonian(&z_sample),
            lp: z_sample.lp,
        };
        (z_sample, stats)
    }

    #[allow(clippy::too_many_arguments)]
    fn build_tree<M: LogDensity + ?Sized, R: Rng + ?Sized>(
        &self,
        model: &M,
        depth: usize,
        z: &mut State,
        z_propose: &mut State,
        p_sharp_beg: &mut Vec<f64>,
        p_sharp_end: &mut Vec<f64>,
        rho: &mut Vec<f64>,
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        sign: f64,
        walk: &mut Walk<'_, R>,
        log_sum_weight: &mut f64,
    ) -> bool {
        if depth == 0 {
            let ok = self.leapfrog(model, z, sign * self.step_size);
            walk.n_leapfrog += 1;
            let mut h = if ok { self.hamiltonian(z) } else { f64::INFINITY };
            if h.is_nan() {
                h = f64::INFINITY;
            }
            if h - walk.h0 > self.max_delta_h {
                walk.divergent = true;
            }
            *log_sum_weight = log_add_exp(*log_sum_weight, walk.h0 - h);
            walk.sum_metro += if walk.h0 - h > 0.0 {
                1.0
            } else {
                (walk.h0 - h).exp()
            };
            z_propose.clone_from(z);
            let ps = self.p_sharp(&z.p);
            p_sharp_beg.clone_from(&ps);
            *p_sharp_end = ps;
            add_to(rho, &z.p);
            p_beg.clone_from(&z.p);
            p_end.clone_from(&z.p);
            return !walk.divergent;
        }

        let dim = z.q.len();
        let mut p_sharp_init_end = vec![0.0; dim];
        let mut p_init_end = vec![0.0; dim];
        let mut rho_init = vec![0.0; dim];
        let mut lsw_init = f64::NEG_INFINITY;
        let valid_init = self.build_tree(
            model,
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            sign,
            walk,
            &mut lsw_init,
        );
        if !valid_init {
            return false;
        }

        let mut z_propose_final = z.clone();
        let mut rho_final = vec![0.0; dim];
        let mut p_sharp_final_beg = vec![0.0; dim];
        let mut p_final_beg = vec![0.0; dim];
        let mut lsw_final = f64::NEG_INFINITY;
        let valid_final = self.build_tree(
            model,
            depth - 1,
            z,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            sign,
            walk,
            &mut lsw_final,
        );
        if !valid_final {
            return false;
        }

        let lsw_subtree = log_add_exp(lsw_init, lsw_final);
        *log_sum_weight = log_add_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree {
            *z_propose = z_propose_final;
        } else {
            let accept = (lsw_final - lsw_subtree).exp();
            if walk.rng.random::<f64>() < accept {
                *z_propose = z_propose_final;
            }
        }

        let mut rho_subtree = rho_init.clone();
        add_to(&mut rho_subtree, &rho_final);
        add_to(rho, &rho_subtree);
        let mut persist = no_u_turn(p_sharp_beg, p_sharp_end, &rho_subtree);
        let mut rho_ext = rho_init;
        add_to(&mut rho_ext, &p_final_beg);
        persist &= no_u_turn(p_sharp_beg, &p_sharp_final_beg, &rho_ext);
        let mut rho_ext = rho_final;
        add_to(&mut rho_ext, &p_init_end);
        persist &= no_u_turn(&p_sharp_init_end, p_sharp_end, &rho_ext);
        persist
    }
}
