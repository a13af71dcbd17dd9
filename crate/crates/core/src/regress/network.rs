use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Training settings for the NNPLS inner network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Epochs without holdout improvement before stopping.
    pub patience: usize,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for NnConfig {
    fn default() -> Self {
        NnConfig {
            hidden: 3,
            epochs: 2000,
            learning_rate: 0.05,
            patience: 50,
            holdout_fraction: 0.2,
            seed: 7,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// One input, `h` sigmoid hidden units, one linear output:
/// `net(t) = out_scale · (b2 + Σ w2ⱼ σ(w1ⱼ t / in_scale + b1ⱼ))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub in_scale: f64,
    pub out_scale: f64,
}

impl Network {
    /// Seeded weights uniform in [-0.5, 0.5], unit scales.
    pub fn random(hidden: usize, rng: &mut impl Rng) -> Network {
        let mut draw = |n| (0..n).map(|_| rng.random_range(-0.5..=0.5)).collect::<Vec<f64>>();
        let (w1, b1, w2) = (draw(hidden), draw(hidden), draw(hidden));
        Network {
            w1,
            b1,
            w2,
            b2: draw(1)[0],
            in_scale: 1.0,
            out_scale: 1.0,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w1.len()
    }

    /// Parameters flattened as `[w1…, b1…, w2…, b2]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(3 * self.hidden() + 1);
        p.extend(&self.w1);
        p.extend(&self.b1);
        p.extend(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let h = self.hidden();
        assert_eq!(p.len(), 3 * h + 1, "parameter vector length");
        self.w1.copy_from_slice(&p[..h]);
        self.b1.copy_from_slice(&p[h..2 * h]);
        self.w2.copy_from_slice(&p[2 * h..3 * h]);
        self.b2 = p[3 * h];
    }

    fn activations(&self, t: f64) -> impl Iterator<Item = f64> + '_ {
        let x = t / self.in_scale;
        self.w1.iter().zip(&self.b1).map(move |(w, b)| sigmoid(w * x + b))
    }

    pub fn eval(&self, t: f64) -> f64 {
        let s: f64 = self.activations(t).zip(&self.w2).map(|(a, w)| a * w).sum();
        self.out_scale * (self.b2 + s)
    }

    /// Sum of squared errors `Σ (u − net(t))²`.
    pub fn loss(&self, t: &[f64], u: &[f64]) -> f64 {
        t.iter().zip(u).map(|(t, u)| (u - self.eval(*t)).powi(2)).sum()
    }

    /// Analytic gradient of [`Network::loss`] in [`Network::params`] order.
    pub fn gradient(&self, t: &[f64], u: &[f64]) -> Vec<f64> {
        let h = self.hidden();
        let mut g = vec![0.0; 3 * h + 1];
        for (&t, &u) in t.iter().zip(u) {
            let x = t / self.in_scale;
            // dL/dnet for this sample, already through the output scale
            let r = -2.0 * (u - self.eval(t)) * self.out_scale;
            for j in 0..h {
                let a = sigmoid(self.w1[j] * x + self.b1[j]);
                let da = a * (1.0 - a);
                g[j] += r * self.w2[j] * da * x;
                g[h + j] += r * self.w2[j] * da;
                g[2 * h + j] += r * a;
            }
            g[3 * h] += r;
        }
        g
    }
}

/// Gradient of `Σ (u − net(t))²` with respect to every network parameter.
pub fn nn_inner_gradient(net: &Network, t: &[f64], u: &[f64]) -> Vec<f64> {
    net.gradient(t, u)
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

/// Least-squares output layer for fixed hidden weights, lightly ridged.
fn fit_output_layer(net: &mut Network, t: &[f64], u: &[f64]) {
    let h = net.hidden();
    let a = DMatrix::from_fn(t.len(), h + 1, |i, j| {
        if j == h {
            1.0
        } else {
            sigmoid(net.w1[j] * t[i] + net.b1[j])
        }
    });
    let mut ata = a.transpose() * &a;
    let ridge = 1e-6 * ata.trace() / (h + 1) as f64;
    for j in 0..=h {
        ata[(j, j)] += ridge;
    }
    let atu = a.transpose() * DVector::from_column_slice(u);
    if let Some(sol) = ata.cholesky().map(|c| c.solve(&atu)) {
        net.w2.copy_from_slice(&sol.as_slice()[..h]);
        net.b2 = sol[h];
    }
}

/// Fits a network mapping scores `t` to targets `u`.
///
/// Inputs and outputs are normalised by their standard deviations. After a
/// seeded init the output layer is solved by least squares, then all
/// weights descend the mean squared-error gradient. A seeded holdout subset
/// drives early stopping and the best holdout parameters are kept.
pub fn train_network(t: &[f64], u: &[f64], config: &NnConfig, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::random(config.hidden.max(1), &mut rng);
    let (ts, us) = (std_dev(t), std_dev(u));
    if !(ts > 0.0) || !(us > 0.0) {
        net.w2.iter_mut().for_each(|w| *w = 0.0);
        net.b2 = 0.0;
        return net;
    }
    let tn: Vec<f64> = t.iter().map(|v| v / ts).collect();
    let un: Vec<f64> = u.iter().map(|v| v / us).collect();

    let n = t.len();
    let n_hold = ((n as f64) * config.holdout_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (hold, fit) = if n_hold >= 1 && n - n_hold >= 3 {
        order.split_at(n_hold)
    } else {
        (&order[..0], &order[..])
    };
    let pick = |idx: &[usize], v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let (t_fit, u_fit) = (pick(fit, &tn), pick(fit, &un));
    let (t_hold, u_hold) = (pick(hold, &tn), pick(hold, &un));

    fit_output_layer(&mut net, &t_fit, &u_fit);
    let monitor = |net: &Network| {
        if hold.is_empty() {
            net.loss(&t_fit, &u_fit)
        } else {
            net.loss(&t_hold, &u_hold)
        }
    };

    let mut params = net.params();
    let mut best = (monitor(&net), params.clone());
    let mut stale = 0;
    let scale = config.learning_rate / t_fit.len() as f64;
    for _ in 0..config.epochs {
        let g = net.gradient(&t_fit, &u_fit);
        for (p, g) in params.iter_mut().zip(&g) {
            *p -= scale * g;
        }
        net.set_params(&params);
        let loss = monitor(&net);
        if !loss.is_finite() {
            break;
        }
        if loss < best.0 {
            best = (loss, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    net.set_params(&best.1);
    net.in_scale = ts;
    net.out_scale = us;
    net
}
