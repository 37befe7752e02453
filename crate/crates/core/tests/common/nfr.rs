use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vifactor::geom::{Pose3, Rot3};
use vifactor::nfr::{identity_factors, stacked_jacobian, star_topology, DenseGaussian, FactorKind};

pub fn random_poses(k: usize, rng: &mut ChaCha8Rng) -> Vec<Pose3> {
    (0..k)
        .map(|_| {
            Pose3::new(
                Rot3::exp(&Vector3::from_fn(|_, _| rng.random_range(-1.5..1.5))),
                Vector3::from_fn(|_, _| rng.random_range(-4.0..4.0)),
            )
        })
        .collect()
}

fn random_spd(n: usize, rng: &mut ChaCha8Rng, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * floor
}

/// Gaussian with a random SPD information over `k` random poses.
pub fn random_gaussian(k: usize, seed: u64) -> DenseGaussian {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = random_poses(k, &mut rng);
    DenseGaussian {
        h: random_spd(6 * k, &mut rng, 0.05),
        frames: (0..k as u64).map(|i| 100 + 3 * i).collect(),
        times: (0..k).map(|i| 0.5 * i as f64).collect(),
        mean: Vec::new(),
        lin: Vec::new(),
    }
    .with_poses(mean)
}

/// Gaussian whose information is exactly `J^T D J` for the star topology
/// around the first frame, with random SPD blocks `D`. Returns the blocks.
pub fn realizable_gaussian(k: usize, seed: u64) -> (DenseGaussian, Vec<DMatrix<f64>>) {
    let mut g = random_gaussian(k, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let topo = star_topology(&g, g.frames[0]);
    let factors = identity_factors(&g, &topo).unwrap();
    let j = stacked_jacobian(&g, &factors).unwrap();
    let blocks: Vec<DMatrix<f64>> = factors
        .iter()
        .map(|f| random_spd(f.kind.dim(), &mut rng, 0.2))
        .collect();
    let d = block_diag(&blocks);
    g.h = j.transpose() * d * &j;
    g.h = (&g.h + g.h.transpose()) * 0.5;
    (g, blocks)
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut m = DMatrix::zeros(n, n);
    let mut o = 0;
    for b in blocks {
        m.view_mut((o, o), b.shape()).copy_from(b);
        o += b.nrows();
    }
    m
}

pub fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// `1/2 (<H_a, Sigma> - log det(H_a Sigma) - d)` for full-rank `H_o`.
fn kld_dense(h_o: &DMatrix<f64>, ha: &DMatrix<f64>) -> Option<f64> {
    let co = h_o.clone().cholesky()?;
    let ca = ha.clone().cholesky()?;
    let sigma = co.inverse();
    let ld = |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| {
        c.l().diagonal().iter().map(|x| 2.0 * x.ln()).sum::<f64>()
    };
    Some(0.5 * ((ha.component_mul(&sigma)).sum() - ld(&ca) + ld(&co) - h_o.nrows() as f64))
}

struct Problem {
    h_o: DMatrix<f64>,
    j: DMatrix<f64>,
    dims: Vec<usize>,
}

impl Problem {
    fn tri(d: usize) -> usize {
        d * (d + 1) / 2
    }

    fn unpack(&self, theta: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut k = 0;
        self.dims
            .iter()
            .map(|&d| {
                let mut l = DMatrix::zeros(d, d);
                for r in 0..d {
                    for c in 0..=r {
                        l[(r, c)] = theta[k];
                        k += 1;
                    }
                }
                &l * l.transpose()
            })
            .collect()
    }

    fn ha(&self, w: &[DMatrix<f64>]) -> DMatrix<f64> {
        self.j.transpose() * block_diag(w) * &self.j
    }

    fn value(&self, theta: &DVector<f64>) -> f64 {
        kld_dense(&self.h_o, &self.ha(&self.unpack(theta))).unwrap_or(f64::INFINITY)
    }

    /// Analytic gradient through the Cholesky-factor parametrization:
    /// `dF/dW_i = 1/2 (J_i Sigma J_i^T - J_i H_a^-1 J_i^T)`, `dF/dL = 2 G L`.
    fn grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        let w = self.unpack(theta);
        let sigma = self.h_o.clone().cholesky().unwrap().inverse();
        let ha_inv = self.ha(&w).cholesky().unwrap().inverse();
        let m = &self.j * (sigma - ha_inv) * self.j.transpose() * 0.5;
        let mut out = DVector::zeros(theta.len());
        let (mut k, mut o) = (0, 0);
        for &d in &self.dims {
            let mut l = DMatrix::zeros(d, d);
            let mut kk = k;
            for r in 0..d {
                for c in 0..=r {
                    l[(r, c)] = theta[kk];
                    kk += 1;
                }
            }
            let gl = m.view((o, o), (d, d)) * &l * 2.0;
            for r in 0..d {
                for c in 0..=r {
                    out[k] = gl[(r, c)];
                    k += 1;
                }
            }
            o += d;
        }
        out
    }
}

/// Minimizes the KL objective over block information matrices with
/// Levenberg-Marquardt on the Cholesky factors, using a finite-difference
/// Hessian of the analytic gradient. Independent of the closed form.
pub fn iterative_information(
    g: &DenseGaussian,
    kinds_frames: &[(FactorKind, Vec<u64>)],
) -> Vec<DMatrix<f64>> {
    let factors = identity_factors(g, kinds_frames).unwrap();
    let p = Problem {
        h_o: g.h.clone(),
        j: stacked_jacobian(g, &factors).unwrap(),
        dims: factors.iter().map(|f| f.kind.dim()).collect(),
    };
    let n: usize = p.dims.iter().map(|&d| Problem::tri(d)).sum();
    let mut theta = DVector::zeros(n);
    let mut k = 0;
    for &d in &p.dims {
        for r in 0..d {
            for c in 0..=r {
                theta[k] = if r == c { 1.0 } else { 0.0 };
                k += 1;
            }
        }
    }
    let mut f = p.value(&theta);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let gr = p.grad(&theta);
        if gr.amax() < 1e-13 {
            break;
        }
        let eps = 1e-6;
        let mut hess = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += eps;
            tm[i] -= eps;
            hess.set_column(i, &((p.grad(&tp) - p.grad(&tm)) / (2.0 * eps)));
        }
        hess = (&hess + hess.transpose()) * 0.5;
        loop {
            let mut a = hess.clone();
            for i in 0..n {
                a[(i, i)] += lambda * (1.0 + hess[(i, i)].abs());
            }
            let step = match a.clone().cholesky() {
                Some(c) => c.solve(&(-&gr)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let cand = &theta + step;
            let fc = p.value(&cand);
            if fc <= f {
                theta = cand;
                f = fc;
                lambda = (lambda * 0.1).max(1e-12);
                break;
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                return p.unpack(&theta);
            }
        }
    }
    p.unpack(&theta)
}
