#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use qgov::dynamics::{ControlField, JumpChannel, SystemModel};
use qgov::operators::{BasisLayout, ComplexMatrix};

pub fn random_complex(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> ComplexMatrix {
    ComplexMatrix::from_fn(dim, |_, _| C64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)))
}

pub fn random_hermitian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> ComplexMatrix {
    let a = random_complex(rng, dim, scale);
    (&a + &a.adjoint()).scale_real(0.5)
}

pub fn random_state(rng: &mut ChaCha8Rng, dim: usize) -> ComplexMatrix {
    let a = random_complex(rng, dim, 1.0);
    let p = &a * &a.adjoint();
    let tr = p.trace().re;
    p.scale_real(1.0 / tr)
}

/// Random model: diagonal drift, Hermitian dipole and noise coupling, one
/// random jump channel.
pub fn random_model(rng: &mut ChaCha8Rng) -> SystemModel {
    let layout = BasisLayout::four_level();
    let diag: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let h0 = ComplexMatrix::diagonal(&diag);
    let mu = random_hermitian(rng, 4, 0.5);
    let v = random_hermitian(rng, 4, 0.5);
    let ch = JumpChannel::new(random_complex(rng, 4, 0.5), rng.gen_range(0.05..0.3)).unwrap();
    SystemModel::new(h0, mu, v, vec![ch], layout).unwrap()
}

/// Explicit classical fourth-order Runge-Kutta on the master equation,
/// with its own right-hand side, for a constant field.
pub fn rk4_oracle(model: &SystemModel, eps: f64, rho: &ComplexMatrix, t: f64, steps: usize) -> ComplexMatrix {
    let i = C64::new(0.0, 1.0);
    let h: DMatrix<C64> = model.h0.inner() + model.control_dipole.inner() * C64::new(eps, 0.0);
    let jumps: Vec<(DMatrix<C64>, f64)> = model.channels.iter().map(|c| (c.operator.inner().clone(), c.rate)).collect();
    let rhs = |r: &DMatrix<C64>| -> DMatrix<C64> {
        let mut d = (&h * r - r * &h) * (-i);
        for (l, g) in &jumps {
            let ld = l.adjoint();
            let ll = &ld * l;
            d += (l * r * &ld - (&ll * r + r * &ll) * C64::new(0.5, 0.0)) * C64::new(*g, 0.0);
        }
        d
    };
    let dt = C64::new(t / steps as f64, 0.0);
    let mut r = rho.inner().clone();
    for _ in 0..steps {
        let k1 = rhs(&r);
        let k2 = rhs(&(&r + &k1 * (dt * 0.5)));
        let k3 = rhs(&(&r + &k2 * (dt * 0.5)));
        let k4 = rhs(&(&r + &k3 * dt));
        r += (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * (dt / 6.0);
    }
    ComplexMatrix::from(r)
}

/// The same integrator over a piecewise-constant field, `substeps` per sample.
pub fn rk4_oracle_field(model: &SystemModel, field: &ControlField, rho: &ComplexMatrix, substeps: usize) -> ComplexMatrix {
    field.samples.iter().fold(rho.clone(), |r, &eps| rk4_oracle(model, eps, &r, field.dt, substeps))
}


pub fn random_field(rng: &mut ChaCha8Rng, n: usize, dt: f64) -> ControlField {
    ControlField::new((0..n).map(|_| rng.gen_range(-0.4..0.4)).collect(), dt).unwrap()
}
