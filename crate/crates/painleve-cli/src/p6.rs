//! A second, deliberately separate P_VI integrator: Hamilton's equations of
//! the Okamoto Hamiltonian written out by hand, classical RK4 on a fixed grid.

#[derive(Clone, Copy, Debug)]
pub struct Okamoto {
    pub k0: f64,
    pub k1: f64,
    pub kt: f64,
    pub kappa: f64,
}

impl Okamoto {
    /// Parameters of the rank-one coupled system `(alpha_0..alpha_3, eta)`.
    pub fn from_roots(alpha: &[f64], eta: f64) -> Self {
        Okamoto { k0: alpha[3] - eta, k1: alpha[0], kt: alpha[2], kappa: alpha[1] * eta }
    }

    pub fn field(&self, t: f64, q: f64, p: f64) -> (f64, f64) {
        let Okamoto { k0, k1, kt, kappa } = *self;
        let d = t * (t - 1.0);
        let dq = 2.0 * q * (q - 1.0) * (q - t) * p
            - k0 * (q - 1.0) * (q - t)
            - k1 * q * (q - t)
            - (kt - 1.0) * q * (q - 1.0);
        let dh_dq = (3.0 * q * q - 2.0 * (1.0 + t) * q + t) * p * p
            - k0 * (2.0 * q - 1.0 - t) * p
            - k1 * (2.0 * q - t) * p
            - (kt - 1.0) * (2.0 * q - 1.0) * p
            + kappa;
        (dq / d, -dh_dq / d)
    }

    pub fn integrate(&self, t0: f64, t1: f64, q: f64, p: f64, steps: usize) -> (f64, f64) {
        let h = (t1 - t0) / steps as f64;
        let (mut q, mut p) = (q, p);
        for k in 0..steps {
            let t = t0 + k as f64 * h;
            let (a1, b1) = self.field(t, q, p);
            let (a2, b2) = self.field(t + h / 2.0, q + h / 2.0 * a1, p + h / 2.0 * b1);
            let (a3, b3) = self.field(t + h / 2.0, q + h / 2.0 * a2, p + h / 2.0 * b2);
            let (a4, b4) = self.field(t + h, q + h * a3, p + h * b3);
            q += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
            p += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        }
        (q, p)
    }
}
