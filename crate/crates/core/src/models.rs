//! Spin Hamiltonians as nearest-neighbour bond terms and as dense matrices.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Largest lattice for which [`dense_hamiltonian`] builds a matrix.
pub const DENSE_SITE_LIMIT: usize = 14;

pub fn pauli_x() -> Tensor {
    Tensor::matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap()
}

/// Label 0 is spin up (`+1`), label 1 spin down.
pub fn pauli_z() -> Tensor {
    Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, -1.0]).unwrap()
}

/// `|label><label|` on a `d`-dimensional site.
pub fn projector(d: usize, label: usize) -> Tensor {
    Tensor::from_fn(&[d, d], |i| if i[0] == label && i[1] == label { 1.0 } else { 0.0 })
}

/// Kronecker product of two matrices.
pub fn kron(a: &Tensor, b: &Tensor) -> Tensor {
    let (ar, ac) = (a.shape()[0], a.shape()[1]);
    let (br, bc) = (b.shape()[0], b.shape()[1]);
    Tensor::from_fn(&[ar * br, ac * bc], |i| {
        a.get(&[i[0] / br, i[1] / bc]) * b.get(&[i[0] % br, i[1] % bc])
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// `H = -sum_<ij> Z_i Z_j - g sum_j X_j`
    Tfim,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub g: f64,
    pub lx: usize,
    pub ly: usize,
}

/// A nearest-neighbour pair. `Horizontal { x, y }` joins `(x, y)` and
/// `(x, y + 1)`; `Vertical { x, y }` joins `(x, y)` and `(x + 1, y)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bond {
    Horizontal { x: usize, y: usize },
    Vertical { x: usize, y: usize },
}

impl Bond {
    pub fn first(&self) -> (usize, usize) {
        match *self {
            Bond::Horizontal { x, y } | Bond::Vertical { x, y } => (x, y),
        }
    }

    pub fn second(&self) -> (usize, usize) {
        match *self {
            Bond::Horizontal { x, y } => (x, y + 1),
            Bond::Vertical { x, y } => (x + 1, y),
        }
    }

    pub fn is_horizontal(&self) -> bool {
        matches!(self, Bond::Horizontal { .. })
    }

    pub fn fits(&self, lx: usize, ly: usize) -> bool {
        let (a, b) = (self.first(), self.second());
        a.0 < lx && a.1 < ly && b.0 < lx && b.1 < ly
    }

    /// Compact identifier such as `h0,1` or `v2,0`.
    pub fn label(&self) -> String {
        let (x, y) = self.first();
        let kind = if self.is_horizontal() { 'h' } else { 'v' };
        format!("{kind}{x},{y}")
    }
}

/// All bonds: horizontal ones row by row, left to right, then vertical ones
/// column by column, top to bottom.
pub fn bond_order(lx: usize, ly: usize) -> Vec<Bond> {
    let mut bonds = Vec::new();
    for x in 0..lx {
        for y in 0..ly.saturating_sub(1) {
            bonds.push(Bond::Horizontal { x, y });
        }
    }
    for y in 0..ly {
        for x in 0..lx.saturating_sub(1) {
            bonds.push(Bond::Vertical { x, y });
        }
    }
    bonds
}

/// Number of nearest neighbours of `(x, y)` on the open lattice.
pub fn coordination(lx: usize, ly: usize, x: usize, y: usize) -> usize {
    [x > 0, x + 1 < lx, y > 0, y + 1 < ly].iter().filter(|&&b| b).count()
}

impl ModelSpec {
    pub fn tfim(g: f64, lx: usize, ly: usize) -> Result<Self> {
        if !g.is_finite() {
            return invalid(format!("transverse field {g} is not finite"));
        }
        if lx == 0 || ly == 0 || lx * ly < 2 {
            return invalid(format!("a {lx}x{ly} lattice has no bonds"));
        }
        Ok(Self { kind: ModelKind::Tfim, g, lx, ly })
    }

    /// Looks a model up by its configuration name.
    pub fn from_name(name: &str, g: f64, lx: usize, ly: usize) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "tfim" | "ising" => Self::tfim(g, lx, ly),
            other => Err(Error::UnsupportedModel(other.to_string())),
        }
    }

    pub fn phys_dim(&self) -> usize {
        2
    }

    pub fn num_sites(&self) -> usize {
        self.lx * self.ly
    }

    pub fn bonds(&self) -> Vec<Bond> {
        bond_order(self.lx, self.ly)
    }

    /// The bond term `h_ij`, a `d^2 x d^2` matrix with the first site of the
    /// bond as the major index. Single-site fields are shared among incident
    /// bonds in proportion `1 / coordination`, so the bond terms sum to the
    /// full Hamiltonian.
    pub fn bond_hamiltonian(&self, bond: Bond) -> Result<Tensor> {
        if !bond.fits(self.lx, self.ly) {
            return invalid(format!("bond {bond:?} outside {}x{}", self.lx, self.ly));
        }
        let (a, b) = (bond.first(), bond.second());
        let za = coordination(self.lx, self.ly, a.0, a.1) as f64;
        let zb = coordination(self.lx, self.ly, b.0, b.1) as f64;
        let (x, z, id) = (pauli_x(), pauli_z(), Tensor::eye(2));
        let zz = kron(&z, &z);
        let xa = kron(&x, &id);
        let xb = kron(&id, &x);
        let h = Tensor::from_fn(&[4, 4], |i| {
            -zz.get(i) - self.g / za * xa.get(i) - self.g / zb * xb.get(i)
        });
        Ok(h)
    }

    /// Classical-basis energy of a configuration's diagonal part, handy for
    /// spotting ordered configurations.
    pub fn zz_energy(&self, labels: &[usize]) -> f64 {
        let s = |x: usize, y: usize| if labels[x * self.ly + y] == 0 { 1.0 } else { -1.0 };
        self.bonds()
            .iter()
            .map(|b| {
                let (p, q) = (b.first(), b.second());
                -s(p.0, p.1) * s(q.0, q.1)
            })
            .sum()
    }
}

/// `H` assembled directly from Pauli operators in the product basis, site
/// `(0, 0)` being the most significant bit.
pub fn dense_hamiltonian(spec: &ModelSpec) -> Result<Tensor> {
    let n_sites = spec.num_sites();
    if n_sites > DENSE_SITE_LIMIT {
        return Err(Error::SizeCap { sites: n_sites, limit: DENSE_SITE_LIMIT });
    }
    let dim = 1usize << n_sites;
    let mut h = Tensor::zeros(&[dim, dim]);
    let bit = |x: usize, y: usize| n_sites - 1 - (x * spec.ly + y);
    let bonds = spec.bonds();
    let data = h.data_mut();
    for state in 0..dim {
        let spin = |x: usize, y: usize| if state >> bit(x, y) & 1 == 0 { 1.0 } else { -1.0 };
        let mut diag = 0.0;
        for b in &bonds {
            let (p, q) = (b.first(), b.second());
            diag -= spin(p.0, p.1) * spin(q.0, q.1);
        }
        data[state * dim + state] = diag;
        for k in 0..n_sites {
            let flipped = state ^ (1 << (n_sites - 1 - k));
            data[flipped * dim + state] -= spec.g;
        }
    }
    Ok(h)
}
