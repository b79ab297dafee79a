//! Finite open-boundary PEPS and its double-layer transfer tensors.
//!
//! Site tensors use one axis order everywhere in the crate:
//!
//! ```text
//!            up (0)
//!             |
//! left (1) -- A -- right (3)        physical (4), ancilla (5, purification only)
//!             |
//!          down (2)
//! ```
//!
//! Sites are indexed `(x, y)` with `x` the row counted from the top and `y`
//! the column counted from the left, both 0-based.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg;
use crate::tensor::{contract, Tensor};

pub const UP: usize = 0;
pub const LEFT: usize = 1;
pub const DOWN: usize = 2;
pub const RIGHT: usize = 3;
pub const PHYS: usize = 4;
pub const ANCILLA: usize = 5;

/// Human-readable form of the axis convention, stored in checkpoint sidecars.
pub const AXIS_CONVENTION: &str = "up,left,down,right,physical[,ancilla]";

/// A grid of basis labels, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Configuration {
    pub lx: usize,
    pub ly: usize,
    pub labels: Vec<usize>,
}

impl Configuration {
    pub fn uniform(lx: usize, ly: usize, label: usize) -> Self {
        Self { lx, ly, labels: vec![label; lx * ly] }
    }

    pub fn from_rows(rows: &[Vec<usize>]) -> Result<Self> {
        let lx = rows.len();
        let ly = rows.first().map_or(0, Vec::len);
        if lx == 0 || ly == 0 || rows.iter().any(|r| r.len() != ly) {
            return invalid("configuration rows must be nonempty and of equal length");
        }
        Ok(Self { lx, ly, labels: rows.concat() })
    }

    /// Basis state index with site `(0, 0)` as the most significant digit.
    pub fn from_index(lx: usize, ly: usize, d: usize, mut index: usize) -> Self {
        let mut labels = vec![0; lx * ly];
        for slot in labels.iter_mut().rev() {
            *slot = index % d;
            index /= d;
        }
        Self { lx, ly, labels }
    }

    pub fn index(&self, d: usize) -> usize {
        self.labels.iter().fold(0, |acc, &l| acc * d + l)
    }

    pub fn get(&self, x: usize, y: usize) -> usize {
        self.labels[x * self.ly + y]
    }

    /// One character per site, rows separated by `/`.
    pub fn to_compact(&self) -> String {
        self.labels
            .chunks(self.ly)
            .map(|row| row.iter().map(|&l| char::from_digit(l as u32, 36).unwrap_or('?')).collect::<String>())
            .collect::<Vec<_>>()
            .join("/")
    }

    pub fn from_compact(s: &str) -> Result<Self> {
        let rows: Vec<Vec<usize>> = s
            .split('/')
            .map(|row| row.chars().map(|c| c.to_digit(36).map(|v| v as usize)).collect::<Option<Vec<_>>>())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| crate::Error::InvalidInput(format!("bad configuration string `{s}`")))?;
        Self::from_rows(&rows)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PepsState {
    lx: usize,
    ly: usize,
    phys_dim: usize,
    ancilla: bool,
    sites: Vec<Tensor>,
}

impl PepsState {
    /// Assembles a state from row-major site tensors, checking every bond.
    pub fn from_sites(lx: usize, ly: usize, phys_dim: usize, ancilla: bool, sites: Vec<Tensor>) -> Result<Self> {
        if lx == 0 || ly == 0 || phys_dim == 0 {
            return invalid("lattice extents and physical dimension must be positive");
        }
        if sites.len() != lx * ly {
            return invalid(format!("{} site tensors for a {lx}x{ly} lattice", sites.len()));
        }
        let state = Self { lx, ly, phys_dim, ancilla, sites };
        state.validate()?;
        Ok(state)
    }

    /// Product state of basis vectors; every bond has extent 1.
    pub fn product_state(config: &Configuration, d: usize) -> Result<Self> {
        if let Some(&bad) = config.labels.iter().find(|&&l| l >= d) {
            return invalid(format!("label {bad} out of range for d = {d}"));
        }
        let sites = config
            .labels
            .iter()
            .map(|&l| Tensor::from_fn(&[1, 1, 1, 1, d], |i| if i[PHYS] == l { 1.0 } else { 0.0 }))
            .collect();
        Self::from_sites(config.lx, config.ly, d, false, sites)
    }

    /// Random state with all internal bonds of extent `bond`, entries
    /// uniform in `[-1, 1)`.
    pub fn random(lx: usize, ly: usize, d: usize, bond: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut sites = Vec::with_capacity(lx * ly);
        for x in 0..lx {
            for y in 0..ly {
                let shape = [
                    if x > 0 { bond } else { 1 },
                    if y > 0 { bond } else { 1 },
                    if x + 1 < lx { bond } else { 1 },
                    if y + 1 < ly { bond } else { 1 },
                    d,
                ];
                sites.push(Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0)));
            }
        }
        Self::from_sites(lx, ly, d, false, sites)
    }

    pub fn lx(&self) -> usize {
        self.lx
    }

    pub fn ly(&self) -> usize {
        self.ly
    }

    pub fn phys_dim(&self) -> usize {
        self.phys_dim
    }

    pub fn has_ancilla(&self) -> bool {
        self.ancilla
    }

    pub fn num_sites(&self) -> usize {
        self.lx * self.ly
    }

    pub fn site(&self, x: usize, y: usize) -> &Tensor {
        &self.sites[x * self.ly + y]
    }

    pub fn sites(&self) -> &[Tensor] {
        &self.sites
    }

    /// Replaces one site tensor. Bond consistency is the caller's business;
    /// use [`PepsState::validate`] after a batch of updates.
    pub fn set_site(&mut self, x: usize, y: usize, tensor: Tensor) {
        self.sites[x * self.ly + y] = tensor;
    }

    pub fn scale_site(&mut self, x: usize, y: usize, factor: f64) {
        self.sites[x * self.ly + y].scale(factor);
    }

    /// Largest virtual bond extent in the network.
    pub fn max_bond(&self) -> usize {
        self.sites.iter().flat_map(|t| t.shape()[..4].to_vec()).max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let rank = if self.ancilla { 6 } else { 5 };
        for x in 0..self.lx {
            for y in 0..self.ly {
                let s = self.site(x, y).shape();
                if s.len() != rank {
                    return invalid(format!("site ({x},{y}) has rank {}, expected {rank}", s.len()));
                }
                if x == 0 && s[UP] != 1
                    || y == 0 && s[LEFT] != 1
                    || x + 1 == self.lx && s[DOWN] != 1
                    || y + 1 == self.ly && s[RIGHT] != 1
                {
                    return invalid(format!("boundary bond of site ({x},{y}) is not trivial: {s:?}"));
                }
                if x + 1 < self.lx && s[DOWN] != self.site(x + 1, y).shape()[UP] {
                    return invalid(format!("vertical bond below ({x},{y}) mismatched"));
                }
                if y + 1 < self.ly && s[RIGHT] != self.site(x, y + 1).shape()[LEFT] {
                    return invalid(format!("horizontal bond right of ({x},{y}) mismatched"));
                }
                // projected sites keep a singleton physical axis
                if s[PHYS] != self.phys_dim && s[PHYS] != 1 {
                    return invalid(format!("site ({x},{y}) physical extent {}", s[PHYS]));
                }
                if self.ancilla && s[ANCILLA] != self.phys_dim {
                    return invalid(format!("site ({x},{y}) ancilla extent {}", s[ANCILLA]));
                }
            }
        }
        Ok(())
    }

    /// Projects the physical axis of `(x, y)` onto basis state `label`,
    /// keeping a singleton physical axis.
    pub fn apply_projector(&self, x: usize, y: usize, label: usize) -> Result<Self> {
        if x >= self.lx || y >= self.ly {
            return invalid(format!("site ({x},{y}) outside {}x{}", self.lx, self.ly));
        }
        let site = self.site(x, y);
        let d = site.shape()[PHYS];
        if label >= d {
            return invalid(format!("label {label} out of range for physical extent {d}"));
        }
        let mut shape = site.shape().to_vec();
        shape[PHYS] = 1;
        let projected = Tensor::from_fn(&shape, |i| {
            let mut j = i.to_vec();
            j[PHYS] = label;
            site.get(&j)
        });
        let mut out = self.clone();
        out.set_site(x, y, projected);
        Ok(out)
    }

    /// Exchanges rows and columns: site `(x, y)` moves to `(y, x)` with its
    /// up/left and down/right legs swapped.
    pub fn transpose(&self) -> Self {
        let perm: &[usize] = if self.ancilla { &[1, 0, 3, 2, 4, 5] } else { &[1, 0, 3, 2, 4] };
        let mut sites = Vec::with_capacity(self.sites.len());
        for x in 0..self.ly {
            for y in 0..self.lx {
                sites.push(self.site(y, x).permute(perm).expect("site permutation"));
            }
        }
        Self { lx: self.ly, ly: self.lx, phys_dim: self.phys_dim, ancilla: self.ancilla, sites }
    }

    /// Contracts the whole network into a dense vector.
    ///
    /// The local index of a site is its physical label (times the ancilla
    /// extent, plus the ancilla label, for purifications); site `(0, 0)` is
    /// the most significant digit. Only sensible for small lattices.
    pub fn to_dense(&self) -> Result<Tensor> {
        let ly = self.ly;
        // psi: [P, f_0 .. f_{ly-1}, h]
        let mut shape = vec![1; ly + 2];
        let mut psi = Tensor::zeros(&shape);
        psi.data_mut()[0] = 1.0;
        for x in 0..self.lx {
            for y in 0..ly {
                let site = self.site(x, y);
                let local: usize = site.shape()[PHYS..].iter().product();
                let a = site.clone().reshape(&[
                    site.shape()[UP],
                    site.shape()[LEFT],
                    site.shape()[DOWN],
                    site.shape()[RIGHT],
                    local,
                ])?;
                // contract f_y with up and h with left
                let c = contract(&psi, &a, &[(1 + y, UP), (ly + 1, LEFT)])?;
                // c axes: [P, f_0..f_{y-1}, f_{y+1}..f_{ly-1}, down, right, local]
                let rank = c.rank();
                let (down_ax, right_ax, local_ax) = (rank - 3, rank - 2, rank - 1);
                let mut perm = vec![0, local_ax];
                perm.extend(1..1 + y);
                perm.push(down_ax);
                perm.extend(1 + y..1 + y + (ly - 1 - y));
                perm.push(right_ax);
                let c = c.permute(&perm)?;
                let p = c.shape()[0] * c.shape()[1];
                shape = vec![p];
                shape.extend_from_slice(&c.shape()[2..]);
                psi = c.reshape(&shape)?;
            }
        }
        let n = psi.len();
        psi.reshape(&[n])
    }
}

/// Rank-4 double-layer tensor `(up, left, down, right)`; each axis fuses the
/// ket leg (major) with the bra leg (minor).
#[derive(Clone, Debug, PartialEq)]
pub struct TransferTensor {
    pub tensor: Tensor,
    /// Ket-layer extents of the four virtual legs.
    pub ket: [usize; 4],
    /// Bra-layer extents of the four virtual legs.
    pub bra: [usize; 4],
}

impl TransferTensor {
    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    /// The same object seen upside down: up and down legs exchanged.
    pub fn flip_vertical(&self) -> Self {
        Self {
            tensor: self.tensor.permute(&[DOWN, LEFT, UP, RIGHT]).expect("rank-4"),
            ket: [self.ket[2], self.ket[1], self.ket[0], self.ket[3]],
            bra: [self.bra[2], self.bra[1], self.bra[0], self.bra[3]],
        }
    }

    /// Left and right legs exchanged.
    pub fn flip_horizontal(&self) -> Self {
        Self {
            tensor: self.tensor.permute(&[UP, RIGHT, DOWN, LEFT]).expect("rank-4"),
            ket: [self.ket[0], self.ket[3], self.ket[2], self.ket[1]],
            bra: [self.bra[0], self.bra[3], self.bra[2], self.bra[1]],
        }
    }
}

fn virtual_extents(site: &Tensor) -> [usize; 4] {
    let s = site.shape();
    [s[UP], s[LEFT], s[DOWN], s[RIGHT]]
}

/// Flattens a site to `[virtual legs fused, physical, ancilla]` as a matrix
/// of `rows = prod(virtual)` by `cols = phys * ancilla`.
fn site_matrix(site: &Tensor) -> (usize, usize, usize) {
    let s = site.shape();
    let rows: usize = s[..4].iter().product();
    let phys = s[PHYS];
    let aux: usize = s[PHYS + 1..].iter().product();
    (rows, phys, aux)
}

/// Contracts `ket` with `bra` over physical (and ancilla) axes, with `op`
/// inserted on the physical axis. Operators act as `op[bra, ket]`.
pub fn transfer_pair(ket: &Tensor, bra: &Tensor, op: Option<&Tensor>) -> Result<TransferTensor> {
    let (rows_k, phys_k, aux_k) = site_matrix(ket);
    let (rows_b, phys_b, aux_b) = site_matrix(bra);
    if aux_k != aux_b {
        return invalid("ket and bra ancilla extents differ");
    }
    let ket_data = match op {
        None => {
            if phys_k != phys_b {
                return invalid("ket and bra physical extents differ");
            }
            ket.data().to_vec()
        }
        Some(o) => {
            if o.shape() != [phys_b, phys_k] {
                return invalid(format!(
                    "operator of shape {:?} on physical extents {phys_k} (ket) / {phys_b} (bra)",
                    o.shape()
                ));
            }
            // ket'[v, p_b, a] = sum_{p_k} op[p_b, p_k] ket[v, p_k, a]
            let k3 = ket.clone().reshape(&[rows_k, phys_k, aux_k])?;
            contract(&k3, o, &[(1, 1)])?.permute(&[0, 2, 1])?.into_data()
        }
    };
    let cols = phys_b * aux_b;
    let bra_t = linalg::transpose(bra.data(), rows_b, cols);
    let t = linalg::matmul(&ket_data, &bra_t, rows_k, cols, rows_b);
    let ek = virtual_extents(ket);
    let eb = virtual_extents(bra);
    let t = Tensor::new(vec![ek[0], ek[1], ek[2], ek[3], eb[0], eb[1], eb[2], eb[3]], t)?
        .permute(&[0, 4, 1, 5, 2, 6, 3, 7])?
        .reshape(&[ek[0] * eb[0], ek[1] * eb[1], ek[2] * eb[2], ek[3] * eb[3]])?;
    Ok(TransferTensor { tensor: t, ket: ek, bra: eb })
}

/// `t_{x,y}` (no operator) or `t^O_{x,y}` of one site.
pub fn transfer_tensor(site: &Tensor, op: Option<&Tensor>) -> Result<TransferTensor> {
    if let Some(o) = op {
        let d = site.shape()[PHYS];
        if o.shape() != [d, d] {
            return invalid(format!("operator shape {:?} does not match physical extent {d}", o.shape()));
        }
    }
    transfer_pair(site, site, op)
}

/// Transfer tensors of one row, with optional per-site operators.
pub fn transfer_row(state: &PepsState, x: usize, ops: &[Option<&Tensor>]) -> Result<Vec<TransferTensor>> {
    (0..state.ly())
        .map(|y| transfer_tensor(state.site(x, y), ops.get(y).copied().flatten()))
        .collect()
}
