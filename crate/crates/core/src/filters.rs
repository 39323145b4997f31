//! Filter state shared by the optimizers and the training engine.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::TopologySpec;
use crate::error::{Error, Result};
use crate::linalg::{c64, cscg_vector, CMat, CVec};

/// Linear filtering or successive cancellation / pre-compensation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Linear,
    Successive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Uplink,
    Downlink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Structure {
    pub kind: Kind,
    pub direction: Direction,
}

impl Structure {
    pub fn new(kind: Kind, direction: Direction) -> Self {
        Self { kind, direction }
    }
}

/// Decoding order inside a cell: `order[p]` is the user decoded at position `p`.
/// Uplink cancellation follows this order; downlink pre-compensation runs in reverse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct DecodingOrder {
    order: Vec<usize>,
    rank: Vec<usize>,
}

impl DecodingOrder {
    pub fn natural(k: usize) -> Self {
        Self {
            order: (0..k).collect(),
            rank: (0..k).collect(),
        }
    }

    pub fn from_permutation(order: Vec<usize>) -> Result<Self> {
        let k = order.len();
        let mut rank = vec![usize::MAX; k];
        for (p, &u) in order.iter().enumerate() {
            if u >= k || rank[u] != usize::MAX {
                return Err(Error::Config(format!("{order:?} is not a permutation of 0..{k}")));
            }
            rank[u] = p;
        }
        Ok(Self { order, rank })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.order
    }

    #[inline]
    pub fn rank(&self, k: usize) -> usize {
        self.rank[k]
    }

    /// True when user `i` is decoded before user `k`.
    #[inline]
    pub fn precedes(&self, i: usize, k: usize) -> bool {
        self.rank[i] < self.rank[k]
    }

    /// Users decoded before `k`, in decoding order.
    pub fn before(&self, k: usize) -> Vec<usize> {
        self.order[..self.rank[k]].to_vec()
    }
}

impl TryFrom<Vec<usize>> for DecodingOrder {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::from_permutation(v)
    }
}

impl From<DecodingOrder> for Vec<usize> {
    fn from(o: DecodingOrder) -> Self {
        o.order
    }
}

impl Kind {
    /// Whether the uplink estimate of user `k` still contains own-cell user `i`.
    /// Successive cancellation removes every user decoded before `k`.
    #[inline]
    pub fn uplink_sees(self, order: &DecodingOrder, k: usize, i: usize) -> bool {
        match self {
            Kind::Linear => true,
            Kind::Successive => !order.precedes(i, k),
        }
    }

    /// Whether downlink user `k` receives own-cell stream `i`. Pre-compensation in
    /// reverse order removes every user decoded after `k`.
    #[inline]
    pub fn downlink_sees(self, order: &DecodingOrder, k: usize, i: usize) -> bool {
        match self {
            Kind::Linear => true,
            Kind::Successive => !order.precedes(k, i),
        }
    }
}

/// How the first precoders are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Init {
    /// `sqrt(P_k) e_1`.
    #[default]
    Basis,
    /// Unit-norm CSCG direction scaled to full power.
    Random { seed: u64 },
}

/// Uplink precoders `v`, BTS filters `g`, downlink precoders `t`, user filters
/// `r`, per-cell feedback matrices `B` and bias factors, indexed by the global
/// user index `c * K + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub v: Vec<CVec>,
    pub g: Vec<CVec>,
    pub t: Vec<CVec>,
    pub r: Vec<CVec>,
    pub feedback: Vec<CMat>,
    pub alpha: Vec<Complex64>,
    pub order: DecodingOrder,
}

impl FilterBank {
    /// All-zero filters, identity feedback.
    pub fn zeros(spec: &TopologySpec) -> Self {
        let users = spec.num_users();
        let k = spec.users_per_cell;
        let user_vec = |u: usize| CVec::zeros(spec.user_antennas[u % k]);
        Self {
            v: (0..users).map(user_vec).collect(),
            g: vec![CVec::zeros(spec.bts_antennas); users],
            t: vec![CVec::zeros(spec.bts_antennas); users],
            r: (0..users).map(user_vec).collect(),
            feedback: vec![CMat::identity(k, k); spec.num_cells],
            alpha: vec![c64(0.0, 0.0); users],
            order: DecodingOrder::natural(k),
        }
    }

    /// Zero bank with uplink precoders set per `init` at full power.
    pub fn initial(spec: &TopologySpec, init: Init) -> Self {
        let mut bank = Self::zeros(spec);
        bank.v = initial_user_vectors(spec, init);
        bank
    }

    pub fn with_order(mut self, order: DecodingOrder) -> Result<Self> {
        if order.len() != self.feedback.first().map_or(0, |b| b.nrows()) {
            return Err(Error::Config("decoding order length differs from users per cell".into()));
        }
        self.order = order;
        Ok(self)
    }

    pub fn num_users(&self) -> usize {
        self.v.len()
    }

    /// Checks unit diagonal and zero entries for users decoded later
    /// (lower-triangular in the natural order).
    pub fn feedback_is_triangular(&self, tol: f64) -> bool {
        self.feedback.iter().all(|b| {
            let k = b.nrows();
            (0..k).all(|row| {
                (0..k).all(|col| {
                    let z = b[(row, col)];
                    if row == col {
                        (z - c64(1.0, 0.0)).norm() <= tol
                    } else if self.order.precedes(col, row) {
                        true
                    } else {
                        z.norm() <= tol
                    }
                })
            })
        })
    }

    /// Largest relative violation of `||v_k||^2 = P_k`.
    pub fn uplink_power_error(&self, spec: &TopologySpec) -> f64 {
        let k = spec.users_per_cell;
        self.v
            .iter()
            .enumerate()
            .map(|(u, v)| {
                let p = spec.user_powers[u % k];
                (v.norm_squared() - p).abs() / p
            })
            .fold(0.0, f64::max)
    }

    /// Largest relative violation of `sum_k ||t_k||^2 = P` over BTSs.
    pub fn downlink_power_error(&self, spec: &TopologySpec) -> f64 {
        let k = spec.users_per_cell;
        (0..spec.num_cells)
            .map(|c| {
                let s: f64 = self.t[c * k..(c + 1) * k].iter().map(|t| t.norm_squared()).sum();
                (s - spec.bts_power).abs() / spec.bts_power
            })
            .fold(0.0, f64::max)
    }
}

pub(crate) fn initial_user_vectors(spec: &TopologySpec, init: Init) -> Vec<CVec> {
    let k = spec.users_per_cell;
    (0..spec.num_users())
        .map(|u| {
            let n = spec.user_antennas[u % k];
            let p = spec.user_powers[u % k];
            match init {
                Init::Basis => {
                    let mut v = CVec::zeros(n);
                    v[0] = c64(p.sqrt(), 0.0);
                    v
                }
                Init::Random { seed } => {
                    let mut rng = crate::rng::stream(seed, crate::rng::Domain::Init, &[u as u64]);
                    random_direction(&mut rng, n, p)
                }
            }
        })
        .collect()
}

/// CSCG direction with squared norm `power`.
pub fn random_direction<R: Rng + ?Sized>(rng: &mut R, n: usize, power: f64) -> CVec {
    loop {
        let x = cscg_vector(rng, n, 1.0);
        let norm = x.norm();
        if norm > 1e-12 {
            return x * c64(power.sqrt() / norm, 0.0);
        }
    }
}
