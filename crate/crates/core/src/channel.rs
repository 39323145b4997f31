//! Reciprocal block-fading MIMO channels for single- and multi-cell topologies.
//!
//! Only uplink matrices are stored. `H[c_rx][c_tx][k]` maps the `N_k` antennas of
//! user `k` in cell `c_tx` to the `N` antennas of the BTS in cell `c_rx`; the
//! downlink channel from that BTS to the user is its conjugate transpose.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cscg_matrix, CMat, CVec};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub num_cells: usize,
    pub users_per_cell: usize,
    pub bts_antennas: usize,
    /// `N_k`, one entry per user position (shared by all cells).
    pub user_antennas: Vec<usize>,
    /// Amplitude scale per `(c_rx, c_tx)`; empty means all ones.
    #[serde(default)]
    pub cross_gain: Vec<Vec<f64>>,
    pub uplink_noise_var: f64,
    pub user_noise_vars: Vec<f64>,
    pub user_powers: Vec<f64>,
    /// Per-BTS downlink power budget.
    pub bts_power: f64,
}

impl TopologySpec {
    /// Equal-strength topology with unit user powers, `P = K`, and noise `sigma2`
    /// in both directions.
    pub fn uniform(
        num_cells: usize,
        users_per_cell: usize,
        bts_antennas: usize,
        user_antennas: usize,
        sigma2: f64,
    ) -> Self {
        Self {
            num_cells,
            users_per_cell,
            bts_antennas,
            user_antennas: vec![user_antennas; users_per_cell],
            cross_gain: Vec::new(),
            uplink_noise_var: sigma2,
            user_noise_vars: vec![sigma2; users_per_cell],
            user_powers: vec![1.0; users_per_cell],
            bts_power: users_per_cell as f64,
        }
    }

    pub fn single_cell(users: usize, bts_antennas: usize, user_antennas: usize, sigma2: f64) -> Self {
        Self::uniform(1, users, bts_antennas, user_antennas, sigma2)
    }

    /// Sets both noise levels from an SNR in dB, `SNR = P_k / sigma^2` with the
    /// first user's power as reference.
    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        let p = self.user_powers.first().copied().unwrap_or(1.0);
        let sigma2 = p / 10f64.powf(snr_db / 10.0);
        self.uplink_noise_var = sigma2;
        self.user_noise_vars = vec![sigma2; self.users_per_cell];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.num_cells == 0 || self.users_per_cell == 0 || self.bts_antennas == 0 {
            return cfg("num_cells, users_per_cell and bts_antennas must be >= 1".into());
        }
        let k = self.users_per_cell;
        for (name, len) in [
            ("user_antennas", self.user_antennas.len()),
            ("user_noise_vars", self.user_noise_vars.len()),
            ("user_powers", self.user_powers.len()),
        ] {
            if len != k {
                return cfg(format!("{name} has {len} entries, expected {k}"));
            }
        }
        if self.user_antennas.contains(&0) {
            return cfg("every user needs at least one antenna".into());
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.uplink_noise_var)
            || !positive(self.bts_power)
            || !self.user_noise_vars.iter().all(|&x| positive(x))
            || !self.user_powers.iter().all(|&x| positive(x))
        {
            return cfg("noise variances and powers must be strictly positive".into());
        }
        if !self.cross_gain.is_empty() {
            let c = self.num_cells;
            if self.cross_gain.len() != c || self.cross_gain.iter().any(|r| r.len() != c) {
                return cfg(format!("cross_gain must be {c}x{c}"));
            }
            for (i, row) in self.cross_gain.iter().enumerate() {
                if row.iter().any(|&g| !g.is_finite() || g < 0.0) {
                    return cfg("cross_gain entries must be finite and nonnegative".into());
                }
                if row[i] != 1.0 {
                    return cfg("cross_gain diagonal must be 1".into());
                }
            }
        }
        Ok(())
    }

    pub fn cross_gain(&self, c_rx: usize, c_tx: usize) -> f64 {
        if self.cross_gain.is_empty() {
            1.0
        } else {
            self.cross_gain[c_rx][c_tx]
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_cells * self.users_per_cell
    }

    /// Global index of user `k` in cell `c`.
    #[inline]
    pub fn user_index(&self, c: usize, k: usize) -> usize {
        c * self.users_per_cell + k
    }
}

/// All uplink channel matrices of one fading block. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    spec: TopologySpec,
    links: Vec<CMat>,
    seed: u64,
}

/// Draws every link i.i.d. CSCG with unit variance, scaled by its cross gain.
/// Each link has its own keyed stream, so the result depends only on `(spec, seed)`.
pub fn sample_channels(spec: &TopologySpec, seed: u64) -> Result<ChannelSet> {
    spec.validate()?;
    let c = spec.num_cells;
    let k = spec.users_per_cell;
    let mut links = Vec::with_capacity(c * c * k);
    for c_rx in 0..c {
        for c_tx in 0..c {
            let gain = spec.cross_gain(c_rx, c_tx);
            for u in 0..k {
                let mut rng = stream(seed, Domain::Channel, &[c_rx as u64, c_tx as u64, u as u64]);
                let h = cscg_matrix(&mut rng, spec.bts_antennas, spec.user_antennas[u], 1.0);
                links.push(h.map(|z| z * gain));
            }
        }
    }
    Ok(ChannelSet {
        spec: spec.clone(),
        links,
        seed,
    })
}

impl ChannelSet {
    /// Builds a set from explicit matrices ordered `[c_rx][c_tx][k]`.
    pub fn from_links(spec: TopologySpec, links: Vec<CMat>) -> Result<Self> {
        spec.validate()?;
        let c = spec.num_cells;
        let k = spec.users_per_cell;
        if links.len() != c * c * k {
            return Err(Error::Shape(format!(
                "expected {} link matrices, got {}",
                c * c * k,
                links.len()
            )));
        }
        for (idx, h) in links.iter().enumerate() {
            let u = idx % k;
            if h.nrows() != spec.bts_antennas || h.ncols() != spec.user_antennas[u] {
                return Err(Error::Shape(format!(
                    "link {idx} is {}x{}, expected {}x{}",
                    h.nrows(),
                    h.ncols(),
                    spec.bts_antennas,
                    spec.user_antennas[u]
                )));
            }
            if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::Numerical(format!("link {idx} has non-finite entries")));
            }
        }
        Ok(Self { spec, links, seed: 0 })
    }

    /// Single-cell convenience constructor.
    pub fn single_cell(spec: TopologySpec, direct: Vec<CMat>) -> Result<Self> {
        if spec.num_cells != 1 {
            return Err(Error::Config("single_cell requires num_cells = 1".into()));
        }
        Self::from_links(spec, direct)
    }

    pub fn spec(&self) -> &TopologySpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_cells(&self) -> usize {
        self.spec.num_cells
    }

    pub fn users_per_cell(&self) -> usize {
        self.spec.users_per_cell
    }

    pub fn bts_antennas(&self) -> usize {
        self.spec.bts_antennas
    }

    pub fn user_antennas(&self, k: usize) -> usize {
        self.spec.user_antennas[k]
    }

    /// Uplink matrix from user `k` of cell `c_tx` to the BTS of cell `c_rx`.
    #[inline]
    pub fn link(&self, c_rx: usize, c_tx: usize, k: usize) -> &CMat {
        let c = self.spec.num_cells;
        &self.links[(c_rx * c + c_tx) * self.spec.users_per_cell + k]
    }

    #[inline]
    pub fn direct(&self, c: usize, k: usize) -> &CMat {
        self.link(c, c, k)
    }

    /// Same channels with different noise levels and powers.
    pub fn with_spec(&self, spec: TopologySpec) -> Result<Self> {
        spec.validate()?;
        if spec.num_cells != self.spec.num_cells
            || spec.users_per_cell != self.spec.users_per_cell
            || spec.bts_antennas != self.spec.bts_antennas
            || spec.user_antennas != self.spec.user_antennas
        {
            return Err(Error::Shape("replacement spec changes the topology dimensions".into()));
        }
        Ok(Self {
            spec,
            links: self.links.clone(),
            seed: self.seed,
        })
    }

    /// Single-cell channel restricted to the listed users (in the given order).
    pub fn select_users(&self, users: &[usize]) -> Result<Self> {
        if self.spec.num_cells != 1 {
            return Err(Error::Config("user selection is defined for a single cell".into()));
        }
        if users.is_empty() || users.iter().any(|&u| u >= self.spec.users_per_cell) {
            return Err(Error::Config(format!("invalid user subset {users:?}")));
        }
        let pick = |v: &Vec<f64>| users.iter().map(|&u| v[u]).collect::<Vec<_>>();
        let spec = TopologySpec {
            num_cells: 1,
            users_per_cell: users.len(),
            bts_antennas: self.spec.bts_antennas,
            user_antennas: users.iter().map(|&u| self.spec.user_antennas[u]).collect(),
            cross_gain: Vec::new(),
            uplink_noise_var: self.spec.uplink_noise_var,
            user_noise_vars: pick(&self.spec.user_noise_vars),
            user_powers: pick(&self.spec.user_powers),
            bts_power: self.spec.bts_power,
        };
        let links = users.iter().map(|&u| self.links[u].clone()).collect();
        Ok(Self { spec, links, seed: self.seed })
    }

    /// `[H_1 v_1, ..., H_K v_K]` as seen at BTS `c_rx` from the users of `c_tx`.
    pub fn effective(&self, c_rx: usize, c_tx: usize, v: &[CVec]) -> Result<CMat> {
        let k = self.spec.users_per_cell;
        if v.len() != k {
            return Err(Error::Shape(format!("{} precoders for {k} users", v.len())));
        }
        let mut out = CMat::zeros(self.spec.bts_antennas, k);
        for (u, vu) in v.iter().enumerate() {
            let h = self.link(c_rx, c_tx, u);
            if vu.len() != h.ncols() {
                return Err(Error::Shape(format!(
                    "precoder {u} has length {}, user has {} antennas",
                    vu.len(),
                    h.ncols()
                )));
            }
            out.set_column(u, &(h * vu));
        }
        Ok(out)
    }
}

/// Composite `N x K` matrix whose `k`-th column is `H_k v_k` (single cell).
pub fn effective_channel(channels: &ChannelSet, v: &[CVec]) -> Result<CMat> {
    if channels.num_cells() != 1 {
        return Err(Error::Config("effective_channel expects a single-cell channel set".into()));
    }
    channels.effective(0, 0, v)
}
