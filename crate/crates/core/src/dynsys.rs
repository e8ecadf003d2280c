//! Forward-Euler simulators for the noisy Van der Pol oscillator and the
//! Lorenz system.
//!
//! Each step is `z' = z + dt·f(z) + η` with `η ~ N(0, σ²I)` drawn per step
//! and not scaled by `√dt`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{normal, prng, Prng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    Vdp,
    Lorenz,
}

impl System {
    pub fn name(self) -> &'static str {
        match self {
            System::Vdp => "vdp",
            System::Lorenz => "lorenz",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            System::Vdp => 2,
            System::Lorenz => 3,
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vdp" => Ok(System::Vdp),
            "lorenz" => Ok(System::Lorenz),
            other => Err(Error::Unknown {
                kind: "system",
                value: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VdpConfig {
    pub mu: f64,
    pub dt: f64,
    pub t_end: f64,
    pub x0: [f64; 2],
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for VdpConfig {
    fn default() -> Self {
        Self {
            mu: 1.0,
            dt: 0.01,
            t_end: 20.0,
            x0: [2.0, 0.0],
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LorenzConfig {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub dt: f64,
    pub t_end: f64,
    pub x0: [f64; 3],
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for LorenzConfig {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            dt: 0.01,
            t_end: 20.0,
            x0: [1.0, 1.0, 1.0],
            noise_sigma: 0.5,
            seed: 0,
        }
    }
}

fn check_step(dt: f64, t_end: f64, noise: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) || !(t_end > 0.0 && t_end.is_finite()) || !(noise >= 0.0) {
        return Err(Error::Config(format!(
            "need dt > 0, T > 0 and noise >= 0 (got dt = {dt}, T = {t_end}, noise = {noise})"
        )));
    }
    Ok((t_end / dt).round() as usize)
}

impl VdpConfig {
    pub fn steps(&self) -> Result<usize> {
        check_step(self.dt, self.t_end, self.noise_sigma)
    }
}

impl LorenzConfig {
    pub fn steps(&self) -> Result<usize> {
        check_step(self.dt, self.t_end, self.noise_sigma)
    }
}

fn noise(rng: &mut Prng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        normal(rng, sigma)
    }
}

/// One Euler step of `ẋ1 = x2, ẋ2 = μ(1 − x1²)x2 − x1`.
pub fn vdp_step(z: [f64; 2], cfg: &VdpConfig, rng: &mut Prng) -> [f64; 2] {
    let [x1, x2] = z;
    let f = [x2, cfg.mu * (1.0 - x1 * x1) * x2 - x1];
    let n0 = noise(rng, cfg.noise_sigma);
    let n1 = noise(rng, cfg.noise_sigma);
    [x1 + cfg.dt * f[0] + n0, x2 + cfg.dt * f[1] + n1]
}

/// One Euler step of the Lorenz equations.
pub fn lorenz_step(z: [f64; 3], cfg: &LorenzConfig, rng: &mut Prng) -> [f64; 3] {
    let [x1, x2, x3] = z;
    let g = [
        cfg.sigma * (x2 - x1),
        x1 * (cfg.rho - x3) - x2,
        x1 * x2 - cfg.beta * x3,
    ];
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = z[i] + cfg.dt * g[i] + noise(rng, cfg.noise_sigma);
    }
    out
}

/// `N × d_state` states; row 0 is the initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub system: System,
    pub dt: f64,
    pub states: Tensor,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }
}

/// `N = T/dt` states starting at `x0`.
pub fn simulate_vdp(cfg: &VdpConfig) -> Result<Trajectory> {
    let n = cfg.steps()?;
    let mut rng = prng(cfg.seed);
    let mut z = cfg.x0;
    let mut data = Vec::with_capacity(n * 2);
    for i in 0..n {
        if i > 0 {
            z = vdp_step(z, cfg, &mut rng);
        }
        data.extend_from_slice(&z);
    }
    finish(System::Vdp, cfg.dt, n, data)
}

pub fn simulate_lorenz(cfg: &LorenzConfig) -> Result<Trajectory> {
    let n = cfg.steps()?;
    let mut rng = prng(cfg.seed);
    let mut z = cfg.x0;
    let mut data = Vec::with_capacity(n * 3);
    for i in 0..n {
        if i > 0 {
            z = lorenz_step(z, cfg, &mut rng);
        }
        data.extend_from_slice(&z);
    }
    finish(System::Lorenz, cfg.dt, n, data)
}

fn finish(system: System, dt: f64, n: usize, data: Vec<f64>) -> Result<Trajectory> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract(format!("{system} trajectory diverged")));
    }
    Ok(Trajectory {
        system,
        dt,
        states: Tensor::from_vec([n, system.dim()], data),
    })
}

/// Default-configured trajectory of `system` with noise seed `seed`.
pub fn simulate(system: System, seed: u64) -> Result<Trajectory> {
    match system {
        System::Vdp => simulate_vdp(&VdpConfig {
            seed,
            ..VdpConfig::default()
        }),
        System::Lorenz => simulate_lorenz(&LorenzConfig {
            seed,
            ..LorenzConfig::default()
        }),
    }
}
