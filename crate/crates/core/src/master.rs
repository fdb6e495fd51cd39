//! Unconditional Lindblad dynamics `d rho / dt = L*(rho)` on a uniform grid.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::operator::{
    lindblad_schrodinger_unchecked, nearest_density, DensityMatrix, Operator, SystemModel,
};

/// Uniform time grid `t0, t0 + dt, ..., t0 + n_steps dt`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_steps: usize) -> Result<TimeGrid> {
        if !t0.is_finite() {
            return Err(Error::InvalidGrid(format!("t0 = {t0} is not finite")));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidGrid(format!("dt = {dt} must be positive")));
        }
        if n_steps == 0 {
            return Err(Error::InvalidGrid("n_steps must be at least 1".into()));
        }
        if !(t0 + n_steps as f64 * dt).is_finite() {
            return Err(Error::InvalidGrid("end time is not finite".into()));
        }
        Ok(TimeGrid { t0, dt, n_steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Time of grid point `k` (`0..=n_steps`).
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.time(self.n_steps)
    }

    /// Grid index closest to time `t`, clamped to the grid.
    pub fn index_of(&self, t: f64) -> usize {
        let k = ((t - self.t0) / self.dt).round();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.n_steps)
        }
    }
}

#[derive(Clone, Debug)]
pub struct StateTrajectory {
    pub grid: TimeGrid,
    pub states: Vec<DensityMatrix>,
}

impl StateTrajectory {
    pub fn expectations(&self, x: &Operator) -> Vec<f64> {
        self.states
            .iter()
            .map(|rho| rho.as_operator().trace_product(x).re)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Method {
    Euler,
    #[default]
    Rk4,
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Method::Euler),
            "rk4" => Ok(Method::Rk4),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Euler => "euler",
            Method::Rk4 => "rk4",
        })
    }
}

/// One unrepaired step of the chosen scheme.
pub fn master_step(model: &SystemModel, rho: &Operator, dt: f64, method: Method) -> Operator {
    let f = |r: &Operator| lindblad_schrodinger_unchecked(model, r);
    match method {
        Method::Euler => {
            let mut next = rho.clone();
            next.add_scaled_re(&f(rho), dt);
            next
        }
        Method::Rk4 => {
            let k1 = f(rho);
            let mut y = rho.clone();
            y.add_scaled_re(&k1, 0.5 * dt);
            let k2 = f(&y);
            let mut y = rho.clone();
            y.add_scaled_re(&k2, 0.5 * dt);
            let k3 = f(&y);
            let mut y = rho.clone();
            y.add_scaled_re(&k3, dt);
            let k4 = f(&y);
            let mut next = rho.clone();
            next.add_scaled_re(&k1, dt / 6.0);
            next.add_scaled_re(&k2, dt / 3.0);
            next.add_scaled_re(&k3, dt / 3.0);
            next.add_scaled_re(&k4, dt / 6.0);
            next
        }
    }
}

/// Integrates the master equation from the model's initial state, repairing
/// the state after every step.
pub fn integrate_master(
    model: &SystemModel,
    grid: &TimeGrid,
    method: Method,
) -> Result<StateTrajectory> {
    let mut states = Vec::with_capacity(grid.n_steps() + 1);
    states.push(model.initial_state().clone());
    for k in 0..grid.n_steps() {
        let next = master_step(model, states[k].as_operator(), grid.dt(), method);
        if !next.is_finite() {
            return Err(Error::Divergence {
                step: k,
                reason: "non-finite state".into(),
            });
        }
        let repaired = nearest_density(&next).map_err(|e| Error::Divergence {
            step: k,
            reason: e.to_string(),
        })?;
        states.push(repaired);
    }
    Ok(StateTrajectory {
        grid: *grid,
        states,
    })
}
