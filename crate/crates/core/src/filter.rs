//! Quantum filters in Schrödinger form.
//!
//! The normalized filters propagate the conditional density matrix `rho_t`
//! with `pi_t(X) = tr[rho_t X]`:
//!
//! * homodyne: `d rho = L*(rho) dt + (L rho + rho L† - m rho)(dy - m dt)`,
//!   `m = tr[(L + L†) rho]`;
//! * counting: `d rho = L*(rho) dt + (L rho L† / n - rho)(dN - n dt)`,
//!   `n = tr[L†L rho]`.
//!
//! The linear filter propagates an unnormalized `sigma_t` driven directly by
//! the homodyne record, `d sigma = L*(sigma) dt + (L sigma + sigma L†) dy`,
//! and recovers the conditional state as `sigma_t / tr[sigma_t]`.
//!
//! All schemes are Euler–Maruyama. The observed quadrature is `A + A†`.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::master::TimeGrid;
use crate::operator::{
    lindblad_schrodinger_unchecked, nearest_density, DensityMatrix, Detection, Operator,
    SystemModel,
};

/// Below this rate trace a requested jump is an inconsistent record.
pub const JUMP_FLOOR: f64 = 1e-12;

/// Where a simulated record came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedProvenance {
    pub master_seed: u64,
    pub traj_index: u64,
}

/// Discrete observation increments on a grid: `dy_k` (homodyne) or `dN_k` (counting).
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationRecord {
    grid: TimeGrid,
    detection: Detection,
    increments: Vec<f64>,
    provenance: Option<SeedProvenance>,
}

impl ObservationRecord {
    pub fn new(
        grid: TimeGrid,
        detection: Detection,
        increments: Vec<f64>,
        provenance: Option<SeedProvenance>,
    ) -> Result<ObservationRecord> {
        if increments.len() != grid.n_steps() {
            return Err(Error::LengthMismatch {
                expected: grid.n_steps(),
                found: increments.len(),
            });
        }
        for (k, &v) in increments.iter().enumerate() {
            let ok = match detection {
                Detection::Homodyne => v.is_finite(),
                Detection::Counting => v == 0.0 || v == 1.0,
            };
            if !ok {
                return Err(Error::InvalidRecord(format!(
                    "increment {k} = {v} is not a valid {detection} increment"
                )));
            }
        }
        Ok(ObservationRecord {
            grid,
            detection,
            increments,
            provenance,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn detection(&self) -> Detection {
        self.detection
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn provenance(&self) -> Option<SeedProvenance> {
        self.provenance
    }

    /// Integrated record `y_k = sum_{j<k} dy_j`, `k = 0..=n_steps`.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.increments.len() + 1);
        let mut acc = 0.0;
        out.push(acc);
        for &d in &self.increments {
            acc += d;
            out.push(acc);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterKind {
    Normalized,
    Linear,
}

impl FromStr for FilterKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "normalized" => Ok(FilterKind::Normalized),
            "linear" => Ok(FilterKind::Linear),
            other => Err(format!("unknown filter kind `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FilterStates {
    Normalized(Vec<DensityMatrix>),
    /// Unnormalized states with their traces.
    Linear {
        states: Vec<Operator>,
        norms: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterTrajectory {
    pub grid: TimeGrid,
    pub states: FilterStates,
}

impl FilterTrajectory {
    pub fn len(&self) -> usize {
        match &self.states {
            FilterStates::Normalized(s) => s.len(),
            FilterStates::Linear { states, .. } => states.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> FilterKind {
        match self.states {
            FilterStates::Normalized(_) => FilterKind::Normalized,
            FilterStates::Linear { .. } => FilterKind::Linear,
        }
    }

    /// Conditional states, if this is a normalized trajectory.
    pub fn densities(&self) -> Option<&[DensityMatrix]> {
        match &self.states {
            FilterStates::Normalized(s) => Some(s),
            FilterStates::Linear { .. } => None,
        }
    }

    pub fn norms(&self) -> Option<&[f64]> {
        match &self.states {
            FilterStates::Normalized(_) => None,
            FilterStates::Linear { norms, .. } => Some(norms),
        }
    }

    /// Conditional expectation of `x` at every grid point; the linear filter
    /// is normalized on the fly.
    pub fn expectations(&self, x: &Operator) -> Vec<f64> {
        match &self.states {
            FilterStates::Normalized(s) => s
                .iter()
                .map(|r| r.as_operator().trace_product(x).re)
                .collect(),
            FilterStates::Linear { states, norms } => states
                .iter()
                .zip(norms)
                .map(|(s, n)| s.trace_product(x).re / n)
                .collect(),
        }
    }
}

/// `tr[(L + L†) rho]`, the homodyne signal drift per unit time.
pub fn homodyne_mean(model: &SystemModel, rho: &Operator) -> f64 {
    2.0 * model.coupling().trace_product(rho).re
}

/// `tr[L†L rho]`, the photon counting intensity.
pub fn counting_rate(model: &SystemModel, rho: &Operator) -> f64 {
    model.decay_operator().trace_product(rho).re
}

/// Euler–Maruyama homodyne update without repair.
pub fn homodyne_sme_update(model: &SystemModel, rho: &Operator, dy: f64, dt: f64) -> Operator {
    let m = homodyne_mean(model, rho);
    let l_rho = model.coupling() * rho;
    let mut gain = &l_rho + &l_rho.adjoint();
    gain.add_scaled_re(rho, -m);
    let mut next = rho.clone();
    next.add_scaled_re(&lindblad_schrodinger_unchecked(model, rho), dt);
    next.add_scaled_re(&gain, dy - m * dt);
    next
}

fn check_step(model: &SystemModel, rho: &Operator, increment: f64, dt: f64) -> Result<()> {
    model.check_dim(rho.dim())?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidGrid(format!("dt = {dt} must be positive")));
    }
    if !increment.is_finite() {
        return Err(Error::BadIncrement(increment));
    }
    Ok(())
}

fn repair(next: &Operator) -> Result<DensityMatrix> {
    if !next.is_finite() {
        return Err(Error::Divergence {
            step: 0,
            reason: "non-finite state".into(),
        });
    }
    nearest_density(next)
}

/// One homodyne filter step: update, then project back onto the states.
pub fn homodyne_sme_step(
    model: &SystemModel,
    rho: &DensityMatrix,
    dy: f64,
    dt: f64,
) -> Result<DensityMatrix> {
    check_step(model, rho.as_operator(), dy, dt)?;
    repair(&homodyne_sme_update(model, rho.as_operator(), dy, dt))
}

/// Counting update without repair. The no-jump part uses the explicit
/// generator `L*(rho) - L rho L† + n rho`; a count applies the jump map
/// to the result of the no-jump part.
pub fn counting_sme_update(
    model: &SystemModel,
    rho: &Operator,
    dn: f64,
    dt: f64,
) -> Result<Operator> {
    let rate = counting_rate(model, rho);
    let jump = if dn == 1.0 {
        if !(rate > JUMP_FLOOR) {
            return Err(Error::ImpossibleJump { rate });
        }
        true
    } else if dn == 0.0 {
        false
    } else {
        return Err(Error::BadIncrement(dn));
    };
    let l = model.coupling();
    let ld = model.coupling_adjoint();
    let mut drift = lindblad_schrodinger_unchecked(model, rho);
    drift.add_scaled_re(&(&(l * rho) * ld), -1.0);
    drift.add_scaled_re(rho, rate);
    let mut next = rho.clone();
    next.add_scaled_re(&drift, dt);
    if jump {
        let emitted = &(l * &next) * ld;
        let norm = emitted.trace().re;
        if !(norm > JUMP_FLOOR) {
            return Err(Error::ImpossibleJump { rate: norm });
        }
        next = emitted.scale_re(1.0 / norm);
    }
    Ok(next)
}

/// One counting filter step with repair.
pub fn counting_sme_step(
    model: &SystemModel,
    rho: &DensityMatrix,
    dn: f64,
    dt: f64,
) -> Result<DensityMatrix> {
    check_step(model, rho.as_operator(), dn, dt)?;
    repair(&counting_sme_update(model, rho.as_operator(), dn, dt)?)
}

/// One step of the linear (unnormalized) homodyne filter. No repair.
pub fn zakai_step(model: &SystemModel, sigma: &Operator, dy: f64, dt: f64) -> Result<Operator> {
    check_step(model, sigma, dy, dt)?;
    let l_sigma = model.coupling() * sigma;
    let mut next = sigma.clone();
    next.add_scaled_re(&lindblad_schrodinger_unchecked(model, sigma), dt);
    next.add_scaled_re(&(&l_sigma + &(sigma * model.coupling_adjoint())), dy);
    if !next.is_finite() {
        return Err(Error::NonFinite("linear filter state"));
    }
    let tr = next.trace().re;
    if !(tr > 0.0) {
        return Err(Error::NonPositiveTrace(tr));
    }
    Ok(next)
}

/// `sigma / tr(sigma)`, projected onto the density matrices.
pub fn normalize_linear(sigma: &Operator) -> Result<DensityMatrix> {
    let tr = sigma.trace().re;
    if !(tr > 0.0) {
        return Err(Error::NonPositiveTrace(tr));
    }
    nearest_density(&sigma.scale_re(1.0 / tr))
}

/// Runs a filter over a whole record from the model's initial state.
pub fn run_filter(
    model: &SystemModel,
    record: &ObservationRecord,
    kind: FilterKind,
) -> Result<FilterTrajectory> {
    if model.detection() != record.detection() {
        return Err(Error::DetectionMismatch {
            model: model.detection(),
            record: record.detection(),
        });
    }
    let grid = *record.grid();
    let dt = grid.dt();
    let states = match kind {
        FilterKind::Normalized => {
            let mut states = Vec::with_capacity(grid.n_steps() + 1);
            states.push(model.initial_state().clone());
            for (k, &inc) in record.increments().iter().enumerate() {
                let rho = &states[k];
                let next = match record.detection() {
                    Detection::Homodyne => homodyne_sme_step(model, rho, inc, dt),
                    Detection::Counting => counting_sme_step(model, rho, inc, dt),
                }
                .map_err(|e| e.at_step(k))?;
                states.push(next);
            }
            FilterStates::Normalized(states)
        }
        FilterKind::Linear => {
            if record.detection() != Detection::Homodyne {
                return Err(Error::LinearRequiresHomodyne);
            }
            let mut states = Vec::with_capacity(grid.n_steps() + 1);
            let mut norms = Vec::with_capacity(grid.n_steps() + 1);
            let sigma0 = model.initial_state().as_operator().clone();
            norms.push(sigma0.trace().re);
            states.push(sigma0);
            for (k, &dy) in record.increments().iter().enumerate() {
                let next = zakai_step(model, &states[k], dy, dt).map_err(|e| e.at_step(k))?;
                norms.push(next.trace().re);
                states.push(next);
            }
            FilterStates::Linear { states, norms }
        }
    };
    Ok(FilterTrajectory { grid, states })
}

/// Innovation increments from the pre-step conditional states:
/// `dy - tr[(L + L†) rho] dt` or `dN - tr[L†L rho] dt`.
pub fn innovations(
    model: &SystemModel,
    record: &ObservationRecord,
    traj: &FilterTrajectory,
) -> Result<Vec<f64>> {
    let states = traj
        .densities()
        .ok_or_else(|| Error::InvalidRecord("innovations need a normalized trajectory".into()))?;
    let n = record.increments().len();
    if states.len() != n + 1 {
        return Err(Error::LengthMismatch {
            expected: n + 1,
            found: states.len(),
        });
    }
    let dt = record.grid().dt();
    Ok(record
        .increments()
        .iter()
        .zip(states)
        .map(|(&inc, rho)| innovation(model, record.detection(), rho.as_operator(), inc, dt))
        .collect())
}

pub(crate) fn innovation(
    model: &SystemModel,
    detection: Detection,
    rho: &Operator,
    inc: f64,
    dt: f64,
) -> f64 {
    match detection {
        Detection::Homodyne => inc - homodyne_mean(model, rho) * dt,
        Detection::Counting => inc - counting_rate(model, rho) * dt,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::qubit::*;
    use crate::operator::{commutator, hermitian_eigen};
    use num_complex::Complex64;

    fn model(h: Operator, l: Operator, rho0: DensityMatrix, det: Detection) -> SystemModel {
        SystemModel::new(h, l, rho0, det).unwrap()
    }

    fn decay(gamma: f64, det: Detection) -> SystemModel {
        model(
            Operator::zeros(2),
            sigma_minus().scale_re(gamma.sqrt()),
            excited(),
            det,
        )
    }

    #[test]
    fn homodyne_without_coupling_is_closed_euler() {
        let h = sigma_x().scale_re(0.7);
        let m = model(
            h.clone(),
            Operator::zeros(2),
            excited(),
            Detection::Homodyne,
        );
        let rho = excited();
        let dt = 0.01;
        for dy in [0.0, 0.3, -1.2] {
            let next = homodyne_sme_update(&m, rho.as_operator(), dy, dt);
            let mut expected = rho.as_operator().clone();
            expected.add_scaled(
                &commutator(&h, rho.as_operator()).unwrap(),
                Complex64::new(0.0, -dt),
            );
            assert!(next.max_abs_diff(&expected) < 1e-16);
        }
    }

    #[test]
    fn dark_state_is_fixed() {
        let m = decay(1.0, Detection::Homodyne);
        for dy in [-0.5, 0.0, 0.2] {
            let next = homodyne_sme_step(&m, &ground(), dy, 0.01).unwrap();
            assert!(next.as_operator().max_abs_diff(ground().as_operator()) <= 1e-10);
            let sigma = zakai_step(&m, ground().as_operator(), dy, 0.01).unwrap();
            assert!(sigma.max_abs_diff(ground().as_operator()) <= 1e-10);
        }
        let mc = decay(1.0, Detection::Counting);
        let next = counting_sme_step(&mc, &ground(), 0.0, 0.01).unwrap();
        assert!(next.as_operator().max_abs_diff(ground().as_operator()) <= 1e-10);
    }

    #[test]
    fn homodyne_single_step_hand_expansion() {
        // H = 0, L = sigma_z, rho = |+><+|, dy = 0.1, dt = 0.01:
        // L*(rho) = [[0,-1],[-1,0]], m = 0, L rho + rho L† = sigma_z
        // rho' = [[0.6, 0.49], [0.49, 0.4]]
        let m = model(Operator::zeros(2), sigma_z(), plus(), Detection::Homodyne);
        let raw = homodyne_sme_update(&m, plus().as_operator(), 0.1, 0.01);
        let expected = Operator::from_real(2, &[0.6, 0.49, 0.49, 0.4]).unwrap();
        assert!(raw.max_abs_diff(&expected) < 1e-15);

        // det < 0, so the repaired state is the clamped projection onto the
        // top eigenvector of the raw update
        let (tr, det): (f64, f64) = (1.0, 0.6 * 0.4 - 0.49 * 0.49);
        let top = 0.5 * tr + (0.25 * tr * tr - det).sqrt();
        let v = [0.49, top - 0.6];
        let n2 = v[0] * v[0] + v[1] * v[1];
        let projected = Operator::from_real(
            2,
            &[
                v[0] * v[0] / n2,
                v[0] * v[1] / n2,
                v[0] * v[1] / n2,
                v[1] * v[1] / n2,
            ],
        )
        .unwrap();
        let repaired = homodyne_sme_step(&m, &plus(), 0.1, 0.01).unwrap();
        assert!(repaired.as_operator().max_abs_diff(&projected) < 1e-12);
        // moved toward the sigma_z = +1 eigenstate
        assert!(repaired.as_operator().get(0, 0).re > 0.5);
    }

    #[test]
    fn counting_examples() {
        let h = sigma_y().scale_re(0.4);
        let closed = model(h.clone(), Operator::zeros(2), plus(), Detection::Counting);
        let next = counting_sme_update(&closed, plus().as_operator(), 0.0, 0.01).unwrap();
        let mut expected = plus().as_operator().clone();
        expected.add_scaled(
            &commutator(&h, plus().as_operator()).unwrap(),
            Complex64::new(0.0, -0.01),
        );
        assert!(next.max_abs_diff(&expected) < 1e-16);

        let m = decay(1.0, Detection::Counting);
        let jumped = counting_sme_step(&m, &excited(), 1.0, 0.01).unwrap();
        assert_eq!(jumped, ground());

        // smooth part: L*(rho) = |g><g| - |e><e|, -L rho L† = -|g><g|,
        // + n rho = |e><e|: the excited state does not move
        let stay = counting_sme_update(&m, excited().as_operator(), 0.0, 0.01).unwrap();
        assert_eq!(&stay, excited().as_operator());
    }

    #[test]
    fn counting_jump_from_dark_state_is_rejected() {
        let m = decay(1.0, Detection::Counting);
        let err = counting_sme_step(&m, &ground(), 1.0, 0.01).unwrap_err();
        assert!(matches!(err, Error::ImpossibleJump { .. }));
        assert!(counting_sme_step(&m, &ground(), 0.5, 0.01).is_err());
    }

    #[test]
    fn zakai_examples() {
        let h = sigma_x();
        let closed = model(h.clone(), Operator::zeros(2), plus(), Detection::Homodyne);
        let sigma = Operator::diagonal(&[0.8, 0.2]);
        let next = zakai_step(&closed, &sigma, 0.7, 0.01).unwrap();
        assert!((next.trace().re - 1.0).abs() < 1e-15);

        let m = model(Operator::zeros(2), sigma_z(), plus(), Detection::Homodyne);
        let half = DensityMatrix::maximally_mixed(2);
        let next = zakai_step(&m, half.as_operator(), 0.05, 0.01).unwrap();
        assert!(next.max_abs_diff(&Operator::diagonal(&[0.55, 0.45])) < 1e-16);
    }

    #[test]
    fn zakai_rejects_negative_trace() {
        let m = model(
            Operator::zeros(2),
            sigma_z(),
            excited(),
            Detection::Homodyne,
        );
        // tr(sigma') = 1 + 2 dy
        assert!(matches!(
            zakai_step(&m, excited().as_operator(), -0.6, 0.01),
            Err(Error::NonPositiveTrace(_))
        ));
    }

    #[test]
    fn normalize_examples() {
        let rho = plus();
        assert!(
            normalize_linear(rho.as_operator())
                .unwrap()
                .as_operator()
                .max_abs_diff(rho.as_operator())
                < 1e-15
        );
        let tripled = rho.as_operator().scale_re(3.0);
        assert!(
            normalize_linear(&tripled)
                .unwrap()
                .as_operator()
                .max_abs_diff(rho.as_operator())
                < 1e-15
        );
        let d = normalize_linear(&Operator::diagonal(&[2.0, 6.0])).unwrap();
        assert!(
            d.as_operator()
                .max_abs_diff(&Operator::diagonal(&[0.25, 0.75]))
                < 1e-16
        );
        assert!(normalize_linear(&Operator::diagonal(&[-1.0, 0.5])).is_err());
    }

    #[test]
    fn run_filter_constant_for_empty_dynamics() {
        let m = model(
            Operator::zeros(2),
            Operator::zeros(2),
            plus(),
            Detection::Homodyne,
        );
        let grid = TimeGrid::new(0.0, 0.01, 5).unwrap();
        let rec = ObservationRecord::new(
            grid,
            Detection::Homodyne,
            vec![0.1, -0.2, 0.0, 0.3, 0.05],
            None,
        )
        .unwrap();
        let traj = run_filter(&m, &rec, FilterKind::Normalized).unwrap();
        assert!(traj.densities().unwrap().iter().all(|s| s == &plus()));
        let lin = run_filter(&m, &rec, FilterKind::Linear).unwrap();
        assert!(lin.norms().unwrap().iter().all(|&n| n == 1.0));
        let dw = innovations(&m, &rec, &traj).unwrap();
        assert_eq!(dw, rec.increments());
    }

    #[test]
    fn run_filter_checks_detection() {
        let m = decay(1.0, Detection::Counting);
        let grid = TimeGrid::new(0.0, 0.01, 2).unwrap();
        let rec = ObservationRecord::new(grid, Detection::Homodyne, vec![0.0, 0.0], None).unwrap();
        assert!(matches!(
            run_filter(&m, &rec, FilterKind::Normalized),
            Err(Error::DetectionMismatch { .. })
        ));
        let rec = ObservationRecord::new(grid, Detection::Counting, vec![0.0, 0.0], None).unwrap();
        assert!(matches!(
            run_filter(&m, &rec, FilterKind::Linear),
            Err(Error::LinearRequiresHomodyne)
        ));
    }

    #[test]
    fn run_filter_reports_failing_step() {
        let m = model(
            Operator::zeros(2),
            sigma_minus(),
            ground(),
            Detection::Counting,
        );
        let grid = TimeGrid::new(0.0, 0.01, 3).unwrap();
        let rec =
            ObservationRecord::new(grid, Detection::Counting, vec![0.0, 0.0, 1.0], None).unwrap();
        let err = run_filter(&m, &rec, FilterKind::Normalized).unwrap_err();
        assert!(matches!(err, Error::AtStep { step: 2, .. }));
        assert!(matches!(err.root(), Error::ImpossibleJump { .. }));
    }

    #[test]
    fn counting_dark_state_innovations_vanish() {
        let m = model(
            Operator::zeros(2),
            sigma_minus(),
            ground(),
            Detection::Counting,
        );
        let grid = TimeGrid::new(0.0, 0.01, 4).unwrap();
        let rec = ObservationRecord::new(grid, Detection::Counting, vec![0.0; 4], None).unwrap();
        let traj = run_filter(&m, &rec, FilterKind::Normalized).unwrap();
        assert!(innovations(&m, &rec, &traj)
            .unwrap()
            .iter()
            .all(|&d| d == 0.0));
    }

    #[test]
    fn record_validation() {
        let grid = TimeGrid::new(0.0, 0.01, 2).unwrap();
        assert!(matches!(
            ObservationRecord::new(grid, Detection::Homodyne, vec![0.0], None),
            Err(Error::LengthMismatch {
                expected: 2,
                found: 1
            })
        ));
        assert!(ObservationRecord::new(grid, Detection::Counting, vec![0.0, 2.0], None).is_err());
        assert!(
            ObservationRecord::new(grid, Detection::Homodyne, vec![0.0, f64::NAN], None).is_err()
        );
    }

    #[test]
    fn pure_state_stays_pure_without_repair() {
        let m = model(
            sigma_x().scale_re(0.5),
            sigma_minus(),
            plus(),
            Detection::Homodyne,
        );
        let dt = 1e-4;
        let mut rho = plus().as_operator().clone();
        for dy in [0.01, -0.02, 0.005] {
            let next = homodyne_sme_update(&m, &rho, dy, dt);
            let purity = next.trace_product(&next).re;
            assert!(purity >= 1.0 - 10.0 * dt, "purity {purity}");
            rho = nearest_density(&next).unwrap().into_operator();
            let (vals, _) = hermitian_eigen(&rho);
            assert!(vals[0] > -1e-12);
        }
    }
}
