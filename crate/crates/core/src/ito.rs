//! Quantum Itô calculus with concrete operator coefficients.
//!
//! An [`ItoExpression`] is a formal sum `C_0 + C_dt dt + C_+ dA† + C_- dA + C_Λ dΛ`
//! whose coefficients are system operators. Expressions describing `dU` are
//! coefficient bundles acting on the system–probe unitary from the left; `U`
//! itself is the formal unit. System coefficients commute with the forward
//! increments, so a product of two terms is the product of the coefficients
//! (in written order) times the product of the increments, resolved through
//! the vacuum Itô table.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operator::{lindblad_heisenberg, Operator, SystemModel};

/// Coefficients at or below this modulus count as zero in derived expressions.
pub const NEGLIGIBLE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ItoIncrement {
    Dt,
    DA,
    DAdag,
    DLambda,
}

impl ItoIncrement {
    pub const ALL: [ItoIncrement; 4] = [
        ItoIncrement::Dt,
        ItoIncrement::DA,
        ItoIncrement::DAdag,
        ItoIncrement::DLambda,
    ];

    fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> &'static str {
        match self {
            ItoIncrement::Dt => "dt",
            ItoIncrement::DA => "dA",
            ItoIncrement::DAdag => "dA†",
            ItoIncrement::DLambda => "dΛ",
        }
    }
}

/// Basis element of an expression: the non-differential part or one increment.
/// The derived order is the display order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Basis {
    Unit,
    Dt,
    DAdag,
    DA,
    DLambda,
}

impl From<ItoIncrement> for Basis {
    fn from(inc: ItoIncrement) -> Basis {
        match inc {
            ItoIncrement::Dt => Basis::Dt,
            ItoIncrement::DA => Basis::DA,
            ItoIncrement::DAdag => Basis::DAdag,
            ItoIncrement::DLambda => Basis::DLambda,
        }
    }
}

impl Basis {
    fn increment(self) -> Option<ItoIncrement> {
        match self {
            Basis::Unit => None,
            Basis::Dt => Some(ItoIncrement::Dt),
            Basis::DA => Some(ItoIncrement::DA),
            Basis::DAdag => Some(ItoIncrement::DAdag),
            Basis::DLambda => Some(ItoIncrement::DLambda),
        }
    }

    /// Basis element of the adjoint term.
    fn adjoint(self) -> Basis {
        match self {
            Basis::DA => Basis::DAdag,
            Basis::DAdag => Basis::DA,
            other => other,
        }
    }

    pub fn symbol(self) -> &'static str {
        self.increment().map_or("", ItoIncrement::symbol)
    }
}

/// Multiplication table for the fundamental increments.
///
/// Each entry is either zero or `factor * increment`. The vacuum table has
/// factor 1 on its four nonzero entries; other factors exist only so that
/// checks built on the table can be shown to detect a corrupted rule.
#[derive(Clone, Debug, PartialEq)]
pub struct ItoTable {
    entries: [[Option<(f64, ItoIncrement)>; 4]; 4],
}

impl ItoTable {
    pub fn standard() -> ItoTable {
        use ItoIncrement::*;
        let mut entries = [[None; 4]; 4];
        entries[DA.index()][DAdag.index()] = Some((1.0, Dt));
        entries[DA.index()][DLambda.index()] = Some((1.0, DA));
        entries[DLambda.index()][DAdag.index()] = Some((1.0, DAdag));
        entries[DLambda.index()][DLambda.index()] = Some((1.0, DLambda));
        ItoTable { entries }
    }

    /// Replaces one entry of the table.
    pub fn with_entry(
        mut self,
        a: ItoIncrement,
        b: ItoIncrement,
        entry: Option<(f64, ItoIncrement)>,
    ) -> ItoTable {
        self.entries[a.index()][b.index()] = entry;
        self
    }

    pub fn product(&self, a: ItoIncrement, b: ItoIncrement) -> Option<(f64, ItoIncrement)> {
        self.entries[a.index()][b.index()]
    }

    fn basis_product(&self, a: Basis, b: Basis) -> Option<(f64, Basis)> {
        match (a.increment(), b.increment()) {
            (None, _) => Some((1.0, b)),
            (_, None) => Some((1.0, a)),
            (Some(x), Some(y)) => self.product(x, y).map(|(f, inc)| (f, inc.into())),
        }
    }
}

impl Default for ItoTable {
    fn default() -> Self {
        ItoTable::standard()
    }
}

/// Product of two fundamental increments in the vacuum Itô table;
/// `None` is zero.
pub fn ito_table(a: ItoIncrement, b: ItoIncrement) -> Option<ItoIncrement> {
    ItoTable::standard().product(a, b).map(|(_, inc)| inc)
}

/// Formal sum of operator coefficients times basis elements.
#[derive(Clone, Debug, PartialEq)]
pub struct ItoExpression {
    dim: usize,
    terms: BTreeMap<Basis, Operator>,
}

impl ItoExpression {
    pub fn zero(dim: usize) -> ItoExpression {
        ItoExpression {
            dim,
            terms: BTreeMap::new(),
        }
    }

    /// Single term `coeff * basis`.
    pub fn term(coeff: Operator, basis: Basis) -> ItoExpression {
        ItoExpression::zero(coeff.dim()).plus(coeff, basis)
    }

    /// Adds `coeff * basis` to the expression.
    pub fn plus(mut self, coeff: Operator, basis: Basis) -> ItoExpression {
        assert_eq!(coeff.dim(), self.dim, "coefficient dimension mismatch");
        match self.terms.get_mut(&basis) {
            Some(existing) => *existing += &coeff,
            None => {
                self.terms.insert(basis, coeff);
            }
        }
        self.prune_exact();
        self
    }

    fn prune_exact(&mut self) {
        self.terms.retain(|_, c| !c.is_zero());
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, basis: Basis) -> Option<&Operator> {
        self.terms.get(&basis)
    }

    pub fn terms(&self) -> impl Iterator<Item = (Basis, &Operator)> {
        self.terms.iter().map(|(b, c)| (*b, c))
    }

    /// Largest entry modulus over all coefficients.
    pub fn max_coefficient(&self) -> f64 {
        self.terms
            .values()
            .map(Operator::max_abs)
            .fold(0.0, f64::max)
    }

    /// Snaps entries with modulus `<= tol` to zero and drops vanishing terms.
    pub fn pruned(&self, tol: f64) -> ItoExpression {
        let mut terms = BTreeMap::new();
        for (basis, coeff) in &self.terms {
            let snapped = Operator::from_fn(self.dim, |i, j| {
                let z = coeff.get(i, j);
                if z.norm() <= tol {
                    Complex64::new(0.0, 0.0)
                } else {
                    z
                }
            });
            if !snapped.is_zero() {
                terms.insert(*basis, snapped);
            }
        }
        ItoExpression {
            dim: self.dim,
            terms,
        }
    }

    /// Conjugate transpose of every coefficient with `dA` and `dA†` exchanged.
    pub fn adjoint(&self) -> ItoExpression {
        ItoExpression {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .map(|(b, c)| (b.adjoint(), c.adjoint()))
                .collect(),
        }
    }

    pub fn add(&self, other: &ItoExpression) -> Result<ItoExpression> {
        self.check_dim(other)?;
        let mut out = self.clone();
        for (b, c) in &other.terms {
            out = out.plus(c.clone(), *b);
        }
        Ok(out)
    }

    pub fn scale(&self, s: Complex64) -> ItoExpression {
        let mut out = ItoExpression {
            dim: self.dim,
            terms: self.terms.iter().map(|(b, c)| (*b, c.scale(s))).collect(),
        };
        out.prune_exact();
        out
    }

    fn check_dim(&self, other: &ItoExpression) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }

    /// Renders with symbolic names for coefficients that match a label
    /// (or its negation); other coefficients print as matrices.
    pub fn render(&self, labels: &[(&str, Operator)]) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (i, (basis, coeff)) in self.terms.iter().enumerate() {
            let (negative, text) = match match_label(coeff, labels) {
                Some((neg, name)) => (neg, name.to_string()),
                None => (false, format!("{coeff:.12}")),
            };
            match (i, negative) {
                (0, false) => {}
                (0, true) => out.push('-'),
                (_, false) => out.push_str(" + "),
                (_, true) => out.push_str(" - "),
            }
            out.push_str(&text);
            if *basis != Basis::Unit {
                out.push('·');
                out.push_str(basis.symbol());
            }
        }
        out
    }
}

fn match_label<'a>(coeff: &Operator, labels: &'a [(&'a str, Operator)]) -> Option<(bool, &'a str)> {
    for (name, op) in labels {
        if op.dim() != coeff.dim() || op.is_zero() {
            continue;
        }
        let tol = NEGLIGIBLE * op.max_abs().max(1.0);
        if coeff.max_abs_diff(op) <= tol {
            return Some((false, name));
        }
        if coeff.max_abs_diff(&-op) <= tol {
            return Some((true, name));
        }
    }
    None
}

impl fmt::Display for ItoExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(&[]))
    }
}

/// Product of two expressions under the vacuum Itô table.
pub fn expr_mul(e1: &ItoExpression, e2: &ItoExpression) -> Result<ItoExpression> {
    expr_mul_with(&ItoTable::standard(), e1, e2)
}

/// Product of two expressions under an arbitrary increment table.
pub fn expr_mul_with(
    table: &ItoTable,
    e1: &ItoExpression,
    e2: &ItoExpression,
) -> Result<ItoExpression> {
    e1.check_dim(e2)?;
    let mut out = ItoExpression::zero(e1.dim);
    for (b1, c1) in &e1.terms {
        for (b2, c2) in &e2.terms {
            if let Some((factor, basis)) = table.basis_product(*b1, *b2) {
                let mut coeff = c1 * c2;
                if factor != 1.0 {
                    coeff = coeff.scale_re(factor);
                }
                out = out.plus(coeff, basis);
            }
        }
    }
    Ok(out)
}

/// `dU U^{-1} = L dA† - L† dA - (L†L/2 + iH) dt`.
pub fn hp_differential(model: &SystemModel) -> ItoExpression {
    let dt_coeff =
        &model.decay_operator().scale_re(-0.5) - &model.hamiltonian().scale(Complex64::i());
    ItoExpression::zero(model.dim())
        .plus(dt_coeff, Basis::Dt)
        .plus(model.coupling().clone(), Basis::DAdag)
        .plus(-model.coupling_adjoint(), Basis::DA)
}

/// Unpruned expansion of `d(U†U)` in the frame of `U`: `E† + E + E†E`
/// with `E` from [`hp_differential`].
pub fn expand_unitarity(table: &ItoTable, model: &SystemModel) -> ItoExpression {
    let e = hp_differential(model);
    let ed = e.adjoint();
    let cross = expr_mul_with(table, &ed, &e).expect("same model dimension");
    ed.add(&e)
        .and_then(|s| s.add(&cross))
        .expect("same model dimension")
}

/// `d(U†U)` expressed in the frame of `U`; empty for every valid model.
pub fn check_unitarity(model: &SystemModel) -> ItoExpression {
    expand_unitarity(&ItoTable::standard(), model).pruned(NEGLIGIBLE)
}

/// `d j_t(X)` for the flow `j_t(X) = U† X U`, derived through the Itô product
/// rule: `E† X + X E + E† X E`.
pub fn flow_differential(model: &SystemModel, x: &Operator) -> Result<ItoExpression> {
    flow_differential_with(&ItoTable::standard(), model, x)
}

pub fn flow_differential_with(
    table: &ItoTable,
    model: &SystemModel,
    x: &Operator,
) -> Result<ItoExpression> {
    model.check_dim(x.dim())?;
    let e = hp_differential(model);
    let ed = e.adjoint();
    let xs = ItoExpression::term(x.clone(), Basis::Unit);
    let left = expr_mul_with(table, &ed, &xs)?;
    let right = expr_mul_with(table, &xs, &e)?;
    let both = expr_mul_with(table, &left, &e)?;
    Ok(left.add(&right)?.add(&both)?.pruned(NEGLIGIBLE))
}

/// Vacuum expectation of a differential: keeps only the `dt` coefficient.
pub fn vacuum_drift(e: &ItoExpression) -> Operator {
    e.coefficient(Basis::Dt)
        .cloned()
        .unwrap_or_else(|| Operator::zeros(e.dim()))
}

/// Cross-check helper: the flow's drift against the Heisenberg generator.
pub fn drift_mismatch(model: &SystemModel, x: &Operator) -> Result<f64> {
    let drift = vacuum_drift(&flow_differential(model, x)?);
    Ok(drift.max_abs_diff(&lindblad_heisenberg(model, x)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::qubit::*;
    use crate::operator::{commutator, DensityMatrix, Detection};
    use ItoIncrement::*;

    fn model(h: Operator, l: Operator) -> SystemModel {
        let dim = h.dim();
        SystemModel::new(
            h,
            l,
            DensityMatrix::maximally_mixed(dim),
            Detection::Homodyne,
        )
        .unwrap()
    }

    #[test]
    fn table_examples() {
        assert_eq!(ito_table(DA, DAdag), Some(Dt));
        assert_eq!(ito_table(DAdag, DA), None);
        assert_eq!(ito_table(DLambda, DLambda), Some(DLambda));
    }

    #[test]
    fn table_is_exactly_four_entries() {
        let nonzero: Vec<_> = ItoIncrement::ALL
            .iter()
            .flat_map(|&a| ItoIncrement::ALL.iter().map(move |&b| (a, b)))
            .filter_map(|(a, b)| ito_table(a, b).map(|c| (a, b, c)))
            .collect();
        assert_eq!(
            nonzero,
            vec![
                (DA, DAdag, Dt),
                (DA, DLambda, DA),
                (DLambda, DAdag, DAdag),
                (DLambda, DLambda, DLambda)
            ]
        );
    }

    #[test]
    fn mul_examples() {
        let x = sigma_x();
        let y = sigma_y();
        let p = expr_mul(
            &ItoExpression::term(x.clone(), Basis::Unit),
            &ItoExpression::term(y.clone(), Basis::Unit),
        )
        .unwrap();
        assert_eq!(p, ItoExpression::term(&x * &y, Basis::Unit));

        let id = Operator::identity(2);
        let p = expr_mul(
            &ItoExpression::term(id.clone(), Basis::DA),
            &ItoExpression::term(id.clone(), Basis::DAdag),
        )
        .unwrap();
        assert_eq!(p, ItoExpression::term(id, Basis::Dt));

        let l = sigma_minus().scale_re(0.8);
        let noise = ItoExpression::term(l.clone(), Basis::DAdag).plus(-&l.adjoint(), Basis::DA);
        let sq = expr_mul(&noise, &noise).unwrap();
        let expected = ItoExpression::term(-&(&l.adjoint() * &l), Basis::Dt);
        assert_eq!(sq, expected);
    }

    #[test]
    fn mul_rejects_dimension_mismatch() {
        let a = ItoExpression::term(Operator::identity(2), Basis::Dt);
        let b = ItoExpression::term(Operator::identity(3), Basis::Dt);
        assert!(expr_mul(&a, &b).is_err());
    }

    #[test]
    fn hp_examples() {
        assert!(hp_differential(&model(Operator::zeros(2), Operator::zeros(2))).is_empty());

        let closed = hp_differential(&model(sigma_z(), Operator::zeros(2)));
        assert_eq!(
            closed,
            ItoExpression::term(sigma_z().scale(Complex64::new(0.0, -1.0)), Basis::Dt)
        );

        let e = hp_differential(&model(Operator::zeros(2), sigma_minus()));
        let expected = ItoExpression::term(sigma_minus(), Basis::DAdag)
            .plus(-&sigma_plus(), Basis::DA)
            .plus((&sigma_plus() * &sigma_minus()).scale_re(-0.5), Basis::Dt);
        assert_eq!(e, expected);
    }

    #[test]
    fn unitarity_examples() {
        assert!(check_unitarity(&model(Operator::zeros(2), sigma_minus())).is_empty());
        assert!(check_unitarity(&model(sigma_x(), Operator::zeros(2))).is_empty());
        // exact arithmetic for this model
        assert!(expand_unitarity(
            &ItoTable::standard(),
            &model(Operator::zeros(2), sigma_minus())
        )
        .is_empty());
    }

    #[test]
    fn corrupted_table_breaks_unitarity() {
        let table = ItoTable::standard().with_entry(DA, DAdag, Some((-1.0, Dt)));
        let e = expand_unitarity(&table, &model(Operator::zeros(2), sigma_minus()));
        let dt = e.coefficient(Basis::Dt).expect("dt term survives");
        // -L†L - L†L instead of zero
        assert!(dt.max_abs_diff(&Operator::diagonal(&[-2.0, 0.0])) < 1e-15);
    }

    #[test]
    fn flow_examples() {
        let m = model(sigma_x(), sigma_minus());
        assert!(flow_differential(&m, &Operator::identity(2))
            .unwrap()
            .is_empty());

        let gamma: f64 = 0.3;
        let l = sigma_minus().scale_re(gamma.sqrt());
        let decay = model(Operator::zeros(2), l.clone());
        let flow = flow_differential(&decay, &sigma_z()).unwrap();
        let expected_dt = (&Operator::identity(2) + &sigma_z()).scale_re(-gamma);
        assert!(
            flow.coefficient(Basis::Dt)
                .unwrap()
                .max_abs_diff(&expected_dt)
                < 1e-15
        );
        let expected_dadag = commutator(&sigma_z(), &l).unwrap();
        assert!(
            flow.coefficient(Basis::DAdag)
                .unwrap()
                .max_abs_diff(&expected_dadag)
                < 1e-15
        );
        let expected_da = commutator(&l.adjoint(), &sigma_z()).unwrap();
        assert!(
            flow.coefficient(Basis::DA)
                .unwrap()
                .max_abs_diff(&expected_da)
                < 1e-15
        );
        assert!(drift_mismatch(&decay, &sigma_z()).unwrap() < 1e-15);
    }

    #[test]
    fn vacuum_drift_examples() {
        let martingale = ItoExpression::term(sigma_x(), Basis::DA).plus(sigma_y(), Basis::DAdag);
        assert!(vacuum_drift(&martingale).is_zero());
        let e = ItoExpression::term(sigma_x(), Basis::Dt).plus(sigma_y(), Basis::DLambda);
        assert_eq!(vacuum_drift(&e), sigma_x());
    }

    #[test]
    fn renders_with_labels() {
        let m = model(sigma_x(), sigma_minus());
        let labels = [
            ("(-0.5 L†L - iH)", vacuum_drift(&hp_differential(&m))),
            ("L", m.coupling().clone()),
            ("L†", m.coupling_adjoint().clone()),
        ];
        assert_eq!(
            hp_differential(&m).render(&labels),
            "(-0.5 L†L - iH)·dt + L·dA† - L†·dA"
        );
        assert_eq!(ItoExpression::zero(2).to_string(), "0");
        assert_eq!(
            ItoExpression::term(sigma_z(), Basis::Dt).to_string(),
            "[[1, 0], [0, -1]]·dt"
        );
    }
}
