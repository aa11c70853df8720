//! Generic pair/proxy loss `τ(σ⁺(Σ ρ⁺(s)) + σ⁻(Σ ρ⁻(s)))` and its label-weighted form.
//!
//! A [`LossPlugin`] fixes the five scalar functions. The label-weighted form
//! weighs each element's positive contribution by its label `y` and its
//! negative contribution by `1 − y`; with binary labels it reduces to the
//! plain positive/negative form, and with interpolated labels it is the loss
//! over mixed embeddings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

/// Differentiable unary function used as one slot of a plugin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarFn {
    Identity,
    /// `−x`
    Negate,
    /// `[x]₊`
    Hinge,
    /// `[x − m]₊`
    ShiftedHinge(f64),
    /// `log x`
    Log,
    /// `−log x`
    NegLog,
    /// `(1/c) log(1 + x)`
    ScaledLog1p(f64),
    /// `exp(scale · (x − shift))`
    Exp {
        scale: f64,
        shift: f64,
    },
}

impl ScalarFn {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        Ok(match self {
            ScalarFn::Identity => x,
            ScalarFn::Negate => tape.neg(x),
            ScalarFn::Hinge => tape.hinge(x),
            ScalarFn::ShiftedHinge(m) => {
                let shifted = tape.add_scalar(x, -m);
                tape.hinge(shifted)
            }
            ScalarFn::Log => tape.log(x)?,
            ScalarFn::NegLog => {
                let l = tape.log(x)?;
                tape.neg(l)
            }
            ScalarFn::ScaledLog1p(c) => {
                let one_plus = tape.add_scalar(x, 1.0);
                let l = tape.log(one_plus)?;
                tape.scale(l, 1.0 / c)
            }
            ScalarFn::Exp { scale, shift } => {
                let shifted = tape.add_scalar(x, -shift);
                let scaled = tape.scale(shifted, scale);
                tape.exp(scaled)
            }
        })
    }

    /// Whether the function is defined at 0, i.e. on an empty sum.
    pub fn defined_at_zero(self) -> bool {
        !matches!(self, ScalarFn::Log | ScalarFn::NegLog)
    }
}

/// The eight rows of the loss table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PluginKind {
    Contrastive,
    Lifted,
    Deviance,
    Ms,
    Pa,
    Nca,
    Pnca,
    Pncapp,
}

impl PluginKind {
    pub const ALL: [PluginKind; 8] = [
        PluginKind::Contrastive,
        PluginKind::Lifted,
        PluginKind::Deviance,
        PluginKind::Ms,
        PluginKind::Pa,
        PluginKind::Nca,
        PluginKind::Pnca,
        PluginKind::Pncapp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PluginKind::Contrastive => "contrastive",
            PluginKind::Lifted => "lifted",
            PluginKind::Deviance => "deviance",
            PluginKind::Ms => "ms",
            PluginKind::Pa => "pa",
            PluginKind::Nca => "nca",
            PluginKind::Pnca => "pnca",
            PluginKind::Pncapp => "pncapp",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.map(Self::name).join(", ")
    }

    pub fn anchor_role(self) -> Role {
        match self {
            PluginKind::Pa => Role::Proxy,
            _ => Role::Example,
        }
    }

    pub fn pos_neg_role(self) -> Role {
        match self {
            PluginKind::Pnca | PluginKind::Pncapp => Role::Proxy,
            _ => Role::Example,
        }
    }

    pub fn uses_proxies(self) -> bool {
        self.anchor_role() == Role::Proxy || self.pos_neg_role() == Role::Proxy
    }
}

impl fmt::Display for PluginKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PluginKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown loss `{s}`; valid names are: {}",
                    Self::valid_names()
                ))
            })
    }
}

/// What occupies the anchor or the positive/negative slot of a loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Example,
    Proxy,
}

/// Loss selection and hyperparameters as read from configuration.
/// Unset hyperparameters take the per-loss defaults of [`LossConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub name: String,
    pub margin: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub temperature: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            name: "contrastive".into(),
            margin: None,
            beta: None,
            gamma: None,
            temperature: None,
        }
    }
}

impl LossConfig {
    /// Fills every hyperparameter and builds the plugin.
    pub fn resolve(&self) -> Result<(LossConfig, LossPlugin)> {
        let kind: PluginKind = self.name.parse()?;
        let (m, b, g, t) = match kind {
            PluginKind::Contrastive => (0.5, None, None, None),
            PluginKind::Lifted => (1.0, None, None, None),
            PluginKind::Deviance => (0.5, Some(2.0), Some(2.0), None),
            PluginKind::Ms => (0.77, Some(18.0), Some(75.0), None),
            PluginKind::Pa => (0.1, Some(32.0), Some(32.0), None),
            PluginKind::Nca | PluginKind::Pnca => (0.0, None, None, None),
            PluginKind::Pncapp => (0.0, None, None, Some(1.0 / 9.0)),
        };
        let margin = self.margin.unwrap_or(m);
        let beta = self.beta.or(b);
        let gamma = self.gamma.or(g);
        let temperature = self.temperature.or(t);
        let plugin = match kind {
            PluginKind::Contrastive => LossPlugin::contrastive(margin),
            PluginKind::Lifted => LossPlugin::lifted_structure(margin),
            PluginKind::Deviance => {
                LossPlugin::binomial_deviance(beta.unwrap(), gamma.unwrap(), margin)?
            }
            PluginKind::Ms => LossPlugin::multi_similarity(beta.unwrap(), gamma.unwrap(), margin)?,
            PluginKind::Pa => LossPlugin::proxy_anchor(beta.unwrap(), gamma.unwrap(), margin)?,
            PluginKind::Nca => LossPlugin::nca(),
            PluginKind::Pnca => LossPlugin::proxy_nca(),
            PluginKind::Pncapp => LossPlugin::proxy_nca_pp(temperature.unwrap())?,
        };
        let resolved = LossConfig {
            name: kind.name().into(),
            margin: kind_uses_margin(kind).then_some(margin),
            beta,
            gamma,
            temperature,
        };
        Ok((resolved, plugin))
    }
}

fn kind_uses_margin(kind: PluginKind) -> bool {
    !matches!(
        kind,
        PluginKind::Nca | PluginKind::Pnca | PluginKind::Pncapp
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub margin: f64,
    pub beta: f64,
    pub gamma: f64,
    pub temperature: Option<f64>,
}

/// One loss of the generic family: `τ`, `σ⁺`, `σ⁻`, `ρ⁺`, `ρ⁻` and the hyperparameters behind them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPlugin {
    pub kind: PluginKind,
    pub tau: ScalarFn,
    pub sigma_pos: ScalarFn,
    pub sigma_neg: ScalarFn,
    pub rho_pos: ScalarFn,
    pub rho_neg: ScalarFn,
    pub hyper: Hyperparams,
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

impl LossPlugin {
    pub fn contrastive(margin: f64) -> Self {
        Self {
            kind: PluginKind::Contrastive,
            tau: ScalarFn::Identity,
            sigma_pos: ScalarFn::Identity,
            sigma_neg: ScalarFn::Identity,
            rho_pos: ScalarFn::Negate,
            rho_neg: ScalarFn::ShiftedHinge(margin),
            hyper: Hyperparams {
                margin,
                beta: 1.0,
                gamma: 1.0,
                temperature: None,
            },
        }
    }

    pub fn lifted_structure(margin: f64) -> Self {
        Self {
            kind: PluginKind::Lifted,
            tau: ScalarFn::Hinge,
            sigma_pos: ScalarFn::Log,
            sigma_neg: ScalarFn::Log,
            rho_pos: ScalarFn::Exp {
                scale: -1.0,
                shift: 0.0,
            },
            rho_neg: ScalarFn::Exp {
                scale: 1.0,
                shift: margin,
            },
            hyper: Hyperparams {
                margin,
                beta: 1.0,
                gamma: 1.0,
                temperature: None,
            },
        }
    }

    fn ms_family(
        kind: PluginKind,
        beta: f64,
        gamma: f64,
        margin: f64,
        scaled: bool,
    ) -> Result<Self> {
        let beta = positive("beta", beta)?;
        let gamma = positive("gamma", gamma)?;
        Ok(Self {
            kind,
            tau: ScalarFn::Identity,
            sigma_pos: ScalarFn::ScaledLog1p(if scaled { beta } else { 1.0 }),
            sigma_neg: ScalarFn::ScaledLog1p(if scaled { gamma } else { 1.0 }),
            rho_pos: ScalarFn::Exp {
                scale: -beta,
                shift: margin,
            },
            rho_neg: ScalarFn::Exp {
                scale: gamma,
                shift: margin,
            },
            hyper: Hyperparams {
                margin,
                beta,
                gamma,
                temperature: None,
            },
        })
    }

    pub fn binomial_deviance(beta: f64, gamma: f64, margin: f64) -> Result<Self> {
        Self::ms_family(PluginKind::Deviance, beta, gamma, margin, false)
    }

    pub fn multi_similarity(beta: f64, gamma: f64, margin: f64) -> Result<Self> {
        Self::ms_family(PluginKind::Ms, beta, gamma, margin, true)
    }

    pub fn proxy_anchor(beta: f64, gamma: f64, margin: f64) -> Result<Self> {
        Self::ms_family(PluginKind::Pa, beta, gamma, margin, true)
    }

    fn nca_family(kind: PluginKind, temperature: Option<f64>) -> Result<Self> {
        let scale = match temperature {
            Some(t) => 1.0 / positive("temperature", t)?,
            None => 1.0,
        };
        let rho = ScalarFn::Exp { scale, shift: 0.0 };
        Ok(Self {
            kind,
            tau: ScalarFn::Identity,
            sigma_pos: ScalarFn::NegLog,
            sigma_neg: ScalarFn::Log,
            rho_pos: rho,
            rho_neg: rho,
            hyper: Hyperparams {
                margin: 0.0,
                beta: 1.0,
                gamma: 1.0,
                temperature,
            },
        })
    }

    pub fn nca() -> Self {
        Self::nca_family(PluginKind::Nca, None).expect("no hyperparameters to validate")
    }

    pub fn proxy_nca() -> Self {
        Self::nca_family(PluginKind::Pnca, None).expect("no hyperparameters to validate")
    }

    pub fn proxy_nca_pp(temperature: f64) -> Result<Self> {
        Self::nca_family(PluginKind::Pncapp, Some(temperature))
    }

    /// Whether the loss is defined when the positive (resp. negative) sum is empty.
    pub fn accepts(&self, has_positive_mass: bool, has_negative_mass: bool) -> bool {
        (has_positive_mass || self.sigma_pos.defined_at_zero())
            && (has_negative_mass || self.sigma_neg.defined_at_zero())
    }

    fn combine(&self, tape: &mut Tape, pos_terms: &[Var], neg_terms: &[Var]) -> Result<Var> {
        let pos_sum = tape.sum(pos_terms);
        let neg_sum = tape.sum(neg_terms);
        let pos = self.sigma_pos.apply(tape, pos_sum)?;
        let neg = self.sigma_neg.apply(tape, neg_sum)?;
        let inner = tape.add(pos, neg);
        self.tau.apply(tape, inner)
    }

    /// Loss of one anchor given its positive and negative similarities.
    pub fn generic_loss(
        &self,
        tape: &mut Tape,
        positives: &[Var],
        negatives: &[Var],
    ) -> Result<Var> {
        if positives.is_empty() && negatives.is_empty() {
            return Err(Error::invalid("anchor has neither positives nor negatives"));
        }
        let pos_terms = positives
            .iter()
            .map(|&s| self.rho_pos.apply(tape, s))
            .collect::<Result<Vec<_>>>()?;
        let neg_terms = negatives
            .iter()
            .map(|&s| self.rho_neg.apply(tape, s))
            .collect::<Result<Vec<_>>>()?;
        self.combine(tape, &pos_terms, &neg_terms)
    }

    /// Label-weighted loss over `(similarity, label)` pairs with labels in `[0, 1]`.
    /// Terms whose weight is exactly zero are left out of their sum.
    pub fn labeled_loss(&self, tape: &mut Tape, labeled: &[(Var, f64)]) -> Result<Var> {
        if labeled.is_empty() {
            return Err(Error::invalid("labeled set is empty"));
        }
        let mut pos_terms = Vec::new();
        let mut neg_terms = Vec::new();
        for &(s, y) in labeled {
            if !(0.0..=1.0).contains(&y) {
                return Err(Error::LabelRange(y));
            }
            if y > 0.0 {
                let r = self.rho_pos.apply(tape, s)?;
                pos_terms.push(if y == 1.0 { r } else { tape.scale(r, y) });
            }
            if y < 1.0 {
                let r = self.rho_neg.apply(tape, s)?;
                neg_terms.push(if y == 0.0 { r } else { tape.scale(r, 1.0 - y) });
            }
        }
        self.combine(tape, &pos_terms, &neg_terms)
    }

    /// Loss over labeled mixed embeddings `V(a)`; similarity is the inner product with the anchor.
    pub fn mixed_loss(&self, tape: &mut Tape, anchor: &[Var], mixed: &[MixedVar]) -> Result<Var> {
        if mixed.is_empty() {
            return Err(Error::invalid("mixed set is empty"));
        }
        let labeled = mixed
            .iter()
            .map(|m| Ok((tape.dot(anchor, &m.embedding)?, m.label)))
            .collect::<Result<Vec<_>>>()?;
        self.labeled_loss(tape, &labeled)
    }

    /// Value of the labeled loss and its derivative with respect to every similarity.
    pub fn labeled_loss_grad(&self, sims: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
        crate::numerics::check_dims(sims.len(), labels.len())?;
        let mut tape = Tape::new();
        let vars = tape.lift_all(sims)?;
        let labeled: Vec<(Var, f64)> = vars.iter().copied().zip(labels.iter().copied()).collect();
        let loss = self.labeled_loss(&mut tape, &labeled)?;
        let grads = tape.backward(loss);
        Ok((
            tape.value(loss),
            vars.iter().map(|&v| grads.get(v)).collect(),
        ))
    }
}

/// A mixed embedding on the tape with its interpolated label.
#[derive(Debug, Clone)]
pub struct MixedVar {
    pub embedding: Vec<Var>,
    pub label: f64,
}

/// `(1/|X|) Σₐ [ℓ(a) + w·ℓ̃(a)]`; anchors without a mixed loss contribute `ℓ(a)` only.
pub fn total_error(tape: &mut Tape, clean: &[Var], mixed: &[Option<Var>], w: f64) -> Result<Var> {
    if !(w >= 0.0) || !w.is_finite() {
        return Err(Error::invalid(format!(
            "mixing strength must be non-negative, got {w}"
        )));
    }
    crate::numerics::check_dims(clean.len(), mixed.len())?;
    if clean.is_empty() {
        return Err(Error::invalid("no anchors"));
    }
    let mut terms = Vec::with_capacity(clean.len());
    for (&c, m) in clean.iter().zip(mixed) {
        terms.push(match m {
            Some(m) if w > 0.0 => {
                let weighted = tape.scale(*m, w);
                tape.add(c, weighted)
            }
            _ => c,
        });
    }
    let total = tape.sum(&terms);
    Ok(tape.scale(total, 1.0 / clean.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff;
    use proptest::prelude::*;

    fn eval_generic(p: &LossPlugin, pos: &[f64], neg: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let pv = tape.lift_all(pos)?;
        let nv = tape.lift_all(neg)?;
        let l = p.generic_loss(&mut tape, &pv, &nv)?;
        Ok(tape.value(l))
    }

    fn eval_labeled(p: &LossPlugin, items: &[(f64, f64)]) -> Result<f64> {
        let sims: Vec<f64> = items.iter().map(|x| x.0).collect();
        let labels: Vec<f64> = items.iter().map(|x| x.1).collect();
        Ok(p.labeled_loss_grad(&sims, &labels)?.0)
    }

    #[test]
    fn contrastive_examples() {
        let c = LossPlugin::contrastive(0.5);
        assert!((eval_generic(&c, &[0.8], &[]).unwrap() + 0.8).abs() < 1e-15);
        assert!((eval_generic(&c, &[], &[0.9]).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(eval_generic(&c, &[], &[0.2]).unwrap(), 0.0);
    }

    #[test]
    fn multi_similarity_at_margin() {
        let ms = LossPlugin::multi_similarity(18.0, 75.0, 0.77).unwrap();
        let v = eval_generic(&ms, &[0.77], &[]).unwrap();
        assert!((v - 2f64.ln() / 18.0).abs() < 1e-15);
        assert!((v - 0.03851).abs() < 1e-5);
    }

    #[test]
    fn generic_requires_some_elements() {
        let c = LossPlugin::contrastive(0.5);
        assert!(eval_generic(&c, &[], &[]).is_err());
    }

    #[test]
    fn labeled_examples() {
        let c = LossPlugin::contrastive(0.5);
        let l = eval_labeled(&c, &[(0.3, 1.0), (0.9, 0.0), (0.1, 0.0)]).unwrap();
        let g = eval_generic(&c, &[0.3], &[0.9, 0.1]).unwrap();
        assert!((l - g).abs() < 1e-12);

        // all positive: σ⁻(0) = 0 for contrastive
        let l = eval_labeled(&c, &[(0.3, 1.0), (0.6, 1.0)]).unwrap();
        assert!((l + 0.9).abs() < 1e-15);

        assert!(matches!(
            eval_labeled(&c, &[(0.3, 1.5)]),
            Err(Error::LabelRange(_))
        ));
        assert!(matches!(
            eval_labeled(&c, &[(0.3, -0.1)]),
            Err(Error::LabelRange(_))
        ));
    }

    #[test]
    fn labeled_single_element_matches_mix_ms() {
        let (b, g, m) = (18.0, 75.0, 0.77);
        let ms = LossPlugin::multi_similarity(b, g, m).unwrap();
        let (s, lam) = (0.6, 0.3);
        let oracle = (1.0 / b) * (1.0 + lam * (-b * (s - m)).exp()).ln()
            + (1.0 / g) * (1.0 + (1.0 - lam) * (g * (s - m)).exp()).ln();
        let l = eval_labeled(&ms, &[(s, lam)]).unwrap();
        assert!((l - oracle).abs() < 1e-14);
    }

    #[test]
    fn mixed_contrastive_half() {
        let c = LossPlugin::contrastive(0.5);
        let l = eval_labeled(&c, &[(0.9, 0.5)]).unwrap();
        assert!((l + 0.25).abs() < 1e-15);
    }

    #[test]
    fn mixed_loss_uses_inner_product() {
        let c = LossPlugin::contrastive(0.5);
        let mut tape = Tape::new();
        let a = tape.lift_all(&[0.6, 0.8]).unwrap();
        let v = tape.lift_all(&[0.6, 0.9]).unwrap();
        // s = 0.36 + 0.72 = 1.08, label 0.5 => -0.54 + 0.5 * 0.58
        let l = c
            .mixed_loss(
                &mut tape,
                &a,
                &[MixedVar {
                    embedding: v.clone(),
                    label: 0.5,
                }],
            )
            .unwrap();
        assert!((tape.value(l) - (-0.54 + 0.29)).abs() < 1e-12);
        let grads = tape.backward(l);
        // dℓ/ds = -0.5 + 0.5 = 0
        assert!(grads.get(a[0]).abs() < 1e-15);
        assert!(c.mixed_loss(&mut tape, &a, &[]).is_err());
    }

    #[test]
    fn lambda_boundaries_reduce_to_clean() {
        let plugins = [
            LossPlugin::contrastive(0.5),
            LossPlugin::multi_similarity(18.0, 75.0, 0.77).unwrap(),
            LossPlugin::binomial_deviance(2.0, 2.0, 0.5).unwrap(),
        ];
        for p in plugins {
            let s = [0.4, -0.2, 0.75];
            let at_one = eval_labeled(&p, &s.map(|x| (x, 1.0))).unwrap();
            assert!((at_one - eval_generic(&p, &s, &[]).unwrap()).abs() < 1e-12);
            let at_zero = eval_labeled(&p, &s.map(|x| (x, 0.0))).unwrap();
            assert!((at_zero - eval_generic(&p, &[], &s).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn table_rows() {
        let ms = LossPlugin::multi_similarity(18.0, 75.0, 0.77).unwrap();
        assert_eq!(ms.sigma_pos, ScalarFn::ScaledLog1p(18.0));
        assert_eq!(ms.sigma_neg, ScalarFn::ScaledLog1p(75.0));
        assert_eq!(
            ms.rho_pos,
            ScalarFn::Exp {
                scale: -18.0,
                shift: 0.77
            }
        );
        assert_eq!(
            ms.rho_neg,
            ScalarFn::Exp {
                scale: 75.0,
                shift: 0.77
            }
        );

        let pa = LossPlugin::proxy_anchor(32.0, 32.0, 0.1).unwrap();
        assert_eq!(pa.hyper.beta, 32.0);
        assert_eq!(pa.hyper.margin, 0.1);
        assert_eq!(pa.kind.anchor_role(), Role::Proxy);
        assert_eq!(pa.kind.pos_neg_role(), Role::Example);

        let lifted = LossPlugin::lifted_structure(1.0);
        assert_eq!(lifted.tau, ScalarFn::Hinge);
        assert_eq!(lifted.sigma_pos, ScalarFn::Log);
        assert_eq!(
            lifted.rho_pos,
            ScalarFn::Exp {
                scale: -1.0,
                shift: 0.0
            }
        );
        assert_eq!(
            lifted.rho_neg,
            ScalarFn::Exp {
                scale: 1.0,
                shift: 1.0
            }
        );

        let (nca, pnca) = (LossPlugin::nca(), LossPlugin::proxy_nca());
        assert_eq!(
            (
                nca.tau,
                nca.sigma_pos,
                nca.sigma_neg,
                nca.rho_pos,
                nca.rho_neg
            ),
            (
                pnca.tau,
                pnca.sigma_pos,
                pnca.sigma_neg,
                pnca.rho_pos,
                pnca.rho_neg
            )
        );
        assert_eq!(nca.kind.pos_neg_role(), Role::Example);
        assert_eq!(pnca.kind.pos_neg_role(), Role::Proxy);

        let pp = LossPlugin::proxy_nca_pp(0.5).unwrap();
        assert_eq!(
            pp.rho_pos,
            ScalarFn::Exp {
                scale: 2.0,
                shift: 0.0
            }
        );
        assert!(LossPlugin::proxy_nca_pp(0.0).is_err());
        assert!(LossPlugin::multi_similarity(-1.0, 75.0, 0.77).is_err());
    }

    #[test]
    fn nca_needs_positives() {
        let nca = LossPlugin::nca();
        assert!(!nca.accepts(false, true));
        assert!(nca.accepts(true, true));
        assert!(matches!(
            eval_generic(&nca, &[], &[0.3]),
            Err(Error::LogDomain(_))
        ));
        let c = LossPlugin::contrastive(0.5);
        assert!(c.accepts(false, false));
    }

    #[test]
    fn lifted_value() {
        let l = LossPlugin::lifted_structure(1.0);
        let (p, n) = ([0.9, 0.5], [0.4]);
        let expected = ((-0.9f64).exp() + (-0.5f64).exp()).ln() + (0.4f64 - 1.0).exp().ln();
        assert!((eval_generic(&l, &p, &n).unwrap() - expected.max(0.0)).abs() < 1e-14);
    }

    #[test]
    fn config_resolution() {
        let (resolved, p) = LossConfig {
            name: "ms".into(),
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(p, LossPlugin::multi_similarity(18.0, 75.0, 0.77).unwrap());
        assert_eq!(resolved.beta, Some(18.0));
        let (_, p) = LossConfig {
            name: "pa".into(),
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(p, LossPlugin::proxy_anchor(32.0, 32.0, 0.1).unwrap());
        let err = LossConfig {
            name: "triplet".into(),
            ..Default::default()
        }
        .resolve()
        .unwrap_err();
        let msg = err.to_string();
        for k in PluginKind::ALL {
            assert!(msg.contains(k.name()), "{msg}");
        }
        let (_, p) = LossConfig {
            name: "contrastive".into(),
            margin: Some(0.3),
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(p.hyper.margin, 0.3);
    }

    #[test]
    fn total_error_examples() {
        let mut tape = Tape::new();
        let c = tape.lift(1.0).unwrap();
        let m = tape.lift(0.5).unwrap();
        let e = total_error(&mut tape, &[c], &[Some(m)], 0.4).unwrap();
        assert!((tape.value(e) - 1.2).abs() < 1e-15);
        let e = total_error(&mut tape, &[c], &[Some(m)], 0.0).unwrap();
        assert_eq!(tape.value(e), 1.0);
        let c2 = tape.lift(3.0).unwrap();
        let e = total_error(&mut tape, &[c, c2], &[Some(m), None], 0.4).unwrap();
        assert!((tape.value(e) - (1.2 + 3.0) / 2.0).abs() < 1e-15);
        assert!(total_error(&mut tape, &[c], &[None], -0.1).is_err());
        assert!(total_error(&mut tape, &[c], &[], 0.4).is_err());
    }

    fn ms_direct(b: f64, g: f64, m: f64, pos: &[f64], neg: &[f64]) -> f64 {
        let sp: f64 = pos.iter().map(|s| (-b * (s - m)).exp()).sum();
        let sn: f64 = neg.iter().map(|s| (g * (s - m)).exp()).sum();
        (1.0 + sp).ln() / b + (1.0 + sn).ln() / g
    }

    proptest! {
            #[test]
            fn ms_gradient_matches_finite_diff(
                pos in prop::collection::vec(-1.0f64..1.0, 1..5),
                neg in prop::collection::vec(-1.0f64..1.0, 1..5),
            ) {
                let ms = LossPlugin::multi_similarity(18.0, 75.0, 0.77).unwrap();
                let mut tape = Tape::new();
                let pv = tape.lift_all(&pos).unwrap();
                let nv = tape.lift_all(&neg).unwrap();
                let l = ms.generic_loss(&mut tape, &pv, &nv).unwrap();
                let g = tape.backward(l);
                let all: Vec<f64> = pos.iter().chain(&neg).copied().collect();
                let np = pos.len();
                let fd = finite_diff(|x| Ok(ms_direct(18.0, 75.0, 0.77, &x[..np], &x[np..])), &all, 1e-4).unwrap();
                for (i, v) in pv.iter().chain(&nv).enumerate() {
                    let rel = (g.get(*v) - fd[i]).abs() / fd[i].abs().max(1.0);
                    prop_assert!(rel <= 1e-5);
                }
            }

            #[test]
            fn binary_labels_reduce_exactly(
                items in prop::collection::vec((-1.0f64..1.0, prop::bool::ANY), 1..8),
            ) {
                for p in [
                    LossPlugin::contrastive(0.5),
                    LossPlugin::multi_similarity(18.0, 75.0, 0.77).unwrap(),
                    LossPlugin::lifted_structure(1.0),
                    LossPlugin::nca(),
                ] {
                    let pos: Vec<f64> = items.iter().filter(|x| x.1).map(|x| x.0).collect();
                    let neg: Vec<f64> = items.iter().filter(|x| !x.1).map(|x| x.0).collect();
                    if !p.accepts(!pos.is_empty(), !neg.is_empty()) {
                        continue;
                    }
                    let labeled: Vec<(f64, f64)> = items.iter().map(|&(s, y)| (s, if y { 1.0 } else { 0.0 })).collect();
                    let a = eval_labeled(&p, &labeled).unwrap();
                    let b = eval_generic(&p, &pos, &neg).unwrap();
                    prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{:?}: {} vs {}", p.kind, a, b);
                }
            }
                #[test]
            fn raising_similarity_moves_loss_with_label(
                items in prop::collection::vec((-1.0f64..1.0, prop::bool::ANY), 2..8),
            ) {
                let plugins = [
                    LossPlugin::contrastive(0.5),
                    LossPlugin::lifted_structure(1.0),
                    LossPlugin::binomial_deviance(2.0, 2.0, 0.5).unwrap(),
                    LossPlugin::multi_similarity(18.0, 75.0, 0.77).unwrap(),
                    LossPlugin::proxy_anchor(32.0, 32.0, 0.1).unwrap(),
                    LossPlugin::nca(),
                    LossPlugin::proxy_nca(),
                    LossPlugin::proxy_nca_pp(1.0 / 9.0).unwrap(),
                ];
                let sims: Vec<f64> = items.iter().map(|x| x.0).collect();
                let labels: Vec<f64> = items.iter().map(|x| if x.1 { 1.0 } else { 0.0 }).collect();
                let has_pos = labels.iter().any(|&y| y > 0.0);
                let has_neg = labels.iter().any(|&y| y < 1.0);
                for p in plugins {
                    if !p.accepts(has_pos, has_neg) {
                        continue;
                    }
                    let (_, g) = p.labeled_loss_grad(&sims, &labels).unwrap();
                    for (gi, y) in g.iter().zip(&labels) {
                        if *y == 1.0 {
                            prop_assert!(*gi <= 0.0, "{:?}: positive gradient {}", p.kind, gi);
                        } else {
                            prop_assert!(*gi >= 0.0, "{:?}: negative gradient {}", p.kind, gi);
                        }
                    }
                }
            }
    }
}
