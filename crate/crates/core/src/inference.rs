//! The matching-support posterior engine.
//!
//! Each candidate `theta*` is paired with the fraction of its pseudo-samples
//! that match the observed sample. Plain rejection is the one-draw special
//! case; the extension step adds draws to an existing rejection run so both
//! can be compared on the same candidates.

use std::io;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::empirical::{MatchSpec, Matcher, PreparedMatcher, Sample};
use crate::error::{domain, Error, Result};
use crate::model::{GenerativeModel, Parameter, Prior};
use crate::stream::{CandidateStreams, Streams};

/// One candidate with its match count.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorAtom {
    pub theta_star: Parameter,
    /// Pseudo-samples that matched.
    pub matches: usize,
    /// Pseudo-samples drawn.
    pub m_used: usize,
    pub selected: bool,
}

impl PosteriorAtom {
    pub fn p_match(&self) -> f64 {
        self.matches as f64 / self.m_used as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PosteriorMode {
    /// Candidates kept when `p_match >= alpha`.
    Filtered,
    /// Every candidate kept with weight `p_match`.
    ForAll,
    /// One draw per candidate, 0-1 acceptance.
    AbcFlat,
}

/// Selection rule for [`fabc`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FabcMode {
    Filtered,
    ForAll,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PosteriorStatus {
    Ok,
    /// No candidate survived; a legal outcome that callers must handle.
    EmptySelection,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub atoms: Vec<PosteriorAtom>,
    pub mode: PosteriorMode,
    pub epsilon: f64,
    pub alpha: f64,
    /// Pseudo-samples per candidate requested by the run that built this.
    pub m: usize,
    pub matcher: Matcher,
}

impl Posterior {
    fn assemble(
        atoms: Vec<PosteriorAtom>,
        mode: PosteriorMode,
        spec: &MatchSpec,
        alpha: f64,
        m: usize,
    ) -> Self {
        Self {
            atoms,
            mode,
            epsilon: spec.epsilon,
            alpha,
            m,
            matcher: spec.matcher.clone(),
        }
    }

    pub fn selected(&self) -> impl Iterator<Item = &PosteriorAtom> {
        self.atoms.iter().filter(|a| a.selected)
    }

    pub fn selected_count(&self) -> usize {
        self.selected().count()
    }

    pub fn status(&self) -> PosteriorStatus {
        if self.selected().any(|_| true) {
            PosteriorStatus::Ok
        } else {
            PosteriorStatus::EmptySelection
        }
    }

    /// Smallest `p_match` over the selected candidates.
    pub fn observed_msp(&self) -> Option<f64> {
        self.selected().map(PosteriorAtom::p_match).reduce(f64::min)
    }

    /// Merges atoms that share the same `theta*` (possible with discrete
    /// priors), summing their counts. Atoms are independent by default.
    pub fn pooled(&self) -> Posterior {
        let mut atoms: Vec<PosteriorAtom> = Vec::new();
        for a in &self.atoms {
            match atoms.iter_mut().find(|b| b.theta_star == a.theta_star) {
                Some(b) => {
                    b.matches += a.matches;
                    b.m_used += a.m_used;
                    b.selected |= a.selected;
                }
                None => atoms.push(a.clone()),
            }
        }
        Posterior {
            atoms,
            ..self.clone()
        }
    }

    /// CSV with columns `theta_star_1..k, p_match, selected, m_used`.
    pub fn write_atoms_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let k = self.atoms.first().map(|a| a.theta_star.dim()).unwrap_or(1);
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=k).map(|j| format!("theta_star_{j}")).collect();
        header.extend(["p_match", "selected", "m_used"].map(String::from));
        let io_err = |e: csv::Error| Error::Parse(e.to_string());
        w.write_record(&header).map_err(io_err)?;
        for a in &self.atoms {
            let mut rec: Vec<String> = a
                .theta_star
                .values()
                .iter()
                .map(|v| v.to_string())
                .collect();
            rec.push(a.p_match().to_string());
            rec.push(a.selected.to_string());
            rec.push(a.m_used.to_string());
            w.write_record(&rec).map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))
    }

    /// Parses the atom CSV written by [`Posterior::write_atoms_csv`].
    pub fn read_atoms_csv<R: io::Read>(reader: R) -> Result<Vec<PosteriorAtom>> {
        let mut rdr = csv::Reader::from_reader(reader);
        let parse_err = |e: &dyn std::fmt::Display| Error::Parse(e.to_string());
        let k = rdr
            .headers()
            .map_err(|e| parse_err(&e))?
            .iter()
            .filter(|h| h.starts_with("theta_star_"))
            .count();
        let mut atoms = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| parse_err(&e))?;
            if rec.len() != k + 3 {
                return Err(Error::Parse(format!(
                    "expected {} fields, got {}",
                    k + 3,
                    rec.len()
                )));
            }
            let theta: Vec<f64> = (0..k)
                .map(|j| rec[j].parse::<f64>().map_err(|e| parse_err(&e)))
                .collect::<Result<_>>()?;
            let p: f64 = rec[k].parse().map_err(|e| parse_err(&e))?;
            let selected: bool = rec[k + 1].parse().map_err(|e| parse_err(&e))?;
            let m_used: usize = rec[k + 2].parse().map_err(|e| parse_err(&e))?;
            atoms.push(PosteriorAtom {
                theta_star: Parameter::new(theta)?,
                matches: (p * m_used as f64).round() as usize,
                m_used,
                selected,
            });
        }
        Ok(atoms)
    }

    /// JSON document with the atoms and the settings that produced them.
    pub fn to_json(&self, seed: u64, n_star: usize) -> serde_json::Value {
        serde_json::json!({
            "metadata": {
                "seed": seed,
                "epsilon": self.epsilon,
                "alpha": self.alpha,
                "m": self.m,
                "n_star": n_star,
                "matcher": self.matcher.to_string(),
                "mode": self.mode,
                "status": self.status(),
                "observed_msp": self.observed_msp(),
                "selected": self.selected_count(),
                "variance_convention": "population",
            },
            "atoms": self.atoms.iter().map(|a| serde_json::json!({
                "theta_star": a.theta_star.values(),
                "p_match": a.p_match(),
                "matches": a.matches,
                "selected": a.selected,
                "m_used": a.m_used,
            })).collect::<Vec<_>>(),
        })
    }
}

fn check_compatible<M: GenerativeModel>(model: &M, x_obs: &Sample, spec: &MatchSpec) -> Result<()> {
    if x_obs.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            left: model.dim(),
            right: x_obs.dim(),
        });
    }
    spec.matcher.check_dim(x_obs.dim())
}

/// Distances to the prepared reference of pseudo-samples `replicates`
/// drawn from `F_theta`, each on its own substream.
pub fn replicate_distances<M: GenerativeModel>(
    model: &M,
    theta: &Parameter,
    n: usize,
    reference: &PreparedMatcher,
    streams: &CandidateStreams,
    replicates: Range<usize>,
) -> Result<Vec<f64>> {
    replicates
        .map(|j| {
            let y = model.simulate(theta, n, &mut streams.replicate(j))?;
            reference.distance(&y)
        })
        .collect()
}

fn count_matches<M: GenerativeModel>(
    model: &M,
    theta: &Parameter,
    n: usize,
    reference: &PreparedMatcher,
    spec: &MatchSpec,
    streams: &CandidateStreams,
    replicates: Range<usize>,
) -> Result<usize> {
    let mut hits = 0;
    for j in replicates {
        let y = model.simulate(theta, n, &mut streams.replicate(j))?;
        if spec.accepts(reference.distance(&y)?) {
            hits += 1;
        }
    }
    Ok(hits)
}

/// Fraction of `m` pseudo-samples from `F_theta*` that match `x_obs`.
pub fn pmatch<M: GenerativeModel>(
    model: &M,
    theta_star: &Parameter,
    x_obs: &Sample,
    spec: &MatchSpec,
    m: usize,
    streams: &CandidateStreams,
) -> Result<f64> {
    if m == 0 {
        return Err(domain("at least one pseudo-sample is required"));
    }
    check_compatible(model, x_obs, spec)?;
    let reference = spec.matcher.prepare(x_obs)?;
    let hits = count_matches(
        model,
        theta_star,
        x_obs.len(),
        &reference,
        spec,
        streams,
        0..m,
    )?;
    Ok(hits as f64 / m as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FabcOptions {
    /// Pseudo-samples per candidate.
    pub m: usize,
    /// Candidates drawn from the prior (ignored by grid priors).
    pub n_star: usize,
    /// Selection threshold on `p_match` in filtered mode.
    pub alpha: f64,
    pub mode: FabcMode,
}

/// Draws the candidates, computes `p_match` for each from pseudo-samples
/// `0..m` of its substream and applies the selection rule.
pub fn fabc<M: GenerativeModel>(
    model: &M,
    prior: &Prior,
    x_obs: &Sample,
    spec: &MatchSpec,
    options: &FabcOptions,
    streams: &Streams,
) -> Result<Posterior> {
    if options.m == 0 {
        return Err(domain(
            "at least one pseudo-sample per candidate is required",
        ));
    }
    if !(0.0..=1.0).contains(&options.alpha) {
        return Err(domain(format!(
            "alpha must lie in [0, 1], got {}",
            options.alpha
        )));
    }
    check_compatible(model, x_obs, spec)?;
    check_prior(model, prior)?;
    let candidates = prior.draw(options.n_star, &mut streams.prior())?;
    let reference = spec.matcher.prepare(x_obs)?;
    let n = x_obs.len();
    let atoms = candidates
        .into_par_iter()
        .enumerate()
        .map(|(i, theta_star)| {
            let matches = count_matches(
                model,
                &theta_star,
                n,
                &reference,
                spec,
                &streams.candidate(i),
                0..options.m,
            )?;
            let p = matches as f64 / options.m as f64;
            let selected = match options.mode {
                FabcMode::ForAll => true,
                FabcMode::Filtered => p >= options.alpha,
            };
            Ok(PosteriorAtom {
                theta_star,
                matches,
                m_used: options.m,
                selected,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (mode, alpha) = match options.mode {
        FabcMode::Filtered => (PosteriorMode::Filtered, options.alpha),
        FabcMode::ForAll => (PosteriorMode::ForAll, 0.0),
    };
    Ok(Posterior::assemble(atoms, mode, spec, alpha, options.m))
}

fn check_prior<M: GenerativeModel>(model: &M, prior: &Prior) -> Result<()> {
    if prior.dim() != model.param_dim() {
        return Err(Error::ParameterShape {
            expected: model.param_dim(),
            got: prior.dim(),
        });
    }
    Ok(())
}

/// Rejection ABC: one pseudo-sample (replicate 0) per candidate, accepted
/// when it matches.
pub fn abc_reject<M: GenerativeModel>(
    model: &M,
    prior: &Prior,
    x_obs: &Sample,
    spec: &MatchSpec,
    n_star: usize,
    streams: &Streams,
) -> Result<Posterior> {
    let options = FabcOptions {
        m: 1,
        n_star,
        alpha: 1.0,
        mode: FabcMode::Filtered,
    };
    let mut post = fabc(model, prior, x_obs, spec, &options, streams)?;
    post.mode = PosteriorMode::AbcFlat;
    Ok(post)
}

/// Which candidates of a rejection run receive additional pseudo-samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtendScope {
    /// Only the accepted ones; the result keeps the rejection run's selection.
    Selected,
    /// Every candidate; the result keeps all of them.
    All,
}

/// Adds pseudo-samples `1..=m` to the candidates of a rejection run (which
/// used replicate 0) so that each extended atom carries `p_match` over
/// `m + 1` draws, the original outcome included. `streams` must be the ones
/// the rejection run used.
pub fn extend_abc_to_fabc<M: GenerativeModel>(
    model: &M,
    abc: &Posterior,
    x_obs: &Sample,
    spec: &MatchSpec,
    m: usize,
    scope: ExtendScope,
    streams: &Streams,
) -> Result<Posterior> {
    if abc.mode != PosteriorMode::AbcFlat {
        return Err(domain("only a rejection posterior can be extended"));
    }
    if abc.epsilon != spec.epsilon || abc.matcher != spec.matcher {
        return Err(domain(format!(
            "matcher {} at epsilon {} differs from the rejection run ({} at {})",
            spec.matcher, spec.epsilon, abc.matcher, abc.epsilon
        )));
    }
    if m == 0 {
        return Err(domain("at least one additional pseudo-sample is required"));
    }
    check_compatible(model, x_obs, spec)?;
    let reference = spec.matcher.prepare(x_obs)?;
    let n = x_obs.len();
    let atoms = abc
        .atoms
        .par_iter()
        .enumerate()
        .map(|(i, atom)| {
            let extend = scope == ExtendScope::All || atom.selected;
            if !extend {
                return Ok(atom.clone());
            }
            let extra = count_matches(
                model,
                &atom.theta_star,
                n,
                &reference,
                spec,
                &streams.candidate(i),
                1..m + 1,
            )?;
            Ok(PosteriorAtom {
                theta_star: atom.theta_star.clone(),
                matches: atom.matches + extra,
                m_used: atom.m_used + m,
                selected: scope == ExtendScope::All || atom.selected,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (mode, alpha) = match scope {
        // accepted atoms hold at least their original match
        ExtendScope::Selected => (PosteriorMode::Filtered, 1.0 / (m + 1) as f64),
        ExtendScope::All => (PosteriorMode::ForAll, 0.0),
    };
    Ok(Posterior::assemble(atoms, mode, spec, alpha, m + 1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Plain moments of the selected candidates.
    Unweighted,
    /// Moments with weights `p_match` normalized to sum to one.
    PMatchWeighted,
}

/// Moments of the selected candidates. Variances use the population
/// convention, so `mse = sum_j variance_j + (mean_j - theta_true_j)^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub mse: f64,
    pub count_selected: usize,
    pub weighting: Weighting,
}

fn weights(posterior: &Posterior, weighting: Weighting) -> Result<(Vec<(&Parameter, f64)>, f64)> {
    let w: Vec<(&Parameter, f64)> = posterior
        .selected()
        .map(|a| {
            let w = match weighting {
                Weighting::Unweighted => 1.0,
                Weighting::PMatchWeighted => a.p_match(),
            };
            (&a.theta_star, w)
        })
        .collect();
    let total: f64 = w.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return Err(Error::EmptySupport);
    }
    Ok((w, total))
}

pub fn summarize(
    posterior: &Posterior,
    theta_true: &Parameter,
    weighting: Weighting,
) -> Result<SummaryStats> {
    let (w, total) = weights(posterior, weighting)?;
    let k = theta_true.dim();
    if let Some((p, _)) = w.iter().find(|(p, _)| p.dim() != k) {
        return Err(Error::ParameterShape {
            expected: k,
            got: p.dim(),
        });
    }
    let mut mean = vec![0.0; k];
    for (p, wi) in &w {
        for j in 0..k {
            mean[j] += wi * p[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut variance = vec![0.0; k];
    for (p, wi) in &w {
        for j in 0..k {
            variance[j] += wi * (p[j] - mean[j]).powi(2);
        }
    }
    variance.iter_mut().for_each(|v| *v /= total);
    let mse = (0..k)
        .map(|j| variance[j] + (mean[j] - theta_true[j]).powi(2))
        .sum();
    Ok(SummaryStats {
        mean,
        variance,
        mse,
        count_selected: posterior.selected_count(),
        weighting,
    })
}

/// Posterior expectation of `h` under the normalized weights.
pub fn expected_h<F: Fn(&Parameter) -> f64>(
    posterior: &Posterior,
    h: F,
    weighting: Weighting,
) -> Result<f64> {
    let (w, total) = weights(posterior, weighting)?;
    Ok(w.iter().map(|(p, wi)| wi * h(p)).sum::<f64>() / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Normal1D;

    fn atom(theta: f64, matches: usize, m_used: usize, selected: bool) -> PosteriorAtom {
        PosteriorAtom {
            theta_star: Parameter::scalar(theta).unwrap(),
            matches,
            m_used,
            selected,
        }
    }

    fn posterior(atoms: Vec<PosteriorAtom>) -> Posterior {
        Posterior {
            atoms,
            mode: PosteriorMode::ForAll,
            epsilon: 0.1,
            alpha: 0.0,
            m: 1,
            matcher: Matcher::Ks1d,
        }
    }

    fn setup() -> (Normal1D, Sample, Prior) {
        let model = Normal1D::default();
        let x = model
            .simulate(
                &Parameter::scalar(0.0).unwrap(),
                100,
                &mut Streams::new(1).observed(),
            )
            .unwrap();
        (model, x, Prior::uniform(vec![-1.0], vec![1.0]).unwrap())
    }

    #[test]
    fn two_point_summary() {
        let p = posterior(vec![atom(1.0, 1, 1, true), atom(-1.0, 1, 1, true)]);
        let s = summarize(&p, &Parameter::scalar(0.0).unwrap(), Weighting::Unweighted).unwrap();
        assert_eq!(s.mean, vec![0.0]);
        assert_eq!(s.variance, vec![1.0]);
        assert_eq!(s.mse, 1.0);
        assert_eq!(s.count_selected, 2);
    }

    #[test]
    fn single_atom_summary() {
        let p = posterior(vec![atom(0.3, 2, 5, true), atom(9.0, 0, 5, false)]);
        let s = summarize(
            &p,
            &Parameter::scalar(0.0).unwrap(),
            Weighting::PMatchWeighted,
        )
        .unwrap();
        assert_eq!(s.mean, vec![0.3]);
        assert_eq!(s.variance, vec![0.0]);
        assert!((s.mse - 0.09).abs() < 1e-15);
    }

    #[test]
    fn empty_support_is_an_error() {
        let p = posterior(vec![atom(0.3, 0, 5, false)]);
        let t = Parameter::scalar(0.0).unwrap();
        assert_eq!(
            summarize(&p, &t, Weighting::Unweighted),
            Err(Error::EmptySupport)
        );
        let zero = posterior(vec![atom(0.3, 0, 5, true)]);
        assert_eq!(
            summarize(&zero, &t, Weighting::PMatchWeighted),
            Err(Error::EmptySupport)
        );
        assert!(expected_h(&zero, |_| 1.0, Weighting::PMatchWeighted).is_err());
        assert_eq!(p.status(), PosteriorStatus::EmptySelection);
        assert_eq!(p.observed_msp(), None);
    }

    #[test]
    fn expected_h_consistency() {
        let p = posterior(vec![
            atom(0.5, 3, 4, true),
            atom(-0.2, 1, 4, true),
            atom(0.1, 4, 4, true),
        ]);
        let s = summarize(
            &p,
            &Parameter::scalar(0.0).unwrap(),
            Weighting::PMatchWeighted,
        )
        .unwrap();
        let m = expected_h(&p, |t| t[0], Weighting::PMatchWeighted).unwrap();
        assert!((m - s.mean[0]).abs() < 1e-15);
        assert_eq!(
            expected_h(&p, |_| 2.5, Weighting::PMatchWeighted).unwrap(),
            2.5
        );
        assert_eq!(p.observed_msp(), Some(0.25));
    }

    #[test]
    fn pmatch_with_unit_tolerance_is_one() {
        let (model, x, _) = setup();
        let spec = MatchSpec::new(Matcher::Ks1d, 1.0).unwrap();
        let streams = Streams::new(9);
        for t in [-3.0, 0.0, 10.0] {
            let p = pmatch(
                &model,
                &Parameter::scalar(t).unwrap(),
                &x,
                &spec,
                20,
                &streams.candidate(0),
            )
            .unwrap();
            assert_eq!(p, 1.0);
        }
    }

    #[test]
    fn pmatch_far_candidate_is_zero() {
        let (model, x, _) = setup();
        let spec = MatchSpec::new(Matcher::Ks1d, 0.63).unwrap();
        let p = pmatch(
            &model,
            &Parameter::scalar(4.0).unwrap(),
            &x,
            &spec,
            200,
            &Streams::new(2).candidate(0),
        )
        .unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn dimension_checks() {
        let (model, _, prior) = setup();
        let x2 = Sample::from_rows(&[[0.0, 1.0]]).unwrap();
        let spec = MatchSpec::new(Matcher::Ks1d, 0.5).unwrap();
        assert!(abc_reject(&model, &prior, &x2, &spec, 10, &Streams::new(0)).is_err());
        let prior2 = Prior::uniform(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let x = Sample::from_values(vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            abc_reject(&model, &prior2, &x, &spec, 10, &Streams::new(0)),
            Err(Error::ParameterShape { .. })
        ));
    }

    #[test]
    fn reduction_to_rejection() {
        let (model, x, prior) = setup();
        let spec = MatchSpec::new(Matcher::Ks1d, 0.12).unwrap();
        let streams = Streams::new(77);
        let abc = abc_reject(&model, &prior, &x, &spec, 300, &streams).unwrap();
        let opts = FabcOptions {
            m: 1,
            n_star: 300,
            alpha: 1.0,
            mode: FabcMode::Filtered,
        };
        let f = fabc(&model, &prior, &x, &spec, &opts, &streams).unwrap();
        assert_eq!(abc.atoms, f.atoms);
        assert!(abc.selected_count() > 0);
        for a in &abc.atoms {
            assert_eq!(a.m_used, 1);
            assert_eq!(a.selected, a.matches == 1);
        }
    }

    #[test]
    fn vacuous_filter_equals_for_all() {
        let (model, x, prior) = setup();
        let spec = MatchSpec::new(Matcher::Ks1d, 0.14).unwrap();
        let streams = Streams::new(3);
        let base = FabcOptions {
            m: 20,
            n_star: 50,
            alpha: 0.0,
            mode: FabcMode::Filtered,
        };
        let a = fabc(&model, &prior, &x, &spec, &base, &streams).unwrap();
        let b = fabc(
            &model,
            &prior,
            &x,
            &spec,
            &FabcOptions {
                mode: FabcMode::ForAll,
                ..base
            },
            &streams,
        )
        .unwrap();
        assert_eq!(a.atoms, b.atoms);
    }

    #[test]
    fn filter_is_sound() {
        let (model, x, prior) = setup();
        let spec = MatchSpec::new(Matcher::Ks1d, 0.14).unwrap();
        let opts = FabcOptions {
            m: 30,
            n_star: 80,
            alpha: 0.4,
            mode: FabcMode::Filtered,
        };
        let post = fabc(&model, &prior, &x, &spec, &opts, &Streams::new(4)).unwrap();
        for a in &post.atoms {
            assert_eq!(a.selected, a.p_match() >= 0.4);
            assert_eq!(a.p_match() * a.m_used as f64, a.matches as f64);
        }
        if let Some(msp) = post.observed_msp() {
            assert!(msp >= 0.4);
        }
    }

    #[test]
    fn extension_counts_the_original_draw() {
        let (model, x, prior) = setup();
        let spec = MatchSpec::new(Matcher::Ks1d, 0.14).unwrap();
        let streams = Streams::new(5);
        let abc = abc_reject(&model, &prior, &x, &spec, 60, &streams).unwrap();
        let ext = extend_abc_to_fabc(&model, &abc, &x, &spec, 40, ExtendScope::Selected, &streams)
            .unwrap();
        for (a, e) in abc.atoms.iter().zip(&ext.atoms) {
            assert_eq!(e.selected, a.selected);
            if a.selected {
                assert_eq!(e.m_used, 41);
                assert!(e.matches >= 1);
            } else {
                assert_eq!(e, a);
            }
        }
        // extending everything equals a for-all run with m + 1 draws
        let all =
            extend_abc_to_fabc(&model, &abc, &x, &spec, 40, ExtendScope::All, &streams).unwrap();
        let opts = FabcOptions {
            m: 41,
            n_star: 60,
            alpha: 0.0,
            mode: FabcMode::ForAll,
        };
        let direct = fabc(&model, &prior, &x, &spec, &opts, &streams).unwrap();
        assert_eq!(all.atoms, direct.atoms);
    }

    #[test]
    fn extension_rejects_a_different_spec() {
        let (model, x, prior) = setup();
        let spec = MatchSpec::new(Matcher::Ks1d, 0.14).unwrap();
        let streams = Streams::new(5);
        let abc = abc_reject(&model, &prior, &x, &spec, 10, &streams).unwrap();
        let other = MatchSpec::new(Matcher::Ks1d, 0.2).unwrap();
        assert!(
            extend_abc_to_fabc(&model, &abc, &x, &other, 5, ExtendScope::All, &streams).is_err()
        );
        let par = MatchSpec::new(
            Matcher::ParametricAbs {
                reference: vec![0.0],
            },
            0.14,
        )
        .unwrap();
        assert!(extend_abc_to_fabc(&model, &abc, &x, &par, 5, ExtendScope::All, &streams).is_err());
    }

    #[test]
    fn pmatch_monotone_in_epsilon() {
        let (model, x, _) = setup();
        let reference = Matcher::Ks1d.prepare(&x).unwrap();
        let theta = Parameter::scalar(0.3).unwrap();
        let d = replicate_distances(
            &model,
            &theta,
            100,
            &reference,
            &Streams::new(8).candidate(0),
            0..100,
        )
        .unwrap();
        let mut last = 0;
        for k in 0..=100 {
            let eps = k as f64 / 100.0;
            let c = d.iter().filter(|&&v| v <= eps).count();
            assert!(c >= last);
            last = c;
            let spec = MatchSpec::new(Matcher::Ks1d, eps).unwrap();
            let p = pmatch(
                &model,
                &theta,
                &x,
                &spec,
                100,
                &Streams::new(8).candidate(0),
            )
            .unwrap();
            assert_eq!(p, c as f64 / 100.0);
        }
    }

    #[test]
    fn atoms_csv_round_trip() {
        let p = posterior(vec![atom(0.125, 150, 201, true), atom(-0.7, 0, 1, false)]);
        let mut buf = Vec::new();
        p.write_atoms_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("theta_star_1,p_match,selected,m_used\n"));
        assert_eq!(Posterior::read_atoms_csv(&buf[..]).unwrap(), p.atoms);
        let mut again = Vec::new();
        posterior(Posterior::read_atoms_csv(&buf[..]).unwrap())
            .write_atoms_csv(&mut again)
            .unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn pooling_merges_duplicates() {
        let p = posterior(vec![
            atom(0.5, 1, 2, true),
            atom(0.5, 0, 2, false),
            atom(0.1, 2, 2, true),
        ]);
        let pooled = p.pooled();
        assert_eq!(pooled.atoms.len(), 2);
        assert_eq!(pooled.atoms[0].matches, 1);
        assert_eq!(pooled.atoms[0].m_used, 4);
    }

    #[test]
    fn parametric_rejection_with_zero_tolerance_accepts_nothing() {
        let (model, x, prior) = setup();
        let spec = MatchSpec::new(Matcher::Ks1d, 0.0).unwrap();
        let post = abc_reject(&model, &prior, &x, &spec, 200, &Streams::new(6)).unwrap();
        assert_eq!(post.selected_count(), 0);
        assert_eq!(post.status(), PosteriorStatus::EmptySelection);
    }
}
