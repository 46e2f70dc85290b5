//! Semiparametric calculus on finite discrete measures.
//!
//! A [`DiscreteMeasure`] is a probability vector over named-coordinate
//! points. Functionals are evaluated by exact sums, so influence functions
//! obtained by numerically differentiating along point-mass contaminations
//! can be compared with their closed forms, and pathwise derivatives along
//! score directions can be checked against `E[phi * s]`.
//!
//! Causal functionals read the coordinates `a` (binary treatment) and `y`
//! (outcome); every other coordinate is a covariate.

use std::fmt;
use std::io::Read;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::error::{Error, Result};

const MASS_TOL: f64 = 1e-12;

/// Probability measure with finite support.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteMeasure {
    coords: Vec<String>,
    points: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(coords: Vec<String>, points: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        if points.len() != probs.len() {
            return Err(Error::Validation("points and probs differ in length".into()));
        }
        if points.is_empty() {
            return Err(Error::Validation("empty support".into()));
        }
        if let Some(p) = points.iter().find(|p| p.len() != coords.len()) {
            return Err(Error::Validation(format!(
                "support point has {} coordinates, expected {}",
                p.len(),
                coords.len()
            )));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite support coordinate".into()));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Validation("probabilities must be nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::Validation(format!("probabilities sum to {total}")));
        }
        for (i, p) in points.iter().enumerate() {
            if points[..i].contains(p) {
                return Err(Error::Validation(format!("duplicate support point {p:?}")));
            }
        }
        Ok(Self { coords, points, probs })
    }

    /// Empirical measure of a sample: distinct rows weighted by frequency.
    pub fn empirical(coords: Vec<String>, sample: &[Vec<f64>]) -> Result<Self> {
        let mut points: Vec<Vec<f64>> = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        for row in sample {
            match points.iter().position(|p| p == row) {
                Some(i) => counts[i] += 1.0,
                None => {
                    points.push(row.clone());
                    counts.push(1.0);
                }
            }
        }
        let n = sample.len() as f64;
        let mut probs: Vec<f64> = counts.iter().map(|c| c / n).collect();
        renormalize(&mut probs);
        Self::new(coords, points, probs)
    }

    /// Reads a support table with one column per coordinate plus a `prob`
    /// column.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let prob_col = headers
            .iter()
            .position(|h| h == "prob")
            .ok_or_else(|| Error::MissingColumn("prob".into()))?;
        let coords: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != prob_col)
            .map(|(_, h)| h.clone())
            .collect();
        let mut points = Vec::new();
        let mut probs = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut point = Vec::with_capacity(coords.len());
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    row: row + 1,
                    column: headers[j].clone(),
                    value: field.to_string(),
                })?;
                if j == prob_col {
                    probs.push(v);
                } else {
                    point.push(v);
                }
            }
            points.push(point);
        }
        Self::new(coords, points, probs)
    }

    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn coord_index(&self, name: &str) -> Result<usize> {
        self.coords
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn position(&self, point: &[f64]) -> Option<usize> {
        self.points.iter().position(|p| p == point)
    }

    /// Same measure with `point` in the support (mass 0 if it was absent),
    /// and its index.
    pub fn with_point(&self, point: &[f64]) -> Result<(Self, usize)> {
        if point.len() != self.coords.len() {
            return Err(Error::Support(format!(
                "point has {} coordinates, measure has {}",
                point.len(),
                self.coords.len()
            )));
        }
        match self.position(point) {
            Some(i) => Ok((self.clone(), i)),
            None => {
                let mut m = self.clone();
                m.points.push(point.to_vec());
                m.probs.push(0.0);
                Ok((m, self.points.len()))
            }
        }
    }

    /// Same support, different masses (checked).
    pub fn reweighted(&self, probs: Vec<f64>) -> Result<Self> {
        Self::new(self.coords.clone(), self.points.clone(), probs)
    }

    pub fn expectation(&self, values: &[f64]) -> f64 {
        self.probs.iter().zip(values).map(|(p, v)| p * v).sum()
    }

    /// i.i.d. draws of support points.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        let dist = WeightedIndex::new(&self.probs).map_err(|e| Error::Validation(e.to_string()))?;
        Ok((0..n).map(|_| self.points[dist.sample(rng)].clone()).collect())
    }

    /// Two-point mixture `(1 - eps) P + eps G` on the union of supports.
    pub fn mix(&self, other: &DiscreteMeasure, eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::Step(format!("mixing weight {eps} outside [0, 1]")));
        }
        if self.coords != other.coords {
            return Err(Error::Support("measures have different coordinates".into()));
        }
        let mut points = self.points.clone();
        let mut probs: Vec<f64> = self.probs.iter().map(|p| (1.0 - eps) * p).collect();
        for (q, g) in other.points.iter().zip(&other.probs) {
            match points.iter().position(|p| p == q) {
                Some(i) => probs[i] += eps * g,
                None => {
                    points.push(q.clone());
                    probs.push(eps * g);
                }
            }
        }
        renormalize(&mut probs);
        Self::new(self.coords.clone(), points, probs)
    }

    /// Point mass at `point`.
    pub fn dirac(coords: Vec<String>, point: Vec<f64>) -> Result<Self> {
        Self::new(coords, vec![point], vec![1.0])
    }

    fn causal_layout(&self) -> Result<Layout> {
        let a = self.coord_index("a")?;
        let y = self.coord_index("y")?;
        if let Some(p) = self.points.iter().find(|p| p[a] != 0.0 && p[a] != 1.0) {
            return Err(Error::Validation(format!("treatment coordinate must be 0/1, got {}", p[a])));
        }
        let x_cols: Vec<usize> = (0..self.coords.len()).filter(|&j| j != a && j != y).collect();
        let mut keys: Vec<Vec<f64>> = Vec::new();
        let stratum = self
            .points
            .iter()
            .map(|p| {
                let key: Vec<f64> = x_cols.iter().map(|&j| p[j]).collect();
                match keys.iter().position(|k| *k == key) {
                    Some(s) => s,
                    None => {
                        keys.push(key);
                        keys.len() - 1
                    }
                }
            })
            .collect();
        Ok(Layout {
            a,
            y,
            x_cols,
            stratum,
            keys,
        })
    }
}

/// Absorb rounding so masses sum to one.
fn renormalize(probs: &mut [f64]) {
    let total: f64 = probs.iter().sum();
    if total > 0.0 {
        for p in probs.iter_mut() {
            *p /= total;
        }
    }
}

/// Covariate strata of a causal measure.
struct Layout {
    a: usize,
    y: usize,
    x_cols: Vec<usize>,
    stratum: Vec<usize>,
    keys: Vec<Vec<f64>>,
}

/// Per-stratum nuisances under given masses.
#[derive(Debug, Clone)]
struct Nuisances {
    px: Vec<f64>,
    /// `P(A = 1 | x)`.
    pi: Vec<f64>,
    /// `E[Y | A = arm, x]` indexed `[arm][stratum]`; NaN where the cell is empty.
    mu: [Vec<f64>; 2],
    cell: [Vec<f64>; 2],
}

impl Layout {
    fn nuisances(&self, points: &[Vec<f64>], probs: &[f64]) -> Nuisances {
        let k = self.keys.len();
        let mut px = vec![0.0; k];
        let mut cell = [vec![0.0; k], vec![0.0; k]];
        let mut sum_y = [vec![0.0; k], vec![0.0; k]];
        for ((p, &w), &s) in points.iter().zip(probs).zip(&self.stratum) {
            let arm = usize::from(p[self.a] == 1.0);
            px[s] += w;
            cell[arm][s] += w;
            sum_y[arm][s] += w * p[self.y];
        }
        let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { f64::NAN };
        let mu = [
            (0..k).map(|s| ratio(sum_y[0][s], cell[0][s])).collect(),
            (0..k).map(|s| ratio(sum_y[1][s], cell[1][s])).collect(),
        ];
        let pi = (0..k).map(|s| ratio(cell[1][s], px[s])).collect();
        Nuisances { px, pi, mu, cell }
    }

    fn counterfactual_mean(&self, n: &Nuisances, arm: usize) -> Result<f64> {
        let mut psi = 0.0;
        for s in 0..self.keys.len() {
            if n.px[s] > 0.0 {
                if !(n.cell[arm][s] > 0.0) {
                    return Err(Error::Evaluability(format!(
                        "no mass in arm {arm} at covariate value {:?}",
                        self.keys[s]
                    )));
                }
                psi += n.px[s] * n.mu[arm][s];
            }
        }
        Ok(psi)
    }

    fn stratum_of(&self, point: &[f64]) -> Option<usize> {
        let key: Vec<f64> = self.x_cols.iter().map(|&j| point[j]).collect();
        self.keys.iter().position(|k| *k == key)
    }
}

/// Target functionals on discrete measures.
#[derive(Debug, Clone, PartialEq)]
pub enum Functional {
    /// `E[coord]`.
    Mean(String),
    /// `E[coord | c1 = v1, ...]`.
    CondMean { coord: String, conditions: Vec<(String, f64)> },
    /// `E[E[Y | A = arm, X]]`.
    CounterfactualMean(bool),
    /// `E[Y(1)] - E[Y(0)]` under unconfoundedness.
    Ate,
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Functional::Mean(c) => write!(f, "mean({c})"),
            Functional::CondMean { coord, conditions } => {
                let conds: Vec<String> = conditions.iter().map(|(k, v)| format!("{k}={v}")).collect();
                write!(f, "cond_mean({coord}|{})", conds.join(","))
            }
            Functional::CounterfactualMean(arm) => write!(f, "counterfactual_mean({})", u8::from(*arm)),
            Functional::Ate => write!(f, "ate"),
        }
    }
}

impl FromStr for Functional {
    type Err = Error;

    /// Accepts `mean(y)`, `cond_mean(y|a=0,x=1)`, `counterfactual_mean(1)`
    /// and `ate`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("unrecognized functional `{s}`"));
        if s == "ate" {
            return Ok(Functional::Ate);
        }
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let inner = rest.strip_suffix(')').ok_or_else(bad)?.trim();
        match name.trim() {
            "mean" if !inner.is_empty() => Ok(Functional::Mean(inner.to_string())),
            "cond_mean" => {
                let (coord, conds) = inner.split_once('|').ok_or_else(bad)?;
                let conditions = conds
                    .split(',')
                    .map(|c| {
                        let (k, v) = c.split_once('=').ok_or_else(bad)?;
                        let v: f64 = v.trim().parse().map_err(|_| bad())?;
                        Ok((k.trim().to_string(), v))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Functional::CondMean {
                    coord: coord.trim().to_string(),
                    conditions,
                })
            }
            "counterfactual_mean" => match inner {
                "0" => Ok(Functional::CounterfactualMean(false)),
                "1" => Ok(Functional::CounterfactualMean(true)),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

impl Functional {
    pub fn evaluate(&self, m: &DiscreteMeasure) -> Result<f64> {
        self.evaluate_probs(m, &m.probs)
    }

    fn condition_mask(&self, m: &DiscreteMeasure, conditions: &[(String, f64)]) -> Result<Vec<bool>> {
        let idx: Vec<(usize, f64)> = conditions
            .iter()
            .map(|(k, v)| Ok((m.coord_index(k)?, *v)))
            .collect::<Result<_>>()?;
        Ok(m.points.iter().map(|p| idx.iter().all(|&(j, v)| p[j] == v)).collect())
    }

    /// Evaluates at the masses `probs` over the support of `m`.
    fn evaluate_probs(&self, m: &DiscreteMeasure, probs: &[f64]) -> Result<f64> {
        match self {
            Functional::Mean(c) => {
                let j = m.coord_index(c)?;
                Ok(m.points.iter().zip(probs).map(|(p, w)| w * p[j]).sum())
            }
            Functional::CondMean { coord, conditions } => {
                let j = m.coord_index(coord)?;
                let mask = self.condition_mask(m, conditions)?;
                let (mut mass, mut sum) = (0.0, 0.0);
                for ((p, w), &inside) in m.points.iter().zip(probs).zip(&mask) {
                    if inside {
                        mass += w;
                        sum += w * p[j];
                    }
                }
                if !(mass > 0.0) {
                    return Err(Error::Evaluability(format!("conditioning event of {self} has no mass")));
                }
                Ok(sum / mass)
            }
            Functional::CounterfactualMean(arm) => {
                let layout = m.causal_layout()?;
                let n = layout.nuisances(&m.points, probs);
                layout.counterfactual_mean(&n, usize::from(*arm))
            }
            Functional::Ate => {
                let layout = m.causal_layout()?;
                let n = layout.nuisances(&m.points, probs);
                Ok(layout.counterfactual_mean(&n, 1)? - layout.counterfactual_mean(&n, 0)?)
            }
        }
    }

    /// Closed-form efficient influence function at `z` under `m`.
    ///
    /// * mean: `z_c - E[c]`
    /// * conditional mean: `1[z in C] / P(C) * (z_c - E[c | C])`
    /// * counterfactual mean: `1[a = arm] / P(a = arm | x) * (y - mu_arm(x)) + mu_arm(x) - psi`
    /// * ATE: difference of the two counterfactual-mean forms.
    pub fn closed_form_eif(&self, m: &DiscreteMeasure, z: &[f64]) -> Result<f64> {
        if z.len() != m.coords.len() {
            return Err(Error::Support("point dimension differs from the measure".into()));
        }
        let psi = self.evaluate(m)?;
        match self {
            Functional::Mean(c) => Ok(z[m.coord_index(c)?] - psi),
            Functional::CondMean { coord, conditions } => {
                let j = m.coord_index(coord)?;
                let mask = self.condition_mask(m, conditions)?;
                let mass: f64 = m.probs.iter().zip(&mask).filter(|(_, &k)| k).map(|(p, _)| p).sum();
                let inside = conditions
                    .iter()
                    .map(|(k, v)| Ok(z[m.coord_index(k)?] == *v))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .all(|b| b);
                Ok(if inside { (z[j] - psi) / mass } else { 0.0 })
            }
            Functional::CounterfactualMean(arm) => {
                let arm = usize::from(*arm);
                let layout = m.causal_layout()?;
                let n = layout.nuisances(&m.points, &m.probs);
                counterfactual_eif(&layout, &n, z, arm).map(|v| v - psi)
            }
            Functional::Ate => {
                let layout = m.causal_layout()?;
                let n = layout.nuisances(&m.points, &m.probs);
                Ok(counterfactual_eif(&layout, &n, z, 1)? - counterfactual_eif(&layout, &n, z, 0)? - psi)
            }
        }
    }
}

/// Uncentered counterfactual-mean EIF term at `z`.
fn counterfactual_eif(layout: &Layout, n: &Nuisances, z: &[f64], arm: usize) -> Result<f64> {
    let s = layout
        .stratum_of(z)
        .filter(|&s| n.px[s] > 0.0)
        .ok_or_else(|| Error::Evaluability(format!("covariate value of {z:?} has no mass")))?;
    let p_arm = if arm == 1 { n.pi[s] } else { 1.0 - n.pi[s] };
    if !(p_arm > 0.0) {
        return Err(Error::Positivity(format!("P(A = {arm} | x) = 0 at {:?}", layout.keys[s])));
    }
    let mu = n.mu[arm][s];
    let hit = usize::from(z[layout.a] == 1.0) == arm;
    let ipw = if hit { (z[layout.y] - mu) / p_arm } else { 0.0 };
    Ok(ipw + mu)
}

/// Step sizes for finite differences, largest first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsSchedule(Vec<f64>);

impl Default for EpsSchedule {
    fn default() -> Self {
        Self(vec![1e-3, 5e-4, 2.5e-4])
    }
}

impl EpsSchedule {
    pub fn new(steps: Vec<f64>) -> Result<Self> {
        if steps.len() < 2 {
            return Err(Error::Step("schedule needs at least two step sizes".into()));
        }
        if steps.iter().any(|h| !(*h > 0.0 && *h < 1.0)) || steps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Step("step sizes must be strictly decreasing in (0, 1)".into()));
        }
        Ok(Self(steps))
    }

    pub fn steps(&self) -> &[f64] {
        &self.0
    }
}

/// Finite-difference derivative with an error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Derivative {
    pub value: f64,
    /// Disagreement between the last two extrapolation levels.
    pub error: f64,
    pub central: bool,
}

/// Neville extrapolation to zero in `t = h^order` over difference quotients
/// `d[i]` at steps `h[i]`.
fn richardson(h: &[f64], d: &[f64], order: i32) -> (f64, f64) {
    let mut table: Vec<f64> = d.to_vec();
    let mut prev_best = table[table.len() - 1];
    let mut best = prev_best;
    for level in 1..h.len() {
        let mut next = Vec::with_capacity(table.len() - 1);
        for i in 0..table.len() - 1 {
            let ratio = (h[i] / h[i + level]).powi(order);
            next.push((ratio * table[i + 1] - table[i]) / (ratio - 1.0));
        }
        prev_best = best;
        best = next[next.len() - 1];
        table = next;
    }
    (best, (best - prev_best).abs())
}

/// Derivative at 0 of `eps -> g(eps)`. Central differences when every
/// `-h` is admissible, forward differences otherwise.
fn differentiate(
    schedule: &EpsSchedule,
    central: bool,
    mut g: impl FnMut(f64) -> Result<f64>,
) -> Result<Derivative> {
    let h = schedule.steps();
    let base = if central { None } else { Some(g(0.0)?) };
    let mut d = Vec::with_capacity(h.len());
    for &step in h {
        let up = g(step)?;
        d.push(match base {
            None => (up - g(-step)?) / (2.0 * step),
            Some(b) => (up - b) / step,
        });
    }
    let (value, error) = richardson(h, &d, if central { 2 } else { 1 });
    Ok(Derivative { value, error, central })
}

/// Influence function value at `z` as the Gateaux derivative of `f` toward
/// the point mass at `z`.
pub fn gateaux_if(f: &Functional, m: &DiscreteMeasure, z: &[f64], schedule: &EpsSchedule) -> Result<Derivative> {
    let (ext, zi) = m.with_point(z)?;
    let h_max = schedule.steps()[0];
    // (1 + h) p_z - h >= 0 allows the negative step.
    let central = ext.probs[zi] * (1.0 + h_max) - h_max >= 0.0;
    let path = |eps: f64| -> Vec<f64> {
        let mut p: Vec<f64> = ext.probs.iter().map(|p| (1.0 - eps) * p).collect();
        p[zi] += eps;
        p
    };
    f.evaluate_probs(&ext, &ext.probs)?;
    differentiate(schedule, central, |eps| f.evaluate_probs(&ext, &path(eps)))
}

/// Numerical influence function at every support point.
pub fn numerical_eif(f: &Functional, m: &DiscreteMeasure, schedule: &EpsSchedule) -> Result<Vec<Derivative>> {
    m.points.iter().map(|z| gateaux_if(f, m, z, schedule)).collect()
}

/// Direction of a regular parametric submodel `(1 + eps s) p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Score(Vec<f64>);

impl Score {
    /// Checks `sum p_j s_j = 0`.
    pub fn new(m: &DiscreteMeasure, s: Vec<f64>) -> Result<Self> {
        if s.len() != m.len() {
            return Err(Error::Validation("score length differs from support size".into()));
        }
        let mean = m.expectation(&s);
        if mean.abs() > MASS_TOL {
            return Err(Error::Validation(format!("score has mean {mean}, expected 0")));
        }
        Ok(Self(s))
    }

    /// Centers arbitrary values under `m`.
    pub fn centered(m: &DiscreteMeasure, v: &[f64]) -> Result<Self> {
        let mean = m.expectation(v);
        Self::new(m, v.iter().map(|x| x - mean).collect())
    }

    /// Random direction with standard-normal entries, centered.
    pub fn random<R: Rng + ?Sized>(m: &DiscreteMeasure, rng: &mut R) -> Result<Self> {
        let v: Vec<f64> = (0..m.len()).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        Self::centered(m, &v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// `s_j = ptilde_j / p_j - 1` on the support of `p`.
pub fn score_of_path(p: &DiscreteMeasure, ptilde: &DiscreteMeasure) -> Result<Score> {
    if p.coords != ptilde.coords {
        return Err(Error::Support("measures have different coordinates".into()));
    }
    let mut s = vec![0.0; p.len()];
    for (q, &w) in ptilde.points.iter().zip(&ptilde.probs) {
        if w == 0.0 {
            continue;
        }
        match p.position(q) {
            Some(i) if p.probs[i] > 0.0 => s[i] = w / p.probs[i],
            _ => return Err(Error::Support(format!("{q:?} has mass under the path but not under P"))),
        }
    }
    for (si, &pi) in s.iter_mut().zip(&p.probs) {
        *si = if pi > 0.0 { *si - 1.0 } else { 0.0 };
    }
    Score::new(p, s)
}

/// `d/d eps f((1 + eps s) p)` at 0.
pub fn pathwise_derivative(f: &Functional, m: &DiscreteMeasure, s: &Score, schedule: &EpsSchedule) -> Result<Derivative> {
    if s.0.len() != m.len() {
        return Err(Error::Validation("score length differs from support size".into()));
    }
    let h = schedule.steps()[0];
    if s.0.iter().any(|sj| 1.0 - h * sj.abs() < 0.0) {
        return Err(Error::Step(format!("step {h} gives negative mass along the score")));
    }
    let path = |eps: f64| -> Vec<f64> { m.probs.iter().zip(&s.0).map(|(p, sj)| (1.0 + eps * sj) * p).collect() };
    differentiate(schedule, true, |eps| f.evaluate_probs(m, &path(eps)))
}

/// Both sides of `d/d eps psi = E[phi s]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CentralIdentity {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// Pathwise derivative against the expectation of the numerical influence
/// function times the score. `phi` may be passed to avoid recomputation.
pub fn central_identity_check(
    f: &Functional,
    m: &DiscreteMeasure,
    s: &Score,
    phi: Option<&[f64]>,
    schedule: &EpsSchedule,
) -> Result<CentralIdentity> {
    let lhs = pathwise_derivative(f, m, s, schedule)?.value;
    let owned;
    let phi = match phi {
        Some(p) => p,
        None => {
            owned = numerical_eif(f, m, schedule)?.iter().map(|d| d.value).collect::<Vec<_>>();
            &owned
        }
    };
    let rhs: f64 = m.probs.iter().zip(phi).zip(&s.0).map(|((p, f), s)| p * f * s).sum();
    Ok(CentralIdentity {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}

/// `E[v | coords]` evaluated at each support point; zero on null groups.
pub fn conditional_expectation(m: &DiscreteMeasure, values: &[f64], coords: &[&str]) -> Result<Vec<f64>> {
    let idx: Vec<usize> = coords.iter().map(|c| m.coord_index(c)).collect::<Result<_>>()?;
    let key = |p: &[f64]| -> Vec<f64> { idx.iter().map(|&j| p[j]).collect() };
    let keys: Vec<Vec<f64>> = m.points.iter().map(|p| key(p)).collect();
    Ok(keys
        .iter()
        .map(|k| {
            let (mut mass, mut sum) = (0.0, 0.0);
            for ((other, p), v) in keys.iter().zip(&m.probs).zip(values) {
                if other == k {
                    mass += p;
                    sum += p * v;
                }
            }
            if mass > 0.0 {
                sum / mass
            } else {
                0.0
            }
        })
        .collect())
}

/// Splits a score into `E[s | coords]` and the conditional part
/// `s - E[s | coords]`; both are scores and they sum to `s`.
pub fn factorize_score(m: &DiscreteMeasure, s: &Score, coords: &[&str]) -> Result<(Score, Score)> {
    let marginal = conditional_expectation(m, &s.0, coords)?;
    let conditional: Vec<f64> = s.0.iter().zip(&marginal).map(|(a, b)| a - b).collect();
    Ok((Score::centered(m, &marginal)?, Score::centered(m, &conditional)?))
}

/// Causal factorization `s = s_X + s_{A|X} + s_{Y|A,X}`.
pub fn causal_score_parts(m: &DiscreteMeasure, s: &Score) -> Result<[Score; 3]> {
    let layout = m.causal_layout()?;
    let x_names: Vec<&str> = layout.x_cols.iter().map(|&j| m.coords[j].as_str()).collect();
    let mut ax_names = x_names.clone();
    ax_names.push("a");
    let e_x = conditional_expectation(m, &s.0, &x_names)?;
    let e_ax = conditional_expectation(m, &s.0, &ax_names)?;
    let a_part: Vec<f64> = e_ax.iter().zip(&e_x).map(|(u, v)| u - v).collect();
    let y_part: Vec<f64> = s.0.iter().zip(&e_ax).map(|(u, v)| u - v).collect();
    Ok([
        Score::centered(m, &e_x)?,
        Score::centered(m, &a_part)?,
        Score::centered(m, &y_part)?,
    ])
}

/// Source of influence values used by the one-step estimator.
#[derive(Debug, Clone, PartialEq)]
pub enum EifSource {
    ClosedForm,
    Numerical(EpsSchedule),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OneStep {
    pub plug_in: f64,
    pub correction: f64,
    pub estimate: f64,
}

/// Plug-in value at `p_est` plus the sample mean of its influence function.
pub fn one_step(f: &Functional, p_est: &DiscreteMeasure, sample: &[Vec<f64>], source: &EifSource) -> Result<OneStep> {
    if sample.is_empty() {
        return Err(Error::InsufficientData("one-step needs a nonempty sample".into()));
    }
    let plug_in = f.evaluate(p_est)?;
    // Influence values depend only on the point, so evaluate each distinct
    // point once.
    let mut cache: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut total = 0.0;
    for z in sample {
        let phi = match cache.iter().find(|(p, _)| p == z) {
            Some((_, v)) => *v,
            None => {
                let v = match source {
                    EifSource::ClosedForm => f.closed_form_eif(p_est, z)?,
                    EifSource::Numerical(s) => gateaux_if(f, p_est, z, s)?.value,
                };
                cache.push((z.clone(), v));
                v
            }
        };
        total += phi;
    }
    let correction = total / sample.len() as f64;
    Ok(OneStep {
        plug_in,
        correction,
        estimate: plug_in + correction,
    })
}

/// Remainder of one treatment arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArmRemainder {
    /// `E[(pi_a - pihat_a)(mu_a - muhat_a) / pihat_a]` under the true measure.
    pub r2: f64,
    /// `||(pi_a - pihat_a) / pihat_a|| * ||mu_a - muhat_a||` in `L2(P_true)`,
    /// the Cauchy-Schwarz bound on `|r2|`.
    pub bound: f64,
    /// `||pi_a - pihat_a|| * ||mu_a - muhat_a||` without the `1 / pihat_a`
    /// weight. It does not bound `|r2|` in general; reported for comparison.
    pub unweighted_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Remainder {
    pub treated: ArmRemainder,
    pub control: ArmRemainder,
    /// ATE remainder `r2_treated - r2_control`, which equals
    /// `psi(P_est) + E_true[phi_est] - psi(P_true)`.
    pub ate: f64,
}

/// Second-order remainder of the ATE between a true and an estimated
/// measure with the same covariate strata.
pub fn second_order_remainder(p_true: &DiscreteMeasure, p_est: &DiscreteMeasure) -> Result<Remainder> {
    if p_true.coords != p_est.coords {
        return Err(Error::Support("measures have different coordinates".into()));
    }
    let lt = p_true.causal_layout()?;
    let le = p_est.causal_layout()?;
    let nt = lt.nuisances(&p_true.points, &p_true.probs);
    let ne = le.nuisances(&p_est.points, &p_est.probs);
    let mut arms = [[0.0f64; 4]; 2]; // r2, weighted pi norm², pi norm², mu norm²
    for s in 0..lt.keys.len() {
        let px = nt.px[s];
        if px == 0.0 {
            continue;
        }
        let e = le
            .keys
            .iter()
            .position(|k| *k == lt.keys[s])
            .filter(|&e| ne.px[e] > 0.0)
            .ok_or_else(|| Error::Positivity(format!("estimated measure has no mass at {:?}", lt.keys[s])))?;
        for arm in 0..2 {
            if !(nt.cell[arm][s] > 0.0 && ne.cell[arm][e] > 0.0) {
                return Err(Error::Positivity(format!("arm {arm} has no mass at {:?}", lt.keys[s])));
            }
            let (pa, pa_hat) = if arm == 1 {
                (nt.pi[s], ne.pi[e])
            } else {
                (1.0 - nt.pi[s], 1.0 - ne.pi[e])
            };
            let dpi = pa - pa_hat;
            let dmu = nt.mu[arm][s] - ne.mu[arm][e];
            let acc = &mut arms[arm];
            acc[0] += px * dpi * dmu / pa_hat;
            acc[1] += px * (dpi / pa_hat).powi(2);
            acc[2] += px * dpi * dpi;
            acc[3] += px * dmu * dmu;
        }
    }
    let finish = |acc: [f64; 4]| ArmRemainder {
        r2: acc[0],
        bound: (acc[1] * acc[3]).sqrt(),
        unweighted_bound: (acc[2] * acc[3]).sqrt(),
    };
    let treated = finish(arms[1]);
    let control = finish(arms[0]);
    for (name, arm) in [("treated", treated), ("control", control)] {
        if arm.r2.abs() > arm.bound * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::Invariant(format!(
                "{name} remainder {} exceeds its Cauchy-Schwarz bound {}",
                arm.r2, arm.bound
            )));
        }
    }
    Ok(Remainder {
        treated,
        control,
        ate: treated.r2 - control.r2,
    })
}

/// Measure over `x in {0..x_levels}`, `a in {0, 1}` and the given outcome
/// values, with random masses bounded below by `min_mass`.
pub fn random_causal_measure<R: Rng + ?Sized>(
    rng: &mut R,
    x_levels: usize,
    y_values: &[f64],
    min_mass: f64,
) -> Result<DiscreteMeasure> {
    let mut points = Vec::new();
    for x in 0..x_levels {
        for a in 0..2 {
            for &y in y_values {
                points.push(vec![x as f64, a as f64, y]);
            }
        }
    }
    let k = points.len() as f64;
    if !(min_mass >= 0.0 && min_mass * k < 1.0) {
        return Err(Error::Config(format!("minimum mass {min_mass} infeasible for {k} points")));
    }
    let raw: Vec<f64> = (0..points.len()).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = raw.iter().sum();
    let mut probs: Vec<f64> = raw.iter().map(|r| min_mass + (1.0 - min_mass * k) * r / total).collect();
    renormalize(&mut probs);
    DiscreteMeasure::new(vec!["x".into(), "a".into(), "y".into()], points, probs)
}

/// Numerical against closed-form influence function at one support point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EifPoint {
    pub point: Vec<f64>,
    pub prob: f64,
    pub numerical: f64,
    pub fd_error: f64,
    pub closed_form: f64,
    pub abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EifReport {
    pub functional: String,
    pub coords: Vec<String>,
    pub points: Vec<EifPoint>,
    pub max_abs_diff: f64,
    /// `|sum p_j phi_j|` of the numerical influence function.
    pub mean_zero_gap: f64,
    pub scores_checked: usize,
    pub max_central_identity_gap: f64,
    pub remainder: Option<Remainder>,
}

/// Full check of one functional: pointwise EIF agreement, mean zero, the
/// central identity along `n_scores` random scores, and optionally the
/// remainder against an estimated measure.
pub fn eif_report<R: Rng + ?Sized>(
    f: &Functional,
    m: &DiscreteMeasure,
    schedule: &EpsSchedule,
    n_scores: usize,
    rng: &mut R,
    p_est: Option<&DiscreteMeasure>,
) -> Result<EifReport> {
    let numerical = numerical_eif(f, m, schedule)?;
    let mut points = Vec::with_capacity(m.len());
    for ((z, &p), d) in m.points.iter().zip(&m.probs).zip(&numerical) {
        let closed = if p > 0.0 { f.closed_form_eif(m, z)? } else { d.value };
        points.push(EifPoint {
            point: z.clone(),
            prob: p,
            numerical: d.value,
            fd_error: d.error,
            closed_form: closed,
            abs_diff: (d.value - closed).abs(),
        });
    }
    let phi: Vec<f64> = numerical.iter().map(|d| d.value).collect();
    let mut max_gap: f64 = 0.0;
    for _ in 0..n_scores {
        let s = bounded_random_score(m, rng, schedule)?;
        max_gap = max_gap.max(central_identity_check(f, m, &s, Some(&phi), schedule)?.gap);
    }
    let remainder = p_est.map(|e| second_order_remainder(m, e)).transpose()?;
    Ok(EifReport {
        functional: f.to_string(),
        coords: m.coords.clone(),
        max_abs_diff: points.iter().map(|p| p.abs_diff).fold(0.0, f64::max),
        mean_zero_gap: m.expectation(&phi).abs(),
        points,
        scores_checked: n_scores,
        max_central_identity_gap: max_gap,
        remainder,
    })
}

/// Random score scaled so that the largest schedule step keeps masses
/// positive.
pub fn bounded_random_score<R: Rng + ?Sized>(m: &DiscreteMeasure, rng: &mut R, schedule: &EpsSchedule) -> Result<Score> {
    let s = Score::random(m, rng)?;
    let max = s.0.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let limit = 0.5 / schedule.steps()[0];
    if max > limit {
        let c = limit / max;
        return Score::new(m, s.0.iter().map(|v| v * c).collect());
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn uniform_y() -> DiscreteMeasure {
        DiscreteMeasure::new(names(&["y"]), vec![vec![0.0], vec![1.0], vec![2.0]], vec![1.0 / 3.0; 3]).unwrap()
    }

    #[test]
    fn mix_examples() {
        let p = DiscreteMeasure::new(names(&["y"]), vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).unwrap();
        let g = DiscreteMeasure::dirac(names(&["y"]), vec![1.0]).unwrap();
        assert_eq!(p.mix(&g, 0.0).unwrap().probs(), p.probs());
        assert_eq!(p.mix(&g, 1.0).unwrap().probs(), &[0.0, 1.0]);
        assert_eq!(p.mix(&g, 0.5).unwrap().probs(), &[0.25, 0.75]);
    }

    #[test]
    fn score_of_path_examples() {
        let p = DiscreteMeasure::new(names(&["y"]), vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).unwrap();
        assert_eq!(score_of_path(&p, &p).unwrap().values(), &[0.0, 0.0]);
        let q = p.reweighted(vec![0.25, 0.75]).unwrap();
        let s = score_of_path(&p, &q).unwrap();
        assert_eq!(s.values(), &[-0.5, 0.5]);
        let outside = DiscreteMeasure::dirac(names(&["y"]), vec![3.0]).unwrap();
        assert!(matches!(score_of_path(&p, &outside), Err(Error::Support(_))));
    }

    #[test]
    fn mean_gateaux_is_exact() {
        let d = gateaux_if(&Functional::Mean("y".into()), &uniform_y(), &[2.0], &EpsSchedule::default()).unwrap();
        assert!((d.value - 1.0).abs() < 1e-10);
        assert!(d.central);
    }

    #[test]
    fn gateaux_off_support_uses_forward_differences() {
        let d = gateaux_if(&Functional::Mean("y".into()), &uniform_y(), &[5.0], &EpsSchedule::default()).unwrap();
        assert!(!d.central);
        assert!((d.value - 4.0).abs() < 1e-9);
    }

    #[test]
    fn conditional_mean_needs_mass() {
        let f: Functional = "cond_mean(y|y=7)".parse().unwrap();
        assert!(matches!(f.evaluate(&uniform_y()), Err(Error::Evaluability(_))));
    }

    #[test]
    fn functional_labels_round_trip() {
        for s in ["mean(y)", "cond_mean(y|a=0,x=1)", "counterfactual_mean(1)", "ate"] {
            let f: Functional = s.parse().unwrap();
            assert_eq!(f.to_string(), s);
        }
        assert!("median(y)".parse::<Functional>().is_err());
    }

    #[test]
    fn stationary_path_has_zero_derivative() {
        let m = uniform_y();
        let s = Score::new(&m, vec![0.0; 3]).unwrap();
        let d = pathwise_derivative(&Functional::Mean("y".into()), &m, &s, &EpsSchedule::default()).unwrap();
        assert_eq!(d.value, 0.0);
    }

    #[test]
    fn one_step_mean_collapses_to_sample_mean() {
        let m = uniform_y();
        let p_est = m.reweighted(vec![0.7, 0.2, 0.1]).unwrap();
        let sample = vec![vec![0.0], vec![2.0], vec![2.0], vec![1.0]];
        let r = one_step(&Functional::Mean("y".into()), &p_est, &sample, &EifSource::ClosedForm).unwrap();
        assert!((r.estimate - 1.25).abs() < 1e-12);
    }

    #[test]
    fn remainder_zero_when_one_nuisance_exact() {
        // 4-cell measure: x in {0,1}, a in {0,1}, y determined by (x, a).
        let coords = names(&["x", "a", "y"]);
        let pts = |ys: [f64; 4]| -> Vec<Vec<f64>> {
            vec![
                vec![0.0, 0.0, ys[0]],
                vec![0.0, 1.0, ys[1]],
                vec![1.0, 0.0, ys[2]],
                vec![1.0, 1.0, ys[3]],
            ]
        };
        let truth = DiscreteMeasure::new(coords.clone(), pts([0.0, 2.0, 1.0, 4.0]), vec![0.3, 0.2, 0.15, 0.35]).unwrap();
        // same propensities, different outcome means
        let mu_wrong = DiscreteMeasure::new(coords.clone(), pts([0.5, 1.0, 1.5, 3.0]), vec![0.3, 0.2, 0.15, 0.35]).unwrap();
        // same outcome means, different propensities
        let pi_wrong = DiscreteMeasure::new(coords.clone(), pts([0.0, 2.0, 1.0, 4.0]), vec![0.25, 0.25, 0.3, 0.2]).unwrap();
        let r = second_order_remainder(&truth, &mu_wrong).unwrap();
        assert_eq!((r.treated.r2, r.control.r2), (0.0, 0.0));
        let r = second_order_remainder(&truth, &pi_wrong).unwrap();
        assert_eq!((r.treated.r2, r.control.r2), (0.0, 0.0));
        let both = DiscreteMeasure::new(coords, pts([0.5, 1.0, 1.5, 3.0]), vec![0.25, 0.25, 0.3, 0.2]).unwrap();
        let r = second_order_remainder(&truth, &both).unwrap();
        assert!(r.ate != 0.0);
        assert!(r.treated.r2.abs() <= r.treated.bound && r.control.r2.abs() <= r.control.bound);
    }

    #[test]
    fn remainder_matches_expansion_route() {
        let mut rng = stream_rng(3, Stream::Scores);
        let truth = random_causal_measure(&mut rng, 3, &[0.0, 1.0, 3.0], 0.01).unwrap();
        let est = random_causal_measure(&mut rng, 3, &[0.0, 1.0, 3.0], 0.01).unwrap();
        let r = second_order_remainder(&truth, &est).unwrap();
        let f = Functional::Ate;
        let phi: Vec<f64> = truth.points().iter().map(|z| f.closed_form_eif(&est, z).unwrap()).collect();
        let via = f.evaluate(&est).unwrap() + truth.expectation(&phi) - f.evaluate(&truth).unwrap();
        assert!((r.ate - via).abs() < 1e-12);
    }

    #[test]
    fn csv_measure_reader() {
        let text = "x,a,y,prob\n0,0,1,0.25\n0,1,2,0.25\n1,0,0,0.25\n1,1,3,0.25\n";
        let m = DiscreteMeasure::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(m.coords(), &names(&["x", "a", "y"]));
        assert!((Functional::Ate.evaluate(&m).unwrap() - 2.0).abs() < 1e-12);
        let bad = "x,y,prob\n0,1,0.5\n0,1,0.5\n";
        assert!(matches!(DiscreteMeasure::from_csv_reader(bad.as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn richardson_removes_quadratic_error() {
        let h: [f64; 3] = [1e-3, 5e-4, 2.5e-4];
        let d: Vec<f64> = h.iter().map(|x| 2.0 + 3.0 * x * x + 5.0 * x.powi(4)).collect();
        let (v, _) = richardson(&h, &d, 2);
        assert!((v - 2.0).abs() < 1e-14);
    }
}
