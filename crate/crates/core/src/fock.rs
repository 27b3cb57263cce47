//! Truncated multimode bosonic Fock-space algebra.
//!
//! States are sparse maps from occupation tuples to complex amplitudes over a
//! declared [`ModeSpec`]. All values are immutable after construction; every
//! operation returns a new state, so probabilities can be evaluated
//! concurrently without locking.
//!
//! Truncation is explicit: coherent-mode cutoffs are chosen from a Poisson
//! tail bound, the discarded mass is recorded on the state, and unitaries
//! report any probability they push past a cutoff instead of silently
//! renormalizing.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::float::Float;

/// Magnitude below which amplitudes are dropped from the sparse map.
pub const DEFAULT_PRUNE_THRESHOLD: f64 = 1e-15;

/// Norm drop above which a unitary application logs a leakage warning.
pub const DEFAULT_LEAKAGE_WARN_BOUND: f64 = 1e-9;

/// One named mode with a photon-number cutoff.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mode {
    pub name: String,
    /// Maximum photon number representable in this mode.
    pub cutoff: u32,
}

/// Ordered list of named modes with cutoffs: the indexing contract for all
/// states and operators built on top of it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeSpec {
    modes: Vec<Mode>,
}

impl ModeSpec {
    /// Builds a spec from `(name, cutoff)` pairs. Mode names must be unique.
    pub fn new<S: Into<String>>(modes: impl IntoIterator<Item = (S, u32)>) -> Result<Self> {
        let modes: Vec<Mode> = modes
            .into_iter()
            .map(|(name, cutoff)| Mode { name: name.into(), cutoff })
            .collect();
        for (i, m) in modes.iter().enumerate() {
            if modes[..i].iter().any(|other| other.name == m.name) {
                return Err(Error::DuplicateMode(m.name.clone()));
            }
        }
        Ok(Self { modes })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.modes
            .iter()
            .position(|m| m.name == name)
            .ok_or_else(|| Error::UnknownMode(name.to_string()))
    }

    pub fn cutoff(&self, index: usize) -> u32 {
        self.modes[index].cutoff
    }

    pub fn name(&self, index: usize) -> &str {
        &self.modes[index].name
    }

    /// Concatenates two specs; mode names must stay disjoint.
    pub fn concat(&self, other: &ModeSpec) -> Result<ModeSpec> {
        let mut modes = self.modes.clone();
        for m in &other.modes {
            if modes.iter().any(|x| x.name == m.name) {
                return Err(Error::DuplicateMode(m.name.clone()));
            }
            modes.push(m.clone());
        }
        Ok(ModeSpec { modes })
    }

    fn describe(&self) -> String {
        let mut s = String::new();
        for (i, m) in self.modes.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{}:{}", m.name, m.cutoff);
        }
        s
    }
}

/// Occupation numbers, one per mode in [`ModeSpec`] order.
///
/// `Ord` is the lexicographic order on the tuple, which fixes the line order
/// of the debug dump format.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OccTuple(pub Vec<u32>);

impl OccTuple {
    pub fn occ(&self, index: usize) -> u32 {
        self.0[index]
    }

    /// Total photon number across all modes.
    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    fn validate(&self, spec: &ModeSpec) -> Result<()> {
        if self.0.len() != spec.len() {
            return Err(Error::OccupationLength { got: self.0.len(), expected: spec.len() });
        }
        for (occ, mode) in self.0.iter().zip(spec.modes()) {
            if *occ > mode.cutoff {
                return Err(Error::CutoffExceeded {
                    mode: mode.name.clone(),
                    occ: *occ,
                    cutoff: mode.cutoff,
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for OccTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, occ) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{occ}")?;
        }
        Ok(())
    }
}

impl From<Vec<u32>> for OccTuple {
    fn from(v: Vec<u32>) -> Self {
        OccTuple(v)
    }
}

impl From<&[u32]> for OccTuple {
    fn from(v: &[u32]) -> Self {
        OccTuple(v.to_vec())
    }
}

/// Truncated coherent-state parameters: real amplitude, cutoff and the
/// Poisson tail mass the truncation is allowed to discard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherentParams<T> {
    pub alpha: T,
    pub cutoff: u32,
    pub tail_bound: T,
}

impl<T: Float> CoherentParams<T> {
    /// Picks the smallest cutoff whose discarded Poisson tail mass stays
    /// below `tail_bound`.
    pub fn for_tail_bound(alpha: T, tail_bound: T) -> Result<Self> {
        if tail_bound <= T::zero() || tail_bound >= T::one() {
            return Err(Error::NotPositive { what: "tail_bound in (0,1)", got: tail_bound.f64() });
        }
        let lambda = alpha * alpha;
        let mut cutoff = 0u32;
        while poisson_tail_above(lambda, cutoff) >= tail_bound {
            cutoff += 1;
            if cutoff > 100_000 {
                return Err(Error::TailBoundUnachievable {
                    tail_bound: tail_bound.f64(),
                    cutoff,
                    required: cutoff,
                });
            }
        }
        Ok(Self { alpha, cutoff, tail_bound })
    }

    /// Discarded Poisson tail mass at this cutoff.
    pub fn tail_mass(&self) -> T {
        poisson_tail_above(self.alpha * self.alpha, self.cutoff)
    }

    /// Factor applied to the raw coherent amplitudes after truncation.
    pub fn renorm_factor(&self) -> T {
        T::one() / (T::one() - self.tail_mass()).sqrt()
    }

    /// Checks the tail-bound invariant, reporting the required cutoff if it
    /// fails at the declared one.
    pub fn validate(&self) -> Result<()> {
        if self.tail_mass() < self.tail_bound {
            return Ok(());
        }
        let required = Self::for_tail_bound(self.alpha, self.tail_bound)?.cutoff;
        Err(Error::TailBoundUnachievable {
            tail_bound: self.tail_bound.f64(),
            cutoff: self.cutoff,
            required,
        })
    }
}

/// `P(X > n)` for `X ~ Poisson(lambda)`, by direct summation of the tail.
///
/// Terms past the mode decay at least geometrically, so the sum is cut off
/// once the geometric bound on the remainder is negligible.
pub fn poisson_tail_above<T: Float>(lambda: T, n: u32) -> T {
    if lambda <= T::zero() {
        return T::zero();
    }
    // pmf(n+1) as a starting point, then accumulate upward.
    let mut k = n + 1;
    let mut term = poisson_pmf(lambda, k);
    let mut sum = T::zero();
    loop {
        sum += term;
        k += 1;
        let ratio = lambda / T::from_u32(k).unwrap();
        term = term * ratio;
        if ratio < T::one() {
            // Remaining mass < term * ratio/(1-ratio); stop when negligible.
            let bound = term / (T::one() - ratio);
            if bound < sum * T::of(1e-16) + T::of(1e-300) {
                sum += bound;
                break;
            }
        }
    }
    sum
}

/// Poisson probability mass `e^{-lambda} lambda^k / k!`.
///
/// Uses the plain recurrence when `e^{-lambda}` is representable and a
/// Stirling-series log evaluation otherwise.
pub fn poisson_pmf<T: Float>(lambda: T, k: u32) -> T {
    if lambda <= T::zero() {
        return if k == 0 { T::one() } else { T::zero() };
    }
    if lambda < T::of(700.0) {
        let mut p = (-lambda).exp();
        for i in 1..=k {
            p = p * lambda / T::from_u32(i).unwrap();
        }
        p
    } else {
        let kf = T::from_u32(k).unwrap();
        let log_p = -lambda + kf * lambda.ln() - ln_factorial(kf);
        log_p.exp()
    }
}

/// `ln k!` via the Stirling series; exact table for small k.
fn ln_factorial<T: Float>(k: T) -> T {
    if k < T::of(16.0) {
        let mut acc = T::zero();
        let mut i = T::of(2.0);
        while i <= k {
            acc += i.ln();
            i += T::one();
        }
        return acc;
    }
    let half = T::of(0.5);
    let two_pi = T::of(2.0) * T::PI();
    (k + half) * k.ln() - k + half * two_pi.ln() + T::one() / (T::of(12.0) * k)
        - T::one() / (T::of(360.0) * k * k * k)
}

/// Dense complex matrix, row-major. Small: operators here act on subspaces of
/// at most a few hundred dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix<T> {
    dim: usize,
    data: Vec<Complex<T>>,
}

impl<T: Float> CMatrix<T> {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![Complex::new(T::zero(), T::zero()); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, Complex::new(T::one(), T::zero()));
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<Complex<T>>>) -> Self {
        let dim = rows.len();
        assert!(rows.iter().all(|r| r.len() == dim), "rows must form a square matrix");
        Self { dim, data: rows.into_iter().flatten().collect() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> Complex<T> {
        self.data[row * self.dim + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: Complex<T>) {
        self.data[row * self.dim + col] = value;
    }

    /// Conjugate transpose.
    pub fn dagger(&self) -> Self {
        let mut out = Self::zeros(self.dim);
        for r in 0..self.dim {
            for c in 0..self.dim {
                out.set(c, r, self.get(r, c).conj());
            }
        }
        out
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim);
        let mut out = Self::zeros(self.dim);
        for r in 0..self.dim {
            for k in 0..self.dim {
                let a = self.get(r, k);
                if a.norm_sqr() == T::zero() {
                    continue;
                }
                for c in 0..self.dim {
                    let v = out.get(r, c) + a * rhs.get(k, c);
                    out.set(r, c, v);
                }
            }
        }
        out
    }

    /// Max-norm of `U^dagger U - I`, the unitarity defect.
    pub fn unitarity_defect(&self) -> T {
        let prod = self.dagger().mul(self);
        let mut worst = T::zero();
        for r in 0..self.dim {
            for c in 0..self.dim {
                let expect = if r == c { T::one() } else { T::zero() };
                let d = prod.get(r, c) - Complex::new(expect, T::zero());
                let mag = d.norm();
                if mag > worst {
                    worst = mag;
                }
            }
        }
        worst
    }

    pub fn matvec(&self, x: &[Complex<T>]) -> Vec<Complex<T>> {
        assert_eq!(x.len(), self.dim);
        let mut out = vec![Complex::new(T::zero(), T::zero()); self.dim];
        for r in 0..self.dim {
            let mut acc = Complex::new(T::zero(), T::zero());
            for c in 0..self.dim {
                acc += self.get(r, c) * x[c];
            }
            out[r] = acc;
        }
        out
    }

    /// Dump format for golden tests: one matrix row per line, each entry as
    /// real and imaginary part, tab-separated.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for r in 0..self.dim {
            for c in 0..self.dim {
                if c > 0 {
                    out.push('\t');
                }
                let v = self.get(r, c);
                let _ = write!(out, "{}\t{}", v.re, v.im);
            }
            out.push('\n');
        }
        out
    }
}

/// Options for [`StateVector::apply_local_operator_with`].
#[derive(Debug, Clone, Copy)]
pub struct ApplyOptions<T> {
    /// When set, a norm drop beyond `leakage_warn_bound` logs a warning and
    /// the drop is recorded as truncation loss.
    pub expect_unitary: bool,
    pub leakage_warn_bound: T,
}

impl<T: Float> Default for ApplyOptions<T> {
    fn default() -> Self {
        Self { expect_unitary: false, leakage_warn_bound: T::of(DEFAULT_LEAKAGE_WARN_BOUND) }
    }
}

/// Sparse pure state over a [`ModeSpec`].
#[derive(Debug, Clone)]
pub struct StateVector<T> {
    spec: ModeSpec,
    amps: BTreeMap<OccTuple, Complex<T>>,
    /// Probability mass discarded by truncation so far (coherent tails plus
    /// any unitary cutoff leakage).
    trunc_loss: T,
    prune: T,
}

impl<T: Float> StateVector<T> {
    /// Single Fock basis state `|occ>` with amplitude 1.
    pub fn fock(spec: &ModeSpec, occ: impl Into<OccTuple>) -> Result<Self> {
        let occ = occ.into();
        occ.validate(spec)?;
        let mut amps = BTreeMap::new();
        amps.insert(occ, Complex::new(T::one(), T::zero()));
        Ok(Self { spec: spec.clone(), amps, trunc_loss: T::zero(), prune: T::of(DEFAULT_PRUNE_THRESHOLD) })
    }

    /// Vacuum on the given spec.
    pub fn vacuum(spec: &ModeSpec) -> Self {
        Self::fock(spec, vec![0; spec.len()]).expect("vacuum is always valid")
    }

    /// Truncated coherent state `|alpha>` on a single mode, renormalized.
    ///
    /// Raw amplitudes are `e^{-alpha^2/2} alpha^n / sqrt(n!)` up to the
    /// cutoff; the renormalization factor is available from
    /// [`CoherentParams::renorm_factor`], and the discarded tail mass is
    /// recorded as truncation loss on the state.
    pub fn coherent(mode: &str, params: &CoherentParams<T>) -> Result<Self> {
        params.validate()?;
        let spec = ModeSpec::new([(mode, params.cutoff)])?;
        let mut amps = BTreeMap::new();
        let mut c = (-params.alpha * params.alpha / T::of(2.0)).exp();
        let mut norm_sqr = T::zero();
        for n in 0..=params.cutoff {
            if n > 0 {
                c = c * params.alpha / T::from_u32(n).unwrap().sqrt();
            }
            norm_sqr += c * c;
            amps.insert(OccTuple(vec![n]), Complex::new(c, T::zero()));
        }
        let scale = T::one() / norm_sqr.sqrt();
        for amp in amps.values_mut() {
            *amp = amp.scale(scale);
        }
        let mut state = Self {
            spec,
            amps,
            trunc_loss: params.tail_mass(),
            prune: T::of(DEFAULT_PRUNE_THRESHOLD),
        };
        state.prune_small();
        Ok(state)
    }

    /// Builds a state from explicit amplitude entries (not normalized).
    pub fn from_amplitudes(
        spec: &ModeSpec,
        entries: impl IntoIterator<Item = (OccTuple, Complex<T>)>,
    ) -> Result<Self> {
        let mut amps = BTreeMap::new();
        for (occ, amp) in entries {
            occ.validate(spec)?;
            let slot = amps.entry(occ).or_insert_with(|| Complex::new(T::zero(), T::zero()));
            *slot += amp;
        }
        let mut state = Self {
            spec: spec.clone(),
            amps,
            trunc_loss: T::zero(),
            prune: T::of(DEFAULT_PRUNE_THRESHOLD),
        };
        state.prune_small();
        Ok(state)
    }

    pub fn spec(&self) -> &ModeSpec {
        &self.spec
    }

    /// Probability mass lost to truncation so far.
    pub fn truncation_loss(&self) -> T {
        self.trunc_loss
    }

    /// Returns a copy with a different amplitude prune threshold.
    pub fn with_prune_threshold(mut self, threshold: T) -> Self {
        self.prune = threshold;
        self.prune_small();
        self
    }

    /// Amplitude of a basis state, zero when absent.
    pub fn amplitude(&self, occ: &OccTuple) -> Complex<T> {
        self.amps.get(occ).copied().unwrap_or_else(|| Complex::new(T::zero(), T::zero()))
    }

    /// Iterates over stored `(occupation, amplitude)` entries in
    /// lexicographic occupation order.
    pub fn entries(&self) -> impl Iterator<Item = (&OccTuple, &Complex<T>)> {
        self.amps.iter()
    }

    pub fn num_entries(&self) -> usize {
        self.amps.len()
    }

    pub fn norm_sqr(&self) -> T {
        self.amps.values().map(|a| a.norm_sqr()).fold(T::zero(), |s, x| s + x)
    }

    pub fn norm(&self) -> T {
        self.norm_sqr().sqrt()
    }

    /// Rescales to unit norm. Policy: called after truncation, never after
    /// unitaries, so cutoff leakage stays visible as a norm deficit.
    pub fn normalize(&self) -> Self {
        let n = self.norm();
        if n == T::zero() {
            return self.clone();
        }
        self.scale(Complex::new(T::one() / n, T::zero()))
    }

    /// Scalar multiple of the state.
    pub fn scale(&self, factor: Complex<T>) -> Self {
        let mut out = self.clone();
        for amp in out.amps.values_mut() {
            *amp *= factor;
        }
        out.prune_small();
        out
    }

    /// Linear combination `self + other` on a shared spec.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_spec(other)?;
        let mut out = self.clone();
        out.trunc_loss = self.trunc_loss + other.trunc_loss;
        for (occ, amp) in &other.amps {
            let slot = out
                .amps
                .entry(occ.clone())
                .or_insert_with(|| Complex::new(T::zero(), T::zero()));
            *slot += *amp;
        }
        out.prune_small();
        Ok(out)
    }

    /// Tensor product with disjoint mode names; amplitudes multiply and the
    /// resulting spec is the concatenation.
    pub fn tensor(&self, other: &Self) -> Result<Self> {
        let spec = self.spec.concat(&other.spec)?;
        let mut amps = BTreeMap::new();
        for (occ_a, amp_a) in &self.amps {
            for (occ_b, amp_b) in &other.amps {
                let mut occ = occ_a.0.clone();
                occ.extend_from_slice(&occ_b.0);
                amps.insert(OccTuple(occ), *amp_a * *amp_b);
            }
        }
        let mut out = Self {
            spec,
            amps,
            // First-order combination of independent losses.
            trunc_loss: self.trunc_loss + other.trunc_loss,
            prune: if self.prune > other.prune { self.prune } else { other.prune },
        };
        out.prune_small();
        Ok(out)
    }

    /// `<self|other>`, conjugate-linear in `self`.
    pub fn inner_product(&self, other: &Self) -> Result<Complex<T>> {
        self.check_same_spec(other)?;
        // Iterate over the smaller operand.
        let (small, big, conj_small) = if self.amps.len() <= other.amps.len() {
            (&self.amps, &other.amps, true)
        } else {
            (&other.amps, &self.amps, false)
        };
        let mut acc = Complex::new(T::zero(), T::zero());
        for (occ, amp) in small {
            if let Some(other_amp) = big.get(occ) {
                if conj_small {
                    acc += amp.conj() * *other_amp;
                } else {
                    acc += other_amp.conj() * *amp;
                }
            }
        }
        Ok(acc)
    }

    /// Applies a dense operator on `target_modes`, identity elsewhere.
    ///
    /// The matrix acts on the product subspace of the targets in the order
    /// given, first target most significant: basis index
    /// `occ(t_0) * d_1 * ... + occ(t_1) * d_2 * ... + ...` with
    /// `d_i = cutoff_i + 1`.
    pub fn apply_local_operator(&self, target_modes: &[&str], matrix: &CMatrix<T>) -> Result<Self> {
        self.apply_local_operator_with(target_modes, matrix, ApplyOptions::default())
    }

    /// [`Self::apply_local_operator`] with an explicit leakage policy.
    pub fn apply_local_operator_with(
        &self,
        target_modes: &[&str],
        matrix: &CMatrix<T>,
        opts: ApplyOptions<T>,
    ) -> Result<Self> {
        let mut targets = Vec::with_capacity(target_modes.len());
        for name in target_modes {
            let idx = self.spec.index_of(name)?;
            if targets.contains(&idx) {
                return Err(Error::DuplicateMode((*name).to_string()));
            }
            targets.push(idx);
        }
        let dims: Vec<usize> =
            targets.iter().map(|&i| self.spec.cutoff(i) as usize + 1).collect();
        let dim: usize = dims.iter().product();
        if matrix.dim() != dim {
            return Err(Error::DimensionMismatch { got: matrix.dim(), expected: dim });
        }

        // Group amplitudes by their occupation on the non-target modes.
        let mut groups: BTreeMap<OccTuple, Vec<Complex<T>>> = BTreeMap::new();
        for (occ, amp) in &self.amps {
            let mut rest = occ.0.clone();
            let mut local = 0usize;
            for (&t, &d) in targets.iter().zip(&dims) {
                local = local * d + occ.0[t] as usize;
            }
            // Mark target positions; removal below keeps indices stable.
            for &t in &targets {
                rest[t] = u32::MAX;
            }
            rest.retain(|&x| x != u32::MAX);
            groups
                .entry(OccTuple(rest))
                .or_insert_with(|| vec![Complex::new(T::zero(), T::zero()); dim])[local] = *amp;
        }

        let norm_before = self.norm_sqr();
        let mut amps = BTreeMap::new();
        for (rest, local_vec) in groups {
            let transformed = matrix.matvec(&local_vec);
            for (local, amp) in transformed.into_iter().enumerate() {
                if amp.norm() <= self.prune {
                    continue;
                }
                // Rebuild the full occupation tuple.
                let mut occ = Vec::with_capacity(self.spec.len());
                let mut rest_iter = rest.0.iter();
                let mut local_occ = vec![0u32; targets.len()];
                let mut rem = local;
                for k in (0..targets.len()).rev() {
                    local_occ[k] = (rem % dims[k]) as u32;
                    rem /= dims[k];
                }
                for i in 0..self.spec.len() {
                    if let Some(pos) = targets.iter().position(|&t| t == i) {
                        occ.push(local_occ[pos]);
                    } else {
                        occ.push(*rest_iter.next().expect("rest tuple covers non-targets"));
                    }
                }
                let slot = amps
                    .entry(OccTuple(occ))
                    .or_insert_with(|| Complex::new(T::zero(), T::zero()));
                *slot += amp;
            }
        }

        let mut out = Self {
            spec: self.spec.clone(),
            amps,
            trunc_loss: self.trunc_loss,
            prune: self.prune,
        };
        out.prune_small();
        if opts.expect_unitary {
            let leaked = norm_before - out.norm_sqr();
            if leaked > T::zero() {
                out.trunc_loss += leaked;
            }
            if leaked > opts.leakage_warn_bound {
                log::warn!(
                    "cutoff leakage {:.3e} exceeds bound {:.3e} on modes [{}]",
                    leaked.f64(),
                    opts.leakage_warn_bound.f64(),
                    target_modes.join(",")
                );
            }
        }
        Ok(out)
    }

    /// Expectation of `sum_k w_k |p_k><p_k| (x) identity` on the remaining
    /// modes. Projector states must be unit-norm on a sub-spec of `self`
    /// (matched by mode name, cutoffs equal).
    pub fn projector_expectation(&self, projectors: &[(T, StateVector<T>)]) -> Result<T> {
        let mut total = T::zero();
        for (weight, p) in projectors {
            let n2 = p.norm_sqr();
            if (n2 - T::one()).abs() > T::of(1e-10) {
                return Err(Error::NonUnitProjector { norm_sqr: n2.f64() });
            }
            total += *weight * self.projection_norm_sqr(p)?;
        }
        Ok(total)
    }

    /// `|| (<p| (x) I) |self> ||^2` for a single unit projector state.
    fn projection_norm_sqr(&self, p: &StateVector<T>) -> Result<T> {
        // Map projector modes into this spec.
        let mut proj_idx = Vec::with_capacity(p.spec.len());
        for m in p.spec.modes() {
            let idx = self.spec.index_of(&m.name)?;
            if self.spec.cutoff(idx) != m.cutoff {
                return Err(Error::SpecMismatch(format!(
                    "projector mode `{}` cutoff {} vs state cutoff {}",
                    m.name,
                    m.cutoff,
                    self.spec.cutoff(idx)
                )));
            }
            proj_idx.push(idx);
        }
        if proj_idx.len() == self.spec.len() {
            // Full-space projector: plain overlap.
            let mut acc = Complex::new(T::zero(), T::zero());
            for (occ_p, amp_p) in &p.amps {
                let mut occ = vec![0u32; self.spec.len()];
                for (k, &idx) in proj_idx.iter().enumerate() {
                    occ[idx] = occ_p.0[k];
                }
                acc += amp_p.conj() * self.amplitude(&OccTuple(occ));
            }
            return Ok(acc.norm_sqr());
        }

        // Partial projection: accumulate <p|psi> grouped by the occupation of
        // the remaining modes, then sum squared magnitudes.
        let mut rest_acc: BTreeMap<OccTuple, Complex<T>> = BTreeMap::new();
        for (occ, amp) in &self.amps {
            let occ_p = OccTuple(proj_idx.iter().map(|&i| occ.0[i]).collect());
            let p_amp = match p.amps.get(&occ_p) {
                Some(a) => *a,
                None => continue,
            };
            let mut rest = occ.0.clone();
            for &i in &proj_idx {
                rest[i] = u32::MAX;
            }
            rest.retain(|&x| x != u32::MAX);
            let slot = rest_acc
                .entry(OccTuple(rest))
                .or_insert_with(|| Complex::new(T::zero(), T::zero()));
            *slot += p_amp.conj() * *amp;
        }
        Ok(rest_acc.values().map(|a| a.norm_sqr()).fold(T::zero(), |s, x| s + x))
    }

    /// Expectation of the total photon-number operator.
    pub fn mean_total_photons(&self) -> T {
        self.amps
            .iter()
            .map(|(occ, amp)| T::from_u32(occ.total()).unwrap() * amp.norm_sqr())
            .fold(T::zero(), |s, x| s + x)
    }

    /// Debug dump: one line per basis state with `occupations<TAB>re<TAB>im`,
    /// sorted lexicographically by occupation tuple.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (occ, amp) in &self.amps {
            let _ = writeln!(out, "{occ}\t{}\t{}", amp.re, amp.im);
        }
        out
    }

    /// True when both states share a spec and all amplitudes agree within
    /// `tol` in magnitude.
    pub fn approx_eq(&self, other: &Self, tol: T) -> bool {
        if self.spec != other.spec {
            return false;
        }
        let keys: std::collections::BTreeSet<_> =
            self.amps.keys().chain(other.amps.keys()).collect();
        keys.into_iter().all(|k| (self.amplitude(k) - other.amplitude(k)).norm() <= tol)
    }

    fn check_same_spec(&self, other: &Self) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::SpecMismatch(format!(
                "[{}] vs [{}]",
                self.spec.describe(),
                other.spec.describe()
            )));
        }
        Ok(())
    }

    fn prune_small(&mut self) {
        let prune = self.prune;
        self.amps.retain(|_, amp| amp.norm() > prune);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    type C = Complex<f64>;

    fn spec2() -> ModeSpec {
        ModeSpec::new([("c", 1), ("d", 1)]).unwrap()
    }

    #[test]
    fn fock_basis_states() {
        let spec = spec2();
        let vac = StateVector::<f64>::fock(&spec, vec![0, 0]).unwrap();
        assert_relative_eq!(vac.norm(), 1.0, max_relative = 1e-15);
        let one = StateVector::<f64>::fock(&spec, vec![1, 0]).unwrap();
        assert_eq!(one.amplitude(&OccTuple(vec![1, 0])), C::new(1.0, 0.0));
    }

    #[test]
    fn fock_rejects_cutoff_violation() {
        let spec = spec2();
        let err = StateVector::<f64>::fock(&spec, vec![2, 0]).unwrap_err();
        assert_eq!(err, Error::CutoffExceeded { mode: "c".into(), occ: 2, cutoff: 1 });
    }

    #[test]
    fn coherent_zero_alpha_is_vacuum() {
        let params = CoherentParams { alpha: 0.0, cutoff: 3, tail_bound: 1e-12 };
        let s = StateVector::<f64>::coherent("b", &params).unwrap();
        assert_eq!(s.num_entries(), 1);
        assert_relative_eq!(s.amplitude(&OccTuple(vec![0])).re, 1.0, max_relative = 1e-15);
    }

    #[test]
    fn coherent_amplitude_before_renormalization() {
        // Series oracle: c_1 = e^{-1/2} * 1 / sqrt(1!) at alpha^2 = 1.
        let expected = (-0.5f64).exp();
        let params = CoherentParams::<f64>::for_tail_bound(1.0, 1e-12).unwrap();
        let s = StateVector::coherent("b", &params).unwrap();
        let raw = s.amplitude(&OccTuple(vec![1])).re / params.renorm_factor();
        assert_relative_eq!(raw, expected, epsilon = 1e-14);
        assert_relative_eq!(expected, 0.606_530_659_712_633_4, epsilon = 1e-15);
    }

    #[test]
    fn coherent_mean_photon_number() {
        let params = CoherentParams::<f64>::for_tail_bound(1.0, 1e-12).unwrap();
        let s = StateVector::coherent("b", &params).unwrap();
        assert_relative_eq!(s.mean_total_photons(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn coherent_reports_unachievable_tail_bound() {
        let params = CoherentParams { alpha: 2.0f64, cutoff: 2, tail_bound: 1e-12 };
        match params.validate().unwrap_err() {
            Error::TailBoundUnachievable { required, .. } => assert!(required > 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn tensor_of_basis_states() {
        let a = ModeSpec::new([("a", 1)]).unwrap();
        let b = ModeSpec::new([("b", 1)]).unwrap();
        let s = StateVector::<f64>::fock(&a, vec![1])
            .unwrap()
            .tensor(&StateVector::fock(&b, vec![0]).unwrap())
            .unwrap();
        assert_eq!(s.amplitude(&OccTuple(vec![1, 0])), C::new(1.0, 0.0));

        let vac = StateVector::<f64>::vacuum(&a)
            .tensor(&StateVector::vacuum(&b))
            .unwrap();
        assert_eq!(vac.amplitude(&OccTuple(vec![0, 0])), C::new(1.0, 0.0));
    }

    #[test]
    fn tensor_rejects_name_collision() {
        let a = ModeSpec::new([("a", 1)]).unwrap();
        let s = StateVector::<f64>::vacuum(&a);
        assert_eq!(s.tensor(&s).unwrap_err(), Error::DuplicateMode("a".into()));
    }

    #[test]
    fn inner_product_orthogonality_and_norm() {
        let spec = spec2();
        let a = StateVector::<f64>::fock(&spec, vec![1, 0]).unwrap();
        let b = StateVector::<f64>::fock(&spec, vec![0, 1]).unwrap();
        assert_eq!(a.inner_product(&b).unwrap(), C::new(0.0, 0.0));
        assert_relative_eq!(a.inner_product(&a).unwrap().re, 1.0, max_relative = 1e-15);
    }

    #[test]
    fn inner_product_rejects_spec_mismatch() {
        let a = StateVector::<f64>::vacuum(&spec2());
        let b = StateVector::<f64>::vacuum(&ModeSpec::new([("x", 1), ("y", 1)]).unwrap());
        assert!(matches!(a.inner_product(&b), Err(Error::SpecMismatch(_))));
    }

    #[test]
    fn identity_operator_is_noop() {
        let spec = spec2();
        let s = StateVector::<f64>::fock(&spec, vec![1, 0]).unwrap();
        let id = CMatrix::identity(2);
        let t = s.apply_local_operator(&["c"], &id).unwrap();
        assert!(t.approx_eq(&s, 1e-15));
    }

    #[test]
    fn diagonal_phase_on_cutoff_one_mode() {
        let spec = spec2();
        let s = StateVector::<f64>::fock(&spec, vec![1, 0]).unwrap();
        let phi = 0.7f64;
        let mut m = CMatrix::identity(2);
        m.set(1, 1, Complex::from_polar(1.0, phi));
        let t = s.apply_local_operator(&["c"], &m).unwrap();
        let expected = Complex::from_polar(1.0, phi);
        assert!((t.amplitude(&OccTuple(vec![1, 0])) - expected).norm() < 1e-15);
    }

    #[test]
    fn operator_dimension_mismatch_is_rejected() {
        let spec = spec2();
        let s = StateVector::<f64>::vacuum(&spec);
        let id = CMatrix::identity(3);
        assert_eq!(
            s.apply_local_operator(&["c"], &id).unwrap_err(),
            Error::DimensionMismatch { got: 3, expected: 2 }
        );
    }

    #[test]
    fn projector_completeness_sums_to_one() {
        let spec = spec2();
        let s = StateVector::<f64>::from_amplitudes(
            &spec,
            [
                (OccTuple(vec![1, 0]), C::new(0.6, 0.0)),
                (OccTuple(vec![0, 1]), C::new(0.0, 0.8)),
            ],
        )
        .unwrap();
        let single = ModeSpec::new([("c", 1)]).unwrap();
        let basis: Vec<(f64, StateVector<f64>)> = (0..=1)
            .map(|n| (1.0, StateVector::fock(&single, vec![n]).unwrap()))
            .collect();
        let total = s.projector_expectation(&basis).unwrap();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn projector_rejects_non_unit_state() {
        let spec = spec2();
        let s = StateVector::<f64>::vacuum(&spec);
        let single = ModeSpec::new([("c", 1)]).unwrap();
        let p = StateVector::<f64>::fock(&single, vec![0]).unwrap().scale(C::new(0.5, 0.0));
        assert!(matches!(
            s.projector_expectation(&[(1.0, p)]),
            Err(Error::NonUnitProjector { .. })
        ));
    }

    #[test]
    fn dump_is_sorted_and_tab_separated() {
        let spec = spec2();
        let s = StateVector::<f64>::from_amplitudes(
            &spec,
            [
                (OccTuple(vec![1, 0]), C::new(0.5, 0.0)),
                (OccTuple(vec![0, 1]), C::new(-0.5, 0.25)),
            ],
        )
        .unwrap();
        assert_eq!(s.dump(), "0,1\t-0.5\t0.25\n1,0\t0.5\t0\n");
    }

    #[test]
    fn poisson_tail_matches_direct_sum() {
        // Oracle: brute-force partial sums of the Poisson pmf.
        for &lambda in &[0.3f64, 1.0, 4.5, 20.0] {
            for n in [0u32, 1, 3, 10, 40] {
                let mut p = (-lambda).exp();
                let mut cdf = p;
                for k in 1..=n {
                    p = p * lambda / k as f64;
                    cdf += p;
                }
                let direct = 1.0 - cdf;
                let tail = poisson_tail_above(lambda, n);
                assert!(
                    (tail - direct).abs() < 1e-13,
                    "lambda={lambda} n={n}: {tail} vs {direct}"
                );
            }
        }
    }

    #[test]
    fn ln_factorial_matches_table() {
        let mut acc = 0.0f64;
        for k in 2..=60u32 {
            acc += (k as f64).ln();
            assert_relative_eq!(ln_factorial(k as f64), acc, max_relative = 1e-12);
        }
    }
}
