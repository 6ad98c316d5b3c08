//! The auxiliary bracket `B_{bc}^a`: builders, the gauge-invariance condition `H = 0`,
//! its quadratic Jacobi constraint, and the nullspace / classification oracles.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::lie::{jacobi_residual, LieAlgebra, LieError, LieVector};
use crate::tensor::Tensor3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuxError {
    #[error("builder requires su2, got `{0}`")]
    WrongAlgebra(String),
    #[error("algebra `{0}` is not semisimple")]
    NotSemisimple(String),
    #[error("pair vectors do not commute: |[u,v]| = {0:e}")]
    CommutatorNonzero(f64),
    #[error("dense nullspace limited to dim <= 10, got {0}")]
    TooLarge(usize),
    #[error("subspace split failed: {0}")]
    SubspaceSplitFailed(String),
    #[error(transparent)]
    Lie(#[from] LieError),
}

const COMMUTE_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct CommutingPair {
    pub u: LieVector,
    pub v: LieVector,
    pub u2: f64,
    pub v2: f64,
}

impl CommutingPair {
    /// Projects `v` to be Killing-orthogonal to `u`, then checks that they commute.
    pub fn new(alg: &LieAlgebra, u: LieVector, v: LieVector) -> Result<Self, AuxError> {
        alg.check(&u)?;
        alg.check(&v)?;
        let uu = alg.inner(&u, &u);
        let v = if uu > 0.0 { &v - &u * (alg.inner(&u, &v) / uu) } else { v };
        let comm = alg.bracket_raw(u.as_slice(), v.as_slice()).amax();
        if comm > COMMUTE_TOL {
            return Err(AuxError::CommutatorNonzero(comm));
        }
        let v2 = alg.inner(&v, &v);
        Ok(Self { u, v, u2: uu, v2 })
    }

    /// `u ↔ v` without re-projection.
    pub fn swapped(&self) -> Self {
        Self {
            u: self.v.clone(),
            v: self.u.clone(),
            u2: self.v2,
            v2: self.u2,
        }
    }

    /// Random unit-norm pair drawn from the commuting directions of `alg`.
    pub fn random<R: Rng>(alg: &LieAlgebra, rng: &mut R) -> Result<Self, AuxError> {
        let dirs = cartan_directions(alg);
        if dirs.len() < 2 {
            return Err(LieError::RankTooLow(alg.label().to_string()).into());
        }
        let combo = |rng: &mut R| {
            dirs.iter()
                .fold(DVector::zeros(alg.dim()), |acc, h| acc + h * rng.gen_range(-1.0..1.0))
        };
        let u = unit(alg, combo(rng));
        let v = combo(rng);
        let p = Self::new(alg, u, v)?;
        let v = unit(alg, p.v);
        Self::new(alg, p.u, v)
    }
}

/// Mutually commuting directions of all nonabelian summands, embedded.
pub fn cartan_directions(alg: &LieAlgebra) -> Vec<LieVector> {
    let n = alg.dim();
    alg.factors()
        .iter()
        .filter(|f| !f.abelian)
        .flat_map(|f| {
            f.cartan.iter().map(move |h| {
                let mut x = DVector::zeros(n);
                x.rows_mut(f.offset, f.dim).copy_from(h);
                x
            })
        })
        .collect()
}

fn unit(alg: &LieAlgebra, x: LieVector) -> LieVector {
    let nn = alg.inner(&x, &x);
    let nn = if nn > 0.0 { nn } else { x.norm_squared() };
    if nn > 0.0 {
        x / nn.sqrt()
    } else {
        x
    }
}

/// Random unit-norm vector (Killing norm when it is definite).
pub fn random_unit_vector<R: Rng>(alg: &LieAlgebra, rng: &mut R) -> LieVector {
    let x = DVector::from_fn(alg.dim(), |_, _| rng.gen_range(-1.0..1.0));
    unit(alg, x)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Su2V(LieVector),
    Ccv(LieVector),
    Pair(CommutingPair),
    PairSum { pairs: Vec<CommutingPair>, extension: bool },
    Raw,
}

impl Provenance {
    pub fn tag(&self) -> &'static str {
        match self {
            Provenance::Su2V(_) => "su2-v",
            Provenance::Ccv(_) => "ccv",
            Provenance::Pair(_) => "pair",
            Provenance::PairSum { .. } => "pair-sum",
            Provenance::Raw => "raw",
        }
    }

    /// The pairs defining `V(φ) = Σ (u,φ)v − (v,φ)u`, when the bracket has that form.
    pub fn pairs(&self) -> Option<Vec<CommutingPair>> {
        match self {
            Provenance::Pair(p) => Some(vec![p.clone()]),
            Provenance::PairSum { pairs, .. } => Some(pairs.clone()),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AuxBracket {
    upper: Tensor3,
    lower: Tensor3,
    mixed: Option<Tensor3>,
    provenance: Provenance,
}

impl AuxBracket {
    /// From `B_{bc}^a`; lowering and the mixed form `duB^d_{be} = k^{da} B_{abe}` use `alg`.
    pub fn from_upper(alg: &LieAlgebra, mut upper: Tensor3, provenance: Provenance) -> Self {
        upper.antisymmetrize_front();
        let lower = upper.contract_last(alg.killing());
        let mixed = mixed_form(alg, &upper, &lower);
        Self { upper, lower, mixed, provenance }
    }

    /// From `B_{bca}`; requires an invertible metric unless `lower` vanishes.
    pub fn from_lower(alg: &LieAlgebra, lower: Tensor3, provenance: Provenance) -> Result<Self, AuxError> {
        if lower.max_abs() == 0.0 {
            return Ok(Self::from_upper(alg, Tensor3::zeros(alg.dim()), provenance));
        }
        let kinv = alg
            .killing_inv()
            .ok_or_else(|| AuxError::NotSemisimple(alg.label().to_string()))?;
        let upper = lower.contract_last(kinv);
        Ok(Self::from_upper(alg, upper, provenance))
    }

    pub fn zero(alg: &LieAlgebra) -> Self {
        Self::from_upper(alg, Tensor3::zeros(alg.dim()), Provenance::Raw)
    }

    pub fn upper(&self) -> &Tensor3 {
        &self.upper
    }

    pub fn lower(&self) -> &Tensor3 {
        &self.lower
    }

    /// `duB^d_{be}` indexed `[(d, b, e)]`; absent for a nonzero bracket on a degenerate metric.
    pub fn mixed(&self) -> Option<&Tensor3> {
        self.mixed.as_ref()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn is_zero(&self) -> bool {
        self.upper.max_abs() == 0.0
    }

    pub fn dim(&self) -> usize {
        self.upper.dim()
    }

    /// `[x, y]_B^a = B_{bc}^a x^b y^c`.
    pub fn bracket(&self, x: &LieVector, y: &LieVector) -> LieVector {
        let n = self.dim();
        DVector::from_fn(n, |a, _| {
            let mut s = 0.0;
            for b in 0..n {
                for c in 0..n {
                    s += self.upper[(b, c, a)] * x[b] * y[c];
                }
            }
            s
        })
    }

    /// Coupling rescaled by `s` (the auxiliary vector `v` → `s v`).
    pub fn scaled(&self, alg: &LieAlgebra, s: f64) -> Self {
        let provenance = match &self.provenance {
            Provenance::Su2V(v) => Provenance::Su2V(v * s),
            Provenance::Ccv(v) => Provenance::Ccv(v * s),
            Provenance::Pair(p) => Provenance::Pair(scale_pair(p, s)),
            Provenance::PairSum { pairs, extension } => Provenance::PairSum {
                pairs: pairs.iter().map(|p| scale_pair(p, s)).collect(),
                extension: *extension,
            },
            Provenance::Raw => Provenance::Raw,
        };
        Self::from_upper(alg, self.upper.scaled(s), provenance)
    }
}

fn scale_pair(p: &CommutingPair, s: f64) -> CommutingPair {
    CommutingPair {
        u: p.u.clone(),
        v: &p.v * s,
        u2: p.u2,
        v2: p.v2 * s * s,
    }
}

fn mixed_form(alg: &LieAlgebra, upper: &Tensor3, lower: &Tensor3) -> Option<Tensor3> {
    let n = alg.dim();
    if upper.max_abs() == 0.0 {
        return Some(Tensor3::zeros(n));
    }
    let kinv = alg.killing_inv()?;
    let mut out = Tensor3::zeros(n);
    for a in 0..n {
        for b in 0..n {
            for e in 0..n {
                let x = lower[(a, b, e)];
                if x == 0.0 {
                    continue;
                }
                for d in 0..n {
                    out[(d, b, e)] += kinv[(d, a)] * x;
                }
            }
        }
    }
    Some(out)
}

/// su2 only: `B_{bcn} = δ_{nb} v_c − δ_{nc} v_b` with `v_c` lowered by `k = δ`.
pub fn build_aux_su2(alg: &LieAlgebra, v: &LieVector) -> Result<AuxBracket, AuxError> {
    let is_su2 = alg.dim() == 3
        && alg.structure().max_abs_diff(&Tensor3::from_fn(3, crate::lie::levi_civita)) == 0.0;
    if !is_su2 {
        return Err(AuxError::WrongAlgebra(alg.label().to_string()));
    }
    alg.check(v)?;
    let vl = alg.lower(v);
    let lower = Tensor3::from_fn(3, |b, c, n| {
        let mut x = 0.0;
        if n == b {
            x += vl[c];
        }
        if n == c {
            x -= vl[b];
        }
        x
    });
    AuxBracket::from_lower(alg, lower, Provenance::Su2V(v.clone()))
}

/// `B_{bca} = C_{bc}^e C_{ae}^d v_d`; Jacobi is not guaranteed.
pub fn build_aux_ccv(alg: &LieAlgebra, v: &LieVector) -> Result<AuxBracket, AuxError> {
    alg.check(v)?;
    if !alg.is_semisimple() {
        return Err(AuxError::NotSemisimple(alg.label().to_string()));
    }
    let n = alg.dim();
    let c = alg.structure();
    let vl = alg.lower(v);
    // w[(a,e)] = C_{ae}^d v_d
    let w = DMatrix::from_fn(n, n, |a, e| (0..n).map(|d| c[(a, e, d)] * vl[d]).sum::<f64>());
    let lower = Tensor3::from_fn(n, |b, cc, a| (0..n).map(|e| c[(b, cc, e)] * w[(a, e)]).sum::<f64>());
    AuxBracket::from_lower(alg, lower, Provenance::Ccv(v.clone()))
}

/// Pair formula without the commutation check.
pub fn pair_lower_raw(alg: &LieAlgebra, u: &LieVector, v: &LieVector) -> Tensor3 {
    let n = alg.dim();
    let c = alg.structure();
    let ul = alg.lower(u);
    let vl = alg.lower(v);
    // cu[(c,a)] = C_{ca}^e u_e
    let cu = DMatrix::from_fn(n, n, |x, a| (0..n).map(|e| c[(x, a, e)] * ul[e]).sum::<f64>());
    let cv = DMatrix::from_fn(n, n, |x, a| (0..n).map(|e| c[(x, a, e)] * vl[e]).sum::<f64>());
    Tensor3::from_fn(n, |b, cc, a| {
        let vu = vl[b] * cu[(cc, a)] - vl[cc] * cu[(b, a)];
        let uv = ul[b] * cv[(cc, a)] - ul[cc] * cv[(b, a)];
        vu - uv
    })
}

pub fn build_aux_pair(alg: &LieAlgebra, pair: &CommutingPair) -> Result<AuxBracket, AuxError> {
    alg.check(&pair.u)?;
    alg.check(&pair.v)?;
    let comm = alg.bracket_raw(pair.u.as_slice(), pair.v.as_slice()).amax();
    if comm > COMMUTE_TOL {
        return Err(AuxError::CommutatorNonzero(comm));
    }
    let lower = pair_lower_raw(alg, &pair.u, &pair.v);
    AuxBracket::from_lower(alg, lower, Provenance::Pair(pair.clone()))
}

pub fn build_aux_sum(alg: &LieAlgebra, pairs: &[CommutingPair]) -> Result<AuxBracket, AuxError> {
    let vecs: Vec<&LieVector> = pairs.iter().flat_map(|p| [&p.u, &p.v]).collect();
    for (i, x) in vecs.iter().enumerate() {
        alg.check(x)?;
        for y in &vecs[i + 1..] {
            let comm = alg.bracket_raw(x.as_slice(), y.as_slice()).amax();
            if comm > COMMUTE_TOL {
                return Err(AuxError::CommutatorNonzero(comm));
            }
        }
    }
    let mut lower = Tensor3::zeros(alg.dim());
    for p in pairs {
        lower.add_assign(&pair_lower_raw(alg, &p.u, &p.v));
    }
    let extension = mixes_sources(alg, pairs);
    AuxBracket::from_lower(
        alg,
        lower,
        Provenance::PairSum { pairs: pairs.to_vec(), extension },
    )
}

/// True when some pair straddles two summands while another lies inside one.
fn mixes_sources(alg: &LieAlgebra, pairs: &[CommutingPair]) -> bool {
    let home = |x: &LieVector| {
        alg.factors().iter().position(|f| {
            x.iter()
                .enumerate()
                .all(|(i, &xi)| xi == 0.0 || (i >= f.offset && i < f.offset + f.dim))
        })
    };
    let cross = pairs.iter().any(|p| home(&p.u) != home(&p.v) || home(&p.u).is_none());
    let inner = pairs.iter().any(|p| home(&p.u).is_some() && home(&p.u) == home(&p.v));
    cross && inner
}

/// `H_{bcad}` flattened as `[((b n + c) n + a) n + d]`, from the lowered bracket.
pub fn h_tensor(alg: &LieAlgebra, lower: &Tensor3) -> Vec<f64> {
    let n = alg.dim();
    let c = alg.structure();
    let mut h = vec![0.0; n * n * n * n];
    let at = |b: usize, cc: usize, a: usize, d: usize| ((b * n + cc) * n + a) * n + d;
    for (x, y, z, val) in lower.nonzeros() {
        for p in 0..n {
            for q in 0..n {
                // C_{ab}^e B_{ecd}: e=x c=y d=z, (a,b)=(p,q)
                h[at(q, y, p, z)] += c[(p, q, x)] * val;
                // -C_{ac}^e B_{ebd}: e=x b=y d=z, (a,c)=(p,q)
                h[at(y, q, p, z)] -= c[(p, q, x)] * val;
                // -C_{db}^e B_{eca}: e=x c=y a=z, (d,b)=(p,q)
                h[at(q, y, z, p)] -= c[(p, q, x)] * val;
                // C_{dc}^e B_{eba}: e=x b=y a=z, (d,c)=(p,q)
                h[at(y, q, z, p)] += c[(p, q, x)] * val;
                // C_{ad}^e B_{bce}: b=x c=y e=z, (a,d)=(p,q)
                h[at(x, y, p, q)] += c[(p, q, z)] * val;
            }
        }
    }
    h
}

pub fn h_residual_lower(alg: &LieAlgebra, lower: &Tensor3) -> f64 {
    h_tensor(alg, lower).iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn h_residual(alg: &LieAlgebra, aux: &AuxBracket) -> f64 {
    h_residual_lower(alg, aux.lower())
}

/// Max-abs of `B_{[bc}^n B_{d]n}^a`.
pub fn aux_jacobi_residual(aux: &AuxBracket) -> f64 {
    jacobi_residual(aux.upper())
}

/// `B_{bcd} = V_{eb} C_{cd}^e − V_{ec} C_{bd}^e` for antisymmetric `V`.
pub fn v_map_lower(alg: &LieAlgebra, vmat: &DMatrix<f64>) -> Tensor3 {
    let n = alg.dim();
    let c = alg.structure();
    Tensor3::from_fn(n, |b, cc, d| {
        (0..n)
            .map(|e| vmat[(e, b)] * c[(cc, d, e)] - vmat[(e, cc)] * c[(b, d, e)])
            .sum()
    })
}

#[derive(Clone, Debug)]
pub struct HNullspace {
    pub dimension: usize,
    pub v_map_rank: usize,
    pub containment_residual: f64,
    pub contained: bool,
    pub basis: Vec<AuxBracket>,
}

/// Independent components `(b < c, a)` in lexicographic order.
pub fn packed_components(n: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::with_capacity(n * n * (n - 1) / 2);
    for b in 0..n {
        for c in b + 1..n {
            for a in 0..n {
                out.push((b, c, a));
            }
        }
    }
    out
}

fn rank_and_nullspace(m: &DMatrix<f64>) -> (usize, DMatrix<f64>) {
    let cols = m.ncols();
    let r = if m.nrows() > cols {
        m.clone().qr().r()
    } else {
        m.clone()
    };
    // pad to square so the SVD yields a full right basis
    let mut sq = DMatrix::zeros(cols, cols);
    let rows = r.nrows().min(cols);
    sq.rows_mut(0, rows).copy_from(&r.rows(0, rows));
    let svd = sq.svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.max();
    let tol = if smax > 0.0 { 1e-9 * smax } else { 1e-12 };
    let mut null = Vec::new();
    let mut rank = 0;
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > tol {
            rank += 1;
        } else {
            null.push(vt.row(i).transpose());
        }
    }
    let basis = if null.is_empty() {
        DMatrix::zeros(cols, 0)
    } else {
        DMatrix::from_columns(&null)
    };
    (rank, basis)
}

pub fn solve_h_nullspace(alg: &LieAlgebra) -> Result<HNullspace, AuxError> {
    let n = alg.dim();
    if n > 10 {
        return Err(AuxError::TooLarge(n));
    }
    let comps = packed_components(n);
    let k = alg.killing();
    let mut m = DMatrix::zeros(n * n * n * n, comps.len());
    for (col, &(b, c, a)) in comps.iter().enumerate() {
        let mut upper = Tensor3::zeros(n);
        upper[(b, c, a)] = 1.0;
        upper[(c, b, a)] = -1.0;
        let h = h_tensor(alg, &upper.contract_last(k));
        for (row, x) in h.into_iter().enumerate() {
            m[(row, col)] = x;
        }
    }
    let (_, null) = rank_and_nullspace(&m);
    let basis = null
        .column_iter()
        .map(|col| {
            let mut upper = Tensor3::zeros(n);
            for (i, &(b, c, a)) in comps.iter().enumerate() {
                upper[(b, c, a)] = col[i];
                upper[(c, b, a)] = -col[i];
            }
            AuxBracket::from_upper(alg, upper, Provenance::Raw)
        })
        .collect::<Vec<_>>();

    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|e| (e + 1..n).map(move |b| (e, b))).collect();
    let mut vm = DMatrix::zeros(n * n * n, pairs.len().max(1));
    let mut containment: f64 = 0.0;
    for (col, &(e, b)) in pairs.iter().enumerate() {
        let mut vmat = DMatrix::zeros(n, n);
        vmat[(e, b)] = 1.0;
        vmat[(b, e)] = -1.0;
        let lower = v_map_lower(alg, &vmat);
        containment = containment.max(h_residual_lower(alg, &lower));
        for (row, x) in lower.as_slice().iter().enumerate() {
            vm[(row, col)] = *x;
        }
    }
    let (v_map_rank, _) = if pairs.is_empty() { (0, DMatrix::zeros(0, 0)) } else { rank_and_nullspace(&vm) };
    Ok(HNullspace {
        dimension: basis.len(),
        v_map_rank,
        containment_residual: containment,
        contained: containment <= 1e-10,
        basis,
    })
}

#[derive(Clone, Debug)]
pub struct ClassificationReport {
    /// `(span{u,v} or span{v}, H, H⊥)` dimensions.
    pub dims: (usize, usize, usize),
    pub entries: Vec<(String, f64)>,
}

impl ClassificationReport {
    pub fn max_residual(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, (_, r)| m.max(*r))
    }
}

/// Orthonormal (Euclidean) basis of the kernel of `rows`.
fn kernel(rows: &[DVector<f64>], n: usize) -> Vec<LieVector> {
    if rows.is_empty() {
        return (0..n).map(|i| DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 })).collect();
    }
    let m = DMatrix::from_rows(&rows.iter().map(|r| r.transpose()).collect::<Vec<_>>());
    let (_, null) = rank_and_nullspace(&m);
    null.column_iter().map(|c| c.into_owned()).collect()
}

pub fn classify_aux_structure(alg: &LieAlgebra, aux: &AuxBracket) -> Result<ClassificationReport, AuxError> {
    let n = alg.dim();
    let k = alg.killing();
    let br = |x: &LieVector, y: &LieVector| aux.bracket(x, y);
    let lie = |x: &LieVector, y: &LieVector| alg.bracket_raw(x.as_slice(), y.as_slice());
    let mut entries: Vec<(String, f64)> = Vec::new();
    let mut push = |name: &str, r: f64| {
        if let Some(e) = entries.iter_mut().find(|(n, _)| n == name) {
            e.1 = e.1.max(r);
        } else {
            entries.push((name.to_string(), r));
        }
    };
    match aux.provenance() {
        Provenance::Su2V(v) => {
            let w = kernel(&[k * v], n);
            if w.len() + 1 != n {
                return Err(AuxError::SubspaceSplitFailed(format!(
                    "complement of v has dim {}",
                    w.len()
                )));
            }
            let v2 = alg.inner(v, v);
            push("[v,v]_B", br(v, v).amax());
            for (i, wi) in w.iter().enumerate() {
                push("[w_i,v]_B - |v|^2 w_i", (br(wi, v) - wi * v2).amax());
                for wj in &w[i + 1..] {
                    push("[w1,w2]_B", br(wi, wj).amax());
                }
            }
            Ok(ClassificationReport { dims: (1, 0, w.len()), entries })
        }
        Provenance::Pair(p) => {
            let (u, v) = (&p.u, &p.v);
            let mut rows = vec![k * u, k * v];
            let adu = DMatrix::from_fn(n, n, |a, c| {
                (0..n).map(|b| alg.structure()[(b, c, a)] * u[b]).sum()
            });
            let adv = DMatrix::from_fn(n, n, |a, c| {
                (0..n).map(|b| alg.structure()[(b, c, a)] * v[b]).sum()
            });
            for a in 0..n {
                rows.push(adu.row(a).transpose());
                rows.push(adv.row(a).transpose());
            }
            let hs = kernel(&rows, n);
            let mut rows2 = vec![k * u, k * v];
            rows2.extend(hs.iter().map(|h| k * h));
            let xs = kernel(&rows2, n);
            if 2 + hs.len() + xs.len() != n {
                return Err(AuxError::SubspaceSplitFailed(format!(
                    "2 + {} + {} != {n}",
                    hs.len(),
                    xs.len()
                )));
            }
            let (u2, v2) = (alg.inner(u, u), alg.inner(v, v));
            push("[u,v]_B", br(u, v).amax());
            for (i, h) in hs.iter().enumerate() {
                push("[u,h]_B", br(u, h).amax());
                push("[v,h]_B", br(v, h).amax());
                for g in &hs[i..] {
                    push("[h,g]_B", br(h, g).amax());
                }
            }
            // projector onto H⊥ along span{u,v} ⊕ H, via the Killing-orthogonal split
            let xm = DMatrix::from_columns(&xs);
            let gram = xm.transpose() * k * &xm;
            let gram_inv = gram.try_inverse().ok_or_else(|| {
                AuxError::SubspaceSplitFailed("degenerate metric on complement".into())
            })?;
            let project = |y: &LieVector| &xm * (&gram_inv * (xm.transpose() * (k * y)));
            for (i, x) in xs.iter().enumerate() {
                push("[u,x]_B + |u|^2 [v,x]", (br(u, x) + lie(v, x) * u2).amax());
                push("[v,x]_B - |v|^2 [u,x]", (br(v, x) - lie(u, x) * v2).amax());
                for h in &hs {
                    push("[x,h]_B", br(x, h).amax());
                }
                for y in &xs[i..] {
                    push("[x,y]_B", br(x, y).amax());
                }
                let ux = lie(u, x);
                push("[u,x] in H-perp", (&ux - project(&ux)).amax());
            }
            Ok(ClassificationReport { dims: (2, hs.len(), xs.len()), entries })
        }
        other => Err(AuxError::SubspaceSplitFailed(format!(
            "no classification for provenance `{}`",
            other.tag()
        ))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObstructionVerdict {
    /// `[u, v] = 0`: nothing to show.
    Vacuous,
    /// Jacobi holds and `{u, v, [u,v]}` closes into an su2.
    InvariantSu2,
    /// Jacobi holds but the closure relations fail.
    RelationsFail,
    JacobiViolation,
}

#[derive(Clone, Debug)]
pub struct ObstructionReport {
    pub x: LieVector,
    pub x_norm: f64,
    pub jacobi_residual: f64,
    pub closure_residual: f64,
    pub relation_residuals: [f64; 3],
    pub verdict: ObstructionVerdict,
}

pub fn appendix_a_obstruction(alg: &LieAlgebra, u: &LieVector, v: &LieVector) -> Result<ObstructionReport, AuxError> {
    alg.check(u)?;
    alg.check(v)?;
    let n = alg.dim();
    let uu = alg.inner(u, u);
    let v = if uu > 0.0 { v - u * (alg.inner(u, v) / uu) } else { v.clone() };
    let x = alg.bracket_raw(u.as_slice(), v.as_slice());
    let x_norm = x.amax();
    let lower = pair_lower_raw(alg, u, &v);
    let jac = match AuxBracket::from_lower(alg, lower, Provenance::Raw) {
        Ok(b) => aux_jacobi_residual(&b),
        Err(_) => f64::INFINITY,
    };
    let mut report = ObstructionReport {
        x: x.clone(),
        x_norm,
        jacobi_residual: jac,
        closure_residual: 0.0,
        relation_residuals: [0.0; 3],
        verdict: ObstructionVerdict::Vacuous,
    };
    if x_norm <= 1e-10 {
        return Ok(report);
    }
    if jac > 1e-10 {
        report.verdict = ObstructionVerdict::JacobiViolation;
        return Ok(report);
    }
    let c = alg.structure();
    let k = alg.killing();
    let (ul, vl, xl) = (k * u, k * &v, k * &x);
    let v2 = alg.inner(&v, &v);
    let mut r = [0.0f64; 3];
    for a in 0..n {
        for d in 0..n {
            // x^e C_{ead} with C_{ead} = C_{ea}^f k_{fd}
            let xc: f64 = (0..n)
                .map(|e| x[e] * (0..n).map(|f| c[(e, a, f)] * k[(f, d)]).sum::<f64>())
                .sum();
            r[0] = r[0].max((xc - (ul[a] * vl[d] - ul[d] * vl[a])).abs());
            let vc: f64 = (0..n).map(|p| vl[p] * c[(a, d, p)]).sum();
            r[1] = r[1].max((uu * vc - (xl[a] * ul[d] - xl[d] * ul[a])).abs());
            let uc: f64 = (0..n).map(|p| ul[p] * c[(a, d, p)]).sum();
            r[2] = r[2].max((v2 * uc + (xl[a] * vl[d] - xl[d] * vl[a])).abs());
        }
    }
    let span = DMatrix::from_columns(&[u.clone(), v.clone(), x.clone()]);
    let pinv = span.clone().pseudo_inverse(1e-12).map_err(|e| AuxError::SubspaceSplitFailed(e.into()))?;
    let mut closure: f64 = 0.0;
    for (p, q) in [(u, &v), (&v, &x), (&x, u)] {
        let w = alg.bracket_raw(p.as_slice(), q.as_slice());
        let proj = &span * (&pinv * &w);
        closure = closure.max((w - proj).amax());
    }
    report.closure_residual = closure;
    report.relation_residuals = r;
    report.verdict = if closure <= 1e-10 && r.iter().all(|x| *x <= 1e-10) {
        ObstructionVerdict::InvariantSu2
    } else {
        ObstructionVerdict::RelationsFail
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{builtin_algebra, commuting_pair, su2};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn e(n: usize, i: usize) -> LieVector {
        DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 })
    }

    #[test]
    fn su2_builder_example() {
        let alg = su2();
        let b = build_aux_su2(&alg, &e(3, 2)).unwrap();
        let nz: Vec<_> = b.upper().nonzeros();
        assert_eq!(nz.len(), 4);
        assert_eq!(b.upper()[(0, 2, 0)], 1.0);
        assert_eq!(b.upper()[(1, 2, 1)], 1.0);
        assert_eq!(b.upper()[(2, 0, 0)], -1.0);
        assert_eq!(b.upper()[(2, 1, 1)], -1.0);
        assert!(build_aux_su2(&alg, &DVector::zeros(3)).unwrap().is_zero());
        let su3 = builtin_algebra("su3").unwrap();
        assert!(matches!(build_aux_su2(&su3, &e(8, 0)), Err(AuxError::WrongAlgebra(_))));
    }

    #[test]
    fn su2_builder_residuals() {
        let alg = su2();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let v = random_unit_vector(&alg, &mut rng);
            let b = build_aux_su2(&alg, &v).unwrap();
            assert!(h_residual(&alg, &b) <= 1e-14);
            assert!(aux_jacobi_residual(&b) <= 1e-14);
        }
    }

    #[test]
    fn structure_constants_fail_h() {
        let alg = su2();
        let b = AuxBracket::from_upper(&alg, alg.structure().clone(), Provenance::Raw);
        assert!(h_residual(&alg, &b) > 0.5);
        assert_eq!(h_residual(&alg, &AuxBracket::zero(&alg)), 0.0);
    }

    #[test]
    fn ccv_is_negative_su2_builder() {
        let alg = su2();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let v = random_unit_vector(&alg, &mut rng);
            let a = build_aux_ccv(&alg, &v).unwrap();
            let b = build_aux_su2(&alg, &v).unwrap();
            assert!(a.upper().max_abs_diff(&b.upper().scaled(-1.0)) <= 1e-14);
        }
    }

    #[test]
    fn ccv_jacobi_pattern() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for label in ["su2", "so4"] {
            let alg = builtin_algebra(label).unwrap();
            let v = random_unit_vector(&alg, &mut rng);
            let b = build_aux_ccv(&alg, &v).unwrap();
            assert!(aux_jacobi_residual(&b) <= 1e-12, "{label}");
            assert!(h_residual(&alg, &b) <= 1e-12, "{label}");
        }
        for label in ["su3", "so5"] {
            let alg = builtin_algebra(label).unwrap();
            let v = random_unit_vector(&alg, &mut rng);
            assert!(aux_jacobi_residual(&build_aux_ccv(&alg, &v).unwrap()) > 1e-6, "{label}");
        }
    }

    #[test]
    fn pair_examples() {
        let su3 = builtin_algebra("su3").unwrap();
        let (u, v) = commuting_pair(&su3).unwrap();
        let p = CommutingPair::new(&su3, u.clone(), v).unwrap();
        let b = build_aux_pair(&su3, &p).unwrap();
        assert!(h_residual(&su3, &b) <= 1e-12);
        assert!(aux_jacobi_residual(&b) <= 1e-12);
        assert!(b.upper().max_abs() > 0.1);
        let par = CommutingPair { u: u.clone(), v: &u * 2.0, u2: 1.0, v2: 4.0 };
        assert!(build_aux_pair(&su3, &par).unwrap().upper().max_abs() <= 1e-15);
        let so4 = builtin_algebra("so4").unwrap();
        let (u, v) = commuting_pair(&so4).unwrap();
        let b = build_aux_pair(&so4, &CommutingPair::new(&so4, u, v).unwrap()).unwrap();
        assert!(h_residual(&so4, &b) <= 1e-12 && aux_jacobi_residual(&b) <= 1e-12);
        let bad = CommutingPair { u: e(8, 0), v: e(8, 1), u2: 1.5, v2: 1.5 };
        assert!(matches!(build_aux_pair(&su3, &bad), Err(AuxError::CommutatorNonzero(_))));
    }

    #[test]
    fn pair_swap_is_exact_negation() {
        let su4 = builtin_algebra("su4").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = CommutingPair::random(&su4, &mut rng).unwrap();
        let a = build_aux_pair(&su4, &p).unwrap();
        let b = build_aux_pair(&su4, &p.swapped()).unwrap();
        for (x, y) in a.lower().as_slice().iter().zip(b.lower().as_slice()) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn sums() {
        let su4 = builtin_algebra("su4").unwrap();
        let dirs = cartan_directions(&su4);
        let p1 = CommutingPair::new(&su4, dirs[0].clone(), dirs[1].clone()).unwrap();
        let p2 = CommutingPair::new(&su4, dirs[1].clone(), dirs[2].clone()).unwrap();
        let s = build_aux_sum(&su4, &[p1.clone(), p2]).unwrap();
        assert!(h_residual(&su4, &s) <= 1e-12 && aux_jacobi_residual(&s) <= 1e-12);
        assert!(build_aux_sum(&su4, &[]).unwrap().is_zero());
        let single = build_aux_sum(&su4, &[p1.clone()]).unwrap();
        assert_eq!(single.upper(), build_aux_pair(&su4, &p1).unwrap().upper());
        let q = CommutingPair { u: e(15, 0), v: e(15, 14), u2: 0.0, v2: 0.0 };
        assert!(matches!(build_aux_sum(&su4, &[p1, q]), Err(AuxError::CommutatorNonzero(_))));
    }

    #[test]
    fn sum_extension_flag() {
        let alg = builtin_algebra("direct_sum(su2,su3)").unwrap();
        let dirs = cartan_directions(&alg);
        let cross = CommutingPair::new(&alg, dirs[0].clone(), dirs[1].clone()).unwrap();
        let inner = CommutingPair::new(&alg, dirs[1].clone(), dirs[2].clone()).unwrap();
        let b = build_aux_sum(&alg, &[cross.clone(), inner.clone()]).unwrap();
        assert!(matches!(b.provenance(), Provenance::PairSum { extension: true, .. }));
        let b = build_aux_sum(&alg, &[inner]).unwrap();
        assert!(matches!(b.provenance(), Provenance::PairSum { extension: false, .. }));
        assert!(h_residual(&alg, &b) <= 1e-12);
    }

    #[test]
    fn nullspace_dimensions() {
        let r = solve_h_nullspace(&su2()).unwrap();
        assert_eq!((r.dimension, r.v_map_rank), (3, 3));
        assert!(r.contained);
        for b in &r.basis {
            assert!(h_residual(&su2(), b) <= 1e-12);
        }
        let r = solve_h_nullspace(&builtin_algebra("abelian(3)").unwrap()).unwrap();
        assert_eq!((r.dimension, r.v_map_rank), (9, 0));
        let r = solve_h_nullspace(&builtin_algebra("so4").unwrap()).unwrap();
        assert_eq!((r.dimension, r.v_map_rank), (15, 15));
        assert!(matches!(
            solve_h_nullspace(&builtin_algebra("su4").unwrap()),
            Err(AuxError::TooLarge(15))
        ));
    }

    #[test]
    fn classification_su2() {
        let alg = su2();
        let b = build_aux_su2(&alg, &e(3, 2)).unwrap();
        let r = classify_aux_structure(&alg, &b).unwrap();
        assert_eq!(r.dims, (1, 0, 2));
        assert!(r.max_residual() <= 1e-14);
        // [e1, e3]_B = e1
        assert_eq!(b.bracket(&e(3, 0), &e(3, 2)), e(3, 0));
    }

    #[test]
    fn classification_su3_pair() {
        let alg = builtin_algebra("su3").unwrap();
        let (u, v) = commuting_pair(&alg).unwrap();
        let b = build_aux_pair(&alg, &CommutingPair::new(&alg, u, v).unwrap()).unwrap();
        let r = classify_aux_structure(&alg, &b).unwrap();
        assert_eq!(r.dims, (2, 0, 6));
        assert!(r.max_residual() <= 1e-12, "{:?}", r.entries);
        let so5 = builtin_algebra("so5").unwrap();
        let (u, v) = commuting_pair(&so5).unwrap();
        let b = build_aux_pair(&so5, &CommutingPair::new(&so5, u, v).unwrap()).unwrap();
        let r = classify_aux_structure(&so5, &b).unwrap();
        assert_eq!(r.dims.0 + r.dims.1 + r.dims.2, 10);
        assert!(r.max_residual() <= 1e-12, "{:?}", r.entries);
    }

    #[test]
    fn obstruction_cases() {
        let alg = su2();
        let r = appendix_a_obstruction(&alg, &e(3, 0), &e(3, 1)).unwrap();
        assert_eq!(r.verdict, ObstructionVerdict::InvariantSu2);
        assert_eq!(r.x, e(3, 2));
        let su3 = builtin_algebra("su3").unwrap();
        let (u, v) = commuting_pair(&su3).unwrap();
        assert_eq!(appendix_a_obstruction(&su3, &u, &v).unwrap().verdict, ObstructionVerdict::Vacuous);
        let r = appendix_a_obstruction(&su3, &e(8, 0), &e(8, 1)).unwrap();
        assert_eq!(r.verdict, ObstructionVerdict::JacobiViolation);
    }

    fn antisym(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-1.0f64..1.0, n * n).prop_map(move |x| {
            let m = DMatrix::from_vec(n, n, x);
            &m - m.transpose()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn v_map_lies_in_nullspace(v3 in antisym(3), v8 in antisym(8), v6 in antisym(6)) {
            for (label, vm) in [("su2", v3), ("su3", v8), ("so4", v6)] {
                let alg = builtin_algebra(label).unwrap();
                prop_assert!(h_residual_lower(&alg, &v_map_lower(&alg, &vm)) <= 1e-10);
            }
        }

        #[test]
        fn pair_invariant_under_sl2(seed in 0u64..1000, a in 0.5f64..2.0, b in -1.0f64..1.0, d in -1.0f64..1.0) {
            let alg = builtin_algebra("su3").unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = CommutingPair::random(&alg, &mut rng).unwrap();
            // ac - bd = 1
            let c = (1.0 + b * d) / a;
            let u2 = &p.u * a + &p.v * b;
            let v2 = &p.v * c + &p.u * d;
            let q = CommutingPair { u2: alg.inner(&u2, &u2), v2: alg.inner(&v2, &v2), u: u2, v: v2 };
            let x = build_aux_pair(&alg, &p).unwrap();
            let y = build_aux_pair(&alg, &q).unwrap();
            prop_assert!(x.upper().max_abs_diff(y.upper()) <= 1e-12);
        }
    }
}
