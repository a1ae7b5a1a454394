"""Truncated Fourier algebra on the n-torus.

Scalar series are finitely supported coefficient maps k -> c over Z^n,
identified with trigonometric polynomials sum_k c_k e^{i<k,x>}.  On top of
them sit n-component map fields (vector fields and displacement fields of
near-identity torus maps), jacobian fields, and the transform object used by
the conjugacy iteration.  Mode order |k| is the l1 norm throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.fft import fftn, ifftn
from scipy.fft import next_fast_len

from .errors import (
    ConfigurationError,
    NonInvertibleError,
    PreconditionError,
    StructuralError,
)

#: coefficients below this fraction of a series' peak are dropped
PRUNE_REL = 1e-16

_DIRECT_COST_LIMIT = 4_000_000   # nnz * point budget per evaluation chunk
_AUTO_DIRECT_LIMIT = 250_000     # below this nnz * grid cost, direct sampling wins
_TAYLOR_Q_LIMIT = 3.0            # beyond this the Taylor loop loses digits to cancellation


def _canonical(n, idx, val):
    """Sort rows lexicographically and merge duplicate indices."""
    idx = np.asarray(idx, dtype=np.int64).reshape(-1, n)
    val = np.asarray(val, dtype=np.complex128).reshape(-1)
    if idx.shape[0] != val.shape[0]:
        raise StructuralError("index/value length mismatch")
    if idx.shape[0] == 0:
        return idx, val
    order = np.lexsort(idx.T[::-1])
    idx = idx[order]
    val = val[order]
    if idx.shape[0] > 1:
        new = np.empty(idx.shape[0], dtype=bool)
        new[0] = True
        new[1:] = np.any(idx[1:] != idx[:-1], axis=1)
        if not new.all():
            starts = np.flatnonzero(new)
            val = np.add.reduceat(val, starts)
            idx = idx[new]
    return idx, val


class FourierSeries:
    """Finitely supported Fourier coefficients on Z^n, immutable after construction."""

    __slots__ = ("n", "idx", "val")

    def __init__(self, n, idx=None, val=None):
        n = int(n)
        if n < 1:
            raise StructuralError("dimension must be positive")
        object.__setattr__(self, "n", n)
        if idx is None:
            idx = np.empty((0, n), dtype=np.int64)
            val = np.empty(0, dtype=np.complex128)
        else:
            idx, val = _canonical(n, idx, val)
        object.__setattr__(self, "idx", idx)
        object.__setattr__(self, "val", val)

    def __setattr__(self, name, value):
        raise AttributeError("FourierSeries is immutable")

    # -- constructors -----------------------------------------------------

    @classmethod
    def zero(cls, n):
        return cls(n)

    @classmethod
    def constant(cls, n, c):
        if c == 0:
            return cls(n)
        return cls(n, np.zeros((1, n), dtype=np.int64), [c])

    @classmethod
    def basis(cls, k, c=1.0):
        """The single character c * e^{i<k,x>}."""
        k = np.asarray(k, dtype=np.int64).reshape(1, -1)
        return cls(k.shape[1], k, [c])

    @classmethod
    def from_terms(cls, n, terms):
        """Build from a {multi-index tuple: coefficient} mapping."""
        if not terms:
            return cls(n)
        idx = np.array(list(terms.keys()), dtype=np.int64)
        val = np.array(list(terms.values()), dtype=np.complex128)
        return cls(n, idx, val)

    # -- basic queries -----------------------------------------------------

    @property
    def m(self):
        return self.val.shape[0]

    @property
    def is_zero(self):
        return self.m == 0

    def l1(self):
        """Per-coefficient l1 order |k|."""
        return np.abs(self.idx).sum(axis=1) if self.m else np.zeros(0, dtype=np.int64)

    @property
    def order(self):
        """Largest |k| (l1) carrying a stored coefficient; 0 for the zero series."""
        return int(self.l1().max()) if self.m else 0

    @property
    def axis_orders(self):
        """Per-axis max |k_a|; zeros for the zero series."""
        if self.m == 0:
            return np.zeros(self.n, dtype=np.int64)
        return np.abs(self.idx).max(axis=0)

    def get(self, k):
        k = np.asarray(k, dtype=np.int64)
        if self.m == 0:
            return 0j
        hit = np.flatnonzero((self.idx == k).all(axis=1))
        return complex(self.val[hit[0]]) if hit.size else 0j

    def mean(self):
        """The k = 0 coefficient."""
        return self.get(np.zeros(self.n, dtype=np.int64))

    def terms(self):
        for row, c in zip(self.idx, self.val):
            yield tuple(int(x) for x in row), complex(c)

    def abs_sum(self):
        """Plain l1 coefficient mass (the s = 0 exponential norm)."""
        return float(np.abs(self.val).sum()) if self.m else 0.0

    def __repr__(self):
        return f"FourierSeries(n={self.n}, modes={self.m}, order={self.order})"

    # -- algebra -----------------------------------------------------------

    def _check_dim(self, other):
        if self.n != other.n:
            raise StructuralError(f"dimension mismatch: {self.n} vs {other.n}")

    def __add__(self, other):
        self._check_dim(other)
        idx = np.concatenate([self.idx, other.idx])
        val = np.concatenate([self.val, other.val])
        return FourierSeries(self.n, idx, val).prune(0.0)

    def __sub__(self, other):
        return self + (other * -1.0)

    def __neg__(self):
        return self * -1.0

    def __mul__(self, scalar):
        if self.m == 0 or scalar == 0:
            return FourierSeries(self.n)
        return FourierSeries(self.n, self.idx, self.val * scalar)

    __rmul__ = __mul__

    def prune(self, rel=PRUNE_REL):
        """Drop coefficients with |c| <= rel * max|c| (and exact zeros)."""
        if self.m == 0:
            return self
        mags = np.abs(self.val)
        thresh = rel * mags.max()
        keep = mags > thresh if thresh > 0 else mags > 0
        if keep.all():
            return self
        return FourierSeries(self.n, self.idx[keep], self.val[keep])

    def pruned_mass(self, rel=PRUNE_REL):
        """l1 mass that prune(rel) would discard."""
        if self.m == 0:
            return 0.0
        mags = np.abs(self.val)
        thresh = rel * mags.max()
        drop = mags <= thresh if thresh > 0 else mags <= 0
        return float(mags[drop].sum())

    def conj_reflect(self):
        """The series of conj(f): coefficients conj(c_{-k})."""
        return FourierSeries(self.n, -self.idx, np.conj(self.val))

    def symmetrized(self):
        """Average with the conjugate reflection.

        Restores exact conjugate symmetry c_{-k} = conj(c_k) for series that
        are real by construction but picked up asymmetric rounding dust in
        grid transforms.
        """
        return (self + self.conj_reflect()) * 0.5

    def is_real(self, tol=1e-9):
        """True when f_{-k} = conj(f_k) holds within a relative tolerance."""
        diff = self - self.conj_reflect()
        if diff.m == 0:
            return True
        scale = max(np.abs(self.val).max(), 1e-300) if self.m else 1.0
        return float(np.abs(diff.val).max()) <= tol * scale

    def max_diff(self, other):
        """Sup over coefficients of |f_k - g_k| (exact coefficient comparison)."""
        d = self - other
        return float(np.abs(d.val).max()) if d.m else 0.0

    # -- evaluation --------------------------------------------------------

    def evaluate(self, points):
        """Evaluate at real points of shape (..., n) by direct summation."""
        pts = np.asarray(points, dtype=np.float64)
        squeeze = pts.ndim == 1
        flat = pts.reshape(-1, self.n)
        if self.m == 0:
            out = np.zeros(flat.shape[0], dtype=np.complex128)
        else:
            out = np.empty(flat.shape[0], dtype=np.complex128)
            chunk = max(1, _DIRECT_COST_LIMIT // max(self.m, 1))
            kT = self.idx.T.astype(np.float64)
            for lo in range(0, flat.shape[0], chunk):
                hi = min(lo + chunk, flat.shape[0])
                phase = flat[lo:hi] @ kT
                out[lo:hi] = np.exp(1j * phase) @ self.val
        out = out.reshape(pts.shape[:-1])
        return complex(out) if squeeze else out

    def _scatter(self, shape):
        box = np.zeros(shape, dtype=np.complex128)
        if self.m:
            pos = tuple(np.mod(self.idx[:, a], shape[a]) for a in range(self.n))
            np.add.at(box, pos, self.val)
        return box

    def sample_grid(self, shape):
        """Values on the uniform grid x_j = 2*pi*j/N (exact synthesis at grid points)."""
        shape = tuple(int(s) for s in shape)
        box = self._scatter(shape)
        return ifftn(box) * math.prod(shape)


def grid_points(shape):
    """The uniform grid (2*pi*j/N per axis) as an array of shape (*shape, n)."""
    axes = [2.0 * np.pi * np.arange(N) / N for N in shape]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1)


def _gather_box(box, n, band, l1_cap, prune_rel):
    """Collect modes |k_a| <= band[a] (and |k| <= l1_cap) from an FFT coefficient box."""
    shape = box.shape
    ranges = []
    for a in range(n):
        if 2 * band[a] + 1 > shape[a]:
            raise ConfigurationError("grid too small for requested output order")
        ranges.append(np.arange(-band[a], band[a] + 1, dtype=np.int64))
    mesh = np.meshgrid(*ranges, indexing="ij")
    ks = np.stack([m.ravel() for m in mesh], axis=1)
    pos = tuple(np.mod(ks[:, a], shape[a]) for a in range(n))
    vals = box[pos]
    keep = np.abs(vals) > 0
    if l1_cap is not None:
        keep &= np.abs(ks).sum(axis=1) <= l1_cap
    beyond = 0.0
    if l1_cap is not None:
        out_of_cap = (np.abs(ks).sum(axis=1) > l1_cap) & (np.abs(vals) > 0)
        beyond = float(np.abs(vals[out_of_cap]).sum())
    series = FourierSeries(n, ks[keep], vals[keep]).prune(prune_rel)
    return series, beyond


# -- products ---------------------------------------------------------------


def multiply(f, g, k_cap=None, prune_rel=PRUNE_REL):
    """Convolution product of two series, truncated to |k| <= k_cap.

    Exact (to roundoff) linear convolution: direct pairwise accumulation for
    small supports, zero-padded FFT convolution on the coefficient bounding
    box otherwise.
    """
    f._check_dim(g)
    n = f.n
    if f.m == 0 or g.m == 0:
        return FourierSeries(n)
    cost = f.m * g.m
    # prune_rel = 0 asks for the exact linear convolution; the FFT path would
    # either fill the box with rounding dust or need a dust floor that drops
    # true small coefficients, so stretch the direct path much further there
    if cost <= 1 << 16 or (prune_rel == 0.0 and cost <= _DIRECT_COST_LIMIT):
        pair_idx = (f.idx[:, None, :] + g.idx[None, :, :]).reshape(-1, n)
        pair_val = (f.val[:, None] * g.val[None, :]).ravel()
        out = FourierSeries(n, pair_idx, pair_val)
    else:
        bf = f.axis_orders
        bg = g.axis_orders
        width = 2 * (bf + bg) + 1
        shape = tuple(next_fast_len(int(w)) for w in width)
        boxes = []
        for series, off in ((f, bf), (g, bg)):
            box = np.zeros(shape, dtype=np.complex128)
            # shift each factor by its own bandwidth: positions stay in
            # [0, 2*off] and the linear convolution spans [0, 2*(bf+bg)],
            # which fits the box without wraparound
            pos = tuple(series.idx[:, a] + off[a] for a in range(n))
            np.add.at(box, pos, series.val)
            boxes.append(box)
        conv = ifftn(fftn(boxes[0]) * fftn(boxes[1]))
        mags = np.abs(conv)
        # FFT rounding fills the box with dust ~ eps*|f|_2*|g|_2; keep the
        # gather threshold above it even when the caller asks for no pruning
        dust = 32.0 * np.finfo(float).eps * float(
            np.sqrt((np.abs(f.val) ** 2).sum() * (np.abs(g.val) ** 2).sum())
        )
        thresh = max(prune_rel * mags.max(), dust)
        hits = np.argwhere(mags > thresh)
        ks = hits - (bf + bg)[None, :]
        vals = conv[tuple(hits.T)]
        out = FourierSeries(n, ks, vals)
    if k_cap is not None:
        out = project(out, k_cap, "low")
    return out.prune(prune_rel)


def power(f, exponent, k_cap=None, prune_rel=PRUNE_REL):
    """f**m by repeated convolution."""
    out = FourierSeries.constant(f.n, 1.0)
    for _ in range(int(exponent)):
        out = multiply(out, f, k_cap=k_cap, prune_rel=prune_rel)
    return out


# -- derivatives and projections --------------------------------------------


def partial_derivative(f, axis):
    """d/dx_axis: coefficient k maps to i * k_axis * c_k."""
    if f.m == 0:
        return FourierSeries(f.n)
    val = f.val * (1j * f.idx[:, axis].astype(np.float64))
    return FourierSeries(f.n, f.idx, val).prune(0.0)


def directional_derivative(f, omega):
    """Derivative along the constant flow: coefficient k maps to i*<k, omega>*c_k."""
    if f.m == 0:
        return FourierSeries(f.n)
    from .numutil import lattice_dot

    val = f.val * (1j * lattice_dot(f.idx, omega))
    return FourierSeries(f.n, f.idx, val).prune(0.0)


_PARTS = ("low", "mean", "oscillatory", "tail")


def project(f, K, part="low"):
    """Spectral projection: 'low' keeps |k| <= K, 'mean' the constant term,
    'oscillatory' 0 < |k| <= K, 'tail' |k| > K.  low + tail reassembles f exactly."""
    if part not in _PARTS:
        raise ConfigurationError(f"unknown projection part {part!r}")
    if K < 0:
        raise PreconditionError("projection order must be >= 0")
    if f.m == 0:
        return f
    ell = f.l1()
    if part == "low":
        keep = ell <= K
    elif part == "mean":
        keep = ell == 0
    elif part == "oscillatory":
        keep = (ell > 0) & (ell <= K)
    else:
        keep = ell > K
    return FourierSeries(f.n, f.idx[keep], f.val[keep])


def _exp_norm(f, s):
    """Internal sum_k |c_k| e^{s|k|}; the norms module exposes the guarded version."""
    if f.m == 0:
        return 0.0
    return float((np.abs(f.val) * np.exp(s * f.l1())).sum())


# -- composition -------------------------------------------------------------


@dataclass(frozen=True)
class ComposeReport:
    """Accounting for one composition.

    ``beyond_cap`` is the spectral mass the l1 output cap cut away (a real
    truncation loss when the cap is a working limit, an intentional
    projection when the caller only wanted the low modes); ``alias`` bounds
    the error inside the retained modes (Taylor remainder, guard-band
    aliasing, pruning).
    """

    method: str
    grid: tuple
    terms: int
    beyond_cap: float
    alias: float

    @property
    def discarded(self):
        return self.beyond_cap + self.alias


def _displacement_components(displacement, n):
    if isinstance(displacement, TorusMapField):
        if displacement.n != n:
            raise StructuralError("displacement dimension mismatch")
        return displacement.components
    raise StructuralError("displacement must be a TorusMapField")


def compose(
    f,
    displacement,
    out_cap=None,
    grid_factor=2,
    tol=1e-16,
    method="auto",
    grid_shape=None,
    prune_rel=PRUNE_REL,
    with_report=False,
):
    """Coefficients of x -> f(x + displacement(x)) for a real displacement field.

    Samples the composition on a uniform grid and transforms back; the grid
    resolves every retained mode plus a guard band of one output bandwidth,
    so aliasing into retained modes is bounded by the spectral mass beyond
    the guard, which is reported as ``discarded``.  For small displacements a
    grid-side Taylor expansion of f(x + d) replaces pointwise evaluation.
    """
    if grid_factor < 2:
        raise ConfigurationError("grid_factor must be >= 2")
    comps = _displacement_components(displacement, f.n)
    for c in comps:
        if not c.is_real(1e-8):
            raise PreconditionError("displacement field must be real-valued")
    n = f.n
    if f.m == 0:
        result = FourierSeries(n)
        rep = ComposeReport("trivial", (), 0, 0.0, 0.0)
        return (result, rep) if with_report else result
    if all(c.m == 0 for c in comps):
        result = f if out_cap is None else project(f, out_cap, "low")
        rep = ComposeReport("trivial", (), 0, 0.0, 0.0)
        return (result, rep) if with_report else result

    kf = f.axis_orders
    kphi = np.maximum.reduce([c.axis_orders for c in comps])
    fl1 = f.abs_sum()
    # q bounds the derivative ladder: sum_j (max |k_j| in f) * l1-mass of component j
    q = float(sum(int(kf[j]) * comps[j].abs_sum() for j in range(n)))
    # smallest M with q^(M+1)/(M+1)! * e^q <= tol (Taylor remainder of f(x + d))
    terms = 1
    if q > 0:
        while q ** (terms + 1) / math.factorial(terms + 1) * math.exp(q) > tol and terms < 120:
            terms += 1

    extent = kf + terms * kphi
    if out_cap is None:
        band = extent.copy()
    else:
        band = np.minimum(extent, out_cap)
    if grid_shape is not None:
        shape = tuple(int(s) for s in grid_shape)
        for a in range(n):
            if shape[a] < 2 * band[a] + 1:
                raise ConfigurationError("grid too small for requested output order")
    else:
        shape = tuple(
            next_fast_len(int(max(grid_factor * (2 * band[a] + 1), band[a] + extent[a] + 1)))
            for a in range(n)
        )

    use_direct = method == "direct" or (
        method == "auto" and (q > _TAYLOR_Q_LIMIT or terms > 60 or f.m * math.prod(shape) <= _AUTO_DIRECT_LIMIT)
    )

    phi_vals = [np.real(c.sample_grid(shape)) for c in comps]

    if use_direct:
        pts = grid_points(shape)
        for j in range(n):
            pts[..., j] += phi_vals[j]
        vals = f.evaluate(pts)
        used_terms = 0
        remainder = 0.0
        method_used = "direct"
    else:
        vals = np.zeros(shape, dtype=np.complex128)
        base = f._scatter(shape)
        freqs = [np.fft.fftfreq(shape[a], 1.0 / shape[a]).astype(np.float64) for a in range(n)]
        mus = [float(np.abs(pv).max()) if pv.size else 0.0 for pv in phi_vals]
        qax = [float(kf[j]) * mus[j] for j in range(n)]
        # a skipped term at axis a can still gain up to e^{q} from deeper axes
        tol_axis = [tol * max(fl1, 1e-300) / math.exp(sum(qax[a + 1 :]) + 1e-12) for a in range(n)]
        size = math.prod(shape)
        skipped = 0.0
        used_terms = 0

        def term_loop(axis, box, pow_grid, degree, bound):
            nonlocal skipped, used_terms, vals
            if axis == n:
                vals += (ifftn(box) * size) * pow_grid
                used_terms = max(used_terms, degree)
                return
            sub_box = box
            sub_pow = pow_grid
            sub_bound = bound
            shape_axis = [1] * n
            shape_axis[axis] = shape[axis]
            scale = (1j * freqs[axis]).reshape(shape_axis)
            for p in range(terms - degree + 1):
                if p > 0:
                    sub_box = sub_box * scale
                    sub_pow = sub_pow * (phi_vals[axis] / p)
                    sub_bound = sub_bound * qax[axis] / p
                if p > 0 and sub_bound <= tol_axis[axis]:
                    skipped += sub_bound
                    if qax[axis] < p:
                        # bounds now decrease monotonically; the tail is dominated
                        skipped += sub_bound
                        break
                    continue
                term_loop(axis + 1, sub_box, sub_pow, degree + p, sub_bound)

        term_loop(0, base, np.ones(shape), 0, fl1)
        remainder = fl1 * q ** (terms + 1) / math.factorial(terms + 1) * math.exp(q) + skipped
        method_used = "taylor"

    coeff_box = fftn(vals) / math.prod(shape)
    series, beyond_cap = _gather_box(coeff_box, n, band, out_cap, prune_rel)
    # error inside the retained modes: Taylor remainder, guard-band aliasing
    # (bounded by the same tolerance), and pruning
    alias = remainder + tol * fl1 + series.pruned_mass(prune_rel)
    rep = ComposeReport(method_used, shape, used_terms, beyond_cap, alias)
    series = series.prune(prune_rel)
    return (series, rep) if with_report else series


# -- map fields ---------------------------------------------------------------


class TorusMapField:
    """n scalar series over T^n, one per coordinate (vector field or displacement)."""

    __slots__ = ("n", "components")

    def __init__(self, components):
        components = tuple(components)
        if not components:
            raise StructuralError("field needs at least one component")
        n = components[0].n
        if len(components) != n or any(c.n != n for c in components):
            raise StructuralError("field needs n components of dimension n")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "components", components)

    def __setattr__(self, name, value):
        raise AttributeError("TorusMapField is immutable")

    @classmethod
    def zero(cls, n):
        return cls([FourierSeries(n) for _ in range(n)])

    @classmethod
    def constant(cls, vec):
        vec = np.asarray(vec)
        n = vec.shape[0]
        return cls([FourierSeries.constant(n, complex(v)) for v in vec])

    def __add__(self, other):
        return TorusMapField([a + b for a, b in zip(self.components, other.components)])

    def __sub__(self, other):
        return TorusMapField([a - b for a, b in zip(self.components, other.components)])

    def __mul__(self, scalar):
        return TorusMapField([c * scalar for c in self.components])

    __rmul__ = __mul__

    @property
    def is_zero(self):
        return all(c.is_zero for c in self.components)

    @property
    def order(self):
        return max(c.order for c in self.components)

    def mean(self):
        return np.array([c.mean() for c in self.components])

    def is_real(self, tol=1e-9):
        return all(c.is_real(tol) for c in self.components)

    def prune(self, rel=PRUNE_REL):
        return TorusMapField([c.prune(rel) for c in self.components])

    def symmetrized(self):
        return TorusMapField([c.symmetrized() for c in self.components])

    def project(self, K, part="low"):
        return TorusMapField([project(c, K, part) for c in self.components])

    def evaluate(self, points):
        vals = [c.evaluate(points) for c in self.components]
        return np.stack(np.broadcast_arrays(*vals), axis=-1)

    def sample_grid(self, shape):
        return np.stack([c.sample_grid(shape) for c in self.components], axis=-1)

    def jacobian(self):
        entries = tuple(
            tuple(partial_derivative(ci, j) for j in range(self.n)) for ci in self.components
        )
        return JacobianField(entries)

    def compose_with(self, displacement, with_report=False, **kw):
        out = []
        rep = None
        for c in self.components:
            series, r = compose(c, displacement, with_report=True, **kw)
            out.append(series)
            if rep is None:
                rep = r
            else:
                rep = ComposeReport(
                    r.method, r.grid, r.terms, rep.beyond_cap + r.beyond_cap, rep.alias + r.alias
                )
        field = TorusMapField(out)
        return (field, rep) if with_report else field

    def max_diff(self, other):
        return max(a.max_diff(b) for a, b in zip(self.components, other.components))


class JacobianField:
    """n x n matrix of scalar series; entry (i, j) is d(component_i)/dx_j."""

    __slots__ = ("n", "entries")

    def __init__(self, entries):
        entries = tuple(tuple(row) for row in entries)
        n = len(entries)
        if any(len(row) != n for row in entries):
            raise StructuralError("jacobian must be square")
        dims = {e.n for row in entries for e in row}
        if dims != {n}:
            raise StructuralError("jacobian entry dimension mismatch")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "entries", entries)

    def __setattr__(self, name, value):
        raise AttributeError("JacobianField is immutable")

    @classmethod
    def identity(cls, n):
        rows = []
        for i in range(n):
            rows.append(
                tuple(
                    FourierSeries.constant(n, 1.0) if i == j else FourierSeries(n)
                    for j in range(n)
                )
            )
        return cls(rows)

    def __add__(self, other):
        return JacobianField(
            tuple(tuple(a + b for a, b in zip(r1, r2)) for r1, r2 in zip(self.entries, other.entries))
        )

    def __sub__(self, other):
        return JacobianField(
            tuple(tuple(a - b for a, b in zip(r1, r2)) for r1, r2 in zip(self.entries, other.entries))
        )

    def __mul__(self, scalar):
        return JacobianField(tuple(tuple(e * scalar for e in row) for row in self.entries))

    __rmul__ = __mul__

    def matmul(self, other, k_cap=None, prune_rel=PRUNE_REL):
        n = self.n
        rows = []
        for i in range(n):
            row = []
            for j in range(n):
                acc = FourierSeries(n)
                for l in range(n):
                    acc = acc + multiply(self.entries[i][l], other.entries[l][j], k_cap, prune_rel)
                row.append(acc)
            rows.append(tuple(row))
        return JacobianField(rows)

    def matvec_const(self, vec):
        vec = np.asarray(vec)
        comps = []
        for i in range(self.n):
            acc = FourierSeries(self.n)
            for j in range(self.n):
                acc = acc + self.entries[i][j] * complex(vec[j])
            comps.append(acc)
        return TorusMapField(comps)

    def matvec(self, field, k_cap=None, prune_rel=PRUNE_REL):
        comps = []
        for i in range(self.n):
            acc = FourierSeries(self.n)
            for j in range(self.n):
                acc = acc + multiply(self.entries[i][j], field.components[j], k_cap, prune_rel)
            comps.append(acc)
        return TorusMapField(comps)

    def sample_grid(self, shape):
        n = self.n
        out = np.empty(tuple(shape) + (n, n), dtype=np.complex128)
        for i in range(n):
            for j in range(n):
                out[..., i, j] = self.entries[i][j].sample_grid(shape)
        return out

    def max_entry_mass(self):
        return max(e.abs_sum() for row in self.entries for e in row)


def invert_jacobian(jac, s, tol=1e-15, k_cap=None, prune_rel=0.0):
    """Pointwise inverse of a near-identity jacobian via the Neumann series.

    Requires mu = |jac - Id|_s < 1 in the induced exponential norm; the series
    sum_m (Id - jac)^m is truncated once a term's norm drops below ``tol``,
    giving |result|_s <= 1/(1 - mu).  Internal products keep everything above
    machine dust by default: relative pruning would be amplified by e^{s|k|}
    in downstream weighted norms.
    """
    n = jac.n
    ident = JacobianField.identity(n)
    x = ident - jac
    mu = _jac_exp_norm(x, s)
    if not mu < 1.0:
        raise NonInvertibleError(f"jacobian defect norm {mu:.6g} >= 1 at width s={s:.6g}")
    out = ident
    term = x
    if mu > 0:
        max_terms = max(24, int(math.log(max(tol, 1e-300)) / math.log(mu)) + 8) if mu < 1 else 24
    else:
        max_terms = 1
    for _ in range(min(max_terms, 400)):
        tnorm = _jac_exp_norm(term, s)
        out = out + term
        if tnorm < tol:
            break
        term = term.matmul(x, k_cap, prune_rel)
    return out


def _jac_exp_norm(jac, s):
    """Induced norm: max over rows of the sum over columns of |entry|_s."""
    best = 0.0
    for row in jac.entries:
        best = max(best, sum(_exp_norm(e, s) for e in row))
    return best


class TorusTransform:
    """Near-identity torus map x -> x + displacement(x) with cached jacobian data."""

    __slots__ = ("n", "displacement", "_cache")

    def __init__(self, displacement):
        object.__setattr__(self, "n", displacement.n)
        object.__setattr__(self, "displacement", displacement)
        object.__setattr__(self, "_cache", {})

    def __setattr__(self, name, value):
        raise AttributeError("TorusTransform is immutable")

    @classmethod
    def identity(cls, n):
        return cls(TorusMapField.zero(n))

    @property
    def is_identity(self):
        return self.displacement.is_zero

    def jacobian(self):
        if "jac" not in self._cache:
            self._cache["jac"] = JacobianField.identity(self.n) + self.displacement.jacobian()
        return self._cache["jac"]

    def jacobian_inverse(self, s, tol=1e-15, k_cap=None):
        key = ("inv", s, tol, k_cap)
        if key not in self._cache:
            self._cache[key] = invert_jacobian(self.jacobian(), s, tol, k_cap)
        return self._cache[key]

    def defect(self, s, tol=1e-15, k_cap=None):
        """Theta = (D Psi)^{-1} (D Psi - Id); zero for the identity transform."""
        key = ("defect", s, tol, k_cap)
        if key not in self._cache:
            dinv = self.jacobian_inverse(s, tol, k_cap)
            dhat = self.displacement.jacobian()
            self._cache[key] = dinv.matmul(dhat, k_cap)
        return self._cache[key]

    def map_points(self, points):
        pts = np.asarray(points, dtype=np.float64)
        if self.is_identity:
            return pts.copy()
        return pts + np.real(self.displacement.evaluate(pts))

    def compose_inner(self, inner, with_report=False, **kw):
        """The transform x -> self(inner(x)); displacement composes as
        self_hat o inner + inner_hat."""
        inner_disp = inner.displacement if isinstance(inner, TorusTransform) else inner
        if self.is_identity:
            out = TorusTransform(inner_disp)
            rep = ComposeReport("trivial", (), 0, 0.0, 0.0)
            return (out, rep) if with_report else out
        moved, rep = self.displacement.compose_with(inner_disp, with_report=True, **kw)
        out = TorusTransform(moved + inner_disp)
        return (out, rep) if with_report else out


def pullback_constant(vec, transform, s, tol=1e-15, k_cap=None):
    """Pullback of a constant field: Z - Theta Z = (D Psi)^{-1} Z."""
    vec = np.asarray(vec)
    if transform.is_identity:
        return TorusMapField.constant(vec)
    theta = transform.defect(s, tol, k_cap)
    return TorusMapField.constant(vec) - theta.matvec_const(vec)


def pullback(field, transform, s, out_cap=None, tol=1e-15, k_cap=None, with_report=False, **kw):
    """Pullback of a general field: (D Psi)^{-1} (X o Psi) evaluated at the source point."""
    if transform.is_identity:
        out = field if out_cap is None else field.project(out_cap, "low")
        rep = ComposeReport("trivial", (), 0, 0.0, 0.0)
        return (out, rep) if with_report else out
    moved, rep = field.compose_with(transform.displacement, out_cap=out_cap, with_report=True, **kw)
    dinv = transform.jacobian_inverse(s, tol, k_cap)
    out = dinv.matvec(moved, k_cap=out_cap if k_cap is None else k_cap)
    return (out, rep) if with_report else out


# -- JSON interchange ---------------------------------------------------------


def series_to_dict(f):
    return {
        "schema_version": 1,
        "n": f.n,
        "coeffs": [
            {"k": [int(x) for x in k], "re": float(c.real), "im": float(c.imag)}
            for k, c in f.terms()
        ],
    }


def series_from_dict(d):
    n = int(d["n"])
    coeffs = d.get("coeffs", [])
    seen = set()
    idx = []
    val = []
    for entry in coeffs:
        k = tuple(int(x) for x in entry["k"])
        if len(k) != n:
            raise StructuralError(f"multi-index {k} has wrong dimension (expected {n})")
        if k in seen:
            raise StructuralError(f"duplicate multi-index {k}")
        seen.add(k)
        idx.append(k)
        val.append(complex(float(entry["re"]), float(entry.get("im", 0.0))))
    if not idx:
        return FourierSeries(n)
    return FourierSeries(n, np.array(idx, dtype=np.int64), np.array(val))


def field_to_dict(field):
    return {
        "schema_version": 1,
        "n": field.n,
        "components": [series_to_dict(c) for c in field.components],
    }


def field_from_dict(d):
    n = int(d["n"])
    comps = [series_from_dict(c) for c in d["components"]]
    if len(comps) != n:
        raise StructuralError("field component count must equal dimension")
    return TorusMapField(comps)
