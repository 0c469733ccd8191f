"""Finite symbol alphabets with priors.

A :class:`Constellation` is an immutable point set in the real or complex
field together with a probability for every point.  Points are kept in
lexicographic ``(Re, Im)`` order so that weight vectors, hard decisions and
serialized outputs are reproducible.
"""

from __future__ import annotations

import re
from functools import cached_property, lru_cache
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

_ROUND = 12  # decimals used when comparing point coordinates

STANDARD_NAMES = (
    "BPSK", "QPSK", "8-PSK", "16-PSK", "64-PSK", "256-PSK",
    "16-QAM", "64-QAM", "256-QAM", "4-PAM", "8-PAM", "16-PAM",
)


class ConstellationError(ValueError):
    """Invalid constellation construction or request."""


@dataclass(frozen=True, eq=False)
class Constellation:
    """Immutable alphabet with priors.

    Use :func:`make_standard` or :meth:`Constellation.from_points` rather than
    calling the constructor directly; those validate and sort the input.
    """

    name: str
    field: str
    points: np.ndarray
    priors: np.ndarray
    es: float
    separable: bool
    real_alphabet: Optional["Constellation"] = dc_field(default=None, repr=False)
    family: str = "custom"
    order: int = 0

    @classmethod
    def from_points(cls, points, priors=None, field: str = "complex", name: str = "custom",
                    family: str = "custom", prior_tol: float = 1e-12) -> "Constellation":
        if field not in ("real", "complex"):
            raise ConstellationError(f"field must be 'real' or 'complex', got {field!r}")
        pts = np.asarray(points, dtype=complex).ravel()
        if pts.size == 0:
            raise ConstellationError("constellation needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ConstellationError("constellation points must be finite")
        if priors is None:
            pr = np.full(pts.size, 1.0 / pts.size)
        else:
            pr = np.asarray(priors, dtype=float).ravel()
            if pr.shape != pts.shape:
                raise ConstellationError(
                    f"{pts.size} points but {pr.size} priors")
            if np.any(pr < 0) or not np.all(np.isfinite(pr)):
                raise ConstellationError("priors must be finite and nonnegative")
            total = pr.sum()
            if abs(total - 1.0) > prior_tol:
                raise ConstellationError(f"priors sum to {total!r}, not 1")
            pr = pr / total
        if field == "real" and np.any(pts.imag != 0):
            raise ConstellationError("real-field constellation has nonzero imaginary parts")

        key_re = np.round(pts.real, _ROUND)
        key_im = np.round(pts.imag, _ROUND)
        order = np.lexsort((key_im, key_re))
        pts, pr = pts[order], pr[order]
        if len(set(zip(key_re[order], key_im[order]))) != pts.size:
            raise ConstellationError("duplicate constellation points")
        if field == "real":
            pts = pts.real.astype(complex)

        es = float(np.sum(pr * np.abs(pts) ** 2))
        ra = _real_factor(pts, pr) if field == "complex" else None
        pts.setflags(write=False)
        pr.setflags(write=False)
        return cls(name=name, field=field, points=pts, priors=pr, es=es,
                   separable=ra is not None, real_alphabet=ra, family=family,
                   order=int(pts.size))

    @property
    def size(self) -> int:
        return int(self.points.size)

    @property
    def is_real(self) -> bool:
        return self.field == "real"

    @property
    def mean(self) -> complex:
        return complex(np.sum(self.priors * self.points))

    @property
    def variance(self) -> float:
        return float(self.es - abs(self.mean) ** 2)

    @property
    def uniform(self) -> bool:
        return bool(np.all(np.abs(self.priors - 1.0 / self.size) <= 1e-15))

    @cached_property
    def min_sq_distance(self) -> float:
        if self.size < 2:
            return 1.0
        d = np.abs(self.points[:, None] - self.points[None, :]) ** 2
        return float(np.min(d[~np.eye(self.size, dtype=bool)]))

    @cached_property
    def log_priors(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.priors)

    @cached_property
    def entropy(self) -> float:
        p = self.priors[self.priors > 0]
        return float(-np.sum(p * np.log2(p)))

    def scaled(self, s: float) -> "Constellation":
        """Same alphabet with every point multiplied by ``s``."""
        return Constellation.from_points(self.points * s, self.priors, self.field,
                                         name=f"{self.name}*{s:g}")

    def as_field(self, field: str) -> "Constellation":
        return Constellation.from_points(self.points, self.priors, field, name=self.name,
                                         family=self.family)

    def nearest_index(self, z) -> np.ndarray:
        z = np.asarray(z)
        return np.argmin(np.abs(z[..., None] - self.points) ** 2, axis=-1)

    def __repr__(self) -> str:
        return (f"Constellation(name={self.name!r}, field={self.field!r}, "
                f"size={self.size}, es={self.es:.6g}, separable={self.separable})")


def _real_factor(pts: np.ndarray, pr: np.ndarray) -> Optional[Constellation]:
    """Return the real-part alphabet if (pts, pr) is a product set, else None."""
    re_vals = np.unique(np.round(pts.real, _ROUND))
    im_vals = np.unique(np.round(pts.imag, _ROUND))
    if re_vals.size != im_vals.size or not np.allclose(re_vals, im_vals, atol=1e-12, rtol=0):
        return None
    if re_vals.size ** 2 != pts.size:
        return None
    idx_re = np.searchsorted(re_vals, np.round(pts.real, _ROUND))
    idx_im = np.searchsorted(im_vals, np.round(pts.imag, _ROUND))
    joint = np.zeros((re_vals.size, re_vals.size))
    joint[idx_re, idx_im] = pr
    p_re = joint.sum(axis=1)
    p_im = joint.sum(axis=0)
    if not np.allclose(p_re, p_im, atol=1e-12, rtol=0):
        return None
    if not np.allclose(joint, np.outer(p_re, p_im), atol=1e-12, rtol=0):
        return None
    # use the exact real parts of the stored points rather than rounded keys
    exact = np.empty(re_vals.size)
    exact[idx_re] = pts.real
    return Constellation.from_points(exact, p_re, "real", name="Re(.)")


def canonical_name(name: str) -> str:
    """Map user spellings such as ``qpsk``, ``16qam`` or ``8psk`` to a standard name."""
    key = re.sub(r"[\s_\-]", "", name.strip().upper())
    for std in STANDARD_NAMES:
        if key == std.replace("-", ""):
            return std
    raise ConstellationError(f"unknown constellation {name!r}")


def make_standard(name: str, field: Optional[str] = None) -> Constellation:
    """Build a unit-energy, zero-mean, uniform-prior standard constellation.

    Parameters
    ----------
    name : str
        One of :data:`STANDARD_NAMES` (case and dashes are ignored).
    field : {'real', 'complex'}, optional
        Defaults to 'real' for PAM and 'complex' otherwise.

    Instances are cached, so repeated calls return the same object.
    """
    std = canonical_name(name)
    if field is None:
        field = "real" if std.endswith("PAM") else "complex"
    return _make_standard(std, field)


@lru_cache(maxsize=None)
def _make_standard(std: str, field: str) -> Constellation:
    m = re.match(r"(\d+)-(PSK|QAM|PAM)", std)
    if std == "BPSK":
        family, order = "BPSK", 2
    elif std == "QPSK":
        family, order = "QAM", 4
    else:
        family, order = m.group(2), int(m.group(1))
    if field not in ("real", "complex"):
        raise ConstellationError(f"field must be 'real' or 'complex', got {field!r}")
    if family == "PAM" and field != "real":
        raise ConstellationError(f"{std} requires field='real'")
    if family in ("PSK", "QAM") and field != "complex":
        raise ConstellationError(f"{std} requires field='complex'")

    if family == "BPSK":
        pts = np.array([-1.0, 1.0], dtype=complex)
    elif family == "PAM":
        lv = np.arange(-(order - 1), order, 2, dtype=float)
        pts = (lv / np.sqrt(np.mean(lv ** 2))).astype(complex)
    elif family == "QAM":
        side = int(round(np.sqrt(order)))
        lv = np.arange(-(side - 1), side, 2, dtype=float)
        grid = (lv[:, None] + 1j * lv[None, :]).ravel()
        pts = grid / np.sqrt(np.mean(np.abs(grid) ** 2))
    else:
        k = np.arange(order)
        pts = np.exp(2j * np.pi * k / order)
    # exact zeros for the axis-aligned PSK points keep ordering and symmetry clean
    pts = np.where(np.abs(pts.real) < 1e-15, 1j * pts.imag, pts)
    pts = np.where(np.abs(pts.imag) < 1e-15, pts.real + 0j, pts)
    return Constellation.from_points(pts, None, field, name=std, family=family)


def moments(c: Constellation) -> tuple[complex, float, float]:
    """Return ``(mean, variance, energy)`` of the prior."""
    return c.mean, c.variance, c.es


def real_part_alphabet(c: Constellation) -> Constellation:
    """Real-field alphabet of the real parts with marginal priors.

    Raises
    ------
    ConstellationError
        If ``c`` is not a product of a real alphabet with itself.
    """
    if not c.separable or c.real_alphabet is None:
        raise ConstellationError(f"{c.name} is not separable")
    ra = c.real_alphabet
    return Constellation.from_points(ra.points, ra.priors, "real", name=f"Re({c.name})",
                                     family=_REAL_FAMILY.get(c.family, "custom"))


_REAL_FAMILY = {"QAM": "PAM"}


def load_constellation(path, field: str = "complex", name: Optional[str] = None) -> Constellation:
    """Read a constellation from a text file with one ``re im prior`` line per point.

    Blank lines and lines starting with ``#`` are skipped.  Priors must sum to
    one within 1e-6 and are then renormalized exactly.
    """
    path = Path(path)
    pts, prs = [], []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        parts = s.split()
        if len(parts) != 3:
            raise ConstellationError(f"{path}:{lineno}: expected 're im prior', got {line!r}")
        try:
            re_, im_, p_ = (float(v) for v in parts)
        except ValueError:
            raise ConstellationError(f"{path}:{lineno}: non-numeric entry in {line!r}") from None
        pts.append(complex(re_, im_))
        prs.append(p_)
    if not pts:
        raise ConstellationError(f"{path}: no points")
    try:
        return Constellation.from_points(pts, prs, field, name=name or path.stem, prior_tol=1e-6)
    except ConstellationError as exc:
        raise ConstellationError(f"{path}: {exc}") from None


def resolve(spec: str, field: Optional[str] = None) -> Constellation:
    """Standard name or path to a constellation file."""
    p = Path(spec)
    if p.suffix or p.exists():
        if not p.exists():
            raise ConstellationError(f"constellation file {spec!r} not found")
        return load_constellation(p, field or "complex")
    return make_standard(spec, field)


def product_alphabet(ra: Constellation, name: str = "product") -> Constellation:
    """Complex constellation formed as the product of a real alphabet with itself."""
    pts = (ra.points.real[:, None] + 1j * ra.points.real[None, :]).ravel()
    pr = np.outer(ra.priors, ra.priors).ravel()
    return Constellation.from_points(pts, pr, "complex", name=name)


def rotation_order(c: Constellation) -> int:
    """Largest n such that the alphabet with priors is invariant under rotation by 2*pi/n.

    Returns 1 when there is no nontrivial rotational symmetry.  Only
    complex-field alphabets are considered.
    """
    if c.is_real or c.size < 2:
        return 1
    for n in range(c.size, 1, -1):
        if c.size % n:
            continue
        rot = c.points * np.exp(2j * np.pi / n)
        idx = c.nearest_index(rot)
        if np.allclose(c.points[idx], rot, atol=1e-12) and np.allclose(c.priors[idx], c.priors,
                                                                       atol=1e-15):
            if len(set(idx.tolist())) == c.size:
                return n
    return 1


__all__ = [
    "Constellation", "ConstellationError", "STANDARD_NAMES", "canonical_name",
    "make_standard", "moments", "real_part_alphabet", "load_constellation", "resolve",
    "product_alphabet", "rotation_order",
]
