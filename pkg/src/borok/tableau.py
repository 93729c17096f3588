"""Rosenbrock coefficient sets and their plain-text file format.

File format, one directive per line (``#`` starts a comment)::

    name   <identifier>          (optional)
    s      <int>
    order  <p> <p_hat>
    gamma_diag <real>
    alpha  i j <real>            (1-based, i > j)
    gamma  i j <real>            (1-based, i > j)
    b      b_1 ... b_s
    bhat   bh_1 ... bh_s         (optional)
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

SUM_B_TOL = 1e-12


@dataclass(frozen=True)
class MethodTableau:
    s: int
    alpha: np.ndarray
    gamma_lower: np.ndarray
    gamma_diag: float
    b: np.ndarray
    order_p: int
    b_hat: np.ndarray | None = None
    order_p_hat: int | None = None
    name: str = "tableau"

    def __post_init__(self):
        s = self.s
        if s < 1:
            raise ValidationError("stage count must be positive", "s")
        for fld in ("alpha", "gamma_lower"):
            arr = getattr(self, fld)
            if arr.shape != (s, s):
                raise ValidationError(f"expected shape {(s, s)}, got {arr.shape}", fld)
            if np.any(np.triu(arr)):
                raise ValidationError("must be strictly lower triangular", fld)
        if not self.gamma_diag > 0.0:
            raise ValidationError("must be positive", "gamma_diag")
        if self.b.shape != (s,):
            raise ValidationError(f"expected {s} weights", "b")
        if abs(self.b.sum() - 1.0) > SUM_B_TOL:
            raise ValidationError(f"weights sum to {self.b.sum()!r}, not 1", "b")
        if self.b_hat is not None:
            if self.b_hat.shape != (s,):
                raise ValidationError(f"expected {s} weights", "bhat")
            if abs(self.b_hat.sum() - 1.0) > SUM_B_TOL:
                raise ValidationError(f"weights sum to {self.b_hat.sum()!r}, not 1", "bhat")
            if self.order_p_hat is None:
                raise ValidationError("embedded weights given without an embedded order", "order")

    @property
    def gamma(self):
        """Full ``gamma`` matrix including the repeated diagonal."""
        return self.gamma_lower + self.gamma_diag * np.eye(self.s)

    @property
    def adaptive(self) -> bool:
        return self.b_hat is not None


def _num(tok, lineno):
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"line {lineno}: {tok!r} is not a number") from None


def _int(tok, lineno):
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"line {lineno}: {tok!r} is not an integer") from None


def load_tableau(text, default_name="tableau"):
    """Parse tableau file content into a validated :class:`MethodTableau`."""
    name = None
    s = gamma_diag = b = bhat = order = None
    entries = {"alpha": [], "gamma": []}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *args = line.split()
        if key == "name":
            if len(args) != 1:
                raise ParseError(f"line {lineno}: name takes one identifier")
            name = args[0]
        elif key == "s":
            if len(args) != 1:
                raise ParseError(f"line {lineno}: s takes one integer")
            s = _int(args[0], lineno)
        elif key == "order":
            if len(args) not in (1, 2):
                raise ParseError(f"line {lineno}: order takes one or two integers")
            order = [_int(a, lineno) for a in args]
        elif key == "gamma_diag":
            if len(args) != 1:
                raise ParseError(f"line {lineno}: gamma_diag takes one number")
            gamma_diag = _num(args[0], lineno)
        elif key in entries:
            if len(args) != 3:
                raise ParseError(f"line {lineno}: {key} takes 'i j value'")
            entries[key].append((_int(args[0], lineno), _int(args[1], lineno),
                                 _num(args[2], lineno), lineno))
        elif key == "b":
            b = np.array([_num(a, lineno) for a in args])
        elif key == "bhat":
            bhat = np.array([_num(a, lineno) for a in args])
        else:
            raise ParseError(f"line {lineno}: unknown directive {key!r}")
    for label, val in (("s", s), ("order", order), ("gamma_diag", gamma_diag), ("b", b)):
        if val is None:
            raise ParseError(f"missing directive {label!r}")
    if s < 1:
        raise ValidationError("stage count must be positive", "s")
    mats = {}
    for key, items in entries.items():
        mat = np.zeros((s, s))
        for i, j, val, lineno in items:
            where = f"{key}[{i},{j}]"
            if not (1 <= j < i <= s):
                raise ValidationError(f"index outside the strictly lower triangle (line {lineno})", where)
            mat[i - 1, j - 1] = val
        mats[key] = mat
    return MethodTableau(
        s=s, alpha=mats["alpha"], gamma_lower=mats["gamma"], gamma_diag=gamma_diag,
        b=b, b_hat=bhat, order_p=order[0],
        order_p_hat=order[1] if len(order) > 1 else None, name=name or default_name)


def read_tableau(path):
    """Load a tableau file; without a ``name`` directive the file stem is used."""
    path = Path(path)
    return load_tableau(path.read_text(), default_name=path.stem)


BUILTIN = {"ros2": "ros2.tab", "rok4k": "rok4k.tab"}


def builtin_tableau(name):
    """Load a shipped tableau by name (``ros2`` or ``rok4k``)."""
    try:
        fname = BUILTIN[name]
    except KeyError:
        raise ValidationError(f"unknown tableau {name!r}; choose from {sorted(BUILTIN)}", "name") from None
    text = resources.files("borok.data").joinpath(fname).read_text()
    return load_tableau(text, default_name=name)


def resolve_tableau(spec):
    """Accept a builtin name or a path to a tableau file."""
    if spec in BUILTIN:
        return builtin_tableau(spec)
    path = Path(spec)
    if not path.exists():
        raise ValidationError(f"no builtin or file named {spec!r}", "method")
    return read_tableau(path)
