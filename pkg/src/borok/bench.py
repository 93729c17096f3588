"""Experiment harness: configuration files, reference solutions and CSV tables.

Configuration files are INI-style (``[section]`` headers, ``key = value``)::

    [problem]
    name = swe              # swe | gray-scott | linear-test
    grid_n = 32
    t_final = 0.1
    seed = 0                # gray-scott perturbation / linear-test matrix

    [method]
    tableau = rok4k         # built-in name or path to a tableau file

    [configurations]
    labels = M=4, LM=4, LR=1e-8 ext, LR=tol
    m_max = 100

    [sweep]
    tolerances = 1e-4, 1e-6         # work-precision / integrate
    stepsizes = 0.005, 0.0025       # convergence (or h0 + halvings)

    [reference]
    path = swe32.ref
    h_ref = 1e-5

Configuration labels: an ``L`` prefix selects the biorthogonal (BOROK)
integrator, no prefix selects Arnoldi (ROK). ``M=<int>`` is a fixed basis
size, ``R=<real>`` a first-stage residual tolerance and ``R=tol`` ties the
residual tolerance to the run tolerance. A trailing ``ext`` enables subspace
extension.
"""
from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fnmatch import fnmatchcase
from pathlib import Path

import numpy as np

from .errors import (BorokError, ConfigError, ParseError, ReferenceMismatch,
                     ReferenceUnavailable, ValidationError)
from .problems import GrayScottProblem, LinearProblem, ShallowWaterProblem
from .stepcontrol import BasisStrategy, ControllerConfig, integrate_adaptive, integrate_fixed
from .tableau import resolve_tableau

log = logging.getLogger("borok.bench")

CONVERGENCE_FIELDS = ("label", "h", "status", "global_error", "observed_order")
WORK_FIELDS = ("label", "tol", "status", "final_error", "steps_accepted", "steps_rejected",
               "rhs_evals", "matvecs", "tmatvecs", "wall_time")

_LABEL_RE = re.compile(r"^(L?)(M|R)=([^\s]+)(\s+ext)?$")


def parse_label(label, m_max=100):
    """Split a configuration label into ``(integrator, BasisStrategy)``.

    >>> parse_label("LR=1e-8 ext")[0]
    'borok'
    """
    match = _LABEL_RE.match(label.strip())
    if match is None:
        raise ConfigError(f"bad configuration label {label!r}")
    lanczos, kind, value, ext = match.groups()
    method = "borok" if lanczos else "rok"
    extension = ext is not None
    if extension and method != "borok":
        raise ConfigError(f"label {label!r}: extension needs the L (biorthogonal) prefix")
    try:
        if kind == "M":
            strategy = BasisStrategy.fixed(int(value), extension=extension)
        elif value == "tol":
            strategy = BasisStrategy.tol_matched(extension=extension, m_max=m_max)
        else:
            strategy = BasisStrategy.residual(float(value), extension=extension, m_max=m_max)
    except (ValueError, ValidationError) as exc:
        raise ConfigError(f"label {label!r}: {exc}") from exc
    return method, strategy


def format_label(method, strategy):
    """Inverse of :func:`parse_label`."""
    if strategy.kind == "fixed":
        core = f"M={strategy.m}"
    elif strategy.kind == "tol_matched":
        core = "R=tol"
    else:
        core = f"R={strategy.res_tol:g}"
    return ("L" if method == "borok" else "") + core + (" ext" if strategy.extension else "")


@dataclass
class ExperimentConfig:
    problem: dict
    tableau: str = "rok4k"
    labels: tuple = ()
    m_max: int = 100
    tolerances: tuple = ()
    stepsizes: tuple = ()
    reference_path: str | None = None
    h_ref: float | None = None
    controller: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    def configurations(self, label_filter=None):
        out = []
        for label in self.labels:
            if label_filter and not fnmatchcase(label, label_filter):
                continue
            method, strategy = parse_label(label, self.m_max)
            out.append((label, method, strategy))
        return out


def _floats(text, key):
    try:
        return tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


_CONTROLLER_KEYS = {"h_init": float, "h_min": float, "h_max": float, "max_steps": int,
                    "safety": float, "fac_min": float, "fac_max": float}


def parse_config(text, base_dir=None):
    """Parse INI text into an :class:`ExperimentConfig`."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable configuration: {exc}") from exc
    if not cp.has_section("problem"):
        raise ConfigError("missing [problem] section")
    problem = dict(cp["problem"])
    if "name" not in problem:
        raise ConfigError("problem.name is required")
    labels = ()
    if cp.has_section("configurations"):
        raw = cp["configurations"].get("labels", "")
        labels = tuple(x.strip() for x in raw.split(",") if x.strip())
    if not labels:
        raise ConfigError("configurations.labels must list at least one label")
    if len(set(labels)) != len(labels):
        raise ConfigError("configuration labels must be unique")
    sweep = cp["sweep"] if cp.has_section("sweep") else {}
    tolerances = _floats(sweep.get("tolerances", ""), "sweep.tolerances")
    stepsizes = _floats(sweep.get("stepsizes", ""), "sweep.stepsizes")
    if not stepsizes and "h0" in sweep:
        h0 = _floats(sweep["h0"], "sweep.h0")[0]
        halvings = int(sweep.get("halvings", "4"))
        stepsizes = tuple(h0 / 2.0 ** k for k in range(halvings + 1))
    if any(not v > 0 for v in tolerances + stepsizes):
        raise ConfigError("sweep values must be positive")
    if not (tolerances or stepsizes):
        raise ConfigError("sweep must list tolerances or stepsizes")
    ref = cp["reference"] if cp.has_section("reference") else {}
    h_ref = _floats(ref["h_ref"], "reference.h_ref")[0] if "h_ref" in ref else None
    method = cp["method"] if cp.has_section("method") else {}
    try:
        m_max = int(cp.get("configurations", "m_max", fallback="100"))
    except ValueError as exc:
        raise ConfigError(f"configurations.m_max: {exc}") from exc
    controller = {}
    if cp.has_section("controller"):
        for key, raw in cp["controller"].items():
            if key not in _CONTROLLER_KEYS:
                raise ConfigError(f"controller.{key}: unknown setting")
            try:
                controller[key] = _CONTROLLER_KEYS[key](raw)
            except ValueError as exc:
                raise ConfigError(f"controller.{key}: {exc}") from exc
        try:
            ControllerConfig(**controller)
        except ValidationError as exc:
            raise ConfigError(f"controller: {exc}") from exc
    cfg = ExperimentConfig(problem=problem, tableau=method.get("tableau", "rok4k"), labels=labels,
                           m_max=m_max, tolerances=tolerances, stepsizes=stepsizes,
                           reference_path=ref.get("path"), h_ref=h_ref, controller=controller,
                           base_dir=Path(base_dir) if base_dir else Path.cwd())
    cfg.configurations()  # validates every label
    return cfg


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"--config: cannot read {path}: {exc.strerror}") from exc
    return parse_config(text, base_dir=path.parent)


def with_seed(cfg, seed):
    """Copy of ``cfg`` whose problem seed is ``seed``."""
    problem = dict(cfg.problem)
    problem["seed"] = str(seed)
    return replace(cfg, problem=problem)


_PROBLEM_KEYS = {
    "swe": {"grid_n": int, "g": float, "bump_height": float, "bump_sharpness": float},
    "gray-scott": {"grid_n": int, "eps1": float, "eps2": float, "feed": float, "kill": float,
                   "length": float, "seed": int, "perturbation": float},
    "linear-test": {"n": int, "seed": int, "shift": float},
}


def linear_test_problem(n=20, seed=0, shift=2.0, t_span=(0.0, 1.0)):
    """``y' = M y`` with a seeded random ``M`` whose spectrum lies left of ``-shift + 1``."""
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, n)) / math.sqrt(n) - shift * np.eye(n)
    prob = LinearProblem(M, rng.standard_normal(n), t_span)
    prob.seed = seed
    return prob


def build_problem(spec):
    """Instantiate the problem described by a ``[problem]`` mapping."""
    spec = dict(spec)
    name = spec.pop("name")
    if name not in _PROBLEM_KEYS:
        raise ConfigError(f"problem.name: unknown problem {name!r}")
    t0 = float(spec.pop("t_start", 0.0))
    t_final = spec.pop("t_final", None)
    kwargs = {}
    for key, value in spec.items():
        conv = _PROBLEM_KEYS[name].get(key)
        if conv is None:
            if key == "seed":
                continue
            raise ConfigError(f"problem.{key}: unknown parameter for {name}")
        try:
            kwargs[key] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"problem.{key}: {exc}") from exc
    if t_final is not None:
        kwargs["t_span"] = (t0, float(t_final))
    try:
        if name == "swe":
            return ShallowWaterProblem(**kwargs)
        if name == "gray-scott":
            return GrayScottProblem(**kwargs)
        return linear_test_problem(**kwargs)
    except (ValueError, BorokError) as exc:
        raise ConfigError(f"problem: {exc}") from exc


# ---------------------------------------------------------------- references

def save_reference(path, y, problem, h_ref):
    header = {"N": int(y.shape[0]), "t_final": problem.t_span[1],
              "problem_hash": problem.fingerprint(), "h_ref": h_ref}
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        fh.write(np.ascontiguousarray(y, dtype="<f8").tobytes())


def load_reference(path, problem):
    """Read a reference vector, checking it belongs to ``problem``.

    Raises
    ------
    ReferenceMismatch
        Stored hash, size or final time differ from ``problem``.
    ReferenceUnavailable
        The file is missing or truncated.
    """
    try:
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode("utf-8"))
            data = fh.read()
    except (OSError, ValueError) as exc:
        raise ReferenceUnavailable(f"cannot read reference {path}: {exc}") from exc
    if header.get("problem_hash") != problem.fingerprint():
        raise ReferenceMismatch(f"reference {path} was generated for a different problem "
                                f"(hash {header.get('problem_hash')} vs {problem.fingerprint()})")
    y = np.frombuffer(data, dtype="<f8").astype(float)
    if y.shape[0] != header.get("N") or y.shape[0] != problem.dimension:
        raise ReferenceUnavailable(f"reference {path} is truncated or has the wrong size")
    return y, header


def generate_reference(problem, tableau, h_ref, res_tol=1e-12):
    """Fixed-step biorthogonal run with a residual-adaptive basis of up to ``N`` vectors."""
    if not np.any(problem.rhs(problem.t_span[0], problem.y0)):
        return problem.y0.copy()
    m_max = problem.dimension
    strategy = BasisStrategy.residual(res_tol, m_max=m_max, m_min=min(tableau.order_p, m_max))
    y, _ = integrate_fixed(problem, tableau, strategy, h_ref, method="borok")
    return y


def obtain_reference(cfg, problem, tableau):
    """Load the configured reference, generating (and storing) it when absent."""
    path = None
    if cfg.reference_path:
        path = Path(cfg.reference_path)
        if not path.is_absolute():
            path = cfg.base_dir / path
        if path.exists():
            return load_reference(path, problem)[0]
    h_ref = cfg.h_ref
    if h_ref is None and cfg.stepsizes:
        h_ref = min(cfg.stepsizes) / 16.0
    if h_ref is None:
        raise ReferenceUnavailable("no reference file and no reference.h_ref to generate one")
    log.info("generating reference with h_ref = %r", h_ref)
    y = generate_reference(problem, tableau, h_ref)
    if path is not None:
        save_reference(path, y, problem, h_ref)
    return y


def relative_error(y, ref):
    scale = np.linalg.norm(ref)
    diff = np.linalg.norm(y - ref)
    return float(diff / scale) if scale > 0 else float(diff)


# ---------------------------------------------------------------- experiments

def _fmt(x):
    if x is None or x == "":
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(rows, fields, out=None):
    """Write rows as CSV text (LF endings, round-trip floats); return the text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow([_fmt(row.get(f)) for f in fields])
    text = buf.getvalue()
    if out is not None:
        Path(out).write_text(text, encoding="utf-8", newline="\n")
    return text


def _num_parallel():
    try:
        return max(1, int(os.environ.get("BOROK_NUM_PARALLEL", "1")))
    except ValueError:
        return 1


def _dispatch(fn, jobs):
    workers = min(_num_parallel(), len(jobs)) if jobs else 1
    if workers <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _fixed_job(problem, tableau, label, method, strategy, h, ref):
    try:
        y, _ = integrate_fixed(problem, tableau, strategy, h, method=method)
        return {"label": label, "h": h, "status": "ok", "global_error": relative_error(y, ref)}
    except BorokError as exc:
        return {"label": label, "h": h, "status": type(exc).__name__}


def _adaptive_job(problem, tableau, label, method, strategy, tol, ref, controller=None):
    row = {"label": label, "tol": tol}
    try:
        cfg = ControllerConfig(abs_tol=tol, rel_tol=tol, **(controller or {}))
        y, st = integrate_adaptive(problem, tableau, strategy, cfg, method=method)
    except BorokError as exc:
        row["status"] = type(exc).__name__
        return row
    row.update(status="ok", final_error=relative_error(y, ref), steps_accepted=st.steps_accepted,
               steps_rejected=st.steps_rejected, rhs_evals=st.rhs_evals, matvecs=st.matvecs,
               tmatvecs=st.tmatvecs, wall_time=st.wall_time)
    return row


def _setup(cfg):
    try:
        tableau = resolve_tableau(cfg.tableau)
    except (ParseError, ValidationError, OSError) as exc:
        raise ConfigError(f"method.tableau: {exc}") from exc
    return build_problem(cfg.problem), tableau


def _log_row(row, key):
    extra = "" if row["status"] != "ok" else " " + " ".join(
        f"{k}={row[k]:.6g}" if isinstance(row[k], float) else f"{k}={row[k]}"
        for k in ("global_error", "final_error", "steps_accepted", "matvecs", "wall_time") if k in row)
    log.info("run label=%s %s=%r status=%s%s", row["label"], key, row[key], row["status"], extra)


def run_convergence(cfg, label_filter=None):
    """Fixed-step errors on the configured h ladder, with pairwise observed orders."""
    if not cfg.stepsizes:
        raise ConfigError("sweep.stepsizes (or sweep.h0) is required for convergence runs")
    problem, tableau = _setup(cfg)
    ref = obtain_reference(cfg, problem, tableau)
    ladder = sorted(cfg.stepsizes, reverse=True)
    confs = cfg.configurations(label_filter)
    jobs = [(problem, tableau, label, method, strategy, h, ref)
            for label, method, strategy in confs for h in ladder]
    rows = _dispatch(_fixed_job, jobs)
    for row in rows:
        _log_row(row, "h")
    for i, row in enumerate(rows):
        prev = rows[i - 1] if i > 0 else None
        if (prev is not None and prev["label"] == row["label"] and row["status"] == "ok"
                and prev["status"] == "ok" and row["global_error"] > 0 and prev["global_error"] > 0):
            row["observed_order"] = (math.log(prev["global_error"] / row["global_error"])
                                     / math.log(prev["h"] / row["h"]))
    return rows


def run_work_precision(cfg, label_filter=None, tolerances=None):
    """One adaptive run per (configuration, tolerance); failures become status rows."""
    tolerances = cfg.tolerances if tolerances is None else tolerances
    if not tolerances:
        raise ConfigError("sweep.tolerances is required for adaptive runs")
    problem, tableau = _setup(cfg)
    if tableau.b_hat is None:
        raise ConfigError(f"method.tableau: {tableau.name!r} has no embedded weights")
    ref = obtain_reference(cfg, problem, tableau)
    jobs = [(problem, tableau, label, method, strategy, tol, ref, cfg.controller)
            for label, method, strategy in cfg.configurations(label_filter) for tol in tolerances]
    rows = _dispatch(_adaptive_job, jobs)
    for row in rows:
        _log_row(row, "tol")
    return rows
