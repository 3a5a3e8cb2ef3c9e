"""Configuration parsing and artifact writers (CSV, SVG, text reports).

Configuration files are flat ``key = value`` text with dotted keys::

    preset = example1
    physics.nu = 0.01
    control.mode = controlled
    control.M = 2
    control.lambda = 1, 10, 100     # a list makes a sweep
    time.dt = 4e-4
    mesh.level = 1

``#`` starts a comment.  Keys are case-sensitive; unknown keys are errors.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .mesh import Mesh
from .sim import MODES, SimConfig


class ConfigError(ValueError):
    """Malformed or inconsistent configuration file."""


def _float(s: str) -> float:
    return float(s)


def _int(s: str) -> int:
    v = float(s)
    if v != int(v):
        raise ValueError(f"expected an integer, got {s!r}")
    return int(v)


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _floats(s: str) -> tuple:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _points(s: str) -> tuple:
    pts = []
    for chunk in s.split(";"):
        xy = [float(x) for x in chunk.split(",")]
        if len(xy) != 2:
            raise ValueError(f"expected 'x, y' pairs separated by ';', got {s!r}")
        pts.append(tuple(xy))
    if len(pts) != 3:
        raise ValueError("a triangle needs exactly three vertices")
    return tuple(pts)


# config key -> (SimConfig field, parser, may be swept)
SIM_KEYS = {
    "preset": ("preset", str, False),
    "physics.nu": ("nu", _float, True),
    "physics.convection": ("convection", _bool, False),
    "time.dt": ("dt", _float, False),
    "time.t_end": ("t_end", _float, False),
    "control.mode": ("mode", str, True),
    "control.M": ("M", _int, True),
    "control.lambda": ("lam", _float, True),
    "control.scheme": ("feedback_scheme", str, False),
    "domain.kind": ("domain", str, False),
    "domain.vertices": ("triangle", _points, False),
    "domain.L1": ("L1", _float, False),
    "domain.L2": ("L2", _float, False),
    "actuators.r": ("r", _float, False),
    "actuators.fraction": ("fraction", _float, False),
    "mesh.level": ("mesh_level", _int, True),
    "mesh.h": ("mesh_h", _float, False),
    "output.snapshots": ("snapshot_times", _floats, False),
    "output.stride": ("stride", _int, False),
    "example2.convection_factor": ("convection_factor", _float, False),
}
OTHER_KEYS = {"output.dir", "xi.M", "xi.method", "output.svg"}


@dataclass
class Experiment:
    """A parsed configuration file: one or more simulation configs plus output options."""

    configs: list
    out_dir: str | None = None
    xi_M: tuple = (0, 1, 2)
    xi_method: str = "shift-invert"
    svg: bool = False
    swept: tuple = ()
    base: dict = field(default_factory=dict)

    def label(self, cfg: SimConfig) -> str:
        """Directory-safe label naming the swept parameters of `cfg`."""
        if not self.swept:
            return "run"
        parts = []
        for key in self.swept:
            name = SIM_KEYS[key][0]
            parts.append(f"{key.split('.')[-1]}={getattr(cfg, name):g}" if not isinstance(
                getattr(cfg, name), str) else f"{key.split('.')[-1]}={getattr(cfg, name)}")
        return "_".join(parts)


def parse_config_text(text: str, source: str = "<config>") -> Experiment:
    """Parse configuration text into an :class:`Experiment`; raises :class:`ConfigError`."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = (p.strip() for p in body.split("=", 1))
        if key not in SIM_KEYS and key not in OTHER_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"{source}:{lineno}: empty value for {key!r}")
        raw[key] = value

    kwargs, sweeps = {}, {}
    for key, value in raw.items():
        if key not in SIM_KEYS:
            continue
        name, parse, sweepable = SIM_KEYS[key]
        items = [v.strip() for v in value.split(",")] if sweepable and "," in value else [value]
        try:
            parsed = [parse(v) for v in items]
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key!r}: {exc}") from exc
        if len(parsed) > 1:
            sweeps[key] = parsed
        else:
            kwargs[name] = parsed[0]

    if kwargs.get("preset", "example1") not in ("example1", "example2"):
        raise ConfigError(f"{source}: preset must be example1 or example2 (custom data needs the library API)")
    if "mesh_level" in kwargs and kwargs["mesh_level"] not in (0, 1, 2):
        raise ConfigError(f"{source}: mesh.level must be 0, 1 or 2")
    if kwargs.get("mode", "free") not in MODES:
        raise ConfigError(f"{source}: control.mode must be one of {MODES}")

    exp = Experiment([], base=dict(kwargs))
    exp.out_dir = raw.get("output.dir")
    try:
        if "xi.M" in raw:
            exp.xi_M = tuple(_int(v) for v in raw["xi.M"].split(",") if v.strip())
        if "output.svg" in raw:
            exp.svg = _bool(raw["output.svg"])
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    exp.xi_method = raw.get("xi.method", exp.xi_method)

    exp.swept = tuple(sorted(sweeps))
    grids = [[(k, v) for v in sweeps[k]] for k in exp.swept]
    for combo in itertools.product(*grids) if grids else [()]:
        kw = dict(kwargs)
        for key, v in combo:
            if SIM_KEYS[key][0] == "mesh_level" and v not in (0, 1, 2):
                raise ConfigError(f"{source}: mesh.level must be 0, 1 or 2")
            if SIM_KEYS[key][0] == "mode" and v not in MODES:
                raise ConfigError(f"{source}: control.mode must be one of {MODES}")
            kw[SIM_KEYS[key][0]] = v
        try:
            exp.configs.append(SimConfig(**kw))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}: {exc}") from exc
    return exp


def load_config(path) -> Experiment:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def with_overrides(cfg: SimConfig, **kw) -> SimConfig:
    return replace(cfg, **kw)


def decay_report(run, extra: dict | None = None) -> str:
    """Plain-text run summary: parameters, fitted rate and floor flag."""
    cfg = run.config
    lines = ["# decay report"]
    params = [("preset", cfg.preset), ("mode", cfg.mode), ("nu", cfg.nu), ("dt", cfg.dt),
              ("t_end", cfg.t_end), ("M", cfg.M), ("lambda", cfg.lam), ("feedback_scheme", cfg.feedback_scheme),
              ("domain", cfg.domain), ("mesh_level", cfg.mesh_level), ("nodes", run.mesh.n_nodes),
              ("triangles", run.mesh.n_triangles)]
    lines += [f"{k} = {v}" for k, v in params]
    try:
        fit = run.decay
        lines += [f"rate = {fit.rate:.6f}", f"fit_window = {fit.t_start:.6g} {fit.t_stop:.6g}",
                  f"fit_samples = {fit.n_samples}", f"floor_hit = {str(fit.floor_hit).lower()}",
                  f"floor_threshold = {fit.threshold:.6e}"]
    except ValueError as exc:
        lines.append(f"rate = unavailable ({exc})")
    if run.error_exact is not None:
        lines.append(f"max_error_target_vs_exact = {float(np.max(run.error_exact)):.6e}")
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# SVG filled contours

def _band_polygon(p: np.ndarray, f: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Part of a triangle where the linear interpolant of `f` lies in ``[lo, hi]``."""
    poly = list(zip(p, f))
    for bound, keep_above in ((lo, True), (hi, False)):
        out = []
        n = len(poly)
        for i in range(n):
            (pa, fa), (pb, fb) = poly[i], poly[(i + 1) % n]
            ina = fa >= bound if keep_above else fa <= bound
            inb = fb >= bound if keep_above else fb <= bound
            if ina:
                out.append((pa, fa))
            if ina != inb:
                s = (bound - fa) / (fb - fa)
                out.append((pa + s * (pb - pa), bound))
        poly = out
        if not poly:
            break
    return np.array([q for q, _ in poly])


def _color(s: float) -> str:
    # diverging blue - white - red ramp, s in [0, 1]
    s = min(max(s, 0.0), 1.0)
    if s < 0.5:
        a = s / 0.5
        rgb = (int(40 + 215 * a), int(90 + 165 * a), 255)
    else:
        a = (s - 0.5) / 0.5
        rgb = (255, int(255 - 190 * a), int(255 - 215 * a))
    return "#%02x%02x%02x" % rgb


def contour_svg(mesh: Mesh, values, levels: int = 12, width: int = 480, title: str = "") -> str:
    """Filled-contour SVG of a P1 field (piecewise-linear bands clipped per triangle)."""
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    if hi - lo <= 1e-300:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, levels + 1)
    x0, y0 = mesh.nodes.min(axis=0)
    x1, y1 = mesh.nodes.max(axis=0)
    scale = width / max(x1 - x0, y1 - y0)
    height = int(math.ceil((y1 - y0) * scale))
    wpx = int(math.ceil((x1 - x0) * scale))

    def fmt(pts):
        return " ".join(f"{(x - x0) * scale:.2f},{(y1 - y) * scale:.2f}" for x, y in pts)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{wpx}" height="{height}" '
             f'viewBox="0 0 {wpx} {height}">']
    if title:
        parts.append(f"<title>{title}</title>")
    for b in range(levels):
        color = _color((b + 0.5) / levels)
        polys = []
        for tri in mesh.triangles:
            f = v[tri]
            if f.max() < edges[b] or f.min() > edges[b + 1]:
                continue
            poly = _band_polygon(mesh.nodes[tri], f, edges[b], edges[b + 1])
            if len(poly) >= 3:
                polys.append(f'<polygon points="{fmt(poly)}"/>')
        if polys:
            parts.append(f'<g fill="{color}" stroke="{color}" stroke-width="0.3">')
            parts.extend(polys)
            parts.append("</g>")
    bd = mesh.domain.vertices if mesh.domain is not None else None
    if bd is not None:
        parts.append(f'<polygon points="{fmt(bd)}" fill="none" stroke="black" stroke-width="1"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
