"""Manufactured solutions and convergence studies on the unit square."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .analysis import (
    ErrorReport,
    LevelResult,
    classify_regimes,
    interpolate_global,
    monitored_error,
    pressure_error_lr,
)
from .mesh import Mesh, mesh_for_level
from .system import BrinkmanData, Discretization, NewtonError, NewtonOptions, newton_solve

log = logging.getLogger(__name__)

PI = np.pi
GRADIENT_FLOOR = 1e-12


@dataclass
class ManufacturedCase:
    """Exact solution blending the r-Stokes and Darcy limits.

    u = chi u_S + (1 - chi) u_D with chi = exp(-nu / mu), u_S divergence free,
    u_D = -grad(p) / nu and p = sin(pi x) sin(pi y).
    """

    r: float
    mu: float
    nu: float

    def __post_init__(self):
        if not self.r > 1:
            raise ValueError("r must exceed 1")
        if self.mu < 0 or self.nu < 0:
            raise ValueError("mu and nu must be non-negative")
        if self.mu == 0 and self.nu == 0:
            raise ValueError("mu and nu cannot both vanish")

    @property
    def friction(self) -> float:
        return np.inf if self.mu == 0 else self.nu / self.mu

    @property
    def chi(self) -> float:
        return float(np.exp(-self.friction))

    @property
    def _darcy_scale(self) -> float:
        return 1.0 / self.nu if self.nu > 0 else 0.0

    # -- pressure --------------------------------------------------------
    @staticmethod
    def _trig(pts):
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        return np.sin(PI * x), np.cos(PI * x), np.sin(PI * y), np.cos(PI * y)

    def p(self, pts):
        sx, _, sy, _ = self._trig(pts)
        return sx * sy

    def grad_p(self, pts):
        sx, cx, sy, cy = self._trig(pts)
        return PI * np.stack([cx * sy, sx * cy], axis=-1)

    def _hess_p(self, pts):
        sx, cx, sy, cy = self._trig(pts)
        a, b = -sx * sy, cx * cy
        return PI**2 * np.stack([np.stack([a, b], -1), np.stack([b, a], -1)], -2)

    def _third_p(self, pts):
        sx, cx, sy, cy = self._trig(pts)
        xxx, xxy = -cx * sy, -sx * cy
        T = np.empty(np.shape(sx) + (2, 2, 2))
        # d_i d_j d_l p is symmetric; count the x derivatives
        table = {3: xxx, 2: xxy, 1: -cx * sy, 0: -sx * cy}
        for i in range(2):
            for j in range(2):
                for l in range(2):
                    T[..., i, j, l] = table[(i == 0) + (j == 0) + (l == 0)]
        return PI**3 * T

    # -- velocity --------------------------------------------------------
    def u(self, pts):
        sx, cx, sy, cy = self._trig(pts)
        us = np.stack([sx * cy, -cx * sy], axis=-1)
        return self.chi * us - (1.0 - self.chi) * self._darcy_scale * self.grad_p(pts)

    def grad_u(self, pts):
        """[..., i, j] = d_j u_i."""
        sx, cx, sy, cy = self._trig(pts)
        gs = PI * np.stack([np.stack([cx * cy, -sx * sy], -1), np.stack([sx * sy, -cx * cy], -1)], -2)
        return self.chi * gs - (1.0 - self.chi) * self._darcy_scale * self._hess_p(pts)

    def hess_u(self, pts):
        """[..., i, j, l] = d_j d_l u_i."""
        sx, cx, sy, cy = self._trig(pts)
        h1 = -PI**2 * np.stack([np.stack([sx * cy, cx * sy], -1), np.stack([cx * sy, sx * cy], -1)], -2)
        h2 = PI**2 * np.stack([np.stack([cx * sy, sx * cy], -1), np.stack([sx * cy, cx * sy], -1)], -2)
        hs = np.stack([h1, h2], -3)
        return self.chi * hs - (1.0 - self.chi) * self._darcy_scale * self._third_p(pts)

    def g(self, pts):
        G = self.grad_u(pts)
        return G[..., 0, 0] + G[..., 1, 1]

    def div_flux(self, pts):
        """div sigma(grad u), by the chain rule."""
        G = self.grad_u(pts)
        H = self.hess_u(pts)
        r, mu = self.r, self.mu
        norm = np.sqrt((G**2).sum((-2, -1)))
        lap = np.einsum("...ijj->...i", H)
        dnorm = np.einsum("...ab,...abj->...j", G, H)  # G : d_j G
        safe = np.where(norm < GRADIENT_FLOOR, 1.0, norm)
        out = mu * safe[..., None] ** (r - 2) * lap
        out += mu * (r - 2) * (safe ** (r - 4))[..., None] * np.einsum("...j,...ij->...i", dnorm, G)
        return np.where((norm < GRADIENT_FLOOR)[..., None], 0.0, out)

    def f(self, pts):
        return -self.div_flux(pts) + self.nu * self.u(pts) + self.grad_p(pts)

    def data(self) -> BrinkmanData:
        return BrinkmanData(self.mu, self.nu, self.r, self.f, self.g, boundary_velocity=self.u)


def build_case(r: float, mu: float, nu: float) -> ManufacturedCase:
    return ManufacturedCase(r, mu, nu)


# --------------------------------------------------------------------------
# Studies


FAMILIES = ("triangular", "cartesian", "hexagonal", "file")


@dataclass
class StudyConfig:
    family: str = "triangular"
    levels: int = 3
    first_level: int = 1
    k: int = 1
    r: float = 2.0
    mu: float = 1.0
    nu: float = 1.0
    mesh_dir: str | None = None
    tol: float = 1e-10
    max_iter: int = 100
    max_halvings: int = 30
    continuation: bool = False
    out: str | None = None

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if self.family == "file" and not self.mesh_dir:
            raise ValueError("family 'file' requires a mesh directory")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.first_level < 0:
            raise ValueError("first level must be >= 0")
        if self.k not in (0, 1, 2):
            raise ValueError("k must be 0, 1 or 2")
        if not self.r > 1:
            raise ValueError("r must exceed 1")
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.nu < 0:
            raise ValueError("nu must be non-negative")
        if not self.tol > 0:
            raise ValueError("tol must be positive")

    def level_ids(self) -> list[int]:
        return list(range(self.first_level, self.first_level + self.levels))

    def newton_options(self) -> NewtonOptions:
        return NewtonOptions(self.tol, self.max_iter, self.max_halvings, self.continuation)


@dataclass
class LevelSolution:
    mesh: Mesh
    disc: Discretization
    state: np.ndarray
    report: object
    system: object


def solve_level(case: ManufacturedCase, mesh: Mesh, k: int, opts: NewtonOptions):
    disc = Discretization(mesh, k)
    x, report, system = newton_solve(disc, case.data(), opts=opts)
    return LevelSolution(mesh, disc, x, report, system)


def evaluate_level(case: ManufacturedCase, sol: LevelSolution, level: int) -> LevelResult:
    disc, system = sol.disc, sol.system
    u_h = system.velocity(sol.state)
    errs = monitored_error(disc, u_h, interpolate_global(case.u, disc), case.mu, case.nu, case.r)
    regimes = classify_regimes(sol.mesh, case.r, case.mu, case.nu, case.grad_u)
    return LevelResult(
        level=level,
        h=sol.mesh.h,
        ndof_velocity=disc.n_velocity,
        ndof_pressure=disc.n_pressure,
        newton_iters=sol.report.iterations,
        err_pressure_lr=pressure_error_lr(disc, system.pressure(sol.state), case.p, case.r),
        friction=regimes.friction,
        h_cells=np.array([g.h for g in sol.mesh.geometry]),
        darcy_fraction=regimes.darcy_fraction,
        **errs,
    )


def run_study(config: StudyConfig) -> ErrorReport:
    """Solve on each level, measure errors, classify regimes, write CSVs if requested."""
    config.validate()
    case = build_case(config.r, config.mu, config.nu)
    report = ErrorReport()
    opts = config.newton_options()
    for level in config.level_ids():
        mesh = mesh_for_level(config.family, level, config.mesh_dir)
        try:
            sol = solve_level(case, mesh, config.k, opts)
        except NewtonError as exc:
            log.warning("level %d: solver failed: %s", level, exc)
            nan = float("nan")
            report.levels.append(LevelResult(level, mesh.h, 0, 0, exc.report.iterations, nan, nan, nan, nan,
                                             np.zeros(0), np.zeros(0), nan, solved=False, message=str(exc)))
            continue
        res = evaluate_level(case, sol, level)
        log.info("level %d h=%.4f monitored=%.4e newton=%d", level, res.h, res.err_monitored, res.newton_iters)
        report.levels.append(res)
    if config.out:
        write_outputs(report, config)
    return report


ERROR_COLUMNS = [
    "level", "h", "ndof_velocity", "ndof_pressure", "newton_iters",
    "err_mu_r", "err_nu", "err_monitored", "err_pressure_lr", "rate_monitored",
]
FRICTION_COLUMNS = ["level", "cell_id", "h_T", "C_f_T", "regime"]


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_outputs(report: ErrorReport, config: StudyConfig) -> None:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    rates = report.rates()
    with open(out / "errors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ERROR_COLUMNS)
        for i, lv in enumerate(report.levels):
            rate = "" if i == 0 else _fmt(rates[i - 1])
            w.writerow([lv.level, _fmt(lv.h), lv.ndof_velocity, lv.ndof_pressure, lv.newton_iters,
                        _fmt(lv.err_mu_r), _fmt(lv.err_nu), _fmt(lv.err_monitored), _fmt(lv.err_pressure_lr), rate])
    for lv in report.levels:
        with open(out / f"friction_level{lv.level}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(FRICTION_COLUMNS)
            for c, (hT, cf) in enumerate(zip(lv.h_cells, lv.friction)):
                w.writerow([lv.level, c, _fmt(hT), _fmt(cf), "darcy" if cf >= 1 else "stokes"])


def config_dict(config: StudyConfig) -> dict:
    return asdict(config)
