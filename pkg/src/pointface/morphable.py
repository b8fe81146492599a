"""Linear morphable face model: shape plus expression subspaces.

A face is ``mu_s + U_s diag(sigma_s) alpha + mu_e + U_e diag(sigma_e) beta``
with vertices stored interleaved (x0, y0, z0, x1, ...). The toy models built
here stand in for a licensed statistical model; the file format in
:mod:`pointface.io` accepts a real one with the same fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud

_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


@dataclass(frozen=True)
class MorphableModel:
    mean_shape: np.ndarray
    shape_std: np.ndarray
    shape_basis: np.ndarray
    mean_expr: np.ndarray
    expr_std: np.ndarray
    expr_basis: np.ndarray
    nose_tip_vertex: int

    def __post_init__(self):
        m3 = self.mean_shape.shape[0]
        if m3 % 3:
            raise ValueError("mean shape length must be a multiple of 3")
        if self.mean_expr.shape != (m3,):
            raise ValueError("mean expression length does not match mean shape")
        for basis, std, name in ((self.shape_basis, self.shape_std, "shape"), (self.expr_basis, self.expr_std, "expression")):
            if basis.ndim != 2 or basis.shape[0] != m3 or basis.shape[1] != std.shape[0]:
                raise ValueError(f"{name} basis is {basis.shape}, expected ({m3}, {std.shape[0]})")
            if not np.all(std > 0):
                raise ValueError(f"{name} standard deviations must be positive")
        if not 0 <= self.nose_tip_vertex < m3 // 3:
            raise ValueError("nose tip vertex out of range")

    @property
    def vertex_count(self) -> int:
        return self.mean_shape.shape[0] // 3

    @property
    def n_shape(self) -> int:
        return self.shape_std.shape[0]

    @property
    def n_expr(self) -> int:
        return self.expr_std.shape[0]


@dataclass(frozen=True)
class FaceCoefficients:
    alpha: np.ndarray
    beta: np.ndarray


def face_layout(m: int) -> np.ndarray:
    """Mean face surface on an m-vertex sunflower disk, shape (m, 3).

    An elliptic dome with a nose ridge, eye sockets, brow and mouth so that
    curvature varies across the face the way it does on a real scan.
    """
    i = np.arange(m) + 0.5
    rad = np.sqrt(i / m)
    ang = i * _GOLDEN_ANGLE
    x = 0.8 * rad * np.cos(ang)
    y = rad * np.sin(ang)

    def bump(cx, cy, sx, sy):
        return np.exp(-0.5 * (((x - cx) / sx) ** 2 + ((y - cy) / sy) ** 2))

    z = 0.3 * (1.0 - (x / 0.8) ** 2 - y**2)
    z += 0.28 * bump(0.0, -0.02, 0.07, 0.17)  # nose
    z += 0.05 * bump(0.0, 0.18, 0.06, 0.12)  # nasal bridge
    z -= 0.07 * bump(-0.3, 0.27, 0.1, 0.07)  # eye sockets
    z -= 0.07 * bump(0.3, 0.27, 0.1, 0.07)
    z += 0.04 * bump(0.0, 0.42, 0.4, 0.06)  # brow
    z += 0.03 * bump(0.0, -0.45, 0.16, 0.04)  # lips
    z += 0.05 * bump(0.0, -0.78, 0.2, 0.1)  # chin
    return np.stack([x, y, z], axis=1)


def _smooth_fields(rng, xy, count, centers_box, z_weight=1.0, xy_weight=0.3, n_bumps=6):
    """``count`` random smooth displacement fields, flattened to (3m, count)."""
    m = len(xy)
    fields = np.empty((3 * m, count))
    lo, hi = np.asarray(centers_box[0]), np.asarray(centers_box[1])
    for col in range(count):
        disp = np.zeros((m, 3))
        for axis, weight in ((0, xy_weight), (1, xy_weight), (2, z_weight)):
            centers = rng.uniform(lo, hi, size=(n_bumps, 2))
            widths = rng.uniform(0.15, 0.45, size=n_bumps)
            amps = rng.standard_normal(n_bumps)
            d2 = ((xy[:, None, :] - centers[None]) ** 2).sum(axis=2)
            disp[:, axis] = weight * (np.exp(-0.5 * d2 / widths**2) * amps).sum(axis=1)
        fields[:, col] = disp.reshape(-1)
    return fields


def make_toy_model(
    vertex_count: int,
    n_shape: int,
    n_expr: int,
    seed: int,
    shape_scale: float = 0.04,
    expr_scale: float = 0.03,
    decay: float = 0.8,
) -> MorphableModel:
    """Desk-scale model with orthonormal smooth bases and geometric std decay.

    ``shape_scale``/``expr_scale`` set the RMS per-coordinate displacement of
    the leading component. Expression fields are centred on the lower face
    and the brows; shape fields cover the whole face. The two bases are
    orthonormalised jointly, so they are also orthogonal to each other.
    """
    m = vertex_count
    if m < 100:
        raise ValueError("vertex_count must be at least 100")
    if n_shape < 1 or n_expr < 1:
        raise ValueError("need at least one shape and one expression component")
    if 3 * m <= n_shape + n_expr:
        raise ValueError(f"{n_shape}+{n_expr} components do not fit in a {3 * m}-dimensional space")
    rng = np.random.default_rng(seed)
    mean = face_layout(m)
    xy = mean[:, :2]
    raw = np.concatenate(
        [
            _smooth_fields(rng, xy, n_shape, ((-0.7, -0.9), (0.7, 0.9))),
            _smooth_fields(rng, xy, n_expr, ((-0.5, -0.8), (0.5, 0.4)), xy_weight=0.5),
        ],
        axis=1,
    )
    q, r = np.linalg.qr(raw)
    q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    steps = np.sqrt(3 * m)
    return MorphableModel(
        mean_shape=mean.reshape(-1),
        shape_std=shape_scale * steps * decay ** np.arange(n_shape),
        shape_basis=np.ascontiguousarray(q[:, :n_shape]),
        mean_expr=np.zeros(3 * m),
        expr_std=expr_scale * steps * decay ** np.arange(n_expr),
        expr_basis=np.ascontiguousarray(q[:, n_shape:]),
        nose_tip_vertex=int(np.argmax(mean[:, 2])),
    )


def _coeff(value, n, name):
    arr = np.zeros(n) if np.isscalar(value) and value == 0 else np.asarray(value, dtype=np.float64)
    if arr.shape != (n,):
        raise ValueError(f"{name} has shape {arr.shape}, model expects ({n},)")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def shape_offset(model: MorphableModel, alpha) -> np.ndarray:
    return model.shape_basis @ (model.shape_std * _coeff(alpha, model.n_shape, "alpha"))


def expression_offset(model: MorphableModel, beta) -> np.ndarray:
    return model.expr_basis @ (model.expr_std * _coeff(beta, model.n_expr, "beta"))


def synthesize(model: MorphableModel, alpha=0, beta=0) -> PointCloud:
    """Face instance for identity coefficients ``alpha`` and expression ``beta``.

    ``alpha`` may also be a :class:`FaceCoefficients`, in which case ``beta``
    is taken from it.
    """
    if isinstance(alpha, FaceCoefficients):
        alpha, beta = alpha.alpha, alpha.beta
    flat = (model.mean_shape + shape_offset(model, alpha)) + (model.mean_expr + expression_offset(model, beta))
    return PointCloud(flat.reshape(-1, 3), nose_tip_index=model.nose_tip_vertex)


def draw_coefficients(model: MorphableModel, num_identities: int, num_expressions: int, seed: int):
    """Standard-normal identity and expression coefficients from one generator."""
    rng = np.random.default_rng(seed)
    alphas = rng.standard_normal((num_identities, model.n_shape))
    betas = rng.standard_normal((num_expressions, model.n_expr))
    return alphas, betas


def generate_dataset(
    model: MorphableModel,
    num_identities: int,
    num_expressions: int,
    seed: int,
    noise_std: float = 0.0,
    identity_offset: int = 0,
) -> list[PointCloud]:
    """Every identity with every expression, identity-major.

    Labels are ``identity_offset + i`` and ``j``. Position noise for pair
    (i, j) comes from its own generator keyed on (seed, i, j), so any single
    scan can be regenerated on its own.
    """
    if num_identities < 1 or num_expressions < 1:
        raise ValueError("need at least one identity and one expression")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    alphas, betas = draw_coefficients(model, num_identities, num_expressions, seed)
    shapes = [model.mean_shape + shape_offset(model, a) for a in alphas]
    exprs = [model.mean_expr + expression_offset(model, b) for b in betas]
    clouds = []
    for i, s in enumerate(shapes):
        for j, e in enumerate(exprs):
            pos = (s + e).reshape(-1, 3)
            if noise_std > 0:
                pos = pos + np.random.default_rng([seed, i, j]).normal(0.0, noise_std, pos.shape)
            clouds.append(
                PointCloud(pos, identity=identity_offset + i, expression=j, nose_tip_index=model.nose_tip_vertex)
            )
    return clouds
