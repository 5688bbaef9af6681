"""PCA of leaf states by SVD of the mean-centred matrix, and projection of new rows."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .core import CharacterMatrix
from .errors import DegenerateModelError, InputError, MissingStateError


@dataclass(frozen=True, eq=False)
class PcaModel:
    mu: np.ndarray                  # (p,) column means
    axes: np.ndarray                # (k, p) right singular vectors, sign-normalised
    singular_values: np.ndarray     # full spectrum, descending
    n_fit: int
    feature_names: tuple[str, ...] = ()
    scores: np.ndarray | None = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return self.axes.shape[0]

    @property
    def p(self) -> int:
        return self.mu.shape[0]

    @property
    def variances(self) -> np.ndarray:
        """lambda_i = sigma_i^2 / (n - 1) for every component."""
        return self.singular_values ** 2 / (self.n_fit - 1)

    @property
    def explained(self) -> np.ndarray:
        return explained_variance(self)

    def to_json(self) -> str:
        doc = {
            "n_fit": self.n_fit,
            "mu": self.mu.tolist(),
            "axes": self.axes.tolist(),
            "singular_values": self.singular_values.tolist(),
            "explained": explained_variance(self).tolist(),
            "feature_names": list(self.feature_names),
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PcaModel":
        doc = json.loads(text)
        try:
            return cls(np.array(doc["mu"], float), np.array(doc["axes"], float).reshape(-1, len(doc["mu"])),
                       np.array(doc["singular_values"], float), int(doc["n_fit"]),
                       tuple(doc.get("feature_names", ())))
        except KeyError as e:
            raise InputError(f"PCA model JSON lacks field {e}") from None


def _nonzero(sv: np.ndarray, shape) -> np.ndarray:
    if sv.size == 0 or sv[0] == 0:
        return np.zeros_like(sv, dtype=bool)
    return sv > max(shape) * np.finfo(float).eps * sv[0]


def orient(axes: np.ndarray) -> np.ndarray:
    """Flip each row so that its entry of largest magnitude is positive.

    Entries within a relative 1e-9 of the maximum count as tied; the first
    tied entry decides, so rounding noise cannot flip the sign.
    """
    axes = np.array(axes, dtype=float)
    mag = np.abs(axes)
    top = mag.max(axis=1, keepdims=True)
    idx = np.argmax(mag >= top * (1 - 1e-9), axis=1)
    signs = np.sign(axes[np.arange(len(axes)), idx])
    signs[signs == 0] = 1.0
    return axes * signs[:, None]


def _as_array(matrix, impute: str) -> tuple[np.ndarray, tuple[str, ...]]:
    if isinstance(matrix, CharacterMatrix):
        names = matrix.feature_names
        if matrix.has_missing:
            if impute != "mean":
                raise MissingStateError("matrix has missing entries; impute them first "
                                        "(FFBS sampling) or pass impute='mean'")
            x = matrix.values.astype(float)
            m = matrix.missing
            obs = (~m).sum(axis=0)
            if np.any(obs == 0):
                raise InputError("a column is entirely missing")
            means = np.where(m, 0.0, x).sum(axis=0) / obs
            x = np.where(m, means, x)
        else:
            x = matrix.values.astype(float)
        return x, names
    x = np.asarray(matrix, dtype=float)
    if x.ndim != 2:
        raise InputError("expected a two-dimensional matrix")
    if np.isnan(x).any():
        raise MissingStateError("matrix has missing (NaN) entries")
    return x, ()


def fit(matrix, k: int = 2, impute: str = "refuse") -> PcaModel:
    """Fit PCA on the rows of ``matrix`` (a CharacterMatrix or an n x p array)."""
    x, names = _as_array(matrix, impute)
    n, p = x.shape
    if n < 2:
        raise InputError("PCA needs at least two rows")
    if not 1 <= k <= min(n, p):
        raise InputError(f"k={k} out of range 1..{min(n, p)}")
    mu = x.mean(axis=0)
    xc = x - mu
    _, sv, vt = np.linalg.svd(xc, full_matrices=False)
    if not _nonzero(sv, x.shape).any():
        raise DegenerateModelError("all rows are identical; PCA is undefined")
    axes = orient(vt[:k])
    model = PcaModel(mu, axes, sv, n, names)
    return replace(model, scores=project(model, x))


def project(model: PcaModel, states) -> np.ndarray:
    """Scores (state - mu) . axis_i; one row per input vector."""
    v = np.asarray(states, dtype=float)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    if v.shape[1] != model.p:
        raise InputError(f"state length {v.shape[1]} does not match model dimension {model.p}")
    # elementwise product + sum keeps each row's scores independent of batch size
    out = ((v - model.mu)[:, None, :] * model.axes[None, :, :]).sum(axis=2)
    return out[0] if single else out


def explained_variance(model: PcaModel, all_components: bool = False) -> np.ndarray:
    """Share lambda_i / sum(lambda_j) with the sum over all non-zero components."""
    lam = model.variances
    nz = _nonzero(model.singular_values, (model.n_fit, model.p))
    shares = np.where(nz, lam, 0.0) / lam[nz].sum()
    return shares if all_components else shares[:model.k]
