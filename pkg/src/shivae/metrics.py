"""Imputation error and burst cross-correlation metrics.

All metrics are evaluated on artificially hidden cells only. A "burst" is a
maximal run of hidden cells within one attribute of one sequence. The burst
correlation is the maximum over lags of the cross-correlation of the
mean-centred true and imputed burst; it is not divided by signal norms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence as Seq

import numpy as np

from .datamodel import HeterogeneousDataset, run_lengths
from .errors import DataError


def _rows(a):
    if isinstance(a, np.ndarray) and a.ndim == 2:
        return list(a)
    if isinstance(a, np.ndarray) and a.ndim == 1:
        return [a]
    return [np.asarray(r) for r in a]


def nrmse(truth, imputed, hidden) -> float | None:
    """RMSE over hidden cells divided by the range of the ground truth.

    Arguments are ``N x T`` arrays or lists of per-sequence rows. NaN truth
    cells (natively missing) are excluded from the range. Returns None when
    nothing is hidden.
    """
    truth, imputed, hidden = _rows(truth), _rows(imputed), _rows(hidden)
    allv = np.concatenate([np.asarray(r, dtype=np.float64) for r in truth])
    allv = allv[~np.isnan(allv)]
    span = allv.max() - allv.min() if allv.size else 0.0
    sq, n = 0.0, 0
    for x, xh, h in zip(truth, imputed, hidden):
        h = np.asarray(h, dtype=bool)
        sq += float(((np.asarray(x)[h] - np.asarray(xh)[h]) ** 2).sum())
        n += int(h.sum())
    if n == 0:
        return None
    if not span > 0:
        raise DataError("ground truth is constant; NRMSE range is undefined")
    return float(np.sqrt(sq / n) / span)


def classification_error(truth, imputed, hidden) -> float | None:
    truth, imputed, hidden = _rows(truth), _rows(imputed), _rows(hidden)
    wrong, n = 0, 0
    for x, xh, h in zip(truth, imputed, hidden):
        h = np.asarray(h, dtype=bool)
        wrong += int((np.asarray(x)[h] != np.asarray(xh)[h]).sum())
        n += int(h.sum())
    return None if n == 0 else wrong / n


def burst_xcorr(w, w_hat) -> float:
    w = np.asarray(w, dtype=np.float64)
    w_hat = np.asarray(w_hat, dtype=np.float64)
    if w.shape != w_hat.shape or w.size < 1:
        raise ValueError("burst arrays must have the same non-zero length")
    return float(np.correlate(w - w.mean(), w_hat - w_hat.mean(), mode="full").max())


def phi(truth, imputed, hidden) -> float | None:
    """Sum of burst correlations divided by the number of hidden cells."""
    truth, imputed, hidden = _rows(truth), _rows(imputed), _rows(hidden)
    total, n = 0.0, 0
    for x, xh, h in zip(truth, imputed, hidden):
        x, xh = np.asarray(x, dtype=np.float64), np.asarray(xh, dtype=np.float64)
        for start, length in run_lengths(h):
            total += burst_xcorr(x[start:start + length], xh[start:start + length])
            n += length
    return None if n == 0 else total / n


# ---------------------------------------------------------------- reports

def attribute_metrics(truth: HeterogeneousDataset, imputed: Seq, overlays: Seq[np.ndarray]) -> dict:
    """``{name: {"err": ..., "phi": ...}}`` for one replicate.

    ``imputed`` holds completed sequences (any order, matched by id);
    ``overlays`` aligns with ``truth.sequences``.
    """
    lookup = {s.id: s for s in imputed}
    rows = [(s, lookup[s.id], ov) for s, ov in zip(truth.sequences, overlays) if s.id in lookup]
    if not rows:
        raise DataError("no imputed sequence matches the ground truth ids")
    out = {}
    for d, a in enumerate(truth.schema):
        X = [s.values[:, d] for s, _, _ in rows]
        Xh = [imp.values[:, d] for _, imp, _ in rows]
        hid = [np.asarray(ov, dtype=bool)[:, d] & s.mask[:, d] for s, _, ov in rows]
        err = nrmse(X, Xh, hid) if a.is_continuous else classification_error(X, Xh, hid)
        out[a.name] = {"err": err, "phi": phi(X, Xh, hid)}
    return out


def _avg(vals):
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def _mean_std(vals):
    vals = [v for v in vals if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0


@dataclass
class MetricReport:
    attributes: list[str]
    kinds: list[str]
    replicates: list[dict] = field(default_factory=list)

    def _per_rep(self, key, names):
        return [_avg([r[n][key] for n in names]) for r in self.replicates]

    @property
    def continuous(self) -> list[str]:
        return [n for n, k in zip(self.attributes, self.kinds) if k in ("real", "positive")]

    @property
    def error(self) -> list:
        return self._per_rep("err", self.attributes)

    @property
    def cross_corr(self) -> list:
        return self._per_rep("phi", self.attributes)

    @property
    def cross_corr_continuous(self) -> list:
        return self._per_rep("phi", self.continuous)

    def summary(self) -> dict:
        per_attr = {}
        for n, k in zip(self.attributes, self.kinds):
            em, es = _mean_std([r[n]["err"] for r in self.replicates])
            pm, ps = _mean_std([r[n]["phi"] for r in self.replicates])
            per_attr[n] = {"kind": k, "err_mean": em, "err_std": es, "phi_mean": pm, "phi_std": ps}
        out = {"n_replicates": len(self.replicates), "attributes": per_attr}
        for key, vals in (("error", self.error), ("cross_corr", self.cross_corr),
                          ("cross_corr_continuous", self.cross_corr_continuous)):
            m, s = _mean_std(vals)
            out[key] = {"mean": m, "std": s, "replicates": vals}
        return out

    def table_rows(self) -> list[dict]:
        """One row per variable plus an Average row, Error/Cross-correlation columns."""
        s = self.summary()
        rows = [{"variable": "Average", "error_mean": s["error"]["mean"], "error_std": s["error"]["std"],
                 "xcorr_mean": s["cross_corr"]["mean"], "xcorr_std": s["cross_corr"]["std"]}]
        for n, a in s["attributes"].items():
            rows.append({"variable": n, "error_mean": a["err_mean"], "error_std": a["err_std"],
                         "xcorr_mean": a["phi_mean"], "xcorr_std": a["phi_std"]})
        return rows

    def to_dict(self) -> dict:
        return {"attributes": self.attributes, "kinds": self.kinds, "replicates": self.replicates,
                "summary": self.summary()}

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricReport":
        return cls(list(doc["attributes"]), list(doc["kinds"]), list(doc["replicates"]))


def aggregate(per_replicate: Seq[dict], schema) -> MetricReport:
    if not per_replicate:
        raise ValueError("need at least one replicate")
    return MetricReport([a.name for a in schema], [a.kind for a in schema], list(per_replicate))
