"""CSV/JSON artifact readers and writers; floats are written with repr so they round-trip exactly."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import OrderedDict
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .eqf import SampleSet, build_eqf
from .errors import MissingArtifactError, ValidationError
from .mcmc import DesignMatrix, PosteriorFit
from .quantlets import QuantletBasis, QuantletCoefficients
from .selection import LosslessnessCurve, SelectionResult


def fmt(x) -> str:
    """Shortest text that parses back to the same double."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _parse_float(cell: str, path, row: int, col: str) -> float:
    try:
        return float(cell)
    except (TypeError, ValueError):
        raise ValidationError(f"{path}: row {row}, column {col!r}: non-numeric value {cell!r}") from None


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([c if isinstance(c, str) else fmt(c) for c in r])
    return path


def read_csv(path):
    """(header, rows) where rows keep their 1-based file line numbers."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"{path} does not exist")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path} is empty") from None
        rows = [(i, r) for i, r in enumerate(reader, start=2) if any(c.strip() for c in r)]
    return header, rows


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=False)
        fh.write("\n")
    return path


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"{path} does not exist")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------- ingest

def read_samples(path) -> list[SampleSet]:
    header, rows = read_csv(path)
    if len(header) < 2 or header[0] != "subject_id" or header[1] != "value":
        raise ValidationError(f"{path}: expected header 'subject_id,value', got {','.join(header)!r}")
    values: "OrderedDict[str, list]" = OrderedDict()
    for line, r in rows:
        if len(r) < 2:
            raise ValidationError(f"{path}: row {line} has {len(r)} cells, expected 2")
        sid = r[0].strip()
        values.setdefault(sid, []).append(_parse_float(r[1].strip(), path, line, "value"))
    return [SampleSet(sid, np.asarray(v)) for sid, v in values.items()]


def read_covariates(path):
    """(ids, names, matrix) from `subject_id,<name1>,...`."""
    header, rows = read_csv(path)
    if not header or header[0] != "subject_id" or len(header) < 2:
        raise ValidationError(f"{path}: expected header 'subject_id,<name>,...'")
    names = header[1:]
    ids, mat = [], []
    for line, r in rows:
        if len(r) != len(header):
            raise ValidationError(f"{path}: row {line} has {len(r)} cells, expected {len(header)}")
        sid = r[0].strip()
        if sid in ids:
            raise ValidationError(f"{path}: subject {sid!r} has more than one covariate row (row {line})")
        ids.append(sid)
        mat.append([_parse_float(c.strip(), path, line, n) for c, n in zip(r[1:], names)])
    return ids, names, np.asarray(mat, dtype=float).reshape(len(ids), len(names))


def ingest(samples_path, covariates_path):
    """Join samples and covariates by subject id; prepend an intercept unless one is present."""
    samples = read_samples(samples_path)
    ids, names, mat = read_covariates(covariates_path)
    sample_ids = [s.subject_id for s in samples]
    no_cov = [s for s in sample_ids if s not in set(ids)]
    no_samp = [s for s in ids if s not in set(sample_ids)]
    if no_cov or no_samp:
        parts = []
        if no_cov:
            parts.append(f"subjects without covariates: {', '.join(no_cov)}")
        if no_samp:
            parts.append(f"covariate rows without samples: {', '.join(no_samp)}")
        raise ValidationError("; ".join(parts))
    pos = {s: i for i, s in enumerate(ids)}
    X = mat[[pos[s] for s in sample_ids]]
    has_intercept = any(np.all(X[:, a] == 1.0) for a in range(X.shape[1]))
    if not has_intercept:
        X = np.column_stack([np.ones(X.shape[0]), X])
        names = ["intercept"] + list(names)
    return samples, DesignMatrix(X, list(names))


def write_samples(path, samples: Sequence[SampleSet]) -> Path:
    return write_csv(path, ["subject_id", "value"],
                     ((str(s.subject_id), float(v)) for s in samples for v in s.values))


def write_covariates(path, ids: Sequence, X: np.ndarray, names: Sequence[str]) -> Path:
    return write_csv(path, ["subject_id", *names], ([str(i), *row] for i, row in zip(ids, X)))


# ---------------------------------------------------------------- stage artifacts

def write_eqf_cache(path, eqfs) -> Path:
    """Sorted values per subject, in the samples layout."""
    return write_csv(path, ["subject_id", "value"], ((str(e.subject_id), float(v)) for e in eqfs for v in e.values))


def read_eqf_cache(path):
    return [build_eqf(s) for s in read_samples(path)]


def write_dictionary(directory, dictionary) -> list[Path]:
    directory = Path(directory)
    rows = []
    for k, kind in enumerate(dictionary.kinds):
        if k < 2:
            rows.append((k, kind, "", ""))
        else:
            a, b = dictionary.theta[k - 2]
            rows.append((k, kind, float(a), float(b)))
    p1 = write_csv(directory / "dictionary_elements.csv", ["index", "kind", "a", "b"], rows)
    p2 = directory / "dictionary_values.npy"
    np.save(p2, dictionary.values)
    manifest = dict(dictionary.manifest(), elements=p1.name, values=p2.name)
    p3 = write_json(directory / "dictionary.json", manifest)
    return [p3, p1, p2]


def read_dictionary_elements(path):
    header, rows = read_csv(path)
    theta = [(float(r[2]), float(r[3])) for _, r in rows if r[1] == "beta"]
    return np.asarray(theta).reshape(-1, 2)


def write_selection(path, selections: Sequence[SelectionResult]) -> Path:
    def rows():
        for s in selections:
            for k in s.selected:
                yield (str(s.subject_id), float(s.lambda_), int(k), float(s.coefficients[k]))
    return write_csv(path, ["subject_id", "lambda", "element_index", "coefficient"], rows())


def read_selection(path, n_elements: int) -> list[SelectionResult]:
    header, rows = read_csv(path)
    out: "OrderedDict[str, list]" = OrderedDict()
    for line, r in rows:
        out.setdefault(r[0], []).append((_parse_float(r[1], path, line, "lambda"), int(r[2]),
                                         _parse_float(r[3], path, line, "coefficient")))
    res = []
    for sid, items in out.items():
        c = np.zeros(n_elements)
        for _, k, v in items:
            c[k] = v
        res.append(SelectionResult(sid, items[0][0], c))
    return res


def write_curve(path, curve: LosslessnessCurve) -> Path:
    return write_csv(path, ["C", "K", "rho_min", "rho_mean"],
                     zip(curve.thresholds.tolist(), curve.K.tolist(), curve.rho_min.tolist(), curve.rho_mean.tolist()))


def read_curve(path) -> LosslessnessCurve:
    header, rows = read_csv(path)
    a = np.asarray([[float(c) for c in r] for _, r in rows]).reshape(-1, 4)
    return LosslessnessCurve(a[:, 0].astype(np.int64), a[:, 1].astype(np.int64), a[:, 2], a[:, 3],
                             np.zeros((a.shape[0], 0)))


def write_basis(directory, basis: QuantletBasis) -> list[Path]:
    directory = Path(directory)
    header = ["p"] + [f"psi_{k + 1}" for k in range(basis.K)]
    p1 = write_csv(directory / "basis.csv", header, (row for row in np.column_stack([basis.grid, basis.functions.T])))
    p2 = write_json(directory / "basis.json", dict(basis.manifest(), functions=p1.name))
    return [p1, p2]


def read_basis(directory) -> QuantletBasis:
    directory = Path(directory)
    man = read_json(directory / "basis.json")
    header, rows = read_csv(directory / "basis.csv")
    a = np.asarray([[float(c) for c in r] for _, r in rows])
    clusters = None if man.get("clusters") is None else np.asarray(man["clusters"], dtype=np.int64)
    return QuantletBasis(a[:, 0].copy(), np.ascontiguousarray(a[:, 1:].T), np.asarray(man["energies"], dtype=float),
                         np.asarray(man["source_index"], dtype=np.int64), man.get("dropped", []),
                         man.get("provenance", {}), clusters)


def write_coefficients(path, coefs: QuantletCoefficients) -> Path:
    K = coefs.values.shape[1]
    header = ["subject_id"] + [f"q_{k + 1}" for k in range(K)] + ["ccc"]
    return write_csv(path, header, ([str(s), *row, c] for s, row, c in zip(coefs.subject_ids, coefs.values, coefs.ccc)))


def read_coefficients(path) -> QuantletCoefficients:
    header, rows = read_csv(path)
    ids = [r[0] for _, r in rows]
    vals = np.asarray([[_parse_float(c, path, line, header[j + 1]) for j, c in enumerate(r[1:])] for line, r in rows])
    return QuantletCoefficients(ids, vals[:, :-1].copy(), vals[:, -1].copy())


def write_posterior(directory, fit: PosteriorFit, names: Optional[Sequence[str]] = None) -> list[Path]:
    """Long-format draws of B plus a JSON config; sigma^2 and inclusion draws go in the same layout."""
    directory = Path(directory)
    M, A, K = fit.B.shape
    m, a, k = np.meshgrid(np.arange(M), np.arange(A), np.arange(K), indexing="ij")
    p1 = write_csv(directory / "posterior_draws.csv", ["draw", "a", "k", "value"],
                   zip(m.ravel().tolist(), (a.ravel() + 1).tolist(), (k.ravel() + 1).tolist(), fit.B.ravel().tolist()))
    p2 = write_csv(directory / "posterior_sigma2.csv", ["draw", "k", "value"],
                   ((mm, kk + 1, float(fit.sigma2[mm, kk])) for mm in range(M) for kk in range(K)))
    p3 = write_csv(directory / "posterior_gamma.csv", ["draw", "a", "k", "value"],
                   zip(m.ravel().tolist(), (a.ravel() + 1).tolist(), (k.ravel() + 1).tolist(),
                       fit.gamma.ravel().astype(int).tolist()))
    cfg = {"method": fit.method, "M": M, "A": A, "K": K, "names": list(names or []), "config": fit.config,
           "draws": p1.name, "sigma2": p2.name, "gamma": p3.name}
    p4 = write_json(directory / "posterior.json", cfg)
    return [p1, p2, p3, p4]


def read_posterior(directory) -> tuple[PosteriorFit, list]:
    directory = Path(directory)
    man = read_json(directory / "posterior.json")
    M, A, K = man["M"], man["A"], man["K"]
    _, rows = read_csv(directory / man["draws"])
    B = np.asarray([float(r[3]) for _, r in rows]).reshape(M, A, K)
    _, rows = read_csv(directory / man["sigma2"])
    s2 = np.asarray([float(r[2]) for _, r in rows]).reshape(M, K)
    _, rows = read_csv(directory / man["gamma"])
    g = np.asarray([int(r[3]) for _, r in rows], dtype=bool).reshape(M, A, K)
    return PosteriorFit(B, g, s2, None, None, man["config"], man["method"]), man.get("names", [])


def write_bands(path, bands: dict, grid: np.ndarray) -> Path:
    """bands maps coefficient name to BandSet."""
    def rows():
        for name, b in bands.items():
            for j, p in enumerate(grid):
                yield (name, float(p), b.mean[j], b.lower[j], b.upper[j], b.pointwise_lower[j], b.pointwise_upper[j])
    return write_csv(path, ["coefficient", "p", "mean", "lower", "upper", "pointwise_lower", "pointwise_upper"], rows())


def write_simbas(path, curves: dict, grid: np.ndarray) -> Path:
    return write_csv(path, ["coefficient", "p", "simbas"],
                     ((n, float(p), float(v)) for n, c in curves.items() for p, v in zip(grid, c)))


def write_pdf(path, tables: dict) -> Path:
    return write_csv(path, ["row", "x", "density"],
                     ((n, float(x), float(d)) for n, t in tables.items() for x, d in zip(t.x, t.density)))
