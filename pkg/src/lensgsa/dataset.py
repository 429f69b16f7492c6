"""Sampling, generation, splitting, standardization and persistence of datasets."""
from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ._validation import InvalidRange, check_ranges
from .assembly import (
    INPUT_LABELS,
    N_LENSES,
    OUTPUT_LABELS,
    AssemblyParams,
    NonConvergence,
    deformations,
)

RNG_ALGORITHM = "PCG64"
FORMAT_VERSION = 1

__all__ = [
    "Dataset", "Norm", "InvalidRange", "TooFewSamples", "DegenerateColumn",
    "ParseError", "SchemaMismatch", "sample_inputs", "generate", "split",
    "compute_norm", "standardize", "destandardize", "save", "load",
]


class TooFewSamples(ValueError):
    pass


class DegenerateColumn(ValueError):
    pass


class ParseError(ValueError):
    pass


class SchemaMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Norm:
    input_mean: np.ndarray
    input_std: np.ndarray
    output_mean: np.ndarray
    output_std: np.ndarray

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in
                ("input_mean", "input_std", "output_mean", "output_std")}

    @classmethod
    def from_dict(cls, d: dict) -> "Norm":
        return cls(**{k: np.asarray(d[k], dtype=float) for k in
                      ("input_mean", "input_std", "output_mean", "output_std")})


@dataclass
class Dataset:
    inputs: np.ndarray
    outputs: np.ndarray
    train_idx: np.ndarray | None = None
    test_idx: np.ndarray | None = None
    norm: Norm | None = None
    standardized: bool = False
    seed: int | None = None
    params_hash: str | None = None
    params_mismatch: bool = False

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def has_split(self) -> bool:
        return self.train_idx is not None

    def subset(self, which: str):
        """``(X, Y)`` rows of the ``"train"`` or ``"test"`` split."""
        if not self.has_split:
            raise ValueError("dataset has no train/test split")
        idx = {"train": self.train_idx, "test": self.test_idx}[which]
        return self.inputs[idx], self.outputs[idx]


def sample_inputs(n: int, lower=(2.0,) * N_LENSES, upper=(5.0,) * N_LENSES, seed=None) -> np.ndarray:
    """i.i.d. uniform clearances, one column per interference."""
    if n < 1:
        raise ValueError("n must be >= 1")
    lower, upper = check_ranges(lower, upper, n_features=N_LENSES)
    rng = np.random.default_rng(seed)
    return rng.uniform(lower, upper, size=(n, N_LENSES))


def _solve_rows(args):
    start, rows, params = args
    out = np.empty((rows.shape[0], len(OUTPUT_LABELS)))
    for k, x in enumerate(rows):
        try:
            out[k] = deformations(x, params)
        except NonConvergence as exc:
            exc.row = start + k
            raise
    return out


def generate(inputs, params: AssemblyParams | None = None, workers: int = 1, seed=None) -> Dataset:
    """Run the forward model on every row; row order never depends on ``workers``."""
    params = AssemblyParams() if params is None else params
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != N_LENSES:
        raise ValueError(f"inputs must be (N, {N_LENSES})")
    if not np.all(np.isfinite(inputs)):
        raise ValueError("inputs must be finite")
    n = inputs.shape[0]
    workers = max(1, min(int(workers), n))
    if workers == 1:
        outputs = _solve_rows((0, inputs, params))
    else:
        bounds = np.linspace(0, n, workers + 1).astype(int)
        jobs = [(a, inputs[a:b], params) for a, b in zip(bounds[:-1], bounds[1:])]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = np.vstack(list(pool.map(_solve_rows, jobs)))
    return Dataset(inputs=inputs.copy(), outputs=outputs, seed=seed, params_hash=params.digest())


def split(ds: Dataset, train_fraction: float = 0.8, seed=None, n_train: int | None = None,
          n_test: int | None = None) -> Dataset:
    """Random train/test partition.

    Either ``train_fraction`` (train gets ``round(fraction * N)`` rows) or the
    explicit counts ``n_train`` and ``n_test``, which must add up to ``N``.
    """
    n = len(ds)
    if n < 10:
        raise TooFewSamples(f"need at least 10 samples to split, got {n}")
    if n_train is not None or n_test is not None:
        if n_train is None or n_test is None or n_train + n_test != n:
            raise ValueError(f"n_train + n_test must equal the dataset size {n}")
        k = int(n_train)
    else:
        if not 0 < train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        k = int(round(train_fraction * n))
    perm = np.random.default_rng(seed).permutation(n)
    return replace(ds, train_idx=np.sort(perm[:k]), test_idx=np.sort(perm[k:]), norm=None)


def compute_norm(ds: Dataset) -> Norm:
    """Column statistics of the training rows only."""
    X, Y = ds.subset("train")
    norm = Norm(X.mean(axis=0), X.std(axis=0), Y.mean(axis=0), Y.std(axis=0))
    labels = INPUT_LABELS + OUTPUT_LABELS
    stds = np.concatenate((norm.input_std, norm.output_std))
    if np.any(stds == 0):
        raise DegenerateColumn(
            "constant training column(s): " + ", ".join(labels[i] for i in np.flatnonzero(stds == 0))
        )
    return norm


def standardize(ds: Dataset) -> Dataset:
    if ds.standardized:
        return ds
    norm = compute_norm(ds)
    return replace(
        ds,
        inputs=(ds.inputs - norm.input_mean) / norm.input_std,
        outputs=(ds.outputs - norm.output_mean) / norm.output_std,
        norm=norm,
        standardized=True,
    )


def destandardize(values, norm: Norm, which: str = "outputs") -> np.ndarray:
    mean, std = {
        "inputs": (norm.input_mean, norm.input_std),
        "outputs": (norm.output_mean, norm.output_std),
    }[which]
    return np.asarray(values, dtype=float) * std + mean


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def save(ds: Dataset, path) -> None:
    """Write ``path`` (CSV, 17 significant digits) and its ``.meta.json`` sidecar."""
    if ds.standardized:
        raise ValueError("save the raw dataset, not its standardized view")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ",".join(INPUT_LABELS + OUTPUT_LABELS)
    data = np.hstack((ds.inputs, ds.outputs))
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="")
    meta = {
        "version": FORMAT_VERSION,
        "rng": RNG_ALGORITHM,
        "seed": ds.seed,
        "params_hash": ds.params_hash,
        "n_rows": len(ds),
        "train_idx": None if ds.train_idx is None else ds.train_idx.tolist(),
        "test_idx": None if ds.test_idx is None else ds.test_idx.tolist(),
        "norm": None if ds.norm is None else ds.norm.to_dict(),
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=1) + "\n")


def load(path, params: AssemblyParams | None = None) -> Dataset:
    """Read a dataset written by :func:`save`.

    If ``params`` is given and its digest differs from the one recorded at
    generation time, the load still succeeds but ``params_mismatch`` is set.
    """
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh))
    except (OSError, StopIteration) as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    expected = list(INPUT_LABELS + OUTPUT_LABELS)
    if header != expected:
        raise SchemaMismatch(
            f"{path}: expected {len(expected)} columns {expected}, got {len(header)} columns"
        )
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if data.shape[1] != len(expected):
        raise SchemaMismatch(f"{path}: rows have {data.shape[1]} values, expected {len(expected)}")

    ds = Dataset(inputs=data[:, :N_LENSES], outputs=data[:, N_LENSES:])
    meta_file = sidecar_path(path)
    if meta_file.exists():
        try:
            meta = json.loads(meta_file.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{meta_file}: {exc}") from exc
        if meta.get("n_rows", len(ds)) != len(ds):
            raise SchemaMismatch(f"{meta_file} describes {meta['n_rows']} rows, CSV has {len(ds)}")
        ds.seed = meta.get("seed")
        ds.params_hash = meta.get("params_hash")
        if meta.get("train_idx") is not None:
            ds.train_idx = np.asarray(meta["train_idx"], dtype=int)
            ds.test_idx = np.asarray(meta["test_idx"], dtype=int)
        if meta.get("norm") is not None:
            ds.norm = Norm.from_dict(meta["norm"])
    if params is not None and ds.params_hash is not None and ds.params_hash != params.digest():
        ds.params_mismatch = True
        warnings.warn(f"{path} was generated with different assembly parameters", stacklevel=2)
    return ds
