"""Open-set face verification with the 10-fold cross-validated threshold protocol."""
from __future__ import annotations

import json
import os
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .seeding import make_rng

N_FOLDS = 10
METRICS = ("l2", "cosine")


class PairsFormatError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class PairsValidationError(ValueError):
    pass


@dataclass(frozen=True)
class VerificationPair:
    a: str
    b: str
    same: bool
    fold: int


@dataclass(frozen=True)
class DistanceRecord:
    pair: VerificationPair
    distance: float


@dataclass
class FoldResult:
    fold: int
    threshold: float
    accuracy: float
    n_pairs: int


@dataclass
class AccuracyReport:
    folds: list[FoldResult]
    mean: float
    std: float
    metric: str = "l2"

    def to_dict(self) -> dict:
        return {"metric": self.metric, "mean": self.mean, "std": self.std, "folds": [asdict(f) for f in self.folds]}

    @classmethod
    def from_dict(cls, d: dict) -> "AccuracyReport":
        return cls([FoldResult(**f) for f in d["folds"]], d["mean"], d["std"], d.get("metric", "l2"))

    def format(self) -> str:
        lines = [f"accuracy {self.mean:.4f} +- {self.std:.4f} ({self.metric}, {len(self.folds)} folds)"]
        lines += [f"  fold {f.fold}: threshold {f.threshold:.4f} accuracy {f.accuracy:.4f}" for f in self.folds]
        return "\n".join(lines)


# ---------------------------------------------------------------- pairs files


def image_ref(name: str, index: int) -> str:
    return f"{name}_{int(index):04d}"


_REF = re.compile(r"^(.*)_(\d+)$")


def split_ref(ref: str) -> tuple[str, int]:
    m = _REF.match(ref)
    if not m:
        raise ValueError(f"image reference {ref!r} is not of the form <name>_<number>")
    return m.group(1), int(m.group(2))


def _index(token: str, line: int) -> int:
    if not token.isdigit():
        raise PairsFormatError(line, f"expected an image number, got {token!r}")
    return int(token)


def parse_pairs(lines: Iterable[str]) -> list[VerificationPair]:
    """Header ``<folds> <pairs-per-class-per-fold>``, then per fold that many genuine and impostor lines."""
    body: list[tuple[int, list[str]]] = []
    header = None
    for no, raw in enumerate(lines, 1):
        toks = raw.split()
        if not toks:
            continue
        if header is None:
            if len(toks) != 2 or not all(t.isdigit() for t in toks):
                raise PairsFormatError(no, "header must be '<folds> <pairs-per-class-per-fold>'")
            header = (int(toks[0]), int(toks[1]))
            if header[0] < 1:
                raise PairsFormatError(no, "fold count must be positive")
            continue
        if len(toks) not in (3, 4):
            raise PairsFormatError(no, f"expected 3 or 4 fields, got {len(toks)}")
        body.append((no, toks))
    if header is None:
        raise PairsValidationError("pairs file is empty")
    folds, per = header
    if len(body) != 2 * folds * per:
        raise PairsValidationError(f"header announces {folds} x {2 * per} pairs but body has {len(body)}")
    pairs = []
    for k, (no, toks) in enumerate(body):
        fold = k // (2 * per)
        if len(toks) == 3:
            a, b = image_ref(toks[0], _index(toks[1], no)), image_ref(toks[0], _index(toks[2], no))
            pairs.append(VerificationPair(a, b, True, fold))
        else:
            a, b = image_ref(toks[0], _index(toks[1], no)), image_ref(toks[2], _index(toks[3], no))
            pairs.append(VerificationPair(a, b, False, fold))
    for f in range(folds):
        block = pairs[f * 2 * per:(f + 1) * 2 * per]
        n_same = sum(p.same for p in block)
        if n_same != per:
            raise PairsValidationError(f"fold {f} has {n_same} genuine pairs, expected {per}")
    return pairs


def parse_pairs_file(path) -> list[VerificationPair]:
    with open(path, encoding="utf-8") as fh:
        return parse_pairs(fh)


def format_pairs(pairs: Sequence[VerificationPair]) -> list[str]:
    folds = sorted({p.fold for p in pairs})
    if folds != list(range(len(folds))):
        raise PairsValidationError("fold indices must be 0..k-1")
    blocks = [[p for p in pairs if p.fold == f] for f in folds]
    per = sum(p.same for p in blocks[0]) if blocks else 0
    lines = [f"{len(folds)} {per}"]
    for f, block in enumerate(blocks):
        gen = [p for p in block if p.same]
        imp = [p for p in block if not p.same]
        if len(gen) != per or len(imp) != per:
            raise PairsValidationError(f"fold {f} must hold {per} genuine and {per} impostor pairs")
        for p in gen:
            (na, ia), (nb, ib) = split_ref(p.a), split_ref(p.b)
            if na != nb:
                raise PairsValidationError(f"genuine pair {p.a} / {p.b} spans two identities")
            lines.append(f"{na}\t{ia}\t{ib}")
        for p in imp:
            (na, ia), (nb, ib) = split_ref(p.a), split_ref(p.b)
            lines.append(f"{na}\t{ia}\t{nb}\t{ib}")
    return lines


def write_pairs_file(path, pairs: Sequence[VerificationPair]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text("\n".join(format_pairs(pairs)) + "\n", encoding="utf-8")
    os.replace(tmp, path)
    return path


def make_pairs(
    identities: Mapping[str, Sequence[int]],
    per_fold: int,
    seed,
    n_folds: int = N_FOLDS,
) -> list[VerificationPair]:
    """Seeded pairs over identities split into ``n_folds`` disjoint groups.

    ``identities`` maps a name to its image numbers. Each fold draws
    ``per_fold`` genuine and ``per_fold`` impostor pairs without repeats.
    """
    rng = make_rng(seed)
    names = sorted(identities)
    if len(names) < 2 * n_folds:
        raise ValueError(f"need at least {2 * n_folds} identities for {n_folds} folds, got {len(names)}")
    order = [names[i] for i in rng.permutation(len(names))]
    groups = [order[f::n_folds] for f in range(n_folds)]
    pairs = []
    for f, group in enumerate(groups):
        multi = [n for n in group if len(identities[n]) >= 2]
        if not multi:
            raise ValueError(f"fold {f} has no identity with two images")
        seen: set = set()
        gen: list[VerificationPair] = []
        for _ in range(per_fold * 100):
            if len(gen) == per_fold:
                break
            n = multi[rng.integers(len(multi))]
            i, j = sorted(rng.choice(list(identities[n]), 2, replace=False).tolist())
            if (n, i, j) not in seen:
                seen.add((n, i, j))
                gen.append(VerificationPair(image_ref(n, i), image_ref(n, j), True, f))
        imp: list[VerificationPair] = []
        for _ in range(per_fold * 100):
            if len(imp) == per_fold:
                break
            x, y = rng.choice(len(group), 2, replace=False)
            na, nb = group[min(x, y)], group[max(x, y)]
            i = int(rng.choice(list(identities[na])))
            j = int(rng.choice(list(identities[nb])))
            if (na, i, nb, j) not in seen:
                seen.add((na, i, nb, j))
                imp.append(VerificationPair(image_ref(na, i), image_ref(nb, j), False, f))
        if len(gen) < per_fold or len(imp) < per_fold:
            raise ValueError(f"fold {f}: not enough distinct pairs for {per_fold} per class")
        pairs += gen + imp
    return pairs


# ---------------------------------------------------------------- distances


def _unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0) or not np.all(np.isfinite(v)):
        raise ValueError("embeddings must be finite and non-zero")
    return v / n


def pair_distances(
    pairs: Sequence[VerificationPair],
    embeddings: Mapping[str, np.ndarray],
    metric: str = "l2",
) -> list[DistanceRecord]:
    """L2 between normalized embeddings (in [0, 2]) or cosine distance ``1 - cos``."""
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    out = []
    for p in pairs:
        for ref in (p.a, p.b):
            if ref not in embeddings:
                raise KeyError(f"no embedding for image {ref}")
        a, b = _unit(embeddings[p.a]), _unit(embeddings[p.b])
        if metric == "l2":
            d = float(np.linalg.norm(a - b))
        else:
            d = float(max(0.0, 1.0 - np.dot(a, b)))
        out.append(DistanceRecord(p, d))
    return out


def _arrays(records: Sequence[DistanceRecord]):
    d = np.array([r.distance for r in records], dtype=np.float64)
    same = np.array([r.pair.same for r in records], dtype=bool)
    fold = np.array([r.pair.fold for r in records], dtype=np.int64)
    return d, same, fold


def threshold_accuracy(records: Sequence[DistanceRecord], threshold: float) -> float:
    if not records:
        raise ValueError("threshold_accuracy needs at least one record")
    d, same, _ = _arrays(records)
    return float(np.mean((d < threshold) == same))


def _correct_counts(d: np.ndarray, same: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Number of correct decisions for each threshold, exact integers."""
    gen = np.sort(d[same])
    imp = np.sort(d[~same])
    tp = np.searchsorted(gen, thresholds, side="left")
    tn = len(imp) - np.searchsorted(imp, thresholds, side="left")
    return tp + tn


def sweep_grid(step: float = 0.001, upper: float = 2.0) -> np.ndarray:
    n = int(round(upper / step))
    return np.linspace(0.0, n * step, n + 1)


def midpoint_candidates(d: np.ndarray) -> np.ndarray:
    """Smallest distance, every midpoint between distinct distances, and one above the largest."""
    u = np.unique(d)
    if len(u) == 0:
        return np.array([0.0])
    return np.concatenate([[u[0]], (u[:-1] + u[1:]) / 2, [u[-1] + 1.0]])


def ten_fold_accuracy(
    records: Sequence[DistanceRecord],
    thresholds: str | np.ndarray = "grid",
    step: float = 0.001,
    upper: float = 2.0,
    n_folds: int = N_FOLDS,
    metric: str = "l2",
) -> AccuracyReport:
    """Per fold, pick the best threshold on the other folds and score the held-out fold.

    ``thresholds`` is ``"grid"`` (uniform sweep over ``[0, upper]``),
    ``"midpoints"`` (candidates from the training folds' distances) or an
    explicit array. Ties go to the smallest threshold.
    """
    if not records:
        raise ValueError("no distance records")
    d, same, fold = _arrays(records)
    present = set(fold.tolist())
    missing = [f for f in range(n_folds) if f not in present]
    if missing:
        raise ValueError(f"missing folds {missing}")
    extra = sorted(present - set(range(n_folds)))
    if extra:
        raise ValueError(f"unexpected folds {extra}")
    if isinstance(thresholds, str):
        if thresholds not in ("grid", "midpoints"):
            raise ValueError("thresholds must be 'grid', 'midpoints' or an array")
        fixed = sweep_grid(step, upper) if thresholds == "grid" else None
    else:
        fixed = np.sort(np.asarray(thresholds, dtype=np.float64))
    results = []
    for f in range(n_folds):
        train, test = fold != f, fold == f
        cand = fixed if fixed is not None else midpoint_candidates(d[train])
        correct = _correct_counts(d[train], same[train], cand)
        thr = float(cand[int(np.argmax(correct))])
        acc = float(np.mean((d[test] < thr) == same[test]))
        results.append(FoldResult(f, thr, acc, int(test.sum())))
    accs = np.array([r.accuracy for r in results])
    return AccuracyReport(results, float(accs.mean()), float(accs.std()), metric)


# ---------------------------------------------------------------- embedding cache


def write_embedding_cache(prefix, ids: Sequence[str], embeddings: np.ndarray) -> tuple[Path, Path]:
    """``<prefix>.bin`` holds float32 rows; ``<prefix>.idx`` holds ``<count> <dim>`` then one id per line."""
    emb = np.ascontiguousarray(embeddings, dtype="<f4")
    if emb.ndim != 2 or emb.shape[0] != len(ids):
        raise ValueError("embeddings must be (len(ids), D)")
    if any(not i or any(c.isspace() for c in i) for i in ids):
        raise ValueError("embedding ids must be non-empty and contain no whitespace")
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    binp, idxp = prefix.with_suffix(".bin"), prefix.with_suffix(".idx")
    for path, write in (
        (binp, lambda p: p.write_bytes(emb.tobytes())),
        (idxp, lambda p: p.write_text(f"{emb.shape[0]} {emb.shape[1]}\n" + "".join(f"{i}\n" for i in ids))),
    ):
        tmp = path.with_name(f".{path.name}.tmp")
        write(tmp)
        os.replace(tmp, path)
    return binp, idxp


def read_embedding_cache(prefix) -> dict[str, np.ndarray]:
    prefix = Path(prefix)
    binp, idxp = prefix.with_suffix(".bin"), prefix.with_suffix(".idx")
    for p in (binp, idxp):
        if not p.exists():
            raise FileNotFoundError(f"embedding cache file {p} does not exist")
    lines = idxp.read_text(encoding="utf-8").splitlines()
    try:
        n, dim = (int(t) for t in lines[0].split())
    except (IndexError, ValueError):
        raise ValueError(f"{idxp}: bad header") from None
    ids = lines[1:]
    if len(ids) != n:
        raise ValueError(f"{idxp}: header says {n} ids, found {len(ids)}")
    emb = np.frombuffer(binp.read_bytes(), dtype="<f4")
    if emb.size != n * dim:
        raise ValueError(f"{binp}: expected {n * dim} floats, found {emb.size}")
    emb = emb.reshape(n, dim)
    return {i: emb[k] for k, i in enumerate(ids)}


def embed_refs(
    refs: Iterable[str],
    load: Callable[[str], np.ndarray],
    embed: Callable[[np.ndarray], np.ndarray],
    batch_size: int = 256,
) -> dict[str, np.ndarray]:
    """Embed every distinct image reference; failures name the image."""
    refs = sorted(set(refs))
    out: dict[str, np.ndarray] = {}
    for start in range(0, len(refs), batch_size):
        chunk = refs[start:start + batch_size]
        imgs = []
        for r in chunk:
            try:
                imgs.append(load(r))
            except Exception as exc:
                raise RuntimeError(f"cannot load image {r}: {exc}") from exc
        emb = embed(np.stack(imgs))
        out.update(zip(chunk, emb))
    return out


def save_report(report: AccuracyReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, path)
    return path
