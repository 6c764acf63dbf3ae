"""``.bartpost`` files: gzip (mtime 0) of a JSON header line followed by raw
little-endian arrays, so equal posteriors serialize to equal bytes."""

from __future__ import annotations

import gzip
import json
from pathlib import Path

import numpy as np

from .priors import BartConfig
from .sampler import BartPosterior
from .tree import Ensemble

MAGIC = b"BARTPOST"
VERSION = 1
_FIELDS = (("var", "<i4"), ("cut", "<f8"), ("left", "<i8"), ("right", "<i8"), ("mu", "<f8"))


def dumps(post: BartPosterior) -> bytes:
    sizes = [int(d.offsets[-1]) for d in post.draws]
    header = {
        "version": VERSION,
        "config": post.config.to_dict(),
        "seed": post.seed,
        "y_center": post.y_center,
        "y_scale": post.y_scale,
        "n_features": post.n_features,
        "lambda": post.lam,
        "n_draws": post.n_draws,
        "n_trees": post.config.n_trees,
        "nodes_per_draw": sizes,
        "accept": post.accept,
    }
    parts = [MAGIC + b"\n", json.dumps(header, sort_keys=True).encode() + b"\n"]
    parts.append(np.asarray(post.sigma2, dtype="<f8").tobytes())
    for d in post.draws:
        parts.append(np.asarray(d.offsets, dtype="<i8").tobytes())
    for name, dt in _FIELDS:
        for d in post.draws:
            parts.append(np.asarray(getattr(d, name), dtype=dt).tobytes())
    return gzip.compress(b"".join(parts), mtime=0)


def loads(blob: bytes) -> BartPosterior:
    raw = gzip.decompress(blob)
    magic, rest = raw.split(b"\n", 1)
    if magic != MAGIC:
        raise ValueError("not a .bartpost artifact")
    head, body = rest.split(b"\n", 1)
    h = json.loads(head)
    if h["version"] != VERSION:
        raise ValueError(f"unsupported .bartpost version {h['version']}")
    n_draws, J, sizes = h["n_draws"], h["n_trees"], h["nodes_per_draw"]
    pos = 0

    def take(count, dt):
        nonlocal pos
        a = np.frombuffer(body, dtype=dt, count=count, offset=pos).copy()
        pos += a.nbytes
        return a

    sigma2 = take(n_draws, "<f8")
    offsets = [take(J + 1, "<i8") for _ in range(n_draws)]
    cols = {name: [take(s, dt) for s in sizes] for name, dt in _FIELDS}
    draws = [
        Ensemble(
            var=cols["var"][i].astype(np.int32),
            cut=cols["cut"][i],
            left=cols["left"][i].astype(np.int64),
            right=cols["right"][i].astype(np.int64),
            mu=cols["mu"][i],
            offsets=offsets[i].astype(np.int64),
        )
        for i in range(n_draws)
    ]
    return BartPosterior(
        draws=draws,
        sigma2=sigma2,
        y_center=h["y_center"],
        y_scale=h["y_scale"],
        config=BartConfig.from_dict(h["config"]),
        seed=h["seed"],
        n_features=h["n_features"],
        lam=h["lambda"],
        accept=h["accept"],
    )


def save(post: BartPosterior, path) -> None:
    Path(path).write_bytes(dumps(post))


def load(path) -> BartPosterior:
    return loads(Path(path).read_bytes())
