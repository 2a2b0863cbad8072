"""Event catalogs and the on-disk formats for catalogs and localization rasters.

Catalog file (tab-delimited text, UTF-8)::

    #kcontact-catalog v1
    #dims=ra,dec,dm position_dims=0,1 dm_dim=2
    id:str  ra:float  dec:float  dm:float  dm_sigma:float  pos_sigma:float  loc_map:str  label:str
    FRB1    10.5      45.2       512.3     1.2             0.2              -           -

``loc_map`` is a raster path relative to the catalog file, or ``-`` to use
an isotropic Gaussian with standard deviation ``pos_sigma`` (degrees) over
the position coordinates; ``pos_sigma = 0`` with no map means the position
is known exactly.  ``dm_sigma`` is present only when ``dm_dim`` is set.
``label`` groups events into candidate clusters (``-`` for none).

Raster file (text)::

    #kcontact-raster v1
    lower <l_1> ... <l_d>
    upper <u_1> ... <u_d>
    shape <n_1> ... <n_d>
    <w_1> <w_2> ...            (row-major, C order, whitespace separated)

The raster is a density over the displacement ``observed - true`` in the
position coordinates; weights are nonnegative and are renormalized to sum
to 1 on read.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .geometry import Domain
from .noise import DegenerateNoise, GaussianNoise, GriddedNoise, NoiseModel, ProductNoise

CATALOG_MAGIC = "#kcontact-catalog v1"
RASTER_MAGIC = "#kcontact-raster v1"


@dataclass
class EventCatalog:
    ids: list
    observed: np.ndarray
    position_noise: list
    domain: Domain
    dm_sigma: np.ndarray = None
    labels: list = None
    position_dims: tuple = (0, 1)
    dm_dim: int = None
    loc_refs: list = field(default=None, repr=False)

    def __post_init__(self):
        self.observed = np.atleast_2d(np.asarray(self.observed, dtype=float))
        n = self.observed.shape[0]
        if len(self.ids) != n or len(self.position_noise) != n:
            raise DataError("ids, positions and noise models must have equal lengths")
        if len(set(self.ids)) != n:
            raise DataError("event identifiers must be unique")
        if self.labels is None:
            self.labels = [None] * n
        if self.dm_dim is not None:
            self.dm_sigma = np.asarray(self.dm_sigma, dtype=float)
            if self.dm_sigma.shape != (n,) or np.any(~(self.dm_sigma > 0)):
                raise DataError("dm_sigma must be positive for every event")
        used = sorted(list(self.position_dims) + ([] if self.dm_dim is None else [self.dm_dim]))
        if used != list(range(self.domain.dim)):
            raise DataError("position_dims and dm_dim must cover the domain coordinates")
        if n and not np.all(self.domain.contains(self.observed)):
            bad = [self.ids[i] for i in np.flatnonzero(~self.domain.contains(self.observed))]
            raise DataError(f"events outside the domain: {bad[:5]}")

    def __len__(self) -> int:
        return self.observed.shape[0]

    def noise(self, i: int) -> NoiseModel:
        """Full displacement law of event ``i`` over all coordinates."""
        blocks = [(self.position_dims, self.position_noise[i])]
        if self.dm_dim is not None:
            blocks.append(((self.dm_dim,), GaussianNoise(self.dm_sigma[i])))
        return ProductNoise(blocks)

    @property
    def noises(self) -> list:
        return [self.noise(i) for i in range(len(self))]

    def clusters(self) -> dict:
        groups: dict = {}
        for i, label in enumerate(self.labels):
            if label not in (None, "", "-"):
                groups.setdefault(label, []).append(i)
        return groups

    def subset(self, idx) -> "EventCatalog":
        idx = list(idx)
        return EventCatalog(
            ids=[self.ids[i] for i in idx],
            observed=self.observed[idx],
            position_noise=[self.position_noise[i] for i in idx],
            domain=self.domain,
            dm_sigma=None if self.dm_dim is None else self.dm_sigma[idx],
            labels=[self.labels[i] for i in idx],
            position_dims=self.position_dims,
            dm_dim=self.dm_dim,
            loc_refs=None if self.loc_refs is None else [self.loc_refs[i] for i in idx],
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.observed).tobytes())
        h.update("|".join(map(str, self.ids)).encode())
        if self.dm_sigma is not None:
            h.update(np.ascontiguousarray(self.dm_sigma).tobytes())
        h.update(repr(self.position_noise).encode())
        return h.hexdigest()[:16]


# -- raster maps -------------------------------------------------------------------

def write_raster(path, noise: GriddedNoise) -> None:
    lines = [
        RASTER_MAGIC,
        "lower " + " ".join(repr(float(v)) for v in noise.lower),
        "upper " + " ".join(repr(float(v)) for v in noise.upper),
        "shape " + " ".join(str(int(v)) for v in noise.shape),
        " ".join(repr(float(v)) for v in noise.weights.ravel(order="C")),
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_raster(path) -> GriddedNoise:
    try:
        text = Path(path).read_text().split("\n")
    except OSError as exc:
        raise DataError(f"cannot read raster {path}: {exc}") from exc
    if not text or text[0].strip() != RASTER_MAGIC:
        raise DataError(f"{path}: not a kcontact raster (bad or missing version header)")
    header = {}
    body = []
    for line in text[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] in ("lower", "upper", "shape"):
            header[parts[0]] = parts[1:]
        else:
            body.extend(parts)
    try:
        lower = [float(v) for v in header["lower"]]
        upper = [float(v) for v in header["upper"]]
        shape = tuple(int(v) for v in header["shape"])
        weights = np.array([float(v) for v in body])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed raster header or body: {exc}") from exc
    if weights.size != int(np.prod(shape)):
        raise DataError(f"{path}: expected {int(np.prod(shape))} weights, found {weights.size}")
    try:
        return GriddedNoise(lower, upper, weights.reshape(shape, order="C"), normalize=True)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


# -- catalogs ------------------------------------------------------------------------

def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def _fmt(v) -> str:
    return repr(float(v))


def write_catalog(path, catalog: EventCatalog) -> None:
    """Write ``catalog``; gridded localization maps go to sidecar rasters."""
    path = Path(path)
    names = list(catalog.domain.names)
    has_dm = catalog.dm_dim is not None
    cols = ["id:str"] + [f"{n}:float" for n in names]
    if has_dm:
        cols.append("dm_sigma:float")
    cols += ["pos_sigma:float", "loc_map:str", "label:str"]
    meta = f"#dims={','.join(names)} position_dims={','.join(map(str, catalog.position_dims))}"
    meta += f" dm_dim={catalog.dm_dim if has_dm else '-'}"
    lines = [CATALOG_MAGIC, meta, "\t".join(cols)]
    for i in range(len(catalog)):
        noise = catalog.position_noise[i]
        loc = "-"
        if isinstance(noise, GriddedNoise):
            loc = f"{path.stem}_maps/{catalog.ids[i]}.raster"
            (path.parent / loc).parent.mkdir(parents=True, exist_ok=True)
            write_raster(path.parent / loc, noise)
            sigma = 0.0
        elif isinstance(noise, DegenerateNoise):
            sigma = 0.0
        elif isinstance(noise, GaussianNoise):
            if not np.allclose(noise.sigma, noise.sigma[0]):
                raise DataError("catalog files store one isotropic sigma per event")
            sigma = float(noise.sigma[0])
        else:
            raise DataError(f"cannot serialize position noise {noise!r}")
        row = [str(catalog.ids[i])] + [_fmt(v) for v in catalog.observed[i]]
        if has_dm:
            row.append(_fmt(catalog.dm_sigma[i]))
        label = catalog.labels[i]
        row += [_fmt(sigma), loc, "-" if label in (None, "") else str(label)]
        lines.append("\t".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_catalog(path, domain: Domain) -> EventCatalog:
    path = Path(path)
    try:
        raw = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read catalog {path}: {exc}") from exc
    if len(raw) < 3 or raw[0].strip() != CATALOG_MAGIC:
        raise DataError(f"{path}: not a kcontact catalog (bad or missing version header)")
    meta = dict(item.split("=", 1) for item in raw[1].lstrip("#").split())
    try:
        position_dims = tuple(int(v) for v in meta["position_dims"].split(","))
        dm_dim = None if meta["dm_dim"] == "-" else int(meta["dm_dim"])
        dims = meta["dims"].split(",")
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed metadata line: {exc}") from exc
    if len(dims) != domain.dim:
        raise DataError(f"{path}: catalog has {len(dims)} coordinates, domain has {domain.dim}")
    header = raw[2].split("\t")
    cols = [h.split(":")[0] for h in header]
    types = [h.split(":")[1] if ":" in h else "str" for h in header]
    expected = ["id"] + dims + (["dm_sigma"] if dm_dim is not None else []) + ["pos_sigma", "loc_map", "label"]
    if cols != expected:
        raise DataError(f"{path}: expected columns {expected}, found {cols}")
    ids, obs, noises, dm_sigma, labels, refs = [], [], [], [], [], []
    for lineno, line in enumerate(raw[3:], start=4):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != len(cols):
            raise DataError(f"{path}:{lineno}: expected {len(cols)} fields, found {len(parts)}")
        rec = {}
        try:
            for c, t, v in zip(cols, types, parts):
                rec[c] = float(v) if t == "float" else v
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        ids.append(rec["id"])
        obs.append([rec[d] for d in dims])
        if dm_dim is not None:
            dm_sigma.append(rec["dm_sigma"])
        if rec["loc_map"] != "-":
            noises.append(read_raster(path.parent / rec["loc_map"]))
        elif rec["pos_sigma"] > 0:
            noises.append(GaussianNoise(rec["pos_sigma"], len(position_dims)))
        else:
            noises.append(DegenerateNoise(len(position_dims)))
        refs.append(rec["loc_map"])
        labels.append(None if rec["label"] == "-" else rec["label"])
    return EventCatalog(
        ids=ids,
        observed=np.array(obs, dtype=float).reshape(-1, domain.dim),
        position_noise=noises,
        domain=domain,
        dm_sigma=np.array(dm_sigma) if dm_dim is not None else None,
        labels=labels,
        position_dims=position_dims,
        dm_dim=dm_dim,
        loc_refs=refs,
    )


def read_previous_values(path) -> dict:
    """Two-column ``id<TAB>value`` table of externally computed probabilities."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#") or line.lower().startswith("id"):
            continue
        parts = line.replace(",", "\t").split()
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'id value'")
        try:
            out[parts[0]] = float(parts[1])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return out
