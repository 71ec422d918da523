"""Dataset manifests, patch I/O and the synthetic noisy-label generator.

A dataset on disk is a directory of binary PGM files plus one manifest, a
line-oriented text file with '#' comments and whitespace-separated tokens:

    manifest-version 1
    split train
    bands red,green,blue,nir
    bitdepth 8
    entry p0000 red_p0000.pgm green_p0000.pgm blue_p0000.pgm nir_p0000.pgm mask_p0000.pgm
    entry p0001 red_p0001.pgm green_p0001.pgm blue_p0001.pgm nir_p0001.pgm -

Each ``entry`` line names one patch id, one PGM per band (in the declared
band order) and a mask file, or "-" for unlabeled patches.  File names are
relative to the manifest's directory and must not contain whitespace.

Patch intensities are normalized to [0, 255] floats at load time: 8-bit
samples are used as-is, 16-bit samples are divided by 257.  Mask files are
8-bit PGMs holding only 0 and 255.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import pgm
from .core import DEFAULT_BANDS, ImagePatch, IntensityMap, Mask, binarize, dilate
from .errors import ConfigError, DatasetError

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.txt"
SIXTEEN_BIT_DIVISOR = 257.0


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    band_files: tuple[str, ...]
    mask_file: str | None


@dataclass
class DatasetManifest:
    root: Path
    split: str
    bands: tuple[str, ...]
    bit_depth: int
    entries: list[ManifestEntry]


@dataclass
class DatasetItem:
    id: str
    patch: ImagePatch
    mask: Mask | None


@dataclass
class Dataset:
    split: str
    bands: tuple[str, ...]
    bit_depth: int
    items: list[DatasetItem]

    def __len__(self) -> int:
        return len(self.items)


def parse_manifest(path) -> DatasetManifest:
    path = Path(path)
    split = None
    bands: tuple[str, ...] | None = None
    bit_depth = None
    entries: list[ManifestEntry] = []
    seen_ids: set[str] = set()
    try:
        text = path.read_text(encoding="ascii")
    except OSError as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        key = tokens[0]
        if key == "manifest-version":
            if len(tokens) != 2 or tokens[1] != str(MANIFEST_VERSION):
                raise DatasetError(f"{path}:{lineno}: unsupported manifest version {tokens[1:]}")
        elif key == "split":
            if len(tokens) != 2 or tokens[1] not in ("train", "test"):
                raise DatasetError(f"{path}:{lineno}: split must be 'train' or 'test'")
            split = tokens[1]
        elif key == "bands":
            if len(tokens) != 2:
                raise DatasetError(f"{path}:{lineno}: bands takes one comma-separated value")
            bands = tuple(b for b in tokens[1].split(",") if b)
            if not bands:
                raise DatasetError(f"{path}:{lineno}: empty band list")
        elif key == "bitdepth":
            if len(tokens) != 2 or tokens[1] not in ("8", "16"):
                raise DatasetError(f"{path}:{lineno}: bitdepth must be 8 or 16")
            bit_depth = int(tokens[1])
        elif key == "entry":
            if bands is None:
                raise DatasetError(f"{path}:{lineno}: entry before bands declaration")
            if len(tokens) != 2 + len(bands) + 1:
                raise DatasetError(
                    f"{path}:{lineno}: entry needs id, {len(bands)} band files and a mask"
                )
            entry_id = tokens[1]
            if entry_id in seen_ids:
                raise DatasetError(f"{path}:{lineno}: duplicate entry id {entry_id!r}")
            seen_ids.add(entry_id)
            mask_file = tokens[-1]
            entries.append(ManifestEntry(
                id=entry_id,
                band_files=tuple(tokens[2:-1]),
                mask_file=None if mask_file == "-" else mask_file,
            ))
        else:
            raise DatasetError(f"{path}:{lineno}: unknown manifest directive {key!r}")
    if split is None or bands is None or bit_depth is None:
        raise DatasetError(f"{path}: manifest must declare split, bands and bitdepth")
    return DatasetManifest(
        root=path.parent, split=split, bands=bands, bit_depth=bit_depth, entries=entries
    )


def write_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    lines = [
        f"manifest-version {MANIFEST_VERSION}",
        f"split {manifest.split}",
        "bands " + ",".join(manifest.bands),
        f"bitdepth {manifest.bit_depth}",
    ]
    for entry in manifest.entries:
        mask = entry.mask_file if entry.mask_file is not None else "-"
        lines.append("entry " + " ".join((entry.id,) + entry.band_files + (mask,)))
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def _load_band(path: Path, bit_depth: int, entry_id: str) -> np.ndarray:
    try:
        samples, maxval = pgm.read_pgm(path)
    except FileNotFoundError:
        raise DatasetError(f"entry {entry_id!r}: missing file {path}") from None
    if bit_depth == 8 and maxval > 255:
        raise DatasetError(f"entry {entry_id!r}: {path} is 16-bit but manifest says 8")
    if bit_depth == 16 and maxval <= 255:
        raise DatasetError(f"entry {entry_id!r}: {path} is 8-bit but manifest says 16")
    values = samples.astype(np.float64)
    if bit_depth == 16:
        values /= SIXTEEN_BIT_DIVISOR
    return values


def _load_mask(path: Path, entry_id: str) -> Mask:
    try:
        samples, maxval = pgm.read_pgm(path)
    except FileNotFoundError:
        raise DatasetError(f"entry {entry_id!r}: missing mask file {path}") from None
    if maxval > 255:
        raise DatasetError(f"entry {entry_id!r}: mask {path} must be 8-bit")
    bad = ~np.isin(samples, (0, 255))
    if bad.any():
        value = int(samples[bad][0])
        raise DatasetError(
            f"entry {entry_id!r}: mask {path} holds non-binary value {value} "
            "(only 0 and 255 are allowed)"
        )
    return Mask((samples == 255).astype(np.uint8))


def load_dataset(manifest_path) -> Dataset:
    """Load every entry of a manifest, in manifest order."""
    manifest = parse_manifest(manifest_path)
    items: list[DatasetItem] = []
    for entry in manifest.entries:
        planes = [
            _load_band(manifest.root / name, manifest.bit_depth, entry.id)
            for name in entry.band_files
        ]
        shapes = {plane.shape for plane in planes}
        if len(shapes) != 1:
            raise DatasetError(f"entry {entry.id!r}: band dimensions differ: {sorted(shapes)}")
        patch = ImagePatch(np.stack(planes), bands=manifest.bands)
        mask = None
        if entry.mask_file is not None:
            mask = _load_mask(manifest.root / entry.mask_file, entry.id)
            if mask.values.shape != planes[0].shape:
                raise DatasetError(
                    f"entry {entry.id!r}: mask shape {mask.values.shape} "
                    f"does not match bands {planes[0].shape}"
                )
        items.append(DatasetItem(id=entry.id, patch=patch, mask=mask))
    return Dataset(
        split=manifest.split, bands=manifest.bands, bit_depth=manifest.bit_depth, items=items
    )


def write_dataset(dataset: Dataset, root, *, manifest_name: str = MANIFEST_NAME,
                  mask_prefix: str = "mask") -> Path:
    """Write PGM files plus a manifest under root; returns the manifest path.

    Patch values must lie on the storage grid (integers for 8-bit sources,
    multiples of 1/257 for 16-bit) for the write/load round-trip to be the
    identity; datasets produced by load_dataset or generate_synthetic
    always do.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries: list[ManifestEntry] = []
    for item in dataset.items:
        band_files = []
        for b, band in enumerate(dataset.bands):
            name = f"{band}_{item.id}.pgm"
            values = item.patch.data[b]
            if dataset.bit_depth == 8:
                raw = np.rint(values).astype(np.uint16)
                pgm.write_pgm(root / name, np.clip(raw, 0, 255), 255)
            else:
                raw = np.rint(values * SIXTEEN_BIT_DIVISOR).astype(np.uint32)
                pgm.write_pgm(root / name, np.clip(raw, 0, 65535), 65535)
            band_files.append(name)
        mask_file = None
        if item.mask is not None:
            mask_file = f"{mask_prefix}_{item.id}.pgm"
            pgm.write_pgm(root / mask_file, item.mask.values.astype(np.uint16) * 255, 255)
        entries.append(ManifestEntry(id=item.id, band_files=tuple(band_files), mask_file=mask_file))
    manifest = DatasetManifest(
        root=root, split=dataset.split, bands=dataset.bands,
        bit_depth=dataset.bit_depth, entries=entries,
    )
    return write_manifest(manifest, root / manifest_name)


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic cloud-field generator."""

    seed: int = 0
    count: int = 16
    size: int = 64
    true_threshold: float = 70.0
    smoothness: float = 8.0
    flip_fraction: float = 0.15
    dilation_radius: int = 1
    band_jitter: float = 2.0
    bands: tuple[str, ...] = DEFAULT_BANDS

    def validate(self) -> None:
        if self.count < 1:
            raise ConfigError(f"count must be >= 1, got {self.count}")
        if self.size < 2:
            raise ConfigError(f"size must be >= 2, got {self.size}")
        if not (45.0 < self.true_threshold < 255.0):
            raise ConfigError(
                f"true_threshold must lie in (45, 255), got {self.true_threshold}"
            )
        if self.smoothness <= 0:
            raise ConfigError(f"smoothness must be positive, got {self.smoothness}")
        if not (0.0 <= self.flip_fraction <= 1.0):
            raise ConfigError(f"flip_fraction must lie in [0, 1], got {self.flip_fraction}")
        if self.dilation_radius < 0:
            raise ConfigError(f"dilation_radius must be >= 0, got {self.dilation_radius}")
        if self.band_jitter < 0:
            raise ConfigError(f"band_jitter must be >= 0, got {self.band_jitter}")
        if not self.bands:
            raise ConfigError("band list must not be empty")


@dataclass
class SynthItem:
    id: str
    patch: ImagePatch
    clean_mask: Mask
    noisy_mask: Mask


@dataclass
class SyntheticDataset:
    config: SynthConfig
    items: list[SynthItem]

    def noisy_dataset(self, split: str = "train") -> Dataset:
        """View with the corrupted masks as the stored labels."""
        return Dataset(
            split=split, bands=self.config.bands, bit_depth=8,
            items=[DatasetItem(id=i.id, patch=i.patch, mask=i.noisy_mask) for i in self.items],
        )

    def clean_dataset(self, split: str = "test") -> Dataset:
        """View with the ground-truth threshold masks as the stored labels."""
        return Dataset(
            split=split, bands=self.config.bands, bit_depth=8,
            items=[DatasetItem(id=i.id, patch=i.patch, mask=i.clean_mask) for i in self.items],
        )


def _value_noise_field(rng: np.random.Generator, size: int, smoothness: float) -> np.ndarray:
    # Bilinear interpolation of a coarse uniform grid gives smooth blobs
    # whose feature length scales with `smoothness` pixels.
    grid_n = max(2, int(np.ceil(size / smoothness)) + 1)
    coarse = rng.uniform(size=(grid_n, grid_n))
    t = np.linspace(0.0, grid_n - 1.0, size)
    i0 = np.minimum(t.astype(int), grid_n - 2)
    frac = t - i0
    rows = coarse[i0, :] * (1.0 - frac)[:, None] + coarse[i0 + 1, :] * frac[:, None]
    field = rows[:, i0] * (1.0 - frac)[None, :] + rows[:, i0 + 1] * frac[None, :]
    lo, hi = field.min(), field.max()
    if hi - lo < 1e-12:
        return np.full((size, size), 127.0)
    return np.rint((field - lo) / (hi - lo) * 255.0)


def generate_synthetic(config: SynthConfig) -> SyntheticDataset:
    """Deterministically generate patches with clean and corrupted masks.

    Each patch is a smooth random intensity field quantized to the 8-bit
    grid and duplicated across bands with per-band Gaussian jitter.  The
    clean mask thresholds the base field at ``true_threshold``; the noisy
    mask flips round(flip_fraction * pixels) distinct pixels and then
    dilates by ``dilation_radius``.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    width = len(str(max(config.count - 1, 1)))
    items: list[SynthItem] = []
    n_pixels = config.size * config.size
    n_flips = int(round(config.flip_fraction * n_pixels))
    for index in range(config.count):
        base = _value_noise_field(rng, config.size, config.smoothness)
        planes = []
        for _ in config.bands:
            if config.band_jitter > 0:
                jitter = rng.normal(0.0, config.band_jitter, size=base.shape)
                planes.append(np.clip(np.rint(base + jitter), 0.0, 255.0))
            else:
                planes.append(base.copy())
        patch = ImagePatch(np.stack(planes), bands=config.bands)
        clean = binarize(IntensityMap(base), config.true_threshold)
        flipped = clean.values.copy()
        if n_flips > 0:
            flat = rng.choice(n_pixels, size=n_flips, replace=False)
            ys, xs = np.unravel_index(flat, (config.size, config.size))
            flipped[ys, xs] = 1 - flipped[ys, xs]
        noisy = Mask(flipped)
        if config.dilation_radius > 0:
            noisy = dilate(noisy, config.dilation_radius)
        items.append(SynthItem(
            id=f"p{index:0{width}d}", patch=patch, clean_mask=clean, noisy_mask=noisy,
        ))
    return SyntheticDataset(config=config, items=items)


def scan_directory(directory, bands: Sequence[str] = DEFAULT_BANDS, *,
                   mask_prefix: str = "gt", bit_depth: int = 8,
                   split: str = "train") -> DatasetManifest:
    """Build a manifest from a directory of pre-converted PGM files.

    File stems follow the `<band>_patch_<...>` convention, e.g.
    red_patch_192_12_by_13_LC08....pgm; mask files use ``mask_prefix`` in
    place of the band name.  Every listed band must be present for each
    patch id; masks are optional.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"{directory}: not a directory")
    wanted = {band.lower(): band for band in bands}
    by_id: dict[str, dict[str, str]] = {}
    for path in directory.iterdir():
        if path.suffix.lower() != ".pgm" or "_" not in path.stem:
            continue
        prefix, rest = path.stem.split("_", 1)
        prefix = prefix.lower()
        if prefix in wanted or prefix == mask_prefix:
            by_id.setdefault(rest, {})[prefix] = path.name

    def sort_key(patch_id: str) -> tuple[int, str]:
        parts = patch_id.split("_")
        if len(parts) >= 2 and parts[0] == "patch" and parts[1].isdigit():
            return int(parts[1]), patch_id
        return -1, patch_id

    entries = []
    for patch_id in sorted(by_id, key=sort_key):
        found = by_id[patch_id]
        missing = [band for band in bands if band.lower() not in found]
        if missing:
            raise DatasetError(f"patch {patch_id!r}: missing band files for {missing}")
        entries.append(ManifestEntry(
            id=patch_id,
            band_files=tuple(found[band.lower()] for band in bands),
            mask_file=found.get(mask_prefix),
        ))
    return DatasetManifest(
        root=directory, split=split, bands=tuple(bands), bit_depth=bit_depth, entries=entries,
    )


def relabeled_copy(dataset: Dataset, masks: Sequence[Mask]) -> Dataset:
    """Same patches, new masks (used by the relabeling pipeline)."""
    if len(masks) != len(dataset.items):
        raise DatasetError(f"expected {len(dataset.items)} masks, got {len(masks)}")
    items = [
        DatasetItem(id=item.id, patch=item.patch, mask=mask)
        for item, mask in zip(dataset.items, masks)
    ]
    return replace(dataset, items=items)
