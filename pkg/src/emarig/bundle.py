"""Self-contained model bundles and trajectory dumps.

A bundle is a directory (or zip archive) holding the COLLADA model, the
segmentation, the EMA layout sidecar, optional audio copied verbatim, and
a manifest listing format metadata plus the SHA-256 of every file, so any
corruption is detectable. Trajectory dumps re-encode pipeline signals as
``.pos`` streams for external comparison against the source recordings.
"""

from __future__ import annotations

import hashlib
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .anim_db import AnimationClip, SegmentTier, parse_segmentation
from .collada_io import read_collada
from .ema_io import EmaSweep, PosLayout, parse_layout, write_pos
from .errors import BundleError, UnknownKind
from .ik_solver import skin_trajectories
from .rig import Armature, CompiledRig, SkinnedMesh

FORMAT_VERSION = 1

MODEL_NAME = "model.dae"
SEGMENTATION_NAME = "segmentation.txt"
LAYOUT_NAME = "layout.cfg"
MANIFEST_NAME = "manifest.txt"
AUDIO_DIR = "audio"

# Fixed zip timestamp so archived bundles are byte-reproducible.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass(frozen=True)
class Bundle:
    path: Path
    format_version: int
    channels: tuple[str, ...]
    rate_hz: float
    entries: dict[str, str]  # relative path -> sha256 hex


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _format_manifest(
    channels: Sequence[str], rate_hz: float, entries: dict[str, str]
) -> str:
    lines = [
        f"format_version = {FORMAT_VERSION}",
        f"channels = {','.join(channels)}",
        f"rate_hz = {rate_hz:g}",
    ]
    lines += [f"{name}\t{digest}" for name, digest in sorted(entries.items())]
    return "\n".join(lines) + "\n"


def _parse_manifest(text: str) -> tuple[int, tuple[str, ...], float, dict[str, str]]:
    version = None
    channels: tuple[str, ...] = ()
    rate_hz = 0.0
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if "\t" in line:
            name, digest = line.split("\t", 1)
            entries[name] = digest.strip()
        elif "=" in line:
            key, value = (p.strip() for p in line.split("=", 1))
            if key == "format_version":
                version = int(value)
            elif key == "channels":
                channels = tuple(c.strip() for c in value.split(",") if c.strip())
            elif key == "rate_hz":
                rate_hz = float(value)
        else:
            raise BundleError(f"manifest line {lineno}: unparsable entry {raw!r}")
    if version is None:
        raise BundleError("manifest is missing format_version")
    return version, channels, rate_hz, entries


def write_bundle(
    path: str | Path,
    model_text: str,
    *,
    channels: Sequence[str],
    rate_hz: float,
    segmentation_text: str | None = None,
    layout_text: str | None = None,
    audio: dict[str, bytes] | None = None,
) -> Bundle:
    """Write a bundle directory (or ``.zip`` when the path ends in .zip).

    Layout is fixed: model.dae, optional segmentation.txt / layout.cfg,
    audio copied byte-for-byte under audio/, and manifest.txt with content
    hashes. Writing is deterministic for identical inputs.
    """
    path = Path(path)
    files: dict[str, bytes] = {MODEL_NAME: model_text.encode("utf-8")}
    if segmentation_text is not None:
        files[SEGMENTATION_NAME] = segmentation_text.encode("utf-8")
    if layout_text is not None:
        files[LAYOUT_NAME] = layout_text.encode("utf-8")
    for name, data in (audio or {}).items():
        files[f"{AUDIO_DIR}/{Path(name).name}"] = data

    entries = {name: _sha256(data) for name, data in files.items()}
    manifest = _format_manifest(channels, rate_hz, entries)

    if path.suffix == ".zip":
        path.parent.mkdir(parents=True, exist_ok=True)
        with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
            for name in sorted(files) + [MANIFEST_NAME]:
                data = manifest.encode("utf-8") if name == MANIFEST_NAME else files[name]
                zf.writestr(zipfile.ZipInfo(name, date_time=_ZIP_EPOCH), data)
    else:
        path.mkdir(parents=True, exist_ok=True)
        for name, data in files.items():
            target = path / name
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
        (path / MANIFEST_NAME).write_text(manifest, encoding="utf-8")

    return Bundle(
        path=path,
        format_version=FORMAT_VERSION,
        channels=tuple(channels),
        rate_hz=rate_hz,
        entries=entries,
    )


def _read_file(path: Path, name: str) -> bytes:
    if path.suffix == ".zip":
        with zipfile.ZipFile(path) as zf:
            try:
                return zf.read(name)
            except KeyError:
                raise BundleError(f"bundle is missing {name!r}") from None
    target = path / name
    if not target.exists():
        raise BundleError(f"bundle is missing {name!r}")
    return target.read_bytes()


def open_bundle(path: str | Path) -> Bundle:
    path = Path(path)
    if not path.exists():
        raise BundleError(f"no bundle at {path}")
    version, channels, rate_hz, entries = _parse_manifest(
        _read_file(path, MANIFEST_NAME).decode("utf-8")
    )
    if version > FORMAT_VERSION:
        raise BundleError(f"bundle format {version} is newer than supported")
    return Bundle(
        path=path,
        format_version=version,
        channels=channels,
        rate_hz=rate_hz,
        entries=entries,
    )


def verify_bundle(path: str | Path) -> list[str]:
    """Re-hash every manifest entry; returns the mismatched paths (none = OK)."""
    bundle = open_bundle(path)
    bad = []
    for name, digest in bundle.entries.items():
        try:
            actual = _sha256(_read_file(bundle.path, name))
        except BundleError:
            actual = "<missing>"
        if actual != digest:
            bad.append(name)
    return bad


@dataclass(frozen=True)
class LoadedBundle:
    bundle: Bundle
    mesh: SkinnedMesh
    armature: Armature
    clip: AnimationClip | None
    tier: SegmentTier | None
    layout: PosLayout | None


def read_bundle(path: str | Path) -> LoadedBundle:
    """Open, verify and parse a bundle's model and companions."""
    bundle = open_bundle(path)
    bad = verify_bundle(path)
    if bad:
        raise BundleError(f"bundle fails verification: {', '.join(bad)}")
    mesh, armature, clip = read_collada(_read_file(bundle.path, MODEL_NAME).decode("utf-8"))
    tier = None
    if SEGMENTATION_NAME in bundle.entries:
        tier = parse_segmentation(
            _read_file(bundle.path, SEGMENTATION_NAME).decode("utf-8")
        )
    layout = None
    if LAYOUT_NAME in bundle.entries:
        layout = parse_layout(_read_file(bundle.path, LAYOUT_NAME).decode("utf-8"))
    return LoadedBundle(
        bundle=bundle, mesh=mesh, armature=armature, clip=clip, tier=tier, layout=layout
    )


# --- trajectory dumps -----------------------------------------------------------

DUMP_KINDS = ("coils", "ik_targets", "seed_vertices")


def _tracks_to_pos(tracks: np.ndarray, names: Sequence[str], rate_hz: float) -> bytes:
    """Re-encode (frames, channels, 3) cm trajectories as a .pos stream
    with zeroed angles and residuals."""
    F, C, _ = tracks.shape
    layout = PosLayout(channels=tuple(names), rate_hz=rate_hz)
    zeros = np.zeros((F, C))
    sweep = EmaSweep(
        rate_hz=rate_hz,
        channels=tuple(names),
        positions=np.ascontiguousarray(tracks),
        phi=zeros,
        theta=zeros.copy(),
        rms=zeros.astype(np.float32),
        extra=zeros.astype(np.float32),
    )
    return write_pos(sweep, layout)


def dump_trajectories(
    kind: str,
    *,
    sweeps: Sequence[EmaSweep] | None = None,
    layout: PosLayout | None = None,
    rig: CompiledRig | None = None,
    clip: AnimationClip | None = None,
) -> bytes:
    """Dump pipeline trajectories of the requested kind as .pos bytes.

    ``coils`` re-encodes the given sweeps verbatim (byte-identical to
    write_pos for a single unmodified sweep); ``ik_targets`` dumps the
    registered coil positions fed to the solver; ``seed_vertices`` dumps
    the skinned positions of the seed vertices, the tracked-point check
    used to validate the animation against its source.
    """
    if kind == "coils":
        if not sweeps or layout is None:
            raise ValueError("coils dump needs sweeps and their layout")
        return b"".join(write_pos(s, layout) for s in sweeps)

    if kind == "ik_targets":
        if clip is None or clip.targets is None:
            raise ValueError("ik_targets dump needs a freshly baked clip")
        return _tracks_to_pos(clip.targets, clip.bone_names, clip.rate_hz)

    if kind == "seed_vertices":
        if rig is None or clip is None:
            raise ValueError("seed_vertices dump needs the compiled rig and clip")
        idx = np.array([rig.seed_map[n] for n in rig.armature.bone_names])
        tracks = skin_trajectories(
            rig.mesh,
            rig.armature,
            clip.quats,
            clip.heads,
            clip.stretches,
            idx,
        )
        return _tracks_to_pos(tracks, rig.armature.bone_names, clip.rate_hz)

    raise UnknownKind(f"unknown dump kind {kind!r}; expected one of {DUMP_KINDS}")
