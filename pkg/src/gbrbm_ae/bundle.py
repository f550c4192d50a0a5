"""Versioned text container for trained models.

Layout::

    gbrbm-ae-bundle v1
    sha256 <hex digest of the payload bytes>
    <JSON payload>

Every float is stored with :meth:`float.hex`, so a reload reproduces the exact
binary64 values and therefore bit-identical predictions.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .autoencoder import AutoencoderNet, SoftmaxHead
from .datasets import StandardizationStats
from .pipeline import RunConfig, TrainedModel

MAGIC = "gbrbm-ae-bundle"
FORMAT_VERSION = 1


class BundleError(ValueError):
    """Unreadable or incompatible model file."""


class ChecksumError(BundleError):
    pass


class VersionError(BundleError):
    pass


def _enc(a) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "hex": [float(x).hex() for x in a.ravel()]}


def _dec(obj) -> np.ndarray:
    values = [float.fromhex(x) for x in obj["hex"]]
    return np.array(values, dtype=float).reshape(obj["shape"])


def to_payload(model: TrainedModel) -> dict:
    cfg = model.config
    return {
        "layer_dims": model.net.layer_dims,
        "encoder": [[_enc(W), _enc(c)] for W, c in model.net.encoder],
        "decoder": [[_enc(W), _enc(c)] for W, c in model.net.decoder],
        "sigma": _enc(model.net.sigma),
        "head": {"weights": _enc(model.head.weights), "bias": _enc(model.head.bias),
                 "bin_centers": _enc(model.head.bin_centers)},
        "scaler": {"mean": _enc(model.scaler.mean), "stdev": _enc(model.scaler.stdev)},
        "config": cfg.to_text(),
        "metadata": {"seed": cfg.seed, "pretrain_epochs": cfg.pretrain_epochs,
                     "train_epochs": cfg.train_epochs, "config_sha256": cfg.digest()},
    }


def from_payload(p: dict) -> TrainedModel:
    try:
        net = AutoencoderNet(
            encoder=[(_dec(W), _dec(c)) for W, c in p["encoder"]],
            decoder=[(_dec(W), _dec(c)) for W, c in p["decoder"]],
            sigma=_dec(p["sigma"]),
        )
        head = SoftmaxHead(_dec(p["head"]["weights"]), _dec(p["head"]["bias"]),
                           _dec(p["head"]["bin_centers"]))
        scaler = StandardizationStats(_dec(p["scaler"]["mean"]), _dec(p["scaler"]["stdev"]))
        config = RunConfig.from_text(p["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"malformed bundle payload: {exc}") from exc
    if net.layer_dims != list(p["layer_dims"]):
        raise BundleError("layer_dims do not match the stored weights")
    return TrainedModel(net, head, scaler, config)


def dumps(model: TrainedModel) -> str:
    body = json.dumps(to_payload(model), sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    return f"{MAGIC} v{FORMAT_VERSION}\nsha256 {digest}\n{body}\n"


def loads(text: str) -> TrainedModel:
    lines = text.split("\n", 2)
    if not lines[0].startswith(MAGIC + " v"):
        raise BundleError("not a model bundle (bad header)")
    try:
        version = int(lines[0][len(MAGIC) + 2:])
    except ValueError:
        raise BundleError(f"bad version field {lines[0]!r}") from None
    if version != FORMAT_VERSION:
        raise VersionError(
            f"bundle format version {version} is not supported "
            f"(this build reads version {FORMAT_VERSION})")
    if len(lines) < 3 or not lines[1].startswith("sha256 "):
        raise ChecksumError("checksum missing: file is truncated")
    body = lines[2].rstrip("\n")
    if hashlib.sha256(body.encode("utf-8")).hexdigest() != lines[1][7:].strip():
        raise ChecksumError("checksum mismatch: file is corrupt or truncated")
    try:
        payload = json.loads(body)
    except json.JSONDecodeError as exc:
        raise BundleError(f"malformed bundle payload: {exc}") from exc
    return from_payload(payload)


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary sibling file so a failure never leaves a partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def save_model(model: TrainedModel, path) -> None:
    try:
        atomic_write_text(path, dumps(model))
    except OSError as exc:
        raise OSError(f"cannot write model to {path}: {exc.strerror or exc}") from exc


def load_model(path) -> TrainedModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read model {path}: {exc.strerror or exc}") from exc
    return loads(text)
